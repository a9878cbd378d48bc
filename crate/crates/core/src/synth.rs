//! Synthetic sample data in the exact source schema (50 columns, "?" for
//! missing cells, the three-section ID-mapping file). Lets the whole
//! pipeline run end to end without the real download; class labels carry
//! genuine feature interactions so depth/learning-rate trends are
//! learnable and testable at desk scale.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::features::MEDICATION_FEATURES;
use crate::seed::rng_for;

/// Column order of the source file.
pub const SCHEMA_COLUMNS: [&str; 50] = [
    "encounter_id",
    "patient_nbr",
    "race",
    "gender",
    "age",
    "weight",
    "admission_type_id",
    "discharge_disposition_id",
    "admission_source_id",
    "time_in_hospital",
    "payer_code",
    "medical_specialty",
    "num_lab_procedures",
    "num_procedures",
    "num_medications",
    "number_outpatient",
    "number_emergency",
    "number_inpatient",
    "diag_1",
    "diag_2",
    "diag_3",
    "number_diagnoses",
    "max_glu_serum",
    "A1Cresult",
    "metformin",
    "repaglinide",
    "nateglinide",
    "chlorpropamide",
    "glimepiride",
    "acetohexamide",
    "glipizide",
    "glyburide",
    "tolbutamide",
    "pioglitazone",
    "rosiglitazone",
    "acarbose",
    "miglitol",
    "troglitazone",
    "tolazamide",
    "examide",
    "citoglipton",
    "insulin",
    "glyburide-metformin",
    "glipizide-metformin",
    "glimepiride-pioglitazone",
    "metformin-rosiglitazone",
    "metformin-pioglitazone",
    "change",
    "diabetesMed",
    "readmitted",
];

fn pick<'a>(rng: &mut ChaCha8Rng, weighted: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = weighted.iter().map(|(_, w)| w).sum();
    let mut x = rng.gen::<f64>() * total;
    for (value, w) in weighted {
        x -= w;
        if x <= 0.0 {
            return value;
        }
    }
    weighted.last().unwrap().0
}

struct Draft {
    cells: Vec<String>,
    risk: f64,
}

/// Generate `n_rows` of schema-true data. Returns CSV text for the data
/// file and the ID-mapping file.
pub fn generate(n_rows: usize, seed: u64) -> (String, String) {
    let mut rng = rng_for(seed, "synth", 0);
    let mut drafts: Vec<Draft> = Vec::with_capacity(n_rows);

    let diag_pools: [(&str, &[&str], f64); 9] = [
        ("circulatory", &["401", "414", "428", "427.31", "785"], 0.30),
        (
            "diabetes",
            &["250", "250.01", "250.6", "250.83", "251"],
            0.15,
        ),
        ("respiratory", &["486", "491", "460", "518", "786"], 0.10),
        ("digestive", &["530", "558", "577", "787"], 0.09),
        ("genitourinary", &["599", "585", "788"], 0.07),
        ("injury", &["812", "850", "996", "998"], 0.07),
        ("musculoskeletal", &["715", "722", "730"], 0.05),
        ("neoplasms", &["153", "174", "200", "239"], 0.04),
        ("other", &["V57", "E909", "3", "290", "780", "38"], 0.13),
    ];

    for i in 0..n_rows {
        let race = pick(
            &mut rng,
            &[
                ("Caucasian", 0.745),
                ("AfricanAmerican", 0.185),
                ("Hispanic", 0.020),
                ("Asian", 0.008),
                ("Other", 0.015),
                ("?", 0.027),
            ],
        );
        let gender = pick(
            &mut rng,
            &[
                ("Female", 0.537),
                ("Male", 0.462),
                ("Unknown/Invalid", 0.001),
            ],
        );
        let age_decade = pick(
            &mut rng,
            &[
                ("0", 0.002),
                ("1", 0.007),
                ("2", 0.017),
                ("3", 0.037),
                ("4", 0.095),
                ("5", 0.17),
                ("6", 0.22),
                ("7", 0.25),
                ("8", 0.165),
                ("9", 0.037),
            ],
        )
        .parse::<u32>()
        .unwrap();
        let age = format!("[{}-{})", age_decade * 10, (age_decade + 1) * 10);
        let weight = pick(
            &mut rng,
            &[("?", 0.97), ("[75-100)", 0.02), ("[50-75)", 0.01)],
        );
        let admission_type = pick(
            &mut rng,
            &[
                ("1", 0.53),
                ("2", 0.18),
                ("3", 0.19),
                ("4", 0.001),
                ("5", 0.05),
                ("6", 0.05),
                ("7", 0.001),
                ("8", 0.003),
            ],
        );
        let discharge = pick(
            &mut rng,
            &[
                ("1", 0.60),
                ("2", 0.02),
                ("3", 0.14),
                ("5", 0.01),
                ("6", 0.13),
                ("11", 0.02),
                ("18", 0.04),
                ("22", 0.02),
                ("25", 0.02),
            ],
        );
        let source = pick(
            &mut rng,
            &[
                ("7", 0.57),
                ("1", 0.29),
                ("17", 0.07),
                ("4", 0.03),
                ("6", 0.02),
                ("2", 0.01),
                ("20", 0.01),
            ],
        );
        let time_in_hospital = 1 + (rng.gen::<f64>().powi(2) * 13.0) as u32;
        let payer = pick(
            &mut rng,
            &[("?", 0.52), ("MC", 0.25), ("HM", 0.1), ("SP", 0.13)],
        );
        let specialty = pick(
            &mut rng,
            &[
                ("?", 0.53),
                ("InternalMedicine", 0.20),
                ("Emergency/Trauma", 0.10),
                ("Family/GeneralPractice", 0.10),
                ("Cardiology", 0.07),
            ],
        );
        let num_lab = rng.gen_range(1..=110);
        let num_proc = rng.gen_range(0..=6);
        let num_medications = 1 + (rng.gen::<f64>() * 35.0) as u32;
        let number_outpatient = (rng.gen::<f64>().powi(6) * 10.0) as u32;
        let number_emergency = (rng.gen::<f64>().powi(8) * 10.0) as u32;
        let number_inpatient = (rng.gen::<f64>().powi(4) * 6.0) as u32;
        let number_diagnoses = rng.gen_range(1..=9);

        let mut diags: Vec<String> = Vec::with_capacity(3);
        let mut diag1_group = "";
        for d in 0..3 {
            let missing_p = [0.003, 0.01, 0.014][d];
            if rng.gen::<f64>() < missing_p {
                diags.push("?".to_string());
                continue;
            }
            let group_weights: Vec<(&str, f64)> =
                diag_pools.iter().map(|(g, _, w)| (*g, *w)).collect();
            let group = pick(&mut rng, &group_weights);
            let pool = diag_pools.iter().find(|(g, _, _)| *g == group).unwrap().1;
            diags.push(pool[rng.gen_range(0..pool.len())].to_string());
            if d == 0 {
                diag1_group = diag_pools.iter().find(|(g, _, _)| *g == group).unwrap().0;
            }
        }

        let max_glu = pick(
            &mut rng,
            &[
                ("None", 0.95),
                ("Norm", 0.025),
                (">200", 0.015),
                (">300", 0.01),
            ],
        );
        let a1c = pick(
            &mut rng,
            &[("None", 0.83), (">8", 0.08), ("Norm", 0.05), (">7", 0.04)],
        );
        let insulin = pick(
            &mut rng,
            &[("No", 0.47), ("Steady", 0.30), ("Down", 0.12), ("Up", 0.11)],
        );
        let change = pick(&mut rng, &[("No", 0.54), ("Ch", 0.46)]);
        let diabetes_med = pick(&mut rng, &[("Yes", 0.77), ("No", 0.23)]);

        let mut med_values: Vec<&str> = Vec::with_capacity(MEDICATION_FEATURES.len());
        for name in MEDICATION_FEATURES {
            // the two never-prescribed drugs stay constant, like the source
            if name == "examide" || name == "citoglipton" {
                med_values.push("No");
                continue;
            }
            med_values.push(pick(
                &mut rng,
                &[
                    ("No", 0.92),
                    ("Steady", 0.065),
                    ("Up", 0.01),
                    ("Down", 0.005),
                ],
            ));
        }

        // readmission risk: marginal effects plus genuine interactions so
        // stumps underfit and depth pays off
        let insulin_active = insulin == "Up" || insulin == "Steady";
        let male = gender == "Male";
        let on_med = diabetes_med == "Yes";
        let mut risk = 0.0;
        risk += 1.5 * f64::from(number_inpatient >= 1 && insulin_active);
        risk += 1.2 * f64::from(age_decade >= 7 && time_in_hospital >= 7);
        risk += 0.9 * f64::from(diag1_group == "circulatory" && num_medications >= 20);
        risk += 1.3 * f64::from(male != on_med);
        risk += 0.3 * f64::from(number_inpatient);
        risk += 0.25 * f64::from(number_emergency);
        risk -= 0.6 * f64::from(discharge == "1");
        risk += 1.6 * (rng.gen::<f64>() - 0.5);

        let mut cells: Vec<String> = Vec::with_capacity(50);
        cells.push((100000 + i as u64 * 3).to_string());
        cells.push((10_000_000 + (i as u64 * 7919) % 5_000_000).to_string());
        cells.push(race.to_string());
        cells.push(gender.to_string());
        cells.push(age);
        cells.push(weight.to_string());
        cells.push(admission_type.to_string());
        cells.push(discharge.to_string());
        cells.push(source.to_string());
        cells.push(time_in_hospital.to_string());
        cells.push(payer.to_string());
        cells.push(specialty.to_string());
        cells.push(num_lab.to_string());
        cells.push(num_proc.to_string());
        cells.push(num_medications.to_string());
        cells.push(number_outpatient.to_string());
        cells.push(number_emergency.to_string());
        cells.push(number_inpatient.to_string());
        cells.extend(diags);
        cells.push(number_diagnoses.to_string());
        cells.push(max_glu.to_string());
        cells.push(a1c.to_string());
        // medications with insulin in its schema slot
        for (idx, name) in MEDICATION_FEATURES.iter().enumerate() {
            let _ = name;
            if idx == 17 {
                cells.push(insulin.to_string());
            }
            cells.push(med_values[idx].to_string());
        }
        cells.push(change.to_string());
        cells.push(diabetes_med.to_string());
        cells.push(String::new()); // readmitted, filled below

        drafts.push(Draft { cells, risk });
    }

    // label thresholds at the class-share quantiles of the risk scores
    let mut risks: Vec<f64> = drafts.iter().map(|d| d.risk).collect();
    risks.sort_by(f64::total_cmp);
    let quantile = |q: f64| risks[((risks.len() - 1) as f64 * q).round() as usize];
    let t_no = quantile(0.528);
    let t_gt30 = quantile(0.888);
    for d in &mut drafts {
        let label = if d.risk <= t_no {
            "NO"
        } else if d.risk <= t_gt30 {
            ">30"
        } else {
            "<30"
        };
        *d.cells.last_mut().unwrap() = label.to_string();
    }

    let mut data = String::new();
    data.push_str(&SCHEMA_COLUMNS.join(","));
    data.push('\n');
    for d in &drafts {
        data.push_str(&d.cells.join(","));
        data.push('\n');
    }
    (data, ids_mapping_text())
}

/// The three-section ID-mapping file content.
pub fn ids_mapping_text() -> String {
    let mut s = String::new();
    s.push_str("admission_type_id,description\n");
    for (id, desc) in [
        (1, "Emergency"),
        (2, "Urgent"),
        (3, "Elective"),
        (4, "Newborn"),
        (5, "Not Available"),
        (6, "NULL"),
        (7, "Trauma Center"),
        (8, "Not Mapped"),
    ] {
        s.push_str(&format!("{id},{desc}\n"));
    }
    s.push_str(",\ndischarge_disposition_id,description\n");
    for (id, desc) in [
        (1, "Discharged to home"),
        (2, "Discharged/transferred to another short term hospital"),
        (3, "Discharged/transferred to SNF"),
        (4, "Discharged/transferred to ICF"),
        (5, "Discharged/transferred to another type of inpatient care institution"),
        (6, "Discharged/transferred to home with home health service"),
        (7, "Left AMA"),
        (8, "Discharged/transferred to home under care of Home IV provider"),
        (9, "Admitted as an inpatient to this hospital"),
        (10, "Neonate discharged to another hospital for neonatal aftercare"),
        (11, "Expired"),
        (12, "Still patient or expected to return for outpatient services"),
        (13, "Hospice / home"),
        (14, "Hospice / medical facility"),
        (15, "Discharged/transferred within this institution to Medicare approved swing bed"),
        (16, "Discharged/transferred/referred another institution for outpatient services"),
        (17, "Discharged/transferred/referred to this institution for outpatient services"),
        (18, "NULL"),
        (22, "Discharged/transferred to another rehab fac including rehab units of a hospital"),
        (23, "Discharged/transferred to a long term care hospital"),
        (24, "Discharged/transferred to a nursing facility certified under Medicaid but not certified under Medicare"),
        (25, "Not Mapped"),
        (26, "Unknown/Invalid"),
        (27, "Discharged/transferred to a federal health care facility"),
        (28, "Discharged/transferred/referred to a psychiatric hospital"),
        (29, "Discharged/transferred to a Critical Access Hospital (CAH)"),
        (30, "Discharged/transferred to another Type of Health Care Institution not Defined Elsewhere"),
    ] {
        s.push_str(&format!("{id},{desc}\n"));
    }
    s.push_str(",\nadmission_source_id,description\n");
    for (id, desc) in [
        (1, "Physician Referral"),
        (2, "Clinic Referral"),
        (3, "HMO Referral"),
        (4, "Transfer from a hospital"),
        (5, "Transfer from a Skilled Nursing Facility (SNF)"),
        (6, "Transfer from another health care facility"),
        (7, "Emergency Room"),
        (8, "Court/Law Enforcement"),
        (9, "Not Available"),
        (10, "Transfer from critical access hospital"),
        (11, "Normal Delivery"),
        (13, "Sick Baby"),
        (14, "Extramural Birth"),
        (17, "NULL"),
        (18, "Transfer From Another Home Health Agency"),
        (19, "Readmission to Same Home Health Agency"),
        (20, "Not Mapped"),
        (21, "Unknown/Invalid"),
        (
            22,
            "Transfer from hospital inpt/same fac reslt in a sep claim",
        ),
        (23, "Born inside this hospital"),
        (24, "Born outside this hospital"),
        (25, "Transfer from Ambulatory Surgery Center"),
        (26, "Transfer from Hospice"),
    ] {
        s.push_str(&format!("{id},{desc}\n"));
    }
    s
}

/// Write `diabetic_data.csv` and `IDS_mapping.csv` into a directory.
pub fn write_sample(dir: &Path, n_rows: usize, seed: u64) -> io::Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let (data, ids) = generate(n_rows, seed);
    let data_path = dir.join("diabetic_data.csv");
    let ids_path = dir.join("IDS_mapping.csv");
    fs::write(&data_path, data)?;
    fs::write(&ids_path, ids)?;
    Ok((data_path, ids_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_matrix, default_plan};
    use crate::ingest::{clean, id_mappings_from_reader, RawTable};

    #[test]
    fn generated_data_flows_through_the_pipeline() {
        let (data, ids) = generate(600, 7);
        let table = RawTable::from_reader(data.as_bytes()).unwrap();
        assert_eq!(table.n_columns(), 50);
        assert_eq!(table.n_rows(), 600);
        id_mappings_from_reader(ids.as_bytes()).unwrap();

        let cleaned = clean(&table).unwrap();
        assert!(cleaned.report.n_output_rows > 500);
        let counts = cleaned.report.class_counts;
        assert!(counts[0] > counts[1] && counts[1] > counts[2]);
        assert!(counts[2] > 20);

        let (with_meds, manifest) = build_matrix(&cleaned.table, &default_plan(true)).unwrap();
        let (without, _) = build_matrix(&cleaned.table, &default_plan(false)).unwrap();
        assert_eq!(
            with_meds.n_features() - without.n_features(),
            MEDICATION_FEATURES.len()
        );
        assert_eq!(manifest.n_features, with_meds.n_features());
        assert!(with_meds.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(100, 3), generate(100, 3));
        assert_ne!(generate(100, 3).0, generate(100, 4).0);
    }

    #[test]
    fn meds_toggle_leaves_shared_columns_identical() {
        let (data, _) = generate(400, 11);
        let table = RawTable::from_reader(data.as_bytes()).unwrap();
        let cleaned = clean(&table).unwrap().table;
        let (a, _) = build_matrix(&cleaned, &default_plan(true)).unwrap();
        let (b, _) = build_matrix(&cleaned, &default_plan(false)).unwrap();
        for (j, name) in b.feature_names().iter().enumerate() {
            let ja = a
                .feature_names()
                .iter()
                .position(|n| n == name)
                .expect("shared column");
            for i in 0..b.n_rows() {
                assert_eq!(a.value(i, ja), b.value(i, j));
            }
        }
    }
}
