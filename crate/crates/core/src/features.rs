//! Feature encoding: turns the cleaned table into a dense numeric design
//! matrix following a declarative per-column plan (one-hot, binary,
//! ordinal, interval medians, ICD-9 grouping, passthrough), with a switch
//! for the medication dosage features.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{RawTable, CLASS_NAMES, LABEL_COLUMN};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("feature '{feature}': value '{value}' is not in the encoding map")]
    UnknownValue { feature: String, value: String },
    #[error("feature '{feature}': missing cell at row {row}; run clean first")]
    MissingCell { feature: String, row: usize },
    #[error("feature '{feature}': cannot parse '{value}' as a number")]
    NotNumeric { feature: String, value: String },
    #[error("empty diagnosis code")]
    EmptyCode,
    #[error("label '{0}' is not one of NO, >30, <30")]
    BadLabel(String),
    #[error("plan has no rule for column '{0}'")]
    UnplannedColumn(String),
    #[error("plan rule references absent column '{0}'")]
    AbsentColumn(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("matrix file: {0}")]
    BadMatrixFile(String),
}

/// The nine ICD-9 disease families used for the diagnosis columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagnosisGroup {
    Diabetes,
    Circulatory,
    Respiratory,
    Digestive,
    Genitourinary,
    Injury,
    Musculoskeletal,
    Neoplasms,
    Other,
}

impl DiagnosisGroup {
    pub const ALL: [DiagnosisGroup; 9] = [
        DiagnosisGroup::Diabetes,
        DiagnosisGroup::Circulatory,
        DiagnosisGroup::Respiratory,
        DiagnosisGroup::Digestive,
        DiagnosisGroup::Genitourinary,
        DiagnosisGroup::Injury,
        DiagnosisGroup::Musculoskeletal,
        DiagnosisGroup::Neoplasms,
        DiagnosisGroup::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DiagnosisGroup::Diabetes => "diabetes",
            DiagnosisGroup::Circulatory => "circulatory",
            DiagnosisGroup::Respiratory => "respiratory",
            DiagnosisGroup::Digestive => "digestive",
            DiagnosisGroup::Genitourinary => "genitourinary",
            DiagnosisGroup::Injury => "injury",
            DiagnosisGroup::Musculoskeletal => "musculoskeletal",
            DiagnosisGroup::Neoplasms => "neoplasms",
            DiagnosisGroup::Other => "other",
        }
    }
}

/// Group an ICD-9 code string into a disease family. The integer part
/// before the first '.' decides membership; alphabetic prefixes (V/E codes)
/// fall through to `Other`.
pub fn group_icd9(code: &str) -> Result<DiagnosisGroup, EncodeError> {
    let code = code.trim();
    if code.is_empty() {
        return Err(EncodeError::EmptyCode);
    }
    let prefix = code.split('.').next().unwrap_or(code);
    let Ok(n) = prefix.parse::<u32>() else {
        return Ok(DiagnosisGroup::Other);
    };
    Ok(match n {
        250..=251 => DiagnosisGroup::Diabetes,
        390..=458 | 785 => DiagnosisGroup::Circulatory,
        460..=519 | 786 => DiagnosisGroup::Respiratory,
        520..=579 | 787 => DiagnosisGroup::Digestive,
        580..=629 | 788 => DiagnosisGroup::Genitourinary,
        800..=999 => DiagnosisGroup::Injury,
        710..=739 => DiagnosisGroup::Musculoskeletal,
        140..=239 => DiagnosisGroup::Neoplasms,
        _ => DiagnosisGroup::Other,
    })
}

/// Decade ranges are replaced by their medians: "[0-10)" -> 5, ... ,
/// "[90-100)" -> 95.
pub fn encode_age(range_text: &str) -> Result<f64, EncodeError> {
    for d in 0..10u32 {
        let bracket = format!("[{}-{})", d * 10, (d + 1) * 10);
        if range_text == bracket {
            return Ok(f64::from(d * 10 + 5));
        }
    }
    Err(EncodeError::UnknownValue {
        feature: "age".into(),
        value: range_text.into(),
    })
}

/// The two lab-test features with documented ordinal scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrdinalTest {
    Glucose,
    A1c,
}

/// Glucose serum: None 0, Norm 100, >200 200, >300 300.
/// A1c: None 0, Norm 5, >7 7, >8 8.
pub fn encode_ordinal_tests(value: &str, feature: OrdinalTest) -> Result<f64, EncodeError> {
    let (name, map): (&str, &[(&str, f64)]) = match feature {
        OrdinalTest::Glucose => (
            "max_glu_serum",
            &[
                ("None", 0.0),
                ("Norm", 100.0),
                (">200", 200.0),
                (">300", 300.0),
            ],
        ),
        OrdinalTest::A1c => (
            "A1Cresult",
            &[("None", 0.0), ("Norm", 5.0), (">7", 7.0), (">8", 8.0)],
        ),
    };
    map.iter()
        .find(|(k, _)| *k == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| EncodeError::UnknownValue {
            feature: name.into(),
            value: value.into(),
        })
}

/// The medication dosage columns toggled by the plan switch (insulin is
/// handled separately and always kept). The public file carries 22 of
/// them; the run manifest records the realized count.
pub const MEDICATION_FEATURES: [&str; 22] = [
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
    "glyburide-metformin",
    "glipizide-metformin",
    "glimepiride-pioglitazone",
    "metformin-rosiglitazone",
    "metformin-pioglitazone",
];

/// Dosage scale for the toggled medications: Up 1, Down -1, Steady 0, No -2.
pub const MEDICATION_SCALE: [(&str, f64); 4] =
    [("Up", 1.0), ("Down", -1.0), ("Steady", 0.0), ("No", -2.0)];

/// The eight count features kept as-is.
pub const COUNT_FEATURES: [&str; 8] = [
    "time_in_hospital",
    "num_lab_procedures",
    "num_procedures",
    "num_medications",
    "number_outpatient",
    "number_emergency",
    "number_inpatient",
    "number_diagnoses",
];

/// Discharge-disposition ids collapsed to home / transfer / other, from the
/// IDS_mapping descriptions. The sets are printed in the run manifest.
pub const DISCHARGE_HOME_IDS: [u32; 4] = [1, 6, 8, 13];
pub const DISCHARGE_TRANSFER_IDS: [u32; 15] =
    [2, 3, 4, 5, 10, 15, 16, 17, 22, 23, 24, 27, 28, 29, 30];

/// Admission-source ids collapsed to emergency room / transfer / other.
pub const SOURCE_EMERGENCY_IDS: [u32; 1] = [7];
pub const SOURCE_TRANSFER_IDS: [u32; 9] = [4, 5, 6, 10, 18, 19, 22, 25, 26];

/// Emergency admission type id (all other types collapse to "other").
pub const ADMISSION_EMERGENCY_ID: u32 = 1;

/// Per-column encoding rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Rule {
    /// One column per category, categories in first-observed order.
    OneHot,
    /// Single 0/1 column; 1 when the cell equals `positive`.
    Binary { positive: String },
    /// Total value -> real map; values outside the map are an error.
    Ordinal { map: Vec<(String, f64)> },
    /// Decade bracket replaced by its median.
    IntervalMedian,
    /// ICD-9 family grouping followed by one-hot over the nine groups.
    Icd9GroupOneHot,
    /// Integer ids collapsed into named groups, then one-hot. Ids absent
    /// from every set fall into the last (default) group.
    GroupOneHot { groups: Vec<(String, Vec<u32>)> },
    /// Parse the cell as a number and keep it.
    Numeric,
    /// Remove the column.
    Drop,
}

/// Declarative encoding plan: exactly one rule per retained source column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodingPlan {
    pub rules: Vec<(String, Rule)>,
    pub include_meds: bool,
}

impl EncodingPlan {
    pub fn rule_for(&self, column: &str) -> Option<&Rule> {
        self.rules
            .iter()
            .find(|(name, _)| name == column)
            .map(|(_, r)| r)
    }
}

fn ordinal(map: &[(&str, f64)]) -> Rule {
    Rule::Ordinal {
        map: map.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

/// The reference encoding plan for the cleaned UCI schema.
pub fn default_plan(include_meds: bool) -> EncodingPlan {
    let mut rules: Vec<(String, Rule)> = Vec::new();
    let mut push = |name: &str, rule: Rule| rules.push((name.to_string(), rule));

    push("race", Rule::OneHot);
    push(
        "gender",
        Rule::Binary {
            positive: "Male".into(),
        },
    );
    push("age", Rule::IntervalMedian);
    push(
        "admission_type_id",
        Rule::Binary {
            positive: ADMISSION_EMERGENCY_ID.to_string(),
        },
    );
    push(
        "discharge_disposition_id",
        Rule::GroupOneHot {
            groups: vec![
                ("home".into(), DISCHARGE_HOME_IDS.to_vec()),
                ("transfer".into(), DISCHARGE_TRANSFER_IDS.to_vec()),
                ("other".into(), Vec::new()),
            ],
        },
    );
    push(
        "admission_source_id",
        Rule::GroupOneHot {
            groups: vec![
                ("emergency_room".into(), SOURCE_EMERGENCY_IDS.to_vec()),
                ("transfer".into(), SOURCE_TRANSFER_IDS.to_vec()),
                ("other".into(), Vec::new()),
            ],
        },
    );
    for name in COUNT_FEATURES {
        push(name, Rule::Numeric);
    }
    for name in ["diag_1", "diag_2", "diag_3"] {
        push(name, Rule::Icd9GroupOneHot);
    }
    push(
        "max_glu_serum",
        ordinal(&[
            ("None", 0.0),
            ("Norm", 100.0),
            (">200", 200.0),
            (">300", 300.0),
        ]),
    );
    push(
        "A1Cresult",
        ordinal(&[("None", 0.0), ("Norm", 5.0), (">7", 7.0), (">8", 8.0)]),
    );
    for name in MEDICATION_FEATURES {
        if include_meds {
            push(name, ordinal(&MEDICATION_SCALE));
        } else {
            push(name, Rule::Drop);
        }
    }
    push("insulin", Rule::OneHot);
    push(
        "change",
        Rule::Binary {
            positive: "Ch".into(),
        },
    );
    push(
        "diabetesMed",
        Rule::Binary {
            positive: "Yes".into(),
        },
    );

    EncodingPlan {
        rules,
        include_meds,
    }
}

/// Dense design matrix: row-major values, one label in {0,1,2} per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    feature_names: Vec<String>,
    values: Vec<f64>,
    labels: Vec<u8>,
}

impl FeatureMatrix {
    pub fn new(feature_names: Vec<String>, values: Vec<f64>, labels: Vec<u8>) -> Self {
        let p = feature_names.len();
        assert_eq!(values.len(), p * labels.len(), "values shape mismatch");
        FeatureMatrix {
            feature_names,
            values,
            labels,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features() + feature]
    }

    /// Number of distinct classes assuming labels are 0..K-1.
    pub fn n_classes(&self) -> usize {
        self.labels
            .iter()
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn class_histogram(&self, k: usize) -> Vec<usize> {
        let mut h = vec![0usize; k];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// New matrix holding the given rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let p = self.n_features();
        let mut values = Vec::with_capacity(rows.len() * p);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            values.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            values,
            labels,
        }
    }

    /// CSV with header `feature...,label` and an optional trailing
    /// provenance column.
    pub fn write_csv<W: Write>(
        &self,
        writer: W,
        provenance: Option<&[crate::balance::Provenance]>,
    ) -> Result<(), EncodeError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("label");
        if provenance.is_some() {
            header.push("provenance");
        }
        wtr.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            record.clear();
            record.extend(self.row(i).iter().map(|v| format!("{v}")));
            record.push(format!("{}", self.labels[i]));
            if let Some(prov) = provenance {
                record.push(prov[i].tag().to_string());
            }
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(
        &self,
        path: &Path,
        provenance: Option<&[crate::balance::Provenance]>,
    ) -> Result<(), EncodeError> {
        let file = File::create(path)?;
        self.write_csv(BufWriter::new(file), provenance)
    }

    /// Read a matrix back from the CSV layout written by `write_csv`. A
    /// trailing provenance column, when present, is ignored.
    pub fn read_csv<R: Read>(reader: R) -> Result<FeatureMatrix, EncodeError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let label_idx = header
            .iter()
            .position(|h| h == "label")
            .ok_or_else(|| EncodeError::BadMatrixFile("no 'label' column".into()))?;
        let feature_names: Vec<String> = header[..label_idx].to_vec();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for record in rdr.records() {
            let record = record?;
            for field in record.iter().take(label_idx) {
                values.push(field.parse::<f64>().map_err(|_| {
                    EncodeError::BadMatrixFile(format!("non-numeric value '{field}'"))
                })?);
            }
            let lab = record
                .get(label_idx)
                .ok_or_else(|| EncodeError::BadMatrixFile("short record".into()))?;
            labels.push(
                lab.parse::<u8>().map_err(|_| {
                    EncodeError::BadMatrixFile(format!("non-integer label '{lab}'"))
                })?,
            );
        }
        Ok(FeatureMatrix::new(feature_names, values, labels))
    }

    pub fn read_csv_path(path: &Path) -> Result<FeatureMatrix, EncodeError> {
        let file = File::open(path)?;
        FeatureMatrix::read_csv(BufReader::new(file))
    }
}

/// Sidecar manifest describing how a matrix was produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub include_meds: bool,
    pub n_rows: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    /// Category order for each one-hot source column.
    pub category_orders: BTreeMap<String, Vec<String>>,
    pub medication_columns_encoded: Vec<String>,
    pub discharge_home_ids: Vec<u32>,
    pub discharge_transfer_ids: Vec<u32>,
    pub source_emergency_ids: Vec<u32>,
    pub source_transfer_ids: Vec<u32>,
    pub admission_emergency_id: u32,
    pub label_mapping: Vec<(String, u8)>,
}

fn cell_value<'t>(table: &'t RawTable, column: &str, row: usize) -> Result<&'t str, EncodeError> {
    match &table.column(column).expect("checked").values[row] {
        Some(v) => Ok(v.as_str()),
        None => Err(EncodeError::MissingCell {
            feature: column.into(),
            row,
        }),
    }
}

/// Encode a cleaned table into a dense matrix per the plan. Column layout
/// follows the table's column order; one-hot categories are emitted in
/// first-observed order; all of it is recorded in the manifest.
pub fn build_matrix(
    table: &RawTable,
    plan: &EncodingPlan,
) -> Result<(FeatureMatrix, FeatureManifest), EncodeError> {
    for (name, _) in &plan.rules {
        if table.column(name).is_none() {
            return Err(EncodeError::AbsentColumn(name.clone()));
        }
    }
    for col in table.columns() {
        if col.name != LABEL_COLUMN && plan.rule_for(&col.name).is_none() {
            return Err(EncodeError::UnplannedColumn(col.name.clone()));
        }
    }
    let label_col = table
        .column(LABEL_COLUMN)
        .ok_or_else(|| EncodeError::AbsentColumn(LABEL_COLUMN.into()))?;

    let n = table.n_rows();
    let mut labels = Vec::with_capacity(n);
    for (row, cell) in label_col.values.iter().enumerate() {
        let v = cell.as_deref().ok_or(EncodeError::MissingCell {
            feature: LABEL_COLUMN.into(),
            row,
        })?;
        let idx = CLASS_NAMES
            .iter()
            .position(|c| *c == v)
            .ok_or_else(|| EncodeError::BadLabel(v.into()))? as u8;
        labels.push(idx);
    }

    // Encode column-by-column (in table order), then interleave.
    let mut block_names: Vec<String> = Vec::new();
    let mut block_cols: Vec<Vec<f64>> = Vec::new();
    let mut category_orders: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut meds_encoded: Vec<String> = Vec::new();

    for col in table.columns() {
        if col.name == LABEL_COLUMN {
            continue;
        }
        let rule = plan.rule_for(&col.name).expect("checked above");
        match rule {
            Rule::Drop => {}
            Rule::OneHot => {
                let mut categories: Vec<String> = Vec::new();
                let mut idx = Vec::with_capacity(n);
                for row in 0..n {
                    let v = cell_value(table, &col.name, row)?;
                    let pos = match categories.iter().position(|c| c == v) {
                        Some(p) => p,
                        None => {
                            categories.push(v.to_string());
                            categories.len() - 1
                        }
                    };
                    idx.push(pos);
                }
                for (c, cat) in categories.iter().enumerate() {
                    block_names.push(format!("{}={}", col.name, cat));
                    block_cols.push(idx.iter().map(|&p| f64::from(p == c)).collect());
                }
                category_orders.insert(col.name.clone(), categories);
            }
            Rule::Binary { positive } => {
                let mut out = Vec::with_capacity(n);
                for row in 0..n {
                    let v = cell_value(table, &col.name, row)?;
                    out.push(f64::from(v == positive));
                }
                block_names.push(col.name.clone());
                block_cols.push(out);
            }
            Rule::Ordinal { map } => {
                let mut out = Vec::with_capacity(n);
                for row in 0..n {
                    let v = cell_value(table, &col.name, row)?;
                    let mapped = map.iter().find(|(k, _)| k == v).map(|(_, x)| *x).ok_or(
                        EncodeError::UnknownValue {
                            feature: col.name.clone(),
                            value: v.into(),
                        },
                    )?;
                    out.push(mapped);
                }
                block_names.push(col.name.clone());
                block_cols.push(out);
                if MEDICATION_FEATURES.contains(&col.name.as_str()) {
                    meds_encoded.push(col.name.clone());
                }
            }
            Rule::IntervalMedian => {
                let mut out = Vec::with_capacity(n);
                for row in 0..n {
                    out.push(encode_age(cell_value(table, &col.name, row)?)?);
                }
                block_names.push(col.name.clone());
                block_cols.push(out);
            }
            Rule::Icd9GroupOneHot => {
                let mut groups = Vec::with_capacity(n);
                for row in 0..n {
                    groups.push(group_icd9(cell_value(table, &col.name, row)?)?);
                }
                for g in DiagnosisGroup::ALL {
                    block_names.push(format!("{}={}", col.name, g.name()));
                    block_cols.push(groups.iter().map(|&x| f64::from(x == g)).collect());
                }
                category_orders.insert(
                    col.name.clone(),
                    DiagnosisGroup::ALL
                        .iter()
                        .map(|g| g.name().to_string())
                        .collect(),
                );
            }
            Rule::GroupOneHot { groups } => {
                let default = groups.len() - 1;
                let mut idx = Vec::with_capacity(n);
                for row in 0..n {
                    let v = cell_value(table, &col.name, row)?;
                    let id: u32 = v.trim().parse().map_err(|_| EncodeError::NotNumeric {
                        feature: col.name.clone(),
                        value: v.into(),
                    })?;
                    let pos = groups
                        .iter()
                        .position(|(_, ids)| ids.contains(&id))
                        .unwrap_or(default);
                    idx.push(pos);
                }
                for (g, (gname, _)) in groups.iter().enumerate() {
                    block_names.push(format!("{}={}", col.name, gname));
                    block_cols.push(idx.iter().map(|&p| f64::from(p == g)).collect());
                }
                category_orders.insert(
                    col.name.clone(),
                    groups.iter().map(|(g, _)| g.clone()).collect(),
                );
            }
            Rule::Numeric => {
                let mut out = Vec::with_capacity(n);
                for row in 0..n {
                    let v = cell_value(table, &col.name, row)?;
                    out.push(
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| EncodeError::NotNumeric {
                                feature: col.name.clone(),
                                value: v.into(),
                            })?,
                    );
                }
                block_names.push(col.name.clone());
                block_cols.push(out);
            }
        }
    }

    let p = block_names.len();
    let mut values = vec![0.0f64; n * p];
    for (j, colv) in block_cols.iter().enumerate() {
        for (i, &v) in colv.iter().enumerate() {
            values[i * p + j] = v;
        }
    }

    let manifest = FeatureManifest {
        include_meds: plan.include_meds,
        n_rows: n,
        n_features: p,
        feature_names: block_names.clone(),
        category_orders,
        medication_columns_encoded: meds_encoded,
        discharge_home_ids: DISCHARGE_HOME_IDS.to_vec(),
        discharge_transfer_ids: DISCHARGE_TRANSFER_IDS.to_vec(),
        source_emergency_ids: SOURCE_EMERGENCY_IDS.to_vec(),
        source_transfer_ids: SOURCE_TRANSFER_IDS.to_vec(),
        admission_emergency_id: ADMISSION_EMERGENCY_ID,
        label_mapping: CLASS_NAMES
            .iter()
            .enumerate()
            .map(|(i, c)| (c.to_string(), i as u8))
            .collect(),
    };
    Ok((FeatureMatrix::new(block_names, values, labels), manifest))
}
