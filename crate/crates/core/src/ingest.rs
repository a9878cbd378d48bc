//! Raw dataset ingestion: CSV parsing with explicit missing-value cells,
//! the ID-mapping file, missing-value profiling and the cleaning rules.
//!
//! The source file marks null cells with a literal `"?"`; parsing converts
//! those to [`Cell`] `None` and nothing else. Empty strings are ordinary
//! values.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single cell: `None` is a missing value (`"?"` in the source file).
pub type Cell = Option<String>;

/// The missing-value marker used by the source data.
pub const MISSING_MARKER: &str = "?";

/// Columns dropped for excessive missingness (97%, 52%, 53%).
pub const MISSING_HEAVY_COLUMNS: [&str; 3] = ["weight", "payer_code", "medical_specialty"];

/// Randomly assigned identifier columns dropped before encoding.
pub const ID_COLUMNS: [&str; 2] = ["encounter_id", "patient_nbr"];

/// Columns whose rows are dropped when the cell is missing.
pub const ROW_DROP_ON_MISSING: [&str; 5] = ["race", "gender", "diag_1", "diag_2", "diag_3"];

/// Columns filtered for the literal "Unknown/Invalid" token.
pub const UNKNOWN_INVALID_COLUMNS: [&str; 2] = ["race", "gender"];

/// The target column and its three values, in label order 0, 1, 2.
pub const LABEL_COLUMN: &str = "readmitted";
pub const CLASS_NAMES: [&str; 3] = ["NO", ">30", "<30"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row} has {got} fields, header has {expected}")]
    RaggedRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("expected column '{0}' is absent")]
    MissingColumn(String),
    #[error("id mapping: missing section '{0}'")]
    MissingSection(String),
    #[error("id mapping: malformed section header '{0}'")]
    MalformedSection(String),
    #[error("id mapping: duplicate id {id} in section '{section}'")]
    DuplicateId { section: String, id: u32 },
    #[error("id mapping: unparseable id '{value}' in section '{section}'")]
    BadId { section: String, value: String },
}

/// A parsed column: name plus one cell per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub values: Vec<Cell>,
}

/// A parsed CSV table with typed missing cells. Immutable after
/// construction; all columns have identical length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    columns: Vec<Column>,
    n_rows: usize,
}

impl RawTable {
    pub fn new(columns: Vec<Column>) -> Self {
        let n_rows = columns.first().map_or(0, |c| c.values.len());
        assert!(
            columns.iter().all(|c| c.values.len() == n_rows),
            "all columns must have identical length"
        );
        RawTable { columns, n_rows }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn require_column(&self, name: &str) -> Result<&Column, IngestError> {
        self.column(name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Parse CSV text; `"?"` cells become missing, everything else verbatim.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut columns: Vec<Column> = header
            .iter()
            .map(|name| Column {
                name: name.clone(),
                values: Vec::new(),
            })
            .collect();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != header.len() {
                return Err(IngestError::RaggedRow {
                    row: i + 1,
                    got: record.len(),
                    expected: header.len(),
                });
            }
            for (col, field) in columns.iter_mut().zip(record.iter()) {
                col.values.push(if field == MISSING_MARKER {
                    None
                } else {
                    Some(field.to_string())
                });
            }
        }
        Ok(RawTable::new(columns))
    }

    /// Write the table back out, missing cells as `"?"`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in 0..self.n_rows {
            wtr.write_record(self.columns.iter().map(|c| match &c.values[row] {
                Some(v) => v.as_str(),
                None => MISSING_MARKER,
            }))?;
        }
        wtr.flush().map_err(|e| IngestError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<(), IngestError> {
        let file = File::create(path).map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.write_csv(BufWriter::new(file))
    }
}

/// Load the raw dataset CSV from disk.
pub fn load_raw(path: &Path) -> Result<RawTable, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    RawTable::from_reader(file)
}

/// Per-feature missing counts and fractions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingProfile {
    pub n_rows: usize,
    pub per_column: Vec<MissingEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingEntry {
    pub column: String,
    pub missing: usize,
    pub fraction: f64,
}

/// Exact per-column missing fractions (count / n_rows).
pub fn missing_profile(table: &RawTable) -> MissingProfile {
    let n = table.n_rows();
    let per_column = table
        .columns()
        .iter()
        .map(|c| {
            let missing = c.values.iter().filter(|v| v.is_none()).count();
            MissingEntry {
                column: c.name.clone(),
                missing,
                fraction: if n == 0 {
                    0.0
                } else {
                    missing as f64 / n as f64
                },
            }
        })
        .collect();
    MissingProfile {
        n_rows: n,
        per_column,
    }
}

impl MissingProfile {
    /// Two-column CSV: feature, fraction.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["feature", "fraction"])?;
        for e in &self.per_column {
            wtr.write_record([e.column.as_str(), &format!("{}", e.fraction)])?;
        }
        wtr.flush().map_err(|e| IngestError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// What `clean` did and the resulting class distribution. Rule counters are
/// non-exclusive (a row may trip several rules); `rows_dropped` is the
/// distinct total.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleanReport {
    pub n_input_rows: usize,
    pub n_output_rows: usize,
    pub columns_dropped: Vec<String>,
    pub rows_dropped: usize,
    pub missing_race: usize,
    pub missing_gender: usize,
    pub missing_diag_1: usize,
    pub missing_diag_2: usize,
    pub missing_diag_3: usize,
    pub unknown_invalid_race: usize,
    pub unknown_invalid_gender: usize,
    /// Counts for "NO", ">30", "<30" in that order.
    pub class_counts: [usize; 3],
}

impl fmt::Display for CleanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "clean: {} -> {} rows ({} dropped); columns dropped: {}",
            self.n_input_rows,
            self.n_output_rows,
            self.rows_dropped,
            self.columns_dropped.join(", ")
        )?;
        writeln!(
            f,
            "  per-rule: missing race={} gender={} diag_1={} diag_2={} diag_3={}; Unknown/Invalid race={} gender={}",
            self.missing_race,
            self.missing_gender,
            self.missing_diag_1,
            self.missing_diag_2,
            self.missing_diag_3,
            self.unknown_invalid_race,
            self.unknown_invalid_gender
        )?;
        write!(
            f,
            "  classes: NO={} >30={} <30={}",
            self.class_counts[0], self.class_counts[1], self.class_counts[2]
        )
    }
}

/// The cleaned table plus the report emitted alongside it.
#[derive(Debug, Clone)]
pub struct CleanOutcome {
    pub table: RawTable,
    pub report: CleanReport,
}

/// Apply the cleaning rules:
/// drop the missing-heavy columns and the two identifier columns (when
/// present, so cleaning is idempotent), drop rows with missing
/// race/gender/diag_1/diag_2/diag_3, drop rows carrying "Unknown/Invalid"
/// in race or gender, and report the class distribution. Row order is
/// preserved.
pub fn clean(table: &RawTable) -> Result<CleanOutcome, IngestError> {
    for required in ROW_DROP_ON_MISSING.iter().chain([LABEL_COLUMN].iter()) {
        table.require_column(required)?;
    }

    let droppable: Vec<&str> = MISSING_HEAVY_COLUMNS
        .iter()
        .chain(ID_COLUMNS.iter())
        .copied()
        .collect();
    let columns_dropped: Vec<String> = table
        .columns()
        .iter()
        .filter(|c| droppable.contains(&c.name.as_str()))
        .map(|c| c.name.clone())
        .collect();

    let n = table.n_rows();
    let mut keep = vec![true; n];
    let mut report = CleanReport {
        n_input_rows: n,
        n_output_rows: 0,
        columns_dropped: columns_dropped.clone(),
        rows_dropped: 0,
        missing_race: 0,
        missing_gender: 0,
        missing_diag_1: 0,
        missing_diag_2: 0,
        missing_diag_3: 0,
        unknown_invalid_race: 0,
        unknown_invalid_gender: 0,
        class_counts: [0; 3],
    };

    {
        let mut flag_missing = |name: &str, counter: &mut usize| {
            let col = table.column(name).expect("checked above");
            for (i, v) in col.values.iter().enumerate() {
                if v.is_none() {
                    *counter += 1;
                    keep[i] = false;
                }
            }
        };
        flag_missing("race", &mut report.missing_race);
        flag_missing("gender", &mut report.missing_gender);
        flag_missing("diag_1", &mut report.missing_diag_1);
        flag_missing("diag_2", &mut report.missing_diag_2);
        flag_missing("diag_3", &mut report.missing_diag_3);
    }
    {
        let mut flag_unknown = |name: &str, counter: &mut usize| {
            let col = table.column(name).expect("checked above");
            for (i, v) in col.values.iter().enumerate() {
                if v.as_deref() == Some("Unknown/Invalid") {
                    *counter += 1;
                    keep[i] = false;
                }
            }
        };
        flag_unknown("race", &mut report.unknown_invalid_race);
        flag_unknown("gender", &mut report.unknown_invalid_gender);
    }

    let columns = table
        .columns()
        .iter()
        .filter(|c| !droppable.contains(&c.name.as_str()))
        .map(|c| Column {
            name: c.name.clone(),
            values: c
                .values
                .iter()
                .zip(keep.iter())
                .filter(|(_, &k)| k)
                .map(|(v, _)| v.clone())
                .collect(),
        })
        .collect();
    let cleaned = RawTable::new(columns);

    report.n_output_rows = cleaned.n_rows();
    report.rows_dropped = n - cleaned.n_rows();
    let label_col = cleaned.require_column(LABEL_COLUMN)?;
    for v in &label_col.values {
        if let Some(v) = v.as_deref() {
            if let Some(pos) = CLASS_NAMES.iter().position(|c| *c == v) {
                report.class_counts[pos] += 1;
            }
        }
    }

    Ok(CleanOutcome {
        table: cleaned,
        report,
    })
}

/// The three id -> description maps from the UCI `IDS_mapping.csv`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IdMappings {
    pub admission_type: BTreeMap<u32, String>,
    pub discharge_disposition: BTreeMap<u32, String>,
    pub admission_source: BTreeMap<u32, String>,
}

pub const NOT_MAPPED_DESCRIPTION: &str = "not mapped";

impl IdMappings {
    /// Description for an admission-type id, "not mapped" when absent.
    pub fn admission_type_desc(&self, id: u32) -> &str {
        self.admission_type
            .get(&id)
            .map_or(NOT_MAPPED_DESCRIPTION, String::as_str)
    }

    pub fn discharge_disposition_desc(&self, id: u32) -> &str {
        self.discharge_disposition
            .get(&id)
            .map_or(NOT_MAPPED_DESCRIPTION, String::as_str)
    }

    pub fn admission_source_desc(&self, id: u32) -> &str {
        self.admission_source
            .get(&id)
            .map_or(NOT_MAPPED_DESCRIPTION, String::as_str)
    }
}

const SECTION_HEADERS: [&str; 3] = [
    "admission_type_id",
    "discharge_disposition_id",
    "admission_source_id",
];

/// Parse the UCI `IDS_mapping.csv`: three sections, each opened by a
/// `<section>,description` header row, separated by blank records.
pub fn load_id_mappings(path: &Path) -> Result<IdMappings, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    id_mappings_from_reader(file)
}

pub fn id_mappings_from_reader<R: Read>(reader: R) -> Result<IdMappings, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut maps = IdMappings::default();
    let mut current: Option<String> = None;
    for record in rdr.records() {
        let record = record?;
        let first = record.get(0).unwrap_or("").trim().to_string();
        let rest_empty = record.iter().skip(1).all(|f| f.trim().is_empty());
        if first.is_empty() && rest_empty {
            current = None; // blank separator record
            continue;
        }
        if record.get(1).map(str::trim) == Some("description") {
            if !SECTION_HEADERS.contains(&first.as_str()) {
                return Err(IngestError::MalformedSection(first));
            }
            current = Some(first);
            continue;
        }
        let section = current
            .clone()
            .ok_or_else(|| IngestError::MalformedSection(first.clone()))?;
        let id: u32 = first.parse().map_err(|_| IngestError::BadId {
            section: section.clone(),
            value: first.clone(),
        })?;
        let desc = record.get(1).unwrap_or("").trim().to_string();
        let map = match section.as_str() {
            "admission_type_id" => &mut maps.admission_type,
            "discharge_disposition_id" => &mut maps.discharge_disposition,
            _ => &mut maps.admission_source,
        };
        if map.insert(id, desc).is_some() {
            return Err(IngestError::DuplicateId { section, id });
        }
    }
    for section in SECTION_HEADERS {
        let present = match section {
            "admission_type_id" => !maps.admission_type.is_empty(),
            "discharge_disposition_id" => !maps.discharge_disposition.is_empty(),
            _ => !maps.admission_source.is_empty(),
        };
        if !present {
            return Err(IngestError::MissingSection(section.to_string()));
        }
    }
    Ok(maps)
}
