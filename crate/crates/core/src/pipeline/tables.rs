//! CSV tables of a report bundle.

use std::path::Path;

/// Bumped whenever a column is added, removed or redefined.
pub const SCHEMA_VERSION: u32 = 1;
/// Header suffix of wall-clock columns; they are excluded from
/// reproducibility comparisons.
pub const MEASURED_SUFFIX: &str = "@measured";

pub const COMPRESSION_CSV: &str = "compression.csv";
pub const AP_CSV: &str = "ap.csv";
pub const NETWORK_CSV: &str = "network.csv";
pub const COMPLIANCE_CSV: &str = "compliance.csv";
pub const INFERENCE_CSV: &str = "inference.csv";

/// An in-memory table; every row starts with the schema version.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        let mut header = vec!["schema_version".to_string()];
        header.extend(columns.iter().map(|c| c.to_string()));
        Table {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cells: Vec<String>) {
        assert_eq!(
            cells.len() + 1,
            self.header.len(),
            "row width must match the header"
        );
        let mut row = vec![SCHEMA_VERSION.to_string()];
        row.extend(cells);
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        crate::io::write_atomic(path, &self.to_csv())
    }
}

/// Formats an optional number; missing values are empty cells.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Drops every column whose header carries [`MEASURED_SUFFIX`].
pub fn strip_measured(csv_bytes: &[u8]) -> Result<Vec<u8>, csv::Error> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(csv_bytes);
    let mut records = r.records();
    let mut w = csv::Writer::from_writer(Vec::new());
    let Some(header) = records.next().transpose()? else {
        return Ok(Vec::new());
    };
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| !header[i].ends_with(MEASURED_SUFFIX))
        .collect();
    w.write_record(keep.iter().map(|&i| &header[i]))?;
    for rec in records {
        let rec = rec?;
        w.write_record(keep.iter().map(|&i| &rec[i]))?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}
