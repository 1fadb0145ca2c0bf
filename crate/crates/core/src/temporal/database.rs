use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{CodaError, Result};

/// One labelled coda rhythm.
#[derive(Debug, Clone, PartialEq)]
pub struct CodaEntry {
    /// Inter-click intervals in seconds.
    pub ici: Vec<f64>,
    pub label: String,
}

/// Labelled ICI vectors grouped by ICI count `W` (codas of `W + 1` clicks).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CodaDatabase {
    groups: BTreeMap<usize, Vec<CodaEntry>>,
}

impl CodaDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ici: Vec<f64>, label: impl Into<String>) -> Result<()> {
        if ici.is_empty() {
            return Err(CodaError::arg("ICI vector is empty"));
        }
        if let Some(bad) = ici.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(CodaError::arg(format!("ICI {bad} is not positive")));
        }
        let total: f64 = ici.iter().sum();
        if total >= 2.0 {
            log::warn!("coda of {} clicks lasts {total:.3} s (>= 2 s)", ici.len() + 1);
        }
        self.groups.entry(ici.len()).or_default().push(CodaEntry {
            ici,
            label: label.into(),
        });
        Ok(())
    }

    pub fn group(&self, w: usize) -> &[CodaEntry] {
        self.groups.get(&w).map(Vec::as_slice).unwrap_or(&[])
    }

    /// ICI counts present, ascending.
    pub fn widths(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Read rows of `click_count,type_label,ici_1,...,ici_W`. A leading header
    /// row (non-numeric first field) is skipped.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CodaError::io(path, e))?;
        Self::parse_csv(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut db = Self::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| CodaError::arg(format!("row {}: {e}", row + 1)))?;
            let Some(first) = record.get(0) else { continue };
            let Ok(count) = first.parse::<usize>() else {
                if row == 0 {
                    continue;
                }
                return Err(CodaError::arg(format!("row {}: bad click count {first:?}", row + 1)));
            };
            let label = record
                .get(1)
                .filter(|l| !l.is_empty())
                .ok_or_else(|| CodaError::arg(format!("row {}: missing type label", row + 1)))?;
            let ici = record
                .iter()
                .skip(2)
                .filter(|f| !f.is_empty())
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| CodaError::arg(format!("row {}: {e}", row + 1)))?;
            if ici.len() + 1 != count {
                return Err(CodaError::arg(format!(
                    "row {}: click count {count} but {} ICIs",
                    row + 1,
                    ici.len()
                )));
            }
            db.insert(ici, label).map_err(|e| e.context(format!("row {}", row + 1)))?;
        }
        Ok(db)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (w, entries) in &self.groups {
            for e in entries {
                out.push_str(&format!("{},{}", w + 1, e.label));
                for v in &e.ici {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_groups_and_header() {
        let db = CodaDatabase::parse_csv(
            "click_count,type_label,ici\n5,5R1,0.2,0.2,0.2,0.2\n4,1+3,0.3,0.1,0.1\n5,2+3,0.1,0.3,0.1,0.1\n",
        )
        .unwrap();
        assert_eq!(db.len(), 3);
        assert_eq!(db.group(4).len(), 2);
        assert_eq!(db.group(3)[0].label, "1+3");
        assert_eq!(db.widths().collect::<Vec<_>>(), vec![3, 4]);
        let again = CodaDatabase::parse_csv(&db.to_csv()).unwrap();
        assert_eq!(again, db);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(CodaDatabase::parse_csv("5,5R1,0.2,0.2,0.2\n").is_err());
        assert!(CodaDatabase::parse_csv("3,x,0.2,-0.1\n").is_err());
        assert!(CodaDatabase::parse_csv("3,,0.2,0.1\n").is_err());
    }
}
