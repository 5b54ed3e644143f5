//! CSV emission. Every file is UTF-8 with a fixed header, LF line endings and
//! floats printed with six decimals.
//!
//! | file        | columns                                          |
//! |-------------|--------------------------------------------------|
//! | sweep       | `ratio,candidate,val_acc,test_acc,epochs,selected` |
//! | selection   | `candidate,val_acc,chosen,test_acc`              |
//! | proxies     | `candidate,proxy_val_acc`                        |
//! | retrieval   | `query_index,ap`                                 |
//!
//! In selection files `test_acc` is only filled on the chosen row.

use std::fs;
use std::path::Path;

use super::{RetrievalResult, SweepTable};
use crate::error::Result;
use crate::selector::SelectionReport;

pub fn fmt_float(x: f64) -> String {
    format!("{x:.6}")
}

pub trait CsvTable {
    fn header(&self) -> Vec<&'static str>;
    fn rows(&self) -> Vec<Vec<String>>;
}

pub fn to_csv_string(table: &impl CsvTable) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(table.header())?;
    for row in table.rows() {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn emit_csv(table: &impl CsvTable, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_csv_string(table)?)?;
    Ok(())
}

impl CsvTable for SweepTable {
    fn header(&self) -> Vec<&'static str> {
        vec!["ratio", "candidate", "val_acc", "test_acc", "epochs", "selected"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.ratio.clone(),
                    r.candidate.to_string(),
                    fmt_float(r.val_accuracy),
                    fmt_float(r.test_accuracy),
                    r.epochs.to_string(),
                    r.selected.to_string(),
                ]
            })
            .collect()
    }
}

impl CsvTable for SelectionReport {
    fn header(&self) -> Vec<&'static str> {
        vec!["candidate", "val_acc", "chosen", "test_acc"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.candidates
            .iter()
            .map(|c| {
                let chosen = c.id == self.chosen;
                vec![
                    c.id.to_string(),
                    fmt_float(c.val_accuracy),
                    chosen.to_string(),
                    if chosen { fmt_float(self.test_accuracy) } else { String::new() },
                ]
            })
            .collect()
    }
}

/// Surgery-proxy accuracies of a fast or faster selection.
pub struct ProxyTable<'a>(pub &'a SelectionReport);

impl CsvTable for ProxyTable<'_> {
    fn header(&self) -> Vec<&'static str> {
        vec!["candidate", "proxy_val_acc"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.0
            .proxy_accuracies
            .iter()
            .flatten()
            .map(|(id, a)| vec![id.to_string(), fmt_float(*a)])
            .collect()
    }
}

impl CsvTable for RetrievalResult {
    fn header(&self) -> Vec<&'static str> {
        vec!["query_index", "ap"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.per_query
            .iter()
            .enumerate()
            .map(|(i, ap)| vec![i.to_string(), fmt_float(*ap)])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::SweepRow;
    use crate::selector::CandidateId;

    fn table() -> SweepTable {
        SweepTable {
            rows: vec![
                SweepRow {
                    ratio: "3".into(),
                    candidate: CandidateId::Unit(1),
                    val_accuracy: 0.5,
                    test_accuracy: 1.0 / 3.0,
                    epochs: 15,
                    selected: true,
                },
                SweepRow {
                    ratio: "3".into(),
                    candidate: CandidateId::All,
                    val_accuracy: 0.25,
                    test_accuracy: 0.125,
                    epochs: 20,
                    selected: false,
                },
            ],
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(
            to_csv_string(&SweepTable::default()).unwrap(),
            "ratio,candidate,val_acc,test_acc,epochs,selected\n"
        );
    }

    #[test]
    fn exact_layout() {
        let s = to_csv_string(&table()).unwrap();
        assert_eq!(
            s,
            "ratio,candidate,val_acc,test_acc,epochs,selected\n\
             3,unit-1,0.500000,0.333333,15,true\n\
             3,all,0.250000,0.125000,20,false\n"
        );
        assert!(!s.contains('\r'));
    }

    #[test]
    fn round_trip_parse() {
        let t = table();
        let back = SweepTable::from_csv_str(&to_csv_string(&t).unwrap()).unwrap();
        assert_eq!(back.rows.len(), 2);
        for (a, b) in back.rows.iter().zip(&t.rows) {
            assert_eq!((a.ratio.as_str(), a.candidate, a.epochs, a.selected), (b.ratio.as_str(), b.candidate, b.epochs, b.selected));
            assert!((a.test_accuracy - b.test_accuracy).abs() < 5e-7);
        }
    }

    #[test]
    fn retrieval_layout() {
        let r = RetrievalResult {
            k: 1,
            per_query: vec![1.0, 0.0],
            map: 0.5,
        };
        assert_eq!(to_csv_string(&r).unwrap(), "query_index,ap\n0,1.000000\n1,0.000000\n");
    }

    #[test]
    fn file_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        emit_csv(&table(), &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), to_csv_string(&table()).unwrap());
    }
}
