use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{write_bytes, write_json};
use crate::error::Result;
use crate::eval::{CvReport, MahalanobisReport};

pub const METHOD_BASELINE: &str = "Baseline";
pub const METHOD_NO_RESIDUAL: &str = "Ours w.o.res";
pub const METHOD_RESIDUAL: &str = "Ours";

/// Structured companion of a report table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile<R> {
    pub kind: String,
    pub config_fingerprint: String,
    pub config: BTreeMap<String, String>,
    pub notes: Vec<String>,
    pub rows: Vec<R>,
}

fn ordered<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Methods as rows, attributes as columns, plus a row mean; cells missing
/// from `cells` print as `-`.
fn table(cells: &[(&str, &str, f64)], corner: &str) -> String {
    let methods = ordered(cells.iter().map(|c| c.0));
    let attrs = ordered(cells.iter().map(|c| c.1));
    let mut out = String::new();
    out.push_str(corner);
    for a in &attrs {
        out.push('\t');
        out.push_str(a);
    }
    out.push_str("\tmean\n");
    for m in &methods {
        out.push_str(m);
        let mut sum = 0.0;
        let mut n = 0;
        for a in &attrs {
            match cells.iter().find(|c| c.0 == *m && c.1 == *a) {
                Some(c) => {
                    write!(out, "\t{:.4}", c.2).expect("string write");
                    sum += c.2;
                    n += 1;
                }
                None => out.push_str("\t-"),
            }
        }
        if n > 0 {
            writeln!(out, "\t{:.4}", sum / n as f64).expect("string write");
        } else {
            out.push_str("\t-\n");
        }
    }
    out
}

/// Grand-mean L2 per method and attribute, one row per method.
pub fn l2_table(reports: &[CvReport]) -> String {
    let cells: Vec<(&str, &str, f64)> = reports
        .iter()
        .map(|r| (r.method.as_str(), r.attribute.as_str(), r.grand_mean))
        .collect();
    table(&cells, "L2")
}

/// Mean Mahalanobis distance per method and attribute.
pub fn mahalanobis_table(reports: &[MahalanobisReport]) -> String {
    let cells: Vec<(&str, &str, f64)> = reports
        .iter()
        .map(|r| (r.method.as_str(), r.attribute.as_str(), r.mean))
        .collect();
    table(&cells, "Mahalanobis")
}

/// Writes `<prefix>.tsv` and `<prefix>.json`.
pub fn write_report<R: Serialize>(prefix: &Path, table: &str, report: &ReportFile<R>) -> Result<(PathBuf, PathBuf)> {
    let tsv = prefix.with_extension("tsv");
    let json = prefix.with_extension("json");
    let mut text = format!("# config {}\n", report.config_fingerprint);
    text.push_str(table);
    write_bytes(&tsv, text.as_bytes())?;
    write_json(&json, report)?;
    Ok((tsv, json))
}
