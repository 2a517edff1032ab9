//! Per-morph CSV rows.
//!
//! Columns: `pair_id, variant, subject_a, subject_b`, then `sim{k}_a, sim{k}_b` for each
//! verifier `k`, then `heuristic, nfe`. Floats use 17 significant digits in scientific
//! notation so every row parses back to the same bits.

use std::io::{Read, Write};

use greedy_dim::metrics::SimilarityTable;
use greedy_dim::morph::Variant;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MorphRow {
    pub pair_id: usize,
    pub variant: Variant,
    pub subject_a: String,
    pub subject_b: String,
    /// `[sim to a, sim to b]` per verifier.
    pub similarities: Vec<[f64; 2]>,
    pub heuristic: f64,
    pub nfe: u64,
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn header(systems: usize) -> Vec<String> {
    let mut h: Vec<String> = ["pair_id", "variant", "subject_a", "subject_b"]
        .map(String::from)
        .to_vec();
    for k in 0..systems {
        h.push(format!("sim{k}_a"));
        h.push(format!("sim{k}_b"));
    }
    h.push("heuristic".into());
    h.push("nfe".into());
    h
}

impl MorphRow {
    pub fn to_record(&self) -> Vec<String> {
        let mut r = vec![
            self.pair_id.to_string(),
            self.variant.to_string(),
            self.subject_a.clone(),
            self.subject_b.clone(),
        ];
        for [a, b] in &self.similarities {
            r.push(format_float(*a));
            r.push(format_float(*b));
        }
        r.push(format_float(self.heuristic));
        r.push(self.nfe.to_string());
        r
    }

    pub fn from_record(record: &csv::StringRecord) -> Result<Self> {
        let n = record.len();
        if n < 8 || !(n - 6).is_multiple_of(2) {
            return Err(CliError::Table(format!("unexpected column count {n}")));
        }
        let field = |i: usize| record.get(i).unwrap_or_default();
        let float = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|e| CliError::Table(format!("column {i}: {e}")))
        };
        let similarities = (0..(n - 6) / 2)
            .map(|k| Ok([float(4 + 2 * k)?, float(5 + 2 * k)?]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            pair_id: field(0)
                .parse()
                .map_err(|e| CliError::Table(format!("pair_id: {e}")))?,
            variant: field(1).parse()?,
            subject_a: field(2).to_string(),
            subject_b: field(3).to_string(),
            similarities,
            heuristic: float(n - 2)?,
            nfe: field(n - 1)
                .parse()
                .map_err(|e| CliError::Table(format!("nfe: {e}")))?,
        })
    }
}

pub fn write_rows<W: Write>(out: W, systems: usize, rows: &[MorphRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(systems))?;
    for row in rows {
        if row.similarities.len() != systems {
            return Err(CliError::Table(
                "row has the wrong number of verifiers".into(),
            ));
        }
        w.write_record(row.to_record())?;
    }
    w.flush().map_err(|e| CliError::io("<csv>", e))?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<MorphRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let systems = headers.len().saturating_sub(6) / 2;
    if headers.iter().collect::<Vec<_>>() != header(systems) {
        return Err(CliError::Table("unexpected header".into()));
    }
    r.records()
        .map(|rec| MorphRow::from_record(&rec?))
        .collect()
}

/// Similarity tables for one variant, one per verifier, in pair order.
pub fn similarity_tables(rows: &[MorphRow], variant: Variant) -> Result<Vec<SimilarityTable>> {
    let selected: Vec<&MorphRow> = rows.iter().filter(|r| r.variant == variant).collect();
    let systems = selected.first().map_or(0, |r| r.similarities.len());
    (0..systems)
        .map(|k| {
            SimilarityTable::new(
                selected
                    .iter()
                    .map(|r| r.similarities[k].to_vec())
                    .collect(),
            )
            .map_err(Into::into)
        })
        .collect()
}
