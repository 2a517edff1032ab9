//! Vulnerability metrics for morph attacks against face recognition systems.
//!
//! Similarities are "higher is more similar"; a comparison is accepted when `score > δ`.

use crate::error::{param, Error, Result};

/// Similarity scores for one recognition system: `rows[i][k]` compares morph `i` with the
/// `k`-th contributing subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTable {
    rows: Vec<Vec<f64>>,
}

impl SimilarityTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.iter().any(|r| r.is_empty()) {
            return Err(param("every morph needs at least one subject score"));
        }
        if rows.iter().flatten().any(|s| s.is_nan()) {
            return Err(Error::Numeric("NaN similarity score".into()));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Whether each morph is accepted against every contributing subject.
    pub fn accepted(&self, threshold: f64) -> Vec<bool> {
        self.rows
            .iter()
            .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min) > threshold)
            .collect()
    }
}

fn fraction(flags: &[bool]) -> Result<f64> {
    if flags.is_empty() {
        return Err(param("empty similarity table"));
    }
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// Mated Morph Presentation Match Rate: fraction of morphs whose minimum similarity over
/// contributing subjects exceeds `threshold`.
pub fn mmpmr(table: &SimilarityTable, threshold: f64) -> Result<f64> {
    fraction(&table.accepted(threshold))
}

/// `MAP[1, c]` for `c = 1..=F`: fraction of morphs accepted (against every subject) by at
/// least `c` of the `F` systems.
pub fn map_1c(tables: &[SimilarityTable], thresholds: &[f64]) -> Result<Vec<f64>> {
    if tables.is_empty() || tables.len() != thresholds.len() {
        return Err(param(format!(
            "{} tables for {} thresholds",
            tables.len(),
            thresholds.len()
        )));
    }
    let m = tables[0].len();
    if tables.iter().any(|t| t.len() != m) {
        return Err(param("tables disagree on the number of morphs"));
    }
    if m == 0 {
        return Err(param("empty similarity tables"));
    }
    let accepted: Vec<Vec<bool>> = tables
        .iter()
        .zip(thresholds)
        .map(|(t, &d)| t.accepted(d))
        .collect();
    let counts: Vec<usize> = (0..m)
        .map(|i| accepted.iter().filter(|a| a[i]).count())
        .collect();
    Ok((1..=tables.len())
        .map(|c| counts.iter().filter(|&&n| n >= c).count() as f64 / m as f64)
        .collect())
}

/// Decision threshold at a target false-match rate over impostor similarity scores: the
/// smallest listed score such that at most `floor(fmr · M)` impostors score strictly above it.
pub fn threshold_at_fmr(impostor_scores: &[f64], fmr: f64) -> Result<f64> {
    if impostor_scores.is_empty() {
        return Err(param("no impostor scores"));
    }
    if !(fmr > 0.0 && fmr < 1.0) {
        return Err(param(format!("fmr must lie in (0, 1), got {fmr}")));
    }
    if impostor_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN impostor score".into()));
    }
    let mut sorted = impostor_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let k = ((fmr * m as f64 + 1e-9).floor() as usize).min(m - 1);
    Ok(sorted[m - 1 - k])
}

/// Transferability `T(α, β) = #(α ∧ β) / #α` over per-morph acceptance flags.
pub fn transferability(accepted_a: &[bool], accepted_b: &[bool]) -> Result<f64> {
    if accepted_a.len() != accepted_b.len() {
        return Err(param("acceptance vectors differ in length"));
    }
    let na = accepted_a.iter().filter(|&&a| a).count();
    if na == 0 {
        return Err(Error::UndefinedMetric(
            "no morph fools the source system".into(),
        ));
    }
    let both = accepted_a
        .iter()
        .zip(accepted_b)
        .filter(|(&a, &b)| a && b)
        .count();
    Ok(both as f64 / na as f64)
}

/// Relative strength `ln(T(α, β) / T(β, α))`.
pub fn rsm(accepted_a: &[bool], accepted_b: &[bool]) -> Result<f64> {
    let t_ab = transferability(accepted_a, accepted_b)?;
    let t_ba = transferability(accepted_b, accepted_a)?;
    if t_ab == 0.0 || t_ba == 0.0 {
        return Err(Error::UndefinedMetric("no morph fools both systems".into()));
    }
    Ok((t_ab / t_ba).ln())
}
