use std::fmt::Write as _;

use super::roc::RocCurve;
use crate::error::{Error, Result};

/// Raw and scaled scores aligned with binary labels (`1` abnormal).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub raw: Vec<f64>,
    pub scaled: Vec<f64>,
    pub labels: Vec<u8>,
    pub warning: Option<String>,
}

impl ScoreSet {
    pub fn new(raw: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if raw.len() != labels.len() {
            return Err(Error::Evaluation(format!(
                "{} scores but {} labels",
                raw.len(),
                labels.len()
            )));
        }
        let scaled = super::scale_scores(&raw)?;
        Ok(Self {
            raw,
            scaled: scaled.values,
            labels,
            warning: scaled.warning,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub normal: usize,
    pub abnormal: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
}

/// Equal-width bins over `[0, 1]`, left-closed except the last, which also
/// holds `1.0`. Values outside the range land in the end bins.
pub fn histogram(scaled: &[f64], labels: &[u8], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Contract("histogram needs at least one bin".into()));
    }
    if scaled.len() != labels.len() {
        return Err(Error::Evaluation(format!(
            "{} scores but {} labels",
            scaled.len(),
            labels.len()
        )));
    }
    let width = 1.0 / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: i as f64 * width,
            hi: if i + 1 == bins {
                1.0
            } else {
                (i + 1) as f64 * width
            },
            normal: 0,
            abnormal: 0,
        })
        .collect();
    for (&s, &l) in scaled.iter().zip(labels) {
        let i = ((s * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        if l == 1 {
            out[i].abnormal += 1;
        } else {
            out[i].normal += 1;
        }
    }
    Ok(Histogram { bins: out })
}

pub const SCORES_CSV_HEADER: &str = "index,raw_score,scaled_score,label";
pub const ROC_CSV_HEADER: &str = "threshold,fpr,tpr";
pub const HISTOGRAM_CSV_HEADER: &str = "bin_lo,bin_hi,count_normal,count_abnormal";

pub fn scores_csv(set: &ScoreSet) -> String {
    let mut out = format!("{SCORES_CSV_HEADER}\n");
    for (i, ((r, s), l)) in set.raw.iter().zip(&set.scaled).zip(&set.labels).enumerate() {
        let _ = writeln!(out, "{i},{r},{s},{l}");
    }
    out
}

/// Curve rows followed by an `auc,<value>,` metadata row.
pub fn roc_csv(curve: &RocCurve) -> String {
    let mut out = format!("{ROC_CSV_HEADER}\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr);
    }
    let _ = writeln!(out, "auc,{},", curve.auc);
    out
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = format!("{HISTOGRAM_CSV_HEADER}\n");
    for b in &h.bins {
        let _ = writeln!(out, "{},{},{},{}", b.lo, b.hi, b.normal, b.abnormal);
    }
    out
}
