use crate::error::{Error, Result};

/// Min and max of a reference score set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRange {
    pub min: f64,
    pub max: f64,
}

impl ScoreRange {
    pub fn of(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Contract("cannot scale an empty score set".into()));
        }
        if raw.iter().any(|s| !s.is_finite()) {
            return Err(Error::Contract("scores must be finite".into()));
        }
        let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { min, max })
    }

    pub fn is_degenerate(&self) -> bool {
        self.max == self.min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scaled {
    pub values: Vec<f64>,
    /// Set when the reference range had zero width.
    pub warning: Option<String>,
}

pub const DEGENERATE_WARNING: &str = "all scores are equal; scaled scores set to 0";

/// Min-max scaling over the set itself.
pub fn scale_scores(raw: &[f64]) -> Result<Scaled> {
    let range = ScoreRange::of(raw)?;
    scale_with_range(raw, range)
}

/// Min-max scaling against a fixed reference range, e.g. one taken from
/// training scores. Values outside the range are clamped to `[0, 1]`.
pub fn scale_with_range(raw: &[f64], range: ScoreRange) -> Result<Scaled> {
    if raw.is_empty() {
        return Err(Error::Contract("cannot scale an empty score set".into()));
    }
    if range.is_degenerate() {
        return Ok(Scaled {
            values: vec![0.0; raw.len()],
            warning: Some(DEGENERATE_WARNING.to_string()),
        });
    }
    let width = range.max - range.min;
    Ok(Scaled {
        values: raw
            .iter()
            .map(|s| ((s - range.min) / width).clamp(0.0, 1.0))
            .collect(),
        warning: None,
    })
}

/// Scaled score strictly above `phi` means abnormal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(phi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::Contract(format!(
                "threshold {phi} is outside [0, 1]"
            )));
        }
        Ok(Self(phi))
    }

    pub fn phi(self) -> f64 {
        self.0
    }

    pub fn is_abnormal(self, scaled: f64) -> bool {
        scaled > self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let s = scale_scores(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(s.values, vec![0.0, 0.5, 1.0]);
        assert!(s.warning.is_none());
    }

    #[test]
    fn constant_set_warns() {
        let s = scale_scores(&[3.0; 3]).unwrap();
        assert_eq!(s.values, vec![0.0; 3]);
        assert!(s.warning.is_some());
    }

    #[test]
    fn empty_is_a_contract_error() {
        assert!(matches!(scale_scores(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn reference_range_clamps() {
        let r = ScoreRange { min: 1.0, max: 3.0 };
        assert_eq!(
            scale_with_range(&[0.0, 2.0, 5.0], r).unwrap().values,
            vec![0.0, 0.5, 1.0]
        );
    }

    #[test]
    fn verdict_is_strict() {
        let t = Threshold::new(0.5).unwrap();
        assert!(!t.is_abnormal(0.5));
        assert!(t.is_abnormal(0.5000001));
        assert!(Threshold::new(1.5).is_err());
    }
}
