//! Logistic map from raw similarity scores to distances in `(0, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DistanceMatrix, ScoreMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    /// Score mapped to distance 0.5.
    pub midpoint: f64,
    /// Width of the transition, in score units.
    pub scale: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            midpoint: 4.3,
            scale: 0.5,
        }
    }
}

impl LogisticParams {
    pub fn new(midpoint: f64, scale: f64) -> Result<Self> {
        let p = LogisticParams { midpoint, scale };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.midpoint.is_finite() {
            return Err(Error::invalid("logistic.midpoint", "must be finite"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid("logistic.scale", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// `d = 1 / (1 + exp((s - m) / scale))`: high similarity maps to a small
/// distance and `d(m) = 0.5` exactly.
#[inline]
pub fn score_to_distance(score: f64, params: &LogisticParams) -> f64 {
    1.0 / (1.0 + ((score - params.midpoint) / params.scale).exp())
}

/// Elementwise transform of the off-diagonal entries; the diagonal is 0.
pub fn matrix_to_distances(scores: &ScoreMatrix, params: &LogisticParams) -> DistanceMatrix {
    DistanceMatrix::from_fn(scores.track_ids().to_vec(), |i, j| {
        score_to_distance(scores.get(i, j), params)
    })
    .expect("logistic output lies in [0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_is_half() {
        assert_eq!(score_to_distance(4.3, &LogisticParams::default()), 0.5);
    }

    #[test]
    fn decreasing_in_score() {
        let p = LogisticParams::default();
        let grid: Vec<f64> = (0..200).map(|k| k as f64 * 0.07).collect();
        for w in grid.windows(2) {
            assert!(score_to_distance(w[0], &p) > score_to_distance(w[1], &p));
        }
    }

    #[test]
    fn two_by_two() {
        let scores = ScoreMatrix::from_fn(vec!["a".into(), "b".into()], |_, _| 4.3).unwrap();
        let d = matrix_to_distances(&scores, &LogisticParams::default());
        assert_eq!(d.get(0, 1), 0.5);
        assert_eq!(d.get(1, 0), 0.5);
        assert_eq!(d.get(0, 0), 0.0);
        assert!(!d.collapsed);
    }

    #[test]
    fn invalid_scale() {
        assert!(LogisticParams::new(4.3, 0.0).is_err());
        assert!(LogisticParams::new(f64::NAN, 0.5).is_err());
    }
}
