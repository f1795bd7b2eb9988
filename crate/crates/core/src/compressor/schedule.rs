use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Layer-dependent rank `d̃ᵢ = ⌈d̃₀(1+i)^α⌉`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct RankSchedule {
    d_tilde_0: f64,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct RawSchedule {
    d_tilde_0: f64,
    alpha: f64,
}

impl TryFrom<RawSchedule> for RankSchedule {
    type Error = Error;

    fn try_from(r: RawSchedule) -> Result<Self> {
        Self::new(r.d_tilde_0, r.alpha)
    }
}

impl From<RankSchedule> for RawSchedule {
    fn from(s: RankSchedule) -> Self {
        RawSchedule { d_tilde_0: s.d_tilde_0, alpha: s.alpha }
    }
}

impl RankSchedule {
    pub fn new(d_tilde_0: f64, alpha: f64) -> Result<Self> {
        ensure!(d_tilde_0 > 0.0 && d_tilde_0.is_finite(), "d_tilde_0 must be positive, got {d_tilde_0}");
        ensure!(alpha >= 0.0 && alpha.is_finite(), "alpha must be nonnegative, got {alpha}");
        Ok(Self { d_tilde_0, alpha })
    }

    pub fn d_tilde_0(&self) -> f64 {
        self.d_tilde_0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Unclamped rank of layer `i` (0-based).
    pub fn rank_at(&self, i: usize) -> usize {
        let r = (self.d_tilde_0 * (1.0 + i as f64).powf(self.alpha)).ceil();
        (r as usize).max(1)
    }

    /// Rank of layer `i` clamped to `[1, d]`.
    pub fn rank_clamped(&self, i: usize, d: usize) -> usize {
        self.rank_at(i).clamp(1, d)
    }
}

pub fn rank_at(s: &RankSchedule, i: usize) -> usize {
    s.rank_at(i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let flat = RankSchedule::new(64.0, 0.0).unwrap();
        assert!((0..20).all(|i| flat.rank_at(i) == 64));
        let s = RankSchedule::new(3.0, 0.27).unwrap();
        assert_eq!(s.rank_at(0), 3);
        assert_eq!(s.rank_at(11), 6);
        let all: Vec<usize> = (0..12).map(|i| s.rank_at(i)).collect();
        assert_eq!(all, [3, 4, 5, 5, 5, 5, 6, 6, 6, 6, 6, 6]);
        assert_eq!(RankSchedule::new(10.0, 1.0).unwrap().rank_clamped(9, 16), 16);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(RankSchedule::new(0.0, 0.1).is_err());
        assert!(RankSchedule::new(1.0, -0.1).is_err());
        assert!(serde_json::from_str::<RankSchedule>(r#"{"d_tilde_0": -1.0, "alpha": 0.0}"#).is_err());
    }
}
