use serde::{Deserialize, Serialize};

use super::EnvError;

/// Discrete choices for the two filter windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionGrid {
    /// RTprop window options in seconds.
    pub rt_options: Vec<f64>,
    /// BtlBw window options in rounds.
    pub bw_options: Vec<u64>,
}

impl Default for ActionGrid {
    fn default() -> Self {
        Self {
            rt_options: vec![0.5, 1.0, 2.0, 5.0, 10.0],
            bw_options: vec![2, 4, 8, 16, 32],
        }
    }
}

impl ActionGrid {
    pub fn validate(&self) -> Result<(), String> {
        if self.rt_options.is_empty() || self.bw_options.is_empty() {
            return Err("action grid needs at least one option per window".into());
        }
        if !self.rt_options.iter().all(|v| v.is_finite() && *v > 0.0 && *v <= 4_000.0) {
            return Err("rt options must be positive seconds".into());
        }
        if self.bw_options.contains(&0) {
            return Err("bw options must be positive".into());
        }
        if !self.rt_options.windows(2).all(|w| w[0] < w[1]) || !self.bw_options.windows(2).all(|w| w[0] < w[1]) {
            return Err("action grid options must be strictly increasing".into());
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rt_options.len(), self.bw_options.len())
    }

    pub fn decode(&self, i_rt: usize, i_bw: usize) -> Result<(f64, u64), EnvError> {
        match (self.rt_options.get(i_rt), self.bw_options.get(i_bw)) {
            (Some(&rt), Some(&bw)) => Ok((rt, bw)),
            _ => Err(EnvError::ActionOutOfRange {
                index: (i_rt, i_bw),
                dims: self.dims(),
            }),
        }
    }

    pub fn index_of(&self, rt_s: f64, bw_rounds: u64) -> Option<(usize, usize)> {
        let i = self.rt_options.iter().position(|&v| v == rt_s)?;
        let j = self.bw_options.iter().position(|&v| v == bw_rounds)?;
        Some((i, j))
    }

    /// Index of BBR's static windows (10 s, 8 rounds), if on the grid.
    pub fn default_index(&self) -> Option<(usize, usize)> {
        self.index_of(10.0, 8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_examples() {
        let g = ActionGrid::default();
        assert_eq!(g.decode(4, 2).unwrap(), (10.0, 8));
        assert_eq!(g.decode(0, 0).unwrap(), (0.5, 2));
        assert!(matches!(g.decode(5, 0), Err(EnvError::ActionOutOfRange { .. })));
        assert_eq!(g.default_index(), Some((4, 2)));
    }

    #[test]
    fn index_round_trip() {
        let g = ActionGrid::default();
        for i in 0..5 {
            for j in 0..5 {
                let (rt, bw) = g.decode(i, j).unwrap();
                assert_eq!(g.index_of(rt, bw), Some((i, j)));
            }
        }
    }

    #[test]
    fn rejects_unsorted() {
        let g = ActionGrid {
            rt_options: vec![1.0, 1.0],
            ..Default::default()
        };
        assert!(g.validate().is_err());
        ActionGrid::default().validate().unwrap();
    }
}
