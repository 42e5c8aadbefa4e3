use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid `t_k = k * dt` on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::validation(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::validation("grid needs at least one step"));
        }
        Ok(TimeGrid {
            horizon,
            n_steps,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Node `k`; the last node is exactly `T`.
    pub fn t(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |k| self.t(k))
    }

    /// Index of the first node `>= t`, or `None` when `t > T`.
    pub fn first_node_at_or_after(&self, t: f64) -> Option<usize> {
        if t > self.horizon {
            return None;
        }
        if t <= 0.0 {
            return Some(0);
        }
        let mut k = ((t / self.dt).ceil() as usize).min(self.n_steps);
        // ceil can land one node off when t/dt is within rounding of an integer
        while k > 0 && self.t(k - 1) >= t {
            k -= 1;
        }
        while self.t(k) < t && k < self.n_steps {
            k += 1;
        }
        Some(k)
    }
}

/// Builds the uniform grid with `n_steps` steps over `[0, horizon]`.
pub fn build_grid(horizon: f64, n_steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, n_steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_grid() {
        let g = build_grid(1.0, 4).unwrap();
        let nodes: Vec<f64> = g.nodes().collect();
        assert_eq!(nodes, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn single_step() {
        let g = build_grid(1.0, 1).unwrap();
        assert_eq!(g.nodes().collect::<Vec<_>>(), vec![0.0, 1.0]);
    }

    #[test]
    fn dt_arithmetic() {
        let g = build_grid(2.0, 200).unwrap();
        assert!((g.dt() - 0.01).abs() < 1e-15);
        assert_eq!(g.t(200), 2.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_grid(0.0, 4).is_err());
        assert!(build_grid(-1.0, 4).is_err());
        assert!(build_grid(1.0, 0).is_err());
        assert!(build_grid(f64::NAN, 3).is_err());
    }

    #[test]
    fn node_lookup() {
        let g = build_grid(1.0, 4).unwrap();
        assert_eq!(g.first_node_at_or_after(0.5), Some(2));
        assert_eq!(g.first_node_at_or_after(0.51), Some(3));
        assert_eq!(g.first_node_at_or_after(1.0), Some(4));
        assert_eq!(g.first_node_at_or_after(1.01), None);
        let g = build_grid(1.0, 10).unwrap();
        // 0.3 is not exactly representable; still lands on node 3
        assert_eq!(g.first_node_at_or_after(0.3), Some(3));
    }
}
