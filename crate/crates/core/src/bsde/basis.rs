//! Standardized polynomial regression bases over the Markov state.

use crate::model::ClaimSpec;

/// Which state coordinates enter the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateShape {
    /// Log prices (one per dimension) as polynomial variables.
    pub price_dims: usize,
    /// Jump counts as linear variables.
    pub jump_dims: usize,
}

impl StateShape {
    /// Coefficients are deterministic, so the value function only depends
    /// on the coordinates the claim reads.
    pub fn for_claim(claim: &ClaimSpec, d: usize, m: usize) -> Self {
        StateShape {
            price_dims: if claim.depends_on_price() { d } else { 0 },
            jump_dims: if claim.depends_on_jumps() { m } else { 0 },
        }
    }

    pub fn n_raw(&self) -> usize {
        self.price_dims + self.jump_dims
    }

    pub fn raw_into(&self, log_s: &[f64], jumps: &[u32], out: &mut [f64]) {
        out[..self.price_dims].copy_from_slice(&log_s[..self.price_dims]);
        for (o, j) in out[self.price_dims..].iter_mut().zip(jumps) {
            *o = *j as f64;
        }
    }
}

/// Features with a sample standard deviation below this are dropped.
pub const MIN_FEATURE_SD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct StepBasis {
    shape: StateShape,
    mean: Vec<f64>,
    inv_sd: Vec<f64>,
    monomials: Vec<Vec<usize>>,
    active_jumps: Vec<usize>,
}

fn monomials(vars: &[usize], degree: usize) -> Vec<Vec<usize>> {
    fn rec(vars: &[usize], start: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if left == 0 {
            return;
        }
        for i in start..vars.len() {
            cur.push(vars[i]);
            rec(vars, i, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(vars, 0, degree, &mut Vec::new(), &mut out);
    out.sort_by_key(|m| m.len());
    out
}

impl StepBasis {
    /// Builds the basis from per-variable sample mean and standard deviation.
    pub fn new(shape: StateShape, degree: usize, mean: Vec<f64>, sd: &[f64]) -> Self {
        let active = |v: usize| sd[v] >= MIN_FEATURE_SD && sd[v].is_finite();
        let poly_vars: Vec<usize> = (0..shape.price_dims).filter(|v| active(*v)).collect();
        let active_jumps = (shape.price_dims..shape.n_raw()).filter(|v| active(*v)).collect();
        StepBasis {
            shape,
            inv_sd: sd
                .iter()
                .map(|s| if *s >= MIN_FEATURE_SD { 1.0 / s } else { 0.0 })
                .collect(),
            mean,
            monomials: monomials(&poly_vars, degree),
            active_jumps,
        }
    }

    pub fn len(&self) -> usize {
        1 + self.monomials.len() + self.active_jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shape(&self) -> StateShape {
        self.shape
    }

    /// Writes the features of a raw state into `out[..len()]`.
    pub fn features(&self, raw: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        let z = |v: usize| (raw[v] - self.mean[v]) * self.inv_sd[v];
        for (slot, mono) in out[1..].iter_mut().zip(&self.monomials) {
            *slot = mono.iter().map(|v| z(*v)).product();
        }
        let off = 1 + self.monomials.len();
        for (slot, v) in out[off..].iter_mut().zip(&self.active_jumps) {
            *slot = z(*v);
        }
    }
}

/// Streaming mean/sd of raw variables, shifted by a reference point.
#[derive(Debug, Clone)]
pub struct Moments {
    shift: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    n: usize,
}

impl Moments {
    pub fn new(shift: Vec<f64>) -> Self {
        let k = shift.len();
        Moments {
            shift,
            s1: vec![0.0; k],
            s2: vec![0.0; k],
            n: 0,
        }
    }

    pub fn push(&mut self, raw: &[f64]) {
        for (i, x) in raw.iter().enumerate() {
            let y = x - self.shift[i];
            self.s1[i] += y;
            self.s2[i] += y * y;
        }
        self.n += 1;
    }

    pub fn merge(&mut self, other: &Moments) {
        for i in 0..self.s1.len() {
            self.s1[i] += other.s1[i];
            self.s2[i] += other.s2[i];
        }
        self.n += other.n;
    }

    pub fn mean_sd(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n.max(1) as f64;
        let mut mean = Vec::with_capacity(self.s1.len());
        let mut sd = Vec::with_capacity(self.s1.len());
        for i in 0..self.s1.len() {
            let m = self.s1[i] / n;
            mean.push(m + self.shift[i]);
            sd.push((self.s2[i] / n - m * m).max(0.0).sqrt());
        }
        (mean, sd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_count() {
        assert_eq!(monomials(&[0], 2).len(), 2);
        assert_eq!(monomials(&[0, 1], 2).len(), 5);
        assert_eq!(monomials(&[0, 1, 2], 2).len(), 9);
        assert!(monomials(&[], 2).is_empty());
    }

    #[test]
    fn constant_state_keeps_intercept() {
        let shape = StateShape {
            price_dims: 1,
            jump_dims: 1,
        };
        let b = StepBasis::new(shape, 2, vec![4.6, 0.0], &[0.0, 0.0]);
        assert_eq!(b.len(), 1);
        let b = StepBasis::new(shape, 2, vec![4.6, 0.1], &[0.2, 0.3]);
        assert_eq!(b.len(), 4);
        let mut out = vec![0.0; 4];
        b.features(&[4.8, 1.0], &mut out);
        assert!((out[1] - 1.0).abs() < 1e-12 && (out[2] - 1.0).abs() < 1e-12);
        assert!((out[3] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn moments() {
        let mut m = Moments::new(vec![10.0]);
        for x in [9.0, 10.0, 11.0] {
            m.push(&[x]);
        }
        let (mean, sd) = m.mean_sd();
        assert!((mean[0] - 10.0).abs() < 1e-14);
        assert!((sd[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-14);
    }
}
