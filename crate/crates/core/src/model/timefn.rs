use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Per-step error target for the adaptive Simpson rule used on custom functions.
pub const QUADRATURE_TOL: f64 = 1e-10;

/// A bounded deterministic scalar function of time.
///
/// Constant, affine and piecewise-constant functions integrate in closed form;
/// custom closures go through adaptive Simpson quadrature.
#[derive(Clone)]
pub enum TimeFn {
    Constant(f64),
    Affine {
        intercept: f64,
        slope: f64,
    },
    /// `values[0]` on `[0, breaks[0])`, `values[i]` on `[breaks[i-1], breaks[i])`,
    /// last value thereafter.
    PiecewiseConstant {
        breaks: Vec<f64>,
        values: Vec<f64>,
    },
    Custom {
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        bound: f64,
    },
}

impl fmt::Debug for TimeFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeFn::Constant(c) => write!(f, "Constant({c})"),
            TimeFn::Affine { intercept, slope } => write!(f, "Affine({intercept} + {slope} t)"),
            TimeFn::PiecewiseConstant { breaks, values } => {
                write!(f, "PiecewiseConstant({breaks:?}, {values:?})")
            }
            TimeFn::Custom { bound, .. } => write!(f, "Custom(|f| <= {bound})"),
        }
    }
}

impl TimeFn {
    pub fn constant(c: f64) -> Self {
        TimeFn::Constant(c)
    }

    pub fn affine(intercept: f64, slope: f64) -> Self {
        TimeFn::Affine { intercept, slope }
    }

    pub fn piecewise(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return Err(Error::validation(
                "piecewise-constant function needs one more value than breakpoints",
            ));
        }
        if breaks.windows(2).any(|w| w[0] >= w[1]) || breaks.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::validation(
                "piecewise-constant breakpoints must be positive and strictly increasing",
            ));
        }
        Ok(TimeFn::PiecewiseConstant { breaks, values })
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static, bound: f64) -> Self {
        TimeFn::Custom {
            f: Arc::new(f),
            bound,
        }
    }

    /// Jump points of a piecewise-constant function.
    pub fn breakpoints(&self) -> &[f64] {
        match self {
            TimeFn::PiecewiseConstant { breaks, .. } => breaks,
            _ => &[],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFn::Constant(c) => *c,
            TimeFn::Affine { intercept, slope } => intercept + slope * t,
            TimeFn::PiecewiseConstant { breaks, values } => {
                let idx = breaks.partition_point(|b| *b <= t);
                values[idx]
            }
            TimeFn::Custom { f, .. } => f(t),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            TimeFn::Constant(c) => *c == 0.0,
            TimeFn::Affine { intercept, slope } => *intercept == 0.0 && *slope == 0.0,
            TimeFn::PiecewiseConstant { values, .. } => values.iter().all(|v| *v == 0.0),
            TimeFn::Custom { bound, .. } => *bound == 0.0,
        }
    }

    /// True when integrals are available in closed form.
    pub fn has_exact_integral(&self) -> bool {
        !matches!(self, TimeFn::Custom { .. })
    }

    /// `sup |f|` over `[0, horizon]`; custom functions report their declared bound.
    pub fn sup_abs(&self, horizon: f64) -> f64 {
        match self {
            TimeFn::Constant(c) => c.abs(),
            TimeFn::Affine { intercept, slope } => {
                intercept.abs().max((intercept + slope * horizon).abs())
            }
            TimeFn::PiecewiseConstant { breaks, values } => {
                let used = breaks.partition_point(|b| *b <= horizon) + 1;
                values[..used].iter().fold(0.0, |m, v| m.max(v.abs()))
            }
            TimeFn::Custom { bound, .. } => *bound,
        }
    }

    /// `int_a^b f(s) ds` for `a <= b`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        debug_assert!(a <= b);
        match self {
            TimeFn::Constant(c) => c * (b - a),
            TimeFn::Affine { intercept, slope } => {
                intercept * (b - a) + 0.5 * slope * (b * b - a * a)
            }
            TimeFn::PiecewiseConstant { breaks, values } => {
                let mut total = 0.0;
                let mut lo = a;
                let mut idx = breaks.partition_point(|br| *br <= a);
                while lo < b {
                    let hi = if idx < breaks.len() { breaks[idx].min(b) } else { b };
                    total += values[idx] * (hi - lo);
                    lo = hi;
                    idx += 1;
                }
                total
            }
            TimeFn::Custom { f, .. } => adaptive_simpson(&**f, a, b, QUADRATURE_TOL),
        }
    }

    /// `int_a^b max(f, 0) ds`, closed form for the non-custom kinds.
    pub fn positive_integral(&self, a: f64, b: f64) -> f64 {
        match self {
            TimeFn::Constant(c) => c.max(0.0) * (b - a),
            TimeFn::Affine { intercept, slope } => {
                if *slope == 0.0 {
                    return intercept.max(0.0) * (b - a);
                }
                // zero crossing of intercept + slope * t
                let root = -intercept / slope;
                let (lo, hi) = if *slope > 0.0 {
                    (a.max(root), b)
                } else {
                    (a, b.min(root))
                };
                if hi <= lo {
                    0.0
                } else {
                    self.integral(lo, hi)
                }
            }
            TimeFn::PiecewiseConstant { breaks, values } => {
                let clipped = TimeFn::PiecewiseConstant {
                    breaks: breaks.clone(),
                    values: values.iter().map(|v| v.max(0.0)).collect(),
                };
                clipped.integral(a, b)
            }
            TimeFn::Custom { f, .. } => {
                let g = |t: f64| f(t).max(0.0);
                adaptive_simpson(&g, a, b, QUADRATURE_TOL)
            }
        }
    }
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_integral_closed_form() {
        let f = TimeFn::affine(0.2, 0.1);
        assert!((f.integral(0.0, 2.0) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn piecewise_eval_and_integral() {
        let f = TimeFn::piecewise(vec![0.5, 1.0], vec![0.1, 0.3, 0.2]).unwrap();
        assert_eq!(f.eval(0.0), 0.1);
        assert_eq!(f.eval(0.5), 0.3);
        assert_eq!(f.eval(2.0), 0.2);
        let want = 0.1 * 0.5 + 0.3 * 0.5 + 0.2 * 0.5;
        assert!((f.integral(0.0, 1.5) - want).abs() < 1e-15);
        assert!((f.integral(0.25, 0.75) - (0.1 * 0.25 + 0.3 * 0.25)).abs() < 1e-15);
        assert_eq!(f.sup_abs(0.4), 0.1);
        assert_eq!(f.sup_abs(1.0), 0.3);
    }

    #[test]
    fn piecewise_rejects_bad_breaks() {
        assert!(TimeFn::piecewise(vec![0.5, 0.5], vec![1.0, 2.0, 3.0]).is_err());
        assert!(TimeFn::piecewise(vec![0.5], vec![1.0]).is_err());
    }

    #[test]
    fn simpson_matches_closed_form() {
        let f = TimeFn::custom(|t| 0.3 + 0.1 * (3.0 * t).sin(), 0.4);
        let exact = 0.3 * 2.0 + 0.1 * (1.0 - (6.0f64).cos()) / 3.0;
        assert!((f.integral(0.0, 2.0) - exact).abs() < 1e-10);
    }

    #[test]
    fn positive_part_of_decreasing_affine() {
        // 1 - t is positive on [0, 1) only
        let f = TimeFn::affine(1.0, -1.0);
        assert!((f.positive_integral(0.0, 3.0) - 0.5).abs() < 1e-15);
        assert!((f.positive_integral(0.0, 0.5) - 0.375).abs() < 1e-15);
    }
}
