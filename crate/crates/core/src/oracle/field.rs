//! Scalars the exact oracle can run on: `f64` and arbitrary-precision rationals.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

pub trait Field: Num + Signed + Clone + Debug + PartialOrd + Send + Sync {
    /// Exact conversion (every finite `f64` is a dyadic rational).
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
}

impl Field for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Field for BigRational {
    fn from_f64(x: f64) -> Self {
        <BigRational as FromPrimitive>::from_f64(x).expect("finite float")
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

pub fn rational_from_int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` when the matrix is singular.
pub fn solve<T: Field>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .filter(|r| !a[*r][col].is_zero())
            .max_by(|x, y| {
                a[*x][col]
                    .abs()
                    .partial_cmp(&a[*y][col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            if a[r][col].is_zero() {
                continue;
            }
            let factor = a[r][col].clone() / a[col][col].clone();
            for c in col..n {
                let delta = factor.clone() * a[col][c].clone();
                a[r][c] = a[r][c].clone() - delta;
            }
            let delta = factor * b[col].clone();
            b[r] = b[r].clone() - delta;
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let mut acc = b[r].clone();
        for c in r + 1..n {
            acc = acc - a[r][c].clone() * x[c].clone();
        }
        x[r] = acc / a[r][r].clone();
    }
    Some(x)
}

/// Rank of a `rows x cols` matrix; entries with magnitude `<= tol` count as zero.
pub fn rank<T: Field>(mut a: Vec<Vec<T>>, tol: f64) -> usize {
    let rows = a.len();
    if rows == 0 {
        return 0;
    }
    let cols = a[0].len();
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let pivot = (rank..rows)
            .filter(|r| a[*r][col].abs().to_f64() > tol)
            .max_by(|x, y| {
                a[*x][col]
                    .abs()
                    .partial_cmp(&a[*y][col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
        let Some(p) = pivot else { continue };
        a.swap(rank, p);
        for r in rank + 1..rows {
            if a[r][col].is_zero() {
                continue;
            }
            let factor = a[r][col].clone() / a[rank][col].clone();
            for c in col..cols {
                let delta = factor.clone() * a[rank][c].clone();
                a[r][c] = a[r][c].clone() - delta;
            }
        }
        rank += 1;
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve(a, vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn singular_detected() {
        assert!(solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn exact_rational_solve() {
        let r = |n: i64| rational_from_int(n);
        let a = vec![vec![r(1), r(2)], vec![r(3), r(4)]];
        let x = solve(a, vec![r(5), r(6)]).unwrap();
        assert_eq!(x, vec![r(-4), BigRational::new(9.into(), 2.into())]);
    }

    #[test]
    fn ranks() {
        assert_eq!(rank(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], 1e-12), 2);
        assert_eq!(rank(vec![vec![1.0, 2.0], vec![2.0, 4.0]], 1e-12), 1);
    }
}
