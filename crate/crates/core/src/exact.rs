//! Row reduction over exact rationals or tolerance-based floats.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Scalars usable in [`rref`]: exact rationals, or floats with a zero test.
pub trait SolveField: Clone + fmt::Debug {
    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(k: i64) -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    /// Nearest integer if the value is (within tolerance) integral.
    fn to_integer(&self) -> Option<i64>;
    /// Pivot preference; larger is better.
    fn magnitude(&self) -> f64;
}

impl SolveField for BigRational {
    fn zero() -> Self {
        <BigRational as Zero>::zero()
    }
    fn one() -> Self {
        <BigRational as One>::one()
    }
    fn from_i64(k: i64) -> Self {
        BigRational::from_integer(BigInt::from(k))
    }
    fn is_zero(&self) -> bool {
        <BigRational as Zero>::is_zero(self)
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn to_integer(&self) -> Option<i64> {
        if self.is_integer() {
            num_rational::Ratio::to_integer(self).to_i64()
        } else {
            None
        }
    }
    fn magnitude(&self) -> f64 {
        // any nonzero pivot is exact; prefer small denominators for speed
        if Zero::is_zero(self) {
            0.0
        } else {
            1.0 / (1.0 + self.denom().bits() as f64 + self.numer().abs().bits() as f64)
        }
    }
}

/// Float scalar with absolute zero tolerance `1e-9` and integrality
/// tolerance `1e-6`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Approx(pub f64);

impl Approx {
    pub const ZERO_TOL: f64 = 1e-9;
    pub const INT_TOL: f64 = 1e-6;
}

impl SolveField for Approx {
    fn zero() -> Self {
        Approx(0.0)
    }
    fn one() -> Self {
        Approx(1.0)
    }
    fn from_i64(k: i64) -> Self {
        Approx(k as f64)
    }
    fn is_zero(&self) -> bool {
        self.0.abs() < Self::ZERO_TOL
    }
    fn add(&self, o: &Self) -> Self {
        Approx(self.0 + o.0)
    }
    fn sub(&self, o: &Self) -> Self {
        Approx(self.0 - o.0)
    }
    fn mul(&self, o: &Self) -> Self {
        Approx(self.0 * o.0)
    }
    fn div(&self, o: &Self) -> Self {
        Approx(self.0 / o.0)
    }
    fn to_integer(&self) -> Option<i64> {
        let r = self.0.round();
        ((self.0 - r).abs() < Self::INT_TOL).then_some(r as i64)
    }
    fn magnitude(&self) -> f64 {
        self.0.abs()
    }
}

/// Reduced row echelon form in place; returns pivot columns.
pub fn rref<F: SolveField>(rows: &mut Vec<Vec<F>>, ncols: usize) -> Vec<usize> {
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        if r >= rows.len() {
            break;
        }
        let best = (r..rows.len())
            .filter(|&i| !rows[i][c].is_zero())
            .max_by(|&a, &b| {
                rows[a][c]
                    .magnitude()
                    .partial_cmp(&rows[b][c].magnitude())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
        let Some(p) = best else { continue };
        rows.swap(r, p);
        let inv = F::one().div(&rows[r][c]);
        for x in rows[r].iter_mut() {
            *x = x.mul(&inv);
        }
        for i in 0..rows.len() {
            if i != r && !rows[i][c].is_zero() {
                let f = rows[i][c].clone();
                let (src, dst) = if i < r {
                    let (a, b) = rows.split_at_mut(r);
                    (&b[0], &mut a[i])
                } else {
                    let (a, b) = rows.split_at_mut(i);
                    (&a[r], &mut b[0])
                };
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = d.sub(&f.mul(s));
                }
                dst[c] = F::zero();
            }
        }
        pivots.push(c);
        r += 1;
    }
    rows.truncate(r);
    pivots
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(BigInt::from(a), BigInt::from(b))
    }

    #[test]
    fn rref_rational_and_float() {
        let mut rows = vec![
            vec![q(1, 1), q(2, 1), q(3, 1)],
            vec![q(2, 1), q(4, 1), q(6, 1)],
            vec![q(0, 1), q(1, 1), q(1, 2)],
        ];
        let piv = rref(&mut rows, 3);
        assert_eq!(piv, vec![0, 1]);
        assert_eq!(rows[0], vec![q(1, 1), q(0, 1), q(2, 1)]);
        assert_eq!(rows[1], vec![q(0, 1), q(1, 1), q(1, 2)]);
        let mut f = vec![
            vec![Approx(1.0), Approx(1.0)],
            vec![Approx(1.0), Approx(1.0 + 1e-12)],
        ];
        assert_eq!(rref(&mut f, 2), vec![0]);
        assert_eq!(Approx(2.0000001).to_integer(), Some(2));
        assert_eq!(Approx(2.1).to_integer(), None);
    }
}
