//! Exact arithmetic in cyclotomic fields `Q(ζ_N)`.
//!
//! An element is stored by its coordinates in the power basis
//! `1, ζ, ..., ζ^{φ(N)-1}`, reduced modulo the cyclotomic polynomial, so
//! equality is coordinate equality.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::scalar::Cx;

fn cyclotomic_poly(n: u32) -> Arc<Vec<BigInt>> {
    static CACHE: OnceLock<Mutex<HashMap<u32, Arc<Vec<BigInt>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(p) = cache.lock().expect("cache lock").get(&n) {
        return p.clone();
    }
    // x^n - 1 divided by Φ_d for every proper divisor d
    let mut p = vec![BigInt::zero(); n as usize + 1];
    p[0] = -BigInt::one();
    p[n as usize] = BigInt::one();
    for d in 1..n {
        if n.is_multiple_of(d) {
            p = div_exact(&p, &cyclotomic_poly(d));
        }
    }
    let p = Arc::new(p);
    cache.lock().expect("cache lock").insert(n, p.clone());
    p
}

/// Exact division of integer polynomials by a monic divisor (low degree first).
fn div_exact(num: &[BigInt], den: &[BigInt]) -> Vec<BigInt> {
    let mut r = num.to_vec();
    let dd = den.len() - 1;
    let qd = r.len() - 1 - dd;
    let mut q = vec![BigInt::zero(); qd + 1];
    for i in (0..=qd).rev() {
        let c = r[i + dd].clone();
        if c.is_zero() {
            continue;
        }
        for (j, dj) in den.iter().enumerate() {
            r[i + j] -= &c * dj;
        }
        q[i] = c;
    }
    debug_assert!(r.iter().all(|x| x.is_zero()));
    q
}

/// Euler's totient via the degree of Φ_N.
pub fn totient(n: u32) -> usize {
    cyclotomic_poly(n).len() - 1
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Cyclo {
    n: u32,
    c: Vec<BigRational>,
}

impl fmt::Debug for Cyclo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for Cyclo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms = Vec::new();
        for (i, c) in self.c.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            terms.push(match i {
                0 => format!("{c}"),
                1 => format!("{c}*z{}", self.n),
                _ => format!("{c}*z{}^{i}", self.n),
            });
        }
        if terms.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", terms.join(" + "))
        }
    }
}

impl Cyclo {
    /// Reduces an arbitrary coefficient vector (in powers of ζ_N).
    pub fn from_poly(n: u32, coeffs: Vec<BigRational>) -> Self {
        assert!(n >= 1, "level must be positive");
        let phi = cyclotomic_poly(n);
        let deg = phi.len() - 1;
        let mut c = coeffs;
        // ζ^N = 1 first keeps the division short
        if c.len() > n as usize {
            let mut folded = vec![BigRational::zero(); n as usize];
            for (i, x) in c.into_iter().enumerate() {
                folded[i % n as usize] += x;
            }
            c = folded;
        }
        for i in (deg..c.len()).rev() {
            let lead = c[i].clone();
            if lead.is_zero() {
                continue;
            }
            for (j, pj) in phi.iter().enumerate() {
                let t = &lead * BigRational::from_integer(pj.clone());
                c[i - deg + j] -= t;
            }
        }
        c.resize(deg, BigRational::zero());
        Cyclo { n, c }
    }

    pub fn zero(n: u32) -> Self {
        Cyclo {
            n,
            c: vec![BigRational::zero(); totient(n)],
        }
    }

    pub fn from_rational(n: u32, q: BigRational) -> Self {
        let mut z = Self::zero(n);
        z.c[0] = q;
        z
    }

    pub fn from_int(n: u32, k: i64) -> Self {
        Self::from_rational(n, BigRational::from_integer(BigInt::from(k)))
    }

    pub fn one(n: u32) -> Self {
        Self::from_int(n, 1)
    }

    /// `ζ_N^k` for any integer `k`.
    pub fn zeta(n: u32, k: i64) -> Self {
        let e = k.rem_euclid(n as i64) as usize;
        let mut v = vec![BigRational::zero(); e + 1];
        v[e] = BigRational::one();
        Self::from_poly(n, v)
    }

    pub fn level(&self) -> u32 {
        self.n
    }

    pub fn coords(&self) -> &[BigRational] {
        &self.c
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|x| x.is_zero())
    }

    /// The same element viewed in `Q(ζ_m)`; requires `N | m`.
    pub fn lift(&self, m: u32) -> Self {
        assert!(
            m.is_multiple_of(self.n),
            "cannot lift level {} to {}",
            self.n,
            m
        );
        if m == self.n {
            return self.clone();
        }
        let step = (m / self.n) as usize;
        let mut v = vec![BigRational::zero(); (self.c.len().max(1) - 1) * step + 1];
        for (i, x) in self.c.iter().enumerate() {
            v[i * step] = x.clone();
        }
        Self::from_poly(m, v)
    }

    fn common(&self, other: &Self) -> (Self, Self) {
        if self.n == other.n {
            return (self.clone(), other.clone());
        }
        let m = self.n.lcm(&other.n);
        (self.lift(m), other.lift(m))
    }

    /// Complex conjugate (`ζ -> ζ^{-1}`).
    pub fn conj(&self) -> Self {
        let n = self.n as usize;
        let mut v = vec![BigRational::zero(); n];
        for (i, x) in self.c.iter().enumerate() {
            v[(n - i) % n] += x.clone();
        }
        Self::from_poly(self.n, v)
    }

    pub fn to_complex(&self) -> Cx<f64> {
        let mut z = Cx::new(0.0, 0.0);
        for (i, x) in self.c.iter().enumerate() {
            let t = 2.0 * std::f64::consts::PI * i as f64 / self.n as f64;
            z += Cx::new(t.cos(), t.sin()) * x.to_f64().unwrap_or(f64::NAN);
        }
        z
    }

    /// Rational value if the element lies in `Q`.
    pub fn as_rational(&self) -> Option<BigRational> {
        if self.c.iter().skip(1).all(|x| x.is_zero()) {
            Some(self.c.first().cloned().unwrap_or_else(BigRational::zero))
        } else {
            None
        }
    }

    pub fn scale(&self, q: &BigRational) -> Self {
        Cyclo {
            n: self.n,
            c: self.c.iter().map(|x| x * q).collect(),
        }
    }
}

impl Add for &Cyclo {
    type Output = Cyclo;
    fn add(self, rhs: &Cyclo) -> Cyclo {
        let (a, b) = self.common(rhs);
        Cyclo {
            n: a.n,
            c: a.c.iter().zip(&b.c).map(|(x, y)| x + y).collect(),
        }
    }
}

impl Sub for &Cyclo {
    type Output = Cyclo;
    fn sub(self, rhs: &Cyclo) -> Cyclo {
        let (a, b) = self.common(rhs);
        Cyclo {
            n: a.n,
            c: a.c.iter().zip(&b.c).map(|(x, y)| x - y).collect(),
        }
    }
}

impl Neg for &Cyclo {
    type Output = Cyclo;
    fn neg(self) -> Cyclo {
        Cyclo {
            n: self.n,
            c: self.c.iter().map(|x| -x).collect(),
        }
    }
}

impl Mul for &Cyclo {
    type Output = Cyclo;
    fn mul(self, rhs: &Cyclo) -> Cyclo {
        let (a, b) = self.common(rhs);
        if a.c.is_empty() || b.c.is_empty() {
            return Cyclo::zero(a.n);
        }
        let mut v = vec![BigRational::zero(); a.c.len() + b.c.len() - 1];
        for (i, x) in a.c.iter().enumerate() {
            if x.is_zero() {
                continue;
            }
            for (j, y) in b.c.iter().enumerate() {
                if !y.is_zero() {
                    v[i + j] += x * y;
                }
            }
        }
        Cyclo::from_poly(a.n, v)
    }
}

/// `sqrt(5) = ζ5 - ζ5^2 - ζ5^3 + ζ5^4`.
pub fn sqrt5() -> Cyclo {
    let z = |k| Cyclo::zeta(5, k);
    &(&(&z(1) - &z(2)) - &z(3)) + &z(4)
}

/// Golden ratio `(1 + sqrt 5) / 2 = 1 + ζ5 + ζ5^4`.
pub fn golden() -> Cyclo {
    &(&Cyclo::one(5) + &Cyclo::zeta(5, 1)) + &Cyclo::zeta(5, 4)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(BigInt::from(a), BigInt::from(b))
    }

    #[test]
    fn cyclotomic_polynomials() {
        let p = |n| {
            cyclotomic_poly(n)
                .iter()
                .map(|x| x.to_i64().unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(p(1), vec![-1, 1]);
        assert_eq!(p(2), vec![1, 1]);
        assert_eq!(p(4), vec![1, 0, 1]);
        assert_eq!(p(5), vec![1, 1, 1, 1, 1]);
        assert_eq!(p(6), vec![1, -1, 1]);
        assert_eq!(p(12), vec![1, 0, -1, 0, 1]);
        assert_eq!(totient(20), 8);
    }

    #[test]
    fn roots_of_unity() {
        for n in [1u32, 2, 3, 4, 5, 6, 8, 10, 12] {
            let z = Cyclo::zeta(n, 1);
            let mut p = Cyclo::one(n);
            for _ in 0..n {
                p = &p * &z;
            }
            assert_eq!(p, Cyclo::one(n));
            assert_eq!(&z * &z.conj(), Cyclo::one(n));
            assert!(
                (z.to_complex() - Cx::from_polar(1.0, 2.0 * std::f64::consts::PI / n as f64))
                    .norm()
                    < 1e-12
            );
        }
    }

    #[test]
    fn golden_ratio_identities() {
        let phi = golden();
        assert_eq!(&phi * &phi, &phi + &Cyclo::one(5));
        let s5 = sqrt5();
        assert_eq!(&s5 * &s5, Cyclo::from_int(5, 5));
        assert_eq!(phi.conj(), phi);
        assert!((phi.to_complex().re - 1.618033988749895).abs() < 1e-12);
        assert_eq!(&(&phi + &phi) - &Cyclo::one(5), s5);
    }

    #[test]
    fn mixed_levels_lift() {
        let a = Cyclo::zeta(4, 1); // i
        let b = Cyclo::zeta(3, 1);
        let s = &a * &b;
        assert_eq!(s.level(), 12);
        assert_eq!(s, Cyclo::zeta(12, 7));
        assert_eq!(Cyclo::zeta(2, 1), Cyclo::from_int(2, -1));
        assert_eq!(Cyclo::zeta(2, 1).lift(6), Cyclo::from_int(6, -1));
        assert_eq!(Cyclo::from_int(3, 2).as_rational(), Some(q(2, 1)));
    }
}
