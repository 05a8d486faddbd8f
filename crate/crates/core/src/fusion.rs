//! Fusion rings: labels with a vacuum at index 0, multiplicities
//! `N_{ab}^c` and duals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::perron_frobenius;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionRing {
    labels: Vec<String>,
    /// `n[a][b][c] = N_{ab}^c`.
    n: Vec<Vec<Vec<u32>>>,
    #[serde(skip)]
    dual: Vec<usize>,
}

impl FusionRing {
    /// Validates the unit, dual and associativity axioms.
    pub fn new(labels: Vec<String>, n: Vec<Vec<Vec<u32>>>) -> Result<Self> {
        let r = labels.len();
        if r == 0 {
            return Err(Error::Structural(
                "fusion ring needs at least the vacuum".into(),
            ));
        }
        if n.len() != r
            || n.iter()
                .any(|row| row.len() != r || row.iter().any(|v| v.len() != r))
        {
            return Err(Error::Structural(
                "fusion tensor has the wrong shape".into(),
            ));
        }
        for a in 0..r {
            for b in 0..r {
                let d = u32::from(a == b);
                if n[0][a][b] != d || n[a][0][b] != d {
                    return Err(Error::Structural(format!(
                        "vacuum is not a unit at ({}, {})",
                        labels[a], labels[b]
                    )));
                }
            }
        }
        let mut dual = vec![usize::MAX; r];
        for a in 0..r {
            let hits: Vec<usize> = (0..r).filter(|&b| n[a][b][0] > 0).collect();
            if hits.len() != 1 || n[a][hits[0]][0] != 1 {
                return Err(Error::Structural(format!(
                    "label {} has no unique dual",
                    labels[a]
                )));
            }
            dual[a] = hits[0];
        }
        if (0..r).any(|a| dual[dual[a]] != a) {
            return Err(Error::Structural("duality is not an involution".into()));
        }
        let ring = FusionRing { labels, n, dual };
        if let Some((a, b, c, d)) = ring.associativity_violation() {
            return Err(Error::Structural(format!(
                "fusion is not associative at ({}, {}, {}; {})",
                ring.labels[a], ring.labels[b], ring.labels[c], ring.labels[d]
            )));
        }
        Ok(ring)
    }

    /// Group ring of a finite group given by its multiplication table.
    pub fn from_group(labels: Vec<String>, mul: impl Fn(usize, usize) -> usize) -> Result<Self> {
        let r = labels.len();
        let mut n = vec![vec![vec![0u32; r]; r]; r];
        for (a, row) in n.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                v[mul(a, b)] = 1;
            }
        }
        Self::new(labels, n)
    }

    pub fn rank(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn n(&self, a: usize, b: usize, c: usize) -> u32 {
        self.n[a][b][c]
    }

    pub fn tensor(&self) -> &Vec<Vec<Vec<u32>>> {
        &self.n
    }

    pub fn dual(&self, a: usize) -> usize {
        self.dual[a]
    }

    /// Outcomes of `a ⊗ b` with multiplicity.
    pub fn fuse(&self, a: usize, b: usize) -> Vec<(usize, u32)> {
        (0..self.rank())
            .filter(|&c| self.n[a][b][c] > 0)
            .map(|c| (c, self.n[a][b][c]))
            .collect()
    }

    pub fn is_multiplicity_free(&self) -> bool {
        self.n.iter().flatten().flatten().all(|&x| x <= 1)
    }

    fn associativity_violation(&self) -> Option<(usize, usize, usize, usize)> {
        let r = self.rank();
        let n = &self.n;
        for a in 0..r {
            for b in 0..r {
                for c in 0..r {
                    for d in 0..r {
                        let left: u32 = (0..r).map(|e| n[a][b][e] * n[e][c][d]).sum();
                        let right: u32 = (0..r).map(|f| n[b][c][f] * n[a][f][d]).sum();
                        if left != right {
                            return Some((a, b, c, d));
                        }
                    }
                }
            }
        }
        None
    }

    /// `(N_a)_{bc} = N_{ab}^c`.
    pub fn fusion_matrix<T: Real>(&self, a: usize) -> DMatrix<T> {
        let r = self.rank();
        DMatrix::from_fn(r, r, |b, c| T::lit(self.n[a][b][c] as f64))
    }

    /// Quantum dimensions: the PF vector of `sum_a N_a`, normalised at the
    /// vacuum. `d_a d_b = sum_c N_ab^c d_c` is then checked.
    pub fn quantum_dims<T: Real>(&self) -> Result<DVector<T>> {
        let r = self.rank();
        let mut m = DMatrix::<T>::zeros(r, r);
        for a in 0..r {
            m += self.fusion_matrix::<T>(a);
        }
        let (_, v, _) = perron_frobenius(&m, 1e-14, 1_000_000)?;
        let d = &v / v[0];
        let tol = T::lit(1e-9);
        for a in 0..r {
            for b in 0..r {
                let mut s = T::zero();
                for c in 0..r {
                    s += T::lit(self.n[a][b][c] as f64) * d[c];
                }
                if (d[a] * d[b] - s).abs() > tol * (T::one() + s.abs()) {
                    return Err(Error::Numerical(format!(
                        "quantum dimensions inconsistent at ({}, {})",
                        self.labels[a], self.labels[b]
                    )));
                }
            }
        }
        Ok(d)
    }

    /// `sum_a d_a^2`.
    pub fn global_dim_sq<T: Real>(&self) -> Result<T> {
        Ok(self
            .quantum_dims::<T>()?
            .iter()
            .map(|d| *d * *d)
            .fold(T::zero(), |a, b| a + b))
    }

    /// Rebuild after deserialization (recomputes duals, revalidates).
    pub fn validated(self) -> Result<Self> {
        Self::new(self.labels, self.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z2z2() -> FusionRing {
        let l = ["1", "e", "m", "f"].map(String::from).to_vec();
        FusionRing::from_group(l, |a, b| a ^ b).unwrap()
    }

    fn fib() -> FusionRing {
        let l = vec!["1".to_string(), "tau".to_string()];
        FusionRing::new(
            l,
            vec![vec![vec![1, 0], vec![0, 1]], vec![vec![0, 1], vec![1, 1]]],
        )
        .unwrap()
    }

    #[test]
    fn dims() {
        let d = z2z2().quantum_dims::<f64>().unwrap();
        assert!(d.iter().all(|x| (x - 1.0).abs() < 1e-12));
        let d = fib().quantum_dims::<f64>().unwrap();
        assert!((d[1] - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!((fib().global_dim_sq::<f64>().unwrap() - (5.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn duals() {
        let r = FusionRing::from_group((0..3).map(|i| i.to_string()).collect(), |a, b| (a + b) % 3)
            .unwrap();
        assert_eq!((r.dual(0), r.dual(1), r.dual(2)), (0, 2, 1));
        assert_eq!(fib().dual(1), 1);
    }

    #[test]
    fn rejects_bad_rings() {
        let l = vec!["1".to_string(), "x".to_string()];
        // x ⊗ x = x has no dual
        let bad = FusionRing::new(
            l.clone(),
            vec![vec![vec![1, 0], vec![0, 1]], vec![vec![0, 1], vec![0, 1]]],
        );
        assert!(matches!(bad, Err(Error::Structural(_))));
        // vacuum not a unit
        let bad = FusionRing::new(
            l,
            vec![vec![vec![1, 0], vec![1, 1]], vec![vec![0, 1], vec![1, 0]]],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn json_round_trip() {
        let r = fib();
        let s = serde_json::to_string(&r).unwrap();
        let back: FusionRing = serde_json::from_str(&s).unwrap();
        assert_eq!(back.validated().unwrap(), r);
    }
}
