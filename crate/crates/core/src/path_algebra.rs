//! String algebras on a graph, Bratteli diagrams, higher relative
//! commutants and commuting squares.

use nalgebra::DVector;
use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::ser::{SerializeStruct, Serializer};
use serde::Serialize;

use crate::connection::{check_flatness, prefix_units, rectangle_transport, BiUnitaryConnection};
use crate::error::{Error, Result};
use crate::graph::{pf_data, Graph};
use crate::linalg::{hermitian_eigen, max_abs, CMatrix};
use crate::scalar::{Cx, Real};

/// Number of length-`k` paths from the star to every vertex (exact).
pub fn path_counts(g: &Graph, k: usize) -> Vec<BigUint> {
    let n = g.len();
    let mut v = vec![BigUint::zero(); n];
    v[g.star()] = BigUint::from(1u32);
    for _ in 0..k {
        v = step(g, &v);
    }
    v
}

fn step(g: &Graph, v: &[BigUint]) -> Vec<BigUint> {
    let adj = g.adjacency();
    (0..g.len())
        .map(|y| {
            let mut s = BigUint::zero();
            for (x, row) in adj.iter().enumerate() {
                if row[y] > 0 && !v[x].is_zero() {
                    s += &v[x] * row[y];
                }
            }
            s
        })
        .collect()
}

/// Nonzero block dimensions `(vertex label, paths)` of the level-`k` string algebra.
pub fn string_algebra_dims(g: &Graph, k: usize) -> Vec<(String, BigUint)> {
    path_counts(g, k)
        .into_iter()
        .enumerate()
        .filter(|(_, c)| !c.is_zero())
        .map(|(v, c)| (g.label(v).to_string(), c))
        .collect()
}

/// `sum_v paths(v)^2`, the dimension of `⊕_v M_{paths(v)}`.
pub fn higher_relative_commutant_dim(g: &Graph, k: usize) -> BigUint {
    path_counts(g, k).iter().map(|c| c * c).sum()
}

/// Higher relative commutant dimension attached to a connection.
///
/// Only the path-count model is implemented, which is correct for flat
/// connections; anything failing the flatness check on `caps` is refused.
pub fn connection_relative_commutant_dim<T: Real>(
    c: &BiUnitaryConnection<T>,
    k: usize,
    caps: (usize, usize),
    tol: f64,
) -> Result<BigUint> {
    let rep = check_flatness(c, caps.0, caps.1, tol)?;
    if !rep.flat {
        return Err(Error::Refused(format!(
            "connection is not flat (residual {:.3e}); path counts would not give the relative commutant",
            rep.residual
        )));
    }
    Ok(higher_relative_commutant_dim(c.vertical(), k))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BratteliDiagram {
    /// Row `k`: `(vertex label, block dimension)` for nonzero blocks.
    pub levels: Vec<Vec<(String, BigUint)>>,
    /// Edges from row `k` to row `k + 1`: `(from, to, multiplicity)`.
    pub inclusions: Vec<Vec<(String, String, u32)>>,
}

pub fn bratteli(g: &Graph, kmax: usize) -> BratteliDiagram {
    let adj = g.adjacency();
    let mut counts = path_counts(g, 0);
    let mut levels = Vec::with_capacity(kmax + 1);
    let mut inclusions = Vec::with_capacity(kmax);
    let row = |c: &[BigUint]| -> Vec<(String, BigUint)> {
        c.iter()
            .enumerate()
            .filter(|(_, x)| !x.is_zero())
            .map(|(v, x)| (g.label(v).to_string(), x.clone()))
            .collect()
    };
    levels.push(row(&counts));
    for _ in 0..kmax {
        let next = step(g, &counts);
        let mut edges = Vec::new();
        for (x, cx) in counts.iter().enumerate() {
            if cx.is_zero() {
                continue;
            }
            for (y, &m) in adj[x].iter().enumerate() {
                if m > 0 {
                    edges.push((g.label(x).to_string(), g.label(y).to_string(), m));
                }
            }
        }
        inclusions.push(edges);
        levels.push(row(&next));
        counts = next;
    }
    BratteliDiagram { levels, inclusions }
}

impl BratteliDiagram {
    /// Dimension `sum dim^2` of row `k`.
    pub fn algebra_dim(&self, k: usize) -> BigUint {
        self.levels[k].iter().map(|(_, d)| d * d).sum()
    }

    /// Whether every row equals the inclusion matrix applied to the row above.
    pub fn recurrence_holds(&self) -> bool {
        if self
            .levels
            .first()
            .map(|r| r.len() == 1 && r[0].1 == BigUint::from(1u32))
            != Some(true)
        {
            return false;
        }
        for (k, edges) in self.inclusions.iter().enumerate() {
            let prev = &self.levels[k];
            let mut expect: Vec<(String, BigUint)> = Vec::new();
            for (from, to, m) in edges {
                let Some((_, d)) = prev.iter().find(|(l, _)| l == from) else {
                    return false;
                };
                let add = d * *m;
                match expect.iter_mut().find(|(l, _)| l == to) {
                    Some((_, s)) => *s += add,
                    None => expect.push((to.clone(), add)),
                }
            }
            let mut got = self.levels[k + 1].clone();
            expect.sort();
            got.sort();
            if expect != got {
                return false;
            }
        }
        true
    }

    /// One line per row: `k`, then the block dimensions in vertex order.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("k\tblocks\tdim\n");
        for (k, row) in self.levels.iter().enumerate() {
            let blocks: Vec<String> = row.iter().map(|(_, d)| d.to_string()).collect();
            s.push_str(&format!(
                "{k}\t{}\t{}\n",
                blocks.join(" "),
                self.algebra_dim(k)
            ));
        }
        s
    }
}

/// JSON numbers when they fit in `u64`, decimal strings otherwise.
fn big_to_json(x: &BigUint) -> serde_json::Value {
    match x.to_u64() {
        Some(v) => serde_json::Value::from(v),
        None => serde_json::Value::from(x.to_string()),
    }
}

impl Serialize for BratteliDiagram {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let levels: Vec<Vec<serde_json::Value>> = self
            .levels
            .iter()
            .map(|row| {
                row.iter()
                    .map(|(v, d)| serde_json::json!({"vertex": v, "dim": big_to_json(d)}))
                    .collect()
            })
            .collect();
        let dims: Vec<serde_json::Value> = (0..self.levels.len())
            .map(|k| big_to_json(&self.algebra_dim(k)))
            .collect();
        let mut st = s.serialize_struct("BratteliDiagram", 3)?;
        st.serialize_field("levels", &levels)?;
        st.serialize_field("inclusions", &self.inclusions)?;
        st.serialize_field("dims", &dims)?;
        st.end()
    }
}

// ---------------------------------------------------------------------------
// Commuting squares

/// Subalgebra of `M_N` given by a spanning set (need not be independent).
#[derive(Clone, Debug)]
pub struct Subalgebra<T: Real> {
    pub span: Vec<CMatrix<T>>,
}

impl<T: Real> Subalgebra<T> {
    pub fn new(span: Vec<CMatrix<T>>) -> Self {
        Subalgebra { span }
    }

    pub fn scalars(n: usize) -> Self {
        Subalgebra {
            span: vec![CMatrix::identity(n, n)],
        }
    }
}

/// Orthogonal projection onto a subalgebra for `<x, y> = tr(ρ x^* y)`.
struct Projector<T: Real> {
    basis: Vec<CMatrix<T>>,
}

fn inner<T: Real>(rho: &DVector<T>, x: &CMatrix<T>, y: &CMatrix<T>) -> Cx<T> {
    // tr(ρ x^* y) with ρ diagonal
    let mut s = Cx::new(T::zero(), T::zero());
    for i in 0..x.nrows() {
        let w = Cx::new(rho[i], T::zero());
        for j in 0..x.ncols() {
            s += w * x[(j, i)].conj() * y[(j, i)];
        }
    }
    s
}

impl<T: Real> Projector<T> {
    fn new(rho: &DVector<T>, alg: &Subalgebra<T>) -> Self {
        let m = alg.span.len();
        let gram = CMatrix::<T>::from_fn(m, m, |i, j| inner(rho, &alg.span[i], &alg.span[j]));
        let (vals, vecs) = hermitian_eigen(&gram);
        let top = vals
            .iter()
            .copied()
            .fold(T::zero(), |a, b| if b > a { b } else { a });
        let mut basis = Vec::new();
        for (i, &lam) in vals.iter().enumerate() {
            if lam <= top * T::lit(1e-12) {
                continue;
            }
            let s = T::one() / lam.sqrt();
            let mut b = CMatrix::<T>::zeros(alg.span[0].nrows(), alg.span[0].ncols());
            for (t, x) in alg.span.iter().enumerate() {
                b += x * (vecs[(t, i)] * Cx::new(s, T::zero()));
            }
            basis.push(b);
        }
        Projector { basis }
    }

    fn apply(&self, rho: &DVector<T>, x: &CMatrix<T>) -> CMatrix<T> {
        let mut out = CMatrix::<T>::zeros(x.nrows(), x.ncols());
        for b in &self.basis {
            out += b * inner(rho, b, x);
        }
        out
    }
}

/// Max over the spanning set of `C` of `|E_B(x) - E_A(x)|`, where the
/// expectations are trace-orthogonal projections for the trace with
/// diagonal density `rho` on the ambient `M_N`.
///
/// The inclusions `A ⊂ B ⊂ D`, `A ⊂ C ⊂ D` are checked first.
pub fn commuting_square_check<T: Real>(
    rho: &DVector<T>,
    a: &Subalgebra<T>,
    b: &Subalgebra<T>,
    c: &Subalgebra<T>,
    d: &Subalgebra<T>,
) -> Result<T> {
    if rho.iter().any(|w| *w <= T::zero() || !w.is_finite()) {
        return Err(Error::Parameter("trace weights must be positive".into()));
    }
    for alg in [a, b, c, d] {
        if alg.span.is_empty() {
            return Err(Error::Parameter("empty spanning set".into()));
        }
        if alg
            .span
            .iter()
            .any(|x| x.nrows() != rho.len() || x.ncols() != rho.len())
        {
            return Err(Error::Parameter(
                "span matrices do not match the trace size".into(),
            ));
        }
    }
    let pa = Projector::new(rho, a);
    let pb = Projector::new(rho, b);
    let pc = Projector::new(rho, c);
    let pd = Projector::new(rho, d);
    let tol = T::lit(1e-8);
    for (small, big, name) in [
        (a, &pb, "A ⊂ B"),
        (a, &pc, "A ⊂ C"),
        (b, &pd, "B ⊂ D"),
        (c, &pd, "C ⊂ D"),
    ] {
        for x in &small.span {
            let scale = T::one().max(max_abs(x));
            if max_abs(&(big.apply(rho, x) - x)) > tol * scale {
                return Err(Error::Structural(format!("inclusion {name} does not hold")));
            }
        }
    }
    let mut worst = T::zero();
    for x in &c.span {
        let r = max_abs(&(pb.apply(rho, x) - pa.apply(rho, x)));
        if r > worst {
            worst = r;
        }
    }
    Ok(worst)
}

/// Square data `(ρ, A, B, C, D)` in the path space of a connection:
/// `A` scalars, `B` the `k`-step vertical string algebra, `C` the `l`-step
/// horizontal one (carried over by the connection), `D` everything on
/// `k x l` paths. `ρ` is the PF trace `μ(end) / β^(k+l)`.
#[allow(clippy::type_complexity)]
pub fn string_square<T: Real>(
    c: &BiUnitaryConnection<T>,
    k: usize,
    l: usize,
) -> Result<(DVector<T>, [Subalgebra<T>; 4])> {
    let g = c.vertical();
    let pf = pf_data::<T>(g)?;
    let start = g.star();
    let (t, tr, lb) = rectangle_transport(c, k, l);
    let n = lb.len();
    let scale = pf.beta.powi((k + l) as i32);
    let rho = DVector::from_fn(n, |i, _| {
        let end = crate::connection::end_vertex(start, &lb[i]);
        pf.mu[end] / scale
    });
    let t_adj = t.adjoint();
    let vert = Subalgebra::new(prefix_units::<T>(&lb, k, start));
    let horiz = Subalgebra::new(
        prefix_units::<T>(&tr, l, start)
            .into_iter()
            .map(|e| &t * e * &t_adj)
            .collect(),
    );
    let full = Subalgebra::new(prefix_units::<T>(&lb, k + l, start));
    Ok((rho, [Subalgebra::scalars(n), vert, horiz, full]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::flat_connection_a_n;
    use crate::graph::{dynkin, Series};

    fn big(v: &[u64]) -> Vec<BigUint> {
        v.iter().map(|&x| BigUint::from(x)).collect()
    }

    #[test]
    fn a5_rows() {
        let g = dynkin(Series::A, 5).unwrap();
        let dims = |k| {
            string_algebra_dims(&g, k)
                .into_iter()
                .map(|(l, d)| (l, d.to_u64().unwrap()))
                .collect::<Vec<_>>()
        };
        assert_eq!(dims(0), vec![("1".into(), 1)]);
        assert_eq!(dims(3), vec![("2".into(), 2), ("4".into(), 1)]);
        assert_eq!(
            dims(6),
            vec![("1".into(), 5), ("3".into(), 9), ("5".into(), 4)]
        );
        assert_eq!(higher_relative_commutant_dim(&g, 6), BigUint::from(122u32));
    }

    #[test]
    fn a5_closed_form() {
        let g = dynkin(Series::A, 5).unwrap();
        for k in 1..=10u32 {
            let expect = (BigUint::from(3u32).pow(k - 1) + 1u32) / 2u32;
            assert_eq!(
                higher_relative_commutant_dim(&g, k as usize),
                expect,
                "k = {k}"
            );
        }
    }

    #[test]
    fn bratteli_rows_a5_and_a2() {
        let g = dynkin(Series::A, 5).unwrap();
        let b = bratteli(&g, 6);
        let rows: Vec<Vec<u64>> = b
            .levels
            .iter()
            .map(|r| r.iter().map(|(_, d)| d.to_u64().unwrap()).collect())
            .collect();
        assert_eq!(
            rows,
            vec![
                vec![1],
                vec![1],
                vec![1, 1],
                vec![2, 1],
                vec![2, 3, 1],
                vec![5, 4],
                vec![5, 9, 4]
            ]
        );
        assert!(b.recurrence_holds());
        let b2 = bratteli(&dynkin(Series::A, 2).unwrap(), 3);
        assert!(b2
            .levels
            .iter()
            .all(|r| r.len() == 1 && r[0].1 == BigUint::from(1u32)));
        assert!(b2.to_tsv().lines().last().unwrap().starts_with("3\t1\t1"));
    }

    #[test]
    fn recurrence_for_builtins() {
        for name in ["A2", "A7", "D4", "D6", "E6", "E7", "E8"] {
            let g = crate::graph::dynkin_by_name(name).unwrap();
            assert!(bratteli(&g, 12).recurrence_holds(), "{name}");
        }
    }

    #[test]
    fn big_counts_do_not_overflow() {
        let g = dynkin(Series::D, 8).unwrap();
        let c = path_counts(&g, 200);
        assert!(c.iter().any(|x| x.bits() > 64));
        assert_eq!(big(&[1]), vec![BigUint::from(1u32)]);
    }

    #[test]
    fn string_square_is_commuting() {
        let c = flat_connection_a_n::<f64>(3).unwrap();
        let (rho, [a, b, cc, d]) = string_square(&c, 2, 2).unwrap();
        assert_eq!((b.span.len(), cc.span.len()), (2, 2));
        let r = commuting_square_check(&rho, &a, &b, &cc, &d).unwrap();
        assert!(r < 1e-10, "{r}");
        let c5 = flat_connection_a_n::<f64>(5).unwrap();
        let (rho, [a, b, cc, d]) = string_square(&c5, 2, 2).unwrap();
        assert!(commuting_square_check(&rho, &a, &b, &cc, &d).unwrap() < 1e-10);
    }

    #[test]
    fn trivial_square_and_bad_trace() {
        let s = Subalgebra::<f64>::new(vec![
            CMatrix::identity(3, 3),
            CMatrix::from_fn(3, 3, |i, j| {
                if i == j {
                    Cx::new(i as f64, 0.0)
                } else {
                    Cx::new(0.0, 0.0)
                }
            }),
        ]);
        let rho = DVector::from_element(3, 1.0 / 3.0);
        assert!(commuting_square_check(&rho, &s, &s, &s, &s).unwrap() < 1e-14);
        let bad = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        assert!(matches!(
            commuting_square_check(&bad, &s, &s, &s, &s),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn perturbed_trace_breaks_square() {
        let c = flat_connection_a_n::<f64>(3).unwrap();
        let (mut rho, [a, b, cc, d]) = string_square(&c, 2, 2).unwrap();
        for (i, w) in rho.iter_mut().enumerate() {
            *w *= 1.0 + 0.3 * (i as f64 + 1.0);
        }
        let r = commuting_square_check(&rho, &a, &b, &cc, &d).unwrap();
        assert!(r > 1e-3, "{r}");
    }
}
