//! Finite graphs with Perron-Frobenius data.
//!
//! Graphs are undirected multigraphs without loops. Vertex order is part of
//! the public contract: [`dynkin`] numbers vertices `1..=n` along the long
//! arm starting from the distinguished end vertex, so cell indices of the
//! connections built on top of it are reproducible.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::perron_frobenius;
use crate::scalar::Real;

/// Dynkin series accepted by [`dynkin`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Series {
    A,
    D,
    E,
}

impl std::str::FromStr for Series {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Series::A),
            "D" | "d" => Ok(Series::D),
            "E" | "e" => Ok(Series::E),
            _ => Err(Error::Parameter(format!("unknown Dynkin series `{s}`"))),
        }
    }
}

/// Parses names such as `A5`, `D4`, `E8`.
pub fn parse_dynkin(name: &str) -> Result<(Series, usize)> {
    let name = name.trim();
    if name.len() < 2 {
        return Err(Error::Parameter(format!("bad Dynkin name `{name}`")));
    }
    let series: Series = name[..1].parse()?;
    let n: usize = name[1..]
        .parse()
        .map_err(|_| Error::Parameter(format!("bad Dynkin rank in `{name}`")))?;
    Ok((series, n))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    labels: Vec<String>,
    /// Edge occurrences; parallel edges appear several times.
    edges: Vec<(usize, usize)>,
    star: usize,
    adjacency: Vec<Vec<u32>>,
}

impl Graph {
    /// Builds and validates a graph. Rejects loops, disconnected graphs and
    /// graphs without edges.
    pub fn new(labels: Vec<String>, edges: Vec<(usize, usize)>, star: usize) -> Result<Self> {
        let n = labels.len();
        if n < 2 {
            return Err(Error::Structural(
                "graphs need at least two vertices and one edge".into(),
            ));
        }
        if star >= n {
            return Err(Error::Structural(format!(
                "distinguished vertex {star} out of range"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(Error::Structural(format!("duplicate vertex label `{l}`")));
            }
        }
        let mut adjacency = vec![vec![0u32; n]; n];
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::Structural(format!("edge ({u},{v}) out of range")));
            }
            if u == v {
                return Err(Error::Structural("loops are not supported".into()));
            }
            adjacency[u][v] += 1;
            adjacency[v][u] += 1;
        }
        if edges.is_empty() {
            return Err(Error::Structural("edgeless graph".into()));
        }
        let g = Graph {
            labels,
            edges,
            star,
            adjacency,
        };
        if !g.is_connected() {
            return Err(Error::Structural("graph is disconnected".into()));
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> &str {
        &self.labels[v]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn star(&self) -> usize {
        self.star
    }

    pub fn with_star(mut self, star: usize) -> Result<Self> {
        if star >= self.len() {
            return Err(Error::Parameter(format!(
                "distinguished vertex {star} out of range"
            )));
        }
        self.star = star;
        Ok(self)
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.adjacency
    }

    pub fn adjacency_matrix<T: Real>(&self) -> DMatrix<T> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| T::lit(self.adjacency[i][j] as f64))
    }

    /// Other endpoint of edge `e` seen from `v`, if `v` is an endpoint.
    pub fn traverse(&self, e: usize, v: usize) -> Option<usize> {
        let (a, b) = self.edges[e];
        if a == v {
            Some(b)
        } else if b == v {
            Some(a)
        } else {
            None
        }
    }

    /// Edges incident to `v` as `(edge id, other endpoint)`, ordered by edge id.
    pub fn incident(&self, v: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.edges.len()).filter_map(move |e| self.traverse(e, v).map(|w| (e, w)))
    }

    fn is_connected(&self) -> bool {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for w in 0..n {
                if self.adjacency[v][w] > 0 && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Two-colouring with the distinguished vertex in class `false`, if the
    /// graph is bipartite.
    pub fn bipartition(&self) -> Option<Vec<bool>> {
        let n = self.len();
        let mut colour: Vec<Option<bool>> = vec![None; n];
        colour[self.star] = Some(false);
        let mut stack = vec![self.star];
        while let Some(v) = stack.pop() {
            let c = colour[v].unwrap();
            for w in 0..n {
                if self.adjacency[v][w] == 0 {
                    continue;
                }
                match colour[w] {
                    None => {
                        colour[w] = Some(!c);
                        stack.push(w);
                    }
                    Some(cw) if cw == c => return None,
                    _ => {}
                }
            }
        }
        colour.into_iter().collect()
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            vertices: self.labels.clone(),
            edges: self
                .edges
                .iter()
                .map(|&(u, v)| [self.labels[u].clone(), self.labels[v].clone()])
                .collect(),
            star: self.labels[self.star].clone(),
        }
    }

    pub fn from_json(j: &GraphJson) -> Result<Self> {
        let index: BTreeMap<&str, usize> = j
            .vertices
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let look = |l: &str| {
            index
                .get(l)
                .copied()
                .ok_or_else(|| Error::Structural(format!("unknown vertex `{l}`")))
        };
        let edges = j
            .edges
            .iter()
            .map(|[u, v]| Ok((look(u)?, look(v)?)))
            .collect::<Result<Vec<_>>>()?;
        Graph::new(j.vertices.clone(), edges, look(&j.star)?)
    }
}

/// On-disk graph format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphJson {
    pub vertices: Vec<String>,
    pub edges: Vec<[String; 2]>,
    pub star: String,
}

/// Standard Dynkin diagram with vertices labelled `"1".."n"` and the
/// distinguished vertex `"1"`.
///
/// `A_n` is the path `1-2-...-n`. `D_n` is the path `1-...-(n-1)` with `n`
/// attached to `n-2`. `E_n` is the path `1-...-(n-1)` with `n` attached to `3`.
pub fn dynkin(series: Series, n: usize) -> Result<Graph> {
    let valid = match series {
        Series::A => n >= 1,
        Series::D => n >= 4,
        Series::E => (6..=8).contains(&n),
    };
    if !valid {
        return Err(Error::Parameter(format!(
            "{series:?}_{n} is not a Dynkin diagram"
        )));
    }
    let labels: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    match series {
        Series::A => edges.extend((0..n.saturating_sub(1)).map(|i| (i, i + 1))),
        Series::D => {
            edges.extend((0..n - 2).map(|i| (i, i + 1)));
            edges.push((n - 3, n - 1));
        }
        Series::E => {
            edges.extend((0..n - 2).map(|i| (i, i + 1)));
            edges.push((2, n - 1));
        }
    }
    Graph::new(labels, edges, 0)
}

pub fn dynkin_by_name(name: &str) -> Result<Graph> {
    let (s, n) = parse_dynkin(name)?;
    dynkin(s, n)
}

/// Perron-Frobenius eigendata.
#[derive(Clone, Debug)]
pub struct PfData<T> {
    pub beta: T,
    /// Indexed like the graph's vertices, normalised to 1 at the star.
    pub mu: DVector<T>,
    /// max_v |(A mu)_v - beta mu_v|.
    pub residual: T,
    pub iterations: usize,
}

pub const PF_TOL: f64 = 1e-14;
pub const PF_MAX_ITER: usize = 1_000_000;

pub fn pf_data<T: Real>(g: &Graph) -> Result<PfData<T>> {
    let a = g.adjacency_matrix::<T>();
    let (beta, v, iterations) = perron_frobenius(&a, PF_TOL, PF_MAX_ITER)?;
    if beta <= T::zero() {
        return Err(Error::Structural(
            "Perron-Frobenius eigenvalue is zero".into(),
        ));
    }
    let mu = &v / v[g.star()];
    if mu.iter().any(|&m| m <= T::zero()) {
        return Err(Error::Numerical(
            "PF vector has non-positive entries".into(),
        ));
    }
    let residual = (&a * &mu - &mu * beta).amax();
    Ok(PfData {
        beta,
        mu,
        residual,
        iterations,
    })
}

/// Jones index `beta^2`.
pub fn jones_index<T: Real>(g: &Graph) -> Result<T> {
    let pf = pf_data::<T>(g)?;
    Ok(pf.beta * pf.beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_ratio(n: usize, j: usize) -> f64 {
        let t = std::f64::consts::PI / (n as f64 + 1.0);
        (j as f64 * t).sin() / t.sin()
    }

    #[test]
    fn dynkin_shapes() {
        let a2 = dynkin(Series::A, 2).unwrap();
        assert_eq!((a2.len(), a2.edges().len()), (2, 1));
        let a5 = dynkin(Series::A, 5).unwrap();
        assert_eq!((a5.len(), a5.edges().len()), (5, 4));
        let d4 = dynkin(Series::D, 4).unwrap();
        let degrees: Vec<u32> = d4.adjacency().iter().map(|r| r.iter().sum()).collect();
        assert_eq!(degrees, vec![1, 3, 1, 1]);
        let e8 = dynkin(Series::E, 8).unwrap();
        assert_eq!(e8.adjacency()[2].iter().sum::<u32>(), 3);
    }

    #[test]
    fn invalid_dynkin_pairs() {
        assert!(matches!(dynkin(Series::A, 0), Err(Error::Parameter(_))));
        assert!(matches!(dynkin(Series::D, 3), Err(Error::Parameter(_))));
        assert!(matches!(dynkin(Series::E, 9), Err(Error::Parameter(_))));
    }

    #[test]
    fn single_vertex_is_refused() {
        assert!(matches!(dynkin(Series::A, 1), Err(Error::Structural(_))));
    }

    #[test]
    fn disconnected_is_refused() {
        let labels = ["a", "b", "c", "d"].map(String::from).to_vec();
        let err = Graph::new(labels, vec![(0, 1), (2, 3)], 0).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn a3_and_a5_pf() {
        let pf = pf_data::<f64>(&dynkin(Series::A, 3).unwrap()).unwrap();
        assert!((pf.beta - 2f64.sqrt()).abs() < 1e-12);
        for (m, e) in pf.mu.iter().zip([1.0, 2f64.sqrt(), 1.0]) {
            assert!((m - e).abs() < 1e-12);
        }
        let pf = pf_data::<f64>(&dynkin(Series::A, 5).unwrap()).unwrap();
        let s3 = 3f64.sqrt();
        for (m, e) in pf.mu.iter().zip([1.0, s3, 2.0, s3, 1.0]) {
            assert!((m - e).abs() < 1e-12);
        }
    }

    #[test]
    fn a_n_matches_sine_ratios() {
        for n in 2..=20 {
            let pf = pf_data::<f64>(&dynkin(Series::A, n).unwrap()).unwrap();
            assert!(pf.residual < 1e-12, "A_{n} residual {}", pf.residual);
            for j in 1..=n {
                assert!(
                    (pf.mu[j - 1] - sine_ratio(n, j)).abs() < 1e-12,
                    "A_{n} vertex {j}"
                );
            }
        }
    }

    #[test]
    fn jones_index_examples() {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((jones_index::<f64>(&dynkin(Series::A, 3).unwrap()).unwrap() - 2.0).abs() < 1e-12);
        assert!(
            (jones_index::<f64>(&dynkin(Series::A, 4).unwrap()).unwrap() - phi * phi).abs() < 1e-12
        );
        assert!((jones_index::<f64>(&dynkin(Series::A, 2).unwrap()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn built_in_residuals() {
        for name in ["A7", "D4", "D5", "D9", "E6", "E7", "E8"] {
            let g = dynkin_by_name(name).unwrap();
            let pf = pf_data::<f64>(&g).unwrap();
            assert!(pf.residual < 1e-12, "{name}: {}", pf.residual);
            assert!(pf.beta * pf.beta >= 1.0);
        }
    }

    #[test]
    fn f32_pf_is_close() {
        let pf = pf_data::<f32>(&dynkin(Series::A, 3).unwrap()).unwrap();
        assert!((pf.beta - 2f32.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn json_round_trip() {
        let g = dynkin(Series::E, 6).unwrap();
        let back = Graph::from_json(&g.to_json()).unwrap();
        assert_eq!(g, back);
    }
}
