//! Matrix product states and operators with periodic boundary, the
//! connection-to-tensor map and projector MPOs built from connection
//! families.
//!
//! A [`Tensor4`] entry `b[j, k, l, m]` has virtual legs `j` (in) and `k`
//! (out) and physical legs `l` (out) and `m` (in). A periodic MPO acts by
//!
//! ```text
//! <l_1 .. l_n| P |m_1 .. m_n> = Tr(b^{l_1 m_1} ... b^{l_n m_n})
//! ```

use std::collections::BTreeMap;

use nalgebra::ComplexField;
use num_traits::{One, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::connection::{BiUnitaryConnection, ConnectionFamily};
use crate::error::{Error, Result};
use crate::graph::PfData;
use crate::linalg::{random_cx, CMatrix, CVector};
use crate::scalar::{Cx, Real};

/// Dense materialization limit on the number of basis strings.
pub const DENSE_LIMIT: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T: Real> {
    pub left: usize,
    pub right: usize,
    pub phys_out: usize,
    pub phys_in: usize,
    data: Vec<Cx<T>>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(left: usize, right: usize, phys_out: usize, phys_in: usize) -> Result<Self> {
        if left == 0 || right == 0 || phys_out == 0 || phys_in == 0 {
            return Err(Error::Parameter(
                "tensor index sets must be nonempty".into(),
            ));
        }
        Ok(Tensor4 {
            left,
            right,
            phys_out,
            phys_in,
            data: vec![Cx::zero(); left * right * phys_out * phys_in],
        })
    }

    /// `b[j,k,l,m] = δ_jk δ_lm`.
    pub fn identity(bond: usize, phys: usize) -> Result<Self> {
        let mut t = Self::zeros(bond, bond, phys, phys)?;
        for a in 0..bond {
            for p in 0..phys {
                *t.get_mut(a, a, p, p) = Cx::one();
            }
        }
        Ok(t)
    }

    pub fn random(
        rng: &mut ChaCha8Rng,
        left: usize,
        right: usize,
        po: usize,
        pi: usize,
    ) -> Result<Self> {
        let mut t = Self::zeros(left, right, po, pi)?;
        for z in t.data.iter_mut() {
            *z = random_cx(rng);
        }
        Ok(t)
    }

    #[inline]
    fn idx(&self, j: usize, k: usize, l: usize, m: usize) -> usize {
        ((j * self.right + k) * self.phys_out + l) * self.phys_in + m
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize, l: usize, m: usize) -> Cx<T> {
        self.data[self.idx(j, k, l, m)]
    }

    #[inline]
    pub fn get_mut(&mut self, j: usize, k: usize, l: usize, m: usize) -> &mut Cx<T> {
        let i = self.idx(j, k, l, m);
        &mut self.data[i]
    }

    /// Virtual matrix `b^{lm}`.
    pub fn matrix(&self, l: usize, m: usize) -> CMatrix<T> {
        CMatrix::from_fn(self.left, self.right, |j, k| self.get(j, k, l, m))
    }

    /// `sum_p b^{pp}`; requires equal physical dimensions.
    pub fn transfer(&self) -> Result<CMatrix<T>> {
        if self.phys_in != self.phys_out {
            return Err(Error::Parameter(
                "transfer matrix needs square physical legs".into(),
            ));
        }
        let mut t = CMatrix::zeros(self.left, self.right);
        for p in 0..self.phys_in {
            t += self.matrix(p, p);
        }
        Ok(t)
    }

    pub fn scaled(&self, s: Cx<T>) -> Self {
        let mut t = self.clone();
        for z in t.data.iter_mut() {
            *z *= s;
        }
        t
    }

    /// Two sites fused into one; physical legs become pairs `(first, second)`.
    pub fn fuse(&self, next: &Self) -> Result<Self> {
        if self.right != next.left {
            return Err(Error::Parameter("virtual dimensions do not match".into()));
        }
        let (po, pi) = (self.phys_out * next.phys_out, self.phys_in * next.phys_in);
        let mut t = Self::zeros(self.left, next.right, po, pi)?;
        for j in 0..self.left {
            for b in 0..self.right {
                for l1 in 0..self.phys_out {
                    for m1 in 0..self.phys_in {
                        let x = self.get(j, b, l1, m1);
                        if x == Cx::zero() {
                            continue;
                        }
                        for k in 0..next.right {
                            for l2 in 0..next.phys_out {
                                for m2 in 0..next.phys_in {
                                    let y = next.get(b, k, l2, m2);
                                    if y != Cx::zero() {
                                        *t.get_mut(
                                            j,
                                            k,
                                            l1 * next.phys_out + l2,
                                            m1 * next.phys_in + m2,
                                        ) += x * y;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(t)
    }

    /// Restriction to the given virtual indices on both sides.
    pub fn restrict_virtual(&self, keep: &[usize]) -> Result<Self> {
        let mut t = Self::zeros(keep.len(), keep.len(), self.phys_out, self.phys_in)?;
        for (a, &j) in keep.iter().enumerate() {
            for (b, &k) in keep.iter().enumerate() {
                for l in 0..self.phys_out {
                    for m in 0..self.phys_in {
                        *t.get_mut(a, b, l, m) = self.get(j, k, l, m);
                    }
                }
            }
        }
        Ok(t)
    }

    /// Block-diagonal direct sum in the virtual legs.
    pub fn direct_sum(parts: &[Self]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::Parameter("empty direct sum".into()));
        };
        if parts.iter().any(|p| {
            p.phys_in != first.phys_in || p.phys_out != first.phys_out || p.left != p.right
        }) {
            return Err(Error::Parameter(
                "direct sum needs square blocks on equal physical legs".into(),
            ));
        }
        let d: usize = parts.iter().map(|p| p.left).sum();
        let mut t = Self::zeros(d, d, first.phys_out, first.phys_in)?;
        let mut off = 0;
        for p in parts {
            for j in 0..p.left {
                for k in 0..p.right {
                    for l in 0..p.phys_out {
                        for m in 0..p.phys_in {
                            *t.get_mut(off + j, off + k, l, m) = p.get(j, k, l, m);
                        }
                    }
                }
            }
            off += p.left;
        }
        Ok(t)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        if self.data.len() != other.data.len() {
            return T::max_value().unwrap_or_else(T::one);
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).modulus())
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }

    pub fn to_json(&self) -> Tensor4Json {
        let mut entries = Vec::new();
        for j in 0..self.left {
            for k in 0..self.right {
                for l in 0..self.phys_out {
                    for m in 0..self.phys_in {
                        let z = self.get(j, k, l, m);
                        if z != Cx::zero() {
                            entries.push((j, k, l, m, z.re.as_f64(), z.im.as_f64()));
                        }
                    }
                }
            }
        }
        Tensor4Json {
            left: self.left,
            right: self.right,
            phys_out: self.phys_out,
            phys_in: self.phys_in,
            entries,
        }
    }
}

/// Sparse dump: `(j, k, l, m, re, im)` per nonzero entry.
#[derive(Clone, Debug, Serialize)]
pub struct Tensor4Json {
    pub left: usize,
    pub right: usize,
    pub phys_out: usize,
    pub phys_in: usize,
    pub entries: Vec<(usize, usize, usize, usize, f64, f64)>,
}

// ---------------------------------------------------------------------------
// MPS

/// Site tensor `a^l_{jk}` of an MPS.
#[derive(Clone, Debug)]
pub struct Tensor3<T: Real> {
    /// One `left x right` matrix per physical label.
    pub mats: Vec<CMatrix<T>>,
}

#[derive(Clone, Debug)]
pub struct Mps<T: Real> {
    pub sites: Vec<Tensor3<T>>,
}

impl<T: Real> Mps<T> {
    pub fn new(sites: Vec<Tensor3<T>>) -> Result<Self> {
        if sites.is_empty() || sites.iter().any(|s| s.mats.is_empty()) {
            return Err(Error::Parameter("MPS needs nonempty sites".into()));
        }
        let n = sites.len();
        for i in 0..n {
            let (a, b) = (&sites[i], &sites[(i + 1) % n]);
            let (r, c) = (a.mats[0].nrows(), a.mats[0].ncols());
            if a.mats.iter().any(|m| m.nrows() != r || m.ncols() != c) || b.mats[0].nrows() != c {
                return Err(Error::Parameter(format!(
                    "virtual dimensions mismatch at site {i}"
                )));
            }
        }
        Ok(Mps { sites })
    }

    /// `Tr(a^{l_1} ... a^{l_n})`.
    pub fn amplitude(&self, labels: &[usize]) -> Result<Cx<T>> {
        if labels.len() != self.sites.len() {
            return Err(Error::Parameter(format!(
                "expected {} labels, got {}",
                self.sites.len(),
                labels.len()
            )));
        }
        let mut acc: Option<CMatrix<T>> = None;
        for (s, &l) in self.sites.iter().zip(labels) {
            let m = s
                .mats
                .get(l)
                .ok_or_else(|| Error::Parameter(format!("label {l} out of range")))?;
            acc = Some(match acc {
                None => m.clone(),
                Some(a) => a * m,
            });
        }
        Ok(acc.expect("nonempty").trace())
    }
}

// ---------------------------------------------------------------------------
// MPO

#[derive(Clone, Debug)]
pub struct Mpo<T: Real> {
    pub sites: Vec<Tensor4<T>>,
}

impl<T: Real> Mpo<T> {
    pub fn new(sites: Vec<Tensor4<T>>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Parameter("MPO length must be positive".into()));
        }
        let n = sites.len();
        for i in 0..n {
            if sites[i].right != sites[(i + 1) % n].left {
                return Err(Error::Parameter(format!(
                    "virtual dimensions mismatch after site {i}"
                )));
            }
        }
        Ok(Mpo { sites })
    }

    pub fn homogeneous(site: Tensor4<T>, k: usize) -> Result<Self> {
        Self::new(vec![site; k])
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn dim_in(&self) -> usize {
        self.sites.iter().map(|s| s.phys_in).product()
    }

    pub fn dim_out(&self) -> usize {
        self.sites.iter().map(|s| s.phys_out).product()
    }

    /// Ambient dimension as a float, for lengths where the product overflows.
    pub fn log_dim_in(&self) -> f64 {
        self.sites.iter().map(|s| (s.phys_in as f64).ln()).sum()
    }

    /// Matrix-vector product, site by site, never forming the matrix.
    /// Basis strings are little-endian in the first site (site 0 is the
    /// most significant digit).
    pub fn apply(&self, v: &CVector<T>) -> Result<CVector<T>> {
        if v.len() != self.dim_in() {
            return Err(Error::Parameter(format!(
                "vector has dimension {}, MPO expects {}",
                v.len(),
                self.dim_in()
            )));
        }
        let d0 = self.sites[0].left;
        // block (a0, a) holds [out_prefix][in_suffix]; inactive blocks are zero
        let mut da = d0;
        let mut po = 1usize;
        let mut pi = v.len();
        let mut state: Vec<Option<Vec<Cx<T>>>> = vec![None; d0 * d0];
        for a in 0..d0 {
            state[a * d0 + a] = Some(v.as_slice().to_vec());
        }
        for site in &self.sites {
            let rest = pi / site.phys_in;
            let db = site.right;
            let npo = po * site.phys_out;
            // nonzero entries grouped by (a, i)
            let mut nz: Vec<Vec<(usize, usize, Cx<T>)>> = vec![Vec::new(); da * site.phys_in];
            for a in 0..da {
                for b in 0..db {
                    for o in 0..site.phys_out {
                        for i in 0..site.phys_in {
                            let w = site.get(a, b, o, i);
                            if w != Cx::zero() {
                                nz[a * site.phys_in + i].push((b, o, w));
                            }
                        }
                    }
                }
            }
            let mut next: Vec<Option<Vec<Cx<T>>>> = vec![None; d0 * db];
            for a0 in 0..d0 {
                for a in 0..da {
                    let Some(block) = &state[a0 * da + a] else {
                        continue;
                    };
                    for op in 0..po {
                        for i in 0..site.phys_in {
                            let entries = &nz[a * site.phys_in + i];
                            if entries.is_empty() {
                                continue;
                            }
                            let off = op * pi + i * rest;
                            let chunk = &block[off..off + rest];
                            for &(b, o, w) in entries {
                                let dst = next[a0 * db + b]
                                    .get_or_insert_with(|| vec![Cx::zero(); npo * rest]);
                                let nb = (op * site.phys_out + o) * rest;
                                for (t, z) in dst[nb..nb + rest].iter_mut().zip(chunk) {
                                    *t += w * *z;
                                }
                            }
                        }
                    }
                }
            }
            state = next;
            da = db;
            po = npo;
            pi = rest;
        }
        let mut out = CVector::<T>::zeros(po);
        for a in 0..d0 {
            if let Some(block) = &state[a * da + a] {
                for (o, z) in out.iter_mut().zip(block) {
                    *o += *z;
                }
            }
        }
        Ok(out)
    }

    /// `Tr(P)` as the trace of a product of transfer matrices.
    pub fn trace(&self) -> Result<Cx<T>> {
        let mut acc: Option<CMatrix<T>> = None;
        for s in &self.sites {
            let t = s.transfer()?;
            acc = Some(match acc {
                None => t,
                Some(a) => a * t,
            });
        }
        Ok(acc.expect("nonempty").trace())
    }

    /// `self · other` as an MPO with product bond dimensions.
    pub fn multiply(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Parameter("MPO lengths differ".into()));
        }
        let mut sites = Vec::with_capacity(self.len());
        for (p, q) in self.sites.iter().zip(&other.sites) {
            if p.phys_in != q.phys_out {
                return Err(Error::Parameter("physical dimensions do not match".into()));
            }
            let mut t = Tensor4::zeros(p.left * q.left, p.right * q.right, p.phys_out, q.phys_in)?;
            for a1 in 0..p.left {
                for b1 in 0..p.right {
                    for o in 0..p.phys_out {
                        for x in 0..p.phys_in {
                            let u = p.get(a1, b1, o, x);
                            if u == Cx::zero() {
                                continue;
                            }
                            for a2 in 0..q.left {
                                for b2 in 0..q.right {
                                    for i in 0..q.phys_in {
                                        let w = q.get(a2, b2, x, i);
                                        if w != Cx::zero() {
                                            *t.get_mut(
                                                a1 * q.left + a2,
                                                b1 * q.right + b2,
                                                o,
                                                i,
                                            ) += u * w;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            sites.push(t);
        }
        Self::new(sites)
    }

    /// Dense matrix by applying to basis vectors.
    pub fn to_dense(&self) -> Result<CMatrix<T>> {
        let (n_in, n_out) = (self.dim_in(), self.dim_out());
        if self.log_dim_in() > (DENSE_LIMIT as f64).ln() + 1e-9 || n_out > DENSE_LIMIT {
            return Err(Error::Size(format!(
                "dense realization of {n_out}x{n_in} exceeds the limit of {DENSE_LIMIT}"
            )));
        }
        let mut m = CMatrix::<T>::zeros(n_out, n_in);
        for c in 0..n_in {
            let mut e = CVector::<T>::zeros(n_in);
            e[c] = Cx::one();
            m.set_column(c, &self.apply(&e)?);
        }
        Ok(m)
    }

    /// Basis strings that can carry a nonzero matrix element, on the
    /// input and output side. Everything outside is exactly zero.
    pub fn support(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let side = |input: bool| -> Vec<Vec<usize>> {
            // reachable (a0, a, prefix)
            let d0 = self.sites[0].left;
            let mut frontier: Vec<(usize, usize, Vec<usize>)> =
                (0..d0).map(|a| (a, a, Vec::new())).collect();
            for s in &self.sites {
                let (pd, od) = if input {
                    (s.phys_in, s.phys_out)
                } else {
                    (s.phys_out, s.phys_in)
                };
                let mut next = Vec::new();
                let mut seen = std::collections::BTreeSet::new();
                for (a0, a, prefix) in &frontier {
                    for p in 0..pd {
                        for b in 0..s.right {
                            let hit = (0..od).any(|o| {
                                let z = if input {
                                    s.get(*a, b, o, p)
                                } else {
                                    s.get(*a, b, p, o)
                                };
                                z != Cx::zero()
                            });
                            if hit {
                                let mut q = prefix.clone();
                                q.push(p);
                                if seen.insert((*a0, b, q.clone())) {
                                    next.push((*a0, b, q));
                                }
                            }
                        }
                    }
                }
                frontier = next;
            }
            let mut out: Vec<Vec<usize>> = frontier
                .into_iter()
                .filter(|(a0, a, _)| a0 == a)
                .map(|(_, _, p)| p)
                .collect();
            out.sort();
            out.dedup();
            out
        };
        (side(true), side(false))
    }

    fn string_index(&self, s: &[usize], input: bool) -> usize {
        s.iter().zip(&self.sites).fold(0, |acc, (&p, site)| {
            acc * if input { site.phys_in } else { site.phys_out } + p
        })
    }

    /// Dense matrix restricted to the union of the input and output supports
    /// (square when physical legs agree). Returns the matrix and the global
    /// basis indices of its rows/columns.
    pub fn to_dense_on_support(&self) -> Result<(CMatrix<T>, Vec<usize>)> {
        let (sin, sout) = self.support();
        let mut idx: Vec<usize> = sin
            .iter()
            .map(|s| self.string_index(s, true))
            .chain(sout.iter().map(|s| self.string_index(s, false)))
            .collect();
        idx.sort();
        idx.dedup();
        if idx.len() > DENSE_LIMIT {
            return Err(Error::Size(format!(
                "supported subspace has {} strings, limit is {DENSE_LIMIT}",
                idx.len()
            )));
        }
        if self.dim_in() != self.dim_out() {
            return Err(Error::Parameter(
                "support restriction needs equal physical legs".into(),
            ));
        }
        let n = idx.len();
        let mut m = CMatrix::<T>::zeros(n, n);
        let mut e = CVector::<T>::zeros(self.dim_in());
        for (c, &gi) in idx.iter().enumerate() {
            e[gi] = Cx::one();
            let col = self.apply(&e)?;
            e[gi] = Cx::zero();
            for (r, &go) in idx.iter().enumerate() {
                m[(r, c)] = col[go];
            }
        }
        Ok((m, idx))
    }

    /// Single matrix element `Tr(b^{l_1 m_1} ... b^{l_n m_n})`.
    pub fn element(&self, outs: &[usize], ins: &[usize]) -> Cx<T> {
        let mut acc: Option<CMatrix<T>> = None;
        for ((s, &l), &m) in self.sites.iter().zip(outs).zip(ins) {
            let x = s.matrix(l, m);
            acc = Some(match acc {
                None => x,
                Some(a) => a * x,
            });
        }
        acc.map(|a| a.trace()).unwrap_or_else(Cx::zero)
    }
}

/// Reference dense matrix by enumerating every string pair and multiplying
/// virtual matrices. Independent of [`Mpo::apply`].
pub fn dense_bruteforce<T: Real>(p: &Mpo<T>) -> Result<CMatrix<T>> {
    let (n_in, n_out) = (p.dim_in(), p.dim_out());
    if n_in > DENSE_LIMIT || n_out > DENSE_LIMIT {
        return Err(Error::Size("brute-force realization too large".into()));
    }
    let digits = |mut x: usize, dims: &[usize]| -> Vec<usize> {
        let mut d = vec![0; dims.len()];
        for i in (0..dims.len()).rev() {
            d[i] = x % dims[i];
            x /= dims[i];
        }
        d
    };
    let din: Vec<usize> = p.sites.iter().map(|s| s.phys_in).collect();
    let dout: Vec<usize> = p.sites.iter().map(|s| s.phys_out).collect();
    Ok(CMatrix::from_fn(n_out, n_in, |r, c| {
        p.element(&digits(r, &dout), &digits(c, &din))
    }))
}

/// Random MPO with fixed seed, for oracle comparisons.
pub fn random_mpo<T: Real>(seed: u64, k: usize, bond: usize, phys: usize) -> Result<Mpo<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = (0..k)
        .map(|_| Tensor4::random(&mut rng, bond, bond, phys, phys))
        .collect::<Result<Vec<_>>>()?;
    Mpo::new(sites)
}

// ---------------------------------------------------------------------------
// Connections as tensors

/// Global numbering of horizontal edges: `(x, y, a)` in pair order.
pub fn horizontal_edge_list<T: Real>(c: &BiUnitaryConnection<T>) -> Vec<(usize, usize, usize)> {
    c.horizontal()
        .pairs()
        .flat_map(|((x, y), d)| (0..d).map(move |a| (x, y, a)))
        .collect()
}

/// Cell `(j,k,l,m)` becomes `b[top, bottom, right, left]` scaled by
/// `(μ(j) μ(m) / (μ(k) μ(l)))^{1/4}`: virtual legs are horizontal edges,
/// physical legs are vertical edge ids.
pub fn connection_to_tensor<T: Real>(
    c: &BiUnitaryConnection<T>,
    pf: &PfData<T>,
) -> Result<Tensor4<T>> {
    let hl = horizontal_edge_list(c);
    let hidx: BTreeMap<(usize, usize, usize), usize> =
        hl.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let ne = c.vertical().edges().len();
    let mut t = Tensor4::zeros(hl.len(), hl.len(), ne, ne)?;
    let mu = &pf.mu;
    let quarter = T::lit(0.25);
    for (&key, block) in c.cells() {
        let (j, k, el, er) = key;
        let (l, m) = c.corners(key).expect("validated cell");
        let w = (mu[j] * mu[m] / (mu[k] * mu[l])).powf(quarter);
        for a in 0..block.nrows() {
            for b in 0..block.ncols() {
                let z = block[(a, b)];
                if z != Cx::zero() {
                    *t.get_mut(hidx[&(j, k, a)], hidx[&(l, m, b)], er, el) =
                        z * Cx::new(w, T::zero());
                }
            }
        }
    }
    Ok(t)
}

/// Inverse of [`connection_to_tensor`] on the cell support of `c`.
pub fn tensor_to_connection<T: Real>(
    t: &Tensor4<T>,
    c: &BiUnitaryConnection<T>,
    pf: &PfData<T>,
) -> Result<BiUnitaryConnection<T>> {
    let hl = horizontal_edge_list(c);
    let hidx: BTreeMap<(usize, usize, usize), usize> =
        hl.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let mu = &pf.mu;
    let quarter = T::lit(0.25);
    let mut cells = BTreeMap::new();
    for key in c.admissible_cells() {
        let (j, k, el, er) = key;
        let (l, m) = c.corners(key).expect("admissible");
        let w = (mu[j] * mu[m] / (mu[k] * mu[l])).powf(quarter);
        let block = CMatrix::from_fn(
            c.horizontal().dim(j, k),
            c.horizontal().dim(l, m),
            |a, b| t.get(hidx[&(j, k, a)], hidx[&(l, m, b)], er, el) / Cx::new(w, T::zero()),
        );
        if block.iter().any(|z| *z != Cx::zero()) {
            cells.insert(key, block);
        }
    }
    BiUnitaryConnection::new(c.vertical().clone(), c.horizontal().clone(), cells)
}

/// PMPO site of one family member: two stacked cells, virtual legs
/// restricted to horizontal edges leaving the star's bipartition class.
/// Physical dimension is (number of vertical edges)^2.
pub fn member_site<T: Real>(c: &BiUnitaryConnection<T>, pf: &PfData<T>) -> Result<Tensor4<T>> {
    let colour = c
        .vertical()
        .bipartition()
        .ok_or_else(|| Error::Structural("vertical graph is not bipartite".into()))?;
    let star_class = colour[c.vertical().star()];
    let t = connection_to_tensor(c, pf)?;
    let two = t.fuse(&t)?;
    let keep: Vec<usize> = horizontal_edge_list(c)
        .iter()
        .enumerate()
        .filter(|(_, &(x, _, _))| colour[x] == star_class)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::Structural(
            "member has no horizontal edge from the star's class".into(),
        ));
    }
    two.restrict_virtual(&keep)
}

/// Projector MPO `sum_a (d_a / sum_b d_b^2) O_a` over the even part of a
/// closed family, as one block-diagonal homogeneous site of length `k`.
pub fn pmpo<T: Real>(f: &ConnectionFamily<T>, k: usize) -> Result<Mpo<T>> {
    if !f.closed {
        return Err(Error::Refused("family is not closed".into()));
    }
    if k == 0 {
        return Err(Error::Parameter("PMPO length must be at least 1".into()));
    }
    let even = f.even_part()?;
    let g = even.members[0].connection.vertical();
    let pf = crate::graph::pf_data::<T>(g)?;
    let total = even.global_index();
    let inv_k = T::one() / T::lit(k as f64);
    let mut blocks = Vec::with_capacity(even.len());
    for m in &even.members {
        let w = (m.dimension / total).powf(inv_k);
        blocks.push(member_site(&m.connection, &pf)?.scaled(Cx::new(w, T::zero())));
    }
    Mpo::homogeneous(Tensor4::direct_sum(&blocks)?, k)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RankReport {
    pub trace: f64,
    pub imag: f64,
    pub nearest: i64,
    pub distance: f64,
    /// Distance to the nearest integer exceeded 1e-4.
    pub flagged: bool,
}

pub const RANK_FLAG: f64 = 1e-4;

pub fn pmpo_rank<T: Real>(f: &ConnectionFamily<T>, k: usize) -> Result<RankReport> {
    let tr = pmpo(f, k)?.trace()?;
    let t = tr.re.as_f64();
    let nearest = t.round();
    let distance = (t - nearest).abs();
    Ok(RankReport {
        trace: t,
        imag: tr.im.as_f64(),
        nearest: nearest as i64,
        distance,
        flagged: distance > RANK_FLAG,
    })
}

/// `max |P^2 - P|` and `max |P - P^*|` on the supported dense block.
pub fn projector_residuals<T: Real>(p: &Mpo<T>) -> Result<(f64, f64)> {
    let (m, _) = p.to_dense_on_support()?;
    let sq = max_abs_f64(&(&m * &m - &m));
    let herm = max_abs_f64(&(&m - m.adjoint()));
    Ok((sq, herm))
}

fn max_abs_f64<T: Real>(m: &CMatrix<T>) -> f64 {
    crate::linalg::max_abs(m).as_f64()
}

/// Largest `|P^2 v - P v| / |v|` over random unit vectors, applied without
/// densifying.
pub fn projector_spot_check<T: Real>(p: &Mpo<T>, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.dim_in();
    let mut worst = 0f64;
    for _ in 0..samples {
        let v = CVector::<T>::from_fn(n, |_, _| random_cx(&mut rng));
        let norm = v.norm();
        let v = v / Cx::new(norm, T::zero());
        let pv = p.apply(&v)?;
        let ppv = p.apply(&pv)?;
        let r = (ppv - pv).norm().as_f64();
        if r > worst {
            worst = r;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::{connection_family, flat_connection_a_n, DecomposeOptions};
    use crate::graph::{dynkin, pf_data, Series};
    use crate::path_algebra::higher_relative_commutant_dim;
    use num_traits::ToPrimitive;

    fn family(n: usize) -> ConnectionFamily<f64> {
        let c = flat_connection_a_n::<f64>(n).unwrap();
        connection_family(&c, 16, &DecomposeOptions::default()).unwrap()
    }

    #[test]
    fn mps_identity_and_oracle() {
        let id = Tensor3 {
            mats: vec![CMatrix::<f64>::identity(3, 3); 2],
        };
        let m = Mps::new(vec![id.clone(), id.clone(), id]).unwrap();
        assert_eq!(m.amplitude(&[0, 1, 1]).unwrap(), Cx::new(3.0, 0.0));
        assert!(matches!(m.amplitude(&[0, 5, 1]), Err(Error::Parameter(_))));
        assert!(matches!(m.amplitude(&[0]), Err(Error::Parameter(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let site = |rng: &mut ChaCha8Rng| Tensor3 {
            mats: (0..2)
                .map(|_| crate::linalg::random_matrix::<f64>(rng, 2, 2))
                .collect(),
        };
        let (s1, s2) = (site(&mut rng), site(&mut rng));
        let m = Mps::new(vec![s1.clone(), s2.clone()]).unwrap();
        for l1 in 0..2 {
            for l2 in 0..2 {
                let mut z = Cx::zero();
                for a in 0..2 {
                    for b in 0..2 {
                        z += s1.mats[l1][(a, b)] * s2.mats[l2][(b, a)];
                    }
                }
                assert!((m.amplitude(&[l1, l2]).unwrap() - z).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_mpo() {
        let p = Mpo::homogeneous(Tensor4::<f64>::identity(1, 3).unwrap(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = CVector::<f64>::from_fn(27, |_, _| random_cx(&mut rng));
        assert!((p.apply(&v).unwrap() - &v).norm() < 1e-14);
        assert_eq!(p.trace().unwrap(), Cx::new(27.0, 0.0));
        let p2 = Mpo::homogeneous(Tensor4::<f64>::identity(2, 2).unwrap(), 3).unwrap();
        assert_eq!(p2.trace().unwrap(), Cx::new(16.0, 0.0));
    }

    #[test]
    fn apply_matches_bruteforce_and_is_linear() {
        let p = random_mpo::<f64>(11, 2, 3, 3).unwrap();
        let dense = dense_bruteforce(&p).unwrap();
        assert!(crate::linalg::max_abs(&(p.to_dense().unwrap() - &dense)) < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = CVector::<f64>::from_fn(9, |_, _| random_cx(&mut rng));
        let w = CVector::<f64>::from_fn(9, |_, _| random_cx(&mut rng));
        let alpha = Cx::new(0.3, -1.2);
        let lhs = p.apply(&(&v * alpha + &w)).unwrap();
        let rhs = p.apply(&v).unwrap() * alpha + p.apply(&w).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);
        assert!(matches!(
            p.apply(&CVector::zeros(8)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn trace_and_multiply_against_dense() {
        let p = random_mpo::<f64>(5, 3, 2, 2).unwrap();
        let d = dense_bruteforce(&p).unwrap();
        assert!((p.trace().unwrap() - d.trace()).norm() < 1e-10);
        let q = random_mpo::<f64>(6, 2, 2, 3).unwrap();
        let pq = q.multiply(&q).unwrap();
        let dq = dense_bruteforce(&q).unwrap();
        assert!((pq.trace().unwrap() - (&dq * &dq).trace()).norm() < 1e-10);
        assert!(crate::linalg::max_abs(&(dense_bruteforce(&pq).unwrap() - &dq * &dq)) < 1e-10);
        let r = random_mpo::<f64>(7, 2, 2, 3).unwrap();
        let s = random_mpo::<f64>(8, 2, 1, 3).unwrap();
        let left = dense_bruteforce(&q.multiply(&r).unwrap().multiply(&s).unwrap()).unwrap();
        let right = dense_bruteforce(&q.multiply(&r.multiply(&s).unwrap()).unwrap()).unwrap();
        assert!(crate::linalg::max_abs(&(left - right)) < 1e-10);
        let id = Mpo::homogeneous(Tensor4::<f64>::identity(1, 3).unwrap(), 2).unwrap();
        let iq = id.multiply(&q).unwrap();
        assert!(iq
            .sites
            .iter()
            .zip(&q.sites)
            .all(|(a, b)| a.max_abs_diff(b) < 1e-15));
    }

    #[test]
    fn tensor_weights_and_dimensions() {
        let c2 = flat_connection_a_n::<f64>(2).unwrap();
        let pf2 = pf_data::<f64>(c2.vertical()).unwrap();
        let t2 = connection_to_tensor(&c2, &pf2).unwrap();
        for (&key, block) in c2.cells() {
            let (j, k, el, er) = key;
            let (l, m) = c2.corners(key).unwrap();
            let hl = horizontal_edge_list(&c2);
            let a = hl.iter().position(|&e| e == (j, k, 0)).unwrap();
            let b = hl.iter().position(|&e| e == (l, m, 0)).unwrap();
            assert!((t2.get(a, b, er, el) - block[(0, 0)]).norm() < 1e-15);
        }
        let c5 = flat_connection_a_n::<f64>(5).unwrap();
        let pf5 = pf_data::<f64>(c5.vertical()).unwrap();
        let t5 = connection_to_tensor(&c5, &pf5).unwrap();
        assert_eq!(t5.phys_in, 4);
        let back = tensor_to_connection(&t5, &c5, &pf5).unwrap();
        assert!(back.check_biunitarity().unwrap().max < 1e-10);
        assert!(back.distance(&c5) < 1e-12);
    }

    #[test]
    fn a5_rank_identity() {
        let f = family(5);
        for k in 1..=8u32 {
            let r = pmpo_rank(&f, k as usize).unwrap();
            let expect = (3f64.powi(k as i32 - 1) + 1.0) / 2.0;
            assert!((r.trace - expect).abs() < 1e-6, "k = {k}: {}", r.trace);
            assert!(!r.flagged);
        }
        let p = pmpo(&f, 3).unwrap();
        assert_eq!(p.dim_in(), 4usize.pow(6));
        let r6 = pmpo_rank(&f, 6).unwrap();
        assert_eq!(r6.nearest, 122);
    }

    #[test]
    fn rank_matches_path_counts_on_a3_a4() {
        for n in [3, 4] {
            let f = family(n);
            let g = dynkin(Series::A, n).unwrap();
            for k in 1..=5 {
                let r = pmpo_rank(&f, k).unwrap();
                let oracle = higher_relative_commutant_dim(&g, k).to_f64().unwrap();
                assert!(
                    (r.trace - oracle).abs() < 1e-6,
                    "A_{n} k = {k}: {} vs {oracle}",
                    r.trace
                );
            }
        }
    }

    #[test]
    fn projector_dense() {
        for n in [3, 4, 5] {
            let f = family(n);
            for k in 1..=3 {
                let p = pmpo(&f, k).unwrap();
                let (sq, herm) = projector_residuals(&p).unwrap();
                assert!(sq < 1e-8 && herm < 1e-10, "A_{n} k = {k}: {sq:e} {herm:e}");
            }
        }
    }

    #[test]
    fn support_covers_all_nonzero_entries() {
        let f = family(3);
        let p = pmpo(&f, 2).unwrap();
        let full = p.to_dense().unwrap();
        let (m, idx) = p.to_dense_on_support().unwrap();
        let mut copy = full.clone();
        for (r, &gr) in idx.iter().enumerate() {
            for (c, &gc) in idx.iter().enumerate() {
                assert!((full[(gr, gc)] - m[(r, c)]).norm() < 1e-12);
                copy[(gr, gc)] = Cx::zero();
            }
        }
        assert!(crate::linalg::max_abs(&copy) < 1e-14);
    }

    #[test]
    fn trivial_family_on_a2() {
        let f = family(2);
        let p = pmpo(&f, 2).unwrap();
        assert_eq!(p.dim_in(), 1);
        assert!((p.trace().unwrap() - Cx::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn unclosed_family_refused() {
        let mut f = family(3);
        f.closed = false;
        assert!(matches!(pmpo(&f, 2), Err(Error::Refused(_))));
    }

    #[test]
    fn dense_limit() {
        let p = random_mpo::<f64>(1, 8, 1, 4).unwrap();
        assert!(matches!(p.to_dense(), Err(Error::Size(_))));
    }
}
