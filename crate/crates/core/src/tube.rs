//! F-symbols, Ocneanu's tube algebra and its central decomposition.
//!
//! Multiplicity-free fusion only. The F convention is
//!
//! ```text
//! ((a b)_e c)_d = sum_f F^{abc}_d[e, f] (a (b c)_f)_d
//! ```
//!
//! Basis tubes are `(x, g, y, p)` with `p ∈ g⊗x` and `p ∈ y⊗g`, ordered
//! lexicographically.

use std::collections::{BTreeMap, HashMap};

use nalgebra::ComplexField;
use num_traits::{One, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::connection::{
    compose_horizontal, hom_space, BiUnitaryConnection, ComposeIndex, ConnectionFamily, Intertwiner,
};
use crate::error::{Error, Result};
use crate::fusion::FusionRing;
use crate::linalg::{null_space, random_cx, CMatrix, CVector, RankPolicy};
use crate::modular::{verlinde, ModularData};
use crate::scalar::{Cx, Real};

type Six = (usize, usize, usize, usize, usize, usize);

#[derive(Clone, Debug)]
pub struct FSymbolData<T: Real> {
    ring: FusionRing,
    f: HashMap<Six, Cx<T>>,
}

impl<T: Real> FSymbolData<T> {
    pub fn new(ring: FusionRing, f: HashMap<Six, Cx<T>>) -> Result<Self> {
        if !ring.is_multiplicity_free() {
            return Err(Error::Structural(
                "F-symbols need multiplicity-free fusion".into(),
            ));
        }
        Ok(FSymbolData { ring, f })
    }

    pub fn ring(&self) -> &FusionRing {
        &self.ring
    }

    fn n(&self, a: usize, b: usize, c: usize) -> bool {
        self.ring.n(a, b, c) > 0
    }

    pub fn admissible(&self, (a, b, c, d, e, f): Six) -> bool {
        self.n(a, b, e) && self.n(e, c, d) && self.n(b, c, f) && self.n(a, f, d)
    }

    /// `F^{abc}_d[e, f]`, zero when not admissible.
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize, e: usize, f: usize) -> Cx<T> {
        self.f
            .get(&(a, b, c, d, e, f))
            .copied()
            .unwrap_or_else(Cx::zero)
    }

    pub fn entries(&self) -> &HashMap<Six, Cx<T>> {
        &self.f
    }

    /// `max |F^{fcd}_e[g,l] F^{abl}_e[f,k] - sum_h F^{abc}_g[f,h] F^{ahd}_e[g,k] F^{bcd}_k[h,l]|`.
    pub fn pentagon_residual(&self) -> T {
        let r = self.ring.rank();
        let fuse =
            |a: usize, b: usize| -> Vec<usize> { (0..r).filter(|&c| self.n(a, b, c)).collect() };
        let mut worst = T::zero();
        for a in 0..r {
            for b in 0..r {
                for f in fuse(a, b) {
                    for c in 0..r {
                        for g in fuse(f, c) {
                            for d in 0..r {
                                for e in fuse(g, d) {
                                    for l in fuse(c, d) {
                                        for k in fuse(b, l) {
                                            let lhs = self.get(f, c, d, e, g, l)
                                                * self.get(a, b, l, e, f, k);
                                            let mut rhs = Cx::zero();
                                            for h in 0..r {
                                                rhs += self.get(a, b, c, g, f, h)
                                                    * self.get(a, h, d, e, g, k)
                                                    * self.get(b, c, d, k, h, l);
                                            }
                                            let x = (lhs - rhs).modulus();
                                            if x > worst {
                                                worst = x;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        worst
    }

    /// Max unitarity residual of the blocks `F^{abc}_d`.
    pub fn unitarity_residual(&self) -> T {
        let r = self.ring.rank();
        let mut worst = T::zero();
        for a in 0..r {
            for b in 0..r {
                for c in 0..r {
                    for d in 0..r {
                        let es: Vec<usize> = (0..r)
                            .filter(|&e| self.n(a, b, e) && self.n(e, c, d))
                            .collect();
                        let fs: Vec<usize> = (0..r)
                            .filter(|&f| self.n(b, c, f) && self.n(a, f, d))
                            .collect();
                        if es.is_empty() && fs.is_empty() {
                            continue;
                        }
                        let m = CMatrix::from_fn(es.len(), fs.len(), |i, j| {
                            self.get(a, b, c, d, es[i], fs[j])
                        });
                        let x = crate::linalg::unitarity_residual(&m);
                        if x > worst {
                            worst = x;
                        }
                    }
                }
            }
        }
        worst
    }

    pub fn to_json(&self) -> FSymbolJson {
        let l = self.ring.labels();
        let mut f: Vec<FEntry> = self
            .f
            .iter()
            .filter(|(_, z)| **z != Cx::zero())
            .map(|(&(a, b, c, d, e, g), z)| FEntry {
                idx: [a, b, c, d, e, g].map(|i| l[i].clone()),
                re: z.re.as_f64(),
                im: z.im.as_f64(),
            })
            .collect();
        f.sort_by(|x, y| x.idx.cmp(&y.idx));
        FSymbolJson {
            ring: self.ring.clone(),
            f,
        }
    }

    pub fn from_json(j: &FSymbolJson) -> Result<Self> {
        let ring = j.ring.clone().validated()?;
        let mut f = HashMap::new();
        for e in &j.f {
            let mut idx = [0usize; 6];
            for (slot, name) in idx.iter_mut().zip(&e.idx) {
                *slot = ring
                    .index_of(name)
                    .ok_or_else(|| Error::Structural(format!("unknown label `{name}`")))?;
            }
            let [a, b, c, d, x, y] = idx;
            f.insert((a, b, c, d, x, y), Cx::new(T::lit(e.re), T::lit(e.im)));
        }
        Self::new(ring, f)
    }
}

/// F-symbol file: the fusion ring and a sparse list of coefficients
/// `[a, b, c, d, e, f]` with values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FSymbolJson {
    pub ring: FusionRing,
    pub f: Vec<FEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FEntry {
    pub idx: [String; 6],
    pub re: f64,
    pub im: f64,
}

/// Trivial associator on `Z/n`.
pub fn f_vec_zn<T: Real>(n: usize) -> Result<FSymbolData<T>> {
    let (ring, _) = crate::modular::vec_zn(n)?;
    let mut f = HashMap::new();
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let (e, g, d) = ((a + b) % n, (b + c) % n, (a + b + c) % n);
                f.insert((a, b, c, d, e, g), Cx::one());
            }
        }
    }
    FSymbolData::new(ring, f)
}

/// Fibonacci F-symbols in the unitary gauge.
pub fn f_fibonacci<T: Real>() -> FSymbolData<T> {
    let (ring, _) = crate::modular::fibonacci();
    let phi = (T::one() + T::lit(5.0).sqrt()) / T::lit(2.0);
    let mut f = HashMap::new();
    let data = FSymbolData::<T> {
        ring: ring.clone(),
        f: HashMap::new(),
    };
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                for d in 0..2 {
                    for e in 0..2 {
                        for g in 0..2 {
                            if data.admissible((a, b, c, d, e, g)) {
                                f.insert((a, b, c, d, e, g), Cx::one());
                            }
                        }
                    }
                }
            }
        }
    }
    let inv = T::one() / phi;
    let s = T::one() / phi.sqrt();
    f.insert((1, 1, 1, 1, 0, 0), Cx::new(inv, T::zero()));
    f.insert((1, 1, 1, 1, 0, 1), Cx::new(s, T::zero()));
    f.insert((1, 1, 1, 1, 1, 0), Cx::new(s, T::zero()));
    f.insert((1, 1, 1, 1, 1, 1), Cx::new(-inv, T::zero()));
    FSymbolData { ring, f }
}

/// `vec_zn(n)` / `vec_zN` or `fibonacci`.
pub fn f_symbols_builtin<T: Real>(name: &str) -> Result<FSymbolData<T>> {
    if name == "fibonacci" {
        return Ok(f_fibonacci());
    }
    let n = name
        .strip_prefix("vec_zn")
        .map(|r| r.trim_start_matches('(').trim_end_matches(')'))
        .or_else(|| name.strip_prefix("vec_z"))
        .and_then(|r| r.parse::<usize>().ok())
        .ok_or_else(|| Error::UnknownBuiltin(name.to_string()))?;
    f_vec_zn(n)
}

// ---------------------------------------------------------------------------
// Tube algebra

pub const PENTAGON_TOL: f64 = 1e-9;

type Sparse<T> = Vec<(usize, Cx<T>)>;

#[derive(Clone, Debug)]
pub struct TubeAlgebra<T: Real> {
    pub basis: Vec<(usize, usize, usize, usize)>,
    /// `mult[i][j]`: sparse expansion of `b_i · b_j`.
    mult: Vec<Vec<Sparse<T>>>,
    /// `b_i^*` as a sparse combination, extended antilinearly.
    star: Vec<Sparse<T>>,
    unit: CVector<T>,
}

pub fn tube_algebra<T: Real>(f: &FSymbolData<T>) -> Result<TubeAlgebra<T>> {
    let pent = f.pentagon_residual().as_f64();
    if pent > PENTAGON_TOL {
        return Err(Error::Refused(format!(
            "pentagon residual {pent:.3e} above tolerance"
        )));
    }
    let ring = f.ring();
    let r = ring.rank();
    let nn = |a: usize, b: usize, c: usize| ring.n(a, b, c) > 0;
    let mut basis = Vec::new();
    for x in 0..r {
        for g in 0..r {
            for y in 0..r {
                for p in 0..r {
                    if nn(g, x, p) && nn(y, g, p) {
                        basis.push((x, g, y, p));
                    }
                }
            }
        }
    }
    let idx: HashMap<(usize, usize, usize, usize), usize> =
        basis.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let n = basis.len();
    let mut mult = vec![vec![Vec::new(); n]; n];
    // (y,h,z,q) · (x,g,y,p)
    for (i, &(y, h, z, q)) in basis.iter().enumerate() {
        for (j, &(x, g, y2, p)) in basis.iter().enumerate() {
            if y2 != y {
                continue;
            }
            let mut acc: BTreeMap<usize, Cx<T>> = BTreeMap::new();
            for k in 0..r {
                for d in 0..r {
                    let Some(&t) = idx.get(&(x, k, z, d)) else {
                        continue;
                    };
                    let c = f.get(h, g, x, d, k, p)
                        * f.get(h, y, g, d, q, p).conj()
                        * f.get(z, h, g, d, q, k);
                    if c != Cx::zero() {
                        *acc.entry(t).or_insert_with(Cx::zero) += c;
                    }
                }
            }
            mult[i][j] = acc.into_iter().filter(|(_, c)| *c != Cx::zero()).collect();
        }
    }
    let dims = ring.quantum_dims::<T>()?;
    let mut star = vec![Vec::new(); n];
    for (i, &(x, g, y, p)) in basis.iter().enumerate() {
        let gb = ring.dual(g);
        for q in 0..r {
            let Some(&t) = idx.get(&(y, gb, x, q)) else {
                continue;
            };
            let c = f.get(q, g, gb, q, x, 0).conj()
                * f.get(gb, y, g, x, q, p)
                * f.get(gb, g, x, x, 0, p).conj()
                * Cx::new(dims[g], T::zero());
            if c != Cx::zero() {
                star[i].push((t, c));
            }
        }
    }
    let mut unit = CVector::<T>::zeros(n);
    for x in 0..r {
        unit[idx[&(x, 0, x, x)]] = Cx::one();
    }
    Ok(TubeAlgebra {
        basis,
        mult,
        star,
        unit,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TubeChecks {
    pub associativity: f64,
    pub unit: f64,
    pub star_involution: f64,
    pub star_antimultiplicative: f64,
}

impl<T: Real> TubeAlgebra<T> {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn unit(&self) -> &CVector<T> {
        &self.unit
    }

    pub fn mul(&self, a: &CVector<T>, b: &CVector<T>) -> CVector<T> {
        let n = self.dim();
        let mut out = CVector::zeros(n);
        for i in 0..n {
            if a[i] == Cx::zero() {
                continue;
            }
            for j in 0..n {
                if b[j] == Cx::zero() {
                    continue;
                }
                let w = a[i] * b[j];
                for &(k, c) in &self.mult[i][j] {
                    out[k] += w * c;
                }
            }
        }
        out
    }

    pub fn star(&self, a: &CVector<T>) -> CVector<T> {
        let mut out = CVector::zeros(self.dim());
        for (i, terms) in self.star.iter().enumerate() {
            let w = a[i].conj();
            if w == Cx::zero() {
                continue;
            }
            for &(j, c) in terms {
                out[j] += w * c;
            }
        }
        out
    }

    fn e(&self, i: usize) -> CVector<T> {
        let mut v = CVector::zeros(self.dim());
        v[i] = Cx::one();
        v
    }

    /// Matrix of `x ↦ a x`.
    pub fn left_matrix(&self, a: &CVector<T>) -> CMatrix<T> {
        let n = self.dim();
        let mut m = CMatrix::zeros(n, n);
        for j in 0..n {
            m.set_column(j, &self.mul(a, &self.e(j)));
        }
        m
    }

    fn right_matrix(&self, a: &CVector<T>) -> CMatrix<T> {
        let n = self.dim();
        let mut m = CMatrix::zeros(n, n);
        for j in 0..n {
            m.set_column(j, &self.mul(&self.e(j), a));
        }
        m
    }

    pub fn checks(&self) -> TubeChecks {
        let n = self.dim();
        let d = |a: CVector<T>, b: CVector<T>| (a - b).camax().as_f64();
        let mut assoc = 0f64;
        let mut unit = 0f64;
        let mut inv = 0f64;
        let mut anti = 0f64;
        for i in 0..n {
            let ei = self.e(i);
            unit = unit.max(d(self.mul(&self.unit, &ei), ei.clone()));
            unit = unit.max(d(self.mul(&ei, &self.unit), ei.clone()));
            inv = inv.max(d(self.star(&self.star(&ei)), ei.clone()));
            for j in 0..n {
                let ej = self.e(j);
                let ij = self.mul(&ei, &ej);
                anti = anti.max(d(
                    self.star(&ij),
                    self.mul(&self.star(&ej), &self.star(&ei)),
                ));
                for k in 0..n {
                    let ek = self.e(k);
                    assoc = assoc.max(d(self.mul(&ij, &ek), self.mul(&ei, &self.mul(&ej, &ek))));
                }
            }
        }
        TubeChecks {
            associativity: assoc,
            unit,
            star_involution: inv,
            star_antimultiplicative: anti,
        }
    }

    /// Orthonormal basis of the center, as columns.
    pub fn center(&self, policy: RankPolicy) -> Result<CMatrix<T>> {
        let n = self.dim();
        let mut stack = CMatrix::<T>::zeros(n * n, n);
        for i in 0..n {
            let ei = self.e(i);
            // z ↦ b_i z - z b_i
            let m = self.left_matrix(&ei) - self.right_matrix(&ei);
            stack.view_mut((i * n, 0), (n, n)).copy_from(&m);
        }
        null_space(&stack, policy)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AnyonSpectrum {
    pub count: usize,
    pub block_dims: Vec<usize>,
    pub tube_dim: usize,
    /// `max |e_i e_j - δ_ij e_i|` and `|sum e_i - 1|`.
    pub idempotent_residual: f64,
    pub attempts: usize,
}

#[derive(Clone, Debug)]
pub struct AnyonOptions {
    pub seed: u64,
    pub retries: usize,
    pub policy: RankPolicy,
}

impl Default for AnyonOptions {
    fn default() -> Self {
        AnyonOptions {
            seed: 0x7ab1e,
            retries: 5,
            policy: RankPolicy::default(),
        }
    }
}

/// Central idempotents from the spectrum of a random central element.
pub fn anyons<T: Real>(t: &TubeAlgebra<T>, opts: &AnyonOptions) -> Result<AnyonSpectrum> {
    let z = t.center(opts.policy)?;
    let c = z.ncols();
    if c == 0 {
        return Err(Error::Numerical("tube algebra has trivial center".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut last = String::new();
    for attempt in 1..=opts.retries.max(1) {
        let coeffs = CVector::<T>::from_fn(c, |_, _| random_cx(&mut rng));
        let zc = &z * coeffs;
        let a = z.adjoint() * t.left_matrix(&zc) * &z;
        let Some(schur) = nalgebra::linalg::Schur::try_new(a, T::default_epsilon(), 10_000) else {
            last = "Schur iteration did not converge".into();
            continue;
        };
        let (_, tri) = schur.unpack();
        let lam: Vec<Cx<T>> = (0..c).map(|i| tri[(i, i)]).collect();
        let scale = lam
            .iter()
            .map(|x| x.modulus())
            .fold(T::one(), |a, b| a.max(b));
        let mut gap = T::max_value().unwrap_or_else(T::one);
        for i in 0..c {
            for j in 0..i {
                gap = gap.min((lam[i] - lam[j]).modulus());
            }
        }
        if gap < T::lit(1e-6) * scale {
            last = format!("eigenvalue collision (gap {:.2e})", gap.as_f64());
            continue;
        }
        let mut ids = Vec::with_capacity(c);
        for i in 0..c {
            let mut e = t.unit().clone();
            for j in 0..c {
                if j == i {
                    continue;
                }
                let step = (&zc - t.unit() * lam[j]) / (lam[i] - lam[j]);
                e = t.mul(&e, &step);
            }
            ids.push(e);
        }
        let mut resid = 0f64;
        let mut sum = CVector::<T>::zeros(t.dim());
        for i in 0..c {
            sum += &ids[i];
            for j in 0..c {
                let p = t.mul(&ids[i], &ids[j]);
                let expect = if i == j {
                    ids[i].clone()
                } else {
                    CVector::zeros(t.dim())
                };
                resid = resid.max((p - expect).camax().as_f64());
            }
        }
        resid = resid.max((sum - t.unit()).camax().as_f64());
        if resid > 1e-8 {
            last = format!("idempotent residual {resid:.2e}");
            continue;
        }
        let mut dims = Vec::with_capacity(c);
        for e in &ids {
            let tr = t.left_matrix(e).trace();
            let sq = tr.re.as_f64();
            let m = sq.max(0.0).sqrt().round();
            if (m * m - sq).abs() > 1e-6 || tr.im.as_f64().abs() > 1e-6 {
                return Err(Error::Numerical(format!(
                    "block of dimension {sq:.6} is not a square"
                )));
            }
            dims.push(m as usize);
        }
        dims.sort_unstable();
        return Ok(AnyonSpectrum {
            count: c,
            block_dims: dims,
            tube_dim: t.dim(),
            idempotent_residual: resid,
            attempts: attempt,
        });
    }
    Err(Error::Numerical(format!(
        "center decomposition failed after {} attempts: {last}",
        opts.retries.max(1)
    )))
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossCheck {
    pub anyon_count: usize,
    pub label_count: usize,
    pub count_matches: bool,
    pub dims_square_sum: usize,
    pub tube_dim: usize,
    pub dims_consistent: bool,
    pub verlinde_ring_valid: bool,
    pub pass: bool,
}

/// Compares the tube algebra's anyons with modular data expected to be the
/// double.
pub fn cross_check_double<T: Real>(
    t: &TubeAlgebra<T>,
    md: &ModularData,
    opts: &AnyonOptions,
) -> Result<CrossCheck> {
    let spec = anyons(t, opts)?;
    let sq: usize = spec.block_dims.iter().map(|d| d * d).sum();
    let verlinde_ok = verlinde(md).is_ok();
    let count_matches = spec.count == md.rank();
    let dims_consistent = sq == t.dim();
    Ok(CrossCheck {
        anyon_count: spec.count,
        label_count: md.rank(),
        count_matches,
        dims_square_sum: sq,
        tube_dim: t.dim(),
        dims_consistent,
        verlinde_ring_valid: verlinde_ok,
        pass: count_matches && dims_consistent && verlinde_ok,
    })
}

// ---------------------------------------------------------------------------
// F-symbols from a connection family

/// Composite edge of `(A ∘ B) ∘ C` or `A ∘ (B ∘ C)` as `(y, z, i, j, k)`.
type Edge3 = (usize, usize, usize, usize, usize);

/// Index tables of a triple composite, for both bracketings.
struct Triple {
    /// For each `(x, w)`: edges of `(A∘B)∘C` in compose order.
    left: BTreeMap<(usize, usize), Vec<Edge3>>,
    right: BTreeMap<(usize, usize), Vec<Edge3>>,
}

fn triple<T: Real>(
    a: &BiUnitaryConnection<T>,
    b: &BiUnitaryConnection<T>,
    c: &BiUnitaryConnection<T>,
) -> Triple {
    let ab = a.horizontal().compose_index(b.horizontal());
    let bc = b.horizontal().compose_index(c.horizontal());
    let mut hab = crate::connection::HorizontalSpace::new();
    for (&(x, z), l) in &ab {
        hab.set(x, z, l.len());
    }
    let mut hbc = crate::connection::HorizontalSpace::new();
    for (&(y, w), l) in &bc {
        hbc.set(y, w, l.len());
    }
    let left_idx = hab.compose_index(c.horizontal());
    let right_idx = a.horizontal().compose_index(&hbc);
    let mut left = BTreeMap::new();
    for (&(x, w), l) in &left_idx {
        left.insert(
            (x, w),
            l.iter()
                .map(|&(z, iab, k)| {
                    let (y, i, j) = ab[&(x, z)][iab];
                    (y, z, i, j, k)
                })
                .collect(),
        );
    }
    let mut right = BTreeMap::new();
    for (&(x, w), l) in &right_idx {
        right.insert(
            (x, w),
            l.iter()
                .map(|&(y, i, ibc)| {
                    let (z, j, k) = bc[&(y, w)][ibc];
                    (y, z, i, j, k)
                })
                .collect(),
        );
    }
    Triple { left, right }
}

/// Family data with isometric trivalent intertwiners.
struct FamilyF<'a, T: Real> {
    members: Vec<&'a BiUnitaryConnection<T>>,
    ring: FusionRing,
    /// `V^{ab}_c : W_c -> W_a ∘ W_b`.
    v: HashMap<(usize, usize, usize), Intertwiner<T>>,
}

fn canonical_unit_map<T: Real>(
    a: &BiUnitaryConnection<T>,
    b: &BiUnitaryConnection<T>,
    c: &BiUnitaryConnection<T>,
    left_unit: bool,
) -> Intertwiner<T> {
    // W_c -> W_a ∘ W_b with one side the identity connection
    let idx = a.horizontal().compose_index(b.horizontal());
    let mut blocks = BTreeMap::new();
    for ((x, y), d) in c.horizontal().pairs() {
        let list = &idx[&(x, y)];
        let mut m = CMatrix::<T>::zeros(list.len(), d);
        for (r, &(mid, i, j)) in list.iter().enumerate() {
            let (src, ok) = if left_unit {
                (j, mid == x && i == 0)
            } else {
                (i, mid == y && j == 0)
            };
            if ok {
                m[(r, src)] = Cx::one();
            }
        }
        blocks.insert((x, y), m);
    }
    Intertwiner { blocks }
}

fn isometry<T: Real>(
    c: &BiUnitaryConnection<T>,
    ab: &BiUnitaryConnection<T>,
    policy: RankPolicy,
) -> Result<Intertwiner<T>> {
    let mut basis = hom_space(c, ab, policy)?;
    if basis.len() != 1 {
        return Err(Error::Structural(format!(
            "expected a one-dimensional intertwiner space, found {}",
            basis.len()
        )));
    }
    let mut x = basis.remove(0);
    let lambda = x.norm_sqr() / T::lit(c.horizontal().total() as f64);
    x.scale(T::one() / lambda.sqrt());
    // fix the phase so the largest entry is real positive
    let mut best = Cx::<T>::zero();
    for b in x.blocks.values() {
        for z in b.iter() {
            if z.modulus() > best.modulus() + T::lit(1e-9) {
                best = *z;
            }
        }
    }
    if best != Cx::zero() {
        let ph = best.conj() / Cx::new(best.modulus(), T::zero());
        for b in x.blocks.values_mut() {
            *b *= ph;
        }
    }
    Ok(x)
}

/// `(V ⊗ 1_C) W` for `V: W_e -> W_a∘W_b` followed by `W: W_d -> W_e∘W_c`, as
/// a map `W_d -> (A∘B)∘C` indexed by [`Triple::left`] (or the mirrored
/// version into `A∘(B∘C)`).
fn compose_left<T: Real>(
    inner: &Intertwiner<T>,
    outer: &Intertwiner<T>,
    e: &BiUnitaryConnection<T>,
    cc: &BiUnitaryConnection<T>,
    target: &BTreeMap<(usize, usize), Vec<Edge3>>,
    ab_idx: &ComposeIndex,
    left: bool,
) -> BTreeMap<(usize, usize), CMatrix<T>> {
    // edges of W_e∘W_c (left) or W_a∘W_e (right) in compose order
    let ec = if left {
        e.horizontal().compose_index(cc.horizontal())
    } else {
        cc.horizontal().compose_index(e.horizontal())
    };
    let mut out = BTreeMap::new();
    for (&(x, w), blk) in &outer.blocks {
        let tgt = &target[&(x, w)];
        let pos: HashMap<Edge3, usize> = tgt.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let mut m = CMatrix::<T>::zeros(tgt.len(), blk.ncols());
        for (r, &(mid, i, j)) in ec[&(x, w)].iter().enumerate() {
            // left: mid = z, i indexes W_e(x,z), j indexes W_c(z,w)
            // right: mid = y, i indexes W_a(x,y), j indexes W_e(y,w)
            let (pair, ei) = if left { ((x, mid), i) } else { ((mid, w), j) };
            let Some(vb) = inner.blocks.get(&pair) else {
                continue;
            };
            for (s, &(mid2, i2, j2)) in ab_idx[&pair].iter().enumerate() {
                let v = vb[(s, ei)];
                if v == Cx::zero() {
                    continue;
                }
                let edge = if left {
                    (mid2, mid, i2, j2, j)
                } else {
                    (mid, mid2, i, i2, j2)
                };
                let row = pos[&edge];
                for col in 0..blk.ncols() {
                    m[(row, col)] += v * blk[(r, col)];
                }
            }
        }
        out.insert((x, w), m);
    }
    out
}

impl<'a, T: Real> FamilyF<'a, T> {
    fn build(f: &'a ConnectionFamily<T>, policy: RankPolicy) -> Result<Self> {
        let members: Vec<&BiUnitaryConnection<T>> =
            f.members.iter().map(|m| &m.connection).collect();
        let labels: Vec<String> = f.members.iter().map(|m| m.label.clone()).collect();
        let n: Vec<Vec<Vec<u32>>> = f
            .fusion
            .iter()
            .map(|row| {
                row.iter()
                    .map(|v| v.iter().map(|&x| x as u32).collect())
                    .collect()
            })
            .collect();
        let ring = FusionRing::new(labels, n)?;
        if !ring.is_multiplicity_free() {
            return Err(Error::Structural("family fusion has multiplicities".into()));
        }
        let r = ring.rank();
        let mut v = HashMap::new();
        for a in 0..r {
            for b in 0..r {
                let ab = compose_horizontal(members[a], members[b])?;
                for c in 0..r {
                    if ring.n(a, b, c) == 0 {
                        continue;
                    }
                    let iso = if a == 0 {
                        canonical_unit_map(members[a], members[b], members[c], true)
                    } else if b == 0 {
                        canonical_unit_map(members[a], members[b], members[c], false)
                    } else {
                        isometry(members[c], &ab, policy)?
                    };
                    v.insert((a, b, c), iso);
                }
            }
        }
        Ok(FamilyF { members, ring, v })
    }

    fn f_symbols(&self) -> Result<FSymbolData<T>> {
        let r = self.ring.rank();
        let mut out = HashMap::new();
        for a in 0..r {
            for b in 0..r {
                let ab_idx = self.members[a]
                    .horizontal()
                    .compose_index(self.members[b].horizontal());
                for c in 0..r {
                    let bc_idx = self.members[b]
                        .horizontal()
                        .compose_index(self.members[c].horizontal());
                    let tr = triple(self.members[a], self.members[b], self.members[c]);
                    for d in 0..r {
                        for e in 0..r {
                            if self.ring.n(a, b, e) == 0 || self.ring.n(e, c, d) == 0 {
                                continue;
                            }
                            let lhs = compose_left(
                                &self.v[&(a, b, e)],
                                &self.v[&(e, c, d)],
                                self.members[e],
                                self.members[c],
                                &tr.left,
                                &ab_idx,
                                true,
                            );
                            for g in 0..r {
                                if self.ring.n(b, c, g) == 0 || self.ring.n(a, g, d) == 0 {
                                    continue;
                                }
                                let rhs = compose_left(
                                    &self.v[&(b, c, g)],
                                    &self.v[&(a, g, d)],
                                    self.members[g],
                                    self.members[a],
                                    &tr.right,
                                    &bc_idx,
                                    false,
                                );
                                // both sides index the same edges in different orders
                                let mut acc = Cx::<T>::zero();
                                for (&(x, w), lm) in &lhs {
                                    let rm = &rhs[&(x, w)];
                                    let lpos: HashMap<Edge3, usize> = tr.left[&(x, w)]
                                        .iter()
                                        .enumerate()
                                        .map(|(i, &t)| (t, i))
                                        .collect();
                                    for (ri, edge) in tr.right[&(x, w)].iter().enumerate() {
                                        let li = lpos[edge];
                                        for col in 0..lm.ncols() {
                                            acc += rm[(ri, col)].conj() * lm[(li, col)];
                                        }
                                    }
                                }
                                let total = T::lit(self.members[d].horizontal().total() as f64);
                                out.insert((a, b, c, d, e, g), acc / Cx::new(total, T::zero()));
                            }
                        }
                    }
                }
            }
        }
        FSymbolData::new(self.ring.clone(), out)
    }
}

/// F-symbols of the even part of a closed family, from normalized
/// intertwiners between composed members.
pub fn family_f_symbols<T: Real>(
    f: &ConnectionFamily<T>,
    policy: RankPolicy,
) -> Result<FSymbolData<T>> {
    if !f.closed {
        return Err(Error::Refused("family is not closed".into()));
    }
    let even = f.even_part()?;
    FamilyF::build(&even, policy)?.f_symbols()
}

/// Number of anyons of the tube algebra built from the family's F-symbols.
pub fn anyon_count_from_connections<T: Real>(
    f: &ConnectionFamily<T>,
    opts: &AnyonOptions,
) -> Result<usize> {
    let fs = family_f_symbols(f, opts.policy)?;
    let t = tube_algebra(&fs)?;
    Ok(anyons(&t, opts)?.count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::{connection_family, flat_connection_a_n, DecomposeOptions};

    #[test]
    fn builtin_f_data() {
        let z2 = f_vec_zn::<f64>(2).unwrap();
        assert_eq!(z2.pentagon_residual(), 0.0);
        let fib = f_fibonacci::<f64>();
        assert!(fib.pentagon_residual() < 1e-12);
        assert!(fib.unitarity_residual() < 1e-12);
        assert!(matches!(
            f_symbols_builtin::<f64>("ising"),
            Err(Error::UnknownBuiltin(_))
        ));
        assert_eq!(f_symbols_builtin::<f64>("vec_z3").unwrap().ring().rank(), 3);
    }

    #[test]
    fn broken_pentagon_is_refused() {
        let mut fib = f_fibonacci::<f64>();
        fib.f.insert((1, 1, 1, 1, 1, 1), Cx::new(-0.5, 0.0));
        assert!(matches!(tube_algebra(&fib), Err(Error::Refused(_))));
    }

    #[test]
    fn dimensions_and_checks() {
        for (name, dim) in [("vec_z2", 4), ("vec_z3", 9), ("fibonacci", 7)] {
            let t = tube_algebra(&f_symbols_builtin::<f64>(name).unwrap()).unwrap();
            assert_eq!(t.dim(), dim, "{name}");
            let c = t.checks();
            assert!(c.associativity < 1e-9 && c.unit < 1e-12, "{name} {c:?}");
            assert!(
                c.star_involution < 1e-9 && c.star_antimultiplicative < 1e-9,
                "{name} {c:?}"
            );
        }
    }

    #[test]
    fn anyon_counts() {
        let opts = AnyonOptions::default();
        for (name, count, dims) in [
            ("vec_z2", 4, vec![1, 1, 1, 1]),
            ("vec_z3", 9, vec![1; 9]),
            ("fibonacci", 4, vec![1, 1, 1, 2]),
        ] {
            let t = tube_algebra(&f_symbols_builtin::<f64>(name).unwrap()).unwrap();
            let s = anyons(&t, &opts).unwrap();
            assert_eq!(s.count, count, "{name}");
            assert_eq!(s.block_dims, dims, "{name}");
            assert_eq!(s.block_dims.iter().map(|d| d * d).sum::<usize>(), t.dim());
        }
    }

    #[test]
    fn cross_checks() {
        let opts = AnyonOptions::default();
        let t2 = tube_algebra(&f_vec_zn::<f64>(2).unwrap()).unwrap();
        let (_, toric) = crate::modular::toric_code();
        assert!(cross_check_double(&t2, &toric, &opts).unwrap().pass);
        let t3 = tube_algebra(&f_vec_zn::<f64>(3).unwrap()).unwrap();
        let (_, d3) = crate::modular::double_zn(3).unwrap();
        assert!(cross_check_double(&t3, &d3, &opts).unwrap().pass);
        let (_, fib) = crate::modular::fibonacci();
        assert!(!cross_check_double(&t2, &fib, &opts).unwrap().pass);
    }

    #[test]
    fn counts_from_connection_families() {
        let opts = AnyonOptions::default();
        for (n, expect) in [(2, 1), (3, 4), (4, 4)] {
            let c = flat_connection_a_n::<f64>(n).unwrap();
            let fam = connection_family(&c, 16, &DecomposeOptions::default()).unwrap();
            let fs = family_f_symbols(&fam, opts.policy).unwrap();
            assert!(
                fs.pentagon_residual() < 1e-8,
                "A_{n}: {}",
                fs.pentagon_residual()
            );
            assert!(fs.unitarity_residual() < 1e-8, "A_{n}");
            assert_eq!(
                anyon_count_from_connections(&fam, &opts).unwrap(),
                expect,
                "A_{n}"
            );
        }
    }

    #[test]
    fn json_round_trip() {
        let fib = f_fibonacci::<f64>();
        let s = serde_json::to_string(&fib.to_json()).unwrap();
        let back = FSymbolData::<f64>::from_json(&serde_json::from_str(&s).unwrap()).unwrap();
        assert!(back.pentagon_residual() < 1e-12);
        assert_eq!(
            back.entries().len(),
            fib.entries()
                .iter()
                .filter(|(_, z)| **z != Cx::zero())
                .count()
        );
    }
}
