//! Modular data `(S, T)`, the Verlinde formula and generalized modular
//! invariants.
//!
//! `T` is stored exactly as phases in `Q/Z` (multiples of 2π). `S` is kept
//! as floats and, for built-in data, also as an exact matrix over a
//! cyclotomic field proportional to `S`; commutation with an integer matrix
//! is insensitive to the scale, so invariants are checked exactly there.

use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::cyclotomic::{golden, Cyclo};
use crate::error::{Error, Result};
use crate::exact::{rref, Approx};
use crate::fusion::FusionRing;
use crate::linalg::{max_abs, unitarity_residual, CMatrix};
use crate::scalar::Cx;

pub type IntMatrix = Vec<Vec<u64>>;

#[derive(Clone, Debug)]
pub struct ModularData {
    pub name: String,
    pub labels: Vec<String>,
    pub s: CMatrix<f64>,
    /// `T_a = exp(2πi t_a)` with `t_a ∈ [0, 1)`.
    pub t: Vec<BigRational>,
    /// Exact matrix proportional to `s`.
    pub s_exact: Option<Vec<Vec<Cyclo>>>,
}

fn frac(p: i64, q: i64) -> BigRational {
    let r = BigRational::new(BigInt::from(p), BigInt::from(q));
    let fl = r.floor();
    r - fl
}

fn cx_phase(t: &BigRational) -> Cx<f64> {
    let x = t.to_f64().unwrap_or(f64::NAN) * 2.0 * std::f64::consts::PI;
    Cx::new(x.cos(), x.sin())
}

impl ModularData {
    /// Checks unitarity and symmetry of `S`, that `S^2` is a permutation,
    /// and consistency of the exact matrix with the float one.
    pub fn new(
        name: impl Into<String>,
        labels: Vec<String>,
        s: CMatrix<f64>,
        t: Vec<BigRational>,
        s_exact: Option<Vec<Vec<Cyclo>>>,
    ) -> Result<Self> {
        let r = labels.len();
        if r == 0 || s.nrows() != r || s.ncols() != r || t.len() != r {
            return Err(Error::Structural("modular data dimensions disagree".into()));
        }
        let t: Vec<BigRational> = t.into_iter().map(|x| &x - x.floor()).collect();
        let md = ModularData {
            name: name.into(),
            labels,
            s,
            t,
            s_exact,
        };
        let u = unitarity_residual(&md.s);
        if u > 1e-10 {
            return Err(Error::Structural(format!(
                "S is not unitary (residual {u:.3e})"
            )));
        }
        if max_abs(&(&md.s - md.s.transpose())) > 1e-10 {
            return Err(Error::Structural("S is not symmetric".into()));
        }
        md.charge_conjugation()?;
        if let Some(ex) = &md.s_exact {
            if ex.len() != r || ex.iter().any(|row| row.len() != r) {
                return Err(Error::Structural("exact S has the wrong shape".into()));
            }
            let scale = md.s[(0, 0)] / ex[0][0].to_complex();
            for i in 0..r {
                for j in 0..r {
                    if (ex[i][j].to_complex() * scale - md.s[(i, j)]).norm() > 1e-10 {
                        return Err(Error::Structural("exact S is not proportional to S".into()));
                    }
                }
            }
        }
        Ok(md)
    }

    pub fn rank(&self) -> usize {
        self.labels.len()
    }

    pub fn t_matrix(&self) -> CMatrix<f64> {
        let r = self.rank();
        CMatrix::from_fn(r, r, |i, j| {
            if i == j {
                cx_phase(&self.t[i])
            } else {
                Cx::new(0.0, 0.0)
            }
        })
    }

    /// Permutation `S^2`, as `c[a] = ā`.
    pub fn charge_conjugation(&self) -> Result<Vec<usize>> {
        let s2 = &self.s * &self.s;
        let r = self.rank();
        let mut c = vec![usize::MAX; r];
        for a in 0..r {
            for b in 0..r {
                let z = s2[(a, b)];
                if (z - Cx::new(1.0, 0.0)).norm() < 1e-8 {
                    if c[a] != usize::MAX {
                        return Err(Error::Structural("S^2 is not a permutation".into()));
                    }
                    c[a] = b;
                } else if z.norm() > 1e-8 {
                    return Err(Error::Structural("S^2 is not a permutation".into()));
                }
            }
        }
        if c.contains(&usize::MAX) {
            return Err(Error::Structural("S^2 is not a permutation".into()));
        }
        Ok(c)
    }

    /// `d_a = S_{0a} / S_{00}`.
    pub fn quantum_dims(&self) -> Vec<f64> {
        (0..self.rank())
            .map(|a| (self.s[(0, a)] / self.s[(0, 0)]).re)
            .collect()
    }

    pub fn to_json(&self) -> ModularDataJson {
        ModularDataJson {
            name: self.name.clone(),
            labels: self.labels.clone(),
            s: self
                .s
                .row_iter()
                .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
                .collect(),
            s_exact: self.s_exact.as_ref().map(|ex| {
                let level = ex
                    .iter()
                    .flatten()
                    .map(|z| z.level())
                    .fold(1u32, |a, b| a.lcm(&b));
                ExactSJson {
                    level,
                    entries: ex
                        .iter()
                        .map(|row| {
                            row.iter()
                                .map(|z| {
                                    z.lift(level)
                                        .coords()
                                        .iter()
                                        .map(|q| q.to_string())
                                        .collect()
                                })
                                .collect()
                        })
                        .collect(),
                }
            }),
            t: self.t.iter().map(|q| q.to_string()).collect(),
        }
    }

    pub fn from_json(j: &ModularDataJson) -> Result<Self> {
        let r = j.labels.len();
        if j.s.len() != r || j.s.iter().any(|row| row.len() != r) {
            return Err(Error::Structural("S has the wrong shape".into()));
        }
        let s = CMatrix::from_fn(r, r, |a, b| Cx::new(j.s[a][b][0], j.s[a][b][1]));
        let t =
            j.t.iter()
                .map(|x| parse_rational(x))
                .collect::<Result<Vec<_>>>()?;
        let s_exact = match &j.s_exact {
            None => None,
            Some(ex) => Some(
                ex.entries
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|coords| {
                                let c = coords
                                    .iter()
                                    .map(|x| parse_rational(x))
                                    .collect::<Result<Vec<_>>>()?;
                                Ok(Cyclo::from_poly(ex.level, c))
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Self::new(j.name.clone(), j.labels.clone(), s, t, s_exact)
    }
}

fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::Parameter(format!("`{s}` is not a rational number"));
    match s.split_once('/') {
        Some((p, q)) => {
            let p = BigInt::from_str(p.trim()).map_err(|_| bad())?;
            let q = BigInt::from_str(q.trim()).map_err(|_| bad())?;
            if q.is_zero() {
                return Err(bad());
            }
            Ok(BigRational::new(p, q))
        }
        None => Ok(BigRational::from_integer(
            BigInt::from_str(s).map_err(|_| bad())?,
        )),
    }
}

/// Modular-data file format. `t` holds phases as rationals (multiples of
/// 2π); `s_exact` coordinates are in the power basis of `Q(ζ_level)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModularDataJson {
    #[serde(default)]
    pub name: String,
    pub labels: Vec<String>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<[f64; 2]>>,
    #[serde(rename = "S_exact", default, skip_serializing_if = "Option::is_none")]
    pub s_exact: Option<ExactSJson>,
    #[serde(rename = "T")]
    pub t: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExactSJson {
    pub level: u32,
    pub entries: Vec<Vec<Vec<String>>>,
}

// ---------------------------------------------------------------------------
// Built-ins

fn exact_to_float(ex: &[Vec<Cyclo>], norm: f64) -> CMatrix<f64> {
    let r = ex.len();
    CMatrix::from_fn(r, r, |i, j| ex[i][j].to_complex() / norm)
}

pub fn toric_code() -> (FusionRing, ModularData) {
    let labels: Vec<String> = ["1", "e", "m", "f"].map(String::from).to_vec();
    // e = (1,0), m = (0,1), f = (1,1)
    let ring = FusionRing::from_group(labels.clone(), |a, b| a ^ b).expect("Z2 x Z2");
    let sign = |a: usize, b: usize| -> i64 {
        let (a1, a2, b1, b2) = (a & 1, a >> 1, b & 1, b >> 1);
        if (a1 * b2 + a2 * b1) % 2 == 0 {
            1
        } else {
            -1
        }
    };
    let ex: Vec<Vec<Cyclo>> = (0..4)
        .map(|a| (0..4).map(|b| Cyclo::from_int(1, sign(a, b))).collect())
        .collect();
    let t = vec![frac(0, 1), frac(0, 1), frac(0, 1), frac(1, 2)];
    let md = ModularData::new("toric_code", labels, exact_to_float(&ex, 2.0), t, Some(ex))
        .expect("toric code data");
    (ring, md)
}

pub fn fibonacci() -> (FusionRing, ModularData) {
    let labels = vec!["1".to_string(), "tau".to_string()];
    let ring = FusionRing::new(
        labels.clone(),
        vec![vec![vec![1, 0], vec![0, 1]], vec![vec![0, 1], vec![1, 1]]],
    )
    .expect("Fibonacci ring");
    let phi = golden();
    let ex = vec![
        vec![Cyclo::one(5), phi.clone()],
        vec![phi, Cyclo::from_int(5, -1)],
    ];
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let t = vec![frac(0, 1), frac(2, 5)];
    let md = ModularData::new(
        "fibonacci",
        labels,
        exact_to_float(&ex, (2.0 + p).sqrt()),
        t,
        Some(ex),
    )
    .expect("Fibonacci data");
    (ring, md)
}

/// Pointed data on `Z/n`: `S_ab = ω^{ab} / sqrt n`, `T_a = exp(πi (n+1) a^2 / n)`.
pub fn vec_zn(n: usize) -> Result<(FusionRing, ModularData)> {
    if n < 2 {
        return Err(Error::Parameter(format!("vec_zn needs n >= 2, got {n}")));
    }
    let labels: Vec<String> = (0..n).map(|a| a.to_string()).collect();
    let ring = FusionRing::from_group(labels.clone(), |a, b| (a + b) % n)?;
    let ex: Vec<Vec<Cyclo>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| Cyclo::zeta(n as u32, (a * b) as i64))
                .collect()
        })
        .collect();
    let t = (0..n)
        .map(|a| frac(((n + 1) * a * a) as i64, 2 * n as i64))
        .collect();
    let md = ModularData::new(
        format!("vec_z{n}"),
        labels,
        exact_to_float(&ex, (n as f64).sqrt()),
        t,
        Some(ex),
    )?;
    Ok((ring, md))
}

/// Double of `Z/n`: labels `(e, m)`, `S = ω^{-(e m' + m e')} / n`, `T = ω^{e m}`.
pub fn double_zn(n: usize) -> Result<(FusionRing, ModularData)> {
    if n < 2 {
        return Err(Error::Parameter(format!("double_zn needs n >= 2, got {n}")));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|e| (0..n).map(move |m| (e, m))).collect();
    let labels: Vec<String> = pairs.iter().map(|(e, m)| format!("e{e}m{m}")).collect();
    let ring = FusionRing::from_group(labels.clone(), |a, b| {
        let (e, m) = ((pairs[a].0 + pairs[b].0) % n, (pairs[a].1 + pairs[b].1) % n);
        e * n + m
    })?;
    let ex: Vec<Vec<Cyclo>> = pairs
        .iter()
        .map(|&(e, m)| {
            pairs
                .iter()
                .map(|&(e2, m2)| Cyclo::zeta(n as u32, -((e * m2 + m * e2) as i64)))
                .collect()
        })
        .collect();
    let t = pairs
        .iter()
        .map(|&(e, m)| frac((e * m) as i64, n as i64))
        .collect();
    let md = ModularData::new(
        format!("double_z{n}"),
        labels,
        exact_to_float(&ex, n as f64),
        t,
        Some(ex),
    )?;
    Ok((ring, md))
}

/// `toric_code`, `fibonacci`, `vec_zn(n)` / `vec_zN`, `double_zn(n)` / `double_zN`.
pub fn builtin(name: &str) -> Result<(FusionRing, ModularData)> {
    let arg = |prefix: &str| -> Option<usize> {
        let rest = name.strip_prefix(prefix)?;
        let rest = rest
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .unwrap_or(rest);
        rest.parse().ok()
    };
    match name {
        "toric_code" => Ok(toric_code()),
        "fibonacci" => Ok(fibonacci()),
        _ => {
            if let Some(n) = arg("vec_zn").or_else(|| arg("vec_z")) {
                vec_zn(n)
            } else if let Some(n) = arg("double_zn").or_else(|| arg("double_z")) {
                double_zn(n)
            } else {
                Err(Error::UnknownBuiltin(name.to_string()))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Verlinde

pub const VERLINDE_ROUND: f64 = 1e-8;
pub const VERLINDE_REJECT: f64 = 1e-6;

/// `N_ab^c = sum_x S_ax S_bx conj(S_cx) / S_0x`, rounded to integers.
pub fn verlinde(md: &ModularData) -> Result<FusionRing> {
    let r = md.rank();
    let s = &md.s;
    for x in 0..r {
        if s[(0, x)].norm() < 1e-12 {
            return Err(Error::NotModular(format!("S_0{} vanishes", md.labels[x])));
        }
    }
    let mut n = vec![vec![vec![0u32; r]; r]; r];
    for a in 0..r {
        for b in 0..r {
            for c in 0..r {
                let mut z = Cx::new(0.0, 0.0);
                for x in 0..r {
                    z += s[(a, x)] * s[(b, x)] * s[(c, x)].conj() / s[(0, x)];
                }
                let k = z.re.round();
                let dev = (z - Cx::new(k, 0.0)).norm();
                if dev > VERLINDE_REJECT || k < 0.0 {
                    return Err(Error::NotModular(format!(
                        "N_({},{})^{} = {:.6}{:+.6}i is not a nonnegative integer",
                        md.labels[a], md.labels[b], md.labels[c], z.re, z.im
                    )));
                }
                if dev > VERLINDE_ROUND {
                    return Err(Error::Indeterminate(format!(
                        "N_({},{})^{} is {dev:.2e} from an integer",
                        md.labels[a], md.labels[b], md.labels[c]
                    )));
                }
                n[a][b][c] = k as u32;
            }
        }
    }
    FusionRing::new(md.labels.clone(), n).map_err(|e| Error::NotModular(e.to_string()))
}

// ---------------------------------------------------------------------------
// Modular invariants

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModularInvariant {
    pub z: IntMatrix,
}

impl ModularInvariant {
    pub fn identity(r: usize) -> Self {
        ModularInvariant {
            z: (0..r)
                .map(|i| (0..r).map(|j| u64::from(i == j)).collect())
                .collect(),
        }
    }

    pub fn permutation(p: &[usize]) -> Self {
        let r = p.len();
        ModularInvariant {
            z: (0..r)
                .map(|i| (0..r).map(|j| u64::from(p[i] == j)).collect())
                .collect(),
        }
    }

    pub fn trace(&self) -> u64 {
        (0..self.z.len()).map(|i| self.z[i][i]).sum()
    }

    pub fn flat(&self) -> Vec<u64> {
        self.z.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Enumeration {
    pub cap: u64,
    /// Exact field arithmetic was used (otherwise float fallback).
    pub exact: bool,
    pub free_variables: usize,
    pub invariants: Vec<ModularInvariant>,
}

/// `⌈max_{λμ} d_λ d_μ⌉`, at least 1.
pub fn default_cap(md: &ModularData) -> u64 {
    let d = md.quantum_dims();
    let m = d.iter().map(|x| x.abs()).fold(0.0, f64::max);
    ((m * m - 1e-9).ceil() as u64).max(1)
}

/// All nonnegative integer `Z` with entries `<= cap`, `Z_00 = 1`,
/// `ZS = SZ`, `ZT = TZ`.
pub fn enumerate_modular_invariants(md: &ModularData, cap: Option<u64>) -> Result<Enumeration> {
    let cap = cap.unwrap_or_else(|| default_cap(md));
    if cap == 0 {
        return Err(Error::Parameter("cap must be at least 1".into()));
    }
    let r = md.rank();
    // T-commutation: Z_λμ = 0 unless T_λ = T_μ
    let vars: Vec<(usize, usize)> = (0..r)
        .flat_map(|i| (0..r).map(move |j| (i, j)))
        .filter(|&(i, j)| md.t[i] == md.t[j])
        .collect();
    let var_of = |i: usize, j: usize| vars.iter().position(|&v| v == (i, j));
    let (solutions, free, exact) = match &md.s_exact {
        Some(ex) => {
            let level = ex
                .iter()
                .flatten()
                .map(|z| z.level())
                .fold(1u32, |a, b| a.lcm(&b));
            let lifted: Vec<Vec<Cyclo>> = ex
                .iter()
                .map(|row| row.iter().map(|z| z.lift(level)).collect())
                .collect();
            let phi = lifted[0][0].coords().len();
            let mut rows: Vec<Vec<BigRational>> = Vec::new();
            for i in 0..r {
                for k in 0..r {
                    // sum_j Z_ij S_jk - S_ij Z_jk
                    let mut eq: Vec<Vec<BigRational>> =
                        vec![vec![BigRational::zero(); vars.len()]; phi];
                    for j in 0..r {
                        if let Some(v) = var_of(i, j) {
                            for (c, q) in lifted[j][k].coords().iter().enumerate() {
                                eq[c][v] += q;
                            }
                        }
                        if let Some(v) = var_of(j, k) {
                            for (c, q) in lifted[i][j].coords().iter().enumerate() {
                                eq[c][v] -= q;
                            }
                        }
                    }
                    rows.extend(
                        eq.into_iter()
                            .filter(|row| row.iter().any(|x| !x.is_zero())),
                    );
                }
            }
            let (sol, free) =
                integer_points(rows, vars.len(), var_of(0, 0).expect("T_0 = T_0"), cap)?;
            (sol, free, true)
        }
        None => {
            let mut rows: Vec<Vec<Approx>> = Vec::new();
            for i in 0..r {
                for k in 0..r {
                    let mut re = vec![Approx(0.0); vars.len()];
                    let mut im = vec![Approx(0.0); vars.len()];
                    for j in 0..r {
                        if let Some(v) = var_of(i, j) {
                            re[v].0 += md.s[(j, k)].re;
                            im[v].0 += md.s[(j, k)].im;
                        }
                        if let Some(v) = var_of(j, k) {
                            re[v].0 -= md.s[(i, j)].re;
                            im[v].0 -= md.s[(i, j)].im;
                        }
                    }
                    rows.push(re);
                    rows.push(im);
                }
            }
            let (sol, free) =
                integer_points(rows, vars.len(), var_of(0, 0).expect("T_0 = T_0"), cap)?;
            (sol, free, false)
        }
    };
    let mut invariants: Vec<ModularInvariant> = solutions
        .into_iter()
        .map(|x| {
            let mut z = vec![vec![0u64; r]; r];
            for (v, &(i, j)) in vars.iter().enumerate() {
                z[i][j] = x[v] as u64;
            }
            ModularInvariant { z }
        })
        .collect();
    if !exact {
        invariants.retain(|z| float_residual(md, z) < 1e-10);
    }
    invariants.sort();
    Ok(Enumeration {
        cap,
        exact,
        free_variables: free,
        invariants,
    })
}

/// Integer points `x ∈ [0, cap]^n` with `x[unit] = 1` in the null space of
/// `rows`. Returns the points and the number of free variables.
fn integer_points<F: crate::exact::SolveField>(
    mut rows: Vec<Vec<F>>,
    n: usize,
    unit: usize,
    cap: u64,
) -> Result<(Vec<Vec<i64>>, usize)> {
    let pivots = rref(&mut rows, n);
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    // pivot p = -sum_f rows[p][f] x_f; check each row once its last free
    // variable is assigned
    let last_dep: Vec<Option<usize>> = rows
        .iter()
        .map(|row| free.iter().rposition(|&f| !row[f].is_zero()))
        .collect();
    let fixed_unit_free = free.iter().position(|&f| f == unit);
    let mut out = Vec::new();
    let mut x = vec![0i64; n];
    let mut assigned = vec![F::zero(); free.len()];
    #[allow(clippy::too_many_arguments)]
    fn dfs<F: crate::exact::SolveField>(
        depth: usize,
        free: &[usize],
        rows: &[Vec<F>],
        pivots: &[usize],
        last_dep: &[Option<usize>],
        fixed_unit_free: Option<usize>,
        unit: usize,
        cap: u64,
        x: &mut Vec<i64>,
        assigned: &mut Vec<F>,
        out: &mut Vec<Vec<i64>>,
    ) {
        // rows whose dependencies are complete at this depth
        for (r, row) in rows.iter().enumerate() {
            let ready = match last_dep[r] {
                None => depth == 0,
                Some(d) => d + 1 == depth,
            };
            if !ready {
                continue;
            }
            let mut v = F::zero();
            for (fi, &f) in free.iter().enumerate().take(depth) {
                if !row[f].is_zero() {
                    v = v.sub(&row[f].mul(&assigned[fi]));
                }
            }
            match v.to_integer() {
                Some(k) if k >= 0 && (k as u64) <= cap => {
                    if pivots[r] == unit && k != 1 {
                        return;
                    }
                    x[pivots[r]] = k;
                }
                _ => return,
            }
        }
        if depth == free.len() {
            out.push(x.clone());
            return;
        }
        let range: Vec<u64> = if fixed_unit_free == Some(depth) {
            vec![1]
        } else {
            (0..=cap).collect()
        };
        for val in range {
            x[free[depth]] = val as i64;
            assigned[depth] = F::from_i64(val as i64);
            dfs(
                depth + 1,
                free,
                rows,
                pivots,
                last_dep,
                fixed_unit_free,
                unit,
                cap,
                x,
                assigned,
                out,
            );
        }
    }
    dfs(
        0,
        &free,
        &rows,
        &pivots,
        &last_dep,
        fixed_unit_free,
        unit,
        cap,
        &mut x,
        &mut assigned,
        &mut out,
    );
    Ok((out, free.len()))
}

fn float_residual(md: &ModularData, z: &ModularInvariant) -> f64 {
    let r = md.rank();
    let zm = CMatrix::from_fn(r, r, |i, j| Cx::new(z.z[i][j] as f64, 0.0));
    let t = md.t_matrix();
    let a = max_abs(&(&zm * &md.s - &md.s * &zm));
    let b = max_abs(&(&zm * &t - &t * &zm));
    a.max(b)
}

/// Exact check of the three axioms when an exact `S` is present; otherwise
/// the float residual must be below 1e-10.
pub fn is_modular_invariant(md: &ModularData, z: &ModularInvariant) -> bool {
    let r = md.rank();
    if z.z.len() != r || z.z.iter().any(|row| row.len() != r) || z.z[0][0] != 1 {
        return false;
    }
    for i in 0..r {
        for j in 0..r {
            if z.z[i][j] != 0 && md.t[i] != md.t[j] {
                return false;
            }
        }
    }
    match &md.s_exact {
        Some(ex) => {
            let level = ex
                .iter()
                .flatten()
                .map(|x| x.level())
                .fold(1u32, |a, b| a.lcm(&b));
            for i in 0..r {
                for k in 0..r {
                    let mut acc = Cyclo::zero(level);
                    for j in 0..r {
                        let zij = Cyclo::from_int(level, z.z[i][j] as i64);
                        let zjk = Cyclo::from_int(level, z.z[j][k] as i64);
                        acc = &acc + &(&zij * &ex[j][k]);
                        acc = &acc - &(&ex[i][j] * &zjk);
                    }
                    if !acc.is_zero() {
                        return false;
                    }
                }
            }
            true
        }
        None => float_residual(md, z) < 1e-10,
    }
}

pub fn compose_invariants(z1: &ModularInvariant, z2: &ModularInvariant) -> Result<IntMatrix> {
    let r = z1.z.len();
    if z2.z.len() != r {
        return Err(Error::Parameter("invariants have different sizes".into()));
    }
    Ok((0..r)
        .map(|i| {
            (0..r)
                .map(|k| (0..r).map(|j| z1.z[i][j] * z2.z[j][k]).sum())
                .collect()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionStatus {
    Found,
    PoolInsufficient,
}

#[derive(Clone, Debug, Serialize)]
pub struct Decomposition {
    pub status: DecompositionStatus,
    pub summands: u64,
    /// Multisets as sorted pool indices.
    pub decompositions: Vec<Vec<usize>>,
}

/// Every multiset of pool elements summing to `p`. Each pool element has
/// `Z_00 = 1`, so a multiset has exactly `p_00` members.
pub fn decompose_product(p: &IntMatrix, pool: &[ModularInvariant]) -> Decomposition {
    let target = p.first().and_then(|r| r.first()).copied().unwrap_or(0);
    // larger traces first keeps the remainder small early
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(pool[i].trace()), i));
    let mut found = Vec::new();
    let mut chosen = Vec::new();
    let mut rest = p.clone();
    fn fits(rest: &IntMatrix, z: &IntMatrix) -> bool {
        rest.iter()
            .flatten()
            .zip(z.iter().flatten())
            .all(|(a, b)| b <= a)
    }
    fn go(
        start: usize,
        left: u64,
        order: &[usize],
        pool: &[ModularInvariant],
        rest: &mut IntMatrix,
        chosen: &mut Vec<usize>,
        found: &mut Vec<Vec<usize>>,
    ) {
        if left == 0 {
            if rest.iter().flatten().all(|&x| x == 0) {
                let mut m = chosen.clone();
                m.sort();
                found.push(m);
            }
            return;
        }
        for (o, &i) in order.iter().enumerate().skip(start) {
            let z = &pool[i].z;
            if z.len() != rest.len() || !fits(rest, z) {
                continue;
            }
            for (rr, zr) in rest.iter_mut().zip(z) {
                for (a, b) in rr.iter_mut().zip(zr) {
                    *a -= b;
                }
            }
            chosen.push(i);
            go(o, left - 1, order, pool, rest, chosen, found);
            chosen.pop();
            for (rr, zr) in rest.iter_mut().zip(z) {
                for (a, b) in rr.iter_mut().zip(zr) {
                    *a += b;
                }
            }
        }
    }
    if target > 0 {
        go(0, target, &order, pool, &mut rest, &mut chosen, &mut found);
    }
    found.sort();
    found.dedup();
    Decomposition {
        status: if found.is_empty() {
            DecompositionStatus::PoolInsufficient
        } else {
            DecompositionStatus::Found
        },
        summands: target,
        decompositions: found,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toric_oracle() -> Vec<Vec<u64>> {
        crate::verify::TORIC_CAP2_ORACLE
            .iter()
            .map(|r| r.to_vec())
            .collect()
    }

    #[test]
    fn builtins_are_consistent() {
        let (ring, md) = toric_code();
        assert_eq!(ring.rank(), 4);
        assert!(md.quantum_dims().iter().all(|d| (d - 1.0).abs() < 1e-12));
        let (_, fib) = fibonacci();
        assert!((fib.quantum_dims()[1] - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
        let (r3, _) = vec_zn(3).unwrap();
        assert_eq!(r3.fuse(1, 2), vec![(0, 1)]);
        assert!(matches!(builtin("nope"), Err(Error::UnknownBuiltin(_))));
        assert_eq!(builtin("vec_zn(4)").unwrap().1.rank(), 4);
        assert_eq!(builtin("double_z3").unwrap().1.rank(), 9);
    }

    #[test]
    fn verlinde_reproduces_rings() {
        let mut all = vec![toric_code(), fibonacci()];
        for n in 2..=5 {
            all.push(vec_zn(n).unwrap());
            all.push(double_zn(n).unwrap());
        }
        for (ring, md) in &all {
            assert_eq!(&verlinde(md).unwrap(), ring, "{}", md.name);
        }
        let (_, fib) = fibonacci();
        let n = verlinde(&fib).unwrap();
        assert_eq!((n.n(1, 1, 0), n.n(1, 1, 1)), (1, 1));
    }

    #[test]
    fn verlinde_rejects_non_modular() {
        let (_, md) = toric_code();
        let mut s = md.s.clone();
        // a unitary, symmetric S whose Verlinde coefficients are not integral
        let th: f64 = 0.3;
        let rot = CMatrix::from_fn(4, 4, |i, j| {
            let v = match (i, j) {
                (1, 1) | (2, 2) => th.cos(),
                (1, 2) => th.sin(),
                (2, 1) => -th.sin(),
                (a, b) if a == b => 1.0,
                _ => 0.0,
            };
            Cx::new(v, 0.0)
        });
        s = &rot * s * rot.transpose();
        let fake = ModularData {
            s,
            s_exact: None,
            ..md
        };
        assert!(matches!(verlinde(&fake), Err(Error::NotModular(_))));
    }

    #[test]
    fn toric_matches_bruteforce_oracle() {
        let (_, md) = toric_code();
        let e = enumerate_modular_invariants(&md, Some(2)).unwrap();
        assert!(e.exact);
        let got: Vec<Vec<u64>> = e.invariants.iter().map(|z| z.flat()).collect();
        assert_eq!(got, toric_oracle());
        for z in &e.invariants {
            assert!(is_modular_invariant(&md, z));
        }
        for cap in [1, 3, 4] {
            assert_eq!(
                enumerate_modular_invariants(&md, Some(cap))
                    .unwrap()
                    .invariants,
                e.invariants
            );
        }
        assert_eq!(default_cap(&md), 1);
    }

    #[test]
    fn fibonacci_has_only_identity() {
        let (_, md) = fibonacci();
        let e = enumerate_modular_invariants(&md, Some(3)).unwrap();
        assert_eq!(e.invariants, vec![ModularInvariant::identity(2)]);
    }

    #[test]
    fn identity_and_charge_conjugation_present() {
        let mut all = vec![toric_code(), fibonacci()];
        for n in 2..=5 {
            all.push(vec_zn(n).unwrap());
        }
        all.push(double_zn(3).unwrap());
        for (_, md) in &all {
            let e = enumerate_modular_invariants(md, Some(1)).unwrap();
            assert!(
                e.invariants
                    .contains(&ModularInvariant::identity(md.rank())),
                "{}",
                md.name
            );
            let c = ModularInvariant::permutation(&md.charge_conjugation().unwrap());
            assert!(e.invariants.contains(&c), "{}", md.name);
        }
    }

    #[test]
    fn float_fallback_agrees() {
        let (_, md) = toric_code();
        let float = ModularData {
            s_exact: None,
            ..md.clone()
        };
        let a = enumerate_modular_invariants(&md, Some(2)).unwrap();
        let b = enumerate_modular_invariants(&float, Some(2)).unwrap();
        assert!(!b.exact);
        assert_eq!(a.invariants, b.invariants);
    }

    #[test]
    fn compose_and_decompose() {
        let (_, md) = toric_code();
        let pool = enumerate_modular_invariants(&md, Some(2))
            .unwrap()
            .invariants;
        let id = ModularInvariant::identity(4);
        assert_eq!(compose_invariants(&id, &id).unwrap(), id.z);
        let d = decompose_product(&id.z, &pool);
        assert_eq!(d.status, DecompositionStatus::Found);
        let idx = pool.iter().position(|z| *z == id).unwrap();
        assert_eq!(d.decompositions, vec![vec![idx]]);
        for z1 in &pool {
            for z2 in &pool {
                let p = compose_invariants(z1, z2).unwrap();
                let d = decompose_product(&p, &pool);
                assert_eq!(d.status, DecompositionStatus::Found);
                assert!(d.decompositions.iter().all(|m| m.len() as u64 == p[0][0]));
            }
        }
        // condensed invariant: Z Z = 2 Z
        let z = pool
            .iter()
            .position(|z| z.flat() == toric_oracle()[2])
            .unwrap();
        let p = compose_invariants(&pool[z], &pool[z]).unwrap();
        assert_eq!(p[0][0], 2);
        let d = decompose_product(&p, &pool);
        assert!(d.decompositions.contains(&vec![z, z]));
        let lonely = decompose_product(&p, &[id]);
        assert_eq!(lonely.status, DecompositionStatus::PoolInsufficient);
    }

    #[test]
    fn json_round_trip() {
        for name in ["toric_code", "fibonacci", "vec_zn(3)"] {
            let (_, md) = builtin(name).unwrap();
            let s = serde_json::to_string(&md.to_json()).unwrap();
            let back = ModularData::from_json(&serde_json::from_str(&s).unwrap()).unwrap();
            assert_eq!(back.t, md.t);
            assert_eq!(back.s_exact, md.s_exact);
            assert!(max_abs(&(back.s - &md.s)) < 1e-15);
        }
    }

    #[test]
    fn exact_field_identity() {
        // S̃ for Fibonacci squares to (2 + φ) · 1
        let (_, md) = fibonacci();
        let ex = md.s_exact.unwrap();
        let two_phi = &Cyclo::from_int(5, 2) + &golden();
        for i in 0..2 {
            for k in 0..2 {
                let mut acc = Cyclo::zero(5);
                for j in 0..2 {
                    acc = &acc + &(&ex[i][j] * &ex[j][k]);
                }
                let expect = if i == k {
                    two_phi.clone()
                } else {
                    Cyclo::zero(5)
                };
                assert_eq!(acc, expect);
            }
        }
    }
}
