use std::path::Path;

use anyonforge::connection::{
    check_flatness, connection_family, flat_connection_a_n, BiUnitaryConnection, ConnectionFamily,
    ConnectionJson, DecomposeOptions,
};
use anyonforge::graph::{dynkin_by_name, parse_dynkin, pf_data, Series};
use anyonforge::modular::{
    builtin, compose_invariants, decompose_product, enumerate_modular_invariants,
    is_modular_invariant, DecompositionStatus, IntMatrix, ModularData, ModularDataJson,
    ModularInvariant,
};
use anyonforge::path_algebra::bratteli;
use anyonforge::tensor_network::{pmpo, pmpo_rank, projector_residuals, projector_spot_check};
use anyonforge::tube::{
    anyons, cross_check_double, f_symbols_builtin, family_f_symbols, tube_algebra, AnyonOptions,
    FSymbolData, FSymbolJson,
};
use anyonforge::verify::{run_all, VerifyConfig};
use serde_json::{json, Value};

use crate::config::Settings;
use crate::report::{Outcome, Verdict};
use crate::{CliError, Command, ConnCmd, FSource, GraphCmd, ModinvCmd, TubeCmd};

type Res<T> = Result<T, CliError>;

/// Largest input dimension for matrix-free projector checks.
const SPOT_LIMIT: f64 = (1u64 << 22) as f64;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Res<T> {
    let text = std::fs::read_to_string(path).map_err(anyonforge::Error::Io)?;
    Ok(serde_json::from_str(&text).map_err(anyonforge::Error::Json)?)
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Res<()> {
    let text = serde_json::to_string_pretty(v).map_err(anyonforge::Error::Json)?;
    std::fs::write(path, text + "\n").map_err(anyonforge::Error::Io)?;
    Ok(())
}

fn a_series(name: &str) -> Res<usize> {
    match parse_dynkin(name)? {
        (Series::A, n) => Ok(n),
        _ => Err(CliError::Usage(format!(
            "only the A series has a built-in flat connection, got `{name}`"
        ))),
    }
}

fn family(name: &str, s: &Settings) -> Res<ConnectionFamily<f64>> {
    let c = flat_connection_a_n::<f64>(a_series(name)?)?;
    Ok(connection_family(
        &c,
        s.depth_cap,
        &DecomposeOptions {
            seed: s.seed,
            ..DecomposeOptions::default()
        },
    )?)
}

fn modular_data(name_or_path: &str) -> Res<ModularData> {
    let p = Path::new(name_or_path);
    if p.extension().is_some_and(|e| e == "json") || p.exists() {
        let j: ModularDataJson = read_json(p)?;
        return Ok(ModularData::from_json(&j)?);
    }
    Ok(builtin(name_or_path)?.1)
}

fn matrix_rows(z: &IntMatrix) -> String {
    z.iter()
        .map(|r| {
            r.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join(";")
}

pub fn dispatch(cmd: &Command, s: &Settings) -> Res<Outcome> {
    match cmd {
        Command::Graph(GraphCmd::Pf { dynkin, star }) => graph_pf(dynkin, star.as_deref(), s),
        Command::Conn(ConnCmd::Make { dynkin, out }) => conn_make(dynkin, out.as_deref(), s),
        Command::Conn(ConnCmd::Check { file, flat, rect }) => conn_check(file, *flat, rect, s),
        Command::Bratteli { dynkin, kmax } => bratteli_cmd(dynkin, *kmax),
        Command::Pmpo {
            dynkin,
            k,
            report,
            dump,
        } => pmpo_cmd(dynkin, *k, report, dump.as_deref(), s),
        Command::Modinv(ModinvCmd::Enumerate { builtin, md }) => {
            modinv_enumerate(builtin.as_deref(), md.as_deref(), s)
        }
        Command::Modinv(ModinvCmd::Compose { a, b, pool_builtin }) => {
            modinv_compose(a, b, pool_builtin.as_deref(), s)
        }
        Command::Tube(TubeCmd::Anyons { source }) => tube_anyons(source, s),
        Command::Tube(TubeCmd::Crosscheck { source, md }) => tube_crosscheck(source, md, s),
        Command::VerifyAll { quick } => verify_all(*quick, s),
    }
}

fn graph_pf(name: &str, star: Option<&str>, s: &Settings) -> Res<Outcome> {
    let mut g = dynkin_by_name(name)?;
    if let Some(label) = star {
        let v = g
            .index_of(label)
            .ok_or_else(|| CliError::Usage(format!("no vertex `{label}` in {name}")))?;
        g = g.with_star(v)?;
    }
    let pf = pf_data::<f64>(&g)?;
    let mut table = format!(
        "beta\t{:.12}\nindex\t{:.12}\nvertex\tmu\n",
        pf.beta,
        pf.beta * pf.beta
    );
    let mut mu = serde_json::Map::new();
    for (v, m) in pf.mu.iter().enumerate() {
        table.push_str(&format!("{}\t{:.12}\n", g.label(v), m));
        mu.insert(g.label(v).to_string(), json!(m));
    }
    Ok(Outcome {
        results: json!({
            "graph": name,
            "star": g.label(g.star()),
            "beta": pf.beta,
            "index": pf.beta * pf.beta,
            "mu": mu,
            "iterations": pf.iterations,
        }),
        table: Some(table),
        verdicts: vec![Verdict::below("pf_eigen_residual", pf.residual, s.tol_pf)],
    })
}

fn conn_make(name: &str, out: Option<&Path>, s: &Settings) -> Res<Outcome> {
    let c = flat_connection_a_n::<f64>(a_series(name)?)?;
    let bu = c.check_biunitarity()?;
    let j = c.to_json();
    let mut results = json!({
        "graph": name,
        "cells": c.cells().len(),
        "statistical_dimension": c.statistical_dimension(),
        "unitarity": bu.unitarity,
        "reflection": bu.reflection,
    });
    match out {
        Some(p) => {
            write_json(p, &j)?;
            results["written"] = json!(p.display().to_string());
        }
        None => {
            results["connection"] = serde_json::to_value(&j).map_err(anyonforge::Error::Json)?
        }
    }
    let table = format!(
        "graph\t{name}\ncells\t{}\nstatistical_dimension\t{:.12}\n",
        c.cells().len(),
        c.statistical_dimension()
    );
    Ok(Outcome {
        results,
        table: Some(table),
        verdicts: vec![Verdict::below("biunitarity", bu.max, s.tol_biunitary)],
    })
}

fn parse_rect(r: &str) -> Res<(usize, usize)> {
    let bad = || CliError::Usage(format!("--rect expects KxL, got `{r}`"));
    let (a, b) = r.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn conn_check(file: &Path, flat: bool, rect: &str, s: &Settings) -> Res<Outcome> {
    let j: ConnectionJson = read_json(file)?;
    let c = BiUnitaryConnection::<f64>::from_json(&j)?;
    let bu = c.check_biunitarity()?;
    let mut results = json!({
        "file": file.display().to_string(),
        "unitarity": bu.unitarity,
        "reflection": bu.reflection,
        "statistical_dimension": c.statistical_dimension(),
    });
    let mut verdicts = vec![Verdict::below("biunitarity", bu.max, s.tol_biunitary)];
    if flat {
        let (k, l) = parse_rect(rect)?;
        let f = check_flatness(&c, k, l, s.tol_flat)?;
        results["flatness"] = json!({"residual": f.residual, "kmax": k, "lmax": l});
        verdicts.push(Verdict::below("flatness", f.residual, s.tol_flat));
    }
    Ok(Outcome {
        results,
        table: None,
        verdicts,
    })
}

fn bratteli_cmd(name: &str, kmax: usize) -> Res<Outcome> {
    let g = dynkin_by_name(name)?;
    let b = bratteli(&g, kmax);
    Ok(Outcome {
        results: serde_json::to_value(&b).map_err(anyonforge::Error::Json)?,
        table: Some(b.to_tsv()),
        verdicts: vec![Verdict::holds("inclusion_recurrence", b.recurrence_holds())],
    })
}

fn pmpo_cmd(
    name: &str,
    k: usize,
    report: &[String],
    dump: Option<&Path>,
    s: &Settings,
) -> Res<Outcome> {
    let f = family(name, s)?;
    let p = pmpo(&f, k)?;
    let mut results = json!({
        "graph": name,
        "k": k,
        "members": f.len(),
        "bond_dim": p.sites[0].left,
        "phys_dim": p.sites[0].phys_in,
    });
    let mut table = String::new();
    let mut verdicts = Vec::new();
    for r in report {
        match r.trim() {
            "trace" => {
                let rank = pmpo_rank(&f, k)?;
                table.push_str(&format!(
                    "trace\t{:.6}\nnearest\t{}\n",
                    rank.trace, rank.nearest
                ));
                results["rank"] = serde_json::to_value(rank).map_err(anyonforge::Error::Json)?;
                verdicts.push(Verdict::below(
                    "rank_integrality",
                    rank.distance,
                    s.tol_rank,
                ));
            }
            "projector" => {
                // dense on the support when it fits, matrix-free otherwise
                match projector_residuals(&p) {
                    Ok((sq, herm)) => {
                        table
                            .push_str(&format!("idempotence\t{sq:.3e}\nhermiticity\t{herm:.3e}\n"));
                        results["projector"] =
                            json!({"mode": "dense", "idempotence": sq, "hermiticity": herm});
                        verdicts.push(Verdict::below("idempotence", sq, s.tol_projector));
                        verdicts.push(Verdict::below("hermiticity", herm, s.tol_projector));
                    }
                    Err(anyonforge::Error::Size(_)) if p.log_dim_in() <= SPOT_LIMIT.ln() => {
                        let spot = projector_spot_check(&p, s.spot_samples, s.seed)?;
                        table.push_str(&format!("spot_idempotence\t{spot:.3e}\n"));
                        results["projector"] =
                            json!({"mode": "spot", "samples": s.spot_samples, "idempotence": spot});
                        verdicts.push(Verdict::below("idempotence", spot, s.tol_projector));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown report `{other}` (expected trace, projector)"
                )))
            }
        }
    }
    if let Some(path) = dump {
        write_json(path, &p.sites[0].to_json())?;
        results["dump"] = json!(path.display().to_string());
    }
    Ok(Outcome {
        results,
        table: Some(table),
        verdicts,
    })
}

fn modinv_enumerate(name: Option<&str>, file: Option<&Path>, s: &Settings) -> Res<Outcome> {
    let md = match (name, file) {
        (Some(n), _) => builtin(n)?.1,
        (None, Some(p)) => ModularData::from_json(&read_json::<ModularDataJson>(p)?)?,
        (None, None) => return Err(CliError::Usage("need --builtin or --md".into())),
    };
    let e = enumerate_modular_invariants(&md, s.cap)?;
    let mut table = format!("# {}\tcap={}\texact={}\n", md.name, e.cap, e.exact);
    table.push_str("index\ttrace\tZ\n");
    for (i, z) in e.invariants.iter().enumerate() {
        table.push_str(&format!("{i}\t{}\t{}\n", z.trace(), matrix_rows(&z.z)));
    }
    let all_ok = e.invariants.iter().all(|z| is_modular_invariant(&md, z));
    let has_id = e
        .invariants
        .contains(&ModularInvariant::identity(md.rank()));
    Ok(Outcome {
        results: serde_json::to_value(&e).map_err(anyonforge::Error::Json)?,
        table: Some(table),
        verdicts: vec![
            Verdict::holds("commutes_with_s_and_t", all_ok),
            Verdict::holds("identity_present", has_id),
        ],
    })
}

fn read_invariant(path: &Path) -> Res<ModularInvariant> {
    let v: Value = read_json(path)?;
    let z: IntMatrix = match v.get("z") {
        Some(z) => serde_json::from_value(z.clone()),
        None => serde_json::from_value(v),
    }
    .map_err(anyonforge::Error::Json)?;
    Ok(ModularInvariant { z })
}

fn modinv_compose(a: &Path, b: &Path, pool: Option<&str>, s: &Settings) -> Res<Outcome> {
    let (z1, z2) = (read_invariant(a)?, read_invariant(b)?);
    let p = compose_invariants(&z1, &z2)?;
    let mut table = format!("product\t{}\nsummands\t{}\n", matrix_rows(&p), p[0][0]);
    let mut results = json!({"product": p, "summands": p[0][0]});
    let mut verdicts = Vec::new();
    if let Some(name) = pool {
        let md = builtin(name)?.1;
        let pool = enumerate_modular_invariants(&md, s.cap)?.invariants;
        let d = decompose_product(&p, &pool);
        for m in &d.decompositions {
            let idx: Vec<String> = m.iter().map(|i| i.to_string()).collect();
            table.push_str(&format!("decomposition\t{}\n", idx.join(" ")));
        }
        results["pool"] = serde_json::to_value(&pool).map_err(anyonforge::Error::Json)?;
        results["decomposition"] = serde_json::to_value(&d).map_err(anyonforge::Error::Json)?;
        verdicts.push(Verdict::holds(
            "decomposition_found",
            d.status == DecompositionStatus::Found,
        ));
    }
    Ok(Outcome {
        results,
        table: Some(table),
        verdicts,
    })
}

fn f_source(src: &FSource, s: &Settings) -> Res<FSymbolData<f64>> {
    if let Some(name) = &src.builtin {
        return Ok(f_symbols_builtin(name)?);
    }
    if let Some(path) = &src.fsymbols {
        return Ok(FSymbolData::from_json(&read_json::<FSymbolJson>(path)?)?);
    }
    let name = src.dynkin.as_deref().expect("clap enforces one source");
    Ok(family_f_symbols(&family(name, s)?, Default::default())?)
}

fn tube_anyons(src: &FSource, s: &Settings) -> Res<Outcome> {
    let f = f_source(src, s)?;
    let pent = f.pentagon_residual();
    let t = tube_algebra(&f)?;
    let checks = t.checks();
    let spec = anyons(
        &t,
        &AnyonOptions {
            seed: s.seed,
            ..AnyonOptions::default()
        },
    )?;
    let sq: usize = spec.block_dims.iter().map(|d| d * d).sum();
    let dims: Vec<String> = spec.block_dims.iter().map(|d| d.to_string()).collect();
    let table = format!(
        "labels\t{}\ntube_dim\t{}\nanyons\t{}\nblock_dims\t{}\n",
        f.ring().labels().join(" "),
        t.dim(),
        spec.count,
        dims.join(" ")
    );
    Ok(Outcome {
        results: json!({
            "labels": f.ring().labels(),
            "pentagon": pent,
            "unitarity": f.unitarity_residual(),
            "checks": checks,
            "spectrum": spec,
        }),
        table: Some(table),
        verdicts: vec![
            Verdict::below("pentagon", pent, s.tol_tube),
            Verdict::below("associativity", checks.associativity, s.tol_tube),
            Verdict::below("unit", checks.unit, s.tol_tube),
            Verdict::below(
                "star",
                checks.star_involution.max(checks.star_antimultiplicative),
                s.tol_tube,
            ),
            Verdict::holds("block_dims_fill_tube", sq == t.dim()),
        ],
    })
}

fn tube_crosscheck(src: &FSource, md: &str, s: &Settings) -> Res<Outcome> {
    let f = f_source(src, s)?;
    let t = tube_algebra(&f)?;
    let md = modular_data(md)?;
    let c = cross_check_double(
        &t,
        &md,
        &AnyonOptions {
            seed: s.seed,
            ..AnyonOptions::default()
        },
    )?;
    let table = format!(
        "modular_data\t{}\nanyons\t{}\nlabels\t{}\nsum_dims_sq\t{}\ntube_dim\t{}\n",
        md.name, c.anyon_count, c.label_count, c.dims_square_sum, c.tube_dim
    );
    Ok(Outcome {
        results: serde_json::to_value(&c).map_err(anyonforge::Error::Json)?,
        table: Some(table),
        verdicts: vec![
            Verdict::holds("anyon_count_matches", c.count_matches),
            Verdict::holds("block_dims_fill_tube", c.dims_consistent),
            Verdict::holds("verlinde_ring", c.verlinde_ring_valid),
        ],
    })
}

fn verify_all(quick: bool, s: &Settings) -> Res<Outcome> {
    let results = run_all(&VerifyConfig {
        quick,
        seed: s.seed,
    });
    let mut table = String::new();
    for r in &results {
        table.push_str(&r.line());
        table.push('\n');
    }
    let verdicts = results
        .iter()
        .map(|r| Verdict {
            name: format!("{:02}_{}", r.criterion, r.name),
            pass: r.pass,
            residual: r.residual,
            tolerance: r.tolerance,
        })
        .collect();
    Ok(Outcome {
        results: serde_json::to_value(&results).map_err(anyonforge::Error::Json)?,
        table: Some(table),
        verdicts,
    })
}
