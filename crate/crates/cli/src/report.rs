use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use crate::config::{Format, Settings};

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl Verdict {
    pub fn below(name: &str, residual: f64, tolerance: f64) -> Self {
        Verdict {
            name: name.to_string(),
            pass: residual < tolerance,
            residual: Some(residual),
            tolerance: Some(tolerance),
        }
    }

    pub fn holds(name: &str, pass: bool) -> Self {
        Verdict {
            name: name.to_string(),
            pass,
            residual: None,
            tolerance: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: Vec<String>,
    pub inputs: Settings,
    pub results: Value,
    pub residuals: BTreeMap<String, f64>,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
    /// Only with `--timing`, so default reports stay byte-identical.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u128>,
}

/// What a command hands back: structured results plus an optional table.
pub struct Outcome {
    pub results: Value,
    pub table: Option<String>,
    pub verdicts: Vec<Verdict>,
}

impl RunReport {
    pub fn new(command: Vec<String>, inputs: Settings, out: Outcome) -> (Self, Option<String>) {
        let residuals = out
            .verdicts
            .iter()
            .filter_map(|v| v.residual.map(|r| (v.name.clone(), r)))
            .collect();
        let pass = out.verdicts.iter().all(|v| v.pass);
        (
            RunReport {
                command,
                inputs,
                results: out.results,
                residuals,
                verdicts: out.verdicts,
                pass,
                elapsed_ms: None,
            },
            out.table,
        )
    }

    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.pass)
    }

    pub fn render(&self, format: Format, table: Option<&str>) -> String {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            Format::Tsv => {
                let mut s = String::new();
                match table {
                    Some(t) => s.push_str(t),
                    None => s.push_str(&flatten_tsv(&self.results)),
                }
                for v in &self.verdicts {
                    s.push_str(&format!(
                        "# {}\t{}",
                        if v.pass { "PASS" } else { "FAIL" },
                        v.name
                    ));
                    if let Some(r) = v.residual {
                        s.push_str(&format!("\tresidual={r:.3e}"));
                    }
                    if let Some(t) = v.tolerance {
                        s.push_str(&format!("\ttol={t:.0e}"));
                    }
                    s.push('\n');
                }
                if let Some(ms) = self.elapsed_ms {
                    s.push_str(&format!("# elapsed_ms\t{ms}\n"));
                }
                s
            }
        }
    }
}

/// `key<TAB>value` lines for a JSON object, dotted keys for nesting.
fn flatten_tsv(v: &Value) -> String {
    fn go(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    go(&key, x, out);
                }
            }
            Value::Array(a) if a.iter().all(|x| !x.is_object() && !x.is_array()) => {
                let items: Vec<String> = a.iter().map(scalar).collect();
                out.push_str(&format!("{prefix}\t{}\n", items.join(" ")));
            }
            Value::Array(a) => {
                for (i, x) in a.iter().enumerate() {
                    go(&format!("{prefix}.{i}"), x, out);
                }
            }
            _ => out.push_str(&format!("{prefix}\t{}\n", scalar(v))),
        }
    }
    fn scalar(v: &Value) -> String {
        match v {
            Value::String(s) => s.clone(),
            Value::Number(n) => match n.as_f64() {
                Some(f) if !n.is_i64() && !n.is_u64() => format!("{f:.6}"),
                _ => n.to_string(),
            },
            other => other.to_string(),
        }
    }
    let mut out = String::new();
    go("", v, &mut out);
    out
}
