//! Acceptance suite: one PASS/FAIL line per criterion, with runtime budgets.

use anyonforge::verify::{run_all, VerifyConfig};

/// Wall-clock budget in milliseconds per criterion.
fn budget_ms(criterion: u8) -> Option<u128> {
    match criterion {
        1 => Some(5_000),
        2 => Some(60_000),
        3 => Some(1_000),
        4 => Some(120_000),
        5 => Some(60_000),
        9 => Some(30_000),
        _ => None,
    }
}

fn main() {
    let results = run_all(&VerifyConfig::default());
    let mut failed = 0;
    for r in &results {
        let over = budget_ms(r.criterion).filter(|&b| r.elapsed_ms > b);
        let pass = r.pass && over.is_none();
        let mut line = r.line();
        if !pass && r.pass {
            line = line.replacen("PASS", "FAIL", 1);
        }
        match over {
            Some(b) => println!("{line} [{} ms, budget {b} ms exceeded]", r.elapsed_ms),
            None => println!("{line} [{} ms]", r.elapsed_ms),
        }
        if !pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
