//! Acceptance criteria 1 to 11. Prints one PASS/FAIL line per criterion,
//! followed by the failing sub-checks, and exits nonzero if any fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use wolff_core::par::Execution;
use wolff_core::report::CheckReport;
use wolff_core::suites::*;

const SEED: u64 = 20_261_017;

type Outcome = Result<Vec<CheckReport>, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn lib<E: std::fmt::Display>(r: Result<Vec<CheckReport>, E>) -> Outcome {
    r.map_err(|e| e.to_string())
}

fn fubini() -> Outcome {
    lib(fubini_suite(&FubiniSuite::default(), SEED, Execution::default()))
}

fn summation() -> Outcome {
    lib(summation_suite(&SummationSuite::default(), SEED, Execution::default()))
}

fn proof_constants() -> Outcome {
    lib(a_chain_suite(&AChainSuite::default(), SEED, Execution::default()))
}

fn theorem_a() -> Outcome {
    lib(theorem_a_suite(&TheoremASuite::default(), SEED, Execution::default()))
}

fn bar_oracle() -> Outcome {
    lib(bar_oracle_suite(&BarOracleSuite::default(), SEED, Execution::default()))
}

fn duality() -> Outcome {
    lib(trace_q1_suite(&TraceQ1Suite::default(), SEED, Execution::default()))
}

fn dlbo() -> Outcome {
    lib(dlbo_suite(&DlboSuite::default()))
}

fn counterexample() -> Outcome {
    lib(counterexample_suite(&CounterexampleSuite::default(), Execution::default()))
}

fn closed_forms() -> Outcome {
    lib(closed_form_suite(&ClosedFormSuite::default(), Execution::default()))
}

fn shifted() -> Outcome {
    lib(shifted_suite(&ShiftedSuite::default(), SEED, Execution::default()))
}

const DETERMINISM_SCENARIO: &str = r#"{
  "name": "determinism",
  "dimension": 1,
  "seed": 11,
  "checks": [
    {"type": "fubini", "generator": {"instances": 20}},
    {"type": "theorem_a", "generator": {"instances": 20}},
    {"type": "trace_q1", "generator": {"instances": 10}, "probes": 50},
    {"type": "shifted_average", "shift_samples": 2000},
    {"type": "counterexample", "depths": [4, 6, 8]}
  ]
}"#;

/// Runs the CLI twice per thread count and compares the JSON reports byte for
/// byte. Check outcomes inside the report do not matter here.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("scenario.json");
    std::fs::write(&config, DETERMINISM_SCENARIO).map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for (k, threads) in ["1", "1", "4", "4"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_wolff"))
            .args(["verify", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(&out)
            .args(["--threads", threads])
            .output()
            .map_err(|e| e.to_string())?;
        if status.status.code().is_none_or(|c| c > 1) {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        let json = std::fs::read(out.join("verify.json")).map_err(|e| e.to_string())?;
        let csv = std::fs::read(out.join("verify.csv")).map_err(|e| e.to_string())?;
        reports.push((json, csv));
    }
    let differing = reports.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(vec![CheckReport::count("determinism.differing_reruns", differing)
        .quantity("runs", reports.len() as f64)
        .quantity("json_bytes", reports[0].0.len() as f64)])
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("Fubini energy identity", fubini),
        ("summation by parts", summation),
        ("explicit proof constants", proof_constants),
        ("Theorem A boundedness", theorem_a),
        ("bar field oracle equivalence", bar_oracle),
        ("q=1 duality", duality),
        ("DLBO constants", dlbo),
        ("counterexample", counterexample),
        ("continuous closed forms", closed_forms),
        ("shifted-average inequality", shifted),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(checks) => {
                let bad: Vec<&CheckReport> = checks.iter().filter(|c| !c.pass).collect();
                let verdict = if bad.is_empty() { "PASS" } else { "FAIL" };
                println!(
                    "criterion {:>2} {verdict}: {name} ({} checks, {secs:.2}s)",
                    i + 1,
                    checks.len()
                );
                for c in &bad {
                    println!(
                        "    failed {}: value {} outside [{}, {}]",
                        c.check, c.value, c.lower_band, c.upper_band
                    );
                }
                failed += usize::from(!bad.is_empty());
            }
            Err(e) => {
                println!("criterion {:>2} FAIL: {name} (error: {e})", i + 1);
                failed += 1;
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
