mod common;

use common::{oracle_mismatch, run};
use vspan_core::simgen::ScenarioKind;

#[test]
fn every_scenario_matches_its_sidecar() {
    let mut failures = Vec::new();
    for kind in ScenarioKind::ALL {
        for seed in 0..4 {
            let (out, an) = run(kind, seed);
            if let Some(m) = oracle_mismatch(&out, &an) {
                failures.push(format!("{kind} seed {seed}: {m}"));
            }
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn oracle_detects_perturbation() {
    let (mut out, an) = run(ScenarioKind::Healthy, 9);
    assert!(an.recon.ops().count() > 20);
    assert!(oracle_mismatch(&out, &an).is_none());
    out.truth.ops[3].end_ts += 1;
    assert!(oracle_mismatch(&out, &an).is_some());
    let (mut out, an) = run(ScenarioKind::PromiseLoop, 9);
    out.truth.contexts[2].parent = None;
    assert!(oracle_mismatch(&out, &an).is_some());
}
