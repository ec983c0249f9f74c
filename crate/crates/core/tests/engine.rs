use std::path::PathBuf;

use pafd::engine::{run, PolicyKind, SimConfig};
use pafd::types::PriorityClass;

fn shipped(name: &str) -> SimConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    SimConfig::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn shipped_configs_are_valid() {
    let cfg = shipped("default.json");
    assert_eq!(cfg.flows.len(), 16);
    assert!((cfg.offered_load() - 1.0).abs() < 1e-6);
    assert_eq!(cfg.policy.kind(), PolicyKind::Pafd);

    let ds = shipped("diffserv.json");
    assert_eq!(ds.policy.kind(), PolicyKind::PafdDs);
    let high = ds.flows.iter().filter(|f| f.priority == Some(PriorityClass::High)).count();
    assert_eq!(high, 8);
}

#[test]
fn every_policy_runs_the_shipped_setup() {
    let base = shipped("default.json");
    for kind in [PolicyKind::Pafd, PolicyKind::PafdDs, PolicyKind::Red, PolicyKind::Td] {
        let mut cfg = base.clone();
        cfg.policy = base.policy.with_kind(kind);
        cfg.duration_us = 5_000_000;
        let r = run(&cfg).unwrap();
        assert!(r.totals.conserved(), "{kind:?}: {:?}", r.totals);
        assert!(r.goodput_total > 0.0);
        assert!(r.throughput_effectiveness <= 1.0);
        assert_eq!(r.flows.len(), 16);
    }
}

#[test]
fn report_survives_json_round_trip() {
    let mut cfg = shipped("diffserv.json");
    cfg.duration_us = 3_000_000;
    let r = run(&cfg).unwrap();
    let text = serde_json::to_string(&r).unwrap();
    let back: pafd::RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, r);
}
