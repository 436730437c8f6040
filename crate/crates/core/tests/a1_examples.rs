//! Golden checks on the worked examples in `fixtures/`.

use std::path::Path;

use icr::{
    enumerate_cycles, kl, parse_model, power_iterate, run_icr, run_plan, stationary_set, total_variation,
    validate_cycle, validate_sufficiency, CsmModel, Distribution, FlagKind, IcrConfig, InitSpec, SynthesisPlan,
    Verdict,
};

fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
}

fn model(name: &str) -> CsmModel {
    parse_model(&fixture(name)).unwrap()
}

fn dist(m: &CsmModel, name: &str) -> Distribution {
    icr::distribution_from_json(m, &fixture(name)).unwrap()
}

fn plan(name: &str) -> SynthesisPlan {
    SynthesisPlan::parse(&fixture(name)).unwrap()
}

fn tight() -> IcrConfig {
    IcrConfig { tol_m: 1e-15, tol_pi: 1e-15, ..IcrConfig::default() }
}

fn final_joint(m: &CsmModel, p: &SynthesisPlan, cfg: &IcrConfig) -> Distribution {
    let out = run_plan(m, p, cfg).unwrap();
    let last = out.last().unwrap();
    assert!(last.is_joint(m), "{} is not a joint", last.id);
    last.dist.clone()
}

#[test]
fn example1_pair_converges_at_cycle_six() {
    let m = model("example1_pair.json");
    let cycle = enumerate_cycles(&m, 10).unwrap().remove(0);
    let run = run_icr(&m, &cycle, &IcrConfig::default()).unwrap();
    assert_eq!(run.stop_cycle, 6);
    assert_eq!(run.compatibility, Verdict::Compatible);
}

#[test]
fn example1_plan_recovers_joint() {
    let m = model("example1.json");
    let joint = dist(&m, "example1_joint.json");
    let got = final_joint(&m, &plan("example1_plan.json"), &tight());
    assert!(total_variation(&got, &joint).unwrap() < 1e-8);
    let report = validate_sufficiency(&m, &plan("example1_plan.json"));
    assert!(report.sufficient && report.flags.is_empty(), "{report:?}");
}

#[test]
fn example1_incompatible_plateau() {
    let m = model("example1_incompatible.json");
    let cycle = enumerate_cycles(&m, 10).unwrap().remove(0);
    let run = run_icr(&m, &cycle, &IcrConfig::default()).unwrap();
    assert_eq!(run.compatibility, Verdict::Incompatible);
    let pi = run.final_pi();
    assert!((0.92..0.95).contains(&pi), "{pi}");
    let set = stationary_set(&run).unwrap();
    assert_eq!(set.members.len(), 2);
}

#[test]
fn example2_has_two_cycles_both_recovering_joint() {
    let m = model("example2.json");
    let joint = dist(&m, "example2_joint.json");
    let cycles = enumerate_cycles(&m, 100).unwrap();
    assert_eq!(cycles.len(), 2);
    for c in &cycles {
        let run = run_icr(&m, c, &tight()).unwrap();
        assert_eq!(run.compatibility, Verdict::Compatible);
        let full = run.iterates.iter().find(|q| q.scope().len() == 5 && q.given().is_empty()).unwrap();
        assert!(total_variation(full, &joint).unwrap() < 1e-8);
    }
}

#[test]
fn example3_plan_recovers_joint() {
    let m = model("example3.json");
    let joint = dist(&m, "example3_joint.json");
    // The full model has no cycle through all five blocks.
    assert!(!icr::has_cycle_through_all(&m).unwrap());
    let p = plan("example3_plan.json");
    assert!(validate_sufficiency(&m, &p).sufficient);
    let got = final_joint(&m, &p, &tight());
    assert!(total_variation(&got, &joint).unwrap() < 1e-8);
}

#[test]
fn example4_is_assumption_dependent_but_recovers_joint() {
    let m = model("example4.json");
    let joint = dist(&m, "example4_joint.json");
    let p = plan("example4_plan.json");
    let report = validate_sufficiency(&m, &p);
    assert!(!report.sufficient, "{report:?}");
    assert!(report.flags.iter().any(|f| f.kind == FlagKind::AssumptionDependent && f.subject == "p123"));
    assert!(report.flags.iter().any(|f| f.kind == FlagKind::UnusedBlock && f.subject == "f6|12345"));
    // Under the declared assumption the fixture's joint is still recovered.
    let got = final_joint(&m, &p, &tight());
    assert!(total_variation(&got, &joint).unwrap() < 1e-8);
}

#[test]
fn example5_sticky_icr_beats_power_method() {
    let m = model("example5_sticky.json");
    let pi = dist(&m, "example5_joint.json");
    let cycle = validate_cycle(&m, &["f1|2", "f2|1"]).unwrap();
    let cfg = IcrConfig { init: InitSpec::last_block(InitSpec::Uniform), ..IcrConfig::default() };
    let run = run_icr(&m, &cycle, &cfg).unwrap();
    assert!(run.m_trace[4] < 1e-9, "{:?}", run.m_trace);
    let power = power_iterate(&m, &cycle, 1e-10, 100).unwrap();
    assert!(power.converged && power.iterations <= 8, "{}", power.iterations);
    assert!(kl(&power.distribution, &pi).unwrap().symmetric < 1e-10);
}

fn example6_run(model_name: &str, init: &str) -> icr::IcrRun {
    let m = model(model_name);
    let cycle = enumerate_cycles(&m, 100)
        .unwrap()
        .into_iter()
        .find(|c| c.is_rotation_of(&["f1|234", "f2|134", "f3|124", &m.blocks()[3].id]))
        .unwrap();
    let start = dist(&m, &format!("example6_init_{init}.json"));
    let cfg = IcrConfig { init: InitSpec::last_block(InitSpec::Distribution(start)), ..IcrConfig::default() };
    run_icr(&m, &cycle, &cfg).unwrap()
}

#[test]
fn example6_a1_is_compatible_but_init_dependent() {
    let u = example6_run("example6_a1.json", "u");
    let w = example6_run("example6_a1.json", "w");
    assert_eq!(u.compatibility, Verdict::Compatible);
    assert_eq!(w.compatibility, Verdict::Compatible);
    let d = kl(u.iterates.last().unwrap(), w.iterates.last().unwrap()).unwrap().symmetric;
    assert!((d - 0.1155).abs() < 1e-3, "{d}");
}

#[test]
fn example6_a2_plateaus_depend_on_init() {
    let expect = [("u", 0.01071), ("v", 0.01071), ("w", 0.01428)];
    for (init, pi) in expect {
        let run = example6_run("example6_a2.json", init);
        assert_eq!(run.compatibility, Verdict::Incompatible, "{init}");
        assert!((run.final_pi() - pi).abs() < 5e-5, "{init}: {}", run.final_pi());
    }
}
