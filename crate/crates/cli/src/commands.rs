use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use icr::{
    collect_ensemble, compare_report, distribution_from_json, distribution_to_json, enumerate_cycles, optimize_mixture,
    parse_model, run_icr, run_plan, stationary_set, validate_cycle, validate_sufficiency, CompareConfig, CsmModel,
    Distribution, IcrConfig, IcrError, IcrRun, InitSpec, Measure, SynthesisPlan, UpdateCycle, Verdict,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::{BenchArgs, CliError, CyclesArgs, EnsembleArgs, Global, PlanArgs, RunArgs, ValidateArgs};

/// First line of every trace CSV.
pub const TRACE_SCHEMA: &str = "# icr-trace v1";
/// Cycles `run` executes unless `--all-cycles` is given.
const DEFAULT_CYCLE_CAP: usize = 24;

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_model(path: &Path) -> Result<CsmModel> {
    Ok(parse_model(&read(path)?)?)
}

fn load_distribution(m: &CsmModel, path: &Path) -> Result<Distribution> {
    Ok(distribution_from_json(m, &read(path)?)?)
}

fn distribution_value(m: &CsmModel, d: &Distribution) -> Value {
    serde_json::from_str(&distribution_to_json(m, d)).expect("distribution JSON is valid")
}

/// Rotation tags and plan ids double as file names.
fn file_name(id: &str) -> String {
    format!("{}.json", id.replace(['/', '\\'], "_"))
}

fn pool(g: &Global) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(g.threads).build().map_err(|e| CliError::Usage(e.to_string()))
}

fn print_json(v: &Value) {
    println!("{v}");
}

pub fn validate(_g: &Global, a: &ValidateArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let first = enumerate_cycles(&m, 1)?;
    let mut out = json!({
        "variables": m.variables(),
        "blocks": m.blocks().iter().map(|b| b.id.as_str()).collect::<Vec<_>>(),
        "class": m.classify(),
        "delta": m.names(m.delta()),
        "warnings": m.lint(),
        "has_cycle": !first.is_empty(),
    });
    let mut insufficient = None;
    if let Some(path) = &a.plan {
        let plan = SynthesisPlan::parse(&read(path)?)?;
        let report = validate_sufficiency(&m, &plan);
        if !report.sufficient {
            let subjects: Vec<String> = report
                .flags
                .iter()
                .filter(|f| f.kind.blocks_sufficiency())
                .map(|f| format!("{}: {}", f.subject, f.message))
                .collect();
            insufficient = Some(subjects.join("; "));
        }
        out["plan"] = serde_json::to_value(&report).expect("report serializes");
    }
    print_json(&out);
    match insufficient {
        Some(why) => Err(IcrError::Validation(format!("plan is not sufficient: {why}")).into()),
        None => Ok(()),
    }
}

pub fn cycles(_g: &Global, a: &CyclesArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    for c in enumerate_cycles(&m, a.limit)? {
        print_json(&json!({ "order": c.order, "delta": m.names(&c.delta), "edges": c.edges }));
    }
    Ok(())
}

fn parse_init(g: &Global, m: &CsmModel, spec: &str) -> Result<InitSpec> {
    Ok(match spec {
        "uniform" => InitSpec::Uniform,
        "last-block" => InitSpec::last_block(InitSpec::Uniform),
        "random" => InitSpec::SeededRandom(g.seed),
        path => InitSpec::Distribution(load_distribution(m, Path::new(path))?),
    })
}

fn selected_cycles(m: &CsmModel, order: Option<&[String]>, cap: usize) -> Result<Vec<UpdateCycle>> {
    if let Some(order) = order {
        return Ok(vec![validate_cycle(m, order)?]);
    }
    let found = enumerate_cycles(m, cap)?;
    if found.is_empty() {
        return Err(IcrError::NoCycle.into());
    }
    Ok(found)
}

fn summary(r: usize, run: &IcrRun) -> Value {
    json!({
        "run": r,
        "cycle": run.cycle.order,
        "converged": run.converged,
        "stop_cycle": run.stop_cycle,
        "cycles_run": run.m_trace.len(),
        "M": run.final_m(),
        "Pi": run.final_pi(),
        "verdict": run.compatibility,
    })
}

fn trace_csv(runs: &[IcrRun]) -> String {
    let mut s = format!("{TRACE_SCHEMA}\nrun,t,M,Pi\n");
    for (r, run) in runs.iter().enumerate() {
        for (t, (m, pi)) in run.m_trace.iter().zip(&run.pi_trace).enumerate() {
            let _ = writeln!(s, "{r},{t},{m:e},{pi:e}");
        }
    }
    s
}

pub fn run(g: &Global, a: &RunArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let cap = if a.all_cycles { usize::MAX } else { DEFAULT_CYCLE_CAP };
    let cycles = selected_cycles(&m, a.cycle.as_deref(), cap)?;
    let cfg = IcrConfig {
        tol_m: a.tol,
        tol_pi: a.tol,
        max_cycles: a.max_cycles as usize,
        init: parse_init(g, &m, &a.init)?,
        keep_history: false,
    };
    let runs = pool(g)?.install(|| cycles.par_iter().map(|c| run_icr(&m, c, &cfg)).collect::<icr::Result<Vec<_>>>())?;

    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let trace = a.trace.clone().unwrap_or_else(|| a.out.join("trace.csv"));
    write(&trace, &trace_csv(&runs))?;

    let mut unconverged = 0;
    let mut incompatible = Vec::new();
    for (r, run) in runs.iter().enumerate() {
        print_json(&summary(r, run));
        if !run.converged {
            unconverged += 1;
            continue;
        }
        if run.compatibility == Verdict::Incompatible {
            incompatible.push(run.cycle.order.join(","));
        }
        match stationary_set(run) {
            Ok(set) => {
                for (tag, d) in set.tags.iter().zip(&set.members) {
                    write(&a.out.join(file_name(tag)), &distribution_to_json(&m, d))?;
                }
            }
            Err(e) => log::warn!("cycle {}: no stationary set written: {e}", run.cycle.order.join(",")),
        }
    }
    if a.expect_compatible && !incompatible.is_empty() {
        return Err(CliError::Incompatible(format!("incompatible along {}", incompatible.join(" and "))));
    }
    if unconverged > 0 {
        return Err(IcrError::NonConvergence { iterations: cfg.max_cycles }.into());
    }
    Ok(())
}

pub fn plan(_g: &Global, a: &PlanArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let plan = SynthesisPlan::parse(&read(&a.plan)?)?;
    let report = validate_sufficiency(&m, &plan);
    for f in &report.flags {
        log::warn!("{}: {}", f.subject, f.message);
    }
    let cfg = IcrConfig { tol_m: a.tol, tol_pi: a.tol, ..IcrConfig::default() };
    let produced = run_plan(&m, &plan, &cfg)?;
    for i in &produced {
        print_json(&json!({
            "id": i.id,
            "provenance": i.provenance,
            "scope": m.names(i.dist.scope()),
            "given": m.names(i.dist.given()),
            "joint": i.is_joint(&m),
        }));
        if let Some(dir) = &a.out {
            write(&dir.join(file_name(&i.id)), &distribution_to_json(&m, &i.dist))?;
        }
    }
    Ok(())
}

pub fn ensemble(g: &Global, a: &EnsembleArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let measure: Measure = a.measure.parse()?;
    let cycles = selected_cycles(&m, None, a.limit)?;
    let cfg = IcrConfig { tol_m: a.tol, tol_pi: a.tol, ..IcrConfig::default() };
    // One ensemble per cycle in parallel, merged in cycle order.
    let parts = pool(g)?.install(|| {
        cycles
            .par_iter()
            .map(|c| match collect_ensemble(&m, std::slice::from_ref(c), &cfg) {
                Ok(e) => Ok(Some(e)),
                // A cycle whose members all leave out some variable adds nothing.
                Err(IcrError::Validation(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<icr::Result<Vec<_>>>()
    })?;
    let e = parts
        .into_iter()
        .flatten()
        .reduce(|mut acc, p| {
            acc.members.extend(p.members);
            acc.sources.extend(p.sources);
            acc
        })
        .ok_or_else(|| IcrError::Validation("no stationary member covers every variable".into()))?;
    let mix = optimize_mixture(&e, &m, measure)?;
    let out = json!({
        "measure": mix.measure,
        "deviance": mix.deviance,
        "weights": mix.weights,
        "sources": e.sources,
        "mixture": distribution_value(&m, &mix.mixture),
    });
    match &a.out {
        Some(path) => write(path, &serde_json::to_string_pretty(&out).expect("result serializes")),
        None => {
            print_json(&out);
            Ok(())
        }
    }
}

pub fn bench(g: &Global, a: &BenchArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let cycle = selected_cycles(&m, a.cycle.as_deref(), 1)?.remove(0);
    let reference = a.reference.as_deref().map(|p| load_distribution(&m, p)).transpose()?;
    let cfg = CompareConfig {
        icr: IcrConfig { tol_m: a.tol, tol_pi: a.tol, ..IcrConfig::default() },
        gs_batch: a.gs_n as usize,
        gs_batches: a.gs_batches as usize,
        gs_burn_in: a.gs_burnin as usize,
        seed: g.seed,
        chains: a.seeds,
        reference,
        ..CompareConfig::default()
    };
    let report = compare_report(&m, &cycle, &cfg)?;
    if report.reducible_warning {
        log::warn!("the Gibbs kernel is reducible; chains may not reach the reference");
    }
    log::info!(
        "wall seconds: icr {:e}, power {:e}, gibbs {:e}",
        report.icr_seconds,
        report.power_seconds,
        report.gs_seconds
    );
    match &a.out {
        Some(path) => write(path, &report.to_csv()),
        None => {
            print!("{}", report.to_csv());
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names_drop_path_separators() {
        assert_eq!(file_name("p2/p1/f1|2345"), "p2_p1_f1|2345.json");
        assert_eq!(file_name("f2|1,f1|2"), "f2|1,f1|2.json");
    }

    #[test]
    fn trace_starts_with_schema_line() {
        assert!(trace_csv(&[]).starts_with(TRACE_SCHEMA));
    }
}
