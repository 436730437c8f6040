//! Divide-then-ICR plans: run ICR on groups of blocks, then combine the
//! resulting distributions by composition or iterative proportional fitting.
//!
//! Plan file:
//!
//! ```json
//! { "phases": [
//!     {"id": "p1", "mode": "icr", "inputs": ["f1|23", "f2|13"], "cycle": ["f1|23", "f2|13"]},
//!     {"id": "joint", "mode": "compose", "inputs": ["p1/f1|23", "f3"]} ] }
//! ```
//!
//! An `icr` phase publishes one distribution per slot as `"<phase>/<block>"`;
//! `compose` and `ipf` phases publish a single distribution under the phase id.
//! Inputs name model blocks or earlier outputs.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::cycles::{enumerate_cycles, validate_cycle};
use crate::engine::{run_icr, IcrConfig, Verdict};
use crate::error::{IcrError, Result};
use crate::model::{ConditionalBlock, CsmModel};
use crate::tensor::{compose, offset_map, Distribution, Scope};

/// Marginals sharing variables must agree there within this L1 distance.
pub const IPF_CONSISTENCY_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMode {
    Icr,
    Compose,
    Ipf,
}

/// Interaction structure an IPF phase assumes beyond its margins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assumption {
    /// No interaction beyond the fitted margins.
    ZeroThreeWay,
    /// Log-linear offset over the union of the margins' variables; the fit
    /// starts from `exp(offset)`.
    LogOffset(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub id: String,
    pub mode: PhaseMode,
    pub inputs: Vec<String>,
    /// Update order for `icr`; the first permissible cycle when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumption: Option<Assumption>,
    /// Overrides both ICR tolerances, or the IPF tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisPlan {
    pub phases: Vec<Phase>,
}

impl SynthesisPlan {
    pub fn parse(text: &[u8]) -> Result<Self> {
        serde_json::from_slice(text).map_err(|e| IcrError::Parse(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct Intermediate {
    pub id: String,
    pub dist: Distribution,
    /// Producing phase, plus the update order for ICR outputs.
    pub provenance: String,
}

impl Intermediate {
    /// A joint over every variable of `m`.
    pub fn is_joint(&self, m: &CsmModel) -> bool {
        self.dist.given().is_empty() && self.dist.scope().len() == m.variables().len()
    }
}

fn lookup<'a>(env: &'a HashMap<String, Distribution>, id: &str) -> Result<&'a Distribution> {
    env.get(id).ok_or_else(|| IcrError::UnknownBlock(id.to_string()))
}

/// Executes every phase in order.
pub fn run_plan(m: &CsmModel, plan: &SynthesisPlan, cfg: &IcrConfig) -> Result<Vec<Intermediate>> {
    let mut env: HashMap<String, Distribution> = m.blocks().iter().map(|b| (b.id.clone(), b.table.clone())).collect();
    let mut out = Vec::new();
    for phase in &plan.phases {
        let produced = run_phase(m, phase, cfg, &env).map_err(|e| IcrError::in_phase(&phase.id, e))?;
        for i in produced {
            if env.insert(i.id.clone(), i.dist.clone()).is_some() {
                return Err(IcrError::in_phase(&phase.id, IcrError::Validation(format!("id `{}` reused", i.id))));
            }
            out.push(i);
        }
    }
    Ok(out)
}

fn run_phase(
    m: &CsmModel,
    phase: &Phase,
    cfg: &IcrConfig,
    env: &HashMap<String, Distribution>,
) -> Result<Vec<Intermediate>> {
    match phase.mode {
        PhaseMode::Icr => {
            let blocks = phase
                .inputs
                .iter()
                .map(|id| Ok(ConditionalBlock::new(id.clone(), lookup(env, id)?.clone())))
                .collect::<Result<Vec<_>>>()?;
            let group = m.with_blocks(blocks)?;
            let cycle = match &phase.cycle {
                Some(order) => validate_cycle(&group, order)?,
                None => enumerate_cycles(&group, 1)?.into_iter().next().ok_or(IcrError::NoCycle)?,
            };
            let mut cfg = cfg.clone();
            if let Some(tol) = phase.tol {
                cfg.tol_m = tol;
                cfg.tol_pi = tol;
            }
            if let Some(n) = phase.max_iter {
                cfg.max_cycles = n;
            }
            let run = run_icr(&group, &cycle, &cfg)?;
            if !run.converged {
                return Err(IcrError::NonConvergence { iterations: cfg.max_cycles });
            }
            if run.compatibility == Verdict::Incompatible {
                log::warn!("phase `{}`: group is incompatible; outputs depend on the update order", phase.id);
            }
            Ok(run
                .iterates
                .into_iter()
                .enumerate()
                .map(|(k, dist)| Intermediate {
                    id: format!("{}/{}", phase.id, run.cycle.order[k]),
                    dist,
                    provenance: format!("{} ({})", phase.id, run.cycle.rotation_tag(k)),
                })
                .collect())
        }
        PhaseMode::Compose => {
            let [c, g] = phase.inputs.as_slice() else {
                return Err(IcrError::Validation("compose takes a conditional and a marginal".into()));
            };
            let dist = compose_auto(lookup(env, c)?, lookup(env, g)?)?;
            Ok(vec![Intermediate { id: phase.id.clone(), dist, provenance: phase.id.clone() }])
        }
        PhaseMode::Ipf => {
            let targets = phase.inputs.iter().map(|id| lookup(env, id).cloned()).collect::<Result<Vec<_>>>()?;
            let union = targets.iter().fold(Scope::empty(), |acc, t| acc.union(t.scope()));
            let init = match phase.assumption.as_ref().unwrap_or(&Assumption::ZeroThreeWay) {
                Assumption::ZeroThreeWay => Distribution::uniform(union, Scope::empty()),
                Assumption::LogOffset(offset) => {
                    if offset.len() != union.size() {
                        return Err(IcrError::Validation(format!(
                            "log offset needs {} values, found {}",
                            union.size(),
                            offset.len()
                        )));
                    }
                    Distribution::from_weights(union, Scope::empty(), offset.iter().map(|o| o.exp()).collect())?
                }
            };
            let dist = ipf_fit(&targets, &init, phase.tol.unwrap_or(1e-12), phase.max_iter.unwrap_or(10_000))?;
            Ok(vec![Intermediate { id: phase.id.clone(), dist, provenance: phase.id.clone() }])
        }
    }
}

/// `cond × marg`, first summing `marg` down to `cond`'s conditioning variables.
pub fn compose_auto(cond: &Distribution, marg: &Distribution) -> Result<Distribution> {
    if !marg.given().is_subset_of(cond.given()) {
        return Err(IcrError::Scope("marginal is conditioned on variables the conditional does not use".into()));
    }
    let keep = cond.given().minus(marg.given());
    if keep.is_empty() || !keep.is_subset_of(marg.scope()) {
        return Err(IcrError::Scope("marginal does not cover the conditioning variables".into()));
    }
    compose(cond, &marg.marginalize(&keep)?)
}

/// Iterative proportional fitting of `init` to unconditional `targets`.
/// Stops when every fitted marginal is within `tol` (L1) of its target.
pub fn ipf_fit(targets: &[Distribution], init: &Distribution, tol: f64, max_iter: usize) -> Result<Distribution> {
    if init.is_conditional() || targets.iter().any(|t| t.is_conditional()) {
        return Err(IcrError::Scope("IPF works on unconditional tables".into()));
    }
    for t in targets {
        if !t.scope().is_subset_of(init.scope()) {
            return Err(IcrError::Scope("a target margin has variables outside the fitted table".into()));
        }
    }
    for (i, a) in targets.iter().enumerate() {
        for b in &targets[i + 1..] {
            let common = a.scope().intersect(b.scope());
            if common.is_empty() {
                continue;
            }
            let ma = a.marginalize(&common)?;
            let mb = b.marginalize(&common)?;
            let d: f64 = ma.values().iter().zip(mb.values()).map(|(x, y)| (x - y).abs()).sum();
            if d > IPF_CONSISTENCY_TOL {
                return Err(IcrError::Inconsistent(format!("margins disagree by {d:e} (L1) on shared variables")));
            }
        }
    }

    let layout = init.layout();
    let maps: Vec<Vec<usize>> = targets.iter().map(|t| offset_map(&layout, t.scope().axes())).collect();
    let mut q = init.values().to_vec();
    let marginal = |q: &[f64], map: &[usize], len: usize| {
        let mut m = vec![0.0; len];
        for (v, &o) in q.iter().zip(map) {
            m[o] += v;
        }
        m
    };
    for _ in 0..max_iter {
        for (t, map) in targets.iter().zip(&maps) {
            let cur = marginal(&q, map, t.values().len());
            let ratio: Vec<f64> =
                cur.iter().zip(t.values()).map(|(&c, &w)| if c > 0.0 { w / c } else { 0.0 }).collect();
            for (v, &o) in q.iter_mut().zip(map) {
                *v *= ratio[o];
            }
        }
        let worst = targets
            .iter()
            .zip(&maps)
            .map(|(t, map)| {
                let cur = marginal(&q, map, t.values().len());
                cur.iter().zip(t.values()).map(|(a, b)| (a - b).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max);
        if worst < tol {
            return Distribution::from_weights(init.scope().clone(), Scope::empty(), q);
        }
    }
    Err(IcrError::NonConvergence { iterations: max_iter })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlagKind {
    /// Depends on an interaction assumption the model does not supply.
    AssumptionDependent,
    /// An `ipf` phase relies on the default assumption without declaring it.
    UndeclaredAssumption,
    UnknownInput,
    NoCycle,
    NoFullJoint,
    /// Model block no phase reads; informational.
    UnusedBlock,
    BadShape,
}

impl FlagKind {
    pub fn blocks_sufficiency(self) -> bool {
        !matches!(self, FlagKind::UnusedBlock | FlagKind::UndeclaredAssumption)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Flag {
    pub kind: FlagKind,
    pub subject: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SufficiencyReport {
    pub sufficient: bool,
    pub flags: Vec<Flag>,
}

/// Checks a plan without running it: inputs resolve, ICR groups have a
/// permissible cycle, some output is a full joint, and which outputs depend
/// on an IPF interaction assumption.
pub fn validate_sufficiency(m: &CsmModel, plan: &SynthesisPlan) -> SufficiencyReport {
    // (scope, given, assumption-dependent) per known id.
    let mut known: HashMap<String, (Scope, Scope, bool)> =
        m.blocks().iter().map(|b| (b.id.clone(), (b.target().clone(), b.predictors().clone(), false))).collect();
    let mut used = HashSet::new();
    let mut flags = Vec::new();
    let mut flag = |kind, subject: &str, message: String| flags.push(Flag { kind, subject: subject.into(), message });

    for phase in &plan.phases {
        let mut inputs = Vec::new();
        for id in &phase.inputs {
            used.insert(id.clone());
            match known.get(id) {
                Some(s) => inputs.push((id.clone(), s.clone())),
                None => {
                    flag(FlagKind::UnknownInput, &phase.id, format!("input `{id}` is not defined before this phase"))
                }
            }
        }
        if inputs.len() != phase.inputs.len() {
            continue;
        }
        let tainted = inputs.iter().any(|(_, (_, _, t))| *t);
        match phase.mode {
            PhaseMode::Icr => {
                let blocks: Vec<ConditionalBlock> = inputs
                    .iter()
                    .map(|(id, (a, b, _))| {
                        let placeholder = Distribution::uniform(a.clone(), b.clone());
                        ConditionalBlock::new(id.clone(), placeholder)
                    })
                    .collect();
                let group = match m.with_blocks(blocks) {
                    Ok(g) => g,
                    Err(e) => {
                        flag(FlagKind::BadShape, &phase.id, e.to_string());
                        continue;
                    }
                };
                let cycle = match &phase.cycle {
                    Some(order) => validate_cycle(&group, order).ok(),
                    None => enumerate_cycles(&group, 1).ok().and_then(|c| c.into_iter().next()),
                };
                let Some(cycle) = cycle else {
                    flag(FlagKind::NoCycle, &phase.id, "group has no usable permissible cycle".into());
                    continue;
                };
                for (k, &i) in cycle.indices.iter().enumerate() {
                    let b = &group.blocks()[i];
                    let scope = b.context().minus(&cycle.delta);
                    known.insert(format!("{}/{}", phase.id, cycle.order[k]), (scope, cycle.delta.clone(), tainted));
                }
            }
            PhaseMode::Compose => {
                let [(_, (cs, cg, _)), (_, (ms, mg, _))] = inputs.as_slice() else {
                    flag(FlagKind::BadShape, &phase.id, "compose takes two inputs".into());
                    continue;
                };
                let keep = cg.minus(mg);
                if !mg.is_subset_of(cg) || keep.is_empty() || !keep.is_subset_of(ms) {
                    flag(FlagKind::BadShape, &phase.id, "marginal does not supply the conditioning variables".into());
                    continue;
                }
                known.insert(phase.id.clone(), (cs.union(&keep), mg.clone(), tainted));
            }
            PhaseMode::Ipf => {
                if inputs.iter().any(|(_, (_, g, _))| !g.is_empty()) {
                    flag(FlagKind::BadShape, &phase.id, "ipf inputs must be unconditional".into());
                    continue;
                }
                if phase.assumption.is_none() {
                    flag(
                        FlagKind::UndeclaredAssumption,
                        &phase.id,
                        "ipf phase does not declare its interaction assumption; zero-three-way is used".into(),
                    );
                }
                let union = inputs.iter().fold(Scope::empty(), |acc, (_, (s, _, _))| acc.union(s));
                flag(
                    FlagKind::AssumptionDependent,
                    &phase.id,
                    format!("joint over {:?} is determined only under an interaction assumption", m.names(&union)),
                );
                known.insert(phase.id.clone(), (union, Scope::empty(), true));
            }
        }
    }

    let produced: Vec<(&String, &(Scope, Scope, bool))> = known.iter().filter(|(id, _)| m.block(id).is_err()).collect();
    let full = produced.iter().filter(|(_, (s, g, _))| g.is_empty() && s.len() == m.variables().len());
    let mut any_full = false;
    let mut tainted_full = Vec::new();
    for (id, (_, _, t)) in full {
        any_full = true;
        if *t {
            tainted_full.push((*id).clone());
        }
    }
    tainted_full.sort();
    for id in tainted_full {
        flag(FlagKind::AssumptionDependent, &id, "joint inherits an interaction assumption".into());
    }
    if !any_full {
        flag(FlagKind::NoFullJoint, "plan", "no phase produces a joint over every variable".into());
    }
    for b in m.blocks() {
        if !used.contains(&b.id) {
            flag(FlagKind::UnusedBlock, &b.id, "block is never read by the plan".into());
        }
    }
    let sufficient = flags.iter().all(|f| !f.kind.blocks_sufficiency());
    SufficiencyReport { sufficient, flags }
}
