//! Iterative conditional replacement along a permissible cycle.
//!
//! Every slot of the cycle holds a distribution over `(a_i ∪ b_i) \ Δ` given
//! `Δ`. One projection onto block `j` keeps the current iterate's marginal
//! over `b_j \ Δ` and multiplies in `f_{a_j|b_j}`.
//!
//! Monitors, per cycle `t`:
//!
//! * `M(t)`: symmetric KL between the marginals that two consecutive *full*
//!   iterates (scope equal to every non-`Δ` variable) have over the variables
//!   replaced in between. With no full slot it is the symmetric KL between
//!   each slot and its value one cycle earlier.
//! * `Π(t)`: forward KL between consecutive full iterates. With fewer than
//!   two full slots it is the forward KL between consecutive iterates on the
//!   variables they share.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cycles::{enumerate_cycles, validate_cycle, UpdateCycle};
use crate::error::{IcrError, Result};
use crate::model::{ConditionalBlock, CsmModel};
use crate::tensor::{kl_values, offset_map, symmetric_kl_values, Axis, Distribution, Scope};

/// Relative change of `Π` per cycle below which it counts as flat.
pub const PLATEAU_REL_CHANGE: f64 = 1e-6;
/// Consecutive flat cycles needed for an incompatibility verdict.
pub const PLATEAU_CYCLES: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub enum InitSpec {
    /// Uniform over the last slot's variables given `Δ`.
    Uniform,
    /// A user table given `Δ` whose scope covers the first block's predictors.
    Distribution(Distribution),
    /// Strictly positive random table over the last slot's variables.
    SeededRandom(u64),
    /// The inner start projected once onto the last block of the cycle, so
    /// that `q⁽⁰⁾` already carries that block's conditional.
    LastBlock(Box<InitSpec>),
}

impl InitSpec {
    pub fn last_block(inner: InitSpec) -> Self {
        InitSpec::LastBlock(Box::new(inner))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcrConfig {
    pub tol_m: f64,
    pub tol_pi: f64,
    pub max_cycles: usize,
    pub init: InitSpec,
    /// Keep the last slot's distribution after every cycle.
    pub keep_history: bool,
}

impl Default for IcrConfig {
    fn default() -> Self {
        IcrConfig { tol_m: 1e-10, tol_pi: 1e-10, max_cycles: 10_000, init: InitSpec::Uniform, keep_history: false }
    }
}

impl IcrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_m > 0.0 && self.tol_pi > 0.0) {
            return Err(IcrError::Validation("tolerances must be positive".into()));
        }
        if self.max_cycles == 0 {
            return Err(IcrError::Validation("max_cycles must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Compatible,
    Incompatible,
    Undetermined,
}

#[derive(Clone, Debug)]
pub struct IcrRun {
    pub cycle: UpdateCycle,
    /// Blocks in cycle order.
    pub blocks: Vec<ConditionalBlock>,
    /// Latest distribution of every slot, in cycle order.
    pub iterates: Vec<Distribution>,
    pub m_trace: Vec<f64>,
    pub pi_trace: Vec<f64>,
    pub converged: bool,
    /// First cycle with `M < tol_m`, or the last cycle run when not converged.
    pub stop_cycle: usize,
    pub compatibility: Verdict,
    pub tol_m: f64,
    pub tol_pi: f64,
    /// Last slot after each cycle, when requested.
    pub history: Vec<Distribution>,
}

impl IcrRun {
    pub fn final_m(&self) -> f64 {
        *self.m_trace.last().expect("at least one cycle")
    }

    pub fn final_pi(&self) -> f64 {
        *self.pi_trace.last().expect("at least one cycle")
    }

    pub fn delta(&self) -> &Scope {
        &self.cycle.delta
    }
}

/// The mutually stationary distributions of a converged run, one per slot.
#[derive(Clone, Debug)]
pub struct StationarySet {
    pub cycle: UpdateCycle,
    pub members: Vec<Distribution>,
    /// Update order ending in each member's slot.
    pub tags: Vec<String>,
}

/// Precomputed index maps for one projection from a fixed input layout.
#[derive(Clone, Debug)]
struct StepPlan {
    /// Input cell → marginal cell; `None` when the input already is the marginal.
    marg_map: Option<Vec<usize>>,
    marg_len: usize,
    /// Marginal cells where the block is undefined; empty when it is
    /// defined everywhere.
    undefined: Vec<bool>,
    cond_idx: Vec<usize>,
    marg_idx: Vec<usize>,
    out_scope: Scope,
    given: Scope,
}

impl StepPlan {
    fn new(in_scope: &Scope, in_given: &Scope, block: &ConditionalBlock) -> Result<Self> {
        let b = block.predictors();
        if !in_given.is_subset_of(b) {
            return Err(IcrError::Scope(format!(
                "conditioning variables of the iterate are not predictors of `{}`",
                block.id
            )));
        }
        let need = b.minus(in_given);
        if !need.is_subset_of(in_scope) {
            return Err(IcrError::Scope(format!("iterate does not cover the predictors of `{}`", block.id)));
        }
        let in_layout: Vec<Axis> = in_scope.axes().iter().chain(in_given.axes()).copied().collect();
        let marg_layout: Vec<Axis> = need.axes().iter().chain(in_given.axes()).copied().collect();
        let marg_len = need.size() * in_given.size();
        let marg_map = (need != *in_scope).then(|| offset_map(&in_layout, &marg_layout));

        let masses = block.table.slice_masses();
        let undefined = if masses.contains(&0.0) {
            offset_map(&marg_layout, b.axes()).into_iter().map(|s| masses[s] == 0.0).collect()
        } else {
            Vec::new()
        };

        let out_scope = block.target().union(&need);
        let out_layout: Vec<Axis> = out_scope.axes().iter().chain(in_given.axes()).copied().collect();
        Ok(StepPlan {
            marg_map,
            marg_len,
            undefined,
            cond_idx: offset_map(&out_layout, &block.table.layout()),
            marg_idx: offset_map(&out_layout, &marg_layout),
            out_scope,
            given: in_given.clone(),
        })
    }

    fn apply(&self, q: &Distribution, block: &ConditionalBlock) -> Result<Distribution> {
        let mut out = Distribution::raw(self.out_scope.clone(), self.given.clone(), vec![0.0; self.cond_idx.len()]);
        self.apply_into(q, block, &mut Vec::new(), &mut out)?;
        Ok(out)
    }

    /// Writes the projection into `out`, which must already have this plan's
    /// output layout. `scratch` holds the predictor marginal.
    fn apply_into(
        &self,
        q: &Distribution,
        block: &ConditionalBlock,
        scratch: &mut Vec<f64>,
        out: &mut Distribution,
    ) -> Result<()> {
        let marg: &[f64] = match &self.marg_map {
            None => q.values(),
            Some(map) => {
                scratch.clear();
                scratch.resize(self.marg_len, 0.0);
                for (v, &o) in q.values().iter().zip(map) {
                    scratch[o] += v;
                }
                scratch
            }
        };
        if let Some(i) = self.undefined.iter().zip(marg).position(|(u, v)| *u && *v > 0.0) {
            return Err(IcrError::Support(format!(
                "iterate puts mass {:e} where `{}` is undefined",
                marg[i], block.id
            )));
        }
        let f = block.table.values();
        for ((o, &c), &m) in out.values_mut().iter_mut().zip(&self.cond_idx).zip(&self.marg_idx) {
            *o = f[c] * marg[m];
        }
        Ok(())
    }
}

/// I-projection of `q` onto the distributions carrying `block`'s conditional:
/// `f_{a|b} · q_{b \ Δ | Δ}` where `Δ` is `q`'s conditioning set.
pub fn project(q: &Distribution, block: &ConditionalBlock) -> Result<Distribution> {
    StepPlan::new(q.scope(), q.given(), block)?.apply(q, block)
}

/// Marginal of `d` over `keep`, conditioned as `d` is.
fn marginal(d: &Distribution, keep: &Scope) -> Vec<f64> {
    if keep == d.scope() {
        return d.values().to_vec();
    }
    Marginal::new(&d.layout(), keep, d.given()).apply(d.values())
}

/// `last_plan` projects onto the last block from `last_in`; it is used when
/// the inner start has that layout.
fn initial(
    m: &CsmModel,
    blocks: &[ConditionalBlock],
    delta: &Scope,
    init: &InitSpec,
    last_plan: (&StepPlan, &Scope),
) -> Result<Distribution> {
    let last = blocks.last().expect("non-empty cycle");
    let last_scope = last.context().minus(delta);
    let q0 = match init {
        InitSpec::Uniform => Distribution::uniform(last_scope, delta.clone()),
        InitSpec::LastBlock(inner) => {
            let q = initial(m, blocks, delta, inner, last_plan)?;
            let (plan, last_in) = last_plan;
            if q.scope() == last_in && q.given() == delta {
                plan.apply(&q, last)?
            } else {
                project(&q, last)?
            }
        }
        InitSpec::SeededRandom(seed) => {
            Distribution::random(last_scope, delta.clone(), &mut ChaCha8Rng::seed_from_u64(*seed))
        }
        InitSpec::Distribution(d) => {
            if d.given() != delta {
                return Err(IcrError::Scope(format!(
                    "initial distribution must be conditioned on {:?}",
                    m.names(delta)
                )));
            }
            d.clone()
        }
    };
    let need = blocks[0].predictors().minus(delta);
    if !need.is_subset_of(q0.scope()) {
        return Err(IcrError::Scope("initial distribution does not cover the first block's predictors".into()));
    }
    Ok(q0)
}

fn plateaued(pi: &[f64], tol_pi: f64) -> bool {
    if pi.len() <= PLATEAU_CYCLES {
        return false;
    }
    let w = &pi[pi.len() - PLATEAU_CYCLES - 1..];
    w.iter().all(|&p| p > tol_pi && p.is_finite())
        && w.windows(2).all(|p| (p[1] - p[0]).abs() / p[0] < PLATEAU_REL_CHANGE)
}

/// Where the latest full iterate lives.
#[derive(Clone, Copy)]
enum Anchor {
    None,
    Init,
    Slot(usize),
}

fn layout_of(scope: &Scope, given: &Scope) -> Vec<Axis> {
    scope.axes().iter().chain(given.axes()).copied().collect()
}

/// Fixed summation map from one layout onto `keep | given`.
struct Marginal {
    map: Vec<usize>,
    len: usize,
}

impl Marginal {
    fn new(source: &[Axis], keep: &Scope, given: &Scope) -> Self {
        Marginal { map: offset_map(source, &layout_of(keep, given)), len: keep.size() * given.size() }
    }

    fn apply(&self, values: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        self.apply_into(values, &mut out);
        out
    }

    fn apply_into(&self, values: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.len, 0.0);
        for (v, &o) in values.iter().zip(&self.map) {
            out[o] += v;
        }
    }
}

struct SlotMaps {
    /// Variables replaced since the previous full slot.
    pending: Scope,
    /// Marginal over the variables replaced since the previous full slot;
    /// `None` when that is every variable.
    m: Option<Marginal>,
    pi_prev: Option<Marginal>,
    pi_next: Option<Marginal>,
}

/// Runs ICR along `cycle`. A run that does not converge within
/// `max_cycles` is returned with `converged == false`.
pub fn run_icr(m: &CsmModel, cycle: &UpdateCycle, cfg: &IcrConfig) -> Result<IcrRun> {
    cfg.validate()?;
    if cycle.is_empty() {
        return Err(IcrError::NoCycle);
    }
    let cycle = validate_cycle(m, &cycle.order)?;
    let blocks: Vec<ConditionalBlock> = cycle.indices.iter().map(|&i| m.blocks()[i].clone()).collect();
    let delta = cycle.delta.clone();
    let l = blocks.len();
    let universe = m.target_union();

    let slot_scopes: Vec<Scope> = blocks.iter().map(|b| b.context().minus(&delta)).collect();
    let full: Vec<bool> = slot_scopes.iter().map(|s| *s == universe).collect();
    let n_full = full.iter().filter(|f| **f).count();

    let plans =
        (0..l).map(|k| StepPlan::new(&slot_scopes[(k + l - 1) % l], &delta, &blocks[k])).collect::<Result<Vec<_>>>()?;
    let q0 = initial(m, &blocks, &delta, &cfg.init, (&plans[l - 1], &slot_scopes[(l + l - 2) % l]))?;
    // The first step only needs its own plan when q0 is laid out differently
    // from the last slot.
    let first =
        if *q0.scope() == slot_scopes[l - 1] { None } else { Some(StepPlan::new(q0.scope(), q0.given(), &blocks[0])?) };

    // After cycle 0 every comparison has a fixed layout; precompute its maps.
    let steady: Vec<SlotMaps> = (0..l)
        .map(|k| {
            let mut pending = Scope::empty();
            for s in 0..l {
                let j = (k + l - s) % l;
                if s > 0 && full[j] {
                    break;
                }
                pending = pending.union(blocks[j].target());
            }
            let full_layout: Vec<Axis> = universe.axes().iter().chain(delta.axes()).copied().collect();
            let prev_scope = &slot_scopes[(k + l - 1) % l];
            let common = prev_scope.intersect(&slot_scopes[k]);
            SlotMaps {
                m: (full[k] && pending != universe).then(|| Marginal::new(&full_layout, &pending, &delta)),
                pending,
                pi_prev: (n_full < 2).then(|| Marginal::new(&layout_of(prev_scope, &delta), &common, &delta)),
                pi_next: (n_full < 2).then(|| Marginal::new(&layout_of(&slot_scopes[k], &delta), &common, &delta)),
            }
        })
        .collect();

    let mut q0 = Some(q0);
    let mut anchor = match &q0 {
        Some(q) if *q.scope() == universe => Anchor::Init,
        _ => Anchor::None,
    };
    let mut pending = Scope::empty();
    let mut slots: Vec<Option<Distribution>> = vec![None; l];
    // Retired iterates, reused as output buffers on the next cycle.
    let mut spare: Vec<Option<Distribution>> = vec![None; l];
    let (mut scratch, mut buf_a, mut buf_b) = (Vec::new(), Vec::new(), Vec::new());
    let mut m_trace = Vec::new();
    let mut pi_trace = Vec::new();
    let mut converged = false;
    let mut stop_cycle = 0;
    let mut verdict = Verdict::Undetermined;
    let mut history = Vec::new();

    for t in 0..cfg.max_cycles {
        let mut m_sum = 0.0;
        let mut m_terms = 0usize;
        let mut pi_sum = 0.0;
        for k in 0..l {
            let (plan, prev) = if t == 0 && k == 0 {
                (first.as_ref().unwrap_or(&plans[0]), q0.as_ref().expect("initial iterate"))
            } else {
                (&plans[k], slots[(k + l - 1) % l].as_ref().expect("previous slot filled"))
            };
            let next = match spare[k].take() {
                Some(mut out) if t > 0 => {
                    plan.apply_into(prev, &blocks[k], &mut scratch, &mut out)?;
                    out
                }
                _ => plan.apply(prev, &blocks[k])?,
            };
            if t == 0 {
                pending = pending.union(blocks[k].target());
            }
            if n_full < 2 {
                pi_sum += if t == 0 && k == 0 {
                    let common = prev.scope().intersect(next.scope());
                    kl_values(&marginal(prev, &common), &marginal(&next, &common))
                } else {
                    let maps = &steady[k];
                    maps.pi_prev.as_ref().expect("fallback maps").apply_into(prev.values(), &mut buf_a);
                    maps.pi_next.as_ref().expect("fallback maps").apply_into(next.values(), &mut buf_b);
                    kl_values(&buf_a, &buf_b)
                };
            }
            if full[k] {
                let a = match anchor {
                    Anchor::None => None,
                    Anchor::Init => q0.as_ref(),
                    Anchor::Slot(j) => slots[j].as_ref(),
                };
                if let Some(a) = a {
                    let steady_layout = !(t == 0 && (matches!(anchor, Anchor::Init) || pending != steady[k].pending));
                    m_sum += if !steady_layout {
                        symmetric_kl_values(&marginal(a, &pending), &marginal(&next, &pending))
                    } else if let Some(map) = &steady[k].m {
                        map.apply_into(a.values(), &mut buf_a);
                        map.apply_into(next.values(), &mut buf_b);
                        symmetric_kl_values(&buf_a, &buf_b)
                    } else {
                        symmetric_kl_values(a.values(), next.values())
                    };
                    m_terms += 1;
                    if n_full >= 2 {
                        pi_sum += kl_values(a.values(), next.values());
                    }
                }
                anchor = Anchor::Slot(k);
                pending = Scope::empty();
            }
            if n_full == 0 {
                if let Some(old) = &slots[k] {
                    m_sum += symmetric_kl_values(old.values(), next.values());
                    m_terms += 1;
                }
            }
            spare[k] = slots[k].replace(next);
        }
        if t == 0 {
            q0 = None;
        }
        let m_t = if m_terms == 0 { f64::INFINITY } else { m_sum };
        log::debug!("cycle {t}: M = {m_t:e}, Pi = {pi_sum:e}");
        m_trace.push(m_t);
        pi_trace.push(pi_sum);
        if cfg.keep_history {
            history.push(slots[l - 1].clone().expect("last slot filled"));
        }
        stop_cycle = t;
        if !converged && m_t < cfg.tol_m {
            converged = true;
        }
        if converged {
            if pi_sum < cfg.tol_pi {
                verdict = Verdict::Compatible;
                break;
            }
            if plateaued(&pi_trace, cfg.tol_pi) {
                verdict = Verdict::Incompatible;
                break;
            }
        }
    }
    if converged {
        stop_cycle = m_trace.iter().position(|&x| x < cfg.tol_m).expect("converged");
    } else {
        log::warn!("{}", IcrError::NonConvergence { iterations: cfg.max_cycles });
    }

    Ok(IcrRun {
        cycle,
        blocks,
        iterates: slots.into_iter().map(|s| s.expect("every slot visited")).collect(),
        m_trace,
        pi_trace,
        converged,
        stop_cycle,
        compatibility: verdict,
        tol_m: cfg.tol_m,
        tol_pi: cfg.tol_pi,
        history,
    })
}

/// Runs ICR along the first permissible cycle of `m`.
pub fn run_first_cycle(m: &CsmModel, cfg: &IcrConfig) -> Result<IcrRun> {
    let cycle = enumerate_cycles(m, 1)?.into_iter().next().ok_or(IcrError::NoCycle)?;
    run_icr(m, &cycle, cfg)
}

/// Verdict from a run's traces alone.
pub fn check_compatibility(run: &IcrRun) -> Verdict {
    if !run.converged {
        Verdict::Undetermined
    } else if run.final_pi() < run.tol_pi {
        Verdict::Compatible
    } else if plateaued(&run.pi_trace, run.tol_pi) {
        Verdict::Incompatible
    } else {
        Verdict::Undetermined
    }
}

/// The slot distributions of a converged run, checked to map into each other
/// under one more projection within `10 · tol_pi` symmetric KL.
pub fn stationary_set(run: &IcrRun) -> Result<StationarySet> {
    if !run.converged {
        return Err(IcrError::NotConverged);
    }
    let l = run.iterates.len();
    let mut worst: f64 = 0.0;
    for i in 0..l {
        let j = (i + 1) % l;
        let mapped = project(&run.iterates[i], &run.blocks[j])?;
        worst = worst.max(symmetric_kl_values(mapped.values(), run.iterates[j].values()));
    }
    if worst > 10.0 * run.tol_pi {
        return Err(IcrError::NotStationary(worst));
    }
    Ok(StationarySet {
        cycle: run.cycle.clone(),
        members: run.iterates.clone(),
        tags: (0..l).map(|k| run.cycle.rotation_tag(k)).collect(),
    })
}
