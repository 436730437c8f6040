//! Reference methods for saturated models: the Markov kernel of each full
//! conditional, the power method on the composed kernel, and a
//! systematic-scan Gibbs sampler.
//!
//! States are cells of the joint over every model variable, in the joint
//! layout (first variable fastest). Configurations where a conditional is
//! undefined keep the chain where it is.
//!
//! Gibbs chains use ChaCha8 seeded with `seed`, chain `k` on stream `k`.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cycles::UpdateCycle;
use crate::engine::{run_icr, IcrConfig, InitSpec};
use crate::error::{IcrError, Result};
use crate::model::{ConditionalBlock, CsmModel};
use crate::tensor::{kl_values, offset_map, symmetric_kl_values, Distribution, Scope};

/// Largest joint state space the baselines enumerate.
pub const MAX_STATES: usize = 1 << 20;
/// Largest state space for the dense power method.
pub const MAX_DENSE_STATES: usize = 4096;
/// Rows of `𝒯^k` further apart than this flag a reducible chain.
pub const ROW_AGREEMENT_TOL: f64 = 1e-6;
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.3), seed_from_u64(seed), set_stream(chain)";
pub const REPORT_SCHEMA: &str = "# icr-compare v1";

/// Sparse kernel of one full conditional.
#[derive(Clone, Debug)]
pub struct TransitionMatrix {
    pub block: String,
    pub states: usize,
    /// State with the block's target variables set to their first category.
    base: Vec<usize>,
    /// Block table slice used in each state; `None` where undefined.
    slice: Vec<Option<usize>>,
    /// Joint-index offset of each target configuration.
    target_offsets: Vec<usize>,
    probs: Vec<f64>,
}

impl TransitionMatrix {
    fn width(&self) -> usize {
        self.target_offsets.len()
    }

    /// Non-zero entries of row `s`.
    pub fn row(&self, s: usize) -> Vec<(usize, f64)> {
        match self.slice[s] {
            None => vec![(s, 1.0)],
            Some(sl) => {
                let w = self.width();
                (0..w)
                    .filter_map(|j| {
                        let p = self.probs[sl * w + j];
                        (p > 0.0).then_some((self.base[s] + self.target_offsets[j], p))
                    })
                    .collect()
            }
        }
    }

    /// `q · T`.
    pub fn apply(&self, q: &[f64]) -> Vec<f64> {
        let w = self.width();
        let mut out = vec![0.0; self.states];
        for (s, &v) in q.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            match self.slice[s] {
                None => out[s] += v,
                Some(sl) => {
                    let row = &self.probs[sl * w..(sl + 1) * w];
                    for (j, &p) in row.iter().enumerate() {
                        out[self.base[s] + self.target_offsets[j]] += v * p;
                    }
                }
            }
        }
        out
    }

    fn sample<R: Rng>(&self, s: usize, rng: &mut R) -> usize {
        let Some(sl) = self.slice[s] else { return s };
        let w = self.width();
        let row = &self.probs[sl * w..(sl + 1) * w];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = j;
                if u < acc {
                    return self.base[s] + self.target_offsets[j];
                }
            }
        }
        self.base[s] + self.target_offsets[last]
    }
}

fn full_block<'a>(m: &'a CsmModel, id: &str) -> Result<&'a ConditionalBlock> {
    let b = m.block(id)?;
    if !m.is_full(b) {
        return Err(IcrError::NotFullConditional(id.to_string()));
    }
    Ok(b)
}

fn state_count(m: &CsmModel, cap: usize) -> Result<usize> {
    let n = m.variables().iter().try_fold(1usize, |acc, v| acc.checked_mul(v.cardinality));
    match n {
        Some(n) if n <= cap => Ok(n),
        _ => Err(IcrError::InstanceTooLarge(format!("joint state space exceeds {cap} states"))),
    }
}

pub fn transition_matrix(m: &CsmModel, block: &str) -> Result<TransitionMatrix> {
    let b = full_block(m, block)?;
    let states = state_count(m, MAX_STATES)?;
    let joint = m.full_scope();
    let layout = joint.axes();
    // joint index of each block-table cell, and block slice of each joint state
    let to_joint = offset_map(&b.table.layout(), layout);
    let width = b.target().size();
    let target_offsets: Vec<usize> = to_joint[..width].to_vec();
    let slice_of = offset_map(layout, b.predictors().axes());
    let target_part = offset_map(layout, b.target().axes());
    let masses = b.table.slice_masses();
    let base = (0..states).map(|s| s - target_offsets[target_part[s]]).collect();
    let slice = slice_of.iter().map(|&sl| (masses[sl] > 0.0).then_some(sl)).collect();
    Ok(TransitionMatrix {
        block: block.to_string(),
        states,
        base,
        slice,
        target_offsets,
        probs: b.table.values().to_vec(),
    })
}

fn kernels(m: &CsmModel, order: &UpdateCycle) -> Result<Vec<TransitionMatrix>> {
    order.order.iter().map(|id| transition_matrix(m, id)).collect()
}

#[derive(Clone, Debug)]
pub struct PowerResult {
    pub distribution: Distribution,
    /// Power `k` at which the method stopped.
    pub iterations: usize,
    pub converged: bool,
    /// Rows of `𝒯^k` still disagree beyond [`ROW_AGREEMENT_TOL`]; the chain
    /// is probably reducible and the row average depends on the start.
    pub reducible_warning: bool,
    /// Row average of `𝒯^k` for `k = 1, 2, …`.
    pub iterates: Vec<Distribution>,
}

/// Power method on `𝒯 = T_{o_1} ⋯ T_{o_L}`: the row average of `𝒯^k` at the
/// first `k` whose successive symmetric KL is below `tol`.
pub fn power_iterate(m: &CsmModel, order: &UpdateCycle, tol: f64, max_iter: usize) -> Result<PowerResult> {
    let n = state_count(m, MAX_DENSE_STATES)?;
    let ts = kernels(m, order)?;
    let joint = m.full_scope();
    let chain = |row: &[f64]| ts.iter().fold(row.to_vec(), |acc, t| t.apply(&acc));

    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            let mut e = vec![0.0; n];
            e[s] = 1.0;
            chain(&e)
        })
        .collect();
    let average = |rows: &[Vec<f64>]| {
        let mut p = vec![0.0; n];
        for r in rows {
            for (a, b) in p.iter_mut().zip(r) {
                *a += b;
            }
        }
        p.iter_mut().for_each(|a| *a /= n as f64);
        p
    };
    let mut p = average(&rows);
    let mut iterates = vec![Distribution::from_weights(joint.clone(), Scope::empty(), p.clone())?];
    let mut converged = false;
    let mut k = 1;
    while k < max_iter {
        rows = rows.iter().map(|r| chain(r)).collect();
        k += 1;
        let next = average(&rows);
        let d = symmetric_kl_values(&p, &next);
        p = next;
        iterates.push(Distribution::from_weights(joint.clone(), Scope::empty(), p.clone())?);
        if d < tol {
            converged = true;
            break;
        }
    }
    let spread = rows.iter().flat_map(|r| r.iter().zip(&p).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
    let reducible_warning = spread > ROW_AGREEMENT_TOL;
    if reducible_warning {
        log::warn!("power method rows disagree by {spread:e}; the chain looks reducible");
    }
    if !converged {
        log::warn!("{}", IcrError::NonConvergence { iterations: k });
    }
    Ok(PowerResult {
        distribution: iterates.last().expect("at least one power").clone(),
        iterations: k,
        converged,
        reducible_warning,
        iterates,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    pub seed: u64,
    pub chain: u64,
    pub burn_in: usize,
    /// Visit counts per joint state.
    pub counts: Vec<u64>,
    pub draws: u64,
}

impl SampleTrace {
    /// Empirical distribution; `None` without draws.
    pub fn empirical(&self, m: &CsmModel) -> Option<Distribution> {
        (self.draws > 0).then(|| {
            let w = self.counts.iter().map(|&c| c as f64).collect();
            Distribution::from_weights(m.full_scope(), Scope::empty(), w).expect("positive total")
        })
    }
}

/// Systematic-scan Gibbs sampling: one draw per sweep through `order`,
/// after `burn_in` sweeps. Snapshots of the running counts are taken after
/// every `batch` draws (cumulative), `batches` times.
pub fn gibbs_batches(
    m: &CsmModel,
    order: &UpdateCycle,
    batch: usize,
    batches: usize,
    burn_in: usize,
    seed: u64,
    chain: u64,
) -> Result<Vec<SampleTrace>> {
    let ts = kernels(m, order)?;
    let n = ts.first().map_or(1, |t| t.states);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    let mut state = rng.gen_range(0..n);
    let sweep = |s: usize, rng: &mut ChaCha8Rng| ts.iter().fold(s, |s, t| t.sample(s, rng));
    for _ in 0..burn_in {
        state = sweep(state, &mut rng);
    }
    let mut counts = vec![0u64; n];
    let mut out = Vec::with_capacity(batches);
    for b in 0..batches {
        for _ in 0..batch {
            state = sweep(state, &mut rng);
            counts[state] += 1;
        }
        out.push(SampleTrace { seed, chain, burn_in, counts: counts.clone(), draws: ((b + 1) * batch) as u64 });
    }
    Ok(out)
}

/// `n` post-burn-in draws from one chain.
pub fn gibbs_sample(m: &CsmModel, order: &UpdateCycle, n: usize, burn_in: usize, seed: u64) -> Result<SampleTrace> {
    if n == 0 {
        let states = state_count(m, MAX_STATES)?;
        kernels(m, order)?;
        return Ok(SampleTrace { seed, chain: 0, burn_in, counts: vec![0; states], draws: 0 });
    }
    Ok(gibbs_batches(m, order, n, 1, burn_in, seed, 0)?.remove(0))
}

#[derive(Clone, Debug)]
pub struct CompareConfig {
    pub icr: IcrConfig,
    pub power_tol: f64,
    pub power_max_iter: usize,
    /// Draws per Gibbs batch; batches are cumulative.
    pub gs_batch: usize,
    pub gs_batches: usize,
    pub gs_burn_in: usize,
    pub seed: u64,
    /// Independent Gibbs chains.
    pub chains: u64,
    /// Reference joint; the ICR stationary joint when absent.
    pub reference: Option<Distribution>,
    /// Extra named ICR starts whose stationary joints are compared with the
    /// first one.
    pub inits: Vec<(String, Distribution)>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            icr: IcrConfig::default(),
            power_tol: 1e-10,
            power_max_iter: 1000,
            gs_batch: 1_000_000,
            gs_batches: 5,
            gs_burn_in: 100_000,
            seed: 0,
            chains: 1,
            reference: None,
            inits: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    /// `icr`, `power`, `gs` or `icr-init`.
    pub method: String,
    pub run: String,
    pub step: usize,
    /// Draws behind a Gibbs point; 0 otherwise.
    pub samples: u64,
    /// Symmetric KL to the reference.
    pub sym_kl: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct CompareReport {
    pub rows: Vec<ReportRow>,
    pub reference: Distribution,
    pub icr_seconds: f64,
    pub power_seconds: f64,
    pub gs_seconds: f64,
    pub reducible_warning: bool,
}

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_SCHEMA} rng={RNG_NAME}\n");
        s.push_str("method,run,step,samples,sym_kl,wall_seconds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{:e},{:e}", r.method, r.run, r.step, r.samples, r.sym_kl, r.wall_seconds);
        }
        s
    }

    pub fn curve(&self, method: &str) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }
}

fn sym_kl(a: &Distribution, b: &Distribution) -> f64 {
    kl_values(a.values(), b.values()) + kl_values(b.values(), a.values())
}

/// Convergence of ICR, the power method and Gibbs sampling toward one
/// reference joint, with wall times.
pub fn compare_report(m: &CsmModel, cycle: &UpdateCycle, cfg: &CompareConfig) -> Result<CompareReport> {
    let joint = m.full_scope();
    let to_joint = |d: &Distribution| -> Result<Distribution> {
        if d.given().is_empty() && *d.scope() == joint {
            Ok(d.clone())
        } else {
            Err(IcrError::Scope("comparison needs joints over every variable".into()))
        }
    };

    let icr_cfg = IcrConfig { keep_history: true, ..cfg.icr.clone() };
    let start = Instant::now();
    let run = run_icr(m, cycle, &icr_cfg)?;
    let icr_seconds = start.elapsed().as_secs_f64();
    let stationary = to_joint(run.iterates.last().expect("non-empty"))?;
    let reference = match &cfg.reference {
        Some(r) => to_joint(r)?,
        None => stationary.clone(),
    };

    let mut rows = Vec::new();
    for (t, d) in run.history.iter().enumerate() {
        rows.push(ReportRow {
            method: "icr".into(),
            run: "0".into(),
            step: t + 1,
            samples: 0,
            sym_kl: sym_kl(&to_joint(d)?, &reference),
            wall_seconds: icr_seconds,
        });
    }

    let start = Instant::now();
    let power = power_iterate(m, cycle, cfg.power_tol, cfg.power_max_iter)?;
    let power_seconds = start.elapsed().as_secs_f64();
    for (k, d) in power.iterates.iter().enumerate() {
        rows.push(ReportRow {
            method: "power".into(),
            run: "0".into(),
            step: k + 1,
            samples: 0,
            sym_kl: sym_kl(d, &reference),
            wall_seconds: power_seconds,
        });
    }

    let mut gs_seconds = 0.0;
    for chain in 0..cfg.chains {
        let start = Instant::now();
        let traces = gibbs_batches(m, cycle, cfg.gs_batch, cfg.gs_batches, cfg.gs_burn_in, cfg.seed, chain)?;
        let secs = start.elapsed().as_secs_f64();
        gs_seconds += secs;
        for (b, tr) in traces.iter().enumerate() {
            let Some(emp) = tr.empirical(m) else { continue };
            rows.push(ReportRow {
                method: "gs".into(),
                run: chain.to_string(),
                step: b + 1,
                samples: tr.draws,
                sym_kl: sym_kl(&emp, &reference),
                wall_seconds: secs,
            });
        }
    }

    for (name, init) in &cfg.inits {
        let c = IcrConfig { init: InitSpec::Distribution(init.clone()), keep_history: false, ..cfg.icr.clone() };
        let start = Instant::now();
        let r = run_icr(m, cycle, &c)?;
        let secs = start.elapsed().as_secs_f64();
        let d = to_joint(r.iterates.last().expect("non-empty"))?;
        rows.push(ReportRow {
            method: "icr-init".into(),
            run: name.clone(),
            step: r.m_trace.len(),
            samples: 0,
            sym_kl: sym_kl(&d, &reference),
            wall_seconds: secs,
        });
    }

    Ok(CompareReport {
        rows,
        reference,
        icr_seconds,
        power_seconds,
        gs_seconds,
        reducible_warning: power.reducible_warning,
    })
}
