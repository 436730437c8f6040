//! Mixtures of stationary distributions that best agree with a model.
//!
//! The deviance of a candidate `p` against the model is
//! `Σ_i Σ_b p(b) · D(f_i(·|b) ‖ p(·|b))` over blocks `f_{a_i|b_i}`. When `p`
//! is conditioned on `Δ`, the `Δ` slices are summed without weights, like
//! every other divergence between conditional tables in this crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cycles::UpdateCycle;
use crate::engine::{run_icr, stationary_set, IcrConfig};
use crate::error::{IcrError, Result};
use crate::model::CsmModel;
use crate::tensor::{offset_map, Distribution};

pub const MULTISTARTS: usize = 20;
pub const WEIGHT_TOL: f64 = 1e-10;
const MAX_STEPS: usize = 500;
const GOLDEN_ITERS: usize = 80;
const FD_STEP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Kl,
    PearsonX2,
    FreemanTukeyF2,
}

impl std::str::FromStr for Measure {
    type Err = IcrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(Measure::Kl),
            "x2" | "pearson-x2" => Ok(Measure::PearsonX2),
            "f2" | "freeman-tukey-f2" => Ok(Measure::FreemanTukeyF2),
            other => Err(IcrError::Validation(format!("unknown measure `{other}`"))),
        }
    }
}

impl Measure {
    /// `D(f ‖ m)` on one conditional slice.
    fn slice(self, f: &[f64], m: &[f64]) -> f64 {
        let mut total = 0.0;
        for (&a, &b) in f.iter().zip(m) {
            total += match self {
                Measure::Kl if a > 0.0 => {
                    if b <= 0.0 {
                        return f64::INFINITY;
                    }
                    a * (a / b).ln()
                }
                Measure::Kl => 0.0,
                Measure::PearsonX2 if b > 0.0 => (a - b) * (a - b) / b,
                Measure::PearsonX2 if a > 0.0 => return f64::INFINITY,
                Measure::PearsonX2 => 0.0,
                Measure::FreemanTukeyF2 => 4.0 * (a.sqrt() - b.sqrt()).powi(2),
            };
        }
        match self {
            Measure::Kl => total.max(0.0),
            _ => total,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    pub members: Vec<Distribution>,
    /// Cycle and rotation that produced each member.
    pub sources: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MixtureResult {
    pub weights: Vec<f64>,
    #[serde(skip)]
    pub mixture: Distribution,
    pub deviance: f64,
    pub measure: Measure,
}

/// Evaluates the deviance of many tables sharing one layout.
struct Deviance<'a> {
    m: &'a CsmModel,
    maps: Vec<Vec<usize>>,
    measure: Measure,
}

impl<'a> Deviance<'a> {
    fn new(m: &'a CsmModel, frame: &Distribution, measure: Measure) -> Result<Self> {
        let vars = frame.scope().union(frame.given());
        if vars.len() != m.variables().len() {
            return Err(IcrError::Scope("deviance needs a table over every model variable".into()));
        }
        let layout = frame.layout();
        let mut maps = Vec::with_capacity(m.blocks().len());
        for b in m.blocks() {
            if !frame.given().is_subset_of(b.predictors()) {
                return Err(IcrError::Scope(format!(
                    "block `{}` does not condition on every conditioning variable of the mixture",
                    b.id
                )));
            }
            maps.push(offset_map(&layout, &b.table.layout()));
        }
        Ok(Deviance { m, maps, measure })
    }

    fn eval(&self, values: &[f64]) -> f64 {
        let mut total = 0.0;
        for (b, map) in self.m.blocks().iter().zip(&self.maps) {
            let f = b.table.values();
            let mut joint = vec![0.0; f.len()];
            for (v, &o) in values.iter().zip(map) {
                joint[o] += v;
            }
            let n = b.target().size();
            for (fs, ps) in f.chunks(n).zip(joint.chunks_mut(n)) {
                let w: f64 = ps.iter().sum();
                if w <= 0.0 || fs.iter().all(|&x| x == 0.0) {
                    continue;
                }
                ps.iter_mut().for_each(|p| *p /= w);
                total += w * self.measure.slice(fs, ps);
            }
        }
        total
    }
}

/// Deviance of `mix` against `m`. Configurations of `b_i` with zero mass
/// under `mix` contribute nothing.
pub fn model_deviance(mix: &Distribution, m: &CsmModel, measure: Measure) -> Result<f64> {
    Ok(Deviance::new(m, mix, measure)?.eval(mix.values()))
}

fn check_members(e: &Ensemble) -> Result<()> {
    let first = e.members.first().ok_or_else(|| IcrError::Validation("empty ensemble".into()))?;
    if e.members.iter().any(|d| !d.same_frame(first)) {
        return Err(IcrError::Scope("ensemble members differ in variables".into()));
    }
    Ok(())
}

fn mix_values(e: &Ensemble, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; e.members[0].values().len()];
    for (d, &wk) in e.members.iter().zip(w) {
        if wk != 0.0 {
            for (o, v) in out.iter_mut().zip(d.values()) {
                *o += wk * v;
            }
        }
    }
    out
}

fn result(e: &Ensemble, w: Vec<f64>, deviance: f64, measure: Measure) -> MixtureResult {
    let first = &e.members[0];
    let mixture = Distribution::from_weights(first.scope().clone(), first.given().clone(), mix_values(e, &w))
        .expect("convex combination of distributions");
    MixtureResult { weights: w, mixture, deviance, measure }
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn golden<F: Fn(f64) -> f64>(f: F) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    // the line search may not move uphill from the current point
    let f0 = f(0.0);
    let f1 = f(1.0);
    [(0.0, f0), (1.0, f1), (x, fx)].into_iter().fold((0.0, f0), |best, p| if p.1 < best.1 { p } else { best })
}

fn descend(e: &Ensemble, dev: &Deviance, mut w: Vec<f64>) -> (Vec<f64>, f64) {
    let g = |w: &[f64]| dev.eval(&mix_values(e, w));
    let mut fw = g(&w);
    for _ in 0..MAX_STEPS {
        let grad: Vec<f64> = (0..w.len())
            .map(|k| {
                let mut up = w.clone();
                up[k] += FD_STEP;
                if w[k] < FD_STEP {
                    // one-sided at the boundary keeps every weight non-negative
                    return (g(&up) - fw) / FD_STEP;
                }
                let mut down = w.clone();
                down[k] -= FD_STEP;
                (g(&up) - g(&down)) / (2.0 * FD_STEP)
            })
            .collect();
        let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            break;
        }
        let target = project_simplex(&w.iter().zip(&grad).map(|(x, d)| x - d / norm).collect::<Vec<_>>());
        let dir: Vec<f64> = target.iter().zip(&w).map(|(t, x)| t - x).collect();
        let (alpha, f_new) = golden(|a| g(&w.iter().zip(&dir).map(|(x, d)| x + a * d).collect::<Vec<_>>()));
        let step = dir.iter().map(|d| (alpha * d).abs()).fold(0.0, f64::max);
        if f_new < fw {
            w = project_simplex(&w.iter().zip(&dir).map(|(x, d)| x + alpha * d).collect::<Vec<_>>());
            fw = g(&w);
        }
        if step < WEIGHT_TOL {
            break;
        }
    }
    (w, fw)
}

/// Weights on the simplex minimizing the deviance of the mixture: projected
/// gradient with golden-section line search from [`MULTISTARTS`] starts
/// (center, vertices, then seeded random points). Earlier starts win ties.
pub fn optimize_mixture(e: &Ensemble, m: &CsmModel, measure: Measure) -> Result<MixtureResult> {
    check_members(e)?;
    let n = e.members.len();
    let dev = Deviance::new(m, &e.members[0], measure)?;
    if n == 1 {
        let d = dev.eval(e.members[0].values());
        return Ok(result(e, vec![1.0], d, measure));
    }
    let mut starts = vec![vec![1.0 / n as f64; n]];
    for k in 0..n {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        starts.push(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    while starts.len() < MULTISTARTS {
        let x: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let s: f64 = x.iter().sum();
        starts.push(x.into_iter().map(|v| v / s).collect());
    }
    starts.truncate(MULTISTARTS.max(n + 1));

    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in starts {
        let (w, f) = descend(e, &dev, s);
        if best.as_ref().is_none_or(|(_, bf)| f < bf - 1e-12) {
            best = Some((w, f));
        }
    }
    let (w, f) = best.expect("at least one start");
    Ok(result(e, w, f, measure))
}

/// Exhaustive search over simplex points with coordinates on a `step` grid,
/// for up to three members.
pub fn grid_search_mixture(e: &Ensemble, m: &CsmModel, measure: Measure, step: f64) -> Result<MixtureResult> {
    check_members(e)?;
    let n = e.members.len();
    if n > 3 {
        return Err(IcrError::InstanceTooLarge("grid search supports at most three members".into()));
    }
    let dev = Deviance::new(m, &e.members[0], measure)?;
    let k = (1.0 / step).round() as usize;
    let mut best = (vec![1.0], f64::INFINITY);
    let mut consider = |w: Vec<f64>| {
        let f = dev.eval(&mix_values(e, &w));
        if f < best.1 {
            best = (w, f);
        }
    };
    match n {
        1 => consider(vec![1.0]),
        2 => (0..=k).for_each(|i| {
            let a = i as f64 / k as f64;
            consider(vec![a, 1.0 - a]);
        }),
        _ => {
            for i in 0..=k {
                for j in 0..=k - i {
                    let (a, b) = (i as f64 / k as f64, j as f64 / k as f64);
                    consider(vec![a, b, (1.0 - a - b).max(0.0)]);
                }
            }
        }
    }
    let (w, f) = best;
    Ok(result(e, w, f, measure))
}

/// Stationary members over every model variable from each cycle's run.
/// Members of unsaturated models that cover only part of the variables are
/// left out.
pub fn collect_ensemble(m: &CsmModel, cycles: &[UpdateCycle], cfg: &IcrConfig) -> Result<Ensemble> {
    let mut members = Vec::new();
    let mut sources = Vec::new();
    for c in cycles {
        let run = run_icr(m, c, cfg)?;
        let set = stationary_set(&run)?;
        for (d, tag) in set.members.into_iter().zip(set.tags) {
            if d.scope().len() + d.given().len() == m.variables().len() {
                sources.push(format!("{} [{}]", c.order.join(","), tag));
                members.push(d);
            }
        }
    }
    if members.is_empty() {
        return Err(IcrError::Validation("no stationary member covers every variable".into()));
    }
    Ok(Ensemble { members, sources })
}
