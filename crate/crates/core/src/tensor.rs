//! Dense distributions over categorical variables.
//!
//! A [`Distribution`] is a flat table over `scope ∪ given`. The scope variables
//! come first in the layout, the conditioning (`given`) variables after them,
//! and inside each group variables are ordered by id with the first one varying
//! fastest. Because the scope block is contiguous, every configuration of the
//! conditioning variables owns one contiguous slice of `scope.size()` cells.
//!
//! A slice of a conditional table may be all zero: the conditional is then
//! undefined at that configuration (it lies outside the support of the model).
//! Composing such a table with a marginal that puts mass there is a
//! [`IcrError::Support`] error.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IcrError, Result};

/// Sum-to-one tolerance for tables built by this crate.
pub const SUM_TOL: f64 = 1e-12;
/// Tables read from disk may be off by this much; they are renormalized with a warning.
pub const INPUT_SUM_TOL: f64 = 1e-6;

pub type VarId = usize;

/// One variable of a layout: its id in the model and its number of categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Axis {
    pub var: VarId,
    pub card: usize,
}

impl Axis {
    pub fn new(var: VarId, card: usize) -> Self {
        Axis { var, card }
    }
}

/// An ordered set of variables, always sorted by id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Axis>", into = "Vec<Axis>")]
pub struct Scope {
    axes: Vec<Axis>,
}

impl TryFrom<Vec<Axis>> for Scope {
    type Error = IcrError;
    fn try_from(axes: Vec<Axis>) -> Result<Self> {
        Scope::new(axes)
    }
}

impl From<Scope> for Vec<Axis> {
    fn from(s: Scope) -> Self {
        s.axes
    }
}

impl Scope {
    pub fn new(mut axes: Vec<Axis>) -> Result<Self> {
        axes.sort();
        for w in axes.windows(2) {
            if w[0].var == w[1].var {
                return Err(IcrError::Scope(format!("variable {} listed twice", w[0].var)));
            }
        }
        if let Some(a) = axes.iter().find(|a| a.card == 0) {
            return Err(IcrError::Scope(format!("variable {} has no categories", a.var)));
        }
        Ok(Scope { axes })
    }

    pub fn empty() -> Self {
        Scope::default()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.axes.iter().map(|a| a.var)
    }

    pub fn contains(&self, var: VarId) -> bool {
        self.axes.binary_search_by_key(&var, |a| a.var).is_ok()
    }

    /// Number of configurations.
    pub fn size(&self) -> usize {
        self.axes.iter().map(|a| a.card).product()
    }

    pub fn union(&self, other: &Scope) -> Scope {
        let mut axes = self.axes.clone();
        for a in &other.axes {
            if !self.contains(a.var) {
                axes.push(*a);
            }
        }
        axes.sort();
        Scope { axes }
    }

    pub fn intersect(&self, other: &Scope) -> Scope {
        Scope { axes: self.axes.iter().copied().filter(|a| other.contains(a.var)).collect() }
    }

    pub fn minus(&self, other: &Scope) -> Scope {
        Scope { axes: self.axes.iter().copied().filter(|a| !other.contains(a.var)).collect() }
    }

    pub fn is_subset_of(&self, other: &Scope) -> bool {
        self.axes.iter().all(|a| other.contains(a.var))
    }

    pub fn is_disjoint(&self, other: &Scope) -> bool {
        self.axes.iter().all(|a| !other.contains(a.var))
    }

    fn check_cards(&self, other: &Scope) -> Result<()> {
        for a in &self.axes {
            if let Some(b) = other.axes.iter().find(|b| b.var == a.var) {
                if b.card != a.card {
                    return Err(IcrError::Scope(format!(
                        "variable {} has cardinality {} and {}",
                        a.var, a.card, b.card
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Offsets into the `target` layout of every cell of the `source` layout, in
/// source order. Variables of `source` missing from `target` are summed over
/// (stride 0); every variable of `target` must appear in `source`.
pub(crate) fn offset_map(source: &[Axis], target: &[Axis]) -> Vec<usize> {
    let mut target_strides = Vec::with_capacity(target.len());
    let mut s = 1;
    for a in target {
        target_strides.push((a.var, s));
        s *= a.card;
    }
    let strides: Vec<usize> =
        source.iter().map(|a| target_strides.iter().find(|(v, _)| *v == a.var).map_or(0, |(_, s)| *s)).collect();
    let cards: Vec<usize> = source.iter().map(|a| a.card).collect();
    let total: usize = cards.iter().product();

    let mut out = Vec::with_capacity(total);
    let mut counter = vec![0usize; cards.len()];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(offset);
        for k in 0..cards.len() {
            counter[k] += 1;
            offset += strides[k];
            if counter[k] < cards[k] {
                break;
            }
            offset -= strides[k] * cards[k];
            counter[k] = 0;
        }
    }
    out
}

/// A joint, marginal or conditional table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct Distribution {
    scope: Scope,
    given: Scope,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDistribution {
    scope: Scope,
    given: Scope,
    values: Vec<f64>,
}

impl TryFrom<RawDistribution> for Distribution {
    type Error = IcrError;
    fn try_from(r: RawDistribution) -> Result<Self> {
        Distribution::new(r.scope, r.given, r.values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SliceCheck {
    /// Every slice must sum to one.
    Strict,
    /// Slices of a conditional may also be entirely zero (undefined).
    AllowUndefined,
}

impl Distribution {
    /// Builds a table whose slices already sum to one within [`SUM_TOL`].
    /// Slices of a conditional table may be all zero.
    pub fn new(scope: Scope, given: Scope, values: Vec<f64>) -> Result<Self> {
        let d = Self::checked_layout(scope, given, values)?;
        d.check_sums(SUM_TOL, SliceCheck::AllowUndefined)?;
        Ok(d)
    }

    /// Like [`Distribution::new`] but tolerates slices off by up to
    /// [`INPUT_SUM_TOL`], renormalizing them.
    pub fn from_table(scope: Scope, given: Scope, values: Vec<f64>) -> Result<Self> {
        let d = Self::checked_layout(scope, given, values)?;
        if d.check_sums(SUM_TOL, SliceCheck::AllowUndefined).is_ok() {
            return Ok(d);
        }
        d.check_sums(INPUT_SUM_TOL, SliceCheck::AllowUndefined)?;
        log::warn!("table slices off by more than {SUM_TOL:e}; renormalizing");
        d.normalize_partial()
    }

    /// Normalizes arbitrary non-negative weights slice by slice.
    pub fn from_weights(scope: Scope, given: Scope, weights: Vec<f64>) -> Result<Self> {
        Self::checked_layout(scope, given, weights)?.normalize()
    }

    pub fn uniform(scope: Scope, given: Scope) -> Self {
        let n = scope.size();
        let values = vec![1.0 / n as f64; n * given.size()];
        Distribution { scope, given, values }
    }

    /// Strictly positive random table; weights are uniform on (0.05, 1].
    pub fn random<R: Rng + ?Sized>(scope: Scope, given: Scope, rng: &mut R) -> Self {
        let n = scope.size() * given.size();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..=1.0)).collect();
        Distribution::from_weights(scope, given, w).expect("positive weights")
    }

    pub(crate) fn raw(scope: Scope, given: Scope, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), scope.size() * given.size());
        Distribution { scope, given, values }
    }

    fn checked_layout(scope: Scope, given: Scope, values: Vec<f64>) -> Result<Self> {
        if !scope.is_disjoint(&given) {
            return Err(IcrError::Scope("scope and given overlap".into()));
        }
        if scope.is_empty() {
            return Err(IcrError::Scope("distribution needs at least one scope variable".into()));
        }
        let n = scope.size() * given.size();
        if values.len() != n {
            return Err(IcrError::InvalidDistribution(format!("expected {n} values, found {}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(IcrError::InvalidDistribution(format!("bad cell value {v}")));
        }
        Ok(Distribution { scope, given, values })
    }

    fn check_sums(&self, tol: f64, mode: SliceCheck) -> Result<()> {
        for (i, s) in self.slices().enumerate() {
            let total: f64 = s.iter().sum();
            if total == 0.0 && mode == SliceCheck::AllowUndefined && !self.given.is_empty() {
                continue;
            }
            if (total - 1.0).abs() > tol {
                return Err(IcrError::InvalidDistribution(format!("slice {i} sums to {total}, not 1")));
            }
        }
        Ok(())
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn given(&self) -> &Scope {
        &self.given
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Scope axes followed by given axes: the storage order.
    /// Caller keeps the cells normalized.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> Vec<Axis> {
        self.scope.axes().iter().chain(self.given.axes()).copied().collect()
    }

    pub fn is_conditional(&self) -> bool {
        !self.given.is_empty()
    }

    /// One slice per configuration of the conditioning variables.
    pub fn slices(&self) -> std::slice::Chunks<'_, f64> {
        self.values.chunks(self.scope.size())
    }

    /// Mass of every slice; 0 marks an undefined conditional slice.
    pub fn slice_masses(&self) -> Vec<f64> {
        self.slices().map(|s| s.iter().sum()).collect()
    }

    /// Cell value at a configuration given in layout order.
    pub fn get(&self, config: &[usize]) -> f64 {
        let mut idx = 0;
        let mut stride = 1;
        for (a, &c) in self.layout().iter().zip(config) {
            idx += c * stride;
            stride *= a.card;
        }
        self.values[idx]
    }

    pub fn normalize(&self) -> Result<Distribution> {
        self.rescale(SliceCheck::Strict)
    }

    /// Normalizes every slice with positive mass and leaves zero slices as
    /// undefined.
    pub fn normalize_partial(&self) -> Result<Distribution> {
        self.rescale(SliceCheck::AllowUndefined)
    }

    fn rescale(&self, mode: SliceCheck) -> Result<Distribution> {
        let n = self.scope.size();
        let mut values = self.values.clone();
        for (i, chunk) in values.chunks_mut(n).enumerate() {
            let total: f64 = chunk.iter().sum();
            if total == 0.0 {
                if mode == SliceCheck::Strict || self.given.is_empty() {
                    return Err(IcrError::AllZeroSlice { slice: i });
                }
                continue;
            }
            chunk.iter_mut().for_each(|v| *v /= total);
        }
        Ok(Distribution::raw(self.scope.clone(), self.given.clone(), values))
    }

    /// Sums out every scope variable not in `keep`. Conditioning variables are
    /// never summed over.
    pub fn marginalize(&self, keep: &Scope) -> Result<Distribution> {
        if !keep.is_subset_of(&self.scope) {
            return Err(IcrError::Scope("marginal scope is not part of the distribution scope".into()));
        }
        keep.check_cards(&self.scope)?;
        if keep.len() == self.scope.len() {
            return Ok(self.clone());
        }
        let target: Vec<Axis> = keep.axes().iter().chain(self.given.axes()).copied().collect();
        let map = offset_map(&self.layout(), &target);
        let mut out = vec![0.0; keep.size() * self.given.size()];
        for (v, &o) in self.values.iter().zip(&map) {
            out[o] += v;
        }
        Ok(Distribution::raw(keep.clone(), self.given.clone(), out))
    }

    /// Extracts the conditional of the remaining scope variables given `on`.
    pub fn condition(&self, on: &Scope) -> Result<Distribution> {
        self.condition_impl(on, SliceCheck::Strict)
    }

    /// Like [`Distribution::condition`] but zero-mass configurations of `on`
    /// become undefined (all-zero) slices instead of an error.
    pub fn condition_partial(&self, on: &Scope) -> Result<Distribution> {
        self.condition_impl(on, SliceCheck::AllowUndefined)
    }

    fn condition_impl(&self, on: &Scope, mode: SliceCheck) -> Result<Distribution> {
        if on.is_empty() || !on.is_subset_of(&self.scope) || on.len() == self.scope.len() {
            return Err(IcrError::Scope("conditioning set must be a non-empty proper subset of the scope".into()));
        }
        on.check_cards(&self.scope)?;
        let marginal = self.marginalize(on)?;
        let scope = self.scope.minus(on);
        let given = on.union(&self.given);
        let target: Vec<Axis> = scope.axes().iter().chain(given.axes()).copied().collect();
        let joint_map = offset_map(&target, &self.layout());
        let marg_map = offset_map(&target, &marginal.layout());
        let mut out = Vec::with_capacity(joint_map.len());
        for (&j, &m) in joint_map.iter().zip(&marg_map) {
            let denom = marginal.values[m];
            if denom == 0.0 {
                if mode == SliceCheck::Strict {
                    return Err(IcrError::AllZeroSlice { slice: m });
                }
                out.push(0.0);
            } else {
                out.push(self.values[j] / denom);
            }
        }
        Ok(Distribution::raw(scope, given, out))
    }

    /// Same scope and same conditioning variables.
    pub fn same_frame(&self, other: &Distribution) -> bool {
        self.scope == other.scope && self.given == other.given
    }
}

/// Multiplies a conditional by a marginal that supplies exactly its
/// conditioning variables: `cond(scope | given) * marg(m | g)` with
/// `m ∪ g = cond.given`. The result has scope `cond.scope ∪ m` and given `g`.
pub fn compose(cond: &Distribution, marg: &Distribution) -> Result<Distribution> {
    let needed = cond.given();
    let supplied = marg.scope().union(marg.given());
    if supplied != *needed {
        return Err(IcrError::Scope("marginal variables do not match the conditioning set of the conditional".into()));
    }
    if !cond.scope().is_disjoint(&supplied) {
        return Err(IcrError::Scope("conditional scope overlaps the marginal".into()));
    }

    let masses = cond.slice_masses();
    let to_slice = offset_map(&marg.layout(), needed.axes());
    for (v, &s) in marg.values().iter().zip(&to_slice) {
        if *v > 0.0 && masses[s] == 0.0 {
            return Err(IcrError::Support(format!(
                "marginal puts mass {v:e} where the conditional is undefined (slice {s})"
            )));
        }
    }

    let scope = cond.scope().union(marg.scope());
    let given = marg.given().clone();
    let target: Vec<Axis> = scope.axes().iter().chain(given.axes()).copied().collect();
    let cmap = offset_map(&target, &cond.layout());
    let mmap = offset_map(&target, &marg.layout());
    let values = cmap.iter().zip(&mmap).map(|(&c, &m)| cond.values()[c] * marg.values()[m]).collect();
    Ok(Distribution::raw(scope, given, values))
}

/// Divergences between two tables over the same variables, in nats.
/// Conditional tables are compared cell by cell over all slices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub kl_forward: f64,
    pub kl_backward: f64,
    pub symmetric: f64,
    pub total_variation: f64,
    /// `p` has mass where `q` is zero.
    pub forward_infinite: bool,
    pub backward_infinite: bool,
}

/// Drift `Σ_{p>0} (p − q)` at or below this fraction of the compared mass is
/// normalization rounding, not mass off `p`'s support.
const DRIFT_TOL: f64 = 1e-13;

/// `Σ p log(p/q)`, with `0 log 0 = 0`, `+∞` when `p > 0 = q`.
///
/// Summed as the non-negative Bregman terms `p log(p/q) − p + q` plus the
/// drift `Σ_{p>0} (p − q)`, so nearly equal tables stay accurate far below
/// 1e-16.
pub fn kl_values(p: &[f64], q: &[f64]) -> f64 {
    let mut core = 0.0;
    let mut drift = 0.0;
    let mut mass = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            let d = a - b;
            core += a * (d / b).ln_1p() - d;
            drift += d;
            mass += a + b;
        }
    }
    if drift.abs() <= DRIFT_TOL * mass {
        drift = 0.0;
    }
    (core.max(0.0) + drift).max(0.0)
}

pub fn symmetric_kl_values(p: &[f64], q: &[f64]) -> f64 {
    kl_values(p, q) + kl_values(q, p)
}

pub fn kl(p: &Distribution, q: &Distribution) -> Result<DivergenceReport> {
    if !p.same_frame(q) {
        return Err(IcrError::Scope("divergence between tables over different variables".into()));
    }
    let f = kl_values(p.values(), q.values());
    let b = kl_values(q.values(), p.values());
    let tv = 0.5 * p.values().iter().zip(q.values()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(DivergenceReport {
        kl_forward: f,
        kl_backward: b,
        symmetric: f + b,
        total_variation: tv,
        forward_infinite: f.is_infinite(),
        backward_infinite: b.is_infinite(),
    })
}

/// Total variation distance `½ Σ |p − q|`.
pub fn total_variation(p: &Distribution, q: &Distribution) -> Result<f64> {
    Ok(kl(p, q)?.total_variation)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ax(var: usize, card: usize) -> Axis {
        Axis::new(var, card)
    }

    fn s(axes: &[(usize, usize)]) -> Scope {
        Scope::new(axes.iter().map(|&(v, c)| ax(v, c)).collect()).unwrap()
    }

    fn example1_joint() -> Distribution {
        let w = vec![1.0, 3.0, 4.0, 2.0, 3.0, 3.0, 3.0, 1.0];
        Distribution::from_weights(s(&[(0, 2), (1, 2), (2, 2)]), Scope::empty(), w).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn normalize_binary() {
        let d = Distribution::from_weights(s(&[(0, 2)]), Scope::empty(), vec![2.0, 2.0]).unwrap();
        assert_eq!(d.values(), &[0.5, 0.5]);
        let d = Distribution::from_weights(s(&[(0, 2)]), Scope::empty(), vec![1.0, 3.0]).unwrap();
        assert_eq!(d.values(), &[0.25, 0.75]);
    }

    #[test]
    fn normalize_example1_numerators() {
        let d = example1_joint();
        let expect: Vec<f64> = [1.0, 3.0, 4.0, 2.0, 3.0, 3.0, 3.0, 1.0].iter().map(|v| v / 20.0).collect();
        assert!(close(d.values(), &expect, 1e-15));
    }

    #[test]
    fn normalize_zero_slice_is_error() {
        let raw = Distribution::raw(s(&[(0, 2)]), s(&[(1, 2)]), vec![0.0, 0.0, 1.0, 3.0]);
        assert!(matches!(raw.normalize(), Err(IcrError::AllZeroSlice { slice: 0 })));
        let partial = raw.normalize_partial().unwrap();
        assert_eq!(partial.values(), &[0.0, 0.0, 0.25, 0.75]);
    }

    #[test]
    fn marginalize_example1() {
        let pi = example1_joint();
        let f3 = pi.marginalize(&s(&[(2, 2)])).unwrap();
        assert!(close(f3.values(), &[0.5, 0.5], 1e-15));
        let p12 = pi.marginalize(&s(&[(0, 2), (1, 2)])).unwrap();
        assert!(close(p12.values(), &[4.0 / 20.0, 6.0 / 20.0, 7.0 / 20.0, 3.0 / 20.0], 1e-15));
    }

    #[test]
    fn marginalize_uniform_stays_uniform() {
        let u = Distribution::uniform(s(&[(0, 2), (1, 2), (2, 2)]), Scope::empty());
        for pair in [[0, 1], [0, 2], [1, 2]] {
            let m = u.marginalize(&s(&[(pair[0], 2), (pair[1], 2)])).unwrap();
            assert!(close(m.values(), &[0.25; 4], 1e-15));
        }
    }

    #[test]
    fn marginalize_rejects_foreign_variable() {
        let pi = example1_joint();
        assert!(matches!(pi.marginalize(&s(&[(7, 2)])), Err(IcrError::Scope(_))));
    }

    #[test]
    fn condition_example1_rows() {
        let pi = example1_joint();
        let f1 = pi.condition(&s(&[(1, 2), (2, 2)])).unwrap();
        let expect = [1.0 / 4.0, 3.0 / 4.0, 2.0 / 3.0, 1.0 / 3.0, 0.5, 0.5, 3.0 / 4.0, 1.0 / 4.0];
        assert!(close(f1.values(), &expect, 1e-15));
        // f_{2|13}: layout is x2 fastest then (x1, x3).
        let f2 = pi.condition(&s(&[(0, 2), (2, 2)])).unwrap();
        assert_eq!(f2.scope(), &s(&[(1, 2)]));
        // Target x2 fastest, then x1, then x3.
        let expect = [1.0 / 5.0, 4.0 / 5.0, 3.0 / 5.0, 2.0 / 5.0, 0.5, 0.5, 3.0 / 4.0, 1.0 / 4.0];
        assert!(close(f2.values(), &expect, 1e-15));
    }

    #[test]
    fn condition_uniform_pair() {
        let u = Distribution::uniform(s(&[(0, 2), (1, 2)]), Scope::empty());
        let c = u.condition(&s(&[(1, 2)])).unwrap();
        assert!(close(c.values(), &[0.5; 4], 1e-15));
    }

    #[test]
    fn condition_sticky_joint() {
        let w = vec![200000.0, 2.0, 500000.0, 5.0, 7.0, 1.0];
        let pi = Distribution::from_weights(s(&[(0, 2), (1, 3)]), Scope::empty(), w).unwrap();
        let f21 = pi.condition(&s(&[(0, 2)])).unwrap();
        // layout: x2 fastest, then x1
        let expect = [200000.0 / 700007.0, 500000.0 / 700007.0, 7.0 / 700007.0, 2.0 / 8.0, 5.0 / 8.0, 1.0 / 8.0];
        assert!(close(f21.values(), &expect, 1e-15));
    }

    #[test]
    fn condition_zero_mass_is_error() {
        let d = Distribution::new(s(&[(0, 2), (1, 2)]), Scope::empty(), vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(matches!(d.condition(&s(&[(1, 2)])), Err(IcrError::AllZeroSlice { .. })));
        let c = d.condition_partial(&s(&[(1, 2)])).unwrap();
        assert_eq!(c.values(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn compose_recovers_example1_joint() {
        let pi = example1_joint();
        let x23 = s(&[(1, 2), (2, 2)]);
        let f1 = pi.condition(&x23).unwrap();
        let p23 = pi.marginalize(&x23).unwrap();
        let back = compose(&f1, &p23).unwrap();
        assert!(close(back.values(), pi.values(), 1e-15));

        let x13 = s(&[(0, 2), (2, 2)]);
        let f2 = pi.condition(&x13).unwrap();
        let back = compose(&f2, &pi.marginalize(&x13).unwrap()).unwrap();
        assert!(close(back.values(), pi.values(), 1e-15));
    }

    #[test]
    fn compose_with_uniform_marginal() {
        let f = Distribution::new(s(&[(0, 2)]), s(&[(1, 2)]), vec![0.3, 0.7, 0.9, 0.1]).unwrap();
        let u = Distribution::uniform(s(&[(1, 2)]), Scope::empty());
        let joint = compose(&f, &u).unwrap();
        let m = joint.marginalize(&s(&[(1, 2)])).unwrap();
        assert!(close(m.values(), &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn compose_support_error() {
        let f = Distribution::new(s(&[(0, 2)]), s(&[(1, 2)]), vec![0.3, 0.7, 0.0, 0.0]).unwrap();
        let m = Distribution::new(s(&[(1, 2)]), Scope::empty(), vec![0.5, 0.5]).unwrap();
        assert!(matches!(compose(&f, &m), Err(IcrError::Support(_))));
        let m = Distribution::new(s(&[(1, 2)]), Scope::empty(), vec![1.0, 0.0]).unwrap();
        assert!(compose(&f, &m).is_ok());
    }

    #[test]
    fn compose_scope_mismatch() {
        let f = Distribution::new(s(&[(0, 2)]), s(&[(1, 2)]), vec![0.3, 0.7, 0.9, 0.1]).unwrap();
        let m = Distribution::uniform(s(&[(2, 2)]), Scope::empty());
        assert!(matches!(compose(&f, &m), Err(IcrError::Scope(_))));
    }

    #[test]
    fn kl_identity_and_closed_form() {
        let p = Distribution::new(s(&[(0, 2)]), Scope::empty(), vec![0.5, 0.5]).unwrap();
        let r = kl(&p, &p).unwrap();
        assert_eq!((r.kl_forward, r.kl_backward, r.total_variation), (0.0, 0.0, 0.0));
        let q = Distribution::new(s(&[(0, 2)]), Scope::empty(), vec![0.25, 0.75]).unwrap();
        let r = kl(&p, &q).unwrap();
        // 0.5 ln 2 + 0.5 ln(2/3)
        let expect = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((r.kl_forward - expect).abs() < 1e-15);
        assert!((r.kl_forward - 0.14384).abs() < 1e-5);
        assert!((r.total_variation - 0.25).abs() < 1e-15);
    }

    #[test]
    fn kl_infinite_flag() {
        let p = Distribution::new(s(&[(0, 2)]), Scope::empty(), vec![0.5, 0.5]).unwrap();
        let q = Distribution::new(s(&[(0, 2)]), Scope::empty(), vec![1.0, 0.0]).unwrap();
        let r = kl(&p, &q).unwrap();
        assert!(r.forward_infinite && r.kl_forward.is_infinite());
        assert!(!r.backward_infinite && r.kl_backward.is_finite());
    }

    #[test]
    fn from_table_tolerates_transcription_error() {
        let third = 0.3333333;
        let d = Distribution::from_table(s(&[(0, 3)]), Scope::empty(), vec![third, third, third]).unwrap();
        assert!((d.values().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let bad = Distribution::from_table(s(&[(0, 2)]), Scope::empty(), vec![0.4, 0.5]);
        assert!(bad.is_err());
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(Distribution::new(s(&[(0, 2)]), Scope::empty(), vec![1.5, -0.5]).is_err());
        assert!(Distribution::new(s(&[(0, 2)]), Scope::empty(), vec![1.0]).is_err());
        assert!(Distribution::new(s(&[(0, 2)]), s(&[(0, 2)]), vec![0.5; 4]).is_err());
        assert!(Scope::new(vec![ax(1, 2), ax(1, 2)]).is_err());
    }

    #[test]
    fn offset_map_matches_manual_index() {
        let src = [ax(0, 2), ax(1, 3), ax(2, 2)];
        let tgt = [ax(2, 2), ax(0, 2)];
        let map = offset_map(&src, &tgt);
        let mut i = 0;
        for x2 in 0..2 {
            for _x1 in 0..3 {
                for x0 in 0..2 {
                    assert_eq!(map[i], x2 + 2 * x0);
                    i += 1;
                }
            }
        }
    }
}
