//! Instance generators and checks shared by the property suite and the
//! acceptance harness. Each check takes a seed and reports a failure as text.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use icr::{
    compose, derive_csm_from_joint, enumerate_cycles, ipf_fit, kl, project, transition_matrix, Axis, BlockPattern,
    ConditionalBlock, CsmModel, Distribution, Scope, Variable,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn variables(cards: &[usize]) -> Vec<Variable> {
    cards.iter().enumerate().map(|(i, &c)| Variable::new(format!("x{}", i + 1), c)).collect()
}

pub fn scope_of(cards: &[usize], vars: &[usize]) -> Scope {
    Scope::new(vars.iter().map(|&v| Axis::new(v, cards[v])).collect()).unwrap()
}

pub fn random_cards(r: &mut ChaCha8Rng, n: usize, max: usize) -> Vec<usize> {
    (0..n).map(|_| r.gen_range(2..=max)).collect()
}

pub fn full_joint(r: &mut ChaCha8Rng, cards: &[usize]) -> Distribution {
    let all: Vec<usize> = (0..cards.len()).collect();
    Distribution::random(scope_of(cards, &all), Scope::empty(), r)
}

fn name(v: usize) -> String {
    format!("x{}", v + 1)
}

/// `x_i | rest` for every variable.
pub fn saturated_pattern(n: usize) -> Vec<BlockPattern> {
    (0..n)
        .map(|i| {
            let preds: Vec<String> = (0..n).filter(|&j| j != i).map(name).collect();
            let preds: Vec<&str> = preds.iter().map(String::as_str).collect();
            BlockPattern::new(&format!("b{i}"), &[&name(i)], &preds)
        })
        .collect()
}

pub fn saturated_model(r: &mut ChaCha8Rng, cards: &[usize]) -> (CsmModel, Distribution) {
    let pi = full_joint(r, cards);
    let m = derive_csm_from_joint(variables(cards), &pi, &saturated_pattern(cards.len())).unwrap();
    (m, pi)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Non-empty target of at most two variables, arbitrary disjoint predictors.
pub fn random_block(r: &mut ChaCha8Rng, cards: &[usize], id: String) -> ConditionalBlock {
    let n = cards.len();
    let mut vars: Vec<usize> = (0..n).collect();
    vars.shuffle(r);
    let t = r.gen_range(1..=n.min(2));
    let p = r.gen_range(0..=n - t);
    let mut target = vars[..t].to_vec();
    let mut preds = vars[t..t + p].to_vec();
    target.sort_unstable();
    preds.sort_unstable();
    let table = Distribution::random(scope_of(cards, &target), scope_of(cards, &preds), r);
    ConditionalBlock::new(id, table)
}

pub fn random_model(r: &mut ChaCha8Rng, n_vars: usize, n_blocks: usize) -> CsmModel {
    let cards = vec![2; n_vars];
    let blocks = (0..n_blocks).map(|i| random_block(r, &cards, format!("b{i}"))).collect();
    CsmModel::new(variables(&cards), blocks).unwrap()
}

/// `I(q;τ) = I(q;q*) + I(q*;τ)` for `τ = f·τ₂` and `q* = f·q₂`.
pub fn check_pythagoras(seed: u64) -> Check {
    let mut r = rng(seed);
    let cards = random_cards(&mut r, 2, 4);
    let s1 = scope_of(&cards, &[0]);
    let s2 = scope_of(&cards, &[1]);
    let q = full_joint(&mut r, &cards);
    let f = Distribution::random(s1, s2.clone(), &mut r);
    let tau2 = Distribution::random(s2.clone(), Scope::empty(), &mut r);
    let tau = compose(&f, &tau2).unwrap();
    let star = compose(&f, &q.marginalize(&s2).unwrap()).unwrap();
    let lhs = kl(&q, &tau).unwrap().kl_forward;
    let rhs = kl(&q, &star).unwrap().kl_forward + kl(&star, &tau).unwrap().kl_forward;
    ((lhs - rhs).abs() < 1e-10).then_some(()).ok_or(format!("seed {seed}: {lhs} vs {rhs}"))
}

/// Projecting two joints onto the same full block never increases their KL.
pub fn check_contraction(seed: u64) -> Check {
    let mut r = rng(seed);
    let cards = random_cards(&mut r, 3, 3);
    let h = full_joint(&mut r, &cards);
    let g = full_joint(&mut r, &cards);
    let target = r.gen_range(0..3);
    let preds: Vec<usize> = (0..3).filter(|&v| v != target).collect();
    let f = Distribution::random(scope_of(&cards, &[target]), scope_of(&cards, &preds), &mut r);
    let block = ConditionalBlock::new("b", f);
    let before = kl(&h, &g).unwrap().kl_forward;
    let after = kl(&project(&h, &block).unwrap(), &project(&g, &block).unwrap()).unwrap().kl_forward;
    (after <= before + 1e-12).then_some(()).ok_or(format!("seed {seed}: {after} > {before}"))
}

/// The projection carries the block's conditional and keeps the predictors'
/// marginal.
pub fn check_h1_h2(seed: u64) -> Check {
    let mut r = rng(seed);
    let cards = random_cards(&mut r, 4, 3);
    let block = random_block(&mut r, &cards, "b".into());
    let ctx: Vec<usize> = block.context().vars().collect();
    let q = Distribution::random(scope_of(&cards, &ctx), Scope::empty(), &mut r);
    let p = project(&q, &block).unwrap();
    let h1 = if block.predictors().is_empty() {
        max_abs_diff(p.values(), block.table.values())
    } else {
        max_abs_diff(p.condition(block.predictors()).unwrap().values(), block.table.values())
    };
    if h1 >= 1e-14 {
        return Err(format!("seed {seed}: conditional off by {h1:e}"));
    }
    if !block.predictors().is_empty() {
        let a = q.marginalize(block.predictors()).unwrap();
        let b = p.marginalize(block.predictors()).unwrap();
        let h2 = max_abs_diff(a.values(), b.values());
        if h2 >= 1e-14 {
            return Err(format!("seed {seed}: marginal off by {h2:e}"));
        }
    }
    Ok(())
}

/// `q·T_i` equals the projection of `q` onto block `i`, and kernel rows sum
/// to one.
pub fn check_kernel(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.gen_range(2..=4);
    let cards = random_cards(&mut r, n, 3);
    let (m, _) = saturated_model(&mut r, &cards);
    let q = full_joint(&mut r, &cards);
    for b in m.blocks() {
        let t = transition_matrix(&m, &b.id).unwrap();
        let d = max_abs_diff(&t.apply(q.values()), project(&q, b).unwrap().values());
        if d >= 1e-12 {
            return Err(format!("seed {seed}: block {} differs by {d:e}", b.id));
        }
        for s in 0..t.states {
            let total: f64 = t.row(s).iter().map(|&(_, p)| p).sum();
            if (total - 1.0).abs() >= 1e-12 {
                return Err(format!("seed {seed}: row {s} sums to {total}"));
            }
        }
    }
    Ok(())
}

fn permutations(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, f);
        v.swap(k, i);
    }
}

/// Canonical cycles by brute force: every permutation led by block 0, each
/// edge checked straight from the set definitions.
pub fn brute_force_cycles(m: &CsmModel) -> BTreeSet<Vec<usize>> {
    let sets: Vec<(HashSet<usize>, HashSet<usize>)> =
        m.blocks().iter().map(|b| (b.target().vars().collect(), b.predictors().vars().collect())).collect();
    let permissible = |i: usize, j: usize| {
        let (ai, bi) = &sets[i];
        let (_, bj) = &sets[j];
        let rule_a = bj.iter().all(|v| ai.contains(v) || bi.contains(v));
        let rule_b = ai.iter().any(|v| bj.contains(v));
        i != j && rule_a && rule_b
    };
    let n = m.blocks().len();
    let mut out = BTreeSet::new();
    let mut tail: Vec<usize> = (1..n).collect();
    permutations(&mut tail, 0, &mut |tail| {
        let cycle: Vec<usize> = std::iter::once(0).chain(tail.iter().copied()).collect();
        if (0..n).all(|k| permissible(cycle[k], cycle[(k + 1) % n])) {
            out.insert(cycle);
        }
    });
    out
}

/// Enumeration agrees with brute force; `Δ` sits inside every block's
/// predictors whenever a cycle exists.
pub fn check_cycle_oracle(seed: u64, n_vars: usize, n_blocks: usize) -> Check {
    let mut r = rng(seed);
    let m = random_model(&mut r, n_vars, n_blocks);
    let got: BTreeSet<Vec<usize>> = enumerate_cycles(&m, usize::MAX).unwrap().into_iter().map(|c| c.indices).collect();
    let want = brute_force_cycles(&m);
    if got != want {
        return Err(format!("seed {seed}: enumerated {got:?}, brute force {want:?}"));
    }
    if !got.is_empty() && m.blocks().iter().any(|b| !m.delta().is_subset_of(b.predictors())) {
        return Err(format!("seed {seed}: delta escapes a block's predictors"));
    }
    Ok(())
}

/// IPF on the two-way margins of a joint without three-way interaction
/// returns that joint.
pub fn check_ipf(seed: u64) -> Check {
    let mut r = rng(seed);
    let cards = random_cards(&mut r, 3, 3);
    let full = scope_of(&cards, &[0, 1, 2]);
    let mut terms = Vec::new();
    for (a, b) in [(0, 1), (1, 2), (0, 2)] {
        let t: Vec<f64> = (0..cards[a] * cards[b]).map(|_| r.gen_range(-1.5..1.5)).collect();
        terms.push((a, b, t));
    }
    let w: Vec<f64> = (0..full.size())
        .map(|i| {
            let x = [i % cards[0], (i / cards[0]) % cards[1], i / (cards[0] * cards[1])];
            terms.iter().map(|(a, b, t)| t[x[*a] + cards[*a] * x[*b]]).sum::<f64>().exp()
        })
        .collect();
    let joint = Distribution::from_weights(full.clone(), Scope::empty(), w).unwrap();
    let margins: Vec<Distribution> =
        [[0, 1], [1, 2], [0, 2]].iter().map(|p| joint.marginalize(&scope_of(&cards, p)).unwrap()).collect();
    let fit = ipf_fit(&margins, &Distribution::uniform(full, Scope::empty()), 1e-13, 100_000).unwrap();
    let d = l1(fit.values(), joint.values());
    (d < 1e-8).then_some(()).ok_or(format!("seed {seed}: L1 {d:e}"))
}
