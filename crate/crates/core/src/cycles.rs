//! Permissible updating cycles.
//!
//! A step from block `i` to block `j` is permissible when `b_j ⊆ a_i ∪ b_i`
//! (rule A) and `a_i ∩ b_j ≠ ∅` (rule B). A cycle is a cyclic order of all
//! blocks whose every step, including the wrap-around, is permissible.

use serde::Serialize;

use crate::error::{IcrError, Result};
use crate::model::{ConditionalBlock, CsmModel};
use crate::tensor::Scope;

/// Largest block count accepted by exhaustive enumeration.
pub const MAX_ENUMERATION_BLOCKS: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EdgeCheck {
    pub from_block: String,
    pub to_block: String,
    pub rule_a: bool,
    pub rule_b: bool,
    pub permissible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UpdateCycle {
    /// Block ids in update order.
    pub order: Vec<String>,
    /// Positions of `order` in the model's block list.
    #[serde(skip)]
    pub indices: Vec<usize>,
    /// `edges[k]` goes from `order[k]` to `order[k + 1]`, wrapping.
    pub edges: Vec<EdgeCheck>,
    #[serde(skip)]
    pub delta: Scope,
}

impl UpdateCycle {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// The update order that ends with slot `k`, e.g. `"2,1"` for the slot
    /// of block `1` in the cycle `(1, 2)`.
    pub fn rotation_tag(&self, k: usize) -> String {
        let n = self.order.len();
        (1..=n).map(|s| self.order[(k + s) % n].as_str()).collect::<Vec<_>>().join(",")
    }

    /// Same cycle read from a different starting block.
    pub fn is_rotation_of(&self, other: &[&str]) -> bool {
        let n = self.order.len();
        n == other.len() && (0..n).any(|s| (0..n).all(|k| self.order[(s + k) % n] == other[k]))
    }
}

fn edge(from: &ConditionalBlock, to: &ConditionalBlock) -> EdgeCheck {
    let rule_a = to.predictors().is_subset_of(&from.context());
    let rule_b = !from.target().is_disjoint(to.predictors());
    EdgeCheck { from_block: from.id.clone(), to_block: to.id.clone(), rule_a, rule_b, permissible: rule_a && rule_b }
}

pub fn check_edge(m: &CsmModel, i: &str, j: &str) -> Result<EdgeCheck> {
    Ok(edge(m.block(i)?, m.block(j)?))
}

fn build_cycle(m: &CsmModel, indices: Vec<usize>) -> UpdateCycle {
    let blocks = m.blocks();
    let n = indices.len();
    let edges = (0..n).map(|k| edge(&blocks[indices[k]], &blocks[indices[(k + 1) % n]])).collect();
    UpdateCycle {
        order: indices.iter().map(|&i| blocks[i].id.clone()).collect(),
        indices,
        edges,
        delta: m.delta().clone(),
    }
}

/// Checks a user-supplied order and returns it as a cycle.
pub fn validate_cycle<S: AsRef<str>>(m: &CsmModel, order: &[S]) -> Result<UpdateCycle> {
    let indices = order.iter().map(|id| m.block_index(id.as_ref())).collect::<Result<Vec<_>>>()?;
    let mut seen = indices.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != indices.len() || indices.len() != m.blocks().len() {
        return Err(IcrError::ImpermissibleCycle("a cycle must list every block exactly once".into()));
    }
    let cycle = build_cycle(m, indices);
    if let Some(e) = cycle.edges.iter().find(|e| !e.permissible) {
        let which = match (e.rule_a, e.rule_b) {
            (false, false) => "rules A and B",
            (false, true) => "rule A",
            _ => "rule B",
        };
        return Err(IcrError::ImpermissibleCycle(format!("{} -> {} violates {which}", e.from_block, e.to_block)));
    }
    Ok(cycle)
}

/// All permissible cycles up to rotation, at most `limit`. Each is rotated so
/// that the lexicographically smallest block id comes first; output is sorted
/// by the resulting id sequence.
pub fn enumerate_cycles(m: &CsmModel, limit: usize) -> Result<Vec<UpdateCycle>> {
    let blocks = m.blocks();
    let n = blocks.len();
    if n > MAX_ENUMERATION_BLOCKS {
        return Err(IcrError::InstanceTooLarge(format!(
            "{n} blocks; exhaustive cycle enumeration supports at most {MAX_ENUMERATION_BLOCKS}"
        )));
    }
    let mut by_id: Vec<usize> = (0..n).collect();
    by_id.sort_by(|&a, &b| blocks[a].id.cmp(&blocks[b].id));
    let ok: Vec<Vec<bool>> =
        (0..n).map(|i| (0..n).map(|j| i != j && edge(&blocks[i], &blocks[j]).permissible).collect()).collect();

    if limit == 0 {
        return Ok(Vec::new());
    }
    let mut found: Vec<Vec<usize>> = Vec::new();
    let start = by_id[0];
    let mut path = vec![start];
    let mut used = vec![false; n];
    used[start] = true;
    dfs(&ok, &by_id, &mut path, &mut used, limit, &mut found);
    Ok(found.into_iter().map(|p| build_cycle(m, p)).collect())
}

fn dfs(
    ok: &[Vec<bool>],
    by_id: &[usize],
    path: &mut Vec<usize>,
    used: &mut [bool],
    limit: usize,
    found: &mut Vec<Vec<usize>>,
) {
    let last = *path.last().expect("path starts non-empty");
    if path.len() == ok.len() {
        if ok[last][path[0]] {
            found.push(path.clone());
        }
        return;
    }
    for &next in by_id {
        if found.len() >= limit {
            return;
        }
        if !used[next] && ok[last][next] {
            used[next] = true;
            path.push(next);
            dfs(ok, by_id, path, used, limit, found);
            path.pop();
            used[next] = false;
        }
    }
}

pub fn has_cycle_through_all(m: &CsmModel) -> Result<bool> {
    Ok(!enumerate_cycles(m, 1)?.is_empty())
}
