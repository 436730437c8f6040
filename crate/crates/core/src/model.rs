//! Conditionally specified models: variables, conditional blocks and the JSON
//! file format.
//!
//! Model file:
//!
//! ```json
//! { "variables": [{"name": "x1", "cardinality": 2}, ...],
//!   "blocks": [{"id": "f1|23", "target": ["x1"], "predictors": ["x2", "x3"],
//!               "values": [...]}] }
//! ```
//!
//! `values` is a flat table: target variables first, then predictors, each
//! group in declaration order with the first variable varying fastest.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{IcrError, Result};
use crate::tensor::{Axis, Distribution, Scope, VarId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub cardinality: usize,
}

impl Variable {
    pub fn new(name: impl Into<String>, cardinality: usize) -> Self {
        Variable { name: name.into(), cardinality }
    }
}

/// One element `f_{a|b}` of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalBlock {
    pub id: String,
    pub table: Distribution,
}

impl ConditionalBlock {
    pub fn new(id: impl Into<String>, table: Distribution) -> Self {
        ConditionalBlock { id: id.into(), table }
    }

    /// The variables this block specifies (`a`).
    pub fn target(&self) -> &Scope {
        self.table.scope()
    }

    /// The variables it conditions on (`b`).
    pub fn predictors(&self) -> &Scope {
        self.table.given()
    }

    /// `a ∪ b`.
    pub fn context(&self) -> Scope {
        self.target().union(self.predictors())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelClass {
    Saturated,
    Unsaturated,
}

/// A set of conditional blocks over declared variables.
#[derive(Clone, Debug, PartialEq)]
pub struct CsmModel {
    variables: Vec<Variable>,
    blocks: Vec<ConditionalBlock>,
    delta: Scope,
}

impl CsmModel {
    pub fn new(variables: Vec<Variable>, blocks: Vec<ConditionalBlock>) -> Result<Self> {
        let mut names = HashSet::new();
        for v in &variables {
            if v.cardinality < 2 {
                return Err(IcrError::Validation(format!("variable `{}` needs at least two categories", v.name)));
            }
            if !names.insert(v.name.as_str()) {
                return Err(IcrError::Validation(format!("variable `{}` declared twice", v.name)));
            }
        }
        if blocks.is_empty() {
            return Err(IcrError::Validation("model has no blocks".into()));
        }
        let mut ids = HashSet::new();
        for b in &blocks {
            if !ids.insert(b.id.as_str()) {
                return Err(IcrError::Validation(format!("duplicate block id `{}`", b.id)));
            }
            for a in b.table.layout() {
                match variables.get(a.var) {
                    Some(v) if v.cardinality == a.card => {}
                    _ => {
                        return Err(IcrError::Validation(format!(
                            "block `{}` references an undeclared variable or wrong cardinality",
                            b.id
                        )))
                    }
                }
            }
        }
        let delta = compute_delta(&blocks);
        Ok(CsmModel { variables, blocks, delta })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn blocks(&self) -> &[ConditionalBlock] {
        &self.blocks
    }

    /// Variables that only ever appear as predictors: `(∪b) \ (∪a)`.
    pub fn delta(&self) -> &Scope {
        &self.delta
    }

    pub fn block(&self, id: &str) -> Result<&ConditionalBlock> {
        self.blocks.iter().find(|b| b.id == id).ok_or_else(|| IcrError::UnknownBlock(id.into()))
    }

    pub fn block_index(&self, id: &str) -> Result<usize> {
        self.blocks.iter().position(|b| b.id == id).ok_or_else(|| IcrError::UnknownBlock(id.into()))
    }

    pub fn var_id(&self, name: &str) -> Result<VarId> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| IcrError::Validation(format!("unknown variable `{name}`")))
    }

    pub fn axis(&self, var: VarId) -> Axis {
        Axis::new(var, self.variables[var].cardinality)
    }

    pub fn scope_of<S: AsRef<str>>(&self, names: &[S]) -> Result<Scope> {
        scope_from_names(&self.variables, names)
    }

    pub fn names(&self, scope: &Scope) -> Vec<String> {
        scope.vars().map(|v| self.variables[v].name.clone()).collect()
    }

    /// Every declared variable.
    pub fn full_scope(&self) -> Scope {
        Scope::new((0..self.variables.len()).map(|v| self.axis(v)).collect()).expect("declared variables are distinct")
    }

    /// Union of all block targets.
    pub fn target_union(&self) -> Scope {
        self.blocks.iter().fold(Scope::empty(), |acc, b| acc.union(b.target()))
    }

    pub fn is_full(&self, block: &ConditionalBlock) -> bool {
        block.context().len() == self.variables.len()
    }

    pub fn classify(&self) -> ModelClass {
        if self.blocks.iter().all(|b| self.is_full(b)) {
            ModelClass::Saturated
        } else {
            ModelClass::Unsaturated
        }
    }

    /// Structural warnings that do not make the model invalid. A non-empty
    /// `Δ` missing from some block's predictors rules out any permissible
    /// updating cycle.
    pub fn lint(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.delta.is_empty() {
            for b in &self.blocks {
                if !self.delta.is_subset_of(b.predictors()) {
                    out.push(format!(
                        "delta {:?} is not contained in the predictors of `{}`; no permissible cycle exists",
                        self.names(&self.delta),
                        b.id
                    ));
                }
            }
        }
        out
    }

    /// A model over the same variables made of the given blocks.
    pub fn with_blocks(&self, blocks: Vec<ConditionalBlock>) -> Result<CsmModel> {
        CsmModel::new(self.variables.clone(), blocks)
    }

    /// The sub-model made of the named blocks, in the given order.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<CsmModel> {
        let blocks = ids.iter().map(|id| self.block(id.as_ref()).cloned()).collect::<Result<Vec<_>>>()?;
        self.with_blocks(blocks)
    }
}

fn compute_delta(blocks: &[ConditionalBlock]) -> Scope {
    let preds = blocks.iter().fold(Scope::empty(), |acc, b| acc.union(b.predictors()));
    let targets = blocks.iter().fold(Scope::empty(), |acc, b| acc.union(b.target()));
    preds.minus(&targets)
}

fn scope_from_names<S: AsRef<str>>(variables: &[Variable], names: &[S]) -> Result<Scope> {
    let axes = names
        .iter()
        .map(|n| {
            let n = n.as_ref();
            variables
                .iter()
                .position(|v| v.name == n)
                .map(|i| Axis::new(i, variables[i].cardinality))
                .ok_or_else(|| IcrError::Validation(format!("unknown variable `{n}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Scope::new(axes).map_err(|e| IcrError::Validation(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    variables: Vec<Variable>,
    blocks: Vec<BlockFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockFile {
    id: String,
    target: Vec<String>,
    #[serde(default)]
    predictors: Vec<String>,
    values: Vec<f64>,
}

/// Parses and validates a model file.
pub fn parse_model(text: &[u8]) -> Result<CsmModel> {
    let file: ModelFile = serde_json::from_slice(text).map_err(|e| IcrError::Parse(e.to_string()))?;
    let mut blocks = Vec::with_capacity(file.blocks.len());
    for b in file.blocks {
        let target = scope_from_names(&file.variables, &b.target)?;
        let predictors = scope_from_names(&file.variables, &b.predictors)?;
        if target.is_empty() {
            return Err(IcrError::Validation(format!("block `{}` has an empty target", b.id)));
        }
        if !target.is_disjoint(&predictors) {
            return Err(IcrError::Validation(format!("block `{}`: target and predictors overlap", b.id)));
        }
        let table = Distribution::from_table(target, predictors, b.values)
            .map_err(|e| IcrError::Validation(format!("block `{}`: {e}", b.id)))?;
        blocks.push(ConditionalBlock::new(b.id, table));
    }
    let model = CsmModel::new(file.variables, blocks)?;
    if let Some(stored) = file.delta {
        let stored = model.scope_of(&stored)?;
        if stored != *model.delta() {
            return Err(IcrError::Validation("stored delta differs from the computed one".into()));
        }
    }
    for w in model.lint() {
        log::warn!("{w}");
    }
    Ok(model)
}

/// Serializes a model; `parse_model` reads it back bit for bit.
pub fn serialize_model(m: &CsmModel) -> String {
    let file = ModelFile {
        variables: m.variables.clone(),
        blocks: m
            .blocks
            .iter()
            .map(|b| BlockFile {
                id: b.id.clone(),
                target: m.names(b.target()),
                predictors: m.names(b.predictors()),
                values: b.table.values().to_vec(),
            })
            .collect(),
        delta: (!m.delta.is_empty()).then(|| m.names(&m.delta)),
    };
    serde_json::to_string_pretty(&file).expect("model serializes")
}

/// Distribution file: variable names instead of ids, same layout rules as
/// block values.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionFile {
    scope: Vec<String>,
    #[serde(default)]
    given: Vec<String>,
    values: Vec<f64>,
}

pub fn distribution_to_json(m: &CsmModel, d: &Distribution) -> String {
    let file = DistributionFile { scope: m.names(d.scope()), given: m.names(d.given()), values: d.values().to_vec() };
    serde_json::to_string_pretty(&file).expect("distribution serializes")
}

pub fn distribution_from_json(m: &CsmModel, text: &[u8]) -> Result<Distribution> {
    let file: DistributionFile = serde_json::from_slice(text).map_err(|e| IcrError::Parse(e.to_string()))?;
    let scope = m.scope_of(&file.scope)?;
    let given = m.scope_of(&file.given)?;
    Distribution::from_table(scope, given, file.values).map_err(|e| IcrError::Validation(e.to_string()))
}

/// `(id, target, predictors)` by variable name, for [`derive_csm_from_joint`].
#[derive(Clone, Debug)]
pub struct BlockPattern {
    pub id: String,
    pub target: Vec<String>,
    pub predictors: Vec<String>,
}

impl BlockPattern {
    pub fn new(id: &str, target: &[&str], predictors: &[&str]) -> Self {
        BlockPattern {
            id: id.into(),
            target: target.iter().map(|s| s.to_string()).collect(),
            predictors: predictors.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Builds a compatible model by reading each block's conditional off a joint.
pub fn derive_csm_from_joint(
    variables: Vec<Variable>,
    joint: &Distribution,
    pattern: &[BlockPattern],
) -> Result<CsmModel> {
    if joint.is_conditional() || joint.scope().len() != variables.len() {
        return Err(IcrError::Scope("expected a joint over every declared variable".into()));
    }
    let mut blocks = Vec::with_capacity(pattern.len());
    for p in pattern {
        let target = scope_from_names(&variables, &p.target)?;
        let predictors = scope_from_names(&variables, &p.predictors)?;
        let marginal = joint.marginalize(&target.union(&predictors))?;
        let table = if predictors.is_empty() { marginal } else { marginal.condition(&predictors)? };
        blocks.push(ConditionalBlock::new(p.id.clone(), table));
    }
    CsmModel::new(variables, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(n: usize) -> Vec<Variable> {
        (1..=n).map(|i| Variable::new(format!("x{i}"), 2)).collect()
    }

    fn example1_joint(m: &CsmModel) -> Distribution {
        let w = vec![1.0, 3.0, 4.0, 2.0, 3.0, 3.0, 3.0, 1.0];
        Distribution::from_weights(m.full_scope(), Scope::empty(), w).unwrap()
    }

    const EX1: &str = r#"{
      "variables": [{"name":"x1","cardinality":2},{"name":"x2","cardinality":2},{"name":"x3","cardinality":2}],
      "blocks": [
        {"id":"f3","target":["x3"],"predictors":[],"values":[0.5,0.5]},
        {"id":"f1|23","target":["x1"],"predictors":["x2","x3"],
         "values":[0.25,0.75,0.6666666666666666,0.3333333333333333,0.5,0.5,0.75,0.25]},
        {"id":"f2|13","target":["x2"],"predictors":["x1","x3"],
         "values":[0.2,0.8,0.6,0.4,0.5,0.5,0.75,0.25]}
      ]}"#;

    #[test]
    fn parse_example1_full() {
        let m = parse_model(EX1.as_bytes()).unwrap();
        assert_eq!(m.blocks().len(), 3);
        assert!(m.delta().is_empty());
        assert_eq!(m.classify(), ModelClass::Unsaturated);
    }

    #[test]
    fn delta_of_pair() {
        let m = parse_model(EX1.as_bytes()).unwrap();
        let pair = m.subset(&["f1|23", "f2|13"]).unwrap();
        assert_eq!(pair.names(pair.delta()), vec!["x3"]);
    }

    #[test]
    fn empty_blocks_rejected() {
        let text = r#"{"variables":[{"name":"x1","cardinality":2}],"blocks":[]}"#;
        assert!(matches!(parse_model(text.as_bytes()), Err(IcrError::Validation(_))));
    }

    #[test]
    fn malformed_and_invalid_inputs() {
        assert!(matches!(parse_model(b"{not json"), Err(IcrError::Parse(_))));
        let dup = EX1.replace("\"f3\"", "\"f1|23\"");
        assert!(matches!(parse_model(dup.as_bytes()), Err(IcrError::Validation(_))));
        let unknown = EX1.replace("[\"x2\",\"x3\"]", "[\"x2\",\"x9\"]");
        assert!(matches!(parse_model(unknown.as_bytes()), Err(IcrError::Validation(_))));
        let bad = EX1.replace("[0.5,0.5]", "[0.9,0.5]");
        assert!(matches!(parse_model(bad.as_bytes()), Err(IcrError::Validation(_))));
        let wrong_delta = EX1.replacen("\"blocks\"", "\"delta\":[\"x1\"],\"blocks\"", 1);
        assert!(parse_model(wrong_delta.as_bytes()).is_err());
    }

    #[test]
    fn classify_examples() {
        let j = Distribution::random(
            Scope::new((0..5).map(|v| Axis::new(v, 2)).collect()).unwrap(),
            Scope::empty(),
            &mut rand::thread_rng(),
        );
        let sat = derive_csm_from_joint(
            vars(5),
            &j,
            &[
                BlockPattern::new("f1", &["x1"], &["x2", "x3", "x4", "x5"]),
                BlockPattern::new("f2", &["x2"], &["x1", "x3", "x4", "x5"]),
            ],
        )
        .unwrap();
        assert_eq!(sat.classify(), ModelClass::Saturated);
        let unsat = derive_csm_from_joint(
            vars(5),
            &j,
            &[
                BlockPattern::new("f1|2345", &["x1"], &["x2", "x3", "x4", "x5"]),
                BlockPattern::new("f2|345", &["x2"], &["x3", "x4", "x5"]),
                BlockPattern::new("f3|145", &["x3"], &["x1", "x4", "x5"]),
                BlockPattern::new("f4|25", &["x4"], &["x2", "x5"]),
                BlockPattern::new("f5|13", &["x5"], &["x1", "x3"]),
            ],
        )
        .unwrap();
        assert_eq!(unsat.classify(), ModelClass::Unsaturated);
        let marginal = derive_csm_from_joint(vars(5), &j, &[BlockPattern::new("f1", &["x1"], &[])]).unwrap();
        assert_eq!(marginal.classify(), ModelClass::Unsaturated);
    }

    #[test]
    fn derive_reproduces_example1_rows() {
        let m = parse_model(EX1.as_bytes()).unwrap();
        let pi = example1_joint(&m);
        let d = derive_csm_from_joint(
            m.variables().to_vec(),
            &pi,
            &[BlockPattern::new("f1|23", &["x1"], &["x2", "x3"]), BlockPattern::new("f2|13", &["x2"], &["x1", "x3"])],
        )
        .unwrap();
        for id in ["f1|23", "f2|13"] {
            let a = d.block(id).unwrap().table.values();
            let b = m.block(id).unwrap().table.values();
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15), "{id}");
        }
    }

    #[test]
    fn derive_marginal_pattern() {
        let m = parse_model(EX1.as_bytes()).unwrap();
        let pi = example1_joint(&m);
        let d = derive_csm_from_joint(m.variables().to_vec(), &pi, &[BlockPattern::new("f1", &["x1"], &[])]).unwrap();
        let x1 = pi.marginalize(&m.scope_of(&["x1"]).unwrap()).unwrap();
        assert_eq!(d.block("f1").unwrap().table.values(), x1.values());
    }

    #[test]
    fn lint_flags_delta_outside_predictors() {
        let m = parse_model(EX1.as_bytes()).unwrap();
        assert!(m.lint().is_empty());
        // {f1|23, f3|... } style: delta {x3} but f2|1 lacks it
        let pi = example1_joint(&m);
        let d = derive_csm_from_joint(
            m.variables().to_vec(),
            &pi,
            &[BlockPattern::new("a", &["x1"], &["x2", "x3"]), BlockPattern::new("b", &["x2"], &["x1"])],
        )
        .unwrap();
        assert_eq!(d.lint().len(), 1);
    }

    #[test]
    fn distribution_file_round_trip() {
        let m = parse_model(EX1.as_bytes()).unwrap();
        let d = &m.block("f1|23").unwrap().table;
        let text = distribution_to_json(&m, d);
        let back = distribution_from_json(&m, text.as_bytes()).unwrap();
        assert_eq!(&back, d);
    }
}
