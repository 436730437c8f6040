//! Regenerates `fixtures/`. Deterministic: joints for the structured examples
//! come from a fixed ChaCha seed.
//!
//! `cargo run -p icr-core --example gen_fixtures [out_dir]`

use std::fs;
use std::path::{Path, PathBuf};

use icr::{
    derive_csm_from_joint, distribution_to_json, serialize_model, Assumption, Axis, BlockPattern, ConditionalBlock,
    CsmModel, Distribution, Phase, PhaseMode, Scope, SynthesisPlan, Variable,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_611;

fn binary(n: usize) -> Vec<Variable> {
    (1..=n).map(|i| Variable::new(format!("x{i}"), 2)).collect()
}

fn binary_scope(ids: &[usize]) -> Scope {
    Scope::new(ids.iter().map(|&v| Axis::new(v, 2)).collect()).unwrap()
}

fn write(dir: &Path, name: &str, text: String) {
    fs::write(dir.join(name), text + "\n").unwrap();
}

fn write_plan(dir: &Path, name: &str, phases: Vec<Phase>) {
    write(dir, name, serde_json::to_string_pretty(&SynthesisPlan { phases }).unwrap());
}

fn phase(id: &str, mode: PhaseMode, inputs: &[&str]) -> Phase {
    Phase {
        id: id.into(),
        mode,
        inputs: inputs.iter().map(|s| s.to_string()).collect(),
        cycle: None,
        assumption: None,
        tol: None,
        max_iter: None,
    }
}

/// Fills a table over `scope | given` (all binary) cell by cell from a
/// function of the full state, indexed by variable id.
fn table_from_state(scope: &Scope, given: &Scope, n_vars: usize, f: impl Fn(&[usize]) -> f64) -> Vec<f64> {
    let axes: Vec<usize> = scope.axes().iter().chain(given.axes()).map(|a| a.var).collect();
    (0..1usize << axes.len())
        .map(|i| {
            let mut state = vec![0; n_vars];
            for (k, &v) in axes.iter().enumerate() {
                state[v] = (i >> k) & 1;
            }
            f(&state)
        })
        .collect()
}

fn example1(dir: &Path) {
    let joint =
        Distribution::from_weights(binary_scope(&[0, 1, 2]), Scope::empty(), vec![1., 3., 4., 2., 3., 3., 3., 1.])
            .unwrap();
    let full = derive_csm_from_joint(
        binary(3),
        &joint,
        &[
            BlockPattern::new("f3", &["x3"], &[]),
            BlockPattern::new("f1|23", &["x1"], &["x2", "x3"]),
            BlockPattern::new("f2|13", &["x2"], &["x1", "x3"]),
        ],
    )
    .unwrap();
    write(dir, "example1.json", serialize_model(&full));
    write(dir, "example1_joint.json", distribution_to_json(&full, &joint));
    let pair = full.subset(&["f1|23", "f2|13"]).unwrap();
    write(dir, "example1_pair.json", serialize_model(&pair));

    let f2 = &pair.block("f2|13").unwrap().table;
    let g = Distribution::new(
        f2.scope().clone(),
        f2.given().clone(),
        vec![3. / 5., 2. / 5., 1. / 7., 6. / 7., 4. / 5., 1. / 5., 3. / 4., 1. / 4.],
    )
    .unwrap();
    let incompatible =
        pair.with_blocks(vec![pair.block("f1|23").unwrap().clone(), ConditionalBlock::new("g2|13", g)]).unwrap();
    write(dir, "example1_incompatible.json", serialize_model(&incompatible));

    write_plan(
        dir,
        "example1_plan.json",
        vec![phase("p1", PhaseMode::Icr, &["f1|23", "f2|13"]), phase("joint", PhaseMode::Compose, &["p1/f2|13", "f3"])],
    );
}

fn example2(dir: &Path, rng: &mut ChaCha8Rng) {
    let joint = Distribution::random(binary_scope(&[0, 1, 2, 3, 4]), Scope::empty(), rng);
    let m = derive_csm_from_joint(
        binary(5),
        &joint,
        &[
            BlockPattern::new("f1|2345", &["x1"], &["x2", "x3", "x4", "x5"]),
            BlockPattern::new("f2|1345", &["x2"], &["x1", "x3", "x4", "x5"]),
            BlockPattern::new("f3|145", &["x3"], &["x1", "x4", "x5"]),
            BlockPattern::new("f4|15", &["x4"], &["x1", "x5"]),
            BlockPattern::new("f5|1234", &["x5"], &["x1", "x2", "x3", "x4"]),
        ],
    )
    .unwrap();
    write(dir, "example2.json", serialize_model(&m));
    write(dir, "example2_joint.json", distribution_to_json(&m, &joint));
}

fn example3(dir: &Path, rng: &mut ChaCha8Rng) {
    let joint = Distribution::random(binary_scope(&[0, 1, 2, 3, 4]), Scope::empty(), rng);
    let m = derive_csm_from_joint(
        binary(5),
        &joint,
        &[
            BlockPattern::new("f1|2345", &["x1"], &["x2", "x3", "x4", "x5"]),
            BlockPattern::new("f2|345", &["x2"], &["x3", "x4", "x5"]),
            BlockPattern::new("f3|145", &["x3"], &["x1", "x4", "x5"]),
            BlockPattern::new("f4|25", &["x4"], &["x2", "x5"]),
            BlockPattern::new("f5|13", &["x5"], &["x1", "x3"]),
        ],
    )
    .unwrap();
    write(dir, "example3.json", serialize_model(&m));
    write(dir, "example3_joint.json", distribution_to_json(&m, &joint));

    let mut p1 = phase("p1", PhaseMode::Icr, &["f1|2345", "f2|345", "f3|145"]);
    p1.cycle = Some(vec!["f3|145".into(), "f2|345".into(), "f1|2345".into()]);
    write_plan(
        dir,
        "example3_plan.json",
        vec![
            p1,
            phase("p2", PhaseMode::Icr, &["p1/f1|2345", "f4|25"]),
            phase("p3", PhaseMode::Icr, &["p2/p1/f1|2345", "f5|13"]),
        ],
    );
}

/// Joint whose (x1, x2, x3) margin has no three-way interaction, so IPF on
/// its pairwise margins recovers it exactly.
fn example4_joint(rng: &mut ChaCha8Rng) -> Distribution {
    use rand::Rng;
    let mut pair = || -> [f64; 4] { std::array::from_fn(|_| rng.gen_range(-1.0..1.0)) };
    let (a12, a23, a13) = (pair(), pair(), pair());
    let w123: Vec<f64> = (0..8)
        .map(|i| {
            let (x1, x2, x3) = (i & 1, (i >> 1) & 1, (i >> 2) & 1);
            (a12[x1 + 2 * x2] + a23[x2 + 2 * x3] + a13[x1 + 2 * x3]).exp()
        })
        .collect();
    let p123 = Distribution::from_weights(binary_scope(&[0, 1, 2]), Scope::empty(), w123).unwrap();
    let p4 = Distribution::random(binary_scope(&[3]), binary_scope(&[0, 1, 2]), rng);
    let p56 = Distribution::random(binary_scope(&[4, 5]), binary_scope(&[0, 1, 2, 3]), rng);
    let p1234 = icr::compose(&p4, &p123).unwrap();
    icr::compose(&p56, &p1234).unwrap()
}

fn example4(dir: &Path, rng: &mut ChaCha8Rng) {
    let joint = example4_joint(rng);
    let m = derive_csm_from_joint(
        binary(6),
        &joint,
        &[
            BlockPattern::new("f2|1", &["x2"], &["x1"]),
            BlockPattern::new("f3|2", &["x3"], &["x2"]),
            BlockPattern::new("f1|3", &["x1"], &["x3"]),
            BlockPattern::new("f4|123", &["x4"], &["x1", "x2", "x3"]),
            BlockPattern::new("f5|1246", &["x5"], &["x1", "x2", "x4", "x6"]),
            BlockPattern::new("f6|1245", &["x6"], &["x1", "x2", "x4", "x5"]),
            BlockPattern::new("f3|12456", &["x3"], &["x1", "x2", "x4", "x5", "x6"]),
            BlockPattern::new("f6|12345", &["x6"], &["x1", "x2", "x3", "x4", "x5"]),
        ],
    )
    .unwrap();
    write(dir, "example4.json", serialize_model(&m));
    write(dir, "example4_joint.json", distribution_to_json(&m, &joint));

    let mut ipf = phase("p123", PhaseMode::Ipf, &["g1/f2|1", "g1/f3|2", "g1/f1|3"]);
    ipf.assumption = Some(Assumption::ZeroThreeWay);
    write_plan(
        dir,
        "example4_plan.json",
        vec![
            phase("g1", PhaseMode::Icr, &["f2|1", "f3|2", "f1|3"]),
            ipf,
            phase("p1234", PhaseMode::Compose, &["f4|123", "p123"]),
            phase("g2", PhaseMode::Icr, &["f5|1246", "f6|1245"]),
            phase("p12456", PhaseMode::Compose, &["g2/f6|1245", "p1234"]),
            phase("joint", PhaseMode::Compose, &["f3|12456", "p12456"]),
        ],
    );
}

fn example5(dir: &Path) {
    let vars = vec![Variable::new("x1", 2), Variable::new("x2", 3)];
    let scope = Scope::new(vec![Axis::new(0, 2), Axis::new(1, 3)]).unwrap();
    let joint = Distribution::from_weights(scope, Scope::empty(), vec![200000., 2., 500000., 5., 7., 1.]).unwrap();
    let m = derive_csm_from_joint(
        vars,
        &joint,
        &[BlockPattern::new("f1|2", &["x1"], &["x2"]), BlockPattern::new("f2|1", &["x2"], &["x1"])],
    )
    .unwrap();
    write(dir, "example5_sticky.json", serialize_model(&m));
    write(dir, "example5_joint.json", distribution_to_json(&m, &joint));
}

/// Support is `x1 == x3`; conditionals are indexed by the support state.
fn example6(dir: &Path) {
    // Support states in the order (x1,x2,x3,x4) = 0000, 0100, 1010, 1110,
    // 0001, 0101, 1011, 1111.
    fn column(s: &[usize]) -> Option<usize> {
        (s[0] == s[2]).then(|| s[1] + 2 * s[0] + 4 * s[3])
    }
    let f2 = [1. / 8., 7. / 8., 2. / 5., 3. / 5., 5. / 12., 7. / 12., 1. / 5., 4. / 5.];
    let f4 = [1. / 6., 1. / 2., 2. / 3., 3. / 7., 5. / 6., 1. / 2., 1. / 3., 4. / 7.];
    let g4 = [1. / 6., 3. / 10., 2. / 3., 3. / 7., 5. / 6., 7. / 10., 1. / 3., 4. / 7.];

    let block = |id: &str, target: usize, col: &[f64; 8]| {
        let scope = binary_scope(&[target]);
        let given = binary_scope(&(0..4).filter(|&v| v != target).collect::<Vec<_>>());
        let values = table_from_state(&scope, &given, 4, |s| column(s).map_or(0.0, |c| col[c]));
        ConditionalBlock::new(id, Distribution::from_table(scope, given, values).unwrap())
    };
    let ones = [1.0; 8];
    let a1 = CsmModel::new(
        binary(4),
        vec![block("f1|234", 0, &ones), block("f2|134", 1, &f2), block("f3|124", 2, &ones), block("f4|123", 3, &f4)],
    )
    .unwrap();
    let a2 = a1
        .with_blocks(vec![
            a1.block("f1|234").unwrap().clone(),
            a1.block("f2|134").unwrap().clone(),
            a1.block("f3|124").unwrap().clone(),
            block("g4|123", 3, &g4),
        ])
        .unwrap();
    write(dir, "example6_a1.json", serialize_model(&a1));
    write(dir, "example6_a2.json", serialize_model(&a2));

    // Inits list the support in the order 0000, 0100, 0001, 0101, 1010,
    // 1110, 1011, 1111.
    fn init_index(s: &[usize]) -> Option<usize> {
        (s[0] == s[2]).then(|| s[1] + 2 * s[3] + 4 * s[0])
    }
    let inits: [(&str, [f64; 8]); 3] =
        [("u", [1.0; 8]), ("v", [1., 3., 2., 4., 2., 2., 2., 4.]), ("w", [1., 2., 3., 4., 1., 1., 1., 2.])];
    let full = binary_scope(&[0, 1, 2, 3]);
    for (name, w) in inits {
        let values = table_from_state(&full, &Scope::empty(), 4, |s| init_index(s).map_or(0.0, |k| w[k]));
        let d = Distribution::from_weights(full.clone(), Scope::empty(), values).unwrap();
        write(dir, &format!("example6_init_{name}.json"), distribution_to_json(&a1, &d));
    }
}

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    example1(&dir);
    example2(&dir, &mut rng);
    example3(&dir, &mut rng);
    example4(&dir, &mut rng);
    example5(&dir);
    example6(&dir);
    println!("fixtures written to {}", dir.display());
}
