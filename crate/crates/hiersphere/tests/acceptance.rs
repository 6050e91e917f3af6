//! Acceptance checks for the crate's core claims, one test per claim.
//! Each test prints a single PASS line with its measured numbers
//! (visible under `cargo test -- --nocapture`) and asserts a runtime
//! budget alongside the claim itself.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use hiersphere::data::{generate, generate_nested, NestedSpec, SyntheticSpec};
use hiersphere::hierarchy::{parse_pairs, random_hierarchy, HierarchyTree};
use hiersphere::layer::{path_walk_hyperplanes, HierarchicalLayer, RadiusMode, RadiusSpec};
use hiersphere::model::ModelVariant;
use hiersphere::sphere::{project_tangent, random_sphere_point, rsgd_step};
use hiersphere::train::{
    grad_check, metrics_to_csv, radius_sweep, random_tree_ablation, save_metrics,
    small_check_instance, train, SphereUpdate, TrainConfig, GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};

/// Two supers with two leaves each, parents listed before children.
const TWO_SUPER_PAIRS: &str = "6\n1 0\n2 0\n3 1\n4 1\n5 2\n6 2\n";

fn assert_within(elapsed: Duration, budget: Duration, what: &str) {
    assert!(
        elapsed <= budget,
        "{what} took {:.2?}, budget {:.2?}",
        elapsed,
        budget
    );
}

/// Training configuration shared by the directional experiments: the
/// identity feature map leaves all discrimination to the composed last
/// layer, so the tree's structure is load-bearing rather than absorbed
/// by a hidden representation.
fn structural_config(variant: ModelVariant, gamma: f64) -> TrainConfig {
    TrainConfig {
        variant,
        epochs: 60,
        hidden: Vec::new(),
        radius: RadiusSpec::fixed(1.0, gamma).unwrap(),
        sphere_update: SphereUpdate::Riemannian,
        seed: 0,
        ..TrainConfig::default()
    }
}

/// The two-super, four-leaf ancestry matrix reproduces its known layout
/// exactly: parents cover their two leaves, each leaf covers itself.
#[test]
fn golden_ancestry_matrix() {
    let started = Instant::now();
    let tree = parse_pairs(TWO_SUPER_PAIRS).unwrap();
    let h = HierarchicalLayer::from_tree(&tree).unwrap().to_dense();
    let expected: Array2<f64> = Array2::from_shape_vec(
        (6, 4),
        vec![
            1.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 1.0, //
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
        ],
    )
    .unwrap();
    assert_eq!(h.dim(), (6, 4));
    for (a, b) in h.iter().zip(expected.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let elapsed = started.elapsed();
    assert_within(elapsed, Duration::from_secs(1), "golden ancestry matrix");
    println!("PASS golden ancestry matrix: 6x4 bit-equal in {elapsed:.2?}");
}

/// A random tree whose shape varies in depth and width: node i attaches
/// to a uniformly random earlier node, so chains and bushes both occur.
fn random_deep_tree(rng: &mut ChaCha8Rng, max_nodes: usize) -> HierarchyTree {
    let n = rng.random_range(3..=max_nodes);
    let mut text = format!("{n}\n");
    for i in 1..=n {
        let parent = rng.random_range(0..i);
        text.push_str(&format!("{i} {parent}\n"));
    }
    parse_pairs(&text).unwrap()
}

/// Matrix composition of the class hyperplanes agrees with an
/// independent per-leaf walk up the tree, elementwise to 1e-12, across
/// randomized trees, offsets, and radius schedules.
#[test]
fn composition_matches_path_walk_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for instance in 0..100 {
        let tree = random_deep_tree(&mut rng, 199);
        let d = rng.random_range(2..=64);
        let offsets =
            Array2::from_shape_fn((d, tree.num_classes()), |_| rng.sample(StandardNormal));
        let mut spec = RadiusSpec::new(
            rng.random_range(0.25..2.0),
            rng.random_range(0.3..1.0),
            if instance % 4 == 0 {
                RadiusMode::Learnable
            } else {
                RadiusMode::Fixed
            },
        )
        .unwrap();
        if spec.mode == RadiusMode::Learnable {
            spec.learned = Some(
                (0..tree.num_classes())
                    .map(|_| rng.random_range(0.1..2.0))
                    .collect(),
            );
        }
        let layer = HierarchicalLayer::from_tree(&tree).unwrap();
        let diag = spec.diagonal(&tree).unwrap();
        let composed = layer.compose(offsets.view(), diag.view()).unwrap();
        let walked = path_walk_hyperplanes(offsets.view(), &spec, &tree).unwrap();
        assert_eq!(composed.dim(), walked.dim());
        for (a, b) in composed.iter().zip(walked.iter()) {
            let diff = (a - b).abs();
            worst = worst.max(diff);
            assert!(
                diff <= 1e-12,
                "instance {instance}: composed {a} vs walked {b}"
            );
        }
    }
    let elapsed = started.elapsed();
    assert_within(elapsed, Duration::from_secs(10), "composition oracle");
    println!(
        "PASS composition matches path walk: 100 instances, max |diff| {worst:.2e} in {elapsed:.2?}"
    );
}

/// Tangent projections stay orthogonal to the base point and chained
/// sphere steps never drift off unit norm.
#[test]
fn sphere_updates_stay_tangent_and_unit() {
    let started = Instant::now();
    let mut worst_dot: f64 = 0.0;
    let mut worst_drift: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.random_range(2..=50);
        let mut x = random_sphere_point(dim, seed).unwrap();
        for step in 0..1000 {
            let g = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
            let t = project_tangent(&x, g.view()).unwrap();
            let dot = x.coords().dot(&t.components()).abs();
            worst_dot = worst_dot.max(dot);
            assert!(dot < 1e-10, "seed {seed} step {step}: tangency {dot:e}");
            x = rsgd_step(&x, g.view(), 0.05).unwrap();
            let drift = (x.coords().dot(&x.coords()).sqrt() - 1.0).abs();
            worst_drift = worst_drift.max(drift);
            assert!(drift < 1e-9, "seed {seed} step {step}: drift {drift:e}");
        }
    }
    let elapsed = started.elapsed();
    assert_within(elapsed, Duration::from_secs(10), "sphere invariants");
    println!(
        "PASS sphere updates: max |x.t| {worst_dot:.2e}, max norm drift {worst_drift:.2e} over 100x1000 steps in {elapsed:.2?}"
    );
}

/// Analytic gradients of every variant match central finite differences
/// on small instances.
#[test]
fn analytic_gradients_match_finite_differences() {
    let started = Instant::now();
    let variants = [
        ModelVariant::Plain,
        ModelVariant::Multitask { lambda: 1.0 },
        ModelVariant::Hierarchy,
        ModelVariant::Manifold,
        ModelVariant::Riemann,
    ];
    let mut summary = Vec::new();
    for variant in variants {
        let radius = RadiusSpec::fixed(1.0, 0.6).unwrap();
        let (mut model, x, labels) = small_check_instance(variant, &radius, 0).unwrap();
        let report = grad_check(
            &mut model,
            x.view(),
            &labels,
            GRADCHECK_STEP,
            GRADCHECK_TOLERANCE,
        )
        .unwrap();
        assert!(
            report.passed && report.max_rel_err < 1e-5,
            "{}: max rel err {:e}",
            variant.name(),
            report.max_rel_err
        );
        summary.push(format!("{} {:.1e}", variant.name(), report.max_rel_err));
    }
    let elapsed = started.elapsed();
    assert_within(elapsed, Duration::from_secs(60), "gradient suite");
    println!(
        "PASS gradients match finite differences: {} in {elapsed:.2?}",
        summary.join(", ")
    );
}

/// Training with the true hierarchy beats training with random
/// hierarchies of the same shape by at least two percentage points on
/// the default two-level synthetic dataset.
#[test]
fn true_tree_beats_random_trees() {
    let started = Instant::now();
    let (dataset, tree) = generate(&SyntheticSpec::default()).unwrap();
    let cfg = structural_config(ModelVariant::Riemann, 0.7);
    let report = random_tree_ablation(&cfg, &dataset, &tree, 3, 1000).unwrap();
    let advantage = report.true_accuracy - report.mean_random_accuracy();
    assert!(
        advantage >= 0.02,
        "true {} vs mean random {}: advantage {advantage}",
        report.true_accuracy,
        report.mean_random_accuracy()
    );
    let elapsed = started.elapsed();
    assert_within(elapsed, Duration::from_secs(300), "tree ablation");
    println!(
        "PASS true tree beats random trees: {:.4} vs {:.4} (advantage {:+.4}, bar 0.02) in {elapsed:.2?}",
        report.true_accuracy,
        report.mean_random_accuracy(),
        advantage
    );
}

/// Super-class accuracy read off the parent-level hyperplanes of each
/// composed variant is at least the multitask head's super-class
/// accuracy on the same dataset and seed.
#[test]
fn composed_super_accuracy_matches_multitask_head() {
    let started = Instant::now();
    let (dataset, tree) = generate(&SyntheticSpec::default()).unwrap();
    let final_super = |variant: ModelVariant| {
        let cfg = structural_config(variant, 0.7);
        let out = train(&cfg, &dataset, &tree).unwrap();
        let last = out.metrics.last().unwrap().clone();
        (last.superclass_accuracy, last.test_accuracy)
    };
    let (multitask_super, multitask_leaf) = final_super(ModelVariant::Multitask { lambda: 1.0 });
    assert!(multitask_leaf > 0.5, "multitask failed to train");
    let mut summary = vec![format!("multitask {multitask_super:.4}")];
    for variant in [
        ModelVariant::Hierarchy,
        ModelVariant::Manifold,
        ModelVariant::Riemann,
    ] {
        let (super_acc, leaf_acc) = final_super(variant);
        assert!(
            super_acc >= multitask_super,
            "{}: super accuracy {super_acc} below multitask head {multitask_super}",
            variant.name()
        );
        assert!(leaf_acc > 0.5, "{} failed to train", variant.name());
        summary.push(format!("{} {super_acc:.4}", variant.name()));
    }
    let elapsed = started.elapsed();
    assert_within(
        elapsed,
        Duration::from_secs(300),
        "super accuracy comparison",
    );
    println!(
        "PASS composed super accuracy >= multitask head: {} in {elapsed:.2?}",
        summary.join(", ")
    );
}

/// On a flat tree with unit radii the composed layer reduces to an
/// ordinary class matrix: unconstrained offsets reproduce the plain
/// variant's hyperplanes and training metrics bitwise.
#[test]
fn flat_tree_identity_radii_reduces_to_plain() {
    let started = Instant::now();
    let flat = parse_pairs("6\n1 0\n2 0\n3 0\n4 0\n5 0\n6 0\n").unwrap();
    assert_eq!(flat.num_classes(), flat.num_leaves());
    let (dataset, _) = generate(&SyntheticSpec {
        num_supers: 3,
        subs_per_super: 2,
        samples_per_class: 20,
        seed: 3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cfg = |variant| TrainConfig {
        variant,
        epochs: 15,
        hidden: vec![16],
        radius: RadiusSpec::fixed(1.0, 1.0).unwrap(),
        seed: 5,
        ..TrainConfig::default()
    };
    let plain = train(&cfg(ModelVariant::Plain), &dataset, &flat).unwrap();
    let composed = train(&cfg(ModelVariant::Hierarchy), &dataset, &flat).unwrap();
    assert_eq!(
        metrics_to_csv(&plain.metrics),
        metrics_to_csv(&composed.metrics)
    );
    let wp = plain.model.leaf_hyperplanes().unwrap();
    let wc = composed.model.leaf_hyperplanes().unwrap();
    assert_eq!(wp.dim(), wc.dim());
    for (a, b) in wp.iter().zip(wc.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let elapsed = started.elapsed();
    assert_within(elapsed, Duration::from_secs(60), "flat tree reduction");
    println!(
        "PASS flat tree with unit radii reduces to plain: {} epochs bitwise-equal in {elapsed:.2?}",
        plain.metrics.len()
    );
}

/// Sweeping the radius decay factor on a four-level dataset yields a
/// non-constant accuracy column, and the harshest decay is not the best.
#[test]
fn radius_sweep_shows_decay_tradeoff() {
    let started = Instant::now();
    let (dataset, tree) = generate_nested(&NestedSpec {
        branching: vec![2, 2, 2, 2],
        spreads: vec![8.0, 4.0, 2.0, 1.0],
        samples_per_class: 30,
        input_dim: 16,
        noise_sigma: 0.3,
        train_fraction: 0.8,
        seed: 0,
    })
    .unwrap();
    let cfg = structural_config(ModelVariant::Riemann, 1.0);
    let gammas = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    let points = radius_sweep(&cfg, &dataset, &tree, &gammas, false).unwrap();
    assert_eq!(points.len(), gammas.len());
    let accs: Vec<f64> = points.iter().map(|p| p.final_accuracy).collect();
    assert!(
        accs.iter().any(|&a| a != accs[0]),
        "accuracy constant across gammas: {accs:?}"
    );
    assert!(
        accs[1..].iter().any(|&a| a >= accs[0]),
        "smallest gamma outperformed all larger ones: {accs:?}"
    );
    let elapsed = started.elapsed();
    assert_within(elapsed, Duration::from_secs(1800), "radius sweep");
    let column = accs
        .iter()
        .zip(&gammas)
        .map(|(a, g)| format!("{g}:{a:.4}"))
        .collect::<Vec<_>>()
        .join(" ");
    println!("PASS radius sweep tradeoff on 4-level tree: {column} in {elapsed:.2?}");
}

/// Two identical train invocations produce bitwise-identical metrics
/// files.
#[test]
fn training_is_bitwise_repeatable() {
    let started = Instant::now();
    let (dataset, tree) = generate(&SyntheticSpec {
        num_supers: 3,
        subs_per_super: 2,
        samples_per_class: 15,
        seed: 11,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let mut cfg = structural_config(ModelVariant::Riemann, 0.7);
    cfg.epochs = 20;
    cfg.hidden = vec![24];
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    save_metrics(&a, &train(&cfg, &dataset, &tree).unwrap().metrics).unwrap();
    save_metrics(&b, &train(&cfg, &dataset, &tree).unwrap().metrics).unwrap();
    let (bytes_a, bytes_b) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(!bytes_a.is_empty());
    assert_eq!(bytes_a, bytes_b);
    let elapsed = started.elapsed();
    println!(
        "PASS training repeats bitwise: {} byte metrics files identical in {elapsed:.2?}",
        bytes_a.len()
    );
}

/// The random two-level tree generator feeding the ablation respects
/// its shape contract, so the comparison above is like for like.
#[test]
fn ablation_trees_share_shape_with_truth() {
    let (_, tree) = generate(&SyntheticSpec::default()).unwrap();
    for seed in 1000..1003 {
        let random = random_hierarchy(tree.num_leaves(), 9, seed).unwrap();
        assert_eq!(random.num_leaves(), tree.num_leaves());
        assert_eq!(random.num_classes(), tree.num_classes());
    }
    println!("PASS ablation trees match the true tree's shape");
}
