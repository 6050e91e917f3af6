//! Hierarchically connected spherical classification layers.
//!
//! The last layer of a classifier usually keeps one independent
//! hyperplane per class. Here each class hyperplane is instead the sum
//! of per-node offset vectors along the class's root-to-leaf path in a
//! known hierarchy, with each node's offset scaled by a radius that
//! decays with depth. Coarse distinctions get large radii near the root,
//! fine ones small radii near the leaves, and sibling classes share
//! their ancestors' offsets.
//!
//! Offsets can be trained unconstrained, normalized inside the forward
//! pass, or held on unit spheres by Riemannian updates. The crate covers
//! hierarchy files and validation ([`hierarchy`]), the composed layer
//! ([`layer`]), sphere geometry ([`sphere`]), the model variants
//! ([`model`]), training and evaluation ([`train`]), and synthetic
//! hierarchical datasets ([`data`]).

pub mod cli;
pub mod data;
pub mod error;
pub mod hierarchy;
pub mod layer;
pub mod model;
pub mod sphere;
pub mod train;

pub use data::{
    generate, generate_nested, load_dataset, save_dataset, LabeledDataset, NestedSpec,
    SyntheticSpec,
};
pub use error::{Error, Result};
pub use hierarchy::{
    dag_to_tree, merge_single_child_chains, parse_pairs, parse_pairs_file, random_hierarchy,
    validate, HierarchyTree, NodePath, ValidationReport,
};
pub use layer::{
    diag_to_dense, level_hyperplanes, matrix_from_text, matrix_to_text, path_walk_hyperplanes,
    HierarchicalLayer, RadiusMode, RadiusSpec,
};
pub use model::{DeltaMode, LastLayer, Model, ModelVariant};
pub use sphere::{projected_step, retract, rsgd_step, SpherePoint, TangentVector};
pub use train::{
    evaluate, grad_check, metrics_to_csv, radius_sweep, random_tree_ablation, save_metrics,
    small_check_instance, sweep_to_csv, train, AblationReport, Evaluation, GradCheckReport,
    MetricsRecord, SphereUpdate, SweepPoint, TrainConfig, TrainOutput,
};
