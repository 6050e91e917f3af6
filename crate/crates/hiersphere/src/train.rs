//! Training loop, evaluation, gradient checking, and experiment drivers.
//!
//! Ordinary tensors (extractor layers, flat heads, euclidean and in-model
//! offsets) train with SGD: decay folds into the gradient, momentum
//! accumulates, then the parameter steps. Unit-norm offset columns train
//! per column with a Riemannian or projected step and stay on the sphere
//! by construction; their decay and momentum are off by default since
//! radial shrinkage has no meaning there. Learnable radii take plain
//! gradient steps. Every random choice draws from streams seeded by the
//! config, so runs repeat bit for bit.

use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Dimension};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::hierarchy::{random_hierarchy, HierarchyTree};
use crate::layer::{RadiusMode, RadiusSpec};
use crate::model::{Gradients, LastLayer, Model, ModelVariant};
use crate::sphere::{projected_step, rsgd_step, SpherePoint};

/// Update rule for unit-norm offset columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SphereUpdate {
    /// Project the gradient onto the tangent space, then retract.
    Riemannian,
    /// Step against the raw gradient, then normalize.
    Projected,
}

impl SphereUpdate {
    pub fn name(self) -> &'static str {
        match self {
            SphereUpdate::Riemannian => "riemannian",
            SphereUpdate::Projected => "projected",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "riemannian" | "rsgd" => Ok(SphereUpdate::Riemannian),
            "projected" => Ok(SphereUpdate::Projected),
            other => Err(Error::InvalidConfig(format!(
                "unknown sphere update {other}"
            ))),
        }
    }
}

/// Everything a training run depends on. Serializes to a `key value`
/// text file so runs can be rerun from their echoed config.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: ModelVariant,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epoch fractions at which the rate divides by `lr_decay`.
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
    pub hidden: Vec<usize>,
    pub radius: RadiusSpec,
    pub sphere_update: SphereUpdate,
    /// Ambient-space momentum for unit-norm columns; off by default.
    pub sphere_momentum: bool,
    /// Append a linear 2-d reduction and retrain the last layer on it.
    pub probe_2d: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: ModelVariant::Plain,
            epochs: 60,
            batch_size: 32,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_milestones: vec![0.5, 0.75],
            lr_decay: 10.0,
            hidden: vec![64, 64],
            radius: RadiusSpec::fixed(1.0, 0.8).expect("valid default radius"),
            sphere_update: SphereUpdate::Riemannian,
            sphere_momentum: false,
            probe_2d: false,
            seed: 0,
        }
    }
}

fn join_or_none<T: ToString>(items: &[T]) -> String {
    if items.is_empty() {
        "none".into()
    } else {
        items
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn split_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>> {
    if value == "none" {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|t| {
            t.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad {key} entry {t:?}")))
        })
        .collect()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !self.lr0.is_finite() || self.lr0 < 0.0 {
            return bad(format!("lr {} must be finite and non-negative", self.lr0));
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return bad(format!(
                "weight decay {} must be finite and non-negative",
                self.weight_decay
            ));
        }
        for &m in &self.lr_milestones {
            if !m.is_finite() || m <= 0.0 || m > 1.0 {
                return bad(format!("milestone {m} must lie in (0, 1]"));
            }
        }
        if !self.lr_decay.is_finite() || self.lr_decay <= 0.0 {
            return bad(format!("lr decay {} must be positive", self.lr_decay));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if let ModelVariant::Multitask { lambda } = self.variant {
            if !lambda.is_finite() || lambda < 0.0 {
                return bad(format!("lambda {lambda} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch index: `lr0` divided by
    /// `lr_decay` once per milestone already reached.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let mut lr = self.lr0;
        for &frac in &self.lr_milestones {
            let boundary = (frac * self.epochs as f64).floor() as usize;
            if epoch >= boundary {
                lr /= self.lr_decay;
            }
        }
        lr
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("variant {}\n", self.variant.name()));
        if let ModelVariant::Multitask { lambda } = self.variant {
            s.push_str(&format!("lambda {lambda}\n"));
        }
        s.push_str(&format!("epochs {}\n", self.epochs));
        s.push_str(&format!("batch {}\n", self.batch_size));
        s.push_str(&format!("lr {}\n", self.lr0));
        s.push_str(&format!("momentum {}\n", self.momentum));
        s.push_str(&format!("weight_decay {}\n", self.weight_decay));
        s.push_str(&format!(
            "lr_milestones {}\n",
            join_or_none(&self.lr_milestones)
        ));
        s.push_str(&format!("lr_decay {}\n", self.lr_decay));
        s.push_str(&format!("hidden {}\n", join_or_none(&self.hidden)));
        s.push_str(&format!("r0 {}\n", self.radius.r0));
        s.push_str(&format!("gamma {}\n", self.radius.gamma));
        s.push_str(&format!(
            "radius_mode {}\n",
            match self.radius.mode {
                RadiusMode::Fixed => "fixed",
                RadiusMode::Learnable => "learnable",
            }
        ));
        s.push_str(&format!("sphere_update {}\n", self.sphere_update.name()));
        s.push_str(&format!(
            "sphere_momentum {}\n",
            u8::from(self.sphere_momentum)
        ));
        s.push_str(&format!("probe_2d {}\n", u8::from(self.probe_2d)));
        s.push_str(&format!("seed {}\n", self.seed));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut variant_name = String::from("plain");
        let mut lambda = 1.0;
        let (mut r0, mut gamma, mut mode) = (cfg.radius.r0, cfg.radius.gamma, cfg.radius.mode);
        let bad =
            |key: &str, value: &str| Error::InvalidConfig(format!("bad value {value:?} for {key}"));
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::InvalidConfig(format!("malformed config line {line:?}")))?;
            let value = value.trim();
            match key {
                "variant" => variant_name = value.to_string(),
                "lambda" => lambda = value.parse().map_err(|_| bad(key, value))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad(key, value))?,
                "batch" => cfg.batch_size = value.parse().map_err(|_| bad(key, value))?,
                "lr" => cfg.lr0 = value.parse().map_err(|_| bad(key, value))?,
                "momentum" => cfg.momentum = value.parse().map_err(|_| bad(key, value))?,
                "weight_decay" => cfg.weight_decay = value.parse().map_err(|_| bad(key, value))?,
                "lr_milestones" => cfg.lr_milestones = split_list(value, key)?,
                "lr_decay" => cfg.lr_decay = value.parse().map_err(|_| bad(key, value))?,
                "hidden" => cfg.hidden = split_list(value, key)?,
                "r0" => r0 = value.parse().map_err(|_| bad(key, value))?,
                "gamma" => gamma = value.parse().map_err(|_| bad(key, value))?,
                "radius_mode" => {
                    mode = match value {
                        "fixed" => RadiusMode::Fixed,
                        "learnable" => RadiusMode::Learnable,
                        _ => return Err(bad(key, value)),
                    }
                }
                "sphere_update" => cfg.sphere_update = SphereUpdate::parse(value)?,
                "sphere_momentum" => {
                    cfg.sphere_momentum = value.parse::<u8>().map_err(|_| bad(key, value))? == 1
                }
                "probe_2d" => cfg.probe_2d = value.parse::<u8>().map_err(|_| bad(key, value))? == 1,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key, value))?,
                other => return Err(Error::InvalidConfig(format!("unknown config key {other}"))),
            }
        }
        cfg.variant = ModelVariant::parse(&variant_name, lambda)?;
        cfg.radius = RadiusSpec::new(r0, gamma, mode)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// One epoch's summary line.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    /// One-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub superclass_accuracy: f64,
    /// Mean |norm - 1| over unit-norm offset columns; zero for variants
    /// without them.
    pub norm_drift: f64,
}

pub fn metrics_to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("epoch,loss,acc,super_acc,drift\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.test_accuracy, r.superclass_accuracy, r.norm_drift
        ));
    }
    out
}

pub fn save_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    std::fs::write(path, metrics_to_csv(records))?;
    Ok(())
}

/// Accuracy pair plus mean loss on a labeled set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub superclass_accuracy: f64,
    pub mean_loss: f64,
}

/// Index of the row maximum; ties resolve to the lowest index.
pub(crate) fn argmax_row(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_v = row[0];
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > best_v {
            best = j;
            best_v = v;
        }
    }
    best
}

/// Evaluates leaf and super-class accuracy. Variants without a
/// super-class readout fall back to the parent of the predicted leaf.
pub fn evaluate(model: &Model, x: ArrayView2<f64>, labels: &[usize]) -> Result<Evaluation> {
    if labels.is_empty() {
        return Err(Error::EmptySplit);
    }
    let logits = model.forward(x)?;
    let (mean_loss, _) = crate::model::softmax_cross_entropy(logits.view(), labels)?;
    let leaf_preds: Vec<usize> = logits.rows().into_iter().map(argmax_row).collect();
    let correct = leaf_preds
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();

    let super_preds: Vec<usize> = match &model.last {
        LastLayer::Flat { .. } => leaf_preds.iter().map(|&p| model.super_of_leaf[p]).collect(),
        _ => {
            let super_logits = model.superclass_logits(x, 1)?;
            super_logits.rows().into_iter().map(argmax_row).collect()
        }
    };
    let super_correct = super_preds
        .iter()
        .zip(labels)
        .filter(|(p, l)| **p == model.super_of_leaf[**l])
        .count();

    let n = labels.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        superclass_accuracy: super_correct as f64 / n,
        mean_loss,
    })
}

fn sgd_step<D: Dimension>(
    param: &mut ndarray::Array<f64, D>,
    vel: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    ndarray::Zip::from(param)
        .and(vel)
        .and(grad)
        .for_each(|p, v, &g| {
            let g = g + weight_decay * *p;
            *v = momentum * *v + g;
            *p -= lr * *v;
        });
}

struct Velocities {
    layers: Vec<(Array2<f64>, Array1<f64>)>,
    flat: Option<Array2<f64>>,
    super_flat: Option<Array2<f64>>,
    offsets: Option<Array2<f64>>,
}

impl Velocities {
    fn for_model(model: &Model, cfg: &TrainConfig) -> Self {
        let layers = model
            .extractor
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weight.dim()), Array1::zeros(l.bias.len())))
            .collect();
        let (flat, super_flat, offsets) = match &model.last {
            LastLayer::Flat { weights } => (Some(Array2::zeros(weights.dim())), None, None),
            LastLayer::FlatWithSuper {
                weights,
                super_weights,
                ..
            } => (
                Some(Array2::zeros(weights.dim())),
                Some(Array2::zeros(super_weights.dim())),
                None,
            ),
            LastLayer::Composed { offsets, .. } => {
                let tracked = match offsets.mode {
                    crate::model::DeltaMode::Riemannian => cfg.sphere_momentum,
                    _ => true,
                };
                (
                    None,
                    None,
                    tracked.then(|| Array2::zeros(offsets.offsets.dim())),
                )
            }
        };
        Velocities {
            layers,
            flat,
            super_flat,
            offsets,
        }
    }
}

fn apply_updates(
    model: &mut Model,
    grads: &Gradients,
    vels: &mut Velocities,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    for (k, layer) in model.extractor.layers.iter_mut().enumerate() {
        sgd_step(
            &mut layer.weight,
            &mut vels.layers[k].0,
            &grads.layers[k].0,
            lr,
            cfg.momentum,
            cfg.weight_decay,
        );
        sgd_step(
            &mut layer.bias,
            &mut vels.layers[k].1,
            &grads.layers[k].1,
            lr,
            cfg.momentum,
            cfg.weight_decay,
        );
    }
    match &mut model.last {
        LastLayer::Flat { weights } => {
            sgd_step(
                weights,
                vels.flat.as_mut().expect("flat velocity"),
                grads.flat.as_ref().expect("flat gradient"),
                lr,
                cfg.momentum,
                cfg.weight_decay,
            );
        }
        LastLayer::FlatWithSuper {
            weights,
            super_weights,
            ..
        } => {
            sgd_step(
                weights,
                vels.flat.as_mut().expect("flat velocity"),
                grads.flat.as_ref().expect("flat gradient"),
                lr,
                cfg.momentum,
                cfg.weight_decay,
            );
            sgd_step(
                super_weights,
                vels.super_flat.as_mut().expect("super velocity"),
                grads.super_flat.as_ref().expect("super gradient"),
                lr,
                cfg.momentum,
                cfg.weight_decay,
            );
        }
        LastLayer::Composed {
            offsets,
            radii,
            spec,
            ..
        } => {
            let goffsets = grads.offsets.as_ref().expect("offset gradient");
            match offsets.mode {
                crate::model::DeltaMode::Euclidean => {
                    // Ordinary parameters: full decay and momentum, same
                    // path a flat head takes.
                    sgd_step(
                        &mut offsets.offsets,
                        vels.offsets.as_mut().expect("offset velocity"),
                        goffsets,
                        lr,
                        cfg.momentum,
                        cfg.weight_decay,
                    );
                }
                crate::model::DeltaMode::InModelNormalized => {
                    // Scale-invariant forward: decay would only shrink
                    // norms without changing the function, so skip it.
                    sgd_step(
                        &mut offsets.offsets,
                        vels.offsets.as_mut().expect("offset velocity"),
                        goffsets,
                        lr,
                        cfg.momentum,
                        0.0,
                    );
                }
                crate::model::DeltaMode::Riemannian => {
                    for q in 0..offsets.offsets.ncols() {
                        let direction: Array1<f64> = match vels.offsets.as_mut() {
                            Some(vel) => {
                                let mut vcol = vel.column_mut(q);
                                vcol *= cfg.momentum;
                                vcol += &goffsets.column(q);
                                vcol.to_owned()
                            }
                            None => goffsets.column(q).to_owned(),
                        };
                        let x = SpherePoint::new(offsets.offsets.column(q).to_owned())?;
                        let stepped = match cfg.sphere_update {
                            SphereUpdate::Riemannian => rsgd_step(&x, direction.view(), lr),
                            SphereUpdate::Projected => projected_step(&x, direction.view(), lr),
                        }
                        .map_err(|e| match e {
                            Error::RetractionFailed { column: None } => {
                                Error::RetractionFailed { column: Some(q) }
                            }
                            other => other,
                        })?;
                        offsets.offsets.column_mut(q).assign(&stepped.into_inner());
                    }
                }
            }
            if spec.mode == RadiusMode::Learnable {
                let gradii = grads.radii.as_ref().expect("radius gradient");
                ndarray::Zip::from(radii).and(gradii).for_each(|r, &g| {
                    *r -= lr * g;
                });
            }
        }
    }
    Ok(())
}

fn column_norm_drift(model: &Model) -> f64 {
    if let LastLayer::Composed { offsets, .. } = &model.last {
        if offsets.mode == crate::model::DeltaMode::Riemannian {
            let cols = offsets.offsets.ncols();
            let total: f64 = offsets
                .offsets
                .columns()
                .into_iter()
                .map(|c| (c.dot(&c).sqrt() - 1.0).abs())
                .sum();
            return total / cols as f64;
        }
    }
    0.0
}

/// A trained model plus its per-epoch metrics.
#[derive(Debug)]
pub struct TrainOutput {
    pub model: Model,
    pub metrics: Vec<MetricsRecord>,
}

/// Trains a fresh model on the dataset's train split, evaluating on the
/// test split after every epoch. Deterministic in the config.
pub fn train(
    cfg: &TrainConfig,
    dataset: &LabeledDataset,
    tree: &HierarchyTree,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if dataset.num_classes() > tree.num_leaves() {
        return Err(Error::LabelOutOfRange {
            label: dataset.num_classes() - 1,
            classes: tree.num_leaves(),
        });
    }
    if dataset.train_idx.is_empty() || dataset.test_idx.is_empty() {
        return Err(Error::EmptySplit);
    }

    let mut model = Model::new(
        cfg.variant,
        tree,
        dataset.input_dim(),
        &cfg.hidden,
        &cfg.radius,
        cfg.seed,
    )?;
    if cfg.probe_2d {
        model = model.attach_2d_probe(cfg.seed.wrapping_add(0x70726f6265))?;
    }
    let mut vels = Velocities::for_model(&model, cfg);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let (test_x, test_y) = dataset.gather(&dataset.test_idx);
    let train_n = dataset.train_idx.len() as f64;
    let mut order = dataset.train_idx.clone();
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = dataset.gather(chunk);
            let (loss, grads) = model.loss_and_grads(x.view(), &y).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch: epoch + 1 },
                other => other,
            })?;
            loss_sum += loss * chunk.len() as f64;
            apply_updates(&mut model, &grads, &mut vels, lr, cfg)?;
        }
        let eval = evaluate(&model, test_x.view(), &test_y).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Diverged { epoch: epoch + 1 },
            other => other,
        })?;
        metrics.push(MetricsRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train_n,
            test_accuracy: eval.accuracy,
            superclass_accuracy: eval.superclass_accuracy,
            norm_drift: column_norm_drift(&model),
        });
    }

    // Fold trained radii back into the radius spec so checkpoints and
    // the path-walk oracle see the same diagonal.
    if let LastLayer::Composed { radii, spec, .. } = &mut model.last {
        if spec.mode == RadiusMode::Learnable {
            spec.learned = Some(radii.to_vec());
        }
    }
    Ok(TrainOutput { model, metrics })
}

// ---------------------------------------------------------------------
// Gradient checking: central differences against the analytic gradients,
// per tensor, with a relative error floored at unit scale so near-zero
// gradients compare absolutely.
// ---------------------------------------------------------------------

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            writeln!(f, "{:<22} max rel err {:.3e}", t.name, t.max_rel_err)?;
        }
        write!(
            f,
            "{} (max {:.3e}, tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.tolerance
        )
    }
}

fn set_param(model: &mut Model, tensor: usize, index: usize, value: f64) {
    let mut slices = model.parameter_slices();
    slices[tensor].1[index] = value;
}

fn get_param(model: &mut Model, tensor: usize, index: usize) -> f64 {
    model.parameter_slices()[tensor].1[index]
}

/// Compares supplied analytic gradients against central differences of
/// the loss. Parameters are restored exactly after probing.
pub(crate) fn compare_to_finite_differences(
    model: &mut Model,
    x: ArrayView2<f64>,
    labels: &[usize],
    analytic: &[(String, Vec<f64>)],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    {
        let names: Vec<String> = model
            .parameter_slices()
            .iter()
            .map(|(n, _)| n.clone())
            .collect();
        let given: Vec<&String> = analytic.iter().map(|(n, _)| n).collect();
        assert_eq!(
            names.iter().collect::<Vec<_>>(),
            given,
            "gradient tensors must mirror parameter tensors"
        );
    }
    let mut tensors = Vec::with_capacity(analytic.len());
    let mut max_rel_err = 0.0f64;
    for (t, (name, a)) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for (i, &analytic_i) in a.iter().enumerate() {
            let orig = get_param(model, t, i);
            set_param(model, t, i, orig + step);
            let up = model.loss_and_grads(x, labels)?.0;
            set_param(model, t, i, orig - step);
            let down = model.loss_and_grads(x, labels)?.0;
            set_param(model, t, i, orig);
            let numeric = (up - down) / (2.0 * step);
            let denom = analytic_i.abs().max(numeric.abs()).max(1.0);
            worst = worst.max((analytic_i - numeric).abs() / denom);
        }
        max_rel_err = max_rel_err.max(worst);
        tensors.push(TensorCheck {
            name: name.clone(),
            max_rel_err: worst,
        });
    }
    Ok(GradCheckReport {
        tensors,
        max_rel_err,
        tolerance,
        passed: max_rel_err < tolerance,
    })
}

/// Checks the model's own gradients on the given batch.
pub fn grad_check(
    model: &mut Model,
    x: ArrayView2<f64>,
    labels: &[usize],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grads(x, labels)?;
    let analytic: Vec<(String, Vec<f64>)> = model
        .gradient_slices(&grads)
        .into_iter()
        .map(|(n, s)| (n, s.to_vec()))
        .collect();
    compare_to_finite_differences(model, x, labels, &analytic, step, tolerance)
}

/// Small deterministic instance for gradient checks: a 2-super, 4-leaf
/// tree, a narrow model, and a random batch.
pub fn small_check_instance(
    variant: ModelVariant,
    radius: &RadiusSpec,
    seed: u64,
) -> Result<(Model, Array2<f64>, Vec<usize>)> {
    let tree = random_hierarchy(4, 2, seed)?;
    let model = Model::new(variant, &tree, 5, &[6], radius, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let x = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..4)).collect();
    Ok((model, x, labels))
}

// ---------------------------------------------------------------------
// Experiment drivers.
// ---------------------------------------------------------------------

/// Final-epoch summary of one sweep setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub gamma: f64,
    pub final_accuracy: f64,
    pub final_superclass_accuracy: f64,
    pub final_loss: f64,
}

/// Trains once per decay factor, holding everything else fixed. With
/// `parallel` the settings run on scoped threads; results are identical
/// either way and ordered like the input.
pub fn radius_sweep(
    cfg: &TrainConfig,
    dataset: &LabeledDataset,
    tree: &HierarchyTree,
    gammas: &[f64],
    parallel: bool,
) -> Result<Vec<SweepPoint>> {
    if gammas.is_empty() {
        return Err(Error::InvalidConfig(
            "sweep needs at least one gamma".into(),
        ));
    }
    let run = |gamma: f64| -> Result<SweepPoint> {
        let mut c = cfg.clone();
        c.radius = RadiusSpec::new(cfg.radius.r0, gamma, cfg.radius.mode)?;
        let out = train(&c, dataset, tree)?;
        let last = out.metrics.last().expect("at least one epoch");
        Ok(SweepPoint {
            gamma,
            final_accuracy: last.test_accuracy,
            final_superclass_accuracy: last.superclass_accuracy,
            final_loss: last.train_loss,
        })
    };
    if parallel {
        let run = &run;
        std::thread::scope(|scope| {
            let handles: Vec<_> = gammas
                .iter()
                .map(|&g| scope.spawn(move || run(g)))
                .collect();
            handles
                .into_iter()
                .map(|h| match h.join() {
                    Ok(r) => r,
                    Err(payload) => std::panic::resume_unwind(payload),
                })
                .collect()
        })
    } else {
        gammas.iter().map(|&g| run(g)).collect()
    }
}

pub fn sweep_to_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("gamma,acc,super_acc,loss\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.gamma, p.final_accuracy, p.final_superclass_accuracy, p.final_loss
        ));
    }
    out
}

/// True-tree accuracy against the same run on shuffled two-level trees
/// with matching shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub true_accuracy: f64,
    pub random_accuracies: Vec<f64>,
}

impl AblationReport {
    pub fn mean_random_accuracy(&self) -> f64 {
        if self.random_accuracies.is_empty() {
            return f64::NAN;
        }
        self.random_accuracies.iter().sum::<f64>() / self.random_accuracies.len() as f64
    }
}

pub fn random_tree_ablation(
    cfg: &TrainConfig,
    dataset: &LabeledDataset,
    true_tree: &HierarchyTree,
    trials: usize,
    tree_seed: u64,
) -> Result<AblationReport> {
    if trials == 0 {
        return Err(Error::InvalidConfig(
            "ablation needs at least one trial".into(),
        ));
    }
    let true_out = train(cfg, dataset, true_tree)?;
    let true_accuracy = true_out.metrics.last().expect("epochs").test_accuracy;
    let num_supers = true_tree.nodes_at_depth(1)?.len();
    let mut random_accuracies = Vec::with_capacity(trials);
    for t in 0..trials {
        let shuffled = random_hierarchy(
            true_tree.num_leaves(),
            num_supers,
            tree_seed.wrapping_add(t as u64),
        )?;
        let out = train(cfg, dataset, &shuffled)?;
        random_accuracies.push(out.metrics.last().expect("epochs").test_accuracy);
    }
    Ok(AblationReport {
        true_accuracy,
        random_accuracies,
    })
}
