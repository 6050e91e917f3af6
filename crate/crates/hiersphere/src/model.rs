//! Classification models over a shared feature extractor.
//!
//! Five last-layer variants cover the experiment grid:
//!
//! - `plain`: one unconstrained hyperplane per leaf class.
//! - `multitask`: plain leaf head plus a separate super-class head whose
//!   loss joins in with weight lambda.
//! - `hierarchy`: hyperplanes composed from per-node offsets through the
//!   ancestry matrix, offsets trained as ordinary parameters.
//! - `manifold`: same composition with offsets normalized inside the
//!   forward pass, so stored columns are direction-only.
//! - `riemann`: same composition with offset columns constrained to the
//!   unit sphere by the optimizer.
//!
//! Gradients are hand-derived. The loss is mean softmax cross-entropy in
//! log-sum-exp form; classifier heads carry no bias.

use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hierarchy::HierarchyTree;
use crate::layer::{level_hyperplanes, HierarchicalLayer, RadiusMode, RadiusSpec};
use crate::sphere;

/// Fully connected layer, `weight` stored input x output, optional
/// rectifier on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub relu: bool,
}

impl AffineLayer {
    fn init<R: Rng>(in_dim: usize, out_dim: usize, relu: bool, rng: &mut R) -> Self {
        // Rectifier layers get the variance-preserving 2/fan_in scale,
        // linear ones 1/fan_in.
        let scale = if relu {
            (2.0 / in_dim as f64).sqrt()
        } else {
            (1.0 / in_dim as f64).sqrt()
        };
        let weight = Array2::from_shape_fn((in_dim, out_dim), |_| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        });
        AffineLayer {
            weight,
            bias: Array1::zeros(out_dim),
            relu,
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight) + &self.bias;
        if self.relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
        z
    }
}

/// Stack of affine layers; the embedding dimension is the width of the
/// last layer (or the input dimension when the stack is empty).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub input_dim: usize,
    pub layers: Vec<AffineLayer>,
}

impl FeatureExtractor {
    fn init<R: Rng>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut in_dim = input_dim;
        for &width in hidden {
            layers.push(AffineLayer::init(in_dim, width, true, rng));
            in_dim = width;
        }
        FeatureExtractor { input_dim, layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .last()
            .map(|l| l.weight.ncols())
            .unwrap_or(self.input_dim)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        for layer in &self.layers {
            a = layer.forward(&a);
        }
        a
    }

    /// Forward pass keeping every activation for the backward pass; the
    /// first entry is the input batch itself.
    fn forward_cached(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("nonempty"));
            acts.push(next);
        }
        acts
    }

    /// Backpropagates a gradient on the embedding through the stack,
    /// returning per-layer (weight, bias) gradients.
    fn backward(
        &self,
        acts: &[Array2<f64>],
        grad_embedding: Array2<f64>,
    ) -> Vec<(Array2<f64>, Array1<f64>)> {
        let mut grads = vec![(Array2::zeros((0, 0)), Array1::zeros(0)); self.layers.len()];
        let mut upstream = grad_embedding;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let output = &acts[k + 1];
            let mut dz = upstream;
            if layer.relu {
                // Rectifier mask: active where the output survived.
                ndarray::Zip::from(&mut dz).and(output).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            grads[k] = (acts[k].t().dot(&dz), dz.sum_axis(Axis(0)));
            if k > 0 {
                upstream = dz.dot(&layer.weight.t());
            } else {
                upstream = dz; // consumed; input gradient not needed
            }
        }
        let _ = upstream;
        grads
    }
}

/// How the offset columns are treated by forward and update passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaMode {
    Euclidean,
    InModelNormalized,
    Riemannian,
}

impl DeltaMode {
    pub fn name(self) -> &'static str {
        match self {
            DeltaMode::Euclidean => "euclidean",
            DeltaMode::InModelNormalized => "in_model_normalized",
            DeltaMode::Riemannian => "riemannian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DeltaMode::Euclidean),
            "in_model_normalized" => Ok(DeltaMode::InModelNormalized),
            "riemannian" => Ok(DeltaMode::Riemannian),
            other => Err(Error::InvalidConfig(format!("unknown offset mode {other}"))),
        }
    }
}

/// Per-node offset columns (`d x |P|`) plus their treatment mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalDeltaLayer {
    pub offsets: Array2<f64>,
    pub mode: DeltaMode,
}

impl SphericalDeltaLayer {
    fn init<R: Rng>(d: usize, classes: usize, mode: DeltaMode, rng: &mut R) -> Self {
        let offsets = match mode {
            // Same layout and scale as a plain classifier head, so a flat
            // hierarchy reproduces it draw for draw.
            DeltaMode::Euclidean | DeltaMode::InModelNormalized => {
                let scale = 1.0 / (d as f64).sqrt();
                Array2::from_shape_fn((d, classes), |_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * scale
                })
            }
            DeltaMode::Riemannian => {
                let mut m = Array2::zeros((d, classes));
                for q in 0..classes {
                    m.column_mut(q).assign(&sphere::random_unit(d, rng));
                }
                m
            }
        };
        SphericalDeltaLayer { offsets, mode }
    }

    /// Columns as the composition sees them: normalized copies in
    /// in-model mode, the stored values otherwise.
    pub fn effective(&self) -> Result<Array2<f64>> {
        match self.mode {
            DeltaMode::InModelNormalized => {
                let mut m = self.offsets.clone();
                for mut col in m.columns_mut() {
                    let n = col.dot(&col).sqrt();
                    if n <= sphere::tol::ZERO {
                        return Err(Error::ZeroNorm);
                    }
                    col.mapv_inplace(|v| v / n);
                }
                Ok(m)
            }
            _ => Ok(self.offsets.clone()),
        }
    }

    /// Chains a gradient on the effective columns back to the stored
    /// ones. Identity except in in-model mode, where each column goes
    /// through the normalization Jacobian (I - u u^T) / ||delta||.
    fn backpropagate(&self, effective_grad: Array2<f64>) -> Result<Array2<f64>> {
        match self.mode {
            DeltaMode::InModelNormalized => {
                let mut grad = effective_grad;
                for (q, col) in self.offsets.columns().into_iter().enumerate() {
                    let n = col.dot(&col).sqrt();
                    if n <= sphere::tol::ZERO {
                        return Err(Error::ZeroNorm);
                    }
                    let u = col.to_owned() / n;
                    let mut g = grad.column_mut(q);
                    let radial = u.dot(&g);
                    g.scaled_add(-radial, &u);
                    g.mapv_inplace(|v| v / n);
                }
                Ok(grad)
            }
            _ => Ok(effective_grad),
        }
    }
}

/// Model variant tag; multitask carries its loss weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelVariant {
    Plain,
    Multitask { lambda: f64 },
    Hierarchy,
    Manifold,
    Riemann,
}

impl ModelVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ModelVariant::Plain => "plain",
            ModelVariant::Multitask { .. } => "multitask",
            ModelVariant::Hierarchy => "hierarchy",
            ModelVariant::Manifold => "manifold",
            ModelVariant::Riemann => "riemann",
        }
    }

    pub fn parse(name: &str, lambda: f64) -> Result<Self> {
        match name {
            "plain" => Ok(ModelVariant::Plain),
            "multitask" => Ok(ModelVariant::Multitask { lambda }),
            "hierarchy" => Ok(ModelVariant::Hierarchy),
            "manifold" => Ok(ModelVariant::Manifold),
            "riemann" => Ok(ModelVariant::Riemann),
            other => Err(Error::InvalidConfig(format!("unknown variant {other}"))),
        }
    }

    pub fn delta_mode(&self) -> Option<DeltaMode> {
        match self {
            ModelVariant::Plain | ModelVariant::Multitask { .. } => None,
            ModelVariant::Hierarchy => Some(DeltaMode::Euclidean),
            ModelVariant::Manifold => Some(DeltaMode::InModelNormalized),
            ModelVariant::Riemann => Some(DeltaMode::Riemannian),
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Trainable last layer per variant.
#[derive(Debug, Clone, PartialEq)]
pub enum LastLayer {
    Flat {
        weights: Array2<f64>,
    },
    FlatWithSuper {
        weights: Array2<f64>,
        super_weights: Array2<f64>,
        lambda: f64,
    },
    Composed {
        offsets: SphericalDeltaLayer,
        layer: HierarchicalLayer,
        radii: Array1<f64>,
        spec: RadiusSpec,
    },
}

/// A complete classifier: extractor, last layer, and the hierarchy that
/// shapes it.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub variant: ModelVariant,
    pub tree: HierarchyTree,
    pub extractor: FeatureExtractor,
    pub last: LastLayer,
    /// For dataset label j, the index of its depth-1 ancestor within the
    /// depth-1 node list.
    pub super_of_leaf: Vec<usize>,
    pub probe_attached: bool,
}

/// Gradients matching a [`Model`]'s trainable tensors. Fields are `None`
/// when the variant has no such tensor.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
    pub flat: Option<Array2<f64>>,
    pub super_flat: Option<Array2<f64>>,
    pub offsets: Option<Array2<f64>>,
    pub radii: Option<Array1<f64>>,
}

fn super_index_map(tree: &HierarchyTree) -> Result<Vec<usize>> {
    let supers = tree.nodes_at_depth(1)?;
    let mut map = Vec::with_capacity(tree.num_leaves());
    for &leaf in tree.l_order() {
        let anc = tree.ancestor_at_depth(leaf, 1)?;
        let idx = supers
            .iter()
            .position(|&s| s == anc)
            .ok_or(Error::UnknownNode { id: anc })?;
        map.push(idx);
    }
    Ok(map)
}

impl Model {
    /// Builds and initializes a model from one seeded stream: extractor
    /// layers first, then the last layer, so variants with identically
    /// shaped last layers share their initial values.
    pub fn new(
        variant: ModelVariant,
        tree: &HierarchyTree,
        input_dim: usize,
        hidden: &[usize],
        radius: &RadiusSpec,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig(
                "input dimension must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extractor = FeatureExtractor::init(input_dim, hidden, &mut rng);
        let d = extractor.output_dim();
        let last = Self::init_last(variant, tree, d, radius, &mut rng)?;
        Ok(Model {
            variant,
            tree: tree.clone(),
            extractor,
            last,
            super_of_leaf: super_index_map(tree)?,
            probe_attached: false,
        })
    }

    fn init_last<R: Rng>(
        variant: ModelVariant,
        tree: &HierarchyTree,
        d: usize,
        radius: &RadiusSpec,
        rng: &mut R,
    ) -> Result<LastLayer> {
        let flat_head = |classes: usize, rng: &mut R| {
            let scale = 1.0 / (d as f64).sqrt();
            Array2::from_shape_fn((d, classes), |_| {
                let z: f64 = rng.sample(StandardNormal);
                z * scale
            })
        };
        match variant {
            ModelVariant::Plain => Ok(LastLayer::Flat {
                weights: flat_head(tree.num_leaves(), rng),
            }),
            ModelVariant::Multitask { lambda } => {
                let weights = flat_head(tree.num_leaves(), rng);
                let super_count = tree.nodes_at_depth(1)?.len();
                Ok(LastLayer::FlatWithSuper {
                    weights,
                    super_weights: flat_head(super_count, rng),
                    lambda,
                })
            }
            ModelVariant::Hierarchy | ModelVariant::Manifold | ModelVariant::Riemann => {
                let mode = variant.delta_mode().expect("composed variant");
                let offsets = SphericalDeltaLayer::init(d, tree.num_classes(), mode, rng);
                let layer = HierarchicalLayer::from_tree(tree)?;
                let radii = radius.diagonal(tree)?;
                Ok(LastLayer::Composed {
                    offsets,
                    layer,
                    radii,
                    spec: radius.clone(),
                })
            }
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    pub fn num_leaves(&self) -> usize {
        self.tree.num_leaves()
    }

    /// The leaf hyperplane bank (`d x |L|`) currently implied by the
    /// parameters.
    pub fn leaf_hyperplanes(&self) -> Result<Array2<f64>> {
        match &self.last {
            LastLayer::Flat { weights } | LastLayer::FlatWithSuper { weights, .. } => {
                Ok(weights.clone())
            }
            LastLayer::Composed {
                offsets,
                layer,
                radii,
                ..
            } => layer.compose(offsets.effective()?.view(), radii.view()),
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.extractor.input_dim {
            return Err(Error::DimensionMismatch {
                expected: format!("{} input features", self.extractor.input_dim),
                got: x.ncols().to_string(),
            });
        }
        Ok(())
    }

    /// Leaf logits for a batch (rows are samples).
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let phi = self.extractor.forward(x);
        let logits = phi.dot(&self.leaf_hyperplanes()?);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "logits".into(),
            });
        }
        Ok(logits)
    }

    /// Super-class logits: the dedicated head for multitask, truncated
    /// hyperplanes at `level` for composed variants. Not defined for
    /// plain.
    pub fn superclass_logits(&self, x: ArrayView2<f64>, level: usize) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let phi = self.extractor.forward(x);
        match &self.last {
            LastLayer::Flat { .. } => Err(Error::VariantMismatch {
                variant: "plain".into(),
            }),
            LastLayer::FlatWithSuper { super_weights, .. } => {
                if level != 1 {
                    return Err(Error::EmptyLevel { level });
                }
                Ok(phi.dot(super_weights))
            }
            LastLayer::Composed { offsets, radii, .. } => {
                let bank = level_hyperplanes(
                    offsets.effective()?.view(),
                    radii.view(),
                    &self.tree,
                    level,
                )?;
                Ok(phi.dot(&bank))
            }
        }
    }

    /// Mean cross-entropy loss and gradients for every trainable tensor.
    pub fn loss_and_grads(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Gradients)> {
        self.check_input(&x)?;
        if x.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} labels", x.nrows()),
                got: labels.len().to_string(),
            });
        }
        if labels.is_empty() {
            return Err(Error::EmptySplit);
        }
        let acts = self.extractor.forward_cached(x);
        let phi = acts.last().expect("activations");

        let (loss, grad_phi, flat, super_flat, offsets_grad, radii_grad) = match &self.last {
            LastLayer::Flat { weights } => {
                let logits = phi.dot(weights);
                let (loss, glogits) = softmax_cross_entropy(logits.view(), labels)?;
                let flat = phi.t().dot(&glogits);
                let grad_phi = glogits.dot(&weights.t());
                (loss, grad_phi, Some(flat), None, None, None)
            }
            LastLayer::FlatWithSuper {
                weights,
                super_weights,
                lambda,
            } => {
                let logits = phi.dot(weights);
                let (leaf_loss, glogits) = softmax_cross_entropy(logits.view(), labels)?;
                let super_labels: Vec<usize> =
                    labels.iter().map(|&l| self.super_of_leaf[l]).collect();
                let super_logits = phi.dot(super_weights);
                let (super_loss, gsuper) =
                    softmax_cross_entropy(super_logits.view(), &super_labels)?;
                let flat = phi.t().dot(&glogits);
                let super_flat = phi.t().dot(&gsuper) * *lambda;
                let grad_phi = glogits.dot(&weights.t()) + gsuper.dot(&super_weights.t()) * *lambda;
                (
                    leaf_loss + lambda * super_loss,
                    grad_phi,
                    Some(flat),
                    Some(super_flat),
                    None,
                    None,
                )
            }
            LastLayer::Composed {
                offsets,
                layer,
                radii,
                spec,
            } => {
                let effective = offsets.effective()?;
                let bank = layer.compose(effective.view(), radii.view())?;
                let logits = phi.dot(&bank);
                let (loss, glogits) = softmax_cross_entropy(logits.view(), labels)?;
                let gbank = phi.t().dot(&glogits);
                let geffective = layer.backpropagate(gbank.view(), radii.view())?;
                let goffsets = offsets.backpropagate(geffective)?;
                let gradii = match spec.mode {
                    RadiusMode::Learnable => {
                        Some(layer.radius_gradient(effective.view(), gbank.view())?)
                    }
                    RadiusMode::Fixed => None,
                };
                let grad_phi = glogits.dot(&bank.t());
                (loss, grad_phi, None, None, Some(goffsets), gradii)
            }
        };

        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "loss".into(),
            });
        }
        let layers = self.extractor.backward(&acts, grad_phi);
        Ok((
            loss,
            Gradients {
                layers,
                flat,
                super_flat,
                offsets: offsets_grad,
                radii: radii_grad,
            },
        ))
    }

    /// Adds a linear reduction to 2 dimensions behind the extractor and
    /// re-initializes the last layer at the new width. The probe and the
    /// fresh last layer draw from a stream seeded here.
    pub fn attach_2d_probe(mut self, seed: u64) -> Result<Self> {
        if self.probe_attached {
            return Err(Error::ProbeAttached);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_old = self.extractor.output_dim();
        self.extractor
            .layers
            .push(AffineLayer::init(d_old, 2, false, &mut rng));
        let radius = match &self.last {
            LastLayer::Composed { spec, .. } => spec.clone(),
            _ => RadiusSpec::fixed(1.0, 1.0)?, // unused by flat heads
        };
        self.last = Self::init_last(self.variant, &self.tree, 2, &radius, &mut rng)?;
        self.probe_attached = true;
        Ok(self)
    }

    /// Named views of every trainable tensor, flattened. Order matches
    /// [`Model::gradient_slices`].
    pub fn parameter_slices(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (k, layer) in self.extractor.layers.iter_mut().enumerate() {
            out.push((
                format!("extractor.{k}.weight"),
                layer.weight.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                format!("extractor.{k}.bias"),
                layer.bias.as_slice_mut().expect("standard layout"),
            ));
        }
        match &mut self.last {
            LastLayer::Flat { weights } => {
                out.push(("leaf_head".into(), weights.as_slice_mut().expect("layout")));
            }
            LastLayer::FlatWithSuper {
                weights,
                super_weights,
                ..
            } => {
                out.push(("leaf_head".into(), weights.as_slice_mut().expect("layout")));
                out.push((
                    "super_head".into(),
                    super_weights.as_slice_mut().expect("layout"),
                ));
            }
            LastLayer::Composed {
                offsets,
                radii,
                spec,
                ..
            } => {
                out.push((
                    "offsets".into(),
                    offsets.offsets.as_slice_mut().expect("layout"),
                ));
                if spec.mode == RadiusMode::Learnable {
                    out.push(("radii".into(), radii.as_slice_mut().expect("layout")));
                }
            }
        }
        out
    }

    /// Gradient tensors flattened in the same order and names as
    /// [`Model::parameter_slices`].
    pub fn gradient_slices<'g>(&self, grads: &'g Gradients) -> Vec<(String, &'g [f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (k, (w, b)) in grads.layers.iter().enumerate() {
            out.push((
                format!("extractor.{k}.weight"),
                w.as_slice().expect("layout"),
            ));
            out.push((format!("extractor.{k}.bias"), b.as_slice().expect("layout")));
        }
        if let Some(flat) = &grads.flat {
            out.push(("leaf_head".into(), flat.as_slice().expect("layout")));
        }
        if let Some(s) = &grads.super_flat {
            out.push(("super_head".into(), s.as_slice().expect("layout")));
        }
        if let Some(o) = &grads.offsets {
            out.push(("offsets".into(), o.as_slice().expect("layout")));
        }
        if let Some(r) = &grads.radii {
            out.push(("radii".into(), r.as_slice().expect("layout")));
        }
        out
    }
}

/// Mean softmax cross-entropy in log-sum-exp form plus the logit
/// gradient `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(
    logits: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let (batch, classes) = (logits.nrows(), logits.ncols());
    if labels.len() != batch {
        return Err(Error::DimensionMismatch {
            expected: format!("{batch} labels"),
            got: labels.len().to_string(),
        });
    }
    if batch == 0 {
        return Err(Error::EmptySplit);
    }
    let mut grad = Array2::zeros((batch, classes));
    let mut total = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let label = labels[i];
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        total += lse - row[label];
        let mut grow = grad.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            grow[j] = ((v - max).exp() / sum) / batch as f64;
        }
        grow[label] -= 1.0 / batch as f64;
    }
    Ok((total / batch as f64, grad))
}

// ---------------------------------------------------------------------
// Checkpoints: versioned plain-text key/value tensor dump. Shapes lead
// each tensor; values are rows of decimals with 17 significant digits,
// which round-trip doubles exactly.
// ---------------------------------------------------------------------

const CHECKPOINT_HEADER: &str = "hiersphere-checkpoint v1";

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_matrix(out: &mut String, m: &Array2<f64>) {
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
}

impl Model {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        out.push_str(&format!("variant {}\n", self.variant.name()));
        if let ModelVariant::Multitask { lambda } = self.variant {
            out.push_str(&format!("lambda {}\n", fmt_f64(lambda)));
        }
        out.push_str(&format!("probe {}\n", u8::from(self.probe_attached)));
        out.push_str(&format!("input_dim {}\n", self.extractor.input_dim));

        let tree_text = self.tree.to_pairs()?;
        out.push_str(&format!("tree {}\n", tree_text.lines().count()));
        out.push_str(&tree_text);

        out.push_str(&format!("layers {}\n", self.extractor.layers.len()));
        for layer in &self.extractor.layers {
            out.push_str(&format!(
                "layer {} {} {}\n",
                layer.weight.nrows(),
                layer.weight.ncols(),
                u8::from(layer.relu)
            ));
            write_matrix(&mut out, &layer.weight);
            let cells: Vec<String> = layer.bias.iter().map(|v| fmt_f64(*v)).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }

        match &self.last {
            LastLayer::Flat { weights } => {
                out.push_str(&format!("flat {} {}\n", weights.nrows(), weights.ncols()));
                write_matrix(&mut out, weights);
            }
            LastLayer::FlatWithSuper {
                weights,
                super_weights,
                ..
            } => {
                out.push_str(&format!("flat {} {}\n", weights.nrows(), weights.ncols()));
                write_matrix(&mut out, weights);
                out.push_str(&format!(
                    "super {} {}\n",
                    super_weights.nrows(),
                    super_weights.ncols()
                ));
                write_matrix(&mut out, super_weights);
            }
            LastLayer::Composed {
                offsets,
                radii,
                spec,
                ..
            } => {
                out.push_str(&format!(
                    "radius {} {} {}\n",
                    fmt_f64(spec.r0),
                    fmt_f64(spec.gamma),
                    match spec.mode {
                        RadiusMode::Fixed => "fixed",
                        RadiusMode::Learnable => "learnable",
                    }
                ));
                out.push_str(&format!(
                    "offsets {} {} {}\n",
                    offsets.offsets.nrows(),
                    offsets.offsets.ncols(),
                    offsets.mode.name()
                ));
                write_matrix(&mut out, &offsets.offsets);
                let cells: Vec<String> = radii.iter().map(|v| fmt_f64(*v)).collect();
                out.push_str("radii ");
                out.push_str(&cells.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let err = |msg: &str| Error::FileFormat {
            path: path.display().to_string(),
            msg: msg.into(),
        };
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(&format!("unexpected end of file, wanted {what}")))
        };

        if next("header")? != CHECKPOINT_HEADER {
            return Err(err("bad header"));
        }
        let variant_line = next("variant")?;
        let variant_name = variant_line
            .strip_prefix("variant ")
            .ok_or_else(|| err("missing variant"))?;

        let mut cursor = next("probe or lambda")?;
        let mut lambda = 1.0;
        if let Some(rest) = cursor.strip_prefix("lambda ") {
            lambda = rest.parse().map_err(|_| err("bad lambda"))?;
            cursor = next("probe")?;
        }
        let variant = ModelVariant::parse(variant_name, lambda)?;
        let probe_attached = cursor
            .strip_prefix("probe ")
            .and_then(|v| v.parse::<u8>().ok())
            .map(|v| v == 1)
            .ok_or_else(|| err("missing probe flag"))?;
        let input_dim: usize = next("input_dim")?
            .strip_prefix("input_dim ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err("missing input_dim"))?;

        let tree_lines: usize = next("tree")?
            .strip_prefix("tree ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err("missing tree block"))?;
        let mut tree_text = String::new();
        for _ in 0..tree_lines {
            tree_text.push_str(next("tree line")?);
            tree_text.push('\n');
        }
        let tree = crate::hierarchy::parse_pairs(&tree_text)?;

        let parse_row = |line: &str, want: usize| -> Result<Vec<f64>> {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| err("bad value")))
                .collect::<Result<_>>()?;
            if row.len() != want {
                return Err(err("row length mismatch"));
            }
            Ok(row)
        };

        let layer_count: usize = next("layers")?
            .strip_prefix("layers ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err("missing layer count"))?;
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let spec_line = next("layer")?;
            let parts: Vec<&str> = spec_line.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "layer" {
                return Err(err("bad layer line"));
            }
            let rows: usize = parts[1].parse().map_err(|_| err("bad layer rows"))?;
            let cols: usize = parts[2].parse().map_err(|_| err("bad layer cols"))?;
            let relu = parts[3] == "1";
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                values.extend(parse_row(next("weight row")?, cols)?);
            }
            let weight =
                Array2::from_shape_vec((rows, cols), values).map_err(|_| err("weight shape"))?;
            let bias = Array1::from_vec(parse_row(next("bias row")?, cols)?);
            layers.push(AffineLayer { weight, bias, relu });
        }
        let extractor = FeatureExtractor { input_dim, layers };

        let last = match variant {
            ModelVariant::Plain | ModelVariant::Multitask { .. } => {
                let head = next("flat")?;
                let parts: Vec<&str> = head.split_whitespace().collect();
                if parts.len() != 3 || parts[0] != "flat" {
                    return Err(err("bad flat header"));
                }
                let rows: usize = parts[1].parse().map_err(|_| err("bad dims"))?;
                let cols: usize = parts[2].parse().map_err(|_| err("bad dims"))?;
                let mut values = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    values.extend(parse_row(next("flat row")?, cols)?);
                }
                let weights =
                    Array2::from_shape_vec((rows, cols), values).map_err(|_| err("flat shape"))?;
                match variant {
                    ModelVariant::Multitask { lambda } => {
                        let head = next("super")?;
                        let parts: Vec<&str> = head.split_whitespace().collect();
                        if parts.len() != 3 || parts[0] != "super" {
                            return Err(err("bad super header"));
                        }
                        let rows: usize = parts[1].parse().map_err(|_| err("bad dims"))?;
                        let cols: usize = parts[2].parse().map_err(|_| err("bad dims"))?;
                        let mut values = Vec::with_capacity(rows * cols);
                        for _ in 0..rows {
                            values.extend(parse_row(next("super row")?, cols)?);
                        }
                        let super_weights = Array2::from_shape_vec((rows, cols), values)
                            .map_err(|_| err("super shape"))?;
                        LastLayer::FlatWithSuper {
                            weights,
                            super_weights,
                            lambda,
                        }
                    }
                    _ => LastLayer::Flat { weights },
                }
            }
            ModelVariant::Hierarchy | ModelVariant::Manifold | ModelVariant::Riemann => {
                let radius_line = next("radius")?;
                let parts: Vec<&str> = radius_line.split_whitespace().collect();
                if parts.len() != 4 || parts[0] != "radius" {
                    return Err(err("bad radius line"));
                }
                let r0: f64 = parts[1].parse().map_err(|_| err("bad r0"))?;
                let gamma: f64 = parts[2].parse().map_err(|_| err("bad gamma"))?;
                let mode = match parts[3] {
                    "fixed" => RadiusMode::Fixed,
                    "learnable" => RadiusMode::Learnable,
                    _ => return Err(err("bad radius mode")),
                };
                let mut spec = RadiusSpec::new(r0, gamma, mode)?;

                let head = next("offsets")?;
                let parts: Vec<&str> = head.split_whitespace().collect();
                if parts.len() != 4 || parts[0] != "offsets" {
                    return Err(err("bad offsets header"));
                }
                let rows: usize = parts[1].parse().map_err(|_| err("bad dims"))?;
                let cols: usize = parts[2].parse().map_err(|_| err("bad dims"))?;
                let delta_mode = DeltaMode::parse(parts[3])?;
                let mut values = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    values.extend(parse_row(next("offsets row")?, cols)?);
                }
                let offsets = Array2::from_shape_vec((rows, cols), values)
                    .map_err(|_| err("offsets shape"))?;

                let radii_line = next("radii")?;
                let radii_values = radii_line
                    .strip_prefix("radii ")
                    .ok_or_else(|| err("missing radii"))?;
                let radii = Array1::from_vec(parse_row(radii_values, cols)?);
                if mode == RadiusMode::Learnable {
                    spec.learned = Some(radii.to_vec());
                }
                LastLayer::Composed {
                    offsets: SphericalDeltaLayer {
                        offsets,
                        mode: delta_mode,
                    },
                    layer: HierarchicalLayer::from_tree(&tree)?,
                    radii,
                    spec,
                }
            }
        };

        if next("end")? != "end" {
            return Err(err("missing end marker"));
        }
        let super_of_leaf = super_index_map(&tree)?;
        Ok(Model {
            variant,
            tree,
            extractor,
            last,
            super_of_leaf,
            probe_attached,
        })
    }
}
