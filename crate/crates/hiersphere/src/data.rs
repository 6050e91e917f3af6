//! Synthetic hierarchical datasets and their on-disk layout.
//!
//! Samples are Gaussian clouds around class means that are themselves
//! arranged hierarchically: super-class means sit far apart, sub-class
//! means perturb their super-class mean by a smaller spread, and so on
//! for deeper trees. The matching tree is returned with the data, with
//! dataset label `j` bound to the `j`-th leaf in leaf order.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hierarchy::{parse_pairs, two_level_tree, HierarchyTree};
use crate::sphere::random_unit;

/// Two-level dataset shape: `num_supers` super-classes, each with
/// `subs_per_super` leaf classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_supers: usize,
    pub subs_per_super: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    /// Distance scale of super-class means from the origin.
    pub super_spread: f64,
    /// Distance scale of leaf means from their super-class mean.
    pub sub_spread: f64,
    pub noise_sigma: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_supers: 9,
            subs_per_super: 4,
            samples_per_class: 30,
            input_dim: 16,
            super_spread: 6.0,
            sub_spread: 1.5,
            noise_sigma: 0.3,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Deep dataset shape: level k of the tree has `branching[k-1]` children
/// per node and its means spread by `spreads[k-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedSpec {
    pub branching: Vec<usize>,
    pub spreads: Vec<f64>,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub noise_sigma: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

/// Feature matrix plus labels and a stratified train/test split. Label
/// values index the leaf order of the companion tree.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl LabeledDataset {
    pub fn num_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().map(|&l| l + 1).max().unwrap_or(0)
    }

    /// Copies the rows and labels selected by `idx`.
    pub fn gather(&self, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((idx.len(), self.input_dim()));
        let mut y = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            x.row_mut(row).assign(&self.features.row(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }
}

fn check_common(
    samples_per_class: usize,
    input_dim: usize,
    noise_sigma: f64,
    train_fraction: f64,
) -> Result<()> {
    if samples_per_class == 0 {
        return Err(Error::InvalidConfig(
            "samples_per_class must be positive".into(),
        ));
    }
    if input_dim == 0 {
        return Err(Error::InvalidConfig("input_dim must be positive".into()));
    }
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "noise_sigma = {noise_sigma} must be finite and non-negative"
        )));
    }
    if !train_fraction.is_finite() || train_fraction <= 0.0 || train_fraction >= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "train_fraction = {train_fraction} must lie in (0, 1)"
        )));
    }
    Ok(())
}

fn check_spread(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "{name} = {v} must be finite and non-negative"
        )));
    }
    Ok(())
}

/// Stratified split: within each class the sample indices are shuffled
/// and cut at the train fraction, so every class keeps test examples as
/// long as it has at least two samples.
fn stratified_split<R: Rng>(
    labels: &[usize],
    num_classes: usize,
    train_fraction: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for bucket in &mut per_class {
        bucket.shuffle(rng);
        let n = bucket.len();
        let mut take = (n as f64 * train_fraction).round() as usize;
        take = take.clamp(usize::from(n > 0), n.saturating_sub(usize::from(n > 1)));
        train.extend_from_slice(&bucket[..take]);
        test.extend_from_slice(&bucket[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn noise_row<R: Rng>(dim: usize, sigma: f64, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * sigma
    })
}

/// Generates a two-level dataset and its tree. Deterministic in the
/// spec seed.
pub fn generate(spec: &SyntheticSpec) -> Result<(LabeledDataset, HierarchyTree)> {
    if spec.num_supers == 0 || spec.subs_per_super == 0 {
        return Err(Error::InvalidConfig(
            "need at least one super-class and one sub-class".into(),
        ));
    }
    check_common(
        spec.samples_per_class,
        spec.input_dim,
        spec.noise_sigma,
        spec.train_fraction,
    )?;
    check_spread("super_spread", spec.super_spread)?;
    check_spread("sub_spread", spec.sub_spread)?;

    let num_classes = spec.num_supers * spec.subs_per_super;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut means = Array2::zeros((num_classes, spec.input_dim));
    for s in 0..spec.num_supers {
        let super_mean = random_unit(spec.input_dim, &mut rng) * spec.super_spread;
        for k in 0..spec.subs_per_super {
            let class_mean =
                &super_mean + &(random_unit(spec.input_dim, &mut rng) * spec.sub_spread);
            means
                .row_mut(s * spec.subs_per_super + k)
                .assign(&class_mean);
        }
    }

    let n = num_classes * spec.samples_per_class;
    let mut features = Array2::zeros((n, spec.input_dim));
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        for i in 0..spec.samples_per_class {
            let row = c * spec.samples_per_class + i;
            let sample = &means.row(c) + &noise_row(spec.input_dim, spec.noise_sigma, &mut rng);
            features.row_mut(row).assign(&sample);
            labels.push(c);
        }
    }

    let mut split_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    split_rng.set_stream(1);
    let (train_idx, test_idx) =
        stratified_split(&labels, num_classes, spec.train_fraction, &mut split_rng);

    let assignment: Vec<usize> = (0..num_classes).map(|c| c / spec.subs_per_super).collect();
    let tree = two_level_tree(&assignment, spec.num_supers);

    Ok((
        LabeledDataset {
            features,
            labels,
            train_idx,
            test_idx,
        },
        tree,
    ))
}

/// Generates a deep dataset: means drift from the root by per-level
/// spreads, samples cluster around the deepest level's means.
pub fn generate_nested(spec: &NestedSpec) -> Result<(LabeledDataset, HierarchyTree)> {
    if spec.branching.is_empty() || spec.branching.contains(&0) {
        return Err(Error::InvalidConfig(
            "branching must be non-empty with positive entries".into(),
        ));
    }
    if spec.spreads.len() != spec.branching.len() {
        return Err(Error::InvalidConfig(format!(
            "need one spread per level: {} levels, {} spreads",
            spec.branching.len(),
            spec.spreads.len()
        )));
    }
    for &s in &spec.spreads {
        check_spread("spread", s)?;
    }
    check_common(
        spec.samples_per_class,
        spec.input_dim,
        spec.noise_sigma,
        spec.train_fraction,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Level-order construction; token 0 is the root. Means follow the
    // same order, so leaf means line up with leaf order after parsing.
    let mut pair_lines: Vec<String> = Vec::new();
    let mut level_tokens: Vec<u64> = vec![0];
    let mut means: Vec<Array1<f64>> = vec![Array1::zeros(spec.input_dim)];
    let mut next_token: u64 = 1;
    for (level, &width) in spec.branching.iter().enumerate() {
        let mut next_level = Vec::with_capacity(level_tokens.len() * width);
        for &parent in &level_tokens {
            for _ in 0..width {
                let child = next_token;
                next_token += 1;
                pair_lines.push(format!("{child} {parent}"));
                let parent_mean = &means[parent as usize];
                let mean =
                    parent_mean + &(random_unit(spec.input_dim, &mut rng) * spec.spreads[level]);
                means.push(mean);
                next_level.push(child);
            }
        }
        level_tokens = next_level;
    }
    let text = format!("{}\n{}\n", pair_lines.len(), pair_lines.join("\n"));
    let tree = parse_pairs(&text)?;

    let leaf_means: Vec<&Array1<f64>> = level_tokens.iter().map(|&t| &means[t as usize]).collect();
    let num_classes = leaf_means.len();
    let n = num_classes * spec.samples_per_class;
    let mut features = Array2::zeros((n, spec.input_dim));
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in leaf_means.iter().enumerate() {
        for i in 0..spec.samples_per_class {
            let row = c * spec.samples_per_class + i;
            let sample = *mean + &noise_row(spec.input_dim, spec.noise_sigma, &mut rng);
            features.row_mut(row).assign(&sample);
            labels.push(c);
        }
    }

    let mut split_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    split_rng.set_stream(1);
    let (train_idx, test_idx) =
        stratified_split(&labels, num_classes, spec.train_fraction, &mut split_rng);

    Ok((
        LabeledDataset {
            features,
            labels,
            train_idx,
            test_idx,
        },
        tree,
    ))
}

// ---------------------------------------------------------------------
// On-disk layout: data.csv with a `label,f1..fd` header and 17 significant
// digits per value (exact for doubles), plus one index per line in
// train.idx and test.idx.
// ---------------------------------------------------------------------

pub const DATA_FILE: &str = "data.csv";
pub const TRAIN_IDX_FILE: &str = "train.idx";
pub const TEST_IDX_FILE: &str = "test.idx";

pub fn save_dataset(dir: &Path, ds: &LabeledDataset) -> Result<()> {
    let mut csv = String::from("label");
    for j in 1..=ds.input_dim() {
        csv.push_str(&format!(",f{j}"));
    }
    csv.push('\n');
    for (i, row) in ds.features.rows().into_iter().enumerate() {
        csv.push_str(&ds.labels[i].to_string());
        for v in row {
            csv.push_str(&format!(",{v:.16e}"));
        }
        csv.push('\n');
    }
    std::fs::write(dir.join(DATA_FILE), csv)?;

    let write_idx = |name: &str, idx: &[usize]| -> Result<()> {
        let mut text = String::new();
        for &i in idx {
            text.push_str(&i.to_string());
            text.push('\n');
        }
        std::fs::write(dir.join(name), text)?;
        Ok(())
    };
    write_idx(TRAIN_IDX_FILE, &ds.train_idx)?;
    write_idx(TEST_IDX_FILE, &ds.test_idx)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<LabeledDataset> {
    let data_path = dir.join(DATA_FILE);
    let err = |path: &Path, msg: String| Error::FileFormat {
        path: path.display().to_string(),
        msg,
    };
    let text = std::fs::read_to_string(&data_path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| err(&data_path, "empty data file".into()))?;
    let dim = header.split(',').count().saturating_sub(1);
    if !header.starts_with("label") || dim == 0 {
        return Err(err(&data_path, "bad header".into()));
    }

    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label: usize = fields
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err(&data_path, format!("line {}: bad label", lineno + 2)))?;
        labels.push(label);
        let mut count = 0;
        for field in fields {
            let v: f64 = field
                .parse()
                .map_err(|_| err(&data_path, format!("line {}: bad value", lineno + 2)))?;
            values.push(v);
            count += 1;
        }
        if count != dim {
            return Err(err(
                &data_path,
                format!(
                    "line {}: expected {} features, found {}",
                    lineno + 2,
                    dim,
                    count
                ),
            ));
        }
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, dim), values)
        .map_err(|e| err(&data_path, format!("shape error: {e}")))?;

    let read_idx = |name: &str| -> Result<Vec<usize>> {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path)?;
        let mut idx = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let i: usize = line
                .parse()
                .map_err(|_| err(&path, format!("line {}: bad index", lineno + 1)))?;
            if i >= n {
                return Err(err(
                    &path,
                    format!("index {i} out of range for {n} samples"),
                ));
            }
            idx.push(i);
        }
        Ok(idx)
    };
    let train_idx = read_idx(TRAIN_IDX_FILE)?;
    let test_idx = read_idx(TEST_IDX_FILE)?;

    let mut seen = vec![false; n];
    for &i in train_idx.iter().chain(test_idx.iter()) {
        if seen[i] {
            return Err(err(
                &data_path,
                format!("sample {i} appears in both splits"),
            ));
        }
        seen[i] = true;
    }
    if seen.iter().any(|&s| !s) {
        return Err(err(&data_path, "splits do not cover every sample".into()));
    }
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::EmptySplit);
    }

    Ok(LabeledDataset {
        features,
        labels,
        train_idx,
        test_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::validate;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            num_supers: 3,
            subs_per_super: 2,
            samples_per_class: 10,
            input_dim: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn generation_counts_and_split() {
        let (ds, tree) = generate(&small_spec()).unwrap();
        assert_eq!(ds.num_samples(), 60);
        assert_eq!(ds.input_dim(), 5);
        assert_eq!(ds.num_classes(), 6);
        assert_eq!(tree.num_leaves(), 6);
        assert_eq!(tree.num_classes(), 9);
        assert!(validate(&tree).is_valid());

        // Stratified 80/20: every class contributes 8 train and 2 test.
        assert_eq!(ds.train_idx.len(), 48);
        assert_eq!(ds.test_idx.len(), 12);
        for c in 0..6 {
            let in_test = ds.test_idx.iter().filter(|&&i| ds.labels[i] == c).count();
            assert_eq!(in_test, 2);
        }
        let mut all: Vec<usize> = ds.train_idx.iter().chain(&ds.test_idx).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..60).collect::<Vec<_>>());
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let (a, ta) = generate(&small_spec()).unwrap();
        let (b, tb) = generate(&small_spec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let mut other = small_spec();
        other.seed = 99;
        let (c, _) = generate(&other).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn labels_follow_leaf_order() {
        let (ds, tree) = generate(&small_spec()).unwrap();
        // Leaf j of the generated tree carries label j as its name.
        for (j, &leaf) in tree.l_order().iter().enumerate() {
            let label = tree.label(leaf).unwrap().unwrap();
            let sub: usize = label.parse::<usize>().unwrap() - 3;
            assert_eq!(sub, j);
        }
        assert_eq!(ds.labels[0], 0);
        assert_eq!(ds.labels[59], 5);
    }

    #[test]
    fn near_noiseless_data_is_nearest_mean_separable() {
        let mut spec = small_spec();
        spec.noise_sigma = 1e-9;
        let (ds, _) = generate(&spec).unwrap();
        let (train_x, train_y) = ds.gather(&ds.train_idx);
        let (test_x, test_y) = ds.gather(&ds.test_idx);

        let mut means = Array2::<f64>::zeros((6, ds.input_dim()));
        let mut counts = [0usize; 6];
        for (i, &y) in train_y.iter().enumerate() {
            let mut row = means.row_mut(y);
            row += &train_x.row(i);
            counts[y] += 1;
        }
        for (mut row, &count) in means.rows_mut().into_iter().zip(&counts) {
            row /= count as f64;
        }

        for (i, &y) in test_y.iter().enumerate() {
            let x = test_x.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..6 {
                let diff = &x.to_owned() - &means.row(c);
                let d = diff.dot(&diff);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assert_eq!(best, y);
        }
    }

    #[test]
    fn super_structure_shows_in_mean_distances() {
        let (ds, _) = generate(&SyntheticSpec::default()).unwrap();
        let classes = ds.num_classes();
        let mut means = Array2::<f64>::zeros((classes, ds.input_dim()));
        let mut counts = vec![0usize; classes];
        for (i, &y) in ds.labels.iter().enumerate() {
            let mut row = means.row_mut(y);
            row += &ds.features.row(i);
            counts[y] += 1;
        }
        for (mut row, &count) in means.rows_mut().into_iter().zip(&counts) {
            row /= count as f64;
        }
        let dist = |a: usize, b: usize| {
            let diff = &means.row(a).to_owned() - &means.row(b);
            diff.dot(&diff).sqrt()
        };
        let mut within = (0.0, 0usize);
        let mut across = (0.0, 0usize);
        for a in 0..classes {
            for b in (a + 1)..classes {
                if a / 4 == b / 4 {
                    within = (within.0 + dist(a, b), within.1 + 1);
                } else {
                    across = (across.0 + dist(a, b), across.1 + 1);
                }
            }
        }
        assert!(within.0 / (within.1 as f64) < across.0 / across.1 as f64);
    }

    #[test]
    fn nested_generation_builds_deep_trees() {
        let spec = NestedSpec {
            branching: vec![2, 3],
            spreads: vec![4.0, 2.0],
            samples_per_class: 5,
            input_dim: 4,
            noise_sigma: 0.1,
            train_fraction: 0.8,
            seed: 3,
        };
        let (ds, tree) = generate_nested(&spec).unwrap();
        assert_eq!(tree.num_leaves(), 6);
        assert_eq!(tree.num_classes(), 8);
        assert!(validate(&tree).is_valid());
        for &leaf in tree.l_order() {
            assert_eq!(tree.depth(leaf).unwrap(), 2);
        }
        assert_eq!(ds.num_samples(), 30);
        assert_eq!(ds.num_classes(), 6);

        let four = NestedSpec {
            branching: vec![2, 2, 2, 2],
            spreads: vec![8.0, 4.0, 2.0, 1.0],
            samples_per_class: 3,
            input_dim: 6,
            noise_sigma: 0.1,
            train_fraction: 0.8,
            seed: 1,
        };
        let (_, deep) = generate_nested(&four).unwrap();
        assert_eq!(deep.num_leaves(), 16);
        assert_eq!(deep.num_classes(), 2 + 4 + 8 + 16);
        for &leaf in deep.l_order() {
            assert_eq!(deep.depth(leaf).unwrap(), 4);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small_spec();
        s.num_supers = 0;
        assert!(generate(&s).is_err());
        let mut s = small_spec();
        s.train_fraction = 1.0;
        assert!(generate(&s).is_err());
        let mut s = small_spec();
        s.noise_sigma = f64::NAN;
        assert!(generate(&s).is_err());
        let n = NestedSpec {
            branching: vec![2, 0],
            spreads: vec![1.0, 1.0],
            samples_per_class: 1,
            input_dim: 2,
            noise_sigma: 0.0,
            train_fraction: 0.5,
            seed: 0,
        };
        assert!(generate_nested(&n).is_err());
        let n = NestedSpec {
            branching: vec![2],
            spreads: vec![1.0, 1.0],
            samples_per_class: 1,
            input_dim: 2,
            noise_sigma: 0.0,
            train_fraction: 0.5,
            seed: 0,
        };
        assert!(generate_nested(&n).is_err());
    }

    #[test]
    fn dataset_files_round_trip_exactly() {
        let (ds, _) = generate(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, ds);
    }

    #[test]
    fn load_rejects_corrupt_files() {
        let (ds, _) = generate(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();

        std::fs::write(dir.path().join(TRAIN_IDX_FILE), "0\n0\n").unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::FileFormat { .. })
        ));

        save_dataset(dir.path(), &ds).unwrap();
        std::fs::write(dir.path().join(TEST_IDX_FILE), "99999\n").unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::FileFormat { .. })
        ));

        save_dataset(dir.path(), &ds).unwrap();
        std::fs::write(dir.path().join(DATA_FILE), "label,f1\n0,notanumber\n").unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn split_covers_every_sample_or_load_fails() {
        let (ds, _) = generate(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        // Drop one index from the test split.
        let text = std::fs::read_to_string(dir.path().join(TEST_IDX_FILE)).unwrap();
        let truncated: Vec<&str> = text.lines().skip(1).collect();
        std::fs::write(dir.path().join(TEST_IDX_FILE), truncated.join("\n")).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::FileFormat { .. })
        ));
    }
}
