//! The hierarchically connected layer.
//!
//! Every class hyperplane is the sum of per-node offset vectors along its
//! root-to-leaf path, each offset scaled by a depth-decayed radius. With
//! offsets as columns of a `d x |P|` matrix, radii on a diagonal, and the
//! binary ancestry matrix relating classes to leaves, the whole bank of
//! leaf hyperplanes is one composition `offsets * radii * ancestry`.
//!
//! The ancestry matrix rows follow `p_order`, columns follow `l_order`;
//! entry (i, j) is 1 exactly when node i is an ancestor of leaf j or the
//! leaf itself. It is kept dense up to [`DENSE_LIMIT`] classes and as
//! per-leaf row lists above that.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::hierarchy::{validate, HierarchyTree};

/// Largest |P| stored as a dense ancestry matrix.
pub const DENSE_LIMIT: usize = 1024;

/// Whether the radius diagonal is a fixed schedule or a trained parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiusMode {
    Fixed,
    Learnable,
}

/// Radius schedule for the offset spheres: a node at depth k gets radius
/// `r0 * gamma^k`. In learnable mode the same values are only the
/// initialization and `learned` carries the trained diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusSpec {
    pub r0: f64,
    pub gamma: f64,
    pub mode: RadiusMode,
    pub learned: Option<Vec<f64>>,
}

impl RadiusSpec {
    pub fn fixed(r0: f64, gamma: f64) -> Result<Self> {
        Self::new(r0, gamma, RadiusMode::Fixed)
    }

    pub fn learnable(r0: f64, gamma: f64) -> Result<Self> {
        Self::new(r0, gamma, RadiusMode::Learnable)
    }

    pub fn new(r0: f64, gamma: f64, mode: RadiusMode) -> Result<Self> {
        if !r0.is_finite() || r0 <= 0.0 {
            return Err(Error::InvalidRadius(format!("r0 = {r0} must be positive")));
        }
        if !gamma.is_finite() || gamma <= 0.0 || gamma > 1.0 {
            return Err(Error::InvalidRadius(format!(
                "gamma = {gamma} must lie in (0, 1]"
            )));
        }
        Ok(RadiusSpec {
            r0,
            gamma,
            mode,
            learned: None,
        })
    }

    /// Radius assigned to a node at the given depth below the root.
    pub fn radius_at_depth(&self, depth: usize) -> f64 {
        self.r0 * self.gamma.powi(depth as i32)
    }

    /// The diagonal of the radius matrix in `p_order` order. Learned
    /// values take precedence when present.
    pub fn diagonal(&self, tree: &HierarchyTree) -> Result<Array1<f64>> {
        if let Some(learned) = &self.learned {
            if learned.len() != tree.num_classes() {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} learned radii", tree.num_classes()),
                    got: learned.len().to_string(),
                });
            }
            return Ok(Array1::from_vec(learned.clone()));
        }
        let mut diag = Array1::zeros(tree.num_classes());
        for (i, &id) in tree.p_order().iter().enumerate() {
            diag[i] = self.radius_at_depth(tree.depth(id)?);
        }
        Ok(diag)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Ancestry {
    Dense(Array2<f64>),
    /// Sorted row indices per leaf column.
    Sparse(Vec<Vec<usize>>),
}

/// Binary ancestry matrix of a hierarchy plus the composition and
/// backpropagation routines that use it.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalLayer {
    storage: Ancestry,
    num_classes: usize,
    num_leaves: usize,
}

impl HierarchicalLayer {
    pub fn from_tree(tree: &HierarchyTree) -> Result<Self> {
        Self::from_tree_with_limit(tree, DENSE_LIMIT)
    }

    pub(crate) fn from_tree_with_limit(tree: &HierarchyTree, dense_limit: usize) -> Result<Self> {
        let report = validate(tree);
        if !report.is_valid() {
            return Err(Error::InvalidTree(report.to_string()));
        }
        let positions = tree.p_positions();
        let num_classes = tree.num_classes();
        let num_leaves = tree.num_leaves();

        let mut rows_per_leaf: Vec<Vec<usize>> = Vec::with_capacity(num_leaves);
        for &leaf in tree.l_order() {
            let mut rows: Vec<usize> = tree
                .ancestors_or_self(leaf)?
                .into_iter()
                .map(|id| positions[&id])
                .collect();
            rows.sort_unstable();
            rows_per_leaf.push(rows);
        }

        let storage = if num_classes <= dense_limit {
            let mut dense = Array2::zeros((num_classes, num_leaves));
            for (j, rows) in rows_per_leaf.iter().enumerate() {
                for &i in rows {
                    dense[(i, j)] = 1.0;
                }
            }
            Ancestry::Dense(dense)
        } else {
            Ancestry::Sparse(rows_per_leaf)
        };
        Ok(HierarchicalLayer {
            storage,
            num_classes,
            num_leaves,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Ancestry::Dense(_))
    }

    /// Materializes the full 0/1 matrix regardless of storage.
    pub fn to_dense(&self) -> Array2<f64> {
        match &self.storage {
            Ancestry::Dense(m) => m.clone(),
            Ancestry::Sparse(rows_per_leaf) => {
                let mut dense = Array2::zeros((self.num_classes, self.num_leaves));
                for (j, rows) in rows_per_leaf.iter().enumerate() {
                    for &i in rows {
                        dense[(i, j)] = 1.0;
                    }
                }
                dense
            }
        }
    }

    fn check_offsets(&self, offsets: &ArrayView2<f64>, diag: &ArrayView1<f64>) -> Result<()> {
        if offsets.ncols() != self.num_classes {
            return Err(Error::DimensionMismatch {
                expected: format!("offsets with {} columns", self.num_classes),
                got: offsets.ncols().to_string(),
            });
        }
        if diag.len() != self.num_classes {
            return Err(Error::DimensionMismatch {
                expected: format!("diagonal of length {}", self.num_classes),
                got: diag.len().to_string(),
            });
        }
        Ok(())
    }

    /// Leaf hyperplane bank `offsets * diag(radii) * ancestry`, one column
    /// per `l_order` leaf.
    pub fn compose(&self, offsets: ArrayView2<f64>, diag: ArrayView1<f64>) -> Result<Array2<f64>> {
        self.check_offsets(&offsets, &diag)?;
        match &self.storage {
            Ancestry::Dense(h) => {
                let scaled = offsets.to_owned() * diag;
                Ok(scaled.dot(h))
            }
            Ancestry::Sparse(rows_per_leaf) => {
                let mut w = Array2::zeros((offsets.nrows(), self.num_leaves));
                for (j, rows) in rows_per_leaf.iter().enumerate() {
                    let mut col = w.column_mut(j);
                    for &q in rows {
                        col.scaled_add(diag[q], &offsets.column(q));
                    }
                }
                Ok(w)
            }
        }
    }

    /// Pulls a hyperplane-bank gradient back onto the offset columns:
    /// `w_grad * ancestry^T * diag(radii)`.
    pub fn backpropagate(
        &self,
        w_grad: ArrayView2<f64>,
        diag: ArrayView1<f64>,
    ) -> Result<Array2<f64>> {
        if w_grad.ncols() != self.num_leaves {
            return Err(Error::DimensionMismatch {
                expected: format!("gradient with {} columns", self.num_leaves),
                got: w_grad.ncols().to_string(),
            });
        }
        if diag.len() != self.num_classes {
            return Err(Error::DimensionMismatch {
                expected: format!("diagonal of length {}", self.num_classes),
                got: diag.len().to_string(),
            });
        }
        match &self.storage {
            Ancestry::Dense(h) => Ok(w_grad.dot(&h.t()) * diag),
            Ancestry::Sparse(rows_per_leaf) => {
                let mut grad = Array2::zeros((w_grad.nrows(), self.num_classes));
                for (j, rows) in rows_per_leaf.iter().enumerate() {
                    for &q in rows {
                        grad.column_mut(q).scaled_add(diag[q], &w_grad.column(j));
                    }
                }
                Ok(grad)
            }
        }
    }

    /// Gradient of the radius diagonal: entry q sums, over the leaves q
    /// sits above, the inner product of offset column q with the
    /// hyperplane-bank gradient column.
    pub fn radius_gradient(
        &self,
        offsets: ArrayView2<f64>,
        w_grad: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        if offsets.ncols() != self.num_classes || w_grad.ncols() != self.num_leaves {
            return Err(Error::DimensionMismatch {
                expected: format!(
                    "offsets {} columns and gradient {} columns",
                    self.num_classes, self.num_leaves
                ),
                got: format!("{} and {}", offsets.ncols(), w_grad.ncols()),
            });
        }
        match &self.storage {
            Ancestry::Dense(h) => {
                let per_pair = offsets.t().dot(&w_grad);
                Ok((per_pair * h).sum_axis(Axis(1)))
            }
            Ancestry::Sparse(rows_per_leaf) => {
                let mut grad = Array1::zeros(self.num_classes);
                for (j, rows) in rows_per_leaf.iter().enumerate() {
                    let g_col = w_grad.column(j);
                    for &q in rows {
                        grad[q] += offsets.column(q).dot(&g_col);
                    }
                }
                Ok(grad)
            }
        }
    }
}

/// Oracle for [`HierarchicalLayer::compose`]: walks every root-to-leaf
/// path directly on the tree and sums depth-scaled offsets, never touching
/// the ancestry matrix.
pub fn path_walk_hyperplanes(
    offsets: ArrayView2<f64>,
    spec: &RadiusSpec,
    tree: &HierarchyTree,
) -> Result<Array2<f64>> {
    if offsets.ncols() != tree.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: format!("offsets with {} columns", tree.num_classes()),
            got: offsets.ncols().to_string(),
        });
    }
    let positions = tree.p_positions();
    let mut w = Array2::zeros((offsets.nrows(), tree.num_leaves()));
    for (j, &leaf) in tree.l_order().iter().enumerate() {
        let mut col = w.column_mut(j);
        let mut node = leaf;
        let mut depth = tree.depth(leaf)?;
        while let Some(parent) = tree.parent_of(node)? {
            let q = positions[&node];
            let radius = match &spec.learned {
                Some(values) => values[q],
                None => spec.radius_at_depth(depth),
            };
            col.scaled_add(radius, &offsets.column(q));
            node = parent;
            depth -= 1;
        }
    }
    Ok(w)
}

/// Hyperplanes truncated at an internal level: one column per node at
/// exactly `level` edges below the root (in `p_order` order), each the sum
/// of scaled offsets from the root down to that node.
pub fn level_hyperplanes(
    offsets: ArrayView2<f64>,
    diag: ArrayView1<f64>,
    tree: &HierarchyTree,
    level: usize,
) -> Result<Array2<f64>> {
    if level == 0 {
        return Err(Error::EmptyLevel { level });
    }
    if offsets.ncols() != tree.num_classes() || diag.len() != tree.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} offset columns and radii", tree.num_classes()),
            got: format!("{} and {}", offsets.ncols(), diag.len()),
        });
    }
    let nodes = tree.nodes_at_depth(level)?;
    if nodes.is_empty() {
        return Err(Error::EmptyLevel { level });
    }
    let positions = tree.p_positions();
    let mut w = Array2::zeros((offsets.nrows(), nodes.len()));
    for (c, &node) in nodes.iter().enumerate() {
        let mut col = w.column_mut(c);
        for id in tree.ancestors_or_self(node)? {
            let q = positions[&id];
            col.scaled_add(diag[q], &offsets.column(q));
        }
    }
    Ok(w)
}

/// Expands a radius diagonal to the dense square matrix used by exports.
pub fn diag_to_dense(diag: ArrayView1<f64>) -> Array2<f64> {
    let mut m = Array2::zeros((diag.len(), diag.len()));
    for (i, &v) in diag.iter().enumerate() {
        m[(i, i)] = v;
    }
    m
}

/// Plain-text matrix: first line `rows cols`, then one space-separated
/// line per row. Values print in shortest exact decimal form.
pub fn matrix_to_text(m: ArrayView2<f64>) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// Inverse of [`matrix_to_text`].
pub fn matrix_from_text(text: &str) -> Result<Array2<f64>> {
    let bad = |msg: &str| Error::FileFormat {
        path: "<matrix>".into(),
        msg: msg.into(),
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty matrix text"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("bad dimension header")))
        .collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(bad("dimension header needs two values"));
    }
    let (rows, cols) = (dims[0], dims[1]);
    let mut values = Vec::with_capacity(rows * cols);
    for line in lines.take(rows) {
        for token in line.split_whitespace() {
            values.push(token.parse::<f64>().map_err(|_| bad("bad matrix value"))?);
        }
    }
    if values.len() != rows * cols {
        return Err(bad("matrix value count does not match header"));
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(&format!("shape error: {e}")))
}
