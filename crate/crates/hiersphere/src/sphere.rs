//! Unit-sphere geometry for the offset columns.
//!
//! The tangent space at x is every vector orthogonal to x. Moving a point
//! means adding a tangent vector and pulling the result back onto the
//! sphere by normalization (the retraction). A descent step follows the
//! negated tangent component of the ambient gradient:
//!
//! - projection:  P_x(y) = y - (x.y) x
//! - retraction:  R_x(t, h) = (x + h t) / ||x + h t||
//! - descent dir: s = (x.g) x - g
//!
//! The projected alternative skips the tangent step and renormalizes
//! x - h g directly; both coincide when g is already tangent.

use ndarray::{Array1, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Validation tolerances for the sphere types.
pub mod tol {
    /// |norm - 1| accepted by [`super::SpherePoint::new`].
    pub const UNIT_NORM: f64 = 1e-9;
    /// |x.t| accepted by [`super::TangentVector::at`].
    pub const TANGENCY: f64 = 1e-10;
    /// Norms at or below this count as zero.
    pub const ZERO: f64 = 1e-12;
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// A point on the unit sphere; the constructor enforces unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint(Array1<f64>);

impl SpherePoint {
    /// Wraps a vector that is already unit within [`tol::UNIT_NORM`].
    pub fn new(v: Array1<f64>) -> Result<Self> {
        let n = norm(v.view());
        if (n - 1.0).abs() > tol::UNIT_NORM {
            return Err(Error::NotUnitNorm { norm: n });
        }
        Ok(SpherePoint(v))
    }

    /// Rescales an arbitrary nonzero vector onto the sphere.
    pub fn normalized(v: Array1<f64>) -> Result<Self> {
        let n = norm(v.view());
        if n <= tol::ZERO {
            return Err(Error::ZeroNorm);
        }
        Ok(SpherePoint(v / n))
    }

    pub fn coords(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Tangent components at an implied base point, validated at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Array1<f64>);

impl TangentVector {
    /// Wraps components that are orthogonal to `base` within
    /// [`tol::TANGENCY`].
    pub fn at(base: &SpherePoint, components: Array1<f64>) -> Result<Self> {
        if components.len() != base.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim().to_string(),
                got: components.len().to_string(),
            });
        }
        let dot = base.coords().dot(&components);
        if dot.abs() > tol::TANGENCY {
            return Err(Error::NotTangent { dot });
        }
        Ok(TangentVector(components))
    }

    pub fn components(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

/// Orthogonal projection of an ambient vector onto the tangent space at x.
pub fn project_tangent(x: &SpherePoint, y: ArrayView1<f64>) -> Result<TangentVector> {
    if y.len() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim().to_string(),
            got: y.len().to_string(),
        });
    }
    let radial = x.coords().dot(&y);
    let mut components = y.to_owned();
    components.scaled_add(-radial, &x.coords());
    // Exact up to rounding; the checked constructor keeps the invariant.
    TangentVector::at(x, components)
}

/// Steps along a tangent vector and renormalizes: (x + h t) / ||x + h t||.
pub fn retract(x: &SpherePoint, t: &TangentVector, h: f64) -> Result<SpherePoint> {
    if t.components().len() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim().to_string(),
            got: t.components().len().to_string(),
        });
    }
    let mut moved = x.coords().to_owned();
    moved.scaled_add(h, &t.components());
    let n = norm(moved.view());
    if n <= tol::ZERO {
        return Err(Error::RetractionFailed { column: None });
    }
    Ok(SpherePoint(moved / n))
}

/// One descent step against the ambient gradient, following the negated
/// tangent component s = (x.g) x - g and retracting with step size h.
pub fn rsgd_step(x: &SpherePoint, grad: ArrayView1<f64>, h: f64) -> Result<SpherePoint> {
    if grad.len() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim().to_string(),
            got: grad.len().to_string(),
        });
    }
    let radial = x.coords().dot(&grad);
    let mut step = x.coords().to_owned() * radial;
    step -= &grad;
    let t = TangentVector(step);
    retract(x, &t, h)
}

/// One step of the projected alternative: renormalizes x - h g.
pub fn projected_step(x: &SpherePoint, grad: ArrayView1<f64>, h: f64) -> Result<SpherePoint> {
    if grad.len() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim().to_string(),
            got: grad.len().to_string(),
        });
    }
    let mut moved = x.coords().to_owned();
    moved.scaled_add(-h, &grad);
    let n = norm(moved.view());
    if n <= tol::ZERO {
        return Err(Error::RetractionFailed { column: None });
    }
    Ok(SpherePoint(moved / n))
}

/// Uniformly random sphere point from a fresh seeded stream.
pub fn random_sphere_point(dim: usize, seed: u64) -> Result<SpherePoint> {
    if dim == 0 {
        return Err(Error::DimensionMismatch {
            expected: "dimension >= 1".into(),
            got: "0".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(SpherePoint(random_unit(dim, &mut rng)))
}

/// Normalized standard-normal draw; resamples the (measure-zero) case of
/// a vanishing norm. Used wherever columns are initialized on the sphere.
pub(crate) fn random_unit<R: rand::Rng>(dim: usize, rng: &mut R) -> Array1<f64> {
    loop {
        let v: Array1<f64> = Array1::from_shape_fn(dim, |_| StandardNormal.sample(rng));
        let n = norm(v.view());
        if n > tol::ZERO {
            return v / n;
        }
    }
}
