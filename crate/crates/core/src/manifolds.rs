//! Riemannian geometry of the optimization space: a Grassmann factor for the
//! decoder subspace, a Stiefel factor for the encoder frame, and a block of
//! Euclidean matrix/tensor factors for the latent dynamics parameters.
//!
//! The Grassmann manifold is handled through full-rank representatives
//! `Phi in R^{n x r}` with the quotient metric
//! `g(xi, eta) = Tr((Phi^T Phi)^-1 xi^T eta)` on horizontal lifts
//! (`Phi^T xi = 0`). The Stiefel factor carries the embedded Frobenius
//! metric, Euclidean factors the plain tensor dot product.

use crate::error::{Error, Result};
use crate::numerics::{cond_2, qr_thin_positive, solve_linear, sym_part, DenseMatrix, Tensor3};

/// Representative frame of an r-dimensional subspace of R^n.
#[derive(Debug, Clone)]
pub struct GrassmannPoint {
    frame: DenseMatrix,
}

impl GrassmannPoint {
    /// Frame must have full column rank (smallest singular value above
    /// 1e-10 of the largest).
    pub fn new(frame: DenseMatrix) -> Result<Self> {
        let sv = frame.clone().singular_values();
        let max = sv.iter().cloned().fold(0.0_f64, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 1e-10 * max) || !max.is_finite() {
            return Err(Error::Singular {
                op: "GrassmannPoint::new",
                cond: if min > 0.0 { max / min } else { f64::INFINITY },
            });
        }
        Ok(GrassmannPoint { frame })
    }

    pub fn frame(&self) -> &DenseMatrix {
        &self.frame
    }

    /// Swap the representative for an orthonormal one when the frame gets
    /// ill-conditioned. The represented subspace (and hence the cost) is
    /// unchanged under `Phi -> Phi W`.
    pub fn reconditioned(&self, max_cond: f64) -> Self {
        if cond_2(&self.frame) > max_cond {
            let (q, _) = qr_thin_positive(&self.frame);
            GrassmannPoint { frame: q }
        } else {
            self.clone()
        }
    }
}

/// Orthonormal n x r encoder frame.
#[derive(Debug, Clone)]
pub struct StiefelPoint {
    frame: DenseMatrix,
}

impl StiefelPoint {
    pub fn new(frame: DenseMatrix) -> Result<Self> {
        let r = frame.ncols();
        let gram = frame.transpose() * &frame;
        let defect = (&gram - DenseMatrix::identity(r, r)).norm();
        if defect > 1e-10 {
            return Err(Error::Numerical(format!(
                "Stiefel frame is not orthonormal (defect {defect:.3e})"
            )));
        }
        Ok(StiefelPoint { frame })
    }

    pub fn frame(&self) -> &DenseMatrix {
        &self.frame
    }
}

/// A Euclidean factor of the product space: either a matrix or a rank-3
/// tensor parameter.
#[derive(Debug, Clone)]
pub enum EuclidFactor {
    Matrix(DenseMatrix),
    Tensor(Tensor3),
}

impl EuclidFactor {
    pub fn zeros_like(&self) -> Self {
        match self {
            EuclidFactor::Matrix(m) => EuclidFactor::Matrix(DenseMatrix::zeros(m.nrows(), m.ncols())),
            EuclidFactor::Tensor(t) => {
                let (a, b, c) = t.dims();
                EuclidFactor::Tensor(Tensor3::zeros(a, b, c))
            }
        }
    }

    pub fn dot(&self, other: &EuclidFactor) -> f64 {
        match (self, other) {
            (EuclidFactor::Matrix(a), EuclidFactor::Matrix(b)) => a.dot(b),
            (EuclidFactor::Tensor(a), EuclidFactor::Tensor(b)) => a.dot(b),
            _ => panic!("mismatched Euclidean factor kinds"),
        }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale_mut(&mut self, a: f64) {
        match self {
            EuclidFactor::Matrix(m) => *m *= a,
            EuclidFactor::Tensor(t) => t.scale_mut(a),
        }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &EuclidFactor) {
        match (self, other) {
            (EuclidFactor::Matrix(s), EuclidFactor::Matrix(o)) => {
                s.zip_apply(o, |si, oi| *si += a * oi)
            }
            (EuclidFactor::Tensor(s), EuclidFactor::Tensor(o)) => s.axpy(a, o),
            _ => panic!("mismatched Euclidean factor kinds"),
        }
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        match self {
            EuclidFactor::Matrix(m) => m,
            _ => panic!("expected matrix factor"),
        }
    }

    pub fn as_tensor(&self) -> &Tensor3 {
        match self {
            EuclidFactor::Tensor(t) => t,
            _ => panic!("expected tensor factor"),
        }
    }
}

/// A point on the product space G_{n,r} x St_{n,r} x (Euclidean factors).
#[derive(Debug, Clone)]
pub struct ProductPoint {
    pub grassmann: GrassmannPoint,
    pub stiefel: StiefelPoint,
    pub euclid: Vec<EuclidFactor>,
}

/// Tangent vector with one component per factor of the product point.
#[derive(Debug, Clone)]
pub struct TangentVector {
    pub grassmann: DenseMatrix,
    pub stiefel: DenseMatrix,
    pub euclid: Vec<EuclidFactor>,
}

impl TangentVector {
    pub fn zeros_like(p: &ProductPoint) -> Self {
        TangentVector {
            grassmann: DenseMatrix::zeros(p.grassmann.frame().nrows(), p.grassmann.frame().ncols()),
            stiefel: DenseMatrix::zeros(p.stiefel.frame().nrows(), p.stiefel.frame().ncols()),
            euclid: p.euclid.iter().map(|f| f.zeros_like()).collect(),
        }
    }

    pub fn scale_mut(&mut self, a: f64) {
        self.grassmann *= a;
        self.stiefel *= a;
        for f in &mut self.euclid {
            f.scale_mut(a);
        }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &TangentVector) {
        self.grassmann.zip_apply(&other.grassmann, |s, o| *s += a * o);
        self.stiefel.zip_apply(&other.stiefel, |s, o| *s += a * o);
        for (s, o) in self.euclid.iter_mut().zip(&other.euclid) {
            s.axpy(a, o);
        }
    }

    /// Zero the projection (Grassmann + Stiefel) components; used by
    /// tensors-only coordinate-descent blocks.
    pub fn zero_projection(&mut self) {
        self.grassmann.fill(0.0);
        self.stiefel.fill(0.0);
    }

    /// Zero the Euclidean components; used by projection-only blocks.
    pub fn zero_euclid(&mut self) {
        for f in &mut self.euclid {
            f.scale_mut(0.0);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.grassmann.iter().all(|v| *v == 0.0)
            && self.stiefel.iter().all(|v| *v == 0.0)
            && self.euclid.iter().all(|f| f.norm() == 0.0)
    }
}

fn check_shapes(p: &ProductPoint, v: &TangentVector, op: &'static str) -> Result<()> {
    if p.grassmann.frame().shape() != v.grassmann.shape()
        || p.stiefel.frame().shape() != v.stiefel.shape()
        || p.euclid.len() != v.euclid.len()
    {
        return Err(Error::dim(op, "tangent shapes do not match the point"));
    }
    Ok(())
}

/// Riemannian metric of the product space.
pub fn metric(p: &ProductPoint, xi: &TangentVector, eta: &TangentVector) -> Result<f64> {
    check_shapes(p, xi, "metric")?;
    check_shapes(p, eta, "metric")?;
    let phi = p.grassmann.frame();
    let gram = phi.transpose() * phi;
    let rhs = xi.grassmann.transpose() * &eta.grassmann;
    let solved = solve_linear(&gram, &rhs)?;
    let mut g = solved.trace();
    g += xi.stiefel.dot(&eta.stiefel);
    for (a, b) in xi.euclid.iter().zip(&eta.euclid) {
        g += a.dot(b);
    }
    Ok(g)
}

/// Norm induced by [`metric`].
pub fn tangent_norm(p: &ProductPoint, xi: &TangentVector) -> Result<f64> {
    Ok(metric(p, xi, xi)?.max(0.0).sqrt())
}

/// Orthogonal projection of an ambient (tangent-shaped) value onto the
/// tangent space: Stiefel `G - Psi sym(Psi^T G)`, Grassmann horizontal
/// projection `(I - Phi (Phi^T Phi)^-1 Phi^T) G`, Euclidean identity.
pub fn project_tangent(p: &ProductPoint, ambient: &TangentVector) -> Result<TangentVector> {
    check_shapes(p, ambient, "project_tangent")?;
    let phi = p.grassmann.frame();
    let gram = phi.transpose() * phi;
    let coeff = solve_linear(&gram, &(phi.transpose() * &ambient.grassmann))?;
    let grassmann = &ambient.grassmann - phi * coeff;

    let psi = p.stiefel.frame();
    let sym = sym_part(&(psi.transpose() * &ambient.stiefel));
    let stiefel = &ambient.stiefel - psi * sym;

    Ok(TangentVector {
        grassmann,
        stiefel,
        euclid: ambient.euclid.clone(),
    })
}

/// First-order retraction: QR-based on both frame factors, plain addition on
/// the Euclidean block. `step = 0` returns the point unchanged.
pub fn retract(p: &ProductPoint, xi: &TangentVector, step: f64) -> Result<ProductPoint> {
    check_shapes(p, xi, "retract")?;
    if step == 0.0 {
        return Ok(p.clone());
    }
    // Zero tangent components leave their factor untouched (no spurious
    // re-orthonormalization under coordinate-descent masks).
    let grassmann = if xi.grassmann.iter().all(|v| *v == 0.0) {
        p.grassmann.clone()
    } else {
        let moved_phi = p.grassmann.frame() + &xi.grassmann * step;
        let (q_phi, r_phi) = qr_thin_positive(&moved_phi);
        for j in 0..r_phi.nrows() {
            if r_phi[(j, j)] <= 1e-12 * r_phi[(0, 0)].abs().max(f64::MIN_POSITIVE) {
                return Err(Error::Singular {
                    op: "retract (Grassmann rank collapse)",
                    cond: f64::INFINITY,
                });
            }
        }
        GrassmannPoint::new(q_phi)?
    };
    let stiefel = if xi.stiefel.iter().all(|v| *v == 0.0) {
        p.stiefel.clone()
    } else {
        let moved_psi = p.stiefel.frame() + &xi.stiefel * step;
        let (q_psi, r_psi) = qr_thin_positive(&moved_psi);
        for j in 0..r_psi.nrows() {
            if r_psi[(j, j)] <= 1e-12 {
                return Err(Error::Singular {
                    op: "retract (Stiefel rank collapse)",
                    cond: f64::INFINITY,
                });
            }
        }
        StiefelPoint::new(q_psi)?
    };
    let mut euclid = p.euclid.clone();
    for (f, d) in euclid.iter_mut().zip(&xi.euclid) {
        f.axpy(step, d);
    }
    Ok(ProductPoint {
        grassmann,
        stiefel,
        euclid,
    })
}

/// Vector transport: move the ambient representation unchanged, then project
/// onto the tangent space at the destination.
pub fn transport(_from: &ProductPoint, to: &ProductPoint, xi: &TangentVector) -> Result<TangentVector> {
    project_tangent(to, xi)
}
