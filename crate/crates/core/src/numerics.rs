//! Dense linear-algebra and rank-3 tensor primitives used by every other module.
//!
//! Storage order (fixed for the whole toolkit, including file formats):
//! matrices are column-major (entry `(i, j)` at flat index `i + rows*j`), and
//! rank-3 tensors generalize this with the first index fastest: entry
//! `(i, j, k)` lives at flat index `i + d1*(j + d2*k)`. The frontal slice
//! `T[:, :, k]` is therefore a contiguous column-major `d1 x d2` block.
//!
//! All values are 64-bit floats; gradient checks at 1e-6 relative tolerance
//! leave no room for single precision.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense rank-2 real array, the lingua franca of the toolkit.
pub type DenseMatrix = DMatrix<f64>;
/// Dense real vector.
pub type Vector = DVector<f64>;

/// Dense rank-3 real array with first-index-fastest storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    d1: usize,
    d2: usize,
    d3: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d1: usize, d2: usize, d3: usize) -> Self {
        assert!(d1 >= 1 && d2 >= 1 && d3 >= 1, "Tensor3 dims must be >= 1");
        Tensor3 {
            d1,
            d2,
            d3,
            data: vec![0.0; d1 * d2 * d3],
        }
    }

    pub fn from_fn(d1: usize, d2: usize, d3: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Tensor3::zeros(d1, d2, d3);
        for k in 0..d3 {
            for j in 0..d2 {
                for i in 0..d1 {
                    t.data[i + d1 * (j + d2 * k)] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn from_vec(d1: usize, d2: usize, d3: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != d1 * d2 * d3 {
            return Err(Error::dim(
                "Tensor3::from_vec",
                format!("expected {} entries, got {}", d1 * d2 * d3, data.len()),
            ));
        }
        Ok(Tensor3 { d1, d2, d3, data })
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d1, self.d2, self.d3)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[i + self.d1 * (j + self.d2 * k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[i + self.d1 * (j + self.d2 * k)] = v;
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Frontal slice `T[:, :, k]` as an owned `d1 x d2` matrix.
    pub fn frontal_slice(&self, k: usize) -> DenseMatrix {
        let n = self.d1 * self.d2;
        DenseMatrix::from_column_slice(self.d1, self.d2, &self.data[k * n..(k + 1) * n])
    }

    pub fn set_frontal_slice(&mut self, k: usize, m: &DenseMatrix) {
        assert_eq!((m.nrows(), m.ncols()), (self.d1, self.d2));
        let n = self.d1 * self.d2;
        self.data[k * n..(k + 1) * n].copy_from_slice(m.as_slice());
    }

    /// Lateral slice `T[:, j, :]` as an owned `d1 x d3` matrix.
    pub fn lateral_slice(&self, j: usize) -> DenseMatrix {
        DenseMatrix::from_fn(self.d1, self.d3, |i, k| self.get(i, j, k))
    }

    pub fn set_lateral_slice(&mut self, j: usize, m: &DenseMatrix) {
        assert_eq!((m.nrows(), m.ncols()), (self.d1, self.d3));
        for k in 0..self.d3 {
            for i in 0..self.d1 {
                self.set(i, j, k, m[(i, k)]);
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scale_mut(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Tensor3) {
        assert_eq!(self.dims(), other.dims());
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Quadratic contraction `(H : z z^T)_i = sum_{p,q} H_{ipq} z_p z_q`.
pub fn contract_quadratic(h: &Tensor3, z: &Vector) -> Result<Vector> {
    let (d1, d2, d3) = h.dims();
    if d2 != z.len() || d3 != z.len() {
        return Err(Error::dim(
            "contract_quadratic",
            format!("tensor dims {:?} vs vector length {}", h.dims(), z.len()),
        ));
    }
    let mut out = Vector::zeros(d1);
    let data = h.as_slice();
    for q in 0..d3 {
        let zq = z[q];
        if zq == 0.0 {
            continue;
        }
        let base = q * d1 * d2;
        for p in 0..d2 {
            let w = zq * z[p];
            if w == 0.0 {
                continue;
            }
            let col = &data[base + p * d1..base + (p + 1) * d1];
            for i in 0..d1 {
                out[i] += w * col[i];
            }
        }
    }
    Ok(out)
}

/// Jacobian of the quadratic contraction:
/// `J_{ij} = sum_q H_{ijq} z_q + sum_p H_{ipj} z_p`.
pub fn contract_jacobian(h: &Tensor3, z: &Vector) -> Result<DenseMatrix> {
    let (d1, d2, d3) = h.dims();
    if d2 != z.len() || d3 != z.len() || d2 != d3 {
        return Err(Error::dim(
            "contract_jacobian",
            format!("tensor dims {:?} vs vector length {}", h.dims(), z.len()),
        ));
    }
    let r = d2;
    let mut jac = DenseMatrix::zeros(d1, r);
    let data = h.as_slice();
    // First term: sum_q z_q * H[:, :, q] (frontal slices are contiguous).
    for q in 0..r {
        let zq = z[q];
        if zq == 0.0 {
            continue;
        }
        let base = q * d1 * d2;
        for j in 0..r {
            let col = &data[base + j * d1..base + (j + 1) * d1];
            for i in 0..d1 {
                jac[(i, j)] += zq * col[i];
            }
        }
    }
    // Second term: column j gets F_j * z with (F_j)_{ip} = H_{ipj}.
    for j in 0..r {
        let base = j * d1 * d2;
        for p in 0..r {
            let zp = z[p];
            if zp == 0.0 {
                continue;
            }
            let col = &data[base + p * d1..base + (p + 1) * d1];
            for i in 0..d1 {
                jac[(i, j)] += zp * col[i];
            }
        }
    }
    Ok(jac)
}

/// Thin SVD `M = U diag(S) V^T` with `k = min(n, m)`.
///
/// Singular values come back non-negative and sorted descending; `U` is
/// `n x k` and `V` is `m x k`, both with orthonormal columns.
pub fn thin_svd(m: &DenseMatrix) -> Result<(DenseMatrix, Vector, DenseMatrix)> {
    let svd = m.clone().try_svd(true, true, f64::EPSILON, 0).ok_or(Error::SvdFailed)?;
    let u = svd.u.ok_or(Error::SvdFailed)?;
    let v_t = svd.v_t.ok_or(Error::SvdFailed)?;
    Ok((u, svd.singular_values, v_t.transpose()))
}

/// Solve `M X = B` by LU with partial pivoting. Explicit inverses are never
/// formed anywhere in the toolkit; every inverse application routes through
/// this or a cached factorization.
pub fn solve_linear(m: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(
            "solve_linear",
            format!("matrix is {}x{}, must be square", m.nrows(), m.ncols()),
        ));
    }
    if m.nrows() != b.nrows() {
        return Err(Error::dim(
            "solve_linear",
            format!("lhs is {}x{} but rhs has {} rows", m.nrows(), m.ncols(), b.nrows()),
        ));
    }
    let lu = m.clone().lu();
    match lu.solve(b) {
        Some(x) if x.iter().all(|v| v.is_finite()) => Ok(x),
        _ => Err(Error::Singular {
            op: "solve_linear",
            cond: cond_2(m),
        }),
    }
}

/// Cached LU factorization for repeated solves against the same matrix.
pub struct LuFactor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    dim: usize,
}

impl LuFactor {
    pub fn new(m: &DenseMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dim(
                "LuFactor::new",
                format!("matrix is {}x{}, must be square", m.nrows(), m.ncols()),
            ));
        }
        let dim = m.nrows();
        let lu = m.clone().lu();
        // Probe with the identity column to detect exact singularity early.
        if lu.u().diagonal().iter().any(|d| *d == 0.0 || !d.is_finite()) {
            return Err(Error::Singular {
                op: "LuFactor::new",
                cond: cond_2(m),
            });
        }
        Ok(LuFactor { lu, dim })
    }

    pub fn solve_mat(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        self.lu
            .solve(b)
            .filter(|x| x.iter().all(|v| v.is_finite()))
            .ok_or(Error::Singular {
                op: "LuFactor::solve",
                cond: f64::INFINITY,
            })
    }

    pub fn solve_vec(&self, b: &Vector) -> Result<Vector> {
        self.lu
            .solve(b)
            .filter(|x| x.iter().all(|v| v.is_finite()))
            .ok_or(Error::Singular {
                op: "LuFactor::solve",
                cond: f64::INFINITY,
            })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Mode-1 matricization: row `i` of the result holds `H[i, :, :]` with
/// column index `c = j + r*k`, so the flat buffer is reinterpreted without
/// reordering. Frobenius norm is preserved exactly.
pub fn matricize(h: &Tensor3) -> Result<DenseMatrix> {
    let (d1, d2, d3) = h.dims();
    if d1 != d2 || d2 != d3 {
        return Err(Error::dim(
            "matricize",
            format!("tensor dims {:?} must be cubic", h.dims()),
        ));
    }
    Ok(DenseMatrix::from_column_slice(d1, d2 * d3, h.as_slice()))
}

/// Real parts of all eigenvalues, sorted descending. Validation-only; never
/// on a training hot path.
pub fn eigenvalue_real_parts(m: &DenseMatrix) -> Vec<f64> {
    let mut re: Vec<f64> = m.complex_eigenvalues().iter().map(|c| c.re).collect();
    re.sort_by(|a, b| b.partial_cmp(a).unwrap());
    re
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &DenseMatrix) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
}

/// 2-norm condition number via singular values (infinite when rank-deficient).
pub fn cond_2(m: &DenseMatrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Thin QR with the sign convention diag(R) >= 0, which makes the factor
/// deterministic and smooth near orthonormal inputs.
pub fn qr_thin_positive(m: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for j in 0..r.nrows().min(r.ncols()) {
        if r[(j, j)] < 0.0 {
            for i in 0..r.ncols() {
                r[(j, i)] = -r[(j, i)];
            }
            for i in 0..q.nrows() {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    (q, r)
}

/// Symmetric part `(M + M^T)/2`.
pub fn sym_part(m: &DenseMatrix) -> DenseMatrix {
    (m + m.transpose()) * 0.5
}

/// Skew part `(M - M^T)/2`.
pub fn skew_part(m: &DenseMatrix) -> DenseMatrix {
    (m - m.transpose()) * 0.5
}

/// Principal angles between the column spans of `a` and `b`, ascending.
pub fn subspace_angles(a: &DenseMatrix, b: &DenseMatrix) -> Result<Vec<f64>> {
    let (qa, _) = qr_thin_positive(a);
    let (qb, _) = qr_thin_positive(b);
    let (_, sv, _) = thin_svd(&(qa.transpose() * qb))?;
    let mut angles: Vec<f64> = sv.iter().map(|s| s.clamp(-1.0, 1.0).acos()).collect();
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(angles)
}

/// l2 norm of the principal angles (a geodesic-style subspace distance).
pub fn subspace_distance(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    Ok(subspace_angles(a, b)?.iter().map(|t| t * t).sum::<f64>().sqrt())
}

/// Matrix exponential (Pade scaling-and-squaring via nalgebra).
pub fn matrix_exp(m: &DenseMatrix) -> DenseMatrix {
    m.exp()
}

/// Matrix exponential together with its Frechet derivative in direction `e`,
/// via the block trick exp([[M, E], [0, M]]) = [[exp(M), L(M,E)], [0, exp(M)]].
pub fn matrix_exp_frechet(m: &DenseMatrix, e: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let n = m.nrows();
    let mut block = DenseMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(m);
    block.view_mut((0, n), (n, n)).copy_from(e);
    block.view_mut((n, n), (n, n)).copy_from(m);
    let eb = block.exp();
    let expm = eb.view((0, 0), (n, n)).into_owned();
    let frechet = eb.view((0, n), (n, n)).into_owned();
    (expm, frechet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize) -> Tensor3 {
        Tensor3::from_fn(r, r, r, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn rand_vec(rng: &mut ChaCha8Rng, r: usize) -> Vector {
        Vector::from_fn(r, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn contract_quadratic_zero_tensor() {
        let h = Tensor3::zeros(3, 3, 3);
        let z = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let out = contract_quadratic(&h, &z).unwrap();
        assert_eq!(out, Vector::zeros(3));
    }

    #[test]
    fn contract_quadratic_single_entry() {
        // H_{1,2,3} = 1 (1-based) => out = (b*c, 0, 0) for z = (a, b, c).
        let mut h = Tensor3::zeros(3, 3, 3);
        h.set(0, 1, 2, 1.0);
        let z = Vector::from_vec(vec![2.0, 3.0, 5.0]);
        let out = contract_quadratic(&h, &z).unwrap();
        assert_relative_eq!(out[0], 15.0, max_relative = 1e-15);
        assert_eq!(out[1], 0.0);
        assert_eq!(out[2], 0.0);
    }

    #[test]
    fn contract_quadratic_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = 4;
        let h = rand_tensor(&mut rng, r);
        let z = rand_vec(&mut rng, r);
        let fast = contract_quadratic(&h, &z).unwrap();
        // Brute-force triple loop reference.
        let mut slow = Vector::zeros(r);
        for i in 0..r {
            for p in 0..r {
                for q in 0..r {
                    slow[i] += h.get(i, p, q) * z[p] * z[q];
                }
            }
        }
        assert_relative_eq!((fast - slow).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn contract_quadratic_dim_mismatch() {
        let h = Tensor3::zeros(3, 3, 3);
        let z = Vector::zeros(2);
        assert!(contract_quadratic(&h, &z).is_err());
    }

    #[test]
    fn contract_jacobian_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = rand_tensor(&mut rng, 3);
        let jac = contract_jacobian(&h, &Vector::zeros(3)).unwrap();
        assert_eq!(jac, DenseMatrix::zeros(3, 3));
    }

    #[test]
    fn contract_jacobian_hand_case() {
        // r=2, H_{1,1,1} = 1 only, z = (3, 0) => entry (1,1) is 6, rest 0.
        let mut h = Tensor3::zeros(2, 2, 2);
        h.set(0, 0, 0, 1.0);
        let z = Vector::from_vec(vec![3.0, 0.0]);
        let jac = contract_jacobian(&h, &z).unwrap();
        assert_eq!(jac[(0, 0)], 6.0);
        assert_eq!(jac.iter().map(|v| v.abs()).sum::<f64>(), 6.0);
    }

    #[test]
    fn contract_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = 5;
        let h = rand_tensor(&mut rng, r);
        let z = rand_vec(&mut rng, r);
        let jac = contract_jacobian(&h, &z).unwrap();
        let eps = 1e-6;
        for _ in 0..5 {
            let v = rand_vec(&mut rng, r);
            let plus = contract_quadratic(&h, &(&z + &v * eps)).unwrap();
            let minus = contract_quadratic(&h, &(&z - &v * eps)).unwrap();
            let fd = (plus - minus) / (2.0 * eps);
            let anl = &jac * &v;
            assert_relative_eq!((fd - &anl).norm(), 0.0, epsilon = 1e-8 * anl.norm().max(1.0));
        }
    }

    #[test]
    fn thin_svd_identity() {
        let (_, sv, _) = thin_svd(&DenseMatrix::identity(3, 3)).unwrap();
        for s in sv.iter() {
            assert_relative_eq!(*s, 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn thin_svd_rank_one() {
        let u = Vector::from_vec(vec![2.0, 0.0, 0.0]);
        let v = Vector::from_vec(vec![0.0, 3.0, 0.0, 0.0]);
        let m = &u * v.transpose();
        let (_, sv, _) = thin_svd(&m).unwrap();
        assert_relative_eq!(sv[0], 6.0, epsilon = 1e-12);
        assert!(sv[1].abs() < 1e-12 && sv[2].abs() < 1e-12);
    }

    #[test]
    fn thin_svd_reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = DenseMatrix::from_fn(10, 6, |_, _| rng.random_range(-1.0..1.0));
        let (u, sv, v) = thin_svd(&m).unwrap();
        let recon = &u * DenseMatrix::from_diagonal(&sv) * v.transpose();
        assert!((recon - &m).norm() <= 1e-12 * sv[0]);
        let utu = u.transpose() * &u;
        assert!((utu - DenseMatrix::identity(6, 6)).norm() < 1e-12);
        for w in sv.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn solve_linear_identity_and_diagonal() {
        let b = DenseMatrix::from_column_slice(2, 1, &[2.0, 4.0]);
        let x = solve_linear(&DenseMatrix::identity(2, 2), &b).unwrap();
        assert_eq!(x, b);
        let m = DenseMatrix::from_diagonal(&Vector::from_vec(vec![2.0, 4.0]));
        let x = solve_linear(&m, &b).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0, max_relative = 1e-15);
        assert_relative_eq!(x[(1, 0)], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn solve_linear_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DenseMatrix::from_fn(8, 8, |i, j| {
            if i == j {
                4.0
            } else {
                rng.random_range(-0.5..0.5)
            }
        });
        let b = DenseMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
        let x = solve_linear(&m, &b).unwrap();
        assert!((&m * &x - &b).norm() <= 1e-12 * b.norm());
    }

    #[test]
    fn solve_linear_singular_reports_condition() {
        let m = DenseMatrix::from_column_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DenseMatrix::identity(2, 2);
        match solve_linear(&m, &b) {
            Err(Error::Singular { cond, .. }) => assert!(cond > 1e12),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn matricize_zero_and_single_entry() {
        assert_eq!(matricize(&Tensor3::zeros(2, 2, 2)).unwrap(), DenseMatrix::zeros(2, 4));
        let mut h = Tensor3::zeros(2, 2, 2);
        h.set(0, 0, 0, 5.0);
        let m = matricize(&h).unwrap();
        assert_eq!(m[(0, 0)], 5.0);
        assert_eq!(m.iter().map(|v| v.abs()).sum::<f64>(), 5.0);
    }

    #[test]
    fn eigenvalues_of_diagonal() {
        let m = DenseMatrix::from_diagonal(&Vector::from_vec(vec![-1.0, -2.0, -5.0]));
        let re = eigenvalue_real_parts(&m);
        assert_relative_eq!(re[0], -1.0, max_relative = 1e-12);
        assert_relative_eq!(re[2], -5.0, max_relative = 1e-12);
        assert_relative_eq!(spectral_abscissa(&m), -1.0, max_relative = 1e-12);
    }

    #[test]
    fn qr_positive_diag_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = DenseMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let (q, r) = qr_thin_positive(&m);
        assert!((q.transpose() * &q - DenseMatrix::identity(3, 3)).norm() < 1e-12);
        assert!((&q * &r - &m).norm() < 1e-12);
        for j in 0..3 {
            assert!(r[(j, j)] >= 0.0);
        }
    }

    #[test]
    fn subspace_distance_zero_for_same_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = DenseMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
        let w = DenseMatrix::from_fn(3, 3, |i, j| if i == j { 2.0 } else { 0.3 });
        let b = &a * w;
        assert!(subspace_distance(&a, &b).unwrap() < 1e-10);
    }

    #[test]
    fn matrix_exp_frechet_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = DenseMatrix::from_fn(4, 4, |_, _| rng.random_range(-0.5..0.5));
        let e = DenseMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let (_, frechet) = matrix_exp_frechet(&a, &e);
        let eps = 1e-6;
        let fd = ((&a + &e * eps).exp() - (&a - &e * eps).exp()) / (2.0 * eps);
        assert!((fd - &frechet).norm() <= 1e-7 * frechet.norm().max(1.0));
    }

    proptest! {
        #[test]
        fn contract_quadratic_is_bilinear(seed in 0u64..1000, alpha in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = 4;
            let h = rand_tensor(&mut rng, r);
            let z = rand_vec(&mut rng, r);
            let f_z = contract_quadratic(&h, &z).unwrap();
            let f_az = contract_quadratic(&h, &(&z * alpha)).unwrap();
            let diff = (&f_az - &f_z * (alpha * alpha)).norm();
            prop_assert!(diff <= 1e-13 * f_az.norm().max(1.0));
        }

        #[test]
        fn matricize_preserves_frobenius_norm(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = rand_tensor(&mut rng, 5);
            let m = matricize(&h).unwrap();
            prop_assert!((m.norm() - h.norm()).abs() <= 1e-14 * h.norm().max(1.0));
        }
    }
}
