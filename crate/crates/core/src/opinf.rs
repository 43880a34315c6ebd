//! Baselines on orthogonal subspaces: POD, POD-Galerkin, Operator Inference
//! (closed form) and its guaranteed-stable variant (gradient-based).

use crate::error::{Error, Result};
use crate::fom::QuadraticFOM;
use crate::numerics::{solve_linear, thin_svd, DenseMatrix, Tensor3, Vector};
use crate::optim::{lbfgs_flat, LbfgsParams};
use crate::rom::{LatentDynamics, OutputMap, ProjectionPair, RomModel};
use crate::stability::{assemble, pullback_gradients, StableLatentParams};
use crate::training::SnapshotDataset;

/// Leading POD modes of a snapshot set.
#[derive(Debug, Clone)]
pub struct PodBasis {
    /// n x r orthonormal modes.
    pub modes: DenseMatrix,
    /// Leading r singular values, non-increasing.
    pub singular_values: Vector,
    /// Fraction of total variance captured by the r modes, in (0, 1].
    pub variance_captured: f64,
}

/// Proper orthogonal decomposition of the weighted snapshot matrix: each
/// trajectory's snapshots are scaled by `1/sqrt(weight_j)` before the SVD.
pub fn pod(data: &SnapshotDataset, r: usize, weights: &[f64]) -> Result<PodBasis> {
    if weights.len() != data.num_trajectories() {
        return Err(Error::dim("pod", "one weight per trajectory"));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Config("pod weights must be positive".into()));
    }
    let n = data.state_dim();
    let total = data.num_trajectories() * data.num_samples();
    if r > n.min(total) {
        return Err(Error::RankDeficient {
            rank: n.min(total),
            requested: r,
        });
    }
    let mut stacked = DenseMatrix::zeros(n, total);
    let mut col = 0;
    for (traj, w) in data.trajectories().iter().zip(weights) {
        let scale = 1.0 / w.sqrt();
        for i in 0..data.num_samples() {
            stacked.set_column(col, &(traj.states.column(i) * scale));
            col += 1;
        }
    }
    let (u, sv, _) = thin_svd(&stacked)?;
    let numerical_rank = sv.iter().filter(|s| **s > 1e-12 * sv[0]).count();
    if r > numerical_rank {
        return Err(Error::RankDeficient {
            rank: numerical_rank,
            requested: r,
        });
    }
    let total_energy: f64 = sv.iter().map(|s| s * s).sum();
    let captured: f64 = sv.iter().take(r).map(|s| s * s).sum();
    Ok(PodBasis {
        modes: u.columns(0, r).into_owned(),
        singular_values: Vector::from_iterator(r, sv.iter().take(r).cloned()),
        variance_captured: captured / total_energy,
    })
}

/// Project a cubic full-order tensor: `Hr_{ijk} = sum Phi_pi H_pqs Phi_qj Phi_sk`.
fn project_tensor3(h: &Tensor3, phi: &DenseMatrix) -> Tensor3 {
    let (n, _, _) = h.dims();
    let r = phi.ncols();
    // Stage 1: contract the first index, T1 = Phi^T * H_(1) (r x n^2).
    let h_mat = DenseMatrix::from_column_slice(n, n * n, h.as_slice());
    let t1 = phi.transpose() * h_mat;
    // Stage 2: contract the middle index slice by slice, T2 (r^2 x n).
    let mut t2 = DenseMatrix::zeros(r * r, n);
    for s in 0..n {
        let x = t1.columns(s * n, n) * phi; // r x r
        for j in 0..r {
            for i in 0..r {
                t2[(i + r * j, s)] = x[(i, j)];
            }
        }
    }
    // Stage 3: contract the last index; the product's layout matches the
    // tensor buffer exactly.
    let flat = t2 * phi; // (r^2) x r
    Tensor3::from_vec(r, r, r, flat.as_slice().to_vec()).expect("shape by construction")
}

/// Intrusive POD-Galerkin ROM: orthogonal projection of the full-order
/// tensors onto the POD modes (`Phi = Psi = modes`).
pub fn pod_galerkin(fom: &QuadraticFOM, basis: &PodBasis) -> Result<RomModel> {
    fom.validate()?;
    let phi = &basis.modes;
    if phi.nrows() != fom.state_dim() {
        return Err(Error::dim("pod_galerkin", "basis rows vs FOM dimension"));
    }
    let a = phi.transpose() * &fom.a * phi;
    let h = project_tensor3(&fom.h, phi);
    let b = phi.transpose() * &fom.b;
    let pair = ProjectionPair::new(phi.clone(), phi.clone())?;
    RomModel::new(pair, LatentDynamics::Raw { a, h, b }, OutputMap::Linear(fom.c.clone()))
}

/// Latent regression data: snapshots, their time-derivatives, inputs, and
/// per-column weights (`1/alpha_j` of the owning trajectory).
#[derive(Debug, Clone)]
pub struct OpInfData {
    /// r x S latent snapshots.
    pub z: DenseMatrix,
    /// r x S latent time-derivatives.
    pub zdot: DenseMatrix,
    /// m x S inputs.
    pub u: DenseMatrix,
    /// Per-column weights, length S.
    pub col_weights: Vec<f64>,
}

impl OpInfData {
    pub fn latent_dim(&self) -> usize {
        self.z.nrows()
    }

    pub fn num_snapshots(&self) -> usize {
        self.z.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.num_snapshots();
        if self.zdot.shape() != self.z.shape() || self.u.ncols() != s || self.col_weights.len() != s {
            return Err(Error::dim("OpInfData", "column counts must match"));
        }
        Ok(())
    }
}

/// Latent snapshots and derivatives for Operator Inference. With a FOM
/// available the derivatives are exact (`Phi^T f(x, u)`); otherwise they
/// come from 4th-order finite differences on the sample grid with one-sided
/// closures at the ends (needs at least 5 samples).
pub fn latent_derivatives(
    data: &SnapshotDataset,
    basis: &PodBasis,
    fom: Option<&QuadraticFOM>,
) -> Result<OpInfData> {
    let phi = &basis.modes;
    if phi.nrows() != data.state_dim() {
        return Err(Error::dim("latent_derivatives", "basis rows vs dataset dimension"));
    }
    let r = phi.ncols();
    let num = data.num_samples();
    let n_traj = data.num_trajectories();
    let total = num * n_traj;
    let mut z = DenseMatrix::zeros(r, total);
    let mut zdot = DenseMatrix::zeros(r, total);
    let mut u = DenseMatrix::zeros(data.input_dim(), total);
    let mut col_weights = Vec::with_capacity(total);
    let dt = data.times()[1] - data.times()[0];

    for (j, traj) in data.trajectories().iter().enumerate() {
        let base = j * num;
        let zj = phi.transpose() * &traj.states; // r x N
        for i in 0..num {
            z.set_column(base + i, &zj.column(i).into_owned());
            u.set_column(base + i, &traj.inputs.column(i).into_owned());
            col_weights.push(1.0 / traj.weight);
        }
        match fom {
            Some(f) => {
                for i in 0..num {
                    let x = traj.states.column(i).into_owned();
                    let ui = traj.inputs.column(i).into_owned();
                    zdot.set_column(base + i, &(phi.transpose() * f.rhs_vec(&x, &ui)));
                }
            }
            None => {
                if num < 5 {
                    return Err(Error::Config(
                        "finite-difference derivatives need at least 5 samples".into(),
                    ));
                }
                for i in 0..num {
                    let col = |k: usize| zj.column(k).into_owned();
                    let d = if i >= 2 && i + 2 < num {
                        (col(i - 2) - col(i - 1) * 8.0 + col(i + 1) * 8.0 - col(i + 2)) / (12.0 * dt)
                    } else if i == 0 {
                        (col(0) * -25.0 + col(1) * 48.0 - col(2) * 36.0 + col(3) * 16.0 - col(4) * 3.0)
                            / (12.0 * dt)
                    } else if i == 1 {
                        (col(0) * -3.0 - col(1) * 10.0 + col(2) * 18.0 - col(3) * 6.0 + col(4))
                            / (12.0 * dt)
                    } else if i == num - 2 {
                        (col(num - 1) * 3.0 + col(num - 2) * 10.0 - col(num - 3) * 18.0
                            + col(num - 4) * 6.0
                            - col(num - 5))
                            / (12.0 * dt)
                    } else {
                        (col(num - 1) * 25.0 - col(num - 2) * 48.0 + col(num - 3) * 36.0
                            - col(num - 4) * 16.0
                            + col(num - 5) * 3.0)
                            / (12.0 * dt)
                    };
                    zdot.set_column(base + i, &d);
                }
            }
        }
    }
    Ok(OpInfData {
        z,
        zdot,
        u,
        col_weights,
    })
}

/// Number of non-redundant quadratic features for dimension r.
fn quad_feature_count(r: usize) -> usize {
    r * (r + 1) / 2
}

/// Quadratic features with the symmetric de-duplication: `z_p^2` for the
/// diagonal, `sqrt(2) z_p z_q` (p < q) off the diagonal, so a uniform ridge
/// on the feature coefficients equals `lambda ||mat(H)||_F^2`.
fn quad_features(z: &Vector) -> Vector {
    let r = z.len();
    let mut out = Vector::zeros(quad_feature_count(r));
    let mut idx = 0;
    let sqrt2 = 2.0_f64.sqrt();
    for p in 0..r {
        for q in p..r {
            out[idx] = if p == q { z[p] * z[p] } else { sqrt2 * z[p] * z[q] };
            idx += 1;
        }
    }
    out
}

/// Recover the symmetric-slice tensor from feature coefficients.
fn tensor_from_quad_coeffs(coeffs: &DenseMatrix) -> Tensor3 {
    let r = coeffs.nrows();
    let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
    let mut h = Tensor3::zeros(r, r, r);
    for i in 0..r {
        let mut idx = 0;
        for p in 0..r {
            for q in p..r {
                let c = coeffs[(i, idx)];
                if p == q {
                    h.set(i, p, p, c);
                } else {
                    h.set(i, p, q, c * inv_sqrt2);
                    h.set(i, q, p, c * inv_sqrt2);
                }
                idx += 1;
            }
        }
    }
    h
}

/// Closed-form Operator Inference: weighted linear least squares for
/// `(A, H, B)` with Tikhonov regularization applied to the `H` block only.
/// The recovered `H` has exactly symmetric slices.
pub fn opinf_lstsq(data: &OpInfData, lambda: f64) -> Result<(DenseMatrix, Tensor3, DenseMatrix)> {
    data.validate()?;
    if lambda < 0.0 {
        return Err(Error::Config("regularization must be non-negative".into()));
    }
    let r = data.latent_dim();
    let m = data.input_dim();
    let s = data.num_snapshots();
    let nq = quad_feature_count(r);
    let nfeat = r + nq + m;

    // Weighted normal equations: (D W D^T + lambda M) O^T = D W Zdot^T.
    let mut normal = DenseMatrix::zeros(nfeat, nfeat);
    let mut rhs = DenseMatrix::zeros(nfeat, r);
    let mut feat = Vector::zeros(nfeat);
    for j in 0..s {
        let zj = data.z.column(j).into_owned();
        let qf = quad_features(&zj);
        for i in 0..r {
            feat[i] = zj[i];
        }
        for i in 0..nq {
            feat[r + i] = qf[i];
        }
        for i in 0..m {
            feat[r + nq + i] = data.u[(i, j)];
        }
        let w = data.col_weights[j];
        normal.ger(w, &feat, &feat, 1.0);
        let zd = data.zdot.column(j).into_owned();
        rhs.ger(w, &feat, &zd, 1.0);
    }
    for i in 0..nq {
        normal[(r + i, r + i)] += lambda;
    }
    // Zero targets admit the minimal-norm solution regardless of regressor
    // rank (e.g. all-zero inputs would otherwise make the system singular).
    if rhs.norm() == 0.0 {
        return Ok((
            DenseMatrix::zeros(r, r),
            Tensor3::zeros(r, r, r),
            DenseMatrix::zeros(r, m),
        ));
    }
    if lambda == 0.0 {
        let cond = crate::numerics::cond_2(&normal);
        if !(cond <= 1e12) {
            return Err(Error::Singular {
                op: "opinf_lstsq (rank-deficient regressor, retry with lambda > 0)",
                cond,
            });
        }
    }
    let coeff_t = solve_linear(&normal, &rhs)?; // nfeat x r
    let coeffs = coeff_t.transpose(); // r x nfeat
    let a = coeffs.columns(0, r).into_owned();
    let h = tensor_from_quad_coeffs(&coeffs.columns(r, nq).into_owned());
    let b = coeffs.columns(r + nq, m).into_owned();
    Ok((a, h, b))
}

/// GasOpInf residual, objective value and the ambient gradients
/// `G_A = -2 E W Z^T`, `G_B = -2 E W U^T`,
/// `(G_H)_{ipq} = -2 sum_j w_j E_ij Z_pj Z_qj` (+ the ridge term on `H`).
pub fn gasopinf_value_and_ambient_grads(
    data: &OpInfData,
    params: &StableLatentParams,
    lambda: f64,
) -> Result<(f64, DenseMatrix, Tensor3, DenseMatrix)> {
    let t = assemble(params)?;
    let r = data.latent_dim();
    let s = data.num_snapshots();
    // Residual E = Zdot - A Z - H : Z Z^T - B U.
    let mut e = &data.zdot - &t.a * &data.z - &params.b * &data.u;
    for j in 0..s {
        let zj = data.z.column(j).into_owned();
        let hzz = crate::numerics::contract_quadratic(&t.h, &zj)?;
        for i in 0..r {
            e[(i, j)] -= hzz[i];
        }
    }
    let mut value = 0.0;
    for j in 0..s {
        value += data.col_weights[j] * e.column(j).norm_squared();
    }
    value += lambda * t.h.norm().powi(2);

    // Weighted residual E W.
    let mut ew = e.clone();
    for j in 0..s {
        let w = data.col_weights[j];
        for i in 0..r {
            ew[(i, j)] *= w;
        }
    }
    let g_a = &ew * data.z.transpose() * -2.0;
    let g_b = &ew * data.u.transpose() * -2.0;
    let mut g_h = Tensor3::zeros(r, r, r);
    {
        let buf = g_h.as_mut_slice();
        for j in 0..s {
            for q in 0..r {
                let zq = data.z[(q, j)];
                if zq == 0.0 {
                    continue;
                }
                for p in 0..r {
                    let w = -2.0 * zq * data.z[(p, j)];
                    if w == 0.0 {
                        continue;
                    }
                    let base = (p + r * q) * r;
                    for i in 0..r {
                        buf[base + i] += w * ew[(i, j)];
                    }
                }
            }
        }
    }
    // Ridge on H: d(lambda ||H||^2)/dH = 2 lambda H.
    g_h.axpy(2.0 * lambda, &t.h);
    Ok((value, g_a, g_h, g_b))
}

fn pack(params: &StableLatentParams) -> Vector {
    let r = params.latent_dim();
    let m = params.input_dim();
    let mut v = Vector::zeros(3 * r * r + r * r * r + r * m);
    let mut off = 0;
    for mat in [&params.k, &params.r, &params.q] {
        v.rows_mut(off, r * r).copy_from_slice(mat.as_slice());
        off += r * r;
    }
    v.rows_mut(off, r * r * r).copy_from_slice(params.s.as_slice());
    off += r * r * r;
    v.rows_mut(off, r * m).copy_from_slice(params.b.as_slice());
    v
}

fn unpack(v: &Vector, r: usize, m: usize) -> StableLatentParams {
    let grab = |off: usize, len: usize| v.as_slice()[off..off + len].to_vec();
    let mut off = 0;
    let k = DenseMatrix::from_vec(r, r, grab(off, r * r));
    off += r * r;
    let rr = DenseMatrix::from_vec(r, r, grab(off, r * r));
    off += r * r;
    let q = DenseMatrix::from_vec(r, r, grab(off, r * r));
    off += r * r;
    let s = Tensor3::from_vec(r, r, r, grab(off, r * r * r)).expect("packed length");
    off += r * r * r;
    let b = DenseMatrix::from_vec(r, m, grab(off, r * m));
    StableLatentParams { k, r: rr, q, s, b }
}

/// Guaranteed-stable Operator Inference: minimize the weighted residual plus
/// `lambda ||mat(H)||_F^2` over the stability parameterization by Euclidean
/// L-BFGS with the closed-form gradients pulled back through the assembly.
pub fn gasopinf_train(
    data: &OpInfData,
    init: &StableLatentParams,
    lambda: f64,
    params: &LbfgsParams,
) -> Result<(StableLatentParams, Vec<f64>)> {
    data.validate()?;
    init.validate_shapes()?;
    assemble(init)?;
    let r = init.latent_dim();
    let m = init.input_dim();
    if r != data.latent_dim() || m != data.input_dim() {
        return Err(Error::dim("gasopinf_train", "init dims vs data dims"));
    }
    let out = lbfgs_flat(
        |x| {
            let p = unpack(x, r, m);
            match gasopinf_value_and_ambient_grads(&data_ref(data), &p, lambda) {
                Ok((value, g_a, g_h, g_b)) => match pullback_gradients(&p, &g_a, &g_h) {
                    Ok((g_k, g_r, g_q, g_s)) => {
                        let packed = pack(&StableLatentParams {
                            k: g_k,
                            r: g_r,
                            q: g_q,
                            s: g_s,
                            b: g_b,
                        });
                        (value, packed)
                    }
                    Err(_) => (f64::INFINITY, Vector::zeros(x.len())),
                },
                Err(_) => (f64::INFINITY, Vector::zeros(x.len())),
            }
        },
        pack(init),
        params,
    );
    let trained = unpack(&out.x, r, m);
    assemble(&trained)?;
    Ok((trained, out.history))
}

// Identity helper so the closure in gasopinf_train borrows immutably.
fn data_ref(d: &OpInfData) -> OpInfData {
    d.clone()
}
