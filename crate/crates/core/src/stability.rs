//! Lyapunov-based parameterization of the latent dynamics.
//!
//! Unconstrained parameters `(K, R, Q, S, B)` assemble into
//!
//! ```text
//! A = (K - K^T - R R^T) Qt,          Qt = Q^-1 Q^-T  (SPD by construction)
//! H[:, j, :] = (S_j - S_j^T) Qt      with S_j = S[:, j, :]
//! ```
//!
//! which makes `A` Hurwitz (strictly, for full-rank `R`) and the quadratic
//! term energy-preserving: `z^T Qt (H : z z^T)` vanishes identically because
//! the lateral slices of the intermediate tensor are skew-symmetric and both
//! outer indices of the cubic form see the same vector `Qt z`. The module
//! also provides the exact chain rule from gradients in `(A, H)` back to the
//! unconstrained parameters, and warm-start constructions from an arbitrary
//! stable matrix.

use crate::error::{Error, Result};
use crate::numerics::{
    self, cond_2, contract_quadratic, skew_part, solve_linear, sym_part, DenseMatrix, LuFactor,
    Tensor3, Vector,
};

/// Maximum condition number of `Q` accepted at assembly.
pub const MAX_Q_COND: f64 = 1e12;

/// Unconstrained parameter set for guaranteed-stable quadratic dynamics.
#[derive(Debug, Clone)]
pub struct StableLatentParams {
    pub k: DenseMatrix,
    pub r: DenseMatrix,
    pub q: DenseMatrix,
    pub s: Tensor3,
    pub b: DenseMatrix,
}

impl StableLatentParams {
    pub fn latent_dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate_shapes(&self) -> Result<()> {
        let r = self.k.nrows();
        let ok = self.k.shape() == (r, r)
            && self.r.shape() == (r, r)
            && self.q.shape() == (r, r)
            && self.s.dims() == (r, r, r)
            && self.b.nrows() == r;
        if ok {
            Ok(())
        } else {
            Err(Error::dim("StableLatentParams", "inconsistent factor shapes"))
        }
    }

    /// Smallest singular value of `R`; reported as a training diagnostic
    /// because strict (rather than marginal) stability needs full-rank `R`.
    pub fn min_singular_value_r(&self) -> f64 {
        let sv = self.r.clone().singular_values();
        sv.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Assembled latent tensors together with the cached Lyapunov weight.
#[derive(Debug, Clone)]
pub struct AssembledTensors {
    pub a: DenseMatrix,
    pub h: Tensor3,
    pub qtilde: DenseMatrix,
}

/// Assemble `(A, H, Qt)` from the unconstrained parameters.
pub fn assemble(p: &StableLatentParams) -> Result<AssembledTensors> {
    p.validate_shapes()?;
    let r = p.latent_dim();
    let cond = cond_2(&p.q);
    if !(cond <= MAX_Q_COND) {
        return Err(Error::Singular {
            op: "assemble",
            cond,
        });
    }
    let lu_q = LuFactor::new(&p.q)?;
    let lu_qt = LuFactor::new(&p.q.transpose())?;
    // Qt = Q^-1 Q^-T, built from two solve batches; symmetrized to scrub
    // roundoff so downstream energy identities hold to machine precision.
    let q_inv_t = lu_qt.solve_mat(&DenseMatrix::identity(r, r))?;
    let qtilde = sym_part(&lu_q.solve_mat(&q_inv_t)?);

    let core = &p.k - p.k.transpose() - &p.r * p.r.transpose();
    let a = &core * &qtilde;

    let mut h = Tensor3::zeros(r, r, r);
    for j in 0..r {
        let s_j = p.s.lateral_slice(j);
        let skew = &s_j - s_j.transpose();
        h.set_lateral_slice(j, &(skew * &qtilde));
    }
    Ok(AssembledTensors { a, h, qtilde })
}

/// Lyapunov energy rate `C = z^T Qt f_r(z) + f_r(z)^T Qt z` with `u = 0`.
/// Non-positive for every `z`; the quadratic contribution is zero to roundoff.
pub fn lyapunov_rate(t: &AssembledTensors, z: &Vector) -> f64 {
    let f = &t.a * z + contract_quadratic(&t.h, z).expect("shape-checked at assembly");
    2.0 * (&t.qtilde * z).dot(&f)
}

/// Pull gradients with respect to `(A, H)` back to the unconstrained
/// parameters `(K, R, Q, S)` through the assembly map.
pub fn pullback_gradients(
    p: &StableLatentParams,
    g_a: &DenseMatrix,
    g_h: &Tensor3,
) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix, Tensor3)> {
    p.validate_shapes()?;
    let r = p.latent_dim();
    if g_a.shape() != (r, r) || g_h.dims() != (r, r, r) {
        return Err(Error::dim("pullback_gradients", "gradient shapes"));
    }
    let assembled_qt = assemble(p)?.qtilde;
    let qt = &assembled_qt;

    let ga_qt = g_a * qt;
    let qt_gat = qt * g_a.transpose();
    let g_k = &ga_qt - &qt_gat;
    let g_r = -(&ga_qt + &qt_gat) * &p.r;

    // d(A)/d(Qt) contribution plus one term per lateral slice of H.
    let core = &p.k - p.k.transpose() - &p.r * p.r.transpose();
    let mut g_qt = core.transpose() * g_a;
    let mut g_s = Tensor3::zeros(r, r, r);
    for j in 0..r {
        let s_j = p.s.lateral_slice(j);
        let skew = &s_j - s_j.transpose();
        let gh_j = g_h.lateral_slice(j);
        g_qt += skew.transpose() * &gh_j;
        let gh_qt = &gh_j * qt;
        g_s.set_lateral_slice(j, &(&gh_qt - gh_qt.transpose()));
    }

    // d(Qt)/d(Q): Qt = Q^-1 Q^-T gives
    // G_Q = -Q^-T (G_Qt + G_Qt^T) Q^-1 Q^-T.
    let sym = &g_qt + g_qt.transpose();
    let g_q = -solve_linear(&p.q.transpose(), &(sym * qt))?;
    Ok((g_k, g_r, g_q, g_s))
}

/// Solve `A^T P + P A = -RHS` for symmetric `P` via the Kronecker system.
/// Dense and cubic in `r^2`; intended for the small latent dimensions used
/// here, never for full-order systems.
pub fn lyapunov_solve(a: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    let r = a.nrows();
    if a.ncols() != r || rhs.shape() != (r, r) {
        return Err(Error::dim("lyapunov_solve", "A must be square, RHS matching"));
    }
    let at = a.transpose();
    // vec(A^T P) = (I (x) A^T) vec(P); vec(P A) = (A^T (x) I) vec(P).
    let mut big = DenseMatrix::zeros(r * r, r * r);
    for col in 0..r {
        for row in 0..r {
            // (I (x) A^T) block structure: block-diagonal copies of A^T.
            big.view_mut((col * r, col * r), (r, r)).add_assign_helper(&at);
            let _ = row;
            break;
        }
    }
    // Fill (A^T (x) I): entry ((i, j) block) = A^T[j_block, i_block] * I.
    for bi in 0..r {
        for bj in 0..r {
            let v = at[(bi, bj)];
            if v != 0.0 {
                for d in 0..r {
                    big[(bi * r + d, bj * r + d)] += v;
                }
            }
        }
    }
    let neg_rhs = DenseMatrix::from_fn(r * r, 1, |idx, _| -rhs[(idx % r, idx / r)]);
    let vec_p = solve_linear(&big, &neg_rhs)?;
    let p = DenseMatrix::from_fn(r, r, |i, j| vec_p[(i + r * j, 0)]);
    Ok(sym_part(&p))
}

// Small helper because nalgebra views lack +=-from-matrix sugar for this use.
trait AddAssignHelper {
    fn add_assign_helper(&mut self, other: &DenseMatrix);
}
impl AddAssignHelper for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign_helper(&mut self, other: &DenseMatrix) {
        for j in 0..other.ncols() {
            for i in 0..other.nrows() {
                self[(i, j)] += other[(i, j)];
            }
        }
    }
}

/// Project the spectrum of `a` into the open left half-plane by flipping the
/// real parts of offending eigenvalues to `-|Re|` (floored at `margin`) in
/// the real Schur form.
pub fn project_spectrum_stable(a: &DenseMatrix, margin: f64) -> DenseMatrix {
    let r = a.nrows();
    let schur = a.clone().schur();
    let (q, mut t) = schur.unpack();
    let mut k = 0;
    while k < r {
        let two_by_two = k + 1 < r && t[(k + 1, k)].abs() > 1e-12 * a.norm().max(1.0);
        if two_by_two {
            let mu = 0.5 * (t[(k, k)] + t[(k + 1, k + 1)]);
            if mu > -margin {
                let shift = -mu - mu.abs().max(margin);
                t[(k, k)] += shift;
                t[(k + 1, k + 1)] += shift;
            }
            k += 2;
        } else {
            let lam = t[(k, k)];
            if lam > -margin {
                t[(k, k)] = -lam.abs().max(margin);
            }
            k += 1;
        }
    }
    &q * t * q.transpose()
}

/// `Q = I` warm start: eigen-project `a_target` to the stable half-plane,
/// split into skew and clipped-PSD parts, and take the skew part of
/// `h_target` as the quadratic parameter. Matches the target exactly only
/// when the target already satisfies the stability structure.
pub fn params_q_identity(
    a_target: &DenseMatrix,
    h_target: &Tensor3,
    b: &DenseMatrix,
    margin: f64,
) -> Result<StableLatentParams> {
    let r = a_target.nrows();
    if h_target.dims() != (r, r, r) || b.nrows() != r {
        return Err(Error::dim("params_q_identity", "target shapes"));
    }
    let a_s = project_spectrum_stable(a_target, margin);
    let k = skew_part(&a_s) * 0.5;
    let r_tilde_target = -sym_part(&a_s);
    let eig = nalgebra::SymmetricEigen::new(r_tilde_target);
    let floor = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max)
        .max(1.0)
        * 1e-8;
    let sqrt_vals = Vector::from_iterator(r, eig.eigenvalues.iter().map(|l| l.max(floor).sqrt()));
    let r_factor = &eig.eigenvectors * DenseMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();

    // With Q = I the assembled slices are S_j - S_j^T, so half the target
    // recovers its skew part exactly.
    let mut s = h_target.clone();
    s.scale_mut(0.5);
    Ok(StableLatentParams {
        k,
        r: r_factor,
        q: DenseMatrix::identity(r, r),
        s,
        b: b.clone(),
    })
}

/// Lyapunov-equation warm start from an arbitrary stable matrix: solve
/// `A0^T P + P A0 = -I`, set `Qt = P` (so `Q` is the inverse Cholesky
/// factor), and recover `K`, `R` in closed form. Reproduces `A0` exactly
/// when `A0` is already Hurwitz.
pub fn params_from_stable_matrix(
    a0: &DenseMatrix,
    h_target: &Tensor3,
    b: &DenseMatrix,
) -> Result<StableLatentParams> {
    let r = a0.nrows();
    if h_target.dims() != (r, r, r) || b.nrows() != r {
        return Err(Error::dim("params_from_stable_matrix", "target shapes"));
    }
    let a_s = if numerics::spectral_abscissa(a0) >= 0.0 {
        project_spectrum_stable(a0, 1e-6 * a0.norm().max(1.0))
    } else {
        a0.clone()
    };
    let p = lyapunov_solve(&a_s, &DenseMatrix::identity(r, r))?;
    let chol = nalgebra::Cholesky::new(p.clone())
        .ok_or_else(|| Error::Numerical("Lyapunov solution is not positive-definite".into()))?;
    // Qt = P = L L^T means Q^-1 = L, i.e. Q = L^-1.
    let l = chol.l();
    let q = solve_linear(&l.into_owned(), &DenseMatrix::identity(r, r))?;

    // A0 P^-1 = (P^-1 A0^T)^T via a solve against symmetric P.
    let a0_pinv = solve_linear(&p, &a_s.transpose())?.transpose();
    let k = skew_part(&a0_pinv) * 0.5;
    // From the Lyapunov identity, sym(A0 P^-1) = -P^-2 / 2, so R = P^-1/sqrt(2)
    // satisfies R R^T = -sym(A0 P^-1) exactly and is symmetric full-rank.
    let p_inv = solve_linear(&p, &DenseMatrix::identity(r, r))?;
    let r_factor = sym_part(&p_inv) * (1.0 / 2.0_f64.sqrt());

    // Lateral slices: target skew factor is H_j P^-1, keep its skew part.
    let mut s = Tensor3::zeros(r, r, r);
    for j in 0..r {
        let h_j = h_target.lateral_slice(j);
        let m_j = solve_linear(&p, &h_j.transpose())?.transpose();
        s.set_lateral_slice(j, &(skew_part(&m_j)));
    }
    Ok(StableLatentParams {
        k,
        r: r_factor,
        q,
        s,
        b: b.clone(),
    })
}

/// Seeded random parameter sets shared by tests across modules.
#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_params(rng: &mut ChaCha8Rng, r: usize, m: usize) -> StableLatentParams {
        StableLatentParams {
            k: DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0)),
            r: DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0))
                + DenseMatrix::identity(r, r),
            q: DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-0.5..0.5))
                + DenseMatrix::identity(r, r) * 1.5,
            s: Tensor3::from_fn(r, r, r, |_, _, _| rng.random_range(-1.0..1.0)),
            b: DenseMatrix::from_fn(r, m, |_, _| rng.random_range(-1.0..1.0)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::random_params;
    use super::*;
    use crate::numerics::{eigenvalue_real_parts, spectral_abscissa};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn assemble_identity_case() {
        let r = 3;
        let p = StableLatentParams {
            k: DenseMatrix::zeros(r, r),
            r: DenseMatrix::identity(r, r),
            q: DenseMatrix::identity(r, r),
            s: Tensor3::zeros(r, r, r),
            b: DenseMatrix::zeros(r, 1),
        };
        let t = assemble(&p).unwrap();
        assert!((&t.a + DenseMatrix::identity(r, r)).norm() < 1e-14);
        assert!(t.h.norm() == 0.0);
        assert!((&t.qtilde - DenseMatrix::identity(r, r)).norm() < 1e-14);
    }

    #[test]
    fn assemble_single_s_entry_with_identity_q() {
        // S_{1,1,2} = 1 (1-based) with Q = I gives H_{1,1,2} = 1, H_{2,1,1} = -1.
        let r = 2;
        let mut s = Tensor3::zeros(r, r, r);
        s.set(0, 0, 1, 1.0);
        let p = StableLatentParams {
            k: DenseMatrix::zeros(r, r),
            r: DenseMatrix::zeros(r, r),
            q: DenseMatrix::identity(r, r),
            s,
            b: DenseMatrix::zeros(r, 1),
        };
        let t = assemble(&p).unwrap();
        assert_relative_eq!(t.h.get(0, 0, 1), 1.0, max_relative = 1e-15);
        assert_relative_eq!(t.h.get(1, 0, 0), -1.0, max_relative = 1e-15);
        let total: f64 = t.h.iter().map(|v| v.abs()).sum();
        assert_relative_eq!(total, 2.0, max_relative = 1e-15);
    }

    #[test]
    fn assemble_random_params_is_hurwitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..20 {
            let p = random_params(&mut rng, 5, 2);
            let t = assemble(&p).unwrap();
            let re = eigenvalue_real_parts(&t.a);
            assert!(re[0] < 0.0, "spectral abscissa {}", re[0]);
        }
    }

    #[test]
    fn assemble_rejects_singular_q() {
        let mut p = random_params(&mut ChaCha8Rng::seed_from_u64(31), 3, 1);
        p.q = DenseMatrix::zeros(3, 3);
        match assemble(&p) {
            Err(Error::Singular { cond, .. }) => assert!(!cond.is_finite() || cond > MAX_Q_COND),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn energy_preservation_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..50 {
            let p = random_params(&mut rng, 4, 1);
            let t = assemble(&p).unwrap();
            let scale = t.qtilde.norm() * t.h.norm();
            for _ in 0..20 {
                let z = Vector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
                let hzz = contract_quadratic(&t.h, &z).unwrap();
                let c_h = 2.0 * (&t.qtilde * &z).dot(&hzz);
                assert!(
                    c_h.abs() <= 1e-12 * scale * z.norm().powi(3),
                    "energy residual {c_h:.3e}"
                );
            }
        }
    }

    #[test]
    fn lyapunov_rate_origin_and_linear_case() {
        let r = 3;
        let p = StableLatentParams {
            k: DenseMatrix::zeros(r, r),
            r: DenseMatrix::identity(r, r),
            q: DenseMatrix::identity(r, r),
            s: Tensor3::zeros(r, r, r),
            b: DenseMatrix::zeros(r, 1),
        };
        let t = assemble(&p).unwrap();
        assert_eq!(lyapunov_rate(&t, &Vector::zeros(r)), 0.0);
        // A = -I, H = 0, Qt = I: rate is -2 ||z||^2.
        let z = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_relative_eq!(lyapunov_rate(&t, &z), -2.0 * z.norm_squared(), max_relative = 1e-13);
    }

    #[test]
    fn lyapunov_rate_nonpositive_on_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let p = random_params(&mut rng, 5, 1);
        let t = assemble(&p).unwrap();
        let scale = t.qtilde.norm() * (t.a.norm() + t.h.norm());
        for _ in 0..1000 {
            let z = Vector::from_fn(5, |_, _| rng.random_range(-2.0..2.0));
            let c = lyapunov_rate(&t, &z);
            assert!(c <= 1e-12 * scale * z.norm_squared().max(z.norm().powi(3)));
        }
    }

    #[test]
    fn pullback_zero_gradients() {
        let p = random_params(&mut ChaCha8Rng::seed_from_u64(34), 3, 2);
        let (gk, gr, gq, gs) =
            pullback_gradients(&p, &DenseMatrix::zeros(3, 3), &Tensor3::zeros(3, 3, 3)).unwrap();
        assert!(gk.norm() == 0.0 && gr.norm() == 0.0 && gq.norm() == 0.0 && gs.norm() == 0.0);
    }

    #[test]
    fn pullback_identity_specialization() {
        // Q = I, R = 0, S = 0, G_H = 0 => G_K = G_A - G_A^T.
        let r = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let p = StableLatentParams {
            k: DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0)),
            r: DenseMatrix::zeros(r, r),
            q: DenseMatrix::identity(r, r),
            s: Tensor3::zeros(r, r, r),
            b: DenseMatrix::zeros(r, 1),
        };
        let g_a = DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
        let (gk, _, _, _) = pullback_gradients(&p, &g_a, &Tensor3::zeros(r, r, r)).unwrap();
        assert!((gk - (&g_a - g_a.transpose())).norm() < 1e-14);
    }

    #[test]
    fn pullback_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let r = 3;
        let p = random_params(&mut rng, r, 2);
        let g_a = DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
        let g_h = Tensor3::from_fn(r, r, r, |_, _, _| rng.random_range(-1.0..1.0));
        let phi = |pp: &StableLatentParams| -> f64 {
            let t = assemble(pp).unwrap();
            g_a.dot(&t.a) + g_h.dot(&t.h)
        };
        let (gk, gr, gq, gs) = pullback_gradients(&p, &g_a, &g_h).unwrap();
        let eps = 1e-6;
        let check = |anl: f64, fd: f64| {
            assert!(
                (anl - fd).abs() <= 1e-6 * fd.abs().max(1e-3),
                "analytic {anl:.8e} vs fd {fd:.8e}"
            );
        };
        for i in 0..r {
            for j in 0..r {
                for which in 0..3 {
                    let mut pp = p.clone();
                    let mut pm = p.clone();
                    let (anl, tp, tm) = match which {
                        0 => (gk[(i, j)], &mut pp.k, &mut pm.k),
                        1 => (gr[(i, j)], &mut pp.r, &mut pm.r),
                        _ => (gq[(i, j)], &mut pp.q, &mut pm.q),
                    };
                    tp[(i, j)] += eps;
                    tm[(i, j)] -= eps;
                    check(anl, (phi(&pp) - phi(&pm)) / (2.0 * eps));
                }
                for k in 0..r {
                    let mut pp = p.clone();
                    let mut pm = p.clone();
                    pp.s.set(i, j, k, pp.s.get(i, j, k) + eps);
                    pm.s.set(i, j, k, pm.s.get(i, j, k) - eps);
                    check(gs.get(i, j, k), (phi(&pp) - phi(&pm)) / (2.0 * eps));
                }
            }
        }
    }

    #[test]
    fn pullback_directional_derivative_exactness() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let r = 3;
        let p = random_params(&mut rng, r, 1);
        let g_a = DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
        let g_h = Tensor3::from_fn(r, r, r, |_, _, _| rng.random_range(-1.0..1.0));
        let (gk, gr, gq, gs) = pullback_gradients(&p, &g_a, &g_h).unwrap();
        for _ in 0..5 {
            let dk = DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
            let dr = DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
            let dq = DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
            let ds = Tensor3::from_fn(r, r, r, |_, _, _| rng.random_range(-1.0..1.0));
            let phi = |eps: f64| -> f64 {
                let pp = StableLatentParams {
                    k: &p.k + &dk * eps,
                    r: &p.r + &dr * eps,
                    q: &p.q + &dq * eps,
                    s: {
                        let mut s = p.s.clone();
                        s.axpy(eps, &ds);
                        s
                    },
                    b: p.b.clone(),
                };
                let t = assemble(&pp).unwrap();
                g_a.dot(&t.a) + g_h.dot(&t.h)
            };
            let eps = 1e-6;
            let fd = (phi(eps) - phi(-eps)) / (2.0 * eps);
            let anl = gk.dot(&dk) + gr.dot(&dr) + gq.dot(&dq) + gs.dot(&ds);
            assert_relative_eq!(anl, fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn qtilde_stays_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        for _ in 0..50 {
            let p = random_params(&mut rng, 4, 1);
            let t = assemble(&p).unwrap();
            let eig = nalgebra::SymmetricEigen::new(t.qtilde.clone());
            assert!(eig.eigenvalues.iter().all(|l| *l > 0.0));
        }
    }

    #[test]
    fn lyapunov_solve_satisfies_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let a = DenseMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0))
            - DenseMatrix::identity(4, 4) * 3.0;
        let p = lyapunov_solve(&a, &DenseMatrix::identity(4, 4)).unwrap();
        let resid = a.transpose() * &p + &p * &a + DenseMatrix::identity(4, 4);
        assert!(resid.norm() < 1e-10);
        let eig = nalgebra::SymmetricEigen::new(p);
        assert!(eig.eigenvalues.iter().all(|l| *l > 0.0));
    }

    #[test]
    fn spectrum_projection_makes_hurwitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..10 {
            let a = DenseMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let proj = project_spectrum_stable(&a, 1e-8);
            assert!(spectral_abscissa(&proj) < 0.0);
        }
    }

    #[test]
    fn lyapunov_warm_start_reproduces_stable_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let r = 4;
        let a0 = DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0))
            - DenseMatrix::identity(r, r) * 3.0;
        assert!(spectral_abscissa(&a0) < 0.0);
        let h = Tensor3::zeros(r, r, r);
        let b = DenseMatrix::from_fn(r, 1, |_, _| rng.random_range(-1.0..1.0));
        let p = params_from_stable_matrix(&a0, &h, &b).unwrap();
        let t = assemble(&p).unwrap();
        assert!((&t.a - &a0).norm() <= 1e-8 * a0.norm());
    }

    #[test]
    fn q_identity_warm_start_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let r = 4;
        let a = DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
        let h = Tensor3::from_fn(r, r, r, |_, _, _| rng.random_range(-0.5..0.5));
        let b = DenseMatrix::from_fn(r, 1, |_, _| rng.random_range(-1.0..1.0));
        let p = params_q_identity(&a, &h, &b, 1e-8).unwrap();
        let t = assemble(&p).unwrap();
        assert!(spectral_abscissa(&t.a) < 0.0);
    }
}
