//! Trajectory-fitting objective, its closed-form adjoint gradient, and the
//! Riemannian optimizers with coordinate-descent and progressive-horizon
//! scheduling.

mod optimizer;

pub use optimizer::{
    optimize, train_nitrom_with_penalty, CoordinateBlock, HistoryRecord, OptimizerKind,
    PenaltyConfig, TrainConfig,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fom::InputSignal;
use crate::numerics::{contract_jacobian, matrix_exp_frechet, DenseMatrix, Tensor3, Vector};
use crate::ode::hermite_midpoint;
use crate::rom::{LatentDynamics, RomModel};
use crate::stability;

/// Convention fixing the per-trajectory weights `alpha_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightConvention {
    /// `alpha_j = N_traj * N * ||C x_bar||^2` (step-response protocol).
    SteadyStateOutput,
    /// `alpha_j = (1/N) sum_i ||y(t_i)||^2` (impulse protocol).
    TimeAveragedEnergy,
    /// `alpha_j = 1`, which recovers the unweighted objective.
    Unit,
}

impl WeightConvention {
    pub fn as_str(&self) -> &'static str {
        match self {
            WeightConvention::SteadyStateOutput => "steady-state-output",
            WeightConvention::TimeAveragedEnergy => "time-averaged-energy",
            WeightConvention::Unit => "unit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "steady-state-output" => Ok(WeightConvention::SteadyStateOutput),
            "time-averaged-energy" => Ok(WeightConvention::TimeAveragedEnergy),
            "unit" => Ok(WeightConvention::Unit),
            other => Err(Error::Config(format!("unknown weight convention '{other}'"))),
        }
    }
}

/// One sampled trajectory: states, inputs and outputs on the shared grid,
/// its positive weight, and the input signal for re-simulation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// n x N.
    pub states: DenseMatrix,
    /// m x N.
    pub inputs: DenseMatrix,
    /// p x N.
    pub outputs: DenseMatrix,
    pub weight: f64,
    pub signal: InputSignal,
}

impl Trajectory {
    pub fn initial_state(&self) -> Vector {
        self.states.column(0).into_owned()
    }
}

/// Weighted collection of trajectories sampled on one uniform grid.
#[derive(Debug, Clone)]
pub struct SnapshotDataset {
    times: Vec<f64>,
    trajectories: Vec<Trajectory>,
    convention: WeightConvention,
}

impl SnapshotDataset {
    pub fn new(
        times: Vec<f64>,
        trajectories: Vec<Trajectory>,
        convention: WeightConvention,
    ) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Schema {
                path: "<dataset>".into(),
                message: "no trajectories".into(),
            });
        }
        crate::ode::validate_sample_times(&times)?;
        // Uniform grid: progressive horizons and finite-difference
        // derivatives rely on equal spacing.
        let dt = times[1] - times[0];
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs() {
                return Err(Error::Config("sample grid must be uniform".into()));
            }
        }
        let n = trajectories[0].states.nrows();
        let m = trajectories[0].inputs.nrows();
        let p = trajectories[0].outputs.nrows();
        let num = times.len();
        for (j, t) in trajectories.iter().enumerate() {
            if t.states.shape() != (n, num) || t.inputs.shape() != (m, num) || t.outputs.shape() != (p, num) {
                return Err(Error::dim("SnapshotDataset", format!("trajectory {j} shapes")));
            }
            if !(t.weight > 0.0) {
                return Err(Error::Config(format!("trajectory {j} weight must be positive")));
            }
            if !t.states.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical(format!("trajectory {j} has non-finite states")));
            }
        }
        Ok(SnapshotDataset {
            times,
            trajectories,
            convention,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn convention(&self) -> WeightConvention {
        self.convention
    }

    pub fn num_samples(&self) -> usize {
        self.times.len()
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories[0].states.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.trajectories[0].inputs.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.trajectories[0].outputs.nrows()
    }

    /// Restriction to sample times `t <= t_max` (weights unchanged, so the
    /// objective stays comparable across horizons).
    pub fn truncated(&self, t_max: f64) -> Result<SnapshotDataset> {
        let dt = self.times[1] - self.times[0];
        let keep = self.times.iter().take_while(|t| **t <= t_max + 1e-9 * dt).count();
        if keep < 2 {
            return Err(Error::Config(format!("horizon {t_max} keeps fewer than two samples")));
        }
        if keep == self.times.len() {
            return Ok(self.clone());
        }
        let times = self.times[..keep].to_vec();
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| Trajectory {
                states: t.states.columns(0, keep).into_owned(),
                inputs: t.inputs.columns(0, keep).into_owned(),
                outputs: t.outputs.columns(0, keep).into_owned(),
                weight: t.weight,
                signal: t.signal.clone(),
            })
            .collect();
        SnapshotDataset::new(times, trajectories, self.convention)
    }
}

/// Simulation options shared by the loss and gradient paths.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Integrator substeps per sample interval.
    pub substeps: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { substeps: 10 }
    }
}

/// Ambient gradient of the weighted forecasting loss. The Grassmann
/// component carries the ambient-metric factor `(Phi^T Phi)` on the right;
/// the Stiefel component is the plain Euclidean gradient (its tangent
/// projection is applied later).
#[derive(Debug, Clone)]
pub struct AmbientGradient {
    pub g_phi: DenseMatrix,
    pub g_psi: DenseMatrix,
    pub g_dynamics: DynamicsGradient,
    pub g_b: DenseMatrix,
}

#[derive(Debug, Clone)]
pub enum DynamicsGradient {
    Stable {
        g_k: DenseMatrix,
        g_r: DenseMatrix,
        g_q: DenseMatrix,
        g_s: Tensor3,
    },
    Raw {
        g_a: DenseMatrix,
        g_h: Tensor3,
    },
}

/// Weighted forecasting loss
/// `J = sum_j (1/alpha_j) sum_i ||y_j(t_i) - yhat_j(t_i)||^2`.
/// Blow-up during simulation (possible only for raw dynamics) propagates as
/// an infinite loss rather than an error.
pub fn loss(model: &RomModel, data: &SnapshotDataset, opts: &SimOptions) -> Result<f64> {
    check_model_data(model, data)?;
    let per: Result<Vec<f64>> = data
        .trajectories()
        .par_iter()
        .map(|traj| match trajectory_loss(model, data.times(), traj, opts) {
            Ok(v) => Ok(v),
            Err(Error::BlowUp { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        })
        .collect();
    Ok(per?.iter().sum())
}

fn check_model_data(model: &RomModel, data: &SnapshotDataset) -> Result<()> {
    if model.full_dim() != data.state_dim()
        || model.input_dim() != data.input_dim()
        || model.output_dim() != data.output_dim()
    {
        return Err(Error::dim("loss", "model/dataset dimensions"));
    }
    Ok(())
}

fn trajectory_loss(model: &RomModel, times: &[f64], traj: &Trajectory, opts: &SimOptions) -> Result<f64> {
    let sim = model.simulate(&traj.initial_state(), &traj.signal, times, opts.substeps)?;
    let mut acc = 0.0;
    for i in 0..times.len() {
        let e = traj.outputs.column(i) - &sim.outputs[i];
        acc += e.norm_squared();
    }
    Ok(acc / traj.weight)
}

struct TrajectoryGrads {
    loss: f64,
    g_phi_pre: DenseMatrix,
    g_psi: DenseMatrix,
    g_a: DenseMatrix,
    g_h: Tensor3,
    g_b: DenseMatrix,
}

/// Loss together with the full ambient gradient, computed by one forward
/// sweep per trajectory plus one backward sweep that integrates a single
/// jump-injected adjoint (equal, by linearity, to the sum of the per-sample
/// adjoints). Time integrals use trapezoidal quadrature on the integrator
/// grid.
pub fn gradient(model: &RomModel, data: &SnapshotDataset, opts: &SimOptions) -> Result<(f64, AmbientGradient)> {
    check_model_data(model, data)?;
    let per: Result<Vec<TrajectoryGrads>> = data
        .trajectories()
        .par_iter()
        .map(|traj| trajectory_gradient(model, data.times(), traj, opts))
        .collect();
    let per = per?;

    let n = model.full_dim();
    let r = model.latent_dim();
    let m_in = model.input_dim();
    let mut total_loss = 0.0;
    let mut g_phi_pre = DenseMatrix::zeros(n, r);
    let mut g_psi = DenseMatrix::zeros(n, r);
    let mut g_a = DenseMatrix::zeros(r, r);
    let mut g_h = Tensor3::zeros(r, r, r);
    let mut g_b = DenseMatrix::zeros(r, m_in);
    // Ordered reduction keeps results byte-identical across thread counts.
    for t in per {
        total_loss += t.loss;
        g_phi_pre += t.g_phi_pre;
        g_psi += t.g_psi;
        g_a += t.g_a;
        g_h.axpy(1.0, &t.g_h);
        g_b += t.g_b;
    }

    let phi = model.projection.phi();
    let g_phi = &g_phi_pre * (phi.transpose() * phi);

    let g_dynamics = match &model.dynamics {
        LatentDynamics::Stable(p) => {
            let (g_k, g_r, g_q, g_s) = stability::pullback_gradients(p, &g_a, &g_h)?;
            DynamicsGradient::Stable { g_k, g_r, g_q, g_s }
        }
        LatentDynamics::Raw { .. } => DynamicsGradient::Raw { g_a, g_h },
    };
    Ok((
        total_loss,
        AmbientGradient {
            g_phi,
            g_psi,
            g_dynamics,
            g_b,
        },
    ))
}

fn trajectory_gradient(
    model: &RomModel,
    times: &[f64],
    traj: &Trajectory,
    opts: &SimOptions,
) -> Result<TrajectoryGrads> {
    let n = model.full_dim();
    let r = model.latent_dim();
    let m_in = model.input_dim();
    let num = times.len();
    let pair = &model.projection;
    let phi = pair.phi();
    let psi = pair.psi();
    let a = &model.compiled().a;
    let h = &model.compiled().h;

    let x0 = traj.initial_state();
    let sim = model.simulate(&x0, &traj.signal, times, opts.substeps)?;

    let mut loss = 0.0;
    let mut g_phi_pre = DenseMatrix::zeros(n, r);
    let mut g_psi = DenseMatrix::zeros(n, r);
    let mut jumps: Vec<Vector> = Vec::with_capacity(num);
    let w = 2.0 / traj.weight;
    for i in 0..num {
        let z_i = &sim.sample_latent[i];
        let d_i = pair.cross_solve(z_i)?; // (Psi^T Phi)^-1 z
        let dz_i = phi * &d_i; // decoded state
        let e_i = traj.outputs.column(i) - model.output.apply(&dz_i);
        loss += e_i.norm_squared() / traj.weight;
        let v = model.output.apply_transpose(&e_i); // C^T e
        let s_i = pair.cross_t_solve(&(phi.transpose() * &v))?; // (Phi^T Psi)^-1 Phi^T C^T e
        // Grassmann direct term: -w (I - Psi (Phi^T Psi)^-1 Phi^T) C^T e z^T (Phi^T Psi)^-1
        let v2 = &v - psi * &s_i;
        g_phi_pre.ger(-w, &v2, &d_i, 1.0);
        // Stiefel direct term: +w (D z)(e^T C D)
        g_psi.ger(w, &dz_i, &s_i, 1.0);
        jumps.push(s_i * w);
    }

    // Backward adjoint sweep with jump injections at the sample nodes.
    let grid = &sim.grid;
    let mut lambda = Vector::zeros(r);
    let mut g_a = DenseMatrix::zeros(r, r);
    let mut g_h = Tensor3::zeros(r, r, r);
    let mut g_b = DenseMatrix::zeros(r, m_in);
    let mut u_buf = Vector::zeros(m_in);
    let substeps = grid.substeps;

    let accumulate = |coef: f64, lam: &Vector, z: &Vector, t: f64, u_buf: &mut Vector, g_a: &mut DenseMatrix, g_h: &mut Tensor3, g_b: &mut DenseMatrix| {
        // grad_A -= int lambda z^T, grad_H -= int lambda (x) z (x) z,
        // grad_B -= int lambda u^T (trapezoid weights arrive in `coef`).
        g_a.ger(-coef, lam, z, 1.0);
        traj.signal.evaluate(t, u_buf);
        g_b.ger(-coef, lam, u_buf, 1.0);
        let buf = g_h.as_mut_slice();
        for q in 0..r {
            let zq = z[q];
            if zq == 0.0 {
                continue;
            }
            for p in 0..r {
                let wpq = coef * zq * z[p];
                if wpq == 0.0 {
                    continue;
                }
                let base = (p + r * q) * r;
                for i in 0..r {
                    buf[base + i] -= wpq * lam[i];
                }
            }
        }
    };

    for i in (1..num).rev() {
        lambda += &jumps[i];
        let hi = i * substeps;
        let lo = (i - 1) * substeps;
        for k in (lo..hi).rev() {
            let (za, fa) = (&grid.states[k], &grid.derivs[k]);
            let (zb, fb) = (&grid.states[k + 1], &grid.derivs[k + 1]);
            let dt = grid.times[k + 1] - grid.times[k];
            accumulate(0.5 * dt, &lambda, zb, grid.times[k + 1], &mut u_buf, &mut g_a, &mut g_h, &mut g_b);

            let zmid = hermite_midpoint(za, fa, zb, fb, dt);
            let jac_b = a + contract_jacobian(h, zb)?;
            let jac_m = a + contract_jacobian(h, &zmid)?;
            let jac_a = a + contract_jacobian(h, za)?;
            // Backward RK4 on -dlambda/dt = J(z)^T lambda.
            let k1 = jac_b.transpose() * &lambda;
            let k2 = jac_m.transpose() * (&lambda + &k1 * (0.5 * dt));
            let k3 = jac_m.transpose() * (&lambda + &k2 * (0.5 * dt));
            let k4 = jac_a.transpose() * (&lambda + &k3 * dt);
            lambda += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

            accumulate(0.5 * dt, &lambda, za, grid.times[k], &mut u_buf, &mut g_a, &mut g_h, &mut g_b);
        }
    }
    lambda += &jumps[0];
    // Initial-condition term of the encoder gradient: -x(t0) lambda^T.
    g_psi.ger(-1.0, &x0, &lambda, 1.0);

    Ok(TrajectoryGrads {
        loss,
        g_phi_pre,
        g_psi,
        g_a,
        g_h,
        g_b,
    })
}

/// NiTROM stability penalty `weight * ||exp(A t_f)||_F^2` with its gradient,
/// computed by scaling-and-squaring with a Frechet derivative.
pub fn stability_penalty(a: &DenseMatrix, t_f: f64, weight: f64) -> Result<(f64, DenseMatrix)> {
    if !(t_f > 0.0) {
        return Err(Error::Config("stability penalty horizon t_f must be positive".into()));
    }
    let e = crate::numerics::matrix_exp(&(a * t_f));
    if !e.iter().all(|v| v.is_finite()) {
        return Err(Error::ExpOverflow {
            abscissa: crate::numerics::spectral_abscissa(a),
            t_f,
        });
    }
    let value = weight * e.norm_squared();
    // d||exp(A t_f)||^2 / dA = 2 t_f * Lexp(A^T t_f)[exp(A t_f)].
    let (_, frechet) = matrix_exp_frechet(&(a.transpose() * t_f), &e);
    if !frechet.iter().all(|v| v.is_finite()) {
        return Err(Error::ExpOverflow {
            abscissa: crate::numerics::spectral_abscissa(a),
            t_f,
        });
    }
    Ok((value, frechet * (2.0 * weight * t_f)))
}
