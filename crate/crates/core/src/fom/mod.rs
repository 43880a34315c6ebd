//! Quadratic full-order models, input signals, trajectory generation and the
//! snapshot-dataset builders for the non-intrusive path.

pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{qr_thin_positive, DenseMatrix, Tensor3, Vector};
use crate::ode::{self, GridTrajectory};
use crate::stability;
use crate::training::{SnapshotDataset, Trajectory, WeightConvention};

/// Full-order quadratic system `dx/dt = A_f x + H_f : x x^T + B_f u`,
/// `y = C x`, dense at desk scale.
#[derive(Debug, Clone)]
pub struct QuadraticFOM {
    pub a: DenseMatrix,
    pub h: Tensor3,
    pub b: DenseMatrix,
    pub c: DenseMatrix,
}

impl QuadraticFOM {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let ok = self.a.shape() == (n, n)
            && self.h.dims() == (n, n, n)
            && self.b.nrows() == n
            && self.c.ncols() == n;
        if !ok {
            return Err(Error::dim("QuadraticFOM", "inconsistent tensor shapes"));
        }
        if !(self.a.iter().all(|v| v.is_finite())
            && self.h.is_finite()
            && self.b.iter().all(|v| v.is_finite())
            && self.c.iter().all(|v| v.is_finite()))
        {
            return Err(Error::Numerical("QuadraticFOM has non-finite entries".into()));
        }
        Ok(())
    }

    /// Right-hand side `f(x, u)`, written into `out`.
    pub fn rhs(&self, x: &Vector, u: &Vector, out: &mut Vector) {
        out.gemv(1.0, &self.a, x, 0.0);
        let (d1, d2, d3) = self.h.dims();
        let data = self.h.as_slice();
        for q in 0..d3 {
            let xq = x[q];
            if xq == 0.0 {
                continue;
            }
            let base = q * d1 * d2;
            for p in 0..d2 {
                let w = xq * x[p];
                if w == 0.0 {
                    continue;
                }
                let col = &data[base + p * d1..base + (p + 1) * d1];
                for i in 0..d1 {
                    out[i] += w * col[i];
                }
            }
        }
        out.gemv(1.0, &self.b, u, 1.0);
    }

    pub fn rhs_vec(&self, x: &Vector, u: &Vector) -> Vector {
        let mut out = Vector::zeros(self.state_dim());
        self.rhs(x, u, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WaveKind {
    Sin,
    Cos,
}

/// One sinusoidal term `amplitude * sin/cos(frequency * t + phase)`.
#[derive(Debug, Clone)]
pub struct SinTerm {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub kind: WaveKind,
}

impl SinTerm {
    pub fn value(&self, t: f64) -> f64 {
        let arg = self.frequency * t + self.phase;
        match self.kind {
            WaveKind::Sin => self.amplitude * arg.sin(),
            WaveKind::Cos => self.amplitude * arg.cos(),
        }
    }
}

/// Evaluable input signal. Training uses steps and impulses (analytic),
/// testing uses sinusoids (analytic), ingested datasets fall back to sampled
/// values with linear interpolation.
#[derive(Debug, Clone)]
pub enum InputSignal {
    /// Heaviside step of the given amplitude, centered at t = 0.
    Step { amplitude: f64 },
    /// Zero input; the amplitude is applied as the initial condition
    /// `x0 = amplitude * B` column by the trajectory generators.
    Impulse { amplitude: f64 },
    Sinusoid { terms: Vec<SinTerm> },
    Sampled { times: Vec<f64>, values: DenseMatrix },
}

impl InputSignal {
    pub fn zero() -> Self {
        InputSignal::Step { amplitude: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if let InputSignal::Sampled { times, values } = self {
            if times.len() != values.ncols() {
                return Err(Error::dim("InputSignal::Sampled", "times vs value columns"));
            }
            for w in times.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(Error::Config(
                        "sampled signal times must be strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Evaluate at time `t` into a vector of input dimension `out.len()`.
    /// Scalar signal kinds drive every channel identically.
    pub fn evaluate(&self, t: f64, out: &mut Vector) {
        match self {
            InputSignal::Step { amplitude } => {
                let v = if t >= 0.0 { *amplitude } else { 0.0 };
                out.fill(v);
            }
            InputSignal::Impulse { .. } => out.fill(0.0),
            InputSignal::Sinusoid { terms } => {
                let v: f64 = terms.iter().map(|s| s.value(t)).sum();
                out.fill(v);
            }
            InputSignal::Sampled { times, values } => {
                let m = out.len().min(values.nrows());
                let k = times.len();
                if t <= times[0] {
                    for i in 0..m {
                        out[i] = values[(i, 0)];
                    }
                    return;
                }
                if t >= times[k - 1] {
                    for i in 0..m {
                        out[i] = values[(i, k - 1)];
                    }
                    return;
                }
                let idx = times.partition_point(|tt| *tt <= t).min(k - 1);
                let (t0, t1) = (times[idx - 1], times[idx]);
                let w = (t - t0) / (t1 - t0);
                for i in 0..m {
                    out[i] = values[(i, idx - 1)] * (1.0 - w) + values[(i, idx)] * w;
                }
            }
        }
    }
}

/// Three-state toy system with coupling `nu`:
/// `dx1 = -x1 + nu x1 x3 + u`, `dx2 = -2 x2 + nu x2 x3 + u`,
/// `dx3 = -5 x3 + u`, `y = x1 + x2 + x3`. Quadratic coefficients use the
/// symmetric-slice split.
pub fn toy_model(nu: f64) -> QuadraticFOM {
    let a = DenseMatrix::from_diagonal(&Vector::from_vec(vec![-1.0, -2.0, -5.0]));
    let mut h = Tensor3::zeros(3, 3, 3);
    h.set(0, 0, 2, 0.5 * nu);
    h.set(0, 2, 0, 0.5 * nu);
    h.set(1, 1, 2, 0.5 * nu);
    h.set(1, 2, 1, 0.5 * nu);
    let b = DenseMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
    let c = DenseMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
    QuadraticFOM { a, h, b, c }
}

/// Closed-form fixed point of the toy system under a step of amplitude
/// `gamma`; `None` when a denominator crosses zero (the gamma < 1/4
/// restriction at nu = 20).
pub fn toy_step_steady_state(nu: f64, gamma: f64) -> Option<Vector> {
    let x3 = gamma / 5.0;
    let d1 = 1.0 - nu * x3;
    let d2 = 2.0 - nu * x3;
    if d1 <= 0.0 || d2 <= 0.0 {
        return None;
    }
    Some(Vector::from_vec(vec![gamma / d1, gamma / d2, x3]))
}

/// Simulated full-order trajectory at the sample times.
#[derive(Debug, Clone)]
pub struct FomTrajectory {
    pub times: Vec<f64>,
    /// n x N states.
    pub states: DenseMatrix,
    /// m x N inputs.
    pub inputs: DenseMatrix,
    /// p x N outputs.
    pub outputs: DenseMatrix,
    /// n x N exact right-hand sides `f(x(t_i), u(t_i))`.
    pub derivs: DenseMatrix,
}

/// Integrate the full-order model with RK4 and sample it, also returning the
/// exact derivatives for the Operator-Inference exact-derivative path.
pub fn simulate_fom(
    fom: &QuadraticFOM,
    x0: &Vector,
    u: &InputSignal,
    times: &[f64],
    substeps: usize,
) -> Result<FomTrajectory> {
    fom.validate()?;
    u.validate()?;
    if x0.len() != fom.state_dim() {
        return Err(Error::dim("simulate_fom", "initial state dimension"));
    }
    let m = fom.input_dim();
    let mut u_buf = Vector::zeros(m);
    let grid: GridTrajectory = ode::rk4_sweep(
        |t, x, out| {
            u.evaluate(t, &mut u_buf);
            fom.rhs(x, &u_buf, out);
        },
        x0,
        times,
        substeps,
        ode::DEFAULT_BLOWUP_NORM,
    )?;
    let n = fom.state_dim();
    let p = fom.output_dim();
    let num = times.len();
    let mut states = DenseMatrix::zeros(n, num);
    let mut inputs = DenseMatrix::zeros(m, num);
    let mut outputs = DenseMatrix::zeros(p, num);
    let mut derivs = DenseMatrix::zeros(n, num);
    for i in 0..num {
        let x = grid.sample_state(i);
        let mut ui = Vector::zeros(m);
        u.evaluate(times[i], &mut ui);
        states.set_column(i, x);
        inputs.set_column(i, &ui);
        outputs.set_column(i, &(&fom.c * x));
        derivs.set_column(i, &fom.rhs_vec(x, &ui));
    }
    Ok(FomTrajectory {
        times: times.to_vec(),
        states,
        inputs,
        outputs,
        derivs,
    })
}

/// Excitation protocol of a training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    /// Step responses from the unforced equilibrium (the origin).
    Step,
    /// Unforced responses from `x0 = amplitude * B` (first input column).
    Impulse,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Run the FOM to (near) steady state, continuing past `t_end` in chunks.
fn steady_state(fom: &QuadraticFOM, start: &Vector, u: &InputSignal, t_end: f64, substeps: usize) -> Result<Vector> {
    let mut x = start.clone();
    let chunk = t_end.max(50.0);
    let mut u_buf = Vector::zeros(fom.input_dim());
    let mut t = t_end;
    for _ in 0..200 {
        u.evaluate(t, &mut u_buf);
        let f = fom.rhs_vec(&x, &u_buf);
        if f.norm() <= 1e-10 * x.norm().max(1.0) {
            break;
        }
        let times = [t, t + chunk];
        let traj = simulate_fom(fom, &x, u, &times, (chunk / 0.01).ceil() as usize * substeps.max(1))?;
        x = traj.states.column(1).into_owned();
        t += chunk;
    }
    Ok(x)
}

/// Build a weighted training set from step or impulse responses on a uniform
/// grid of `n_samples` points over `[0, t_end]`.
pub fn make_training_set(
    fom: &QuadraticFOM,
    protocol: Protocol,
    amplitudes: &[f64],
    n_samples: usize,
    t_end: f64,
    convention: WeightConvention,
    substeps: usize,
) -> Result<SnapshotDataset> {
    if amplitudes.is_empty() {
        return Err(Error::Config("amplitude list must be non-empty".into()));
    }
    if n_samples < 2 {
        return Err(Error::Config("need at least two samples".into()));
    }
    let times = linspace(0.0, t_end, n_samples);
    let n_traj = amplitudes.len();
    // Parallel over amplitudes; the ordered collect keeps output
    // byte-identical for any thread count.
    let trajectories: crate::error::Result<Vec<Trajectory>> = amplitudes
        .par_iter()
        .map(|&amp| {
            let (x0, signal) = match protocol {
                Protocol::Step => (Vector::zeros(fom.state_dim()), InputSignal::Step { amplitude: amp }),
                Protocol::Impulse => (
                    Vector::from(fom.b.column(0)) * amp,
                    InputSignal::Impulse { amplitude: amp },
                ),
            };
            let traj = simulate_fom(fom, &x0, &signal, &times, substeps)?;
            let weight = match convention {
                WeightConvention::Unit => 1.0,
                WeightConvention::TimeAveragedEnergy => {
                    let e_avg = traj.outputs.iter().map(|v| v * v).sum::<f64>() / n_samples as f64;
                    if e_avg < 1e-14 {
                        1.0
                    } else {
                        e_avg
                    }
                }
                WeightConvention::SteadyStateOutput => {
                    let x_bar =
                        steady_state(fom, &traj.states.column(n_samples - 1).into_owned(), &signal, t_end, 1)?;
                    let y_bar = &fom.c * &x_bar;
                    let norm2 = y_bar.norm_squared();
                    if norm2 < 1e-14 {
                        1.0
                    } else {
                        n_traj as f64 * n_samples as f64 * norm2
                    }
                }
            };
            Ok(Trajectory {
                states: traj.states,
                inputs: traj.inputs,
                outputs: traj.outputs,
                weight,
                signal,
            })
        })
        .collect();
    SnapshotDataset::new(times, trajectories?, convention)
}

/// A synthetic stable non-normal FOM together with the Lyapunov certificate
/// of its construction (needed to verify energy preservation of `H_f`).
#[derive(Debug, Clone)]
pub struct SyntheticNonnormal {
    pub fom: QuadraticFOM,
    /// SPD matrix `P` with `A_f^T P + P A_f = -I` and
    /// `x^T P (H_f : x x^T) = 0` for all `x`.
    pub lyapunov_weight: DenseMatrix,
}

/// Desk-scale stand-in for a strongly non-normal flow problem: a Hurwitz
/// `A_f` whose matrix exponential transiently exceeds 10 in norm, plus an
/// energy-preserving quadratic tensor, so the unforced system is globally
/// stable while orthogonal-projection ROMs miss the growth mechanism.
pub fn synthetic_nonnormal_fom(n: usize, seed: u64) -> SyntheticNonnormal {
    assert!(n >= 2, "synthetic FOM needs n >= 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Block-diagonal core: one non-normal 2x2 block whose matrix
    // exponential peaks near coupling/4 (~15 at t ~ 2.3), the rest a
    // spread of slow decay rates so trajectories stay alive over the
    // training horizons used at this scale.
    let coupling = 60.0;
    let mut a0 = DenseMatrix::zeros(n, n);
    a0[(0, 0)] = -0.3;
    a0[(0, 1)] = coupling;
    a0[(1, 1)] = -0.6;
    for i in 2..n {
        a0[(i, i)] = -rng.random_range(0.1..0.8);
    }
    // Closed-form Lyapunov certificate, block by block.
    let mut p0 = DenseMatrix::zeros(n, n);
    let block = a0.view((0, 0), (2, 2)).into_owned();
    let p_block = stability::lyapunov_solve(&block, &DenseMatrix::identity(2, 2))
        .expect("2x2 Lyapunov solve");
    p0.view_mut((0, 0), (2, 2)).copy_from(&p_block);
    for i in 2..n {
        p0[(i, i)] = -0.5 / a0[(i, i)];
    }

    // The forcing direction leans on the second block coordinate, which
    // feeds the growth mechanism; impulses then show cavity-like energy
    // amplification before decaying.
    let mut b0 = DenseMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
    let b0_norm = b0.norm();
    b0 *= 0.4 / b0_norm;
    b0[(1, 0)] += 0.6;
    let b0_norm = b0.norm();
    b0 /= b0_norm;

    // Hide the structure behind a random orthogonal change of basis.
    let (v, _) = qr_thin_positive(&DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)));
    let a_f = v.transpose() * &a0 * &v;
    let p = v.transpose() * &p0 * &v;
    let b = v.transpose() * b0;

    // Energy-preserving quadratic tensor w.r.t. P: lateral slices are
    // skew factors times P. Sparse random skew seeds keep assembly cheap.
    let mut h = Tensor3::zeros(n, n, n);
    let nnz_per_slice = (n / 2).max(2);
    for j in 0..n {
        let mut skew = DenseMatrix::zeros(n, n);
        for _ in 0..nnz_per_slice {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b {
                let val = rng.random_range(-1.0..1.0);
                skew[(a, b)] += val;
                skew[(b, a)] -= val;
            }
        }
        h.set_lateral_slice(j, &(skew * &p));
    }
    let scale = 0.05 * a_f.norm() / h.norm().max(1e-300);
    h.scale_mut(scale);

    let c = DenseMatrix::identity(n, n);
    SyntheticNonnormal {
        fom: QuadraticFOM { a: a_f, h, b, c },
        lyapunov_weight: p,
    }
}
