//! The reduced-order model: oblique projection, quadratic latent dynamics,
//! time integration and output prediction.

use crate::error::{Error, Result};
use crate::fom::InputSignal;
use crate::numerics::{contract_quadratic, cond_2, DenseMatrix, LuFactor, Tensor3, Vector};
use crate::ode::{self, GridTrajectory};
use crate::stability::{self, StableLatentParams};

/// Decoder/encoder frame pair defining the oblique projection
/// `P = Phi (Psi^T Phi)^-1 Psi^T`. The cross-Gramian factorizations are
/// cached here; they are reused thousands of times per optimization step.
pub struct ProjectionPair {
    phi: DenseMatrix,
    psi: DenseMatrix,
    cross_lu: LuFactor,   // Psi^T Phi
    cross_t_lu: LuFactor, // Phi^T Psi
    cross_cond: f64,
}

impl Clone for ProjectionPair {
    fn clone(&self) -> Self {
        ProjectionPair::new(self.phi.clone(), self.psi.clone()).expect("was valid")
    }
}

impl std::fmt::Debug for ProjectionPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProjectionPair")
            .field("n", &self.phi.nrows())
            .field("r", &self.phi.ncols())
            .field("cross_cond", &self.cross_cond)
            .finish()
    }
}

impl ProjectionPair {
    pub fn new(phi: DenseMatrix, psi: DenseMatrix) -> Result<Self> {
        if phi.shape() != psi.shape() {
            return Err(Error::dim("ProjectionPair::new", "Phi and Psi shapes differ"));
        }
        let cross = psi.transpose() * &phi;
        let cross_cond = cond_2(&cross);
        if !(cross_cond <= 1e12) {
            return Err(Error::Singular {
                op: "ProjectionPair::new (Psi^T Phi)",
                cond: cross_cond,
            });
        }
        let cross_lu = LuFactor::new(&cross)?;
        let cross_t_lu = LuFactor::new(&cross.transpose())?;
        Ok(ProjectionPair {
            phi,
            psi,
            cross_lu,
            cross_t_lu,
            cross_cond,
        })
    }

    pub fn phi(&self) -> &DenseMatrix {
        &self.phi
    }

    pub fn psi(&self) -> &DenseMatrix {
        &self.psi
    }

    pub fn full_dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn cross_cond(&self) -> f64 {
        self.cross_cond
    }

    /// `(Psi^T Phi)^-1 v`
    pub fn cross_solve(&self, v: &Vector) -> Result<Vector> {
        self.cross_lu.solve_vec(v)
    }

    /// `(Phi^T Psi)^-1 v`
    pub fn cross_t_solve(&self, v: &Vector) -> Result<Vector> {
        self.cross_t_lu.solve_vec(v)
    }

    /// Encoder `Psi^T x`.
    pub fn encode(&self, x: &Vector) -> Vector {
        self.psi.transpose() * x
    }

    /// Decoder `Phi (Psi^T Phi)^-1 z`, via a cached solve.
    pub fn decode(&self, z: &Vector) -> Result<Vector> {
        Ok(&self.phi * self.cross_solve(z)?)
    }
}

/// Latent dynamics: either a guaranteed-stable parameterization or raw
/// tensors (NiTROM / Operator Inference / POD-Galerkin baselines).
#[derive(Debug, Clone)]
pub enum LatentDynamics {
    Stable(StableLatentParams),
    Raw {
        a: DenseMatrix,
        h: Tensor3,
        b: DenseMatrix,
    },
}

/// Output map of the model: identity observes the full reconstructed state.
#[derive(Debug, Clone)]
pub enum OutputMap {
    Identity,
    Linear(DenseMatrix),
}

impl OutputMap {
    pub fn output_dim(&self, n: usize) -> usize {
        match self {
            OutputMap::Identity => n,
            OutputMap::Linear(c) => c.nrows(),
        }
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        match self {
            OutputMap::Identity => x.clone(),
            OutputMap::Linear(c) => c * x,
        }
    }

    /// `C^T e`
    pub fn apply_transpose(&self, e: &Vector) -> Vector {
        match self {
            OutputMap::Identity => e.clone(),
            OutputMap::Linear(c) => c.transpose() * e,
        }
    }
}

/// Assembled tensors ready for simulation (identical for both dynamics
/// variants once built).
#[derive(Debug, Clone)]
pub struct CompiledDynamics {
    pub a: DenseMatrix,
    pub h: Tensor3,
    pub b: DenseMatrix,
    /// Lyapunov weight of the stable parameterization, when present.
    pub qtilde: Option<DenseMatrix>,
}

/// A simulatable, differentiable reduced-order model.
#[derive(Debug, Clone)]
pub struct RomModel {
    pub projection: ProjectionPair,
    pub dynamics: LatentDynamics,
    pub output: OutputMap,
    compiled: CompiledDynamics,
}

/// Latent trajectory plus outputs at the sample times.
#[derive(Debug, Clone)]
pub struct RomSimulation {
    /// Full integrator grid of the latent state (kept for adjoint sweeps).
    pub grid: GridTrajectory,
    /// Latent state at the sample times.
    pub sample_latent: Vec<Vector>,
    /// Predicted outputs at the sample times.
    pub outputs: Vec<Vector>,
}

impl RomModel {
    /// Build a model; stable parameterizations are assembled once here and
    /// cached for the lifetime of the (immutable) model.
    pub fn new(projection: ProjectionPair, dynamics: LatentDynamics, output: OutputMap) -> Result<Self> {
        let r = projection.latent_dim();
        let compiled = match &dynamics {
            LatentDynamics::Stable(p) => {
                let t = stability::assemble(p)?;
                CompiledDynamics {
                    a: t.a,
                    h: t.h,
                    b: p.b.clone(),
                    qtilde: Some(t.qtilde),
                }
            }
            LatentDynamics::Raw { a, h, b } => CompiledDynamics {
                a: a.clone(),
                h: h.clone(),
                b: b.clone(),
                qtilde: None,
            },
        };
        if compiled.a.shape() != (r, r) || compiled.h.dims() != (r, r, r) || compiled.b.nrows() != r {
            return Err(Error::dim("RomModel::new", "latent tensor shapes"));
        }
        if let OutputMap::Linear(c) = &output {
            if c.ncols() != projection.full_dim() {
                return Err(Error::dim("RomModel::new", "output map column count"));
            }
        }
        Ok(RomModel {
            projection,
            dynamics,
            output,
            compiled,
        })
    }

    pub fn full_dim(&self) -> usize {
        self.projection.full_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.projection.latent_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.compiled.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim(self.full_dim())
    }

    pub fn compiled(&self) -> &CompiledDynamics {
        &self.compiled
    }

    pub fn encode(&self, x: &Vector) -> Vector {
        self.projection.encode(x)
    }

    pub fn decode(&self, z: &Vector) -> Result<Vector> {
        self.projection.decode(z)
    }

    /// Latent right-hand side `f_r(z, u) = A z + H : z z^T + B u`.
    pub fn latent_rhs(&self, z: &Vector, u: &Vector) -> Result<Vector> {
        let mut f = &self.compiled.a * z;
        f += contract_quadratic(&self.compiled.h, z)?;
        if u.len() != self.input_dim() {
            return Err(Error::dim("latent_rhs", "input dimension"));
        }
        f.gemv(1.0, &self.compiled.b, u, 1.0);
        Ok(f)
    }

    /// Predicted output for a latent state.
    pub fn predict_output(&self, z: &Vector) -> Result<Vector> {
        Ok(self.output.apply(&self.decode(z)?))
    }

    /// Integrate from a full-order initial condition (`z(0) = Psi^T x0`).
    pub fn simulate(
        &self,
        x0: &Vector,
        u: &InputSignal,
        times: &[f64],
        substeps: usize,
    ) -> Result<RomSimulation> {
        self.simulate_latent(&self.encode(x0), u, times, substeps)
    }

    /// Integrate from a latent initial condition.
    pub fn simulate_latent(
        &self,
        z0: &Vector,
        u: &InputSignal,
        times: &[f64],
        substeps: usize,
    ) -> Result<RomSimulation> {
        let m = self.input_dim();
        let mut u_buf = Vector::zeros(m);
        let a = &self.compiled.a;
        let h = &self.compiled.h;
        let b = &self.compiled.b;
        let grid = ode::rk4_sweep(
            |t, z, out| {
                out.gemv(1.0, a, z, 0.0);
                // Quadratic term, in place.
                let (d1, d2, d3) = h.dims();
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
                u.evaluate(t, &mut u_buf);
                out.gemv(1.0, b, &u_buf, 1.0);
            },
            z0,
            times,
            substeps,
            ode::DEFAULT_BLOWUP_NORM,
        )?;
        let mut sample_latent = Vec::with_capacity(times.len());
        let mut outputs = Vec::with_capacity(times.len());
        for i in 0..times.len() {
            let z = grid.sample_state(i).clone();
            outputs.push(self.predict_output(&z)?);
            sample_latent.push(z);
        }
        Ok(RomSimulation {
            grid,
            sample_latent,
            outputs,
        })
    }

    /// Rebuild with new frames/dynamics, keeping the output map.
    pub fn with_parts(&self, projection: ProjectionPair, dynamics: LatentDynamics) -> Result<RomModel> {
        RomModel::new(projection, dynamics, self.output.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::qr_thin_positive;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, r: usize) -> RomModel {
        let phi = DenseMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
        let (psi, _) = qr_thin_positive(&DenseMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0)));
        // Nudge Psi toward Phi's span so the cross Gramian is well conditioned.
        let (phi_q, _) = qr_thin_positive(&phi);
        let psi = qr_thin_positive(&(&psi * 0.3 + &phi_q)).0;
        let projection = ProjectionPair::new(phi, psi).unwrap();
        let a = DenseMatrix::from_fn(r, r, |i, j| if i == j { -1.0 } else { 0.1 * rng.random_range(-1.0..1.0) });
        let h = Tensor3::from_fn(r, r, r, |_, _, _| 0.1 * rng.random_range(-1.0..1.0));
        let b = DenseMatrix::from_fn(r, 1, |_, _| rng.random_range(-1.0..1.0));
        RomModel::new(projection, LatentDynamics::Raw { a, h, b }, OutputMap::Identity).unwrap()
    }

    #[test]
    fn encode_zero_and_coordinate_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let m = random_model(&mut rng, 6, 2);
        assert_eq!(m.encode(&Vector::zeros(6)), Vector::zeros(2));

        // Psi = leading identity columns selects leading entries.
        let n = 5;
        let r = 2;
        let psi = DenseMatrix::from_fn(n, r, |i, j| if i == j { 1.0 } else { 0.0 });
        let phi = psi.clone();
        let pair = ProjectionPair::new(phi, psi).unwrap();
        let x = Vector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let z = pair.encode(&x);
        assert_eq!(z, Vector::from_vec(vec![1.0, 2.0]));
    }

    #[test]
    fn encode_is_left_inverse_of_decode() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let m = random_model(&mut rng, 8, 3);
        for _ in 0..5 {
            let z = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let back = m.encode(&m.decode(&z).unwrap());
            assert!((back - &z).norm() <= 1e-12 * z.norm());
        }
    }

    #[test]
    fn decode_zero_and_orthogonal_specialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let m = random_model(&mut rng, 8, 3);
        assert!(m.decode(&Vector::zeros(3)).unwrap().norm() == 0.0);

        let (phi, _) = qr_thin_positive(&DenseMatrix::from_fn(7, 2, |_, _| rng.random_range(-1.0..1.0)));
        let pair = ProjectionPair::new(phi.clone(), phi.clone()).unwrap();
        let z = Vector::from_vec(vec![0.7, -0.2]);
        let dec = pair.decode(&z).unwrap();
        assert!((dec - &phi * &z).norm() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let m = random_model(&mut rng, 9, 3);
        let x = Vector::from_fn(9, |_, _| rng.random_range(-1.0..1.0));
        let px = m.decode(&m.encode(&x)).unwrap();
        let ppx = m.decode(&m.encode(&px)).unwrap();
        assert!((ppx - &px).norm() <= 1e-11 * px.norm().max(1.0));
    }

    #[test]
    fn latent_rhs_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let m = random_model(&mut rng, 6, 2);
        let zero = m.latent_rhs(&Vector::zeros(2), &Vector::zeros(1)).unwrap();
        assert!(zero.norm() == 0.0);

        // A = -I, H = 0, B = 0 gives -z.
        let pair = ProjectionPair::new(
            DenseMatrix::identity(4, 2),
            DenseMatrix::identity(4, 2),
        )
        .unwrap();
        let model = RomModel::new(
            pair,
            LatentDynamics::Raw {
                a: -DenseMatrix::identity(2, 2),
                h: Tensor3::zeros(2, 2, 2),
                b: DenseMatrix::zeros(2, 1),
            },
            OutputMap::Identity,
        )
        .unwrap();
        let z = Vector::from_vec(vec![0.3, -0.8]);
        assert!((model.latent_rhs(&z, &Vector::zeros(1)).unwrap() + &z).norm() < 1e-15);
    }

    #[test]
    fn stable_and_raw_variants_agree_after_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let r = 3;
        let params = crate::stability::tests_support::random_params(&mut rng, r, 2);
        let t = crate::stability::assemble(&params).unwrap();
        let (phi, _) = qr_thin_positive(&DenseMatrix::from_fn(6, r, |_, _| rng.random_range(-1.0..1.0)));
        let pair = ProjectionPair::new(phi.clone(), phi).unwrap();
        let stable = RomModel::new(pair.clone(), LatentDynamics::Stable(params.clone()), OutputMap::Identity).unwrap();
        let raw = RomModel::new(
            pair,
            LatentDynamics::Raw {
                a: t.a.clone(),
                h: t.h.clone(),
                b: params.b.clone(),
            },
            OutputMap::Identity,
        )
        .unwrap();
        let z = Vector::from_fn(r, |_, _| rng.random_range(-1.0..1.0));
        let u = Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let fs = stable.latent_rhs(&z, &u).unwrap();
        let fr = raw.latent_rhs(&z, &u).unwrap();
        assert!((fs - &fr).norm() <= 1e-14 * fr.norm().max(1.0));
    }

    #[test]
    fn simulate_analytic_linear_solution() {
        let pair = ProjectionPair::new(DenseMatrix::identity(2, 2), DenseMatrix::identity(2, 2)).unwrap();
        let model = RomModel::new(
            pair,
            LatentDynamics::Raw {
                a: DenseMatrix::from_diagonal(&Vector::from_vec(vec![-1.0, -2.0])),
                h: Tensor3::zeros(2, 2, 2),
                b: DenseMatrix::zeros(2, 1),
            },
            OutputMap::Identity,
        )
        .unwrap();
        let times = linspace(0.0, 1.0, 11);
        // h = 1e-3 => substeps = 100 per 0.1-interval.
        let sim = model
            .simulate(&Vector::from_vec(vec![1.0, 1.0]), &InputSignal::zero(), &times, 100)
            .unwrap();
        let z_end = &sim.sample_latent[10];
        assert_relative_eq!(z_end[0], (-1.0_f64).exp(), epsilon = 1e-8);
        assert_relative_eq!(z_end[1], (-2.0_f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn simulate_zero_initial_condition_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let m = random_model(&mut rng, 6, 2);
        let times = linspace(0.0, 2.0, 21);
        let sim = m.simulate(&Vector::zeros(6), &InputSignal::zero(), &times, 10).unwrap();
        assert!(sim.outputs.iter().all(|y| y.norm() == 0.0));
    }

    #[test]
    fn stable_dynamics_lyapunov_energy_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let r = 4;
        let params = crate::stability::tests_support::random_params(&mut rng, r, 1);
        let t = crate::stability::assemble(&params).unwrap();
        let scale = 0.05 / crate::numerics::spectral_abscissa(&t.a).abs().max(1.0);
        let times: Vec<f64> = (0..40).map(|i| i as f64 * scale).collect();
        let (phi, _) = qr_thin_positive(&DenseMatrix::from_fn(8, r, |_, _| rng.random_range(-1.0..1.0)));
        let pair = ProjectionPair::new(phi.clone(), phi).unwrap();
        let model = RomModel::new(pair, LatentDynamics::Stable(params), OutputMap::Identity).unwrap();
        let x0 = Vector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let sim = model.simulate(&x0, &InputSignal::zero(), &times, 10).unwrap();
        let qt = model.compiled().qtilde.clone().unwrap();
        let mut prev = f64::INFINITY;
        for z in &sim.grid.states {
            let v = (&qt * z).dot(z);
            assert!(v <= prev * (1.0 + 1e-10) + 1e-300, "V increased: {v} > {prev}");
            prev = v;
        }
    }

    #[test]
    fn grassmann_symmetry_of_decode_and_simulate() {
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let m = random_model(&mut rng, 7, 3);
        let w = DenseMatrix::from_fn(3, 3, |i, j| if i == j { 1.5 } else { rng.random_range(-0.3..0.3) });
        let pair_w = ProjectionPair::new(m.projection.phi() * &w, m.projection.psi().clone()).unwrap();
        let m_w = m.with_parts(pair_w, m.dynamics.clone()).unwrap();
        let times = linspace(0.0, 1.0, 11);
        let x0 = Vector::from_fn(7, |_, _| rng.random_range(-0.5..0.5));
        let sim_a = m.simulate(&x0, &InputSignal::zero(), &times, 10).unwrap();
        let sim_b = m_w.simulate(&x0, &InputSignal::zero(), &times, 10).unwrap();
        for (ya, yb) in sim_a.outputs.iter().zip(&sim_b.outputs) {
            assert!((ya - yb).norm() <= 1e-10 * ya.norm().max(1.0));
        }
    }

    #[test]
    fn stable_trajectories_are_bounded_by_qtilde_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let r = 3;
        let params = crate::stability::tests_support::random_params(&mut rng, r, 1);
        let t = crate::stability::assemble(&params).unwrap();
        let scale = 0.05 / crate::numerics::spectral_abscissa(&t.a).abs().max(1.0);
        let times: Vec<f64> = (0..100).map(|i| i as f64 * scale).collect();
        let pair = ProjectionPair::new(DenseMatrix::identity(r, r), DenseMatrix::identity(r, r)).unwrap();
        let model = RomModel::new(pair, LatentDynamics::Stable(params), OutputMap::Identity).unwrap();
        let z0 = Vector::from_fn(r, |_, _| rng.random_range(-1.0..1.0));
        let sim = model.simulate_latent(&z0, &InputSignal::zero(), &times, 10).unwrap();
        let kappa = crate::numerics::cond_2(&t.qtilde);
        let bound = kappa.sqrt() * z0.norm() * (1.0 + 1e-8);
        for z in &sim.grid.states {
            assert!(z.norm() <= bound, "{} > {}", z.norm(), bound);
        }
    }
}
