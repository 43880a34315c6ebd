//! Method orchestration: initialization chains, training drivers, test-set
//! construction and error-curve evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use gasnitrom::fom::{self, InputSignal, Protocol, QuadraticFOM, SinTerm};
use gasnitrom::numerics::{DenseMatrix, Vector};
use gasnitrom::opinf::{self, PodBasis};
use gasnitrom::optim::LbfgsParams;
use gasnitrom::rom::{LatentDynamics, OutputMap, ProjectionPair, RomModel};
use gasnitrom::stability;
use gasnitrom::training::{
    self, optimize, train_nitrom_with_penalty, HistoryRecord, PenaltyConfig, SnapshotDataset,
    TrainConfig, Trajectory, WeightConvention,
};
use gasnitrom::Error as CoreError;

use crate::error::{CliError, CliResult};

/// Reduced-order-model families driven by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    GasNitrom,
    Nitrom,
    OpInf,
    GasOpInf,
    PodGalerkin,
}

impl Method {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "gasnitrom" => Ok(Method::GasNitrom),
            "nitrom" => Ok(Method::Nitrom),
            "opinf" => Ok(Method::OpInf),
            "gasopinf" => Ok(Method::GasOpInf),
            "pod-galerkin" => Ok(Method::PodGalerkin),
            other => Err(CliError::Config(format!(
                "unknown method '{other}' (expected gasnitrom|nitrom|opinf|gasopinf|pod-galerkin)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::GasNitrom => "gasnitrom",
            Method::Nitrom => "nitrom",
            Method::OpInf => "opinf",
            Method::GasOpInf => "gasopinf",
            Method::PodGalerkin => "pod-galerkin",
        }
    }
}

/// Everything the train command produces.
pub struct TrainOutcome {
    pub model: RomModel,
    pub history: Vec<(String, HistoryRecord)>,
    pub init_loss: f64,
    pub final_loss: f64,
    pub penalty_used: bool,
}

pub struct OpinfSettings {
    pub lambda: f64,
    pub exact_derivatives: bool,
}

impl Default for OpinfSettings {
    fn default() -> Self {
        OpinfSettings {
            lambda: 1e-8,
            exact_derivatives: true,
        }
    }
}

fn dataset_weights(data: &SnapshotDataset) -> Vec<f64> {
    data.trajectories().iter().map(|t| t.weight).collect()
}

/// POD basis of the dataset with its own trajectory weights.
pub fn pod_basis(data: &SnapshotDataset, r: usize) -> CliResult<PodBasis> {
    opinf::pod(data, r, &dataset_weights(data)).map_err(CliError::from)
}

fn output_map_for(fom: Option<&QuadraticFOM>, data: &SnapshotDataset) -> OutputMap {
    match fom {
        Some(f) => OutputMap::Linear(f.c.clone()),
        // Without a FOM we can only predict what the dataset observes; the
        // identity map needs p == n, which `RomModel::new` re-checks.
        None => {
            if data.output_dim() == data.state_dim() {
                OutputMap::Identity
            } else {
                OutputMap::Identity
            }
        }
    }
}

/// Latent tensors used to seed the stable and raw trajectory methods:
/// POD-Galerkin when the FOM is available (intrusive), otherwise the
/// closed-form Operator Inference fit (non-intrusive).
fn seed_tensors(
    data: &SnapshotDataset,
    basis: &PodBasis,
    fom: Option<&QuadraticFOM>,
    settings: &OpinfSettings,
) -> CliResult<(DenseMatrix, gasnitrom::Tensor3, DenseMatrix)> {
    match fom {
        Some(f) => {
            let rom = opinf::pod_galerkin(f, basis)?;
            match rom.dynamics {
                LatentDynamics::Raw { a, h, b } => Ok((a, h, b)),
                _ => unreachable!(),
            }
        }
        None => {
            let latent = opinf::latent_derivatives(data, basis, None)?;
            let (a, h, b) = opinf::opinf_lstsq(&latent, settings.lambda)?;
            Ok((a, h, b))
        }
    }
}

/// GasOpInf fit on the dataset: POD subspace, stable warm start from the
/// seed tensors (eigen-projection + Q = I), then Euclidean L-BFGS on the
/// Appendix-style closed-form gradients.
pub fn fit_gasopinf(
    data: &SnapshotDataset,
    r: usize,
    fom: Option<&QuadraticFOM>,
    settings: &OpinfSettings,
    lbfgs: &LbfgsParams,
) -> CliResult<(RomModel, Vec<f64>)> {
    let basis = pod_basis(data, r)?;
    let (a0, h0, b0) = seed_tensors(data, &basis, fom, settings)?;
    let init = stability::params_q_identity(&a0, &h0, &b0, 1e-8)?;
    let latent = opinf::latent_derivatives(
        data,
        &basis,
        if settings.exact_derivatives { fom } else { None },
    )?;
    let (params, history) = opinf::gasopinf_train(&latent, &init, settings.lambda, lbfgs)?;
    let pair = ProjectionPair::new(basis.modes.clone(), basis.modes.clone())?;
    let model = RomModel::new(pair, LatentDynamics::Stable(params), output_map_for(fom, data))?;
    Ok((model, history))
}

/// Closed-form Operator Inference model on the POD subspace.
pub fn fit_opinf(
    data: &SnapshotDataset,
    r: usize,
    fom: Option<&QuadraticFOM>,
    settings: &OpinfSettings,
) -> CliResult<RomModel> {
    let basis = pod_basis(data, r)?;
    let latent = opinf::latent_derivatives(
        data,
        &basis,
        if settings.exact_derivatives { fom } else { None },
    )?;
    let (a, h, b) = opinf::opinf_lstsq(&latent, settings.lambda)?;
    let pair = ProjectionPair::new(basis.modes.clone(), basis.modes.clone())?;
    Ok(RomModel::new(
        pair,
        LatentDynamics::Raw { a, h, b },
        output_map_for(fom, data),
    )?)
}

/// Intrusive POD-Galerkin model (requires the FOM).
pub fn fit_pod_galerkin(data: &SnapshotDataset, r: usize, fom: &QuadraticFOM) -> CliResult<RomModel> {
    let basis = pod_basis(data, r)?;
    Ok(opinf::pod_galerkin(fom, &basis)?)
}

/// Run the full initialization chain and training for a method.
pub fn train_method(
    method: Method,
    data: &SnapshotDataset,
    r: usize,
    fom: Option<&QuadraticFOM>,
    train_cfg: &TrainConfig,
    penalty: PenaltyConfig,
    settings: &OpinfSettings,
) -> CliResult<TrainOutcome> {
    let opts = training::SimOptions {
        substeps: train_cfg.substeps,
    };
    let tag = |stage: &str, recs: Vec<HistoryRecord>| -> Vec<(String, HistoryRecord)> {
        recs.into_iter().map(|h| (stage.to_string(), h)).collect()
    };
    match method {
        Method::PodGalerkin => {
            let f = fom.ok_or_else(|| {
                CliError::Config("method pod-galerkin is intrusive and needs a [fom] section".into())
            })?;
            let model = fit_pod_galerkin(data, r, f)?;
            let l = training::loss(&model, data, &opts)?;
            Ok(TrainOutcome {
                model,
                history: Vec::new(),
                init_loss: l,
                final_loss: l,
                penalty_used: false,
            })
        }
        Method::OpInf => {
            let model = fit_opinf(data, r, fom, settings)?;
            let l = training::loss(&model, data, &opts)?;
            Ok(TrainOutcome {
                model,
                history: Vec::new(),
                init_loss: l,
                final_loss: l,
                penalty_used: false,
            })
        }
        Method::GasOpInf => {
            let (model, hist) = fit_gasopinf(data, r, fom, settings, &LbfgsParams::default())?;
            let l = training::loss(&model, data, &opts)?;
            let records = hist
                .into_iter()
                .enumerate()
                .map(|(i, loss)| HistoryRecord {
                    horizon: *data.times().last().unwrap(),
                    block: 0,
                    block_kind: gasnitrom::training::CoordinateBlock::Joint,
                    iteration: i,
                    loss,
                    grad_norm: 0.0,
                    step: 0.0,
                })
                .collect::<Vec<_>>();
            Ok(TrainOutcome {
                model,
                history: tag("gasopinf", records),
                init_loss: l,
                final_loss: l,
                penalty_used: false,
            })
        }
        Method::GasNitrom => {
            let (init_model, hist0) = fit_gasopinf(data, r, fom, settings, &LbfgsParams::default())?;
            let init_loss = training::loss(&init_model, data, &opts)?;
            let (model, hist) = optimize(&init_model, data, train_cfg)?;
            let final_loss = training::loss(&model, data, &opts)?;
            let mut history = tag(
                "gasopinf-init",
                hist0
                    .into_iter()
                    .enumerate()
                    .map(|(i, loss)| HistoryRecord {
                        horizon: *data.times().last().unwrap(),
                        block: 0,
                        block_kind: gasnitrom::training::CoordinateBlock::Joint,
                        iteration: i,
                        loss,
                        grad_norm: 0.0,
                        step: 0.0,
                    })
                    .collect(),
            );
            history.extend(tag("gasnitrom", hist));
            Ok(TrainOutcome {
                model,
                history,
                init_loss,
                final_loss,
                penalty_used: false,
            })
        }
        Method::Nitrom => {
            let basis = pod_basis(data, r)?;
            let (a, h, b) = seed_tensors(data, &basis, fom, settings)?;
            let pair = ProjectionPair::new(basis.modes.clone(), basis.modes.clone())?;
            let init_model = RomModel::new(
                pair,
                LatentDynamics::Raw { a, h, b },
                output_map_for(fom, data),
            )?;
            let init_loss = training::loss(&init_model, data, &opts)?;
            let (model, hist, penalty_used) =
                train_nitrom_with_penalty(&init_model, data, train_cfg, penalty)?;
            let final_loss = training::loss(&model, data, &opts)?;
            Ok(TrainOutcome {
                model,
                history: tag("nitrom", hist),
                init_loss,
                final_loss,
                penalty_used,
            })
        }
    }
}

/// Test excitation protocols.
#[derive(Debug, Clone)]
pub enum TestProtocol {
    RandomSteps {
        count: usize,
        amp_min: f64,
        amp_max: f64,
        t_end: f64,
        samples: usize,
        seed: u64,
    },
    RandomImpulses {
        count: usize,
        amp_min: f64,
        amp_max: f64,
        t_end: f64,
        samples: usize,
        seed: u64,
    },
    Sinusoid {
        terms: Vec<SinTerm>,
        t_end: f64,
        samples: usize,
    },
}

/// Build the ground-truth test set by simulating the FOM.
pub fn make_test_set(fom: &QuadraticFOM, protocol: &TestProtocol, substeps: usize) -> CliResult<SnapshotDataset> {
    match protocol {
        TestProtocol::RandomSteps {
            count,
            amp_min,
            amp_max,
            t_end,
            samples,
            seed,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let amps: Vec<f64> = (0..*count).map(|_| rng.random_range(*amp_min..*amp_max)).collect();
            Ok(fom::make_training_set(
                fom,
                Protocol::Step,
                &amps,
                *samples,
                *t_end,
                WeightConvention::SteadyStateOutput,
                substeps,
            )?)
        }
        TestProtocol::RandomImpulses {
            count,
            amp_min,
            amp_max,
            t_end,
            samples,
            seed,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let amps: Vec<f64> = (0..*count).map(|_| rng.random_range(*amp_min..*amp_max)).collect();
            Ok(fom::make_training_set(
                fom,
                Protocol::Impulse,
                &amps,
                *samples,
                *t_end,
                WeightConvention::TimeAveragedEnergy,
                substeps,
            )?)
        }
        TestProtocol::Sinusoid { terms, t_end, samples } => {
            let times: Vec<f64> = (0..*samples)
                .map(|i| t_end * i as f64 / (*samples as f64 - 1.0))
                .collect();
            let signal = InputSignal::Sinusoid { terms: terms.clone() };
            let x0 = Vector::zeros(fom.state_dim());
            let traj = fom::simulate_fom(fom, &x0, &signal, &times, substeps)?;
            let e_avg = traj.outputs.iter().map(|v| v * v).sum::<f64>() / *samples as f64;
            let weight = if e_avg < 1e-14 { 1.0 } else { e_avg };
            let trajectory = Trajectory {
                states: traj.states,
                inputs: traj.inputs,
                outputs: traj.outputs,
                weight,
                signal,
            };
            Ok(SnapshotDataset::new(
                times,
                vec![trajectory],
                WeightConvention::TimeAveragedEnergy,
            )?)
        }
    }
}

/// Error curves of one model against a ground-truth dataset.
#[derive(Debug, Clone)]
pub struct EvalCurves {
    pub times: Vec<f64>,
    /// Weighted average error e(t) over trajectories.
    pub average: Vec<f64>,
    /// Per-trajectory squared errors (unweighted), [traj][time].
    pub per_trajectory: Vec<Vec<f64>>,
    /// Blow-up time per trajectory, when the model diverged.
    pub blowup_times: Vec<Option<f64>>,
    /// Supremum of ||yhat|| over all trajectories and times (inf on blow-up).
    pub sup_output_norm: f64,
}

impl EvalCurves {
    pub fn any_blowup(&self) -> bool {
        self.blowup_times.iter().any(|b| b.is_some())
    }

    /// Time-averaged e(t).
    pub fn time_averaged_error(&self) -> f64 {
        self.average.iter().sum::<f64>() / self.average.len() as f64
    }
}

/// Simulate the model over every test trajectory and build the Eq-(21)/(24)
/// style error curves: `e(t) = (1/N_traj) sum_j ||y_j - yhat_j||^2 / alpha_j`.
/// Blow-ups are reported, not fatal; entries after a blow-up are +inf.
pub fn evaluate_model(model: &RomModel, truth: &SnapshotDataset, substeps: usize) -> CliResult<EvalCurves> {
    if model.full_dim() != truth.state_dim() || model.output_dim() != truth.output_dim() {
        return Err(CliError::Config(
            "model and ground-truth dimensions do not match".into(),
        ));
    }
    let times = truth.times().to_vec();
    let num = times.len();
    let n_traj = truth.num_trajectories();
    let results: Vec<(Vec<f64>, Option<f64>, f64)> = truth
        .trajectories()
        .par_iter()
        .map(|traj| {
            // Predicted outputs, possibly truncated by blow-up.
            let x0 = traj.initial_state();
            let full = model.simulate(&x0, &traj.signal, &times, substeps);
            let (outputs, blowup) = match full {
                Ok(sim) => (sim.outputs, None),
                Err(CoreError::BlowUp { time, .. }) => {
                    // Keep the rows before the blow-up time.
                    let keep = times.iter().take_while(|t| **t < time).count().max(1);
                    if keep >= 2 {
                        match model.simulate(&x0, &traj.signal, &times[..keep], substeps) {
                            Ok(sim) => (sim.outputs, Some(time)),
                            Err(_) => (Vec::new(), Some(time)),
                        }
                    } else {
                        (Vec::new(), Some(time))
                    }
                }
                Err(e) => return Err(CliError::from(e)),
            };
            let mut errs = vec![f64::INFINITY; num];
            let mut sup = 0.0_f64;
            for (i, yhat) in outputs.iter().enumerate() {
                let y = traj.outputs.column(i);
                errs[i] = (y - yhat).norm_squared();
                sup = sup.max(yhat.norm());
            }
            if blowup.is_some() {
                sup = f64::INFINITY;
            }
            Ok((errs, blowup, sup))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut average = vec![0.0; num];
    let mut per_trajectory = Vec::with_capacity(n_traj);
    let mut blowup_times = Vec::with_capacity(n_traj);
    let mut sup_output_norm = 0.0_f64;
    for ((errs, blowup, sup), traj) in results.into_iter().zip(truth.trajectories()) {
        for i in 0..num {
            average[i] += errs[i] / traj.weight / n_traj as f64;
        }
        per_trajectory.push(errs);
        blowup_times.push(blowup);
        sup_output_norm = sup_output_norm.max(sup);
    }
    Ok(EvalCurves {
        times,
        average,
        per_trajectory,
        blowup_times,
        sup_output_norm,
    })
}

/// Restrict a curve average to `t <= t_max` and average over time.
pub fn time_averaged_error_up_to(curves: &EvalCurves, t_max: f64) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for (t, e) in curves.times.iter().zip(&curves.average) {
        if *t <= t_max + 1e-12 {
            acc += e;
            count += 1;
        }
    }
    acc / count.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use gasnitrom::fom::toy_model;

    fn toy_data() -> SnapshotDataset {
        fom::make_training_set(
            &toy_model(20.0),
            Protocol::Step,
            &[0.05, 0.15],
            30,
            5.0,
            WeightConvention::SteadyStateOutput,
            10,
        )
        .unwrap()
    }

    #[test]
    fn pod_galerkin_chain_produces_simulatable_model() {
        let fom = toy_model(20.0);
        let d = toy_data();
        let out = train_method(
            Method::PodGalerkin,
            &d,
            2,
            Some(&fom),
            &TrainConfig::default(),
            PenaltyConfig { weight: 1e-3, t_f: 10.0 },
            &OpinfSettings::default(),
        )
        .unwrap();
        assert!(out.final_loss.is_finite());
    }

    #[test]
    fn pod_galerkin_requires_fom() {
        let d = toy_data();
        let res = train_method(
            Method::PodGalerkin,
            &d,
            2,
            None,
            &TrainConfig::default(),
            PenaltyConfig { weight: 1e-3, t_f: 10.0 },
            &OpinfSettings::default(),
        );
        match res {
            Err(e) => assert_eq!(e.exit_code(), 2),
            Ok(_) => panic!("expected a config error"),
        }
    }

    #[test]
    fn gasopinf_model_is_hurwitz_and_loss_finite() {
        let fom = toy_model(20.0);
        let d = toy_data();
        let (model, _) = fit_gasopinf(
            &d,
            2,
            Some(&fom),
            &OpinfSettings::default(),
            &LbfgsParams {
                max_iters: 100,
                ..LbfgsParams::default()
            },
        )
        .unwrap();
        let a = &model.compiled().a;
        assert!(gasnitrom::numerics::spectral_abscissa(a) < 0.0);
    }

    #[test]
    fn evaluate_exact_model_gives_zero_error() {
        // A full-basis POD-Galerkin model reproduces the FOM, so e(t) ~ 0.
        let fom = toy_model(20.0);
        let d = toy_data();
        let model = fit_pod_galerkin(&d, 3, &fom).unwrap();
        let curves = evaluate_model(&model, &d, 10).unwrap();
        assert!(curves.average.iter().all(|e| *e <= 1e-12));
        assert!(!curves.any_blowup());
    }

    #[test]
    fn evaluate_flags_blowup_with_finite_prefix() {
        // An unstable raw model on a modest horizon.
        let d = toy_data();
        let pair = ProjectionPair::new(DenseMatrix::identity(3, 2), DenseMatrix::identity(3, 2)).unwrap();
        let unstable = RomModel::new(
            pair,
            LatentDynamics::Raw {
                a: DenseMatrix::from_diagonal(&Vector::from_vec(vec![8.0, 9.0])),
                h: gasnitrom::Tensor3::zeros(2, 2, 2),
                b: DenseMatrix::from_element(2, 1, 1.0),
            },
            OutputMap::Linear(toy_model(20.0).c),
        )
        .unwrap();
        let curves = evaluate_model(&unstable, &d, 10).unwrap();
        assert!(curves.any_blowup());
        // Finite rows up to the blow-up.
        let first = &curves.per_trajectory[0];
        assert!(first[0].is_finite());
        assert!(first.last().unwrap().is_infinite());
    }
}
