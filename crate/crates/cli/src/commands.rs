//! The five CLI verbs, operating on already-merged configurations.

use std::fmt::Write as _;
use std::path::Path;

use gasnitrom::fom::io::{read_dataset, write_dataset, FileFormat};
use gasnitrom::fom::QuadraticFOM;
use gasnitrom::numerics::{cond_2, DenseMatrix};
use gasnitrom::rom::LatentDynamics;
use gasnitrom::stability;
use gasnitrom::training::SnapshotDataset;

use crate::config::{CompareConfig, EvaluateConfig, GenerateConfig, TestSpec, TrainConfigFile};
use crate::error::{CliError, CliResult};
use crate::model_io::{load_model, save_model};
use crate::pipeline::{self, evaluate_model, make_test_set, Method, OpinfSettings, TestProtocol};

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("creating {}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))
}

/// `generate`: simulate the configured protocol, write the dataset directory
/// and print the energy-vs-time table behind the usual training-set figures.
pub fn cmd_generate(cfg: &GenerateConfig) -> CliResult<()> {
    if cfg.protocol.amplitudes.is_empty() {
        return Err(CliError::Config("protocol.amplitudes must be non-empty".into()));
    }
    if cfg.protocol.samples < 2 {
        return Err(CliError::Config("protocol.samples must be at least 2".into()));
    }
    let fom = cfg.fom.build()?;
    let dataset = gasnitrom::fom::make_training_set(
        &fom,
        cfg.protocol.protocol()?,
        &cfg.protocol.amplitudes,
        cfg.protocol.samples,
        cfg.protocol.t_end,
        cfg.protocol.convention()?,
        cfg.protocol.substeps.unwrap_or(10),
    )?;
    let format = match cfg.output.format.as_deref().unwrap_or("csv") {
        "csv" => FileFormat::Csv,
        "bin" => FileFormat::Binary,
        other => return Err(CliError::Config(format!("unknown output.format '{other}'"))),
    };
    write_dataset(&cfg.output.dir, &dataset, format)?;

    // Energy-vs-time summary table.
    let mut table = String::from("t");
    for j in 0..dataset.num_trajectories() {
        let _ = write!(table, ",energy_{j}");
    }
    table.push('\n');
    for (i, t) in dataset.times().iter().enumerate() {
        let _ = write!(table, "{t:.6e}");
        for traj in dataset.trajectories() {
            let e: f64 = traj.states.column(i).norm_squared();
            let _ = write!(table, ",{e:.6e}");
        }
        table.push('\n');
    }
    print!("{table}");
    eprintln!(
        "wrote {} trajectories x {} samples to {}",
        dataset.num_trajectories(),
        dataset.num_samples(),
        cfg.output.dir.display()
    );
    Ok(())
}

/// `train`: run the method's initialization chain and optimization, then
/// write the model container and the per-iteration history CSV.
pub fn cmd_train(cfg: &TrainConfigFile) -> CliResult<()> {
    if cfg.r < 1 {
        return Err(CliError::Config("r must be >= 1".into()));
    }
    let method = Method::parse(&cfg.method)?;
    let mut dataset = read_dataset(&cfg.dataset)?;
    let fom: Option<QuadraticFOM> = match &cfg.fom {
        Some(spec) => Some(spec.build()?),
        None => None,
    };
    if let Some(k) = cfg.preproject_modes {
        if fom.is_some() {
            return Err(CliError::Config(
                "preproject_modes changes the working dimension and cannot be combined with a [fom] section".into(),
            ));
        }
        let (projected, _) = gasnitrom::fom::io::preproject_dataset(&dataset, k)?;
        eprintln!("pre-projected dataset onto {k} POD modes (n: {} -> {k})", dataset.state_dim());
        dataset = projected;
    }
    let train_section = cfg.train.clone().unwrap_or_default();
    let train_cfg = train_section.to_train_config()?;
    let opinf_section = cfg.opinf.clone().unwrap_or_default();
    let settings = OpinfSettings {
        lambda: opinf_section.lambda.unwrap_or(1e-8),
        exact_derivatives: match opinf_section.derivative.as_deref() {
            None | Some("exact") => true,
            Some("finite-difference") => false,
            Some(other) => {
                return Err(CliError::Config(format!("unknown opinf.derivative '{other}'")))
            }
        },
    };
    let outcome = pipeline::train_method(
        method,
        &dataset,
        cfg.r,
        fom.as_ref(),
        &train_cfg,
        train_section.penalty(),
        &settings,
    )
    .map_err(|e| match e {
        // Numerical failures during training name the failing stage.
        CliError::Numerical(msg) => CliError::Numerical(format!("stage {}: {msg}", cfg.method)),
        other => other,
    })?;

    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Data(format!("creating {}: {e}", cfg.out.display())))?;
    save_model(&cfg.out.join("model.bin"), &outcome.model, method.as_str())?;

    let mut hist = String::from("stage,horizon,block,block_kind,iteration,loss,grad_norm,step\n");
    for (stage, h) in &outcome.history {
        let _ = writeln!(
            hist,
            "{stage},{:.6e},{},{},{},{:.16e},{:.16e},{:.16e}",
            h.horizon,
            h.block,
            h.block_kind.as_str(),
            h.iteration,
            h.loss,
            h.grad_norm,
            h.step
        );
    }
    write_text(&cfg.out.join("history.csv"), &hist)?;
    eprintln!(
        "method {}: loss {:.6e} -> {:.6e}{}",
        method.as_str(),
        outcome.init_loss,
        outcome.final_loss,
        if outcome.penalty_used { " (stability penalty engaged)" } else { "" }
    );
    Ok(())
}

pub fn build_test_protocol(spec: &TestSpec) -> CliResult<Option<TestProtocol>> {
    let proto = match spec.kind.as_str() {
        "random-steps" => Some(TestProtocol::RandomSteps {
            count: spec.count.unwrap_or(100),
            amp_min: spec.amp_min.unwrap_or(0.0),
            amp_max: spec.amp_max.unwrap_or(0.25),
            t_end: spec.t_end.unwrap_or(10.0),
            samples: spec.samples.unwrap_or(100),
            seed: spec.seed.unwrap_or(0),
        }),
        "random-impulses" => Some(TestProtocol::RandomImpulses {
            count: spec.count.unwrap_or(25),
            amp_min: spec.amp_min.unwrap_or(-1.0),
            amp_max: spec.amp_max.unwrap_or(1.0),
            t_end: spec.t_end.unwrap_or(10.0),
            samples: spec.samples.unwrap_or(100),
            seed: spec.seed.unwrap_or(0),
        }),
        "sinusoid" => {
            let terms = spec
                .terms
                .as_ref()
                .ok_or_else(|| CliError::Config("sinusoid test needs test.terms".into()))?
                .iter()
                .map(|t| t.to_term())
                .collect::<CliResult<Vec<_>>>()?;
            Some(TestProtocol::Sinusoid {
                terms,
                t_end: spec.t_end.unwrap_or(30.0),
                samples: spec.samples.unwrap_or(300),
            })
        }
        "dataset" => None,
        other => return Err(CliError::Config(format!("unknown test.kind '{other}'"))),
    };
    Ok(proto)
}

/// Resolve the ground-truth dataset for a test spec: either simulate the
/// FOM (exit code 4 when it is missing) or load a stored dataset.
pub fn ground_truth(
    spec: &TestSpec,
    fom: Option<&QuadraticFOM>,
    substeps: usize,
) -> CliResult<SnapshotDataset> {
    match build_test_protocol(spec)? {
        Some(proto) => {
            let f = fom.ok_or_else(|| {
                CliError::Data("ground truth unavailable: test protocol needs a [fom] section".into())
            })?;
            make_test_set(f, &proto, substeps)
        }
        None => {
            let dir = spec
                .dataset
                .as_ref()
                .ok_or_else(|| CliError::Config("test.kind = dataset needs test.dataset".into()))?;
            Ok(read_dataset(dir)?)
        }
    }
}

fn curves_csv(times: &[f64], labeled: &[(String, &pipeline::EvalCurves)]) -> String {
    let mut out = String::from("t");
    for (label, _) in labeled {
        let _ = write!(out, ",e_{label},blown_{label}");
    }
    out.push('\n');
    for (i, t) in times.iter().enumerate() {
        let _ = write!(out, "{t:.6e}");
        for (_, c) in labeled {
            let blown = c
                .blowup_times
                .iter()
                .filter(|b| b.map(|tb| tb <= *t).unwrap_or(false))
                .count();
            let _ = write!(out, ",{:.16e},{blown}", c.average[i]);
        }
        out.push('\n');
    }
    out
}

/// `evaluate`: error curves of one model against ground truth.
pub fn cmd_evaluate(cfg: &EvaluateConfig) -> CliResult<()> {
    let (model, method) = load_model(&cfg.model)?;
    let fom = match &cfg.fom {
        Some(spec) => Some(spec.build()?),
        None => None,
    };
    let substeps = cfg.test.substeps.unwrap_or(10);
    let truth = ground_truth(&cfg.test, fom.as_ref(), substeps)?;
    let curves = evaluate_model(&model, &truth, substeps)?;

    let mut out = String::from("t,e");
    for j in 0..curves.per_trajectory.len() {
        let _ = write!(out, ",e_traj_{j}");
    }
    out.push_str(",blown\n");
    for (i, t) in curves.times.iter().enumerate() {
        let _ = write!(out, "{t:.6e},{:.16e}", curves.average[i]);
        for traj in &curves.per_trajectory {
            let _ = write!(out, ",{:.16e}", traj[i]);
        }
        let blown = curves
            .blowup_times
            .iter()
            .filter(|b| b.map(|tb| tb <= *t).unwrap_or(false))
            .count();
        let _ = writeln!(out, ",{blown}");
    }
    write_text(&cfg.out, &out)?;
    eprintln!(
        "method {method}: time-averaged e = {:.6e}, blow-ups: {}",
        curves.time_averaged_error(),
        curves.blowup_times.iter().flatten().count()
    );
    Ok(())
}

/// `compare`: aligned error curves for several models plus a summary table.
pub fn cmd_compare(cfg: &CompareConfig) -> CliResult<()> {
    if cfg.models.len() < 2 {
        return Err(CliError::Config("compare needs at least two model files".into()));
    }
    let fom = match &cfg.fom {
        Some(spec) => Some(spec.build()?),
        None => None,
    };
    let substeps = cfg.test.substeps.unwrap_or(10);
    let truth = ground_truth(&cfg.test, fom.as_ref(), substeps)?;
    let mut loaded = Vec::new();
    for (idx, path) in cfg.models.iter().enumerate() {
        let (model, method) = load_model(path)?;
        if model.full_dim() != truth.state_dim() {
            return Err(CliError::Config(format!(
                "model {} does not match the test grid/state dimension",
                path.display()
            )));
        }
        let curves = evaluate_model(&model, &truth, substeps)?;
        loaded.push((format!("{method}_{idx}"), curves));
    }
    let labeled: Vec<(String, &pipeline::EvalCurves)> =
        loaded.iter().map(|(l, c)| (l.clone(), c)).collect();
    let csv = curves_csv(truth.times(), &labeled);
    write_text(&cfg.out, &csv)?;

    println!("model,time_averaged_e,blowups,sup_output_norm");
    for (label, curves) in &loaded {
        println!(
            "{label},{:.6e},{},{:.6e}",
            curves.time_averaged_error(),
            curves.blowup_times.iter().flatten().count(),
            curves.sup_output_norm
        );
    }
    Ok(())
}

/// `inspect`: print model metadata and stability diagnostics.
pub fn cmd_inspect(path: &Path) -> CliResult<()> {
    let (model, method) = load_model(path)?;
    println!("file: {}", path.display());
    println!("method: {method}");
    println!(
        "dims: n = {}, r = {}, m = {}, p = {}",
        model.full_dim(),
        model.latent_dim(),
        model.input_dim(),
        model.output_dim()
    );
    println!("cond(Psi^T Phi) = {:.6e}", model.projection.cross_cond());
    let a = &model.compiled().a;
    let eig = a.complex_eigenvalues();
    println!("eigenvalues of A:");
    for e in eig.iter() {
        println!("  {:+.9e} {:+.9e}i", e.re, e.im);
    }
    match &model.dynamics {
        LatentDynamics::Stable(p) => {
            println!("dynamics: stable parameterization");
            println!("min singular value of R = {:.6e}", p.min_singular_value_r());
            let t = stability::assemble(p).map_err(CliError::from)?;
            println!("cond(Qtilde) = {:.6e}", cond_2(&t.qtilde));
        }
        LatentDynamics::Raw { .. } => {
            println!("dynamics: raw tensors");
            let abscissa = gasnitrom::numerics::spectral_abscissa(a);
            println!("spectral abscissa = {:+.6e}", abscissa);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn unused(_: &DenseMatrix) {}
