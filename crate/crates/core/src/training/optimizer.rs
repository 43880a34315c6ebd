//! Riemannian optimizers over the product manifold, with coordinate-descent
//! blocks and a progressive-horizon schedule.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::manifolds::{
    metric, project_tangent, retract, tangent_norm, transport, EuclidFactor, GrassmannPoint,
    ProductPoint, StiefelPoint, TangentVector,
};
use crate::optim::LineSearchParams;
use crate::rom::{LatentDynamics, RomModel};
use crate::stability::StableLatentParams;
use crate::training::{gradient, loss, stability_penalty, AmbientGradient, DynamicsGradient, SimOptions, SnapshotDataset};

/// Which parameter group a coordinate-descent block optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateBlock {
    /// Frames only (Grassmann + Stiefel).
    Projection,
    /// Latent tensors only.
    Tensors,
    /// Everything.
    Joint,
}

impl CoordinateBlock {
    pub fn as_str(&self) -> &'static str {
        match self {
            CoordinateBlock::Projection => "projection",
            CoordinateBlock::Tensors => "tensors",
            CoordinateBlock::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "projection" => Ok(CoordinateBlock::Projection),
            "tensors" => Ok(CoordinateBlock::Tensors),
            "joint" => Ok(CoordinateBlock::Joint),
            other => Err(Error::Config(format!("unknown coordinate block '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum OptimizerKind {
    Lbfgs {
        memory: usize,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        weight_decay: f64,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Lbfgs { memory: 10 }
    }
}

/// NiTROM-only stability penalty configuration.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyConfig {
    pub weight: f64,
    pub t_f: f64,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Final times of the progressive-horizon schedule (strictly
    /// increasing). Empty means a single pass over the full horizon.
    pub horizons: Vec<f64>,
    /// Coordinate-descent blocks with per-block iteration counts.
    pub blocks: Vec<(CoordinateBlock, usize)>,
    pub optimizer: OptimizerKind,
    pub line_search: LineSearchParams,
    pub grad_tol: f64,
    /// Integrator substeps per sample interval.
    pub substeps: usize,
    /// Stability penalty added to raw-dynamics objectives when enabled.
    pub penalty: Option<PenaltyConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            horizons: Vec::new(),
            blocks: vec![(CoordinateBlock::Joint, 200)],
            optimizer: OptimizerKind::default(),
            line_search: LineSearchParams::default(),
            grad_tol: 1e-9,
            substeps: 10,
            penalty: None,
        }
    }
}

impl TrainConfig {
    /// The paper-style alternating schedule: two (projection, tensors)
    /// rounds of 50 iterations each, then a joint block.
    pub fn coordinate_descent_default(joint_iters: usize) -> Vec<(CoordinateBlock, usize)> {
        vec![
            (CoordinateBlock::Projection, 50),
            (CoordinateBlock::Tensors, 50),
            (CoordinateBlock::Projection, 50),
            (CoordinateBlock::Tensors, 50),
            (CoordinateBlock::Joint, joint_iters),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.horizons.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Config("horizon schedule must be strictly increasing".into()));
            }
        }
        if self.blocks.is_empty() || self.blocks.iter().any(|(_, n)| *n == 0) {
            return Err(Error::Config("coordinate blocks must be non-empty with positive counts".into()));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be >= 1".into()));
        }
        Ok(())
    }
}

/// One optimizer iteration as recorded in the training history.
#[derive(Debug, Clone)]
pub struct HistoryRecord {
    pub horizon: f64,
    pub block: usize,
    pub block_kind: CoordinateBlock,
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub step: f64,
}

fn point_from_model(model: &RomModel) -> Result<ProductPoint> {
    let euclid = match &model.dynamics {
        LatentDynamics::Stable(p) => vec![
            EuclidFactor::Matrix(p.k.clone()),
            EuclidFactor::Matrix(p.r.clone()),
            EuclidFactor::Matrix(p.q.clone()),
            EuclidFactor::Tensor(p.s.clone()),
            EuclidFactor::Matrix(p.b.clone()),
        ],
        LatentDynamics::Raw { a, h, b } => vec![
            EuclidFactor::Matrix(a.clone()),
            EuclidFactor::Tensor(h.clone()),
            EuclidFactor::Matrix(b.clone()),
        ],
    };
    Ok(ProductPoint {
        grassmann: GrassmannPoint::new(model.projection.phi().clone())?,
        stiefel: StiefelPoint::new(model.projection.psi().clone())?,
        euclid,
    })
}

fn model_from_point(template: &RomModel, p: &ProductPoint) -> Result<RomModel> {
    let pair = crate::rom::ProjectionPair::new(p.grassmann.frame().clone(), p.stiefel.frame().clone())?;
    let dynamics = match &template.dynamics {
        LatentDynamics::Stable(_) => LatentDynamics::Stable(StableLatentParams {
            k: p.euclid[0].as_matrix().clone(),
            r: p.euclid[1].as_matrix().clone(),
            q: p.euclid[2].as_matrix().clone(),
            s: p.euclid[3].as_tensor().clone(),
            b: p.euclid[4].as_matrix().clone(),
        }),
        LatentDynamics::Raw { .. } => LatentDynamics::Raw {
            a: p.euclid[0].as_matrix().clone(),
            h: p.euclid[1].as_tensor().clone(),
            b: p.euclid[2].as_matrix().clone(),
        },
    };
    template.with_parts(pair, dynamics)
}

fn ambient_to_tangent_shape(template: &RomModel, g: &AmbientGradient) -> TangentVector {
    let euclid = match (&template.dynamics, &g.g_dynamics) {
        (LatentDynamics::Stable(_), DynamicsGradient::Stable { g_k, g_r, g_q, g_s }) => vec![
            EuclidFactor::Matrix(g_k.clone()),
            EuclidFactor::Matrix(g_r.clone()),
            EuclidFactor::Matrix(g_q.clone()),
            EuclidFactor::Tensor(g_s.clone()),
            EuclidFactor::Matrix(g.g_b.clone()),
        ],
        (LatentDynamics::Raw { .. }, DynamicsGradient::Raw { g_a, g_h }) => vec![
            EuclidFactor::Matrix(g_a.clone()),
            EuclidFactor::Tensor(g_h.clone()),
            EuclidFactor::Matrix(g.g_b.clone()),
        ],
        _ => unreachable!("dynamics/gradient variants always match"),
    };
    TangentVector {
        grassmann: g.g_phi.clone(),
        stiefel: g.g_psi.clone(),
        euclid,
    }
}

fn apply_block_mask(t: &mut TangentVector, block: CoordinateBlock) {
    match block {
        CoordinateBlock::Projection => t.zero_euclid(),
        CoordinateBlock::Tensors => t.zero_projection(),
        CoordinateBlock::Joint => {}
    }
}

struct Objective<'a> {
    template: &'a RomModel,
    data: &'a SnapshotDataset,
    opts: SimOptions,
    penalty: Option<PenaltyConfig>,
}

impl Objective<'_> {
    /// Loss only; any numerical failure (blow-up, assembly breakdown) maps
    /// to +inf so the line search simply rejects the step.
    fn value(&self, p: &ProductPoint) -> f64 {
        let model = match model_from_point(self.template, p) {
            Ok(m) => m,
            Err(_) => return f64::INFINITY,
        };
        let mut val = match loss(&model, self.data, &self.opts) {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        if let (Some(pen), LatentDynamics::Raw { .. }) = (self.penalty, &model.dynamics) {
            match stability_penalty(&model.compiled().a, pen.t_f, pen.weight) {
                Ok((pv, _)) => val += pv,
                Err(_) => return f64::INFINITY,
            }
        }
        val
    }

    /// Loss and the Riemannian gradient (projected, block-masked by caller).
    fn value_and_grad(&self, p: &ProductPoint) -> Result<(f64, TangentVector)> {
        let model = model_from_point(self.template, p)?;
        let (mut val, mut amb) = gradient(&model, self.data, &self.opts)?;
        if let (Some(pen), LatentDynamics::Raw { .. }) = (self.penalty, &model.dynamics) {
            let (pv, pg) = stability_penalty(&model.compiled().a, pen.t_f, pen.weight)?;
            val += pv;
            if let DynamicsGradient::Raw { g_a, .. } = &mut amb.g_dynamics {
                *g_a += pg;
            }
        }
        let ambient = ambient_to_tangent_shape(self.template, &amb);
        let grad = project_tangent(p, &ambient)?;
        Ok((val, grad))
    }
}

/// Optimize the model over the horizon schedule (outermost), running the
/// coordinate-descent blocks within each horizon. Returns the trained model
/// and the per-iteration history.
pub fn optimize(
    model: &RomModel,
    data: &SnapshotDataset,
    cfg: &TrainConfig,
) -> Result<(RomModel, Vec<HistoryRecord>)> {
    cfg.validate()?;
    let full_horizon = *data.times().last().unwrap();
    let horizons: Vec<f64> = if cfg.horizons.is_empty() {
        vec![full_horizon]
    } else {
        cfg.horizons.clone()
    };

    let mut point = point_from_model(model)?;
    let mut history = Vec::new();

    for &horizon in &horizons {
        let data_h = data.truncated(horizon.min(full_horizon))?;
        for (block_idx, &(block, iters)) in cfg.blocks.iter().enumerate() {
            let objective = Objective {
                template: model,
                data: &data_h,
                opts: SimOptions { substeps: cfg.substeps },
                penalty: cfg.penalty,
            };
            point = match cfg.optimizer {
                OptimizerKind::Lbfgs { memory } => riemannian_lbfgs(
                    &objective,
                    point,
                    block,
                    iters,
                    memory,
                    cfg,
                    horizon,
                    block_idx,
                    &mut history,
                )?,
                OptimizerKind::Adam {
                    learning_rate,
                    beta1,
                    beta2,
                    weight_decay,
                } => riemannian_adam(
                    &objective,
                    point,
                    block,
                    iters,
                    learning_rate,
                    beta1,
                    beta2,
                    weight_decay,
                    cfg,
                    horizon,
                    block_idx,
                    &mut history,
                )?,
            };
        }
    }
    let trained = model_from_point(model, &point)?;
    Ok((trained, history))
}

#[allow(clippy::too_many_arguments)]
fn riemannian_lbfgs(
    objective: &Objective<'_>,
    mut point: ProductPoint,
    block: CoordinateBlock,
    max_iters: usize,
    memory_depth: usize,
    cfg: &TrainConfig,
    horizon: f64,
    block_idx: usize,
    history: &mut Vec<HistoryRecord>,
) -> Result<ProductPoint> {
    let (mut f, mut g) = objective.value_and_grad(&point)?;
    apply_block_mask(&mut g, block);
    let mut memory: VecDeque<(TangentVector, TangentVector, f64)> = VecDeque::new();
    let mut restarted = false;

    for iteration in 0..max_iters {
        let gnorm = tangent_norm(&point, &g)?;
        history.push(HistoryRecord {
            horizon,
            block: block_idx,
            block_kind: block,
            iteration,
            loss: f,
            grad_norm: gnorm,
            step: 0.0,
        });
        if gnorm <= cfg.grad_tol {
            break;
        }

        // Two-loop recursion in the manifold metric.
        let mut dir = g.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * metric(&point, s, &dir)?;
            dir.axpy(-a, y);
            alphas.push(a);
        }
        if let Some((s, y, _)) = memory.back() {
            let gamma = metric(&point, s, y)? / metric(&point, y, y)?;
            if gamma.is_finite() && gamma > 0.0 {
                dir.scale_mut(gamma);
            }
        }
        for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
            let b = rho * metric(&point, y, &dir)?;
            dir.axpy(a - b, s);
        }
        dir.scale_mut(-1.0);
        let mut slope = metric(&point, &g, &dir)?;
        if !(slope < 0.0) {
            dir = g.clone();
            dir.scale_mut(-1.0);
            slope = -gnorm * gnorm;
        }

        // Backtracking Armijo on the retracted ray. A first-trial accept is
        // expanded while it strictly improves, then the step is refined by
        // one quadratic interpolation.
        let ls = &cfg.line_search;
        let mut step = ls.initial_step;
        let mut accepted = None;
        let mut first_trial_ok = false;
        for k in 0..ls.max_backtracks {
            if let Ok(cand) = retract(&point, &dir, step) {
                let fc = objective.value(&cand);
                if fc.is_finite() && fc <= f + ls.sufficient_decrease * step * slope {
                    accepted = Some((cand, fc, step));
                    first_trial_ok = k == 0;
                    break;
                }
            }
            step *= ls.contraction;
        }
        if first_trial_ok {
            for _ in 0..40 {
                let (_, f_best, s_best) = accepted.as_ref().unwrap();
                let s_try = s_best / ls.contraction;
                let Ok(cand) = retract(&point, &dir, s_try) else { break };
                let fc = objective.value(&cand);
                if fc.is_finite() && fc < *f_best && fc <= f + ls.sufficient_decrease * s_try * slope
                {
                    accepted = Some((cand, fc, s_try));
                } else {
                    break;
                }
            }
        }
        if let Some((_, fc, step)) = &accepted {
            let curv = 2.0 * (fc - f - slope * step);
            if curv > 0.0 {
                let alpha = -slope * step * step / curv;
                if alpha.is_finite() && alpha > 0.0 {
                    if let Ok(cand2) = retract(&point, &dir, alpha) {
                        let fc2 = objective.value(&cand2);
                        if fc2.is_finite()
                            && fc2 < *fc
                            && fc2 <= f + ls.sufficient_decrease * alpha * slope
                        {
                            accepted = Some((cand2, fc2, alpha));
                        }
                    }
                }
            }
        }
        let (new_point, f_new, step_taken) = match accepted {
            Some(t) => t,
            None => {
                if !restarted && !memory.is_empty() {
                    // Restart the memory once, then effectively steepest
                    // descent on the next pass.
                    memory.clear();
                    restarted = true;
                    continue;
                }
                break;
            }
        };

        let (f_check, mut g_new) = objective.value_and_grad(&new_point)?;
        apply_block_mask(&mut g_new, block);
        debug_assert!((f_check - f_new).abs() <= 1e-9 * f_new.abs().max(1.0));

        // Curvature pair, transported to the new tangent space.
        let mut s_vec = dir.clone();
        s_vec.scale_mut(step_taken);
        let s_vec = transport(&point, &new_point, &s_vec)?;
        let mut y_vec = g_new.clone();
        let g_old_moved = transport(&point, &new_point, &g)?;
        y_vec.axpy(-1.0, &g_old_moved);
        let sy = metric(&new_point, &s_vec, &y_vec)?;
        let s_norm = tangent_norm(&new_point, &s_vec)?;
        let y_norm = tangent_norm(&new_point, &y_vec)?;
        // Move stored pairs along, drop any that lose curvature.
        let mut moved: VecDeque<(TangentVector, TangentVector, f64)> = VecDeque::new();
        for (s_old, y_old, _) in memory.drain(..) {
            let s_m = transport(&point, &new_point, &s_old)?;
            let y_m = transport(&point, &new_point, &y_old)?;
            let c = metric(&new_point, &s_m, &y_m)?;
            if c > 1e-14 {
                moved.push_back((s_m, y_m, 1.0 / c));
            }
        }
        memory = moved;
        if sy > 1e-12 * s_norm * y_norm {
            if memory.len() == memory_depth {
                memory.pop_front();
            }
            memory.push_back((s_vec, y_vec, 1.0 / sy));
        }

        if let Some(last) = history.last_mut() {
            last.step = step_taken;
        }
        let stalled = (f - f_new).abs() <= 1e-15 * f.abs().max(1e-300);
        point = new_point;
        f = f_new;
        g = g_new;
        if stalled {
            break;
        }
    }
    Ok(point)
}

#[allow(clippy::too_many_arguments)]
fn riemannian_adam(
    objective: &Objective<'_>,
    mut point: ProductPoint,
    block: CoordinateBlock,
    max_iters: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    cfg: &TrainConfig,
    horizon: f64,
    block_idx: usize,
    history: &mut Vec<HistoryRecord>,
) -> Result<ProductPoint> {
    let eps = 1e-8;
    let mut m: Option<TangentVector> = None;
    let mut v = 0.0_f64;
    for iteration in 0..max_iters {
        let (f, mut g) = objective.value_and_grad(&point)?;
        apply_block_mask(&mut g, block);
        let gnorm = tangent_norm(&point, &g)?;
        history.push(HistoryRecord {
            horizon,
            block: block_idx,
            block_kind: block,
            iteration,
            loss: f,
            grad_norm: gnorm,
            step: lr,
        });
        if gnorm <= cfg.grad_tol {
            break;
        }
        let mut m_new = match m {
            Some(prev) => {
                let mut mm = prev;
                mm.scale_mut(beta1);
                mm.axpy(1.0 - beta1, &g);
                mm
            }
            None => {
                let mut mm = g.clone();
                mm.scale_mut(1.0 - beta1);
                mm
            }
        };
        v = beta2 * v + (1.0 - beta2) * gnorm * gnorm;
        let t = (iteration + 1) as f64;
        let m_hat_scale = 1.0 / (1.0 - beta1.powf(t));
        let v_hat = v / (1.0 - beta2.powf(t));
        let mut dir = m_new.clone();
        dir.scale_mut(-m_hat_scale / (v_hat.sqrt() + eps));
        let mut new_point = retract(&point, &dir, lr)?;
        if weight_decay > 0.0 {
            // Decoupled weight decay on the Euclidean block only.
            for fct in &mut new_point.euclid {
                fct.scale_mut(1.0 - lr * weight_decay);
            }
        }
        // Guard against a divergent step.
        let f_new = objective.value(&new_point);
        if !f_new.is_finite() {
            break;
        }
        m_new = transport(&point, &new_point, &m_new)?;
        point = new_point;
        m = Some(m_new);
    }
    Ok(point)
}

/// Train raw (NiTROM) dynamics; if the result has non-negative spectral
/// abscissa, re-run with the matrix-exponential stability penalty enabled
/// (escalating weight) until the linear part is Hurwitz or the retry budget
/// is exhausted.
pub fn train_nitrom_with_penalty(
    model: &RomModel,
    data: &SnapshotDataset,
    cfg: &TrainConfig,
    base_penalty: PenaltyConfig,
) -> Result<(RomModel, Vec<HistoryRecord>, bool)> {
    let (mut trained, mut history) = optimize(model, data, cfg)?;
    let mut penalty_used = false;
    let mut weight = base_penalty.weight;
    for _ in 0..3 {
        if crate::numerics::spectral_abscissa(&trained.compiled().a) < 0.0 {
            return Ok((trained, history, penalty_used));
        }
        penalty_used = true;
        let cfg_pen = TrainConfig {
            penalty: Some(PenaltyConfig {
                weight,
                t_f: base_penalty.t_f,
            }),
            ..cfg.clone()
        };
        let (t2, mut h2) = optimize(&trained, data, &cfg_pen)?;
        history.append(&mut h2);
        trained = t2;
        weight *= 10.0;
    }
    Ok((trained, history, penalty_used))
}
