//! Problem construction and the shared training loop.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{ExperimentConfig, InitKind, ProblemKind, ScheduleKind, SpectrumKind};
use super::metrics::MetricsRecord;
use crate::bsfa::{BsfaConfig, BsfaState, RefreshContext};
use crate::error::{Error, Result};
use crate::optim::{clip_global_norm, LrSchedule, OptimizerState};
use crate::problems::{
    abridged_indices, load_csv_dataset, log_spaced, make_two_moons, outlier_spectrum, BatchSampler,
    HvpOracle, MlpOracle, MlpProblem, QuadraticProblem, HESSIAN_BATCH,
};
use crate::subspace::{BlockPartition, Role};

/// Seed offset for the quadratic gradient-noise stream.
const NOISE_STREAM: u64 = 0x9E37;

pub enum Model {
    Quadratic(QuadraticProblem),
    Mlp {
        problem: MlpProblem,
        /// Fixed subset used for Hessian-vector products.
        hessian_batch: Vec<usize>,
    },
}

/// A built problem plus its starting point.
pub struct Setup {
    pub model: Model,
    pub theta0: Vec<f64>,
    pub partition: BlockPartition,
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let p = &cfg.problem;
        match p.kind {
            ProblemKind::Quadratic => {
                let eigs = match p.spectrum {
                    SpectrumKind::LogSpaced => log_spaced(p.dim, p.lambda_max, p.lambda_min),
                    SpectrumKind::Outlier => outlier_spectrum(
                        p.dim,
                        p.outliers,
                        p.lambda_max,
                        p.outlier_min,
                        p.bulk_max,
                        p.lambda_min,
                    ),
                    SpectrumKind::Explicit => p.eigenvalues.clone(),
                };
                let q = if p.rotate {
                    QuadraticProblem::with_random_rotation(eigs, cfg.seed)?
                } else {
                    QuadraticProblem::new(eigs, None)?
                };
                let q = q.with_noise(p.noise)?;
                let dim = q.dim();
                let theta0 = match p.x0 {
                    InitKind::Ones => vec![1.0; dim],
                    InitKind::Gaussian => {
                        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                        (0..dim).map(|_| rng.sample(StandardNormal)).collect()
                    }
                    InitKind::Explicit if p.x0_values.len() == dim => p.x0_values.clone(),
                    InitKind::Explicit => {
                        return Err(Error::Dimension(format!(
                            "problem.x0_values has {} entries for a {dim}-dimensional problem",
                            p.x0_values.len()
                        )))
                    }
                };
                Ok(Self {
                    model: Model::Quadratic(q),
                    theta0,
                    partition: BlockPartition::single(dim)?,
                })
            }
            ProblemKind::TwoMoons | ProblemKind::Csv => {
                let data = match (&p.path, p.kind) {
                    (Some(path), ProblemKind::Csv) => load_csv_dataset(Path::new(path))?,
                    _ => make_two_moons(p.samples, p.moon_noise, cfg.seed)?,
                };
                let mut widths = vec![data.num_features()];
                widths.extend(&p.hidden);
                widths.push(data.num_classes().max(2));
                let n = data.len();
                let problem = MlpProblem::new(widths, p.activation, p.loss, data, p.bias)?;
                let blocks = problem
                    .param_blocks()
                    .into_iter()
                    .map(|(name, r)| (name, r, Role::MlpLike))
                    .collect();
                Ok(Self {
                    theta0: problem.init_params(cfg.seed),
                    partition: BlockPartition::new(blocks)?,
                    model: Model::Mlp {
                        problem,
                        hessian_batch: abridged_indices(n, HESSIAN_BATCH, cfg.seed),
                    },
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn quadratic(&self) -> Option<&QuadraticProblem> {
        match &self.model {
            Model::Quadratic(q) => Some(q),
            Model::Mlp { .. } => None,
        }
    }

    /// Objective used for reporting: exact loss on quadratics, full-batch loss on MLPs.
    pub fn loss(&self, theta: &[f64]) -> Result<f64> {
        match &self.model {
            Model::Quadratic(q) => q.loss(theta),
            Model::Mlp { problem, .. } => problem.loss(theta, &problem.full_batch()),
        }
    }

    pub fn accuracy(&self, theta: &[f64]) -> Result<Option<f64>> {
        match &self.model {
            Model::Quadratic(_) => Ok(None),
            Model::Mlp { problem, .. } => problem.accuracy(theta, &problem.full_batch()).map(Some),
        }
    }

    /// Noise-free full gradient.
    pub fn full_grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match &self.model {
            Model::Quadratic(q) => q.quadratic_grad(theta),
            Model::Mlp { problem, .. } => Ok(problem.mlp_grad(theta, &problem.full_batch())?.1),
        }
    }

    pub fn with_oracle<T>(&self, f: impl FnOnce(&dyn HvpOracle) -> Result<T>) -> Result<T> {
        match &self.model {
            Model::Quadratic(q) => f(q),
            Model::Mlp {
                problem,
                hessian_batch,
            } => f(&MlpOracle::new(problem, hessian_batch.clone())?),
        }
    }
}

/// Per-step trace of one training run.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `losses[t]` is the loss after `t` steps.
    pub losses: Vec<f64>,
    pub records: Vec<MetricsRecord>,
    pub theta: Vec<f64>,
    /// Largest BSFA auxiliary footprint seen, in bytes.
    pub aux_bytes_peak: usize,
    /// Why the run stopped early, if it did.
    pub aborted: Option<String>,
}

impl Trace {
    fn abort(mut self, run: &str, step: u64, why: &str) -> Self {
        self.aborted = Some(format!("{run}: poisoned state at step {step}: {why}"));
        self
    }

    /// The trace itself, or a poisoned-state error if the run stopped early.
    pub fn complete(self) -> Result<Self> {
        match self.aborted {
            Some(m) => Err(Error::Poisoned(m)),
            None => Ok(self),
        }
    }

    /// Trailing mean of the last `w` losses ending at step `t`.
    pub fn smoothed(&self, t: usize, w: usize) -> f64 {
        let lo = (t + 1).saturating_sub(w);
        let xs = &self.losses[lo..=t];
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    pub fn final_loss(&self, w: usize) -> f64 {
        self.smoothed(self.losses.len() - 1, w)
    }

    /// First step whose smoothed loss is at or below `target`.
    pub fn first_hit(&self, target: f64, w: usize) -> Option<usize> {
        (0..self.losses.len()).find(|&t| self.smoothed(t, w) <= target)
    }

    /// Single-step relative loss increases above `ratio`.
    pub fn spikes(&self, ratio: f64) -> usize {
        self.losses
            .windows(2)
            .filter(|w| w[1] > (1.0 + ratio) * w[0])
            .count()
    }
}

pub fn schedule(cfg: &ExperimentConfig, lr_max: f64) -> Result<LrSchedule> {
    let total = cfg.steps as u64;
    match cfg.schedule.kind {
        ScheduleKind::Constant => LrSchedule::constant(lr_max, total),
        ScheduleKind::Cosine => LrSchedule::new(
            cfg.schedule.warmup,
            total,
            lr_max,
            lr_max * cfg.schedule.min_ratio,
        ),
    }
}

/// What an observer sees after each training step.
pub struct StepView<'a> {
    pub step: u64,
    pub theta: &'a [f64],
    /// The base optimizer's update before any projection.
    pub update: &'a [f64],
    pub record: &'a mut MetricsRecord,
}

pub type Observer<'o> = &'o mut dyn FnMut(StepView<'_>) -> Result<()>;

/// Trains from `setup.theta0` for `cfg.steps` steps at peak rate `lr_max`,
/// optionally wrapping the base optimizer with BSFA. Records every step,
/// with accuracy every `probe.every` steps.
///
/// A poisoned state (any non-finite value in a step) ends the run early;
/// the partial trace comes back with [`Trace::aborted`] naming the step.
pub fn train(
    setup: &Setup,
    cfg: &ExperimentConfig,
    lr_max: f64,
    bsfa: Option<&BsfaConfig>,
    run: &str,
    clock: Instant,
    mut observer: Option<Observer<'_>>,
) -> Result<Trace> {
    let sched = schedule(cfg, lr_max)?;
    let dim = setup.dim();
    let blocks = setup
        .partition
        .blocks()
        .iter()
        .map(|b| b.range.clone())
        .collect();
    let mut opt =
        OptimizerState::with_blocks(cfg.optim.kind, cfg.optim.hyperparams(lr_max), dim, blocks)?;
    let mut state = bsfa
        .map(|c| BsfaState::new(c.clone(), setup.partition.clone()))
        .transpose()?;
    let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed ^ NOISE_STREAM);
    let mut sampler = match &setup.model {
        Model::Mlp { problem, .. } if cfg.optim.batch > 0 => Some(BatchSampler::new(
            problem.data().len(),
            cfg.optim.batch,
            cfg.seed,
        )?),
        _ => None,
    };
    let ms = |c: Instant| c.elapsed().as_secs_f64() * 1e3;
    let every = cfg.probe.every as u64;

    let mut tr = Trace {
        losses: Vec::with_capacity(cfg.steps + 1),
        records: Vec::with_capacity(cfg.steps + 1),
        theta: setup.theta0.clone(),
        aux_bytes_peak: 0,
        aborted: None,
    };
    let l0 = setup.loss(&tr.theta)?;
    if !l0.is_finite() {
        return Err(Error::Poisoned(format!("{run}: non-finite initial loss")));
    }
    tr.losses.push(l0);
    let mut rec = MetricsRecord::new(0, ms(clock), l0, sched.lr_at(0)?).with("run", run);
    rec.accuracy = setup.accuracy(&tr.theta)?;
    tr.records.push(rec);

    for t in 0..cfg.steps as u64 {
        let lr = sched.lr_at(t)?;
        opt.hyper.lr = lr;
        let theta = &mut tr.theta;
        let g = match &setup.model {
            Model::Quadratic(q) => q.sample_grad(theta, &mut noise)?,
            Model::Mlp { problem, .. } => {
                let batch = match sampler.as_mut() {
                    Some(s) => s.next_batch(),
                    None => problem.full_batch(),
                };
                problem.mlp_grad(theta, &batch)?.1
            }
        };
        let g = if cfg.optim.clip > 0.0 {
            clip_global_norm(&g, cfg.optim.clip)
        } else {
            g
        };
        let base = match opt.compute_update(&g, theta) {
            Ok(v) => v,
            Err(Error::Poisoned(m)) => return Ok(tr.abort(run, t, &m)),
            Err(e) => return Err(e),
        };
        let v = match state.as_mut() {
            None => base.clone(),
            Some(s) => {
                let out = setup.with_oracle(|oracle| {
                    s.step(
                        &base,
                        RefreshContext {
                            oracle: Some(oracle),
                            theta: Some(theta),
                            gradient: Some(&g),
                        },
                    )
                });
                tr.aux_bytes_peak = tr.aux_bytes_peak.max(s.auxiliary_bytes());
                match out {
                    Ok(v) => v,
                    Err(Error::Poisoned(m)) => return Ok(tr.abort(run, t, &m)),
                    Err(e) => return Err(e),
                }
            }
        };
        theta.iter_mut().zip(&v).for_each(|(x, d)| *x += d);
        let loss = setup.loss(theta)?;
        if !loss.is_finite() {
            return Ok(tr.abort(run, t + 1, "non-finite loss"));
        }
        tr.losses.push(loss);
        let mut rec = MetricsRecord::new(t + 1, ms(clock), loss, lr).with("run", run);
        if (t + 1) % every == 0 {
            rec.accuracy = setup.accuracy(theta)?;
        }
        if let Some(obs) = observer.as_mut() {
            obs(StepView {
                step: t + 1,
                theta,
                update: &base,
                record: &mut rec,
            })?;
        }
        tr.records.push(rec);
    }
    Ok(tr)
}

/// Baseline learning-rate selection over the tuning grid by best smoothed
/// final loss; diverging grid points count as infinitely bad.
pub struct Tuned {
    pub lr: f64,
    pub grid: Vec<(f64, f64)>,
    pub baseline: Trace,
}

pub fn tune_baseline(setup: &Setup, cfg: &ExperimentConfig, clock: Instant) -> Result<Tuned> {
    let grid = if cfg.optim.tune {
        cfg.optim.tuning_grid()
    } else {
        vec![cfg.optim.lr_max]
    };
    let w = cfg.probe.smooth;
    let mut best: Option<(f64, Trace)> = None;
    let mut scores = Vec::with_capacity(grid.len());
    for &lr in &grid {
        match train(setup, cfg, lr, None, "baseline", clock, None)?.complete() {
            Ok(tr) => {
                let f = tr.final_loss(w);
                scores.push((lr, f));
                if best.as_ref().map_or(true, |(_, b)| f < b.final_loss(w)) {
                    best = Some((lr, tr));
                }
            }
            Err(Error::Poisoned(_)) => scores.push((lr, f64::INFINITY)),
            Err(e) => return Err(e),
        }
    }
    let (lr, baseline) = best
        .ok_or_else(|| Error::Poisoned("every learning rate in the tuning grid diverged".into()))?;
    Ok(Tuned {
        lr,
        grid: scores,
        baseline,
    })
}
