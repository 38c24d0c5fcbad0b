//! The BSFA wrapper: every base-optimizer update passes through a projector
//! that scales its dominant and bulk components separately; the projector is
//! re-estimated every `T` steps from recent updates (PPE/BPPE) or from
//! Hessian-vector products (LPE).

use std::time::Instant;

use crate::error::{Error, Result};
use crate::numerics::{all_finite, DenseMatrix};
use crate::problems::HvpOracle;
use crate::quant::DEFAULT_GROUP_SIZE;
use crate::subspace::{
    bppe_estimate, lpe_estimate, ppe_estimate, BlockPartition, Projector, Role, UpdateHistory,
    LANCZOS_EXTRA_ITERS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Lpe,
    Ppe,
    Bppe,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lpe" => Ok(Self::Lpe),
            "ppe" => Ok(Self::Ppe),
            "bppe" => Ok(Self::Bppe),
            other => Err(Error::Config(format!("unknown estimator {other:?}"))),
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lpe => "lpe",
            Self::Ppe => "ppe",
            Self::Bppe => "bppe",
        })
    }
}

/// What the history window records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistorySource {
    /// The base optimizer's update before projection.
    Update,
    /// The raw gradient.
    Gradient,
}

impl std::str::FromStr for HistorySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "update" => Ok(Self::Update),
            "gradient" => Ok(Self::Gradient),
            other => Err(Error::Config(format!("unknown history source {other:?}"))),
        }
    }
}

impl std::fmt::Display for HistorySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Update => "update",
            Self::Gradient => "gradient",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsfaConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub k: usize,
    pub interval: u64,
    pub history: usize,
    pub estimator: EstimatorKind,
    pub exclude: Vec<Role>,
    pub quantized: bool,
    pub group_size: usize,
    pub history_source: HistorySource,
    /// Lanczos steps; `k + 20` when unset.
    pub lanczos_iters: Option<usize>,
    pub seed: u64,
}

impl Default for BsfaConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 4.0,
            k: 10,
            interval: 10,
            history: 20,
            estimator: EstimatorKind::Ppe,
            exclude: vec![Role::Embedding, Role::Output],
            quantized: false,
            group_size: DEFAULT_GROUP_SIZE,
            history_source: HistorySource::Update,
            lanczos_iters: None,
            seed: 0,
        }
    }
}

impl BsfaConfig {
    /// Checks `T ≥ 1`, `l ≥ k`, `l > 1`, `k ≥ 1` and `α, γ ≥ 0`, naming the
    /// first violated inequality.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Hypothesis(m));
        if self.interval < 1 {
            return fail(format!("T >= 1 violated (T = {})", self.interval));
        }
        if self.k < 1 {
            return fail("k >= 1 violated (k = 0)".into());
        }
        if self.history < self.k {
            return fail(format!(
                "l >= k violated (l = {}, k = {})",
                self.history, self.k
            ));
        }
        if self.history <= 1 {
            return fail(format!("l > 1 violated (l = {})", self.history));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha >= 0 violated (alpha = {})", self.alpha));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return fail(format!("gamma >= 0 violated (gamma = {})", self.gamma));
        }
        if self.quantized && self.group_size == 0 {
            return Err(Error::Config("group size must be positive".into()));
        }
        if self.lanczos_iters.is_some_and(|it| it < self.k) {
            return fail("lanczos iterations >= k violated".into());
        }
        Ok(())
    }

    pub fn lanczos_iterations(&self) -> usize {
        self.lanczos_iters.unwrap_or(self.k + LANCZOS_EXTRA_ITERS)
    }
}

/// Inputs an estimator may need on a refresh step.
#[derive(Clone, Copy, Default)]
pub struct RefreshContext<'a> {
    /// Required by LPE.
    pub oracle: Option<&'a dyn HvpOracle>,
    /// Current parameters, required by LPE.
    pub theta: Option<&'a [f64]>,
    /// Raw gradient, required when the history records gradients.
    pub gradient: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefreshRecord {
    pub step: u64,
    pub wall_ms: f64,
    /// Whether a new projector replaced the previous one.
    pub updated: bool,
    /// Dominant directions per block after the refresh.
    pub ranks: Vec<usize>,
}

/// Mutable state of one BSFA run.
#[derive(Debug, Clone)]
pub struct BsfaState {
    config: BsfaConfig,
    partition: BlockPartition,
    projector: Projector,
    history: UpdateHistory,
    t: u64,
    refreshes: Vec<RefreshRecord>,
    poisoned: bool,
}

impl BsfaState {
    /// `partition` describes the model's parameter blocks; it only shapes the
    /// projector for BPPE, while PPE and LPE treat the parameters as one block.
    pub fn new(config: BsfaConfig, partition: BlockPartition) -> Result<Self> {
        config.validate()?;
        let est_partition = match config.estimator {
            EstimatorKind::Bppe => partition.clone(),
            EstimatorKind::Ppe | EstimatorKind::Lpe => BlockPartition::single(partition.dim())?,
        };
        let history = if config.quantized {
            UpdateHistory::quantized(config.history, est_partition.clone(), config.group_size)?
        } else {
            UpdateHistory::new(config.history, est_partition.clone())?
        };
        Ok(Self {
            projector: Projector::identity(est_partition),
            config,
            partition,
            history,
            t: 0,
            refreshes: Vec::new(),
            poisoned: false,
        })
    }

    pub fn config(&self) -> &BsfaConfig {
        &self.config
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn history(&self) -> &UpdateHistory {
        &self.history
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn refreshes(&self) -> &[RefreshRecord] {
        &self.refreshes
    }

    pub fn model_partition(&self) -> &BlockPartition {
        &self.partition
    }

    /// Bytes held by the history window and the projector bases.
    pub fn auxiliary_bytes(&self) -> usize {
        self.history.stored_bytes() + self.projector.stored_bytes()
    }

    /// Transforms `v_t` into `v′_t`: refresh if due, project, then record.
    pub fn step(&mut self, v: &[f64], ctx: RefreshContext<'_>) -> Result<Vec<f64>> {
        if self.poisoned {
            return Err(Error::Poisoned("BSFA state already poisoned".into()));
        }
        if v.len() != self.partition.dim() {
            return Err(Error::Dimension(format!(
                "update of length {} for {} parameters",
                v.len(),
                self.partition.dim()
            )));
        }
        if !all_finite(v) {
            self.poisoned = true;
            return Err(Error::Poisoned(format!(
                "non-finite update at step {}",
                self.t
            )));
        }
        let record = match self.config.history_source {
            HistorySource::Update => v,
            HistorySource::Gradient => ctx.gradient.ok_or_else(|| {
                Error::Validation("gradient history needs the raw gradient".into())
            })?,
        };
        if record.len() != v.len() {
            return Err(Error::Dimension(
                "gradient and update lengths differ".into(),
            ));
        }
        if self.t > 0 && self.t % self.config.interval == 0 {
            self.refresh(ctx)?;
        }
        let out = self.projector.apply(v)?;
        if let Err(e) = self.history.push(record) {
            if matches!(e, Error::Poisoned(_)) {
                self.poisoned = true;
            }
            return Err(e);
        }
        self.t += 1;
        Ok(out)
    }

    fn refresh(&mut self, ctx: RefreshContext<'_>) -> Result<()> {
        let started = Instant::now();
        let c = &self.config;
        let estimate: Option<Projector> = match c.estimator {
            EstimatorKind::Ppe => match ppe_estimate(&self.history, 0, c.k) {
                Ok(u) => Some(Projector::new(
                    self.history.partition().clone(),
                    vec![Some(u)],
                    c.alpha,
                    c.gamma,
                    vec![false],
                )?),
                Err(Error::NotReady(_)) => None,
                Err(e) => return Err(e),
            },
            EstimatorKind::Bppe => {
                let p = bppe_estimate(
                    &self.history,
                    self.history.partition(),
                    c.k,
                    c.alpha,
                    c.gamma,
                    &c.exclude,
                )?;
                p.ranks().iter().any(|&r| r > 0).then_some(p)
            }
            EstimatorKind::Lpe => {
                let (Some(oracle), Some(theta)) = (ctx.oracle, ctx.theta) else {
                    return Err(Error::Validation(
                        "LPE refresh needs an oracle and the current parameters".into(),
                    ));
                };
                let est = lpe_estimate(
                    oracle,
                    theta,
                    c.k,
                    c.lanczos_iterations(),
                    c.seed.wrapping_add(self.t),
                )?;
                (est.basis.cols() == c.k)
                    .then(|| {
                        Projector::new(
                            self.history.partition().clone(),
                            vec![Some(est.basis)],
                            c.alpha,
                            c.gamma,
                            vec![false],
                        )
                    })
                    .transpose()?
            }
        };
        let updated = estimate.is_some();
        if let Some(p) = estimate {
            self.projector = if c.quantized {
                p.quantize(c.group_size)?
            } else {
                p
            };
        }
        self.refreshes.push(RefreshRecord {
            step: self.t,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            updated,
            ranks: self.projector.ranks(),
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DichotomyMode {
    DomOnly,
    BulkOnly,
    Full,
}

impl std::fmt::Display for DichotomyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::DomOnly => "dom_only",
            Self::BulkOnly => "bulk_only",
            Self::Full => "full",
        })
    }
}

/// One gradient step restricted to `span(U)` (dom_only), to its complement
/// (bulk_only), or unrestricted (full).
pub fn dichotomy_step(
    theta: &[f64],
    grad: &[f64],
    lr: f64,
    mode: DichotomyMode,
    u: &DenseMatrix,
) -> Result<Vec<f64>> {
    if theta.len() != grad.len() || u.rows() != grad.len() {
        return Err(Error::Dimension(format!(
            "parameters {}, gradient {}, basis rows {}",
            theta.len(),
            grad.len(),
            u.rows()
        )));
    }
    let dir = match mode {
        DichotomyMode::Full => grad.to_vec(),
        DichotomyMode::DomOnly | DichotomyMode::BulkOnly => {
            let dom = u.matvec(&u.t_matvec(grad)?)?;
            if mode == DichotomyMode::DomOnly {
                dom
            } else {
                grad.iter().zip(&dom).map(|(g, d)| g - d).collect()
            }
        }
    };
    Ok(theta.iter().zip(&dir).map(|(t, d)| t - lr * d).collect())
}
