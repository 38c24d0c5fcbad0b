use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::bsfa::{BsfaConfig, EstimatorKind, HistorySource};
use crate::error::{Error, Result};
use crate::optim::{Hyperparams, OptimizerKind};
use crate::problems::{Activation, LossKind};
use crate::subspace::Role;

macro_rules! keyword_enum {
    ($(#[$m:meta])* $name:ident, $what:literal { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name {
            $($var),+
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$var),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $(Self::$var => $s),+
                })
            }
        }
    };
}

keyword_enum!(ExperimentKind, "experiment" {
    Prop1 => "prop1",
    Dichotomy => "dichotomy",
    Sweep => "sweep",
    Train => "train",
    Agreement => "agreement",
    Variance => "variance",
    QuantCompare => "quant_compare",
});

keyword_enum!(ProblemKind, "problem kind" {
    Quadratic => "quadratic",
    TwoMoons => "two_moons",
    Csv => "csv",
});

keyword_enum!(
    /// How the quadratic's eigenvalues are generated.
    SpectrumKind, "spectrum" {
    LogSpaced => "log_spaced",
    Outlier => "outlier",
    Explicit => "explicit",
});

keyword_enum!(InitKind, "initialization" {
    Ones => "ones",
    Gaussian => "gaussian",
    Explicit => "explicit",
});

keyword_enum!(ScheduleKind, "schedule" {
    Constant => "constant",
    Cosine => "cosine",
});

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub dim: usize,
    pub spectrum: SpectrumKind,
    pub eigenvalues: Vec<f64>,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub outliers: usize,
    pub outlier_min: f64,
    pub bulk_max: f64,
    pub rotate: bool,
    /// Standard deviation of the gradient noise on quadratics.
    pub noise: f64,
    pub x0: InitKind,
    /// Starting point for `x0 = explicit`, in the problem's coordinates.
    pub x0_values: Vec<f64>,
    pub samples: usize,
    pub moon_noise: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
    pub bias: bool,
    pub path: Option<String>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Quadratic,
            dim: 200,
            spectrum: SpectrumKind::LogSpaced,
            eigenvalues: Vec::new(),
            lambda_max: 10.0,
            lambda_min: 1e-3,
            outliers: 10,
            outlier_min: 5.0,
            bulk_max: 0.5,
            rotate: true,
            noise: 0.0,
            x0: InitKind::Gaussian,
            x0_values: Vec::new(),
            samples: 256,
            moon_noise: 0.1,
            hidden: vec![32],
            activation: Activation::Tanh,
            loss: LossKind::CrossEntropy,
            bias: true,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr_max: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Minibatch size; 0 means full batch.
    pub batch: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip: f64,
    /// Select `lr_max` from `grid` by best final baseline loss.
    pub tune: bool,
    /// Tuning grid; empty means `lr_max × {¼, ½, 1, 2, 4}`.
    pub grid: Vec<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        Self {
            kind: OptimizerKind::Sgdm,
            lr_max: 0.1,
            momentum: h.momentum,
            beta1: h.beta1,
            beta2: h.beta2,
            eps: h.eps,
            weight_decay: h.weight_decay,
            batch: 0,
            clip: 0.0,
            tune: false,
            grid: Vec::new(),
        }
    }
}

impl OptimConfig {
    pub fn hyperparams(&self, lr: f64) -> Hyperparams {
        Hyperparams {
            lr,
            momentum: self.momentum,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn tuning_grid(&self) -> Vec<f64> {
        if self.grid.is_empty() {
            [0.25, 0.5, 1.0, 2.0, 4.0]
                .iter()
                .map(|m| m * self.lr_max)
                .collect()
        } else {
            self.grid.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub warmup: u64,
    /// Final learning rate as a fraction of `lr_max` (cosine only).
    pub min_ratio: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Constant,
            warmup: 0,
            min_ratio: 0.05,
        }
    }
}

/// Experiment-specific knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Dimension of the tracked dominant subspace.
    pub k: usize,
    /// History window for diagnostic PCA.
    pub window: usize,
    /// Checkpoint step at which dichotomy branches split.
    pub switch: usize,
    /// Checkpoint and evaluation cadence.
    pub every: usize,
    pub burn_in: usize,
    /// Trailing-mean width used for "final loss" and target hits.
    pub smooth: usize,
    pub fit_from: u64,
    pub fit_to: u64,
    /// Run the (α, γ) grid in the dichotomy experiment.
    pub grid: bool,
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            k: 2,
            window: 8,
            switch: 300,
            every: 10,
            burn_in: 20,
            smooth: 10,
            fit_from: 10,
            fit_to: 40,
            grid: false,
            alphas: vec![0.1, 0.5, 1.0, 2.0, 3.0],
            gammas: vec![0.1, 0.5, 1.0, 2.0, 3.0],
        }
    }
}

/// Everything one experiment run depends on. The seed fully determines the run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub steps: usize,
    pub problem: ProblemConfig,
    pub optim: OptimConfig,
    pub schedule: ScheduleConfig,
    /// Present when any `bsfa.*` key is given.
    pub bsfa: Option<BsfaConfig>,
    pub probe: ProbeConfig,
    pub metrics_path: Option<String>,
    pub plots_path: Option<String>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            seed: 0,
            steps: 500,
            problem: ProblemConfig::default(),
            optim: OptimConfig::default(),
            schedule: ScheduleConfig::default(),
            bsfa: None,
            probe: ProbeConfig::default(),
            metrics_path: None,
            plots_path: None,
        }
    }

    /// Parses the flat `key = value` format. Blank lines and `#` comments are
    /// skipped; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, found {line:?}"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if pairs.iter().any(|(_, seen, _)| *seen == k) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate key {k:?}"),
                });
            }
            pairs.push((i + 1, k, v));
        }
        let kind = match pairs.iter().find(|(_, k, _)| *k == "experiment") {
            Some((_, _, v)) => v.parse()?,
            None => return Err(Error::Config("missing key \"experiment\"".into())),
        };
        let mut cfg = Self::new(kind);
        for (line, k, v) in pairs {
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(msg) => Error::Parse { line, msg },
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one dotted key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        if let Some(rest) = key.strip_prefix("bsfa.") {
            let b = self.bsfa.get_or_insert_with(BsfaConfig::default);
            match rest {
                "alpha" => b.alpha = num(key, v)?,
                "gamma" => b.gamma = num(key, v)?,
                "k" => b.k = num(key, v)?,
                "interval" => b.interval = num(key, v)?,
                "history" => b.history = num(key, v)?,
                "estimator" => b.estimator = v.parse::<EstimatorKind>()?,
                "exclude" => b.exclude = list::<Role>(key, v)?,
                "quantized" => b.quantized = num(key, v)?,
                "group_size" => b.group_size = num(key, v)?,
                "history_source" => b.history_source = v.parse::<HistorySource>()?,
                "lanczos_iters" => {
                    b.lanczos_iters = if v == "auto" {
                        None
                    } else {
                        Some(num(key, v)?)
                    }
                }
                "seed" => b.seed = num(key, v)?,
                _ => return Err(unknown(key)),
            }
            return Ok(());
        }
        let p = &mut self.problem;
        let o = &mut self.optim;
        let s = &mut self.schedule;
        let r = &mut self.probe;
        match key {
            "experiment" => self.experiment = v.parse()?,
            "seed" => self.seed = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "output.metrics" => self.metrics_path = opt_str(v),
            "output.plots" => self.plots_path = opt_str(v),
            "problem.kind" => p.kind = v.parse()?,
            "problem.dim" => p.dim = num(key, v)?,
            "problem.spectrum" => p.spectrum = v.parse()?,
            "problem.eigenvalues" => p.eigenvalues = list(key, v)?,
            "problem.lambda_max" => p.lambda_max = num(key, v)?,
            "problem.lambda_min" => p.lambda_min = num(key, v)?,
            "problem.outliers" => p.outliers = num(key, v)?,
            "problem.outlier_min" => p.outlier_min = num(key, v)?,
            "problem.bulk_max" => p.bulk_max = num(key, v)?,
            "problem.rotate" => p.rotate = num(key, v)?,
            "problem.noise" => p.noise = num(key, v)?,
            "problem.x0" => p.x0 = v.parse()?,
            "problem.x0_values" => p.x0_values = list(key, v)?,
            "problem.samples" => p.samples = num(key, v)?,
            "problem.moon_noise" => p.moon_noise = num(key, v)?,
            "problem.hidden" => p.hidden = list(key, v)?,
            "problem.activation" => p.activation = v.parse()?,
            "problem.loss" => p.loss = v.parse()?,
            "problem.bias" => p.bias = num(key, v)?,
            "problem.path" => p.path = opt_str(v),
            "optim.kind" => o.kind = v.parse()?,
            "optim.lr_max" => o.lr_max = num(key, v)?,
            "optim.momentum" => o.momentum = num(key, v)?,
            "optim.beta1" => o.beta1 = num(key, v)?,
            "optim.beta2" => o.beta2 = num(key, v)?,
            "optim.eps" => o.eps = num(key, v)?,
            "optim.weight_decay" => o.weight_decay = num(key, v)?,
            "optim.batch" => o.batch = num(key, v)?,
            "optim.clip" => o.clip = num(key, v)?,
            "optim.tune" => o.tune = num(key, v)?,
            "optim.grid" => o.grid = list(key, v)?,
            "schedule.kind" => s.kind = v.parse()?,
            "schedule.warmup" => s.warmup = num(key, v)?,
            "schedule.min_ratio" => s.min_ratio = num(key, v)?,
            "probe.k" => r.k = num(key, v)?,
            "probe.window" => r.window = num(key, v)?,
            "probe.switch" => r.switch = num(key, v)?,
            "probe.every" => r.every = num(key, v)?,
            "probe.burn_in" => r.burn_in = num(key, v)?,
            "probe.smooth" => r.smooth = num(key, v)?,
            "probe.fit_from" => r.fit_from = num(key, v)?,
            "probe.fit_to" => r.fit_to = num(key, v)?,
            "probe.grid" => r.grid = num(key, v)?,
            "probe.alphas" => r.alphas = list(key, v)?,
            "probe.gammas" => r.gammas = list(key, v)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let p = &self.problem;
        let o = &self.optim;
        let s = &self.schedule;
        let r = &self.probe;
        let mut out: Vec<(&str, String)> = vec![
            ("experiment", self.experiment.to_string()),
            ("seed", self.seed.to_string()),
            ("steps", self.steps.to_string()),
            ("problem.kind", p.kind.to_string()),
            ("problem.dim", p.dim.to_string()),
            ("problem.spectrum", p.spectrum.to_string()),
            ("problem.eigenvalues", join(&p.eigenvalues, real)),
            ("problem.lambda_max", real(&p.lambda_max)),
            ("problem.lambda_min", real(&p.lambda_min)),
            ("problem.outliers", p.outliers.to_string()),
            ("problem.outlier_min", real(&p.outlier_min)),
            ("problem.bulk_max", real(&p.bulk_max)),
            ("problem.rotate", p.rotate.to_string()),
            ("problem.noise", real(&p.noise)),
            ("problem.x0", p.x0.to_string()),
            ("problem.x0_values", join(&p.x0_values, real)),
            ("problem.samples", p.samples.to_string()),
            ("problem.moon_noise", real(&p.moon_noise)),
            ("problem.hidden", join(&p.hidden, ToString::to_string)),
            ("problem.activation", p.activation.to_string()),
            ("problem.loss", p.loss.to_string()),
            ("problem.bias", p.bias.to_string()),
            ("problem.path", p.path.clone().unwrap_or_default()),
            ("optim.kind", o.kind.to_string()),
            ("optim.lr_max", real(&o.lr_max)),
            ("optim.momentum", real(&o.momentum)),
            ("optim.beta1", real(&o.beta1)),
            ("optim.beta2", real(&o.beta2)),
            ("optim.eps", real(&o.eps)),
            ("optim.weight_decay", real(&o.weight_decay)),
            ("optim.batch", o.batch.to_string()),
            ("optim.clip", real(&o.clip)),
            ("optim.tune", o.tune.to_string()),
            ("optim.grid", join(&o.grid, real)),
            ("schedule.kind", s.kind.to_string()),
            ("schedule.warmup", s.warmup.to_string()),
            ("schedule.min_ratio", real(&s.min_ratio)),
            ("probe.k", r.k.to_string()),
            ("probe.window", r.window.to_string()),
            ("probe.switch", r.switch.to_string()),
            ("probe.every", r.every.to_string()),
            ("probe.burn_in", r.burn_in.to_string()),
            ("probe.smooth", r.smooth.to_string()),
            ("probe.fit_from", r.fit_from.to_string()),
            ("probe.fit_to", r.fit_to.to_string()),
            ("probe.grid", r.grid.to_string()),
            ("probe.alphas", join(&r.alphas, real)),
            ("probe.gammas", join(&r.gammas, real)),
        ];
        if let Some(b) = &self.bsfa {
            out.extend([
                ("bsfa.alpha", real(&b.alpha)),
                ("bsfa.gamma", real(&b.gamma)),
                ("bsfa.k", b.k.to_string()),
                ("bsfa.interval", b.interval.to_string()),
                ("bsfa.history", b.history.to_string()),
                ("bsfa.estimator", b.estimator.to_string()),
                ("bsfa.exclude", join(&b.exclude, ToString::to_string)),
                ("bsfa.quantized", b.quantized.to_string()),
                ("bsfa.group_size", b.group_size.to_string()),
                ("bsfa.history_source", b.history_source.to_string()),
                (
                    "bsfa.lanczos_iters",
                    b.lanczos_iters.map_or("auto".into(), |n| n.to_string()),
                ),
                ("bsfa.seed", b.seed.to_string()),
            ]);
        }
        if let Some(m) = &self.metrics_path {
            out.push(("output.metrics", m.clone()));
        }
        if let Some(m) = &self.plots_path {
            out.push(("output.plots", m.clone()));
        }
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Canonical text form; parsing it reproduces `self`.
    pub fn serialize(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Rejects configs whose experiment could not start, naming the violated
    /// inequality for hypothesis failures.
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if let Some(b) = &self.bsfa {
            b.validate()?;
        }
        self.optim.hyperparams(self.optim.lr_max).validate()?;
        let r = &self.probe;
        if r.k < 1 {
            return Err(Error::Hypothesis("k >= 1 violated (probe.k = 0)".into()));
        }
        if r.window < r.k {
            return Err(Error::Hypothesis(format!(
                "l >= k violated (probe.window = {}, probe.k = {})",
                r.window, r.k
            )));
        }
        if r.window <= 1 {
            return Err(Error::Hypothesis(format!(
                "l > 1 violated (probe.window = {})",
                r.window
            )));
        }
        if r.every == 0 || r.smooth == 0 {
            return Err(Error::Config(
                "probe.every and probe.smooth must be positive".into(),
            ));
        }
        if r.fit_from >= r.fit_to {
            return Err(Error::Config(
                "probe.fit_from must be below probe.fit_to".into(),
            ));
        }
        if !(self.optim.clip >= 0.0) {
            return Err(Error::Config("optim.clip must be >= 0".into()));
        }
        if (self.problem.x0 == InitKind::Explicit) == self.problem.x0_values.is_empty() {
            return Err(Error::Config(
                "problem.x0_values must be given exactly when problem.x0 = explicit".into(),
            ));
        }
        if self.problem.kind == ProblemKind::Csv && self.problem.path.is_none() {
            return Err(Error::Config(
                "problem.kind = csv needs problem.path".into(),
            ));
        }
        Ok(())
    }
}

fn unknown(key: &str) -> Error {
    Error::Config(format!("unknown key {key:?}"))
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn opt_str(v: &str) -> Option<String> {
    (!v.is_empty()).then(|| v.to_string())
}

fn real(x: &f64) -> String {
    format!("{x:?}")
}

fn join<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dotted_keys() {
        let c = ExperimentConfig::parse(
            "experiment = train\n# comment\nbsfa.alpha = 0.5\noptim.grid = 0.1, 0.2\nseed = 3\n",
        )
        .unwrap();
        assert_eq!(c.experiment, ExperimentKind::Train);
        assert_eq!(c.bsfa.as_ref().unwrap().alpha, 0.5);
        assert_eq!(c.optim.grid, vec![0.1, 0.2]);
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let e = ExperimentConfig::parse("experiment = train\nbsfa.alpah = 1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(ExperimentConfig::parse("experiment = train\nfoo = 1\n").is_err());
        assert!(ExperimentConfig::parse("seed = 1\n").is_err());
        assert!(ExperimentConfig::parse("experiment = train\nseed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn serialization_is_a_fixed_point() {
        let mut c = ExperimentConfig::new(ExperimentKind::Sweep);
        c.bsfa = Some(BsfaConfig {
            lanczos_iters: Some(7),
            exclude: vec![],
            ..BsfaConfig::default()
        });
        c.problem.eigenvalues = vec![5.0, 3.0, 1e-12];
        c.metrics_path = Some("m.jsonl".into());
        let text = c.serialize();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.serialize(), text);
    }

    #[test]
    fn hypothesis_violations_name_the_inequality() {
        let mut c = ExperimentConfig::new(ExperimentKind::Train);
        c.bsfa = Some(BsfaConfig {
            k: 5,
            history: 3,
            ..BsfaConfig::default()
        });
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("l >= k"), "{msg}");
        c.bsfa = Some(BsfaConfig {
            interval: 0,
            ..BsfaConfig::default()
        });
        assert!(c.validate().unwrap_err().to_string().contains("T >= 1"));
    }
}
