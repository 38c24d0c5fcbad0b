use std::time::Instant;

use serde_json::{json, Map, Value};

use super::config::{ExperimentConfig, ExperimentKind};
use super::metrics::{check_monotone, MetricsRecord};
use super::runs::{train, tune_baseline, Observer, Setup, StepView, Trace};
use crate::bsfa::{dichotomy_step, BsfaConfig, DichotomyMode, EstimatorKind};
use crate::error::{Error, Result};
use crate::numerics::{norm, sin_theta_distance, DenseMatrix};
use crate::subspace::{
    lpe_estimate, ppe_estimate, projection_variance, BlockPartition, Projector, SinThetaTracker,
    UpdateHistory, LANCZOS_EXTRA_ITERS,
};

/// Loss growth factor, relative to the reference step, that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Relative single-step loss increase counted as a spike.
pub const SPIKE_RATIO: f64 = 0.2;

/// Ritz-value gap (relative to the largest) below which a direction is
/// treated as degenerate with the bulk.
pub const DEGENERACY_GAP: f64 = 1e-3;

/// Metrics stream and summary of one experiment.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub experiment: ExperimentKind,
    pub records: Vec<MetricsRecord>,
    /// Deterministic scalar results keyed by name.
    pub summary: Map<String, Value>,
}

/// Validates `cfg` and runs its experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let clock = Instant::now();
    let (records, summary) = match cfg.experiment {
        ExperimentKind::Prop1 => prop1(cfg, clock)?,
        ExperimentKind::Dichotomy => dichotomy(cfg, clock)?,
        ExperimentKind::Sweep => sweep(cfg, clock)?,
        ExperimentKind::Train => train_experiment(cfg, clock)?,
        ExperimentKind::Agreement => agreement(cfg, clock)?,
        ExperimentKind::Variance => variance(cfg, clock)?,
        ExperimentKind::QuantCompare => quant_compare(cfg, clock)?,
    };
    check_monotone(&records)?;
    Ok(Outcome {
        experiment: cfg.experiment,
        records,
        summary,
    })
}

type Ran = (Vec<MetricsRecord>, Map<String, Value>);

fn ms(clock: Instant) -> f64 {
    clock.elapsed().as_secs_f64() * 1e3
}

fn summary(pairs: Vec<(&str, Value)>) -> Map<String, Value> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn hyp(msg: String) -> Error {
    Error::Hypothesis(msg)
}

fn needs_bsfa(cfg: &ExperimentConfig) -> Result<&BsfaConfig> {
    cfg.bsfa
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} needs bsfa.* settings", cfg.experiment)))
}

/// Gradient descent on a quadratic with equal trailing eigenvalues, tracking
/// how fast PCA of each gradient window converges to the top-k eigenspace.
fn prop1(cfg: &ExperimentConfig, clock: Instant) -> Result<Ran> {
    let setup = Setup::build(cfg)?;
    let q = setup
        .quadratic()
        .ok_or_else(|| Error::Config("prop1 needs problem.kind = quadratic".into()))?;
    if q.noise() != 0.0 {
        return Err(hyp(format!(
            "noise-free gradients violated (problem.noise = {})",
            q.noise()
        )));
    }
    let (k, l, eta) = (cfg.probe.k, cfg.probe.window, cfg.optim.lr_max);
    let eigs = q.eigenvalues();
    if k >= eigs.len() {
        return Err(hyp(format!("k < p violated (k = {k}, p = {})", eigs.len())));
    }
    let (lk, tail) = (eigs[k - 1], eigs[k]);
    if eigs[k..]
        .iter()
        .any(|&x| (x - tail).abs() > 1e-12 * tail.abs().max(1.0))
    {
        return Err(hyp("equal trailing eigenvalues violated".into()));
    }
    if !(eta * lk > 1.0) {
        return Err(hyp(format!(
            "eta*lambda_k > 1 violated (eta*lambda_k = {})",
            eta * lk
        )));
    }
    if !(eta * tail < 1.0) {
        return Err(hyp(format!(
            "eta*lambda_tail < 1 violated (eta*lambda_tail = {})",
            eta * tail
        )));
    }
    if !(eta * (lk + tail) > 2.0) {
        return Err(hyp(format!(
            "eta*(lambda_k + lambda_tail) > 2 violated (value {})",
            eta * (lk + tail)
        )));
    }
    let c = q.eigencoordinates(&setup.theta0)?;
    if let Some(j) = (0..k).find(|&j| c[j] == 0.0) {
        return Err(hyp(format!("c_j != 0 violated for j = {}", j + 1)));
    }

    let mu_k = 1.0 - eta * lk;
    let mu_tail = 1.0 - eta * tail;
    let rate = (mu_tail / mu_k).abs();

    let steps = cfg.steps;
    let mut x = setup.theta0.clone();
    let mut grads = Vec::with_capacity(steps + l);
    let mut losses = Vec::with_capacity(steps + 1);
    for s in 0..steps + l {
        if s <= steps {
            losses.push(q.loss(&x)?);
        }
        let g = q.quadratic_grad(&x)?;
        x.iter_mut().zip(&g).for_each(|(a, b)| *a -= eta * b);
        grads.push(g);
    }
    let truth = q.eigenvectors(k);
    let part = BlockPartition::single(q.dim())?;
    let mut tracker = SinThetaTracker::new();
    let mut records = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let mut h = UpdateHistory::new(l, part.clone())?;
        for g in &grads[t..t + l] {
            h.push(g)?;
        }
        let u = ppe_estimate(&h, 0, k)?;
        let s = tracker.track(t as u64, &u, &truth)?;
        let mut r = MetricsRecord::new(t as u64, ms(clock), losses[t], eta);
        r.sin_theta = Some(s);
        records.push(r);
    }
    let (from, to) = (cfg.probe.fit_from, cfg.probe.fit_to);
    let slope = tracker.log_slope(from, to);
    let in_fit: Vec<(u64, f64)> = tracker
        .records()
        .iter()
        .copied()
        .filter(|&(t, _)| t >= from && t <= to)
        .collect();
    let constant = in_fit
        .iter()
        .map(|&(t, s)| s / rate.powi(t as i32))
        .fold(0.0f64, f64::max);
    let monotone = in_fit.windows(2).all(|w| w[1].1 <= w[0].1);
    let at_end = tracker
        .records()
        .iter()
        .find(|&&(t, _)| t == to)
        .map(|&(_, s)| s);
    let mut out = summary(vec![
        ("eta_lambda_k", json!(eta * lk)),
        ("eta_lambda_tail", json!(eta * tail)),
        ("eta_lambda_sum", json!(eta * (lk + tail))),
        ("rate", json!(rate)),
        ("expected_slope", json!(rate.ln())),
        ("fit_from", json!(from)),
        ("fit_to", json!(to)),
        ("bound_constant", json!(constant)),
        ("monotone_after_burn_in", json!(monotone)),
    ]);
    if let Some(s) = slope {
        out.insert("slope".into(), json!(s));
        out.insert("slope_rel_error".into(), json!((s / rate.ln() - 1.0).abs()));
    }
    if let Some(s) = at_end {
        out.insert("sin_theta_at_fit_to".into(), json!(s));
    }
    Ok((records, out))
}

/// Top-`k` Hessian eigenvectors at `theta`: exact for quadratics, Lanczos otherwise.
fn dominant_basis(setup: &Setup, theta: &[f64], k: usize, seed: u64) -> Result<DenseMatrix> {
    if let Some(q) = setup.quadratic() {
        return Ok(q.eigenvectors(k));
    }
    setup.with_oracle(|o| Ok(lpe_estimate(o, theta, k, k + LANCZOS_EXTRA_ITERS, seed)?.basis))
}

fn diverged(loss: f64, reference: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_FACTOR * reference
}
/// Full-batch gradient descent to a checkpoint, then one branch per subspace
/// restriction plus an unrestricted control branch.
fn dichotomy(cfg: &ExperimentConfig, clock: Instant) -> Result<Ran> {
    let setup = Setup::build(cfg)?;
    let (lr, k, seed) = (cfg.optim.lr_max, cfg.probe.k, cfg.seed);
    let p = setup.dim();
    let none = DenseMatrix::zeros(p, 0);
    let mut records = Vec::new();

    let mut theta = setup.theta0.clone();
    let l0 = setup.loss(&theta)?;
    records.push(MetricsRecord::new(0, ms(clock), l0, lr).with("run", "pretrain"));
    for s in 0..cfg.probe.switch {
        let g = setup.full_grad(&theta)?;
        theta = dichotomy_step(&theta, &g, lr, DichotomyMode::Full, &none)?;
        let l = setup.loss(&theta)?;
        if !l.is_finite() {
            return Err(Error::Poisoned(format!(
                "pretraining diverged at step {}",
                s + 1
            )));
        }
        records.push(MetricsRecord::new(s as u64 + 1, ms(clock), l, lr).with("run", "pretrain"));
    }
    let switch = cfg.probe.switch as u64;
    let l_switch = setup.loss(&theta)?;

    let mut out = summary(vec![("loss_at_switch", json!(l_switch))]);
    let mut decrease = std::collections::BTreeMap::new();
    for mode in [
        DichotomyMode::Full,
        DichotomyMode::BulkOnly,
        DichotomyMode::DomOnly,
    ] {
        let name = mode.to_string();
        let mut th = theta.clone();
        let mut last = l_switch;
        let mut blew_up = false;
        for s in 0..cfg.steps {
            let g = setup.full_grad(&th)?;
            let u = match mode {
                DichotomyMode::Full => none.clone(),
                _ => dominant_basis(&setup, &th, k, seed)?,
            };
            th = dichotomy_step(&th, &g, lr, mode, &u)?;
            let l = setup.loss(&th)?;
            if diverged(l, l_switch) {
                blew_up = true;
                break;
            }
            last = l;
            records.push(
                MetricsRecord::new(switch + s as u64 + 1, ms(clock), l, lr)
                    .with("run", name.as_str()),
            );
        }
        out.insert(format!("{name}_final_loss"), json!(last));
        out.insert(format!("{name}_diverged"), json!(blew_up));
        decrease.insert(name, l_switch - last);
    }
    let full = decrease["full"];
    out.insert("full_decrease".into(), json!(full));
    out.insert("bulk_only_decrease".into(), json!(decrease["bulk_only"]));
    out.insert("dom_only_decrease".into(), json!(decrease["dom_only"]));
    if full > 0.0 {
        out.insert(
            "bulk_only_fraction".into(),
            json!(decrease["bulk_only"] / full),
        );
        out.insert(
            "dom_only_fraction".into(),
            json!(decrease["dom_only"] / full),
        );
    }

    if cfg.probe.grid {
        let mut grid = Vec::new();
        for &alpha in &cfg.probe.alphas {
            for &gamma in &cfg.probe.gammas {
                let run = format!("alpha={alpha:?},gamma={gamma:?}");
                let mut th = theta.clone();
                let mut last = l_switch;
                let mut blew_up = false;
                for s in 0..cfg.steps {
                    let g = setup.full_grad(&th)?;
                    let u = dominant_basis(&setup, &th, k, seed)?;
                    let d = Projector::from_basis(u, alpha, gamma)?.apply(&g)?;
                    th.iter_mut().zip(&d).for_each(|(x, y)| *x -= lr * y);
                    let l = setup.loss(&th)?;
                    if diverged(l, l_switch) {
                        blew_up = true;
                        break;
                    }
                    last = l;
                    records.push(
                        MetricsRecord::new(switch + s as u64 + 1, ms(clock), l, lr)
                            .with("run", run.as_str())
                            .with("alpha", alpha)
                            .with("gamma", gamma),
                    );
                }
                grid.push(json!({
                    "alpha": alpha,
                    "gamma": gamma,
                    "final_loss": last,
                    "diverged": blew_up,
                }));
            }
        }
        out.insert("grid".into(), Value::Array(grid));
    }
    Ok((records, out))
}

/// BSFA training over an (α, γ) grid, counting loss spikes and divergence.
fn sweep(cfg: &ExperimentConfig, clock: Instant) -> Result<Ran> {
    let setup = Setup::build(cfg)?;
    let base = cfg.bsfa.clone().unwrap_or_default();
    let mut records = Vec::new();
    let mut runs = Vec::new();
    for &alpha in &cfg.probe.alphas {
        for &gamma in &cfg.probe.gammas {
            let b = BsfaConfig {
                alpha,
                gamma,
                ..base.clone()
            };
            let run = format!("alpha={alpha:?},gamma={gamma:?}");
            let tr = train(&setup, cfg, cfg.optim.lr_max, Some(&b), &run, clock, None)?;
            let l0 = tr.losses[0];
            let blew_up = tr.aborted.is_some() || tr.losses.iter().any(|&l| diverged(l, l0));
            let mut entry = json!({
                "alpha": alpha,
                "gamma": gamma,
                "spikes": tr.spikes(SPIKE_RATIO),
                "diverged": blew_up,
            });
            if tr.aborted.is_none() {
                entry["final_loss"] = json!(tr.final_loss(cfg.probe.smooth));
            }
            runs.push(entry);
            records.extend(
                tr.records
                    .into_iter()
                    .map(|r| r.with("alpha", alpha).with("gamma", gamma)),
            );
        }
    }
    Ok((records, summary(vec![("runs", Value::Array(runs))])))
}

fn tuning_summary(out: &mut Map<String, Value>, lr: f64, grid: &[(f64, f64)]) {
    out.insert("selected_lr".into(), json!(lr));
    let grid: Vec<Value> = grid
        .iter()
        .map(|&(lr, f)| {
            if f.is_finite() {
                json!({ "lr": lr, "final_loss": f })
            } else {
                json!({ "lr": lr, "diverged": true })
            }
        })
        .collect();
    out.insert("grid".into(), Value::Array(grid));
}

/// Tuned baseline, plus a BSFA run at the selected rate when configured.
fn train_experiment(cfg: &ExperimentConfig, clock: Instant) -> Result<Ran> {
    let setup = Setup::build(cfg)?;
    let w = cfg.probe.smooth;
    let tuned = tune_baseline(&setup, cfg, clock)?;
    let base = tuned.baseline;
    let target = base.final_loss(w);
    let mut out = Map::new();
    tuning_summary(&mut out, tuned.lr, &tuned.grid);
    out.insert("baseline_final_loss".into(), json!(target));
    out.insert(
        "baseline_monotone".into(),
        json!(base.losses.windows(2).all(|x| x[1] <= x[0])),
    );
    if let Some(a) = setup.accuracy(&base.theta)? {
        out.insert("baseline_final_accuracy".into(), json!(a));
    }
    let mut records = base.records;
    if let Some(b) = &cfg.bsfa {
        let tr = train(&setup, cfg, tuned.lr, Some(b), "bsfa", clock, None)?.complete()?;
        out.insert("bsfa_final_loss".into(), json!(tr.final_loss(w)));
        match tr.first_hit(target, w) {
            Some(hit) => {
                out.insert("target_hit_step".into(), json!(hit));
                if hit > 0 {
                    out.insert("speedup".into(), json!(cfg.steps as f64 / hit as f64));
                }
            }
            None => {
                out.insert("target_hit_step".into(), Value::Null);
            }
        }
        if let Some(a) = setup.accuracy(&tr.theta)? {
            out.insert("bsfa_final_accuracy".into(), json!(a));
        }
        out.insert("aux_bytes_peak".into(), json!(tr.aux_bytes_peak));
        records.extend(tr.records);
    }
    Ok((records, out))
}

fn selected_lr(
    setup: &Setup,
    cfg: &ExperimentConfig,
    clock: Instant,
    out: &mut Map<String, Value>,
) -> Result<f64> {
    if !cfg.optim.tune {
        out.insert("selected_lr".into(), json!(cfg.optim.lr_max));
        return Ok(cfg.optim.lr_max);
    }
    let tuned = tune_baseline(setup, cfg, clock)?;
    tuning_summary(out, tuned.lr, &tuned.grid);
    out.insert(
        "baseline_final_loss".into(),
        json!(tuned.baseline.final_loss(cfg.probe.smooth)),
    );
    Ok(tuned.lr)
}

fn is_checkpoint(cfg: &ExperimentConfig, step: u64) -> bool {
    step >= cfg.probe.burn_in as u64 && step % cfg.probe.every as u64 == 0
}

/// PPE on the base optimizer's update window against LPE at the same point,
/// then (with BSFA configured) full BSFA runs with either estimator.
fn agreement(cfg: &ExperimentConfig, clock: Instant) -> Result<Ran> {
    let setup = Setup::build(cfg)?;
    let (k, seed) = (cfg.probe.k, cfg.seed);
    let truth = setup.quadratic().map(|q| q.eigenvectors(k));
    let mut history = UpdateHistory::new(cfg.probe.window, BlockPartition::single(setup.dim())?)?;
    let mut leading = Vec::new();
    let mut averages = Vec::new();
    let mut ppe_sin = Vec::new();
    let mut lpe_sin = Vec::new();
    let mut breakdowns = 0usize;

    let mut observe = |v: StepView<'_>| -> Result<()> {
        history.push(v.update)?;
        if !is_checkpoint(cfg, v.step) {
            return Ok(());
        }
        let u = match ppe_estimate(&history, 0, k) {
            Ok(u) => u,
            Err(Error::NotReady(_)) => return Ok(()),
            Err(e) => return Err(e),
        };
        let est = setup.with_oracle(|o| {
            lpe_estimate(
                o,
                v.theta,
                k + 1,
                k + 1 + LANCZOS_EXTRA_ITERS,
                seed.wrapping_add(v.step),
            )
        })?;
        let found = est.basis.cols();
        if est.breakdown {
            breakdowns += 1;
            v.record.extras.insert("lpe_breakdown".into(), json!(true));
        }
        let lam = &est.eigenvalues;
        let mut kept = Vec::new();
        for i in 0..k.min(found) {
            let proj = u.t_matvec(&est.basis.column(i))?;
            let sq = norm(&proj).powi(2);
            v.record.extras.insert(format!("proj_{}", i + 1), json!(sq));
            v.record
                .extras
                .insert(format!("lpe_lambda_{}", i + 1), json!(lam[i]));
            let degenerate = found > k && lam[i] - lam[k] <= DEGENERACY_GAP * lam[0].abs();
            if !degenerate {
                kept.push(sq);
            }
        }
        if let Some(&first) = kept.first() {
            leading.push(first);
            averages.push(kept.iter().sum::<f64>() / kept.len() as f64);
        }
        if let Some(t) = &truth {
            let s = sin_theta_distance(&u, t)?;
            v.record.sin_theta = Some(s);
            ppe_sin.push(s);
            if found >= k {
                let s = sin_theta_distance(&est.basis.leading_columns(k), t)?;
                v.record.extras.insert("lpe_sin_theta".into(), json!(s));
                lpe_sin.push(s);
            }
        }
        Ok(())
    };
    let probe = train(
        &setup,
        cfg,
        cfg.optim.lr_max,
        None,
        "probe",
        clock,
        Some(&mut observe as Observer<'_>),
    )?
    .complete()?;

    let min = |xs: &[f64]| xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |xs: &[f64]| xs.iter().copied().fold(0.0f64, f64::max);
    let mut out = summary(vec![
        ("checkpoints", json!(leading.len())),
        ("lpe_breakdowns", json!(breakdowns)),
    ]);
    if !leading.is_empty() {
        out.insert("leading_projection_min".into(), json!(min(&leading)));
        out.insert("average_projection_min".into(), json!(min(&averages)));
    }
    if !ppe_sin.is_empty() {
        out.insert("ppe_sin_theta_max".into(), json!(max(&ppe_sin)));
    }
    if !lpe_sin.is_empty() {
        out.insert("lpe_sin_theta_max".into(), json!(max(&lpe_sin)));
    }
    let mut records = probe.records;
    if let Some(b) = &cfg.bsfa {
        let lr = selected_lr(&setup, cfg, clock, &mut out)?;
        let w = cfg.probe.smooth;
        let mut finals = Vec::new();
        for (est, run) in [
            (EstimatorKind::Ppe, "bsfa_ppe"),
            (EstimatorKind::Lpe, "bsfa_lpe"),
        ] {
            let c = BsfaConfig {
                estimator: est,
                ..b.clone()
            };
            let tr = train(&setup, cfg, lr, Some(&c), run, clock, None)?.complete()?;
            finals.push(tr.final_loss(w));
            records.extend(tr.records);
        }
        out.insert("final_loss_ppe".into(), json!(finals[0]));
        out.insert("final_loss_lpe".into(), json!(finals[1]));
        out.insert(
            "final_loss_rel_gap".into(),
            json!((finals[1] - finals[0]).abs() / finals[0]),
        );
    }
    Ok((records, out))
}

/// Variance of the base optimizer's recent updates inside and outside the
/// dominant subspace.
fn variance(cfg: &ExperimentConfig, clock: Instant) -> Result<Ran> {
    let setup = Setup::build(cfg)?;
    let (k, seed) = (cfg.probe.k, cfg.seed);
    let mut history = UpdateHistory::new(cfg.probe.window, BlockPartition::single(setup.dim())?)?;
    let mut ratios = Vec::new();
    let mut observe = |v: StepView<'_>| -> Result<()> {
        history.push(v.update)?;
        if !is_checkpoint(cfg, v.step) || history.filled() < 2 {
            return Ok(());
        }
        let u = dominant_basis(&setup, v.theta, k, seed.wrapping_add(v.step))?;
        let (dom, bulk) = projection_variance(&history, &u)?;
        v.record.dom_var = Some(dom);
        v.record.bulk_var = Some(bulk);
        let ratio = if bulk > 0.0 {
            dom / bulk
        } else {
            f64::INFINITY
        };
        if ratio.is_finite() {
            v.record
                .extras
                .insert("variance_ratio".into(), json!(ratio));
        }
        ratios.push((v.step, ratio));
        Ok(())
    };
    let tr = train(
        &setup,
        cfg,
        cfg.optim.lr_max,
        None,
        "probe",
        clock,
        Some(&mut observe as Observer<'_>),
    )?
    .complete()?;
    let mut out = summary(vec![("checkpoints", json!(ratios.len()))]);
    let finite = |x: f64| {
        if x.is_finite() {
            json!(x)
        } else {
            json!("inf")
        }
    };
    if let Some(&(step, r)) = ratios.last() {
        out.insert("final_checkpoint".into(), json!(step));
        out.insert("final_ratio".into(), finite(r));
        let lo = ratios.iter().map(|&(_, r)| r).fold(f64::INFINITY, f64::min);
        out.insert("min_ratio".into(), finite(lo));
    }
    Ok((tr.records, out))
}

/// Full-precision and 4-bit BSFA from the same seed and learning rate.
fn quant_compare(cfg: &ExperimentConfig, clock: Instant) -> Result<Ran> {
    let setup = Setup::build(cfg)?;
    let b = needs_bsfa(cfg)?;
    let mut out = Map::new();
    let lr = selected_lr(&setup, cfg, clock, &mut out)?;
    let w = cfg.probe.smooth;
    let run = |quantized: bool, name: &str| -> Result<Trace> {
        let c = BsfaConfig {
            quantized,
            ..b.clone()
        };
        train(&setup, cfg, lr, Some(&c), name, clock, None)?.complete()
    };
    let full = run(false, "full")?;
    let quant = run(true, "quant")?;
    let (f, q) = (full.final_loss(w), quant.final_loss(w));
    out.insert("final_loss_full".into(), json!(f));
    out.insert("final_loss_quant".into(), json!(q));
    out.insert("final_loss_rel_gap".into(), json!((q - f).abs() / f));
    out.insert("aux_bytes_full".into(), json!(full.aux_bytes_peak));
    out.insert("aux_bytes_quant".into(), json!(quant.aux_bytes_peak));
    if full.aux_bytes_peak > 0 {
        out.insert(
            "aux_ratio".into(),
            json!(quant.aux_bytes_peak as f64 / full.aux_bytes_peak as f64),
        );
    }
    let mut records = full.records;
    records.extend(quant.records);
    Ok((records, out))
}
