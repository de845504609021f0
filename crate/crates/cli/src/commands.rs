//! One function per experiment. Each writes its files under `cfg.out` and
//! returns the numbers it reported so callers can check them directly.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use berngrad::estimators::{exact_gradient, EndpointPolicy, EstimatorKind};
use berngrad::objectives::{gen_regression, p1, p2, support_metrics, Objective, SubsetObjective};
use berngrad::optim::{logistic_normal_init, run_training, OptimizerConfig, TrainingOptions, Trajectory};
use berngrad::rng::{Purpose, RngStream};
use berngrad::types::ThetaVec;
use berngrad::variance::{
    analytic_var_bitflip1_p1, analytic_var_bitflip1_p2, analytic_var_disarm_p1, mc_variance_with, pairwise_sum,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig, Init};
use crate::CliError;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Mean and `sd / sqrt(n)`; the standard error is 0 for a single value.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let sd = (pairwise_sum(&sq) / (n - 1.0)).sqrt();
    (m, sd / n.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("config.json"), cfg)?;
    match cfg.experiment {
        Experiment::P1 | Experiment::P2 => cmd_training(cfg).map(|_| ()),
        Experiment::Subset => cmd_subset(cfg).map(|_| ()),
        Experiment::VarianceSweep => cmd_variance_sweep(cfg).map(|_| ()),
        Experiment::UnbiasednessAudit => {
            let audit = cmd_unbiasedness_audit(cfg)?;
            if audit.failures > 0 {
                return Err(CliError::AuditFailed(audit.failures, audit.rows.len()));
            }
            Ok(())
        }
    }
}

fn optimizer(cfg: &ExperimentConfig) -> OptimizerConfig {
    OptimizerConfig::new(cfg.param_mode, cfg.lr, cfg.iterations)
}

fn initial_theta(cfg: &ExperimentConfig, rng: &RngStream) -> Result<ThetaVec, CliError> {
    Ok(match cfg.init {
        Init::Constant { value } => ThetaVec::constant(cfg.k, value)?,
        Init::LogisticNormal => logistic_normal_init(cfg.k, rng),
    })
}

fn training_options(cfg: &ExperimentConfig) -> TrainingOptions {
    TrainingOptions {
        variance_every: cfg.variance_every,
        variance_samples: cfg.variance_samples,
        loss_samples: cfg.loss_samples,
        record_theta: cfg.record_theta,
    }
}

fn write_trajectory(path: &Path, tr: &Trajectory) -> Result<(), CliError> {
    tr.write_csv(create(path)?)?;
    Ok(())
}

/// Columns: `iter,evals_cum_mean,loss_mc_mean,loss_mc_se,loss_exact_mean,
/// loss_exact_se,var_mean,var_se`; `var_*` average the per-coordinate
/// variance over coordinates, then over trials. Missing values are empty.
pub fn write_aggregate(path: &Path, runs: &[Trajectory]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "iter",
        "evals_cum_mean",
        "loss_mc_mean",
        "loss_mc_se",
        "loss_exact_mean",
        "loss_exact_se",
        "var_mean",
        "var_se",
    ])?;
    let rows = runs[0].records.len();
    let pair = |xs: Option<Vec<f64>>| match xs {
        Some(v) => {
            let (m, se) = mean_se(&v);
            [m.to_string(), se.to_string()]
        }
        None => [String::new(), String::new()],
    };
    for i in 0..rows {
        let recs: Vec<_> = runs.iter().map(|r| &r.records[i]).collect();
        let evals: Vec<f64> = recs.iter().map(|r| r.evals_cum as f64).collect();
        let mc: Option<Vec<f64>> = recs.iter().map(|r| r.loss_mc).collect();
        let exact: Option<Vec<f64>> = recs.iter().map(|r| r.loss_exact).collect();
        let var: Option<Vec<f64>> = recs
            .iter()
            .map(|r| r.variance.as_ref().map(|v| pairwise_sum(v) / v.len() as f64))
            .collect();
        let mut row = vec![i.to_string(), mean_se(&evals).0.to_string()];
        row.extend(pair(mc));
        row.extend(pair(exact));
        row.extend(pair(var));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainingMetrics {
    pub estimator: String,
    /// Exact expected loss at the last iterate of each trial.
    pub final_loss_exact: Vec<f64>,
    pub final_loss_exact_mean: f64,
    pub final_loss_exact_se: f64,
    pub final_loss_exact_median: f64,
    pub evals_total_mean: f64,
}

fn objective_for(cfg: &ExperimentConfig) -> Box<dyn Objective> {
    match cfg.experiment {
        Experiment::P2 => Box::new(p2(cfg.k, cfg.t)),
        _ => Box::new(p1(cfg.k, cfg.t)),
    }
}

/// P1 and P2: `trials` seeds per estimator, sharing initial points across
/// estimators.
pub fn cmd_training(cfg: &ExperimentConfig) -> Result<Vec<TrainingMetrics>, CliError> {
    fs::create_dir_all(&cfg.out)?;
    let opt = optimizer(cfg);
    let opts = training_options(cfg);
    let mut all = Vec::new();
    for est in &cfg.estimators {
        let dir = cfg.out.join(est.name());
        fs::create_dir_all(&dir)?;
        let runs = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|r| {
                let rng = RngStream::new(cfg.seed).for_trial(r);
                let init = initial_theta(cfg, &rng)?;
                let f = objective_for(cfg);
                let tr = run_training(f.as_ref(), est, &opt, &init, &rng, &opts)?;
                write_trajectory(&dir.join(format!("trial_{r}.csv")), &tr)?;
                Ok(tr)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        write_aggregate(&dir.join("aggregate.csv"), &runs)?;
        let finals: Vec<f64> = runs
            .iter()
            .map(|r| r.final_record().loss_exact.expect("toy objectives have closed forms"))
            .collect();
        let evals: Vec<f64> = runs.iter().map(|r| r.final_record().evals_cum as f64).collect();
        let (m, se) = mean_se(&finals);
        println!("{:<14} final expected loss {m:.6} +/- {se:.6}", est.name());
        all.push(TrainingMetrics {
            estimator: est.name().to_string(),
            final_loss_exact_median: median(&finals),
            final_loss_exact: finals,
            final_loss_exact_mean: m,
            final_loss_exact_se: se,
            evals_total_mean: mean_se(&evals).0,
        });
    }
    write_json(&cfg.out.join("metrics.json"), &all)?;
    Ok(all)
}

#[derive(Clone, Debug, Serialize)]
pub struct SubsetMetrics {
    pub estimator: String,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr_mean: f64,
    pub tpr_sd: f64,
    pub fpr_mean: f64,
    pub fpr_sd: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let (m, se) = mean_se(xs);
    (m, se * (xs.len() as f64).sqrt())
}

/// Noise scale for a signal-to-noise ratio: `sigma^2 = beta'beta / snr`.
pub fn sigma_for_snr(beta: &[f64], snr: f64) -> f64 {
    (beta.iter().map(|b| b * b).sum::<f64>() / snr).sqrt()
}

/// Best-subset selection over `trials` simulated datasets; replicate `r`
/// uses the same data for every estimator.
pub fn cmd_subset(cfg: &ExperimentConfig) -> Result<Vec<SubsetMetrics>, CliError> {
    fs::create_dir_all(&cfg.out)?;
    let opt = optimizer(cfg);
    let opts = training_options(cfg);
    let mut beta = vec![0.0; cfg.k];
    beta[..cfg.beta.len()].copy_from_slice(&cfg.beta);
    let sigma = sigma_for_snr(&cfg.beta, cfg.snr);
    let support: Vec<usize> = (0..cfg.beta.len()).collect();

    let datasets = (0..cfg.trials as u64)
        .map(|r| {
            let rng = RngStream::new(cfg.seed).for_trial(r);
            Ok(gen_regression(cfg.n_obs, cfg.k, &beta, sigma, &rng)?.with_lambda(cfg.lambda))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut all = Vec::new();
    for est in &cfg.estimators {
        let dir = cfg.out.join(est.name());
        fs::create_dir_all(&dir)?;
        let per_rep = datasets
            .par_iter()
            .enumerate()
            .map(|(r, data)| {
                let rng = RngStream::new(cfg.seed).for_trial(r as u64);
                let init = initial_theta(cfg, &rng)?;
                let f = SubsetObjective::new(data.clone());
                let tr = run_training(&f, est, &opt, &init, &rng, &opts)?;
                write_trajectory(&dir.join(format!("trial_{r}.csv")), &tr)?;
                let m = support_metrics(&tr.final_theta(), &support)?;
                Ok((m.tpr, m.fpr))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let tpr: Vec<f64> = per_rep.iter().map(|p| p.0).collect();
        let fpr: Vec<f64> = per_rep.iter().map(|p| p.1).collect();
        let (tpr_mean, tpr_sd) = mean_sd(&tpr);
        let (fpr_mean, fpr_sd) = mean_sd(&fpr);
        println!(
            "{:<14} TPR {tpr_mean:.3} ({tpr_sd:.3})  FPR {fpr_mean:.3} ({fpr_sd:.3})",
            est.name()
        );
        all.push(SubsetMetrics {
            estimator: est.name().to_string(),
            tpr,
            fpr,
            tpr_mean,
            tpr_sd,
            fpr_mean,
            fpr_sd,
        });
    }
    let by_name: serde_json::Map<String, serde_json::Value> = all
        .iter()
        .map(|m| (m.estimator.clone(), serde_json::to_value(m).expect("plain struct")))
        .collect();
    write_json(&cfg.out.join("metrics.json"), &by_name)?;
    Ok(all)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub objective: &'static str,
    pub theta_last: f64,
    pub var_mc: f64,
    pub var_se: f64,
    pub var_analytic: Option<f64>,
}

fn analytic(objective: &str, est: &EstimatorKind, theta: &ThetaVec, t: f64) -> Option<f64> {
    let j = theta.len() - 1;
    match (objective, est) {
        (_, EstimatorKind::Exact) => Some(0.0),
        ("p1", EstimatorKind::Bitflip1) => Some(analytic_var_bitflip1_p1(theta.len(), t)),
        ("p1", EstimatorKind::Disarm) => analytic_var_disarm_p1(theta, j, t).ok(),
        ("p2", EstimatorKind::Bitflip1) => Some(analytic_var_bitflip1_p2(theta, j, t)),
        _ => None,
    }
}

/// Last coordinate's variance while it sweeps the grid with the others at
/// 1/2. Writes `sweep_<estimator>.csv` with columns
/// `objective,theta_last,var_mc,var_se,var_analytic`.
pub fn cmd_variance_sweep(cfg: &ExperimentConfig) -> Result<Vec<(String, Vec<SweepRow>)>, CliError> {
    fs::create_dir_all(&cfg.out)?;
    let objectives: [(&'static str, Box<dyn Objective>); 2] =
        [("p1", Box::new(p1(cfg.k, cfg.t))), ("p2", Box::new(p2(cfg.k, cfg.t)))];
    let mut all = Vec::new();
    for (e, est) in cfg.estimators.iter().enumerate() {
        let mut rows = Vec::new();
        for (name, f) in &objectives {
            for (i, &g) in cfg.grid.iter().enumerate() {
                let mut v = vec![0.5; cfg.k];
                v[cfg.k - 1] = g;
                let theta = ThetaVec::new(v)?;
                let rng = RngStream::new(cfg.seed)
                    .fork(Purpose::VarianceProbe)
                    .with_iteration(i as u64)
                    .with_replicate(e as u64);
                let rep = mc_variance_with(f.as_ref(), &theta, est, cfg.samples, &rng, EndpointPolicy::Freeze)?;
                rows.push(SweepRow {
                    objective: name,
                    theta_last: g,
                    var_mc: rep.raw[cfg.k - 1],
                    var_se: rep.var_se[cfg.k - 1],
                    var_analytic: analytic(name, est, &theta, cfg.t),
                });
            }
        }
        let mut w = csv::Writer::from_writer(create(&cfg.out.join(format!("sweep_{}.csv", est.name())))?);
        w.write_record(["objective", "theta_last", "var_mc", "var_se", "var_analytic"])?;
        for r in &rows {
            w.write_record([
                r.objective.to_string(),
                r.theta_last.to_string(),
                r.var_mc.to_string(),
                r.var_se.to_string(),
                r.var_analytic.map(|a| a.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        all.push((est.name().to_string(), rows));
    }
    Ok(all)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditRow {
    pub estimator: String,
    pub coord: usize,
    pub exact: f64,
    pub mc_mean: f64,
    pub se: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Audit {
    pub theta: Vec<f64>,
    pub rows: Vec<AuditRow>,
    pub failures: usize,
}

/// |z| above this fails the audit.
pub const AUDIT_Z: f64 = 4.0;

/// Draws theta from U(0.05, 0.95) once per seed, then compares each
/// estimator's Monte Carlo mean on P2 against the enumeration oracle.
/// Writes `audit.csv` and prints the table.
pub fn cmd_unbiasedness_audit(cfg: &ExperimentConfig) -> Result<Audit, CliError> {
    fs::create_dir_all(&cfg.out)?;
    let mut g = RngStream::new(cfg.seed).fork(Purpose::Audit).generator();
    let theta = ThetaVec::new((0..cfg.k).map(|_| g.uniform_range(0.05, 0.95)).collect())?;
    let f = p2(cfg.k, cfg.t);
    let exact = exact_gradient(&f, &theta)?.g;
    let mut rows = Vec::new();
    for (e, est) in cfg.estimators.iter().enumerate() {
        let rng = RngStream::new(cfg.seed).fork(Purpose::Audit).with_iteration(e as u64 + 1);
        let rep = mc_variance_with(&f, &theta, est, cfg.samples, &rng, EndpointPolicy::Reject)?;
        for (j, se) in rep.mean_se().into_iter().enumerate() {
            let diff = rep.mean[j] - exact[j];
            let z = if se > 0.0 {
                diff / se
            } else if diff.abs() <= 1e-9 {
                0.0
            } else {
                f64::INFINITY
            };
            rows.push(AuditRow {
                estimator: est.name().to_string(),
                coord: j,
                exact: exact[j],
                mc_mean: rep.mean[j],
                se,
                z,
                pass: z.abs() <= AUDIT_Z,
            });
        }
    }
    let failures = rows.iter().filter(|r| !r.pass).count();
    let mut w = csv::Writer::from_writer(create(&cfg.out.join("audit.csv"))?);
    w.write_record(["estimator", "coord", "exact", "mc_mean", "se", "z", "pass"])?;
    println!("{:<14} {:>5} {:>12} {:>12} {:>10} {:>7}", "estimator", "coord", "exact", "mc_mean", "se", "z");
    for r in &rows {
        w.write_record([
            r.estimator.clone(),
            r.coord.to_string(),
            r.exact.to_string(),
            r.mc_mean.to_string(),
            r.se.to_string(),
            r.z.to_string(),
            r.pass.to_string(),
        ])?;
        println!(
            "{:<14} {:>5} {:>12.6} {:>12.6} {:>10.6} {:>7.2}{}",
            r.estimator,
            r.coord,
            r.exact,
            r.mc_mean,
            r.se,
            r.z,
            if r.pass { "" } else { "  FAIL" }
        );
    }
    w.flush()?;
    println!("{} of {} checks within {AUDIT_Z} standard errors", rows.len() - failures, rows.len());
    Ok(Audit {
        theta: theta.into_inner(),
        rows,
        failures,
    })
}
