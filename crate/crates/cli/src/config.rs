//! Flags, per-experiment defaults and the resolved configuration.

use std::path::PathBuf;

use berngrad::estimators::{default_tau, EstimatorKind};
use berngrad::optim::ParamMode;
use clap::{Parser, ValueEnum};
use serde::Serialize;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    P1,
    P2,
    Subset,
    VarianceSweep,
    UnbiasednessAudit,
}

#[derive(Debug, Parser)]
#[command(
    name = "berngrad",
    version,
    about = "Gradient estimator experiments for Bernoulli latents",
    allow_negative_numbers = true
)]
pub struct Args {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    /// Repeatable. `ugc` takes --tau; `ugc:0.2` pins its threshold.
    #[arg(long = "estimator")]
    pub estimators: Vec<String>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Signal-to-noise ratio; the noise variance is beta'beta / SNR.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Independent seeds (dataset replicates for subset).
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub param_mode: Option<String>,
    /// Probe gradient variance every n-th iteration; 0 disables.
    #[arg(long)]
    pub variance_every: Option<usize>,
    #[arg(long)]
    pub variance_samples: Option<usize>,
    /// Draws per expected-loss estimate; 0 skips it.
    #[arg(long)]
    pub loss_samples: Option<usize>,
    /// Monte Carlo draws for the sweep and the audit.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Constant initial theta; the default depends on the experiment.
    #[arg(long)]
    pub init: Option<f64>,
    /// Comma-separated values of the last coordinate for the sweep.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Write theta columns into trajectory CSVs (`true`/`false`).
    #[arg(long, action = clap::ArgAction::Set)]
    pub record_theta: Option<bool>,
}

/// Starting point of a training run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Init {
    Constant { value: f64 },
    LogisticNormal,
}

/// Values an experiment runs with when a flag is absent.
#[derive(Clone, Debug, PartialEq)]
pub struct Defaults {
    pub estimators: &'static [&'static str],
    pub k: usize,
    pub t: f64,
    pub lr: f64,
    pub iterations: usize,
    pub mode: ParamMode,
    pub tau: Option<f64>,
    pub init: Init,
    pub trials: usize,
    pub variance_every: usize,
    pub variance_samples: usize,
    pub loss_samples: usize,
    pub samples: usize,
    pub snr: f64,
    pub lambda: f64,
    pub record_theta: bool,
}

pub const SUBSET_N: usize = 60;
pub const SUBSET_P: usize = 200;
pub const SUBSET_BETA: [f64; 3] = [3.0, 2.0, 1.5];
pub const SWEEP_GRID: [f64; 6] = [0.01, 0.025, 0.05, 0.1, 0.3, 0.5];
/// Smallest audit sample size whose standard errors mean anything.
pub const MIN_AUDIT_SAMPLES: usize = 1_000;
pub const MAX_AUDIT_K: usize = 8;

const TRAINING_ESTIMATORS: &[&str] = &["disarm", "reinforce-loo", "bitflip1", "ugc"];
const ALL_ESTIMATORS: &[&str] = &[
    "exact",
    "reinforce",
    "arm",
    "disarm",
    "reinforce-loo",
    "bitflip1",
    "bitflip-k",
    "ugc",
    "tugc",
];

pub fn defaults(experiment: Experiment) -> Defaults {
    let base = Defaults {
        estimators: TRAINING_ESTIMATORS,
        k: 20,
        t: 0.499,
        lr: 0.8,
        iterations: 1000,
        mode: ParamMode::ProjectedTheta,
        tau: None,
        init: Init::LogisticNormal,
        trials: 10,
        variance_every: 1,
        variance_samples: 100,
        loss_samples: 500,
        samples: 100_000,
        snr: 3.81,
        lambda: 1.0,
        record_theta: true,
    };
    match experiment {
        Experiment::P1 => base,
        Experiment::P2 => Defaults {
            lr: 2.0,
            mode: ParamMode::LogitSgd,
            tau: Some(0.2),
            init: Init::Constant { value: 0.2 },
            variance_samples: 1000,
            ..base
        },
        Experiment::Subset => Defaults {
            estimators: &["disarm", "bitflip1", "ugc"],
            k: SUBSET_P,
            lr: 0.01,
            iterations: 2000,
            tau: Some(0.33),
            init: Init::Constant { value: 0.1 },
            variance_every: 10,
            variance_samples: 5,
            loss_samples: 16,
            record_theta: false,
            ..base
        },
        Experiment::VarianceSweep => Defaults {
            estimators: ALL_ESTIMATORS,
            samples: 20_000,
            ..base
        },
        Experiment::UnbiasednessAudit => Defaults {
            estimators: &ALL_ESTIMATORS[1..],
            k: 6,
            samples: 200_000,
            ..base
        },
    }
}

/// Fully resolved settings, written to `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(serialize_with = "names")]
    pub estimators: Vec<EstimatorKind>,
    pub k: usize,
    pub t: f64,
    pub lr: f64,
    pub iterations: usize,
    pub tau: f64,
    pub snr: f64,
    pub lambda: f64,
    pub trials: usize,
    pub seed: u64,
    pub param_mode: ParamMode,
    pub init: Init,
    pub variance_every: usize,
    pub variance_samples: usize,
    pub loss_samples: usize,
    pub samples: usize,
    pub grid: Vec<f64>,
    pub record_theta: bool,
    pub n_obs: usize,
    pub beta: Vec<f64>,
    #[serde(skip)]
    pub out: PathBuf,
}

fn names<S: serde::Serializer>(ests: &[EstimatorKind], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(ests.iter().map(|e| e.to_string()))
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn parse_estimator(name: &str, tau: f64) -> Result<EstimatorKind, CliError> {
    if name.trim().eq_ignore_ascii_case("ugc") {
        return Ok(EstimatorKind::Ugc { tau });
    }
    name.parse().map_err(|e: berngrad::Error| bad(e.to_string()))
}

impl ExperimentConfig {
    pub fn resolve(args: Args) -> Result<Self, CliError> {
        let d = defaults(args.experiment);
        let k = args.k.unwrap_or(d.k);
        let tau = args.tau.or(d.tau).unwrap_or_else(|| default_tau(k));
        let names: Vec<String> = if args.estimators.is_empty() {
            d.estimators.iter().map(|s| s.to_string()).collect()
        } else {
            args.estimators
        };
        let estimators = names
            .iter()
            .map(|n| parse_estimator(n, tau))
            .collect::<Result<Vec<_>, _>>()?;
        let param_mode = match args.param_mode {
            Some(m) => m.parse().map_err(|e: berngrad::Error| bad(e.to_string()))?,
            None => d.mode,
        };
        let cfg = ExperimentConfig {
            experiment: args.experiment,
            estimators,
            k,
            t: args.t.unwrap_or(d.t),
            lr: args.lr.unwrap_or(d.lr),
            iterations: args.iters.unwrap_or(d.iterations),
            tau,
            snr: args.snr.unwrap_or(d.snr),
            lambda: args.lambda.unwrap_or(d.lambda),
            trials: args.trials.unwrap_or(d.trials),
            seed: args.seed,
            param_mode,
            init: args.init.map_or(d.init, |value| Init::Constant { value }),
            variance_every: args.variance_every.unwrap_or(d.variance_every),
            variance_samples: args.variance_samples.unwrap_or(d.variance_samples),
            loss_samples: args.loss_samples.unwrap_or(d.loss_samples),
            samples: args.samples.unwrap_or(d.samples),
            grid: args.grid.unwrap_or_else(|| SWEEP_GRID.to_vec()),
            record_theta: args.record_theta.unwrap_or(d.record_theta),
            n_obs: SUBSET_N,
            beta: SUBSET_BETA.to_vec(),
            out: args.out,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.k == 0 {
            return Err(bad("--K must be positive"));
        }
        if self.estimators.is_empty() {
            return Err(bad("no estimators selected"));
        }
        for (i, e) in self.estimators.iter().enumerate() {
            if self.estimators[..i].iter().any(|o| o.name() == e.name()) {
                return Err(bad(format!("estimator `{}` given twice", e.name())));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 0.5) {
            return Err(bad(format!("--tau must lie in (0, 0.5], got {}", self.tau)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad(format!("--lr must be positive, got {}", self.lr)));
        }
        if self.trials == 0 {
            return Err(bad("--trials must be positive"));
        }
        if !self.t.is_finite() {
            return Err(bad("--t must be finite"));
        }
        if self.variance_every > 0 && self.variance_samples < 2 {
            return Err(bad("--variance-samples must be at least 2"));
        }
        if let Init::Constant { value } = self.init {
            if !(0.0..=1.0).contains(&value) {
                return Err(bad(format!("--init must lie in [0, 1], got {value}")));
            }
        }
        match self.experiment {
            Experiment::Subset => {
                if self.k != SUBSET_P {
                    return Err(bad(format!("subset runs with p = {SUBSET_P} predictors")));
                }
                if !(self.snr > 0.0 && self.snr.is_finite()) {
                    return Err(bad("--snr must be positive"));
                }
                if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
                    return Err(bad("--lambda must be non-negative"));
                }
            }
            Experiment::VarianceSweep => {
                if self.samples < 2 {
                    return Err(bad("--samples must be at least 2"));
                }
                if self.grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
                    return Err(bad("--grid values must lie in [0, 1]"));
                }
                let needs_enum = self.estimators.contains(&EstimatorKind::Exact);
                if needs_enum && self.k > berngrad::estimators::MAX_EXACT_K {
                    return Err(bad("exact enumeration needs --K <= 25"));
                }
            }
            Experiment::UnbiasednessAudit => {
                if self.k > MAX_AUDIT_K {
                    return Err(bad(format!("the audit enumerates 2^K points; use --K <= {MAX_AUDIT_K}")));
                }
                if self.samples < MIN_AUDIT_SAMPLES {
                    return Err(bad(format!(
                        "--samples {} is too small: standard errors from fewer than {MIN_AUDIT_SAMPLES} draws are too wide for a meaningful audit",
                        self.samples
                    )));
                }
            }
            Experiment::P1 | Experiment::P2 => {
                let needs_enum = self.estimators.contains(&EstimatorKind::Exact);
                if needs_enum && self.k > berngrad::estimators::MAX_EXACT_K {
                    return Err(bad("exact enumeration needs --K <= 25"));
                }
            }
        }
        Ok(())
    }
}
