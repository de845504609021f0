//! Update rules and the training loop.
//!
//! Streams used by [`run_training`] for iteration `i`:
//! gradient `base.with_iteration(i)`, loss `.fork(Loss)`, variance probe
//! `.fork(VarianceProbe)`.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EndpointPolicy, EstimatorKind};
use crate::objectives::Objective;
use crate::rng::{Purpose, RngStream};
use crate::types::{logit_transform, sample_bernoulli, sigmoid, sigmoid_transform, GradEstimate, LogitVec, ThetaVec};
use crate::variance::mc_variance_with;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamMode {
    ProjectedTheta,
    LogitSgd,
    LogitAdam,
}

impl ParamMode {
    pub fn name(&self) -> &'static str {
        match self {
            ParamMode::ProjectedTheta => "projected-theta",
            ParamMode::LogitSgd => "logit-sgd",
            ParamMode::LogitAdam => "logit-adam",
        }
    }
}

impl std::fmt::Display for ParamMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projected-theta" | "projected" => Ok(ParamMode::ProjectedTheta),
            "logit-sgd" => Ok(ParamMode::LogitSgd),
            "logit-adam" => Ok(ParamMode::LogitAdam),
            other => Err(Error::InvalidConfig(format!("unknown param mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub mode: ParamMode,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub iterations: usize,
}

impl OptimizerConfig {
    pub fn new(mode: ParamMode, learning_rate: f64, iterations: usize) -> Self {
        Self {
            mode,
            learning_rate,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            iterations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("adam {name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "adam epsilon must be positive, got {}",
                self.adam_epsilon
            )));
        }
        Ok(())
    }
}

/// `clamp(theta - lr g, 0, 1)`.
pub fn projected_step(theta: &ThetaVec, g: &GradEstimate, lr: f64) -> ThetaVec {
    let v = theta
        .values()
        .iter()
        .zip(&g.g)
        .map(|(&t, &gj)| (t - lr * gj).clamp(0.0, 1.0))
        .collect();
    ThetaVec::new(v).expect("clamped values are valid")
}

/// Plain descent on logits with theta-space gradients pushed through
/// `dtheta/dphi = theta (1 - theta)`.
pub fn logit_step(phi: &LogitVec, g: &GradEstimate, lr: f64) -> LogitVec {
    let v = phi
        .values()
        .iter()
        .zip(&g.g)
        .map(|(&p, &gj)| p - lr * chain(p, gj))
        .collect();
    LogitVec::new(v).expect("finite update of finite logits")
}

#[inline]
fn chain(phi: f64, g: f64) -> f64 {
    let t = sigmoid(phi);
    g * t * (1.0 - t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u32,
}

impl AdamState {
    pub fn new(k: usize) -> Self {
        Self {
            m: vec![0.0; k],
            v: vec![0.0; k],
            step: 0,
        }
    }
}

pub fn adam_logit_step(
    state: AdamState,
    phi: &LogitVec,
    g: &GradEstimate,
    config: &OptimizerConfig,
) -> (AdamState, LogitVec) {
    let AdamState { mut m, mut v, step } = state;
    let step = step + 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    let mut out = Vec::with_capacity(phi.len());
    for j in 0..phi.len() {
        let p = phi.values()[j];
        let gj = chain(p, g.g[j]);
        m[j] = b1 * m[j] + (1.0 - b1) * gj;
        v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
        let mhat = m[j] / c1;
        let vhat = v[j] / c2;
        out.push(p - config.learning_rate * mhat / (vhat.sqrt() + config.adam_epsilon));
    }
    (
        AdamState { m, v, step },
        LogitVec::new(out).expect("finite update of finite logits"),
    )
}

/// `theta_j = sigmoid(eps_j)` with `eps_j ~ N(0, 1)`.
pub fn logistic_normal_init(k: usize, rng: &RngStream) -> ThetaVec {
    let mut g = rng.fork(Purpose::Init).generator();
    ThetaVec::new((0..k).map(|_| sigmoid(g.standard_normal())).collect())
        .expect("sigmoid lands in [0, 1]")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingOptions {
    /// Probe every n-th iteration; 0 disables.
    pub variance_every: usize,
    pub variance_samples: usize,
    /// Fresh draws per loss estimate; 0 skips the MC loss.
    pub loss_samples: usize,
    pub record_theta: bool,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            variance_every: 0,
            variance_samples: 100,
            loss_samples: 500,
            record_theta: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub iteration: usize,
    pub loss_mc: Option<f64>,
    pub loss_exact: Option<f64>,
    pub evals_cum: u64,
    pub theta: Vec<f64>,
    pub variance: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub record_theta: bool,
}

impl Trajectory {
    pub fn final_record(&self) -> &Record {
        self.records.last().expect("a trajectory always holds the initial record")
    }

    pub fn final_theta(&self) -> ThetaVec {
        ThetaVec::new(self.final_record().theta.clone()).expect("recorded thetas are valid")
    }

    pub fn has_variance(&self) -> bool {
        self.records.iter().any(|r| r.variance.is_some())
    }

    /// Columns: `iter,loss_mc,loss_exact,evals_cum`, then `theta_*` when
    /// theta recording is on, then `var_*` when any probe ran. Missing
    /// values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let k = self.final_record().theta.len();
        let with_var = self.has_variance();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string(), "loss_mc".into(), "loss_exact".into(), "evals_cum".into()];
        if self.record_theta {
            header.extend((0..k).map(|j| format!("theta_{j}")));
        }
        if with_var {
            header.extend((0..k).map(|j| format!("var_{j}")));
        }
        w.write_record(&header)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![r.iteration.to_string(), opt(r.loss_mc), opt(r.loss_exact), r.evals_cum.to_string()];
            if self.record_theta {
                row.extend(r.theta.iter().map(f64::to_string));
            }
            if with_var {
                match &r.variance {
                    Some(v) => row.extend(v.iter().map(f64::to_string)),
                    None => row.extend(std::iter::repeat_n(String::new(), k)),
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mc_loss(f: &dyn Objective, theta: &ThetaVec, n: usize, rng: &RngStream) -> Result<Option<f64>> {
    if n == 0 {
        return Ok(None);
    }
    let mut g = rng.fork(Purpose::Loss).generator();
    let mut vals = Vec::with_capacity(n);
    for _ in 0..n {
        let v = f.eval(&sample_bernoulli(theta, &mut g));
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective(v));
        }
        vals.push(v);
    }
    Ok(Some(crate::variance::pairwise_sum(&vals) / n as f64))
}

enum Params {
    Theta(ThetaVec),
    Logit(LogitVec, Option<AdamState>),
}

impl Params {
    fn theta(&self) -> ThetaVec {
        match self {
            Params::Theta(t) => t.clone(),
            Params::Logit(phi, _) => sigmoid_transform(phi),
        }
    }
}

/// Runs `optimizer.iterations` steps from `init` and records the initial
/// state plus one row per step.
pub fn run_training(
    f: &dyn Objective,
    estimator: &EstimatorKind,
    optimizer: &OptimizerConfig,
    init: &ThetaVec,
    rng: &RngStream,
    options: &TrainingOptions,
) -> Result<Trajectory> {
    optimizer.validate()?;
    if init.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: init.len(),
        });
    }
    if options.variance_every > 0 && options.variance_samples < 2 {
        return Err(Error::TooFewSamples {
            min: 2,
            got: options.variance_samples,
        });
    }
    let mut params = match optimizer.mode {
        ParamMode::ProjectedTheta => Params::Theta(init.clone()),
        ParamMode::LogitSgd => Params::Logit(logit_transform(init)?, None),
        ParamMode::LogitAdam => Params::Logit(logit_transform(init)?, Some(AdamState::new(init.len()))),
    };
    let abort = |iteration: usize| move |e: Error| Error::RunAborted {
        iteration,
        source: Box::new(e),
    };

    let mut records = Vec::with_capacity(optimizer.iterations + 1);
    let mut evals_cum = 0u64;
    for i in 0..=optimizer.iterations {
        let theta = params.theta();
        let stream = rng.with_iteration(i as u64);
        let loss_mc = mc_loss(f, &theta, options.loss_samples, &stream).map_err(abort(i))?;
        let variance = if options.variance_every > 0 && i % options.variance_every == 0 {
            let rep = mc_variance_with(
                f,
                &theta,
                estimator,
                options.variance_samples,
                &stream.fork(Purpose::VarianceProbe),
                EndpointPolicy::Freeze,
            )
            .map_err(abort(i))?;
            Some(rep.raw)
        } else {
            None
        };
        records.push(Record {
            iteration: i,
            loss_mc,
            loss_exact: f.expected_value(&theta),
            evals_cum,
            // the final theta is always kept for metrics
            theta: if options.record_theta || i == optimizer.iterations {
                theta.values().to_vec()
            } else {
                Vec::new()
            },
            variance,
        });
        if i == optimizer.iterations {
            break;
        }
        let g = estimator
            .estimate_with(f, &theta, &stream, EndpointPolicy::Freeze)
            .map_err(abort(i))?;
        evals_cum += g.evals;
        params = match params {
            Params::Theta(t) => Params::Theta(projected_step(&t, &g, optimizer.learning_rate)),
            Params::Logit(phi, None) => Params::Logit(logit_step(&phi, &g, optimizer.learning_rate), None),
            Params::Logit(phi, Some(state)) => {
                let (state, phi) = adam_logit_step(state, &phi, &g, optimizer);
                Params::Logit(phi, Some(state))
            }
        };
    }
    Ok(Trajectory {
        records,
        record_theta: options.record_theta,
    })
}
