//! Unbiased gradient estimators for `d/dtheta E_{z ~ theta}[f(z)]`.
//!
//! All estimators return gradients in probability space. Randomness is taken
//! from forks of the caller's [`RngStream`]: the coupling uniforms from
//! [`Purpose::Coupling`], the flipped coordinate from [`Purpose::Coordinate`]
//! and Reinforce-LOO's second sample from [`Purpose::SecondDraw`]. Estimators
//! called with the same stream therefore see the same base sample `z`, which
//! is what the paired variance comparisons rely on.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::rng::{Purpose, RngStream};
use crate::types::{sample_bernoulli, sample_coupled, BinaryVec, CoupledDraw, GradEstimate, ThetaVec};

/// Largest K the enumeration oracle accepts.
pub const MAX_EXACT_K: usize = 25;

/// Which estimator to run. `Ugc` carries its routing threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "kebab-case")]
pub enum EstimatorKind {
    Exact,
    Reinforce,
    Arm,
    Disarm,
    ReinforceLoo,
    Bitflip1,
    BitflipK,
    Ugc { tau: f64 },
    Tugc,
}

/// What to do with estimators that are undefined at `theta_j in {0, 1}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EndpointPolicy {
    /// Fail with [`Error::ThetaAtEndpoint`].
    #[default]
    Reject,
    /// Report a zero gradient for endpoint coordinates.
    Freeze,
}

impl EstimatorKind {
    /// UGC with the default threshold `1 / (2K)`.
    pub fn ugc_default(k: usize) -> Self {
        EstimatorKind::Ugc {
            tau: default_tau(k),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Exact => "exact",
            EstimatorKind::Reinforce => "reinforce",
            EstimatorKind::Arm => "arm",
            EstimatorKind::Disarm => "disarm",
            EstimatorKind::ReinforceLoo => "reinforce-loo",
            EstimatorKind::Bitflip1 => "bitflip1",
            EstimatorKind::BitflipK => "bitflip-k",
            EstimatorKind::Ugc { .. } => "ugc",
            EstimatorKind::Tugc => "tugc",
        }
    }

    /// Upper bound on objective evaluations per call.
    pub fn max_evals(&self, k: usize) -> u64 {
        match self {
            EstimatorKind::Exact => 1u64 << k.min(63),
            EstimatorKind::Reinforce => 1,
            EstimatorKind::Arm
            | EstimatorKind::Disarm
            | EstimatorKind::ReinforceLoo
            | EstimatorKind::Bitflip1 => 2,
            EstimatorKind::BitflipK => k as u64 + 1,
            EstimatorKind::Ugc { .. } => 3,
            EstimatorKind::Tugc => 4,
        }
    }

    /// Whether the estimator is undefined at `theta_j in {0, 1}`.
    pub fn needs_interior(&self) -> bool {
        matches!(
            self,
            EstimatorKind::Reinforce | EstimatorKind::Arm | EstimatorKind::ReinforceLoo
        )
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, EstimatorKind::Exact)
    }

    pub fn estimate(
        &self,
        f: &dyn Objective,
        theta: &ThetaVec,
        rng: &RngStream,
    ) -> Result<GradEstimate> {
        self.estimate_with(f, theta, rng, EndpointPolicy::Reject)
    }

    pub fn estimate_with(
        &self,
        f: &dyn Objective,
        theta: &ThetaVec,
        rng: &RngStream,
        policy: EndpointPolicy,
    ) -> Result<GradEstimate> {
        if f.dim() != theta.len() {
            return Err(Error::DimensionMismatch {
                expected: f.dim(),
                got: theta.len(),
            });
        }
        let out = match *self {
            EstimatorKind::Exact => exact_gradient(f, theta)?,
            EstimatorKind::Reinforce => reinforce_with(f, theta, rng, policy)?,
            EstimatorKind::Arm => arm_with(f, theta, rng, policy)?,
            EstimatorKind::Disarm => disarm(f, theta, rng)?,
            EstimatorKind::ReinforceLoo => reinforce_loo_with(f, theta, rng, policy)?,
            EstimatorKind::Bitflip1 => bitflip1(f, theta, rng)?,
            EstimatorKind::BitflipK => bitflip_k(f, theta, rng)?,
            EstimatorKind::Ugc { tau } => ugc(f, theta, tau, rng)?,
            EstimatorKind::Tugc => tugc(f, theta, rng)?,
        };
        assert_eq!(out.g.len(), theta.len());
        assert!(
            out.evals <= self.max_evals(theta.len()),
            "{} spent {} evaluations",
            self.name(),
            out.evals
        );
        Ok(out)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Ugc { tau } => write!(f, "ugc(tau={tau})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    /// Parses an estimator name. `ugc` gets a placeholder threshold of 0.5;
    /// callers that know K should replace it (see [`EstimatorKind::ugc_default`]).
    /// `ugc:0.2` sets the threshold explicitly.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("ugc:") {
            let tau: f64 = rest
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad tau in `{s}`")))?;
            check_tau(tau)?;
            return Ok(EstimatorKind::Ugc { tau });
        }
        Ok(match lower.as_str() {
            "exact" => EstimatorKind::Exact,
            "reinforce" => EstimatorKind::Reinforce,
            "arm" => EstimatorKind::Arm,
            "disarm" => EstimatorKind::Disarm,
            "reinforce-loo" | "reinforce_loo" | "rloo" => EstimatorKind::ReinforceLoo,
            "bitflip1" | "bitflip-1" => EstimatorKind::Bitflip1,
            "bitflip-k" | "bitflipk" | "bitflip_k" => EstimatorKind::BitflipK,
            "ugc" => EstimatorKind::Ugc { tau: 0.5 },
            "tugc" => EstimatorKind::Tugc,
            _ => return Err(Error::InvalidConfig(format!("unknown estimator `{s}`"))),
        })
    }
}

pub fn default_tau(k: usize) -> f64 {
    1.0 / (2.0 * k as f64)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidTau(tau))
    }
}

#[inline]
fn eval(f: &dyn Objective, z: &BinaryVec) -> Result<f64> {
    let v = f.eval(z);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteObjective(v))
    }
}

fn check_endpoints(theta: &ThetaVec, policy: EndpointPolicy) -> Result<()> {
    match policy {
        EndpointPolicy::Reject => theta.require_interior(),
        EndpointPolicy::Freeze => Ok(()),
    }
}

#[inline]
fn sign(bit: bool) -> f64 {
    if bit {
        -1.0
    } else {
        1.0
    }
}

/// Enumeration oracle: `g_j = E[f | z_j = 1] - E[f | z_j = 0]` summed over
/// all `2^K` lattice points.
pub fn exact_gradient(f: &dyn Objective, theta: &ThetaVec) -> Result<GradEstimate> {
    let k = theta.len();
    if k > MAX_EXACT_K {
        return Err(Error::EnumerationTooLarge { k, max: MAX_EXACT_K });
    }
    let th = theta.values();
    let n = 1usize << k;
    let mut values = Vec::with_capacity(n);
    for code in 0..n {
        values.push(eval(f, &BinaryVec::from_code(code as u64, k))?);
    }
    let mut g = vec![0.0; k];
    let mut prefix = vec![1.0; k + 1];
    let mut suffix = vec![1.0; k + 1];
    for code in 0..n {
        let factor = |i: usize| {
            if (code >> i) & 1 == 1 {
                th[i]
            } else {
                1.0 - th[i]
            }
        };
        for i in 0..k {
            prefix[i + 1] = prefix[i] * factor(i);
        }
        for i in (0..k).rev() {
            suffix[i] = suffix[i + 1] * factor(i);
        }
        for (j, gj) in g.iter_mut().enumerate() {
            if (code >> j) & 1 == 1 {
                let others = prefix[j] * suffix[j + 1];
                *gj += (values[code] - values[code ^ (1 << j)]) * others;
            }
        }
    }
    Ok(GradEstimate { g, evals: n as u64 })
}

/// Score-function estimator `f(z) * d/dtheta log p(z; theta)`.
pub fn reinforce(f: &dyn Objective, theta: &ThetaVec, rng: &RngStream) -> Result<GradEstimate> {
    reinforce_with(f, theta, rng, EndpointPolicy::Reject)
}

pub fn reinforce_with(
    f: &dyn Objective,
    theta: &ThetaVec,
    rng: &RngStream,
    policy: EndpointPolicy,
) -> Result<GradEstimate> {
    check_endpoints(theta, policy)?;
    let z = sample_coupled(theta, rng).z;
    reinforce_from(f, theta, &z)
}

/// Reinforce on a given sample. Endpoint coordinates get 0.
pub fn reinforce_from(f: &dyn Objective, theta: &ThetaVec, z: &BinaryVec) -> Result<GradEstimate> {
    let fz = eval(f, z)?;
    let g = theta
        .values()
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            if !theta.is_interior(j) {
                0.0
            } else if z.get(j) {
                fz / t
            } else {
                -fz / (1.0 - t)
            }
        })
        .collect();
    Ok(GradEstimate { g, evals: 1 })
}

/// ARM, mapped to probability space through `d logit / d theta = 1 / (theta (1 - theta))`.
pub fn arm(f: &dyn Objective, theta: &ThetaVec, rng: &RngStream) -> Result<GradEstimate> {
    arm_with(f, theta, rng, EndpointPolicy::Reject)
}

pub fn arm_with(
    f: &dyn Objective,
    theta: &ThetaVec,
    rng: &RngStream,
    policy: EndpointPolicy,
) -> Result<GradEstimate> {
    check_endpoints(theta, policy)?;
    arm_from_draw(f, theta, &sample_coupled(theta, rng))
}

pub fn arm_from_draw(
    f: &dyn Objective,
    theta: &ThetaVec,
    draw: &CoupledDraw,
) -> Result<GradEstimate> {
    let diff = eval(f, &draw.z)? - eval(f, &draw.z_tilde)?;
    let g = theta
        .values()
        .iter()
        .zip(&draw.u)
        .enumerate()
        .map(|(j, (&t, &u))| {
            if theta.is_interior(j) {
                diff * (u - 0.5) / (t * (1.0 - t))
            } else {
                0.0
            }
        })
        .collect();
    Ok(GradEstimate { g, evals: 2 })
}

/// DisARM in probability space:
/// `1/2 (f(z) - f(z~)) / min(theta_j, 1 - theta_j) * 1{z_j != z~_j} (-1)^{z~_j}`.
pub fn disarm(f: &dyn Objective, theta: &ThetaVec, rng: &RngStream) -> Result<GradEstimate> {
    disarm_from_draw(f, theta, &sample_coupled(theta, rng))
}

pub fn disarm_from_draw(
    f: &dyn Objective,
    theta: &ThetaVec,
    draw: &CoupledDraw,
) -> Result<GradEstimate> {
    let diff = eval(f, &draw.z)? - eval(f, &draw.z_tilde)?;
    let g = (0..theta.len())
        .map(|j| disarm_coordinate(theta, draw, diff, j))
        .collect();
    Ok(GradEstimate { g, evals: 2 })
}

#[inline]
fn disarm_coordinate(theta: &ThetaVec, draw: &CoupledDraw, diff: f64, j: usize) -> f64 {
    if draw.differs(j) {
        // a differing pair has probability zero unless 0 < theta_j < 1
        0.5 * diff / theta.distance_to_boundary(j) * sign(draw.z_tilde.get(j))
    } else {
        0.0
    }
}

/// Leave-one-out baseline from two independent samples.
pub fn reinforce_loo(f: &dyn Objective, theta: &ThetaVec, rng: &RngStream) -> Result<GradEstimate> {
    reinforce_loo_with(f, theta, rng, EndpointPolicy::Reject)
}

pub fn reinforce_loo_with(
    f: &dyn Objective,
    theta: &ThetaVec,
    rng: &RngStream,
    policy: EndpointPolicy,
) -> Result<GradEstimate> {
    check_endpoints(theta, policy)?;
    let z1 = sample_coupled(theta, rng).z;
    let z2 = sample_bernoulli(theta, &mut rng.fork(Purpose::SecondDraw).generator());
    reinforce_loo_from(f, theta, &z1, &z2)
}

pub fn reinforce_loo_from(
    f: &dyn Objective,
    theta: &ThetaVec,
    z1: &BinaryVec,
    z2: &BinaryVec,
) -> Result<GradEstimate> {
    let d = eval(f, z1)? - eval(f, z2)?;
    let g = theta
        .values()
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            if !theta.is_interior(j) {
                return 0.0;
            }
            let a = z1.get(j) as u8 as f64 - t;
            let b = z2.get(j) as u8 as f64 - t;
            (d * a - d * b) / (2.0 * t * (1.0 - t))
        })
        .collect();
    Ok(GradEstimate { g, evals: 2 })
}

/// Flip one uniformly chosen coordinate `q` of `z ~ p_theta`:
/// `g_q = K (-1)^{z_q} (f(z with q flipped) - f(z))`, zero elsewhere.
pub fn bitflip1(f: &dyn Objective, theta: &ThetaVec, rng: &RngStream) -> Result<GradEstimate> {
    let z = sample_coupled(theta, rng).z;
    let q = rng.fork(Purpose::Coordinate).generator().index(theta.len());
    bitflip1_from(f, &z, q)
}

/// bitflip-1 for a given base sample and coordinate. Its value does not
/// depend on theta.
pub fn bitflip1_from(f: &dyn Objective, z: &BinaryVec, q: usize) -> Result<GradEstimate> {
    let k = z.len();
    let mut out = GradEstimate::zeros(k, 2);
    out.g[q] = k as f64 * flip_difference(f, z, q, None)?;
    Ok(out)
}

/// `f(z with bit j = 1) - f(z with bit j = 0)`; `fz` is reused when given.
fn flip_difference(f: &dyn Objective, z: &BinaryVec, j: usize, fz: Option<f64>) -> Result<f64> {
    let fz = match fz {
        Some(v) => v,
        None => eval(f, z)?,
    };
    let flipped = eval(f, &z.with_bit(j, !z.get(j)))?;
    Ok(if z.get(j) { fz - flipped } else { flipped - fz })
}

/// Every coordinate flipped in turn: `K + 1` evaluations.
pub fn bitflip_k(f: &dyn Objective, theta: &ThetaVec, rng: &RngStream) -> Result<GradEstimate> {
    bitflip_k_from(f, &sample_coupled(theta, rng).z)
}

pub fn bitflip_k_from(f: &dyn Objective, z: &BinaryVec) -> Result<GradEstimate> {
    let fz = eval(f, z)?;
    let g = (0..z.len())
        .map(|j| flip_difference(f, z, j, Some(fz)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradEstimate {
        g,
        evals: z.len() as u64 + 1,
    })
}

/// Per-coordinate router: bitflip-1 where `min(theta_j, 1 - theta_j) < tau`,
/// DisARM elsewhere. Both parts share the base sample `z`.
pub fn ugc(f: &dyn Objective, theta: &ThetaVec, tau: f64, rng: &RngStream) -> Result<GradEstimate> {
    check_tau(tau)?;
    let draw = sample_coupled(theta, rng);
    let q = rng.fork(Purpose::Coordinate).generator().index(theta.len());
    ugc_from(f, theta, tau, &draw, q)
}

pub fn ugc_from(
    f: &dyn Objective,
    theta: &ThetaVec,
    tau: f64,
    draw: &CoupledDraw,
    q: usize,
) -> Result<GradEstimate> {
    check_tau(tau)?;
    let k = theta.len();
    let boundary: Vec<bool> = (0..k).map(|j| theta.distance_to_boundary(j) < tau).collect();
    let mut out = GradEstimate::zeros(k, 0);
    let fz = eval(f, &draw.z)?;
    out.evals += 1;
    if (0..k).any(|j| !boundary[j] && draw.differs(j)) {
        let diff = fz - eval(f, &draw.z_tilde)?;
        out.evals += 1;
        for j in (0..k).filter(|&j| !boundary[j]) {
            out.g[j] = disarm_coordinate(theta, draw, diff, j);
        }
    }
    if boundary[q] {
        out.g[q] = k as f64 * flip_difference(f, &draw.z, q, Some(fz))?;
        out.evals += 1;
    }
    Ok(out)
}

/// Step-up rule: coordinates sorted by `min(theta_j, 1 - theta_j)`
/// ascending, and `T = max{t : theta~_(t) <= 1 / (2t)}` (0 if none).
/// Returns `T` and the sort order.
pub fn tugc_threshold(theta: &ThetaVec) -> (usize, Vec<usize>) {
    let mut order: Vec<usize> = (0..theta.len()).collect();
    order.sort_by(|&a, &b| {
        theta
            .distance_to_boundary(a)
            .total_cmp(&theta.distance_to_boundary(b))
    });
    let t_hat = order
        .iter()
        .enumerate()
        .filter(|&(i, &j)| theta.distance_to_boundary(j) <= 1.0 / (2.0 * (i + 1) as f64))
        .map(|(i, _)| i + 1)
        .max()
        .unwrap_or(0);
    (t_hat, order)
}

/// tUGC: bitflip on one of the `T` coordinates closest to the boundary,
/// weighted by `T`; DisARM on the rest.
pub fn tugc(f: &dyn Objective, theta: &ThetaVec, rng: &RngStream) -> Result<GradEstimate> {
    let draw = sample_coupled(theta, rng);
    let (t_hat, _) = tugc_threshold(theta);
    let rank = if t_hat > 0 {
        rng.fork(Purpose::Coordinate).generator().index(t_hat)
    } else {
        0
    };
    tugc_from(f, theta, &draw, rank)
}

/// `rank` indexes into the `T` smallest coordinates (ignored when `T = 0`).
pub fn tugc_from(
    f: &dyn Objective,
    theta: &ThetaVec,
    draw: &CoupledDraw,
    rank: usize,
) -> Result<GradEstimate> {
    let k = theta.len();
    let (t_hat, order) = tugc_threshold(theta);
    let mut flipped = vec![false; k];
    for &j in &order[..t_hat] {
        flipped[j] = true;
    }
    let mut out = GradEstimate::zeros(k, 0);
    let fz = eval(f, &draw.z)?;
    out.evals += 1;
    if (0..k).any(|j| !flipped[j] && draw.differs(j)) {
        let diff = fz - eval(f, &draw.z_tilde)?;
        out.evals += 1;
        for j in (0..k).filter(|&j| !flipped[j]) {
            out.g[j] = disarm_coordinate(theta, draw, diff, j);
        }
    }
    if t_hat > 0 {
        let j = order[rank];
        out.g[j] = t_hat as f64 * flip_difference(f, &draw.z, j, Some(fz))?;
        out.evals += 1;
    }
    Ok(out)
}
