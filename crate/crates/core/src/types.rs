//! Parameter vectors, binary samples and the antithetic coupling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream, StreamRng};

/// Probabilities of a factorial Bernoulli distribution.
///
/// Entries may sit exactly on 0 or 1: projected descent lands there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaVec(Vec<f64>);

impl ThetaVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyTheta);
        }
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ThetaOutOfRange { index, value });
            }
        }
        Ok(Self(values))
    }

    pub fn constant(k: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `min(theta_j, 1 - theta_j)` for coordinate `j`.
    #[inline]
    pub fn distance_to_boundary(&self, j: usize) -> f64 {
        let t = self.0[j];
        t.min(1.0 - t)
    }

    /// Rejects any coordinate at exactly 0 or 1.
    pub fn require_interior(&self) -> Result<()> {
        match self.0.iter().position(|&t| t <= 0.0 || t >= 1.0) {
            Some(index) => Err(Error::ThetaAtEndpoint {
                index,
                value: self.0[index],
            }),
            None => Ok(()),
        }
    }

    pub fn is_interior(&self, j: usize) -> bool {
        self.0[j] > 0.0 && self.0[j] < 1.0
    }
}

/// Real-valued logits; `sigmoid` of each entry is a probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitVec(Vec<f64>);

impl LogitVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyTheta);
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteLogit { index, value });
            }
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    if p <= 0.5 {
        p.ln() - (-p).ln_1p()
    } else {
        // 1 - p is exact for p in (0.5, 1)
        -((1.0 - p).ln() - p.ln())
    }
}

pub fn sigmoid_transform(phi: &LogitVec) -> ThetaVec {
    ThetaVec(phi.0.iter().map(|&x| sigmoid(x)).collect())
}

/// Inverse of [`sigmoid_transform`]; every entry must lie strictly inside (0, 1).
pub fn logit_transform(theta: &ThetaVec) -> Result<LogitVec> {
    theta.require_interior()?;
    Ok(LogitVec(theta.0.iter().map(|&p| logit(p)).collect()))
}

/// A point of `{0,1}^K`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryVec(Vec<bool>);

impl BinaryVec {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![false; k])
    }

    pub fn ones(k: usize) -> Self {
        Self(vec![true; k])
    }

    /// Bits from `0`/`1` integers; any nonzero entry counts as 1.
    pub fn from_ints(bits: &[u8]) -> Self {
        Self(bits.iter().map(|&b| b != 0).collect())
    }

    /// The low `k` bits of `code`, coordinate `j` taken from bit `j`.
    pub fn from_code(code: u64, k: usize) -> Self {
        Self((0..k).map(|j| (code >> j) & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    #[inline]
    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    #[inline]
    pub fn set(&mut self, j: usize, bit: bool) {
        self.0[j] = bit;
    }

    pub fn flip(&mut self, j: usize) {
        self.0[j] = !self.0[j];
    }

    pub fn with_bit(&self, j: usize, bit: bool) -> Self {
        let mut out = self.clone();
        out.0[j] = bit;
        out
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn ones_indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| b.then_some(j))
            .collect()
    }

    /// Packs the bits into 64-bit words, for hashing.
    pub fn packed(&self) -> Vec<u64> {
        let mut words = vec![0u64; self.0.len().div_ceil(64)];
        for (j, &b) in self.0.iter().enumerate() {
            if b {
                words[j / 64] |= 1 << (j % 64);
            }
        }
        words
    }
}

/// Antithetic pair drawn from one vector of uniforms:
/// `z_j = 1{1 - u_j < theta_j}` and `z_tilde_j = 1{u_j < theta_j}`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledDraw {
    pub u: Vec<f64>,
    pub z: BinaryVec,
    pub z_tilde: BinaryVec,
}

impl CoupledDraw {
    pub fn from_uniforms(theta: &ThetaVec, u: Vec<f64>) -> Result<Self> {
        if u.len() != theta.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                got: u.len(),
            });
        }
        let z = u
            .iter()
            .zip(theta.values())
            .map(|(&u, &t)| 1.0 - u < t)
            .collect();
        let z_tilde = u
            .iter()
            .zip(theta.values())
            .map(|(&u, &t)| u < t)
            .collect();
        Ok(Self {
            u,
            z: BinaryVec(z),
            z_tilde: BinaryVec(z_tilde),
        })
    }

    pub fn differs(&self, j: usize) -> bool {
        self.z.get(j) != self.z_tilde.get(j)
    }
}

/// Draws `u` from the coupling fork of `rng` and builds the antithetic pair.
pub fn sample_coupled(theta: &ThetaVec, rng: &RngStream) -> CoupledDraw {
    let mut g = rng.fork(Purpose::Coupling).generator();
    draw_with(theta, &mut g)
}

pub(crate) fn draw_with(theta: &ThetaVec, g: &mut StreamRng) -> CoupledDraw {
    let u = (0..theta.len()).map(|_| g.uniform()).collect();
    CoupledDraw::from_uniforms(theta, u).expect("lengths agree by construction")
}

/// An independent sample `z ~ p_theta` from an open generator.
pub(crate) fn sample_bernoulli(theta: &ThetaVec, g: &mut StreamRng) -> BinaryVec {
    BinaryVec(theta.values().iter().map(|&t| g.uniform() < t).collect())
}

/// Gradient estimate with respect to theta and the number of objective
/// evaluations spent producing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradEstimate {
    pub g: Vec<f64>,
    pub evals: u64,
}

impl GradEstimate {
    pub fn zeros(k: usize, evals: u64) -> Self {
        Self {
            g: vec![0.0; k],
            evals,
        }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}
