//! Black-box objectives `f: {0,1}^K -> R`.

mod subset;

use std::sync::atomic::{AtomicU64, Ordering};

pub use subset::{
    gen_regression, solve_inner_ls, support_metrics, RegressionDataset, SubsetObjective,
    SupportMetrics, DEFAULT_CACHE_CAPACITY,
};

use crate::types::{BinaryVec, ThetaVec};

/// A function on the Boolean lattice that estimators may only evaluate.
///
/// Implementations are shared across worker threads, so evaluation takes
/// `&self`; the evaluation counter is atomic.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, z: &BinaryVec) -> f64;

    /// Evaluations performed so far.
    fn eval_count(&self) -> u64;

    /// `E_{z ~ theta}[f(z)]` when a closed form is known.
    fn expected_value(&self, _theta: &ThetaVec) -> Option<f64> {
        None
    }
}

/// Monotone call counter.
#[derive(Debug, Default)]
pub struct EvalCounter(AtomicU64);

impl EvalCounter {
    #[inline]
    pub fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// `sum_k (z_k - t)^2`.
#[derive(Debug)]
pub struct P1 {
    k: usize,
    t: f64,
    counter: EvalCounter,
}

pub fn p1(k: usize, t: f64) -> P1 {
    assert!(k >= 1, "P1 needs K >= 1");
    P1 {
        k,
        t,
        counter: EvalCounter::default(),
    }
}

impl P1 {
    pub fn target(&self) -> f64 {
        self.t
    }
}

impl Objective for P1 {
    fn dim(&self) -> usize {
        self.k
    }

    fn eval(&self, z: &BinaryVec) -> f64 {
        self.counter.bump();
        let ones = z.count_ones() as f64;
        let zeros = (z.len() - z.count_ones()) as f64;
        ones * (1.0 - self.t).powi(2) + zeros * self.t * self.t
    }

    fn eval_count(&self) -> u64 {
        self.counter.get()
    }

    fn expected_value(&self, theta: &ThetaVec) -> Option<f64> {
        let t = self.t;
        Some(
            theta
                .values()
                .iter()
                .map(|&p| p * (1.0 - 2.0 * t) + t * t)
                .sum(),
        )
    }
}

/// `(sum_k z_k - t)^2`.
#[derive(Debug)]
pub struct P2 {
    k: usize,
    t: f64,
    counter: EvalCounter,
}

pub fn p2(k: usize, t: f64) -> P2 {
    assert!(k >= 1, "P2 needs K >= 1");
    P2 {
        k,
        t,
        counter: EvalCounter::default(),
    }
}

impl P2 {
    pub fn target(&self) -> f64 {
        self.t
    }
}

impl Objective for P2 {
    fn dim(&self) -> usize {
        self.k
    }

    fn eval(&self, z: &BinaryVec) -> f64 {
        self.counter.bump();
        (z.count_ones() as f64 - self.t).powi(2)
    }

    fn eval_count(&self) -> u64 {
        self.counter.get()
    }

    fn expected_value(&self, theta: &ThetaVec) -> Option<f64> {
        let th = theta.values();
        let var: f64 = th.iter().map(|&p| p * (1.0 - p)).sum();
        let mean: f64 = th.iter().sum();
        Some(var + (mean - self.t).powi(2))
    }
}

/// Arbitrary objective given by a lookup table over all `2^K` points,
/// indexed by [`BinaryVec::from_code`] order.
#[derive(Debug)]
pub struct TableObjective {
    k: usize,
    table: Vec<f64>,
    counter: EvalCounter,
}

impl TableObjective {
    pub fn new(k: usize, table: Vec<f64>) -> Self {
        assert_eq!(table.len(), 1 << k, "table must have 2^K entries");
        Self {
            k,
            table,
            counter: EvalCounter::default(),
        }
    }
}

impl Objective for TableObjective {
    fn dim(&self) -> usize {
        self.k
    }

    fn eval(&self, z: &BinaryVec) -> f64 {
        self.counter.bump();
        let code = z
            .bits()
            .iter()
            .enumerate()
            .fold(0usize, |acc, (j, &b)| acc | ((b as usize) << j));
        self.table[code]
    }

    fn eval_count(&self) -> u64 {
        self.counter.get()
    }
}

/// Wraps a user-supplied closure.
pub struct FnObjective<F> {
    k: usize,
    f: F,
    counter: EvalCounter,
}

impl<F> FnObjective<F>
where
    F: Fn(&BinaryVec) -> f64 + Send + Sync,
{
    pub fn new(k: usize, f: F) -> Self {
        Self {
            k,
            f,
            counter: EvalCounter::default(),
        }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&BinaryVec) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.k
    }

    fn eval(&self, z: &BinaryVec) -> f64 {
        self.counter.bump();
        (self.f)(z)
    }

    fn eval_count(&self) -> u64 {
        self.counter.get()
    }
}
