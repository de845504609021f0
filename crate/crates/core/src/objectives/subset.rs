//! L0-penalized best-subset regression as a lattice objective.
//!
//! A binary gate vector `z` selects the columns `S = {j : z_j = 1}`; the
//! objective is the profiled loss `(1/n) ||y - X_S b_S||^2 + lambda |S|`
//! with `b_S` the minimum-norm least-squares fit.

use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::Mutex;

use lru::LruCache;
use nalgebra::{DMatrix, DVector};

use super::{EvalCounter, Objective};
use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};
use crate::types::{BinaryVec, ThetaVec};

/// Relative cut-off below which singular values count as zero.
pub const SINGULAR_RTOL: f64 = 1e-10;

pub const DEFAULT_CACHE_CAPACITY: usize = 1 << 16;

#[derive(Clone, Debug)]
pub struct RegressionDataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Generating coefficients, when known.
    pub beta_true: Option<DVector<f64>>,
    /// Noise standard deviation, when known.
    pub sigma: Option<f64>,
    pub lambda: f64,
}

impl RegressionDataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, lambda: f64) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidConfig("design matrix must be non-empty".into()));
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        Ok(Self {
            x,
            y,
            beta_true: None,
            sigma: None,
            lambda,
        })
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Indices of the nonzero generating coefficients (empty if unknown).
    pub fn true_support(&self) -> Vec<usize> {
        self.beta_true
            .as_ref()
            .map(|b| {
                b.iter()
                    .enumerate()
                    .filter_map(|(j, &v)| (v != 0.0).then_some(j))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Writes one row per observation: `x1..xp` followed by `y`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.p()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row: Vec<String> = self.x.row(i).iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{:e}", self.y[i]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the combined layout written by [`Self::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>, lambda: f64) -> Result<Self> {
        let (header, rows) = read_table(path)?;
        if header.last().map(String::as_str) != Some("y") || header.len() < 2 {
            return Err(Error::MalformedCsv("final column must be `y`".into()));
        }
        let p = header.len() - 1;
        let n = rows.len();
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        let y = DVector::from_fn(n, |i, _| rows[i][p]);
        Self::new(x, y, lambda)
    }

    /// Reads a design file (`x1..xp`) and a single-column response file.
    pub fn read_csv_split(
        x_path: impl AsRef<Path>,
        y_path: impl AsRef<Path>,
        lambda: f64,
    ) -> Result<Self> {
        let (_, xrows) = read_table(x_path)?;
        let (yheader, yrows) = read_table(y_path)?;
        if yheader.len() != 1 {
            return Err(Error::MalformedCsv("response file must have one column".into()));
        }
        let p = xrows.first().map_or(0, Vec::len);
        let x = DMatrix::from_fn(xrows.len(), p, |i, j| xrows[i][j]);
        let y = DVector::from_fn(yrows.len(), |i, _| yrows[i][0]);
        Self::new(x, y, lambda)
    }
}

fn read_table(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::MalformedCsv(format!(
                "row {} has {} fields, header has {}",
                line + 1,
                rec.len(),
                header.len()
            )));
        }
        let row = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::MalformedCsv(format!("row {}: {e}", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::MalformedCsv("no data rows".into()));
    }
    Ok((header, rows))
}

/// Standard-normal design, `y = X beta + sigma * eps`.
pub fn gen_regression(
    n: usize,
    p: usize,
    beta_true: &[f64],
    sigma: f64,
    rng: &RngStream,
) -> Result<RegressionDataset> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidConfig("n and p must be positive".into()));
    }
    if beta_true.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: beta_true.len(),
        });
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("sigma = {sigma} must be >= 0")));
    }
    let mut gx = rng.fork(Purpose::Data).generator();
    // row-major fill so the layout does not depend on nalgebra's storage order
    let mut data = vec![0.0; n * p];
    for v in data.iter_mut() {
        *v = gx.standard_normal();
    }
    let x = DMatrix::from_row_slice(n, p, &data);
    let beta = DVector::from_column_slice(beta_true);
    let mut ge = rng.fork(Purpose::Noise).generator();
    let noise = DVector::from_fn(n, |_, _| ge.standard_normal());
    let y = &x * &beta + noise * sigma;
    Ok(RegressionDataset {
        x,
        y,
        beta_true: Some(beta),
        sigma: Some(sigma),
        lambda: 1.0,
    })
}

/// Minimum-norm least squares via SVD; returns the coefficients and the
/// residual sum of squares.
pub fn solve_inner_ls(x_s: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, f64) {
    let svd = x_s.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = SINGULAR_RTOL * smax;
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("V^T requested");
    let mut uty = u.tr_mul(y);
    for (c, &s) in uty.iter_mut().zip(svd.singular_values.iter()) {
        *c = if s > cut && s > 0.0 { *c / s } else { 0.0 };
    }
    let coeffs = v_t.tr_mul(&uty);
    let resid = y - x_s * &coeffs;
    (coeffs, resid.norm_squared())
}

/// The profiled subset-selection loss, memoized per gate pattern.
pub struct SubsetObjective {
    data: RegressionDataset,
    cache: Option<Mutex<LruCache<Vec<u64>, f64>>>,
    counter: EvalCounter,
}

impl SubsetObjective {
    pub fn new(data: RegressionDataset) -> Self {
        Self::with_cache_capacity(data, DEFAULT_CACHE_CAPACITY)
    }

    /// Capacity 0 disables memoization.
    pub fn with_cache_capacity(data: RegressionDataset, capacity: usize) -> Self {
        Self {
            data,
            cache: NonZeroUsize::new(capacity).map(|c| Mutex::new(LruCache::new(c))),
            counter: EvalCounter::default(),
        }
    }

    pub fn data(&self) -> &RegressionDataset {
        &self.data
    }

    /// The loss without touching the cache or the counter.
    pub fn eval_uncached(&self, z: &BinaryVec) -> f64 {
        let support = z.ones_indices();
        let n = self.data.n() as f64;
        let rss = if support.is_empty() {
            self.data.y.norm_squared()
        } else {
            let x_s = self.data.x.select_columns(&support);
            solve_inner_ls(&x_s, &self.data.y).1
        };
        rss / n + self.data.lambda * support.len() as f64
    }
}

impl Objective for SubsetObjective {
    fn dim(&self) -> usize {
        self.data.p()
    }

    fn eval(&self, z: &BinaryVec) -> f64 {
        let Some(cache) = &self.cache else {
            self.counter.bump();
            return self.eval_uncached(z);
        };
        let key = z.packed();
        if let Some(&v) = cache.lock().expect("cache poisoned").get(&key) {
            return v;
        }
        self.counter.bump();
        let v = self.eval_uncached(z);
        cache.lock().expect("cache poisoned").put(key, v);
        v
    }

    /// Counts solver-backed evaluations only; cache hits are free.
    fn eval_count(&self) -> u64 {
        self.counter.get()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupportMetrics {
    pub tpr: f64,
    pub fpr: f64,
}

/// Support recovery at the `theta > 0.5` threshold.
pub fn support_metrics(theta: &ThetaVec, true_support: &[usize]) -> Result<SupportMetrics> {
    if true_support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let p = theta.len();
    let mut is_true = vec![false; p];
    for &j in true_support {
        if j >= p {
            return Err(Error::DimensionMismatch { expected: p, got: j + 1 });
        }
        is_true[j] = true;
    }
    let n_true = is_true.iter().filter(|&&b| b).count();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (j, &t) in theta.values().iter().enumerate() {
        if t > 0.5 {
            if is_true[j] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let negatives = p - n_true;
    Ok(SupportMetrics {
        tpr: tp as f64 / n_true as f64,
        fpr: if negatives == 0 {
            0.0
        } else {
            fp as f64 / negatives as f64
        },
    })
}
