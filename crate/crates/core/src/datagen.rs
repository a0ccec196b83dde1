//! Hierarchical synthetic binary tasks.
//!
//! Per dataset: a random covariance `A Aᵀ` (entries of `A` uniform in
//! `[-1, 1]`), Gaussian inputs, a two-level exponential noise hierarchy, two
//! random zero-threshold linear partitions combined by XOR, class-balance
//! rejection, and per-feature standardization of the observed inputs.

use crate::episode::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

/// Inputs that the two partitions are applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelSource {
    /// Noise-free samples; the observed inputs carry the noise.
    #[default]
    Clean,
    /// Samples after noise has been added.
    Noisy,
}

/// Train-fraction grid `min, min + step, ..., max` from which each
/// dataset's split is drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauPolicy {
    pub min_train_frac: f64,
    pub max_train_frac: f64,
    pub step: f64,
}

impl TauPolicy {
    pub fn fixed(train_frac: f64) -> Self {
        Self {
            min_train_frac: train_frac,
            max_train_frac: train_frac,
            step: 0.1,
        }
    }

    fn choices(&self) -> u64 {
        ((self.max_train_frac - self.min_train_frac) / self.step).round() as u64 + 1
    }

    /// Grid point `k` as a fraction.
    pub fn fraction(&self, k: u64) -> f64 {
        self.min_train_frac + k as f64 * self.step
    }

    /// 1-based index of the first test sample for grid point `k`.
    pub fn tau_for(&self, k: u64, n: usize) -> usize {
        let train = (self.fraction(k) * n as f64).round() as usize;
        train.clamp(1, n - 1) + 1
    }

    /// Range of taus this policy can produce for length `n`.
    pub fn tau_range(&self, n: usize) -> (usize, usize) {
        (self.tau_for(0, n), self.tau_for(self.choices() - 1, n))
    }

    fn draw(&self, n: usize, rng: &mut Rng) -> usize {
        let k = rng.below(self.choices());
        self.tau_for(k, n)
    }
}

impl Default for TauPolicy {
    fn default() -> Self {
        Self {
            min_train_frac: 0.2,
            max_train_frac: 0.8,
            step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_in: usize,
    pub n_samples: usize,
    /// Scale (mean) of the exponential drawing each dataset's noise level.
    pub beta_noise: f64,
    pub balance_min: f64,
    pub tau_policy: TauPolicy,
    pub max_rejects: usize,
    pub label_source: LabelSource,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_in: 5,
            n_samples: 100,
            beta_noise: 2.0,
            balance_min: 0.15,
            tau_policy: TauPolicy::default(),
            max_rejects: 1000,
            label_source: LabelSource::Clean,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_in == 0 {
            return bad("n_in must be >= 1".into());
        }
        if self.n_samples < 4 {
            return bad(format!("n_samples must be >= 4, got {}", self.n_samples));
        }
        if !(self.balance_min > 0.0 && self.balance_min < 0.5) {
            return bad(format!("balance_min must be in (0, 0.5), got {}", self.balance_min));
        }
        if self.max_rejects == 0 {
            return bad("max_rejects must be >= 1".into());
        }
        if !(self.beta_noise > 0.0) {
            return bad(format!("beta_noise must be positive, got {}", self.beta_noise));
        }
        let p = &self.tau_policy;
        if !(p.min_train_frac > 0.0
            && p.max_train_frac < 1.0
            && p.min_train_frac <= p.max_train_frac
            && p.step > 0.0)
        {
            return bad(format!("invalid train-fraction policy {p:?}"));
        }
        Ok(())
    }
}

/// Hidden generative description of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskParams {
    /// Row-major `n_in x n_in` covariance factor.
    pub a: Vec<f64>,
    pub epsilon: f64,
    pub v: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

/// A generated dataset together with everything needed to audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: LabeledDataset,
    pub task: TaskParams,
    /// Noise-free samples, row-major.
    pub clean: Vec<f64>,
    /// Additive noise, row-major.
    pub noise: Vec<f64>,
    /// Number of datasets rejected before this one was accepted.
    pub rejects: usize,
}

impl Generated {
    /// Inputs the partitions were applied to under `source`.
    pub fn label_inputs(&self, source: LabelSource) -> Vec<f64> {
        match source {
            LabelSource::Clean => self.clean.clone(),
            LabelSource::Noisy => self.clean.iter().zip(&self.noise).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Returns `(A, A Aᵀ)`, both row-major `n x n`.
pub fn gen_covariance(n: usize, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = (0..n * n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let sigma = gram(&a, n);
    (a, sigma)
}

/// `A Aᵀ` for row-major square `a`.
pub fn gram(a: &[f64], n: usize) -> Vec<f64> {
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = (0..n).fold(0.0, |acc, k| acc + a[i * n + k] * a[j * n + k]);
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    s
}

/// Lower Cholesky factor, or `None` when a pivot is not positive.
pub fn cholesky(sigma: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = (0..j).fold(sigma[i * n + j], |acc, k| acc - l[i * n + k] * l[j * n + k]);
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

pub const CHOLESKY_JITTER: f64 = 1e-9;

/// `n` rows drawn from `N(0, sigma)` as `L z` with Box–Muller normals.
pub fn sample_gaussian(sigma: &[f64], dim: usize, n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let l = match cholesky(sigma, dim) {
        Some(l) => l,
        None => {
            let mut jittered = sigma.to_vec();
            for i in 0..dim {
                jittered[i * dim + i] += CHOLESKY_JITTER;
            }
            cholesky(&jittered, dim).ok_or(Error::Factorization)?
        }
    };
    let mut out = vec![0.0; n * dim];
    let mut z = vec![0.0; dim];
    for row in out.chunks_exact_mut(dim) {
        z.iter_mut().for_each(|v| *v = rng.normal());
        for (i, r) in row.iter_mut().enumerate() {
            *r = (0..=i).fold(0.0, |acc, k| acc + l[i * dim + k] * z[k]);
        }
    }
    Ok(out)
}

/// Noise hierarchy: `epsilon ~ Exp(beta)`, `v_j ~ Exp(epsilon)`, rows of the
/// returned matrix iid `N(0, diag(v))`. Exponentials are parametrised by scale.
pub fn gen_noise(beta: f64, n: usize, dim: usize, rng: &mut Rng) -> (f64, Vec<f64>, Vec<f64>) {
    let epsilon = rng.exponential(beta);
    let v: Vec<f64> = (0..dim).map(|_| rng.exponential(epsilon)).collect();
    let sd: Vec<f64> = v.iter().map(|x| x.sqrt()).collect();
    let mut e = vec![0.0; n * dim];
    for row in e.chunks_exact_mut(dim) {
        for (x, s) in row.iter_mut().zip(&sd) {
            *x = s * rng.normal();
        }
    }
    (epsilon, v, e)
}

/// `y = [w1·x > 0] XOR [w2·x > 0]` for every row.
pub fn xor_labels(x: &[f64], dim: usize, w1: &[f64], w2: &[f64]) -> Vec<u8> {
    let side = |w: &[f64], row: &[f64]| row.iter().zip(w).fold(0.0, |a, (p, q)| a + p * q) > 0.0;
    x.chunks_exact(dim)
        .map(|row| u8::from(side(w1, row) != side(w2, row)))
        .collect()
}

/// Draws two partition vectors uniform in `[-1, 1]^dim` and labels `x`.
pub fn gen_labels(x: &[f64], dim: usize, rng: &mut Rng) -> (Vec<u8>, Vec<f64>, Vec<f64>) {
    let w1: Vec<f64> = (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let w2: Vec<f64> = (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    (xor_labels(x, dim, &w1, &w2), w1, w2)
}

/// Centers each column and scales it to unit population variance.
/// Returns `false` if some column is constant.
pub fn standardize(x: &mut [f64], dim: usize) -> bool {
    let n = x.len() / dim;
    for j in 0..dim {
        let mean = (0..n).fold(0.0, |a, i| a + x[i * dim + j]) / n as f64;
        for i in 0..n {
            x[i * dim + j] -= mean;
        }
        let var = (0..n).fold(0.0, |a, i| a + x[i * dim + j] * x[i * dim + j]) / n as f64;
        if !(var > 0.0) {
            return false;
        }
        let sd = var.sqrt();
        for i in 0..n {
            x[i * dim + j] /= sd;
        }
    }
    true
}

fn minority_fraction(y: &[u8]) -> f64 {
    let ones = y.iter().filter(|v| **v == 1).count();
    ones.min(y.len() - ones) as f64 / y.len() as f64
}

/// Generates one accepted dataset, resampling everything on rejection.
pub fn gen_dataset(config: &GenConfig, rng: &mut Rng) -> Result<Generated> {
    config.validate()?;
    let (n, dim) = (config.n_samples, config.n_in);
    let mut rejects = 0;
    loop {
        let (a, sigma) = gen_covariance(dim, rng);
        let clean = sample_gaussian(&sigma, dim, n, rng)?;
        let (epsilon, v, noise) = gen_noise(config.beta_noise, n, dim, rng);
        let mut observed: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| c + e).collect();
        let labelled = match config.label_source {
            LabelSource::Clean => &clean,
            LabelSource::Noisy => &observed,
        };
        let (y, w1, w2) = gen_labels(labelled, dim, rng);
        let usable = standardize(&mut observed, dim);
        if usable && minority_fraction(&y) >= config.balance_min {
            let tau = config.tau_policy.draw(n, rng);
            return Ok(Generated {
                dataset: LabeledDataset::new(dim, observed, y, tau)?,
                task: TaskParams { a, epsilon, v, w1, w2 },
                clean,
                noise,
                rejects,
            });
        }
        rejects += 1;
        if rejects > config.max_rejects {
            return Err(Error::TooManyRejects {
                rejects,
                cap: config.max_rejects,
            });
        }
    }
}

/// Dataset `index` of the family rooted at `seed`; random access.
pub fn gen_indexed(config: &GenConfig, seed: u64, index: u64) -> Result<Generated> {
    let mut rng = Rng::new(derive_seed(seed, index));
    gen_dataset(config, &mut rng)
}

/// `count` datasets from independent sub-seeds of `seed`.
pub fn gen_suite(config: &GenConfig, count: usize, seed: u64) -> Result<Vec<LabeledDataset>> {
    if count == 0 {
        return Err(Error::InvalidArgument("suite size must be >= 1".into()));
    }
    (0..count as u64)
        .map(|i| {
            gen_indexed(config, seed, i)
                .map(|g| g.dataset)
                .map_err(|e| Error::Dataset {
                    index: i as usize,
                    reason: e.to_string(),
                })
        })
        .collect()
}
