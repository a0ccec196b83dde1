//! Hand-made comparison: regularized logistic regression with k-fold
//! hyperparameter selection, and the shared test-portion scoring harness.

use rayon::prelude::*;

use crate::episode::{cross_entropy, run_episode, LabeledDataset};
use crate::error::{Error, Result};
use crate::learner::LearnerParams;
use crate::model::ModelShape;
use crate::ndgrad::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Penalty {
    L1,
    L2,
}

impl std::fmt::Display for Penalty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Penalty::L1 => f.write_str("l1"),
            Penalty::L2 => f.write_str("l2"),
        }
    }
}

pub const FIT_STEP: f64 = 0.1;
pub const FIT_ITERATIONS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub penalty: Penalty,
    pub lambda: f64,
}

impl LogRegModel {
    fn logit(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.w).fold(self.b, |a, (x, w)| a + x * w)
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.logit(row))
    }

    /// Mean unclamped log-loss plus the penalty term.
    pub fn objective(&self, x: &[f64], y: &[u8]) -> f64 {
        let n_in = self.w.len();
        let data = x
            .chunks_exact(n_in)
            .zip(y)
            .fold(0.0, |a, (row, t)| {
                let z = self.logit(row);
                let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
                a + softplus - f64::from(*t) * z
            })
            / y.len() as f64;
        let reg = match self.penalty {
            Penalty::L1 => self.w.iter().map(|w| w.abs()).sum::<f64>(),
            Penalty::L2 => 0.5 * self.w.iter().map(|w| w * w).sum::<f64>(),
        };
        data + self.lambda * reg
    }
}

/// Proximal full-batch gradient descent from zero on
/// `mean cross-entropy + lambda * R(w)`; the bias is not penalized.
pub fn logreg_fit(x: &[f64], y: &[u8], n_in: usize, penalty: Penalty, lambda: f64) -> Result<LogRegModel> {
    Ok(logreg_fit_traced(x, y, n_in, penalty, lambda, false)?.0)
}

/// [`logreg_fit`] that optionally records the objective after every iteration.
pub fn logreg_fit_traced(
    x: &[f64],
    y: &[u8],
    n_in: usize,
    penalty: Penalty,
    lambda: f64,
    trace: bool,
) -> Result<(LogRegModel, Vec<f64>)> {
    if n_in == 0 || x.len() != y.len() * n_in {
        return Err(Error::Dimension {
            what: "logistic regression inputs",
            expected: y.len() * n_in,
            found: x.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::InvalidArgument("logistic regression needs >= 2 samples".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = y.len() as f64;
    let mut m = LogRegModel {
        w: vec![0.0; n_in],
        b: 0.0,
        penalty,
        lambda,
    };
    let mut history = Vec::new();
    let mut gw = vec![0.0; n_in];
    for _ in 0..FIT_ITERATIONS {
        gw.iter_mut().for_each(|v| *v = 0.0);
        let mut gb = 0.0;
        for (row, t) in x.chunks_exact(n_in).zip(y) {
            let r = m.predict(row) - f64::from(*t);
            gb += r;
            for (g, xi) in gw.iter_mut().zip(row) {
                *g += r * xi;
            }
        }
        m.b -= FIT_STEP * gb / n;
        let shrink = FIT_STEP * lambda;
        for (w, g) in m.w.iter_mut().zip(&gw) {
            let v = *w - FIT_STEP * g / n;
            *w = match penalty {
                Penalty::L1 => v.signum() * (v.abs() - shrink).max(0.0),
                Penalty::L2 => v / (1.0 + shrink),
            };
        }
        if trace {
            history.push(m.objective(x, y));
        }
    }
    Ok((m, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub points: Vec<(Penalty, f64)>,
    pub folds: usize,
}

impl Default for HyperGrid {
    /// `{L1, L2} x {0.1, 1, 10}` in tie-break order, 5 folds.
    fn default() -> Self {
        let lambdas = [0.1, 1.0, 10.0];
        let points = [Penalty::L1, Penalty::L2]
            .iter()
            .flat_map(|p| lambdas.iter().map(move |l| (*p, *l)))
            .collect();
        Self { points, folds: 5 }
    }
}

/// Contiguous fold boundaries; the first `n % k` folds get one extra sample.
pub fn fold_bounds(n: usize, k: usize) -> Vec<(usize, usize)> {
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    (0..k)
        .map(|f| {
            let len = base + usize::from(f < extra);
            let b = (start, start + len);
            start += len;
            b
        })
        .collect()
}

/// Mean validation cross-entropy of every grid point, in grid order.
pub fn kfold_scores(x: &[f64], y: &[u8], n_in: usize, grid: &HyperGrid) -> Result<Vec<f64>> {
    let n = y.len();
    if grid.points.is_empty() {
        return Err(Error::InvalidArgument("hyperparameter grid is empty".into()));
    }
    if grid.folds < 2 || n < grid.folds {
        return Err(Error::InvalidArgument(format!(
            "k-fold needs 2 <= k <= train size, got k = {} with {n} samples",
            grid.folds
        )));
    }
    let folds = fold_bounds(n, grid.folds);
    grid.points
        .iter()
        .map(|(penalty, lambda)| {
            let mut total = 0.0;
            for (lo, hi) in &folds {
                let mut xt = Vec::with_capacity((n - (hi - lo)) * n_in);
                xt.extend_from_slice(&x[..lo * n_in]);
                xt.extend_from_slice(&x[hi * n_in..]);
                let mut yt = Vec::with_capacity(n - (hi - lo));
                yt.extend_from_slice(&y[..*lo]);
                yt.extend_from_slice(&y[*hi..]);
                let m = logreg_fit(&xt, &yt, n_in, *penalty, *lambda)?;
                let val = x[lo * n_in..hi * n_in]
                    .chunks_exact(n_in)
                    .zip(&y[*lo..*hi])
                    .fold(0.0, |a, (row, t)| a + cross_entropy(m.predict(row), *t));
                total += val / (hi - lo) as f64;
            }
            Ok(total / folds.len() as f64)
        })
        .collect()
}

/// Grid point with the lowest mean validation loss; the earliest wins ties.
pub fn kfold_select(x: &[f64], y: &[u8], n_in: usize, grid: &HyperGrid) -> Result<(Penalty, f64)> {
    let scores = kfold_scores(x, y, n_in, grid)?;
    Ok(grid.points[best_index(&scores)])
}

/// Index of the smallest score; the earliest wins ties.
pub fn best_index(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    best
}

/// Test-portion losses of logistic regression selected and fit on the
/// training portion.
pub fn logreg_test_losses(dataset: &LabeledDataset, grid: &HyperGrid) -> Result<Vec<f64>> {
    let n_in = dataset.n_in();
    let ((xtr, ytr), (xte, yte)) = dataset.split();
    let (penalty, lambda) = kfold_select(xtr, ytr, n_in, grid)?;
    let m = logreg_fit(xtr, ytr, n_in, penalty, lambda)?;
    Ok(xte
        .chunks_exact(n_in)
        .zip(yte)
        .map(|(row, t)| cross_entropy(m.predict(row), *t))
        .collect())
}

/// Test-portion losses of the learned algorithm (one full episode).
pub fn learned_test_losses(
    alpha: &LearnerParams,
    model: &ModelShape,
    dataset: &LabeledDataset,
) -> Result<Vec<f64>> {
    let trace = run_episode(alpha, model, dataset, false)?;
    Ok(trace.losses[dataset.tau() - 1..].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteScore {
    pub mu: f64,
    pub sigma: f64,
    pub per_dataset: Vec<f64>,
}

/// Mean and population standard deviation, summed in index order.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mu = values.iter().fold(0.0, |a, v| a + v) / n;
    let var = values.iter().fold(0.0, |a, v| a + (v - mu) * (v - mu)) / n;
    (mu, var.sqrt())
}

/// Scores every dataset's test portion with `scorer` and aggregates the
/// per-dataset mean cross-entropies in index order.
pub fn evaluate_suite<F>(scorer: F, suite: &[LabeledDataset]) -> Result<SuiteScore>
where
    F: Fn(&LabeledDataset) -> Result<Vec<f64>> + Sync,
{
    if suite.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty suite".into()));
    }
    let results: Vec<Result<f64>> = suite
        .par_iter()
        .map(|d| {
            let losses = scorer(d)?;
            if losses.len() != d.test_len() || losses.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "scorer returned {} losses for a test portion of {}",
                    losses.len(),
                    d.test_len()
                )));
            }
            Ok(losses.iter().fold(0.0, |a, v| a + v) / losses.len() as f64)
        })
        .collect();
    let mut per_dataset = Vec::with_capacity(results.len());
    for (index, r) in results.into_iter().enumerate() {
        per_dataset.push(r.map_err(|e| Error::Dataset {
            index,
            reason: e.to_string(),
        })?);
    }
    let (mu, sigma) = summarize(&per_dataset);
    Ok(SuiteScore {
        mu,
        sigma,
        per_dataset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (Vec<f64>, Vec<u8>) {
        (vec![-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0], vec![0, 0, 0, 0, 1, 1, 1, 1])
    }

    #[test]
    fn separable_data_is_fit() {
        let (x, y) = separable();
        let m = logreg_fit(&x, &y, 1, Penalty::L2, 0.1).unwrap();
        let acc = x
            .iter()
            .zip(&y)
            .filter(|(xi, yi)| u8::from(m.predict(&[**xi]) > 0.5) == **yi)
            .count();
        assert_eq!(acc, y.len());
    }

    #[test]
    fn huge_lambda_shrinks_weights() {
        let x = vec![-2.0, -1.0, 0.3, 0.5, 1.0, 2.0];
        let y = vec![0, 0, 1, 1, 1, 1];
        for p in [Penalty::L1, Penalty::L2] {
            let m = logreg_fit(&x, &y, 1, p, 1e6).unwrap();
            assert!(m.w[0].abs() < 1e-2, "{p}: {:?}", m.w);
            let prior = 4.0 / 6.0;
            assert!((m.predict(&[0.7]) - prior).abs() < 1e-2);
        }
    }

    #[test]
    fn single_class_moves_bias() {
        let x = vec![0.3, -1.0, 0.8, 1.2];
        let m = logreg_fit(&x, &[1, 1, 1, 1], 1, Penalty::L2, 1.0).unwrap();
        assert!(m.b > 1.0);
        assert!(m.w[0].abs() < 0.1);
    }

    #[test]
    fn l1_gives_exact_zeros_l2_does_not() {
        let x = vec![1.0, 0.2, -1.0, 0.1, 0.5, -0.3, -0.4, 0.9];
        let y = vec![1, 0, 1, 0];
        let l1 = logreg_fit(&x, &y, 2, Penalty::L1, 10.0).unwrap();
        assert!(l1.w.iter().all(|w| *w == 0.0));
        let l2 = logreg_fit(&x, &y, 2, Penalty::L2, 10.0).unwrap();
        assert!(l2.w.iter().all(|w| *w != 0.0));
    }

    #[test]
    fn objective_non_increasing() {
        let x: Vec<f64> = (0..60).map(|i| ((i * 37) % 17) as f64 / 8.0 - 1.0).collect();
        let y: Vec<u8> = (0..30).map(|i| u8::from((i * 7) % 5 < 2)).collect();
        for (p, l) in HyperGrid::default().points {
            let (_, hist) = logreg_fit_traced(&x, &y, 2, p, l, true).unwrap();
            for w in hist[10..].windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{p} {l}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn folds_are_contiguous() {
        assert_eq!(fold_bounds(7, 3), vec![(0, 3), (3, 5), (5, 7)]);
        assert_eq!(fold_bounds(10, 5).len(), 5);
    }

    #[test]
    fn kfold_tie_breaks() {
        let (x, y) = separable();
        let one = HyperGrid { points: vec![(Penalty::L2, 1.0)], folds: 2 };
        assert_eq!(kfold_select(&x, &y, 1, &one).unwrap(), (Penalty::L2, 1.0));
        // L1 at these strengths zeroes w exactly, so every point scores the same
        let flat = HyperGrid {
            points: vec![(Penalty::L1, 1e9), (Penalty::L1, 2e9), (Penalty::L1, 1e10)],
            folds: 2,
        };
        let scores = kfold_scores(&x, &y, 1, &flat).unwrap();
        assert!(scores.iter().all(|s| *s == scores[0]));
        assert_eq!(kfold_select(&x, &y, 1, &flat).unwrap(), (Penalty::L1, 1e9));
        assert_eq!(best_index(&[0.3, 0.2, 0.2, 0.5]), 1);
        let tiny = HyperGrid { folds: 9, ..HyperGrid::default() };
        assert!(kfold_select(&x, &y, 1, &tiny).is_err());
        let a = kfold_select(&x, &y, 1, &HyperGrid { folds: 4, ..HyperGrid::default() }).unwrap();
        let b = kfold_select(&x, &y, 1, &HyperGrid { folds: 4, ..HyperGrid::default() }).unwrap();
        assert_eq!(a, b);
    }

    fn ds(n: usize, tau: usize) -> LabeledDataset {
        let x = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
        let y = (0..n).map(|i| (i % 2) as u8).collect();
        LabeledDataset::new(1, x, y, tau).unwrap()
    }

    #[test]
    fn constant_scorer() {
        let suite = vec![ds(6, 3), ds(8, 5)];
        let s = evaluate_suite(|d| Ok(vec![cross_entropy(0.5, 0); d.test_len()]), &suite).unwrap();
        assert!((s.mu - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(s.sigma, 0.0);
    }

    #[test]
    fn two_dataset_hand_arithmetic() {
        // dataset 0 predicts 0.8 on labels [1, 0] (tau 3 of n 4); dataset 1 predicts 0.5.
        let a = LabeledDataset::new(1, vec![0.0; 4], vec![0, 1, 1, 0], 3).unwrap();
        let b = LabeledDataset::new(1, vec![1.0; 4], vec![0, 1, 1, 0], 3).unwrap();
        let scorer = |d: &LabeledDataset| {
            let o = if d.inputs()[0] == 0.0 { 0.8 } else { 0.5 };
            Ok(d.targets()[d.tau() - 1..].iter().map(|t| cross_entropy(o, *t)).collect())
        };
        let s = evaluate_suite(scorer, &[a, b]).unwrap();
        let m0 = (-(0.8f64).ln() - (0.2f64).ln()) / 2.0;
        let m1 = std::f64::consts::LN_2;
        assert!((s.per_dataset[0] - m0).abs() < 1e-15);
        assert!((s.mu - (m0 + m1) / 2.0).abs() < 1e-15);
        assert!((s.sigma - (m0 - m1).abs() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn scorer_failure_names_dataset() {
        let suite = vec![ds(6, 3), ds(6, 4)];
        let err = evaluate_suite(
            |d| {
                if d.tau() == 4 {
                    Err(Error::InvalidArgument("boom".into()))
                } else {
                    Ok(vec![0.1; d.test_len()])
                }
            },
            &suite,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dataset { index: 1, .. }));
    }
}
