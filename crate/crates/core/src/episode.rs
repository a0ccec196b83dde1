//! Predict-then-update episodes and the two meta-objectives.
//!
//! Timesteps are 1-based throughout: sample `t` is a training sample when
//! `t < tau` and a test sample otherwise, so a dataset of length `n` has
//! `tau - 1` training and `n - tau + 1` test samples.

use crate::error::{Error, Result};
use crate::learner::{LearnerParams, LearnerVars};
use crate::model::{self, ModelShape};
use crate::ndgrad::{Graph, Tensor, Var};

/// Clamp applied to predictions before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// One episode: standardized inputs, binary targets and the split index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    n_in: usize,
    x: Vec<f64>,
    y: Vec<u8>,
    tau: usize,
}

impl LabeledDataset {
    /// `x` is row-major `n x n_in`; `tau` is the 1-based index of the first
    /// test sample.
    pub fn new(n_in: usize, x: Vec<f64>, y: Vec<u8>, tau: usize) -> Result<Self> {
        let n = y.len();
        if n_in == 0 || x.len() != n * n_in {
            return Err(Error::Dimension {
                what: "dataset inputs",
                expected: n * n_in,
                found: x.len(),
            });
        }
        if !(2..=n).contains(&tau) {
            return Err(Error::InvalidArgument(format!(
                "tau must satisfy 2 <= tau <= n = {n}, got {tau}"
            )));
        }
        if y.iter().any(|v| *v > 1) {
            return Err(Error::InvalidArgument("targets must be 0 or 1".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("inputs must be finite".into()));
        }
        Ok(Self { n_in, x, y, tau })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn inputs(&self) -> &[f64] {
        &self.x
    }

    pub fn targets(&self) -> &[u8] {
        &self.y
    }

    /// Input row of 1-based timestep `t`.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.x[(t - 1) * self.n_in..t * self.n_in]
    }

    pub fn target(&self, t: usize) -> u8 {
        self.y[t - 1]
    }

    pub fn is_train(&self, t: usize) -> bool {
        t < self.tau
    }

    pub fn train_len(&self) -> usize {
        self.tau - 1
    }

    pub fn test_len(&self) -> usize {
        self.len() - self.tau + 1
    }

    /// Timesteps of the test portion.
    pub fn test_steps(&self) -> std::ops::RangeInclusive<usize> {
        self.tau..=self.len()
    }

    /// Copy with a different label at 1-based timestep `t`.
    pub fn with_target(&self, t: usize, y: u8) -> Result<Self> {
        let mut ys = self.y.clone();
        *ys.get_mut(t.wrapping_sub(1)).ok_or_else(|| {
            Error::InvalidArgument(format!("timestep {t} outside 1..={}", self.len()))
        })? = y;
        Self::new(self.n_in, self.x.clone(), ys, self.tau)
    }

    /// Split into (train, test) row-major inputs and targets.
    pub fn split(&self) -> ((&[f64], &[u8]), (&[f64], &[u8])) {
        let cut = self.train_len();
        let (xtr, xte) = self.x.split_at(cut * self.n_in);
        let (ytr, yte) = self.y.split_at(cut);
        ((xtr, ytr), (xte, yte))
    }
}

/// `[x_t, y_t * 1{t<tau}, 1{t<tau}, o_t]`
pub fn build_learner_input(dataset: &LabeledDataset, t: usize, o_t: f64) -> Result<Vec<f64>> {
    check_step(dataset, t)?;
    let (y, flag) = masked_target(dataset, t);
    let mut v = dataset.row(t).to_vec();
    v.extend_from_slice(&[y, flag, o_t]);
    Ok(v)
}

fn check_step(dataset: &LabeledDataset, t: usize) -> Result<()> {
    if t == 0 || t > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "timestep {t} outside 1..={}",
            dataset.len()
        )));
    }
    Ok(())
}

/// `(y_t * flag, flag)`; the target never leaves this function for test steps.
fn masked_target(dataset: &LabeledDataset, t: usize) -> (f64, f64) {
    if dataset.is_train(t) {
        (f64::from(dataset.target(t)), 1.0)
    } else {
        (0.0, 0.0)
    }
}

/// Binary cross-entropy with the prediction clamped to `[1e-7, 1 - 1e-7]`.
pub fn cross_entropy(o: f64, y: u8) -> f64 {
    let c = o.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y == 1 {
        -c.ln()
    } else {
        -(1.0 - c).ln()
    }
}

/// Graph version of [`cross_entropy`], bit-identical in the forward value.
pub fn cross_entropy_node(g: &mut Graph, o: Var, y: u8) -> Result<Var> {
    let c = g.clamp(o, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let p = if y == 1 {
        c
    } else {
        let one = g.constant(Tensor::new(g.value(c).shape().to_vec(), vec![1.0])?);
        g.sub(one, c)?
    };
    let l = g.log(p);
    Ok(g.scale(l, -1.0))
}

/// Per-timestep record of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub tau: usize,
    pub predictions: Vec<f64>,
    pub losses: Vec<f64>,
    /// `theta_1 ..= theta_{n+1}` when recorded.
    pub snapshots: Option<Vec<Vec<f64>>>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// Mean loss over the test portion (`t >= tau`).
    pub fn test_mean(&self) -> Option<f64> {
        let n = self.losses.len();
        if self.tau == 0 || self.tau > n {
            return None;
        }
        let test = &self.losses[self.tau - 1..];
        Some(test.iter().fold(0.0, |a, v| a + v) / test.len() as f64)
    }

    pub fn mean(&self) -> f64 {
        self.losses.iter().fold(0.0, |a, v| a + v) / self.losses.len() as f64
    }
}

/// Graph nodes of an unrolled episode.
#[derive(Debug, Clone)]
pub struct Unrolled {
    pub predictions: Vec<Var>,
    pub losses: Vec<Var>,
    /// `theta_1 ..= theta_{n+1}`
    pub states: Vec<Var>,
}

/// Unrolls the episode inside `g`: for every `t`, predict with `theta_t`,
/// score, then let the learner produce `theta_{t+1}`.
pub fn unroll(
    g: &mut Graph,
    vars: &LearnerVars,
    model: &ModelShape,
    dataset: &LabeledDataset,
) -> Result<Unrolled> {
    check_compat(&vars.shape, model, dataset)?;
    let n = dataset.len();
    let mut predictions = Vec::with_capacity(n);
    let mut losses = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n + 1);
    let mut theta = vars.theta1;
    states.push(theta);
    for t in 1..=n {
        let x = g.constant(Tensor::vector(dataset.row(t).to_vec()));
        let o = model::forward(g, model, theta, x)?;
        losses.push(cross_entropy_node(g, o, dataset.target(t))?);
        predictions.push(o);
        let (y, flag) = masked_target(dataset, t);
        theta = vars.step(g, dataset.row(t), y, flag, o, theta)?.theta_next;
        states.push(theta);
    }
    Ok(Unrolled {
        predictions,
        losses,
        states,
    })
}

fn check_compat(
    shape: &crate::learner::LearnerShape,
    model: &ModelShape,
    dataset: &LabeledDataset,
) -> Result<()> {
    if shape.model_dim() != model.param_count() {
        return Err(Error::Dimension {
            what: "learner model_dim",
            expected: model.param_count(),
            found: shape.model_dim(),
        });
    }
    if dataset.n_in() != model.n_in() || shape.input_dim() != model.n_in() + 3 {
        return Err(Error::Dimension {
            what: "dataset input dimension",
            expected: model.n_in(),
            found: dataset.n_in(),
        });
    }
    Ok(())
}

/// Runs an episode without keeping gradients around.
pub fn run_episode(
    alpha: &LearnerParams,
    model: &ModelShape,
    dataset: &LabeledDataset,
    record_snapshots: bool,
) -> Result<EpisodeTrace> {
    let mut g = Graph::new();
    let vars = alpha.register(&mut g);
    let un = unroll(&mut g, &vars, model, dataset)?;
    let scalar = |v: &Var| g.value(*v).data()[0];
    Ok(EpisodeTrace {
        tau: dataset.tau(),
        predictions: un.predictions.iter().map(scalar).collect(),
        losses: un.losses.iter().map(scalar).collect(),
        snapshots: record_snapshots.then(|| {
            un.states
                .iter()
                .map(|v| g.value(*v).data().to_vec())
                .collect()
        }),
    })
}

/// Test-portion objective: per-dataset mean test loss, averaged over datasets.
pub fn cost_eval(traces: &[EpisodeTrace]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("cost_eval needs at least one trace".into()));
    }
    let mut total = 0.0;
    for (index, tr) in traces.iter().enumerate() {
        total += tr.test_mean().ok_or_else(|| Error::Dataset {
            index,
            reason: format!("empty test portion (tau {} with n {})", tr.tau, tr.len()),
        })?;
    }
    Ok(total / traces.len() as f64)
}

/// Training objective: per-dataset mean over all timesteps, averaged over datasets.
pub fn cost_train(traces: &[EpisodeTrace]) -> Result<f64> {
    if traces.is_empty() || traces.iter().any(EpisodeTrace::is_empty) {
        return Err(Error::InvalidArgument("cost_train needs non-empty traces".into()));
    }
    Ok(traces.iter().fold(0.0, |a, t| a + t.mean()) / traces.len() as f64)
}

/// Differentiable [`cost_train`] over per-episode loss nodes.
pub fn cost_train_node(g: &mut Graph, episodes: &[Vec<Var>]) -> Result<Var> {
    if episodes.is_empty() || episodes.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("cost_train needs non-empty episodes".into()));
    }
    let mut means = Vec::with_capacity(episodes.len());
    for losses in episodes {
        let all = g.concat(losses)?;
        means.push(g.mean(all)?);
    }
    let all = g.concat(&means)?;
    Ok(g.mean(all)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{init_alpha, LearnerShape};

    fn toy() -> LabeledDataset {
        let x = vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8];
        LabeledDataset::new(2, x, vec![1, 0, 1, 1], 3).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::new(2, vec![0.0; 8], vec![0, 1, 0, 1], 1).is_err());
        assert!(LabeledDataset::new(2, vec![0.0; 8], vec![0, 1, 0, 1], 5).is_err());
        assert!(LabeledDataset::new(2, vec![0.0; 7], vec![0, 1, 0, 1], 2).is_err());
        assert!(LabeledDataset::new(2, vec![0.0; 8], vec![0, 2, 0, 1], 2).is_err());
        let d = toy();
        assert_eq!((d.train_len(), d.test_len()), (2, 2));
    }

    #[test]
    fn learner_input_masking() {
        let d = toy();
        assert_eq!(build_learner_input(&d, 2, 0.3).unwrap(), vec![-0.3, 0.4, 0.0, 1.0, 0.3]);
        assert_eq!(build_learner_input(&d, 1, 0.3).unwrap(), vec![0.1, 0.2, 1.0, 1.0, 0.3]);
        assert_eq!(build_learner_input(&d, 3, 0.3).unwrap(), vec![0.5, -0.6, 0.0, 0.0, 0.3]);
        assert!(build_learner_input(&d, 0, 0.3).is_err());
        assert!(build_learner_input(&d, 5, 0.3).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((cross_entropy(0.5, 0) - ln2).abs() < 1e-15);
        assert!((cross_entropy(0.5, 1) - ln2).abs() < 1e-15);
        assert!((cross_entropy(1.0 - 1e-7, 1) - 1e-7).abs() < 1e-12);
        assert!((cross_entropy(1.0, 0) - 16.118_095_650_958_32).abs() < 1e-6);
        assert!((cross_entropy(0.0, 1) + (1e-7f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_node_matches_scalar() {
        for &o in &[0.0, 1e-9, 0.2, 0.5, 0.77, 1.0 - 1e-9, 1.0] {
            for y in [0u8, 1] {
                let mut g = Graph::new();
                let v = g.leaf(Tensor::vector(vec![o]));
                let l = cross_entropy_node(&mut g, v, y).unwrap();
                assert_eq!(g.value(l).data()[0].to_bits(), cross_entropy(o, y).to_bits());
            }
        }
    }

    fn frozen(model: &ModelShape, theta1: Vec<f64>) -> LearnerParams {
        let shape = LearnerShape::new(model, vec![4]).unwrap();
        let mut a = init_alpha(&shape, 2);
        for l in [&mut a.input_gate, &mut a.forget_gate] {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
        }
        a.input_gate.bias.iter_mut().for_each(|b| *b = -40.0);
        a.forget_gate.bias.iter_mut().for_each(|b| *b = 40.0);
        a.theta1 = theta1;
        a
    }

    #[test]
    fn frozen_learner_keeps_state() {
        let model = ModelShape::new(2, 4).unwrap();
        let theta1: Vec<f64> = (0..17).map(|k| (k as f64 - 8.0) * 0.05).collect();
        let a = frozen(&model, theta1.clone());
        let x = [0.3, -0.7].repeat(5);
        let d = LabeledDataset::new(2, x, vec![1, 0, 1, 0, 1], 3).unwrap();
        let tr = run_episode(&a, &model, &d, true).unwrap();
        assert_eq!(tr.predictions.len(), 5);
        assert_eq!(tr.losses.len(), 5);
        let snaps = tr.snapshots.as_ref().unwrap();
        assert_eq!(snaps.len(), 6);
        for s in snaps {
            for (a, b) in s.iter().zip(&theta1) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        for o in &tr.predictions {
            assert!((o - tr.predictions[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_prior_predicts_half() {
        let model = ModelShape::new(2, 4).unwrap();
        let a = frozen(&model, vec![0.0; 17]);
        let tr = run_episode(&a, &model, &toy(), false).unwrap();
        assert!(tr.snapshots.is_none());
        for (o, l) in tr.predictions.iter().zip(&tr.losses) {
            assert!((o - 0.5).abs() < 1e-15);
            assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        }
        assert!((cost_eval(&[tr.clone()]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((cost_train(&[tr]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = ModelShape::new(3, 4).unwrap();
        let a = frozen(&ModelShape::new(2, 4).unwrap(), vec![0.0; 17]);
        assert!(run_episode(&a, &model, &toy(), false).is_err());
    }

    fn trace(tau: usize, losses: Vec<f64>) -> EpisodeTrace {
        EpisodeTrace {
            tau,
            predictions: vec![0.5; losses.len()],
            losses,
            snapshots: None,
        }
    }

    #[test]
    fn objectives_by_hand() {
        // dataset a: test losses [0.2, 0.4] -> 0.3; dataset b: test loss [0.9] -> 0.9
        let a = trace(3, vec![5.0, 5.0, 0.2, 0.4]);
        let b = trace(4, vec![1.0, 1.0, 1.0, 0.9]);
        assert!((cost_eval(&[a.clone(), b.clone()]).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(cost_eval(&[b.clone()]).unwrap(), 0.9);
        assert!((cost_train(&[trace(2, vec![0.2, 0.4, 0.6])]).unwrap() - 0.4).abs() < 1e-15);
        let whole = [trace(1, vec![0.2, 0.4]), trace(1, vec![0.3, 0.9, 1.5])];
        assert_eq!(cost_eval(&whole).unwrap(), cost_train(&whole).unwrap());
    }

    #[test]
    fn empty_test_portion_names_dataset() {
        let ok = trace(2, vec![0.1, 0.2]);
        let bad = trace(3, vec![0.1, 0.2]);
        match cost_eval(&[ok, bad]) {
            Err(Error::Dataset { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cost_train_node_matches_plain() {
        let mut g = Graph::new();
        let eps: Vec<Vec<Var>> = [vec![0.2, 0.4, 0.6], vec![0.1, 0.7]]
            .iter()
            .map(|ls| ls.iter().map(|l| g.leaf(Tensor::vector(vec![*l]))).collect())
            .collect();
        let c = cost_train_node(&mut g, &eps).unwrap();
        let plain = cost_train(&[trace(2, vec![0.2, 0.4, 0.6]), trace(2, vec![0.1, 0.7])]).unwrap();
        assert_eq!(g.value(c).data()[0], plain);
    }
}
