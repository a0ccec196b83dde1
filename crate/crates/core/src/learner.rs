//! LSTM-style learner whose cell state is the model parameter vector.
//!
//! At every timestep the learner input `[x_t, y_t * flag, flag, o_t]` goes
//! through a stack of ReLU fully connected layers, giving `h`. Three gate
//! maps bound one-to-one to the model coordinates then produce
//!
//! ```text
//! z = Wz h + bz            (linear candidate)
//! i = sigmoid(Wi h + bi)
//! f = sigmoid(Wf h + bf)
//! theta_next = i * z + f * theta
//! ```
//!
//! There is no output gate: the model itself produces the output.

use crate::error::{Error, Result};
use crate::model::ModelShape;
use crate::ndgrad::{Graph, Tensor, Var};
use crate::rng::Rng;

/// Extra learner inputs besides `x_t`: masked target, flag, prediction.
pub const EXTRA_INPUTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LearnerShape {
    input_dim: usize,
    fc_sizes: Vec<usize>,
    model_dim: usize,
}

impl LearnerShape {
    pub fn new(model: &ModelShape, fc_sizes: Vec<usize>) -> Result<Self> {
        Self::from_dims(model.n_in() + EXTRA_INPUTS, fc_sizes, model.param_count())
    }

    pub fn from_dims(input_dim: usize, fc_sizes: Vec<usize>, model_dim: usize) -> Result<Self> {
        if fc_sizes.is_empty() || fc_sizes.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "fc_sizes must be non-empty with positive widths, got {fc_sizes:?}"
            )));
        }
        if input_dim <= EXTRA_INPUTS || model_dim == 0 {
            return Err(Error::InvalidShape(format!(
                "learner needs input_dim > {EXTRA_INPUTS} and model_dim >= 1, got ({input_dim}, {model_dim})"
            )));
        }
        Ok(Self {
            input_dim,
            fc_sizes,
            model_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn fc_sizes(&self) -> &[usize] {
        &self.fc_sizes
    }

    pub fn model_dim(&self) -> usize {
        self.model_dim
    }

    pub fn last_width(&self) -> usize {
        *self.fc_sizes.last().expect("non-empty fc_sizes")
    }

    /// `(fan_in, fan_out)` of every FC layer.
    fn fc_dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        std::iter::once(self.input_dim)
            .chain(self.fc_sizes.iter().copied())
            .zip(self.fc_sizes.iter().copied())
    }

    /// Number of meta-learned scalars, optionally counting the initial state.
    pub fn alpha_count(&self, include_theta1: bool) -> usize {
        let fc: usize = self.fc_dims().map(|(i, o)| i * o + o).sum();
        let gates = 3 * (self.last_width() * self.model_dim + self.model_dim);
        fc + gates + if include_theta1 { self.model_dim } else { 0 }
    }
}

/// Dense affine map stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Affine {
    fn glorot(fan_in: usize, fan_out: usize, bias: f64, rng: &mut Rng) -> Self {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = (0..fan_in * fan_out).map(|_| rng.uniform_range(-s, s)).collect();
        Self {
            weight,
            bias: vec![bias; fan_out],
            fan_in,
            fan_out,
        }
    }

    pub fn bound(&self) -> f64 {
        (6.0 / (self.fan_in + self.fan_out) as f64).sqrt()
    }
}

/// All meta-learned quantities: FC stack, gate maps and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerParams {
    pub shape: LearnerShape,
    pub fc: Vec<Affine>,
    pub candidate: Affine,
    pub input_gate: Affine,
    pub forget_gate: Affine,
    pub theta1: Vec<f64>,
}

pub const INPUT_GATE_BIAS: f64 = -3.0;
pub const FORGET_GATE_BIAS: f64 = 3.0;
pub const THETA1_BOUND: f64 = 0.1;

/// Seeded initialization: Glorot-uniform weights, zero FC and candidate
/// biases, input gate bias -3, forget gate bias +3, `theta1` uniform in
/// `[-0.1, 0.1)`.
pub fn init_alpha(shape: &LearnerShape, seed: u64) -> LearnerParams {
    let mut rng = Rng::new(seed);
    let fc = shape
        .fc_dims()
        .map(|(i, o)| Affine::glorot(i, o, 0.0, &mut rng))
        .collect();
    let (h, m) = (shape.last_width(), shape.model_dim);
    let candidate = Affine::glorot(h, m, 0.0, &mut rng);
    let input_gate = Affine::glorot(h, m, INPUT_GATE_BIAS, &mut rng);
    let forget_gate = Affine::glorot(h, m, FORGET_GATE_BIAS, &mut rng);
    let theta1 = (0..m)
        .map(|_| rng.uniform_range(-THETA1_BOUND, THETA1_BOUND))
        .collect();
    LearnerParams {
        shape: shape.clone(),
        fc,
        candidate,
        input_gate,
        forget_gate,
        theta1,
    }
}

impl LearnerParams {
    /// Named parameter blocks in canonical (flattening) order.
    pub fn sections(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (k, layer) in self.fc.iter().enumerate() {
            out.push((format!("fc{k}.weight"), layer.weight.as_slice()));
            out.push((format!("fc{k}.bias"), layer.bias.as_slice()));
        }
        for (name, layer) in [
            ("candidate", &self.candidate),
            ("input_gate", &self.input_gate),
            ("forget_gate", &self.forget_gate),
        ] {
            out.push((format!("{name}.weight"), layer.weight.as_slice()));
            out.push((format!("{name}.bias"), layer.bias.as_slice()));
        }
        out.push(("theta1".to_string(), self.theta1.as_slice()));
        out
    }

    fn sections_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.fc {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        for layer in [
            &mut self.candidate,
            &mut self.input_gate,
            &mut self.forget_gate,
        ] {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.theta1);
        out
    }

    /// Expected length of each section, in canonical order.
    pub fn section_lengths(shape: &LearnerShape) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, o) in shape.fc_dims() {
            out.push(i * o);
            out.push(o);
        }
        for _ in 0..3 {
            out.push(shape.last_width() * shape.model_dim);
            out.push(shape.model_dim);
        }
        out.push(shape.model_dim);
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.sections().into_iter().flat_map(|(_, s)| s.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.shape.alpha_count(true);
        if flat.len() != expected {
            return Err(Error::Dimension {
                what: "flat learner parameters",
                expected,
                found: flat.len(),
            });
        }
        let mut offset = 0;
        for sec in self.sections_mut() {
            let n = sec.len();
            sec.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Rebuilds parameters from canonical-order sections.
    pub fn from_sections(shape: &LearnerShape, sections: Vec<Vec<f64>>) -> Result<Self> {
        let lengths = Self::section_lengths(shape);
        if sections.len() != lengths.len() {
            return Err(Error::Dimension {
                what: "learner section count",
                expected: lengths.len(),
                found: sections.len(),
            });
        }
        for (sec, len) in sections.iter().zip(&lengths) {
            if sec.len() != *len {
                return Err(Error::Dimension {
                    what: "learner section length",
                    expected: *len,
                    found: sec.len(),
                });
            }
        }
        let mut it = sections.into_iter();
        let mut take = |fan_in, fan_out| Affine {
            weight: it.next().unwrap(),
            bias: it.next().unwrap(),
            fan_in,
            fan_out,
        };
        let fc = shape.fc_dims().map(|(i, o)| take(i, o)).collect();
        let (h, m) = (shape.last_width(), shape.model_dim);
        let candidate = take(h, m);
        let input_gate = take(h, m);
        let forget_gate = take(h, m);
        let theta1 = it.next().unwrap();
        Ok(Self {
            shape: shape.clone(),
            fc,
            candidate,
            input_gate,
            forget_gate,
            theta1,
        })
    }

    /// Registers every block as a graph leaf.
    pub fn register(&self, g: &mut Graph) -> LearnerVars {
        let mut affine = |a: &Affine| -> AffineVars {
            let weight = g.leaf(Tensor::matrix(a.fan_out, a.fan_in, a.weight.clone()).unwrap());
            let bias = g.leaf(Tensor::vector(a.bias.clone()));
            AffineVars { weight, bias }
        };
        let fc = self.fc.iter().map(&mut affine).collect();
        let candidate = affine(&self.candidate);
        let input_gate = affine(&self.input_gate);
        let forget_gate = affine(&self.forget_gate);
        let theta1 = g.leaf(Tensor::vector(self.theta1.clone()));
        LearnerVars {
            shape: self.shape.clone(),
            fc,
            candidate,
            input_gate,
            forget_gate,
            theta1,
        }
    }

    /// Applies one learner step outside of any training graph.
    pub fn step(
        &self,
        x_t: &[f64],
        y_masked: f64,
        flag: f64,
        o_t: f64,
        theta_t: &[f64],
    ) -> Result<Vec<f64>> {
        Ok(self.step_gates(x_t, y_masked, flag, o_t, theta_t)?.theta_next)
    }

    /// Like [`LearnerParams::step`] but also returns the gate activations.
    pub fn step_gates(
        &self,
        x_t: &[f64],
        y_masked: f64,
        flag: f64,
        o_t: f64,
        theta_t: &[f64],
    ) -> Result<GateValues> {
        let mut g = Graph::new();
        let vars = self.register(&mut g);
        let o = g.constant(Tensor::vector(vec![o_t]));
        let theta = g.constant(Tensor::vector(theta_t.to_vec()));
        let out = vars.step(&mut g, x_t, y_masked, flag, o, theta)?;
        Ok(GateValues {
            candidate: g.value(out.candidate).data().to_vec(),
            input_gate: g.value(out.input_gate).data().to_vec(),
            forget_gate: g.value(out.forget_gate).data().to_vec(),
            theta_next: g.value(out.theta_next).data().to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateValues {
    pub candidate: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub theta_next: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct AffineVars {
    pub weight: Var,
    pub bias: Var,
}

impl AffineVars {
    fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.matvec(self.weight, x)?;
        Ok(g.add(y, self.bias)?)
    }
}

/// Graph handles for a registered [`LearnerParams`].
#[derive(Debug, Clone)]
pub struct LearnerVars {
    pub shape: LearnerShape,
    pub fc: Vec<AffineVars>,
    pub candidate: AffineVars,
    pub input_gate: AffineVars,
    pub forget_gate: AffineVars,
    pub theta1: Var,
}

/// Nodes produced by one learner step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub candidate: Var,
    pub input_gate: Var,
    pub forget_gate: Var,
    pub theta_next: Var,
}

impl LearnerVars {
    /// Leaves in canonical flattening order (matches [`LearnerParams::to_flat`]).
    pub fn leaves(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for a in self
            .fc
            .iter()
            .chain([&self.candidate, &self.input_gate, &self.forget_gate])
        {
            out.push(a.weight);
            out.push(a.bias);
        }
        out.push(self.theta1);
        out
    }

    /// Inverse of [`LearnerVars::leaves`].
    pub fn from_leaves(shape: &LearnerShape, leaves: &[Var]) -> Result<Self> {
        let expected = 2 * (shape.fc_sizes().len() + 3) + 1;
        if leaves.len() != expected {
            return Err(Error::Dimension {
                what: "learner leaf count",
                expected,
                found: leaves.len(),
            });
        }
        let mut it = leaves.chunks_exact(2).map(|p| AffineVars {
            weight: p[0],
            bias: p[1],
        });
        let fc = it.by_ref().take(shape.fc_sizes().len()).collect();
        let mut next = || it.next().expect("length checked");
        let (candidate, input_gate, forget_gate) = (next(), next(), next());
        Ok(Self {
            shape: shape.clone(),
            fc,
            candidate,
            input_gate,
            forget_gate,
            theta1: leaves[expected - 1],
        })
    }

    /// One differentiable learner step. `o_t` and `theta_t` are graph nodes
    /// so gradients flow through the model prediction and the cell state.
    pub fn step(
        &self,
        g: &mut Graph,
        x_t: &[f64],
        y_masked: f64,
        flag: f64,
        o_t: Var,
        theta_t: Var,
    ) -> Result<StepOutput> {
        if flag != 0.0 && flag != 1.0 {
            return Err(Error::InvalidArgument(format!("flag must be 0 or 1, got {flag}")));
        }
        if flag == 0.0 && y_masked != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "target must be masked to 0 when flag is 0, got {y_masked}"
            )));
        }
        let n_x = self.shape.input_dim - EXTRA_INPUTS;
        if x_t.len() != n_x {
            return Err(Error::Dimension {
                what: "learner input x_t",
                expected: n_x,
                found: x_t.len(),
            });
        }
        if g.value(o_t).len() != 1 {
            return Err(Error::Dimension {
                what: "model prediction",
                expected: 1,
                found: g.value(o_t).len(),
            });
        }
        if g.value(theta_t).len() != self.shape.model_dim {
            return Err(Error::Dimension {
                what: "cell state",
                expected: self.shape.model_dim,
                found: g.value(theta_t).len(),
            });
        }
        let mut head = x_t.to_vec();
        head.extend_from_slice(&[y_masked, flag]);
        let head = g.constant(Tensor::vector(head));
        let mut h = g.concat(&[head, o_t])?;
        for layer in &self.fc {
            let pre = layer.apply(g, h)?;
            h = g.relu(pre);
        }
        let candidate = self.candidate.apply(g, h)?;
        let pre_i = self.input_gate.apply(g, h)?;
        let input_gate = g.sigmoid(pre_i);
        let pre_f = self.forget_gate.apply(g, h)?;
        let forget_gate = g.sigmoid(pre_f);
        let write = g.mul(input_gate, candidate)?;
        let keep = g.mul(forget_gate, theta_t)?;
        let theta_next = g.add(write, keep)?;
        Ok(StepOutput {
            candidate,
            input_gate,
            forget_gate,
            theta_next,
        })
    }
}
