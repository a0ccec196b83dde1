//! One-hidden-layer MLP whose whole parameter vector is a flat `theta`.
//!
//! Layout of `theta` (fixed, the learner's gates bind to it per coordinate):
//!
//! | block | shape                 |
//! |-------|-----------------------|
//! | `W1`  | `n_hidden x n_in`, row-major |
//! | `b1`  | `n_hidden`            |
//! | `W2`  | `1 x n_hidden`        |
//! | `b2`  | `1`                   |

use crate::error::{Error, Result};
use crate::ndgrad::{sigmoid, Graph, Var};

/// Output width; the model is a binary classifier.
pub const N_OUT: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelShape {
    n_in: usize,
    n_hidden: usize,
}

impl ModelShape {
    pub fn new(n_in: usize, n_hidden: usize) -> Result<Self> {
        if n_in == 0 || n_hidden == 0 {
            return Err(Error::InvalidShape(format!(
                "model needs n_in >= 1 and n_hidden >= 1, got ({n_in}, {n_hidden})"
            )));
        }
        Ok(Self { n_in, n_hidden })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn n_out(&self) -> usize {
        N_OUT
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.n_hidden * self.n_in;
        let w2 = b1 + self.n_hidden;
        let b2 = w2 + N_OUT * self.n_hidden;
        [w1, b1, w2, b2]
    }
}

pub fn param_count(shape: &ModelShape) -> usize {
    shape.n_hidden * shape.n_in + shape.n_hidden + N_OUT * shape.n_hidden + N_OUT
}

/// The four parameter blocks of a model, copied out of `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Unpacked {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

fn check_len(shape: &ModelShape, theta: &[f64]) -> Result<()> {
    if theta.len() != shape.param_count() {
        return Err(Error::Dimension {
            what: "model parameter vector",
            expected: shape.param_count(),
            found: theta.len(),
        });
    }
    Ok(())
}

pub fn unpack(theta: &[f64], shape: &ModelShape) -> Result<Unpacked> {
    check_len(shape, theta)?;
    let [w1, b1, w2, b2] = shape.offsets();
    Ok(Unpacked {
        w1: theta[w1..b1].to_vec(),
        b1: theta[b1..w2].to_vec(),
        w2: theta[w2..b2].to_vec(),
        b2: theta[b2..].to_vec(),
    })
}

pub fn pack(parts: &Unpacked) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.w1.len() + parts.b1.len() + parts.w2.len() + 1);
    out.extend_from_slice(&parts.w1);
    out.extend_from_slice(&parts.b1);
    out.extend_from_slice(&parts.w2);
    out.extend_from_slice(&parts.b2);
    out
}

/// Differentiable forward pass `sigmoid(W2 relu(W1 x + b1) + b2)`.
///
/// `theta` must be a node holding the flat parameter vector; the returned
/// node has shape `[1]`.
pub fn forward(g: &mut Graph, shape: &ModelShape, theta: Var, x: Var) -> Result<Var> {
    check_len(shape, g.value(theta).data())?;
    if g.value(x).len() != shape.n_in {
        return Err(Error::Dimension {
            what: "model input",
            expected: shape.n_in,
            found: g.value(x).len(),
        });
    }
    let (h, n) = (shape.n_hidden, shape.n_in);
    let [w1, b1, w2, b2] = shape.offsets();
    let w1 = g.slice(theta, w1, &[h, n])?;
    let b1 = g.slice(theta, b1, &[h])?;
    let w2 = g.slice(theta, w2, &[N_OUT, h])?;
    let b2 = g.slice(theta, b2, &[N_OUT])?;

    let pre = g.matvec(w1, x)?;
    let pre = g.add(pre, b1)?;
    let hidden = g.relu(pre);
    let logit = g.matvec(w2, hidden)?;
    let logit = g.add(logit, b2)?;
    Ok(g.sigmoid(logit))
}

/// Plain evaluation of the model, bit-identical to [`forward`].
pub fn predict(shape: &ModelShape, theta: &[f64], x: &[f64]) -> Result<f64> {
    check_len(shape, theta)?;
    if x.len() != shape.n_in {
        return Err(Error::Dimension {
            what: "model input",
            expected: shape.n_in,
            found: x.len(),
        });
    }
    let n = shape.n_in;
    let [_, b1, w2, b2] = shape.offsets();
    let mut logit = 0.0;
    for j in 0..shape.n_hidden {
        let row = &theta[j * n..(j + 1) * n];
        let pre = row.iter().zip(x).fold(0.0, |acc, (w, v)| acc + w * v) + theta[b1 + j];
        let act = if pre > 0.0 { pre } else { 0.0 };
        logit += theta[w2 + j] * act;
    }
    Ok(sigmoid(logit + theta[b2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndgrad::Tensor;
    use proptest::prelude::*;

    #[test]
    fn counts() {
        assert_eq!(param_count(&ModelShape::new(5, 32).unwrap()), 225);
        assert_eq!(param_count(&ModelShape::new(2, 4).unwrap()), 17);
        assert_eq!(param_count(&ModelShape::new(1, 1).unwrap()), 4);
        assert!(ModelShape::new(0, 3).is_err());
    }

    #[test]
    fn unpack_layout() {
        let shape = ModelShape::new(2, 4).unwrap();
        let theta: Vec<f64> = (0..17).map(|v| v as f64).collect();
        let parts = unpack(&theta, &shape).unwrap();
        assert_eq!(parts.w1, (0..8).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(parts.b1, vec![8.0, 9.0, 10.0, 11.0]);
        assert_eq!(parts.w2, vec![12.0, 13.0, 14.0, 15.0]);
        assert_eq!(parts.b2, vec![16.0]);
        assert_eq!(pack(&parts), theta);
        assert!(matches!(
            unpack(&theta[..16], &shape),
            Err(Error::Dimension { expected: 17, found: 16, .. })
        ));
    }

    fn graph_forward(shape: &ModelShape, theta: &[f64], x: &[f64]) -> f64 {
        let mut g = Graph::new();
        let t = g.constant(Tensor::vector(theta.to_vec()));
        let x = g.constant(Tensor::vector(x.to_vec()));
        let o = forward(&mut g, shape, t, x).unwrap();
        g.value(o).data()[0]
    }

    #[test]
    fn zero_model_predicts_half() {
        let shape = ModelShape::new(5, 32).unwrap();
        let theta = vec![0.0; 225];
        assert_eq!(graph_forward(&shape, &theta, &[1.0, -2.0, 3.0, 0.5, 9.0]), 0.5);
    }

    #[test]
    fn bias_only_output() {
        let shape = ModelShape::new(2, 4).unwrap();
        let mut theta = vec![0.0; 17];
        theta[12..16].copy_from_slice(&[0.3, -2.0, 1.0, 5.0]);
        theta[16] = 1.25;
        assert_eq!(graph_forward(&shape, &theta, &[3.0, -1.0]), sigmoid(1.25));
    }

    #[test]
    fn hand_set_tiny_net() {
        let shape = ModelShape::new(2, 1).unwrap();
        let theta = [1.0, 1.0, 0.0, 1.0, 0.0];
        let o = graph_forward(&shape, &theta, &[1.0, 2.0]);
        let expected = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((o - expected).abs() < 1e-15);
        assert!((o - 0.95257).abs() < 1e-5);
    }

    #[test]
    fn dimension_errors() {
        let shape = ModelShape::new(2, 4).unwrap();
        assert!(predict(&shape, &[0.0; 17], &[1.0]).is_err());
        assert!(predict(&shape, &[0.0; 16], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn count_matches_unpack(n_in in 1usize..=64, n_hidden in 1usize..=64) {
            let shape = ModelShape::new(n_in, n_hidden).unwrap();
            let theta = vec![0.5; param_count(&shape)];
            let parts = unpack(&theta, &shape).unwrap();
            prop_assert_eq!(pack(&parts), theta);
        }

        #[test]
        fn output_in_open_unit_interval_and_paths_agree(
            theta in proptest::collection::vec(-1.0f64..1.0, 17),
            x in proptest::collection::vec(-3.0f64..3.0, 2),
        ) {
            let shape = ModelShape::new(2, 4).unwrap();
            let plain = predict(&shape, &theta, &x).unwrap();
            let graph = graph_forward(&shape, &theta, &x);
            prop_assert_eq!(plain.to_bits(), graph.to_bits());
            prop_assert!(plain > 0.0 && plain < 1.0);
        }
    }
}
