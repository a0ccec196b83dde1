#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use metalearn_core::learner::{init_alpha, LearnerShape};
use metalearn_core::metaopt::{Checkpoint, Smorms3};
use metalearn_core::model::ModelShape;

pub fn metalearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metalearn"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Learner whose input gate is shut and forget gate fully open: the state
/// never moves from `theta1`.
pub fn frozen_checkpoint(n_in: usize, n_hidden: usize, theta1: Option<Vec<f64>>) -> Checkpoint {
    let model = ModelShape::new(n_in, n_hidden).unwrap();
    let shape = LearnerShape::new(&model, vec![8]).unwrap();
    let mut alpha = init_alpha(&shape, 1);
    for (gate, bias) in [
        (&mut alpha.candidate, 0.0),
        (&mut alpha.input_gate, -40.0),
        (&mut alpha.forget_gate, 40.0),
    ] {
        gate.weight.iter_mut().for_each(|w| *w = 0.0);
        gate.bias.iter_mut().for_each(|b| *b = bias);
    }
    if let Some(t) = theta1 {
        alpha.theta1 = t;
    }
    Checkpoint {
        model,
        optimizer: Smorms3::new(shape.alpha_count(true)),
        alpha,
        iteration: 0,
        seed: 0,
        config_echo: String::new(),
    }
}

pub fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}
