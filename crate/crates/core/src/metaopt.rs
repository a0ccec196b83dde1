//! Meta-training: SMORMS3 over every learner parameter, one episode per step.

use std::path::Path;

use crate::container::{self, Container, FormatError, SectionData};
use crate::datagen::{gen_indexed, GenConfig};
use crate::episode::{cost_train_node, unroll};
use crate::error::{Error, Result};
use crate::learner::{init_alpha, LearnerParams, LearnerShape};
use crate::model::ModelShape;
use crate::ndgrad::Graph;
use crate::rng::{derive_seed, Rng};

pub const SMORMS3_EPS: f64 = 1e-16;

/// Per-coordinate SMORMS3 accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Smorms3 {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub mem: Vec<f64>,
}

impl Smorms3 {
    pub fn new(len: usize) -> Self {
        Self {
            g1: vec![0.0; len],
            g2: vec![0.0; len],
            mem: vec![1.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mem.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mem.is_empty()
    }

    /// One update of `params` in place. Nothing is modified when a gradient
    /// coordinate is not finite; the error then reports `iteration`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, iteration: u64) -> Result<()> {
        if params.len() != self.len() || grads.len() != self.len() {
            return Err(Error::Dimension {
                what: "optimizer vectors",
                expected: self.len(),
                found: if params.len() != self.len() { params.len() } else { grads.len() },
            });
        }
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if let Some(coordinate) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { iteration, coordinate });
        }
        for k in 0..params.len() {
            let g = grads[k];
            let r = 1.0 / (self.mem[k] + 1.0);
            self.g1[k] = (1.0 - r) * self.g1[k] + r * g;
            self.g2[k] = (1.0 - r) * self.g2[k] + r * g * g;
            let x = self.g1[k] * self.g1[k] / (self.g2[k] + SMORMS3_EPS);
            params[k] -= g * lr.min(x) / (self.g2[k].sqrt() + SMORMS3_EPS);
            self.mem[k] = 1.0 + self.mem[k] * (1.0 - x);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelShape,
    pub fc_sizes: Vec<usize>,
    pub gen: GenConfig,
    pub learning_rate: f64,
    pub iterations: u64,
    pub seed: u64,
    /// Number of meta-training datasets, generated lazily from sub-seeds.
    pub pool_size: u64,
    /// Emit a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: u64,
    /// Optional global gradient-norm clip.
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        if self.gen.n_in != self.model.n_in() {
            return Err(Error::InvalidArgument(format!(
                "generator n_in {} differs from model n_in {}",
                self.gen.n_in,
                self.model.n_in()
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.pool_size == 0 {
            return Err(Error::InvalidArgument("pool_size must be >= 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument("clip_norm must be positive".into()));
            }
        }
        LearnerShape::new(&self.model, self.fc_sizes.clone())?;
        Ok(())
    }

    pub fn learner_shape(&self) -> Result<LearnerShape> {
        LearnerShape::new(&self.model, self.fc_sizes.clone())
    }

    /// Seed of the lazily generated meta-training pool.
    pub fn pool_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelShape,
    pub alpha: LearnerParams,
    pub optimizer: Smorms3,
    pub iteration: u64,
    pub seed: u64,
    /// Free-form configuration text stored verbatim.
    pub config_echo: String,
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MLLSTMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn learner_shape(&self) -> &LearnerShape {
        &self.alpha.shape
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let fc = self
            .alpha
            .shape
            .fc_sizes()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let header = format!(
            "n_in={}\nn_hidden={}\nfc_sizes={}\nseed={}\niteration={}\n---\n{}",
            self.model.n_in(),
            self.model.n_hidden(),
            fc,
            self.seed,
            self.iteration,
            self.config_echo
        );
        let mut sections: Vec<(String, SectionData)> = self
            .alpha
            .sections()
            .into_iter()
            .map(|(n, s)| (n, SectionData::F64(s.to_vec())))
            .collect();
        for (name, v) in [
            ("opt.g1", &self.optimizer.g1),
            ("opt.g2", &self.optimizer.g2),
            ("opt.mem", &self.optimizer.mem),
        ] {
            sections.push((name.to_string(), SectionData::F64(v.clone())));
        }
        Container { header, sections }.encode(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, FormatError> {
        let c = Container::decode(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let (fields, config_echo) = container::parse_header(&c.header);
        let n_in: usize = container::parse_field(&fields, "n_in")?;
        let n_hidden: usize = container::parse_field(&fields, "n_hidden")?;
        let fc_sizes = container::header_field(&fields, "fc_sizes")?
            .split(',')
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| FormatError::Header("cannot parse `fc_sizes`".into()))?;
        let seed = container::parse_field(&fields, "seed")?;
        let iteration = container::parse_field(&fields, "iteration")?;
        let model = ModelShape::new(n_in, n_hidden).map_err(|e| FormatError::Header(e.to_string()))?;
        let shape =
            LearnerShape::new(&model, fc_sizes).map_err(|e| FormatError::Header(e.to_string()))?;

        let expected_names: Vec<String> = {
            let probe = LearnerParams::section_lengths(&shape);
            let mut names = Vec::with_capacity(probe.len() + 3);
            for k in 0..shape.fc_sizes().len() {
                names.push(format!("fc{k}.weight"));
                names.push(format!("fc{k}.bias"));
            }
            for g in ["candidate", "input_gate", "forget_gate"] {
                names.push(format!("{g}.weight"));
                names.push(format!("{g}.bias"));
            }
            names.push("theta1".into());
            names
        };
        let lengths = LearnerParams::section_lengths(&shape);
        let mut it = c.sections.into_iter();
        let mut take_f64 = |name: &str, len: usize| -> std::result::Result<Vec<f64>, FormatError> {
            match Container::expect_section(&mut it, name)? {
                SectionData::F64(v) if v.len() == len => Ok(v),
                SectionData::F64(v) => Err(FormatError::Section {
                    name: name.to_string(),
                    reason: format!("header implies {len} values, payload has {}", v.len()),
                }),
                _ => Err(FormatError::Section {
                    name: name.to_string(),
                    reason: "expected f64 data".into(),
                }),
            }
        };
        let mut learner_sections = Vec::with_capacity(lengths.len());
        for (name, len) in expected_names.iter().zip(&lengths) {
            learner_sections.push(take_f64(name, *len)?);
        }
        let total = shape.alpha_count(true);
        let optimizer = Smorms3 {
            g1: take_f64("opt.g1", total)?,
            g2: take_f64("opt.g2", total)?,
            mem: take_f64("opt.mem", total)?,
        };
        if let Some((name, _)) = it.next() {
            return Err(FormatError::Section {
                name,
                reason: "unexpected extra section".into(),
            });
        }
        let alpha = LearnerParams::from_sections(&shape, learner_sections)
            .map_err(|e| FormatError::Header(e.to_string()))?;
        Ok(Self {
            model,
            alpha,
            optimizer,
            iteration,
            seed,
            config_echo,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

/// Loss and flattened gradient of the all-timestep objective on one episode.
pub fn episode_gradient(
    alpha: &LearnerParams,
    model: &ModelShape,
    dataset: &crate::episode::LabeledDataset,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let vars = alpha.register(&mut g);
    let un = unroll(&mut g, &vars, model, dataset)?;
    let loss = cost_train_node(&mut g, &[un.losses])?;
    let grads = g.backward(loss)?;
    Ok((g.value(loss).data()[0], grads.flatten(&vars.leaves())))
}

/// Progress notifications from [`meta_train`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step { iteration: u64, loss: f64 },
    Checkpoint(&'a Checkpoint),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// `(iteration, loss)` per step, loss measured before that step's update.
    pub log: Vec<(u64, f64)>,
}

/// Initial checkpoint for `config`.
pub fn initial_checkpoint(config: &TrainConfig, config_echo: &str) -> Result<Checkpoint> {
    let shape = config.learner_shape()?;
    let alpha = init_alpha(&shape, derive_seed(config.seed, 0));
    Ok(Checkpoint {
        model: config.model,
        optimizer: Smorms3::new(shape.alpha_count(true)),
        alpha,
        iteration: 0,
        seed: config.seed,
        config_echo: config_echo.to_string(),
    })
}

/// Runs meta-training from the seeded initial state.
///
/// Each iteration draws one pool dataset uniformly, unrolls it, and takes a
/// SMORMS3 step on the gradient of the all-timestep mean loss. A non-finite
/// loss or gradient aborts with the last good checkpoint attached.
pub fn meta_train(
    config: &TrainConfig,
    config_echo: &str,
    on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    let start = initial_checkpoint(config, config_echo)?;
    meta_train_from(config, start, on_event)
}

/// Continues training from `start` up to `config.iterations`. Resuming a
/// checkpoint taken at iteration `k` of a run reproduces that run exactly.
pub fn meta_train_from(
    config: &TrainConfig,
    start: Checkpoint,
    mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if start.model != config.model || *start.learner_shape() != config.learner_shape()? {
        return Err(Error::InvalidArgument(
            "checkpoint shapes differ from the training config".into(),
        ));
    }
    let mut ckpt = start;
    let mut draws = Rng::new(derive_seed(config.seed, 1));
    for _ in 0..ckpt.iteration {
        draws.below(config.pool_size);
    }
    let pool_seed = config.pool_seed();
    let mut flat = ckpt.alpha.to_flat();
    let mut log = Vec::new();

    for iteration in ckpt.iteration + 1..=config.iterations {
        let index = draws.below(config.pool_size);
        let dataset = gen_indexed(&config.gen, pool_seed, index)?.dataset;
        let (loss, mut grads) = episode_gradient(&ckpt.alpha, &config.model, &dataset)?;
        let diverged = |reason: String, ckpt: &Checkpoint| Error::Diverged {
            iteration,
            reason,
            last_good: Box::new(ckpt.clone()),
        };
        if !loss.is_finite() {
            return Err(diverged(format!("loss {loss}"), &ckpt));
        }
        if let Some(max_norm) = config.clip_norm {
            let norm = grads.iter().fold(0.0, |a, g| a + g * g).sqrt();
            if norm > max_norm {
                let s = max_norm / norm;
                grads.iter_mut().for_each(|g| *g *= s);
            }
        }
        let mut opt = ckpt.optimizer.clone();
        let mut next = flat.clone();
        if let Err(e) = opt.step(&mut next, &grads, config.learning_rate, iteration) {
            return Err(diverged(e.to_string(), &ckpt));
        }
        if let Some(k) = next.iter().position(|v| !v.is_finite()) {
            return Err(diverged(format!("parameter {k} became non-finite"), &ckpt));
        }
        flat = next;
        ckpt.alpha.set_flat(&flat)?;
        ckpt.optimizer = opt;
        ckpt.iteration = iteration;
        log.push((iteration, loss));
        on_event(TrainEvent::Step { iteration, loss })?;
        if config.checkpoint_every > 0 && iteration % config.checkpoint_every == 0 {
            on_event(TrainEvent::Checkpoint(&ckpt))?;
        }
    }
    Ok(TrainOutcome {
        checkpoint: ckpt,
        log,
    })
}
