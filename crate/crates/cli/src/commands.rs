use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use metalearn_core::baselines::{
    evaluate_suite, learned_test_losses, logreg_test_losses, HyperGrid,
};
use metalearn_core::datagen::gen_suite;
use metalearn_core::episode::{cross_entropy, run_episode};
use metalearn_core::metaopt::{
    initial_checkpoint, load_checkpoint, meta_train_from, save_checkpoint, Checkpoint, TrainEvent,
};
use metalearn_core::model::predict;
use metalearn_core::Error;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::report::{MethodScore, Report};
use crate::suite::Suite;

#[derive(Debug, Clone, Default)]
pub struct GenArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub count: usize,
    pub out: PathBuf,
    /// Also write one CSV per dataset into this directory.
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct MetaTrainArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    /// Overrides `output.checkpoint`.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Logreg,
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub suite: PathBuf,
    pub baselines: Vec<Baseline>,
    pub external_scores: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct TraceArgs {
    pub checkpoint: PathBuf,
    pub suite: PathBuf,
    pub index: usize,
    pub out: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path, what: &str) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn load_ckpt(path: &Path) -> CliResult<Checkpoint> {
    load_checkpoint(path).map_err(|e| match e {
        Error::Io(_) | Error::Format(_) => {
            CliError::usage(format!("cannot load checkpoint {}: {e}", path.display()))
        }
        other => CliError::runtime(other),
    })
}

fn check_compat(ckpt: &Checkpoint, suite: &Suite) -> CliResult<()> {
    if ckpt.model.n_in() != suite.n_in {
        return Err(CliError::usage(format!(
            "checkpoint model expects {} inputs but the suite has {}",
            ckpt.model.n_in(),
            suite.n_in
        )));
    }
    Ok(())
}

/// Generates `count` datasets and writes them as a suite file.
pub fn cmd_gen(args: &GenArgs, log: &mut dyn Write) -> CliResult<Suite> {
    if args.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let gen = cfg.gen_config()?;
    let datasets = gen_suite(&gen, args.count, cfg.seed).map_err(CliError::runtime)?;
    let suite = Suite {
        seed: cfg.seed,
        n_in: gen.n_in,
        config_echo: cfg.echo(),
        datasets,
    };
    suite.save(&args.out)?;
    if let Some(dir) = &args.csv_dir {
        suite.export_csv(dir)?;
    }
    let _ = writeln!(log, "wrote {} datasets to {}", suite.len(), args.out.display());
    Ok(suite)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Meta-trains from a config, writing the final checkpoint, any periodic
/// checkpoints (`<checkpoint>.iter<N>`) and the loss log.
pub fn cmd_meta_train(args: &MetaTrainArgs, log: &mut dyn Write) -> CliResult<Checkpoint> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(out) = &args.out {
        cfg.output.checkpoint = out.clone();
    }
    let train = cfg.train_config()?;
    let echo = cfg.echo();
    let ckpt_path = cfg.output.checkpoint.clone();
    let log_path = cfg.output.loss_log.clone();
    let start = if cfg.train.resume_from.as_os_str().is_empty() {
        initial_checkpoint(&train, &echo).map_err(CliError::runtime)?
    } else {
        let mut c = load_ckpt(&cfg.train.resume_from)?;
        c.config_echo = echo.clone();
        c
    };
    let file = File::create(&log_path)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", log_path.display())))?;
    let mut loss_log = BufWriter::new(file);
    let every = cfg.train.log_every;
    let (mut window, mut count) = (0.0, 0u64);

    let result = meta_train_from(&train, start, |event| {
        match event {
            TrainEvent::Step { iteration, loss } => {
                writeln!(loss_log, "{iteration}\t{loss}")?;
                window += loss;
                count += 1;
                if every > 0 && iteration % every == 0 {
                    let _ = writeln!(log, "iter={iteration} loss={:.6}", window / count as f64);
                    window = 0.0;
                    count = 0;
                }
            }
            TrainEvent::Checkpoint(c) => {
                save_checkpoint(c, &sibling(&ckpt_path, &format!(".iter{}", c.iteration)))?;
            }
        }
        Ok(())
    });
    loss_log
        .flush()
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", log_path.display())))?;

    match result {
        Ok(outcome) => {
            save_checkpoint(&outcome.checkpoint, &ckpt_path).map_err(CliError::runtime)?;
            let _ = writeln!(
                log,
                "wrote checkpoint {} after {} iterations",
                ckpt_path.display(),
                outcome.checkpoint.iteration
            );
            Ok(outcome.checkpoint)
        }
        Err(Error::Diverged {
            iteration,
            reason,
            last_good,
        }) => {
            let path = sibling(&ckpt_path, ".emergency");
            save_checkpoint(&last_good, &path).map_err(CliError::runtime)?;
            Err(CliError::runtime(format!(
                "training diverged at iteration {iteration} ({reason}); last good state saved to {}",
                path.display()
            )))
        }
        Err(e @ Error::InvalidArgument(_)) => Err(CliError::usage(e.to_string())),
        Err(e) => Err(CliError::runtime(e)),
    }
}

/// Reads `dataset_index<TAB>mce` lines; every suite index exactly once.
pub fn read_external_scores(path: &Path, count: usize) -> CliResult<Vec<f64>> {
    let text = String::from_utf8(read_file(path, "external scores")?)
        .map_err(|_| CliError::usage(format!("{} is not UTF-8", path.display())))?;
    let bad = |msg: String| CliError::usage(format!("external scores {}: {msg}", path.display()));
    let mut values = vec![None; count];
    let mut seen = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (i, v) = line
            .split_once('\t')
            .ok_or_else(|| bad(format!("line {}: expected index<TAB>mce", lineno + 1)))?;
        let i: usize = i.trim().parse().map_err(|_| bad(format!("line {}: bad index", lineno + 1)))?;
        let v: f64 = v.trim().parse().map_err(|_| bad(format!("line {}: bad value", lineno + 1)))?;
        if !v.is_finite() {
            return Err(bad(format!("line {}: non-finite value", lineno + 1)));
        }
        let slot = values
            .get_mut(i)
            .ok_or_else(|| bad(format!("index {i} outside a suite of {count}")))?;
        if slot.replace(v).is_some() {
            return Err(bad(format!("index {i} listed twice")));
        }
        seen += 1;
    }
    if seen != count {
        return Err(bad(format!("{seen} scores for a suite of {count} datasets")));
    }
    Ok(values.into_iter().map(Option::unwrap).collect())
}

fn external_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let clean: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("external-{clean}")
}

/// Scores the learned algorithm and the requested baselines on the suite's
/// test portions.
pub fn cmd_eval(args: &EvalArgs, log: &mut dyn Write) -> CliResult<Report> {
    let suite_bytes = read_file(&args.suite, "suite")?;
    let suite = Suite::from_bytes(&suite_bytes)
        .map_err(|e| CliError::usage(format!("invalid suite {}: {e}", args.suite.display())))?;
    let ckpt = match &args.checkpoint {
        Some(p) => {
            let bytes = read_file(p, "checkpoint")?;
            let c = load_ckpt(p)?;
            check_compat(&c, &suite)?;
            Some((sha256_hex(&bytes), c))
        }
        None => None,
    };
    let externals = args
        .external_scores
        .iter()
        .map(|p| Ok((external_name(p), read_external_scores(p, suite.len())?)))
        .collect::<CliResult<Vec<_>>>()?;
    if ckpt.is_none() && args.baselines.is_empty() && externals.is_empty() {
        return Err(CliError::usage("nothing to evaluate: pass --checkpoint, --baseline or --external-scores"));
    }

    let mut methods = Vec::new();
    if let Some((_, c)) = &ckpt {
        let s = evaluate_suite(|d| learned_test_losses(&c.alpha, &c.model, d), &suite.datasets)
            .map_err(CliError::runtime)?;
        methods.push(MethodScore::from_values("learned", s.per_dataset));
    }
    for b in &args.baselines {
        match b {
            Baseline::Logreg => {
                let grid = HyperGrid::default();
                let s = evaluate_suite(|d| logreg_test_losses(d, &grid), &suite.datasets)
                    .map_err(CliError::runtime)?;
                methods.push(MethodScore::from_values("logreg", s.per_dataset));
            }
        }
    }
    for (name, values) in externals {
        methods.push(MethodScore::from_values(name, values));
    }

    let report = Report {
        suite_seed: suite.seed,
        suite_count: suite.len(),
        suite_config_sha256: sha256_hex(suite.config_echo.as_bytes()),
        suite_sha256: sha256_hex(&suite_bytes),
        checkpoint_sha256: ckpt.as_ref().map(|(h, _)| h.clone()),
        checkpoint_iteration: ckpt.as_ref().map(|(_, c)| c.iteration),
        methods,
    };
    if let Some(out) = &args.out {
        write_file(out, report.render().as_bytes())?;
    }
    let _ = write!(log, "{}", report.table());
    Ok(report)
}

/// Per-timestep CSV of one episode. Row 0 holds `theta_1`; row `t` holds
/// the prediction and loss at `t` and the state `theta_{t+1}` produced
/// after seeing sample `t`. `test_mce` scores the whole test portion with
/// that row's state held fixed.
pub fn cmd_trace(args: &TraceArgs, log: &mut dyn Write) -> CliResult<()> {
    let ckpt = load_ckpt(&args.checkpoint)?;
    let suite = Suite::load(&args.suite)?;
    check_compat(&ckpt, &suite)?;
    let ds = suite.datasets.get(args.index).ok_or_else(|| {
        CliError::usage(format!("dataset index {} outside a suite of {}", args.index, suite.len()))
    })?;
    let trace = run_episode(&ckpt.alpha, &ckpt.model, ds, true).map_err(CliError::runtime)?;
    let states = trace.snapshots.as_ref().expect("snapshots requested");

    let test_mce = |theta: &[f64]| -> CliResult<f64> {
        let mut sum = 0.0;
        for t in ds.test_steps() {
            let o = predict(&ckpt.model, theta, ds.row(t)).map_err(CliError::runtime)?;
            sum += cross_entropy(o, ds.target(t));
        }
        Ok(sum / ds.test_len() as f64)
    };

    let mut out = String::from("t,flag,target,o_t,loss,test_mce");
    for k in 0..states[0].len() {
        out.push_str(&format!(",theta{k}"));
    }
    out.push('\n');
    for (t, theta) in states.iter().enumerate() {
        if t == 0 {
            out.push_str("0,,,,");
        } else {
            let flag = u8::from(ds.is_train(t));
            out.push_str(&format!(
                "{t},{flag},{},{},{}",
                ds.target(t),
                trace.predictions[t - 1],
                trace.losses[t - 1]
            ));
        }
        out.push_str(&format!(",{}", test_mce(theta)?));
        for v in theta {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_file(&args.out, out.as_bytes())?;
    let _ = writeln!(log, "wrote {} rows to {}", states.len(), args.out.display());
    Ok(())
}
