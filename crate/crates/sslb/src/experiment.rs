//! The training harness: four method variants over sampled scenarios, a
//! multi-seed grid with paired splits and shared initialization, per-epoch
//! validation accuracy, and streamed CSV results.

use crate::data::{sample_scenario, ImageDataset, Scenario, ScenarioConfig};
use crate::error::{Error, Result};
use crate::mixmatch::{build_mixed_batch, mixmatch_loss_unweighted, ramp_up, MixMatchConfig};
use crate::model::{ModelConfig, ModelParams};
use crate::optim::{one_cycle_lr, Adam, OptimizerConfig};
use crate::pbc::{class_weights, label_to_index, pbc_mixmatch_loss, weighted_labeled_loss};
use crate::summary::{parse_result_row, result_to_row, RESULTS_HEADER};
use crate::tape::Tape;
use crate::tensor::{one_hot, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// The four trained variants: plain supervision, supervision with
/// inverse-frequency label balancing, MixMatch, and MixMatch with the
/// balance-corrected loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MethodId {
    Supervised,
    SupervisedBalanced,
    MixMatch,
    MixMatchPbc,
}

impl MethodId {
    pub const ALL: [MethodId; 4] =
        [Self::Supervised, Self::SupervisedBalanced, Self::MixMatch, Self::MixMatchPbc];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Supervised => "supervised",
            Self::SupervisedBalanced => "supervised_balanced",
            Self::MixMatch => "mixmatch",
            Self::MixMatchPbc => "mixmatch_pbc",
        }
    }

    /// Stable index used for per-method random-stream separation.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|m| *m == self).expect("member of ALL")
    }

    pub fn uses_unlabeled(self) -> bool {
        matches!(self, Self::MixMatch | Self::MixMatchPbc)
    }

    /// Whether the labelled loss carries inverse-frequency class weights.
    pub fn balanced(self) -> bool {
        matches!(self, Self::SupervisedBalanced | Self::MixMatchPbc)
    }
}

impl std::fmt::Display for MethodId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Self::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!("unknown method {s:?}; valid: {}", valid.join(", ")))
            })
    }
}

/// Hyper-parameters of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak of the 1-cycle schedule.
    pub max_lr: f64,
    pub weight_decay: f64,
    pub mixmatch: MixMatchConfig,
    pub image_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 12,
            max_lr: 1e-5,
            weight_decay: 1e-4,
            mixmatch: MixMatchConfig::default(),
            image_size: 110,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config(format!(
                "epochs and batch_size must be ≥ 1; got {} and {}",
                self.epochs, self.batch_size
            )));
        }
        if !(self.max_lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "need max_lr > 0 and weight_decay ≥ 0; got {} and {}",
                self.max_lr, self.weight_decay
            )));
        }
        self.mixmatch.validate()
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub method: MethodId,
    pub neg_fraction: f64,
    pub n_l: usize,
    /// Validation accuracy after each completed epoch.
    pub epoch_accuracy: Vec<f64>,
    /// Max of the epoch curve (0 if the run failed before its first epoch).
    pub best_val_acc: f64,
    /// Epoch index at which the loss went non-finite, if the run diverged.
    pub failed_at: Option<usize>,
}

/// Deterministic seed combinator (splitmix64 over the parts).
pub(crate) fn mix(parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E3779B97F4A7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }
    let mut h = 0x243F6A8885A308D3u64;
    for &p in parts {
        h = splitmix(h ^ p.wrapping_mul(0x9E3779B97F4A7C15));
    }
    h
}

const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

fn fraction_key(neg_fraction: f64) -> u64 {
    (neg_fraction * 1000.0).round() as u64
}

/// The scenario shared by all methods of one grid point: its sampling seed
/// mixes the grid seed with the point's coordinates, so each (seed, n_l,
/// neg_fraction) draws independently while every method sees the same splits.
pub fn grid_scenario(
    pos_pool: &ImageDataset,
    neg_pool: &ImageDataset,
    base: &ScenarioConfig,
    seed: u64,
    n_l: usize,
    neg_fraction: f64,
) -> Result<Scenario> {
    let config = ScenarioConfig {
        n_l,
        neg_fraction,
        seed: mix(&[seed, n_l as u64, fraction_key(neg_fraction)]),
        ..base.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    sample_scenario(pos_pool, neg_pool, &config, &mut rng)
}

/// Reshuffling index cycler: deals endless batches over a fixed set,
/// reshuffling whenever the deck is exhausted.
struct Cycler {
    order: Vec<usize>,
    cursor: usize,
}

impl Cycler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, cursor: 0 }
    }

    fn next_batch(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn batch_constants(
    tape: &mut Tape,
    images: &[&Tensor],
    labels: &[Vec<f64>],
) -> (crate::tape::Var, crate::tape::Var) {
    let shape = images[0].shape();
    let mut pixel_values = Vec::with_capacity(images.len() * images[0].len());
    for image in images {
        pixel_values.extend_from_slice(image.values());
    }
    let mut batch_shape = vec![images.len()];
    batch_shape.extend_from_slice(shape);
    let x = tape.constant(&batch_shape, pixel_values);
    let t = tape.constant(&[labels.len(), labels[0].len()], labels.concat());
    (x, t)
}

fn validation_accuracy(params: &ModelParams, images: &[&Tensor], labels: &[u8]) -> Result<f64> {
    let rows = params.infer(images)?;
    let correct = rows
        .iter()
        .zip(labels)
        .filter(|(row, &label)| label_to_index(row) == label as usize)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Trains `method` on a scenario and reports the validation-accuracy curve.
///
/// Fully deterministic: the model is initialized from the scenario seed alone
/// (shared across methods, pairing the comparison), while the training stream
/// additionally mixes in the method index. A non-finite loss or gradient
/// marks the run failed at the current epoch instead of erroring.
pub fn run_training(
    scenario: &Scenario,
    method: MethodId,
    config: &TrainConfig,
    grid_seed: u64,
) -> Result<RunResult> {
    config.validate()?;
    let image_size = scenario
        .labeled
        .observations
        .first()
        .map(|o| o.image.shape()[1])
        .ok_or_else(|| Error::Contract("scenario has no labelled observations".into()))?;
    if image_size != config.image_size {
        return Err(Error::Config(format!(
            "scenario images are {image_size}px but the model expects {}px",
            config.image_size
        )));
    }

    let model_config = ModelConfig::with_input_size(config.image_size);
    let mut params = ModelParams::init(&model_config, mix(&[scenario.config.seed, INIT_STREAM]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[
        scenario.config.seed,
        TRAIN_STREAM,
        method.index() as u64,
    ]));

    let steps_per_epoch = if method.uses_unlabeled() {
        (scenario.unlabeled.len() / config.batch_size).max(1)
    } else {
        scenario.labeled.len().div_ceil(config.batch_size)
    };
    let opt_config =
        OptimizerConfig::new(config.max_lr, config.weight_decay, steps_per_epoch * config.epochs);
    opt_config.validate()?;
    let sizes: Vec<usize> = params.tensors().iter().map(Tensor::len).collect();
    let mut adam = Adam::new(&sizes);

    let weights = if method.balanced() {
        let (neg, pos) = scenario.labeled.class_counts();
        Some(class_weights(&[neg, pos])?)
    } else {
        None
    };

    let val_images: Vec<&Tensor> =
        scenario.validation.observations.iter().map(|o| &o.image).collect();
    let val_labels: Vec<u8> = scenario.validation.observations.iter().map(|o| o.label).collect();

    let mut labeled_cycler = Cycler::new(scenario.labeled.len(), &mut rng);
    let mut epoch_accuracy = Vec::with_capacity(config.epochs);
    let mut failed_at = None;
    let mut step = 0usize;

    'epochs: for epoch in 0..config.epochs {
        let outcome: Result<()> = (|| {
            if method.uses_unlabeled() {
                let mut unlabeled_order: Vec<usize> = (0..scenario.unlabeled.len()).collect();
                unlabeled_order.shuffle(&mut rng);
                for s in 0..steps_per_epoch {
                    let start = s * config.batch_size;
                    let end = (start + config.batch_size).min(unlabeled_order.len());
                    let unlabeled_batch: Vec<&Tensor> =
                        unlabeled_order[start..end].iter().map(|&i| scenario.unlabeled.image(i)).collect();
                    let labeled_batch: Vec<(&Tensor, Vec<f64>)> = labeled_cycler
                        .next_batch(config.batch_size, &mut rng)
                        .into_iter()
                        .map(|i| {
                            let o = &scenario.labeled.observations[i];
                            (&o.image, one_hot(o.label as usize, 2))
                        })
                        .collect();
                    let mixed = build_mixed_batch(
                        &params,
                        &labeled_batch,
                        &unlabeled_batch,
                        &config.mixmatch,
                        &mut rng,
                    )?;
                    let r = ramp_up(step, config.mixmatch.rampup_horizon);
                    let mut graph = match &weights {
                        Some(c) => {
                            pbc_mixmatch_loss(&mut params, &mixed, c, config.mixmatch.gamma, r)?
                        }
                        None => {
                            mixmatch_loss_unweighted(&mut params, &mixed, config.mixmatch.gamma, r)?
                        }
                    };
                    if !graph.tape.scalar_value(graph.loss).is_finite() {
                        return Err(Error::Numeric(format!("non-finite loss at step {step}")));
                    }
                    let grads = graph.gradients()?;
                    let lr = one_cycle_lr(step, &opt_config)?;
                    adam.step(params.tensors_mut(), &grads, lr, &opt_config)?;
                    step += 1;
                }
            } else {
                let mut order: Vec<usize> = (0..scenario.labeled.len()).collect();
                order.shuffle(&mut rng);
                for chunk in order.chunks(config.batch_size) {
                    let mut images = Vec::with_capacity(chunk.len());
                    let mut labels = Vec::with_capacity(chunk.len());
                    for &i in chunk {
                        let o = &scenario.labeled.observations[i];
                        images.push(&o.image);
                        labels.push(one_hot(o.label as usize, 2));
                    }
                    let mut tape = Tape::new();
                    let vars = params.bind(&mut tape);
                    let (x, t) = batch_constants(&mut tape, &images, &labels);
                    let probs = params.forward_training(&mut tape, &vars, x)?;
                    let loss = match &weights {
                        Some(c) => weighted_labeled_loss(&mut tape, t, probs, c)?,
                        None => tape.cross_entropy(t, probs)?,
                    };
                    if !tape.scalar_value(loss).is_finite() {
                        return Err(Error::Numeric(format!("non-finite loss at step {step}")));
                    }
                    tape.backward(loss)?;
                    let grads: Vec<Vec<f64>> = vars.iter().map(|v| tape.grad(*v).to_vec()).collect();
                    let lr = one_cycle_lr(step, &opt_config)?;
                    adam.step(params.tensors_mut(), &grads, lr, &opt_config)?;
                    step += 1;
                }
            }
            Ok(())
        })();
        match outcome {
            Ok(()) => {}
            Err(Error::Numeric(_)) => {
                failed_at = Some(epoch);
                break 'epochs;
            }
            Err(e) => return Err(e),
        }
        epoch_accuracy.push(validation_accuracy(&params, &val_images, &val_labels)?);
    }

    let best_val_acc = epoch_accuracy.iter().cloned().fold(0.0, f64::max);
    Ok(RunResult {
        seed: grid_seed,
        method,
        neg_fraction: scenario.config.neg_fraction,
        n_l: scenario.config.n_l,
        epoch_accuracy,
        best_val_acc,
        failed_at,
    })
}

/// A full experiment grid.
#[derive(Debug, Clone)]
pub struct GridConfig {
    pub methods: Vec<MethodId>,
    pub neg_fractions: Vec<f64>,
    pub n_ls: Vec<usize>,
    /// Seeds 0..seeds are run.
    pub seeds: u64,
    pub train: TrainConfig,
    pub scenario: ScenarioConfig,
    pub jobs: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            methods: MethodId::ALL.to_vec(),
            neg_fractions: vec![0.5, 0.7, 0.8],
            n_ls: vec![10, 15, 20],
            seeds: 10,
            train: TrainConfig::default(),
            scenario: ScenarioConfig::default(),
            jobs: 1,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty()
            || self.neg_fractions.is_empty()
            || self.n_ls.is_empty()
            || self.seeds == 0
        {
            return Err(Error::Config("grid needs methods, fractions, n_l values and seeds".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be ≥ 1".into()));
        }
        self.train.validate()
    }
}

type RunKey = (u64, &'static str, u64, usize);

fn run_key(seed: u64, method: MethodId, neg_fraction: f64, n_l: usize) -> RunKey {
    (seed, method.as_str(), fraction_key(neg_fraction), n_l)
}

struct GridTask {
    seed: u64,
    n_l: usize,
    neg_fraction: f64,
    methods: Vec<MethodId>,
}

/// Runs the grid, streaming one CSV row per finished run to
/// `<out_dir>/results.csv` and finishing with a canonical (sorted) rewrite so
/// equal grids produce byte-identical files regardless of `jobs` or resume
/// history. With `resume`, runs already present in the file are skipped.
pub fn run_grid(
    pos_pool: &ImageDataset,
    neg_pool: &ImageDataset,
    grid: &GridConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<Vec<RunResult>> {
    grid.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let results_path = out_dir.join("results.csv");

    let existing: Vec<RunResult> = if resume && results_path.exists() {
        read_results_csv(&results_path)?
    } else {
        Vec::new()
    };
    let done: BTreeSet<RunKey> = existing
        .iter()
        .map(|r| run_key(r.seed, r.method, r.neg_fraction, r.n_l))
        .collect();

    let mut tasks = Vec::new();
    for &neg_fraction in &grid.neg_fractions {
        for &n_l in &grid.n_ls {
            for seed in 0..grid.seeds {
                let methods: Vec<MethodId> = grid
                    .methods
                    .iter()
                    .copied()
                    .filter(|&m| !done.contains(&run_key(seed, m, neg_fraction, n_l)))
                    .collect();
                if !methods.is_empty() {
                    tasks.push(GridTask { seed, n_l, neg_fraction, methods });
                }
            }
        }
    }

    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(!existing.is_empty())
        .write(true)
        .truncate(existing.is_empty())
        .open(&results_path)?;
    let writer = Mutex::new(std::io::BufWriter::new(file));
    if existing.is_empty() {
        let mut w = writer.lock().expect("writer lock");
        writeln!(w, "{RESULTS_HEADER}")?;
        w.flush()?;
    }

    let next_task = AtomicUsize::new(0);
    let collected: Mutex<Vec<RunResult>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<Error>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..grid.jobs.min(tasks.len().max(1)) {
            scope.spawn(|| loop {
                let index = next_task.fetch_add(1, Ordering::SeqCst);
                if index >= tasks.len() || failure.lock().expect("failure lock").is_some() {
                    break;
                }
                let task = &tasks[index];
                let outcome = (|| -> Result<()> {
                    let scenario = grid_scenario(
                        pos_pool,
                        neg_pool,
                        &grid.scenario,
                        task.seed,
                        task.n_l,
                        task.neg_fraction,
                    )?;
                    for &method in &task.methods {
                        let result = run_training(&scenario, method, &grid.train, task.seed)?;
                        {
                            let mut w = writer.lock().expect("writer lock");
                            writeln!(w, "{}", result_to_row(&result))?;
                            w.flush()?;
                        }
                        collected.lock().expect("results lock").push(result);
                    }
                    Ok(())
                })();
                if let Err(e) = outcome {
                    *failure.lock().expect("failure lock") = Some(e);
                    break;
                }
            });
        }
    });

    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }

    let mut all = existing;
    all.extend(collected.into_inner().expect("results lock"));
    sort_results(&mut all);
    write_results_csv(&results_path, &all)?;
    Ok(all)
}

/// Canonical result order: neg_fraction, n_l, method, seed.
pub fn sort_results(results: &mut [RunResult]) {
    results.sort_by(|a, b| {
        a.neg_fraction
            .total_cmp(&b.neg_fraction)
            .then(a.n_l.cmp(&b.n_l))
            .then(a.method.cmp(&b.method))
            .then(a.seed.cmp(&b.seed))
    });
}

/// Rewrites the whole results file in canonical form.
pub fn write_results_csv(path: &Path, results: &[RunResult]) -> Result<()> {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for result in results {
        out.push_str(&result_to_row(result));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a results file written by [`write_results_csv`]/[`run_grid`].
pub fn read_results_csv(path: &Path) -> Result<Vec<RunResult>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == RESULTS_HEADER => {}
        other => {
            return Err(Error::Summary(format!(
                "{} does not start with the expected results header (found {other:?})",
                path.display()
            )))
        }
    }
    lines.filter(|l| !l.trim().is_empty()).map(parse_result_row).collect()
}
