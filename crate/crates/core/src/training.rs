//! MLE pretraining, discriminator pretraining and the adversarial loop.
//!
//! Each adversarial iteration runs `d_iterations` discriminator updates on
//! fresh real/generated pairs, one value-network regression step on the
//! last generated batch, then `g_iterations` policy-gradient updates on
//! freshly sampled responses. Every random draw comes from one seeded
//! stream that is saved with the rest of the state, so a resumed run
//! continues exactly where an uninterrupted one would.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, MleConfig, TrainingConfig};
use crate::counting::{CountingDataset, CountingExample};
use crate::credit::{discriminator_loss, generator_gradient, value_targets, StrategyConfig};
use crate::error::{Error, Result};
use crate::eval::precision_argmax;
use crate::nn::{Archive, Checkpointable, Discriminator, Generator, ModelDims, ParamStore, Real, Response, ValueNetwork};
use crate::optim::{Optimizer, OptimizerKind};
use crate::vocab::{Token, TokenSequence};

const LOSS_CHUNK: usize = 512;

/// One line of `history.log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Record {
    MleStep {
        iteration: u64,
        epoch: u64,
        loss: f64,
        grad_norm: f64,
    },
    MleValidation {
        iteration: u64,
        epoch: u64,
        valid_loss: f64,
        improved: bool,
    },
    MleStop {
        iteration: u64,
        best_valid_loss: f64,
        reason: String,
    },
    DPretrain {
        step: u64,
        loss: f64,
        real: f64,
        fake: f64,
    },
    GanStep {
        iteration: u64,
        d_loss: f64,
        d_real: f64,
        d_fake: f64,
        v_loss: Option<f64>,
        reward: f64,
        weight_mean: f64,
        g_grad_norm: f64,
    },
    Snapshot {
        phase: String,
        iteration: u64,
        valid_prec: f64,
    },
    Checkpoint {
        iteration: u64,
        file: String,
    },
}

/// Append-only training log. Records also go to `history.log` and wall
/// clock times to a separate file, so the history itself is reproducible.
#[derive(Default)]
pub struct History {
    pub records: Vec<Record>,
    log: Option<(PathBuf, BufWriter<File>)>,
    timings: Option<(PathBuf, BufWriter<File>)>,
}

fn open_append(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

impl History {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_files(history: &Path, timings: &Path, append: bool) -> Result<Self> {
        Ok(Self {
            records: Vec::new(),
            log: Some((history.to_path_buf(), open_append(history, append)?)),
            timings: Some((timings.to_path_buf(), open_append(timings, append)?)),
        })
    }

    pub fn push(&mut self, record: Record) -> Result<()> {
        if let Some((path, w)) = &mut self.log {
            let line = serde_json::to_string(&record)?;
            writeln!(w, "{line}").map_err(|e| Error::io(path.clone(), e))?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn time(&mut self, phase: &str, iteration: u64, seconds: f64) -> Result<()> {
        if let Some((path, w)) = &mut self.timings {
            writeln!(w, "{phase} {iteration} {seconds:.6}").map_err(|e| Error::io(path.clone(), e))?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        for (path, w) in self.log.iter_mut().chain(self.timings.iter_mut()) {
            w.flush().map_err(|e| Error::io(path.clone(), e))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Vec<Record>> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }
}

/// Fixed layout of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Creates the directory tree and writes `config.snapshot`.
    pub fn create(root: impl Into<PathBuf>, cfg: &ExperimentConfig) -> Result<Self> {
        let run = Self::new(root);
        for dir in [run.root.clone(), run.checkpoints(), run.plots()] {
            fs::create_dir_all(&dir).map_err(|e| Error::io(dir, e))?;
        }
        let snapshot = run.config_snapshot();
        fs::write(&snapshot, cfg.to_text()).map_err(|e| Error::io(snapshot, e))?;
        Ok(run)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join("config.snapshot")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn history(&self) -> PathBuf {
        self.root.join("history.log")
    }

    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.log")
    }

    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("eval.csv")
    }

    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }

    pub fn state(&self) -> PathBuf {
        self.checkpoints().join("state.ckpt")
    }

    pub fn generator_checkpoint(&self, iteration: u64) -> PathBuf {
        self.checkpoints().join(format!("g_{iteration:06}.ckpt"))
    }

    pub fn discriminator_checkpoint(&self, iteration: u64) -> PathBuf {
        self.checkpoints().join(format!("d_{iteration:06}.ckpt"))
    }

    /// Discriminator checkpoints in iteration order.
    pub fn discriminator_checkpoints(&self) -> Result<Vec<PathBuf>> {
        let dir = self.checkpoints();
        let mut out: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("d_") && n.ends_with(".ckpt"))
            })
            .collect();
        out.sort();
        Ok(out)
    }
}

fn divergence(iteration: u64, detail: impl Into<String>) -> Error {
    Error::Divergence {
        iteration,
        detail: detail.into(),
    }
}

fn answer_response(e: &CountingExample) -> Response {
    Response::terminated(e.answer.to_vec())
}

/// Mean per-sequence teacher-forced negative log-likelihood.
pub fn teacher_forced_loss<F: Real>(g: &Generator<F>, examples: &[CountingExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for chunk in examples.chunks(LOSS_CHUNK) {
        let inputs: Vec<&[Token]> = chunk.iter().map(|e| e.input.tokens()).collect();
        let responses: Vec<Response> = chunk.iter().map(answer_response).collect();
        total -= g
            .step_log_probs(&inputs, &responses)
            .iter()
            .map(|lp| lp.iter().sum::<f64>())
            .sum::<f64>();
    }
    total / examples.len() as f64
}

/// Gradient of the batch-mean teacher-forced NLL.
pub fn mle_gradient<F: Real>(g: &Generator<F>, batch: &[&CountingExample]) -> (ParamStore<F>, f64) {
    let inputs: Vec<&[Token]> = batch.iter().map(|e| e.input.tokens()).collect();
    let responses: Vec<Response> = batch.iter().map(|e| answer_response(e)).collect();
    let w = 1.0 / batch.len() as f64;
    let weights: Vec<Vec<f64>> = responses.iter().map(|r| vec![w; r.steps()]).collect();
    g.weighted_nll_gradient(&inputs, &responses, &weights)
}

fn apply_update<F: Real>(
    opt: &mut Optimizer<F>,
    params: &mut ParamStore<F>,
    mut grads: ParamStore<F>,
    clip: f64,
    iteration: u64,
    what: &str,
) -> Result<f64> {
    let norm = grads.clip_global_norm(clip);
    if !norm.is_finite() {
        return Err(divergence(iteration, format!("{what} gradient norm is {norm}")));
    }
    opt.step(params, &grads);
    if !params.is_finite() {
        return Err(divergence(iteration, format!("{what} parameters became non-finite")));
    }
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleOutcome<F> {
    pub generator: Generator<F>,
    pub best_valid_loss: f64,
    pub iterations: u64,
    pub epochs: u64,
}

/// Teacher-forced training until validation loss fails to improve for
/// `patience` consecutive checks or `max_epochs` run out. Returns the
/// best-validation generator.
pub fn pretrain_mle<F: Real, R: Rng>(
    mut g: Generator<F>,
    data: &CountingDataset,
    cfg: &MleConfig,
    rng: &mut R,
    history: &mut History,
) -> Result<MleOutcome<F>> {
    if data.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let valid = if data.valid.is_empty() { &data.train } else { &data.valid };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, g.params());
    let per_epoch = data.train.len().div_ceil(cfg.batch_size);
    let eval_every = if cfg.eval_every == 0 { per_epoch } else { cfg.eval_every } as u64;
    let mut best = g.clone();
    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;
    let mut iteration = 0u64;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..cfg.max_epochs as u64 {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let started = Instant::now();
            let batch: Vec<&CountingExample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (grads, loss) = mle_gradient(&g, &batch);
            if !loss.is_finite() {
                return Err(divergence(iteration, format!("mle loss is {loss}")));
            }
            let grad_norm = apply_update(&mut opt, g.params_mut(), grads, cfg.clip_norm, iteration, "generator")?;
            iteration += 1;
            history.push(Record::MleStep {
                iteration,
                epoch,
                loss,
                grad_norm,
            })?;
            history.time("mle", iteration, started.elapsed().as_secs_f64())?;
            if iteration % eval_every == 0 {
                let valid_loss = teacher_forced_loss(&g, valid);
                if !valid_loss.is_finite() {
                    return Err(divergence(iteration, format!("validation loss is {valid_loss}")));
                }
                let improved = valid_loss < best_loss;
                history.push(Record::MleValidation {
                    iteration,
                    epoch,
                    valid_loss,
                    improved,
                })?;
                log::info!("mle iteration {iteration} epoch {epoch}: valid loss {valid_loss:.5}");
                if improved {
                    best_loss = valid_loss;
                    best = g.clone();
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        history.push(Record::MleStop {
                            iteration,
                            best_valid_loss: best_loss,
                            reason: "patience".into(),
                        })?;
                        history.flush()?;
                        return Ok(MleOutcome {
                            generator: best,
                            best_valid_loss: best_loss,
                            iterations: iteration,
                            epochs: epoch + 1,
                        });
                    }
                }
            }
        }
    }
    // the cap may land between validation checks
    let valid_loss = teacher_forced_loss(&g, valid);
    if valid_loss < best_loss {
        best_loss = valid_loss;
        best = g;
    }
    history.push(Record::MleStop {
        iteration,
        best_valid_loss: best_loss,
        reason: "max_epochs".into(),
    })?;
    history.flush()?;
    Ok(MleOutcome {
        generator: best,
        best_valid_loss: best_loss,
        iterations: iteration,
        epochs: cfg.max_epochs as u64,
    })
}

/// One regression step of `V(s_t)` toward `targets` on the given
/// trajectories. Returns the mean squared error before the step.
pub fn update_value_network<F: Real>(
    v: &mut ValueNetwork<F>,
    opt: &mut Optimizer<F>,
    inputs: &[&[Token]],
    trajectories: &[&[Token]],
    targets: &[Vec<f64>],
    clip: f64,
) -> Result<f64> {
    let pass = v.forward(inputs, trajectories);
    let count: usize = targets.iter().map(Vec::len).sum();
    let scale = 1.0 / count.max(1) as f64;
    let mut loss = 0.0;
    let d_scores: Vec<Vec<f64>> = pass
        .scores
        .iter()
        .zip(targets)
        .map(|(pred, target)| {
            pred.iter()
                .zip(target)
                .map(|(p, t)| {
                    loss += scale * (p - t) * (p - t);
                    2.0 * scale * (p - t)
                })
                .collect()
        })
        .collect();
    let grads = v.backward(&pass, &d_scores);
    apply_update(opt, v.params_mut(), grads, clip, 0, "value network")?;
    Ok(loss)
}

/// Everything needed to continue adversarial training bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct GanState<F> {
    pub generator: Generator<F>,
    pub discriminator: Discriminator<F>,
    pub value: Option<ValueNetwork<F>>,
    pub opt_g: Optimizer<F>,
    pub opt_d: Optimizer<F>,
    pub opt_v: Option<Optimizer<F>>,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
    pub d_pretrain_steps: u64,
}

const STATE_KIND: &str = "gan-state";

fn optimizer_meta<F>(opt: &Optimizer<F>) -> Value {
    json!({ "kind": opt.kind, "learning_rate": opt.learning_rate, "steps": opt.steps })
}

fn push_optimizer<F: Real>(mut archive: Archive<F>, name: &str, opt: &Optimizer<F>) -> Archive<F> {
    if let Some(m) = &opt.first {
        archive = archive.with_group(&format!("{name}.first"), m.clone());
    }
    if let Some(s) = &opt.second {
        archive = archive.with_group(&format!("{name}.second"), s.clone());
    }
    archive
}

fn take_optimizer<F: Real>(archive: &mut Archive<F>, name: &str, meta: &Value) -> std::result::Result<Optimizer<F>, String> {
    let kind: OptimizerKind = serde_json::from_value(meta["kind"].clone()).map_err(|e| e.to_string())?;
    let learning_rate = meta["learning_rate"].as_f64().ok_or("missing learning rate")?;
    let steps = meta["steps"].as_u64().ok_or("missing optimizer steps")?;
    Ok(Optimizer {
        kind,
        learning_rate,
        steps,
        first: archive.take_group(&format!("{name}.first")),
        second: archive.take_group(&format!("{name}.second")),
    })
}

impl<F: Real> GanState<F> {
    /// Fresh discriminator and value network around a pretrained generator,
    /// all randomness drawn from `seed`.
    pub fn new(generator: Generator<F>, strategy: &StrategyConfig, cfg: &TrainingConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: ModelDims = generator.dims();
        let vocab = generator.vocab();
        let discriminator = Discriminator::discriminator(dims, vocab, &mut rng);
        let value = strategy.uses_value().then(|| ValueNetwork::value(dims, vocab, &mut rng));
        let opt_g = Optimizer::new(cfg.optimizer, cfg.learning_rate, generator.params());
        let opt_d = Optimizer::new(cfg.optimizer, cfg.learning_rate, discriminator.params());
        let opt_v = value
            .as_ref()
            .map(|v| Optimizer::new(cfg.optimizer, cfg.learning_rate, v.params()));
        Self {
            generator,
            discriminator,
            value,
            opt_g,
            opt_d,
            opt_v,
            rng,
            iteration: 0,
            d_pretrain_steps: 0,
        }
    }

    pub fn to_archive(&self) -> Result<Archive<F>> {
        let meta = json!({
            "iteration": self.iteration,
            "d_pretrain_steps": self.d_pretrain_steps,
            "rng": serde_json::to_value(&self.rng)?,
            "generator": self.generator.describe(),
            "discriminator": self.discriminator.describe(),
            "value": self.value.as_ref().map(|v| v.describe()),
            "opt_g": optimizer_meta(&self.opt_g),
            "opt_d": optimizer_meta(&self.opt_d),
            "opt_v": self.opt_v.as_ref().map(optimizer_meta),
        });
        let mut archive = Archive::new(STATE_KIND, meta)
            .with_group("generator", self.generator.params().clone())
            .with_group("discriminator", self.discriminator.params().clone());
        if let Some(v) = &self.value {
            archive = archive.with_group("value", v.params().clone());
        }
        archive = push_optimizer(archive, "opt_g", &self.opt_g);
        archive = push_optimizer(archive, "opt_d", &self.opt_d);
        if let Some(o) = &self.opt_v {
            archive = push_optimizer(archive, "opt_v", o);
        }
        Ok(archive)
    }

    pub fn from_archive(mut archive: Archive<F>) -> std::result::Result<Self, String> {
        if archive.kind != STATE_KIND {
            return Err(format!("expected a {STATE_KIND} checkpoint, found {}", archive.kind));
        }
        let meta = archive.meta.clone();
        let mut group = |name: &str| archive.take_group(name).ok_or_else(|| format!("missing group {name}"));
        let generator = Generator::rebuild(&meta["generator"], group("generator")?)?;
        let discriminator = Discriminator::rebuild(&meta["discriminator"], group("discriminator")?)?;
        let value = if meta["value"].is_null() {
            None
        } else {
            Some(ValueNetwork::rebuild(&meta["value"], group("value")?)?)
        };
        let opt_g = take_optimizer(&mut archive, "opt_g", &meta["opt_g"])?;
        let opt_d = take_optimizer(&mut archive, "opt_d", &meta["opt_d"])?;
        let opt_v = if meta["opt_v"].is_null() {
            None
        } else {
            Some(take_optimizer(&mut archive, "opt_v", &meta["opt_v"])?)
        };
        Ok(Self {
            generator,
            discriminator,
            value,
            opt_g,
            opt_d,
            opt_v,
            rng: serde_json::from_value(meta["rng"].clone()).map_err(|e| e.to_string())?,
            iteration: meta["iteration"].as_u64().ok_or("missing iteration")?,
            d_pretrain_steps: meta["d_pretrain_steps"].as_u64().ok_or("missing pretraining steps")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(Archive::read(path)?).map_err(|detail| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        })
    }
}

/// Losses and statistics of one adversarial iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub d_loss: f64,
    pub d_real: f64,
    pub d_fake: f64,
    pub v_loss: Option<f64>,
    pub reward: f64,
    pub weight_mean: f64,
    pub g_grad_norm: f64,
}

/// Drives pretraining and the adversarial loop over one [`GanState`].
pub struct GanTrainer<'a, F> {
    pub state: GanState<F>,
    pub strategy: StrategyConfig,
    pub cfg: TrainingConfig,
    pub data: &'a CountingDataset,
    pub max_len: usize,
}

struct PairBatch<'a> {
    inputs: Vec<&'a [Token]>,
    real: Vec<TokenSequence>,
    fake: Vec<TokenSequence>,
}

impl<'a, F: Real> GanTrainer<'a, F> {
    pub fn new(
        state: GanState<F>,
        strategy: StrategyConfig,
        cfg: TrainingConfig,
        data: &'a CountingDataset,
        max_len: usize,
    ) -> Result<Self> {
        strategy.validate()?;
        if !strategy.kind.is_adversarial() {
            return Err(Error::Config("adversarial training needs a GAN strategy".into()));
        }
        if data.train.is_empty() {
            return Err(Error::invalid("training split is empty"));
        }
        if strategy.uses_value() != state.value.is_some() {
            return Err(Error::invalid("value network presence does not match the strategy"));
        }
        Ok(Self {
            state,
            strategy,
            cfg,
            data,
            max_len,
        })
    }

    fn draw_inputs(&mut self) -> Vec<&'a CountingExample> {
        let n = self.data.train.len();
        let data = self.data;
        (0..self.cfg.batch_size)
            .map(|_| &data.train[self.state.rng.random_range(0..n)])
            .collect()
    }

    fn pair_batch(&mut self) -> PairBatch<'a> {
        let examples = self.draw_inputs();
        let vocab = self.state.generator.vocab();
        let inputs: Vec<&[Token]> = examples.iter().map(|e| e.input.tokens()).collect();
        let real = examples.iter().map(|e| answer_response(e).trajectory(&vocab)).collect();
        let fake = self
            .state
            .generator
            .sample(&inputs, &mut self.state.rng, self.max_len)
            .iter()
            .map(|r| r.trajectory(&vocab))
            .collect();
        PairBatch { inputs, real, fake }
    }

    fn discriminator_step(&mut self, iteration: u64) -> Result<(f64, f64, f64, PairBatch<'a>)> {
        let batch = self.pair_batch();
        let real: Vec<&[Token]> = batch.real.iter().map(Vec::as_slice).collect();
        let fake: Vec<&[Token]> = batch.fake.iter().map(Vec::as_slice).collect();
        let step = discriminator_loss(
            &self.strategy,
            &self.state.discriminator,
            &batch.inputs,
            &real,
            &fake,
            &mut self.state.rng,
        )?;
        if !step.loss.is_finite() {
            return Err(divergence(iteration, format!("discriminator loss is {}", step.loss)));
        }
        apply_update(
            &mut self.state.opt_d,
            self.state.discriminator.params_mut(),
            step.grads,
            self.cfg.clip_norm,
            iteration,
            "discriminator",
        )?;
        Ok((step.loss, step.mean_real, step.mean_fake, batch))
    }

    /// Runs discriminator pretraining up to `steps` total steps.
    pub fn pretrain_discriminator(&mut self, steps: u64, history: &mut History) -> Result<()> {
        while self.state.d_pretrain_steps < steps {
            let (loss, real, fake, _) = self.discriminator_step(0)?;
            self.state.d_pretrain_steps += 1;
            history.push(Record::DPretrain {
                step: self.state.d_pretrain_steps,
                loss,
                real,
                fake,
            })?;
        }
        history.flush()
    }

    /// One full adversarial iteration.
    pub fn iterate(&mut self) -> Result<IterationStats> {
        let iteration = self.state.iteration + 1;
        let mut d_loss = 0.0;
        let mut d_real = 0.0;
        let mut d_fake = 0.0;
        let mut last = None;
        for _ in 0..self.cfg.d_iterations {
            let (loss, real, fake, batch) = self.discriminator_step(iteration)?;
            d_loss += loss;
            d_real += real;
            d_fake += fake;
            last = Some(batch);
        }
        let k = self.cfg.d_iterations as f64;
        let batch = last.expect("at least one discriminator step");

        let v_loss = match (&mut self.state.value, &mut self.state.opt_v) {
            (Some(v), Some(opt)) => {
                let fake: Vec<&[Token]> = batch.fake.iter().map(Vec::as_slice).collect();
                let q = self.state.discriminator.step_scores(&batch.inputs, &fake);
                let targets: Vec<Vec<f64>> = q.iter().map(|q| value_targets(self.strategy.kind, q)).collect();
                let loss = update_value_network(v, opt, &batch.inputs, &fake, &targets, self.cfg.clip_norm)
                    .map_err(|_| divergence(iteration, "value network update diverged"))?;
                if !loss.is_finite() {
                    return Err(divergence(iteration, format!("value loss is {loss}")));
                }
                Some(loss)
            }
            _ => None,
        };

        let mut reward = 0.0;
        let mut weight_mean = 0.0;
        let mut g_grad_norm = 0.0;
        for _ in 0..self.cfg.g_iterations {
            let examples = self.draw_inputs();
            let inputs: Vec<&[Token]> = examples.iter().map(|e| e.input.tokens()).collect();
            let (grads, weighted) = generator_gradient(
                &self.strategy,
                &self.state.generator,
                &self.state.discriminator,
                self.state.value.as_ref(),
                &inputs,
                self.max_len,
                &mut self.state.rng,
            )?;
            let finals: f64 = weighted.step_scores.iter().map(|q| q[q.len() - 1]).sum();
            reward += finals / inputs.len() as f64;
            let (wsum, wcount) = weighted
                .weights
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(s, c), w| (s + w, c + 1));
            weight_mean += wsum / wcount.max(1) as f64;
            g_grad_norm = apply_update(
                &mut self.state.opt_g,
                self.state.generator.params_mut(),
                grads,
                self.cfg.clip_norm,
                iteration,
                "generator",
            )?;
        }
        let gk = self.cfg.g_iterations as f64;
        self.state.iteration = iteration;
        Ok(IterationStats {
            d_loss: d_loss / k,
            d_real: d_real / k,
            d_fake: d_fake / k,
            v_loss,
            reward: reward / gk,
            weight_mean: weight_mean / gk,
            g_grad_norm,
        })
    }

    fn snapshot_examples(&self) -> &'a [CountingExample] {
        let valid: &'a [CountingExample] = &self.data.valid;
        if self.cfg.eval_subset == 0 || self.cfg.eval_subset >= valid.len() {
            valid
        } else {
            &valid[..self.cfg.eval_subset]
        }
    }

    fn checkpoint(&self, run: &RunDir, history: &mut History) -> Result<()> {
        let it = self.state.iteration;
        let extra = json!({ "iteration": it, "strategy": self.strategy.kind.to_string() });
        let g_path = run.generator_checkpoint(it);
        let d_path = run.discriminator_checkpoint(it);
        self.state.generator.save(&g_path, extra.clone())?;
        self.state.discriminator.save(&d_path, extra)?;
        self.state.save(&run.state())?;
        for p in [g_path, d_path] {
            let file = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            history.push(Record::Checkpoint { iteration: it, file })?;
        }
        history.flush()
    }

    /// Pretrains the discriminator if needed, then iterates until
    /// `total_iterations`, checkpointing and snapshotting on schedule.
    pub fn run(&mut self, history: &mut History, run: Option<&RunDir>) -> Result<()> {
        self.pretrain_discriminator(self.cfg.d_pretrain_steps as u64, history)?;
        if self.state.iteration == 0 {
            if let Some(run) = run {
                self.checkpoint(run, history)?;
            }
        }
        let total = self.cfg.total_iterations as u64;
        while self.state.iteration < total {
            let started = Instant::now();
            let stats = self.iterate()?;
            let it = self.state.iteration;
            history.time(&self.strategy.kind.to_string(), it, started.elapsed().as_secs_f64())?;
            history.push(Record::GanStep {
                iteration: it,
                d_loss: stats.d_loss,
                d_real: stats.d_real,
                d_fake: stats.d_fake,
                v_loss: stats.v_loss,
                reward: stats.reward,
                weight_mean: stats.weight_mean,
                g_grad_norm: stats.g_grad_norm,
            })?;
            if self.cfg.eval_every > 0 && it % self.cfg.eval_every as u64 == 0 {
                let valid_prec = precision_argmax(&self.state.generator, self.snapshot_examples(), self.max_len);
                log::info!("{} iteration {it}: valid prec {valid_prec:.2}", self.strategy.kind);
                history.push(Record::Snapshot {
                    phase: self.strategy.kind.to_string(),
                    iteration: it,
                    valid_prec,
                })?;
            }
            let due = self.cfg.checkpoint_every > 0 && it % self.cfg.checkpoint_every as u64 == 0;
            if let Some(run) = run {
                if due || it == total {
                    self.checkpoint(run, history)?;
                }
            }
        }
        history.flush()
    }
}

#[allow(clippy::too_many_arguments)]
/// Adversarial fine-tuning of a pretrained generator from scratch: fresh
/// discriminator (and value network when the strategy uses one), then
/// pretraining and the full loop.
pub fn train_gan<F: Real>(
    generator: Generator<F>,
    strategy: StrategyConfig,
    cfg: TrainingConfig,
    data: &CountingDataset,
    max_len: usize,
    seed: u64,
    history: &mut History,
    run: Option<&RunDir>,
) -> Result<GanState<F>> {
    let state = GanState::new(generator, &strategy, &cfg, seed);
    let mut trainer = GanTrainer::new(state, strategy, cfg, data, max_len)?;
    trainer.run(history, run)?;
    Ok(trainer.state)
}
