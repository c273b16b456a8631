use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use stepgan::config::{parse_seeds, ExperimentConfig};
use stepgan::counting::{generate_dataset, parse_tokens, CountingDataset, SplitSizes};
use stepgan::credit::{StrategyConfig, StrategyKind};
use stepgan::eval::{
    argmax_responses, build_general_set, evaluate, precision_argmax, q_variance_probe, timing_benchmark,
    write_plot_data, EvalSettings, ReportMeta,
};
use stepgan::nn::{Checkpointable, Discriminator, Generator};
use stepgan::training::{pretrain_mle, GanState, GanTrainer, History, Record, RunDir};
use stepgan::{Error, Token, Vocabulary};

use crate::{BenchArgs, EvalArgs, GenDataArgs, ProbeArgs, TrainArgs, OUTPUT_ROOT_ENV};

type Model = f32;

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let sizes = SplitSizes::parse(&a.sizes)?;
    let data = generate_dataset(a.seed, sizes, a.nmax)?;
    data.write_dir(&a.out)?;
    log::info!(
        "wrote {} examples to {} (mean answer count {:.3})",
        sizes.train + sizes.valid + sizes.test,
        a.out.display(),
        data.mean_answer_count()
    );
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
        if !root.is_empty() {
            cfg.output_dir = PathBuf::from(root);
        }
    }
    Ok(cfg)
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<CountingDataset> {
    match &cfg.data.dir {
        Some(dir) => Ok(CountingDataset::read_dir(dir).with_context(|| format!("reading dataset {}", dir.display()))?),
        None => Ok(generate_dataset(cfg.data.seed, cfg.data.sizes, cfg.data.max_input_len)?),
    }
}

fn load_generator(path: &Path) -> Result<Generator<Model>> {
    let (g, _) = Generator::<Model>::load(path).with_context(|| format!("loading generator {}", path.display()))?;
    Ok(g)
}

/// MLE pretraining inside `run`, saving the best generator as `g_mle.ckpt`.
fn pretrain(
    cfg: &ExperimentConfig,
    data: &CountingDataset,
    seed: u64,
    run: &RunDir,
    history: &mut History,
) -> Result<Generator<Model>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Generator::<Model>::new(cfg.model.dims, Vocabulary::digits(), &mut rng);
    let out = pretrain_mle(g, data, &cfg.mle, &mut rng, history)?;
    let path = run.checkpoints().join("g_mle.ckpt");
    out.generator
        .save(&path, json!({ "strategy": "mle", "seed": seed, "iteration": out.iterations }))?;
    history.push(Record::Checkpoint {
        iteration: out.iterations,
        file: "g_mle.ckpt".into(),
    })?;
    Ok(out.generator)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(kind) = &a.strategy {
        let kind: StrategyKind = kind.parse()?;
        if kind != cfg.strategy.kind {
            cfg.strategy = StrategyConfig::new(kind);
        }
    }
    if let Some(seeds) = &a.seed {
        cfg.seeds = parse_seeds(seeds)?;
    }
    if let Some(n) = a.iterations {
        cfg.train.total_iterations = n;
    }
    if let Some(p) = a.pretrained {
        cfg.pretrained = Some(p);
    }
    if let Some(d) = a.dataset {
        cfg.data.dir = Some(d);
    }
    cfg.validate()?;
    let data = load_dataset(&cfg)?;
    let kind = cfg.strategy.kind;
    let mut box_rows = Vec::new();
    for &seed in &cfg.seeds {
        let run_cfg = ExperimentConfig {
            seeds: vec![seed],
            ..cfg.clone()
        };
        let root = cfg.output_dir.join(format!("{kind}_seed{seed}"));
        let resume = a.resume && RunDir::new(&root).state().exists();
        let run = RunDir::create(&root, &run_cfg)?;
        let mut history = History::to_files(&run.history(), &run.timings(), resume)?;
        log::info!("{kind} seed {seed}: run directory {}", root.display());
        let generator = if !kind.is_adversarial() {
            pretrain(&run_cfg, &data, seed, &run, &mut history)?
        } else {
            let state = if resume {
                GanState::<Model>::load(&run.state())?
            } else {
                let g = match &cfg.pretrained {
                    Some(p) => load_generator(p)?,
                    None => pretrain(&run_cfg, &data, seed, &run, &mut history)?,
                };
                GanState::new(g, &cfg.strategy, &cfg.train, seed)
            };
            let mut trainer = GanTrainer::new(state, cfg.strategy, cfg.train, &data, cfg.model.max_len)?;
            trainer.run(&mut history, Some(&run))?;
            trainer.state.generator
        };
        let test_prec = precision_argmax(&generator, &data.test, cfg.model.max_len);
        history.push(Record::Snapshot {
            phase: "test".into(),
            iteration: cfg.train.total_iterations as u64,
            valid_prec: test_prec,
        })?;
        history.flush()?;
        log::info!("{kind} seed {seed}: test prec {test_prec:.2}");
        box_rows.push((seed.to_string(), test_prec));
    }
    write_plot_data(
        &cfg.output_dir.join(format!("{kind}_prec_box.txt")),
        "seed test_prec",
        &box_rows,
    )?;
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(d) = a.dataset {
        cfg.data.dir = Some(d);
    }
    let data = load_dataset(&cfg)?;
    let (g, extra) = Generator::<Model>::load(&a.checkpoint)
        .with_context(|| format!("loading generator {}", a.checkpoint.display()))?;
    let examples = match a.limit {
        Some(n) => &data.test[..n.min(data.test.len())],
        None => &data.test[..],
    };
    let settings = EvalSettings {
        samples: a.samples.unwrap_or(cfg.eval.samples),
        epsilon: a.epsilon.unwrap_or(cfg.eval.epsilon),
        max_len: cfg.model.max_len,
    };
    let general = match &a.general_from {
        Some(p) => {
            let mle = load_generator(p)?;
            let tokens = argmax_responses(&mle, examples, settings.max_len)
                .into_iter()
                .map(|r| r.tokens)
                .collect::<Vec<_>>();
            Some(build_general_set(&tokens)?)
        }
        None => None,
    };
    let model = a
        .checkpoint
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("generator")
        .to_string();
    let meta = ReportMeta {
        model,
        strategy: a.strategy,
        seed: a.seed,
        iteration: extra["iteration"].as_u64().unwrap_or(0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let report = evaluate(&g, examples, settings, meta, general.as_ref(), &mut rng)?;
    let out = a.out.unwrap_or_else(|| {
        let dir = a.checkpoint.parent().unwrap_or(Path::new("."));
        let run_root = if dir.file_name().is_some_and(|n| n == "checkpoints") {
            dir.parent().unwrap_or(dir)
        } else {
            dir
        };
        run_root.join("eval.csv")
    });
    report.append_csv(&out)?;
    println!("{}", stepgan::eval::EvalReport::csv_header());
    println!("{}", report.csv_row());
    Ok(())
}

fn parse_probe_line(line: &str) -> Result<(Vec<Token>, Vec<Token>)> {
    let (x, y) = line
        .split_once('\t')
        .ok_or_else(|| Error::invalid(format!("probe line needs input<TAB>response: {line:?}")))?;
    Ok((parse_tokens(x)?, parse_tokens(y)?))
}

pub fn probe_variance(a: ProbeArgs) -> Result<()> {
    let run = RunDir::new(&a.run_dir);
    let paths = run.discriminator_checkpoints()?;
    if paths.len() < 2 {
        bail!(Error::invalid(format!(
            "{} holds {} discriminator checkpoints, need at least 2",
            run.checkpoints().display(),
            paths.len()
        )));
    }
    let checkpoints = paths
        .iter()
        .map(|p| Discriminator::<Model>::load(p).map(|(d, _)| d))
        .collect::<stepgan::Result<Vec<_>>>()?;
    let vocab = checkpoints[0].vocab();
    let text = fs::read_to_string(&a.probe_file).with_context(|| format!("reading {}", a.probe_file.display()))?;
    let mut written = 0;
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let (x, mut y) = parse_probe_line(line)?;
        if y.last() != Some(&vocab.eos()) {
            y.push(vocab.eos());
        }
        let profile = q_variance_probe(&checkpoints, &x, &y)?;
        let path = run.plots().join(format!("variance_{i}.txt"));
        fs::create_dir_all(run.plots())?;
        fs::write(&path, profile.to_plot_data()).with_context(|| format!("writing {}", path.display()))?;
        written += 1;
    }
    if written == 0 {
        bail!(Error::invalid("probe file has no probes"));
    }
    log::info!("wrote {written} variance profiles over {} checkpoints", checkpoints.len());
    Ok(())
}

pub fn bench_time(a: BenchArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let strategies = a
        .strategies
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let mut sc = StrategyConfig::new(s.trim().parse()?);
            sc.rollouts = cfg.strategy.rollouts;
            Ok(sc)
        })
        .collect::<stepgan::Result<Vec<_>>>()?;
    if strategies.is_empty() {
        bail!(Error::Config("empty strategy list".into()));
    }
    if strategies.iter().any(|s| !s.kind.is_adversarial()) {
        bail!(Error::Config("mle has no adversarial iteration to time".into()));
    }
    let data = load_dataset(&cfg)?;
    let g = match a.pretrained.as_ref().or(cfg.pretrained.as_ref()) {
        Some(p) => load_generator(p)?,
        None => Generator::new(cfg.model.dims, Vocabulary::digits(), &mut ChaCha8Rng::seed_from_u64(0)),
    };
    let seed = cfg.seeds[0];
    let rows = timing_benchmark(&strategies, &g, &cfg.train, &data, cfg.model.max_len, seed, a.warmup, a.iterations)?;
    let mut csv = String::from("strategy,rollouts,seconds_per_iteration\n");
    for (s, secs) in &rows {
        writeln!(csv, "{},{},{:.6}", s.kind, s.rollouts, secs).expect("write to string");
    }
    print!("{csv}");
    if let Some(out) = a.out {
        if let Some(dir) = out.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&out, csv).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}
