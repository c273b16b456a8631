use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stepgan::config::{MleConfig, TrainingConfig};
use stepgan::counting::{generate_dataset, CountingDataset, SplitSizes};
use stepgan::credit::{StrategyConfig, StrategyKind};
use stepgan::nn::{Discriminator, Generator, ModelDims, Response, ValueNetwork};
use stepgan::optim::{Optimizer, OptimizerKind};
use stepgan::training::{
    pretrain_mle, teacher_forced_loss, train_gan, update_value_network, GanState, GanTrainer, History, Record,
    RunDir,
};
use stepgan::{Error, Token, Vocabulary};

const DIMS: ModelDims = ModelDims { embed: 8, hidden: 16 };

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_data() -> CountingDataset {
    generate_dataset(3, SplitSizes::new(400, 60, 60), 10).unwrap()
}

fn gan_cfg(total: usize) -> TrainingConfig {
    TrainingConfig {
        batch_size: 8,
        d_iterations: 2,
        total_iterations: total,
        d_pretrain_steps: 3,
        eval_every: 2,
        checkpoint_every: 2,
        eval_subset: 20,
        learning_rate: 1e-3,
        ..TrainingConfig::default()
    }
}

#[test]
fn single_example_is_memorised() {
    let mut data = small_data();
    data.train.truncate(1);
    data.valid = data.train.clone();
    let cfg = MleConfig {
        learning_rate: 1e-2,
        eval_every: 10,
        max_epochs: 600,
        ..MleConfig::default()
    };
    let g = Generator::<f32>::new(DIMS, Vocabulary::digits(), &mut rng(1));
    let out = pretrain_mle(g, &data, &cfg, &mut rng(2), &mut History::in_memory()).unwrap();
    let loss = teacher_forced_loss(&out.generator, &data.train);
    assert!(loss < 0.05, "loss {loss}");
    let e = &data.train[0];
    let decoded = out.generator.decode_argmax(&[e.input.tokens()], 4);
    assert_eq!(decoded[0], Response::terminated(e.answer.to_vec()));
}

#[test]
fn mle_is_deterministic_and_keeps_best_checkpoint() {
    let data = small_data();
    let cfg = MleConfig {
        batch_size: 32,
        eval_every: 5,
        max_epochs: 4,
        ..MleConfig::default()
    };
    let run = || {
        let g = Generator::<f32>::new(DIMS, Vocabulary::digits(), &mut rng(4));
        let mut history = History::in_memory();
        let out = pretrain_mle(g, &data, &cfg, &mut rng(5), &mut history).unwrap();
        (out, history.records)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert_eq!(a.generator, b.generator);
    let best = ha
        .iter()
        .filter_map(|r| match r {
            Record::MleValidation { valid_loss, .. } => Some(*valid_loss),
            _ => None,
        })
        .fold(f64::INFINITY, f64::min);
    assert!((a.best_valid_loss - best).abs() < 1e-12 || a.best_valid_loss < best);
    assert!((teacher_forced_loss(&a.generator, &data.valid) - a.best_valid_loss).abs() < 1e-9);
}

#[test]
fn zero_iterations_leave_generator_unchanged() {
    let data = small_data();
    let g = Generator::<f32>::new(DIMS, Vocabulary::digits(), &mut rng(6));
    let cfg = TrainingConfig {
        d_pretrain_steps: 0,
        ..gan_cfg(0)
    };
    let state = train_gan(
        g.clone(),
        StrategyConfig::new(StrategyKind::StepGanW),
        cfg,
        &data,
        4,
        7,
        &mut History::in_memory(),
        None,
    )
    .unwrap();
    assert_eq!(state.generator, g);
    let fresh = GanState::new(g, &StrategyConfig::new(StrategyKind::StepGanW), &cfg, 7);
    assert_eq!(state.discriminator, fresh.discriminator);
}

#[test]
fn discriminator_pretraining_separates_real_from_noise() {
    let data = generate_dataset(8, SplitSizes::new(2000, 200, 200), 10).unwrap();
    let g = Generator::<f32>::new(DIMS, Vocabulary::digits(), &mut rng(9));
    let strategy = StrategyConfig::new(StrategyKind::StepGan);
    let cfg = TrainingConfig {
        batch_size: 32,
        ..gan_cfg(0)
    };
    let state = GanState::new(g, &strategy, &cfg, 10);
    let mut trainer = GanTrainer::new(state, strategy, cfg, &data, 4).unwrap();
    trainer.pretrain_discriminator(300, &mut History::in_memory()).unwrap();
    let d = &trainer.state.discriminator;
    let g = &trainer.state.generator;
    let vocab = g.vocab();
    let inputs: Vec<&[Token]> = data.valid.iter().map(|e| e.input.tokens()).collect();
    let real: Vec<Vec<Token>> = data.valid.iter().map(|e| Response::terminated(e.answer.to_vec()).trajectory(&vocab)).collect();
    let fake: Vec<Vec<Token>> = g.sample(&inputs, &mut rng(11), 4).iter().map(|r| r.trajectory(&vocab)).collect();
    let mean = |seqs: &[Vec<Token>]| -> f64 {
        let refs: Vec<&[Token]> = seqs.iter().map(Vec::as_slice).collect();
        let scores = d.step_scores(&inputs, &refs);
        scores.iter().map(|q| q.iter().sum::<f64>() / q.len() as f64).sum::<f64>() / scores.len() as f64
    };
    let gap = mean(&real) - mean(&fake);
    assert!(gap > 0.2, "real/fake gap {gap}");
}

fn value_fixture() -> (ValueNetwork<f64>, Vec<Vec<Token>>, Vec<Vec<Token>>) {
    let vocab = Vocabulary::digits();
    let v = ValueNetwork::<f64>::value(ModelDims { embed: 4, hidden: 8 }, vocab, &mut rng(12));
    let inputs = vec![vec![1, 2, 3], vec![4], vec![5, 5, 0, 9]];
    let trajectories = vec![vec![0, 1, 3, 10], vec![0, 4, 0, 10], vec![7, 10]];
    (v, inputs, trajectories)
}

fn refs(v: &[Vec<Token>]) -> Vec<&[Token]> {
    v.iter().map(Vec::as_slice).collect()
}

#[test]
fn value_network_regresses_to_constant_targets() {
    let (mut v, inputs, trajectories) = value_fixture();
    let targets: Vec<Vec<f64>> = trajectories.iter().map(|t| vec![0.5; t.len()]).collect();
    let mut opt = Optimizer::new(OptimizerKind::RmsProp, 1e-2, v.params());
    for _ in 0..2000 {
        update_value_network(&mut v, &mut opt, &refs(&inputs), &refs(&trajectories), &targets, 5.0).unwrap();
    }
    for q in v.step_scores(&refs(&inputs), &refs(&trajectories)) {
        for s in q {
            assert!((s - 0.5).abs() <= 0.01, "{s}");
        }
    }
}

#[test]
fn value_update_descends_on_a_frozen_batch() {
    let (mut v, inputs, trajectories) = value_fixture();
    let targets: Vec<Vec<f64>> = trajectories
        .iter()
        .map(|t| (0..t.len()).map(|i| 0.1 + 0.2 * i as f64).collect())
        .collect();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 1e-2, v.params());
    let mut prev = f64::INFINITY;
    for _ in 0..20 {
        let loss = update_value_network(&mut v, &mut opt, &refs(&inputs), &refs(&trajectories), &targets, 5.0).unwrap();
        assert!(loss < prev, "{loss} !< {prev}");
        prev = loss;
    }
}

#[test]
fn value_already_at_targets_does_not_move() {
    let (mut v, inputs, trajectories) = value_fixture();
    // a zero head outputs exactly 0.5 everywhere
    v.params_mut().get_mut(9).fill(0.0);
    v.params_mut().get_mut(10).fill(0.0);
    let before = v.clone();
    let targets: Vec<Vec<f64>> = trajectories.iter().map(|t| vec![0.5; t.len()]).collect();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 1e-1, v.params());
    let loss = update_value_network(&mut v, &mut opt, &refs(&inputs), &refs(&trajectories), &targets, 5.0).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(v, before);
}

#[test]
fn value_targets_leave_discriminator_untouched() {
    let (mut v, inputs, trajectories) = value_fixture();
    let d = Discriminator::<f64>::discriminator(ModelDims { embed: 4, hidden: 8 }, Vocabulary::digits(), &mut rng(13));
    let before = d.clone();
    let targets = d.step_scores(&refs(&inputs), &refs(&trajectories));
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 1e-1, v.params());
    update_value_network(&mut v, &mut opt, &refs(&inputs), &refs(&trajectories), &targets, 5.0).unwrap();
    assert_eq!(d, before);
}

fn gan_steps(records: &[Record]) -> Vec<Record> {
    records
        .iter()
        .filter(|r| matches!(r, Record::GanStep { .. } | Record::Snapshot { .. }))
        .cloned()
        .collect()
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = small_data();
    let g = Generator::<f32>::new(DIMS, Vocabulary::digits(), &mut rng(14));
    for kind in [StrategyKind::StepGanW, StrategyKind::Mcts, StrategyKind::SeqGan] {
        let strategy = StrategyConfig::new(kind);
        let mut full_history = History::in_memory();
        let full = train_gan(g.clone(), strategy, gan_cfg(6), &data, 4, 15, &mut full_history, None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let mut first = History::in_memory();
        let half = train_gan(g.clone(), strategy, gan_cfg(3), &data, 4, 15, &mut first, None).unwrap();
        half.save(&path).unwrap();
        let restored = GanState::<f32>::load(&path).unwrap();
        assert_eq!(restored, half);
        let mut trainer = GanTrainer::new(restored, strategy, gan_cfg(6), &data, 4).unwrap();
        let mut second = History::in_memory();
        trainer.run(&mut second, None).unwrap();

        assert_eq!(trainer.state, full, "{kind}");
        let mut resumed = gan_steps(&first.records);
        resumed.extend(gan_steps(&second.records));
        assert_eq!(resumed, gan_steps(&full_history.records), "{kind}");
    }
}

#[test]
fn run_directory_logs_match_memory_and_checkpoints_exist() {
    let data = small_data();
    let g = Generator::<f32>::new(DIMS, Vocabulary::digits(), &mut rng(16));
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::create(dir.path().join("run"), &Default::default()).unwrap();
    let mut history = History::to_files(&run.history(), &run.timings(), false).unwrap();
    train_gan(g, StrategyConfig::new(StrategyKind::Regs), gan_cfg(4), &data, 4, 17, &mut history, Some(&run)).unwrap();
    assert_eq!(History::read(&run.history()).unwrap(), history.records);
    assert_eq!(run.discriminator_checkpoints().unwrap().len(), 3);
    assert!(run.generator_checkpoint(4).exists());
    assert!(run.state().exists());
    assert!(run.config_snapshot().exists());
}

#[test]
fn non_finite_discriminator_aborts_with_divergence() {
    let data = small_data();
    let g = Generator::<f32>::new(DIMS, Vocabulary::digits(), &mut rng(18));
    let strategy = StrategyConfig::new(StrategyKind::StepGan);
    let cfg = gan_cfg(3);
    let mut state = GanState::new(g, &strategy, &cfg, 19);
    state.discriminator.params_mut().get_mut(10).fill(f32::NAN);
    let mut trainer = GanTrainer::new(state, strategy, cfg, &data, 4).unwrap();
    assert!(matches!(trainer.iterate(), Err(Error::Divergence { .. })));
}
