use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stepgan::nn::{Checkpointable, Generator};

fn stepgan(args: &[&str], output_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepgan"))
        .args(args)
        .env("STEPGAN_OUTPUT_ROOT", output_root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        let data = ws.path("data");
        ok(&stepgan(
            &["gen-data", "--seed", "4", "--sizes", "60,12,12", "--out", data.to_str().unwrap()],
            &ws.path("runs"),
        ));
        let config = format!(
            "data.dir={}\nmodel.embed=4\nmodel.hidden=8\nmle.batch_size=16\nmle.max_epochs=2\n\
             train.batch_size=8\ntrain.d_iterations=1\ntrain.d_pretrain_steps=2\ntrain.total_iterations=4\n\
             train.eval_every=2\ntrain.checkpoint_every=2\ntrain.eval_subset=5\neval.samples=5\n",
            data.display()
        );
        fs::write(ws.path("tiny.cfg"), config).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
}

#[test]
fn gen_data_is_reproducible_and_rejects_bad_sizes() {
    let ws = Workspace::new();
    ok(&stepgan(&["gen-data", "--seed", "4", "--sizes", "60,12,12", "--out", &ws.s("again")], &ws.path("runs")));
    for f in ["train.txt", "valid.txt", "test.txt", "manifest.txt"] {
        assert_eq!(fs::read(ws.path("data").join(f)).unwrap(), fs::read(ws.path("again").join(f)).unwrap());
    }
    let lines = fs::read_to_string(ws.path("data/train.txt")).unwrap().lines().count();
    assert_eq!(lines, 60);
    let bad = stepgan(&["gen-data", "--sizes", "10,2", "--out", &ws.s("bad")], &ws.path("runs"));
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn config_and_usage_errors_exit_with_one() {
    let ws = Workspace::new();
    fs::write(ws.path("broken.cfg"), "train.batch_size=zero\n").unwrap();
    let out = stepgan(&["train", "--config", &ws.s("broken.cfg")], &ws.path("runs"));
    assert_eq!(out.status.code(), Some(1));
    let out = stepgan(&["train", "--config", &ws.s("tiny.cfg"), "--strategy", "nope"], &ws.path("runs"));
    assert_eq!(out.status.code(), Some(1));
    let out = stepgan(&["train", "--no-such-flag"], &ws.path("runs"));
    assert_eq!(out.status.code(), Some(1));
    let out = stepgan(&["eval", "--checkpoint", &ws.s("missing.ckpt"), "--config", &ws.s("tiny.cfg")], &ws.path("runs"));
    assert_eq!(out.status.code(), Some(1));
}

fn train_tiny(ws: &Workspace, root: &str, extra: &[&str]) {
    let cfg = ws.s("tiny.cfg");
    let mut args = vec!["train", "--config", cfg.as_str()];
    args.extend_from_slice(extra);
    ok(&stepgan(&args, &ws.path(root)));
}

#[test]
fn mle_then_gan_runs_lay_out_their_directories_deterministically() {
    let ws = Workspace::new();
    train_tiny(&ws, "a", &["--strategy", "mle", "--seed", "1"]);
    let mle_run = ws.path("a/mle_seed1");
    for f in ["config.snapshot", "history.log", "timings.log", "checkpoints/g_mle.ckpt"] {
        assert!(mle_run.join(f).exists(), "{f}");
    }
    assert!(mle_run.join("plots").is_dir());
    let pretrained = mle_run.join("checkpoints/g_mle.ckpt");
    let p = pretrained.to_str().unwrap();
    for root in ["b", "c"] {
        train_tiny(&ws, root, &["--strategy", "stepgan_w", "--seed", "1,2", "--pretrained", p]);
    }
    for seed in [1, 2] {
        let b = ws.path(&format!("b/stepgan_w_seed{seed}"));
        let c = ws.path(&format!("c/stepgan_w_seed{seed}"));
        assert_eq!(fs::read(b.join("history.log")).unwrap(), fs::read(c.join("history.log")).unwrap());
        for ck in ["g_000000.ckpt", "d_000002.ckpt", "g_000004.ckpt", "state.ckpt"] {
            assert_eq!(
                fs::read(b.join("checkpoints").join(ck)).unwrap(),
                fs::read(c.join("checkpoints").join(ck)).unwrap(),
                "{ck}"
            );
        }
    }
    let history_1 = fs::read(ws.path("b/stepgan_w_seed1/history.log")).unwrap();
    let history_2 = fs::read(ws.path("b/stepgan_w_seed2/history.log")).unwrap();
    assert_ne!(history_1, history_2);
    let boxplot = fs::read_to_string(ws.path("b/stepgan_w_prec_box.txt")).unwrap();
    assert_eq!(boxplot.lines().filter(|l| !l.starts_with('#')).count(), 2);

    // evaluation twice gives identical rows
    let g = ws.s("b/stepgan_w_seed1/checkpoints/g_000004.ckpt");
    let csv = ws.s("eval.csv");
    for _ in 0..2 {
        ok(&stepgan(
            &["eval", "--checkpoint", &g, "--config", &ws.s("tiny.cfg"), "--samples", "5", "--general-from", p, "--out", &csv],
            &ws.path("runs"),
        ));
    }
    let rows: Vec<String> = fs::read_to_string(&csv).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("model,strategy,seed,iteration,prec"));
    assert_eq!(rows[1], rows[2]);

    // variance probe over the three discriminator checkpoints
    fs::write(ws.path("probe.txt"), "3 1 4\t1 1 1\n2 2\t0 2 1\n").unwrap();
    ok(&stepgan(
        &["probe-variance", "--run-dir", &ws.s("b/stepgan_w_seed1"), "--probe-file", &ws.s("probe.txt")],
        &ws.path("runs"),
    ));
    let profile = fs::read_to_string(ws.path("b/stepgan_w_seed1/plots/variance_0.txt")).unwrap();
    assert_eq!(profile.lines().filter(|l| !l.starts_with('#')).count(), 4);
    assert!(ws.path("b/stepgan_w_seed1/plots/variance_1.txt").exists());
}

#[test]
fn zero_iterations_leave_only_the_initial_checkpoint() {
    let ws = Workspace::new();
    train_tiny(&ws, "a", &["--strategy", "mle", "--seed", "1"]);
    let p = ws.s("a/mle_seed1/checkpoints/g_mle.ckpt");
    train_tiny(&ws, "z", &["--strategy", "stepgan", "--seed", "3", "--iterations", "0", "--pretrained", &p]);
    let mut files: Vec<String> = fs::read_dir(ws.path("z/stepgan_seed3/checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["d_000000.ckpt", "g_000000.ckpt", "state.ckpt"]);
    let (g0, _) = Generator::<f32>::load(&ws.path("z/stepgan_seed3/checkpoints/g_000000.ckpt")).unwrap();
    let (mle, _) = Generator::<f32>::load(Path::new(&p)).unwrap();
    assert_eq!(g0, mle);

    // one discriminator checkpoint is not enough to probe
    fs::write(ws.path("probe.txt"), "3 1 4\t1 1 1\n").unwrap();
    let out = stepgan(
        &["probe-variance", "--run-dir", &ws.s("z/stepgan_seed3"), "--probe-file", &ws.s("probe.txt")],
        &ws.path("runs"),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn divergence_exits_with_two() {
    let ws = Workspace::new();
    train_tiny(&ws, "a", &["--strategy", "mle", "--seed", "1"]);
    let (mut g, extra) = Generator::<f32>::load(&ws.path("a/mle_seed1/checkpoints/g_mle.ckpt")).unwrap();
    g.params_mut().get_mut(9).fill(f32::NAN);
    let broken = ws.path("broken.ckpt");
    g.save(&broken, extra).unwrap();
    let cfg = ws.s("tiny.cfg");
    let out = stepgan(
        &["train", "--config", &cfg, "--strategy", "seqgan", "--pretrained", broken.to_str().unwrap()],
        &ws.path("runs"),
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bench_time_emits_one_row_per_strategy() {
    let ws = Workspace::new();
    let out_csv = ws.s("bench.csv");
    let out = stepgan(
        &[
            "bench-time", "--config", &ws.s("tiny.cfg"), "--strategies", "stepgan,mcts", "--warmup", "1", "--iterations", "10",
            "--out", &out_csv,
        ],
        &ws.path("runs"),
    );
    ok(&out);
    let text = fs::read_to_string(&out_csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "strategy,rollouts,seconds_per_iteration");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("stepgan,5,") && lines[2].starts_with("mcts,5,"));
    let empty = stepgan(&["bench-time", "--config", &ws.s("tiny.cfg"), "--strategies", ""], &ws.path("runs"));
    assert_eq!(empty.status.code(), Some(1));
}
