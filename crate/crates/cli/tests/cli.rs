use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hdyn");

const TINY: &str = "\
# small enough for a test
train_trajectories = 24
test_trajectories = 6
steps = 10
log_every = 5
mpc_sequences = 6
";

fn hdyn(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("HDYN_SEED").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.cfg");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_checkpoint_is_a_usage_error() {
    for cmd in ["eval", "push-mpc", "loco"] {
        assert_eq!(code(&hdyn(&[cmd])), 2, "{cmd}");
        assert_eq!(code(&hdyn(&[cmd, "--ckpt", "/nonexistent/model.ckpt"])), 2, "{cmd}");
    }
    assert_eq!(code(&hdyn(&["plot-data"])), 2);
    assert_eq!(code(&hdyn(&["frobnicate"])), 2);
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    for args in [
        vec!["train", "--set", "stepz=3"],
        vec!["train", "--set", "steps"],
        vec!["train", "--method", "magic"],
        vec!["train", "--env", "moon"],
        vec!["train", "--set", "batch=0"],
        vec!["ablate", "--mode", "z_int=3"],
        vec!["ablate", "--env", "slope", "--mode", "no_decoder"],
        vec!["gen-data", "--env", "slope"],
        vec!["train", "--config", "/nonexistent.cfg"],
    ] {
        let mut a = args.clone();
        a.extend(["--out", s(&out)]);
        let o = hdyn(&a);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!out.exists(), "a rejected command wrote output");
}

#[test]
fn every_flag_documents_its_default() {
    for cmd in ["gen-data", "train", "eval", "push-mpc", "loco", "ablate", "gradcheck", "plot-data"] {
        let o = hdyn(&[cmd, "--help"]);
        assert_eq!(code(&o), 0);
        let help = String::from_utf8(o.stdout).unwrap();
        let mut flags = 0;
        for line in help.lines().map(str::trim).filter(|l| l.starts_with("--")) {
            flags += 1;
            assert!(line.contains("[default: ") || line.contains("[required]"), "{cmd}: {line}");
        }
        assert!(flags >= 1, "{cmd}");
    }
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = hdyn(&["train", "--config", &cfg, "--seed", "7", "--out", s(&out)]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect();
    let read = |p: &Path, f: &str| fs::read(p.join(f)).unwrap();
    assert_eq!(read(&runs[0], "metrics.csv"), read(&runs[1], "metrics.csv"));
    assert_eq!(read(&runs[0], "seed_7/model.ckpt"), read(&runs[1], "seed_7/model.ckpt"));
    let csv = String::from_utf8(read(&runs[0], "metrics.csv")).unwrap();
    assert!(csv.starts_with("method,split,metric,value,seed,step\n"));
    assert!(csv.contains("hyperdynamics,novel,pos_err_t1,"));
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(4) == Some("7")));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("env");
    let o = Command::new(BIN)
        .args(["train", "--config", &cfg, "--method", "xyz", "--out", s(&out)])
        .env("HDYN_SEED", "3")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("seed_3/model.ckpt").exists());
}

#[test]
fn checkpoint_commands_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let train = dir.path().join("train");
    let o = hdyn(&["train", "--config", &cfg, "--seeds", "0,1", "--jobs", "2", "--out", s(&train)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = train.join("seed_1/model.ckpt");

    // The oracle adapter predicts with the environment itself: zero error.
    let ev = dir.path().join("eval");
    let o = hdyn(&["eval", "--ckpt", s(&ckpt), "--oracle", "--horizons", "1,3", "--out", s(&ev)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    for r in rows {
        assert!(r.starts_with("oracle,"), "{r}");
        assert_eq!(r.split(',').nth(3), Some("0"), "{r}");
    }

    let mpc: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|jobs| {
            let out = dir.path().join(format!("mpc{jobs}"));
            let o = hdyn(&["push-mpc", "--ckpt", s(&ckpt), "--obstacles", "on", "--trials", "4", "--jobs", jobs, "--out", s(&out)]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            fs::read(out.join("metrics.csv")).unwrap()
        })
        .collect();
    assert_eq!(mpc[0], mpc[1]);
    let text = String::from_utf8(mpc[0].clone()).unwrap();
    assert!(text.contains("collision_sound,1,1,"), "{text}");
    assert_eq!(code(&hdyn(&["push-mpc", "--ckpt", s(&ckpt), "--obstacles", "maybe"])), 2);
    assert_eq!(code(&hdyn(&["loco", "--ckpt", s(&ckpt)])), 2);

    let plot = dir.path().join("plot");
    let o = hdyn(&["plot-data", "--metrics", s(&train.join("metrics.csv")), "--out", s(&plot)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let curves = fs::read_to_string(plot.join("learning_curves.tsv")).unwrap();
    assert!(curves.lines().any(|l| l.starts_with("loss\thyperdynamics\ttrain\t10\t2\t")), "{curves}");
    let table = fs::read_to_string(plot.join("table.tsv")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("pos_err_t1\thyperdynamics\tnovel\t2\t")), "{table}");
    assert!(plot.join("summary.json").exists());
}

#[test]
fn gen_data_writes_every_split() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("data");
    let o = hdyn(&["gen-data", "--config", &cfg, "--seed", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("seed_2/push_data.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 24 + 6 + 6);
    let novel = text.lines().filter(|l| l.contains("\"split\":\"novel\"")).count();
    assert_eq!(novel, 6);
}

#[test]
fn loco_checkpoint_runs_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("loco.cfg");
    fs::write(
        &cfg,
        "env = pier\niterations = 2\nrollouts = 1\nrollout_len = 20\nupdates_per_iteration = 2\nbatch = 8\n\
         collect_sequences = 4\ncollect_horizon = 2\nmpc_sequences = 4\nmpc_horizon = 2\neval_episodes = 1\neval_len = 10\n",
    )
    .unwrap();
    let train = dir.path().join("t");
    let o = hdyn(&["train", "--config", s(&cfg), "--method", "recurrent", "--out", s(&train)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("l");
    let o = hdyn(&["loco", "--ckpt", s(&train.join("seed_0/model.ckpt")), "--episodes", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let eps = fs::read_to_string(out.join("episodes.tsv")).unwrap();
    assert_eq!(eps.lines().count(), 1 + 4);
}
