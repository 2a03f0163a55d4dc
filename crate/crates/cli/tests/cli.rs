use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowprior_core::flow::load;
use flowprior_core::numerics::{max_abs_diff, RngStream};

fn flowprior(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowprior"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run_with(dir: &Path, cmd: &str, body: &str) -> Output {
    let cfg = config(dir, &format!("{cmd}.cfg"), body);
    flowprior(&[cmd, "--config", cfg.to_str().unwrap(), "--out", "out"], dir)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_key_is_a_config_error_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "theory", "n = 8\n\nbogus = 1\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn measurement_count_below_four_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "theory", "n = 8\nm = 3, 5\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"));
    assert!(!dir.path().join("out/theory.csv").exists());
}

#[test]
fn missing_model_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "denoise", "model = nowhere.ckpt\n");
    assert_eq!(o.status.code(), Some(2));
    let o = flowprior(&["denoise", "--config", "absent.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergent_training_exits_three_and_keeps_last_good_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(
        dir.path(),
        "train",
        "count = 300\nsteps = 200\nlearning_rate = 50\nwarmup_steps = 1\ncheck_every = 10\nbatch_size = 32\n",
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(load(dir.path().join("out/model_last_good.ckpt")).is_ok());
    assert!(!dir.path().join("out/model.ckpt").exists());
}

#[test]
fn zero_training_steps_save_the_initial_identity_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "train", "count = 100\nsteps = 0\nflow_steps = 3\n");
    assert!(o.status.success(), "{}", stderr(&o));
    let flow = load(dir.path().join("out/model.ckpt")).unwrap();
    let z = RngStream::new(1, 0).normal_vec(2);
    assert_eq!(max_abs_diff(&flow.forward(&z).unwrap().output, &z), 0.0);
    let log = std::fs::read_to_string(dir.path().join("out/train_log.csv")).unwrap();
    assert_eq!(log.trim(), "step,nll,grad_norm,clip_events");
}

#[test]
fn checkpoints_are_written_on_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(
        dir.path(),
        "train",
        "count = 200\nsteps = 20\nwarmup_steps = 5\nbatch_size = 16\ncheckpoint_every = 10\n",
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for step in [10, 20] {
        assert!(load(dir.path().join(format!("out/model_step{step}.ckpt"))).is_ok());
    }
    let log = std::fs::read_to_string(dir.path().join("out/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 21);
}

#[test]
fn zero_jacobian_points_write_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "jacobian", "n = 4\ncount = 0\n");
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/jacobian.csv")).unwrap();
    assert_eq!(csv, "point,index,sigma,log_sigma,sum_log_sigma,log_det\n");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "t.cfg", "n = 6\nm = 4\ntrials = 50\nseed = 1\n");
    let cfg = cfg.to_str().unwrap();
    let read = |out: &str| std::fs::read_to_string(dir.path().join(out).join("theory.csv")).unwrap();
    assert!(flowprior(&["theory", "--config", cfg, "--out", "a"], dir.path())
        .status
        .success());
    assert!(
        flowprior(&["theory", "--config", cfg, "--out", "b", "--seed", "1"], dir.path())
            .status
            .success()
    );
    assert!(
        flowprior(&["theory", "--config", cfg, "--out", "c", "--seed", "2"], dir.path())
            .status
            .success()
    );
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn sweep_csvs_have_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "denoise", "n = 3\nsamples = 4\ngamma = 0, 0.5, 1\n");
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/denoise.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("m_or_gamma,sample_id,seed,psnr_db,ssim,iters,status")
    );
    assert_eq!(lines.count(), 12);
}

#[test]
fn zero_threads_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowprior(&["theory", "--threads", "0"], dir.path());
    assert!(!o.status.success());
}
