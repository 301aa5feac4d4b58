mod common;

use std::fs;
use std::path::Path;

use common::{path_str, perturbed_model, stderr, stdout, tiny_config, wmsr};
use wmsr::data::{read_grid, write_grid, Manifest, Role};
use wmsr::numerics::Grid;
use wmsr::trainer::Checkpoint;

const SUBCOMMANDS: [&str; 7] = ["gen-data", "train", "eval", "sr", "fuse", "plot", "inspect"];

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

#[test]
fn help_matches_golden_files() {
    let out = wmsr(&["--help"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), golden("help.txt"));
    for cmd in SUBCOMMANDS {
        let out = wmsr(&[cmd, "--help"]);
        assert!(out.status.success());
        assert_eq!(stdout(&out), golden(&format!("help_{cmd}.txt")), "{cmd}");
    }
}

fn assert_failure(args: &[&str], code: i32, kind: &str) {
    let out = wmsr(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", stderr(&out));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{kind}]: ")), "{err}");
}

#[test]
fn failures_exit_with_one_line_and_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = path_str(dir.path());
    assert_failure(&[], 2, "usage");
    assert_failure(&["frobnicate"], 2, "usage");
    assert_failure(&["gen-data", "--out", d, "--fields", "2", "--size", "8by8"], 2, "usage");
    assert_failure(&["eval", "--ckpt", "/nonexistent.ckpt", "--data", d], 3, "data");

    let junk = dir.path().join("junk.sstg");
    fs::write(&junk, b"SSTGjunk").unwrap();
    assert_failure(&["plot", "--in", path_str(&junk), "--out", d], 3, "data");

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "channels = 7\n").unwrap();
    assert_failure(&["inspect", "--config", path_str(&cfg)], 2, "usage");

    let ckpt = dir.path().join("m.ckpt");
    Checkpoint::from_model(&perturbed_model(tiny_config(2), 1, 0.0)).save(&ckpt).unwrap();
    let odd = dir.path().join("odd.sstg");
    write_grid(&odd, &Grid::full([1, 1, 9, 10], 0.5), 0.0, 1.0).unwrap();
    let out = path_str(dir.path()).to_string() + "/o.sstg";
    assert_failure(&["sr", "--ckpt", path_str(&ckpt), "--in", path_str(&odd), "--scale", "2", "--out", &out], 3, "data");
    assert_failure(&["sr", "--ckpt", path_str(&ckpt), "--in", path_str(&odd), "--scale", "4", "--out", &out], 2, "usage");

    let bad_threads = std::process::Command::new(env!("CARGO_BIN_EXE_wmsr"))
        .args(["inspect", "--config", path_str(&cfg)])
        .env("WMSR_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn non_finite_training_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(wmsr(&["gen-data", "--out", path_str(&data), "--fields", "2", "--size", "24x24", "--seed", "1"]).status.success());
    let cfg = dir.path().join("train.cfg");
    fs::write(&cfg, "channels = 4\ngroups = 1\nblocks_per_group = 1\nssm_state = 2\npatch = 24\nepochs = 3\nlr = 1e300\n").unwrap();
    let run = dir.path().join("run");
    assert_failure(&["train", "--config", path_str(&cfg), "--data", path_str(&data), "--out", path_str(&run)], 4, "numeric");
    assert!(run.join("last.ckpt").exists());
}

/// Constant fields survive bicubic degradation unchanged, and a model whose
/// only nonzero output weight is a tail bias of the same constant reproduces
/// them exactly.
#[test]
fn sr_then_eval_on_identity_fixture_reports_capped_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let field = Grid::full([1, 1, 32, 32], 0.5);
    let mut manifest = Manifest::default();
    for (i, role) in [Role::Train, Role::Test].into_iter().enumerate() {
        let name = format!("c{i}.sstg");
        write_grid(data.join(&name), &field, 280.0, 290.0).unwrap();
        manifest.entries.push((role, name.into()));
    }
    manifest.write(&data).unwrap();

    let mut model = perturbed_model(tiny_config(2), 0, 0.0);
    let tail_b = model.params().find("tail.b").unwrap();
    model.params_mut().get_mut(tail_b).data_mut()[0] = 0.5;
    let ckpt = dir.path().join("m.ckpt");
    Checkpoint::from_model(&model).save(&ckpt).unwrap();

    let lr = dir.path().join("lr.sstg");
    write_grid(&lr, &Grid::full([1, 1, 16, 16], 0.5), 280.0, 290.0).unwrap();
    let sr = dir.path().join("sr.sstg");
    let out = wmsr(&["sr", "--ckpt", path_str(&ckpt), "--in", path_str(&lr), "--scale", "2", "--out", path_str(&sr)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let up = read_grid(&sr).unwrap();
    assert_eq!(up.range(), (280.0, 290.0));
    assert_eq!(up.grid(), &field);

    let out = wmsr(&["eval", "--ckpt", path_str(&ckpt), "--data", path_str(&data), "--patch", "32"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("2,test,model,1,100.000000,1.000000"), "{table}");
}

#[test]
fn fuse_then_sr_matches_unfused_sr() {
    let dir = tempfile::tempdir().unwrap();
    let model = perturbed_model(tiny_config(3), 9, 0.05);
    let ckpt = dir.path().join("m.ckpt");
    Checkpoint::from_model(&model).save(&ckpt).unwrap();
    let fused = dir.path().join("f.ckpt");
    let out = wmsr(&["fuse", "--ckpt", path_str(&ckpt), "--out", path_str(&fused)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let input = Grid::from_fn([1, 1, 12, 16], |[_, _, i, j]| 0.5 + 0.4 * ((i as f64) * 0.7).sin() * ((j as f64) * 0.3).cos());
    let lr = dir.path().join("lr.sstg");
    write_grid(&lr, &input, 0.0, 1.0).unwrap();
    let mut outputs = Vec::new();
    for (c, name) in [(&ckpt, "a.sstg"), (&fused, "b.sstg")] {
        let dst = dir.path().join(name);
        let out = wmsr(&["sr", "--ckpt", path_str(c), "--in", path_str(&lr), "--scale", "3", "--out", path_str(&dst)]);
        assert!(out.status.success(), "{}", stderr(&out));
        outputs.push(read_grid(&dst).unwrap().into_grid());
    }
    assert_eq!(outputs[0].shape(), [1, 1, 36, 48]);
    // Both files store f32 samples; compare the unrounded predictions too.
    assert!(outputs[0].max_abs_diff(&outputs[1]) <= 1e-7);
    let a = Checkpoint::load(&ckpt).unwrap().to_model().unwrap().predict(&input).unwrap();
    let b = Checkpoint::load(&fused).unwrap().to_model().unwrap().predict(&input).unwrap();
    assert!(a.max_abs_diff(&b) <= 1e-8);
}

#[test]
fn gen_data_and_plot_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let data = dir.path().join(run);
        let out = wmsr(&["gen-data", "--out", path_str(&data), "--fields", "5", "--size", "24x32", "--seed", "7"]);
        assert!(out.status.success());
        assert_eq!(stdout(&out).split_whitespace().take(3).collect::<Vec<_>>(), ["fields=5", "train=4", "test=1"]);
        let png = dir.path().join(format!("png_{run}"));
        let f0 = data.join("field_0000.sstg");
        let f1 = data.join("field_0001.sstg");
        let out = wmsr(&["plot", "--in", path_str(&f0), "--ref", path_str(&f1), "--out", path_str(&png)]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(stdout(&out).starts_with("max_abs_error="));
        bytes.push((
            fs::read(&f0).unwrap(),
            fs::read(png.join("field.png")).unwrap(),
            fs::read(png.join("error.png")).unwrap(),
        ));
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(&bytes[0].1[1..4], b"PNG");
}

#[test]
fn train_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(wmsr(&["gen-data", "--out", path_str(&data), "--fields", "5", "--size", "24x24", "--seed", "2"]).status.success());
    let cfg = dir.path().join("train.cfg");
    fs::write(&cfg, "channels = 4\ngroups = 1\nblocks_per_group = 1\nssm_state = 2\npatch = 24\nepochs = 2\nbatch_size = 2\n").unwrap();
    let run = dir.path().join("run");
    let out = wmsr(&["train", "--config", path_str(&cfg), "--data", path_str(&data), "--out", path_str(&run)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(stdout(&out).starts_with(&csv));
    let ck = Checkpoint::load(run.join("last.ckpt")).unwrap();
    assert_eq!(ck.optimizer.as_ref().map(|o| o.step), Some(2 * 2));
    assert!(run.join("best.ckpt").exists());
}
