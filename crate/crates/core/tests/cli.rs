mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use tabdpt::net::{ModelConfig, ModelParams};
use tabdpt::trainer::Checkpoint;

fn tabdpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabdpt")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_table(dir: &Path, table: &tabdpt::table_store::RawTable) -> String {
    let path = dir.join(format!("{}.csv", table.name));
    std::fs::write(&path, csv_text(table)).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn zero_step_training_writes_the_initial_model() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = desk_corpus(2);
    let paths: Vec<String> = corpus.iter().map(|t| write_table(tmp.path(), t)).collect();
    let targets: Vec<String> = corpus.iter().map(|t| t.target.clone().unwrap()).collect();
    let out = tmp.path().join("run");
    let o = tabdpt(&[
        "train",
        "--set",
        &format!("output_dir={}", out.display()),
        "--set",
        &format!("corpus={}", paths.join(",")),
        "--set",
        &format!("corpus_targets={}", targets.join(",")),
        "--set",
        "steps=0",
        "--set",
        "seed=5",
        "--set",
        "layers=1",
        "--set",
        "dim=8",
        "--set",
        "f_max=10",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = std::fs::read(out.join("checkpoint.bin")).unwrap();
    let ck = Checkpoint::read(&bytes[..]).unwrap();
    assert_eq!(ck.step, 0);
    assert_eq!(ck.params, ModelParams::<f32>::init(&ModelConfig::new(1, 8).with_f_max(10), 5).unwrap());
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("command = train\n"));
    assert!(manifest.contains("# output checkpoint.bin sha256 "));
}

#[test]
fn context_larger_than_training_rows_is_a_precondition_error() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = desk_corpus(2);
    let paths: Vec<String> = corpus.iter().map(|t| write_table(tmp.path(), t)).collect();
    let ck_dir = tmp.path().join("ck");
    let o = tabdpt(&[
        "train",
        "--set",
        &format!("output_dir={}", ck_dir.display()),
        "--set",
        &format!("corpus={}", paths.join(",")),
        "--set",
        "steps=0",
        "--set",
        "f_max=10",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let g = two_gaussians(60, 3, 4.0, 1);
    let train = g.permute_rows(&(0..40).collect::<Vec<_>>());
    let test = g.permute_rows(&(40..60).collect::<Vec<_>>());
    let mut train_t = train.clone();
    train_t.name = "small_train".into();
    let mut test_t = test.clone();
    test_t.name = "small_test".into();
    let out = tmp.path().join("pred");
    let o = tabdpt(&[
        "predict",
        "--set",
        &format!("output_dir={}", out.display()),
        "--set",
        &format!("checkpoint={}", ck_dir.join("checkpoint.bin").display()),
        "--set",
        &format!("train={}", write_table(tmp.path(), &train_t)),
        "--set",
        &format!("test={}", write_table(tmp.path(), &test_t)),
        "--set",
        "target=label",
        "--set",
        "context_size=41",
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.starts_with("error[precondition]:") && err.contains("41"), "{err}");
    assert!(!out.exists(), "failed run left outputs behind");
}

#[test]
fn scaling_fit_recovers_a_noiseless_surface() {
    let tmp = tempfile::tempdir().unwrap();
    let axis = [1.0, 10.0, 100.0, 1_000.0, 10_000.0f64];
    let mut text = String::from("P,D,loss\n");
    for p in axis {
        for d in axis {
            text.push_str(&format!("{p},{d},{}\n", 2.0 * p.powf(-0.42) + 1.5 * d.powf(-0.39) + 0.3));
        }
    }
    let points = tmp.path().join("points.csv");
    std::fs::write(&points, text).unwrap();
    let out = tmp.path().join("fit");
    let config = tmp.path().join("fit.conf");
    std::fs::write(&config, format!("# scaling run\noutput_dir = {}\npoints = {}\n", out.display(), points.display())).unwrap();
    let o = tabdpt(&["scaling-fit", "-c", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit = std::fs::read_to_string(out.join("fit.csv")).unwrap();
    let mut lines = fit.lines();
    assert_eq!(lines.next(), Some("A,B_coef,E_irr,alpha,beta"));
    let got: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    for (g, w) in got.iter().zip([2.0, 1.5, 0.3, 0.42, 0.39]) {
        assert!((g / w - 1.0).abs() < 0.05, "{got:?}");
    }
    let excess = std::fs::read_to_string(out.join("excess.csv")).unwrap();
    assert_eq!(excess.lines().count(), 26);
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = tabdpt(&["scaling-fit", "--set", &format!("output_dir={}", out.display()), "--set", "points=p.csv", "--set", "alpha=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[config]:"), "{}", stderr(&o));
    let o = tabdpt(&["scaling-fit", "--set", "points=p.csv"]);
    assert_eq!(o.status.code(), Some(2), "missing output_dir: {}", stderr(&o));
    let o = tabdpt(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
    let o = tabdpt(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn missing_input_file_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = tabdpt(&[
        "scaling-fit",
        "--set",
        &format!("output_dir={}", out.display()),
        "--set",
        &format!("points={}", tmp.path().join("absent.csv").display()),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[io]:"), "{}", stderr(&o));
}

#[test]
fn contamination_report_lists_the_copy() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = tabdpt::seeded_rng(4);
    let a = linear("train_a", 300, 4, 0.1, &mut rng);
    let b = blobs("train_b", 200, 3, 3, 1.0, &mut rng);
    let mut copy = a.clone();
    copy.name = "eval_copy".into();
    let fresh = moons("eval_fresh", 250, &mut rng);
    let out = tmp.path().join("contam");
    let o = tabdpt(&[
        "contam-check",
        "--set",
        &format!("output_dir={}", out.display()),
        "--set",
        &format!("train_tables={},{}", write_table(tmp.path(), &a), write_table(tmp.path(), &b)),
        "--set",
        &format!("eval_tables={},{}", write_table(tmp.path(), &copy), write_table(tmp.path(), &fresh)),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{report}");
    assert!(rows[0].starts_with("train_a,eval_copy,") && rows[0].contains("hash"), "{report}");
}
