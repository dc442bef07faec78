use std::fs;
use std::process::{Command, Output};

use bitserial_cli::report::BenchReport;

fn bitserial(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitserial"))
        .args(args)
        .env_remove("BITSERIAL_MACHINE_TAG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verify_passes() {
    let o = bitserial(&["verify", "--cases", "30", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn bench_conv_writes_parseable_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("conv.csv");
    let o = bitserial(&[
        "bench-conv",
        "--layers",
        "12",
        "--precision",
        "w1a1,w2a2",
        "--scale",
        "16",
        "--repeats",
        "1",
        "--baseline",
        "int8",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("in-repo"));
    let report = BenchReport::parse_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(report.rows().len(), 2);
    assert!(report.all_ok());
    assert_eq!(report.rows()[0].precision, "w1a1");
}

#[test]
fn tune_then_show_config() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("tuned.txt");
    let store = store.to_str().unwrap();
    let common = [
        "--layers",
        "12",
        "--precision",
        "w1a2",
        "--scale",
        "16",
        "--store",
        store,
    ];

    let mut args = vec![
        "tune",
        "--budget",
        "4",
        "--repeats",
        "1",
        "--machine",
        "box-a",
    ];
    args.extend(common);
    let o = bitserial(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let saved = fs::read_to_string(store).unwrap();
    assert!(
        saved.contains("conv-direct|") && saved.contains("|box-a\t"),
        "{saved}"
    );

    let mut args = vec!["show-config", "--machine", "box-a"];
    args.extend(common);
    let shown = stdout(&bitserial(&args));
    assert!(
        shown.contains("min") && !shown.contains("default"),
        "{shown}"
    );

    // the environment variable selects the machine tag too
    let mut args = vec!["show-config"];
    args.extend(common);
    let o = Command::new(env!("CARGO_BIN_EXE_bitserial"))
        .args(&args)
        .env("BITSERIAL_MACHINE_TAG", "box-b")
        .output()
        .unwrap();
    assert!(stdout(&o).contains("tuned on box-a"), "{}", stdout(&o));
}

#[test]
fn tune_without_store_is_an_error() {
    let o = bitserial(&["tune", "--layers", "12", "--scale", "16"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_arguments_are_rejected() {
    assert!(!bitserial(&["bench-conv", "--layers", "1"]).status.success());
    assert!(!bitserial(&["bench-conv", "--precision", "w9a1"])
        .status
        .success());
    assert!(!bitserial(&["bench-conv", "--scale", "3", "--layers", "9"])
        .status
        .success());
}
