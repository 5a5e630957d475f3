use std::path::Path;
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_spectrack");

const SMALL: [&str; 10] = [
    "--set",
    "synth_streams=40",
    "--set",
    "synth_tokens=48",
    "--set",
    "epochs=3",
    "--set",
    "window=16",
    "--set",
    "hidden=8",
];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(SMALL).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path) -> String {
    let corpus = dir.join("corpus").display().to_string();
    ok(&["synth", "--out", &corpus]);
    corpus
}

fn error_code(out: &Output) -> (i32, serde_json::Value) {
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    (out.status.code().unwrap(), err["error"].clone())
}

#[test]
fn detect_on_features_matches_detect_on_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let run_dir = dir.path().join("run").display().to_string();
    ok(&["train", "--data", &corpus, "--out", &run_dir]);
    let model = format!("{run_dir}/model.bin");
    let dump = std::fs::read_dir(format!("{corpus}/test"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "bin"))
        .unwrap();
    let dump = dump.display().to_string();
    let feat_dir = dir.path().join("feat").display().to_string();
    ok(&["features", "--out", &feat_dir, &dump]);
    let stem = Path::new(&dump)
        .file_stem()
        .unwrap()
        .to_str()
        .unwrap()
        .to_owned();
    let csv = format!("{feat_dir}/{stem}.features.csv");

    let direct = ok(&["detect", "--model", &model, &dump]).stdout;
    let via_csv = ok(&["detect", "--features", "--model", &model, &csv]).stdout;
    assert_eq!(
        String::from_utf8_lossy(&direct),
        String::from_utf8_lossy(&via_csv)
    );
    let lines: Vec<serde_json::Value> = direct
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 48);
    assert_eq!(lines[0]["warm_up"], true);
    assert_eq!(lines[15]["warm_up"], false);

    let mut child = Command::new(BIN)
        .args(SMALL)
        .args(["detect", "--model", &model, "-"])
        .stdin(std::fs::File::open(&dump).unwrap())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let piped = child.wait_with_output_ok();
    let expected = String::from_utf8_lossy(&direct).replace(&format!("\"{stem}\""), "\"stdin\"");
    assert_eq!(piped, expected);
}

trait WaitOk {
    fn wait_with_output_ok(&mut self) -> String;
}

impl WaitOk for std::process::Child {
    fn wait_with_output_ok(&mut self) -> String {
        let mut s = String::new();
        use std::io::Read;
        self.stdout.take().unwrap().read_to_string(&mut s).unwrap();
        assert!(self.wait().unwrap().success());
        s
    }
}

#[test]
fn training_is_reproducible_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let a = dir.path().join("a").display().to_string();
    let b = dir.path().join("b").display().to_string();
    ok(&["--jobs", "1", "train", "--data", &corpus, "--out", &a]);
    ok(&["--jobs", "3", "train", "--data", &corpus, "--out", &b]);
    let read = |d: &str| std::fs::read(format!("{d}/model.bin")).unwrap();
    assert_eq!(read(&a), read(&b));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(format!("{a}/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert!(manifest["outputs"][0]["sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn eval_writes_report_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let run_dir = dir.path().join("run").display().to_string();
    ok(&["train", "--data", &corpus, "--out", &run_dir]);
    let eval_dir = dir.path().join("eval").display().to_string();
    let out = ok(&[
        "eval",
        "--data",
        &corpus,
        "--model",
        &format!("{run_dir}/model.bin"),
        "--out",
        &eval_dir,
    ]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["auroc"].as_f64().unwrap() >= 0.0);
    for f in [
        "scores.csv",
        "roc.csv",
        "report.json",
        "runtime.json",
        "roc.svg",
        "run_manifest.json",
    ] {
        assert!(Path::new(&eval_dir).join(f).is_file(), "{f}");
    }
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let out = run(&["train", "--set", "window=0", "--out", "/tmp"]);
    let (code, err) = error_code(&out);
    assert_eq!(code, 2);
    assert_eq!(err["kind"], "config");

    let out = run(&["train", "--set", "no_such_key=1", "--out", "/tmp"]);
    assert_eq!(error_code(&out).0, 2);

    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["train", "--out", &dir.path().display().to_string()])
        .env_remove("SPECTRACK_DATA_DIR")
        .output()
        .unwrap();
    assert_eq!(error_code(&out).0, 2);
}

#[test]
fn data_errors_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"EGTK\x01").unwrap();
    let model = dir.path().join("model.bin");
    std::fs::write(&model, b"not a model").unwrap();
    let out = run(&[
        "detect",
        "--model",
        &model.display().to_string(),
        &bad.display().to_string(),
    ]);
    let (code, err) = error_code(&out);
    assert_eq!(code, 3);
    assert_eq!(err["kind"], "data");

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = run(&[
        "train",
        "--data",
        &empty.display().to_string(),
        "--out",
        &dir.path().join("o").display().to_string(),
    ]);
    assert_eq!(error_code(&out).0, 3);
}

#[test]
fn data_dir_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let out = Command::new(BIN)
        .args(SMALL)
        .args([
            "train",
            "--out",
            &dir.path().join("run").display().to_string(),
        ])
        .env("SPECTRACK_DATA_DIR", &corpus)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
