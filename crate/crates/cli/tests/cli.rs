use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mhssmamba::data::load_cube;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhssmamba"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Exit code plus the rule that an error line never comes with success.
fn code(o: &Output) -> i32 {
    let code = o.status.code().expect("exited normally");
    if stderr(o).lines().any(|l| l.starts_with("error")) {
        assert_ne!(code, 0, "error printed but exit 0:\n{}", stderr(o));
    }
    code
}

fn hash_of(out: &str, file: &str) -> String {
    out.lines()
        .find(|l| l.starts_with("sha256 ") && l.ends_with(file))
        .unwrap_or_else(|| panic!("no hash for {file} in\n{out}"))
        .split_whitespace()
        .nth(1)
        .unwrap()
        .to_string()
}

fn pnm_header(bytes: &[u8]) -> (String, usize, usize) {
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(32)]).into_owned();
    let mut it = text.split_whitespace();
    let magic = it.next().unwrap().to_string();
    let w = it.next().unwrap().parse().unwrap();
    let h = it.next().unwrap().parse().unwrap();
    (magic, w, h)
}

#[test]
fn synth_defaults_are_loadable_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(dir.path(), &["synth", "--out", "a.hsc"]);
    let b = run(dir.path(), &["synth", "--out", "b.hsc"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0);
    assert_eq!(hash_of(&stdout(&a), "a.hsc"), hash_of(&stdout(&b), "b.hsc"));
    let cube = load_cube(dir.path().join("a.hsc")).unwrap();
    assert_eq!(
        (cube.height(), cube.width(), cube.bands(), cube.num_classes()),
        (32, 32, 30, 3)
    );

    let c = run(dir.path(), &["synth", "--seed", "1", "--out", "c.hsc"]);
    assert_ne!(hash_of(&stdout(&a), "a.hsc"), hash_of(&stdout(&c), "c.hsc"));
}

#[test]
fn synth_rejects_a_single_class() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["synth", "--classes", "1", "--out", "x.hsc"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("classes"), "{}", stderr(&o));
    assert!(!dir.path().join("x.hsc").exists());
}

#[test]
fn synth_to_unwritable_path_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["synth", "--out", "missing/dir/x.hsc"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "# typo below\ntrain.epoch = 3\n").unwrap();
    let o = run(dir.path(), &["train", "--config", "run.cfg"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.epoch"), "{}", stderr(&o));
}

#[test]
fn missing_or_corrupt_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("junk.hsc"), b"not a cube").unwrap();
    fs::write(dir.path().join("run.cfg"), "data.path = junk.hsc\n").unwrap();
    let o = run(dir.path(), &["train", "--config", "run.cfg"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("offset 0"), "{}", stderr(&o));

    fs::write(dir.path().join("ok.cfg"), "").unwrap();
    let o = run(dir.path(), &["eval", "--config", "ok.cfg", "--checkpoint", "none.ckpt"]);
    assert_eq!(code(&o), 3);
}

/// Small enough to train in a few seconds.
const TINY: &str = "\
synth.height = 12
synth.width = 12
synth.bands = 8
patch.size = 2
model.embed_dim = 8
model.heads = 2
model.state_dim = 8
train.epochs = 3
train.batch_size = 16
output.dir = out
";

#[test]
fn eval_with_mismatched_checkpoint_names_both_values() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    let o = run(dir.path(), &["train", "--config", "tiny.cfg"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let bands = TINY.replace("synth.bands = 8", "synth.bands = 9");
    fs::write(dir.path().join("bands.cfg"), bands).unwrap();
    for cmd in ["eval", "predict"] {
        let mut args = vec![cmd, "--config", "bands.cfg", "--checkpoint", "out/model.ckpt"];
        if cmd == "predict" {
            args.extend(["--out-map", "map"]);
        }
        let o = run(dir.path(), &args);
        assert_eq!(code(&o), 2, "{cmd}");
        let err = stderr(&o);
        assert!(err.contains('8') && err.contains('9') && err.contains("bands"), "{err}");
    }

    let classes = format!("{TINY}synth.classes = 4\n");
    fs::write(dir.path().join("classes.cfg"), classes).unwrap();
    let o = run(
        dir.path(),
        &["eval", "--config", "classes.cfg", "--checkpoint", "out/model.ckpt"],
    );
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(
        err.contains('3') && err.contains('4') && err.contains("classes"),
        "{err}"
    );
}

#[test]
fn train_log_has_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    assert_eq!(code(&run(dir.path(), &["train", "--config", "tiny.cfg"])), 0);
    let log = fs::read_to_string(dir.path().join("out/train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_oa,seconds");
    assert_eq!(lines.len(), 4);
    for (i, row) in lines[1..].iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 4);
        assert_eq!(cols[0], (i + 1).to_string());
        assert!(cols[1].parse::<f64>().unwrap() > 0.0);
        assert!((0.0..=1.0).contains(&cols[2].parse::<f64>().unwrap()));
        assert_eq!(cols[3], "");
    }

    fs::write(
        dir.path().join("timed.cfg"),
        format!("{TINY}output.log_seconds = true\n"),
    )
    .unwrap();
    assert_eq!(code(&run(dir.path(), &["train", "--config", "timed.cfg"])), 0);
    let log = fs::read_to_string(dir.path().join("out/train_log.csv")).unwrap();
    let secs = log.lines().nth(1).unwrap().split(',').nth(3).unwrap();
    assert!(secs.parse::<f64>().unwrap() >= 0.0);
}

#[test]
fn end_to_end_on_synthetic_defaults() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["synth", "--out", "cube.hsc"])), 0);
    let cfg = "data.path = cube.hsc\ntrain.batch_size = 64\n";
    fs::write(dir.path().join("run.cfg"), cfg).unwrap();
    fs::write(dir.path().join("again.cfg"), format!("{cfg}output.dir = again\n")).unwrap();

    let first = run(dir.path(), &["train", "--config", "run.cfg"]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let second = run(dir.path(), &["train", "--config", "again.cfg"]);
    assert_eq!(code(&second), 0);
    for file in ["train_log.csv", "model.ckpt"] {
        assert_eq!(
            hash_of(&stdout(&first), file),
            hash_of(&stdout(&second), file),
            "{file}"
        );
    }

    let eval = run(
        dir.path(),
        &[
            "eval",
            "--config",
            "run.cfg",
            "--checkpoint",
            "run/model.ckpt",
            "--split",
            "test",
        ],
    );
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    let report = stdout(&eval);
    assert!(report.contains("recall"));
    let oa: f64 = report
        .lines()
        .find(|l| l.starts_with("OA"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();
    assert!(oa >= 95.0, "test OA {oa}%\n{report}");

    let predict = run(
        dir.path(),
        &[
            "predict",
            "--config",
            "run.cfg",
            "--checkpoint",
            "run/model.ckpt",
            "--out-map",
            "map",
        ],
    );
    assert_eq!(code(&predict), 0, "{}", stderr(&predict));
    let pgm = fs::read(dir.path().join("map.pgm")).unwrap();
    let ppm = fs::read(dir.path().join("map.ppm")).unwrap();
    assert_eq!(pnm_header(&pgm), ("P5".to_string(), 32, 32));
    assert_eq!(pnm_header(&ppm), ("P6".to_string(), 32, 32));
    let pixels = &pgm[pgm.len() - 32 * 32..];
    assert!(pixels.iter().all(|&l| (1..=3).contains(&l)));
    assert_eq!(ppm.len() - 32 * 32 * 3, "P6\n32 32\n255\n".len());
}

#[test]
fn gradcheck_passes_for_three_seeds() {
    let dir = tempfile::tempdir().unwrap();
    for seed in ["0", "1", "2"] {
        let o = run(dir.path(), &["gradcheck", "--seed", seed]);
        assert_eq!(code(&o), 0, "seed {seed}: {}", stdout(&o));
        let line = stdout(&o);
        let err = line
            .lines()
            .find(|l| l.starts_with("worst relative error"))
            .and_then(|l| l.split_whitespace().nth(3))
            .unwrap()
            .to_string();
        assert!(err.contains('e'), "not scientific: {err}");
        assert!(err.parse::<f64>().unwrap() < 1e-4);
    }
}

#[test]
fn gradcheck_reads_seed_from_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("gc.cfg"), "gradcheck.seed = 5\n").unwrap();
    let o = run(dir.path(), &["gradcheck", "--config", "gc.cfg"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("seed 5"));
}

#[test]
fn gradcheck_fails_on_a_corrupted_backward_rule() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gradcheck", "--corrupt-backward"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("relative error"));
}

fn slope(report: &str, stage: &str) -> (String, String) {
    let row = report
        .lines()
        .rev()
        .find(|l| l.starts_with(stage))
        .unwrap_or_else(|| panic!("no {stage} row"));
    let cols: Vec<&str> = row.split_whitespace().collect();
    (cols[1].to_string(), cols[4].to_string())
}

#[test]
fn profile_sweeps_report_the_expected_exponents() {
    let dir = tempfile::tempdir().unwrap();
    for (sweep, stage, want) in [
        ("L", "attention_score", "2.00"),
        ("state_dim", "ssm_transition", "2.00"),
        ("embed_dim", "token_projection", "1.00"),
        ("heads", "attention_score", "0.00"),
    ] {
        let o = run(dir.path(), &["profile", "--sweep", sweep]);
        assert_eq!(code(&o), 0);
        let report = stdout(&o);
        assert_eq!(
            slope(&report, stage),
            (want.to_string(), "ok".to_string()),
            "{sweep}\n{report}"
        );
        assert!(!report.contains("MISMATCH"), "{report}");
    }
    let o = run(dir.path(), &["profile", "--sweep", "depth"]);
    assert_eq!(code(&o), 2);
}
