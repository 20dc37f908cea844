use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn voxdep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxdep")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const TINY: &str = r#"
[corpus]
speakers = 6
utterances = 12
depressed_fraction = 0.5

[vowel]
channels = 8
max_epochs = 2
batch_size = 16

[vowel_data]
max_train_segments = 60
max_dev_segments = 30

[depression]
max_epochs = 3
"#;

#[test]
fn stage_without_its_inputs_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = voxdep(&["train-depression", "--out", out]);
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(msg.contains("augment"), "{msg}");
}

#[test]
fn config_validation_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[augment]\np = 30\nr = 21\n\n[split]\ndev_fraction = 0.8\ntest_fraction = 0.5\n").unwrap();
    let o = voxdep(&["config", "--config", path.to_str().unwrap()]);
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(msg.contains("augment.p + augment.r"), "{msg}");
    assert!(msg.contains("split fractions"), "{msg}");
}

#[test]
fn printed_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = voxdep(&["config", "--seed", "7", "--n", "21", "--saliency", "emb"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let path = dir.path().join("c.toml");
    fs::write(&path, &first.stdout).unwrap();
    let second = voxdep(&["config", "--config", path.to_str().unwrap()]);
    assert!(second.status.success(), "{}", stderr(&second));
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    assert!(text.contains("seed = 7"));
    assert!(text.contains("emb-norm"));
}

#[test]
fn pipeline_run_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("run");
    let mut trees = Vec::new();
    for kept in ["first", "second"] {
        let o = voxdep(&[
            "pipeline",
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--n",
            "10",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("macro-F1"), "{stdout}");
        trees.push(tree(&out));
        fs::rename(&out, dir.path().join(kept)).unwrap();
    }
    let names: Vec<_> = trees[0].iter().map(|(p, _)| p.clone()).collect();
    for want in [
        "vowel/model.weights.bin",
        "depression/model.weights.bin",
        "augment/augmented.bin",
        "evaluate/predictions.jsonl",
        "evaluate/report.json",
        "correlate/correlations.json",
    ] {
        assert!(names.iter().any(|p| p == Path::new(want)), "{want} missing");
    }
    assert_eq!(names, trees[1].iter().map(|(p, _)| p.clone()).collect::<Vec<_>>());
    for ((p, a), (_, b)) in trees[0].iter().zip(&trees[1]) {
        assert!(a == b, "{} differs", p.display());
    }

    let a = dir.path().join("first/evaluate");
    let o = voxdep(&["compare", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("no discordant pairs"));
}
