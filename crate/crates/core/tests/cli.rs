use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cppo::experiment::{EXIT_CONFIG, EXIT_OK};

const CONFIG: &str = r#"
name = "cli"
output_dir = "out"
seeds = [1, 2, 3]
variants = ["direct-iid", "full-cppo"]
ablation_variants = ["full-cppo", "no-gate"]

[suite]
problem_count = 24

[pipeline]
t_sft = 20
t_wu = 10
t_cppo = 30
batch_size = 8

[eval]
k_list = [2, 4]
samples_per_problem = 2

[bootstrap]
resamples = 200

[decon]
train = "train.jsonl"
eval = "eval.jsonl"
"#;

fn cppo(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cppo"))
        .args(["run"])
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn malformed_configs_exit_with_the_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seedz = [1]\n");
    let out = cppo(&["train"], &cfg);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seedz"));

    let missing = tmp.path().join("absent.toml");
    assert_eq!(cppo(&["train"], &missing).status.code(), Some(EXIT_CONFIG));

    let cfg = write_config(tmp.path(), "[pipeline]\nk = 4\n[pipeline.optim]\nk = 3\n");
    assert_eq!(cppo(&["train"], &cfg).status.code(), Some(EXIT_CONFIG));
}

#[test]
fn every_command_runs_and_the_report_only_marks_with_a_bootstrap() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    fs::write(
        tmp.path().join("eval.jsonl"),
        "{\"id\":\"eval:1\",\"source\":\"eval\",\"text\":\"Find the shortest path in a grid with walls.\"}\n",
    )
    .unwrap();
    fs::write(
        tmp.path().join("train.jsonl"),
        "{\"id\":\"train:1\",\"source\":\"web\",\"text\":\"FIND the shortest path in a grid   with walls.\"}\n\
         {\"id\":\"train:2\",\"source\":\"web\",\"text\":\"Sum the digits of a number.\"}\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("out");

    for cmd in ["train", "eval", "sweep", "ablate", "decon"] {
        let o = cppo(&[cmd], &cfg);
        assert_eq!(o.status.code(), Some(EXIT_OK), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(out_dir.join("eval/summary.csv").exists());
    assert!(out_dir.join("sweep/sweep.csv").exists());
    assert!(out_dir.join("ablate/ablation.csv").exists());
    let clean = fs::read_to_string(out_dir.join("decon/train_clean.jsonl")).unwrap();
    assert!(clean.contains("train:2") && !clean.contains("train:1"));

    assert_eq!(cppo(&["report"], &cfg).status.code(), Some(EXIT_OK));
    let unmarked = fs::read_to_string(out_dir.join("report/table.csv")).unwrap();
    assert!(!unmarked.contains('†'));
    assert!(unmarked.contains("n/a"));

    assert_eq!(cppo(&["bootstrap"], &cfg).status.code(), Some(EXIT_OK));
    assert!(out_dir.join("bootstrap/significance_k4.json").exists());
    let rerun = cppo(&["report"], &cfg);
    assert_eq!(rerun.status.code(), Some(EXIT_CONFIG), "existing output needs --overwrite");
    assert_eq!(cppo(&["report", "--overwrite"], &cfg).status.code(), Some(EXIT_OK));
    let first = fs::read(out_dir.join("report/table.csv")).unwrap();
    assert!(String::from_utf8_lossy(&first).contains("p="));
    assert_eq!(cppo(&["report", "--overwrite"], &cfg).status.code(), Some(EXIT_OK));
    assert_eq!(first, fs::read(out_dir.join("report/table.csv")).unwrap());
}

#[test]
fn worker_count_must_be_a_number() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = Command::new(env!("CARGO_BIN_EXE_cppo"))
        .args(["run", "train", "--config"])
        .arg(&cfg)
        .env("CPPO_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn worker_count_does_not_change_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let mut digests = Vec::new();
    for workers in ["1", "4"] {
        let o = Command::new(env!("CARGO_BIN_EXE_cppo"))
            .args(["run", "train", "--overwrite", "--config"])
            .arg(&cfg)
            .env("CPPO_WORKERS", workers)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(EXIT_OK));
        let dir = tmp.path().join("out/train/full-cppo/seed-2");
        digests.push((fs::read(dir.join("checkpoint.json")).unwrap(), fs::read(dir.join("steps.csv")).unwrap()));
    }
    assert!(digests[0] == digests[1]);
}
