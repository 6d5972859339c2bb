use std::path::Path;
use std::process::{Command, Output};

use stable_cli::checkpoint::Checkpoint;
use stable_cli::commands::{cmd_evaluate, cmd_pretrain, cmd_stable_train, gen_data};
use stable_cli::config::RunConfig;
use stable_cli::xyz::{format_dataset, parse_dataset, read_dataset};
use stable_core::trainer::qm_loss_value;

const SMALL: &str = r#"
seed = 3
[system]
kind = "dimer"
[data]
n_frames = 30
stride = 20
equilibration = 200
n_held_out = 2
[model]
n_basis = 12
hidden = [8, 8]
[pretrain]
lr = 3e-6
max_epochs = 10
[stable]
lr = 1e-3
qm_weight = 0.1
steps_per_epoch = 60
sample_every = 10
n_replicas = 4
batch_size = 6
f_min = 0.2
f_max = 0.3
max_cycles = 3
max_learning_epochs = 2
max_simulation_segments = 2
[criterion]
threshold = 0.05
[evaluate]
max_time = 0.2
sample_every = 10
"#;

fn stable(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_stable"))
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("terminated by a signal")
}

fn config(dir: &Path, text: &str) -> RunConfig {
    RunConfig::parse(text)
        .unwrap()
        .finalize(None, Some(dir.to_path_buf()))
        .unwrap()
}

#[test]
fn unknown_config_keys_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = stable(dir.path(), "[stable]\nlearning_rate = 1.0\n", &["gen-data"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn inconsistent_thresholds_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = stable(dir.path(), "[stable]\nf_min = 0.8\nf_max = 0.3\n", &["gen-data"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_inputs_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&stable(dir.path(), SMALL, &["pretrain"])), 2);
    assert_eq!(code(&stable(dir.path(), SMALL, &["--workers", "0", "gen-data"])), 2);
}

#[test]
fn diverging_pretraining_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("lr = 3e-6", "lr = 10.0");
    assert_eq!(code(&stable(dir.path(), &text, &["gen-data"])), 0);
    let o = stable(dir.path(), &text, &["pretrain"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn reweighting_below_the_sample_floor_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}[reweight]\ntemperature = 300.0\nmin_effective_samples = 1e9\n");
    assert_eq!(code(&stable(dir.path(), &text, &["gen-data"])), 0);
    let o = stable(dir.path(), &text, &["reweight"]);
    assert_eq!(code(&o), 4);
    assert!(!dir.path().join("out/reweight.json").exists());
}

#[test]
fn full_pipeline_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}[reweight]\ntemperature = 490.0\nmin_effective_samples = 1.0\n");
    for c in ["gen-data", "pretrain", "stable-train", "evaluate", "reweight"] {
        let o = stable(dir.path(), &text, &[c]);
        assert_eq!(code(&o), 0, "{c}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let out = dir.path().join("out");
    for f in [
        "dataset.xyz",
        "held_out.xyz",
        "pretrained.ckpt",
        "pretrain_loss.csv",
        "stable.ckpt",
        "metrics.csv",
        "reweight.json",
        "timing.log",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.lines().count() > 1);
}

#[test]
fn datasets_round_trip_through_xyz() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let written = gen_data(&cfg).unwrap();
    let (read, header) = read_dataset(&cfg.dataset_path(), &written.train.spec).unwrap();
    assert_eq!(read, written.train);
    assert!(!header.is_empty());
    let text = format_dataset(&read, &header);
    let (again, _) = parse_dataset(Path::new("memory"), &text, &read.spec).unwrap();
    assert_eq!(again, read);
}

#[test]
fn checkpoints_reload_to_the_same_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    gen_data(&cfg).unwrap();
    let out = cmd_pretrain(&cfg, None).unwrap();
    let ck = Checkpoint::load(&cfg.pretrained_path()).unwrap();
    assert_eq!(ck.model().unwrap().params(), out.model.params());
    assert_eq!(ck.meta.pretrain.as_ref(), Some(&out.progress));
}

#[test]
fn pretraining_resumes_to_the_same_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let whole = config(&dir.path().join("whole"), SMALL);
    gen_data(&whole).unwrap();
    let reference = cmd_pretrain(&whole, None).unwrap();

    let short = config(
        &dir.path().join("split"),
        &SMALL.replace("max_epochs = 10", "max_epochs = 4"),
    );
    gen_data(&short).unwrap();
    cmd_pretrain(&short, None).unwrap();
    let split = config(&dir.path().join("split"), SMALL);
    let resumed = cmd_pretrain(&split, Some(&split.pretrained_path())).unwrap();
    assert_eq!(resumed.model.params(), reference.model.params());
    assert_eq!(resumed.progress.losses, reference.progress.losses);
}

#[test]
fn training_resumes_from_the_saved_state() {
    let dir = tempfile::tempdir().unwrap();
    let whole = config(&dir.path().join("whole"), SMALL);
    gen_data(&whole).unwrap();
    cmd_pretrain(&whole, None).unwrap();
    let reference = cmd_stable_train(&whole, None, None).unwrap();
    assert!(reference.finished);

    let split = config(&dir.path().join("split"), SMALL);
    gen_data(&split).unwrap();
    cmd_pretrain(&split, None).unwrap();
    let first = cmd_stable_train(&split, None, Some(1)).unwrap();
    assert!(!first.finished);
    assert!(!split.trained_path().exists());

    // resume through the binary, as a user would
    std::fs::write(dir.path().join("split.toml"), SMALL).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_stable"))
        .arg("--config")
        .arg(dir.path().join("split.toml"))
        .arg("--out")
        .arg(&split.out)
        .arg("--resume")
        .arg(split.trainer_state_path())
        .arg("stable-train")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(split.trained_path()).unwrap(),
        std::fs::read(whole.trained_path()).unwrap()
    );
    assert_eq!(
        std::fs::read(split.out.join("metrics.csv")).unwrap(),
        std::fs::read(whole.out.join("metrics.csv")).unwrap()
    );
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            RunConfig::load(&path)
                .and_then(|c| c.finalize(None, None))
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 2);
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn run_logs_match_the_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    gen_data(&cfg).unwrap();
    cmd_pretrain(&cfg, None).unwrap();

    // pretraining loss curve ends at the loss of the saved model
    let losses = csv_rows(&dir.path().join("pretrain_loss.csv"));
    assert_eq!(losses.len(), cfg.pretrain.max_epochs);
    let last: f64 = losses.last().unwrap()[1].parse().unwrap();
    let data = read_dataset(&cfg.dataset_path(), &cfg.system.build().unwrap().spec)
        .unwrap()
        .0;
    let saved = Checkpoint::load(&cfg.pretrained_path()).unwrap().model().unwrap();
    let recomputed = qm_loss_value(
        &saved,
        &data.frames,
        &data.spec,
        cfg.pretrain.lambda_u,
        cfg.pretrain.lambda_f,
    )
    .unwrap();
    assert!((last - recomputed).abs() <= 1e-10 * recomputed.abs());

    // learning rates restart at lr each phase and decay by lr_decay per epoch
    cmd_stable_train(&cfg, None, None).unwrap();
    let rows = csv_rows(&dir.path().join("metrics.csv"));
    let mut prev: Option<(String, f64)> = None;
    for r in &rows {
        let lr: f64 = r[6].parse().unwrap();
        if r[1] == "learning" {
            assert_eq!(r[7].parse::<f64>().unwrap(), cfg.stable.qm_weight);
            let expected = match &prev {
                Some((cycle, p)) if *cycle == r[0] => p * cfg.stable.lr_decay,
                _ => cfg.stable.lr,
            };
            assert!((lr - expected).abs() <= 1e-15 * expected, "{lr} vs {expected}");
            prev = Some((r[0].clone(), lr));
        } else {
            assert!(r[7].is_empty());
        }
    }
    assert!(prev.is_some(), "no learning phase ran");

    // evaluation: one row per held-out replica and a monotone failure curve
    cmd_evaluate(&cfg, None).unwrap();
    let eval = dir.path().join("eval_stable");
    assert_eq!(csv_rows(&eval.join("stability.csv")).len(), cfg.data.n_held_out);
    let curve: Vec<f64> = csv_rows(&eval.join("unstable_fraction.csv"))
        .iter()
        .map(|r| r[1].parse().unwrap())
        .collect();
    assert!(curve.windows(2).all(|w| w[0] <= w[1]));
    let hofr = csv_rows(&eval.join("hofr.csv"));
    let spec = cfg.observables[0].spec().unwrap();
    for (r, x) in hofr.iter().zip(spec.bin_centers()) {
        assert_eq!(r[0].parse::<f64>().unwrap(), x);
    }
}

#[test]
fn pretraining_refuses_a_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    gen_data(&cfg).unwrap();
    let text = SMALL.replace("[model]", "[model]\nspecies = [\"O\"]");
    let o = stable(dir.path(), &text, &["pretrain"]);
    assert_eq!(code(&o), 2);
}
