mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use xshot::data::{load_corpus_dir, round_to_f32, synth_corpus, SynthSpec};
use xshot::generation::synthesize_target_set;
use xshot::pipeline::{load_generator, run_experiment, ExperimentConfig};
use xshot::numerics::RealArray;

fn xshot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xshot"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(cfg: &ExperimentConfig, path: &Path) {
    fs::write(path, cfg.to_toml_string().unwrap()).unwrap();
}

#[test]
fn make_data_is_reproducible_and_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = xshot(&["make-data", "--out", arg(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 4, "{names:?}");
    for name in &names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name:?}");
    }

    let loaded = load_corpus_dir(&a).unwrap();
    let direct = synth_corpus(&SynthSpec::default()).unwrap();
    assert_eq!(loaded.image(), &round_to_f32(direct.image()));
    assert_eq!(loaded.text(), &round_to_f32(direct.text()));
    assert_eq!(loaded.labels(), direct.labels());
    assert_eq!(loaded.class_attrs(), direct.class_attrs());
}

#[test]
fn cli_run_then_eval_reproduces_in_run_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::quick_config(&dir.path().join("runs"));
    let cfg_path = dir.path().join("quick.toml");
    write_config(&cfg, &cfg_path);

    let o = xshot(&["run", "--config", arg(&cfg_path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cell = cfg.output_dir.join("x1_seed0");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(cell.join("report.json")).unwrap()).unwrap();
    assert!(cell.join("timings.json").exists());
    assert!(cfg.output_dir.join("config.resolved.toml").exists());

    let eval_out = dir.path().join("eval.json");
    let ckpt = cell.join("projection.ckpt");
    let o = xshot(&["eval", "--checkpoint", arg(&ckpt), "--config", arg(&cfg_path), "--out", arg(&eval_out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval: serde_json::Value = serde_json::from_slice(&fs::read(&eval_out).unwrap()).unwrap();
    for domain in ["target", "source"] {
        for dir in ["img2txt", "txt2img"] {
            let a = report[domain][dir]["map"].as_f64().unwrap();
            let b = eval[domain][dir]["map"].as_f64().unwrap();
            assert!((a - b).abs() < 1e-12, "{domain} {dir}: {a} vs {b}");
        }
    }
    assert_eq!(eval["split"], report_split(&cell));
}

fn report_split(cell: &Path) -> serde_json::Value {
    let (_, ctx) = load_generator(&cell.join("image_generator.ckpt")).unwrap();
    serde_json::to_value(ctx.split).unwrap()
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::quick_config(&dir.path().join("runs"));
    let cfg_path = dir.path().join("quick.toml");
    write_config(&cfg, &cfg_path);
    run_experiment(&cfg).unwrap();
    let good = fs::read(cfg.output_dir.join("x1_seed0/projection.ckpt")).unwrap();

    let mut wrong_version = good.clone();
    wrong_version[8] ^= 0x7f;
    let mut wrong_magic = good.clone();
    wrong_magic[0] = b'Z';
    let cases = [
        ("truncated", good[..good.len() - 3].to_vec()),
        ("version", wrong_version),
        ("magic", wrong_magic),
    ];
    for (name, bytes) in cases {
        let path = dir.path().join(format!("{name}.ckpt"));
        fs::write(&path, bytes).unwrap();
        let o = xshot(&["eval", "--checkpoint", arg(&path), "--config", arg(&cfg_path)]);
        assert_eq!(o.status.code(), Some(2), "{name}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"), "{name}");
    }
}

#[test]
fn failed_cells_give_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::quick_config(&dir.path().join("runs"));
    cfg.x_shots = vec![1, 60];
    let cfg_path = dir.path().join("grid.toml");
    write_config(&cfg, &cfg_path);
    let o = xshot(&["run", "--config", arg(&cfg_path)]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let run: serde_json::Value = serde_json::from_slice(&fs::read(cfg.output_dir.join("run.json")).unwrap()).unwrap();
    let errors: Vec<bool> = run["cells"].as_array().unwrap().iter().map(|c| c["error"].is_null()).collect();
    assert_eq!(errors, vec![true, false]);
}

#[test]
fn projection_stage_leaves_generators_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::quick_config(dir.path());
    let record = run_experiment(&cfg).unwrap();
    let cell = record.cell(1, 0).unwrap();
    let sums = cell.stage1_checksums.as_ref().unwrap();
    for (before, after) in sums {
        assert_eq!(before, after);
    }
    let (img, _) = load_generator(cell.checkpoints.image_generator.as_ref().unwrap()).unwrap();
    assert_eq!(img.param_checksum(), sums[0].1);
}

#[test]
fn baseline_without_generation_or_gate_completes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::quick_config(dir.path());
    cfg.ablation.no_generation = true;
    cfg.ablation.no_gate = true;
    let record = run_experiment(&cfg).unwrap();
    let cell = record.cell(1, 0).unwrap();
    assert!(cell.error.is_none(), "{:?}", cell.error);
    assert_eq!(cell.n_pseudo, 0);
    assert!(cell.image_gen_curves.is_none() && cell.checkpoints.image_generator.is_none());
    assert!(cell.target_avg().unwrap() > 0.0);
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    RealArray::dot(a, b) / (RealArray::norm(a) * RealArray::norm(b))
}

/// Few-shot pseudo features sit nearest their own class prototype, and
/// turning the gate off does not help the zero-shot cell.
#[test]
fn preset_pseudo_features_and_gate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("synthetic").unwrap();
    cfg.x_shots = vec![0, 5];
    cfg.seeds = vec![0];
    cfg.output_dir = dir.path().join("gated");
    let gated = run_experiment(&cfg).unwrap();
    let corpus = cfg.load_corpus().unwrap();

    let cell = dir.path().join("gated/x5_seed0");
    let (image, ctx) = load_generator(&cell.join("image_generator.ckpt")).unwrap();
    let (text, _) = load_generator(&cell.join("text_generator.ckpt")).unwrap();
    let pseudo = synthesize_target_set(&image, &text, &ctx.split.target_classes, corpus.class_attrs(), 30, 0).unwrap();
    for &c in &ctx.split.target_classes {
        let rows: Vec<usize> = (0..pseudo.len()).filter(|&i| pseudo.labels()[i] == c).collect();
        let mean_cos = |proto: &[f64]| {
            rows.iter().map(|&i| cosine(pseudo.image().row(i), proto)).sum::<f64>() / rows.len() as f64
        };
        let own = mean_cos(corpus.attr(c).unwrap());
        for (&other, proto) in corpus.class_attrs() {
            if other != c {
                let sim = mean_cos(proto);
                assert!(own > sim, "class {c}: own {own} vs class {other} {sim}");
            }
        }
    }

    cfg.x_shots = vec![0];
    cfg.ablation.no_gate = true;
    cfg.output_dir = dir.path().join("gate_off");
    let gate_off = run_experiment(&cfg).unwrap();
    let (on, off) = (
        gated.cell(0, 0).unwrap().target_avg().unwrap(),
        gate_off.cell(0, 0).unwrap().target_avg().unwrap(),
    );
    assert!(off <= on, "gate off {off} vs gated {on}");
}
