use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evcseg::evnet::load_checkpoint;
use evcseg::nifti::{read_mask, read_nifti, read_probmap, write_nifti, write_probmap};
use evcseg::pipeline::{normalize_intensity, predict, Sidecar};
use evcseg::postproc::{label_components, Connectivity};
use evcseg::volume::{affine_from_rows, mask_to_native, preprocess, GridTarget};
use evcseg::{Affine, LabelMask, ProbMap, Volume};
use ndarray::Array3;

fn evcseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evcseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = evcseg(args);
    assert!(
        out.status.success(),
        "evcseg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Phantoms plus a toy checkpoint trained for `epochs`.
fn dataset(dir: &Path, n: usize, epochs: usize) -> PathBuf {
    let data = dir.join("data");
    ok(&["synth", "--n", &n.to_string(), "--size", "16", "--seed", "3", "--output", s(&data)]);
    let ckpt = dir.join("model.evc");
    ok(&["train", "--data", s(&data), "--output", s(&ckpt), "--toy", "--epochs", &epochs.to_string(), "--seed", "1"]);
    ckpt
}

#[test]
fn synth_is_deterministic_and_connected() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        ok(&["synth", "--n", "1", "--size", "16", "--seed", "9", "--output", s(&dir.path().join(run))]);
    }
    for sub in ["images/case_000.nii.gz", "masks/case_000.nii.gz"] {
        let a = std::fs::read(dir.path().join("a").join(sub)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(sub)).unwrap();
        assert_eq!(a, b, "{sub}");
    }
    assert_eq!(std::fs::read_dir(dir.path().join("a/images")).unwrap().count(), 1);
    let m = read_mask(dir.path().join("a/masks/case_000.nii.gz")).unwrap();
    assert_eq!(label_components(&m, 1, Connectivity::TwentySix).sizes.len(), 1);
}

#[test]
fn zero_epochs_writes_init_checkpoint_and_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dataset(dir.path(), 2, 0);
    let (params, cfg) = load_checkpoint(&ckpt, None).unwrap();
    assert_eq!(cfg, evcseg::evnet::EvNetConfig::toy());
    let init = evcseg::evnet::init_params(&cfg).unwrap();
    // stored as float32
    for ((_, _, a), (_, _, b)) in params.named().iter().zip(init.named().iter()) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(*x, f64::from(*y as f32));
        }
    }
    let log = std::fs::read_to_string(ckpt.with_extension("log.jsonl")).unwrap();
    assert!(log.is_empty());
}

#[test]
fn seeded_training_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--n", "3", "--size", "16", "--seed", "4", "--output", s(&data)]);
    let mut logs = Vec::new();
    for run in ["a", "b"] {
        let ckpt = dir.path().join(format!("{run}.evc"));
        ok(&["train", "--data", s(&data), "--output", s(&ckpt), "--toy", "--epochs", "2", "--seed", "5"]);
        logs.push((
            std::fs::read_to_string(ckpt.with_extension("log.jsonl")).unwrap(),
            std::fs::read(&ckpt).unwrap(),
        ));
    }
    assert_eq!(logs[0], logs[1]);
    assert_eq!(logs[0].0.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(logs[0].0.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 1);
    assert!(first["train_loss"].as_f64().unwrap().is_finite());
}

#[test]
fn unrefined_extract_is_network_argmax_in_native_space() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dataset(dir.path(), 2, 1);
    let input = dir.path().join("data/images/case_001.nii.gz");
    let out = dir.path().join("mask.nii.gz");
    let probs = dir.path().join("probs.nii.gz");
    ok(&[
        "extract", "--input", s(&input), "--output", s(&out), "--checkpoint", s(&ckpt),
        "--crf-iters", "0", "--no-cleanup", "--probs-out", s(&probs),
    ]);
    let written = read_mask(&out).unwrap();
    let image = read_nifti(&input).unwrap();
    assert_eq!(written.shape(), image.shape());

    // recompute the network output from scratch
    let (params, cfg) = load_checkpoint(&ckpt, None).unwrap();
    let (grid, prov) = preprocess(&image, &GridTarget::DESK).unwrap();
    let p = predict(&params, &cfg, &normalize_intensity(&grid).unwrap().0).unwrap();
    let expected = mask_to_native(&p.argmax_mask(*grid.affine()), &image, &prov).unwrap();
    assert_eq!(written.data(), expected.data());

    // the sidecar alone replays the inverse mapping
    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(format!("{}.json", s(&out))).unwrap()).unwrap();
    let (stored, affine) = read_probmap(&probs).unwrap();
    assert_eq!(stored.data(), p.data());
    assert!((affine - affine_from_rows(&sidecar.provenance.resized_affine)).abs().max() < 1e-5);
    let replay = mask_to_native(
        &stored.argmax_mask(affine_from_rows(&sidecar.provenance.resized_affine)),
        &image,
        &sidecar.provenance,
    )
    .unwrap();
    assert_eq!(replay.data(), written.data());
    assert_eq!(sidecar.config_hash, cfg.layout_hash());
    assert_eq!(sidecar.crf.iterations, 0);
}

#[test]
fn missing_checkpoint_is_named_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--n", "1", "--size", "16", "--output", s(&data)]);
    let missing = dir.path().join("absent.evc");
    let out = evcseg(&[
        "extract", "--input", s(&data.join("images/case_000.nii.gz")), "--output", s(&dir.path().join("m.nii")),
        "--checkpoint", s(&missing),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn incompatible_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dataset(dir.path(), 1, 0);
    let conf = dir.path().join("settings.conf");
    std::fs::write(&conf, "evnet.levels = 3\nevnet.convs_per_block = 1,2,2\n").unwrap();
    let out = evcseg(&[
        "extract", "--config", s(&conf), "--input", s(&dir.path().join("data/images/case_000.nii.gz")),
        "--output", s(&dir.path().join("m.nii")), "--checkpoint", s(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(evcseg(&["extract"]).status.code(), Some(2));
    assert_eq!(evcseg(&["refine", "--probs", "a", "--image", "b", "--output", "c", "--crf-backend", "fast"]).status.code(), Some(2));
    let conf = dir.path().join("bad.json");
    std::fs::write(&conf, r#"{"crf": {"no_such_key": 1}}"#).unwrap();
    let out = evcseg(&["--config", s(&conf), "synth", "--n", "1", "--size", "16", "--output", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn refine_without_pairwise_terms_is_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let n = 6;
    let fg = Array3::from_shape_fn((n, n, n), |(x, y, z)| ((x * 7 + y * 3 + z) % 10) as f64 / 9.5);
    let p = ProbMap::from_foreground(&fg).unwrap();
    let img = Volume::from_data(fg.clone());
    write_probmap(&p, &Affine::identity(), dir.path().join("p.nii.gz")).unwrap();
    write_nifti(&img, dir.path().join("i.nii.gz")).unwrap();
    let out = dir.path().join("r.nii.gz");
    ok(&[
        "refine", "--probs", s(&dir.path().join("p.nii.gz")), "--image", s(&dir.path().join("i.nii.gz")),
        "--output", s(&out), "--w-app", "0", "--w-smooth", "0", "--crf-backend", "brute",
    ]);
    let m = read_mask(&out).unwrap();
    let want = fg.mapv(|v| (v > 0.5) as u8);
    assert_eq!(m.data(), &want);
}

fn write_masks(dir: &Path, masks: &[(&str, LabelMask)]) {
    std::fs::create_dir_all(dir).unwrap();
    for (name, m) in masks {
        write_nifti(m, dir.join(name)).unwrap();
    }
}

#[test]
fn eval_reports_cases_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let line = |range: std::ops::Range<usize>| LabelMask::from_fn([10, 1, 1], Affine::identity(), move |p| range.contains(&p[0]));
    // |A| = 4, |B| = 6, |A ∩ B| = 3: dice 0.6
    write_masks(&dir.path().join("truth"), &[("a.nii", line(0..4)), ("b.nii", line(2..5)), ("c.nii", line(0..4))]);
    write_masks(&dir.path().join("pred"), &[("a.nii", line(1..7)), ("b.nii", line(2..5)), ("c.nii", line(0..0))]);
    let report = dir.path().join("report");
    ok(&["eval", "--pred", s(&dir.path().join("pred")), "--truth", s(&dir.path().join("truth")), "--output", s(&report)]);
    let cases: Vec<serde_json::Value> = std::fs::read_to_string(report.join("cases.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(cases.len(), 3);
    assert_eq!(cases[0]["case"], "a.nii");
    assert!((cases[0]["dice"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    assert!((cases[0]["jaccard"].as_f64().unwrap() - 3.0 / 7.0).abs() < 1e-12);
    assert_eq!(cases[1]["dice"], 1.0);
    assert_eq!(cases[1]["balanced_ahd"], 0.0);
    assert_eq!(cases[2]["balanced_ahd"], "inf");
    assert_eq!(cases[2]["empty_prediction"], true);
    let csv = std::fs::read_to_string(report.join("summary.csv")).unwrap();
    assert!(csv.starts_with("metric,mean,std,n,formatted\n"));
    assert!(csv.contains("balanced_ahd,inf,"));
}

#[test]
fn eval_identical_sets_give_unit_dice() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--n", "2", "--size", "16", "--output", s(&data)]);
    let report = dir.path().join("report");
    ok(&["eval", "--pred", s(&data.join("masks")), "--truth", s(&data.join("masks")), "--output", s(&report)]);
    let csv = std::fs::read_to_string(report.join("summary.csv")).unwrap();
    assert!(csv.contains("dice,1,0,2,1.0000 ± 0.0000"), "{csv}");
}

#[test]
fn eval_lists_unmatched_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = LabelMask::from_fn([3, 3, 3], Affine::identity(), |p| p[0] == 1);
    write_masks(&dir.path().join("truth"), &[("a.nii", m.clone()), ("b.nii", m.clone())]);
    write_masks(&dir.path().join("pred"), &[("a.nii", m.clone()), ("z.nii", m)]);
    let out = evcseg(&[
        "eval", "--pred", s(&dir.path().join("pred")), "--truth", s(&dir.path().join("truth")),
        "--output", s(&dir.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("z.nii") && err.contains("b.nii"), "{err}");
}
