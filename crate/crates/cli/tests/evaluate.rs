use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use phd_cli::evaluate::{cmd_evaluate, with_skeleton_variants, EvalError, EvalJob};
use phd_eval::{evaluate_pair, write_mask, BinarizationPolicy, BinaryMask, MetricDescriptor};
use phd_testkit::random_strokes;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn job(gt: &Path, preds: &[(&str, &Path)], metrics: &str, out: &Path) -> EvalJob {
    EvalJob {
        gt_dir: gt.to_path_buf(),
        preds: preds.iter().map(|(n, d)| (n.to_string(), d.to_path_buf())).collect(),
        metrics: MetricDescriptor::parse_list(metrics).unwrap(),
        policy: BinarizationPolicy::CANONICAL,
        out_dir: out.to_path_buf(),
        workers: 2,
        renames: BTreeMap::new(),
    }
}

/// Writes `masks` as `<stem>.png` into a fresh subdirectory.
fn image_dir(root: &Path, name: &str, masks: &[(&str, &BinaryMask)]) -> PathBuf {
    let dir = root.join(name);
    fs::create_dir_all(&dir).unwrap();
    for (stem, m) in masks {
        write_mask(m, dir.join(format!("{stem}.png"))).unwrap();
    }
    dir
}

fn strokes(seed: u64) -> BinaryMask {
    random_strokes(&mut ChaCha8Rng::seed_from_u64(seed), 48, 40, 3, 2.5)
}

#[test]
fn identical_directories_score_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (strokes(1), strokes(2));
    let gt = image_dir(tmp.path(), "gt", &[("a", &a), ("b", &b)]);
    let report = cmd_evaluate(&job(&gt, &[("same", &gt)], "f1,phd:0", &tmp.path().join("out"))).unwrap();
    assert!(report.failures.is_empty());
    let summary = &report.methods[0].summary;
    assert_eq!((summary[0].metric.as_str(), summary[0].mean), ("F1", Some(1.0)));
    assert_eq!((summary[1].metric.as_str(), summary[1].mean), ("PHD-0", Some(0.0)));
    let csv = fs::read_to_string(tmp.path().join("out/summary.csv")).unwrap();
    assert_eq!(csv, "Method,F1 ↑,PHD-0 ↓\nsame,1.0000,0.0000\n");
}

#[test]
fn summary_is_the_mean_of_the_per_image_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let gts: Vec<_> = (0..3).map(strokes).collect();
    let m1: Vec<_> = (10..13).map(strokes).collect();
    let m2: Vec<_> = (20..23).map(strokes).collect();
    let stems = ["i0", "i1", "i2"];
    fn pack<'a>(stems: &[&'a str], ms: &'a [BinaryMask]) -> Vec<(&'a str, &'a BinaryMask)> {
        stems.iter().copied().zip(ms).collect()
    }
    let gt = image_dir(tmp.path(), "gt", &pack(&stems, &gts));
    let d1 = image_dir(tmp.path(), "m1", &pack(&stems, &m1));
    let d2 = image_dir(tmp.path(), "m2", &pack(&stems, &m2));
    let metrics = "f1,iou,phd:3";
    let report = cmd_evaluate(&job(&gt, &[("m1", &d1), ("m2", &d2)], metrics, &tmp.path().join("out"))).unwrap();
    let descs = MetricDescriptor::parse_list(metrics).unwrap();
    for (method, preds) in report.methods.iter().zip([&m1, &m2]) {
        for (k, d) in descs.iter().enumerate() {
            let by_hand: f64 = preds
                .iter()
                .zip(&gts)
                .map(|(p, g)| evaluate_pair(p, g, std::slice::from_ref(d)).unwrap().value(&d.name).unwrap())
                .sum::<f64>()
                / 3.0;
            assert_eq!(method.summary[k].mean, Some(by_hand), "{} {}", method.name, d.name);
        }
    }
    let rows = fs::read_to_string(tmp.path().join("out/per_image.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 3);
    assert!(rows.starts_with("method,image,F1,IoU,PHD-3\nm1,i0,"));
    let summary = fs::read_to_string(tmp.path().join("out/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn missing_prediction_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (strokes(1), strokes(2));
    let gt = image_dir(tmp.path(), "gt", &[("a", &a), ("b", &b)]);
    let pred = image_dir(tmp.path(), "pred", &[("a", &a), ("extra", &b)]);
    let err = cmd_evaluate(&job(&gt, &[("m", &pred)], "f1", &tmp.path().join("out"))).unwrap_err();
    let EvalError::ManifestMismatch(problems) = &err else {
        panic!("unexpected {err}");
    };
    assert_eq!(problems, &["m: extra.png has no ground truth", "m: no prediction for b.png"]);
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn rename_table_pairs_differently_named_files() {
    let tmp = tempfile::tempdir().unwrap();
    let a = strokes(1);
    let gt = image_dir(tmp.path(), "gt", &[("slice_001", &a)]);
    let pred = image_dir(tmp.path(), "pred", &[("pred_1", &a)]);
    let mut j = job(&gt, &[("m", &pred)], "f1", &tmp.path().join("out"));
    j.renames = BTreeMap::from([("m".into(), BTreeMap::from([("pred_1".into(), "slice_001".into())]))]);
    let report = cmd_evaluate(&j).unwrap();
    assert_eq!(report.methods[0].images[0].image, "slice_001");
    assert_eq!(report.methods[0].summary[0].mean, Some(1.0));
}

#[test]
fn per_image_failures_are_reported_without_aborting() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (strokes(1), strokes(2));
    let empty = BinaryMask::empty(48, 40);
    let gt = image_dir(tmp.path(), "gt", &[("a", &a), ("b", &b)]);
    let pred = image_dir(tmp.path(), "pred", &[("a", &empty), ("b", &b)]);
    let report = cmd_evaluate(&job(&gt, &[("m", &pred)], "f1,phd:1", &tmp.path().join("out"))).unwrap();
    assert_eq!(report.failures.len(), 1);
    assert_eq!((report.failures[0].image.as_str(), report.failures[0].metric.as_str()), ("a", "PHD-1"));
    let phd = &report.methods[0].summary[1];
    assert_eq!((phd.images, phd.failed, phd.mean), (1, 1, Some(0.0)));
    assert_eq!(report.methods[0].summary[0].mean, Some(0.5));
}

#[test]
fn skeleton_flag_adds_variants_once() {
    let base = MetricDescriptor::parse_list("f1,iou-sk,phd:3").unwrap();
    let names: Vec<_> = with_skeleton_variants(&base).into_iter().map(|d| d.name).collect();
    assert_eq!(names, ["F1", "IoU-SK", "PHD-3", "F1-SK"]);
}

fn phd_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phd"))
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (strokes(1), strokes(2));
    let gt = image_dir(tmp.path(), "gt", &[("a", &a), ("b", &b)]);
    let good = image_dir(tmp.path(), "good", &[("a", &b), ("b", &a)]);
    let partial = image_dir(tmp.path(), "partial", &[("a", &a)]);
    let empty = image_dir(tmp.path(), "empty", &[("a", &BinaryMask::empty(48, 40)), ("b", &b)]);
    let run = |pred: &Path| {
        phd_bin()
            .args(["evaluate", "--polarity", "light", "--sk", "--workers", "1"])
            .arg("--gt")
            .arg(&gt)
            .arg("--pred")
            .arg(format!("m={}", pred.display()))
            .arg("--out")
            .arg(tmp.path().join("out"))
            .output()
            .unwrap()
    };
    assert_eq!(run(&good).status.code(), Some(0));
    let header = fs::read_to_string(tmp.path().join("out/summary.csv")).unwrap();
    assert!(header.starts_with("Method,F1 ↑,IoU ↑,Dice ↑,PHD-0 ↓,PHD-1 ↓,PHD-3 ↓,PHD-5 ↓,F1-SK ↑,IoU-SK ↑,Dice-SK ↑\n"));

    let out = run(&partial);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no prediction for b.png"));

    assert_eq!(run(&empty).status.code(), Some(2));
}

#[test]
fn dark_polarity_reads_inverted_files() {
    let tmp = tempfile::tempdir().unwrap();
    let a = strokes(4);
    let inverted = BinaryMask::from_fn(a.width(), a.height(), |x, y| !a.get(x as i64, y as i64));
    let gt = image_dir(tmp.path(), "gt", &[("a", &inverted)]);
    let mut j = job(&gt, &[("m", &gt)], "f1", &tmp.path().join("out"));
    j.policy = BinarizationPolicy::default();
    let report = cmd_evaluate(&j).unwrap();
    assert_eq!(report.methods[0].summary[0].mean, Some(1.0));
}
