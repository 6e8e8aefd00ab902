use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kernelcount::data::{
    build_patch_dataset, load_samples, negatives_per_image, read_image, sidecar_path, synthetic_corpus, write_image,
    Manifest, PatchSample, SyntheticEarTruth,
};
use kernelcount::detector::{detect_and_count, estimate_total, nms, sliding_window_scan, CountReport, ScanConfig};
use kernelcount::eval::{
    classification_metrics, classifier_predictions, counting_metrics, mean_center_error, render_overlay,
};
use kernelcount::hogsvm::{HogConfig, HogSvm};
use kernelcount::models::{train_classifier, train_regressor, ClassifierNet, RegressorNet, TrainConfig};
use serde::Serialize;
use serde_json::json;

use crate::args::{
    BuildPatches, Command, Count, Detect, Evaluate, GenSynthetic, Overlay, ScanArgs, TrainBaseline, TrainNet,
};
use crate::counts::{join, read_column, rows_to_string, write_rows, CountRow};

pub fn run(cli: crate::args::Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::BuildPatches(a) => build_patches(a),
        Command::TrainClassifier(a) => train_net(a, true),
        Command::TrainRegressor(a) => train_net(a, false),
        Command::TrainBaseline(a) => train_baseline(a),
        Command::Detect(a) => detect(a),
        Command::Count(a) => count(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Overlay(a) => overlay(a),
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn gen_synthetic(a: GenSynthetic) -> Result<()> {
    let truths = synthetic_corpus(a.ears, a.width, a.height, a.max_angle, a.common.seed)?;
    fs::create_dir_all(&a.out)?;
    let mut images = Vec::new();
    for (i, t) in truths.iter().enumerate() {
        let name = format!("ear_{i:03}.png");
        t.save(a.out.join(&name))?;
        images.push(json!({ "image": name, "visible_count": t.visible_count, "hidden_ratio": t.hidden_ratio }));
    }
    print_json(&json!({ "seed": a.common.seed, "images": images }))
}

/// PNG images in `dir` that have a truth sidecar, by file name.
fn truth_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) && sidecar_path(&p).exists() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn build_patches(a: BuildPatches) -> Result<()> {
    let paths = truth_images(&a.images)?;
    if paths.is_empty() {
        bail!("no images with truth sidecars in {}", a.images.display());
    }
    let truths = paths.iter().map(SyntheticEarTruth::load).collect::<kernelcount::Result<Vec<_>>>()?;
    let negatives = a.negatives.unwrap_or_else(|| negatives_per_image(&truths));
    let m = build_patch_dataset(&truths, negatives, a.common.seed, &a.out)?;
    print_json(&json!({
        "manifest": a.out.join("manifest.json"),
        "samples": m.samples.len(),
        "kernel": m.count(kernelcount::data::Label::Kernel),
        "non_kernel": m.count(kernelcount::data::Label::NonKernel),
    }))
}

fn load_manifest(path: &Path) -> Result<Vec<PatchSample>> {
    let m = Manifest::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(load_samples(&m, path)?)
}

fn train_config(a: &TrainNet, classifier: bool) -> TrainConfig {
    let mut c = if classifier { TrainConfig::classifier() } else { TrainConfig::regressor() };
    c.seed = a.common.seed;
    if let Some(v) = a.iterations {
        c.iterations = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.lr {
        c.initial_lr = v;
        c.reduced_lr = c.reduced_lr.min(v);
    }
    if let Some(v) = a.test_fraction {
        c.test_fraction = v;
    }
    c.augment = !a.no_augment;
    c
}

fn train_net(a: TrainNet, classifier: bool) -> Result<()> {
    let mut samples = load_manifest(&a.manifest)?;
    let config = train_config(&a, classifier);
    let mut progress = |r: &kernelcount::models::HistoryRecord| {
        eprintln!("iteration {} train {:.5} test {:.5} lr {}", r.iteration, r.train_loss, r.test_loss, r.lr);
    };
    let (history, report) = if classifier {
        let t = train_classifier(&samples, &config, &mut progress)?;
        t.model.save(&a.out)?;
        let test: Vec<PatchSample> = t.test_indices.iter().map(|&i| samples[i].clone()).collect();
        let truth: Vec<bool> = test.iter().map(|s| s.label.is_kernel()).collect();
        let m = classification_metrics(&classifier_predictions(&t.model, &test)?, &truth)?;
        (t.history, serde_json::to_value(m)?)
    } else {
        samples.retain(|s| s.center.is_some());
        let t = train_regressor(&samples, &config, &mut progress)?;
        t.model.save(&a.out)?;
        let test: Vec<PatchSample> = t.test_indices.iter().map(|&i| samples[i].clone()).collect();
        (t.history, json!({ "mean_center_error_px": mean_center_error(&t.model, &test)? }))
    };
    if let Some(h) = &a.history {
        history.save_csv(h)?;
    }
    print_json(&report)
}

fn train_baseline(a: TrainBaseline) -> Result<()> {
    let samples = load_manifest(&a.manifest)?;
    let split = TrainConfig { seed: a.common.seed, test_fraction: a.test_fraction, ..TrainConfig::classifier() };
    let (tr, te) = split.split(samples.len())?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let (train, test) = (pick(&tr), pick(&te));
    let model = HogSvm::train(&train, HogConfig::default(), a.lambda, a.epochs, a.common.seed)?;
    model.svm.save(&a.out)?;
    let predicted = test.iter().map(|s| model.is_kernel(s)).collect::<kernelcount::Result<Vec<_>>>()?;
    let truth: Vec<bool> = test.iter().map(|s| s.label.is_kernel()).collect();
    print_json(&classification_metrics(&predicted, &truth)?)
}

fn scan_config(a: &ScanArgs) -> Result<ScanConfig> {
    let d = ScanConfig::default();
    let c = ScanConfig {
        stride_x: a.stride_x.unwrap_or(d.stride_x),
        stride_y: a.stride_y.unwrap_or(d.stride_y),
        confidence_threshold: a.threshold.unwrap_or(d.confidence_threshold),
        nms_iou_threshold: a.nms_iou.unwrap_or(d.nms_iou_threshold),
        count_multiplier: a.multiplier.unwrap_or(d.count_multiplier),
        ..d
    };
    c.validate()?;
    Ok(c)
}

fn write_or_print(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => Ok(fs::write(p, serde_json::to_string_pretty(value)? + "\n")?),
        None => print_json(value),
    }
}

fn detect(a: Detect) -> Result<()> {
    let config = scan_config(&a.scan)?;
    let classifier = ClassifierNet::load(&a.scan.classifier)?;
    let image = read_image(&a.image)?;
    let kept = nms(&sliding_window_scan(&image, &classifier, &config)?, config.nms_iou_threshold);
    write_or_print(&json!({ "detections": kept }), a.out.as_deref())
}

fn report_value(r: &CountReport, timing: bool) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(r)?;
    if !timing {
        v.as_object_mut().expect("report is an object").remove("seconds");
    }
    Ok(v)
}

fn count(a: Count) -> Result<()> {
    let config = scan_config(&a.scan)?;
    let classifier = ClassifierNet::load(&a.scan.classifier)?;
    let regressor = RegressorNet::load(&a.regressor)?;
    if let Some(path) = &a.image {
        let report = detect_and_count(&read_image(path)?, &classifier, &regressor, &config)?;
        return write_or_print(&report_value(&report, !a.no_timing)?, a.out.as_deref());
    }
    let dir = a.images.as_ref().expect("clap requires --image or --images");
    let mut rows = Vec::new();
    for path in truth_images(dir)? {
        let truth = SyntheticEarTruth::load(&path)?;
        let report = detect_and_count(&truth.image, &classifier, &regressor, &config)?;
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        eprintln!("{id}: {} visible, {:.1} s", report.visible_count, report.seconds);
        rows.push(CountRow {
            id,
            predicted: report.estimated_total as f64,
            actual: estimate_total(truth.visible_count, truth.hidden_ratio)? as f64,
        });
    }
    match &a.out {
        Some(p) => write_rows(&rows, p),
        None => Ok(print!("{}", rows_to_string(&rows)?)),
    }
}

fn evaluate(a: Evaluate) -> Result<()> {
    let rows = join(&read_column(&a.pred, "predicted")?, &read_column(&a.truth, "actual")?)?;
    if let Some(out) = &a.out {
        write_rows(&rows, out)?;
    }
    let pred: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    let truth: Vec<f64> = rows.iter().map(|r| r.actual).collect();
    print_json(&counting_metrics(&pred, &truth)?)
}

fn overlay(a: Overlay) -> Result<()> {
    let image = read_image(&a.image)?;
    let text = fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    // Reports written with --no-timing lack the wall time.
    if let Some(obj) = value.as_object_mut() {
        obj.entry("seconds").or_insert(json!(0.0));
    }
    let report: CountReport = serde_json::from_value(value).context("parsing the count report")?;
    write_image(&render_overlay(&image, &report.detections, a.boxes), &a.out)?;
    Ok(())
}
