use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lotwatch_core::backend::{NoiseModel, RemoteConfig, SharedBackend};
use lotwatch_core::bench::{self, BenchPlan, BenchSummary};
use lotwatch_core::cost::{self, BillOfMaterials, Usd};
use lotwatch_core::detections::{serialize_detections, DetectionsByImage};
use lotwatch_core::metrics::{self, LabeledImage};
use lotwatch_core::pipeline::Counter;
use lotwatch_core::scene::standard_corpus;
use lotwatch_core::service::source::{frame_from_file, is_image_file, list_images};
use lotwatch_core::service::{BackendConfig, LotConfig, LotService};
use lotwatch_core::{imageio, roi, CountResult, Frame, ImageBuffer, RoiMask};

use crate::{
    BackendArgs, BackendKind, BenchArgs, BenchReportArgs, CostArgs, CountArgs, EvalArgs, MaskArgs, SceneArgs,
    ServeArgs,
};

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_mask(path: &Path, threshold: u8) -> Result<RoiMask> {
    roi::load_mask_file(path, threshold).with_context(|| format!("mask {}", path.display()))
}

fn mask_to_image(mask: &RoiMask) -> ImageBuffer {
    let data = mask
        .bits()
        .iter()
        .flat_map(|&inside| if inside { [0u8; 3] } else { [255u8; 3] })
        .collect();
    ImageBuffer::new(mask.width(), mask.height(), 3, data).expect("dimensions come from a valid mask")
}

pub fn mask(a: MaskArgs) -> Result<()> {
    let mask = load_mask(&a.mask, a.threshold)?;
    let total = mask.width() as usize * mask.height() as usize;
    let summary = serde_json::json!({
        "width": mask.width(),
        "height": mask.height(),
        "roi_pixels": mask.roi_pixel_count(),
        "roi_fraction": mask.roi_pixel_count() as f64 / total as f64,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(out) = &a.preview {
        let preview = match &a.image {
            Some(img) => {
                let img = imageio::read_image(img)?;
                roi::apply_pre_mask(&img, &mask)?
            }
            None => mask_to_image(&mask),
        };
        imageio::write_image(&preview, out)?;
        eprintln!("preview written to {}", out.display());
    }
    Ok(())
}

fn backend_config(a: &BackendArgs) -> Result<BackendConfig> {
    Ok(match a.backend {
        BackendKind::Synthetic => BackendConfig::Synthetic {
            model_id: a.model_id.clone(),
            noise: NoiseModel {
                drop_rate: a.drop_rate,
                spurious_rate: a.spurious_rate,
                seed: a.noise_seed,
                ..NoiseModel::default()
            },
        },
        BackendKind::Fixture => BackendConfig::Fixture {
            path: a.detections.clone().context("--detections is required for the fixture backend")?,
            model_id: a.model_id.clone(),
        },
        BackendKind::Remote => {
            let mut remote = RemoteConfig::new(a.endpoint.clone().context("--endpoint is required for remote")?);
            remote.bearer_token = a.token.clone();
            BackendConfig::Remote {
                model_id: a.model_id.clone(),
                remote,
            }
        }
    })
}

fn build_backend(a: &BackendArgs) -> Result<SharedBackend> {
    Ok(backend_config(a)?.build()?)
}

fn input_files(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let files = list_images(input)?;
        if files.is_empty() {
            bail!("no png or jpeg images in {}", input.display());
        }
        Ok(files)
    } else if is_image_file(input) {
        Ok(vec![input.to_owned()])
    } else {
        bail!("{} is not an image file or directory", input.display())
    }
}

pub async fn count(a: CountArgs) -> Result<()> {
    let mask = load_mask(&a.mask, a.threshold)?;
    let counter = Counter::new(mask, a.roi_method, a.classes.iter().cloned().collect());
    let backend = build_backend(&a.backend)?;
    let mut predictions = Vec::new();
    if !a.json {
        println!("{:<32} {:>6} {:>7}", "image", "total", "in_roi");
    }
    for path in input_files(&a.input)? {
        let frame = frame_from_file(&path)?;
        let c = counter
            .count(&backend, &frame)
            .await
            .with_context(|| format!("counting {}", frame.id))?;
        if a.json {
            println!(
                "{}",
                serde_json::json!({
                    "image_id": frame.id,
                    "roi_method": a.roi_method.to_string(),
                    "total_detections": c.total_detections,
                    "in_roi_count": c.in_roi_count,
                    "per_class_in_roi": c.per_class_in_roi,
                })
            );
        } else {
            println!("{:<32} {:>6} {:>7}", frame.id, c.total_detections, c.in_roi_count);
        }
        predictions.push(LabeledImage::new(frame.id, c.in_roi_count as u32));
    }
    if let Some(out) = &a.out {
        metrics::write_labels(File::create(out)?, &predictions)?;
    }
    Ok(())
}

fn read_counts(path: &Path) -> Result<Vec<LabeledImage>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    metrics::read_labels(f).with_context(|| format!("reading {}", path.display()))
}

/// `model/method=path` or a bare path.
fn split_run(spec: &str) -> (String, String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) => {
            let (model, method) = name.split_once('/').unwrap_or((name, "post"));
            (model.to_owned(), method.to_owned(), PathBuf::from(path))
        }
        None => {
            let stem = Path::new(spec).file_stem().map(|s| s.to_string_lossy().into_owned());
            (stem.unwrap_or_else(|| spec.to_owned()), "post".to_owned(), PathBuf::from(spec))
        }
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut labels = read_counts(&a.labels)?;
    if a.drop_empty {
        let f = metrics::dataset_filter(labels);
        eprintln!("dropped {} empty images ({:.1}%)", f.removed, f.removed_fraction * 100.0);
        labels = f.retained;
    }
    let mut reports = BTreeMap::new();
    let mut chart_input = BTreeMap::new();
    for spec in &a.predictions {
        let (model, method, path) = split_run(spec);
        let predictions: HashMap<String, CountResult> = read_counts(&path)?
            .into_iter()
            .map(|p| {
                let c = CountResult {
                    in_roi_count: p.vehicle_count as usize,
                    total_detections: p.vehicle_count as usize,
                    ..CountResult::default()
                };
                (p.image_id, c)
            })
            .collect();
        let evaluation = metrics::evaluate_dataset(&labels, &predictions, a.capacity)
            .with_context(|| format!("evaluating {}", path.display()))?;
        let m = &evaluation.metrics;
        println!(
            "{model}/{method}: images {} accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} specificity {:.4} balanced {:.4}",
            evaluation.images, m.accuracy, m.precision, m.recall, m.f1, m.specificity, m.balanced_accuracy
        );
        if !m.zero_denominator.is_empty() {
            println!("  zero denominators (reported as 0): {:?}", m.zero_denominator);
        }
        chart_input.insert((model.clone(), method.clone()), m.clone());
        reports.insert(format!("{model}/{method}"), evaluation);
    }
    if let Some(out) = &a.report {
        write_text(out, &serde_json::to_string_pretty(&reports)?)?;
    }
    if let Some(out) = &a.chart {
        write_text(out, &metrics::balanced_accuracy_chart(&chart_input))?;
    }
    Ok(())
}

pub async fn bench(a: BenchArgs) -> Result<()> {
    let backend = build_backend(&a.backend)?;
    let frames = a
        .images
        .iter()
        .map(|p| frame_from_file(p).map_err(anyhow::Error::from))
        .collect::<Result<Vec<Frame>>>()?;
    let counter = match &a.mask {
        Some(m) if a.end_to_end => Some(Counter::new(load_mask(m, roi::DEFAULT_THRESHOLD)?, a.roi_method, roi::default_classes())),
        _ => None,
    };
    let mut plan = BenchPlan::new(a.iterations, a.warmup)?;
    plan.shuffle_seed = a.shuffle_seed;
    plan.hardware_tag = a.hardware_tag.clone();
    let run = bench::run_bench(&plan, &backend, &frames, counter.as_ref(), a.raw.as_deref()).await?;
    let summary = run.summary();
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(path) = &a.summary {
        bench::merge_summary(path, summary)?;
    }
    if let Some(f) = &run.failure {
        bail!("benchmark aborted at {f}");
    }
    Ok(())
}

pub fn bench_report(a: BenchReportArgs) -> Result<()> {
    let bytes = std::fs::read(&a.summary).with_context(|| format!("reading {}", a.summary.display()))?;
    let entries: Vec<BenchSummary> = serde_json::from_slice(&bytes)?;
    let references: Vec<(String, f64)> = if a.reference {
        bench::REFERENCE_A100_MS
            .iter()
            .map(|(m, mean, _)| (format!("A100 {m}"), *mean))
            .collect()
    } else {
        Vec::new()
    };
    let report = bench::compare_report(&entries, &references)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.svg {
        write_text(out, &report.svg)?;
    }
    Ok(())
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

pub async fn serve(a: ServeArgs) -> Result<()> {
    let config = LotConfig::load(&a.config)?;
    tracing::info!(
        lot = %config.lot_id,
        interval_secs = config.interval_secs,
        roi_method = %config.roi_method,
        edge = config.is_edge(),
        "starting"
    );
    let mut service = LotService::from_config(config)?;
    if a.once {
        let report = service.run_pipeline_once().await;
        for r in &report.records {
            println!("{}", serde_json::to_string(r)?);
        }
        for s in &report.skipped {
            eprintln!("skipped: {s}");
        }
        if report.records.is_empty() {
            bail!("no record produced");
        }
        return Ok(());
    }
    let report = service.serve(shutdown_signal()).await;
    tracing::info!(
        cycles = report.cycles,
        records = report.records,
        skipped = report.skipped,
        queued = report.queue.depth,
        dropped = report.queue.dropped,
        published = report.queue.published,
        "stopped"
    );
    if report.queue.depth > 0 {
        bail!("{} records could not be published", report.queue.depth);
    }
    Ok(())
}

fn read_bom(path: &Path) -> Result<BillOfMaterials> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn usd(value: f64, what: &str) -> Result<Usd> {
    Usd::from_dollars(value).with_context(|| format!("{what} must be a finite amount"))
}

pub fn cost(a: CostArgs) -> Result<()> {
    let camera_unit = match (a.camera_usd, &a.camera_bom) {
        (Some(v), _) => usd(v, "--camera-usd")?,
        (None, Some(p)) => cost::bom_total(&read_bom(p)?)?,
        (None, None) => cost::bom_total(&BillOfMaterials::reference_camera())?,
    };
    let sensor = match (a.sensor_usd, &a.sensor_bom) {
        (Some(v), _) => usd(v, "--sensor-usd")?,
        (None, Some(p)) => cost::bom_total(&read_bom(p)?)?,
        (None, None) => cost::bom_total(&BillOfMaterials::reference_sensor())?,
    };
    let camera = Usd(camera_unit.cents() * a.cameras as i64);
    let curves = cost::cost_curves(camera, sensor, a.max_spaces)?;
    println!("camera system: {camera} USD ({} x {camera_unit})", a.cameras);
    println!("sensor per space: {sensor} USD");
    println!("cameras pay off from {} spaces", curves.breakeven);
    if let Some(out) = &a.csv {
        write_text(out, &curves.to_csv())?;
    }
    if let Some(out) = &a.svg {
        write_text(out, &curves.to_svg())?;
    }
    Ok(())
}

pub fn scene(a: SceneArgs) -> Result<()> {
    let images = a.out.join("images");
    std::fs::create_dir_all(&images)?;
    let mut labels = Vec::with_capacity(a.count);
    let mut truth = DetectionsByImage::new();
    let mut mask_written = false;
    for (name, spec, seed) in standard_corpus(a.count, a.seed) {
        let scene = spec.render(seed)?;
        if !mask_written {
            imageio::write_image(&scene.mask_image(), &a.out.join("mask.png"))?;
            mask_written = true;
        }
        imageio::write_image(&scene.image, &images.join(&name))?;
        labels.push(LabeledImage::new(name.clone(), scene.vehicles_in_roi as u32));
        truth.insert(name, scene.ground_truth);
    }
    metrics::write_labels(File::create(a.out.join("labels.csv"))?, &labels)?;
    write_text(&a.out.join("detections.jsonl"), &serialize_detections(&truth))?;
    println!("{} scenes written to {}", labels.len(), a.out.display());
    Ok(())
}
