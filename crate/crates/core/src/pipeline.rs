//! End-to-end orchestration and the on-disk layout of run outputs.
//!
//! Per image, under `<output>/<id>/`: `segments.raw`, `merge_log.csv` (segmentation
//! stage), `mask.png`, `summary.png`, `scores.json`, `crops/` (saliency stage). The run
//! itself writes `run.json`, `metrics.csv`, and `metrics.json` when ground truth exists.

use std::path::{Path, PathBuf};

use image::DynamicImage;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::evaluation::{saliency_metrics, ImageMetrics, MetricReport, SaliencyMetrics};
use crate::features::FeatureVolume;
use crate::labeling::Labeling;
use crate::region_merge::{merge_log_csv, merge_regions, MergeRecord};
use crate::rgbd_io::{
    encode_png, load_entry, mask_to_image, read_depth, read_manifest, read_mask, read_rgb, read_saliency_map,
    write_atomic, GroundTruth, LoadOptions, ManifestEntry, RgbdImage,
};
use crate::scene_classify::{accuracy, train_on_images, SceneError, SceneModel};
use crate::superpixel::slic_segment;
use crate::vol_saliency::{
    classify_segments, depth_only_mask, generate_mask, random_mask, saliency_scores, scores_sidecar, segment_crop,
    segment_mask, segment_points, summarize, SaliencySummary, SegmentClassifier, SegmentVolume,
};
use crate::Error;

/// Per-image seed: the run seed mixed with an FNV-1a hash of the image id, so results do
/// not depend on manifest order or on which stage runs.
pub fn image_seed(run_seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ run_seed
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStage {
    pub superpixels: Labeling,
    pub labeling: Labeling,
    pub merge_log: Vec<MergeRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyStage {
    pub volumes: Vec<SegmentVolume>,
    pub summary: SaliencySummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub id: String,
    pub segments: SegmentStage,
    pub saliency: SaliencyStage,
    pub metrics: Option<SaliencyMetrics>,
}

pub fn compute_features(image: &RgbdImage, cfg: &RunConfig) -> Result<FeatureVolume, Error> {
    Ok(FeatureVolume::compute(image, &cfg.normals)?)
}

/// Modified SLIC followed by region merging.
pub fn segment_image(image: &RgbdImage, features: &FeatureVolume, cfg: &RunConfig) -> Result<SegmentStage, Error> {
    let sp = slic_segment(features, &cfg.slic)?;
    let merged = merge_regions(features, &sp.labeling, &cfg.merge_options(image_seed(cfg.seed, &image.id)))?;
    Ok(SegmentStage {
        superpixels: sp.labeling,
        labeling: merged.labeling,
        merge_log: merged.log,
    })
}

/// Box volumes, classes, and the gated mask for a finished segmentation.
pub fn saliency_image(
    image: &RgbdImage,
    features: &FeatureVolume,
    labeling: &Labeling,
    cfg: &RunConfig,
    classifier: &dyn SegmentClassifier,
) -> Result<SaliencyStage, Error> {
    let volumes = saliency_scores(&segment_points(features, labeling));
    let scores: Vec<f64> = volumes.iter().map(|v| v.score).collect();
    let classes = classify_segments(&image.rgb, features, labeling, classifier)?;
    let summary = generate_mask(labeling, &scores, &classes, &cfg.saliency.mask_options(), &classifier.id())?;
    Ok(SaliencyStage { volumes, summary })
}

pub fn mask_as_map(mask: &ndarray::Array2<bool>) -> ndarray::Array2<f64> {
    mask.mapv(|m| if m { 1.0 } else { 0.0 })
}

pub fn process_image(
    image: &RgbdImage,
    gt: Option<&GroundTruth>,
    cfg: &RunConfig,
    classifier: &dyn SegmentClassifier,
) -> Result<ImageResult, Error> {
    let features = compute_features(image, cfg)?;
    let segments = segment_image(image, &features, cfg)?;
    let saliency = saliency_image(image, &features, &segments.labeling, cfg, classifier)?;
    let metrics = match gt {
        Some(gt) => Some(saliency_metrics(&mask_as_map(&saliency.summary.mask), &gt.mask)?),
        None => None,
    };
    Ok(ImageResult {
        id: image.id.clone(),
        segments,
        saliency,
        metrics,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn image_dir(output: &Path, id: &str) -> PathBuf {
    output.join(id)
}

pub fn write_segment_outputs(dir: &Path, stage: &SegmentStage) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let raw = dir.join("segments.raw");
    write_atomic(&raw, &stage.labeling.encode_raw()).map_err(io_err(&raw))?;
    let log = dir.join("merge_log.csv");
    write_atomic(&log, merge_log_csv(&stage.merge_log).as_bytes()).map_err(io_err(&log))
}

pub fn read_segments(dir: &Path) -> Result<Labeling, Error> {
    let raw = dir.join("segments.raw");
    Labeling::read_raw(&raw).map_err(io_err(&raw))
}

pub fn write_saliency_outputs(dir: &Path, image: &RgbdImage, labeling: &Labeling, stage: &SaliencyStage) -> Result<(), Error> {
    let crops = dir.join("crops");
    std::fs::create_dir_all(&crops).map_err(io_err(&crops))?;
    let summary = &stage.summary;
    let write_png = |name: &str, img: DynamicImage| {
        let p = dir.join(name);
        write_atomic(&p, &encode_png(&img)).map_err(io_err(&p))
    };
    write_png("mask.png", DynamicImage::ImageLuma8(mask_to_image(&summary.mask)))?;
    write_png("summary.png", DynamicImage::ImageRgb8(summarize(&image.rgb, &summary.mask)))?;
    for &id in &summary.kept_segments {
        if let Some(crop) = segment_crop(&image.rgb, &segment_mask(labeling, id)) {
            let p = crops.join(format!("segment_{id:04}.png"));
            write_atomic(&p, &encode_png(&DynamicImage::ImageRgb8(crop))).map_err(io_err(&p))?;
        }
    }
    let sidecar = scores_sidecar(&stage.volumes, summary);
    let p = dir.join("scores.json");
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    write_atomic(&p, json.as_bytes()).map_err(io_err(&p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageStatus {
    pub id: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub num_superpixels: usize,
    pub num_segments: usize,
    pub kept_segments: Vec<u32>,
}

impl ImageStatus {
    fn failed(id: String, e: &Error) -> Self {
        Self {
            id,
            ok: false,
            error: Some(e.to_string()),
            num_superpixels: 0,
            num_segments: 0,
            kept_segments: vec![],
        }
    }
}

/// Machine-readable record of a run, written as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub depth_source: String,
    pub score_normalization: String,
    pub metric_threshold: String,
    pub classifier: String,
    pub config: RunConfig,
    pub images: Vec<ImageStatus>,
}

impl RunManifest {
    pub fn failures(&self) -> usize {
        self.images.iter().filter(|i| !i.ok).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub report: MetricReport,
}

fn entry_id(entry: &ManifestEntry) -> String {
    entry
        .rgb
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("line_{}", entry.line))
}

/// Stage selection for [`run_stages`].
#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    All,
    /// Segmentation only.
    Segment,
    /// Saliency from `segments.raw` files under this directory.
    Saliency { segments: PathBuf },
}

/// Runs the whole pipeline over `cfg.manifest`, in parallel on the current rayon pool.
pub fn run_pipeline(cfg: &RunConfig, classifier: &dyn SegmentClassifier) -> Result<RunOutcome, Error> {
    run_stages(cfg, classifier, &Stage::All)
}

pub fn run_stages(cfg: &RunConfig, classifier: &dyn SegmentClassifier, stage: &Stage) -> Result<RunOutcome, Error> {
    let manifest_path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config(crate::config::ConfigError::Invalid("no manifest given".into())))?;
    let entries = read_manifest(manifest_path)?;
    std::fs::create_dir_all(&cfg.output).map_err(io_err(&cfg.output))?;
    let load = LoadOptions {
        depth_scale: cfg.depth_scale,
    };
    let results: Vec<(ImageStatus, Option<ImageMetrics>)> = entries
        .par_iter()
        .map(|entry| {
            let id = entry_id(entry);
            match run_one(entry, cfg, &load, classifier, stage) {
                Ok(r) => {
                    info!("{}: {} segments, kept {:?}", r.0.id, r.0.num_segments, r.0.kept_segments);
                    r
                }
                Err(e) => {
                    warn!("{id}: {e}");
                    (ImageStatus::failed(id, &e), None)
                }
            }
        })
        .collect();
    let (images, metrics): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = MetricReport::new(metrics.into_iter().flatten().collect());
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        depth_source: cfg.depth_source.clone(),
        score_normalization: "per_image_max".into(),
        metric_threshold: report.threshold.clone(),
        classifier: classifier.id(),
        config: cfg.clone(),
        images,
    };
    let run_json = cfg.output.join("run.json");
    let json = serde_json::to_string_pretty(&manifest).expect("run manifest serializes");
    write_atomic(&run_json, json.as_bytes()).map_err(io_err(&run_json))?;
    if !report.images.is_empty() {
        let csv = cfg.output.join("metrics.csv");
        write_atomic(&csv, report.to_csv().as_bytes()).map_err(io_err(&csv))?;
        let js = cfg.output.join("metrics.json");
        write_atomic(&js, report.to_json().as_bytes()).map_err(io_err(&js))?;
    }
    Ok(RunOutcome { manifest, report })
}

fn run_one(
    entry: &ManifestEntry,
    cfg: &RunConfig,
    load: &LoadOptions,
    classifier: &dyn SegmentClassifier,
    stage: &Stage,
) -> Result<(ImageStatus, Option<ImageMetrics>), Error> {
    let (image, gt) = load_entry(entry, cfg.intrinsics, load)?;
    let dir = image_dir(&cfg.output, &image.id);
    let features = compute_features(&image, cfg)?;
    let (labeling, num_superpixels) = match stage {
        Stage::Saliency { segments } => (read_segments(&image_dir(segments, &image.id))?, 0),
        _ => {
            let seg = segment_image(&image, &features, cfg)?;
            write_segment_outputs(&dir, &seg)?;
            if cfg.debug_overlays {
                let p = dir.join("superpixels.png");
                let overlay = seg.superpixels.boundary_overlay(&image.rgb);
                write_atomic(&p, &encode_png(&DynamicImage::ImageRgb8(overlay))).map_err(io_err(&p))?;
            }
            (seg.labeling, seg.superpixels.num_regions)
        }
    };
    let mut status = ImageStatus {
        id: image.id.clone(),
        ok: true,
        error: None,
        num_superpixels,
        num_segments: labeling.num_regions,
        kept_segments: vec![],
    };
    if *stage == Stage::Segment {
        return Ok((status, None));
    }
    let sal = saliency_image(&image, &features, &labeling, cfg, classifier)?;
    write_saliency_outputs(&dir, &image, &labeling, &sal)?;
    status.kept_segments = sal.summary.kept_segments.clone();
    // a manifest row with only a scene label carries no saliency annotation
    let metrics = match gt.filter(|_| entry.gt.is_some()) {
        Some(gt) => Some(ImageMetrics {
            id: image.id.clone(),
            metrics: saliency_metrics(&mask_as_map(&sal.summary.mask), &gt.mask)?,
        }),
        None => None,
    };
    Ok((status, metrics))
}

/// Scores every `*.png` in `gt_dir` against the same-named file in `pred_dir`. Images
/// that cannot be scored are returned as `(name, reason)` instead.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<(MetricReport, Vec<(String, String)>), Error> {
    let mut names: Vec<String> = std::fs::read_dir(gt_dir)
        .map_err(io_err(gt_dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    let scored: Vec<Result<ImageMetrics, (String, String)>> = names
        .par_iter()
        .map(|name| {
            let id = name[..name.len() - 4].to_string();
            let fail = |e: String| (id.clone(), e);
            let pred_path = pred_dir.join(name);
            if !pred_path.is_file() {
                return Err(fail("no prediction".into()));
            }
            let pred = read_saliency_map(&pred_path).map_err(|e| fail(e.to_string()))?;
            let gt = read_mask(&gt_dir.join(name)).map_err(|e| fail(e.to_string()))?;
            let metrics = saliency_metrics(&pred, &gt).map_err(|e| fail(e.to_string()))?;
            Ok(ImageMetrics { id: id.clone(), metrics })
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in scored {
        match r {
            Ok(m) => ok.push(m),
            Err(f) => failed.push(f),
        }
    }
    Ok((MetricReport::new(ok), failed))
}

/// What the scene classifier sees at test time.
#[derive(Debug, Clone, PartialEq)]
pub enum TestView {
    /// The whole RGB image.
    Full,
    /// `summary.png` files of a finished run, one directory per image id.
    Summaries(PathBuf),
    /// The RGB image masked by the depth-only baseline.
    DepthOnly,
    /// A random mask with the coverage of the run's `mask.png` for the same image.
    Random(PathBuf),
}

impl TestView {
    pub fn name(&self) -> &'static str {
        match self {
            TestView::Full => "full",
            TestView::Summaries(_) => "summaries",
            TestView::DepthOnly => "depth_only",
            TestView::Random(_) => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrediction {
    pub id: String,
    pub truth: String,
    pub predicted: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub test_view: String,
    pub vocabulary: usize,
    pub seed: u64,
    pub classes: Vec<String>,
    pub accuracy: f64,
    pub predictions: Vec<ScenePrediction>,
}

fn labeled_entries(manifest: &Path) -> Result<Vec<(String, ManifestEntry, String)>, Error> {
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let label = e.scene_label.clone().ok_or_else(|| {
                SceneError::BadTrainingSet(format!("{} line {} has no scene label", manifest.display(), e.line))
            })?;
            Ok((entry_id(&e), e, label))
        })
        .collect()
}

/// Trains on the full images of `train_manifest`, then predicts the `test_manifest`
/// images as seen through `view`. Classes are the sorted training labels.
pub fn classify_scenes(
    train_manifest: &Path,
    test_manifest: &Path,
    view: &TestView,
    vocabulary: usize,
    seed: u64,
    depth_scale: f64,
) -> Result<(SceneModel, SceneReport), Error> {
    let train_set = labeled_entries(train_manifest)?;
    let classes: Vec<String> = train_set
        .iter()
        .map(|t| t.2.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let images = train_set
        .par_iter()
        .map(|(_, e, _)| read_rgb(&e.rgb))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<usize> = train_set
        .iter()
        .map(|t| classes.iter().position(|c| *c == t.2).expect("class collected"))
        .collect();
    let refs: Vec<&image::RgbImage> = images.iter().collect();
    let model = train_on_images(&refs, &labels, &classes, vocabulary, seed)?;

    let test_set = labeled_entries(test_manifest)?;
    let predictions = test_set
        .par_iter()
        .map(|(id, e, truth)| -> Result<ScenePrediction, Error> {
            let rgb = read_rgb(&e.rgb)?;
            let seen = match view {
                TestView::Full => rgb,
                TestView::Summaries(dir) => read_rgb(&image_dir(dir, id).join("summary.png"))?,
                TestView::DepthOnly => summarize(&rgb, &depth_only_mask(&read_depth(&e.depth, depth_scale)?)),
                TestView::Random(dir) => {
                    let mask = read_mask(&image_dir(dir, id).join("mask.png"))?;
                    let coverage = mask.iter().filter(|&&m| m).count() as f64 / mask.len().max(1) as f64;
                    let (h, w) = (rgb.height() as usize, rgb.width() as usize);
                    summarize(&rgb, &random_mask(h, w, coverage, image_seed(seed, id)))
                }
            };
            Ok(ScenePrediction {
                id: id.clone(),
                truth: truth.clone(),
                predicted: model.classes[model.predict(&seen)?].clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    // test labels unseen in training can never be predicted and count as errors
    let truth: Vec<usize> = predictions
        .iter()
        .map(|p| classes.iter().position(|c| *c == p.truth).unwrap_or(usize::MAX))
        .collect();
    let predicted: Vec<usize> = predictions
        .iter()
        .map(|p| classes.iter().position(|c| *c == p.predicted).expect("model class"))
        .collect();
    let report = SceneReport {
        test_view: view.name().into(),
        vocabulary,
        seed,
        classes,
        accuracy: accuracy(&predicted, &truth),
        predictions,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_depend_on_id_and_run_seed() {
        assert_eq!(image_seed(1, "a"), image_seed(1, "a"));
        assert_ne!(image_seed(1, "a"), image_seed(1, "b"));
        assert_ne!(image_seed(1, "a"), image_seed(2, "a"));
    }
}
