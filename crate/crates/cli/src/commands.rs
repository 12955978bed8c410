use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use mixsr_core::imaging::{bicubic_resize, degrade, load_image, save_image, PlanarImage};
use mixsr_core::inference::{super_resolve, Bicubic, ModelCascade, Upscaler};
use mixsr_core::mixture::{max_label_map, LabelMap, MixtureNetwork};
use mixsr_core::store::{load_model, read_manifest, save_model, TrainingInfo};
use mixsr_core::training::{
    train, validate_with, EvalPair, LossRecord, MetricsTable, TrainOutputs, TrainState,
};
use mixsr_core::Tensor;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{ground_truth, list_images, luminance, stem, MANIFEST, MANIFEST_HEADER};
use crate::labels::write_label_png;
use crate::UsageError;

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating `{}`", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing `{}`", path.display()))
}

fn check_scale(scale: usize) -> anyhow::Result<()> {
    if scale < 2 {
        return Err(UsageError(format!("scale {scale} must be at least 2")).into());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepEntry {
    pub name: String,
    pub original: (usize, usize),
    pub cropped: (usize, usize),
}

/// Writes `<name>_hr.png` (modulo-cropped), `<name>_lr.png` and
/// `<name>_bicubic.png` for every image in `input`, plus `manifest.csv`.
pub fn cmd_prep(input: &Path, out: &Path, scale: usize) -> anyhow::Result<Vec<PrepEntry>> {
    check_scale(scale)?;
    let paths = list_images(input)?;
    if paths.is_empty() {
        return Err(UsageError(format!("no images found in `{}`", input.display())).into());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating `{}`", out.display()))?;
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    let mut entries = Vec::new();
    for path in paths {
        let img = load_image(&path)?;
        let name = stem(&path);
        let d = degrade(&img, scale)?;
        let files = ["hr", "lr", "bicubic"].map(|k| format!("{name}_{k}.png"));
        save_image(&d.hr, out.join(&files[0]))?;
        save_image(&d.lr, out.join(&files[1]))?;
        save_image(&d.upscaled, out.join(&files[2]))?;
        let e = PrepEntry {
            name,
            original: (img.width(), img.height()),
            cropped: (d.hr.width(), d.hr.height()),
        };
        writeln!(
            manifest,
            "{},{},{},{},{},{},{},{},{}",
            e.name,
            files[0],
            files[1],
            files[2],
            e.original.0,
            e.original.1,
            e.cropped.0,
            e.cropped.1,
            e.original != e.cropped
        )?;
        entries.push(e);
    }
    write_text(&out.join(MANIFEST), &manifest)?;
    Ok(entries)
}

/// Copies the single expert of `pretrained` into every expert of `net`.
pub fn warm_start(net: &mut MixtureNetwork, pretrained: &MixtureNetwork) -> anyhow::Result<()> {
    if pretrained.n() != 1 {
        return Err(UsageError(format!(
            "init_from must hold a single-expert model, found {} experts",
            pretrained.n()
        ))
        .into());
    }
    let source = &pretrained.experts[0];
    for (i, e) in net.experts.iter_mut().enumerate() {
        if e.config() != source.config() {
            return Err(UsageError(format!(
                "init_from expert config does not match mixture.experts[{i}]"
            ))
            .into());
        }
        *e = source.clone();
    }
    Ok(())
}

pub struct TrainOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Trains from a config file; returns the final state and the output directory.
pub fn cmd_train(
    config_path: &Path,
    overrides: &TrainOverrides,
    mut report: impl FnMut(&LossRecord),
) -> anyhow::Result<(TrainState, PathBuf)> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = overrides.seed {
        cfg.train.seed = seed;
    }
    let out = overrides
        .out
        .clone()
        .or(cfg.out.clone())
        .ok_or_else(|| UsageError("no output directory: set `out` or pass --out".into()))?;
    let corpus = list_images(&cfg.corpus)?
        .iter()
        .map(|p| luminance(&load_image(p)?))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if corpus.is_empty() {
        return Err(UsageError(format!("corpus `{}` has no images", cfg.corpus.display())).into());
    }
    let mut net = MixtureNetwork::from_seed(&cfg.mixture, cfg.train.seed)?;
    if let Some(path) = &cfg.init_from {
        warm_start(&mut net, &load_model(path)?.0)?;
    }
    let outputs = TrainOutputs::new(&out);
    let log_every = cfg.log_every;
    let state = train(&mut net, &corpus, &cfg.train, Some(&outputs), |r| {
        if log_every > 0 && r.iteration % log_every == 0 {
            report(r);
        }
    })?;
    Ok((state, out))
}

fn load_cascade_model(path: &Path) -> anyhow::Result<(MixtureNetwork, TrainingInfo)> {
    let (net, info) = load_model(path)?;
    if info.scale < 2 {
        anyhow::bail!(
            "model `{}` records training scale {}",
            path.display(),
            info.scale
        );
    }
    Ok((net, info))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SrReport {
    pub width: usize,
    pub height: usize,
    /// Network passes of the cascade.
    pub passes: usize,
    /// Whether the cascade overshot and was bicubic-downsized.
    pub downsized: bool,
}

pub fn cmd_sr(model: &Path, input: &Path, scale: usize, out: &Path) -> anyhow::Result<SrReport> {
    check_scale(scale)?;
    let (net, info) = load_cascade_model(model)?;
    let img = load_image(input)?;
    let cascade = ModelCascade::new(&net, info.scale)?;
    let hr = super_resolve(&cascade, &img, scale)?;
    save_image(&hr, out)?;
    Ok(SrReport {
        width: hr.width(),
        height: hr.height(),
        passes: cascade.passes(),
        downsized: cascade.downsizes() > 0,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub model: MetricsTable,
    pub bicubic: MetricsTable,
}

pub const EVAL_HEADER: &str = "scale,image,psnr,ssim,bicubic_psnr,bicubic_ssim";

pub fn eval_csv(results: &[EvalResult]) -> String {
    let mut csv = format!("{EVAL_HEADER}\n");
    for r in results {
        for (m, b) in r.model.all_rows().zip(r.bicubic.all_rows()) {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.model.scale, m.name, m.psnr, m.ssim, b.psnr, b.ssim
            );
        }
    }
    csv
}

/// Scores the model and the bicubic baseline at every scale; writes the CSV to `out`.
pub fn cmd_eval(
    model: &Path,
    dataset: &Path,
    scales: &[usize],
    out: &Path,
) -> anyhow::Result<Vec<EvalResult>> {
    scales.iter().try_for_each(|&s| check_scale(s))?;
    let (net, info) = load_cascade_model(model)?;
    let images = ground_truth(dataset)?;
    let results = scales
        .iter()
        .map(|&scale| {
            Ok(EvalResult {
                model: validate_with(&ModelCascade::new(&net, info.scale)?, &images, scale)?,
                bicubic: validate_with(&Bicubic, &images, scale)?,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    write_text(out, &eval_csv(&results))?;
    Ok(results)
}

pub struct MapsReport {
    pub files: Vec<PathBuf>,
    /// `(1, N, H, W)` gate responses before normalization.
    pub maps: Tensor<f32>,
    pub labels: LabelMap,
}

/// Per-map min-max normalization; a constant map becomes all zeros.
pub fn normalize_map(plane: &[f32], width: usize, height: usize) -> anyhow::Result<PlanarImage> {
    let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    let data = plane
        .iter()
        .map(|&v| if range > 0.0 { (v - lo) / range } else { 0.0 })
        .collect();
    Ok(PlanarImage::new(width, height, 1, data)?)
}

/// Writes `map_<i>.png` for each expert and `labels.png`, computed on the
/// bicubic-upscaled luminance of `input`.
pub fn cmd_maps(
    model: &Path,
    input: &Path,
    scale: usize,
    out: &Path,
) -> anyhow::Result<MapsReport> {
    check_scale(scale)?;
    let (net, _) = load_model(model)?;
    if net.n() < 2 {
        return Err(UsageError(
            "the model has a single expert, whose weight map is implicitly all ones; \
             maps need at least two experts"
                .into(),
        )
        .into());
    }
    let y = luminance(&load_image(input)?)?;
    let up = bicubic_resize(&y, y.width() * scale, y.height() * scale, true)?;
    let maps = net.weight_maps(&up.to_tensor())?;
    std::fs::create_dir_all(out).with_context(|| format!("creating `{}`", out.display()))?;
    let (w, h) = (up.width(), up.height());
    let mut files = Vec::new();
    for i in 0..net.n() {
        let path = out.join(format!("map_{i}.png"));
        save_image(&normalize_map(maps.plane(0, i), w, h)?, &path)?;
        files.push(path);
    }
    let labels = max_label_map(&maps);
    let path = out.join("labels.png");
    write_label_png(&labels, net.n(), &path)?;
    files.push(path);
    Ok(MapsReport {
        files,
        maps,
        labels,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub model: String,
    pub experts: usize,
    pub mean_psnr: f64,
    pub mean_seconds: f64,
    /// Number of timed upscales.
    pub timed: usize,
}

pub const BENCH_HEADER: &str = "model,mean_psnr,mean_seconds";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut csv = format!("{BENCH_HEADER}\n");
    for r in rows {
        let _ = writeln!(csv, "{},{},{}", r.model, r.mean_psnr, r.mean_seconds);
    }
    csv
}

/// Times every model's upscaling of the dataset `repeats` times after one
/// untimed warm-up image. Rows are sorted by mean time, fastest first.
pub fn cmd_bench(
    models: &[PathBuf],
    dataset: &Path,
    scale: usize,
    repeats: usize,
    out: &Path,
) -> anyhow::Result<Vec<BenchRow>> {
    check_scale(scale)?;
    if models.is_empty() {
        return Err(UsageError("bench needs at least one model".into()).into());
    }
    if repeats == 0 {
        return Err(UsageError("repeats must be at least 1".into()).into());
    }
    let images = ground_truth(dataset)?;
    let pairs = images
        .par_iter()
        .map(|i| EvalPair::new(&i.image, scale))
        .collect::<mixsr_core::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for path in models {
        let (net, info) = load_cascade_model(path)?;
        let cascade = ModelCascade::new(&net, info.scale)?;
        let run = |p: &EvalPair| cascade.upscale(&p.lr, p.hr.width(), p.hr.height());
        run(&pairs[0])?;
        let mut seconds = 0.0;
        let mut psnr = Vec::new();
        for rep in 0..repeats {
            for p in &pairs {
                let start = Instant::now();
                let pred = run(p)?;
                seconds += start.elapsed().as_secs_f64();
                if rep == 0 {
                    psnr.push(p.score(&pred, scale)?.0);
                }
            }
        }
        let timed = repeats * pairs.len();
        rows.push(BenchRow {
            model: path.display().to_string(),
            experts: net.n(),
            mean_psnr: psnr.iter().sum::<f64>() / psnr.len() as f64,
            mean_seconds: seconds / timed as f64,
            timed,
        });
    }
    rows.sort_by(|a, b| a.mean_seconds.total_cmp(&b.mean_seconds));
    write_text(out, &bench_csv(&rows))?;
    Ok(rows)
}

/// Human-readable model summary from the manifest alone.
pub fn cmd_info(model: &Path) -> anyhow::Result<String> {
    let m = read_manifest(model)?;
    let mut s = String::new();
    writeln!(s, "experts: {}", m.expert_count)?;
    for (i, e) in m.mixture.experts.iter().enumerate() {
        writeln!(s, "  [{i}] {}", serde_json::to_string(e)?)?;
    }
    match &m.mixture.weight_module {
        Some(w) => writeln!(s, "weight module: {}", serde_json::to_string(w)?)?,
        None => writeln!(s, "weight module: none (implicit all-ones gate)")?,
    }
    writeln!(
        s,
        "trained: iteration {}, scale x{}",
        m.training.iteration, m.training.scale
    )?;
    let params: u64 = m.value_count();
    writeln!(s, "parameters: {params} in {} tensors", m.tensors.len())?;
    Ok(s)
}

/// Writes a freshly initialized model, as `train` with zero iterations would.
pub fn cmd_init(config_path: &Path, seed: Option<u64>, out: &Path) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let seed = seed.unwrap_or(cfg.train.seed);
    let mut net = MixtureNetwork::from_seed(&cfg.mixture, seed)?;
    if let Some(path) = &cfg.init_from {
        warm_start(&mut net, &load_model(path)?.0)?;
    }
    save_model(
        &net,
        TrainingInfo {
            iteration: 0,
            scale: cfg.train.scale,
        },
        out,
    )?;
    Ok(())
}
