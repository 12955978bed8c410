//! Joint SGD training of a mixture network, checkpointing, and validation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{degrade, rgb_to_y, shave_border, AugmentConfig, PatchSampler, PlanarImage};
use crate::inference::{ModelCascade, Upscaler};
use crate::metrics::{psnr, ssim};
use crate::mixture::MixtureNetwork;
use crate::ops::mse_loss;
use crate::store::{save_model, TrainingInfo};
use crate::tensor::{Parameterized, Real};

pub const EMA_FACTOR: f64 = 0.99;

/// Multiplies both learning rates by `factor` every `every` iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub lr_weight_module: f64,
    pub lr_experts: f64,
    pub max_iterations: usize,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub patch_size: usize,
    pub scale: usize,
    /// Spacing of patch sites on the ground-truth grid.
    pub stride: usize,
    pub augment: AugmentConfig,
    pub decay: Option<StepDecay>,
    /// Rescales the full gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            momentum: 0.9,
            lr_weight_module: 1e-5,
            lr_experts: 1e-5,
            max_iterations: 100_000,
            checkpoint_every: 10_000,
            seed: 0,
            patch_size: 56,
            scale: 2,
            stride: 14,
            augment: AugmentConfig::default(),
            decay: None,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(
                    field,
                    format!("{v} must be positive and finite"),
                ))
            }
        };
        positive("lr_weight_module", self.lr_weight_module)?;
        positive("lr_experts", self.lr_experts)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(
                "momentum",
                format!("{} not in [0, 1)", self.momentum),
            ));
        }
        for (field, v) in [
            ("batch_size", self.batch_size),
            ("patch_size", self.patch_size),
            ("stride", self.stride),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.scale < 2 {
            return Err(Error::config(
                "scale",
                format!("{} must be at least 2", self.scale),
            ));
        }
        if let Some(d) = self.decay {
            if d.every == 0 {
                return Err(Error::config("decay.every", "must be at least 1"));
            }
            positive("decay.factor", d.factor)?;
        }
        if let Some(c) = self.clip_norm {
            positive("clip_norm", c)?;
        }
        self.augment.validate()
    }

    /// Optimizer settings in effect at `iteration` (1-based).
    pub fn sgd_at(&self, iteration: usize) -> SgdParams {
        let k = match self.decay {
            Some(d) => d.factor.powi(((iteration.max(1) - 1) / d.every) as i32),
            None => 1.0,
        };
        SgdParams {
            momentum: self.momentum,
            lr_weight_module: self.lr_weight_module * k,
            lr_experts: self.lr_experts * k,
            clip_norm: self.clip_norm,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdParams {
    pub momentum: f64,
    pub lr_weight_module: f64,
    pub lr_experts: f64,
    pub clip_norm: Option<f64>,
}

impl SgdParams {
    fn lr_for(&self, name: &str) -> f64 {
        if name.starts_with("weight_module") {
            self.lr_weight_module
        } else {
            self.lr_experts
        }
    }
}

/// `v <- momentum v - lr g; w <- w + v`, then zeroes the gradients and applies
/// parameter lower bounds. Nothing is updated if any gradient is non-finite.
pub fn sgd_step<T: Real>(net: &mut dyn Parameterized<T>, params: &SgdParams) -> Result<()> {
    let mut bad = None;
    let mut sq = 0.0f64;
    net.visit_params(&mut |name, p| {
        if bad.is_none() && !p.grad.is_finite() {
            bad = Some(name.to_string());
        }
        sq += p
            .grad
            .data()
            .iter()
            .map(|g| g.to_f64_lossy().powi(2))
            .sum::<f64>();
    });
    if let Some(group) = bad {
        return Err(Error::NonFiniteGradient { group });
    }
    let clip = match params.clip_norm {
        Some(max) if sq.sqrt() > max => max / sq.sqrt(),
        _ => 1.0,
    };
    let mu = T::from_f64_lossy(params.momentum);
    net.visit_params_mut(&mut |name, p| {
        let lr = T::from_f64_lossy(params.lr_for(name) * p.lr_scale * clip);
        for ((w, v), &g) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.momentum.data_mut())
            .zip(p.grad.data())
        {
            *v = mu * *v - lr * g;
            *w += *v;
        }
        if let Some(min) = p.min_value {
            p.value.data_mut().iter_mut().for_each(|w| *w = w.max(min));
        }
        p.zero_grad();
    });
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub ema_loss: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainState {
    pub iteration: usize,
    pub ema_loss: Option<f64>,
    pub history: Vec<LossRecord>,
    pub last_checkpoint: Option<PathBuf>,
}

impl TrainState {
    fn record(&mut self, loss: f64) -> LossRecord {
        self.iteration += 1;
        let ema = match self.ema_loss {
            Some(e) => EMA_FACTOR * e + (1.0 - EMA_FACTOR) * loss,
            None => loss,
        };
        self.ema_loss = Some(ema);
        let r = LossRecord {
            iteration: self.iteration,
            loss,
            ema_loss: ema,
        };
        self.history.push(r);
        r
    }

    /// Smoothed loss after `iteration` (1-based).
    pub fn ema_at(&self, iteration: usize) -> Option<f64> {
        self.history
            .get(iteration.checked_sub(1)?)
            .map(|r| r.ema_loss)
    }
}

/// Files written by [`train`] into `dir`: `loss.csv`, `checkpoint-<iteration>.mscn`
/// and the final `model.mscn`.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub dir: PathBuf,
}

impl TrainOutputs {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn loss_log(&self) -> PathBuf {
        self.dir.join("loss.csv")
    }

    pub fn model(&self) -> PathBuf {
        self.dir.join("model.mscn")
    }

    pub fn checkpoint(&self, iteration: usize) -> PathBuf {
        self.dir.join(format!("checkpoint-{iteration:08}.mscn"))
    }
}

struct LossLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LossLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut log = Self {
            out: BufWriter::new(file),
            path,
        };
        log.line(format_args!("iteration,loss,ema_loss"))?;
        Ok(log)
    }

    fn line(&mut self, args: std::fmt::Arguments<'_>) -> Result<()> {
        writeln!(self.out, "{args}").map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Trains `net` on luminance images from `corpus`. Per iteration: one batch
/// from the seeded patch stream, forward, MSE, backward, SGD step.
///
/// With `outputs` set, the loss log, checkpoints and the final model are
/// written there. `progress` sees every iteration's losses.
pub fn train(
    net: &mut MixtureNetwork<f32>,
    corpus: &[PlanarImage],
    config: &TrainConfig,
    outputs: Option<&TrainOutputs>,
    mut progress: impl FnMut(&LossRecord),
) -> Result<TrainState> {
    config.validate()?;
    let mut sampler = PatchSampler::new(
        corpus,
        config.scale,
        config.patch_size,
        config.stride,
        &config.augment,
        config.seed,
    )?;
    let mut log = match outputs {
        Some(o) => {
            std::fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
            Some(LossLog::create(o.loss_log())?)
        }
        None => None,
    };
    let info = |iteration: usize| TrainingInfo {
        iteration: iteration as u64,
        scale: config.scale,
    };

    let mut state = TrainState::default();
    while state.iteration < config.max_iterations {
        let iteration = state.iteration + 1;
        let (input, target) = sampler.next_batch(config.batch_size);
        let (out, cache) = net.forward_cached(&input)?;
        let (loss, grad) = mse_loss(&out.hr, &target)?;
        let failure = if loss.is_finite() {
            net.backward(&cache, &grad, false)?;
            match sgd_step(net, &config.sgd_at(iteration)) {
                Ok(()) => None,
                Err(e @ Error::NonFiniteGradient { .. }) => Some(e.to_string()),
                Err(e) => return Err(e),
            }
        } else {
            Some(format!("loss is {loss}"))
        };
        if let Some(reason) = failure {
            if let Some(log) = log.as_mut() {
                log.flush()?;
            }
            return Err(Error::NumericAbort {
                iteration,
                reason,
                last_checkpoint: state.last_checkpoint,
            });
        }
        let r = state.record(loss);
        if let Some(log) = log.as_mut() {
            log.line(format_args!("{},{},{}", r.iteration, r.loss, r.ema_loss))?;
        }
        progress(&r);
        if let Some(o) = outputs {
            if config.checkpoint_every > 0 && r.iteration % config.checkpoint_every == 0 {
                let path = o.checkpoint(r.iteration);
                save_model(net, info(r.iteration), &path)?;
                state.last_checkpoint = Some(path);
            }
        }
    }
    if let Some(log) = log.as_mut() {
        log.flush()?;
    }
    if let Some(o) = outputs {
        save_model(net, info(state.iteration), o.model())?;
    }
    Ok(state)
}

#[derive(Clone, Debug)]
pub struct NamedImage {
    pub name: String,
    pub image: PlanarImage,
}

impl NamedImage {
    pub fn new(name: impl Into<String>, image: PlanarImage) -> Self {
        Self {
            name: name.into(),
            image,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub name: String,
    /// `f64::INFINITY` for a perfect reconstruction.
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub scale: usize,
    pub rows: Vec<MetricsRow>,
    pub mean: MetricsRow,
}

impl MetricsTable {
    fn from_rows(scale: usize, rows: Vec<MetricsRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = MetricsRow {
            name: "mean".into(),
            psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        };
        Self { scale, rows, mean }
    }

    /// Per-image rows followed by the mean row.
    pub fn all_rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().chain(std::iter::once(&self.mean))
    }
}

/// The prepared pair used to score one ground-truth image at `scale`.
#[derive(Clone, Debug)]
pub struct EvalPair {
    /// Modulo-cropped luminance ground truth.
    pub hr: PlanarImage,
    /// Its degraded observation, quantized to 8 bits.
    pub lr: PlanarImage,
}

impl EvalPair {
    pub fn new(ground_truth: &PlanarImage, scale: usize) -> Result<Self> {
        let y = if ground_truth.channels() == 3 {
            rgb_to_y(ground_truth)?
        } else {
            ground_truth.clone()
        };
        let d = degrade(&y, scale)?;
        Ok(Self {
            hr: d.hr,
            lr: d.lr.quantize(),
        })
    }

    /// PSNR and SSIM of `prediction` against the ground truth, both shaved by `border`.
    pub fn score(&self, prediction: &PlanarImage, border: usize) -> Result<(f64, f64)> {
        let a = shave_border(prediction, border)?;
        let b = shave_border(&self.hr, border)?;
        Ok((psnr(&a, &b)?, ssim(&a, &b)?))
    }
}

/// Scores `upscaler` on the luminance of every image at `scale`, shaving
/// `scale` pixels from each border.
pub fn validate_with(
    upscaler: &dyn Upscaler,
    images: &[NamedImage],
    scale: usize,
) -> Result<MetricsTable> {
    let rows = images
        .par_iter()
        .map(|img| {
            let pair = EvalPair::new(&img.image, scale)?;
            let pred = upscaler.upscale(&pair.lr, pair.hr.width(), pair.hr.height())?;
            let (psnr, ssim) = pair.score(&pred, scale)?;
            Ok(MetricsRow {
                name: img.name.clone(),
                psnr,
                ssim,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsTable::from_rows(scale, rows))
}

/// [`validate_with`] for a model trained at `model_scale`, cascaded up to `scale`.
pub fn validate(
    net: &MixtureNetwork<f32>,
    model_scale: usize,
    images: &[NamedImage],
    scale: usize,
) -> Result<MetricsTable> {
    validate_with(&ModelCascade::new(net, model_scale)?, images, scale)
}

/// Reads a loss log back as records.
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: &str| Error::InvalidArgument {
        op: "read_loss_log",
        reason: format!("malformed line `{line}`"),
    };
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad(line));
            }
            Ok(LossRecord {
                iteration: f[0].parse().map_err(|_| bad(line))?,
                loss: f[1].parse().map_err(|_| bad(line))?,
                ema_loss: f[2].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}
