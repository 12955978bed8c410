//! Super-resolution experts. Each maps a bicubic-upscaled luminance tensor
//! `(B, 1, H, W)` to a same-size high-resolution estimate.
//!
//! [`ScnExpert`] unrolls `k` iterations of learned iterative shrinkage:
//!
//! ```text
//! f       = feature(y)
//! z_0     = shrink(W f)
//! z_t     = shrink(W f + S z_{t-1})        t = 1 .. k-1
//! out     = recon(z_{k-1}) (+ y)
//! ```
//!
//! `W` and `S` are 1x1 convolutions over the `n` code channels, shrinkage
//! thresholds are learned per channel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, Conv2d, ConvSpec};
use crate::tensor::{
    visit_prefixed, visit_prefixed_mut, Parameter, Parameterized, Real, Shape, Tensor,
};

/// Lower bound kept on every shrinkage threshold after an optimizer step.
pub const MIN_THRESHOLD: f64 = 1e-6;

/// Std of the Gaussian used for reconstruction (output) layers.
pub const RECON_INIT_STD: f64 = 1e-3;

fn he_std(spec: &ConvSpec) -> f64 {
    (2.0 / spec.fan_in() as f64).sqrt()
}

/// Missing fields take their [`Default`] values when deserializing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScnConfig {
    /// Number of sparse-code channels `n`.
    pub dict_size: usize,
    /// Unrolled iterations `k`.
    pub stages: usize,
    pub feature_channels: usize,
    pub feature_kernel: usize,
    pub recon_kernel: usize,
    pub residual: bool,
    pub threshold_init: f64,
}

impl Default for ScnConfig {
    fn default() -> Self {
        Self {
            dict_size: 128,
            stages: 3,
            feature_channels: 100,
            feature_kernel: 9,
            recon_kernel: 5,
            residual: true,
            threshold_init: Self::default_threshold(),
        }
    }
}

fn check_kernel(field: &str, k: usize) -> Result<()> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::config(
            field,
            format!("kernel must be odd and positive, got {k}"),
        ));
    }
    Ok(())
}

impl ScnConfig {
    fn default_threshold() -> f64 {
        0.1
    }

    pub fn with_dict_size(dict_size: usize) -> Self {
        Self {
            dict_size,
            ..Self::default()
        }
    }

    /// Structural checks only: positive sizes and odd kernels.
    pub fn validate_shape(&self) -> Result<()> {
        if self.dict_size == 0 {
            return Err(Error::config("dict_size", "must be positive"));
        }
        if self.stages == 0 {
            return Err(Error::config("stages", "must be at least 1"));
        }
        if self.feature_channels == 0 {
            return Err(Error::config("feature_channels", "must be positive"));
        }
        check_kernel("feature_kernel", self.feature_kernel)?;
        check_kernel("recon_kernel", self.recon_kernel)?;
        if !self.threshold_init.is_finite() || self.threshold_init < MIN_THRESHOLD {
            return Err(Error::config(
                "threshold_init",
                format!(
                    "must be finite and >= {MIN_THRESHOLD}, got {}",
                    self.threshold_init
                ),
            ));
        }
        Ok(())
    }

    /// Full validation for building a trainable expert: also `dict_size` in 8..=1024.
    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        if !(8..=1024).contains(&self.dict_size) {
            return Err(Error::config(
                "dict_size",
                format!("must be in 8..=1024, got {}", self.dict_size),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrcnnConfig {
    /// Channel widths of the two hidden layers.
    pub widths: [usize; 2],
    /// Kernel sizes of the three layers.
    pub kernels: [usize; 3],
    pub residual: bool,
}

impl Default for SrcnnConfig {
    fn default() -> Self {
        Self {
            widths: [64, 32],
            kernels: [9, 1, 5],
            residual: false,
        }
    }
}

impl SrcnnConfig {
    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.widths.iter().enumerate() {
            if *w == 0 {
                return Err(Error::config(format!("widths[{i}]"), "must be positive"));
            }
        }
        for (i, k) in self.kernels.iter().enumerate() {
            check_kernel(&format!("kernels[{i}]"), *k)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExpertConfig {
    Scn(ScnConfig),
    Srcnn(SrcnnConfig),
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ExpertConfig::Scn(c) => c.validate(),
            ExpertConfig::Srcnn(c) => c.validate(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ExpertConfig::Scn(_) => "scn",
            ExpertConfig::Srcnn(_) => "srcnn",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScnExpert<T = f32> {
    pub config: ScnConfig,
    pub feature: Conv2d<T>,
    pub code_init: Conv2d<T>,
    /// Present only when `stages >= 2`.
    pub lateral: Option<Conv2d<T>>,
    pub thresholds: Parameter<T>,
    pub recon: Conv2d<T>,
}

#[derive(Clone, Debug)]
pub struct ScnCache<T> {
    y: Tensor<T>,
    features: Tensor<T>,
    /// Pre-shrinkage activations, one per stage.
    pre: Vec<Tensor<T>>,
    /// Codes after shrinkage, one per stage.
    codes: Vec<Tensor<T>>,
}

impl<T: Real> ScnExpert<T> {
    /// All-zero weights, thresholds at `threshold_init`.
    pub fn zeros(config: &ScnConfig) -> Result<Self> {
        config.validate_shape()?;
        let (m, n) = (config.feature_channels, config.dict_size);
        let thresholds = Tensor::filled(
            Shape::new(1, 1, 1, n),
            T::from_f64_lossy(config.threshold_init),
        );
        Ok(Self {
            config: config.clone(),
            feature: Conv2d::zeros(ConvSpec::same(1, m, config.feature_kernel), true),
            code_init: Conv2d::zeros(ConvSpec::same(m, n, 1), true),
            lateral: (config.stages >= 2).then(|| Conv2d::zeros(ConvSpec::same(n, n, 1), false)),
            thresholds: Parameter::new(thresholds).with_min_value(T::from_f64_lossy(MIN_THRESHOLD)),
            recon: Conv2d::zeros(ConvSpec::same(n, 1, config.recon_kernel), true),
        })
    }

    pub fn init<R: Rng + ?Sized>(config: &ScnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut e = Self::zeros(config)?;
        for layer in [&mut e.feature, &mut e.code_init] {
            layer.weight.value = Tensor::randn(layer.spec.weight_shape(), he_std(&layer.spec), rng);
        }
        if let Some(lateral) = e.lateral.as_mut() {
            lateral.weight.value =
                Tensor::randn(lateral.spec.weight_shape(), he_std(&lateral.spec), rng);
        }
        e.recon.weight.value = Tensor::randn(e.recon.spec.weight_shape(), RECON_INIT_STD, rng);
        Ok(e)
    }

    fn run(&self, y: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Option<ScnCache<T>>)> {
        y.expect_shape("scn_forward", y.shape().with_channels(1))?;
        let theta = self.thresholds.value.data();
        let features = self.feature.forward(y)?;
        let wf = self.code_init.forward(&features)?;
        let mut pre = Vec::new();
        let mut codes: Vec<Tensor<T>> = Vec::new();
        let mut u = wf.clone();
        let mut z = ops::soft_shrink(&u, theta)?;
        for _ in 1..self.config.stages {
            let lateral = self
                .lateral
                .as_ref()
                .expect("lateral layer exists when stages >= 2");
            let mut next = lateral.forward(&z)?;
            // W f + S z, in that order
            next.data_mut()
                .iter_mut()
                .zip(wf.data())
                .for_each(|(s, &w)| *s = w + *s);
            let z_next = ops::soft_shrink(&next, theta)?;
            if keep {
                pre.push(std::mem::replace(&mut u, next));
                codes.push(std::mem::replace(&mut z, z_next));
            } else {
                u = next;
                z = z_next;
            }
        }
        let mut out = self.recon.forward(&z)?;
        if self.config.residual {
            out.add_assign(y)?;
        }
        let cache = keep.then(|| {
            pre.push(u);
            codes.push(z);
            ScnCache {
                y: y.clone(),
                features,
                pre,
                codes,
            }
        });
        Ok((out, cache))
    }

    pub fn forward(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(y, false)?.0)
    }

    pub fn forward_cached(&self, y: &Tensor<T>) -> Result<(Tensor<T>, ScnCache<T>)> {
        let (out, cache) = self.run(y, true)?;
        Ok((out, cache.expect("cache kept")))
    }

    pub fn backward(
        &mut self,
        cache: &ScnCache<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        if cache.codes.len() != self.config.stages || cache.pre.len() != self.config.stages {
            return Err(Error::MissingCache("scn backward"));
        }
        let theta = self.thresholds.value.data().to_vec();
        let last = cache.codes.last().expect("stages >= 1");
        let mut gz = self
            .recon
            .backward(last, grad_out, true)?
            .expect("input grad requested");
        let mut gwf = Tensor::zeros(cache.pre[0].shape());
        for t in (0..self.config.stages).rev() {
            let (gu, gtheta) = ops::soft_shrink_backward(&cache.pre[t], &theta, &gz)?;
            self.thresholds
                .grad
                .data_mut()
                .iter_mut()
                .zip(gtheta)
                .for_each(|(a, b)| *a += b);
            gwf.add_assign(&gu)?;
            if t > 0 {
                let lateral = self.lateral.as_mut().expect("lateral layer exists");
                gz = lateral
                    .backward(&cache.codes[t - 1], &gu, true)?
                    .expect("input grad requested");
            }
        }
        let gf = self
            .code_init
            .backward(&cache.features, &gwf, true)?
            .expect("input grad requested");
        let gy = self.feature.backward(&cache.y, &gf, need_input_grad)?;
        Ok(match (gy, need_input_grad && self.config.residual) {
            (Some(mut gy), true) => {
                gy.add_assign(grad_out)?;
                Some(gy)
            }
            (gy, _) => gy,
        })
    }

    pub fn cast<U: Real>(&self) -> ScnExpert<U> {
        ScnExpert {
            config: self.config.clone(),
            feature: self.feature.cast(),
            code_init: self.code_init.cast(),
            lateral: self.lateral.as_ref().map(|l| l.cast()),
            thresholds: self.thresholds.cast(),
            recon: self.recon.cast(),
        }
    }
}

impl<T: Real> Parameterized<T> for ScnExpert<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter<T>)) {
        visit_prefixed("feature", &self.feature, f);
        visit_prefixed("code_init", &self.code_init, f);
        if let Some(l) = &self.lateral {
            visit_prefixed("lateral", l, f);
        }
        f("thresholds", &self.thresholds);
        visit_prefixed("recon", &self.recon, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        visit_prefixed_mut("feature", &mut self.feature, f);
        visit_prefixed_mut("code_init", &mut self.code_init, f);
        if let Some(l) = &mut self.lateral {
            visit_prefixed_mut("lateral", l, f);
        }
        f("thresholds", &mut self.thresholds);
        visit_prefixed_mut("recon", &mut self.recon, f);
    }
}

#[derive(Clone, Debug)]
pub struct SrcnnExpert<T = f32> {
    pub config: SrcnnConfig,
    pub layers: [Conv2d<T>; 3],
}

#[derive(Clone, Debug)]
pub struct SrcnnCache<T> {
    y: Tensor<T>,
    /// Pre-activation of layers 1 and 2.
    pre: [Tensor<T>; 2],
    /// Post-ReLU hidden activations.
    hidden: [Tensor<T>; 2],
}

impl<T: Real> SrcnnExpert<T> {
    pub fn zeros(config: &SrcnnConfig) -> Result<Self> {
        config.validate()?;
        let [w1, w2] = config.widths;
        let [k1, k2, k3] = config.kernels;
        Ok(Self {
            config: config.clone(),
            layers: [
                Conv2d::zeros(ConvSpec::same(1, w1, k1), true),
                Conv2d::zeros(ConvSpec::same(w1, w2, k2), true),
                Conv2d::zeros(ConvSpec::same(w2, 1, k3), true),
            ],
        })
    }

    pub fn init<R: Rng + ?Sized>(config: &SrcnnConfig, rng: &mut R) -> Result<Self> {
        let mut e = Self::zeros(config)?;
        for (i, layer) in e.layers.iter_mut().enumerate() {
            let std = if i == 2 {
                RECON_INIT_STD
            } else {
                he_std(&layer.spec)
            };
            layer.weight.value = Tensor::randn(layer.spec.weight_shape(), std, rng);
        }
        Ok(e)
    }

    fn run(&self, y: &Tensor<T>) -> Result<(Tensor<T>, SrcnnCache<T>)> {
        y.expect_shape("srcnn_forward", y.shape().with_channels(1))?;
        let a1 = self.layers[0].forward(y)?;
        let h1 = ops::relu(&a1);
        let a2 = self.layers[1].forward(&h1)?;
        let h2 = ops::relu(&a2);
        let mut out = self.layers[2].forward(&h2)?;
        if self.config.residual {
            out.add_assign(y)?;
        }
        Ok((
            out,
            SrcnnCache {
                y: y.clone(),
                pre: [a1, a2],
                hidden: [h1, h2],
            },
        ))
    }

    pub fn forward(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(y)?.0)
    }

    pub fn forward_cached(&self, y: &Tensor<T>) -> Result<(Tensor<T>, SrcnnCache<T>)> {
        self.run(y)
    }

    pub fn backward(
        &mut self,
        cache: &SrcnnCache<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let g2 = self.layers[2]
            .backward(&cache.hidden[1], grad_out, true)?
            .expect("input grad requested");
        let g2 = ops::relu_backward(&cache.pre[1], &g2)?;
        let g1 = self.layers[1]
            .backward(&cache.hidden[0], &g2, true)?
            .expect("input grad requested");
        let g1 = ops::relu_backward(&cache.pre[0], &g1)?;
        let gy = self.layers[0].backward(&cache.y, &g1, need_input_grad)?;
        Ok(match (gy, need_input_grad && self.config.residual) {
            (Some(mut gy), true) => {
                gy.add_assign(grad_out)?;
                Some(gy)
            }
            (gy, _) => gy,
        })
    }

    pub fn cast<U: Real>(&self) -> SrcnnExpert<U> {
        SrcnnExpert {
            config: self.config.clone(),
            layers: [
                self.layers[0].cast(),
                self.layers[1].cast(),
                self.layers[2].cast(),
            ],
        }
    }
}

impl<T: Real> Parameterized<T> for SrcnnExpert<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            visit_prefixed(&format!("conv{}", i + 1), l, f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            visit_prefixed_mut(&format!("conv{}", i + 1), l, f);
        }
    }
}

#[derive(Clone, Debug)]
pub enum Expert<T = f32> {
    Scn(ScnExpert<T>),
    Srcnn(SrcnnExpert<T>),
}

/// Activations saved by [`Expert::forward_cached`]. `Empty` stands for "no forward ran".
#[derive(Clone, Debug, Default)]
pub enum ExpertCache<T> {
    #[default]
    Empty,
    Scn(ScnCache<T>),
    Srcnn(SrcnnCache<T>),
}

impl<T: Real> Expert<T> {
    /// Zero-weight expert of the given architecture.
    pub fn zeros(config: &ExpertConfig) -> Result<Self> {
        Ok(match config {
            ExpertConfig::Scn(c) => Expert::Scn(ScnExpert::zeros(c)?),
            ExpertConfig::Srcnn(c) => Expert::Srcnn(SrcnnExpert::zeros(c)?),
        })
    }

    pub fn init<R: Rng + ?Sized>(config: &ExpertConfig, rng: &mut R) -> Result<Self> {
        Ok(match config {
            ExpertConfig::Scn(c) => Expert::Scn(ScnExpert::init(c, rng)?),
            ExpertConfig::Srcnn(c) => Expert::Srcnn(SrcnnExpert::init(c, rng)?),
        })
    }

    pub fn config(&self) -> ExpertConfig {
        match self {
            Expert::Scn(e) => ExpertConfig::Scn(e.config.clone()),
            Expert::Srcnn(e) => ExpertConfig::Srcnn(e.config.clone()),
        }
    }

    pub fn forward(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Expert::Scn(e) => e.forward(y),
            Expert::Srcnn(e) => e.forward(y),
        }
    }

    pub fn forward_cached(&self, y: &Tensor<T>) -> Result<(Tensor<T>, ExpertCache<T>)> {
        Ok(match self {
            Expert::Scn(e) => {
                let (o, c) = e.forward_cached(y)?;
                (o, ExpertCache::Scn(c))
            }
            Expert::Srcnn(e) => {
                let (o, c) = e.forward_cached(y)?;
                (o, ExpertCache::Srcnn(c))
            }
        })
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. `y` if requested.
    pub fn backward(
        &mut self,
        cache: &ExpertCache<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        match (self, cache) {
            (Expert::Scn(e), ExpertCache::Scn(c)) => e.backward(c, grad_out, need_input_grad),
            (Expert::Srcnn(e), ExpertCache::Srcnn(c)) => e.backward(c, grad_out, need_input_grad),
            _ => Err(Error::MissingCache("expert backward")),
        }
    }

    pub fn cast<U: Real>(&self) -> Expert<U> {
        match self {
            Expert::Scn(e) => Expert::Scn(e.cast()),
            Expert::Srcnn(e) => Expert::Srcnn(e.cast()),
        }
    }
}

impl<T: Real> Parameterized<T> for Expert<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter<T>)) {
        match self {
            Expert::Scn(e) => e.visit_params(f),
            Expert::Srcnn(e) => e.visit_params(f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        match self {
            Expert::Scn(e) => e.visit_params_mut(f),
            Expert::Srcnn(e) => e.visit_params_mut(f),
        }
    }
}

/// Builds a Gaussian-initialized expert, reproducible from `seed`.
pub fn make_expert(config: &ExpertConfig, seed: u64) -> Result<Expert<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Expert::init(config, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, m: usize, k: usize) -> ScnConfig {
        ScnConfig {
            dict_size: n,
            stages: k,
            feature_channels: m,
            feature_kernel: 3,
            recon_kernel: 3,
            residual: true,
            threshold_init: 0.1,
        }
    }

    fn randomize<T: Real>(net: &mut dyn Parameterized<T>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.visit_params_mut(&mut |name, p| {
            if name == "thresholds" {
                p.value = Tensor::uniform(p.shape(), 0.05, 0.3, &mut rng);
            } else {
                p.value = Tensor::randn(p.shape(), 0.4, &mut rng);
            }
        });
    }

    #[test]
    fn zero_network_with_skip_is_identity() {
        let e = ScnExpert::<f32>::zeros(&ScnConfig::with_dict_size(8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = Tensor::uniform(Shape::new(2, 1, 12, 10), 0.0, 1.0, &mut rng);
        assert_eq!(e.forward(&y).unwrap(), y);
    }

    #[test]
    fn config_validation_names_field() {
        let bad = ExpertConfig::Scn(ScnConfig {
            dict_size: 4,
            ..ScnConfig::default()
        });
        let msg = make_expert(&bad, 0).unwrap_err().to_string();
        assert!(msg.contains("dict_size"), "{msg}");
        let bad = ExpertConfig::Scn(ScnConfig {
            recon_kernel: 4,
            ..ScnConfig::default()
        });
        assert!(make_expert(&bad, 0)
            .unwrap_err()
            .to_string()
            .contains("recon_kernel"));
        let bad = ExpertConfig::Srcnn(SrcnnConfig {
            widths: [0, 32],
            ..SrcnnConfig::default()
        });
        assert!(make_expert(&bad, 0)
            .unwrap_err()
            .to_string()
            .contains("widths[0]"));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let cfg = ExpertConfig::Scn(ScnConfig::with_dict_size(32));
        let a = make_expert(&cfg, 9).unwrap();
        let b = make_expert(&cfg, 9).unwrap();
        let mut va = Vec::new();
        a.visit_params(&mut |_, p| va.extend_from_slice(p.value.data()));
        let mut vb = Vec::new();
        b.visit_params(&mut |_, p| vb.extend_from_slice(p.value.data()));
        assert_eq!(va, vb);
        let Expert::Scn(s) = a else { unreachable!() };
        assert_eq!(s.thresholds.value.len(), 32);
        assert!(s.thresholds.value.data().iter().all(|&t| t == 0.1));
    }

    #[test]
    fn single_stage_has_no_lateral_term() {
        let mut e = ScnExpert::<f64>::zeros(&tiny(4, 4, 1)).unwrap();
        randomize(&mut e, 1);
        assert!(e.lateral.is_none());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = Tensor::uniform(Shape::new(1, 1, 8, 8), 0.0, 1.0, &mut rng);
        let f = e.feature.forward(&y).unwrap();
        let z =
            ops::soft_shrink(&e.code_init.forward(&f).unwrap(), e.thresholds.value.data()).unwrap();
        let mut expected = e.recon.forward(&z).unwrap();
        expected.add_assign(&y).unwrap();
        assert_eq!(e.forward(&y).unwrap(), expected);
    }

    #[test]
    fn zero_lateral_makes_extra_stage_a_no_op() {
        let mut one = ScnExpert::<f32>::zeros(&tiny(4, 4, 1)).unwrap();
        randomize(&mut one, 3);
        let mut two = ScnExpert::<f32>::zeros(&tiny(4, 4, 2)).unwrap();
        two.feature = one.feature.clone();
        two.code_init = one.code_init.clone();
        two.thresholds = one.thresholds.clone();
        two.recon = one.recon.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = Tensor::uniform(Shape::new(1, 1, 8, 8), 0.0, 1.0, &mut rng);
        assert_eq!(one.forward(&y).unwrap(), two.forward(&y).unwrap());

        two.lateral.as_mut().unwrap().weight.value =
            Tensor::randn(Shape::new(4, 4, 1, 1), 0.5, &mut rng);
        assert_ne!(one.forward(&y).unwrap(), two.forward(&y).unwrap());
    }

    #[test]
    fn srcnn_zero_and_identity() {
        let cfg = SrcnnConfig {
            widths: [1, 1],
            kernels: [3, 1, 1],
            residual: false,
        };
        let mut e = SrcnnExpert::<f32>::zeros(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = Tensor::uniform(Shape::new(1, 1, 7, 7), 0.0, 1.0, &mut rng);
        assert!(e.forward(&y).unwrap().data().iter().all(|&v| v == 0.0));

        e.layers[0].weight.value.set(0, 0, 1, 1, 1.0);
        e.layers[1].weight.value.fill(1.0);
        e.layers[2].weight.value.fill(1.0);
        assert_eq!(e.forward(&y).unwrap(), y);
    }

    #[test]
    fn empty_or_mismatched_cache_rejected() {
        let mut e: Expert<f32> =
            make_expert(&ExpertConfig::Scn(ScnConfig::with_dict_size(8)), 0).unwrap();
        let g = Tensor::zeros(Shape::new(1, 1, 8, 8));
        assert!(matches!(
            e.backward(&ExpertCache::Empty, &g, false),
            Err(Error::MissingCache(_))
        ));
        let mut other: Expert<f32> =
            make_expert(&ExpertConfig::Srcnn(SrcnnConfig::default()), 0).unwrap();
        let (_, cache) = other.forward_cached(&g).unwrap();
        assert!(e.backward(&cache, &g, false).is_err());
        assert!(other.backward(&cache, &g, false).is_ok());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut e = ScnExpert::<f32>::zeros(&tiny(4, 4, 2)).unwrap();
        randomize(&mut e, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = Tensor::uniform(Shape::new(1, 1, 8, 8), 0.0, 1.0, &mut rng);
        let (out, cache) = e.forward_cached(&y).unwrap();
        let gy = e
            .backward(&cache, &Tensor::zeros(out.shape()), true)
            .unwrap()
            .unwrap();
        assert!(gy.data().iter().all(|&v| v == 0.0));
        e.visit_params(&mut |_, p| assert!(p.grad.data().iter().all(|&v| v == 0.0)));
    }
}
