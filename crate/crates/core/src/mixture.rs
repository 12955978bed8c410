//! The gating (adaptive weight) network and the full mixture
//! `F(y) = sum_i W_i(y) * F_i(y)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::{Expert, ExpertCache, ExpertConfig, RECON_INIT_STD};
use crate::ops::{self, Conv2d, ConvSpec};
use crate::tensor::{
    visit_prefixed, visit_prefixed_mut, Parameter, Parameterized, Real, Shape, Tensor,
};

/// What the last gating layer's responses go through before they become weight maps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateActivation {
    #[default]
    Linear,
    Relu,
    /// Per-pixel softmax across experts.
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightModuleConfig {
    #[serde(default = "WeightModuleConfig::default_hidden")]
    pub hidden: [usize; 2],
    #[serde(default = "WeightModuleConfig::default_kernel")]
    pub kernel: usize,
    #[serde(default)]
    pub gate: GateActivation,
}

impl Default for WeightModuleConfig {
    fn default() -> Self {
        Self {
            hidden: Self::default_hidden(),
            kernel: Self::default_kernel(),
            gate: GateActivation::Linear,
        }
    }
}

impl WeightModuleConfig {
    fn default_hidden() -> [usize; 2] {
        [32, 16]
    }

    fn default_kernel() -> usize {
        5
    }

    pub fn validate(&self) -> Result<()> {
        for (i, h) in self.hidden.iter().enumerate() {
            if *h == 0 {
                return Err(Error::config(
                    format!("weight_module.hidden[{i}]"),
                    "must be positive",
                ));
            }
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::config(
                "weight_module.kernel",
                format!("must be odd and positive, got {}", self.kernel),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct WeightModule<T = f32> {
    pub config: WeightModuleConfig,
    pub layers: [Conv2d<T>; 3],
}

#[derive(Clone, Debug)]
struct WeightCache<T> {
    y: Tensor<T>,
    pre: [Tensor<T>; 2],
    hidden: [Tensor<T>; 2],
    /// Last-layer responses before the gate activation.
    logits: Tensor<T>,
}

impl<T: Real> WeightModule<T> {
    pub fn zeros(config: &WeightModuleConfig, experts: usize) -> Result<Self> {
        config.validate()?;
        if experts == 0 {
            return Err(Error::config("experts", "need at least one expert"));
        }
        let [h1, h2] = config.hidden;
        let k = config.kernel;
        Ok(Self {
            config: config.clone(),
            layers: [
                Conv2d::zeros(ConvSpec::same(1, h1, k), true),
                Conv2d::zeros(ConvSpec::same(h1, h2, k), true),
                Conv2d::zeros(ConvSpec::same(h2, experts, k), true),
            ],
        })
    }

    /// Gaussian weights; last-layer bias `1/N` so every expert starts with equal weight.
    pub fn init<R: Rng + ?Sized>(
        config: &WeightModuleConfig,
        experts: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut wm = Self::zeros(config, experts)?;
        for (i, layer) in wm.layers.iter_mut().enumerate() {
            let std = if i == 2 {
                RECON_INIT_STD
            } else {
                (2.0 / layer.spec.fan_in() as f64).sqrt()
            };
            layer.weight.value = Tensor::randn(layer.spec.weight_shape(), std, rng);
        }
        let bias = T::from_f64_lossy(1.0 / experts as f64);
        wm.layers[2]
            .bias
            .as_mut()
            .expect("gating layers carry a bias")
            .value
            .fill(bias);
        Ok(wm)
    }

    pub fn experts(&self) -> usize {
        self.layers[2].spec.out_channels
    }

    fn run(&self, y: &Tensor<T>) -> Result<(Tensor<T>, WeightCache<T>)> {
        y.expect_shape("weight_forward", y.shape().with_channels(1))?;
        let a1 = self.layers[0].forward(y)?;
        let h1 = ops::relu(&a1);
        let a2 = self.layers[1].forward(&h1)?;
        let h2 = ops::relu(&a2);
        let logits = self.layers[2].forward(&h2)?;
        let maps = match self.config.gate {
            GateActivation::Linear => logits.clone(),
            GateActivation::Relu => ops::relu(&logits),
            GateActivation::Softmax => ops::channel_softmax(&logits),
        };
        Ok((
            maps,
            WeightCache {
                y: y.clone(),
                pre: [a1, a2],
                hidden: [h1, h2],
                logits,
            },
        ))
    }

    /// One weight map per expert, same spatial size as `y`.
    pub fn forward(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(y)?.0)
    }

    fn backward(
        &mut self,
        cache: &WeightCache<T>,
        maps: &Tensor<T>,
        grad_maps: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let g = match self.config.gate {
            GateActivation::Linear => grad_maps.clone(),
            GateActivation::Relu => ops::relu_backward(&cache.logits, grad_maps)?,
            GateActivation::Softmax => ops::channel_softmax_backward(maps, grad_maps)?,
        };
        let g = self.layers[2]
            .backward(&cache.hidden[1], &g, true)?
            .expect("input grad requested");
        let g = ops::relu_backward(&cache.pre[1], &g)?;
        let g = self.layers[1]
            .backward(&cache.hidden[0], &g, true)?
            .expect("input grad requested");
        let g = ops::relu_backward(&cache.pre[0], &g)?;
        self.layers[0].backward(&cache.y, &g, need_input_grad)
    }

    pub fn cast<U: Real>(&self) -> WeightModule<U> {
        WeightModule {
            config: self.config.clone(),
            layers: [
                self.layers[0].cast(),
                self.layers[1].cast(),
                self.layers[2].cast(),
            ],
        }
    }
}

impl<T: Real> Parameterized<T> for WeightModule<T> {
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

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub experts: Vec<ExpertConfig>,
    /// Required for two or more experts; with one expert it may be omitted
    /// and the gate is implicitly all-ones.
    pub weight_module: Option<WeightModuleConfig>,
}

impl MixtureConfig {
    /// `count` identical experts; the gating network is added when `count >= 2`.
    pub fn uniform(count: usize, expert: ExpertConfig) -> Self {
        Self {
            experts: vec![expert; count],
            weight_module: (count >= 2).then(WeightModuleConfig::default),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.experts.is_empty() {
            return Err(Error::config("experts", "need at least one expert"));
        }
        if self.experts.len() >= 2 && self.weight_module.is_none() {
            return Err(Error::config(
                "weight_module",
                format!("required for {} experts", self.experts.len()),
            ));
        }
        for (i, e) in self.experts.iter().enumerate() {
            e.validate().map_err(|err| match err {
                Error::InvalidConfig { field, reason } => {
                    Error::config(format!("experts[{i}].{field}"), reason)
                }
                other => other,
            })?;
        }
        if let Some(wm) = &self.weight_module {
            wm.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MixtureNetwork<T = f32> {
    pub experts: Vec<Expert<T>>,
    pub weight_module: Option<WeightModule<T>>,
}

/// Output of [`MixtureNetwork::forward`]: the aggregate plus its ingredients.
#[derive(Clone, Debug)]
pub struct MixtureOutput<T> {
    pub hr: Tensor<T>,
    /// `(B, N, H, W)`; all ones when the gate is implicit.
    pub weight_maps: Tensor<T>,
    pub estimates: Vec<Tensor<T>>,
}

#[derive(Clone, Debug, Default)]
pub struct MixtureCache<T> {
    experts: Vec<ExpertCache<T>>,
    weights: Option<WeightCache<T>>,
    maps: Option<Tensor<T>>,
    estimates: Vec<Tensor<T>>,
}

impl<T: Real> MixtureNetwork<T> {
    pub fn new(experts: Vec<Expert<T>>, weight_module: Option<WeightModule<T>>) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::config("experts", "need at least one expert"));
        }
        match &weight_module {
            None if experts.len() >= 2 => {
                return Err(Error::config(
                    "weight_module",
                    format!("required for {} experts", experts.len()),
                ))
            }
            Some(wm) if wm.experts() != experts.len() => {
                return Err(Error::config(
                    "weight_module",
                    format!(
                        "produces {} maps for {} experts",
                        wm.experts(),
                        experts.len()
                    ),
                ))
            }
            _ => {}
        }
        Ok(Self {
            experts,
            weight_module,
        })
    }

    /// Zero-weight network of the given architecture (used when loading models).
    pub fn zeros(config: &MixtureConfig) -> Result<Self> {
        let experts = config
            .experts
            .iter()
            .map(Expert::zeros)
            .collect::<Result<Vec<_>>>()?;
        let wm = config
            .weight_module
            .as_ref()
            .map(|c| WeightModule::zeros(c, experts.len()))
            .transpose()?;
        Self::new(experts, wm)
    }

    pub fn init<R: Rng + ?Sized>(config: &MixtureConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let experts = config
            .experts
            .iter()
            .map(|c| Expert::init(c, rng))
            .collect::<Result<Vec<_>>>()?;
        let wm = config
            .weight_module
            .as_ref()
            .map(|c| WeightModule::init(c, experts.len(), rng))
            .transpose()?;
        Self::new(experts, wm)
    }

    pub fn from_seed(config: &MixtureConfig, seed: u64) -> Result<Self> {
        Self::init(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Number of experts `N`.
    pub fn n(&self) -> usize {
        self.experts.len()
    }

    pub fn config(&self) -> MixtureConfig {
        MixtureConfig {
            experts: self.experts.iter().map(|e| e.config()).collect(),
            weight_module: self.weight_module.as_ref().map(|w| w.config.clone()),
        }
    }

    fn run(&self, y: &Tensor<T>, keep: bool) -> Result<(MixtureOutput<T>, MixtureCache<T>)> {
        y.expect_shape("mixture_forward", y.shape().with_channels(1))?;
        let mut cache = MixtureCache::default();
        let mut estimates = Vec::with_capacity(self.n());
        for e in &self.experts {
            if keep {
                let (out, c) = e.forward_cached(y)?;
                estimates.push(out);
                cache.experts.push(c);
            } else {
                estimates.push(e.forward(y)?);
            }
        }
        let Some(wm) = &self.weight_module else {
            // implicit all-ones gate: the sole estimate is the output, untouched
            let hr = estimates[0].clone();
            let maps = Tensor::filled(y.shape(), T::one());
            if keep {
                cache.estimates = estimates.clone();
            }
            return Ok((
                MixtureOutput {
                    hr,
                    weight_maps: maps,
                    estimates,
                },
                cache,
            ));
        };
        let (maps, wcache) = wm.run(y)?;
        let hr = ops::pointwise_mul_sum(&maps, &estimates)?;
        if keep {
            cache.weights = Some(wcache);
            cache.maps = Some(maps.clone());
            cache.estimates = estimates.clone();
        }
        Ok((
            MixtureOutput {
                hr,
                weight_maps: maps,
                estimates,
            },
            cache,
        ))
    }

    pub fn forward(&self, y: &Tensor<T>) -> Result<MixtureOutput<T>> {
        Ok(self.run(y, false)?.0)
    }

    pub fn forward_cached(&self, y: &Tensor<T>) -> Result<(MixtureOutput<T>, MixtureCache<T>)> {
        self.run(y, true)
    }

    /// Weight maps only.
    pub fn weight_maps(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.weight_module {
            Some(wm) => wm.forward(y),
            None => Ok(Tensor::filled(y.shape(), T::one())),
        }
    }

    /// Accumulates gradients for the gating network and every expert; returns
    /// the gradient w.r.t. the input if requested.
    pub fn backward(
        &mut self,
        cache: &MixtureCache<T>,
        grad_hr: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        if cache.experts.len() != self.n() || cache.estimates.len() != self.n() {
            return Err(Error::MissingCache("mixture backward"));
        }
        let mut gy: Option<Tensor<T>> = None;
        let mut accumulate = |g: Option<Tensor<T>>| -> Result<()> {
            match (gy.as_mut(), g) {
                (Some(acc), Some(g)) => acc.add_assign(&g)?,
                (None, Some(g)) => gy = Some(g),
                _ => {}
            }
            Ok(())
        };

        let Some(wm) = self.weight_module.as_mut() else {
            let g = self.experts[0].backward(&cache.experts[0], grad_hr, need_input_grad)?;
            accumulate(g)?;
            return Ok(gy);
        };
        let (Some(wcache), Some(maps)) = (&cache.weights, &cache.maps) else {
            return Err(Error::MissingCache("mixture backward (weight module)"));
        };
        let (gmaps, gest) = ops::pointwise_mul_sum_backward(maps, &cache.estimates, grad_hr)?;
        accumulate(wm.backward(wcache, maps, &gmaps, need_input_grad)?)?;
        for ((e, c), g) in self.experts.iter_mut().zip(&cache.experts).zip(&gest) {
            accumulate(e.backward(c, g, need_input_grad)?)?;
        }
        Ok(gy)
    }

    pub fn cast<U: Real>(&self) -> MixtureNetwork<U> {
        MixtureNetwork {
            experts: self.experts.iter().map(|e| e.cast()).collect(),
            weight_module: self.weight_module.as_ref().map(|w| w.cast()),
        }
    }
}

impl<T: Real> Parameterized<T> for MixtureNetwork<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter<T>)) {
        for (i, e) in self.experts.iter().enumerate() {
            visit_prefixed(&format!("experts.{i}"), e, f);
        }
        if let Some(wm) = &self.weight_module {
            visit_prefixed("weight_module", wm, f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        for (i, e) in self.experts.iter_mut().enumerate() {
            visit_prefixed_mut(&format!("experts.{i}"), e, f);
        }
        if let Some(wm) = &mut self.weight_module {
            visit_prefixed_mut("weight_module", wm, f);
        }
    }
}

/// Per-pixel index of the largest weight map, `(B, H, W)` row-major.
/// Ties go to the lowest index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

pub fn max_label_map<T: Real>(weight_maps: &Tensor<T>) -> LabelMap {
    let s = weight_maps.shape();
    let plane = s.plane();
    let mut labels = vec![0u32; s.batch * plane];
    for b in 0..s.batch {
        for p in 0..plane {
            let mut best = 0usize;
            let mut best_v = weight_maps.data()[b * s.channels * plane + p];
            for c in 1..s.channels {
                let v = weight_maps.data()[(b * s.channels + c) * plane + p];
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            labels[b * plane + p] = best as u32;
        }
    }
    LabelMap {
        batch: s.batch,
        height: s.height,
        width: s.width,
        labels,
    }
}

impl LabelMap {
    pub fn at(&self, b: usize, y: usize, x: usize) -> u32 {
        self.labels[(b * self.height + y) * self.width + x]
    }
}

/// Shape helper for a single-image, single-channel tensor.
pub fn image_shape(height: usize, width: usize) -> Shape {
    Shape::new(1, 1, height, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::{make_expert, ScnConfig};

    fn tiny_scn() -> ExpertConfig {
        ExpertConfig::Scn(ScnConfig {
            dict_size: 8,
            stages: 1,
            feature_channels: 4,
            feature_kernel: 3,
            recon_kernel: 3,
            residual: true,
            threshold_init: 0.1,
        })
    }

    #[test]
    fn zero_weight_module_gives_zero_maps() {
        let wm = WeightModule::<f32>::zeros(&WeightModuleConfig::default(), 3).unwrap();
        let y = Tensor::filled(image_shape(6, 6), 0.5);
        let maps = wm.forward(&y).unwrap();
        assert_eq!(maps.shape().channels, 3);
        assert!(maps.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_only_gate_is_all_ones() {
        let mut wm = WeightModule::<f32>::zeros(&WeightModuleConfig::default(), 1).unwrap();
        wm.layers[2].bias.as_mut().unwrap().value.fill(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = Tensor::uniform(image_shape(7, 5), 0.0, 1.0, &mut rng);
        assert!(wm.forward(&y).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn one_hot_gate_selects_expert() {
        let cfg = MixtureConfig::uniform(4, tiny_scn());
        let mut net = MixtureNetwork::<f32>::from_seed(&cfg, 1).unwrap();
        let wm = net.weight_module.as_mut().unwrap();
        wm.layers[2].weight.value.fill(0.0);
        wm.layers[2]
            .bias
            .as_mut()
            .unwrap()
            .value
            .data_mut()
            .copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = Tensor::uniform(image_shape(8, 8), 0.0, 1.0, &mut rng);
        let out = net.forward(&y).unwrap();
        assert_eq!(out.hr, out.estimates[0]);
    }

    #[test]
    fn single_expert_equals_bare_expert() {
        let expert = make_expert(&tiny_scn(), 3).unwrap();
        let net = MixtureNetwork::new(vec![expert.clone()], None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = Tensor::uniform(image_shape(9, 9), 0.0, 1.0, &mut rng);
        assert_eq!(net.forward(&y).unwrap().hr, expert.forward(&y).unwrap());
    }

    #[test]
    fn missing_weight_module_rejected() {
        let experts = vec![
            make_expert(&tiny_scn(), 0).unwrap(),
            make_expert(&tiny_scn(), 1).unwrap(),
        ];
        assert!(MixtureNetwork::new(experts, None).is_err());
        let cfg = MixtureConfig {
            experts: vec![tiny_scn(), tiny_scn()],
            weight_module: None,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn label_map_ties_go_low() {
        let maps = Tensor::from_vec(Shape::new(1, 4, 1, 1), vec![0.2f32, 0.7, 0.7, 0.1]).unwrap();
        assert_eq!(max_label_map(&maps).labels, vec![1]);
        let single = Tensor::<f32>::filled(Shape::new(2, 1, 3, 3), -4.0);
        assert!(max_label_map(&single).labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn empty_cache_rejected() {
        let mut net =
            MixtureNetwork::<f32>::from_seed(&MixtureConfig::uniform(2, tiny_scn()), 0).unwrap();
        let g = Tensor::zeros(image_shape(8, 8));
        assert!(matches!(
            net.backward(&MixtureCache::default(), &g, false),
            Err(Error::MissingCache(_))
        ));
    }
}
