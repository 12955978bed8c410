//! Central finite-difference gradient checker.
//!
//! A fragment is any pure function of an input tensor and a set of parameters
//! that produces a scalar loss. The checker compares the fragment's analytic
//! gradients with `(L(x + h) - L(x - h)) / 2h` for every parameter group and
//! for the input. Coordinates where the difference quotient at `h` and `h / 2`
//! disagree sit on a kink of a piecewise-linear layer and are counted as
//! skipped rather than compared.
//!
//! Run the fragment with `T = f64` to get the tight 64-bit mode.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::experts::Expert;
use crate::mixture::MixtureNetwork;
use crate::ops::{self, Conv2d};
use crate::tensor::{Parameter, Parameterized, Real, Shape, Tensor};

/// A differentiable scalar-valued network fragment.
pub trait GradFragment<T: Real>: Parameterized<T> {
    fn loss(&self, input: &Tensor<T>) -> Result<f64>;

    /// Loss plus gradients: parameter gradients are accumulated into each
    /// `Parameter::grad`, the input gradient is returned.
    fn loss_and_grad(&mut self, input: &Tensor<T>) -> Result<(f64, Tensor<T>)>;
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor, as a fraction of the largest analytic gradient in the group.
    pub relative_floor: f64,
    /// Absolute denominator floor.
    pub absolute_floor: f64,
    /// Groups with more coordinates are checked on a seeded random subset.
    pub max_coords_per_group: usize,
    /// Largest fraction of kink-skipped coordinates tolerated per group.
    pub max_skipped_fraction: f64,
    pub seed: u64,
    pub check_input: bool,
    /// Largest relative disagreement between the quotients at `h` and `h / 2`
    /// before a coordinate is treated as sitting on a kink.
    pub kink_tolerance: f64,
    /// Retries at h/10, h/100, ... for coordinates that look like kinks.
    pub refinements: u32,
}

impl GradCheckConfig {
    /// Step 1e-3, relative error 1e-2.
    pub fn single_precision() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-2,
            // f32 rounding in the forward pass puts ~1e-4 of the group scale
            // of noise on every difference quotient
            relative_floor: 1e-2,
            absolute_floor: 1e-6,
            max_coords_per_group: 64,
            max_skipped_fraction: 0.2,
            seed: 0,
            check_input: true,
            kink_tolerance: 1e-2,
            refinements: 2,
        }
    }

    /// Relative error 1e-2 for f32 kernels checked through
    /// [`gradient_check_widened`]; the noise-free quotients allow the tight
    /// kink test and denominator floor of the 64-bit mode.
    pub fn single_precision_widened() -> Self {
        Self {
            relative_floor: 1e-3,
            kink_tolerance: 1e-5,
            ..Self::single_precision()
        }
    }

    /// Step 1e-3, relative error 1e-5.
    pub fn double_precision() -> Self {
        Self {
            tolerance: 1e-5,
            kink_tolerance: 1e-5,
            relative_floor: 1e-6,
            absolute_floor: 1e-12,
            ..Self::single_precision()
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Coordinate with the largest error and its (analytic, numeric) pair.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub max_skipped_fraction: f64,
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| self.group_passed(g))
    }

    pub fn group_passed(&self, g: &GroupReport) -> bool {
        let total = g.checked + g.skipped;
        let skipped_ok =
            total == 0 || (g.skipped as f64) <= self.max_skipped_fraction * total as f64;
        g.max_rel_error <= self.tolerance && skipped_ok && g.checked > 0
    }

    pub fn max_rel_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_rel_error)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            writeln!(
                f,
                "{:<32} checked {:>4} skipped {:>3} max rel err {:.3e} {}",
                g.name,
                g.checked,
                g.skipped,
                g.max_rel_error,
                if self.group_passed(g) { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

enum Target {
    Param(usize),
    Input,
}

fn perturb<N: Real, F: GradFragment<N>>(
    frag: &mut F,
    input: &mut Tensor<N>,
    target: &Target,
    index: usize,
    value: N,
) {
    match *target {
        Target::Input => input.data_mut()[index] = value,
        Target::Param(g) => {
            let mut k = 0;
            frag.visit_params_mut(&mut |_, p| {
                if k == g {
                    p.value.data_mut()[index] = value;
                }
                k += 1;
            });
        }
    }
}

fn current_value<N: Real, F: GradFragment<N>>(
    frag: &F,
    input: &Tensor<N>,
    target: &Target,
    index: usize,
) -> N {
    match *target {
        Target::Input => input.data()[index],
        Target::Param(g) => {
            let mut v = N::zero();
            let mut k = 0;
            frag.visit_params(&mut |_, p| {
                if k == g {
                    v = p.value.data()[index];
                }
                k += 1;
            });
            v
        }
    }
}

/// Central difference at step `h`, with both evaluation points rounded onto
/// the grid of the analytic precision `A`.
fn central_difference<A: Real, N: Real, F: GradFragment<N>>(
    frag: &mut F,
    input: &mut Tensor<N>,
    target: &Target,
    index: usize,
    x0: N,
    h: f64,
) -> Result<f64> {
    let on_grid = |v: f64| N::from_f64_lossy(A::from_f64_lossy(v).to_f64_lossy());
    let plus = on_grid(x0.to_f64_lossy() + h);
    let minus = on_grid(x0.to_f64_lossy() - h);
    perturb(frag, input, target, index, plus);
    let lp = frag.loss(input)?;
    perturb(frag, input, target, index, minus);
    let lm = frag.loss(input)?;
    perturb(frag, input, target, index, x0);
    // the representable step, not the requested one
    Ok((lp - lm) / (plus.to_f64_lossy() - minus.to_f64_lossy()))
}

/// Checks every parameter group of `frag` (and the input) against central differences.
pub fn gradient_check<T: Real, F: GradFragment<T>>(
    frag: &mut F,
    input: &Tensor<T>,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    gradient_check_excluding(frag, input, config, &|_, _| false)
}

/// As [`gradient_check`], never comparing coordinates for which `exclude(group, index)` holds.
pub fn gradient_check_excluding<T: Real, F: GradFragment<T>>(
    frag: &mut F,
    input: &Tensor<T>,
    config: &GradCheckConfig,
    exclude: &dyn Fn(&str, usize) -> bool,
) -> Result<GradCheckReport> {
    let groups = analytic_groups(frag, input, config)?;
    compare::<T, T, F>(frag, input, groups, config, exclude)
}

/// Checks the analytic gradients of `frag` against difference quotients of
/// `oracle`, which must hold the same parameters in a wider type.
///
/// With `frag` in f32 and `oracle` its f64 cast, the backward kernels run in
/// 32-bit while the difference quotients differentiate the same function
/// (same f32 parameters, steps between f32-representable points) without
/// the `eps * |L| / h` rounding noise of a 32-bit forward pass.
pub fn gradient_check_widened<A, N, FA, FN>(
    frag: &mut FA,
    oracle: &mut FN,
    input: &Tensor<A>,
    config: &GradCheckConfig,
    exclude: &dyn Fn(&str, usize) -> bool,
) -> Result<GradCheckReport>
where
    A: Real,
    N: Real,
    FA: GradFragment<A>,
    FN: GradFragment<N>,
{
    let groups = analytic_groups(frag, input, config)?;
    let names = oracle.param_names();
    let layout: Vec<&str> = groups
        .iter()
        .filter(|g| matches!(g.1, Target::Param(_)))
        .map(|g| g.0.as_str())
        .collect();
    if names.iter().map(String::as_str).ne(layout.iter().copied()) {
        return Err(crate::Error::InvalidArgument {
            op: "gradient_check_widened",
            reason: "oracle has a different parameter layout".into(),
        });
    }
    compare::<A, N, FN>(oracle, &input.cast(), groups, config, exclude)
}

type Group = (String, Target, Vec<f64>);

fn analytic_groups<T: Real, F: GradFragment<T>>(
    frag: &mut F,
    input: &Tensor<T>,
    config: &GradCheckConfig,
) -> Result<Vec<Group>> {
    frag.zero_grad();
    let (_, input_grad) = frag.loss_and_grad(input)?;
    let mut groups: Vec<Group> = Vec::new();
    let mut k = 0;
    frag.visit_params(&mut |name, p: &Parameter<T>| {
        let analytic = p.grad.data().iter().map(|v| v.to_f64_lossy()).collect();
        groups.push((name.to_string(), Target::Param(k), analytic));
        k += 1;
    });
    if config.check_input {
        let analytic = input_grad.data().iter().map(|v| v.to_f64_lossy()).collect();
        groups.push(("input".to_string(), Target::Input, analytic));
    }
    Ok(groups)
}

fn compare<A: Real, N: Real, F: GradFragment<N>>(
    frag: &mut F,
    input: &Tensor<N>,
    groups: Vec<Group>,
    config: &GradCheckConfig,
    exclude: &dyn Fn(&str, usize) -> bool,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input = input.clone();
    let mut reports = Vec::with_capacity(groups.len());
    for (name, target, analytic) in groups {
        let n = analytic.len();
        let mut coords: Vec<usize> = if n > config.max_coords_per_group {
            sample(&mut rng, n, config.max_coords_per_group).into_vec()
        } else {
            (0..n).collect()
        };
        coords.sort_unstable();
        let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = config.absolute_floor.max(config.relative_floor * scale);

        let mut report = GroupReport {
            name: name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst: None,
        };
        for i in coords {
            if exclude(&name, i) {
                continue;
            }
            let x0 = current_value(frag, &input, &target, i);
            // a kink within the step shows up as disagreement between h and h/2;
            // retry closer in before giving up on the coordinate
            let mut numeric = None;
            let mut h = config.step;
            for _ in 0..=config.refinements {
                let d_full = central_difference::<A, N, F>(frag, &mut input, &target, i, x0, h)?;
                let d_half =
                    central_difference::<A, N, F>(frag, &mut input, &target, i, x0, h / 2.0)?;
                let spread = (d_full - d_half).abs() / d_full.abs().max(d_half.abs()).max(floor);
                if spread <= config.kink_tolerance {
                    numeric = Some(d_full);
                    break;
                }
                h /= 10.0;
            }
            let Some(d_full) = numeric else {
                report.skipped += 1;
                continue;
            };
            let a = analytic[i];
            let rel = (a - d_full).abs() / a.abs().max(d_full.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((i, a, d_full));
            }
        }
        reports.push(report);
    }
    Ok(GradCheckReport {
        tolerance: config.tolerance,
        max_skipped_fraction: config.max_skipped_fraction,
        groups: reports,
    })
}

/// Overwrites every parameter with a generic value. Conv weights get
/// N(0, gain^2 / fan_in), vectors N(0, gain^2), and lower-bounded parameters
/// such as shrinkage thresholds U(0.05, 0.3).
pub fn randomize_params<T: Real, P: Parameterized<T> + ?Sized>(net: &mut P, gain: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    net.visit_params_mut(&mut |_, p| {
        let shape = p.shape();
        let fan_in = shape.channels * shape.height * shape.width;
        let is_vector = shape.batch == 1 && shape.channels == 1 && shape.height == 1;
        p.value = if p.min_value.is_some() {
            Tensor::uniform(shape, 0.05, 0.3, &mut rng)
        } else if is_vector {
            Tensor::randn(shape, gain, &mut rng)
        } else {
            Tensor::randn(shape, gain / (fan_in as f64).sqrt(), &mut rng)
        };
    });
}

/// `L = sum(out^2)` and its gradient `2 out`.
pub fn sum_of_squares<T: Real>(out: &Tensor<T>) -> (f64, Tensor<T>) {
    let loss = out.data().iter().map(|v| v.to_f64_lossy().powi(2)).sum();
    (loss, out.map(|v| v + v))
}

/// One convolution layer under `L = sum(out^2)`.
pub struct ConvFragment<T: Real> {
    pub layer: Conv2d<T>,
}

impl<T: Real> Parameterized<T> for ConvFragment<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter<T>)) {
        self.layer.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        self.layer.visit_params_mut(f)
    }
}

impl<T: Real> GradFragment<T> for ConvFragment<T> {
    fn loss(&self, input: &Tensor<T>) -> Result<f64> {
        Ok(sum_of_squares(&self.layer.forward(input)?).0)
    }

    fn loss_and_grad(&mut self, input: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        let out = self.layer.forward(input)?;
        let (loss, g) = sum_of_squares(&out);
        let gin = self.layer.backward(input, &g, true)?.expect("input grad");
        Ok((loss, gin))
    }
}

/// ReLU under `L = sum(out^2)`; only an input gradient.
pub struct ReluFragment;

impl<T: Real> Parameterized<T> for ReluFragment {
    fn visit_params(&self, _: &mut dyn FnMut(&str, &Parameter<T>)) {}
    fn visit_params_mut(&mut self, _: &mut dyn FnMut(&str, &mut Parameter<T>)) {}
}

impl<T: Real> GradFragment<T> for ReluFragment {
    fn loss(&self, input: &Tensor<T>) -> Result<f64> {
        Ok(sum_of_squares(&ops::relu(input)).0)
    }

    fn loss_and_grad(&mut self, input: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        let (loss, g) = sum_of_squares(&ops::relu(input));
        Ok((loss, ops::relu_backward(input, &g)?))
    }
}

/// Soft shrinkage with learnable thresholds under `L = sum(out^2)`.
pub struct ShrinkFragment<T: Real> {
    pub thresholds: Parameter<T>,
}

impl<T: Real> ShrinkFragment<T> {
    pub fn new(thresholds: &[T]) -> Self {
        let shape = Shape::new(1, 1, 1, thresholds.len());
        Self {
            thresholds: Parameter::new(
                Tensor::from_vec(shape, thresholds.to_vec()).expect("length matches"),
            ),
        }
    }
}

impl<T: Real> Parameterized<T> for ShrinkFragment<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter<T>)) {
        f("thresholds", &self.thresholds)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        f("thresholds", &mut self.thresholds)
    }
}

impl<T: Real> GradFragment<T> for ShrinkFragment<T> {
    fn loss(&self, input: &Tensor<T>) -> Result<f64> {
        Ok(sum_of_squares(&ops::soft_shrink(input, self.thresholds.value.data())?).0)
    }

    fn loss_and_grad(&mut self, input: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        let theta = self.thresholds.value.data().to_vec();
        let (loss, g) = sum_of_squares(&ops::soft_shrink(input, &theta)?);
        let (gin, gt) = ops::soft_shrink_backward(input, &theta, &g)?;
        self.thresholds
            .grad
            .data_mut()
            .iter_mut()
            .zip(gt)
            .for_each(|(a, b)| *a += b);
        Ok((loss, gin))
    }
}

/// Pixel-wise aggregation with the weight maps as the fragment input and the
/// estimates as parameters, under `L = sum(out^2)`.
pub struct MixFragment<T: Real> {
    pub estimates: Vec<Parameter<T>>,
}

impl<T: Real> Parameterized<T> for MixFragment<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter<T>)) {
        for (i, p) in self.estimates.iter().enumerate() {
            f(&format!("estimate{i}"), p);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        for (i, p) in self.estimates.iter_mut().enumerate() {
            f(&format!("estimate{i}"), p);
        }
    }
}

impl<T: Real> MixFragment<T> {
    fn values(&self) -> Vec<Tensor<T>> {
        self.estimates.iter().map(|p| p.value.clone()).collect()
    }
}

impl<T: Real> GradFragment<T> for MixFragment<T> {
    fn loss(&self, maps: &Tensor<T>) -> Result<f64> {
        Ok(sum_of_squares(&ops::pointwise_mul_sum(maps, &self.values())?).0)
    }

    fn loss_and_grad(&mut self, maps: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        let est = self.values();
        let (loss, g) = sum_of_squares(&ops::pointwise_mul_sum(maps, &est)?);
        let (gw, gf) = ops::pointwise_mul_sum_backward(maps, &est, &g)?;
        for (p, g) in self.estimates.iter_mut().zip(gf) {
            p.grad.add_assign(&g)?;
        }
        Ok((loss, gw))
    }
}

/// Mean squared error against a fixed target, prediction as input.
pub struct MseFragment<T: Real> {
    pub target: Tensor<T>,
}

impl<T: Real> Parameterized<T> for MseFragment<T> {
    fn visit_params(&self, _: &mut dyn FnMut(&str, &Parameter<T>)) {}
    fn visit_params_mut(&mut self, _: &mut dyn FnMut(&str, &mut Parameter<T>)) {}
}

impl<T: Real> GradFragment<T> for MseFragment<T> {
    fn loss(&self, prediction: &Tensor<T>) -> Result<f64> {
        Ok(ops::mse_loss(prediction, &self.target)?.0)
    }

    fn loss_and_grad(&mut self, prediction: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        ops::mse_loss(prediction, &self.target)
    }
}

/// Channel softmax under `L = sum(r * out)` for a fixed random projection `r`.
pub struct SoftmaxFragment<T: Real> {
    pub projection: Tensor<T>,
}

impl<T: Real> Parameterized<T> for SoftmaxFragment<T> {
    fn visit_params(&self, _: &mut dyn FnMut(&str, &Parameter<T>)) {}
    fn visit_params_mut(&mut self, _: &mut dyn FnMut(&str, &mut Parameter<T>)) {}
}

impl<T: Real> GradFragment<T> for SoftmaxFragment<T> {
    fn loss(&self, input: &Tensor<T>) -> Result<f64> {
        let out = ops::channel_softmax(input);
        Ok(out
            .data()
            .iter()
            .zip(self.projection.data())
            .map(|(a, b)| a.to_f64_lossy() * b.to_f64_lossy())
            .sum())
    }

    fn loss_and_grad(&mut self, input: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        let loss = self.loss(input)?;
        let out = ops::channel_softmax(input);
        Ok((loss, ops::channel_softmax_backward(&out, &self.projection)?))
    }
}

/// A whole expert under `L = sum(out^2)`.
pub struct ExpertFragment<T: Real> {
    pub expert: Expert<T>,
}

impl<T: Real> Parameterized<T> for ExpertFragment<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter<T>)) {
        self.expert.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        self.expert.visit_params_mut(f)
    }
}

impl<T: Real> GradFragment<T> for ExpertFragment<T> {
    fn loss(&self, input: &Tensor<T>) -> Result<f64> {
        Ok(sum_of_squares(&self.expert.forward(input)?).0)
    }

    fn loss_and_grad(&mut self, input: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        let (out, cache) = self.expert.forward_cached(input)?;
        let (loss, g) = sum_of_squares(&out);
        let gin = self.expert.backward(&cache, &g, true)?.expect("input grad");
        Ok((loss, gin))
    }
}

/// A full mixture network under mean squared error against a fixed target.
pub struct MixtureFragment<T: Real> {
    pub net: MixtureNetwork<T>,
    pub target: Tensor<T>,
}

impl<T: Real> Parameterized<T> for MixtureFragment<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter<T>)) {
        self.net.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        self.net.visit_params_mut(f)
    }
}

impl<T: Real> GradFragment<T> for MixtureFragment<T> {
    fn loss(&self, input: &Tensor<T>) -> Result<f64> {
        Ok(ops::mse_loss(&self.net.forward(input)?.hr, &self.target)?.0)
    }

    fn loss_and_grad(&mut self, input: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        let (out, cache) = self.net.forward_cached(input)?;
        let (loss, g) = ops::mse_loss(&out.hr, &self.target)?;
        let gin = self.net.backward(&cache, &g, true)?.expect("input grad");
        Ok((loss, gin))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::ConvSpec;

    /// A fragment whose analytic gradient is deliberately wrong must fail.
    struct Broken(Parameter<f64>);

    impl Parameterized<f64> for Broken {
        fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter<f64>)) {
            f("w", &self.0)
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<f64>)) {
            f("w", &mut self.0)
        }
    }

    impl GradFragment<f64> for Broken {
        fn loss(&self, x: &Tensor<f64>) -> Result<f64> {
            let w = self.0.value.data()[0];
            Ok(x.data().iter().map(|v| (w * v).powi(2)).sum())
        }
        fn loss_and_grad(&mut self, x: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
            let w = self.0.value.data()[0];
            let g: f64 = x.data().iter().map(|v| 2.0 * w * v * v).sum();
            self.0.grad.data_mut()[0] += 1.1 * g;
            Ok((self.loss(x)?, x.map(|v| 2.0 * w * w * v)))
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut frag = Broken(Parameter::new(Tensor::filled(Shape::new(1, 1, 1, 1), 0.8)));
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.3, -1.0, 2.0]).unwrap();
        let report = gradient_check(&mut frag, &x, &GradCheckConfig::double_precision()).unwrap();
        assert!(!report.passed());
        assert!(report.groups[0].max_rel_error > 0.05);
        assert!(report.group_passed(&report.groups[1]));
    }

    #[test]
    fn single_conv_layer_passes_in_both_precisions() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = Conv2d::<f64>::gaussian(ConvSpec::same(2, 3, 3), true, 0.5, &mut rng);
        let x = Tensor::<f64>::randn(Shape::new(1, 2, 6, 6), 1.0, &mut rng);

        let mut f64_frag = ConvFragment {
            layer: layer.clone(),
        };
        let r = gradient_check(&mut f64_frag, &x, &GradCheckConfig::double_precision()).unwrap();
        assert!(r.passed(), "{r}");

        let mut f32_frag = ConvFragment {
            layer: layer.cast::<f32>(),
        };
        let r = gradient_check(
            &mut f32_frag,
            &x.cast::<f32>(),
            &GradCheckConfig::single_precision(),
        )
        .unwrap();
        assert!(
            r.passed(),
            "{r}\n{:?}",
            r.groups.iter().map(|g| g.worst).collect::<Vec<_>>()
        );
    }
}
