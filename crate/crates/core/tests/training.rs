use mixsr_core::experts::{ExpertConfig, ScnConfig};
use mixsr_core::imaging::{
    bicubic_resize, degrade, shave_border, AugmentConfig, PatchSampler, PlanarImage,
};
use mixsr_core::inference::{Bicubic, Upscaler};
use mixsr_core::metrics::{psnr, ssim};
use mixsr_core::mixture::{MixtureConfig, MixtureNetwork};
use mixsr_core::ops::mse_loss;
use mixsr_core::store::{load_model, to_bytes, TrainingInfo};
use mixsr_core::training::{
    read_loss_log, sgd_step, train, validate, validate_with, NamedImage, SgdParams, TrainConfig,
    TrainOutputs,
};
use mixsr_core::{Error, Parameterized, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn texture(w: usize, h: usize, seed: u64) -> PlanarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: Vec<(f32, f32, f32)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.05..0.6),
                rng.random_range(0.05..0.6),
                rng.random_range(0.0..6.0),
            )
        })
        .collect();
    PlanarImage::from_fn(w, h, |x, y| {
        let v: f32 = f
            .iter()
            .map(|(a, b, p)| (a * x as f32 + b * y as f32 + p).sin())
            .sum();
        0.5 + 0.1 * v
    })
    .unwrap()
}

fn tiny_mixture(seed: u64) -> MixtureNetwork {
    let expert = ScnConfig {
        feature_channels: 16,
        ..ScnConfig::with_dict_size(8)
    };
    MixtureNetwork::from_seed(&MixtureConfig::uniform(2, ExpertConfig::Scn(expert)), seed).unwrap()
}

fn small_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        patch_size: 16,
        stride: 8,
        max_iterations: iterations,
        checkpoint_every: 3,
        augment: AugmentConfig::none(),
        lr_experts: 1e-4,
        lr_weight_module: 1e-4,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_iterations_writes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutputs::new(dir.path());
    let mut net = tiny_mixture(1);
    let initial = to_bytes(
        &net,
        TrainingInfo {
            iteration: 0,
            scale: 2,
        },
    );
    let state = train(
        &mut net,
        &[texture(32, 32, 0)],
        &small_config(0),
        Some(&out),
        |_| {},
    )
    .unwrap();
    assert_eq!(state.iteration, 0);
    assert_eq!(std::fs::read(out.model()).unwrap(), initial);
    assert!(read_loss_log(&out.loss_log()).unwrap().is_empty());
}

#[test]
fn outputs_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutputs::new(dir.path());
    let mut net = tiny_mixture(2);
    let mut seen = 0;
    let state = train(
        &mut net,
        &[texture(32, 32, 1)],
        &small_config(7),
        Some(&out),
        |r| {
            seen += 1;
            assert_eq!(r.iteration, seen);
        },
    )
    .unwrap();
    assert_eq!(seen, 7);
    assert_eq!(state.last_checkpoint, Some(out.checkpoint(6)));
    assert!(out.checkpoint(3).exists());
    let log = read_loss_log(&out.loss_log()).unwrap();
    assert_eq!(log, state.history);
    assert_eq!(log[0].loss, log[0].ema_loss);
    let (loaded, info) = load_model(out.model()).unwrap();
    assert_eq!(
        info,
        TrainingInfo {
            iteration: 7,
            scale: 2
        }
    );
    assert_eq!(to_bytes(&loaded, info), to_bytes(&net, info));
}

#[test]
fn same_seed_gives_identical_logs_on_one_thread() {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let run = |dir: &std::path::Path| {
        let out = TrainOutputs::new(dir);
        let mut net = tiny_mixture(3);
        pool.install(|| {
            train(
                &mut net,
                &[texture(40, 36, 2)],
                &small_config(5),
                Some(&out),
                |_| {},
            )
        })
        .unwrap();
        (
            std::fs::read(out.loss_log()).unwrap(),
            std::fs::read(out.model()).unwrap(),
        )
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run(a.path()), run(b.path()));
}

#[test]
fn nan_loss_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutputs::new(dir.path());
    let mut net = tiny_mixture(4);
    net.visit_params_mut(&mut |name, p| {
        if name == "experts.1.recon.bias" {
            p.value.fill(f32::NAN);
        }
    });
    match train(
        &mut net,
        &[texture(32, 32, 3)],
        &small_config(5),
        Some(&out),
        |_| {},
    ) {
        Err(Error::NumericAbort {
            iteration: 1,
            last_checkpoint: None,
            reason,
        }) => assert!(reason.contains("NaN"), "{reason}"),
        other => panic!("{:?}", other.map(|s| s.iteration)),
    }
    assert!(!out.model().exists());
    assert!(read_loss_log(&out.loss_log()).unwrap().is_empty());
}

#[test]
fn small_step_decreases_loss_on_a_fixed_batch() {
    let corpus = [texture(48, 48, 9)];
    let mut failures = 0;
    for seed in 0..10 {
        let mut sampler =
            PatchSampler::new(&corpus, 2, 16, 8, &AugmentConfig::none(), seed).unwrap();
        let (x, y) = sampler.next_batch(4);
        let mut net = tiny_mixture(100 + seed);
        let loss = |net: &MixtureNetwork| mse_loss(&net.forward(&x).unwrap().hr, &y).unwrap().0;
        let before = loss(&net);
        let (out, cache) = net.forward_cached(&x).unwrap();
        let (_, g) = mse_loss(&out.hr, &y).unwrap();
        net.backward(&cache, &g, false).unwrap();
        let r = SgdParams {
            momentum: 0.0,
            lr_weight_module: 1e-6,
            lr_experts: 1e-6,
            clip_norm: None,
        };
        sgd_step(&mut net, &r).unwrap();
        if loss(&net) >= before {
            failures += 1;
        }
    }
    assert!(failures <= 1, "{failures} of 10 seeds did not decrease");
}

fn val_set() -> Vec<NamedImage> {
    (0..3)
        .map(|i| {
            NamedImage::new(
                format!("img{i}"),
                texture(30 + 2 * i, 28 + 3 * i, 20 + i as u64),
            )
        })
        .collect()
}

#[test]
fn bicubic_baseline_matches_manual_metrics() {
    for scale in [2, 3, 4] {
        let table = validate_with(&Bicubic, &val_set(), scale).unwrap();
        assert_eq!(table.all_rows().count(), 4);
        for (row, img) in table.rows.iter().zip(val_set()) {
            let d = degrade(&img.image, scale).unwrap();
            let lr = d.lr.quantize();
            let up = bicubic_resize(&lr, d.hr.width(), d.hr.height(), true).unwrap();
            let a = shave_border(&up, scale).unwrap();
            let b = shave_border(&d.hr, scale).unwrap();
            assert_eq!(row.name, img.name);
            assert_eq!(row.psnr, psnr(&a, &b).unwrap());
            assert_eq!(row.ssim, ssim(&a, &b).unwrap());
        }
        let mean = table.rows.iter().map(|r| r.psnr).sum::<f64>() / 3.0;
        assert!((table.mean.psnr - mean).abs() < 1e-12);
    }
}

/// Returns whichever ground truth has the requested size.
struct Oracle(Vec<PlanarImage>);

impl Upscaler for Oracle {
    fn upscale(&self, _: &PlanarImage, width: usize, height: usize) -> Result<PlanarImage> {
        Ok(self
            .0
            .iter()
            .find(|g| (g.width(), g.height()) == (width, height))
            .unwrap()
            .clone())
    }
}

#[test]
fn perfect_prediction() {
    let set = val_set();
    let truths = set
        .iter()
        .map(|i| degrade(&i.image, 2).unwrap().hr)
        .collect();
    let table = validate_with(&Oracle(truths), &set, 2).unwrap();
    for row in table.all_rows() {
        assert_eq!(row.psnr, f64::INFINITY);
        assert_eq!(row.ssim, 1.0);
    }
}

#[test]
fn checkpoint_round_trip_preserves_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutputs::new(dir.path());
    let mut net = tiny_mixture(7);
    train(
        &mut net,
        &[texture(32, 32, 5)],
        &small_config(2),
        Some(&out),
        |_| {},
    )
    .unwrap();
    let (loaded, info) = load_model(out.model()).unwrap();
    for scale in [2, 3] {
        let a = validate(&net, 2, &val_set(), scale).unwrap();
        let b = validate(&loaded, info.scale, &val_set(), scale).unwrap();
        assert_eq!(a, b);
    }
}
