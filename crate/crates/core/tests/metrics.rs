use mixsr_core::imaging::PlanarImage;
use mixsr_core::metrics::{psnr, ssim};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic_pair(seed: u64, w: usize, h: usize) -> (PlanarImage, PlanarImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: f32 = rng.random_range(0.0..6.0);
    let a = PlanarImage::from_fn(w, h, |x, y| {
        0.5 + 0.3 * ((x as f32 * 0.3 + phase).sin() * (y as f32 * 0.2).cos())
    })
    .unwrap();
    let amp: f32 = rng.random_range(0.01..0.2);
    let noise: Vec<f32> = (0..w * h).map(|_| rng.random_range(-amp..amp)).collect();
    let b = PlanarImage::new(
        w,
        h,
        1,
        a.data().iter().zip(&noise).map(|(v, n)| v + n).collect(),
    )
    .unwrap();
    (a, b)
}

fn level(v: f32) -> i64 {
    // round half away from zero on the 0..255 grid
    let s = v as f64 * 255.0;
    if s >= 0.0 {
        (s + 0.5).floor() as i64
    } else {
        (s - 0.5).ceil() as i64
    }
}

/// Two passes: integer squared-error total, then the log.
fn psnr_reference(a: &PlanarImage, b: &PlanarImage) -> f64 {
    let mut sse: i64 = 0;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = level(*x) - level(*y);
        sse += d * d;
    }
    if sse == 0 {
        return f64::INFINITY;
    }
    let mse = sse as f64 / a.data().len() as f64;
    20.0 * 255f64.log10() - 10.0 * mse.log10()
}

/// Direct per-window evaluation with an explicit 2-D Gaussian.
fn ssim_reference(a: &PlanarImage, b: &PlanarImage) -> f64 {
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let px = |img: &PlanarImage, x: usize, y: usize| level(img.get(0, x, y)) as f64;
    let (w, h) = (a.width(), a.height());
    let mut sum = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let g = win[i][j] / total;
                    ma += g * px(a, x0 + j, y0 + i);
                    mb += g * px(b, x0 + j, y0 + i);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let g = win[i][j] / total;
                    let da = px(a, x0 + j, y0 + i) - ma;
                    let db = px(b, x0 + j, y0 + i) - mb;
                    va += g * da * da;
                    vb += g * db * db;
                    cov += g * da * db;
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

#[test]
fn uniform_one_level_difference() {
    let a = PlanarImage::from_fn(20, 20, |x, y| ((x * 7 + y * 3) % 250) as f32 / 255.0).unwrap();
    let b =
        PlanarImage::from_fn(20, 20, |x, y| ((x * 7 + y * 3) % 250 + 1) as f32 / 255.0).unwrap();
    let p = psnr(&a, &b).unwrap();
    assert!((p - 48.1308).abs() <= 1e-4, "{p}");
    assert!((p - 20.0 * 255f64.log10()).abs() < 1e-9);
}

#[test]
fn self_similarity() {
    let (a, _) = synthetic_pair(1, 32, 32);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
}

#[test]
fn matches_scalar_references_on_ten_pairs() {
    for seed in 0..10 {
        let (a, b) = synthetic_pair(seed, 32, 32);
        let (p, p_ref) = (psnr(&a, &b).unwrap(), psnr_reference(&a, &b));
        assert!((p - p_ref).abs() <= 1e-6, "seed {seed}: {p} vs {p_ref}");
        let (s, s_ref) = (ssim(&a, &b).unwrap(), ssim_reference(&a, &b));
        assert!((s - s_ref).abs() <= 1e-6, "seed {seed}: {s} vs {s_ref}");
    }
}

#[test]
fn ssim_is_symmetric() {
    let (a, b) = synthetic_pair(3, 24, 40);
    assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-9);
}

#[test]
fn larger_noise_never_raises_psnr() {
    let (a, _) = synthetic_pair(4, 40, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base: Vec<f32> = (0..1600).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut last = f64::INFINITY;
    for amp in [0.0, 0.005, 0.01, 0.02, 0.05, 0.1] {
        let noisy = PlanarImage::new(
            40,
            40,
            1,
            a.data()
                .iter()
                .zip(&base)
                .map(|(v, n)| v + amp * n)
                .collect(),
        )
        .unwrap();
        let p = psnr(&a, &noisy).unwrap();
        assert!(p <= last, "amp {amp}: {p} > {last}");
        last = p;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ssim_bounded_and_flip_invariant(seed in 0u64..10_000, w in 11usize..24, h in 11usize..24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = PlanarImage::new(w, h, 1, (0..w * h).map(|_| rng.random()).collect()).unwrap();
        let b = PlanarImage::new(w, h, 1, (0..w * h).map(|_| rng.random()).collect()).unwrap();
        let s = ssim(&a, &b).unwrap();
        prop_assert!(s.abs() <= 1.0);
        let (fa, fb) = (a.flip_horizontal(), b.flip_horizontal());
        prop_assert!((ssim(&fa, &fb).unwrap() - s).abs() <= 1e-9);
        prop_assert!((psnr(&fa, &fb).unwrap() - psnr(&a, &b).unwrap()).abs() <= 1e-9);
    }
}
