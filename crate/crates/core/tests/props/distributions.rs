//! Mask distribution and approximating families.

use advdrop::distributions::quadrature::integrate;
use advdrop::distributions::{mean_mask, Density, InverseGamma, LogNormal, ModelFreeDist, SoftplusGaussian};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Logit of the smallest normal double. Masks below it cannot be told
/// apart in f64, so that tail's mass is added in closed form.
const T_MIN: f64 = -708.0;

const BREAKS: [f64; 17] = [
    T_MIN, -200.0, -100.0, -50.0, -30.0, -20.0, -15.0, -10.0, -7.0, -5.0, -4.0, -3.0, -2.0, -1.5, -1.0, -0.5, 0.0,
];

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        x.exp() / (1.0 + x.exp())
    }
}

/// Mass of `d` on `sigmoid(t)` for `t ∈ [lo, hi] ⊂ [T_MIN, 0]`, integrating
/// `pdf(m) · dm/dt` in logit space so the endpoint singularity disappears.
fn lower_mass(d: &ModelFreeDist, lo: f64, hi: f64) -> f64 {
    let tail = if lo <= T_MIN {
        Normal::new(d.mu, d.sigma()).unwrap().cdf(T_MIN)
    } else {
        0.0
    };
    assert!(tail < 1e-5, "unrepresentable tail {tail} would dominate the check");
    let f = |t: f64| {
        let m = sigmoid(t);
        (d.ln_pdf(m) - softplus(-t) - softplus(t)).exp()
    };
    let mut cuts = vec![lo];
    cuts.extend(BREAKS.iter().copied().filter(|&b| b > lo && b < hi));
    cuts.push(hi);
    tail + cuts
        .windows(2)
        .map(|w| integrate(f, w[0], w[1], 1e-13, 1e-12).expect("quadrature").value)
        .sum::<f64>()
}

/// Mass of `[k/n, (k+1)/n)`. Upper bins use the mirror identity
/// `pdf_μ(1 − m) = pdf_{−μ}(m)`, since masks near 1 are not resolvable in f64.
fn bin_mass(mu: f64, sigma: f64, k: usize, n: usize) -> f64 {
    if 2 * (k + 1) > n {
        return bin_mass(-mu, sigma, n - 1 - k, n);
    }
    let d = ModelFreeDist::new(mu, sigma);
    let logit = |m: f64| m.ln() - (-m).ln_1p();
    let lo = if k == 0 { T_MIN } else { logit(k as f64 / n as f64) };
    lower_mass(&d, lo, logit((k + 1) as f64 / n as f64))
}

pub fn pdf_mirror_identity() {
    for (mu, sigma) in [(-3.0, 0.5), (0.0, 1.0), (3.0, 3.0), (1.0, 150.0)] {
        let a = ModelFreeDist::new(mu, sigma);
        let b = ModelFreeDist::new(-mu, sigma);
        for i in 1..500 {
            let m = i as f64 / 1000.0;
            let (x, y) = (a.pdf(1.0 - m).unwrap(), b.pdf(m).unwrap());
            assert!((x - y).abs() <= 1e-9 * y.max(1e-300), "mu {mu} sigma {sigma} m {m}: {x} vs {y}");
        }
    }
}

pub fn model_free_pdf_normalizes() {
    for mu in [-3.0, 0.0, 3.0] {
        for sigma in [0.5, 1.0, 3.0, 150.0] {
            let lower = lower_mass(&ModelFreeDist::new(mu, sigma), T_MIN, 0.0);
            let upper = lower_mass(&ModelFreeDist::new(-mu, sigma), T_MIN, 0.0);
            let total = lower + upper;
            assert!((total - 1.0).abs() <= 1e-6, "mu {mu} sigma {sigma}: integral {total}");
        }
    }
}

/// `∫ p(y) dy` over `(0, ∞)` with `y = eˢ`.
fn positive_integral(d: &impl Density) -> f64 {
    let f = |s: f64| (d.ln_pdf(s.exp()) + s).exp();
    (-80..40)
        .map(|k| integrate(f, k as f64, (k + 1) as f64, 1e-14, 1e-12).unwrap().value)
        .sum()
}

pub fn families_normalize_and_sample_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (m, s) in [(-2.0, 0.5), (0.0, 1.0), (1.5, 2.0), (3.0, 0.3)] {
        let sg = SoftplusGaussian::new(m, s).unwrap();
        let ln = LogNormal::new(m, s).unwrap();
        for (name, total) in [("softplus-Gaussian", positive_integral(&sg)), ("log-normal", positive_integral(&ln))] {
            assert!((total - 1.0).abs() <= 1e-6, "{name}({m}, {s}) integrates to {total}");
        }
        assert!(sg.sample(10_000, &mut rng).iter().all(|&y| y > 0.0));
        assert!(ln.sample(10_000, &mut rng).iter().all(|&y| y > 0.0));
    }
    for (k, theta) in [(5.0, 0.1), (8.0, 0.1), (2.0, 0.5), (0.5, 3.0)] {
        let total = positive_integral(&InverseGamma::new(k, theta).unwrap());
        assert!((total - 1.0).abs() <= 1e-6, "inverse gamma ({k}, {theta}) integrates to {total}");
    }
    let ig = |k| InverseGamma::new(k, 1.0).unwrap();
    assert!(ig(1.0).mean().is_err() && ig(1.5).mean().is_ok());
    assert!(ig(2.0).variance().is_err() && ig(2.5).variance().is_ok());
}

/// Pearson χ² of `n` sampled masks in 100 equal-width bins against the
/// integrated pdf; sparse bins are merged until each expects at least 5.
fn chi_square_p(mu: f64, sigma: f64, n: usize, seed: u64) -> f64 {
    const BINS: usize = 100;
    let mut counts = [0usize; BINS];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in ModelFreeDist::new(mu, sigma).sample_mask(n, &mut rng) {
        counts[((m * BINS as f64) as usize).min(BINS - 1)] += 1;
    }
    let probs: Vec<f64> = (0..BINS).map(|k| bin_mass(mu, sigma, k, BINS)).collect();
    let total: f64 = probs.iter().sum();
    assert!((total - 1.0).abs() < 1e-6, "bin masses sum to {total}");

    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut obs, mut exp) = (0.0, 0.0);
    for k in 0..BINS {
        obs += counts[k] as f64;
        exp += probs[k] * n as f64;
        if exp >= 5.0 || k == BINS - 1 {
            if exp > 0.0 {
                stat += (obs - exp).powi(2) / exp;
                cells += 1;
            }
            obs = 0.0;
            exp = 0.0;
        }
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}

pub fn sampler_matches_pdf() {
    let settings = [(0.0, 3.0), (0.0, 1.6), (0.0, 150.0), (0.0, 1.0), (-1.0, 1.0), (3.0, 0.5), (-2.0, 4.0)];
    for (i, (mu, sigma)) in settings.into_iter().enumerate() {
        let p = chi_square_p(mu, sigma, 1_000_000, 100 + i as u64);
        assert!(p > 0.001, "mu {mu} sigma {sigma}: chi-square p-value {p}");
    }
}

/// `(mu, sigma, |mean_mask − MC mean|)` over the grid, with the MC estimate
/// drawn from an independent Gaussian-then-sigmoid sampler.
pub fn mean_mask_grid_errors(samples: usize, seed: u64) -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for mu in [-10.0, -3.0, -1.0, 0.0, 1.0, 3.0, 10.0] {
        for sigma in [0.1, 1.0, 2.0, 3.0, 4.0, 6.0] {
            let mc = (0..samples)
                .map(|_| sigmoid(mu + sigma * rng.sample::<f64, _>(StandardNormal)))
                .sum::<f64>()
                / samples as f64;
            out.push((mu, sigma, (mean_mask(mu, sigma) - mc).abs()));
        }
    }
    out
}

pub fn mean_mask_accurate_and_monotone() {
    let bad: Vec<_> = mean_mask_grid_errors(200_000, 5).into_iter().filter(|e| e.2 > 0.01).collect();
    assert!(bad.is_empty(), "mean_mask misses MC by more than 0.01 at (mu, sigma, error) {bad:?}");
    TestRunner::new(Config {
        cases: 256,
        failure_persistence: None,
        ..Config::default()
    })
    .run(&(-20.0f64..20.0, 0.0f64..5.0, 1e-4f64..50.0), |(mu, step, sigma)| {
        prop_assert!(mean_mask(mu, sigma) <= mean_mask(mu + step, sigma));
        let rate = ModelFreeDist::new(mu, sigma).dropout_rate();
        prop_assert!(rate > 0.0 && rate < 1.0, "rate {} at ({}, {})", rate, mu, sigma);
        Ok(())
    })
    .unwrap();
}

/// Fractions of sampled masks in 10 equal-width bins.
fn deciles(mu: f64, sigma: f64) -> [f64; 10] {
    let n = 200_000;
    let mut h = [0.0; 10];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in ModelFreeDist::new(mu, sigma).sample_mask(n, &mut rng) {
        h[((m * 10.0) as usize).min(9)] += 1.0 / n as f64;
    }
    h
}

pub fn pdf_shape_signatures() {
    // U shape
    let u = deciles(0.0, 3.0);
    assert!(u[0] > 2.0 * u[4] && u[9] > 2.0 * u[5], "U: {u:?}");
    // roughly uniform
    let flat = deciles(0.0, 1.6);
    assert!(flat.iter().all(|&p| (0.07..0.13).contains(&p)), "uniform: {flat:?}");
    // nearly Bernoulli: almost everything in the outer percentiles
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = ModelFreeDist::new(0.0, 150.0).sample_mask(100_000, &mut rng);
    let outer = s.iter().filter(|&&m| !(0.01..=0.99).contains(&m)).count() as f64 / s.len() as f64;
    assert!(outer > 0.95, "Bernoulli-like: outer mass {outer}");
    // symmetric bell peaked at the centre
    let bell = deciles(0.0, 1.0);
    assert!(bell[..5].windows(2).all(|w| w[0] < w[1]), "bell: {bell:?}");
    assert!(bell[5..].windows(2).all(|w| w[0] > w[1]), "bell: {bell:?}");
    // bell with its mode pulled below one half
    let skew = deciles(-1.0, 1.0);
    let mode = (0..10).max_by(|&a, &b| skew[a].total_cmp(&skew[b])).unwrap();
    assert!((1..5).contains(&mode), "skewed bell mode bin {mode}: {skew:?}");
    assert!(skew[0] < skew[mode] && skew[9] < skew[mode]);
    assert!(skew[..5].iter().sum::<f64>() > 0.6, "skewed bell: {skew:?}");
}
