//! Reference computations shared by the integration tests. Nothing here
//! calls into the filter or the truncated-moment engine.
#![allow(dead_code)]

use std::path::PathBuf;

use censored_ekf::scenario::{Scenario, ScenarioConfig};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const SHIPPED: [&str; 4] = ["oscillator-stationary", "oscillator-drift", "hcv-synthetic", "hiv-synthetic"];

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"))
}

pub fn scenario(name: &str, overrides: &[&str]) -> Scenario {
    let sets: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let cfg = ScenarioConfig::load(&config_path(name)).unwrap().with_overrides(&sets).unwrap();
    Scenario::new(cfg).unwrap()
}

/// Sample moments of `N(mu, sigma)` restricted to `[lo, hi]`, from plain
/// rejection sampling until `accepted` draws land inside.
pub struct SampleMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub mean_se: DVector<f64>,
    pub cov_se: DMatrix<f64>,
    pub acceptance: f64,
}

pub fn rejection_moments(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    lo: &[f64],
    hi: &[f64],
    accepted: usize,
    seed: u64,
) -> SampleMoments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Sums are taken about a pilot mean to keep them well conditioned.
    let (center, _) = sample_sums(mu, sigma, lo, hi, accepted.min(10_000), &DVector::zeros(mu.len()), &mut rng);
    let center = center.mean.clone();
    let (mut out, drawn) = sample_sums(mu, sigma, lo, hi, accepted, &center, &mut rng);
    out.acceptance = accepted as f64 / drawn as f64;
    out
}

fn sample_sums(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    lo: &[f64],
    hi: &[f64],
    accepted: usize,
    center: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> (SampleMoments, usize) {
    let n = mu.len();
    let l = sigma.clone().cholesky().expect("oracle needs an SPD covariance").l();
    let mut z = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut s1 = vec![0.0; n];
    let mut s2 = DMatrix::<f64>::zeros(n, n);
    let mut s4 = DMatrix::<f64>::zeros(n, n);
    let (mut kept, mut drawn) = (0usize, 0usize);
    while kept < accepted {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        drawn += 1;
        let mut inside = true;
        for i in 0..n {
            x[i] = mu[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>();
            inside &= lo[i] <= x[i] && x[i] <= hi[i];
        }
        if !inside {
            continue;
        }
        kept += 1;
        for i in 0..n {
            let di = x[i] - center[i];
            s1[i] += di;
            for j in 0..n {
                let p = di * (x[j] - center[j]);
                s2[(i, j)] += p;
                s4[(i, j)] += p * p;
            }
        }
    }
    let m = kept as f64;
    let d = DVector::from_iterator(n, s1.iter().map(|v| v / m));
    let raw = s2 / m;
    let cov = &raw - &d * d.transpose();
    let mean = center + &d;
    let mean_se = cov.diagonal().map(|v| (v / m).sqrt());
    // Variance of the centred products; the centre differs from the mean by O(1/√m).
    let cov_se = DMatrix::from_fn(n, n, |i, j| ((s4[(i, j)] / m - raw[(i, j)].powi(2)) / m).max(0.0).sqrt());
    (SampleMoments { mean, cov, mean_se, cov_se, acceptance: 0.0 }, drawn)
}

/// Central differences of `f` at `x`, step `h·max(1, |x_j|)`.
pub fn central_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    for j in 0..x.len() {
        let step = h * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let col = (f(&xp) - f(&xm)) / (2.0 * step);
        jac.set_column(j, &col);
    }
    jac
}

/// `‖a − b‖_max ≤ tol·(1 + ‖a‖_max)`.
pub fn jacobian_close(analytic: &DMatrix<f64>, fd: &DMatrix<f64>, tol: f64) -> bool {
    (analytic - fd).amax() <= tol * (1.0 + analytic.amax())
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Mean and variance of a density known on an equally spaced grid, by the
/// trapezoid rule.
pub fn grid_moments(xs: &[f64], w: &[f64]) -> (f64, f64) {
    let trap = |g: &dyn Fn(usize) -> f64| {
        (1..xs.len()).map(|k| 0.5 * (g(k - 1) + g(k)) * (xs[k] - xs[k - 1])).sum::<f64>()
    };
    let z = trap(&|k| w[k]);
    let mean = trap(&|k| xs[k] * w[k]) / z;
    let var = trap(&|k| (xs[k] - mean).powi(2) * w[k]) / z;
    (mean, var)
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}
