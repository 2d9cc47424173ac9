//! Moments of a multivariate normal restricted to an axis-aligned rectangle.
//!
//! One-dimensional truncations use the closed-form Mills-ratio expressions.
//! Higher-dimensional ones are estimated by seeded Monte Carlo: plain
//! rejection sampling while the acceptance rate stays at or above
//! `min_acceptance`, otherwise the GHK sequential importance sampler. Sample
//! counts escalate until every mean component has a standard error below
//! `rel_tolerance·√max(diag Σ)`.
//!
//! Constraints whose marginal tail mass outside the rectangle is below
//! `inactive_mass` are not sampled. Their components are recovered by
//! Gaussian regression on the active block, which is exact up to that mass.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{dim_err, FilterError, Result};
use crate::linalg;
use crate::scalar::Scalar;

mod split;

/// Axis-aligned rectangle `∏ [lower_i, upper_i]`; bounds may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct CensorRegion<T: Scalar> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> CensorRegion<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(dim_err(format!("{} lower vs {} upper bounds", lower.len(), upper.len())));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.as_f64().is_nan() || u.as_f64().is_nan() || !(*l < *u) {
                return Err(FilterError::InvalidRegion(format!("row {i}: need lower < upper, got [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn empty() -> Self {
        Self { lower: Vec::new(), upper: Vec::new() }
    }

    /// The whole space `(−∞, ∞)^dim`.
    pub fn unbounded(dim: usize) -> Self {
        Self { lower: vec![-T::infinity(); dim], upper: vec![T::infinity(); dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<T>) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    pub fn push(&mut self, lower: T, upper: T) -> Result<()> {
        if !(lower < upper) {
            return Err(FilterError::InvalidRegion(format!("need lower < upper, got [{lower}, {upper}]")));
        }
        self.lower.push(lower);
        self.upper.push(upper);
        Ok(())
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self { lower: idx.iter().map(|&i| self.lower[i]).collect(), upper: idx.iter().map(|&i| self.upper[i]).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationSettings {
    /// Target standard error of each mean component, relative to `√max(diag Σ)`.
    pub rel_tolerance: f64,
    /// Rectangles with less estimated probability than this are rejected.
    pub min_mass: f64,
    /// Constraints with less marginal mass outside their interval are not sampled.
    pub inactive_mass: f64,
    /// Below this acceptance rate rejection sampling hands over to importance sampling.
    pub min_acceptance: f64,
    pub pilot_samples: usize,
    pub max_samples: usize,
}

impl Default for TruncationSettings {
    fn default() -> Self {
        Self {
            rel_tolerance: 1e-3,
            min_mass: 1e-12,
            inactive_mass: 1e-9,
            min_acceptance: 0.01,
            pilot_samples: 4096,
            max_samples: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentMethod {
    /// No constraint carried probability mass; moments are the input moments.
    Untruncated,
    ClosedForm,
    Rejection,
    Importance,
    /// Gauss–Hermite quadrature over a low-rank signal factor.
    Quadrature,
}

/// Mean and covariance of the truncated distribution.
#[derive(Debug, Clone)]
pub struct TruncationResult<T: Scalar> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
    /// Largest Monte-Carlo standard error over the mean components (0 when exact).
    pub estimator_error: T,
    /// Per-component standard errors of the mean.
    pub std_errors: DVector<T>,
    /// Standard errors of the covariance entries; NaN where they are not
    /// tracked (Monte-Carlo blocks larger than eight components).
    pub cov_std_errors: DMatrix<T>,
    /// Estimated probability of the rectangle.
    pub mass: f64,
    pub method: MomentMethod,
    pub samples: usize,
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
    }
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
}

/// `Φ(b) − Φ(a)` without cancellation in either tail.
pub(crate) fn std_normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else if b <= 0.0 {
        std_normal_cdf(b) - std_normal_cdf(a)
    } else {
        1.0 - std_normal_cdf(a) - std_normal_cdf(-b)
    }
}

/// `Q(x)/φ(x)` for `x ≥ 0` (upper-tail Mills ratio); 0 at infinity.
fn mills(x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else if x < 5.0 {
        std_normal_cdf(-x) / std_normal_pdf(x)
    } else {
        // Continued fraction 1/(x + 1/(x + 2/(x + ...))).
        let mut f = x;
        for k in (1..=60).rev() {
            f = x + k as f64 / f;
        }
        1.0 / f
    }
}

/// Standard normal restricted to `[a, b]`: returns `(ln Z, λ₁, λ₂)` with
/// `Z = Φ(b) − Φ(a)`, `λ₁ = (φ(a) − φ(b))/Z` and `λ₂ = (aφ(a) − bφ(b))/Z`,
/// so that the truncated mean is `λ₁` and the variance `1 + λ₂ − λ₁²`.
/// Stays finite far into either tail.
pub(crate) fn std_truncation(a: f64, b: f64) -> (f64, f64, f64) {
    if a + b < 0.0 {
        let (log_z, l1, l2) = std_truncation(-b, -a);
        return (log_z, -l1, l2);
    }
    let xphi = |x: f64| if x.is_finite() { x * std_normal_pdf(x) } else { 0.0 };
    if a <= 0.0 {
        let z = std_normal_mass(a, b);
        let l1 = (std_normal_pdf(a) - std_normal_pdf(b)) / z;
        let l2 = (xphi(a) - xphi(b)) / z;
        return (z.ln(), l1, l2);
    }
    let r = if b.is_finite() { (-(b - a) * (b + a) / 2.0).exp() } else { 0.0 };
    let den = mills(a) - r * mills(b);
    let log_z = -0.5 * a * a - 0.5 * (2.0 * std::f64::consts::PI).ln() + den.ln();
    let br = if b.is_finite() { b * r } else { 0.0 };
    (log_z, (1.0 - r) / den, (a - br) / den)
}

/// Closed-form mean, variance and mass of `N(mu, sd²)` restricted to `[lo, hi]`.
pub fn truncated_normal_moments(mu: f64, sd: f64, lo: f64, hi: f64) -> Result<(f64, f64, f64)> {
    if sd == 0.0 {
        return if mu >= lo && mu <= hi { Ok((mu, 0.0, 1.0)) } else { Err(FilterError::VanishingMass { mass: 0.0 }) };
    }
    let (log_z, l1, l2) = std_truncation((lo - mu) / sd, (hi - mu) / sd);
    let z = log_z.exp();
    if !(z > 0.0) || !l1.is_finite() {
        return Err(FilterError::VanishingMass { mass: z.max(0.0) });
    }
    let mean = mu + sd * l1;
    let var = sd * sd * (1.0 + l2 - l1 * l1);
    Ok((mean.clamp(lo, hi), var.max(0.0), z))
}

/// Moments of `N(mu, sigma)` conditioned on `region`, with default settings.
pub fn truncated_mvn_moments<T: Scalar>(
    mu: &DVector<T>,
    sigma: &DMatrix<T>,
    region: &CensorRegion<T>,
    rng_seed: u64,
) -> Result<TruncationResult<T>> {
    truncated_mvn_moments_with(mu, sigma, region, rng_seed, &TruncationSettings::default())
}

pub fn truncated_mvn_moments_with<T: Scalar>(
    mu: &DVector<T>,
    sigma: &DMatrix<T>,
    region: &CensorRegion<T>,
    rng_seed: u64,
    settings: &TruncationSettings,
) -> Result<TruncationResult<T>> {
    moments(mu, sigma, None, region, rng_seed, settings)
}

/// Moments of `N(mu, sigma)` on `region` when `sigma = S + diag(noise)`
/// with `S` PSD, i.e. each component carries independent noise of known
/// variance. Conditioning on the signal part makes the components
/// independent, which is integrated out exactly; only the signal is sampled
/// (or integrated by quadrature when its rank is small).
pub fn truncated_mvn_moments_split<T: Scalar>(
    mu: &DVector<T>,
    sigma: &DMatrix<T>,
    noise: &DVector<T>,
    region: &CensorRegion<T>,
    rng_seed: u64,
    settings: &TruncationSettings,
) -> Result<TruncationResult<T>> {
    if noise.len() != mu.len() {
        return Err(dim_err(format!("{} noise variances for {} components", noise.len(), mu.len())));
    }
    let noise: Vec<f64> = noise.iter().map(|v| v.as_f64()).collect();
    if noise.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(FilterError::InvalidCovariance);
    }
    moments(mu, sigma, Some(&noise), region, rng_seed, settings)
}

fn moments<T: Scalar>(
    mu: &DVector<T>,
    sigma: &DMatrix<T>,
    noise: Option<&[f64]>,
    region: &CensorRegion<T>,
    rng_seed: u64,
    settings: &TruncationSettings,
) -> Result<TruncationResult<T>> {
    let c = mu.len();
    if sigma.nrows() != c || sigma.ncols() != c || region.dim() != c {
        return Err(dim_err(format!(
            "mean {c}, covariance {}x{}, region {}",
            sigma.nrows(),
            sigma.ncols(),
            region.dim()
        )));
    }
    let mu64: Vec<f64> = mu.iter().map(|v| v.as_f64()).collect();
    let sigma64 = sigma.map(|v| v.as_f64());
    let lo: Vec<f64> = region.lower.iter().map(|v| v.as_f64()).collect();
    let hi: Vec<f64> = region.upper.iter().map(|v| v.as_f64()).collect();
    if mu64.iter().any(|v| !v.is_finite()) || !linalg::all_finite(&sigma64) {
        return Err(FilterError::InvalidMatrix);
    }
    if linalg::max_abs(&(&sigma64 - sigma64.transpose())) > 1e-9 * linalg::max_abs(&sigma64).max(1.0)
        || !linalg::is_psd(&sigma64)
    {
        return Err(FilterError::InvalidCovariance);
    }
    let sigma64 = linalg::symmetrize(&sigma64);

    let mut active = Vec::new();
    for i in 0..c {
        let sd = sigma64[(i, i)].max(0.0).sqrt();
        if sd == 0.0 {
            if mu64[i] < lo[i] || mu64[i] > hi[i] {
                return Err(FilterError::VanishingMass { mass: 0.0 });
            }
            continue;
        }
        let (a, b) = ((lo[i] - mu64[i]) / sd, (hi[i] - mu64[i]) / sd);
        let inside = std_normal_mass(a, b);
        if inside < settings.min_mass {
            return Err(FilterError::VanishingMass { mass: inside });
        }
        let outside = std_normal_cdf(a) + std_normal_cdf(-b);
        if outside >= settings.inactive_mass {
            active.push(i);
        }
    }

    let mu_v = DVector::from_vec(mu64.clone());
    let finish = |mean: DVector<f64>, cov: DMatrix<f64>, se: DVector<f64>, cov_se: DMatrix<f64>, mass, method, samples| {
        let cov = linalg::repair_covariance(&cov)?;
        Ok(TruncationResult {
            mean: mean.map(T::lit),
            cov: cov.map(T::lit),
            estimator_error: T::lit(se.iter().fold(0.0f64, |a, &v| a.max(v))),
            std_errors: se.map(T::lit),
            cov_std_errors: cov_se.map(T::lit),
            mass,
            method,
            samples,
        })
    };

    if active.is_empty() {
        return finish(mu_v, sigma64, DVector::zeros(c), DMatrix::zeros(c, c), 1.0, MomentMethod::Untruncated, 0);
    }

    let mu_a = linalg::select(&mu_v, &active);
    let sigma_aa = linalg::principal(&sigma64, &active);
    let lo_a: Vec<f64> = active.iter().map(|&i| lo[i]).collect();
    let hi_a: Vec<f64> = active.iter().map(|&i| hi[i]).collect();
    let block = if active.len() == 1 {
        let (m, v, z) = truncated_normal_moments(mu_a[0], sigma_aa[(0, 0)].sqrt(), lo_a[0], hi_a[0])?;
        if z < settings.min_mass {
            return Err(FilterError::VanishingMass { mass: z });
        }
        Block {
            mean: DVector::from_element(1, m),
            cov: DMatrix::from_element(1, 1, v),
            se: DVector::zeros(1),
            cov_se: DMatrix::zeros(1, 1),
            mass: z,
            method: MomentMethod::ClosedForm,
            samples: 0,
        }
    } else {
        let max_diag = sigma64.diagonal().iter().fold(0.0f64, |a, &v| a.max(v));
        let tol = settings.rel_tolerance * max_diag.sqrt();
        let noise_a: Option<Vec<f64>> = noise.map(|d| active.iter().map(|&i| d[i]).collect());
        match noise_a {
            Some(d) if split::usable(&sigma_aa, &d) => {
                split::moments(&mu_a, &sigma_aa, &d, &lo_a, &hi_a, rng_seed, settings, tol)?
            }
            _ => monte_carlo(&mu_a, &sigma_aa, &lo_a, &hi_a, rng_seed, settings, tol)?,
        }
    };

    if active.len() == c {
        return finish(block.mean, block.cov, block.se, block.cov_se, block.mass, block.method, block.samples);
    }

    // Regress the unconstrained components on the truncated block.
    let sigma_a_all = linalg::select_rows(&sigma64, &active);
    let k_t = linalg::spd_solve(&sigma_aa, &sigma_a_all).ok_or(FilterError::InvalidCovariance)?;
    let k = k_t.transpose();
    let mut mean = &mu_v + &k * (&block.mean - &mu_a);
    let mut cov = &sigma64 - &k * (&sigma_aa - &block.cov) * k.transpose();
    for (bi, &i) in active.iter().enumerate() {
        mean[i] = block.mean[bi];
        for (bj, &j) in active.iter().enumerate() {
            cov[(i, j)] = block.cov[(bi, bj)];
        }
    }
    let se = k.abs() * &block.se;
    // Entrywise triangle bound on the propagated covariance errors.
    let mut cov_se = k.abs() * &block.cov_se * k.abs().transpose();
    for (bi, &i) in active.iter().enumerate() {
        for (bj, &j) in active.iter().enumerate() {
            cov_se[(i, j)] = block.cov_se[(bi, bj)];
        }
    }
    finish(mean, cov, se, cov_se, block.mass, block.method, block.samples)
}

pub(crate) struct Block {
    pub(crate) mean: DVector<f64>,
    pub(crate) cov: DMatrix<f64>,
    pub(crate) se: DVector<f64>,
    pub(crate) cov_se: DMatrix<f64>,
    pub(crate) mass: f64,
    pub(crate) method: MomentMethod,
    pub(crate) samples: usize,
}

/// Covariance standard errors are tracked only up to this dimension; the
/// pairwise sums grow quadratically and only small blocks need them.
pub(crate) const PAIR_SE_MAX_DIM: usize = 8;

/// Per-pair weighted sums for the covariance standard errors, lower
/// triangle, `y = d_i d_j (+ v_i on the diagonal)`.
struct PairSums {
    y2: Vec<f64>,
    yi: Vec<f64>,
    yj: Vec<f64>,
    y1: Vec<f64>,
    dd: Vec<f64>,
}

/// Running weighted sums of deviations from the untruncated mean, plus an
/// optional per-sample conditional variance added to the diagonal.
pub(crate) struct Accumulator {
    dim: usize,
    pub(crate) draws: usize,
    sum_w: f64,
    sum_w2: f64,
    sum_wd: Vec<f64>,
    sum_wdd: Vec<f64>,
    sum_w2d: Vec<f64>,
    sum_w2d2: Vec<f64>,
    sum_wv: Vec<f64>,
    pairs: Option<PairSums>,
}

impl Accumulator {
    pub(crate) fn new(dim: usize) -> Self {
        let zeros = || vec![0.0; dim * dim];
        Self {
            dim,
            draws: 0,
            sum_w: 0.0,
            sum_w2: 0.0,
            sum_wd: vec![0.0; dim],
            sum_wdd: zeros(),
            sum_w2d: vec![0.0; dim],
            sum_w2d2: vec![0.0; dim],
            sum_wv: vec![0.0; dim],
            pairs: (dim <= PAIR_SE_MAX_DIM)
                .then(|| PairSums { y2: zeros(), yi: zeros(), yj: zeros(), y1: zeros(), dd: zeros() }),
        }
    }

    /// Adds a sample whose own conditional variance is `v` (diagonal).
    #[inline]
    pub(crate) fn add_with_var(&mut self, w: f64, d: &[f64], v: &[f64]) {
        if w == 0.0 {
            return;
        }
        for (s, vi) in self.sum_wv.iter_mut().zip(v) {
            *s += w * vi;
        }
        self.push(w, d, Some(v));
    }

    #[inline]
    pub(crate) fn add(&mut self, w: f64, d: &[f64]) {
        if w == 0.0 {
            return;
        }
        self.push(w, d, None);
    }

    #[inline]
    fn push(&mut self, w: f64, d: &[f64], v: Option<&[f64]>) {
        let w2 = w * w;
        self.sum_w += w;
        self.sum_w2 += w2;
        for i in 0..self.dim {
            let wd = w * d[i];
            self.sum_wd[i] += wd;
            self.sum_w2d[i] += w2 * d[i];
            self.sum_w2d2[i] += w2 * d[i] * d[i];
            let row = &mut self.sum_wdd[i * self.dim..=i * self.dim + i];
            for (j, r) in row.iter_mut().enumerate() {
                *r += wd * d[j];
            }
        }
        if let Some(p) = &mut self.pairs {
            for i in 0..self.dim {
                for j in 0..=i {
                    let k = i * self.dim + j;
                    let dd = d[i] * d[j];
                    let y = if i == j { dd + v.map_or(0.0, |v| v[i]) } else { dd };
                    let w2y = w2 * y;
                    p.y2[k] += w2y * y;
                    p.yi[k] += w2y * d[i];
                    p.yj[k] += w2y * d[j];
                    p.y1[k] += w2y;
                    p.dd[k] += w2 * dd;
                }
            }
        }
    }

    fn mean_dev(&self) -> Vec<f64> {
        self.sum_wd.iter().map(|s| s / self.sum_w).collect()
    }

    /// Self-normalized standard error of each mean component.
    pub(crate) fn std_errors(&self) -> Vec<f64> {
        let m = self.mean_dev();
        (0..self.dim)
            .map(|i| {
                let num = self.sum_w2d2[i] - 2.0 * m[i] * self.sum_w2d[i] + m[i] * m[i] * self.sum_w2;
                (num.max(0.0)).sqrt() / self.sum_w
            })
            .collect()
    }

    pub(crate) fn variances(&self) -> Vec<f64> {
        let m = self.mean_dev();
        (0..self.dim).map(|i| (self.sum_wdd[i * self.dim + i] / self.sum_w - m[i] * m[i]).max(0.0)).collect()
    }

    pub(crate) fn effective_samples(&self) -> f64 {
        if self.sum_w2 > 0.0 {
            self.sum_w * self.sum_w / self.sum_w2
        } else {
            0.0
        }
    }

    /// Mean, covariance, mean standard errors and covariance standard
    /// errors (NaN when the dimension is too large to track them). The
    /// covariance errors use the influence function
    /// `(d_i − m_i)(d_j − m_j) + v_i δ_ij − c_ij` of the self-normalized
    /// estimator.
    pub(crate) fn finish(&self, mu: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let m = self.mean_dev();
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        let mut cov_se = DMatrix::from_element(self.dim, self.dim, f64::NAN);
        for i in 0..self.dim {
            for j in 0..=i {
                let k = i * self.dim + j;
                let mut v = self.sum_wdd[k] / self.sum_w - m[i] * m[j];
                if i == j {
                    v += self.sum_wv[i] / self.sum_w;
                }
                cov[(i, j)] = v;
                cov[(j, i)] = v;
                if let Some(p) = &self.pairs {
                    let a = m[i] * m[j] - v;
                    let s2 = p.y2[k] + m[j] * m[j] * self.sum_w2d2[i] + m[i] * m[i] * self.sum_w2d2[j]
                        + a * a * self.sum_w2
                        - 2.0 * m[j] * p.yi[k]
                        - 2.0 * m[i] * p.yj[k]
                        + 2.0 * a * p.y1[k]
                        + 2.0 * m[i] * m[j] * p.dd[k]
                        - 2.0 * a * m[j] * self.sum_w2d[i]
                        - 2.0 * a * m[i] * self.sum_w2d[j];
                    let se = s2.max(0.0).sqrt() / self.sum_w;
                    cov_se[(i, j)] = se;
                    cov_se[(j, i)] = se;
                }
            }
        }
        let mean = DVector::from_fn(self.dim, |i, _| mu[i] + m[i]);
        (mean, cov, DVector::from_vec(self.std_errors()), cov_se)
    }
}

fn lower_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::spd_factor(sigma).map(|c| c.unpack()).ok_or(FilterError::InvalidCovariance)
}

fn monte_carlo(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    lo: &[f64],
    hi: &[f64],
    seed: u64,
    settings: &TruncationSettings,
    tol: f64,
) -> Result<Block> {
    let c = mu.len();
    let l = lower_factor(sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pilot = settings.pilot_samples.max(64);

    // Rejection sampling.
    let mut acc = Accumulator::new(c);
    let mut batch = pilot;
    let mut eps = vec![0.0; c];
    let mut d = vec![0.0; c];
    let use_rejection = loop {
        for _ in 0..batch {
            for e in eps.iter_mut() {
                *e = rng.sample(StandardNormal);
            }
            let mut inside = true;
            for i in 0..c {
                let mut s = 0.0;
                for j in 0..=i {
                    s += l[(i, j)] * eps[j];
                }
                d[i] = s;
                let z = mu[i] + s;
                if z < lo[i] || z > hi[i] {
                    inside = false;
                    break;
                }
            }
            if inside {
                acc.add(1.0, &d);
            }
        }
        acc.draws += batch;
        let accepted = acc.sum_w;
        if accepted < settings.min_acceptance * acc.draws as f64 || accepted < 2.0 {
            break false;
        }
        let worst = acc.std_errors().into_iter().fold(0.0f64, f64::max);
        if worst <= tol {
            break true;
        }
        if acc.draws >= settings.max_samples {
            log::warn!("rejection sampling hit the sample cap with standard error {worst:e} > {tol:e}");
            break true;
        }
        let rate = accepted / acc.draws as f64;
        let max_var = acc.variances().into_iter().fold(0.0f64, f64::max);
        let needed = (1.05 * max_var / (tol * tol) / rate).ceil() as usize;
        batch = needed.saturating_sub(acc.draws).clamp(pilot, settings.max_samples - acc.draws);
    };
    if use_rejection {
        let (mean, cov, se, cov_se) = acc.finish(mu);
        return Ok(Block {
            mean,
            cov,
            se,
            cov_se,
            mass: acc.sum_w / acc.draws as f64,
            method: MomentMethod::Rejection,
            samples: acc.draws,
        });
    }

    // GHK sequential importance sampling.
    let normal = Normal::standard();
    let mut acc = Accumulator::new(c);
    let mut batch = pilot;
    loop {
        for _ in 0..batch {
            let mut w = 1.0;
            for i in 0..c {
                let mut shift = 0.0;
                for j in 0..i {
                    shift += l[(i, j)] * eps[j];
                }
                let a = (lo[i] - mu[i] - shift) / l[(i, i)];
                let b = (hi[i] - mu[i] - shift) / l[(i, i)];
                let u: f64 = rng.random();
                let (p, e) = sample_truncated_std(&normal, a, b, u);
                w *= p;
                eps[i] = e;
                d[i] = shift + l[(i, i)] * e;
                if w == 0.0 {
                    break;
                }
            }
            acc.draws += 1;
            acc.add(w, &d);
        }
        let mass = acc.sum_w / acc.draws as f64;
        if acc.draws >= pilot && mass < settings.min_mass {
            return Err(FilterError::VanishingMass { mass });
        }
        if acc.effective_samples() >= 2.0 {
            let worst = acc.std_errors().into_iter().fold(0.0f64, f64::max);
            if worst <= tol {
                break;
            }
            if acc.draws >= settings.max_samples {
                log::warn!("importance sampling hit the sample cap with standard error {worst:e} > {tol:e}");
                break;
            }
            let scale = (worst / tol).powi(2) * 1.05;
            let needed = (acc.draws as f64 * scale).ceil() as usize;
            batch = needed.saturating_sub(acc.draws).clamp(pilot, settings.max_samples - acc.draws);
        } else if acc.draws >= settings.max_samples {
            return Err(FilterError::VanishingMass { mass });
        }
    }
    let (mean, cov, se, cov_se) = acc.finish(mu);
    Ok(Block { mean, cov, se, cov_se, mass: acc.sum_w / acc.draws as f64, method: MomentMethod::Importance, samples: acc.draws })
}

/// Inverse-CDF draw from the standard normal restricted to `[a, b]`,
/// returning the interval mass alongside the draw.
fn sample_truncated_std(normal: &Normal, a: f64, b: f64, u: f64) -> (f64, f64) {
    if a >= 0.0 {
        let qa = std_normal_cdf(-a);
        let qb = std_normal_cdf(-b);
        let p = qa - qb;
        if p <= 0.0 {
            return (0.0, a);
        }
        let e = -normal.inverse_cdf((qb + u * p).clamp(f64::MIN_POSITIVE, 1.0));
        (p, e.clamp(a, b))
    } else {
        let pa = std_normal_cdf(a);
        let pb = std_normal_cdf(b);
        let p = pb - pa;
        if p <= 0.0 {
            return (0.0, b.min(a.max(0.0)));
        }
        let e = normal.inverse_cdf((pa + u * p).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0));
        (p, e.clamp(a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn half_normal_closed_form() {
        let r = truncated_mvn_moments(&dvector![0.0], &dmatrix![1.0], &CensorRegion::new(vec![0.0], vec![f64::INFINITY]).unwrap(), 0)
            .unwrap();
        let pi = std::f64::consts::PI;
        assert!((r.mean[0] - (2.0 / pi).sqrt()).abs() < 1e-9);
        assert!((r.cov[(0, 0)] - (1.0 - 2.0 / pi)).abs() < 1e-9);
        assert_eq!(r.method, MomentMethod::ClosedForm);
        assert_eq!(r.estimator_error, 0.0);
    }

    #[test]
    fn unbounded_region_returns_input() {
        let mu = dvector![0.3, -1.0, 2.0];
        let sigma = dmatrix![1.0, 0.2, 0.0; 0.2, 2.0, 0.5; 0.0, 0.5, 1.5];
        let r = truncated_mvn_moments(&mu, &sigma, &CensorRegion::unbounded(3), 1).unwrap();
        assert!((r.mean - mu).amax() < 1e-15);
        assert!((r.cov - sigma).amax() < 1e-15);
        assert_eq!(r.method, MomentMethod::Untruncated);
    }

    #[test]
    fn vanishing_mass_is_an_error() {
        let region = CensorRegion::new(vec![-f64::INFINITY], vec![-12.0]).unwrap();
        assert!(matches!(
            truncated_mvn_moments(&dvector![0.0], &dmatrix![1.0], &region, 0),
            Err(FilterError::VanishingMass { .. })
        ));
        let region = CensorRegion::new(vec![-f64::INFINITY; 2], vec![-9.0, -9.0]).unwrap();
        assert!(matches!(
            truncated_mvn_moments(&dvector![0.0, 0.0], &DMatrix::identity(2, 2), &region, 0),
            Err(FilterError::VanishingMass { .. })
        ));
    }

    #[test]
    fn non_psd_sigma_is_rejected() {
        let region = CensorRegion::unbounded(2);
        assert!(matches!(
            truncated_mvn_moments(&dvector![0.0, 0.0], &dmatrix![1.0, 2.0; 2.0, 1.0], &region, 0),
            Err(FilterError::InvalidCovariance)
        ));
    }

    #[test]
    fn region_rejects_inverted_bounds() {
        assert!(CensorRegion::new(vec![1.0], vec![0.0]).is_err());
        assert!(CensorRegion::<f64>::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn two_sided_matches_known_values() {
        // Standard normal on [-1, 1]: variance 1 - 2φ(1)/(Φ(1)-Φ(-1)).
        let (m, v, z) = truncated_normal_moments(0.0, 1.0, -1.0, 1.0).unwrap();
        assert!(m.abs() < 1e-15);
        assert!((z - 0.682_689_492_137_085_9).abs() < 1e-13, "{z:e}");
        assert!((v - (1.0 - 2.0 * 0.241_970_724_519_143_37 / 0.682_689_492_137_085_9)).abs() < 1e-12);
    }

    #[test]
    fn far_tail_stays_inside() {
        let (m, v, _) = truncated_normal_moments(0.0, 1.0, 6.0, f64::INFINITY).unwrap();
        assert!(m > 6.0 && m < 6.2);
        assert!(v > 0.0 && v < 0.03);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mu = dvector![0.0, 0.0];
        let sigma = dmatrix![1.0, 0.5; 0.5, 1.0];
        let region = CensorRegion::new(vec![-f64::INFINITY; 2], vec![0.0, 0.0]).unwrap();
        let a = truncated_mvn_moments(&mu, &sigma, &region, 7).unwrap();
        let b = truncated_mvn_moments(&mu, &sigma, &region, 7).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.cov, b.cov);
        assert!(a.estimator_error <= 1e-3);
    }

    #[test]
    fn low_acceptance_switches_to_importance_sampling() {
        let mu = dvector![0.0, 0.0, 0.0];
        let sigma = dmatrix![1.0, 0.3, 0.1; 0.3, 1.0, 0.3; 0.1, 0.3, 1.0];
        let region = CensorRegion::new(vec![1.5, 1.5, 1.5], vec![f64::INFINITY; 3]).unwrap();
        let r = truncated_mvn_moments(&mu, &sigma, &region, 3).unwrap();
        assert_eq!(r.method, MomentMethod::Importance);
        assert!(region.contains(&r.mean));
        assert!(r.estimator_error <= 1e-3);
    }

    #[test]
    fn inactive_constraints_are_regressed() {
        // Second constraint sits 20 standard deviations away from the mean.
        let mu = dvector![0.0, 0.0];
        let sigma = dmatrix![1.0, 0.6; 0.6, 1.0];
        let region = CensorRegion::new(vec![0.0, -20.0], vec![f64::INFINITY, f64::INFINITY]).unwrap();
        let r = truncated_mvn_moments(&mu, &sigma, &region, 0).unwrap();
        assert_eq!(r.method, MomentMethod::ClosedForm);
        let m1 = (2.0 / std::f64::consts::PI).sqrt();
        assert!((r.mean[0] - m1).abs() < 1e-12);
        assert!((r.mean[1] - 0.6 * m1).abs() < 1e-12);
        let v1 = 1.0 - 2.0 / std::f64::consts::PI;
        assert!((r.cov[(1, 1)] - (1.0 - 0.36 * (1.0 - v1))).abs() < 1e-12);
        assert!((r.cov[(0, 1)] - 0.6 * v1).abs() < 1e-12);
    }
}
