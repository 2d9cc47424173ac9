//! Truncated moments for `N(μ, S + diag(d))` with every `d_i > 0`.
//!
//! Write `C = μ + Bξ + v` with `S = BBᵀ`, `ξ ~ N(0, I_r)` and independent
//! `v_i ~ N(0, d_i)`. Given `ξ` the components are independent, so the
//! rectangle mass and the conditional moments are products and 1-D closed
//! forms. The remaining integral over `ξ` is centred at the mode of its
//! truncated density (Laplace) and evaluated either by tensor Gauss–Hermite
//! quadrature (small `r`) or by importance sampling from a defensive mixture.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{std_truncation, Accumulator, Block, MomentMethod, TruncationSettings};
use crate::linalg;
use crate::error::{FilterError, Result};

/// Signal eigenvalues below this fraction of the largest scale are folded
/// into the independent noise.
const RANK_TOL: f64 = 1e-5;
/// Largest signal rank integrated by quadrature.
const MAX_QUADRATURE_RANK: usize = 3;
const QUADRATURE_ORDERS: [usize; 4] = [4, 8, 16, 32];
/// Weight of the Laplace component in the importance proposal, and its
/// covariance inflation.
const LAPLACE_WEIGHT: f64 = 0.9;
const INFLATION: f64 = 1.2;

/// Whether the noise is large enough for the factorization to help.
pub(super) fn usable(sigma: &DMatrix<f64>, noise: &[f64]) -> bool {
    noise.iter().enumerate().all(|(i, &d)| d > 1e-6 * sigma[(i, i)] && d <= sigma[(i, i)] * (1.0 + 1e-9))
}

struct Problem<'a> {
    mu: &'a DVector<f64>,
    /// `c × r` signal factor.
    b: DMatrix<f64>,
    sd: Vec<f64>,
    lo: &'a [f64],
    hi: &'a [f64],
}

/// Per-sample quantities at one `ξ`.
struct Eval {
    log_target: f64,
    /// Conditional means minus `μ`.
    dev: Vec<f64>,
    var: Vec<f64>,
    /// `d ln m_i / d s_i` and `d² ln m_i / d s_i²`.
    grad: Vec<f64>,
    curv: Vec<f64>,
}

impl Problem<'_> {
    fn rank(&self) -> usize {
        self.b.ncols()
    }

    fn eval(&self, xi: &DVector<f64>) -> Eval {
        let c = self.mu.len();
        let s = &self.b * xi;
        let mut e = Eval {
            log_target: -0.5 * xi.norm_squared(),
            dev: vec![0.0; c],
            var: vec![0.0; c],
            grad: vec![0.0; c],
            curv: vec![0.0; c],
        };
        for i in 0..c {
            let sd = self.sd[i];
            let centre = self.mu[i] + s[i];
            let (log_z, l1, l2) = std_truncation((self.lo[i] - centre) / sd, (self.hi[i] - centre) / sd);
            e.log_target += log_z;
            e.dev[i] = s[i] + sd * l1;
            e.var[i] = (sd * sd * (1.0 + l2 - l1 * l1)).max(0.0);
            e.grad[i] = l1 / sd;
            e.curv[i] = (l2 - l1 * l1) / (sd * sd);
        }
        e
    }

    /// Mode of `ln φ(ξ) + Σ ln m_i(ξ)` (concave) and the negative Hessian there.
    fn mode(&self) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        let r = self.rank();
        let mut xi = DVector::zeros(r);
        let mut cur = self.eval(&xi);
        for _ in 0..100 {
            let grad = -&xi + self.b.tr_mul(&DVector::from_column_slice(&cur.grad));
            let neg_hess = self.neg_hessian(&cur);
            let chol = neg_hess.clone().cholesky().ok_or(FilterError::InvalidCovariance)?;
            let step = chol.solve(&grad);
            if grad.amax() < 1e-12 || step.amax() < 1e-13 {
                return Ok((xi, neg_hess, cur.log_target));
            }
            let mut t = 1.0;
            loop {
                let cand = &xi + &step * t;
                let next = self.eval(&cand);
                if next.log_target.is_finite() && next.log_target >= cur.log_target - 1e-12 {
                    xi = cand;
                    cur = next;
                    break;
                }
                t *= 0.5;
                if t < 1e-10 {
                    let neg_hess = self.neg_hessian(&cur);
                    return Ok((xi, neg_hess, cur.log_target));
                }
            }
        }
        let neg_hess = self.neg_hessian(&cur);
        Ok((xi, neg_hess, cur.log_target))
    }

    fn neg_hessian(&self, e: &Eval) -> DMatrix<f64> {
        let r = self.rank();
        let mut h = DMatrix::identity(r, r);
        for (i, &k) in e.curv.iter().enumerate() {
            if k == 0.0 {
                continue;
            }
            let row = self.b.row(i);
            for a in 0..r {
                for b in 0..r {
                    h[(a, b)] -= k * row[a] * row[b];
                }
            }
        }
        h
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn moments(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    noise: &[f64],
    lo: &[f64],
    hi: &[f64],
    seed: u64,
    settings: &TruncationSettings,
    tol: f64,
) -> Result<Block> {
    let c = mu.len();
    let signal = sigma - DMatrix::from_diagonal(&DVector::from_column_slice(noise));
    let eig = linalg::symmetrize(&signal).symmetric_eigen();
    let scale = eig.eigenvalues.iter().chain(noise).fold(0.0f64, |a, &v| a.max(v));
    let keep: Vec<usize> = (0..c).filter(|&k| eig.eigenvalues[k] > RANK_TOL * scale).collect();
    let mut var = noise.to_vec();
    for k in (0..c).filter(|k| !keep.contains(k)) {
        let lam = eig.eigenvalues[k].max(0.0);
        for (i, v) in var.iter_mut().enumerate() {
            *v += lam * eig.eigenvectors[(i, k)].powi(2);
        }
    }
    let b = DMatrix::from_fn(c, keep.len(), |i, j| {
        let k = keep[j];
        eig.eigenvectors[(i, k)] * eig.eigenvalues[k].sqrt()
    });
    let problem = Problem { mu, b, sd: var.iter().map(|v| v.sqrt()).collect(), lo, hi };

    if problem.rank() == 0 {
        let e = problem.eval(&DVector::zeros(0));
        let mut cov = DMatrix::zeros(c, c);
        for i in 0..c {
            cov[(i, i)] = e.var[i];
        }
        return Ok(Block {
            mean: DVector::from_fn(c, |i, _| mu[i] + e.dev[i]),
            cov,
            se: DVector::zeros(c),
            cov_se: DMatrix::zeros(c, c),
            mass: e.log_target.exp(),
            method: MomentMethod::ClosedForm,
            samples: 0,
        });
    }

    let (mode, neg_hess, log_peak) = problem.mode()?;
    let cov_p = neg_hess.cholesky().ok_or(FilterError::InvalidCovariance)?.inverse();
    let l = cov_p.cholesky().ok_or(FilterError::InvalidCovariance)?.unpack();
    if problem.rank() <= MAX_QUADRATURE_RANK {
        if let Some(block) = quadrature(&problem, &mode, &l, log_peak, tol) {
            return Ok(block);
        }
    }
    importance(&problem, &mode, &l, log_peak, seed, settings, tol)
}

/// Moments from the weighted sample set `(ξ_j, w_j)`, where `w_j` is
/// proportional to the truncated density over the sampling density.
fn quadrature(problem: &Problem, mode: &DVector<f64>, l: &DMatrix<f64>, log_peak: f64, tol: f64) -> Option<Block> {
    let r = problem.rank();
    let c = problem.mu.len();
    let log_det = l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut previous: Option<(DVector<f64>, DMatrix<f64>, f64, usize)> = None;
    for &q in &QUADRATURE_ORDERS {
        let (nodes, weights) = gauss_hermite(q);
        let points = q.pow(r as u32);
        let mut acc = Accumulator::new(c);
        let mut mass = 0.0;
        let mut idx = vec![0usize; r];
        for _ in 0..points {
            let z = DVector::from_fn(r, |k, _| nodes[idx[k]]);
            let w0: f64 = idx.iter().map(|&k| weights[k]).product();
            let xi = mode + l * &z;
            let e = problem.eval(&xi);
            let w = w0 * (e.log_target - log_peak + 0.5 * z.norm_squared()).exp();
            mass += w;
            acc.add_with_var(w, &e.dev, &e.var);
            for k in 0..r {
                idx[k] += 1;
                if idx[k] < q {
                    break;
                }
                idx[k] = 0;
            }
        }
        acc.draws = points;
        let (mean, cov, _, _) = acc.finish(problem.mu);
        let mass = (log_peak + log_det + mass.ln()).exp();
        if let Some((pm, pc, _, _)) = &previous {
            let err = (&mean - pm).amax();
            if err <= tol {
                let se = DVector::from_element(c, err);
                let cov_se = (&cov - pc).abs();
                return Some(Block { mean, cov, se, cov_se, mass, method: MomentMethod::Quadrature, samples: points });
            }
        }
        previous = Some((mean, cov, mass, points));
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn importance(
    problem: &Problem,
    mode: &DVector<f64>,
    l: &DMatrix<f64>,
    log_peak: f64,
    seed: u64,
    settings: &TruncationSettings,
    tol: f64,
) -> Result<Block> {
    let r = problem.rank();
    let c = problem.mu.len();
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let log_det = l.diagonal().iter().map(|v| (v * INFLATION).ln()).sum::<f64>();
    let log_laplace = |u: &DVector<f64>| -0.5 * u.norm_squared() - log_det - r as f64 * half_log_2pi;
    let log_prior = |xi: &DVector<f64>| -0.5 * xi.norm_squared() - r as f64 * half_log_2pi;
    let scaled = l * INFLATION;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pilot = settings.pilot_samples.max(64);
    let mut acc = Accumulator::new(c);
    let mut batch = pilot;
    let mut mass_sum = 0.0;
    // Reference so weights stay O(1): log target minus log proposal at the mode.
    let reference = log_peak - r as f64 * half_log_2pi - (LAPLACE_WEIGHT.ln() + log_laplace(&DVector::zeros(r)));
    loop {
        for _ in 0..batch {
            let z = DVector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
            let pick: f64 = rand::Rng::random(&mut rng);
            let (xi, u) = if pick < LAPLACE_WEIGHT {
                (mode + &scaled * &z, z)
            } else {
                let u = scaled.solve_lower_triangular(&(&z - mode)).unwrap_or_else(|| z.clone());
                (z, u)
            };
            let a = LAPLACE_WEIGHT.ln() + log_laplace(&u);
            let b = (1.0 - LAPLACE_WEIGHT).ln() + log_prior(&xi);
            let log_q = a.max(b) + (-(a - b).abs()).exp().ln_1p();
            let e = problem.eval(&xi);
            let w = (e.log_target - r as f64 * half_log_2pi - log_q - reference).exp();
            if w.is_finite() {
                mass_sum += w;
                acc.add_with_var(w, &e.dev, &e.var);
            }
            acc.draws += 1;
        }
        if acc.effective_samples() >= 2.0 {
            let worst = acc.std_errors().into_iter().fold(0.0f64, f64::max);
            if worst <= tol {
                break;
            }
            if acc.draws >= settings.max_samples {
                log::warn!("factorized importance sampling hit the sample cap with standard error {worst:e} > {tol:e}");
                break;
            }
            let scale = (worst / tol).powi(2) * 1.05;
            let needed = (acc.draws as f64 * scale).ceil() as usize;
            batch = needed.saturating_sub(acc.draws).clamp(pilot, settings.max_samples - acc.draws);
        } else if acc.draws >= settings.max_samples {
            return Err(FilterError::VanishingMass { mass: 0.0 });
        }
    }
    let (mean, cov, se, cov_se) = acc.finish(problem.mu);
    let mass = (reference + (mass_sum / acc.draws as f64).ln()).exp();
    Ok(Block { mean, cov, se, cov_se, mass, method: MomentMethod::Importance, samples: acc.draws })
}

/// Nodes and weights of the `q`-point Gauss–Hermite rule for the standard
/// normal density (weights sum to one), by the Golub–Welsch eigenproblem.
pub(crate) fn gauss_hermite(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::zeros(q, q);
    for k in 1..q {
        let b = (k as f64).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> =
        (0..q).map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    use nalgebra::{dmatrix, dvector};

    /// Plain rejection estimate of mean, covariance and mass.
    fn rejection(mu: &DVector<f64>, sigma: &DMatrix<f64>, lo: &[f64], hi: &[f64], n: usize) -> (DVector<f64>, DMatrix<f64>, f64) {
        let c = mu.len();
        let l = sigma.clone().cholesky().unwrap().unpack();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut s1, mut s2, mut hits) = (DVector::zeros(c), DMatrix::zeros(c, c), 0usize);
        for _ in 0..n {
            let z = DVector::from_fn(c, |_, _| StandardNormal.sample(&mut rng));
            let x = mu + &l * z;
            if (0..c).all(|i| x[i] >= lo[i] && x[i] <= hi[i]) {
                hits += 1;
                s1 += &x;
                s2 += &x * x.transpose();
            }
        }
        let m = s1 / hits as f64;
        let cov = s2 / hits as f64 - &m * m.transpose();
        (m, cov, hits as f64 / n as f64)
    }

    fn compare(mu: DVector<f64>, signal: DMatrix<f64>, noise: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>, method: MomentMethod, tol: f64) {
        let sigma = &signal + DMatrix::from_diagonal(&DVector::from_column_slice(&noise));
        let settings = TruncationSettings::default();
        let got = moments(&mu, &sigma, &noise, &lo, &hi, 5, &settings, tol).unwrap();
        assert_eq!(got.method, method);
        let (m, cov, mass) = rejection(&mu, &sigma, &lo, &hi, 2_000_000);
        assert!((&got.mean - &m).amax() < 4e-3, "mean {} vs {}", got.mean, m);
        assert!((&got.cov - &cov).amax() < 6e-3, "cov {} vs {}", got.cov, cov);
        assert!((got.mass - mass).abs() < 3e-3, "mass {} vs {mass}", got.mass);
    }

    #[test]
    fn low_rank_signal_matches_rejection() {
        let b = dmatrix![1.0, 0.2; 0.8, -0.5; 0.3, 0.9];
        compare(
            dvector![0.2, -0.1, 0.4],
            &b * b.transpose(),
            vec![0.3, 0.2, 0.4],
            vec![f64::NEG_INFINITY, -0.5, 0.0],
            vec![0.5, f64::INFINITY, 1.0],
            MomentMethod::Quadrature,
            1e-4,
        );
    }

    #[test]
    fn full_rank_signal_matches_rejection() {
        let a = DMatrix::from_fn(5, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.25 - 0.4);
        compare(
            dvector![0.1, 0.0, -0.2, 0.3, 0.0],
            &a * a.transpose(),
            vec![0.5, 0.4, 0.6, 0.3, 0.5],
            vec![f64::NEG_INFINITY, -1.0, f64::NEG_INFINITY, 0.0, -0.5],
            vec![0.4, f64::INFINITY, 0.2, f64::INFINITY, 0.8],
            MomentMethod::Importance,
            1e-3,
        );
    }

    #[test]
    fn pure_noise_is_closed_form() {
        compare(
            dvector![0.0, 1.0],
            DMatrix::zeros(2, 2),
            vec![1.0, 0.25],
            vec![0.0, f64::NEG_INFINITY],
            vec![f64::INFINITY, 0.8],
            MomentMethod::ClosedForm,
            1e-4,
        );
    }

    #[test]
    fn usable_requires_noise_on_every_component() {
        let s = dmatrix![1.0, 0.5; 0.5, 1.0];
        assert!(usable(&s, &[0.1, 0.1]));
        assert!(!usable(&s, &[0.1, 0.0]));
    }

    #[test]
    fn hermite_rule_integrates_moments() {
        let (x, w) = gauss_hermite(10);
        let m = |p: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!(m(1).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        assert!((m(6) - 15.0).abs() < 1e-10);
    }
}
