//! Monte Carlo checks of the concentration inequalities the protocols rely
//! on. Each validator compares an empirical frequency or mean with its
//! analytical bound and passes when `empirical ≤ bound + 3·stderr` at every
//! grid point.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{operator_norm, Source};
use crate::rng::{stream, stream_rng, trial_seed};

/// Slack, in standard errors, granted to the empirical side.
pub const STDERR_SLACK: f64 = 3.0;

/// Cross-correlation used when drawing dependent pairs.
pub const PAIR_CORRELATION: f64 = 0.5;

pub const VALIDATOR_NAMES: [&str; 5] = ["cov_tail", "opnorm_tail", "subgamma_mgf", "sum_tail", "max_inequality"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub name: String,
    /// What each grid row measures.
    pub labels: Vec<String>,
    pub grid: Vec<f64>,
    pub empirical: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Bound after clamping probabilities to 1.
    pub bound: Vec<f64>,
    pub raw_bound: Vec<f64>,
    pub pass: bool,
    pub trials: usize,
    pub seed: u64,
}

impl ValidationReport {
    fn new(name: &str, trials: usize, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            labels: Vec::new(),
            grid: Vec::new(),
            empirical: Vec::new(),
            stderr: Vec::new(),
            bound: Vec::new(),
            raw_bound: Vec::new(),
            pass: true,
            trials,
            seed,
        }
    }

    fn push(&mut self, label: String, t: f64, stat: Stat, raw_bound: f64, is_probability: bool) {
        let bound = if is_probability { raw_bound.min(1.0) } else { raw_bound };
        self.pass &= stat.mean <= bound + STDERR_SLACK * stat.stderr;
        self.labels.push(label);
        self.grid.push(t);
        self.empirical.push(stat.mean);
        self.stderr.push(stat.stderr);
        self.bound.push(bound);
        self.raw_bound.push(raw_bound);
    }

    /// Indices of grid rows that violate the pass rule.
    pub fn violations(&self) -> Vec<usize> {
        (0..self.grid.len())
            .filter(|&i| self.empirical[i] > self.bound[i] + STDERR_SLACK * self.stderr[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Stat {
    mean: f64,
    stderr: f64,
}

/// Mean and standard error of the mean, summed in index order.
fn stat(values: impl Iterator<Item = f64>) -> Stat {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return Stat { mean, stderr: 0.0 };
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Stat { mean, stderr: (var / n).sqrt() }
}

fn frequency(flags: impl Iterator<Item = bool>) -> Stat {
    stat(flags.map(|b| if b { 1.0 } else { 0.0 }))
}

/// Unit-variance draw from the chosen family.
fn draw(rng: &mut ChaCha8Rng, source: Source) -> f64 {
    match source {
        Source::ScaledRademacher => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        _ => StandardNormal.sample(rng),
    }
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < 2 {
        return Err(invalid("validators need at least two trials"));
    }
    Ok(())
}

/// Runs `f` on every trial in parallel; results come back in trial order.
fn per_trial<T: Send>(seed: u64, tag: u64, trials: usize, f: impl Fn(&mut ChaCha8Rng) -> T + Sync) -> Vec<T> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| f(&mut stream_rng(trial_seed(seed, tag, t), stream::VALIDATOR)))
        .collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, source: Source) -> DMatrix<f64> {
    let v: Vec<f64> = (0..rows * cols).map(|_| draw(rng, source)).collect();
    DMatrix::from_vec(rows, cols, v)
}

/// Tail of the cross-covariance estimator: `P[‖C̃_XY − C_XY‖_op ≥ 10σ₁σ₂t]`
/// against `9^{d1+d2}·exp(−m·min(t, t²))`.
#[allow(clippy::too_many_arguments)]
pub fn validate_cov_tail(
    d1: usize,
    d2: usize,
    m: usize,
    sigma1: f64,
    sigma2: f64,
    t_grid: &[f64],
    trials: usize,
    seed: u64,
    source: Source,
) -> Result<ValidationReport> {
    check_trials(trials)?;
    if d1 == 0 || d2 == 0 || m == 0 {
        return Err(invalid("dimensions and m must be positive"));
    }
    let rho = PAIR_CORRELATION;
    let shared = d1.min(d2);
    // Y = σ₂(ρ·P·g + √(1−ρ²)·h) with P picking the first `shared` coordinates.
    let mut truth = DMatrix::zeros(d1, d2);
    for i in 0..shared {
        truth[(i, i)] = sigma1 * sigma2 * rho;
    }
    let deviations = per_trial(seed, 0, trials, |rng| {
        let g = random_matrix(rng, d1, m, source);
        let h = random_matrix(rng, d2, m, source);
        let mut y = h * (1.0 - rho * rho).sqrt();
        y.rows_mut(0, shared).zip_apply(&g.rows(0, shared), |a, b| *a += rho * b);
        let x = g * sigma1;
        let y = y * sigma2;
        let est = (x * y.transpose()) / m as f64;
        operator_norm(&(est - &truth)).expect("finite samples")
    });
    let mut report = ValidationReport::new("cov_tail", trials, seed);
    for &t in t_grid {
        let threshold = 10.0 * sigma1 * sigma2 * t;
        let s = frequency(deviations.iter().map(|&x| x >= threshold));
        let raw = 9f64.powi((d1 + d2) as i32) * (-(m as f64) * t.min(t * t)).exp();
        report.push(format!("P[dev >= 10 s1 s2 t], t = {t}"), t, s, raw, true);
    }
    Ok(report)
}

/// Operator norm of a `d × n` matrix with independent σ-sub-Gaussian
/// columns: tail at `6σ√(d+n)` and the first two moments.
pub fn validate_opnorm_tail(d: usize, n: usize, sigma: f64, trials: usize, seed: u64, source: Source) -> Result<ValidationReport> {
    check_trials(trials)?;
    if d == 0 || n == 0 {
        return Err(invalid("d and n must be positive"));
    }
    let norms = per_trial(seed, 1, trials, |rng| {
        operator_norm(&(random_matrix(rng, d, n, source) * sigma)).expect("finite samples")
    });
    let s = ((d + n) as f64).sqrt();
    let mut report = ValidationReport::new("opnorm_tail", trials, seed);
    // Strict inequality: for σ = 0 the norm is identically 0 and the event is empty.
    let tail = frequency(norms.iter().map(|&x| x > 6.0 * sigma * s));
    report.push("P[|A|op >= 6 s sqrt(d+n)]".into(), 6.0 * sigma * s, tail, (-2.0 * (d + n) as f64).exp(), true);
    report.push("E[|A|op]".into(), 1.0, stat(norms.iter().copied()), 9.0 * sigma * s, false);
    report.push("E[|A|op^2]".into(), 2.0, stat(norms.iter().map(|x| x * x)), 36.0 * sigma * sigma * (d + n) as f64, false);
    Ok(report)
}

/// MGF of `XY − E[XY]` for independent σ₁-, σ₂-sub-Gaussian `X`, `Y`
/// against the sub-Gamma bound with parameters `(5σ₁σ₂, 2.5σ₁σ₂)`.
pub fn validate_subgamma_mgf(
    sigma1: f64,
    sigma2: f64,
    lambda_grid: &[f64],
    trials: usize,
    seed: u64,
    source: Source,
) -> Result<ValidationReport> {
    check_trials(trials)?;
    let s = sigma1 * sigma2;
    if let Some(l) = lambda_grid.iter().find(|&&l| 2.5 * l.abs() * s >= 1.0) {
        return Err(invalid(format!("lambda = {l} outside |lambda| < 1/(2.5 s1 s2)")));
    }
    let products = per_trial(seed, 2, trials, |rng| sigma1 * draw(rng, source) * sigma2 * draw(rng, source));
    let mut report = ValidationReport::new("subgamma_mgf", trials, seed);
    for &l in lambda_grid {
        let st = stat(products.iter().map(|z| (l * z).exp()));
        let bound = (25.0 * l * l * s * s / (2.0 * (1.0 - 2.5 * l.abs() * s))).exp();
        report.push(format!("E[exp(lambda Z)], lambda = {l}"), l, st, bound, false);
    }
    Ok(report)
}

/// `P[(1/m)·Σ Z_i ≥ 10σ₁σ₂t]` against `exp(−m·min(t, t²))`, where
/// `Z_i = X_iY_i` for independent pairs.
pub fn validate_sum_tail(
    sigma1: f64,
    sigma2: f64,
    m: usize,
    t_grid: &[f64],
    trials: usize,
    seed: u64,
    source: Source,
) -> Result<ValidationReport> {
    check_trials(trials)?;
    if m == 0 {
        return Err(invalid("m must be positive"));
    }
    let means = sum_statistics(sigma1, sigma2, m, trials, seed, source, false);
    let mut report = ValidationReport::new("sum_tail", trials, seed);
    for &t in t_grid {
        let threshold = 10.0 * sigma1 * sigma2 * t;
        let s = frequency(means.iter().map(|&x| x >= threshold));
        report.push(format!("P[mean Z >= 10 s1 s2 t], t = {t}"), t, s, (-(m as f64) * t.min(t * t)).exp(), true);
    }
    Ok(report)
}

/// Per-trial `(1/m)·Σ X_iY_i`, optionally with every `X_i` negated.
pub fn sum_statistics(sigma1: f64, sigma2: f64, m: usize, trials: usize, seed: u64, source: Source, flip_x: bool) -> Vec<f64> {
    let sign = if flip_x { -1.0 } else { 1.0 };
    per_trial(seed, 3, trials, |rng| {
        (0..m).map(|_| sign * sigma1 * draw(rng, source) * sigma2 * draw(rng, source)).sum::<f64>() / m as f64
    })
}

/// `E[max_{i≤n} X_i] ≤ σ√(2 ln n) + α ln n` for centered `(σ, α)`-sub-Gamma
/// variables. `X_i = a·g·h` with `a = min(σ/5, α/2.5)`; for `α = 0` the
/// variables are `N(0, σ²)`.
pub fn validate_max_inequality(sigma: f64, alpha: f64, n_grid: &[usize], trials: usize, seed: u64) -> Result<ValidationReport> {
    check_trials(trials)?;
    if !(sigma >= 0.0 && alpha >= 0.0) || n_grid.contains(&0) {
        return Err(invalid("sigma, alpha must be non-negative and n positive"));
    }
    let mut report = ValidationReport::new("max_inequality", trials, seed);
    for (idx, &n) in n_grid.iter().enumerate() {
        let maxima = per_trial(seed, 4 + ((idx as u64) << 32), trials, |rng| {
            (0..n)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(rng);
                    if alpha == 0.0 {
                        sigma * g
                    } else {
                        let h: f64 = StandardNormal.sample(rng);
                        (sigma / 5.0).min(alpha / 2.5) * g * h
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max)
        });
        let ln = (n as f64).ln();
        let bound = sigma * (2.0 * ln).sqrt() + alpha * ln;
        report.push(format!("E[max of {n}]"), n as f64, stat(maxima.iter().copied()), bound, false);
    }
    Ok(report)
}

/// Documented default grids.
pub mod defaults {
    pub const COV_TAIL_T: [f64; 6] = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0];
    pub const COV_TAIL_DIMS: (usize, usize) = (2, 2);
    pub const COV_TAIL_M: usize = 64;
    pub const OPNORM_DIMS: (usize, usize) = (4, 4);
    pub const MGF_LAMBDA: [f64; 7] = [-0.3, -0.1, 0.0, 0.1, 0.2, 0.3, 0.39];
    pub const SUM_TAIL_M: usize = 50;
    pub const SUM_TAIL_T: [f64; 5] = [0.0, 0.05, 0.1, 0.2, 0.5];
    pub const MAX_N: [usize; 6] = [1, 4, 16, 64, 256, 1024];
    pub const MAX_SIGMA: f64 = 1.0;
    pub const MAX_ALPHA: f64 = 0.5;
}

/// Runs one validator by name at its default grid with unit scales.
pub fn run_default(name: &str, trials: usize, seed: u64) -> Result<ValidationReport> {
    use defaults::*;
    let g = Source::Gaussian;
    match name {
        "cov_tail" => validate_cov_tail(COV_TAIL_DIMS.0, COV_TAIL_DIMS.1, COV_TAIL_M, 1.0, 1.0, &COV_TAIL_T, trials, seed, g),
        "opnorm_tail" => validate_opnorm_tail(OPNORM_DIMS.0, OPNORM_DIMS.1, 1.0, trials, seed, g),
        "subgamma_mgf" => validate_subgamma_mgf(1.0, 1.0, &MGF_LAMBDA, trials, seed, g),
        "sum_tail" => validate_sum_tail(1.0, 1.0, SUM_TAIL_M, &SUM_TAIL_T, trials, seed, g),
        "max_inequality" => validate_max_inequality(MAX_SIGMA, MAX_ALPHA, &MAX_N, trials, seed),
        other => Err(invalid(format!("unknown validator `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cov_tail_clamped_and_deep_tail() {
        let r = validate_cov_tail(2, 2, 32, 1.0, 1.0, &[2.0], 10_000, 1, Source::Gaussian).unwrap();
        assert!(r.pass);
        let r = validate_cov_tail(2, 2, 32, 1.0, 1.0, &[0.01], 2_000, 1, Source::Gaussian).unwrap();
        assert_eq!(r.bound[0], 1.0);
        assert!(r.raw_bound[0] > 1.0);
        let r = validate_cov_tail(1, 1, 200, 1.0, 1.0, &[1.0], 2_000, 2, Source::Gaussian).unwrap();
        assert_eq!(r.empirical[0], 0.0);
        assert!(r.bound[0] < 1e-80);
        assert!(r.pass);
    }

    #[test]
    fn cov_tail_is_scale_equivariant() {
        let t = [0.02, 0.05, 0.1];
        let a = validate_cov_tail(2, 1, 40, 1.0, 1.0, &t, 3_000, 5, Source::Gaussian).unwrap();
        let b = validate_cov_tail(2, 1, 40, 2.0, 2.0, &t, 3_000, 5, Source::Gaussian).unwrap();
        assert_eq!(a.empirical, b.empirical);
    }

    #[test]
    fn opnorm_cases() {
        let r = validate_opnorm_tail(4, 4, 1.0, 10_000, 3, Source::Gaussian).unwrap();
        assert_eq!(r.empirical[0], 0.0);
        assert!(r.pass);
        let r = validate_opnorm_tail(3, 5, 0.0, 100, 3, Source::Gaussian).unwrap();
        assert!(r.empirical.iter().all(|&x| x == 0.0));
        assert!(r.pass);
    }

    #[test]
    fn mgf_cases() {
        let r = validate_subgamma_mgf(1.0, 1.0, &[0.0, 0.1, 0.396], 20_000, 4, Source::Gaussian).unwrap();
        assert_eq!(r.empirical[0], 1.0);
        assert_eq!(r.bound[0], 1.0);
        assert!((r.bound[1] - (0.25f64 / 1.5).exp()).abs() < 1e-12);
        assert!(r.pass);
        assert!(validate_subgamma_mgf(1.0, 1.0, &[0.4], 100, 4, Source::Gaussian).is_err());
    }

    #[test]
    fn sum_tail_cases_and_symmetry() {
        let r = validate_sum_tail(1.0, 1.0, 50, &[0.0, 0.5], 10_000, 6, Source::Gaussian).unwrap();
        assert_eq!(r.bound[0], 1.0);
        assert_eq!(r.empirical[1], 0.0);
        assert!(r.pass);
        let plain = sum_statistics(1.0, 1.0, 20, 20_000, 7, Source::Gaussian, false);
        let flipped = sum_statistics(1.0, 1.0, 20, 20_000, 8, Source::Gaussian, true);
        for a in [0.1, 0.2, 0.3] {
            let p = plain.iter().filter(|&&x| x >= a).count() as f64 / 20_000.0;
            let q = flipped.iter().filter(|&&x| x >= a).count() as f64 / 20_000.0;
            let se = (p * (1.0 - p) / 20_000.0).sqrt().max(1e-4);
            assert!((p - q).abs() <= 5.0 * 2f64.sqrt() * se, "a = {a}: {p} vs {q}");
        }
    }

    #[test]
    fn max_inequality_cases() {
        let r = validate_max_inequality(1.0, 0.5, &[1], 5_000, 9).unwrap();
        assert_eq!(r.bound[0], 0.0);
        assert!(r.pass);
        let r = validate_max_inequality(1.0, 0.0, &[1024], 2_000, 9).unwrap();
        assert!(r.pass);
        assert!(r.empirical[0] > 0.5 * (2.0 * 1024f64.ln()).sqrt());
        let r = validate_max_inequality(0.0, 0.0, &[16], 100, 9).unwrap();
        assert_eq!(r.empirical[0], 0.0);
        assert_eq!(r.bound[0], 0.0);
        assert!(r.pass);
    }

    #[test]
    fn reports_are_deterministic_and_serialize() {
        let a = run_default("cov_tail", 500, 11).unwrap();
        let b = run_default("cov_tail", 500, 11).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: ValidationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert!(run_default("nope", 10, 1).is_err());
    }

    #[test]
    fn rademacher_sources_pass() {
        assert!(validate_opnorm_tail(4, 4, 1.0, 2_000, 12, Source::ScaledRademacher).unwrap().pass);
        assert!(validate_sum_tail(1.0, 1.0, 50, &defaults::SUM_TAIL_T, 2_000, 12, Source::ScaledRademacher).unwrap().pass);
    }
}
