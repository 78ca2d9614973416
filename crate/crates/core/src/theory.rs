//! Closed-form calculators: contraction coefficients of Gaussian and
//! Gaussian-mixture channels, minimax lower bounds, and the signed-permutation
//! averaging identity `E[AᵀBA] = (Tr B / d)·I`.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{inv_sqrt_pd, operator_norm, sym_eigen};
use crate::rng::{stream, stream_rng};

const PROB_TOL: f64 = 1e-12;
const CONTRACTION_TOL: f64 = 1e-10;
const EIGEN_FLOOR: f64 = 1e-12;

/// `Y = A_V·X + Z_V` with state `V` drawn with probability `p_v` independently
/// of `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureChannel {
    states: Vec<(DMatrix<f64>, f64)>,
    d_x: usize,
    d_y: usize,
}

impl MixtureChannel {
    pub fn new(states: Vec<(DMatrix<f64>, f64)>) -> Result<Self> {
        let (first, _) = states.first().ok_or_else(|| invalid("channel needs at least one state"))?;
        let (d_y, d_x) = first.shape();
        let mut total = 0.0;
        for (a, p) in &states {
            if a.shape() != (d_y, d_x) {
                return Err(Error::Shape("all states must share one shape".into()));
            }
            if !(p.is_finite() && *p >= 0.0) {
                return Err(invalid(format!("state probability {p} is not a probability")));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite);
            }
            total += p;
            if d_x > 0 && d_y > 0 && operator_norm(a)?.powi(2) > 1.0 + CONTRACTION_TOL {
                return Err(invalid("state matrix violates A·Aᵀ ⪯ I"));
            }
        }
        if (total - 1.0).abs() > PROB_TOL {
            return Err(invalid(format!("state probabilities sum to {total}")));
        }
        Ok(Self { states, d_x, d_y })
    }

    pub fn states(&self) -> &[(DMatrix<f64>, f64)] {
        &self.states
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn d_y(&self) -> usize {
        self.d_y
    }

    /// `Σ p_v·A_vᵀA_v`.
    pub fn averaged_gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.d_x, self.d_x);
        for (a, p) in &self.states {
            g += (a.transpose() * a) * *p;
        }
        g
    }

    /// The same state probabilities with every `A_v = 0`.
    pub fn zero_like(&self, d_y: usize, d_x: usize) -> Self {
        let states = self.states.iter().map(|(_, p)| (DMatrix::zeros(d_y, d_x), *p)).collect();
        Self { states, d_x, d_y }
    }
}

/// `‖Σ p_v·A_vᵀA_v‖_op`.
pub fn csdpi_mixture(ch: &MixtureChannel) -> f64 {
    top_eigenvalue(&ch.averaged_gram())
}

/// `Σ p_v·‖A_vᵀA_v‖_op`, which can overshoot the exact coefficient.
pub fn csdpi_naive_upper(ch: &MixtureChannel) -> f64 {
    ch.states.iter().map(|(a, p)| p * top_eigenvalue(&(a.transpose() * a))).sum()
}

fn top_eigenvalue(g: &DMatrix<f64>) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    sym_eigen(g).eigenvalues[0].max(0.0)
}

/// Rayleigh quotient `μᵀ(Σ p_v A_vᵀA_v)μ / ‖μ‖²`.
pub fn mean_shift_ratio(ch: &MixtureChannel, mu: &DVector<f64>) -> Result<f64> {
    if mu.len() != ch.d_x {
        return Err(Error::Shape(format!("mu has length {}, channel input is {}", mu.len(), ch.d_x)));
    }
    let norm2 = mu.norm_squared();
    if !(norm2 > 0.0) {
        return Err(invalid("mu must be nonzero"));
    }
    Ok((mu.transpose() * ch.averaged_gram() * mu)[(0, 0)] / norm2)
}

/// Top eigenvector of the averaged Gram matrix.
pub fn top_direction(ch: &MixtureChannel) -> DVector<f64> {
    sym_eigen(&ch.averaged_gram()).eigenvectors.column(0).into_owned()
}

/// Product channel `diag(A1_v, A2_v)` driven by a shared state, with its
/// coefficient.
pub fn csdpi_product(ch1: &MixtureChannel, ch2: &MixtureChannel) -> Result<(MixtureChannel, f64)> {
    if ch1.states.len() != ch2.states.len() {
        return Err(invalid("product channels need the same number of states"));
    }
    let mut states = Vec::with_capacity(ch1.states.len());
    for ((a1, p1), (a2, p2)) in ch1.states.iter().zip(&ch2.states) {
        if (p1 - p2).abs() > PROB_TOL {
            return Err(invalid("paired states must have equal probabilities"));
        }
        let mut a = DMatrix::zeros(ch1.d_y + ch2.d_y, ch1.d_x + ch2.d_x);
        a.view_mut((0, 0), (ch1.d_y, ch1.d_x)).copy_from(a1);
        a.view_mut((ch1.d_y, ch1.d_x), (ch2.d_y, ch2.d_x)).copy_from(a2);
        states.push((a, *p1));
    }
    let product = MixtureChannel::new(states)?;
    let coefficient = csdpi_mixture(&product);
    Ok((product, coefficient))
}

/// Blocks of a jointly Gaussian pair `(X, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianJoint {
    pub c11: DMatrix<f64>,
    pub c12: DMatrix<f64>,
    pub c22: DMatrix<f64>,
}

impl GaussianJoint {
    pub fn new(c11: DMatrix<f64>, c12: DMatrix<f64>, c22: DMatrix<f64>) -> Result<Self> {
        let (d1, d2) = (c11.nrows(), c22.nrows());
        if c11.ncols() != d1 || c22.ncols() != d2 || c12.shape() != (d1, d2) {
            return Err(Error::Shape("inconsistent joint covariance blocks".into()));
        }
        let joint = crate::protocol::assemble(&c11, &c12, &c22);
        let eig = sym_eigen(&joint);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let top = eig.eigenvalues.iter().fold(0.0_f64, |a, l| a.max(l.abs()));
        if min < -1e-10 * top.max(1.0) {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        Ok(Self { c11, c12, c22 })
    }
}

/// `‖C11^{-1/2}·C12·C22^{-1/2}‖_op²`, the squared top canonical correlation.
pub fn sdpi_gaussian(joint: &GaussianJoint) -> Result<f64> {
    let a = inv_sqrt_pd(&joint.c11, EIGEN_FLOOR)?;
    let b = inv_sqrt_pd(&joint.c22, EIGEN_FLOOR)?;
    Ok(operator_norm(&(a * &joint.c12 * b))?.powi(2))
}

/// Interactive (multi-round) counterpart; for vector Gaussians it coincides
/// with [`sdpi_gaussian`].
pub fn symmetric_sdpi_gaussian(joint: &GaussianJoint) -> Result<f64> {
    sdpi_gaussian(joint)
}

/// Which constant a bound carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundConvention {
    /// The stated `σ²/32` prefactor is included.
    ExplicitConstant,
    /// Only the rate is known; the hidden constant is reported as 1.
    RateOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub convention: BoundConvention,
}

/// Arguments of the two-agent lower bounds. Infinite `m` or budgets are
/// allowed and act as limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub sigma: f64,
    pub m: f64,
    pub d1: usize,
    pub d2: usize,
    pub b1: f64,
    pub b2: f64,
}

impl BoundInputs {
    fn check(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0;
        if positive(self.sigma) && positive(self.m) && self.d1 > 0 && self.d2 > 0 && positive(self.b1) && positive(self.b2) {
            Ok(())
        } else {
            Err(invalid("bound inputs must all be positive"))
        }
    }

    fn dims(&self) -> (f64, f64, f64) {
        (self.d1 as f64, self.d2 as f64, (self.d1 + self.d2) as f64)
    }

    pub fn alpha_cc_op(&self) -> f64 {
        let (d1, d2, _) = self.dims();
        let dmax = d1.max(d2);
        (d1 * dmax / (2.0 * self.b1)).sqrt().max((d2 * dmax / (2.0 * self.b2)).sqrt())
    }

    pub fn alpha_sc_op(&self) -> f64 {
        let (_, _, d) = self.dims();
        (d / (3.0 * self.m)).sqrt()
    }

    pub fn alpha_cc_fr(&self) -> f64 {
        let (d1, d2, _) = self.dims();
        (d1 * d2 / 14.0 * (d1 / self.b1).max(d2 / self.b2)).sqrt()
    }

    pub fn alpha_sc_cross_fr(&self) -> f64 {
        let (d1, d2, d) = self.dims();
        (d * d1.min(d2) / (42.0 * self.m)).sqrt()
    }

    pub fn alpha_sc_fr(&self) -> f64 {
        let (_, _, d) = self.dims();
        (d * d / (42.0 * self.m)).sqrt()
    }

    pub fn alpha_cc_self_fr(&self) -> f64 {
        let (d1, d2, _) = self.dims();
        let t1 = d1.sqrt() * 2f64.powf(-16.0 * self.b1 / (d1 * d1));
        let t2 = d2.sqrt() * 2f64.powf(-16.0 * self.b2 / (d2 * d2));
        4.0 / 7.0 * t1.max(t2)
    }
}

fn explicit(inp: &BoundInputs, core: f64) -> Bound {
    Bound { value: inp.sigma * inp.sigma / 32.0 * core, convention: BoundConvention::ExplicitConstant }
}

/// Operator-norm lower bound on full-covariance estimation.
pub fn lower_bound_op(inp: &BoundInputs) -> Result<Bound> {
    inp.check()?;
    Ok(explicit(inp, inp.alpha_cc_op().max(inp.alpha_sc_op()).min(2.0)))
}

/// Operator-norm lower bound on cross-covariance estimation.
pub fn lower_bound_op_cross(inp: &BoundInputs) -> Result<Bound> {
    lower_bound_op(inp)
}

/// Frobenius lower bound on full-covariance estimation.
pub fn lower_bound_fr(inp: &BoundInputs) -> Result<Bound> {
    inp.check()?;
    let (_, _, d) = inp.dims();
    let core = inp.alpha_cc_fr().max(inp.alpha_sc_fr()).min(d.sqrt() / 7.0);
    Ok(explicit(inp, core.max(inp.alpha_cc_self_fr())))
}

/// Frobenius lower bound on cross-covariance estimation.
pub fn lower_bound_fr_cross(inp: &BoundInputs) -> Result<Bound> {
    inp.check()?;
    let (d1, d2, _) = inp.dims();
    let core = inp.alpha_cc_fr().max(inp.alpha_sc_cross_fr()).min(d1.min(d2).sqrt() / 7.0);
    Ok(explicit(inp, core))
}

/// `σ²·√(d·max_k(d_k/B_k) ∨ d/m)`, a rate whose constant is unknown.
pub fn lower_bound_multi(sigma: f64, m: f64, dims: &[usize], budgets: &[f64]) -> Result<Bound> {
    if dims.is_empty() || dims.len() != budgets.len() {
        return Err(invalid("need one budget per agent"));
    }
    if !(sigma > 0.0 && m > 0.0) || dims.contains(&0) || budgets.iter().any(|&b| !(b > 0.0)) {
        return Err(invalid("bound inputs must all be positive"));
    }
    let d: usize = dims.iter().sum();
    let d = d as f64;
    let worst = dims.iter().zip(budgets).map(|(&dk, &bk)| dk as f64 / bk).fold(0.0, f64::max);
    let value = sigma * sigma * (d * worst).max(d / m).sqrt();
    Ok(Bound { value, convention: BoundConvention::RateOnly })
}

/// How to average over signed permutation matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpmMode {
    Exact,
    MonteCarlo { trials: usize, seed: u64 },
}

/// `E[AᵀBA]` over `A` uniform on the `2^d·d!` signed permutation matrices.
pub fn signed_perm_expectation(b: &DMatrix<f64>, mode: SpmMode) -> Result<DMatrix<f64>> {
    match mode {
        SpmMode::Exact => signed_perm_exact(b),
        SpmMode::MonteCarlo { trials, seed } => Ok(signed_perm_monte_carlo(b, trials, seed)?.0),
    }
}

fn check_square(b: &DMatrix<f64>) -> Result<usize> {
    if b.nrows() != b.ncols() || b.nrows() == 0 {
        return Err(Error::Shape("B must be square and nonempty".into()));
    }
    Ok(b.nrows())
}

/// `(AᵀBA)_{ij} = s_i·s_j·B_{π(i)π(j)}` for `A = P_π·diag(s)`.
fn conjugate(b: &DMatrix<f64>, perm: &[usize], signs: &[f64], out: &mut DMatrix<f64>) {
    let d = perm.len();
    for j in 0..d {
        for i in 0..d {
            out[(i, j)] += signs[i] * signs[j] * b[(perm[i], perm[j])];
        }
    }
}

fn signed_perm_exact(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = check_square(b)?;
    if d > 5 {
        return Err(invalid(format!("exact enumeration supports d ≤ 5, got {d}")));
    }
    let mut sum = DMatrix::zeros(d, d);
    let mut count = 0usize;
    for perm in (0..d).permutations(d) {
        for mask in 0..(1u32 << d) {
            let signs: Vec<f64> = (0..d).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
            conjugate(b, &perm, &signs, &mut sum);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Monte Carlo mean and entrywise standard error.
pub fn signed_perm_monte_carlo(b: &DMatrix<f64>, trials: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = check_square(b)?;
    if trials < 2 {
        return Err(invalid("Monte Carlo needs at least two trials"));
    }
    let mut rng = stream_rng(seed, stream::VALIDATOR);
    let mut sum = DMatrix::zeros(d, d);
    let mut sum_sq = DMatrix::zeros(d, d);
    let mut perm: Vec<usize> = (0..d).collect();
    for _ in 0..trials {
        // Fisher–Yates.
        for i in (1..d).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let signs: Vec<f64> = (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let mut x = DMatrix::zeros(d, d);
        conjugate(b, &perm, &signs, &mut x);
        sum_sq += x.component_mul(&x);
        sum += x;
    }
    let t = trials as f64;
    let mean = &sum / t;
    let var = (sum_sq / t - mean.component_mul(&mean)).map(|v| v.max(0.0) * t / (t - 1.0));
    let stderr = var.map(|v| (v / t).sqrt());
    Ok((mean, stderr))
}
