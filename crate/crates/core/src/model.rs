//! Ground-truth covariance models, sampling and the small amount of dense
//! linear algebra the protocols need (norms, symmetric eigendecomposition,
//! PSD projection, Gaussian KL divergence).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream, stream_rng};

const SYMMETRY_TOL: f64 = 1e-12;

/// Distribution family of the latent vector before mixing by `C^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Gaussian,
    /// i.i.d. ±1 coordinates; 1-sub-Gaussian before mixing.
    ScaledRademacher,
    /// Uniform on the unit ball, rescaled to identity covariance.
    UniformBall,
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Source::Gaussian),
            "scaled_rademacher" | "rademacher" => Ok(Source::ScaledRademacher),
            "uniform_ball" => Ok(Source::UniformBall),
            other => Err(Error::Config(format!("unknown source `{other}`"))),
        }
    }
}

/// Block covariance `[[C11, C12], [C12ᵀ, C22]]` of a sub-Gaussian vector split
/// between two feature blocks of sizes `d1` and `d2`.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    d1: usize,
    d2: usize,
    sigma: f64,
    cov: DMatrix<f64>,
    source: Source,
    sqrt_cov: DMatrix<f64>,
}

impl CovarianceModel {
    pub fn new(d1: usize, d2: usize, sigma: f64, cov: DMatrix<f64>, source: Source) -> Result<Self> {
        let d = d1 + d2;
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Shape(format!(
                "covariance is {}x{}, expected {d}x{d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid("sigma must be finite and non-negative"));
        }
        check_finite(&cov)?;
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        if (&cov - cov.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(invalid("covariance is not symmetric"));
        }
        let eig = sym_eigen(&cov);
        let op = eig.eigenvalues.iter().fold(0.0_f64, |a, l| a.max(l.abs()));
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if d > 0 && min < -1e-10 * op {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        if op > sigma * sigma * (1.0 + 1e-12) + 1e-300 {
            return Err(invalid(format!(
                "operator norm {op} exceeds sigma^2 = {}",
                sigma * sigma
            )));
        }
        let sqrt_cov = eig.map_eigenvalues(|l| l.max(0.0).sqrt());
        Ok(Self { d1, d2, sigma, cov, source, sqrt_cov })
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    pub fn dim(&self) -> usize {
        self.d1 + self.d2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    /// The cross block `C12` (`d1 × d2`).
    pub fn cross_block(&self) -> DMatrix<f64> {
        self.cov.view((0, self.d1), (self.d1, self.d2)).into_owned()
    }

    pub fn self_block(&self, k: usize) -> DMatrix<f64> {
        match k {
            0 => self.cov.view((0, 0), (self.d1, self.d1)).into_owned(),
            _ => self.cov.view((self.d1, self.d1), (self.d2, self.d2)).into_owned(),
        }
    }
}

/// `C = (σ²/2)·[[I, δDᵀ], [δD, I]]` with `D` a `d2 × d1` contraction.
pub fn build_block_covariance(
    d1: usize,
    d2: usize,
    sigma: f64,
    delta: f64,
    coupling: &DMatrix<f64>,
) -> Result<CovarianceModel> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(invalid(format!("delta = {delta} outside [0, 1]")));
    }
    if coupling.nrows() != d2 || coupling.ncols() != d1 {
        return Err(Error::Shape(format!(
            "coupling is {}x{}, expected {d2}x{d1}",
            coupling.nrows(),
            coupling.ncols()
        )));
    }
    let norm = operator_norm(coupling)?;
    if norm > 1.0 + 1e-12 {
        return Err(invalid(format!("coupling operator norm {norm} exceeds 1")));
    }
    let d = d1 + d2;
    let half = 0.5 * sigma * sigma;
    let mut cov = DMatrix::<f64>::identity(d, d) * half;
    for i in 0..d2 {
        for j in 0..d1 {
            let v = half * delta * coupling[(i, j)];
            cov[(d1 + i, j)] = v;
            cov[(j, d1 + i)] = v;
        }
    }
    CovarianceModel::new(d1, d2, sigma, cov, Source::Gaussian)
}

/// Random `rows × cols` matrix with operator norm exactly 1 (Gaussian entries,
/// rescaled). Zero-sized shapes return the empty matrix.
pub fn random_contraction<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(rows, cols);
    }
    let entries: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    let m = DMatrix::from_vec(rows, cols, entries);
    let norm = operator_norm(&m).expect("finite gaussian matrix");
    m / norm
}

/// Data held by one party: `rows` features by `cols` samples, one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    data: DMatrix<f64>,
}

impl SampleMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(invalid("sample matrix needs at least one column"));
        }
        check_finite(&data)?;
        Ok(Self { data })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    /// Rows `start..start + len` as a new sample matrix.
    pub fn row_block(&self, start: usize, len: usize) -> SampleMatrix {
        SampleMatrix { data: self.data.rows(start, len).into_owned() }
    }

    /// The first `n` columns.
    pub fn leading_columns(&self, n: usize) -> DMatrix<f64> {
        self.data.columns(0, n).into_owned()
    }

    /// `(1/m)·X Xᵀ`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let m = self.cols() as f64;
        (&self.data * self.data.transpose()) / m
    }
}

/// Draws `count` i.i.d. samples `z = C^{1/2}·g` from the model's source family.
pub fn sample(model: &CovarianceModel, count: usize, seed: u64) -> Result<SampleMatrix> {
    if count == 0 {
        return Err(invalid("sample count must be positive"));
    }
    let d = model.dim();
    let mut rng = stream_rng(seed, stream::SAMPLES);
    let mut latent = Vec::with_capacity(d * count);
    match model.source {
        Source::Gaussian => {
            for _ in 0..d * count {
                latent.push(StandardNormal.sample(&mut rng));
            }
        }
        Source::ScaledRademacher => {
            for _ in 0..d * count {
                latent.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
            }
        }
        Source::UniformBall => {
            // Uniform on the unit ball has covariance I/(d+2).
            let scale = ((d + 2) as f64).sqrt();
            for _ in 0..count {
                let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let radius = rng.random::<f64>().powf(1.0 / d as f64);
                latent.extend(g.iter().map(|x| x / norm * radius * scale));
            }
        }
    }
    let latent = DMatrix::from_vec(d, count, latent);
    SampleMatrix::new(&model.sqrt_cov * latent)
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> Result<f64> {
    check_finite(m)?;
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(m.clone().singular_values().max())
}

pub fn frobenius_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Symmetric eigendecomposition, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    /// `V·diag(f(λ))·Vᵀ`, re-symmetrized.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            let fl = f(l);
            scaled.column_mut(j).scale_mut(fl);
        }
        symmetrize(&(scaled * v.transpose()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map_eigenvalues(|l| l)
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition of `(M + Mᵀ)/2`.
pub fn sym_eigen(m: &DMatrix<f64>) -> EigenDecomposition {
    let n = m.nrows();
    if n == 0 {
        return EigenDecomposition { eigenvalues: DVector::zeros(0), eigenvectors: DMatrix::zeros(0, 0) };
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    EigenDecomposition { eigenvalues, eigenvectors }
}

/// Nearest PSD matrix in Frobenius norm: strictly negative eigenvalues of the
/// symmetrized input are dropped.
pub fn psd_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_eigen(m).map_eigenvalues(|l| if l >= 0.0 { l } else { 0.0 })
}

/// Principal square root of a PSD matrix; negative eigenvalues clamp to 0.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_eigen(m).map_eigenvalues(|l| l.max(0.0).sqrt())
}

/// `(S)^{-1/2}` for positive definite `S`. Eigenvalues at or below
/// `floor·λ_max` are rejected as singular.
pub fn inv_sqrt_pd(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    check_finite(m)?;
    let eig = sym_eigen(m);
    let top = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    if eig.eigenvalues.iter().any(|&l| l <= floor * top.max(1.0) || l <= 0.0) {
        return Err(Error::Singular);
    }
    Ok(eig.map_eigenvalues(|l| 1.0 / l.sqrt()))
}

/// `KL(N(0, S1) ‖ N(0, S0)) = ½(Tr(S0⁻¹S1) − d − ln det(S0⁻¹S1))`.
pub fn kl_centered_gaussian(s1: &DMatrix<f64>, s0: &DMatrix<f64>) -> Result<f64> {
    if s1.shape() != s0.shape() || s0.nrows() != s0.ncols() {
        return Err(Error::Shape("KL arguments must be square and of equal size".into()));
    }
    check_finite(s1)?;
    check_finite(s0)?;
    let d = s0.nrows();
    let c0 = symmetrize(s0).cholesky().ok_or(Error::Singular)?;
    let c1 = symmetrize(s1).cholesky().ok_or(Error::Singular)?;
    let logdet = |l: &DMatrix<f64>| (0..d).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let trace = c0.solve(&symmetrize(s1)).trace();
    let log_ratio = logdet(&c1.l()) - logdet(&c0.l());
    Ok((0.5 * (trace - d as f64 - log_ratio)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eigenvalues_sorted(m: &DMatrix<f64>) -> Vec<f64> {
        let mut v: Vec<f64> = sym_eigen(m).eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn block_covariance_rank_one_limit() {
        let d = DMatrix::from_element(1, 1, 1.0);
        let model = build_block_covariance(1, 1, 2f64.sqrt(), 1.0, &d).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!((model.cov() - expected).amax() < 1e-12);
        let ev = eigenvalues_sorted(model.cov());
        assert_abs_diff_eq!(ev[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn block_covariance_decoupled_is_identity() {
        let d = DMatrix::from_row_slice(1, 2, &[0.6, -0.8]);
        let model = build_block_covariance(2, 1, 2f64.sqrt(), 0.0, &d).unwrap();
        assert!((model.cov() - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn block_covariance_spectrum_against_direct_eigendecomposition() {
        let model = build_block_covariance(2, 2, 2f64.sqrt(), 0.5, &DMatrix::identity(2, 2)).unwrap();
        // Each coordinate pair (i, d1 + i) is the 2x2 block [[1, 0.5], [0.5, 1]].
        let ev = eigenvalues_sorted(model.cov());
        for (got, want) in ev.iter().zip([0.5, 0.5, 1.5, 1.5]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn block_covariance_rejects_expanding_coupling() {
        let d = DMatrix::from_element(1, 1, 1.5);
        assert!(build_block_covariance(1, 1, 1.0, 1.0, &d).is_err());
        assert!(build_block_covariance(1, 1, 1.0, 1.2, &DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn block_covariance_spectrum_matches_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (d1, d2) in [(3, 2), (2, 4), (5, 5), (1, 3)] {
            let d = random_contraction(d2, d1, &mut rng) * 0.9;
            let sigma = 1.7;
            let delta = 0.6;
            let model = build_block_covariance(d1, d2, sigma, delta, &d).unwrap();
            let half = sigma * sigma / 2.0;
            let sv: Vec<f64> = d.clone().singular_values().iter().copied().collect();
            let mut expected = Vec::new();
            for s in &sv {
                expected.push(half * (1.0 + delta * s));
                expected.push(half * (1.0 - delta * s));
            }
            while expected.len() < d1 + d2 {
                expected.push(half);
            }
            expected.sort_by(f64::total_cmp);
            let got = eigenvalues_sorted(model.cov());
            for (g, e) in got.iter().zip(&expected) {
                assert_abs_diff_eq!(*g, *e, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn operator_norm_examples() {
        assert_abs_diff_eq!(operator_norm(&DMatrix::identity(5, 5)).unwrap(), 1.0, epsilon = 1e-12);
        let mut b = DMatrix::zeros(4, 4);
        b[(0, 2)] = 3.0;
        b[(1, 3)] = 1.0;
        b[(2, 0)] = 3.0;
        b[(3, 1)] = 1.0;
        assert_abs_diff_eq!(operator_norm(&b).unwrap(), 3.0, epsilon = 1e-12);
        // sqrt of the larger root of λ² − 30λ + 4 = 0 (eigenvalues of MᵀM).
        let oracle = ((30.0 + (900.0f64 - 16.0).sqrt()) / 2.0).sqrt();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(operator_norm(&m).unwrap(), oracle, epsilon = 1e-12);
        assert!((oracle - 5.4650).abs() < 1e-4);
        let mut bad = DMatrix::<f64>::zeros(2, 2);
        bad[(0, 0)] = f64::NAN;
        assert!(operator_norm(&bad).is_err());
    }

    #[test]
    fn frobenius_norm_examples() {
        assert_abs_diff_eq!(frobenius_norm(&DMatrix::identity(4, 4)), 2.0);
        assert_eq!(frobenius_norm(&DMatrix::zeros(3, 2)), 0.0);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(frobenius_norm(&m), 30f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn psd_project_examples() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        assert!((psd_project(&p) - &p).amax() < 1e-10);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((psd_project(&m) - want).amax() < 1e-12);
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!((psd_project(&m) - want).amax() < 1e-12);
    }

    #[test]
    fn psd_project_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_contraction(6, 6, &mut rng);
        let s = symmetrize(&a);
        let once = psd_project(&s);
        let twice = psd_project(&once);
        assert!((once.clone() - twice).amax() < 1e-12);
        assert!(sym_eigen(&once).eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn eigendecomposition_is_orthonormal_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_contraction(7, 7, &mut rng);
        let s = symmetrize(&(&a * 3.0));
        let eig = sym_eigen(&s);
        let vtv = eig.eigenvectors.transpose() * &eig.eigenvectors;
        assert!((vtv - DMatrix::identity(7, 7)).amax() < 1e-10);
        assert!((eig.reconstruct() - &s).amax() < 1e-9 * operator_norm(&s).unwrap());
        for w in eig.eigenvalues.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn kl_examples() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert_abs_diff_eq!(kl_centered_gaussian(&s, &s).unwrap(), 0.0, epsilon = 1e-14);
        let two = DMatrix::from_element(1, 1, 2.0);
        let one = DMatrix::from_element(1, 1, 1.0);
        let want = 0.5 * (1.0 - 2f64.ln());
        assert_abs_diff_eq!(kl_centered_gaussian(&two, &one).unwrap(), want, epsilon = 1e-14);
        assert!((want - 0.153426).abs() < 1e-6);
        let s1 = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let want = 0.5 * (3.0 - 4f64.ln());
        assert_abs_diff_eq!(kl_centered_gaussian(&s1, &DMatrix::identity(2, 2)).unwrap(), want, epsilon = 1e-14);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(kl_centered_gaussian(&DMatrix::identity(2, 2), &singular).is_err());
    }

    #[test]
    fn sample_is_deterministic_and_degenerate_is_zero() {
        let model = build_block_covariance(2, 2, 1.0, 0.5, &DMatrix::identity(2, 2)).unwrap();
        let a = sample(&model, 50, 9).unwrap();
        let b = sample(&model, 50, 9).unwrap();
        assert_eq!(a, b);
        let c = sample(&model, 50, 10).unwrap();
        assert_ne!(a, c);
        let zero = CovarianceModel::new(1, 1, 0.0, DMatrix::zeros(2, 2), Source::Gaussian).unwrap();
        let z = sample(&zero, 20, 1).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
        assert!(sample(&model, 0, 1).is_err());
    }

    #[test]
    fn model_rejects_bad_covariances() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(CovarianceModel::new(1, 1, 2.0, asym, Source::Gaussian).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            CovarianceModel::new(1, 1, 2.0, indefinite, Source::Gaussian),
            Err(Error::NotPsd { .. })
        ));
        assert!(CovarianceModel::new(1, 1, 0.5, DMatrix::identity(2, 2), Source::Gaussian).is_err());
    }
}
