//! Estimation protocols: two-agent (operator and Frobenius targets),
//! multi-agent with dithered coordinates, and the two-round interactive
//! cross-covariance scheme.
//!
//! Parameter structs report the constants the achievability argument calls
//! for. Those constants are far beyond desk scale, so every protocol also runs
//! from a setup with explicit `m`, `n` and budgets.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{operator_norm, psd_project, SampleMatrix};
use crate::quantize::{
    dither_decode_matrix, dither_encode_matrix, encode_on_grid, matrix_uniform_decode,
    matrix_uniform_encode, Frame, FrameBody, MatrixGrid, QuantizedMatrix, ScalarDitherConfig,
};
use crate::Norm;

/// Self-covariance clip radius, in units of σ².
pub const SELF_COV_RADIUS: f64 = 11.0;
/// Data-block clip radius, in units of σ·√(d_k + n).
pub const DATA_RADIUS: f64 = 6.0;
/// Frobenius distortions at or above this multiple of σ²·√d_min switch the
/// two-agent scheme to block-diagonal output.
pub const HIGH_DISTORTION_FACTOR: f64 = 512.0;

/// Constants of the two-agent scheme for a distortion target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeParamsTwoAgent {
    pub norm: Norm,
    pub sigma: f64,
    pub eps: f64,
    pub d1: usize,
    pub d2: usize,
    pub eps_tilde: f64,
    pub beta: f64,
    pub m_min: f64,
    pub b_min: [f64; 2],
    /// Cross-block sample count at `m = m_min`, `B_k = B_min[k]`.
    pub n: f64,
    pub high_distortion: bool,
}

impl SchemeParamsTwoAgent {
    pub fn dims(&self) -> [usize; 2] {
        [self.d1, self.d2]
    }

    /// `n = floor(min(B1/d1, B2/d2)/β) ∧ m`.
    pub fn cross_samples(&self, m: usize, budgets: [u64; 2]) -> usize {
        cross_samples(self.dims(), self.beta, m, budgets)
    }
}

fn cross_samples(dims: [usize; 2], beta: f64, m: usize, budgets: [u64; 2]) -> usize {
    let per_dim = (0..2)
        .map(|k| budgets[k] as f64 / dims[k].max(1) as f64)
        .fold(f64::INFINITY, f64::min);
    let n = (per_dim / beta).floor();
    if n >= m as f64 {
        m
    } else {
        n.max(0.0) as usize
    }
}

pub fn two_agent_params(sigma: f64, eps: f64, d1: usize, d2: usize, norm: Norm) -> Result<SchemeParamsTwoAgent> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma must be positive"));
    }
    if d1 == 0 || d2 == 0 {
        return Err(invalid("both agents need at least one dimension"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid("eps must be positive"));
    }
    let s2 = sigma * sigma;
    let d = (d1 + d2) as f64;
    let d_min = d1.min(d2) as f64;
    let dk = [d1 as f64, d2 as f64];
    let (eps_tilde, beta, b_min, high_distortion) = match norm {
        Norm::Op => {
            let et = eps / s2;
            if et > 1.0 {
                return Err(invalid(format!("eps = {eps} exceeds sigma^2 = {s2}")));
            }
            let beta = 2.0 * (6912.0 / et).log2();
            let b = dk.map(|x| 2f64.powi(18) * beta * x * d / (et * et));
            (et, beta, b, false)
        }
        Norm::Fr => {
            let et = eps / (s2 * d.sqrt());
            let high = eps >= HIGH_DISTORTION_FACTOR * s2 * d_min.sqrt();
            if et > 1.0 && !high {
                return Err(invalid(format!(
                    "eps = {eps} exceeds sigma^2·sqrt(d) = {} below the high-distortion threshold",
                    s2 * d.sqrt()
                )));
            }
            let beta = if high {
                2.0 * (6912.0 / et).log2()
            } else {
                2.0 * (6912.0 * s2 * d_min.sqrt() / eps).log2()
            };
            let b = dk.map(|x| {
                let data = 2f64.powi(18) * beta * x * d_min / (et * et);
                let selfcov = 2.0 * x * x * (528.0 / et).log2();
                data.max(selfcov)
            });
            (et, beta, b, high)
        }
    };
    let m_min = 2f64.powi(19) * d / (eps_tilde * eps_tilde);
    let n = ((b_min[0] / dk[0]).min(b_min[1] / dk[1]) / beta).floor().min(m_min);
    Ok(SchemeParamsTwoAgent {
        norm,
        sigma,
        eps,
        d1,
        d2,
        eps_tilde,
        beta,
        m_min,
        b_min,
        n,
        high_distortion,
    })
}

/// Run-time configuration of the two-agent scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoAgentSetup {
    pub sigma: f64,
    pub dims: [usize; 2],
    pub m: usize,
    pub n: usize,
    pub budgets: [u64; 2],
    /// Block-diagonal mode: the whole budget goes to the self-covariance.
    pub high_distortion: bool,
}

impl TwoAgentSetup {
    /// Setup with `n` derived from the budgets.
    pub fn from_params(params: &SchemeParamsTwoAgent, m: usize, budgets: [u64; 2]) -> Result<Self> {
        let n = params.cross_samples(m, budgets);
        Self::custom(params.sigma, params.dims(), m, n, budgets, params.high_distortion)
    }

    pub fn custom(
        sigma: f64,
        dims: [usize; 2],
        m: usize,
        n: usize,
        budgets: [u64; 2],
        high_distortion: bool,
    ) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma must be finite and non-negative"));
        }
        if m == 0 {
            return Err(invalid("m must be positive"));
        }
        if !high_distortion && !(1..=m).contains(&n) {
            return Err(invalid(format!("cross-block sample count n = {n} must lie in [1, m = {m}]")));
        }
        Ok(Self { sigma, dims, m, n, budgets, high_distortion })
    }

    fn selfcov_bits(&self, k: usize) -> u64 {
        if self.high_distortion {
            self.budgets[k]
        } else {
            self.budgets[k] / 2
        }
    }

    pub fn selfcov_grid(&self, k: usize) -> Result<MatrixGrid> {
        let d = self.dims[k];
        MatrixGrid::for_budget(d, d, SELF_COV_RADIUS * self.sigma * self.sigma, self.selfcov_bits(k))
    }

    pub fn data_radius(&self, k: usize) -> f64 {
        DATA_RADIUS * self.sigma * ((self.dims[k] + self.n) as f64).sqrt()
    }

    pub fn data_grid(&self, k: usize) -> Result<MatrixGrid> {
        MatrixGrid::for_budget(self.dims[k], self.n, self.data_radius(k), self.budgets[k] / 2)
    }
}

/// Sections an agent's payload may carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub selfcov: Option<QuantizedMatrix>,
    pub data: Option<QuantizedMatrix>,
}

/// One agent's message. `payload = None` is the error signal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub agent_id: u16,
    pub payload: Option<Payload>,
}

/// Which sections a frame carries, as known to the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    SelfAndData,
    SelfOnly,
    DataOnly,
}

impl AgentMessage {
    pub fn error(agent_id: u16) -> Self {
        Self { agent_id, payload: None }
    }

    pub fn is_error(&self) -> bool {
        self.payload.is_none()
    }

    /// Code bits only.
    pub fn bits_used(&self) -> u64 {
        self.payload.as_ref().map_or(0, |p| {
            p.selfcov.as_ref().map_or(0, QuantizedMatrix::bits_used)
                + p.data.as_ref().map_or(0, QuantizedMatrix::bits_used)
        })
    }

    pub fn to_frame(&self) -> Frame {
        let body = match &self.payload {
            None => FrameBody::Error,
            Some(p) => FrameBody::Payload(p.selfcov.iter().chain(p.data.iter()).cloned().collect()),
        };
        Frame { agent_id: self.agent_id, body }
    }

    pub fn from_frame(frame: Frame, layout: Layout) -> Result<Self> {
        let sections = match frame.body {
            FrameBody::Error => return Ok(Self::error(frame.agent_id)),
            FrameBody::Payload(s) => s,
        };
        let expected = if layout == Layout::SelfAndData { 2 } else { 1 };
        if sections.len() != expected {
            return Err(Error::Malformed(format!(
                "expected {expected} sections, found {}",
                sections.len()
            )));
        }
        let mut it = sections.into_iter();
        let payload = match layout {
            Layout::SelfAndData => Payload { selfcov: it.next(), data: it.next() },
            Layout::SelfOnly => Payload { selfcov: it.next(), data: None },
            Layout::DataOnly => Payload { selfcov: None, data: it.next() },
        };
        Ok(Self { agent_id: frame.agent_id, payload: Some(payload) })
    }
}

/// The server's output.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerEstimate {
    pub c_hat: DMatrix<f64>,
    pub c12_hat: DMatrix<f64>,
    pub error_triggered: bool,
    pub bits_total: u64,
}

impl ServerEstimate {
    fn zero(d1: usize, d2: usize, bits_total: u64) -> Self {
        Self {
            c_hat: DMatrix::zeros(d1 + d2, d1 + d2),
            c12_hat: DMatrix::zeros(d1, d2),
            error_triggered: true,
            bits_total,
        }
    }
}

/// Encoder of agent `k ∈ {0, 1}`.
pub fn two_agent_encode(k: usize, samples: &SampleMatrix, setup: &TwoAgentSetup) -> Result<AgentMessage> {
    if k > 1 {
        return Err(invalid("two-agent scheme has agents 0 and 1"));
    }
    if samples.rows() != setup.dims[k] {
        return Err(Error::Shape(format!(
            "agent {k} holds {} rows, setup expects {}",
            samples.rows(),
            setup.dims[k]
        )));
    }
    if samples.cols() != setup.m {
        return Err(Error::Shape(format!("agent {k} holds {} samples, setup expects m = {}", samples.cols(), setup.m)));
    }
    let id = k as u16;
    let s2 = setup.sigma * setup.sigma;
    let cov = samples.second_moment();
    if operator_norm(&cov)? > SELF_COV_RADIUS * s2 {
        return Ok(AgentMessage::error(id));
    }
    let selfcov_grid = setup.selfcov_grid(k)?;
    let (selfcov, _) = encode_on_grid(&cov, &selfcov_grid)?;
    let data = if setup.high_distortion {
        None
    } else {
        let block = samples.leading_columns(setup.n);
        if operator_norm(&block)? >= setup.data_radius(k) {
            return Ok(AgentMessage::error(id));
        }
        Some(encode_on_grid(&block, &setup.data_grid(k)?)?.0)
    };
    let msg = AgentMessage { agent_id: id, payload: Some(Payload { selfcov: Some(selfcov), data }) };
    assert!(msg.bits_used() <= setup.budgets[k], "agent {k} exceeded its budget");
    Ok(msg)
}

pub fn two_agent_decode(msg1: &AgentMessage, msg2: &AgentMessage, setup: &TwoAgentSetup) -> Result<ServerEstimate> {
    let [d1, d2] = setup.dims;
    let bits_total = msg1.bits_used() + msg2.bits_used();
    let (p1, p2) = match (&msg1.payload, &msg2.payload) {
        (Some(p1), Some(p2)) => (p1, p2),
        _ => return Ok(ServerEstimate::zero(d1, d2, bits_total)),
    };
    let selfcov = |k: usize, p: &Payload| -> Result<DMatrix<f64>> {
        let q = p.selfcov.as_ref().ok_or_else(|| Error::Malformed("missing self-covariance".into()))?;
        matrix_uniform_decode(q, &setup.selfcov_grid(k)?)
    };
    let c11 = selfcov(0, p1)?;
    let c22 = selfcov(1, p2)?;
    let d = d1 + d2;
    let mut c_hat = DMatrix::zeros(d, d);
    if setup.high_distortion {
        c_hat.view_mut((0, 0), (d1, d1)).copy_from(&psd_project(&c11));
        c_hat.view_mut((d1, d1), (d2, d2)).copy_from(&psd_project(&c22));
    } else {
        let data = |k: usize, p: &Payload| -> Result<DMatrix<f64>> {
            let q = p.data.as_ref().ok_or_else(|| Error::Malformed("missing data block".into()))?;
            matrix_uniform_decode(q, &setup.data_grid(k)?)
        };
        let x1 = data(0, p1)?;
        let x2 = data(1, p2)?;
        let c12 = (&x1 * x2.transpose()) / setup.n as f64;
        c_hat = assemble(&c11, &c12, &c22);
        c_hat = psd_project(&c_hat);
    }
    let c12_hat = c_hat.view((0, d1), (d1, d2)).into_owned();
    Ok(ServerEstimate { c_hat, c12_hat, error_triggered: false, bits_total })
}

/// `[[C11, C12], [C12ᵀ, C22]]`.
pub fn assemble(c11: &DMatrix<f64>, c12: &DMatrix<f64>, c22: &DMatrix<f64>) -> DMatrix<f64> {
    let (d1, d2) = (c11.nrows(), c22.nrows());
    let mut c = DMatrix::zeros(d1 + d2, d1 + d2);
    c.view_mut((0, 0), (d1, d1)).copy_from(c11);
    c.view_mut((d1, d1), (d2, d2)).copy_from(c22);
    c.view_mut((0, d1), (d1, d2)).copy_from(c12);
    c.view_mut((d1, 0), (d2, d1)).copy_from(&c12.transpose());
    c
}

/// The unquantized counterpart of the two-agent estimator:
/// `psd_project([[X1X1ᵀ/m, X1ₙX2ₙᵀ/n], [·, X2X2ᵀ/m]])`.
pub fn plug_in_estimate(x1: &SampleMatrix, x2: &SampleMatrix, n: usize) -> DMatrix<f64> {
    let a = x1.leading_columns(n);
    let b = x2.leading_columns(n);
    let c12 = (&a * b.transpose()) / n as f64;
    psd_project(&assemble(&x1.second_moment(), &c12, &x2.second_moment()))
}

/// Constants of the multi-agent scheme for a distortion target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeParamsMulti {
    pub sigma: f64,
    pub eps: f64,
    pub d: usize,
    pub eps_tilde: f64,
    pub n: f64,
    pub beta_fail: f64,
    pub l: f64,
    pub dither: ScalarDitherConfig,
    pub b_per_dim: f64,
}

pub fn multi_agent_params(sigma: f64, eps: f64, d: usize) -> Result<SchemeParamsMulti> {
    if !(sigma > 0.0 && sigma.is_finite()) || d == 0 {
        return Err(invalid("sigma and d must be positive"));
    }
    let s2 = sigma * sigma;
    if !(eps > 0.0 && eps <= s2) {
        return Err(invalid(format!("eps = {eps} must lie in (0, sigma^2 = {s2}]")));
    }
    let eps_tilde = eps / (1520.0 * s2);
    let n = (d as f64 / (eps_tilde * eps_tilde)).ceil();
    let beta_fail = eps / (2.0 * s2);
    let l = clip_radius(sigma, d, n, beta_fail);
    let dither = ScalarDitherConfig::new(l, sigma * eps_tilde)?;
    let b_per_dim = n * (dither.alphabet() as f64).log2();
    Ok(SchemeParamsMulti { sigma, eps, d, eps_tilde, n, beta_fail, l, dither, b_per_dim })
}

/// `L = σ·√(2·ln(d·n/β))`: a union bound over `d·n` coordinates leaves
/// clip-failure probability at most `β`.
pub fn clip_radius(sigma: f64, d: usize, n: f64, beta: f64) -> f64 {
    sigma * (2.0 * (d as f64 * n / beta).ln()).sqrt()
}

/// Run-time configuration of the multi-agent scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiAgentSetup {
    pub n: usize,
    pub dither: ScalarDitherConfig,
    pub agent_dims: Vec<usize>,
}

impl MultiAgentSetup {
    pub fn new(n: usize, dither: ScalarDitherConfig, agent_dims: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        if agent_dims.is_empty() || agent_dims.contains(&0) {
            return Err(invalid("every agent needs at least one dimension"));
        }
        if agent_dims.len() > u16::MAX as usize {
            return Err(invalid("too many agents"));
        }
        Ok(Self { n, dither, agent_dims })
    }

    pub fn dim(&self) -> usize {
        self.agent_dims.iter().sum()
    }

    /// Rows `offset..offset + d_k` of the stacked data belong to agent `k`.
    pub fn offset(&self, k: usize) -> usize {
        self.agent_dims[..k].iter().sum()
    }

    /// `d_k · n · ceil(log2(2N + 1))`.
    pub fn budget(&self, k: usize) -> u64 {
        (self.agent_dims[k] * self.n) as u64 * self.dither.bits_per_symbol() as u64
    }
}

pub fn multi_agent_encode<R: Rng + ?Sized>(
    k: usize,
    samples: &SampleMatrix,
    setup: &MultiAgentSetup,
    rng: &mut R,
) -> Result<AgentMessage> {
    let dk = *setup.agent_dims.get(k).ok_or_else(|| invalid(format!("no agent {k}")))?;
    if samples.rows() != dk {
        return Err(Error::Shape(format!("agent {k} holds {} rows, expected {dk}", samples.rows())));
    }
    if samples.cols() < setup.n {
        return Err(Error::Shape(format!("agent {k} holds {} samples, needs n = {}", samples.cols(), setup.n)));
    }
    let id = k as u16;
    let block = samples.leading_columns(setup.n);
    if block.iter().any(|x| x.abs() > setup.dither.radius()) {
        return Ok(AgentMessage::error(id));
    }
    let data = dither_encode_matrix(&block, &setup.dither, rng)?;
    let msg = AgentMessage { agent_id: id, payload: Some(Payload { selfcov: None, data: Some(data) }) };
    assert!(msg.bits_used() <= setup.budget(k), "agent {k} exceeded its budget");
    Ok(msg)
}

/// `Ĉ = X̂X̂ᵀ/n` over the vertically stacked reconstructions.
pub fn multi_agent_decode(messages: &[AgentMessage], setup: &MultiAgentSetup) -> Result<ServerEstimate> {
    let k_count = setup.agent_dims.len();
    if messages.len() != k_count {
        return Err(invalid(format!("expected {k_count} messages, got {}", messages.len())));
    }
    let d = setup.dim();
    let bits_total = messages.iter().map(AgentMessage::bits_used).sum();
    let d1 = setup.agent_dims[0];
    if messages.iter().any(AgentMessage::is_error) {
        return Ok(ServerEstimate::zero(d1, d - d1, bits_total));
    }
    let mut stacked = DMatrix::zeros(d, setup.n);
    for (k, msg) in messages.iter().enumerate() {
        if msg.agent_id as usize != k {
            return Err(Error::Malformed(format!("message {k} is from agent {}", msg.agent_id)));
        }
        let q = msg
            .payload
            .as_ref()
            .and_then(|p| p.data.as_ref())
            .ok_or_else(|| Error::Malformed(format!("agent {k} sent no data")))?;
        let x = dither_decode_matrix(q, &setup.dither)?;
        if x.nrows() != setup.agent_dims[k] || x.ncols() != setup.n {
            return Err(Error::Shape(format!("agent {k} payload has the wrong shape")));
        }
        stacked.rows_mut(setup.offset(k), setup.agent_dims[k]).copy_from(&x);
    }
    let c_hat = crate::model::symmetrize(&((&stacked * stacked.transpose()) / setup.n as f64));
    let c12_hat = c_hat.view((0, d1), (d1, d - d1)).into_owned();
    Ok(ServerEstimate { c_hat, c12_hat, error_triggered: false, bits_total })
}

/// Parameters of the interactive cross-covariance scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractiveParams {
    pub sigma: f64,
    pub eps: f64,
    /// Columns of the lower-dimensional party's data that are sent.
    pub n: usize,
    pub bob_data_bits: u64,
}

impl InteractiveParams {
    /// Operator-norm two-agent constants with Alice's budget unlimited, so
    /// the sample count is set by Bob's budget alone.
    pub fn prescribed(sigma: f64, eps: f64, d1: usize, d2: usize, m: usize) -> Result<Self> {
        let (da, db) = if d1 >= d2 { (d1, d2) } else { (d2, d1) };
        let p = two_agent_params(sigma, eps, da, db, Norm::Op)?;
        let budget = p.b_min[1].ceil();
        if budget > u64::MAX as f64 {
            return Err(invalid("budget does not fit in 64 bits"));
        }
        let budget = budget as u64;
        let n = cross_samples([da, db], p.beta, m, [u64::MAX, budget]).max(1);
        let bob_data_bits = budget / 2;
        Ok(Self { sigma, eps, n, bob_data_bits })
    }
}

/// Both parties' view after the two rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractiveOutcome {
    /// `d1 × d2`, in the caller's orientation.
    pub c12_hat: DMatrix<f64>,
    pub error_triggered: bool,
    /// Bob's data round, then Alice's broadcast.
    pub round_bits: [u64; 2],
    pub transcript_bits: u64,
    pub swapped: bool,
    pub bob_message: AgentMessage,
    pub alice_message: AgentMessage,
}

/// Grid of Alice's broadcast: op-norm ball of radius σ², target error ε/2.
pub fn broadcast_grid(d1: usize, d2: usize, sigma: f64, eps: f64) -> Result<MatrixGrid> {
    let (da, db) = if d1 >= d2 { (d1, d2) } else { (d2, d1) };
    MatrixGrid::for_target(da, db, sigma * sigma, eps / 2.0)
}

/// Bob sends his first `n` samples; Alice forms `X_A X̂_Bᵀ/n`, clips it to
/// the σ² operator-norm ball and broadcasts it.
pub fn interactive_run(alice: &SampleMatrix, bob: &SampleMatrix, params: &InteractiveParams) -> Result<InteractiveOutcome> {
    if alice.cols() != bob.cols() {
        return Err(Error::Shape("both parties must hold the same samples".into()));
    }
    let s2 = params.sigma * params.sigma;
    if !(params.eps > 0.0 && params.eps <= s2) {
        return Err(invalid(format!("eps = {} must lie in (0, sigma^2 = {s2}]", params.eps)));
    }
    if params.n == 0 || params.n > alice.cols() {
        return Err(invalid(format!("n = {} must lie in [1, m = {}]", params.n, alice.cols())));
    }
    let swapped = alice.rows() < bob.rows();
    let (xa, xb) = if swapped { (bob, alice) } else { (alice, bob) };
    let (da, db) = (xa.rows(), xb.rows());
    let n = params.n;

    let radius = DATA_RADIUS * params.sigma * ((db + n) as f64).sqrt();
    let block = xb.leading_columns(n);
    let orient = |m: DMatrix<f64>| if swapped { m.transpose() } else { m };
    let failed = |bob_message: AgentMessage| InteractiveOutcome {
        c12_hat: orient(DMatrix::zeros(da, db)),
        error_triggered: true,
        round_bits: [0, 0],
        transcript_bits: 0,
        swapped,
        bob_message,
        alice_message: AgentMessage::error(0),
    };
    if operator_norm(&block)? >= radius {
        return Ok(failed(AgentMessage::error(1)));
    }
    let bob_grid = MatrixGrid::for_budget(db, n, radius, params.bob_data_bits)?;
    let (bob_codes, _) = encode_on_grid(&block, &bob_grid)?;
    let bob_message = AgentMessage { agent_id: 1, payload: Some(Payload { selfcov: None, data: Some(bob_codes) }) };
    assert!(bob_message.bits_used() <= params.bob_data_bits, "Bob exceeded his budget");

    let xb_hat = matrix_uniform_decode(bob_message.payload.as_ref().unwrap().data.as_ref().unwrap(), &bob_grid)?;
    let mut c12 = (xa.leading_columns(n) * xb_hat.transpose()) / n as f64;
    let norm = operator_norm(&c12)?;
    if norm > s2 {
        c12 *= s2 / norm;
    }
    let (alice_codes, _) = matrix_uniform_encode(&c12, s2, params.eps / 2.0)?;
    let grid = broadcast_grid(da, db, params.sigma, params.eps)?;
    let shared = matrix_uniform_decode(&alice_codes, &grid)?;
    let alice_message = AgentMessage { agent_id: 0, payload: Some(Payload { selfcov: None, data: Some(alice_codes) }) };
    let round_bits = [bob_message.bits_used(), alice_message.bits_used()];
    Ok(InteractiveOutcome {
        c12_hat: orient(shared),
        error_triggered: false,
        round_bits,
        transcript_bits: round_bits[0] + round_bits[1],
        swapped,
        bob_message,
        alice_message,
    })
}
