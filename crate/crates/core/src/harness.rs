//! Seeded Monte Carlo sweeps over the protocols, log-log scaling fits, and
//! CSV/JSON output.
//!
//! # Config format
//!
//! One `key = value` pair per line; `#` starts a comment; list values are
//! comma separated. Sweep axes (`m`, `n`, `budget`, `levels`, `eps`) may hold
//! several values and are crossed in that order, `m` outermost.
//!
//! | key          | meaning                                                        |
//! |--------------|----------------------------------------------------------------|
//! | `scheme`     | `two_agent_op`, `two_agent_fr`, `multi_agent`, `interactive`   |
//! | `d1`, `d2`   | block sizes (default 4, 4)                                     |
//! | `sigma`      | sub-Gaussian scale (default 1)                                 |
//! | `delta`      | coupling strength in `[0, 1]` (default 0.5)                    |
//! | `coupling`   | `random` (op-norm-1 Gaussian matrix, default) or `identity`    |
//! | `d_seed`     | seed of the random coupling (default 0)                        |
//! | `source`     | `gaussian` (default), `scaled_rademacher`, `uniform_ball`      |
//! | `m`          | sample counts                                                  |
//! | `n`          | cross-block / transmitted sample counts                        |
//! | `budget`     | per-agent bit budget (two-agent) or Bob's data bits            |
//! | `levels`     | dither half-levels `N` (multi-agent)                           |
//! | `eps`        | target distortion                                              |
//! | `clip_beta`  | clip-failure probability for the dither radius (default 1e-3)  |
//! | `agent_dims` | multi-agent split of the `d1 + d2` coordinates (default ones)  |
//! | `trials`     | trials per sweep point                                         |
//! | `seed`       | master seed                                                    |
//! | `out`, `format`, `threads` | output path, `csv` or `json`, worker threads     |

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::{build_block_covariance, frobenius_norm, operator_norm, random_contraction, sample, CovarianceModel, Source};
use crate::protocol::{
    broadcast_grid, clip_radius, interactive_run, multi_agent_decode, multi_agent_encode, two_agent_decode,
    two_agent_encode, two_agent_params, AgentMessage, InteractiveParams, MultiAgentSetup, TwoAgentSetup,
};
use crate::quantize::{serialize_payload, ScalarDitherConfig};
use crate::rng::{stream, stream_rng, trial_seed};
use crate::Norm;

/// Point index used to key the sample stream. Samples depend on the trial
/// only, so every sweep point sees the same data in a given trial.
pub const SHARED_SAMPLE_POINT: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    TwoAgentOp,
    TwoAgentFr,
    MultiAgent,
    Interactive,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::TwoAgentOp => "two_agent_op",
            Scheme::TwoAgentFr => "two_agent_fr",
            Scheme::MultiAgent => "multi_agent",
            Scheme::Interactive => "interactive",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_agent_op" => Ok(Scheme::TwoAgentOp),
            "two_agent_fr" => Ok(Scheme::TwoAgentFr),
            "multi_agent" => Ok(Scheme::MultiAgent),
            "interactive" => Ok(Scheme::Interactive),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    #[default]
    Random,
    Identity,
}

impl FromStr for Coupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Coupling::Random),
            "identity" => Ok(Coupling::Identity),
            other => Err(Error::Config(format!("unknown coupling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub d1: usize,
    pub d2: usize,
    pub sigma: f64,
    pub delta: f64,
    pub coupling: Coupling,
    pub d_seed: u64,
    pub source: Source,
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    pub budget: Vec<u64>,
    pub levels: Vec<u32>,
    pub eps: Vec<f64>,
    pub clip_beta: f64,
    pub agent_dims: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            d1: 4,
            d2: 4,
            sigma: 1.0,
            delta: 0.5,
            coupling: Coupling::Random,
            d_seed: 0,
            source: Source::Gaussian,
            m: Vec::new(),
            n: Vec::new(),
            budget: Vec::new(),
            levels: Vec::new(),
            eps: Vec::new(),
            clip_beta: 1e-3,
            agent_dims: Vec::new(),
            trials: 1,
            seed: 0,
            out: None,
            format: Format::Csv,
            threads: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim().to_string();
            if pairs.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        let scheme = pairs.remove("scheme").ok_or_else(|| Error::Config("missing `scheme`".into()))?;
        let mut cfg = Self::new(scheme.parse()?);
        for (key, value) in pairs {
            match key.as_str() {
                "d1" => cfg.d1 = scalar(&key, &value)?,
                "d2" => cfg.d2 = scalar(&key, &value)?,
                "sigma" => cfg.sigma = scalar(&key, &value)?,
                "delta" => cfg.delta = scalar(&key, &value)?,
                "coupling" => cfg.coupling = value.parse()?,
                "d_seed" => cfg.d_seed = scalar(&key, &value)?,
                "source" => cfg.source = value.parse()?,
                "m" => cfg.m = list(&key, &value)?,
                "n" => cfg.n = list(&key, &value)?,
                "budget" => cfg.budget = list(&key, &value)?,
                "levels" => cfg.levels = list(&key, &value)?,
                "eps" => cfg.eps = list(&key, &value)?,
                "clip_beta" => cfg.clip_beta = scalar(&key, &value)?,
                "agent_dims" => cfg.agent_dims = list(&key, &value)?,
                "trials" => cfg.trials = scalar(&key, &value)?,
                "seed" => cfg.seed = scalar(&key, &value)?,
                "out" => cfg.out = Some(PathBuf::from(value)),
                "format" => cfg.format = value.parse()?,
                "threads" => cfg.threads = Some(scalar(&key, &value)?),
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.d1 == 0 || self.d2 == 0 {
            return fail("d1 and d2 must be positive");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail("sigma must be positive");
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return fail("delta must lie in [0, 1]");
        }
        if self.m.is_empty() || self.m.contains(&0) {
            return fail("m needs at least one positive value");
        }
        if self.trials == 0 {
            return fail("trials must be at least 1");
        }
        if self.threads == Some(0) {
            return fail("threads must be positive");
        }
        if self.n.contains(&0) || self.levels.contains(&0) || self.eps.iter().any(|&e| !(e > 0.0)) {
            return fail("n, levels and eps values must be positive");
        }
        match self.scheme {
            Scheme::TwoAgentOp | Scheme::TwoAgentFr => {
                if self.budget.is_empty() {
                    return fail("two-agent schemes need `budget`");
                }
            }
            Scheme::MultiAgent => {
                if self.levels.is_empty() && self.eps.is_empty() {
                    return fail("multi_agent needs `levels` or `eps`");
                }
                if !(self.clip_beta > 0.0 && self.clip_beta < 1.0) {
                    return fail("clip_beta must lie in (0, 1)");
                }
                let dims = self.multi_dims();
                if dims.contains(&0) || dims.iter().sum::<usize>() != self.d1 + self.d2 {
                    return fail("agent_dims must be positive and sum to d1 + d2");
                }
                let mut acc = 0;
                if !dims.iter().any(|&d| {
                    acc += d;
                    acc == self.d1
                }) {
                    return fail("agent_dims must split at the d1 boundary");
                }
            }
            Scheme::Interactive => {
                if self.eps.is_empty() {
                    return fail("interactive needs `eps`");
                }
            }
        }
        Ok(())
    }

    /// Multi-agent split; one coordinate per agent unless configured.
    pub fn multi_dims(&self) -> Vec<usize> {
        if self.agent_dims.is_empty() {
            vec![1; self.d1 + self.d2]
        } else {
            self.agent_dims.clone()
        }
    }

    /// The ground-truth model.
    pub fn model(&self) -> Result<CovarianceModel> {
        let coupling = match self.coupling {
            Coupling::Identity => DMatrix::from_fn(self.d2, self.d1, |i, j| if i == j { 1.0 } else { 0.0 }),
            Coupling::Random => random_contraction(self.d2, self.d1, &mut stream_rng(self.d_seed, stream::MODEL)),
        };
        Ok(build_block_covariance(self.d1, self.d2, self.sigma, self.delta, &coupling)?.with_source(self.source))
    }

    /// Cartesian product of the sweep axes.
    pub fn points(&self) -> Vec<SweepPoint> {
        fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for &m in &self.m {
            for n in axis(&self.n) {
                for budget in axis(&self.budget) {
                    for levels in axis(&self.levels) {
                        for eps in axis(&self.eps) {
                            out.push(SweepPoint { m, n, budget, levels, eps });
                        }
                    }
                }
            }
        }
        out
    }
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| scalar(key, v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub m: usize,
    pub n: Option<usize>,
    pub budget: Option<u64>,
    pub levels: Option<u32>,
    pub eps: Option<f64>,
}

/// One trial's outcome. Distortions of the interactive scheme are measured
/// on the cross block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scheme: Scheme,
    pub d1: usize,
    pub d2: usize,
    pub m: usize,
    pub n: usize,
    #[serde(rename = "B1")]
    pub b1: u64,
    #[serde(rename = "B2")]
    pub b2: u64,
    pub trial: usize,
    pub seed: u64,
    pub dist_op: f64,
    pub dist_fr: f64,
    pub bits1: u64,
    pub bits2: u64,
    pub error: bool,
}

pub const CSV_COLUMNS: [&str; 14] =
    ["scheme", "d1", "d2", "m", "n", "B1", "B2", "trial", "seed", "dist_op", "dist_fr", "bits1", "bits2", "error"];

enum Plan {
    TwoAgent(TwoAgentSetup),
    Multi(MultiAgentSetup),
    Interactive(InteractiveParams),
}

struct ResolvedPoint {
    plan: Plan,
    m: usize,
    n: usize,
    budgets: [u64; 2],
}

fn resolve(cfg: &ExperimentConfig, p: &SweepPoint) -> Result<ResolvedPoint> {
    let [d1, d2] = [cfg.d1, cfg.d2];
    let s2 = cfg.sigma * cfg.sigma;
    match cfg.scheme {
        Scheme::TwoAgentOp | Scheme::TwoAgentFr => {
            let norm = if cfg.scheme == Scheme::TwoAgentOp { Norm::Op } else { Norm::Fr };
            let default_eps = match norm {
                Norm::Op => s2,
                Norm::Fr => s2 * ((d1 + d2) as f64).sqrt(),
            };
            let params = two_agent_params(cfg.sigma, p.eps.unwrap_or(default_eps), d1, d2, norm)?;
            let b = p.budget.expect("validated");
            let budgets = [b, b];
            let n = match p.n {
                Some(n) => n.min(p.m),
                None => params.cross_samples(p.m, budgets),
            };
            let setup = TwoAgentSetup::custom(cfg.sigma, [d1, d2], p.m, n, budgets, params.high_distortion)?;
            let n = if params.high_distortion { 0 } else { n };
            Ok(ResolvedPoint { plan: Plan::TwoAgent(setup), m: p.m, n, budgets })
        }
        Scheme::MultiAgent => {
            let dims = cfg.multi_dims();
            let d = d1 + d2;
            let n = p.n.unwrap_or(p.m).min(p.m);
            let l = clip_radius(cfg.sigma, d, n as f64, cfg.clip_beta);
            let dither = match p.levels {
                Some(levels) => ScalarDitherConfig::from_levels(l, levels)?,
                None => {
                    let eps = p.eps.expect("validated");
                    ScalarDitherConfig::new(l, cfg.sigma * eps / (1520.0 * s2))?
                }
            };
            let setup = MultiAgentSetup::new(n, dither, dims.clone())?;
            let mut budgets = [0u64; 2];
            let mut offset = 0;
            for (k, &dk) in dims.iter().enumerate() {
                budgets[usize::from(offset >= d1)] += setup.budget(k);
                offset += dk;
            }
            Ok(ResolvedPoint { plan: Plan::Multi(setup), m: p.m, n, budgets })
        }
        Scheme::Interactive => {
            let eps = p.eps.expect("validated");
            let mut params = InteractiveParams::prescribed(cfg.sigma, eps, d1, d2, p.m)?;
            if let Some(n) = p.n {
                params.n = n.min(p.m);
            }
            if let Some(b) = p.budget {
                params.bob_data_bits = b;
            }
            // Columns follow blocks: Alice is whichever party holds the larger one.
            let alice_bits = broadcast_grid(d1, d2, cfg.sigma, eps)?.bits();
            let budgets = if d1 >= d2 {
                [alice_bits, params.bob_data_bits]
            } else {
                [params.bob_data_bits, alice_bits]
            };
            Ok(ResolvedPoint { plan: Plan::Interactive(params), m: p.m, n: params.n, budgets })
        }
    }
}

/// Extra outputs of a sweep.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write every agent frame to `<dir>/p<point>_t<trial>_a<agent>.bin`.
    pub dump_messages: Option<PathBuf>,
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    run_sweep_with(cfg, &RunOptions::default())
}

/// Runs every `(point, trial)` pair. Work is spread over the rayon pool but
/// records come back in `(point, trial)` order and depend only on the seeds.
pub fn run_sweep_with(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let model = cfg.model()?;
    let points = cfg.points();
    let resolved = points.iter().map(|p| resolve(cfg, p)).collect::<Result<Vec<_>>>()?;
    if let Some(dir) = &opts.dump_messages {
        fs::create_dir_all(dir)?;
    }
    let work: Vec<(usize, usize)> =
        (0..resolved.len()).flat_map(|p| (0..cfg.trials).map(move |t| (p, t))).collect();
    let job = || {
        work.par_iter()
            .map(|&(p, t)| run_trial(cfg, &model, &resolved[p], p, t, opts))
            .collect::<Result<Vec<_>>>()
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(job),
        None => job(),
    }
}

fn run_trial(
    cfg: &ExperimentConfig,
    model: &CovarianceModel,
    point: &ResolvedPoint,
    p: usize,
    t: usize,
    opts: &RunOptions,
) -> Result<TrialRecord> {
    let seed = trial_seed(cfg.seed, p as u64, t as u64);
    let z = sample(model, point.m, trial_seed(cfg.seed, SHARED_SAMPLE_POINT, t as u64))?;
    let (d1, d2) = (cfg.d1, cfg.d2);
    let truth = model.cov();
    let dump = |msgs: &[&AgentMessage]| -> Result<()> {
        if let Some(dir) = &opts.dump_messages {
            for msg in msgs {
                let bytes = serialize_payload(&msg.to_frame())?;
                fs::write(dir.join(format!("p{p}_t{t}_a{}.bin", msg.agent_id)), bytes)?;
            }
        }
        Ok(())
    };
    let (diff, bits, error) = match &point.plan {
        Plan::TwoAgent(setup) => {
            let m1 = two_agent_encode(0, &z.row_block(0, d1), setup)?;
            let m2 = two_agent_encode(1, &z.row_block(d1, d2), setup)?;
            dump(&[&m1, &m2])?;
            let est = two_agent_decode(&m1, &m2, setup)?;
            (est.c_hat - truth, [m1.bits_used(), m2.bits_used()], est.error_triggered)
        }
        Plan::Multi(setup) => {
            let mut rng = stream_rng(seed, stream::QUANTIZER);
            let mut msgs = Vec::with_capacity(setup.agent_dims.len());
            for (k, &dk) in setup.agent_dims.iter().enumerate() {
                msgs.push(multi_agent_encode(k, &z.row_block(setup.offset(k), dk), setup, &mut rng)?);
            }
            dump(&msgs.iter().collect::<Vec<_>>())?;
            let est = multi_agent_decode(&msgs, setup)?;
            let mut bits = [0u64; 2];
            for (k, msg) in msgs.iter().enumerate() {
                bits[usize::from(setup.offset(k) >= d1)] += msg.bits_used();
            }
            (est.c_hat - truth, bits, est.error_triggered)
        }
        Plan::Interactive(params) => {
            let out = interactive_run(&z.row_block(0, d1), &z.row_block(d1, d2), params)?;
            dump(&[&out.alice_message, &out.bob_message])?;
            let c12 = truth.view((0, d1), (d1, d2)).into_owned();
            let [bob, alice] = out.round_bits;
            let bits = if out.swapped { [bob, alice] } else { [alice, bob] };
            (out.c12_hat - c12, bits, out.error_triggered)
        }
    };
    Ok(TrialRecord {
        scheme: cfg.scheme,
        d1,
        d2,
        m: point.m,
        n: point.n,
        b1: point.budgets[0],
        b2: point.budgets[1],
        trial: t,
        seed,
        dist_op: operator_norm(&diff)?,
        dist_fr: frobenius_norm(&diff),
        bits1: bits[0],
        bits2: bits[1],
        error,
    })
}

/// Mean distortions of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub m: usize,
    pub n: usize,
    pub b1: u64,
    pub b2: u64,
    pub trials: usize,
    pub mean_op: f64,
    pub stderr_op: f64,
    pub mean_fr: f64,
    pub stderr_fr: f64,
    pub error_rate: f64,
}

/// Groups consecutive records sharing `(m, n, B1, B2)`, in input order.
pub fn summarize(records: &[TrialRecord]) -> Vec<PointSummary> {
    let mut out: Vec<(PointSummary, Vec<&TrialRecord>)> = Vec::new();
    for r in records {
        let same = out.last().is_some_and(|(s, _)| (s.m, s.n, s.b1, s.b2) == (r.m, r.n, r.b1, r.b2));
        if !same {
            let s = PointSummary {
                m: r.m,
                n: r.n,
                b1: r.b1,
                b2: r.b2,
                trials: 0,
                mean_op: 0.0,
                stderr_op: 0.0,
                mean_fr: 0.0,
                stderr_fr: 0.0,
                error_rate: 0.0,
            };
            out.push((s, Vec::new()));
        }
        out.last_mut().unwrap().1.push(r);
    }
    out.into_iter()
        .map(|(mut s, rs)| {
            let (mo, so) = mean_stderr(rs.iter().map(|r| r.dist_op));
            let (mf, sf) = mean_stderr(rs.iter().map(|r| r.dist_fr));
            s.trials = rs.len();
            s.mean_op = mo;
            s.stderr_op = so;
            s.mean_fr = mf;
            s.stderr_fr = sf;
            s.error_rate = rs.iter().filter(|r| r.error).count() as f64 / rs.len() as f64;
            s
        })
        .collect()
}

/// Mean and standard error, summed in iteration order.
pub fn mean_stderr(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    M,
    /// Total code-bit budget `B1 + B2`.
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

pub const MIN_FIT_POINTS: usize = 4;
pub const MIN_FIT_TRIALS: usize = 50;

/// Least squares of `log(mean distortion)` on `log(axis)`.
pub fn scaling_fit(records: &[TrialRecord], axis: Axis, response: Norm) -> Result<Fit> {
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records {
        let x = match axis {
            Axis::M => r.m as u64,
            Axis::Budget => r.b1 + r.b2,
        };
        let y = match response {
            Norm::Op => r.dist_op,
            Norm::Fr => r.dist_fr,
        };
        groups.entry(x).or_default().push(y);
    }
    if groups.len() < MIN_FIT_POINTS {
        return Err(Error::InvalidArgument(format!(
            "scaling fit needs {MIN_FIT_POINTS} distinct axis values, got {}",
            groups.len()
        )));
    }
    if let Some((x, ys)) = groups.iter().find(|(_, ys)| ys.len() < MIN_FIT_TRIALS) {
        return Err(Error::InvalidArgument(format!(
            "axis value {x} has {} trials, need {MIN_FIT_TRIALS}",
            ys.len()
        )));
    }
    let mut pts = Vec::with_capacity(groups.len());
    for (x, ys) in &groups {
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        if !(mean > 0.0) || *x == 0 {
            return Err(Error::InvalidArgument("log-log fit needs positive values".into()));
        }
        pts.push(((*x as f64).ln(), mean.ln()));
    }
    Ok(ols(&pts))
}

/// Ordinary least squares on `(x, y)` pairs.
pub fn ols(pts: &[(f64, f64)]) -> Fit {
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = if pts.len() > 2 { (ssr / (k - 2.0) / sxx).sqrt() } else { 0.0 };
    Fit { slope, intercept, stderr }
}

/// 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<W: std::io::Write>(records: &[TrialRecord], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in records {
        out.write_record([
            r.scheme.to_string(),
            r.d1.to_string(),
            r.d2.to_string(),
            r.m.to_string(),
            r.n.to_string(),
            r.b1.to_string(),
            r.b2.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            num(r.dist_op),
            num(r.dist_fr),
            r.bits1.to_string(),
            r.bits2.to_string(),
            r.error.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<TrialRecord>> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(Error::Malformed("unexpected CSV header".into()));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let bad = |i: usize| Error::Malformed(format!("column `{}`: `{}`", CSV_COLUMNS[i], field(i)));
        macro_rules! get {
            ($i:expr) => {
                field($i).parse().map_err(|_| bad($i))?
            };
        }
        out.push(TrialRecord {
            scheme: field(0).parse().map_err(|_| bad(0))?,
            d1: get!(1),
            d2: get!(2),
            m: get!(3),
            n: get!(4),
            b1: get!(5),
            b2: get!(6),
            trial: get!(7),
            seed: get!(8),
            dist_op: get!(9),
            dist_fr: get!(10),
            bits1: get!(11),
            bits2: get!(12),
            error: get!(13),
        });
    }
    Ok(out)
}

/// JSON array of objects keyed by the CSV column names.
pub fn write_json<W: std::io::Write>(records: &[TrialRecord], mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, records)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn emit(records: &[TrialRecord], format: Format, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(fs::File::create(path)?);
    match format {
        Format::Csv => write_csv(records, file),
        Format::Json => write_json(records, file),
    }
}

fn arg<'a>(args: &'a Value, key: &str) -> Result<&'a Value> {
    args.get(key).ok_or_else(|| Error::Config(format!("missing argument `{key}`")))
}

fn arg_f64(args: &Value, key: &str) -> Result<f64> {
    let v = arg(args, key)?;
    match v {
        Value::String(s) if s == "inf" => Ok(f64::INFINITY),
        _ => v.as_f64().ok_or_else(|| Error::Config(format!("`{key}` must be a number or \"inf\""))),
    }
}

fn arg_usize(args: &Value, key: &str) -> Result<usize> {
    arg(args, key)?
        .as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::Config(format!("`{key}` must be a non-negative integer")))
}

/// Row-major nested array.
fn arg_matrix(v: &Value, key: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> =
        serde_json::from_value(v.clone()).map_err(|_| Error::Config(format!("`{key}` must be an array of rows")))?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!("`{key}` rows have unequal lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::from((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
}

fn arg_channel(v: &Value) -> Result<crate::theory::MixtureChannel> {
    let states = v
        .as_array()
        .ok_or_else(|| Error::Config("a channel is an array of {\"a\", \"p\"} states".into()))?
        .iter()
        .map(|s| Ok((arg_matrix(arg(s, "a")?, "a")?, arg_f64(s, "p")?)))
        .collect::<Result<Vec<_>>>()?;
    crate::theory::MixtureChannel::new(states)
}

fn arg_joint(args: &Value) -> Result<crate::theory::GaussianJoint> {
    crate::theory::GaussianJoint::new(
        arg_matrix(arg(args, "c11")?, "c11")?,
        arg_matrix(arg(args, "c12")?, "c12")?,
        arg_matrix(arg(args, "c22")?, "c22")?,
    )
}

fn arg_bounds(args: &Value) -> Result<crate::theory::BoundInputs> {
    Ok(crate::theory::BoundInputs {
        sigma: arg_f64(args, "sigma")?,
        m: arg_f64(args, "m")?,
        d1: arg_usize(args, "d1")?,
        d2: arg_usize(args, "d2")?,
        b1: arg_f64(args, "b1")?,
        b2: arg_f64(args, "b2")?,
    })
}

/// Names accepted by [`theory_eval`].
pub const THEORY_OPS: [&str; 14] = [
    "csdpi_mixture",
    "csdpi_naive_upper",
    "mean_shift_ratio",
    "csdpi_product",
    "sdpi_gaussian",
    "symmetric_sdpi_gaussian",
    "lower_bound_op",
    "lower_bound_op_cross",
    "lower_bound_fr",
    "lower_bound_fr_cross",
    "lower_bound_multi",
    "signed_perm_expectation",
    "net_bits_theoretical",
    "packing_log_lower",
];

/// Evaluates a calculator from JSON arguments. Matrices are row-major nested
/// arrays; channels are arrays of `{"a": matrix, "p": probability}`; `"inf"`
/// stands for an unlimited `m` or budget.
pub fn theory_eval(op: &str, args: &Value) -> Result<Value> {
    use crate::theory::*;
    let bound = |b: Bound| json!({ "value": b.value, "convention": b.convention });
    Ok(match op {
        "csdpi_mixture" => json!({ "value": csdpi_mixture(&arg_channel(arg(args, "states")?)?) }),
        "csdpi_naive_upper" => json!({ "value": csdpi_naive_upper(&arg_channel(arg(args, "states")?)?) }),
        "mean_shift_ratio" => {
            let ch = arg_channel(arg(args, "states")?)?;
            let mu: Vec<f64> = serde_json::from_value(arg(args, "mu")?.clone())
                .map_err(|_| Error::Config("`mu` must be an array of numbers".into()))?;
            json!({ "value": mean_shift_ratio(&ch, &DVector::from_vec(mu))? })
        }
        "csdpi_product" => {
            let (_, c) = csdpi_product(&arg_channel(arg(args, "ch1")?)?, &arg_channel(arg(args, "ch2")?)?)?;
            json!({ "value": c })
        }
        "sdpi_gaussian" => json!({ "value": sdpi_gaussian(&arg_joint(args)?)? }),
        "symmetric_sdpi_gaussian" => json!({ "value": symmetric_sdpi_gaussian(&arg_joint(args)?)? }),
        "lower_bound_op" => bound(lower_bound_op(&arg_bounds(args)?)?),
        "lower_bound_op_cross" => bound(lower_bound_op_cross(&arg_bounds(args)?)?),
        "lower_bound_fr" => bound(lower_bound_fr(&arg_bounds(args)?)?),
        "lower_bound_fr_cross" => bound(lower_bound_fr_cross(&arg_bounds(args)?)?),
        "lower_bound_multi" => {
            let dims: Vec<usize> = serde_json::from_value(arg(args, "dims")?.clone())
                .map_err(|_| Error::Config("`dims` must be an array of integers".into()))?;
            let budgets: Vec<f64> = serde_json::from_value(arg(args, "budgets")?.clone())
                .map_err(|_| Error::Config("`budgets` must be an array of numbers".into()))?;
            bound(lower_bound_multi(arg_f64(args, "sigma")?, arg_f64(args, "m")?, &dims, &budgets)?)
        }
        "signed_perm_expectation" => {
            let b = arg_matrix(arg(args, "b")?, "b")?;
            let mode = match args.get("trials") {
                None => SpmMode::Exact,
                Some(_) => SpmMode::MonteCarlo {
                    trials: arg_usize(args, "trials")?,
                    seed: args.get("seed").and_then(Value::as_u64).unwrap_or(0),
                },
            };
            json!({ "value": matrix_json(&signed_perm_expectation(&b, mode)?) })
        }
        "net_bits_theoretical" => json!({ "value": crate::quantize::net_bits_theoretical(
            arg_usize(args, "rows")?, arg_usize(args, "cols")?, arg_f64(args, "r")?, arg_f64(args, "eps")?)? }),
        "packing_log_lower" => {
            let norm: Norm = args.get("norm").and_then(Value::as_str).unwrap_or("op").parse()?;
            json!({ "value": crate::quantize::packing_log_lower(
                arg_usize(args, "rows")?, arg_usize(args, "cols")?, arg_f64(args, "r")?, arg_f64(args, "eps")?, norm)? })
        }
        other => return Err(Error::Config(format!("unknown theory operation `{other}`"))),
    })
}
