use dcme::harness::{run_sweep, summarize, ExperimentConfig};
use dcme::model::{
    build_block_covariance, frobenius_norm, operator_norm, psd_project, random_contraction, sample, sym_eigen,
};
use dcme::protocol::{
    multi_agent_decode, multi_agent_encode, two_agent_decode, two_agent_encode, AgentMessage, MultiAgentSetup,
    TwoAgentSetup,
};
use dcme::quantize::{
    deserialize_payload, dither_decode, dither_encode, matrix_uniform_decode, matrix_uniform_encode,
    packing_log_lower, serialize_payload, Frame, FrameBody, MatrixGrid, QuantizedMatrix, ScalarDitherConfig,
};
use dcme::rng::{stream, stream_rng};
use dcme::theory::{
    csdpi_mixture, csdpi_naive_upper, lower_bound_fr, lower_bound_fr_cross, lower_bound_op, lower_bound_op_cross,
    sdpi_gaussian, BoundInputs, GaussianJoint, MixtureChannel,
};
use dcme::{Error, Norm};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, stream::MODEL);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn symmetric(d: usize, seed: u64) -> DMatrix<f64> {
    let g = matrix(d, d, seed);
    (&g + g.transpose()) * 0.5
}

fn psd(d: usize, seed: u64) -> DMatrix<f64> {
    let g = matrix(d, d + 1, seed);
    &g * g.transpose() / d as f64
}

fn orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    matrix(d, d, seed).qr().q()
}

fn model(d1: usize, d2: usize, delta: f64, seed: u64) -> dcme::model::CovarianceModel {
    let d = random_contraction(d2, d1, &mut stream_rng(seed, stream::MODEL));
    build_block_covariance(d1, d2, 1.0, delta, &d).unwrap()
}

fn lambda_min(m: &DMatrix<f64>) -> f64 {
    let e = sym_eigen(m).eigenvalues;
    e[e.len() - 1]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn psd_projection_laws(d in 1usize..10, seed in any::<u64>()) {
        let m = symmetric(d, seed);
        let c = psd(d, seed ^ 1);
        let p = psd_project(&m);
        prop_assert!(lambda_min(&p) >= -1e-12 * (1.0 + operator_norm(&m).unwrap()));
        prop_assert!((psd_project(&p) - &p).amax() <= 1e-12 * (1.0 + p.amax()));
        let (fr_p, fr_m) = (frobenius_norm(&(&p - &c)), frobenius_norm(&(&m - &c)));
        prop_assert!(fr_p <= fr_m * (1.0 + 1e-12) + 1e-12);
        let (op_p, op_m) = (operator_norm(&(&p - &c)).unwrap(), operator_norm(&(&m - &c)).unwrap());
        prop_assert!(op_p <= 2.0 * op_m * (1.0 + 1e-12) + 1e-12);
        prop_assert!((psd_project(&c) - &c).amax() <= 1e-10 * (1.0 + c.amax()));
    }

    #[test]
    fn norm_identities(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
        let m = matrix(rows, cols, seed);
        let op = operator_norm(&m).unwrap();
        prop_assert!((operator_norm(&m.transpose()).unwrap() - op).abs() <= 1e-12 * op);
        let fr = frobenius_norm(&m);
        prop_assert!((fr * fr - (m.transpose() * &m).trace()).abs() <= 1e-10 * fr * fr);
        let rank = rows.min(cols) as f64;
        prop_assert!(op <= fr * (1.0 + 1e-12));
        prop_assert!(fr <= rank.sqrt() * op * (1.0 + 1e-12));
    }

    #[test]
    fn block_covariance_spectrum(d1 in 1usize..5, d2 in 1usize..5, delta in 0.0f64..=1.0, sigma in 0.1f64..3.0, seed in any::<u64>()) {
        let d = random_contraction(d2, d1, &mut stream_rng(seed, stream::MODEL));
        let c = build_block_covariance(d1, d2, sigma, delta, &d).unwrap();
        let s2 = sigma * sigma / 2.0;
        let sv = d.clone().singular_values();
        let mut want: Vec<f64> = Vec::new();
        for &s in sv.iter() {
            want.push(s2 * (1.0 + delta * s));
            want.push(s2 * (1.0 - delta * s));
        }
        want.resize(d1 + d2, s2);
        want.sort_by(|a, b| b.total_cmp(a));
        let got = sym_eigen(c.cov()).eigenvalues;
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-9, "{:?} vs {:?}", got, want);
        }
    }

    #[test]
    fn dither_error_below_step(x in -2.0f64..2.0, levels in 1u32..200, seed in any::<u64>()) {
        let cfg = ScalarDitherConfig::from_levels(2.0, levels).unwrap();
        let mut rng = stream_rng(seed, stream::QUANTIZER);
        for _ in 0..32 {
            let code = dither_encode(x, &cfg, &mut rng).unwrap();
            prop_assert!(code < cfg.alphabet());
            prop_assert!((dither_decode(code, &cfg).unwrap() - x).abs() < cfg.step());
        }
    }

    #[test]
    fn codec_round_trip_within_bound(rows in 1usize..6, cols in 1usize..6, r in 0.1f64..20.0, frac in 0.001f64..2.0, seed in any::<u64>()) {
        let g = matrix(rows, cols, seed);
        let m = &g * (r * 0.999 / operator_norm(&g).unwrap());
        let eps = frac * r;
        let (q, report) = matrix_uniform_encode(&m, r, eps).unwrap();
        let grid = MatrixGrid::for_target(rows, cols, r, eps).unwrap();
        let back = matrix_uniform_decode(&q, &grid).unwrap();
        prop_assert!(report.op_error_bound <= eps * (1.0 + 1e-12));
        prop_assert!(operator_norm(&(&back - &m)).unwrap() <= report.op_error_bound * (1.0 + 1e-12));
        prop_assert!(frobenius_norm(&(&back - &m)) <= report.op_error_bound * (1.0 + 1e-12));
        prop_assert_eq!(report.bits_used, q.bits_used());
        let floor = packing_log_lower(rows, cols, r, eps, Norm::Op).unwrap();
        prop_assert!(report.bits_used as f64 >= floor, "{} bits < floor {}", report.bits_used, floor);
    }

    #[test]
    fn frames_round_trip(agent in any::<u16>(), shapes in prop::collection::vec((1usize..5, 1usize..5, 2u32..1000), 0..4), seed in any::<u64>(), error in any::<bool>()) {
        let mut rng = stream_rng(seed, stream::QUANTIZER);
        let body = if error {
            FrameBody::Error
        } else {
            FrameBody::Payload(
                shapes
                    .iter()
                    .map(|&(r, c, a)| QuantizedMatrix::new(r, c, a, (0..r * c).map(|_| rng.random_range(0..a)).collect()).unwrap())
                    .collect(),
            )
        };
        let frame = Frame { agent_id: agent, body };
        let bytes = serialize_payload(&frame).unwrap();
        let back = deserialize_payload(&bytes).unwrap();
        prop_assert_eq!(&back, &frame);
        prop_assert_eq!(serialize_payload(&back).unwrap(), bytes);
    }

    #[test]
    fn two_agent_estimates_are_psd_and_deterministic(d1 in 1usize..4, d2 in 1usize..4, m in 8usize..64, bits in 4u64..14, seed in any::<u64>()) {
        let model = model(d1, d2, 0.7, seed);
        let z = sample(&model, m, seed).unwrap();
        let n = m / 2;
        let budgets = [bits * (d1 * d1 + d1 * n) as u64 * 2, bits * (d2 * d2 + d2 * n) as u64 * 2];
        let setup = TwoAgentSetup::custom(1.0, [d1, d2], m, n, budgets, false).unwrap();
        let run = || {
            let m1 = two_agent_encode(0, &z.row_block(0, d1), &setup).unwrap();
            let m2 = two_agent_encode(1, &z.row_block(d1, d2), &setup).unwrap();
            let est = two_agent_decode(&m1, &m2, &setup).unwrap();
            (m1, m2, est)
        };
        let (m1, m2, est) = run();
        prop_assert!(m1.bits_used() <= budgets[0] && m2.bits_used() <= budgets[1]);
        prop_assert_eq!(est.error_triggered, m1.is_error() || m2.is_error());
        if est.error_triggered {
            prop_assert!(est.c_hat.iter().all(|&x| x == 0.0));
        }
        prop_assert!(lambda_min(&est.c_hat) >= -1e-10);
        let (r1, r2, again) = run();
        prop_assert_eq!(serialize_payload(&m1.to_frame()).unwrap(), serialize_payload(&r1.to_frame()).unwrap());
        prop_assert_eq!(serialize_payload(&m2.to_frame()).unwrap(), serialize_payload(&r2.to_frame()).unwrap());
        prop_assert_eq!(est.c_hat, again.c_hat);
    }

    #[test]
    fn multi_agent_estimates_are_psd(dims in prop::collection::vec(1usize..3, 2..5), n in 4usize..40, levels in 1u32..64, seed in any::<u64>()) {
        let d: usize = dims.iter().sum();
        let model = model(dims[0], d - dims[0], 0.9, seed);
        let z = sample(&model, n, seed).unwrap();
        let setup = MultiAgentSetup::new(n, ScalarDitherConfig::from_levels(3.0, levels).unwrap(), dims.clone()).unwrap();
        let mut rng = stream_rng(seed, stream::QUANTIZER);
        let msgs: Vec<AgentMessage> = dims
            .iter()
            .enumerate()
            .map(|(k, &dk)| multi_agent_encode(k, &z.row_block(setup.offset(k), dk), &setup, &mut rng).unwrap())
            .collect();
        for (k, msg) in msgs.iter().enumerate() {
            prop_assert!(msg.bits_used() <= setup.budget(k));
        }
        let est = multi_agent_decode(&msgs, &setup).unwrap();
        prop_assert_eq!(est.error_triggered, msgs.iter().any(AgentMessage::is_error));
        prop_assert!(lambda_min(&est.c_hat) >= -1e-10 * (1.0 + est.c_hat.amax()));
    }

    #[test]
    fn naive_upper_dominates(k in 1usize..6, dx in 1usize..5, dy in 1usize..5, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, stream::MODEL);
        let states: Vec<(DMatrix<f64>, f64)> = (0..k)
            .map(|_| {
                let a = DMatrix::from_fn(dy, dx, |_, _| rng.sample::<f64, _>(StandardNormal));
                let a = &a * (rng.random_range(0.2..1.0) / operator_norm(&a).unwrap());
                (a, 1.0 / k as f64)
            })
            .collect();
        let ch = MixtureChannel::new(states).unwrap();
        let (exact, naive) = (csdpi_mixture(&ch), csdpi_naive_upper(&ch));
        prop_assert!(exact <= naive + 1e-12);
        if k == 1 {
            prop_assert!((exact - naive).abs() <= 1e-12);
        }
    }

    #[test]
    fn sdpi_invariant_under_block_rotations(d1 in 1usize..4, d2 in 1usize..4, seed in any::<u64>()) {
        let c = model(d1, d2, 0.8, seed).cov().clone();
        let (c11, c22) = (c.view((0, 0), (d1, d1)).into_owned(), c.view((d1, d1), (d2, d2)).into_owned());
        let c12 = c.view((0, d1), (d1, d2)).into_owned();
        let base = sdpi_gaussian(&GaussianJoint::new(c11.clone(), c12.clone(), c22.clone()).unwrap()).unwrap();
        let (u, v) = (orthogonal(d1, seed ^ 2), orthogonal(d2, seed ^ 3));
        let rotated = GaussianJoint::new(&u * c11 * u.transpose(), &u * c12 * v.transpose(), &v * c22 * v.transpose()).unwrap();
        prop_assert!((sdpi_gaussian(&rotated).unwrap() - base).abs() <= 1e-9);
    }

    #[test]
    fn lower_bounds_are_monotone(d1 in 1usize..8, d2 in 1usize..8, m in 1.0f64..1e6, b1 in 1.0f64..1e6, b2 in 1.0f64..1e6) {
        let base = BoundInputs { sigma: 1.0, m, d1, d2, b1, b2 };
        let bounds: [fn(&BoundInputs) -> dcme::Result<dcme::theory::Bound>; 4] =
            [lower_bound_op, lower_bound_op_cross, lower_bound_fr, lower_bound_fr_cross];
        for f in bounds {
            let v = f(&base).unwrap().value;
            for more in [
                BoundInputs { m: m * 2.0, ..base },
                BoundInputs { b1: b1 * 2.0, ..base },
                BoundInputs { b2: b2 * 2.0, ..base },
            ] {
                prop_assert!(f(&more).unwrap().value <= v * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn empirical_covariance_converges() {
    let model = model(2, 2, 0.6, 11);
    let count = 100_000;
    let z = sample(&model, count, 5).unwrap();
    let s = z.second_moment();
    let c = model.cov();
    for i in 0..4 {
        for j in 0..4 {
            // Gaussian fourth moments: Var(z_i z_j) = C_ij² + C_ii C_jj.
            let se = ((c[(i, j)].powi(2) + c[(i, i)] * c[(j, j)]) / count as f64).sqrt();
            assert!((s[(i, j)] - c[(i, j)]).abs() <= 5.0 * se, "entry ({i},{j})");
        }
    }
}

#[test]
fn insufficient_budget_is_loud() {
    let model = model(2, 2, 0.5, 1);
    let z = sample(&model, 16, 1).unwrap();
    let setup = TwoAgentSetup::custom(1.0, [2, 2], 16, 8, [8, 8], false).unwrap();
    assert!(matches!(two_agent_encode(0, &z.row_block(0, 2), &setup), Err(Error::InsufficientBudget { .. })));
}

fn mean_op(text: &str) -> Vec<(f64, f64)> {
    let cfg = ExperimentConfig::parse(text).unwrap();
    summarize(&run_sweep(&cfg).unwrap()).iter().map(|s| (s.mean_op, s.stderr_op)).collect()
}

#[test]
fn distortion_falls_with_budget_and_samples() {
    let budget = mean_op("scheme = two_agent_op\nd1 = 2\nd2 = 2\nm = 256\nn = 128\nbudget = 4000, 16000\ntrials = 200\nseed = 3\n");
    assert!(budget[1].0 <= budget[0].0, "{budget:?}");
    let samples = mean_op("scheme = two_agent_op\nd1 = 2\nd2 = 2\nm = 256, 1024\nbudget = 100000\ntrials = 200\nseed = 3\n");
    assert!(samples[1].0 <= samples[0].0, "{samples:?}");
    let multi = mean_op("scheme = multi_agent\nd1 = 2\nd2 = 2\nm = 256, 1024\nlevels = 1024\ntrials = 200\nseed = 3\n");
    assert!(multi[1].0 <= multi[0].0, "{multi:?}");
}
