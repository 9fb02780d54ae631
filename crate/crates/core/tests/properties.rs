use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;

use gpe_core::accelerator::{norm_error_indicator, should_invoke, AccelConfig, Invoke};
use gpe_core::bench::{impr_rho, summarize, BenchMode, BenchRecord, RunSummary};
use gpe_core::dataset::{dataset_from_bytes, dataset_to_bytes, tolerance_schedule, SamplePoint};
use gpe_core::manifold::{retract, transport, MetricContext};
use gpe_core::nn::{NetworkSpec, WeightArchive};
use gpe_core::statefile::{state_from_bytes, state_to_bytes};
use gpe_core::{inner_l2, Field, GpeOperator, GpeParams, Grid, State, TangentField};

fn grid16() -> Arc<Grid> {
    Grid::shared(20.0, 16).unwrap()
}

fn field(seed: u64, scale: f64) -> Field {
    State::random(grid16(), seed).into_field().scaled(scale)
}

fn params() -> impl Strategy<Value = GpeParams> {
    (1.0..2.0f64, 0.0..1.6f64, 0.0..800.0f64)
        .prop_map(|(v1, omega, kappa)| GpeParams::new(20.0, 16, v1, 1.0, omega, kappa).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectral_round_trip(vals in prop::collection::vec(-10.0..10.0f64, 512)) {
        let g = grid16();
        let samples: Vec<Complex64> = vals.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
        let back = Field::from_real(g, &samples).unwrap().to_real();
        for (a, b) in samples.iter().zip(&back) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn inner_product_axioms(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let (u, v, w) = (field(s1, 1.0), field(s2, 2.0), field(s3, 0.5));
        let uv = inner_l2(&u, &v).unwrap();
        prop_assert!((uv - inner_l2(&v, &u).unwrap()).abs() < 1e-14);
        let mut lin = u.clone().scaled(a);
        lin.axpy(b, &w);
        let lhs = inner_l2(&lin, &v).unwrap();
        let rhs = a * uv + b * inner_l2(&w, &v).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
        prop_assert!(inner_l2(&u, &u).unwrap() > 0.0);
        prop_assert!(inner_l2(&Field::zeros(grid16()), &Field::zeros(grid16())).unwrap() == 0.0);
    }

    #[test]
    fn random_states_are_normalized(seed in any::<u64>()) {
        let s = State::random(grid16(), seed);
        prop_assert!((s.norm() - 1.0).abs() < 1e-14);
        prop_assert!(s.is_finite());
    }

    #[test]
    fn operator_is_hermitian_and_positive(p in params(), s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
        let op = Arc::new(GpeOperator::new(p).unwrap());
        let ctx = op.context(&State::random(grid16(), s3)).unwrap();
        let (v, w) = (field(s1, 1.0), field(s2, 1.0));
        let vw = ctx.bilinear(&v, &w).unwrap();
        let wv = ctx.bilinear(&w, &v).unwrap();
        prop_assert!((vw - wv).abs() <= 1e-10 * (1.0 + vw.abs()));
        prop_assert!(ctx.bilinear(&v, &v).unwrap() > 0.0);
    }

    #[test]
    fn retraction_and_transport(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>(), t in 0.0..5.0f64) {
        let phi = State::random(grid16(), s1);
        let v = TangentField::project(&phi, field(s2, t)).unwrap();
        let w = TangentField::project(&phi, field(s3, 1.0)).unwrap();
        let r = retract(&phi, &v).unwrap();
        prop_assert!((r.norm() - 1.0).abs() < 1e-12);
        let tw = transport(&phi, &v, &w).unwrap();
        prop_assert!(tw.tangency_defect(&r) < 1e-10);
    }

    #[test]
    fn energy_identity(p in params(), seed in any::<u64>()) {
        let op = Arc::new(GpeOperator::new(p).unwrap());
        let phi = State::random(grid16(), seed);
        let mc = MetricContext::new(&op, phi.clone(), 1e-12, None).unwrap();
        let e = op.energy(&phi).unwrap();
        let q = op.quartic_integral(&phi);
        let rq = mc.hamiltonian().rayleigh_quotient(&phi).unwrap();
        // <A phi, phi> counts the quartic term twice relative to 2E.
        prop_assert!((rq - (2.0 * e + 0.5 * p.kappa * q)).abs() <= 1e-10 * rq.abs());
        prop_assert!(mc.gradient().tangency_defect(&phi) < 1e-10);
    }

    #[test]
    fn schedule_is_geometric(lo in -8.0..-2.0f64, span in 0.5..4.0f64, m in 2usize..40) {
        let (min, max) = (10f64.powf(lo), 10f64.powf(lo + span));
        let s = tolerance_schedule(min, max, m).unwrap();
        prop_assert_eq!(s.len(), m);
        prop_assert_eq!(s[0], max);
        prop_assert_eq!(s[m - 1], min);
        prop_assert!(s.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn scheduler_rules(k in 0usize..1000, lg in -7.0..1.0f64, applied in any::<bool>()) {
        let cfg = AccelConfig::default();
        let g = 10f64.powf(lg);
        let d = should_invoke(k, g, applied, &cfg);
        if applied {
            prop_assert_eq!(d, Invoke::Skip);
        } else if g < cfg.eps1_min {
            prop_assert_eq!(d, Invoke::Force);
        } else if g > cfg.eps1_max {
            prop_assert_eq!(d, Invoke::Skip);
        } else {
            prop_assert_eq!(d == Invoke::Try, k % cfg.n_e == 0);
        }
    }

    #[test]
    fn indicator_measures_norm_error(seed in any::<u64>(), s in 0.01..3.0f64) {
        let f = field(seed, s);
        prop_assert!((norm_error_indicator(&f) - (s - 1.0).abs()).abs() < 1e-12);
    }

    #[test]
    fn state_file_round_trip(seed in any::<u64>()) {
        let f = field(seed, 1.0);
        let back = state_from_bytes(&state_to_bytes(&f)).unwrap();
        prop_assert_eq!(back.coeffs(), f.coeffs());
    }

    #[test]
    fn dataset_round_trip(vals in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 512 * 3), j in 1u8..=20, run in any::<u64>(), p in params()) {
        let s = SamplePoint {
            phi: vals[..512].to_vec(),
            g: vals[512..1024].to_vec(),
            phi_star: vals[1024..].to_vec(),
            tolerance: 1e-3,
            params: p,
            run_id: run,
            j,
        };
        let bytes = dataset_to_bytes(std::slice::from_ref(&s)).unwrap();
        prop_assert_eq!(dataset_from_bytes(&bytes).unwrap(), vec![s]);
    }

    #[test]
    fn archive_round_trip(base in 1usize..4, seed in any::<u64>()) {
        let a = WeightArchive::random(&NetworkSpec::with_base_width(base), seed);
        prop_assert_eq!(WeightArchive::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn density_improvement_is_at_most_one(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
        let (a, b, c) = (field(s1, 1.0), field(s2, 1.0), field(s3, 1.0));
        if let Some(v) = impr_rho(&a, &b, &c).unwrap() {
            prop_assert!(v <= 1.0);
        }
        prop_assert_eq!(impr_rho(&a, &c, &c).unwrap(), Some(1.0));
    }

    #[test]
    fn summary_ignores_record_order(iters in prop::collection::vec((1usize..500, 1usize..500, -1.0..1.0f64), 1..12), rot in 0usize..12) {
        let records: Vec<BenchRecord> = iters
            .iter()
            .enumerate()
            .map(|(i, &(c, a, r))| record(i as u64, c, a, r))
            .collect();
        let mut shuffled = records.clone();
        shuffled.rotate_left(rot % records.len());
        shuffled.reverse();
        prop_assert_eq!(summarize(BenchMode::Strategy, &records), summarize(BenchMode::Strategy, &shuffled));
    }
}

fn record(id: u64, classical: usize, accelerated: usize, rho: f64) -> BenchRecord {
    let run = |iterations| RunSummary { iterations, wall_seconds: iterations as f64 * 1e-3, energy: 1.0, lambda: 2.0, gnorm: 1e-9, converged: true };
    BenchRecord {
        case_id: id,
        params: GpeParams::new(20.0, 16, 1.0, 1.0, 0.5, 100.0).unwrap(),
        seed: id,
        mode: BenchMode::Strategy,
        classical: run(classical),
        accelerated: run(accelerated),
        eps1: None,
        impr_rho: Some(rho),
        same_minimum: true,
        events: Vec::new(),
        warnings: Vec::new(),
    }
}
