use proptest::prelude::*;

use nqs_core::allocator::{constrained_search, ConstraintSet, GridSpec, LossModel, TimeRule};
use nqs_core::chinchilla::{chin_loss_real, ChinParams};
use nqs_core::data::{Record, ScalingDataset};
use nqs_core::fitting::{filter_small_batch, nqs_objective};
use nqs_core::io::{read_dataset, write_dataset};
use nqs_core::model::{
    appx_error, nqs_loss, nqs_loss_scheduled, var_error, LrSchedule, NqsParams, RunConfig,
};
use nqs_core::numerics::hurwitz_zeta;

/// Parameters with `Q < 2`, so a unit rate is stable for every mode.
fn theta() -> impl Strategy<Value = NqsParams> {
    (
        1.05f64..2.5,
        0.1f64..100.0,
        0.3f64..2.5,
        0.01f64..1.99,
        0.3f64..2.5,
        0.01f64..10.0,
        0.0f64..3.0,
    )
        .prop_map(|(p, pp, q, qq, r, rr, e)| NqsParams::new(p, pp, q, qq, r, rr, e).unwrap())
}

fn log_int(lo: f64, hi: f64) -> impl Strategy<Value = u64> {
    (lo.ln()..hi.ln()).prop_map(|x| x.exp().round() as u64)
}

fn synthetic(theta: &NqsParams, runs: &[(u64, u64, u64)], wobble: &[f64]) -> ScalingDataset {
    let records = runs
        .iter()
        .zip(wobble.iter().cycle())
        .enumerate()
        .map(|(i, (&(n, b, k), w))| {
            let run = RunConfig::new(n, b, k, 8).unwrap();
            Record::new(i, run, nqs_loss(theta, &run).unwrap() * (1.0 + w))
        })
        .collect();
    ScalingDataset::new(records).unwrap()
}

fn runs() -> impl Strategy<Value = Vec<(u64, u64, u64)>> {
    prop::collection::vec(
        (log_int(10.0, 1e6), log_int(1.0, 256.0), log_int(1.0, 1e4)),
        1..24,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn batch_enters_only_through_the_variance_term(
        theta in theta(), n in log_int(1.0, 1e9), k in 0u64..1_000_000, b1 in 1u64..10_000, b2 in 1u64..10_000,
    ) {
        let l1 = nqs_loss(&theta, &RunConfig::new(n, b1, k, 1).unwrap()).unwrap();
        let l2 = nqs_loss(&theta, &RunConfig::new(n, b2, k, 1).unwrap()).unwrap();
        let v = var_error(&theta, n, 1, k).unwrap();
        let expected = v * (1.0 / b1 as f64 - 1.0 / b2 as f64);
        let ulp = l1.max(l2) * f64::EPSILON;
        prop_assert!(((l1 - l2) - expected).abs() <= 4.0 * ulp, "{} vs {}", l1 - l2, expected);
    }

    #[test]
    fn untrained_loss_is_the_full_series(theta in theta(), n in log_int(1.0, 1e9), b in 1u64..1000) {
        let loss = nqs_loss(&theta, &RunConfig::new(n, b, 0, 1).unwrap()).unwrap();
        let full = theta.irreducible + theta.approx_scale * hurwitz_zeta(theta.approx_exp, 1.0).unwrap();
        prop_assert!((loss - full).abs() <= 1e-10 * full, "{loss} vs {full}");
    }

    #[test]
    fn loss_never_drops_below_the_approximation_floor(
        theta in theta(), n in log_int(1.0, 1e9), b in log_int(1.0, 1e4), k in log_int(1.0, 1e7),
    ) {
        let loss = nqs_loss(&theta, &RunConfig::new(n, b, k, 1).unwrap()).unwrap();
        let floor = theta.irreducible + appx_error(&theta, n).unwrap();
        prop_assert!(loss >= floor * (1.0 - 1e-15), "{loss} < {floor}");
    }

    #[test]
    fn splitting_a_constant_schedule_changes_nothing(
        theta in theta(), n in log_int(1.0, 1e7), b in log_int(1.0, 1e3),
        cuts in prop::collection::vec(1u64..5_000, 1..8), gamma_frac in 0.05f64..0.99,
    ) {
        let gamma = gamma_frac * 2.0 / theta.hessian_scale;
        let total: u64 = cuts.iter().sum();
        let run = RunConfig::new(n, b, total, 1).unwrap();
        let whole = nqs_loss_scheduled(&theta, &LrSchedule::new(vec![(total, gamma)]).unwrap(), &run).unwrap();
        let parts = LrSchedule::new(cuts.iter().map(|&m| (m, gamma)).collect()).unwrap();
        let split = nqs_loss_scheduled(&theta, &parts, &run).unwrap();
        prop_assert!((whole - split).abs() <= 1e-12 * whole, "{whole} vs {split}");
    }

    #[test]
    fn objective_ignores_record_order(
        theta in theta(), runs in runs(), wobble in prop::collection::vec(-0.1f64..0.1, 1..8), seed in any::<u64>(),
    ) {
        let data = synthetic(&theta, &runs, &wobble);
        let mut shuffled = data.clone();
        let len = shuffled.records.len();
        for i in (1..len).rev() {
            shuffled.records.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let a = nqs_objective(&theta, &data, 1e-3).unwrap();
        let b = nqs_objective(&theta, &shuffled, 1e-3).unwrap();
        prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-300), "{a} vs {b}");
    }

    #[test]
    fn objective_is_a_mean_over_records(
        theta in theta(), runs in runs(), wobble in prop::collection::vec(-0.1f64..0.1, 1..8), copies in 2usize..5,
    ) {
        let data = synthetic(&theta, &runs, &wobble);
        let mut repeated = data.clone();
        for _ in 1..copies {
            repeated.records.extend(data.records.iter().cloned());
        }
        let a = nqs_objective(&theta, &data, 1e-3).unwrap();
        let b = nqs_objective(&theta, &repeated, 1e-3).unwrap();
        prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-300), "{a} vs {b}");
    }

    #[test]
    fn small_batch_filter_is_idempotent(
        theta in theta(), n_exp in 8u32..16, b_exps in prop::collection::vec(0u32..6, 2..20),
        wobble in prop::collection::vec(-0.2f64..0.2, 1..8), margin in 0.0f64..0.2,
    ) {
        // Runs on a shared-token lattice so that half-batch neighbors exist.
        let runs: Vec<_> = b_exps.iter().map(|&e| (1u64 << n_exp, 1u64 << e, 1u64 << (10 - e))).collect();
        let data = synthetic(&theta, &runs, &wobble);
        let (once, _) = filter_small_batch(&data, margin);
        let (twice, removed_again) = filter_small_batch(&once, margin);
        prop_assert_eq!(&once, &twice);
        prop_assert!(removed_again.is_empty());
    }

    #[test]
    fn chinchilla_loss_falls_with_model_and_data(
        p in 1.05f64..2.5, a in 0.1f64..1e3, q in 0.3f64..2.5, b in 0.1f64..1e3, e in 0.0f64..3.0,
        n in 1e3f64..1e12, d in 1e3f64..1e13, step in 1.01f64..10.0,
    ) {
        let phi = ChinParams::new(p, a, q, b, e).unwrap();
        let base = chin_loss_real(&phi, n, d);
        prop_assert!(chin_loss_real(&phi, n * step, d) <= base);
        prop_assert!(chin_loss_real(&phi, n, d * step) <= base);
    }

    #[test]
    fn csv_round_trip_preserves_the_dataset(
        runs in runs(), losses in prop::collection::vec(1e-6f64..1e3, 1..8),
        tags in prop::collection::vec(prop::sample::subsequence(vec!["train", "holdout", "isoflops", "level-3"], 0..3), 1..5),
    ) {
        let records = runs
            .iter()
            .enumerate()
            .map(|(i, &(n, b, k))| {
                Record::new(i, RunConfig::new(n, b, k, 64).unwrap(), losses[i % losses.len()])
                    .with_tags(tags[i % tags.len()].iter().copied())
            })
            .collect();
        let data = ScalingDataset::new(records).unwrap();
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        prop_assert_eq!(read_dataset(buf.as_slice()).unwrap(), data);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dropping_a_constraint_never_hurts(
        theta in theta(), compute_exp in 12.0f64..16.0, memory in 1e3f64..1e7, time in 1e3f64..1e9, data_cap in 1e2f64..1e6,
    ) {
        let model = LossModel::Nqs { theta, layernorm: None };
        let grid = GridSpec::log_spaced((10, 100_000), (1, 1_000), (1, 100_000), 4).unwrap();
        let full = ConstraintSet {
            compute_max: 10f64.powf(compute_exp),
            time_max: Some(time),
            time_rule: TimeRule::default(),
            memory_max: Some(memory),
            data_max: Some(data_cap),
            seq_len: 1,
        };
        let Ok(best) = constrained_search(&model, &full, &grid) else { return Ok(()) };
        prop_assert!(full.admits(&best.run));
        let relaxed = [
            ConstraintSet { time_max: None, ..full },
            ConstraintSet { memory_max: None, ..full },
            ConstraintSet { data_max: None, ..full },
        ];
        for cons in relaxed {
            let r = constrained_search(&model, &cons, &grid).unwrap();
            prop_assert!(r.loss <= best.loss, "{} > {}", r.loss, best.loss);
        }
    }
}
