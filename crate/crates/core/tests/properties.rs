use itertools::Itertools;
use proptest::prelude::*;

use batchcal::boundary::{derive_linear_boundary, raster_boundary, BoundaryRule, RasterDomain};
use batchcal::calibrate::{
    calibrate_bc, calibrate_bcl, calibrate_cc, calibrate_dc, estimate_batch_prior, estimate_cf_prior,
    predict_icl_all, search_strength, CalibrationConfig, PriorSpace, RunningPrior, RunningWeighting,
};
use batchcal::gmm::{assign_clusters, fit_pc, multi_restart_fit, predict_pc_all, EmConfig, GmmModel};
use batchcal::io::{dataset_to_jsonl, parse_dataset};
use batchcal::metrics::evaluate;
use batchcal::{Method, Prior, Provenance, ScoreRecord};

fn records_strategy(classes: usize, max_len: usize) -> impl Strategy<Value = Vec<ScoreRecord>> {
    prop::collection::vec(
        (prop::collection::vec(-40.0f64..5.0, classes), 0..classes),
        1..max_len,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (s, y))| ScoreRecord::new(format!("r{i}"), s, Some(y)))
            .collect()
    })
}

fn batch_prior(values: Vec<f64>) -> Prior {
    Prior {
        values,
        provenance: Provenance::BatchMean,
        support_count: 1,
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bc_is_shift_invariant(
        records in records_strategy(3, 40),
        shift in prop::collection::vec(-50.0f64..50.0, 3),
    ) {
        let space = PriorSpace::Log;
        let prior = estimate_batch_prior(&records, space).unwrap();
        let base = calibrate_bc(&records, &prior).unwrap();
        let shifted: Vec<ScoreRecord> = records
            .iter()
            .map(|r| ScoreRecord::new(r.id.clone(), r.scores.iter().zip(&shift).map(|(s, c)| s + c).collect(), r.label))
            .collect();
        // Classes separated by less than rounding noise may legitimately flip.
        let margins: Vec<f64> = base
            .iter()
            .map(|p| {
                let mut v = p.calibrated_scores.clone();
                v.sort_by(|a, b| b.total_cmp(a));
                v[0] - v[1]
            })
            .collect();
        let shifted_prior = estimate_batch_prior(&shifted, space).unwrap();
        let moved = calibrate_bc(&shifted, &shifted_prior).unwrap();
        for ((a, b), m) in base.iter().zip(&moved).zip(&margins) {
            if *m > 1e-9 {
                prop_assert_eq!(a.predicted_class, b.predicted_class);
            }
        }
    }

    #[test]
    fn prob_space_bc_ignores_per_record_normalization(
        records in records_strategy(3, 40),
        offsets in prop::collection::vec(-50.0f64..50.0, 40),
    ) {
        let prior = estimate_batch_prior(&records, PriorSpace::Prob).unwrap();
        let moved: Vec<ScoreRecord> = records
            .iter()
            .zip(&offsets)
            .map(|(r, c)| ScoreRecord::new(r.id.clone(), r.scores.iter().map(|s| s + c).collect(), r.label))
            .collect();
        let moved_prior = estimate_batch_prior(&moved, PriorSpace::Prob).unwrap();
        for (a, b) in prior.values.iter().zip(&moved_prior.values) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn bc_is_order_invariant(records in records_strategy(3, 30), seed in any::<u64>()) {
        let mut permuted = records.clone();
        let n = permuted.len();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            permuted.swap(i, (state >> 33) as usize % (i + 1));
        }
        let a = calibrate_bc(&records, &estimate_batch_prior(&records, PriorSpace::Log).unwrap()).unwrap();
        let b = calibrate_bc(&permuted, &estimate_batch_prior(&permuted, PriorSpace::Log).unwrap()).unwrap();
        for p in &b {
            let q = a.iter().find(|q| q.id == p.id).unwrap();
            prop_assert_eq!(p.predicted_class, q.predicted_class);
            for (x, y) in p.calibrated_scores.iter().zip(&q.calibrated_scores) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn cc_with_uniform_prior_is_icl(records in records_strategy(4, 30), level in -20.0f64..5.0) {
        let prior = estimate_cf_prior(&[vec![level; 4]]).unwrap();
        let icl = predict_icl_all(&records);
        for (r, p) in records.iter().zip(&icl) {
            prop_assert_eq!(calibrate_cc(r, &prior).unwrap().predicted_class, p.predicted_class);
        }
    }

    #[test]
    fn dc_and_bc_share_the_subtraction(records in records_strategy(3, 30), q in prop::collection::vec(-10.0f64..3.0, 3)) {
        let random = Prior { values: q.clone(), provenance: Provenance::RandomText, support_count: 20 };
        let bc = calibrate_bc(&records, &batch_prior(q)).unwrap();
        for (r, b) in records.iter().zip(&bc) {
            let d = calibrate_dc(r, &random).unwrap();
            prop_assert_eq!(&d.calibrated_scores, &b.calibrated_scores);
            prop_assert_eq!(d.predicted_class, b.predicted_class);
        }
    }

    #[test]
    fn bcl_endpoints_are_bitwise(records in records_strategy(5, 30)) {
        let prior = estimate_batch_prior(&records, PriorSpace::Log).unwrap();
        let icl = predict_icl_all(&records);
        let bc = calibrate_bc(&records, &prior).unwrap();
        let zero = calibrate_bcl(&records, &prior, 0.0).unwrap();
        let one = calibrate_bcl(&records, &prior, 1.0).unwrap();
        for i in 0..records.len() {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&zero[i].calibrated_scores), bits(&icl[i].calibrated_scores));
            prop_assert_eq!(bits(&one[i].calibrated_scores), bits(&bc[i].calibrated_scores));
        }
    }

    #[test]
    fn search_result_dominates_the_grid(records in records_strategy(3, 40), bias in prop::collection::vec(-3.0f64..3.0, 3)) {
        let prior = batch_prior(bias);
        let config = CalibrationConfig { gamma_steps: 21, ..CalibrationConfig::default() };
        let search = search_strength(&records, &prior, &config).unwrap();
        prop_assert!(search.table.iter().all(|row| search.metric >= row.metric));
        let at_one = search.table.iter().find(|r| r.gamma == 1.0).unwrap();
        prop_assert!(search.metric >= at_one.metric);
    }

    #[test]
    fn running_prior_matches_full_batch_for_any_partition(
        records in records_strategy(3, 120),
        cuts in prop::collection::vec(1usize..20, 1..30),
        space in prop_oneof![Just(PriorSpace::Log), Just(PriorSpace::Prob)],
    ) {
        let full = estimate_batch_prior(&records, space).unwrap();
        let mut running = RunningPrior::new(space, RunningWeighting::PerSample);
        let mut rest = records.as_slice();
        let mut sizes = cuts.iter().cycle();
        while !rest.is_empty() {
            let take = (*sizes.next().unwrap()).min(rest.len());
            running.update(&rest[..take]).unwrap();
            rest = &rest[take..];
        }
        for (a, b) in running.prior().unwrap().values.iter().zip(&full.values) {
            prop_assert!(rel_close(*a, *b, 1e-9), "{a} vs {b}");
        }
    }

    #[test]
    fn cc_boundary_law(
        s in prop::collection::vec(-30.0f64..5.0, 2),
        q in prop::collection::vec(-8.0f64..0.0, 2),
    ) {
        let prior = estimate_cf_prior(&[q]).unwrap();
        let pred = calibrate_cc(&ScoreRecord::new("x", s.clone(), None), &prior).unwrap();
        let p = batchcal::normalize(&s);
        let ph = batchcal::normalize(&prior.values);
        let law = p[0] * ph[1] - p[1] * ph[0];
        if law.abs() > 1e-12 * (p[0] * ph[1]).abs().max(1e-300) {
            prop_assert_eq!(pred.predicted_class, usize::from(law < 0.0));
        }
    }

    #[test]
    fn dataset_parsing_is_pure(records in records_strategy(3, 20)) {
        let text = dataset_to_jsonl(&records);
        let a = parse_dataset(&text).unwrap();
        let b = parse_dataset(&text).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(dataset_to_jsonl(a.records()), text);
    }

    #[test]
    fn evaluate_ignores_prediction_order(records in records_strategy(3, 30), rotate in 0usize..30) {
        let preds: Vec<(String, usize)> = records.iter().map(|r| (r.id.clone(), (r.scores.len() + r.label.unwrap()) % 3)).collect();
        let a = evaluate(preds.iter().map(|(i, c)| (i.as_str(), *c)), &records).unwrap();
        let mut rotated = preds.clone();
        let k = rotate % rotated.len();
        rotated.rotate_left(k);
        let b = evaluate(rotated.iter().map(|(i, c)| (i.as_str(), *c)), &records).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn assignment_matches_exhaustive_search(
        j in 2usize..=5,
        raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 5), 5),
    ) {
        let means: Vec<Vec<f64>> = raw[..j]
            .iter()
            .map(|m| {
                let total: f64 = m[..j].iter().sum();
                m[..j].iter().map(|v| v / total).collect()
            })
            .collect();
        let mut model = GmmModel {
            weights: vec![1.0 / j as f64; j],
            means: means.clone(),
            covariances: vec![identity(j); j],
            assignment: (0..j).collect(),
            final_log_likelihood: 0.0,
        };
        let got = assign_clusters(&mut model).unwrap().to_vec();
        let value = |perm: &[usize]| perm.iter().enumerate().map(|(c, &k)| means[c][k]).sum::<f64>();
        let best = (0..j).permutations(j).map(|p| value(&p)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((value(&got) - best).abs() < 1e-12);
    }

    #[test]
    fn pc_reads_only_normalized_scores(shift in -30.0f64..30.0) {
        let records = two_class_records(60);
        let fit = fit_pc(&records, &EmConfig { restarts: 3, ..EmConfig::default() }).unwrap();
        let moved: Vec<ScoreRecord> = records
            .iter()
            .map(|r| ScoreRecord::new(r.id.clone(), r.scores.iter().map(|s| s + shift).collect(), r.label))
            .collect();
        let a = predict_pc_all(&records, &fit.model).unwrap();
        let b = predict_pc_all(&moved, &fit.model).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.predicted_class, y.predicted_class);
        }
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

fn two_class_records(n: usize) -> Vec<ScoreRecord> {
    (0..n)
        .map(|i| {
            let y = i % 2;
            let t = (i as f64 * 0.37).sin();
            let s = if y == 0 { vec![1.0 + t, -1.0] } else { vec![-1.0, 0.8 - t] };
            ScoreRecord::new(format!("r{i}"), s, Some(y))
        })
        .collect()
}

#[test]
fn em_keeps_weights_normalized_and_covariances_definite() {
    let data: Vec<Vec<f64>> = (0..200)
        .map(|i| {
            let t = 0.5 + 0.45 * ((i as f64) * 0.731).sin();
            vec![t, 1.0 - t]
        })
        .collect();
    let fit = multi_restart_fit(&data, 2, &EmConfig { restarts: 5, ..EmConfig::default() }).unwrap();
    let m = &fit.model;
    assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(m.weights.iter().all(|w| *w > 0.0));
    for j in 0..2 {
        let c = m.covariance(j);
        assert_eq!(c, c.transpose());
        assert!(c.cholesky().is_some());
    }
}

#[test]
fn restart_result_is_schedule_independent() {
    let data: Vec<Vec<f64>> = (0..150)
        .map(|i| {
            let t = 0.5 + 0.4 * ((i as f64) * 1.3).cos();
            vec![t, 1.0 - t]
        })
        .collect();
    let config = EmConfig { restarts: 12, seed: 3, ..EmConfig::default() };
    let parallel = multi_restart_fit(&data, 2, &config).unwrap();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| multi_restart_fit(&data, 2, &config).unwrap());
    assert_eq!(parallel, single);
}

#[test]
fn raster_matches_sign_test_away_from_the_line() {
    let priors = [
        (Method::Cc, estimate_cf_prior(&[vec![-0.1, -2.5]]).unwrap()),
        (Method::Dc, Prior { values: vec![-1.0, -3.0], provenance: Provenance::RandomText, support_count: 20 }),
        (Method::Bc, batch_prior(vec![-4.0, -0.5])),
    ];
    for (method, prior) in &priors {
        let rule = match method {
            Method::Cc => BoundaryRule::Cc(prior),
            Method::Dc => BoundaryRule::Dc(prior),
            _ => BoundaryRule::Bc(prior),
        };
        let line = derive_linear_boundary(*method, prior).unwrap();
        let raster = raster_boundary(rule, 73, RasterDomain::Probability).unwrap();
        for row in 0..73 {
            for col in 0..73 {
                let (x0, x1) = raster.cell_center(row, col);
                let (u, v) = line.to_own_space(batchcal::boundary::BoundarySpace::Probability, x0, x1);
                if line.distance(u, v) > 1e-9 {
                    assert_eq!(raster.class_at(row, col), line.classify(u, v), "{method} at ({row},{col})");
                }
            }
        }
    }
}

#[test]
fn refining_the_raster_keeps_sampled_classes() {
    let prior = estimate_cf_prior(&[vec![-0.3, -1.2]]).unwrap();
    for domain in [RasterDomain::Probability, RasterDomain::LogScore { min: -8.0, max: 1.0 }] {
        let coarse = raster_boundary(BoundaryRule::Cc(&prior), 21, domain).unwrap();
        let fine = raster_boundary(BoundaryRule::Cc(&prior), 63, domain).unwrap();
        for row in 0..21 {
            for col in 0..21 {
                let (a, b) = coarse.cell_center(row, col);
                let (c, d) = fine.cell_center(3 * row + 1, 3 * col + 1);
                assert!((a - c).abs() < 1e-12 && (b - d).abs() < 1e-12);
                assert_eq!(coarse.class_at(row, col), fine.class_at(3 * row + 1, 3 * col + 1));
            }
        }
        let again = raster_boundary(BoundaryRule::Cc(&prior), 21, domain).unwrap();
        assert_eq!(coarse.to_csv(), again.to_csv());
    }
}
