mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::study;
use osrct::bias::{compile_bias, BiasTerm, BiasingSpec, CompiledBias, Transform};
use osrct::data::{
    binarize_treatment, load_table_from_reader, subsample_uniform, write_table_to_writer, Column,
    ColumnRole, Dataset, LevelTarget, TableKind,
};
use osrct::estimators::{builtin, MatchTarget, BUILTIN_IDS};
use osrct::rng::TrialRng;
use osrct::sampling::{apo_to_rct, hide_covariates, osrct_draw, osrct_sample, weighted_view};
use osrct::stats::{mean, pearson};
use osrct::synthetic::{gen_apo, SyntheticConfig};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Treatment, outcome and one continuous covariate, both arms well populated.
fn observational() -> impl Strategy<Value = (Vec<i64>, Vec<f64>, Vec<f64>)> {
    (40usize..90).prop_flat_map(|n| {
        (
            proptest::collection::vec(0i64..2, n),
            proptest::collection::vec(-5.0f64..5.0, n),
            proptest::collection::vec(-2.0f64..2.0, n),
        )
            .prop_filter("both arms need 10 units", |(t, _, _)| {
                let k = t.iter().filter(|&&v| v == 1).count();
                k >= 10 && t.len() - k >= 10
            })
    })
}

/// Observational table around `extra`, with placeholder treatment and outcome.
fn table_with(extra: Column) -> Dataset {
    let n = extra.data.len();
    Dataset::new(
        vec![
            Column::integer(
                "t",
                ColumnRole::Treatment,
                (0..n as i64).map(|i| i % 2).collect(),
            ),
            Column::numeric("y", ColumnRole::Outcome, vec![0.0; n]),
            extra,
        ],
        TableKind::Observational,
    )
    .unwrap()
}

fn estimates(t: &[i64], y: &[f64], x: &[f64]) -> Vec<f64> {
    let s = study(t, y, &[("x", x.to_vec())], None);
    BUILTIN_IDS
        .iter()
        .map(|id| {
            builtin(id, MatchTarget::Ate)
                .unwrap()
                .estimate(&s)
                .unwrap()
                .value
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn estimates_shift_with_outcome_location((t, y, x) in observational(), c in -50.0f64..50.0) {
        let base = estimates(&t, &y, &x);
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        for (a, b) in base.iter().zip(estimates(&t, &shifted, &x)) {
            prop_assert!(close(*a, b, 1e-8), "{a} vs {b}");
        }
    }

    #[test]
    fn estimates_scale_with_outcome((t, y, x) in observational(), k in 0.1f64..10.0) {
        let base = estimates(&t, &y, &x);
        let scaled: Vec<f64> = y.iter().map(|v| v * k).collect();
        for (a, b) in base.iter().zip(estimates(&t, &scaled, &x)) {
            prop_assert!(close(a * k, b, 1e-8), "{} vs {b}", a * k);
        }
    }

    #[test]
    fn flipping_treatment_labels_negates_estimates((t, y, x) in observational()) {
        let flipped: Vec<i64> = t.iter().map(|v| 1 - v).collect();
        for (a, b) in estimates(&t, &y, &x).iter().zip(estimates(&flipped, &y, &x)) {
            prop_assert!(close(*a, -b, 1e-7), "{a} vs {}", -b);
        }
    }

    #[test]
    fn row_order_does_not_matter((t, y, x) in observational(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..t.len()).collect();
        order.shuffle(&mut TrialRng::from_seed(seed));
        let pt: Vec<i64> = order.iter().map(|&i| t[i]).collect();
        let py: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let px: Vec<f64> = order.iter().map(|&i| x[i]).collect();
        for (a, b) in estimates(&t, &y, &x).iter().zip(estimates(&pt, &py, &px)) {
            prop_assert!(close(*a, b, 1e-8), "{a} vs {b}");
        }
    }

    #[test]
    fn selection_probability_is_monotone_in_covariate(
        x in proptest::collection::vec(-100.0f64..100.0, 5..60),
        coef in 0.05f64..4.0,
        rank in any::<bool>(),
    ) {
        prop_assume!(x.iter().any(|v| *v != x[0]));
        let d = table_with(Column::numeric("x", ColumnRole::Covariate, x.clone()));
        let mut term = BiasTerm::standardized("x", coef);
        if rank {
            term.transform = Transform::RankQuantile;
        }
        let b = compile_bias(&BiasingSpec::new(vec![term]), &d).unwrap();
        let p = b.probabilities(&d).unwrap();
        for i in 0..x.len() {
            prop_assert!((0.01..=0.99).contains(&p[i]));
            for j in 0..x.len() {
                if x[i] < x[j] {
                    prop_assert!(p[i] <= p[j]);
                }
            }
        }
    }

    #[test]
    fn osrct_partitions_the_trial(
        t in proptest::collection::vec(0i64..2, 1..120),
        coef in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let n = t.len();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let rct = Dataset::new(
            vec![
                Column::integer("id", ColumnRole::UnitId, (0..n as i64).collect()),
                Column::integer("t", ColumnRole::Treatment, t.clone()),
                Column::numeric("y", ColumnRole::Outcome, x.iter().map(|v| 2.0 * v).collect()),
                Column::numeric("x", ColumnRole::Covariate, x.clone()),
            ],
            TableKind::Rct,
        ).unwrap();
        let bias = if x.iter().all(|v| *v == x[0]) {
            CompiledBias::constant(0.5)
        } else {
            compile_bias(&BiasingSpec::new(vec![BiasTerm::standardized("x", coef)]), &rct).unwrap()
        };
        let p = bias.probabilities(&rct).unwrap();
        let s = osrct_draw(&rct, &bias, &mut TrialRng::from_seed(seed)).unwrap();
        let ids = |d: &Dataset| -> Vec<i64> {
            let c = d.column("id").unwrap();
            (0..d.n_rows()).map(|r| c.data.as_f64(r).unwrap() as i64).collect()
        };
        let mut all = ids(s.accepted());
        all.extend(ids(s.complementary()));
        all.sort_unstable();
        prop_assert_eq!(all, (0..n as i64).collect::<Vec<_>>());
        prop_assert_eq!(s.selection_prob().len(), s.accepted().n_rows());
        prop_assert_eq!(s.comp_selection_prob().len(), s.complementary().n_rows());
        for (id, ps) in ids(s.accepted()).into_iter().zip(s.selection_prob()) {
            let i = id as usize;
            let expected = if t[i] == 1 { p[i] } else { 1.0 - p[i] };
            prop_assert_eq!(*ps, expected);
        }
        for (id, ps) in ids(s.complementary()).into_iter().zip(s.comp_selection_prob()) {
            let i = id as usize;
            let expected = if t[i] == 1 { p[i] } else { 1.0 - p[i] };
            prop_assert_eq!(*ps, expected);
        }
        let w = weighted_view(&rct, &bias).unwrap();
        prop_assert_eq!(w.accepted().n_rows(), n);
        prop_assert_eq!(w.accepted().weights().unwrap(), w.selection_prob());
    }

    #[test]
    fn binarize_keeps_cells_exactly(
        labels in proptest::collection::vec(prop_oneof![Just("a"), Just("b"), Just("c"), Just("d")], 1..80),
    ) {
        let n = labels.len();
        let x: Vec<f64> = (0..n).map(|i| i as f64 / 3.0).collect();
        let d = Dataset::new(
            vec![
                Column::categorical("arm", ColumnRole::Treatment, &labels),
                Column::numeric("y", ColumnRole::Outcome, x.iter().map(|v| v * v).collect()),
                Column::numeric("x", ColumnRole::Covariate, x.clone()),
            ],
            TableKind::Rct,
        ).unwrap();
        let rule: BTreeMap<String, LevelTarget> = [
            ("a", LevelTarget::Treated),
            ("b", LevelTarget::Control),
            ("c", LevelTarget::Drop),
            ("d", LevelTarget::Treated),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let out = binarize_treatment(&d, &rule).unwrap();
        let kept: Vec<usize> = (0..n).filter(|&i| labels[i] != "c").collect();
        prop_assert_eq!(out.n_rows(), kept.len());
        let t = out.binary_treatment().unwrap();
        for (r, &i) in kept.iter().enumerate() {
            prop_assert_eq!(t[r], i64::from(labels[i] != "b"));
            prop_assert_eq!(out.column("x").unwrap().data.as_f64(r), Some(x[i]));
            prop_assert_eq!(out.outcome().unwrap()[r], x[i] * x[i]);
        }
    }

    #[test]
    fn csv_round_trip(
        rows in proptest::collection::vec(
            (0i64..2, -1e6f64..1e6, -1000i64..1000, prop_oneof![Just("red"), Just("green"), Just("blue")]),
            1..60,
        ),
        real_noise in proptest::collection::vec(-1.0f64..1.0, 60),
    ) {
        let n = rows.len();
        let d = Dataset::new(
            vec![
                Column::integer("t", ColumnRole::Treatment, rows.iter().map(|r| r.0).collect()),
                Column::numeric("y", ColumnRole::Outcome, rows.iter().map(|r| r.1).collect()),
                Column::integer("k", ColumnRole::Covariate, rows.iter().map(|r| r.2).collect()),
                Column::categorical("colour", ColumnRole::Covariate, &rows.iter().map(|r| r.3).collect::<Vec<_>>()),
                Column::numeric("z", ColumnRole::Covariate, real_noise[..n].to_vec()),
            ],
            TableKind::Rct,
        ).unwrap();
        let mut buf = Vec::new();
        write_table_to_writer(&d, &mut buf).unwrap();
        let back = load_table_from_reader(buf.as_slice(), &d.schema_config()).unwrap();
        prop_assert_eq!(back.dropped_rows, 0);
        prop_assert_eq!(back.dataset, d);
    }

    #[test]
    fn hiding_keeps_columns_but_removes_them_from_view((t, y, x) in observational()) {
        let s = study(&t, &y, &[("x", x.clone()), ("z", y.clone())], None);
        let h = hide_covariates(&s, &["z"]).unwrap();
        prop_assert!(h.accepted().column("z").is_some());
        prop_assert!(h.estimator_view().column("z").is_none());
        prop_assert_eq!(h.visible_covariates(), vec!["x"]);
    }
}

#[test]
fn uniform_subsample_includes_each_row_equally() {
    let (rows, n, seeds) = (50usize, 10usize, 2000u64);
    let d = table_with(Column::integer(
        "id",
        ColumnRole::UnitId,
        (0..rows as i64).collect(),
    ));
    let mut counts = vec![0.0f64; rows];
    for seed in 0..seeds {
        let s = subsample_uniform(&d, n, &mut TrialRng::for_trial(99, seed)).unwrap();
        let ids = s.column("id").unwrap();
        for r in 0..n {
            counts[ids.data.as_f64(r).unwrap() as usize] += 1.0;
        }
    }
    // Inclusion indicators within one draw are exchangeable with fixed sum, so
    // sum (O - E)^2 / (S p (1 - p)) is chi-square with rows - 1 degrees of freedom.
    let p = n as f64 / rows as f64;
    let e = seeds as f64 * p;
    let stat: f64 = counts.iter().map(|o| (o - e).powi(2)).sum::<f64>() / (e * (1.0 - p));
    let pval = 1.0 - ChiSquared::new((rows - 1) as f64).unwrap().cdf(stat);
    assert!(pval > 0.001, "chi-square {stat}, p = {pval}");
}

#[test]
fn randomized_treatment_is_independent_of_covariates() {
    let apo = gen_apo(&SyntheticConfig {
        n_units: 20_000,
        n_covariates: 3,
        seed: 17,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let rct = apo_to_rct(&apo, &mut TrialRng::from_seed(3)).unwrap();
    let t: Vec<f64> = rct
        .binary_treatment()
        .unwrap()
        .iter()
        .map(|&v| v as f64)
        .collect();
    for name in ["x1", "x2", "x3"] {
        let x = rct.column(name).unwrap().data.to_f64_vec().unwrap();
        let r = pearson(&t, &x).unwrap();
        assert!(r.abs() < 4.0 / (t.len() as f64).sqrt(), "{name}: r = {r}");
    }
}

#[test]
fn confounding_direction_follows_bias_sign() {
    let cfg = SyntheticConfig {
        n_units: 4000,
        seed: 21,
        ..SyntheticConfig::default()
    };
    let apo = gen_apo(&cfg).unwrap();
    for (coef, sign) in [(1.5, 1.0), (-1.5, -1.0)] {
        let bias = compile_bias(
            &BiasingSpec::new(vec![BiasTerm::standardized("x1", coef)]),
            &apo,
        )
        .unwrap();
        let naive = builtin("naive", MatchTarget::Ate).unwrap();
        let biases: Vec<f64> = (0..20)
            .map(|seed| {
                let mut rng = TrialRng::for_trial(5, seed);
                let rct = apo_to_rct(&apo, &mut rng).unwrap();
                let t = rct.binary_treatment().unwrap();
                let y = rct.outcome().unwrap();
                let truth = mean(
                    &(0..y.len())
                        .filter(|&i| t[i] == 1)
                        .map(|i| y[i])
                        .collect::<Vec<_>>(),
                )
                .unwrap()
                    - mean(
                        &(0..y.len())
                            .filter(|&i| t[i] == 0)
                            .map(|i| y[i])
                            .collect::<Vec<_>>(),
                    )
                    .unwrap();
                let s = osrct_sample(&rct, &bias, &mut rng).unwrap();
                naive.estimate(&s).unwrap().value - truth
            })
            .collect();
        assert!(
            biases.iter().all(|b| b * sign > 0.0),
            "coef {coef}: {biases:?}"
        );
    }
}
