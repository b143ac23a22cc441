use cammel::bench::*;
use cammel::simulate::ScenarioConfig;
use cammel::Error;
use proptest::prelude::*;

fn row(id: usize, score: f64, sign: i8, causal: bool, true_sign: i8) -> PredictionRow {
    PredictionRow {
        gene_id: format!("gene{id}"),
        score,
        tiebreak: 0.0,
        predicted_sign: sign,
        true_is_causal: causal,
        true_sign,
    }
}

/// Average precision from the precision-recall curve: Σ_k (R_k − R_{k−1}) P_k,
/// as an exact fraction over 3 · lcm(1..8) = 2520.
fn enumerated_ap_2520(hit_at_rank: &[bool], positives: usize) -> i64 {
    let mut num = 0i64;
    let mut hits = 0i64;
    let mut prev_recall_hits = 0i64;
    for (k, &hit) in hit_at_rank.iter().enumerate() {
        if hit {
            hits += 1;
        }
        let delta = hits - prev_recall_hits;
        prev_recall_hits = hits;
        // (delta / positives) · (hits / (k + 1)) in units of 1/2520
        num += delta * hits * 2520 / (positives as i64 * (k as i64 + 1));
    }
    num
}

#[test]
fn auprc_matches_exhaustive_enumeration() {
    let mut checked = 0;
    for mask in 0u32..256 {
        if mask.count_ones() != 3 {
            continue;
        }
        // every causal gene may be predicted with the right or wrong sign
        for flips in 0u32..8 {
            let mut rows = Vec::new();
            let mut hits = Vec::new();
            let mut c = 0;
            for rank in 0..8 {
                let causal = mask & (1 << rank) != 0;
                let right = causal && flips & (1 << c) == 0;
                if causal {
                    c += 1;
                }
                // rows are stored in reverse so the ranking does the work
                rows.insert(0, row(rank, 8.0 - rank as f64, if right || !causal { 1 } else { -1 }, causal, 1));
                hits.push(right);
            }
            let table = PredictionTable { rows };
            let got = auprc_signed(&table).unwrap();
            let expect = enumerated_ap_2520(&hits, 3) as f64 / 2520.0;
            // the enumeration is an exact fraction; allow only representation error
            assert!((got - expect).abs() <= 4.0 * f64::EPSILON, "mask {mask:08b} flips {flips:03b}: {got} vs {expect}");
            checked += 1;
        }
    }
    assert_eq!(checked, 56 * 8);
}

#[test]
fn worst_and_best_rankings() {
    let best: Vec<_> = (0..8).map(|i| row(i, 8.0 - i as f64, 1, i < 3, 1)).collect();
    assert_eq!(auprc_signed(&PredictionTable { rows: best }).unwrap(), 1.0);
    let worst: Vec<_> = (0..8).map(|i| row(i, 8.0 - i as f64, 1, i >= 5, 1)).collect();
    let expect = (1.0 / 6.0 + 2.0 / 7.0 + 3.0 / 8.0) / 3.0;
    assert!((auprc_signed(&PredictionTable { rows: worst }).unwrap() - expect).abs() < 1e-15);
    let flipped: Vec<_> = (0..8).map(|i| row(i, 8.0 - i as f64, -1, i < 3, 1)).collect();
    assert_eq!(auprc_signed(&PredictionTable { rows: flipped }).unwrap(), 0.0);
}

#[test]
fn no_positives_and_bad_scores_are_errors() {
    let rows: Vec<_> = (0..4).map(|i| row(i, i as f64, 1, false, 0)).collect();
    assert!(matches!(auprc_signed(&PredictionTable { rows }), Err(Error::NoPositives)));
    let rows = vec![row(0, f64::NAN, 1, true, 1), row(1, 1.0, 1, false, 0)];
    assert!(matches!(auprc_signed(&PredictionTable { rows }), Err(Error::NumericalFailure(_))));
}

fn small_spec(seed: u64, replicates: usize, scenario: ScenarioKind) -> ExperimentSpec {
    ExperimentSpec {
        name: "small".into(),
        scenario,
        methods: vec![Method::CammelNaive, Method::Stwas, Method::Ivw, Method::Otwas],
        replicates,
        seed,
        panel: PanelSpec { n: 80, block_sizes: vec![40, 40, 40], rho: 0.5, analysis_blocks: 2 },
        mediation: Default::default(),
        l_max: 3,
    }
}

fn custom(missing_frac: f64) -> ScenarioKind {
    ScenarioKind::Custom(ScenarioConfig {
        k: 4,
        n_causal: 1,
        missing_frac,
        window_width: 10,
        ..Default::default()
    })
}

#[test]
fn aggregates_are_recomputable_from_rows() {
    let report = run_experiment(&small_spec(41, 4, custom(0.0))).unwrap();
    assert_eq!(report.rows.len(), 16);
    for agg in report.aggregates() {
        let v: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.method == agg.method && r.auprc.is_finite())
            .map(|r| r.auprc)
            .collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        assert_eq!(agg.n, v.len());
        assert!((agg.mean - m).abs() < 1e-12 && (agg.sd - sd).abs() < 1e-12);
    }
}

#[test]
fn experiments_are_deterministic() {
    let spec = small_spec(42, 1, custom(0.0));
    let a = run_experiment(&spec).unwrap();
    let b = run_experiment(&spec).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = run_experiment(&small_spec(43, 1, custom(0.0))).unwrap();
    assert_ne!(a.rows, c.rows);
}

#[test]
fn failed_replicates_score_nan_without_aborting() {
    // half the genes are hidden, so some replicates lose their only causal gene
    let report = run_experiment(&small_spec(44, 8, custom(0.5))).unwrap();
    assert_eq!(report.rows.len(), 32);
    let nan = report.rows.iter().filter(|r| r.auprc.is_nan()).count();
    let finite = report.rows.len() - nan;
    assert!(nan > 0 && finite > 0, "{nan} NaN rows, {finite} finite");
    for agg in report.aggregates() {
        assert!(agg.n < 8 && agg.mean.is_finite());
    }
}

#[test]
fn invalid_experiments_are_rejected() {
    assert!(run_experiment(&small_spec(45, 0, custom(0.0))).is_err());
    let mut spec = small_spec(45, 1, custom(0.0));
    spec.methods.clear();
    assert!(run_experiment(&spec).is_err());
    spec = small_spec(45, 1, custom(0.0));
    spec.panel.analysis_blocks = 3;
    assert!(run_experiment(&spec).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auprc_is_a_probability_and_order_free(
        scores in proptest::collection::vec(0.0f64..1.0, 3..20),
        causal_bits in any::<u32>(),
        sign_bits in any::<u32>(),
        rot in 0usize..20,
    ) {
        let rows: Vec<_> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let causal = i == 0 || causal_bits & (1 << i) != 0;
                row(i, s, if sign_bits & (1 << i) != 0 { -1 } else { 1 }, causal, 1)
            })
            .collect();
        let a = auprc_signed(&PredictionTable { rows: rows.clone() }).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let mut shuffled = rows.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        prop_assert_eq!(a, auprc_signed(&PredictionTable { rows: shuffled }).unwrap());
    }

    #[test]
    fn correct_signs_on_top_give_one(n_pos in 1usize..6, n_neg in 0usize..10) {
        let rows: Vec<_> = (0..n_pos + n_neg)
            .map(|i| row(i, (n_pos + n_neg - i) as f64, 1, i < n_pos, 1))
            .collect();
        prop_assert_eq!(auprc_signed(&PredictionTable { rows }).unwrap(), 1.0);
    }
}
