use lowrank_core::attention::{attention, compress_on_vocabulary, mh_attention, softmax_cols, AttentionWeights};
use lowrank_core::compressor::RankSchedule;
use lowrank_core::harness::{fit_loglog_slope, Cell, Provenance, ResultTable};
use lowrank_core::linalg::{
    eps_rank, matrix_with_spectrum, rowspace_distance, singular_values, svd, truncate_to_rank, truncate_to_tolerance,
};
use lowrank_core::{DenseMatrix, Rng, SpectrumSpec};
use proptest::prelude::*;

/// Gaussian matrix, optionally forced to low rank as a product of thin factors.
fn matrix(rows: usize, cols: usize, rank: Option<usize>, seed: u64) -> DenseMatrix {
    let mut rng = Rng::new(seed);
    match rank {
        Some(r) => rng.gaussian_matrix(rows, r, 1.0).matmul(&rng.gaussian_matrix(r, cols, 1.0)),
        None => rng.gaussian_matrix(rows, cols, 1.0),
    }
}

fn shapes() -> impl Strategy<Value = DenseMatrix> {
    (1usize..14, 1usize..14, prop::option::of(1usize..4), any::<u64>())
        .prop_map(|(m, n, r, seed)| matrix(m, n, r, seed))
}

fn gram_gap(q: &DenseMatrix) -> f64 {
    q.tr_matmul(q).sub(&DenseMatrix::identity(q.cols())).max_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn svd_reconstructs_with_orthonormal_factors(a in shapes()) {
        let s = svd(&a).unwrap();
        let scale = a.frobenius_norm().max(1.0);
        prop_assert!(s.reconstruct().sub(&a).max_abs() <= 1e-11 * scale);
        prop_assert!(gram_gap(&s.left_vectors) <= 1e-11);
        prop_assert!(gram_gap(&s.right_vectors) <= 1e-11);
        prop_assert_eq!(s.singular_values.len(), a.rows().min(a.cols()));
        prop_assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.singular_values.iter().all(|&x| x >= 0.0));
        let energy: f64 = s.singular_values.iter().map(|x| x * x).sum();
        let fro2 = a.frobenius_norm().powi(2);
        prop_assert!((energy - fro2).abs() <= 1e-10 * fro2.max(1.0));
    }

    #[test]
    fn singular_values_agree_with_svd_and_transpose(a in shapes()) {
        let s = svd(&a).unwrap().singular_values;
        let only = singular_values(&a).unwrap();
        let tr = singular_values(&a.transpose()).unwrap();
        for ((x, y), z) in s.iter().zip(&only).zip(&tr) {
            prop_assert!((x - y).abs() <= 1e-11 * s[0].max(1.0));
            prop_assert!((x - z).abs() <= 1e-11 * s[0].max(1.0));
        }
    }

    #[test]
    fn truncation_error_is_the_tail_energy(a in shapes(), r in 0usize..14) {
        let r = r.min(a.rows().min(a.cols()));
        let s = singular_values(&a).unwrap();
        let tail: f64 = s[r..].iter().map(|x| x * x).sum::<f64>().sqrt();
        let err = a.sub(&truncate_to_rank(&a, r).unwrap()).frobenius_norm();
        prop_assert!((err - tail).abs() <= 1e-10 * s.first().copied().unwrap_or(1.0).max(1.0));
    }

    #[test]
    fn eps_rank_is_monotone_and_bounded(a in shapes(), e1 in 1e-6f64..1.0, e2 in 1e-6f64..1.0) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let r_lo = eps_rank(&a, lo).unwrap();
        prop_assert!(r_lo >= eps_rank(&a, hi).unwrap());
        prop_assert!(r_lo <= a.rows().min(a.cols()));
        let (t, kept) = truncate_to_tolerance(&a, lo).unwrap();
        prop_assert_eq!(kept, r_lo);
        let s = singular_values(&a).unwrap();
        // Every discarded value is at most eps * sigma_1.
        prop_assert!(a.sub(&t).frobenius_norm() <= lo * s[0] * (s.len() as f64).sqrt() + 1e-10);
    }

    #[test]
    fn planted_rank_is_recovered(m in 4usize..14, n in 4usize..14, r in 1usize..4, seed in any::<u64>()) {
        let a = matrix(m, n, Some(r), seed);
        prop_assert_eq!(eps_rank(&a, 1e-9).unwrap(), r);
    }

    #[test]
    fn rowspace_distance_vanishes_on_own_rows(a in shapes(), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mix = rng.gaussian_matrix(a.rows() + 2, a.rows(), 1.0);
        let d = rowspace_distance(&a, &mix.matmul(&a)).unwrap();
        prop_assert!(d <= 1e-9 * a.frobenius_norm().max(1.0));
        let zero = rowspace_distance(&a, &DenseMatrix::zeros(1, a.cols())).unwrap();
        prop_assert!((zero - singular_values(&a).unwrap()[0]).abs() <= 1e-12 * zero.max(1.0));
    }

    #[test]
    fn softmax_columns_are_distributions(a in shapes(), shift in -50.0f64..50.0) {
        let p = softmax_cols(&a);
        for j in 0..a.cols() {
            let col = p.column(j);
            prop_assert!(col.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((col.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let shifted = softmax_cols(&a.map(|x| x + shift));
        prop_assert!(shifted.sub(&p).max_abs() <= 1e-12);
    }

    #[test]
    fn one_head_multihead_matches_single(d in 1usize..10, l in 1usize..12, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let w = AttentionWeights::random(d, 1, 1.0, 1.0, &mut rng).unwrap();
        let u = rng.gaussian_matrix(d, l, 1.0);
        let gap = attention(&u, &w).unwrap().sub(&mh_attention(&u, &w).unwrap()).max_abs();
        prop_assert!(gap <= 1e-12);
    }

    #[test]
    fn vocabulary_compression_is_norm_stable(
        d in 2usize..12, heads_pow in 0u32..3, dt in 1usize..12, rate in 0.05f64..1.0, seed in any::<u64>()
    ) {
        let heads = 1usize << heads_pow;
        let d = d.div_ceil(heads) * heads;
        let dt = dt.min(d - 1);
        let mut rng = Rng::new(seed);
        let xi = matrix_with_spectrum(d, 2 * d, &SpectrumSpec::exponential(rate, d).unwrap(), &mut rng).unwrap();
        let w = AttentionWeights::random(d, heads, 1.0, 1.0, &mut rng).unwrap();
        let c = compress_on_vocabulary(&w, &xi, dt).unwrap();
        prop_assert!(c.stability().unwrap().holds(1e-9));
        prop_assert!(c.realized_ranks().unwrap().iter().all(|&r| r <= dt));
    }

    #[test]
    fn rank_schedule_is_monotone(d0 in 0.1f64..20.0, alpha in 0.0f64..2.0, i in 0usize..200) {
        let s = RankSchedule::new(d0, alpha).unwrap();
        prop_assert!(s.rank_at(i) <= s.rank_at(i + 1));
        prop_assert_eq!(s.rank_at(0), (d0.ceil() as usize).max(1));
        prop_assert!((1..=16).contains(&s.rank_clamped(i, 16)));
    }

    #[test]
    fn loglog_fit_recovers_power_laws(slope in -3.0f64..3.0, c in 0.01f64..100.0, n in 3usize..20) {
        let xs: Vec<f64> = (1..=n).map(|i| i as f64 * 1.7).collect();
        let ys: Vec<f64> = xs.iter().map(|x| c * x.powf(slope)).collect();
        let fit = fit_loglog_slope(&xs, &ys).unwrap();
        prop_assert!((fit.slope - slope).abs() <= 1e-9);
        prop_assert!((fit.intercept - c.ln()).abs() <= 1e-9);
    }

    #[test]
    fn csv_round_trips_any_cells(
        rows in prop::collection::vec(
            (prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL, "[ -~]{0,12}"),
            0..8,
        ),
        seed in any::<u64>(),
    ) {
        let prov = Provenance {
            experiment: "prop".into(),
            table: "prop".into(),
            config_hash: "00".into(),
            seed,
            version: "1".into(),
        };
        let mut t = ResultTable::new(prov, &["value", "label"]).unwrap();
        for (v, s) in &rows {
            t.push(vec![Cell::from(*v), Cell::from(s.as_str())]).unwrap();
        }
        let text = t.to_csv();
        let back = ResultTable::parse(&text).unwrap();
        prop_assert_eq!(back.to_csv(), text);
        prop_assert_eq!(back.provenance.seed, seed);
        for (row, (v, s)) in back.rows().iter().zip(&rows) {
            prop_assert_eq!(row[0].as_f64().unwrap().to_bits(), v.to_bits());
            prop_assert_eq!(row[1].as_text().unwrap(), s.as_str());
        }
    }
}
