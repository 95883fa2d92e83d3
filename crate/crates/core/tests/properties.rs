use std::collections::BTreeMap;
use std::sync::Arc;

use expsel_core::feature_store::{FeatureDims, Frame, GroundTruthPose, Manifest};
use expsel_core::*;
use nalgebra::{DMatrix, DVector};
use proptest::collection::vec;
use proptest::prelude::*;

fn normalized(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

fn histogram(bins: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(0.001f64..1.0, bins).prop_map(|v| normalized(&v))
}

#[allow(clippy::too_many_arguments)]
fn feature_set(
    id: &str,
    n: usize,
    c: usize,
    s: usize,
    d: usize,
    acts: Vec<f32>,
    emb: Vec<f32>,
    pix: Vec<f32>,
) -> FeatureSet {
    let frames = (0..n)
        .map(|i| Frame {
            frame_id: format!("{id}{i}"),
            timestamp_s: i as f64 * 0.25,
            pose: GroundTruthPose::FrameIndex { index: i as u64 },
        })
        .collect();
    FeatureSet::new(
        Manifest {
            experience_id: id.into(),
            backbone_id: "bb".into(),
            layer_id: "last".into(),
            frames,
        },
        FeatureDims {
            images: n,
            neurons: c,
            samples_per_image: s,
            embedding_dim: d,
        },
        pix,
        emb,
        acts,
    )
    .unwrap()
}

prop_compose! {
    fn any_feature_set()(n in 1usize..6, c in 1usize..4, s in 1usize..4, d in 1usize..4)
        (acts in vec(-50.0f32..50.0, n * c * s),
         emb in vec(-10.0f32..10.0, n * d),
         pix in vec(0.0f32..=255.0, n),
         n in Just(n), c in Just(c), s in Just(s), d in Just(d)) -> FeatureSet {
        feature_set("e", n, c, s, d, acts, emb, pix)
    }
}

proptest! {
    #[test]
    fn fex_round_trip_is_byte_identical(fs in any_feature_set()) {
        let bytes = fs.to_fex_bytes();
        let back = FeatureSet::from_fex_bytes(&bytes, fs.manifest()).unwrap();
        prop_assert_eq!(back.to_fex_bytes(), bytes);
        prop_assert_eq!(back, fs);
    }

    #[test]
    fn warmup_idempotent(fs in any_feature_set(), k in 1usize..8, secs in 0.1f64..2.0) {
        for policy in [WarmupPolicy::FirstKFrames(k), WarmupPolicy::FirstSeconds(secs)] {
            let once = select_warmup(&fs, policy).unwrap().set;
            let twice = select_warmup(&once, policy).unwrap().set;
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn gps_origin_maps_to_zero(lat in -90.0f64..=90.0, lon in -180.0f64..=180.0) {
        let o = GpsCoord::new(lat, lon);
        let p = gps_to_local(o, o);
        prop_assert_eq!(p.x_m, 0.0);
        prop_assert_eq!(p.y_m, 0.0);
    }

    #[test]
    fn emd_is_a_metric(p in histogram(8), q in histogram(8), r in histogram(8), w in 0.01f64..3.0) {
        let pq = emd_1d(&p, &q, w).unwrap();
        let qp = emd_1d(&q, &p, w).unwrap();
        let pr = emd_1d(&p, &r, w).unwrap();
        let rq = emd_1d(&r, &q, w).unwrap();
        prop_assert_eq!(pq, qp);
        prop_assert!(pq >= 0.0);
        prop_assert_eq!(emd_1d(&p, &p, w).unwrap(), 0.0);
        prop_assert!(pq <= pr + rq + 1e-12);
    }

    #[test]
    fn vdna_distance_symmetric(a in any_feature_set(), seed in any::<u64>()) {
        // second set with the same shape, different values
        let dims = a.dims();
        let shifted: Vec<f32> = (0..dims.images * dims.activations_per_image())
            .map(|i| ((i as u64).wrapping_mul(seed | 1) % 97) as f32 - 40.0)
            .collect();
        let b = feature_set("f", dims.images, dims.neurons, dims.samples_per_image, dims.embedding_dim,
            shifted, a.embeddings().to_vec(), a.pixel_means().to_vec());
        let edges = Arc::new(compute_edges(&[&a, &b], &HistogramConfig { bin_count: 16, margin_fraction: 0.05 }).unwrap());
        let va = build_vdna(&a, &edges).unwrap();
        let vb = build_vdna(&b, &edges).unwrap();
        let ab = vdna_distance(&va, &vb).unwrap();
        let ba = vdna_distance(&vb, &va).unwrap();
        prop_assert_eq!(ab.aggregate, ba.aggregate);
        prop_assert!(ab.aggregate >= 0.0);
        prop_assert_eq!(vdna_distance(&va, &va).unwrap().aggregate, 0.0);
    }

    #[test]
    fn pixel_distance_pseudometric(a in 0.0f64..255.0, b in 0.0f64..255.0, c in 0.0f64..255.0) {
        let s = |v| PixelSummary { mean_intensity: v, image_count: 1 };
        prop_assert_eq!(pixel_distance(&s(a), &s(b)), pixel_distance(&s(b), &s(a)));
        prop_assert!(pixel_distance(&s(a), &s(c)) <= pixel_distance(&s(a), &s(b)) + pixel_distance(&s(b), &s(c)) + 1e-12);
        prop_assert_eq!(pixel_distance(&s(a), &s(a)), 0.0);
    }

    #[test]
    fn random_baseline_ignores_input_labels(recalls in vec(0.0f64..100.0, 2..6), rot in 0usize..6) {
        let m1: BTreeMap<String, f64> = recalls.iter().enumerate().map(|(i, r)| (format!("e{i}"), *r)).collect();
        let n = recalls.len();
        let m2: BTreeMap<String, f64> = recalls.iter().enumerate()
            .map(|(i, r)| (format!("z{}", (i + rot) % n), *r)).collect();
        let a = random_expected_error(&m1).unwrap();
        let b = random_expected_error(&m2).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }
}

fn recall_map(vals: &[f64]) -> BTreeMap<String, f64> {
    vals.iter().enumerate().map(|(i, v)| (format!("x{i}"), *v)).collect()
}

proptest! {
    #[test]
    fn ranking_error_zero_iff_tie_equivalent(
        recalls in vec((0u8..5).prop_map(|v| v as f64 * 10.0), 2..6),
        dists in vec(0.0f64..1.0, 6),
    ) {
        let m = recall_map(&recalls);
        let gt = gt_ranking("q", &m).unwrap();
        let d: BTreeMap<String, f64> = m.keys().zip(&dists).map(|(k, v)| (k.clone(), *v)).collect();
        let pred = predicted_ranking("q", &d).unwrap();
        let err = ranking_error(&gt, &pred).unwrap();
        let pred_recalls: Vec<f64> = pred.ids().map(|id| m[id]).collect();
        let gt_recalls: Vec<f64> = gt.entries.iter().map(|e| e.score).collect();
        prop_assert_eq!(err.mean_penalty == 0.0, pred_recalls == gt_recalls);

        let max_gap = gt_recalls[0] - gt_recalls[gt_recalls.len() - 1];
        prop_assert!(err.mean_penalty <= max_gap + 1e-12);
    }

    #[test]
    fn ranking_error_invariant_to_relabeling(
        recalls in vec(0.0f64..100.0, 2..6),
        dists in vec(0.0f64..1.0, 6),
    ) {
        let ids_a: Vec<String> = (0..recalls.len()).map(|i| format!("a{i}")).collect();
        let ids_b: Vec<String> = (0..recalls.len()).map(|i| format!("{}b", recalls.len() - i)).collect();
        let run = |ids: &[String]| {
            let r: BTreeMap<String, f64> = ids.iter().cloned().zip(recalls.iter().copied()).collect();
            let d: BTreeMap<String, f64> = ids.iter().cloned().zip(dists.iter().copied()).collect();
            ranking_error(&gt_ranking("q", &r).unwrap(), &predicted_ranking("q", &d).unwrap())
                .unwrap()
                .penalties()
        };
        // relabeling can reorder exact ties, which never changes penalties
        prop_assert_eq!(run(&ids_a), run(&ids_b));
    }

    #[test]
    fn fd_symmetric_and_above_mean_gap(
        a in vec(-2.0f64..2.0, 12), b in vec(-2.0f64..2.0, 12),
        ma in vec(-3.0f64..3.0, 3), mb in vec(-3.0f64..3.0, 3),
    ) {
        // Σ = L Lᵀ with L 3×4 so Σ is PSD
        let la = DMatrix::from_row_slice(3, 4, &a);
        let lb = DMatrix::from_row_slice(3, 4, &b);
        let mk = |l: &DMatrix<f64>, m: &[f64]| {
            let mut s = l * l.transpose();
            s = (&s + s.transpose()) * 0.5;
            GaussianSummary::new(5, DVector::from_column_slice(m), s).unwrap()
        };
        let ga = mk(&la, &ma);
        let gb = mk(&lb, &mb);
        let ab = frechet_distance(&ga, &gb).unwrap();
        let ba = frechet_distance(&gb, &ga).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-8, "{} vs {}", ab, ba);
        let gap = (ga.mean() - gb.mean()).norm();
        prop_assert!(ab >= gap);
    }
}

/// Duplicating the matched reference column never changes Recall@1.
#[test]
fn duplicate_column_keeps_recall() {
    let ids = |e: &str, n: usize| -> Vec<FrameRef> {
        (0..n).map(|i| FrameRef { experience_id: e.into(), frame_index: i }).collect()
    };
    let values = vec![0.3, 0.1, 0.5, 0.2, 0.9, 0.4, 0.7, 0.6, 0.05];
    let dm = DifferenceMatrix::new(ids("q", 3), ids("r", 3), values.clone()).unwrap();
    let q = feature_set("q", 3, 1, 1, 1, vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]);
    let r = feature_set("r", 4, 1, 1, 1, vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]);
    let poses = PoseIndex::from_sources(&[&q, &r]);
    let m = GroundTruthMatcher::FrameTolerance { max_frames: 0 };
    let base = recall_at_1(&dm, &m, &poses).unwrap();

    // append a copy of row 0's winning column (col 1) as column 3
    let mut ext_ids = ids("r", 3);
    ext_ids.push(FrameRef { experience_id: "r".into(), frame_index: 3 });
    let mut ext = Vec::new();
    for row in values.chunks(3) {
        ext.extend_from_slice(row);
        ext.push(row[1]);
    }
    let dm2 = DifferenceMatrix::new(ids("q", 3), ext_ids, ext).unwrap();
    let after = recall_at_1(&dm2, &m, &poses).unwrap();
    assert_eq!(base.recall_at_1, after.recall_at_1);
    assert_eq!(base.matches[0].matched, after.matches[0].matched);
}

/// A correct single-experience match stays correct in the composite when the
/// added columns are strictly farther for that row.
#[test]
fn composite_keeps_correct_match() {
    let q = feature_set("q", 2, 1, 1, 2, vec![0.0; 2], vec![0.0, 0.0, 10.0, 10.0], vec![0.0; 2]);
    let a = feature_set("a", 2, 1, 1, 2, vec![0.0; 2], vec![0.1, 0.0, 10.0, 10.2], vec![0.0; 2]);
    let b = feature_set("b", 2, 1, 1, 2, vec![0.0; 2], vec![3.0, 3.0, 20.0, 20.0], vec![0.0; 2]);
    let m = GroundTruthMatcher::FrameTolerance { max_frames: 0 };
    let single = localise(&q, &[&a], &m).unwrap();
    let composite = localise(&q, &[&b, &a], &m).unwrap();
    assert_eq!(single.recall_at_1, 100.0);
    assert_eq!(composite.recall_at_1, 100.0);
    assert!(composite.matches.iter().all(|x| x.matched.experience_id == "a"));
}
