//! Implementation-vs-oracle checks. Every oracle here takes a different
//! route to the same number than the code it checks.

use std::collections::BTreeMap;
use std::sync::Arc;

use expsel_core::feature_store::{FeatureDims, Frame, GroundTruthPose, Manifest};
use expsel_core::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// North-west-corner transport between two histograms on sorted, shared
/// bin centres. Optimal in one dimension.
fn greedy_transport(p: &[f64], q: &[f64], centres: &[f64]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut supply, mut demand) = (p[0], q[0]);
    let mut cost = 0.0;
    loop {
        let moved = supply.min(demand);
        cost += moved * (centres[i] - centres[j]).abs();
        supply -= moved;
        demand -= moved;
        if supply <= 1e-15 {
            i += 1;
            if i == p.len() {
                break;
            }
            supply += p[i];
        }
        if demand <= 1e-15 {
            j += 1;
            if j == q.len() {
                break;
            }
            demand += q[j];
        }
    }
    cost
}

fn random_hist(rng: &mut ChaCha8Rng, bins: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..bins).map(|_| rng.random::<f64>()).collect();
    let t: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / t).collect()
}

#[test]
fn emd_equals_greedy_transport() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let w = rng.random_range(0.1..2.0);
        let lo = rng.random_range(-5.0..5.0);
        let centres: Vec<f64> = (0..8).map(|i| lo + (i as f64 + 0.5) * w).collect();
        let p = random_hist(&mut rng, 8);
        let q = random_hist(&mut rng, 8);
        let got = emd_1d(&p, &q, w).unwrap();
        let want = greedy_transport(&p, &q, &centres);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

fn single_neuron_set(samples: &[f32]) -> FeatureSet {
    FeatureSet::new(
        Manifest {
            experience_id: "t".into(),
            backbone_id: "b".into(),
            layer_id: "l".into(),
            frames: vec![Frame {
                frame_id: "0".into(),
                timestamp_s: 0.0,
                pose: GroundTruthPose::FrameIndex { index: 0 },
            }],
        },
        FeatureDims {
            images: 1,
            neurons: 1,
            samples_per_image: samples.len(),
            embedding_dim: 1,
        },
        vec![0.0],
        vec![0.0],
        samples.to_vec(),
    )
    .unwrap()
}

/// Shifting every sample by δ < bin width moves the vdna distance by at most δ
/// (plus one bin of quantisation on each side).
#[test]
fn translation_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let base: Vec<f32> = (0..64).map(|_| rng.random_range(2.0f32..8.0)).collect();
        let other: Vec<f32> = (0..64).map(|_| rng.random_range(1.0f32..9.0)).collect();
        let edges = Arc::new(HistogramEdges::from_spans(&[(0.0, 10.0)], 100).unwrap());
        let width = 0.1;
        let delta = rng.random_range(0.0..width) as f32;
        let shifted: Vec<f32> = base.iter().map(|v| v + delta).collect();
        let a = build_vdna(&single_neuron_set(&base), &edges).unwrap();
        let b = build_vdna(&single_neuron_set(&shifted), &edges).unwrap();
        let r = build_vdna(&single_neuron_set(&other), &edges).unwrap();
        let d_ab = vdna_distance(&a, &b).unwrap().aggregate;
        // quantisation on a grid of width w can move each sample by < w
        assert!(d_ab <= delta as f64 + width + 1e-12, "{d_ab} > {delta}");
        let change = (vdna_distance(&a, &r).unwrap().aggregate - vdna_distance(&b, &r).unwrap().aggregate).abs();
        assert!(change <= d_ab + 1e-12);
    }
}

fn embedding_set(id: &str, rows: &[Vec<f32>]) -> FeatureSet {
    let n = rows.len();
    let d = rows[0].len();
    FeatureSet::new(
        Manifest {
            experience_id: id.into(),
            backbone_id: "b".into(),
            layer_id: "l".into(),
            frames: (0..n)
                .map(|i| Frame {
                    frame_id: i.to_string(),
                    timestamp_s: i as f64,
                    pose: GroundTruthPose::FrameIndex { index: i as u64 },
                })
                .collect(),
        },
        FeatureDims {
            images: n,
            neurons: 1,
            samples_per_image: 1,
            embedding_dim: d,
        },
        vec![0.0; n],
        rows.concat(),
        vec![0.0; n],
    )
    .unwrap()
}

#[test]
fn difference_matrix_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let rows = |rng: &mut ChaCha8Rng, n| -> Vec<Vec<f32>> {
        (0..n).map(|_| (0..6).map(|_| rng.random_range(-4.0f32..4.0)).collect()).collect()
    };
    let q = rows(&mut rng, 5);
    let r1 = rows(&mut rng, 3);
    let r2 = rows(&mut rng, 4);
    let dm = difference_matrix(
        &embedding_set("q", &q),
        &[&embedding_set("a", &r1), &embedding_set("b", &r2)],
    )
    .unwrap();
    let refs: Vec<&Vec<f32>> = r1.iter().chain(&r2).collect();
    assert_eq!((dm.rows(), dm.cols()), (5, 7));
    for (i, qv) in q.iter().enumerate() {
        for (j, rv) in refs.iter().enumerate() {
            let mut s = 0.0f64;
            for k in 0..6 {
                let d = qv[k] as f64 - rv[k] as f64;
                s += d * d;
            }
            assert!((dm.get(i, j) - s.sqrt()).abs() < 1e-12);
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn random_baseline_matches_enumeration() {
    let recalls = [100.0, 50.0, 0.0];
    let map: BTreeMap<String, f64> = recalls.iter().enumerate().map(|(i, r)| (format!("e{i}"), *r)).collect();
    let perms = permutations(3);
    assert_eq!(perms.len(), 6);
    let mut total = 0.0;
    for p in &perms {
        let slot_sum: f64 = (0..3).map(|k| (recalls[k] - recalls[p[k]]).abs()).sum();
        total += slot_sum / 3.0;
    }
    let expected = total / 6.0;
    assert!((random_expected_error(&map).unwrap() - expected).abs() < 1e-12);
    // by hand: slot sums 0, 100, 100, 200, 200, 200 over 3 slots and 6 orderings
    assert!((expected - 800.0 / 18.0).abs() < 1e-12);
}

#[test]
fn psd_sqrt_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for rank in [16usize, 9, 3] {
        let l = DMatrix::from_fn(16, rank, |_, _| rng.random_range(-1.0..1.0));
        let a = &l * l.transpose();
        let s = psd_sqrt(&a).unwrap();
        let rel = (&s * &s - &a).norm() / a.norm();
        assert!(rel < 1e-8, "rank {rank}: {rel}");
    }
}

#[test]
fn gt_ranking_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..100 {
        let n = rng.random_range(2..7);
        let map: BTreeMap<String, f64> = (0..n)
            .map(|i| (format!("x{i}"), (rng.random_range(0..5) * 20) as f64))
            .collect();
        let mut oracle: Vec<(&String, &f64)> = map.iter().collect();
        // insertion sort, descending by recall then ascending by id
        for i in 1..oracle.len() {
            let mut j = i;
            while j > 0 {
                let (a, b) = (oracle[j - 1], oracle[j]);
                let out_of_order = a.1 < b.1 || (a.1 == b.1 && a.0 > b.0);
                if !out_of_order {
                    break;
                }
                oracle.swap(j - 1, j);
                j -= 1;
            }
        }
        let ranking = gt_ranking("q", &map).unwrap();
        let got: Vec<&str> = ranking.ids().collect();
        let want: Vec<&str> = oracle.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(got, want);
    }
}
