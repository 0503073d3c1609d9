mod common;

use std::collections::BTreeMap;

use common::*;
use covergraph_core::evaluation::{candidate_thresholds, rank_of};
use covergraph_core::hierarchy::{ensemble_score, TreeNode};
use covergraph_core::model::parse_score_matrix;
use covergraph_core::scoring::score_all_pairs_with;
use covergraph_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

// ---------- pairwise scoring ----------

fn one_hot_sequence(id: &str, symbols: &[usize]) -> FeatureSequence {
    let frames = symbols
        .iter()
        .map(|&s| {
            let mut f = vec![0.0; 3];
            f[s] = 1.0;
            f
        })
        .collect();
    FeatureSequence::new(id, frames).unwrap()
}

/// Best local alignment by enumerating every alignment path from every
/// start cell: diagonal steps score match or mismatch, steps along one
/// sequence pay the gap penalty.
fn brute_force_alignment(a: &[usize], b: &[usize], p: &AlignmentParams) -> f64 {
    fn walk(a: &[usize], b: &[usize], i: usize, j: usize, acc: f64, p: &AlignmentParams, best: &mut f64) {
        *best = best.max(acc);
        if i < a.len() && j < b.len() {
            let step = if a[i] == b[j] { p.match_bonus } else { -p.mismatch_penalty };
            walk(a, b, i + 1, j + 1, acc + step, p, best);
        }
        // a gap only helps between aligned cells
        if acc > 0.0 {
            if i < a.len() {
                walk(a, b, i + 1, j, acc - p.gap_penalty, p, best);
            }
            if j < b.len() {
                walk(a, b, i, j + 1, acc - p.gap_penalty, p, best);
            }
        }
    }
    let mut best = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            walk(a, b, i, j, 0.0, p, &mut best);
        }
    }
    best
}

#[test]
fn alignment_matches_brute_force_on_five_frames() {
    let p = AlignmentParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let a: Vec<usize> = (0..5).map(|_| rand::Rng::random_range(&mut rng, 0..3)).collect();
        let b: Vec<usize> = (0..5).map(|_| rand::Rng::random_range(&mut rng, 0..3)).collect();
        let got = score_pair_alignment(&one_hot_sequence("a", &a), &one_hot_sequence("b", &b), &p).unwrap();
        assert_eq!(got, brute_force_alignment(&a, &b, &p), "{a:?} vs {b:?}");
    }
}

proptest! {
    #[test]
    fn alignment_symmetric_and_bounded(
        a in prop::collection::vec(0usize..3, 1..9),
        b in prop::collection::vec(0usize..3, 1..9),
    ) {
        let p = AlignmentParams::default();
        let (sa, sb) = (one_hot_sequence("a", &a), one_hot_sequence("b", &b));
        let ab = score_pair_alignment(&sa, &sb, &p).unwrap();
        let ba = score_pair_alignment(&sb, &sa, &p).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert!(ab <= a.len().min(b.len()) as f64 * p.match_bonus);
    }

    #[test]
    fn scoring_is_permutation_equivariant(
        seqs in prop::collection::vec(prop::collection::vec(0usize..3, 1..7), 3..7),
        seed in any::<u64>(),
    ) {
        let p = AlignmentParams::default();
        let n = seqs.len();
        let features: Vec<FeatureSequence> =
            seqs.iter().enumerate().map(|(i, s)| one_hot_sequence(&format!("t{i}"), s)).collect();
        let base = score_all_pairs_with(ids(n), |i, j| score_pair_alignment(&features[i], &features[j], &p)).unwrap();

        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let permuted_ids: Vec<String> = order.iter().map(|&i| format!("t{i}")).collect();
        let shuffled = score_all_pairs_with(permuted_ids, |i, j| {
            score_pair_alignment(&features[order[i]], &features[order[j]], &p)
        }).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(shuffled.get(i, j), base.get(order[i], order[j]));
            }
        }
        let via_permuted = base.permuted(&order);
        prop_assert_eq!(via_permuted.track_ids(), shuffled.track_ids());
    }

    #[test]
    fn noiseless_generator_is_monotone_in_latent_gap(seed in 0u64..500) {
        let spec = SyntheticSpec { n_candidates: 40, noise_spread: 0.0, rng_seed: seed, ..SyntheticSpec::default() };
        let (m, s) = generate_synthetic_work(&spec).unwrap();
        let positives: Vec<(usize, f64)> = m
            .candidates
            .iter()
            .enumerate()
            .filter_map(|(i, t)| m.latent_x.get(&t.id).map(|&x| (i, x)))
            .collect();
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for (a, &(i, xi)) in positives.iter().enumerate() {
            for &(j, xj) in &positives[a + 1..] {
                pairs.push(((xi - xj).abs(), s.get(i, j)));
            }
        }
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        for w in pairs.windows(2) {
            prop_assert!(w[1].1 <= w[0].1 + 1e-12);
        }
    }
}

#[test]
fn negative_scores_follow_truncated_normal_mean() {
    let spec = SyntheticSpec {
        n_candidates: 200,
        rng_seed: 9,
        ..SyntheticSpec::default()
    };
    let (m, s) = generate_synthetic_work(&spec).unwrap();
    let neg: Vec<usize> = (0..m.len())
        .filter(|&i| m.label_of(&m.candidates[i].id) == Some(Label::Negative))
        .collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, &i) in neg.iter().enumerate() {
        for &j in &neg[a + 1..] {
            sum += s.get(i, j);
            count += 1;
        }
    }
    // independent Monte Carlo estimate of the truncated mean
    let normal = Normal::new(2.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let draws: Vec<f64> = normal.sample_iter(&mut rng).filter(|v| *v >= 0.0).take(200_000).collect();
    let reference = draws.iter().sum::<f64>() / draws.len() as f64;
    let mean = sum / count as f64;
    assert!((mean - reference).abs() < 0.01, "{mean} vs {reference}");
}

// ---------- distance transform ----------

#[test]
fn logistic_matches_high_precision_values() {
    let p = LogisticParams::default();
    assert_eq!(score_to_distance(4.3, &p), 0.5);
    assert!((score_to_distance(2.0, &p) - LOGISTIC_AT_2).abs() < 1e-12);
    assert!((score_to_distance(8.0, &p) - LOGISTIC_AT_8).abs() < 1e-12);
}

proptest! {
    #[test]
    fn logistic_is_decreasing_and_bounded(a in 0.0f64..40.0, b in 0.0f64..40.0) {
        let p = LogisticParams::default();
        let (da, db) = (score_to_distance(a, &p), score_to_distance(b, &p));
        prop_assert!((0.0..=1.0).contains(&da));
        if a < b {
            prop_assert!(da >= db);
        }
    }
}

// ---------- hierarchy ----------

/// Naive agglomerative clustering over member lists, recomputing every
/// inter-cluster distance from the input at every step. Returns the
/// cophenetic matrix.
fn naive_cophenetic(d: &[Vec<f64>], linkage: Linkage) -> Vec<Vec<f64>> {
    let n = d.len();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut c = vec![vec![0.0; n]; n];
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let vals: Vec<f64> = clusters[a]
                    .iter()
                    .flat_map(|&i| clusters[b].iter().map(move |&j| d[i][j]))
                    .collect();
                let v = match linkage {
                    Linkage::Single => vals.iter().cloned().fold(f64::INFINITY, f64::min),
                    Linkage::Complete => vals.iter().cloned().fold(0.0, f64::max),
                    Linkage::Average => vals.iter().sum::<f64>() / vals.len() as f64,
                };
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        let (h, a, b) = best;
        let merged_b = clusters.remove(b);
        for &i in &clusters[a] {
            for &j in &merged_b {
                c[i][j] = h;
                c[j][i] = h;
            }
        }
        clusters[a].extend(merged_b);
    }
    c
}

const LINKAGES: [Linkage; 3] = [Linkage::Single, Linkage::Complete, Linkage::Average];

#[test]
fn dendrogram_matches_naive_clustering() {
    for seed in 0..200 {
        let d = random_distances(9, 7000 + seed);
        for linkage in LINKAGES {
            let dend = build_dendrogram(&to_matrix(&d), linkage).unwrap();
            let want = naive_cophenetic(&d, linkage);
            let got = dend.cophenetic_matrix();
            assert!(max_abs_diff(&got, &want) < 1e-9, "seed {seed} {linkage:?}");
        }
    }
}

#[test]
fn upgma_hand_example() {
    let d = vec![
        vec![0.0, 0.2, 0.6, 1.0],
        vec![0.2, 0.0, 0.8, 1.0],
        vec![0.6, 0.8, 0.0, 0.4],
        vec![1.0, 1.0, 0.4, 0.0],
    ];
    let dend = build_dendrogram(&to_matrix(&d), Linkage::Average).unwrap();
    let heights: Vec<f64> = dend.merges.iter().map(|m| m.height).collect();
    // {a,b} at 0.2, {c,d} at 0.4, root at mean(0.6, 1.0, 0.8, 1.0) = 0.85
    assert_eq!(heights[..2], [0.2, 0.4]);
    assert!((heights[2] - 0.85).abs() < 1e-15);
    assert_eq!(dend.cophenetic_distance(2, 3), 0.4);
    assert_eq!(dend.cophenetic_distance(0, 3), heights[2]);
}

proptest! {
    #[test]
    fn cophenetic_is_ultrametric(seed in any::<u64>(), n in 2usize..12) {
        let d = random_distances(n, seed);
        for linkage in LINKAGES {
            let dend = build_dendrogram(&to_matrix(&d), linkage).unwrap();
            let c = dend.cophenetic_matrix();
            prop_assert!(is_ultrametric(&c, 0.0));
            if linkage == Linkage::Single {
                prop_assert!(elementwise_le(&c, &d));
            }
        }
    }

    #[test]
    fn cut_matches_cophenetic_relation(seed in any::<u64>(), n in 2usize..12, t in 0.0f64..1.2) {
        let d = random_distances(n, seed);
        let dend = build_dendrogram(&to_matrix(&d), Linkage::Average).unwrap();
        let labels = dend.cut_clusters(t);
        for i in 0..n {
            prop_assert!(labels[i] <= i);
            prop_assert_eq!(labels[labels[i]], labels[i]);
            for j in 0..n {
                prop_assert_eq!(labels[i] == labels[j], i == j || dend.cophenetic_distance(i, j) < t);
            }
        }
    }

    #[test]
    fn tree_roundtrip(seed in any::<u64>(), n in 2usize..10) {
        let d = random_distances(n, seed);
        let dend = build_dendrogram(&to_matrix(&d), Linkage::Average).unwrap();
        let tree = dend.to_tree(&ids(n));
        let json = serde_json::to_string(&tree).unwrap();
        let back: TreeNode = serde_json::from_str(&json).unwrap();
        let rebuilt = Dendrogram::from_tree(&back, Linkage::Average).unwrap();
        prop_assert_eq!(rebuilt.cophenetic_matrix(), dend.cophenetic_matrix());
    }

    #[test]
    fn ensemble_score_in_range(c in -1.0f64..2.0) {
        let s = ensemble_score(c);
        prop_assert!((0.0..=100.0).contains(&s));
    }
}

// ---------- evaluation ----------

fn brute_force_min_errors(scores: &[f64], labels: &[bool]) -> usize {
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.push(f64::INFINITY);
    cuts.iter()
        .map(|&t| {
            scores
                .iter()
                .zip(labels)
                .filter(|&(&s, &l)| (s >= t) != l)
                .count()
        })
        .min()
        .unwrap()
}

proptest! {
    #[test]
    fn optimum_matches_brute_force(
        data in prop::collection::vec((0u32..50, any::<bool>()), 1..40),
    ) {
        let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        let opt = optimal_threshold(&scores, &labels).unwrap();
        prop_assert_eq!(opt.total_errors, brute_force_min_errors(&scores, &labels));
        let at = classify_at(&scores, &labels, opt.threshold).unwrap();
        prop_assert_eq!(at.total_errors, opt.total_errors);
        prop_assert_eq!(candidate_thresholds(&scores).len(), {
            let mut s = scores.clone();
            s.sort_by(f64::total_cmp);
            s.dedup();
            s.len() + 1
        });
    }

    #[test]
    fn optimum_invariant_under_monotone_transform(
        data in prop::collection::vec((0u32..50, any::<bool>()), 1..40),
    ) {
        let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        let warped: Vec<f64> = scores.iter().map(|s| (s / 7.0).exp() * 3.0 + 1.0).collect();
        let a = optimal_threshold(&scores, &labels).unwrap();
        let b = optimal_threshold(&warped, &labels).unwrap();
        prop_assert_eq!(a.total_errors, b.total_errors);
        prop_assert_eq!(a.false_negatives, b.false_negatives);
        prop_assert_eq!(a.false_positives, b.false_positives);
    }

    #[test]
    fn sweep_matches_classify_at(
        data in prop::collection::vec((0u32..30, any::<bool>()), 1..25),
    ) {
        let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        for point in threshold_sweep(&scores, &labels).unwrap() {
            let at = classify_at(&scores, &labels, point.threshold).unwrap();
            prop_assert_eq!(point.false_negatives, at.false_negatives);
            prop_assert_eq!(point.false_positives, at.false_positives);
        }
    }

    #[test]
    fn rank_counts_strictly_higher(scores in prop::collection::vec(0u32..10, 3..20)) {
        let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        for target in 1..s.len() {
            let r = rank_of(&s, 0, target);
            let higher = (1..s.len()).filter(|&i| i != target && s[i] > s[target]).count();
            prop_assert_eq!(r, higher + 1);
        }
    }
}

#[test]
fn retrieval_reference_values() {
    let s = retrieval_stats(&[(1, 5), (2, 5), (4, 5)], &[1, 10]).unwrap();
    assert!((s.mrr - 0.583_333_333_333_333_3).abs() <= 1e-12);
    let ones = retrieval_stats(&[(1, 3); 4], &[1]).unwrap();
    assert_eq!((ones.mean_rank, ones.mrr), (1.0, 1.0));
}

// ---------- serialization ----------

fn small_manifest(n: usize) -> WorkManifest {
    let tracks = ids(n).into_iter().map(|id| TrackRef::new(id.clone(), id, "x")).collect();
    WorkManifest::new("w", "t0", tracks, None).unwrap()
}

proptest! {
    #[test]
    fn score_matrix_roundtrips(values in prop::collection::vec(0.0f64..1e6, 10)) {
        let m = small_manifest(5);
        let s = ScoreMatrix::from_upper_triangle(ids(5), &values).unwrap();
        let mut triplets = Vec::new();
        s.write_triplets(&mut triplets, &["engine=test".into()]).unwrap();
        let back = parse_score_matrix(std::str::from_utf8(&triplets).unwrap(), &m).unwrap();
        prop_assert_eq!(&back, &s);
        let mut dense = Vec::new();
        s.write_dense(&mut dense, &[]).unwrap();
        let back = parse_score_matrix(std::str::from_utf8(&dense).unwrap(), &m).unwrap();
        prop_assert_eq!(&back, &s);
    }

    #[test]
    fn distance_matrix_roundtrips(seed in any::<u64>()) {
        let d = to_matrix(&random_distances(6, seed));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.save(&path, &["k=v".into()]).unwrap();
        let back = DistanceMatrix::load(&path, false).unwrap();
        prop_assert_eq!(back.to_rows(), d.to_rows());
    }

    #[test]
    fn manifest_roundtrips(n in 2usize..20, seed in any::<u64>()) {
        let spec = SyntheticSpec { n_candidates: n, rng_seed: seed, ..SyntheticSpec::default() };
        let (m, _) = generate_synthetic_work(&spec).unwrap();
        let back = WorkManifest::from_json(&m.to_json()).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn labels_survive_manifest_roundtrip() {
    let mut labels = BTreeMap::new();
    labels.insert("t0".to_string(), Label::Positive);
    labels.insert("t1".to_string(), Label::Negative);
    let tracks = ids(3).into_iter().map(|id| TrackRef::new(id.clone(), id, "x")).collect();
    let m = WorkManifest::new("w", "t0", tracks, Some(labels)).unwrap();
    let back = WorkManifest::from_json(&m.to_json()).unwrap();
    assert_eq!(back.label_of("t1"), Some(Label::Negative));
    assert_eq!(back.label_of("t2"), None);
}
