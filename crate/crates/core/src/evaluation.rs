//! Ranking and classification metrics over labeled works, threshold sweeps,
//! and retrieval statistics for benchmarking pairwise scorers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::collapse::CollapseResult;
use crate::error::{Error, Result};
use crate::hierarchy::FinalScoreTable;
use crate::model::WorkManifest;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeRates {
    /// False negatives over positives.
    pub fn_rate: f64,
    /// False positives over negatives.
    pub fp_rate: f64,
    /// Errors over all evaluated tracks.
    pub error_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub total_errors: usize,
    pub n_positives: usize,
    pub n_negatives: usize,
    pub recall: f64,
    pub false_positive_rate: f64,
    pub relative_rates: RelativeRates,
    /// Single-class labels, or every track falls on one side of the threshold.
    pub degenerate: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ThresholdReport {
    fn from_counts(threshold: f64, fneg: usize, fpos: usize, n_pos: usize, n_neg: usize, degenerate: bool) -> Self {
        ThresholdReport {
            threshold,
            false_negatives: fneg,
            false_positives: fpos,
            total_errors: fneg + fpos,
            n_positives: n_pos,
            n_negatives: n_neg,
            recall: if n_pos == 0 { 1.0 } else { 1.0 - ratio(fneg, n_pos) },
            false_positive_rate: ratio(fpos, n_neg),
            relative_rates: RelativeRates {
                fn_rate: ratio(fneg, n_pos),
                fp_rate: ratio(fpos, n_neg),
                error_rate: ratio(fneg + fpos, n_pos + n_neg),
            },
            degenerate,
        }
    }

    /// One row in the layout of the published ranking/classification tables.
    pub fn table_row(&self) -> TableRow {
        TableRow {
            best_threshold: self.threshold,
            r#fn: self.false_negatives,
            fp: self.false_positives,
            both: self.total_errors,
            fn_rel: self.relative_rates.fn_rate,
            fp_rel: self.relative_rates.fp_rate,
            both_rel: self.relative_rates.error_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub best_threshold: f64,
    pub r#fn: usize,
    pub fp: usize,
    pub both: usize,
    pub fn_rel: f64,
    pub fp_rel: f64,
    pub both_rel: f64,
}

/// Error counts at one candidate threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub errors: usize,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(Error::invalid("scores", "nothing to evaluate"));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid("scores", format!("non-finite score {s}")));
    }
    Ok(())
}

/// Every distinct decision boundary: a sentinel one unit below the lowest
/// score, midpoints between adjacent distinct scores, and a sentinel one
/// unit above the highest, in ascending order.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let Some((&lo, &hi)) = sorted.first().zip(sorted.last()) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(sorted.len() + 1);
    out.push(lo - 1.0);
    out.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out.push(hi + 1.0);
    out
}

/// Full error curve over [`candidate_thresholds`], with `score >= threshold`
/// classified positive.
pub fn threshold_sweep(scores: &[f64], labels: &[bool]) -> Result<Vec<SweepPoint>> {
    check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;

    let thresholds = candidate_thresholds(scores);
    let mut points = Vec::with_capacity(thresholds.len());
    let (mut fneg, mut fpos) = (0usize, n_neg);
    let mut cursor = 0;
    for &t in &thresholds {
        // everything strictly below t is now predicted negative
        while cursor < order.len() && scores[order[cursor]] < t {
            if labels[order[cursor]] {
                fneg += 1;
            } else {
                fpos -= 1;
            }
            cursor += 1;
        }
        points.push(SweepPoint {
            threshold: t,
            false_negatives: fneg,
            false_positives: fpos,
            errors: fneg + fpos,
        });
    }
    Ok(points)
}

/// Error-minimizing threshold; ties go to the highest threshold.
pub fn optimal_threshold(scores: &[f64], labels: &[bool]) -> Result<ThresholdReport> {
    let points = threshold_sweep(scores, labels)?;
    let best = points
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.errors.cmp(&b.errors).then(ib.cmp(ia)))
        .map(|(i, p)| (i, *p))
        .expect("at least two candidate thresholds");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    let at_sentinel = best.0 == 0 || best.0 == points.len() - 1;
    Ok(ThresholdReport::from_counts(
        best.1.threshold,
        best.1.false_negatives,
        best.1.false_positives,
        n_pos,
        n_neg,
        n_pos == 0 || n_neg == 0 || at_sentinel,
    ))
}

pub fn classify_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ThresholdReport> {
    check_inputs(scores, labels)?;
    let (mut fneg, mut fpos, mut n_pos, mut predicted_pos) = (0, 0, 0, 0);
    for (&s, &positive) in scores.iter().zip(labels) {
        let predicted = s >= threshold;
        predicted_pos += predicted as usize;
        n_pos += positive as usize;
        match (positive, predicted) {
            (true, false) => fneg += 1,
            (false, true) => fpos += 1,
            _ => {}
        }
    }
    let n_neg = labels.len() - n_pos;
    let one_sided = predicted_pos == 0 || predicted_pos == labels.len();
    Ok(ThresholdReport::from_counts(
        threshold,
        fneg,
        fpos,
        n_pos,
        n_neg,
        n_pos == 0 || n_neg == 0 || one_sided,
    ))
}

/// Upper median: element `⌊n/2⌋` of the ascending-sorted thresholds.
pub fn universal_threshold(per_work_optimal: &[f64]) -> Result<f64> {
    if per_work_optimal.is_empty() {
        return Err(Error::invalid("thresholds", "need at least one per-work threshold"));
    }
    let mut sorted = per_work_optimal.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[sorted.len() / 2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalStats {
    pub n_queries: usize,
    pub mean_rank: f64,
    pub mrr: f64,
    /// Cutoff `k` → number of queries whose true match ranks within `k`.
    pub recall_at: BTreeMap<usize, usize>,
    /// Largest candidate count among the queries (the recall denominator).
    pub max_candidates: usize,
}

pub const DEFAULT_CUTOFFS: [usize; 2] = [1, 10];

/// Aggregates `(rank of true match, candidate count)` pairs.
pub fn retrieval_stats(queries: &[(usize, usize)], cutoffs: &[usize]) -> Result<RetrievalStats> {
    if queries.is_empty() {
        return Err(Error::invalid("queries", "need at least one query"));
    }
    for &(rank, count) in queries {
        if rank == 0 || rank > count {
            return Err(Error::invalid("rank", format!("rank {rank} outside 1..={count}")));
        }
    }
    let n = queries.len() as f64;
    Ok(RetrievalStats {
        n_queries: queries.len(),
        mean_rank: queries.iter().map(|&(r, _)| r as f64).sum::<f64>() / n,
        mrr: queries.iter().map(|&(r, _)| 1.0 / r as f64).sum::<f64>() / n,
        recall_at: cutoffs
            .iter()
            .map(|&k| (k, queries.iter().filter(|&&(r, _)| r <= k).count()))
            .collect(),
        max_candidates: queries.iter().map(|&(_, c)| c).max().unwrap_or(0),
    })
}

/// Rank of `target` among all candidates other than the query itself:
/// one plus the number of candidates scoring strictly higher.
pub fn rank_of(query_scores: &[f64], query: usize, target: usize) -> usize {
    let t = query_scores[target];
    1 + query_scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| i != query && i != target && s > t)
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub ranking: ThresholdReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ThresholdReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathHop {
    pub depth: usize,
    pub track_id: String,
    pub direct_score: f64,
    pub ensemble_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescuedTrack {
    pub track_id: String,
    pub index: usize,
    pub path: Vec<PathHop>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub work_id: String,
    pub direct: MethodReport,
    pub ensemble: MethodReport,
    pub rescued: Vec<RescuedTrack>,
}

/// Labeled, non-reference tracks of a work: `(indices, labels)`.
pub fn evaluated_tracks(manifest: &WorkManifest) -> Result<(Vec<usize>, Vec<bool>)> {
    if !manifest.has_labels() {
        return Err(Error::NoLabels(manifest.work_id.clone()));
    }
    let reference = manifest.reference_index();
    let mut idx = Vec::new();
    let mut labels = Vec::new();
    for (i, t) in manifest.candidates.iter().enumerate() {
        if i == reference {
            continue;
        }
        if let Some(label) = manifest.label_of(&t.id) {
            idx.push(i);
            labels.push(label.is_positive());
        }
    }
    if idx.is_empty() {
        return Err(Error::NoLabels(manifest.work_id.clone()));
    }
    Ok((idx, labels))
}

/// Path hops from the reference to `target` with both score columns.
pub fn path_hops(table: &FinalScoreTable, collapse: &CollapseResult, target: usize) -> Result<Vec<PathHop>> {
    let reference = table.reference;
    let steps = if target == reference {
        vec![crate::collapse::PathStep { depth: 0, index: reference }]
    } else {
        collapse.trace_path(reference, target)?
    };
    Ok(steps
        .into_iter()
        .map(|s| {
            let row = &table.rows[s.index];
            PathHop {
                depth: s.depth,
                track_id: row.track_id.clone(),
                direct_score: row.direct_score,
                ensemble_score: row.ensemble_score,
            }
        })
        .collect())
}

/// Direct and ensemble columns under the ranking protocol (and the
/// classification protocol when universal thresholds are given), plus the
/// positives rescued by the ensemble with their traced paths.
pub fn compare_direct_vs_ensemble(
    manifest: &WorkManifest,
    table: &FinalScoreTable,
    collapse: &CollapseResult,
    universal: Option<(f64, f64)>,
) -> Result<PairedReport> {
    let (idx, labels) = evaluated_tracks(manifest)?;
    let direct: Vec<f64> = idx.iter().map(|&i| table.rows[i].direct_score).collect();
    let ensemble: Vec<f64> = idx.iter().map(|&i| table.rows[i].ensemble_score).collect();

    let direct_rank = optimal_threshold(&direct, &labels)?;
    let ensemble_rank = optimal_threshold(&ensemble, &labels)?;
    let (direct_cls, ensemble_cls) = match universal {
        Some((td, te)) => (
            Some(classify_at(&direct, &labels, td)?),
            Some(classify_at(&ensemble, &labels, te)?),
        ),
        None => (None, None),
    };

    let mut rescued = Vec::new();
    for (k, &i) in idx.iter().enumerate() {
        if labels[k] && direct[k] < direct_rank.threshold && ensemble[k] >= ensemble_rank.threshold {
            rescued.push(RescuedTrack {
                track_id: table.rows[i].track_id.clone(),
                index: i,
                path: path_hops(table, collapse, i)?,
            });
        }
    }

    Ok(PairedReport {
        work_id: manifest.work_id.clone(),
        direct: MethodReport {
            ranking: direct_rank,
            classification: direct_cls,
        },
        ensemble: MethodReport {
            ranking: ensemble_rank,
            classification: ensemble_cls,
        },
        rescued,
    })
}

/// Per-work ranking reports, the universal thresholds derived from them,
/// and classification reports at those thresholds. Works are reported in
/// ascending id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionReport {
    pub universal_direct: f64,
    pub universal_ensemble: f64,
    pub works: Vec<PairedReport>,
}

pub fn evaluate_collection(works: &[(&WorkManifest, &FinalScoreTable, &CollapseResult)]) -> Result<CollectionReport> {
    if works.is_empty() {
        return Err(Error::NoLabels("no labeled works".into()));
    }
    let mut order: Vec<usize> = (0..works.len()).collect();
    order.sort_by(|&a, &b| works[a].0.work_id.cmp(&works[b].0.work_id));
    let ranking: Vec<PairedReport> = order
        .iter()
        .map(|&w| compare_direct_vs_ensemble(works[w].0, works[w].1, works[w].2, None))
        .collect::<Result<_>>()?;
    let universal_direct =
        universal_threshold(&ranking.iter().map(|r| r.direct.ranking.threshold).collect::<Vec<_>>())?;
    let universal_ensemble =
        universal_threshold(&ranking.iter().map(|r| r.ensemble.ranking.threshold).collect::<Vec<_>>())?;
    let works = order
        .iter()
        .map(|&w| {
            compare_direct_vs_ensemble(
                works[w].0,
                works[w].1,
                works[w].2,
                Some((universal_direct, universal_ensemble)),
            )
        })
        .collect::<Result<_>>()?;
    Ok(CollectionReport {
        universal_direct,
        universal_ensemble,
        works,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive oracle: error count at every threshold in a dense grid
    /// around the scores.
    fn brute_min_errors(scores: &[f64], labels: &[bool]) -> usize {
        let mut grid: Vec<f64> = scores.to_vec();
        grid.extend(scores.iter().map(|s| s + 1e-6));
        grid.push(f64::NEG_INFINITY);
        grid.push(f64::INFINITY);
        grid.iter()
            .map(|&t| {
                scores
                    .iter()
                    .zip(labels)
                    .filter(|(&s, &l)| (s >= t) != l)
                    .count()
            })
            .min()
            .unwrap()
    }

    #[test]
    fn separated_scores() {
        let r = optimal_threshold(&[9.0, 8.0, 2.0, 1.0], &[true, true, false, false]).unwrap();
        assert_eq!(r.total_errors, 0);
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.false_positive_rate, 0.0);
        // ties toward the highest zero-error threshold
        assert_eq!(r.threshold, 5.0);
        assert!(!r.degenerate);
    }

    #[test]
    fn one_mislabeled() {
        let scores = [9.0, 7.0, 5.0, 3.0];
        let labels = [true, true, false, true];
        let r = optimal_threshold(&scores, &labels).unwrap();
        assert_eq!(brute_min_errors(&scores, &labels), 1);
        assert_eq!(r.total_errors, 1);
        assert_eq!(r.total_errors, r.false_negatives + r.false_positives);

        let at6 = classify_at(&scores, &labels, 6.0).unwrap();
        assert_eq!((at6.false_negatives, at6.false_positives), (1, 0));
    }

    #[test]
    fn degenerate_labels() {
        let r = optimal_threshold(&[3.0, 1.0, 2.0], &[true, true, true]).unwrap();
        assert!(r.degenerate);
        assert!(r.threshold < 1.0);
        assert_eq!(r.total_errors, 0);
        let r = optimal_threshold(&[3.0, 1.0], &[false, false]).unwrap();
        assert!(r.degenerate);
        assert!(r.threshold > 3.0);
    }

    #[test]
    fn classify_extremes() {
        let scores = [4.0, 2.0, 8.0];
        let all_pos = [true, true, true];
        assert_eq!(classify_at(&scores, &all_pos, 0.0).unwrap().total_errors, 0);
        let labels = [true, false, true];
        assert_eq!(classify_at(&scores, &labels, 100.0).unwrap().false_negatives, 2);
    }

    #[test]
    fn upper_median() {
        let direct = [12.1, 18.2, 10.1, 6.1, 12.1, 4.0, 10.1, 11.1, 12.2, 15.2];
        let ensemble = [70.7, 85.9, 52.5, 29.3, 70.7, 40.4, 78.8, 98.0, 83.8, 96.0];
        assert_eq!(universal_threshold(&direct).unwrap(), 12.1);
        assert_eq!(universal_threshold(&ensemble).unwrap(), 78.8);
        assert_eq!(universal_threshold(&[5.0]).unwrap(), 5.0);
        assert!(universal_threshold(&[]).is_err());
    }

    #[test]
    fn retrieval() {
        let s = retrieval_stats(&[(1, 159), (2, 159), (4, 159)], &DEFAULT_CUTOFFS).unwrap();
        assert!((s.mrr - 1.75 / 3.0).abs() < 1e-12);
        assert!((s.mean_rank - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.recall_at[&1], 1);
        assert_eq!(s.recall_at[&10], 3);
        let s = retrieval_stats(&vec![(1, 159); 160], &DEFAULT_CUTOFFS).unwrap();
        assert_eq!((s.mean_rank, s.mrr), (1.0, 1.0));
        assert_eq!(s.recall_at[&1], 160);
        assert_eq!(s.max_candidates, 159);
        assert!(retrieval_stats(&[(0, 5)], &DEFAULT_CUTOFFS).is_err());
        assert!(retrieval_stats(&[(6, 5)], &DEFAULT_CUTOFFS).is_err());
    }

    #[test]
    fn rank_excludes_query() {
        let row = [f64::INFINITY, 3.0, 9.0, 5.0];
        assert_eq!(rank_of(&row, 0, 2), 1);
        assert_eq!(rank_of(&row, 0, 3), 2);
        assert_eq!(rank_of(&row, 0, 1), 3);
    }

    #[test]
    fn sweep_monotone_fn() {
        let scores = [0.5, 1.5, 1.5, 3.0, 7.0, 2.0];
        let labels = [false, true, false, true, true, false];
        let pts = threshold_sweep(&scores, &labels).unwrap();
        assert_eq!(pts.len(), 6);
        assert!(pts.windows(2).all(|w| w[0].false_negatives <= w[1].false_negatives));
        assert!(pts.windows(2).all(|w| w[0].false_positives >= w[1].false_positives));
        for p in &pts {
            let c = classify_at(&scores, &labels, p.threshold).unwrap();
            assert_eq!((c.false_negatives, c.false_positives), (p.false_negatives, p.false_positives));
        }
    }

    #[test]
    fn mismatched_lengths() {
        assert!(optimal_threshold(&[1.0], &[true, false]).is_err());
        assert!(optimal_threshold(&[], &[]).is_err());
    }
}
