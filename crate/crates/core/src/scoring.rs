//! Pairwise score production: a pluggable 1-vs-1 scorer with a minimal
//! Smith-Waterman implementation, batch all-pairs scoring, and a seeded
//! generator of labeled synthetic works.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{strip_comments, Label, ScoreMatrix, TrackRef, WorkManifest};

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentParams {
    pub match_bonus: f64,
    pub mismatch_penalty: f64,
    pub gap_penalty: f64,
    /// Cross-similarity values at or above this count as matches.
    pub binarization_threshold: f64,
}

impl Default for AlignmentParams {
    fn default() -> Self {
        AlignmentParams {
            match_bonus: 1.0,
            mismatch_penalty: 1.0,
            gap_penalty: 0.5,
            binarization_threshold: 0.75,
        }
    }
}

impl AlignmentParams {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.match_bonus,
            self.mismatch_penalty,
            self.gap_penalty,
            self.binarization_threshold,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("alignment", "all parameters must be finite"));
        }
        if self.match_bonus <= 0.0 {
            return Err(Error::invalid("alignment.match_bonus", "must be > 0"));
        }
        if self.mismatch_penalty < 0.0 || self.gap_penalty < 0.0 {
            return Err(Error::invalid("alignment", "penalties must be >= 0"));
        }
        Ok(())
    }
}

/// Beat-synchronous descriptor frames of one track, each of unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub track_id: String,
    frames: Vec<Vec<f64>>,
}

impl FeatureSequence {
    /// Accepts frames that already have unit norm and a shared dimension.
    pub fn new(track_id: impl Into<String>, frames: Vec<Vec<f64>>) -> Result<Self> {
        let track_id = track_id.into();
        let dim = frames.first().map_or(0, Vec::len);
        for (t, frame) in frames.iter().enumerate() {
            if frame.len() != dim {
                return Err(Error::DimensionMismatch(dim, frame.len()));
            }
            let norm = frame.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::invalid(
                    "features",
                    format!("frame {t} of {track_id:?} has norm {norm}, expected 1"),
                ));
            }
        }
        Ok(FeatureSequence { track_id, frames })
    }

    /// Scales every frame to unit norm; all-zero frames are rejected.
    pub fn normalized(track_id: impl Into<String>, mut frames: Vec<Vec<f64>>) -> Result<Self> {
        let track_id = track_id.into();
        for (t, frame) in frames.iter_mut().enumerate() {
            let norm = frame.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::invalid(
                    "features",
                    format!("frame {t} of {track_id:?} cannot be normalized"),
                ));
            }
            frame.iter_mut().for_each(|v| *v /= norm);
        }
        Self::new(track_id, frames)
    }

    /// Reads one frame per CSV row (no header) and normalizes it.
    pub fn load(track_id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let body = strip_comments(&text);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let mut frames = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::parse(path.display().to_string(), e))?;
            let frame = rec
                .iter()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path.display().to_string(), e))?;
            frames.push(frame);
        }
        Self::normalized(track_id, frames)
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }
}

/// Any 1-vs-1 similarity measure that yields a non-negative raw score.
pub trait PairwiseScorer: Sync {
    fn score(&self, a: &FeatureSequence, b: &FeatureSequence) -> Result<f64>;
}

/// Smith-Waterman over the binarized cross-similarity matrix.
#[derive(Debug, Clone, Copy, Default)]
pub struct SmithWaterman(pub AlignmentParams);

impl PairwiseScorer for SmithWaterman {
    fn score(&self, a: &FeatureSequence, b: &FeatureSequence) -> Result<f64> {
        score_pair_alignment(a, b, &self.0)
    }
}

/// Binarized cross-similarity: `true` where the frame dot product reaches
/// the threshold.
pub fn binary_cross_similarity(a: &FeatureSequence, b: &FeatureSequence, threshold: f64) -> Vec<Vec<bool>> {
    a.frames
        .iter()
        .map(|fa| {
            b.frames
                .iter()
                .map(|fb| fa.iter().zip(fb).map(|(x, y)| x * y).sum::<f64>() >= threshold)
                .collect()
        })
        .collect()
}

/// Maximum local-alignment score, floored at 0.
pub fn score_pair_alignment(a: &FeatureSequence, b: &FeatureSequence, params: &AlignmentParams) -> Result<f64> {
    params.validate()?;
    for s in [a, b] {
        if s.is_empty() {
            return Err(Error::EmptySequence(s.track_id.clone()));
        }
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let cross = binary_cross_similarity(a, b, params.binarization_threshold);
    let cols = b.len();
    let mut prev = vec![0.0f64; cols + 1];
    let mut cur = vec![0.0f64; cols + 1];
    let mut best = 0.0f64;
    for row in &cross {
        cur[0] = 0.0;
        for j in 1..=cols {
            let diag = prev[j - 1]
                + if row[j - 1] {
                    params.match_bonus
                } else {
                    -params.mismatch_penalty
                };
            let up = prev[j] - params.gap_penalty;
            let left = cur[j - 1] - params.gap_penalty;
            let h = diag.max(up).max(left).max(0.0);
            cur[j] = h;
            best = best.max(h);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(best)
}

/// Number of distinct unordered pairs among `n` candidates.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Scores every unordered pair with `score(i, j)`, `i < j`, in parallel.
/// Results are keyed by pair, so the matrix does not depend on scheduling.
pub fn score_all_pairs_with<F>(track_ids: Vec<String>, score: F) -> Result<ScoreMatrix>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    let n = track_ids.len();
    let upper: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| score(i, j))
        .collect::<Result<_>>()?;
    ScoreMatrix::from_upper_triangle(track_ids, &upper)
}

pub fn score_all_pairs(
    manifest: &WorkManifest,
    features: &HashMap<String, FeatureSequence>,
    scorer: &dyn PairwiseScorer,
) -> Result<ScoreMatrix> {
    let seqs: Vec<&FeatureSequence> = manifest
        .candidates
        .iter()
        .map(|t| features.get(&t.id).ok_or_else(|| Error::MissingFeatures(t.id.clone())))
        .collect::<Result<_>>()?;
    score_all_pairs_with(manifest.track_ids(), |i, j| scorer.score(seqs[i], seqs[j]))
}

/// Loads `<dir>/<track_id>.csv` for every candidate.
pub fn load_features_dir(manifest: &WorkManifest, dir: impl AsRef<Path>) -> Result<HashMap<String, FeatureSequence>> {
    let dir = dir.as_ref();
    manifest
        .candidates
        .iter()
        .map(|t| {
            let path = dir.join(format!("{}.csv", t.id));
            if !path.exists() {
                return Err(Error::MissingFeatures(t.id.clone()));
            }
            Ok((t.id.clone(), FeatureSequence::load(t.id.clone(), path)?))
        })
        .collect()
}

/// Parameters of a synthetic labeled work.
///
/// Positives sit on a latent style line `[0, latent_span]` with the
/// reference at 0; two positives score `peak_score · exp(−|Δx| / decay_scale)`
/// plus noise. Every pair involving a negative is drawn from a normal
/// distribution around `negative_center`, truncated at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub work_id: Option<String>,
    pub n_candidates: usize,
    pub positive_fraction: f64,
    pub latent_span: f64,
    pub decay_scale: f64,
    pub peak_score: f64,
    pub negative_center: f64,
    pub negative_spread: f64,
    pub noise_spread: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            work_id: None,
            n_candidates: 200,
            positive_fraction: 0.3,
            latent_span: 4.0,
            decay_scale: 1.0,
            peak_score: 12.0,
            negative_center: 2.0,
            negative_spread: 0.5,
            noise_spread: 0.3,
            rng_seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_candidates < 2 {
            return Err(Error::invalid("synthetic.n_candidates", "must be >= 2"));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction <= 1.0) {
            return Err(Error::invalid("synthetic.positive_fraction", "must lie in (0, 1]"));
        }
        for (name, v) in [
            ("latent_span", self.latent_span),
            ("decay_scale", self.decay_scale),
            ("peak_score", self.peak_score),
            ("negative_spread", self.negative_spread),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("synthetic.{name}"), "must be finite and > 0"));
            }
        }
        if !self.negative_center.is_finite() {
            return Err(Error::invalid("synthetic.negative_center", "must be finite"));
        }
        if !(self.noise_spread.is_finite() && self.noise_spread >= 0.0) {
            return Err(Error::invalid("synthetic.noise_spread", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn n_positives(&self) -> usize {
        ((self.positive_fraction * self.n_candidates as f64).round() as usize).clamp(1, self.n_candidates)
    }

    pub fn resolved_work_id(&self) -> String {
        self.work_id
            .clone()
            .unwrap_or_else(|| format!("synth-{}", self.rng_seed))
    }
}

/// Draws from `N(center, spread)` conditioned on being `>= 0`.
pub(crate) fn truncated_normal(rng: &mut impl Rng, normal: &Normal<f64>) -> f64 {
    loop {
        let v = normal.sample(rng);
        if v >= 0.0 {
            return v;
        }
    }
}

/// Generates a fully labeled work and its score matrix, reproducible from
/// `rng_seed`. Candidate 0 is the reference.
pub fn generate_synthetic_work(spec: &SyntheticSpec) -> Result<(WorkManifest, ScoreMatrix)> {
    spec.validate()?;
    let n = spec.n_candidates;
    let work_id = spec.resolved_work_id();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);

    let mut others: Vec<usize> = (1..n).collect();
    others.shuffle(&mut rng);
    let mut positive = vec![false; n];
    positive[0] = true;
    for &i in others.iter().take(spec.n_positives() - 1) {
        positive[i] = true;
    }
    let latent: Vec<Option<f64>> = (0..n)
        .map(|i| match (i, positive[i]) {
            (0, _) => Some(0.0),
            (_, true) => Some(rng.random_range(0.0..=spec.latent_span)),
            _ => None,
        })
        .collect();

    let negative = Normal::new(spec.negative_center, spec.negative_spread)
        .map_err(|e| Error::invalid("synthetic.negative_spread", e.to_string()))?;
    let noise = Normal::new(0.0, spec.noise_spread.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid("synthetic.noise_spread", e.to_string()))?;

    let ids: Vec<String> = (0..n).map(|i| format!("{work_id}-t{i:04}")).collect();
    let scores = ScoreMatrix::from_fn(ids.clone(), |i, j| match (latent[i], latent[j]) {
        (Some(xi), Some(xj)) => {
            let base = spec.peak_score * (-(xi - xj).abs() / spec.decay_scale).exp();
            let jitter = noise.sample(&mut rng);
            if spec.noise_spread > 0.0 {
                (base + jitter).max(0.0)
            } else {
                base
            }
        }
        _ => truncated_normal(&mut rng, &negative),
    })?;

    let candidates = ids
        .iter()
        .enumerate()
        .map(|(i, id)| TrackRef::new(id.clone(), format!("{work_id} version {i}"), format!("artist {i}")))
        .collect();
    let labels: BTreeMap<String, Label> = ids
        .iter()
        .zip(&positive)
        .map(|(id, &p)| (id.clone(), if p { Label::Positive } else { Label::Negative }))
        .collect();
    let mut manifest = WorkManifest::new(work_id, &ids[0], candidates, Some(labels))?;
    manifest.latent_x = ids
        .iter()
        .zip(&latent)
        .filter_map(|(id, x)| x.map(|x| (id.clone(), x)))
        .collect();
    Ok((manifest, scores))
}
