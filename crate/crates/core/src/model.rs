//! Domain types shared by the whole pipeline: works, candidate tracks, and
//! the score and distance matrices indexed in manifest order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum asymmetry tolerated (and averaged away) when loading scores.
pub const ASYMMETRY_TOLERANCE: f64 = 1e-9;

/// Literal used for diagonal cells of a serialized score matrix.
pub const SELF_SCORE_LITERAL: &str = "self";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackRef {
    pub id: String,
    pub title: String,
    pub artist: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uri: Option<String>,
}

impl TrackRef {
    pub fn new(id: impl Into<String>, title: impl Into<String>, artist: impl Into<String>) -> Self {
        TrackRef {
            id: id.into(),
            title: title.into(),
            artist: artist.into(),
            uri: None,
        }
    }
}

/// Ground-truth label of a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" | "pos" | "+" => Ok(Label::Positive),
            "negative" | "neg" | "-" => Ok(Label::Negative),
            other => Err(Error::invalid("label", format!("unknown label {other:?}"))),
        }
    }
}

/// A work's candidate pool. Candidate order is the canonical matrix index
/// order everywhere downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkManifest {
    pub work_id: String,
    pub reference: TrackRef,
    pub candidates: Vec<TrackRef>,
    pub labels: Option<BTreeMap<String, Label>>,
    /// Latent coordinates of synthetic works, kept for audit only.
    pub latent_x: BTreeMap<String, f64>,
    index: HashMap<String, usize>,
}

impl WorkManifest {
    /// Builds a manifest and enforces every invariant: unique non-empty ids,
    /// the reference present exactly once, at least two candidates, and a
    /// positive reference label whenever labels are given.
    pub fn new(
        work_id: impl Into<String>,
        reference_id: &str,
        candidates: Vec<TrackRef>,
        labels: Option<BTreeMap<String, Label>>,
    ) -> Result<Self> {
        let work_id = work_id.into();
        if work_id.is_empty() {
            return Err(Error::invalid("work_id", "must not be empty"));
        }
        let mut index = HashMap::with_capacity(candidates.len());
        for (i, track) in candidates.iter().enumerate() {
            if track.id.is_empty() {
                return Err(Error::invalid(
                    "candidates.id",
                    format!("empty id at position {i}"),
                ));
            }
            if index.insert(track.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(track.id.clone()));
            }
        }
        let reference = match index.get(reference_id) {
            Some(&i) => candidates[i].clone(),
            None => return Err(Error::ReferenceNotInCandidates(reference_id.to_string())),
        };
        if candidates.len() < 2 {
            return Err(Error::invalid(
                "candidates",
                format!("need at least 2 candidates, got {}", candidates.len()),
            ));
        }
        if let Some(labels) = &labels {
            for id in labels.keys() {
                if !index.contains_key(id) {
                    return Err(Error::UnknownTrack(id.clone()));
                }
            }
            if labels.get(reference_id) != Some(&Label::Positive) {
                return Err(Error::invalid(
                    "labels",
                    format!("reference {reference_id:?} must be labeled positive"),
                ));
            }
        }
        Ok(WorkManifest {
            work_id,
            reference,
            candidates,
            labels,
            latent_x: BTreeMap::new(),
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn reference_index(&self) -> usize {
        self.index[&self.reference.id]
    }

    pub fn track_ids(&self) -> Vec<String> {
        self.candidates.iter().map(|t| t.id.clone()).collect()
    }

    pub fn label_of(&self, id: &str) -> Option<Label> {
        self.labels.as_ref().and_then(|l| l.get(id).copied())
    }

    pub fn has_labels(&self) -> bool {
        self.labels.as_ref().is_some_and(|l| !l.is_empty())
    }

    /// Reads and validates a manifest from its JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ManifestFile = serde_json::from_str(text).map_err(|e| Error::parse("manifest", e))?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        let file = ManifestFile::from(self);
        serde_json::to_string_pretty(&file).expect("manifest serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// On-disk manifest layout.
#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    work_id: String,
    reference_id: String,
    candidates: Vec<CandidateEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CandidateEntry {
    id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    artist: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latent_x: Option<f64>,
}

impl TryFrom<ManifestFile> for WorkManifest {
    type Error = Error;

    fn try_from(file: ManifestFile) -> Result<Self> {
        let mut labels = BTreeMap::new();
        let mut latent = BTreeMap::new();
        let mut candidates = Vec::with_capacity(file.candidates.len());
        for entry in file.candidates {
            if let Some(label) = entry.label {
                labels.insert(entry.id.clone(), label);
            }
            if let Some(x) = entry.latent_x {
                latent.insert(entry.id.clone(), x);
            }
            candidates.push(TrackRef {
                id: entry.id,
                title: entry.title,
                artist: entry.artist,
                uri: entry.uri,
            });
        }
        let labels = (!labels.is_empty()).then_some(labels);
        let mut manifest = WorkManifest::new(file.work_id, &file.reference_id, candidates, labels)?;
        manifest.latent_x = latent;
        Ok(manifest)
    }
}

impl From<&WorkManifest> for ManifestFile {
    fn from(m: &WorkManifest) -> Self {
        ManifestFile {
            work_id: m.work_id.clone(),
            reference_id: m.reference.id.clone(),
            candidates: m
                .candidates
                .iter()
                .map(|t| CandidateEntry {
                    id: t.id.clone(),
                    title: t.title.clone(),
                    artist: t.artist.clone(),
                    uri: t.uri.clone(),
                    label: m.label_of(&t.id),
                    latent_x: m.latent_x.get(&t.id).copied(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub n_pos: usize,
    pub n_neg: usize,
    /// Labeled fraction of the candidate pool.
    pub coverage: f64,
}

pub fn validate_labels(manifest: &WorkManifest) -> LabelSummary {
    let (mut n_pos, mut n_neg) = (0, 0);
    for track in &manifest.candidates {
        match manifest.label_of(&track.id) {
            Some(Label::Positive) => n_pos += 1,
            Some(Label::Negative) => n_neg += 1,
            None => {}
        }
    }
    LabelSummary {
        n_pos,
        n_neg,
        coverage: (n_pos + n_neg) as f64 / manifest.len() as f64,
    }
}

/// Symmetric N×N raw similarity scores. The diagonal holds the self-score
/// sentinel (`+inf`) and is never used as a similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    track_ids: Vec<String>,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub const SELF_SCORE: f64 = f64::INFINITY;

    /// Builds a matrix by evaluating `f(i, j)` once per unordered pair `i < j`.
    pub fn from_fn(track_ids: Vec<String>, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let n = track_ids.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = Self::SELF_SCORE;
            for j in i + 1..n {
                let s = f(i, j);
                check_score(&track_ids, i, j, s)?;
                values[i * n + j] = s;
                values[j * n + i] = s;
            }
        }
        Ok(ScoreMatrix { track_ids, values })
    }

    /// Builds a matrix from the upper triangle in row-major `i < j` order.
    pub fn from_upper_triangle(track_ids: Vec<String>, upper: &[f64]) -> Result<Self> {
        let n = track_ids.len();
        if upper.len() != n * n.saturating_sub(1) / 2 {
            return Err(Error::invalid(
                "scores",
                format!("expected {} pair scores, got {}", n * n.saturating_sub(1) / 2, upper.len()),
            ));
        }
        let mut it = upper.iter();
        Self::from_fn(track_ids, |_, _| *it.next().unwrap())
    }

    pub fn len(&self) -> usize {
        self.track_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.track_ids.is_empty()
    }

    pub fn track_ids(&self) -> &[String] {
        &self.track_ids
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.values[i * n..(i + 1) * n]
    }

    /// Verifies exact symmetry and the range of every off-diagonal entry.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            if self.get(i, i) != Self::SELF_SCORE {
                return Err(Error::invalid("scores", "diagonal must hold the self sentinel"));
            }
            for j in i + 1..n {
                let (a, b) = (self.get(i, j), self.get(j, i));
                if a.to_bits() != b.to_bits() {
                    return Err(Error::Asymmetric {
                        a: self.track_ids[i].clone(),
                        b: self.track_ids[j].clone(),
                        forward: a,
                        backward: b,
                    });
                }
                check_score(&self.track_ids, i, j, a)?;
            }
        }
        Ok(())
    }

    /// Returns the matrix reindexed by `order`, where `order[new] = old`.
    pub fn permuted(&self, order: &[usize]) -> ScoreMatrix {
        let ids = order.iter().map(|&o| self.track_ids[o].clone()).collect();
        ScoreMatrix::from_fn(ids, |i, j| self.get(order[i], order[j])).expect("permutation preserves validity")
    }

    /// Canonical triplet CSV (`id_a,id_b,score`, one row per unordered pair).
    pub fn write_triplets<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let mut out = out;
        write_comments(&mut out, comments)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id_a", "id_b", "score"]).map_err(csv_err)?;
        let n = self.len();
        for i in 0..n {
            for j in i + 1..n {
                w.write_record([
                    self.track_ids[i].as_str(),
                    self.track_ids[j].as_str(),
                    &format_f64(self.get(i, j)),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::parse("csv", e))?;
        Ok(())
    }

    /// Dense CSV: first row and column list ids, diagonal cells read `self`.
    pub fn write_dense<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let mut out = out;
        write_comments(&mut out, comments)?;
        let mut w = csv::Writer::from_writer(out);
        let n = self.len();
        let mut header = vec![String::new()];
        header.extend(self.track_ids.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..n {
            let mut row = vec![self.track_ids[i].clone()];
            row.extend((0..n).map(|j| {
                if i == j {
                    SELF_SCORE_LITERAL.to_string()
                } else {
                    format_f64(self.get(i, j))
                }
            }));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::parse("csv", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_triplets(&mut buf, comments)?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

fn check_score(ids: &[String], i: usize, j: usize, s: f64) -> Result<()> {
    if !s.is_finite() {
        return Err(Error::invalid(
            "score",
            format!("non-finite score for pair ({}, {})", ids[i], ids[j]),
        ));
    }
    if s < 0.0 {
        return Err(Error::NegativeScore {
            a: ids[i].clone(),
            b: ids[j].clone(),
            score: s,
        });
    }
    Ok(())
}

/// Loads a score matrix in either triplet or dense CSV form, indexed in
/// manifest order.
pub fn load_score_matrix(path: impl AsRef<Path>, manifest: &WorkManifest) -> Result<ScoreMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_score_matrix(&text, manifest)
}

pub fn parse_score_matrix(text: &str, manifest: &WorkManifest) -> Result<ScoreMatrix> {
    let body = strip_comments(text);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let rows: Vec<csv::StringRecord> = reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse("score matrix", e))?;
    let header = rows.first().ok_or_else(|| Error::parse("score matrix", "empty file"))?;
    if header.len() == 3 && &header[0] == "id_a" && &header[1] == "id_b" && &header[2] == "score" {
        parse_triplets(&rows[1..], manifest)
    } else {
        parse_dense(&rows, manifest)
    }
}

/// Collects directed observations, then resolves each unordered pair.
struct PairCollector<'a> {
    manifest: &'a WorkManifest,
    seen: Vec<Option<f64>>,
}

impl<'a> PairCollector<'a> {
    fn new(manifest: &'a WorkManifest) -> Self {
        let n = manifest.len();
        PairCollector {
            manifest,
            seen: vec![None; n * n],
        }
    }

    fn resolve(&self, id: &str) -> Result<usize> {
        self.manifest
            .index_of(id)
            .ok_or_else(|| Error::UnknownTrack(id.to_string()))
    }

    fn observe(&mut self, i: usize, j: usize, s: f64) -> Result<()> {
        let n = self.manifest.len();
        let ids = &self.manifest.candidates;
        if !s.is_finite() {
            return Err(Error::invalid(
                "score",
                format!("non-finite score for pair ({}, {})", ids[i].id, ids[j].id),
            ));
        }
        if s < 0.0 {
            return Err(Error::NegativeScore {
                a: ids[i].id.clone(),
                b: ids[j].id.clone(),
                score: s,
            });
        }
        let slot = &mut self.seen[i * n + j];
        if let Some(prev) = *slot {
            if (prev - s).abs() > ASYMMETRY_TOLERANCE {
                return Err(Error::Asymmetric {
                    a: ids[i].id.clone(),
                    b: ids[j].id.clone(),
                    forward: prev,
                    backward: s,
                });
            }
        } else {
            *slot = Some(s);
        }
        Ok(())
    }

    fn finish(self) -> Result<ScoreMatrix> {
        let n = self.manifest.len();
        let ids = self.manifest.track_ids();
        let mut upper = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let value = match (self.seen[i * n + j], self.seen[j * n + i]) {
                    (Some(a), Some(b)) => {
                        if (a - b).abs() > ASYMMETRY_TOLERANCE {
                            return Err(Error::Asymmetric {
                                a: ids[i].clone(),
                                b: ids[j].clone(),
                                forward: a,
                                backward: b,
                            });
                        }
                        if a == b {
                            a
                        } else {
                            0.5 * (a + b)
                        }
                    }
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => return Err(Error::MissingPair(ids[i].clone(), ids[j].clone())),
                };
                upper.push(value);
            }
        }
        ScoreMatrix::from_upper_triangle(ids, &upper)
    }
}

fn parse_score_cell(cell: &str, context: &str) -> Result<Option<f64>> {
    if cell == SELF_SCORE_LITERAL {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|e| Error::parse(context.to_string(), format!("bad score {cell:?}: {e}")))
}

fn parse_triplets(rows: &[csv::StringRecord], manifest: &WorkManifest) -> Result<ScoreMatrix> {
    let mut pairs = PairCollector::new(manifest);
    for (line, row) in rows.iter().enumerate() {
        if row.len() != 3 {
            return Err(Error::parse(
                format!("score triplet row {}", line + 1),
                format!("expected 3 fields, got {}", row.len()),
            ));
        }
        let i = pairs.resolve(&row[0])?;
        let j = pairs.resolve(&row[1])?;
        let Some(s) = parse_score_cell(&row[2], &format!("score triplet row {}", line + 1))? else {
            continue;
        };
        if i == j {
            continue;
        }
        pairs.observe(i, j, s)?;
    }
    pairs.finish()
}

fn parse_dense(rows: &[csv::StringRecord], manifest: &WorkManifest) -> Result<ScoreMatrix> {
    let mut pairs = PairCollector::new(manifest);
    let columns: Vec<usize> = rows[0]
        .iter()
        .skip(1)
        .map(|id| pairs.resolve(id))
        .collect::<Result<_>>()?;
    for (line, row) in rows.iter().enumerate().skip(1) {
        if row.len() != columns.len() + 1 {
            return Err(Error::parse(
                format!("dense score row {line}"),
                format!("expected {} fields, got {}", columns.len() + 1, row.len()),
            ));
        }
        let i = pairs.resolve(&row[0])?;
        for (cell, &j) in row.iter().skip(1).zip(&columns) {
            if i == j {
                continue;
            }
            if let Some(s) = parse_score_cell(cell, &format!("dense score row {line}"))? {
                pairs.observe(i, j, s)?;
            }
        }
    }
    pairs.finish()
}

/// Symmetric N×N distances in `[0, 1]` with an exactly-zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    track_ids: Vec<String>,
    values: Vec<f64>,
    pub collapsed: bool,
}

impl DistanceMatrix {
    /// Builds a matrix by evaluating `f(i, j)` once per unordered pair `i < j`.
    pub fn from_fn(track_ids: Vec<String>, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let n = track_ids.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = f(i, j);
                check_distance(&track_ids, i, j, d)?;
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Ok(DistanceMatrix {
            track_ids,
            values,
            collapsed: false,
        })
    }

    /// Builds a matrix from full rows, rejecting asymmetric or out-of-range input.
    pub fn from_rows(track_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = track_ids.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("distances", format!("expected a {n}x{n} matrix")));
        }
        for (i, row) in rows.iter().enumerate() {
            if row[i] != 0.0 {
                return Err(Error::invalid("distances", format!("diagonal entry {i} is not 0")));
            }
            for j in i + 1..n {
                if row[j].to_bits() != rows[j][i].to_bits() {
                    return Err(Error::invalid(
                        "distances",
                        format!("asymmetric entries at ({i}, {j})"),
                    ));
                }
            }
        }
        Self::from_fn(track_ids, |i, j| rows[i][j])
    }

    pub(crate) fn from_raw(track_ids: Vec<String>, values: Vec<f64>, collapsed: bool) -> Self {
        debug_assert_eq!(values.len(), track_ids.len() * track_ids.len());
        DistanceMatrix {
            track_ids,
            values,
            collapsed,
        }
    }

    pub fn len(&self) -> usize {
        self.track_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.track_ids.is_empty()
    }

    pub fn track_ids(&self) -> &[String] {
        &self.track_ids
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.len();
        if self.values.len() != n * n {
            return Err(Error::invalid("distances", "storage size mismatch"));
        }
        for i in 0..n {
            if self.get(i, i) != 0.0 {
                return Err(Error::invalid("distances", format!("diagonal entry {i} is not 0")));
            }
            for j in i + 1..n {
                if self.get(i, j).to_bits() != self.get(j, i).to_bits() {
                    return Err(Error::invalid(
                        "distances",
                        format!("asymmetric entries at ({i}, {j})"),
                    ));
                }
                check_distance(&self.track_ids, i, j, self.get(i, j))?;
            }
        }
        Ok(())
    }

    /// Dense CSV with ids in the first row and column.
    pub fn write_dense<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let mut out = out;
        write_comments(&mut out, comments)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.track_ids.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut row = vec![self.track_ids[i].clone()];
            row.extend(self.row(i).iter().map(|&d| format_f64(d)));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::parse("csv", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_dense(&mut buf, comments)?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, collapsed: bool) -> Result<Self> {
        let path = path.as_ref();
        let mut text = String::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| Error::io(path, e))?;
        let body = strip_comments(&text);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let rows: Vec<csv::StringRecord> = reader
            .records()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        let header = rows.first().ok_or_else(|| Error::parse(path.display().to_string(), "empty file"))?;
        let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut dense = Vec::with_capacity(ids.len());
        for (line, row) in rows.iter().enumerate().skip(1) {
            if row.get(0) != ids.get(line - 1).map(String::as_str) {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!("row {line} id does not match header order"),
                ));
            }
            let values = row
                .iter()
                .skip(1)
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path.display().to_string(), e))?;
            dense.push(values);
        }
        let mut m = Self::from_rows(ids, &dense)?;
        m.collapsed = collapsed;
        Ok(m)
    }
}

fn check_distance(ids: &[String], i: usize, j: usize, d: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::invalid(
            "distance",
            format!("distance {d} for pair ({}, {}) outside [0, 1]", ids[i], ids[j]),
        ));
    }
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

pub(crate) fn write_comments<W: Write>(out: &mut W, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

/// Drops `#` comment lines so artifact headers never reach the CSV parser.
pub(crate) fn strip_comments(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Reads the `#` header lines of an artifact.
pub fn read_comments(text: &str) -> Vec<String> {
    text.lines()
        .take_while(|l| l.trim_start().starts_with('#'))
        .map(|l| l.trim_start().trim_start_matches('#').trim().to_string())
        .collect()
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::parse("csv", e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracks(ids: &[&str]) -> Vec<TrackRef> {
        ids.iter().map(|id| TrackRef::new(*id, format!("title {id}"), "artist")).collect()
    }

    fn manifest3() -> WorkManifest {
        WorkManifest::new("w", "a", tracks(&["a", "b", "c"]), None).unwrap()
    }

    #[test]
    fn minimal_manifest_parses() {
        let json = r#"{"work_id":"w","reference_id":"a","candidates":[
            {"id":"a","title":"A","artist":"x"},{"id":"b","title":"B","artist":"y"},
            {"id":"c","title":"C","artist":"z","uri":"http://c"}]}"#;
        let m = WorkManifest::from_json(json).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.reference.id, "a");
        assert_eq!(m.candidates[2].uri.as_deref(), Some("http://c"));
        assert!(m.labels.is_none());
    }

    #[test]
    fn reference_must_be_a_candidate() {
        let err = WorkManifest::new("w", "z", tracks(&["a", "b"]), None).unwrap_err();
        assert!(err.to_string().contains("reference not in candidates"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = WorkManifest::new("w", "a", tracks(&["a", "b", "a"]), None).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(ref id) if id == "a"));
    }

    #[test]
    fn single_candidate_rejected() {
        let err = WorkManifest::new("w", "a", tracks(&["a"]), None).unwrap_err();
        assert!(err.to_string().contains("candidates"), "{err}");
    }

    #[test]
    fn reference_must_be_positive() {
        let labels = BTreeMap::from([("a".to_string(), Label::Negative)]);
        assert!(WorkManifest::new("w", "a", tracks(&["a", "b"]), Some(labels)).is_err());
    }

    #[test]
    fn large_manifest_keeps_count() {
        let ids: Vec<String> = (0..657).map(|i| format!("t{i}")).collect();
        let ts = ids.iter().map(|id| TrackRef::new(id.clone(), "Get Lucky", "x")).collect();
        let m = WorkManifest::new("get-lucky", "t0", ts, None).unwrap();
        assert_eq!(m.len(), 657);
    }

    #[test]
    fn label_summary_counts() {
        let ids: Vec<String> = (0..110).map(|i| format!("t{i}")).collect();
        let ts = ids.iter().map(|id| TrackRef::new(id.clone(), "Bodak Yellow", "x")).collect();
        // 86 of 110 is the 78% of the labeled pool.
        let labels = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), if i < 86 { Label::Positive } else { Label::Negative }))
            .collect();
        let m = WorkManifest::new("bodak", "t0", ts, Some(labels)).unwrap();
        let s = validate_labels(&m);
        assert_eq!((s.n_pos, s.n_neg), (86, 24));
        assert_eq!(s.coverage, 1.0);
        assert_eq!((s.n_pos as f64 / 110.0 * 100.0).round(), 78.0);

        assert_eq!(validate_labels(&manifest3()).coverage, 0.0);

        let labels = BTreeMap::from([
            ("a".to_string(), Label::Positive),
            ("b".to_string(), Label::Negative),
            ("c".to_string(), Label::Negative),
        ]);
        let m = WorkManifest::new("w", "a", tracks(&["a", "b", "c"]), Some(labels)).unwrap();
        assert_eq!(validate_labels(&m).n_pos, 1);
    }

    #[test]
    fn triplets_cover_all_pairs() {
        let m = manifest3();
        let s = parse_score_matrix("id_a,id_b,score\na,b,5.0\nb,a,5.0\na,c,1.5\nc,b,2\n", &m).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.get(0, 1), 5.0);
        assert_eq!(s.get(1, 0), 5.0);
        assert_eq!(s.get(1, 2), 2.0);
        assert_eq!(s.get(0, 0), ScoreMatrix::SELF_SCORE);
        s.check_invariants().unwrap();
    }

    #[test]
    fn missing_pair_listed() {
        let err = parse_score_matrix("id_a,id_b,score\na,b,5.0\nb,c,1.0\n", &manifest3()).unwrap_err();
        assert!(matches!(err, Error::MissingPair(ref a, ref c) if a == "a" && c == "c"), "{err}");
    }

    #[test]
    fn asymmetry_policy() {
        let m = manifest3();
        let err = parse_score_matrix("id_a,id_b,score\na,b,5\nb,a,5.1\na,c,1\nb,c,1\n", &m).unwrap_err();
        assert!(matches!(err, Error::Asymmetric { .. }));
        let s = parse_score_matrix("id_a,id_b,score\na,b,5\nb,a,5.0000000001\na,c,1\nb,c,1\n", &m).unwrap();
        assert!((s.get(0, 1) - 5.00000000005).abs() < 1e-15);
        s.check_invariants().unwrap();
    }

    #[test]
    fn rejects_unknown_and_negative() {
        let m = manifest3();
        let err = parse_score_matrix("id_a,id_b,score\na,q,5\n", &m).unwrap_err();
        assert!(matches!(err, Error::UnknownTrack(ref q) if q == "q"));
        let err = parse_score_matrix("id_a,id_b,score\na,b,-1\na,c,1\nb,c,1\n", &m).unwrap_err();
        assert!(matches!(err, Error::NegativeScore { .. }));
    }

    #[test]
    fn dense_form_accepted() {
        let m = manifest3();
        let text = ",a,b,c\na,self,1,2\nb,1,self,3\nc,2,3,self\n";
        let s = parse_score_matrix(text, &m).unwrap();
        assert_eq!(s.get(2, 1), 3.0);
        // column order may differ from manifest order
        let text = ",c,a,b\nc,self,2,3\na,2,self,1\nb,3,1,self\n";
        assert_eq!(parse_score_matrix(text, &m).unwrap(), s);
    }

    #[test]
    fn distance_matrix_rejects_bad_input() {
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(DistanceMatrix::from_rows(ids.clone(), &[vec![0.0, 0.2], vec![0.3, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(ids.clone(), &[vec![0.0, 1.2], vec![1.2, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(ids.clone(), &[vec![0.1, 0.2], vec![0.2, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(ids, &[vec![0.0, 0.2], vec![0.2, 0.0]]).is_ok());
    }

    #[test]
    fn comment_lines_skipped() {
        let text = "# engine=x\n# params=y\nid_a,id_b,score\na,b,1\na,c,1\nb,c,1\n";
        assert_eq!(read_comments(text), vec!["engine=x", "params=y"]);
        assert!(parse_score_matrix(text, &manifest3()).is_ok());
    }
}
