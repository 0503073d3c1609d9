//! Loose Floyd-Warshall collapsing of a distance matrix.
//!
//! A pair `(i, j)` is shortened only when at least two intermediates `k`
//! offer a shorter two-hop route: the candidate distance is the
//! second-smallest of `D(i,k) + D(k,j)` over `k ∉ {i, j}`, plus a per-hop
//! penalty `eta`. Every accepted update records the intermediate used, so a
//! path from any track back to the reference can be reconstructed later.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{csv_err, format_f64, strip_comments, DistanceMatrix};

const NO_BRIDGE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseMode {
    /// Pairs are visited in row-major `i < j` order and each update is
    /// visible to the pairs that follow it within the same sweep.
    InPlace,
    /// Each sweep computes every candidate from a snapshot, then applies
    /// them together.
    Synchronous,
}

impl fmt::Display for CollapseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CollapseMode::InPlace => "in_place",
            CollapseMode::Synchronous => "synchronous",
        })
    }
}

impl FromStr for CollapseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_place" | "in-place" => Ok(CollapseMode::InPlace),
            "synchronous" | "sync" => Ok(CollapseMode::Synchronous),
            other => Err(Error::invalid("collapse.mode", format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseParams {
    /// Penalty paid for routing through an intermediate, in distance units.
    pub eta: f64,
    /// Minimum decrease that counts as an update.
    pub update_tolerance: f64,
    pub max_sweeps: usize,
    pub mode: CollapseMode,
}

impl Default for CollapseParams {
    fn default() -> Self {
        CollapseParams {
            eta: 0.01,
            update_tolerance: 1e-9,
            max_sweeps: 100,
            mode: CollapseMode::InPlace,
        }
    }
}

impl CollapseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::invalid("collapse.eta", "must be finite and >= 0"));
        }
        if !(self.update_tolerance.is_finite() && self.update_tolerance > 0.0) {
            return Err(Error::invalid("collapse.update_tolerance", "must be finite and > 0"));
        }
        if self.max_sweeps == 0 {
            return Err(Error::invalid("collapse.max_sweeps", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseResult {
    pub distances: DistanceMatrix,
    pub sweeps_run: usize,
    pub converged: bool,
    /// Number of accepted updates in each sweep.
    pub updates_per_sweep: Vec<usize>,
    bridges: Vec<u32>,
}

/// One node of a traced path; the source sits at depth 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub depth: usize,
    pub index: usize,
}

impl CollapseResult {
    /// Reassembles a result from persisted parts.
    pub fn from_parts(
        distances: DistanceMatrix,
        bridges: &[(usize, usize, usize)],
        sweeps_run: usize,
        converged: bool,
    ) -> Result<Self> {
        let n = distances.len();
        let mut table = vec![NO_BRIDGE; n * n];
        for &(i, j, k) in bridges {
            for idx in [i, j, k] {
                if idx >= n {
                    return Err(Error::IndexOutOfRange { index: idx, len: n });
                }
            }
            if i == j || k == i || k == j {
                return Err(Error::invalid("bridges", format!("degenerate bridge ({i}, {j}, {k})")));
            }
            table[i * n + j] = k as u32;
            table[j * n + i] = k as u32;
        }
        Ok(CollapseResult {
            distances,
            sweeps_run,
            converged,
            updates_per_sweep: Vec::new(),
            bridges: table,
        })
    }

    /// Intermediate recorded at the last accepted update of `(i, j)`.
    pub fn bridge(&self, i: usize, j: usize) -> Option<usize> {
        let k = self.bridges[i * self.distances.len() + j];
        (k != NO_BRIDGE).then_some(k as usize)
    }

    /// All recorded bridges as `(i, j, k)` with `i < j`, in row-major order.
    pub fn bridges(&self) -> Vec<(usize, usize, usize)> {
        let n = self.distances.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if let Some(k) = self.bridge(i, j) {
                    out.push((i, j, k));
                }
            }
        }
        out
    }

    pub fn bridges_map(&self) -> BTreeMap<(usize, usize), usize> {
        self.bridges().into_iter().map(|(i, j, k)| ((i, j), k)).collect()
    }

    /// Expands recorded bridges into the route from `source` to `target`.
    ///
    /// A pair with bridge `k` expands to `path(source, k) ++ path(k, target)`;
    /// a pair without one is a direct edge. Bridges are recorded at different
    /// times, so an expansion may revisit a track; such loops are erased and
    /// the returned path never repeats an index.
    pub fn trace_path(&self, source: usize, target: usize) -> Result<Vec<PathStep>> {
        let n = self.distances.len();
        for idx in [source, target] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        if source == target {
            return Err(Error::invalid("trace_path", "source and target must differ"));
        }
        let mut raw = vec![source];
        let mut open = HashSet::new();
        self.expand(source, target, &mut raw, &mut open)?;

        let mut path: Vec<usize> = Vec::with_capacity(raw.len());
        for idx in raw {
            if let Some(pos) = path.iter().position(|&p| p == idx) {
                path.truncate(pos + 1);
            } else {
                path.push(idx);
            }
        }
        Ok(path
            .into_iter()
            .enumerate()
            .map(|(depth, index)| PathStep { depth, index })
            .collect())
    }

    fn expand(
        &self,
        i: usize,
        j: usize,
        out: &mut Vec<usize>,
        open: &mut HashSet<(usize, usize)>,
    ) -> Result<()> {
        let key = (i.min(j), i.max(j));
        if !open.insert(key) {
            return Err(Error::ProvenanceCycle(key.0, key.1));
        }
        match self.bridge(i, j) {
            Some(k) => {
                self.expand(i, k, out, open)?;
                self.expand(k, j, out, open)?;
            }
            None => out.push(j),
        }
        open.remove(&key);
        Ok(())
    }

    /// Header line recorded with the serialized collapsed matrix.
    pub fn header_comment(&self, params: &CollapseParams) -> String {
        format!(
            "eta={},tolerance={},sweeps_run={},converged={},mode={}",
            format_f64(params.eta),
            format_f64(params.update_tolerance),
            self.sweeps_run,
            self.converged,
            params.mode
        )
    }

    pub fn write_bridges<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "k"]).map_err(csv_err)?;
        for (i, j, k) in self.bridges() {
            w.write_record([i.to_string(), j.to_string(), k.to_string()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::parse("csv", e))?;
        Ok(())
    }
}

/// Parses a bridges CSV (`i,j,k`).
pub fn load_bridges(path: impl AsRef<Path>) -> Result<Vec<(usize, usize, usize)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let body = strip_comments(&text);
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for rec in reader.deserialize::<(usize, usize, usize)>() {
        out.push(rec.map_err(|e| Error::parse(path.display().to_string(), e))?);
    }
    Ok(out)
}

/// Parses the `key=value` pairs of a collapsed-matrix header line.
pub fn parse_header_comment(line: &str) -> BTreeMap<String, String> {
    line.split(',')
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Second-smallest `ri[k] + rj[k]` over `k ∉ {i, j}`, ordered by
/// `(value, k)`, with its `k`. `None` when fewer than two intermediates exist.
#[inline]
fn second_smallest_two_hop(ri: &[f64], rj: &[f64], i: usize, j: usize) -> Option<(f64, usize)> {
    debug_assert!(i < j);
    let mut m1 = f64::INFINITY;
    let mut m2 = f64::INFINITY;
    let mut k1 = usize::MAX;
    let mut k2 = usize::MAX;
    let mut scan = |lo: usize, hi: usize| {
        for k in lo..hi {
            let s = ri[k] + rj[k];
            if s < m2 {
                if s < m1 {
                    m2 = m1;
                    k2 = k1;
                    m1 = s;
                    k1 = k;
                } else {
                    m2 = s;
                    k2 = k;
                }
            }
        }
    };
    scan(0, i);
    scan(i + 1, j);
    scan(j + 1, ri.len());
    (k2 != usize::MAX).then_some((m2, k2))
}

/// Runs sweeps until no entry decreases by more than the update tolerance,
/// or `max_sweeps` is reached (reported as `converged = false`).
pub fn collapse(d: &DistanceMatrix, params: &CollapseParams) -> Result<CollapseResult> {
    params.validate()?;
    d.check_invariants()?;
    let n = d.len();
    if n < 2 {
        return Err(Error::invalid("distances", "need at least 2 tracks"));
    }
    if n > NO_BRIDGE as usize {
        return Err(Error::invalid("distances", "too many tracks"));
    }
    let mut values = d.values().to_vec();
    let mut bridges = vec![NO_BRIDGE; n * n];
    let mut updates_per_sweep = Vec::new();
    let mut converged = false;

    while updates_per_sweep.len() < params.max_sweeps {
        let updates = match params.mode {
            CollapseMode::InPlace => sweep_in_place(&mut values, &mut bridges, n, params),
            CollapseMode::Synchronous => sweep_synchronous(&mut values, &mut bridges, n, params),
        };
        updates_per_sweep.push(updates);
        if updates == 0 {
            converged = true;
            break;
        }
    }

    let distances = DistanceMatrix::from_raw(d.track_ids().to_vec(), values, true);
    debug_assert!(distances.check_invariants().is_ok());
    Ok(CollapseResult {
        distances,
        sweeps_run: updates_per_sweep.len(),
        converged,
        updates_per_sweep,
        bridges,
    })
}

fn sweep_in_place(values: &mut [f64], bridges: &mut [u32], n: usize, params: &CollapseParams) -> usize {
    let mut updates = 0;
    for i in 0..n {
        for j in i + 1..n {
            let found = {
                let ri = &values[i * n..(i + 1) * n];
                let rj = &values[j * n..(j + 1) * n];
                second_smallest_two_hop(ri, rj, i, j)
            };
            let Some((sum, k)) = found else { continue };
            let candidate = sum + params.eta;
            let old = values[i * n + j];
            if old - candidate > params.update_tolerance {
                values[i * n + j] = candidate;
                values[j * n + i] = candidate;
                bridges[i * n + j] = k as u32;
                bridges[j * n + i] = k as u32;
                updates += 1;
            }
        }
    }
    updates
}

fn sweep_synchronous(values: &mut [f64], bridges: &mut [u32], n: usize, params: &CollapseParams) -> usize {
    let snapshot: &[f64] = values;
    let accepted: Vec<(usize, usize, f64, usize)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let ri = &snapshot[i * n..(i + 1) * n];
            (i + 1..n).filter_map(move |j| {
                let rj = &snapshot[j * n..(j + 1) * n];
                let (sum, k) = second_smallest_two_hop(ri, rj, i, j)?;
                let candidate = sum + params.eta;
                (ri[j] - candidate > params.update_tolerance).then_some((i, j, candidate, k))
            })
        })
        .collect();
    for &(i, j, candidate, k) in &accepted {
        values[i * n + j] = candidate;
        values[j * n + i] = candidate;
        bridges[i * n + j] = k as u32;
        bridges[j * n + i] = k as u32;
    }
    accepted.len()
}
