//! Command implementations. Each returns the text printed on stdout so the
//! commands can be exercised without a subprocess.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use covergraph_core::evaluation::{PathHop, TableRow};
use covergraph_core::model::format_f64;
use covergraph_core::pipeline::{StageContext, ENGINE_VERSION};
use covergraph_core::workspace::{LoadedWork, ScoreColumn, MANIFEST_FILE, SCORES_FILE};
use covergraph_core::{generate_synthetic_work, ScoreSource, Stage, WorkManifest, Workspace};
use serde::Serialize;

use crate::config::Settings;

/// Where `run` takes its raw scores from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScoresArg {
    Synth,
    Features,
    File(PathBuf),
}

impl std::str::FromStr for ScoresArg {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "synth" => ScoresArg::Synth,
            "features" => ScoresArg::Features,
            path => ScoresArg::File(PathBuf::from(path)),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub manifest: Option<PathBuf>,
    pub scores: ScoresArg,
    pub features_dir: Option<PathBuf>,
}

pub fn run(settings: &Settings, args: &RunArgs) -> Result<String> {
    let ws = Workspace::open(&settings.workspace)?;
    let (manifest, source) = match &args.scores {
        ScoresArg::Synth => {
            if args.manifest.is_some() {
                bail!("--scores synth generates its own manifest; drop --manifest");
            }
            let (manifest, scores) = generate_synthetic_work(&settings.synthetic).stage(Stage::PairwiseScoring)?;
            let descriptor = serde_json::to_string(&settings.synthetic)?;
            (manifest, ScoreSource::Provided { scores, descriptor })
        }
        ScoresArg::Features => {
            let path = args.manifest.as_ref().context("--scores features needs --manifest")?;
            let manifest = WorkManifest::load(path).stage(Stage::CoreModel)?;
            let dir = match &args.features_dir {
                Some(d) => d.clone(),
                None => path.parent().unwrap_or(Path::new(".")).join("features"),
            };
            (
                manifest,
                ScoreSource::Features {
                    dir,
                    params: settings.alignment,
                },
            )
        }
        ScoresArg::File(scores) => {
            let path = args.manifest.as_ref().context("a score file needs --manifest")?;
            (WorkManifest::load(path).stage(Stage::CoreModel)?, ScoreSource::File(scores.clone()))
        }
    };
    let outcome = ws.run_work(&manifest, &source, &settings.engine)?;
    let meta = ws.read_meta(&manifest.work_id)?;
    let mut written = Vec::new();
    for (flag, name) in [
        (outcome.scores_written, "scores"),
        (outcome.distances_written, "distances"),
        (outcome.downstream_written, "collapse+dendrogram+final scores"),
    ] {
        if flag {
            written.push(name);
        }
    }
    Ok(format!(
        "work {}: {} tracks, {} sweeps ({}), params_hash {}, regenerated: {}\n",
        manifest.work_id,
        manifest.len(),
        meta.sweeps_run,
        if meta.converged { "converged" } else { "not converged" },
        meta.params_hash,
        if written.is_empty() { "nothing".to_string() } else { written.join(", ") }
    ))
}

/// Writes a synthetic work's manifest and score matrix to `out`.
pub fn synth(settings: &Settings, out: &Path) -> Result<String> {
    let (manifest, scores) = generate_synthetic_work(&settings.synthetic)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    manifest.save(out.join(MANIFEST_FILE))?;
    let spec = serde_json::to_string(&settings.synthetic)?;
    scores.save(out.join(SCORES_FILE), &[format!("engine={ENGINE_VERSION}"), format!("synthetic={spec}")])?;
    Ok(format!(
        "wrote {} ({} tracks, {} positive) to {}\n",
        manifest.work_id,
        manifest.len(),
        settings.synthetic.n_positives(),
        out.display()
    ))
}

fn open_workspace(settings: &Settings) -> Result<Workspace> {
    Workspace::open_existing(&settings.workspace)
        .with_context(|| format!("no workspace at {}", settings.workspace.display()))
}

pub fn load_known_work(ws: &Workspace, work_id: &str) -> Result<LoadedWork> {
    if !ws.works()?.iter().any(|w| w == work_id) {
        bail!("unknown work {work_id:?}");
    }
    Ok(ws.load_work(work_id)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Ranking,
    Classification,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Ensemble,
    Both,
}

#[derive(Debug, Serialize)]
pub struct MethodRows {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direct: Option<TableRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<TableRow>,
}

#[derive(Debug, Serialize)]
pub struct WorkRows {
    pub work_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranking: Option<MethodRows>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<MethodRows>,
}

#[derive(Debug, Serialize)]
pub struct UniversalThresholds {
    pub direct: f64,
    pub ensemble: f64,
}

#[derive(Debug, Serialize)]
pub struct RescuedEntry {
    pub work_id: String,
    pub track_id: String,
    pub path: Vec<PathHop>,
}

#[derive(Debug, Serialize)]
pub struct EvaluationReport {
    pub engine_version: String,
    pub protocol: Protocol,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub universal_thresholds: Option<UniversalThresholds>,
    pub works: Vec<WorkRows>,
    pub rescued: Vec<RescuedEntry>,
}

pub const EVALUATION_REPORT: &str = "evaluation.json";

pub fn build_report(ws: &Workspace, protocol: Protocol, method: Method) -> Result<EvaluationReport> {
    let collection = ws.evaluate()?;
    let want_direct = method != Method::Ensemble;
    let want_ensemble = method != Method::Direct;
    let rows = |d: &covergraph_core::ThresholdReport, e: &covergraph_core::ThresholdReport| MethodRows {
        direct: want_direct.then(|| d.table_row()),
        ensemble: want_ensemble.then(|| e.table_row()),
    };
    let works = collection
        .works
        .iter()
        .map(|w| WorkRows {
            work_id: w.work_id.clone(),
            ranking: (protocol != Protocol::Classification).then(|| rows(&w.direct.ranking, &w.ensemble.ranking)),
            classification: (protocol != Protocol::Ranking).then(|| {
                rows(
                    w.direct.classification.as_ref().expect("classification computed"),
                    w.ensemble.classification.as_ref().expect("classification computed"),
                )
            }),
        })
        .collect();
    let rescued = collection
        .works
        .iter()
        .flat_map(|w| {
            w.rescued.iter().map(|r| RescuedEntry {
                work_id: w.work_id.clone(),
                track_id: r.track_id.clone(),
                path: r.path.clone(),
            })
        })
        .collect();
    Ok(EvaluationReport {
        engine_version: ENGINE_VERSION.to_string(),
        protocol,
        method,
        universal_thresholds: (protocol != Protocol::Ranking).then_some(UniversalThresholds {
            direct: collection.universal_direct,
            ensemble: collection.universal_ensemble,
        }),
        works,
        rescued,
    })
}

fn render_rows(out: &mut String, title: &str, works: &[WorkRows], pick: impl Fn(&WorkRows) -> Option<&MethodRows>) {
    for (label, get) in [
        ("direct", (|m: &MethodRows| m.direct) as fn(&MethodRows) -> Option<TableRow>),
        ("ensemble", |m: &MethodRows| m.ensemble),
    ] {
        let rows: Vec<(&str, TableRow)> = works
            .iter()
            .filter_map(|w| pick(w).and_then(get).map(|r| (w.work_id.as_str(), r)))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(out, "{title} / {label}");
        let _ = writeln!(out, "work_id,best_threshold,fn,fp,both,fn_rel,fp_rel,both_rel");
        for (id, r) in rows {
            let _ = writeln!(
                out,
                "{id},{},{},{},{},{:.4},{:.4},{:.4}",
                format_f64(r.best_threshold),
                r.r#fn,
                r.fp,
                r.both,
                r.fn_rel,
                r.fp_rel,
                r.both_rel
            );
        }
    }
}

pub fn evaluate(settings: &Settings, protocol: Protocol, method: Method) -> Result<String> {
    let ws = open_workspace(settings)?;
    let report = build_report(&ws, protocol, method)?;
    let path = ws.write_report(EVALUATION_REPORT, &report)?;
    let mut out = String::new();
    render_rows(&mut out, "ranking", &report.works, |w| w.ranking.as_ref());
    if let Some(u) = &report.universal_thresholds {
        let _ = writeln!(
            out,
            "universal thresholds: direct {}, ensemble {}",
            format_f64(u.direct),
            format_f64(u.ensemble)
        );
    }
    render_rows(&mut out, "classification", &report.works, |w| w.classification.as_ref());
    let _ = writeln!(out, "rescued tracks: {}", report.rescued.len());
    let _ = writeln!(out, "report written to {}", path.display());
    Ok(out)
}

pub fn sweep(settings: &Settings, work_id: &str, column: ScoreColumn) -> Result<String> {
    let ws = open_workspace(settings)?;
    load_known_work(&ws, work_id)?;
    let points = ws.sweep(work_id, column)?;
    let mut out = String::from("threshold,false_negatives,false_positives,errors\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            format_f64(p.threshold),
            p.false_negatives,
            p.false_positives,
            p.errors
        );
    }
    Ok(out)
}

pub fn path(settings: &Settings, work_id: &str, track_id: &str) -> Result<String> {
    let ws = open_workspace(settings)?;
    let work = load_known_work(&ws, work_id)?;
    let target = work
        .track_index(track_id)
        .ok_or_else(|| anyhow!("unknown track {track_id:?} in work {work_id:?}"))?;
    let hops = covergraph_core::evaluation::path_hops(&work.scores, &work.collapse, target)?;
    let mut out = String::from("depth,track_id,direct_score,ensemble_score\n");
    for h in hops {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            h.depth,
            h.track_id,
            format_f64(h.direct_score),
            format_f64(h.ensemble_score)
        );
    }
    Ok(out)
}

/// Flat cut either in dendrogram height units or on the ensemble score scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cut {
    Height(f64),
    Score(f64),
}

impl Cut {
    pub fn apply(self, work: &LoadedWork) -> Vec<usize> {
        match self {
            Cut::Height(h) => work.dendrogram.cut_clusters(h),
            Cut::Score(s) => work.dendrogram.cut_clusters_at_score(s),
        }
    }
}

pub fn clusters(settings: &Settings, work_id: &str, cut: Cut) -> Result<String> {
    let ws = open_workspace(settings)?;
    let work = load_known_work(&ws, work_id)?;
    let labels = cut.apply(&work);
    let mut out = String::from("track_id,cluster\n");
    for (track, label) in work.manifest.candidates.iter().zip(labels) {
        let _ = writeln!(out, "{},{}", track.id, work.manifest.candidates[label].id);
    }
    Ok(out)
}
