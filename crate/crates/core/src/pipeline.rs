//! File-level operations behind the command-line tool: generate a dataset,
//! reconstruct it, evaluate reconstructed tracks against truth and turn
//! evaluation output into plot-ready tables.

use crate::config::{hex, ConfigError, Manifest, RunConfig};
use crate::dataset::{read_events, read_reco, write_events, write_reco, write_text, DatasetError};
use crate::geometry::GeometryError;
use crate::metrics::{match_event, reco_inputs, truth_inputs, EventMatch, MatchRule, MetricsError, StageReport};
use crate::reco::{reconstruct_events, RecoTrack, Stage};
use crate::sim::{generate_events, Event};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("reco file refers to {} event(s) missing from the dataset: {}", .0.len(), preview(.0))]
    Alignment(Vec<u64>),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}:{line}: malformed report line")]
    Report { path: PathBuf, line: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("a seed is required (--seed or `seed` in the config)")]
    MissingSeed,
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Io { .. } | PipelineError::Dataset(DatasetError::Io { .. }) => 1,
            PipelineError::Config(_) | PipelineError::Geometry(_) | PipelineError::MissingSeed => 2,
            PipelineError::Dataset(_) | PipelineError::Report { .. } => 3,
            PipelineError::Alignment(_) => 4,
            PipelineError::Metrics(_) => 5,
        }
    }
}

fn preview(ids: &[u64]) -> String {
    let shown: Vec<String> = ids.iter().take(10).map(u64::to_string).collect();
    let more = if ids.len() > 10 { ", ..." } else { "" };
    format!("{}{more}", shown.join(", "))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn manifest_path(dataset: &Path) -> PathBuf {
    let mut s = dataset.as_os_str().to_owned();
    s.push(".manifest.toml");
    PathBuf::from(s)
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Simulates `cfg.generate.events` events and writes them with a manifest
/// next to `output`.
pub fn generate(cfg: &RunConfig, output: &Path) -> Result<Manifest, PipelineError> {
    let seed = cfg.seed.ok_or(PipelineError::MissingSeed)?;
    let geometry = cfg.geometry()?;
    let g = &cfg.generate;
    let events = generate_events(&geometry, &cfg.sim(), g.category, seed, g.events);
    let hits = write_events(&events, output)?;
    let manifest = Manifest {
        config_sha256: cfg.hash(),
        dataset_sha256: sha256_file(output)?,
        seed,
        category: g.category,
        events: g.events,
        events_written: events.iter().filter(|e| !e.hits.is_empty()).count() as u64,
        hits: hits as u64,
        truth_tracks: events
            .iter()
            .filter(|e| !e.hits.is_empty())
            .map(|e| e.truth.len() as u64)
            .sum(),
    };
    let text = toml::to_string(&manifest).expect("manifest serialises");
    write_text(&manifest_path(output), &text)?;
    Ok(manifest)
}

/// Reads a dataset, runs the finder and optionally the fitter, and writes
/// the reco file. Returns the number of rows written.
pub fn reconstruct(
    cfg: &RunConfig,
    input: &Path,
    output: &Path,
    fit: bool,
    strict: bool,
) -> Result<usize, PipelineError> {
    let geometry = cfg.geometry()?;
    let data = read_events(input, &geometry, strict)?;
    let tracks = reconstruct_events(&data.events, &geometry, &cfg.finder(), &cfg.fitter(), fit);
    Ok(write_reco(&tracks, output)?)
}

/// Matches every event at one stage.
pub fn match_stage(
    events: &[Event],
    reco: &[RecoTrack],
    stage: Stage,
    rule: &MatchRule,
) -> Result<Vec<EventMatch>, PipelineError> {
    let known: BTreeSet<u64> = events.iter().map(|e| e.event_id).collect();
    let missing: BTreeSet<u64> = reco
        .iter()
        .map(|r| r.event_id)
        .filter(|id| !known.contains(id))
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::Alignment(missing.into_iter().collect()));
    }
    let mut by_event: HashMap<u64, Vec<&RecoTrack>> = HashMap::new();
    for r in reco.iter().filter(|r| r.stage == stage) {
        by_event.entry(r.event_id).or_default().push(r);
    }
    let matched: Result<Vec<EventMatch>, MetricsError> = events
        .par_iter()
        .map(|e| {
            let rows = by_event.get(&e.event_id).map(Vec::as_slice).unwrap_or(&[]);
            match_event(
                e.event_id,
                &truth_inputs(e),
                &reco_inputs(rows.iter().copied()),
                rule,
            )
        })
        .collect();
    Ok(matched?)
}

/// Finding-stage and, when fitter rows are present, fitting-stage reports.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub finding: StageReport,
    pub fitting: Option<StageReport>,
}

impl Evaluation {
    pub fn stages(&self) -> impl Iterator<Item = &StageReport> {
        std::iter::once(&self.finding).chain(self.fitting.as_ref())
    }
}

pub fn evaluate_tracks(
    cfg: &RunConfig,
    events: &[Event],
    reco: &[RecoTrack],
) -> Result<Evaluation, PipelineError> {
    let m = &cfg.metrics;
    let stage = |stage: Stage, label: &str| -> Result<StageReport, PipelineError> {
        let matched = match_stage(events, reco, stage, &m.rule)?;
        Ok(StageReport::build(label, &matched, &m.bins_pt, &m.bins_cos)?)
    };
    let finding = stage(Stage::Finder, "finding")?;
    let fitting = if reco.iter().any(|r| r.stage == Stage::Fitter) {
        Some(stage(Stage::Fitter, "fitting")?)
    } else {
        None
    };
    Ok(Evaluation { finding, fitting })
}

/// Evaluates a reco file against its dataset and writes
/// `<label>.txt` and `<label>.kv` per stage into `out_dir`.
pub fn evaluate(
    cfg: &RunConfig,
    dataset: &Path,
    reco: &Path,
    out_dir: &Path,
    strict: bool,
) -> Result<Evaluation, PipelineError> {
    let geometry = cfg.geometry()?;
    let data = read_events(dataset, &geometry, strict)?;
    let tracks = read_reco(reco)?;
    let eval = evaluate_tracks(cfg, &data.events, &tracks)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for s in eval.stages() {
        write_text(&out_dir.join(format!("{}.txt", s.label)), &s.table())?;
        write_text(&out_dir.join(format!("{}.kv", s.label)), &s.key_values())?;
    }
    Ok(eval)
}

/// Columns of the plot-ready series written by [`report`].
pub const REPORT_COLUMNS: [&str; 25] = [
    "label",
    "axis",
    "bin",
    "lo",
    "hi",
    "n_detectable",
    "n_matched",
    "n_clone",
    "n_fake",
    "eps_track",
    "eps_track_lo",
    "eps_track_hi",
    "eps_track_q",
    "eps_track_q_lo",
    "eps_track_q_hi",
    "r_wrong_q",
    "r_wrong_q_lo",
    "r_wrong_q_hi",
    "r_clone",
    "r_clone_lo",
    "r_clone_hi",
    "r_fake",
    "r_fake_lo",
    "r_fake_hi",
    "pt_resolution",
];

fn read_kv(path: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(PipelineError::Report {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

/// Flattens `key=value` evaluation files into one table with a row per
/// stage and bin (axis `all` for the unbinned numbers). Returns the CSV
/// text.
pub fn report(inputs: &[PathBuf]) -> Result<String, PipelineError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |_| PipelineError::Report { path, line: 0 }
    };
    w.write_record(REPORT_COLUMNS).map_err(csv_err(Path::new("<report>")))?;
    for path in inputs {
        let kv = read_kv(path)?;
        let labels: BTreeSet<&str> = kv
            .keys()
            .filter_map(|k| k.split_once('.').map(|(l, _)| l))
            .collect();
        for label in labels {
            let mut prefixes = vec![("all".to_string(), String::new(), label.to_string())];
            for axis in ["pt", "cos_theta"] {
                let mut i = 0;
                while kv.contains_key(&format!("{label}.{axis}[{i}].lo")) {
                    prefixes.push((axis.to_string(), i.to_string(), format!("{label}.{axis}[{i}]")));
                    i += 1;
                }
            }
            for (axis, bin, p) in prefixes {
                let get = |k: &str| kv.get(&format!("{p}.{k}")).cloned().unwrap_or_default();
                let mut row = vec![label.to_string(), axis, bin, get("lo"), get("hi")];
                for k in ["n_detectable", "n_matched", "n_clone", "n_fake"] {
                    row.push(get(k));
                }
                for r in ["eps_track", "eps_track_q", "r_wrong_q", "r_clone", "r_fake"] {
                    row.push(get(r));
                    row.push(get(&format!("{r}.lo")));
                    row.push(get(&format!("{r}.hi")));
                }
                row.push(get("pt_resolution"));
                w.write_record(&row).map_err(csv_err(path))?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|_| PipelineError::Report {
        path: PathBuf::from("<report>"),
        line: 0,
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
