//! Hit-centric CSV files: one row per hit, track-level labels repeated on
//! every row of the track, zeros on noise rows.
//!
//! Floats are written with 9 significant digits so that a write/read/write
//! cycle is byte-identical.

use crate::geometry::{Geometry, Vec3, WireId};
use crate::helix::{HelixParams, KinematicState};
use crate::reco::{RecoTrack, Stage};
use crate::sim::{Event, Hit, TruthTrack};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Hit columns in file order, after `eventIndex`.
pub const HIT_COLUMNS: [&str; 18] = [
    "middleX",
    "middleY",
    "layer",
    "slayer",
    "locallayer",
    "rawDriftDist",
    "rawDriftDistErr",
    "isSignal",
    "trackIndex",
    "scaledFltLen",
    "lrAmbig",
    "initialMomX",
    "initialMomY",
    "initialMomZ",
    "initialPosX",
    "initialPosY",
    "initialPosZ",
    "charge",
];

pub const EVENT_COLUMN: &str = "eventIndex";

pub const RECO_COLUMNS: [&str; 13] = [
    "eventIndex",
    "recoTrackId",
    "stage",
    "hits",
    "dr",
    "phi0",
    "kappa",
    "dz",
    "tanLambda",
    "chi2",
    "ndf",
    "converged",
    "zConstrained",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing required column '{column}'")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}:{line}: column '{column}': cannot parse '{value}'")]
    Parse {
        path: PathBuf,
        line: u64,
        column: String,
        value: String,
    },
    #[error("{path}: {} validation finding(s), first: {}", .findings.len(), .findings[0])]
    Validation { path: PathBuf, findings: Vec<Finding> },
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
    fn csv(path: &Path, source: csv::Error) -> Self {
        if source.is_io_error() {
            if let csv::ErrorKind::Io(e) = source.into_kind() {
                return DatasetError::io(path, e);
            }
            unreachable!("checked io error");
        }
        DatasetError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FindingKind {
    Range,
    Inconsistency,
    DuplicateWire,
    TrackLabelMismatch,
}

/// A non-fatal invariant violation found while reading.
#[derive(Clone, Debug, PartialEq)]
pub struct Finding {
    pub line: u64,
    pub kind: FindingKind,
    pub message: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {:?}: {}", self.line, self.kind, self.message)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Events read from a file.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub events: Vec<Event>,
    pub report: ValidationReport,
    /// Columns outside the schema, in file order.
    pub extra_columns: Vec<String>,
    /// Values of the extra columns, keyed by `(eventIndex, wire)`.
    pub extras: BTreeMap<(u64, WireId), Vec<String>>,
}

/// `%.9g`-style rendering: 9 significant digits, trailing zeros trimmed.
pub fn format_float(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(char::is_ascii_digit).collect();
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if (-5..9).contains(&exp) {
        if exp >= 0 {
            let k = exp as usize + 1;
            out.push_str(&digits[..k]);
            out.push('.');
            out.push_str(&digits[k..]);
        } else {
            out.push_str("0.");
            out.push_str(&"0".repeat((-exp - 1) as usize));
            out.push_str(&digits);
        }
        let trimmed = out.trim_end_matches('0').trim_end_matches('.');
        trimmed.to_string()
    } else {
        let m = format!("{}.{}", &digits[..1], &digits[1..]);
        let m = m.trim_end_matches('0').trim_end_matches('.');
        out.push_str(m);
        out.push('e');
        out.push_str(&exp.to_string());
        out
    }
}

fn hit_row(event_id: u64, hit: &Hit, track: Option<&TruthTrack>) -> Vec<String> {
    let f = format_float;
    let mut row = vec![
        event_id.to_string(),
        f(hit.middle_x),
        f(hit.middle_y),
        hit.layer.to_string(),
        hit.slayer.to_string(),
        hit.locallayer.to_string(),
        f(hit.raw_drift_dist),
        f(hit.raw_drift_dist_err),
        u8::from(hit.is_signal).to_string(),
        hit.track_index.to_string(),
        f(hit.scaled_flt_len),
        hit.lr_ambig.to_string(),
    ];
    match track.filter(|_| hit.is_signal) {
        Some(t) => {
            let m = t.state.momentum;
            let p = t.state.position;
            row.extend([f(m.x), f(m.y), f(m.z), f(p.x), f(p.y), f(p.z)]);
            row.push(t.state.charge.to_string());
        }
        None => row.extend(std::iter::repeat_n("0".to_string(), 7)),
    }
    row
}

/// Writes events as one row per hit, ordered by event, layer and cell.
/// Events without hits produce no rows. Returns the number of hit rows.
pub fn write_events(events: &[Event], path: &Path) -> Result<usize, DatasetError> {
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let header: Vec<&str> = std::iter::once(EVENT_COLUMN).chain(HIT_COLUMNS).collect();
    w.write_record(&header).map_err(|e| DatasetError::csv(path, e))?;
    let mut order: Vec<&Event> = events.iter().collect();
    order.sort_by_key(|e| e.event_id);
    let mut rows = 0;
    for ev in order {
        let tracks: BTreeMap<u32, &TruthTrack> =
            ev.truth.iter().map(|t| (t.track_index, t)).collect();
        let mut hits: Vec<&Hit> = ev.hits.iter().collect();
        hits.sort_by_key(|h| h.wire);
        for h in hits {
            let row = hit_row(ev.event_id, h, tracks.get(&h.track_index).copied());
            w.write_record(&row).map_err(|e| DatasetError::csv(path, e))?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| DatasetError::io(path, e))?;
    Ok(rows)
}

struct Columns {
    idx: Vec<usize>,
}

fn resolve_columns(
    headers: &csv::StringRecord,
    names: &[&str],
    path: &Path,
) -> Result<Columns, DatasetError> {
    let idx = names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| DatasetError::MissingColumn {
                    path: path.to_path_buf(),
                    column: name.to_string(),
                })
        })
        .collect::<Result<_, _>>()?;
    Ok(Columns { idx })
}

struct RowReader<'a> {
    rec: &'a csv::StringRecord,
    cols: &'a Columns,
    names: &'a [&'a str],
    line: u64,
    path: &'a Path,
}

impl RowReader<'_> {
    fn raw(&self, i: usize) -> &str {
        self.rec.get(self.cols.idx[i]).unwrap_or("").trim()
    }

    fn parse<T: std::str::FromStr>(&self, i: usize) -> Result<T, DatasetError> {
        let v = self.raw(i);
        v.parse().map_err(|_| DatasetError::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            column: self.names[i].to_string(),
            value: v.to_string(),
        })
    }
}

struct TrackLabels {
    mom: Vec3,
    pos: Vec3,
    charge: i32,
    line: u64,
}

/// Reads a hit file, grouping rows by `eventIndex` and rebuilding truth
/// tracks from `trackIndex > 0` signal rows. Invariant violations are
/// collected in the report; with `strict` they become an error.
pub fn read_events(path: &Path, geometry: &Geometry, strict: bool) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DatasetError::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| DatasetError::csv(path, e))?.clone();
    let names: Vec<&str> = std::iter::once(EVENT_COLUMN).chain(HIT_COLUMNS).collect();
    let cols = resolve_columns(&headers, &names, path)?;
    let extra_idx: Vec<usize> = (0..headers.len())
        .filter(|i| !cols.idx.contains(i))
        .collect();
    let extra_columns: Vec<String> = extra_idx.iter().map(|&i| headers[i].to_string()).collect();

    let mut findings = Vec::new();
    let mut events: BTreeMap<u64, (Vec<Hit>, BTreeMap<u32, TrackLabels>)> = BTreeMap::new();
    let mut seen: BTreeSet<(u64, WireId)> = BTreeSet::new();
    let mut extras = BTreeMap::new();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| DatasetError::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let r = RowReader {
            rec: &rec,
            cols: &cols,
            names: &names,
            line,
            path,
        };
        let event_id: u64 = r.parse(0)?;
        let middle_x: f64 = r.parse(1)?;
        let middle_y: f64 = r.parse(2)?;
        let layer: i64 = r.parse(3)?;
        let slayer: i64 = r.parse(4)?;
        let locallayer: i64 = r.parse(5)?;
        let drift: f64 = r.parse(6)?;
        let drift_err: f64 = r.parse(7)?;
        let is_signal: i64 = r.parse(8)?;
        let track_index: i64 = r.parse(9)?;
        let scaled: f64 = r.parse(10)?;
        let lr: i64 = r.parse(11)?;
        let mut tr = [0.0; 6];
        for (k, v) in tr.iter_mut().enumerate() {
            *v = r.parse(12 + k)?;
        }
        let charge: i64 = r.parse(18)?;

        let mut finding = |kind, message: String| {
            findings.push(Finding {
                line,
                kind,
                message,
            })
        };

        let Some(spec) = usize::try_from(layer)
            .ok()
            .and_then(|l| geometry.layer_spec(l).ok())
        else {
            finding(
                FindingKind::Range,
                format!("layer {layer} outside 0..{}", geometry.n_layers()),
            );
            continue;
        };
        if slayer != spec.superlayer as i64 || locallayer != spec.local_layer as i64 {
            finding(
                FindingKind::Range,
                format!(
                    "slayer/locallayer {slayer}/{locallayer} do not match layer {layer} ({}/{})",
                    spec.superlayer, spec.local_layer
                ),
            );
        }
        if !(0..=1).contains(&is_signal) {
            finding(FindingKind::Range, format!("isSignal {is_signal} not 0 or 1"));
        }
        if track_index < 0 || track_index > u32::MAX as i64 {
            finding(FindingKind::Range, format!("trackIndex {track_index} out of range"));
            continue;
        }
        if (is_signal == 1) != (track_index > 0) {
            finding(
                FindingKind::Inconsistency,
                format!("isSignal {is_signal} with trackIndex {track_index}"),
            );
        }
        if !(-1..=1).contains(&lr) {
            finding(FindingKind::Range, format!("lrAmbig {lr} not in -1..1"));
        }
        if drift < 0.0 || drift >= spec.half_cell_pitch() {
            finding(
                FindingKind::Range,
                format!(
                    "rawDriftDist {drift} outside [0, {})",
                    format_float(spec.half_cell_pitch())
                ),
            );
        }
        let signal_row = is_signal == 1 && track_index > 0;
        if signal_row && charge != 1 && charge != -1 {
            finding(FindingKind::Range, format!("charge {charge} on a signal row"));
        }

        let cell = geometry
            .cell_from_midpoint(spec.global_layer, middle_x, middle_y)
            .expect("layer checked");
        let wire = WireId::new(spec.global_layer, cell);
        if !seen.insert((event_id, wire)) {
            finding(
                FindingKind::DuplicateWire,
                format!("second hit on wire {wire} in event {event_id}"),
            );
            continue;
        }
        if !extra_idx.is_empty() {
            extras.insert(
                (event_id, wire),
                extra_idx.iter().map(|&i| rec.get(i).unwrap_or("").to_string()).collect(),
            );
        }

        let entry = events.entry(event_id).or_default();
        if signal_row {
            let labels = TrackLabels {
                mom: Vec3::new(tr[0], tr[1], tr[2]),
                pos: Vec3::new(tr[3], tr[4], tr[5]),
                charge: charge as i32,
                line,
            };
            match entry.1.get(&(track_index as u32)) {
                None => {
                    entry.1.insert(track_index as u32, labels);
                }
                Some(prev) => {
                    if prev.mom != labels.mom || prev.pos != labels.pos || prev.charge != labels.charge {
                        finding(
                            FindingKind::TrackLabelMismatch,
                            format!(
                                "trackIndex {track_index} labels differ from line {}",
                                prev.line
                            ),
                        );
                    }
                }
            }
        }
        entry.0.push(Hit {
            wire,
            middle_x,
            middle_y,
            layer: spec.global_layer,
            slayer: slayer.max(0) as usize,
            locallayer: locallayer.max(0) as usize,
            raw_drift_dist: drift,
            raw_drift_dist_err: drift_err,
            is_signal: is_signal == 1,
            track_index: track_index as u32,
            scaled_flt_len: scaled,
            lr_ambig: lr as i32,
        });
    }

    if strict && !findings.is_empty() {
        return Err(DatasetError::Validation {
            path: path.to_path_buf(),
            findings,
        });
    }

    let events = events
        .into_iter()
        .map(|(event_id, (hits, tracks))| {
            let truth = tracks
                .into_iter()
                .map(|(track_index, l)| TruthTrack {
                    track_index,
                    species: None,
                    state: KinematicState {
                        position: l.pos,
                        momentum: l.mom,
                        charge: l.charge,
                    },
                })
                .collect();
            let mut ev = Event {
                event_id,
                category: None,
                truth,
                hits,
            };
            ev.sort_hits();
            ev
        })
        .collect();
    Ok(Dataset {
        events,
        report: ValidationReport { findings },
        extra_columns,
        extras,
    })
}

fn format_hits(hits: &[WireId]) -> String {
    hits.iter()
        .map(WireId::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_hits(s: &str) -> Option<Vec<WireId>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(';')
        .map(|k| {
            let (l, c) = k.split_once(':')?;
            Some(WireId::new(l.trim().parse().ok()?, c.trim().parse().ok()?))
        })
        .collect()
}

/// Writes reconstructed tracks, one row per track and stage.
pub fn write_reco(tracks: &[RecoTrack], path: &Path) -> Result<usize, DatasetError> {
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    w.write_record(RECO_COLUMNS).map_err(|e| DatasetError::csv(path, e))?;
    let mut order: Vec<&RecoTrack> = tracks.iter().collect();
    order.sort_by_key(|t| (t.event_id, t.stage, t.reco_id));
    for t in &order {
        let p = &t.params;
        let f = format_float;
        w.write_record([
            t.event_id.to_string(),
            t.reco_id.to_string(),
            t.stage.to_string(),
            format_hits(&t.hits),
            f(p.d_r),
            f(p.phi0),
            f(p.kappa),
            f(p.d_z),
            f(p.tan_lambda),
            f(t.chi2),
            t.ndf.to_string(),
            u8::from(t.converged).to_string(),
            u8::from(t.z_constrained).to_string(),
        ])
        .map_err(|e| DatasetError::csv(path, e))?;
    }
    w.flush().map_err(|e| DatasetError::io(path, e))?;
    Ok(order.len())
}

pub fn read_reco(path: &Path) -> Result<Vec<RecoTrack>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DatasetError::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| DatasetError::csv(path, e))?.clone();
    let cols = resolve_columns(&headers, &RECO_COLUMNS, path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DatasetError::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let r = RowReader {
            rec: &rec,
            cols: &cols,
            names: &RECO_COLUMNS,
            line,
            path,
        };
        let parse_err = |i: usize| DatasetError::Parse {
            path: path.to_path_buf(),
            line,
            column: RECO_COLUMNS[i].to_string(),
            value: r.raw(i).to_string(),
        };
        let stage: Stage = r.raw(2).parse().map_err(|_| parse_err(2))?;
        let hits = parse_hits(r.raw(3)).ok_or_else(|| parse_err(3))?;
        let flag = |i: usize| -> Result<bool, DatasetError> {
            match r.raw(i) {
                "1" => Ok(true),
                "0" => Ok(false),
                _ => Err(parse_err(i)),
            }
        };
        out.push(RecoTrack {
            event_id: r.parse(0)?,
            reco_id: r.parse(1)?,
            stage,
            hits,
            params: HelixParams {
                d_r: r.parse(4)?,
                phi0: r.parse(5)?,
                kappa: r.parse(6)?,
                d_z: r.parse(7)?,
                tan_lambda: r.parse(8)?,
            },
            chi2: r.parse(9)?,
            ndf: r.parse(10)?,
            converged: flag(11)?,
            z_constrained: flag(12)?,
        });
    }
    Ok(out)
}

/// Writes `text` to `path`, mapping failures to [`DatasetError::Io`].
pub fn write_text(path: &Path, text: &str) -> Result<(), DatasetError> {
    let mut f = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| DatasetError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format() {
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(-0.0), "0");
        assert_eq!(format_float(1.0), "1");
        assert_eq!(format_float(7.9), "7.9");
        assert_eq!(format_float(-0.013), "-0.013");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333");
        assert_eq!(format_float(123456789.4), "123456789");
        assert_eq!(format_float(1234567890.0), "1.23456789e9");
        assert_eq!(format_float(1.5e-7), "1.5e-7");
        assert_eq!(format_float(0.00012345), "0.00012345");
        assert_eq!(format_float(2.0 * std::f64::consts::PI), "6.28318531");
    }

    #[test]
    fn float_format_is_stable() {
        for v in [1.0 / 7.0, -123.456789123, 6.02e23, 1e-12, 0.999999999951] {
            let s = format_float(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(format_float(back), s);
            assert!((back - v).abs() <= 5e-9 * v.abs());
        }
    }

    #[test]
    fn hit_list_encoding() {
        let hits = vec![WireId::new(0, 3), WireId::new(42, 287)];
        assert_eq!(format_hits(&hits), "0:3;42:287");
        assert_eq!(parse_hits("0:3;42:287").unwrap(), hits);
        assert_eq!(parse_hits("").unwrap(), vec![]);
        assert!(parse_hits("0-3").is_none());
    }
}
