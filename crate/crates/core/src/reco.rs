//! Reconstruction pipeline: finder followed by the fitter.

use crate::finder::{find_tracks, FinderConfig};
use crate::fitter::{fit_track, FitterConfig};
use crate::geometry::{Geometry, WireId};
use crate::helix::HelixParams;
use crate::sim::Event;
use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Finder,
    Fitter,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Finder => "finder",
            Stage::Fitter => "fitter",
        })
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "finder" => Ok(Stage::Finder),
            "fitter" => Ok(Stage::Fitter),
            other => Err(format!("unknown stage '{other}'")),
        }
    }
}

/// One reconstructed track at one pipeline stage.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoTrack {
    pub event_id: u64,
    pub reco_id: u32,
    pub stage: Stage,
    /// Sorted wire keys of the assigned hits.
    pub hits: Vec<WireId>,
    pub params: HelixParams,
    /// NaN for finder rows.
    pub chi2: f64,
    pub ndf: i64,
    pub converged: bool,
    pub z_constrained: bool,
}

/// Runs the finder and, when `fit` is set, the fitter on one event.
/// Finder rows come first, then fitter rows with the same ids.
pub fn reconstruct_event(
    event: &Event,
    geometry: &Geometry,
    finder: &FinderConfig,
    fitter: &FitterConfig,
    fit: bool,
) -> Vec<RecoTrack> {
    let candidates = find_tracks(&event.hits, geometry, finder);
    let mut out = Vec::with_capacity(2 * candidates.len());
    for (id, c) in candidates.iter().enumerate() {
        let mut hits: Vec<WireId> = c.hit_ids.iter().map(|&i| event.hits[i].wire).collect();
        hits.sort_unstable();
        out.push(RecoTrack {
            event_id: event.event_id,
            reco_id: id as u32,
            stage: Stage::Finder,
            hits,
            params: c.seed,
            chi2: f64::NAN,
            ndf: 0,
            converged: false,
            z_constrained: c.z_constrained,
        });
    }
    if fit {
        for (id, c) in candidates.iter().enumerate() {
            let row = match fit_track(&event.hits, &c.hit_ids, &c.seed, geometry, fitter) {
                Ok(r) => RecoTrack {
                    params: r.params,
                    chi2: r.chi2,
                    ndf: r.ndf,
                    converged: r.converged,
                    z_constrained: r.z_constrained,
                    ..out[id].clone()
                },
                // Rejected fits keep the seed and are reported unconverged.
                Err(_) => out[id].clone(),
            };
            out.push(RecoTrack {
                stage: Stage::Fitter,
                ..row
            });
        }
    }
    out
}

/// Event-parallel reconstruction; output order follows `events`.
pub fn reconstruct_events(
    events: &[Event],
    geometry: &Geometry,
    finder: &FinderConfig,
    fitter: &FitterConfig,
    fit: bool,
) -> Vec<RecoTrack> {
    events
        .par_iter()
        .map(|e| reconstruct_event(e, geometry, finder, fitter, fit))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}
