//! Event generation: kinematic sampling, digitization of helix crossings,
//! parametric noise overlay and the minimum-layer track selection.

use crate::geometry::{Geometry, Vec3, WireId};
use crate::helix::{Helix, KinematicState};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

pub const PT_RANGE: (f64, f64) = (0.15, 1.5);
pub const COS_THETA_RANGE: (f64, f64) = (-0.93, 0.93);
pub const CLOSE_BY_DPHI: f64 = 0.2;
/// Tracks must leave hits on at least this many distinct layers.
pub const MIN_TRACK_LAYERS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Single,
    ConventionalTwo,
    CloseByTwo,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Single => "single",
            Category::ConventionalTwo => "conventional-two",
            Category::CloseByTwo => "close-by-two",
        })
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Category::Single),
            "conventional-two" | "conventional" => Ok(Category::ConventionalTwo),
            "close-by-two" | "close-by" | "closeby" => Ok(Category::CloseByTwo),
            _ => Err(format!(
                "unknown category '{s}' (expected single, conventional-two or close-by-two)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Species {
    Electron,
    Muon,
    Pion,
    Kaon,
    Proton,
}

impl Species {
    pub const ALL: [Species; 5] = [
        Species::Electron,
        Species::Muon,
        Species::Pion,
        Species::Kaon,
        Species::Proton,
    ];
}

/// Species together with its charge sign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Particle {
    pub species: Species,
    pub charge: i32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    /// Mean number of noise hits per event.
    pub noise_rate: f64,
    /// Per-hit detection efficiency.
    pub det_efficiency: f64,
    /// Single-wire resolution, cm.
    pub sigma_drift: f64,
    /// Tesla.
    pub b_field: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            noise_rate: 30.0,
            det_efficiency: 0.98,
            sigma_drift: 0.013,
            b_field: 1.0,
        }
    }
}

/// One detector hit, one row of the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub wire: WireId,
    pub middle_x: f64,
    pub middle_y: f64,
    pub layer: usize,
    pub slayer: usize,
    pub locallayer: usize,
    pub raw_drift_dist: f64,
    pub raw_drift_dist_err: f64,
    pub is_signal: bool,
    pub track_index: u32,
    pub scaled_flt_len: f64,
    pub lr_ambig: i32,
}

impl Hit {
    fn at_wire(geometry: &Geometry, wire: WireId) -> Self {
        let spec = geometry.check(wire).expect("wire comes from the geometry");
        let m = geometry.wire_midpoint(wire).expect("valid wire");
        Hit {
            wire,
            middle_x: m.x,
            middle_y: m.y,
            layer: spec.global_layer,
            slayer: spec.superlayer,
            locallayer: spec.local_layer,
            raw_drift_dist: 0.0,
            raw_drift_dist_err: 0.0,
            is_signal: false,
            track_index: 0,
            scaled_flt_len: 0.0,
            lr_ambig: 0,
        }
    }

    fn make_noise(&mut self) {
        self.is_signal = false;
        self.track_index = 0;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthTrack {
    /// Always > 0.
    pub track_index: u32,
    /// Not recorded in the dataset schema; `None` for tracks read from file.
    pub species: Option<Species>,
    pub state: KinematicState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub event_id: u64,
    /// Not recorded in the dataset schema; `None` for events read from file.
    pub category: Option<Category>,
    pub truth: Vec<TruthTrack>,
    /// Sorted by `(layer, cell)`, at most one hit per wire.
    pub hits: Vec<Hit>,
}

impl Event {
    pub fn hits_of(&self, track_index: u32) -> impl Iterator<Item = &Hit> {
        self.hits
            .iter()
            .filter(move |h| h.is_signal && h.track_index == track_index)
    }

    pub fn sort_hits(&mut self) {
        self.hits.sort_by_key(|h| h.wire);
    }
}

/// Draws the primary particles of one event, all produced at the origin.
pub fn sample_kinematics<R: Rng + ?Sized>(
    category: Category,
    rng: &mut R,
) -> Vec<(Particle, KinematicState)> {
    let draw = |charge: i32, phi: f64, rng: &mut R| {
        let pt = rng.random_range(PT_RANGE.0..=PT_RANGE.1);
        let cos_theta = rng.random_range(COS_THETA_RANGE.0..=COS_THETA_RANGE.1);
        let sin_theta = (1.0 - cos_theta * cos_theta).sqrt();
        KinematicState {
            position: Vec3::zeros(),
            momentum: Vec3::new(pt * phi.cos(), pt * phi.sin(), pt * cos_theta / sin_theta),
            charge,
        }
    };
    match category {
        Category::Single => {
            let species = Species::ALL[rng.random_range(0..Species::ALL.len())];
            let charge = if rng.random_bool(0.5) { 1 } else { -1 };
            let phi = rng.random_range(0.0..2.0 * PI);
            vec![(Particle { species, charge }, draw(charge, phi, rng))]
        }
        Category::ConventionalTwo | Category::CloseByTwo => {
            let phi1 = rng.random_range(0.0..2.0 * PI);
            let phi2 = if category == Category::CloseByTwo {
                (phi1 + CLOSE_BY_DPHI).rem_euclid(2.0 * PI)
            } else {
                rng.random_range(0.0..2.0 * PI)
            };
            let pion = |charge| Particle {
                species: Species::Pion,
                charge,
            };
            // Either charge may lead in azimuth, so close-by pairs bend
            // towards each other as often as apart.
            let first: i32 = if rng.random_bool(0.5) { 1 } else { -1 };
            let a = draw(first, phi1, rng);
            let b = draw(-first, phi2, rng);
            vec![(pion(first), a), (pion(-first), b)]
        }
    }
}

/// Solves for the first arc length at which the track reaches the wire
/// surface of `layer` on its outgoing half-turn.
fn layer_crossing(helix: &Helix, geometry: &Geometry, layer: usize) -> Option<f64> {
    let spec = geometry.layer_spec(layer).ok()?;
    let f = |s: f64| {
        let p = helix.point_at_arclength(s);
        p.xy().norm() - spec.surface_radius_at(p.z)
    };
    let mut lo = 0.0;
    let mut hi = PI * helix.radius();
    if f(lo) >= 0.0 || f(hi) < 0.0 {
        return None;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Layers whose wire surface the track reaches inside the chamber length.
pub fn crossed_layers(helix: &Helix, geometry: &Geometry) -> Vec<(usize, f64)> {
    (0..geometry.n_layers())
        .filter_map(|l| {
            let s = layer_crossing(helix, geometry, l)?;
            let z = helix.point_at_arclength(s).z;
            let hl = geometry.layer_spec(l).ok()?.half_length;
            (z.abs() <= hl).then_some((l, s))
        })
        .collect()
}

/// Hits left by one track, before efficiency-independent event cleanup.
pub fn digitize<R: Rng + ?Sized>(
    track: &TruthTrack,
    geometry: &Geometry,
    config: &SimConfig,
    rng: &mut R,
) -> Vec<Hit> {
    let Ok(helix) = Helix::from_state(&track.state, config.b_field) else {
        return Vec::new();
    };
    let smear = Normal::new(0.0, config.sigma_drift.max(0.0)).expect("finite sigma");
    let turn = 2.0 * PI * helix.radius();
    let mut hits = Vec::new();
    for (layer, s_cross) in crossed_layers(&helix, geometry) {
        let spec = geometry.layer_spec(layer).expect("layer from geometry");
        let crossing = helix.point_at_arclength(s_cross);
        let wire = geometry.nearest_wire(layer, &crossing).expect("valid layer");
        let seg = geometry.wire_segment(wire).expect("valid wire");
        let window = 2.0 * spec.cell_pitch();
        let Ok(approach) = helix.poca_to_wire_in(&seg, s_cross - window, s_cross + window, 32)
        else {
            continue;
        };
        // Draw both numbers unconditionally so the stream layout does not
        // depend on the efficiency outcome.
        let noise = smear.sample(rng);
        let survives = rng.random::<f64>() < config.det_efficiency;
        if !survives {
            continue;
        }
        let half_pitch = spec.half_cell_pitch();
        let drift = (approach.doca + noise).abs().min(half_pitch * (1.0 - 1e-6));
        let mut hit = Hit::at_wire(geometry, wire);
        hit.raw_drift_dist = drift;
        hit.raw_drift_dist_err = config.sigma_drift;
        hit.is_signal = true;
        hit.track_index = track.track_index;
        hit.scaled_flt_len = approach.s / turn;
        hit.lr_ambig = approach.side;
        hits.push(hit);
    }
    hits
}

/// Adds `Poisson(noise_rate)` noise hits on unoccupied wires.
pub fn overlay_noise<R: Rng + ?Sized>(
    mut event: Event,
    geometry: &Geometry,
    noise_rate: f64,
    sigma_drift: f64,
    rng: &mut R,
) -> Event {
    if !(noise_rate > 0.0) {
        return event;
    }
    let n = Poisson::new(noise_rate).expect("positive rate").sample(rng) as usize;
    let total = geometry.n_wires();
    let mut occupied: BTreeSet<WireId> = event.hits.iter().map(|h| h.wire).collect();
    let free = total.saturating_sub(occupied.len());
    for _ in 0..n.min(free) {
        let wire = loop {
            let w = geometry
                .wire_from_index(rng.random_range(0..total))
                .expect("index in range");
            if !occupied.contains(&w) {
                break w;
            }
        };
        occupied.insert(wire);
        let spec = geometry.layer_spec(wire.layer).expect("valid");
        let mut hit = Hit::at_wire(geometry, wire);
        hit.raw_drift_dist = rng.random_range(0.0..spec.half_cell_pitch());
        hit.raw_drift_dist_err = sigma_drift;
        event.hits.push(hit);
    }
    event.sort_hits();
    event
}

/// Relabels tracks spanning fewer than [`MIN_TRACK_LAYERS`] layers as noise
/// and drops them from the truth list.
pub fn apply_track_selection(mut event: Event) -> Event {
    let mut layers: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for h in event.hits.iter().filter(|h| h.is_signal) {
        layers.entry(h.track_index).or_default().insert(h.layer);
    }
    let keep = |t: u32| layers.get(&t).is_some_and(|l| l.len() >= MIN_TRACK_LAYERS);
    for h in event.hits.iter_mut() {
        if h.is_signal && !keep(h.track_index) {
            h.make_noise();
        }
    }
    event.truth.retain(|t| keep(t.track_index));
    event
}

/// Merges per-track hits keeping, per wire, the one with the smallest drift.
fn merge_hits(per_track: Vec<Vec<Hit>>) -> Vec<Hit> {
    let mut by_wire: BTreeMap<WireId, Hit> = BTreeMap::new();
    for h in per_track.into_iter().flatten() {
        match by_wire.get(&h.wire) {
            Some(prev) if prev.raw_drift_dist <= h.raw_drift_dist => {}
            _ => {
                by_wire.insert(h.wire, h);
            }
        }
    }
    by_wire.into_values().collect()
}

/// Deterministic generator stream for one event.
pub fn event_rng(seed: u64, event_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(event_id);
    rng
}

pub fn generate_event(
    geometry: &Geometry,
    config: &SimConfig,
    category: Category,
    seed: u64,
    event_id: u64,
) -> Event {
    let mut rng = event_rng(seed, event_id);
    let particles = sample_kinematics(category, &mut rng);
    let truth: Vec<TruthTrack> = particles
        .into_iter()
        .enumerate()
        .map(|(i, (p, state))| TruthTrack {
            track_index: i as u32 + 1,
            species: Some(p.species),
            state,
        })
        .collect();
    let per_track = truth
        .iter()
        .map(|t| digitize(t, geometry, config, &mut rng))
        .collect();
    let event = Event {
        event_id,
        category: Some(category),
        truth,
        hits: merge_hits(per_track),
    };
    let event = apply_track_selection(event);
    overlay_noise(event, geometry, config.noise_rate, config.sigma_drift, &mut rng)
}

/// Generates events `0..n_events`; each event has its own RNG stream so the
/// result is independent of evaluation order.
pub fn generate_events(
    geometry: &Geometry,
    config: &SimConfig,
    category: Category,
    seed: u64,
    n_events: u64,
) -> Vec<Event> {
    use rayon::prelude::*;
    (0..n_events)
        .into_par_iter()
        .map(|id| generate_event(geometry, config, category, seed, id))
        .collect()
}
