//! Helpers shared by the integration tests. Oracles here avoid the library
//! code paths they are used to check.
#![allow(dead_code)]

use mdc_track::geometry::{Geometry, Vec3, WireId};
use mdc_track::helix::{Helix, HelixParams, KinematicState};
use mdc_track::sim::{Event, Hit, TruthTrack};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Distance from `p` to the segment `a`-`b`.
pub fn segment_distance(a: &Vec3, b: &Vec3, p: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.dot(&ab)).clamp(0.0, 1.0);
    (a + ab * t - p).norm()
}

/// Helix point at transverse arc length `s`, written out from the circle
/// centre and turning sense rather than through `Helix::point_at_arclength`.
pub fn helix_point(p: &HelixParams, b_field: f64, s: f64) -> Vec3 {
    let q = p.kappa.signum();
    let r = 100.0 / (p.kappa.abs() * 0.299792458 * b_field);
    let (sp, cp) = p.phi0.sin_cos();
    let cx = -(q * p.d_r + r) * cp;
    let cy = -(q * p.d_r + r) * sp;
    let psi = p.phi0 - q * s / r;
    Vec3::new(cx + r * psi.cos(), cy + r * psi.sin(), p.d_z + s * p.tan_lambda)
}

/// Uniform random origin track with the generator's kinematic ranges.
pub fn random_origin_state<R: Rng>(rng: &mut R) -> KinematicState {
    let pt = rng.random_range(0.15..1.5);
    let cos_t: f64 = rng.random_range(-0.93..0.93);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let charge = if rng.random_bool(0.5) { 1 } else { -1 };
    state_at_origin(pt, cos_t, phi, charge)
}

pub fn state_at_origin(pt: f64, cos_theta: f64, phi: f64, charge: i32) -> KinematicState {
    let sin_t = (1.0 - cos_theta * cos_theta).sqrt();
    KinematicState {
        position: Vec3::zeros(),
        momentum: Vec3::new(pt * phi.cos(), pt * phi.sin(), pt * cos_theta / sin_t),
        charge,
    }
}

pub fn truth_track(state: KinematicState, track_index: u32) -> TruthTrack {
    TruthTrack {
        track_index,
        species: None,
        state,
    }
}

/// Event built from already digitised tracks, hits sorted by wire.
pub fn event_of(event_id: u64, truth: Vec<TruthTrack>, mut hits: Vec<Hit>) -> Event {
    hits.sort_by_key(|h| h.wire);
    Event {
        event_id,
        category: None,
        truth,
        hits,
    }
}

pub fn helix_of(state: &KinematicState) -> Helix {
    Helix::from_state(state, 1.0).expect("valid state")
}

pub fn wires(hits: &[Hit]) -> Vec<WireId> {
    hits.iter().map(|h| h.wire).collect()
}

pub fn besiii() -> Geometry {
    Geometry::besiii()
}
pub mod matching;
