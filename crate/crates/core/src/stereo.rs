//! z information from stereo hits, shared by the finder and the fitter.
//!
//! Given a transverse circle, a stereo hit constrains z to (at most) two
//! values, one per left/right choice: the z at which the twisted wire sits at
//! exactly the drift distance from the circle.

use crate::geometry::Geometry;
use crate::helix::Helix;
use crate::sim::Hit;
use std::f64::consts::PI;

/// One left/right solution of a stereo hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoEntry {
    /// Transverse arc length along the circle.
    pub s: f64,
    pub z: f64,
    /// z uncertainty corresponding to the transverse tolerance.
    pub half: f64,
}

/// A line `z = d_z + tan_lambda * s` with the entries it accepted, as
/// `(hit slot, entry)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ZLine {
    pub d_z: f64,
    pub tan_lambda: f64,
    pub inliers: Vec<(usize, StereoEntry)>,
}

/// Solutions of `|W(z) - C| - R = ±drift` for the wire of `hit`, with `C`,
/// `R` the circle of `helix`. `tolerance` is a transverse distance, cm.
pub fn stereo_entries(
    helix: &Helix,
    geometry: &Geometry,
    hit: &Hit,
    tolerance: f64,
) -> Vec<StereoEntry> {
    let Ok(seg) = geometry.wire_segment(hit.wire) else {
        return Vec::new();
    };
    let Ok(spec) = geometry.layer_spec(hit.wire.layer) else {
        return Vec::new();
    };
    let w0 = seg.point_at_z(0.0).xy();
    let w1 = (seg.b - seg.a).xy() / (seg.b.z - seg.a.z);
    let c = helix.center();
    let r = helix.radius();
    let g = |z: f64| {
        let rel = w0 + w1 * z - c;
        let dist = rel.norm();
        (dist - r, w1.dot(&rel) / dist)
    };
    let mut out = Vec::new();
    let signs: &[f64] = if hit.raw_drift_dist > 0.0 {
        &[1.0, -1.0]
    } else {
        &[1.0]
    };
    for &sg in signs {
        let target = sg * hit.raw_drift_dist;
        let mut z = 0.0;
        let mut slope = 0.0;
        let mut ok = true;
        for _ in 0..8 {
            let (v, d) = g(z);
            slope = d;
            if d.abs() < 1e-9 {
                ok = false;
                break;
            }
            let step = (v - target) / d;
            z -= step;
            if step.abs() < 1e-9 {
                break;
            }
        }
        if !ok || !z.is_finite() {
            continue;
        }
        let half = tolerance / slope.abs();
        if z + half < -spec.half_length || z - half > spec.half_length {
            continue;
        }
        let s = helix.arclength_near(w0 + w1 * z);
        if s <= 0.0 || s > PI * r {
            continue;
        }
        out.push(StereoEntry { s, z, half });
    }
    out
}

/// Weighted least-squares line through `(s, z, half)` points.
pub fn fit_z_line(points: &[StereoEntry]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let (mut sw, mut ss, mut sz, mut sss, mut ssz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for e in points {
        let w = 1.0 / (e.half * e.half);
        sw += w;
        ss += w * e.s;
        sz += w * e.z;
        sss += w * e.s * e.s;
        ssz += w * e.s * e.z;
    }
    let det = sw * sss - ss * ss;
    if !(det > 1e-12 * sw * sss) {
        return None;
    }
    let tl = (sw * ssz - ss * sz) / det;
    let dz = (sz - tl * ss) / sw;
    Some((dz, tl))
}

/// Normalised distance of the line from an entry.
pub fn entry_residual(e: &StereoEntry, d_z: f64, tan_lambda: f64) -> f64 {
    (d_z + tan_lambda * e.s - e.z).abs() / e.half
}

/// Line consistent with the most hits, each hit contributing at most one
/// entry within `cut` normalised units. Candidate lines pass through every
/// pair of entries from different hits; ties go to the smaller summed
/// squared residual, then to the earlier pair. The winner is refit to its
/// inliers.
pub fn best_z_line(
    entries: &[Vec<StereoEntry>],
    d_z_max: f64,
    tan_lambda_max: f64,
    cut: f64,
) -> Option<ZLine> {
    let flat: Vec<(usize, StereoEntry)> = entries
        .iter()
        .enumerate()
        .flat_map(|(h, list)| list.iter().map(move |e| (h, *e)))
        .collect();
    let score = |dz: f64, tl: f64| -> (usize, f64) {
        let mut n = 0;
        let mut cost = 0.0;
        for list in entries {
            let best = list
                .iter()
                .map(|e| entry_residual(e, dz, tl))
                .fold(f64::INFINITY, f64::min);
            if best <= cut {
                n += 1;
                cost += best * best;
            }
        }
        (n, cost)
    };
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for (a, (ha, ea)) in flat.iter().enumerate() {
        for (hb, eb) in &flat[a + 1..] {
            if ha == hb {
                continue;
            }
            let ds = eb.s - ea.s;
            if ds.abs() < 1.0 {
                continue;
            }
            let tl = (eb.z - ea.z) / ds;
            let dz = ea.z - tl * ea.s;
            if tl.abs() > tan_lambda_max || dz.abs() > d_z_max {
                continue;
            }
            let (n, cost) = score(dz, tl);
            let better = match best {
                None => true,
                Some((bn, bc, _, _)) => n > bn || (n == bn && cost < bc),
            };
            if better {
                best = Some((n, cost, dz, tl));
            }
        }
    }
    let (_, _, mut dz, mut tl) = best?;
    let mut inliers = Vec::new();
    for _ in 0..4 {
        inliers = select(entries, dz, tl, cut);
        let pts: Vec<StereoEntry> = inliers.iter().map(|(_, e)| *e).collect();
        match fit_z_line(&pts) {
            Some((d, t)) if (d - dz).abs() < 1e-12 && (t - tl).abs() < 1e-12 => break,
            Some((d, t)) => {
                dz = d;
                tl = t;
            }
            None => break,
        }
    }
    if inliers.len() < 2 {
        return None;
    }
    inliers = select(entries, dz, tl, cut);
    Some(ZLine {
        d_z: dz,
        tan_lambda: tl,
        inliers,
    })
}

fn select(entries: &[Vec<StereoEntry>], dz: f64, tl: f64, cut: f64) -> Vec<(usize, StereoEntry)> {
    entries
        .iter()
        .enumerate()
        .filter_map(|(h, list)| {
            list.iter()
                .map(|e| (entry_residual(e, dz, tl), *e))
                .filter(|(r, _)| *r <= cut)
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, e)| (h, e))
        })
        .collect()
}
