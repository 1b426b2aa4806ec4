//! Baseline pattern recognition.
//!
//! Axial hits are mapped to conformal space, where tracks from the origin
//! become straight lines, and voted into a Hough accumulator over the
//! transverse direction at the origin and the signed curvature `q/pT`.
//! Every hit votes for the full band of parameters compatible with any
//! position inside its cell, so an undisturbed track collects one vote per
//! axial hit in a common bin. Peaks are extracted one at a time; each peak
//! claims the hits inside its road, is refit, and its neighbourhood is
//! suppressed before re-voting with the remaining hits.
//!
//! Stereo hits are attached afterwards: intersecting each stereo wire with a
//! candidate's transverse circle gives one z per left/right choice, and the
//! straight line in `(s, z)` supported by the most hits picks the consistent
//! subset.

use crate::geometry::{Geometry, Vec2};
use crate::helix::{curvature_per_kappa, normalize_angle, Helix, HelixParams};
use crate::sim::Hit;
use crate::stereo::{best_z_line, entry_residual, fit_z_line, stereo_entries, StereoEntry, ZLine};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinderConfig {
    pub phi_bins: usize,
    pub kappa_bins: usize,
    /// Accumulator covers `kappa` in `[-kappa_max, kappa_max]`, (GeV/c)^-1.
    pub kappa_max: f64,
    /// Hit road half-width in cell pitches of the hit's layer.
    pub road_pitches: f64,
    /// Scale applied to the half cell angle when voting.
    pub vote_margin: f64,
    pub min_votes: u32,
    pub min_axial_hits: usize,
    pub min_hits: usize,
    pub max_candidates: usize,
    /// Non-maximum suppression half-window, in bins.
    pub nms_phi: usize,
    pub nms_kappa: usize,
    /// Transverse tolerance used to turn a stereo hit into a z interval, cm.
    pub stereo_tolerance: f64,
    /// Bounds on the z line, cm and dimensionless.
    pub dz_max: f64,
    pub tan_lambda_max: f64,
    pub min_stereo_hits: usize,
    /// Tesla; set from the run configuration.
    #[serde(skip)]
    pub b_field: f64,
}

impl Default for FinderConfig {
    fn default() -> Self {
        FinderConfig {
            phi_bins: 720,
            kappa_bins: 200,
            kappa_max: 1.0 / 0.15,
            road_pitches: 3.0,
            vote_margin: 1.1,
            min_votes: 6,
            min_axial_hits: 6,
            min_hits: 6,
            max_candidates: 8,
            nms_phi: 8,
            nms_kappa: 8,
            stereo_tolerance: 0.1,
            dz_max: 20.0,
            tan_lambda_max: 3.0,
            min_stereo_hits: 2,
            b_field: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackCandidate {
    /// Indices into the event's hit list, ascending.
    pub hit_ids: Vec<usize>,
    pub seed: HelixParams,
    /// Accumulator votes of the transverse peak.
    pub quality: u32,
    /// Whether stereo hits fixed `d_z` and `tan_lambda`.
    pub z_constrained: bool,
}

/// Charge implied by the seed curvature.
pub fn seed_charge(candidate: &TrackCandidate) -> i32 {
    candidate.seed.charge()
}

#[derive(Clone, Copy, Debug)]
struct AxialHit {
    idx: usize,
    pos: Vec2,
    rho: f64,
    alpha: f64,
    half_angle: f64,
    road: f64,
    drift: f64,
}

/// Circle through the origin, described by the direction of motion at the
/// origin and the signed curvature.
#[derive(Clone, Copy, Debug, PartialEq)]
struct OriginCircle {
    phi: f64,
    kappa: f64,
}

impl OriginCircle {
    fn center(&self, k: f64) -> Vec2 {
        Vec2::new(self.phi.sin(), -self.phi.cos()) / (k * self.kappa)
    }

    fn residual(&self, p: Vec2, k: f64) -> f64 {
        let ahead = (p.y.atan2(p.x) - self.phi).cos() > 0.0;
        if !ahead {
            return f64::INFINITY;
        }
        let r = 1.0 / (k * self.kappa.abs());
        ((p - self.center(k)).norm() - r).abs()
    }

    /// Distance between the circle and the hit's drift circle.
    fn drift_residual(&self, h: &AxialHit, k: f64) -> f64 {
        let ahead = (h.alpha - self.phi).cos() > 0.0;
        if !ahead {
            return f64::INFINITY;
        }
        let r = 1.0 / (k * self.kappa.abs());
        (((h.pos - self.center(k)).norm() - r).abs() - h.drift).abs()
    }

    fn helix_params(&self, d_z: f64, tan_lambda: f64) -> HelixParams {
        HelixParams {
            d_r: 0.0,
            phi0: normalize_angle(self.phi + self.kappa.signum() * PI / 2.0),
            kappa: self.kappa,
            d_z,
            tan_lambda,
        }
    }
}

struct Accumulator {
    n_phi: usize,
    n_kappa: usize,
    kappa_max: f64,
    votes: Vec<u16>,
}

impl Accumulator {
    fn new(n_phi: usize, n_kappa: usize, kappa_max: f64) -> Self {
        Accumulator {
            n_phi,
            n_kappa,
            kappa_max,
            votes: vec![0; n_phi * n_kappa],
        }
    }

    fn dphi(&self) -> f64 {
        2.0 * PI / self.n_phi as f64
    }

    fn dkappa(&self) -> f64 {
        2.0 * self.kappa_max / self.n_kappa as f64
    }

    fn phi_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dphi()
    }

    fn kappa_center(&self, j: usize) -> f64 {
        -self.kappa_max + (j as f64 + 0.5) * self.dkappa()
    }

    fn kappa_bin(&self, kappa: f64) -> usize {
        let b = ((kappa + self.kappa_max) / self.dkappa()).floor();
        b.clamp(0.0, (self.n_kappa - 1) as f64) as usize
    }

    fn clear(&mut self) {
        self.votes.fill(0);
    }

    fn vote(&mut self, h: &AxialHit, k: f64, margin: f64) {
        let scale = h.rho * k;
        let x_max = (0.5 * scale * self.kappa_max).min(1.0).asin();
        let half = h.half_angle * margin + 0.5 * self.dphi();
        let span = x_max + half;
        let first = ((h.alpha - span) / self.dphi()).floor() as i64;
        let last = ((h.alpha + span) / self.dphi()).ceil() as i64;
        for i in first..=last {
            let bin = i.rem_euclid(self.n_phi as i64) as usize;
            let x = crate::helix::angle_diff(self.phi_center(bin), h.alpha);
            let lo = (x - half).max(-x_max);
            let hi = (x + half).min(x_max);
            if lo > hi {
                continue;
            }
            let k_lo = self.kappa_bin(2.0 * lo.sin() / scale);
            let k_hi = self.kappa_bin(2.0 * hi.sin() / scale);
            let row = bin * self.n_kappa;
            for v in &mut self.votes[row + k_lo..=row + k_hi] {
                *v = v.saturating_add(1);
            }
        }
    }

    /// Highest unsuppressed bin, ties to the lowest index.
    fn peak(&self, suppressed: &[bool]) -> Option<(usize, usize, u16)> {
        let mut best: Option<(usize, u16)> = None;
        for (i, (&v, &s)) in self.votes.iter().zip(suppressed).enumerate() {
            if !s && v > 0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, v)| (i / self.n_kappa, i % self.n_kappa, v))
    }

    /// Vote-weighted centre of the 3x3 neighbourhood of a peak.
    fn refine(&self, pi: usize, kj: usize, peak: u16) -> OriginCircle {
        let floor = peak.saturating_sub(2) as f64;
        let (mut w, mut sp, mut sk) = (0.0, 0.0, 0.0);
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let j = kj as i64 + dj;
                if j < 0 || j >= self.n_kappa as i64 {
                    continue;
                }
                let i = (pi as i64 + di).rem_euclid(self.n_phi as i64) as usize;
                let v = self.votes[i * self.n_kappa + j as usize] as f64 - floor;
                if v > 0.0 {
                    w += v;
                    sp += v * di as f64;
                    sk += v * dj as f64;
                }
            }
        }
        let (op, ok) = if w > 0.0 { (sp / w, sk / w) } else { (0.0, 0.0) };
        OriginCircle {
            phi: normalize_angle(self.phi_center(pi) + op * self.dphi()),
            kappa: self.kappa_center(kj) + ok * self.dkappa(),
        }
    }

    fn bins_at_least(&self, level: u16, suppressed: &[bool], limit: usize) -> Vec<usize> {
        self.votes
            .iter()
            .zip(suppressed)
            .enumerate()
            .filter(|(_, (&v, &s))| !s && v >= level)
            .map(|(i, _)| i)
            .take(limit)
            .collect()
    }

    /// Bins connected to the peak whose votes are at least `level`.
    fn plateau(&self, pi: usize, kj: usize, level: u16, limit: usize) -> Vec<(usize, usize)> {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![(pi, kj)];
        let mut out = Vec::new();
        seen.insert((pi, kj));
        while let Some((i, j)) = stack.pop() {
            out.push((i, j));
            if out.len() >= limit {
                break;
            }
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let nj = j as i64 + dj;
                    if nj < 0 || nj >= self.n_kappa as i64 {
                        continue;
                    }
                    let ni = (i as i64 + di).rem_euclid(self.n_phi as i64) as usize;
                    let key = (ni, nj as usize);
                    if self.votes[ni * self.n_kappa + key.1] >= level && seen.insert(key) {
                        stack.push(key);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn suppress(&self, suppressed: &mut [bool], pi: usize, kj: usize, wp: usize, wk: usize) {
        for di in -(wp as i64)..=wp as i64 {
            let i = (pi as i64 + di).rem_euclid(self.n_phi as i64) as usize;
            let lo = kj.saturating_sub(wk);
            let hi = (kj + wk).min(self.n_kappa - 1);
            for j in lo..=hi {
                suppressed[i * self.n_kappa + j] = true;
            }
        }
    }
}

/// Weighted orthogonal line fit in conformal space, i.e. a circle fit
/// constrained through the origin. Weights follow the `1/rho^2` shrinking of
/// position errors under the mapping.
fn fit_origin_circle(
    hits: &[&AxialHit],
    weights: &[f64],
    k: f64,
    fallback: OriginCircle,
) -> OriginCircle {
    if hits.len() < 3 {
        return fallback;
    }
    let pts: Vec<(Vec2, f64)> = hits
        .iter()
        .zip(weights)
        .map(|(h, w)| (h.pos / (h.rho * h.rho), w * h.rho.powi(4)))
        .collect();
    let wsum: f64 = pts.iter().map(|p| p.1).sum();
    let mean = pts.iter().fold(Vec2::zeros(), |a, (p, w)| a + p * *w) / wsum;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (p, w) in &pts {
        let d = p - mean;
        sxx += w * d.x * d.x;
        syy += w * d.y * d.y;
        sxy += w * d.x * d.y;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let mut n = Vec2::new(-theta.sin(), theta.cos());
    let mut c = n.dot(&mean);
    let mut phi = n.x.atan2(-n.y);
    let ahead: f64 = hits.iter().map(|h| (h.alpha - phi).cos()).sum();
    if ahead < 0.0 {
        n = -n;
        c = -c;
        phi = n.x.atan2(-n.y);
    }
    let kappa = 2.0 * c / k;
    if !kappa.is_finite() || kappa == 0.0 {
        return fallback;
    }
    OriginCircle {
        phi: normalize_angle(phi),
        kappa,
    }
}

/// Cauchy scales of the annealed drift-circle fit, cm.
const ANNEAL: [f64; 8] = [1.0, 0.5, 0.25, 0.12, 0.06, 0.04, 0.04, 0.04];

/// Origin-constrained fit to drift circles: each hit contributes the point
/// of its drift circle facing the current circle. Hits are down-weighted by
/// their residual with a shrinking scale so that stray hits in the road lose
/// their pull; the left/right choices follow the current circle.
fn fit_drift_circle(hits: &[&AxialHit], k: f64, start: OriginCircle) -> OriginCircle {
    let mut circle = start;
    for scale in ANNEAL {
        let c = circle.center(k);
        let r = 1.0 / (k * circle.kappa.abs());
        let mut moved = Vec::with_capacity(hits.len());
        let mut weights = Vec::with_capacity(hits.len());
        for h in hits {
            let rel = h.pos - c;
            let dist = rel.norm();
            let outward = dist < r;
            let dir = if dist > 0.0 { rel / dist } else { Vec2::zeros() };
            let pos = h.pos + dir * if outward { h.drift } else { -h.drift };
            let rho = pos.norm();
            moved.push(AxialHit {
                pos,
                rho,
                alpha: pos.y.atan2(pos.x),
                ..**h
            });
            let u = (dist - r).abs() - h.drift;
            weights.push(1.0 / (1.0 + (u / scale).powi(2)));
        }
        let refs: Vec<&AxialHit> = moved.iter().collect();
        circle = fit_origin_circle(&refs, &weights, k, circle);
    }
    circle
}

fn claim(
    axial: &[AxialHit],
    available: &[bool],
    circle: &OriginCircle,
    k: f64,
) -> Vec<usize> {
    axial
        .iter()
        .enumerate()
        .filter(|(i, h)| available[*i] && circle.residual(h.pos, k) <= h.road)
        .map(|(i, _)| i)
        .collect()
}

/// Ridge bins refit per peak, and the drift-level cost scale and cut, cm.
const REFINE_BINS: usize = 6;
const FINE_SCALE: f64 = 0.05;
const FINE_CUT: f64 = 3.0;

struct Working {
    circle: OriginCircle,
    axial: Vec<usize>,
    votes: u32,
}

/// Groups the hits of one event into track candidates.
pub fn find_tracks(hits: &[Hit], geometry: &Geometry, cfg: &FinderConfig) -> Vec<TrackCandidate> {
    let k = curvature_per_kappa(cfg.b_field);
    let mut axial = Vec::new();
    let mut stereo = Vec::new();
    for (idx, h) in hits.iter().enumerate() {
        let Ok(spec) = geometry.layer_spec(h.wire.layer) else {
            continue;
        };
        if spec.is_axial() {
            let pos = Vec2::new(h.middle_x, h.middle_y);
            axial.push(AxialHit {
                idx,
                pos,
                rho: pos.norm(),
                alpha: pos.y.atan2(pos.x),
                half_angle: 0.5 * spec.cell_angle(),
                road: cfg.road_pitches * spec.cell_pitch(),
                drift: h.raw_drift_dist,
            });
        } else {
            stereo.push(idx);
        }
    }
    if axial.len() < cfg.min_votes as usize || cfg.phi_bins == 0 || cfg.kappa_bins == 0 {
        return Vec::new();
    }

    let mut acc = Accumulator::new(cfg.phi_bins, cfg.kappa_bins, cfg.kappa_max);
    let mut suppressed = vec![false; cfg.phi_bins * cfg.kappa_bins];
    let mut available = vec![true; axial.len()];
    let mut found: Vec<Working> = Vec::new();
    let mut attempts = 0;
    while found.len() < cfg.max_candidates && attempts < 4 * cfg.max_candidates.max(1) {
        attempts += 1;
        acc.clear();
        for (h, _) in axial.iter().zip(&available).filter(|(_, a)| **a) {
            acc.vote(h, k, cfg.vote_margin);
        }
        let Some((pi, kj, votes)) = acc.peak(&suppressed) else {
            break;
        };
        if (votes as u32) < cfg.min_votes {
            break;
        }
        // Cell-sized bands make stiff tracks vote along a ridge; the ridge
        // bin whose circle best matches the drift distances wins.
        let voters: Vec<&AxialHit> = axial
            .iter()
            .zip(&available)
            .filter(|(_, a)| **a)
            .map(|(h, _)| h)
            .collect();
        let cost = |c: &OriginCircle| -> f64 {
            voters
                .iter()
                .map(|h| (c.drift_residual(h, k).min(h.road) / h.road).powi(2))
                .sum()
        };
        let level = votes.saturating_sub(1).max(cfg.min_votes.min(u16::MAX as u32) as u16);
        let mut coarse: Vec<(f64, (usize, usize), OriginCircle)> = Vec::new();
        let refined = acc.refine(pi, kj, votes);
        coarse.push((cost(&refined), (pi, kj), refined));
        for b in acc.bins_at_least(level, &suppressed, 4096) {
            let (i, j) = (b / acc.n_kappa, b % acc.n_kappa);
            let c = OriginCircle {
                phi: acc.phi_center(i),
                kappa: acc.kappa_center(j),
            };
            coarse.push((cost(&c), (i, j), c));
        }
        coarse.sort_by(|a, b| a.0.total_cmp(&b.0));
        coarse.truncate(REFINE_BINS);
        // The few best bins are refit and compared at drift resolution.
        let mut best: Option<(f64, (usize, usize), OriginCircle, Vec<usize>)> = None;
        for (_, bin, start) in coarse {
            let mut circle = start;
            let mut claimed = claim(&axial, &available, &circle, k);
            for _ in 0..2 {
                let pts: Vec<&AxialHit> = claimed.iter().map(|&i| &axial[i]).collect();
                circle = fit_drift_circle(&pts, k, circle);
                claimed = claim(&axial, &available, &circle, k);
            }
            let fine: f64 = voters
                .iter()
                .map(|h| (circle.drift_residual(h, k) / FINE_SCALE).powi(2).min(FINE_CUT * FINE_CUT))
                .sum();
            if best.as_ref().is_none_or(|b| fine < b.0) {
                best = Some((fine, bin, circle, claimed));
            }
        }
        let Some((_, best_bin, circle, claimed)) = best else {
            break;
        };
        for (i, j) in acc.plateau(best_bin.0, best_bin.1, level, 4096) {
            suppressed[i * acc.n_kappa + j] = true;
        }
        acc.suppress(&mut suppressed, pi, kj, cfg.nms_phi, cfg.nms_kappa);
        acc.suppress(&mut suppressed, best_bin.0, best_bin.1, cfg.nms_phi, cfg.nms_kappa);
        if claimed.len() < cfg.min_axial_hits {
            continue;
        }
        for &i in &claimed {
            available[i] = false;
        }
        found.push(Working {
            circle,
            axial: claimed,
            votes: votes as u32,
        });
    }

    // Final axial assignment: each claimed hit goes to the candidate with
    // the smallest residual (earlier candidate on ties) inside its road.
    let pool: Vec<usize> = (0..axial.len()).filter(|&i| !available[i]).collect();
    for w in &mut found {
        w.axial.clear();
    }
    for i in pool {
        let h = &axial[i];
        let mut best: Option<(usize, f64)> = None;
        for (c, w) in found.iter().enumerate() {
            let r = w.circle.residual(h.pos, k);
            if r <= h.road && best.is_none_or(|(_, br)| r < br) {
                best = Some((c, r));
            }
        }
        if let Some((c, _)) = best {
            found[c].axial.push(i);
        }
    }
    found.retain(|w| w.axial.len() >= cfg.min_axial_hits);
    for w in &mut found {
        let pts: Vec<&AxialHit> = w.axial.iter().map(|&i| &axial[i]).collect();
        w.circle = fit_drift_circle(&pts, k, w.circle);
    }

    // Stereo attachment: each candidate proposes a z line from the stereo
    // entries its circle implies; each stereo hit then joins the candidate
    // whose line it matches best (earlier candidate on ties).
    let cut = 2.0;
    let zlines: Vec<(Vec<Vec<StereoEntry>>, Option<ZLine>)> = found
        .iter()
        .map(|w| {
            let helix = Helix::new(w.circle.helix_params(0.0, 0.0), cfg.b_field)
                .expect("finite non-zero curvature");
            let entries: Vec<Vec<StereoEntry>> = stereo
                .iter()
                .map(|&idx| stereo_entries(&helix, geometry, &hits[idx], cfg.stereo_tolerance))
                .collect();
            let line = best_z_line(&entries, cfg.dz_max, cfg.tan_lambda_max, cut)
                .filter(|l| l.inliers.len() >= cfg.min_stereo_hits);
            (entries, line)
        })
        .collect();

    let mut stereo_of: Vec<Vec<(usize, StereoEntry)>> = vec![Vec::new(); found.len()];
    for (si, &idx) in stereo.iter().enumerate() {
        let mut best: Option<(usize, f64, StereoEntry)> = None;
        for (c, (entries, line)) in zlines.iter().enumerate() {
            let Some(line) = line else { continue };
            for e in &entries[si] {
                let r = entry_residual(e, line.d_z, line.tan_lambda);
                if r <= cut && best.as_ref().is_none_or(|(_, br, _)| r < *br) {
                    best = Some((c, r, *e));
                }
            }
        }
        if let Some((c, _, e)) = best {
            stereo_of[c].push((idx, e));
        }
    }

    let mut out = Vec::new();
    for (w, st) in found.iter().zip(&stereo_of) {
        let pts: Vec<StereoEntry> = st.iter().map(|(_, e)| *e).collect();
        let (line, constrained) = match fit_z_line(&pts) {
            Some(l) if st.len() >= cfg.min_stereo_hits => (l, true),
            _ => ((0.0, 0.0), false),
        };
        let mut hit_ids: Vec<usize> = w.axial.iter().map(|&i| axial[i].idx).collect();
        hit_ids.extend(st.iter().map(|(idx, _)| *idx));
        hit_ids.sort_unstable();
        if hit_ids.len() < cfg.min_hits {
            continue;
        }
        out.push(TrackCandidate {
            hit_ids,
            seed: w.circle.helix_params(line.0, line.1),
            quality: w.votes,
            z_constrained: constrained,
        });
    }
    out
}
