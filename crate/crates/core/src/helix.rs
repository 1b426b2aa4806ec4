//! Five-parameter helix at the point of closest approach (POCA) to the origin.
//!
//! Conventions, with `u = (cos phi0, sin phi0)`:
//!
//! * `phi0` is the azimuth of the POCA as seen from the helix centre, so the
//!   centre sits at `C = poca - R u`.
//! * `d_r` carries the sign of `(d x p)_z`, `d` being the POCA vector. This
//!   places the POCA at `-sign(kappa) d_r u`.
//! * `kappa = q / pT`. A positive track in a field along +z turns clockwise,
//!   so its transverse direction at the POCA is `q (sin phi0, -cos phi0)`.
//! * `s` is the signed transverse arc length from the POCA, and
//!   `z(s) = d_z + s tan_lambda`.

use crate::geometry::{Segment3, Vec2, Vec3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// c in units of GeV / (T m).
pub const SPEED_OF_LIGHT_GEV_PER_TM: f64 = 0.299792458;

#[derive(Debug, Error, PartialEq)]
pub enum HelixError {
    #[error("transverse momentum must be positive")]
    ZeroTransverseMomentum,
    #[error("magnetic field must be positive, got {0} T")]
    NonPositiveField(f64),
    #[error("curvature must be finite and non-zero, got {0}")]
    InvalidCurvature(f64),
    #[error("charge must be +1 or -1, got {0}")]
    InvalidCharge(i32),
    #[error("track is centred on the origin, POCA undefined")]
    DegeneratePoca,
}

/// No local minimum of the helix-wire distance inside the search window.
#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("helix does not approach the wire inside the search window")]
pub struct NoCrossing;

/// Curvature radius in cm of a track with transverse momentum `pt` (GeV/c).
pub fn radius_cm(pt: f64, b_field: f64) -> f64 {
    100.0 * pt / (SPEED_OF_LIGHT_GEV_PER_TM * b_field)
}

/// `1/R` in cm^-1 per unit of `|kappa|` in (GeV/c)^-1.
pub fn curvature_per_kappa(b_field: f64) -> f64 {
    SPEED_OF_LIGHT_GEV_PER_TM * b_field / 100.0
}

pub fn normalize_angle(phi: f64) -> f64 {
    let r = phi.rem_euclid(2.0 * PI);
    if r >= 2.0 * PI {
        0.0
    } else {
        r
    }
}

/// Signed difference `a - b` wrapped into `[-pi, pi)`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    (a - b + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelixParams {
    pub d_r: f64,
    pub phi0: f64,
    pub kappa: f64,
    pub d_z: f64,
    pub tan_lambda: f64,
}

impl HelixParams {
    pub fn charge(&self) -> i32 {
        if self.kappa > 0.0 {
            1
        } else {
            -1
        }
    }

    pub fn pt(&self) -> f64 {
        1.0 / self.kappa.abs()
    }

    pub fn cos_theta(&self) -> f64 {
        self.tan_lambda / (1.0 + self.tan_lambda * self.tan_lambda).sqrt()
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.d_r, self.phi0, self.kappa, self.d_z, self.tan_lambda]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        HelixParams {
            d_r: a[0],
            phi0: normalize_angle(a[1]),
            kappa: a[2],
            d_z: a[3],
            tan_lambda: a[4],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinematicState {
    /// cm
    pub position: Vec3,
    /// GeV/c
    pub momentum: Vec3,
    pub charge: i32,
}

impl KinematicState {
    pub fn pt(&self) -> f64 {
        self.momentum.xy().norm()
    }

    pub fn cos_theta(&self) -> f64 {
        self.momentum.z / self.momentum.norm()
    }
}

/// Result of [`Helix::poca_to_wire`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WireApproach {
    /// Transverse arc length of the closest helix point.
    pub s: f64,
    pub doca: f64,
    /// +1 when the wire lies to the left of the track direction.
    pub side: i32,
    pub helix_point: Vec3,
    pub wire_point: Vec3,
}

impl WireApproach {
    /// Distance signed by `side`.
    pub fn signed_doca(&self) -> f64 {
        self.side as f64 * self.doca
    }
}

/// Helix parameters bound to a field value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Helix {
    pub params: HelixParams,
    pub b_field: f64,
}

impl Helix {
    pub fn new(params: HelixParams, b_field: f64) -> Result<Self, HelixError> {
        if !(b_field > 0.0) || !b_field.is_finite() {
            return Err(HelixError::NonPositiveField(b_field));
        }
        if params.kappa == 0.0 || !params.kappa.is_finite() {
            return Err(HelixError::InvalidCurvature(params.kappa));
        }
        Ok(Helix {
            params: HelixParams {
                phi0: normalize_angle(params.phi0),
                ..params
            },
            b_field,
        })
    }

    /// Helix through a kinematic state, expressed at its POCA to the origin.
    pub fn from_state(state: &KinematicState, b_field: f64) -> Result<Self, HelixError> {
        if !(b_field > 0.0) || !b_field.is_finite() {
            return Err(HelixError::NonPositiveField(b_field));
        }
        if state.charge != 1 && state.charge != -1 {
            return Err(HelixError::InvalidCharge(state.charge));
        }
        let pt = state.pt();
        if !(pt > 0.0) {
            return Err(HelixError::ZeroTransverseMomentum);
        }
        let q = state.charge as f64;
        let r = radius_cm(pt, b_field);
        let t = state.momentum.xy() / pt;
        let p = state.position.xy();
        let center = p + Vec2::new(t.y, -t.x) * (q * r);
        let dist = center.norm();
        if dist == 0.0 {
            return Err(HelixError::DegeneratePoca);
        }
        let u = -center / dist;
        let phi0 = u.y.atan2(u.x);
        let d_r = -q * (r - dist);
        let tan_lambda = state.momentum.z / pt;
        // Arc length from the POCA to the given position, shortest branch.
        let psi = (p - center).y.atan2((p - center).x);
        let s = -q * r * angle_diff(psi, phi0);
        Helix::new(
            HelixParams {
                d_r,
                phi0,
                kappa: q / pt,
                d_z: state.position.z - s * tan_lambda,
                tan_lambda,
            },
            b_field,
        )
    }

    /// Kinematic state at the POCA.
    pub fn to_state(&self) -> KinematicState {
        let h = &self.params;
        let q = h.charge() as f64;
        let pt = h.pt();
        let (sp, cp) = h.phi0.sin_cos();
        let poca = Vec2::new(cp, sp) * (-q * h.d_r);
        KinematicState {
            position: Vec3::new(poca.x, poca.y, h.d_z),
            momentum: Vec3::new(q * sp * pt, -q * cp * pt, pt * h.tan_lambda),
            charge: h.charge(),
        }
    }

    pub fn radius(&self) -> f64 {
        radius_cm(self.params.pt(), self.b_field)
    }

    pub fn charge(&self) -> i32 {
        self.params.charge()
    }

    pub fn center(&self) -> Vec2 {
        let h = &self.params;
        let (sp, cp) = h.phi0.sin_cos();
        Vec2::new(cp, sp) * -(h.charge() as f64 * h.d_r + self.radius())
    }

    /// Azimuth, seen from the centre, of the point at arc length `s`.
    pub fn psi_at(&self, s: f64) -> f64 {
        self.params.phi0 - self.charge() as f64 * s / self.radius()
    }

    pub fn point_at_arclength(&self, s: f64) -> Vec3 {
        let c = self.center();
        let r = self.radius();
        let (sp, cp) = self.psi_at(s).sin_cos();
        Vec3::new(
            c.x + r * cp,
            c.y + r * sp,
            self.params.d_z + s * self.params.tan_lambda,
        )
    }

    /// Unit transverse direction of motion at arc length `s`.
    pub fn direction_at(&self, s: f64) -> Vec2 {
        let q = self.charge() as f64;
        let (sp, cp) = self.psi_at(s).sin_cos();
        Vec2::new(q * sp, -q * cp)
    }

    /// Arc length in `[0, 2 pi R)` of the circle point at centre azimuth `psi`.
    pub fn arclength_of_azimuth(&self, psi: f64) -> f64 {
        let r = self.radius();
        let q = self.charge() as f64;
        (q * (self.params.phi0 - psi)).rem_euclid(2.0 * PI) * r
    }

    /// Arc length of the circle point closest to a transverse position.
    pub fn arclength_near(&self, p: Vec2) -> f64 {
        let d = p - self.center();
        self.arclength_of_azimuth(d.y.atan2(d.x))
    }

    /// Derivatives of the helix point at fixed `s` with respect to
    /// `(d_r, phi0, kappa, d_z, tan_lambda)`.
    pub fn point_derivatives(&self, s: f64) -> [Vec3; 5] {
        let h = &self.params;
        let sigma = h.charge() as f64;
        let a = 1.0 / curvature_per_kappa(self.b_field);
        let (sp, cp) = h.phi0.sin_cos();
        let u = Vec2::new(cp, sp);
        let du = Vec2::new(-sp, cp);
        let psi = h.phi0 - h.kappa * s / a;
        let (ss, cs) = psi.sin_cos();
        let e = Vec2::new(cs, ss);
        let de = Vec2::new(-ss, cs);
        let k = h.kappa;
        let d_dr = -u * sigma;
        let d_phi = (-du * (h.d_r + a / k) + de * (a / k)) * sigma;
        let d_kappa = ((u - e) * (a / (k * k)) - de * (s / k)) * sigma;
        [
            Vec3::new(d_dr.x, d_dr.y, 0.0),
            Vec3::new(d_phi.x, d_phi.y, 0.0),
            Vec3::new(d_kappa.x, d_kappa.y, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, s),
        ]
    }

    fn approach_at(&self, wire: &Segment3, s: f64) -> (f64, Vec3, Vec3) {
        let hp = self.point_at_arclength(s);
        let (wp, _) = wire.closest_point(&hp);
        ((hp - wp).norm(), hp, wp)
    }

    /// Closest approach to a wire within the first outgoing half-turn.
    pub fn poca_to_wire(&self, wire: &Segment3) -> Result<WireApproach, NoCrossing> {
        self.poca_to_wire_in(wire, 0.0, PI * self.radius(), 256)
    }

    /// Closest approach to a wire for `s` in `[s_lo, s_hi]`.
    ///
    /// A coarse scan with `scan_points` samples brackets the minimum, which
    /// golden-section search then refines. A minimum on the window edge means
    /// the helix does not cross the wire inside the window.
    pub fn poca_to_wire_in(
        &self,
        wire: &Segment3,
        s_lo: f64,
        s_hi: f64,
        scan_points: usize,
    ) -> Result<WireApproach, NoCrossing> {
        let n = scan_points.max(3);
        let step = (s_hi - s_lo) / (n - 1) as f64;
        let mut best_i = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..n {
            let d = self.approach_at(wire, s_lo + step * i as f64).0;
            if d < best_d {
                best_d = d;
                best_i = i;
            }
        }
        let mut a = s_lo + step * best_i.saturating_sub(1) as f64;
        let mut b = s_lo + step * (best_i + 1).min(n - 1) as f64;
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let mut fc = self.approach_at(wire, c).0;
        let mut fd = self.approach_at(wire, d).0;
        while b - a > 1e-11 * (1.0 + a.abs().max(b.abs())) {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = self.approach_at(wire, c).0;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = self.approach_at(wire, d).0;
            }
        }
        let s = 0.5 * (a + b);
        let edge = 1e-9 * (1.0 + s_hi.abs().max(s_lo.abs()));
        if s - s_lo <= step.min(1.0) * 1e-6 + edge || s_hi - s <= step.min(1.0) * 1e-6 + edge {
            return Err(NoCrossing);
        }
        let (doca, hp, wp) = self.approach_at(wire, s);
        let t = self.direction_at(s);
        let to_wire = wp - hp;
        let cross = t.x * to_wire.y - t.y * to_wire.x;
        Ok(WireApproach {
            s,
            doca,
            side: if cross >= 0.0 { 1 } else { -1 },
            helix_point: hp,
            wire_point: wp,
        })
    }
}
