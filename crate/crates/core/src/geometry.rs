//! Sense-wire layout of the cylindrical multilayer drift chamber.
//!
//! The default layout has 43 layers in 11 superlayers and 6796 sense wires.
//! Per-layer radius and length are linearly interpolated across each
//! superlayer's quoted range. Stereo wires are straight segments whose two
//! end azimuths differ by the layer's twist.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Distances closer than this are treated as equal when breaking ties.
pub const TIE_TOLERANCE_CM: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("layer index {0} out of range (0..{1})")]
    LayerOutOfRange(usize, usize),
    #[error("cell {cell} out of range for layer {layer} ({n_wires} wires)")]
    CellOutOfRange {
        layer: usize,
        cell: usize,
        n_wires: usize,
    },
    #[error("invalid geometry configuration: {0}")]
    InvalidConfig(String),
}

/// Wire orientation class of a superlayer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StereoClass {
    /// Axial, parallel to the beam.
    A,
    /// Stereo with negative tilt.
    U,
    /// Stereo with positive tilt.
    V,
}

impl StereoClass {
    fn sign(self) -> f64 {
        match self {
            StereoClass::A => 0.0,
            StereoClass::U => -1.0,
            StereoClass::V => 1.0,
        }
    }
}

impl fmt::Display for StereoClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StereoClass::A => "A",
            StereoClass::U => "U",
            StereoClass::V => "V",
        };
        f.write_str(s)
    }
}

/// One superlayer entry of a geometry configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperlayerConfig {
    pub stereo: StereoClass,
    /// Wire count of each local layer, innermost first.
    pub wires: Vec<usize>,
    /// Radius of the innermost and outermost layer, in mm.
    pub radius_mm: [f64; 2],
    /// Full wire length of the innermost and outermost layer, in mm.
    pub length_mm: [f64; 2],
    /// Twist magnitude expressed in cell pitches. Falls back to the
    /// geometry-wide default when absent.
    #[serde(default)]
    pub twist_cells: Option<f64>,
    /// Explicit twist magnitude in rad; takes precedence over `twist_cells`.
    #[serde(default)]
    pub twist_rad: Option<f64>,
}

/// Key-value description of a chamber layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    /// Default twist magnitude in cell pitches for stereo superlayers.
    #[serde(default = "default_twist_cells")]
    pub twist_cells: f64,
    #[serde(rename = "superlayer")]
    pub superlayers: Vec<SuperlayerConfig>,
}

fn default_twist_cells() -> f64 {
    3.0
}

impl Default for GeometryConfig {
    /// The BESIII MDC layout.
    fn default() -> Self {
        use StereoClass::*;
        let sl = |stereo, wires: &[usize], r: [f64; 2], l: [f64; 2]| SuperlayerConfig {
            stereo,
            wires: wires.to_vec(),
            radius_mm: r,
            length_mm: l,
            twist_cells: None,
            twist_rad: None,
        };
        GeometryConfig {
            twist_cells: default_twist_cells(),
            superlayers: vec![
                sl(U, &[40, 44, 48, 56], [79.0, 115.0], [780.0, 816.0]),
                sl(V, &[64, 72, 80, 80], [127.0, 162.0], [828.0, 864.0]),
                sl(A, &[76, 76, 88, 88], [197.0, 246.0], [1092.0, 1272.0]),
                sl(A, &[100, 100, 112, 112], [262.0, 311.0], [1442.0, 1612.0]),
                sl(A, &[128, 128, 140, 140], [327.0, 375.0], [1782.0, 1952.0]),
                sl(U, &[160; 4], [400.0, 448.0], [2174.0, 2192.0]),
                sl(V, &[176; 4], [464.0, 514.0], [2198.0, 2216.0]),
                sl(U, &[208; 4], [530.0, 579.0], [2222.0, 2240.0]),
                sl(V, &[240; 4], [595.0, 642.0], [2246.0, 2264.0]),
                sl(A, &[256; 4], [667.0, 716.0], [2276.0, 2294.0]),
                sl(A, &[288; 3], [732.0, 763.0], [2300.0, 2306.0]),
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSpec {
    pub global_layer: usize,
    pub superlayer: usize,
    pub local_layer: usize,
    pub n_wires: usize,
    /// cm
    pub radius: f64,
    /// cm
    pub half_length: f64,
    pub stereo_class: StereoClass,
    /// Azimuth of the east (+z) end minus azimuth of the west (-z) end, rad.
    pub twist: f64,
}

impl LayerSpec {
    /// Azimuthal spacing between adjacent wires.
    pub fn cell_angle(&self) -> f64 {
        2.0 * PI / self.n_wires as f64
    }

    /// Arc distance between adjacent wires at the layer radius, cm.
    pub fn cell_pitch(&self) -> f64 {
        self.radius * self.cell_angle()
    }

    pub fn half_cell_pitch(&self) -> f64 {
        0.5 * self.cell_pitch()
    }

    pub fn is_axial(&self) -> bool {
        self.stereo_class == StereoClass::A
    }

    /// Transverse radius of the (hyperboloidal) wire surface at height `z`.
    pub fn surface_radius_at(&self, z: f64) -> f64 {
        let c = (0.5 * self.twist).cos();
        let s = (0.5 * self.twist).sin();
        let f = (z / self.half_length).clamp(-1.0, 1.0);
        self.radius * (c * c + s * s * f * f).sqrt()
    }
}

/// Address of one sense wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WireId {
    pub layer: usize,
    pub cell: usize,
}

impl WireId {
    pub fn new(layer: usize, cell: usize) -> Self {
        WireId { layer, cell }
    }
}

impl fmt::Display for WireId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.cell)
    }
}

/// Straight 3-D segment from `a` to `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment3 {
    pub a: Vec3,
    pub b: Vec3,
}

impl Segment3 {
    pub fn new(a: Vec3, b: Vec3) -> Self {
        Segment3 { a, b }
    }

    /// Closest point of the segment to `p`, with its fractional position.
    pub fn closest_point(&self, p: &Vec3) -> (Vec3, f64) {
        let d = self.b - self.a;
        let len2 = d.norm_squared();
        if len2 == 0.0 {
            return (self.a, 0.0);
        }
        let t = ((p - self.a).dot(&d) / len2).clamp(0.0, 1.0);
        (self.a + d * t, t)
    }

    pub fn distance_to(&self, p: &Vec3) -> f64 {
        (p - self.closest_point(p).0).norm()
    }

    /// Unit vector from `a` to `b`.
    pub fn direction(&self) -> Vec3 {
        (self.b - self.a).normalize()
    }

    /// Point on the segment's line at height `z`.
    pub fn point_at_z(&self, z: f64) -> Vec3 {
        let dz = self.b.z - self.a.z;
        let t = (z - self.a.z) / dz;
        self.a + (self.b - self.a) * t
    }
}

/// Immutable chamber layout.
#[derive(Clone, Debug)]
pub struct Geometry {
    layers: Vec<LayerSpec>,
    /// Global index of cell 0 of each layer.
    offsets: Vec<usize>,
    n_superlayers: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry::from_config(&GeometryConfig::default()).expect("built-in geometry is valid")
    }
}

fn lerp(range: [f64; 2], i: usize, n: usize) -> f64 {
    if n <= 1 {
        return range[0];
    }
    range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64
}

impl Geometry {
    pub fn besiii() -> Self {
        Self::default()
    }

    pub fn from_config(cfg: &GeometryConfig) -> Result<Self, GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidConfig(m));
        if cfg.superlayers.is_empty() {
            return bad("no superlayers".into());
        }
        let mut layers = Vec::new();
        for (si, sl) in cfg.superlayers.iter().enumerate() {
            if sl.wires.is_empty() {
                return bad(format!("superlayer {si} has no layers"));
            }
            if sl.wires.iter().any(|&n| n < 3) {
                return bad(format!("superlayer {si} has a layer with fewer than 3 wires"));
            }
            if !(sl.radius_mm[0] > 0.0 && sl.radius_mm[1] >= sl.radius_mm[0]) {
                return bad(format!("superlayer {si} radius range is not increasing"));
            }
            if !(sl.length_mm[0] > 0.0 && sl.length_mm[1] > 0.0) {
                return bad(format!("superlayer {si} length must be positive"));
            }
            let n = sl.wires.len();
            for (li, &n_wires) in sl.wires.iter().enumerate() {
                let magnitude = match (sl.twist_rad, sl.twist_cells) {
                    (Some(rad), _) => rad.abs(),
                    (None, Some(cells)) => cells.abs() * 2.0 * PI / n_wires as f64,
                    (None, None) => cfg.twist_cells.abs() * 2.0 * PI / n_wires as f64,
                };
                let twist = sl.stereo.sign() * magnitude;
                if sl.stereo != StereoClass::A && twist == 0.0 {
                    return bad(format!("stereo superlayer {si} has zero twist"));
                }
                if twist.abs() >= PI {
                    return bad(format!("superlayer {si} twist must be below pi"));
                }
                layers.push(LayerSpec {
                    global_layer: layers.len(),
                    superlayer: si,
                    local_layer: li,
                    n_wires,
                    radius: 0.1 * lerp(sl.radius_mm, li, n),
                    half_length: 0.05 * lerp(sl.length_mm, li, n),
                    stereo_class: sl.stereo,
                    twist,
                });
            }
        }
        for w in layers.windows(2) {
            if w[1].radius <= w[0].radius {
                return bad(format!(
                    "layer radii must strictly increase (layer {})",
                    w[1].global_layer
                ));
            }
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut acc = 0;
        for l in &layers {
            offsets.push(acc);
            acc += l.n_wires;
        }
        Ok(Geometry {
            layers,
            offsets,
            n_superlayers: cfg.superlayers.len(),
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_superlayers(&self) -> usize {
        self.n_superlayers
    }

    pub fn n_wires(&self) -> usize {
        self.layers.iter().map(|l| l.n_wires).sum()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer_spec(&self, global_layer: usize) -> Result<&LayerSpec, GeometryError> {
        self.layers
            .get(global_layer)
            .ok_or(GeometryError::LayerOutOfRange(global_layer, self.layers.len()))
    }

    pub fn check(&self, w: WireId) -> Result<&LayerSpec, GeometryError> {
        let spec = self.layer_spec(w.layer)?;
        if w.cell >= spec.n_wires {
            return Err(GeometryError::CellOutOfRange {
                layer: w.layer,
                cell: w.cell,
                n_wires: spec.n_wires,
            });
        }
        Ok(spec)
    }

    /// Dense index of a wire over the whole chamber.
    pub fn wire_index(&self, w: WireId) -> Result<usize, GeometryError> {
        self.check(w)?;
        Ok(self.offsets[w.layer] + w.cell)
    }

    pub fn wire_from_index(&self, index: usize) -> Option<WireId> {
        if index >= self.n_wires() {
            return None;
        }
        let layer = self.offsets.partition_point(|&o| o <= index) - 1;
        Some(WireId::new(layer, index - self.offsets[layer]))
    }

    /// Azimuth of the wire centre at z = 0.
    pub fn wire_azimuth(&self, w: WireId) -> Result<f64, GeometryError> {
        let spec = self.check(w)?;
        Ok(w.cell as f64 * spec.cell_angle())
    }

    /// Endpoints `(east, west)` at z = +half_length and z = -half_length.
    pub fn wire_endpoints(&self, w: WireId) -> Result<(Vec3, Vec3), GeometryError> {
        let spec = self.check(w)?;
        let phi = w.cell as f64 * spec.cell_angle();
        let pe = phi + 0.5 * spec.twist;
        let pw = phi - 0.5 * spec.twist;
        let r = spec.radius;
        let hl = spec.half_length;
        Ok((
            Vec3::new(r * pe.cos(), r * pe.sin(), hl),
            Vec3::new(r * pw.cos(), r * pw.sin(), -hl),
        ))
    }

    /// Wire as a segment running from the west end to the east end (+z).
    pub fn wire_segment(&self, w: WireId) -> Result<Segment3, GeometryError> {
        let (east, west) = self.wire_endpoints(w)?;
        Ok(Segment3::new(west, east))
    }

    /// Transverse midpoint of the two wire ends (`middleX`, `middleY`).
    pub fn wire_midpoint(&self, w: WireId) -> Result<Vec2, GeometryError> {
        let (e, wst) = self.wire_endpoints(w)?;
        Ok(Vec2::new(0.5 * (e.x + wst.x), 0.5 * (e.y + wst.y)))
    }

    /// Cell whose midpoint azimuth is closest to that of `(x, y)`.
    pub fn cell_from_midpoint(&self, layer: usize, x: f64, y: f64) -> Result<usize, GeometryError> {
        let spec = self.layer_spec(layer)?;
        let phi = y.atan2(x).rem_euclid(2.0 * PI);
        let c = (phi / spec.cell_angle()).round() as i64;
        Ok(c.rem_euclid(spec.n_wires as i64) as usize)
    }

    /// Wire of `global_layer` whose segment is closest to `position`.
    /// Ties within [`TIE_TOLERANCE_CM`] go to the lower cell index.
    pub fn nearest_wire(&self, global_layer: usize, position: &Vec3) -> Result<WireId, GeometryError> {
        let spec = self.layer_spec(global_layer)?;
        let n = spec.n_wires as i64;
        // All wires of a layer are rotations of cell 0, so the azimuth offset
        // of cell 0 at the probe height gives a direct cell estimate.
        let seg0 = self.wire_segment(WireId::new(global_layer, 0))?;
        let z = position.z.clamp(-spec.half_length, spec.half_length);
        let p0 = seg0.point_at_z(z);
        let offset = p0.y.atan2(p0.x);
        let phi = position.y.atan2(position.x);
        let guess = ((phi - offset) / spec.cell_angle()).round() as i64;
        let mut cells: Vec<usize> = (-3..=3)
            .map(|k| (guess + k).rem_euclid(n) as usize)
            .collect();
        cells.sort_unstable();
        cells.dedup();
        let mut best: Option<(usize, f64)> = None;
        for c in cells {
            let d = self.wire_segment(WireId::new(global_layer, c))?.distance_to(position);
            match best {
                Some((_, bd)) if d >= bd - TIE_TOLERANCE_CM => {}
                _ => best = Some((c, d)),
            }
        }
        Ok(WireId::new(global_layer, best.expect("layer has wires").0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_counts() {
        let g = Geometry::besiii();
        assert_eq!(g.n_layers(), 43);
        assert_eq!(g.n_superlayers(), 11);
        assert_eq!(g.n_wires(), 6796);
        let l0 = g.layer_spec(0).unwrap();
        assert_eq!((l0.superlayer, l0.local_layer, l0.n_wires), (0, 0, 40));
        let l42 = g.layer_spec(42).unwrap();
        assert_eq!((l42.superlayer, l42.local_layer, l42.n_wires), (10, 2, 288));
        assert_eq!(
            g.layer_spec(43),
            Err(GeometryError::LayerOutOfRange(43, 43))
        );
    }

    #[test]
    fn superlayer_structure() {
        let g = Geometry::besiii();
        for sl in 0..11 {
            let n = g.layers().iter().filter(|l| l.superlayer == sl).count();
            assert_eq!(n, if sl == 10 { 3 } else { 4 });
        }
        for l in g.layers() {
            assert!(l.radius > 5.9 && l.radius < 80.0);
            match l.stereo_class {
                StereoClass::A => assert_eq!(l.twist, 0.0),
                StereoClass::U => assert!(l.twist < 0.0),
                StereoClass::V => assert!(l.twist > 0.0),
            }
        }
        for w in g.layers().windows(2) {
            assert!(w[1].radius > w[0].radius);
        }
    }

    #[test]
    fn radius_inside_quoted_range() {
        let cfg = GeometryConfig::default();
        let g = Geometry::from_config(&cfg).unwrap();
        for l in g.layers() {
            let r = cfg.superlayers[l.superlayer].radius_mm;
            assert!(l.radius * 10.0 >= r[0] - 1e-9 && l.radius * 10.0 <= r[1] + 1e-9);
        }
    }

    #[test]
    fn endpoints_axial_and_stereo() {
        let g = Geometry::besiii();
        let (e, w) = g.wire_endpoints(WireId::new(10, 5)).unwrap();
        assert!((e.x - w.x).abs() < 1e-12 && (e.y - w.y).abs() < 1e-12);
        assert!(((e - w).norm() - 2.0 * g.layer_spec(10).unwrap().half_length).abs() < 1e-12);

        let spec = g.layer_spec(1).unwrap();
        let (e, w) = g.wire_endpoints(WireId::new(1, 7)).unwrap();
        let dphi = (e.y.atan2(e.x) - w.y.atan2(w.x) + PI).rem_euclid(2.0 * PI) - PI;
        assert!((dphi - spec.twist).abs() < 1e-12);
        assert!((e - w).norm() > 2.0 * spec.half_length);
        for p in [e, w] {
            assert!((p.xy().norm() - spec.radius).abs() < 1e-12);
        }
    }

    #[test]
    fn chord_length_matches_direct_computation() {
        let g = Geometry::besiii();
        for l in g.layers() {
            let (e, w) = g.wire_endpoints(WireId::new(l.global_layer, 3)).unwrap();
            let chord = 2.0 * l.radius * (0.5 * l.twist).sin();
            let expected = (chord * chord + 4.0 * l.half_length * l.half_length).sqrt();
            assert!(((e - w).norm() - expected).abs() < 1e-9);
            assert!((e - w).norm() >= 2.0 * l.half_length);
        }
    }

    #[test]
    fn midpoints() {
        let g = Geometry::besiii();
        let spec = *g.layer_spec(12).unwrap();
        let m = g.wire_midpoint(WireId::new(12, 9)).unwrap();
        let phi = 9.0 * spec.cell_angle();
        assert!((m.x - spec.radius * phi.cos()).abs() < 1e-12);
        assert!((m.y - spec.radius * phi.sin()).abs() < 1e-12);

        for l in g.layers().iter().filter(|l| !l.is_axial()) {
            let m = g.wire_midpoint(WireId::new(l.global_layer, 0)).unwrap();
            assert!(m.norm() < l.radius);
            assert!((m.norm() - l.surface_radius_at(0.0)).abs() < 1e-12);
        }

        // continuity as the twist vanishes
        let mut cfg = GeometryConfig::default();
        cfg.superlayers[0].twist_rad = Some(1e-7);
        let g2 = Geometry::from_config(&cfg).unwrap();
        let m = g2.wire_midpoint(WireId::new(0, 0)).unwrap();
        assert!((m.norm() - g2.layer_spec(0).unwrap().radius).abs() < 1e-12);
    }

    #[test]
    fn uniform_azimuth_spacing() {
        let g = Geometry::besiii();
        for l in g.layers() {
            let (e0, w0) = g.wire_endpoints(WireId::new(l.global_layer, 0)).unwrap();
            let (e1, w1) = g.wire_endpoints(WireId::new(l.global_layer, 1)).unwrap();
            let d = |a: Vec3, b: Vec3| (b.y.atan2(b.x) - a.y.atan2(a.x)).rem_euclid(2.0 * PI);
            assert!((d(e0, e1) - l.cell_angle()).abs() < 1e-12);
            assert!((d(w0, w1) - l.cell_angle()).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_wire_on_wire_and_tie() {
        let g = Geometry::besiii();
        let w = WireId::new(20, 77);
        let seg = g.wire_segment(w).unwrap();
        let p = seg.a + (seg.b - seg.a) * 0.3;
        assert_eq!(g.nearest_wire(20, &p).unwrap(), w);

        let spec = g.layer_spec(14).unwrap();
        let phi = 0.5 * spec.cell_angle();
        let p = Vec3::new(spec.radius * phi.cos(), spec.radius * phi.sin(), 10.0);
        assert_eq!(g.nearest_wire(14, &p).unwrap(), WireId::new(14, 0));
        // wrap-around tie between the last cell and cell 0
        let phi = -0.5 * spec.cell_angle();
        let p = Vec3::new(spec.radius * phi.cos(), spec.radius * phi.sin(), 0.0);
        assert_eq!(g.nearest_wire(14, &p).unwrap(), WireId::new(14, 0));
    }

    #[test]
    fn wire_index_roundtrip() {
        let g = Geometry::besiii();
        for i in [0, 39, 40, 1000, 6795] {
            let w = g.wire_from_index(i).unwrap();
            assert_eq!(g.wire_index(w).unwrap(), i);
        }
        assert!(g.wire_from_index(6796).is_none());
        assert!(g.check(WireId::new(0, 40)).is_err());
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = GeometryConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: GeometryConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = GeometryConfig::default();
        cfg.superlayers[3].radius_mm = [100.0, 120.0];
        assert!(Geometry::from_config(&cfg).is_err());
        let mut cfg = GeometryConfig::default();
        cfg.superlayers[0].twist_rad = Some(0.0);
        assert!(Geometry::from_config(&cfg).is_err());
    }
}
