//! Quasi-static field of the multi-turn planar loop.
//!
//! Each turn is a bundle of circular filaments spread over the trace cross
//! section, each filament a closed regular polygon. Fields are summed segment
//! by segment with the exact straight-segment Biot-Savart kernel, always in
//! the same order, so parallel map evaluation is bit-identical to serial.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Sub};

use rayon::prelude::*;

use crate::constants::{nv_axis_tilt, MU0_OVER_4PI, MU_0, NV_GYROMAGNETIC_RATIO};
use crate::elliptic::ellip_ke;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// One circular turn. `radius` is measured to the trace center line and
/// `z_offset` to the middle of the trace thickness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Turn {
    pub radius: f64,
    pub z_offset: f64,
    pub trace_width: f64,
    pub trace_thickness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopGeometry {
    pub turns: Vec<Turn>,
    pub segments_per_turn: usize,
    /// Filaments per turn across the width.
    pub bundle_radial: usize,
    /// Filaments per turn across the thickness.
    pub bundle_vertical: usize,
}

impl Default for LoopGeometry {
    /// The three-turn Cu loop: 300/360/420 um diameters, 17 um wide traces,
    /// 3/9/9 um thick.
    fn default() -> Self {
        let turn = |r_um: f64, t_um: f64| Turn {
            radius: r_um * 1e-6,
            z_offset: 0.0,
            trace_width: 17e-6,
            trace_thickness: t_um * 1e-6,
        };
        Self {
            turns: vec![turn(150.0, 3.0), turn(180.0, 9.0), turn(210.0, 9.0)],
            segments_per_turn: 256,
            bundle_radial: 3,
            bundle_vertical: 3,
        }
    }
}

impl LoopGeometry {
    /// A single turn with a one-filament bundle.
    pub fn single_filament(radius: f64, segments_per_turn: usize) -> Self {
        Self {
            turns: vec![Turn {
                radius,
                z_offset: 0.0,
                trace_width: 1e-6,
                trace_thickness: 1e-6,
            }],
            segments_per_turn,
            bundle_radial: 1,
            bundle_vertical: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::invalid("turns", "geometry needs at least one turn"));
        }
        if self.segments_per_turn < 64 {
            return Err(Error::invalid("segments_per_turn", "must be >= 64"));
        }
        if self.bundle_radial == 0 || self.bundle_vertical == 0 {
            return Err(Error::invalid("bundle", "filament bundle dimensions must be >= 1"));
        }
        for (i, t) in self.turns.iter().enumerate() {
            for (name, v) in [
                ("radius", t.radius),
                ("trace_width", t.trace_width),
                ("trace_thickness", t.trace_thickness),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::invalid(&format!("turns[{i}].{name}"), "must be finite and > 0"));
                }
            }
            if !t.z_offset.is_finite() {
                return Err(Error::invalid(&format!("turns[{i}].z_offset"), "must be finite"));
            }
            if t.trace_width / 2.0 >= t.radius {
                return Err(Error::invalid(&format!("turns[{i}].trace_width"), "trace crosses the loop axis"));
            }
        }
        for (i, pair) in self.turns.windows(2).enumerate() {
            if pair[1].radius <= pair[0].radius {
                return Err(Error::invalid(
                    &format!("turns[{}].radius", i + 1),
                    "radii must be strictly increasing",
                ));
            }
        }
        for i in 0..self.turns.len() {
            for j in i + 1..self.turns.len() {
                let (a, b) = (self.turns[i], self.turns[j]);
                let radial_gap = (b.radius - a.radius).abs() - 0.5 * (a.trace_width + b.trace_width);
                let vertical_gap = (b.z_offset - a.z_offset).abs() - 0.5 * (a.trace_thickness + b.trace_thickness);
                if radial_gap < 0.0 && vertical_gap < 0.0 {
                    return Err(Error::invalid(
                        &format!("turns[{j}]"),
                        format!("trace overlaps turn {i}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Filament pitch inside a bundle; this is also the clearance radius
    /// around each trace.
    fn filament_spacing(&self, turn: &Turn) -> f64 {
        (turn.trace_width / self.bundle_radial as f64).min(turn.trace_thickness / self.bundle_vertical as f64)
    }

    fn check_clearance(&self, p: Vec3) -> Result<()> {
        let rho = p.x.hypot(p.y);
        for (i, t) in self.turns.iter().enumerate() {
            let dr = ((rho - t.radius).abs() - 0.5 * t.trace_width).max(0.0);
            let dz = ((p.z - t.z_offset).abs() - 0.5 * t.trace_thickness).max(0.0);
            if dr.hypot(dz) < self.filament_spacing(t) {
                return Err(Error::Clearance {
                    x: p.x,
                    y: p.y,
                    z: p.z,
                    turn: i,
                });
            }
        }
        Ok(())
    }
}

/// Filament positions within a bundle: midpoints of equal sub-cells.
fn bundle_offsets(extent: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| ((i as f64 + 0.5) / n as f64 - 0.5) * extent)
}

/// Polygon vertices of every filament, reused across field evaluations.
#[derive(Debug, Clone)]
pub struct FieldSolver {
    geometry: LoopGeometry,
    /// (vertices, closed polygon; current fraction)
    filaments: Vec<(Vec<Vec3>, f64)>,
}

impl FieldSolver {
    pub fn new(geometry: &LoopGeometry) -> Result<Self> {
        geometry.validate()?;
        let n = geometry.segments_per_turn;
        let share = 1.0 / (geometry.bundle_radial * geometry.bundle_vertical) as f64;
        let mut filaments = Vec::new();
        for t in &geometry.turns {
            for dr in bundle_offsets(t.trace_width, geometry.bundle_radial) {
                for dz in bundle_offsets(t.trace_thickness, geometry.bundle_vertical) {
                    let r = t.radius + dr;
                    let z = t.z_offset + dz;
                    let verts = (0..=n)
                        .map(|k| {
                            let a = 2.0 * PI * (k % n) as f64 / n as f64;
                            Vec3::new(r * a.cos(), r * a.sin(), z)
                        })
                        .collect();
                    filaments.push((verts, share));
                }
            }
        }
        Ok(Self {
            geometry: geometry.clone(),
            filaments,
        })
    }

    pub fn geometry(&self) -> &LoopGeometry {
        &self.geometry
    }

    /// Field (T) at `point` for a counter-clockwise loop current (A).
    pub fn field(&self, point: Vec3, current: f64) -> Result<Vec3> {
        self.geometry.check_clearance(point)?;
        let mut total = Vec3::default();
        for (verts, share) in &self.filaments {
            let mut acc = Vec3::default();
            let mut a = verts[0] - point;
            let mut na = a.norm();
            for v in &verts[1..] {
                let b = *v - point;
                let nb = b.norm();
                let denom = na * nb * (na * nb + a.dot(b));
                acc += a.cross(b) * ((na + nb) / denom);
                a = b;
                na = nb;
            }
            total += acc * *share;
        }
        Ok(total * (MU0_OVER_4PI * current))
    }
}

/// Field (T) of `geometry` carrying `current` (A) at `point` (m).
pub fn biot_savart(point: Vec3, geometry: &LoopGeometry, current: f64) -> Result<Vec3> {
    FieldSolver::new(geometry)?.field(point, current)
}

/// Orientation of the NV quantization axis relative to the loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvFrame {
    /// Angle from the loop-plane normal (rad).
    pub axis_tilt: f64,
    /// Azimuth of the in-plane component of the axis, from +x (rad).
    pub azimuth: f64,
}

impl Default for NvFrame {
    fn default() -> Self {
        Self {
            axis_tilt: nv_axis_tilt(),
            azimuth: 0.0,
        }
    }
}

impl NvFrame {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=PI / 2.0).contains(&self.axis_tilt) {
            return Err(Error::invalid("axis_tilt", "must lie in [0, pi/2]"));
        }
        if !self.azimuth.is_finite() {
            return Err(Error::invalid("azimuth", "must be finite"));
        }
        Ok(())
    }

    pub fn axis(&self) -> Vec3 {
        let s = self.axis_tilt.sin();
        Vec3::new(s * self.azimuth.cos(), s * self.azimuth.sin(), self.axis_tilt.cos())
    }
}

/// Magnitude of the component of `b` transverse to the NV axis.
pub fn perp_projection(b: Vec3, frame: &NvFrame) -> f64 {
    let n = frame.axis();
    // |b|^2 - (b.n)^2 loses precision when b is nearly parallel to n.
    (b - n * b.dot(n)).norm()
}

/// Evaluation plane centered on the loop axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPlane {
    /// Height of the NV plane above z = 0 (m).
    pub standoff_height: f64,
    pub extent_x: f64,
    pub extent_y: f64,
    pub pixel_pitch: f64,
}

impl Default for EvalPlane {
    fn default() -> Self {
        Self {
            standoff_height: 20e-6,
            extent_x: 280e-6,
            extent_y: 280e-6,
            pixel_pitch: 10e-6,
        }
    }
}

impl EvalPlane {
    pub fn validate(&self) -> Result<()> {
        if !(self.standoff_height > 0.0) {
            return Err(Error::invalid("standoff_height", "must be > 0"));
        }
        if !(self.pixel_pitch > 0.0) {
            return Err(Error::invalid("pixel_pitch", "must be > 0"));
        }
        if !(self.extent_x >= self.pixel_pitch && self.extent_y >= self.pixel_pitch) {
            return Err(Error::invalid("extent", "must be >= pixel_pitch"));
        }
        Ok(())
    }

    fn axis_coords(extent: f64, pitch: f64) -> Vec<f64> {
        let n = (extent / pitch + 1e-9).floor() as usize + 1;
        let mid = (n - 1) as f64 / 2.0;
        (0..n).map(|i| (i as f64 - mid) * pitch).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis_coords(self.extent_x, self.pixel_pitch)
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::axis_coords(self.extent_y, self.pixel_pitch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapOptions {
    /// Laser-spot diameter for spatial averaging (m); `None` samples the pixel center only.
    pub spot_diameter: Option<f64>,
    /// Hz/T.
    pub gyromagnetic_ratio: f64,
    /// Carried as metadata; the field model is quasi-static.
    pub drive_frequency: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            spot_diameter: Some(5e-6),
            gyromagnetic_ratio: NV_GYROMAGNETIC_RATIO,
            drive_frequency: 2.55e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub x: f64,
    pub y: f64,
    /// Transverse field amplitude (T); NaN when flagged.
    pub b1_perp: f64,
    /// Rabi frequency (Hz); NaN when flagged.
    pub f1: f64,
    /// Too close to a conductor to evaluate.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub plane: EvalPlane,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, y outer, x inner.
    pub pixels: Vec<Pixel>,
    pub drive_current: f64,
    pub drive_frequency: f64,
}

impl FieldMap {
    pub fn pixel(&self, ix: usize, iy: usize) -> &Pixel {
        &self.pixels[iy * self.nx + ix]
    }

    pub fn center(&self) -> Option<&Pixel> {
        self.pixels
            .iter()
            .filter(|p| !p.flagged)
            .min_by(|a, b| a.x.hypot(a.y).total_cmp(&b.x.hypot(b.y)))
    }
}

/// Hexagonal 19-point sampling of a disk: center plus rings of 6, 6 and 6.
pub fn spot_offsets(diameter: f64) -> Vec<(f64, f64)> {
    let r = diameter / 2.0;
    let mut pts = vec![(0.0, 0.0)];
    for (radius, phase) in [(0.5 * r, 0.0), (0.5 * 3f64.sqrt() * r, PI / 6.0), (r, 0.0)] {
        for k in 0..6 {
            let a = phase + k as f64 * PI / 3.0;
            pts.push((radius * a.cos(), radius * a.sin()));
        }
    }
    pts
}

/// Transverse field (T) at an in-plane position, averaged over the laser spot.
pub fn b1_perp_at(
    solver: &FieldSolver,
    frame: &NvFrame,
    x: f64,
    y: f64,
    height: f64,
    current: f64,
    spot_diameter: Option<f64>,
) -> Result<f64> {
    match spot_diameter {
        None => Ok(perp_projection(solver.field(Vec3::new(x, y, height), current)?, frame)),
        Some(d) => {
            let offsets = spot_offsets(d);
            let mut sum = 0.0;
            for (dx, dy) in &offsets {
                sum += perp_projection(solver.field(Vec3::new(x + dx, y + dy, height), current)?, frame);
            }
            Ok(sum / offsets.len() as f64)
        }
    }
}

/// Individual Rabi frequencies at the 19 spot sample points around (x, y),
/// i.e. the distribution an ensemble inside the laser spot experiences.
pub fn spot_f1_samples(
    solver: &FieldSolver,
    frame: &NvFrame,
    (x, y): (f64, f64),
    height: f64,
    current: f64,
    spot_diameter: f64,
    gyromagnetic_ratio: f64,
) -> Result<Vec<f64>> {
    frame.validate()?;
    if !(spot_diameter > 0.0) {
        return Err(Error::invalid("spot_diameter", "must be > 0"));
    }
    spot_offsets(spot_diameter)
        .into_iter()
        .map(|(dx, dy)| {
            let b = solver.field(Vec3::new(x + dx, y + dy, height), current)?;
            Ok(0.5 * gyromagnetic_ratio * perp_projection(b, frame))
        })
        .collect()
}

/// Rabi-frequency map f1 = gamma * B1_perp / 2 over the evaluation plane.
pub fn f1_map(
    geometry: &LoopGeometry,
    plane: &EvalPlane,
    frame: &NvFrame,
    current: f64,
    options: &MapOptions,
) -> Result<FieldMap> {
    plane.validate()?;
    frame.validate()?;
    if !current.is_finite() {
        return Err(Error::invalid("current", "must be finite"));
    }
    if let Some(d) = options.spot_diameter {
        if !(d > 0.0) {
            return Err(Error::invalid("spot_diameter", "must be > 0"));
        }
    }
    let solver = FieldSolver::new(geometry)?;
    let xs = plane.xs();
    let ys = plane.ys();
    let coords: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let pixels = coords
        .par_iter()
        .map(|&(x, y)| {
            match b1_perp_at(&solver, frame, x, y, plane.standoff_height, current, options.spot_diameter) {
                Ok(b) => Ok(Pixel {
                    x,
                    y,
                    b1_perp: b.abs(),
                    f1: options.gyromagnetic_ratio * b.abs() / 2.0,
                    flagged: false,
                }),
                Err(Error::Clearance { .. }) => Ok(Pixel {
                    x,
                    y,
                    b1_perp: f64::NAN,
                    f1: f64::NAN,
                    flagged: true,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FieldMap {
        plane: *plane,
        nx: xs.len(),
        ny: ys.len(),
        pixels,
        drive_current: current,
        drive_frequency: options.drive_frequency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homogeneity {
    pub mean: f64,
    /// Population standard deviation divided by the mean.
    pub normalized_std: f64,
    pub pixel_count: usize,
}

/// Population mean and normalized spread of f1 over a square centered on the axis.
pub fn homogeneity(map: &FieldMap, square_side: f64) -> Result<Homogeneity> {
    if !(square_side > 0.0) {
        return Err(Error::invalid("square_side", "must be > 0"));
    }
    if square_side > map.plane.extent_x.min(map.plane.extent_y) + 1e-12 {
        return Err(Error::invalid("square_side", "exceeds the map extent"));
    }
    let half = square_side / 2.0 + 1e-9 * map.plane.pixel_pitch;
    let values: Vec<f64> = map
        .pixels
        .iter()
        .filter(|p| !p.flagged && p.x.abs() <= half && p.y.abs() <= half)
        .map(|p| p.f1)
        .collect();
    population_stats(&values)
}

pub(crate) fn population_stats(values: &[f64]) -> Result<Homogeneity> {
    if values.is_empty() {
        return Err(Error::EmptySelection("no unflagged pixels in the square".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(Homogeneity {
        mean,
        normalized_std: if mean != 0.0 { var.sqrt() / mean } else { 0.0 },
        pixel_count: values.len(),
    })
}

/// Equivalent round-wire radius of a rectangular trace.
pub fn equivalent_wire_radius(width: f64, thickness: f64) -> f64 {
    0.2235 * (width + thickness)
}

/// Low-frequency self inductance of a circular loop of round wire.
pub fn circular_self_inductance(radius: f64, wire_radius: f64) -> Result<f64> {
    if !(radius > 0.0 && wire_radius > 0.0 && wire_radius < radius) {
        return Err(Error::invalid("wire_radius", "need 0 < wire radius < loop radius"));
    }
    Ok(MU_0 * radius * ((8.0 * radius / wire_radius).ln() - 2.0))
}

/// Mutual inductance of two coaxial circular filaments (Maxwell's formula).
pub fn coaxial_mutual_inductance(r1: f64, r2: f64, separation: f64) -> Result<f64> {
    if !(r1 > 0.0 && r2 > 0.0) {
        return Err(Error::invalid("radius", "filament radii must be > 0"));
    }
    let m = 4.0 * r1 * r2 / ((r1 + r2).powi(2) + separation * separation);
    if m >= 1.0 {
        return Err(Error::invalid(
            "separation",
            "coincident filaments: the mutual term diverges, use the self inductance",
        ));
    }
    let k = m.sqrt();
    let (ek, ee) = ellip_ke(m);
    Ok(MU_0 * (r1 * r2).sqrt() * ((2.0 / k - k) * ek - 2.0 / k * ee))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InductanceBreakdown {
    pub self_terms: Vec<f64>,
    /// (i, j, M_ij) for i < j.
    pub mutual_terms: Vec<(usize, usize, f64)>,
    pub total: f64,
}

/// Self terms of each turn plus twice every pairwise mutual term (series, co-directed).
pub fn inductance_breakdown(geometry: &LoopGeometry) -> Result<InductanceBreakdown> {
    geometry.validate()?;
    let self_terms = geometry
        .turns
        .iter()
        .map(|t| circular_self_inductance(t.radius, equivalent_wire_radius(t.trace_width, t.trace_thickness)))
        .collect::<Result<Vec<_>>>()?;
    let mut mutual_terms = Vec::new();
    for i in 0..geometry.turns.len() {
        for j in i + 1..geometry.turns.len() {
            let (a, b) = (geometry.turns[i], geometry.turns[j]);
            mutual_terms.push((i, j, coaxial_mutual_inductance(a.radius, b.radius, b.z_offset - a.z_offset)?));
        }
    }
    let total = self_terms.iter().sum::<f64>() + 2.0 * mutual_terms.iter().map(|m| m.2).sum::<f64>();
    Ok(InductanceBreakdown {
        self_terms,
        mutual_terms,
        total,
    })
}

pub fn loop_inductance(geometry: &LoopGeometry) -> Result<f64> {
    inductance_breakdown(geometry).map(|b| b.total)
}

/// Target for fitting the NV-plane standoff: the ratio of f1 at an in-plane
/// offset to f1 on axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTarget {
    pub ratio: f64,
    pub offset: f64,
    /// Direction of the offset, measured from +x (rad).
    pub offset_azimuth: f64,
    pub spot_diameter: Option<f64>,
    /// Standoff search interval (m).
    pub search: (f64, f64),
}

impl Default for CalibrationTarget {
    /// 151.2 MHz at 50 um against 136.3 MHz on axis, taken on the side
    /// opposite the in-plane tilt of the NV axis.
    fn default() -> Self {
        Self {
            ratio: 151.2 / 136.3,
            offset: 50e-6,
            offset_azimuth: PI,
            spot_diameter: Some(5e-6),
            search: (2e-6, 100e-6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub standoff_height: f64,
    pub achieved_ratio: f64,
    /// False when the target ratio is never crossed and the closest scan point was returned.
    pub exact: bool,
}

/// f1(offset)/f1(0) at a given standoff.
pub fn offset_ratio(solver: &FieldSolver, frame: &NvFrame, height: f64, target: &CalibrationTarget) -> Result<f64> {
    let center = b1_perp_at(solver, frame, 0.0, 0.0, height, 1.0, target.spot_diameter)?;
    let (dx, dy) = (
        target.offset * target.offset_azimuth.cos(),
        target.offset * target.offset_azimuth.sin(),
    );
    let off = b1_perp_at(solver, frame, dx, dy, height, 1.0, target.spot_diameter)?;
    Ok(off / center)
}

/// One-parameter fit of the standoff height: scan at 1 um, then bisect the
/// first crossing of the target ratio.
pub fn calibrate_standoff(geometry: &LoopGeometry, frame: &NvFrame, target: &CalibrationTarget) -> Result<Calibration> {
    frame.validate()?;
    let (lo, hi) = target.search;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::invalid("search", "need 0 < lower bound < upper bound"));
    }
    let solver = FieldSolver::new(geometry)?;
    let resid = |h: f64| offset_ratio(&solver, frame, h, target).map(|r| r - target.ratio);

    let n = ((hi - lo) / 1e-6).ceil().max(1.0) as usize;
    let grid: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
    let mut prev: Option<(f64, f64)> = None;
    let mut closest = (f64::INFINITY, lo);
    for &h in &grid {
        let r = match resid(h) {
            Ok(r) => r,
            Err(Error::Clearance { .. }) => continue,
            Err(e) => return Err(e),
        };
        if r.abs() < closest.0 {
            closest = (r.abs(), h);
        }
        if let Some((hp, rp)) = prev {
            if rp == 0.0 || rp.signum() != r.signum() {
                let (mut a, mut b, mut ra) = (hp, h, rp);
                while b - a > 1e-12 {
                    let m = 0.5 * (a + b);
                    let rm = resid(m)?;
                    if rm.signum() == ra.signum() && rm != 0.0 {
                        a = m;
                        ra = rm;
                    } else {
                        b = m;
                    }
                }
                let h_star = 0.5 * (a + b);
                return Ok(Calibration {
                    standoff_height: h_star,
                    achieved_ratio: resid(h_star)? + target.ratio,
                    exact: true,
                });
            }
        }
        prev = Some((h, r));
    }
    if !closest.0.is_finite() {
        return Err(Error::EmptySelection("every standoff in the search interval violates clearance".into()));
    }
    Ok(Calibration {
        standoff_height: closest.1,
        achieved_ratio: resid(closest.1)? + target.ratio,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn on_axis_closed_form(radius: f64, z: f64, current: f64) -> f64 {
        MU_0 * current * radius * radius / (2.0 * (radius * radius + z * z).powf(1.5))
    }

    #[test]
    fn single_turn_center_field() {
        let g = LoopGeometry::single_filament(150e-6, 256);
        let b = biot_savart(Vec3::new(0.0, 0.0, 0.0), &g, 1.0).unwrap();
        let expect = MU_0 / (2.0 * 150e-6);
        assert_relative_eq!(expect, 4.19e-3, max_relative = 1e-3);
        assert_relative_eq!(b.z, expect, max_relative = 1e-3);
        assert!(b.x.abs() < 1e-12 * expect && b.y.abs() < 1e-12 * expect);
    }

    #[test]
    fn single_turn_on_axis_at_one_radius() {
        let r = 150e-6;
        let g = LoopGeometry::single_filament(r, 256);
        let b = biot_savart(Vec3::new(0.0, 0.0, r), &g, 1.0).unwrap();
        let center = MU_0 / (2.0 * r);
        assert_relative_eq!(b.z, center / 2f64.powf(1.5), max_relative = 1e-3);
    }

    #[test]
    fn three_turn_center_is_sum_of_closed_forms() {
        let g = LoopGeometry {
            bundle_radial: 1,
            bundle_vertical: 1,
            ..LoopGeometry::default()
        };
        let b = biot_savart(Vec3::new(0.0, 0.0, 0.0), &g, 1.0).unwrap();
        let expect: f64 = g.turns.iter().map(|t| MU_0 / (2.0 * t.radius)).sum();
        assert_relative_eq!(b.z, expect, max_relative = 1e-3);
    }

    #[test]
    fn on_axis_matches_closed_form_at_four_heights() {
        let r = 180e-6;
        let g = LoopGeometry::single_filament(r, 256);
        for z in [0.0, r / 2.0, r, 2.0 * r] {
            let b = biot_savart(Vec3::new(0.0, 0.0, z), &g, 1.0).unwrap();
            assert_relative_eq!(b.z, on_axis_closed_form(r, z, 1.0), max_relative = 1e-3);
        }
    }

    #[test]
    fn segment_doubling_converges() {
        let p = Vec3::new(0.0, 0.0, 20e-6);
        let coarse = biot_savart(p, &LoopGeometry::default(), 1.0).unwrap().norm();
        let fine = biot_savart(
            p,
            &LoopGeometry {
                segments_per_turn: 512,
                ..LoopGeometry::default()
            },
            1.0,
        )
        .unwrap()
        .norm();
        assert!(((fine - coarse) / fine).abs() < 1e-4);
    }

    #[test]
    fn clearance_violation_is_reported() {
        let g = LoopGeometry::default();
        let err = biot_savart(Vec3::new(150e-6, 0.0, 0.0), &g, 1.0).unwrap_err();
        assert!(matches!(err, Error::Clearance { turn: 0, .. }));
        // Just above the trace, inside one filament spacing.
        let err = biot_savart(Vec3::new(0.0, 180e-6, 5.5e-6), &g, 1.0).unwrap_err();
        assert!(matches!(err, Error::Clearance { turn: 1, .. }));
        assert!(biot_savart(Vec3::new(0.0, 180e-6, 20e-6), &g, 1.0).is_ok());
    }

    #[test]
    fn geometry_validation() {
        let mut g = LoopGeometry::default();
        g.turns.swap(0, 1);
        assert!(g.validate().is_err());
        let g = LoopGeometry {
            segments_per_turn: 32,
            ..LoopGeometry::default()
        };
        assert!(g.validate().is_err());
        let mut g = LoopGeometry::default();
        g.turns[1].radius = 160e-6;
        assert!(matches!(g.validate(), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn projection_examples() {
        let f = NvFrame::default();
        let n = f.axis();
        assert!(perp_projection(n * 3.0, &f) < 1e-15);
        let perp = Vec3::new(n.z, 0.0, -n.x);
        assert_relative_eq!(perp_projection(perp * 2.0, &f), 2.0, epsilon = 1e-14);
        let b = Vec3::new(0.0, 0.0, 1.0);
        assert_relative_eq!(perp_projection(b, &f), (2.0f64 / 3.0).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(perp_projection(b, &f), 54.7f64.to_radians().sin(), epsilon = 1e-3);
    }

    #[test]
    fn spot_has_nineteen_points_inside_disk() {
        let pts = spot_offsets(5e-6);
        assert_eq!(pts.len(), 19);
        assert!(pts.iter().all(|(x, y)| x.hypot(*y) <= 2.5e-6 + 1e-18));
        let cx: f64 = pts.iter().map(|p| p.0).sum();
        let cy: f64 = pts.iter().map(|p| p.1).sum();
        assert!(cx.abs() < 1e-18 && cy.abs() < 1e-18);
    }

    fn small_plane() -> EvalPlane {
        EvalPlane {
            standoff_height: 20e-6,
            extent_x: 100e-6,
            extent_y: 100e-6,
            pixel_pitch: 10e-6,
        }
    }

    #[test]
    fn map_f1_is_gamma_b_over_two() {
        let m = f1_map(&LoopGeometry::default(), &small_plane(), &NvFrame::default(), 1.0, &MapOptions::default())
            .unwrap();
        assert_eq!((m.nx, m.ny), (11, 11));
        for p in &m.pixels {
            assert!(!p.flagged);
            assert_eq!(p.f1, NV_GYROMAGNETIC_RATIO * p.b1_perp / 2.0);
            assert!(p.f1 >= 0.0);
        }
        let c = m.center().unwrap();
        assert_eq!((c.x, c.y), (0.0, 0.0));
    }

    #[test]
    fn map_scales_linearly_with_current() {
        let opts = MapOptions {
            spot_diameter: None,
            ..MapOptions::default()
        };
        let a = f1_map(&LoopGeometry::default(), &small_plane(), &NvFrame::default(), 0.7, &opts).unwrap();
        let b = f1_map(&LoopGeometry::default(), &small_plane(), &NvFrame::default(), 2.1, &opts).unwrap();
        for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
            assert_relative_eq!(pb.f1, 3.0 * pa.f1, max_relative = 1e-12);
        }
    }

    #[test]
    fn map_is_mirror_symmetric_about_tilt_plane() {
        let opts = MapOptions {
            spot_diameter: None,
            ..MapOptions::default()
        };
        let m = f1_map(&LoopGeometry::default(), &small_plane(), &NvFrame::default(), 1.0, &opts).unwrap();
        for iy in 0..m.ny {
            for ix in 0..m.nx {
                let a = m.pixel(ix, iy).f1;
                let b = m.pixel(ix, m.ny - 1 - iy).f1;
                assert_relative_eq!(a, b, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn total_field_is_symmetric_under_half_turn() {
        let g = LoopGeometry::default();
        let s = FieldSolver::new(&g).unwrap();
        for (x, y) in [(30e-6, 10e-6), (-50e-6, 40e-6), (0.0, 70e-6)] {
            let a = s.field(Vec3::new(x, y, 20e-6), 1.0).unwrap().norm();
            let b = s.field(Vec3::new(-x, -y, 20e-6), 1.0).unwrap().norm();
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
    }

    #[test]
    fn map_flags_pixels_over_conductors() {
        let plane = EvalPlane {
            standoff_height: 2e-6,
            extent_x: 300e-6,
            extent_y: 10e-6,
            pixel_pitch: 10e-6,
        };
        let opts = MapOptions {
            spot_diameter: None,
            ..MapOptions::default()
        };
        let m = f1_map(&LoopGeometry::default(), &plane, &NvFrame::default(), 1.0, &opts).unwrap();
        let flagged: Vec<f64> = m.pixels.iter().filter(|p| p.flagged).map(|p| p.x).collect();
        assert!(flagged.iter().any(|x| (x.abs() - 150e-6).abs() < 1e-9));
        assert!(m.pixels.iter().filter(|p| p.flagged).all(|p| p.f1.is_nan()));
    }

    #[test]
    fn homogeneity_examples() {
        let plane = small_plane();
        let mk = |vals: &[f64]| FieldMap {
            plane,
            nx: vals.len(),
            ny: 1,
            pixels: vals
                .iter()
                .enumerate()
                .map(|(i, &f1)| Pixel {
                    x: i as f64 * 1e-6,
                    y: 0.0,
                    b1_perp: 0.0,
                    f1,
                    flagged: false,
                })
                .collect(),
            drive_current: 1.0,
            drive_frequency: 1.0,
        };
        let h = homogeneity(&mk(&[5.0, 5.0, 5.0]), 40e-6).unwrap();
        assert_eq!(h.normalized_std, 0.0);
        let h = homogeneity(&mk(&[1.0, 3.0]), 40e-6).unwrap();
        assert_relative_eq!(h.mean, 2.0);
        assert_relative_eq!(h.normalized_std, 0.5);
        assert!(homogeneity(&mk(&[1.0]), 200e-6).is_err());
        let mut all_flagged = mk(&[1.0]);
        all_flagged.pixels[0].flagged = true;
        assert!(matches!(homogeneity(&all_flagged, 40e-6), Err(Error::EmptySelection(_))));
    }

    #[test]
    fn self_inductance_closed_form() {
        let l = circular_self_inductance(150e-6, 4.5e-6).unwrap();
        let expect = MU_0 * 150e-6 * ((8.0f64 * 150.0 / 4.5).ln() - 2.0);
        assert_relative_eq!(l, expect, max_relative = 1e-15);
        assert_relative_eq!(l, 0.676e-9, max_relative = 2e-3);
    }

    #[test]
    fn mutual_inductance_limits() {
        assert!(coaxial_mutual_inductance(150e-6, 150e-6, 0.0).is_err());
        // Far-field dipole limit: M -> mu0 pi r1^2 r2^2 / (2 d^3)
        let (r1, r2, d) = (1e-3, 2e-3, 1.0);
        let m = coaxial_mutual_inductance(r1, r2, d).unwrap();
        let dipole = MU_0 * PI * r1 * r1 * r2 * r2 / (2.0 * d.powi(3));
        assert_relative_eq!(m, dipole, max_relative = 1e-4);
        // Symmetric in its radii.
        let a = coaxial_mutual_inductance(150e-6, 210e-6, 3e-6).unwrap();
        let b = coaxial_mutual_inductance(210e-6, 150e-6, -3e-6).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }

    #[test]
    fn mutual_matches_flux_integral() {
        // Flux of filament 1 through filament 2 from the on-axis-free field:
        // integrate Bz of the discretized loop over the disk of radius r2.
        let (r1, r2, d) = (150e-6, 100e-6, 30e-6);
        let solver = FieldSolver::new(&LoopGeometry::single_filament(r1, 2048)).unwrap();
        let nr = 400;
        let mut flux = 0.0;
        for i in 0..nr {
            let rho = (i as f64 + 0.5) / nr as f64 * r2;
            let bz = solver.field(Vec3::new(rho, 0.0, d), 1.0).unwrap().z;
            flux += bz * 2.0 * PI * rho * (r2 / nr as f64);
        }
        let m = coaxial_mutual_inductance(r1, r2, d).unwrap();
        assert_relative_eq!(flux, m, max_relative = 1e-3);
    }

    #[test]
    fn default_loop_inductance_breakdown() {
        let b = inductance_breakdown(&LoopGeometry::default()).unwrap();
        assert_eq!(b.self_terms.len(), 3);
        assert_eq!(b.mutual_terms.len(), 3);
        let self_sum: f64 = b.self_terms.iter().sum();
        assert!(b.total > self_sum);
        assert!(b.mutual_terms.iter().all(|m| m.2 > 0.0));
    }

    #[test]
    fn calibration_hits_target_ratio() {
        let cal = calibrate_standoff(&LoopGeometry::default(), &NvFrame::default(), &CalibrationTarget::default())
            .unwrap();
        assert!(cal.exact);
        assert_relative_eq!(cal.achieved_ratio, 151.2 / 136.3, max_relative = 1e-6);
        assert!(cal.standoff_height > 5e-6 && cal.standoff_height < 60e-6);
    }
}
