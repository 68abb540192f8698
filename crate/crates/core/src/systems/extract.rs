//! Colour-threshold extraction of physical variables from a frame pair.
//!
//! Each object's mask keeps pixels whose own channel exceeds the threshold
//! while the other two stay below it; only the largest 8-connected component
//! survives. A principal-axis fit through the arm's anchor (the pivot for
//! arm 1, the reconstructed joint for arm 2) gives the initial angle, and its
//! RMS perpendicular residual is the shape test.
//!
//! Per-pixel coverages are recovered from the palette: an object's own
//! channel minus the smaller of the other two is its coverage, and one minus
//! the smallest channel is the coverage of any object. The initial arm angle
//! is then refined by a coarse-to-fine search for the capsule whose
//! supersampled coverage best satisfies `own ≤ capsule ≤ any`, which is
//! unaffected by parts drawn on top of the arm. The bob centre is fitted the
//! same way. Since the bob sits on the tip of the last arm, that arm's angle
//! is read as the anchor-to-bob direction once its mask has passed the
//! shape test; circular motion reads its angle from the bob alone, and the
//! elastic elongation is the joint-to-bob distance minus the rest length.

use std::collections::VecDeque;

use super::render::{Frame, FramePair, Geometry};
use super::{
    state_energy, total_energy, wrap_angle, PhysicalVariables, StateVector, SystemKind, SystemSpec,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractConfig {
    pub threshold: f64,
    /// Minimum component size as a fraction of the frame's pixel count.
    pub min_blob_fraction: f64,
    /// Maximum RMS axis-fit residual in pixels.
    pub max_residual: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            threshold: 0.5,
            min_blob_fraction: 0.001,
            max_residual: 2.0,
        }
    }
}

/// Why a frame pair failed extraction.
#[derive(Clone, Debug, PartialEq)]
pub enum Rejection {
    SmallBlob { object: &'static str, pixels: usize },
    Residual { object: &'static str, rms: f64 },
    SizeMismatch,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::SmallBlob { object, pixels } => {
                write!(f, "{object}: component of {pixels} px is below min_blob")
            }
            Rejection::Residual { object, rms } => {
                write!(f, "{object}: axis residual {rms:.3} px above limit")
            }
            Rejection::SizeMismatch => f.write_str("frame size does not match geometry"),
        }
    }
}

#[derive(Clone, Copy)]
enum Palette {
    Red,
    Green,
    Blue,
}

impl Palette {
    fn channel(self) -> usize {
        match self {
            Palette::Red => 0,
            Palette::Green => 1,
            Palette::Blue => 2,
        }
    }

    fn object(self) -> &'static str {
        match self {
            Palette::Red => "arm 1",
            Palette::Blue => "arm 2",
            Palette::Green => "bob",
        }
    }
}

/// Weighted pixel centres of the largest component of one colour.
fn component(frame: &Frame, colour: Palette, cfg: &ExtractConfig) -> Vec<([f64; 2], f64)> {
    let n = frame.size();
    let own = colour.channel();
    let data = frame.data();
    let mut mask = vec![false; n * n];
    for (p, m) in mask.iter_mut().enumerate() {
        let px = &data[p * 3..p * 3 + 3];
        *m = (0..3).all(|c| {
            if c == own {
                px[c] > cfg.threshold
            } else {
                px[c] < cfg.threshold
            }
        });
    }
    let mut label = vec![usize::MAX; n * n];
    let mut best: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n * n {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let mut members = Vec::new();
        label[start] = start;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            members.push(p);
            let (x, y) = ((p % n) as isize, (p / n) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= n as isize || ny >= n as isize {
                        continue;
                    }
                    let q = ny as usize * n + nx as usize;
                    if mask[q] && label[q] == usize::MAX {
                        label[q] = start;
                        queue.push_back(q);
                    }
                }
            }
        }
        if members.len() > best.len() {
            best = members;
        }
    }
    best.sort_unstable();
    best.into_iter()
        .map(|p| {
            let px = &data[p * 3..p * 3 + 3];
            let others = (0..3)
                .filter(|&c| c != own)
                .map(|c| px[c])
                .fold(f64::INFINITY, f64::min);
            let centre = [(p % n) as f64 + 0.5, (p / n) as f64 + 0.5];
            (centre, (px[own] - others).max(1e-6))
        })
        .collect()
}

/// Principal axis of the second moments about `anchor`, oriented away from
/// it. Returns the image-space angle (as used by `Geometry::offset`) and the
/// RMS perpendicular residual.
fn anchored_axis(pts: &[([f64; 2], f64)], anchor: [f64; 2]) -> (f64, f64) {
    let (mut sxx, mut syy, mut sxy, mut sw) = (0.0, 0.0, 0.0, 0.0);
    let (mut mx, mut my) = (0.0, 0.0);
    for (p, w) in pts {
        let (dx, dy) = (p[0] - anchor[0], p[1] - anchor[1]);
        sxx += w * dx * dx;
        syy += w * dy * dy;
        sxy += w * dx * dy;
        mx += w * dx;
        my += w * dy;
        sw += w;
    }
    let phi = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (mut ux, mut uy) = (phi.cos(), phi.sin());
    if ux * mx + uy * my < 0.0 {
        ux = -ux;
        uy = -uy;
    }
    // perpendicular second moment
    let perp = (sxx * uy * uy - 2.0 * sxy * ux * uy + syy * ux * ux).max(0.0) / sw;
    (ux.atan2(uy), perp.sqrt())
}

/// Per-pixel coverage of each palette colour and of any object.
struct Coverage {
    size: usize,
    own: [Vec<f64>; 3],
    any: Vec<f64>,
}

impl Coverage {
    fn new(frame: &Frame) -> Coverage {
        let n = frame.size() * frame.size();
        let data = frame.data();
        let mut own = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut any = vec![0.0; n];
        for p in 0..n {
            let px = &data[p * 3..p * 3 + 3];
            for c in 0..3 {
                let others = px[(c + 1) % 3].min(px[(c + 2) % 3]);
                own[c][p] = (px[c] - others).max(0.0);
            }
            any[p] = 1.0 - px[0].min(px[1]).min(px[2]);
        }
        Coverage {
            size: frame.size(),
            own,
            any,
        }
    }
}

fn segment_distance_sq(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (p[0] - a[0] - t * dx, p[1] - a[1] - t * dy);
    ex * ex + ey * ey
}

/// Coarse-to-fine search around `theta0` for the capsule (anchored, of
/// length `len` px) most consistent with the observed coverages.
fn refine_arm(
    cov: &Coverage,
    colour: Palette,
    anchor: [f64; 2],
    len: f64,
    half_width: f64,
    theta0: f64,
) -> f64 {
    let n = cov.size;
    let reach = len + half_width + 1.5;
    let lo = |v: f64| (v - reach).floor().max(0.0) as usize;
    let hi = |v: f64| ((v + reach).ceil() as usize).min(n);
    let own = &cov.own[colour.channel()];
    let mut pixels = Vec::new();
    for y in lo(anchor[1])..hi(anchor[1]) {
        for x in lo(anchor[0])..hi(anchor[0]) {
            let (cx, cy) = (x as f64 + 0.5 - anchor[0], y as f64 + 0.5 - anchor[1]);
            if cx * cx + cy * cy <= reach * reach {
                pixels.push((x, y));
            }
        }
    }
    let hw2 = half_width * half_width;
    let cost = |theta: f64| {
        let tip = [anchor[0] + len * theta.sin(), anchor[1] + len * theta.cos()];
        let mut c = 0.0;
        for &(x, y) in &pixels {
            let mut inside = 0.0;
            for sy in 0..2 {
                for sx in 0..2 {
                    let p = [
                        x as f64 + 0.25 + 0.5 * sx as f64,
                        y as f64 + 0.25 + 0.5 * sy as f64,
                    ];
                    if segment_distance_sq(p, anchor, tip) <= hw2 {
                        inside += 0.25;
                    }
                }
            }
            let i = y * n + x;
            let over = (own[i] - inside).max(0.0);
            let under = (inside - cov.any[i]).max(0.0);
            c += over * over + under * under;
        }
        c
    };
    let mut centre = theta0;
    for (span, step) in [(12.0f64, 1.0f64), (1.0, 0.1), (0.1, 0.01), (0.01, 0.001)] {
        let k = (span / step).round() as i64;
        let candidates: Vec<(f64, f64)> = (-k..=k)
            .map(|i| {
                let t = centre + (i as f64 * step).to_radians();
                (t, cost(t))
            })
            .collect();
        let best = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let tied: Vec<f64> = candidates
            .iter()
            .filter(|c| c.1 <= best + 1e-12)
            .map(|c| c.0)
            .collect();
        centre = tied.iter().sum::<f64>() / tied.len() as f64;
    }
    centre
}

/// Disc centre fitted to the coverages: starts from the coverage-weighted
/// centroid around the component and searches coarse-to-fine for the centre
/// whose supersampled disc best satisfies `own ≤ disc ≤ any`.
fn bob_centre(cov: &Coverage, pts: &[([f64; 2], f64)], radius: f64) -> [f64; 2] {
    let n = cov.size;
    let nf = n as f64;
    let (mut x0, mut y0, mut x1, mut y1) = (nf, nf, 0.0f64, 0.0f64);
    for (p, _) in pts {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let clamp = |v: f64| v.clamp(0.0, nf - 1.0) as usize;
    let green = &cov.own[Palette::Green.channel()];
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for y in clamp(y0 - 2.5)..=clamp(y1 + 1.5) {
        for x in clamp(x0 - 2.5)..=clamp(x1 + 1.5) {
            let w = green[y * n + x];
            sx += w * (x as f64 + 0.5);
            sy += w * (y as f64 + 0.5);
            sw += w;
        }
    }
    let mut centre = [sx / sw, sy / sw];
    let reach = radius + 2.0;
    let r2 = radius * radius;
    let (xa, xb) = (clamp(centre[0] - reach), clamp(centre[0] + reach));
    let (ya, yb) = (clamp(centre[1] - reach), clamp(centre[1] + reach));
    let cost = |c: [f64; 2]| {
        let mut total = 0.0;
        for y in ya..=yb {
            for x in xa..=xb {
                let mut inside = 0.0;
                for sy in 0..2 {
                    for sx in 0..2 {
                        let dx = x as f64 + 0.25 + 0.5 * sx as f64 - c[0];
                        let dy = y as f64 + 0.25 + 0.5 * sy as f64 - c[1];
                        if dx * dx + dy * dy <= r2 {
                            inside += 0.25;
                        }
                    }
                }
                let i = y * n + x;
                let over = (green[i] - inside).max(0.0);
                let under = (inside - cov.any[i]).max(0.0);
                total += over * over + under * under;
            }
        }
        total
    };
    for (span, step) in [(0.5f64, 0.1f64), (0.1, 0.01), (0.01, 0.001)] {
        let k = (span / step).round() as i64;
        let mut scored = Vec::with_capacity(((2 * k + 1) * (2 * k + 1)) as usize);
        for i in -k..=k {
            for j in -k..=k {
                let c = [centre[0] + i as f64 * step, centre[1] + j as f64 * step];
                scored.push((c, cost(c)));
            }
        }
        let best = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let tied: Vec<[f64; 2]> = scored
            .iter()
            .filter(|s| s.1 <= best + 1e-12)
            .map(|s| s.0)
            .collect();
        let m = tied.len() as f64;
        centre = [
            tied.iter().map(|c| c[0]).sum::<f64>() / m,
            tied.iter().map(|c| c[1]).sum::<f64>() / m,
        ];
    }
    centre
}

fn direction(from: [f64; 2], to: [f64; 2]) -> f64 {
    (to[0] - from[0]).atan2(to[1] - from[1])
}

struct FrameReading {
    theta1: f64,
    theta2: Option<f64>,
    z: Option<f64>,
}

fn read_frame(
    spec: &SystemSpec,
    geo: &Geometry,
    frame: &Frame,
    cfg: &ExtractConfig,
) -> Result<FrameReading, Rejection> {
    if frame.size() != geo.size {
        return Err(Rejection::SizeMismatch);
    }
    let min_blob = cfg.min_blob_fraction * (geo.size * geo.size) as f64;
    let blob = |colour: Palette| {
        let pts = component(frame, colour, cfg);
        if pts.is_empty() || (pts.len() as f64) < min_blob {
            Err(Rejection::SmallBlob {
                object: colour.object(),
                pixels: pts.len(),
            })
        } else {
            Ok(pts)
        }
    };
    let axis = |colour: Palette, anchor: [f64; 2]| -> Result<f64, Rejection> {
        let pts = blob(colour)?;
        let (theta, rms) = anchored_axis(&pts, anchor);
        if rms > cfg.max_residual {
            return Err(Rejection::Residual {
                object: colour.object(),
                rms,
            });
        }
        Ok(theta)
    };
    let cov = Coverage::new(frame);
    let l1 = spec.length1 * geo.scale;
    match spec.system {
        SystemKind::CircularMotion => {
            let bob = bob_centre(&cov, &blob(Palette::Green)?, geo.bob_radius);
            Ok(FrameReading {
                theta1: direction(geo.pivot, bob),
                theta2: None,
                z: None,
            })
        }
        SystemKind::SinglePendulum => {
            axis(Palette::Red, geo.pivot)?;
            let bob = bob_centre(&cov, &blob(Palette::Green)?, geo.bob_radius);
            Ok(FrameReading {
                theta1: direction(geo.pivot, bob),
                theta2: None,
                z: None,
            })
        }
        SystemKind::RigidDoublePendulum | SystemKind::ElasticDoublePendulum => {
            let t0 = axis(Palette::Red, geo.pivot)?;
            let theta1 = refine_arm(&cov, Palette::Red, geo.pivot, l1, geo.arm1_half_width, t0);
            let joint = geo.offset(geo.pivot, spec.length1, theta1);
            axis(Palette::Blue, joint)?;
            let bob = bob_centre(&cov, &blob(Palette::Green)?, geo.bob_radius);
            let z = (spec.system == SystemKind::ElasticDoublePendulum).then(|| {
                let reach = ((bob[0] - joint[0]).powi(2) + (bob[1] - joint[1]).powi(2)).sqrt();
                reach / geo.scale - spec.l2()
            });
            Ok(FrameReading {
                theta1,
                theta2: Some(direction(joint, bob)),
                z,
            })
        }
    }
}

/// Extraction with the default thresholds.
pub fn extract_physical(
    spec: &SystemSpec,
    pair: &FramePair,
    obs_dt: f64,
) -> Result<PhysicalVariables, Rejection> {
    extract_physical_with(spec, pair, obs_dt, &ExtractConfig::default())
}

/// Angles are read from the second frame; rates are wrapped differences
/// between the two frames divided by `obs_dt`.
pub fn extract_physical_with(
    spec: &SystemSpec,
    pair: &FramePair,
    obs_dt: f64,
    cfg: &ExtractConfig,
) -> Result<PhysicalVariables, Rejection> {
    let geo = Geometry::new(spec, pair.size()).map_err(|_| Rejection::SizeMismatch)?;
    let a = read_frame(spec, &geo, &pair.first, cfg)?;
    let b = read_frame(spec, &geo, &pair.second, cfg)?;
    let rate = |x: f64, y: f64| wrap_angle(y - x).to_degrees() / obs_dt;
    let mut v = PhysicalVariables {
        theta1: Some(wrap_angle(b.theta1).to_degrees()),
        theta1_dot: Some(rate(a.theta1, b.theta1)),
        ..Default::default()
    };
    if let (Some(t2a), Some(t2b)) = (a.theta2, b.theta2) {
        v.theta2 = Some(wrap_angle(t2b).to_degrees());
        v.theta2_dot = Some(rate(t2a, t2b));
    }
    if let (Some(za), Some(zb)) = (a.z, b.z) {
        v.z = Some(zb);
        v.z_dot = Some((zb - za) / obs_dt);
    }
    v.energy = total_energy(spec, &v).ok();
    Ok(v)
}

/// Ground-truth variables of a simulator state, in reporting units.
pub fn physical_from_state(spec: &SystemSpec, s: &StateVector) -> PhysicalVariables {
    let q = &s.0;
    let deg = |a: f64| wrap_angle(a).to_degrees();
    let energy = state_energy(spec, s).ok();
    match spec.system {
        SystemKind::CircularMotion | SystemKind::SinglePendulum => PhysicalVariables {
            theta1: Some(deg(q[0])),
            theta1_dot: Some(q[1].to_degrees()),
            energy,
            ..Default::default()
        },
        SystemKind::RigidDoublePendulum => PhysicalVariables {
            theta1: Some(deg(q[0])),
            theta2: Some(deg(q[1])),
            theta1_dot: Some(q[2].to_degrees()),
            theta2_dot: Some(q[3].to_degrees()),
            energy,
            ..Default::default()
        },
        SystemKind::ElasticDoublePendulum => PhysicalVariables {
            theta1: Some(deg(q[0])),
            theta2: Some(deg(q[1])),
            z: Some(q[2]),
            theta1_dot: Some(q[3].to_degrees()),
            theta2_dot: Some(q[4].to_degrees()),
            z_dot: Some(q[5]),
            energy,
        },
    }
}
