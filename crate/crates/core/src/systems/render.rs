//! 2×2 supersampled rasterizer.
//!
//! White background; arm 1 is a red capsule, arm 2 a blue capsule, the bob a
//! green disc, painted in that order. The pivot sits at the canvas centre and
//! metres map to pixels so that the largest nominal reach (plus a bob radius
//! and one pixel) fits inside half the canvas. Arm 1 is drawn wider than
//! arm 2.

use serde::{Deserialize, Serialize};

use super::{Result, StateVector, SystemError, SystemKind, SystemSpec};

pub const RED: [f64; 3] = [1.0, 0.0, 0.0];
pub const BLUE: [f64; 3] = [0.0, 0.0, 1.0];
pub const GREEN: [f64; 3] = [0.0, 1.0, 0.0];

const ARM1_HALF_WIDTH: f64 = 0.04;
const ARM2_HALF_WIDTH: f64 = 0.02;
const BOB_RADIUS: f64 = 0.06;
/// Extra room for the spring arm, as a fraction of its rest length.
const SPRING_ALLOWANCE: f64 = 0.5;

/// Square RGB raster, row-major, channels interleaved, values in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    size: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(size: usize, data: Vec<f64>) -> Option<Frame> {
        (data.len() == size * size * 3 && data.iter().all(|v| (0.0..=1.0).contains(v)))
            .then_some(Frame { size, data })
    }

    pub fn white(size: usize) -> Frame {
        Frame {
            size,
            data: vec![1.0; size * size * 3],
        }
    }

    pub fn from_u8(size: usize, bytes: &[u8]) -> Option<Frame> {
        (bytes.len() == size * size * 3).then(|| Frame {
            size,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.size + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel-major copy (3 planes of size²).
    pub fn to_chw(&self) -> Vec<f64> {
        let n = self.size * self.size;
        let mut out = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                out[c * n + p] = self.data[p * 3 + c];
            }
        }
        out
    }

    /// Inverse of [`Frame::to_chw`]; values are clamped into [0, 1].
    pub fn from_chw(size: usize, planes: &[f64]) -> Frame {
        let n = size * size;
        assert_eq!(
            planes.len(),
            3 * n,
            "plane buffer does not match frame size"
        );
        let mut data = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                data[p * 3 + c] = planes[c * n + p].clamp(0.0, 1.0);
            }
        }
        Frame { size, data }
    }
}

/// Two consecutive frames `(f_t, f_{t+dt})`. As a network tensor the pair is
/// six channel planes: the first frame's RGB, then the second's.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub first: Frame,
    pub second: Frame,
}

impl FramePair {
    pub fn new(first: Frame, second: Frame) -> Option<FramePair> {
        (first.size == second.size).then_some(FramePair { first, second })
    }

    pub fn size(&self) -> usize {
        self.first.size
    }

    pub fn to_planes(&self) -> Vec<f64> {
        let mut v = self.first.to_chw();
        v.extend(self.second.to_chw());
        v
    }

    pub fn from_planes(size: usize, planes: &[f64]) -> FramePair {
        let n = 3 * size * size;
        FramePair {
            first: Frame::from_chw(size, &planes[..n]),
            second: Frame::from_chw(size, &planes[n..]),
        }
    }
}

/// Pixel-space layout of a system on a canvas. Pixel `(x, y)` covers
/// `[x, x+1) × [y, y+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub size: usize,
    pub pivot: [f64; 2],
    /// Pixels per metre.
    pub scale: f64,
    pub arm1_half_width: f64,
    pub arm2_half_width: f64,
    pub bob_radius: f64,
}

/// Pixel positions of the drawable parts for one state.
pub(crate) struct Pose {
    pub arm1: Option<([f64; 2], [f64; 2])>,
    pub arm2: Option<([f64; 2], [f64; 2])>,
    pub bob: [f64; 2],
}

impl Geometry {
    pub fn new(spec: &SystemSpec, size: usize) -> Result<Geometry> {
        if size < 32 {
            return Err(SystemError::FrameTooSmall(size));
        }
        let s = size as f64;
        let reach = match spec.system {
            SystemKind::CircularMotion | SystemKind::SinglePendulum => spec.length1,
            SystemKind::RigidDoublePendulum => spec.length1 + spec.l2(),
            SystemKind::ElasticDoublePendulum => {
                spec.length1 + spec.l2() * (1.0 + SPRING_ALLOWANCE)
            }
        };
        let bob_radius = BOB_RADIUS * s;
        Ok(Geometry {
            size,
            pivot: [s / 2.0, s / 2.0],
            scale: (s / 2.0 - bob_radius - 1.0) / reach,
            arm1_half_width: ARM1_HALF_WIDTH * s,
            arm2_half_width: ARM2_HALF_WIDTH * s,
            bob_radius,
        })
    }

    /// Image position of `pivot + length·(sin θ, cos θ)`.
    pub fn offset(&self, from: [f64; 2], length_m: f64, theta: f64) -> [f64; 2] {
        [
            from[0] + self.scale * length_m * theta.sin(),
            from[1] + self.scale * length_m * theta.cos(),
        ]
    }

    pub(crate) fn pose(&self, spec: &SystemSpec, s: &StateVector) -> Pose {
        let q = &s.0;
        match spec.system {
            SystemKind::CircularMotion => Pose {
                arm1: None,
                arm2: None,
                bob: self.offset(self.pivot, spec.length1, q[0]),
            },
            SystemKind::SinglePendulum => {
                let tip = self.offset(self.pivot, spec.length1, q[0]);
                Pose {
                    arm1: Some((self.pivot, tip)),
                    arm2: None,
                    bob: tip,
                }
            }
            SystemKind::RigidDoublePendulum | SystemKind::ElasticDoublePendulum => {
                let joint = self.offset(self.pivot, spec.length1, q[0]);
                let l2 = if spec.system == SystemKind::ElasticDoublePendulum {
                    spec.l2() + q[2]
                } else {
                    spec.l2()
                };
                let tip = self.offset(joint, l2, q[1]);
                Pose {
                    arm1: Some((self.pivot, joint)),
                    arm2: Some((joint, tip)),
                    bob: tip,
                }
            }
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

fn inside_canvas(
    object: &'static str,
    points: &[[f64; 2]],
    radius: f64,
    size: usize,
) -> Result<()> {
    let s = size as f64;
    for p in points {
        if p[0] - radius < 0.0 || p[1] - radius < 0.0 || p[0] + radius > s || p[1] + radius > s {
            return Err(SystemError::OutOfFrame { object, size });
        }
    }
    Ok(())
}

/// Rasterizes `s`. Fails if any object would leave the canvas.
pub fn render(spec: &SystemSpec, s: &StateVector, size: usize) -> Result<Frame> {
    spec.check_state(s)?;
    if !s.is_finite() {
        return Err(SystemError::NonFinite { stage: 0 });
    }
    let geo = Geometry::new(spec, size)?;
    let pose = geo.pose(spec, s);
    if let Some((a, b)) = pose.arm1 {
        inside_canvas("arm 1", &[a, b], geo.arm1_half_width, size)?;
    }
    if let Some((a, b)) = pose.arm2 {
        inside_canvas("arm 2", &[a, b], geo.arm2_half_width, size)?;
    }
    inside_canvas("bob", &[pose.bob], geo.bob_radius, size)?;

    let w1 = geo.arm1_half_width * geo.arm1_half_width;
    let w2 = geo.arm2_half_width * geo.arm2_half_width;
    let rb = geo.bob_radius * geo.bob_radius;
    let mut data = vec![0.0; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0; 3];
            for sy in 0..2 {
                for sx in 0..2 {
                    let p = [
                        x as f64 + 0.25 + 0.5 * sx as f64,
                        y as f64 + 0.25 + 0.5 * sy as f64,
                    ];
                    let (bx, by) = (p[0] - pose.bob[0], p[1] - pose.bob[1]);
                    let color = if bx * bx + by * by <= rb {
                        GREEN
                    } else if pose
                        .arm2
                        .is_some_and(|(a, b)| segment_distance_sq(p, a, b) <= w2)
                    {
                        BLUE
                    } else if pose
                        .arm1
                        .is_some_and(|(a, b)| segment_distance_sq(p, a, b) <= w1)
                    {
                        RED
                    } else {
                        [1.0; 3]
                    };
                    for c in 0..3 {
                        acc[c] += color[c];
                    }
                }
            }
            let i = (y * size + x) * 3;
            for c in 0..3 {
                data[i + c] = acc[c] * 0.25;
            }
        }
    }
    Ok(Frame { size, data })
}
