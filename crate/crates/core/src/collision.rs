//! Closed-set overlap tests for spheres, axis-aligned boxes and capsules.
//!
//! Capsules extend along the local z axis of their pose. Boxes ignore the
//! orientation of their pose: they stay axis-aligned in world frame.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    Aabb { half_extents: [f64; 3] },
    Capsule { radius: f64, half_length: f64 },
}

impl Shape {
    pub fn is_valid(&self) -> bool {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            Shape::Sphere { radius } => pos(radius),
            Shape::Aabb { half_extents } => half_extents.iter().all(|v| pos(*v)),
            Shape::Capsule { radius, half_length } => pos(radius) && pos(half_length),
        }
    }

    pub fn volume(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Shape::Sphere { radius } => 4.0 / 3.0 * PI * radius.powi(3),
            Shape::Aabb { half_extents: h } => 8.0 * h[0] * h[1] * h[2],
            Shape::Capsule { radius, half_length } => {
                4.0 / 3.0 * PI * radius.powi(3) + PI * radius * radius * 2.0 * half_length
            }
        }
    }

    /// World-frame primitive for this shape placed at `pose`.
    pub fn placed(&self, pose: &Pose) -> Primitive {
        let c = pose.position();
        match *self {
            Shape::Sphere { radius } => Primitive::Capsule { a: c, b: c, radius },
            Shape::Aabb { half_extents } => Primitive::Aabb { center: c, half: Vector3::from(half_extents) },
            Shape::Capsule { radius, half_length } => {
                let axis = pose.rotation() * Vector3::z() * half_length;
                Primitive::Capsule { a: c - axis, b: c + axis, radius }
            }
        }
    }
}

/// A shape resolved into world coordinates. Spheres are zero-length capsules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Capsule { a: Vector3<f64>, b: Vector3<f64>, radius: f64 },
    Aabb { center: Vector3<f64>, half: Vector3<f64> },
}

impl Primitive {
    /// Point membership (closed).
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            Primitive::Capsule { a, b, radius } => point_segment_dist2(p, a, b) <= radius * radius,
            Primitive::Aabb { center, half } => {
                (0..3).all(|k| (p[k] - center[k]).abs() <= half[k])
            }
        }
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            Primitive::Capsule { a, b, radius } => {
                let r = Vector3::repeat(*radius);
                (a.inf(b) - r, a.sup(b) + r)
            }
            Primitive::Aabb { center, half } => (center - half, center + half),
        }
    }
}

pub fn collide(a: &Shape, pose_a: &Pose, b: &Shape, pose_b: &Pose) -> bool {
    primitives_overlap(&a.placed(pose_a), &b.placed(pose_b))
}

pub fn primitives_overlap(a: &Primitive, b: &Primitive) -> bool {
    match (a, b) {
        (
            Primitive::Capsule { a: a0, b: a1, radius: ra },
            Primitive::Capsule { a: b0, b: b1, radius: rb },
        ) => {
            let r = ra + rb;
            segment_segment_dist2(a0, a1, b0, b1) <= r * r
        }
        (Primitive::Capsule { a: s0, b: s1, radius }, Primitive::Aabb { center, half })
        | (Primitive::Aabb { center, half }, Primitive::Capsule { a: s0, b: s1, radius }) => {
            segment_aabb_dist2(s0, s1, center, half) <= radius * radius
        }
        (Primitive::Aabb { center: c0, half: h0 }, Primitive::Aabb { center: c1, half: h1 }) => {
            (0..3).all(|k| (c0[k] - c1[k]).abs() <= h0[k] + h1[k])
        }
    }
}

pub fn point_segment_dist2(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (a + ab * t - p).norm_squared()
}

/// Squared distance between segments `p0p1` and `q0q1` (closest-point parameters clamped to both).
pub fn segment_segment_dist2(p0: &Vector3<f64>, p1: &Vector3<f64>, q0: &Vector3<f64>, q1: &Vector3<f64>) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    const EPS: f64 = 1e-18;

    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    let cp = p0 + d1 * s;
    let cq = q0 + d2 * t;
    (cp - cq).norm_squared()
}

pub fn point_aabb_dist2(p: &Vector3<f64>, center: &Vector3<f64>, half: &Vector3<f64>) -> f64 {
    (0..3)
        .map(|k| {
            let d = (p[k] - center[k]).abs() - half[k];
            if d > 0.0 { d * d } else { 0.0 }
        })
        .sum()
}

/// Squared distance from segment `a0a1` to a box.
///
/// Along the segment the squared distance is a convex piecewise quadratic whose
/// pieces change where a coordinate crosses a slab plane; each piece is
/// minimized in closed form.
pub fn segment_aabb_dist2(a0: &Vector3<f64>, a1: &Vector3<f64>, center: &Vector3<f64>, half: &Vector3<f64>) -> f64 {
    let dir = a1 - a0;
    let lo = center - half;
    let hi = center + half;

    let mut breaks = vec![0.0, 1.0];
    for k in 0..3 {
        if dir[k] != 0.0 {
            for plane in [lo[k], hi[k]] {
                let t = (plane - a0[k]) / dir[k];
                if t > 0.0 && t < 1.0 {
                    breaks.push(t);
                }
            }
        }
    }
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let at = |t: f64| point_aabb_dist2(&(a0 + dir * t), center, half);
    let mut best = at(0.0).min(at(1.0));
    for w in breaks.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        let mid = a0 + dir * (0.5 * (t0 + t1));
        // Within the piece every axis is either inside its slab or clamped to one face.
        let (mut qa, mut qb) = (0.0, 0.0);
        for k in 0..3 {
            let bound = if mid[k] < lo[k] {
                lo[k]
            } else if mid[k] > hi[k] {
                hi[k]
            } else {
                continue;
            };
            let off = a0[k] - bound;
            qa += dir[k] * dir[k];
            qb += 2.0 * dir[k] * off;
        }
        if qa > 0.0 {
            let t = (-qb / (2.0 * qa)).clamp(t0, t1);
            best = best.min(at(t));
        }
        best = best.min(at(t0)).min(at(t1));
    }
    best
}
