//! Small 2D geometry helpers: axis-aligned and oriented rectangles.

use serde::{Deserialize, Serialize};

pub type Vec2 = [f64; 2];

/// Contact slack: faces closer than this count as touching, not overlapping.
pub const CONTACT_TOL: f64 = 1e-9;

#[inline]
pub fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Aabb {
            min: [min[0].min(max[0]), min[1].min(max[1])],
            max: [min[0].max(max[0]), min[1].max(max[1])],
        }
    }

    pub fn square(center: Vec2, width: f64) -> Self {
        let h = width / 2.0;
        Aabb {
            min: [center[0] - h, center[1] - h],
            max: [center[0] + h, center[1] + h],
        }
    }

    pub fn center(&self) -> Vec2 {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }

    pub fn inflate(&self, by: f64) -> Self {
        Aabb {
            min: [self.min[0] - by, self.min[1] - by],
            max: [self.max[0] + by, self.max[1] + by],
        }
    }

    pub fn translate(&self, d: Vec2) -> Self {
        Aabb {
            min: add(self.min, d),
            max: add(self.max, d),
        }
    }

    /// Union of two rectangles' extents.
    pub fn union(&self, other: &Aabb) -> Self {
        Aabb {
            min: [self.min[0].min(other.min[0]), self.min[1].min(other.min[1])],
            max: [self.max[0].max(other.max[0]), self.max[1].max(other.max[1])],
        }
    }

    /// Open-interval overlap along one axis.
    #[inline]
    pub fn overlaps_axis(&self, other: &Aabb, axis: usize) -> bool {
        self.min[axis] < other.max[axis] - CONTACT_TOL && other.min[axis] < self.max[axis] - CONTACT_TOL
    }

    /// Interiors intersect (touching faces do not count).
    pub fn overlaps(&self, other: &Aabb) -> bool {
        self.overlaps_axis(other, 0) && self.overlaps_axis(other, 1)
    }

    pub fn contains_point(&self, p: Vec2) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    /// Whether `inner` lies entirely inside `self`.
    pub fn contains(&self, inner: &Aabb) -> bool {
        inner.min[0] >= self.min[0] - CONTACT_TOL
            && inner.min[1] >= self.min[1] - CONTACT_TOL
            && inner.max[0] <= self.max[0] + CONTACT_TOL
            && inner.max[1] <= self.max[1] + CONTACT_TOL
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }
}

/// How far `moving` can travel by `delta` along `axis` before touching any
/// of `blockers` (which it must not already overlap along that direction).
/// Returns a displacement with the sign of `delta` and magnitude `<= |delta|`.
pub fn sweep_axis(moving: &Aabb, axis: usize, delta: f64, blockers: &[Aabb]) -> f64 {
    let other = 1 - axis;
    let mut allowed = delta;
    for b in blockers {
        if !moving.overlaps_axis(b, other) {
            continue;
        }
        if delta > 0.0 && b.min[axis] >= moving.max[axis] - CONTACT_TOL {
            allowed = allowed.min((b.min[axis] - moving.max[axis]).max(0.0));
        } else if delta < 0.0 && b.max[axis] <= moving.min[axis] + CONTACT_TOL {
            allowed = allowed.max((b.max[axis] - moving.min[axis]).min(0.0));
        }
    }
    allowed
}

/// How far `moving` can travel along `axis` while staying inside `bounds`.
pub fn clamp_inside(moving: &Aabb, axis: usize, delta: f64, bounds: &Aabb) -> f64 {
    if delta > 0.0 {
        delta.min((bounds.max[axis] - moving.max[axis]).max(0.0))
    } else {
        delta.max((bounds.min[axis] - moving.min[axis]).min(0.0))
    }
}

/// Oriented rectangle given by center, half extents and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    /// Half extent along the local x axis (the long axis for the couch).
    pub half_long: f64,
    pub half_short: f64,
    pub theta: f64,
}

impl Obb {
    pub fn axes(&self) -> [Vec2; 2] {
        let (s, c) = self.theta.sin_cos();
        [[c, s], [-s, c]]
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let [u, v] = self.axes();
        let a = scale(u, self.half_long);
        let b = scale(v, self.half_short);
        let c = self.center;
        [
            add(add(c, a), b),
            add(sub(c, a), b),
            sub(sub(c, a), b),
            sub(add(c, a), b),
        ]
    }

    /// Axis-aligned bounds of the rectangle.
    pub fn bounds(&self) -> Aabb {
        let [u, v] = self.axes();
        let ex = self.half_long * u[0].abs() + self.half_short * v[0].abs();
        let ey = self.half_long * u[1].abs() + self.half_short * v[1].abs();
        Aabb {
            min: [self.center[0] - ex, self.center[1] - ey],
            max: [self.center[0] + ex, self.center[1] + ey],
        }
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        let [u, v] = self.axes();
        let c = dot(self.center, axis);
        let r = self.half_long * dot(u, axis).abs() + self.half_short * dot(v, axis).abs();
        (c - r, c + r)
    }

    /// Separating-axis test against an axis-aligned rectangle; `tol` is the
    /// penetration depth tolerated before reporting overlap.
    pub fn overlaps_aabb(&self, b: &Aabb, tol: f64) -> bool {
        let bb = self.bounds();
        if bb.min[0] >= b.max[0] - tol
            || b.min[0] >= bb.max[0] - tol
            || bb.min[1] >= b.max[1] - tol
            || b.min[1] >= bb.max[1] - tol
        {
            return false;
        }
        for axis in self.axes() {
            let (a0, a1) = self.project(axis);
            let bc = dot(b.center(), axis);
            let br = (b.max[0] - b.min[0]) / 2.0 * axis[0].abs() + (b.max[1] - b.min[1]) / 2.0 * axis[1].abs();
            if a1 <= bc - br + tol || bc + br <= a0 + tol {
                return false;
            }
        }
        true
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}
