//! Small 2-D / 3-D geometry helpers shared by the world model and sensors.

use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle given by its minimum corner and size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn x1(&self) -> f64 {
        self.x + self.w
    }

    pub fn y1(&self) -> f64 {
        self.y + self.h
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x && p[0] <= self.x1() && p[1] >= self.y && p[1] <= self.y1()
    }

    pub fn contains_rect(&self, o: &Rect) -> bool {
        o.x >= self.x && o.y >= self.y && o.x1() <= self.x1() && o.y1() <= self.y1()
    }

    /// Euclidean distance from a point to the rectangle (0 inside).
    pub fn distance_to_point(&self, p: [f64; 2]) -> f64 {
        let dx = (self.x - p[0]).max(0.0).max(p[0] - self.x1());
        let dy = (self.y - p[1]).max(0.0).max(p[1] - self.y1());
        dx.hypot(dy)
    }

    /// Distance from an interior point to the nearest edge (0 outside).
    pub fn interior_clearance(&self, p: [f64; 2]) -> f64 {
        if !self.contains(p) {
            return 0.0;
        }
        (p[0] - self.x)
            .min(self.x1() - p[0])
            .min(p[1] - self.y)
            .min(self.y1() - p[1])
    }

    pub fn distance_to_rect(&self, o: &Rect) -> f64 {
        let dx = (o.x - self.x1()).max(self.x - o.x1()).max(0.0);
        let dy = (o.y - self.y1()).max(self.y - o.y1()).max(0.0);
        dx.hypot(dy)
    }

    /// Minimum distance between the segment `a`-`b` and the rectangle.
    pub fn distance_to_segment(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        if self.segment_intersects(a, b) {
            return 0.0;
        }
        let corners = [
            [self.x, self.y],
            [self.x1(), self.y],
            [self.x1(), self.y1()],
            [self.x, self.y1()],
        ];
        let mut d = self.distance_to_point(a).min(self.distance_to_point(b));
        for c in corners {
            d = d.min(point_segment_distance(c, a, b));
        }
        d
    }

    /// Liang-Barsky clip test.
    pub fn segment_intersects(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let d = [b[0] - a[0], b[1] - a[1]];
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        for (p, q) in [
            (-d[0], a[0] - self.x),
            (d[0], self.x1() - a[0]),
            (-d[1], a[1] - self.y),
            (d[1], self.y1() - a[1]),
        ] {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Ray / axis-aligned box intersection (slab method). Returns the entry
/// distance along the unit direction `d`, 0 when the origin is inside.
pub fn ray_box(o: [f64; 3], d: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<f64> {
    let mut tmin = 0.0f64;
    let mut tmax = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < lo[k] || o[k] > hi[k] {
                return None;
            }
        } else {
            let inv = 1.0 / d[k];
            let (mut a, mut b) = ((lo[k] - o[k]) * inv, (hi[k] - o[k]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            tmin = tmin.max(a);
            tmax = tmax.min(b);
            if tmin > tmax {
                return None;
            }
        }
    }
    Some(tmin)
}

/// Wraps an angle to `[-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r > std::f64::consts::PI {
        r -= two_pi;
    } else if r < -std::f64::consts::PI {
        r += two_pi;
    }
    r
}

pub fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
