//! Axis-aligned, rotated bird's-eye-view and 3D box overlap.

use crate::label::KittiObjectLabel;

/// Axis-aligned `(u1, v1, u2, v2)` box.
pub type Box2d = [f64; 4];

pub fn box_area(b: &Box2d) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

pub fn iou_2d(a: &Box2d, b: &Box2d) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = box_area(a) + box_area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Top-down rectangle in the camera `x`/`z` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedBevBox {
    pub cx: f64,
    pub cz: f64,
    pub length: f64,
    pub width: f64,
    pub yaw: f64,
}

type Pt = [f64; 2];

impl RotatedBevBox {
    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    /// Maps object-frame `(along length, along width)` to camera `(x, z)`.
    pub fn to_world(&self, p: Pt) -> Pt {
        let (s, c) = self.yaw.sin_cos();
        [self.cx + c * p[0] + s * p[1], self.cz - s * p[0] + c * p[1]]
    }

    /// Inverse of [`Self::to_world`].
    pub fn to_local(&self, p: Pt) -> Pt {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dz) = (p[0] - self.cx, p[1] - self.cz);
        [c * dx - s * dz, s * dx + c * dz]
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Pt; 4] {
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let mut pts = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]].map(|p| self.to_world(p));
        if signed_area(&pts) < 0.0 {
            pts.reverse();
        }
        pts
    }
}

fn signed_area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        / 2.0
}

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Clips `subject` by the half-plane left of the directed edge `e0 → e1`.
fn clip(subject: &[Pt], e0: Pt, e1: Pt) -> Vec<Pt> {
    let mut out = Vec::with_capacity(subject.len() + 2);
    let n = subject.len();
    for i in 0..n {
        let (p, q) = (subject[i], subject[(i + 1) % n]);
        let (dp, dq) = (cross(e0, e1, p), cross(e0, e1, q));
        if dp >= 0.0 {
            out.push(p);
        }
        if (dp >= 0.0) != (dq >= 0.0) {
            let t = dp / (dp - dq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

/// Area of the intersection of two convex CCW polygons.
pub fn convex_intersection_area(a: &[Pt], b: &[Pt]) -> f64 {
    let mut poly = a.to_vec();
    for i in 0..b.len() {
        if poly.len() < 3 {
            return 0.0;
        }
        poly = clip(&poly, b[i], b[(i + 1) % b.len()]);
    }
    if poly.len() < 3 {
        0.0
    } else {
        signed_area(&poly).max(0.0)
    }
}

pub fn bev_intersection(a: &RotatedBevBox, b: &RotatedBevBox) -> f64 {
    convex_intersection_area(&a.corners(), &b.corners())
}

pub fn rotated_bev_iou(a: &RotatedBevBox, b: &RotatedBevBox) -> f64 {
    let inter = bev_intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub bev: RotatedBevBox,
    /// Camera `y` of the bottom face (y points down).
    pub y_bottom: f64,
    pub height: f64,
}

impl Box3D {
    pub fn volume(&self) -> f64 {
        self.bev.area() * self.height
    }

    pub fn from_label(l: &KittiObjectLabel) -> Self {
        let [h, w, len] = l.dims;
        Self {
            bev: RotatedBevBox {
                cx: l.location[0],
                cz: l.location[2],
                length: len,
                width: w,
                yaw: l.rotation_y,
            },
            y_bottom: l.location[1],
            height: h,
        }
    }
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let top = (a.y_bottom - a.height).max(b.y_bottom - b.height);
    let bottom = a.y_bottom.min(b.y_bottom);
    let overlap_y = (bottom - top).max(0.0);
    if overlap_y == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection(&a.bev, &b.bev) * overlap_y;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}
