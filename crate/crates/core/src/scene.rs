//! Seeded single-object synthetic scenes for the toy detection task.

use dfr_kitti::{CalibP2, Category, KittiObjectLabel};
use dfr_tensor::{seeded_rng, Tensor};
use rand::Rng;

use crate::error::Result;
use crate::losses::ObjectTarget;

pub const IMAGE_SIZE: usize = 32;
pub const FOCAL: f64 = 32.0;
pub const NUM_CLASSES: usize = 3;
pub const Z_RANGE: (f64, f64) = (8.0, 40.0);
/// Camera `y` of the ground plane the objects stand on.
pub const GROUND_Y: (f64, f64) = (1.5, 1.8);
/// Yaw is drawn from `(−limit, limit)`.
pub const YAW_LIMIT: f64 = std::f64::consts::FRAC_PI_4;
const BACKGROUND_NOISE: f64 = 0.05;

/// Class index `i` is `Category::ALL[i]`; index `NUM_CLASSES` is background.
pub fn class_category(index: usize) -> Category {
    Category::ALL[index]
}

fn base_color(class: usize) -> [f64; 3] {
    match class {
        0 => [1.0, 0.3, 0.2],
        1 => [0.2, 1.0, 0.3],
        _ => [0.3, 0.2, 1.0],
    }
}

/// Per-class `(h, w, l)` ranges in metres.
pub fn dim_ranges(class: usize) -> [(f64, f64); 3] {
    match class {
        0 => [(1.4, 1.6), (1.5, 1.8), (3.4, 4.4)],
        1 => [(1.6, 1.9), (0.5, 0.8), (0.6, 1.0)],
        _ => [(1.6, 1.8), (0.5, 0.7), (1.5, 1.9)],
    }
}

pub fn toy_calib() -> CalibP2 {
    let c = IMAGE_SIZE as f64 / 2.0;
    CalibP2::pinhole(FOCAL, c, c).expect("positive focal")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// `3 × 32 × 32`.
    pub image: Tensor,
    pub class: usize,
    pub label: KittiObjectLabel,
    pub calib: CalibP2,
    pub seed: u64,
}

/// The eight corners of a KITTI box, bottom face first.
pub fn box_corners(dims_hwl: [f64; 3], location: [f64; 3], yaw: f64) -> [[f64; 3]; 8] {
    let [h, w, l] = dims_hwl;
    let (s, c) = yaw.sin_cos();
    let mut out = [[0.0; 3]; 8];
    let mut k = 0;
    for dy in [0.0, -h] {
        for (p, q) in [(0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5), (0.5, -0.5)] {
            let (px, qz) = (p * l, q * w);
            out[k] = [
                location[0] + c * px + s * qz,
                location[1] + dy,
                location[2] - s * px + c * qz,
            ];
            k += 1;
        }
    }
    out
}

/// Tight 2D box of the projected corners.
pub fn projected_box(calib: &CalibP2, dims_hwl: [f64; 3], location: [f64; 3], yaw: f64) -> Result<[f64; 4]> {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in box_corners(dims_hwl, location, yaw) {
        let (u, v) = dfr_kitti::project_center(calib, p)?;
        b[0] = b[0].min(u);
        b[1] = b[1].min(v);
        b[2] = b[2].max(u);
        b[3] = b[3].max(v);
    }
    Ok(b)
}

fn inside(b: &[f64; 4]) -> bool {
    let s = IMAGE_SIZE as f64;
    b[0] >= 0.0 && b[1] >= 0.0 && b[2] < s && b[3] < s && b[0] < b[2] && b[1] < b[3]
}

/// Pixels whose centre lies inside `b`; never empty, a box smaller than a
/// pixel lights the pixel containing its centre.
pub fn object_mask(b: &[f64; 4]) -> Vec<bool> {
    let n = IMAGE_SIZE;
    let mut m = vec![false; n * n];
    let mut any = false;
    for i in 0..n {
        for j in 0..n {
            let (u, v) = (j as f64 + 0.5, i as f64 + 0.5);
            if b[0] <= u && u <= b[2] && b[1] <= v && v <= b[3] {
                m[i * n + j] = true;
                any = true;
            }
        }
    }
    if !any {
        let (u, v) = ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0);
        m[(v as usize).min(n - 1) * n + (u as usize).min(n - 1)] = true;
    }
    m
}

pub fn generate_scene(seed: u64) -> SyntheticScene {
    let mut rng = seeded_rng(seed);
    let calib = toy_calib();
    let class = rng.gen_range(0..NUM_CLASSES);
    let [rh, rw, rl] = dim_ranges(class);
    let dims = [rng.gen_range(rh.0..rh.1), rng.gen_range(rw.0..rw.1), rng.gen_range(rl.0..rl.1)];
    let (location, yaw, box2d) = loop {
        let z = rng.gen_range(Z_RANGE.0..=Z_RANGE.1);
        let y = rng.gen_range(GROUND_Y.0..=GROUND_Y.1);
        let half = z * IMAGE_SIZE as f64 / (2.0 * FOCAL);
        let x = rng.gen_range(-half..half);
        let yaw = rng.gen_range(-YAW_LIMIT..YAW_LIMIT);
        let loc = [x, y, z];
        let b = projected_box(&calib, dims, loc, yaw).expect("z ≥ 8 keeps corners in front");
        if inside(&b) {
            break (loc, yaw, b);
        }
    };

    let brightness = Z_RANGE.0 / location[2];
    let color = base_color(class);
    let mask = object_mask(&box2d);
    let n = IMAGE_SIZE;
    let mut data = vec![0.0; 3 * n * n];
    for ch in 0..3 {
        for p in 0..n * n {
            data[ch * n * n + p] = if mask[p] {
                color[ch] * brightness
            } else {
                BACKGROUND_NOISE * rng.gen::<f64>()
            };
        }
    }

    let alpha = yaw - location[0].atan2(location[2]);
    let label = KittiObjectLabel {
        category: class_category(class).name().to_string(),
        truncation: 0.0,
        occlusion: 0,
        alpha: dfr_tensor::wrap_angle(alpha),
        box2d,
        dims,
        location,
        rotation_y: yaw,
        score: None,
    };
    SyntheticScene {
        image: Tensor::new(&[3, n, n], data).expect("shape matches"),
        class,
        label,
        calib,
        seed,
    }
}

impl SyntheticScene {
    pub fn target(&self) -> ObjectTarget {
        let [h, w, l] = self.label.dims;
        ObjectTarget {
            category: self.class,
            rot: self.label.rotation_y,
            dims: [w, h, l],
            box2d: self.label.box2d,
            center3d: self.label.location,
        }
    }

    /// Pixel of the projected geometric centre of the 3D box.
    pub fn center_pixel(&self) -> (f64, f64) {
        let [x, y, z] = self.label.location;
        dfr_kitti::project_center(&self.calib, [x, y - self.label.dims[0] / 2.0, z])
            .expect("object in front of the camera")
    }
}
