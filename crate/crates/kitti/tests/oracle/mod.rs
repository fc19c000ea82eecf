//! Independent reference implementations used by the evaluation tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dfr_kitti::{Box2d, Box3D, Difficulty, KittiObjectLabel, RotatedBevBox};
use rand::Rng;

// ---- Monte-Carlo overlap ---------------------------------------------------

/// Camera x/z of object-frame point `(p, q)` (p along length, q along width).
fn world(b: &RotatedBevBox, p: f64, q: f64) -> (f64, f64) {
    let (s, c) = (b.yaw.sin(), b.yaw.cos());
    (b.cx + c * p + s * q, b.cz - s * p + c * q)
}

/// Intersection area by a randomly shifted `m×m` sample grid laid over `a`,
/// counting the samples that fall inside `b`.
pub fn mc_bev_intersection(a: &RotatedBevBox, b: &RotatedBevBox, m: usize, rng: &mut impl Rng) -> f64 {
    let (ox, oy): (f64, f64) = (rng.gen(), rng.gen());
    let (sb, cb) = (b.yaw.sin(), b.yaw.cos());
    // b-frame coordinates are affine in the grid column index.
    let to_b = |x: f64, z: f64| {
        let (dx, dz) = (x - b.cx, z - b.cz);
        (cb * dx - sb * dz, sb * dx + cb * dz)
    };
    let (hl, hw) = (b.length / 2.0, b.width / 2.0);
    let step_q = a.width / m as f64;
    let mut inside = 0u64;
    for i in 0..m {
        let p = ((i as f64 + ox) / m as f64 - 0.5) * a.length;
        let q0 = (oy / m as f64 - 0.5) * a.width;
        let (x0, z0) = world(a, p, q0);
        let (x1, z1) = world(a, p, q0 + step_q);
        let (u0, v0) = to_b(x0, z0);
        let (u1, v1) = to_b(x1, z1);
        let (du, dv) = (u1 - u0, v1 - v0);
        let (mut u, mut v) = (u0, v0);
        for _ in 0..m {
            if u.abs() <= hl && v.abs() <= hw {
                inside += 1;
            }
            u += du;
            v += dv;
        }
    }
    a.length * a.width * inside as f64 / (m * m) as f64
}

pub fn mc_bev_iou(a: &RotatedBevBox, b: &RotatedBevBox, samples: usize, rng: &mut impl Rng) -> f64 {
    let m = (samples as f64).sqrt().ceil() as usize;
    let inter = mc_bev_intersection(a, b, m, rng);
    inter / (a.length * a.width + b.length * b.width - inter)
}

/// Volume overlap over `a`: jittered height layers, each with its own
/// shifted bird's-eye-view grid.
pub fn mc_iou_3d(a: &Box3D, b: &Box3D, samples: usize, rng: &mut impl Rng) -> f64 {
    // Height is the only direction with no shifted-grid averaging, so it
    // gets most of the resolution.
    let layers = 1000.min(samples);
    let m = ((samples / layers) as f64).sqrt().ceil() as usize;
    let mut count = 0.0;
    for k in 0..layers {
        let jitter: f64 = rng.gen();
        let y = a.y_bottom - a.height * (k as f64 + jitter) / layers as f64;
        if y > b.y_bottom || y < b.y_bottom - b.height {
            continue;
        }
        count += mc_bev_intersection(&a.bev, &b.bev, m, rng);
    }
    let inter = count / layers as f64 * a.height;
    let va = a.bev.length * a.bev.width * a.height;
    let vb = b.bev.length * b.bev.width * b.height;
    inter / (va + vb - inter)
}

pub fn random_bev_pair(rng: &mut impl Rng) -> (RotatedBevBox, RotatedBevBox) {
    let mut make = |near: Option<(f64, f64)>| {
        let (cx, cz) = near.map_or((rng.gen_range(-5.0..5.0), rng.gen_range(5.0..40.0)), |(x, z)| {
            (x + rng.gen_range(-2.0..2.0), z + rng.gen_range(-2.0..2.0))
        });
        RotatedBevBox {
            cx,
            cz,
            length: rng.gen_range(0.5..5.0),
            width: rng.gen_range(0.4..2.5),
            yaw: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        }
    };
    let a = make(None);
    let b = make(Some((a.cx, a.cz)));
    (a, b)
}

// ---- NMS -------------------------------------------------------------------

fn aa_iou(a: &Box2d, b: &Box2d) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let i = w * h;
    let u = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - i;
    if u > 0.0 {
        i / u
    } else {
        0.0
    }
}

/// Enumerates every subset of the above-floor boxes and returns the unique
/// one that is a fixed point of greedy suppression: a box is in the set iff
/// no higher-ranked member overlaps it beyond `iou`. Returned in rank order.
pub fn nms_oracle(boxes: &[Box2d], scores: &[f64], iou: f64, floor: f64) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..boxes.len()).filter(|&i| scores[i] >= floor).collect();
    cand.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let n = cand.len();
    assert!(n <= 16, "exhaustive oracle limited to 16 boxes");
    let mut solutions = Vec::new();
    for mask in 0u32..(1 << n) {
        let member = |r: usize| mask & (1 << r) != 0;
        let consistent = (0..n).all(|r| {
            let blocked = (0..r).any(|h| member(h) && aa_iou(&boxes[cand[h]], &boxes[cand[r]]) > iou);
            member(r) != blocked
        });
        if consistent {
            solutions.push((0..n).filter(|&r| member(r)).map(|r| cand[r]).collect::<Vec<_>>());
        }
    }
    assert_eq!(solutions.len(), 1, "greedy fixed point must be unique");
    solutions.pop().unwrap()
}

// ---- difficulty ------------------------------------------------------------

/// Assigns the hardest qualifying level first, then overwrites with easier ones.
pub fn difficulty_oracle(height: f64, occlusion: i32, truncation: f64) -> Difficulty {
    let mut level = Difficulty::Ignored;
    if height >= 25.0 && occlusion <= 2 && truncation <= 0.50 {
        level = Difficulty::Hard;
    }
    if height >= 25.0 && occlusion <= 1 && truncation <= 0.30 {
        level = Difficulty::Moderate;
    }
    if height >= 40.0 && occlusion <= 0 && truncation <= 0.15 {
        level = Difficulty::Easy;
    }
    level
}

// ---- random records --------------------------------------------------------

fn q(rng: &mut impl Rng, lo: f64, hi: f64, scale: f64) -> f64 {
    let k = rng.gen_range((lo * scale).round() as i64..=(hi * scale).round() as i64);
    k as f64 / scale
}

/// Label whose numeric fields are already at printed precision.
pub fn random_label(rng: &mut impl Rng, with_score: bool) -> KittiObjectLabel {
    const NAMES: [&str; 8] = [
        "Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram", "Misc",
    ];
    // Box corners drawn in integer hundredths so the sums stay exact.
    let u0 = rng.gen_range(0..120_000i64);
    let v0 = rng.gen_range(0..36_000i64);
    let (u1, v1) = (u0 + rng.gen_range(0..20_000i64), v0 + rng.gen_range(0..10_000i64));
    KittiObjectLabel {
        category: NAMES[rng.gen_range(0..NAMES.len())].to_string(),
        truncation: q(rng, 0.0, 1.0, 100.0),
        occlusion: rng.gen_range(0..=3),
        alpha: q(rng, -3.14, 3.14, 100.0),
        box2d: [u0, v0, u1, v1].map(|k| k as f64 / 100.0),
        dims: [q(rng, 0.5, 4.0, 100.0), q(rng, 0.3, 3.0, 100.0), q(rng, 0.3, 16.0, 100.0)],
        location: [q(rng, -40.0, 40.0, 100.0), q(rng, -3.0, 3.0, 100.0), q(rng, 0.5, 80.0, 100.0)],
        rotation_y: q(rng, -3.14, 3.14, 100.0),
        score: with_score.then(|| q(rng, 0.0, 1.0, 10_000.0)),
    }
}

// ---- matching --------------------------------------------------------------

pub struct Fixture {
    pub gt: Vec<Vec<KittiObjectLabel>>,
    pub det: Vec<Vec<KittiObjectLabel>>,
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/fixture3")
}

pub fn load_fixture(dir: &Path) -> Fixture {
    let read = |sub: &str| {
        (0..3)
            .map(|i| {
                let text = std::fs::read_to_string(dir.join(sub).join(format!("{i:06}.txt"))).unwrap();
                dfr_kitti::parse_label_file(&text).unwrap()
            })
            .collect()
    };
    Fixture {
        gt: read("gt"),
        det: read("det"),
    }
}

#[derive(Clone, Copy)]
pub struct OracleSpec {
    pub category: &'static str,
    pub ignored_neighbour: Option<&'static str>,
    pub difficulty: Option<Difficulty>,
    pub iou: f64,
    pub bev: bool,
}

fn overlap(spec: &OracleSpec, d: &KittiObjectLabel, g: &KittiObjectLabel) -> f64 {
    if g.dims.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    // The overlap geometry itself is checked against Monte-Carlo elsewhere;
    // this oracle is about the assignment logic.
    let (a, b) = (Box3D::from_label(d), Box3D::from_label(g));
    if spec.bev {
        dfr_kitti::rotated_bev_iou(&a.bev, &b.bev)
    } else {
        dfr_kitti::iou_3d(&a, &b)
    }
}

/// Returns the AP computed by brute force: all injective assignments of
/// detections to valid ground truth are enumerated per frame and the one
/// that is lexicographically best in (matched, IoU) over score-descending
/// detections is kept.
pub fn brute_force_ap(f: &Fixture, spec: &OracleSpec, r40: bool) -> f64 {
    let mut pooled: Vec<(f64, bool)> = Vec::new();
    let mut total_gt = 0usize;
    for (gt, det) in f.gt.iter().zip(&f.det) {
        let same = |c: &str| c.eq_ignore_ascii_case(spec.category);
        let valid: Vec<bool> = gt
            .iter()
            .map(|g| {
                same(&g.category)
                    && spec.difficulty.map_or(true, |d| {
                        let lvl = difficulty_oracle(g.box2d[3] - g.box2d[1], g.occlusion, g.truncation);
                        lvl != Difficulty::Ignored && lvl <= d
                    })
            })
            .collect();
        let ignorable: Vec<bool> = gt
            .iter()
            .zip(&valid)
            .map(|(g, &v)| {
                !v && (same(&g.category)
                    || spec.ignored_neighbour.is_some_and(|n| g.category.eq_ignore_ascii_case(n))
                    || g.category == "DontCare")
            })
            .collect();
        total_gt += valid.iter().filter(|&&v| v).count();

        let mut dets: Vec<&KittiObjectLabel> = det.iter().filter(|d| same(&d.category)).collect();
        dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        let iou: Vec<Vec<f64>> = dets
            .iter()
            .map(|d| gt.iter().map(|g| overlap(spec, d, g)).collect())
            .collect();

        // Enumerate assignments: choice[k] = Some(gt index) or None.
        let mut best: Option<(Vec<(u8, f64)>, Vec<Option<usize>>)> = None;
        let mut choice = vec![None; dets.len()];
        fn rec(
            k: usize,
            choice: &mut Vec<Option<usize>>,
            iou: &[Vec<f64>],
            valid: &[bool],
            thr: f64,
            best: &mut Option<(Vec<(u8, f64)>, Vec<Option<usize>>)>,
        ) {
            if k == choice.len() {
                let key: Vec<(u8, f64)> = choice
                    .iter()
                    .enumerate()
                    .map(|(d, c)| c.map_or((0, 0.0), |g| (1, iou[d][g])))
                    .collect();
                let better = match best {
                    None => true,
                    Some((bk, _)) => key.partial_cmp(bk) == Some(std::cmp::Ordering::Greater),
                };
                if better {
                    *best = Some((key, choice.clone()));
                }
                return;
            }
            choice[k] = None;
            rec(k + 1, choice, iou, valid, thr, best);
            for g in 0..valid.len() {
                if valid[g] && iou[k][g] >= thr && !choice[..k].contains(&Some(g)) {
                    choice[k] = Some(g);
                    rec(k + 1, choice, iou, valid, thr, best);
                }
            }
            choice[k] = None;
        }
        rec(0, &mut choice, &iou, &valid, spec.iou, &mut best);
        let (_, assignment) = best.unwrap_or_default();
        for (k, d) in dets.iter().enumerate() {
            let score = d.score.unwrap_or(1.0);
            if assignment.get(k).copied().flatten().is_some() {
                pooled.push((score, true));
            } else if (0..gt.len()).any(|g| ignorable[g] && iou[k][g] >= spec.iou) {
                continue;
            } else {
                pooled.push((score, false));
            }
        }
    }
    pooled.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut curve = Vec::new();
    let (mut tp, mut n) = (0.0, 0.0);
    for &(_, hit) in &pooled {
        n += 1.0;
        if hit {
            tp += 1.0;
        }
        curve.push((tp / total_gt as f64, tp / n));
    }
    let grid: Vec<f64> = if r40 {
        (1..=40).map(|i| i as f64 / 40.0).collect()
    } else {
        (0..=10).map(|i| i as f64 / 10.0).collect()
    };
    let mut sum = 0.0;
    for &r in &grid {
        let mut p = 0.0f64;
        for &(rc, pc) in &curve {
            if rc >= r - 1e-12 {
                p = p.max(pc);
            }
        }
        sum += p;
    }
    sum / grid.len() as f64
}
