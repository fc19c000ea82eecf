use std::fmt::Write as _;

use crate::error::{KittiError, Result};

/// Left color camera projection matrix, row-major 3×4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibP2 {
    pub p2: [[f64; 4]; 3],
}

impl CalibP2 {
    pub fn new(p2: [[f64; 4]; 3]) -> Result<Self> {
        if p2[0][0] <= 0.0 || p2.iter().flatten().any(|v| !v.is_finite()) {
            return Err(KittiError::Domain(format!(
                "P2 needs a positive focal length and finite entries, got {p2:?}"
            )));
        }
        Ok(Self { p2 })
    }

    /// Pinhole camera with focal `f` and principal point `(cu, cv)`.
    pub fn pinhole(f: f64, cu: f64, cv: f64) -> Result<Self> {
        Self::new([[f, 0.0, cu, 0.0], [0.0, f, cv, 0.0], [0.0, 0.0, 1.0, 0.0]])
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project(&self, xyz: [f64; 3]) -> Result<(f64, f64)> {
        project_center(self, xyz)
    }
}

pub fn project_center(calib: &CalibP2, xyz: [f64; 3]) -> Result<(f64, f64)> {
    if !(xyz[2] > 0.0) {
        return Err(KittiError::Domain(format!(
            "point {xyz:?} is not in front of the camera"
        )));
    }
    let h = [xyz[0], xyz[1], xyz[2], 1.0];
    let row = |r: &[f64; 4]| r.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
    let [a, b, c] = calib.p2.each_ref().map(row);
    if c == 0.0 {
        return Err(KittiError::Domain(format!("point {xyz:?} projects to infinity")));
    }
    Ok((a / c, b / c))
}

/// Reads the `P2:` entry of a KITTI calibration file; other keys are ignored.
pub fn parse_calib_file(text: &str) -> Result<CalibP2> {
    for (i, line) in text.lines().enumerate() {
        let Some(rest) = line.trim_start().strip_prefix("P2:") else {
            continue;
        };
        let vals = rest
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| KittiError::parse(i + 1, format!("P2: not a number: {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 12 {
            return Err(KittiError::parse(
                i + 1,
                format!("P2: expected 12 values, found {}", vals.len()),
            ));
        }
        let mut p2 = [[0.0; 4]; 3];
        for (k, v) in vals.into_iter().enumerate() {
            p2[k / 4][k % 4] = v;
        }
        return CalibP2::new(p2).map_err(|e| KittiError::parse(i + 1, e.to_string()));
    }
    Err(KittiError::parse(
        text.lines().count().max(1),
        "no `P2:` entry in calibration file",
    ))
}

/// Writes a one-line calibration file. Values use the shortest exact
/// representation so parsing recovers them bitwise.
pub fn write_calib_file(calib: &CalibP2) -> String {
    let mut out = String::from("P2:");
    for v in calib.p2.iter().flatten() {
        let _ = write!(out, " {v:e}");
    }
    out.push('\n');
    out
}
