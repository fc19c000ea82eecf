use std::fmt::Write as _;

use crate::error::{KittiError, Result};

/// One object line of a KITTI label or result file.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiObjectLabel {
    pub category: String,
    pub truncation: f64,
    /// 0..=3, or -1 for `DontCare`.
    pub occlusion: i32,
    pub alpha: f64,
    /// `(left, top, right, bottom)` in pixels.
    pub box2d: [f64; 4],
    /// `(h, w, l)` in meters.
    pub dims: [f64; 3],
    /// Bottom-center `(x, y, z)` in camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiObjectLabel {
    pub fn is_dont_care(&self) -> bool {
        self.category.eq_ignore_ascii_case("DontCare")
    }

    pub fn box_height(&self) -> f64 {
        self.box2d[3] - self.box2d[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl Difficulty {
    pub const LEVELS: [Difficulty; 3] = [Self::Easy, Self::Moderate, Self::Hard];

    /// Whether an object classified as `level` counts when evaluating at `self`.
    /// Easier objects also count toward every harder level.
    pub fn includes(self, level: Difficulty) -> bool {
        level != Difficulty::Ignored && self != Difficulty::Ignored && level <= self
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Moderate => "moderate",
            Self::Hard => "hard",
            Self::Ignored => "ignored",
        }
    }
}

const MIN_HEIGHT: [f64; 3] = [40.0, 25.0, 25.0];
const MAX_OCCLUSION: [i32; 3] = [0, 1, 2];
const MAX_TRUNCATION: [f64; 3] = [0.15, 0.30, 0.50];

/// Easiest KITTI difficulty level the object qualifies for.
pub fn difficulty_of(label: &KittiObjectLabel, box_height_px: f64) -> Difficulty {
    for (i, level) in Difficulty::LEVELS.into_iter().enumerate() {
        if box_height_px >= MIN_HEIGHT[i]
            && label.occlusion <= MAX_OCCLUSION[i]
            && label.truncation <= MAX_TRUNCATION[i]
        {
            return level;
        }
    }
    Difficulty::Ignored
}

fn number(tok: &str, line: usize, field: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| KittiError::parse(line, format!("field `{field}`: not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(KittiError::parse(line, format!("field `{field}`: non-finite value {tok:?}")));
    }
    Ok(v)
}

fn occlusion(tok: &str, line: usize) -> Result<i32> {
    let v = number(tok, line, "occluded")?;
    if v.fract() != 0.0 || !(-1.0..=3.0).contains(&v) {
        return Err(KittiError::parse(line, format!("field `occluded`: expected -1..=3, got {tok:?}")));
    }
    Ok(v as i32)
}

/// Parses one non-blank line; `line` is 1-based and only used for errors.
pub fn parse_label_line(text: &str, line: usize) -> Result<KittiObjectLabel> {
    let tok: Vec<&str> = text.split_whitespace().collect();
    if tok.len() != 15 && tok.len() != 16 {
        return Err(KittiError::parse(
            line,
            format!("expected 15 or 16 fields, found {}", tok.len()),
        ));
    }
    let f = |i: usize, name: &str| number(tok[i], line, name);
    let label = KittiObjectLabel {
        category: tok[0].to_string(),
        truncation: f(1, "truncated")?,
        occlusion: occlusion(tok[2], line)?,
        alpha: f(3, "alpha")?,
        box2d: [f(4, "left")?, f(5, "top")?, f(6, "right")?, f(7, "bottom")?],
        dims: [f(8, "height")?, f(9, "width")?, f(10, "length")?],
        location: [f(11, "x")?, f(12, "y")?, f(13, "z")?],
        rotation_y: f(14, "rotation_y")?,
        score: if tok.len() == 16 { Some(f(15, "score")?) } else { None },
    };
    if !label.is_dont_care() && (label.box2d[0] > label.box2d[2] || label.box2d[1] > label.box2d[3]) {
        return Err(KittiError::parse(line, "2D box corners out of order"));
    }
    Ok(label)
}

/// Parses a whole label or result file. Blank lines are skipped.
pub fn parse_label_file(text: &str) -> Result<Vec<KittiObjectLabel>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_line(l, i + 1))
        .collect()
}

/// Byte-level entry point: invalid UTF-8 is reported at the line it occurs on.
pub fn parse_label_bytes(bytes: &[u8]) -> Result<Vec<KittiObjectLabel>> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_label_file(text),
        Err(e) => {
            let line = 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count();
            Err(KittiError::parse(line, "invalid UTF-8"))
        }
    }
}

fn push_common(out: &mut String, l: &KittiObjectLabel) {
    let _ = write!(
        out,
        "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
        l.category,
        l.truncation,
        l.occlusion,
        l.alpha,
        l.box2d[0],
        l.box2d[1],
        l.box2d[2],
        l.box2d[3],
        l.dims[0],
        l.dims[1],
        l.dims[2],
        l.location[0],
        l.location[1],
        l.location[2],
        l.rotation_y,
    );
}

/// Writes ground-truth style lines (15 fields). Scores, if any, are dropped.
pub fn write_label_file(labels: &[KittiObjectLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        push_common(&mut out, l);
        out.push('\n');
    }
    out
}

/// Writes detection lines (16 fields). Every label must carry a score.
pub fn write_result_file(labels: &[KittiObjectLabel]) -> Result<String> {
    let mut out = String::new();
    for (i, l) in labels.iter().enumerate() {
        let score = l
            .score
            .ok_or_else(|| KittiError::Contract(format!("detection {i} ({}) has no score", l.category)))?;
        push_common(&mut out, l);
        let _ = writeln!(out, " {score:.4}");
    }
    Ok(out)
}
