//! Run configuration: one TOML file of flat dotted keys over documented
//! defaults. Precedence is defaults, then the file, then command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dfr_core::{DitVariant, Flow, StreamChoice, TrainConfig};
use dfr_kitti::{ApMode, Category};
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// Which family of variants `ablate` compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sweep {
    /// Component groups I–VII.
    #[default]
    Groups,
    Flow,
    Clustering,
    Dit,
}

impl Sweep {
    pub const ALL: [Sweep; 4] = [Self::Groups, Self::Flow, Self::Clustering, Self::Dit];

    pub fn name(self) -> &'static str {
        match self {
            Self::Groups => "groups",
            Self::Flow => "flow",
            Self::Clustering => "clustering",
            Self::Dit => "dit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub gt: Option<PathBuf>,
    pub det: Option<PathBuf>,
    pub category: Category,
    /// `None` picks the category's usual threshold.
    pub iou: Option<f64>,
    pub mode: ApMode,
    /// Held-out synthetic scenes scored after toy training.
    pub scenes: usize,
}

impl EvalSettings {
    pub fn iou_threshold(&self) -> f64 {
        self.iou.unwrap_or(match self.category {
            Category::Car => 0.7,
            Category::Pedestrian | Category::Cyclist => 0.5,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out: PathBuf,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub sweep: Sweep,
    /// Number of consecutive seeds starting at `train.seed`.
    pub seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("dfrnet-out"),
            train: TrainConfig::default(),
            eval: EvalSettings {
                gt: None,
                det: None,
                category: Category::Car,
                iou: None,
                mode: ApMode::R40,
                scenes: dfr_core::train::EVAL_SCENES,
            },
            sweep: Sweep::Groups,
            seeds: 5,
        }
    }
}

/// Every accepted key with a one-line description, in file order.
pub const KEYS: [(&str, &str); 25] = [
    ("out", "output directory; nothing is written outside it"),
    ("train.steps", "SGD steps"),
    ("train.lr", "initial learning rate"),
    ("train.momentum", "SGD momentum"),
    ("train.weight_decay", "L2 weight decay"),
    ("train.seed", "run seed; ablation seeds count up from here"),
    ("train.batch_size", "scenes per step"),
    ("train.appearance_scale", "multiplier on the appearance loss group"),
    ("train.grad_clip", "global gradient-norm ceiling, 0 disables"),
    ("train.lr_decay_power", "polynomial decay power, 0 keeps the rate constant"),
    ("model.channels", "encoder width C"),
    ("model.reduction", "projection reduction r (width C/r)"),
    ("model.use_alfr", "insert the feature-reflecting block"),
    ("model.use_dit", "trade the two loss groups with learned scores"),
    ("alfr.flow", "mutual-reflect direction: both|app_to_loc|loc_to_app|none"),
    ("alfr.self_reflect", "use self-reflect maps (false requires flow = both)"),
    ("dit.variant", "score source: learned|init|cross|shared"),
    ("clustering.rot", "group of the rotation term: appearance|localization"),
    ("clustering.whl", "group of the dimension term: appearance|localization"),
    ("eval.gt", "ground-truth label directory"),
    ("eval.det", "detection result directory"),
    ("eval.category", "car|pedestrian|cyclist"),
    ("eval.iou", "overlap threshold, 0 uses 0.7 for cars and 0.5 otherwise"),
    ("eval.mode", "r11|r40 recall sampling"),
    ("eval.scenes", "held-out synthetic scenes scored after toy training"),
];

/// Keys beyond [`KEYS`] that only `ablate` reads.
pub const ABLATE_KEYS: [(&str, &str); 2] = [
    ("ablate.sweep", "groups|flow|clustering|dit"),
    ("ablate.seeds", "number of seeds per variant"),
];

fn bad(key: &str, message: impl Into<String>) -> CliError {
    CliError::BadValue {
        key: key.to_string(),
        message: message.into(),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(bad(key, format!("expected a non-negative integer, got {v}"))),
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, format!("expected a number, got {v}"))),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, format!("expected true or false, got {v}")))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| bad(key, format!("expected a string, got {v}")))
}

fn parse_as<T: FromStr>(key: &str, v: &Value) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    as_str(key, v)?.parse().map_err(|e: T::Err| bad(key, e.to_string()))
}

fn parse_mode(s: &str) -> Option<ApMode> {
    [ApMode::R11, ApMode::R40].into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
}

fn parse_sweep(s: &str) -> Option<Sweep> {
    Sweep::ALL.into_iter().find(|w| w.name() == s)
}

fn optional_path(s: &str) -> Option<PathBuf> {
    (!s.is_empty()).then(|| PathBuf::from(s))
}

/// Flattens nested tables into dotted keys, so `[train]\nsteps = 5` and
/// `train.steps = 5` are the same file.
fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = toml::from_str(text).map_err(|e| CliError::ConfigFile {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut cfg = Self::default();
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::ConfigFile { message, .. } => CliError::ConfigFile {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Sets one dotted key. Unknown keys are an error naming the key.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let t = &mut self.train;
        let m = &mut t.model;
        match key {
            "out" => self.out = PathBuf::from(as_str(key, v)?),
            "train.steps" => t.steps = as_usize(key, v)?,
            "train.lr" => t.lr = as_f64(key, v)?,
            "train.momentum" => t.momentum = as_f64(key, v)?,
            "train.weight_decay" => t.weight_decay = as_f64(key, v)?,
            "train.seed" => t.seed = as_usize(key, v)? as u64,
            "train.batch_size" => t.batch_size = as_usize(key, v)?,
            "train.appearance_scale" => t.appearance_scale = as_f64(key, v)?,
            "train.grad_clip" => {
                let c = as_f64(key, v)?;
                t.grad_clip = (c != 0.0).then_some(c);
            }
            "train.lr_decay_power" => t.lr_decay_power = as_f64(key, v)?,
            "model.channels" => m.channels = as_usize(key, v)?,
            "model.reduction" => m.reduction = as_usize(key, v)?,
            "model.use_alfr" => m.use_alfr = as_bool(key, v)?,
            "model.use_dit" => m.use_dit = as_bool(key, v)?,
            "alfr.flow" => m.alfr.flow = parse_as::<Flow>(key, v)?,
            "alfr.self_reflect" => m.alfr.self_reflect = as_bool(key, v)?,
            "dit.variant" => m.dit_variant = parse_as::<DitVariant>(key, v)?,
            "clustering.rot" => m.clustering.rot_stream = parse_as::<StreamChoice>(key, v)?,
            "clustering.whl" => m.clustering.whl_stream = parse_as::<StreamChoice>(key, v)?,
            "eval.gt" => self.eval.gt = optional_path(as_str(key, v)?),
            "eval.det" => self.eval.det = optional_path(as_str(key, v)?),
            "eval.category" => self.eval.category = parse_as::<Category>(key, v)?,
            "eval.iou" => {
                let iou = as_f64(key, v)?;
                self.eval.iou = (iou != 0.0).then_some(iou);
            }
            "eval.mode" => {
                let s = as_str(key, v)?;
                self.eval.mode = parse_mode(s).ok_or_else(|| bad(key, format!("unknown mode {s:?} (r11|r40)")))?;
            }
            "eval.scenes" => self.eval.scenes = as_usize(key, v)?,
            "ablate.sweep" => {
                let s = as_str(key, v)?;
                self.sweep = parse_sweep(s)
                    .ok_or_else(|| bad(key, format!("unknown sweep {s:?} (groups|flow|clustering|dit)")))?;
            }
            "ablate.seeds" => self.seeds = as_usize(key, v)?,
            _ => return Err(CliError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.train.model.use_alfr {
            self.train.model.alfr.validate()?;
        }
        if let Some(iou) = self.eval.iou {
            if !(iou > 0.0 && iou <= 1.0) {
                return Err(bad("eval.iou", format!("{iou} is outside (0, 1]")));
            }
        }
        if self.eval.scenes == 0 {
            return Err(bad("eval.scenes", "must be at least 1"));
        }
        if self.seeds == 0 {
            return Err(bad("ablate.seeds", "must be at least 1"));
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> Value {
        let t = &self.train;
        let m = &t.model;
        let path = |p: &Option<PathBuf>| Value::String(p.as_ref().map_or(String::new(), |p| p.display().to_string()));
        match key {
            "out" => Value::String(self.out.display().to_string()),
            "train.steps" => Value::Integer(t.steps as i64),
            "train.lr" => Value::Float(t.lr),
            "train.momentum" => Value::Float(t.momentum),
            "train.weight_decay" => Value::Float(t.weight_decay),
            "train.seed" => Value::Integer(t.seed as i64),
            "train.batch_size" => Value::Integer(t.batch_size as i64),
            "train.appearance_scale" => Value::Float(t.appearance_scale),
            "train.grad_clip" => Value::Float(t.grad_clip.unwrap_or(0.0)),
            "train.lr_decay_power" => Value::Float(t.lr_decay_power),
            "model.channels" => Value::Integer(m.channels as i64),
            "model.reduction" => Value::Integer(m.reduction as i64),
            "model.use_alfr" => Value::Boolean(m.use_alfr),
            "model.use_dit" => Value::Boolean(m.use_dit),
            "alfr.flow" => Value::String(m.alfr.flow.name().into()),
            "alfr.self_reflect" => Value::Boolean(m.alfr.self_reflect),
            "dit.variant" => Value::String(m.dit_variant.name().into()),
            "clustering.rot" => Value::String(m.clustering.rot_stream.name().into()),
            "clustering.whl" => Value::String(m.clustering.whl_stream.name().into()),
            "eval.gt" => path(&self.eval.gt),
            "eval.det" => path(&self.eval.det),
            "eval.category" => Value::String(self.eval.category.name().to_lowercase()),
            "eval.iou" => Value::Float(self.eval.iou.unwrap_or(0.0)),
            "eval.mode" => Value::String(self.eval.mode.name().into()),
            "eval.scenes" => Value::Integer(self.eval.scenes as i64),
            "ablate.sweep" => Value::String(self.sweep.name().into()),
            "ablate.seeds" => Value::Integer(self.seeds as i64),
            _ => unreachable!("{key} is not a config key"),
        }
    }

    /// Every key as `key = value`, one per line. Parsing the text back gives
    /// the same configuration.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        for (k, _) in KEYS.iter().chain(&ABLATE_KEYS) {
            let _ = writeln!(s, "{k} = {}", self.value_of(k));
        }
        s
    }
}
