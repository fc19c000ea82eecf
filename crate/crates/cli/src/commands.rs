use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use dfr_core::ablate::{clustering_variants, component_groups, dit_variants, flow_variants};
use dfr_core::train::heldout_scenes;
use dfr_core::{ablate, evaluate, train, AblationRow};
use dfr_kitti::{
    average_precision, category_curve, read_detections_for, read_label_dir, ApMode, Category, Difficulty, EvalRecord,
    EvalSpec, KittiObjectLabel, Metric,
};
use dfr_tensor::gradcheck::{check_case, tensor_cases, CaseReport, GradCase, Tolerance};
use dfr_tensor::OpKind;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, Sweep};
use crate::error::{CliError, Result};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(CliError::io(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Encode(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let encode = |e: csv::Error| CliError::Encode(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(encode)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Encode(e.to_string()))?;
    write_file(path, &bytes)
}

fn fmt_ap(ap: Option<f64>) -> String {
    ap.map_or_else(|| "  n/a".to_string(), |v| format!("{v:.3}"))
}

// ---- eval ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub category: String,
    pub iou: f64,
    pub mode: String,
    pub frames: usize,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn ap(&self, metric: Metric, difficulty: Difficulty) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.metric == metric.name() && r.difficulty == difficulty.name())
            .and_then(|r| r.ap)
    }

    /// Easy/Mod./Hard rows for AP_3D and AP_BEV.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} AP@{:.2} ({}, {} frames)", self.category, self.iou, self.mode, self.frames);
        let _ = writeln!(s, "{:<8}{:>8}{:>8}{:>8}", "", "Easy", "Mod.", "Hard");
        for (label, metric) in [("AP_3D", Metric::ThreeD), ("AP_BEV", Metric::Bev)] {
            let _ = write!(s, "{label:<8}");
            for d in Difficulty::LEVELS {
                let _ = write!(s, "{:>8}", fmt_ap(self.ap(metric, d)));
            }
            s.push('\n');
        }
        s
    }
}

/// AP per metric and difficulty over aligned frames. A level without valid
/// ground truth has no AP.
pub fn eval_frames(
    gt: &[Vec<KittiObjectLabel>],
    det: &[Vec<KittiObjectLabel>],
    category: Category,
    iou: f64,
    mode: ApMode,
) -> Result<EvalReport> {
    let mut records = Vec::new();
    for metric in [Metric::ThreeD, Metric::Bev] {
        for d in Difficulty::LEVELS {
            let spec = EvalSpec {
                category,
                difficulty: Some(d),
                iou_thresh: iou,
                metric,
            };
            let curve = category_curve(gt, det, &spec)?;
            let ap = if curve.total_gt == 0 {
                None
            } else {
                Some(average_precision(&curve, mode)?)
            };
            records.push(EvalRecord {
                category: category.name().to_string(),
                difficulty: d.name().to_string(),
                metric: metric.name().to_string(),
                mode: mode.name().to_string(),
                ap,
            });
        }
    }
    Ok(EvalReport {
        category: category.name().to_string(),
        iou,
        mode: mode.name().to_string(),
        frames: gt.len(),
        records,
    })
}

pub struct EvalOverrides {
    pub gt: Option<PathBuf>,
    pub det: Option<PathBuf>,
    pub category: Option<Category>,
    pub iou: Option<f64>,
    pub mode: Option<ApMode>,
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(mut cfg: RunConfig, o: EvalOverrides) -> Result<EvalReport> {
    cfg.eval.gt = o.gt.or(cfg.eval.gt);
    cfg.eval.det = o.det.or(cfg.eval.det);
    cfg.eval.category = o.category.unwrap_or(cfg.eval.category);
    cfg.eval.iou = o.iou.or(cfg.eval.iou);
    cfg.eval.mode = o.mode.unwrap_or(cfg.eval.mode);
    cfg.out = o.out.unwrap_or(cfg.out);
    cfg.validate()?;

    let gt_dir = cfg.eval.gt.clone().ok_or_else(|| CliError::Usage("no ground-truth directory (--gt)".into()))?;
    let det_dir = cfg.eval.det.clone().ok_or_else(|| CliError::Usage("no detection directory (--det)".into()))?;
    let gt = read_label_dir(&gt_dir)?;
    let det = read_detections_for(&det_dir, gt.keys().copied())?;
    let gt: Vec<_> = gt.into_values().collect();
    let report = eval_frames(&gt, &det, cfg.eval.category, cfg.eval.iou_threshold(), cfg.eval.mode)?;

    print!("{}", report.table());
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("eval_summary.json"), &report)?;
    Ok(report)
}

// ---- toy-train -------------------------------------------------------------

#[derive(Serialize)]
struct HistoryCsvRow {
    step: usize,
    l_app: f64,
    l_loc: f64,
    s_app: f64,
    s_loc: f64,
    total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_total: f64,
    pub heldout_scenes: usize,
    pub mean_ap: f64,
    pub accuracy: f64,
    pub per_category: Vec<(String, Option<f64>)>,
}

pub fn apply_run_overrides(cfg: &mut RunConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    cfg.validate()
}

/// Trains, then writes `history.csv`, `checkpoint.bin`, `config.toml` and
/// `summary.json` into the output directory.
pub fn cmd_toy_train(cfg: &RunConfig) -> Result<TrainSummary> {
    create_dir(&cfg.out)?;
    let snapshot = cfg.to_toml();
    write_file(&cfg.out.join("config.toml"), snapshot.as_bytes())?;

    let run = train(&cfg.train)?;
    write_csv(
        &cfg.out.join("history.csv"),
        run.history.iter().map(|r| HistoryCsvRow {
            step: r.step,
            l_app: r.l_app,
            l_loc: r.l_loc,
            s_app: r.s_app,
            s_loc: r.s_loc,
            total: r.total,
        }),
    )?;
    Checkpoint::from_store(snapshot, &run.detector.store).save(&cfg.out.join("checkpoint.bin"))?;

    let eval = evaluate(&run.detector, &heldout_scenes(cfg.eval.scenes))?;
    let summary = TrainSummary {
        steps: run.history.len(),
        final_total: run.history.last().map_or(f64::NAN, |r| r.total),
        heldout_scenes: cfg.eval.scenes,
        mean_ap: eval.mean_ap,
        accuracy: eval.accuracy,
        per_category: eval.per_category.iter().map(|(c, ap)| (c.name().to_string(), *ap)).collect(),
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    println!(
        "trained {} steps: final loss {:.4}, held-out AP_3D {:.4}, category accuracy {:.3}",
        summary.steps, summary.final_total, summary.mean_ap, summary.accuracy
    );
    Ok(summary)
}

// ---- ablate ----------------------------------------------------------------

#[derive(Serialize)]
struct AblationCsvRow<'a> {
    variant: &'a str,
    seed: u64,
    ap: f64,
    accuracy: f64,
    final_s_app: f64,
}

#[derive(Serialize)]
struct AblationJsonRow<'a> {
    variant: &'a str,
    mean_ap: f64,
    std_ap: f64,
    seeds: Vec<u64>,
    aps: Vec<f64>,
}

/// Trains every variant of the configured sweep on every seed and writes
/// `ablation.csv` (one row per run) and `ablation.json` (one row per variant).
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    create_dir(&cfg.out)?;
    let base = cfg.train.model;
    let variants = match cfg.sweep {
        Sweep::Groups => component_groups(&base),
        Sweep::Flow => flow_variants(&base),
        Sweep::Clustering => clustering_variants(&base),
        Sweep::Dit => dit_variants(&base),
    };
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|i| cfg.train.seed + i).collect();
    let rows = ablate(&cfg.train, &variants, &seeds, cfg.eval.scenes)?;

    write_csv(
        &cfg.out.join("ablation.csv"),
        rows.iter().flat_map(|row| {
            row.runs.iter().map(|r| AblationCsvRow {
                variant: &row.name,
                seed: r.seed,
                ap: r.ap,
                accuracy: r.accuracy,
                final_s_app: r.final_s_app,
            })
        }),
    )?;
    let json: Vec<_> = rows
        .iter()
        .map(|row| AblationJsonRow {
            variant: &row.name,
            mean_ap: row.mean_ap,
            std_ap: row.std_ap,
            seeds: row.runs.iter().map(|r| r.seed).collect(),
            aps: row.runs.iter().map(|r| r.ap).collect(),
        })
        .collect();
    write_json(&cfg.out.join("ablation.json"), &json)?;

    println!("{:<34}{:>18}{:>10}", "variant", "AP_3D mean ± std", "accuracy");
    for row in &rows {
        let acc = row.runs.iter().map(|r| r.accuracy).sum::<f64>() / row.runs.len() as f64;
        println!("{:<34}{:>9.4} ± {:<6.4}{:>10.3}", row.name, row.mean_ap, row.std_ap, acc);
    }
    Ok(rows)
}

// ---- gradcheck -------------------------------------------------------------

/// Tensor ops first, one case per differentiable op, then the model-level cases.
pub fn gradcheck_cases() -> Vec<GradCase> {
    let mut cases = tensor_cases();
    cases.extend(dfr_core::gradcheck::model_cases());
    cases
}

pub fn parse_fault(name: &str) -> Result<OpKind> {
    OpKind::from_name(name)
        .filter(|k| OpKind::DIFFERENTIABLE.contains(k))
        .ok_or_else(|| CliError::Usage(format!("unknown differentiable op `{name}`")))
}

/// Runs every case and prints one line per case. Breaches are an error
/// listing the failing cases.
pub fn cmd_gradcheck(seed: u64, trials: usize, fault: Option<OpKind>) -> Result<Vec<CaseReport>> {
    let tol = Tolerance::default();
    let cases = gradcheck_cases();
    println!(
        "{} cases ({} tensor ops), {trials} trials each, rel tol {:e}, step {:e}",
        cases.len(),
        OpKind::DIFFERENTIABLE.len(),
        tol.rel,
        tol.step
    );
    let mut reports = Vec::with_capacity(cases.len());
    let mut failed = Vec::new();
    let stdout = std::io::stdout();
    for case in &cases {
        let report = match check_case(case, seed, trials, tol, fault) {
            Ok(r) => r,
            Err(e) => {
                println!("{:<32} error: {e}", case.name);
                failed.push(case.name.clone());
                continue;
            }
        };
        let verdict = if report.passed { "ok" } else { "FAIL" };
        let mut out = stdout.lock();
        let _ = writeln!(out, "{:<32} worst rel {:.3e}  {verdict}", report.name, report.worst_rel);
        if !report.passed {
            failed.push(report.name.clone());
        }
        reports.push(report);
    }
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(CliError::GradcheckFailed(failed))
    }
}
