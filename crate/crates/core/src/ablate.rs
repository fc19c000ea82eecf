//! Multi-seed comparison of model variants on held-out synthetic scenes.

use rayon::prelude::*;

use crate::alfr::{AlfrConfig, Flow};
use crate::detector::ModelConfig;
use crate::dit::DitVariant;
use crate::error::Result;
use crate::losses::ClusteringConfig;
use crate::train::{evaluate, heldout_scenes, train, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
}

fn variant(name: &str, model: ModelConfig) -> Variant {
    Variant {
        name: name.to_string(),
        model,
    }
}

/// Component groups I–VII: self-reflect, mutual-reflect and trading
/// switched on and off over a common base.
pub fn component_groups(base: &ModelConfig) -> Vec<Variant> {
    let with = |self_reflect: bool, mutual: bool, dit: bool| {
        let mut m = *base;
        m.use_alfr = self_reflect || mutual;
        m.alfr = AlfrConfig {
            flow: if mutual { Flow::Both } else { Flow::None },
            self_reflect,
        };
        m.use_dit = dit;
        m
    };
    vec![
        variant("I", with(false, false, false)),
        variant("II", with(true, false, false)),
        variant("III", with(false, true, false)),
        variant("IV", with(true, true, false)),
        variant("V", with(true, false, true)),
        variant("VI", with(false, true, true)),
        variant("VII", with(true, true, true)),
    ]
}

/// Mutual-reflect direction sweep with everything else on.
pub fn flow_variants(base: &ModelConfig) -> Vec<Variant> {
    Flow::ALL
        .into_iter()
        .map(|flow| {
            let mut m = *base;
            m.use_alfr = true;
            m.alfr = AlfrConfig {
                flow,
                self_reflect: true,
            };
            variant(flow.name(), m)
        })
        .collect()
}

/// The four rotation/dimension placements.
pub fn clustering_variants(base: &ModelConfig) -> Vec<Variant> {
    ClusteringConfig::ALL
        .into_iter()
        .map(|c| {
            let mut m = *base;
            m.clustering = c;
            variant(&c.label(), m)
        })
        .collect()
}

/// Trading-score sources.
pub fn dit_variants(base: &ModelConfig) -> Vec<Variant> {
    DitVariant::ALL
        .into_iter()
        .map(|v| {
            let mut m = *base;
            m.use_dit = true;
            m.dit_variant = v;
            variant(v.name(), m)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub ap: f64,
    pub accuracy: f64,
    /// Mean appearance trading score over the last tenth of training.
    pub final_s_app: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub runs: Vec<SeedResult>,
    pub mean_ap: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std_ap: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains one run and scores it on `eval_scenes` held-out scenes.
pub fn run_seed(base: &TrainConfig, model: ModelConfig, seed: u64, eval_scenes: usize) -> Result<SeedResult> {
    let cfg = TrainConfig { seed, model, ..*base };
    let run = train(&cfg)?;
    let summary = evaluate(&run.detector, &heldout_scenes(eval_scenes))?;
    let tail = (run.history.len() / 10).max(1);
    let final_s_app = run.history[run.history.len() - tail..].iter().map(|r| r.s_app).sum::<f64>() / tail as f64;
    Ok(SeedResult {
        seed,
        ap: summary.mean_ap,
        accuracy: summary.accuracy,
        final_s_app,
    })
}

/// Every variant × seed, run in parallel; rows keep `variants` order.
pub fn ablate(base: &TrainConfig, variants: &[Variant], seeds: &[u64], eval_scenes: usize) -> Result<Vec<AblationRow>> {
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<Result<SeedResult>> = jobs
        .par_iter()
        .map(|&(v, s)| run_seed(base, variants[v].model, s, eval_scenes))
        .collect();
    let mut results = results.into_iter();
    variants
        .iter()
        .map(|v| {
            let runs = results.by_ref().take(seeds.len()).collect::<Result<Vec<_>>>()?;
            let aps: Vec<f64> = runs.iter().map(|r| r.ap).collect();
            let (mean_ap, std_ap) = mean_std(&aps);
            Ok(AblationRow {
                name: v.name.clone(),
                runs,
                mean_ap,
                std_ap,
            })
        })
        .collect()
}
