//! Transformation-robustness benchmark: train on random points, transform
//! the image, search the transformed image, and score recovered points
//! against the exact coordinate-mapped ground truth.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use hiermatch_core::error::{Error, Result};
use hiermatch_core::matcher::{find, EvalMode, SearchConfig, SearchStats};
use hiermatch_core::synth::sample_points;
use hiermatch_core::template::train;
use hiermatch_core::topology::StackConfig;
use hiermatch_core::transform::{apply_transform, map_point, TransformSpec};
use hiermatch_core::{Image, Point};

/// Stack configuration the benchmark and the CLI default to. The element
/// grid is packed tighter than the type default so the finest layer
/// localizes well inside the 8-pixel hit tolerance.
pub fn default_stack() -> StackConfig {
    StackConfig {
        num_layers: 6,
        base_sigma: 2.0,
        orientations: 4,
        element_spacing_factor: 0.6,
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub n_points: usize,
    /// Seeds both the point sampling and the pixel-noise transform.
    pub seed: u64,
    pub transforms: Vec<TransformSpec>,
    /// Hit tolerance in pixels.
    pub tolerance: f64,
    pub subregion: usize,
    /// Layer used for coarse scanning; `None` selects `M - 1`. Scanning two
    /// layers below the top keeps both down- and up-scalings of the
    /// benchmark's range representable.
    pub scan_layer: Option<usize>,
    /// Evaluation modes to run, in report order.
    pub eval_modes: Vec<EvalMode>,
    pub stack: StackConfig,
    pub energy_threshold: f64,
}

impl BenchConfig {
    pub fn new(seed: u64) -> Self {
        BenchConfig {
            n_points: 100,
            seed,
            transforms: TransformSpec::benchmark_rows(seed),
            tolerance: 8.0,
            subregion: 150,
            scan_layer: None,
            eval_modes: vec![EvalMode::AllElements, EvalMode::MatchedOnly],
            stack: default_stack(),
            energy_threshold: 0.0,
        }
    }
}

/// Score of one transform under one evaluation mode.
#[derive(Debug, Clone)]
pub struct TransformOutcome {
    pub transform: String,
    pub eval_t: usize,
    pub hits: usize,
    pub n_points: usize,
    /// Mean localization error in pixels, over the hits; NaN when none hit.
    pub mean_err_px: f64,
    pub wall_ms: u128,
    pub stats: SearchStats,
}

impl TransformOutcome {
    pub fn rate_pct(&self) -> f64 {
        100.0 * self.hits as f64 / self.n_points as f64
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    /// One row per transform x evaluation mode, transforms outermost.
    pub rows: Vec<TransformOutcome>,
    pub n_points: usize,
}

impl BenchResult {
    /// Rows for one evaluation mode, in transform order.
    pub fn rows_for(&self, eval_t: usize) -> Vec<&TransformOutcome> {
        self.rows.iter().filter(|r| r.eval_t == eval_t).collect()
    }
}

/// Run the full benchmark on a reference image.
///
/// Points are sampled away from the borders by the largest layer's element
/// footprint, a template is trained on them, and every transform is searched
/// under every evaluation mode. A point counts as a hit when its best
/// candidate lands within the tolerance of the transform-mapped truth.
pub fn run_benchmark(img: &Image, cfg: &BenchConfig) -> Result<BenchResult> {
    cfg.stack.validate()?;
    if cfg.n_points == 0 {
        return Err(Error::InvalidParam("benchmark needs at least one point".into()));
    }
    let top_layer = cfg.stack.layer(cfg.stack.num_layers)?;
    let margin = top_layer.element_footprint_radius() + 1.0;
    let points = sample_points(img.width(), img.height(), margin, cfg.n_points, cfg.seed);
    let template = train(img, &points, &cfg.stack, "benchmark-reference")?;

    let per_transform: Vec<Vec<TransformOutcome>> = cfg
        .transforms
        .par_iter()
        .map(|spec| -> Result<Vec<TransformOutcome>> {
            let (query, coord_map) = apply_transform(img, spec)?;
            let truths: Vec<Point> = points.iter().map(|&p| map_point(&coord_map, p)).collect();
            let mut outcomes = Vec::with_capacity(cfg.eval_modes.len());
            for &mode in &cfg.eval_modes {
                let started = Instant::now();
                let search = SearchConfig {
                    scan_layer: cfg.scan_layer,
                    subregion: cfg.subregion,
                    eval_mode: mode,
                    threshold: 0.0,
                    energy_threshold: cfg.energy_threshold,
                };
                let result = find(&query, &template, &search)?;
                let mut hits = 0usize;
                let mut err_sum = 0.0;
                for (i, truth) in truths.iter().enumerate() {
                    if let Some(best) = result.best_for(i) {
                        let err = best.final_location.distance(*truth);
                        if err <= cfg.tolerance {
                            hits += 1;
                            err_sum += err;
                        }
                    }
                }
                outcomes.push(TransformOutcome {
                    transform: spec.to_string(),
                    eval_t: mode.element_count(),
                    hits,
                    n_points: cfg.n_points,
                    mean_err_px: if hits > 0 {
                        err_sum / hits as f64
                    } else {
                        f64::NAN
                    },
                    wall_ms: started.elapsed().as_millis(),
                    stats: result.stats,
                });
            }
            Ok(outcomes)
        })
        .collect::<Result<_>>()?;

    Ok(BenchResult {
        rows: per_transform.into_iter().flatten().collect(),
        n_points: cfg.n_points,
    })
}

/// CSV form of the report. Deterministic except for the wall-time column.
pub fn report_csv(result: &BenchResult) -> String {
    let mut out = String::from("transform,eval_T,hits,rate_pct,mean_err_px,wall_ms,sim_evals\n");
    for row in &result.rows {
        out.push_str(&format!(
            "{},{},{},{:.1},{:.3},{},{}\n",
            row.transform,
            row.eval_t,
            row.hits,
            row.rate_pct(),
            row.mean_err_px,
            row.wall_ms,
            row.stats.similarity_evaluations
        ));
    }
    out
}

pub fn emit_report(result: &BenchResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report_csv(result)).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

/// Human-readable rate table.
pub fn format_table(result: &BenchResult) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<52} {:>7} {:>6} {:>9} {:>9} {:>9}\n",
        "transform", "eval_T", "hits", "rate_%", "mean_err", "wall_ms"
    ));
    for row in &result.rows {
        out.push_str(&format!(
            "{:<52} {:>7} {:>6} {:>9.1} {:>9.3} {:>9}\n",
            row.transform,
            row.eval_t,
            format!("{}/{}", row.hits, row.n_points),
            row.rate_pct(),
            row.mean_err_px,
            row.wall_ms
        ));
    }
    out
}
