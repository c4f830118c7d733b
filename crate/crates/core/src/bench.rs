//! Benchmark harness reproducing the simulation protocol: sweep outlier
//! ratios and seeds, solve with and without correlation terms, and report
//! translation error against the outlier-free optimized reference together
//! with rejection statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::g2o::auto_correlations;
use crate::graph::{partition_edges, PoseGraph, RobustParams};
use crate::local::{chordal_init, gauss_newton, GnOptions};
use crate::pipeline::{classify_report, dcgm_solve};
use crate::pose::Pose2;
use crate::sdp::SdpOptions;
use crate::synth::{generate, GraphKind, GroundTruth, SynthConfig};

/// Average translation error after anchoring both trajectories at pose 0.
pub fn ate(estimate: &[Pose2], reference: &[Pose2]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Dimension {
            expected: reference.len(),
            actual: estimate.len(),
        });
    }
    if estimate.is_empty() {
        return Ok(0.0);
    }
    let ge = estimate[0].inverse();
    let gr = reference[0].inverse();
    let total: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| {
            let pe = ge.compose(e);
            let pr = gr.compose(r);
            (pe.translation - pr.translation).norm()
        })
        .sum();
    Ok(total / estimate.len() as f64)
}

/// Solver variant: with correlation terms, or decoupled (empty set).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "dc-gm")]
    Coupled,
    #[serde(rename = "dc-gmd")]
    Decoupled,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Coupled => write!(f, "dc-gm"),
            Variant::Decoupled => write!(f, "dc-gmd"),
        }
    }
}

/// Correlation weight choice for the coupled variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrWeight {
    /// `0.1 * median(cbar) / max neighbor count`, keeping the correlation
    /// interval small next to the admissible residual.
    Auto,
    #[serde(untagged)]
    Fixed(f64),
}

impl Default for CorrWeight {
    fn default() -> Self {
        CorrWeight::Auto
    }
}

/// Resolve the correlation coefficient for a graph under given thresholds.
pub fn resolve_corr_weight(graph: &PoseGraph, params: &RobustParams, choice: CorrWeight) -> f64 {
    match choice {
        CorrWeight::Fixed(w) => w,
        CorrWeight::Auto => {
            let pairs = auto_correlations(graph, 1.0);
            let mut neighbors = std::collections::HashMap::new();
            for c in &pairs {
                *neighbors.entry(c.edge_a).or_insert(0usize) += 1;
                *neighbors.entry(c.edge_b).or_insert(0usize) += 1;
            }
            let max_neighbors = neighbors.values().cloned().max().unwrap_or(1).max(1);
            let (_, lc) = partition_edges(graph);
            let mut cbars: Vec<f64> = lc
                .iter()
                .map(|&k| params.cbar_for(&graph.edges[k]))
                .collect();
            if cbars.is_empty() {
                return 0.0;
            }
            cbars.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = cbars[cbars.len() / 2];
            0.1 * median / max_neighbors as f64
        }
    }
}

/// Full sweep configuration, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    #[serde(default = "default_kind")]
    pub kind: GraphKind,
    #[serde(default = "default_rows")]
    pub rows: usize,
    #[serde(default = "default_cols")]
    pub cols: usize,
    #[serde(default)]
    pub steps: usize,
    pub sigma_t: f64,
    pub sigma_r: f64,
    pub group_size: usize,
    #[serde(default)]
    pub heterogeneous_groups: bool,
    /// Outlier ratios to sweep, e.g. [0.0, 0.1, ..., 0.5].
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Threshold multiplier p: admissible residuals at p sigma.
    #[serde(default = "default_cbar_sigmas")]
    pub cbar_sigmas: f64,
    #[serde(default)]
    pub corr_weight: CorrWeight,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Run sweep cells on worker threads.
    #[serde(default)]
    pub parallel: bool,
}

fn default_kind() -> GraphKind {
    GraphKind::Grid
}
fn default_rows() -> usize {
    10
}
fn default_cols() -> usize {
    20
}
fn default_cbar_sigmas() -> f64 {
    1.0
}

/// The subset of solver options exposed in benchmark configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol_feas: f64,
    pub tol_obj: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SdpOptions::default();
        Self {
            max_iters: d.max_iters,
            tol_feas: d.tol_feas,
            tol_obj: d.tol_obj,
        }
    }
}

impl SolverConfig {
    pub fn to_options(&self) -> SdpOptions {
        SdpOptions {
            max_iters: self.max_iters,
            tol_feas: self.tol_feas,
            tol_obj: self.tol_obj,
            ..SdpOptions::default()
        }
    }
}

/// One row of the benchmark report.
#[derive(Debug, Clone, Serialize)]
pub struct RunRow {
    pub seed: u64,
    pub outlier_ratio: f64,
    pub variant: Variant,
    pub avg_translation_error: f64,
    pub pct_outliers_rejected: f64,
    pub pct_inliers_rejected: f64,
    pub rank: usize,
    pub lower_bound: f64,
    pub objective: f64,
    pub wall_time_s: f64,
}

pub const CSV_HEADER: &str = "seed,outlier_ratio,variant,avg_translation_error,pct_outliers_rejected,pct_inliers_rejected,rank,lower_bound,objective,wall_time_s";

pub fn rows_to_csv(rows: &[RunRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.outlier_ratio,
            r.variant,
            r.avg_translation_error,
            r.pct_outliers_rejected,
            r.pct_inliers_rejected,
            r.rank,
            r.lower_bound,
            r.objective,
            r.wall_time_s
        ));
    }
    out
}

/// Outlier-free optimized reference: Gauss-Newton from chordal on the graph
/// restricted to odometry plus true-inlier loop closures.
pub fn outlier_free_reference(graph: &PoseGraph, truth: &GroundTruth) -> Result<Vec<Pose2>> {
    let (od, lc) = partition_edges(graph);
    let mut edges = Vec::new();
    for &k in &od {
        edges.push(graph.edges[k]);
    }
    for (slot, &k) in lc.iter().enumerate() {
        if truth.inlier_mask[slot] {
            edges.push(graph.edges[k]);
        }
    }
    let clean = PoseGraph::new(graph.num_nodes, edges, vec![])?;
    let init = chordal_init(&clean)?;
    let (poses, _) = gauss_newton(&clean, &init, &GnOptions::default())?;
    Ok(poses)
}

/// Run one (ratio, seed, variant) cell and produce its report row.
pub fn run_cell(cfg: &BenchConfig, ratio: f64, seed: u64, variant: Variant) -> Result<RunRow> {
    let mut synth = match cfg.kind {
        GraphKind::Grid => SynthConfig::grid(cfg.rows, cfg.cols, cfg.sigma_t, cfg.sigma_r, seed),
        GraphKind::Manhattan => SynthConfig::manhattan(cfg.steps, cfg.sigma_t, cfg.sigma_r, seed),
    };
    synth.outlier_ratio = ratio;
    synth.group_size = cfg.group_size;
    synth.heterogeneous_groups = cfg.heterogeneous_groups;
    let (mut graph, truth) = generate(&synth)?;

    let params = RobustParams::at_sigma(cfg.cbar_sigmas, cfg.sigma_t, cfg.sigma_r)?;
    if variant == Variant::Coupled {
        let w = resolve_corr_weight(&graph, &params, cfg.corr_weight);
        graph.correlation = auto_correlations(&graph, w);
    }

    let start = std::time::Instant::now();
    let result = dcgm_solve(&graph, &params, &cfg.solver.to_options())?;
    let wall_time_s = start.elapsed().as_secs_f64();

    let reference = outlier_free_reference(&graph, &truth)?;
    let avg_translation_error = ate(&result.poses, &reference)?;
    let (pct_outliers_rejected, pct_inliers_rejected) =
        classify_report(&result.thetas, &truth.inlier_mask);

    Ok(RunRow {
        seed,
        outlier_ratio: ratio,
        variant,
        avg_translation_error,
        pct_outliers_rejected,
        pct_inliers_rejected,
        rank: result.sdp.numerical_rank,
        lower_bound: result.sdp.objective,
        objective: result.refit_objective,
        wall_time_s,
    })
}

/// Full sweep. Row order follows the config (ratios, then seeds, then
/// variants) regardless of execution order.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<RunRow>> {
    let mut cells = Vec::new();
    for &ratio in &cfg.ratios {
        for &seed in &cfg.seeds {
            for &variant in &cfg.variants {
                cells.push((ratio, seed, variant));
            }
        }
    }
    if cfg.parallel {
        cells
            .par_iter()
            .map(|&(ratio, seed, variant)| run_cell(cfg, ratio, seed, variant))
            .collect()
    } else {
        cells
            .iter()
            .map(|&(ratio, seed, variant)| run_cell(cfg, ratio, seed, variant))
            .collect()
    }
}
