//! Full inference procedure: assemble the matrix form, solve the
//! relaxation, round to poses and accept/reject labels, drop the rejected
//! loop closures, re-solve once when the first solution is not rank-tight,
//! and refine the accepted edges with Gauss-Newton.

use std::time::Instant;

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::Serialize;

use crate::error::Result;
use crate::graph::{partition_edges, Correlation, PoseGraph, RobustParams};
use crate::local::{gauss_newton, GnOptions};
use crate::model::{BlockLayout, DcgmProblem, Labeling, DIM};
use crate::pose::Pose2;
use crate::sdp::{solve_sdp, SdpOptions, SdpSolution};

/// Result of [`dcgm_solve`].
#[derive(Debug, Clone)]
pub struct DcgmResult {
    /// Gauge-anchored estimates (pose 0 is the identity).
    pub poses: Vec<Pose2>,
    /// Final label per loop closure, in edge-list order.
    pub thetas: Labeling,
    /// Loop-closure slots labelled -1.
    pub rejected_edges: Vec<usize>,
    /// The initial relaxation solve.
    pub sdp: SdpSolution,
    /// Objective of the Gauss-Newton refit over the accepted edges.
    pub refit_objective: f64,
    /// True when the deciding solve had numerical rank d.
    pub tight: bool,
    /// Wall-clock seconds per stage.
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StageTimings {
    pub assemble_s: f64,
    pub sdp_s: f64,
    pub round_s: f64,
    pub resolve_s: f64,
    pub refine_s: f64,
}

impl DcgmResult {
    /// JSON report: poses as (x, y, angle), labels, rejections, bounds,
    /// rank, leading eigenvalues, and stage timings.
    pub fn to_json(&self) -> serde_json::Value {
        let poses: Vec<serde_json::Value> = self
            .poses
            .iter()
            .map(|p| serde_json::json!({"x": p.x(), "y": p.y(), "theta": p.angle()}))
            .collect();
        let head: Vec<f64> = self.sdp.eigenvalues.iter().take(6).cloned().collect();
        serde_json::json!({
            "poses": poses,
            "thetas": self.thetas,
            "rejected_edges": self.rejected_edges,
            "objective": self.refit_objective,
            "lower_bound": self.sdp.objective,
            "rank": self.sdp.numerical_rank,
            "tight": self.tight,
            "converged": self.sdp.converged,
            "eigenvalue_head": head,
            "timings": self.timings,
        })
    }
}

/// Read poses and labels off the anchored block row of a feasible `Z`.
///
/// The last d rows of `Z` equal the lifted variable itself whenever `Z` is a
/// rank-d feasible Gram matrix, so rounding is exact in the tight case.
/// Rotations are projected to SO(2) by polar decomposition with determinant
/// correction; labels take the sign of the block trace (ties accept); poses
/// are finally gauge-anchored so pose 0 is the identity.
pub fn round_solution(z: &DMatrix<f64>, layout: &BlockLayout) -> (Vec<Pose2>, Labeling) {
    let a_off = layout.anchor_offset();
    // Guard: if the anchor diagonal block strays from I, fall back to a
    // spectral factor aligned by its anchor block. Cannot happen for an
    // affine-feasible iterate.
    let anchor_ok = {
        let mut dev: f64 = 0.0;
        for r in 0..DIM {
            for c in 0..DIM {
                let expect = if r == c { 1.0 } else { 0.0 };
                dev = dev.max((z[(a_off + r, a_off + c)] - expect).abs());
            }
        }
        dev <= 1e-3
    };
    let x_hat: DMatrix<f64> = if anchor_ok {
        z.rows(a_off, DIM).into_owned()
    } else {
        spectral_block_row(z, layout)
    };

    let mut poses = Vec::with_capacity(layout.n);
    for i in 0..layout.n {
        let off = layout.pose_offset(i);
        let r_hat = Matrix2::new(
            x_hat[(0, off)],
            x_hat[(0, off + 1)],
            x_hat[(1, off)],
            x_hat[(1, off + 1)],
        );
        let t_hat = Vector2::new(x_hat[(0, off + DIM)], x_hat[(1, off + DIM)]);
        poses.push(Pose2 {
            rotation: project_so2(&r_hat),
            translation: t_hat,
        });
    }
    let mut thetas = Vec::with_capacity(layout.ell);
    for e in 0..layout.ell {
        let off = layout.theta_offset(e);
        let trace = x_hat[(0, off)] + x_hat[(1, off + 1)];
        thetas.push(if trace < 0.0 { -1 } else { 1 });
    }

    // Gauge anchor: left-multiply by the inverse of pose 0.
    let g0 = poses[0].inverse();
    let poses = poses.iter().map(|p| g0.compose(p)).collect();
    (poses, thetas)
}

/// Fallback extraction from the top-d spectral factor, aligned so that the
/// anchor block becomes orthonormal.
fn spectral_block_row(z: &DMatrix<f64>, layout: &BlockLayout) -> DMatrix<f64> {
    let dim = layout.dim();
    let eig = z.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut y = DMatrix::zeros(DIM, dim);
    for (row, &col) in order.iter().take(DIM).enumerate() {
        let scale = eig.eigenvalues[col].max(0.0).sqrt();
        for c in 0..dim {
            y[(row, c)] = scale * eig.eigenvectors[(c, col)];
        }
    }
    // Align: the anchor block of the true factor is orthogonal.
    let a_off = layout.anchor_offset();
    let g = Matrix2::new(
        y[(0, a_off)],
        y[(0, a_off + 1)],
        y[(1, a_off)],
        y[(1, a_off + 1)],
    );
    let svd = g.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let align = (u * vt).transpose();
    let mut out = DMatrix::zeros(DIM, dim);
    out.copy_from(&(align * y));
    out
}

/// Polar projection to SO(2) with determinant correction.
fn project_so2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let det = (u * vt).determinant();
    let fix = Matrix2::new(1.0, 0.0, 0.0, det.signum());
    u * fix * vt
}

/// Solve, round, reject, optionally re-solve, refine.
///
/// When the first relaxation is rank-tight the rounded labels are final;
/// otherwise the loop closures labelled -1 are dropped, the reduced problem
/// (with its surviving correlations) is solved once more, and labels are
/// rounded again. Accepted edges are then refined by Gauss-Newton from the
/// rounded poses.
pub fn dcgm_solve(
    graph: &PoseGraph,
    params: &RobustParams,
    opts: &SdpOptions,
) -> Result<DcgmResult> {
    let mut timings = StageTimings::default();
    let t0 = Instant::now();
    let problem = DcgmProblem::build(graph, params)?;
    timings.assemble_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let sdp = solve_sdp(&problem, opts)?;
    timings.sdp_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let (mut poses, mut thetas) = round_solution(&sdp.z, &problem.layout);
    timings.round_s = t2.elapsed().as_secs_f64();

    let ell = problem.layout.ell;
    let mut tight = sdp.numerical_rank == DIM;

    if !tight && ell > 0 {
        // Drop rejected loop closures and re-run the relaxation once.
        let t3 = Instant::now();
        let survivors: Vec<usize> = (0..ell).filter(|&e| thetas[e] == 1).collect();
        let (reduced, kept_slots) = reduced_graph(graph, &problem, &survivors);
        let reduced_problem = DcgmProblem::build(&reduced, params)?;
        let second = solve_sdp(&reduced_problem, opts)?;
        let (poses2, thetas2) = round_solution(&second.z, &reduced_problem.layout);
        tight = second.numerical_rank == DIM;
        poses = poses2;
        let mut combined = vec![-1i8; ell];
        for (reduced_slot, &orig_slot) in kept_slots.iter().enumerate() {
            combined[orig_slot] = thetas2[reduced_slot];
        }
        thetas = combined;
        timings.resolve_s = t3.elapsed().as_secs_f64();
    }

    // Refine over odometry plus accepted loop closures.
    let t4 = Instant::now();
    let accepted: Vec<usize> = (0..ell).filter(|&e| thetas[e] == 1).collect();
    let (refit_graph, _) = reduced_graph(graph, &problem, &accepted);
    let (refined, refit_objective) = gauss_newton(&refit_graph, &poses, &GnOptions::default())?;
    timings.refine_s = t4.elapsed().as_secs_f64();

    let rejected_edges: Vec<usize> = (0..ell).filter(|&e| thetas[e] == -1).collect();
    Ok(DcgmResult {
        poses: refined,
        thetas,
        rejected_edges,
        sdp,
        refit_objective,
        tight,
        timings,
    })
}

/// Graph with only the given loop-closure slots kept (odometry always
/// stays), along with the kept slots in their new order. Correlations
/// between surviving edges are preserved.
fn reduced_graph(
    graph: &PoseGraph,
    problem: &DcgmProblem,
    keep_slots: &[usize],
) -> (PoseGraph, Vec<usize>) {
    let (od, _) = partition_edges(graph);
    let mut edges = Vec::new();
    for &k in &od {
        edges.push(graph.edges[k]);
    }
    let mut new_index = vec![usize::MAX; graph.edges.len()];
    for &slot in keep_slots {
        let k = problem.lc_edges[slot];
        new_index[k] = edges.len();
        edges.push(graph.edges[k]);
    }
    let correlation: Vec<Correlation> = graph
        .correlation
        .iter()
        .filter(|c| new_index[c.edge_a] != usize::MAX && new_index[c.edge_b] != usize::MAX)
        .map(|c| Correlation {
            edge_a: new_index[c.edge_a],
            edge_b: new_index[c.edge_b],
            weight: c.weight,
        })
        .collect();
    let reduced = PoseGraph::new(graph.num_nodes, edges, correlation)
        .expect("subgraph keeps the odometry chain");
    (reduced, keep_slots.to_vec())
}

/// Classification quality against a ground-truth inlier mask:
/// `(percent of true outliers rejected, percent of true inliers rejected)`.
/// With no true outliers the first is 100; with no true inliers the second
/// is 0.
pub fn classify_report(thetas: &[i8], inlier_mask: &[bool]) -> (f64, f64) {
    assert_eq!(thetas.len(), inlier_mask.len());
    let mut outliers = 0usize;
    let mut outliers_rejected = 0usize;
    let mut inliers = 0usize;
    let mut inliers_rejected = 0usize;
    for (&theta, &inlier) in thetas.iter().zip(inlier_mask) {
        if inlier {
            inliers += 1;
            if theta == -1 {
                inliers_rejected += 1;
            }
        } else {
            outliers += 1;
            if theta == -1 {
                outliers_rejected += 1;
            }
        }
    }
    let pct_out = if outliers == 0 {
        100.0
    } else {
        100.0 * outliers_rejected as f64 / outliers as f64
    };
    let pct_in = if inliers == 0 {
        0.0
    } else {
        100.0 * inliers_rejected as f64 / inliers as f64
    };
    (pct_out, pct_in)
}
