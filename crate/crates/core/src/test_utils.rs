//! Small random problem instances shared by unit, integration, and
//! acceptance tests. Not part of the stable API.

use nalgebra::Vector2;
use rand::Rng;

use crate::graph::{Correlation, PoseGraph, RelPoseMeasurement, RobustParams};
use crate::pose::{rot2, Pose2};

/// A randomly generated evaluation point: a valid graph, ground-truth poses,
/// a generic (off-truth) pose assignment, labels, and thresholds.
pub struct RandomInstance {
    pub graph: PoseGraph,
    pub gt_poses: Vec<Pose2>,
    pub poses: Vec<Pose2>,
    pub thetas: Vec<i8>,
    pub params: RobustParams,
}

impl RandomInstance {
    pub fn noiseless_poses(&self) -> Vec<Pose2> {
        self.gt_poses.clone()
    }

    /// Same topology and weights, measurements exactly consistent with the
    /// ground-truth poses.
    pub fn noiseless_graph(&self) -> PoseGraph {
        let edges = self
            .graph
            .edges
            .iter()
            .map(|e| {
                let rel = self.gt_poses[e.from].between(&self.gt_poses[e.to]);
                RelPoseMeasurement::from_pose(e.from, e.to, &rel, e.omega_t, e.omega_r).unwrap()
            })
            .collect();
        PoseGraph::new(self.graph.num_nodes, edges, self.graph.correlation.clone()).unwrap()
    }
}

/// Random instance with `n` nodes and `ell` loop closures. Measurements are
/// ground-truth relative poses with generic perturbations; evaluation poses
/// are drawn independently of the truth.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, ell: usize, with_corr: bool) -> RandomInstance {
    assert!(n >= 2);
    let random_pose = |rng: &mut R| {
        Pose2::from_xy_theta(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.1..3.1),
        )
    };
    let gt_poses: Vec<Pose2> = (0..n).map(|_| random_pose(rng)).collect();
    let poses: Vec<Pose2> = (0..n).map(|_| random_pose(rng)).collect();

    let mut edges = Vec::new();
    let perturbed = |rng: &mut R, from: usize, to: usize| {
        let rel = gt_poses[from].between(&gt_poses[to]);
        let noisy = Pose2::from_xy_theta(
            rel.x() + rng.gen_range(-0.3..0.3),
            rel.y() + rng.gen_range(-0.3..0.3),
            rel.angle() + rng.gen_range(-0.2..0.2),
        );
        RelPoseMeasurement::from_pose(
            from,
            to,
            &noisy,
            rng.gen_range(0.2..5.0),
            rng.gen_range(0.2..5.0),
        )
        .unwrap()
    };
    for i in 0..n - 1 {
        let e = perturbed(rng, i, i + 1);
        edges.push(e);
    }
    for _ in 0..ell {
        let (from, to) = loop {
            let from = rng.gen_range(0..n);
            let to = rng.gen_range(0..n);
            if from != to && to != from + 1 {
                break (from, to);
            }
        };
        edges.push(perturbed(rng, from, to));
    }

    let mut correlation = Vec::new();
    if with_corr && ell >= 2 {
        let lc_base = n - 1;
        let mut seen = std::collections::HashSet::new();
        let tries = rng.gen_range(1..=ell);
        for _ in 0..tries {
            let a = rng.gen_range(0..ell);
            let b = rng.gen_range(0..ell);
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if seen.insert(key) {
                correlation.push(Correlation {
                    edge_a: lc_base + key.0,
                    edge_b: lc_base + key.1,
                    weight: rng.gen_range(0.0..0.5),
                });
            }
        }
    }

    let graph = PoseGraph::new(n, edges, correlation).unwrap();
    let thetas: Vec<i8> = (0..ell).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
    let params = RobustParams::new(rng.gen_range(0.2..1.5), rng.gen_range(0.2..1.5)).unwrap();
    RandomInstance {
        graph,
        gt_poses,
        poses,
        thetas,
        params,
    }
}

/// Residual level at which a probe loop closure's optimal label flips when
/// `weights.len()` correlated neighbors are pinned to `neighbor_label`.
/// Returns `(flip_residual, cbar, sum_of_weights)`; the flip is located by
/// bisection on the probe measurement's translation error.
pub fn star_flip_residual<R: Rng>(
    weights: &[f64],
    neighbor_label: i8,
    rng: &mut R,
) -> (f64, f64, f64) {
    use crate::model::objective_sum;

    let k = weights.len();
    let params = RobustParams::new(rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5)).unwrap();
    let poses = vec![
        Pose2::identity(),
        Pose2::from_xy_theta(1.0, 0.0, 0.0),
        Pose2::from_xy_theta(2.0, 0.0, 0.0),
    ];
    let mk_edge = |from: usize, to: usize, dx: f64| {
        RelPoseMeasurement::new(from, to, rot2(0.0), Vector2::new(dx, 0.0), 1.0, 1.0).unwrap()
    };
    let build = |delta: f64| {
        let mut edges = vec![mk_edge(0, 1, 1.0), mk_edge(1, 2, 1.0)];
        edges.push(mk_edge(0, 2, 2.0 + delta)); // probe
        for _ in 0..k {
            edges.push(mk_edge(0, 2, 2.0)); // exact neighbors
        }
        let corr = (0..k)
            .map(|i| Correlation {
                edge_a: 2,
                edge_b: 3 + i,
                weight: weights[i],
            })
            .collect();
        PoseGraph::new(3, edges, corr).unwrap()
    };
    let decision = |delta: f64| -> i8 {
        let graph = build(delta);
        let mut thetas = vec![neighbor_label; k + 1];
        thetas[0] = 1;
        let accept = objective_sum(&graph, &poses, &thetas, &params);
        thetas[0] = -1;
        let reject = objective_sum(&graph, &poses, &thetas, &params);
        if accept <= reject {
            1
        } else {
            -1
        }
    };
    let cbar = params.cbar(1.0, 1.0);
    let wsum: f64 = weights.iter().sum();
    let mut lo = 0.0;
    let mut hi = (cbar + 2.0 * wsum).sqrt() * 4.0 + 1.0;
    assert_eq!(decision(lo), 1, "probe must start accepted");
    assert_eq!(decision(hi), -1, "probe must end rejected");
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if decision(mid) == 1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let delta = 0.5 * (lo + hi);
    let graph = build(delta);
    let probe = &graph.edges[2];
    let res = crate::graph::residual(&poses[0], &poses[2], probe);
    (res, cbar, wsum)
}
