//! Pose graphs, relative-pose measurements, and their weighted residuals.

use nalgebra::{Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{is_so2, Pose2, SO2_TOL};

/// A relative-pose edge (i, j) with isotropic translation / rotation weights.
///
/// `omega_t` is the translation information (1/m^2), `omega_r` the rotation
/// concentration. The edge is odometric exactly when `to == from + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelPoseMeasurement {
    pub from: usize,
    pub to: usize,
    pub rotation: Matrix2<f64>,
    pub translation: Vector2<f64>,
    pub omega_t: f64,
    pub omega_r: f64,
}

impl RelPoseMeasurement {
    pub fn new(
        from: usize,
        to: usize,
        rotation: Matrix2<f64>,
        translation: Vector2<f64>,
        omega_t: f64,
        omega_r: f64,
    ) -> Result<Self> {
        if from == to {
            return Err(Error::InvalidMeasurement(format!(
                "self edge ({from}, {to})"
            )));
        }
        if !is_so2(&rotation, SO2_TOL) {
            return Err(Error::InvalidMeasurement(format!(
                "edge ({from}, {to}): rotation is not in SO(2)"
            )));
        }
        if !(omega_t > 0.0) || !(omega_r > 0.0) {
            return Err(Error::InvalidMeasurement(format!(
                "edge ({from}, {to}): weights must be positive (omega_t={omega_t}, omega_r={omega_r})"
            )));
        }
        Ok(Self {
            from,
            to,
            rotation,
            translation,
            omega_t,
            omega_r,
        })
    }

    pub fn from_pose(from: usize, to: usize, rel: &Pose2, omega_t: f64, omega_r: f64) -> Result<Self> {
        Self::new(from, to, rel.rotation, rel.translation, omega_t, omega_r)
    }

    /// Measured relative pose as a `Pose2`.
    pub fn pose(&self) -> Pose2 {
        Pose2 {
            rotation: self.rotation,
            translation: self.translation,
        }
    }

    pub fn is_odometry(&self) -> bool {
        self.to == self.from + 1
    }

    /// Homogeneous 3x3 form `[R t; 0 1]` of the measurement.
    pub fn homogeneous(&self) -> Matrix3<f64> {
        let mut h = Matrix3::identity();
        h.fixed_view_mut::<2, 2>(0, 0).copy_from(&self.rotation);
        h.fixed_view_mut::<2, 1>(0, 2).copy_from(&self.translation);
        h
    }

    /// Per-edge weight block `blkdiag(omega_r/2 * I_2, omega_t)`.
    pub fn omega(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.omega_r / 2.0,
            0.0,
            0.0,
            0.0,
            self.omega_r / 2.0,
            0.0,
            0.0,
            0.0,
            self.omega_t,
        )
    }
}

/// A correlation entry coupling the accept/reject decisions of two edges.
///
/// Indices refer to positions in [`PoseGraph::edges`]; both must be loop
/// closures. A positive weight rewards matching decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub edge_a: usize,
    pub edge_b: usize,
    pub weight: f64,
}

/// A 2-D pose graph: `num_nodes` poses, edges split structurally into an
/// odometry chain and loop closures, plus a correlation set over the latter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseGraph {
    pub num_nodes: usize,
    pub edges: Vec<RelPoseMeasurement>,
    pub correlation: Vec<Correlation>,
}

impl PoseGraph {
    pub fn new(
        num_nodes: usize,
        edges: Vec<RelPoseMeasurement>,
        correlation: Vec<Correlation>,
    ) -> Result<Self> {
        let graph = Self {
            num_nodes,
            edges,
            correlation,
        };
        graph.validate()?;
        Ok(graph)
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_nodes;
        for (k, e) in self.edges.iter().enumerate() {
            if e.from >= n || e.to >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge {k} references node outside [0, {n}): ({}, {})",
                    e.from, e.to
                )));
            }
        }
        // The odometry edges must form the chain 0-1-...-(n-1).
        let mut covered = vec![false; n.saturating_sub(1)];
        for e in &self.edges {
            if e.is_odometry() {
                covered[e.from] = true;
            }
        }
        if let Some(i) = covered.iter().position(|c| !c) {
            return Err(Error::InvalidGraph(format!(
                "odometry chain is broken: no edge ({i}, {})",
                i + 1
            )));
        }
        let (_, lc) = partition_edges(self);
        let is_lc = {
            let mut v = vec![false; self.edges.len()];
            for &e in &lc {
                v[e] = true;
            }
            v
        };
        let mut seen = std::collections::HashSet::new();
        for c in &self.correlation {
            if c.edge_a >= self.edges.len() || c.edge_b >= self.edges.len() {
                return Err(Error::InvalidGraph(format!(
                    "correlation references edge outside the graph: ({}, {})",
                    c.edge_a, c.edge_b
                )));
            }
            if c.edge_a == c.edge_b {
                return Err(Error::InvalidGraph(format!(
                    "correlation self-pair on edge {}",
                    c.edge_a
                )));
            }
            if !is_lc[c.edge_a] || !is_lc[c.edge_b] {
                return Err(Error::InvalidGraph(format!(
                    "correlation ({}, {}) references a non-loop-closure edge",
                    c.edge_a, c.edge_b
                )));
            }
            if c.weight < 0.0 {
                return Err(Error::InvalidGraph(format!(
                    "correlation ({}, {}) has negative weight {}",
                    c.edge_a, c.edge_b, c.weight
                )));
            }
            let key = (c.edge_a.min(c.edge_b), c.edge_a.max(c.edge_b));
            if !seen.insert(key) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate correlation pair ({}, {})",
                    key.0, key.1
                )));
            }
        }
        Ok(())
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of loop closures.
    pub fn num_loop_closures(&self) -> usize {
        self.edges.iter().filter(|e| !e.is_odometry()).count()
    }
}

/// Split edge indices into (odometry, loop closures), preserving input order.
pub fn partition_edges(graph: &PoseGraph) -> (Vec<usize>, Vec<usize>) {
    let mut od = Vec::new();
    let mut lc = Vec::new();
    for (k, e) in graph.edges.iter().enumerate() {
        if e.is_odometry() {
            od.push(k);
        } else {
            lc.push(k);
        }
    }
    (od, lc)
}

/// Weighted squared error of a measurement given the two pose estimates:
/// `omega_t * ||Ri' (tj - ti) - t_meas||^2 + omega_r/2 * ||Rj - Ri R_meas||_F^2`.
pub fn residual(ti: &Pose2, tj: &Pose2, m: &RelPoseMeasurement) -> f64 {
    let rt = ti.rotation.transpose();
    let dt = rt * (tj.translation - ti.translation) - m.translation;
    let dr = tj.rotation - ti.rotation * m.rotation;
    m.omega_t * dt.norm_squared() + 0.5 * m.omega_r * dr.norm_squared()
}

/// The same residual in its homogeneous trace form
/// `||Tj - Ti * T_meas||^2_Omega` with `||M||^2_Omega = trace(M Omega M')`.
pub fn residual_homogeneous(ti: &Pose2, tj: &Pose2, m: &RelPoseMeasurement) -> f64 {
    // Ti as a 2x3 block times the homogeneous 3x3 measurement.
    let block = |p: &Pose2| {
        let mut b = nalgebra::Matrix2x3::zeros();
        b.fixed_view_mut::<2, 2>(0, 0).copy_from(&p.rotation);
        b.fixed_view_mut::<2, 1>(0, 2).copy_from(&p.translation);
        b
    };
    let diff = block(tj) - block(ti) * m.homogeneous();
    (diff * m.omega() * diff.transpose()).trace()
}

/// Maximum admissible residuals for the truncated cost.
///
/// `cbar_t` bounds the translation residual (meters), `cbar_r` the rotation
/// residual in Frobenius units. The combined per-edge threshold is
/// `omega_t * cbar_t^2 + omega_r/2 * cbar_r^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustParams {
    pub cbar_t: f64,
    pub cbar_r: f64,
}

impl RobustParams {
    pub fn new(cbar_t: f64, cbar_r: f64) -> Result<Self> {
        if !(cbar_t > 0.0) || !(cbar_r > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "admissible residuals must be positive (cbar_t={cbar_t}, cbar_r={cbar_r})"
            )));
        }
        Ok(Self { cbar_t, cbar_r })
    }

    /// Thresholds at `p` standard deviations of the measurement noise.
    ///
    /// `cbar_t = p * sigma_t`; the rotation bound maps an angle of
    /// `p * sigma_r` to Frobenius units via `||R(e) - I||_F ~= sqrt(2) e`.
    pub fn at_sigma(p: f64, sigma_t: f64, sigma_r: f64) -> Result<Self> {
        Self::new(p * sigma_t, p * std::f64::consts::SQRT_2 * sigma_r)
    }

    /// Combined threshold for an edge with the given weights.
    pub fn cbar(&self, omega_t: f64, omega_r: f64) -> f64 {
        omega_t * self.cbar_t * self.cbar_t + 0.5 * omega_r * self.cbar_r * self.cbar_r
    }

    /// Combined threshold for a specific edge.
    pub fn cbar_for(&self, m: &RelPoseMeasurement) -> f64 {
        self.cbar(m.omega_t, m.omega_r)
    }
}
