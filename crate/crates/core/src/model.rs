//! The discrete-continuous objective, in sum form and in matrix form.
//!
//! The sum form evaluates, for poses `T_i` and labels `theta_e` in {-1,+1},
//!
//! ```text
//!   sum_od  ||res||^2_Omega
//! + sum_lc  (1+theta)/2 ||res||^2_Omega + (1-theta)/2 cbar
//! - sum_C   w * theta_e * theta_e'
//! ```
//!
//! The matrix form lifts `X = [T_1..T_n | theta_1 I .. theta_l I | I]` and
//! evaluates `trace(Q Z) + sum_e trace(U_e Z W_e Z)` at `Z = X'X`, which
//! equals the sum form minus the constant `sum_lc cbar/2` dropped when the
//! labels are moved inside the norms. The equivalence is pinned by tests and
//! is the correctness anchor for every block formula in this module.

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Matrix3x2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{partition_edges, residual, PoseGraph, RelPoseMeasurement, RobustParams};
use crate::pose::Pose2;

/// Spatial dimension; the crate implements the planar case.
pub const DIM: usize = 2;
/// Side of one pose block in the lifted variable: d + 1.
pub const POSE_BLOCK: usize = DIM + 1;

/// Per-loop-closure accept/reject labels, each -1 or +1.
pub type Labeling = Vec<i8>;

/// Truncated least-squares cost: `x^2` inside `|x| <= c`, else `c^2`.
pub fn tls(x: f64, c: f64) -> f64 {
    if x.abs() <= c {
        x * x
    } else {
        c * c
    }
}

/// Truncated least squares through its binary reformulation:
/// `min_theta (1+theta)/2 x^2 + (1-theta)/2 c^2`, returning the minimizer.
/// Ties at the boundary break toward acceptance (theta = +1).
pub fn tls_theta(x: f64, c: f64) -> (f64, i8) {
    let quad = x * x;
    let sat = c * c;
    if quad <= sat {
        (quad, 1)
    } else {
        (sat, -1)
    }
}

/// Ising energy `-sum_i c_i theta_i - sum_ij c_ij theta_i theta_j`.
///
/// `thetas` holds values in {-1,+1}; `unary` and `pairs` index into it.
pub fn ising_energy(thetas: &[i8], unary: &[(usize, f64)], pairs: &[(usize, usize, f64)]) -> f64 {
    let mut e = 0.0;
    for &(i, c) in unary {
        e -= c * f64::from(thetas[i]);
    }
    for &(i, j, c) in pairs {
        e -= c * f64::from(thetas[i]) * f64::from(thetas[j]);
    }
    e
}

/// Full objective in sum form. `thetas` has one entry per loop closure, in
/// the order loop closures appear in the edge list.
pub fn objective_sum(
    graph: &PoseGraph,
    poses: &[Pose2],
    thetas: &[i8],
    params: &RobustParams,
) -> f64 {
    let (od, lc) = partition_edges(graph);
    assert_eq!(thetas.len(), lc.len(), "one label per loop closure");
    let mut value = 0.0;
    for &k in &od {
        let e = &graph.edges[k];
        value += residual(&poses[e.from], &poses[e.to], e);
    }
    let mut lc_pos = vec![usize::MAX; graph.edges.len()];
    for (slot, &k) in lc.iter().enumerate() {
        let e = &graph.edges[k];
        let r = residual(&poses[e.from], &poses[e.to], e);
        let cbar = params.cbar_for(e);
        let th = f64::from(thetas[slot]);
        value += 0.5 * (1.0 + th) * r + 0.5 * (1.0 - th) * cbar;
        lc_pos[k] = slot;
    }
    for c in &graph.correlation {
        let (a, b) = (lc_pos[c.edge_a], lc_pos[c.edge_b]);
        value -= c.weight * f64::from(thetas[a]) * f64::from(thetas[b]);
    }
    value
}

/// Block layout of the lifted variable: `n` pose blocks of side 3, then
/// `ell` label blocks of side 2, then one 2-wide anchor block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockLayout {
    pub n: usize,
    pub ell: usize,
}

impl BlockLayout {
    pub fn new(n: usize, ell: usize) -> Self {
        Self { n, ell }
    }

    /// Total side length: `n(d+1) + d*ell + d`.
    pub fn dim(&self) -> usize {
        POSE_BLOCK * self.n + DIM * self.ell + DIM
    }

    pub fn pose_offset(&self, i: usize) -> usize {
        debug_assert!(i < self.n);
        POSE_BLOCK * i
    }

    pub fn theta_offset(&self, e: usize) -> usize {
        debug_assert!(e < self.ell);
        POSE_BLOCK * self.n + DIM * e
    }

    pub fn anchor_offset(&self) -> usize {
        POSE_BLOCK * self.n + DIM * self.ell
    }
}

/// One loop closure's quadratic coupling term, kept in block-sparse form.
///
/// The dense pair would be `U_e = 1/4 * blkdiag(L(G_e), 0, 0)` and
/// `W_e = v_e' v_e` with `v_e` carrying `I_2` at the label block and at the
/// anchor block; only the three distinct 3x3 blocks of the single-edge
/// connection Laplacian are stored.
#[derive(Debug, Clone)]
pub struct LoopTerm {
    /// Loop-closure slot (0-based position among loop closures).
    pub lc: usize,
    pub from: usize,
    pub to: usize,
    pub b_ff: Matrix3<f64>,
    pub b_ft: Matrix3<f64>,
    pub b_tt: Matrix3<f64>,
}

impl LoopTerm {
    fn new(lc: usize, m: &RelPoseMeasurement) -> Self {
        let t = m.homogeneous();
        let om = m.omega();
        // Single-edge connection Laplacian blocks, scaled by 1/4 so that
        // sum_e trace(U_e Z W_e Z) matches the (1+theta)/2 data terms.
        Self {
            lc,
            from: m.from,
            to: m.to,
            b_ff: 0.25 * t * om * t.transpose(),
            b_ft: -0.25 * t * om,
            b_tt: 0.25 * om,
        }
    }
}

/// Assembled matrix form: cost matrix, per-loop-closure coupling terms, and
/// the constants needed to recover the sum-form value.
#[derive(Debug, Clone)]
pub struct DcgmProblem {
    pub layout: BlockLayout,
    /// Dense symmetric cost matrix of side `layout.dim()`.
    pub q: DMatrix<f64>,
    pub loop_terms: Vec<LoopTerm>,
    /// Combined threshold per loop closure.
    pub cbars: Vec<f64>,
    /// Correlation coefficients over loop-closure slots.
    pub corr: Vec<(usize, usize, f64)>,
    /// Graph edge index of each loop-closure slot.
    pub lc_edges: Vec<usize>,
}

/// Connection Laplacian `A Omega A'` of the given edges over `n` nodes,
/// returned dense with one 3x3 block per node pair that an edge touches.
pub fn connection_laplacian(edges: &[RelPoseMeasurement], n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(POSE_BLOCK * n, POSE_BLOCK * n);
    for m in edges {
        let t = m.homogeneous();
        let om = m.omega();
        let (i, j) = (POSE_BLOCK * m.from, POSE_BLOCK * m.to);
        add_block3(&mut l, i, i, &(t * om * t.transpose()));
        add_block3(&mut l, i, j, &(-t * om));
        add_block3(&mut l, j, i, &(-om * t.transpose()));
        add_block3(&mut l, j, j, &om);
    }
    l
}

fn add_block3(m: &mut DMatrix<f64>, r: usize, c: usize, b: &Matrix3<f64>) {
    for (br, bc) in itertools_pairs(3) {
        m[(r + br, c + bc)] += b[(br, bc)];
    }
}

fn itertools_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |r| (0..n).map(move |c| (r, c)))
}

impl DcgmProblem {
    /// Assemble the matrix form of a graph under the given thresholds.
    pub fn build(graph: &PoseGraph, params: &RobustParams) -> Result<Self> {
        let (od, lc) = partition_edges(graph);
        let layout = BlockLayout::new(graph.num_nodes, lc.len());
        let dim = layout.dim();
        let mut q = DMatrix::zeros(dim, dim);

        // Odometry data terms live in the top-left pose area.
        let od_edges: Vec<RelPoseMeasurement> = od.iter().map(|&k| graph.edges[k]).collect();
        let l_od = connection_laplacian(&od_edges, graph.num_nodes);
        q.view_mut((0, 0), (POSE_BLOCK * graph.num_nodes, POSE_BLOCK * graph.num_nodes))
            .copy_from(&l_od);

        let mut lc_pos = vec![usize::MAX; graph.edges.len()];
        let mut cbars = Vec::with_capacity(lc.len());
        let mut loop_terms = Vec::with_capacity(lc.len());
        for (slot, &k) in lc.iter().enumerate() {
            let m = &graph.edges[k];
            lc_pos[k] = slot;
            cbars.push(params.cbar_for(m));
            loop_terms.push(LoopTerm::new(slot, m));
        }

        // Label-anchor coupling: -(cbar_e / 4d) I_d on both symmetric blocks.
        let anchor = layout.anchor_offset();
        for (slot, &cbar) in cbars.iter().enumerate() {
            let off = layout.theta_offset(slot);
            let v = -cbar / (4.0 * DIM as f64);
            for r in 0..DIM {
                q[(off + r, anchor + r)] = v;
                q[(anchor + r, off + r)] = v;
            }
        }

        // Correlation coupling: -(1/2d) N(C) with w I_d at both positions.
        let mut corr = Vec::with_capacity(graph.correlation.len());
        for c in &graph.correlation {
            let (a, b) = (lc_pos[c.edge_a], lc_pos[c.edge_b]);
            corr.push((a, b, c.weight));
            let v = -c.weight / (2.0 * DIM as f64);
            let (oa, ob) = (layout.theta_offset(a), layout.theta_offset(b));
            for r in 0..DIM {
                q[(oa + r, ob + r)] += v;
                q[(ob + r, oa + r)] += v;
            }
        }

        Ok(Self {
            layout,
            q,
            loop_terms,
            cbars,
            corr,
            lc_edges: lc,
        })
    }

    /// Constant dropped from the sum form: `sum_lc cbar_e / 2`.
    pub fn dropped_constant(&self) -> f64 {
        0.5 * self.cbars.iter().sum::<f64>()
    }

    /// Dense `U_e` and `W_e` for diagnostics and tests.
    pub fn loop_term_dense(&self, e: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let dim = self.layout.dim();
        let term = &self.loop_terms[e];
        let mut u = DMatrix::zeros(dim, dim);
        let (i, j) = (POSE_BLOCK * term.from, POSE_BLOCK * term.to);
        add_block3(&mut u, i, i, &term.b_ff);
        add_block3(&mut u, i, j, &term.b_ft);
        add_block3(&mut u, j, i, &term.b_ft.transpose());
        add_block3(&mut u, j, j, &term.b_tt);

        let mut v = DMatrix::zeros(DIM, dim);
        let (t_off, a_off) = (self.layout.theta_offset(e), self.layout.anchor_offset());
        for r in 0..DIM {
            v[(r, t_off + r)] = 1.0;
            v[(r, a_off + r)] = 1.0;
        }
        let w = v.transpose() * v;
        (u, w)
    }

    /// `trace(U_e Z W_e Z)` for one loop closure, exploiting block sparsity.
    fn loop_term_value(&self, term: &LoopTerm, z: &DMatrix<f64>) -> f64 {
        let (p, qq) = self.selector_pose_blocks(term, z);
        // trace([P Q] L [P Q]') over the edge's 2x2 block structure of L.
        (p * term.b_ff * p.transpose()).trace()
            + 2.0 * (p * term.b_ft * qq.transpose()).trace()
            + (qq * term.b_tt * qq.transpose()).trace()
    }

    /// Rows of `v_e Z` restricted to the two pose blocks the edge touches.
    fn selector_pose_blocks(
        &self,
        term: &LoopTerm,
        z: &DMatrix<f64>,
    ) -> (Matrix2x3<f64>, Matrix2x3<f64>) {
        let t_off = self.layout.theta_offset(term.lc);
        let a_off = self.layout.anchor_offset();
        let (fi, fj) = (POSE_BLOCK * term.from, POSE_BLOCK * term.to);
        let mut p = Matrix2x3::zeros();
        let mut qq = Matrix2x3::zeros();
        for r in 0..DIM {
            for c in 0..POSE_BLOCK {
                p[(r, c)] = z[(t_off + r, fi + c)] + z[(a_off + r, fi + c)];
                qq[(r, c)] = z[(t_off + r, fj + c)] + z[(a_off + r, fj + c)];
            }
        }
        (p, qq)
    }

    /// Smooth objective `trace(Q Z) + sum_e trace(U_e Z W_e Z)`.
    pub fn objective_trace(&self, z: &DMatrix<f64>) -> Result<f64> {
        let dim = self.layout.dim();
        if z.nrows() != dim || z.ncols() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: z.nrows(),
            });
        }
        let mut value = self.q.dot(z); // trace(QZ) for symmetric Q, Z
        for term in &self.loop_terms {
            value += self.loop_term_value(term, z);
        }
        Ok(value)
    }

    /// Gradient of the smooth objective on symmetric matrices:
    /// `Q + sum_e (U_e Z W_e + W_e Z U_e)`.
    pub fn objective_trace_grad(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = self.q.clone();
        self.add_quad_grad(z, &mut g);
        g
    }

    /// Adds `sum_e (U_e Z W_e + W_e Z U_e)` into `g`.
    pub(crate) fn add_quad_grad(&self, z: &DMatrix<f64>, g: &mut DMatrix<f64>) {
        let a_off = self.layout.anchor_offset();
        for term in &self.loop_terms {
            let t_off = self.layout.theta_offset(term.lc);
            let (fi, fj) = (POSE_BLOCK * term.from, POSE_BLOCK * term.to);
            let (p, qq) = self.selector_pose_blocks(term, z);
            // (U_e Z v_e') has nonzero rows only at the edge's pose blocks.
            let gi: Matrix3x2<f64> = term.b_ff * p.transpose() + term.b_ft * qq.transpose();
            let gj: Matrix3x2<f64> = term.b_ft.transpose() * p.transpose() + term.b_tt * qq.transpose();
            for (row_off, blk) in [(fi, &gi), (fj, &gj)] {
                for r in 0..POSE_BLOCK {
                    for c in 0..DIM {
                        let v = blk[(r, c)];
                        g[(row_off + r, t_off + c)] += v;
                        g[(row_off + r, a_off + c)] += v;
                        g[(t_off + c, row_off + r)] += v;
                        g[(a_off + c, row_off + r)] += v;
                    }
                }
            }
        }
    }

    /// Quadratic part `sum_e trace(U_e Z W_e Z)` alone.
    pub fn quad_value(&self, z: &DMatrix<f64>) -> f64 {
        self.loop_terms
            .iter()
            .map(|t| self.loop_term_value(t, z))
            .sum()
    }

    /// Diagnostic dump with dense row-major matrices.
    pub fn to_diagnostic_json(&self) -> serde_json::Value {
        let dense = |m: &DMatrix<f64>| -> Vec<f64> {
            let mut v = Vec::with_capacity(m.nrows() * m.ncols());
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    v.push(m[(r, c)]);
                }
            }
            v
        };
        let terms: Vec<serde_json::Value> = (0..self.loop_terms.len())
            .map(|e| {
                let (u, w) = self.loop_term_dense(e);
                serde_json::json!({
                    "edge": self.lc_edges[e],
                    "u": dense(&u),
                    "w": dense(&w),
                })
            })
            .collect();
        serde_json::json!({
            "n": self.layout.n,
            "ell": self.layout.ell,
            "dim": self.layout.dim(),
            "q": dense(&self.q),
            "cbars": self.cbars,
            "corr": self.corr,
            "loop_terms": terms,
        })
    }
}

/// Lift poses and labels into `X = [T | Theta | I]` and its Gram `Z = X'X`.
pub fn embed_x(poses: &[Pose2], thetas: &[i8], layout: &BlockLayout) -> (DMatrix<f64>, DMatrix<f64>) {
    assert_eq!(poses.len(), layout.n);
    assert_eq!(thetas.len(), layout.ell);
    let dim = layout.dim();
    let mut x = DMatrix::zeros(DIM, dim);
    for (i, p) in poses.iter().enumerate() {
        let off = layout.pose_offset(i);
        for r in 0..DIM {
            for c in 0..DIM {
                x[(r, off + c)] = p.rotation[(r, c)];
            }
            x[(r, off + DIM)] = p.translation[r];
        }
    }
    for (e, &th) in thetas.iter().enumerate() {
        let off = layout.theta_offset(e);
        for r in 0..DIM {
            x[(r, off + r)] = f64::from(th);
        }
    }
    let a_off = layout.anchor_offset();
    for r in 0..DIM {
        x[(r, a_off + r)] = 1.0;
    }
    let z = x.transpose() * &x;
    (x, z)
}
