//! First-order solver for the convex relaxation of the lifted problem:
//! minimize `trace(QZ) + sum_e trace(U_e Z W_e Z)` over the intersection of
//! the PSD cone with the affine block constraints (orthonormal pose corners,
//! identity label diagonals, isotropic label cross blocks).
//!
//! The solver is a consensus splitting: one copy of the variable lives in
//! the affine set, one in the PSD cone, and the smooth objective enters the
//! consensus update through a linearized proximal (gradient) step with step
//! size 1/L, L estimated by power iteration on the quadratic form. No
//! initial guess is required; iteration starts from the projection of zero.

use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{BlockLayout, DcgmProblem, DIM};

/// Relative eigenvalue threshold used for numerical rank decisions.
pub const RANK_REL_TOL: f64 = 1e-3;

/// Options for [`solve_sdp`].
#[derive(Debug, Clone)]
pub struct SdpOptions {
    pub max_iters: usize,
    /// Feasibility tolerance, Frobenius and relative to `||Z||_F + 1`.
    pub tol_feas: f64,
    /// Relative objective-change tolerance.
    pub tol_obj: f64,
    /// Initial consensus penalty.
    pub rho: f64,
    /// Residual-balancing cadence in iterations.
    pub adapt_every: usize,
    /// Rebalance when the primal/dual residual ratio exceeds this.
    pub adapt_ratio: f64,
    /// Sequential reductions for bitwise-reproducible runs.
    pub deterministic: bool,
    /// Per-iteration trace (iter, objective, primal_res, affine_res).
    pub trace_csv: Option<PathBuf>,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            tol_feas: 1e-6,
            tol_obj: 1e-7,
            rho: 1.0,
            adapt_every: 25,
            adapt_ratio: 10.0,
            deterministic: true,
            trace_csv: None,
        }
    }
}

/// Solution of the relaxation.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// Symmetric PSD matrix, affine-feasible within `affine_residual`.
    pub z: DMatrix<f64>,
    /// Objective value at `z`; a lower bound for the unrelaxed problem.
    pub objective: f64,
    pub primal_residual: f64,
    pub affine_residual: f64,
    pub iterations: usize,
    pub numerical_rank: usize,
    /// Eigenvalues of `z`, descending.
    pub eigenvalues: Vec<f64>,
    /// False when the iteration cap was reached before the tolerances.
    pub converged: bool,
}

/// Nearest PSD matrix in Frobenius norm: eigenvalues clamped at zero.
pub fn project_psd(s: &DMatrix<f64>) -> DMatrix<f64> {
    project_psd_with_eigs(s).0
}

fn project_psd_with_eigs(s: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let eig = s.clone().symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    // Columns scaled by the clamped eigenvalues, then recombined.
    let mut scaled = eig.eigenvectors.clone();
    for (c, v) in vals.iter().enumerate() {
        let clamped = v.max(0.0);
        scaled.column_mut(c).scale_mut(clamped);
    }
    let z = scaled * eig.eigenvectors.transpose();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for v in vals.iter_mut() {
        *v = v.max(0.0);
    }
    (z, vals)
}

/// Projection onto the affine constraint set: fixed blocks overwritten,
/// label cross blocks replaced by `(trace/d) I`, everything else untouched.
pub fn project_affine(s: &DMatrix<f64>, layout: &BlockLayout) -> DMatrix<f64> {
    let mut z = s.clone();
    project_affine_mut(&mut z, layout);
    z
}

pub(crate) fn project_affine_mut(z: &mut DMatrix<f64>, layout: &BlockLayout) {
    for i in 0..layout.n {
        let off = layout.pose_offset(i);
        z[(off, off)] = 1.0;
        z[(off + 1, off + 1)] = 1.0;
        z[(off, off + 1)] = 0.0;
        z[(off + 1, off)] = 0.0;
    }
    // Label blocks followed by the anchor block.
    let blocks: Vec<usize> = (0..layout.ell)
        .map(|e| layout.theta_offset(e))
        .chain(std::iter::once(layout.anchor_offset()))
        .collect();
    for &off in &blocks {
        z[(off, off)] = 1.0;
        z[(off + 1, off + 1)] = 1.0;
        z[(off, off + 1)] = 0.0;
        z[(off + 1, off)] = 0.0;
    }
    for (ai, &a) in blocks.iter().enumerate() {
        for &b in blocks.iter().skip(ai + 1) {
            let m = 0.5 * (z[(a, b)] + z[(a + 1, b + 1)]);
            z[(a, b)] = m;
            z[(a + 1, b + 1)] = m;
            z[(a, b + 1)] = 0.0;
            z[(a + 1, b)] = 0.0;
            let m2 = 0.5 * (z[(b, a)] + z[(b + 1, a + 1)]);
            z[(b, a)] = m2;
            z[(b + 1, a + 1)] = m2;
            z[(b, a + 1)] = 0.0;
            z[(b + 1, a)] = 0.0;
        }
    }
}

/// Count of eigenvalues above `rel_tol * lambda_max`; zero for a zero matrix.
pub fn numerical_rank(z: &DMatrix<f64>, rel_tol: f64) -> usize {
    let eig = z.symmetric_eigenvalues();
    rank_from_eigenvalues(eig.as_slice(), rel_tol)
}

pub fn rank_from_eigenvalues(eigenvalues: &[f64], rel_tol: f64) -> usize {
    let lambda_max = eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    if !(lambda_max > 0.0) {
        return 0;
    }
    eigenvalues
        .iter()
        .filter(|&&v| v > rel_tol * lambda_max)
        .count()
}

/// Feasible starting point: projection of the zero matrix onto the affine
/// set (identity on every fixed block).
fn affine_base(layout: &BlockLayout) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(layout.dim(), layout.dim());
    project_affine_mut(&mut z, layout);
    z
}

/// Largest eigenvalue of the quadratic form's Hessian operator
/// `S -> sum_e (U_e S W_e + W_e S U_e)`, by power iteration from a fixed
/// pseudo-random symmetric start.
fn estimate_lipschitz(problem: &DcgmProblem) -> f64 {
    if problem.loop_terms.is_empty() {
        return 0.0;
    }
    let dim = problem.layout.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let mut s = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    s = 0.5 * (&s + s.transpose());
    let mut norm = s.norm();
    if norm == 0.0 {
        return 0.0;
    }
    s /= norm;
    for _ in 0..50 {
        let mut t = DMatrix::zeros(dim, dim);
        problem.add_quad_grad(&s, &mut t);
        norm = t.norm();
        if norm < 1e-300 {
            return 0.0;
        }
        s = t / norm;
    }
    norm
}

/// Solve the relaxation. Returns a PSD matrix whose affine violation is at
/// most the achieved feasibility residual, with eigenvalues and numerical
/// rank of the reported iterate. An iteration-cap exit is flagged via
/// `converged = false` rather than treated as an error, so callers can still
/// round the best feasible-projected iterate.
pub fn solve_sdp(problem: &DcgmProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    let layout = problem.layout;
    let dim = layout.dim();
    let mut trace_out = match &opts.trace_csv {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "iter,objective,primal_res,affine_res")?;
            Some(w)
        }
        None => None,
    };

    let lipschitz = estimate_lipschitz(problem);
    let mut tau = 1.05 * lipschitz;
    if tau < 1e-9 {
        tau = 1.0;
    }
    let mut rho = opts.rho;

    let mut y = affine_base(&layout);
    let mut u_aff = DMatrix::zeros(dim, dim);
    let mut u_psd = DMatrix::zeros(dim, dim);
    let mut prev_obj = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut primal_residual = f64::INFINITY;

    for k in 0..opts.max_iters {
        iterations = k + 1;

        let mut z_aff = &y - &u_aff;
        project_affine_mut(&mut z_aff, &layout);
        let (z_psd, _) = project_psd_with_eigs(&(&y - &u_psd));

        // Linearized proximal consensus step on the smooth objective.
        let grad = problem.objective_trace_grad(&y);
        let mut y_new = tau * &y;
        y_new -= &grad;
        y_new += rho * (&z_aff + &u_aff + &z_psd + &u_psd);
        y_new /= tau + 2.0 * rho;

        u_aff += &z_aff - &y_new;
        u_psd += &z_psd - &y_new;

        let y_norm = y_new.norm() + 1.0;
        let primal = ((&z_aff - &y_new).norm()).max((&z_psd - &y_new).norm()) / y_norm;
        let dual = rho * (&y_new - &y).norm() / y_norm;
        let affine_gap = {
            let proj = project_affine(&z_psd, &layout);
            (&z_psd - &proj).norm() / (z_psd.norm() + 1.0)
        };
        let obj = problem
            .objective_trace(&z_psd)
            .expect("iterate has the problem dimension");
        if !obj.is_finite() || !primal.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite values at iteration {k}"
            )));
        }
        if let Some(w) = trace_out.as_mut() {
            writeln!(w, "{k},{obj},{primal},{affine_gap}")?;
        }

        primal_residual = primal.max(affine_gap);
        let obj_change = (obj - prev_obj).abs() / (1.0 + obj.abs());
        prev_obj = obj;
        y = y_new;

        if primal_residual <= opts.tol_feas && obj_change <= opts.tol_obj {
            converged = true;
            break;
        }

        if opts.adapt_every > 0 && (k + 1) % opts.adapt_every == 0 && dual.is_finite() {
            if primal > opts.adapt_ratio * dual && rho < 1e6 {
                rho *= 2.0;
                u_aff /= 2.0;
                u_psd /= 2.0;
            } else if dual > opts.adapt_ratio * primal && rho > 1e-6 {
                rho /= 2.0;
                u_aff *= 2.0;
                u_psd *= 2.0;
            }
        }
    }

    // Report the feasible-projected consensus iterate.
    let mut z_star = y;
    project_affine_mut(&mut z_star, &layout);
    let (z_star, eigenvalues) = project_psd_with_eigs(&z_star);
    let affine_residual = {
        let proj = project_affine(&z_star, &layout);
        (&z_star - &proj).norm() / (z_star.norm() + 1.0)
    };
    let objective = problem
        .objective_trace(&z_star)
        .expect("projected iterate has the problem dimension");
    if !objective.is_finite() {
        return Err(Error::Diverged("non-finite final objective".into()));
    }
    let numerical_rank = rank_from_eigenvalues(&eigenvalues, RANK_REL_TOL);
    Ok(SdpSolution {
        z: z_star,
        objective,
        primal_residual,
        affine_residual,
        iterations,
        numerical_rank,
        eigenvalues,
        converged,
    })
}

/// Sanity guard used by tests: `z` satisfies every block constraint within
/// `tol` and is PSD within `tol * lambda_max`.
#[doc(hidden)]
pub fn assert_feasible(z: &DMatrix<f64>, layout: &BlockLayout, tol: f64) {
    let proj = project_affine(z, layout);
    let gap = (z - &proj).norm();
    assert!(gap <= tol * (z.norm() + 1.0), "affine violation {gap}");
    let eig = z.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max).max(0.0);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    assert!(min >= -tol * (max + 1.0), "PSD violation: min eigenvalue {min}");
    let _ = DIM;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::embed_x;
    use crate::test_utils::random_instance;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn psd_projection_fixes_psd_input() {
        let mut rng = StdRng::seed_from_u64(1);
        let a = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let p = &a * a.transpose();
        let q = project_psd(&p);
        assert!((p - q).norm() <= 1e-12 * 10.0);
    }

    #[test]
    fn psd_projection_clamps_negative_eigenvalues() {
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        let p = project_psd(&s);
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]));
        assert_relative_eq!(p, expected, epsilon = 1e-12);
    }

    #[test]
    fn psd_projection_is_nearest_on_2x2() {
        // Compare against a search over PSD 2x2 matrices parametrized by
        // eigenvalues and rotation angle, refined around the best cell.
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..5 {
            let s_sym = {
                let a = rng.gen_range(-2.0..2.0);
                let b = rng.gen_range(-2.0..2.0);
                let c = rng.gen_range(-2.0..2.0);
                DMatrix::from_row_slice(2, 2, &[a, b, b, c])
            };
            let proj = project_psd(&s_sym);
            let d_proj = (&s_sym - &proj).norm();
            let mut best = f64::INFINITY;
            let steps = 60;
            for ia in 0..steps {
                let phi = std::f64::consts::PI * ia as f64 / steps as f64;
                let (sn, cs) = phi.sin_cos();
                let v = DMatrix::from_row_slice(2, 2, &[cs, -sn, sn, cs]);
                for l1 in 0..steps {
                    for l2 in 0..steps {
                        let lam1 = 4.0 * l1 as f64 / steps as f64;
                        let lam2 = 4.0 * l2 as f64 / steps as f64;
                        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                            lam1, lam2,
                        ]));
                        let p = &v * d * v.transpose();
                        best = best.min((&s_sym - p).norm());
                    }
                }
            }
            assert!(
                d_proj <= best + 5e-2,
                "projection distance {d_proj} vs search {best}"
            );
        }
    }

    #[test]
    fn affine_projection_examples() {
        let layout = BlockLayout::new(1, 1);
        let dim = layout.dim();
        let mut s = DMatrix::zeros(dim, dim);
        // Label diagonal block gets overwritten with I.
        let t = layout.theta_offset(0);
        s[(t, t)] = 9.0;
        // A label-anchor cross block [[2,1],[0,4]] projects to 3 I.
        let a = layout.anchor_offset();
        s[(t, a)] = 2.0;
        s[(t, a + 1)] = 1.0;
        s[(t + 1, a)] = 0.0;
        s[(t + 1, a + 1)] = 4.0;
        // Pose block: rotation corner forced to I, translation row kept.
        s[(0, 0)] = 5.0;
        s[(0, 2)] = 7.0;
        s[(2, 2)] = 11.0;
        let z = project_affine(&s, &layout);
        assert_eq!(z[(t, t)], 1.0);
        assert_eq!(z[(t + 1, t + 1)], 1.0);
        assert_eq!(z[(t, a)], 3.0);
        assert_eq!(z[(t + 1, a + 1)], 3.0);
        assert_eq!(z[(t, a + 1)], 0.0);
        assert_eq!(z[(0, 0)], 1.0);
        assert_eq!(z[(0, 1)], 0.0);
        assert_eq!(z[(0, 2)], 7.0); // unconstrained "*" entry
        assert_eq!(z[(2, 2)], 11.0); // translation norm entry untouched
    }

    #[test]
    fn projections_are_idempotent_and_fix_feasible_points() {
        let mut rng = StdRng::seed_from_u64(3);
        let inst = random_instance(&mut rng, 4, 3, true);
        let layout = BlockLayout::new(4, 3);
        let (_, z) = embed_x(&inst.poses, &inst.thetas, &layout);
        let p = project_affine(&z, &layout);
        assert!((&z - &p).norm() <= 1e-12);
        let dim = layout.dim();
        let s = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let s = 0.5 * (&s + s.transpose());
        let p1 = project_affine(&s, &layout);
        let p2 = project_affine(&p1, &layout);
        assert!((&p1 - &p2).norm() <= 1e-12);
        let q1 = project_psd(&s);
        let q2 = project_psd(&q1);
        assert!((&q1 - &q2).norm() <= 1e-12 * (q1.norm() + 1.0));
    }

    #[test]
    fn rank_thresholding() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(numerical_rank(&i3, RANK_REL_TOL), 3);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 5e-4, 0.0]));
        assert_eq!(numerical_rank(&d, 1e-3), 1);
        let zero = DMatrix::<f64>::zeros(4, 4);
        assert_eq!(numerical_rank(&zero, 1e-3), 0);
        let mut rng = StdRng::seed_from_u64(4);
        let inst = random_instance(&mut rng, 5, 2, false);
        let layout = BlockLayout::new(5, 2);
        let (_, z) = embed_x(&inst.poses, &inst.thetas, &layout);
        assert_eq!(numerical_rank(&z, RANK_REL_TOL), DIM);
    }

    #[test]
    fn smooth_objective_is_convex_on_psd_pairs() {
        let mut rng = StdRng::seed_from_u64(5);
        let inst = random_instance(&mut rng, 4, 3, true);
        let problem = DcgmProblem::build(&inst.graph, &inst.params).unwrap();
        let dim = problem.layout.dim();
        for _ in 0..20 {
            let a = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
            let b = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
            let z1 = &a * a.transpose();
            let z2 = &b * b.transpose();
            let mid = 0.5 * (&z1 + &z2);
            let f1 = problem.objective_trace(&z1).unwrap();
            let f2 = problem.objective_trace(&z2).unwrap();
            let fm = problem.objective_trace(&mid).unwrap();
            let tol = 1e-9 * (f1.abs() + f2.abs() + 1.0);
            assert!(fm <= 0.5 * f1 + 0.5 * f2 + tol);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = StdRng::seed_from_u64(6);
        // n = 4, ell = 3 gives a 20x20 problem.
        let inst = random_instance(&mut rng, 4, 3, true);
        let problem = DcgmProblem::build(&inst.graph, &inst.params).unwrap();
        let dim = problem.layout.dim();
        assert_eq!(dim, 20);
        let s = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let z = 0.5 * (&s + s.transpose());
        let grad = problem.objective_trace_grad(&z);
        let h = 1e-6;
        for _ in 0..40 {
            let i = rng.gen_range(0..dim);
            let j = rng.gen_range(0..dim);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[(i, j)] += h;
            zm[(i, j)] -= h;
            if i != j {
                zp[(j, i)] += h;
                zm[(j, i)] -= h;
            }
            let fd = (problem.objective_trace(&zp).unwrap()
                - problem.objective_trace(&zm).unwrap())
                / (2.0 * h);
            let analytic = if i == j {
                grad[(i, i)]
            } else {
                grad[(i, j)] + grad[(j, i)]
            };
            let denom = analytic.abs().max(1.0);
            assert!(
                (fd - analytic).abs() / denom <= 1e-5,
                "entry ({i},{j}): fd {fd} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let mut rng = StdRng::seed_from_u64(7);
        let inst = random_instance(&mut rng, 3, 1, false);
        let problem = DcgmProblem::build(&inst.noiseless_graph(), &inst.params).unwrap();
        let opts = SdpOptions {
            max_iters: 300,
            ..SdpOptions::default()
        };
        let a = solve_sdp(&problem, &opts).unwrap();
        let b = solve_sdp(&problem, &opts).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.z.as_slice(), b.z.as_slice());
    }

    #[test]
    fn objective_lower_bounds_feasible_points() {
        let mut rng = StdRng::seed_from_u64(8);
        let inst = random_instance(&mut rng, 4, 2, true);
        let problem = DcgmProblem::build(&inst.graph, &inst.params).unwrap();
        let sol = solve_sdp(&problem, &SdpOptions::default()).unwrap();
        assert!(sol.converged, "small instance should converge");
        for _ in 0..100 {
            let poses: Vec<crate::pose::Pose2> = (0..4)
                .map(|_| {
                    crate::pose::Pose2::from_xy_theta(
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.1..3.1),
                    )
                })
                .collect();
            let thetas: Vec<i8> = (0..2).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
            let (_, z) = embed_x(&poses, &thetas, &problem.layout);
            let value = problem.objective_trace(&z).unwrap();
            assert!(
                sol.objective <= value + 1e-5 * (value.abs() + 1.0),
                "lower bound {} above feasible value {value}",
                sol.objective
            );
        }
    }

    #[test]
    fn solution_is_feasible_within_tolerance() {
        let mut rng = StdRng::seed_from_u64(9);
        let inst = random_instance(&mut rng, 4, 2, false);
        let problem = DcgmProblem::build(&inst.graph, &inst.params).unwrap();
        let sol = solve_sdp(&problem, &SdpOptions::default()).unwrap();
        assert!(sol.affine_residual <= 1e-5);
        assert_feasible(&sol.z, &problem.layout, 1e-4);
        // Eigenvalues are reported descending.
        for w in sol.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }
}
