//! Classical least-squares pose-graph optimization on a fixed edge set:
//! chordal initialization followed by damped Gauss-Newton. Used to refine
//! rounded solutions and to compute outlier-free reference trajectories.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::graph::{residual, PoseGraph, RelPoseMeasurement};
use crate::pose::{wrap_angle, Pose2};

/// Gauss-Newton settings.
#[derive(Debug, Clone)]
pub struct GnOptions {
    pub max_iters: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
    /// Step halvings allowed when the objective would increase.
    pub max_backtracks: u32,
}

impl Default for GnOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-9,
            max_backtracks: 20,
        }
    }
}

/// Chordal initialization: solve the relaxed linear system for the rotation
/// entries, project to SO(2), then solve the translation least squares with
/// rotations held fixed. Pose 0 anchors the gauge at the identity.
pub fn chordal_init(graph: &PoseGraph) -> Result<Vec<Pose2>> {
    let n = graph.num_nodes;
    if n == 0 {
        return Ok(vec![]);
    }
    if n == 1 {
        return Ok(vec![Pose2::identity()]);
    }
    let rotations = chordal_rotations(graph)?;
    let translations = translations_given_rotations(graph, &rotations)?;
    Ok((0..n)
        .map(|i| Pose2 {
            rotation: rotations[i],
            translation: translations[i],
        })
        .collect())
}

/// Rotation synchronization: each rotation is two unknowns (a, b), the first
/// column of the matrix; every edge contributes `u_j = R_meas u_i` weighted
/// by its rotation information.
fn chordal_rotations(graph: &PoseGraph) -> Result<Vec<Matrix2<f64>>> {
    let n = graph.num_nodes;
    let unknowns = 2 * (n - 1);
    let mut h = DMatrix::<f64>::zeros(unknowns, unknowns);
    let mut g = DVector::<f64>::zeros(unknowns);
    let idx = |node: usize| 2 * (node - 1);
    let u0 = Vector2::new(1.0, 0.0);

    for m in &graph.edges {
        let w = m.omega_r;
        let r = m.rotation;
        let (i, j) = (m.from, m.to);
        if i == 0 {
            let b = w * (r * u0);
            add2(&mut h, idx(j), idx(j), &(w * Matrix2::identity()));
            g[idx(j)] += b[0];
            g[idx(j) + 1] += b[1];
        } else if j == 0 {
            let b = w * (r.transpose() * u0);
            add2(&mut h, idx(i), idx(i), &(w * Matrix2::identity()));
            g[idx(i)] += b[0];
            g[idx(i) + 1] += b[1];
        } else {
            add2(&mut h, idx(j), idx(j), &(w * Matrix2::identity()));
            add2(&mut h, idx(i), idx(i), &(w * Matrix2::identity()));
            add2(&mut h, idx(j), idx(i), &(-w * r));
            add2(&mut h, idx(i), idx(j), &(-w * r.transpose()));
        }
    }

    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Singular("rotation synchronization system".into()))?;
    let x = chol.solve(&g);

    let mut rotations = vec![Matrix2::identity(); n];
    for node in 1..n {
        let a = x[idx(node)];
        let b = x[idx(node) + 1];
        let norm = a.hypot(b);
        rotations[node] = if norm < 1e-12 {
            Matrix2::identity()
        } else {
            Matrix2::new(a / norm, -b / norm, b / norm, a / norm)
        };
    }
    Ok(rotations)
}

fn translations_given_rotations(
    graph: &PoseGraph,
    rotations: &[Matrix2<f64>],
) -> Result<Vec<Vector2<f64>>> {
    let n = graph.num_nodes;
    let unknowns = n - 1;
    let mut h = DMatrix::<f64>::zeros(unknowns, unknowns);
    let mut rhs = DMatrix::<f64>::zeros(unknowns, 2);
    let idx = |node: usize| node - 1;

    for m in &graph.edges {
        let w = m.omega_t;
        let b = rotations[m.from] * m.translation;
        let (i, j) = (m.from, m.to);
        if i == 0 {
            h[(idx(j), idx(j))] += w;
            rhs[(idx(j), 0)] += w * b[0];
            rhs[(idx(j), 1)] += w * b[1];
        } else if j == 0 {
            h[(idx(i), idx(i))] += w;
            rhs[(idx(i), 0)] -= w * b[0];
            rhs[(idx(i), 1)] -= w * b[1];
        } else {
            h[(idx(i), idx(i))] += w;
            h[(idx(j), idx(j))] += w;
            h[(idx(i), idx(j))] -= w;
            h[(idx(j), idx(i))] -= w;
            rhs[(idx(j), 0)] += w * b[0];
            rhs[(idx(j), 1)] += w * b[1];
            rhs[(idx(i), 0)] -= w * b[0];
            rhs[(idx(i), 1)] -= w * b[1];
        }
    }

    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Singular("translation system".into()))?;
    let x = chol.solve(&rhs);
    let mut translations = vec![Vector2::zeros(); n];
    for node in 1..n {
        translations[node] = Vector2::new(x[(idx(node), 0)], x[(idx(node), 1)]);
    }
    Ok(translations)
}

fn add2(h: &mut DMatrix<f64>, r: usize, c: usize, b: &Matrix2<f64>) {
    for i in 0..2 {
        for j in 0..2 {
            h[(r + i, c + j)] += b[(i, j)];
        }
    }
}

/// Total weighted squared error over all edges of the graph.
pub fn graph_objective(graph: &PoseGraph, poses: &[Pose2]) -> f64 {
    graph
        .edges
        .iter()
        .map(|m| residual(&poses[m.from], &poses[m.to], m))
        .sum()
}

/// Damped Gauss-Newton on per-node (x, y, angle) states with pose 0 fixed
/// at the identity. The objective never increases across iterations; steps
/// that would increase it are halved up to `max_backtracks` times.
pub fn gauss_newton(
    graph: &PoseGraph,
    init: &[Pose2],
    opts: &GnOptions,
) -> Result<(Vec<Pose2>, f64)> {
    let n = graph.num_nodes;
    assert_eq!(init.len(), n, "one initial pose per node");
    if n == 1 {
        return Ok((vec![Pose2::identity()], 0.0));
    }

    // Anchor the gauge: pose 0 becomes exactly the identity.
    let g0 = init[0].inverse();
    let mut state: Vec<[f64; 3]> = init
        .iter()
        .map(|p| {
            let q = g0.compose(p);
            [q.x(), q.y(), q.angle()]
        })
        .collect();
    state[0] = [0.0, 0.0, 0.0];

    let poses_of = |state: &[[f64; 3]]| -> Vec<Pose2> {
        state
            .iter()
            .map(|s| Pose2::from_xy_theta(s[0], s[1], s[2]))
            .collect()
    };
    let mut poses = poses_of(&state);
    let mut obj = graph_objective(graph, &poses);
    if !obj.is_finite() {
        return Err(Error::Diverged("non-finite initial objective".into()));
    }

    let unknowns = 3 * (n - 1);
    let idx = |node: usize| 3 * (node - 1);

    for _ in 0..opts.max_iters {
        let mut h = DMatrix::<f64>::zeros(unknowns, unknowns);
        let mut grad = DVector::<f64>::zeros(unknowns);

        for m in &graph.edges {
            let (jac_i, jac_j, r) = linearize_edge(&poses, m);
            let (i, j) = (m.from, m.to);
            if i > 0 {
                accumulate(&mut h, &mut grad, idx(i), &jac_i, &r);
            }
            if j > 0 {
                accumulate(&mut h, &mut grad, idx(j), &jac_j, &r);
            }
            if i > 0 && j > 0 {
                accumulate_cross(&mut h, idx(i), idx(j), &jac_i, &jac_j);
            }
        }

        if grad.amax() <= opts.grad_tol {
            break;
        }

        // Cholesky with escalating diagonal damping as a fallback.
        let mut lambda = 0.0;
        let delta = loop {
            let mut hd = h.clone();
            if lambda > 0.0 {
                for d in 0..unknowns {
                    hd[(d, d)] += lambda;
                }
            }
            match hd.cholesky() {
                Some(ch) => break ch.solve(&(-&grad)),
                None => {
                    lambda = if lambda == 0.0 { 1e-9 } else { lambda * 10.0 };
                    if lambda > 1e6 {
                        return Err(Error::Singular("normal equations".into()));
                    }
                }
            }
        };

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_backtracks {
            let mut trial = state.clone();
            for node in 1..n {
                let o = idx(node);
                trial[node][0] += alpha * delta[o];
                trial[node][1] += alpha * delta[o + 1];
                trial[node][2] = wrap_angle(trial[node][2] + alpha * delta[o + 2]);
            }
            let trial_poses = poses_of(&trial);
            let trial_obj = graph_objective(graph, &trial_poses);
            if !trial_obj.is_finite() {
                return Err(Error::Diverged("non-finite objective during step".into()));
            }
            if trial_obj <= obj {
                state = trial;
                poses = trial_poses;
                obj = trial_obj;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break; // no descent within the damping budget
        }
    }

    poses[0] = Pose2::identity();
    Ok((poses, obj))
}

/// Residual and 3x3 Jacobian blocks of one edge at the current estimate.
/// Rows: weighted translation error (2), then the weighted rotation error
/// `2 sqrt(w_r) sin(delta/2)`; state order per node is (x, y, angle).
fn linearize_edge(
    poses: &[Pose2],
    m: &RelPoseMeasurement,
) -> (nalgebra::Matrix3<f64>, nalgebra::Matrix3<f64>, nalgebra::Vector3<f64>) {
    let pi = &poses[m.from];
    let pj = &poses[m.to];
    let sqrt_wt = m.omega_t.sqrt();
    let sqrt_wr = m.omega_r.sqrt();
    let rt = pi.rotation.transpose();
    let dt = pj.translation - pi.translation;
    let et = rt * dt - m.translation;
    let delta = wrap_angle(pj.angle() - pi.angle() - m.pose().angle());

    let mut r = nalgebra::Vector3::zeros();
    r[0] = sqrt_wt * et[0];
    r[1] = sqrt_wt * et[1];
    r[2] = 2.0 * sqrt_wr * (0.5 * delta).sin();

    // d(R_i' dt)/d(angle_i) = -R_i' J dt with J the 90-degree generator.
    let jgen = Matrix2::new(0.0, -1.0, 1.0, 0.0);
    let dtheta_i = -(rt * jgen * dt);

    let mut jac_i = nalgebra::Matrix3::zeros();
    let mut jac_j = nalgebra::Matrix3::zeros();
    for row in 0..2 {
        for col in 0..2 {
            jac_i[(row, col)] = -sqrt_wt * rt[(row, col)];
            jac_j[(row, col)] = sqrt_wt * rt[(row, col)];
        }
        jac_i[(row, 2)] = sqrt_wt * dtheta_i[row];
    }
    let c = sqrt_wr * (0.5 * delta).cos();
    jac_i[(2, 2)] = -c;
    jac_j[(2, 2)] = c;
    (jac_i, jac_j, r)
}

fn accumulate(
    h: &mut DMatrix<f64>,
    grad: &mut DVector<f64>,
    off: usize,
    jac: &nalgebra::Matrix3<f64>,
    r: &nalgebra::Vector3<f64>,
) {
    let block = jac.transpose() * jac;
    for i in 0..3 {
        for j in 0..3 {
            h[(off + i, off + j)] += block[(i, j)];
        }
    }
    let gb = jac.transpose() * r;
    for i in 0..3 {
        grad[off + i] += gb[i];
    }
}

fn accumulate_cross(
    h: &mut DMatrix<f64>,
    io: usize,
    jo: usize,
    ji: &nalgebra::Matrix3<f64>,
    jj: &nalgebra::Matrix3<f64>,
) {
    let block = ji.transpose() * jj;
    for r in 0..3 {
        for c in 0..3 {
            h[(io + r, jo + c)] += block[(r, c)];
            h[(jo + c, io + r)] += block[(r, c)];
        }
    }
}
