//! Deterministic synthetic pose graphs: a boustrophedon grid and a
//! Manhattan-world random walk, with measurement noise and grouped outlier
//! injection. Identical configurations (including the seed) produce
//! bitwise-identical graphs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{PoseGraph, RelPoseMeasurement};
use crate::pose::{wrap_angle, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Grid,
    Manhattan,
}

/// Generator configuration.
///
/// Noise standard deviations may be zero for exact measurements; edges then
/// carry unit information instead of `1/sigma^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: GraphKind,
    /// Grid height in nodes (grid only).
    #[serde(default = "default_rows")]
    pub rows: usize,
    /// Grid width in nodes (grid only).
    #[serde(default = "default_cols")]
    pub cols: usize,
    /// Walk length in steps (Manhattan only).
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Translation noise std (meters).
    pub sigma_t: f64,
    /// Rotation noise std (radians).
    pub sigma_r: f64,
    /// Fraction of loop closures to spoil, in [0, 1).
    #[serde(default)]
    pub outlier_ratio: f64,
    /// Loop closures per mutually-consistent group.
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    /// Assign outlier membership per edge instead of per group.
    #[serde(default)]
    pub heterogeneous_groups: bool,
    pub seed: u64,
}

fn default_rows() -> usize {
    10
}
fn default_cols() -> usize {
    20
}
fn default_steps() -> usize {
    500
}
fn default_group_size() -> usize {
    5
}

impl SynthConfig {
    pub fn grid(rows: usize, cols: usize, sigma_t: f64, sigma_r: f64, seed: u64) -> Self {
        Self {
            kind: GraphKind::Grid,
            rows,
            cols,
            steps: 0,
            sigma_t,
            sigma_r,
            outlier_ratio: 0.0,
            group_size: default_group_size(),
            heterogeneous_groups: false,
            seed,
        }
    }

    pub fn manhattan(steps: usize, sigma_t: f64, sigma_r: f64, seed: u64) -> Self {
        Self {
            kind: GraphKind::Manhattan,
            rows: 0,
            cols: 0,
            steps,
            sigma_t,
            sigma_r,
            outlier_ratio: 0.0,
            group_size: default_group_size(),
            heterogeneous_groups: false,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sigma_t < 0.0 || self.sigma_r < 0.0 {
            return Err(Error::InvalidConfig(
                "noise standard deviations must be nonnegative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.outlier_ratio) {
            return Err(Error::InvalidConfig(format!(
                "outlier_ratio {} outside [0, 1)",
                self.outlier_ratio
            )));
        }
        if self.group_size == 0 {
            return Err(Error::InvalidConfig("group_size must be at least 1".into()));
        }
        match self.kind {
            GraphKind::Grid if self.rows * self.cols < 4 => {
                Err(Error::InvalidConfig("grid needs at least 4 nodes".into()))
            }
            GraphKind::Manhattan if self.steps == 0 => {
                Err(Error::InvalidConfig("walk needs at least 1 step".into()))
            }
            _ => Ok(()),
        }
    }

    /// Edge weight for a noise level: `1/sigma^2`, or 1 for exact
    /// measurements.
    pub fn weight(sigma: f64) -> f64 {
        if sigma > 0.0 {
            1.0 / (sigma * sigma)
        } else {
            1.0
        }
    }
}

/// Ground truth produced alongside a synthetic graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub poses: Vec<Pose2>,
    /// One flag per loop closure, in edge-list order; true marks an inlier.
    pub inlier_mask: Vec<bool>,
}

/// Dispatch on `cfg.kind`.
pub fn generate(cfg: &SynthConfig) -> Result<(PoseGraph, GroundTruth)> {
    match cfg.kind {
        GraphKind::Grid => generate_grid(cfg),
        GraphKind::Manhattan => generate_manhattan(cfg),
    }
}

/// Boustrophedon grid of `rows x cols` unit-spaced nodes. Loop closures
/// connect vertically adjacent nodes of consecutive rows, grouped by
/// contiguous runs of columns; each group is entirely inlier or entirely
/// outlier unless `heterogeneous_groups` is set.
pub fn generate_grid(cfg: &SynthConfig) -> Result<(PoseGraph, GroundTruth)> {
    cfg.validate()?;
    if cfg.kind != GraphKind::Grid {
        return Err(Error::InvalidConfig("expected a grid configuration".into()));
    }
    let (rows, cols) = (cfg.rows, cfg.cols);
    let n = rows * cols;
    // Node id of grid cell (r, c) along the serpentine trajectory.
    let id = |r: usize, c: usize| -> usize {
        if r % 2 == 0 {
            r * cols + c
        } else {
            r * cols + (cols - 1 - c)
        }
    };
    let position = |k: usize| -> (f64, f64) {
        let r = k / cols;
        let m = k % cols;
        let c = if r % 2 == 0 { m } else { cols - 1 - m };
        (c as f64, r as f64)
    };
    // Heading along the direction of travel; the last node keeps course.
    let mut headings: Vec<f64> = Vec::with_capacity(n);
    for k in 0..n {
        let h = if k + 1 < n {
            let (x, y) = position(k);
            let (nx, ny) = position(k + 1);
            (ny - y).atan2(nx - x)
        } else {
            *headings.last().unwrap_or(&0.0)
        };
        headings.push(h);
    }
    let gt_poses: Vec<Pose2> = (0..n)
        .map(|k| {
            let (x, y) = position(k);
            Pose2::from_xy_theta(x, y, headings[k])
        })
        .collect();

    // Vertical loop-closure candidates per consecutive row pair, skipping
    // the turn column where the pair is already the odometry edge.
    let mut candidates = Vec::new();
    let mut groups: Vec<std::ops::Range<usize>> = Vec::new();
    for r in 0..rows.saturating_sub(1) {
        let row_start = candidates.len();
        for c in 0..cols {
            let (a, b) = (id(r, c), id(r + 1, c));
            let (from, to) = (a.min(b), a.max(b));
            if to == from + 1 {
                continue;
            }
            candidates.push((from, to));
        }
        let mut g = row_start;
        while g < candidates.len() {
            let end = (g + cfg.group_size).min(candidates.len());
            groups.push(g..end);
            g = end;
        }
    }

    let bbox = ((0.0, (cols - 1) as f64), (0.0, (rows - 1) as f64));
    assemble(cfg, gt_poses, &candidates, &groups, bbox)
}

/// Seeded Manhattan-world random walk on the unit lattice with 90-degree
/// turns; every revisit of a lattice cell adds a loop closure to the most
/// recent previous visitor of that cell.
pub fn generate_manhattan(cfg: &SynthConfig) -> Result<(PoseGraph, GroundTruth)> {
    cfg.validate()?;
    if cfg.kind != GraphKind::Manhattan {
        return Err(Error::InvalidConfig(
            "expected a manhattan configuration".into(),
        ));
    }
    // The walk uses its own stream so measurement noise draws stay aligned
    // with the grid generator's.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x6d61_6e68));
    let n = cfg.steps + 1;
    let mut cell = (0i64, 0i64);
    let mut heading = 0usize; // quarter turns counterclockwise from +x
    let mut cells = std::collections::HashMap::new();
    cells.insert(cell, 0usize);
    let mut gt_poses = Vec::with_capacity(n);
    gt_poses.push(Pose2::from_xy_theta(0.0, 0.0, 0.0));
    let mut candidates = Vec::new();
    let mut min_xy = (0i64, 0i64);
    let mut max_xy = (0i64, 0i64);

    for k in 1..n {
        let u: f64 = rng.gen();
        if u >= 0.75 {
            heading = (heading + 3) % 4; // right turn
        } else if u >= 0.5 {
            heading = (heading + 1) % 4; // left turn
        }
        let (dx, dy) = match heading {
            0 => (1, 0),
            1 => (0, 1),
            2 => (-1, 0),
            _ => (0, -1),
        };
        cell = (cell.0 + dx, cell.1 + dy);
        min_xy = (min_xy.0.min(cell.0), min_xy.1.min(cell.1));
        max_xy = (max_xy.0.max(cell.0), max_xy.1.max(cell.1));
        gt_poses.push(Pose2::from_xy_theta(
            cell.0 as f64,
            cell.1 as f64,
            heading as f64 * std::f64::consts::FRAC_PI_2,
        ));
        if let Some(&prev) = cells.get(&cell) {
            if k - prev > 1 {
                candidates.push((prev, k));
            }
        }
        cells.insert(cell, k);
    }

    let mut groups = Vec::new();
    let mut g = 0;
    while g < candidates.len() {
        let end = (g + cfg.group_size).min(candidates.len());
        groups.push(g..end);
        g = end;
    }

    let bbox = (
        (min_xy.0 as f64, max_xy.0 as f64),
        (min_xy.1 as f64, max_xy.1 as f64),
    );
    assemble(cfg, gt_poses, &candidates, &groups, bbox)
}

/// Shared tail of both generators: noisy odometry, grouped outlier
/// selection, loop-closure measurements.
fn assemble(
    cfg: &SynthConfig,
    gt_poses: Vec<Pose2>,
    candidates: &[(usize, usize)],
    groups: &[std::ops::Range<usize>],
    bbox: ((f64, f64), (f64, f64)),
) -> Result<(PoseGraph, GroundTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = gt_poses.len();
    let ell = candidates.len();
    let omega_t = SynthConfig::weight(cfg.sigma_t);
    let omega_r = SynthConfig::weight(cfg.sigma_r);

    let mut edges = Vec::with_capacity(n - 1 + ell);
    for i in 0..n - 1 {
        let rel = gt_poses[i].between(&gt_poses[i + 1]);
        let meas = perturb_measurement(&rel, cfg.sigma_t, cfg.sigma_r, &mut rng);
        edges.push(RelPoseMeasurement::from_pose(i, i + 1, &meas, omega_t, omega_r)?);
    }

    // Outlier selection: whole groups by default, individual edges in the
    // heterogeneous mode. Group count = round(ratio * ell / group_size).
    let mut inlier_mask = vec![true; ell];
    if cfg.outlier_ratio > 0.0 && ell > 0 {
        if cfg.heterogeneous_groups {
            let k = ((cfg.outlier_ratio * ell as f64).round() as usize).min(ell);
            for &e in choose(&mut rng, ell, k).iter() {
                inlier_mask[e] = false;
            }
        } else {
            let k = ((cfg.outlier_ratio * ell as f64 / cfg.group_size as f64).round() as usize)
                .min(groups.len());
            for &g in choose(&mut rng, groups.len(), k).iter() {
                for e in groups[g].clone() {
                    inlier_mask[e] = false;
                }
            }
        }
    }

    let ((x_lo, x_hi), (y_lo, y_hi)) = bbox;
    let ux = Uniform::new_inclusive(x_lo, x_hi);
    let uy = Uniform::new_inclusive(y_lo, y_hi);
    let ua = Uniform::new(-std::f64::consts::PI, std::f64::consts::PI);
    for (slot, &(from, to)) in candidates.iter().enumerate() {
        let meas = if inlier_mask[slot] {
            let rel = gt_poses[from].between(&gt_poses[to]);
            perturb_measurement(&rel, cfg.sigma_t, cfg.sigma_r, &mut rng)
        } else {
            // Relative pose between two uniformly random workspace poses;
            // angles negated to land in (-pi, pi].
            let a = Pose2::from_xy_theta(
                ux.sample(&mut rng),
                uy.sample(&mut rng),
                -ua.sample(&mut rng),
            );
            let b = Pose2::from_xy_theta(
                ux.sample(&mut rng),
                uy.sample(&mut rng),
                -ua.sample(&mut rng),
            );
            a.between(&b)
        };
        edges.push(RelPoseMeasurement::from_pose(from, to, &meas, omega_t, omega_r)?);
    }

    let graph = PoseGraph::new(n, edges, vec![])?;
    Ok((
        graph,
        GroundTruth {
            poses: gt_poses,
            inlier_mask,
        },
    ))
}

/// `k` distinct values from `0..n`, by partial Fisher-Yates.
fn choose<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Sample the generative noise model: translation noise added in the frame
/// of the relative measurement, rotation noise right-multiplied as a
/// wrapped-Gaussian angle.
pub fn perturb_measurement<R: Rng>(
    true_rel: &Pose2,
    sigma_t: f64,
    sigma_r: f64,
    rng: &mut R,
) -> Pose2 {
    let nt = Normal::new(0.0, sigma_t).expect("nonnegative std");
    let nr = Normal::new(0.0, sigma_r).expect("nonnegative std");
    let ex = nt.sample(rng);
    let ey = nt.sample(rng);
    let ea = wrap_angle(nr.sample(rng));
    Pose2 {
        rotation: true_rel.rotation * crate::pose::rot2(ea),
        translation: true_rel.translation + nalgebra::Vector2::new(ex, ey),
    }
}
