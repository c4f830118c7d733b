//! Text I/O: the 2-D g2o interchange format (`VERTEX_SE2` / `EDGE_SE2`
//! records) and the `CORR` sidecar listing correlated loop-closure pairs.
//!
//! Numbers are written with Rust's shortest-roundtrip formatting, so a
//! parse of a write reproduces every field bit for bit.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::graph::{partition_edges, Correlation, PoseGraph, RelPoseMeasurement};
use crate::pose::{rot2, wrap_angle, Pose2};

/// Counters for tolerated irregularities in a parsed file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseWarnings {
    /// Lines with an unrecognized record type.
    pub unknown_lines: usize,
    /// Edges whose information matrix had nonzero off-diagonal entries
    /// (ignored; the model is isotropic).
    pub off_diagonal_info: usize,
}

/// A parsed pose graph plus the optional initial poses from `VERTEX_SE2`
/// records. Initial poses are for evaluation and plotting only; the solver
/// never reads them.
#[derive(Debug, Clone)]
pub struct G2oDocument {
    pub graph: PoseGraph,
    pub initial: Vec<Pose2>,
    pub warnings: ParseWarnings,
}

fn parse_field<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad {what} token {tok:?}"),
    })
}

/// Parse a 2-D g2o stream.
///
/// `EDGE_SE2 i j dx dy dtheta I11 I12 I13 I22 I23 I33` reduces the
/// information matrix to isotropic weights `omega_t = (I11 + I22)/2`,
/// `omega_r = I33`. Unknown record types are counted and skipped. Edges
/// that reference vertices not declared (when any vertices are declared)
/// are structural errors.
pub fn parse_g2o<R: BufRead>(reader: R) -> Result<G2oDocument> {
    let mut warnings = ParseWarnings::default();
    let mut vertices: Vec<(usize, Pose2)> = Vec::new();
    let mut vertex_ids = std::collections::HashSet::new();
    let mut edges: Vec<RelPoseMeasurement> = Vec::new();
    let mut max_id = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let mut toks = line.split_whitespace();
        let Some(tag) = toks.next() else { continue };
        match tag {
            "VERTEX_SE2" => {
                let rest: Vec<&str> = toks.collect();
                if rest.len() != 4 {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("VERTEX_SE2 expects 4 fields, got {}", rest.len()),
                    });
                }
                let id: usize = parse_field(rest[0], lineno, "vertex id")?;
                let x: f64 = parse_field(rest[1], lineno, "x")?;
                let y: f64 = parse_field(rest[2], lineno, "y")?;
                let theta: f64 = parse_field(rest[3], lineno, "theta")?;
                if !vertex_ids.insert(id) {
                    return Err(Error::Structure(format!("duplicate vertex id {id}")));
                }
                max_id = max_id.max(id);
                vertices.push((id, Pose2::from_xy_theta(x, y, wrap_angle(theta))));
            }
            "EDGE_SE2" => {
                let rest: Vec<&str> = toks.collect();
                if rest.len() != 11 {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("EDGE_SE2 expects 11 fields, got {}", rest.len()),
                    });
                }
                let i: usize = parse_field(rest[0], lineno, "edge endpoint")?;
                let j: usize = parse_field(rest[1], lineno, "edge endpoint")?;
                let dx: f64 = parse_field(rest[2], lineno, "dx")?;
                let dy: f64 = parse_field(rest[3], lineno, "dy")?;
                let dtheta: f64 = parse_field(rest[4], lineno, "dtheta")?;
                let info: Vec<f64> = rest[5..]
                    .iter()
                    .map(|t| parse_field(t, lineno, "information entry"))
                    .collect::<Result<_>>()?;
                let (i11, i12, i13, i22, i23, i33) =
                    (info[0], info[1], info[2], info[3], info[4], info[5]);
                if i12 != 0.0 || i13 != 0.0 || i23 != 0.0 {
                    warnings.off_diagonal_info += 1;
                }
                let omega_t = 0.5 * (i11 + i22);
                let omega_r = i33;
                max_id = max_id.max(i).max(j);
                edges.push(
                    RelPoseMeasurement::new(
                        i,
                        j,
                        rot2(wrap_angle(dtheta)),
                        nalgebra::Vector2::new(dx, dy),
                        omega_t,
                        omega_r,
                    )
                    .map_err(|e| Error::Parse {
                        line: lineno,
                        message: e.to_string(),
                    })?,
                );
            }
            _ => warnings.unknown_lines += 1,
        }
    }

    if !vertices.is_empty() {
        for e in &edges {
            if !vertex_ids.contains(&e.from) || !vertex_ids.contains(&e.to) {
                return Err(Error::Structure(format!(
                    "edge ({}, {}) references an undeclared vertex",
                    e.from, e.to
                )));
            }
        }
    }
    let num_nodes = max_id + 1;
    let graph = PoseGraph::new(num_nodes, edges, vec![])?;

    vertices.sort_by_key(|&(id, _)| id);
    let initial = vertices.into_iter().map(|(_, p)| p).collect();
    Ok(G2oDocument {
        graph,
        initial,
        warnings,
    })
}

/// Write a graph and its poses: one `VERTEX_SE2` line per node, then one
/// `EDGE_SE2` line per edge with information `diag(omega_t, omega_t,
/// omega_r)`.
pub fn write_g2o<W: Write>(mut w: W, graph: &PoseGraph, poses: &[Pose2]) -> Result<()> {
    assert_eq!(poses.len(), graph.num_nodes, "one pose per node");
    for (id, p) in poses.iter().enumerate() {
        writeln!(w, "VERTEX_SE2 {id} {} {} {}", p.x(), p.y(), p.angle())?;
    }
    for e in &graph.edges {
        let angle = e.pose().angle();
        writeln!(
            w,
            "EDGE_SE2 {} {} {} {} {} {} 0 0 {} 0 {}",
            e.from, e.to, e.translation[0], e.translation[1], angle, e.omega_t, e.omega_t, e.omega_r
        )?;
    }
    Ok(())
}

pub fn write_g2o_string(graph: &PoseGraph, poses: &[Pose2]) -> String {
    let mut buf = Vec::new();
    write_g2o(&mut buf, graph, poses).expect("write to memory");
    String::from_utf8(buf).expect("utf8 output")
}

/// Parse the correlation sidecar: lines `CORR i j i2 j2 w` naming two loop
/// closures by endpoints. Blank lines and `#` comments are allowed.
pub fn parse_correlations<R: BufRead>(reader: R, graph: &PoseGraph) -> Result<Vec<Correlation>> {
    let (_, lc) = partition_edges(graph);
    // Endpoint pair -> loop-closure edge index. Parallel edges resolve in
    // file order: each match consumes one slot.
    let mut by_endpoints: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for &k in lc.iter().rev() {
        let e = &graph.edges[k];
        by_endpoints.entry((e.from, e.to)).or_default().push(k);
    }

    let mut out: Vec<Correlation> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks[0] != "CORR" || toks.len() != 6 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 'CORR i j i2 j2 w', got {trimmed:?}"),
            });
        }
        let i: usize = parse_field(toks[1], lineno, "endpoint")?;
        let j: usize = parse_field(toks[2], lineno, "endpoint")?;
        let i2: usize = parse_field(toks[3], lineno, "endpoint")?;
        let j2: usize = parse_field(toks[4], lineno, "endpoint")?;
        let w: f64 = parse_field(toks[5], lineno, "weight")?;
        if w < 0.0 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("negative correlation weight {w}"),
            });
        }
        let mut resolve = |a: usize, b: usize| -> Result<usize> {
            by_endpoints
                .get_mut(&(a, b))
                .and_then(|v| v.pop())
                .ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: format!("({a}, {b}) does not name a loop closure"),
                })
        };
        let ea = resolve(i, j)?;
        let eb = resolve(i2, j2)?;
        let key = (ea.min(eb), ea.max(eb));
        if ea == eb || !seen.insert(key) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("duplicate or self correlation ({i},{j})-({i2},{j2})"),
            });
        }
        out.push(Correlation {
            edge_a: ea,
            edge_b: eb,
            weight: w,
        });
    }
    Ok(out)
}

/// Write the sidecar format accepted by [`parse_correlations`].
pub fn write_correlations<W: Write>(
    mut w: W,
    graph: &PoseGraph,
    correlations: &[Correlation],
) -> Result<()> {
    for c in correlations {
        let a = &graph.edges[c.edge_a];
        let b = &graph.edges[c.edge_b];
        writeln!(w, "CORR {} {} {} {} {}", a.from, a.to, b.from, b.to, c.weight)?;
    }
    Ok(())
}

/// Correlations between every pair of loop closures whose endpoints differ
/// by at most one node on both ends, each with coefficient `weight`.
pub fn auto_correlations(graph: &PoseGraph, weight: f64) -> Vec<Correlation> {
    let (_, lc) = partition_edges(graph);
    let mut out = Vec::new();
    for (a_pos, &a) in lc.iter().enumerate() {
        for &b in lc.iter().skip(a_pos + 1) {
            let ea = &graph.edges[a];
            let eb = &graph.edges[b];
            let di = ea.from.abs_diff(eb.from);
            let dj = ea.to.abs_diff(eb.to);
            if di <= 1 && dj <= 1 {
                out.push(Correlation {
                    edge_a: a,
                    edge_b: b,
                    weight,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_grid, SynthConfig};
    use approx::assert_relative_eq;
    use std::io::BufReader;

    fn parse_str(s: &str) -> Result<G2oDocument> {
        parse_g2o(BufReader::new(s.as_bytes()))
    }

    #[test]
    fn vertex_field_mapping() {
        let doc = parse_str(
            "VERTEX_SE2 0 0.1 -0.2 1.5707963\nVERTEX_SE2 1 1 0 0\nEDGE_SE2 0 1 1 0 0 1 0 0 1 0 1\n",
        )
        .unwrap();
        let p = &doc.initial[0];
        assert_relative_eq!(p.x(), 0.1);
        assert_relative_eq!(p.y(), -0.2);
        assert_relative_eq!(p.angle(), std::f64::consts::FRAC_PI_2, epsilon = 1e-7);
    }

    #[test]
    fn edge_weight_extraction() {
        let doc = parse_str("EDGE_SE2 0 1 1 0 0 100 0 0 100 0 25\n").unwrap();
        let e = &doc.graph.edges[0];
        assert_eq!(e.translation, nalgebra::Vector2::new(1.0, 0.0));
        assert_relative_eq!(e.pose().angle(), 0.0);
        assert_eq!(e.omega_t, 100.0);
        assert_eq!(e.omega_r, 25.0);
        assert_eq!(doc.warnings.off_diagonal_info, 0);
    }

    #[test]
    fn off_diagonal_info_warns() {
        let doc = parse_str("EDGE_SE2 0 1 1 0 0 100 1 0 100 0 25\n").unwrap();
        assert_eq!(doc.warnings.off_diagonal_info, 1);
        assert_eq!(doc.graph.edges[0].omega_t, 100.0);
    }

    #[test]
    fn unknown_lines_are_counted_not_fatal() {
        let doc = parse_str(
            "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nEDGE_SE2 0 1 1 0 0 1 0 0 1 0 1\nFIX 0\n",
        )
        .unwrap();
        assert_eq!(doc.warnings.unknown_lines, 2);
        assert_eq!(doc.graph.num_nodes, 2);
    }

    #[test]
    fn malformed_numbers_report_line() {
        let err = parse_str("EDGE_SE2 0 1 1 0 zero 1 0 0 1 0 1\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
        let err = parse_str("VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 x 0 0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn undeclared_vertex_is_structural_error() {
        let err = parse_str("VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0\nEDGE_SE2 0 2 1 0 0 1 0 0 1 0 1\n")
            .unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let mut cfg = SynthConfig::grid(4, 6, 0.1, 0.01, 33);
        cfg.outlier_ratio = 0.3;
        cfg.group_size = 2;
        let (graph, truth) = generate_grid(&cfg).unwrap();
        let text = write_g2o_string(&graph, &truth.poses);
        let doc = parse_str(&text).unwrap();
        assert_eq!(doc.graph.num_nodes, graph.num_nodes);
        assert_eq!(doc.graph.edges.len(), graph.edges.len());
        for (a, b) in doc.graph.edges.iter().zip(&graph.edges) {
            assert_eq!(a.from, b.from);
            assert_eq!(a.to, b.to);
            assert_eq!(a.translation, b.translation);
            assert_eq!(a.omega_t, b.omega_t);
            assert_eq!(a.omega_r, b.omega_r);
            // Rotations pass through an angle; equality holds to rounding.
            assert!((a.rotation - b.rotation).norm() <= 1e-15);
        }
        for (a, b) in doc.initial.iter().zip(&truth.poses) {
            assert_eq!(a.translation, b.translation);
            assert!((a.rotation - b.rotation).norm() <= 1e-15);
        }
        // A second trip is bitwise identical text.
        let again = write_g2o_string(&doc.graph, &doc.initial);
        assert_eq!(text, again);
    }

    #[test]
    fn whitespace_insensitive() {
        let a = parse_str("EDGE_SE2 0 1 1 0 0 1 0 0 1 0 1\n").unwrap();
        let b = parse_str("  EDGE_SE2\t0  1   1 0 0 1 0 0 1 0 1  \n\n\n").unwrap();
        assert_eq!(a.graph.edges[0], b.graph.edges[0]);
    }

    #[test]
    fn identity_vertex_line() {
        let text = write_g2o_string(
            &PoseGraph::new(
                2,
                vec![RelPoseMeasurement::new(
                    0,
                    1,
                    rot2(0.0),
                    nalgebra::Vector2::new(1.0, 0.0),
                    1.0,
                    1.0,
                )
                .unwrap()],
                vec![],
            )
            .unwrap(),
            &[Pose2::identity(), Pose2::from_xy_theta(1.0, 0.0, 0.0)],
        );
        assert!(text.starts_with("VERTEX_SE2 0 0 0 0\n"));
    }

    #[test]
    fn grid_writes_two_hundred_vertices() {
        let cfg = SynthConfig::grid(10, 20, 0.1, 0.01, 4);
        let (graph, truth) = generate_grid(&cfg).unwrap();
        let text = write_g2o_string(&graph, &truth.poses);
        let count = text.lines().filter(|l| l.starts_with("VERTEX_SE2")).count();
        assert_eq!(count, 200);
    }

    fn grid_with_closures() -> PoseGraph {
        let cfg = SynthConfig::grid(4, 6, 0.1, 0.01, 5);
        generate_grid(&cfg).unwrap().0
    }

    #[test]
    fn correlations_roundtrip_and_validation() {
        let graph = grid_with_closures();
        let (_, lc) = partition_edges(&graph);
        assert!(lc.len() >= 2);
        let corr = vec![Correlation {
            edge_a: lc[0],
            edge_b: lc[1],
            weight: 1.0,
        }];
        let mut buf = Vec::new();
        write_correlations(&mut buf, &graph, &corr).unwrap();
        let parsed = parse_correlations(BufReader::new(&buf[..]), &graph).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].weight, 1.0);
        let (a, b) = (parsed[0].edge_a.min(parsed[0].edge_b), parsed[0].edge_a.max(parsed[0].edge_b));
        assert_eq!((a, b), (lc[0].min(lc[1]), lc[0].max(lc[1])));
    }

    #[test]
    fn empty_correlation_file_is_empty_set() {
        let graph = grid_with_closures();
        let parsed = parse_correlations(BufReader::new(&b""[..]), &graph).unwrap();
        assert!(parsed.is_empty());
    }

    #[test]
    fn correlation_on_odometry_edge_is_error() {
        let graph = grid_with_closures();
        let (_, lc) = partition_edges(&graph);
        let probe = &graph.edges[lc[0]];
        let text = format!("CORR 0 1 {} {} 1.0\n", probe.from, probe.to);
        assert!(parse_correlations(BufReader::new(text.as_bytes()), &graph).is_err());
    }

    #[test]
    fn negative_weight_rejected() {
        let graph = grid_with_closures();
        let (_, lc) = partition_edges(&graph);
        let (a, b) = (&graph.edges[lc[0]], &graph.edges[lc[1]]);
        let text = format!("CORR {} {} {} {} -0.5\n", a.from, a.to, b.from, b.to);
        assert!(parse_correlations(BufReader::new(text.as_bytes()), &graph).is_err());
    }

    #[test]
    fn auto_correlations_neighbor_rule() {
        // Chain of 12 nodes with loop closures (2,10), (3,11), (7,40 -> use
        // (5,11) far pair instead to stay in range).
        let mk = |from, to| {
            RelPoseMeasurement::new(
                from,
                to,
                rot2(0.0),
                nalgebra::Vector2::new(1.0, 0.0),
                1.0,
                1.0,
            )
            .unwrap()
        };
        let mut edges: Vec<RelPoseMeasurement> = (0..11).map(|i| mk(i, i + 1)).collect();
        edges.push(mk(2, 10));
        edges.push(mk(3, 11));
        edges.push(mk(5, 11));
        let graph = PoseGraph::new(12, edges, vec![]).unwrap();
        let corr = auto_correlations(&graph, 0.7);
        // (2,10)-(3,11) are neighbors; (3,11)-(5,11) and (2,10)-(5,11) are not.
        assert_eq!(corr.len(), 1);
        assert_eq!(corr[0].weight, 0.7);
        let (ea, eb) = (corr[0].edge_a, corr[0].edge_b);
        assert_eq!(graph.edges[ea].from, 2);
        assert_eq!(graph.edges[eb].from, 3);
        // A single loop closure yields nothing.
        let mut edges2: Vec<RelPoseMeasurement> = (0..11).map(|i| mk(i, i + 1)).collect();
        edges2.push(mk(2, 10));
        let graph2 = PoseGraph::new(12, edges2, vec![]).unwrap();
        assert!(auto_correlations(&graph2, 1.0).is_empty());
    }

    #[test]
    fn auto_correlations_validate_against_graph() {
        let graph = grid_with_closures();
        let corr = auto_correlations(&graph, 0.1);
        assert!(!corr.is_empty());
        // The produced set satisfies the graph invariants.
        let g2 = PoseGraph::new(graph.num_nodes, graph.edges.clone(), corr).unwrap();
        assert!(!g2.correlation.is_empty());
    }
}
