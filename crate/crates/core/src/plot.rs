//! SVG trajectory plots: reference in green, estimate in black, rejected
//! loop closures as red segments between their estimated endpoints.

use crate::pose::Pose2;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;

/// Render the two trajectories and the rejected loop closures into an SVG
/// document with a fixed canvas and an auto-scaled viewBox. The y axis is
/// flipped so the plot uses the usual mathematical orientation.
pub fn plot_trajectories(
    estimate: &[Pose2],
    reference: &[Pose2],
    rejected: &[(usize, usize)],
) -> String {
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for p in estimate.iter().chain(reference) {
        min_x = min_x.min(p.x());
        max_x = max_x.max(p.x());
        min_y = min_y.min(-p.y());
        max_y = max_y.max(-p.y());
    }
    if !min_x.is_finite() {
        min_x = 0.0;
        max_x = 1.0;
        min_y = 0.0;
        max_y = 1.0;
    }
    let span_x = (max_x - min_x).max(1e-9);
    let span_y = (max_y - min_y).max(1e-9);
    let margin = 0.05 * span_x.max(span_y);
    let view = format!(
        "{} {} {} {}",
        min_x - margin,
        min_y - margin,
        span_x + 2.0 * margin,
        span_y + 2.0 * margin
    );

    let polyline = |poses: &[Pose2], color: &str| -> String {
        let points: Vec<String> = poses.iter().map(|p| format!("{},{}", p.x(), -p.y())).collect();
        format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" vector-effect=\"non-scaling-stroke\" points=\"{}\"/>\n",
            points.join(" ")
        )
    };

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"{view}\">\n"
    );
    svg.push_str(&polyline(reference, "green"));
    svg.push_str(&polyline(estimate, "black"));
    for &(from, to) in rejected {
        if from >= estimate.len() || to >= estimate.len() {
            continue;
        }
        let (a, b) = (&estimate[from], &estimate[to]);
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"red\" stroke-width=\"1\" vector-effect=\"non-scaling-stroke\"/>\n",
            a.x(),
            -a.y(),
            b.x(),
            -b.y()
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal well-formedness check: tags balance and attributes are
    /// properly quoted.
    fn assert_well_formed_xml(text: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = text;
        while let Some(start) = rest.find('<') {
            let end = rest[start..].find('>').expect("unclosed tag") + start;
            let tag = &rest[start + 1..end];
            assert!(!tag.is_empty(), "empty tag");
            if let Some(name) = tag.strip_prefix('/') {
                let open = stack.pop().unwrap_or_else(|| panic!("stray closer {name}"));
                assert_eq!(open, name, "mismatched close tag");
            } else if !tag.ends_with('/') && !tag.starts_with('?') && !tag.starts_with('!') {
                let name: String = tag
                    .chars()
                    .take_while(|c| !c.is_whitespace())
                    .collect();
                stack.push(name);
            }
            // Quotes inside the tag must pair up.
            assert_eq!(tag.matches('"').count() % 2, 0, "unbalanced quotes in {tag}");
            rest = &rest[end + 1..];
        }
        assert!(stack.is_empty(), "unclosed tags {stack:?}");
    }

    fn line(n: usize) -> Vec<Pose2> {
        (0..n)
            .map(|i| Pose2::from_xy_theta(i as f64, (i % 2) as f64, 0.0))
            .collect()
    }

    #[test]
    fn no_red_segments_without_rejections() {
        let svg = plot_trajectories(&line(5), &line(5), &[]);
        assert!(!svg.contains("stroke=\"red\""));
        assert_well_formed_xml(&svg);
    }

    #[test]
    fn two_pose_trajectory_has_two_polylines() {
        let svg = plot_trajectories(&line(2), &line(2), &[]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_well_formed_xml(&svg);
    }

    #[test]
    fn rejected_edges_drawn_in_red() {
        let svg = plot_trajectories(&line(6), &line(6), &[(0, 4), (1, 5)]);
        assert_eq!(svg.matches("stroke=\"red\"").count(), 2);
        assert_well_formed_xml(&svg);
    }

    #[test]
    fn canvas_is_fixed_and_viewbox_scales() {
        let svg = plot_trajectories(&line(3), &line(3), &[]);
        assert!(svg.contains("width=\"800\""));
        assert!(svg.contains("height=\"600\""));
        assert!(svg.contains("viewBox=\""));
    }
}
