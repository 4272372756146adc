//! Deterministic SVG rendering of true vs. predicted triangulations.

use s2g_core::geometry::{EdgeLabels, PointSet};

use crate::CliError;

const VIEW: f64 = 512.0;
const MARGIN: f64 = 16.0;

fn project(p: &[f64]) -> (f64, f64) {
    // unit square to a 512x512 viewport, y flipped to screen coordinates
    let scale = VIEW - 2.0 * MARGIN;
    (MARGIN + p[0] * scale, VIEW - MARGIN - p[1] * scale)
}

/// Renders a point set with its true and predicted edges.
///
/// Edges present in both sets, only in the truth, and only in the
/// prediction get three distinguishable strokes; the output bytes are a
/// pure function of the inputs.
pub fn render_triangulation_svg(
    points: &PointSet,
    true_edges: &EdgeLabels,
    pred_edges: &EdgeLabels,
) -> Result<String, CliError> {
    if points.dim() != 2 {
        return Err(CliError::Runtime(format!(
            "render expects 2D points, got {}D",
            points.dim()
        )));
    }
    let n = points.len();
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{VIEW}\" height=\"{VIEW}\" \
         viewBox=\"0 0 {VIEW} {VIEW}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    let line = |i: usize, j: usize, class: &str, color: &str, dash: &str| {
        let (x1, y1) = project(points.point(i));
        let (x2, y2) = project(points.point(j));
        format!(
            "<line class=\"{class}\" x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" \
             stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>\n"
        )
    };
    for i in 0..n {
        for j in i + 1..n {
            match (true_edges.get(i, j), pred_edges.get(i, j)) {
                (true, true) => svg.push_str(&line(i, j, "edge-both", "#2ca02c", "")),
                (true, false) => svg.push_str(&line(
                    i,
                    j,
                    "edge-truth-only",
                    "#1f77b4",
                    " stroke-dasharray=\"6 3\"",
                )),
                (false, true) => svg.push_str(&line(
                    i,
                    j,
                    "edge-pred-only",
                    "#d62728",
                    " stroke-dasharray=\"2 2\"",
                )),
                (false, false) => {}
            }
        }
    }
    for i in 0..n {
        let (x, y) = project(points.point(i));
        svg.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"#222222\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
