//! Static SVG strips of stick-figure poses.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::motion::MotionSequence;

pub const OBS_COLOR: &str = "#1f77b4";
pub const FUTURE_COLOR: &str = "#d62728";

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub bones: Vec<(usize, usize)>,
    /// Poses drawn per motion, evenly spaced over its frames.
    pub keyframes: usize,
    /// Frames before this index use the observation color.
    pub obs_frames: usize,
    /// Coordinate indices (0 = x, 1 = y, 2 = z) for the horizontal and vertical axes.
    pub axes: (usize, usize),
    /// Side of one pose cell in pixels.
    pub cell: f64,
}

impl PlotStyle {
    pub fn new(bones: Vec<(usize, usize)>, keyframes: usize, obs_frames: usize) -> Self {
        Self {
            bones,
            keyframes,
            obs_frames,
            axes: (0, 1),
            cell: 120.0,
        }
    }
}

/// Frame indices of the drawn poses.
pub fn keyframe_indices(frames: usize, keyframes: usize) -> Vec<usize> {
    let k = keyframes.min(frames);
    if k <= 1 {
        return vec![0; k];
    }
    (0..k)
        .map(|i| ((i * (frames - 1)) as f64 / (k - 1) as f64).round() as usize)
        .collect()
}

const LABEL_WIDTH: f64 = 140.0;

/// One row per `(label, motion)`; every row shares one spatial scale.
pub fn render_svg(motions: &[(String, MotionSequence)], style: &PlotStyle) -> Result<String> {
    let Some((_, first)) = motions.first() else {
        return Err(Error::Plot("no motions to plot".into()));
    };
    let joints = first.joints();
    if let Some((label, m)) = motions.iter().find(|(_, m)| m.joints() != joints) {
        return Err(Error::Plot(format!(
            "`{label}` has {} joints, expected {joints}",
            m.joints()
        )));
    }
    if style.keyframes == 0 {
        return Err(Error::Plot("at least one keyframe is required".into()));
    }
    if let Some(&(a, b)) = style
        .bones
        .iter()
        .find(|&&(a, b)| a >= joints || b >= joints)
    {
        return Err(Error::Plot(format!("bone {a}-{b} exceeds {joints} joints")));
    }
    let (ax, ay) = style.axes;
    if ax > 2 || ay > 2 {
        return Err(Error::Plot("plot axes must be 0, 1 or 2".into()));
    }

    let rows: Vec<Vec<usize>> = motions
        .iter()
        .map(|(_, m)| keyframe_indices(m.len(), style.keyframes))
        .collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for ((_, m), frames) in motions.iter().zip(&rows) {
        for &f in frames {
            let pose = m.frames().row(f);
            for j in 0..joints {
                for (d, axis) in [ax, ay].into_iter().enumerate() {
                    lo[d] = lo[d].min(pose[3 * j + axis]);
                    hi[d] = hi[d].max(pose[3 * j + axis]);
                }
            }
        }
    }
    let pad = 10.0;
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let scale = (style.cell - 2.0 * pad) / span;

    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width = LABEL_WIDTH + cols as f64 * style.cell;
    let height = motions.len() as f64 * style.cell;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (r, ((label, m), frames)) in motions.iter().zip(&rows).enumerate() {
        let y0 = r as f64 * style.cell;
        let _ = writeln!(
            svg,
            r#"<text x="4" y="{:.2}" font-family="monospace" font-size="11">{}</text>"#,
            y0 + style.cell / 2.0,
            escape(label)
        );
        for (c, &f) in frames.iter().enumerate() {
            let x0 = LABEL_WIDTH + c as f64 * style.cell;
            let color = if f < style.obs_frames {
                OBS_COLOR
            } else {
                FUTURE_COLOR
            };
            let pose = m.frames().row(f);
            let at = |j: usize| {
                (
                    x0 + pad + (pose[3 * j + ax] - lo[0]) * scale,
                    y0 + style.cell - pad - (pose[3 * j + ay] - lo[1]) * scale,
                )
            };
            let _ = writeln!(
                svg,
                r#"<g class="pose" data-frame="{f}" stroke="{color}" fill="{color}" stroke-width="2">"#
            );
            for &(a, b) in &style.bones {
                let ((x1, y1), (x2, y2)) = (at(a), at(b));
                let _ = writeln!(
                    svg,
                    r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}"/>"#
                );
            }
            for j in 0..joints {
                let (x, y) = at(j);
                let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2"/>"#);
            }
            svg.push_str("</g>\n");
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
