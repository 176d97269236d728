//! Static SVG figures: scene trajectories as dot sequences that fade toward
//! the horizon, and horizon-wise error bar charts.
//!
//! Output is plain text built with fixed-precision formatting, so identical
//! inputs give byte-identical files.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::harness::MetricsReport;
use crate::scene::{AgentState, Scene};

const PANEL: f64 = 400.0;
const MARGIN: f64 = 20.0;
const CHART_H: f64 = 240.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One scene with optional predicted futures per agent.
#[derive(Debug, Clone, Copy)]
pub struct ScenePanel<'a> {
    pub scene: &'a Scene,
    pub predictions: Option<&'a [Vec<AgentState>]>,
}

/// Opacity of future dot `k` of `n`, fading from 1 to 0.2.
pub fn fade(k: usize, n: usize) -> f64 {
    if n <= 1 {
        1.0
    } else {
        1.0 - 0.8 * k as f64 / (n - 1) as f64
    }
}

struct View {
    min: [f64; 2],
    scale: f64,
    origin: [f64; 2],
}

impl View {
    fn fit(points: &[[f64; 2]], origin: [f64; 2]) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        if points.is_empty() {
            min = [0.0; 2];
            max = [1.0; 2];
        }
        let span = (max[0] - min[0]).max(max[1] - min[1]).max(1.0);
        Self { min, scale: (PANEL - 2.0 * MARGIN) / span, origin }
    }

    /// SVG coordinates, y pointing up in world space.
    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            self.origin[0] + MARGIN + (p[0] - self.min[0]) * self.scale,
            self.origin[1] + PANEL - MARGIN - (p[1] - self.min[1]) * self.scale,
        )
    }
}

fn dots(out: &mut String, view: &View, class: &str, agent: usize, color: &str, past: &[AgentState], future: &[AgentState], r: f64) {
    let _ = writeln!(out, r#"<g class="{class}" data-agent="{agent}" fill="{color}">"#);
    for s in past {
        let (x, y) = view.map(s.position());
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" opacity="0.35"/>"#, r * 0.6);
    }
    for (k, s) in future.iter().enumerate() {
        let (x, y) = view.map(s.position());
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" opacity="{:.3}"/>"#, fade(k, future.len()));
    }
    out.push_str("</g>\n");
}

fn scene_panel(out: &mut String, panel: &ScenePanel, origin: [f64; 2]) -> Result<()> {
    let scene = panel.scene;
    if let Some(p) = panel.predictions {
        if p.len() != scene.num_agents() {
            return Err(Error::Input(format!(
                "{} predicted agents for scene {} with {} agents",
                p.len(),
                scene.scene_id,
                scene.num_agents()
            )));
        }
    }
    let mut points: Vec<[f64; 2]> = Vec::new();
    for a in &scene.agents {
        points.extend(a.past.iter().chain(&a.future).map(AgentState::position));
    }
    for f in panel.predictions.into_iter().flatten() {
        points.extend(f.iter().map(AgentState::position));
    }
    let view = View::fit(&points, origin);
    let _ = writeln!(
        out,
        r##"<g class="scene" data-scene-id="{}"><rect x="{:.2}" y="{:.2}" width="{PANEL:.2}" height="{PANEL:.2}" fill="none" stroke="#cccccc"/>"##,
        escape(&scene.scene_id),
        origin[0],
        origin[1]
    );
    for (i, a) in scene.agents.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        dots(out, &view, "gt-traj", i, color, &a.past, &a.future, 3.0);
        if let Some(p) = panel.predictions {
            dots(out, &view, "pred-traj", i, "#555555", &[], &p[i], 2.0);
        }
    }
    out.push_str("</g>\n");
    Ok(())
}

fn metrics_chart(out: &mut String, report: &MetricsReport, origin: [f64; 2]) {
    let width = PANEL;
    let max = report
        .horizons
        .iter()
        .flat_map(|h| [h.dpe, h.ate, h.cte])
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let _ = writeln!(out, r#"<g class="metrics" transform="translate({:.2},{:.2})">"#, origin[0], origin[1]);
    let _ = writeln!(out, r##"<line x1="{MARGIN:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000000"/>"##, CHART_H - MARGIN, width - MARGIN, CHART_H - MARGIN);
    let groups = report.horizons.len().max(1) as f64;
    let group_w = (width - 2.0 * MARGIN) / groups;
    let bar_w = group_w / 4.0;
    for (g, h) in report.horizons.iter().enumerate() {
        for (b, (name, v)) in [("dpe", h.dpe), ("ate", h.ate), ("cte", h.cte)].into_iter().enumerate() {
            let bh = (CHART_H - 3.0 * MARGIN) * v / max;
            let x = MARGIN + g as f64 * group_w + (b as f64 + 0.5) * bar_w;
            let y = CHART_H - MARGIN - bh;
            let _ = writeln!(
                out,
                r#"<rect class="bar" data-metric="{name}" data-horizon="{}" x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{bh:.2}" fill="{}"><title>{name} {}s {v:.4}</title></rect>"#,
                h.seconds, PALETTE[b], h.seconds
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}s</text>"#,
            MARGIN + (g as f64 + 0.5) * group_w,
            CHART_H - 4.0,
            h.seconds
        );
    }
    out.push_str("</g>\n");
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scene panels side by side, then the metrics chart below them if given.
pub fn render_svg(panels: &[ScenePanel], metrics: Option<&MetricsReport>) -> Result<String> {
    let width = (panels.len() as f64 * PANEL).max(if metrics.is_some() { PANEL } else { 0.0 });
    let scenes_h = if panels.is_empty() { 0.0 } else { PANEL };
    let height = scenes_h + if metrics.is_some() { CHART_H } else { 0.0 };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    for (k, p) in panels.iter().enumerate() {
        scene_panel(&mut out, p, [k as f64 * PANEL, 0.0])?;
    }
    if let Some(m) = metrics {
        metrics_chart(&mut out, m, [0.0, scenes_h]);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::HorizonMetrics;
    use crate::scene::tests::straight_scene;

    #[test]
    fn empty_input_is_an_empty_canvas() {
        let svg = render_svg(&[], None).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(!svg.contains("<circle"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn counts_sequences_and_fades() {
        let scene = straight_scene(2, 5.0);
        let preds: Vec<Vec<AgentState>> = scene.agents.iter().map(|a| a.future.clone()).collect();
        let svg = render_svg(&[ScenePanel { scene: &scene, predictions: Some(&preds) }], None).unwrap();
        assert_eq!(svg.matches(r#"class="gt-traj""#).count(), 2);
        assert_eq!(svg.matches(r#"class="pred-traj""#).count(), 2);
        assert!(svg.contains(r#"opacity="1.000""#) && svg.contains(r#"opacity="0.200""#));
        assert_eq!(svg, render_svg(&[ScenePanel { scene: &scene, predictions: Some(&preds) }], None).unwrap());
        let short = &preds[..1];
        assert!(render_svg(&[ScenePanel { scene: &scene, predictions: Some(short) }], None).is_err());
    }

    #[test]
    fn chart_has_three_bars_per_horizon() {
        let h = |s: f64| HorizonMetrics { seconds: s, dpe: s, ate: s * 0.8, cte: s * 0.6 };
        let report = MetricsReport {
            dpe: 1.0,
            ate: 0.8,
            cte: 0.6,
            horizons: vec![h(1.0), h(3.0), h(5.0)],
            samples: 10,
            int_acc: None,
            confusion: None,
        };
        let svg = render_svg(&[], Some(&report)).unwrap();
        assert_eq!(svg.matches(r#"class="bar""#).count(), 9);
    }
}
