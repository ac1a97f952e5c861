//! SVG line charts of a [`SweepGrid`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::rule_calc::{CalcError, SweepGrid};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 120.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;
const Y_TICKS: u32 = 5;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotAxis {
    /// x = C, one series per N.
    CVsR,
    /// x = N, one series per C.
    NVsR,
}

impl std::str::FromStr for PlotAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "c" | "c_vs_r" => Ok(Self::CVsR),
            "n" | "n_vs_r" => Ok(Self::NVsR),
            other => Err(format!("unknown axis `{other}` (expected c or n)")),
        }
    }
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn series(grid: &SweepGrid, axis: PlotAxis) -> Vec<Series> {
    match axis {
        PlotAxis::CVsR => grid
            .n_values()
            .into_iter()
            .map(|n| Series {
                label: format!("N = {n}"),
                points: grid
                    .rows()
                    .iter()
                    .filter(|r| r.n == n)
                    .map(|r| (f64::from(r.c), r.r as f64))
                    .collect(),
            })
            .collect(),
        PlotAxis::NVsR => grid
            .c_values()
            .into_iter()
            .map(|c| Series {
                label: format!("C = {c}"),
                points: grid
                    .rows()
                    .iter()
                    .filter(|r| r.c == c)
                    .map(|r| (f64::from(r.n), r.r as f64))
                    .collect(),
            })
            .collect(),
    }
}

/// Affine map of a closed interval onto a pixel span. A zero-width domain
/// collapses to the span midpoint.
#[derive(Debug, Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        if self.hi == self.lo {
            return (self.from + self.to) / 2.0;
        }
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

/// Renders the grid as an SVG 1.1 document with one `<polyline>` per series.
pub fn emit_plot_svg(grid: &SweepGrid, axis: PlotAxis) -> Result<String, CalcError> {
    if grid.is_empty() {
        return Err(CalcError::EmptyGrid);
    }
    let all = series(grid, axis);
    let xs = all.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    });
    let r_max = grid.rows().iter().map(|r| r.r).max().unwrap_or(1) as f64;

    let plot_right = WIDTH - MARGIN_RIGHT;
    let plot_bottom = HEIGHT - MARGIN_BOTTOM;
    let sx = Scale {
        lo: x_lo,
        hi: x_hi,
        from: MARGIN_LEFT,
        to: plot_right,
    };
    let sy = Scale {
        lo: 0.0,
        hi: r_max,
        from: plot_bottom,
        to: MARGIN_TOP,
    };
    let (x_name, title) = match axis {
        PlotAxis::CVsR => ("C", "C vs. R"),
        PlotAxis::NVsR => ("N", "N vs. R"),
    };

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<title>{title}</title>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );

    // axes
    let _ = writeln!(
        svg,
        r#"<g class="axes" stroke="black" stroke-width="1"><line x1="{MARGIN_LEFT}" y1="{plot_bottom}" x2="{plot_right}" y2="{plot_bottom}"/><line x1="{MARGIN_LEFT}" y1="{plot_bottom}" x2="{MARGIN_LEFT}" y2="{MARGIN_TOP}"/></g>"#
    );
    let _ = writeln!(svg, r#"<g class="ticks" font-family="sans-serif" font-size="11">"#);
    let x_ticks: Vec<u32> = match axis {
        PlotAxis::CVsR => grid.c_values(),
        PlotAxis::NVsR => grid.n_values(),
    };
    for t in x_ticks {
        let x = sx.map(f64::from(t));
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            plot_bottom + 16.0
        );
    }
    for i in 0..=Y_TICKS {
        let v = r_max * f64::from(i) / f64::from(Y_TICKS);
        let y = sy.map(v);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 6.0,
            y + 4.0,
            v.round()
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<text class="x-label" x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="13">{x_name}</text>"#,
        (MARGIN_LEFT + plot_right) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text class="y-label" x="18" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {:.2})">R</text>"#,
        (MARGIN_TOP + plot_bottom) / 2.0,
        (MARGIN_TOP + plot_bottom) / 2.0
    );

    for (i, s) in all.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .map(|&(x, r)| format!("{:.2},{:.2}", sx.map(x), sy.map(r)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-series="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            s.label,
            points.join(" ")
        );
    }

    let _ = writeln!(
        svg,
        r#"<g class="legend" font-family="sans-serif" font-size="11">"#
    );
    for (i, s) in all.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = MARGIN_TOP + 10.0 + 18.0 * i as f64;
        let x = plot_right + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            x + 20.0,
            x + 26.0,
            y + 4.0,
            s.label
        );
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    Ok(svg)
}
