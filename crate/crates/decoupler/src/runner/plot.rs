//! Training-curve rendering: median lines and interquartile bands on a
//! log-scale infidelity axis, written as plain SVG text.

use crate::error::{Error, Result};
use crate::optimize::TrainingTrace;

/// Traces that share a phase-name sequence (i.e. came from the same kind of
/// run) and are aggregated into one band.
pub struct TraceGroup {
    pub label: String,
    pub traces: Vec<TrainingTrace>,
}

/// Groups traces by their sequence of phase names, preserving first-seen
/// order, so mixed inputs (say staged runs and a single-phase baseline)
/// render as separate bands.
pub fn group_traces(traces: Vec<TrainingTrace>) -> Result<Vec<TraceGroup>> {
    let mut groups: Vec<TraceGroup> = Vec::new();
    for trace in traces {
        if trace.is_empty() {
            return Err(Error::InvalidArgument("cannot plot an empty trace".into()));
        }
        let mut names: Vec<&str> = Vec::new();
        for row in trace.rows() {
            if names.last() != Some(&row.phase.as_str()) {
                names.push(&row.phase);
            }
        }
        let label = names.join("+");
        match groups.iter_mut().find(|g| g.label == label) {
            Some(group) => group.traces.push(trace),
            None => groups.push(TraceGroup { label, traces: vec![trace] }),
        }
    }
    Ok(groups)
}

/// Linear-interpolation quantile of a sorted slice.
pub(crate) fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-iteration (q1, median, q3) of infidelity across a group's traces,
/// padding shorter traces with their final value.
fn infidelity_quartiles(group: &TraceGroup) -> Vec<(f64, f64, f64)> {
    let len = group.traces.iter().map(TrainingTrace::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let mut values: Vec<f64> = group
            .traces
            .iter()
            .map(|trace| {
                let rows = trace.rows();
                let row = rows.get(t).unwrap_or_else(|| rows.last().unwrap());
                (1.0 - row.fidelity).max(FLOOR)
            })
            .collect();
        values.sort_by(f64::total_cmp);
        out.push((
            quantile(&values, 0.25),
            quantile(&values, 0.5),
            quantile(&values, 0.75),
        ));
    }
    out
}

/// Median iteration offset (within the group's own row numbering) at which
/// each phase after the first begins.
fn phase_boundaries(group: &TraceGroup) -> Vec<f64> {
    let mut per_phase: Vec<Vec<f64>> = Vec::new();
    for trace in &group.traces {
        let mut starts = Vec::new();
        let mut last: Option<&str> = None;
        for (offset, row) in trace.rows().iter().enumerate() {
            if last != Some(&row.phase) {
                starts.push(offset as f64);
                last = Some(&row.phase);
            }
        }
        for (k, start) in starts.into_iter().enumerate().skip(1) {
            if per_phase.len() < k {
                per_phase.push(Vec::new());
            }
            per_phase[k - 1].push(start);
        }
    }
    per_phase
        .into_iter()
        .map(|mut starts| {
            starts.sort_by(f64::total_cmp);
            quantile(&starts, 0.5)
        })
        .collect()
}

const FLOOR: f64 = 1e-16;
const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 34.0;
const BOTTOM: f64 = 52.0;
const PALETTE: [&str; 6] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders all groups into one SVG document: shaded interquartile bands,
/// median lines, dashed phase-boundary markers, log-scale infidelity axis.
pub fn render_svg(groups: &[TraceGroup]) -> Result<String> {
    if groups.is_empty() || groups.iter().any(|g| g.traces.is_empty()) {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let stats: Vec<Vec<(f64, f64, f64)>> = groups.iter().map(infidelity_quartiles).collect();
    let max_len = stats.iter().map(Vec::len).max().unwrap_or(1).max(2);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for group in &stats {
        for &(q1, _, q3) in group {
            lo = lo.min(q1);
            hi = hi.max(q3);
        }
    }
    let exp_lo = lo.log10().floor();
    let exp_hi = (hi.log10().ceil()).max(exp_lo + 1.0);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x_of = |t: f64| LEFT + plot_w * t / (max_len - 1) as f64;
    let y_of = |v: f64| {
        let e = v.max(FLOOR).log10().clamp(exp_lo, exp_hi);
        TOP + plot_h * (exp_hi - e) / (exp_hi - exp_lo)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));

    // gridlines and y tick labels, one per decade
    let mut e = exp_lo;
    while e <= exp_hi + 0.5 {
        let y = y_of(10f64.powf(e));
        svg.push_str(&format!(
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            WIDTH - RIGHT
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">1e{}</text>\n",
            LEFT - 8.0,
            y + 4.0,
            e as i64
        ));
        e += 1.0;
    }
    // x ticks
    let x_step = ((max_len as f64 / 6.0) / 50.0).ceil().max(1.0) * 50.0;
    let mut t = 0.0;
    while t < max_len as f64 {
        let x = x_of(t);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
             stroke=\"#bbbbbb\" stroke-width=\"1\"/>\n",
            HEIGHT - BOTTOM,
            HEIGHT - BOTTOM + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            HEIGHT - BOTTOM + 20.0,
            t as u64
        ));
        t += x_step;
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">iteration</text>\n",
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {:.2})\">1 - fidelity</text>\n",
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    ));

    for (gi, (group, quartiles)) in groups.iter().zip(&stats).enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        // interquartile band: q3 forward, q1 back
        let mut band = String::from("M");
        for (t, &(_, _, q3)) in quartiles.iter().enumerate() {
            band.push_str(&format!(" {:.2},{:.2}", x_of(t as f64), y_of(q3)));
        }
        for (t, &(q1, _, _)) in quartiles.iter().enumerate().rev() {
            band.push_str(&format!(" {:.2},{:.2}", x_of(t as f64), y_of(q1)));
        }
        band.push_str(" Z");
        svg.push_str(&format!(
            "<path d=\"{band}\" fill=\"{color}\" fill-opacity=\"0.18\" stroke=\"none\"/>\n"
        ));
        let mut line = String::new();
        for (t, &(_, median, _)) in quartiles.iter().enumerate() {
            line.push_str(&format!("{:.2},{:.2} ", x_of(t as f64), y_of(median)));
        }
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            line.trim_end()
        ));
        for boundary in phase_boundaries(group) {
            let x = x_of(boundary);
            svg.push_str(&format!(
                "<line x1=\"{x:.2}\" y1=\"{TOP}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
                 stroke=\"{color}\" stroke-width=\"1\" stroke-dasharray=\"5,4\"/>\n",
                HEIGHT - BOTTOM
            ));
        }
        // legend entry
        let ly = TOP + 16.0 + 20.0 * gi as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" \
             stroke=\"{color}\" stroke-width=\"3\"/>\n",
            WIDTH - RIGHT - 190.0,
            WIDTH - RIGHT - 160.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
            WIDTH - RIGHT - 152.0,
            ly + 4.0,
            escape_xml(&group.label)
        ));
    }

    // frame
    svg.push_str(&format!(
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{plot_w:.2}\" height=\"{plot_h:.2}\" \
         fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n"
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}
