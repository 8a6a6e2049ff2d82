//! SVG plots of a search history: α trajectories per edge and the FIMT
//! timeline. Coordinates are printed with two decimals so output is
//! byte-identical across runs.

use nas_core::history::{AlphaSnapshot, SearchHistory, StepRecord};
use nas_core::space::CELL_TYPE_NAMES;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

const CELL_W: f64 = 160.0;
const CELL_H: f64 = 100.0;
const GAP: f64 = 24.0;
const PAD: f64 = 40.0;

fn polyline(s: &mut String, pts: &[(f64, f64)], color: &str, class: &str) {
    let _ = write!(s, "<polyline class=\"{class}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"");
    for (i, (x, y)) in pts.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:.2},{y:.2}");
    }
    s.push_str("\"/>\n");
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.2}\" height=\"{h:.2}\" viewBox=\"0 0 {w:.2} {h:.2}\" font-family=\"sans-serif\" font-size=\"10\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Grid of activated α over epochs: one subplot per edge, rows are
/// destination states, columns are sources, one line per non-none op.
pub fn alpha_grid_svg(snapshots: &[AlphaSnapshot], cell_type: usize) -> String {
    let Some(first) = snapshots.first() else {
        return header(PAD * 2.0, PAD * 2.0) + "</svg>\n";
    };
    let layout = &first.activated.layout;
    let cols = layout.sources(layout.num_states.saturating_sub(1)).max(1);
    let rows = layout.num_states;
    let legend_h = 20.0;
    let w = PAD * 2.0 + cols as f64 * (CELL_W + GAP) - GAP;
    let h = PAD * 2.0 + legend_h + rows as f64 * (CELL_H + GAP) - GAP;
    let mut s = header(w, h);
    let name = CELL_TYPE_NAMES.get(cell_type).copied().unwrap_or("cell");
    let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\">{name} cell</text>", PAD, PAD * 0.6);

    let ops: Vec<usize> = layout.selectable_ops().collect();
    for (i, &op) in ops.iter().enumerate() {
        let x = PAD + i as f64 * 90.0;
        let y = PAD + 8.0;
        let color = PALETTE[op % PALETTE.len()];
        let _ = writeln!(s, "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/>", y - 8.0);
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{y:.2}\">{}</text>", x + 14.0, layout.ops[op].name());
    }

    let last_epoch = snapshots.iter().map(|sn| sn.epoch).max().unwrap_or(0).max(1) as f64;
    for (state, source) in layout.edges() {
        let x0 = PAD + source as f64 * (CELL_W + GAP);
        let y0 = PAD + legend_h + state as f64 * (CELL_H + GAP);
        let _ = writeln!(s, "<g class=\"edge\" data-state=\"{state}\" data-source=\"{source}\">");
        let _ = writeln!(
            s,
            "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{CELL_W:.2}\" height=\"{CELL_H:.2}\" fill=\"none\" stroke=\"#999\"/>"
        );
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\">{source} → s{state}</text>", x0 + 4.0, y0 + 12.0);
        for &op in &ops {
            let pts: Vec<(f64, f64)> = snapshots
                .iter()
                .map(|sn| {
                    let v = sn.activated.get(cell_type, state, source, op).clamp(0.0, 1.0);
                    (x0 + CELL_W * sn.epoch as f64 / last_epoch, y0 + CELL_H * (1.0 - v))
                })
                .collect();
            polyline(&mut s, &pts, PALETTE[op % PALETTE.len()], "alpha");
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

/// FIMT and threshold on a log scale over w-steps; each fire is a circle.
pub fn fimt_timeline_svg(steps: &[StepRecord]) -> String {
    let (w, h) = (720.0, 300.0);
    let mut s = header(w, h);
    let logs: Vec<f64> = steps
        .iter()
        .flat_map(|r| [r.fimt, r.threshold])
        .filter(|v| *v > 0.0 && v.is_finite())
        .map(f64::log10)
        .collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else if lo.is_finite() { (lo - 1.0, lo + 1.0) } else { (0.0, 1.0) };
    let n = steps.len().saturating_sub(1).max(1) as f64;
    let (pw, ph) = (w - 2.0 * PAD, h - 2.0 * PAD);
    let xy = |i: usize, v: f64| -> Option<(f64, f64)> {
        (v > 0.0 && v.is_finite()).then(|| (PAD + pw * i as f64 / n, PAD + ph * (1.0 - (v.log10() - lo) / (hi - lo))))
    };
    let _ = writeln!(s, "<rect x=\"{PAD:.2}\" y=\"{PAD:.2}\" width=\"{pw:.2}\" height=\"{ph:.2}\" fill=\"none\" stroke=\"#999\"/>");
    let _ = writeln!(s, "<text x=\"{PAD:.2}\" y=\"{:.2}\">log10 FIMT (blue), threshold (orange), α-steps (dots)</text>", PAD * 0.6);
    let _ = writeln!(s, "<text x=\"4\" y=\"{:.2}\">{hi:.2}</text>", PAD + 4.0);
    let _ = writeln!(s, "<text x=\"4\" y=\"{:.2}\">{lo:.2}</text>", PAD + ph);
    let fimt: Vec<_> = steps.iter().enumerate().filter_map(|(i, r)| xy(i, r.fimt)).collect();
    let thr: Vec<_> = steps.iter().enumerate().filter_map(|(i, r)| xy(i, r.threshold)).collect();
    polyline(&mut s, &fimt, PALETTE[0], "fimt");
    polyline(&mut s, &thr, PALETTE[1], "threshold");
    for (i, r) in steps.iter().enumerate().filter(|(_, r)| r.fired) {
        let (x, y) = xy(i, r.fimt).unwrap_or((PAD + pw * i as f64 / n, PAD + ph));
        let _ = writeln!(s, "<circle class=\"fire\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2\" fill=\"{}\"/>", PALETTE[3]);
    }
    s.push_str("</svg>\n");
    s
}

/// Reads a history directory and writes `alpha_<cell>.svg` per cell type and
/// `fimt.svg` into `out_dir`. Returns the written paths.
pub fn plot_history(history_dir: &Path, out_dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let history = SearchHistory::read_dir(history_dir)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let cell_types = history.snapshots.first().map_or(0, |s| s.activated.cells.len());
    for ct in 0..cell_types {
        let name = CELL_TYPE_NAMES.get(ct).copied().unwrap_or("cell");
        let path = out_dir.join(format!("alpha_{name}.svg"));
        std::fs::write(&path, alpha_grid_svg(&history.snapshots, ct))?;
        written.push(path);
    }
    let path = out_dir.join("fimt.svg");
    std::fs::write(&path, fimt_timeline_svg(&history.steps))?;
    written.push(path);
    Ok(written)
}
