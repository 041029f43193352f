//! Aligned text tables.

use std::fmt::Write;

use hzr_core::eval::format_size;
use hzr_core::model::{ParamCount, SummaryRow};
use hzr_core::search::TrialResult;

/// Left-aligns the first `left` columns and right-aligns the rest.
fn render(header: &[&str], rows: &[Vec<String>], left: usize) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let header: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    for row in std::iter::once(&header).chain(rows) {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, &w))| {
                let pad = " ".repeat(w - cell.chars().count());
                if i < left {
                    format!("{cell}{pad}")
                } else {
                    format!("{pad}{cell}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

pub fn describe(rows: &[SummaryRow], count: &ParamCount, macs: u64) -> String {
    let arch: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.input.to_string(), r.layer.clone(), opt(r.t), r.c.to_string(), r.n.to_string(), opt(r.s)])
        .collect();
    let mut out = render(&["Input", "Layer", "t", "c", "n", "s"], &arch, 2);
    out.push('\n');
    let params: Vec<Vec<String>> = count
        .layers
        .iter()
        .map(|l| {
            vec![
                l.layer.clone(),
                l.weights.to_string(),
                l.biases.to_string(),
                l.bn_params.to_string(),
                l.buffers.to_string(),
                l.stored().to_string(),
            ]
        })
        .collect();
    out.push_str(&render(&["Layer", "weights", "biases", "bn", "buffers", "stored"], &params, 1));
    let _ = writeln!(
        out,
        "\ntrainable {}  stored {}  footprint {} ({} bytes)  MACs {}  largest {}",
        count.trainable,
        count.total,
        format_size(count.footprint_bytes()),
        count.footprint_bytes(),
        macs,
        count.largest_layer
    );
    out
}

pub fn trials(ranked: &[TrialResult]) -> String {
    let rows: Vec<Vec<String>> = ranked
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let pct = |v: f64| format!("{:.2}%", 100.0 * v);
            match &t.error {
                None => vec![
                    (i + 1).to_string(),
                    t.seed.to_string(),
                    pct(t.top1),
                    pct(t.top4),
                    pct(t.top10),
                    format_size(t.footprint_bytes),
                    format!("{:.1}s", t.wall_time),
                ],
                Some(e) => vec![(i + 1).to_string(), t.seed.to_string(), format!("failed: {e}")],
            }
        })
        .collect();
    render(&["rank", "seed", "CR(1)", "CR(4)", "CR(10)", "size", "time"], &rows, 0)
}
