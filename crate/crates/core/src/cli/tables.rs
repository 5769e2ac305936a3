//! Fixed-schema CSV rendering. Every real number goes through
//! [`format_value`], so identical inputs give identical bytes.

use crate::diagnostics::{DiagnosticsReport, EntropyKind, LadderRung};

pub use super::snapshot::format_value;

/// Comma-joined cells plus a newline. Cells never contain commas.
pub fn csv_line<I, S>(cells: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut line = cells
        .into_iter()
        .map(|c| c.as_ref().to_string())
        .collect::<Vec<_>>()
        .join(",");
    line.push('\n');
    line
}

/// Column names of the diagnostics time series, in output order.
pub fn diagnostics_header(kinds: &[EntropyKind], ladder_len: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["step", "time", "mass"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend(kinds.iter().map(|k| format!("entropy_{}", k.tag())));
    cols.extend(kinds.iter().map(|k| format!("dissipation_{}", k.tag())));
    cols.extend(
        [
            "c_minus",
            "c_plus",
            "flatness_g",
            "g_marginal_deviation",
            "firing_flux",
            "k1",
            "k2",
            "k3",
            "f2",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    cols.extend((0..ladder_len).map(|k| format!("d_q_{k}")));
    cols
}

pub fn diagnostics_row(report: &DiagnosticsReport) -> Vec<String> {
    let mut cells = vec![
        report.step.to_string(),
        format_value(report.time),
        format_value(report.mass),
    ];
    cells.extend(report.entropy.iter().map(|&x| format_value(x)));
    cells.extend(report.dissipation.iter().map(|&x| format_value(x)));
    let f = &report.functionals;
    cells.extend(
        [
            report.c_minus,
            report.c_plus,
            report.flatness_g,
            report.g_marginal_deviation,
            report.firing_flux,
            f.k1,
            f.k2,
            f.k3,
            f.f2,
        ]
        .iter()
        .map(|&x| format_value(x)),
    );
    cells.extend(report.d_q.iter().map(|&x| format_value(x)));
    cells
}

pub fn diagnostics_csv(
    kinds: &[EntropyKind],
    ladder_len: usize,
    series: &[DiagnosticsReport],
) -> String {
    let mut out = csv_line(diagnostics_header(kinds, ladder_len));
    for report in series {
        out.push_str(&csv_line(diagnostics_row(report)));
    }
    out
}

pub fn ladder_csv(rungs: &[LadderRung]) -> String {
    let mut out = csv_line(["k", "q", "d_q", "d_q_root"]);
    for (k, r) in rungs.iter().enumerate() {
        out.push_str(&csv_line([
            k.to_string(),
            format_value(r.q),
            format_value(r.d_q),
            format_value(r.root),
        ]));
    }
    out
}
