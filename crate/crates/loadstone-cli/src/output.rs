//! CSV and report serialization.
//!
//! Every float is written as `{:.16e}` so files round-trip through f64 and
//! diff cleanly between runs; lines end with `\n` on every platform.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use loadstone_core::{
    ConditionReport, ContinuationResult, Field, Grid, InverseSolution, MmsLevel,
};

/// Resolves `<out_dir>/<prefix>_<name>` and writes `text` there.
pub fn write_file(
    out_dir: &Path,
    prefix: &str,
    name: &str,
    text: &str,
) -> io::Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("{prefix}_{name}"));
    fs::write(&path, text)?;
    Ok(path)
}

/// A space-time field as CSV: the header row carries the time grid, each
/// following row is one `x` node including the two wall nodes.
pub fn field_csv(grid: &Grid, field: &Field) -> String {
    let mut out = String::from("x");
    for j in 0..grid.nt {
        let _ = write!(out, ",t={:.16e}", grid.t(j));
    }
    out.push('\n');
    for i in 0..grid.nx + 2 {
        let _ = write!(out, "{:.16e}", grid.x(i));
        for j in 0..grid.nt {
            let _ = write!(out, ",{:.16e}", field[(i, j)]);
        }
        out.push('\n');
    }
    out
}

/// One line per refinement level; `observed_order` is `NaN` on the first.
pub fn mms_csv(levels: &[MmsLevel], orders: &[f64]) -> String {
    let mut out = String::from("level,hx,ht,err_h,err_u,trace_residual,observed_order\n");
    for (l, o) in levels.iter().zip(orders) {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            l.nx, l.hx, l.ht, l.err_h, l.err_u, l.trace_residual, o
        );
    }
    out
}

fn push_condition_lines(out: &mut String, report: &ConditionReport) {
    for c in &report.checks {
        let _ = writeln!(
            out,
            "  {:<24} {}  (measured {:.6e})",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.measured
        );
    }
    let _ = writeln!(
        out,
        "  {:<24} {}  (advisory, not a gate)",
        "contraction q",
        format_args!("{:.6e}", report.q)
    );
}

/// Human-readable run summary. Deliberately contains no wall-clock times so
/// that repeated runs produce identical bytes.
pub fn solve_report(
    grid: &Grid,
    k_count: usize,
    sol: &InverseSolution,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "inverse source reconstruction");
    let _ = writeln!(out, "  grid: {} x {} (hx {:.6e}, ht {:.6e})", grid.nx, grid.nt, grid.hx, grid.ht);
    let _ = writeln!(out, "  modes carried: {k_count}");
    let _ = writeln!(out);
    let _ = writeln!(out, "solvability conditions");
    push_condition_lines(&mut out, &sol.report);
    let _ = writeln!(out);
    let _ = writeln!(out, "continuation");
    push_continuation_lines(&mut out, &sol.continuation);
    let _ = writeln!(out);
    let _ = writeln!(out, "trace residual: {:.16e}", sol.trace_residual);
    let h_min = sol.h.iter().cloned().fold(f64::INFINITY, f64::min);
    let h_max = sol.h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let _ = writeln!(out, "recovered h range: [{h_min:.16e}, {h_max:.16e}]");
    out
}

fn push_continuation_lines(out: &mut String, cont: &ContinuationResult) {
    for (stage, log) in cont.logs.iter().enumerate() {
        let last = log.records.last();
        let _ = writeln!(
            out,
            "  stage {} (eps {:.1e}): {} sweeps, {}, final diff {:.6e}, ratio {:.6e}",
            stage + 1,
            log.eps,
            log.iterations(),
            if log.converged { "converged" } else { "NOT CONVERGED" },
            last.map_or(f64::NAN, |r| r.diff_norm_2),
            last.map_or(f64::NAN, |r| r.ratio),
        );
    }
    if !cont.stage_diffs.is_empty() {
        let diffs: Vec<String> = cont
            .stage_diffs
            .iter()
            .map(|d| format!("{d:.6e}"))
            .collect();
        let _ = writeln!(out, "  stage-to-stage differences: [{}]", diffs.join(", "));
    }
}

/// Condition summary echoed by `check`, with one verdict line at the end.
pub fn check_summary(report: &ConditionReport) -> String {
    let mut out = String::new();
    push_condition_lines(&mut out, report);
    if report.all_pass() {
        let _ = writeln!(out, "all conditions pass");
    } else {
        let _ = writeln!(
            out,
            "{} condition(s) fail: {}",
            report.failed_names().len(),
            report.failed_names().join(", ")
        );
        let _ = writeln!(
            out,
            "data gates (gamma_magnitude, f0_lower_bound): {}",
            if report.data_gates_pass() {
                "pass, a solve can proceed"
            } else {
                "FAIL, a solve will be rejected"
            }
        );
    }
    out
}
