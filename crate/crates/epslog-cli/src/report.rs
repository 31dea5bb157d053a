//! Deterministic writers for the output artifacts: CSV for tabular plot
//! data, JSON for scalar summaries, and per-field CSV matrices for path
//! dumps.
//!
//! Every artifact embeds the configuration digest and the seed — CSV in a
//! leading `#` comment, JSON as ordinary fields — so any file on disk can
//! be traced back to the exact run that produced it. All numbers are
//! rendered with the shortest representation that round-trips to the same
//! `f64`, which makes the writers bit-stable: two runs that compute
//! identical values produce byte-identical files.
//!
//! Column orders are part of the interface and are pinned by tests:
//!
//! - bounds:    `eps,u_low,se_low,u_up,se_up,u_hat,ratio_low,ratio_up,stop_frac,primal_violation_frac`
//! - expansion: `eps,u_hat,ce_hat,ce_exact,violation_frac`
//! - price:     `eps,ce_hat,ce_exact`
//! - matrices:  one row per path, one column per grid point, no header row
//!   beyond the `#` comment naming the field and grid.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use epslog_core::bounds::BoundsReport;
use epslog_core::expansion::ExpansionReport;
use epslog_core::kw::Moments;
use epslog_core::paths::TimeGrid;
use epslog_core::{Error, ResidualSummary, Result};
use serde::Serialize;

/// Run identity stamped into every artifact.
#[derive(Debug, Clone, Copy)]
pub struct Meta<'a> {
    /// SHA-256 digest of the canonical configuration.
    pub config_hash: &'a str,
    /// Seed of the generating ensemble.
    pub seed: u64,
}

/// Shortest decimal representation that parses back to the same `f64`;
/// the single number format used across all artifacts.
pub fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

fn csv_header(meta: &Meta) -> String {
    format!("# config_hash={} seed={}\n", meta.config_hash, meta.seed)
}

fn json_line<D: Serialize>(doc: &D) -> String {
    let mut s = serde_json::to_string_pretty(doc)
        .expect("artifact documents contain only strings, booleans, and finite numbers");
    s.push('\n');
    s
}

/// Scalar moment summary with the field set
/// `{a1, a2, a3, a4, g, n0, p0, se_*, backend, seed}` plus the
/// configuration digest.
#[derive(Serialize)]
struct MomentsDoc<'a> {
    config_hash: &'a str,
    seed: u64,
    backend: &'a str,
    a1: f64,
    a2: f64,
    a3: f64,
    a4: f64,
    g: f64,
    n0: f64,
    p0: f64,
    se_a1: f64,
    se_a2: f64,
    se_a3: f64,
    se_a4: f64,
    se_g: f64,
}

/// Renders a moment summary as pretty-printed JSON.
pub fn moments_json(m: &Moments<f64>, meta: &Meta) -> String {
    json_line(&MomentsDoc {
        config_hash: meta.config_hash,
        seed: m.seed,
        backend: &m.backend,
        a1: m.a1,
        a2: m.a2,
        a3: m.a3,
        a4: m.a4,
        g: m.g,
        n0: m.n0,
        p0: m.p0,
        se_a1: m.se_a1,
        se_a2: m.se_a2,
        se_a3: m.se_a3,
        se_a4: m.se_a4,
        se_g: m.se_g,
    })
}

/// One row of the bounds table in its JSON rendering.
#[derive(Serialize)]
struct BoundsRowDoc {
    eps: f64,
    u_low: f64,
    se_low: f64,
    u_up: f64,
    se_up: f64,
    u_hat: f64,
    ratio_low: f64,
    ratio_up: f64,
    stop_frac: f64,
    primal_violation_frac: f64,
}

/// One row of the expansion table in its JSON rendering.
#[derive(Serialize)]
struct ExpansionRowDoc {
    eps: f64,
    u_hat: f64,
    ce_hat: f64,
    ce_exact: f64,
    violation_frac: f64,
}

/// One row of the price table in its JSON rendering.
#[derive(Serialize)]
struct PriceRowDoc {
    eps: f64,
    ce_hat: f64,
    ce_exact: f64,
}

/// Envelope for JSON tables: identity first, then the rows.
#[derive(Serialize)]
struct TableDoc<'a, R: Serialize> {
    config_hash: &'a str,
    seed: u64,
    rows: Vec<R>,
}

/// Renders the primal/dual bound table as CSV.
pub fn bounds_csv(report: &BoundsReport<f64>, meta: &Meta) -> String {
    let mut s = csv_header(meta);
    s.push_str(
        "eps,u_low,se_low,u_up,se_up,u_hat,ratio_low,ratio_up,stop_frac,primal_violation_frac\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_f(r.eps),
            fmt_f(r.u_low),
            fmt_f(r.se_low),
            fmt_f(r.u_up),
            fmt_f(r.se_up),
            fmt_f(r.u_hat),
            fmt_f(r.ratio_low),
            fmt_f(r.ratio_up),
            fmt_f(r.stop_frac),
            fmt_f(r.primal_violation_frac),
        );
    }
    s
}

/// Renders the primal/dual bound table as JSON.
pub fn bounds_json(report: &BoundsReport<f64>, meta: &Meta) -> String {
    json_line(&TableDoc {
        config_hash: meta.config_hash,
        seed: meta.seed,
        rows: report
            .rows
            .iter()
            .map(|r| BoundsRowDoc {
                eps: r.eps,
                u_low: r.u_low,
                se_low: r.se_low,
                u_up: r.u_up,
                se_up: r.se_up,
                u_hat: r.u_hat,
                ratio_low: r.ratio_low,
                ratio_up: r.ratio_up,
                stop_frac: r.stop_frac,
                primal_violation_frac: r.primal_violation_frac,
            })
            .collect(),
    })
}

/// Renders the value/certainty-equivalent table as CSV.
pub fn expansion_csv(report: &ExpansionReport<f64>, meta: &Meta) -> String {
    let mut s = csv_header(meta);
    s.push_str("eps,u_hat,ce_hat,ce_exact,violation_frac\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_f(r.eps),
            fmt_f(r.u_hat),
            fmt_f(r.ce_hat),
            fmt_f(r.ce_exact),
            fmt_f(r.violation_frac),
        );
    }
    s
}

/// Renders the value/certainty-equivalent table as JSON.
pub fn expansion_json(report: &ExpansionReport<f64>, meta: &Meta) -> String {
    json_line(&TableDoc {
        config_hash: meta.config_hash,
        seed: meta.seed,
        rows: report
            .rows
            .iter()
            .map(|r| ExpansionRowDoc {
                eps: r.eps,
                u_hat: r.u_hat,
                ce_hat: r.ce_hat,
                ce_exact: r.ce_exact,
                violation_frac: r.violation_frac,
            })
            .collect(),
    })
}

/// Renders the certainty-equivalent (price) table as CSV.
pub fn price_csv(report: &ExpansionReport<f64>, meta: &Meta) -> String {
    let mut s = csv_header(meta);
    s.push_str("eps,ce_hat,ce_exact\n");
    for r in &report.rows {
        let _ = writeln!(s, "{},{},{}", fmt_f(r.eps), fmt_f(r.ce_hat), fmt_f(r.ce_exact));
    }
    s
}

/// Renders the certainty-equivalent (price) table as JSON.
pub fn price_json(report: &ExpansionReport<f64>, meta: &Meta) -> String {
    json_line(&TableDoc {
        config_hash: meta.config_hash,
        seed: meta.seed,
        rows: report
            .rows
            .iter()
            .map(|r| PriceRowDoc {
                eps: r.eps,
                ce_hat: r.ce_hat,
                ce_exact: r.ce_exact,
            })
            .collect(),
    })
}

/// Residual-analysis verdict with its component checks.
#[derive(Serialize)]
struct ResidualDoc<'a> {
    config_hash: &'a str,
    seed: u64,
    pass: bool,
    ratio_low_decreasing: bool,
    ratio_up_decreasing: bool,
    gap_decreasing: bool,
    final_within_half: bool,
    sandwich_ok: bool,
    gap_ratios: &'a [f64],
}

/// Renders the residual-analysis verdict as JSON.
pub fn residual_json(summary: &ResidualSummary, meta: &Meta) -> String {
    json_line(&ResidualDoc {
        config_hash: meta.config_hash,
        seed: meta.seed,
        pass: summary.pass,
        ratio_low_decreasing: summary.ratio_low_decreasing,
        ratio_up_decreasing: summary.ratio_up_decreasing,
        gap_decreasing: summary.gap_decreasing,
        final_within_half: summary.final_within_half,
        sandwich_ok: summary.sandwich_ok,
        gap_ratios: &summary.gap_ratios,
    })
}

/// Renders one per-path field as a CSV matrix: a `#` comment naming the
/// field, grid, and seed, then one row per path with one column per grid
/// point.
pub fn matrix_csv<'a, F>(
    field: &str,
    n_rows: usize,
    row: F,
    grid: &TimeGrid<f64>,
    meta: &Meta,
) -> String
where
    F: Fn(usize) -> &'a [f64],
{
    let mut s = format!(
        "# config_hash={} seed={} field={} dt={} n_steps={} n_paths={}\n",
        meta.config_hash,
        meta.seed,
        field,
        fmt_f(grid.dt),
        grid.n_steps,
        n_rows,
    );
    let mut expect: Option<usize> = None;
    for p in 0..n_rows {
        let values = row(p);
        match expect {
            None => expect = Some(values.len()),
            Some(e) => debug_assert_eq!(values.len(), e, "matrix rows must share one length"),
        }
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&fmt_f(*v));
        }
        s.push('\n');
    }
    s
}

/// Writes one artifact under `dir`, creating the directory if needed, and
/// returns the full path.
pub fn write_artifact(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use epslog_core::bounds::BoundsRow;
    use epslog_core::expansion::ExpansionRow;

    const META: Meta = Meta {
        config_hash: "abc123",
        seed: 7,
    };

    fn tiny_bounds() -> BoundsReport<f64> {
        BoundsReport {
            rows: vec![BoundsRow {
                eps: 0.2,
                u_low: -0.0125,
                se_low: 0.001,
                u_up: -0.012,
                se_up: 0.002,
                u_hat: -0.0124,
                ratio_low: 0.5,
                ratio_up: 0.25,
                stop_frac: 0.0,
                primal_violation_frac: 0.0,
            }],
        }
    }

    fn tiny_expansion() -> ExpansionReport<f64> {
        ExpansionReport {
            rows: vec![ExpansionRow {
                eps: 0.1,
                u_hat: -0.00625,
                ce_hat: -0.0062,
                ce_exact: -0.0063,
                violation_frac: 0.0,
            }],
        }
    }

    #[test]
    fn number_formatting_is_shortest_and_round_trips() {
        assert_eq!(fmt_f(0.1), "0.1");
        assert_eq!(fmt_f(1.0), "1.0");
        assert_eq!(fmt_f(1e-4), "0.0001");
        let x = std::f64::consts::PI / 3.0;
        let back: f64 = fmt_f(x).parse().expect("parses back");
        assert_eq!(back.to_bits(), x.to_bits(), "bit-exact round trip");
    }

    #[test]
    fn the_bounds_csv_schema_is_pinned() {
        let got = bounds_csv(&tiny_bounds(), &META);
        let want = "# config_hash=abc123 seed=7\n\
eps,u_low,se_low,u_up,se_up,u_hat,ratio_low,ratio_up,stop_frac,primal_violation_frac\n\
0.2,-0.0125,0.001,-0.012,0.002,-0.0124,0.5,0.25,0.0,0.0\n";
        assert_eq!(got, want, "exact bytes of the bounds table");
    }

    #[test]
    fn the_expansion_and_price_csv_schemas_are_pinned() {
        let exp = expansion_csv(&tiny_expansion(), &META);
        let want_exp = "# config_hash=abc123 seed=7\n\
eps,u_hat,ce_hat,ce_exact,violation_frac\n\
0.1,-0.00625,-0.0062,-0.0063,0.0\n";
        assert_eq!(exp, want_exp, "exact bytes of the expansion table");

        let price = price_csv(&tiny_expansion(), &META);
        let want_price = "# config_hash=abc123 seed=7\neps,ce_hat,ce_exact\n0.1,-0.0062,-0.0063\n";
        assert_eq!(price, want_price, "exact bytes of the price table");
    }

    #[test]
    fn moments_json_carries_the_declared_fields_in_fixed_order() {
        let m = Moments::<f64> {
            a1: 0.0625,
            a2: 0.0135,
            a3: 1e-3,
            a4: 4e-4,
            g: -2e-5,
            n0: 0.0625,
            p0: 0.0135,
            se_a1: 1e-4,
            se_a2: 2e-4,
            se_a3: 3e-4,
            se_a4: 4e-4,
            se_g: 5e-4,
            backend: "closed-form".to_string(),
            seed: 7,
        };
        let text = moments_json(&m, &META);
        let doc: serde_json::Value = serde_json::from_str(&text).expect("valid json");
        for field in [
            "config_hash",
            "seed",
            "backend",
            "a1",
            "a2",
            "a3",
            "a4",
            "g",
            "n0",
            "p0",
            "se_a1",
            "se_a2",
            "se_a3",
            "se_a4",
            "se_g",
        ] {
            assert!(doc.get(field).is_some(), "field {field} present");
        }
        assert_eq!(doc["backend"], "closed-form");
        assert_eq!(doc["seed"], 7);
        let a1_at = text.find("\"a1\"").expect("a1 rendered");
        let se_at = text.find("\"se_a1\"").expect("se_a1 rendered");
        assert!(a1_at < se_at, "estimates precede their standard errors");
    }

    #[test]
    fn json_tables_wrap_rows_with_the_run_identity() {
        let text = bounds_json(&tiny_bounds(), &META);
        let doc: serde_json::Value = serde_json::from_str(&text).expect("valid json");
        assert_eq!(doc["config_hash"], "abc123");
        assert_eq!(doc["rows"][0]["eps"], 0.2);
        assert_eq!(doc["rows"][0]["primal_violation_frac"], 0.0);

        let text = expansion_json(&tiny_expansion(), &META);
        let doc: serde_json::Value = serde_json::from_str(&text).expect("valid json");
        assert_eq!(doc["rows"][0]["ce_exact"], -0.0063);

        let text = price_json(&tiny_expansion(), &META);
        let doc: serde_json::Value = serde_json::from_str(&text).expect("valid json");
        assert_eq!(doc["rows"][0]["ce_hat"], -0.0062);
        assert!(doc["rows"][0].get("u_hat").is_none(), "price rows carry no value column");
    }

    #[test]
    fn matrices_render_one_path_per_row_with_a_grid_note() {
        let grid = TimeGrid::<f64>::new(0.5, 1.0);
        let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let text = matrix_csv("z", 2, |p| &data[p * 3..(p + 1) * 3], &grid, &META);
        let want = "# config_hash=abc123 seed=7 field=z dt=0.5 n_steps=2 n_paths=2\n\
1.0,2.0,3.0\n4.0,5.0,6.0\n";
        assert_eq!(text, want, "exact bytes of a 2x3 matrix dump");
    }

    #[test]
    fn artifacts_land_under_a_created_directory() {
        let dir = std::env::temp_dir().join(format!("epslog-report-{}", std::process::id()));
        let nested = dir.join("deep");
        let path = write_artifact(&nested, "t.csv", "x\n").expect("writes");
        assert_eq!(std::fs::read_to_string(&path).expect("readable"), "x\n");
        std::fs::remove_dir_all(&dir).expect("cleanup");
    }
}
