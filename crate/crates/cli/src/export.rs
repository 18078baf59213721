//! Trace export: a CSV table plus a JSON sidecar.
//!
//! Columns, in order: `tick`, `formation_L1…L<M>`, `containment_F1…F<N>`,
//! `observer_F1…F<N>`, `observer_L1…L<M>`, `phases`. The phase column holds
//! one letter per agent (followers, then leaders): `C` collecting, `V`
//! iterating, `K` converged, `M` model gain, `I` idle. When states are
//! recorded, `x_T_1…`, `x_F1_1…`, `x_L1_1…` columns are appended.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pfcc_core::simulation::TraceLog;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::scenario::{node_name, ScenarioFile};

/// 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn header(n_followers: usize, n_leaders: usize, n: usize, states: bool) -> Vec<String> {
    let mut cols = vec!["tick".to_string()];
    cols.extend((1..=n_leaders).map(|q| format!("formation_L{q}")));
    cols.extend((1..=n_followers).map(|i| format!("containment_F{i}")));
    cols.extend((1..=n_followers).map(|i| format!("observer_F{i}")));
    cols.extend((1..=n_leaders).map(|q| format!("observer_L{q}")));
    cols.push("phases".into());
    if states {
        let names = std::iter::once("T".to_string())
            .chain((1..=n_followers).map(|i| format!("F{i}")))
            .chain((1..=n_leaders).map(|q| format!("L{q}")));
        for name in names {
            cols.extend((1..=n).map(|k| format!("x_{name}_{k}")));
        }
    }
    cols
}

pub fn trace_csv(log: &TraceLog, n_followers: usize, n_leaders: usize, n: usize, states: bool) -> String {
    let mut out = header(n_followers, n_leaders, n, states).join(",");
    out.push('\n');
    for r in &log.records {
        let mut fields = vec![r.tick.to_string()];
        fields.extend(r.formation_errors.iter().map(|&v| fmt_num(v)));
        fields.extend(r.containment_errors.iter().map(|&v| fmt_num(v)));
        fields.extend(r.observer_errors.iter().map(|&v| fmt_num(v)));
        fields.push(r.phases.iter().map(|p| p.code()).collect());
        if let Some(xs) = &r.states {
            fields.extend(xs.iter().flat_map(|x| x.iter().map(|&v| fmt_num(v))));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn config_hash(scenario: &ScenarioFile) -> String {
    Sha256::digest(scenario.to_json().as_bytes())
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub fn sidecar(scenario: &ScenarioFile, log: &TraceLog, error: Option<&str>) -> serde_json::Value {
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": config_hash(scenario),
        "seed": scenario.seed,
        "mode": scenario.mode,
        "horizon": scenario.horizon,
        "sample_interval": scenario.sample_interval,
        "records": log.records.len(),
        "status": if error.is_some() { "failed" } else { "ok" },
        "error": error,
        "convergence": log.convergence.iter().map(|c| json!({
            "agent": node_name(c.node),
            "tick": c.tick,
            "iterations": c.iterations,
        })).collect::<Vec<_>>(),
    })
}

pub struct ExportPaths {
    pub trace: PathBuf,
    pub meta: PathBuf,
}

pub fn write_exports(
    dir: &Path,
    scenario: &ScenarioFile,
    log: &TraceLog,
    n: usize,
    error: Option<&str>,
) -> std::io::Result<ExportPaths> {
    std::fs::create_dir_all(dir)?;
    let paths = ExportPaths {
        trace: dir.join("trace.csv"),
        meta: dir.join("trace.json"),
    };
    let csv = trace_csv(
        log,
        scenario.followers.len(),
        scenario.leaders.len(),
        n,
        scenario.record_states,
    );
    std::fs::write(&paths.trace, csv)?;
    let meta = serde_json::to_string_pretty(&sidecar(scenario, log, error)).expect("sidecar serializes");
    std::fs::write(&paths.meta, meta + "\n")?;
    Ok(paths)
}
