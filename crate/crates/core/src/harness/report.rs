use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, StageMetrics};
use crate::engine::Arm;
use crate::metrics::{
    seen_transfer, track_extremes, unseen_transfer, DomainMetrics, Extremes, MetricsError,
    PerfMatrix,
};
use crate::world::Split;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// The logged outcome of one continual-learning run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub arm: Arm,
    pub split: Split,
    pub matrix: PerfMatrix,
    pub metrics: Vec<StageMetrics>,
}

/// Headline numbers of one run, all derived from its logged cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub arm: Arm,
    pub split: Split,
    pub domains: Vec<u32>,
    pub stages: usize,
    pub seen_transfer: f64,
    pub unseen_transfer: f64,
    /// Stage-0 metrics pooled over the stream's domains.
    pub base: DomainMetrics,
    /// Final-stage metrics pooled over the stream's domains.
    pub last: DomainMetrics,
    pub sr_by_stage: Vec<f64>,
    pub osr_by_stage: Vec<f64>,
    pub sr_extremes: Extremes,
    pub osr_extremes: Extremes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub format_version: u32,
    pub kind: String,
    pub runs: Vec<RunSummary>,
}

/// Pooled metrics per stage, checking that every cell is present and that
/// the logged success rates agree with the matrix bit for bit.
fn pooled_by_stage(run: &RunRecord) -> Result<Vec<DomainMetrics>, HarnessError> {
    run.matrix.require_complete()?;
    let mut cells: BTreeMap<(usize, u32), DomainMetrics> = BTreeMap::new();
    for m in &run.metrics {
        cells.insert((m.stage, m.domain), m.metrics);
    }
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for stage in 0..=run.matrix.stages() {
        let mut parts = Vec::new();
        for (i, &d) in run.matrix.domains.iter().enumerate() {
            match cells.get(&(stage, d)) {
                Some(m) => {
                    let sr = run.matrix.get(stage, i).expect("matrix is complete");
                    if m.sr.to_bits() != sr.to_bits() {
                        return Err(HarnessError::Inconsistent(format!(
                            "stage {stage}, domain {d}: metrics log SR {} but matrix {sr}",
                            m.sr
                        )));
                    }
                    parts.push(*m);
                }
                None => missing.push((stage, d)),
            }
        }
        if missing.is_empty() {
            out.push(DomainMetrics::pooled(&parts).expect("domains are non-empty"));
        }
    }
    if !missing.is_empty() {
        return Err(MetricsError::MissingCells(missing).into());
    }
    Ok(out)
}

pub fn summarize(run: &RunRecord) -> Result<RunSummary, HarnessError> {
    let pooled = pooled_by_stage(run)?;
    let sr: Vec<f64> = pooled.iter().map(|m| m.sr).collect();
    let osr: Vec<f64> = pooled.iter().map(|m| m.osr).collect();
    Ok(RunSummary {
        arm: run.arm,
        split: run.split,
        domains: run.matrix.domains.clone(),
        stages: run.matrix.stages(),
        seen_transfer: seen_transfer(&run.matrix)?,
        unseen_transfer: unseen_transfer(&run.matrix)?,
        base: pooled[0],
        last: *pooled.last().expect("stage 0 exists"),
        sr_extremes: track_extremes(&sr)?,
        osr_extremes: track_extremes(&osr)?,
        sr_by_stage: sr,
        osr_by_stage: osr,
    })
}

fn method_name(arm: Arm) -> &'static str {
    match arm {
        Arm::DualSr => "Dual-SR",
        Arm::FineTune => "Fine-tune",
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn meters(x: f64) -> String {
    format!("{x:.2}")
}

fn table_text(title: &str, header: &[&str], rows: &[Vec<String>]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(MetricsError::from)?;
    for r in rows {
        w.write_record(r).map_err(MetricsError::from)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| HarnessError::Inconsistent(e.to_string()))?;
    Ok(format!(
        "# vlncl report v{REPORT_FORMAT_VERSION}: {title}\n{}",
        String::from_utf8(body).expect("csv output is utf-8")
    ))
}

/// Navigation metrics of the base agent and of each arm after the last
/// stage, with the Dual-SR minus Base "Performance Rise" row.
fn navigation_table(summaries: &[RunSummary]) -> Result<String, HarnessError> {
    let mut rows = Vec::new();
    let nav = |split: Split, method: &str, m: &DomainMetrics| {
        vec![
            split.as_str().to_string(),
            method.to_string(),
            meters(m.tl),
            meters(m.ne),
            pct(m.osr),
            pct(m.sr),
            pct(m.spl),
        ]
    };
    for split in Split::ALL {
        let runs: Vec<&RunSummary> = summaries.iter().filter(|s| s.split == split).collect();
        let Some(first) = runs.first() else { continue };
        let base = runs
            .iter()
            .find(|s| s.arm == Arm::DualSr)
            .map_or(first.base, |s| s.base);
        rows.push(nav(split, "Base", &base));
        for s in &runs {
            rows.push(nav(split, method_name(s.arm), &s.last));
        }
        if let Some(d) = runs.iter().find(|s| s.arm == Arm::DualSr) {
            let rise = DomainMetrics {
                sr: d.last.sr - base.sr,
                osr: d.last.osr - base.osr,
                spl: d.last.spl - base.spl,
                ne: d.last.ne - base.ne,
                tl: d.last.tl - base.tl,
                episodes: d.last.episodes,
            };
            rows.push(nav(split, "Performance Rise", &rise));
        }
    }
    table_text(
        "navigation metrics after continual learning (TL/NE in m; OSR/SR/SPL in %)",
        &["split", "method", "tl", "ne", "osr", "sr", "spl"],
        &rows,
    )
}

/// Seen and Unseen Transfer per method, one column pair per split.
fn transfer_table(summaries: &[RunSummary]) -> Result<String, HarnessError> {
    let splits: Vec<Split> = Split::ALL
        .into_iter()
        .filter(|sp| summaries.iter().any(|s| s.split == *sp))
        .collect();
    let mut header = vec!["method".to_string()];
    for sp in &splits {
        header.push(format!("{}_st", sp.as_str()));
        header.push(format!("{}_ut", sp.as_str()));
    }
    let mut rows = Vec::new();
    for arm in [Arm::FineTune, Arm::DualSr] {
        if !summaries.iter().any(|s| s.arm == arm) {
            continue;
        }
        let mut row = vec![method_name(arm).to_string()];
        for sp in &splits {
            match summaries.iter().find(|s| s.arm == arm && s.split == *sp) {
                Some(s) => {
                    row.push(pct(s.seen_transfer));
                    row.push(pct(s.unseen_transfer));
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        rows.push(row);
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    table_text(
        "seen (ST) and unseen (UT) transfer in percentage points",
        &header,
        &rows,
    )
}

/// Initial, maximum and minimum pooled SR and OSR during learning.
fn extremes_table(summaries: &[RunSummary]) -> Result<String, HarnessError> {
    let mut rows = Vec::new();
    for arm in [Arm::FineTune, Arm::DualSr] {
        for split in Split::ALL {
            if let Some(s) = summaries.iter().find(|s| s.arm == arm && s.split == split) {
                let (a, b) = (s.sr_extremes, s.osr_extremes);
                rows.push(vec![
                    method_name(arm).to_string(),
                    split.as_str().to_string(),
                    pct(a.init),
                    pct(a.max),
                    pct(a.min),
                    pct(b.init),
                    pct(b.max),
                    pct(b.min),
                ]);
            }
        }
    }
    table_text(
        "success-rate extremes over continual learning (%; init is the base agent)",
        &[
            "method", "split", "sr_init", "sr_max", "sr_min", "osr_init", "osr_max", "osr_min",
        ],
        &rows,
    )
}

fn arm_color(arm: Arm) -> &'static str {
    match arm {
        Arm::DualSr => "#1f77b4",
        Arm::FineTune => "#d62728",
    }
}

/// SR-vs-stage curves of every run on `split` as a standalone SVG.
fn curve_svg(split: Split, runs: &[&RunSummary]) -> String {
    let (w, h) = (520.0, 340.0);
    let (left, right, top, bottom) = (60.0, 130.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let stages = runs.iter().map(|r| r.stages).max().unwrap_or(1).max(1);
    let x = |s: usize| left + pw * s as f64 / stages as f64;
    let y = |sr: f64| top + ph * (1.0 - sr.clamp(0.0, 1.0));
    let domains = runs.first().map_or(0, |r| r.domains.len());

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">Success rate while learning — {} ({domains} domains)</text>"#,
        left + pw / 2.0,
        split.label()
    );
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{x2}" y2="{y:.2}" stroke="#dddddd"/><text x="{tx}" y="{ty:.2}" text-anchor="end">{p:.0}%</text>"##,
            y = y(v),
            x2 = left + pw,
            tx = left - 6.0,
            ty = y(v) + 4.0,
            p = 100.0 * v
        );
    }
    for st in 0..=stages {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{st}</text>"#,
            x(st),
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">training stage (0 = base agent)</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (k, r) in runs.iter().enumerate() {
        let pts: Vec<String> = r
            .sr_by_stage
            .iter()
            .enumerate()
            .map(|(st, &v)| format!("{:.2},{:.2}", x(st), y(v)))
            .collect();
        let color = arm_color(r.arm);
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 16.0 + 18.0 * k as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            method_name(r.arm)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write_file(path: &Path, text: &str) -> Result<PathBuf, HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Writes the tables, one curve chart per split and `summary.json` into
/// `dir`, returning the written paths in a fixed order.
pub fn emit_report(runs: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if runs.is_empty() {
        return Err(HarnessError::Inconsistent("no runs to report".into()));
    }
    let mut summaries = runs.iter().map(summarize).collect::<Result<Vec<_>, _>>()?;
    summaries.sort_by_key(|s| (s.split, s.arm == Arm::DualSr));
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;

    let mut written = vec![
        write_file(
            &dir.join("navigation.csv"),
            &navigation_table(&summaries)?,
        )?,
        write_file(
            &dir.join("transfer.csv"),
            &transfer_table(&summaries)?,
        )?,
        write_file(
            &dir.join("extremes.csv"),
            &extremes_table(&summaries)?,
        )?,
    ];
    for split in Split::ALL {
        let on_split: Vec<&RunSummary> = summaries.iter().filter(|s| s.split == split).collect();
        if !on_split.is_empty() {
            let name = format!("sr_curve_{}.svg", split.as_str());
            written.push(write_file(&dir.join(name), &curve_svg(split, &on_split))?);
        }
    }
    let summary = ReportSummary {
        format_version: REPORT_FORMAT_VERSION,
        kind: "report".into(),
        runs: summaries,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    written.push(write_file(&dir.join("summary.json"), &json)?);
    Ok(written)
}
