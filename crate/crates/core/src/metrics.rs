//! Navigation metrics (TL, NE, SR, OSR, SPL), the stage × domain success
//! matrix, and the Seen/Unseen Transfer scores computed from it.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ParamSet;
use crate::exec::{self, Mode};
use crate::planner::{rollout, Driver, PlannerConfig, PlannerError};
use crate::world::{euclid, Domain, Scene, Task, World, WorldError, SUCCESS_RADIUS};

/// Version tag written into serialized performance matrices.
pub const PERF_MATRIX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("episode path is empty")]
    EmptyPath,
    #[error("domain {0} has no tasks")]
    EmptyDomain(u32),
    #[error("transfer metrics need at least 2 completed stages, got {0}")]
    TooFewStages(usize),
    #[error("performance matrix has no base (stage 0) row")]
    MissingBaseRow,
    #[error("performance matrix is missing cells (stage, domain): {0:?}")]
    MissingCells(Vec<(usize, u32)>),
    #[error("{0}")]
    Shape(String),
    #[error("metric history is empty")]
    EmptyHistory,
    #[error("performance matrix format: {0}")]
    Format(String),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Outcome of one finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub path: Vec<usize>,
    pub positions: Vec<[f64; 2]>,
    pub goal: [f64; 2],
    /// Traveled length (m).
    pub tl: f64,
    /// Final distance to the goal (m).
    pub ne: f64,
    pub success: bool,
    pub oracle_success: bool,
    pub spl: f64,
}

/// Scores the visited node sequence of a completed episode.
///
/// A hop between non-adjacent nodes (a jump back to a visited node) is
/// charged its shortest-path length, since the agent walks the graph.
pub fn episode_metrics(
    path: &[usize],
    task: &Task,
    scene: &Scene,
) -> Result<EpisodeResult, MetricsError> {
    let (&last, _) = path.split_last().ok_or(MetricsError::EmptyPath)?;
    let mut tl = 0.0;
    for w in path.windows(2) {
        tl += if scene.is_edge(w[0], w[1]) || w[0] == w[1] {
            scene.distance(w[0], w[1])
        } else {
            scene.graph_distance(w[0], w[1])?
        };
    }
    let goal = scene.position(task.goal);
    let positions: Vec<[f64; 2]> = path.iter().map(|&n| scene.position(n)).collect();
    let ne = euclid(scene.position(last), goal);
    let success = ne <= SUCCESS_RADIUS;
    let oracle_success = positions.iter().any(|&p| euclid(p, goal) <= SUCCESS_RADIUS);
    let shortest = scene.graph_distance(task.start, task.goal)?;
    let spl = if success {
        let denom = shortest.max(tl);
        if denom > 0.0 {
            shortest / denom
        } else {
            1.0
        }
    } else {
        0.0
    };
    Ok(EpisodeResult {
        path: path.to_vec(),
        positions,
        goal,
        tl,
        ne,
        success,
        oracle_success,
        spl,
    })
}

/// Averages of the navigation metrics over one domain's tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub sr: f64,
    pub osr: f64,
    pub spl: f64,
    pub ne: f64,
    pub tl: f64,
    pub episodes: usize,
}

impl DomainMetrics {
    pub fn aggregate(results: &[EpisodeResult]) -> Option<Self> {
        if results.is_empty() {
            return None;
        }
        let n = results.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeResult) -> f64| results.iter().map(f).sum::<f64>() / n;
        Some(Self {
            sr: mean(&|r| f64::from(u8::from(r.success))),
            osr: mean(&|r| f64::from(u8::from(r.oracle_success))),
            spl: mean(&|r| r.spl),
            ne: mean(&|r| r.ne),
            tl: mean(&|r| r.tl),
            episodes: results.len(),
        })
    }

    /// Task-weighted mean over several domains.
    pub fn pooled(parts: &[DomainMetrics]) -> Option<Self> {
        let total: usize = parts.iter().map(|d| d.episodes).sum();
        if total == 0 {
            return None;
        }
        let n = total as f64;
        let mean = |f: &dyn Fn(&DomainMetrics) -> f64| {
            parts.iter().map(|d| f(d) * d.episodes as f64).sum::<f64>() / n
        };
        Some(Self {
            sr: mean(&|d| d.sr),
            osr: mean(&|d| d.osr),
            spl: mean(&|d| d.spl),
            ne: mean(&|d| d.ne),
            tl: mean(&|d| d.tl),
            episodes: total,
        })
    }
}

/// Runs every task of `domain` greedily and scores the episodes.
pub fn evaluate_episodes(
    world: &World,
    params: &ParamSet,
    planner: &PlannerConfig,
    domain: &Domain,
    mode: Mode,
) -> Result<Vec<EpisodeResult>, MetricsError> {
    if domain.tasks.is_empty() {
        return Err(MetricsError::EmptyDomain(domain.domain_id));
    }
    let scene = world.scene(domain.domain_id)?;
    exec::map_mode(mode, &domain.tasks, |_, task| {
        let r = rollout(task, scene, params, planner, &Driver::Greedy)?;
        episode_metrics(&r.record.final_state.visited, task, scene)
    })
    .into_iter()
    .collect()
}

/// Greedy-policy metrics on one domain; deterministic for fixed parameters.
pub fn evaluate_domain(
    world: &World,
    params: &ParamSet,
    planner: &PlannerConfig,
    domain: &Domain,
    mode: Mode,
) -> Result<DomainMetrics, MetricsError> {
    let results = evaluate_episodes(world, params, planner, domain, mode)?;
    Ok(DomainMetrics::aggregate(&results).expect("domain is non-empty"))
}

/// Success rates `sr[j][i]` of domain `i` after training stage `j`
/// (stage 0 is the base agent). Missing cells are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfMatrix {
    pub domains: Vec<u32>,
    pub sr: Vec<Vec<Option<f64>>>,
}

impl PerfMatrix {
    pub fn new(domains: Vec<u32>) -> Self {
        Self {
            domains,
            sr: Vec::new(),
        }
    }

    /// Builds a complete matrix from dense rows.
    pub fn from_rows(domains: Vec<u32>, rows: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        let mut m = Self::new(domains);
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Appends the evaluation row of the next stage.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<(), MetricsError> {
        if row.len() != self.domains.len() {
            return Err(MetricsError::Shape(format!(
                "row has {} entries for {} domains",
                row.len(),
                self.domains.len()
            )));
        }
        self.sr.push(row.into_iter().map(Some).collect());
        Ok(())
    }

    /// Stages completed after the base row (T).
    pub fn stages(&self) -> usize {
        self.sr.len().saturating_sub(1)
    }

    pub fn get(&self, stage: usize, domain_index: usize) -> Option<f64> {
        self.sr.get(stage)?.get(domain_index).copied().flatten()
    }

    /// (stage, domain) cells that are absent, for the full stage × domain grid.
    pub fn missing_cells(&self) -> Vec<(usize, u32)> {
        let rows = self.domains.len() + 1;
        let mut out = Vec::new();
        for j in 0..rows {
            for (i, &d) in self.domains.iter().enumerate() {
                if self.get(j, i).is_none() {
                    out.push((j, d));
                }
            }
        }
        out
    }

    /// Errors unless every domain has been evaluated at every stage.
    pub fn require_complete(&self) -> Result<(), MetricsError> {
        let missing = self.missing_cells();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(MetricsError::MissingCells(missing))
        }
    }

    fn cell(&self, stage: usize, domain_index: usize) -> Result<f64, MetricsError> {
        self.get(stage, domain_index)
            .ok_or_else(|| MetricsError::MissingCells(vec![(stage, self.domains[domain_index])]))
    }

    fn transfer_horizon(&self) -> Result<usize, MetricsError> {
        if self.sr.is_empty() {
            return Err(MetricsError::MissingBaseRow);
        }
        let t = self.stages().min(self.domains.len());
        if t < 2 {
            return Err(MetricsError::TooFewStages(t));
        }
        Ok(t)
    }

    /// Writes the matrix as CSV preceded by a version comment line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), MetricsError> {
        writeln!(out, "# vlncl perf-matrix v{PERF_MATRIX_VERSION}")?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["stage".to_string()];
        header.extend(self.domains.iter().map(|d| format!("domain_{d}")));
        w.write_record(&header)?;
        for (j, row) in self.sr.iter().enumerate() {
            let mut rec = vec![j.to_string()];
            rec.extend(
                row.iter()
                    .map(|c| c.map_or(String::new(), |x| x.to_string())),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, MetricsError> {
        let mut text = String::new();
        let mut input = input;
        input.read_to_string(&mut text)?;
        let (first, body) = text
            .split_once('\n')
            .ok_or_else(|| MetricsError::Format("empty file".into()))?;
        let expected = format!("# vlncl perf-matrix v{PERF_MATRIX_VERSION}");
        if first.trim_end() != expected {
            return Err(MetricsError::Format(format!(
                "unsupported header `{first}`"
            )));
        }
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let bad = |m: String| MetricsError::Format(m);
        let domains = r
            .headers()?
            .iter()
            .skip(1)
            .map(|h| {
                h.strip_prefix("domain_")
                    .and_then(|d| d.parse().ok())
                    .ok_or_else(|| bad(format!("bad column `{h}`")))
            })
            .collect::<Result<Vec<u32>, _>>()?;
        let mut sr = Vec::new();
        for (j, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.get(0) != Some(j.to_string().as_str()) || rec.len() != domains.len() + 1 {
                return Err(bad(format!("malformed row {j}")));
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse()
                            .map(Some)
                            .map_err(|_| bad(format!("bad value `{c}`")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            sr.push(row);
        }
        Ok(Self { domains, sr })
    }
}

/// Seen Transfer: mean over i = 1..T−1 of SR_T(s_i) − SR_i(s_i).
pub fn seen_transfer(m: &PerfMatrix) -> Result<f64, MetricsError> {
    let t = m.transfer_horizon()?;
    let mut sum = 0.0;
    for i in 1..t {
        sum += m.cell(t, i - 1)? - m.cell(i, i - 1)?;
    }
    Ok(sum / (t - 1) as f64)
}

/// Unseen Transfer: mean over i = 2..T of SR_{i−1}(s_i) − SR_0(s_i), each
/// domain scored just before it is learned against the base agent.
pub fn unseen_transfer(m: &PerfMatrix) -> Result<f64, MetricsError> {
    let t = m.transfer_horizon()?;
    let mut sum = 0.0;
    for i in 2..=t {
        sum += m.cell(i - 1, i - 1)? - m.cell(0, i - 1)?;
    }
    Ok(sum / (t - 1) as f64)
}

/// Initial value and the extremes reached during continual learning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremes {
    pub init: f64,
    pub max: f64,
    pub min: f64,
}

/// `init` is stage 0; `max`/`min` range over stages ≥ 1, or equal the
/// single value when only stage 0 exists.
pub fn track_extremes(history: &[f64]) -> Result<Extremes, MetricsError> {
    let (&init, rest) = history.split_first().ok_or(MetricsError::EmptyHistory)?;
    if rest.is_empty() {
        return Ok(Extremes {
            init,
            max: init,
            min: init,
        });
    }
    Ok(Extremes {
        init,
        max: rest.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: rest.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

#[cfg(test)]
mod tests;
