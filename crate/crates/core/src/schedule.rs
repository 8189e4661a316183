//! View-time trajectory schedules over a `V x T` matrix of camera views and
//! time indices. Views are an abstract cyclic index.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, FlowError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Diagonal,
    BulletTime,
    IndependentView,
}

impl ScheduleMode {
    pub const ALL: [ScheduleMode; 3] = [
        ScheduleMode::Diagonal,
        ScheduleMode::BulletTime,
        ScheduleMode::IndependentView,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleMode::Diagonal => "diagonal",
            ScheduleMode::BulletTime => "bullet_time",
            ScheduleMode::IndependentView => "independent_view",
        }
    }
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleMode {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleMode::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid("mode", format!("unknown schedule mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleConfig {
    pub views: usize,
    pub frames: usize,
    pub n_traj: usize,
    pub mode: ScheduleMode,
}

impl ScheduleConfig {
    pub fn new(mode: ScheduleMode, views: usize, frames: usize, n_traj: usize) -> Result<Self> {
        let cfg = Self {
            views,
            frames,
            n_traj,
            mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("views", self.views), ("frames", self.frames), ("n_traj", self.n_traj)] {
            if v == 0 {
                return Err(invalid(name, "must be >= 1"));
            }
        }
        match self.mode {
            ScheduleMode::BulletTime if self.n_traj > self.frames => Err(invalid(
                "n_traj",
                format!("bullet_time needs n_traj <= frames ({} > {})", self.n_traj, self.frames),
            )),
            ScheduleMode::Diagonal | ScheduleMode::IndependentView if self.n_traj > self.views => {
                Err(invalid(
                    "n_traj",
                    format!("{} needs n_traj <= views ({} > {})", self.mode, self.n_traj, self.views),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Ordered `(view, time)` pairs visited by one generation trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrajectorySpec {
    pub frames: Vec<(usize, usize)>,
}

impl TrajectorySpec {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn check_mode(cfg: &ScheduleConfig, mode: ScheduleMode) -> Result<()> {
    cfg.validate()?;
    if cfg.mode != mode {
        return Err(invalid("mode", format!("expected {mode}, got {}", cfg.mode)));
    }
    Ok(())
}

/// Evenly spread index `round(j (n - 1) / max(1, count - 1))`.
fn spread(j: usize, n: usize, count: usize) -> usize {
    let denom = count.saturating_sub(1).max(1);
    ((j * (n - 1)) as f64 / denom as f64).round() as usize
}

/// Trajectory `j` visits view `(floor(k V / T) + j floor(V / n_traj)) mod V`
/// at time `k`. When `T > V` the orbit wraps.
pub fn diagonal_schedule(cfg: &ScheduleConfig) -> Result<Vec<TrajectorySpec>> {
    check_mode(cfg, ScheduleMode::Diagonal)?;
    let (v, t) = (cfg.views, cfg.frames);
    let offset = v / cfg.n_traj;
    Ok((0..cfg.n_traj)
        .map(|j| TrajectorySpec {
            frames: (0..t).map(|k| ((k * v / t + j * offset) % v, k)).collect(),
        })
        .collect())
}

/// Each trajectory freezes one time index and sweeps every view.
pub fn bullet_time_schedule(cfg: &ScheduleConfig) -> Result<Vec<TrajectorySpec>> {
    check_mode(cfg, ScheduleMode::BulletTime)?;
    Ok((0..cfg.n_traj)
        .map(|j| {
            let time = spread(j, cfg.frames, cfg.n_traj);
            TrajectorySpec {
                frames: (0..cfg.views).map(|view| (view, time)).collect(),
            }
        })
        .collect())
}

/// Each trajectory fixes one camera and sweeps every time index.
pub fn independent_view_schedule(cfg: &ScheduleConfig) -> Result<Vec<TrajectorySpec>> {
    check_mode(cfg, ScheduleMode::IndependentView)?;
    Ok((0..cfg.n_traj)
        .map(|j| {
            let view = spread(j, cfg.views, cfg.n_traj);
            TrajectorySpec {
                frames: (0..cfg.frames).map(|time| (view, time)).collect(),
            }
        })
        .collect())
}

pub fn build_schedule(cfg: &ScheduleConfig) -> Result<Vec<TrajectorySpec>> {
    match cfg.mode {
        ScheduleMode::Diagonal => diagonal_schedule(cfg),
        ScheduleMode::BulletTime => bullet_time_schedule(cfg),
        ScheduleMode::IndependentView => independent_view_schedule(cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoverageStats {
    pub frames_total: usize,
    pub distinct_views: usize,
    pub distinct_times: usize,
    /// Number of distinct views seen at each time index, indexed by time
    /// up to the largest time present.
    pub per_time_view_count: Vec<usize>,
}

pub fn coverage_stats(trajectories: &[TrajectorySpec]) -> CoverageStats {
    let pairs: BTreeSet<(usize, usize)> = trajectories
        .iter()
        .flat_map(|tr| tr.frames.iter().copied())
        .collect();
    let views: BTreeSet<usize> = pairs.iter().map(|p| p.0).collect();
    let times: BTreeSet<usize> = pairs.iter().map(|p| p.1).collect();
    let mut per_time = vec![0; times.last().map_or(0, |t| t + 1)];
    for (_, t) in &pairs {
        per_time[*t] += 1;
    }
    CoverageStats {
        frames_total: trajectories.iter().map(TrajectorySpec::len).sum(),
        distinct_views: views.len(),
        distinct_times: times.len(),
        per_time_view_count: per_time,
    }
}

#[derive(Serialize)]
struct ScheduleDoc<'a> {
    mode: ScheduleMode,
    #[serde(rename = "V")]
    views: usize,
    #[serde(rename = "T")]
    frames: usize,
    n_traj: usize,
    trajectories: &'a [TrajectorySpec],
}

/// `{"mode", "V", "T", "n_traj", "trajectories": [[[v, t], ...], ...]}`.
pub fn schedule_to_json(cfg: &ScheduleConfig, trajectories: &[TrajectorySpec]) -> Result<String> {
    let doc = ScheduleDoc {
        mode: cfg.mode,
        views: cfg.views,
        frames: cfg.frames,
        n_traj: cfg.n_traj,
        trajectories,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| FlowError::Format(e.to_string()))
}
