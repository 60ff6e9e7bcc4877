//! Idle-wave metrics extracted from timelines: front trajectory, speed,
//! decay and survival.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{linear_fit, percentile, theil_sen};
use crate::timeline::{Interval, Phase, Timeline};
use crate::topology::Rank;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("no idle wave detected above threshold {threshold_s} s")]
    NoWaveDetected { threshold_s: f64 },
    #[error("front has {points} usable points, need at least {needed}")]
    InsufficientFront { points: usize, needed: usize },
    #[error("invalid analysis input: {0}")]
    InvalidInput(String),
}

/// Side of the injection rank along which the front is followed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Whichever side has more ranks.
    #[default]
    Auto,
    /// Increasing rank.
    Up,
    /// Decreasing rank.
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    LeastSquares,
    TheilSen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontQuery {
    pub origin: Rank,
    pub threshold_s: f64,
    pub direction: Direction,
    /// Waits starting earlier are ignored. Defaults to the start of the
    /// first injected delay on `origin`.
    pub not_before_s: Option<f64>,
    /// The front ends once consecutive arrivals are further apart.
    pub max_gap_s: Option<f64>,
}

impl FrontQuery {
    pub fn new(origin: Rank, threshold_s: f64) -> Self {
        FrontQuery {
            origin,
            threshold_s,
            direction: Direction::Auto,
            not_before_s: None,
            max_gap_s: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    pub rank: Rank,
    pub iteration: usize,
    pub arrival_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Front {
    pub origin: Rank,
    /// Resolved to `Up` or `Down`.
    pub direction: Direction,
    pub threshold_s: f64,
    pub injection_s: f64,
    /// Ordered by distance from the origin.
    pub points: Vec<FrontPoint>,
}

impl Front {
    pub fn distance(&self, rank: Rank) -> usize {
        rank.abs_diff(self.origin)
    }
}

/// Wave-edge threshold from a run without injected delays: three times the
/// 95th percentile of its waits, floored at `1e-3 * t_exec_s`.
pub fn default_threshold(baseline: &Timeline, t_exec_s: f64) -> f64 {
    let mut waits: Vec<f64> = (0..baseline.num_ranks())
        .flat_map(|r| baseline.rank(r).iter())
        .filter(|i| i.phase == Phase::Wait)
        .map(Interval::len)
        .collect();
    let p95 = percentile(&mut waits, 0.95).unwrap_or(0.0);
    (3.0 * p95).max(1e-3 * t_exec_s)
}

/// Threshold for a trace without a separate baseline run: waits that end
/// before the injection stand in for the baseline.
pub fn trace_threshold(timeline: &Timeline, origin: Rank) -> f64 {
    let t0 = injection_time(timeline, origin);
    let mut compute: Vec<f64> = Vec::new();
    let mut before = Timeline::new(timeline.num_ranks());
    for r in 0..timeline.num_ranks() {
        for iv in timeline.rank(r) {
            match iv.phase {
                Phase::Compute => compute.push(iv.len()),
                Phase::Wait if iv.end_s <= t0 => {
                    before.push(r, iv.start_s, iv.end_s, iv.phase, iv.iteration)
                }
                _ => {}
            }
        }
    }
    let t_exec = crate::stats::median(&mut compute).unwrap_or(1.0);
    default_threshold(&before, t_exec)
}

/// Start of the first injected delay on `origin`, or 0.
pub fn injection_time(timeline: &Timeline, origin: Rank) -> f64 {
    timeline
        .rank(origin)
        .iter()
        .find(|i| i.phase == Phase::InjectedDelay)
        .map_or(0.0, |i| i.start_s)
}

fn arrival_index(ivs: &[Interval], threshold_s: f64, not_before_s: f64) -> Option<usize> {
    ivs.iter()
        .position(|i| i.phase == Phase::Wait && i.start_s >= not_before_s && i.len() >= threshold_s)
}

/// Follows the first above-threshold wait rank by rank away from the
/// origin; the front ends at the first rank without one.
pub fn detect_front(timeline: &Timeline, query: &FrontQuery) -> Result<Front, AnalysisError> {
    let n = timeline.num_ranks();
    if query.origin >= n {
        return Err(AnalysisError::InvalidInput(format!(
            "origin {} out of range 0..{n}",
            query.origin
        )));
    }
    if !(query.threshold_s > 0.0) {
        return Err(AnalysisError::InvalidInput(format!(
            "threshold {} must be > 0",
            query.threshold_s
        )));
    }
    let direction = match query.direction {
        Direction::Auto if n - 1 - query.origin >= query.origin => Direction::Up,
        Direction::Auto => Direction::Down,
        d => d,
    };
    let ranks: Box<dyn Iterator<Item = Rank>> = match direction {
        Direction::Down => Box::new((0..query.origin).rev()),
        _ => Box::new(query.origin + 1..n),
    };
    let injection_s = injection_time(timeline, query.origin);
    let not_before_s = query.not_before_s.unwrap_or(injection_s);
    let mut points: Vec<FrontPoint> = Vec::new();
    for rank in ranks {
        let ivs = timeline.rank(rank);
        let Some(k) = arrival_index(ivs, query.threshold_s, not_before_s) else {
            break;
        };
        let p = FrontPoint {
            rank,
            iteration: ivs[k].iteration,
            arrival_s: ivs[k].start_s,
        };
        if let (Some(gap), Some(prev)) = (query.max_gap_s, points.last()) {
            if p.arrival_s - prev.arrival_s > gap {
                break;
            }
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(AnalysisError::NoWaveDetected {
            threshold_s: query.threshold_s,
        });
    }
    Ok(Front {
        origin: query.origin,
        direction,
        threshold_s: query.threshold_s,
        injection_s,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedFit {
    pub speed_ranks_per_s: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

/// Least-squares slope of distance from the origin against arrival time,
/// after dropping the `discard_prefix_ranks` points closest to the origin.
pub fn measure_speed(
    front: &Front,
    discard_prefix_ranks: usize,
) -> Result<SpeedFit, AnalysisError> {
    let pts: Vec<&FrontPoint> = front
        .points
        .iter()
        .filter(|p| front.distance(p.rank) > discard_prefix_ranks)
        .collect();
    fit_speed(front, &pts)
}

/// Speed over the front points with `lo <= arrival_s < hi`.
pub fn measure_speed_between(
    front: &Front,
    lo_s: f64,
    hi_s: f64,
) -> Result<SpeedFit, AnalysisError> {
    let pts: Vec<&FrontPoint> = front
        .points
        .iter()
        .filter(|p| p.arrival_s >= lo_s && p.arrival_s < hi_s)
        .collect();
    fit_speed(front, &pts)
}

fn fit_speed(front: &Front, pts: &[&FrontPoint]) -> Result<SpeedFit, AnalysisError> {
    let insufficient = AnalysisError::InsufficientFront {
        points: pts.len(),
        needed: 3,
    };
    if pts.len() < 3 {
        return Err(insufficient);
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.arrival_s).collect();
    let ys: Vec<f64> = pts.iter().map(|p| front.distance(p.rank) as f64).collect();
    let fit = linear_fit(&xs, &ys).ok_or(insufficient)?;
    Ok(SpeedFit {
        speed_ranks_per_s: fit.slope,
        r_squared: fit.r_squared,
        points_used: pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayMetrics {
    /// `(rank, seconds)` in front order.
    pub wave_duration_per_rank: Vec<(Rank, f64)>,
    pub decay_rate_s_per_rank: f64,
    pub survival_time_s: f64,
    /// Decay rates over consecutive windows of `DECAY_WINDOW_RANKS` ranks.
    pub windowed_decay_s_per_rank: Vec<f64>,
}

pub const DECAY_WINDOW_RANKS: usize = 10;

/// Wave duration at each front rank: the run of consecutive waits starting
/// at its arrival.
pub fn wave_durations(timeline: &Timeline, front: &Front) -> Vec<(Rank, f64)> {
    front
        .points
        .iter()
        .map(|p| {
            let ivs = timeline.rank(p.rank);
            let start = ivs
                .iter()
                .position(|i| i.phase == Phase::Wait && i.start_s == p.arrival_s)
                .expect("front point comes from this timeline");
            let d = ivs[start..]
                .iter()
                .take_while(|i| i.phase == Phase::Wait)
                .map(Interval::len)
                .sum();
            (p.rank, d)
        })
        .collect()
}

fn decay_slope(front: &Front, durations: &[(Rank, f64)], estimator: Estimator) -> Option<f64> {
    let xs: Vec<f64> = durations
        .iter()
        .map(|(r, _)| front.distance(*r) as f64)
        .collect();
    let ys: Vec<f64> = durations.iter().map(|(_, d)| *d).collect();
    match estimator {
        Estimator::LeastSquares => linear_fit(&xs, &ys).map(|f| f.slope),
        Estimator::TheilSen => theil_sen(&xs, &ys),
    }
}

pub fn measure_decay(timeline: &Timeline, front: &Front, estimator: Estimator) -> DecayMetrics {
    let durations = wave_durations(timeline, front);
    let rate = |d: &[(Rank, f64)]| decay_slope(front, d, estimator).map_or(0.0, |s| (-s).max(0.0));
    let windowed = durations
        .chunks(DECAY_WINDOW_RANKS)
        .filter(|c| c.len() >= 2)
        .map(rate)
        .collect();
    let last = front
        .points
        .last()
        .map_or(front.injection_s, |p| p.arrival_s);
    DecayMetrics {
        decay_rate_s_per_rank: rate(&durations),
        survival_time_s: last - front.injection_s,
        wave_duration_per_rank: durations,
        windowed_decay_s_per_rank: windowed,
    }
}

/// How far each front rank lags behind the earliest arrival further out.
pub fn zigzag_amplitudes(front: &Front) -> Vec<(Rank, f64)> {
    let mut out = vec![(0, 0.0); front.points.len()];
    let mut earliest_beyond = f64::INFINITY;
    for (k, p) in front.points.iter().enumerate().rev() {
        out[k] = (p.rank, (p.arrival_s - earliest_beyond).max(0.0));
        earliest_beyond = earliest_beyond.min(p.arrival_s);
    }
    out
}

/// Leading edge of the front: each arrival replaced by the earliest arrival
/// at the same or a greater distance.
pub fn envelope(front: &Front) -> Front {
    let mut out = front.clone();
    let mut earliest = f64::INFINITY;
    for p in out.points.iter_mut().rev() {
        earliest = earliest.min(p.arrival_s);
        p.arrival_s = earliest;
    }
    out
}

/// Iteration of the last front rank whose zig-zag amplitude reaches
/// `tolerance_s`, counted from the first arrival; `None` when monotone.
pub fn zigzag_hops(front: &Front, tolerance_s: f64) -> Option<usize> {
    let first = front.points.first()?.iteration;
    zigzag_amplitudes(front)
        .iter()
        .zip(&front.points)
        .filter(|((_, a), _)| *a >= tolerance_s)
        .map(|(_, p)| p.iteration - first)
        .max()
}

/// Largest distance from the origin at which the zig-zag amplitude reaches
/// `tolerance_s`; 0 when the front is monotone.
pub fn zigzag_extent(front: &Front, tolerance_s: f64) -> usize {
    zigzag_amplitudes(front)
        .into_iter()
        .filter(|(_, a)| *a >= tolerance_s)
        .map(|(r, _)| front.distance(r))
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveMetrics {
    pub front: Vec<(Rank, f64)>,
    pub speed_ranks_per_s: f64,
    pub r_squared: f64,
    pub wave_duration_per_rank: Vec<(Rank, f64)>,
    pub decay_rate_s_per_rank: f64,
    pub windowed_decay_s_per_rank: Vec<f64>,
    pub survival_time_s: f64,
    pub threshold_s: f64,
}

impl WaveMetrics {
    /// Writes `rank,arrival_s,duration_s` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rank", "arrival_s", "duration_s"])?;
        for ((rank, arrival), (_, duration)) in self.front.iter().zip(&self.wave_duration_per_rank)
        {
            w.write_record([rank.to_string(), arrival.to_string(), duration.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Front, speed and decay in one pass.
pub fn analyze(
    timeline: &Timeline,
    query: &FrontQuery,
    discard_prefix_ranks: usize,
    estimator: Estimator,
) -> Result<WaveMetrics, AnalysisError> {
    let front = detect_front(timeline, query)?;
    let speed = measure_speed(&front, discard_prefix_ranks)?;
    let decay = measure_decay(timeline, &front, estimator);
    Ok(WaveMetrics {
        front: front.points.iter().map(|p| (p.rank, p.arrival_s)).collect(),
        speed_ranks_per_s: speed.speed_ranks_per_s,
        r_squared: speed.r_squared,
        wave_duration_per_rank: decay.wave_duration_per_rank,
        decay_rate_s_per_rank: decay.decay_rate_s_per_rank,
        windowed_decay_s_per_rank: decay.windowed_decay_s_per_rank,
        survival_time_s: decay.survival_time_s,
        threshold_s: front.threshold_s,
    })
}

/// Default transient discard for a topology whose longest distance is `j`.
pub fn default_discard(j: usize) -> usize {
    j.div_ceil(2) + 1
}
