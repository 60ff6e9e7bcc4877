//! Experiment documents and the simulate / compare / sweep pipelines.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    analyze, default_discard, default_threshold, detect_front, envelope, measure_speed,
    AnalysisError, Direction, Estimator, Front, FrontQuery, WaveMetrics,
};
use crate::collectives::CollectiveClass;
use crate::model::{predict_speed, ModelError, Prediction};
use crate::noise::{calibrate_power, calibrate_realized, NoiseDistribution, NoiseError, NoiseSpec};
use crate::schedule::{build_schedule, ConcurrencyScheme, DimensionMap, ScheduleError};
use crate::simulator::{
    simulate, CommCost, DelayInjection, Protocol, ScheduledCollective, SimConfig, SimError,
};
use crate::timeline::{Phase, Timeline, TimelineError};
use crate::topology::{TopologyError, TopologySpec};

/// Relative speed tolerance of a comparison.
pub const SPEED_TOLERANCE: f64 = 0.05;

/// Environment variable capping sweep worker threads.
pub const THREADS_ENV: &str = "IDLEWAVE_THREADS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config at `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ExperimentError {
    ExperimentError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub t_exec_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm_cost_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_edge_costs: Option<CommCost>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    #[serde(flatten)]
    pub distribution: NoiseDistribution,
    pub power_percent: f64,
    /// Defaults to the experiment seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Rescale the seeded stream so the realized power equals the target.
    #[serde(default = "yes")]
    pub exact: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out_dir(),
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discard_prefix_ranks: Option<usize>,
    #[serde(default)]
    pub estimator: Estimator,
    /// Ends the front when consecutive arrivals are this many silent
    /// periods apart.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_gap_periods: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    pub concurrency: ConcurrencyScheme,
    #[serde(default)]
    pub dimension_map: DimensionMap,
    pub timing: TimingConfig,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub delays: Vec<DelayInjection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub collectives: Vec<ScheduledCollective>,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

/// Noise actually injected by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseInfo {
    pub family: String,
    pub target_power: f64,
    pub realized_power: f64,
    pub realized_total_s: f64,
    pub calibrated: NoiseDistribution,
}

fn parse_error(path: &str, e: &serde_json::Error) -> ExperimentError {
    ExperimentError::Parse {
        path: path.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| parse_error(origin, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    /// Canonical textual form.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over a git-style blob of the canonical form.
    pub fn content_hash(&self) -> String {
        content_hash(self.to_canonical_json().as_bytes())
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let n = self.topology.num_ranks();
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be positive"));
        }
        let t = &self.timing;
        if !(t.t_exec_s > 0.0 && t.t_exec_s.is_finite()) {
            return Err(invalid(
                "timing.t_exec_s",
                format!("{} must be > 0", t.t_exec_s),
            ));
        }
        if t.comm_cost_s.is_some() && t.per_edge_costs.is_some() {
            return Err(invalid(
                "timing",
                "give either comm_cost_s or per_edge_costs, not both",
            ));
        }
        if let Some(c) = t.comm_cost_s {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(invalid("timing.comm_cost_s", format!("{c} must be >= 0")));
            }
        }
        if let Some(CommCost::PerEdge { edges, .. }) = &t.per_edge_costs {
            for (i, &(s, d, _)) in edges.iter().enumerate() {
                if s >= n || d >= n {
                    return Err(invalid(
                        format!("timing.per_edge_costs.edges[{i}]"),
                        format!("rank out of range 0..{n}"),
                    ));
                }
            }
        }
        for (i, d) in self.delays.iter().enumerate() {
            if d.rank >= n {
                return Err(invalid(
                    format!("delays[{i}].rank"),
                    format!("{} out of range 0..{n}", d.rank),
                ));
            }
            if d.iteration >= self.iterations {
                return Err(invalid(
                    format!("delays[{i}].iteration"),
                    format!("{} beyond {} iterations", d.iteration, self.iterations),
                ));
            }
            if !(d.extra_s > 0.0 && d.extra_s.is_finite()) {
                return Err(invalid(format!("delays[{i}].extra_s"), "must be > 0"));
            }
        }
        for (i, c) in self.collectives.iter().enumerate() {
            if c.iteration >= self.iterations {
                return Err(invalid(
                    format!("collectives[{i}].iteration"),
                    format!("{} beyond {} iterations", c.iteration, self.iterations),
                ));
            }
            c.spec
                .validate(n)
                .map_err(|m| invalid(format!("collectives[{i}]"), m))?;
        }
        if let Some(noise) = &self.noise {
            if !(0.0..100.0).contains(&noise.power_percent) {
                return Err(invalid(
                    "noise.power_percent",
                    format!("{} not in [0, 100)", noise.power_percent),
                ));
            }
        }
        if let Some(th) = self.analysis.threshold_s {
            if !(th > 0.0) {
                return Err(invalid("analysis.threshold_s", "must be > 0"));
            }
        }
        Ok(())
    }

    fn comm_cost(&self) -> CommCost {
        match (&self.timing.per_edge_costs, self.timing.comm_cost_s) {
            (Some(c), _) => c.clone(),
            (None, c) => CommCost::Uniform(c.unwrap_or(0.0)),
        }
    }

    /// Builds the simulator input, calibrating noise against the silent
    /// runtime.
    pub fn to_sim_config(&self) -> Result<(SimConfig, Option<NoiseInfo>), ExperimentError> {
        self.validate()?;
        let topology = self
            .topology
            .build()
            .map_err(|e| invalid("topology", e.to_string()))?;
        let schedule = build_schedule(&topology, self.concurrency, &self.dimension_map)
            .map_err(|e| invalid("concurrency", e.to_string()))?;
        let mut sim = SimConfig {
            topology,
            schedule,
            iterations: self.iterations,
            t_exec_s: self.timing.t_exec_s,
            comm_cost: self.comm_cost(),
            protocol: self.protocol,
            delays: self.delays.clone(),
            noise: None,
            collectives: self.collectives.clone(),
            seed: self.seed,
        };
        let mut info = None;
        if let Some(nc) = &self.noise {
            let n = sim.num_ranks();
            let total = sim.silent_total();
            let spec = NoiseSpec {
                distribution: nc.distribution,
                target_power: nc.power_percent / 100.0,
                seed: nc.seed.unwrap_or(self.seed),
            };
            let calibrated = if nc.exact {
                calibrate_realized(&spec, n, self.iterations, total)
            } else {
                calibrate_power(&spec, n, self.iterations, total)
            }
            .map_err(|e| invalid("noise", e.to_string()))?;
            let realized = calibrated.realized_total(n, self.iterations);
            info = Some(NoiseInfo {
                family: nc.distribution.family().to_string(),
                target_power: spec.target_power,
                realized_power: realized / total,
                realized_total_s: realized,
                calibrated: calibrated.distribution,
            });
            sim.noise = Some(calibrated);
        }
        Ok((sim, info))
    }
}

/// Hex SHA-256 of `bytes` wrapped in a git blob header.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub num_ranks: usize,
    pub iterations: usize,
    pub seed: u64,
    pub silent_period_s: f64,
    pub silent_total_s: f64,
    pub end_time_s: f64,
    pub total_wait_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseInfo>,
    pub files: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)?;
    Ok(())
}

/// Simulates and writes the trace files plus `meta.json` into `out_dir`.
pub fn run_simulate(config: &ExperimentConfig, out_dir: &Path) -> Result<RunMeta, ExperimentError> {
    let (sim, noise) = config.to_sim_config()?;
    let timeline = simulate(&sim)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut files = Vec::new();
    for format in &config.output.formats {
        let name = match format {
            Format::Csv => "timeline.csv",
            Format::Json => "timeline.json",
        };
        let path = out_dir.join(name);
        let f = BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
        match format {
            Format::Csv => timeline.write_csv(f)?,
            Format::Json => timeline.write_json(f)?,
        }
        files.push(name.to_string());
    }
    let meta = RunMeta {
        config_hash: config.content_hash(),
        num_ranks: sim.num_ranks(),
        iterations: sim.iterations,
        seed: config.seed,
        silent_period_s: sim.silent_period(),
        silent_total_s: sim.silent_total(),
        end_time_s: timeline.end_time(),
        total_wait_s: timeline.total(Phase::Wait),
        noise,
        files,
    };
    write_json(&out_dir.join("meta.json"), &meta)?;
    Ok(meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCheck {
    pub start: usize,
    pub end: usize,
    pub predicted: f64,
    pub measured: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub config_hash: String,
    pub prediction: Prediction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<WaveMetrics>,
    /// Speed of the front's leading edge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_speed: Option<f64>,
    /// `measured / predicted - 1`; the worst region for piecewise fronts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<RegionCheck>,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseInfo>,
}

impl CompareReport {
    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let p = &self.prediction;
        let opt = |v: Option<f64>, f: &dyn Fn(f64) -> String| v.map_or("-".into(), f);
        let mut rows = vec![
            ("config", self.config_hash[..12].to_string()),
            (
                "kappa",
                format!(
                    "{}{}",
                    p.kappa,
                    if p.heuristic_kappa {
                        " (heuristic)"
                    } else {
                        ""
                    }
                ),
            ),
            ("protocol factor", p.protocol_factor.to_string()),
            ("v_min [ranks/s]", format!("{:.4}", p.v_min)),
            ("predicted [ranks/s]", format!("{:.4}", p.v_silent)),
            (
                "measured [ranks/s]",
                opt(self.measured_speed, &|v| format!("{v:.4}")),
            ),
            (
                "deviation",
                opt(self.deviation, &|v| format!("{:+.2}%", 100.0 * v)),
            ),
        ];
        if let Some(m) = &self.metrics {
            rows.push(("decay [s/rank]", format!("{:.3e}", m.decay_rate_s_per_rank)));
            rows.push(("survival [s]", format!("{:.4}", m.survival_time_s)));
        }
        if let Some(n) = &self.noise {
            rows.push(("noise power", format!("{:.3}%", 100.0 * n.realized_power)));
        }
        rows.push(("verdict", format!("{:?}", self.verdict).to_uppercase()));
        let mut out: String = rows.iter().map(|(k, v)| format!("{k:<22}{v}\n")).collect();
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}

fn front_query(
    config: &ExperimentConfig,
    sim: &SimConfig,
    threshold_s: f64,
) -> Result<FrontQuery, ExperimentError> {
    let origin = config
        .delays
        .first()
        .ok_or_else(|| invalid("delays", "a comparison needs at least one injected delay"))?
        .rank;
    let mut q = FrontQuery::new(origin, threshold_s);
    q.direction = config.analysis.direction;
    q.max_gap_s = config
        .analysis
        .max_gap_periods
        .map(|p| p * sim.silent_period());
    Ok(q)
}

/// End of the first synchronizing collective after the injection, if any.
fn sync_exit(config: &ExperimentConfig, timeline: &Timeline) -> Option<(usize, f64)> {
    let inject = config.delays.first()?.iteration;
    let c = config
        .collectives
        .iter()
        .filter(|c| c.iteration >= inject && c.spec.class == CollectiveClass::Synchronizing)
        .min_by_key(|c| c.iteration)?;
    let exit = (0..timeline.num_ranks())
        .flat_map(|r| timeline.rank(r).iter())
        .filter(|i| i.phase == Phase::Collective && i.iteration == c.iteration)
        .map(|i| i.end_s)
        .fold(f64::NEG_INFINITY, f64::max);
    Some((c.iteration, exit))
}

fn region_checks(front: &Front, prediction: &Prediction, discard: usize) -> Vec<RegionCheck> {
    let Some(regions) = &prediction.per_region else {
        return Vec::new();
    };
    regions
        .iter()
        .filter_map(|r| {
            let lo = r.start + discard;
            let hi = r.end.checked_sub(discard)?;
            let mut sub = front.clone();
            sub.points.retain(|p| p.rank >= lo && p.rank < hi);
            let fit = measure_speed(&sub, 0).ok()?;
            let measured = fit.speed_ranks_per_s;
            Some(RegionCheck {
                start: r.start,
                end: r.end,
                predicted: r.v_ranks_per_s,
                measured,
                deviation: measured / r.v_ranks_per_s - 1.0,
            })
        })
        .collect()
}

/// Simulates, measures the wave and checks it against the prediction.
pub fn run_compare(config: &ExperimentConfig) -> Result<CompareReport, ExperimentError> {
    let (sim, noise) = config.to_sim_config()?;
    let prediction = predict_speed(&sim)?;
    let threshold = match config.analysis.threshold_s {
        Some(t) => t,
        None => default_threshold(&simulate(&sim.silent_baseline())?, sim.t_exec_s),
    };
    let timeline = simulate(&sim)?;
    let query = front_query(config, &sim, threshold)?;
    let discard = config
        .analysis
        .discard_prefix_ranks
        .unwrap_or_else(|| default_discard(sim.topology.longest_distance()));
    let mut notes = Vec::new();
    let front = match detect_front(&timeline, &query) {
        Ok(f) => f,
        Err(AnalysisError::NoWaveDetected { threshold_s }) => {
            return Err(invalid(
                "delays",
                format!(
                    "no idle wave above {threshold_s:.3e} s; raise delays[0].extra_s or set analysis.threshold_s"
                ),
            ))
        }
        Err(e) => return Err(e.into()),
    };
    let metrics = analyze(&timeline, &query, discard, config.analysis.estimator).ok();
    let mut report = CompareReport {
        config_hash: config.content_hash(),
        prediction,
        metrics,
        measured_speed: None,
        deviation: None,
        regions: Vec::new(),
        tolerance: SPEED_TOLERANCE,
        verdict: Verdict::Skipped,
        notes: Vec::new(),
        noise,
    };
    if let Some((iteration, exit)) = sync_exit(config, &timeline) {
        if front.points.iter().all(|p| p.arrival_s <= exit) {
            notes.push(format!(
                "wave annihilated by the synchronizing collective in iteration {iteration}; speed comparison skipped"
            ));
            report.notes = notes;
            return Ok(report);
        }
    }
    if report.prediction.heuristic_kappa {
        notes.push("kappa from the stencil averaging rule; simulation is the reference".into());
    }
    let env = envelope(&front);
    let fit = measure_speed(&env, discard)?;
    report.measured_speed = Some(fit.speed_ranks_per_s);
    report.regions = region_checks(&env, &report.prediction, discard);
    let deviation = if report.regions.is_empty() {
        fit.speed_ranks_per_s / report.prediction.v_silent - 1.0
    } else {
        notes.push("piecewise front: deviation is the worst region".into());
        report
            .regions
            .iter()
            .map(|r| r.deviation)
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap()
    };
    report.deviation = Some(deviation);
    report.verdict = if deviation.abs() <= SPEED_TOLERANCE {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    report.notes = notes;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    /// JSON pointer into the base config, e.g. `/noise/power_percent`.
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Inline experiment document, or a path relative to the sweep file.
    pub base: Value,
    #[serde(default)]
    pub axes: Vec<SweepAxis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: String,
    pub assignments: Vec<(String, Value)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<CompareReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CellReport {
    pub fn verdict(&self) -> Option<Verdict> {
        self.report.as_ref().map(|r| r.verdict)
    }
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<(Self, Value), ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let origin = path.display().to_string();
        let sweep: SweepConfig =
            serde_json::from_str(&text).map_err(|e| parse_error(&origin, &e))?;
        let base = match &sweep.base {
            Value::String(rel) => {
                let p = path.parent().unwrap_or(Path::new(".")).join(rel);
                let text = fs::read_to_string(&p).map_err(io_err(&p))?;
                serde_json::from_str(&text)
                    .map_err(|e| parse_error(&p.display().to_string(), &e))?
            }
            v => v.clone(),
        };
        Ok((sweep, base))
    }

    /// Cartesian product of the axes, first axis slowest.
    pub fn cells(&self) -> Vec<Vec<(String, Value)>> {
        let mut cells = vec![Vec::new()];
        for axis in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    axis.values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((axis.path.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

fn set_pointer(doc: &mut Value, pointer: &str, value: Value) -> Result<(), String> {
    if let Some(slot) = doc.pointer_mut(pointer) {
        *slot = value;
        return Ok(());
    }
    let (parent, key) = pointer
        .rsplit_once('/')
        .ok_or_else(|| format!("`{pointer}` is not a JSON pointer"))?;
    match doc.pointer_mut(parent) {
        Some(Value::Object(map)) => {
            map.insert(key.replace("~1", "/").replace("~0", "~"), value);
            Ok(())
        }
        _ => Err(format!("`{parent}` does not exist in the base config")),
    }
}

fn run_cell(base: &Value, index: usize, assignments: Vec<(String, Value)>) -> CellReport {
    let cell = format!("cell-{index:04}");
    let result = (|| {
        let mut doc = base.clone();
        for (path, v) in &assignments {
            set_pointer(&mut doc, path, v.clone()).map_err(|m| invalid(path.clone(), m))?;
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(doc).map_err(|e| invalid(&cell, e.to_string()))?;
        cfg.validate()?;
        run_compare(&cfg)
    })();
    let (report, error) = match result {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    CellReport {
        cell,
        assignments,
        report,
        error,
    }
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

/// Runs every cell independently; failing cells are recorded, not fatal.
/// Writes one `report.json` per cell, `aggregate.csv` and `sweep.json`.
pub fn run_sweep(
    sweep: &SweepConfig,
    base: &Value,
    out_dir: &Path,
) -> Result<Vec<CellReport>, ExperimentError> {
    let cells: Vec<_> = sweep.cells().into_iter().enumerate().collect();
    let work = || -> Vec<CellReport> {
        cells
            .par_iter()
            .map(|(i, a)| run_cell(base, *i, a.clone()))
            .collect()
    };
    let reports = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| invalid(THREADS_ENV, e.to_string()))?
            .install(work),
        None => work(),
    };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for r in &reports {
        let dir = out_dir.join("cells").join(&r.cell);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_json(&dir.join("report.json"), r)?;
    }
    let path = out_dir.join("aggregate.csv");
    write_aggregate(
        &reports,
        sweep,
        fs::File::create(&path).map_err(io_err(&path))?,
    )?;
    write_json(&out_dir.join("sweep.json"), &reports)?;
    Ok(reports)
}

pub fn write_aggregate<W: std::io::Write>(
    reports: &[CellReport],
    sweep: &SweepConfig,
    writer: W,
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["cell".to_string()];
    header.extend(sweep.axes.iter().map(|a| a.path.clone()));
    header.extend(
        [
            "verdict",
            "kappa",
            "predicted_speed",
            "measured_speed",
            "deviation",
            "decay_rate_s_per_rank",
            "survival_time_s",
            "realized_noise_power",
            "error",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    let num = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in reports {
        let mut row = vec![r.cell.clone()];
        row.extend(r.assignments.iter().map(|(_, v)| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }));
        let rep = r.report.as_ref();
        let metrics = rep.and_then(|x| x.metrics.as_ref());
        row.push(rep.map_or("error".into(), |x| {
            format!("{:?}", x.verdict).to_lowercase()
        }));
        row.push(num(rep.map(|x| x.prediction.kappa)));
        row.push(num(rep.map(|x| x.prediction.v_silent)));
        row.push(num(rep.and_then(|x| x.measured_speed)));
        row.push(num(rep.and_then(|x| x.deviation)));
        row.push(num(metrics.map(|m| m.decay_rate_s_per_rank)));
        row.push(num(metrics.map(|m| m.survival_time_s)));
        row.push(num(rep
            .and_then(|x| x.noise.as_ref())
            .map(|n| n.realized_power)));
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a CSV or JSON trace, chosen by file extension.
pub fn load_timeline(path: &Path) -> Result<Timeline, ExperimentError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let r = std::io::BufReader::new(f);
    Ok(match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Timeline::read_json(r)?,
        _ => Timeline::read_csv(r)?,
    })
}
