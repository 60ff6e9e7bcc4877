//! Idle-wave propagation in barrier-free bulk-synchronous programs.
//!
//! A deterministic simulator of point-to-point halo exchanges together with
//! a closed-form model for how fast a one-off delay travels through the
//! ranks, how it decays under noise, and how collectives interact with it.

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod collectives;
pub mod experiment;
pub mod model;
pub mod noise;
pub mod schedule;
pub mod simulator;
pub mod stats;
pub mod timeline;
pub mod topology;

pub use analysis::{
    analyze, default_threshold, detect_front, measure_decay, measure_speed, AnalysisError,
    DecayMetrics, Direction, Estimator, Front, FrontPoint, FrontQuery, SpeedFit, WaveMetrics,
};
pub use collectives::{apply_collective, CollectiveClass, CollectiveSpec};
pub use model::{
    alpha, kappa, kappa_regions, predict_shortening, predict_speed, v_max, v_min, Kappa,
    ModelError, Prediction, RegionPrediction,
};
pub use noise::{calibrate_power, calibrate_realized, NoiseDistribution, NoiseError, NoiseSpec};
pub use schedule::{
    build_schedule, validate_matching, CommGroup, CommOp, CommSchedule, ConcurrencyScheme,
    DimensionMap, GroupKey, MatchError, MatchedPairs, OpKind,
};
pub use simulator::{
    simulate, CommCost, DelayInjection, Protocol, ScheduledCollective, SimConfig, SimError,
};
pub use timeline::{library_fraction, Interval, Phase, Record, Timeline, TimelineError};
pub use topology::{
    build_cartesian, build_compact, build_explicit, build_inhomogeneous, build_noncompact,
    Boundary, Edge, Rank, Region, Stencil, TopologyError, TopologyKind, TopologyMatrix,
    TopologySpec,
};
