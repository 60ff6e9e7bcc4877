//! Closed-form idle-wave speed and shortening predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::ConcurrencyScheme;
use crate::simulator::{Protocol, SimConfig};
use crate::topology::{Rank, TopologyKind, TopologyMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid timing: {0}")]
    InvalidTiming(String),
    #[error("rank {rank} out of range 0..{num_ranks}")]
    InvalidRank { rank: Rank, num_ranks: usize },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
}

/// Slowest wave speed in ranks per second: one rank per iteration.
pub fn v_min(t_exec_s: f64, t_comm_s: f64) -> Result<f64, ModelError> {
    let period = t_exec_s + t_comm_s;
    if !(period > 0.0 && period.is_finite()) || t_exec_s < 0.0 || t_comm_s < 0.0 {
        return Err(ModelError::InvalidTiming(format!(
            "t_exec={t_exec_s}, t_comm={t_comm_s}"
        )));
    }
    Ok(1.0 / period)
}

/// Number of ranks between the injecting rank and the farther end of an
/// open chain.
pub fn alpha(num_ranks: usize, r_inject: Rank) -> Result<usize, ModelError> {
    if r_inject >= num_ranks {
        return Err(ModelError::InvalidRank {
            rank: r_inject,
            num_ranks,
        });
    }
    Ok((num_ranks - 1 - r_inject).max(r_inject))
}

/// Barrier-like upper bound: the whole reach is covered in one iteration.
pub fn v_max(num_ranks: usize, r_inject: Rank, v_min: f64) -> Result<f64, ModelError> {
    Ok(alpha(num_ranks, r_inject)? as f64 * v_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub kappa: f64,
    pub protocol_factor: u8,
    /// Set when the value comes from the stencil averaging rule.
    pub heuristic: bool,
}

fn protocol_factor(scheme: ConcurrencyScheme, rendezvous: bool) -> u8 {
    match scheme {
        ConcurrencyScheme::MwsDir | ConcurrencyScheme::Blocking if rendezvous => 2,
        _ => 1,
    }
}

fn is_single_wait(scheme: ConcurrencyScheme) -> bool {
    matches!(
        scheme,
        ConcurrencyScheme::MwmDim | ConcurrencyScheme::SwmDim
    )
}

/// κ of a one-dimensional neighbourhood with the given distinct distances.
pub fn kappa_for_distances(
    distances: &[usize],
    scheme: ConcurrencyScheme,
    rendezvous: bool,
) -> Kappa {
    let j = distances.iter().copied().max().unwrap_or(0);
    let kappa = if is_single_wait(scheme) {
        j
    } else {
        distances.iter().sum()
    };
    Kappa {
        kappa: kappa as f64,
        protocol_factor: protocol_factor(scheme, rendezvous),
        heuristic: false,
    }
}

/// Stencil rule: floor of the mean of the shorter distances plus the
/// longest one.
pub fn kappa_stencil(distances: &[usize], scheme: ConcurrencyScheme, rendezvous: bool) -> Kappa {
    let mut sorted = distances.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let j = sorted.pop().unwrap_or(0);
    let kappa = if is_single_wait(scheme) || sorted.is_empty() {
        j
    } else {
        sorted.iter().sum::<usize>() / sorted.len() + j
    };
    Kappa {
        kappa: kappa as f64,
        protocol_factor: protocol_factor(scheme, rendezvous),
        heuristic: !is_single_wait(scheme),
    }
}

/// Whether messages of this topology go out as rendezvous.
pub fn uses_rendezvous(topology: &TopologyMatrix, protocol: Protocol) -> bool {
    protocol.is_rendezvous(topology.max_message_bytes())
}

pub fn kappa(
    topology: &TopologyMatrix,
    scheme: ConcurrencyScheme,
    protocol: Protocol,
) -> Result<Kappa, ModelError> {
    let distances = topology.distinct_distances();
    if distances.is_empty() {
        return Err(ModelError::InvalidTopology("no edges".into()));
    }
    let rdv = uses_rendezvous(topology, protocol);
    match topology.kind() {
        TopologyKind::Cartesian { .. } => Ok(kappa_stencil(&distances, scheme, rdv)),
        TopologyKind::Inhomogeneous { regions } if regions.len() > 1 => Err(
            ModelError::InvalidTopology("inhomogeneous topology; use kappa_regions".into()),
        ),
        _ => Ok(kappa_for_distances(&distances, scheme, rdv)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionPrediction {
    pub start: Rank,
    pub end: Rank,
    pub kappa: f64,
    pub v_ranks_per_s: f64,
}

/// Per-region κ of an inhomogeneous compact band, each region using its own
/// reach `j`.
pub fn kappa_regions(
    topology: &TopologyMatrix,
    scheme: ConcurrencyScheme,
    protocol: Protocol,
    v_min: f64,
) -> Result<Vec<RegionPrediction>, ModelError> {
    let TopologyKind::Inhomogeneous { regions } = topology.kind() else {
        let k = kappa(topology, scheme, protocol)?;
        return Ok(vec![RegionPrediction {
            start: 0,
            end: topology.num_ranks(),
            kappa: k.kappa,
            v_ranks_per_s: k.protocol_factor as f64 * k.kappa * v_min,
        }]);
    };
    let rdv = uses_rendezvous(topology, protocol);
    Ok(regions
        .iter()
        .map(|r| {
            let distances: Vec<usize> = (1..=r.j).collect();
            let k = kappa_for_distances(&distances, scheme, rdv);
            RegionPrediction {
                start: r.start,
                end: r.end,
                kappa: k.kappa,
                v_ranks_per_s: k.protocol_factor as f64 * k.kappa * v_min,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub v_min: f64,
    pub v_max: f64,
    pub alpha: usize,
    pub kappa: f64,
    pub v_silent: f64,
    pub protocol_factor: u8,
    pub heuristic_kappa: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_region: Option<Vec<RegionPrediction>>,
}

/// Silent-system prediction for a simulation config. The injection rank is
/// taken from the first delay, or 0 without delays.
pub fn predict_speed(config: &SimConfig) -> Result<Prediction, ModelError> {
    let topology = &config.topology;
    let scheme = config.schedule.scheme();
    let vmin = v_min(config.t_exec_s, config.silent_comm_time())?;
    let r_inject = config.delays.first().map_or(0, |d| d.rank);
    let n = topology.num_ranks();
    let a = alpha(n, r_inject)?;
    let (k, per_region) = match topology.kind() {
        TopologyKind::Inhomogeneous { regions } if regions.len() > 1 => {
            let per = kappa_regions(topology, scheme, config.protocol, vmin)?;
            let origin = per
                .iter()
                .find(|r| (r.start..r.end).contains(&r_inject))
                .unwrap();
            let rdv = uses_rendezvous(topology, config.protocol);
            let k = Kappa {
                kappa: origin.kappa,
                protocol_factor: protocol_factor(scheme, rdv),
                heuristic: false,
            };
            (k, Some(per))
        }
        _ => (kappa(topology, scheme, config.protocol)?, None),
    };
    Ok(Prediction {
        v_min: vmin,
        v_max: a as f64 * vmin,
        alpha: a,
        kappa: k.kappa,
        v_silent: k.protocol_factor as f64 * k.kappa * vmin,
        protocol_factor: k.protocol_factor,
        heuristic_kappa: k.heuristic,
        per_region,
    })
}

/// Remaining wave duration after meeting the given noise intervals.
pub fn predict_shortening(initial_duration_s: f64, encountered_noise_s: &[f64]) -> f64 {
    (initial_duration_s - encountered_noise_s.iter().sum::<f64>()).max(0.0)
}
