//! Per-iteration communication schedules ("split-waits").
//!
//! Each rank executes its [`CommGroup`]s in order once per iteration. All
//! operations of a group are posted together and complete under a single
//! wait-for-all.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Rank, TopologyMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConcurrencyScheme {
    /// One wait per (dimension, distance), both directions.
    #[serde(rename = "mwsdim")]
    MwsDim,
    /// One wait per dimension, all distances and both directions.
    #[serde(rename = "mwmdim")]
    MwmDim,
    /// A single wait for everything.
    #[serde(rename = "swmdim")]
    SwmDim,
    /// One wait per (dimension, distance, direction).
    #[serde(rename = "mwsdir")]
    MwsDir,
    /// Paired blocking send-receive per direction; groups like `MwsDir`.
    #[serde(rename = "blocking")]
    Blocking,
}

impl ConcurrencyScheme {
    pub const ALL: [ConcurrencyScheme; 5] = [
        ConcurrencyScheme::MwsDim,
        ConcurrencyScheme::MwmDim,
        ConcurrencyScheme::SwmDim,
        ConcurrencyScheme::MwsDir,
        ConcurrencyScheme::Blocking,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConcurrencyScheme::MwsDim => "mwsdim",
            ConcurrencyScheme::MwmDim => "mwmdim",
            ConcurrencyScheme::SwmDim => "swmdim",
            ConcurrencyScheme::MwsDir => "mwsdir",
            ConcurrencyScheme::Blocking => "blocking",
        }
    }

    /// Schemes whose waits each cover a single direction.
    pub fn is_per_direction(self) -> bool {
        matches!(
            self,
            ConcurrencyScheme::MwsDir | ConcurrencyScheme::Blocking
        )
    }
}

impl fmt::Display for ConcurrencyScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConcurrencyScheme {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConcurrencyScheme::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ScheduleError::InvalidSchedule(format!("unknown concurrency '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Recv,
    Send,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Send => "send",
            OpKind::Recv => "recv",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CommOp {
    pub kind: OpKind,
    pub partner: Rank,
    pub bytes: u64,
}

/// Ordering key shared by matching groups on all ranks.
///
/// Direction is `0` for positive, `1` for negative, so that sorting puts
/// the positive direction first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub dimension: usize,
    pub distance: usize,
    pub direction: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommGroup {
    pub key: GroupKey,
    pub ops: Vec<CommOp>,
}

/// How absolute distances are assigned to dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionMap {
    /// Use the dimension stored on each edge: grid axis for Cartesian
    /// matrices, a single dimension for chains.
    #[default]
    Natural,
    /// Every distinct absolute distance is its own dimension.
    PerDistance,
    /// Explicit `|distance| -> dimension` table.
    Table(BTreeMap<usize, usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommSchedule {
    scheme: ConcurrencyScheme,
    groups: Vec<Vec<CommGroup>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unmatched {kind} on rank {rank} with partner {partner}")]
pub struct MatchError {
    pub rank: Rank,
    pub kind: OpKind,
    pub partner: Rank,
}

impl CommSchedule {
    /// Assembles a schedule from raw groups, e.g. for hand-written tests.
    /// Call [`validate_matching`] before simulating it.
    pub fn from_groups(scheme: ConcurrencyScheme, groups: Vec<Vec<CommGroup>>) -> Self {
        CommSchedule { scheme, groups }
    }

    pub fn scheme(&self) -> ConcurrencyScheme {
        self.scheme
    }

    pub fn num_ranks(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self, rank: Rank) -> &[CommGroup] {
        &self.groups[rank]
    }

    pub fn groups_mut(&mut self, rank: Rank) -> &mut Vec<CommGroup> {
        &mut self.groups[rank]
    }

    pub fn max_groups(&self) -> usize {
        self.groups.iter().map(Vec::len).max().unwrap_or(0)
    }
}

fn dimension_of(
    map: &DimensionMap,
    edge_dim: usize,
    abs_distance: usize,
) -> Result<usize, ScheduleError> {
    match map {
        DimensionMap::Natural => Ok(edge_dim),
        DimensionMap::PerDistance => Ok(abs_distance),
        DimensionMap::Table(t) => t.get(&abs_distance).copied().ok_or_else(|| {
            ScheduleError::InvalidSchedule(format!(
                "dimension map has no entry for distance {abs_distance}"
            ))
        }),
    }
}

fn key_for(
    scheme: ConcurrencyScheme,
    dimension: usize,
    distance: usize,
    direction: u8,
) -> GroupKey {
    match scheme {
        ConcurrencyScheme::MwsDir | ConcurrencyScheme::Blocking => GroupKey {
            dimension,
            distance,
            direction,
        },
        ConcurrencyScheme::MwsDim => GroupKey {
            dimension,
            distance,
            direction: 0,
        },
        ConcurrencyScheme::MwmDim => GroupKey {
            dimension,
            distance: 0,
            direction: 0,
        },
        ConcurrencyScheme::SwmDim => GroupKey {
            dimension: 0,
            distance: 0,
            direction: 0,
        },
    }
}

/// Groups every rank's sends and receives according to `scheme`.
///
/// A rank sends to `rank + dir*d` and receives from `rank - dir*d` in the
/// group of direction `dir`, so both halves of a message land in groups
/// with the same key on the two ranks. Groups are ordered by ascending
/// dimension, then distance, then positive before negative direction;
/// within a group receives are posted before sends.
pub fn build_schedule(
    topology: &TopologyMatrix,
    scheme: ConcurrencyScheme,
    dimension_map: &DimensionMap,
) -> Result<CommSchedule, ScheduleError> {
    let n = topology.num_ranks();
    let mut incoming: Vec<Vec<(Rank, &crate::topology::Edge)>> = vec![Vec::new(); n];
    for src in 0..n {
        for e in topology.neighbors(src) {
            incoming[e.partner].push((src, e));
        }
    }
    let mut groups = Vec::with_capacity(n);
    for rank in 0..n {
        let mut by_key: BTreeMap<GroupKey, Vec<(OpKind, usize, u8, CommOp)>> = BTreeMap::new();
        // The receive for message src -> rank lives in the group of the
        // direction the sender used, so both halves share a key.
        let sends = topology
            .neighbors(rank)
            .iter()
            .map(|e| (OpKind::Send, e.partner, e));
        let recvs = incoming[rank]
            .iter()
            .map(|&(src, e)| (OpKind::Recv, src, e));
        for (kind, partner, e) in sends.chain(recvs) {
            let d = e.abs_distance();
            let dim = dimension_of(dimension_map, e.dimension, d)?;
            let dir = u8::from(e.distance < 0);
            by_key
                .entry(key_for(scheme, dim, d, dir))
                .or_default()
                .push((
                    kind,
                    d,
                    dir,
                    CommOp {
                        kind,
                        partner,
                        bytes: e.message_bytes,
                    },
                ));
        }
        let rank_groups = by_key
            .into_iter()
            .filter(|(_, ops)| !ops.is_empty())
            .map(|(key, mut ops)| {
                ops.sort_by_key(|(kind, d, dir, op)| (*kind, *d, *dir, op.partner));
                CommGroup {
                    key,
                    ops: ops.into_iter().map(|(_, _, _, op)| op).collect(),
                }
            })
            .collect();
        groups.push(rank_groups);
    }
    Ok(CommSchedule { scheme, groups })
}

/// Location of an operation inside a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpLocation {
    pub group: usize,
    pub index: usize,
}

/// Send and receive group indices for every directed `(src, dst)` pair.
pub type MatchedPairs = HashMap<(Rank, Rank), (usize, usize)>;

/// Checks the global send/receive bijection and returns, for each
/// `(src, dst)` message, the groups holding its send on `src` and its
/// receive on `dst`.
pub fn validate_matching(schedule: &CommSchedule) -> Result<MatchedPairs, MatchError> {
    let n = schedule.num_ranks();
    let mut sends: HashMap<(Rank, Rank), Vec<usize>> = HashMap::new();
    let mut recvs: HashMap<(Rank, Rank), Vec<usize>> = HashMap::new();
    for rank in 0..n {
        for (gi, g) in schedule.groups(rank).iter().enumerate() {
            for op in &g.ops {
                if op.partner >= n || op.partner == rank {
                    return Err(MatchError {
                        rank,
                        kind: op.kind,
                        partner: op.partner,
                    });
                }
                match op.kind {
                    OpKind::Send => sends.entry((rank, op.partner)).or_default().push(gi),
                    OpKind::Recv => recvs.entry((op.partner, rank)).or_default().push(gi),
                }
            }
        }
    }
    let mut pairs = HashMap::with_capacity(sends.len());
    let mut keys: Vec<_> = sends.keys().chain(recvs.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    for (src, dst) in keys {
        let s = sends.get(&(src, dst)).map(Vec::as_slice).unwrap_or(&[]);
        let r = recvs.get(&(src, dst)).map(Vec::as_slice).unwrap_or(&[]);
        match (s, r) {
            ([sg], [rg]) => {
                pairs.insert((src, dst), (*sg, *rg));
            }
            (_, r) if r.len() != 1 => {
                return Err(MatchError {
                    rank: dst,
                    kind: OpKind::Recv,
                    partner: src,
                })
            }
            _ => {
                return Err(MatchError {
                    rank: src,
                    kind: OpKind::Send,
                    partner: dst,
                })
            }
        }
    }
    Ok(pairs)
}
