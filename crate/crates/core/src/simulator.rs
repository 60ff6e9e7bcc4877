//! Deterministic longest-path evaluation of bulk-synchronous timelines.
//!
//! Every rank alternates a compute block with its communication groups.
//! A group completes when all of its operations do:
//!
//! * a receive completes at `max(own reach, sender's post) + cost`;
//! * under rendezvous a send additionally completes at
//!   `max(own reach, receiver's post) + cost`;
//! * an eager send completes on posting.
//!
//! Posting happens the instant a rank reaches the group. Concurrent
//! operations overlap, so a group costs the maximum, not the sum, of its
//! operations. The dependency graph of one iteration is identical for all
//! iterations, so its topological order is computed once.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collectives::{apply_collective, CollectiveSpec};
use crate::noise::{NoiseError, NoiseSpec};
use crate::schedule::{validate_matching, CommSchedule, MatchError, OpKind};
use crate::timeline::{Phase, Timeline};
use crate::topology::{Rank, TopologyMatrix};

pub const DEFAULT_EAGER_LIMIT_BYTES: u64 = 16384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Eager,
    Rendezvous,
    /// Eager up to and including `eager_limit_bytes`, rendezvous above.
    Auto {
        eager_limit_bytes: u64,
    },
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol::Auto {
            eager_limit_bytes: DEFAULT_EAGER_LIMIT_BYTES,
        }
    }
}

impl Protocol {
    pub fn is_rendezvous(self, bytes: u64) -> bool {
        match self {
            Protocol::Eager => false,
            Protocol::Rendezvous => true,
            Protocol::Auto { eager_limit_bytes } => bytes > eager_limit_bytes,
        }
    }
}

/// Per-message communication time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommCost {
    Uniform(f64),
    /// Ranks are packed into consecutive domains of `domain_size`; messages
    /// crossing a domain border cost `inter_s`, others `intra_s`.
    Domains {
        domain_size: usize,
        intra_s: f64,
        inter_s: f64,
    },
    /// Explicit `(src, dst, seconds)` overrides on top of a default.
    PerEdge {
        default_s: f64,
        edges: Vec<(Rank, Rank, f64)>,
    },
}

impl Default for CommCost {
    fn default() -> Self {
        CommCost::Uniform(0.0)
    }
}

impl CommCost {
    fn values(&self) -> Vec<f64> {
        match self {
            CommCost::Uniform(c) => vec![*c],
            CommCost::Domains {
                intra_s, inter_s, ..
            } => vec![*intra_s, *inter_s],
            CommCost::PerEdge { default_s, edges } => std::iter::once(*default_s)
                .chain(edges.iter().map(|e| e.2))
                .collect(),
        }
    }

    /// Scales every cost by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            CommCost::Uniform(c) => CommCost::Uniform(c * factor),
            CommCost::Domains {
                domain_size,
                intra_s,
                inter_s,
            } => CommCost::Domains {
                domain_size: *domain_size,
                intra_s: intra_s * factor,
                inter_s: inter_s * factor,
            },
            CommCost::PerEdge { default_s, edges } => CommCost::PerEdge {
                default_s: default_s * factor,
                edges: edges.iter().map(|&(s, d, c)| (s, d, c * factor)).collect(),
            },
        }
    }
}

struct CostTable<'a> {
    cost: &'a CommCost,
    overrides: HashMap<(Rank, Rank), f64>,
}

impl<'a> CostTable<'a> {
    fn new(cost: &'a CommCost) -> Self {
        let overrides = match cost {
            CommCost::PerEdge { edges, .. } => edges.iter().map(|&(s, d, c)| ((s, d), c)).collect(),
            _ => HashMap::new(),
        };
        CostTable { cost, overrides }
    }

    fn get(&self, src: Rank, dst: Rank) -> f64 {
        match self.cost {
            CommCost::Uniform(c) => *c,
            CommCost::Domains {
                domain_size,
                intra_s,
                inter_s,
            } => {
                if src / domain_size == dst / domain_size {
                    *intra_s
                } else {
                    *inter_s
                }
            }
            CommCost::PerEdge { default_s, .. } => self
                .overrides
                .get(&(src, dst))
                .copied()
                .unwrap_or(*default_s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayInjection {
    pub rank: Rank,
    pub iteration: usize,
    pub extra_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledCollective {
    pub iteration: usize,
    #[serde(flatten)]
    pub spec: CollectiveSpec,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub topology: TopologyMatrix,
    pub schedule: CommSchedule,
    pub iterations: usize,
    pub t_exec_s: f64,
    pub comm_cost: CommCost,
    pub protocol: Protocol,
    pub delays: Vec<DelayInjection>,
    pub noise: Option<NoiseSpec>,
    pub collectives: Vec<ScheduledCollective>,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("dependency cycle in schedule around rank {rank}, group {group}")]
    Cycle { rank: Rank, group: usize },
}

impl SimConfig {
    pub fn num_ranks(&self) -> usize {
        self.topology.num_ranks()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        let n = self.num_ranks();
        if self.schedule.num_ranks() != n {
            return bad(format!(
                "schedule has {} ranks, topology {n}",
                self.schedule.num_ranks()
            ));
        }
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if !(self.t_exec_s > 0.0 && self.t_exec_s.is_finite()) {
            return bad(format!("t_exec {} must be > 0", self.t_exec_s));
        }
        if self
            .comm_cost
            .values()
            .iter()
            .any(|c| !(*c >= 0.0 && c.is_finite()))
        {
            return bad("communication costs must be finite and >= 0".into());
        }
        if let CommCost::Domains { domain_size: 0, .. } = self.comm_cost {
            return bad("domain_size must be positive".into());
        }
        for (i, d) in self.delays.iter().enumerate() {
            if d.rank >= n {
                return bad(format!("delays[{i}].rank {} out of range 0..{n}", d.rank));
            }
            if d.iteration >= self.iterations {
                return bad(format!(
                    "delays[{i}].iteration {} beyond {} iterations",
                    d.iteration, self.iterations
                ));
            }
            if !(d.extra_s > 0.0 && d.extra_s.is_finite()) {
                return bad(format!("delays[{i}].extra_s {} must be > 0", d.extra_s));
            }
        }
        for (i, c) in self.collectives.iter().enumerate() {
            if c.iteration >= self.iterations {
                return bad(format!(
                    "collectives[{i}].iteration {} beyond {} iterations",
                    c.iteration, self.iterations
                ));
            }
            c.spec
                .validate(n)
                .map_err(|m| SimError::InvalidConfig(format!("collectives[{i}]: {m}")))?;
        }
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        Ok(())
    }

    /// Per-iteration communication time of a silent, lockstep run: the sum
    /// over groups of the costliest dependency in each group, maximised
    /// over ranks.
    pub fn silent_comm_time(&self) -> f64 {
        let costs = CostTable::new(&self.comm_cost);
        (0..self.num_ranks())
            .map(|r| {
                self.schedule
                    .groups(r)
                    .iter()
                    .map(|g| {
                        g.ops
                            .iter()
                            .filter_map(|op| match op.kind {
                                OpKind::Recv => Some(costs.get(op.partner, r)),
                                OpKind::Send if self.protocol.is_rendezvous(op.bytes) => {
                                    Some(costs.get(r, op.partner))
                                }
                                OpKind::Send => None,
                            })
                            .fold(0.0, f64::max)
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Length of one silent lockstep iteration.
    pub fn silent_period(&self) -> f64 {
        self.t_exec_s + self.silent_comm_time()
    }

    /// Rank-seconds of a silent run, the reference for noise power.
    pub fn silent_total(&self) -> f64 {
        self.num_ranks() as f64 * self.iterations as f64 * self.silent_period()
    }

    /// Copy with injected delays removed; noise is kept.
    pub fn silent_baseline(&self) -> SimConfig {
        SimConfig {
            delays: Vec::new(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum ReachRef {
    Start(Rank),
    Done(usize),
}

#[derive(Debug, Clone, Copy)]
struct Dep {
    reach: ReachRef,
    cost: f64,
}

/// Precomputed per-iteration dependency structure.
struct Plan {
    offsets: Vec<usize>,
    node_rank: Vec<Rank>,
    deps: Vec<Vec<Dep>>,
    order: Vec<usize>,
}

impl Plan {
    fn build(config: &SimConfig) -> Result<Plan, SimError> {
        let schedule = &config.schedule;
        let n = schedule.num_ranks();
        let pairs = validate_matching(schedule)?;
        let costs = CostTable::new(&config.comm_cost);
        let mut offsets = Vec::with_capacity(n + 1);
        let mut node_rank = Vec::new();
        offsets.push(0);
        for r in 0..n {
            node_rank.extend(std::iter::repeat_n(r, schedule.groups(r).len()));
            offsets.push(node_rank.len());
        }
        let reach_of = |rank: Rank, group: usize| {
            if group == 0 {
                ReachRef::Start(rank)
            } else {
                ReachRef::Done(offsets[rank] + group - 1)
            }
        };
        let total = node_rank.len();
        let mut deps = vec![Vec::new(); total];
        for r in 0..n {
            for (g, group) in schedule.groups(r).iter().enumerate() {
                let node = offsets[r] + g;
                for op in &group.ops {
                    match op.kind {
                        OpKind::Recv => {
                            let (send_group, _) = pairs[&(op.partner, r)];
                            deps[node].push(Dep {
                                reach: reach_of(op.partner, send_group),
                                cost: costs.get(op.partner, r),
                            });
                        }
                        OpKind::Send if config.protocol.is_rendezvous(op.bytes) => {
                            let (_, recv_group) = pairs[&(r, op.partner)];
                            deps[node].push(Dep {
                                reach: reach_of(op.partner, recv_group),
                                cost: costs.get(r, op.partner),
                            });
                        }
                        OpKind::Send => {}
                    }
                }
            }
        }
        // Kahn's algorithm over "group done" nodes.
        let mut indegree = vec![0usize; total];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); total];
        for node in 0..total {
            let r = node_rank[node];
            let mut preds: Vec<usize> = deps[node]
                .iter()
                .filter_map(|d| match d.reach {
                    ReachRef::Done(p) => Some(p),
                    ReachRef::Start(_) => None,
                })
                .collect();
            if node > offsets[r] {
                preds.push(node - 1);
            }
            preds.sort_unstable();
            preds.dedup();
            indegree[node] = preds.len();
            for p in preds {
                succ[p].push(node);
            }
        }
        let mut queue: VecDeque<usize> = (0..total).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(total);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &s in &succ[v] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    queue.push_back(s);
                }
            }
        }
        if order.len() != total {
            let stuck = (0..total).find(|&v| indegree[v] > 0).unwrap();
            let rank = node_rank[stuck];
            return Err(SimError::Cycle {
                rank,
                group: stuck - offsets[rank],
            });
        }
        Ok(Plan {
            offsets,
            node_rank,
            deps,
            order,
        })
    }
}

/// Computes every rank's phase timeline.
pub fn simulate(config: &SimConfig) -> Result<Timeline, SimError> {
    config.validate()?;
    let plan = Plan::build(config)?;
    let n = config.num_ranks();
    let mut timeline = Timeline::new(n);

    let mut delay_at: HashMap<(usize, Rank), f64> = HashMap::new();
    for d in &config.delays {
        *delay_at.entry((d.iteration, d.rank)).or_default() += d.extra_s;
    }
    let mut collectives_at: Vec<Vec<&CollectiveSpec>> = vec![Vec::new(); config.iterations];
    for c in &config.collectives {
        collectives_at[c.iteration].push(&c.spec);
    }

    let mut clock = vec![0.0f64; n];
    let mut start = vec![0.0f64; n];
    let mut done = vec![0.0f64; plan.node_rank.len()];

    for t in 0..config.iterations {
        for r in 0..n {
            let mut c = clock[r];
            timeline.push(r, c, c + config.t_exec_s, Phase::Compute, t);
            c += config.t_exec_s;
            if let Some(&extra) = delay_at.get(&(t, r)) {
                timeline.push(r, c, c + extra, Phase::InjectedDelay, t);
                c += extra;
            }
            if let Some(noise) = &config.noise {
                let extra = noise.draw(r, t);
                timeline.push(r, c, c + extra, Phase::Noise, t);
                c += extra;
            }
            start[r] = c;
        }

        let reach = |done: &[f64], rr: ReachRef| match rr {
            ReachRef::Start(r) => start[r],
            ReachRef::Done(node) => done[node],
        };
        for &node in &plan.order {
            let r = plan.node_rank[node];
            let own = if node == plan.offsets[r] {
                start[r]
            } else {
                done[node - 1]
            };
            let finish = plan.deps[node]
                .iter()
                .map(|d| own.max(reach(&done, d.reach)) + d.cost)
                .fold(own, f64::max);
            done[node] = finish;
        }

        for r in 0..n {
            let mut c = start[r];
            for node in plan.offsets[r]..plan.offsets[r + 1] {
                timeline.push(r, c, done[node], Phase::Wait, t);
                c = done[node];
            }
            clock[r] = c;
        }

        for spec in &collectives_at[t] {
            let exit = apply_collective(spec, &clock);
            for r in 0..n {
                timeline.push(r, clock[r], exit[r], Phase::Collective, t);
                clock[r] = exit[r];
            }
        }
    }
    Ok(timeline)
}
