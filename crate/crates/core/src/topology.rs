//! Communication topology matrices.
//!
//! A [`TopologyMatrix`] records, for every rank, the set of point-to-point
//! partners it exchanges messages with in each iteration. Distances are
//! measured in rank index, which is the unit the propagation model works in.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Rank = usize;

pub const DEFAULT_MESSAGE_BYTES: u64 = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("edge csv: {0}")]
    Csv(String),
}

fn invalid(msg: impl Into<String>) -> TopologyError {
    TopologyError::InvalidTopology(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    #[serde(alias = "open")]
    OpenChain,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stencil {
    #[serde(rename = "faces7pt")]
    Faces7pt,
    #[serde(rename = "full27pt")]
    Full27pt,
}

/// One directed point-to-point edge as seen from its source rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub partner: Rank,
    /// Signed rank distance `partner - rank` (ring-shortest under periodic boundaries).
    pub distance: i64,
    pub message_bytes: u64,
    /// Dimension the edge belongs to; always 0 for chains, the highest
    /// non-zero grid axis for Cartesian decompositions.
    pub dimension: usize,
}

impl Edge {
    pub fn abs_distance(&self) -> usize {
        self.distance.unsigned_abs() as usize
    }
}

/// Half-open rank range `[start, end)` with its own longest distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub start: Rank,
    pub end: Rank,
    pub j: usize,
}

impl Region {
    pub fn contains(&self, rank: Rank) -> bool {
        (self.start..self.end).contains(&rank)
    }
}

/// Provenance of a matrix, kept so the analytic model can pick the right rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyKind {
    /// Every rank talks to `rank ± d` for each `d` in `distances`.
    Chain {
        distances: Vec<usize>,
    },
    Cartesian {
        dims: [usize; 3],
        stencil: Stencil,
    },
    Inhomogeneous {
        regions: Vec<Region>,
    },
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyMatrix {
    num_ranks: usize,
    edges: Vec<Vec<Edge>>,
    boundary: Boundary,
    kind: TopologyKind,
}

impl TopologyMatrix {
    pub fn num_ranks(&self) -> usize {
        self.num_ranks
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn kind(&self) -> &TopologyKind {
        &self.kind
    }

    pub fn neighbors(&self, rank: Rank) -> &[Edge] {
        &self.edges[rank]
    }

    pub fn edge(&self, from: Rank, to: Rank) -> Option<&Edge> {
        self.edges.get(from)?.iter().find(|e| e.partner == to)
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Longest communication distance `j` over all edges (0 for an edgeless matrix).
    pub fn longest_distance(&self) -> usize {
        self.edges
            .iter()
            .flatten()
            .map(Edge::abs_distance)
            .max()
            .unwrap_or(0)
    }

    /// Sorted set of distinct absolute distances present in the matrix.
    pub fn distinct_distances(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self
            .edges
            .iter()
            .flatten()
            .map(Edge::abs_distance)
            .collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn max_message_bytes(&self) -> u64 {
        self.edges
            .iter()
            .flatten()
            .map(|e| e.message_bytes)
            .max()
            .unwrap_or(0)
    }

    /// `true` when every edge `i -> k` has a reverse edge `k -> i` of equal size.
    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().enumerate().all(|(i, es)| {
            es.iter().all(|e| {
                self.edge(e.partner, i)
                    .is_some_and(|r| r.message_bytes == e.message_bytes)
            })
        })
    }

    /// Edge set of the transposed matrix as `(src, dst, bytes)` triples, sorted.
    pub fn transpose_triples(&self) -> Vec<(Rank, Rank, u64)> {
        let mut t: Vec<_> = self
            .triples()
            .into_iter()
            .map(|(s, d, b)| (d, s, b))
            .collect();
        t.sort_unstable();
        t
    }

    /// Edge set as sorted `(src, dst, bytes)` triples.
    pub fn triples(&self) -> Vec<(Rank, Rank, u64)> {
        let mut t: Vec<_> = self
            .edges
            .iter()
            .enumerate()
            .flat_map(|(i, es)| es.iter().map(move |e| (i, e.partner, e.message_bytes)))
            .collect();
        t.sort_unstable();
        t
    }

    /// Region of `rank` for inhomogeneous matrices.
    pub fn region_of(&self, rank: Rank) -> Option<Region> {
        match &self.kind {
            TopologyKind::Inhomogeneous { regions } => {
                regions.iter().copied().find(|r| r.contains(rank))
            }
            _ => None,
        }
    }
}

/// Signed distance from `from` to `to`.
///
/// Under periodic boundaries this is the shortest ring distance; an exact
/// half-ring tie is resolved so that the pair stays antisymmetric
/// (positive from the lower rank).
pub fn signed_distance(from: Rank, to: Rank, num_ranks: usize, boundary: Boundary) -> i64 {
    let raw = to as i64 - from as i64;
    match boundary {
        Boundary::OpenChain => raw,
        Boundary::Periodic => {
            let n = num_ranks as i64;
            let m = raw.rem_euclid(n);
            if 2 * m < n {
                m
            } else if 2 * m > n {
                m - n
            } else if from < to {
                m
            } else {
                -m
            }
        }
    }
}

fn resolve_partner(rank: Rank, offset: i64, num_ranks: usize, boundary: Boundary) -> Option<Rank> {
    let target = rank as i64 + offset;
    match boundary {
        Boundary::OpenChain => (0..num_ranks as i64)
            .contains(&target)
            .then_some(target as Rank),
        Boundary::Periodic => Some(target.rem_euclid(num_ranks as i64) as Rank),
    }
}

fn chain_matrix(
    num_ranks: usize,
    distances: &[usize],
    message_bytes: u64,
    boundary: Boundary,
) -> TopologyMatrix {
    let edges = (0..num_ranks)
        .map(|rank| {
            let mut partners: BTreeMap<Rank, Edge> = BTreeMap::new();
            for &d in distances {
                for offset in [d as i64, -(d as i64)] {
                    if let Some(p) = resolve_partner(rank, offset, num_ranks, boundary) {
                        if p != rank {
                            partners.entry(p).or_insert(Edge {
                                partner: p,
                                distance: signed_distance(rank, p, num_ranks, boundary),
                                message_bytes,
                                dimension: 0,
                            });
                        }
                    }
                }
            }
            partners.into_values().collect()
        })
        .collect();
    let mut distances = distances.to_vec();
    distances.sort_unstable();
    TopologyMatrix {
        num_ranks,
        edges,
        boundary,
        kind: TopologyKind::Chain { distances },
    }
}

fn check_bytes(message_bytes: u64) -> Result<(), TopologyError> {
    if message_bytes == 0 {
        return Err(invalid("message_bytes must be positive"));
    }
    Ok(())
}

/// Dense band: every rank talks to `rank ± 1 … rank ± j`.
pub fn build_compact(
    num_ranks: usize,
    j: usize,
    message_bytes: u64,
    boundary: Boundary,
) -> Result<TopologyMatrix, TopologyError> {
    if j == 0 || j >= num_ranks {
        return Err(invalid(format!(
            "compact reach j={j} must satisfy 1 <= j < num_ranks={num_ranks}"
        )));
    }
    check_bytes(message_bytes)?;
    let d: Vec<usize> = (1..=j).collect();
    Ok(chain_matrix(num_ranks, &d, message_bytes, boundary))
}

/// Gapped band: every rank talks to `rank ± d` for each `d` in the set.
pub fn build_noncompact(
    num_ranks: usize,
    distance_set: &[usize],
    message_bytes: u64,
    boundary: Boundary,
) -> Result<TopologyMatrix, TopologyError> {
    if distance_set.is_empty() {
        return Err(invalid("distance set is empty"));
    }
    let mut sorted = distance_set.to_vec();
    sorted.sort_unstable();
    if sorted[0] == 0 {
        return Err(invalid("distance 0 is not a communication partner"));
    }
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid(format!("duplicate distance in {distance_set:?}")));
    }
    if *sorted.last().unwrap() >= num_ranks {
        return Err(invalid(format!(
            "distance {} not below num_ranks={num_ranks}",
            sorted.last().unwrap()
        )));
    }
    check_bytes(message_bytes)?;
    Ok(chain_matrix(num_ranks, &sorted, message_bytes, boundary))
}

/// Cartesian domain decomposition with open grid boundaries.
///
/// Ranks are linearised inner dimension first: `rank = x + y*nx + z*nx*ny`,
/// and a neighbour at grid offset `(ox, oy, oz)` sits at rank distance
/// `ox + oy*nx + oz*nx*ny`.
///
/// `message_bytes` is indexed by axis (x, y, z) for [`Stencil::Faces7pt`]
/// and by the number of non-zero offsets minus one (face, edge, corner) for
/// [`Stencil::Full27pt`].
pub fn build_cartesian(
    dims: [usize; 3],
    stencil: Stencil,
    message_bytes: [u64; 3],
) -> Result<TopologyMatrix, TopologyError> {
    if dims.contains(&0) {
        return Err(invalid(format!("grid dims {dims:?} must all be >= 1")));
    }
    for b in message_bytes {
        check_bytes(b)?;
    }
    let [nx, ny, nz] = dims;
    let num_ranks = nx * ny * nz;
    let strides = [1i64, nx as i64, (nx * ny) as i64];
    let mut offsets = Vec::new();
    for oz in -1i64..=1 {
        for oy in -1i64..=1 {
            for ox in -1i64..=1 {
                let o = [ox, oy, oz];
                let nonzero = o.iter().filter(|&&v| v != 0).count();
                let keep = match stencil {
                    Stencil::Faces7pt => nonzero == 1,
                    Stencil::Full27pt => nonzero >= 1,
                };
                if keep {
                    offsets.push(o);
                }
            }
        }
    }
    let mut edges = Vec::with_capacity(num_ranks);
    for rank in 0..num_ranks {
        let coord = [rank % nx, (rank / nx) % ny, rank / (nx * ny)];
        let mut partners: BTreeMap<Rank, Edge> = BTreeMap::new();
        for o in &offsets {
            let inside = (0..3).all(|a| {
                let c = coord[a] as i64 + o[a];
                c >= 0 && c < dims[a] as i64
            });
            if !inside {
                continue;
            }
            let distance: i64 = (0..3).map(|a| o[a] * strides[a]).sum();
            let partner = (rank as i64 + distance) as Rank;
            let axis = (0..3).rev().find(|&a| o[a] != 0).unwrap();
            let nonzero = o.iter().filter(|&&v| v != 0).count();
            let bytes = match stencil {
                Stencil::Faces7pt => message_bytes[axis],
                Stencil::Full27pt => message_bytes[nonzero - 1],
            };
            partners.entry(partner).or_insert(Edge {
                partner,
                distance,
                message_bytes: bytes,
                dimension: axis,
            });
        }
        edges.push(partners.into_values().collect());
    }
    Ok(TopologyMatrix {
        num_ranks,
        edges,
        boundary: Boundary::OpenChain,
        kind: TopologyKind::Cartesian { dims, stencil },
    })
}

/// Compact band whose reach varies by rank region.
///
/// An edge `i <-> k` exists iff `|k - i|` is within the reach of both
/// endpoints, which keeps the matrix symmetric across region borders.
pub fn build_inhomogeneous(
    num_ranks: usize,
    regions: &[Region],
    message_bytes: u64,
    boundary: Boundary,
) -> Result<TopologyMatrix, TopologyError> {
    check_bytes(message_bytes)?;
    let mut sorted = regions.to_vec();
    sorted.sort_by_key(|r| r.start);
    let mut cursor = 0;
    for r in &sorted {
        if r.start != cursor || r.end <= r.start {
            return Err(invalid(format!(
                "regions must cover [0, {num_ranks}) disjointly; problem at {r:?}"
            )));
        }
        if r.j == 0 || r.j >= num_ranks {
            return Err(invalid(format!("region {r:?} reach out of range")));
        }
        cursor = r.end;
    }
    if cursor != num_ranks {
        return Err(invalid(format!(
            "regions cover [0, {cursor}) but num_ranks={num_ranks}"
        )));
    }
    let mut reach = vec![0usize; num_ranks];
    for r in &sorted {
        reach[r.start..r.end].fill(r.j);
    }
    let edges = (0..num_ranks)
        .map(|rank| {
            let mut partners: BTreeMap<Rank, Edge> = BTreeMap::new();
            for d in 1..=reach[rank] {
                for offset in [d as i64, -(d as i64)] {
                    let Some(p) = resolve_partner(rank, offset, num_ranks, boundary) else {
                        continue;
                    };
                    let dist = signed_distance(rank, p, num_ranks, boundary);
                    let ad = dist.unsigned_abs() as usize;
                    if p != rank && ad <= reach[p] && ad <= reach[rank] {
                        partners.entry(p).or_insert(Edge {
                            partner: p,
                            distance: dist,
                            message_bytes,
                            dimension: 0,
                        });
                    }
                }
            }
            partners.into_values().collect()
        })
        .collect();
    Ok(TopologyMatrix {
        num_ranks,
        edges,
        boundary,
        kind: TopologyKind::Inhomogeneous { regions: sorted },
    })
}

/// Arbitrary adjacency from `(src, dst, bytes)` triples.
pub fn build_explicit(
    num_ranks: usize,
    triples: &[(Rank, Rank, u64)],
    boundary: Boundary,
) -> Result<TopologyMatrix, TopologyError> {
    if num_ranks == 0 {
        return Err(invalid("num_ranks must be positive"));
    }
    let mut adj: Vec<BTreeMap<Rank, Edge>> = vec![BTreeMap::new(); num_ranks];
    for &(s, d, b) in triples {
        if s >= num_ranks || d >= num_ranks {
            return Err(invalid(format!("edge ({s},{d}) out of range")));
        }
        if s == d {
            return Err(invalid(format!("self edge on rank {s}")));
        }
        check_bytes(b)?;
        let prev = adj[s].insert(
            d,
            Edge {
                partner: d,
                distance: signed_distance(s, d, num_ranks, boundary),
                message_bytes: b,
                dimension: 0,
            },
        );
        if prev.is_some() {
            return Err(invalid(format!("duplicate edge ({s},{d})")));
        }
    }
    Ok(TopologyMatrix {
        num_ranks,
        edges: adj.into_iter().map(|m| m.into_values().collect()).collect(),
        boundary,
        kind: TopologyKind::Explicit,
    })
}

/// Reads `src,dst,bytes` triples; a header row is allowed.
pub fn read_edge_csv<R: Read>(reader: R) -> Result<Vec<(Rank, Rank, u64)>, TopologyError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| TopologyError::Csv(e.to_string()))?;
        if line == 0 && rec.get(0).is_some_and(|f| f.parse::<usize>().is_err()) {
            continue;
        }
        if rec.len() != 3 {
            return Err(TopologyError::Csv(format!(
                "line {}: expected 3 fields, got {}",
                line + 1,
                rec.len()
            )));
        }
        let parse = |i: usize| -> Result<u64, TopologyError> {
            rec[i]
                .parse::<u64>()
                .map_err(|e| TopologyError::Csv(format!("line {}: field {}: {e}", line + 1, i + 1)))
        };
        out.push((parse(0)? as Rank, parse(1)? as Rank, parse(2)?));
    }
    Ok(out)
}

fn default_bytes() -> u64 {
    DEFAULT_MESSAGE_BYTES
}

fn default_cartesian_bytes() -> [u64; 3] {
    [DEFAULT_MESSAGE_BYTES; 3]
}

/// Serializable description of a topology generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Compact {
        num_ranks: usize,
        j: usize,
        #[serde(default = "default_bytes")]
        message_bytes: u64,
        #[serde(default)]
        boundary: Boundary,
    },
    #[serde(alias = "non_compact")]
    Noncompact {
        num_ranks: usize,
        distances: Vec<usize>,
        #[serde(default = "default_bytes")]
        message_bytes: u64,
        #[serde(default)]
        boundary: Boundary,
    },
    Cartesian {
        dims: [usize; 3],
        stencil: Stencil,
        #[serde(default = "default_cartesian_bytes")]
        message_bytes: [u64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_ranks: Option<usize>,
    },
    Inhomogeneous {
        num_ranks: usize,
        regions: Vec<Region>,
        #[serde(default = "default_bytes")]
        message_bytes: u64,
        #[serde(default)]
        boundary: Boundary,
    },
    Explicit {
        num_ranks: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        edges: Vec<(Rank, Rank, u64)>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        csv: Option<PathBuf>,
        #[serde(default)]
        boundary: Boundary,
    },
}

impl TopologySpec {
    pub fn num_ranks(&self) -> usize {
        match self {
            TopologySpec::Compact { num_ranks, .. }
            | TopologySpec::Noncompact { num_ranks, .. }
            | TopologySpec::Inhomogeneous { num_ranks, .. }
            | TopologySpec::Explicit { num_ranks, .. } => *num_ranks,
            TopologySpec::Cartesian { dims, .. } => dims.iter().product(),
        }
    }

    pub fn build(&self) -> Result<TopologyMatrix, TopologyError> {
        match self {
            TopologySpec::Compact {
                num_ranks,
                j,
                message_bytes,
                boundary,
            } => build_compact(*num_ranks, *j, *message_bytes, *boundary),
            TopologySpec::Noncompact {
                num_ranks,
                distances,
                message_bytes,
                boundary,
            } => build_noncompact(*num_ranks, distances, *message_bytes, *boundary),
            TopologySpec::Cartesian {
                dims,
                stencil,
                message_bytes,
                num_ranks,
            } => {
                let product: usize = dims.iter().product();
                if let Some(n) = num_ranks {
                    if *n != product {
                        return Err(invalid(format!(
                            "grid {dims:?} has {product} ranks, num_ranks={n}"
                        )));
                    }
                }
                build_cartesian(*dims, *stencil, *message_bytes)
            }
            TopologySpec::Inhomogeneous {
                num_ranks,
                regions,
                message_bytes,
                boundary,
            } => build_inhomogeneous(*num_ranks, regions, *message_bytes, *boundary),
            TopologySpec::Explicit {
                num_ranks,
                edges,
                csv,
                boundary,
            } => {
                let mut all = edges.clone();
                if let Some(path) = csv {
                    let file = std::fs::File::open(path)
                        .map_err(|e| TopologyError::Csv(format!("{}: {e}", path.display())))?;
                    all.extend(read_edge_csv(file)?);
                }
                build_explicit(*num_ranks, &all, *boundary)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn partners(m: &TopologyMatrix, r: Rank) -> Vec<Rank> {
        m.neighbors(r).iter().map(|e| e.partner).collect()
    }

    #[test]
    fn compact_interior_and_clipping() {
        let m = build_compact(10, 2, 1024, Boundary::OpenChain).unwrap();
        assert_eq!(partners(&m, 5), vec![3, 4, 6, 7]);
        let d: Vec<i64> = m.neighbors(5).iter().map(|e| e.distance).collect();
        assert_eq!(d, vec![-2, -1, 1, 2]);
        let m1 = build_compact(10, 1, 1024, Boundary::OpenChain).unwrap();
        assert_eq!(partners(&m1, 0), vec![1]);
    }

    #[test]
    fn compact_periodic_wraps() {
        let m = build_compact(6, 2, 1024, Boundary::Periodic).unwrap();
        assert_eq!(partners(&m, 0), vec![1, 2, 4, 5]);
        let d: Vec<i64> = m.neighbors(0).iter().map(|e| e.distance).collect();
        assert_eq!(d, vec![1, 2, -2, -1]);
    }

    #[test]
    fn compact_rejects_reach_beyond_ranks() {
        assert!(matches!(
            build_compact(4, 4, 1024, Boundary::OpenChain),
            Err(TopologyError::InvalidTopology(_))
        ));
        assert!(build_compact(4, 0, 1024, Boundary::OpenChain).is_err());
    }

    #[test]
    fn noncompact_partners() {
        let m = build_noncompact(40, &[1, 6], 1024, Boundary::OpenChain).unwrap();
        assert_eq!(partners(&m, 10), vec![4, 9, 11, 16]);
        let m = build_noncompact(40, &[1, 12], 1024, Boundary::OpenChain).unwrap();
        assert_eq!(partners(&m, 20), vec![8, 19, 21, 32]);
    }

    #[test]
    fn noncompact_degenerate_equals_compact() {
        let a = build_noncompact(12, &[1], 64, Boundary::OpenChain).unwrap();
        let b = build_compact(12, 1, 64, Boundary::OpenChain).unwrap();
        assert_eq!(a.triples(), b.triples());
    }

    #[test]
    fn noncompact_rejects_bad_sets() {
        assert!(build_noncompact(10, &[1, 1], 8, Boundary::OpenChain).is_err());
        assert!(build_noncompact(10, &[0, 2], 8, Boundary::OpenChain).is_err());
        assert!(build_noncompact(10, &[], 8, Boundary::OpenChain).is_err());
        assert!(build_noncompact(10, &[10], 8, Boundary::OpenChain).is_err());
    }

    #[test]
    fn cartesian_faces_interior_distances() {
        let m = build_cartesian([4, 5, 6], Stencil::Faces7pt, [1; 3]).unwrap();
        assert_eq!(m.num_ranks(), 120);
        // interior: x=1, y=2, z=3
        let r = 1 + 2 * 4 + 3 * 20;
        let mut d: Vec<i64> = m.neighbors(r).iter().map(|e| e.distance).collect();
        d.sort_unstable();
        assert_eq!(d, vec![-20, -4, -1, 1, 4, 20]);
    }

    #[test]
    fn cartesian_full_corner_has_seven() {
        let m = build_cartesian([2, 4, 5], Stencil::Full27pt, [2048, 128, 8]).unwrap();
        assert_eq!(m.neighbors(0).len(), 7);
        let max = (0..m.num_ranks())
            .map(|r| m.neighbors(r).len())
            .max()
            .unwrap();
        // nx = 2 has no interior x coordinate
        assert_eq!(max, 17);
        let big = build_cartesian([3, 3, 3], Stencil::Full27pt, [1; 3]).unwrap();
        assert_eq!(big.neighbors(13).len(), 26);
        assert!(m.is_symmetric());
    }

    #[test]
    fn cartesian_degenerate_is_chain() {
        let m = build_cartesian([1, 1, 7], Stencil::Faces7pt, [1; 3]).unwrap();
        let c = build_compact(7, 1, 1, Boundary::OpenChain).unwrap();
        assert_eq!(m.triples(), c.triples());
    }

    #[test]
    fn cartesian_num_ranks_mismatch() {
        let spec = TopologySpec::Cartesian {
            dims: [2, 2, 2],
            stencil: Stencil::Faces7pt,
            message_bytes: [1; 3],
            num_ranks: Some(9),
        };
        assert!(spec.build().is_err());
    }

    #[test]
    fn inhomogeneous_counts() {
        let regions = [
            Region {
                start: 0,
                end: 40,
                j: 3,
            },
            Region {
                start: 40,
                end: 80,
                j: 12,
            },
            Region {
                start: 80,
                end: 120,
                j: 3,
            },
        ];
        let m = build_inhomogeneous(120, &regions, 1024, Boundary::OpenChain).unwrap();
        assert_eq!(m.neighbors(60).len(), 24);
        assert!(m.neighbors(2).len() <= 6);
        assert!(m.is_symmetric());
        assert_eq!(m.triples(), m.transpose_triples());
        assert_eq!(m.longest_distance(), 12);
    }

    #[test]
    fn inhomogeneous_single_region_is_compact() {
        let m = build_inhomogeneous(
            30,
            &[Region {
                start: 0,
                end: 30,
                j: 4,
            }],
            8,
            Boundary::OpenChain,
        )
        .unwrap();
        let c = build_compact(30, 4, 8, Boundary::OpenChain).unwrap();
        assert_eq!(m.triples(), c.triples());
    }

    #[test]
    fn inhomogeneous_rejects_gaps_and_overlaps() {
        let gap = [
            Region {
                start: 0,
                end: 5,
                j: 1,
            },
            Region {
                start: 6,
                end: 10,
                j: 1,
            },
        ];
        assert!(build_inhomogeneous(10, &gap, 8, Boundary::OpenChain).is_err());
        let overlap = [
            Region {
                start: 0,
                end: 6,
                j: 1,
            },
            Region {
                start: 5,
                end: 10,
                j: 1,
            },
        ];
        assert!(build_inhomogeneous(10, &overlap, 8, Boundary::OpenChain).is_err());
        let short = [Region {
            start: 0,
            end: 9,
            j: 1,
        }];
        assert!(build_inhomogeneous(10, &short, 8, Boundary::OpenChain).is_err());
    }

    #[test]
    fn periodic_half_ring_tie_is_antisymmetric() {
        assert_eq!(signed_distance(1, 4, 6, Boundary::Periodic), 3);
        assert_eq!(signed_distance(4, 1, 6, Boundary::Periodic), -3);
        assert_eq!(signed_distance(5, 0, 6, Boundary::Periodic), 1);
    }

    #[test]
    fn explicit_csv_roundtrip() {
        let csv = "src,dst,bytes\n0,1,8\n1,0,8\n# comment\n1,2,16\n";
        let t = read_edge_csv(csv.as_bytes()).unwrap();
        assert_eq!(t, vec![(0, 1, 8), (1, 0, 8), (1, 2, 16)]);
        let m = build_explicit(3, &t, Boundary::OpenChain).unwrap();
        assert!(!m.is_symmetric());
        assert_eq!(m.edge(1, 2).unwrap().message_bytes, 16);
        assert!(build_explicit(3, &[(0, 0, 1)], Boundary::OpenChain).is_err());
        assert!(read_edge_csv("0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn spec_serde_shape() {
        let s: TopologySpec =
            serde_json::from_str(r#"{"kind":"compact","num_ranks":10,"j":2}"#).unwrap();
        assert_eq!(
            s,
            TopologySpec::Compact {
                num_ranks: 10,
                j: 2,
                message_bytes: 1024,
                boundary: Boundary::OpenChain
            }
        );
        let s: TopologySpec = serde_json::from_str(
            r#"{"kind":"noncompact","num_ranks":40,"distances":[1,6],"boundary":"periodic"}"#,
        )
        .unwrap();
        assert_eq!(s.build().unwrap().boundary(), Boundary::Periodic);
    }
}
