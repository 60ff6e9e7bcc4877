//! Collective operations as dependency patterns over rank entry times.
//!
//! Vendor tuning variants map onto three behaviour classes:
//! globally synchronizing (allreduce, barrier, `I_MPI_ADJUST_REDUCE=1`),
//! tree reductions that let a wave pass (`I_MPI_ADJUST_REDUCE=8..11`), and
//! gathers that are transparent to it (`I_MPI_ADJUST_REDUCE=2,4..7`).

use serde::{Deserialize, Serialize};

use crate::topology::Rank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum CollectiveClass {
    #[serde(rename = "sync")]
    Synchronizing,
    TreeReduce {
        root: Rank,
        fanout: usize,
    },
    #[serde(rename = "gather")]
    TransparentGather {
        root: Rank,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectiveSpec {
    #[serde(flatten)]
    pub class: CollectiveClass,
    /// Cost of one hop (one tree level, or the whole operation for
    /// synchronizing and gather classes).
    #[serde(default)]
    pub duration_s: f64,
}

impl CollectiveSpec {
    pub fn validate(&self, num_ranks: usize) -> Result<(), String> {
        if !(self.duration_s >= 0.0) {
            return Err(format!("duration_s {} must be >= 0", self.duration_s));
        }
        match self.class {
            CollectiveClass::Synchronizing => Ok(()),
            CollectiveClass::TreeReduce { root, fanout } => {
                if root >= num_ranks {
                    Err(format!("root {root} out of range"))
                } else if fanout < 2 {
                    Err(format!("fanout {fanout} must be >= 2"))
                } else {
                    Ok(())
                }
            }
            CollectiveClass::TransparentGather { root } => {
                if root >= num_ranks {
                    Err(format!("root {root} out of range"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Children of relative rank `v` in a k-nomial tree rooted at 0.
///
/// The parent of `v` is `v` with its lowest non-zero base-`fanout` digit
/// cleared, so children are `v + d * fanout^i` for every `i` below that digit.
pub fn knomial_children(v: usize, fanout: usize, n: usize) -> Vec<usize> {
    let mut children = Vec::new();
    let mut span = 1usize;
    while span < n {
        if !v.is_multiple_of(span * fanout) {
            break;
        }
        for d in 1..fanout {
            let c = v + d * span;
            if c < n {
                children.push(c);
            }
        }
        span = span.saturating_mul(fanout);
    }
    children
}

/// Exit time of every rank given the times they enter the collective.
pub fn apply_collective(spec: &CollectiveSpec, entry_times: &[f64]) -> Vec<f64> {
    let n = entry_times.len();
    let latest = entry_times
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    match spec.class {
        CollectiveClass::Synchronizing => vec![latest + spec.duration_s; n],
        CollectiveClass::TransparentGather { root } => {
            let mut exit: Vec<f64> = entry_times.iter().map(|t| t + spec.duration_s).collect();
            exit[root] = latest + spec.duration_s;
            exit
        }
        CollectiveClass::TreeReduce { root, fanout } => {
            let abs = |v: usize| (v + root) % n;
            let mut exit_rel = vec![0.0; n];
            // children always have larger relative rank
            for v in (0..n).rev() {
                let ready = knomial_children(v, fanout, n)
                    .into_iter()
                    .map(|c| exit_rel[c])
                    .fold(entry_times[abs(v)], f64::max);
                exit_rel[v] = ready + spec.duration_s;
            }
            let mut exit = vec![0.0; n];
            for (v, t) in exit_rel.into_iter().enumerate() {
                exit[abs(v)] = t;
            }
            exit
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(class: CollectiveClass, duration_s: f64) -> CollectiveSpec {
        CollectiveSpec { class, duration_s }
    }

    #[test]
    fn synchronizing_equal_entries() {
        let out = apply_collective(&spec(CollectiveClass::Synchronizing, 0.5), &[2.0; 5]);
        assert_eq!(out, vec![2.5; 5]);
    }

    #[test]
    fn synchronizing_propagates_single_delay_to_all() {
        let mut entry = vec![1.0; 8];
        entry[3] += 4.0;
        let out = apply_collective(&spec(CollectiveClass::Synchronizing, 0.0), &entry);
        assert!(out.iter().all(|&t| t == 5.0));
    }

    #[test]
    fn gather_delays_only_rank_and_root() {
        let mut entry = vec![1.0; 8];
        entry[5] += 3.0;
        let out = apply_collective(
            &spec(CollectiveClass::TransparentGather { root: 0 }, 0.0),
            &entry,
        );
        for (r, t) in out.iter().enumerate() {
            let expected = if r == 0 || r == 5 { 4.0 } else { 1.0 };
            assert_eq!(*t, expected, "rank {r}");
        }
    }

    #[test]
    fn binomial_tree_shape() {
        assert_eq!(knomial_children(0, 2, 8), vec![1, 2, 4]);
        assert_eq!(knomial_children(4, 2, 8), vec![5, 6]);
        assert_eq!(knomial_children(6, 2, 8), vec![7]);
        assert!(knomial_children(7, 2, 8).is_empty());
        assert_eq!(knomial_children(0, 3, 9), vec![1, 2, 3, 6]);
    }

    #[test]
    fn every_rank_has_exactly_one_parent() {
        for (n, f) in [(1, 2), (7, 2), (16, 2), (20, 3), (65, 4)] {
            let mut seen = vec![0; n];
            for v in 0..n {
                for c in knomial_children(v, f, n) {
                    seen[c] += 1;
                }
            }
            assert_eq!(seen[0], 0);
            assert!(seen[1..].iter().all(|&s| s == 1), "n={n} f={f}");
        }
    }

    #[test]
    fn tree_reduce_is_logarithmic_on_silent_entries() {
        let d = 0.1;
        for n in [2usize, 8, 64, 100, 1000] {
            let out = apply_collective(
                &spec(CollectiveClass::TreeReduce { root: 0, fanout: 2 }, d),
                &vec![0.0; n],
            );
            let worst = out.iter().copied().fold(0.0, f64::max);
            let levels = (n as f64).log2().ceil() + 1.0;
            assert!(worst <= levels * d + 1e-12, "n={n}: {worst}");
            // leaves leave after a single hop
            assert!((out[n - 1] - d).abs() < 1e-12);
        }
    }

    #[test]
    fn tree_reduce_delays_only_ancestors() {
        let mut entry = vec![0.0; 16];
        entry[6] = 5.0;
        let out = apply_collective(
            &spec(CollectiveClass::TreeReduce { root: 0, fanout: 2 }, 0.0),
            &entry,
        );
        let delayed: Vec<usize> = (0..16).filter(|&r| out[r] > 0.0).collect();
        assert_eq!(delayed, vec![0, 4, 6]);
    }

    #[test]
    fn tree_reduce_respects_root_offset() {
        let mut entry = vec![0.0; 8];
        entry[1] = 2.0;
        let out = apply_collective(
            &spec(CollectiveClass::TreeReduce { root: 3, fanout: 2 }, 0.0),
            &entry,
        );
        // relative rank of 1 is 6, ancestors 4 and 0 -> ranks 7 and 3
        let delayed: Vec<usize> = (0..8).filter(|&r| out[r] > 0.0).collect();
        assert_eq!(delayed, vec![1, 3, 7]);
    }

    #[test]
    fn validate_rejects_bad_specs() {
        assert!(
            spec(CollectiveClass::TreeReduce { root: 0, fanout: 1 }, 0.0)
                .validate(4)
                .is_err()
        );
        assert!(spec(CollectiveClass::TransparentGather { root: 4 }, 0.0)
            .validate(4)
            .is_err());
        assert!(spec(CollectiveClass::Synchronizing, -1.0)
            .validate(4)
            .is_err());
    }

    #[test]
    fn serde_shape() {
        let s: CollectiveSpec = serde_json::from_str(
            r#"{"class":"tree_reduce","root":0,"fanout":2,"duration_s":0.001}"#,
        )
        .unwrap();
        assert_eq!(s.class, CollectiveClass::TreeReduce { root: 0, fanout: 2 });
        let s: CollectiveSpec = serde_json::from_str(r#"{"class":"sync"}"#).unwrap();
        assert_eq!(s.duration_s, 0.0);
    }
}
