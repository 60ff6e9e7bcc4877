//! Per-rank phase timelines and their CSV/JSON forms.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::Rank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Compute,
    Wait,
    Collective,
    #[serde(rename = "delay")]
    InjectedDelay,
    Noise,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Compute => "compute",
            Phase::Wait => "wait",
            Phase::Collective => "collective",
            Phase::InjectedDelay => "delay",
            Phase::Noise => "noise",
        }
    }

    /// Time spent inside the message-passing library.
    pub fn is_library(self) -> bool {
        matches!(self, Phase::Wait | Phase::Collective)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = TimelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "compute" => Phase::Compute,
            "wait" => Phase::Wait,
            "collective" => Phase::Collective,
            "delay" => Phase::InjectedDelay,
            "noise" => Phase::Noise,
            other => return Err(TimelineError::Parse(format!("unknown phase '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
    pub phase: Phase,
    pub iteration: usize,
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn is_empty(&self) -> bool {
        self.end_s <= self.start_s
    }
}

#[derive(Debug, Error)]
pub enum TimelineError {
    #[error("timeline parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One flat row of the exported trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub rank: Rank,
    pub iteration: usize,
    pub phase: Phase,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Timeline {
    ranks: Vec<Vec<Interval>>,
}

impl Timeline {
    pub fn new(num_ranks: usize) -> Self {
        Timeline {
            ranks: vec![Vec::new(); num_ranks],
        }
    }

    pub fn num_ranks(&self) -> usize {
        self.ranks.len()
    }

    pub fn rank(&self, rank: Rank) -> &[Interval] {
        &self.ranks[rank]
    }

    /// Appends a phase; empty intervals are skipped.
    pub fn push(&mut self, rank: Rank, start_s: f64, end_s: f64, phase: Phase, iteration: usize) {
        if end_s > start_s {
            self.ranks[rank].push(Interval {
                start_s,
                end_s,
                phase,
                iteration,
            });
        }
    }

    pub fn end_time(&self) -> f64 {
        self.ranks
            .iter()
            .filter_map(|r| r.last())
            .map(|i| i.end_s)
            .fold(0.0, f64::max)
    }

    /// Total time in `phase` summed over all ranks.
    pub fn total(&self, phase: Phase) -> f64 {
        self.ranks
            .iter()
            .flatten()
            .filter(|i| i.phase == phase)
            .map(Interval::len)
            .sum()
    }

    pub fn rank_total(&self, rank: Rank, phase: Phase) -> f64 {
        self.ranks[rank]
            .iter()
            .filter(|i| i.phase == phase)
            .map(Interval::len)
            .sum()
    }

    pub fn records(&self) -> impl Iterator<Item = Record> + '_ {
        self.ranks.iter().enumerate().flat_map(|(rank, ivs)| {
            ivs.iter().map(move |i| Record {
                rank,
                iteration: i.iteration,
                phase: i.phase,
                start_s: i.start_s,
                end_s: i.end_s,
            })
        })
    }

    pub fn from_records<I: IntoIterator<Item = Record>>(records: I) -> Self {
        let mut ranks: Vec<Vec<Interval>> = Vec::new();
        for r in records {
            if r.rank >= ranks.len() {
                ranks.resize(r.rank + 1, Vec::new());
            }
            ranks[r.rank].push(Interval {
                start_s: r.start_s,
                end_s: r.end_s,
                phase: r.phase,
                iteration: r.iteration,
            });
        }
        for r in &mut ranks {
            r.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        }
        Timeline { ranks }
    }

    /// Writes `rank,iteration,phase,start_s,end_s` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TimelineError> {
        let mut w = csv::Writer::from_writer(writer);
        for r in self.records() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, TimelineError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["rank", "iteration", "phase", "start_s", "end_s"];
        if headers.iter().ne(expected) {
            return Err(TimelineError::Parse(format!(
                "expected header {}, got {}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let records: Result<Vec<Record>, _> = rdr.deserialize().collect();
        Ok(Timeline::from_records(records?))
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<(), TimelineError> {
        let doc = TimelineDoc {
            num_ranks: self.num_ranks(),
            records: self.records().collect(),
        };
        serde_json::to_writer(writer, &doc)?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self, TimelineError> {
        let doc: TimelineDoc = serde_json::from_reader(reader)?;
        let mut t = Timeline::from_records(doc.records);
        if t.ranks.len() < doc.num_ranks {
            t.ranks.resize(doc.num_ranks, Vec::new());
        }
        Ok(t)
    }

    /// Checks that every rank's intervals start at 0 and tile time without
    /// gaps or overlaps (up to `tol` seconds).
    pub fn check_contiguous(&self, tol: f64) -> Result<(), String> {
        for (rank, ivs) in self.ranks.iter().enumerate() {
            let mut cursor = 0.0;
            for (k, iv) in ivs.iter().enumerate() {
                if (iv.start_s - cursor).abs() > tol || iv.end_s < iv.start_s {
                    return Err(format!(
                        "rank {rank} interval {k} [{}, {}] does not continue from {cursor}",
                        iv.start_s, iv.end_s
                    ));
                }
                cursor = iv.end_s;
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TimelineDoc {
    num_ranks: usize,
    records: Vec<Record>,
}

/// Fraction of ranks inside the library (wait or collective), averaged over
/// consecutive bins of `bin_width_s` starting at 0. Each entry is
/// `(bin start, fraction)`.
pub fn library_fraction(timeline: &Timeline, bin_width_s: f64) -> Vec<(f64, f64)> {
    assert!(bin_width_s > 0.0, "bin width must be positive");
    let n = timeline.num_ranks();
    let end = timeline.end_time();
    if n == 0 || end <= 0.0 {
        return Vec::new();
    }
    let bins = (end / bin_width_s).ceil() as usize;
    let mut acc = vec![0.0; bins];
    for iv in timeline
        .ranks
        .iter()
        .flatten()
        .filter(|i| i.phase.is_library())
    {
        let first = (iv.start_s / bin_width_s).floor() as usize;
        let last = ((iv.end_s / bin_width_s).ceil() as usize).min(bins);
        for (b, slot) in acc.iter_mut().enumerate().take(last).skip(first) {
            let lo = b as f64 * bin_width_s;
            let hi = lo + bin_width_s;
            let overlap = iv.end_s.min(hi) - iv.start_s.max(lo);
            if overlap > 0.0 {
                *slot += overlap;
            }
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(b, busy)| (b as f64 * bin_width_s, busy / (bin_width_s * n as f64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Timeline {
        let mut t = Timeline::new(2);
        t.push(0, 0.0, 1.0, Phase::Compute, 0);
        t.push(0, 1.0, 1.5, Phase::Wait, 0);
        t.push(1, 0.0, 1.0, Phase::Compute, 0);
        t.push(1, 1.0, 1.25, Phase::InjectedDelay, 0);
        t.push(1, 1.25, 1.5, Phase::Noise, 0);
        t.push(1, 1.5, 1.5, Phase::Wait, 0);
        t
    }

    #[test]
    fn empty_intervals_are_dropped() {
        assert_eq!(sample().rank(1).len(), 3);
        sample().check_contiguous(0.0).unwrap();
    }

    #[test]
    fn csv_roundtrip_and_header() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("rank,iteration,phase,start_s,end_s\n"));
        assert!(text.contains("1,0,delay,1.0,1.25"));
        assert_eq!(Timeline::read_csv(buf.as_slice()).unwrap(), t);
        assert!(Timeline::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_json(&mut buf).unwrap();
        assert_eq!(Timeline::read_json(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn fraction_integrates_to_library_time() {
        let t = sample();
        let f = library_fraction(&t, 0.1);
        let integral: f64 = f.iter().map(|(_, x)| x * 0.1 * 2.0).sum();
        assert!((integral - 0.5).abs() < 1e-12);
        assert!(f.iter().all(|(_, x)| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn gap_is_detected() {
        let mut t = Timeline::new(1);
        t.push(0, 0.0, 1.0, Phase::Compute, 0);
        t.push(0, 1.5, 2.0, Phase::Compute, 1);
        assert!(t.check_contiguous(1e-12).is_err());
    }
}
