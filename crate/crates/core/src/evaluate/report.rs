//! Priority distribution and wall-clock timing reports.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{BugReport, Priority};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelShare {
    pub priority: Priority,
    pub count: u64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    /// Reports with a known priority.
    pub total: u64,
    /// Reports whose priority is unknown; not part of the shares.
    pub unknown: u64,
    pub levels: Vec<LevelShare>,
}

/// Share of each priority level among reports with a known priority.
pub fn distribution_report(reports: &[BugReport]) -> DistributionReport {
    let mut counts = [0u64; Priority::COUNT];
    let mut unknown = 0;
    for r in reports {
        match r.priority {
            Some(p) => counts[p.index()] += 1,
            None => unknown += 1,
        }
    }
    let total: u64 = counts.iter().sum();
    let levels = Priority::ALL
        .iter()
        .map(|&p| LevelShare {
            priority: p,
            count: counts[p.index()],
            share: if total == 0 {
                0.0
            } else {
                counts[p.index()] as f64 / total as f64
            },
        })
        .collect();
    DistributionReport { total, unknown, levels }
}

impl DistributionReport {
    pub fn share(&self, priority: Priority) -> f64 {
        self.levels[priority.index()].share
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<6}{:>10}{:>10}\n", "level", "count", "share");
        for l in &self.levels {
            out += &format!("{:<6}{:>10}{:>9.2}%\n", l.priority, l.count, 100.0 * l.share);
        }
        out += &format!("total {:>10} (unknown priority: {})\n", self.total, self.unknown);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub kind: String,
    pub seconds: f64,
    pub items: u64,
    /// `seconds / items`, absent when no items were processed.
    pub per_item_seconds: Option<f64>,
    /// Process peak resident set size at the end of the phase, when the
    /// platform exposes it.
    pub peak_memory_bytes: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<PhaseTiming>,
}

impl TimingReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, phase: &str, kind: &str, elapsed: Duration, items: u64) {
        let seconds = elapsed.as_secs_f64();
        self.rows.push(PhaseTiming {
            phase: phase.to_string(),
            kind: kind.to_string(),
            seconds,
            items,
            per_item_seconds: (items > 0).then(|| seconds / items as f64),
            peak_memory_bytes: peak_memory_bytes(),
        });
    }

    /// Runs `f` and records how long it took.
    pub fn time<T>(&mut self, phase: &str, kind: &str, items: u64, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(phase, kind, start.elapsed(), items);
        out
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<20}{:<16}{:>12}{:>10}{:>14}{:>12}\n",
            "phase", "kind", "seconds", "items", "s/item", "peak MiB"
        );
        for r in &self.rows {
            out += &format!(
                "{:<20}{:<16}{:>12.3}{:>10}{:>14}{:>12}\n",
                r.phase,
                r.kind,
                r.seconds,
                r.items,
                r.per_item_seconds.map_or("-".into(), |s| format!("{s:.6}")),
                r.peak_memory_bytes
                    .map_or("-".into(), |b| format!("{:.1}", b as f64 / (1024.0 * 1024.0))),
            );
        }
        out
    }
}

/// Peak RSS from `/proc/self/status` (`VmHWM`); `None` elsewhere.
pub fn peak_memory_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Lifecycle, Resolution, Status};

    fn with_priority(p: Option<Priority>) -> BugReport {
        BugReport {
            bug_id: 0,
            summary: String::new(),
            description: String::new(),
            product: String::new(),
            component: String::new(),
            status: Status::new(Lifecycle::New, Resolution::None).unwrap(),
            priority: p,
            order_key: 0,
        }
    }

    #[test]
    fn uniform_and_single_distributions() {
        let uniform: Vec<_> = Priority::ALL.iter().map(|&p| with_priority(Some(p))).collect();
        let d = distribution_report(&uniform);
        assert!(d.levels.iter().all(|l| l.share == 0.2));
        let d = distribution_report(&[with_priority(Some(Priority::P4)), with_priority(None)]);
        assert_eq!(d.share(Priority::P4), 1.0);
        assert_eq!(d.unknown, 1);
        assert!((d.levels.iter().map(|l| l.share).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(distribution_report(&[]).total, 0);
    }

    #[test]
    fn timing_rows_and_latency() {
        let mut t = TimingReport::new();
        assert!(t.is_empty());
        t.record("train", "multinomial_nb", Duration::from_secs(3), 0);
        t.record("test", "multinomial_nb", Duration::from_secs(2), 4);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].per_item_seconds, None);
        assert_eq!(t.rows[1].per_item_seconds, Some(0.5));
        let v = t.time("noop", "-", 1, || 7);
        assert_eq!(v, 7);
        assert_eq!(t.rows.len(), 3);
        assert!(t.to_table().lines().count() == 4);
    }
}
