//! Latency summaries with nearest-rank percentiles.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::cluster::Sample;
use crate::timestamp::Micros;
use crate::workload::TxnKind;

/// Nearest-rank percentile of sorted samples: the value at rank `ceil(q * n)`.
///
/// ```
/// use rsskv::stats::nearest_rank;
/// assert_eq!(nearest_rank(&[1, 2, 3], 0.50), 2);
/// assert_eq!(nearest_rank(&[7], 0.999), 7);
/// ```
pub fn nearest_rank(sorted: &[Micros], q: f64) -> Micros {
    assert!(!sorted.is_empty(), "no samples");
    assert!((0.0..=1.0).contains(&q));
    let n = sorted.len();
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyRow {
    pub txn_type: String,
    pub count: usize,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub p999_ms: f64,
    pub p9995_ms: f64,
    pub aborts: u64,
}

impl LatencyRow {
    pub fn from_latencies(txn_type: &str, mut lat: Vec<Micros>, aborts: u64) -> Option<Self> {
        if lat.is_empty() {
            return None;
        }
        lat.sort_unstable();
        let ms = |q| nearest_rank(&lat, q) as f64 / 1000.0;
        Some(LatencyRow {
            txn_type: txn_type.to_string(),
            count: lat.len(),
            p50_ms: ms(0.50),
            p90_ms: ms(0.90),
            p99_ms: ms(0.99),
            p999_ms: ms(0.999),
            p9995_ms: ms(0.9995),
            aborts,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatencySummary {
    pub rows: Vec<LatencyRow>,
    pub message_counts: BTreeMap<String, u64>,
}

pub const SUMMARY_HEADER: &str = "txn_type,count,p50_ms,p90_ms,p99_ms,p999_ms,aborts";

impl LatencySummary {
    /// Rows `rw` and `ro` over all samples, then one row per workload type.
    pub fn from_samples(
        samples: &[Sample],
        aborted_attempts: &BTreeMap<&'static str, u64>,
        message_counts: BTreeMap<String, u64>,
    ) -> Self {
        let mut rows = Vec::new();
        let total_aborts: u64 = aborted_attempts.values().sum();
        for (name, ro) in [("rw", false), ("ro", true)] {
            let lat = samples.iter().filter(|s| s.read_only == ro).map(|s| s.latency_us()).collect();
            let aborts = if ro { 0 } else { total_aborts };
            rows.extend(LatencyRow::from_latencies(name, lat, aborts));
        }
        for k in TxnKind::ALL {
            let lat = samples.iter().filter(|s| s.label == k.name()).map(|s| s.latency_us()).collect();
            let aborts = aborted_attempts.get(k.name()).copied().unwrap_or(0);
            rows.extend(LatencyRow::from_latencies(k.name(), lat, aborts));
        }
        LatencySummary { rows, message_counts }
    }

    pub fn row(&self, txn_type: &str) -> Option<&LatencyRow> {
        self.rows.iter().find(|r| r.txn_type == txn_type)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{:.3},{:.3},{:.3},{:.3},{}",
                r.txn_type, r.count, r.p50_ms, r.p90_ms, r.p99_ms, r.p999_ms, r.aborts
            )
            .expect("string write");
        }
        s
    }
}
