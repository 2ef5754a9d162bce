use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::timestamp::Micros;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionId(pub usize);

/// Symmetric region-to-region round-trip times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyMatrix {
    regions: Vec<String>,
    rtt_ms: Vec<Vec<f64>>,
    pub jitter_fraction: f64,
}

pub const DEFAULT_JITTER_FRACTION: f64 = 0.05;

impl LatencyMatrix {
    pub fn new(regions: Vec<String>, rtt_ms: Vec<Vec<f64>>) -> Result<Self, ConfigError> {
        let n = regions.len();
        if n == 0 {
            return Err(ConfigError::Latency("no regions".into()));
        }
        if rtt_ms.len() != n || rtt_ms.iter().any(|row| row.len() != n) {
            return Err(ConfigError::Latency(format!("expected a {n}x{n} table")));
        }
        for a in 0..n {
            for b in 0..n {
                let v = rtt_ms[a][b];
                if !(v > 0.0) || !v.is_finite() {
                    return Err(ConfigError::Latency(format!(
                        "rtt({}, {}) = {v} must be positive",
                        regions[a], regions[b]
                    )));
                }
                if (v - rtt_ms[b][a]).abs() > 1e-9 {
                    return Err(ConfigError::Latency(format!(
                        "rtt({}, {}) != rtt({}, {})",
                        regions[a], regions[b], regions[b], regions[a]
                    )));
                }
            }
        }
        for (i, r) in regions.iter().enumerate() {
            if regions[..i].contains(r) {
                return Err(ConfigError::Latency(format!("duplicate region {r}")));
            }
        }
        Ok(LatencyMatrix {
            regions,
            rtt_ms,
            jitter_fraction: DEFAULT_JITTER_FRACTION,
        })
    }

    /// California, Virginia and Ireland: 62/136/68 ms between them, 0.2 ms inside a region.
    pub fn three_region_wan() -> Self {
        let regions = vec!["CA".to_string(), "VA".to_string(), "IR".to_string()];
        let rtt = vec![
            vec![0.2, 62.0, 136.0],
            vec![62.0, 0.2, 68.0],
            vec![136.0, 68.0, 0.2],
        ];
        LatencyMatrix::new(regions, rtt).expect("built-in matrix is valid")
    }

    /// A single-region matrix, handy for tests.
    pub fn single_region(name: &str, rtt_ms: f64) -> Self {
        LatencyMatrix::new(vec![name.to_string()], vec![vec![rtt_ms]]).expect("valid")
    }

    pub fn with_jitter(mut self, jitter_fraction: f64) -> Self {
        self.jitter_fraction = jitter_fraction;
        self
    }

    /// Parses a whitespace-separated table. The first row names the regions;
    /// each following row starts with a region name and lists RTTs in ms.
    /// Lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| ConfigError::Latency("empty latency table".into()))?
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let n = header.len();
        let mut rows = vec![Vec::new(); n];
        let mut seen = vec![false; n];
        for line in lines {
            let mut cols = line.split_whitespace();
            let name = cols.next().unwrap_or_default();
            let idx = header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| ConfigError::Latency(format!("row for unknown region {name}")))?;
            let vals = cols
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| ConfigError::Latency(format!("bad number {c:?} in row {name}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows[idx] = vals;
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(ConfigError::Latency(format!("missing row for {}", header[missing])));
        }
        LatencyMatrix::new(header, rows)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.regions.join(" "));
        for (i, r) in self.regions.iter().enumerate() {
            let row: Vec<String> = self.rtt_ms[i].iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{r} {}", row.join(" "));
        }
        out
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn region(&self, name: &str) -> Option<RegionId> {
        self.regions.iter().position(|r| r == name).map(RegionId)
    }

    pub fn name(&self, r: RegionId) -> &str {
        &self.regions[r.0]
    }

    pub fn rtt_ms(&self, a: RegionId, b: RegionId) -> f64 {
        self.rtt_ms[a.0][b.0]
    }

    pub fn rtt_us(&self, a: RegionId, b: RegionId) -> Micros {
        (self.rtt_ms(a, b) * 1000.0).round() as Micros
    }

    /// Jitter-free one-way delay: half the round trip.
    pub fn one_way_us(&self, a: RegionId, b: RegionId) -> Micros {
        (self.rtt_ms(a, b) * 500.0).round() as Micros
    }

    /// Upper bound of the uniform jitter added to a one-way delay.
    pub fn max_jitter_us(&self, a: RegionId, b: RegionId) -> Micros {
        (self.rtt_ms(a, b) * 500.0 * self.jitter_fraction).round() as Micros
    }
}
