//! Congestion metrics: channel, path and length-scaled path congestion
//! ratios, the cost-to-congestion ratio (gamma), threshold deviation and the
//! four-bin PCR histogram.

use serde::Serialize;
use thiserror::Error;

use crate::graph::{NodeId, Sat};

/// Absolute tolerance used when comparing ratios.
pub const RATIO_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("allocation {alpha} exceeds channel balance {balance}")]
    AllocationExceedsBalance { alpha: Sat, balance: Sat },
    #[error("allocation {alpha} exceeds path bottleneck {bottleneck}")]
    AllocationExceedsBottleneck { alpha: Sat, bottleneck: Sat },
    #[error("balance must be positive")]
    ZeroBalance,
    #[error("path has no channels")]
    EmptyPath,
    #[error("path length {length} outside 1..={l_max}")]
    InvalidLength { length: usize, l_max: usize },
}

/// Locked payment over one channel's balance.
pub fn ccr(alpha: Sat, balance: Sat) -> Result<f64, MetricsError> {
    if balance == 0 {
        return Err(MetricsError::ZeroBalance);
    }
    if alpha > balance {
        return Err(MetricsError::AllocationExceedsBalance { alpha, balance });
    }
    if alpha == balance {
        return Ok(1.0);
    }
    Ok(alpha as f64 / balance as f64)
}

/// Locked payment over the path bottleneck.
pub fn pcr(alpha: Sat, balances: &[Sat]) -> Result<f64, MetricsError> {
    let bottleneck = *balances.iter().min().ok_or(MetricsError::EmptyPath)?;
    if bottleneck == 0 {
        return Err(MetricsError::ZeroBalance);
    }
    if alpha > bottleneck {
        return Err(MetricsError::AllocationExceedsBottleneck { alpha, bottleneck });
    }
    ccr(alpha, bottleneck)
}

/// PCR scaled by `length / l_max`.
pub fn spcr(alpha: Sat, balances: &[Sat], length: usize, l_max: usize) -> Result<f64, MetricsError> {
    if length == 0 || length > l_max {
        return Err(MetricsError::InvalidLength { length, l_max });
    }
    Ok(length_ratio(length, l_max) * pcr(alpha, balances)?)
}

pub fn length_ratio(length: usize, l_max: usize) -> f64 {
    length as f64 / l_max as f64
}

/// How far the achieved SPCR falls short of the threshold; never negative.
pub fn spcr_deviation(achieved: f64, threshold: f64) -> f64 {
    (threshold - achieved).max(0.0)
}

/// One path's allocation as seen by the metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationView {
    pub alpha: Sat,
    pub length: usize,
    /// Directed balances along the path used as the PCR denominator.
    pub per_channel_balances: Vec<Sat>,
}

impl AllocationView {
    pub fn bottleneck(&self) -> Sat {
        self.per_channel_balances.iter().copied().min().unwrap_or(0)
    }

    pub fn pcr(&self) -> Result<f64, MetricsError> {
        pcr(self.alpha, &self.per_channel_balances)
    }

    pub fn spcr(&self, l_max: usize) -> Result<f64, MetricsError> {
        spcr(self.alpha, &self.per_channel_balances, self.length, l_max)
    }
}

/// Cost-to-congestion ratio: sum of alpha / spcr over every allocation of
/// every iteration, divided by the iteration count. Allocations with zero
/// SPCR contribute nothing.
pub fn gamma(iterations: &[Vec<AllocationView>], l_max: usize) -> Result<f64, MetricsError> {
    let k = iterations.len().max(1) as f64;
    let mut total = 0.0;
    for alloc in iterations.iter().flatten() {
        let s = alloc.spcr(l_max)?;
        if s > 0.0 {
            total += alloc.alpha as f64 / s;
        }
    }
    Ok(total / k)
}

/// Bin edges in PCR units; the last bin is closed on the right.
pub const PCR_BIN_LABELS: [&str; 4] = ["0-25%", "25-50%", "50-75%", "75-100%"];

pub fn pcr_bin(pcr: f64) -> usize {
    if pcr < 0.25 {
        0
    } else if pcr < 0.5 {
        1
    } else if pcr < 0.75 {
        2
    } else {
        3
    }
}

/// Percentage of paths per PCR bin. An empty input yields all zeros.
pub fn pcr_histogram(pcrs: &[f64]) -> [f64; 4] {
    let counts = pcr_bin_counts(pcrs);
    if pcrs.is_empty() {
        return [0.0; 4];
    }
    let n = pcrs.len() as f64;
    counts.map(|c| 100.0 * c as f64 / n)
}

pub fn pcr_bin_counts(pcrs: &[f64]) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for &p in pcrs {
        counts[pcr_bin(p)] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathMetrics {
    pub attacker: NodeId,
    pub pair: (NodeId, NodeId),
    pub path_index: usize,
    pub alpha: Sat,
    pub length: usize,
    pub ccr_max: f64,
    pub pcr: f64,
    pub spcr: f64,
    pub deviation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsTotals {
    pub locked_payment: Sat,
    pub mean_pcr: f64,
    pub mean_spcr: f64,
    pub mean_deviation: f64,
    pub gamma: f64,
    pub path_count: usize,
    pub mean_length: f64,
}

/// Per-path metrics plus totals for one attack round.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_path: Vec<PathMetrics>,
    pub totals: MetricsTotals,
    pub pcr_histogram: [f64; 4],
}

/// Input row for [`MetricsReport::build`].
#[derive(Clone, Debug)]
pub struct PathSample {
    pub attacker: NodeId,
    pub pair: (NodeId, NodeId),
    pub path_index: usize,
    pub view: AllocationView,
}

impl MetricsReport {
    /// `threshold` is the required SPCR the deviation is measured against;
    /// `None` reports zero deviation.
    pub fn build(samples: &[PathSample], l_max: usize, threshold: Option<f64>) -> Result<MetricsReport, MetricsError> {
        let mut per_path = Vec::with_capacity(samples.len());
        for s in samples {
            let alpha = s.view.alpha;
            let ccr_max = s
                .view
                .per_channel_balances
                .iter()
                .map(|&b| ccr(alpha, b))
                .try_fold(0.0f64, |m, c| c.map(|c| m.max(c)))?;
            let pcr = s.view.pcr()?;
            let spcr = s.view.spcr(l_max)?;
            per_path.push(PathMetrics {
                attacker: s.attacker,
                pair: s.pair,
                path_index: s.path_index,
                alpha,
                length: s.view.length,
                ccr_max,
                pcr,
                spcr,
                deviation: threshold.map_or(0.0, |t| spcr_deviation(spcr, t)),
            });
        }
        let n = per_path.len();
        let mean = |f: &dyn Fn(&PathMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_path.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let views: Vec<AllocationView> = samples.iter().map(|s| s.view.clone()).collect();
        let totals = MetricsTotals {
            locked_payment: per_path.iter().map(|p| p.alpha).sum(),
            mean_pcr: mean(&|p| p.pcr),
            mean_spcr: mean(&|p| p.spcr),
            mean_deviation: mean(&|p| p.deviation),
            gamma: gamma(&[views], l_max)?,
            path_count: n,
            mean_length: mean(&|p| p.length as f64),
        };
        let pcrs: Vec<f64> = per_path.iter().map(|p| p.pcr).collect();
        Ok(MetricsReport {
            pcr_histogram: pcr_histogram(&pcrs),
            per_path,
            totals,
        })
    }
}

/// Writes per-path metrics with header
/// `attacker,pair_id,path_index,alpha,length,ccr_max,pcr,spcr,deviation`.
pub fn write_per_path_csv<W: std::io::Write>(out: W, rows: &[PathMetrics]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "attacker",
        "pair_id",
        "path_index",
        "alpha",
        "length",
        "ccr_max",
        "pcr",
        "spcr",
        "deviation",
    ])?;
    for r in rows {
        w.write_record([
            r.attacker.to_string(),
            format!("{}-{}", r.pair.0, r.pair.1),
            r.path_index.to_string(),
            r.alpha.to_string(),
            r.length.to_string(),
            r.ccr_max.to_string(),
            r.pcr.to_string(),
            r.spcr.to_string(),
            r.deviation.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
