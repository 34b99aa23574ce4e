//! Post-run measurement: per-message latency, packet loss by joining the
//! receive log against the send log, summary statistics, and the comparison
//! of measured loss against the sampling prediction.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::anonymizer::{predicted_packet_loss, AnonymizationScheme, LossDomainError};
use crate::message::MessageKey;
use crate::workload::{ReceivedRecord, SentRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("send log is empty, loss is undefined")]
    EmptySentLog,
    #[error("no latency samples")]
    NoData,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatencySample {
    pub key: MessageKey,
    /// Receive time minus origin time. Negative under clock skew.
    pub latency_ms: i64,
}

pub fn compute_latencies(received: &[ReceivedRecord]) -> Vec<LatencySample> {
    received
        .iter()
        .map(|r| LatencySample {
            key: r.key(),
            latency_ms: r.receive_time_ms as i64 - r.origin_time_ms as i64,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutcome {
    /// Distinct keys in the send log.
    pub sent: usize,
    /// Distinct received keys that were also sent.
    pub matched: usize,
    /// Received records whose key had already been seen.
    pub duplicates: usize,
    /// Received keys that were never sent; excluded from the ratio.
    pub anomalies: Vec<MessageKey>,
    pub loss_pct: f64,
    pub matched_keys: BTreeSet<MessageKey>,
}

pub fn loss_percent(sent: usize, matched: usize) -> f64 {
    (sent - matched) as f64 / sent as f64 * 100.0
}

pub fn compute_packet_loss(
    sent: &[SentRecord],
    received: &[ReceivedRecord],
) -> Result<LossOutcome, MetricsError> {
    let sent_keys: BTreeSet<MessageKey> = sent.iter().map(SentRecord::key).collect();
    if sent_keys.is_empty() {
        return Err(MetricsError::EmptySentLog);
    }
    let mut seen = BTreeSet::new();
    let mut matched_keys = BTreeSet::new();
    let mut duplicates = 0;
    let mut anomalies = Vec::new();
    for r in received {
        let key = r.key();
        if !seen.insert(key) {
            duplicates += 1;
            continue;
        }
        if sent_keys.contains(&key) {
            matched_keys.insert(key);
        } else {
            anomalies.push(key);
        }
    }
    Ok(LossOutcome {
        sent: sent_keys.len(),
        matched: matched_keys.len(),
        duplicates,
        anomalies,
        loss_pct: loss_percent(sent_keys.len(), matched_keys.len()),
        matched_keys,
    })
}

/// How the median of an even-sized sample is taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MedianRule {
    #[default]
    AverageOfMiddles,
    LowerMiddle,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SigmaRule {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N - 1.
    Sample,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StatsRules {
    pub median: MedianRule,
    pub sigma: SigmaRule,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatencySummary {
    pub mean: f64,
    pub median: f64,
    pub sigma: f64,
}

pub fn summarize(values: &[f64], rules: StatsRules) -> Result<LatencySummary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::NoData);
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        match rules.median {
            MedianRule::AverageOfMiddles => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
            MedianRule::LowerMiddle => sorted[n / 2 - 1],
        }
    };
    let ss: f64 = sorted.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = match rules.sigma {
        SigmaRule::Population => n,
        SigmaRule::Sample => n.saturating_sub(1).max(1),
    };
    Ok(LatencySummary {
        mean,
        median,
        sigma: libm::sqrt(ss / denom as f64),
    })
}

pub fn latency_values(samples: &[LatencySample]) -> Vec<f64> {
    samples.iter().map(|s| s.latency_ms as f64).collect()
}

/// Allowed distance between measured and predicted loss, in points.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tolerances {
    pub single_producer: f64,
    pub multiple_producers: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            single_producer: 2.0,
            multiple_producers: 8.0,
        }
    }
}

impl Tolerances {
    pub fn for_producers(&self, producers: u32) -> f64 {
        if producers > 1 {
            self.multiple_producers
        } else {
            self.single_producer
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "UPPERCASE"))]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionCheck {
    pub predicted_pct: f64,
    /// Measured minus predicted.
    pub delta: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

pub fn check_loss(measured_pct: f64, predicted_pct: f64, tolerance: f64) -> PredictionCheck {
    let delta = measured_pct - predicted_pct;
    PredictionCheck {
        predicted_pct,
        delta,
        tolerance,
        verdict: if delta.abs() <= tolerance {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
    }
}

pub fn compare_to_prediction(
    report: &BenchmarkReport,
    scheme: &AnonymizationScheme,
    input_rate_hz: f64,
    tolerances: &Tolerances,
) -> Result<PredictionCheck, LossDomainError> {
    let predicted = predicted_packet_loss(scheme.sampling, input_rate_hz)?;
    Ok(check_loss(
        report.measured_loss_pct,
        predicted,
        tolerances.for_producers(report.producers),
    ))
}

/// One conservation ledger: everything that entered a component is either
/// delivered, rejected, or still queued.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowCheck {
    pub component: String,
    pub input: u64,
    pub delivered: u64,
    pub rejected: u64,
    pub in_flight: u64,
}

impl FlowCheck {
    pub fn holds(&self) -> bool {
        self.input == self.delivered + self.rejected + self.in_flight
    }
}

/// Counters collected from the pipeline components at teardown. Control
/// messages are excluded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageCounters {
    pub received: u64,
    pub sampled_out: u64,
    pub queue_dropped: u64,
    pub append_failed: u64,
    pub forwarded: u64,
    pub in_flight: u64,
}

impl StageCounters {
    /// Drops caused by the emulated resources rather than by sampling.
    pub fn stage_drops(&self) -> u64 {
        self.queue_dropped + self.append_failed
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BenchmarkReport {
    pub scenario_id: String,
    pub platform: String,
    pub scheme: String,
    pub producers: u32,
    pub repetitions: u32,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub payload_bytes: usize,
    pub mean_ms: Option<f64>,
    pub median_ms: Option<f64>,
    pub sigma_ms: Option<f64>,
    /// Mean of the per-repetition means; only set on aggregates.
    pub mean_of_means_ms: Option<f64>,
    pub measured_loss_pct: f64,
    pub predicted_loss_pct: f64,
    pub loss_delta_pct: f64,
    pub tolerance_pct: f64,
    pub verdict: Verdict,
    pub sent_count: u64,
    pub received_count: u64,
    pub matched_count: u64,
    pub sampling_drop_count: u64,
    pub stage_drop_count: u64,
    pub broker_reject_count: u64,
    pub cloud_reject_count: u64,
    pub duplicate_count: u64,
    pub anomaly_count: u64,
    pub conservation: Vec<FlowCheck>,
    pub flags: Vec<String>,
}

impl BenchmarkReport {
    pub fn conserved(&self) -> bool {
        self.conservation.iter().all(FlowCheck::holds)
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass && self.conserved()
    }
}

/// One repetition's report together with the raw latency values needed to
/// pool statistics across repetitions.
#[derive(Clone, Debug, PartialEq)]
pub struct RepetitionResult {
    pub report: BenchmarkReport,
    pub latencies_ms: Vec<f64>,
}

/// Combine repetitions: statistics and loss are pooled over all messages,
/// and `mean_of_means_ms` averages the per-repetition means.
pub fn aggregate(
    reps: &[RepetitionResult],
    rules: StatsRules,
) -> Result<BenchmarkReport, MetricsError> {
    let first = &reps.first().ok_or(MetricsError::NoData)?.report;
    let pooled: Vec<f64> = reps.iter().flat_map(|r| r.latencies_ms.iter().copied()).collect();
    let summary = summarize(&pooled, rules).ok();
    let means: Vec<f64> = reps.iter().filter_map(|r| r.report.mean_ms).collect();
    let mean_of_means = (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64);

    let sum = |f: fn(&BenchmarkReport) -> u64| reps.iter().map(|r| f(&r.report)).sum::<u64>();
    let sent = sum(|r| r.sent_count);
    let matched = sum(|r| r.matched_count);
    if sent == 0 {
        return Err(MetricsError::EmptySentLog);
    }
    let measured = loss_percent(sent as usize, matched as usize);
    let check = check_loss(measured, first.predicted_loss_pct, first.tolerance_pct);

    let mut flags: Vec<String> = reps.iter().flat_map(|r| r.report.flags.iter().cloned()).collect();
    flags.sort();
    flags.dedup();

    Ok(BenchmarkReport {
        repetitions: reps.len() as u32,
        mean_ms: summary.map(|s| s.mean),
        median_ms: summary.map(|s| s.median),
        sigma_ms: summary.map(|s| s.sigma),
        mean_of_means_ms: mean_of_means,
        measured_loss_pct: measured,
        loss_delta_pct: check.delta,
        verdict: check.verdict,
        sent_count: sent,
        received_count: sum(|r| r.received_count),
        matched_count: matched,
        sampling_drop_count: sum(|r| r.sampling_drop_count),
        stage_drop_count: sum(|r| r.stage_drop_count),
        broker_reject_count: sum(|r| r.broker_reject_count),
        cloud_reject_count: sum(|r| r.cloud_reject_count),
        duplicate_count: sum(|r| r.duplicate_count),
        anomaly_count: sum(|r| r.anomaly_count),
        conservation: reps
            .iter()
            .flat_map(|r| r.report.conservation.iter().cloned())
            .collect(),
        flags,
        ..first.clone()
    })
}
