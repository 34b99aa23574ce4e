//! Turning one repetition's logs and component counters into a report.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::anonymizer::predicted_packet_loss;
use crate::metrics::{
    check_loss, compute_latencies, compute_packet_loss, latency_values, summarize,
    BenchmarkReport, MetricsError, RepetitionResult,
};
use crate::scenario::{Platform, Scenario};
use crate::sim::PipelineCounters;
use crate::workload::{merge_sent, resolve_pseudonyms, ReceivedLog, SentLog};

/// Everything a finished repetition left behind.
#[derive(Clone, Debug)]
pub struct RunLogs<'a> {
    pub sent: &'a [SentLog],
    /// As written by the consumer, i.e. with pseudonymized producer ids.
    pub received: &'a ReceivedLog,
    /// Pseudonym to original producer id.
    pub inverse_pseudonyms: &'a BTreeMap<u32, u32>,
    pub counters: &'a PipelineCounters,
}

pub fn repetition_report(
    scenario: &Scenario,
    logs: &RunLogs<'_>,
) -> Result<RepetitionResult, MetricsError> {
    let sent = merge_sent(logs.sent);
    let mut received = logs.received.records.clone();
    resolve_pseudonyms(&mut received, logs.inverse_pseudonyms);
    let loss = compute_packet_loss(&sent, &received)?;
    let samples = compute_latencies(&received);
    let latencies = latency_values(&samples);
    let summary = summarize(&latencies, scenario.tuning.stats).ok();

    let predicted = predicted_packet_loss(scenario.anonymization().sampling, scenario.workload.rate_hz)
        .unwrap_or(0.0);
    let tolerance = scenario.tuning.tolerances.for_producers(scenario.producers);
    let check = check_loss(loss.loss_pct, predicted, tolerance);
    let counters = logs.counters;
    let conservation = counters.flow_checks();

    let mut flags: Vec<String> = Vec::new();
    let mut flag = |cond: bool, name: &str| {
        if cond {
            flags.push(name.to_string());
        }
    };
    flag(samples.iter().any(|s| s.latency_ms < 0), "negative-latency");
    flag(logs.received.timed_out, "timeout");
    flag(scenario.workload.consumer_delay_ms > 0, "late-consumer");
    flag(!loss.anomalies.is_empty(), "anomalies");
    flag(loss.duplicates > 0, "duplicates");
    flag(
        logs.sent.iter().any(|l| l.unacknowledged > 0),
        "unacknowledged-publishes",
    );
    flag(!conservation.iter().all(|c| c.holds()), "conservation-violated");
    flag(scenario.platform == Platform::Hybrid, "emulated-stage-resources");
    flag(true, "emulated-edge-capacity");
    flag(scenario.tuning.netem, "assumed-wan-profile");

    let report = BenchmarkReport {
        scenario_id: scenario.id.clone(),
        platform: scenario.platform.as_str().to_string(),
        scheme: scenario.scheme.as_str().to_string(),
        producers: scenario.producers,
        repetitions: 1,
        duration_s: scenario.duration_s,
        rate_hz: scenario.workload.rate_hz,
        payload_bytes: scenario.workload.payload_bytes,
        mean_ms: summary.map(|s| s.mean),
        median_ms: summary.map(|s| s.median),
        sigma_ms: summary.map(|s| s.sigma),
        mean_of_means_ms: None,
        measured_loss_pct: loss.loss_pct,
        predicted_loss_pct: predicted,
        loss_delta_pct: check.delta,
        tolerance_pct: tolerance,
        verdict: check.verdict,
        sent_count: sent.len() as u64,
        received_count: received.len() as u64,
        matched_count: loss.matched as u64,
        sampling_drop_count: counters.stage.sampled_out,
        stage_drop_count: counters.stage.stage_drops(),
        broker_reject_count: logs.sent.iter().map(|l| l.rejected).sum(),
        cloud_reject_count: counters.cloud_rejected,
        duplicate_count: loss.duplicates as u64,
        anomaly_count: loss.anomalies.len() as u64,
        conservation,
        flags,
    };
    Ok(RepetitionResult {
        report,
        latencies_ms: latencies,
    })
}
