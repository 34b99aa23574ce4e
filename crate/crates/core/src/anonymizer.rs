//! The MEC data service: scheme profiles, the per-producer sampling gate,
//! pseudonymization, and the emulated processing-resource limits.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::message::{CitsMessage, END_OF_RUN_PRODUCER};
use crate::time::{Nanos, NANOS_PER_SEC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SchemeName {
    Small,
    Medium,
    Large,
    None,
}

impl SchemeName {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeName::Small => "small",
            SchemeName::Medium => "medium",
            SchemeName::Large => "large",
            SchemeName::None => "none",
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown anonymization scheme (expected small, medium, large or none)")]
pub struct UnknownScheme;

impl FromStr for SchemeName {
    type Err = UnknownScheme;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(SchemeName::Small),
            "medium" => Ok(SchemeName::Medium),
            "large" => Ok(SchemeName::Large),
            "none" => Ok(SchemeName::None),
            _ => Err(UnknownScheme),
        }
    }
}

/// Messages per second let through the sampling gate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplingRate {
    Bounded(f64),
    Unlimited,
}

impl SamplingRate {
    /// Width of one sampling window, `None` when unlimited.
    pub fn window(self) -> Option<Nanos> {
        match self {
            SamplingRate::Bounded(hz) => Some(Nanos(libm::round(NANOS_PER_SEC as f64 / hz) as u64)),
            SamplingRate::Unlimited => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnonymizationScheme {
    pub name: SchemeName,
    /// Zero means the stage has no emulated CPU limit.
    pub cpu_units: u32,
    /// Zero means the stage queue is unbounded.
    pub ram_gb: u32,
    pub sampling: SamplingRate,
}

impl AnonymizationScheme {
    /// 2 CPUs, 2 GB, one message every five seconds.
    pub const SMALL: Self = AnonymizationScheme {
        name: SchemeName::Small,
        cpu_units: 2,
        ram_gb: 2,
        sampling: SamplingRate::Bounded(0.2),
    };
    /// 4 CPUs, 4 GB, one message per second.
    pub const MEDIUM: Self = AnonymizationScheme {
        name: SchemeName::Medium,
        cpu_units: 4,
        ram_gb: 4,
        sampling: SamplingRate::Bounded(1.0),
    };
    /// 8 CPUs, 8 GB, no sampling.
    pub const LARGE: Self = AnonymizationScheme {
        name: SchemeName::Large,
        cpu_units: 8,
        ram_gb: 8,
        sampling: SamplingRate::Unlimited,
    };
    /// Pseudonymization only; no sampling and no resource emulation.
    pub const NONE: Self = AnonymizationScheme {
        name: SchemeName::None,
        cpu_units: 0,
        ram_gb: 0,
        sampling: SamplingRate::Unlimited,
    };

    pub fn named(name: SchemeName) -> Self {
        match name {
            SchemeName::Small => Self::SMALL,
            SchemeName::Medium => Self::MEDIUM,
            SchemeName::Large => Self::LARGE,
            SchemeName::None => Self::NONE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum LossDomainError {
    #[error("input rate must be positive, got {0}")]
    NonPositiveInputRate(f64),
    #[error("sampling rate must be non-negative, got {0}")]
    NegativeSamplingRate(f64),
}

/// Expected loss in percent when a stream at `input_rate_hz` is sampled down
/// to `sampling`: `(1 - S_r / F_data) * 100`, floored at zero.
pub fn predicted_packet_loss(
    sampling: SamplingRate,
    input_rate_hz: f64,
) -> Result<f64, LossDomainError> {
    if !(input_rate_hz > 0.0) {
        return Err(LossDomainError::NonPositiveInputRate(input_rate_hz));
    }
    match sampling {
        SamplingRate::Unlimited => Ok(0.0),
        SamplingRate::Bounded(s) if s < 0.0 || s.is_nan() => {
            Err(LossDomainError::NegativeSamplingRate(s))
        }
        SamplingRate::Bounded(s) => Ok(((1.0 - s / input_rate_hz) * 100.0).max(0.0)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Forward,
    Drop,
}

/// Window bookkeeping for one input stream.
///
/// Windows have width `1 / S_r` and are anchored at the stream's first
/// arrival, so window `k` covers `[anchor + k/S_r, anchor + (k+1)/S_r)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SamplerState {
    pub anchor: Option<Nanos>,
    pub window_index: u64,
    pub forwarded_in_window: u32,
}

impl SamplerState {
    pub fn window_of(&mut self, width: Nanos, arrival: Nanos) -> u64 {
        let anchor = *self.anchor.get_or_insert(arrival);
        arrival.saturating_sub(anchor).0 / width.0.max(1)
    }
}

/// First-arrival-per-window rule for a single stream.
pub fn sample_gate(
    scheme: &AnonymizationScheme,
    arrival: Nanos,
    state: &mut SamplerState,
) -> Verdict {
    let Some(width) = scheme.sampling.window() else {
        return Verdict::Forward;
    };
    let is_first_arrival = state.anchor.is_none();
    let w = state.window_of(width, arrival);
    if is_first_arrival || w != state.window_index {
        state.window_index = w;
        state.forwarded_in_window = 1;
        Verdict::Forward
    } else {
        Verdict::Drop
    }
}

/// Which arrival in each window is forwarded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SamplerPolicy {
    #[default]
    First,
    /// Holds each window's latest arrival and releases it when the window
    /// closes, i.e. when a later window's first message arrives or on flush.
    Last,
}

/// Result of offering one message to a [`SampleGate`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GateOutput {
    pub forward: Option<CitsMessage>,
    pub dropped: Option<CitsMessage>,
}

/// Sampling gate applied independently to every producer's stream.
#[derive(Debug, Clone)]
pub struct SampleGate {
    scheme: AnonymizationScheme,
    policy: SamplerPolicy,
    streams: BTreeMap<u32, SamplerState>,
    held: BTreeMap<u32, (u64, CitsMessage)>,
}

impl SampleGate {
    pub fn new(scheme: AnonymizationScheme, policy: SamplerPolicy) -> Self {
        SampleGate {
            scheme,
            policy,
            streams: BTreeMap::new(),
            held: BTreeMap::new(),
        }
    }

    pub fn offer(&mut self, msg: CitsMessage, arrival: Nanos) -> GateOutput {
        let Some(width) = self.scheme.sampling.window() else {
            return GateOutput {
                forward: Some(msg),
                dropped: None,
            };
        };
        let state = self.streams.entry(msg.producer_id).or_default();
        match self.policy {
            SamplerPolicy::First => match sample_gate(&self.scheme, arrival, state) {
                Verdict::Forward => GateOutput {
                    forward: Some(msg),
                    dropped: None,
                },
                Verdict::Drop => GateOutput {
                    forward: None,
                    dropped: Some(msg),
                },
            },
            SamplerPolicy::Last => {
                let w = state.window_of(width, arrival);
                state.window_index = w;
                state.forwarded_in_window = 1;
                match self.held.insert(msg.producer_id, (w, msg)) {
                    Some((prev_w, prev)) if prev_w == w => GateOutput {
                        forward: None,
                        dropped: Some(prev),
                    },
                    Some((_, prev)) => GateOutput {
                        forward: Some(prev),
                        dropped: None,
                    },
                    None => GateOutput::default(),
                }
            }
        }
    }

    /// Release messages still held by the `Last` policy, ordered by producer.
    pub fn flush(&mut self) -> Vec<CitsMessage> {
        core::mem::take(&mut self.held)
            .into_values()
            .map(|(_, m)| m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("pseudonym space exhausted after {0} producers")]
pub struct PseudonymSpaceExhausted(pub usize);

/// Stable, injective producer-id replacement for one run.
#[derive(Debug, Clone)]
pub struct PseudonymMap {
    salt: u64,
    mapping: BTreeMap<u32, u32>,
    used: BTreeSet<u32>,
}

/// Largest number of producers a map will accept; two ids are never handed
/// out (the end-of-run marker and each producer's own id).
const PSEUDONYM_CAPACITY: usize = u32::MAX as usize - 1;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl PseudonymMap {
    pub fn new(salt: u64) -> Self {
        PseudonymMap {
            salt,
            mapping: BTreeMap::new(),
            used: BTreeSet::new(),
        }
    }

    pub fn salt(&self) -> u64 {
        self.salt
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    fn candidate(&self, producer_id: u32, probe: u64) -> u32 {
        let keyed = mix64(self.salt ^ mix64(producer_id as u64 ^ (probe << 32)));
        (keyed ^ (keyed >> 32)) as u32
    }

    pub fn pseudonym(&mut self, producer_id: u32) -> Result<u32, PseudonymSpaceExhausted> {
        if let Some(p) = self.mapping.get(&producer_id) {
            return Ok(*p);
        }
        if self.mapping.len() >= PSEUDONYM_CAPACITY {
            return Err(PseudonymSpaceExhausted(self.mapping.len()));
        }
        let mut probe = 0u64;
        let p = loop {
            let c = self.candidate(producer_id, probe);
            if c != producer_id && c != END_OF_RUN_PRODUCER && !self.used.contains(&c) {
                break c;
            }
            probe += 1;
        };
        self.mapping.insert(producer_id, p);
        self.used.insert(p);
        Ok(p)
    }

    pub fn get(&self, producer_id: u32) -> Option<u32> {
        self.mapping.get(&producer_id).copied()
    }

    /// Original producer id behind `pseudonym`, if this map issued it.
    pub fn original(&self, pseudonym: u32) -> Option<u32> {
        self.mapping
            .iter()
            .find_map(|(orig, p)| (*p == pseudonym).then_some(*orig))
    }

    pub fn entries(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.mapping.iter().map(|(o, p)| (*o, *p))
    }

    /// Reverse lookup table, pseudonym to original.
    pub fn inverse(&self) -> BTreeMap<u32, u32> {
        self.mapping.iter().map(|(o, p)| (*p, *o)).collect()
    }
}

/// Replace the producer id; every other field is carried over unchanged.
/// The end-of-run marker passes through untouched.
pub fn pseudonymize(
    mut msg: CitsMessage,
    map: &mut PseudonymMap,
) -> Result<CitsMessage, PseudonymSpaceExhausted> {
    if !msg.is_end_of_run() {
        msg.producer_id = map.pseudonym(msg.producer_id)?;
    }
    Ok(msg)
}

/// How the CPU and RAM columns of a scheme are emulated.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResourceEmulation {
    pub per_cpu_rate_hz: f64,
    pub queue_per_ram_gb: usize,
}

impl Default for ResourceEmulation {
    fn default() -> Self {
        ResourceEmulation {
            per_cpu_rate_hz: 500.0,
            queue_per_ram_gb: 250,
        }
    }
}

/// Processing-rate cap and queue bound of an anonymizer stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageLimits {
    /// Time to process one message; `None` is unlimited.
    pub service_time: Option<Nanos>,
    /// Messages allowed to wait behind the one in service; `None` is unbounded.
    pub queue_capacity: Option<usize>,
}

impl StageLimits {
    pub const UNLIMITED: StageLimits = StageLimits {
        service_time: None,
        queue_capacity: None,
    };

    pub fn from_scheme(scheme: &AnonymizationScheme, emulation: &ResourceEmulation) -> Self {
        let service_time = (scheme.cpu_units > 0 && emulation.per_cpu_rate_hz > 0.0).then(|| {
            let rate = scheme.cpu_units as f64 * emulation.per_cpu_rate_hz;
            Nanos(libm::round(NANOS_PER_SEC as f64 / rate) as u64)
        });
        let queue_capacity =
            (scheme.ram_gb > 0).then(|| scheme.ram_gb as usize * emulation.queue_per_ram_gb);
        StageLimits {
            service_time,
            queue_capacity,
        }
    }

    pub fn rate_hz(&self) -> Option<f64> {
        self.service_time
            .map(|s| NANOS_PER_SEC as f64 / s.0.max(1) as f64)
    }
}

/// Virtual-time model of a rate-capped server with a bounded waiting room.
#[derive(Debug, Clone)]
pub struct StageQueue {
    limits: StageLimits,
    departures: VecDeque<Nanos>,
}

impl StageQueue {
    pub fn new(limits: StageLimits) -> Self {
        StageQueue {
            limits,
            departures: VecDeque::new(),
        }
    }

    fn expire(&mut self, now: Nanos) {
        while self.departures.front().is_some_and(|d| *d <= now) {
            self.departures.pop_front();
        }
    }

    /// Admit an arrival; returns its departure time, or `None` when the
    /// waiting room is full and the message is dropped.
    pub fn offer(&mut self, arrival: Nanos) -> Option<Nanos> {
        self.expire(arrival);
        let Some(service) = self.limits.service_time else {
            return Some(arrival);
        };
        let depart = match self.departures.back() {
            None => arrival + service,
            Some(last) => {
                let waiting = self.departures.len() - 1;
                if self.limits.queue_capacity.is_some_and(|c| waiting >= c) {
                    return None;
                }
                *last + service
            }
        };
        self.departures.push_back(depart);
        Some(depart)
    }

    /// Messages admitted but not yet departed at `now`.
    pub fn in_system(&mut self, now: Nanos) -> usize {
        self.expire(now);
        self.departures.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;
    use proptest::prelude::*;

    fn msg(producer: u32, seq: u64) -> CitsMessage {
        CitsMessage {
            producer_id: producer,
            sequence: seq,
            origin_time_ms: seq * 500,
            payload: Vec::new(),
            topic: String::from("mec-1/cits"),
        }
    }

    #[test]
    fn scheme_table() {
        let s = AnonymizationScheme::SMALL;
        assert_eq!((s.cpu_units, s.ram_gb), (2, 2));
        assert_eq!(s.sampling, SamplingRate::Bounded(0.2));
        let m = AnonymizationScheme::MEDIUM;
        assert_eq!((m.cpu_units, m.ram_gb), (4, 4));
        assert_eq!(m.sampling, SamplingRate::Bounded(1.0));
        let l = AnonymizationScheme::LARGE;
        assert_eq!((l.cpu_units, l.ram_gb), (8, 8));
        assert_eq!(l.sampling, SamplingRate::Unlimited);
        assert_eq!("Medium".parse::<SchemeName>(), Ok(SchemeName::Medium));
        assert!("huge".parse::<SchemeName>().is_err());
    }

    #[test]
    fn predicted_loss_table() {
        assert_eq!(
            predicted_packet_loss(SamplingRate::Bounded(0.2), 2.0),
            Ok(90.0)
        );
        assert_eq!(
            predicted_packet_loss(SamplingRate::Bounded(1.0), 2.0),
            Ok(50.0)
        );
        assert_eq!(
            predicted_packet_loss(SamplingRate::Bounded(2.0), 2.0),
            Ok(0.0)
        );
        assert_eq!(predicted_packet_loss(SamplingRate::Unlimited, 2.0), Ok(0.0));
        assert_eq!(
            predicted_packet_loss(SamplingRate::Bounded(5.0), 2.0),
            Ok(0.0)
        );
        assert!(predicted_packet_loss(SamplingRate::Bounded(1.0), 0.0).is_err());
        assert!(predicted_packet_loss(SamplingRate::Bounded(-1.0), 2.0).is_err());
    }

    #[test]
    fn large_always_forwards() {
        let mut st = SamplerState::default();
        for t in 0..100 {
            assert_eq!(
                sample_gate(&AnonymizationScheme::LARGE, Nanos::from_millis(t), &mut st),
                Verdict::Forward
            );
        }
    }

    #[test]
    fn medium_half_second_arrivals() {
        let mut st = SamplerState::default();
        let got: Vec<_> = [0, 500, 1000, 1500]
            .into_iter()
            .map(|ms| sample_gate(&AnonymizationScheme::MEDIUM, Nanos::from_millis(ms), &mut st))
            .collect();
        assert_eq!(
            got,
            [Verdict::Forward, Verdict::Drop, Verdict::Forward, Verdict::Drop]
        );
        assert!(st.forwarded_in_window <= 1);
    }

    #[test]
    fn small_ten_seconds_at_two_hz() {
        let mut st = SamplerState::default();
        let forwarded = (0..20)
            .filter(|k| {
                sample_gate(
                    &AnonymizationScheme::SMALL,
                    Nanos::from_millis(k * 500),
                    &mut st,
                ) == Verdict::Forward
            })
            .count();
        assert_eq!(forwarded, 2);
    }

    #[test]
    fn gate_is_per_producer() {
        let mut gate = SampleGate::new(AnonymizationScheme::MEDIUM, SamplerPolicy::First);
        let t = Nanos::from_millis(100);
        assert!(gate.offer(msg(1, 0), t).forward.is_some());
        assert!(gate.offer(msg(2, 0), t).forward.is_some());
        assert!(gate.offer(msg(1, 1), t + Nanos::from_millis(500)).dropped.is_some());
    }

    #[test]
    fn last_policy_releases_latest() {
        let mut gate = SampleGate::new(AnonymizationScheme::MEDIUM, SamplerPolicy::Last);
        let at = |ms| Nanos::from_millis(ms);
        assert_eq!(gate.offer(msg(1, 0), at(0)), GateOutput::default());
        let o = gate.offer(msg(1, 1), at(500));
        assert_eq!(o.dropped.unwrap().sequence, 0);
        let o = gate.offer(msg(1, 2), at(1000));
        assert_eq!(o.forward.unwrap().sequence, 1);
        let rest = gate.flush();
        assert_eq!(rest.len(), 1);
        assert_eq!(rest[0].sequence, 2);
    }

    #[test]
    fn pseudonyms_stable_and_injective() {
        let mut map = PseudonymMap::new(1);
        let a = map.pseudonym(10).unwrap();
        assert_eq!(map.pseudonym(10).unwrap(), a);
        let b = map.pseudonym(11).unwrap();
        assert_ne!(a, b);
        assert_eq!(map.original(b), Some(11));
        let mut other = PseudonymMap::new(2);
        assert_ne!(other.pseudonym(10).unwrap(), a);
    }

    #[test]
    fn pseudonymize_keeps_other_fields() {
        let mut map = PseudonymMap::new(7);
        let m = CitsMessage {
            payload: crate::message::generate_payload(1, 64),
            ..msg(5, 9)
        };
        let out = pseudonymize(m.clone(), &mut map).unwrap();
        assert_ne!(out.producer_id, 5);
        assert_eq!(
            (out.sequence, out.origin_time_ms, &out.payload, &out.topic),
            (m.sequence, m.origin_time_ms, &m.payload, &m.topic)
        );
        let eor = CitsMessage::end_of_run("t");
        assert_eq!(pseudonymize(eor.clone(), &mut map).unwrap(), eor);
    }

    #[test]
    fn stage_limits_from_schemes() {
        let emu = ResourceEmulation::default();
        let small = StageLimits::from_scheme(&AnonymizationScheme::SMALL, &emu);
        assert_eq!(small.service_time, Some(Nanos(1_000_000)));
        assert_eq!(small.queue_capacity, Some(500));
        assert_eq!(
            StageLimits::from_scheme(&AnonymizationScheme::NONE, &emu),
            StageLimits::UNLIMITED
        );
    }

    #[test]
    fn stage_queue_overload_drops_excess() {
        // 10 msg/s service, 20 msg/s offered, 5 waiting slots: after the queue
        // fills, every other arrival is dropped.
        let mut q = StageQueue::new(StageLimits {
            service_time: Some(Nanos::from_millis(100)),
            queue_capacity: Some(5),
        });
        let mut drops_per_sec = [0u32; 20];
        for k in 0..400u64 {
            if q.offer(Nanos::from_millis(k * 50)).is_none() {
                drops_per_sec[(k / 20) as usize] += 1;
            }
        }
        for d in &drops_per_sec[2..] {
            assert_eq!(*d, 10);
        }
    }

    #[test]
    fn unlimited_stage_is_transparent() {
        let mut q = StageQueue::new(StageLimits::UNLIMITED);
        assert_eq!(q.offer(Nanos(5)), Some(Nanos(5)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        // Forwarded count over a span T with at least one arrival in every
        // window is within one of ceil(T * S_r).
        #[test]
        fn window_count_bound(
            rate in prop_oneof![Just(0.2f64), Just(1.0), 0.05f64..10.0],
            windows in 1u64..40,
            gaps in proptest::collection::vec(1u64..1000, 1..400),
        ) {
            let scheme = AnonymizationScheme { sampling: SamplingRate::Bounded(rate), ..AnonymizationScheme::SMALL };
            let width = scheme.sampling.window().unwrap().0;
            let span = width * windows;
            // Arrivals: one forced into every window, plus random extras.
            let mut arrivals: Vec<u64> = (0..windows).map(|k| k * width).collect();
            let mut t = 0u64;
            for g in gaps {
                t += g * width / 997;
                if t < span { arrivals.push(t); }
            }
            arrivals.sort_unstable();
            let mut st = SamplerState::default();
            let fwd = arrivals.iter()
                .filter(|a| sample_gate(&scheme, Nanos(**a), &mut st) == Verdict::Forward)
                .count() as i64;
            let expected = libm::ceil(Nanos(span).as_secs_f64() * rate) as i64;
            prop_assert!((fwd - expected).abs() <= 1, "fwd {} expected {}", fwd, expected);
        }

        #[test]
        fn pseudonyms_injective_and_never_identity(
            salt in any::<u64>(),
            ids in proptest::collection::btree_set(0u32..u32::MAX, 1..64),
        ) {
            let mut map = PseudonymMap::new(salt);
            let mut seen = BTreeSet::new();
            for id in &ids {
                let p = map.pseudonym(*id).unwrap();
                prop_assert_ne!(p, *id);
                prop_assert_ne!(p, END_OF_RUN_PRODUCER);
                prop_assert!(seen.insert(p));
            }
            for id in &ids {
                prop_assert_eq!(map.pseudonym(*id).unwrap(), map.get(*id).unwrap());
            }
        }

        // Gate plus pseudonymization preserves per-producer order and never
        // emits an original id.
        #[test]
        fn stage_preserves_order(
            salt in any::<u64>(),
            producers in 1u32..6,
            steps in proptest::collection::vec((0u32..6, 1u64..900), 1..300),
            last in any::<bool>(),
        ) {
            let policy = if last { SamplerPolicy::Last } else { SamplerPolicy::First };
            let mut gate = SampleGate::new(AnonymizationScheme::MEDIUM, policy);
            let mut map = PseudonymMap::new(salt);
            let mut seqs = BTreeMap::<u32, u64>::new();
            let mut now = 0u64;
            let mut out = Vec::new();
            for (p, gap) in steps {
                let p = p % producers + 1;
                now += gap;
                let seq = seqs.entry(p).or_default();
                *seq += 1;
                if let Some(m) = gate.offer(msg(p, *seq), Nanos::from_millis(now)).forward {
                    out.push(pseudonymize(m, &mut map).unwrap());
                }
            }
            for m in gate.flush() {
                out.push(pseudonymize(m, &mut map).unwrap());
            }
            let inverse = map.inverse();
            let mut last_seen = BTreeMap::<u32, u64>::new();
            for m in &out {
                let orig = inverse[&m.producer_id];
                prop_assert_ne!(m.producer_id, orig);
                let prev = last_seen.insert(orig, m.sequence);
                prop_assert!(prev.is_none_or(|p| p < m.sequence));
            }
        }
    }
}
