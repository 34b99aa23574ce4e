//! Benchmark scenarios: the eight canonical platform x scheme x producer-count
//! combinations and the knobs a run can tune.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use crate::anonymizer::{AnonymizationScheme, ResourceEmulation, SamplerPolicy, SchemeName};
use crate::edge::DEFAULT_TOPIC_CAPACITY;
use crate::message::DEFAULT_PAYLOAD_LEN;
use crate::metrics::{StatsRules, Tolerances};
use crate::netem::{LinkProfiles, ProfileError};
use crate::workload::DEFAULT_RATE_HZ;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Platform {
    /// Edge broker, anonymizer and cloud log on separate segments.
    Hybrid,
    /// Same pipeline on one host with no anonymizer.
    Local,
}

impl Platform {
    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Hybrid => "hybrid",
            Platform::Local => "local",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown platform (expected hybrid or local)")]
pub struct UnknownPlatform;

impl FromStr for Platform {
    type Err = UnknownPlatform;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hybrid" => Ok(Platform::Hybrid),
            "local" => Ok(Platform::Local),
            _ => Err(UnknownPlatform),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScenarioId {
    I,
    II,
    III,
    IV,
    V,
    VI,
    VII,
    VIII,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 8] = [
        ScenarioId::I,
        ScenarioId::II,
        ScenarioId::III,
        ScenarioId::IV,
        ScenarioId::V,
        ScenarioId::VI,
        ScenarioId::VII,
        ScenarioId::VIII,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::I => "I",
            ScenarioId::II => "II",
            ScenarioId::III => "III",
            ScenarioId::IV => "IV",
            ScenarioId::V => "V",
            ScenarioId::VI => "VI",
            ScenarioId::VII => "VII",
            ScenarioId::VIII => "VIII",
        }
    }

    /// Platform, scheme and producer count. I-IV use one producer, V-VIII
    /// ten; within each group the order is Small, Medium, Large, local.
    pub fn layout(self) -> (Platform, SchemeName, u32) {
        use ScenarioId::*;
        let producers = match self {
            I | II | III | IV => 1,
            _ => 10,
        };
        let (platform, scheme) = match self {
            I | V => (Platform::Hybrid, SchemeName::Small),
            II | VI => (Platform::Hybrid, SchemeName::Medium),
            III | VII => (Platform::Hybrid, SchemeName::Large),
            IV | VIII => (Platform::Local, SchemeName::None),
        };
        (platform, scheme, producers)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scenario id (expected I..VIII)")]
pub struct UnknownScenario;

impl FromStr for ScenarioId {
    type Err = UnknownScenario;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.to_ascii_uppercase();
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.as_str() == upper)
            .ok_or(UnknownScenario)
    }
}

/// Load offered by each producer.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WorkloadParams {
    pub rate_hz: f64,
    pub payload_bytes: usize,
    pub clock_skew_ms: i64,
    /// Delay before the consumer starts polling.
    pub consumer_delay_ms: u64,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            rate_hz: DEFAULT_RATE_HZ,
            payload_bytes: DEFAULT_PAYLOAD_LEN,
            clock_skew_ms: 0,
            consumer_delay_ms: 0,
        }
    }
}

/// Emulation and measurement knobs shared by every component of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PipelineTuning {
    pub edge_capacity: usize,
    pub cloud_max_records: Option<usize>,
    pub poll_interval_ms: u64,
    pub fetch_max: u32,
    pub sampler: SamplerPolicy,
    pub emulation: ResourceEmulation,
    /// Rate cap of the local platform's edge-to-cloud bridge.
    pub bridge_rate_hz: Option<f64>,
    pub append_retries: u32,
    pub idle_timeout_ms: u64,
    pub netem: bool,
    pub stats: StatsRules,
    pub tolerances: Tolerances,
}

impl Default for PipelineTuning {
    fn default() -> Self {
        PipelineTuning {
            edge_capacity: DEFAULT_TOPIC_CAPACITY,
            cloud_max_records: None,
            poll_interval_ms: 10,
            fetch_max: 1000,
            sampler: SamplerPolicy::First,
            emulation: ResourceEmulation::default(),
            bridge_rate_hz: None,
            append_retries: 3,
            idle_timeout_ms: 30_000,
            netem: true,
            stats: StatsRules::default(),
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub platform: Platform,
    pub scheme: SchemeName,
    pub producers: u32,
    pub duration_s: f64,
    pub repetitions: u32,
    pub links: LinkProfiles,
    pub seed: u64,
    pub workload: WorkloadParams,
    pub tuning: PipelineTuning,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("the local platform has no anonymizer; scheme must be none, got {0}")]
    LocalWithScheme(SchemeName),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{link} link: {source}")]
    Link {
        link: &'static str,
        source: ProfileError,
    },
}

pub const DESK_DURATION_S: f64 = 60.0;
pub const DESK_REPETITIONS: u32 = 3;
pub const FULL_SCALE_DURATION_S: f64 = 600.0;
pub const FULL_SCALE_REPETITIONS: u32 = 10;

impl Scenario {
    /// A canonical scenario at desk scale with default links and knobs.
    pub fn canonical(id: ScenarioId, seed: u64) -> Self {
        let (platform, scheme, producers) = id.layout();
        Scenario {
            id: String::from(id.as_str()),
            platform,
            scheme,
            producers,
            duration_s: DESK_DURATION_S,
            repetitions: DESK_REPETITIONS,
            links: LinkProfiles::default(),
            seed,
            workload: WorkloadParams::default(),
            tuning: PipelineTuning::default(),
        }
    }

    pub fn paper_scale(mut self) -> Self {
        self.duration_s = FULL_SCALE_DURATION_S;
        self.repetitions = FULL_SCALE_REPETITIONS;
        self
    }

    pub fn anonymization(&self) -> AnonymizationScheme {
        AnonymizationScheme::named(self.scheme)
    }

    /// Links actually applied, honouring the netem switch.
    pub fn effective_links(&self) -> LinkProfiles {
        if self.tuning.netem {
            self.links
        } else {
            LinkProfiles::IDENTITY
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.platform == Platform::Local && self.scheme != SchemeName::None {
            return Err(ScenarioError::LocalWithScheme(self.scheme));
        }
        if self.producers == 0 {
            return Err(ScenarioError::NonPositive("producers"));
        }
        if self.repetitions == 0 {
            return Err(ScenarioError::NonPositive("repetitions"));
        }
        if !(self.duration_s > 0.0) {
            return Err(ScenarioError::NonPositive("duration"));
        }
        if !(self.workload.rate_hz > 0.0) {
            return Err(ScenarioError::NonPositive("rate"));
        }
        if self.tuning.poll_interval_ms == 0 {
            return Err(ScenarioError::NonPositive("poll interval"));
        }
        if self.tuning.fetch_max == 0 {
            return Err(ScenarioError::NonPositive("fetch max"));
        }
        for (link, p) in [
            ("uplink", self.links.uplink),
            ("wan", self.links.wan),
            ("downlink", self.links.downlink),
        ] {
            p.validate()
                .map_err(|source| ScenarioError::Link { link, source })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_eight() {
        let mut seen = alloc::vec::Vec::new();
        for id in ScenarioId::ALL {
            let s = Scenario::canonical(id, 42);
            s.validate().unwrap();
            seen.push((s.platform, s.scheme, s.producers));
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 8);
        assert_eq!(ScenarioId::VI.layout(), (Platform::Hybrid, SchemeName::Medium, 10));
        assert_eq!(ScenarioId::IV.layout(), (Platform::Local, SchemeName::None, 1));
    }

    #[test]
    fn local_requires_no_scheme() {
        let mut s = Scenario::canonical(ScenarioId::IV, 1);
        s.scheme = SchemeName::Small;
        assert_eq!(
            s.validate(),
            Err(ScenarioError::LocalWithScheme(SchemeName::Small))
        );
    }

    #[test]
    fn parse_ids() {
        assert_eq!("viii".parse::<ScenarioId>(), Ok(ScenarioId::VIII));
        assert!("IX".parse::<ScenarioId>().is_err());
        assert_eq!("Local".parse::<Platform>(), Ok(Platform::Local));
    }

    #[test]
    fn full_scale_parameters() {
        let s = Scenario::canonical(ScenarioId::I, 0).paper_scale();
        assert_eq!((s.duration_s, s.repetitions), (600.0, 10));
    }
}
