//! Run settings: command-line flags layered over an optional TOML file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use edgebench_core::anonymizer::{SamplerPolicy, SchemeName};
use edgebench_core::metrics::{MedianRule, SigmaRule};
use edgebench_core::netem::LinkProfile;
use edgebench_core::scenario::{
    Platform, Scenario, ScenarioId, FULL_SCALE_DURATION_S, FULL_SCALE_REPETITIONS,
};
use serde::Deserialize;

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Scenario id (I..VIII) or `all`.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Seconds per repetition.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub repetitions: Option<u32>,
    /// Override the scenario's producer count.
    #[arg(long)]
    pub producers: Option<u32>,
    /// Messages per second per producer.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Payload bytes per message.
    #[arg(long)]
    pub payload: Option<usize>,
    /// small, medium, large or none.
    #[arg(long)]
    pub scheme: Option<String>,
    /// hybrid or local.
    #[arg(long)]
    pub platform: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run the virtual-time model instead of sockets and clocks.
    #[arg(long)]
    pub sim_time: bool,
    /// 600 s x 10 repetitions.
    #[arg(long)]
    pub paper_scale: bool,
    /// Disable all link shaping.
    #[arg(long)]
    pub no_netem: bool,
    /// Run brokers and the stage as separate processes.
    #[arg(long)]
    pub distributed: bool,
    /// first or last arrival in each sampling window.
    #[arg(long)]
    pub sampler: Option<String>,
    /// TOML file with the same settings; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Deserialize, Debug, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: FileRun,
    #[serde(default)]
    pub tuning: FileTuning,
    #[serde(default)]
    pub links: FileLinks,
}

#[derive(Deserialize, Debug, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct FileRun {
    pub scenario: Option<String>,
    pub duration: Option<f64>,
    pub repetitions: Option<u32>,
    pub producers: Option<u32>,
    pub rate: Option<f64>,
    pub payload: Option<usize>,
    pub scheme: Option<String>,
    pub platform: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sim_time: Option<bool>,
    pub paper_scale: Option<bool>,
    pub no_netem: Option<bool>,
    pub distributed: Option<bool>,
    pub sampler: Option<String>,
}

#[derive(Deserialize, Debug, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct FileTuning {
    pub edge_capacity: Option<usize>,
    pub cloud_max_records: Option<usize>,
    pub poll_interval_ms: Option<u64>,
    pub fetch_max: Option<u32>,
    pub append_retries: Option<u32>,
    pub idle_timeout_ms: Option<u64>,
    pub bridge_rate_hz: Option<f64>,
    pub per_cpu_rate_hz: Option<f64>,
    pub queue_per_ram_gb: Option<usize>,
    /// `average` or `lower`.
    pub median: Option<String>,
    /// `population` or `sample`.
    pub sigma: Option<String>,
    pub single_tolerance: Option<f64>,
    pub multiple_tolerance: Option<f64>,
    pub consumer_delay_ms: Option<u64>,
    pub clock_skew_ms: Option<i64>,
}

#[derive(Deserialize, Debug, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct FileLinks {
    pub uplink: Option<FileLink>,
    pub wan: Option<FileLink>,
    pub downlink: Option<FileLink>,
}

/// Fields left out keep the default profile's value.
#[derive(Deserialize, Debug, Default, Clone, Copy)]
#[serde(deny_unknown_fields)]
pub struct FileLink {
    pub base_delay_ms: Option<f64>,
    pub jitter_ms: Option<f64>,
    pub bandwidth_mbps: Option<f64>,
    pub random_loss_pct: Option<f64>,
    pub seed: Option<u64>,
}

impl FileLink {
    fn apply(&self, base: LinkProfile) -> LinkProfile {
        LinkProfile {
            base_delay_ms: self.base_delay_ms.unwrap_or(base.base_delay_ms),
            jitter_ms: self.jitter_ms.unwrap_or(base.jitter_ms),
            bandwidth_mbps: self.bandwidth_mbps.or(base.bandwidth_mbps),
            random_loss_pct: self.random_loss_pct.unwrap_or(base.random_loss_pct),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

/// Parse a config file; TOML errors carry line and column.
pub fn parse_config(text: &str, origin: &Path) -> anyhow::Result<FileConfig> {
    toml::from_str(text).map_err(|e| {
        let (line, col) = e
            .span()
            .map(|s| line_col(text, s.start))
            .unwrap_or((0, 0));
        anyhow::anyhow!("{}:{line}:{col}: {}", origin.display(), e.message())
    })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

pub fn load_config(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text, path)
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub scenarios: Vec<ScenarioId>,
    pub seed: u64,
    pub out: PathBuf,
    pub sim_time: bool,
    pub distributed: bool,
    args: RunArgs,
    file: FileConfig,
}

pub const DEFAULT_SEED: u64 = 42;

pub fn parse_scenarios(s: &str) -> anyhow::Result<Vec<ScenarioId>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(ScenarioId::ALL.to_vec());
    }
    s.split(',')
        .map(|id| id.trim().parse::<ScenarioId>().map_err(|e| anyhow::anyhow!("{id}: {e}")))
        .collect()
}

pub fn parse_sampler(s: &str) -> anyhow::Result<SamplerPolicy> {
    match s.to_ascii_lowercase().as_str() {
        "first" => Ok(SamplerPolicy::First),
        "last" => Ok(SamplerPolicy::Last),
        other => bail!("unknown sampler {other:?} (expected first or last)"),
    }
}

impl Settings {
    pub fn resolve(args: &RunArgs) -> anyhow::Result<Settings> {
        let file = match &args.config {
            Some(p) => load_config(p)?,
            None => FileConfig::default(),
        };
        let run = &file.run;
        let scenario = args.scenario.clone().or(run.scenario.clone()).unwrap_or_else(|| "all".into());
        Ok(Settings {
            scenarios: parse_scenarios(&scenario)?,
            seed: args.seed.or(run.seed).unwrap_or(DEFAULT_SEED),
            out: args.out.clone().or(run.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
            sim_time: args.sim_time || run.sim_time.unwrap_or(false),
            distributed: args.distributed || run.distributed.unwrap_or(false),
            args: args.clone(),
            file,
        })
    }

    /// Fully configured scenario for `id`.
    pub fn scenario(&self, id: ScenarioId) -> anyhow::Result<Scenario> {
        let a = &self.args;
        let run = &self.file.run;
        let t = &self.file.tuning;
        let mut s = Scenario::canonical(id, self.seed);

        if a.paper_scale || run.paper_scale.unwrap_or(false) {
            s.duration_s = FULL_SCALE_DURATION_S;
            s.repetitions = FULL_SCALE_REPETITIONS;
        } else {
            if let Some(d) = a.duration.or(run.duration) {
                s.duration_s = d;
            }
            if let Some(r) = a.repetitions.or(run.repetitions) {
                s.repetitions = r;
            }
        }
        if let Some(p) = a.producers.or(run.producers) {
            s.producers = p;
        }
        if let Some(r) = a.rate.or(run.rate) {
            s.workload.rate_hz = r;
        }
        if let Some(p) = a.payload.or(run.payload) {
            s.workload.payload_bytes = p;
        }
        let platform = a.platform.as_ref().or(run.platform.as_ref());
        if let Some(p) = platform {
            s.platform = p.parse::<Platform>()?;
            if s.platform == Platform::Local {
                s.scheme = SchemeName::None;
            }
        }
        if let Some(name) = a.scheme.as_ref().or(run.scheme.as_ref()) {
            s.scheme = name.parse::<SchemeName>()?;
            if s.scheme != SchemeName::None && platform.is_none() {
                s.platform = Platform::Hybrid;
            }
        }
        if let Some(sp) = a.sampler.as_ref().or(run.sampler.as_ref()) {
            s.tuning.sampler = parse_sampler(sp)?;
        }
        if a.no_netem || run.no_netem.unwrap_or(false) {
            s.tuning.netem = false;
        }

        let tu = &mut s.tuning;
        if let Some(v) = t.edge_capacity {
            tu.edge_capacity = v;
        }
        if t.cloud_max_records.is_some() {
            tu.cloud_max_records = t.cloud_max_records;
        }
        if let Some(v) = t.poll_interval_ms {
            tu.poll_interval_ms = v;
        }
        if let Some(v) = t.fetch_max {
            tu.fetch_max = v;
        }
        if let Some(v) = t.append_retries {
            tu.append_retries = v;
        }
        if let Some(v) = t.idle_timeout_ms {
            tu.idle_timeout_ms = v;
        }
        if t.bridge_rate_hz.is_some() {
            tu.bridge_rate_hz = t.bridge_rate_hz;
        }
        if let Some(v) = t.per_cpu_rate_hz {
            tu.emulation.per_cpu_rate_hz = v;
        }
        if let Some(v) = t.queue_per_ram_gb {
            tu.emulation.queue_per_ram_gb = v;
        }
        if let Some(m) = &t.median {
            tu.stats.median = match m.as_str() {
                "average" => MedianRule::AverageOfMiddles,
                "lower" => MedianRule::LowerMiddle,
                other => bail!("unknown median rule {other:?} (expected average or lower)"),
            };
        }
        if let Some(m) = &t.sigma {
            tu.stats.sigma = match m.as_str() {
                "population" => SigmaRule::Population,
                "sample" => SigmaRule::Sample,
                other => bail!("unknown sigma rule {other:?} (expected population or sample)"),
            };
        }
        if let Some(v) = t.single_tolerance {
            tu.tolerances.single_producer = v;
        }
        if let Some(v) = t.multiple_tolerance {
            tu.tolerances.multiple_producers = v;
        }
        if let Some(v) = t.consumer_delay_ms {
            s.workload.consumer_delay_ms = v;
        }
        if let Some(v) = t.clock_skew_ms {
            s.workload.clock_skew_ms = v;
        }

        let l = &self.file.links;
        if let Some(p) = l.uplink {
            s.links.uplink = p.apply(s.links.uplink);
        }
        if let Some(p) = l.wan {
            s.links.wan = p.apply(s.links.wan);
        }
        if let Some(p) = l.downlink {
            s.links.downlink = p.apply(s.links.downlink);
        }
        s.validate().with_context(|| format!("scenario {id}"))?;
        Ok(s)
    }

    pub fn all_scenarios(&self) -> anyhow::Result<Vec<Scenario>> {
        self.scenarios.iter().map(|id| self.scenario(*id)).collect()
    }
}
