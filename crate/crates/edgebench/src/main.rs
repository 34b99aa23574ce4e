use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use edgebench::cloud::CloudServer;
use edgebench::config::{parse_sampler, RunArgs, Settings};
use edgebench::edge::EdgeServer;
use edgebench::logs;
use edgebench::probe::{download, rtt_probe, upload, ProbeRig};
use edgebench::runner::{run_suite, to_json, Mode};
use edgebench::stage::{run_stage, StageConfig};
use edgebench::wire::{DEFAULT_CLOUD_PORT, DEFAULT_EDGE_PORT};
use edgebench_core::anonymizer::{AnonymizationScheme, ResourceEmulation, SchemeName};
use edgebench_core::metrics::{compute_latencies, compute_packet_loss, latency_values, summarize, StatsRules};
use edgebench_core::netem::LinkProfile;
use edgebench_core::workload::{resolve_pseudonyms, SentLog};

#[derive(Parser)]
#[command(name = "edgebench", version, about = "Edge/cloud C-ITS messaging benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run benchmark scenarios and write logs and reports.
    Run(RunArgs),
    /// Serve an edge broker until killed.
    ServeEdge {
        #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_EDGE_PORT}"))]
        listen: String,
        /// Per-topic queue bound.
        #[arg(long, default_value_t = 1 << 20)]
        capacity: usize,
    },
    /// Serve the cloud log and registry until killed.
    ServeCloud {
        #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_CLOUD_PORT}"))]
        listen: String,
        #[arg(long)]
        max_records: Option<usize>,
        /// Append every record to this file as well.
        #[arg(long)]
        journal: Option<PathBuf>,
    },
    /// Run the MEC data service between an edge topic and the cloud log.
    Stage(StageArgs),
    /// Measure RTT and throughput through the default 5G link profiles.
    Probe {
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Bytes per bulk transfer.
        #[arg(long, default_value_t = 16 << 20)]
        bytes: u32,
    },
    /// Recompute loss and latency from the CSV logs of one repetition.
    Analyze {
        dir: PathBuf,
    },
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    edge: SocketAddr,
    #[arg(long)]
    cloud: SocketAddr,
    #[arg(long)]
    topic: String,
    #[arg(long)]
    cloud_topic: String,
    #[arg(long, default_value = "none")]
    scheme: String,
    /// Relay without sampling or pseudonyms.
    #[arg(long)]
    bridge: bool,
    #[arg(long, default_value = "first")]
    sampler: String,
    #[arg(long, default_value_t = 0)]
    salt: u64,
    #[arg(long)]
    per_cpu_rate: Option<f64>,
    #[arg(long)]
    queue_per_gb: Option<usize>,
    #[arg(long)]
    bridge_rate: Option<f64>,
    /// Queue bound of a throttled bridge.
    #[arg(long)]
    bridge_queue: Option<usize>,
    #[arg(long, default_value_t = 3)]
    retries: u32,
}

fn announce(line: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}")?;
    out.flush()?;
    Ok(())
}

fn park() -> ! {
    loop {
        std::thread::park();
    }
}

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let settings = Settings::resolve(&args)?;
    let scenarios = settings
        .scenarios
        .iter()
        .map(|&id| settings.scenario(id))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mode = if settings.sim_time {
        Mode::Sim
    } else if settings.distributed {
        Mode::distributed_with_current_exe()?
    } else {
        Mode::RealTime { program: None }
    };
    let suite = run_suite(&scenarios, &mode, &settings.out)?;
    print!("{}", suite.summary);
    Ok(ExitCode::from(suite.exit_code() as u8))
}

fn stage(a: StageArgs) -> anyhow::Result<()> {
    let defaults = ResourceEmulation::default();
    let scheme = if a.bridge {
        None
    } else {
        let name: SchemeName = a.scheme.parse().map_err(|e| anyhow::anyhow!("{}: {e}", a.scheme))?;
        Some(AnonymizationScheme::named(name))
    };
    let cfg = StageConfig {
        edge_addr: a.edge,
        topic: a.topic,
        cloud_addr: a.cloud,
        cloud_topic: a.cloud_topic,
        scheme,
        sampler: parse_sampler(&a.sampler)?,
        emulation: ResourceEmulation {
            per_cpu_rate_hz: a.per_cpu_rate.unwrap_or(defaults.per_cpu_rate_hz),
            queue_per_ram_gb: a.queue_per_gb.unwrap_or(defaults.queue_per_ram_gb),
        },
        bridge_rate_hz: a.bridge_rate,
        bridge_queue: a.bridge_queue,
        salt: a.salt,
        append_retries: a.retries,
    };
    let mut ready = Ok(());
    let report = run_stage(&cfg, || ready = announce("ready"))?;
    ready?;
    log::info!("stage finished: {:?}", report.counters);
    Ok(())
}

fn probe(samples: usize, bytes: u32) -> anyhow::Result<()> {
    const CHUNK: u32 = 64 << 10;
    let count = (bytes / CHUNK).max(2);
    let echo = ProbeRig::start(Some(LinkProfile::UPLINK_5G), Some(LinkProfile::DOWNLINK_5G))?;
    let rtt = rtt_probe(&echo, samples, 64, Duration::from_millis(10))?;
    let up = upload(&ProbeRig::start(Some(LinkProfile::UPLINK_5G), None)?, count, CHUNK)?;
    let down = download(&ProbeRig::start(None, Some(LinkProfile::DOWNLINK_5G))?, count, CHUNK)?;
    let out = serde_json::json!({ "rtt": rtt, "uplink": up, "downlink": down });
    print!("{}", to_json(&out));
    Ok(())
}

fn analyze(dir: PathBuf) -> anyhow::Result<()> {
    let mut sent = Vec::new();
    for p in logs::list_logs(&dir, "sent_")? {
        sent.push(SentLog {
            records: logs::read_sent(&p)?,
            ..SentLog::default()
        });
    }
    let mut received = Vec::new();
    for p in logs::list_logs(&dir, "received_")? {
        received.extend(logs::read_received(&p)?);
    }
    let pseudonyms = dir.join(logs::PSEUDONYMS_FILE);
    if pseudonyms.exists() {
        resolve_pseudonyms(&mut received, &logs::read_inverse_pseudonyms(&pseudonyms)?);
    }
    let sent = edgebench_core::workload::merge_sent(&sent);
    let loss = compute_packet_loss(&sent, &received)?;
    let latencies = latency_values(&compute_latencies(&received));
    let summary = summarize(&latencies, StatsRules::default()).ok();
    let out = serde_json::json!({
        "sent": loss.sent,
        "matched": loss.matched,
        "duplicates": loss.duplicates,
        "anomalies": loss.anomalies.len(),
        "loss_pct": loss.loss_pct,
        "mean_ms": summary.map(|s| s.mean),
        "median_ms": summary.map(|s| s.median),
        "sigma_ms": summary.map(|s| s.sigma),
    });
    print!("{}", to_json(&out));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().command {
        Cmd::Run(args) => run(args),
        Cmd::ServeEdge { listen, capacity } => (|| {
            let server = EdgeServer::bind(listen.as_str(), capacity).with_context(|| format!("binding {listen}"))?;
            announce(&format!("listening {}", server.local_addr()))?;
            park()
        })(),
        Cmd::ServeCloud {
            listen,
            max_records,
            journal,
        } => (|| {
            let server = CloudServer::bind_with_journal(listen.as_str(), max_records, journal.as_deref())
                .with_context(|| format!("binding {listen}"))?;
            announce(&format!("listening {}", server.local_addr()))?;
            park()
        })(),
        Cmd::Stage(a) => stage(a).map(|()| ExitCode::SUCCESS),
        Cmd::Probe { samples, bytes } => probe(samples, bytes).map(|()| ExitCode::SUCCESS),
        Cmd::Analyze { dir } => analyze(dir).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
