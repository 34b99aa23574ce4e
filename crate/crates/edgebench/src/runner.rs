//! Scenario orchestration: build the topology, run repetitions, collect
//! logs and counters, write reports.

use std::fs;
use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use edgebench_core::cloud::{cloud_topic_name, edge_topic_name, RegistryEntry};
use edgebench_core::message::CitsMessage;
use edgebench_core::metrics::{aggregate, BenchmarkReport, RepetitionResult};
use edgebench_core::netem::LinkProfile;
use edgebench_core::report::{repetition_report, RunLogs};
use edgebench_core::scenario::{Platform, Scenario};
use edgebench_core::sim::{
    link_for_run, producer_configs, producer_phases, pseudonym_salt, repetition_seed, simulate,
    PipelineCounters, DATA_TYPE, MEC_ID,
};
use edgebench_core::workload::{ReceivedLog, SentLog};
use serde::Serialize;

use crate::cloud::{CloudClient, CloudServer};
use crate::consumer::{run_consumer, ConsumerOptions};
use crate::edge::{EdgeClient, EdgeServer, StageReport};
use crate::logs;
use crate::producer::{run_producer, ProducerOptions};
use crate::shim::Shim;
use crate::stage::{run_stage, StageConfig};

/// Lateness beyond which a real-time send is flagged.
pub const SCHEDULER_TOLERANCE: Duration = Duration::from_millis(5);
const SETUP_MARGIN: Duration = Duration::from_millis(100);
const REPLY_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone, Debug)]
pub enum Mode {
    /// Discrete-event model in virtual time.
    Sim,
    /// Real sockets and clocks. With `program` set, the brokers and the
    /// stage run as child processes of that executable.
    RealTime { program: Option<PathBuf> },
}

impl Mode {
    pub fn distributed_with_current_exe() -> anyhow::Result<Mode> {
        Ok(Mode::RealTime {
            program: Some(std::env::current_exe().context("locating the edgebench executable")?),
        })
    }
}

/// What a finished repetition left behind, before analysis.
#[derive(Clone, Debug)]
pub struct RepetitionArtifacts {
    pub sent: Vec<SentLog>,
    /// With pseudonymized producer ids, as the consumer saw them.
    pub received: ReceivedLog,
    /// Original producer id to pseudonym.
    pub pseudonyms: Vec<(u32, u32)>,
    pub counters: PipelineCounters,
    pub max_send_lateness: Option<Duration>,
}

impl RepetitionArtifacts {
    pub fn analyze(&self, s: &Scenario) -> anyhow::Result<RepetitionResult> {
        let inverse = self.pseudonyms.iter().map(|&(o, p)| (p, o)).collect();
        let logs = RunLogs {
            sent: &self.sent,
            received: &self.received,
            inverse_pseudonyms: &inverse,
            counters: &self.counters,
        };
        let mut result = repetition_report(s, &logs)?;
        if self.max_send_lateness.is_some_and(|l| l > SCHEDULER_TOLERANCE) {
            result.report.flags.push("scheduler-lateness".into());
        }
        Ok(result)
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for log in &self.sent {
            logs::write_sent(&logs::sent_path(dir, log.producer_id), &log.records)?;
        }
        logs::write_received(&logs::received_path(dir, 1), &self.received.records)?;
        logs::write_pseudonyms(&dir.join(logs::PSEUDONYMS_FILE), &self.pseudonyms)?;
        Ok(())
    }
}

pub fn run_repetition(s: &Scenario, rep: u32, mode: &Mode) -> anyhow::Result<RepetitionArtifacts> {
    match mode {
        Mode::Sim => {
            let out = simulate(s, rep)?;
            Ok(RepetitionArtifacts {
                sent: out.sent,
                received: out.received,
                pseudonyms: out.pseudonyms.entries().collect(),
                counters: out.counters,
                max_send_lateness: None,
            })
        }
        Mode::RealTime { program } => real_time_repetition(s, rep, program.as_deref()),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioOutcome {
    pub aggregate: BenchmarkReport,
    pub repetitions: Vec<BenchmarkReport>,
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        self.aggregate.passed() && self.repetitions.iter().all(BenchmarkReport::conserved)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// Run every repetition of `s`, writing logs and reports under `out`.
pub fn run_scenario(s: &Scenario, mode: &Mode, out: &Path) -> anyhow::Result<ScenarioOutcome> {
    s.validate()?;
    let scenario_dir = out.join(&s.id);
    let mut results = Vec::new();
    for rep in 0..s.repetitions {
        log::info!("scenario {} repetition {}/{}", s.id, rep + 1, s.repetitions);
        let artifacts = run_repetition(s, rep, mode)
            .with_context(|| format!("scenario {} repetition {}", s.id, rep + 1))?;
        let dir = scenario_dir.join(format!("rep{}", rep + 1));
        artifacts.write(&dir)?;
        let result = artifacts.analyze(s)?;
        fs::write(dir.join("report.json"), to_json(&result.report))?;
        results.push(result);
    }
    let outcome = ScenarioOutcome {
        aggregate: aggregate(&results, s.tuning.stats)?,
        repetitions: results.into_iter().map(|r| r.report).collect(),
    };
    fs::write(out.join(format!("report_{}.json", s.id)), to_json(&outcome))?;
    Ok(outcome)
}

#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub scenarios: Vec<ScenarioOutcome>,
    pub summary: String,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.scenarios.iter().all(ScenarioOutcome::passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

pub fn run_suite(scenarios: &[Scenario], mode: &Mode, out: &Path) -> anyhow::Result<SuiteOutcome> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut outcomes = Vec::new();
    for s in scenarios {
        outcomes.push(run_scenario(s, mode, out)?);
    }
    let reports: Vec<BenchmarkReport> = outcomes.iter().map(|o| o.aggregate.clone()).collect();
    let summary = summary_table(&reports);
    fs::write(out.join("summary.txt"), &summary)?;
    Ok(SuiteOutcome {
        scenarios: outcomes,
        summary,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Text table with the latency and loss columns plus the prediction.
pub fn summary_table(reports: &[BenchmarkReport]) -> String {
    let mut out = format!(
        "{:<9}{:<8}{:<8}{:>5}{:>11}{:>13}{:>9}{:>10}{:>15}{:>8}  {:<8}{}\n",
        "Scenario", "Platf.", "Scheme", "N", "Mean (ms)", "Median (ms)", "σ (ms)", "Loss (%)",
        "Predicted (%)", "Δ", "Verdict", "Flags"
    );
    for r in reports {
        let verdict = if r.passed() {
            "PASS"
        } else if r.conserved() {
            "FAIL"
        } else {
            "LEAK"
        };
        out.push_str(&format!(
            "{:<9}{:<8}{:<8}{:>5}{:>11}{:>13}{:>9}{:>10.2}{:>15.2}{:>8.2}  {:<8}{}\n",
            r.scenario_id,
            r.platform,
            r.scheme,
            r.producers,
            opt(r.mean_ms),
            opt(r.median_ms),
            opt(r.sigma_ms),
            r.measured_loss_pct,
            r.predicted_loss_pct,
            r.loss_delta_pct,
            verdict,
            r.flags.join(",")
        ));
    }
    out
}

/// Brokers, in this process or as children.
enum Brokers {
    InProcess { edge: EdgeServer, cloud: CloudServer },
    Processes { edge: (Child, SocketAddr), cloud: (Child, SocketAddr) },
}

impl Brokers {
    fn start(s: &Scenario, program: Option<&Path>) -> anyhow::Result<Brokers> {
        let local = "127.0.0.1:0";
        let Some(p) = program else {
            return Ok(Brokers::InProcess {
                edge: EdgeServer::bind(local, s.tuning.edge_capacity)?,
                cloud: CloudServer::bind(local, s.tuning.cloud_max_records)?,
            });
        };
        let edge_args = [
            "serve-edge".to_string(),
            "--listen".into(),
            local.into(),
            "--capacity".into(),
            s.tuning.edge_capacity.to_string(),
        ];
        let (edge, line) = spawn_child(p, &edge_args)?;
        let mut cloud_args = vec!["serve-cloud".to_string(), "--listen".into(), local.into()];
        if let Some(m) = s.tuning.cloud_max_records {
            cloud_args.extend(["--max-records".into(), m.to_string()]);
        }
        let rest = listening_addr(&line).and_then(|edge_addr| {
            let (cloud, line) = spawn_child(p, &cloud_args)?;
            match listening_addr(&line) {
                Ok(cloud_addr) => Ok((edge_addr, cloud, cloud_addr)),
                Err(e) => {
                    reap([cloud]);
                    Err(e)
                }
            }
        });
        match rest {
            Ok((edge_addr, cloud, cloud_addr)) => Ok(Brokers::Processes {
                edge: (edge, edge_addr),
                cloud: (cloud, cloud_addr),
            }),
            Err(e) => {
                reap([edge]);
                Err(e)
            }
        }
    }

    fn addrs(&self) -> (SocketAddr, SocketAddr) {
        match self {
            Brokers::InProcess { edge, cloud } => (edge.local_addr(), cloud.local_addr()),
            Brokers::Processes { edge, cloud } => (edge.1, cloud.1),
        }
    }

    fn stop(self) {
        match self {
            Brokers::InProcess { mut edge, mut cloud } => {
                edge.shutdown();
                cloud.shutdown();
            }
            Brokers::Processes { edge, cloud } => reap([edge.0, cloud.0]),
        }
    }
}

fn reap(children: impl IntoIterator<Item = Child>) {
    for mut c in children {
        let _ = c.kill();
        let _ = c.wait();
    }
}

/// Start `program` with `args` and wait for the first stdout line.
fn spawn_child(program: &Path, args: &[String]) -> anyhow::Result<(Child, String)> {
    let mut child = Command::new(program)
        .args(args)
        .stdout(Stdio::piped())
        .stdin(Stdio::null())
        .spawn()
        .with_context(|| format!("starting {} {}", program.display(), args.join(" ")))?;
    let stdout = child.stdout.take().expect("piped");
    let mut reader = BufReader::new(stdout);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.is_empty() {
        let status = child.wait()?;
        bail!("{} {} exited before starting ({status})", program.display(), args[0]);
    }
    // keep draining so the child never blocks on a full pipe
    thread::spawn(move || {
        let mut sink = String::new();
        while reader.read_line(&mut sink).map(|n| n > 0).unwrap_or(false) {
            sink.clear();
        }
    });
    Ok((child, line.trim().to_string()))
}

fn listening_addr(line: &str) -> anyhow::Result<SocketAddr> {
    line.strip_prefix("listening ")
        .and_then(|a| a.parse().ok())
        .with_context(|| format!("unexpected child greeting {line:?}"))
}

fn shaped(profile: LinkProfile, netem: bool) -> Option<LinkProfile> {
    netem.then_some(profile)
}

fn real_time_repetition(
    s: &Scenario,
    rep: u32,
    program: Option<&Path>,
) -> anyhow::Result<RepetitionArtifacts> {
    let brokers = Brokers::start(s, program)?;
    let (edge_addr, cloud_addr) = brokers.addrs();
    let outcome = drive(s, repetition_seed(s.seed, rep), edge_addr, cloud_addr, program);
    brokers.stop();
    outcome
}

fn drive(
    s: &Scenario,
    run_seed: u64,
    edge_addr: SocketAddr,
    cloud_addr: SocketAddr,
    program: Option<&Path>,
) -> anyhow::Result<RepetitionArtifacts> {
    let netem = s.tuning.netem;
    let links = s.effective_links();
    let topic = &edge_topic_name(MEC_ID, DATA_TYPE);
    let cloud_topic = &cloud_topic_name(MEC_ID, DATA_TYPE);
    let uplink = link_for_run(links.uplink, run_seed);
    let wan = link_for_run(links.wan, run_seed);
    let downlink = link_for_run(links.downlink, run_seed);
    let local = "127.0.0.1:0";
    let mut shims = Vec::new();
    let mut via = |target: SocketAddr, up: Option<LinkProfile>, down: Option<LinkProfile>| -> anyhow::Result<SocketAddr> {
        if up.is_none() && down.is_none() {
            return Ok(target);
        }
        let shim = Shim::spawn(local, target, up, down)?;
        let addr = shim.local_addr();
        shims.push(shim);
        Ok(addr)
    };
    let producer_edge = via(edge_addr, shaped(uplink, netem), None)?;
    let stage_cloud = via(cloud_addr, shaped(wan, netem), None)?;
    let consumer_cloud = via(cloud_addr, None, shaped(downlink, netem))?;

    let mut control = CloudClient::connect(cloud_addr)?;
    control.register_mec(
        &RegistryEntry {
            mec_id: MEC_ID.into(),
            broker_address: producer_edge.to_string(),
            cloud_topic: cloud_topic.into(),
        },
        Some(&consumer_cloud.to_string()),
    )?;

    let stage_cfg = StageConfig {
        edge_addr,
        topic: topic.into(),
        cloud_addr: stage_cloud,
        cloud_topic: cloud_topic.into(),
        scheme: (s.platform == Platform::Hybrid).then(|| s.anonymization()),
        sampler: s.tuning.sampler,
        emulation: s.tuning.emulation,
        bridge_rate_hz: s.tuning.bridge_rate_hz,
        bridge_queue: Some(s.tuning.edge_capacity),
        salt: pseudonym_salt(run_seed),
        append_retries: s.tuning.append_retries,
    };
    let stage = start_stage(&stage_cfg, program)?;

    let consumer_opts = ConsumerOptions {
        cloud_addr,
        mec: MEC_ID.into(),
        data_type: DATA_TYPE.into(),
        poll_interval: Duration::from_millis(s.tuning.poll_interval_ms),
        fetch_max: s.tuning.fetch_max,
        idle_timeout: Duration::from_millis(s.tuning.idle_timeout_ms),
        start_delay: Duration::from_millis(s.workload.consumer_delay_ms),
    };
    let consumer = thread::Builder::new()
        .name("consumer".into())
        .spawn(move || run_consumer(&consumer_opts))?;

    let producer_opts = ProducerOptions {
        cloud_addr,
        mec: None,
        data_type: DATA_TYPE.into(),
        reply_timeout: REPLY_TIMEOUT,
        reconnect_attempts: s.tuning.append_retries,
    };
    let t0 = Instant::now() + SETUP_MARGIN;
    let producers: Vec<_> = producer_configs(s, run_seed)
        .into_iter()
        .zip(producer_phases(s, run_seed))
        .map(|(cfg, phase)| {
            let opts = producer_opts.clone();
            let start = t0 + Duration::from_nanos(phase.0);
            thread::Builder::new()
                .name(format!("producer-{}", cfg.producer_id))
                .spawn(move || run_producer(&cfg, &opts, start))
        })
        .collect::<Result<_, _>>()?;

    let mut sent = Vec::new();
    let mut max_lateness = Duration::ZERO;
    let mut first_err = None;
    for h in producers {
        match h.join().map_err(|_| anyhow::anyhow!("producer panicked")).and_then(|r| r) {
            Ok(o) => {
                max_lateness = max_lateness.max(o.max_lateness);
                sent.push(o.log);
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }

    let mut edge = EdgeClient::connect(edge_addr)?;
    edge.publish(topic, &CitsMessage::end_of_run(topic))?;

    let received = consumer
        .join()
        .map_err(|_| anyhow::anyhow!("consumer panicked"))??;
    let stage_report = stage.finish()?;
    let _ = edge.stage_report(topic)?;
    let edge_stats = edge.stats(topic)?;
    let log_stats = control.log_stats(cloud_topic)?;
    for mut shim in shims {
        shim.stop();
    }
    if let Some(e) = first_err {
        return Err(e);
    }

    let acked: u64 = sent.iter().map(SentLog::acknowledged).sum();
    let counters = PipelineCounters {
        edge_published: acked + 1,
        edge: edge_stats,
        stage: stage_report.counters,
        stage_is_anonymizer: s.platform == Platform::Hybrid,
        cloud_attempts: stage_report.append_attempts,
        cloud_appended: log_stats.next_offset,
        cloud_rejected: log_stats.rejected,
    };
    Ok(RepetitionArtifacts {
        sent,
        received,
        pseudonyms: stage_report.pseudonyms,
        counters,
        max_send_lateness: Some(max_lateness),
    })
}

enum StageHandle {
    Thread(thread::JoinHandle<anyhow::Result<StageReport>>),
    Process { child: Child, edge_addr: SocketAddr, topic: String },
}

impl StageHandle {
    fn finish(self) -> anyhow::Result<StageReport> {
        match self {
            StageHandle::Thread(h) => h.join().map_err(|_| anyhow::anyhow!("stage panicked"))?,
            StageHandle::Process {
                mut child,
                edge_addr,
                topic,
            } => {
                let status = child.wait()?;
                if !status.success() {
                    bail!("stage process failed ({status})");
                }
                Ok(EdgeClient::connect(edge_addr)?.stage_report(&topic)?)
            }
        }
    }
}

fn start_stage(cfg: &StageConfig, program: Option<&Path>) -> anyhow::Result<StageHandle> {
    match program {
        None => {
            let (ready_tx, ready_rx) = mpsc::channel();
            let cfg = cfg.clone();
            let h = thread::Builder::new()
                .name("stage".into())
                .spawn(move || run_stage(&cfg, move || {
                    let _ = ready_tx.send(());
                }))?;
            if ready_rx.recv_timeout(Duration::from_secs(10)).is_err() {
                return Err(h
                    .join()
                    .map_err(|_| anyhow::anyhow!("stage panicked"))?
                    .err()
                    .unwrap_or_else(|| anyhow::anyhow!("stage never subscribed")));
            }
            Ok(StageHandle::Thread(h))
        }
        Some(p) => {
            let (child, line) = spawn_child(p, &stage_args(cfg))?;
            if line != "ready" {
                bail!("unexpected stage greeting {line:?}");
            }
            Ok(StageHandle::Process {
                child,
                edge_addr: cfg.edge_addr,
                topic: cfg.topic.clone(),
            })
        }
    }
}

fn stage_args(cfg: &StageConfig) -> Vec<String> {
    let mut a = vec![
        "stage".to_string(),
        "--edge".into(),
        cfg.edge_addr.to_string(),
        "--cloud".into(),
        cfg.cloud_addr.to_string(),
        "--topic".into(),
        cfg.topic.clone(),
        "--cloud-topic".into(),
        cfg.cloud_topic.clone(),
        "--scheme".into(),
        cfg.scheme.map_or("none", |s| s.name.as_str()).to_string(),
        "--sampler".into(),
        match cfg.sampler {
            edgebench_core::anonymizer::SamplerPolicy::First => "first".into(),
            edgebench_core::anonymizer::SamplerPolicy::Last => "last".into(),
        },
        "--salt".into(),
        cfg.salt.to_string(),
        "--per-cpu-rate".into(),
        cfg.emulation.per_cpu_rate_hz.to_string(),
        "--queue-per-gb".into(),
        cfg.emulation.queue_per_ram_gb.to_string(),
        "--retries".into(),
        cfg.append_retries.to_string(),
    ];
    if cfg.scheme.is_none() {
        a.push("--bridge".into());
    }
    if let Some(r) = cfg.bridge_rate_hz {
        a.extend(["--bridge-rate".into(), r.to_string()]);
    }
    if let Some(q) = cfg.bridge_queue {
        a.extend(["--bridge-queue".into(), q.to_string()]);
    }
    a
}
