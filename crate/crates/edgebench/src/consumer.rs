//! Real-time consumer: resolve the cloud topic of a MEC and poll it from
//! offset 0 until the end-of-run marker shows up.

use std::net::SocketAddr;
use std::time::{Duration, Instant};

use anyhow::Context;
use edgebench_core::workload::{ReceivedLog, ReceivedRecord};

use crate::clock::{sleep_until, wall_ms};
use crate::cloud::CloudClient;

#[derive(Clone, Debug)]
pub struct ConsumerOptions {
    pub cloud_addr: SocketAddr,
    pub mec: String,
    pub data_type: String,
    pub poll_interval: Duration,
    pub fetch_max: u32,
    pub idle_timeout: Duration,
    pub start_delay: Duration,
}

pub fn run_consumer(opts: &ConsumerOptions) -> anyhow::Result<ReceivedLog> {
    let route = CloudClient::connect(opts.cloud_addr)
        .context("connecting to the cloud registry")?
        .resolve_consumer(&opts.mec, &opts.data_type)
        .context("resolving the cloud topic")?;
    let mut log_client =
        CloudClient::connect(route.cloud_address.as_str()).context("connecting to the cloud log")?;
    std::thread::sleep(opts.start_delay);

    let mut out = ReceivedLog::default();
    let mut cursor = 0u64;
    let mut last_progress = Instant::now();
    let mut next_poll = Instant::now();
    loop {
        sleep_until(next_poll);
        next_poll = Instant::now().max(next_poll) + opts.poll_interval;
        let batch = log_client
            .fetch(&route.cloud_topic, cursor, opts.fetch_max)
            .context("fetching from the cloud log")?;
        let now = wall_ms();
        if batch.is_empty() {
            if last_progress.elapsed() > opts.idle_timeout {
                out.timed_out = true;
                return Ok(out);
            }
            continue;
        }
        last_progress = Instant::now();
        for rec in batch {
            cursor = rec.offset + 1;
            if rec.message.is_end_of_run() {
                return Ok(out);
            }
            out.records.push(ReceivedRecord::new(&rec.message, now));
        }
    }
}
