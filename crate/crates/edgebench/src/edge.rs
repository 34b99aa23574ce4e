//! Edge broker server and client.

use std::collections::BTreeMap;
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use edgebench_core::edge::{EdgeBroker, PublishOutcome, TopicStats};
use edgebench_core::message::{decode_message, encode_message, CitsMessage};
use edgebench_core::metrics::StageCounters;

use crate::server::{peer_closed, Listener};
use crate::wire::{
    self, cmd, frame_bytes, read_frame, write_frame, BodyReader, BodyWriter, WireError,
};

/// Suffix of the pseudo-topic a stage reports its counters under.
pub const STAGE_SUFFIX: &str = ".stage";

const DELIVER_BATCH: usize = 256;
const IDLE_CHECK: Duration = Duration::from_millis(50);

pub fn stage_topic(topic: &str) -> String {
    format!("{topic}{STAGE_SUFFIX}")
}

/// What a stage leaves behind when it finishes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageReport {
    pub counters: StageCounters,
    /// Append requests sent to the cloud log, retries and control messages
    /// included.
    pub append_attempts: u64,
    /// Original producer id to pseudonym.
    pub pseudonyms: Vec<(u32, u32)>,
}

impl StageReport {
    pub fn encode(&self) -> Vec<u8> {
        let c = &self.counters;
        let mut w = BodyWriter::new()
            .u64(c.received)
            .u64(c.sampled_out)
            .u64(c.queue_dropped)
            .u64(c.append_failed)
            .u64(c.forwarded)
            .u64(c.in_flight)
            .u64(self.append_attempts)
            .u32(self.pseudonyms.len() as u32);
        for (orig, pseudo) in &self.pseudonyms {
            w = w.u32(*orig).u32(*pseudo);
        }
        w.finish()
    }

    pub fn decode(body: &[u8]) -> Result<Self, WireError> {
        let mut r = BodyReader::new(body);
        let counters = StageCounters {
            received: r.u64("stage counters")?,
            sampled_out: r.u64("stage counters")?,
            queue_dropped: r.u64("stage counters")?,
            append_failed: r.u64("stage counters")?,
            forwarded: r.u64("stage counters")?,
            in_flight: r.u64("stage counters")?,
        };
        let append_attempts = r.u64("stage counters")?;
        let n = r.u32("pseudonym count")?;
        let mut pseudonyms = Vec::with_capacity(n.min(1 << 16) as usize);
        for _ in 0..n {
            pseudonyms.push((r.u32("pseudonym")?, r.u32("pseudonym")?));
        }
        Ok(StageReport {
            counters,
            append_attempts,
            pseudonyms,
        })
    }
}

struct State {
    broker: EdgeBroker,
    stage_reports: BTreeMap<String, StageReport>,
}

struct Shared {
    state: Mutex<State>,
    changed: Condvar,
    stopping: AtomicBool,
}

pub struct EdgeServer {
    shared: Arc<Shared>,
    listener: Listener,
}

impl EdgeServer {
    pub fn bind(addr: impl ToSocketAddrs, capacity: usize) -> io::Result<EdgeServer> {
        let shared = Arc::new(Shared {
            state: Mutex::new(State {
                broker: EdgeBroker::new(capacity),
                stage_reports: BTreeMap::new(),
            }),
            changed: Condvar::new(),
            stopping: AtomicBool::new(false),
        });
        let conn_shared = shared.clone();
        let listener = Listener::spawn(addr, "edge", move |stream| {
            if let Err(e) = serve(&conn_shared, stream) {
                log::debug!("edge connection ended: {e}");
            }
        })?;
        Ok(EdgeServer { shared, listener })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr()
    }

    pub fn stats(&self, topic: &str) -> TopicStats {
        self.shared.state.lock().unwrap().broker.stats(topic)
    }

    /// Subscribers get a shutdown notice, then every connection is closed.
    pub fn shutdown(&mut self) {
        self.shared.stopping.store(true, Ordering::SeqCst);
        self.shared.changed.notify_all();
        // give subscriber loops a moment to send the notice
        std::thread::sleep(IDLE_CHECK * 2);
        self.listener.stop();
    }
}

impl Drop for EdgeServer {
    fn drop(&mut self) {
        if !self.listener.is_stopping() {
            self.shutdown();
        }
    }
}

fn reply_error(stream: &mut TcpStream, msg: &str) -> io::Result<()> {
    write_frame(stream, cmd::ERROR, msg.as_bytes())
}

fn serve(shared: &Shared, mut stream: TcpStream) -> Result<(), WireError> {
    while let Some(frame) = read_frame(&mut stream)? {
        let mut body = BodyReader::new(&frame.body);
        match frame.command {
            cmd::PUBLISH => {
                let parsed = body
                    .short_str("topic")
                    .and_then(|t| Ok((t, decode_message(body.rest())?)));
                let (topic, msg) = match parsed {
                    Ok(p) => p,
                    Err(e) => {
                        reply_error(&mut stream, &e.to_string())?;
                        continue;
                    }
                };
                let outcome = {
                    let mut st = shared.state.lock().unwrap();
                    let t = st.broker.topic_mut(&topic);
                    if msg.is_end_of_run() {
                        t.publish_control(msg);
                        PublishOutcome::Accepted
                    } else {
                        t.publish(msg)
                    }
                };
                shared.changed.notify_all();
                let code = match outcome {
                    PublishOutcome::Accepted => wire::PUBLISH_ACCEPTED,
                    PublishOutcome::Rejected => wire::PUBLISH_REJECTED,
                };
                write_frame(&mut stream, cmd::PUBLISH, &[code])?;
            }
            cmd::SUBSCRIBE => {
                let topic = match body.short_str("topic") {
                    Ok(t) => t,
                    Err(e) => {
                        reply_error(&mut stream, &e.to_string())?;
                        continue;
                    }
                };
                return deliver(shared, stream, &topic);
            }
            cmd::STATS => {
                let topic = match body.short_str("topic") {
                    Ok(t) => t,
                    Err(e) => {
                        reply_error(&mut stream, &e.to_string())?;
                        continue;
                    }
                };
                let st = shared.state.lock().unwrap();
                let reply = if topic.ends_with(STAGE_SUFFIX) {
                    st.stage_reports.get(&topic).cloned().unwrap_or_default().encode()
                } else {
                    let s = st.broker.stats(&topic);
                    BodyWriter::new().u64(s.accepted).u64(s.dropped).u64(s.depth).finish()
                };
                drop(st);
                write_frame(&mut stream, cmd::STATS, &reply)?;
            }
            cmd::REPORT_STAGE => {
                let parsed = body
                    .short_str("topic")
                    .and_then(|t| Ok((t, StageReport::decode(body.rest())?)));
                match parsed {
                    Ok((topic, report)) => {
                        shared.state.lock().unwrap().stage_reports.insert(topic, report);
                        write_frame(&mut stream, cmd::REPORT_STAGE, &[])?;
                    }
                    Err(e) => reply_error(&mut stream, &e.to_string())?,
                }
            }
            other => reply_error(&mut stream, &format!("unknown command {other:#04x}"))?,
        }
    }
    Ok(())
}

/// Push every queued and future message of `topic` to this connection.
fn deliver(shared: &Shared, stream: TcpStream, topic: &str) -> Result<(), WireError> {
    let id = shared.state.lock().unwrap().broker.subscribe(topic);
    let probe = stream.try_clone()?;
    let mut out = BufWriter::new(stream);
    let result = (|| -> Result<(), WireError> {
        write_frame(&mut out, cmd::SUBSCRIBE, &[])?;
        out.flush()?;
        loop {
            let mut batch = Vec::new();
            {
                let mut st = shared.state.lock().unwrap();
                loop {
                    let t = st.broker.topic_mut(topic);
                    while batch.len() < DELIVER_BATCH {
                        match t.take(id) {
                            Some(m) => batch.push(m),
                            None => break,
                        }
                    }
                    if !batch.is_empty() || shared.stopping.load(Ordering::SeqCst) {
                        break;
                    }
                    let (guard, timeout) = shared.changed.wait_timeout(st, IDLE_CHECK).unwrap();
                    st = guard;
                    if timeout.timed_out() && peer_closed(&probe) {
                        return Ok(());
                    }
                }
            }
            if batch.is_empty() {
                write_frame(&mut out, cmd::SHUTDOWN, &[])?;
                out.flush()?;
                return Ok(());
            }
            for m in &batch {
                let encoded = encode_message(m).expect("accepted messages encode");
                out.write_all(&frame_bytes(cmd::DELIVER, &encoded))?;
            }
            out.flush()?;
        }
    })();
    shared.state.lock().unwrap().broker.topic_mut(topic).unsubscribe(id);
    result
}

pub struct EdgeClient {
    stream: TcpStream,
}

impl EdgeClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<EdgeClient> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(EdgeClient { stream })
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> io::Result<()> {
        self.stream.set_read_timeout(timeout)
    }

    pub fn publish(&mut self, topic: &str, msg: &CitsMessage) -> Result<PublishOutcome, WireError> {
        let encoded = encode_message(msg).map_err(|_| WireError::Malformed("oversize message"))?;
        let body = BodyWriter::new().short_str(topic).bytes(&encoded).finish();
        let reply = wire::call(&mut self.stream, cmd::PUBLISH, &body)?;
        match reply.first() {
            Some(&wire::PUBLISH_ACCEPTED) => Ok(PublishOutcome::Accepted),
            Some(&wire::PUBLISH_REJECTED) => Ok(PublishOutcome::Rejected),
            _ => Err(WireError::Malformed("publish reply")),
        }
    }

    pub fn stats(&mut self, topic: &str) -> Result<TopicStats, WireError> {
        let reply = wire::call(&mut self.stream, cmd::STATS, &BodyWriter::new().short_str(topic).finish())?;
        let mut r = BodyReader::new(&reply);
        Ok(TopicStats {
            accepted: r.u64("stats")?,
            dropped: r.u64("stats")?,
            depth: r.u64("stats")?,
        })
    }

    /// Counters a stage reported for `topic`; zeroed if none arrived yet.
    pub fn stage_report(&mut self, topic: &str) -> Result<StageReport, WireError> {
        let body = BodyWriter::new().short_str(&stage_topic(topic)).finish();
        StageReport::decode(&wire::call(&mut self.stream, cmd::STATS, &body)?)
    }

    pub fn report_stage(&mut self, topic: &str, report: &StageReport) -> Result<(), WireError> {
        let body = BodyWriter::new()
            .short_str(&stage_topic(topic))
            .bytes(&report.encode())
            .finish();
        wire::call(&mut self.stream, cmd::REPORT_STAGE, &body).map(drop)
    }

    pub fn subscribe(mut self, topic: &str) -> Result<Subscription, WireError> {
        wire::call(&mut self.stream, cmd::SUBSCRIBE, &BodyWriter::new().short_str(topic).finish())?;
        Ok(Subscription {
            reader: io::BufReader::new(self.stream),
            done: false,
        })
    }
}

/// Stream of delivered messages. Ends on a shutdown notice or when the
/// broker goes away.
pub struct Subscription {
    reader: io::BufReader<TcpStream>,
    done: bool,
}

impl Subscription {
    pub fn next_message(&mut self) -> Result<Option<CitsMessage>, WireError> {
        if self.done {
            return Ok(None);
        }
        match read_frame(&mut self.reader)? {
            Some(f) if f.command == cmd::DELIVER => Ok(Some(decode_message(&f.body)?)),
            Some(f) if f.command == cmd::SHUTDOWN => {
                self.done = true;
                Ok(None)
            }
            Some(f) => Err(WireError::UnexpectedReply {
                expected: cmd::DELIVER,
                got: f.command,
            }),
            None => {
                self.done = true;
                Ok(None)
            }
        }
    }
}

impl Iterator for Subscription {
    type Item = Result<CitsMessage, WireError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_message().transpose()
    }
}
