//! Cloud log server (append/fetch plus the MEC registry) and its client.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use edgebench_core::cloud::{CloudLog, ConsumerRoute, LogError, Record, Registry, RegistryEntry};
use edgebench_core::message::{decode_message, encode_message, CitsMessage};

use crate::server::Listener;
use crate::wire::{self, cmd, frame_bytes, read_frame, write_frame, BodyReader, BodyWriter, WireError};

const APPEND_OK: u8 = 0x00;
const APPEND_REJECTED: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LogStats {
    pub next_offset: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendOutcome {
    Appended(u64),
    Rejected,
}

struct Shared {
    log: RwLock<CloudLog>,
    registry: Mutex<Registry>,
    journal: Option<Mutex<BufWriter<File>>>,
}

pub struct CloudServer {
    shared: Arc<Shared>,
    listener: Listener,
}

impl CloudServer {
    pub fn bind(addr: impl ToSocketAddrs, max_records: Option<usize>) -> io::Result<CloudServer> {
        Self::bind_with_journal(addr, max_records, None)
    }

    /// With a journal, every appended message is also written to `journal`
    /// as a length-prefixed frame.
    pub fn bind_with_journal(
        addr: impl ToSocketAddrs,
        max_records: Option<usize>,
        journal: Option<&Path>,
    ) -> io::Result<CloudServer> {
        let journal = match journal {
            Some(p) => Some(Mutex::new(BufWriter::new(File::create(p)?))),
            None => None,
        };
        let shared = Arc::new(Shared {
            log: RwLock::new(CloudLog::new(max_records)),
            registry: Mutex::new(Registry::new(String::new())),
            journal,
        });
        let conn_shared = shared.clone();
        let listener = Listener::spawn(addr, "cloud", move |stream| {
            if let Err(e) = serve(&conn_shared, stream) {
                log::debug!("cloud connection ended: {e}");
            }
        })?;
        let server = CloudServer { shared, listener };
        server.set_log_address(&server.local_addr().to_string());
        Ok(server)
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr()
    }

    /// Address handed to consumers, e.g. a shaping proxy in front of us.
    pub fn set_log_address(&self, address: &str) {
        self.shared.registry.lock().unwrap().set_log_address(address);
    }

    /// Add a MEC and create its cloud topic.
    pub fn register(&self, entry: RegistryEntry) -> Result<(), edgebench_core::cloud::RegistryError> {
        let topic = entry.cloud_topic.clone();
        self.shared.registry.lock().unwrap().register(entry)?;
        self.shared.log.write().unwrap().create(&topic);
        Ok(())
    }

    pub fn log_stats(&self, topic: &str) -> LogStats {
        stats_of(&self.shared.log.read().unwrap(), topic)
    }

    pub fn shutdown(&mut self) {
        self.listener.stop();
        if let Some(j) = &self.shared.journal {
            let _ = j.lock().unwrap().flush();
        }
    }
}

impl Drop for CloudServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn stats_of(log: &CloudLog, topic: &str) -> LogStats {
    log.partition(topic)
        .map(|p| LogStats {
            next_offset: p.next_offset(),
            rejected: p.rejected(),
        })
        .unwrap_or_default()
}

fn handle(shared: &Shared, command: u8, body: &[u8]) -> Result<Vec<u8>, WireError> {
    let mut r = BodyReader::new(body);
    match command {
        cmd::APPEND => {
            let topic = r.short_str("topic")?;
            let raw = r.rest();
            let msg = decode_message(raw)?;
            let result = shared.log.write().unwrap().append(&topic, msg);
            match result {
                Ok(offset) => {
                    if let Some(j) = &shared.journal {
                        let mut j = j.lock().unwrap();
                        j.write_all(&(raw.len() as u32).to_be_bytes())?;
                        j.write_all(raw)?;
                    }
                    Ok(BodyWriter::new().u8(APPEND_OK).u64(offset).finish())
                }
                Err(LogError::StorageFull(_)) => Ok(vec![APPEND_REJECTED]),
                Err(e) => Err(WireError::Remote(e.to_string())),
            }
        }
        cmd::FETCH => {
            let topic = r.short_str("topic")?;
            let from = r.u64("offset")?;
            let max = r.u32("max count")? as usize;
            let records = shared
                .log
                .read()
                .unwrap()
                .fetch(&topic, from, max)
                .map_err(|e| WireError::Remote(e.to_string()))?;
            let mut w = BodyWriter::new().u32(records.len() as u32);
            for rec in &records {
                let enc = encode_message(&rec.message).expect("stored messages encode");
                w = w.u64(rec.offset).u32(enc.len() as u32).bytes(&enc);
            }
            Ok(w.finish())
        }
        cmd::RESOLVE_PRODUCER => {
            let requested = match r.u8("preference flag")? {
                0 => None,
                _ => Some(r.short_str("mec id")?),
            };
            let e = shared
                .registry
                .lock()
                .unwrap()
                .resolve_producer(requested.as_deref())
                .map_err(|e| WireError::Remote(e.to_string()))?;
            Ok(BodyWriter::new()
                .str(&e.mec_id)
                .str(&e.broker_address)
                .str(&e.cloud_topic)
                .finish())
        }
        cmd::RESOLVE_CONSUMER => {
            let mec = r.short_str("mec id")?;
            let data_type = r.short_str("data type")?;
            let route = shared
                .registry
                .lock()
                .unwrap()
                .resolve_consumer(&mec, &data_type)
                .map_err(|e| WireError::Remote(e.to_string()))?;
            Ok(BodyWriter::new()
                .str(&route.cloud_topic)
                .str(&route.cloud_address)
                .finish())
        }
        cmd::REGISTER_MEC => {
            let entry = RegistryEntry {
                mec_id: r.str("mec id")?,
                broker_address: r.str("broker address")?,
                cloud_topic: r.str("cloud topic")?,
            };
            let advertised = if r.is_empty() { None } else { Some(r.str("log address")?) };
            let topic = entry.cloud_topic.clone();
            let mut reg = shared.registry.lock().unwrap();
            reg.register(entry).map_err(|e| WireError::Remote(e.to_string()))?;
            if let Some(a) = advertised.filter(|a| !a.is_empty()) {
                reg.set_log_address(a);
            }
            shared.log.write().unwrap().create(&topic);
            Ok(Vec::new())
        }
        cmd::LOG_STATS => {
            let topic = r.short_str("topic")?;
            let s = stats_of(&shared.log.read().unwrap(), &topic);
            Ok(BodyWriter::new().u64(s.next_offset).u64(s.rejected).finish())
        }
        other => Err(WireError::Remote(format!("unknown command {other:#04x}"))),
    }
}

fn serve(shared: &Shared, stream: TcpStream) -> Result<(), WireError> {
    let mut reader = io::BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    while let Some(frame) = read_frame(&mut reader)? {
        match handle(shared, frame.command, &frame.body) {
            Ok(body) => writer.write_all(&frame_bytes(frame.command, &body))?,
            Err(WireError::Io(e)) => return Err(e.into()),
            Err(WireError::Remote(msg)) => write_frame(&mut writer, cmd::ERROR, msg.as_bytes())?,
            Err(e) => write_frame(&mut writer, cmd::ERROR, e.to_string().as_bytes())?,
        }
    }
    Ok(())
}

pub struct CloudClient {
    stream: TcpStream,
}

impl CloudClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<CloudClient> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(CloudClient { stream })
    }

    pub fn set_timeout(&self, timeout: Option<std::time::Duration>) -> io::Result<()> {
        self.stream.set_read_timeout(timeout)
    }

    pub fn append(&mut self, topic: &str, msg: &CitsMessage) -> Result<AppendOutcome, WireError> {
        let enc = encode_message(msg).map_err(|_| WireError::Malformed("oversize message"))?;
        let body = BodyWriter::new().short_str(topic).bytes(&enc).finish();
        let reply = wire::call(&mut self.stream, cmd::APPEND, &body)?;
        let mut r = BodyReader::new(&reply);
        match r.u8("append status")? {
            APPEND_OK => Ok(AppendOutcome::Appended(r.u64("offset")?)),
            APPEND_REJECTED => Ok(AppendOutcome::Rejected),
            _ => Err(WireError::Malformed("append status")),
        }
    }

    pub fn fetch(&mut self, topic: &str, from: u64, max: u32) -> Result<Vec<Record>, WireError> {
        let body = BodyWriter::new().short_str(topic).u64(from).u32(max).finish();
        let reply = wire::call(&mut self.stream, cmd::FETCH, &body)?;
        let mut r = BodyReader::new(&reply);
        let n = r.u32("record count")?;
        let mut out = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let offset = r.u64("offset")?;
            let len = r.u32("record length")? as usize;
            let message = decode_message(r.bytes(len, "record")?)?;
            out.push(Record { offset, message });
        }
        Ok(out)
    }

    pub fn resolve_producer(&mut self, requested: Option<&str>) -> Result<RegistryEntry, WireError> {
        let body = match requested {
            None => BodyWriter::new().u8(0),
            Some(m) => BodyWriter::new().u8(1).short_str(m),
        }
        .finish();
        let reply = wire::call(&mut self.stream, cmd::RESOLVE_PRODUCER, &body)?;
        let mut r = BodyReader::new(&reply);
        Ok(RegistryEntry {
            mec_id: r.str("mec id")?,
            broker_address: r.str("broker address")?,
            cloud_topic: r.str("cloud topic")?,
        })
    }

    pub fn resolve_consumer(&mut self, mec_id: &str, data_type: &str) -> Result<ConsumerRoute, WireError> {
        let body = BodyWriter::new().short_str(mec_id).short_str(data_type).finish();
        let reply = wire::call(&mut self.stream, cmd::RESOLVE_CONSUMER, &body)?;
        let mut r = BodyReader::new(&reply);
        Ok(ConsumerRoute {
            cloud_topic: r.str("cloud topic")?,
            cloud_address: r.str("cloud address")?,
        })
    }

    /// Register a MEC; `log_address`, if given, becomes the address handed
    /// to consumers.
    pub fn register_mec(&mut self, entry: &RegistryEntry, log_address: Option<&str>) -> Result<(), WireError> {
        let mut w = BodyWriter::new()
            .str(&entry.mec_id)
            .str(&entry.broker_address)
            .str(&entry.cloud_topic);
        if let Some(a) = log_address {
            w = w.str(a);
        }
        wire::call(&mut self.stream, cmd::REGISTER_MEC, &w.finish()).map(drop)
    }

    pub fn log_stats(&mut self, topic: &str) -> Result<LogStats, WireError> {
        let reply = wire::call(&mut self.stream, cmd::LOG_STATS, &BodyWriter::new().short_str(topic).finish())?;
        let mut r = BodyReader::new(&reply);
        Ok(LogStats {
            next_offset: r.u64("next offset")?,
            rejected: r.u64("rejected")?,
        })
    }
}
