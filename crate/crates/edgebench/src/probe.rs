//! Calibration probes run through a shim: echo round trips and bulk
//! transfers in either direction, timed at the receiving end.

use std::io::{self, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use edgebench_core::netem::LinkProfile;
use serde::Serialize;

use crate::server::Listener;
use crate::shim::Shim;
use crate::wire::{frame_bytes, read_frame, write_frame, BodyReader, BodyWriter, WireError};

const ECHO: u8 = b'E';
const DATA: u8 = b'D';
const FINISH: u8 = b'F';
const BULK: u8 = b'B';

/// Arrival bookkeeping for a stream of data frames.
#[derive(Default)]
struct Arrivals {
    first: Option<Instant>,
    last: Option<Instant>,
    /// Wire bytes of every frame after the first.
    bytes_after_first: u64,
}

impl Arrivals {
    fn record(&mut self, wire_len: usize) {
        let now = Instant::now();
        if self.first.is_none() {
            self.first = Some(now);
        } else {
            self.bytes_after_first += wire_len as u64;
        }
        self.last = Some(now);
    }

    fn span(&self) -> Duration {
        match (self.first, self.last) {
            (Some(a), Some(b)) => b - a,
            _ => Duration::ZERO,
        }
    }
}

fn serve(mut stream: TcpStream) {
    let mut arrivals = Arrivals::default();
    loop {
        let frame = match read_frame(&mut stream) {
            Ok(Some(f)) => f,
            _ => return,
        };
        let ok = match frame.command {
            ECHO => write_frame(&mut stream, ECHO, &frame.body),
            DATA => {
                arrivals.record(frame.body.len() + 5);
                Ok(())
            }
            FINISH => {
                let body = BodyWriter::new()
                    .u64(arrivals.span().as_nanos() as u64)
                    .u64(arrivals.bytes_after_first)
                    .finish();
                arrivals = Arrivals::default();
                write_frame(&mut stream, FINISH, &body)
            }
            BULK => bulk_send(&mut stream, &frame.body),
            _ => return,
        };
        if ok.is_err() {
            return;
        }
    }
}

fn bulk_send(stream: &mut TcpStream, request: &[u8]) -> io::Result<()> {
    let mut r = BodyReader::new(request);
    let (Ok(count), Ok(size)) = (r.u32("count"), r.u32("size")) else {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad bulk request"));
    };
    let chunk = frame_bytes(DATA, &vec![0u8; size as usize]);
    for _ in 0..count {
        stream.write_all(&chunk)?;
    }
    write_frame(stream, FINISH, &[])
}

/// Echo and sink server plus a shim in front of it. Requests cross
/// `to_server`, replies cross `to_client`.
pub struct ProbeRig {
    server: Listener,
    shim: Shim,
}

impl ProbeRig {
    pub fn start(to_server: Option<LinkProfile>, to_client: Option<LinkProfile>) -> io::Result<Self> {
        let server = Listener::spawn("127.0.0.1:0", "probe", serve)?;
        let shim = Shim::spawn("127.0.0.1:0", server.local_addr(), to_server, to_client)?;
        Ok(ProbeRig { server, shim })
    }

    pub fn addr(&self) -> SocketAddr {
        self.shim.local_addr()
    }

    fn connect(&self) -> io::Result<TcpStream> {
        let s = TcpStream::connect(self.addr())?;
        s.set_nodelay(true)?;
        s.set_read_timeout(Some(Duration::from_secs(30)))?;
        Ok(s)
    }
}

impl Drop for ProbeRig {
    fn drop(&mut self) {
        self.shim.stop();
        self.server.stop();
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RttSummary {
    pub samples: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Nearest-rank percentiles; host scheduling stalls land above p95.
    pub p5_ms: f64,
    pub p95_ms: f64,
}

impl RttSummary {
    fn from_samples(ms: &[f64]) -> Self {
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = |q: f64| sorted.get(((q * n as f64).ceil() as usize).clamp(1, n.max(1)) - 1).copied();
        RttSummary {
            samples: n,
            mean_ms: sorted.iter().sum::<f64>() / n.max(1) as f64,
            min_ms: sorted.first().copied().unwrap_or(f64::NAN),
            max_ms: sorted.last().copied().unwrap_or(f64::NAN),
            p5_ms: rank(0.05).unwrap_or(f64::NAN),
            p95_ms: rank(0.95).unwrap_or(f64::NAN),
        }
    }
}

fn expect(frame: Option<crate::wire::Frame>, command: u8) -> anyhow::Result<crate::wire::Frame> {
    match frame {
        Some(f) if f.command == command => Ok(f),
        Some(f) => Err(WireError::UnexpectedReply { expected: command, got: f.command }.into()),
        None => bail!("probe connection closed"),
    }
}

/// `samples` sequential echoes of `payload` bytes, spaced by `gap`.
pub fn rtt_probe(rig: &ProbeRig, samples: usize, payload: usize, gap: Duration) -> anyhow::Result<RttSummary> {
    let mut s = rig.connect().context("connecting to the probe shim")?;
    let body = vec![0x5a; payload];
    let mut ms = Vec::with_capacity(samples);
    for _ in 0..samples {
        let t = Instant::now();
        write_frame(&mut s, ECHO, &body)?;
        expect(read_frame(&mut s)?, ECHO)?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
        std::thread::sleep(gap);
    }
    Ok(RttSummary::from_samples(&ms))
}

#[derive(Clone, Debug, Serialize)]
pub struct Throughput {
    pub bytes: u64,
    pub seconds: f64,
    pub mbps: f64,
}

impl Throughput {
    fn new(span_ns: u64, bytes: u64) -> anyhow::Result<Self> {
        if span_ns == 0 {
            bail!("transfer too short to time");
        }
        let seconds = span_ns as f64 / 1e9;
        Ok(Throughput {
            bytes,
            seconds,
            mbps: bytes as f64 * 8.0 / seconds / 1e6,
        })
    }
}

/// Push `count` frames of `size` bytes towards the server.
pub fn upload(rig: &ProbeRig, count: u32, size: u32) -> anyhow::Result<Throughput> {
    let mut s = rig.connect()?;
    let chunk = frame_bytes(DATA, &vec![0u8; size as usize]);
    for _ in 0..count {
        s.write_all(&chunk)?;
    }
    write_frame(&mut s, FINISH, &[])?;
    let reply = expect(read_frame(&mut s)?, FINISH)?;
    let mut r = BodyReader::new(&reply.body);
    Throughput::new(r.u64("span")?, r.u64("bytes")?)
}

/// Ask the server for `count` frames of `size` bytes.
pub fn download(rig: &ProbeRig, count: u32, size: u32) -> anyhow::Result<Throughput> {
    let mut s = rig.connect()?;
    write_frame(&mut s, BULK, &BodyWriter::new().u32(count).u32(size).finish())?;
    let mut arrivals = Arrivals::default();
    loop {
        let f = read_frame(&mut s)?.context("probe connection closed")?;
        match f.command {
            DATA => arrivals.record(f.body.len() + 5),
            FINISH => break,
            c => return Err(WireError::UnexpectedReply { expected: DATA, got: c }.into()),
        }
    }
    Throughput::new(arrivals.span().as_nanos() as u64, arrivals.bytes_after_first)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let ms: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        let r = RttSummary::from_samples(&ms);
        assert_eq!((r.min_ms, r.p5_ms, r.p95_ms, r.max_ms), (1.0, 5.0, 95.0, 100.0));
        assert_eq!(r.mean_ms, 50.5);
    }

    #[test]
    fn unshaped_echo_is_fast() {
        let rig = ProbeRig::start(None, None).unwrap();
        let r = rtt_probe(&rig, 5, 32, Duration::ZERO).unwrap();
        assert_eq!(r.samples, 5);
        assert!(r.p5_ms < 50.0, "{r:?}");
    }

    #[test]
    fn shaped_delay_shows_up_in_rtt() {
        let link = LinkProfile {
            base_delay_ms: 10.0,
            ..LinkProfile::IDENTITY
        };
        let rig = ProbeRig::start(Some(link), Some(link)).unwrap();
        let r = rtt_probe(&rig, 5, 32, Duration::ZERO).unwrap();
        assert!(r.min_ms >= 20.0, "{r:?}");
    }

    #[test]
    fn downloads_count_every_frame_but_the_first() {
        let link = LinkProfile {
            bandwidth_mbps: Some(100.0),
            ..LinkProfile::IDENTITY
        };
        let rig = ProbeRig::start(None, Some(link)).unwrap();
        let t = download(&rig, 4, 1000).unwrap();
        assert_eq!(t.bytes, 3 * 1005);
    }
}
