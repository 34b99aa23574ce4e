//! Frame-aware TCP proxy that applies a link profile to each direction.
//!
//! The real TCP stack still carries every byte; the shim only holds each
//! complete frame back until the emulated link would have delivered it.
//! All connections through one shim share the link state of each
//! direction, so concurrent flows queue behind each other on the emulated
//! bandwidth.

use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use edgebench_core::netem::{LinkProfile, LinkState};
use edgebench_core::time::Nanos;

use crate::server::Listener;
use crate::wire::read_raw_frame;

/// One shaped direction, shared by every connection through the shim.
#[derive(Clone)]
pub struct SharedLink {
    state: Arc<Mutex<LinkState>>,
    epoch: Instant,
}

impl SharedLink {
    pub fn new(profile: LinkProfile, epoch: Instant) -> Self {
        SharedLink {
            state: Arc::new(Mutex::new(LinkState::new(profile))),
            epoch,
        }
    }

    /// Wall-clock instant at which a frame handed over now is delivered.
    fn schedule(&self, bytes: usize) -> Option<Instant> {
        let now = Nanos(self.epoch.elapsed().as_nanos() as u64);
        let at = self.state.lock().unwrap().transmit_reliable(bytes, now)?;
        Some(self.epoch + Duration::from_nanos(at.0))
    }
}

pub struct Shim {
    listener: Listener,
}

impl Shim {
    /// Listen on `listen` and forward every connection to `upstream`,
    /// shaping requests with `to_server` and replies with `to_client`.
    /// `None` leaves a direction untouched.
    pub fn spawn(
        listen: impl ToSocketAddrs,
        upstream: SocketAddr,
        to_server: Option<LinkProfile>,
        to_client: Option<LinkProfile>,
    ) -> io::Result<Shim> {
        let epoch = Instant::now();
        let up = to_server.map(|p| SharedLink::new(p, epoch));
        let down = to_client.map(|p| SharedLink::new(p, epoch));
        let listener = Listener::spawn(listen, "shim", move |client| {
            let server = match TcpStream::connect(upstream) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("shim: upstream {upstream} unreachable: {e}");
                    return;
                }
            };
            let _ = server.set_nodelay(true);
            let (Ok(client_w), Ok(server_r)) = (client.try_clone(), server.try_clone()) else {
                return;
            };
            let down = down.clone();
            let back = thread::Builder::new()
                .name("shim-down".into())
                .spawn(move || pump(server_r, client_w, down));
            pump(client, server, up.clone());
            if let Ok(h) = back {
                let _ = h.join();
            }
        })?;
        Ok(Shim { listener })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr()
    }

    pub fn stop(&mut self) {
        self.listener.stop();
    }
}

/// Copy frames from `from` to `to`, delaying each per `link`.
fn pump(mut from: TcpStream, mut to: TcpStream, link: Option<SharedLink>) {
    let Some(link) = link else {
        while let Ok(Some(frame)) = read_raw_frame(&mut from) {
            if to.write_all(&frame).is_err() {
                break;
            }
        }
        let _ = to.shutdown(Shutdown::Write);
        return;
    };
    let (tx, rx) = mpsc::channel::<(Instant, Vec<u8>)>();
    let writer = thread::Builder::new().name("shim-deliver".into()).spawn(move || {
        for (at, frame) in rx {
            let now = Instant::now();
            if at > now {
                thread::sleep(at - now);
            }
            if to.write_all(&frame).is_err() {
                break;
            }
        }
        let _ = to.shutdown(Shutdown::Write);
    });
    while let Ok(Some(frame)) = read_raw_frame(&mut from) {
        let Some(at) = link.schedule(frame.len()) else {
            log::warn!("shim: frame lost after every retransmission, closing");
            let _ = from.shutdown(Shutdown::Both);
            break;
        };
        if tx.send((at, frame)).is_err() {
            break;
        }
    }
    drop(tx);
    if let Ok(h) = writer {
        let _ = h.join();
    }
}
