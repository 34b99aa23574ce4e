//! Length-prefixed framing shared by the edge broker, the cloud log and the
//! netem shim.
//!
//! Every frame is a 4-byte big-endian length, then that many bytes: one
//! command byte followed by the command body. Replies use the same framing
//! and echo the request's command byte; a failed request is answered with
//! [`cmd::ERROR`] and a UTF-8 message.

use std::io::{self, Read, Write};

use edgebench_core::message::DecodeError;

pub mod cmd {
    pub const PUBLISH: u8 = 0x01;
    pub const SUBSCRIBE: u8 = 0x02;
    pub const DELIVER: u8 = 0x03;
    pub const STATS: u8 = 0x04;
    /// Stage pushes its counters and pseudonym table to the edge broker.
    pub const REPORT_STAGE: u8 = 0x05;
    /// Pushed to a subscriber when the broker shuts down.
    pub const SHUTDOWN: u8 = 0x06;

    pub const APPEND: u8 = 0x10;
    pub const FETCH: u8 = 0x11;
    pub const RESOLVE_PRODUCER: u8 = 0x12;
    pub const RESOLVE_CONSUMER: u8 = 0x13;
    pub const REGISTER_MEC: u8 = 0x14;
    pub const LOG_STATS: u8 = 0x15;

    pub const ERROR: u8 = 0xFF;
}

pub const PUBLISH_ACCEPTED: u8 = 0x00;
pub const PUBLISH_REJECTED: u8 = 0x01;

pub const DEFAULT_EDGE_PORT: u16 = 5680;
pub const DEFAULT_CLOUD_PORT: u16 = 5690;

/// Largest frame either side will accept.
pub const MAX_FRAME_LEN: usize = 64 << 20;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("empty frame")]
    Empty,
    #[error("malformed {0}")]
    Malformed(&'static str),
    #[error("bad message: {0}")]
    Decode(#[from] DecodeError),
    #[error("remote error: {0}")]
    Remote(String),
    #[error("expected reply to command {expected:#04x}, got {got:#04x}")]
    UnexpectedReply { expected: u8, got: u8 },
    #[error("connection closed")]
    Closed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub command: u8,
    pub body: Vec<u8>,
}

pub fn frame_bytes(command: u8, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + body.len());
    out.extend_from_slice(&(body.len() as u32 + 1).to_be_bytes());
    out.push(command);
    out.extend_from_slice(body);
    out
}

/// Writes the whole frame with a single `write_all` so frames from one
/// writer never interleave on the wire.
pub fn write_frame<W: Write + ?Sized>(w: &mut W, command: u8, body: &[u8]) -> io::Result<()> {
    w.write_all(&frame_bytes(command, body))
}

/// Next complete frame including its length prefix, or `None` on a clean
/// end of stream between frames.
pub fn read_raw_frame<R: Read + ?Sized>(r: &mut R) -> Result<Option<Vec<u8>>, WireError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let n = u32::from_be_bytes(len) as usize;
    if n == 0 {
        return Err(WireError::Empty);
    }
    if n > MAX_FRAME_LEN {
        return Err(WireError::TooLarge(n));
    }
    let mut frame = vec![0u8; 4 + n];
    frame[..4].copy_from_slice(&len);
    r.read_exact(&mut frame[4..])?;
    Ok(Some(frame))
}

pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> Result<Option<Frame>, WireError> {
    Ok(read_raw_frame(r)?.map(|mut raw| {
        let command = raw[4];
        raw.drain(..5);
        Frame { command, body: raw }
    }))
}

/// Send a request and wait for its reply, turning error replies into
/// [`WireError::Remote`].
pub fn call<S: Read + Write + ?Sized>(
    stream: &mut S,
    command: u8,
    body: &[u8],
) -> Result<Vec<u8>, WireError> {
    write_frame(stream, command, body)?;
    let reply = read_frame(stream)?.ok_or(WireError::Closed)?;
    match reply.command {
        c if c == command => Ok(reply.body),
        cmd::ERROR => Err(WireError::Remote(String::from_utf8_lossy(&reply.body).into_owned())),
        got => Err(WireError::UnexpectedReply {
            expected: command,
            got,
        }),
    }
}

#[derive(Default, Debug, Clone)]
pub struct BodyWriter(pub Vec<u8>);

impl BodyWriter {
    pub fn new() -> Self {
        BodyWriter(Vec::new())
    }

    pub fn u8(mut self, v: u8) -> Self {
        self.0.push(v);
        self
    }

    pub fn u32(mut self, v: u32) -> Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }

    /// Topic names: one length byte. Longer names are a caller bug.
    pub fn short_str(mut self, s: &str) -> Self {
        assert!(s.len() <= u8::MAX as usize, "topic name too long");
        self.0.push(s.len() as u8);
        self.0.extend_from_slice(s.as_bytes());
        self
    }

    /// Addresses and free text: two length bytes.
    pub fn str(mut self, s: &str) -> Self {
        let s = &s.as_bytes()[..s.len().min(u16::MAX as usize)];
        self.0.extend_from_slice(&(s.len() as u16).to_be_bytes());
        self.0.extend_from_slice(s);
        self
    }

    pub fn bytes(mut self, b: &[u8]) -> Self {
        self.0.extend_from_slice(b);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.0
    }
}

pub struct BodyReader<'a> {
    buf: &'a [u8],
}

impl<'a> BodyReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        BodyReader { buf }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Malformed(what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8, WireError> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn short_str(&mut self, what: &'static str) -> Result<String, WireError> {
        let n = self.u8(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| WireError::Malformed(what))
    }

    pub fn str(&mut self, what: &'static str) -> Result<String, WireError> {
        let n = u16::from_be_bytes(self.take(2, what)?.try_into().unwrap()) as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| WireError::Malformed(what))
    }

    pub fn bytes(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WireError> {
        self.take(n, what)
    }

    pub fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frame_layout() {
        let f = frame_bytes(cmd::STATS, b"abc");
        assert_eq!(f, [0, 0, 0, 4, 0x04, b'a', b'b', b'c']);
        let back = read_frame(&mut Cursor::new(f)).unwrap().unwrap();
        assert_eq!(back, Frame { command: cmd::STATS, body: b"abc".to_vec() });
    }

    #[test]
    fn clean_eof_and_truncation() {
        assert!(read_frame(&mut Cursor::new(Vec::new())).unwrap().is_none());
        let mut f = frame_bytes(cmd::PUBLISH, &[1, 2, 3]);
        f.pop();
        assert!(matches!(read_frame(&mut Cursor::new(f)), Err(WireError::Io(_))));
        assert!(matches!(
            read_frame(&mut Cursor::new(vec![0, 0, 0, 0])),
            Err(WireError::Empty)
        ));
        assert!(matches!(
            read_frame(&mut Cursor::new(vec![0xFF, 0, 0, 0, 1])),
            Err(WireError::TooLarge(_))
        ));
    }

    #[test]
    fn body_helpers() {
        let body = BodyWriter::new()
            .short_str("mec-1/cits")
            .u64(7)
            .u32(9)
            .str("127.0.0.1:5680")
            .finish();
        let mut r = BodyReader::new(&body);
        assert_eq!(r.short_str("t").unwrap(), "mec-1/cits");
        assert_eq!(r.u64("a").unwrap(), 7);
        assert_eq!(r.u32("b").unwrap(), 9);
        assert_eq!(r.str("c").unwrap(), "127.0.0.1:5680");
        assert!(r.is_empty());
        assert!(matches!(r.u8("d"), Err(WireError::Malformed("d"))));
    }
}
