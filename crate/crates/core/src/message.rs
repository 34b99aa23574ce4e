//! The benchmark message envelope and its binary frame.
//!
//! Frame layout, all integers big-endian:
//!
//! ```text
//! magic        2  0xC1 0x75
//! version      1  = 1
//! producer_id  4
//! sequence     8
//! origin_ms    8
//! topic_len    1  + topic bytes (UTF-8)
//! payload_len  3  + payload bytes
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MAGIC: [u8; 2] = [0xC1, 0x75];
pub const VERSION: u8 = 1;

/// Bytes in a frame that do not belong to the topic or payload.
pub const FRAME_OVERHEAD: usize = 2 + 1 + 4 + 8 + 8 + 1 + 3;

pub const MAX_TOPIC_LEN: usize = u8::MAX as usize;
pub const MAX_PAYLOAD_LEN: usize = (1 << 24) - 1;

pub const DEFAULT_PAYLOAD_LEN: usize = 1280;

/// Producer id reserved for the runner's end-of-run marker.
pub const END_OF_RUN_PRODUCER: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CitsMessage {
    pub producer_id: u32,
    pub sequence: u64,
    /// Sender wall clock at publish, milliseconds since the Unix epoch.
    pub origin_time_ms: u64,
    pub payload: Vec<u8>,
    pub topic: String,
}

/// Identity of a logical message, used to join receive logs to send logs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MessageKey {
    pub producer_id: u32,
    pub origin_time_ms: u64,
    pub sequence: u64,
}

impl CitsMessage {
    pub fn key(&self) -> MessageKey {
        message_key(self)
    }

    /// The control message the runner appends after all producers finish.
    pub fn end_of_run(topic: impl Into<String>) -> Self {
        CitsMessage {
            producer_id: END_OF_RUN_PRODUCER,
            sequence: u64::MAX,
            origin_time_ms: 0,
            payload: Vec::new(),
            topic: topic.into(),
        }
    }

    pub fn is_end_of_run(&self) -> bool {
        self.producer_id == END_OF_RUN_PRODUCER
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + self.topic.len() + self.payload.len()
    }
}

pub fn message_key(msg: &CitsMessage) -> MessageKey {
    MessageKey {
        producer_id: msg.producer_id,
        origin_time_ms: msg.origin_time_ms,
        sequence: msg.sequence,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("topic is {len} bytes, limit is {MAX_TOPIC_LEN}")]
    TopicTooLong { len: usize },
    #[error("payload is {len} bytes, limit is {MAX_PAYLOAD_LEN}")]
    PayloadTooLong { len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("frame truncated in {field}: need {needed} bytes, have {available}")]
    Truncated {
        field: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("bad magic {found:02x?}")]
    BadMagic { found: [u8; 2] },
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("declared frame length {declared} but {actual} bytes supplied")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("topic is not valid UTF-8")]
    InvalidTopic,
}

pub fn encode_message(msg: &CitsMessage) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(msg.encoded_len());
    encode_into(msg, &mut out)?;
    Ok(out)
}

/// Appends the frame for `msg` to `out`. On error `out` is left untouched.
pub fn encode_into(msg: &CitsMessage, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    if msg.topic.len() > MAX_TOPIC_LEN {
        return Err(EncodeError::TopicTooLong {
            len: msg.topic.len(),
        });
    }
    if msg.payload.len() > MAX_PAYLOAD_LEN {
        return Err(EncodeError::PayloadTooLong {
            len: msg.payload.len(),
        });
    }
    out.reserve(msg.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&msg.producer_id.to_be_bytes());
    out.extend_from_slice(&msg.sequence.to_be_bytes());
    out.extend_from_slice(&msg.origin_time_ms.to_be_bytes());
    out.push(msg.topic.len() as u8);
    out.extend_from_slice(msg.topic.as_bytes());
    let plen = msg.payload.len() as u32;
    out.extend_from_slice(&plen.to_be_bytes()[1..]);
    out.extend_from_slice(&msg.payload);
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], DecodeError> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(DecodeError::Truncated {
                field,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N], DecodeError> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N, field)?);
        Ok(a)
    }
}

pub fn decode_message(frame: &[u8]) -> Result<CitsMessage, DecodeError> {
    let mut r = Reader { buf: frame, pos: 0 };
    let magic = r.array::<2>("magic")?;
    if magic != MAGIC {
        return Err(DecodeError::BadMagic { found: magic });
    }
    let version = r.array::<1>("version")?[0];
    if version != VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    let producer_id = u32::from_be_bytes(r.array("producer_id")?);
    let sequence = u64::from_be_bytes(r.array("sequence")?);
    let origin_time_ms = u64::from_be_bytes(r.array("origin_time_ms")?);
    let topic_len = r.array::<1>("topic_len")?[0] as usize;
    let topic = r.take(topic_len, "topic")?;
    let topic = core::str::from_utf8(topic).map_err(|_| DecodeError::InvalidTopic)?;
    let [a, b, c] = r.array::<3>("payload_len")?;
    let payload_len = u32::from_be_bytes([0, a, b, c]) as usize;
    let payload = r.take(payload_len, "payload")?;
    if r.pos != frame.len() {
        return Err(DecodeError::LengthMismatch {
            declared: r.pos,
            actual: frame.len(),
        });
    }
    Ok(CitsMessage {
        producer_id,
        sequence,
        origin_time_ms,
        payload: payload.to_vec(),
        topic: String::from(topic),
    })
}

/// Deterministic pseudorandom payload bytes.
pub fn generate_payload(seed: u64, size: usize) -> Vec<u8> {
    let mut bytes = alloc::vec![0u8; size];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut bytes);
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn sample(payload: Vec<u8>) -> CitsMessage {
        CitsMessage {
            producer_id: 7,
            sequence: 3,
            origin_time_ms: 1000,
            payload,
            topic: "mec1/cits".to_string(),
        }
    }

    #[test]
    fn empty_payload_frame() {
        let m = sample(Vec::new());
        let frame = encode_message(&m).unwrap();
        assert_eq!(frame.len(), FRAME_OVERHEAD + 9);
        assert_eq!(decode_message(&frame).unwrap(), m);
    }

    #[test]
    fn full_payload_frame_length() {
        // 2 + 1 + 4 + 8 + 8 + 1 + 3 = 27 bytes of fixed fields
        assert_eq!(FRAME_OVERHEAD, 27);
        let m = sample(generate_payload(1, DEFAULT_PAYLOAD_LEN));
        let frame = encode_message(&m).unwrap();
        assert_eq!(frame.len(), 27 + 9 + 1280);
    }

    #[test]
    fn layout_is_big_endian() {
        let frame = encode_message(&sample(alloc::vec![0xAB])).unwrap();
        assert_eq!(&frame[..3], &[0xC1, 0x75, 1]);
        assert_eq!(&frame[3..7], &[0, 0, 0, 7]);
        assert_eq!(&frame[7..15], &3u64.to_be_bytes());
        assert_eq!(&frame[15..23], &1000u64.to_be_bytes());
        assert_eq!(frame[23], 9);
        assert_eq!(&frame[33..36], &[0, 0, 1]);
        assert_eq!(frame[36], 0xAB);
    }

    #[test]
    fn encoding_is_deterministic() {
        let m = sample(generate_payload(9, 100));
        assert_eq!(encode_message(&m).unwrap(), encode_message(&m).unwrap());
    }

    #[test]
    fn oversize_fields_are_named() {
        let mut m = sample(Vec::new());
        m.topic = "x".repeat(256);
        assert_eq!(
            encode_message(&m),
            Err(EncodeError::TopicTooLong { len: 256 })
        );
        let m = CitsMessage {
            payload: alloc::vec![0; MAX_PAYLOAD_LEN + 1],
            ..sample(Vec::new())
        };
        assert!(matches!(
            encode_message(&m),
            Err(EncodeError::PayloadTooLong { .. })
        ));
    }

    #[test]
    fn corrupted_magic() {
        let mut frame = encode_message(&sample(alloc::vec![1, 2, 3])).unwrap();
        frame[0] ^= 0xFF;
        assert!(matches!(
            decode_message(&frame),
            Err(DecodeError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_mid_payload() {
        let frame = encode_message(&sample(generate_payload(2, 1280))).unwrap();
        let err = decode_message(&frame[..frame.len() - 100]).unwrap_err();
        assert!(matches!(
            err,
            DecodeError::Truncated {
                field: "payload",
                needed: 1280,
                available: 1180
            }
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut frame = encode_message(&sample(Vec::new())).unwrap();
        frame.push(0);
        assert!(matches!(
            decode_message(&frame),
            Err(DecodeError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn key_projection() {
        let k = sample(Vec::new()).key();
        assert_eq!(
            k,
            MessageKey {
                producer_id: 7,
                origin_time_ms: 1000,
                sequence: 3
            }
        );
        let mut same_ms = sample(Vec::new());
        same_ms.sequence = 4;
        assert_ne!(same_ms.key(), k);
    }

    #[test]
    fn payload_generation() {
        assert!(generate_payload(42, 0).is_empty());
        let a = generate_payload(42, 1280);
        assert_eq!(a.len(), 1280);
        assert_eq!(a, generate_payload(42, 1280));
        assert_ne!(a, generate_payload(43, 1280));
    }

    fn arb_message() -> impl Strategy<Value = CitsMessage> {
        (
            any::<u32>(),
            any::<u64>(),
            any::<u64>(),
            proptest::collection::vec(any::<u8>(), 0..2048),
            "[a-z0-9/._-]{0,64}|\\PC{0,20}",
        )
            .prop_filter("topic fits", |t| t.4.len() <= MAX_TOPIC_LEN)
            .prop_map(|(producer_id, sequence, origin_time_ms, payload, topic)| {
                CitsMessage {
                    producer_id,
                    sequence,
                    origin_time_ms,
                    payload,
                    topic,
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn decode_inverts_encode(m in arb_message()) {
            let frame = encode_message(&m).unwrap();
            prop_assert_eq!(frame.len(), FRAME_OVERHEAD + m.topic.len() + m.payload.len());
            prop_assert_eq!(decode_message(&frame).unwrap(), m);
        }

        #[test]
        fn any_strict_prefix_fails(m in arb_message(), cut in any::<proptest::sample::Index>()) {
            let frame = encode_message(&m).unwrap();
            let cut = cut.index(frame.len());
            prop_assert!(decode_message(&frame[..cut]).is_err());
        }
    }
}
