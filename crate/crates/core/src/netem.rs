//! Link emulation: propagation delay, jitter, serialization at a bandwidth cap
//! and Bernoulli frame loss, applied per frame to a FIFO link.
//!
//! Default profiles are calibrated to the measured 5G testbed: uplink and
//! downlink averages of roughly 100 and 152 Mbit/s, and a round trip that
//! averages 25 ms and stays between 15 and 34 ms. The WAN profile is not
//! measured anywhere and is a conservative placeholder.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::time::Nanos;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LinkProfile {
    pub base_delay_ms: f64,
    /// Half-width of the symmetric uniform jitter around `base_delay_ms`.
    pub jitter_ms: f64,
    /// Serialization rate; `None` is an unconstrained link.
    pub bandwidth_mbps: Option<f64>,
    pub random_loss_pct: f64,
    pub seed: u64,
}

impl Default for LinkProfile {
    fn default() -> Self {
        Self::IDENTITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ProfileError {
    #[error("{field} must be a finite non-negative number, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("loss must be within 0..=100, got {0}")]
    Loss(f64),
}

impl LinkProfile {
    /// Zero delay, no jitter, infinite bandwidth, no loss.
    pub const IDENTITY: LinkProfile = LinkProfile {
        base_delay_ms: 0.0,
        jitter_ms: 0.0,
        bandwidth_mbps: None,
        random_loss_pct: 0.0,
        seed: 0,
    };

    /// Producer to MEC over 5G. Two jittered hops of 12.5 +/- 4 ms give a
    /// 25 ms mean round trip within [17, 33] ms.
    pub const UPLINK_5G: LinkProfile = LinkProfile {
        base_delay_ms: 12.5,
        jitter_ms: 4.0,
        bandwidth_mbps: Some(100.0),
        random_loss_pct: 0.0,
        seed: 0x5a17_0001,
    };

    /// Cloud to consumer over 5G.
    pub const DOWNLINK_5G: LinkProfile = LinkProfile {
        base_delay_ms: 12.5,
        jitter_ms: 4.0,
        bandwidth_mbps: Some(152.0),
        random_loss_pct: 0.0,
        seed: 0x5a17_0003,
    };

    /// MEC to cloud. Not calibrated against any measurement.
    pub const WAN: LinkProfile = LinkProfile {
        base_delay_ms: 5.0,
        jitter_ms: 1.0,
        bandwidth_mbps: Some(1000.0),
        random_loss_pct: 0.0,
        seed: 0x5a17_0002,
    };

    pub fn validate(&self) -> Result<(), ProfileError> {
        for (field, value) in [
            ("base_delay_ms", self.base_delay_ms),
            ("jitter_ms", self.jitter_ms),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(ProfileError::Negative { field, value });
            }
        }
        if let Some(bw) = self.bandwidth_mbps {
            if !(bw > 0.0) {
                return Err(ProfileError::Bandwidth(bw));
            }
        }
        if !(0.0..=100.0).contains(&self.random_loss_pct) {
            return Err(ProfileError::Loss(self.random_loss_pct));
        }
        Ok(())
    }

    /// Time to clock `bytes` onto the link.
    pub fn serialization_time(&self, bytes: usize) -> Nanos {
        match self.bandwidth_mbps {
            None => Nanos::ZERO,
            Some(mbps) if mbps.is_infinite() => Nanos::ZERO,
            Some(mbps) => Nanos(libm::round(bytes as f64 * 8_000.0 / mbps) as u64),
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        LinkProfile { seed, ..self }
    }

    pub fn without_jitter(self) -> Self {
        LinkProfile {
            jitter_ms: 0.0,
            ..self
        }
    }
}

/// The three emulated segments of the pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LinkProfiles {
    pub uplink: LinkProfile,
    pub wan: LinkProfile,
    pub downlink: LinkProfile,
}

impl Default for LinkProfiles {
    fn default() -> Self {
        default_profiles()
    }
}

impl LinkProfiles {
    pub const IDENTITY: LinkProfiles = LinkProfiles {
        uplink: LinkProfile::IDENTITY,
        wan: LinkProfile::IDENTITY,
        downlink: LinkProfile::IDENTITY,
    };

    /// Sum of the three one-way base delays.
    pub fn one_way_delay_ms(&self) -> f64 {
        self.uplink.base_delay_ms + self.wan.base_delay_ms + self.downlink.base_delay_ms
    }

    pub fn without_jitter(self) -> Self {
        LinkProfiles {
            uplink: self.uplink.without_jitter(),
            wan: self.wan.without_jitter(),
            downlink: self.downlink.without_jitter(),
        }
    }
}

pub fn default_profiles() -> LinkProfiles {
    LinkProfiles {
        uplink: LinkProfile::UPLINK_5G,
        wan: LinkProfile::WAN,
        downlink: LinkProfile::DOWNLINK_5G,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transmission {
    Delivered(Nanos),
    Dropped,
}

impl Transmission {
    pub fn delivered(self) -> Option<Nanos> {
        match self {
            Transmission::Delivered(t) => Some(t),
            Transmission::Dropped => None,
        }
    }
}

/// Per-link state machine. Calls must be made in nondecreasing send time.
#[derive(Debug, Clone)]
pub struct LinkState {
    profile: LinkProfile,
    rng: ChaCha8Rng,
    busy_until: Nanos,
    last_delivery: Nanos,
}

impl LinkState {
    pub fn new(profile: LinkProfile) -> Self {
        LinkState {
            rng: ChaCha8Rng::seed_from_u64(profile.seed),
            profile,
            busy_until: Nanos::ZERO,
            last_delivery: Nanos::ZERO,
        }
    }

    pub fn profile(&self) -> &LinkProfile {
        &self.profile
    }

    pub fn busy_until(&self) -> Nanos {
        self.busy_until
    }

    /// When a frame of `frame_bytes` sent at `send_at` comes out the far end.
    ///
    /// The frame waits for the link to go idle, is serialized, then
    /// propagates for the base delay plus a jitter draw. Deliveries never
    /// overtake earlier ones. A lost frame still occupies the link.
    pub fn transmit(&mut self, frame_bytes: usize, send_at: Nanos) -> Transmission {
        let start = send_at.max(self.busy_until);
        let done = start + self.profile.serialization_time(frame_bytes);
        self.busy_until = done;

        let lost = self.profile.random_loss_pct > 0.0
            && self.rng.gen_bool((self.profile.random_loss_pct / 100.0).min(1.0));
        let jitter = if self.profile.jitter_ms > 0.0 {
            let half = Nanos::from_millis_f64(self.profile.jitter_ms).0 as i64;
            self.rng.gen_range(-half..=half)
        } else {
            0
        };
        if lost {
            return Transmission::Dropped;
        }
        let propagation = Nanos::from_millis_f64(self.profile.base_delay_ms).offset(jitter);
        let at = (done + propagation).max(self.last_delivery);
        self.last_delivery = at;
        Transmission::Delivered(at)
    }
}

/// Wait before a lost frame is sent again.
pub const RETRANSMIT_TIMEOUT: Nanos = Nanos::from_millis(200);
/// Transmissions attempted before a frame is given up on.
pub const MAX_TRANSMISSIONS: u32 = 16;

impl LinkState {
    /// Like [`LinkState::transmit`], but a lost frame is sent again after
    /// [`RETRANSMIT_TIMEOUT`], the way a reliable stream recovers a lost
    /// segment. `None` once [`MAX_TRANSMISSIONS`] attempts were all lost.
    pub fn transmit_reliable(&mut self, frame_bytes: usize, send_at: Nanos) -> Option<Nanos> {
        let mut at = send_at;
        for _ in 0..MAX_TRANSMISSIONS {
            if let Transmission::Delivered(t) = self.transmit(frame_bytes, at) {
                return Some(t);
            }
            at += RETRANSMIT_TIMEOUT;
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn identity_link() {
        let mut link = LinkState::new(LinkProfile::IDENTITY);
        for t in [0u64, 5, 5, 900] {
            assert_eq!(
                link.transmit(1280, Nanos(t)),
                Transmission::Delivered(Nanos(t))
            );
        }
    }

    #[test]
    fn serialization_at_100_mbps() {
        let p = LinkProfile {
            bandwidth_mbps: Some(100.0),
            ..LinkProfile::IDENTITY
        };
        // 1280 * 8 bits / 100e6 bit/s = 0.1024 ms
        assert_eq!(p.serialization_time(1280), Nanos(102_400));
        let mut link = LinkState::new(p);
        assert_eq!(
            link.transmit(1280, Nanos(0)),
            Transmission::Delivered(Nanos(102_400))
        );
    }

    #[test]
    fn symmetric_base_delay_round_trip() {
        let p = LinkProfile {
            base_delay_ms: 12.5,
            ..LinkProfile::IDENTITY
        };
        let (mut up, mut down) = (LinkState::new(p), LinkState::new(p));
        let there = up.transmit(64, Nanos::ZERO).delivered().unwrap();
        let back = down.transmit(64, there).delivered().unwrap();
        assert_eq!(back, Nanos::from_millis(25));
    }

    #[test]
    fn calibrated_defaults() {
        let d = default_profiles();
        assert_eq!(d.uplink.bandwidth_mbps, Some(100.0));
        assert_eq!(d.downlink.bandwidth_mbps, Some(152.0));
        assert_eq!(d.wan.base_delay_ms, 5.0);
        assert_eq!(d.one_way_delay_ms(), 30.0);
        for p in [d.uplink, d.wan, d.downlink] {
            p.validate().unwrap();
        }
    }

    #[test]
    fn validation() {
        let bad = LinkProfile {
            jitter_ms: -1.0,
            ..LinkProfile::IDENTITY
        };
        assert!(bad.validate().is_err());
        let bad = LinkProfile {
            bandwidth_mbps: Some(0.0),
            ..LinkProfile::IDENTITY
        };
        assert!(bad.validate().is_err());
        let bad = LinkProfile {
            random_loss_pct: 101.0,
            ..LinkProfile::IDENTITY
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fifo_under_jitter_and_same_seed_same_schedule() {
        let run = || {
            let mut link = LinkState::new(LinkProfile::UPLINK_5G);
            (0..2000u64)
                .map(|k| link.transmit(1307, Nanos(k * 100_000)).delivered().unwrap())
                .collect::<Vec<_>>()
        };
        let a = run();
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(a, run());
    }

    #[test]
    fn underloaded_link_adds_delay_plus_serialization() {
        let p = LinkProfile {
            base_delay_ms: 3.0,
            bandwidth_mbps: Some(100.0),
            ..LinkProfile::IDENTITY
        };
        let mut link = LinkState::new(p);
        for k in 0..100u64 {
            let send = Nanos::from_millis(k);
            let at = link.transmit(1000, send).delivered().unwrap();
            assert_eq!(at - send, Nanos::from_millis(3) + Nanos(80_000));
        }
    }

    #[test]
    fn overload_grows_queueing_delay() {
        // 10 Mbit/s link, a 1250-byte frame every 0.5 ms is 20 Mbit/s offered.
        let p = LinkProfile {
            bandwidth_mbps: Some(10.0),
            ..LinkProfile::IDENTITY
        };
        let mut link = LinkState::new(p);
        let delays: Vec<Nanos> = (0..200u64)
            .map(|k| {
                let send = Nanos(k * 500_000);
                link.transmit(1250, send).delivered().unwrap() - send
            })
            .collect();
        assert!(delays.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn loss_rate_is_roughly_honoured() {
        let p = LinkProfile {
            random_loss_pct: 20.0,
            seed: 11,
            ..LinkProfile::IDENTITY
        };
        let mut link = LinkState::new(p);
        let lost = (0..10_000u64)
            .filter(|k| link.transmit(100, Nanos(*k)) == Transmission::Dropped)
            .count();
        assert!((1_800..2_200).contains(&lost), "lost {lost}");
    }

    #[test]
    fn lost_frames_come_back_late() {
        let p = LinkProfile {
            random_loss_pct: 50.0,
            seed: 3,
            ..LinkProfile::IDENTITY
        };
        let mut link = LinkState::new(p);
        let mut late = 0;
        for k in 0..200u64 {
            let sent = Nanos::from_secs(k);
            let at = link.transmit_reliable(100, sent).unwrap();
            assert_eq!((at - sent).0 % RETRANSMIT_TIMEOUT.0, 0);
            late += (at > sent) as u32;
        }
        assert!((70..130).contains(&late), "{late}");
        let mut dead = LinkState::new(LinkProfile {
            random_loss_pct: 100.0,
            ..LinkProfile::IDENTITY
        });
        assert_eq!(dead.transmit_reliable(100, Nanos::ZERO), None);
    }
}
