use core::fmt;
use core::ops::{Add, AddAssign, Sub};

pub const NANOS_PER_MS: u64 = 1_000_000;
pub const NANOS_PER_SEC: u64 = 1_000_000_000;

/// A point or span on a nanosecond timeline.
///
/// Virtual-time components count from an arbitrary origin; the real-time
/// harness counts from a run-local `Instant`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Nanos(pub u64);

impl Nanos {
    pub const ZERO: Nanos = Nanos(0);

    pub const fn from_millis(ms: u64) -> Self {
        Nanos(ms * NANOS_PER_MS)
    }

    pub const fn from_secs(s: u64) -> Self {
        Nanos(s * NANOS_PER_SEC)
    }

    /// Rounds to the nearest nanosecond; negative and NaN inputs map to zero.
    pub fn from_millis_f64(ms: f64) -> Self {
        if !(ms > 0.0) {
            return Nanos::ZERO;
        }
        Nanos(libm::round(ms * NANOS_PER_MS as f64) as u64)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        Self::from_millis_f64(s * 1_000.0)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    /// Whole milliseconds, truncated.
    pub const fn as_millis(self) -> u64 {
        self.0 / NANOS_PER_MS
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_MS as f64
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    pub const fn saturating_sub(self, rhs: Nanos) -> Nanos {
        Nanos(self.0.saturating_sub(rhs.0))
    }

    /// Shift by a signed nanosecond offset, clamping at zero.
    pub const fn offset(self, delta: i64) -> Nanos {
        if delta >= 0 {
            Nanos(self.0.saturating_add(delta as u64))
        } else {
            Nanos(self.0.saturating_sub(delta.unsigned_abs()))
        }
    }
}

impl Add for Nanos {
    type Output = Nanos;

    fn add(self, rhs: Nanos) -> Nanos {
        Nanos(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for Nanos {
    fn add_assign(&mut self, rhs: Nanos) {
        *self = *self + rhs;
    }
}

impl Sub for Nanos {
    type Output = Nanos;

    fn sub(self, rhs: Nanos) -> Nanos {
        self.saturating_sub(rhs)
    }
}

impl fmt::Display for Nanos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}ms", self.as_millis_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn millis_round_trip() {
        assert_eq!(Nanos::from_millis_f64(0.1024), Nanos(102_400));
        assert_eq!(Nanos::from_millis(25).as_millis(), 25);
        assert_eq!(Nanos::from_millis_f64(-3.0), Nanos::ZERO);
        assert_eq!(Nanos::from_millis_f64(f64::NAN), Nanos::ZERO);
    }

    #[test]
    fn signed_offset_clamps() {
        assert_eq!(Nanos(10).offset(-20), Nanos::ZERO);
        assert_eq!(Nanos(10).offset(5), Nanos(15));
    }
}
