//! Wall-clock helpers.

use std::thread;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// Milliseconds since the Unix epoch.
pub fn wall_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Sleep until `deadline`; returns how late we woke, zero if on time.
pub fn sleep_until(deadline: Instant) -> std::time::Duration {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
    Instant::now().saturating_duration_since(deadline)
}
