//! Time sources. Roles never read the system clock directly so the harness
//! can run them against virtual time.

use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync {
    /// Milliseconds since this clock's origin.
    fn now_ms(&self) -> f64;

    /// Wall-clock seconds since the Unix epoch; used for key expiry and announcements.
    fn unix_secs(&self) -> u64;

    /// Lets `ms` of network time pass. Virtual clocks jump, the system clock sleeps.
    fn advance(&self, ms: f64);

    /// Accounts for `ms` of modeled compute. Only virtual clocks move; real
    /// compute already took real time.
    fn charge(&self, ms: f64);

    /// Moves a virtual clock to `ms`; a no-op on real clocks. Used to model
    /// sends that happen in parallel.
    fn set_ms(&self, ms: f64);

    fn is_virtual(&self) -> bool;
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1000.0
    }

    fn unix_secs(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }

    fn advance(&self, ms: f64) {
        if ms > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(ms / 1000.0));
        }
    }

    fn charge(&self, _ms: f64) {}

    fn set_ms(&self, _ms: f64) {}

    fn is_virtual(&self) -> bool {
        false
    }
}

/// Deterministic clock for simulation. Starts at `epoch_secs` Unix time.
pub struct VirtualClock {
    epoch_secs: u64,
    now: Mutex<f64>,
}

impl VirtualClock {
    pub fn new(epoch_secs: u64) -> Self {
        VirtualClock { epoch_secs, now: Mutex::new(0.0) }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, f64> {
        self.now.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> f64 {
        *self.lock()
    }

    fn unix_secs(&self) -> u64 {
        self.epoch_secs + (*self.lock() / 1000.0) as u64
    }

    fn advance(&self, ms: f64) {
        *self.lock() += ms.max(0.0);
    }

    fn charge(&self, ms: f64) {
        *self.lock() += ms.max(0.0);
    }

    fn set_ms(&self, ms: f64) {
        *self.lock() = ms;
    }

    fn is_virtual(&self) -> bool {
        true
    }
}
