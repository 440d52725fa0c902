use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Token bucket refilled continuously at `rate` tokens per second.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    rate: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(capacity: f64, rate_per_sec: f64) -> Self {
        assert!(capacity >= 1.0 && rate_per_sec > 0.0);
        TokenBucket {
            capacity,
            rate: rate_per_sec,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// `rpm` requests per minute with a burst of up to a tenth of that.
    pub fn per_minute(rpm: u32) -> Self {
        let rpm = f64::from(rpm.max(1));
        TokenBucket::new((rpm / 10.0).max(1.0), rpm / 60.0)
    }

    /// Take a token at `now`, or report how long until one is available.
    pub fn try_acquire_at(&self, now: Instant) -> Result<(), Duration> {
        let mut state = self.state.lock().unwrap();
        let (tokens, last) = &mut *state;
        let elapsed = now.saturating_duration_since(*last).as_secs_f64();
        *tokens = (*tokens + elapsed * self.rate).min(self.capacity);
        *last = (*last).max(now);
        if *tokens >= 1.0 {
            *tokens -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - *tokens) / self.rate))
        }
    }

    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire_at(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
}
