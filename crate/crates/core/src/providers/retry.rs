use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;

use super::ProviderError;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderPolicy {
    pub max_attempts: usize,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Relative jitter applied to each delay, `0.2` means ±20%.
    pub jitter: f64,
}

impl Default for ProviderPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(20),
            jitter: 0.2,
        }
    }
}

impl ProviderPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        if self.base_delay.is_zero() || self.max_delay < self.base_delay {
            return Err(Error::Config("need 0 < base_delay <= max_delay".into()));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config(format!("jitter must be in [0, 1), got {}", self.jitter)));
        }
        Ok(())
    }

    /// Un-jittered delay after the `n`-th failure (0-based).
    pub fn nominal_delay(&self, n: usize) -> Duration {
        let factor = 2f64.powi(n.min(62) as i32);
        self.base_delay.mul_f64(factor).min(self.max_delay)
    }

    fn jittered_delay(&self, n: usize, rng: &mut impl Rng) -> Duration {
        let nominal = self.nominal_delay(n).as_secs_f64();
        let scale = 1.0 + self.jitter * rng.random_range(-1.0..=1.0);
        Duration::from_secs_f64((nominal * scale).min(self.max_delay.as_secs_f64()))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, delay: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, delay: Duration) {
        std::thread::sleep(delay);
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoSleep;

impl Sleeper for NoSleep {
    fn sleep(&self, _: Duration) {}
}

/// Records requested delays without waiting.
#[derive(Debug, Default)]
pub struct RecordingSleeper {
    delays: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn delays(&self) -> Vec<Duration> {
        self.delays.lock().unwrap().clone()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, delay: Duration) {
        self.delays.lock().unwrap().push(delay);
    }
}

/// Runs `attempt` until it succeeds or the policy is exhausted. Returns the
/// value and the number of attempts made.
pub fn call_with_retry<T>(
    provider: &str,
    policy: &ProviderPolicy,
    sleeper: &dyn Sleeper,
    mut attempt: impl FnMut(usize) -> Result<T, ProviderError>,
) -> Result<(T, usize), ProviderError> {
    let mut rng = rand::rng();
    let mut last = None;
    for n in 0..policy.max_attempts.max(1) {
        if n > 0 {
            sleeper.sleep(policy.jittered_delay(n - 1, &mut rng));
        }
        match attempt(n) {
            Ok(v) => return Ok((v, n + 1)),
            Err(e) => {
                log::warn!("{provider} attempt {} failed: {e}", n + 1);
                last = Some(e);
            }
        }
    }
    Err(ProviderError::Exhausted {
        provider: provider.to_string(),
        attempts: policy.max_attempts.max(1),
        last: Box::new(last.expect("at least one attempt")),
    })
}
