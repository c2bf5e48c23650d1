use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Exponential backoff for transient transport failures.
///
/// The first attempt is followed by up to `max_retries` retries, waiting
/// `base_delay_ms * 2^n` before retry `n` (1s, 2s, 4s by default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 1000,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            base_delay_ms: 0,
        }
    }

    pub fn delay_before_retry(&self, retry: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1u64 << retry.min(20)))
    }
}

/// Outcome of one attempt.
pub enum Attempt<T, E> {
    Done(T),
    /// Transport-level or 5xx failure; worth retrying.
    Transient(E),
    /// Logic or client failure; returned immediately.
    Fatal(E),
}

/// Run `op` until it succeeds, fails fatally, or retries are exhausted.
/// Returns the last transient error together with the attempt count.
pub fn with_retries<T, E>(
    policy: &RetryPolicy,
    mut op: impl FnMut(u32) -> Attempt<T, E>,
) -> Result<T, (E, u32)> {
    let mut attempt = 0u32;
    loop {
        match op(attempt) {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fatal(e) => return Err((e, attempt + 1)),
            Attempt::Transient(e) => {
                if attempt >= policy.max_retries {
                    return Err((e, attempt + 1));
                }
                let delay = policy.delay_before_retry(attempt);
                log::debug!(
                    "transient failure on attempt {}; retrying in {delay:?}",
                    attempt + 1
                );
                if !delay.is_zero() {
                    thread::sleep(delay);
                }
                attempt += 1;
            }
        }
    }
}
