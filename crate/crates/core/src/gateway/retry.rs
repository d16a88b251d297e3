use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Outcome of a single failed attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttemptError {
    pub retryable: bool,
    pub status: Option<u16>,
    pub message: String,
}

impl AttemptError {
    pub fn transient(status: Option<u16>, message: impl Into<String>) -> Self {
        AttemptError { retryable: true, status, message: message.into() }
    }

    pub fn fatal(status: Option<u16>, message: impl Into<String>) -> Self {
        AttemptError { retryable: false, status, message: message.into() }
    }

    /// Classifies an HTTP status: 408, 429 and 5xx are transient.
    pub fn from_status(status: u16, body: impl Into<String>) -> Self {
        let retryable = status == 408 || status == 429 || (500..600).contains(&status);
        AttemptError { retryable, status: Some(status), message: body.into() }
    }
}

/// Exponential backoff: `base_delay * 2^(attempt-1)`, capped at `max_delay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
    #[serde(with = "millis")]
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts.
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy { max_attempts, base_delay: Duration::ZERO, max_delay: Duration::ZERO }
    }

    pub fn delay_for(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `op` until it succeeds, fails fatally, or attempts run out.
    /// Returns the value together with the number of attempts used.
    pub fn run<T>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, AttemptError>,
    ) -> Result<(T, u32), GatewayError> {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(value) => return Ok((value, attempt)),
                Err(e) if !e.retryable => {
                    return Err(match e.status {
                        Some(status) => GatewayError::Request { status, message: e.message },
                        None => GatewayError::Protocol(e.message),
                    })
                }
                Err(e) if attempt >= max => {
                    return Err(GatewayError::Transport {
                        status: e.status,
                        message: format!("{} (after {attempt} attempts)", e.message),
                    })
                }
                Err(e) => {
                    log::debug!("attempt {attempt} failed ({:?}): {}", e.status, e.message);
                    let delay = self.delay_for(attempt);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    attempt += 1;
                }
            }
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(500),
        };
        assert_eq!(p.delay_for(1), Duration::from_millis(100));
        assert_eq!(p.delay_for(2), Duration::from_millis(200));
        assert_eq!(p.delay_for(3), Duration::from_millis(400));
        assert_eq!(p.delay_for(4), Duration::from_millis(500));
        assert_eq!(p.delay_for(40), Duration::from_millis(500));
    }

    #[test]
    fn transient_then_success_counts_attempts() {
        let p = RetryPolicy::immediate(5);
        let (v, attempts) = p
            .run(|n| if n < 3 { Err(AttemptError::from_status(429, "slow down")) } else { Ok(7) })
            .unwrap();
        assert_eq!((v, attempts), (7, 3));
    }

    #[test]
    fn fatal_stops_immediately() {
        let p = RetryPolicy::immediate(5);
        let mut calls = 0;
        let err = p
            .run::<()>(|_| {
                calls += 1;
                Err(AttemptError::from_status(401, "bad key"))
            })
            .unwrap_err();
        assert_eq!(calls, 1);
        assert!(matches!(err, GatewayError::Request { status: 401, .. }));
    }

    #[test]
    fn exhaustion_reports_last_status() {
        let p = RetryPolicy::immediate(3);
        let mut calls = 0;
        let err = p
            .run::<()>(|_| {
                calls += 1;
                Err(AttemptError::from_status(503, "down"))
            })
            .unwrap_err();
        assert_eq!(calls, 3);
        assert!(matches!(err, GatewayError::Transport { status: Some(503), .. }));
    }

    #[test]
    fn status_classification() {
        assert!(AttemptError::from_status(500, "").retryable);
        assert!(AttemptError::from_status(429, "").retryable);
        assert!(AttemptError::from_status(408, "").retryable);
        assert!(!AttemptError::from_status(400, "").retryable);
        assert!(!AttemptError::from_status(404, "").retryable);
    }
}
