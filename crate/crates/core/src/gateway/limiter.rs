use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Admits at most `capacity` requests in any window of length `window`.
///
/// Keeps the admission instants of the last `capacity` requests; a caller
/// blocks until the oldest of them leaves the window.
#[derive(Debug)]
pub struct SlidingWindowLimiter {
    capacity: usize,
    window: Duration,
    issued: Mutex<VecDeque<Instant>>,
}

impl SlidingWindowLimiter {
    pub fn new(capacity: usize, window: Duration) -> Self {
        assert!(capacity > 0, "limiter capacity must be positive");
        SlidingWindowLimiter {
            capacity,
            window,
            issued: Mutex::new(VecDeque::with_capacity(capacity)),
        }
    }

    pub fn per_minute(requests_per_minute: u32) -> Self {
        Self::new(requests_per_minute.max(1) as usize, Duration::from_secs(60))
    }

    /// Blocks until a request may be issued and records its admission.
    pub fn acquire(&self) -> Instant {
        loop {
            let wait = {
                let mut issued = self.issued.lock().expect("limiter lock poisoned");
                let now = Instant::now();
                while issued
                    .front()
                    .is_some_and(|&t| now.duration_since(t) >= self.window)
                {
                    issued.pop_front();
                }
                if issued.len() < self.capacity {
                    issued.push_back(now);
                    return now;
                }
                let oldest = *issued.front().expect("full queue");
                self.window.saturating_sub(now.duration_since(oldest))
            };
            std::thread::sleep(wait.max(Duration::from_micros(50)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn max_in_any_window(stamps: &[Instant], window: Duration) -> usize {
        let mut sorted = stamps.to_vec();
        sorted.sort();
        (0..sorted.len())
            .map(|i| {
                sorted[i..]
                    .iter()
                    .take_while(|&&t| t.duration_since(sorted[i]) < window)
                    .count()
            })
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn never_exceeds_capacity_in_window() {
        let window = Duration::from_millis(120);
        let limiter = SlidingWindowLimiter::new(3, window);
        let stamps: Vec<Instant> = (0..8).map(|_| limiter.acquire()).collect();
        assert!(max_in_any_window(&stamps, window) <= 3);
        let span = stamps.last().unwrap().duration_since(stamps[0]);
        assert!(span >= window * 2, "8 requests at 3/window need two full windows, took {span:?}");
    }

    #[test]
    fn concurrent_callers_respect_limit() {
        let window = Duration::from_millis(100);
        let limiter = Arc::new(SlidingWindowLimiter::new(4, window));
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let l = Arc::clone(&limiter);
                std::thread::spawn(move || (0..3).map(|_| l.acquire()).collect::<Vec<_>>())
            })
            .collect();
        let stamps: Vec<Instant> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        assert_eq!(stamps.len(), 12);
        assert!(max_in_any_window(&stamps, window) <= 4);
    }
}
