//! Adaptive per-host request pacing.

use core::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackoffPolicy {
    /// Multiplier applied to the last response time.
    pub factor: u32,
    pub min_delay: Duration,
    pub max_delay: Duration,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy {
            factor: 2,
            min_delay: Duration::from_millis(50),
            max_delay: Duration::from_secs(10),
        }
    }
}

/// Outcome of the previous request to a host.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LastResponse {
    pub previous_delay: Duration,
    pub response_time: Duration,
    pub status: u16,
}

fn is_overload(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl BackoffPolicy {
    /// Delay to wait before the next request. `None` means no request has
    /// been made to the host yet.
    pub fn next_fetch_delay(&self, last: Option<LastResponse>) -> Duration {
        let Some(last) = last else {
            return self.min_delay;
        };
        if is_overload(last.status) {
            return last.previous_delay.saturating_mul(2).min(self.max_delay);
        }
        last.response_time
            .saturating_mul(self.factor)
            .clamp(self.min_delay, self.max_delay)
    }
}

/// Tracks the delay schedule for one host.
#[derive(Debug, Clone, Default)]
pub struct HostPacer {
    policy: BackoffPolicy,
    last: Option<LastResponse>,
    current: Option<Duration>,
}

impl HostPacer {
    pub fn new(policy: BackoffPolicy) -> Self {
        HostPacer {
            policy,
            last: None,
            current: None,
        }
    }

    /// Delay before the next request.
    pub fn delay(&mut self) -> Duration {
        let d = self.policy.next_fetch_delay(self.last);
        self.current = Some(d);
        d
    }

    pub fn observe(&mut self, response_time: Duration, status: u16) {
        self.last = Some(LastResponse {
            previous_delay: self.current.unwrap_or(self.policy.min_delay),
            response_time,
            status,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(v: u64) -> Duration {
        Duration::from_millis(v)
    }

    #[test]
    fn base_rule_examples() {
        let p = BackoffPolicy::default();
        assert_eq!(p.next_fetch_delay(None), ms(50));
        let ok = |rt, prev| LastResponse {
            previous_delay: prev,
            response_time: rt,
            status: 200,
        };
        assert_eq!(p.next_fetch_delay(Some(ok(ms(100), ms(50)))), ms(200));
        assert_eq!(p.next_fetch_delay(Some(ok(ms(1), ms(50)))), ms(50));
        assert_eq!(p.next_fetch_delay(Some(ok(ms(60_000), ms(50)))), ms(10_000));
    }

    #[test]
    fn overload_doubles_and_caps() {
        let p = BackoffPolicy::default();
        let over = |prev, status| LastResponse {
            previous_delay: prev,
            response_time: ms(1),
            status,
        };
        assert_eq!(p.next_fetch_delay(Some(over(ms(200), 429))), ms(400));
        assert_eq!(p.next_fetch_delay(Some(over(ms(200), 503))), ms(400));
        assert_eq!(p.next_fetch_delay(Some(over(ms(8_000), 500))), ms(10_000));
        assert_eq!(p.next_fetch_delay(Some(over(ms(200), 404))), ms(50));
    }

    #[test]
    fn pacer_sequence() {
        let mut h = HostPacer::new(BackoffPolicy::default());
        assert_eq!(h.delay(), ms(50));
        h.observe(ms(100), 200);
        assert_eq!(h.delay(), ms(200));
        h.observe(ms(5), 429);
        assert_eq!(h.delay(), ms(400));
        h.observe(ms(5), 503);
        assert_eq!(h.delay(), ms(800));
        h.observe(ms(10), 200);
        assert_eq!(h.delay(), ms(50));
    }
}
