//! Emulated TrueTime.
//!
//! The clock is a pure function of the simulator's instant and a global,
//! constant error bound. The waiting primitives do not block; they compute the
//! simulated instant at which the wait releases so the caller can arm a timer.

use serde::{Deserialize, Serialize};

use crate::timestamp::{Micros, Timestamp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueTimeConfig {
    pub epsilon_us: Micros,
}

impl Default for TrueTimeConfig {
    fn default() -> Self {
        TrueTimeConfig { epsilon_us: 10_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrueTimeInterval {
    pub earliest: Timestamp,
    pub latest: Timestamp,
}

impl TrueTimeInterval {
    pub fn contains(&self, micros: Micros) -> bool {
        self.earliest.micros <= micros && micros <= self.latest.micros
    }
}

/// `[sim_time - epsilon, sim_time + epsilon]`, with the lower end clamped at the epoch.
pub fn tt_now(clock: TrueTimeConfig, sim_time: Micros) -> TrueTimeInterval {
    TrueTimeInterval {
        earliest: Timestamp::from_micros(sim_time.saturating_sub(clock.epsilon_us)),
        latest: Timestamp::from_micros(sim_time.saturating_add(clock.epsilon_us)),
    }
}

/// First simulated instant at or after `now` whose `earliest` is strictly greater than `t`.
pub fn wait_until_earliest_after(clock: TrueTimeConfig, t: Timestamp, now: Micros) -> Micros {
    if tt_now(clock, now).earliest > t {
        return now;
    }
    // earliest = (m, 0, 0) is only greater than t once m > t.micros.
    let release = t.micros + 1 + clock.epsilon_us;
    release.max(now)
}

/// Commit wait: the instant at which `t_c` is guaranteed to be in the past.
pub fn commit_wait(clock: TrueTimeConfig, t_c: Timestamp, now: Micros) -> Micros {
    wait_until_earliest_after(clock, t_c, now)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS10: TrueTimeConfig = TrueTimeConfig { epsilon_us: 10_000 };

    #[test]
    fn interval_examples() {
        let i = tt_now(EPS10, 100_000);
        assert_eq!(i.earliest, Timestamp::from_micros(90_000));
        assert_eq!(i.latest, Timestamp::from_micros(110_000));

        let i = tt_now(TrueTimeConfig { epsilon_us: 0 }, 100_000);
        assert_eq!(i.earliest, i.latest);
        assert_eq!(i.earliest.micros, 100_000);

        let i = tt_now(TrueTimeConfig { epsilon_us: 5_000 }, 0);
        assert_eq!(i.earliest.micros, 0);
        assert_eq!(i.latest.micros, 5_000);
    }

    #[test]
    fn commit_wait_examples() {
        // earliest = now - 10ms must exceed 100ms, first true at 110.001ms
        assert_eq!(commit_wait(EPS10, Timestamp::from_micros(100_000), 95_000), 110_001);
        assert_eq!(commit_wait(EPS10, Timestamp::from_micros(100_000), 200_000), 200_000);
        assert_eq!(commit_wait(EPS10, Timestamp::ZERO, 10_001), 10_001);
    }

    #[test]
    fn earliest_after_examples() {
        assert_eq!(
            wait_until_earliest_after(EPS10, Timestamp::from_micros(150_000), 100_000),
            160_001
        );
        assert_eq!(
            wait_until_earliest_after(EPS10, Timestamp::from_micros(1), 100_000),
            100_000
        );
        // t == now: released epsilon later plus one tick
        assert_eq!(
            wait_until_earliest_after(EPS10, Timestamp::from_micros(100_000), 100_000),
            110_001
        );
    }

    #[test]
    fn logical_part_does_not_shorten_the_wait() {
        let t = Timestamp { micros: 50, logical: 3, node: 1 };
        let release = wait_until_earliest_after(TrueTimeConfig { epsilon_us: 0 }, t, 0);
        assert_eq!(release, 51);
    }

    proptest! {
        #[test]
        fn true_time_contains_now(now in 0u64..10_000_000, eps in 0u64..100_000) {
            let clock = TrueTimeConfig { epsilon_us: eps };
            prop_assert!(tt_now(clock, now).contains(now));
        }

        #[test]
        fn intervals_are_monotone(a in 0u64..10_000_000, d in 0u64..1_000_000, eps in 0u64..100_000) {
            let clock = TrueTimeConfig { epsilon_us: eps };
            let (x, y) = (tt_now(clock, a), tt_now(clock, a + d));
            prop_assert!(x.earliest <= y.earliest && x.latest <= y.latest);
        }

        #[test]
        fn commit_wait_release_is_past_t_c(tc in 0u64..10_000_000, now in 0u64..10_000_000, eps in 0u64..100_000) {
            let clock = TrueTimeConfig { epsilon_us: eps };
            let t_c = Timestamp::from_micros(tc);
            let release = commit_wait(clock, t_c, now);
            prop_assert!(release >= now);
            prop_assert!(tt_now(clock, release).earliest > t_c);
            if release > now {
                prop_assert!(tt_now(clock, release - 1).earliest <= t_c);
            }
        }
    }
}
