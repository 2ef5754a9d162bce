//! Retwis-style transaction mix over Zipfian keys, and the client session models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::kv::Key;
use crate::timestamp::Micros;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxnKind {
    AddUser,
    Follow,
    PostTweet,
    LoadTimeline,
}

impl TxnKind {
    pub const ALL: [TxnKind; 4] = [TxnKind::AddUser, TxnKind::Follow, TxnKind::PostTweet, TxnKind::LoadTimeline];

    pub fn is_read_only(self) -> bool {
        self == TxnKind::LoadTimeline
    }

    pub fn name(self) -> &'static str {
        match self {
            TxnKind::AddUser => "add-user",
            TxnKind::Follow => "follow",
            TxnKind::PostTweet => "post-tweet",
            TxnKind::LoadTimeline => "load-timeline",
        }
    }
}

/// Transaction type probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub add_user: f64,
    pub follow: f64,
    pub post_tweet: f64,
    pub load_timeline: f64,
}

impl Default for Mix {
    fn default() -> Self {
        Mix {
            add_user: 0.05,
            follow: 0.15,
            post_tweet: 0.30,
            load_timeline: 0.50,
        }
    }
}

impl Mix {
    pub fn weight(&self, kind: TxnKind) -> f64 {
        match kind {
            TxnKind::AddUser => self.add_user,
            TxnKind::Follow => self.follow,
            TxnKind::PostTweet => self.post_tweet,
            TxnKind::LoadTimeline => self.load_timeline,
        }
    }

    pub fn pick(&self, u: f64) -> TxnKind {
        let mut acc = 0.0;
        for k in TxnKind::ALL {
            acc += self.weight(k);
            if u < acc {
                return k;
            }
        }
        TxnKind::LoadTimeline
    }
}

/// Number of distinct keys each transaction type touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyCounts {
    pub add_user: usize,
    pub follow: usize,
    pub post_tweet: usize,
    pub load_timeline: usize,
}

impl Default for KeyCounts {
    fn default() -> Self {
        KeyCounts {
            add_user: 1,
            follow: 2,
            post_tweet: 3,
            load_timeline: 10,
        }
    }
}

impl KeyCounts {
    pub fn of(&self, kind: TxnKind) -> usize {
        match kind {
            TxnKind::AddUser => self.add_user,
            TxnKind::Follow => self.follow,
            TxnKind::PostTweet => self.post_tweet,
            TxnKind::LoadTimeline => self.load_timeline,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "model")]
pub enum ClientModel {
    /// Poisson session arrivals at `lambda` sessions per second; after each
    /// transaction the session continues with probability `stay_prob` after
    /// `think_us`.
    PartlyOpen {
        lambda: f64,
        stay_prob: f64,
        think_us: Micros,
    },
    /// A fixed number of sessions that never end.
    Closed { clients: usize, think_us: Micros },
}

impl Default for ClientModel {
    fn default() -> Self {
        ClientModel::PartlyOpen {
            lambda: 100.0,
            stay_prob: 0.9,
            think_us: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub num_keys: u64,
    pub skew: f64,
    pub mix: Mix,
    pub key_counts: KeyCounts,
    pub model: ClientModel,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            num_keys: 10_000,
            skew: 0.9,
            mix: Mix::default(),
            key_counts: KeyCounts::default(),
            model: ClientModel::default(),
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Workload(m));
        if self.num_keys == 0 {
            return err("num_keys must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.skew) {
            return err(format!("skew {} outside [0, 1]", self.skew));
        }
        let weights = TxnKind::ALL.map(|k| self.mix.weight(k));
        if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return err(format!("mix {weights:?} does not sum to 1"));
        }
        match self.model {
            ClientModel::PartlyOpen { lambda, stay_prob, .. } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return err(format!("lambda {lambda} must be positive"));
                }
                if !(0.0..1.0).contains(&stay_prob) {
                    return err(format!("stay probability {stay_prob} outside [0, 1)"));
                }
            }
            ClientModel::Closed { clients, .. } => {
                if clients == 0 {
                    return err("closed-loop model needs at least one client".into());
                }
            }
        }
        Ok(())
    }
}

/// Zipfian key ranks: key `r - 1` has probability proportional to `1 / r^skew`.
#[derive(Clone, Debug)]
pub struct KeySampler {
    num_keys: u64,
    zipf: Zipf<f64>,
}

impl KeySampler {
    pub fn new(num_keys: u64, skew: f64) -> Result<Self, ConfigError> {
        let zipf = Zipf::new(num_keys as f64, skew).map_err(|e| ConfigError::Workload(format!("zipf: {e}")))?;
        Ok(KeySampler { num_keys, zipf })
    }

    pub fn num_keys(&self) -> u64 {
        self.num_keys
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Key {
        (self.zipf.sample(rng) as u64 - 1).min(self.num_keys - 1)
    }

    /// `count` distinct keys, or every key if there are fewer.
    pub fn sample_distinct<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<Key> {
        let count = count.min(self.num_keys as usize);
        let mut keys: Vec<Key> = Vec::with_capacity(count);
        while keys.len() < count {
            let k = self.sample(rng);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys
    }
}

/// A transaction to issue.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxnSpec {
    pub kind: TxnKind,
    pub reads: Vec<Key>,
    pub writes: Vec<Key>,
}

impl TxnSpec {
    pub fn new(kind: TxnKind, keys: Vec<Key>) -> Self {
        match kind {
            TxnKind::AddUser => TxnSpec {
                kind,
                reads: Vec::new(),
                writes: keys,
            },
            TxnKind::Follow | TxnKind::PostTweet => TxnSpec {
                kind,
                reads: keys.clone(),
                writes: keys,
            },
            TxnKind::LoadTimeline => TxnSpec {
                kind,
                reads: keys,
                writes: Vec::new(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NextAction {
    Txn(TxnSpec),
    Think(Micros),
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Start,
    AfterTxn,
    Thought,
}

/// Generates one session's transactions.
#[derive(Clone, Debug)]
pub struct SessionGen {
    mix: Mix,
    key_counts: KeyCounts,
    model: ClientModel,
    rng: ChaCha8Rng,
    phase: Phase,
    issued: u64,
}

impl SessionGen {
    pub fn new(cfg: &WorkloadConfig, seed: u64) -> Self {
        SessionGen {
            mix: cfg.mix,
            key_counts: cfg.key_counts,
            model: cfg.model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            phase: Phase::Start,
            issued: 0,
        }
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn next_action(&mut self, keys: &KeySampler) -> NextAction {
        let (stay, think) = match self.model {
            ClientModel::PartlyOpen { stay_prob, think_us, .. } => (stay_prob, think_us),
            ClientModel::Closed { think_us, .. } => (1.0, think_us),
        };
        if self.phase == Phase::AfterTxn {
            if stay < 1.0 && self.rng.random::<f64>() >= stay {
                return NextAction::End;
            }
            if think > 0 {
                self.phase = Phase::Thought;
                return NextAction::Think(think);
            }
        }
        let kind = self.mix.pick(self.rng.random::<f64>());
        let ks = keys.sample_distinct(&mut self.rng, self.key_counts.of(kind));
        self.phase = Phase::AfterTxn;
        self.issued += 1;
        NextAction::Txn(TxnSpec::new(kind, ks))
    }
}

/// Poisson session arrivals.
#[derive(Clone, Debug)]
pub struct Arrivals {
    exp: Exp<f64>,
    rng: ChaCha8Rng,
}

impl Arrivals {
    pub fn new(lambda_per_s: f64, seed: u64) -> Result<Self, ConfigError> {
        let exp = Exp::new(lambda_per_s / 1e6).map_err(|e| ConfigError::Workload(format!("arrivals: {e}")))?;
        Ok(Arrivals {
            exp,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Microseconds until the next arrival.
    pub fn next_gap_us(&mut self) -> Micros {
        self.exp.sample(&mut self.rng).round() as Micros
    }
}
