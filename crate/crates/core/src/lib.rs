pub mod checker;
pub mod client;
pub mod cluster;
pub mod error;
pub mod experiment;
pub mod kv;
pub mod librss;
pub mod messages;
pub mod replication;
pub mod scenarios;
pub mod shard;
pub mod simnet;
pub mod stats;
pub mod timebase;
pub mod timestamp;
pub mod workload;
