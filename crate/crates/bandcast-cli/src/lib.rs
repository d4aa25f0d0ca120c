//! Data ingestion, scenario files, and run orchestration behind the
//! `bandcast` command-line tool. The parsers live here, in library form, so
//! they can be tested and fuzzed without going through a process boundary.

pub mod config;
pub mod data;
pub mod run;
pub mod scenario;
