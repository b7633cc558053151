//! Conspiracy-detection instruction benchmark toolkit.
//!
//! Corpus ingestion and splitting ([`corpus`]), affective profiles
//! ([`affect`]), task dataset construction ([`instructions`]), model runs
//! over a chat-completion backend ([`inference`]), scoring ([`scoring`]),
//! distribution plots ([`analysis`]) and the `condid` command line ([`cli`]).

pub mod affect;
pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod inference;
pub mod instructions;
pub mod provenance;
pub mod scoring;
