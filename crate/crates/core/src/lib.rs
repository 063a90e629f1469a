//! Core of the consent-tagging framework for web data.
//!
//! Everything here is pure computation over owned values: the consent
//! configuration grammar, consent tags and their cryptography, visitor
//! classification, robots rules, request pacing, the web side's tagging
//! processor, the ledger state machine, and the ML side's stores. Transport,
//! clocks and files live in the `fishnet` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod agent;
pub mod backoff;
pub mod client;
pub mod consent;
pub mod crypto;
pub mod dataset;
pub mod error;
pub mod html;
pub mod ledger;
pub mod ml;
pub mod request;
pub mod robots;
pub mod site;

pub use consent::{ConsentConfig, ConsentTag, Flag, TaggedContent};
pub use crypto::{keccak256, Digest, KeyPair, PublicKey, SignatureBytes};
