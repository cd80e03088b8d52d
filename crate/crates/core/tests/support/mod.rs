//! Helpers shared between integration test binaries. Each binary uses a
//! different subset.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracle;
