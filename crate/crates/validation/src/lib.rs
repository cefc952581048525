//! Acceptance suite for `ifa-core`. The checks live in `tests/acceptance.rs`
//! and run after the core crate's own tests.
