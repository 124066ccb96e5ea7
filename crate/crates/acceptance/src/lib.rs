//! Acceptance suite for `hermite-moments`; see `tests/acceptance.rs`.
