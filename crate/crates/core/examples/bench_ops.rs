//! Scratch harness (not shipped in tests).
fn main() {}
