//! The narrative guide lives in `book/` at the repository root; each
//! chapter is included here as module documentation so its code listings
//! compile and run under `cargo test --doc`.
