//! Holds the `acceptance` test target, which runs the long end-to-end checks
//! after the core test suites. Run it alone with
//! `cargo test -p meta-semi-acceptance`; pass criterion numbers after `--`
//! to run a subset.
