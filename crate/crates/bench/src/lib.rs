//! Shared setup for the benchmarks.

use std::path::PathBuf;

use sweep_core::io::load_problem;
use sweep_core::problem::Problem;

/// Path of a file under the workspace `fixtures/` directory.
pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn fixture(name: &str) -> Problem {
    load_problem(&fixture_path(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}")).problem
}
