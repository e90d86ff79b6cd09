//! Shared inputs for the criterion benches.

use std::path::PathBuf;

use decoopt_core::document::load_instance;
use decoopt_core::Instance;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(format!("{name}.json"))
}

/// Load a bundled fixture by name, panicking on failure.
pub fn fixture(name: &str) -> Instance {
    let path = fixture_path(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    load_instance(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
