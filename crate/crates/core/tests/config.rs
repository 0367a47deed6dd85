use std::path::Path;
use webgen_core::config::RunConfig;

#[test]
fn shipped_default_config_matches_the_built_in_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/default.toml");
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::default());
}

#[test]
fn invalid_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for (body, needle) in [
        ("max_iterations = 0\n", "max_iterations"),
        ("model_temperature = -1.0\n", "model_temperature"),
        ("consecutive_error_limit = 0\n", "consecutive_error_limit"),
        ("max_iterations = \"many\"\n", "parse"),
    ] {
        let p = dir.path().join("c.toml");
        std::fs::write(&p, body).unwrap();
        let err = RunConfig::load(&p).unwrap_err().to_string();
        assert!(err.contains(needle), "{body}: {err}");
    }
}
