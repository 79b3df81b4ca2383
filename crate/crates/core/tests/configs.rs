use std::path::Path;

use catw::cli::{prepare, ExperimentConfig};

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let c = ExperimentConfig::load(&path).unwrap();
            let p = prepare(&c).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(p.conditions.all_passed());
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
