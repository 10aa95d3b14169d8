//! The committed E2E fixture set must equal what the generator produces.

mod common;

use common::{e2e_dir, fixture_files, E2E_SEED};

#[test]
#[ignore = "writes tests/fixtures/e2e; run explicitly to regenerate"]
fn regenerate_e2e_fixtures() {
    let dir = e2e_dir();
    let _ = std::fs::remove_dir_all(&dir);
    for (name, body) in fixture_files(E2E_SEED) {
        let path = dir.join(name);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, body).unwrap();
    }
}

#[test]
fn committed_fixtures_match_generator() {
    let dir = e2e_dir();
    for (name, body) in fixture_files(E2E_SEED) {
        let on_disk = std::fs::read_to_string(dir.join(&name))
            .unwrap_or_else(|e| panic!("{name}: {e}; run the ignored regenerate test"));
        assert_eq!(on_disk, body, "{name} is stale");
    }
}
