mod common;

use std::time::Instant;

use common::{diff_trees, run_e2e};

#[test]
fn e2e_runs_and_replays_byte_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let out = run_e2e(a.path());
    eprintln!("e2e run took {:?}", t.elapsed());
    for (stage, c) in &out.prisma_checks {
        c.validate().unwrap_or_else(|e| panic!("{stage}: {e}"));
        eprintln!("{stage}: {c:?}");
    }
    for s in &out.snapshots {
        eprintln!("iteration {}: {:?}", s.iteration, s.metrics);
    }
    eprintln!("deployment: {} include / {} exclude", out.deployment.include.len(), out.deployment.exclude.len());
    eprintln!("reference: {:?}", out.reference);
    eprintln!("comparison: {:?}", out.comparison);
    run_e2e(b.path());
    assert_eq!(diff_trees(a.path(), b.path()), Vec::<String>::new());
}

/// The rendered package insert is frozen in `tests/fixtures/golden`.
/// Set `LRN_BLESS=1` to rewrite it after an intended change.
#[test]
fn package_insert_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    run_e2e(dir.path());
    let golden_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden");
    for name in ["insert.md", "insert.json"] {
        let got = std::fs::read_to_string(dir.path().join("report").join(name)).unwrap();
        let golden = golden_dir.join(name);
        if std::env::var_os("LRN_BLESS").is_some() {
            std::fs::create_dir_all(&golden_dir).unwrap();
            std::fs::write(&golden, &got).unwrap();
        }
        let want = std::fs::read_to_string(&golden)
            .unwrap_or_else(|e| panic!("{}: {e}; run with LRN_BLESS=1 to create it", golden.display()));
        assert_eq!(got, want, "{name} differs from the golden file");
    }
}
