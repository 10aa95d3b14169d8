use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use lrn_core::summarizer::{
    assemble_prompt, chunk_document, generate_review, retrieve_chunks, Backend, BackendError, Chunk, MockBackend,
    PromptSet, Section, SourceDoc, SummarizerConfig, SummarizerError,
};
use proptest::prelude::*;

fn docs() -> Vec<SourceDoc> {
    let body = |topic: &str, n: usize| {
        (0..n)
            .map(|i| format!("{topic} observation {i} was recorded."))
            .collect::<Vec<_>>()
            .join(" ")
    };
    vec![
        SourceDoc { doc_id: "31000001".into(), text: body("glove perforation during orthopaedic surgery", 120) },
        SourceDoc { doc_id: "31000002".into(), text: body("double gloving and needlestick injury", 90) },
        SourceDoc { doc_id: "31000003".into(), text: body("latex allergy among theatre staff", 60) },
    ]
}

fn prompts() -> PromptSet {
    PromptSet::new(
        1,
        "Why do surgical teams care about glove integrity?",
        "How often did glove perforation occur with single versus double gloving?",
        "What are the limitations of the included studies?",
    )
}

fn small_cfg() -> SummarizerConfig {
    SummarizerConfig {
        window: 200,
        overlap: 50,
        top_k: 4,
        budget_tokens: 700,
        ..SummarizerConfig::default()
    }
}

/// Fails on prompts for one section.
struct FailOn(Section, AtomicUsize);

impl Backend for FailOn {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, BackendError> {
        self.1.fetch_add(1, Ordering::SeqCst);
        if prompt.contains(&format!("Section: {}\n", self.0)) {
            return Err(BackendError::Status { status: 503 });
        }
        MockBackend.complete(prompt, max_tokens)
    }
}

#[test]
fn mock_review_has_fixed_sections_and_closed_citations() {
    let docs = docs();
    let review = generate_review(&prompts(), &docs, &MockBackend, &small_cfg()).unwrap();
    let order: Vec<Section> = review.sections.iter().map(|s| s.section).collect();
    assert_eq!(order, Section::ALL.to_vec());
    review.check().unwrap();
    let included: BTreeSet<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    assert!(!review.cited().is_empty());
    assert!(review.cited().is_subset(&included));
    let md = review.render_markdown();
    let pos: Vec<usize> = ["## Introduction", "## Results", "## Discussion", "## Appendix"]
        .iter()
        .map(|h| md.find(h).unwrap_or_else(|| panic!("missing {h}")))
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
    // Every bracketed id in the generated text is an included record.
    for s in &review.sections {
        let text = s.text.as_ref().unwrap();
        for part in text.split('[').skip(1) {
            let id = part.split(']').next().unwrap();
            assert!(included.contains(id), "{id} cited but not included");
        }
    }
    let again = generate_review(&prompts(), &docs, &MockBackend, &small_cfg()).unwrap();
    assert_eq!(again, review);
}

#[test]
fn failed_section_is_named_and_others_are_kept() {
    let dir = tempfile::tempdir().unwrap();
    let backend = FailOn(Section::Results, AtomicUsize::new(0));
    let review = generate_review(&prompts(), &docs(), &backend, &small_cfg()).unwrap();
    assert_eq!(backend.1.load(Ordering::SeqCst), 3);
    review.write(dir.path(), "slr").unwrap();
    let err = review.check().unwrap_err();
    assert!(matches!(&err, SummarizerError::Backend { section: Section::Results, .. }));
    assert!(err.to_string().contains("Results"));
    assert!(review.sections[0].text.is_some());
    assert!(review.sections[1].text.is_none());
    assert!(review.sections[2].text.is_some());
    let md = std::fs::read_to_string(dir.path().join("slr.md")).unwrap();
    assert!(md.contains("Generation failed"));
    assert!(md.contains("Mock completion"));
}

#[test]
fn invalid_inputs_are_rejected() {
    let mut p = prompts();
    p.sections.remove(&Section::Discussion);
    assert!(matches!(
        generate_review(&p, &docs(), &MockBackend, &small_cfg()),
        Err(SummarizerError::InvalidPromptSet(_))
    ));
    assert!(matches!(
        generate_review(&prompts(), &[], &MockBackend, &small_cfg()),
        Err(SummarizerError::NoChunks)
    ));
    let tiny = SummarizerConfig { budget_tokens: 30, ..small_cfg() };
    assert!(matches!(
        generate_review(&prompts(), &docs(), &MockBackend, &tiny),
        Err(SummarizerError::BudgetTooSmall { budget: 30, .. })
    ));
}

/// Frozen prompt for a fixed input. Set `LRN_BLESS=1` to rewrite it.
#[test]
fn results_prompt_matches_golden_file() {
    let cfg = small_cfg();
    let chunks: Vec<Chunk> = docs()
        .iter()
        .flat_map(|d| chunk_document(&d.doc_id, &d.text, cfg.window, cfg.overlap).unwrap())
        .collect();
    let q = &prompts().sections[&Section::Results];
    let ranked: Vec<&Chunk> = retrieve_chunks(q, &chunks, 3, cfg.k1, cfg.b).into_iter().map(|(c, _)| c).collect();
    let prompt = assemble_prompt(Section::Results, q, &ranked, 10_000).unwrap();
    let ids: BTreeSet<&str> = prompt.chunks.iter().map(|c| c.doc_id.as_str()).collect();
    for id in &ids {
        assert!(prompt.text.contains(&format!("Record {id}")));
    }
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/summarizer/results_prompt.txt");
    if std::env::var_os("LRN_BLESS").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, &prompt.text).unwrap();
    }
    let want = std::fs::read_to_string(&golden).expect("golden prompt exists; run with LRN_BLESS=1 to create it");
    assert_eq!(prompt.text, want);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chunk_spans_cover_the_document(n in 0usize..3000, window in 1usize..400, overlap_frac in 0.0f64..1.0) {
        let overlap = ((window as f64) * overlap_frac) as usize;
        prop_assume!(overlap < window);
        let text = (0..n).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        let chunks = chunk_document("d", &text, window, overlap).unwrap();
        if n == 0 {
            prop_assert!(chunks.is_empty());
        } else {
            prop_assert_eq!(chunks[0].start, 0);
            prop_assert_eq!(chunks.last().unwrap().end, n);
            for w in chunks.windows(2) {
                prop_assert_eq!(w[1].start, w[0].start + window - overlap);
                prop_assert_eq!(w[0].end - w[1].start, overlap);
            }
            for c in &chunks {
                prop_assert!(c.end > c.start && c.end - c.start <= window);
            }
        }
    }

    #[test]
    fn retrieval_ignores_chunk_order(seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let cfg = small_cfg();
        let chunks: Vec<Chunk> = docs()
            .iter()
            .flat_map(|d| chunk_document(&d.doc_id, &d.text, 50, 10).unwrap())
            .collect();
        let mut shuffled = chunks.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let q = "glove perforation double gloving";
        let a: Vec<(Chunk, f64)> = retrieve_chunks(q, &chunks, 10, cfg.k1, cfg.b).into_iter().map(|(c, s)| (c.clone(), s)).collect();
        let b: Vec<(Chunk, f64)> = retrieve_chunks(q, &shuffled, 10, cfg.k1, cfg.b).into_iter().map(|(c, s)| (c.clone(), s)).collect();
        prop_assert_eq!(a, b);
    }
}
