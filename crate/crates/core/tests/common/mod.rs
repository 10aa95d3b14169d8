//! Shared helpers for integration tests: a seeded synthetic PubMed corpus
//! rendered as canned E-utilities responses, plus the matching session
//! configuration, ground truth and reference library.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, TimeZone, Utc};
use lrn_core::pubmed::{build_exclusion_request, build_fetch_request, build_search_request, SearchSpec};
use lrn_core::session::{ClockConfig, RuleSpec, SessionConfig};
use lrn_core::types::{Label, Pmid};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn e2e_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

pub struct SyntheticArticle {
    pub pmid: u64,
    pub title: String,
    pub abstract_text: String,
    pub language: &'static str,
    pub year: i32,
    pub month: u32,
    pub truth: Label,
}

pub struct SyntheticCorpus {
    pub articles: BTreeMap<u64, SyntheticArticle>,
    /// PMIDs returned by each search string, in server order.
    pub hits: BTreeMap<String, Vec<u64>>,
    /// PMIDs returned by each exclusion search.
    pub exclusion_hits: BTreeMap<String, Vec<u64>>,
    pub reference: Vec<u64>,
    pub reference_total: usize,
}

const INTERVENTIONS: &[&str] = &[
    "aerobic exercise",
    "resistance training",
    "supervised exercise program",
    "walking program",
    "combined aerobic and resistance exercise",
    "home-based exercise",
];
const OUTCOMES: &[&str] = &[
    "glycemic control",
    "HbA1c",
    "insulin sensitivity",
    "fasting plasma glucose",
    "postprandial glucose",
];
const POPULATIONS: &[&str] = &[
    "older adults with type 2 diabetes",
    "patients with type 2 diabetes",
    "adults with prediabetes",
    "overweight adults with impaired glucose tolerance",
];
const TRIAL_DESIGNS: &[&str] = &[
    "a randomized controlled trial",
    "a pilot randomized trial",
    "a multicenter randomized trial",
];
const OFF_DESIGNS: &[&str] = &[
    "a narrative review",
    "a case report",
    "a mouse model study",
    "a cross-sectional survey",
];
const OFF_TOPICS: &[&str] = &[
    "diabetic retinopathy screening",
    "gestational diabetes management",
    "metformin pharmacokinetics",
    "islet transplantation outcomes",
    "insulin pump technology",
    "diabetic foot ulcer care",
];
const FILLER: &[&str] = &[
    "Participants were recruited from outpatient clinics.",
    "Data were analysed using mixed-effects models.",
    "Adherence was monitored throughout follow-up.",
    "Baseline characteristics were similar between groups.",
    "Adverse events were rare and mild.",
    "Further research with longer follow-up is warranted.",
    "Costs were estimated from a health system perspective.",
    "Secondary outcomes included quality of life and body weight.",
    "The sample was drawn from three regional hospitals.",
    "Statistical significance was set at p below 0.05.",
];

fn sentence_case(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn make_article(rng: &mut ChaCha8Rng, pmid: u64) -> SyntheticArticle {
    let on_topic = rng.random_bool(0.6);
    let trial = rng.random_bool(if on_topic { 0.65 } else { 0.35 });
    let design = if trial {
        *TRIAL_DESIGNS.choose(rng).unwrap()
    } else {
        *OFF_DESIGNS.choose(rng).unwrap()
    };
    let population = *POPULATIONS.choose(rng).unwrap();
    let (title, mut sentences) = if on_topic {
        let intervention = *INTERVENTIONS.choose(rng).unwrap();
        let outcome = *OUTCOMES.choose(rng).unwrap();
        (
            format!("Effect of {intervention} on {outcome} in {population}: {design}"),
            vec![
                format!("We evaluated {intervention} and its effect on {outcome} in {population}."),
                format!("This was {design}."),
                format!(
                    "{} improved {} compared with usual care.",
                    sentence_case(intervention),
                    OUTCOMES.choose(rng).unwrap()
                ),
            ],
        )
    } else {
        let topic = *OFF_TOPICS.choose(rng).unwrap();
        (
            format!("{}: {design}", sentence_case(topic)),
            vec![
                format!("We describe {topic} in {population}."),
                format!("This was {design}."),
                format!("Findings on {topic} were reported for {} patients.", rng.random_range(12..400)),
            ],
        )
    };
    if design.contains("mouse") {
        sentences.push("Diabetic mice were studied in a controlled laboratory setting.".into());
    }
    if design.contains("review") {
        sentences.push("We summarise the published literature and discuss open questions.".into());
    }
    let mut filler: Vec<&str> = FILLER.to_vec();
    filler.shuffle(rng);
    let n_fill = rng.random_range(1..4);
    sentences.extend(filler[..n_fill].iter().map(|s| s.to_string()));
    let truth = if on_topic && trial { Label::Include } else { Label::Exclude };
    SyntheticArticle {
        pmid,
        title,
        abstract_text: sentences.join(" "),
        language: "eng",
        year: rng.random_range(1995..2023),
        month: rng.random_range(1..13),
        truth,
    }
}

/// 300 unique articles: 180 from string "1", 160 from string "2" with 40
/// shared; 8 without abstract, 6 in blocked languages; the exclusion
/// searches return mouse-model studies plus some PMIDs outside the corpus.
pub fn synthetic_corpus(seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = 30_000_000u64;
    let mut articles = BTreeMap::new();
    for i in 0..300u64 {
        let pmid = base + 1 + i * 7;
        articles.insert(pmid, make_article(&mut rng, pmid));
    }
    let pmids: Vec<u64> = articles.keys().copied().collect();
    for &p in pmids.iter().skip(3).step_by(37).take(8) {
        articles.get_mut(&p).unwrap().abstract_text.clear();
    }
    for (k, &p) in pmids.iter().skip(11).step_by(47).take(6).enumerate() {
        articles.get_mut(&p).unwrap().language = if k % 2 == 0 { "rus" } else { "chi" };
    }
    let mut s1: Vec<u64> = pmids[..180].to_vec();
    let mut s2: Vec<u64> = pmids[140..].to_vec();
    s1.shuffle(&mut rng);
    s2.shuffle(&mut rng);
    let mouse: Vec<u64> = articles
        .values()
        .filter(|a| a.abstract_text.contains("mice"))
        .map(|a| a.pmid)
        .collect();
    let mut ex1: Vec<u64> = mouse.iter().copied().filter(|p| s1.contains(p)).collect();
    ex1.extend([base + 5_000_001, base + 5_000_002]);
    let mut ex2: Vec<u64> = mouse.iter().copied().filter(|p| s2.contains(p)).collect();
    ex2.push(base + 5_000_003);
    let mut includes: Vec<u64> = articles
        .values()
        .filter(|a| a.truth == Label::Include)
        .map(|a| a.pmid)
        .collect();
    includes.shuffle(&mut rng);
    let mut reference: Vec<u64> = includes.into_iter().take(40).collect();
    reference.extend((1..=10).map(|k| base + 9_000_000 + k));
    reference.sort_unstable();
    SyntheticCorpus {
        articles,
        hits: BTreeMap::from([("1".to_string(), s1), ("2".to_string(), s2)]),
        exclusion_hits: BTreeMap::from([("1".to_string(), ex1), ("2".to_string(), ex2)]),
        reference,
        reference_total: 55,
    }
}

pub fn e2e_searches() -> Vec<SearchSpec> {
    let d = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).unwrap();
    vec![
        SearchSpec {
            id: "1".into(),
            query_text: "(exercise) AND (diabetes)".into(),
            exclusion_query_text: Some("(exercise) AND (diabetes) AND (animals NOT humans)".into()),
            date_start: d(1980, 1, 1),
            date_end: d(2023, 1, 1),
            page_size: 100,
            api_key: None,
        },
        SearchSpec {
            id: "2".into(),
            query_text: "(physical activity) AND (glycemic control)".into(),
            exclusion_query_text: Some("(physical activity) AND (glycemic control) AND (animals NOT humans)".into()),
            date_start: d(1980, 1, 1),
            date_end: d(2023, 1, 1),
            page_size: 100,
            api_key: None,
        },
    ]
}

pub fn e2e_rules() -> Vec<RuleSpec> {
    let r = |t: &str, l| RuleSpec { text: t.into(), label: l };
    vec![
        r("exercise", Label::Include),
        r("randomized", Label::Include),
        r("glycemic control", Label::Include),
        r("resistance training", Label::Include),
        r("case report", Label::Exclude),
        r("review", Label::Exclude),
        r("mice", Label::Exclude),
        r("retinopathy", Label::Exclude),
        r("gestational", Label::Exclude),
        r("pharmacokinetics", Label::Exclude),
        r("survey", Label::Exclude),
    ]
}

pub fn e2e_config(session_id: &str) -> SessionConfig {
    let mut cfg = SessionConfig::new(session_id, e2e_searches(), e2e_rules());
    cfg.clock = ClockConfig::Stepping {
        start: Utc.with_ymd_and_hms(2023, 5, 1, 9, 0, 0).unwrap(),
        step_secs: 30,
    };
    cfg.selection.budget = 150;
    cfg.selection.steps = 60;
    cfg
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn esearch_xml(count: usize, ids: &[u64], translation: &str) -> String {
    let mut s = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\" ?>\n<eSearchResult>");
    let _ = write!(s, "<Count>{count}</Count><RetMax>{}</RetMax><RetStart>0</RetStart><IdList>", ids.len());
    for id in ids {
        let _ = write!(s, "<Id>{id}</Id>");
    }
    let _ = write!(s, "</IdList><QueryTranslation>{}</QueryTranslation></eSearchResult>\n", esc(translation));
    s
}

const MONTHS: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];

fn efetch_xml(articles: &[&SyntheticArticle]) -> String {
    let mut s = String::from("<?xml version=\"1.0\" ?>\n<PubmedArticleSet>\n");
    for a in articles {
        let _ = write!(
            s,
            " <PubmedArticle><MedlineCitation><PMID Version=\"1\">{}</PMID><Article>\
<Journal><JournalIssue><PubDate><Year>{}</Year><Month>{}</Month></PubDate></JournalIssue></Journal>\
<ArticleTitle>{}</ArticleTitle>",
            a.pmid,
            a.year,
            MONTHS[a.month as usize - 1],
            esc(&a.title)
        );
        if !a.abstract_text.is_empty() {
            let _ = write!(s, "<Abstract><AbstractText>{}</AbstractText></Abstract>", esc(&a.abstract_text));
        }
        let _ = write!(
            s,
            "<AuthorList><Author><LastName>Author{}</LastName><Initials>A</Initials></Author></AuthorList>\
<Language>{}</Language></Article></MedlineCitation></PubmedArticle>\n",
            a.pmid % 97,
            a.language
        );
    }
    s.push_str("</PubmedArticleSet>\n");
    s
}

/// Every response the E2E fetch issues, keyed by fixture file name.
pub fn fixture_files(seed: u64) -> BTreeMap<String, String> {
    let corpus = synthetic_corpus(seed);
    let mut files = BTreeMap::new();
    for spec in e2e_searches() {
        let hits = &corpus.hits[&spec.id];
        let page = spec.page_size as usize;
        for (i, chunk) in hits.chunks(page).enumerate() {
            let req = build_search_request(&spec, i as u32).unwrap();
            files.insert(
                format!("responses/{}.xml", req.fixture_key()),
                esearch_xml(hits.len(), chunk, &spec.query_text),
            );
        }
        let ex = &corpus.exclusion_hits[&spec.id];
        let req = build_exclusion_request(&spec, 0).unwrap().unwrap();
        files.insert(
            format!("responses/{}.xml", req.fixture_key()),
            esearch_xml(ex.len(), ex, spec.exclusion_query_text.as_deref().unwrap()),
        );
        let pmids: Vec<Pmid> = hits.iter().map(|p| Pmid::new(p.to_string()).unwrap()).collect();
        for batch in pmids.chunks(200) {
            let req = build_fetch_request(batch, None);
            let arts: Vec<&SyntheticArticle> = batch
                .iter()
                .map(|p| &corpus.articles[&p.as_str().parse::<u64>().unwrap()])
                .collect();
            files.insert(format!("responses/{}.xml", req.fixture_key()), efetch_xml(&arts));
        }
    }
    let mut truth = String::new();
    for a in corpus.articles.values() {
        let _ = writeln!(truth, "{}\t{}", a.pmid, a.truth);
    }
    files.insert("truth.tsv".into(), truth);
    let mut reference = format!("# total_reported={}\n", corpus.reference_total);
    for p in &corpus.reference {
        let _ = writeln!(reference, "{p}");
    }
    files.insert("reference.pmids".into(), reference);
    files.insert(
        "session.json".into(),
        serde_json::to_string_pretty(&e2e_config("e2e")).unwrap() + "\n",
    );
    files
}

pub const E2E_SEED: u64 = 20230501;

/// Ground-truth labels from `truth.tsv`.
pub fn load_truth(dir: &Path) -> BTreeMap<Pmid, Label> {
    std::fs::read_to_string(dir.join("truth.tsv"))
        .unwrap()
        .lines()
        .map(|l| {
            let (p, t) = l.split_once('\t').unwrap();
            (Pmid::new(p).unwrap(), t.parse().unwrap())
        })
        .collect()
}

pub fn pmid_set<'a>(it: impl IntoIterator<Item = &'a Pmid>) -> BTreeSet<Pmid> {
    it.into_iter().cloned().collect()
}

/// Byte-level comparison of two directory trees; returns differing paths.
pub fn diff_trees(a: &Path, b: &Path) -> Vec<String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    walk(a, a, &mut fa);
    walk(b, b, &mut fb);
    let keys: BTreeSet<&String> = fa.keys().chain(fb.keys()).collect();
    keys.into_iter()
        .filter(|k| fa.get(*k) != fb.get(*k))
        .cloned()
        .collect()
}

pub struct E2eOutcome {
    pub prisma_checks: Vec<(String, lrn_core::prisma::PrismaCounts)>,
    pub deployment: lrn_core::session::Deployment,
    pub reference: lrn_core::concordance::ReferenceReport,
    pub comparison: lrn_core::concordance::SetComparison,
    pub snapshots: Vec<lrn_core::session::IterationSnapshot>,
}

/// Full fixture-driven session: fetch, screen, two feedback iterations with
/// labels taken from the ground truth, deploy, PRISMA, package insert and
/// concordance against the bundled reference library.
pub fn run_e2e(dir: &Path) -> E2eOutcome {
    use lrn_core::concordance::{compare_sets, compare_to_reference, pairwise_table, write_table_csv};
    use lrn_core::corpus::ReferenceLibrary;
    use lrn_core::pubmed::FixtureTransport;
    use lrn_core::session::{RuleEdit, Session};

    let fx = e2e_dir();
    let cfg: SessionConfig =
        serde_json::from_str(&std::fs::read_to_string(fx.join("session.json")).unwrap()).unwrap();
    let truth = load_truth(&fx);
    let mut s = Session::init(dir, cfg, false).unwrap();
    let mut prisma_checks = Vec::new();
    s.fetch(&FixtureTransport::new(fx.join("responses"))).unwrap();
    s.screen().unwrap();
    prisma_checks.push(("screen".to_string(), s.write_prisma().unwrap()));

    let mut snapshots = Vec::new();
    for n in 1..=2u32 {
        let queue = s.start_iteration().unwrap();
        let labels: BTreeMap<Pmid, Label> = queue.iter().map(|q| (q.pmid.clone(), truth[&q.pmid])).collect();
        let edits = if n == 2 {
            vec![
                RuleEdit::Add { text: "HbA1c".into(), label: Label::Include },
                RuleEdit::Add { text: "insulin pump".into(), label: Label::Exclude },
                RuleEdit::Remove { rule_id: 4 },
            ]
        } else {
            vec![RuleEdit::Add { text: "cross-sectional".into(), label: Label::Exclude }]
        };
        s.submit_feedback(&labels, &edits).unwrap();
        s.record_manual_labor(1.5).unwrap();
        snapshots.push(s.finish_iteration().unwrap());
        prisma_checks.push((format!("iteration {n}"), s.prisma_counts().unwrap()));
    }
    let deployment = s.deploy(None).unwrap();
    prisma_checks.push(("deploy".to_string(), s.write_prisma().unwrap()));
    s.generate_package_insert().unwrap();

    let (library, _) = ReferenceLibrary::import(&fx.join("reference.pmids"), "reference").unwrap();
    s.import_library(&library).unwrap();
    let corpus_pmids: BTreeSet<Pmid> = s.corpus().records.keys().cloned().collect();
    let include: BTreeSet<Pmid> = deployment.include.iter().cloned().collect();
    let reference = compare_to_reference(&include, &library, &corpus_pmids).unwrap();
    let universe: BTreeSet<Pmid> = corpus_pmids.union(&library.pmids).cloned().collect();
    let comparison = compare_sets("deployment", &include, "reference", &library.pmids, &universe, 2000, 7).unwrap();
    let table = pairwise_table(vec![comparison.clone()]).unwrap();
    let mut csv = Vec::new();
    write_table_csv(&table, &mut csv).unwrap();
    std::fs::write(dir.join("report/concordance.csv"), csv).unwrap();
    std::fs::write(
        dir.join("report/reference.json"),
        serde_json::to_string_pretty(&reference).unwrap() + "\n",
    )
    .unwrap();
    E2eOutcome {
        prisma_checks,
        deployment,
        reference,
        comparison,
        snapshots,
    }
}

/// Votes drawn from the one-accuracy label model itself: y ~ Bernoulli(π);
/// rule j votes with probability `propensity[j]`, and a vote equals y with
/// probability `acc[j]`. Columns therefore carry both signs.
pub fn planted_label_matrix(
    seed: u64,
    n: usize,
    prior: f64,
    acc: &[f64],
    propensity: &[f64],
) -> (lrn_core::label_model::LabelMatrix, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = Vec::with_capacity(n);
    let mut votes = Vec::with_capacity(n);
    for _ in 0..n {
        let y: i8 = if rng.random_bool(prior) { 1 } else { -1 };
        let row = acc
            .iter()
            .zip(propensity)
            .map(|(&a, &c)| {
                if !rng.random_bool(c) {
                    0
                } else if rng.random_bool(a) {
                    y
                } else {
                    -y
                }
            })
            .collect();
        votes.push(row);
        truth.push(if y == 1 { Label::Include } else { Label::Exclude });
    }
    let m = lrn_core::label_model::LabelMatrix {
        record_ids: (1..=n).map(|i| Pmid::new(i.to_string()).unwrap()).collect(),
        rule_ids: (1..=acc.len() as u32).collect(),
        votes,
    };
    (m, truth)
}

/// `n` records over `dim` features in [0, 1); the label is INCLUDE exactly
/// when features 0, 1 and 2 sum above 1.5. Every other feature is noise.
pub fn planted_selection_data(seed: u64, n: usize, dim: usize) -> (Vec<lrn_core::discriminative::SparseVector>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        targets.push(if x[0] + x[1] + x[2] > 1.5 { 1.0 } else { 0.0 });
        vectors.push(lrn_core::discriminative::SparseVector::from_dense(&x));
    }
    (vectors, targets)
}
