//! `lrn`: drive a literature review session from the command line.
//!
//! Structured results are printed to stdout as JSON; progress goes to the
//! log (set `RUST_LOG=info`).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lrn_core::concordance::{compare_sets, pairwise_table, write_table_csv};
use lrn_core::corpus::import_reference_library;
use lrn_core::pubmed::{FixtureTransport, HttpSender, RateLimiter, RecordingTransport, ResilientTransport, Transport};
use lrn_core::session::{RuleEdit, Session, SessionConfig};
use lrn_core::summarizer::{Backend, HttpBackend, MockBackend, PromptSet};
use lrn_core::types::{Label, Pmid};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "lrn", version, about = "Iterative literature review with labeling rules and reviewer feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SessionArg {
    /// Session directory.
    #[arg(short, long, env = "LRN_SESSION")]
    session: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Create a session directory from a JSON configuration.
    Init {
        #[command(flatten)]
        dir: SessionArg,
        #[arg(long)]
        config: PathBuf,
        /// Replace an existing session.
        #[arg(long)]
        force: bool,
    },
    /// Run the configured searches and store the retrieved records.
    Fetch {
        /// Session configuration JSON; used to create the session if `--out` is not one yet.
        #[arg(long)]
        query_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Serve responses from canned files instead of the network.
        #[arg(long, conflicts_with = "record")]
        fixtures: Option<PathBuf>,
        /// Save live responses as fixtures under this directory.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Screen records for eligibility and flag the negative set.
    Screen(SessionArg),
    /// Store a reference library (one PMID per line) for comparison.
    ImportLibrary {
        #[command(flatten)]
        dir: SessionArg,
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        name: String,
    },
    /// Train on current rules and labels and issue the next review queue.
    Iterate(SessionArg),
    /// Label queued records.
    Label {
        #[command(flatten)]
        dir: SessionArg,
        #[arg(long, requires = "label")]
        pmid: Option<String>,
        #[arg(long)]
        label: Option<Label>,
        /// Tab-separated `pmid<TAB>label` lines.
        #[arg(long, conflicts_with_all = ["pmid", "label"])]
        file: Option<PathBuf>,
    },
    /// Inspect or edit the labeling rules.
    Rules {
        #[command(flatten)]
        dir: SessionArg,
        #[command(subcommand)]
        action: RulesAction,
    },
    /// Retrain with the submitted feedback and record the iteration snapshot.
    Train(SessionArg),
    /// Pin an iteration for deployment, or clear the pin.
    Pin {
        #[command(flatten)]
        dir: SessionArg,
        iteration: Option<u32>,
    },
    /// Make an earlier snapshot the deployment default.
    Revert {
        #[command(flatten)]
        dir: SessionArg,
        iteration: u32,
    },
    /// Classify all eligible records with a snapshot.
    Deploy {
        #[command(flatten)]
        dir: SessionArg,
        #[arg(long)]
        iteration: Option<u32>,
    },
    /// Compare two PMID sets with a Jaccard bootstrap test.
    Concordance {
        /// PMID file; its stem names the set.
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        universe: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the PRISMA flow diagram (svg, dot, json).
    Prisma(SessionArg),
    /// Write the package insert under `report/`.
    Report(SessionArg),
    /// Draft the review text from the deployed INCLUDE set.
    Summarize {
        #[command(flatten)]
        dir: SessionArg,
        /// JSON prompt set: `{"generation": n, "sections": {"Introduction": ..., ...}}`.
        #[arg(long)]
        prompts: PathBuf,
        /// Directory of `<pmid>.txt` full texts.
        #[arg(long)]
        fulltext: Option<PathBuf>,
        /// Use the deterministic offline backend.
        #[arg(long, conflicts_with = "endpoint")]
        mock: bool,
        /// Completion endpoint; defaults to the one in the session config.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value_t = 120)]
        timeout_secs: u64,
    },
    /// Serve the HTTP API over a directory of sessions.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = "LRN_ROOT", default_value = ".")]
        root: PathBuf,
        /// Allowed browser origin; repeat for several, `*` for any.
        #[arg(long = "cors-origin")]
        cors_origins: Vec<String>,
    },
}

#[derive(Subcommand)]
enum RulesAction {
    /// Add a rule, or reinstate a removed one with the same text and label.
    Add {
        #[arg(long)]
        text: String,
        #[arg(long)]
        label: Label,
    },
    Remove {
        #[arg(long)]
        rule_id: u32,
    },
    /// Print the rule history table as CSV.
    List,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn open(dir: &SessionArg) -> Result<Session> {
    Session::open(&dir.session).with_context(|| format!("opening session {}", dir.session.display()))
}

fn read_config(path: &Path) -> Result<SessionConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_label_file(path: &Path) -> Result<BTreeMap<Pmid, Label>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((p, l)) = line.split_once('\t') else {
            bail!("{}:{}: expected pmid<TAB>label", path.display(), i + 1);
        };
        let pmid = Pmid::new(p.trim()).map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1))?;
        let label: Label = l.trim().parse().map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1))?;
        out.insert(pmid, label);
    }
    Ok(out)
}

fn live_transport(record: Option<PathBuf>) -> Result<Box<dyn Transport>> {
    let has_key = std::env::var(lrn_core::pubmed::API_KEY_ENV).is_ok_and(|k| !k.is_empty());
    let live = ResilientTransport::new(HttpSender::new()?, RateLimiter::for_key(has_key));
    Ok(match record {
        Some(dir) => Box::new(RecordingTransport::new(live, dir)),
        None => Box::new(live),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init { dir, config, force } => {
            let s = Session::init(&dir.session, read_config(&config)?, force)?;
            print_json(&s.summary())
        }
        Command::Fetch {
            query_file,
            out,
            fixtures,
            record,
        } => {
            let config = read_config(&query_file)?;
            let mut s = if out.join("config.json").is_file() {
                let s = Session::open(&out)?;
                if s.config().searches != config.searches {
                    bail!("{} already holds a session with different searches", out.display());
                }
                s
            } else {
                Session::init(&out, config, false)?
            };
            let transport: Box<dyn Transport> = match fixtures {
                Some(dir) => Box::new(FixtureTransport::new(dir)),
                None => live_transport(record)?,
            };
            print_json(&s.fetch(transport.as_ref())?)
        }
        Command::Screen(dir) => print_json(&open(&dir)?.screen()?),
        Command::ImportLibrary { dir, file, name } => {
            let s = open(&dir)?;
            let library = import_reference_library(&file, &name)?;
            let path = s.import_library(&library)?;
            println!("{} PMIDs stored in {}", library.pmids.len(), path.display());
            Ok(())
        }
        Command::Iterate(dir) => print_json(&open(&dir)?.start_iteration()?),
        Command::Label { dir, pmid, label, file } => {
            let labels = match (file, pmid, label) {
                (Some(f), _, _) => read_label_file(&f)?,
                (None, Some(p), Some(l)) => BTreeMap::from([(Pmid::new(&p).map_err(|e| anyhow::anyhow!("{e}"))?, l)]),
                _ => bail!("give --pmid and --label, or --file"),
            };
            let appended = open(&dir)?.submit_feedback(&labels, &[])?;
            println!("{appended} label(s) recorded");
            Ok(())
        }
        Command::Rules { dir, action } => {
            let mut s = open(&dir)?;
            match action {
                RulesAction::Add { text, label } => {
                    let id = s.apply_rule_edit(&RuleEdit::Add { text, label })?;
                    println!("rule {id}");
                }
                RulesAction::Remove { rule_id } => {
                    s.apply_rule_edit(&RuleEdit::Remove { rule_id })?;
                    println!("rule {rule_id} removed");
                }
                RulesAction::List => s.ruleset().write_csv(std::io::stdout().lock())?,
            }
            Ok(())
        }
        Command::Train(dir) => print_json(&open(&dir)?.finish_iteration()?.metrics),
        Command::Pin { dir, iteration } => {
            open(&dir)?.pin_iteration(iteration)?;
            Ok(())
        }
        Command::Revert { dir, iteration } => {
            open(&dir)?.revert_to_iteration(iteration)?;
            Ok(())
        }
        Command::Deploy { dir, iteration } => {
            let d = open(&dir)?.deploy(iteration)?;
            print_json(&serde_json::json!({
                "iteration": d.iteration,
                "include": d.include.len(),
                "exclude": d.exclude.len(),
                "user_labeled": d.user_labeled,
            }))
        }
        Command::Concordance {
            a,
            b,
            universe,
            reps,
            seed,
            out,
        } => {
            let load = |p: &Path| -> Result<(String, BTreeSet<Pmid>)> {
                let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("set").to_owned();
                Ok((name.clone(), import_reference_library(p, &name)?.pmids))
            };
            let (name_a, set_a) = load(&a)?;
            let (name_b, set_b) = load(&b)?;
            let (_, universe) = load(&universe)?;
            let row = compare_sets(&name_a, &set_a, &name_b, &set_b, &universe, reps, seed)?;
            let table = pairwise_table(vec![row])?;
            match out {
                Some(path) => {
                    let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    write_table_csv(&table, f)?;
                }
                None => write_table_csv(&table, std::io::stdout().lock())?,
            }
            Ok(())
        }
        Command::Prisma(dir) => print_json(&open(&dir)?.write_prisma()?),
        Command::Report(dir) => {
            open(&dir)?.generate_package_insert()?;
            println!("{}", dir.session.join("report/insert.md").display());
            Ok(())
        }
        Command::Summarize {
            dir,
            prompts,
            fulltext,
            mock,
            endpoint,
            timeout_secs,
        } => {
            let s = open(&dir)?;
            let text = std::fs::read_to_string(&prompts).with_context(|| format!("reading {}", prompts.display()))?;
            let prompts: PromptSet = serde_json::from_str(&text).with_context(|| format!("parsing {}", prompts.display()))?;
            let backend: Box<dyn Backend> = if mock {
                Box::new(MockBackend)
            } else {
                let Some(url) = endpoint.or_else(|| s.config().summarizer.endpoint.clone()) else {
                    bail!("no completion endpoint: pass --endpoint, set summarizer.endpoint, or use --mock");
                };
                Box::new(HttpBackend::new(&url, Duration::from_secs(timeout_secs))?)
            };
            s.summarize(&prompts, fulltext.as_deref(), backend.as_ref())?;
            println!("{}", dir.session.join("report/slr.md").display());
            Ok(())
        }
        Command::Serve {
            bind,
            root,
            cors_origins,
        } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(lrn_api::serve(lrn_api::ServerConfig {
                bind,
                session_root: root,
                cors_origins,
            }))?;
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
