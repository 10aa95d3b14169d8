//! PRISMA 2020 flow counts and diagram rendering.
//!
//! Conservation identities checked on every tally:
//!
//! ```text
//! identified − duplicates_removed − removed_other_reasons − ineligible_by_criteria = records_screened
//! records_screened − records_excluded = sought_fulltext ≥ included
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Eligibility};
use crate::types::{Label, Pmid};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PrismaError {
    #[error("inconsistent PRISMA counts: {0}")]
    InconsistentState(String),
    #[error("unsupported PRISMA format {0:?} (expected svg, dot or json)")]
    UnsupportedFormat(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrismaCounts {
    pub identified: u64,
    pub duplicates_removed: u64,
    /// Blocked language or missing abstract.
    pub removed_other_reasons: u64,
    /// Matched the exclusion search string.
    pub ineligible_by_criteria: u64,
    pub records_screened: u64,
    /// Excluded by the reviewer during screening.
    pub records_excluded: u64,
    pub sought_fulltext: u64,
    pub included: u64,
}

impl PrismaCounts {
    /// Derive screened/sought from the removal counts; fails when a
    /// subtraction would go negative or `included` exceeds the sought count.
    pub fn from_parts(
        identified: u64,
        duplicates_removed: u64,
        removed_other_reasons: u64,
        ineligible_by_criteria: u64,
        records_excluded: u64,
        included: u64,
    ) -> Result<Self, PrismaError> {
        let removed = duplicates_removed + removed_other_reasons + ineligible_by_criteria;
        let records_screened = identified.checked_sub(removed).ok_or_else(|| {
            PrismaError::InconsistentState(format!("{removed} records removed from {identified} identified"))
        })?;
        let sought_fulltext = records_screened.checked_sub(records_excluded).ok_or_else(|| {
            PrismaError::InconsistentState(format!(
                "{records_excluded} excluded from {records_screened} screened"
            ))
        })?;
        let counts = Self {
            identified,
            duplicates_removed,
            removed_other_reasons,
            ineligible_by_criteria,
            records_screened,
            records_excluded,
            sought_fulltext,
            included,
        };
        counts.validate()?;
        Ok(counts)
    }

    pub fn validate(&self) -> Result<(), PrismaError> {
        let removed = self.duplicates_removed + self.removed_other_reasons + self.ineligible_by_criteria;
        if self.identified.checked_sub(removed) != Some(self.records_screened) {
            return Err(PrismaError::InconsistentState(format!(
                "identified {} − removed {removed} ≠ screened {}",
                self.identified, self.records_screened
            )));
        }
        if self.records_screened.checked_sub(self.records_excluded) != Some(self.sought_fulltext) {
            return Err(PrismaError::InconsistentState(format!(
                "screened {} − excluded {} ≠ sought {}",
                self.records_screened, self.records_excluded, self.sought_fulltext
            )));
        }
        if self.included > self.sought_fulltext {
            return Err(PrismaError::InconsistentState(format!(
                "included {} exceeds sought {}",
                self.included, self.sought_fulltext
            )));
        }
        Ok(())
    }

    /// Reports assessed but not included.
    pub fn reports_excluded(&self) -> u64 {
        self.sought_fulltext - self.included
    }
}

/// Counts from a screened corpus, the reviewer's labels and the number of
/// records a deployed model classified INCLUDE (`None` before deployment:
/// every sought record is then counted as included).
pub fn tally(
    corpus: &Corpus,
    labels: &BTreeMap<Pmid, Label>,
    deployed_include: Option<u64>,
) -> Result<PrismaCounts, PrismaError> {
    let t = corpus.tally();
    if t.pending > 0 {
        return Err(PrismaError::InconsistentState(format!(
            "{} records have not been screened",
            t.pending
        )));
    }
    let identified = corpus.identified() as u64;
    let duplicates_removed = identified - corpus.len() as u64 + t.duplicate as u64;
    let excluded = labels
        .iter()
        .filter(|(p, l)| {
            **l == Label::Exclude
                && corpus
                    .get(p)
                    .is_some_and(|r| r.eligibility == Eligibility::Eligible)
        })
        .count() as u64;
    let sought = t.eligible as u64 - excluded;
    PrismaCounts::from_parts(
        identified,
        duplicates_removed,
        (t.no_abstract + t.language_blocked) as u64,
        t.exclusion_query_match as u64,
        excluded,
        deployed_include.unwrap_or(sought),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrismaFormat {
    Svg,
    Dot,
    Json,
}

impl PrismaFormat {
    pub fn extension(self) -> &'static str {
        match self {
            PrismaFormat::Svg => "svg",
            PrismaFormat::Dot => "dot",
            PrismaFormat::Json => "json",
        }
    }
}

impl FromStr for PrismaFormat {
    type Err = PrismaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "svg" => Ok(PrismaFormat::Svg),
            "dot" => Ok(PrismaFormat::Dot),
            "json" => Ok(PrismaFormat::Json),
            _ => Err(PrismaError::UnsupportedFormat(s.to_owned())),
        }
    }
}

struct BoxSpec {
    id: &'static str,
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    lines: Vec<String>,
}

const MAIN_X: u32 = 140;
const SIDE_X: u32 = 480;
const BOX_W: u32 = 280;

fn boxes(c: &PrismaCounts) -> Vec<BoxSpec> {
    vec![
        BoxSpec {
            id: "identified",
            x: MAIN_X,
            y: 40,
            w: BOX_W,
            h: 90,
            lines: vec![
                "Records identified from:".into(),
                format!("PubMed (n = {})", c.identified),
            ],
        },
        BoxSpec {
            id: "removed",
            x: SIDE_X,
            y: 20,
            w: BOX_W,
            h: 130,
            lines: vec![
                "Records removed before screening:".into(),
                format!("Duplicate records removed (n = {})", c.duplicates_removed),
                format!("Records marked as ineligible (n = {})", c.ineligible_by_criteria),
                format!("Records removed for other reasons (n = {})", c.removed_other_reasons),
            ],
        },
        BoxSpec {
            id: "screened",
            x: MAIN_X,
            y: 200,
            w: BOX_W,
            h: 60,
            lines: vec!["Records screened".into(), format!("(n = {})", c.records_screened)],
        },
        BoxSpec {
            id: "excluded",
            x: SIDE_X,
            y: 200,
            w: BOX_W,
            h: 60,
            lines: vec!["Records excluded".into(), format!("(n = {})", c.records_excluded)],
        },
        BoxSpec {
            id: "sought",
            x: MAIN_X,
            y: 320,
            w: BOX_W,
            h: 60,
            lines: vec![
                "Reports sought for retrieval".into(),
                format!("(n = {})", c.sought_fulltext),
            ],
        },
        BoxSpec {
            id: "assessed",
            x: MAIN_X,
            y: 440,
            w: BOX_W,
            h: 60,
            lines: vec![
                "Reports assessed for eligibility".into(),
                format!("(n = {})", c.sought_fulltext),
            ],
        },
        BoxSpec {
            id: "reports_excluded",
            x: SIDE_X,
            y: 440,
            w: BOX_W,
            h: 60,
            lines: vec!["Reports excluded".into(), format!("(n = {})", c.reports_excluded())],
        },
        BoxSpec {
            id: "included",
            x: MAIN_X,
            y: 580,
            w: BOX_W,
            h: 60,
            lines: vec![
                "Studies included in review".into(),
                format!("(n = {})", c.included),
            ],
        },
    ]
}

const ARROWS: [(&str, &str); 7] = [
    ("identified", "removed"),
    ("identified", "screened"),
    ("screened", "excluded"),
    ("screened", "sought"),
    ("sought", "assessed"),
    ("assessed", "reports_excluded"),
    ("assessed", "included"),
];

fn render_svg(c: &PrismaCounts) -> String {
    let bs = boxes(c);
    let find = |id: &str| bs.iter().find(|b| b.id == id).expect("known box");
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"680\" viewBox=\"0 0 800 680\" font-family=\"Helvetica, Arial, sans-serif\" font-size=\"13\">\n",
    );
    s.push_str("  <defs><marker id=\"arrow\" markerWidth=\"10\" markerHeight=\"7\" refX=\"10\" refY=\"3.5\" orient=\"auto\"><polygon points=\"0 0, 10 3.5, 0 7\"/></marker></defs>\n");
    for (label, y) in [("Identification", 40), ("Screening", 200), ("Included", 580)] {
        let _ = writeln!(
            s,
            "  <text x=\"20\" y=\"{}\" font-weight=\"bold\">{label}</text>",
            y + 20
        );
    }
    for b in &bs {
        let _ = writeln!(
            s,
            "  <g id=\"{}\"><rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"white\" stroke=\"black\"/>",
            b.id, b.x, b.y, b.w, b.h
        );
        for (i, line) in b.lines.iter().enumerate() {
            let _ = writeln!(
                s,
                "    <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                b.x + b.w / 2,
                b.y + 24 + 20 * i as u32,
                line
            );
        }
        s.push_str("  </g>\n");
    }
    for (from, to) in ARROWS {
        let (a, b) = (find(from), find(to));
        let (x1, y1, x2, y2) = if a.x == b.x {
            (a.x + a.w / 2, a.y + a.h, b.x + b.w / 2, b.y)
        } else {
            (a.x + a.w, a.y + a.h / 2, b.x, (a.y + a.h / 2).clamp(b.y, b.y + b.h))
        };
        let _ = writeln!(
            s,
            "  <line x1=\"{x1}\" y1=\"{y1}\" x2=\"{x2}\" y2=\"{y2}\" stroke=\"black\" marker-end=\"url(#arrow)\"/>"
        );
    }
    s.push_str("</svg>\n");
    s
}

fn render_dot(c: &PrismaCounts) -> String {
    let mut s = String::from("digraph prisma {\n  rankdir=TB;\n  node [shape=box, fontname=\"Helvetica\"];\n");
    for b in boxes(c) {
        let _ = writeln!(s, "  {} [label=\"{}\"];", b.id, b.lines.join("\\n"));
    }
    s.push_str("  { rank=same; identified; removed; }\n  { rank=same; screened; excluded; }\n  { rank=same; assessed; reports_excluded; }\n");
    for (from, to) in ARROWS {
        let _ = writeln!(s, "  {from} -> {to};");
    }
    s.push_str("}\n");
    s
}

pub fn render(c: &PrismaCounts, format: PrismaFormat) -> Result<String, PrismaError> {
    c.validate()?;
    Ok(match format {
        PrismaFormat::Svg => render_svg(c),
        PrismaFormat::Dot => render_dot(c),
        PrismaFormat::Json => serde_json::to_string_pretty(c).expect("counts serialize") + "\n",
    })
}
