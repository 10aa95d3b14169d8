//! esearch / efetch XML parsing.
//!
//! Responses are small (≤200 articles), so they are read into a minimal
//! element tree and queried by direct-child lookups.

use chrono::NaiveDate;
use quick_xml::events::Event;
use quick_xml::Reader;

use super::RawRecord;
use crate::types::Pmid;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EsearchPage {
    pub count: u64,
    pub ids: Vec<Pmid>,
    pub query_translation: Option<String>,
}

#[derive(Debug, Default)]
struct Element {
    name: String,
    children: Vec<Item>,
}

#[derive(Debug)]
enum Item {
    Element(Element),
    Text(String),
}

type Node<'a> = &'a Element;

impl Element {
    fn has_tag_name(&self, name: &str) -> bool {
        self.name == name
    }

    fn elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|c| match c {
            Item::Element(e) => Some(e),
            Item::Text(_) => None,
        })
    }

    fn collect_text(&self, out: &mut String) {
        for c in &self.children {
            match c {
                Item::Element(e) => e.collect_text(out),
                Item::Text(t) => out.push_str(t),
            }
        }
    }
}

fn parse_doc(body: &str) -> Result<Element, String> {
    let mut reader = Reader::from_str(body);
    let malformed = |e: &dyn std::fmt::Display| format!("malformed XML: {e}");
    let mut stack: Vec<Element> = vec![Element::default()];
    loop {
        match reader.read_event() {
            Ok(Event::Start(s)) => stack.push(Element {
                name: String::from_utf8_lossy(s.name().as_ref()).into_owned(),
                children: Vec::new(),
            }),
            Ok(Event::Empty(s)) => {
                let e = Element {
                    name: String::from_utf8_lossy(s.name().as_ref()).into_owned(),
                    children: Vec::new(),
                };
                stack.last_mut().expect("stack has document node").children.push(Item::Element(e));
            }
            Ok(Event::End(_)) => {
                let done = stack.pop().expect("stack has document node");
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Item::Element(done)),
                    None => return Err(malformed(&"unbalanced end tag")),
                }
            }
            Ok(Event::Text(t)) => {
                let text = t.unescape().map_err(|e| malformed(&e))?.into_owned();
                stack.last_mut().expect("stack has document node").children.push(Item::Text(text));
            }
            Ok(Event::CData(c)) => {
                let text = String::from_utf8_lossy(&c.into_inner()).into_owned();
                stack.last_mut().expect("stack has document node").children.push(Item::Text(text));
            }
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(e) => return Err(malformed(&e)),
        }
    }
    if stack.len() != 1 {
        let open = stack.last().map_or("", |e| e.name.as_str());
        return Err(malformed(&format!("unexpected end of document inside <{open}>")));
    }
    let doc = stack.pop().expect("document node");
    doc.children
        .into_iter()
        .find_map(|c| match c {
            Item::Element(e) => Some(e),
            Item::Text(_) => None,
        })
        .ok_or_else(|| malformed(&"no root element"))
}

fn child<'a>(node: Node<'a>, name: &str) -> Option<Node<'a>> {
    node.elements().find(|c| c.has_tag_name(name))
}

fn children<'a>(node: Node<'a>, name: &'a str) -> impl Iterator<Item = Node<'a>> + 'a {
    node.elements().filter(move |c| c.has_tag_name(name))
}

/// All text below `node`, inline markup removed, whitespace collapsed.
fn deep_text(node: Node) -> String {
    let mut raw = String::new();
    node.collect_text(&mut raw);
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn parse_esearch(body: &str) -> Result<EsearchPage, String> {
    let root = &parse_doc(body)?;
    if !root.has_tag_name("eSearchResult") {
        return Err(format!("expected eSearchResult, found {}", root.name));
    }
    if let Some(err) = child(root, "ERROR") {
        return Err(format!("server error: {}", deep_text(err)));
    }
    let count_node = child(root, "Count").ok_or("missing Count")?;
    let count: u64 = deep_text(count_node)
        .parse()
        .map_err(|e| format!("bad Count: {e}"))?;
    let mut ids = Vec::new();
    if let Some(list) = child(root, "IdList") {
        for id in children(list, "Id") {
            ids.push(Pmid::new(deep_text(id)).map_err(|e| e.to_string())?);
        }
    }
    let query_translation = child(root, "QueryTranslation")
        .map(deep_text)
        .filter(|s| !s.is_empty());
    Ok(EsearchPage {
        count,
        ids,
        query_translation,
    })
}

fn month_number(m: &str) -> Option<u32> {
    if let Ok(n) = m.parse::<u32>() {
        return (1..=12).contains(&n).then_some(n);
    }
    const NAMES: [&str; 12] = [
        "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
    ];
    let lower = m.to_ascii_lowercase();
    NAMES
        .iter()
        .position(|n| lower.starts_with(n))
        .map(|i| i as u32 + 1)
}

/// `<PubDate>` with Year/Month/Day or a free-form `<MedlineDate>`
/// ("1998 Dec-1999 Jan"). Missing month/day default to 1.
fn parse_pub_date(node: Node) -> Option<NaiveDate> {
    let (year, month, day) = if let Some(y) = child(node, "Year") {
        let year: i32 = deep_text(y).parse().ok()?;
        let month = child(node, "Month")
            .and_then(|m| month_number(&deep_text(m)))
            .unwrap_or(1);
        let day = child(node, "Day")
            .and_then(|d| deep_text(d).parse().ok())
            .unwrap_or(1);
        (year, month, day)
    } else {
        let text = deep_text(child(node, "MedlineDate")?);
        let mut parts = text.split(|c: char| c.is_whitespace() || c == '-');
        let year: i32 = parts.next()?.parse().ok()?;
        let month = parts.next().and_then(month_number).unwrap_or(1);
        (year, month, 1)
    };
    NaiveDate::from_ymd_opt(year, month, day).or_else(|| NaiveDate::from_ymd_opt(year, month, 1))
}

fn author_name(author: Node) -> Option<String> {
    if let Some(c) = child(author, "CollectiveName") {
        return Some(deep_text(c));
    }
    let last = deep_text(child(author, "LastName")?);
    match child(author, "Initials").or_else(|| child(author, "ForeName")) {
        Some(i) => Some(format!("{last} {}", deep_text(i))),
        None => Some(last),
    }
}

fn parse_article(node: Node) -> Result<RawRecord, String> {
    let citation = child(node, "MedlineCitation").ok_or("PubmedArticle without MedlineCitation")?;
    let pmid_node = child(citation, "PMID").ok_or("MedlineCitation without PMID")?;
    let pmid = Pmid::new(deep_text(pmid_node)).map_err(|e| e.to_string())?;
    let article = child(citation, "Article").ok_or_else(|| format!("PMID {pmid}: missing Article"))?;

    let title = child(article, "ArticleTitle")
        .map(deep_text)
        .filter(|t| !t.is_empty())
        .or_else(|| child(article, "VernacularTitle").map(deep_text))
        .filter(|t| !t.is_empty())
        .ok_or_else(|| format!("PMID {pmid}: no ArticleTitle"))?;

    let abstract_text = child(article, "Abstract")
        .map(|a| {
            children(a, "AbstractText")
                .map(deep_text)
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .unwrap_or_default();

    let language_codes = children(article, "Language")
        .map(|l| deep_text(l).to_ascii_lowercase())
        .filter(|l| !l.is_empty())
        .collect();

    let publication_date = child(article, "Journal")
        .and_then(|j| child(j, "JournalIssue"))
        .and_then(|ji| child(ji, "PubDate"))
        .and_then(parse_pub_date);

    let authors = child(article, "AuthorList")
        .map(|list| children(list, "Author").filter_map(author_name).collect())
        .unwrap_or_default();

    let keywords = children(citation, "KeywordList")
        .flat_map(|kl| children(kl, "Keyword").map(deep_text).collect::<Vec<_>>())
        .filter(|k| !k.is_empty())
        .collect();

    Ok(RawRecord {
        pmid,
        title,
        abstract_text,
        language_codes,
        publication_date,
        authors,
        keywords,
    })
}

/// Parse a `PubmedArticleSet`. Book records are skipped.
pub fn parse_efetch(body: &str) -> Result<Vec<RawRecord>, String> {
    let root = &parse_doc(body)?;
    if !root.has_tag_name("PubmedArticleSet") {
        return Err(format!("expected PubmedArticleSet, found {}", root.name));
    }
    let mut out = Vec::new();
    for node in root.elements() {
        match node.name.as_str() {
            "PubmedArticle" => out.push(parse_article(node)?),
            other => log::debug!("skipping {other} in efetch response"),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"<?xml version="1.0" ?>
<!DOCTYPE PubmedArticleSet PUBLIC "-//NLM//DTD PubMedArticle, 1st January 2024//EN" "https://dtd.nlm.nih.gov/ncbi/pubmed/out/pubmed_240101.dtd">
<PubmedArticleSet>
 <PubmedArticle>
  <MedlineCitation Status="MEDLINE" Owner="NLM">
   <PMID Version="1">111</PMID>
   <Article>
    <Journal><JournalIssue><PubDate><Year>2019</Year><Month>Mar</Month></PubDate></JournalIssue></Journal>
    <ArticleTitle>Double <i>gloving</i> in surgery.</ArticleTitle>
    <Abstract>
     <AbstractText Label="BACKGROUND">Gloves perforate.</AbstractText>
     <AbstractText Label="RESULTS">Changing gloves helps.</AbstractText>
    </Abstract>
    <AuthorList><Author><LastName>Smith</LastName><Initials>J</Initials></Author><Author><CollectiveName>Study Group</CollectiveName></Author></AuthorList>
    <Language>eng</Language>
   </Article>
   <KeywordList><Keyword>gloves</Keyword></KeywordList>
  </MedlineCitation>
  <PubmedData><ReferenceList><Reference><ArticleIdList><ArticleId IdType="pubmed">999</ArticleId></ArticleIdList></Reference></ReferenceList></PubmedData>
 </PubmedArticle>
 <PubmedArticle>
  <MedlineCitation>
   <PMID>222</PMID>
   <Article>
    <Journal><JournalIssue><PubDate><MedlineDate>1998 Dec-1999 Jan</MedlineDate></PubDate></JournalIssue></Journal>
    <ArticleTitle>Handschuhe</ArticleTitle>
    <Language>ger</Language>
   </Article>
  </MedlineCitation>
 </PubmedArticle>
</PubmedArticleSet>"#;

    #[test]
    fn parses_two_articles() {
        let recs = parse_efetch(TWO).unwrap();
        assert_eq!(recs.len(), 2);
        let a = &recs[0];
        assert_eq!(a.pmid.as_str(), "111");
        assert_eq!(a.title, "Double gloving in surgery.");
        assert_eq!(a.abstract_text, "Gloves perforate. Changing gloves helps.");
        assert_eq!(a.language_codes, vec!["eng"]);
        assert_eq!(a.publication_date, NaiveDate::from_ymd_opt(2019, 3, 1));
        assert_eq!(a.authors, vec!["Smith J", "Study Group"]);
        assert_eq!(a.keywords, vec!["gloves"]);
        let b = &recs[1];
        assert_eq!(b.abstract_text, "");
        assert_eq!(b.language_codes, vec!["ger"]);
        assert_eq!(b.publication_date, NaiveDate::from_ymd_opt(1998, 12, 1));
    }

    #[test]
    fn truncated_body_is_an_error() {
        let cut = &TWO[..TWO.len() / 2];
        assert!(parse_efetch(cut).unwrap_err().contains("malformed"));
    }

    #[test]
    fn esearch_count_ids_translation() {
        let body = r#"<?xml version="1.0" encoding="UTF-8" ?>
<!DOCTYPE eSearchResult PUBLIC "-//NLM//DTD esearch 20060628//EN" "https://eutils.ncbi.nlm.nih.gov/eutils/dtd/20060628/esearch.dtd">
<eSearchResult><Count>284</Count><RetMax>2</RetMax><RetStart>0</RetStart>
<IdList><Id>36000001</Id><Id>36000002</Id></IdList>
<TranslationSet/><TranslationStack><TermSet><Term>glove[All Fields]</Term><Count>9999</Count></TermSet></TranslationStack>
<QueryTranslation>"gloves, surgical"[MeSH Terms]</QueryTranslation></eSearchResult>"#;
        let page = parse_esearch(body).unwrap();
        assert_eq!(page.count, 284);
        assert_eq!(page.ids.len(), 2);
        assert_eq!(page.query_translation.as_deref(), Some("\"gloves, surgical\"[MeSH Terms]"));
    }

    #[test]
    fn esearch_error_element() {
        let body = "<eSearchResult><ERROR>Invalid query</ERROR></eSearchResult>";
        assert!(parse_esearch(body).unwrap_err().contains("Invalid query"));
    }

    #[test]
    fn month_names_and_numbers() {
        assert_eq!(month_number("Sep"), Some(9));
        assert_eq!(month_number("07"), Some(7));
        assert_eq!(month_number("Spring"), None);
    }
}
