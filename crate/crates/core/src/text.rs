//! Text normalization shared by rule matching, featurization and retrieval.
//!
//! Normalization pipeline: Unicode compatibility fold (NFKC), lowercase,
//! every non-alphanumeric character (hyphens included) becomes a space,
//! whitespace collapses. Matching additionally stems each token with the
//! fixed suffix rules in [`stem`].
//!
//! Stemming rules, applied in order to tokens longer than three characters:
//!
//! 1. plurals: `-ies` → `-y`; a trailing `-s` is dropped unless the word ends
//!    in `-ss`, `-us` or `-is`;
//! 2. past/gerund: `-ied` → `-y`; `-eed` is left alone; otherwise `-ed` or
//!    `-ing` is dropped when the remaining stem contains a vowel, and a
//!    doubled final consonant (other than `l`, `s`, `z`) is undoubled;
//! 3. a trailing `-e` is dropped.
//!
//! Step 3 is the canonical form of e-restoration: instead of re-adding the
//! `e` to `glov` (from `gloving`) we remove it from `glove`, so every
//! inflection of a word lands on the same stem.

use std::collections::HashSet;
use std::sync::OnceLock;

use unicode_normalization::UnicodeNormalization;

const STOPWORDS_TXT: &str = include_str!("stopwords.txt");

/// Folds, lowercases and splits `text` into unstemmed tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let folded: String = text
        .nfkc()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    folded.split_whitespace().map(str::to_owned).collect()
}

/// Tokens after normalization and stemming; the form rules are matched on.
pub fn stemmed_tokens(text: &str) -> Vec<String> {
    tokenize(text).iter().map(|t| stem(t)).collect()
}

/// Normalized text joined by single spaces (no stemming).
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

fn is_vowel(bytes: &[char], i: usize) -> bool {
    match bytes[i] {
        'a' | 'e' | 'i' | 'o' | 'u' => true,
        'y' => i > 0,
        _ => false,
    }
}

fn has_vowel(chars: &[char]) -> bool {
    (0..chars.len()).any(|i| is_vowel(chars, i))
}

fn undouble(stem: &mut Vec<char>) {
    let n = stem.len();
    if n >= 2 && stem[n - 1] == stem[n - 2] {
        let c = stem[n - 1];
        if c.is_alphabetic() && !matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'l' | 's' | 'z') {
            stem.pop();
        }
    }
}

fn ends_with(chars: &[char], suffix: &str) -> bool {
    let suffix: Vec<char> = suffix.chars().collect();
    chars.len() >= suffix.len() && chars[chars.len() - suffix.len()..] == suffix[..]
}

/// Light suffix stemmer; see the module docs for the rule set.
pub fn stem(token: &str) -> String {
    let mut w: Vec<char> = token.chars().collect();
    if w.len() <= 3 || !w.iter().all(|c| c.is_alphabetic()) {
        return token.to_owned();
    }

    if ends_with(&w, "ies") && w.len() > 4 {
        w.truncate(w.len() - 3);
        w.push('y');
    } else if ends_with(&w, "s")
        && !ends_with(&w, "ss")
        && !ends_with(&w, "us")
        && !ends_with(&w, "is")
    {
        w.pop();
    }

    if ends_with(&w, "ied") && w.len() > 4 {
        w.truncate(w.len() - 3);
        w.push('y');
    } else if ends_with(&w, "eed") {
    } else if ends_with(&w, "ed") && has_vowel(&w[..w.len() - 2]) {
        w.truncate(w.len() - 2);
        undouble(&mut w);
    } else if ends_with(&w, "ing") && has_vowel(&w[..w.len() - 3]) {
        w.truncate(w.len() - 3);
        undouble(&mut w);
    }

    if w.len() > 3 && ends_with(&w, "e") {
        w.pop();
    }
    w.into_iter().collect()
}

/// The fixed English stop-word list shipped in `src/stopwords.txt`.
pub fn stopwords() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| {
        STOPWORDS_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Position of `needle` as a contiguous run inside `haystack`.
pub fn contains_sequence(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_folds_case_hyphens_and_punctuation() {
        assert_eq!(
            tokenize("Double-Gloving, (RCT)  reduced\tperforations."),
            vec!["double", "gloving", "rct", "reduced", "perforations"]
        );
        // compatibility fold: ligature and full-width digits
        assert_eq!(tokenize("ﬁbre １２"), vec!["fibre", "12"]);
    }

    #[test]
    fn inflections_share_a_stem() {
        let groups: &[&[&str]] = &[
            &["glove", "gloves", "gloved", "gloving"],
            &["change", "changes", "changed", "changing", "changings"],
            &["wash", "washes", "washed", "washing"],
            &["puncture", "punctures", "punctured", "puncturing"],
            &["stop", "stops", "stopped", "stopping"],
            &["study", "studies", "studied"],
            &["perforation", "perforations"],
            &["operate", "operated", "operating"],
        ];
        for group in groups {
            let first = stem(group[0]);
            for w in group.iter() {
                assert_eq!(stem(w), first, "{w} vs {}", group[0]);
            }
        }
    }

    #[test]
    fn short_and_special_words_are_untouched() {
        assert_eq!(stem("rat"), "rat");
        assert_eq!(stem("glass"), "glass");
        assert_eq!(stem("virus"), "virus");
        assert_eq!(stem("analysis"), "analysis");
        assert_eq!(stem("need"), "need");
        assert_eq!(stem("string"), "string");
        assert_eq!(stem("covid19"), "covid19");
        // doubled l/s/z are kept
        assert_eq!(stem("falling"), "fall");
        assert_eq!(stem("missed"), "miss");
    }

    #[test]
    fn contiguous_sequence_respects_token_boundaries() {
        let hay = stemmed_tokens("operating theatre staff");
        assert!(!contains_sequence(&hay, &stemmed_tokens("rat")));
        assert!(contains_sequence(&hay, &stemmed_tokens("operate theatre")));
        assert!(!contains_sequence(&hay, &stemmed_tokens("theatre operating")));
    }

    #[test]
    fn stopword_list_loads() {
        assert!(is_stopword("the"));
        assert!(is_stopword("and"));
        assert!(!is_stopword("glove"));
    }
}
