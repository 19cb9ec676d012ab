//! Splitting identifiers and statement tokens into sub-tokens.
//!
//! Splits happen at underscores (kept as tokens), lowercase→uppercase
//! boundaries, before the last capital of an acronym that precedes a
//! lowercase letter (`CLocal` → `C`, `Local`), and letter↔digit boundaries.
//! Lemma names additionally have convention suffix letters peeled from the
//! right end of each underscore fragment: `mulgA` → `mul`, `g`, `A`.
//! Every split is lossless.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shortest stem that may remain after peeling a suffix letter. Keeps short
/// words such as `mg` or `eq` intact.
pub const MIN_STEM_LEN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubTokenKind {
    Word,
    Underscore,
    SuffixLetter,
    DigitRun,
    Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubToken {
    pub text: String,
    pub kind: SubTokenKind,
}

impl SubToken {
    fn new(text: impl Into<String>, kind: SubTokenKind) -> Self {
        SubToken {
            text: text.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuffixLexicon {
    pub letters: BTreeSet<char>,
    pub enabled: bool,
}

impl Default for SuffixLexicon {
    /// A curated subset of the MathComp suffix conventions: `A` associativity,
    /// `C` commutativity, `D` distributivity, `K` cancellation, `M` morphism,
    /// `N` opposite, `P` reflection, `V` inverse, and the carrier markers
    /// `g` (groups), `n` (naturals), `z` (integers).
    fn default() -> Self {
        SuffixLexicon {
            letters: "ACDKMNPVgnz".chars().collect(),
            enabled: true,
        }
    }
}

impl SuffixLexicon {
    pub fn disabled() -> Self {
        SuffixLexicon {
            letters: BTreeSet::new(),
            enabled: false,
        }
    }

    pub fn from_letters(letters: &str) -> Self {
        SuffixLexicon {
            letters: letters.chars().filter(|c| !c.is_whitespace()).collect(),
            enabled: true,
        }
    }

    fn peels(&self, c: char) -> bool {
        self.enabled && c.is_alphabetic() && self.letters.contains(&c)
    }

    pub fn validate(&self) -> Result<(), SubtokError> {
        if self.enabled && self.letters.is_empty() {
            return Err(SubtokError::EmptyLexicon);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubtokError {
    #[error("cannot sub-tokenize an empty name")]
    EmptyName,
    #[error("suffix lexicon is enabled but has no letters")]
    EmptyLexicon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Lower,
    Upper,
    Digit,
    Space,
    Symbol,
}

fn class(c: char) -> Class {
    if c.is_ascii_digit() {
        Class::Digit
    } else if c.is_uppercase() {
        Class::Upper
    } else if c.is_alphabetic() {
        Class::Lower
    } else if c.is_whitespace() {
        Class::Space
    } else {
        Class::Symbol
    }
}

fn is_letter(c: Class) -> bool {
    matches!(c, Class::Lower | Class::Upper)
}

/// Splits a fragment containing no underscores at case, digit and symbol boundaries.
fn split_fragment(chars: &[char], out: &mut Vec<SubToken>) {
    let mut start = 0;
    for i in 1..=chars.len() {
        let boundary = i == chars.len() || {
            let (prev, cur) = (class(chars[i - 1]), class(chars[i]));
            let next = chars.get(i + 1).map(|&c| class(c));
            match (prev, cur) {
                (a, b) if is_letter(a) && is_letter(b) => {
                    (a == Class::Lower && b == Class::Upper)
                        || (a == Class::Upper && b == Class::Upper && next == Some(Class::Lower))
                }
                (a, b) => a != b,
            }
        };
        if boundary {
            let text: String = chars[start..i].iter().collect();
            let kind = match class(chars[start]) {
                Class::Lower | Class::Upper => SubTokenKind::Word,
                Class::Digit => SubTokenKind::DigitRun,
                Class::Space | Class::Symbol => SubTokenKind::Symbol,
            };
            out.push(SubToken::new(text, kind));
            start = i;
        }
    }
}

/// Peels trailing digit runs and suffix letters, then splits the remaining stem.
fn split_with_suffixes(chars: &[char], lex: &SuffixLexicon, out: &mut Vec<SubToken>) {
    let mut end = chars.len();
    let mut tail = Vec::new();
    while end > 0 {
        let last = chars[end - 1];
        if last.is_ascii_digit() {
            let mut start = end - 1;
            while start > 0 && chars[start - 1].is_ascii_digit() {
                start -= 1;
            }
            tail.push(SubToken::new(
                chars[start..end].iter().collect::<String>(),
                SubTokenKind::DigitRun,
            ));
            end = start;
        } else if lex.peels(last) && end - 1 >= MIN_STEM_LEN {
            tail.push(SubToken::new(last, SubTokenKind::SuffixLetter));
            end -= 1;
        } else {
            break;
        }
    }
    split_fragment(&chars[..end], out);
    out.extend(tail.into_iter().rev());
}

fn split(text: &str, lex: &SuffixLexicon) -> Vec<SubToken> {
    let mut out = Vec::new();
    let mut fragment: Vec<char> = Vec::new();
    let flush = |fragment: &mut Vec<char>, out: &mut Vec<SubToken>| {
        if !fragment.is_empty() {
            split_with_suffixes(fragment, lex, out);
            fragment.clear();
        }
    };
    for c in text.chars() {
        if c == '_' {
            flush(&mut fragment, &mut out);
            out.push(SubToken::new("_", SubTokenKind::Underscore));
        } else {
            fragment.push(c);
        }
    }
    flush(&mut fragment, &mut out);
    out
}

pub fn subtokenize_name(name: &str, lex: &SuffixLexicon) -> Result<Vec<SubToken>, SubtokError> {
    if name.is_empty() {
        return Err(SubtokError::EmptyName);
    }
    Ok(split(name, lex))
}

/// Same splitting as names, without suffix peeling; symbols pass through whole.
pub fn subtokenize_statement_token(tok: &str) -> Vec<SubToken> {
    split(tok, &SuffixLexicon::disabled())
}

pub fn detokenize<S: AsRef<str>>(subs: &[S]) -> String {
    subs.iter().map(AsRef::as_ref).collect()
}

/// Convenience: sub-token texts of a name.
pub fn name_texts(name: &str, lex: &SuffixLexicon) -> Result<Vec<String>, SubtokError> {
    Ok(subtokenize_name(name, lex)?
        .into_iter()
        .map(|s| s.text)
        .collect())
}

pub fn statement_texts(tok: &str) -> impl Iterator<Item = String> {
    subtokenize_statement_token(tok).into_iter().map(|s| s.text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(subs: &[SubToken]) -> Vec<&str> {
        subs.iter().map(|s| s.text.as_str()).collect()
    }

    fn name(n: &str) -> Vec<String> {
        name_texts(n, &SuffixLexicon::default()).unwrap()
    }

    #[test]
    fn mathcomp_examples() {
        assert_eq!(name("extprod_mulgA"), ["extprod", "_", "mul", "g", "A"]);
        assert_eq!(name("mg_eq_nerode"), ["mg", "_", "eq", "_", "nerode"]);
        assert_eq!(name("foo"), ["foo"]);
        assert_eq!(name("mulnCA"), ["mul", "n", "C", "A"]);
        assert_eq!(name("eqP"), ["eq", "P"]);
    }

    #[test]
    fn suffix_kinds_are_marked() {
        let subs = subtokenize_name("extprod_mulgA", &SuffixLexicon::default()).unwrap();
        let kinds: Vec<_> = subs.iter().map(|s| s.kind).collect();
        use SubTokenKind::*;
        assert_eq!(kinds, [Word, Underscore, Word, SuffixLetter, SuffixLetter]);
    }

    #[test]
    fn digits_split_and_lexicon_controls_peeling() {
        assert_eq!(name("addn0"), ["add", "n", "0"]);
        let no_n = SuffixLexicon::from_letters("ACg");
        assert_eq!(texts(&subtokenize_name("addn0", &no_n).unwrap()), ["addn", "0"]);
        assert_eq!(name("x12y"), ["x", "12", "y"]);
    }

    #[test]
    fn peeling_keeps_a_stem() {
        assert_eq!(name("gA"), ["g", "A"]);
        assert_eq!(name("ng"), ["ng"]);
        assert_eq!(name("A"), ["A"]);
    }

    #[test]
    fn statement_tokens() {
        assert_eq!(texts(&subtokenize_statement_token("forall")), ["forall"]);
        assert_eq!(
            texts(&subtokenize_statement_token("CLocalAssum")),
            ["C", "Local", "Assum"]
        );
        assert_eq!(texts(&subtokenize_statement_token("->")), ["->"]);
        assert_eq!(texts(&subtokenize_statement_token("mulgA")), ["mulg", "A"]);
        assert_eq!(texts(&subtokenize_statement_token("_*_")), ["_", "*", "_"]);
        assert_eq!(texts(&subtokenize_statement_token("x'")), ["x", "'"]);
    }

    #[test]
    fn empty_name_rejected() {
        assert_eq!(
            subtokenize_name("", &SuffixLexicon::default()),
            Err(SubtokError::EmptyName)
        );
    }

    #[test]
    fn detokenize_inverts() {
        assert_eq!(detokenize(&["mg", "_", "eq", "_", "nerode"]), "mg_eq_nerode");
        assert_eq!(detokenize::<&str>(&[]), "");
    }

    proptest! {
        #[test]
        fn lossless_and_nonempty(id in "[A-Za-z_][A-Za-z0-9_']{0,20}") {
            let subs = subtokenize_name(&id, &SuffixLexicon::default()).unwrap();
            prop_assert!(subs.iter().all(|s| !s.text.is_empty()));
            prop_assert_eq!(detokenize(&texts(&subs)), id.clone());
            let st = subtokenize_statement_token(&id);
            prop_assert_eq!(detokenize(&texts(&st)), id);
        }
    }
}
