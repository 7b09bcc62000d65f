//! Corpus domain types, tokenization and sentence splitting.
//!
//! Offsets on [`Token`] are *character* offsets (Unicode scalar values), not
//! byte offsets, so that they stay meaningful for consumers in other
//! languages reading the JSONL files.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Violation of a data contract on one of the corpus types.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{what}: {reason}")]
pub struct ContractError {
    pub what: String,
    pub reason: String,
}

impl ContractError {
    pub fn new(what: impl Into<String>, reason: impl Into<String>) -> Self {
        ContractError {
            what: what.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: String,
    /// Lowercase with underscores, e.g. `educated_at`.
    pub name: String,
}

impl Relation {
    pub fn validate(&self) -> Result<(), ContractError> {
        if self.id.is_empty() {
            return Err(ContractError::new("relation", "empty id"));
        }
        if self.name.is_empty() {
            return Err(ContractError::new(
                format!("relation {}", self.id),
                "empty name",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl Entity {
    pub fn validate(&self) -> Result<(), ContractError> {
        let what = || format!("entity {}", self.id);
        if self.id.is_empty() {
            return Err(ContractError::new("entity", "empty id"));
        }
        if self.name.is_empty() {
            return Err(ContractError::new(what(), "empty name"));
        }
        for (i, alias) in self.aliases.iter().enumerate() {
            if self.aliases[..i].contains(alias) {
                return Err(ContractError::new(
                    what(),
                    format!("duplicate alias {alias:?}"),
                ));
            }
        }
        Ok(())
    }

    /// Canonical name followed by aliases.
    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub tokens: Vec<Token>,
    pub index: usize,
}

impl Sentence {
    pub fn new(text: impl Into<String>, index: usize) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Sentence {
            text,
            tokens,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_texts(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.clone()).collect()
    }

    /// Lowercased token texts, used for all surface matching.
    pub fn normalized_tokens(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.to_lowercase()).collect()
    }

    /// Surface form of tokens `start..=end`, taken from the source text so
    /// that inner whitespace is preserved.
    pub fn span_text(&self, start: usize, end: usize) -> Option<String> {
        if start > end || end >= self.tokens.len() {
            return None;
        }
        let from = self.tokens[start].start;
        let to = self.tokens[end].end;
        Some(self.text.chars().skip(from).take(to - from).collect())
    }

    pub fn validate(&self) -> Result<(), ContractError> {
        let what = || format!("sentence {}", self.index);
        let chars: Vec<char> = self.text.chars().collect();
        let mut last_end = 0;
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.start >= tok.end || tok.end > chars.len() {
                return Err(ContractError::new(what(), format!("token {i} has bad offsets")));
            }
            if i > 0 && tok.start < last_end {
                return Err(ContractError::new(what(), format!("token {i} overlaps")));
            }
            let slice: String = chars[tok.start..tok.end].iter().collect();
            if slice != tok.text {
                return Err(ContractError::new(
                    what(),
                    format!("token {i} text {:?} != source {slice:?}", tok.text),
                ));
            }
            last_end = tok.end;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    /// Owner entity; doubles as the document id.
    pub entity_id: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    /// Builds a document from raw article text using [`split_sentences`].
    pub fn from_text(entity_id: impl Into<String>, text: &str) -> Self {
        Self::from_sentences(entity_id, split_sentences(text))
    }

    pub fn from_sentences<S: Into<String>>(
        entity_id: impl Into<String>,
        sentences: impl IntoIterator<Item = S>,
    ) -> Self {
        Document {
            entity_id: entity_id.into(),
            sentences: sentences
                .into_iter()
                .enumerate()
                .map(|(i, s)| Sentence::new(s, i))
                .collect(),
        }
    }

    pub fn id(&self) -> &str {
        &self.entity_id
    }

    pub fn validate(&self) -> Result<(), ContractError> {
        for (i, s) in self.sentences.iter().enumerate() {
            if s.index != i {
                return Err(ContractError::new(
                    format!("document {}", self.entity_id),
                    format!("sentence at position {i} has index {}", s.index),
                ));
            }
            s.validate()?;
        }
        Ok(())
    }
}

/// On-disk document record. Either raw `text` (split with
/// [`split_sentences`]) or pre-split `sentences` must be present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub entity_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentences: Option<Vec<String>>,
}

impl DocumentRecord {
    pub fn into_document(self) -> Result<Document, ContractError> {
        match (self.sentences, self.text) {
            (Some(sentences), _) => Ok(Document::from_sentences(self.entity_id, sentences)),
            (None, Some(text)) => Ok(Document::from_text(self.entity_id, &text)),
            (None, None) => Err(ContractError::new(
                format!("document {}", self.entity_id),
                "neither text nor sentences given",
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub relation_id: String,
    pub subject_entity_id: String,
    pub object_text: String,
}

impl Fact {
    pub fn validate(&self) -> Result<(), ContractError> {
        let what = || format!("fact {}({})", self.relation_id, self.subject_entity_id);
        if self.relation_id.is_empty() || self.subject_entity_id.is_empty() {
            return Err(ContractError::new(what(), "empty relation or subject id"));
        }
        if normalized_token_texts(&self.object_text).is_empty() {
            return Err(ContractError::new(what(), "object has no tokens"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceRef {
    pub document_id: String,
    pub sentence_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub sentence_ref: SentenceRef,
    /// Inclusive.
    pub token_start: usize,
    /// Inclusive.
    pub token_end: usize,
    pub text: String,
}

impl AnswerSpan {
    pub fn from_tokens(
        document_id: &str,
        sentence: &Sentence,
        token_start: usize,
        token_end: usize,
    ) -> Option<Self> {
        let text = sentence.span_text(token_start, token_end)?;
        Some(AnswerSpan {
            sentence_ref: SentenceRef {
                document_id: document_id.to_string(),
                sentence_index: sentence.index,
            },
            token_start,
            token_end,
            text,
        })
    }

    pub fn validate_in(&self, document_id: &str, sentence: &Sentence) -> Result<(), ContractError> {
        let what = || format!("answer {:?}", self.text);
        if self.sentence_ref.document_id != document_id
            || self.sentence_ref.sentence_index != sentence.index
        {
            return Err(ContractError::new(what(), "refers to a different sentence"));
        }
        match sentence.span_text(self.token_start, self.token_end) {
            Some(t) if t == self.text => Ok(()),
            Some(t) => Err(ContractError::new(what(), format!("span reads {t:?}"))),
            None => Err(ContractError::new(what(), "token range out of bounds")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFillingInstance {
    pub relation_id: String,
    pub entity_id: String,
    pub document_id: String,
    pub sentence: Sentence,
    pub answers: Vec<AnswerSpan>,
}

impl SlotFillingInstance {
    pub fn sentence_ref(&self) -> SentenceRef {
        SentenceRef {
            document_id: self.document_id.clone(),
            sentence_index: self.sentence.index,
        }
    }

    /// Checks every invariant; `entity` must be the instance's entity.
    pub fn validate(&self, entity: &Entity) -> Result<(), ContractError> {
        let what = || {
            format!(
                "instance ({}, {}, {}#{})",
                self.relation_id, self.entity_id, self.document_id, self.sentence.index
            )
        };
        if entity.id != self.entity_id {
            return Err(ContractError::new(what(), "entity mismatch"));
        }
        if self.answers.is_empty() {
            return Err(ContractError::new(what(), "empty answer set"));
        }
        self.sentence.validate()?;
        for a in &self.answers {
            a.validate_in(&self.document_id, &self.sentence)?;
        }
        let hay = self.sentence.normalized_tokens();
        let mentioned = entity
            .surface_forms()
            .any(|form| find_subsequence(&hay, &normalized_token_texts(form)).is_some());
        if !mentioned {
            return Err(ContractError::new(what(), "entity not mentioned in sentence"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// A question/sentence/answer-set triple. `relation_id`, `entity_id` and
/// `template_id` are metadata for splitting and reporting; scorers only see
/// the question and sentence tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RCExample {
    pub id: String,
    pub relation_id: String,
    pub entity_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    pub question: String,
    pub document_id: String,
    pub sentence: Sentence,
    pub answers: Vec<AnswerSpan>,
    pub polarity: Polarity,
}

impl RCExample {
    pub fn question_tokens(&self) -> Vec<String> {
        tokenize(&self.question).into_iter().map(|t| t.text).collect()
    }

    pub fn sentence_ref(&self) -> SentenceRef {
        SentenceRef {
            document_id: self.document_id.clone(),
            sentence_index: self.sentence.index,
        }
    }

    pub fn validate(&self) -> Result<(), ContractError> {
        let negative = self.polarity == Polarity::Negative;
        if negative != self.answers.is_empty() {
            return Err(ContractError::new(
                format!("example {}", self.id),
                "polarity disagrees with answer set",
            ));
        }
        Ok(())
    }
}

fn is_split_punct(c: char) -> bool {
    c.is_ascii_punctuation()
}

/// Whitespace tokenization with leading/trailing ASCII punctuation split off
/// one character per token, and the possessive `'s` split from its word.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut push = |s: usize, e: usize| {
        tokens.push(Token {
            text: chars[s..e].iter().collect(),
            start: s,
            end: e,
        })
    };

    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let word_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let word_end = i;

        let mut core_start = word_start;
        while core_start < word_end && is_split_punct(chars[core_start]) {
            push(core_start, core_start + 1);
            core_start += 1;
        }
        if core_start == word_end {
            continue;
        }
        let mut core_end = word_end;
        while core_end > core_start && is_split_punct(chars[core_end - 1]) {
            core_end -= 1;
        }
        let possessive = core_end - core_start > 2
            && matches!(chars[core_end - 2], '\'' | '\u{2019}')
            && matches!(chars[core_end - 1], 's' | 'S');
        if possessive {
            push(core_start, core_end - 2);
            push(core_end - 2, core_end);
        } else {
            push(core_start, core_end);
        }
        for p in core_end..word_end {
            push(p, p + 1);
        }
    }
    tokens
}

/// Lowercased token strings of `text`.
pub fn normalized_token_texts(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .map(|t| t.text.to_lowercase())
        .collect()
}

/// Position of the first contiguous occurrence of `needle` in `haystack`.
/// An empty needle never matches.
pub fn find_subsequence<T: PartialEq>(haystack: &[T], needle: &[T]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Splits raw article text after `.`, `!` or `?` when followed by
/// whitespace and an uppercase letter.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            if j > i + 1 && j < chars.len() && chars[j].is_uppercase() {
                let s: String = chars[start..=i].iter().collect();
                let s = s.trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    let rest: String = chars[start..].iter().collect();
    let rest = rest.trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(s: &str) -> Vec<String> {
        tokenize(s).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn empty_text_has_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \n\t").is_empty());
    }

    #[test]
    fn punctuation_is_split_off() {
        let toks = texts(
            "Steve Jobs was an American businessman, inventor, and industrial designer.",
        );
        assert!(toks.contains(&"businessman".to_string()));
        assert!(toks.contains(&",".to_string()));
        assert_eq!(toks.last().unwrap(), ".");
    }

    #[test]
    fn possessive_marker_is_its_own_token() {
        let text = "Who is X's spouse?";
        let toks = tokenize(text);
        let t: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(t, ["Who", "is", "X", "'s", "spouse", "?"]);
        let chars: Vec<char> = text.chars().collect();
        for tok in &toks {
            let slice: String = chars[tok.start..tok.end].iter().collect();
            assert_eq!(slice, tok.text);
        }
    }

    #[test]
    fn leading_punctuation_and_unicode() {
        assert_eq!(texts("(born in Zürich)"), ["(", "born", "in", "Zürich", ")"]);
        assert_eq!(texts("--"), ["-", "-"]);
        assert_eq!(texts("it's"), ["it", "'s"]);
    }

    #[test]
    fn sentence_splitting() {
        let s = split_sentences("He was born in Ulm. He moved to Bern! Did he? yes. Then Zürich.");
        assert_eq!(
            s,
            ["He was born in Ulm.", "He moved to Bern!", "Did he? yes.", "Then Zürich."]
        );
        assert!(split_sentences("").is_empty());
        assert_eq!(split_sentences("No terminal"), ["No terminal"]);
    }

    #[test]
    fn span_text_uses_source_slice() {
        let s = Sentence::new("awarded by the University of Zürich, with", 0);
        let start = s.tokens.iter().position(|t| t.text == "University").unwrap();
        assert_eq!(s.span_text(start, start + 2).unwrap(), "University of Zürich");
        assert!(s.span_text(3, 2).is_none());
        assert!(s.span_text(0, 99).is_none());
    }

    #[test]
    fn entity_alias_duplicates_rejected() {
        let e = Entity {
            id: "Q1".into(),
            name: "A".into(),
            aliases: vec!["B".into(), "B".into()],
        };
        assert!(e.validate().is_err());
    }

    #[test]
    fn instance_requires_entity_mention() {
        let sentence = Sentence::new("Turing obtained his PhD from Princeton", 0);
        let entity = Entity {
            id: "e".into(),
            name: "Alan Turing".into(),
            aliases: vec!["Turing".into()],
        };
        let answer = AnswerSpan::from_tokens("e", &sentence, 5, 5).unwrap();
        let mut inst = SlotFillingInstance {
            relation_id: "educated_at".into(),
            entity_id: "e".into(),
            document_id: "e".into(),
            sentence,
            answers: vec![answer],
        };
        inst.validate(&entity).unwrap();
        let no_alias = Entity {
            aliases: vec![],
            ..entity.clone()
        };
        assert!(inst.validate(&no_alias).is_err());
        inst.answers.clear();
        assert!(inst.validate(&entity).is_err());
    }

    proptest! {
        #[test]
        fn tokens_reconstruct_source(text in "\\PC{0,60}") {
            let toks = tokenize(&text);
            let chars: Vec<char> = text.chars().collect();
            let mut last = 0;
            for t in &toks {
                prop_assert!(t.start < t.end);
                prop_assert!(t.start >= last);
                let slice: String = chars[t.start..t.end].iter().collect();
                prop_assert_eq!(&slice, &t.text);
                last = t.end;
            }
            prop_assert_eq!(toks, tokenize(&text));
        }

        #[test]
        fn sentence_serde_round_trip(text in "[A-Za-z ,.'?]{0,40}", idx in 0usize..50) {
            let s = Sentence::new(text, idx);
            let json = serde_json::to_string(&s).unwrap();
            let back: Sentence = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(s, back);
        }
    }
}
