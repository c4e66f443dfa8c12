//! Automatic linguistic tags for sentence pairs.
//!
//! Lexical relations come from a pluggable lemma-pair resource, the
//! syntactic tags from Penn treebank labels (supplied, read from a bracketed
//! parse, or produced by a small rule tagger) and negation from keywords.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Premise length above which a pair is LONG.
pub const LONG_PREMISE: usize = 30;
/// Hypothesis length above which a pair is LONG.
pub const LONG_HYPOTHESIS: usize = 16;

pub const NEGATION_WORDS: [&str; 7] = ["no", "not", "n't", "never", "nobody", "nothing", "none"];

pub const QUANTIFIER_WORDS: [&str; 20] = [
    "all", "no", "some", "both", "group", "every", "each", "many", "few", "several", "most", "any",
    "none", "couple", "lot", "lots", "multiple", "numerous", "either", "neither",
];

const NUMBER_WORDS: [&str; 21] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "thirteen", "fourteen", "fifteen", "twenty", "thirty", "hundred", "thousand",
    "dozen", "million",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tag {
    Synonym,
    Antonym,
    Quantifier,
    Pronoun,
    DiffTense,
    Superlative,
    BareNp,
    Negation,
    Long,
}

impl Tag {
    pub const ALL: [Tag; 9] = [
        Tag::Synonym,
        Tag::Antonym,
        Tag::Quantifier,
        Tag::Pronoun,
        Tag::DiffTense,
        Tag::Superlative,
        Tag::BareNp,
        Tag::Negation,
        Tag::Long,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Synonym => "SYNONYM",
            Tag::Antonym => "ANTONYM",
            Tag::Quantifier => "QUANTIFIER",
            Tag::Pronoun => "PRONOUN",
            Tag::DiffTense => "DIFF_TENSE",
            Tag::Superlative => "SUPERLATIVE",
            Tag::BareNp => "BARE_NP",
            Tag::Negation => "NEGATION",
            Tag::Long => "LONG",
        }
    }

    pub fn parse(s: &str) -> Option<Tag> {
        let norm = normalize_tag_name(s);
        Tag::ALL.into_iter().find(|t| t.name() == norm)
    }
}

impl core::fmt::Display for Tag {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Tags assigned by human annotators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ManualTag {
    Paraphrase,
    Generalisation,
    Entity,
    Verb,
    Insertion,
    Unrelated,
    Quantifier,
    WorldKnowledge,
    Voice,
    Swap,
}

impl ManualTag {
    pub const ALL: [ManualTag; 10] = [
        ManualTag::Paraphrase,
        ManualTag::Generalisation,
        ManualTag::Entity,
        ManualTag::Verb,
        ManualTag::Insertion,
        ManualTag::Unrelated,
        ManualTag::Quantifier,
        ManualTag::WorldKnowledge,
        ManualTag::Voice,
        ManualTag::Swap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ManualTag::Paraphrase => "PARAPHRASE",
            ManualTag::Generalisation => "GENERALISATION",
            ManualTag::Entity => "ENTITY",
            ManualTag::Verb => "VERB",
            ManualTag::Insertion => "INSERTION",
            ManualTag::Unrelated => "UNRELATED",
            ManualTag::Quantifier => "QUANTIFIER",
            ManualTag::WorldKnowledge => "WORLD_KNOWLEDGE",
            ManualTag::Voice => "VOICE",
            ManualTag::Swap => "SWAP",
        }
    }

    pub fn parse(s: &str) -> Option<ManualTag> {
        let norm = normalize_tag_name(s);
        let norm = if norm == "GENERALIZATION" { "GENERALISATION".to_string() } else { norm };
        ManualTag::ALL.into_iter().find(|t| t.name() == norm)
    }
}

fn normalize_tag_name(s: &str) -> String {
    s.trim()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_uppercase() })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet {
    pub automatic: BTreeSet<Tag>,
    #[serde(default)]
    pub manual: BTreeSet<ManualTag>,
}

impl TagSet {
    pub fn has(&self, tag: Tag) -> bool {
        self.automatic.contains(&tag)
    }

    pub fn set(&mut self, tag: Tag, on: bool) {
        if on {
            self.automatic.insert(tag);
        } else {
            self.automatic.remove(&tag);
        }
    }

    /// Names of every tag held, automatic first. Manual tags carry a
    /// [`MANUAL_PREFIX`] so the two QUANTIFIER tags stay distinct.
    pub fn names(&self) -> Vec<String> {
        self.automatic
            .iter()
            .map(|t| String::from(t.name()))
            .chain(self.manual.iter().map(|t| format!("{MANUAL_PREFIX}{}", t.name())))
            .collect()
    }

    /// Adds a tag given by name, `manual:`-prefixed names going to the manual set.
    pub fn insert_name(&mut self, name: &str) -> Result<()> {
        if let Some(rest) = name.trim().strip_prefix(MANUAL_PREFIX) {
            let t = ManualTag::parse(rest).ok_or_else(|| Error::Invalid(format!("unknown manual tag {rest:?}")))?;
            self.manual.insert(t);
        } else {
            let t = Tag::parse(name).ok_or_else(|| Error::Invalid(format!("unknown tag {name:?}")))?;
            self.automatic.insert(t);
        }
        Ok(())
    }
}

pub const MANUAL_PREFIX: &str = "manual:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Synonym,
    Antonym,
}

/// Symmetric lemma-pair lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LexicalResource {
    pairs: BTreeMap<(String, String), Relation>,
}

impl LexicalResource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: &str, b: &str, rel: Relation) {
        let (a, b) = (a.to_lowercase(), b.to_lowercase());
        self.pairs.insert(ordered(a, b), rel);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Parses `word1 TAB word2 TAB syn|ant` lines. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() != 3 || cols[0].is_empty() || cols[1].is_empty() {
                return Err(Error::Invalid(format!(
                    "lexical resource line {}: expected word1<TAB>word2<TAB>syn|ant",
                    i + 1
                )));
            }
            let rel = match cols[2] {
                "syn" | "synonym" => Relation::Synonym,
                "ant" | "antonym" => Relation::Antonym,
                other => {
                    return Err(Error::Invalid(format!(
                        "lexical resource line {}: unknown relation {other:?}",
                        i + 1
                    )))
                }
            };
            lex.insert(cols[0], cols[1], rel);
        }
        Ok(lex)
    }

    /// Relation between two words, trying crude lemmas of each.
    pub fn relation(&self, a: &str, b: &str) -> Option<Relation> {
        let la = lemmas(a);
        let lb = lemmas(b);
        for x in &la {
            for y in &lb {
                if let Some(r) = self.pairs.get(&ordered(x.clone(), y.clone())) {
                    return Some(*r);
                }
            }
        }
        None
    }
}

fn ordered(a: String, b: String) -> (String, String) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

const IRREGULAR: [(&str, &str); 12] = [
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("people", "person"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("ran", "run"),
    ("sat", "sit"),
    ("ate", "eat"),
    ("wore", "wear"),
];

/// The lowercased word followed by suffix-stripped candidates.
pub fn lemmas(word: &str) -> Vec<String> {
    let w = word.to_lowercase();
    let mut out = alloc::vec![w.clone()];
    let mut push = |s: String| {
        if s.len() >= 2 && !out.contains(&s) {
            out.push(s);
        }
    };
    if let Some((_, base)) = IRREGULAR.iter().find(|(form, _)| *form == w) {
        push(base.to_string());
    }
    if let Some(stem) = w.strip_suffix("ies") {
        push(format!("{stem}y"));
    }
    if let Some(stem) = w.strip_suffix("es") {
        push(stem.to_string());
    }
    if !w.ends_with("ss") {
        if let Some(stem) = w.strip_suffix('s') {
            push(stem.to_string());
        }
    }
    if let Some(stem) = w.strip_suffix("ing") {
        push(stem.to_string());
        push(format!("{stem}e"));
    }
    if let Some(stem) = w.strip_suffix("ed") {
        push(stem.to_string());
        push(format!("{stem}e"));
    }
    out
}

/// Extracts `(token, tag)` leaves from a bracketed parse such as
/// `(ROOT (S (NP (DT A) (NN man)) (VP (VBZ runs))))`.
pub fn pos_from_parse(parse: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let bytes: Vec<char> = parse.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == '(' {
            // A leaf is "(TAG token)" with no nested bracket before ')'.
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && bytes[j] != '(' && bytes[j] != ')' {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == ')' {
                let inner: String = bytes[start..j].iter().collect();
                let mut parts = inner.split_whitespace();
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(tag), Some(tok), None) => out.push((tok.to_string(), tag.to_string())),
                    _ => return Err(Error::Invalid(format!("malformed parse leaf {inner:?}"))),
                }
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    if out.is_empty() {
        return Err(Error::Invalid("parse contains no leaves".into()));
    }
    Ok(out)
}

/// Reads `token TAB tag` lines; sentences are separated by blank lines.
pub fn parse_pos_file(text: &str) -> Result<Vec<Vec<(String, String)>>> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(core::mem::take(&mut current));
            }
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next(), cols.next()) {
            (Some(tok), Some(tag), None) if !tok.is_empty() && !tag.trim().is_empty() => {
                current.push((tok.to_string(), tag.trim().to_string()))
            }
            _ => return Err(Error::Invalid(format!("POS line {}: expected token<TAB>tag", i + 1))),
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

/// Fallback tagger that only distinguishes the classes the tag rules read.
pub fn rule_tag(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| rule_tag_word(t).to_string()).collect()
}

fn rule_tag_word(token: &str) -> &'static str {
    let w = token.to_lowercase();
    let w = w.as_str();
    if !w.is_empty() && w.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.') && w.chars().any(|c| c.is_ascii_digit()) {
        return "CD";
    }
    if NUMBER_WORDS.contains(&w) {
        return "CD";
    }
    match w {
        "i" | "you" | "he" | "she" | "it" | "we" | "they" | "me" | "him" | "us" | "them"
        | "himself" | "herself" | "itself" | "themselves" | "someone" | "somebody"
        | "everyone" | "everybody" | "nobody" | "anyone" => return "PRP",
        "his" | "her" | "its" | "their" | "our" | "my" | "your" => return "PRP$",
        "who" | "whom" | "what" => return "WP",
        "whose" => return "WP$",
        "all" | "both" => return "PDT",
        "best" | "worst" | "biggest" | "largest" | "smallest" | "tallest" | "oldest"
        | "youngest" => return "JJS",
        "most" | "least" => return "RBS",
        "is" | "has" | "does" => return "VBZ",
        "are" | "am" | "have" | "do" => return "VBP",
        "was" | "were" | "had" | "did" => return "VBD",
        "be" => return "VB",
        "been" => return "VBN",
        "being" => return "VBG",
        "a" | "an" | "the" | "some" | "every" | "each" | "any" | "no" | "this" | "that"
        | "these" | "those" | "another" => return "DT",
        "not" | "n't" | "never" => return "RB",
        _ => {}
    }
    const NOT_SUPERLATIVE: [&str; 16] = [
        "rest", "test", "vest", "nest", "west", "chest", "forest", "interest", "guest",
        "contest", "quest", "crest", "honest", "modest", "harvest", "protest",
    ];
    const NOT_GERUND: [&str; 12] = [
        "building", "clothing", "ceiling", "morning", "evening", "thing", "something",
        "nothing", "anything", "everything", "king", "ring",
    ];
    if w.len() > 5 && w.ends_with("est") && !NOT_SUPERLATIVE.contains(&w) {
        return "JJS";
    }
    if w.len() > 4 && w.ends_with("ing") && !NOT_GERUND.contains(&w) {
        return "VBG";
    }
    if w.len() > 4 && w.ends_with("ed") && !w.ends_with("eed") {
        return "VBD";
    }
    "NN"
}

fn is_negation(token: &str) -> bool {
    let w = token.to_lowercase();
    NEGATION_WORDS.contains(&w.as_str()) || (w.len() > 3 && w.ends_with("n't"))
}

pub fn is_quantifier_word(token: &str) -> bool {
    QUANTIFIER_WORDS.contains(&token.to_lowercase().as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Tense {
    Past,
    NonPast,
}

fn tense(tag: &str) -> Option<Tense> {
    match tag {
        "VBD" | "VBN" => Some(Tense::Past),
        "VB" | "VBG" | "VBP" | "VBZ" | "MD" => Some(Tense::NonPast),
        _ => None,
    }
}

/// POS tags for a sentence pair, premise then hypothesis.
#[derive(Debug, Clone, Copy)]
pub struct PairPos<'a> {
    pub premise: &'a [String],
    pub hypothesis: &'a [String],
}

/// Assigns the automatic tags to a pair.
///
/// Without `pos`, the rule tagger is used when `fallback` is set; otherwise
/// the call fails.
pub fn auto_tag(
    premise: &[String],
    hypothesis: &[String],
    lexicon: &LexicalResource,
    pos: Option<PairPos<'_>>,
    fallback: bool,
) -> Result<TagSet> {
    let owned;
    let pos = match pos {
        Some(p) => {
            if p.premise.len() != premise.len() || p.hypothesis.len() != hypothesis.len() {
                return Err(Error::Invalid(format!(
                    "POS tag count ({}, {}) does not match token count ({}, {})",
                    p.premise.len(),
                    p.hypothesis.len(),
                    premise.len(),
                    hypothesis.len()
                )));
            }
            p
        }
        None if fallback => {
            owned = (rule_tag(premise), rule_tag(hypothesis));
            PairPos {
                premise: &owned.0,
                hypothesis: &owned.1,
            }
        }
        None => return Err(Error::Invalid("POS tags missing and the fallback tagger is disabled".into())),
    };

    let mut tags = TagSet::default();
    let mut synonym = false;
    let mut antonym = false;
    for p in premise {
        for h in hypothesis {
            match lexicon.relation(p, h) {
                Some(Relation::Synonym) => synonym = true,
                Some(Relation::Antonym) => antonym = true,
                None => {}
            }
        }
    }
    tags.set(Tag::Synonym, synonym);
    tags.set(Tag::Antonym, antonym);

    let all_tokens = premise.iter().chain(hypothesis);
    let all_pos = || pos.premise.iter().chain(pos.hypothesis).map(String::as_str);
    let quantifier = all_pos().any(|t| t == "CD" || t == "PDT")
        || premise.iter().chain(hypothesis).any(|w| is_quantifier_word(w));
    tags.set(Tag::Quantifier, quantifier);
    tags.set(Tag::Pronoun, all_pos().any(|t| matches!(t, "PRP" | "PRP$" | "WP" | "WP$")));
    tags.set(Tag::Superlative, all_pos().any(|t| t == "JJS" || t == "RBS"));
    tags.set(Tag::BareNp, !pos.hypothesis.iter().any(|t| t.starts_with("VB")));
    let tenses = |tags: &[String]| tags.iter().filter_map(|t| tense(t)).collect::<BTreeSet<_>>();
    tags.set(Tag::DiffTense, tenses(pos.premise) != tenses(pos.hypothesis));
    tags.set(Tag::Negation, all_tokens.into_iter().any(|w| is_negation(w)));
    tags.set(
        Tag::Long,
        premise.len() > LONG_PREMISE || hypothesis.len() > LONG_HYPOTHESIS,
    );
    Ok(tags)
}
