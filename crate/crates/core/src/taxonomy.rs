//! Label vocabulary and query metadata.
//!
//! Two label spaces exist. [`ExpressionLabel`] is the 7-way space used for
//! training and evaluation; [`AnnotationCategory`] is the 10-way space the
//! annotators choose from. Integer codes are fixed so that serialized
//! datasets stay portable:
//!
//! | code | ExpressionLabel | AnnotationCategory |
//! |------|-----------------|--------------------|
//! | 0    | Neutral         | Neutral            |
//! | 1    | Happy           | Happy              |
//! | 2    | Sad             | Sad                |
//! | 3    | Surprise        | Surprise           |
//! | 4    | Fear            | Fear               |
//! | 5    | Disgust         | Disgust            |
//! | 6    | Anger           | Anger              |
//! | 7    |                 | None               |
//! | 8    |                 | Uncertain          |
//! | 9    |                 | NoFace             |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of classes in the training label space.
pub const NUM_CLASSES: usize = 7;

/// Number of categories offered to annotators.
pub const NUM_CATEGORIES: usize = 10;

/// Default language allowlist (ISO-639-1).
pub const DEFAULT_LANGUAGES: [&str; 6] = ["ar", "de", "en", "es", "fa", "pt"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpressionLabel {
    Neutral,
    Happy,
    Sad,
    Surprise,
    Fear,
    Disgust,
    Anger,
}

impl ExpressionLabel {
    pub const ALL: [ExpressionLabel; NUM_CLASSES] = [
        ExpressionLabel::Neutral,
        ExpressionLabel::Happy,
        ExpressionLabel::Sad,
        ExpressionLabel::Surprise,
        ExpressionLabel::Fear,
        ExpressionLabel::Disgust,
        ExpressionLabel::Anger,
    ];

    /// The six emotions that were issued as search queries (no Neutral).
    pub const QUERIED: [ExpressionLabel; 6] = [
        ExpressionLabel::Happy,
        ExpressionLabel::Sad,
        ExpressionLabel::Surprise,
        ExpressionLabel::Fear,
        ExpressionLabel::Disgust,
        ExpressionLabel::Anger,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ExpressionLabel::Neutral => "neutral",
            ExpressionLabel::Happy => "happy",
            ExpressionLabel::Sad => "sad",
            ExpressionLabel::Surprise => "surprise",
            ExpressionLabel::Fear => "fear",
            ExpressionLabel::Disgust => "disgust",
            ExpressionLabel::Anger => "anger",
        }
    }

    pub fn to_category(self) -> AnnotationCategory {
        AnnotationCategory::ALL[self.code()]
    }
}

impl fmt::Display for ExpressionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExpressionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if let Ok(code) = lower.parse::<usize>() {
            return Self::from_code(code).ok_or_else(|| Error::UnknownLabel(s.to_string()));
        }
        let label = match lower.as_str() {
            "neutral" | "ne" => ExpressionLabel::Neutral,
            "happy" | "happiness" | "ha" => ExpressionLabel::Happy,
            "sad" | "sadness" | "sa" => ExpressionLabel::Sad,
            "surprise" | "surprised" | "su" => ExpressionLabel::Surprise,
            "fear" | "fe" => ExpressionLabel::Fear,
            "disgust" | "di" => ExpressionLabel::Disgust,
            "anger" | "angry" | "an" => ExpressionLabel::Anger,
            _ => return Err(Error::UnknownLabel(s.to_string())),
        };
        Ok(label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationCategory {
    Neutral,
    Happy,
    Sad,
    Surprise,
    Fear,
    Disgust,
    Anger,
    None,
    Uncertain,
    NoFace,
}

impl AnnotationCategory {
    pub const ALL: [AnnotationCategory; NUM_CATEGORIES] = [
        AnnotationCategory::Neutral,
        AnnotationCategory::Happy,
        AnnotationCategory::Sad,
        AnnotationCategory::Surprise,
        AnnotationCategory::Fear,
        AnnotationCategory::Disgust,
        AnnotationCategory::Anger,
        AnnotationCategory::None,
        AnnotationCategory::Uncertain,
        AnnotationCategory::NoFace,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AnnotationCategory::None => "none",
            AnnotationCategory::Uncertain => "uncertain",
            AnnotationCategory::NoFace => "no_face",
            other => to_expression(other).map(ExpressionLabel::name).unwrap_or("?"),
        }
    }

    /// Display label shown to annotators.
    pub fn title(self) -> &'static str {
        match self {
            AnnotationCategory::Neutral => "Neutral",
            AnnotationCategory::Happy => "Happy",
            AnnotationCategory::Sad => "Sad",
            AnnotationCategory::Surprise => "Surprise",
            AnnotationCategory::Fear => "Fear",
            AnnotationCategory::Disgust => "Disgust",
            AnnotationCategory::Anger => "Anger",
            AnnotationCategory::None => "None",
            AnnotationCategory::Uncertain => "Uncertain",
            AnnotationCategory::NoFace => "No-Face",
        }
    }

    /// Keyboard shortcut: keys `1`..`9` select codes 0..8, key `0` selects NoFace.
    pub fn shortcut(self) -> char {
        char::from_digit(((self.code() + 1) % 10) as u32, 10).unwrap()
    }

    pub fn from_shortcut(key: char) -> Option<Self> {
        let digit = key.to_digit(10)? as usize;
        Self::from_code((digit + 9) % 10)
    }
}

impl fmt::Display for AnnotationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnnotationCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if let Ok(code) = lower.parse::<usize>() {
            return Self::from_code(code).ok_or_else(|| Error::UnknownLabel(s.to_string()));
        }
        match lower.as_str() {
            "none" => Ok(AnnotationCategory::None),
            "uncertain" => Ok(AnnotationCategory::Uncertain),
            "no_face" | "noface" | "no-face" => Ok(AnnotationCategory::NoFace),
            _ => ExpressionLabel::from_str(&lower).map(ExpressionLabel::to_category),
        }
    }
}

impl From<ExpressionLabel> for AnnotationCategory {
    fn from(label: ExpressionLabel) -> Self {
        label.to_category()
    }
}

/// Maps an annotation category into the training space; `None` for the
/// three non-expression categories.
pub fn to_expression(category: AnnotationCategory) -> Option<ExpressionLabel> {
    ExpressionLabel::from_code(category.code())
}

/// One emotion-related search query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuerySpec {
    pub query_text: String,
    pub language: String,
    pub english_translation: String,
    pub intended_emotion: Option<ExpressionLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<String>,
}

impl QuerySpec {
    /// Validates against a language allowlist.
    pub fn validate(&self, languages: &[&str]) -> Result<()> {
        if self.query_text.trim().is_empty() {
            return Err(Error::InvalidQuery("empty query text".into()));
        }
        if !languages.contains(&self.language.as_str()) {
            return Err(Error::InvalidQuery(format!(
                "language `{}` not in allowlist",
                self.language
            )));
        }
        if self.language == "en" && self.english_translation != self.query_text {
            return Err(Error::InvalidQuery(format!(
                "english query `{}` must be its own translation",
                self.query_text
            )));
        }
        Ok(())
    }

    /// Short stable key for the query, used for fixture file names and
    /// provenance references.
    pub fn key(&self) -> String {
        crate::digest::short_hex(format!("{}\t{}", self.language, self.query_text).as_bytes())
    }
}

/// One row of a keyword file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordRow {
    pub emotion: ExpressionLabel,
    pub language: String,
    pub query_text: String,
    pub english_translation: String,
    pub gender: Option<String>,
    pub age: Option<String>,
}

/// A keyword concept (identified by its English form) with its translations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keyword {
    pub emotion: ExpressionLabel,
    pub english: String,
    pub gender: Option<String>,
    pub age: Option<String>,
    /// language code → query text in that language.
    pub translations: BTreeMap<String, String>,
}

/// A (keyword, language) pair for which no translation exists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedPair {
    pub keyword: String,
    pub language: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Expansion {
    pub queries: Vec<QuerySpec>,
    pub skipped: Vec<SkippedPair>,
}

/// Parses the keyword CSV format:
/// `emotion,language,query_text,english_translation[,gender][,age]`.
/// Blank lines and lines starting with `#` are ignored.
pub fn parse_keyword_rows(text: &str) -> Result<Vec<KeywordRow>> {
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(4..=6).contains(&fields.len()) {
            return Err(Error::Parse {
                line: lineno + 1,
                detail: format!("expected 4 to 6 columns, found {}", fields.len()),
            });
        }
        let emotion = fields[0].parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            detail: format!("unknown emotion `{}`", fields[0]),
        })?;
        let optional = |i: usize| {
            fields
                .get(i)
                .filter(|s| !s.is_empty())
                .map(|s| s.to_string())
        };
        let row = KeywordRow {
            emotion,
            language: fields[1].to_ascii_lowercase(),
            query_text: fields[2].to_string(),
            english_translation: fields[3].to_string(),
            gender: optional(4),
            age: optional(5),
        };
        if row.query_text.is_empty() || row.english_translation.is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                detail: "query text and translation must be nonempty".into(),
            });
        }
        if row.language == "en" && row.query_text != row.english_translation {
            return Err(Error::Parse {
                line: lineno + 1,
                detail: "english rows must repeat the query as its translation".into(),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Groups keyword rows into keyword concepts keyed by (emotion, english).
pub fn group_keywords(rows: &[KeywordRow]) -> Vec<Keyword> {
    let mut grouped: BTreeMap<(ExpressionLabel, String), Keyword> = BTreeMap::new();
    for row in rows {
        let entry = grouped
            .entry((row.emotion, row.english_translation.clone()))
            .or_insert_with(|| Keyword {
                emotion: row.emotion,
                english: row.english_translation.clone(),
                gender: row.gender.clone(),
                age: row.age.clone(),
                translations: BTreeMap::new(),
            });
        entry
            .translations
            .entry(row.language.clone())
            .or_insert_with(|| row.query_text.clone());
    }
    grouped.into_values().collect()
}

pub fn load_keywords(path: &Path) -> Result<Vec<Keyword>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(group_keywords(&parse_keyword_rows(&text)?))
}

/// Expands keywords × languages into queries.
///
/// Output is ordered by emotion code, then language code, then English
/// keyword. Pairs with no translation are skipped and reported.
pub fn expand_query_templates(keywords: &[Keyword], languages: &[&str]) -> Result<Expansion> {
    if languages.is_empty() {
        return Err(Error::InvalidQuery("at least one language required".into()));
    }
    let languages: BTreeSet<&str> = languages.iter().copied().collect();
    let mut order: Vec<&Keyword> = keywords.iter().collect();
    order.sort_by(|a, b| (a.emotion, &a.english).cmp(&(b.emotion, &b.english)));

    let mut out = Expansion::default();
    for emotion in ExpressionLabel::ALL {
        for &language in &languages {
            for kw in order.iter().filter(|k| k.emotion == emotion) {
                match kw.translations.get(language) {
                    Some(text) => out.queries.push(QuerySpec {
                        query_text: text.clone(),
                        language: language.to_string(),
                        english_translation: kw.english.clone(),
                        intended_emotion: Some(kw.emotion),
                        gender: kw.gender.clone(),
                        age: kw.age.clone(),
                    }),
                    None => out.skipped.push(SkippedPair {
                        keyword: kw.english.clone(),
                        language: language.to_string(),
                    }),
                }
            }
        }
    }
    Ok(out)
}
