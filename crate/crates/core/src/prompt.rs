//! Three-part prompts (task description, demonstrations, question) rendered
//! from tabular records, and parsing of model answers back to labels.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tabular::{DatasetSchema, FeatureValue, SampleRecord};

const ADULT_TEMPLATE: &str = include_str!("../assets/templates/adult.toml");
const CREDIT_TEMPLATE: &str = include_str!("../assets/templates/credit.toml");

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template: cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("template: no display name for feature {0:?}")]
    UnmappedFeature(String),
    #[error("template: unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("template: {0}")]
    Invalid(String),
}

/// The editable part of a template, as stored in a template file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateDoc {
    pub dataset: String,
    pub description: String,
    pub question: String,
    #[serde(default = "default_answer_prefix")]
    pub answer_prefix: String,
    #[serde(default = "default_missing_text")]
    pub missing_text: String,
    #[serde(default = "default_true")]
    pub show_sensitive: bool,
    /// Feature or sensitive column name to display name.
    #[serde(default)]
    pub display: BTreeMap<String, String>,
}

fn default_answer_prefix() -> String {
    "Answer:".into()
}

fn default_missing_text() -> String {
    "unknown".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
struct FieldStyle {
    name: String,
    display: String,
    unit: Option<String>,
    decimals: Option<usize>,
}

/// A template bound to a schema: placeholders resolved, every feature mapped.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    description: String,
    question: String,
    answer_prefix: String,
    missing_text: String,
    fields: Vec<FieldStyle>,
    sensitive: Option<(String, [String; 2])>,
    /// Option strings for label 0 and label 1.
    options: [String; 2],
}

impl PromptTemplate {
    pub fn new(doc: TemplateDoc, schema: &DatasetSchema) -> Result<Self, TemplateError> {
        let options = [
            schema.label.negative_text.trim().to_string(),
            schema.label.positive_text.trim().to_string(),
        ];
        if options.iter().any(String::is_empty) {
            return Err(TemplateError::Invalid("answer options must be non-empty".into()));
        }
        if options[0].eq_ignore_ascii_case(&options[1]) {
            return Err(TemplateError::Invalid("answer options must differ".into()));
        }
        let fill = |text: &str| {
            resolve(
                text,
                &[
                    ("dataset", doc.dataset.as_str()),
                    ("positive", options[1].as_str()),
                    ("negative", options[0].as_str()),
                ],
            )
        };
        let description = fill(&doc.description)?;
        let question = fill(&doc.question)?;

        let display = |name: &str| {
            doc.display
                .get(name)
                .cloned()
                .ok_or_else(|| TemplateError::UnmappedFeature(name.to_string()))
        };
        let fields = schema
            .features
            .iter()
            .map(|f| {
                Ok(FieldStyle {
                    name: f.name.clone(),
                    display: display(&f.name)?,
                    unit: f.unit.clone(),
                    decimals: f.decimals,
                })
            })
            .collect::<Result<Vec<_>, TemplateError>>()?;
        let sensitive = if doc.show_sensitive {
            let s = &schema.sensitive;
            Some((
                display(&s.column)?,
                [s.display(0).to_string(), s.display(1).to_string()],
            ))
        } else {
            None
        };
        Ok(PromptTemplate {
            description,
            question,
            answer_prefix: doc.answer_prefix,
            missing_text: doc.missing_text,
            fields,
            sensitive,
            options,
        })
    }

    pub fn from_toml_str(text: &str, schema: &DatasetSchema) -> Result<Self, TemplateError> {
        PromptTemplate::new(toml::from_str(text)?, schema)
    }

    pub fn from_path(path: &Path, schema: &DatasetSchema) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        PromptTemplate::from_toml_str(&text, schema)
    }

    /// Shipped template for a built-in schema name.
    pub fn builtin(name: &str, schema: &DatasetSchema) -> Result<Self, TemplateError> {
        let text = match name {
            "adult" => ADULT_TEMPLATE,
            "credit" => CREDIT_TEMPLATE,
            other => return Err(TemplateError::Invalid(format!("no built-in template {other:?}"))),
        };
        PromptTemplate::from_toml_str(text, schema)
    }

    pub fn option(&self, label: u8) -> &str {
        &self.options[label as usize]
    }

    pub fn shows_sensitive(&self) -> bool {
        self.sensitive.is_some()
    }

    fn record_lines(&self, record: &SampleRecord, out: &mut String) -> Result<(), TemplateError> {
        for (i, field) in self.fields.iter().enumerate() {
            let value = match record.features.get(i) {
                Some((name, v)) if *name == field.name => v,
                _ => match record.feature(&field.name) {
                    Some(v) => v,
                    None => return Err(TemplateError::UnmappedFeature(field.name.clone())),
                },
            };
            out.push_str(&field.display);
            out.push_str(": ");
            match value {
                FeatureValue::Missing => out.push_str(&self.missing_text),
                FeatureValue::Category(c) => out.push_str(c),
                FeatureValue::Number(x) => {
                    out.push_str(&format_number(*x, field.decimals));
                    if let Some(unit) = &field.unit {
                        out.push(' ');
                        out.push_str(unit);
                    }
                }
            }
            out.push('\n');
        }
        if record.features.len() > self.fields.len() {
            let extra = &record.features[self.fields.len()].0;
            return Err(TemplateError::UnmappedFeature(extra.clone()));
        }
        if let Some((display, groups)) = &self.sensitive {
            out.push_str(display);
            out.push_str(": ");
            out.push_str(&groups[record.z as usize]);
            out.push('\n');
        }
        Ok(())
    }

    /// The labelled answer line closing a demonstration.
    pub fn answer_line(&self, label: u8) -> String {
        format!("{} {}", self.answer_prefix, self.option(label))
    }
}

fn resolve(text: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| TemplateError::Invalid("unclosed '{' in template".into()))?;
        let key = &after[..close];
        let value = vars
            .iter()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| TemplateError::UnknownPlaceholder(key.to_string()))?;
        out.push_str(value.1);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out.trim().to_string())
}

pub fn format_number(x: f64, decimals: Option<usize>) -> String {
    match decimals {
        Some(d) => format!("{x:.d$}"),
        None if x.fract() == 0.0 && x.abs() < 1e15 => format!("{}", x as i64),
        None => format!("{x}"),
    }
}

/// What the query part exposes, kept alongside the text for local models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub id: u64,
    pub features: Vec<(String, FeatureValue)>,
    /// Present only when the template shows the sensitive attribute.
    pub z: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub demonstrations: Vec<SampleRecord>,
    pub query: QueryView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub description: Range<usize>,
    /// Empty for zero-shot prompts.
    pub demonstrations: Range<usize>,
    pub question: Range<usize>,
    pub shots: usize,
    /// Hex sha256 of `text`.
    pub hash: String,
    pub payload: PromptPayload,
}

impl RenderedPrompt {
    pub fn part(&self, range: &Range<usize>) -> &str {
        &self.text[range.clone()]
    }
}

pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn render(
    template: &PromptTemplate,
    demos: &[SampleRecord],
    query: &SampleRecord,
) -> Result<RenderedPrompt, TemplateError> {
    let mut text = String::new();
    text.push_str(&template.description);
    let description = 0..text.len();
    text.push_str("\n\n");

    let demo_start = text.len();
    for (i, d) in demos.iter().enumerate() {
        if i > 0 {
            text.push('\n');
        }
        template.record_lines(d, &mut text)?;
        text.push_str(&template.answer_line(d.y));
        text.push('\n');
    }
    let demonstrations = demo_start..text.len();
    if !demos.is_empty() {
        text.push('\n');
    }

    let question_start = text.len();
    template.record_lines(query, &mut text)?;
    text.push_str(&template.question);
    text.push('\n');
    text.push_str(&template.answer_prefix);
    let question = question_start..text.len();

    let hash = content_hash(&text);
    Ok(RenderedPrompt {
        text,
        description,
        demonstrations,
        question,
        shots: demos.len(),
        hash,
        payload: PromptPayload {
            demonstrations: demos.to_vec(),
            query: QueryView {
                id: query.id,
                features: query.features.clone(),
                z: template.shows_sensitive().then_some(query.z),
            },
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstainReason {
    NoMatch,
    Ambiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedAnswer {
    Label(u8),
    Abstain(AbstainReason),
}

impl ParsedAnswer {
    pub fn label(self) -> Option<u8> {
        match self {
            ParsedAnswer::Label(l) => Some(l),
            ParsedAnswer::Abstain(_) => None,
        }
    }
}

/// Case-insensitive whole-word search for the two options, longest first;
/// text already claimed by a longer option cannot match a shorter one.
pub fn parse_answer(raw: &str, template: &PromptTemplate) -> ParsedAnswer {
    let text = raw.to_ascii_lowercase();
    let bytes = text.as_bytes();
    let mut order = [0u8, 1u8];
    order.sort_by_key(|&l| std::cmp::Reverse(template.options[l as usize].len()));

    let mut consumed: Vec<Range<usize>> = Vec::new();
    let mut found = [false; 2];
    for label in order {
        let needle = template.options[label as usize].to_ascii_lowercase();
        let mut from = 0;
        while let Some(pos) = text[from..].find(&needle) {
            let start = from + pos;
            let end = start + needle.len();
            let bounded = (start == 0 || !bytes[start - 1].is_ascii_alphanumeric())
                && (end == bytes.len() || !bytes[end].is_ascii_alphanumeric());
            let free = consumed.iter().all(|c| end <= c.start || start >= c.end);
            if bounded && free {
                found[label as usize] = true;
                consumed.push(start..end);
            }
            from = start + text[start..].chars().next().map_or(1, char::len_utf8);
        }
    }
    match found {
        [true, false] => ParsedAnswer::Label(0),
        [false, true] => ParsedAnswer::Label(1),
        [true, true] => ParsedAnswer::Abstain(AbstainReason::Ambiguous),
        [false, false] => ParsedAnswer::Abstain(AbstainReason::NoMatch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adult() -> PromptTemplate {
        PromptTemplate::builtin("adult", &DatasetSchema::adult()).unwrap()
    }

    fn person(id: u64, y: u8, z: u8) -> SampleRecord {
        let c = |s: &str| FeatureValue::Category(s.into());
        let n = FeatureValue::Number;
        SampleRecord {
            id,
            features: vec![
                ("age".into(), n(39.0)),
                ("workclass".into(), c("State-gov")),
                ("education".into(), c("Bachelors")),
                ("marital-status".into(), c("Never-married")),
                ("occupation".into(), FeatureValue::Missing),
                ("relationship".into(), c("Not-in-family")),
                ("capital-gain".into(), n(2174.0)),
                ("capital-loss".into(), n(0.0)),
                ("hours-per-week".into(), n(40.0)),
            ],
            y,
            z,
        }
    }

    #[test]
    fn zero_shot_has_no_demonstrations() {
        let t = adult();
        let p = render(&t, &[], &person(0, 1, 0)).unwrap();
        assert!(p.demonstrations.is_empty());
        assert_eq!(p.shots, 0);
        assert!(!p.text.contains("Answer: greater"));
        assert!(p.part(&p.description).contains("greater than 50K"));
        assert!(p.part(&p.question).contains("Age: 39 years\n"));
        assert!(p.part(&p.question).contains("Occupation: unknown\n"));
        assert!(p.part(&p.question).contains("Sex: Female\n"));
        assert!(p.text.ends_with("Answer:"));
    }

    #[test]
    fn eight_shots_have_eight_answer_lines_in_order() {
        let t = adult();
        let demos: Vec<_> = (0..8).map(|i| person(i, (i % 2) as u8, 1)).collect();
        let p = render(&t, &demos, &person(99, 0, 0)).unwrap();
        let part = p.part(&p.demonstrations);
        let answers: Vec<&str> = part.lines().filter(|l| l.starts_with("Answer:")).collect();
        assert_eq!(answers.len(), 8);
        assert_eq!(answers[0], "Answer: less than or equal to 50K");
        assert_eq!(answers[1], "Answer: greater than 50K");
        assert_eq!(p.payload.demonstrations, demos);
        assert_eq!(p, render(&t, &demos, &person(99, 0, 0)).unwrap());
    }

    #[test]
    fn hidden_sensitive_attribute() {
        let mut doc: TemplateDoc = toml::from_str(ADULT_TEMPLATE).unwrap();
        doc.show_sensitive = false;
        let t = PromptTemplate::new(doc, &DatasetSchema::adult()).unwrap();
        let p = render(&t, &[], &person(0, 1, 0)).unwrap();
        assert!(!p.text.contains("Sex:"));
        assert_eq!(p.payload.query.z, None);
    }

    #[test]
    fn unmapped_feature_and_placeholder() {
        let mut doc: TemplateDoc = toml::from_str(ADULT_TEMPLATE).unwrap();
        doc.display.remove("occupation");
        assert!(matches!(
            PromptTemplate::new(doc, &DatasetSchema::adult()),
            Err(TemplateError::UnmappedFeature(f)) if f == "occupation"
        ));
        let mut doc: TemplateDoc = toml::from_str(ADULT_TEMPLATE).unwrap();
        doc.question = "Is it {nope}?".into();
        assert!(matches!(
            PromptTemplate::new(doc, &DatasetSchema::adult()),
            Err(TemplateError::UnknownPlaceholder(_))
        ));
    }

    #[test]
    fn parse_examples() {
        let t = adult();
        assert_eq!(parse_answer("Answer: greater than 50K", &t), ParsedAnswer::Label(1));
        assert_eq!(parse_answer("LESS THAN OR EQUAL TO 50k.", &t), ParsedAnswer::Label(0));
        assert_eq!(
            parse_answer("it could be either greater than 50K or less than or equal to 50K", &t),
            ParsedAnswer::Abstain(AbstainReason::Ambiguous)
        );
        assert_eq!(parse_answer("", &t), ParsedAnswer::Abstain(AbstainReason::NoMatch));
        assert_eq!(
            parse_answer("greater than 50Kish", &t),
            ParsedAnswer::Abstain(AbstainReason::NoMatch)
        );
    }

    #[test]
    fn short_options_need_word_boundaries() {
        let t = PromptTemplate::builtin("credit", &DatasetSchema::credit()).unwrap();
        assert_eq!(parse_answer("No.", &t), ParsedAnswer::Label(0));
        assert_eq!(parse_answer("I do not know, yes", &t), ParsedAnswer::Label(1));
        assert_eq!(
            parse_answer("yes or no", &t),
            ParsedAnswer::Abstain(AbstainReason::Ambiguous)
        );
    }

    #[test]
    fn overlapping_options_prefer_longest() {
        let mut schema = DatasetSchema::adult();
        schema.label.positive_text = "high".into();
        schema.label.negative_text = "not high".into();
        let t = PromptTemplate::builtin("adult", &schema).unwrap();
        assert_eq!(parse_answer("Answer: not high", &t), ParsedAnswer::Label(0));
        assert_eq!(parse_answer("Answer: high", &t), ParsedAnswer::Label(1));
        assert_eq!(
            parse_answer("not high, maybe high", &t),
            ParsedAnswer::Abstain(AbstainReason::Ambiguous)
        );
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(40.0, None), "40");
        assert_eq!(format_number(-2.0, None), "-2");
        assert_eq!(format_number(1234.5, None), "1234.5");
        assert_eq!(format_number(1234.5, Some(2)), "1234.50");
        assert_eq!(format_number(3.0, Some(2)), "3.00");
    }

    #[test]
    fn answer_lines_round_trip() {
        for name in ["adult", "credit"] {
            let schema = DatasetSchema::builtin(name).unwrap();
            let t = PromptTemplate::builtin(name, &schema).unwrap();
            for y in [0, 1] {
                assert_eq!(parse_answer(&t.answer_line(y), &t), ParsedAnswer::Label(y));
            }
        }
    }
}
