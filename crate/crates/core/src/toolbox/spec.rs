//! Tool registry: parameters, validation and the guidance prompt.

use std::collections::BTreeSet;

use serde_json::Value as Json;
use thiserror::Error;

use crate::cotf::{ToolCall, ToolKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamType {
    /// Table or column name.
    Identifier,
    /// Free text.
    Text,
    /// Any JSON scalar (string, number, boolean).
    Scalar,
    /// Integer in `1..=max`.
    Count { max: u64 },
    /// Non-negative integer.
    Seed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub ty: ParamType,
    pub required: bool,
    pub note: String,
}

impl ParamSpec {
    fn required(name: &str, ty: ParamType, note: &str) -> Self {
        ParamSpec { name: name.into(), ty, required: true, note: note.into() }
    }

    fn optional(name: &str, ty: ParamType, note: &str) -> Self {
        ParamSpec { name: name.into(), ty, required: false, note: note.into() }
    }

    fn check(&self, value: &Json) -> Result<(), String> {
        let ok = match self.ty {
            ParamType::Identifier | ParamType::Text => value.as_str().is_some_and(|s| !s.trim().is_empty()),
            ParamType::Scalar => matches!(value, Json::String(_) | Json::Number(_) | Json::Bool(_)),
            ParamType::Count { max } => value.as_u64().is_some_and(|n| (1..=max).contains(&n)),
            ParamType::Seed => value.as_u64().is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("parameter `{}` is invalid: expected {}, got {value}", self.name, self.describe_type()))
        }
    }

    fn describe_type(&self) -> String {
        match self.ty {
            ParamType::Identifier => "a table or column name".into(),
            ParamType::Text => "non-empty text".into(),
            ParamType::Scalar => "a string or number".into(),
            ParamType::Count { max } => format!("an integer between 1 and {max}"),
            ParamType::Seed => "a non-negative integer".into(),
        }
    }
}

/// Guidance for one tool: what it does, what it takes, when to use it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolSpec {
    pub kind: ToolKind,
    pub params: Vec<ParamSpec>,
    pub description: String,
    pub scenario: String,
}

impl ToolSpec {
    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn required_params(&self) -> impl Iterator<Item = &ParamSpec> {
        self.params.iter().filter(|p| p.required)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GuidanceError {
    #[error("tool {tool} is missing its {part}")]
    MissingGuidancePart { tool: &'static str, part: &'static str },
    #[error("tool {0} is not registered")]
    MissingTool(&'static str),
    #[error("tool {0} is registered more than once")]
    DuplicateTool(&'static str),
}

pub const DEFAULT_SIM_K: u64 = 5;
pub const DEFAULT_UNIQ_LIMIT: u64 = 20;
pub const DEFAULT_SAMPLE_ROWS: u64 = 5;

/// The nine built-in tools, in prompt order.
pub fn registry() -> Vec<ToolSpec> {
    use ParamType::*;
    let table = || ParamSpec::required("table", Identifier, "table name");
    let column = || ParamSpec::required("column", Identifier, "column name");
    vec![
        ToolSpec {
            kind: ToolKind::ValueIn,
            params: vec![table(), column(), ParamSpec::required("value", Scalar, "the exact value to look for")],
            description: "Checks whether an exact value is stored in a column and counts the rows holding it.".into(),
            scenario: "Use it when the question names a concrete value and you have a candidate column for it. \
                       The match is exact and case-sensitive, so a miss may only mean the stored spelling differs. \
                       It is the cheapest way to confirm a hypothesis about where a value lives."
                .into(),
        },
        ToolSpec {
            kind: ToolKind::SimValueIn,
            params: vec![
                table(),
                column(),
                ParamSpec::required("value", Text, "the phrase to search for"),
                ParamSpec::optional("k", Count { max: 50 }, "number of candidates, default 5"),
            ],
            description: "Finds the stored values of a column that are most similar in meaning or spelling to a phrase.".into(),
            scenario: "Use it when an exact lookup failed or when the wording in the question probably differs from \
                       the stored form (abbreviations, plural forms, typos, synonyms). It suits columns with many \
                       distinct values such as names or places, where listing every value is impractical."
                .into(),
        },
        ToolSpec {
            kind: ToolKind::UniqValue,
            params: vec![
                table(),
                column(),
                ParamSpec::optional("limit", Count { max: 100 }, "maximum samples, default 20"),
            ],
            description: "Returns the number of distinct values in a column and the first distinct values in sorted order.".into(),
            scenario: "Use it to learn the vocabulary of a categorical or code-like column and map it back to the \
                       entity in the question, for example discovering that a grade span is stored as short codes. \
                       Prefer it when values are enumerable and the question wording may not appear verbatim."
                .into(),
        },
        ToolSpec {
            kind: ToolKind::Head,
            params: vec![table(), ParamSpec::optional("n", Count { max: 50 }, "number of rows, default 5")],
            description: "Returns the first rows of a table in storage order.".into(),
            scenario: "Use it to see what whole records look like, how columns relate within a row, and the \
                       format of dates, codes and numbers before writing conditions on them."
                .into(),
        },
        ToolSpec {
            kind: ToolKind::Random,
            params: vec![
                table(),
                ParamSpec::optional("n", Count { max: 50 }, "number of rows, default 5"),
                ParamSpec::optional("seed", Seed, "sampling seed; drawn and recorded when omitted"),
            ],
            description: "Returns rows sampled uniformly without replacement from a table.".into(),
            scenario: "Use it when the first rows of a table may be unrepresentative, for example when data is \
                       sorted or clustered, and you need a broader view of typical values."
                .into(),
        },
        ToolSpec {
            kind: ToolKind::IfNull,
            params: vec![table(), column()],
            description: "Counts the NULL entries of a column and reports their share of all rows.".into(),
            scenario: "Use it before relying on a column for filtering, counting or averaging, to decide whether \
                       missing values need an explicit IS NOT NULL condition or whether another column is a \
                       better source."
                .into(),
        },
        ToolSpec {
            kind: ToolKind::Info,
            params: vec![table(), ParamSpec::optional("column", Identifier, "column name; omit for the whole table")],
            description: "Returns metadata: declared type, documented description, value notes, row count and NULL share.".into(),
            scenario: "Use it to read the documentation of a column whose name is cryptic or whose codes need \
                       decoding, for example learning what an abbreviation stands for, or to survey every column \
                       of a table at once."
                .into(),
        },
        ToolSpec {
            kind: ToolKind::SimColumns,
            params: vec![
                ParamSpec::required("query", Text, "description of the information you need"),
                ParamSpec::optional("k", Count { max: 50 }, "number of columns, default 5"),
            ],
            description: "Finds the columns whose names and descriptions best match a description of the needed information.".into(),
            scenario: "Use it when you do not know which table or column holds a concept from the question, or \
                       when the current column turned out to be the wrong one and you need alternatives."
                .into(),
        },
        ToolSpec {
            kind: ToolKind::None,
            params: vec![],
            description: "Ends exploration of the current clause.".into(),
            scenario: "Use it once the facts gathered so far settle the clause, or when the clause holds no \
                       database entity (connective words, the requested output)."
                .into(),
        },
    ]
}

pub fn spec_for(kind: ToolKind) -> ToolSpec {
    registry().into_iter().find(|s| s.kind == kind).expect("every tool kind is registered")
}

/// Checks a call against the registry: known tool, required parameters
/// present, no unknown parameters, well-typed values.
pub fn validate_call(call: &ToolCall) -> Result<(), String> {
    let kind = call.kind().ok_or_else(|| format!("unknown tool: {}", call.tool))?;
    let spec = spec_for(kind);
    for key in call.args.keys() {
        if !spec.params.iter().any(|p| &p.name == key) {
            let expected: Vec<&str> = spec.params.iter().map(|p| p.name.as_str()).collect();
            return Err(format!(
                "unknown parameter `{key}` for {kind}; expected {}",
                if expected.is_empty() { "no parameters".to_string() } else { expected.join(", ") }
            ));
        }
    }
    for p in &spec.params {
        match call.args.get(&p.name) {
            Some(v) => p.check(v)?,
            None if p.required => return Err(format!("missing required parameter `{}` for {kind}", p.name)),
            None => {}
        }
    }
    Ok(())
}

/// Renders the tool guidance prompt in registry order.
pub fn render_guidance(specs: &[ToolSpec]) -> Result<String, GuidanceError> {
    let mut seen = BTreeSet::new();
    for s in specs {
        if !seen.insert(s.kind) {
            return Err(GuidanceError::DuplicateTool(s.kind.name()));
        }
    }
    let mut out = String::from("## Tools\n");
    for kind in ToolKind::ALL {
        let spec = specs.iter().find(|s| s.kind == kind).ok_or(GuidanceError::MissingTool(kind.name()))?;
        let missing = |part| GuidanceError::MissingGuidancePart { tool: kind.name(), part };
        if spec.description.trim().is_empty() {
            return Err(missing("description"));
        }
        if spec.scenario.trim().is_empty() {
            return Err(missing("scenario"));
        }
        let params = if spec.params.is_empty() {
            "no parameters".to_string()
        } else {
            spec.params
                .iter()
                .map(|p| format!("{} ({}{})", p.name, p.note, if p.required { "" } else { ", optional" }))
                .collect::<Vec<_>>()
                .join("; ")
        };
        out.push_str(&format!(
            "\n### {}\nFunction: {}\nParameters: {}\nScenario: {}\n",
            kind.name(),
            spec.description.trim(),
            params,
            spec.scenario.split_whitespace().collect::<Vec<_>>().join(" ")
        ));
    }
    Ok(out)
}

/// Guidance text for the built-in registry.
pub fn guidance() -> String {
    render_guidance(&registry()).expect("built-in registry is complete")
}
