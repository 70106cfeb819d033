use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

/// Yes/no question over a passage.
pub const BOOLQ_TEMPLATE: &str =
    "Context:\n\"{context}\"\nQuestion: \"{question}\"\nYes or No?\nAnswer:";

/// Binary sentiment of a film review.
pub const SENTIMENT_TEMPLATE: &str =
    "Film review:\n\"{review}\"\nIs the review positive or negative?\nAnswer:";

/// Prompt text with `{name}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }

    pub fn boolq() -> Self {
        Self::new(BOOLQ_TEMPLATE)
    }

    pub fn sentiment() -> Self {
        Self::new(SENTIMENT_TEMPLATE)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Names of all placeholders, sorted.
    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.segments()
            .filter_map(|seg| match seg {
                Segment::Placeholder(name) => Some(name),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    /// Errors unless every name in `required` appears in the template.
    pub fn require(&self, required: &[&str]) -> Result<()> {
        let have = self.placeholders();
        match required.iter().find(|name| !have.contains(*name)) {
            Some(name) => Err(Error::Config(format!(
                "prompt template lacks placeholder {{{name}}}"
            ))),
            None => Ok(()),
        }
    }

    /// Substitutes placeholders verbatim. Extra fields are ignored.
    pub fn render(&self, fields: &HashMap<String, String>) -> Result<String> {
        let mut out = String::with_capacity(self.text.len());
        for seg in self.segments() {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Placeholder(name) => match fields.get(name) {
                    Some(v) => out.push_str(v),
                    None => return Err(Error::MissingPlaceholder(name.to_string())),
                },
            }
        }
        Ok(out)
    }

    fn segments(&self) -> impl Iterator<Item = Segment<'_>> {
        Segments { rest: &self.text }
    }
}

pub fn build_prompt(fields: &HashMap<String, String>, template: &PromptTemplate) -> Result<String> {
    template.render(fields)
}

enum Segment<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

struct Segments<'a> {
    rest: &'a str,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl<'a> Iterator for Segments<'a> {
    type Item = Segment<'a>;

    fn next(&mut self) -> Option<Segment<'a>> {
        if self.rest.is_empty() {
            return None;
        }
        // Only `{ident}` is a placeholder; other braces are literal text.
        let mut search = 0;
        while let Some(open) = self.rest[search..].find('{').map(|i| i + search) {
            if let Some(close) = self.rest[open..].find('}').map(|i| i + open) {
                let name = &self.rest[open + 1..close];
                if is_ident(name) {
                    if open > 0 {
                        let lit = &self.rest[..open];
                        self.rest = &self.rest[open..];
                        return Some(Segment::Literal(lit));
                    }
                    self.rest = &self.rest[close + 1..];
                    return Some(Segment::Placeholder(name));
                }
            }
            search = open + 1;
        }
        let lit = self.rest;
        self.rest = "";
        Some(Segment::Literal(lit))
    }
}
