//! Line-oriented sectioned text format shared by case and scenario files.
//!
//! Files are plain text: `#` starts a comment, blank lines are ignored,
//! `[name]` opens a section, and every other line is a whitespace-separated
//! record belonging to the current section. Parsers report 1-based line and
//! field positions.

use std::fmt;

#[derive(Debug, Clone)]
pub struct TextError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for TextError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for TextError {}

#[derive(Debug, Clone)]
pub struct Record {
    pub line: usize,
    pub tokens: Vec<String>,
}

impl Record {
    pub fn expect_len(&self, len: usize, what: &str) -> Result<(), TextError> {
        if self.tokens.len() != len {
            return Err(TextError {
                line: self.line,
                message: format!(
                    "{} record needs {} fields, found {}",
                    what,
                    len,
                    self.tokens.len()
                ),
            });
        }
        Ok(())
    }

    pub fn str(&self, idx: usize, field: &str) -> Result<&str, TextError> {
        self.tokens.get(idx).map(String::as_str).ok_or_else(|| TextError {
            line: self.line,
            message: format!("missing field {} ({})", idx + 1, field),
        })
    }

    pub fn f64(&self, idx: usize, field: &str) -> Result<f64, TextError> {
        let tok = self.str(idx, field)?;
        tok.parse::<f64>().map_err(|_| TextError {
            line: self.line,
            message: format!("field {} ({}): cannot parse `{}` as a number", idx + 1, field, tok),
        })
    }

    pub fn u32(&self, idx: usize, field: &str) -> Result<u32, TextError> {
        let tok = self.str(idx, field)?;
        tok.parse::<u32>().map_err(|_| TextError {
            line: self.line,
            message: format!("field {} ({}): cannot parse `{}` as an integer", idx + 1, field, tok),
        })
    }

    pub fn u64(&self, idx: usize, field: &str) -> Result<u64, TextError> {
        let tok = self.str(idx, field)?;
        tok.parse::<u64>().map_err(|_| TextError {
            line: self.line,
            message: format!("field {} ({}): cannot parse `{}` as an integer", idx + 1, field, tok),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub records: Vec<Record>,
}

/// Split a file into sections. Section names may repeat; order is preserved.
pub fn parse_sections(text: &str) -> Result<Vec<Section>, TextError> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| TextError {
                line: line_no,
                message: "section header must look like [name]".into(),
            })?;
            sections.push(Section {
                name: name.trim().to_string(),
                line: line_no,
                records: Vec::new(),
            });
            continue;
        }
        let tokens: Vec<String> = content.split_whitespace().map(str::to_string).collect();
        match sections.last_mut() {
            Some(section) => section.records.push(Record { line: line_no, tokens }),
            None => {
                return Err(TextError {
                    line: line_no,
                    message: "record appears before any [section] header".into(),
                })
            }
        }
    }
    Ok(sections)
}

/// Format a float so that parsing it back reproduces the value exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}
