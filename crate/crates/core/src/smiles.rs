//! Shallow SMILES sanity checks.
//!
//! This is a gate in front of the stub tools and the memory pool, not a
//! chemistry parser: it checks the character set and bracket balance only.

use std::fmt;

/// Why a string was rejected as a SMILES token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SmilesFault {
    Empty,
    InvalidChar { ch: char, position: usize },
    UnbalancedParentheses,
    UnbalancedBrackets,
}

impl fmt::Display for SmilesFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmilesFault::Empty => f.write_str("empty"),
            SmilesFault::InvalidChar { ch, position } => {
                write!(f, "invalid character {ch:?} at position {position}")
            }
            SmilesFault::UnbalancedParentheses => f.write_str("unbalanced parentheses"),
            SmilesFault::UnbalancedBrackets => f.write_str("unbalanced brackets"),
        }
    }
}

impl std::error::Error for SmilesFault {}

fn allowed(ch: char) -> bool {
    ch.is_ascii_alphanumeric()
        || matches!(
            ch,
            '@' | '+' | '-' | '[' | ']' | '(' | ')' | '=' | '#' | '$' | '/' | '\\' | '.' | '%'
        )
}

/// Accepts `s` iff it is non-empty, uses only the SMILES character set and
/// has balanced `()` and `[]`.
pub fn validate_smiles(s: &str) -> Result<(), SmilesFault> {
    if s.is_empty() {
        return Err(SmilesFault::Empty);
    }
    let mut parens: i64 = 0;
    let mut brackets: i64 = 0;
    for (position, ch) in s.chars().enumerate() {
        if !allowed(ch) {
            return Err(SmilesFault::InvalidChar { ch, position });
        }
        match ch {
            '(' => parens += 1,
            ')' => parens -= 1,
            '[' => brackets += 1,
            ']' => brackets -= 1,
            _ => {}
        }
        if parens < 0 {
            return Err(SmilesFault::UnbalancedParentheses);
        }
        if brackets < 0 {
            return Err(SmilesFault::UnbalancedBrackets);
        }
    }
    if parens != 0 {
        return Err(SmilesFault::UnbalancedParentheses);
    }
    if brackets != 0 {
        return Err(SmilesFault::UnbalancedBrackets);
    }
    Ok(())
}
