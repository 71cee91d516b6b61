//! Shared parse-mode and diagnostics types used by every codec layer.

use serde::Serialize;
use std::fmt;

/// Parsing discipline shared by the descriptor, record, and response parsers.
///
/// Strict mode refuses any deviation from the grammar; lenient mode repairs
/// what it can and reports every repair as a [`Diagnostic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// One repair or violation note, anchored to a byte offset in the parsed text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Stable kebab-case rule name, e.g. `unknown-label`.
    pub rule: &'static str,
    /// Byte offset into the input the diagnostic refers to.
    pub offset: usize,
    pub message: String,
}

impl Diagnostic {
    pub fn warning(rule: &'static str, offset: usize, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            rule,
            offset,
            message: message.into(),
        }
    }

    pub fn error(rule: &'static str, offset: usize, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            rule,
            offset,
            message: message.into(),
        }
    }

    /// Shift the byte offset, used when a payload was parsed out of a larger text.
    pub fn offset_by(mut self, base: usize) -> Self {
        self.offset += base;
        self
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{sev}[{rule}] at byte {offset}: {msg}",
            rule = self.rule,
            offset = self.offset,
            msg = self.message
        )
    }
}
