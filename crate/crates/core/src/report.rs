use std::fmt;

use serde::{Deserialize, Serialize};

/// One machine-readable validation finding, rendered as `CODE(subject)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Finding {
    pub code: String,
    pub subject: String,
}

impl Finding {
    pub fn new(code: &str, subject: impl Into<String>) -> Self {
        Finding {
            code: code.to_string(),
            subject: subject.into(),
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.code, self.subject)
    }
}

/// Ordered list of findings. Empty means the checked value is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn push(&mut self, code: &str, subject: impl Into<String>) {
        self.findings.push(Finding::new(code, subject));
    }

    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.findings.len()
    }

    pub fn has_code(&self, code: &str) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }

    pub fn contains(&self, code: &str, subject: &str) -> bool {
        self.findings.iter().any(|f| f.code == code && f.subject == subject)
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.findings.extend(other.findings);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.findings.iter().map(|x| x.to_string()).collect();
        write!(f, "{}", parts.join(", "))
    }
}
