//! Domain name normalization and syntax checks.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NameError {
    #[error("empty name")]
    Empty,
    #[error("empty label")]
    EmptyLabel,
    #[error("label longer than 63 octets")]
    LabelTooLong,
    #[error("name longer than 253 octets")]
    NameTooLong,
    #[error("invalid character {0:?}")]
    InvalidChar(char),
    #[error("wildcard label not allowed here")]
    Wildcard,
    #[error("internationalized name could not be converted")]
    Idna,
}

fn check_label(label: &str) -> Result<(), NameError> {
    if label.is_empty() {
        return Err(NameError::EmptyLabel);
    }
    if label.len() > 63 {
        return Err(NameError::LabelTooLong);
    }
    if let Some(c) = label
        .chars()
        .find(|c| !(c.is_ascii_lowercase() || c.is_ascii_digit() || *c == '-' || *c == '_'))
    {
        return Err(NameError::InvalidChar(c));
    }
    Ok(())
}

/// Lowercases, converts internationalized labels to their ASCII form and
/// validates label and total lengths.
pub(crate) fn to_ascii_label_seq(s: &str) -> Result<String, NameError> {
    if s.is_empty() {
        return Err(NameError::Empty);
    }
    let ascii = if s.is_ascii() {
        s.to_ascii_lowercase()
    } else {
        idna::domain_to_ascii(s).map_err(|_| NameError::Idna)?
    };
    if ascii.len() > 253 {
        return Err(NameError::NameTooLong);
    }
    for label in ascii.split('.') {
        check_label(label)?;
    }
    Ok(ascii)
}

/// Canonical form of a host name: lowercase ASCII, no trailing dot.
/// Wildcard names are rejected; see [`normalize_san`] for those.
pub fn normalize_name(raw: &str) -> Result<String, NameError> {
    let trimmed = raw.trim();
    let trimmed = trimmed.strip_suffix('.').unwrap_or(trimmed);
    if trimmed.split('.').any(|l| l == "*") {
        return Err(NameError::Wildcard);
    }
    to_ascii_label_seq(trimmed)
}

/// Like [`normalize_name`] but accepts a single leading `*.` label.
pub fn normalize_san(raw: &str) -> Result<String, NameError> {
    let trimmed = raw.trim();
    let trimmed = trimmed.strip_suffix('.').unwrap_or(trimmed);
    match trimmed.strip_prefix("*.") {
        Some(base) => Ok(format!("*.{}", normalize_name(base)?)),
        None => normalize_name(trimmed),
    }
}

pub fn is_wildcard(name: &str) -> bool {
    name.starts_with("*.")
}

pub fn strip_wildcard(name: &str) -> &str {
    name.strip_prefix("*.").unwrap_or(name)
}
