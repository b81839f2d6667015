use std::fmt;
use std::str::FromStr;

use super::ConfigError;

/// An absolute path into a configuration tree, e.g. `/software/packages/openssh`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConfigPath {
    segments: Vec<String>,
}

/// Returns true if `s` is a valid path segment / record key / identifier.
pub fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

impl ConfigPath {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let malformed = |reason: &str| ConfigError::MalformedPath {
            path: text.to_string(),
            reason: reason.to_string(),
        };
        let rest = text.strip_prefix('/').ok_or_else(|| malformed("path must be absolute"))?;
        if rest.is_empty() {
            return Err(malformed("path must have at least one segment"));
        }
        let mut segments = Vec::new();
        for seg in rest.split('/') {
            if !is_identifier(seg) {
                return Err(malformed(&format!("invalid segment `{seg}`")));
            }
            segments.push(seg.to_string());
        }
        Ok(Self { segments })
    }

    pub fn from_segments<I, S>(segments: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segments.is_empty() || !segments.iter().all(|s| is_identifier(s)) {
            return Err(ConfigError::MalformedPath {
                path: format!("/{}", segments.join("/")),
                reason: "segments must be non-empty identifiers".into(),
            });
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn parent(&self) -> Option<ConfigPath> {
        (self.segments.len() > 1).then(|| ConfigPath {
            segments: self.segments[..self.segments.len() - 1].to_vec(),
        })
    }

    pub fn child(&self, segment: &str) -> Result<ConfigPath, ConfigError> {
        let mut segments = self.segments.clone();
        segments.push(segment.to_string());
        Self::from_segments(segments)
    }

    pub fn last(&self) -> &str {
        self.segments.last().expect("paths are non-empty")
    }
}

impl fmt::Display for ConfigPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for seg in &self.segments {
            write!(f, "/{seg}")?;
        }
        Ok(())
    }
}

impl FromStr for ConfigPath {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}
