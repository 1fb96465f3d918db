//! Extraction of `<START>...<END>` spans from free-form model output.
//!
//! Markers are not escaped: a span ends at the first `<END>` after its
//! `<START>`, whatever the content between them.

pub const START_MARKER: &str = "<START>";
pub const END_MARKER: &str = "<END>";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("expected {expected} wrapped spans, found {found}")]
    TooFewSpans { expected: usize, found: usize },
    #[error("wrapped span {position} is empty")]
    EmptySpan { position: usize },
    #[error("selection `{0}` is not an integer")]
    NotAnInteger(String),
    #[error("selection {value} is outside 0..{n}")]
    IndexOutOfRange { value: i128, n: u32 },
}

/// Every complete span in `raw`, in order, untrimmed.
pub fn wrapped_spans(raw: &str) -> Vec<&str> {
    let mut spans = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find(START_MARKER) {
        let body = &rest[open + START_MARKER.len()..];
        let Some(close) = body.find(END_MARKER) else {
            break;
        };
        spans.push(&body[..close]);
        rest = &body[close + END_MARKER.len()..];
    }
    spans
}

/// The trimmed contents of the first `expected` spans.
pub fn parse_wrapped(raw: &str, expected: usize) -> Result<Vec<String>, ParseError> {
    let spans = wrapped_spans(raw);
    if spans.len() < expected {
        return Err(ParseError::TooFewSpans {
            expected,
            found: spans.len(),
        });
    }
    if spans.len() > expected {
        tracing::warn!(expected, found = spans.len(), "ignoring surplus wrapped spans");
    }
    spans
        .into_iter()
        .take(expected)
        .enumerate()
        .map(|(position, span)| {
            let trimmed = span.trim();
            if trimmed.is_empty() {
                Err(ParseError::EmptySpan { position })
            } else {
                Ok(trimmed.to_owned())
            }
        })
        .collect()
}

/// The image index in the first span, checked against `0..n`.
pub fn parse_selection(raw: &str, n: u32) -> Result<u32, ParseError> {
    let span = parse_wrapped(raw, 1)?.remove(0);
    let value: i128 = span.parse().map_err(|_| ParseError::NotAnInteger(span.clone()))?;
    if value < 0 || value >= i128::from(n) {
        return Err(ParseError::IndexOutOfRange { value, n });
    }
    Ok(value as u32)
}
