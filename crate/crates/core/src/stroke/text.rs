use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{CubicStroke, StrokeSequence};

/// Why a line failed the stroke grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatErrorKind {
    /// A command slot holds something other than `M` / `C`.
    BadCommandLetter,
    /// Too few coordinates, or a command letter where a coordinate belongs.
    BadArity,
    /// A coordinate slot holds a token that is not an integer.
    NonIntegerToken,
    /// A line without tokens, or an entirely empty response.
    EmptyLine,
    /// Tokens after the eighth coordinate.
    TrailingGarbage,
}

impl FormatErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::BadCommandLetter => "bad-command-letter",
            Self::BadArity => "bad-arity",
            Self::NonIntegerToken => "non-integer-token",
            Self::EmptyLine => "empty-line",
            Self::TrailingGarbage => "trailing-garbage",
        }
    }
}

impl fmt::Display for FormatErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A grammar violation at a 1-based line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("{kind} on line {line}")]
pub struct FormatError {
    pub kind: FormatErrorKind,
    pub line: usize,
}

/// Outcome of the response validity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "VerdictRepr", try_from = "VerdictRepr")]
pub enum FormatVerdict {
    Valid,
    Invalid { error_kind: FormatErrorKind, line_index: usize },
}

#[derive(Serialize, Deserialize)]
struct VerdictRepr {
    valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error_kind: Option<FormatErrorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    line_index: Option<usize>,
}

impl From<FormatVerdict> for VerdictRepr {
    fn from(v: FormatVerdict) -> Self {
        match v {
            FormatVerdict::Valid => Self { valid: true, error_kind: None, line_index: None },
            FormatVerdict::Invalid { error_kind, line_index } => {
                Self { valid: false, error_kind: Some(error_kind), line_index: Some(line_index) }
            }
        }
    }
}

impl TryFrom<VerdictRepr> for FormatVerdict {
    type Error = &'static str;

    fn try_from(r: VerdictRepr) -> Result<Self, Self::Error> {
        match (r.valid, r.error_kind, r.line_index) {
            (true, None, None) => Ok(Self::Valid),
            (false, Some(error_kind), Some(line_index)) => Ok(Self::Invalid { error_kind, line_index }),
            _ => Err("error_kind and line_index must be present exactly when valid is false"),
        }
    }
}

impl FormatVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Self::Valid)
    }

    pub fn error(&self) -> Option<FormatError> {
        match *self {
            Self::Valid => None,
            Self::Invalid { error_kind, line_index } => Some(FormatError { kind: error_kind, line: line_index }),
        }
    }
}

impl From<FormatError> for FormatVerdict {
    fn from(e: FormatError) -> Self {
        Self::Invalid { error_kind: e.kind, line_index: e.line }
    }
}

/// Coordinate rounding applied when printing strokes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    None,
    /// Closest multiple of ten, ties away from zero.
    NearestTen,
}

impl Rounding {
    pub fn apply(self, v: i32) -> i32 {
        match self {
            Self::None => v,
            Self::NearestTen => round_nearest_ten(v),
        }
    }
}

fn round_nearest_ten(v: i32) -> i32 {
    let mag = (i64::from(v).abs() + 5) / 10 * 10;
    let signed = if v < 0 { -mag } else { mag };
    signed.clamp(i64::from(i32::MIN), i64::from(i32::MAX)) as i32
}

#[derive(Clone, Copy)]
enum Slot {
    Command(&'static str),
    Coord,
}

const LINE_PATTERN: [Slot; 10] = [
    Slot::Command("M"),
    Slot::Coord,
    Slot::Coord,
    Slot::Command("C"),
    Slot::Coord,
    Slot::Coord,
    Slot::Coord,
    Slot::Coord,
    Slot::Coord,
    Slot::Coord,
];

fn is_letters(tok: &str) -> bool {
    !tok.is_empty() && tok.bytes().all(|b| b.is_ascii_alphabetic())
}

fn parse_line(line: &str) -> Result<CubicStroke, FormatErrorKind> {
    let tokens: Vec<&str> = line.split(' ').filter(|t| !t.is_empty()).collect();
    if tokens.is_empty() {
        return Err(FormatErrorKind::EmptyLine);
    }
    let mut coords = [0i32; 8];
    let mut n = 0;
    for (i, (tok, slot)) in tokens.iter().zip(LINE_PATTERN.iter()).enumerate() {
        match *slot {
            Slot::Command(letter) => {
                if *tok == letter {
                    continue;
                }
                if i > 0 && tok.parse::<i32>().is_ok() {
                    return Err(FormatErrorKind::BadArity);
                }
                if i == 0 || is_letters(tok) {
                    return Err(FormatErrorKind::BadCommandLetter);
                }
                return Err(FormatErrorKind::NonIntegerToken);
            }
            Slot::Coord => match tok.parse::<i32>() {
                Ok(v) => {
                    coords[n] = v;
                    n += 1;
                }
                Err(_) if *tok == "M" || *tok == "C" => return Err(FormatErrorKind::BadArity),
                Err(_) if is_letters(tok) => return Err(FormatErrorKind::BadCommandLetter),
                Err(_) => return Err(FormatErrorKind::NonIntegerToken),
            },
        }
    }
    match tokens.len() {
        n if n < LINE_PATTERN.len() => Err(FormatErrorKind::BadArity),
        n if n > LINE_PATTERN.len() => Err(FormatErrorKind::TrailingGarbage),
        _ => Ok(CubicStroke::from_coords(coords)),
    }
}

/// Parses newline-separated `M x y C x1 y1 x2 y2 x3 y3` lines.
///
/// Tokens are separated by one or more spaces and the final newline is
/// optional. Parsing is all-or-nothing: the first bad line is reported.
pub fn parse_strokes(text: &str) -> Result<StrokeSequence, FormatError> {
    if text.is_empty() {
        return Ok(StrokeSequence::default());
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n')
        .enumerate()
        .map(|(i, line)| parse_line(line).map_err(|kind| FormatError { kind, line: i + 1 }))
        .collect::<Result<Vec<_>, _>>()
        .map(StrokeSequence)
}

/// Prints strokes in the canonical single-space form, one line per stroke,
/// each terminated by `\n`.
pub fn emit_strokes(seq: &StrokeSequence, rounding: Rounding) -> String {
    let mut out = String::with_capacity(seq.len() * 40);
    for s in seq {
        let [a, b, c, d, e, f, g, h] = s.coords().map(|v| rounding.apply(v));
        // Writing to a String cannot fail.
        let _ = writeln!(out, "M {a} {b} C {c} {d} {e} {f} {g} {h}");
    }
    out
}

/// Format check for a model turn: grammar-valid and at least one stroke.
/// Coordinate ranges are not checked.
pub fn verify_response(text: &str) -> FormatVerdict {
    match parse_strokes(text) {
        Ok(seq) if seq.is_empty() => FormatVerdict::Invalid { error_kind: FormatErrorKind::EmptyLine, line_index: 1 },
        Ok(_) => FormatVerdict::Valid,
        Err(e) => e.into(),
    }
}
