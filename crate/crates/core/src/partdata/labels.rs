use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

/// A part label `PartN` (N ≥ 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartLabel(u32);

impl PartLabel {
    pub fn new(n: u32) -> Option<Self> {
        (n >= 1).then_some(Self(n))
    }

    /// Label for a 0-based position (`0 → Part1`).
    pub fn from_index(i: usize) -> Self {
        Self(i as u32 + 1)
    }

    pub fn number(self) -> u32 {
        self.0
    }

    /// 0-based position, also the palette index.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for PartLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Part{}", self.0)
    }
}

fn parse_indexed(s: &str, prefix: &str) -> Option<u32> {
    let digits = s.strip_prefix(prefix)?;
    if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("'{0}' is not a valid label")]
pub struct LabelParseError(pub String);

impl FromStr for PartLabel {
    type Err = LabelParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_indexed(s, "Part").and_then(PartLabel::new).ok_or_else(|| LabelParseError(s.to_string()))
    }
}

impl Serialize for PartLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PartLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Formats a 1-based path index as `PathI`.
pub fn path_key(index: usize) -> String {
    format!("Path{index}")
}

/// Parses `PathI` (I ≥ 1) into its 1-based index.
pub fn parse_path_key(s: &str) -> Option<usize> {
    parse_indexed(s, "Path").filter(|&n| n >= 1).map(|n| n as usize)
}

/// One semantic part of a sketch.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartSpec {
    pub label: PartLabel,
    pub description: String,
}

impl PartSpec {
    pub fn new(label: PartLabel, description: impl Into<String>) -> Self {
        Self { label, description: description.into() }
    }
}

/// Ordered parts, labelled `Part1..PartK` in order when well-formed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartDecomposition {
    pub parts: Vec<PartSpec>,
}

impl PartDecomposition {
    pub fn new(parts: Vec<PartSpec>) -> Self {
        Self { parts }
    }

    /// Labels descriptions `Part1..PartK` in the given order.
    pub fn from_descriptions<I, S>(descriptions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            parts: descriptions
                .into_iter()
                .enumerate()
                .map(|(i, d)| PartSpec::new(PartLabel::from_index(i), d))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn get(&self, label: PartLabel) -> Option<&PartSpec> {
        self.parts.iter().find(|p| p.label == label)
    }

    pub fn labels(&self) -> Vec<PartLabel> {
        self.parts.iter().map(|p| p.label).collect()
    }

    pub fn descriptions(&self) -> Vec<String> {
        self.parts.iter().map(|p| p.description.clone()).collect()
    }

    /// One line per part, `Part1: ...`.
    pub fn joined(&self) -> String {
        self.parts.iter().map(|p| format!("{}: {}", p.label, p.description)).collect::<Vec<_>>().join("\n")
    }
}

/// Map from 1-based path index to part label, serialized as
/// `{"Path1": "Part1", ...}` in numeric path order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PathAssignment {
    map: BTreeMap<usize, PartLabel>,
}

impl PathAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assignment for paths `1..=labels.len()` in order.
    pub fn from_labels(labels: impl IntoIterator<Item = PartLabel>) -> Self {
        Self { map: labels.into_iter().enumerate().map(|(i, l)| (i + 1, l)).collect() }
    }

    pub fn insert(&mut self, path_index: usize, label: PartLabel) -> Option<PartLabel> {
        self.map.insert(path_index, label)
    }

    pub fn remove(&mut self, path_index: usize) -> Option<PartLabel> {
        self.map.remove(&path_index)
    }

    pub fn get(&self, path_index: usize) -> Option<PartLabel> {
        self.map.get(&path_index).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, PartLabel)> + '_ {
        self.map.iter().map(|(&k, &v)| (k, v))
    }

    /// 1-based indices of the paths assigned to `label`, ascending.
    pub fn paths_of(&self, label: PartLabel) -> Vec<usize> {
        self.iter().filter(|&(_, l)| l == label).map(|(i, _)| i).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("assignment serializes")
    }
}

impl Serialize for PathAssignment {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.map.len()))?;
        for (k, v) in &self.map {
            m.serialize_entry(&path_key(*k), v)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for PathAssignment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = PathAssignment;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map from PathI to PartN")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut out = PathAssignment::new();
                while let Some((k, v)) = access.next_entry::<String, PartLabel>()? {
                    let idx = parse_path_key(&k).ok_or_else(|| de::Error::custom(format!("bad path key '{k}'")))?;
                    if out.insert(idx, v).is_some() {
                        return Err(de::Error::custom(format!("duplicate path key '{k}'")));
                    }
                }
                Ok(out)
            }
        }
        d.deserialize_map(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_parsing() {
        assert_eq!("Part3".parse::<PartLabel>().unwrap().number(), 3);
        for bad in ["Part0", "Part", "part1", "Part01", "Part-1", "Path1", "Part1x"] {
            assert!(bad.parse::<PartLabel>().is_err(), "{bad}");
        }
        assert_eq!(PartLabel::from_index(0).to_string(), "Part1");
    }

    #[test]
    fn assignment_json_is_numerically_ordered() {
        let a = PathAssignment::from_labels((0..11).map(|i| PartLabel::from_index(i % 2)));
        let text = serde_json::to_string(&a).unwrap();
        assert!(text.starts_with(r#"{"Path1":"Part1","Path2":"Part2","Path3""#));
        assert!(text.find("Path10").unwrap() > text.find("Path9").unwrap());
        let back: PathAssignment = serde_json::from_str(&text).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn assignment_rejects_bad_keys() {
        assert!(serde_json::from_str::<PathAssignment>(r#"{"P1":"Part1"}"#).is_err());
        assert!(serde_json::from_str::<PathAssignment>(r#"{"Path1":"Part0"}"#).is_err());
    }
}
