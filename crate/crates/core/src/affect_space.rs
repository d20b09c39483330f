//! Valence/Arousal/Dominance geometry.
//!
//! Points carry the rating scale they were recorded on. Cross-set geometry
//! (distances, matrices, octants) refuses to mix scales: callers rescale
//! explicitly, usually onto [`Scale::Unit0To1`].

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AffectError {
    #[error("{dimension} = {value} lies outside the {scale} interval [{min}, {max}]")]
    OutOfRange {
        dimension: Dimension,
        value: f64,
        scale: Scale,
        min: f64,
        max: f64,
    },
    #[error("{dimension} is not a finite number")]
    NotFinite { dimension: Dimension },
    #[error("scale mismatch: {left} vs {right}; rescale both points onto one scale first")]
    ScaleMismatch { left: Scale, right: Scale },
    #[error("expected a point on the {expected} scale, got {found}")]
    WrongScale { expected: Scale, found: Scale },
    #[error("neutral band must lie in [0, 0.5), got {0}")]
    InvalidBand(f64),
    #[error("duplicate {axis} key `{key}`")]
    DuplicateKey { axis: &'static str, key: String },
    #[error("distance matrix needs at least one row and one column")]
    EmptyMatrix,
    #[error("unknown {axis} key `{key}`")]
    UnknownKey { axis: &'static str, key: String },
    #[error("unrecognised octant signature `{0}`")]
    BadSignature(String),
    #[error("unknown scale `{0}`")]
    UnknownScale(String),
}

/// One of the three affective dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    #[serde(rename = "V")]
    Valence,
    #[serde(rename = "A")]
    Arousal,
    #[serde(rename = "D")]
    Dominance,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Valence, Dimension::Arousal, Dimension::Dominance];

    pub fn letter(self) -> char {
        match self {
            Dimension::Valence => 'V',
            Dimension::Arousal => 'A',
            Dimension::Dominance => 'D',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Valence => "valence",
            Dimension::Arousal => "arousal",
            Dimension::Dominance => "dominance",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Rating scale of a VAD point. Each is a closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scale {
    /// Nine-point self-assessment ratings, [1, 9].
    #[serde(rename = "anet_1_9")]
    Anet1To9,
    /// Semantic-differential word norms, [-1, 1].
    #[serde(rename = "russell_m1_1")]
    RussellM1To1,
    /// Model output range, [0, 1].
    #[serde(rename = "unit_0_1")]
    Unit0To1,
}

impl Scale {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Scale::Anet1To9 => (1.0, 9.0),
            Scale::RussellM1To1 => (-1.0, 1.0),
            Scale::Unit0To1 => (0.0, 1.0),
        }
    }

    pub fn min(self) -> f64 {
        self.bounds().0
    }

    pub fn max(self) -> f64 {
        self.bounds().1
    }

    pub fn contains(self, x: f64) -> bool {
        let (lo, hi) = self.bounds();
        x >= lo && x <= hi
    }

    pub fn name(self) -> &'static str {
        match self {
            Scale::Anet1To9 => "anet_1_9",
            Scale::RussellM1To1 => "russell_m1_1",
            Scale::Unit0To1 => "unit_0_1",
        }
    }

    /// Affine map of a single value from `self` onto `target`, clamped to the
    /// target interval to absorb rounding at the endpoints.
    pub fn map_value(self, x: f64, target: Scale) -> f64 {
        if self == target {
            return x;
        }
        let (lo, hi) = self.bounds();
        let (tlo, thi) = target.bounds();
        let y = (x - lo) / (hi - lo) * (thi - tlo) + tlo;
        y.clamp(tlo, thi)
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scale {
    type Err = AffectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "anet_1_9" => Ok(Scale::Anet1To9),
            "russell_m1_1" => Ok(Scale::RussellM1To1),
            "unit_0_1" => Ok(Scale::Unit0To1),
            other => Err(AffectError::UnknownScale(other.to_string())),
        }
    }
}

/// A point in VAD space, validated against its scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTriple")]
pub struct VadTriple {
    v: f64,
    a: f64,
    d: f64,
    scale: Scale,
}

#[derive(Deserialize)]
struct RawTriple {
    v: f64,
    a: f64,
    d: f64,
    scale: Scale,
}

impl TryFrom<RawTriple> for VadTriple {
    type Error = AffectError;

    fn try_from(raw: RawTriple) -> Result<Self, Self::Error> {
        VadTriple::new(raw.v, raw.a, raw.d, raw.scale)
    }
}

impl VadTriple {
    pub fn new(v: f64, a: f64, d: f64, scale: Scale) -> Result<Self, AffectError> {
        for (dimension, value) in Dimension::ALL.into_iter().zip([v, a, d]) {
            if !value.is_finite() {
                return Err(AffectError::NotFinite { dimension });
            }
            if !scale.contains(value) {
                let (min, max) = scale.bounds();
                return Err(AffectError::OutOfRange {
                    dimension,
                    value,
                    scale,
                    min,
                    max,
                });
            }
        }
        Ok(VadTriple { v, a, d, scale })
    }

    pub fn unit(v: f64, a: f64, d: f64) -> Result<Self, AffectError> {
        Self::new(v, a, d, Scale::Unit0To1)
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn get(&self, dimension: Dimension) -> f64 {
        match dimension {
            Dimension::Valence => self.v,
            Dimension::Arousal => self.a,
            Dimension::Dominance => self.d,
        }
    }

    pub fn components(&self) -> [f64; 3] {
        [self.v, self.a, self.d]
    }

    /// Affine rescale onto `target`. Total on valid points.
    pub fn rescale(&self, target: Scale) -> VadTriple {
        VadTriple {
            v: self.scale.map_value(self.v, target),
            a: self.scale.map_value(self.a, target),
            d: self.scale.map_value(self.d, target),
            scale: target,
        }
    }
}

pub fn rescale(t: &VadTriple, target: Scale) -> VadTriple {
    t.rescale(target)
}

pub fn euclidean_distance(a: &VadTriple, b: &VadTriple) -> Result<f64, AffectError> {
    if a.scale != b.scale {
        return Err(AffectError::ScaleMismatch {
            left: a.scale,
            right: b.scale,
        });
    }
    let sq: f64 = a
        .components()
        .iter()
        .zip(b.components())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sq.sqrt())
}

/// Distances from every row stimulus to every column word, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    row_ids: Vec<String>,
    col_ids: Vec<String>,
    cells: Vec<f64>,
}

impl DistanceMatrix {
    pub fn rows(&self) -> &[String] {
        &self.row_ids
    }

    pub fn cols(&self) -> &[String] {
        &self.col_ids
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn row_index(&self, id: &str) -> Result<usize, AffectError> {
        self.row_ids
            .iter()
            .position(|r| r == id)
            .ok_or_else(|| AffectError::UnknownKey {
                axis: "row",
                key: id.to_string(),
            })
    }

    pub fn col_index(&self, label: &str) -> Result<usize, AffectError> {
        self.col_ids
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| AffectError::UnknownKey {
                axis: "column",
                key: label.to_string(),
            })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.col_ids.len();
        &self.cells[i * n..(i + 1) * n]
    }

    pub fn get(&self, row_id: &str, col_label: &str) -> Result<f64, AffectError> {
        let i = self.row_index(row_id)?;
        let j = self.col_index(col_label)?;
        Ok(self.row(i)[j])
    }

    /// Columns of one row ordered by ascending distance, ties by label.
    pub fn nearest(&self, row_id: &str) -> Result<Vec<(&str, f64)>, AffectError> {
        let i = self.row_index(row_id)?;
        let mut out: Vec<(&str, f64)> = self
            .col_ids
            .iter()
            .map(String::as_str)
            .zip(self.row(i).iter().copied())
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        Ok(out)
    }
}

fn check_unique<'a>(
    axis: &'static str,
    keys: impl Iterator<Item = &'a str>,
) -> Result<(), AffectError> {
    let mut seen = HashSet::new();
    for k in keys {
        if !seen.insert(k) {
            return Err(AffectError::DuplicateKey {
                axis,
                key: k.to_string(),
            });
        }
    }
    Ok(())
}

pub fn distance_matrix(
    rows: &[(String, VadTriple)],
    cols: &[(String, VadTriple)],
) -> Result<DistanceMatrix, AffectError> {
    distance_matrix_with(rows, cols, Execution::default())
}

pub fn distance_matrix_with(
    rows: &[(String, VadTriple)],
    cols: &[(String, VadTriple)],
    exec: Execution,
) -> Result<DistanceMatrix, AffectError> {
    if rows.is_empty() || cols.is_empty() {
        return Err(AffectError::EmptyMatrix);
    }
    check_unique("row", rows.iter().map(|(k, _)| k.as_str()))?;
    check_unique("column", cols.iter().map(|(k, _)| k.as_str()))?;
    let scale = rows[0].1.scale();
    if let Some((_, t)) = rows.iter().chain(cols).find(|(_, t)| t.scale() != scale) {
        return Err(AffectError::ScaleMismatch {
            left: scale,
            right: t.scale(),
        });
    }

    let row_cells: Vec<Vec<f64>> = par::map(exec, rows, |(_, r)| {
        cols.iter()
            .map(|(_, c)| euclidean_distance(r, c).expect("scales checked above"))
            .collect()
    });

    Ok(DistanceMatrix {
        row_ids: rows.iter().map(|(k, _)| k.clone()).collect(),
        col_ids: cols.iter().map(|(k, _)| k.clone()).collect(),
        cells: row_cells.into_iter().flatten().collect(),
    })
}

/// 1-based competition rank of `col_label` within the row; ties share the
/// lower rank.
pub fn rank_of(m: &DistanceMatrix, row_id: &str, col_label: &str) -> Result<usize, AffectError> {
    let i = m.row_index(row_id)?;
    let j = m.col_index(col_label)?;
    let row = m.row(i);
    let target = row[j];
    Ok(1 + row.iter().filter(|&&x| x < target).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pole {
    Minus,
    Plus,
}

impl Pole {
    pub fn sign(self) -> char {
        match self {
            Pole::Minus => '-',
            Pole::Plus => '+',
        }
    }

    pub fn level_word(self) -> &'static str {
        match self {
            Pole::Minus => "low",
            Pole::Plus => "high",
        }
    }
}

/// One of the eight sign corners of VAD space, or its neutral centre.
///
/// A single neutral axis makes the whole point neutral; there is no partial
/// neutrality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Octant {
    Corner { v: Pole, a: Pole, d: Pole },
    Neutral,
}

impl Octant {
    /// The nine canonical octants in generation order: the eight corners,
    /// then neutral.
    pub fn all() -> [Octant; 9] {
        use Pole::*;
        let c = |v, a, d| Octant::Corner { v, a, d };
        [
            c(Plus, Minus, Minus),
            c(Minus, Plus, Minus),
            c(Minus, Minus, Plus),
            c(Plus, Plus, Minus),
            c(Minus, Plus, Plus),
            c(Plus, Minus, Plus),
            c(Plus, Plus, Plus),
            c(Minus, Minus, Minus),
            Octant::Neutral,
        ]
    }

    pub fn signature(&self) -> String {
        octant_signature(self)
    }
}

impl fmt::Display for Octant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&octant_signature(self))
    }
}

impl FromStr for Octant {
    type Err = AffectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_signature(s)
    }
}

impl Serialize for Octant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&octant_signature(self))
    }
}

impl<'de> Deserialize<'de> for Octant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_signature(&s).map_err(serde::de::Error::custom)
    }
}

pub const DEFAULT_NEUTRAL_BAND: f64 = 0.1;

pub fn octant_of(t: &VadTriple, neutral_band: f64) -> Result<Octant, AffectError> {
    if t.scale() != Scale::Unit0To1 {
        return Err(AffectError::WrongScale {
            expected: Scale::Unit0To1,
            found: t.scale(),
        });
    }
    if !(0.0..0.5).contains(&neutral_band) {
        return Err(AffectError::InvalidBand(neutral_band));
    }
    let pole = |x: f64| {
        if x < 0.5 - neutral_band {
            Some(Pole::Minus)
        } else if x > 0.5 + neutral_band {
            Some(Pole::Plus)
        } else {
            None
        }
    };
    Ok(match (pole(t.v()), pole(t.a()), pole(t.d())) {
        (Some(v), Some(a), Some(d)) => Octant::Corner { v, a, d },
        _ => Octant::Neutral,
    })
}

pub fn octant_signature(o: &Octant) -> String {
    match o {
        Octant::Corner { v, a, d } => format!("V{}A{}D{}", v.sign(), a.sign(), d.sign()),
        Octant::Neutral => "neutral".to_string(),
    }
}

pub fn parse_signature(s: &str) -> Result<Octant, AffectError> {
    let bad = || AffectError::BadSignature(s.to_string());
    let s = s.trim();
    if s.eq_ignore_ascii_case("neutral") {
        return Ok(Octant::Neutral);
    }
    let b = s.as_bytes();
    if b.len() != 6 || b[0] != b'V' || b[2] != b'A' || b[4] != b'D' {
        return Err(bad());
    }
    let pole = |c: u8| match c {
        b'+' => Ok(Pole::Plus),
        b'-' => Ok(Pole::Minus),
        _ => Err(bad()),
    };
    Ok(Octant::Corner {
        v: pole(b[1])?,
        a: pole(b[3])?,
        d: pole(b[5])?,
    })
}
