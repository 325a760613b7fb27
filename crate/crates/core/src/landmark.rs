//! Landmark catalogue, line identifiers and per-case landmark sets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// The sixteen cephalometric landmarks used by the Steiner, Downs and
/// McNamara analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Landmark {
    Me,
    Pog,
    Gn,
    N,
    S,
    Ans,
    Pns,
    A,
    B,
    Uit,
    Uia,
    Po,
    Or,
    Go,
    Lit,
    Lia,
}

impl Landmark {
    pub const ALL: [Landmark; 16] = [
        Landmark::Me,
        Landmark::Pog,
        Landmark::Gn,
        Landmark::N,
        Landmark::S,
        Landmark::Ans,
        Landmark::Pns,
        Landmark::A,
        Landmark::B,
        Landmark::Uit,
        Landmark::Uia,
        Landmark::Po,
        Landmark::Or,
        Landmark::Go,
        Landmark::Lit,
        Landmark::Lia,
    ];

    /// Located on the traced symphysis contour.
    pub const EDGE_TRACED: [Landmark; 3] = [Landmark::Me, Landmark::Pog, Landmark::Gn];

    /// Located by weighted template matching and reported as points.
    pub const TEMPLATE_MATCHED: [Landmark; 8] = [
        Landmark::A,
        Landmark::Ans,
        Landmark::B,
        Landmark::N,
        Landmark::Or,
        Landmark::Pns,
        Landmark::S,
        Landmark::Uit,
    ];

    /// Every landmark that gets a template: the reported eight plus the raw
    /// porion match consumed by the Frankfort estimate.
    pub const WITH_TEMPLATE: [Landmark; 9] = [
        Landmark::A,
        Landmark::Ans,
        Landmark::B,
        Landmark::N,
        Landmark::Or,
        Landmark::Pns,
        Landmark::S,
        Landmark::Uit,
        Landmark::Po,
    ];

    /// The eleven landmarks reported as points.
    pub const REPORTED: [Landmark; 11] = [
        Landmark::Me,
        Landmark::Gn,
        Landmark::Pog,
        Landmark::A,
        Landmark::Ans,
        Landmark::B,
        Landmark::N,
        Landmark::Or,
        Landmark::Pns,
        Landmark::S,
        Landmark::Uit,
    ];

    pub fn abbreviation(self) -> &'static str {
        match self {
            Landmark::Me => "Me",
            Landmark::Pog => "Pog",
            Landmark::Gn => "Gn",
            Landmark::N => "N",
            Landmark::S => "S",
            Landmark::Ans => "ANS",
            Landmark::Pns => "PNS",
            Landmark::A => "A",
            Landmark::B => "B",
            Landmark::Uit => "UIT",
            Landmark::Uia => "UIA",
            Landmark::Po => "Po",
            Landmark::Or => "Or",
            Landmark::Go => "Go",
            Landmark::Lit => "LIT",
            Landmark::Lia => "LIA",
        }
    }

    pub fn full_name(self) -> &'static str {
        match self {
            Landmark::Me => "Menton",
            Landmark::Pog => "Pogonion",
            Landmark::Gn => "Gnathion",
            Landmark::N => "Nasion",
            Landmark::S => "Sella",
            Landmark::Ans => "Anterior Nasal Spine",
            Landmark::Pns => "Posterior Nasal Spine",
            Landmark::A => "A point",
            Landmark::B => "B point",
            Landmark::Uit => "Upper Incisor Tip",
            Landmark::Uia => "Upper Incisor Apex",
            Landmark::Po => "Porion",
            Landmark::Or => "Orbitale",
            Landmark::Go => "Gonion",
            Landmark::Lit => "Lower Incisor Tip",
            Landmark::Lia => "Lower Incisor Apex",
        }
    }
}

impl fmt::Display for Landmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbreviation())
    }
}

impl FromStr for Landmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Landmark::ALL
            .iter()
            .copied()
            .find(|l| l.abbreviation() == s)
            .ok_or_else(|| Error::UnknownLandmark(s.to_string()))
    }
}

/// The four clinically required lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LineKind {
    PoOr,
    GoMe,
    UitUia,
    LitLia,
}

impl LineKind {
    pub const ALL: [LineKind; 4] = [
        LineKind::PoOr,
        LineKind::GoMe,
        LineKind::UitUia,
        LineKind::LitLia,
    ];

    /// Lines estimated by fitting edge samples inside a certain region.
    pub const EDGE_FITTED: [LineKind; 3] = [LineKind::UitUia, LineKind::LitLia, LineKind::GoMe];

    pub fn name(self) -> &'static str {
        match self {
            LineKind::PoOr => "Po-Or",
            LineKind::GoMe => "Go-Me",
            LineKind::UitUia => "UIT-UIA",
            LineKind::LitLia => "LIT-LIA",
        }
    }

    /// Key of the certain region learned for the line.
    pub fn region_key(self) -> &'static str {
        match self {
            LineKind::PoOr => "Po-Or",
            LineKind::GoMe => "Go-Me",
            LineKind::UitUia => "UIA-UIT",
            LineKind::LitLia => "LIA-LIT",
        }
    }

    pub fn endpoints(self) -> (Landmark, Landmark) {
        match self {
            LineKind::PoOr => (Landmark::Po, Landmark::Or),
            LineKind::GoMe => (Landmark::Go, Landmark::Me),
            LineKind::UitUia => (Landmark::Uit, Landmark::Uia),
            LineKind::LitLia => (Landmark::Lit, Landmark::Lia),
        }
    }

    /// Whether one endpoint is landmarked on its own by edge tracing or
    /// template matching, which halves the per-endpoint displacement used for
    /// degree-equivalent thresholds.
    pub fn endpoints_independent(self) -> bool {
        let (a, b) = self.endpoints();
        let located = |l: Landmark| Landmark::REPORTED.contains(&l);
        located(a) || located(b)
    }
}

impl fmt::Display for LineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-").to_ascii_uppercase();
        LineKind::ALL
            .iter()
            .copied()
            .find(|k| {
                let (a, b) = k.endpoints();
                let fwd = format!("{}-{}", a.abbreviation(), b.abbreviation()).to_ascii_uppercase();
                let rev = format!("{}-{}", b.abbreviation(), a.abbreviation()).to_ascii_uppercase();
                norm == fwd || norm == rev
            })
            .ok_or_else(|| Error::Config(format!("unknown line `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Expert,
    Detected,
}

/// Direction the patient's profile points in the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Facing {
    Left,
    #[default]
    Right,
}

impl Facing {
    /// +1 when anterior is +x.
    pub fn sign(self) -> f64 {
        match self {
            Facing::Right => 1.0,
            Facing::Left => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Facing::Right => Facing::Left,
            Facing::Left => Facing::Right,
        }
    }
}

impl FromStr for Facing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "left" => Ok(Facing::Left),
            "right" => Ok(Facing::Right),
            other => Err(Error::Config(format!("facing must be left|right, got `{other}`"))),
        }
    }
}

impl fmt::Display for Facing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Facing::Left => "left",
            Facing::Right => "right",
        })
    }
}

/// Named landmark positions for one radiograph, in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    entries: BTreeMap<Landmark, Point>,
    pub source: Source,
}

impl LandmarkSet {
    pub fn new(source: Source) -> Self {
        Self {
            entries: BTreeMap::new(),
            source,
        }
    }

    /// Inserts a point, rejecting duplicates.
    pub fn insert(&mut self, name: Landmark, point: Point) -> Result<()> {
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateLandmark(name.to_string()));
        }
        self.entries.insert(name, point);
        Ok(())
    }

    pub fn set(&mut self, name: Landmark, point: Point) {
        self.entries.insert(name, point);
    }

    pub fn get(&self, name: Landmark) -> Option<Point> {
        self.entries.get(&name).copied()
    }

    pub fn require(&self, name: Landmark, case: &str) -> Result<Point> {
        self.get(name).ok_or_else(|| Error::MissingLandmark {
            case: case.to_string(),
            name: name.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Landmark, Point)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    pub fn names(&self) -> impl Iterator<Item = Landmark> + '_ {
        self.entries.keys().copied()
    }

    /// Checks every point against the image bounds.
    pub fn validate_bounds(&self, width: usize, height: usize) -> Result<()> {
        for (name, p) in self.iter() {
            let inside = p.x >= 0.0 && p.y >= 0.0 && p.x < width as f64 && p.y < height as f64;
            if !inside {
                return Err(Error::PointOutOfBounds {
                    name: name.to_string(),
                    x: p.x,
                    y: p.y,
                    width,
                    height,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abbreviations_round_trip() {
        for l in Landmark::ALL {
            assert_eq!(l.abbreviation().parse::<Landmark>().unwrap(), l);
        }
        assert!(matches!(
            "Xx".parse::<Landmark>(),
            Err(Error::UnknownLandmark(_))
        ));
    }

    #[test]
    fn line_names_accept_table_spelling() {
        assert_eq!("UIT_UIA".parse::<LineKind>().unwrap(), LineKind::UitUia);
        assert_eq!("UIA-UIT".parse::<LineKind>().unwrap(), LineKind::UitUia);
        assert_eq!("LIT_LIA".parse::<LineKind>().unwrap(), LineKind::LitLia);
        assert_eq!("Or-Po".parse::<LineKind>().unwrap(), LineKind::PoOr);
        assert_eq!("GO-ME".parse::<LineKind>().unwrap(), LineKind::GoMe);
    }

    #[test]
    fn endpoint_independence_follows_grouping() {
        assert!(LineKind::PoOr.endpoints_independent());
        assert!(LineKind::GoMe.endpoints_independent());
        assert!(LineKind::UitUia.endpoints_independent());
        assert!(!LineKind::LitLia.endpoints_independent());
    }

    #[test]
    fn mechanism_groups_partition_reported_points() {
        let mut all: Vec<_> = Landmark::EDGE_TRACED
            .iter()
            .chain(Landmark::TEMPLATE_MATCHED.iter())
            .copied()
            .collect();
        all.sort();
        let mut reported = Landmark::REPORTED.to_vec();
        reported.sort();
        assert_eq!(all, reported);
    }
}
