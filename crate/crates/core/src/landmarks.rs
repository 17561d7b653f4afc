//! Landmark sets and their JSON file format.
//!
//! ```json
//! {"dims":[32,32,32],
//!  "landmarks":[{"id":1,"p":[3.0,5.0,7.0]},{"id":2,"p":[40.0,1.0,1.0],"oob":true}],
//!  "subanatomy":{"1":"Frontal Lobe"}}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    /// 1-based identifier.
    pub id: u32,
    /// Continuous voxel coordinates.
    pub p: [f64; 3],
    /// Set when the point has left the field of view (e.g. after augmentation).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oob: bool,
}

impl Landmark {
    pub fn new(id: u32, p: [f64; 3]) -> Self {
        Self { id, p, oob: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Landmark>,
    subanatomy: BTreeMap<u32, String>,
}

impl LandmarkSet {
    /// Validates ids (unique) and sorts ascending by id.
    pub fn new(mut points: Vec<Landmark>) -> Result<Self> {
        let mut seen = HashSet::new();
        for l in &points {
            if !seen.insert(l.id) {
                return Err(Error::DuplicateId(l.id));
            }
        }
        points.sort_by_key(|l| l.id);
        Ok(Self { points, subanatomy: BTreeMap::new() })
    }

    /// Landmarks with ids `1..=points.len()` in order.
    pub fn from_points(points: &[[f64; 3]]) -> Self {
        let points = points.iter().enumerate().map(|(i, p)| Landmark::new(i as u32 + 1, *p)).collect();
        Self { points, subanatomy: BTreeMap::new() }
    }

    pub fn with_subanatomy(mut self, subanatomy: BTreeMap<u32, String>) -> Self {
        self.subanatomy = subanatomy;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Landmark] {
        &self.points
    }

    pub fn subanatomy(&self) -> &BTreeMap<u32, String> {
        &self.subanatomy
    }

    pub fn ids(&self) -> Vec<u32> {
        self.points.iter().map(|l| l.id).collect()
    }

    pub fn coords(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|l| l.p).collect()
    }

    /// `true` for landmarks that take part in losses and metrics.
    pub fn mask(&self) -> Vec<bool> {
        self.points.iter().map(|l| !l.oob).collect()
    }

    /// Replaces coordinates and oob flags while keeping ids and grouping.
    pub fn with_points(&self, updated: Vec<([f64; 3], bool)>) -> Self {
        assert_eq!(updated.len(), self.points.len(), "landmark count is invariant");
        let points = self
            .points
            .iter()
            .zip(updated)
            .map(|(l, (p, oob))| Landmark { id: l.id, p, oob })
            .collect();
        Self { points, subanatomy: self.subanatomy.clone() }
    }

    /// Every non-oob point must lie in `[0, dims-1]` per axis.
    pub fn validate_bounds(&self, dims: [usize; 3]) -> Result<()> {
        for l in &self.points {
            if !l.oob && !inside(l.p, dims) {
                return Err(Error::OutOfBounds { id: l.id, p: l.p, dims });
            }
        }
        Ok(())
    }
}

pub fn inside(p: [f64; 3], dims: [usize; 3]) -> bool {
    (0..3).all(|a| p[a].is_finite() && p[a] >= 0.0 && p[a] <= (dims[a] - 1) as f64)
}

#[derive(Serialize, Deserialize)]
struct LandmarkFile {
    dims: [usize; 3],
    landmarks: Vec<Landmark>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    subanatomy: BTreeMap<u32, String>,
}

pub fn parse_landmarks(text: &str, dims: [usize; 3]) -> Result<LandmarkSet> {
    let file: LandmarkFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let set = LandmarkSet::new(file.landmarks)?.with_subanatomy(file.subanatomy);
    set.validate_bounds(dims)?;
    Ok(set)
}

pub fn read_landmarks(path: impl AsRef<Path>, dims: [usize; 3]) -> Result<LandmarkSet> {
    let text = fs::read_to_string(path)?;
    parse_landmarks(&text, dims)
}

/// Reads the dims recorded in a landmark file without validating against a volume.
pub fn read_landmark_dims(path: impl AsRef<Path>) -> Result<[usize; 3]> {
    let text = fs::read_to_string(path)?;
    let file: LandmarkFile = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(file.dims)
}

pub fn landmarks_to_json(set: &LandmarkSet, dims: [usize; 3]) -> String {
    let file = LandmarkFile {
        dims,
        landmarks: set.points.clone(),
        subanatomy: set.subanatomy.clone(),
    };
    serde_json::to_string_pretty(&file).expect("landmark file serializes")
}

pub fn write_landmarks(set: &LandmarkSet, dims: [usize; 3], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, landmarks_to_json(set, dims))?;
    Ok(())
}

/// A named subset of landmark ids used for grouped reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub ids: Vec<u32>,
}

impl Group {
    pub fn range(name: &str, first: u32, last: u32) -> Self {
        Self { name: name.to_string(), ids: (first..=last).collect() }
    }
}

/// The seven brain sub-anatomies of the 88-landmark protocol.
pub fn table1_groups() -> Vec<Group> {
    vec![
        Group::range("Frontal Lobe", 1, 5),
        Group::range("Brain Stem", 6, 13),
        Group::range("Brain Boundary MSP", 14, 24),
        Group::range("Corpus Callosum", 25, 37),
        Group::range("Eye", 38, 45),
        Group::range("Brain Axial Boundary", 46, 55),
        Group::range("Temporal Lobe", 56, 88),
    ]
}

/// id → group name for the 88-landmark protocol.
pub fn table1_subanatomy() -> BTreeMap<u32, String> {
    table1_groups()
        .into_iter()
        .flat_map(|g| g.ids.into_iter().map(move |id| (id, g.name.clone())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_point() {
        let s = r#"{"dims":[10,10,10],"landmarks":[{"id":1,"p":[3.0,5.0,7.0]}]}"#;
        let set = parse_landmarks(s, [10, 10, 10]).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.points()[0].p, [3.0, 5.0, 7.0]);
        assert!(!set.points()[0].oob);
    }

    #[test]
    fn duplicate_id_rejected() {
        let s = r#"{"dims":[10,10,10],"landmarks":[{"id":4,"p":[1,1,1]},{"id":4,"p":[2,2,2]}]}"#;
        assert!(matches!(parse_landmarks(s, [10, 10, 10]), Err(Error::DuplicateId(4))));
    }

    #[test]
    fn out_of_bounds_rejected_unless_flagged() {
        let s = r#"{"dims":[10,10,10],"landmarks":[{"id":1,"p":[12,0,0]}]}"#;
        assert!(matches!(parse_landmarks(s, [10, 10, 10]), Err(Error::OutOfBounds { id: 1, .. })));
        let s = r#"{"dims":[10,10,10],"landmarks":[{"id":1,"p":[12,0,0],"oob":true}]}"#;
        assert!(parse_landmarks(s, [10, 10, 10]).unwrap().points()[0].oob);
    }

    #[test]
    fn malformed_is_parse_error() {
        assert!(matches!(parse_landmarks("{", [1, 1, 1]), Err(Error::Parse(_))));
    }

    #[test]
    fn ids_sorted_on_load() {
        let s = r#"{"dims":[10,10,10],"landmarks":[{"id":3,"p":[1,1,1]},{"id":1,"p":[2,2,2]}]}"#;
        assert_eq!(parse_landmarks(s, [10, 10, 10]).unwrap().ids(), vec![1, 3]);
    }

    #[test]
    fn json_round_trip_is_value_exact() {
        let set = LandmarkSet::from_points(&[[0.1, 2.0 / 3.0, 7.123456789012345], [9.0, 0.0, 1e-7]])
            .with_subanatomy(BTreeMap::from([(1, "Eye".to_string())]));
        let back = parse_landmarks(&landmarks_to_json(&set, [10, 10, 10]), [10, 10, 10]).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn table1_covers_88_in_seven_groups() {
        let groups = table1_groups();
        assert_eq!(groups.len(), 7);
        let all: Vec<u32> = groups.iter().flat_map(|g| g.ids.clone()).collect();
        assert_eq!(all, (1..=88).collect::<Vec<_>>());
        let sub = table1_subanatomy();
        assert_eq!(sub[&6], "Brain Stem");
        assert_eq!(sub[&37], "Corpus Callosum");
        assert_eq!(sub[&88], "Temporal Lobe");
    }
}
