//! Point clouds and class vocabularies.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Class identifier. `0` is always the `unlabeled` sentinel.
pub type ClassId = u16;

pub const UNLABELED: ClassId = 0;
pub const UNLABELED_NAME: &str = "unlabeled";

/// World-space point cloud with optional per-point color and ground truth.
///
/// Immutable after construction; the constructor enforces that every
/// coordinate is finite and that the optional attributes have one entry per
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    colors: Option<Vec<[u8; 3]>>,
    gt_labels: Option<Vec<ClassId>>,
}

impl PointCloud {
    pub fn new(
        positions: Vec<Vec3>,
        colors: Option<Vec<[u8; 3]>>,
        gt_labels: Option<Vec<ClassId>>,
    ) -> Result<Self> {
        if let Some(i) = positions
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::Data(format!("non-finite coordinate at point {i}")));
        }
        let n = positions.len();
        if let Some(c) = &colors {
            if c.len() != n {
                return Err(Error::Argument(format!(
                    "{} colors for {n} points",
                    c.len()
                )));
            }
        }
        if let Some(l) = &gt_labels {
            if l.len() != n {
                return Err(Error::Argument(format!(
                    "{} ground-truth labels for {n} points",
                    l.len()
                )));
            }
        }
        Ok(Self {
            positions,
            colors,
            gt_labels,
        })
    }

    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            colors: None,
            gt_labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn position(&self, index: usize) -> Vec3 {
        self.positions[index]
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    /// Color of point `index`, mid-gray when the cloud carries no colors.
    pub fn color(&self, index: usize) -> [u8; 3] {
        self.colors
            .as_ref()
            .map_or([128, 128, 128], |c| c[index])
    }

    pub fn gt_labels(&self) -> Option<&[ClassId]> {
        self.gt_labels.as_deref()
    }

    pub fn with_gt_labels(mut self, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Argument(format!(
                "{} ground-truth labels for {} points",
                labels.len(),
                self.len()
            )));
        }
        self.gt_labels = Some(labels);
        Ok(self)
    }
}

/// Ordered class vocabulary. Id 0 is `unlabeled`; user classes get ids
/// 1, 2, ... in the order they are listed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
    ids: HashMap<String, ClassId>,
}

impl LabelSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![UNLABELED_NAME.to_string()];
        let mut ids = HashMap::new();
        ids.insert(UNLABELED_NAME.to_string(), UNLABELED);
        for name in names {
            let name = name.into();
            if name.is_empty() {
                return Err(Error::Config("empty class name".into()));
            }
            if name == UNLABELED_NAME {
                return Err(Error::Config(format!(
                    "class name {UNLABELED_NAME:?} is reserved"
                )));
            }
            if all.len() > ClassId::MAX as usize {
                return Err(Error::Config("too many classes".into()));
            }
            let id = all.len() as ClassId;
            if ids.insert(name.clone(), id).is_some() {
                return Err(Error::Config(format!("duplicate class name {name:?}")));
            }
            all.push(name);
        }
        Ok(Self { names: all, ids })
    }

    /// The seven annotated outdoor categories followed by the two rare
    /// structures used for bird's-eye refinement.
    pub fn outdoor() -> Self {
        Self::new([
            "road",
            "building",
            "window",
            "door",
            "powerline",
            "vehicle",
            "tree",
            "tunnel",
            "bridge",
        ])
        .expect("static vocabulary is valid")
    }

    /// Loads a JSON array of class names.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let names: Vec<String> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::new(names)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self.class_names().collect::<Vec<_>>().as_slice())
            .expect("string list serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Number of ids including the sentinel, i.e. the length of a vote vector.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.len() == 1
    }

    pub fn id(&self, name: &str) -> Option<ClassId> {
        self.ids.get(name).copied()
    }

    /// Id of a user class (never the sentinel).
    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.id(name).filter(|&id| id != UNLABELED)
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, id: ClassId) -> bool {
        (id as usize) < self.names.len()
    }

    /// User class names in id order, without the sentinel.
    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.names[1..].iter().map(String::as_str)
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> {
        1..self.names.len() as ClassId
    }
}
