//! Labeled image embeddings and the few-shot sampler.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// On-disk label file: `{"class_names":[...], "labels":{"<image_id>": <class_index>}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    pub class_names: Vec<String>,
    pub labels: BTreeMap<String, usize>,
}

impl LabelFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("invalid label file {}: {e}", path.display())))
    }
}

/// Image embeddings paired with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    embeddings: EmbeddingMatrix,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl LabeledImageSet {
    pub fn new(
        embeddings: EmbeddingMatrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::Data("label set declares no classes".into()));
        }
        let mut seen = HashSet::new();
        for name in &class_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Data(format!("duplicate class name {name:?}")));
            }
        }
        if labels.len() != embeddings.rows() {
            return Err(Error::Data(format!(
                "{} labels for {} images",
                labels.len(),
                embeddings.rows()
            )));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= class_names.len())
        {
            return Err(Error::Data(format!(
                "image {:?} has label {l}, but only {} classes exist",
                embeddings.id(i),
                class_names.len()
            )));
        }
        Ok(Self {
            embeddings,
            labels,
            class_names,
        })
    }

    /// Attaches labels to every row of `embeddings`. Label entries for ids not present are ignored.
    pub fn from_label_file(embeddings: EmbeddingMatrix, labels: &LabelFile) -> Result<Self> {
        let assigned = embeddings
            .ids()
            .iter()
            .map(|id| {
                labels
                    .labels
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Reference(format!("image {id:?} has no label")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(embeddings, assigned, labels.class_names.clone())
    }

    pub fn load(
        embeddings: impl AsRef<Path>,
        labels: impl AsRef<Path>,
        normalize: bool,
    ) -> Result<Self> {
        let emb = EmbeddingMatrix::load(embeddings, normalize)?;
        Self::from_label_file(emb, &LabelFile::load(labels)?)
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row indices of the images labeled `class`, in ascending order.
    pub fn class_members(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let embeddings = self.embeddings.select_rows(rows)?;
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Self::new(embeddings, labels, self.class_names.clone())
    }
}

/// Number of labeled images per class used for training.
///
/// Serialized as an integer, or the string `"full"` for the whole training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shots {
    Count(usize),
    Full,
}

impl Serialize for Shots {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Shots::Count(n) => s.serialize_u64(*n as u64),
            Shots::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for Shots {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("shots must be at least 1")),
            Raw::Int(n) => usize::try_from(n)
                .map(Shots::Count)
                .map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Shots {
    /// The shot counts of the standard few-shot protocol.
    pub const PROTOCOL: [Shots; 6] = [
        Shots::Count(1),
        Shots::Count(2),
        Shots::Count(4),
        Shots::Count(8),
        Shots::Count(16),
        Shots::Full,
    ];

    pub fn is_protocol(&self) -> bool {
        Self::PROTOCOL.contains(self)
    }
}

impl fmt::Display for Shots {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shots::Count(n) => write!(f, "{n}"),
            Shots::Full => f.write_str("full"),
        }
    }
}

impl FromStr for Shots {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("full") {
            return Ok(Shots::Full);
        }
        match s.parse::<usize>() {
            Ok(0) => Err("shots must be at least 1".into()),
            Ok(n) => Ok(Shots::Count(n)),
            Err(_) => Err(format!("invalid shot count {s:?}; expected an integer or \"full\"")),
        }
    }
}

/// Draws `shots` images per class without replacement from a seeded ChaCha8 stream.
///
/// Classes are visited in index order and the returned rows keep their original order,
/// so the result depends only on `(set, shots, seed)`.
pub fn few_shot_sample(set: &LabeledImageSet, shots: Shots, seed: u64) -> Result<LabeledImageSet> {
    let n = match shots {
        Shots::Full => return Ok(set.clone()),
        Shots::Count(0) => return Err(Error::Contract("shots must be at least 1".into())),
        Shots::Count(n) => n,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n * set.num_classes());
    for class in 0..set.num_classes() {
        let members = set.class_members(class);
        if members.len() < n {
            return Err(Error::Sampling {
                class: set.class_names[class].clone(),
                available: members.len(),
                requested: n,
            });
        }
        let picks = rand::seq::index::sample(&mut rng, members.len(), n);
        chosen.extend(picks.iter().map(|p| members[p]));
    }
    chosen.sort_unstable();
    set.subset(&chosen)
}
