//! Candidate concept pools and per-class concept selections.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// On-disk concept pool: `{"classes":[{"name":str,"concepts":[{"id":str,"text":str}]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolFile {
    pub classes: Vec<PoolClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolClass {
    pub name: String,
    pub concepts: Vec<PoolEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    pub text: String,
}

impl PoolFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("invalid pool file {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub id: String,
    pub text: String,
    pub class_index: usize,
    /// Row of this concept in the text embedding matrix the pool was resolved against.
    pub embedding_row: usize,
}

/// The candidate set, partitioned by class. The union of the per-class lists is the whole pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptPool {
    concepts: Vec<Concept>,
    per_class: Vec<Vec<usize>>,
    class_names: Vec<String>,
}

impl ConceptPool {
    /// Resolves every pool entry against `text_embeddings` by id.
    pub fn from_file(file: &PoolFile, text_embeddings: &EmbeddingMatrix) -> Result<Self> {
        let mut concepts = Vec::new();
        let mut per_class = Vec::with_capacity(file.classes.len());
        let mut class_names = Vec::with_capacity(file.classes.len());
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for (class_index, class) in file.classes.iter().enumerate() {
            if class_names.contains(&class.name) {
                return Err(Error::Partition(format!(
                    "class {:?} listed twice in pool",
                    class.name
                )));
            }
            class_names.push(class.name.clone());
            let mut members = Vec::with_capacity(class.concepts.len());
            for entry in &class.concepts {
                if let Some(prev) = owner.insert(&entry.id, &class.name) {
                    return Err(Error::Partition(format!(
                        "concept {:?} assigned to both {prev:?} and {:?}",
                        entry.id, class.name
                    )));
                }
                let embedding_row = text_embeddings.position(&entry.id).ok_or_else(|| {
                    Error::Reference(format!(
                        "concept {:?} has no row in the text embeddings",
                        entry.id
                    ))
                })?;
                members.push(concepts.len());
                concepts.push(Concept {
                    id: entry.id.clone(),
                    text: entry.text.clone(),
                    class_index,
                    embedding_row,
                });
            }
            per_class.push(members);
        }
        if class_names.is_empty() {
            return Err(Error::Data("pool declares no classes".into()));
        }
        Ok(Self {
            concepts,
            per_class,
            class_names,
        })
    }

    pub fn load(path: impl AsRef<Path>, text_embeddings: &EmbeddingMatrix) -> Result<Self> {
        Self::from_file(&PoolFile::load(path)?, text_embeddings)
    }

    /// Reorders classes to match `class_names`. Both must name the same set of classes.
    pub fn align_classes(&self, class_names: &[String]) -> Result<Self> {
        if class_names.len() != self.class_names.len() {
            return Err(Error::Reference(format!(
                "pool has {} classes, labels declare {}",
                self.class_names.len(),
                class_names.len()
            )));
        }
        let mut old_of_new = Vec::with_capacity(class_names.len());
        for name in class_names {
            let old = self
                .class_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Reference(format!("class {name:?} missing from pool")))?;
            old_of_new.push(old);
        }
        // Concept order follows the new class order so pool indices stay class-major.
        let mut concepts = Vec::with_capacity(self.concepts.len());
        let mut per_class = Vec::with_capacity(old_of_new.len());
        for (class_index, &old) in old_of_new.iter().enumerate() {
            let mut members = Vec::with_capacity(self.per_class[old].len());
            for &i in &self.per_class[old] {
                members.push(concepts.len());
                concepts.push(Concept {
                    class_index,
                    ..self.concepts[i].clone()
                });
            }
            per_class.push(members);
        }
        Ok(Self {
            concepts,
            per_class,
            class_names: class_names.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn concept(&self, i: usize) -> &Concept {
        &self.concepts[i]
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Pool indices of the candidates of `class`.
    pub fn class_concepts(&self, class: usize) -> &[usize] {
        &self.per_class[class]
    }

    pub fn per_class(&self) -> &[Vec<usize>] {
        &self.per_class
    }

    /// Text embedding rows of all pool concepts, in pool order.
    pub fn embedding_rows(&self) -> Vec<usize> {
        self.concepts.iter().map(|c| c.embedding_row).collect()
    }
}

/// The per-class selections C_y and their union C.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSubset {
    per_class: Vec<Vec<usize>>,
    union: Vec<usize>,
    memberships: Vec<BTreeSet<usize>>,
    size_per_class: usize,
}

impl ConceptSubset {
    /// Pool indices selected for each class, in selection order.
    pub fn per_class(&self) -> &[Vec<usize>] {
        &self.per_class
    }

    /// Distinct pool indices, class-major then selection order.
    pub fn union(&self) -> &[usize] {
        &self.union
    }

    /// For each union entry, the classes that selected it.
    pub fn memberships(&self) -> &[BTreeSet<usize>] {
        &self.memberships
    }

    pub fn size_per_class(&self) -> usize {
        self.size_per_class
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn len(&self) -> usize {
        self.union.len()
    }

    pub fn is_empty(&self) -> bool {
        self.union.is_empty()
    }
}

/// Builds the union of per-class selections. A concept picked by several classes appears once
/// in the union and records every selecting class in its membership set.
pub fn union_subset(per_class: &[Vec<usize>]) -> Result<ConceptSubset> {
    let k = match per_class.first() {
        None => return Err(Error::Selection("no classes to select for".into())),
        Some(first) => first.len(),
    };
    for (class, sel) in per_class.iter().enumerate() {
        if sel.is_empty() {
            return Err(Error::Selection(format!("class {class} has an empty selection")));
        }
        if sel.len() != k {
            return Err(Error::Selection(format!(
                "class {class} selected {} concepts, expected k = {k} for every class",
                sel.len()
            )));
        }
        let distinct: BTreeSet<_> = sel.iter().collect();
        if distinct.len() != sel.len() {
            return Err(Error::Selection(format!(
                "class {class} selected a concept more than once"
            )));
        }
    }
    let mut union = Vec::new();
    let mut memberships: Vec<BTreeSet<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for (class, sel) in per_class.iter().enumerate() {
        for &c in sel {
            let at = *slot.entry(c).or_insert_with(|| {
                union.push(c);
                memberships.push(BTreeSet::new());
                union.len() - 1
            });
            memberships[at].insert(class);
        }
    }
    Ok(ConceptSubset {
        per_class: per_class.to_vec(),
        union,
        memberships,
        size_per_class: k,
    })
}
