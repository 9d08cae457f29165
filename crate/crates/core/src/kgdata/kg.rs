use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// `(kg1 entity id, kg2 entity id)`.
pub type Link = (usize, usize);

/// One knowledge graph with dense entity and relation ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Kg {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_ids: HashMap<String, usize>,
    relation_ids: HashMap<String, usize>,
    triples: Vec<Triple>,
    seen: HashSet<Triple>,
}

impl Kg {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `uri`, assigning the next free id on first sight.
    pub fn intern_entity(&mut self, uri: &str) -> usize {
        intern(&mut self.entities, &mut self.entity_ids, uri)
    }

    pub fn intern_relation(&mut self, uri: &str) -> usize {
        intern(&mut self.relations, &mut self.relation_ids, uri)
    }

    /// Adds a triple by id; exact duplicates are dropped (returns false).
    pub fn add_triple(&mut self, t: Triple) -> Result<bool> {
        if t.head >= self.entities.len() || t.tail >= self.entities.len() {
            return Err(Error::IndexOutOfRange {
                op: "add_triple entity",
                index: t.head.max(t.tail),
                bound: self.entities.len(),
            });
        }
        if t.relation >= self.relations.len() {
            return Err(Error::IndexOutOfRange {
                op: "add_triple relation",
                index: t.relation,
                bound: self.relations.len(),
            });
        }
        if !self.seen.insert(t) {
            return Ok(false);
        }
        self.triples.push(t);
        Ok(true)
    }

    pub fn add_triple_uris(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.intern_entity(head);
        let r = self.intern_relation(relation);
        let t = self.intern_entity(tail);
        self.add_triple(Triple {
            head: h,
            relation: r,
            tail: t,
        })
        .expect("interned ids are in range")
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_uri(&self, id: usize) -> Option<&str> {
        self.entities.get(id).map(String::as_str)
    }

    pub fn relation_uri(&self, id: usize) -> Option<&str> {
        self.relations.get(id).map(String::as_str)
    }

    pub fn entity_id(&self, uri: &str) -> Option<usize> {
        self.entity_ids.get(uri).copied()
    }

    pub fn entity_uris(&self) -> &[String] {
        &self.entities
    }
}

fn intern(names: &mut Vec<String>, ids: &mut HashMap<String, usize>, uri: &str) -> usize {
    if let Some(&id) = ids.get(uri) {
        return id;
    }
    let id = names.len();
    names.push(uri.to_owned());
    ids.insert(uri.to_owned(), id);
    id
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkSplit {
    pub train: Vec<Link>,
    pub valid: Vec<Link>,
    pub test: Vec<Link>,
}

/// Two graphs plus seed/validation/test alignments.
#[derive(Debug, Clone, PartialEq)]
pub struct KgPair {
    pub kg1: Kg,
    pub kg2: Kg,
    pub train_links: Vec<Link>,
    pub valid_links: Vec<Link>,
    pub test_links: Vec<Link>,
}

impl KgPair {
    pub fn new(kg1: Kg, kg2: Kg, split: LinkSplit) -> Result<Self> {
        let pair = Self {
            kg1,
            kg2,
            train_links: split.train,
            valid_links: split.valid,
            test_links: split.test,
        };
        pair.validate()?;
        Ok(pair)
    }

    /// Checks link ids exist and that the three link sets are disjoint on
    /// both sides.
    pub fn validate(&self) -> Result<()> {
        let mut left = HashSet::new();
        let mut right = HashSet::new();
        for (name, links) in [
            ("train", &self.train_links),
            ("valid", &self.valid_links),
            ("test", &self.test_links),
        ] {
            for &(a, b) in links {
                if a >= self.kg1.num_entities() || b >= self.kg2.num_entities() {
                    return Err(Error::invalid(format!(
                        "{name} link ({a}, {b}) references a missing entity"
                    )));
                }
                if !left.insert(a) || !right.insert(b) {
                    return Err(Error::invalid(format!(
                        "{name} link ({a}, {b}) overlaps another link"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self) -> LinkSplit {
        LinkSplit {
            train: self.train_links.clone(),
            valid: self.valid_links.clone(),
            test: self.test_links.clone(),
        }
    }

    pub fn all_links(&self) -> Vec<Link> {
        let mut v = self.train_links.clone();
        v.extend(&self.valid_links);
        v.extend(&self.test_links);
        v
    }
}
