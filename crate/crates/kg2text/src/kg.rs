//! Domain data model: knowledge graphs, instances, dataset ingestion and
//! validation, mention masking, and few-shot subsampling.
//!
//! A dataset file is UTF-8 with one JSON object per line:
//! `{"triples": [[head, rel, tail], ...], "text": "...", "mentions": [[surface, start, end], ...]}`.
//! Text is whitespace-pretokenized; mention indices are word indices with an
//! inclusive end. Entities are identified by their surface string.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Literal used for masked mention words.
pub const MASK_TOKEN: &str = "[MASK]";

pub type EntityId = usize;
pub type RelationId = usize;

/// An entity: a surface form of one or more word tokens. Subword ids are
/// filled in by the tokenizer once a vocabulary exists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub surface: Vec<String>,
    pub subword_ids: Vec<u32>,
}

impl Entity {
    pub fn surface_str(&self) -> String {
        self.surface.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: RelationId,
    pub label: String,
}

/// A directed fact ⟨head, relation, tail⟩.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Directed multigraph over entities with per-(entity, relation) neighbor
/// sets. Neighbor sets fold both edge directions, so traversal sees an
/// undirected view while triples keep their stored direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    relations: BTreeSet<RelationId>,
    triples: Vec<Triple>,
    adjacency: BTreeMap<(EntityId, RelationId), BTreeSet<EntityId>>,
}

impl KnowledgeGraph {
    /// Builds a graph, validating that every triple references known entity
    /// and relation ids. Duplicate identical triples are dropped; the number
    /// removed is returned alongside the graph.
    pub fn new(entities: Vec<Entity>, triples: Vec<Triple>) -> Result<(Self, usize)> {
        for (i, e) in entities.iter().enumerate() {
            if e.id != i {
                return Err(Error::Graph(format!("entity ids must be dense, got {} at {i}", e.id)));
            }
            if e.surface.is_empty() {
                return Err(Error::Graph(format!("entity {} has an empty surface", e.id)));
            }
        }
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(triples.len());
        let mut dropped = 0;
        for t in triples {
            if t.head >= entities.len() || t.tail >= entities.len() {
                return Err(Error::Graph(format!(
                    "triple {:?} references an unknown entity (have {})",
                    t,
                    entities.len()
                )));
            }
            if seen.insert(t) {
                kept.push(t);
            } else {
                dropped += 1;
            }
        }
        let mut relations = BTreeSet::new();
        let mut adjacency: BTreeMap<(EntityId, RelationId), BTreeSet<EntityId>> = BTreeMap::new();
        for t in &kept {
            relations.insert(t.relation);
            adjacency.entry((t.head, t.relation)).or_default().insert(t.tail);
            adjacency.entry((t.tail, t.relation)).or_default().insert(t.head);
        }
        Ok((
            Self { entities, relations, triples: kept, adjacency },
            dropped,
        ))
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Relation ids that occur in this graph.
    pub fn relations_used(&self) -> &BTreeSet<RelationId> {
        &self.relations
    }

    pub fn contains_triple(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.triples.iter().any(|t| t.head == head && t.relation == relation && t.tail == tail)
    }

    /// N_e^r: neighbors of `e` under relation `r`, both directions.
    pub fn neighbors(&self, e: EntityId, r: RelationId) -> Result<BTreeSet<EntityId>> {
        if e >= self.entities.len() {
            return Err(Error::Graph(format!("unknown entity id {e}")));
        }
        Ok(self.adjacency.get(&(e, r)).cloned().unwrap_or_default())
    }

    /// Neighbors of `e` across all relations.
    pub fn all_neighbors(&self, e: EntityId) -> BTreeSet<EntityId> {
        let mut out = BTreeSet::new();
        for r in &self.relations {
            if let Some(set) = self.adjacency.get(&(e, *r)) {
                out.extend(set.iter().copied());
            }
        }
        out
    }

    /// Number of triples incident to `e` (a self-loop counts once).
    pub fn undirected_degree(&self, e: EntityId) -> usize {
        self.triples.iter().filter(|t| t.head == e || t.tail == e).count()
    }

    pub fn has_self_loops(&self) -> bool {
        self.triples.iter().any(|t| t.head == t.tail)
    }

    /// Returns a copy with entity subword ids replaced by `ids[e]`.
    pub fn with_subword_ids(&self, ids: &[Vec<u32>]) -> Result<Self> {
        if ids.len() != self.entities.len() {
            return Err(Error::Graph("subword id list length mismatch".into()));
        }
        let mut g = self.clone();
        for (e, sw) in g.entities.iter_mut().zip(ids) {
            if sw.is_empty() {
                return Err(Error::Graph(format!("entity {} tokenized to nothing", e.id)));
            }
            e.subword_ids = sw.clone();
        }
        Ok(g)
    }
}

/// First mention of an entity in the target text: word-index span, inclusive
/// end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub entity: EntityId,
    pub start: usize,
    pub end: usize,
}

/// One (graph, text, mentions, masked text) example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub graph: KnowledgeGraph,
    pub text: Vec<String>,
    pub mentions: Vec<EntityMention>,
    pub masked_text: Vec<String>,
}

impl Instance {
    pub fn mention_for(&self, e: EntityId) -> Option<&EntityMention> {
        self.mentions.iter().find(|m| m.entity == e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub relations: Vec<Relation>,
    pub split: String,
}

impl Dataset {
    pub fn relation_label(&self, id: RelationId) -> &str {
        &self.relations[id].label
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }
}

/// Replaces every word inside a mention span with the mask token. Output has
/// the same length as the input; spans must be in range and non-overlapping.
pub fn build_masked_text(text: &[String], mentions: &[EntityMention]) -> Result<Vec<String>> {
    let t = text.len();
    let mut covered = vec![false; t];
    let mut out: Vec<String> = text.to_vec();
    for m in mentions {
        if m.start > m.end || m.end >= t {
            return Err(Error::Validation {
                instance: "<standalone>".into(),
                message: format!("mention span {}..={} out of range for length {t}", m.start, m.end),
            });
        }
        for i in m.start..=m.end {
            if covered[i] {
                return Err(Error::Validation {
                    instance: "<standalone>".into(),
                    message: format!("overlapping mention spans at word {i}"),
                });
            }
            covered[i] = true;
            out[i] = MASK_TOKEN.to_string();
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize, Serialize)]
struct RawRecord {
    triples: Vec<(String, String, String)>,
    text: String,
    mentions: Vec<(String, usize, usize)>,
}

/// Shared relation-vocabulary builder across a file; labels get ids in order
/// of first appearance.
struct RelationVocab {
    labels: Vec<String>,
    by_label: HashMap<String, RelationId>,
}

impl RelationVocab {
    fn new() -> Self {
        Self { labels: Vec::new(), by_label: HashMap::new() }
    }

    fn intern(&mut self, label: &str) -> RelationId {
        if let Some(&id) = self.by_label.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_string());
        self.by_label.insert(label.to_string(), id);
        id
    }
}

fn build_instance(raw: RawRecord, vocab: &mut RelationVocab, line: usize) -> Result<Instance> {
    let err = |message: String| Error::Validation { instance: format!("line {line}"), message };

    if raw.triples.is_empty() {
        return Err(err("instance has no triples".into()));
    }
    let mut surfaces: Vec<String> = Vec::new();
    let mut by_surface: HashMap<String, EntityId> = HashMap::new();
    let intern_entity = |s: &str, surfaces: &mut Vec<String>, by: &mut HashMap<String, EntityId>| {
        if let Some(&id) = by.get(s) {
            id
        } else {
            let id = surfaces.len();
            surfaces.push(s.to_string());
            by.insert(s.to_string(), id);
            id
        }
    };

    let mut triples = Vec::new();
    for (h, r, t) in &raw.triples {
        let head = intern_entity(h, &mut surfaces, &mut by_surface);
        let tail = intern_entity(t, &mut surfaces, &mut by_surface);
        let relation = vocab.intern(r);
        triples.push(Triple { head, relation, tail });
    }

    let entities: Vec<Entity> = surfaces
        .iter()
        .enumerate()
        .map(|(id, s)| {
            let surface: Vec<String> = s.split_whitespace().map(str::to_string).collect();
            if surface.is_empty() {
                return Err(err(format!("entity {s:?} has an empty surface")));
            }
            Ok(Entity { id, surface, subword_ids: Vec::new() })
        })
        .collect::<Result<_>>()?;

    let (graph, dropped) = KnowledgeGraph::new(entities, triples)?;
    if dropped > 0 {
        log::warn!("line {line}: removed {dropped} duplicate triple(s)");
    }
    if graph.has_self_loops() {
        log::warn!("line {line}: graph contains self-loop triples");
    }

    let text: Vec<String> = raw.text.split_whitespace().map(str::to_string).collect();
    if text.iter().any(|w| w == MASK_TOKEN) {
        return Err(err(format!("raw text contains the reserved token {MASK_TOKEN}")));
    }
    let t_len = text.len();

    let mut mentions: Vec<EntityMention> = Vec::new();
    let mut mentioned: HashSet<EntityId> = HashSet::new();
    for (surface, start, end) in &raw.mentions {
        let Some(&entity) = by_surface.get(surface.as_str()) else {
            return Err(err(format!("mention references unknown entity {surface:?}")));
        };
        if *start > *end || *end >= t_len {
            return Err(err(format!(
                "mention span {start}..={end} out of range for text length {t_len}"
            )));
        }
        if !mentioned.insert(entity) {
            log::warn!("line {line}: extra mention of {surface:?} ignored, keeping the first");
            continue;
        }
        mentions.push(EntityMention { entity, start: *start, end: *end });
    }
    mentions.sort_by_key(|m| m.start);
    for pair in mentions.windows(2) {
        if pair[1].start <= pair[0].end {
            return Err(err(format!(
                "overlapping mention spans {}..={} and {}..={}",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }

    let masked_text = build_masked_text(&text, &mentions).map_err(|e| match e {
        Error::Validation { message, .. } => err(message),
        other => other,
    })?;

    Ok(Instance { graph, text, mentions, masked_text })
}

/// Parses a JSON-lines dataset file. Every instance is validated against the
/// type invariants; the relation vocabulary is shared across the file.
pub fn parse_dataset(path: impl AsRef<Path>, split: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_dataset_reader(std::io::BufReader::new(file), split)
}

pub fn parse_dataset_reader(reader: impl BufRead, split: &str) -> Result<Dataset> {
    let mut vocab = RelationVocab::new();
    let mut instances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        instances.push(build_instance(raw, &mut vocab, line_no)?);
    }
    let relations = vocab
        .labels
        .into_iter()
        .enumerate()
        .map(|(id, label)| Relation { id, label })
        .collect();
    Ok(Dataset { instances, relations, split: split.to_string() })
}

/// Writes a dataset back in the line-oriented input format.
pub fn serialize_dataset(dataset: &Dataset, mut out: impl Write) -> Result<()> {
    for inst in &dataset.instances {
        let triples: Vec<(String, String, String)> = inst
            .graph
            .triples()
            .iter()
            .map(|t| {
                (
                    inst.graph.entity(t.head).unwrap().surface_str(),
                    dataset.relation_label(t.relation).to_string(),
                    inst.graph.entity(t.tail).unwrap().surface_str(),
                )
            })
            .collect();
        let mentions: Vec<(String, usize, usize)> = inst
            .mentions
            .iter()
            .map(|m| (inst.graph.entity(m.entity).unwrap().surface_str(), m.start, m.end))
            .collect();
        let raw = RawRecord { triples, text: inst.text.join(" "), mentions };
        serde_json::to_writer(&mut out, &raw)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Deterministically samples `k` instances without replacement: a seeded
/// permutation of the dataset truncated to `k`. The relation vocabulary is
/// inherited from the parent.
pub fn few_shot_subsample(dataset: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    let n = dataset.instances.len();
    if k > n {
        return Err(Error::Config(format!("cannot sample {k} instances from {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.truncate(k);
    Ok(Dataset {
        instances: order.iter().map(|&i| dataset.instances[i].clone()).collect(),
        relations: dataset.relations.clone(),
        split: dataset.split.clone(),
    })
}
