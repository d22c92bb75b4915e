//! Graph linearization: turning a KG into an ordered entity sequence.
//!
//! The relation-biased strategies score each edge ⟨e, r, e'⟩ with
//! α = σ(ṽ_e · M_r · ṽ_e'ᵀ), where M_r is the last-layer relation matrix of
//! the graph encoder, and order siblings by descending α. Traversal works on
//! the undirected view of the graph; α always uses the triple's stored
//! direction. The root is the entity of highest undirected degree (ties to
//! the lowest id); disconnected components are processed in succession, each
//! with its own root.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Triple};
use crate::rgcn::GraphEncoderParams;
use crate::tape::{sigmoid, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Strategy {
    Rbfs,
    Rdfs,
    Ffs,
    Rs,
}

impl Strategy {
    pub fn all() -> [Strategy; 4] {
        [Strategy::Rbfs, Strategy::Rdfs, Strategy::Ffs, Strategy::Rs]
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Rbfs => "RBFS",
            Strategy::Rdfs => "RDFS",
            Strategy::Ffs => "FFS",
            Strategy::Rs => "RS",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RBFS" => Ok(Strategy::Rbfs),
            "RDFS" => Ok(Strategy::Rdfs),
            "FFS" => Ok(Strategy::Ffs),
            "RS" => Ok(Strategy::Rs),
            other => Err(Error::Config(format!("unknown linearization strategy {other:?}"))),
        }
    }
}

/// An ordered entity sequence with the traversal weights that produced it.
/// Weights are present for every non-root entity under the relation-biased
/// strategies; the randomized strategies carry no weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizedSequence {
    pub order: Vec<EntityId>,
    pub weights: BTreeMap<EntityId, f64>,
    pub strategy: Strategy,
    pub root: EntityId,
}

/// α for the stored triple ⟨e, r, e'⟩: the bilinear score of the two final
/// entity embeddings under the last-layer relation matrix, through a
/// logistic sigmoid.
pub fn rbfs_weight(
    graph: &KnowledgeGraph,
    entities: &Array2<f64>,
    params: &Params,
    enc: &GraphEncoderParams,
    triple: &Triple,
) -> Result<f64> {
    if !graph.contains_triple(triple.head, triple.relation, triple.tail) {
        return Err(Error::Graph(format!("triple {triple:?} is not in the graph")));
    }
    let Some(last) = enc.layers.last() else {
        return Err(Error::Config("relation-biased weights need at least one encoder layer".into()));
    };
    let d = enc.config.d_e;
    if entities.dim() != (graph.n_entities(), d) {
        return Err(Error::Shape(format!(
            "encoding is {:?}, expected ({}, {d})",
            entities.dim(),
            graph.n_entities()
        )));
    }
    let m = params.get(last.rel_w[triple.relation]);
    let head = entities.row(triple.head);
    let tail = entities.row(triple.tail);
    let mut score = 0.0;
    for i in 0..d {
        for j in 0..d {
            score += head[i] * m[(i, j)] * tail[j];
        }
    }
    Ok(sigmoid(score))
}

fn component_root(graph: &KnowledgeGraph, visited: &[bool]) -> Option<EntityId> {
    (0..graph.n_entities())
        .filter(|&e| !visited[e])
        .max_by(|&a, &b| {
            graph
                .undirected_degree(a)
                .cmp(&graph.undirected_degree(b))
                .then_with(|| b.cmp(&a)) // lowest id wins ties
        })
}

/// BFS layers from the degree-selected roots; each disconnected component
/// contributes its own run of layers.
pub fn bfs_layers(graph: &KnowledgeGraph) -> Result<Vec<Vec<EntityId>>> {
    if graph.n_entities() == 0 {
        return Err(Error::Graph("cannot linearize an empty graph".into()));
    }
    let mut visited = vec![false; graph.n_entities()];
    let mut layers = Vec::new();
    while let Some(root) = component_root(graph, &visited) {
        visited[root] = true;
        let mut layer = vec![root];
        while !layer.is_empty() {
            layers.push(layer.clone());
            let mut next = Vec::new();
            for &u in &layer {
                for v in graph.all_neighbors(u) {
                    if !visited[v] {
                        visited[v] = true;
                        next.push(v);
                    }
                }
            }
            next.sort_unstable();
            layer = next;
        }
    }
    Ok(layers)
}

/// α of an entity discovered through one or more edges: the maximum over the
/// discovering triples, stored direction.
fn discovery_alpha(
    graph: &KnowledgeGraph,
    entities: &Array2<f64>,
    params: &Params,
    enc: &GraphEncoderParams,
    from: &[EntityId],
    to: EntityId,
) -> Result<f64> {
    let mut best: Option<f64> = None;
    for t in graph.triples() {
        let connects = (from.contains(&t.head) && t.tail == to)
            || (from.contains(&t.tail) && t.head == to);
        if connects {
            let a = rbfs_weight(graph, entities, params, enc, t)?;
            best = Some(best.map_or(a, |b: f64| b.max(a)));
        }
    }
    best.ok_or_else(|| Error::Graph(format!("entity {to} has no discovering edge")))
}

/// Relation-biased breadth-first linearization: breadth-first from the root,
/// each frontier layer sorted by descending α (ties to the lowest id).
pub fn linearize_rbfs(
    graph: &KnowledgeGraph,
    entities: &Array2<f64>,
    params: &Params,
    enc: &GraphEncoderParams,
) -> Result<LinearizedSequence> {
    if graph.n_entities() == 0 {
        return Err(Error::Graph("cannot linearize an empty graph".into()));
    }
    let mut visited = vec![false; graph.n_entities()];
    let mut order = Vec::new();
    let mut weights = BTreeMap::new();
    let mut first_root = None;

    while let Some(root) = component_root(graph, &visited) {
        first_root.get_or_insert(root);
        visited[root] = true;
        let mut layer = vec![root];
        order.push(root);
        while !layer.is_empty() {
            let mut candidates: Vec<EntityId> = Vec::new();
            for &u in &layer {
                for v in graph.all_neighbors(u) {
                    if !visited[v] && !candidates.contains(&v) {
                        candidates.push(v);
                    }
                }
            }
            let mut scored: Vec<(EntityId, f64)> = candidates
                .into_iter()
                .map(|v| discovery_alpha(graph, entities, params, enc, &layer, v).map(|a| (v, a)))
                .collect::<Result<_>>()?;
            scored.sort_by(|a, b| {
                b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0))
            });
            layer = Vec::new();
            for (v, a) in scored {
                visited[v] = true;
                weights.insert(v, a);
                order.push(v);
                layer.push(v);
            }
        }
    }

    Ok(LinearizedSequence {
        order,
        weights,
        strategy: Strategy::Rbfs,
        root: first_root.unwrap(),
    })
}

/// Relation-biased depth-first linearization: children visited in descending
/// α at each node.
pub fn linearize_rdfs(
    graph: &KnowledgeGraph,
    entities: &Array2<f64>,
    params: &Params,
    enc: &GraphEncoderParams,
) -> Result<LinearizedSequence> {
    if graph.n_entities() == 0 {
        return Err(Error::Graph("cannot linearize an empty graph".into()));
    }
    let mut visited = vec![false; graph.n_entities()];
    let mut order = Vec::new();
    let mut weights = BTreeMap::new();
    let mut first_root = None;

    fn visit(
        u: EntityId,
        graph: &KnowledgeGraph,
        entities: &Array2<f64>,
        params: &Params,
        enc: &GraphEncoderParams,
        visited: &mut [bool],
        order: &mut Vec<EntityId>,
        weights: &mut BTreeMap<EntityId, f64>,
    ) -> Result<()> {
        visited[u] = true;
        order.push(u);
        let mut children: Vec<(EntityId, f64)> = Vec::new();
        for v in graph.all_neighbors(u) {
            if !visited[v] {
                let a = discovery_alpha(graph, entities, params, enc, &[u], v)?;
                children.push((v, a));
            }
        }
        children.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        for (v, a) in children {
            if !visited[v] {
                weights.insert(v, a);
                visit(v, graph, entities, params, enc, visited, order, weights)?;
            }
        }
        Ok(())
    }

    while let Some(root) = component_root(graph, &visited) {
        first_root.get_or_insert(root);
        visit(root, graph, entities, params, enc, &mut visited, &mut order, &mut weights)?;
    }

    Ok(LinearizedSequence {
        order,
        weights,
        strategy: Strategy::Rdfs,
        root: first_root.unwrap(),
    })
}

/// Forest-fire linearization: the BFS layer structure with uniformly shuffled
/// within-layer order.
pub fn linearize_ffs(graph: &KnowledgeGraph, seed: u64) -> Result<LinearizedSequence> {
    let layers = bfs_layers(graph)?;
    let root = layers[0][0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::new();
    for mut layer in layers {
        layer.shuffle(&mut rng);
        order.extend(layer);
    }
    Ok(LinearizedSequence { order, weights: BTreeMap::new(), strategy: Strategy::Ffs, root })
}

/// Random linearization: a uniform seeded permutation of the entity set.
pub fn linearize_random(graph: &KnowledgeGraph, seed: u64) -> Result<LinearizedSequence> {
    if graph.n_entities() == 0 {
        return Err(Error::Graph("cannot linearize an empty graph".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<EntityId> = (0..graph.n_entities()).collect();
    order.shuffle(&mut rng);
    let root = order[0];
    Ok(LinearizedSequence { order, weights: BTreeMap::new(), strategy: Strategy::Rs, root })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Entity;
    use crate::rgcn::{init_graph_encoder, Nonlinearity, RgcnConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;

    fn entity(id: usize, name: &str) -> Entity {
        Entity { id, surface: vec![name.to_string()], subword_ids: vec![id as u32] }
    }

    fn graph_from(triples: &[(usize, usize, usize)], n: usize) -> KnowledgeGraph {
        let entities = (0..n).map(|i| entity(i, &format!("e{i}"))).collect();
        let triples = triples
            .iter()
            .map(|&(h, r, t)| Triple { head: h, relation: r, tail: t })
            .collect();
        KnowledgeGraph::new(entities, triples).unwrap().0
    }

    /// One-layer encoder with d_e=1 whose relation matrix is [[1.0]]; entity
    /// embeddings are then chosen directly so α values are σ(v_h · v_t).
    fn scalar_setup(n_relations: usize) -> (Params, GraphEncoderParams) {
        let cfg = RgcnConfig {
            d_e: 1,
            layers: 1,
            n_relations,
            normalize: false,
            split_inverse: false,
            nonlinearity: Nonlinearity::Relu,
        };
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = init_graph_encoder(&mut params, 8, &cfg, 0.1, &mut rng);
        for r in &enc.layers[0].rel_w {
            params.get_mut(*r).assign(&array![[1.0]]);
        }
        (params, enc)
    }

    #[test]
    fn weight_closed_forms() {
        let g = graph_from(&[(0, 0, 1)], 2);
        let (params, enc) = scalar_setup(1);
        let t = g.triples()[0];

        // zero head embedding -> sigmoid(0) = 0.5
        let entities = array![[0.0], [3.0]];
        let w = rbfs_weight(&g, &entities, &params, &enc, &t).unwrap();
        assert_abs_diff_eq!(w, 0.5, epsilon = 1e-12);

        // unit vectors, identity matrix -> sigmoid(1)
        let entities = array![[1.0], [1.0]];
        let w = rbfs_weight(&g, &entities, &params, &enc, &t).unwrap();
        assert_abs_diff_eq!(w, 1.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-12);

        // absent triple errors
        let absent = Triple { head: 1, relation: 0, tail: 0 };
        assert!(rbfs_weight(&g, &entities, &params, &enc, &absent).is_err());
    }

    #[test]
    fn weight_matches_direct_bilinear_form() {
        let g = graph_from(&[(0, 0, 1)], 2);
        let cfg = RgcnConfig {
            d_e: 4,
            layers: 2,
            n_relations: 1,
            normalize: false,
            split_inverse: false,
            nonlinearity: Nonlinearity::Relu,
        };
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = init_graph_encoder(&mut params, 4, &cfg, 0.5, &mut rng);
        let entities = ndarray::Array2::from_shape_fn((2, 4), |_| rng.gen_range(-1.0..1.0));
        let t = g.triples()[0];
        let w = rbfs_weight(&g, &entities, &params, &enc, &t).unwrap();

        let m = params.get(enc.layers[1].rel_w[0]);
        let mut score = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                score += entities[(0, i)] * m[(i, j)] * entities[(1, j)];
            }
        }
        assert_abs_diff_eq!(w, sigmoid(score), epsilon = 1e-14);
    }

    #[test]
    fn single_entity_all_strategies() {
        let g = graph_from(&[], 1);
        let (params, enc) = scalar_setup(1);
        let entities = array![[1.0]];
        for seq in [
            linearize_rbfs(&g, &entities, &params, &enc).unwrap(),
            linearize_rdfs(&g, &entities, &params, &enc).unwrap(),
            linearize_ffs(&g, 0).unwrap(),
            linearize_random(&g, 0).unwrap(),
        ] {
            assert_eq!(seq.order, vec![0]);
            assert_eq!(seq.root, 0);
        }
    }

    #[test]
    fn star_sibling_rule() {
        // A(0) with children B(1), C(2); embeddings make α_B > α_C
        let g = graph_from(&[(0, 0, 1), (0, 0, 2)], 3);
        let (params, enc) = scalar_setup(1);
        let entities = array![[1.0], [2.0], [-2.0]]; // α_B = σ(2), α_C = σ(-2)
        let seq = linearize_rbfs(&g, &entities, &params, &enc).unwrap();
        assert_eq!(seq.order, vec![0, 1, 2]);
        assert!(seq.weights[&1] > 0.85 && seq.weights[&2] < 0.15);

        // flip the sign: order of the two siblings flips
        let entities = array![[1.0], [-2.0], [2.0]];
        let seq = linearize_rbfs(&g, &entities, &params, &enc).unwrap();
        assert_eq!(seq.order, vec![0, 2, 1]);
    }

    #[test]
    fn path_graph_rbfs_equals_rdfs() {
        let g = graph_from(&[(0, 0, 1), (1, 0, 2)], 3);
        let (params, enc) = scalar_setup(1);
        let entities = array![[0.4], [0.2], [-0.7]];
        let bfs = linearize_rbfs(&g, &entities, &params, &enc).unwrap();
        let dfs = linearize_rdfs(&g, &entities, &params, &enc).unwrap();
        assert_eq!(bfs.order, dfs.order);
        // root is the middle entity (degree 2), then neighbors by α
        assert_eq!(bfs.root, 1);
    }

    #[test]
    fn rdfs_descends_before_breadth() {
        // root 0 with children 1 and 2; 1 has child 3. Make α(0->1) > α(0->2):
        // RDFS must visit 3 (a grandchild) before 2, RBFS must not.
        let g = graph_from(&[(0, 0, 1), (0, 0, 2), (1, 0, 3)], 4);
        let (params, enc) = scalar_setup(1);
        let entities = array![[1.0], [2.0], [-2.0], [0.5]];
        let bfs = linearize_rbfs(&g, &entities, &params, &enc).unwrap();
        let dfs = linearize_rdfs(&g, &entities, &params, &enc).unwrap();
        assert_eq!(bfs.order, vec![0, 1, 2, 3]);
        assert_eq!(dfs.order, vec![0, 1, 3, 2]);
    }

    #[test]
    fn randomized_strategies_are_seed_deterministic() {
        let g = graph_from(&[(0, 0, 1), (0, 0, 2), (1, 0, 3), (2, 0, 4)], 5);
        assert_eq!(linearize_ffs(&g, 7).unwrap(), linearize_ffs(&g, 7).unwrap());
        assert_eq!(linearize_random(&g, 7).unwrap(), linearize_random(&g, 7).unwrap());
        // different seeds shuffle differently at least once over a few tries
        let base = linearize_random(&g, 0).unwrap();
        assert!((1..10).any(|s| linearize_random(&g, s).unwrap().order != base.order));
    }

    #[test]
    fn ffs_preserves_bfs_layers() {
        let g = graph_from(&[(0, 0, 1), (0, 0, 2), (1, 0, 3), (2, 0, 4), (3, 0, 5)], 6);
        let layers = bfs_layers(&g).unwrap();
        for seed in 0..20 {
            let seq = linearize_ffs(&g, seed).unwrap();
            let mut at = 0;
            for layer in &layers {
                let got: std::collections::BTreeSet<_> =
                    seq.order[at..at + layer.len()].iter().copied().collect();
                let want: std::collections::BTreeSet<_> = layer.iter().copied().collect();
                assert_eq!(got, want, "seed {seed}");
                at += layer.len();
            }
        }
    }

    #[test]
    fn all_strategies_emit_permutations() {
        let g = graph_from(&[(0, 0, 1), (2, 0, 1), (3, 1, 0), (4, 1, 4)], 6); // incl. self-loop and isolated entity 5
        let (params, enc) = scalar_setup(2);
        let entities = array![[0.3], [-0.2], [0.9], [0.1], [-0.5], [0.0]];
        for seq in [
            linearize_rbfs(&g, &entities, &params, &enc).unwrap(),
            linearize_rdfs(&g, &entities, &params, &enc).unwrap(),
            linearize_ffs(&g, 5).unwrap(),
            linearize_random(&g, 5).unwrap(),
        ] {
            let mut sorted = seq.order.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..6).collect::<Vec<_>>(), "{:?}", seq.strategy);
        }
    }

    #[test]
    fn rbfs_weights_cover_non_roots() {
        let g = graph_from(&[(0, 0, 1), (1, 0, 2), (0, 0, 3)], 4);
        let (params, enc) = scalar_setup(1);
        let entities = array![[0.1], [0.7], [-0.3], [0.2]];
        let seq = linearize_rbfs(&g, &entities, &params, &enc).unwrap();
        for e in 0..4 {
            if e == seq.root {
                assert!(!seq.weights.contains_key(&e));
            } else {
                let w = seq.weights[&e];
                assert!(w > 0.0 && w < 1.0);
            }
        }
    }

    #[test]
    fn empty_graph_errors() {
        let g = graph_from(&[], 0);
        let (params, enc) = scalar_setup(1);
        let entities = Array2::zeros((0, 1));
        assert!(linearize_rbfs(&g, &entities, &params, &enc).is_err());
        assert!(linearize_ffs(&g, 0).is_err());
        assert!(linearize_random(&g, 0).is_err());
    }
}
