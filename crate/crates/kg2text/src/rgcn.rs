//! Token-level relational graph convolutional encoder.
//!
//! Every entity expands into one node per subword token; a KG edge induces
//! the full bipartite product of edges between the two entities' node sets,
//! and nodes of one entity are linked by a reserved intra-entity relation.
//! Layer update for node i:
//!
//! ```text
//! h'_i = σ( Σ_r Σ_{j ∈ N_i^r} h_j W_r  +  h_i W_0 )
//! ```
//!
//! with no neighbor-count normalization (an optional flag row-normalizes the
//! per-relation adjacency for stability experiments). Neighbor sets fold both
//! edge directions unless the inverse-relation split is enabled. The final
//! per-entity embedding is the arithmetic mean of its node states.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::tape::{NodeId, ParamId, Params, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Nonlinearity {
    Relu,
    Identity,
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Nonlinearity::Relu
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgcnConfig {
    /// Entity/node embedding dimension d_E.
    pub d_e: usize,
    /// Number of stacked layers L.
    pub layers: usize,
    /// Dataset relation vocabulary size (excluding the intra-entity relation).
    pub n_relations: usize,
    /// Row-normalize each per-relation adjacency (off = literal update rule).
    #[serde(default)]
    pub normalize: bool,
    /// Use separate weights for inverse-direction edges.
    #[serde(default)]
    pub split_inverse: bool,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
}

impl RgcnConfig {
    /// Number of relation weight matrices per layer: dataset relations,
    /// optionally doubled for inverse edges, plus the intra-entity relation.
    pub fn n_relation_weights(&self) -> usize {
        if self.split_inverse {
            2 * self.n_relations + 1
        } else {
            self.n_relations + 1
        }
    }

    /// Index of the reserved intra-entity relation weight.
    pub fn intra_relation(&self) -> usize {
        self.n_relation_weights() - 1
    }
}

#[derive(Debug, Clone)]
pub struct RgcnLayerParams {
    pub self_w: ParamId,
    pub rel_w: Vec<ParamId>,
}

/// Parameter handles for the graph encoder: the shared token-level node
/// embedding table and per-layer weight matrices.
#[derive(Debug, Clone)]
pub struct GraphEncoderParams {
    pub node_table: ParamId,
    pub layers: Vec<RgcnLayerParams>,
    pub config: RgcnConfig,
}

pub fn init_graph_encoder(
    params: &mut Params,
    vocab_size: usize,
    config: &RgcnConfig,
    init_std: f64,
    rng: &mut impl Rng,
) -> GraphEncoderParams {
    let table = Array2::from_shape_fn((vocab_size, config.d_e), |_| rng.gen_range(-0.1..0.1));
    let node_table = params.insert("graph_encoder.node_table", table);
    let normal = Normal::new(0.0, init_std).unwrap();
    let mut layers = Vec::new();
    for l in 0..config.layers {
        let self_w = params.insert(
            &format!("graph_encoder.layer{l}.self"),
            Array2::from_shape_fn((config.d_e, config.d_e), |_| normal.sample(rng)),
        );
        let rel_w = (0..config.n_relation_weights())
            .map(|r| {
                params.insert(
                    &format!("graph_encoder.layer{l}.rel{r}"),
                    Array2::from_shape_fn((config.d_e, config.d_e), |_| normal.sample(rng)),
                )
            })
            .collect();
        layers.push(RgcnLayerParams { self_w, rel_w });
    }
    GraphEncoderParams { node_table, layers, config: config.clone() }
}

/// Replaces the node embedding table with vectors from a pretrained file:
/// JSON `{"dim": d, "vectors": {"<token id>": [f64; d], ...}}`. Ids absent
/// from the file keep their random initialization.
pub fn load_node_embeddings(params: &mut Params, enc: &GraphEncoderParams, json: &str) -> Result<usize> {
    #[derive(Deserialize)]
    struct PretrainedEmbeddings {
        dim: usize,
        vectors: std::collections::HashMap<u32, Vec<f64>>,
    }
    let file: PretrainedEmbeddings = serde_json::from_str(json)?;
    if file.dim != enc.config.d_e {
        return Err(Error::Shape(format!(
            "pretrained embeddings have dim {}, expected {}",
            file.dim, enc.config.d_e
        )));
    }
    let table = params.get_mut(enc.node_table);
    let mut loaded = 0;
    for (id, vec) in file.vectors {
        if vec.len() != file.dim {
            return Err(Error::Shape(format!("vector for id {id} has length {}", vec.len())));
        }
        let row = id as usize;
        if row >= table.dim().0 {
            return Err(Error::Shape(format!("token id {id} outside the vocabulary")));
        }
        for (j, v) in vec.iter().enumerate() {
            table[(row, j)] = *v;
        }
        loaded += 1;
    }
    Ok(loaded)
}

/// The expanded node-level graph: one node per (entity, subword token), with
/// per-relation symmetric 0/1 adjacency (or direction-split when enabled).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGraph {
    /// Subword token id of each node.
    pub node_tokens: Vec<u32>,
    /// Entity owning each node.
    pub node_entity: Vec<usize>,
    /// Node indices per entity, in token order.
    pub entity_nodes: Vec<Vec<usize>>,
    /// One adjacency matrix per relation weight (last is intra-entity).
    pub adjacency: Vec<Array2<f64>>,
}

impl NodeGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_tokens.len()
    }

    /// Number of undirected node-level edges under relation weight `r`
    /// (diagonal entries count once).
    pub fn edge_count(&self, r: usize) -> usize {
        let a = &self.adjacency[r];
        let n = a.dim().0;
        let mut count = 0;
        for i in 0..n {
            for j in i..n {
                if a[(i, j)] != 0.0 || a[(j, i)] != 0.0 {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Expands a KG into its node-level graph. Every entity must already carry
/// subword ids.
pub fn node_graph(graph: &KnowledgeGraph, config: &RgcnConfig) -> Result<NodeGraph> {
    let mut node_tokens = Vec::new();
    let mut node_entity = Vec::new();
    let mut entity_nodes = Vec::new();
    for e in graph.entities() {
        if e.subword_ids.is_empty() {
            return Err(Error::Graph(format!(
                "entity {} ({:?}) has not been tokenized",
                e.id,
                e.surface_str()
            )));
        }
        let mut nodes = Vec::new();
        for &tok in &e.subword_ids {
            nodes.push(node_tokens.len());
            node_tokens.push(tok);
            node_entity.push(e.id);
        }
        entity_nodes.push(nodes);
    }

    let n = node_tokens.len();
    let mut adjacency = vec![Array2::<f64>::zeros((n, n)); config.n_relation_weights()];

    for t in graph.triples() {
        if t.relation >= config.n_relations {
            return Err(Error::Graph(format!(
                "triple relation {} outside the configured vocabulary of {}",
                t.relation, config.n_relations
            )));
        }
        for &i in &entity_nodes[t.head] {
            for &j in &entity_nodes[t.tail] {
                if config.split_inverse {
                    // forward weight gathers from tail nodes, inverse from head nodes
                    adjacency[t.relation][(i, j)] = 1.0;
                    adjacency[config.n_relations + t.relation][(j, i)] = 1.0;
                } else {
                    adjacency[t.relation][(i, j)] = 1.0;
                    adjacency[t.relation][(j, i)] = 1.0;
                }
            }
        }
    }

    let intra = config.intra_relation();
    for nodes in &entity_nodes {
        for (a, &i) in nodes.iter().enumerate() {
            for &j in &nodes[a + 1..] {
                adjacency[intra][(i, j)] = 1.0;
                adjacency[intra][(j, i)] = 1.0;
            }
        }
    }

    if config.normalize {
        for a in adjacency.iter_mut() {
            for mut row in a.rows_mut() {
                let s: f64 = row.sum();
                if s > 0.0 {
                    row.mapv_inplace(|x| x / s);
                }
            }
        }
    }

    Ok(NodeGraph { node_tokens, node_entity, entity_nodes, adjacency })
}

/// One layer of the update rule on the tape. `adjacency_nodes` are constant
/// tape nodes, one per relation weight.
pub fn rgcn_layer(
    tape: &mut Tape,
    h: NodeId,
    adjacency_nodes: &[NodeId],
    params: &Params,
    layer: &RgcnLayerParams,
    nonlinearity: Nonlinearity,
) -> Result<NodeId> {
    let d = tape.shape(h).1;
    if adjacency_nodes.len() != layer.rel_w.len() {
        return Err(Error::Shape(format!(
            "{} adjacency matrices for {} relation weights",
            adjacency_nodes.len(),
            layer.rel_w.len()
        )));
    }
    if params.get(layer.self_w).dim() != (d, d) {
        return Err(Error::Shape(format!(
            "self weight is {:?}, node states have width {d}",
            params.get(layer.self_w).dim()
        )));
    }
    let w0 = tape.param(params, layer.self_w);
    let mut acc = tape.matmul(h, w0);
    for (r, &adj) in adjacency_nodes.iter().enumerate() {
        let wr = tape.param(params, layer.rel_w[r]);
        let gathered = tape.matmul(adj, h);
        let transformed = tape.matmul(gathered, wr);
        acc = tape.add(acc, transformed);
    }
    Ok(match nonlinearity {
        Nonlinearity::Relu => tape.relu(acc),
        Nonlinearity::Identity => acc,
    })
}

/// Graph encoding on a tape: per-node final states and mean-pooled per-entity
/// embeddings.
pub struct GraphEncoding {
    /// Final node states, n_nodes × d_E.
    pub nodes: NodeId,
    /// Pooled entity embeddings, n_entities × d_E.
    pub entities: NodeId,
}

/// Runs all L layers starting from the node embedding table and pools per
/// entity.
pub fn encode_graph(
    tape: &mut Tape,
    params: &Params,
    enc: &GraphEncoderParams,
    ng: &NodeGraph,
) -> Result<GraphEncoding> {
    let table = tape.param(params, enc.node_table);
    let ids: Vec<usize> = ng.node_tokens.iter().map(|&t| t as usize).collect();
    let mut h = tape.gather_rows(table, ids);
    let adjacency_nodes: Vec<NodeId> =
        ng.adjacency.iter().map(|a| tape.constant(a.clone())).collect();
    for layer in &enc.layers {
        h = rgcn_layer(tape, h, &adjacency_nodes, params, layer, enc.config.nonlinearity)?;
    }
    let entities = tape.mean_pool_rows(h, ng.entity_nodes.clone());
    Ok(GraphEncoding { nodes: h, entities })
}

/// Convenience wrapper returning plain arrays (scratch tape, no gradients).
pub fn encode_graph_values(
    params: &Params,
    enc: &GraphEncoderParams,
    ng: &NodeGraph,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut tape = Tape::new();
    let encoding = encode_graph(&mut tape, params, enc, ng)?;
    Ok((tape.value(encoding.nodes).clone(), tape.value(encoding.entities).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Entity, Triple};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entity(id: usize, surface: &str, subwords: Vec<u32>) -> Entity {
        Entity {
            id,
            surface: surface.split_whitespace().map(str::to_string).collect(),
            subword_ids: subwords,
        }
    }

    fn config(n_relations: usize, layers: usize, d_e: usize) -> RgcnConfig {
        RgcnConfig {
            d_e,
            layers,
            n_relations,
            normalize: false,
            split_inverse: false,
            nonlinearity: Nonlinearity::Relu,
        }
    }

    #[test]
    fn product_construction_edge_counts() {
        let entities = vec![
            entity(0, "iron man", vec![10, 11]),
            entity(1, "stan lee", vec![12, 13]),
        ];
        let triples = vec![Triple { head: 1, relation: 0, tail: 0 }];
        let (graph, _) = KnowledgeGraph::new(entities, triples).unwrap();
        let cfg = config(1, 1, 4);
        let ng = node_graph(&graph, &cfg).unwrap();
        assert_eq!(ng.n_nodes(), 4);
        assert_eq!(ng.edge_count(0), 4); // full bipartite product
        assert_eq!(ng.edge_count(cfg.intra_relation()), 2); // one inside each entity
    }

    #[test]
    fn single_token_entity_no_triples() {
        let entities = vec![entity(0, "athens", vec![5])];
        let (graph, _) = KnowledgeGraph::new(entities, vec![]).unwrap();
        let cfg = config(1, 1, 4);
        let ng = node_graph(&graph, &cfg).unwrap();
        assert_eq!(ng.n_nodes(), 1);
        assert_eq!(ng.edge_count(0), 0);
        assert_eq!(ng.edge_count(cfg.intra_relation()), 0);
    }

    #[test]
    fn self_loop_single_token() {
        let entities = vec![entity(0, "a", vec![7])];
        let triples = vec![Triple { head: 0, relation: 0, tail: 0 }];
        let (graph, _) = KnowledgeGraph::new(entities, triples).unwrap();
        let ng = node_graph(&graph, &config(1, 1, 4)).unwrap();
        assert_eq!(ng.adjacency[0][(0, 0)], 1.0);
        assert_eq!(ng.edge_count(0), 1);
    }

    #[test]
    fn untokenized_entity_errors() {
        let entities = vec![entity(0, "a", vec![])];
        let (graph, _) = KnowledgeGraph::new(entities, vec![]).unwrap();
        assert!(node_graph(&graph, &config(1, 1, 4)).is_err());
    }

    /// Independent nested-loop evaluation of the layer update.
    fn brute_force_layer(
        h: &Array2<f64>,
        ng: &NodeGraph,
        params: &Params,
        layer: &RgcnLayerParams,
        relu: bool,
    ) -> Array2<f64> {
        let (n, d) = h.dim();
        let mut out = Array2::<f64>::zeros((n, d));
        for i in 0..n {
            let mut acc = vec![0.0; d];
            for (r, adj) in ng.adjacency.iter().enumerate() {
                let w = params.get(layer.rel_w[r]);
                for j in 0..n {
                    if adj[(i, j)] != 0.0 {
                        let scale = adj[(i, j)];
                        for c in 0..d {
                            for k in 0..d {
                                acc[c] += scale * h[(j, k)] * w[(k, c)];
                            }
                        }
                    }
                }
            }
            let w0 = params.get(layer.self_w);
            for c in 0..d {
                for k in 0..d {
                    acc[c] += h[(i, k)] * w0[(k, c)];
                }
            }
            for c in 0..d {
                out[(i, c)] = if relu { acc[c].max(0.0) } else { acc[c] };
            }
        }
        out
    }

    fn path_fixture(d_e: usize, layers: usize, seed: u64) -> (KnowledgeGraph, RgcnConfig, Params, GraphEncoderParams) {
        // a - r0 - b - r1 - c, with b two tokens wide
        let entities = vec![
            entity(0, "a", vec![0]),
            entity(1, "b b2", vec![1, 2]),
            entity(2, "c", vec![3]),
        ];
        let triples = vec![
            Triple { head: 0, relation: 0, tail: 1 },
            Triple { head: 1, relation: 1, tail: 2 },
        ];
        let (graph, _) = KnowledgeGraph::new(entities, triples).unwrap();
        let cfg = config(2, layers, d_e);
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = init_graph_encoder(&mut params, 4, &cfg, 0.4, &mut rng);
        (graph, cfg, params, enc)
    }

    #[test]
    fn layer_matches_brute_force() {
        let (graph, cfg, params, enc) = path_fixture(5, 1, 42);
        let ng = node_graph(&graph, &cfg).unwrap();

        let mut tape = Tape::new();
        let table = tape.param(&params, enc.node_table);
        let ids: Vec<usize> = ng.node_tokens.iter().map(|&t| t as usize).collect();
        let h0 = tape.gather_rows(table, ids);
        let adj: Vec<NodeId> = ng.adjacency.iter().map(|a| tape.constant(a.clone())).collect();
        let out = rgcn_layer(&mut tape, h0, &adj, &params, &enc.layers[0], Nonlinearity::Relu).unwrap();

        let h0_vals = tape.value(h0).clone();
        let expected = brute_force_layer(&h0_vals, &ng, &params, &enc.layers[0], true);
        assert_abs_diff_eq!(tape.value(out), &expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_weights_give_sigma_zero() {
        let (graph, cfg, mut params, enc) = path_fixture(4, 1, 1);
        for pid in [enc.layers[0].self_w].iter().chain(enc.layers[0].rel_w.iter()) {
            params.get_mut(*pid).fill(0.0);
        }
        let ng = node_graph(&graph, &cfg).unwrap();
        let (nodes, _) = encode_graph_values(&params, &enc, &ng).unwrap();
        assert!(nodes.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_self_zero_relations_is_identity() {
        // isolated single-token entity, identity W_0, zero W_r, identity σ
        let entities = vec![entity(0, "x", vec![0])];
        let (graph, _) = KnowledgeGraph::new(entities, vec![]).unwrap();
        let mut cfg = config(1, 1, 3);
        cfg.nonlinearity = Nonlinearity::Identity;
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = init_graph_encoder(&mut params, 1, &cfg, 0.3, &mut rng);
        params.get_mut(enc.layers[0].self_w).assign(&Array2::eye(3));
        for r in &enc.layers[0].rel_w {
            params.get_mut(*r).fill(0.0);
        }
        let ng = node_graph(&graph, &cfg).unwrap();
        let (nodes, entities_out) = encode_graph_values(&params, &enc, &ng).unwrap();
        let expected = params.get(enc.node_table).row(0).to_owned();
        assert_abs_diff_eq!(nodes.row(0).to_owned(), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(entities_out.row(0).to_owned(), expected, epsilon = 1e-14);
    }

    #[test]
    fn two_layers_compose_the_oracle() {
        let (graph, cfg, params, enc) = path_fixture(4, 2, 77);
        let ng = node_graph(&graph, &cfg).unwrap();

        let mut expected = {
            let mut tape = Tape::new();
            let table = tape.param(&params, enc.node_table);
            let ids: Vec<usize> = ng.node_tokens.iter().map(|&t| t as usize).collect();
            let h0 = tape.gather_rows(table, ids);
            tape.value(h0).clone()
        };
        expected = brute_force_layer(&expected, &ng, &params, &enc.layers[0], true);
        expected = brute_force_layer(&expected, &ng, &params, &enc.layers[1], true);

        let (nodes, entities_out) = encode_graph_values(&params, &enc, &ng).unwrap();
        assert_abs_diff_eq!(&nodes, &expected, epsilon = 1e-12);

        // pooled entity embedding is the mean of its node rows
        let b_nodes = &ng.entity_nodes[1];
        for c in 0..4 {
            let mean: f64 =
                b_nodes.iter().map(|&i| expected[(i, c)]).sum::<f64>() / b_nodes.len() as f64;
            assert_abs_diff_eq!(entities_out[(1, c)], mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_layers_pools_raw_embeddings() {
        let (graph, cfg, params, _) = path_fixture(4, 1, 3);
        let cfg0 = RgcnConfig { layers: 0, ..cfg };
        let mut params0 = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc0 = init_graph_encoder(&mut params0, 4, &cfg0, 0.4, &mut rng);
        // reuse the same node table values
        let table = params.get(params.id("graph_encoder.node_table").unwrap()).clone();
        params0.get_mut(enc0.node_table).assign(&table);
        let ng = node_graph(&graph, &cfg0).unwrap();
        let (_, pooled) = encode_graph_values(&params0, &enc0, &ng).unwrap();
        let raw = params0.get(enc0.node_table);
        // entity 1 has tokens 1 and 2
        for c in 0..4 {
            let mean = (raw[(1, c)] + raw[(2, c)]) / 2.0;
            assert_abs_diff_eq!(pooled[(1, c)], mean, epsilon = 1e-14);
        }
    }

    #[test]
    fn isomorphic_graphs_encode_identically() {
        let (graph, cfg, params, enc) = path_fixture(4, 2, 11);
        let ng = node_graph(&graph, &cfg).unwrap();
        let (n1, e1) = encode_graph_values(&params, &enc, &ng).unwrap();
        let (n2, e2) = encode_graph_values(&params, &enc, &ng).unwrap();
        assert_eq!(n1, n2);
        assert_eq!(e1, e2);
    }

    #[test]
    fn locality_far_nodes_do_not_leak() {
        // path of five single-token entities, L=2: entity 0 sees at most 2 hops
        let entities: Vec<Entity> =
            (0..5).map(|i| entity(i, &format!("e{i}"), vec![i as u32])).collect();
        let triples: Vec<Triple> =
            (0..4).map(|i| Triple { head: i, relation: 0, tail: i + 1 }).collect();
        let (graph, _) = KnowledgeGraph::new(entities, triples).unwrap();
        let cfg = config(1, 2, 4);
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = init_graph_encoder(&mut params, 5, &cfg, 0.4, &mut rng);
        let ng = node_graph(&graph, &cfg).unwrap();
        let (_, before) = encode_graph_values(&params, &enc, &ng).unwrap();

        // perturb the token embedding of the far entity 4
        params.get_mut(enc.node_table)[(4, 0)] += 10.0;
        let (_, after) = encode_graph_values(&params, &enc, &ng).unwrap();
        for c in 0..4 {
            assert_eq!(before[(0, c)], after[(0, c)], "entity 0 must not see entity 4");
            assert_eq!(before[(1, c)], after[(1, c)], "entity 1 must not see entity 4");
        }
        assert_ne!(before.row(3), after.row(3), "entity 3 is within 2 hops of entity 4");
    }

    #[test]
    fn permutation_invariance() {
        // same structure with entity ids relabeled: 0<->2 on the path a-b-c
        let forward = {
            let entities = vec![
                entity(0, "a", vec![0]),
                entity(1, "b", vec![1]),
                entity(2, "c", vec![2]),
            ];
            let triples = vec![
                Triple { head: 0, relation: 0, tail: 1 },
                Triple { head: 1, relation: 1, tail: 2 },
            ];
            KnowledgeGraph::new(entities, triples).unwrap().0
        };
        let relabeled = {
            let entities = vec![
                entity(0, "c", vec![2]),
                entity(1, "b", vec![1]),
                entity(2, "a", vec![0]),
            ];
            let triples = vec![
                Triple { head: 2, relation: 0, tail: 1 },
                Triple { head: 1, relation: 1, tail: 0 },
            ];
            KnowledgeGraph::new(entities, triples).unwrap().0
        };
        let cfg = config(2, 2, 4);
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let enc = init_graph_encoder(&mut params, 3, &cfg, 0.4, &mut rng);
        let ng_f = node_graph(&forward, &cfg).unwrap();
        let ng_r = node_graph(&relabeled, &cfg).unwrap();
        let (_, ef) = encode_graph_values(&params, &enc, &ng_f).unwrap();
        let (_, er) = encode_graph_values(&params, &enc, &ng_r).unwrap();
        for c in 0..4 {
            assert_abs_diff_eq!(ef[(0, c)], er[(2, c)], epsilon = 1e-12);
            assert_abs_diff_eq!(ef[(1, c)], er[(1, c)], epsilon = 1e-12);
            assert_abs_diff_eq!(ef[(2, c)], er[(0, c)], epsilon = 1e-12);
        }
    }

    #[test]
    fn normalized_adjacency_rows_are_means() {
        let entities = vec![
            entity(0, "hub", vec![0]),
            entity(1, "s1", vec![1]),
            entity(2, "s2", vec![2]),
        ];
        let triples = vec![
            Triple { head: 0, relation: 0, tail: 1 },
            Triple { head: 0, relation: 0, tail: 2 },
        ];
        let (graph, _) = KnowledgeGraph::new(entities, triples).unwrap();
        let mut cfg = config(1, 1, 4);
        cfg.normalize = true;
        let ng = node_graph(&graph, &cfg).unwrap();
        assert_abs_diff_eq!(ng.adjacency[0][(0, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ng.adjacency[0][(0, 2)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ng.adjacency[0][(1, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn pretrained_loader_replaces_rows() {
        let cfg = config(1, 1, 3);
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = init_graph_encoder(&mut params, 4, &cfg, 0.4, &mut rng);
        let json = r#"{"dim": 3, "vectors": {"2": [1.0, 2.0, 3.0]}}"#;
        let loaded = load_node_embeddings(&mut params, &enc, json).unwrap();
        assert_eq!(loaded, 1);
        assert_eq!(params.get(enc.node_table).row(2).to_vec(), vec![1.0, 2.0, 3.0]);

        let bad = r#"{"dim": 2, "vectors": {}}"#;
        assert!(load_node_embeddings(&mut params, &enc, bad).is_err());
    }
}
