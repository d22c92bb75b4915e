//! The four training objectives and their weighted combination, plus the
//! copy gate and the relation classifier.
//!
//! All losses are mean-normalized by default (per position, entity, or
//! triple) so the combination coefficients stay scale-stable across instance
//! sizes; raw sums are available behind a flag. The copy loss is the literal
//! probability-sum form; a binary-cross-entropy variant sits behind a flag.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::KgInputLayout;
use crate::tape::{NodeId, ParamId, Params, Tape};

/// Combination coefficients of the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 0.7, lambda2: 0.5, lambda3: 0.5 }
    }
}

/// The four scalar losses and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub lm: f64,
    pub pg: f64,
    pub ra: f64,
    pub gr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn new(lm: f64, pg: f64, ra: f64, gr: f64, w: LossWeights) -> Self {
        Self {
            lm,
            pg,
            ra,
            gr,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda3: w.lambda3,
            total: lm + w.lambda1 * pg + w.lambda2 * ra + w.lambda3 * gr,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Negative log-likelihood of the target ids under per-position probability
/// distributions.
pub fn nll_from_probs(
    tape: &mut Tape,
    probs: NodeId,
    targets: &[u32],
    normalize: bool,
) -> Result<NodeId> {
    let (rows, vocab) = tape.shape(probs);
    if rows != targets.len() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} target positions",
            rows,
            targets.len()
        )));
    }
    for &t in targets {
        if t as usize >= vocab {
            return Err(Error::Shape(format!("target id {t} outside vocabulary of {vocab}")));
        }
    }
    let picked = tape.select_cols_per_row(probs, targets.iter().map(|&t| t as usize).collect());
    let ll = tape.ln(picked);
    let agg = if normalize { tape.mean_all(ll) } else { tape.sum_all(ll) };
    Ok(tape.scale(agg, -1.0))
}

/// Language-model loss: NLL of the target under the softmax of the logits,
/// or under the mixed generation/copy distribution when one is supplied.
pub fn lm_loss(
    tape: &mut Tape,
    logits: NodeId,
    targets: &[u32],
    copy_mix: Option<NodeId>,
    normalize: bool,
) -> Result<NodeId> {
    let probs = match copy_mix {
        Some(p) => {
            if tape.shape(p) != tape.shape(logits) {
                return Err(Error::Shape("mixed distribution shape differs from logits".into()));
            }
            p
        }
        None => tape.softmax_rows(logits),
    };
    nll_from_probs(tape, probs, targets, normalize)
}

#[derive(Debug, Clone)]
pub struct CopyGateParams {
    /// d_M × 1
    pub w1: ParamId,
    /// d_M × 1
    pub w2: ParamId,
    /// 1 × 1
    pub bias: ParamId,
}

pub fn init_copy_gate(
    params: &mut Params,
    d_m: usize,
    init_std: f64,
    rng: &mut impl Rng,
) -> CopyGateParams {
    let normal = Normal::new(0.0, init_std).unwrap();
    CopyGateParams {
        w1: params.insert("copy_gate.w1", Array2::from_shape_fn((d_m, 1), |_| normal.sample(rng))),
        w2: params.insert("copy_gate.w2", Array2::from_shape_fn((d_m, 1), |_| normal.sample(rng))),
        bias: params.insert("copy_gate.bias", Array2::zeros((1, 1))),
    }
}

/// Per-position copy probabilities: σ(W₁s_j + W₂v_j + b) where `states` are
/// the top decoder states and `token_embeddings` the embeddings available at
/// each step (rows aligned with states).
pub fn copy_gates(
    tape: &mut Tape,
    params: &Params,
    cg: &CopyGateParams,
    states: NodeId,
    token_embeddings: NodeId,
) -> Result<NodeId> {
    if tape.shape(states) != tape.shape(token_embeddings) {
        return Err(Error::Shape("states and token embeddings differ in shape".into()));
    }
    let w1 = tape.param(params, cg.w1);
    let w2 = tape.param(params, cg.w2);
    let b = tape.param(params, cg.bias);
    let a = tape.matmul(states, w1);
    let c = tape.matmul(token_embeddings, w2);
    let sum = tape.add(a, c);
    let shifted = tape.add_row(sum, b);
    Ok(tape.sigmoid(shifted))
}

/// The switch-teaching loss: gate probability on generated positions plus
/// one minus the gate on copied positions, written exactly as probabilities.
/// `copy_mask[j]` marks positions whose target token is copied from the KG.
pub fn copy_loss(
    tape: &mut Tape,
    gates: NodeId,
    copy_mask: &[bool],
    normalize: bool,
    bce: bool,
) -> Result<NodeId> {
    let (rows, cols) = tape.shape(gates);
    if cols != 1 || rows != copy_mask.len() {
        return Err(Error::Shape(format!(
            "gates are {rows}x{cols}, mask has {} positions",
            copy_mask.len()
        )));
    }
    let loss_col = if bce {
        let ln_g = tape.ln(gates);
        let one_minus = tape.affine(gates, -1.0, 1.0);
        let ln_omg = tape.ln(one_minus);
        let m = Array2::from_shape_fn((rows, 1), |(i, _)| if copy_mask[i] { 1.0 } else { 0.0 });
        let m_inv = m.mapv(|x| 1.0 - x);
        let mc = tape.constant(m);
        let mic = tape.constant(m_inv);
        let a = tape.mul(mc, ln_g);
        let b = tape.mul(mic, ln_omg);
        let s = tape.add(a, b);
        tape.scale(s, -1.0)
    } else {
        // (1-m)·g + m·(1-g)  =  (1-2m)·g + m
        let slope = Array2::from_shape_fn((rows, 1), |(i, _)| if copy_mask[i] { -1.0 } else { 1.0 });
        let offset = Array2::from_shape_fn((rows, 1), |(i, _)| if copy_mask[i] { 1.0 } else { 0.0 });
        let sc = tape.constant(slope);
        let scaled = tape.mul(gates, sc);
        tape.add_const(scaled, &offset)
    };
    Ok(if normalize { tape.mean_all(loss_col) } else { tape.sum_all(loss_col) })
}

/// Representation-alignment loss: the Euclidean distance between paired
/// graph-side and text-side entity embeddings (sum of L2 norms, not squared),
/// averaged over entities. Rows must already be aligned on the same entity
/// order.
pub fn ra_loss(
    tape: &mut Tape,
    gnn_entities: NodeId,
    plm_entities: NodeId,
    normalize: bool,
) -> Result<NodeId> {
    let a = tape.shape(gnn_entities);
    let b = tape.shape(plm_entities);
    if a != b {
        return Err(Error::Shape(format!("entity embedding maps differ: {a:?} vs {b:?}")));
    }
    if a.0 == 0 {
        return Err(Error::Shape("no entities to align".into()));
    }
    let diff = tape.sub(gnn_entities, plm_entities);
    let norms = tape.norm2_rows(diff);
    Ok(if normalize { tape.mean_all(norms) } else { tape.sum_all(norms) })
}

#[derive(Debug, Clone)]
pub struct RelationClassifierParams {
    /// 3·d_M × |R|
    pub w3: ParamId,
    /// 1 × |R|
    pub b2: ParamId,
    pub n_relations: usize,
}

pub fn init_relation_classifier(
    params: &mut Params,
    d_m: usize,
    n_relations: usize,
    init_std: f64,
    rng: &mut impl Rng,
) -> RelationClassifierParams {
    let normal = Normal::new(0.0, init_std).unwrap();
    RelationClassifierParams {
        w3: params.insert(
            "rel_classifier.w3",
            Array2::from_shape_fn((3 * d_m, n_relations), |_| normal.sample(rng)),
        ),
        b2: params.insert("rel_classifier.b2", Array2::zeros((1, n_relations))),
        n_relations,
    }
}

/// Relation probabilities for head/tail entity state pairs:
/// softmax(W₃[h; t; h⊙t] + b₂), one row per pair.
pub fn relation_probs(
    tape: &mut Tape,
    params: &Params,
    rc: &RelationClassifierParams,
    heads: NodeId,
    tails: NodeId,
) -> Result<NodeId> {
    if tape.shape(heads) != tape.shape(tails) {
        return Err(Error::Shape("head and tail state shapes differ".into()));
    }
    let prod = tape.mul(heads, tails);
    let feat = tape.concat_cols(vec![heads, tails, prod]);
    let w3 = tape.param(params, rc.w3);
    let b2 = tape.param(params, rc.b2);
    let logits = tape.matmul(feat, w3);
    let logits = tape.add_row(logits, b2);
    Ok(tape.softmax_rows(logits))
}

/// Graph-reconstruction loss: NLL of the true relation over the scoreable
/// triples. With nothing to score it contributes exactly zero, flagged.
pub fn gr_loss(
    tape: &mut Tape,
    relation_probs: Option<NodeId>,
    true_relations: &[u32],
    normalize: bool,
) -> Result<(NodeId, bool)> {
    match relation_probs {
        None => Ok((tape.scalar_const(0.0), true)),
        Some(probs) => {
            if true_relations.is_empty() {
                return Ok((tape.scalar_const(0.0), true));
            }
            let nll = nll_from_probs(tape, probs, true_relations, normalize)?;
            Ok((nll, false))
        }
    }
}

/// Mixed generation/copy distribution. Cross-attention mass on entity-token
/// positions is renormalized and scattered onto their vocabulary ids:
/// p(w) = p_copy·P_attn(w) + (1 − p_copy)·p_vocab(w).
pub fn copy_mixture(
    tape: &mut Tape,
    cross_attention: NodeId,
    layout: &KgInputLayout,
    gates: NodeId,
    p_vocab: NodeId,
) -> Result<NodeId> {
    let (t_dec, s_kg) = tape.shape(cross_attention);
    if s_kg != layout.len() {
        return Err(Error::Shape(format!(
            "cross-attention has {s_kg} input positions, layout has {}",
            layout.len()
        )));
    }
    let (t2, vocab) = tape.shape(p_vocab);
    if t2 != t_dec || tape.shape(gates) != (t_dec, 1) {
        return Err(Error::Shape("copy mixture inputs are misaligned".into()));
    }
    let copyable = layout.copyable_positions();
    if copyable.is_empty() {
        return Err(Error::Model("no copyable positions in the graph input".into()));
    }
    let mut scatter = Array2::<f64>::zeros((copyable.len(), vocab));
    for (row, &pos) in copyable.iter().enumerate() {
        let tok = layout.token_at[pos].expect("copyable position has a token");
        scatter[(row, tok as usize)] = 1.0;
    }
    let att = tape.gather_cols(cross_attention, copyable);
    let sums = tape.sum_cols(att);
    let inv = tape.recip(sums);
    let normed = tape.mul_col(att, inv);
    let sc = tape.constant(scatter);
    let p_attn = tape.matmul(normed, sc);

    let gated_copy = tape.mul_col(p_attn, gates);
    let anti_gates = tape.affine(gates, -1.0, 1.0);
    let gated_gen = tape.mul_col(p_vocab, anti_gates);
    Ok(tape.add(gated_copy, gated_gen))
}

/// Weighted total on the tape; the scalar values land in a [`LossBundle`].
pub fn total_loss(
    tape: &mut Tape,
    lm: NodeId,
    pg: NodeId,
    ra: NodeId,
    gr: NodeId,
    w: LossWeights,
) -> (NodeId, LossBundle) {
    let pg_w = tape.scale(pg, w.lambda1);
    let ra_w = tape.scale(ra, w.lambda2);
    let gr_w = tape.scale(gr, w.lambda3);
    let a = tape.add(lm, pg_w);
    let b = tape.add(a, ra_w);
    let total = tape.add(b, gr_w);
    let bundle = LossBundle::new(tape.scalar(lm), tape.scalar(pg), tape.scalar(ra), tape.scalar(gr), w);
    (total, bundle)
}
