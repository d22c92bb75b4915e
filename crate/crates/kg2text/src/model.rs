//! Miniature encoder-decoder split into lower layers (the text encoder used
//! only at training time) and higher layers (a graph-sequence encoder plus a
//! causal decoder that generates text).
//!
//! The decoder's input side is the linearized entity sequence: each entity
//! contributes one position per subword token, carried by its graph-encoder
//! node state projected into model space, with an optional separator token
//! between entities. Generation therefore never touches the lower stack.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearize::LinearizedSequence;
use crate::rgcn::NodeGraph;
use crate::tape::{NodeId, ParamId, Params, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqModelConfig {
    /// Model dimension d_M.
    pub d_m: usize,
    pub lower_layers: usize,
    pub higher_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    /// Insert a separator token between entities on the graph side.
    pub separator_tokens: bool,
}

impl Default for SeqModelConfig {
    fn default() -> Self {
        Self {
            d_m: 64,
            lower_layers: 2,
            higher_layers: 2,
            decoder_layers: 2,
            heads: 4,
            d_ff: 256,
            max_seq_len: 160,
            dropout: 0.0,
            separator_tokens: true,
        }
    }
}

impl SeqModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_m == 0 || self.d_m % self.heads != 0 {
            return Err(Error::Config(format!(
                "model dim {} must be a positive multiple of {} heads",
                self.d_m, self.heads
            )));
        }
        if self.higher_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::Config("higher and decoder stacks need at least one layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LnParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct AttnParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Debug, Clone)]
pub struct FfParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct EncBlockParams {
    pub ln1: LnParams,
    pub attn: AttnParams,
    pub ln2: LnParams,
    pub ff: FfParams,
}

#[derive(Debug, Clone)]
pub struct DecBlockParams {
    pub ln1: LnParams,
    pub self_attn: AttnParams,
    pub ln_cross: LnParams,
    pub cross_attn: AttnParams,
    pub ln2: LnParams,
    pub ff: FfParams,
}

/// Parameter handles for the whole sequence model. The token embedding table
/// is shared between the lower stack, the decoder input, and the tied output
/// projection.
#[derive(Debug, Clone)]
pub struct SeqModelParams {
    pub config: SeqModelConfig,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    /// d_E → d_M bridge; absent when the dimensions match (identity).
    pub gnn_proj: Option<ParamId>,
    pub lower: Vec<EncBlockParams>,
    pub lower_final_ln: Option<LnParams>,
    pub higher: Vec<EncBlockParams>,
    pub higher_final_ln: LnParams,
    pub decoder: Vec<DecBlockParams>,
    pub decoder_final_ln: LnParams,
}

struct Init<'a, R: Rng> {
    params: &'a mut Params,
    normal: Normal<f64>,
    rng: &'a mut R,
}

impl<'a, R: Rng> Init<'a, R> {
    fn matrix(&mut self, name: &str, r: usize, c: usize) -> ParamId {
        let normal = self.normal;
        let m = Array2::from_shape_fn((r, c), |_| normal.sample(self.rng));
        self.params.insert(name, m)
    }

    fn ln(&mut self, prefix: &str, d: usize) -> LnParams {
        LnParams {
            gain: self.params.insert(&format!("{prefix}.gain"), Array2::ones((1, d))),
            bias: self.params.insert(&format!("{prefix}.bias"), Array2::zeros((1, d))),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnParams {
        AttnParams {
            wq: self.matrix(&format!("{prefix}.wq"), d, d),
            wk: self.matrix(&format!("{prefix}.wk"), d, d),
            wv: self.matrix(&format!("{prefix}.wv"), d, d),
            wo: self.matrix(&format!("{prefix}.wo"), d, d),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, d_ff: usize) -> FfParams {
        FfParams {
            w1: self.matrix(&format!("{prefix}.w1"), d, d_ff),
            b1: self.params.insert(&format!("{prefix}.b1"), Array2::zeros((1, d_ff))),
            w2: self.matrix(&format!("{prefix}.w2"), d_ff, d),
            b2: self.params.insert(&format!("{prefix}.b2"), Array2::zeros((1, d))),
        }
    }

    fn enc_block(&mut self, prefix: &str, d: usize, d_ff: usize) -> EncBlockParams {
        EncBlockParams {
            ln1: self.ln(&format!("{prefix}.ln1"), d),
            attn: self.attn(&format!("{prefix}.attn"), d),
            ln2: self.ln(&format!("{prefix}.ln2"), d),
            ff: self.ff(&format!("{prefix}.ff"), d, d_ff),
        }
    }

    fn dec_block(&mut self, prefix: &str, d: usize, d_ff: usize) -> DecBlockParams {
        DecBlockParams {
            ln1: self.ln(&format!("{prefix}.ln1"), d),
            self_attn: self.attn(&format!("{prefix}.self_attn"), d),
            ln_cross: self.ln(&format!("{prefix}.ln_cross"), d),
            cross_attn: self.attn(&format!("{prefix}.cross_attn"), d),
            ln2: self.ln(&format!("{prefix}.ln2"), d),
            ff: self.ff(&format!("{prefix}.ff"), d, d_ff),
        }
    }
}

pub fn init_seq_model(
    params: &mut Params,
    vocab_size: usize,
    d_e: usize,
    config: &SeqModelConfig,
    init_std: f64,
    rng: &mut impl Rng,
) -> Result<SeqModelParams> {
    config.validate()?;
    let d = config.d_m;
    let mut init = Init { params, normal: Normal::new(0.0, init_std).unwrap(), rng };
    let tok_emb = init.matrix("seq_model.tok_emb", vocab_size, d);
    let pos_emb = init.matrix("seq_model.pos_emb", config.max_seq_len, d);
    let gnn_proj =
        (d_e != d).then(|| init.matrix("seq_model.gnn_proj", d_e, d));
    let lower: Vec<EncBlockParams> = (0..config.lower_layers)
        .map(|l| init.enc_block(&format!("seq_model.lower.{l}"), d, config.d_ff))
        .collect();
    let lower_final_ln =
        (config.lower_layers > 0).then(|| init.ln("seq_model.lower.final_ln", d));
    let higher = (0..config.higher_layers)
        .map(|l| init.enc_block(&format!("seq_model.higher.{l}"), d, config.d_ff))
        .collect();
    let higher_final_ln = init.ln("seq_model.higher.final_ln", d);
    let decoder = (0..config.decoder_layers)
        .map(|l| init.dec_block(&format!("seq_model.decoder.{l}"), d, config.d_ff))
        .collect();
    let decoder_final_ln = init.ln("seq_model.decoder.final_ln", d);
    Ok(SeqModelParams {
        config: config.clone(),
        tok_emb,
        pos_emb,
        gnn_proj,
        lower,
        lower_final_ln,
        higher,
        higher_final_ln,
        decoder,
        decoder_final_ln,
    })
}

/// Optional training-time dropout source.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

fn apply_dropout(tape: &mut Tape, x: NodeId, dropout: &mut Option<Dropout<'_>>) -> NodeId {
    let Some(d) = dropout else { return x };
    if d.rate == 0.0 {
        return x;
    }
    let keep = 1.0 - d.rate;
    let (r, c) = tape.shape(x);
    let rate = d.rate;
    let mask = Array2::from_shape_fn((r, c), |_| {
        if d.rng.gen::<f64>() < rate {
            0.0
        } else {
            1.0 / keep
        }
    });
    let m = tape.constant(mask);
    tape.mul(x, m)
}

fn multi_head_attention(
    tape: &mut Tape,
    params: &Params,
    attn: &AttnParams,
    query_in: NodeId,
    kv_in: NodeId,
    heads: usize,
    mask: Option<&Array2<f64>>,
) -> (NodeId, Vec<NodeId>) {
    let d = tape.shape(query_in).1;
    let dh = d / heads;
    let wq = tape.param(params, attn.wq);
    let wk = tape.param(params, attn.wk);
    let wv = tape.param(params, attn.wv);
    let wo = tape.param(params, attn.wo);
    let q = tape.matmul(query_in, wq);
    let k = tape.matmul(kv_in, wk);
    let v = tape.matmul(kv_in, wv);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    let mut head_atts = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let scores = tape.matmul_nt(qh, kh);
        let scaled = tape.scale(scores, scale);
        let masked = match mask {
            Some(m) => tape.add_const(scaled, m),
            None => scaled,
        };
        let att = tape.softmax_rows(masked);
        head_atts.push(att);
        head_outs.push(tape.matmul(att, vh));
    }
    let cat = tape.concat_cols(head_outs);
    (tape.matmul(cat, wo), head_atts)
}

fn encoder_block(
    tape: &mut Tape,
    params: &Params,
    block: &EncBlockParams,
    x: NodeId,
    heads: usize,
    dropout: &mut Option<Dropout<'_>>,
) -> NodeId {
    let g1 = tape.param(params, block.ln1.gain);
    let b1 = tape.param(params, block.ln1.bias);
    let normed = tape.layer_norm(x, g1, b1);
    let (att, _) = multi_head_attention(tape, params, &block.attn, normed, normed, heads, None);
    let att = apply_dropout(tape, att, dropout);
    let x = tape.add(x, att);

    let g2 = tape.param(params, block.ln2.gain);
    let b2 = tape.param(params, block.ln2.bias);
    let normed = tape.layer_norm(x, g2, b2);
    let ff = feed_forward(tape, params, &block.ff, normed);
    let ff = apply_dropout(tape, ff, dropout);
    tape.add(x, ff)
}

fn feed_forward(tape: &mut Tape, params: &Params, ff: &FfParams, x: NodeId) -> NodeId {
    let w1 = tape.param(params, ff.w1);
    let b1 = tape.param(params, ff.b1);
    let w2 = tape.param(params, ff.w2);
    let b2 = tape.param(params, ff.b2);
    let h = tape.matmul(x, w1);
    let h = tape.add_row(h, b1);
    let h = tape.relu(h);
    let h = tape.matmul(h, w2);
    tape.add_row(h, b2)
}

fn layer_norm_with(tape: &mut Tape, params: &Params, ln: &LnParams, x: NodeId) -> NodeId {
    let g = tape.param(params, ln.gain);
    let b = tape.param(params, ln.bias);
    tape.layer_norm(x, g, b)
}

/// Token + positional embeddings for a subword id sequence.
pub fn embed_tokens(
    tape: &mut Tape,
    params: &Params,
    sm: &SeqModelParams,
    ids: &[u32],
) -> Result<NodeId> {
    if ids.is_empty() {
        return Err(Error::Model("cannot embed an empty sequence".into()));
    }
    if ids.len() > sm.config.max_seq_len {
        return Err(Error::Model(format!(
            "sequence of {} tokens exceeds the maximum length {}",
            ids.len(),
            sm.config.max_seq_len
        )));
    }
    let tok = tape.param(params, sm.tok_emb);
    let pos = tape.param(params, sm.pos_emb);
    let te = tape.gather_rows(tok, ids.iter().map(|&i| i as usize).collect());
    let pe = tape.gather_rows(pos, (0..ids.len()).collect());
    Ok(tape.add(te, pe))
}

/// The text encoder: embeddings through the lower transformer stack. With
/// zero lower layers the output is exactly token plus positional embeddings.
pub fn text_encode_lower(
    tape: &mut Tape,
    params: &Params,
    sm: &SeqModelParams,
    masked_ids: &[u32],
    dropout: &mut Option<Dropout<'_>>,
) -> Result<NodeId> {
    let mut x = embed_tokens(tape, params, sm, masked_ids)?;
    for block in &sm.lower {
        x = encoder_block(tape, params, block, x, sm.config.heads, dropout);
    }
    if let Some(ln) = &sm.lower_final_ln {
        x = layer_norm_with(tape, params, ln, x);
    }
    Ok(x)
}

/// Mean pooling over a contiguous subword span of encoded vectors.
pub fn pool_span(tape: &mut Tape, vectors: NodeId, positions: &[usize]) -> Result<NodeId> {
    if positions.is_empty() {
        return Err(Error::Model("cannot pool an empty span".into()));
    }
    let n = tape.shape(vectors).0;
    for &p in positions {
        if p >= n {
            return Err(Error::Model(format!("span position {p} outside sequence of {n}")));
        }
    }
    Ok(tape.mean_pool_rows(vectors, vec![positions.to_vec()]))
}

/// Layout of the graph-side input sequence: which vocabulary token each
/// position carries, and which positions are separators.
#[derive(Debug, Clone, PartialEq)]
pub struct KgInputLayout {
    /// Vocab token id per position; `None` marks a separator.
    pub token_at: Vec<Option<u32>>,
}

impl KgInputLayout {
    pub fn len(&self) -> usize {
        self.token_at.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_at.is_empty()
    }

    /// Positions that carry copyable entity tokens.
    pub fn copyable_positions(&self) -> Vec<usize> {
        (0..self.token_at.len()).filter(|&i| self.token_at[i].is_some()).collect()
    }
}

/// Builds the graph-side input from projected node states in linearized
/// order and runs the higher encoder stack over it.
pub fn encode_kg_input(
    tape: &mut Tape,
    params: &Params,
    sm: &SeqModelParams,
    node_states: NodeId,
    ng: &NodeGraph,
    seq: &LinearizedSequence,
    dropout: &mut Option<Dropout<'_>>,
) -> Result<(NodeId, KgInputLayout)> {
    let projected = match sm.gnn_proj {
        Some(p) => {
            let proj = tape.param(params, p);
            tape.matmul(node_states, proj)
        }
        None => {
            if tape.shape(node_states).1 != sm.config.d_m {
                return Err(Error::Shape(format!(
                    "node states have width {}, model dim is {} and no projection exists",
                    tape.shape(node_states).1,
                    sm.config.d_m
                )));
            }
            node_states
        }
    };
    let tok = tape.param(params, sm.tok_emb);
    let sep_id = crate::tokenizer::SEP_TOKEN_ID;
    let sep_row = tape.gather_rows(tok, vec![sep_id as usize]);
    let n_nodes = ng.n_nodes();
    let stacked = tape.concat_rows(vec![projected, sep_row]);

    let mut plan: Vec<usize> = Vec::new();
    let mut token_at: Vec<Option<u32>> = Vec::new();
    for (i, &e) in seq.order.iter().enumerate() {
        if e >= ng.entity_nodes.len() {
            return Err(Error::Model(format!("entity {e} missing from the graph encoding")));
        }
        if i > 0 && sm.config.separator_tokens {
            plan.push(n_nodes);
            token_at.push(None);
        }
        for &node in &ng.entity_nodes[e] {
            plan.push(node);
            token_at.push(Some(ng.node_tokens[node]));
        }
    }
    if plan.len() > sm.config.max_seq_len {
        return Err(Error::Model(format!(
            "graph input of {} positions exceeds the maximum length {}",
            plan.len(),
            sm.config.max_seq_len
        )));
    }

    let gathered = tape.gather_rows(stacked, plan);
    let pos = tape.param(params, sm.pos_emb);
    let pe = tape.gather_rows(pos, (0..token_at.len()).collect());
    let mut x = tape.add(gathered, pe);
    for block in &sm.higher {
        x = encoder_block(tape, params, block, x, sm.config.heads, dropout);
    }
    x = layer_norm_with(tape, params, &sm.higher_final_ln, x);
    Ok((x, KgInputLayout { token_at }))
}

/// Top-layer decoder states and the cross-attention trace.
pub struct DecoderTrace {
    /// s_j per teacher-forced position (row j predicts target token j).
    pub states: NodeId,
    /// Last-layer cross-attention, mean over heads: T_dec × S_kg.
    pub cross_attention: NodeId,
}

fn causal_mask(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| if j <= i { 0.0 } else { -1e30 })
}

/// Causal decoder over the encoded graph memory. `input_ids` are the
/// teacher-forced decoder inputs (BOS followed by the shifted target);
/// returns tied-projection vocabulary logits per position.
pub fn decode_forward(
    tape: &mut Tape,
    params: &Params,
    sm: &SeqModelParams,
    memory: NodeId,
    input_ids: &[u32],
    dropout: &mut Option<Dropout<'_>>,
) -> Result<(NodeId, DecoderTrace)> {
    let mut x = embed_tokens(tape, params, sm, input_ids)?;
    let mask = causal_mask(input_ids.len());
    let mut last_cross: Option<Vec<NodeId>> = None;
    for block in &sm.decoder {
        let normed = layer_norm_with(tape, params, &block.ln1, x);
        let (att, _) = multi_head_attention(
            tape,
            params,
            &block.self_attn,
            normed,
            normed,
            sm.config.heads,
            Some(&mask),
        );
        let att = apply_dropout(tape, att, dropout);
        x = tape.add(x, att);

        let normed = layer_norm_with(tape, params, &block.ln_cross, x);
        let (cross, cross_atts) = multi_head_attention(
            tape,
            params,
            &block.cross_attn,
            normed,
            memory,
            sm.config.heads,
            None,
        );
        let cross = apply_dropout(tape, cross, dropout);
        x = tape.add(x, cross);
        last_cross = Some(cross_atts);

        let normed = layer_norm_with(tape, params, &block.ln2, x);
        let ff = feed_forward(tape, params, &block.ff, normed);
        let ff = apply_dropout(tape, ff, dropout);
        x = tape.add(x, ff);
    }
    let states = layer_norm_with(tape, params, &sm.decoder_final_ln, x);
    let tok = tape.param(params, sm.tok_emb);
    let logits = tape.matmul_nt(states, tok);

    let heads = last_cross.expect("decoder has at least one layer");
    let inv = 1.0 / heads.len() as f64;
    let mut acc = heads[0];
    for &h in &heads[1..] {
        acc = tape.add(acc, h);
    }
    let cross_attention = tape.scale(acc, inv);

    Ok((logits, DecoderTrace { states, cross_attention }))
}
