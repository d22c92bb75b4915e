//! Reverse-mode automatic differentiation over 64-bit matrices.
//!
//! A `Tape` records the forward computation as an arena of nodes; `backward`
//! walks it in reverse and accumulates gradients. Model parameters live in a
//! [`Params`] registry outside the tape and are inserted as leaves once per
//! tape, so a fresh tape is built for every forward pass while the optimizer
//! keeps stable parameter storage.

use std::collections::HashMap;

use ndarray::{Array2, Axis};

pub type NodeId = usize;

/// Index of a named parameter in a [`Params`] registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter storage. Ordering is insertion order and is stable, which
/// checkpointing and the optimizer rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    entries: Vec<(String, Array2<f64>)>,
    by_name: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Self { entries: Vec::new(), by_name: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        let id = self.entries.len();
        self.entries.push((name.to_string(), value));
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.entries[id.0].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array2<f64>)> {
        self.entries.iter().enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// a · bᵀ
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// broadcast a 1×m row over all rows of a
    AddRow(NodeId, NodeId),
    /// broadcast an n×1 column over all columns of a
    MulCol(NodeId, NodeId),
    /// k·x elementwise (plus a constant offset, which has no gradient)
    Affine(NodeId, f64),
    /// x + constant array (the constant is not differentiated)
    AddConst(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    Ln(NodeId),
    Recip(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumCols(NodeId),
    GatherRows(NodeId, Vec<usize>),
    GatherCols(NodeId, Vec<usize>),
    /// out[i, 0] = a[i, cols[i]]
    SelectColsPerRow(NodeId, Vec<usize>),
    SliceCols(NodeId, usize, usize),
    /// out[g] = mean of rows in group g
    MeanPoolRows(NodeId, Vec<Vec<usize>>),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SqrtElem(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    grads: Vec<Array2<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), param_nodes: HashMap::new(), grads: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar() on a non-scalar node");
        v[(0, 0)]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id].value.dim()
    }

    /// Gradient of the last `backward` root with respect to node `id`.
    pub fn grad(&self, id: NodeId) -> &Array2<f64> {
        &self.grads[id]
    }

    /// Gradient for a parameter, if it was used on this tape.
    pub fn param_grad(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.param_nodes.get(&id).map(|&n| &self.grads[n])
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// Inserts a parameter as a leaf, reusing the node if already present so
    /// gradients accumulate in one place.
    pub fn param(&mut self, params: &Params, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(params.get(id).clone(), Op::Leaf);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul {ar}x{ac} · {br}x{bc}");
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(v, Op::MatMul(a, b))
    }

    /// a · bᵀ without materializing the transpose.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, bc, "matmul_nt {ar}x{ac} · ({br}x{bc})ᵀ");
        let v = self.nodes[a].value.dot(&self.nodes[b].value.t());
        self.push(v, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = &self.nodes[a].value - &self.nodes[b].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (_, ac) = self.shape(a);
        assert_eq!(self.shape(row), (1, ac), "add_row wants a 1x{ac} row");
        let v = &self.nodes[a].value + &self.nodes[row].value;
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (ar, _) = self.shape(a);
        assert_eq!(self.shape(col), (ar, 1), "mul_col wants a {ar}x1 column");
        let v = &self.nodes[a].value * &self.nodes[col].value;
        self.push(v, Op::MulCol(a, col))
    }

    pub fn affine(&mut self, a: NodeId, k: f64, c: f64) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| k * x + c);
        self.push(v, Op::Affine(a, k))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        self.affine(a, k, 0.0)
    }

    pub fn add_const(&mut self, a: NodeId, c: &Array2<f64>) -> NodeId {
        assert_eq!(self.shape(a), c.dim(), "add_const shape mismatch");
        let v = &self.nodes[a].value + c;
        self.push(v, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(crate::tape::sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = &self.nodes[a].value;
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|e| (e - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|e| e / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| 1.0 / x);
        self.push(v, Op::Recip(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].value.len() as f64;
        let v = Array2::from_elem((1, 1), self.nodes[a].value.sum() / n);
        self.push(v, Op::MeanAll(a))
    }

    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a].value.sum_axis(Axis(1));
        let n = s.len();
        let v = s.into_shape((n, 1)).unwrap();
        self.push(v, Op::SumCols(a))
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<usize>) -> NodeId {
        let src = &self.nodes[a].value;
        let (nr, nc) = src.dim();
        let mut v = Array2::zeros((rows.len(), nc));
        for (i, &r) in rows.iter().enumerate() {
            assert!(r < nr, "gather_rows index {r} out of {nr}");
            v.row_mut(i).assign(&src.row(r));
        }
        self.push(v, Op::GatherRows(a, rows))
    }

    pub fn gather_cols(&mut self, a: NodeId, cols: Vec<usize>) -> NodeId {
        let src = &self.nodes[a].value;
        let (nr, nc) = src.dim();
        let mut v = Array2::zeros((nr, cols.len()));
        for (j, &c) in cols.iter().enumerate() {
            assert!(c < nc, "gather_cols index {c} out of {nc}");
            v.column_mut(j).assign(&src.column(c));
        }
        self.push(v, Op::GatherCols(a, cols))
    }

    pub fn select_cols_per_row(&mut self, a: NodeId, cols: Vec<usize>) -> NodeId {
        let src = &self.nodes[a].value;
        let (nr, nc) = src.dim();
        assert_eq!(cols.len(), nr, "select_cols_per_row wants one column per row");
        let mut v = Array2::zeros((nr, 1));
        for (i, &c) in cols.iter().enumerate() {
            assert!(c < nc, "column {c} out of {nc}");
            v[(i, 0)] = src[(i, c)];
        }
        self.push(v, Op::SelectColsPerRow(a, cols))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let src = &self.nodes[a].value;
        let (_, nc) = src.dim();
        assert!(start + len <= nc, "slice_cols {start}+{len} out of {nc}");
        let v = src.slice(ndarray::s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start, len))
    }

    pub fn mean_pool_rows(&mut self, a: NodeId, groups: Vec<Vec<usize>>) -> NodeId {
        let src = &self.nodes[a].value;
        let (nr, nc) = src.dim();
        let mut v = Array2::zeros((groups.len(), nc));
        for (g, members) in groups.iter().enumerate() {
            assert!(!members.is_empty(), "empty pooling group {g}");
            for &m in members {
                assert!(m < nr, "pool index {m} out of {nr}");
                let row = src.row(m);
                let mut acc = v.row_mut(g);
                acc += &row;
            }
            let k = members.len() as f64;
            v.row_mut(g).mapv_inplace(|x| x / k);
        }
        self.push(v, Op::MeanPoolRows(a, groups))
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty());
        let nc = self.shape(parts[0]).1;
        let nr: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut v = Array2::zeros((nr, nc));
        let mut at = 0;
        for &p in &parts {
            let pv = &self.nodes[p].value;
            assert_eq!(pv.dim().1, nc, "concat_rows column mismatch");
            v.slice_mut(ndarray::s![at..at + pv.dim().0, ..]).assign(pv);
            at += pv.dim().0;
        }
        self.push(v, Op::ConcatRows(parts))
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty());
        let nr = self.shape(parts[0]).0;
        let nc: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Array2::zeros((nr, nc));
        let mut at = 0;
        for &p in &parts {
            let pv = &self.nodes[p].value;
            assert_eq!(pv.dim().0, nr, "concat_cols row mismatch");
            v.slice_mut(ndarray::s![.., at..at + pv.dim().1]).assign(pv);
            at += pv.dim().1;
        }
        self.push(v, Op::ConcatCols(parts))
    }

    /// Per-row layer normalization with learned gain and bias (each 1×d).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let eps = 1e-8;
        let (_, d) = self.shape(x);
        assert_eq!(self.shape(gain), (1, d), "layer_norm gain shape");
        assert_eq!(self.shape(bias), (1, d), "layer_norm bias shape");
        let xv = &self.nodes[x].value;
        let gv = &self.nodes[gain].value;
        let bv = &self.nodes[bias].value;
        let mut v = xv.clone();
        for mut row in v.rows_mut() {
            let mu = row.mean().unwrap();
            let var = row.mapv(|e| (e - mu) * (e - mu)).mean().unwrap();
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|e| (e - mu) * inv);
        }
        for i in 0..v.dim().0 {
            for j in 0..d {
                v[(i, j)] = v[(i, j)] * gv[(0, j)] + bv[(0, j)];
            }
        }
        self.push(v, Op::LayerNorm { x, gain, bias, eps })
    }

    /// Backpropagates from a scalar root, filling gradients for every node.
    pub fn backward(&mut self, root: NodeId) {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        self.grads = self.nodes.iter().map(|n| Array2::zeros(n.value.dim())).collect();
        self.grads[root][(0, 0)] = 1.0;

        for id in (0..self.nodes.len()).rev() {
            let g = self.grads[id].clone();
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            match self.nodes[id].op.clone() {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[b].value.t());
                    let gb = self.nodes[a].value.t().dot(&g);
                    self.grads[a] += &ga;
                    self.grads[b] += &gb;
                }
                Op::MatMulNT(a, b) => {
                    let ga = g.dot(&self.nodes[b].value);
                    let gb = g.t().dot(&self.nodes[a].value);
                    self.grads[a] += &ga;
                    self.grads[b] += &gb;
                }
                Op::Add(a, b) => {
                    self.grads[a] += &g;
                    self.grads[b] += &g;
                }
                Op::Sub(a, b) => {
                    self.grads[a] += &g;
                    self.grads[b] -= &g;
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b].value;
                    let gb = &g * &self.nodes[a].value;
                    self.grads[a] += &ga;
                    self.grads[b] += &gb;
                }
                Op::AddRow(a, row) => {
                    self.grads[a] += &g;
                    let col_sum = g.sum_axis(Axis(0));
                    let m = col_sum.len();
                    self.grads[row] += &col_sum.into_shape((1, m)).unwrap();
                }
                Op::MulCol(a, col) => {
                    let ga = &g * &self.nodes[col].value;
                    self.grads[a] += &ga;
                    let gc = (&g * &self.nodes[a].value).sum_axis(Axis(1));
                    let n = gc.len();
                    self.grads[col] += &gc.into_shape((n, 1)).unwrap();
                }
                Op::Affine(a, k) => {
                    self.grads[a].scaled_add(k, &g);
                }
                Op::AddConst(a) => {
                    self.grads[a] += &g;
                }
                Op::Relu(a) => {
                    let mask = self.nodes[a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    self.grads[a] += &(&g * &mask);
                }
                Op::Sigmoid(a) => {
                    let s = &self.nodes[id].value;
                    let ga = &g * &(s * &s.mapv(|x| 1.0 - x));
                    self.grads[a] += &ga;
                }
                Op::SoftmaxRows(a) => {
                    let s = &self.nodes[id].value;
                    let mut ga = Array2::zeros(s.dim());
                    for i in 0..s.dim().0 {
                        let srow = s.row(i);
                        let grow = g.row(i);
                        let dot: f64 = srow.iter().zip(grow.iter()).map(|(x, y)| x * y).sum();
                        for j in 0..s.dim().1 {
                            ga[(i, j)] = srow[j] * (grow[j] - dot);
                        }
                    }
                    self.grads[a] += &ga;
                }
                Op::Ln(a) => {
                    let ga = &g / &self.nodes[a].value;
                    self.grads[a] += &ga;
                }
                Op::Recip(a) => {
                    let x = &self.nodes[a].value;
                    let ga = -&g / &(x * x);
                    self.grads[a] += &ga;
                }
                Op::SumAll(a) => {
                    let s = g[(0, 0)];
                    self.grads[a] += s;
                }
                Op::MeanAll(a) => {
                    let n = self.nodes[a].value.len() as f64;
                    let s = g[(0, 0)] / n;
                    self.grads[a] += s;
                }
                Op::SumCols(a) => {
                    let mut ga = Array2::zeros(self.nodes[a].value.dim());
                    for i in 0..ga.dim().0 {
                        let gi = g[(i, 0)];
                        ga.row_mut(i).mapv_inplace(|_| gi);
                    }
                    self.grads[a] += &ga;
                }
                Op::GatherRows(a, rows) => {
                    for (i, &r) in rows.iter().enumerate() {
                        let gi = g.row(i).to_owned();
                        let mut target = self.grads[a].row_mut(r);
                        target += &gi;
                    }
                }
                Op::GatherCols(a, cols) => {
                    for (j, &c) in cols.iter().enumerate() {
                        let gj = g.column(j).to_owned();
                        let mut target = self.grads[a].column_mut(c);
                        target += &gj;
                    }
                }
                Op::SelectColsPerRow(a, cols) => {
                    for (i, &c) in cols.iter().enumerate() {
                        self.grads[a][(i, c)] += g[(i, 0)];
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let mut target = self.grads[a].slice_mut(ndarray::s![.., start..start + len]);
                    target += &g;
                }
                Op::MeanPoolRows(a, groups) => {
                    for (gi, members) in groups.iter().enumerate() {
                        let k = members.len() as f64;
                        let grow = g.row(gi).mapv(|x| x / k);
                        for &m in members {
                            let mut target = self.grads[a].row_mut(m);
                            target += &grow;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in &parts {
                        let rows = self.nodes[p].value.dim().0;
                        let gp = g.slice(ndarray::s![at..at + rows, ..]).to_owned();
                        self.grads[p] += &gp;
                        at += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in &parts {
                        let cols = self.nodes[p].value.dim().1;
                        let gp = g.slice(ndarray::s![.., at..at + cols]).to_owned();
                        self.grads[p] += &gp;
                        at += cols;
                    }
                }
                Op::SqrtElem(a) => {
                    // subgradient 0 at exactly zero
                    let s = &self.nodes[id].value;
                    let ga = ndarray::Zip::from(&g)
                        .and(s)
                        .map_collect(|&gi, &si| if si == 0.0 { 0.0 } else { gi / (2.0 * si) });
                    self.grads[a] += &ga;
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let xv = self.nodes[x].value.clone();
                    let gv = self.nodes[gain].value.clone();
                    let (n, d) = xv.dim();
                    let df = d as f64;
                    let mut gx = Array2::zeros((n, d));
                    let mut ggain = Array2::zeros((1, d));
                    let mut gbias = Array2::zeros((1, d));
                    for i in 0..n {
                        let row = xv.row(i);
                        let mu = row.mean().unwrap();
                        let var = row.mapv(|e| (e - mu) * (e - mu)).mean().unwrap();
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|&e| (e - mu) * inv).collect();
                        let dy = g.row(i);
                        let dxhat: Vec<f64> =
                            (0..d).map(|j| dy[j] * gv[(0, j)]).collect();
                        let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / df;
                        let mean_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / df;
                        for j in 0..d {
                            gx[(i, j)] = inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                            ggain[(0, j)] += dy[j] * xhat[j];
                            gbias[(0, j)] += dy[j];
                        }
                    }
                    self.grads[x] += &gx;
                    self.grads[gain] += &ggain;
                    self.grads[bias] += &gbias;
                }
            }
        }
    }

    /// Per-row L2 norms as an n×1 node.
    pub fn norm2_rows(&mut self, a: NodeId) -> NodeId {
        let sq = self.mul(a, a);
        let sums = self.sum_cols(sq);
        self.sqrt_elem(sums)
    }

    pub fn sqrt_elem(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::sqrt);
        self.push(v, Op::SqrtElem(a))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}
