//! Reverse-mode gradient tape.
//!
//! Operations execute eagerly and append a record to the tape; records hold
//! their input node ids and whatever forward values the backward rule needs.
//! `backward` walks the records once, in reverse, accumulating gradients.

use std::rc::Rc;

use super::{AutodiffError, Tensor};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Broadcast a rank-1 bias over every row of a matrix.
    AddRows(NodeId, NodeId),
    /// Scale a whole tensor by a 1-element tensor node.
    MulScalarNode(NodeId, NodeId),
    /// Scale row r of a matrix by entry r of a rank-1 node.
    MulColVec(NodeId, NodeId),
    /// Scale row r by a fixed (non-differentiable) coefficient.
    RowScale(NodeId, Rc<Vec<f64>>),
    ScalarMul(NodeId, f64),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Abs(NodeId),
    Softplus(NodeId),
    Huber(NodeId, f64),
    SumAll(NodeId),
    SumAxis0(NodeId),
    MeanAxis0(NodeId),
    GatherRows(NodeId, Rc<Vec<usize>>),
    SegmentSum(NodeId, Rc<Vec<usize>>),
    SegmentMean(NodeId, Rc<Vec<usize>>, usize),
    SegmentMax(NodeId, usize),
    SegmentSoftmax(NodeId, Rc<Vec<usize>>),
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    CrossEntropyRows(NodeId, Rc<Vec<usize>>),
}

/// Forward values a backward rule needs beyond inputs and the node output.
#[derive(Clone, Debug)]
enum Saved {
    None,
    /// Per (segment, column) winning row index; usize::MAX for empty segments.
    MaxIdx(Vec<usize>),
    /// Normalized activations and per-column inverse std.
    Norm { xhat: Tensor, istd: Vec<f64> },
    /// Row-wise softmax of the logits.
    Softmax(Tensor),
}

struct Record {
    op: Op,
    value: Tensor,
    saved: Saved,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    records: Vec<Record>,
}

/// Gradients indexed by tape node id, produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, or zeros shaped like `like` when it never received one.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.records[id.0].value
    }

    fn inputs_require_grad(&self, op: &Op) -> bool {
        let ids: Vec<NodeId> = match op {
            Op::Input => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRows(a, b)
            | Op::MulScalarNode(a, b)
            | Op::MulColVec(a, b) => vec![*a, *b],
            Op::BatchNorm { x, gamma, beta } => vec![*x, *gamma, *beta],
            Op::Concat(v) => v.clone(),
            Op::RowScale(a, _)
            | Op::ScalarMul(a, _)
            | Op::SliceCols(a, _, _)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Abs(a)
            | Op::Softplus(a)
            | Op::Huber(a, _)
            | Op::SumAll(a)
            | Op::SumAxis0(a)
            | Op::MeanAxis0(a)
            | Op::GatherRows(a, _)
            | Op::SegmentSum(a, _)
            | Op::SegmentMean(a, _, _)
            | Op::SegmentMax(a, _)
            | Op::SegmentSoftmax(a, _)
            | Op::CrossEntropyRows(a, _) => vec![*a],
        };
        ids.iter().any(|id| self.records[id.0].requires_grad)
    }

    fn push(&mut self, op: Op, value: Tensor, saved: Saved) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite value produced by {:?}", op);
        let requires_grad = match op {
            Op::Input => false, // set explicitly by input()
            ref op => self.inputs_require_grad(op),
        };
        self.records.push(Record { op, value, saved, requires_grad });
        NodeId(self.records.len() - 1)
    }

    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite input tensor");
        self.records.push(Record {
            op: Op::Input,
            value,
            saved: Saved::None,
            requires_grad,
        });
        NodeId(self.records.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.input(value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v, Saved::None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).add(self.value(b));
        self.push(Op::Add(a, b), v, Saved::None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let bv = self.value(b).scale(-1.0);
        let v = self.value(a).add(&bv);
        self.push(Op::Sub(a, b), v, Saved::None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let v = Tensor::new(av.shape().to_vec(), data).unwrap();
        self.push(Op::Mul(a, b), v, Saved::None)
    }

    /// `a` is (n, d); `bias` is rank-1 of length d, added to every row.
    pub fn add_rows(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.shape().len(), 1, "bias must be rank-1");
        let d = av.shape()[1];
        assert_eq!(bv.numel(), d, "bias width mismatch");
        let mut out = av.clone();
        let bd = bv.data().to_vec();
        for r in 0..out.rows() {
            let row = &mut out.data_mut()[r * d..(r + 1) * d];
            for (o, b) in row.iter_mut().zip(&bd) {
                *o += b;
            }
        }
        self.push(Op::AddRows(a, bias), out, Saved::None)
    }

    /// Scale all of `a` by the single element of `s`.
    pub fn mul_scalar_node(&mut self, a: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.value(s).numel(), 1, "scale must be scalar");
        let sv = self.value(s).item();
        let v = self.value(a).scale(sv);
        self.push(Op::MulScalarNode(a, s), v, Saved::None)
    }

    /// Scale row r of matrix `a` by entry r of `col` (rank-1 or a single
    /// column matrix).
    pub fn mul_col_vec(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (av, cv) = (self.value(a), self.value(col));
        assert_eq!(cv.numel(), av.rows(), "column scale length mismatch");
        let d = av.shape()[1];
        let mut out = av.clone();
        let cd = cv.data().to_vec();
        for r in 0..out.rows() {
            for x in &mut out.data_mut()[r * d..(r + 1) * d] {
                *x *= cd[r];
            }
        }
        self.push(Op::MulColVec(a, col), out, Saved::None)
    }

    /// Scale row r by fixed coefficient w[r] (not differentiated through).
    pub fn row_scale(&mut self, a: NodeId, weights: Rc<Vec<f64>>) -> NodeId {
        let av = self.value(a);
        assert_eq!(weights.len(), av.rows(), "row weight length mismatch");
        let d = av.shape()[1];
        let mut out = av.clone();
        for r in 0..out.rows() {
            for x in &mut out.data_mut()[r * d..(r + 1) * d] {
                *x *= weights[r];
            }
        }
        self.push(Op::RowScale(a, weights), out, Saved::None)
    }

    pub fn scalar_mul(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(Op::ScalarMul(a, s), v, Saved::None)
    }

    /// Concatenate matrices along the last axis; row counts must match.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).shape()[1]).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat row mismatch");
                data.extend_from_slice(t.row(r));
            }
        }
        let v = Tensor::new(vec![rows, total], data).unwrap();
        self.push(Op::Concat(parts.to_vec()), v, Saved::None)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.shape()[1]);
        assert!(start + len <= cols, "slice out of range");
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let v = Tensor::new(vec![rows, len], data).unwrap();
        self.push(Op::SliceCols(a, start, len), v, Saved::None)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v, Saved::None)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v, Saved::None)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v, Saved::None)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v, Saved::None)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v, Saved::None)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v, Saved::None)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), v, Saved::None)
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v, Saved::None)
    }

    /// Elementwise Huber penalty of a residual: 0.5 r^2 inside delta, linear outside.
    pub fn huber(&mut self, a: NodeId, delta: f64) -> NodeId {
        let v = self.value(a).map(|r| {
            if r.abs() <= delta {
                0.5 * r * r
            } else {
                delta * (r.abs() - 0.5 * delta)
            }
        });
        self.push(Op::Huber(a, delta), v, Saved::None)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s), Saved::None)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel().max(1);
        let s = self.sum_all(a);
        self.scalar_mul(s, 1.0 / n as f64)
    }

    /// Column sums of a matrix -> rank-1 of length d.
    pub fn sum_axis0(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let d = av.shape()[1];
        let mut out = vec![0.0; d];
        for r in 0..av.rows() {
            for (o, x) in out.iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        self.push(Op::SumAxis0(a), Tensor::vector(out), Saved::None)
    }

    /// Column means of a matrix -> rank-1 of length d (zero for 0 rows).
    pub fn mean_axis0(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (n, d) = (av.rows(), av.shape()[1]);
        let mut out = vec![0.0; d];
        if n > 0 {
            for r in 0..n {
                for (o, x) in out.iter_mut().zip(av.row(r)) {
                    *o += x;
                }
            }
            for o in &mut out {
                *o /= n as f64;
            }
        }
        self.push(Op::MeanAxis0(a), Tensor::vector(out), Saved::None)
    }

    /// out[r] = a[indices[r]]; rows may repeat.
    pub fn gather_rows(&mut self, a: NodeId, indices: Rc<Vec<usize>>) -> NodeId {
        let av = self.value(a);
        let d = av.shape()[1];
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices.iter() {
            data.extend_from_slice(av.row(i));
        }
        let v = Tensor::new(vec![indices.len(), d], data).unwrap();
        self.push(Op::GatherRows(a, indices), v, Saved::None)
    }

    /// Sum rows of `a` into `num_segments` buckets given by sorted `segment_ids`.
    pub fn segment_sum(
        &mut self,
        a: NodeId,
        segment_ids: Rc<Vec<usize>>,
        num_segments: usize,
    ) -> NodeId {
        let v = segment_reduce_sum(self.value(a), &segment_ids, num_segments);
        self.push(Op::SegmentSum(a, segment_ids), v, Saved::None)
    }

    /// Per-segment mean; empty segments yield zero rows.
    pub fn segment_mean(
        &mut self,
        a: NodeId,
        segment_ids: Rc<Vec<usize>>,
        num_segments: usize,
    ) -> NodeId {
        let mut v = segment_reduce_sum(self.value(a), &segment_ids, num_segments);
        let counts = segment_counts(&segment_ids, num_segments);
        let d = v.shape()[1];
        for (s, &c) in counts.iter().enumerate() {
            if c > 0 {
                for x in &mut v.data_mut()[s * d..(s + 1) * d] {
                    *x /= c as f64;
                }
            }
        }
        self.push(Op::SegmentMean(a, segment_ids, num_segments), v, Saved::None)
    }

    /// Per-segment max; empty segments yield zero rows.
    pub fn segment_max(
        &mut self,
        a: NodeId,
        segment_ids: Rc<Vec<usize>>,
        num_segments: usize,
    ) -> NodeId {
        let av = self.value(a);
        let d = av.shape()[1];
        let mut out = vec![0.0; num_segments * d];
        let mut arg = vec![usize::MAX; num_segments * d];
        for (r, &s) in segment_ids.iter().enumerate() {
            for c in 0..d {
                let x = av.at(r, c);
                let slot = s * d + c;
                if arg[slot] == usize::MAX || x > out[slot] {
                    out[slot] = x;
                    arg[slot] = r;
                }
            }
        }
        let v = Tensor::new(vec![num_segments, d], out).unwrap();
        self.push(Op::SegmentMax(a, num_segments), v, Saved::MaxIdx(arg))
    }

    /// Softmax within each segment, independently per column.
    pub fn segment_softmax(&mut self, logits: NodeId, segment_ids: Rc<Vec<usize>>) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), segment_ids.len(), "segment id length mismatch");
        let d = lv.shape()[1];
        let mut out = lv.clone();
        for (start, end) in segment_ranges(&segment_ids) {
            for c in 0..d {
                let mut mx = f64::NEG_INFINITY;
                for r in start..end {
                    mx = mx.max(lv.at(r, c));
                }
                let mut z = 0.0;
                for r in start..end {
                    let e = (lv.at(r, c) - mx).exp();
                    out.set(r, c, e);
                    z += e;
                }
                for r in start..end {
                    let y = out.at(r, c) / z;
                    out.set(r, c, y);
                }
            }
        }
        self.push(Op::SegmentSoftmax(logits, segment_ids), out, Saved::None)
    }

    /// Batch normalization over axis 0 using the batch's own statistics.
    /// `gamma`/`beta` are rank-1 of width d. Returns the normalized output.
    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.shape()[1]);
        assert!(n > 0, "batch norm on empty batch");
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        for r in 0..n {
            for c in 0..d {
                let dv = xv.at(r, c) - mean[c];
                var[c] += dv * dv;
            }
        }
        let istd: Vec<f64> = var.iter().map(|v| 1.0 / (v / n as f64 + eps).sqrt()).collect();
        let mut xhat = xv.clone();
        for r in 0..n {
            for c in 0..d {
                let v = (xv.at(r, c) - mean[c]) * istd[c];
                xhat.set(r, c, v);
            }
        }
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut out = xhat.clone();
        for r in 0..n {
            for c in 0..d {
                out.set(r, c, xhat.at(r, c) * g[c] + b[c]);
            }
        }
        self.push(
            Op::BatchNorm { x, gamma, beta },
            out,
            Saved::Norm { xhat, istd },
        )
    }

    /// Mean cross-entropy of row-wise softmax against integer class targets.
    pub fn cross_entropy_rows(&mut self, logits: NodeId, targets: Rc<Vec<usize>>) -> NodeId {
        let lv = self.value(logits);
        let (n, c) = (lv.rows(), lv.shape()[1]);
        assert_eq!(targets.len(), n, "target length mismatch");
        let mut probs = lv.clone();
        let mut total = 0.0;
        for r in 0..n {
            let row = lv.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            let logz = mx + z.ln();
            total += logz - row[targets[r]];
            for j in 0..c {
                probs.set(r, j, (row[j] - logz).exp());
            }
        }
        let v = Tensor::scalar(if n > 0 { total / n as f64 } else { 0.0 });
        self.push(Op::CrossEntropyRows(logits, targets), v, Saved::Softmax(probs))
    }

    /// Reverse pass from a 1-element output node.
    pub fn backward(&self, output: NodeId) -> Result<Gradients, AutodiffError> {
        if output.0 >= self.records.len() {
            return Err(AutodiffError::DisconnectedOutput);
        }
        if self.records[output.0].value.numel() != 1 {
            return Err(AutodiffError::ShapeMismatch(
                "backward requires a scalar output".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.records.len()];
        // Seed with the output's own shape so rank-sensitive backward rules
        // see a consistent cotangent even for (1, 1) outputs.
        grads[output.0] = Some(self.records[output.0].value.map(|_| 1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let rec = &self.records[idx];
        let mut acc = |id: NodeId, contrib: Tensor| {
            match &mut grads[id.0] {
                Some(t) => t.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &rec.op {
            Op::Input => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.matmul(&bv.transpose()));
                acc(*b, av.transpose().matmul(g));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, elem_mul(g, bv));
                acc(*b, elem_mul(g, av));
            }
            Op::AddRows(a, bias) => {
                acc(*a, g.clone());
                let d = g.shape()[1];
                let mut bg = vec![0.0; d];
                for r in 0..g.rows() {
                    for (o, x) in bg.iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(*bias, Tensor::vector(bg));
            }
            Op::MulScalarNode(a, s) => {
                let sv = self.value(*s).item();
                acc(*a, g.scale(sv));
                let dot: f64 = g
                    .data()
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(x, y)| x * y)
                    .sum();
                acc(*s, Tensor::scalar(dot));
            }
            Op::MulColVec(a, col) => {
                let (av, cv) = (self.value(*a), self.value(*col));
                let d = av.shape()[1];
                let mut ag = g.clone();
                let mut cg = vec![0.0; cv.numel()];
                for r in 0..av.rows() {
                    let w = cv.data()[r];
                    let mut dot = 0.0;
                    for c in 0..d {
                        dot += g.at(r, c) * av.at(r, c);
                        let v = g.at(r, c) * w;
                        ag.set(r, c, v);
                    }
                    cg[r] = dot;
                }
                acc(*a, ag);
                acc(*col, Tensor::new(cv.shape().to_vec(), cg).unwrap());
            }
            Op::RowScale(a, w) => {
                let d = g.shape()[1];
                let mut ag = g.clone();
                for r in 0..ag.rows() {
                    for x in &mut ag.data_mut()[r * d..(r + 1) * d] {
                        *x *= w[r];
                    }
                }
                acc(*a, ag);
            }
            Op::ScalarMul(a, s) => acc(*a, g.scale(*s)),
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    let rows = g.rows();
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row(r)[start..start + w]);
                    }
                    acc(p, Tensor::new(vec![rows, w], data).unwrap());
                    start += w;
                }
            }
            Op::SliceCols(a, start, len) => {
                let av = self.value(*a);
                let mut ag = Tensor::zeros(av.shape().to_vec());
                for r in 0..av.rows() {
                    for c in 0..*len {
                        ag.set(r, start + c, g.at(r, c));
                    }
                }
                acc(*a, ag);
            }
            Op::Relu(a) => {
                acc(*a, chain(g, self.value(*a), |x| if x > 0.0 { 1.0 } else { 0.0 }));
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                acc(*a, chain(g, self.value(*a), move |x| if x >= 0.0 { 1.0 } else { s }));
            }
            Op::Sigmoid(a) => {
                acc(*a, chain(g, &rec.value, |y| y * (1.0 - y)));
            }
            Op::Tanh(a) => {
                acc(*a, chain(g, &rec.value, |y| 1.0 - y * y));
            }
            Op::Exp(a) => acc(*a, chain(g, &rec.value, |y| y)),
            Op::Log(a) => acc(*a, chain(g, self.value(*a), |x| 1.0 / x)),
            Op::Abs(a) => {
                acc(*a, chain(g, self.value(*a), |x| if x >= 0.0 { 1.0 } else { -1.0 }));
            }
            Op::Softplus(a) => acc(*a, chain(g, self.value(*a), sigmoid)),
            Op::Huber(a, delta) => {
                let d = *delta;
                acc(*a, chain(g, self.value(*a), move |r| r.clamp(-d, d)));
            }
            Op::SumAll(a) => {
                let gv = g.item();
                acc(*a, self.value(*a).map(|_| gv));
            }
            Op::SumAxis0(a) => {
                let av = self.value(*a);
                let d = av.shape()[1];
                let mut ag = Tensor::zeros(av.shape().to_vec());
                for r in 0..av.rows() {
                    for c in 0..d {
                        ag.set(r, c, g.data()[c]);
                    }
                }
                acc(*a, ag);
            }
            Op::MeanAxis0(a) => {
                let av = self.value(*a);
                let (n, d) = (av.rows(), av.shape()[1]);
                let mut ag = Tensor::zeros(av.shape().to_vec());
                if n > 0 {
                    for r in 0..n {
                        for c in 0..d {
                            ag.set(r, c, g.data()[c] / n as f64);
                        }
                    }
                }
                acc(*a, ag);
            }
            Op::GatherRows(a, indices) => {
                let av = self.value(*a);
                let d = av.shape()[1];
                let mut ag = Tensor::zeros(av.shape().to_vec());
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..d {
                        let v = ag.at(i, c) + g.at(r, c);
                        ag.set(i, c, v);
                    }
                }
                acc(*a, ag);
            }
            Op::SegmentSum(a, ids) => {
                let av = self.value(*a);
                let d = av.shape()[1];
                let mut ag = Tensor::zeros(av.shape().to_vec());
                for (r, &s) in ids.iter().enumerate() {
                    for c in 0..d {
                        ag.set(r, c, g.at(s, c));
                    }
                }
                acc(*a, ag);
            }
            Op::SegmentMean(a, ids, num) => {
                let av = self.value(*a);
                let d = av.shape()[1];
                let counts = segment_counts(ids, *num);
                let mut ag = Tensor::zeros(av.shape().to_vec());
                for (r, &s) in ids.iter().enumerate() {
                    for c in 0..d {
                        ag.set(r, c, g.at(s, c) / counts[s] as f64);
                    }
                }
                acc(*a, ag);
            }
            Op::SegmentMax(a, num) => {
                let Saved::MaxIdx(arg) = &rec.saved else { unreachable!() };
                let av = self.value(*a);
                let d = av.shape()[1];
                let mut ag = Tensor::zeros(av.shape().to_vec());
                for s in 0..*num {
                    for c in 0..d {
                        let r = arg[s * d + c];
                        if r != usize::MAX {
                            let v = ag.at(r, c) + g.at(s, c);
                            ag.set(r, c, v);
                        }
                    }
                }
                acc(*a, ag);
            }
            Op::SegmentSoftmax(a, ids) => {
                let y = &rec.value;
                let d = y.shape()[1];
                let mut ag = Tensor::zeros(y.shape().to_vec());
                for (start, end) in segment_ranges(ids) {
                    for c in 0..d {
                        let mut dot = 0.0;
                        for r in start..end {
                            dot += g.at(r, c) * y.at(r, c);
                        }
                        for r in start..end {
                            ag.set(r, c, y.at(r, c) * (g.at(r, c) - dot));
                        }
                    }
                }
                acc(*a, ag);
            }
            Op::BatchNorm { x, gamma, beta } => {
                let Saved::Norm { xhat, istd } = &rec.saved else { unreachable!() };
                let (n, d) = (xhat.rows(), xhat.shape()[1]);
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut sum_dxhat = vec![0.0; d];
                let mut sum_dxhat_xhat = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        let gv = g.at(r, c);
                        dgamma[c] += gv * xhat.at(r, c);
                        dbeta[c] += gv;
                        let dxh = gv * gam[c];
                        sum_dxhat[c] += dxh;
                        sum_dxhat_xhat[c] += dxh * xhat.at(r, c);
                    }
                }
                let mut dx = Tensor::zeros(xhat.shape().to_vec());
                for r in 0..n {
                    for c in 0..d {
                        let dxh = g.at(r, c) * gam[c];
                        let v = istd[c] / n as f64
                            * (n as f64 * dxh - sum_dxhat[c] - xhat.at(r, c) * sum_dxhat_xhat[c]);
                        dx.set(r, c, v);
                    }
                }
                acc(*x, dx);
                acc(*gamma, Tensor::vector(dgamma));
                acc(*beta, Tensor::vector(dbeta));
            }
            Op::CrossEntropyRows(a, targets) => {
                let Saved::Softmax(probs) = &rec.saved else { unreachable!() };
                let (n, c) = (probs.rows(), probs.shape()[1]);
                let gv = g.item();
                let mut ag = probs.clone();
                for r in 0..n {
                    let t = targets[r];
                    let v = ag.at(r, t) - 1.0;
                    ag.set(r, t, v);
                    for j in 0..c {
                        let v = ag.at(r, j) * gv / n as f64;
                        ag.set(r, j, v);
                    }
                }
                acc(*a, ag);
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-(x.abs())).exp().ln_1p()
}

fn elem_mul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
    )
    .unwrap()
}

fn chain(g: &Tensor, base: &Tensor, df: impl Fn(f64) -> f64) -> Tensor {
    assert_eq!(g.shape(), base.shape());
    Tensor::new(
        g.shape().to_vec(),
        g.data()
            .iter()
            .zip(base.data())
            .map(|(gv, bv)| gv * df(*bv))
            .collect(),
    )
    .unwrap()
}

fn segment_counts(ids: &[usize], num_segments: usize) -> Vec<usize> {
    let mut counts = vec![0usize; num_segments];
    for &s in ids {
        counts[s] += 1;
    }
    counts
}

/// Contiguous (start, end) row ranges of equal segment ids; ids must be sorted.
fn segment_ranges(ids: &[usize]) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..=ids.len() {
        if i == ids.len() || ids[i] != ids[start] {
            debug_assert!(i == ids.len() || ids[i] > ids[start], "segment ids not sorted");
            ranges.push((start, i));
            start = i;
        }
    }
    ranges
}

fn segment_reduce_sum(a: &Tensor, ids: &[usize], num_segments: usize) -> Tensor {
    assert_eq!(a.rows(), ids.len(), "segment id length mismatch");
    let d = a.shape()[1];
    let mut out = Tensor::zeros(vec![num_segments, d]);
    for (r, &s) in ids.iter().enumerate() {
        assert!(s < num_segments, "segment id out of range");
        for c in 0..d {
            let v = out.at(s, c) + a.at(r, c);
            out.set(s, c, v);
        }
    }
    out
}
