//! Disjoint-batched graph container.
//!
//! A batch of graphs is stored as one block-diagonal graph: nodes of
//! subgraph k occupy a contiguous index block, and no edge crosses blocks.
//! `merge`/`separate` convert between the batched and per-graph states.

use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("field mismatch: {0}")]
    FieldMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("required field `{0}` cannot be removed")]
    RequiredFieldRemoval(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Sum,
    Mean,
    Max,
}

/// Data accepted by [`GraphTensor::update`].
#[derive(Clone, Debug)]
pub enum FieldData {
    Matrix(Tensor),
    Vector(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphTensor {
    /// Nodes per subgraph; defines the contiguous block layout.
    pub sizes: Vec<usize>,
    /// (total_nodes, D) node features.
    pub node_feature: Tensor,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    pub edge_feature: Option<Tensor>,
    pub edge_weight: Option<Vec<f64>>,
    /// Stored and serialized, never consumed by the implemented layers.
    pub node_position: Option<Tensor>,
}

impl GraphTensor {
    pub fn new(
        sizes: Vec<usize>,
        node_feature: Tensor,
        edge_src: Vec<usize>,
        edge_dst: Vec<usize>,
    ) -> Result<Self, GraphError> {
        let g = Self {
            sizes,
            node_feature,
            edge_src,
            edge_dst,
            edge_feature: None,
            edge_weight: None,
            node_position: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let total: usize = self.sizes.iter().sum();
        if self.node_feature.rows() != total {
            return Err(GraphError::Invalid(format!(
                "sizes sum {} != node_feature rows {}",
                total,
                self.node_feature.rows()
            )));
        }
        if self.edge_src.len() != self.edge_dst.len() {
            return Err(GraphError::Invalid("edge list length mismatch".into()));
        }
        // Every edge stays inside its subgraph block.
        let offsets = self.offsets();
        let block_of = |n: usize| -> Option<usize> {
            if n >= total {
                return None;
            }
            Some(offsets.partition_point(|&o| o <= n) - 1)
        };
        for (&s, &d) in self.edge_src.iter().zip(&self.edge_dst) {
            match (block_of(s), block_of(d)) {
                (Some(a), Some(b)) if a == b => {}
                (Some(_), Some(_)) => {
                    return Err(GraphError::Invalid(format!(
                        "edge ({s},{d}) crosses subgraph blocks"
                    )))
                }
                _ => {
                    return Err(GraphError::Invalid(format!(
                        "edge ({s},{d}) out of node range {total}"
                    )))
                }
            }
        }
        if let Some(ef) = &self.edge_feature {
            if ef.rows() != self.num_edges() {
                return Err(GraphError::Invalid("edge_feature row count mismatch".into()));
            }
        }
        if let Some(ew) = &self.edge_weight {
            if ew.len() != self.num_edges() {
                return Err(GraphError::Invalid("edge_weight length mismatch".into()));
            }
        }
        if let Some(np) = &self.node_position {
            if np.rows() != total {
                return Err(GraphError::Invalid("node_position row count mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    pub fn num_subgraphs(&self) -> usize {
        self.sizes.len()
    }

    /// Starting node index of each subgraph block.
    pub fn offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.sizes.len());
        let mut acc = 0;
        for &s in &self.sizes {
            offs.push(acc);
            acc += s;
        }
        offs
    }

    /// Segment id (subgraph index) of every node, in node order.
    pub fn node_segments(&self) -> Vec<usize> {
        let mut seg = Vec::with_capacity(self.num_nodes());
        for (k, &s) in self.sizes.iter().enumerate() {
            seg.extend(std::iter::repeat(k).take(s));
        }
        seg
    }

    /// Pack subgraphs into one disjoint graph; edge indices are offset by
    /// cumulative node counts.
    pub fn merge(graphs: &[GraphTensor]) -> Result<GraphTensor, GraphError> {
        if graphs.is_empty() {
            return Err(GraphError::FieldMismatch("merge of zero graphs".into()));
        }
        let first = &graphs[0];
        let width = first.node_feature.cols();
        let has_ef = first.edge_feature.is_some();
        let has_ew = first.edge_weight.is_some();
        let has_np = first.node_position.is_some();
        for (i, g) in graphs.iter().enumerate() {
            if g.node_feature.cols() != width {
                return Err(GraphError::FieldMismatch(format!(
                    "graph {i}: node feature width {} != {width}",
                    g.node_feature.cols()
                )));
            }
            if g.edge_feature.is_some() != has_ef
                || g.edge_weight.is_some() != has_ew
                || g.node_position.is_some() != has_np
            {
                return Err(GraphError::FieldMismatch(format!(
                    "graph {i}: optional field presence differs"
                )));
            }
            if has_ef
                && g.edge_feature.as_ref().unwrap().cols()
                    != first.edge_feature.as_ref().unwrap().cols()
            {
                return Err(GraphError::FieldMismatch(format!(
                    "graph {i}: edge feature width differs"
                )));
            }
        }
        let mut sizes = Vec::new();
        let mut node_rows = Vec::new();
        let mut edge_src = Vec::new();
        let mut edge_dst = Vec::new();
        let mut ef_rows = Vec::new();
        let mut ew = Vec::new();
        let mut np_rows = Vec::new();
        let mut offset = 0usize;
        for g in graphs {
            sizes.extend_from_slice(&g.sizes);
            for r in 0..g.node_feature.rows() {
                node_rows.push(g.node_feature.row(r).to_vec());
            }
            edge_src.extend(g.edge_src.iter().map(|&s| s + offset));
            edge_dst.extend(g.edge_dst.iter().map(|&d| d + offset));
            if let Some(f) = &g.edge_feature {
                for r in 0..f.rows() {
                    ef_rows.push(f.row(r).to_vec());
                }
            }
            if let Some(w) = &g.edge_weight {
                ew.extend_from_slice(w);
            }
            if let Some(p) = &g.node_position {
                for r in 0..p.rows() {
                    np_rows.push(p.row(r).to_vec());
                }
            }
            offset += g.num_nodes();
        }
        let node_feature = matrix_from_rows(node_rows, width);
        let merged = GraphTensor {
            sizes,
            node_feature,
            edge_src,
            edge_dst,
            edge_feature: has_ef.then(|| {
                let w = first.edge_feature.as_ref().unwrap().cols();
                matrix_from_rows(ef_rows, w)
            }),
            edge_weight: has_ew.then_some(ew),
            node_position: has_np.then(|| {
                let w = first.node_position.as_ref().unwrap().cols();
                matrix_from_rows(np_rows, w)
            }),
        };
        merged.validate()?;
        Ok(merged)
    }

    /// Unpack the disjoint graph into one graph per `sizes` entry; edge
    /// indices are re-based to 0.
    pub fn separate(&self) -> Vec<GraphTensor> {
        let offsets = self.offsets();
        let mut out = Vec::with_capacity(self.sizes.len());
        for (k, (&off, &size)) in offsets.iter().zip(&self.sizes).enumerate() {
            let _ = k;
            let end = off + size;
            let width = self.node_feature.cols();
            let mut rows = Vec::with_capacity(size);
            for r in off..end {
                rows.push(self.node_feature.row(r).to_vec());
            }
            let mut edge_src = Vec::new();
            let mut edge_dst = Vec::new();
            let mut edge_idx = Vec::new();
            for (e, (&s, &d)) in self.edge_src.iter().zip(&self.edge_dst).enumerate() {
                if s >= off && s < end {
                    edge_src.push(s - off);
                    edge_dst.push(d - off);
                    edge_idx.push(e);
                }
            }
            let edge_feature = self.edge_feature.as_ref().map(|f| {
                let w = f.cols();
                matrix_from_rows(edge_idx.iter().map(|&e| f.row(e).to_vec()).collect(), w)
            });
            let edge_weight = self
                .edge_weight
                .as_ref()
                .map(|w| edge_idx.iter().map(|&e| w[e]).collect());
            let node_position = self.node_position.as_ref().map(|p| {
                let w = p.cols();
                matrix_from_rows((off..end).map(|r| p.row(r).to_vec()).collect(), w)
            });
            out.push(GraphTensor {
                sizes: vec![size],
                node_feature: matrix_from_rows(rows, width),
                edge_src,
                edge_dst,
                edge_feature,
                edge_weight,
                node_position,
            });
        }
        out
    }

    /// Replace or add a field, returning a new graph (value semantics).
    pub fn update(&self, field: &str, data: FieldData) -> Result<GraphTensor, GraphError> {
        let mut g = self.clone();
        let nodes = self.num_nodes();
        let edges = self.num_edges();
        match (field, data) {
            ("node_feature", FieldData::Matrix(m)) => {
                require_rows(&m, nodes, field)?;
                g.node_feature = m;
            }
            ("edge_feature", FieldData::Matrix(m)) => {
                require_rows(&m, edges, field)?;
                g.edge_feature = Some(m);
            }
            ("node_position", FieldData::Matrix(m)) => {
                require_rows(&m, nodes, field)?;
                g.node_position = Some(m);
            }
            ("edge_weight", FieldData::Vector(v)) => {
                if v.len() != edges {
                    return Err(GraphError::ShapeMismatch(format!(
                        "edge_weight length {} != edge count {edges}",
                        v.len()
                    )));
                }
                g.edge_weight = Some(v);
            }
            (other, _) => return Err(GraphError::UnknownField(other.to_string())),
        }
        Ok(g)
    }

    /// Drop an optional field, returning a new graph.
    pub fn remove(&self, field: &str) -> Result<GraphTensor, GraphError> {
        let mut g = self.clone();
        match field {
            "edge_feature" => g.edge_feature = None,
            "edge_weight" => g.edge_weight = None,
            "node_position" => g.node_position = None,
            "sizes" | "node_feature" | "edge_src" | "edge_dst" => {
                return Err(GraphError::RequiredFieldRemoval(field.to_string()))
            }
            other => return Err(GraphError::UnknownField(other.to_string())),
        }
        Ok(g)
    }

    /// Aggregate source-node features into each destination node, scaled by
    /// edge weights when present. Replaces node_feature; shape preserved.
    pub fn propagate(&self, mode: AggregationMode) -> GraphTensor {
        let n = self.num_nodes();
        let d = self.node_feature.cols();
        let mut out = Tensor::zeros(vec![n, d]);
        match mode {
            AggregationMode::Sum | AggregationMode::Mean => {
                let mut counts = vec![0usize; n];
                for (e, (&s, &dst)) in self.edge_src.iter().zip(&self.edge_dst).enumerate() {
                    let w = self.edge_weight.as_ref().map_or(1.0, |ws| ws[e]);
                    for c in 0..d {
                        let v = out.at(dst, c) + w * self.node_feature.at(s, c);
                        out.set(dst, c, v);
                    }
                    counts[dst] += 1;
                }
                if mode == AggregationMode::Mean {
                    for (i, &cnt) in counts.iter().enumerate() {
                        if cnt > 0 {
                            for c in 0..d {
                                let v = out.at(i, c) / cnt as f64;
                                out.set(i, c, v);
                            }
                        }
                    }
                }
            }
            AggregationMode::Max => {
                let mut seen = vec![false; n];
                for (e, (&s, &dst)) in self.edge_src.iter().zip(&self.edge_dst).enumerate() {
                    let w = self.edge_weight.as_ref().map_or(1.0, |ws| ws[e]);
                    for c in 0..d {
                        let v = w * self.node_feature.at(s, c);
                        if !seen[dst] || v > out.at(dst, c) {
                            out.set(dst, c, v);
                        }
                    }
                    seen[dst] = true;
                }
            }
        }
        let mut g = self.clone();
        g.node_feature = out;
        g
    }
}

fn matrix_from_rows(rows: Vec<Vec<f64>>, width: usize) -> Tensor {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * width);
    for r in rows {
        debug_assert_eq!(r.len(), width);
        data.extend(r);
    }
    Tensor::new(vec![n, width], data).unwrap()
}

fn require_rows(m: &Tensor, rows: usize, field: &str) -> Result<(), GraphError> {
    if m.rows() != rows {
        return Err(GraphError::ShapeMismatch(format!(
            "{field}: {} rows, expected {rows}",
            m.rows()
        )));
    }
    Ok(())
}
