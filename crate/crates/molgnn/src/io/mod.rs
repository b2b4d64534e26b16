//! CSV label-table ingestion, the MGRF binary graph-record format, and
//! deterministic dataset splits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::featurize::FeatureConfig;
use crate::graph::GraphTensor;

pub const MAGIC: &[u8; 4] = b"MGRF";
pub const VERSION: u16 = 1;

const FLAG_EDGE_FEATURE: u8 = 1;
const FLAG_EDGE_WEIGHT: u8 = 2;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("no valid rows in table")]
    NoValidRows,
    #[error("strict mode: {0} rows rejected")]
    RejectedRows(usize),
    #[error("not an MGRF file")]
    BadMagic,
    #[error("unsupported MGRF version {0}")]
    BadVersion(u16),
    #[error("feature layout digest does not match the reader's configuration")]
    DigestMismatch,
    #[error("record truncated at byte offset {offset}")]
    TruncatedRecord { offset: u64 },
    #[error("split fractions must be non-negative and sum to 1")]
    BadFractions,
    #[error("graph layout does not match the feature configuration")]
    LayoutMismatch,
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// One accepted table row: a SMILES string plus per-task labels and a
/// 0/1 mask marking which labels were present.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub smiles: String,
    pub labels: Vec<f64>,
    pub mask: Vec<f64>,
}

/// Row-level rejections keyed by original row index (0-based, excluding the
/// header line).
#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub rejected: Vec<(usize, String)>,
}

pub fn read_table(
    path: &Path,
    smiles_column: &str,
    label_columns: &[&str],
) -> Result<(Vec<TableRow>, ParseReport), IoError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IoError::MissingColumn(name.to_string()))
    };
    let smiles_idx = find(smiles_column)?;
    let label_idx: Vec<usize> =
        label_columns.iter().map(|c| find(c)).collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut report = ParseReport::default();
    for (i, record) in reader.records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.rejected.push((i, e.to_string()));
                continue;
            }
        };
        let smiles = match record.get(smiles_idx) {
            Some(s) if !s.trim().is_empty() => s.trim().to_string(),
            _ => {
                report.rejected.push((i, "empty smiles cell".to_string()));
                continue;
            }
        };
        let mut labels = Vec::with_capacity(label_idx.len());
        let mut mask = Vec::with_capacity(label_idx.len());
        let mut bad_cell = None;
        for (&idx, &name) in label_idx.iter().zip(label_columns) {
            let cell = record.get(idx).unwrap_or("").trim();
            if cell.is_empty() {
                labels.push(0.0);
                mask.push(0.0);
            } else {
                match cell.parse::<f64>() {
                    Ok(v) => {
                        labels.push(v);
                        mask.push(1.0);
                    }
                    Err(_) => {
                        bad_cell = Some(format!("unparseable value {cell:?} in column {name:?}"));
                        break;
                    }
                }
            }
        }
        if let Some(reason) = bad_cell {
            report.rejected.push((i, reason));
            continue;
        }
        rows.push(TableRow { smiles, labels, mask });
    }
    if rows.is_empty() {
        return Err(IoError::NoValidRows);
    }
    Ok((rows, report))
}

// ---------------------------------------------------------------------------
// MGRF record files
// ---------------------------------------------------------------------------

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f32s(w: &mut impl Write, values: impl Iterator<Item = f64>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Writes one record file binding `graphs` and their labels to the feature
/// layout identified by `cfg`'s digest.
pub fn write_records(
    path: &Path,
    graphs: &[GraphTensor],
    labels: &[(Vec<f64>, Vec<f64>)],
    cfg: &FeatureConfig,
) -> Result<(), IoError> {
    assert_eq!(graphs.len(), labels.len());
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&cfg.digest())?;
    w.write_all(&(graphs.len() as u64).to_le_bytes())?;

    for (g, (labels, mask)) in graphs.iter().zip(labels) {
        if g.node_feature.cols() != cfg.atom_width() {
            return Err(IoError::LayoutMismatch);
        }
        if let Some(e) = &g.edge_feature {
            if e.cols() != cfg.bond_width() {
                return Err(IoError::LayoutMismatch);
            }
        }
        write_u32(&mut w, g.num_nodes() as u32)?;
        write_u32(&mut w, g.num_edges() as u32)?;
        let mut flags = 0u8;
        if g.edge_feature.is_some() {
            flags |= FLAG_EDGE_FEATURE;
        }
        if g.edge_weight.is_some() {
            flags |= FLAG_EDGE_WEIGHT;
        }
        w.write_all(&[flags])?;
        write_f32s(&mut w, g.node_feature.data().iter().copied())?;
        for &s in &g.edge_src {
            write_u32(&mut w, s as u32)?;
        }
        for &d in &g.edge_dst {
            write_u32(&mut w, d as u32)?;
        }
        if let Some(e) = &g.edge_feature {
            write_f32s(&mut w, e.data().iter().copied())?;
        }
        if let Some(ws) = &g.edge_weight {
            write_f32s(&mut w, ws.iter().copied())?;
        }
        assert_eq!(labels.len(), mask.len());
        w.write_all(&(labels.len() as u16).to_le_bytes())?;
        write_f32s(&mut w, labels.iter().copied())?;
        let mut bits = vec![0u8; labels.len().div_ceil(8)];
        for (i, &m) in mask.iter().enumerate() {
            if m != 0.0 {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bits)?;
    }
    w.flush()?;
    Ok(())
}

/// Streaming reader over an MGRF file; holds one record in memory at a time.
pub struct RecordReader {
    reader: BufReader<File>,
    offset: u64,
    remaining: u64,
    atom_width: usize,
    bond_width: usize,
}

impl RecordReader {
    pub fn open(path: &Path, cfg: &FeatureConfig) -> Result<Self, IoError> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        let mut offset = 0u64;
        read_exact(&mut reader, &mut magic, &mut offset)?;
        if &magic != MAGIC {
            return Err(IoError::BadMagic);
        }
        let mut v = [0u8; 2];
        read_exact(&mut reader, &mut v, &mut offset)?;
        let version = u16::from_le_bytes(v);
        if version != VERSION {
            return Err(IoError::BadVersion(version));
        }
        let mut digest = [0u8; 32];
        read_exact(&mut reader, &mut digest, &mut offset)?;
        if digest != cfg.digest() {
            return Err(IoError::DigestMismatch);
        }
        let mut count = [0u8; 8];
        read_exact(&mut reader, &mut count, &mut offset)?;
        Ok(Self {
            reader,
            offset,
            remaining: u64::from_le_bytes(count),
            atom_width: cfg.atom_width(),
            bond_width: cfg.bond_width(),
        })
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    fn read_record(&mut self) -> Result<(GraphTensor, Vec<f64>, Vec<f64>), IoError> {
        let nodes = self.read_u32()? as usize;
        let edges = self.read_u32()? as usize;
        let mut flags = [0u8; 1];
        read_exact(&mut self.reader, &mut flags, &mut self.offset)?;
        let flags = flags[0];

        let node_data = self.read_f32s(nodes * self.atom_width)?;
        let node_feature = Tensor::new(vec![nodes, self.atom_width], node_data).unwrap();
        let edge_src: Vec<usize> =
            (0..edges).map(|_| self.read_u32().map(|v| v as usize)).collect::<Result<_, _>>()?;
        let edge_dst: Vec<usize> =
            (0..edges).map(|_| self.read_u32().map(|v| v as usize)).collect::<Result<_, _>>()?;
        let edge_feature = if flags & FLAG_EDGE_FEATURE != 0 {
            let data = self.read_f32s(edges * self.bond_width)?;
            Some(Tensor::new(vec![edges, self.bond_width], data).unwrap())
        } else {
            None
        };
        let edge_weight =
            if flags & FLAG_EDGE_WEIGHT != 0 { Some(self.read_f32s(edges)?) } else { None };

        let mut count = [0u8; 2];
        read_exact(&mut self.reader, &mut count, &mut self.offset)?;
        let label_count = u16::from_le_bytes(count) as usize;
        let labels = self.read_f32s(label_count)?;
        let mut bits = vec![0u8; label_count.div_ceil(8)];
        read_exact(&mut self.reader, &mut bits, &mut self.offset)?;
        let mask: Vec<f64> = (0..label_count)
            .map(|i| if bits[i / 8] & (1 << (i % 8)) != 0 { 1.0 } else { 0.0 })
            .collect();

        let mut g = GraphTensor::new(vec![nodes], node_feature, edge_src, edge_dst)
            .map_err(|_| IoError::TruncatedRecord { offset: self.offset })?;
        g.edge_feature = edge_feature;
        g.edge_weight = edge_weight;
        Ok((g, labels, mask))
    }

    fn read_u32(&mut self) -> Result<u32, IoError> {
        let mut buf = [0u8; 4];
        read_exact(&mut self.reader, &mut buf, &mut self.offset)?;
        Ok(u32::from_le_bytes(buf))
    }

    fn read_f32s(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            read_exact(&mut self.reader, &mut buf, &mut self.offset)?;
            out.push(f32::from_le_bytes(buf) as f64);
        }
        Ok(out)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], offset: &mut u64) -> Result<(), IoError> {
    r.read_exact(buf).map_err(|_| IoError::TruncatedRecord { offset: *offset })?;
    *offset += buf.len() as u64;
    Ok(())
}

impl Iterator for RecordReader {
    type Item = Result<(GraphTensor, Vec<f64>, Vec<f64>), IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.read_record())
    }
}

/// Reads every record eagerly; convenience wrapper over [`RecordReader`].
pub fn read_records(
    path: &Path,
    cfg: &FeatureConfig,
) -> Result<Vec<(GraphTensor, Vec<f64>, Vec<f64>)>, IoError> {
    RecordReader::open(path, cfg)?.collect()
}

// ---------------------------------------------------------------------------
// Dataset splits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitStrategy {
    Random,
    /// Balances binary label prevalence across partitions within ±1 per class.
    Stratified,
}

/// Largest-remainder apportionment of `n` items into `fractions.len()` sizes.
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut leftover = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if leftover == 0 {
            break;
        }
        sizes[i] += 1;
        leftover -= 1;
    }
    sizes
}

fn deal(indices: Vec<usize>, fractions: &[f64], rng: &mut ChaCha20Rng) -> Vec<Vec<usize>> {
    let mut indices = indices;
    indices.shuffle(rng);
    let sizes = apportion(indices.len(), fractions);
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for size in sizes {
        parts.push(indices[start..start + size].to_vec());
        start += size;
    }
    parts
}

/// Partitions `[0, n)` into disjoint, exhaustive index sets. `class_of` is
/// required for (and only consulted by) the stratified strategy.
pub fn split(
    n: usize,
    fractions: &[f64],
    seed: u64,
    strategy: SplitStrategy,
    class_of: Option<&dyn Fn(usize) -> u64>,
) -> Result<Vec<Vec<usize>>, IoError> {
    if fractions.iter().any(|&f| f < 0.0)
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(IoError::BadFractions);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let parts = match strategy {
        SplitStrategy::Random => deal((0..n).collect(), fractions, &mut rng),
        SplitStrategy::Stratified => {
            let class_of = class_of.expect("stratified split needs a class function");
            let mut by_class: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for i in 0..n {
                by_class.entry(class_of(i)).or_default().push(i);
            }
            let mut parts = vec![Vec::new(); fractions.len()];
            for (_, members) in by_class {
                for (part, chunk) in parts.iter_mut().zip(deal(members, fractions, &mut rng)) {
                    part.extend(chunk);
                }
            }
            for part in &mut parts {
                part.sort_unstable();
            }
            parts
        }
    };
    Ok(parts)
}
