//! Fixed-layout atom and bond featurization and molecule-to-graph encoding.
//!
//! Every feature is either a one-hot block over a fixed vocabulary with a
//! trailing out-of-vocabulary slot or a single binary slot. The block order
//! and vocabularies fully determine the vector layout, so two configs with
//! the same JSON form produce bit-identical encodings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::chem::{Atom, Bond, BondOrder, ChemError, Element, Molecule};
use crate::graph::GraphTensor;

/// Errors from configuration handling and batch encoding.
#[derive(Debug, Error)]
pub enum FeaturizeError {
    #[error("unknown feature name `{0}`")]
    UnknownFeatureName(String),
    #[error("feature `{0}` is continuous and not supported; use the categorical feature set")]
    ExcludedFeature(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error("batch encoding failed at {} input(s): {}", .0.len(), format_batch_errors(.0))]
    Batch(Vec<(usize, ChemError)>),
}

fn format_batch_errors(errors: &[(usize, ChemError)]) -> String {
    let mut s = String::new();
    for (i, (idx, e)) in errors.iter().take(3).enumerate() {
        if i > 0 {
            s.push_str("; ");
        }
        let _ = write!(s, "[{idx}] {e}");
    }
    if errors.len() > 3 {
        let _ = write!(s, "; and {} more", errors.len() - 3);
    }
    s
}

/// Atom feature kinds, in their canonical serialized names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomFeature {
    Symbol,
    Degree,
    FormalCharge,
    NumHydrogens,
    Hybridization,
    Aromatic,
    Hetero,
    HydrogenDonor,
    HydrogenAcceptor,
    RingMembership,
    RingSize,
    ValenceElectrons,
    RadicalElectrons,
}

/// Bond feature kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BondFeature {
    BondType,
    Conjugated,
    Rotatable,
    RingMembership,
    RingSize,
}

const SYMBOL_VOCAB: [&str; 10] = ["B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I"];
const EXCLUDED_FEATURES: [&str; 4] =
    ["gasteiger_charge", "crippen_log_p", "tpsa", "labute_asa"];

impl AtomFeature {
    pub const ALL: [AtomFeature; 13] = [
        AtomFeature::Symbol,
        AtomFeature::Degree,
        AtomFeature::FormalCharge,
        AtomFeature::NumHydrogens,
        AtomFeature::Hybridization,
        AtomFeature::Aromatic,
        AtomFeature::Hetero,
        AtomFeature::HydrogenDonor,
        AtomFeature::HydrogenAcceptor,
        AtomFeature::RingMembership,
        AtomFeature::RingSize,
        AtomFeature::ValenceElectrons,
        AtomFeature::RadicalElectrons,
    ];

    /// Number of slots this feature contributes to the vector.
    pub fn width(self) -> usize {
        match self {
            AtomFeature::Symbol => SYMBOL_VOCAB.len() + 1,
            AtomFeature::Degree => 7 + 1,
            AtomFeature::FormalCharge => 5 + 1,
            AtomFeature::NumHydrogens => 5 + 1,
            AtomFeature::Hybridization => 4,
            AtomFeature::Aromatic
            | AtomFeature::Hetero
            | AtomFeature::HydrogenDonor
            | AtomFeature::HydrogenAcceptor
            | AtomFeature::RingMembership => 1,
            AtomFeature::RingSize => 6 + 1,
            AtomFeature::ValenceElectrons => 8 + 1,
            AtomFeature::RadicalElectrons => 3 + 1,
        }
    }

    /// Slot labels, used for the serialized vocabulary table.
    pub fn vocabulary(self) -> Vec<String> {
        match self {
            AtomFeature::Symbol => SYMBOL_VOCAB
                .iter()
                .map(|s| s.to_string())
                .chain(["oov".to_string()])
                .collect(),
            AtomFeature::Degree => labelled_range(0, 6),
            AtomFeature::FormalCharge => labelled_range(-2, 2),
            AtomFeature::NumHydrogens => labelled_range(0, 4),
            AtomFeature::Hybridization => {
                ["sp", "sp2", "sp3", "other"].iter().map(|s| s.to_string()).collect()
            }
            AtomFeature::Aromatic
            | AtomFeature::Hetero
            | AtomFeature::HydrogenDonor
            | AtomFeature::HydrogenAcceptor
            | AtomFeature::RingMembership => vec!["true".to_string()],
            AtomFeature::RingSize => {
                let mut v: Vec<String> = (3..=8).map(|n| n.to_string()).collect();
                v.push("none".to_string());
                v
            }
            AtomFeature::ValenceElectrons => labelled_range(1, 8),
            AtomFeature::RadicalElectrons => labelled_range(0, 2),
        }
    }
}

impl BondFeature {
    pub const ALL: [BondFeature; 5] = [
        BondFeature::BondType,
        BondFeature::Conjugated,
        BondFeature::Rotatable,
        BondFeature::RingMembership,
        BondFeature::RingSize,
    ];

    pub fn width(self) -> usize {
        match self {
            BondFeature::BondType => 4,
            BondFeature::Conjugated | BondFeature::Rotatable | BondFeature::RingMembership => 1,
            BondFeature::RingSize => 6 + 1,
        }
    }

    pub fn vocabulary(self) -> Vec<String> {
        match self {
            BondFeature::BondType => {
                ["single", "double", "triple", "aromatic"].iter().map(|s| s.to_string()).collect()
            }
            BondFeature::Conjugated | BondFeature::Rotatable | BondFeature::RingMembership => {
                vec!["true".to_string()]
            }
            BondFeature::RingSize => {
                let mut v: Vec<String> = (3..=8).map(|n| n.to_string()).collect();
                v.push("none".to_string());
                v
            }
        }
    }
}

fn labelled_range(lo: i64, hi: i64) -> Vec<String> {
    let mut v: Vec<String> = (lo..=hi).map(|n| n.to_string()).collect();
    v.push("oov".to_string());
    v
}

/// Ordered feature selection plus encoding flags, defining the vector layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub atom_features: Vec<AtomFeature>,
    pub bond_features: Vec<BondFeature>,
    pub include_edge_features: bool,
    pub self_loops: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            atom_features: AtomFeature::ALL.to_vec(),
            bond_features: BondFeature::ALL.to_vec(),
            include_edge_features: true,
            self_loops: false,
        }
    }
}

impl FeatureConfig {
    /// Total atom feature vector width.
    pub fn atom_width(&self) -> usize {
        self.atom_features.iter().map(|f| f.width()).sum()
    }

    /// Total bond feature vector width.
    pub fn bond_width(&self) -> usize {
        self.bond_features.iter().map(|f| f.width()).sum()
    }

    /// Serialize to a JSON document including the full vocabulary table,
    /// so the layout is recoverable from the document alone.
    pub fn to_json(&self) -> String {
        let doc = ConfigDocument::from_config(self);
        serde_json::to_string_pretty(&doc).expect("config serialization")
    }

    /// Parse a JSON document, rejecting unknown or excluded feature names
    /// and vocabularies that do not match this implementation's layout.
    pub fn from_json(text: &str) -> Result<FeatureConfig, FeaturizeError> {
        let doc: ConfigDocument = serde_json::from_str(text)
            .map_err(|e| FeaturizeError::BadConfig(e.to_string()))?;
        doc.into_config()
    }

    /// SHA-256 digest of the canonical JSON form, used to bind checkpoints
    /// to the exact feature layout they were trained with.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.to_json().as_bytes());
        h.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        self.digest().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigDocument {
    atom_features: Vec<String>,
    bond_features: Vec<String>,
    vocabularies: std::collections::BTreeMap<String, Vec<String>>,
    include_edge_features: bool,
    self_loops: bool,
}

impl ConfigDocument {
    fn from_config(cfg: &FeatureConfig) -> ConfigDocument {
        let mut vocabularies = std::collections::BTreeMap::new();
        for f in &cfg.atom_features {
            vocabularies.insert(format!("atom.{}", feature_name(*f)), f.vocabulary());
        }
        for f in &cfg.bond_features {
            vocabularies.insert(format!("bond.{}", bond_feature_name(*f)), f.vocabulary());
        }
        ConfigDocument {
            atom_features: cfg.atom_features.iter().map(|f| feature_name(*f)).collect(),
            bond_features: cfg.bond_features.iter().map(|f| bond_feature_name(*f)).collect(),
            vocabularies,
            include_edge_features: cfg.include_edge_features,
            self_loops: cfg.self_loops,
        }
    }

    fn into_config(self) -> Result<FeatureConfig, FeaturizeError> {
        let atom_features = self
            .atom_features
            .iter()
            .map(|n| parse_atom_feature(n))
            .collect::<Result<Vec<_>, _>>()?;
        let bond_features = self
            .bond_features
            .iter()
            .map(|n| parse_bond_feature(n))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = FeatureConfig {
            atom_features,
            bond_features,
            include_edge_features: self.include_edge_features,
            self_loops: self.self_loops,
        };
        let canonical = ConfigDocument::from_config(&cfg);
        if self.vocabularies != canonical.vocabularies {
            return Err(FeaturizeError::BadConfig(
                "vocabulary table does not match this implementation's fixed vocabularies".into(),
            ));
        }
        Ok(cfg)
    }
}

fn feature_name(f: AtomFeature) -> String {
    serde_json::to_value(f).expect("enum name").as_str().expect("string").to_string()
}

fn bond_feature_name(f: BondFeature) -> String {
    serde_json::to_value(f).expect("enum name").as_str().expect("string").to_string()
}

fn parse_atom_feature(name: &str) -> Result<AtomFeature, FeaturizeError> {
    if EXCLUDED_FEATURES.contains(&name) {
        return Err(FeaturizeError::ExcludedFeature(name.to_string()));
    }
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| FeaturizeError::UnknownFeatureName(name.to_string()))
}

fn parse_bond_feature(name: &str) -> Result<BondFeature, FeaturizeError> {
    if EXCLUDED_FEATURES.contains(&name) {
        return Err(FeaturizeError::ExcludedFeature(name.to_string()));
    }
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| FeaturizeError::UnknownFeatureName(name.to_string()))
}

fn push_one_hot(out: &mut Vec<f64>, width: usize, hot: usize) {
    debug_assert!(hot < width);
    let start = out.len();
    out.resize(start + width, 0.0);
    out[start + hot] = 1.0;
}

/// One-hot index for an integer vocabulary `lo..=hi` with a trailing OOV slot.
fn range_slot(value: i64, lo: i64, hi: i64) -> usize {
    if value >= lo && value <= hi {
        (value - lo) as usize
    } else {
        (hi - lo + 1) as usize
    }
}

fn hybridization_slot(atom: &Atom, mol: &Molecule) -> usize {
    let mut doubles = 0usize;
    let mut triples = 0usize;
    for &b in &mol.bonds_of(atom.index) {
        match mol.bonds[b].order {
            BondOrder::Double => doubles += 1,
            BondOrder::Triple => triples += 1,
            _ => {}
        }
    }
    if triples > 0 || doubles >= 2 {
        0
    } else if atom.aromatic || doubles == 1 {
        1
    } else {
        2
    }
}

fn is_hydrogen_acceptor(atom: &Atom, mol: &Molecule) -> bool {
    if !matches!(atom.element, Element::N | Element::O) || atom.formal_charge > 0 {
        return false;
    }
    // An aromatic nitrogen bound three ways (pyrrole-type) has donated its
    // lone pair into the ring and cannot accept.
    let pyrrole_type = atom.element == Element::N
        && atom.aromatic
        && mol.degree(atom.index) + atom.total_h() as usize == 3;
    !pyrrole_type
}

/// Encode one atom under `cfg`, concatenating blocks in config order.
pub fn featurize_atom(atom: &Atom, mol: &Molecule, cfg: &FeatureConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.atom_width());
    for f in &cfg.atom_features {
        match f {
            AtomFeature::Symbol => {
                let slot = SYMBOL_VOCAB
                    .iter()
                    .position(|s| *s == atom.element.symbol())
                    .unwrap_or(SYMBOL_VOCAB.len());
                push_one_hot(&mut out, f.width(), slot);
            }
            AtomFeature::Degree => {
                let slot = range_slot(mol.degree(atom.index) as i64, 0, 6);
                push_one_hot(&mut out, f.width(), slot);
            }
            AtomFeature::FormalCharge => {
                let slot = range_slot(atom.formal_charge as i64, -2, 2);
                push_one_hot(&mut out, f.width(), slot);
            }
            AtomFeature::NumHydrogens => {
                let slot = range_slot(atom.total_h() as i64, 0, 4);
                push_one_hot(&mut out, f.width(), slot);
            }
            AtomFeature::Hybridization => {
                push_one_hot(&mut out, f.width(), hybridization_slot(atom, mol));
            }
            AtomFeature::Aromatic => out.push(if atom.aromatic { 1.0 } else { 0.0 }),
            AtomFeature::Hetero => {
                let hetero = !matches!(atom.element, Element::C | Element::H);
                out.push(if hetero { 1.0 } else { 0.0 });
            }
            AtomFeature::HydrogenDonor => {
                let donor = matches!(atom.element, Element::N | Element::O | Element::S)
                    && atom.total_h() >= 1;
                out.push(if donor { 1.0 } else { 0.0 });
            }
            AtomFeature::HydrogenAcceptor => {
                out.push(if is_hydrogen_acceptor(atom, mol) { 1.0 } else { 0.0 });
            }
            AtomFeature::RingMembership => {
                let in_ring = mol.smallest_ring_size_atom(atom.index).is_some();
                out.push(if in_ring { 1.0 } else { 0.0 });
            }
            AtomFeature::RingSize => {
                let slot = match mol.smallest_ring_size_atom(atom.index) {
                    Some(n) if (3..=8).contains(&n) => n - 3,
                    _ => 6,
                };
                push_one_hot(&mut out, f.width(), slot);
            }
            AtomFeature::ValenceElectrons => {
                let slot = match atom.element.valence_electrons() {
                    Some(n) => range_slot(n as i64, 1, 8),
                    None => 8,
                };
                push_one_hot(&mut out, f.width(), slot);
            }
            AtomFeature::RadicalElectrons => {
                let slot = range_slot(atom.radical_electrons as i64, 0, 2);
                push_one_hot(&mut out, f.width(), slot);
            }
        }
    }
    out
}

/// Encode one bond under `cfg`.
pub fn featurize_bond(bond: &Bond, mol: &Molecule, cfg: &FeatureConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.bond_width());
    for f in &cfg.bond_features {
        match f {
            BondFeature::BondType => {
                let slot = match bond.order {
                    BondOrder::Single => 0,
                    BondOrder::Double => 1,
                    BondOrder::Triple => 2,
                    BondOrder::Aromatic => 3,
                };
                push_one_hot(&mut out, f.width(), slot);
            }
            BondFeature::Conjugated => out.push(if bond.conjugated { 1.0 } else { 0.0 }),
            BondFeature::Rotatable => out.push(if bond.rotatable { 1.0 } else { 0.0 }),
            BondFeature::RingMembership => out.push(if bond.in_ring { 1.0 } else { 0.0 }),
            BondFeature::RingSize => {
                let slot = match mol.smallest_ring_size_bond(bond) {
                    Some(n) if (3..=8).contains(&n) => n - 3,
                    _ => 6,
                };
                push_one_hot(&mut out, f.width(), slot);
            }
        }
    }
    out
}

/// Encode a single SMILES string as a one-subgraph GraphTensor.
///
/// Each undirected bond becomes two directed edges with identical features;
/// edges are sorted by (src, dst) for a deterministic layout.
pub fn encode_molecule(smiles: &str, cfg: &FeatureConfig) -> Result<GraphTensor, FeaturizeError> {
    let mol = Molecule::from_smiles(smiles)?;
    Ok(encode_perceived(&mol, cfg))
}

/// Encode an already-perceived molecule.
pub fn encode_perceived(mol: &Molecule, cfg: &FeatureConfig) -> GraphTensor {
    let n = mol.atoms.len();
    let rows: Vec<Vec<f64>> =
        mol.atoms.iter().map(|a| featurize_atom(a, mol, cfg)).collect();
    let node_feature = if n == 0 {
        Tensor::zeros(vec![0, cfg.atom_width()])
    } else {
        Tensor::from_rows(&rows)
    };

    let mut edges: Vec<(usize, usize, Vec<f64>)> = Vec::with_capacity(2 * mol.bonds.len());
    for bond in &mol.bonds {
        let feat = featurize_bond(bond, mol, cfg);
        edges.push((bond.src, bond.dst, feat.clone()));
        edges.push((bond.dst, bond.src, feat));
    }
    if cfg.self_loops {
        for i in 0..n {
            edges.push((i, i, vec![0.0; cfg.bond_width()]));
        }
    }
    edges.sort_by_key(|(s, d, _)| (*s, *d));

    let edge_src: Vec<usize> = edges.iter().map(|(s, _, _)| *s).collect();
    let edge_dst: Vec<usize> = edges.iter().map(|(_, d, _)| *d).collect();
    let edge_feature = if cfg.include_edge_features {
        let feats: Vec<Vec<f64>> = edges.into_iter().map(|(_, _, f)| f).collect();
        Some(if feats.is_empty() {
            Tensor::zeros(vec![0, cfg.bond_width()])
        } else {
            Tensor::from_rows(&feats)
        })
    } else {
        None
    };

    GraphTensor {
        sizes: vec![n],
        node_feature,
        edge_src,
        edge_dst,
        edge_feature,
        edge_weight: None,
        node_position: None,
    }
}

/// Report from lenient batch encoding: which inputs survived, which failed.
#[derive(Debug, Clone)]
pub struct BatchReport {
    pub kept: Vec<usize>,
    pub rejected: Vec<(usize, String)>,
}

/// Encode a batch of SMILES strings as the disjoint union of molecule graphs.
///
/// Strict mode fails on the first unparseable input (reporting all failures);
/// lenient mode skips bad inputs and records them in the report.
pub fn encode_batch(
    smiles_list: &[String],
    cfg: &FeatureConfig,
    strict: bool,
) -> Result<(GraphTensor, BatchReport), FeaturizeError> {
    if smiles_list.is_empty() {
        return Err(FeaturizeError::EmptyBatch);
    }
    let mut graphs = Vec::with_capacity(smiles_list.len());
    let mut report = BatchReport { kept: Vec::new(), rejected: Vec::new() };
    let mut errors = Vec::new();
    for (i, s) in smiles_list.iter().enumerate() {
        match encode_molecule(s, cfg) {
            Ok(g) => {
                report.kept.push(i);
                graphs.push(g);
            }
            Err(FeaturizeError::Chem(e)) => {
                report.rejected.push((i, e.to_string()));
                errors.push((i, e));
            }
            Err(e) => return Err(e),
        }
    }
    if strict && !errors.is_empty() {
        return Err(FeaturizeError::Batch(errors));
    }
    if graphs.is_empty() {
        return Err(FeaturizeError::Batch(errors));
    }
    let merged = GraphTensor::merge(&graphs).expect("uniform encodings merge");
    Ok((merged, report))
}
