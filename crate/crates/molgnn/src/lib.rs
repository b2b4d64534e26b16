//! Molecular graph neural network toolkit.
//!
//! Pipeline: SMILES strings are parsed into [`chem::Molecule`]s, featurized
//! into disjoint-batched [`graph::GraphTensor`]s, and fed through stacks of
//! graph layers ([`layers`]) whose gradients come from a tape-based
//! reverse-mode engine ([`autodiff`]). On top of that sit the training loop
//! ([`train`]), binary record / CSV dataset handling ([`io`]), per-atom
//! attribution maps ([`interpret`]) and retention-time candidate filtering
//! ([`rtfilter`]).

pub mod autodiff;
pub mod chem;
pub mod cli;
pub mod featurize;
pub mod graph;
pub mod interpret;
pub mod io;
pub mod layers;
pub mod rtfilter;
pub mod train;

pub use autodiff::{Tape, Tensor};
pub use chem::Molecule;
pub use featurize::FeatureConfig;
pub use graph::GraphTensor;
pub use layers::GnnModel;
