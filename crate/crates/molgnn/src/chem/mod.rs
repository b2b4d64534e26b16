//! SMILES parsing and chemistry perception.
//!
//! `Molecule::from_smiles` runs the full pipeline: parse, ring perception,
//! kekulization, implicit hydrogen assignment and bond-property perception.
//! The intermediate steps are exposed for testing.

mod kekulize;
mod perceive;
mod rings;
mod smiles;

pub use kekulize::kekulize;
pub use perceive::{assign_implicit_hydrogens, perceive_bond_properties};
pub use rings::perceive_rings;
pub use smiles::parse_smiles;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChemError {
    #[error("empty SMILES input")]
    EmptyInput,
    #[error("ring-closure digit {0} never paired")]
    UnclosedRing(String),
    #[error("unbalanced parenthesis at position {0}")]
    UnbalancedParenthesis(usize),
    #[error("unknown atom token at position {0}: {1}")]
    UnknownAtomToken(usize, String),
    #[error("valence violation on atom {0}: bond order sum {1} exceeds maximum {2}")]
    ValenceViolation(usize, u32, u32),
    #[error("kekulization failure: {0}")]
    KekulizationFailure(String),
    #[error("invalid ring closure at position {0}")]
    InvalidRingClosure(usize),
}

/// Atomic element, restricted to the organic-chemistry working set plus a
/// catch-all carrying the original symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Element {
    H,
    B,
    C,
    N,
    O,
    F,
    P,
    S,
    Cl,
    Br,
    I,
    Other(String),
}

impl Element {
    pub fn symbol(&self) -> &str {
        match self {
            Element::H => "H",
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
            Element::Other(s) => s,
        }
    }

    pub fn from_symbol(sym: &str) -> Element {
        match sym {
            "H" => Element::H,
            "B" => Element::B,
            "C" => Element::C,
            "N" => Element::N,
            "O" => Element::O,
            "F" => Element::F,
            "P" => Element::P,
            "S" => Element::S,
            "Cl" => Element::Cl,
            "Br" => Element::Br,
            "I" => Element::I,
            other => Element::Other(other.to_string()),
        }
    }

    /// Periodic-group valence electron count, for the featurizer.
    pub fn valence_electrons(&self) -> Option<u8> {
        Some(match self {
            Element::H => 1,
            Element::B => 3,
            Element::C => 4,
            Element::N | Element::P => 5,
            Element::O | Element::S => 6,
            Element::F | Element::Cl | Element::Br | Element::I => 7,
            Element::Other(_) => return None,
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Integer order; aromatic counts as 1 (its kekulized order carries the
    /// extra unit).
    pub fn order_value(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn is_multiple(self) -> bool {
        !matches!(self, BondOrder::Single)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    /// Hydrogen count from a bracket atom; None for organic-subset atoms.
    pub explicit_h: Option<u8>,
    pub isotope: Option<u16>,
    pub aromatic: bool,
    pub implicit_h: u8,
    pub radical_electrons: u8,
    pub index: usize,
}

impl Atom {
    pub fn total_h(&self) -> u8 {
        self.explicit_h.unwrap_or(0) + self.implicit_h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bond {
    pub src: usize,
    pub dst: usize,
    pub order: BondOrder,
    pub in_ring: bool,
    pub conjugated: bool,
    pub rotatable: bool,
    /// 1, 2 or 3; set by kekulization for aromatic bonds, mirrors `order`
    /// otherwise.
    pub kekulized_order: u8,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.src == atom {
            self.dst
        } else {
            self.src
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Minimal cycle basis, each ring a list of atom indices in cycle order.
    pub rings: Vec<Vec<usize>>,
    /// Count of disconnected fragments.
    pub components: usize,
    /// Stereo markers consumed and discarded during parsing.
    pub stereo_tokens: usize,
}

impl Molecule {
    /// Parse and fully perceive a SMILES string.
    pub fn from_smiles(text: &str) -> Result<Molecule, ChemError> {
        let mut mol = parse_smiles(text)?;
        mol.components = components(&mol);
        mol.rings = perceive_rings(&mol);
        mark_ring_bonds(&mut mol);
        kekulize(&mut mol)?;
        assign_implicit_hydrogens(&mut mol)?;
        perceive_bond_properties(&mut mol);
        Ok(mol)
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Bond indices incident to an atom.
    pub fn bonds_of(&self, atom: usize) -> Vec<usize> {
        self.bonds
            .iter()
            .enumerate()
            .filter(|(_, b)| b.src == atom || b.dst == atom)
            .map(|(i, _)| i)
            .collect()
    }

    /// Heavy-neighbor degree (explicit bonds only).
    pub fn degree(&self, atom: usize) -> usize {
        self.bonds
            .iter()
            .filter(|b| b.src == atom || b.dst == atom)
            .count()
    }

    /// Smallest perceived ring size containing the atom.
    pub fn smallest_ring_size_atom(&self, atom: usize) -> Option<usize> {
        self.rings
            .iter()
            .filter(|r| r.contains(&atom))
            .map(Vec::len)
            .min()
    }

    /// Smallest perceived ring size containing the bond.
    pub fn smallest_ring_size_bond(&self, bond: &Bond) -> Option<usize> {
        self.rings
            .iter()
            .filter(|r| ring_has_bond(r, bond.src, bond.dst))
            .map(Vec::len)
            .min()
    }

    /// Hill-order molecular formula, counting implicit and explicit hydrogens.
    pub fn molecular_formula(&self) -> String {
        use std::collections::BTreeMap;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut h_total = 0usize;
        for a in &self.atoms {
            if a.element == Element::H {
                h_total += 1;
            } else {
                *counts.entry(a.element.symbol().to_string()).or_default() += 1;
            }
            h_total += a.total_h() as usize;
        }
        let mut out = String::new();
        let mut write = |sym: &str, n: usize| {
            if n == 1 {
                out.push_str(sym);
            } else if n > 1 {
                out.push_str(&format!("{sym}{n}"));
            }
        };
        if let Some(&c) = counts.get("C") {
            write("C", c);
            write("H", h_total);
            for (sym, &n) in &counts {
                if sym != "C" {
                    write(sym, n);
                }
            }
        } else {
            write("H", h_total);
            for (sym, &n) in &counts {
                write(sym, n);
            }
        }
        out
    }
}

fn ring_has_bond(ring: &[usize], a: usize, b: usize) -> bool {
    let n = ring.len();
    (0..n).any(|i| {
        let (u, v) = (ring[i], ring[(i + 1) % n]);
        (u == a && v == b) || (u == b && v == a)
    })
}

/// Count connected fragments.
pub fn components(mol: &Molecule) -> usize {
    let n = mol.atoms.len();
    let mut seen = vec![false; n];
    let mut adj = vec![Vec::new(); n];
    for b in &mol.bonds {
        adj[b.src].push(b.dst);
        adj[b.dst].push(b.src);
    }
    let mut count = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            if seen[u] {
                continue;
            }
            seen[u] = true;
            stack.extend(adj[u].iter().copied().filter(|&v| !seen[v]));
        }
    }
    count
}

/// A bond is in a ring iff it is not a bridge.
fn mark_ring_bonds(mol: &mut Molecule) {
    let bridges = bridges(mol);
    for (i, b) in mol.bonds.iter_mut().enumerate() {
        b.in_ring = !bridges[i];
    }
}

/// Bridge detection via DFS low-link.
fn bridges(mol: &Molecule) -> Vec<bool> {
    let n = mol.atoms.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n]; // (neighbor, bond idx)
    for (i, b) in mol.bonds.iter().enumerate() {
        adj[b.src].push((b.dst, i));
        adj[b.dst].push((b.src, i));
    }
    let mut is_bridge = vec![false; mol.bonds.len()];
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0usize;
    // Iterative DFS to avoid recursion limits on long chains.
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)]; // (node, parent bond, child ptr)
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        loop {
            let Some(&(u, pbond, ptr)) = stack.last() else { break };
            if ptr < adj[u].len() {
                stack.last_mut().unwrap().2 += 1;
                let (v, bidx) = adj[u][ptr];
                if bidx == pbond {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, bidx, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        is_bridge[pbond] = true;
                    }
                }
            }
        }
    }
    is_bridge
}
