//! SMILES tokenizer and parser.
//!
//! Supported grammar: organic-subset atoms (B, C, N, O, P, S, F, Cl, Br, I
//! and aromatic b, c, n, o, p, s), bracket atoms with isotope / symbol /
//! chirality / hydrogen count / charge / atom class, bond symbols `- = # :`,
//! branches, ring closures (digits and `%nn`), dot disconnect. Stereo
//! markers (`/ \ @ @@`) are consumed and counted, not interpreted.

use super::{Atom, Bond, BondOrder, ChemError, Element, Molecule};

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    text: &'a str,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    // (atom index, explicit bond symbol, position) per open ring number
    ring_open: std::collections::HashMap<u16, (usize, Option<BondOrder>, usize)>,
    branch_stack: Vec<Option<usize>>,
    prev: Option<usize>,
    pending_bond: Option<BondOrder>,
    stereo_tokens: usize,
}

pub fn parse_smiles(text: &str) -> Result<Molecule, ChemError> {
    if text.trim().is_empty() {
        return Err(ChemError::EmptyInput);
    }
    let mut p = Parser {
        chars: text.trim().chars().collect(),
        pos: 0,
        text,
        atoms: Vec::new(),
        bonds: Vec::new(),
        ring_open: std::collections::HashMap::new(),
        branch_stack: Vec::new(),
        prev: None,
        pending_bond: None,
        stereo_tokens: 0,
    };
    p.run()?;
    Ok(Molecule {
        atoms: p.atoms,
        bonds: p.bonds,
        rings: Vec::new(),
        components: 0,
        stereo_tokens: p.stereo_tokens,
    })
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn run(&mut self) -> Result<(), ChemError> {
        while let Some(c) = self.peek() {
            match c {
                'A'..='Z' | 'b' | 'c' | 'n' | 'o' | 'p' | 's' => self.organic_atom()?,
                '[' => self.bracket_atom()?,
                '-' => {
                    self.bump();
                    self.set_bond(BondOrder::Single)?;
                }
                '=' => {
                    self.bump();
                    self.set_bond(BondOrder::Double)?;
                }
                '#' => {
                    self.bump();
                    self.set_bond(BondOrder::Triple)?;
                }
                ':' => {
                    self.bump();
                    self.set_bond(BondOrder::Aromatic)?;
                }
                '/' | '\\' => {
                    self.bump();
                    self.stereo_tokens += 1;
                    self.set_bond(BondOrder::Single)?;
                }
                '(' => {
                    self.bump();
                    self.branch_stack.push(self.prev);
                }
                ')' => {
                    self.bump();
                    self.prev = self
                        .branch_stack
                        .pop()
                        .ok_or(ChemError::UnbalancedParenthesis(self.pos - 1))?;
                    self.pending_bond = None;
                }
                '.' => {
                    self.bump();
                    if self.pending_bond.is_some() {
                        return Err(ChemError::UnknownAtomToken(self.pos, ".".into()));
                    }
                    self.prev = None;
                }
                '0'..='9' => {
                    let d = self.bump().unwrap().to_digit(10).unwrap() as u16;
                    self.ring_closure(d)?;
                }
                '%' => {
                    self.bump();
                    let a = self.digit()?;
                    let b = self.digit()?;
                    self.ring_closure((a * 10 + b) as u16)?;
                }
                other => {
                    return Err(ChemError::UnknownAtomToken(self.pos, other.to_string()));
                }
            }
        }
        if !self.branch_stack.is_empty() {
            return Err(ChemError::UnbalancedParenthesis(self.pos));
        }
        if let Some(num) = self.ring_open.keys().min() {
            return Err(ChemError::UnclosedRing(num.to_string()));
        }
        if self.pending_bond.is_some() {
            return Err(ChemError::UnknownAtomToken(
                self.pos,
                "dangling bond symbol".into(),
            ));
        }
        let _ = self.text;
        Ok(())
    }

    fn digit(&mut self) -> Result<u32, ChemError> {
        match self.bump() {
            Some(c) if c.is_ascii_digit() => Ok(c.to_digit(10).unwrap()),
            _ => Err(ChemError::InvalidRingClosure(self.pos)),
        }
    }

    fn set_bond(&mut self, order: BondOrder) -> Result<(), ChemError> {
        if self.pending_bond.is_some() {
            return Err(ChemError::UnknownAtomToken(
                self.pos - 1,
                "double bond symbol".into(),
            ));
        }
        self.pending_bond = Some(order);
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<(), ChemError> {
        let start = self.pos;
        let c = self.bump().unwrap();
        let (element, aromatic) = match c {
            'b' => (Element::B, true),
            'c' => (Element::C, true),
            'n' => (Element::N, true),
            'o' => (Element::O, true),
            'p' => (Element::P, true),
            's' => (Element::S, true),
            'B' => {
                if self.peek() == Some('r') {
                    self.bump();
                    (Element::Br, false)
                } else {
                    (Element::B, false)
                }
            }
            'C' => {
                if self.peek() == Some('l') {
                    self.bump();
                    (Element::Cl, false)
                } else {
                    (Element::C, false)
                }
            }
            'N' => (Element::N, false),
            'O' => (Element::O, false),
            'P' => (Element::P, false),
            'S' => (Element::S, false),
            'F' => (Element::F, false),
            'I' => (Element::I, false),
            other => {
                return Err(ChemError::UnknownAtomToken(start, other.to_string()));
            }
        };
        self.add_atom(Atom {
            element,
            formal_charge: 0,
            explicit_h: None,
            isotope: None,
            aromatic,
            implicit_h: 0,
            radical_electrons: 0,
            index: 0,
        })
    }

    fn bracket_atom(&mut self) -> Result<(), ChemError> {
        let start = self.pos;
        self.bump(); // '['
        let mut isotope: Option<u16> = None;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                self.bump();
                isotope = Some(isotope.unwrap_or(0) * 10 + c.to_digit(10).unwrap() as u16);
            } else {
                break;
            }
        }
        // Element symbol: uppercase + optional lowercase, or a lowercase
        // aromatic symbol (c, n, o, p, s, se, as).
        let (symbol, aromatic) = match self.peek() {
            Some(c) if c.is_ascii_uppercase() => {
                self.bump();
                let mut sym = c.to_string();
                if let Some(l) = self.peek() {
                    if l.is_ascii_lowercase() && two_letter_plausible(c, l) {
                        self.bump();
                        sym.push(l);
                    }
                }
                (sym, false)
            }
            Some(c) if c.is_ascii_lowercase() => {
                self.bump();
                let mut sym = c.to_string();
                if (c == 's' && self.peek() == Some('e')) || (c == 'a' && self.peek() == Some('s'))
                {
                    sym.push(self.bump().unwrap());
                }
                let cap = {
                    let mut chars = sym.chars();
                    let first = chars.next().unwrap().to_ascii_uppercase();
                    format!("{first}{}", chars.as_str())
                };
                (cap, true)
            }
            other => {
                return Err(ChemError::UnknownAtomToken(
                    start,
                    other.map(|c| c.to_string()).unwrap_or_default(),
                ));
            }
        };
        // Chirality markers, consumed and counted.
        while self.peek() == Some('@') {
            self.bump();
            self.stereo_tokens += 1;
        }
        // Explicit hydrogen count.
        let mut explicit_h = 0u8;
        let mut saw_h = false;
        if self.peek() == Some('H') {
            self.bump();
            saw_h = true;
            explicit_h = 1;
            if let Some(c) = self.peek() {
                if c.is_ascii_digit() {
                    self.bump();
                    explicit_h = c.to_digit(10).unwrap() as u8;
                }
            }
        }
        // Charge: +, -, ++, --, +n, -n.
        let mut charge: i8 = 0;
        while let Some(c) = self.peek() {
            match c {
                '+' | '-' => {
                    self.bump();
                    let sign = if c == '+' { 1i8 } else { -1i8 };
                    if let Some(d) = self.peek() {
                        if d.is_ascii_digit() {
                            self.bump();
                            charge += sign * d.to_digit(10).unwrap() as i8;
                            continue;
                        }
                    }
                    charge += sign;
                }
                _ => break,
            }
        }
        // Atom class, accepted and ignored.
        if self.peek() == Some(':') {
            self.bump();
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.bump();
            }
        }
        if self.bump() != Some(']') {
            return Err(ChemError::UnknownAtomToken(start, "unterminated bracket".into()));
        }
        self.add_atom(Atom {
            element: Element::from_symbol(&symbol),
            formal_charge: charge,
            explicit_h: Some(if saw_h { explicit_h } else { 0 }),
            isotope,
            aromatic,
            implicit_h: 0,
            radical_electrons: 0,
            index: 0,
        })
    }

    fn add_atom(&mut self, mut atom: Atom) -> Result<(), ChemError> {
        atom.index = self.atoms.len();
        let idx = atom.index;
        let aromatic = atom.aromatic;
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            let order = self.pending_bond.take().unwrap_or({
                if aromatic && self.atoms[prev].aromatic {
                    BondOrder::Aromatic
                } else {
                    BondOrder::Single
                }
            });
            self.push_bond(prev, idx, order)?;
        } else {
            self.pending_bond = None;
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_closure(&mut self, num: u16) -> Result<(), ChemError> {
        let here = self.prev.ok_or(ChemError::InvalidRingClosure(self.pos))?;
        let pending = self.pending_bond.take();
        if let Some((open_atom, open_bond, _)) = self.ring_open.remove(&num) {
            if open_atom == here {
                return Err(ChemError::InvalidRingClosure(self.pos));
            }
            let order = match (open_bond, pending) {
                (Some(a), Some(b)) if a != b => {
                    return Err(ChemError::InvalidRingClosure(self.pos));
                }
                (Some(a), _) => a,
                (None, Some(b)) => b,
                (None, None) => {
                    if self.atoms[open_atom].aromatic && self.atoms[here].aromatic {
                        BondOrder::Aromatic
                    } else {
                        BondOrder::Single
                    }
                }
            };
            self.push_bond(open_atom, here, order)?;
        } else {
            self.ring_open.insert(num, (here, pending, self.pos));
        }
        Ok(())
    }

    fn push_bond(&mut self, src: usize, dst: usize, order: BondOrder) -> Result<(), ChemError> {
        let dup = self
            .bonds
            .iter()
            .any(|b| (b.src == src && b.dst == dst) || (b.src == dst && b.dst == src));
        if dup {
            return Err(ChemError::InvalidRingClosure(self.pos));
        }
        self.bonds.push(Bond {
            src,
            dst,
            order,
            in_ring: false,
            conjugated: false,
            rotatable: false,
            kekulized_order: order.order_value() as u8,
        });
        Ok(())
    }
}

/// Whether an uppercase+lowercase pair forms a plausible element symbol.
fn two_letter_plausible(a: char, b: char) -> bool {
    const KNOWN: &[&str] = &[
        "He", "Li", "Be", "Ne", "Na", "Mg", "Al", "Si", "Cl", "Ar", "Ca", "Sc", "Ti", "Cr", "Mn",
        "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Zr", "Nb",
        "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "Xe", "Cs", "Ba", "Pt",
        "Au", "Hg", "Tl", "Pb", "Bi",
    ];
    let sym = format!("{a}{b}");
    KNOWN.contains(&sym.as_str())
}
