//! Kekulized bond-order assignment for aromatic systems.
//!
//! Aromatic atoms whose valence is not already satisfied by their sigma
//! framework must receive exactly one double bond. A backtracking perfect
//! matching over the aromatic bonds assigns those doubles; unmatched
//! aromatic bonds become kekulized singles. Each connected aromatic system
//! must additionally carry 4n+2 pi electrons.

use super::{BondOrder, ChemError, Element, Molecule};
use crate::chem::perceive::admissible_valences;

pub fn kekulize(mol: &mut Molecule) -> Result<(), ChemError> {
    let n = mol.atoms.len();
    if !mol.atoms.iter().any(|a| a.aromatic) {
        return Ok(());
    }
    // An aromatic bond between non-aromatic context is already rejected by
    // featurization; here we only need per-atom sigma saturation.
    let mut sigma = vec![0u32; n]; // bond order sum counting aromatic as 1
    for b in &mol.bonds {
        sigma[b.src] += b.order.order_value();
        sigma[b.dst] += b.order.order_value();
    }
    let needs_double: Vec<bool> = mol
        .atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if !a.aromatic {
                return false;
            }
            let occupied = sigma[i] + a.explicit_h.unwrap_or(0) as u32;
            // A deficit against the smallest valence the sigma framework
            // fits into means the atom must take one ring double bond.
            match admissible_valences(&a.element, a.formal_charge) {
                Some(vals) => {
                    let target = vals
                        .iter()
                        .copied()
                        .find(|&v| v >= occupied)
                        .unwrap_or_else(|| *vals.last().unwrap());
                    target > occupied
                }
                None => false,
            }
        })
        .collect();

    // Aromatic-bond adjacency restricted to atoms that need a double.
    let mut arom_adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, b) in mol.bonds.iter().enumerate() {
        if b.order == BondOrder::Aromatic {
            arom_adj[b.src].push((b.dst, i));
            arom_adj[b.dst].push((b.src, i));
        }
    }
    let mut matched_with = vec![usize::MAX; n];
    let pending: Vec<usize> = (0..n).filter(|&i| needs_double[i]).collect();
    if !match_atoms(&pending, 0, &arom_adj, &needs_double, &mut matched_with) {
        return Err(ChemError::KekulizationFailure(
            "no alternating double-bond assignment exists".into(),
        ));
    }
    for b in &mut mol.bonds {
        if b.order == BondOrder::Aromatic {
            b.kekulized_order = if matched_with[b.src] == b.dst { 2 } else { 1 };
        }
    }
    check_pi_electrons(mol, &matched_with)?;
    Ok(())
}

fn match_atoms(
    pending: &[usize],
    pos: usize,
    arom_adj: &[Vec<(usize, usize)>],
    needs: &[bool],
    matched: &mut [usize],
) -> bool {
    let Some(&u) = pending.get(pos) else { return true };
    if matched[u] != usize::MAX {
        return match_atoms(pending, pos + 1, arom_adj, needs, matched);
    }
    for &(v, _) in &arom_adj[u] {
        if needs[v] && matched[v] == usize::MAX {
            matched[u] = v;
            matched[v] = u;
            if match_atoms(pending, pos + 1, arom_adj, needs, matched) {
                return true;
            }
            matched[u] = usize::MAX;
            matched[v] = usize::MAX;
        }
    }
    false
}

/// Every connected aromatic system must hold 4n+2 pi electrons: one per
/// double-bonded atom, two per lone-pair donor, zero for atoms whose extra
/// valence is consumed by an exocyclic multiple bond.
fn check_pi_electrons(mol: &Molecule, matched: &[usize]) -> Result<(), ChemError> {
    let n = mol.atoms.len();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0usize;
    for start in 0..n {
        if !mol.atoms[start].aromatic || comp[start] != usize::MAX {
            continue;
        }
        let id = next;
        next += 1;
        let mut stack = vec![start];
        comp[start] = id;
        while let Some(u) = stack.pop() {
            for b in &mol.bonds {
                if b.order != BondOrder::Aromatic {
                    continue;
                }
                let v = if b.src == u {
                    b.dst
                } else if b.dst == u {
                    b.src
                } else {
                    continue;
                };
                if comp[v] == usize::MAX {
                    comp[v] = id;
                    stack.push(v);
                }
            }
        }
    }
    let mut pi = vec![0u32; next];
    for (i, a) in mol.atoms.iter().enumerate() {
        let Some(c) = comp.get(i).copied().filter(|&c| c != usize::MAX) else {
            continue;
        };
        if matched[i] != usize::MAX {
            pi[c] += 1;
        } else if has_exocyclic_multiple(mol, i) {
            // pi electrons tied up outside the ring
        } else if matches!(
            a.element,
            Element::N | Element::O | Element::S | Element::P
        ) || matches!(&a.element, Element::Other(_))
            || a.formal_charge < 0
        {
            pi[c] += 2;
        }
    }
    for (c, &count) in pi.iter().enumerate() {
        if count < 2 || (count - 2) % 4 != 0 {
            return Err(ChemError::KekulizationFailure(format!(
                "aromatic system {c} has {count} pi electrons"
            )));
        }
    }
    Ok(())
}

fn has_exocyclic_multiple(mol: &Molecule, atom: usize) -> bool {
    mol.bonds.iter().any(|b| {
        (b.src == atom || b.dst == atom)
            && matches!(b.order, BondOrder::Double | BondOrder::Triple)
    })
}
