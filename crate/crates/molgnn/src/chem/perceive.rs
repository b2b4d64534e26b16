//! Valence bookkeeping and derived bond properties.

use super::{BondOrder, ChemError, Element, Molecule};

/// Admissible valences for an element at a formal charge, smallest first.
/// None for elements outside the working set (no valence model).
///
/// Charge handling: group-15/16 elements shift by the charge (N+ -> 4,
/// O- -> 1); carbon and boron lose a bonding slot in either direction.
pub fn admissible_valences(element: &Element, charge: i8) -> Option<Vec<u32>> {
    let c = charge as i32;
    let base: Vec<i32> = match element {
        Element::H => vec![1 - c.abs()],
        Element::B => vec![3 - c.abs()],
        Element::C => vec![4 - c.abs()],
        Element::N => vec![3 + c],
        Element::O => vec![2 + c],
        Element::P => vec![3 + c, 5 + c],
        Element::S => vec![2 + c, 4 + c, 6 + c],
        Element::F | Element::Cl | Element::Br | Element::I => vec![1 + c],
        Element::Other(_) => return None,
    };
    Some(base.into_iter().map(|v| v.max(0) as u32).collect())
}

/// Sum of kekulized bond orders at an atom.
fn bond_order_sum(mol: &Molecule, atom: usize) -> u32 {
    mol.bonds
        .iter()
        .filter(|b| b.src == atom || b.dst == atom)
        .map(|b| b.kekulized_order as u32)
        .sum()
}

/// Fill `implicit_h` and `radical_electrons`. Requires kekulized orders.
pub fn assign_implicit_hydrogens(mol: &mut Molecule) -> Result<(), ChemError> {
    for i in 0..mol.atoms.len() {
        let sum = bond_order_sum(mol, i);
        let atom = &mol.atoms[i];
        let valences = admissible_valences(&atom.element, atom.formal_charge);
        match atom.explicit_h {
            Some(h) => {
                // Bracket atoms take their hydrogen count verbatim; leftover
                // valence on neutral atoms becomes radical electrons.
                let atom = &mut mol.atoms[i];
                atom.implicit_h = 0;
                atom.radical_electrons = match (&valences, atom.formal_charge) {
                    (Some(vals), 0) => {
                        let occupied = sum + h as u32;
                        let target = vals
                            .iter()
                            .copied()
                            .find(|&v| v >= occupied)
                            .unwrap_or_else(|| *vals.last().unwrap());
                        target.saturating_sub(occupied) as u8
                    }
                    _ => 0,
                };
            }
            None => {
                let Some(vals) = valences else {
                    mol.atoms[i].implicit_h = 0;
                    continue;
                };
                let max = *vals.last().unwrap();
                if sum > max {
                    return Err(ChemError::ValenceViolation(i, sum, max));
                }
                let target = vals.iter().copied().find(|&v| v >= sum).unwrap();
                mol.atoms[i].implicit_h = (target - sum) as u8;
                mol.atoms[i].radical_electrons = 0;
            }
        }
    }
    Ok(())
}

/// Set `conjugated` and `rotatable` on every bond. Requires rings and
/// kekulization.
pub fn perceive_bond_properties(mol: &mut Molecule) {
    let n = mol.atoms.len();
    // Per atom: does it participate in any double/triple/aromatic bond?
    let mut multiple_count = vec![0usize; n];
    for b in &mol.bonds {
        if b.order.is_multiple() {
            multiple_count[b.src] += 1;
            multiple_count[b.dst] += 1;
        }
    }
    let degrees: Vec<usize> = (0..n).map(|i| mol.degree(i)).collect();
    for i in 0..mol.bonds.len() {
        let b = &mol.bonds[i];
        let conjugated = match b.order {
            BondOrder::Aromatic => true,
            BondOrder::Single => multiple_count[b.src] >= 1 && multiple_count[b.dst] >= 1,
            BondOrder::Double | BondOrder::Triple => {
                // Adjacent to another multiple bond through either endpoint.
                multiple_count[b.src] >= 2 || multiple_count[b.dst] >= 2
            }
        };
        let rotatable = b.order == BondOrder::Single
            && !b.in_ring
            && degrees[b.src] >= 2
            && degrees[b.dst] >= 2;
        let b = &mut mol.bonds[i];
        b.conjugated = conjugated;
        b.rotatable = rotatable;
    }
}
