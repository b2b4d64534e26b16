//! Minimal cycle basis perception.
//!
//! Horton-style: collect the shortest cycle through every edge (BFS in the
//! graph with that edge removed), sort candidates by length, and greedily
//! keep those independent over GF(2) in edge space until the basis has
//! `bonds - atoms + components` cycles.

use super::{components, Molecule};

pub fn perceive_rings(mol: &Molecule) -> Vec<Vec<usize>> {
    let n = mol.atoms.len();
    let m = mol.bonds.len();
    if m == 0 || n == 0 {
        return Vec::new();
    }
    let dim = (m + components(mol)).saturating_sub(n);
    if dim == 0 {
        return Vec::new();
    }
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, b) in mol.bonds.iter().enumerate() {
        adj[b.src].push((b.dst, i));
        adj[b.dst].push((b.src, i));
    }
    let bond_index = |a: usize, b: usize| -> usize {
        adj[a].iter().find(|&&(v, _)| v == b).map(|&(_, i)| i).unwrap()
    };

    // Candidate cycles: shortest path src->dst avoiding the edge itself,
    // closed by the edge.
    let mut candidates: Vec<Vec<usize>> = Vec::new();
    for (skip, b) in mol.bonds.iter().enumerate() {
        if let Some(path) = shortest_path(&adj, b.src, b.dst, skip) {
            candidates.push(path); // atom cycle; closing edge implied
        }
    }
    // Deterministic order: by length, then lexicographic atom list.
    candidates.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    candidates.dedup();

    // Pivot bit -> reduced row. A candidate is independent iff it reduces
    // to a nonzero row.
    let mut pivots: std::collections::HashMap<usize, Vec<u64>> = std::collections::HashMap::new();
    let mut rings: Vec<Vec<usize>> = Vec::new();
    let words = m.div_ceil(64);
    for cand in candidates {
        if rings.len() == dim {
            break;
        }
        let mut row = vec![0u64; words];
        let k = cand.len();
        for i in 0..k {
            let e = bond_index(cand[i], cand[(i + 1) % k]);
            row[e / 64] ^= 1 << (e % 64);
        }
        while let Some(p) = leading_bit(&row) {
            match pivots.get(&p) {
                Some(basis_row) => {
                    for (r, b) in row.iter_mut().zip(basis_row) {
                        *r ^= b;
                    }
                }
                None => {
                    pivots.insert(p, row);
                    rings.push(cand);
                    break;
                }
            }
        }
    }
    rings
}

fn leading_bit(row: &[u64]) -> Option<usize> {
    for (w, &bits) in row.iter().enumerate() {
        if bits != 0 {
            return Some(w * 64 + bits.trailing_zeros() as usize);
        }
    }
    None
}

/// BFS shortest path between two nodes, skipping one bond; returns the atom
/// sequence from `from` to `to` inclusive.
fn shortest_path(
    adj: &[Vec<(usize, usize)>],
    from: usize,
    to: usize,
    skip_bond: usize,
) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut prev = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(from);
    seen[from] = true;
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &(v, e) in &adj[u] {
            if e == skip_bond || seen[v] {
                continue;
            }
            seen[v] = true;
            prev[v] = u;
            queue.push_back(v);
        }
    }
    if !seen[to] {
        return None;
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    Some(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    fn rings_of(s: &str) -> Vec<Vec<usize>> {
        let mol = parse_smiles(s).unwrap();
        let mut rings = perceive_rings(&mol);
        for r in &mut rings {
            r.sort_unstable();
        }
        rings.sort();
        rings
    }

    #[test]
    fn benzene_single_ring() {
        let rings = rings_of("c1ccccc1");
        assert_eq!(rings.len(), 1);
        assert_eq!(rings[0].len(), 6);
    }

    #[test]
    fn cyclopropane() {
        let rings = rings_of("C1CC1");
        assert_eq!(rings.len(), 1);
        assert_eq!(rings[0].len(), 3);
    }

    #[test]
    fn acyclic_is_empty() {
        assert!(rings_of("CCO").is_empty());
    }

    #[test]
    fn naphthalene_two_hexagons() {
        // Oracle: brute-force enumeration of all simple cycles of naphthalene
        // gives sizes {6, 6, 10}; a minimal basis is the two hexagons.
        let rings = rings_of("c1ccc2ccccc2c1");
        assert_eq!(rings.len(), 2);
        assert!(rings.iter().all(|r| r.len() == 6));
    }

    #[test]
    fn basis_size_matches_cycle_space() {
        for (s, expect) in [
            ("C1CC1", 1),
            ("c1ccc2ccccc2c1", 2),
            ("C1CC12CC2", 2),
            ("C.C", 0),
            ("C1CC1.C1CC1", 2),
        ] {
            let mol = parse_smiles(s).unwrap();
            let dim = mol.bonds.len() + components(&mol) - mol.atoms.len();
            assert_eq!(perceive_rings(&mol).len(), dim, "{s}");
            assert_eq!(dim, expect, "{s}");
        }
    }
}
