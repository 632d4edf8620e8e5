//! Canonical labeling by iterative color refinement with exhaustive
//! individualization of the first non-singleton cell.
//!
//! Refinement is defined purely in terms of labels and colors, never node
//! indices, so the set of leaves reached by the search is an isomorphism
//! invariant and the lexicographically smallest leaf serialization is a
//! canonical form.

use super::MolGraph;

/// Serialized isomorphism class of a labeled graph (elements + bond orders).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalForm(Vec<u8>);

impl CanonicalForm {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// Canonical node order: position `k` holds the original index of the node
/// placed `k`-th by the canonical labeling.
pub fn canonical_order(g: &MolGraph) -> Vec<usize> {
    search(g).1
}

pub fn canonical_form(g: &MolGraph) -> CanonicalForm {
    CanonicalForm(search(g).0)
}

fn search(g: &MolGraph) -> (Vec<u8>, Vec<usize>) {
    let n = g.n();
    if n == 0 {
        return (vec![0, 0], Vec::new());
    }
    let keys: Vec<(u8, usize, Vec<u32>)> = (0..n)
        .map(|i| {
            let mut orders: Vec<u32> = g.neighbors(i).map(|(_, b)| b.order()).collect();
            orders.sort_unstable();
            (g.atom(i).code(), g.degree(i), orders)
        })
        .collect();
    let colors = refine(g, ranks(&keys));
    let mut best: Option<(Vec<u8>, Vec<usize>)> = None;
    descend(g, colors, &mut best);
    best.expect("search visits at least one leaf")
}

/// Dense ranks: each node gets the number of nodes with a strictly smaller key.
fn ranks<K: Ord>(keys: &[K]) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut out = vec![0u32; keys.len()];
    for (pos, &i) in idx.iter().enumerate() {
        out[i] = if pos > 0 && keys[idx[pos - 1]] == keys[i] {
            out[idx[pos - 1]]
        } else {
            pos as u32
        };
    }
    out
}

fn cell_count(colors: &[u32]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

fn refine(g: &MolGraph, mut colors: Vec<u32>) -> Vec<u32> {
    let mut cells = cell_count(&colors);
    loop {
        let keys: Vec<(u32, Vec<(u32, u32)>)> = (0..g.n())
            .map(|i| {
                let mut nb: Vec<(u32, u32)> =
                    g.neighbors(i).map(|(j, b)| (b.order(), colors[j])).collect();
                nb.sort_unstable();
                (colors[i], nb)
            })
            .collect();
        let next = ranks(&keys);
        let next_cells = cell_count(&next);
        if next_cells == cells {
            return colors;
        }
        colors = next;
        cells = next_cells;
    }
}

fn descend(g: &MolGraph, colors: Vec<u32>, best: &mut Option<(Vec<u8>, Vec<usize>)>) {
    let n = g.n();
    // Smallest color whose cell has more than one member.
    let mut target: Option<u32> = None;
    let mut counts = vec![0usize; n];
    for &c in &colors {
        counts[c as usize] += 1;
    }
    for (c, &k) in counts.iter().enumerate() {
        if k > 1 {
            target = Some(c as u32);
            break;
        }
    }
    match target {
        None => {
            let mut order = vec![0usize; n];
            for (i, &c) in colors.iter().enumerate() {
                order[c as usize] = i;
            }
            let bytes = serialize(g, &order);
            if best.as_ref().is_none_or(|(b, _)| bytes < *b) {
                *best = Some((bytes, order));
            }
        }
        Some(cell) => {
            for v in (0..n).filter(|&i| colors[i] == cell) {
                let keys: Vec<(u32, bool)> =
                    (0..n).map(|i| (colors[i], colors[i] == cell && i != v)).collect();
                descend(g, refine(g, ranks(&keys)), best);
            }
        }
    }
}

fn serialize(g: &MolGraph, order: &[usize]) -> Vec<u8> {
    let n = order.len();
    let mut out = Vec::with_capacity(2 + n + n * (n - 1) / 2);
    out.extend_from_slice(&(n as u16).to_be_bytes());
    out.extend(order.iter().map(|&i| g.atom(i).code()));
    for a in 0..n {
        for b in a + 1..n {
            out.push(g.bond(order[a], order[b]).index() as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_molecule;

    fn form(s: &str) -> CanonicalForm {
        canonical_form(&parse_molecule(s).unwrap().graph)
    }

    #[test]
    fn distinguishes_ethanol_from_dimethyl_ether() {
        assert_ne!(form("CCO"), form("COC"));
        assert_eq!(form("OCC"), form("CCO"));
    }

    #[test]
    fn ring_written_two_ways() {
        assert_eq!(form("C1CCC1C"), form("CC1CCC1"));
        assert_eq!(form("C1=CC=CC=C1"), form("C=1C=CC=CC=1"));
        assert_ne!(form("C1CCCCC1"), form("C1CCC1.C1CC1"));
    }

    #[test]
    fn empty_graph_has_a_form() {
        assert_eq!(canonical_form(&MolGraph::new()), canonical_form(&MolGraph::new()));
    }
}
