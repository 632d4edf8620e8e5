//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;

use retrodiff::molgraph::{Atom, AtomVocab, BondOrder, Element, MolGraph, NodeTag};
use retrodiff::noise::FrozenMask;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

/// Carbon, nitrogen and oxygen.
pub fn small_vocab() -> AtomVocab {
    AtomVocab::new([Element::C, Element::N, Element::O])
}

/// The elements of the toy corpus.
pub fn toy_vocab() -> AtomVocab {
    AtomVocab::new([Element::C, Element::N, Element::O, Element::S, Element::Cl, Element::Br])
}

/// Three product atoms, then two group atoms and a dummy slot.
pub fn test_graph() -> MolGraph {
    let c = Atom::Real(Element::C);
    let mut g = MolGraph::from_parts(
        &[c, c, Atom::Real(Element::O), Atom::Real(Element::N), Atom::Dummy, c],
        &[(0, 1, BondOrder::Single), (1, 2, BondOrder::Double), (3, 5, BondOrder::Single), (3, 0, BondOrder::Single)],
        NodeTag::Product,
    )
    .unwrap();
    for i in 3..6 {
        g.set_tag(i, NodeTag::Group);
    }
    g
}

/// A 2-methylbutanoic acid product with a three-slot group attached at the
/// hydroxyl oxygen; its Laplacian has a simple low spectrum.
pub fn equivariance_graph() -> MolGraph {
    let (c, o, n) = (Atom::Real(Element::C), Atom::Real(Element::O), Atom::Real(Element::N));
    let mut g = MolGraph::from_parts(
        &[c, c, c, c, c, o, o, c, n, Atom::Dummy],
        &[
            (0, 1, BondOrder::Single),
            (1, 2, BondOrder::Single),
            (2, 3, BondOrder::Single),
            (2, 4, BondOrder::Single),
            (4, 5, BondOrder::Double),
            (4, 6, BondOrder::Single),
            (7, 8, BondOrder::Single),
            (7, 6, BondOrder::Single),
        ],
        NodeTag::Product,
    )
    .unwrap();
    for i in 7..10 {
        g.set_tag(i, NodeTag::Group);
    }
    g
}

/// Every node and edge from `frozen` onward is supervised.
pub fn free_after(n: usize, frozen: usize) -> FrozenMask {
    let mut mask = FrozenMask::all(n);
    for i in frozen..n {
        mask.set_node(i, false);
        for j in 0..n {
            if j != i {
                mask.set_edge(i, j, false);
            }
        }
    }
    mask
}

/// All-carbon, single-bonded graph with the given adjacency.
pub fn carbon_graph(adj: &[Vec<bool>]) -> MolGraph {
    let n = adj.len();
    let mut g = MolGraph::from_atoms(vec![Atom::Real(Element::C); n], NodeTag::Product);
    for i in 0..n {
        for j in i + 1..n {
            if adj[i][j] {
                g.set_bond(i, j, BondOrder::Single);
            }
        }
    }
    g
}

pub fn is_connected(adj: &[Vec<bool>]) -> bool {
    let n = adj.len();
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for v in 0..n {
            if adj[u][v] && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Every connected labeled simple graph on `n` nodes.
pub fn connected_graphs(n: usize) -> Vec<Vec<Vec<bool>>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut out = Vec::new();
    for mask in 0u64..(1 << pairs.len()) {
        let mut adj = vec![vec![false; n]; n];
        for (k, &(i, j)) in pairs.iter().enumerate() {
            if mask >> k & 1 == 1 {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
        if is_connected(&adj) {
            out.push(adj);
        }
    }
    out
}
