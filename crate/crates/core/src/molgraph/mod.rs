//! Molecular graph data model.
//!
//! A [`MolGraph`] stores one categorical label per node ([`Atom`], with a
//! dummy slot) and one per unordered node pair ([`BondOrder`], with `None`
//! as the empty slot). Hydrogens are never materialized; any valence slack
//! is assumed to be filled by implicit hydrogens.
//!
//! The same type carries products, external groups, spliced conditioning
//! graphs and the noisy intermediate states of the diffusion process.

mod canon;
mod element;
mod smiles;

pub use canon::{canonical_form, canonical_order, CanonicalForm};
pub use element::{Atom, BondOrder, Element};
pub use smiles::{parse_molecule, write_mapped, write_molecule, ParsedMolecule, SmilesError};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("node index {index} out of range for graph with {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },
    #[error("self loop on node {0}")]
    SelfLoop(usize),
    #[error("cross edge ({0}, {1}) duplicates an existing edge")]
    DuplicateEdge(usize, usize),
    #[error("graph contains dummy nodes")]
    DummyNodes,
    #[error("more than nine ring bonds open at once")]
    RingLimit,
}

/// Role of a node inside a spliced graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum NodeTag {
    #[default]
    Product,
    Group,
    Dummy,
}

/// Ordered atom categories seen by the denoiser; index 0 is always the dummy slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomVocab {
    atoms: Vec<Atom>,
}

impl AtomVocab {
    /// Builds a vocabulary from real elements. Duplicates are removed and the
    /// dummy slot is prepended; element order is preserved.
    pub fn new(elements: impl IntoIterator<Item = Element>) -> Self {
        let mut atoms = vec![Atom::Dummy];
        for e in elements {
            if !atoms.contains(&Atom::Real(e)) {
                atoms.push(Atom::Real(e));
            }
        }
        AtomVocab { atoms }
    }

    /// The full fixed element table.
    pub fn full() -> Self {
        AtomVocab::new(Element::ALL)
    }

    pub fn from_symbols<S: AsRef<str>>(symbols: &[S]) -> Option<Self> {
        let mut it = symbols.iter();
        if it.next()?.as_ref() != "*" {
            return None;
        }
        let mut elements = Vec::new();
        for s in it {
            elements.push(Element::from_symbol(s.as_ref())?);
        }
        let vocab = AtomVocab::new(elements.iter().copied());
        (vocab.len() == symbols.len()).then_some(vocab)
    }

    /// Total width of a node one-hot, dummy included.
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.len() <= 1
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, index: usize) -> Atom {
        self.atoms[index]
    }

    pub fn index_of(&self, atom: Atom) -> Option<usize> {
        self.atoms.iter().position(|&a| a == atom)
    }

    pub fn symbols(&self) -> Vec<String> {
        self.atoms.iter().map(|a| a.symbol().to_string()).collect()
    }

    pub fn default_valence(&self, index: usize) -> u32 {
        self.atoms[index].element().map_or(0, Element::default_valence)
    }
}

/// Bond categories. The order set is fixed: NONE, SINGLE, DOUBLE, TRIPLE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BondVocab;

impl BondVocab {
    pub const LEN: usize = 4;

    pub fn len(&self) -> usize {
        Self::LEN
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn orders(&self) -> &'static [BondOrder; 4] {
        &BondOrder::ALL
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    tags: Vec<NodeTag>,
    // Dense n*n; writes always go through `set_bond`, which mirrors.
    bonds: Vec<BondOrder>,
}

impl MolGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_atoms(atoms: impl IntoIterator<Item = Atom>, tag: NodeTag) -> Self {
        let atoms: Vec<Atom> = atoms.into_iter().collect();
        let n = atoms.len();
        MolGraph {
            tags: vec![tag; n],
            atoms,
            bonds: vec![BondOrder::None; n * n],
        }
    }

    /// Convenience constructor for tests and generators.
    pub fn from_parts(
        atoms: &[Atom],
        bonds: &[(usize, usize, BondOrder)],
        tag: NodeTag,
    ) -> Result<Self, GraphError> {
        let mut g = MolGraph::from_atoms(atoms.iter().copied(), tag);
        for &(u, v, o) in bonds {
            g.check_pair(u, v)?;
            g.set_bond(u, v, o);
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> Atom {
        self.atoms[i]
    }

    pub fn set_atom(&mut self, i: usize, atom: Atom) {
        self.atoms[i] = atom;
    }

    pub fn tags(&self) -> &[NodeTag] {
        &self.tags
    }

    pub fn tag(&self, i: usize) -> NodeTag {
        self.tags[i]
    }

    pub fn set_tag(&mut self, i: usize, tag: NodeTag) {
        self.tags[i] = tag;
    }

    pub fn bond(&self, i: usize, j: usize) -> BondOrder {
        self.bonds[i * self.n() + j]
    }

    /// Writes both (i, j) and (j, i). Diagonal writes are ignored.
    pub fn set_bond(&mut self, i: usize, j: usize, order: BondOrder) {
        if i == j {
            return;
        }
        let n = self.n();
        self.bonds[i * n + j] = order;
        self.bonds[j * n + i] = order;
    }

    pub fn add_atom(&mut self, atom: Atom, tag: NodeTag) -> usize {
        let n = self.n();
        let mut bonds = vec![BondOrder::None; (n + 1) * (n + 1)];
        for i in 0..n {
            bonds[i * (n + 1)..i * (n + 1) + n].copy_from_slice(&self.bonds[i * n..(i + 1) * n]);
        }
        self.bonds = bonds;
        self.atoms.push(atom);
        self.tags.push(tag);
        n
    }

    fn check_pair(&self, u: usize, v: usize) -> Result<(), GraphError> {
        let n = self.n();
        for index in [u, v] {
            if index >= n {
                return Err(GraphError::NodeOutOfRange { index, n });
            }
        }
        if u == v {
            return Err(GraphError::SelfLoop(u));
        }
        Ok(())
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, BondOrder)> + '_ {
        let n = self.n();
        self.bonds[i * n..(i + 1) * n]
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.is_none())
            .map(|(j, &b)| (j, b))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    /// Sum of incident bond orders (hydrogens excluded).
    pub fn bond_order_sum(&self, i: usize) -> u32 {
        self.neighbors(i).map(|(_, b)| b.order()).sum()
    }

    /// Upper-triangle bonds `(i, j, order)` with `i < j`.
    pub fn bonds(&self) -> impl Iterator<Item = (usize, usize, BondOrder)> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| {
            (i + 1..n).filter_map(move |j| {
                let b = self.bond(i, j);
                (!b.is_none()).then_some((i, j, b))
            })
        })
    }

    pub fn bond_count(&self) -> usize {
        self.bonds().count()
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]` of the result.
    pub fn permute(&self, perm: &[usize]) -> MolGraph {
        let n = self.n();
        assert_eq!(perm.len(), n, "permutation length");
        let mut out = MolGraph::from_atoms(vec![Atom::Dummy; n], NodeTag::Product);
        for i in 0..n {
            out.atoms[perm[i]] = self.atoms[i];
            out.tags[perm[i]] = self.tags[i];
        }
        for (i, j, b) in self.bonds() {
            out.set_bond(perm[i], perm[j], b);
        }
        out
    }

    /// Induced subgraph over `nodes`, in the given order.
    pub fn subgraph(&self, nodes: &[usize]) -> MolGraph {
        let mut out = MolGraph::from_atoms(nodes.iter().map(|&i| self.atoms[i]), NodeTag::Product);
        for (a, &i) in nodes.iter().enumerate() {
            out.tags[a] = self.tags[i];
            for (b, &j) in nodes.iter().enumerate().skip(a + 1) {
                out.set_bond(a, b, self.bond(i, j));
            }
        }
        out
    }

    /// Connected components (by non-NONE edges), each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            let mut comp = vec![s];
            seen[s] = true;
            let mut head = 0;
            while head < comp.len() {
                let u = comp[head];
                head += 1;
                for (v, _) in self.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn has_dummies(&self) -> bool {
        self.atoms.iter().any(|a| a.is_dummy())
    }

    /// Row-major `n x width` one-hot of node categories under `vocab`.
    /// Atoms absent from the vocabulary map to the dummy column.
    pub fn node_one_hot(&self, vocab: &AtomVocab) -> Vec<f64> {
        let w = vocab.len();
        let mut out = vec![0.0; self.n() * w];
        for (i, &a) in self.atoms.iter().enumerate() {
            out[i * w + vocab.index_of(a).unwrap_or(0)] = 1.0;
        }
        out
    }

    /// Row-major `n*n x 4` one-hot of edge categories; the diagonal is NONE.
    pub fn edge_one_hot(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.bonds.len() * BondVocab::LEN];
        for (p, b) in self.bonds.iter().enumerate() {
            out[p * BondVocab::LEN + b.index()] = 1.0;
        }
        out
    }
}

/// Disjoint union of `parts` plus extra edges in the concatenated index space.
pub fn splice(
    parts: &[&MolGraph],
    cross_edges: &[(usize, usize, BondOrder)],
) -> Result<MolGraph, GraphError> {
    let mut atoms = Vec::new();
    let mut tags = Vec::new();
    for p in parts {
        atoms.extend_from_slice(&p.atoms);
        tags.extend_from_slice(&p.tags);
    }
    let mut g = MolGraph::from_atoms(atoms, NodeTag::Product);
    g.tags = tags;
    let mut offset = 0;
    for p in parts {
        for (i, j, b) in p.bonds() {
            g.set_bond(offset + i, offset + j, b);
        }
        offset += p.n();
    }
    for &(u, v, b) in cross_edges {
        g.check_pair(u, v)?;
        if !g.bond(u, v).is_none() {
            return Err(GraphError::DuplicateEdge(u, v));
        }
        g.set_bond(u, v, b);
    }
    Ok(g)
}

/// Outcome of [`strip_dummies`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StripReport {
    /// Original indices of the retained nodes, in their new order.
    pub kept: Vec<usize>,
    /// Non-NONE edges that touched a dummy node, in original indices.
    pub inconsistent_edges: Vec<(usize, usize)>,
}

/// Deletes every dummy-category node; surviving nodes keep their relative order.
pub fn strip_dummies(g: &MolGraph) -> (MolGraph, StripReport) {
    let kept: Vec<usize> = (0..g.n()).filter(|&i| !g.atom(i).is_dummy()).collect();
    let inconsistent_edges = g
        .bonds()
        .filter(|&(i, j, _)| g.atom(i).is_dummy() || g.atom(j).is_dummy())
        .map(|(i, j, _)| (i, j))
        .collect();
    let out = g.subgraph(&kept);
    (out, StripReport { kept, inconsistent_edges })
}

/// Chemical legitimacy: every real atom's bond-order sum is within its default
/// valence and no real bond touches a dummy node.
pub fn is_valid(g: &MolGraph) -> bool {
    (0..g.n()).all(|i| match g.atom(i) {
        Atom::Dummy => g.degree(i) == 0,
        Atom::Real(e) => g.bond_order_sum(i) <= e.default_valence(),
    }) && (0..g.n()).all(|i| g.bond(i, i).is_none())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c() -> Atom {
        Atom::Real(Element::C)
    }

    fn o() -> Atom {
        Atom::Real(Element::O)
    }

    #[test]
    fn oxygen_with_three_neighbors_is_invalid() {
        let g = MolGraph::from_parts(
            &[o(), c(), c(), c()],
            &[
                (0, 1, BondOrder::Single),
                (0, 2, BondOrder::Single),
                (0, 3, BondOrder::Single),
            ],
            NodeTag::Product,
        )
        .unwrap();
        assert!(!is_valid(&g));
    }

    #[test]
    fn allene_center_is_valid() {
        let g = MolGraph::from_parts(
            &[c(), c(), c()],
            &[(0, 1, BondOrder::Double), (1, 2, BondOrder::Double)],
            NodeTag::Product,
        )
        .unwrap();
        assert!(is_valid(&g));
        assert!(is_valid(&MolGraph::new()));
    }

    #[test]
    fn dummy_with_bond_is_invalid() {
        let g = MolGraph::from_parts(&[c(), Atom::Dummy], &[(0, 1, BondOrder::Single)], NodeTag::Group)
            .unwrap();
        assert!(!is_valid(&g));
    }

    #[test]
    fn splice_union_and_cross_edge() {
        let product = MolGraph::from_parts(&[c(), o()], &[(0, 1, BondOrder::Single)], NodeTag::Product)
            .unwrap();
        let group = MolGraph::from_atoms([Atom::Real(Element::Cl)], NodeTag::Group);
        let g = splice(&[&product, &group], &[]).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.bond_count(), 1);
        assert_eq!(g.tag(2), NodeTag::Group);

        let g = splice(&[&product, &group], &[(0, 2, BondOrder::Single)]).unwrap();
        assert_eq!(g.bond_count(), 2);
        assert_eq!(g.bond(2, 0), BondOrder::Single);

        let err = splice(&[&product, &group], &[(0, 1, BondOrder::Single)]).unwrap_err();
        assert_eq!(err, GraphError::DuplicateEdge(0, 1));
        assert!(matches!(
            splice(&[&product], &[(0, 7, BondOrder::Single)]),
            Err(GraphError::NodeOutOfRange { index: 7, .. })
        ));
    }

    #[test]
    fn splice_then_strip_all_dummy_group_is_identity() {
        let product = MolGraph::from_parts(&[c(), o()], &[(0, 1, BondOrder::Double)], NodeTag::Product)
            .unwrap();
        let group = MolGraph::from_atoms(vec![Atom::Dummy; 4], NodeTag::Dummy);
        let g = splice(&[&product, &group], &[]).unwrap();
        let (stripped, report) = strip_dummies(&g);
        assert_eq!(stripped, product);
        assert!(report.inconsistent_edges.is_empty());
    }

    #[test]
    fn strip_reports_and_drops_dummy_edges() {
        let mut atoms = vec![c(), c(), o()];
        atoms.extend(vec![Atom::Dummy; 7]);
        let mut g = MolGraph::from_parts(&atoms, &[(0, 1, BondOrder::Single), (1, 2, BondOrder::Single)], NodeTag::Product)
            .unwrap();
        g.set_bond(2, 5, BondOrder::Single);
        let (s, report) = strip_dummies(&g);
        assert_eq!(s.n(), 3);
        assert_eq!(s.bond_count(), 2);
        assert_eq!(report.inconsistent_edges, vec![(2, 5)]);

        let all_dummy = MolGraph::from_atoms(vec![Atom::Dummy; 3], NodeTag::Dummy);
        assert!(strip_dummies(&all_dummy).0.is_empty());
    }

    #[test]
    fn vocab_layout() {
        let v = AtomVocab::new([Element::O, Element::C, Element::O]);
        assert_eq!(v.symbols(), vec!["*", "O", "C"]);
        assert_eq!(v.index_of(Atom::Dummy), Some(0));
        assert_eq!(AtomVocab::from_symbols(&v.symbols()), Some(v));
        assert_eq!(AtomVocab::from_symbols(&["C"]), None);
    }

    #[test]
    fn permute_moves_labels_and_bonds() {
        let g = MolGraph::from_parts(&[c(), o(), c()], &[(0, 1, BondOrder::Double)], NodeTag::Product)
            .unwrap();
        let p = g.permute(&[2, 0, 1]);
        assert_eq!(p.atom(2), c());
        assert_eq!(p.atom(0), o());
        assert_eq!(p.bond(2, 0), BondOrder::Double);
        assert_eq!(is_valid(&p), is_valid(&g));
    }
}
