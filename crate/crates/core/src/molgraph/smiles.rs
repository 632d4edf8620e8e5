//! Kekulized SMILES subset.
//!
//! ```text
//! chain     := unit (bond? unit | '(' bond? chain ')' | ringbond)*
//! unit      := bare_atom | '[' element ('H' digit?)? (':' int)? ']'
//! bare_atom := 'C' | 'N' | 'O' | 'S' | 'P' | 'F' | 'Cl' | 'Br' | 'I'
//! bond      := '-' | '=' | '#'
//! ringbond  := bond? digit
//! ```
//!
//! Molecules are joined by `'.'`. Aromatic atoms, charges, isotopes and
//! stereo marks are rejected with an explicit message.

use thiserror::Error;

use super::{canonical_order, Atom, BondOrder, Element, GraphError, MolGraph, NodeTag};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown element '{symbol}' at byte {offset}")]
    UnknownElement { offset: usize, symbol: String },
    #[error("unmatched ring closure {digit} opened at byte {offset}")]
    UnmatchedRingClosure { offset: usize, digit: u8 },
    #[error("unmatched parenthesis at byte {offset}")]
    UnmatchedParenthesis { offset: usize },
    #[error("unsupported feature at byte {offset}: {feature}")]
    Rejected { offset: usize, feature: &'static str },
}

impl SmilesError {
    fn syntax(offset: usize, message: impl Into<String>) -> Self {
        SmilesError::Syntax { offset, message: message.into() }
    }
}

const AROMATIC: &str = "aromatic atoms are not supported; supply a kekulized structure";
const CHARGE: &str = "charges are not supported";
const STEREO: &str = "stereochemistry marks are not supported";
const ISOTOPE: &str = "isotopes are not supported";

/// Parsed graph plus the per-atom side tables carried by bracket atoms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedMolecule {
    pub graph: MolGraph,
    /// Atom-map number per node, if written.
    pub maps: Vec<Option<u32>>,
    /// Explicit hydrogen count of bracket atoms. Informational only.
    pub explicit_h: Vec<Option<u8>>,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    maps: Vec<Option<u32>>,
    explicit_h: Vec<Option<u8>>,
    bonds: Vec<(usize, usize, BondOrder)>,
    rings: [Option<(usize, Option<BondOrder>, usize)>; 10],
}

pub fn parse_molecule(text: &str) -> Result<ParsedMolecule, SmilesError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        maps: Vec::new(),
        explicit_h: Vec::new(),
        bonds: Vec::new(),
        rings: [None; 10],
    };
    p.run()?;
    let mut graph = MolGraph::from_atoms(p.atoms, NodeTag::Product);
    for (u, v, b) in p.bonds {
        graph.set_bond(u, v, b);
    }
    Ok(ParsedMolecule { graph, maps: p.maps, explicit_h: p.explicit_h })
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        let mut prev: Option<usize> = None;
        let mut pending: Option<(BondOrder, usize)> = None;
        let mut branches: Vec<(usize, usize)> = Vec::new();
        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                b'-' | b'=' | b'#' => {
                    if pending.is_some() {
                        return Err(SmilesError::syntax(at, "two consecutive bond symbols"));
                    }
                    if prev.is_none() {
                        return Err(SmilesError::syntax(at, "bond symbol without a preceding atom"));
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        _ => BondOrder::Triple,
                    };
                    pending = Some((order, at));
                    self.pos += 1;
                }
                b'(' => {
                    let Some(p) = prev else {
                        return Err(SmilesError::syntax(at, "branch without a preceding atom"));
                    };
                    if pending.is_some() {
                        return Err(SmilesError::syntax(at, "bond symbol before '('"));
                    }
                    branches.push((p, at));
                    self.pos += 1;
                }
                b')' => {
                    let Some((p, _)) = branches.pop() else {
                        return Err(SmilesError::UnmatchedParenthesis { offset: at });
                    };
                    if pending.is_some() {
                        return Err(SmilesError::syntax(at, "dangling bond before ')'"));
                    }
                    if self.src[at - 1] == b'(' {
                        return Err(SmilesError::syntax(at, "empty branch"));
                    }
                    prev = Some(p);
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    let Some(p) = prev else {
                        return Err(SmilesError::syntax(at, "ring closure without a preceding atom"));
                    };
                    let digit = c - b'0';
                    let bond = pending.take().map(|(b, _)| b);
                    self.pos += 1;
                    match self.rings[digit as usize].take() {
                        None => self.rings[digit as usize] = Some((p, bond, at)),
                        Some((q, open_bond, _)) => {
                            if q == p {
                                return Err(SmilesError::syntax(at, "ring closure onto the same atom"));
                            }
                            let order = match (open_bond, bond) {
                                (Some(a), Some(b)) if a != b => {
                                    return Err(SmilesError::syntax(at, "conflicting ring-bond orders"))
                                }
                                (Some(a), _) | (None, Some(a)) => a,
                                (None, None) => BondOrder::Single,
                            };
                            self.add_bond(q, p, order, at)?;
                        }
                    }
                }
                b'.' => {
                    if pending.is_some() {
                        return Err(SmilesError::syntax(at, "dangling bond before '.'"));
                    }
                    if let Some(&(_, offset)) = branches.last() {
                        return Err(SmilesError::UnmatchedParenthesis { offset });
                    }
                    if prev.is_none() {
                        return Err(SmilesError::syntax(at, "empty molecule before '.'"));
                    }
                    prev = None;
                    self.pos += 1;
                }
                b'%' => return Err(SmilesError::syntax(at, "two-digit ring closures are not supported")),
                b'/' | b'\\' => return Err(SmilesError::Rejected { offset: at, feature: STEREO }),
                b':' => return Err(SmilesError::Rejected { offset: at, feature: AROMATIC }),
                b'[' | b'A'..=b'Z' | b'a'..=b'z' => {
                    let idx = if c == b'[' { self.bracket_atom()? } else { self.bare_atom()? };
                    if let Some(p) = prev {
                        let order = pending.take().map_or(BondOrder::Single, |(b, _)| b);
                        self.add_bond(p, idx, order, at)?;
                    } else if let Some((_, offset)) = pending {
                        return Err(SmilesError::syntax(offset, "bond symbol without a preceding atom"));
                    }
                    prev = Some(idx);
                }
                _ => {
                    return Err(SmilesError::syntax(at, format!("unexpected character '{}'", c as char)))
                }
            }
        }
        if let Some((_, offset)) = pending {
            return Err(SmilesError::syntax(offset, "dangling bond at end of input"));
        }
        if let Some(&(_, offset)) = branches.last() {
            return Err(SmilesError::UnmatchedParenthesis { offset });
        }
        if let Some((digit, (_, _, offset))) = self
            .rings
            .iter()
            .enumerate()
            .find_map(|(d, r)| r.map(|r| (d as u8, r)))
        {
            return Err(SmilesError::UnmatchedRingClosure { offset, digit });
        }
        if self.src.last() == Some(&b'.') {
            return Err(SmilesError::syntax(self.src.len() - 1, "empty molecule after '.'"));
        }
        Ok(())
    }

    fn add_bond(&mut self, u: usize, v: usize, order: BondOrder, at: usize) -> Result<(), SmilesError> {
        if self.bonds.iter().any(|&(a, b, _)| (a == u && b == v) || (a == v && b == u)) {
            return Err(SmilesError::syntax(at, "duplicate bond between the same atoms"));
        }
        self.bonds.push((u, v, order));
        Ok(())
    }

    fn push_atom(&mut self, e: Element, map: Option<u32>, h: Option<u8>) -> usize {
        self.atoms.push(Atom::Real(e));
        self.maps.push(map);
        self.explicit_h.push(h);
        self.atoms.len() - 1
    }

    fn bare_atom(&mut self) -> Result<usize, SmilesError> {
        let at = self.pos;
        let c = self.src[at];
        if c.is_ascii_lowercase() {
            return Err(SmilesError::Rejected { offset: at, feature: AROMATIC });
        }
        let two = self.src.get(at..at + 2);
        let (symbol, len) = match two {
            Some(b"Cl") => ("Cl", 2),
            Some(b"Br") => ("Br", 2),
            _ => (std::str::from_utf8(&self.src[at..at + 1]).unwrap_or("?"), 1),
        };
        let e = Element::from_symbol(symbol).ok_or_else(|| SmilesError::UnknownElement {
            offset: at,
            symbol: symbol.to_string(),
        })?;
        self.pos += len;
        Ok(self.push_atom(e, None, None))
    }

    fn bracket_atom(&mut self) -> Result<usize, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        match self.peek() {
            Some(b'0'..=b'9') => return Err(SmilesError::Rejected { offset: self.pos, feature: ISOTOPE }),
            Some(c) if c.is_ascii_lowercase() => {
                return Err(SmilesError::Rejected { offset: self.pos, feature: AROMATIC })
            }
            Some(c) if c.is_ascii_uppercase() => {}
            _ => return Err(SmilesError::syntax(self.pos, "expected element symbol in bracket atom")),
        }
        let start = self.pos;
        self.pos += 1;
        // A following lowercase letter belongs to the symbol, except the 'H' count marker never does.
        if matches!(self.peek(), Some(c) if c.is_ascii_lowercase()) {
            self.pos += 1;
        }
        let symbol = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("?");
        let e = Element::from_symbol(symbol).ok_or_else(|| SmilesError::UnknownElement {
            offset: start,
            symbol: symbol.to_string(),
        })?;
        let mut h = None;
        let mut map = None;
        if self.peek() == Some(b'@') {
            return Err(SmilesError::Rejected { offset: self.pos, feature: STEREO });
        }
        if self.peek() == Some(b'H') {
            self.pos += 1;
            h = Some(1);
            if let Some(d @ b'0'..=b'9') = self.peek() {
                h = Some(d - b'0');
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'+') | Some(b'-')) {
            return Err(SmilesError::Rejected { offset: self.pos, feature: CHARGE });
        }
        if self.peek() == Some(b':') {
            self.pos += 1;
            let ds = self.pos;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
            if ds == self.pos {
                return Err(SmilesError::syntax(ds, "expected atom-map number after ':'"));
            }
            let text = std::str::from_utf8(&self.src[ds..self.pos]).unwrap_or("");
            map = Some(text.parse().map_err(|_| SmilesError::syntax(ds, "atom-map number too large"))?);
        }
        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(b'+') | Some(b'-') => return Err(SmilesError::Rejected { offset: self.pos, feature: CHARGE }),
            Some(_) => return Err(SmilesError::syntax(self.pos, "unexpected character in bracket atom")),
            None => return Err(SmilesError::syntax(open, "unterminated bracket atom")),
        }
        Ok(self.push_atom(e, map, h))
    }
}

/// Emits a canonical SMILES-subset string: traversal order follows the
/// canonical labeling, so isomorphic graphs produce identical text.
pub fn write_molecule(g: &MolGraph) -> Result<String, GraphError> {
    write_impl(g, None)
}

/// Like [`write_molecule`] but mapped atoms are written as bracket atoms
/// `[CH2:7]` with their implicit-hydrogen count.
pub fn write_mapped(g: &MolGraph, maps: &[Option<u32>]) -> Result<String, GraphError> {
    write_impl(g, Some(maps))
}

fn write_impl(g: &MolGraph, maps: Option<&[Option<u32>]>) -> Result<String, GraphError> {
    if g.has_dummies() {
        return Err(GraphError::DummyNodes);
    }
    let n = g.n();
    let order = canonical_order(g);
    let mut rank = vec![0usize; n];
    for (k, &i) in order.iter().enumerate() {
        rank[i] = k;
    }
    let sorted_neighbors = |u: usize| {
        let mut nb: Vec<usize> = g.neighbors(u).map(|(v, _)| v).collect();
        nb.sort_by_key(|&v| rank[v]);
        nb
    };

    // Pass 1: DFS spanning forest; non-tree edges become ring bonds opened at the ancestor.
    let mut visited = vec![false; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut ring_open: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut ring_close: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut roots = Vec::new();
    for &start in &order {
        if visited[start] {
            continue;
        }
        roots.push(start);
        visited[start] = true;
        let mut stack: Vec<(usize, Option<usize>, Vec<usize>, usize)> =
            vec![(start, None, sorted_neighbors(start), 0)];
        let mut on_path = vec![false; n];
        on_path[start] = true;
        while let Some((u, parent, nb, k)) = stack.last_mut() {
            if *k == nb.len() {
                on_path[*u] = false;
                stack.pop();
                continue;
            }
            let v = nb[*k];
            *k += 1;
            let (u, parent) = (*u, *parent);
            if Some(v) == parent {
                continue;
            }
            if !visited[v] {
                visited[v] = true;
                children[u].push(v);
                on_path[v] = true;
                stack.push((v, Some(u), sorted_neighbors(v), 0));
            } else if on_path[v] {
                // Back edge to an ancestor: opened at v, closed at u.
                ring_open[v].push(u);
                ring_close[u].push(v);
            }
        }
    }

    // Pass 2: emit.
    let mut out = String::new();
    let mut digits: [Option<(usize, usize)>; 10] = [None; 10];
    for (ci, &root) in roots.iter().enumerate() {
        if ci > 0 {
            out.push('.');
        }
        let mut stack: Vec<Emit> = vec![Emit::Atom(root, None)];
        while let Some(item) = stack.pop() {
            match item {
                Emit::Close => out.push(')'),
                Emit::Open => out.push('('),
                Emit::Atom(u, from) => {
                    if let Some(p) = from {
                        out.push_str(bond_text(g.bond(p, u)));
                    }
                    write_atom(&mut out, g, u, maps);
                    for &v in &ring_close[u] {
                        let d = (1..10)
                            .find(|&d| digits[d] == Some((v, u)))
                            .expect("ring digit opened at ancestor");
                        digits[d] = None;
                        out.push((b'0' + d as u8) as char);
                    }
                    for &v in &ring_open[u] {
                        let d = (1..10).find(|&d| digits[d].is_none()).ok_or(GraphError::RingLimit)?;
                        digits[d] = Some((u, v));
                        out.push_str(bond_text(g.bond(u, v)));
                        out.push((b'0' + d as u8) as char);
                    }
                    let ch = &children[u];
                    if let Some((&last, rest)) = ch.split_last() {
                        stack.push(Emit::Atom(last, Some(u)));
                        for &c in rest.iter().rev() {
                            stack.push(Emit::Close);
                            stack.push(Emit::Atom(c, Some(u)));
                            stack.push(Emit::Open);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

enum Emit {
    Atom(usize, Option<usize>),
    Open,
    Close,
}

fn bond_text(b: BondOrder) -> &'static str {
    match b {
        BondOrder::Single | BondOrder::None => "",
        other => other.smiles_symbol(),
    }
}

fn write_atom(out: &mut String, g: &MolGraph, u: usize, maps: Option<&[Option<u32>]>) {
    let e = g.atom(u).element().expect("dummies rejected earlier");
    match maps.and_then(|m| m.get(u).copied().flatten()) {
        Some(map) => {
            out.push('[');
            out.push_str(e.symbol());
            match e.implicit_h(g.bond_order_sum(u)) {
                0 => {}
                1 => out.push('H'),
                h => {
                    out.push('H');
                    out.push_str(&h.to_string());
                }
            }
            out.push(':');
            out.push_str(&map.to_string());
            out.push(']');
        }
        None => out.push_str(e.symbol()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::canonical_form;

    fn parse(s: &str) -> MolGraph {
        parse_molecule(s).unwrap().graph
    }

    #[test]
    fn chain() {
        let g = parse("CCO");
        assert_eq!(g.n(), 3);
        assert_eq!(g.atom(2), Atom::Real(Element::O));
        assert_eq!(g.bond(0, 1), BondOrder::Single);
        assert_eq!(g.bond(1, 2), BondOrder::Single);
        assert_eq!(g.bond_count(), 2);
    }

    #[test]
    fn ring_closure() {
        let g = parse("C1CC1");
        assert_eq!(g.bond_count(), 3);
        assert!((0..3).all(|i| g.degree(i) == 2));
    }

    #[test]
    fn bracket_atoms_with_maps() {
        let p = parse_molecule("[CH3:1][OH:2]").unwrap();
        assert_eq!(p.maps, vec![Some(1), Some(2)]);
        assert_eq!(p.explicit_h, vec![Some(3), Some(1)]);
        assert_eq!(p.graph.bond(0, 1), BondOrder::Single);
    }

    #[test]
    fn branches_and_bond_symbols() {
        let g = parse("CC(=O)OC#N");
        assert_eq!(g.bond(1, 2), BondOrder::Double);
        assert_eq!(g.bond(1, 3), BondOrder::Single);
        assert_eq!(g.bond(4, 5), BondOrder::Triple);
        let g = parse("ClC(Br)(I)F");
        assert_eq!(g.degree(1), 4);
    }

    #[test]
    fn rejected_features() {
        for (s, feature) in [
            ("c1ccccc1", AROMATIC),
            ("[NH4+]", CHARGE),
            ("[O-]C", CHARGE),
            ("[13CH4]", ISOTOPE),
            ("C/C=C/C", STEREO),
            ("[C@H](F)(Cl)Br", STEREO),
        ] {
            match parse_molecule(s) {
                Err(SmilesError::Rejected { feature: f, .. }) => assert_eq!(f, feature, "{s}"),
                other => panic!("{s}: {other:?}"),
            }
        }
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(parse_molecule("C1CC"), Err(SmilesError::UnmatchedRingClosure { digit: 1, .. })));
        assert!(matches!(parse_molecule("CC(C"), Err(SmilesError::UnmatchedParenthesis { offset: 2 })));
        assert!(matches!(parse_molecule("CC)C"), Err(SmilesError::UnmatchedParenthesis { offset: 2 })));
        assert!(matches!(parse_molecule("CNa"), Err(SmilesError::Rejected { .. })));
        assert!(matches!(parse_molecule("[Na]"), Err(SmilesError::UnknownElement { .. })));
        assert!(matches!(parse_molecule("CB"), Err(SmilesError::UnknownElement { offset: 1, .. })));
        assert!(matches!(parse_molecule("C==C"), Err(SmilesError::Syntax { offset: 2, .. })));
        assert!(matches!(parse_molecule("C11"), Err(SmilesError::Syntax { .. })));
        assert!(matches!(parse_molecule("C12CC12"), Err(SmilesError::Syntax { .. })));
        assert!(matches!(parse_molecule("C.=C"), Err(SmilesError::Syntax { .. })));
        assert!(matches!(parse_molecule("C C"), Err(SmilesError::Syntax { offset: 1, .. })));
    }

    #[test]
    fn empty_input_is_empty_graph() {
        assert!(parse("").is_empty());
    }

    #[test]
    fn writer_examples() {
        assert_eq!(write_molecule(&parse("C1CC1")).unwrap(), "C1CC1");
        assert_eq!(write_molecule(&parse("O")).unwrap(), "O");
        assert_eq!(write_molecule(&parse("C.C")).unwrap(), "C.C");
        let mut g = parse("CC");
        g.add_atom(Atom::Dummy, NodeTag::Dummy);
        assert_eq!(write_molecule(&g), Err(GraphError::DummyNodes));
    }

    #[test]
    fn writer_round_trips() {
        for s in [
            "CC(=O)OC",
            "C1=CC=CC=C1",
            "C1CCC2CCCCC2C1",
            "N#CC1=CC(Br)=CC=C1",
            "CS(=O)(=O)OC.C1CC1",
            "C12C3C4C1C5C2C3C45",
        ] {
            let g = parse(s);
            let text = write_molecule(&g).unwrap();
            let back = parse(&text);
            assert_eq!(canonical_form(&g), canonical_form(&back), "{s} -> {text}");
        }
    }

    #[test]
    fn mapped_writer_round_trips_maps() {
        let p = parse_molecule("[CH3:1][C:2](=[O:3])Cl").unwrap();
        let text = write_mapped(&p.graph, &p.maps).unwrap();
        let back = parse_molecule(&text).unwrap();
        assert_eq!(canonical_form(&p.graph), canonical_form(&back.graph));
        let mut maps = back.maps.clone();
        maps.sort();
        assert_eq!(maps, vec![None, Some(1), Some(2), Some(3)]);
        assert!(text.contains("[CH3:1]"), "{text}");
    }
}
