//! Hand-built synthetic corpora: atom-mapped reactions assembled from small
//! scaffolds and functional heads, plus a molecule list for parser tests.
//!
//! Reaction classes:
//!
//! | class | kind | template |
//! |---|---|---|
//! | 1 | methyl ether cleavage | `R-O-C >> R-O` |
//! | 2 | acetamide cleavage | `R-N-C(=O)C >> R-N` |
//! | 3 | thioether cleavage | `R-S-C >> R-S` |
//! | 4 | methyl ester hydrolysis | `R-C(=O)O-C >> R-C(=O)O` |
//! | 5 | halide coupling | `A-Cl . B-Br >> A-B` |
//! | 6 | double deprotection at non-adjacent sites | two heads, two groups |
//! | 7 | amide coupling, amine side without group | `A-C(=O)Cl . B-N >> A-C(=O)N-B` |
//! | 8 | ketone reduction | `A-C(=O)-B >> A-C(O)-B` |
//! | 9 | oversized protecting chain on an alcohol | `R-O-CCCCCCCCC >> R-O` |
//!
//! Classes 1 to 5 are expressible by group generation plus the
//! post-adaptation rules. Class 6 trips the invalid-sites flag, classes 7 and
//! 8 are unreconstructable, and class 9 is a group-size outlier.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::molgraph::{canonical_form, parse_molecule, splice, write_mapped, write_molecule, BondOrder, MolGraph};

/// Carbon skeletons; attachments go on carbons with spare valence.
const SCAFFOLDS: &[&str] = &[
    "C", "CC", "CCC", "CC(C)C", "C1CC1", "C1CCC1", "CCCC", "C=CC", "CC(C)(C)C", "C1CCCC1", "CC=C", "CC1CC1",
];

/// Small scaffolds used by the toy corpus.
const TOY_SCAFFOLDS: &[&str] = &["C", "CC", "CCC", "CC(C)C", "C1CC1", "C=CC"];

/// Functional head: SMILES with the scaffold attachment on atom 0 and the
/// site (where the group attaches) on `site`.
struct Head {
    smiles: &'static str,
    site: usize,
    group: &'static str,
    class: u8,
}

const HEADS: &[Head] = &[
    Head { smiles: "O", site: 0, group: "C", class: 1 },
    Head { smiles: "N", site: 0, group: "C(=O)C", class: 2 },
    Head { smiles: "S", site: 0, group: "C", class: 3 },
    Head { smiles: "C(=O)O", site: 2, group: "C", class: 4 },
];

/// A mapped reaction: `atom_map[p]` is the reactant atom of product atom `p`.
#[derive(Clone, Debug)]
pub struct SynthReaction {
    pub class: u8,
    pub reactants: MolGraph,
    pub product: MolGraph,
    pub atom_map: Vec<usize>,
}

impl SynthReaction {
    /// Builds the product from the reactants by deleting `group` atoms, then
    /// adding `formed` bonds and applying `changed` orders (reactant indices).
    fn derive(
        class: u8,
        reactants: MolGraph,
        group: &[usize],
        formed: &[(usize, usize)],
        changed: &[(usize, usize, BondOrder)],
    ) -> Self {
        let kept: Vec<usize> = (0..reactants.n()).filter(|i| !group.contains(i)).collect();
        let mut product = reactants.subgraph(&kept);
        let local = |r: usize| kept.iter().position(|&k| k == r).expect("formed bonds join kept atoms");
        for &(a, b) in formed {
            product.set_bond(local(a), local(b), BondOrder::Single);
        }
        for &(a, b, o) in changed {
            product.set_bond(local(a), local(b), o);
        }
        SynthReaction { class, reactants, product, atom_map: kept }
    }

    /// `class<TAB>reactants>>product` with map numbers `1..=n` on product atoms.
    pub fn to_line(&self) -> String {
        let mut rmaps = vec![None; self.reactants.n()];
        for (p, &r) in self.atom_map.iter().enumerate() {
            rmaps[r] = Some(p as u32 + 1);
        }
        let pmaps: Vec<Option<u32>> = (1..=self.product.n() as u32).map(Some).collect();
        let r = write_mapped(&self.reactants, &rmaps).expect("reactants have no dummies");
        let p = write_mapped(&self.product, &pmaps).expect("product has no dummies");
        format!("{}\t{r}>>{p}", self.class)
    }
}

fn mol(smiles: &str) -> MolGraph {
    parse_molecule(smiles).expect("built-in SMILES parse").graph
}

/// Carbon atoms of `g` with spare valence for one more single bond.
fn open_carbons(g: &MolGraph) -> Vec<usize> {
    (0..g.n()).filter(|&i| g.atom(i).symbol() == "C" && g.bond_order_sum(i) < 4).collect()
}

fn attach_head(scaffold: &MolGraph, at: usize, head: &MolGraph) -> MolGraph {
    let n = scaffold.n();
    splice(&[scaffold, head], &[(at, n, BondOrder::Single)]).expect("fresh bond")
}

/// Single-site deprotection: scaffold + head, with the head's group attached at its site.
fn deprotection(scaffold: &MolGraph, at: usize, head: &Head) -> SynthReaction {
    let h = mol(head.smiles);
    let core = attach_head(scaffold, at, &h);
    let site = scaffold.n() + head.site;
    let group = mol(head.group);
    let reactants = splice(&[&core, &group], &[(site, core.n(), BondOrder::Single)]).expect("fresh bond");
    let group_atoms: Vec<usize> = (core.n()..reactants.n()).collect();
    SynthReaction::derive(head.class, reactants, &group_atoms, &[], &[])
}

fn coupling(a: &MolGraph, at_a: usize, b: &MolGraph, at_b: usize) -> SynthReaction {
    let (na, nb) = (a.n(), b.n());
    let halides = mol("Cl.Br");
    let reactants = splice(
        &[a, b, &halides],
        &[(at_a, na + nb, BondOrder::Single), (na + at_b, na + nb + 1, BondOrder::Single)],
    )
    .expect("fresh bonds");
    SynthReaction::derive(5, reactants, &[na + nb, na + nb + 1], &[(at_a, na + at_b)], &[])
}

fn double_deprotection(scaffold: &MolGraph, a: usize, b: usize) -> SynthReaction {
    let o = mol("O");
    let core = attach_head(&attach_head(scaffold, a, &o), b, &o);
    let (s1, s2) = (scaffold.n(), scaffold.n() + 1);
    let n = core.n();
    let methyls = mol("C.C");
    let reactants =
        splice(&[&core, &methyls], &[(s1, n, BondOrder::Single), (s2, n + 1, BondOrder::Single)]).expect("fresh bonds");
    SynthReaction::derive(6, reactants, &[n, n + 1], &[], &[])
}

fn amide(a: &MolGraph, at_a: usize, b: &MolGraph, at_b: usize) -> SynthReaction {
    let acyl = mol("C(=O)Cl");
    let amine = mol("N");
    let acid = attach_head(a, at_a, &acyl);
    let base = attach_head(b, at_b, &amine);
    let reactants = splice(&[&acid, &base], &[]).expect("no cross bonds");
    let carbonyl = a.n();
    let chlorine = a.n() + 2;
    let nitrogen = acid.n() + b.n();
    SynthReaction::derive(7, reactants, &[chlorine], &[(carbonyl, nitrogen)], &[])
}

fn reduction(a: &MolGraph, at_a: usize, b: &MolGraph, at_b: usize) -> SynthReaction {
    let ketone = mol("C=O");
    let left = attach_head(a, at_a, &ketone);
    let c = a.n();
    let n = left.n();
    let reactants = splice(&[&left, b], &[(c, n + at_b, BondOrder::Single)]).expect("fresh bond");
    SynthReaction::derive(8, reactants, &[], &[], &[(c, c + 1, BondOrder::Single)])
}

fn long_protection(scaffold: &MolGraph, at: usize) -> SynthReaction {
    let core = attach_head(scaffold, at, &mol("O"));
    let chain = mol("CCCCCCCCC");
    let site = scaffold.n();
    let reactants = splice(&[&core, &chain], &[(site, core.n(), BondOrder::Single)]).expect("fresh bond");
    let group: Vec<usize> = (core.n()..reactants.n()).collect();
    SynthReaction::derive(9, reactants, &group, &[], &[])
}

fn pick<'a, T, R: Rng>(items: &'a [T], rng: &mut R) -> &'a T {
    items.choose(rng).expect("non-empty")
}

fn corpus_text(reactions: &[SynthReaction], title: &str) -> String {
    let mut out = format!("# {title}\n");
    for r in reactions {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Twenty reactions with pairwise distinct products: four of each
/// deprotection class and four halide couplings.
pub fn toy_reactions(seed: u64) -> Vec<SynthReaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scaffolds: Vec<MolGraph> = TOY_SCAFFOLDS.iter().map(|s| mol(s)).collect();
    let mut out: Vec<SynthReaction> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut push = |r: SynthReaction, out: &mut Vec<SynthReaction>| {
        if seen.insert(canonical_form(&r.product)) {
            out.push(r);
            true
        } else {
            false
        }
    };
    for head in HEADS {
        let mut made = 0;
        while made < 4 {
            let s = pick(&scaffolds, &mut rng);
            let at = *pick(&open_carbons(s), &mut rng);
            made += usize::from(push(deprotection(s, at, head), &mut out));
        }
    }
    let mut made = 0;
    while made < 4 {
        let (a, b) = (pick(&scaffolds[..4], &mut rng), pick(&scaffolds[..4], &mut rng));
        let (ia, ib) = (*pick(&open_carbons(a), &mut rng), *pick(&open_carbons(b), &mut rng));
        made += usize::from(push(coupling(a, ia, b, ib), &mut out));
    }
    out
}

pub fn toy_corpus(seed: u64) -> String {
    corpus_text(&toy_reactions(seed), "toy corpus: 20 reactions, classes 1-5")
}

/// Two hundred reactions across all nine classes; classes 6 to 9 are the
/// flagged and outlier cases.
pub fn mixed_reactions(seed: u64) -> Vec<SynthReaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scaffolds: Vec<MolGraph> = SCAFFOLDS.iter().map(|s| mol(s)).collect();
    let mut out = Vec::with_capacity(200);
    let plan: [(u8, usize); 9] = [(1, 34), (2, 30), (3, 26), (4, 30), (5, 40), (6, 14), (7, 12), (8, 12), (9, 2)];
    for (class, count) in plan {
        for _ in 0..count {
            let s = pick(&scaffolds, &mut rng);
            let t = pick(&scaffolds, &mut rng);
            let at = *pick(&open_carbons(s), &mut rng);
            let bt = *pick(&open_carbons(t), &mut rng);
            let r = match class {
                1..=4 => deprotection(s, at, &HEADS[class as usize - 1]),
                5 => coupling(s, at, t, bt),
                6 => {
                    // two open carbons that are not bonded, so the sites are not adjacent
                    let apart = |g: &MolGraph| {
                        let open = open_carbons(g);
                        open.iter()
                            .flat_map(|&a| open.iter().map(move |&b| (a, b)))
                            .filter(|&(a, b)| a < b && g.bond(a, b).is_none())
                            .collect::<Vec<_>>()
                    };
                    let candidates: Vec<&MolGraph> = scaffolds.iter().filter(|g| !apart(g).is_empty()).collect();
                    let g = *pick(&candidates, &mut rng);
                    let &(a, b) = pick(&apart(g), &mut rng);
                    double_deprotection(g, a, b)
                }
                7 => amide(s, at, t, bt),
                8 => reduction(s, at, t, bt),
                _ => long_protection(s, at),
            };
            out.push(r);
        }
    }
    out.shuffle(&mut rng);
    out
}

pub fn mixed_corpus(seed: u64) -> String {
    corpus_text(&mixed_reactions(seed), "mixed corpus: 200 reactions, classes 1-9")
}

/// Hand-written strings exercising rings, branches, bond orders and brackets.
const CURATED: &[&str] = &[
    "C",
    "CC",
    "C=C",
    "C#C",
    "C#N",
    "O=C=O",
    "CCO",
    "OCC",
    "CC(C)C",
    "CC(C)(C)C",
    "C1CC1",
    "C1CCCCC1",
    "C1=CC=CC=C1",
    "C1=CC=C(C=C1)O",
    "CC(=O)O",
    "CC(=O)Cl",
    "CC(=O)NC",
    "CS(=O)(=O)C",
    "OP(=O)(O)O",
    "FC(F)(F)C",
    "BrCCBr",
    "ICC(I)C",
    "C1CC2CCC1C2",
    "C12CC1C2",
    "[CH4]",
    "[NH3]",
    "[OH2]",
    "[CH3:7]C",
    "C(C(C(C(C)C)C)C)C",
    "N1C=CC=C1",
    "C1=COC=C1",
    "C1=CSC=C1",
    "CC.O",
    "Cl.Cl.C",
    "C=CC=CC=C",
    "CC#CC",
    "N#CC#N",
    "C1CCC2(CC1)CCCC2",
    "OC1=CC=CC=C1N",
];

fn random_molecule<R: Rng>(rng: &mut R, scaffolds: &[MolGraph]) -> MolGraph {
    let heads = [mol("O"), mol("N"), mol("S"), mol("C(=O)O"), mol("Cl"), mol("C#N"), mol("C=O")];
    let mut g = pick(scaffolds, rng).clone();
    for _ in 0..rng.gen_range(0..3) {
        let open = open_carbons(&g);
        if open.is_empty() {
            break;
        }
        let at = *pick(&open, rng);
        let piece = if rng.gen_bool(0.5) { pick(&heads, rng) } else { pick(scaffolds, rng) };
        g = attach_head(&g, at, piece);
    }
    let mut perm: Vec<usize> = (0..g.n()).collect();
    perm.shuffle(rng);
    g.permute(&perm)
}

/// Curated strings followed by generated molecules written from shuffled atom orders.
pub fn smiles_list(seed: u64, count: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scaffolds: Vec<MolGraph> = SCAFFOLDS.iter().map(|s| mol(s)).collect();
    let mut out: Vec<String> = CURATED.iter().take(count).map(|s| s.to_string()).collect();
    while out.len() < count {
        let g = random_molecule(&mut rng, &scaffolds);
        out.push(write_molecule(&g).expect("no dummies"));
    }
    out
}

pub fn smiles_text(seed: u64) -> String {
    let mut out = smiles_list(seed, 200).join("\n");
    out.push('\n');
    out
}

/// Default seeds of the shipped data files.
pub const TOY_SEED: u64 = 20;
pub const MIXED_SEED: u64 = 200;
pub const SMILES_SEED: u64 = 7;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::is_valid;
    use crate::reaction::{extract_supervision, is_reconstructable, parse_corpus};

    #[test]
    fn toy_corpus_parses_with_distinct_products() {
        let records = parse_corpus(&toy_corpus(TOY_SEED)).unwrap();
        assert_eq!(records.len(), 20);
        let mut forms: Vec<_> = records.iter().map(|r| canonical_form(&r.product)).collect();
        forms.sort();
        forms.dedup();
        assert_eq!(forms.len(), 20);
        for r in &records {
            let t = extract_supervision(r).unwrap();
            assert!(is_reconstructable(&r.product, &t));
            assert!(t.group_size() <= 3);
            assert!(is_valid(&r.reactants) && is_valid(&r.product));
        }
    }

    #[test]
    fn mixed_corpus_flags_the_expected_classes() {
        let records = parse_corpus(&mixed_corpus(MIXED_SEED)).unwrap();
        assert_eq!(records.len(), 200);
        for r in &records {
            let t = extract_supervision(r).unwrap();
            let ok = is_reconstructable(&r.product, &t);
            match r.class_label.unwrap() {
                7 | 8 => assert!(!ok),
                _ => assert!(ok),
            }
            assert!(is_valid(&r.reactants) && is_valid(&r.product));
        }
    }

    #[test]
    fn smiles_list_is_seeded() {
        assert_eq!(smiles_list(1, 60), smiles_list(1, 60));
        assert_eq!(smiles_list(1, 200).len(), 200);
    }
}
