//! Randomized invariants across modules.

mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use retrodiff::cli::RunConfig;
use retrodiff::evalrank::{aggregate, rank_candidates, Candidate, CandidateScore, CaseResult};
use retrodiff::molgraph::{canonical_form, parse_molecule, write_molecule, Atom, AtomVocab, BondOrder, Element, MolGraph, NodeTag};
use retrodiff::noise::{forward_sample, NoiseSchedule, PriorKind, TransitionKernel};

/// Connected molecule from a parent list (node `i > 0` hangs off `parents[i]`),
/// extra ring closures and element choices, keeping every atom within valence.
fn molecule(elements: &[u8], parents: &[usize], rings: &[(usize, usize)]) -> MolGraph {
    const TABLE: [Element; 5] = [Element::C, Element::N, Element::O, Element::S, Element::Cl];
    let atoms: Vec<Atom> = elements.iter().map(|&e| Atom::Real(TABLE[e as usize % TABLE.len()])).collect();
    let mut g = MolGraph::from_atoms(atoms, NodeTag::Product);
    let room = |g: &MolGraph, i: usize| {
        let Atom::Real(e) = g.atom(i) else { return 0 };
        e.default_valence().saturating_sub(g.bond_order_sum(i))
    };
    for i in 1..g.n() {
        let p = parents[i - 1] % i;
        if room(&g, i) > 0 && room(&g, p) > 0 {
            g.set_bond(i, p, BondOrder::Single);
        }
    }
    for &(a, b) in rings {
        let (a, b) = (a % g.n(), b % g.n());
        if a != b && g.bond(a, b).is_none() && room(&g, a) > 0 && room(&g, b) > 0 {
            g.set_bond(a, b, BondOrder::Single);
        }
    }
    g
}

fn arb_molecule() -> impl Strategy<Value = MolGraph> {
    (1usize..12).prop_flat_map(|n| {
        (
            proptest::collection::vec(0u8..5, n),
            proptest::collection::vec(0usize..64, n.saturating_sub(1)),
            proptest::collection::vec((0usize..64, 0usize..64), 0..3),
        )
            .prop_map(|(e, p, r)| molecule(&e, &p, &r))
    })
}

fn chain(len: usize) -> MolGraph {
    parse_molecule(&"C".repeat(len.max(1))).unwrap().graph
}

fn candidates(scores: &[(u8, u8)]) -> Vec<Candidate> {
    scores
        .iter()
        .enumerate()
        .map(|(s, &(len, score))| Candidate {
            sample: s,
            reactants: chain(len as usize),
            score: CandidateScore { score: f64::from(score) / 4.0, atom_term: 0.0, bond_term: f64::from(score) / 4.0 },
            valid: len % 3 != 0,
            invalid_sites: false,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smiles_round_trip_preserves_the_graph(g in arb_molecule()) {
        let text = write_molecule(&g).unwrap();
        let back = parse_molecule(&text).unwrap().graph;
        prop_assert_eq!(canonical_form(&back), canonical_form(&g));
        prop_assert_eq!(write_molecule(&back).unwrap(), text);
    }

    #[test]
    fn canonical_form_ignores_atom_order(g in arb_molecule(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..g.n()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(canonical_form(&g.permute(&perm)), canonical_form(&g));
    }

    #[test]
    fn ranking_ignores_sample_order(scores in proptest::collection::vec((1u8..5, 0u8..6), 1..20), seed in any::<u64>()) {
        let ordered = candidates(&scores);
        let mut shuffled = ordered.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let ranked = rank_candidates(ordered);
        prop_assert_eq!(&rank_candidates(shuffled), &ranked);
        prop_assert_eq!(ranked.iter().map(|c| c.copies).sum::<usize>(), scores.len());
        prop_assert!(ranked.windows(2).all(|w| w[0].candidate.score.score <= w[1].candidate.score.score));
    }

    #[test]
    fn top_k_accuracy_grows_with_k(
        cases in proptest::collection::vec((proptest::collection::vec((1u8..6, 0u8..8), 1..12), 1u8..6), 1..8)
    ) {
        let results: Vec<CaseResult> = cases
            .iter()
            .enumerate()
            .map(|(index, (scores, truth_len))| {
                let ranked = rank_candidates(candidates(scores));
                let truth = canonical_form(&chain(*truth_len as usize));
                let truth_rank = ranked.iter().position(|c| c.canonical == truth);
                CaseResult {
                    index,
                    class_label: Some(1),
                    reconstructable: true,
                    truth,
                    ranked,
                    truth_rank,
                    truth_score: None,
                    inconsistent_edges: 0,
                }
            })
            .collect();
        let ks: Vec<usize> = (1..=10).collect();
        let report = aggregate(&results, &ks, 12);
        prop_assert!(report.top_k_accuracy.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(report.top_k_accuracy.iter().chain(&report.top_k_validity).all(|&a| (0.0..=1.0).contains(&a)));
    }

    #[test]
    fn posterior_is_a_distribution(
        dim in 2usize..10,
        steps in 2usize..300,
        uniform in any::<bool>(),
        t_frac in 0.0f64..1.0,
        x0 in 0usize..10,
        xt in 0usize..10,
    ) {
        let prior = if uniform { PriorKind::Uniform } else { PriorKind::Absorbing };
        let kernel = TransitionKernel::new(NoiseSchedule::cosine(steps, 0.008).unwrap(), dim, prior).unwrap();
        let t = 1 + (t_frac * (steps - 1) as f64) as usize;
        let (x0, xt) = (x0 % dim, xt % dim);
        match kernel.posterior(xt, x0, t) {
            Ok(p) => {
                prop_assert!(p.iter().all(|&v| v >= 0.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            // only pairs the forward process cannot produce are refused
            Err(_) => prop_assert!(kernel.cumulative_prob(t, x0, xt) == 0.0),
        }
        for row in kernel.cumulative_matrix(t).chunks(dim) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_noise_leaves_frozen_positions(g in arb_molecule(), seed in any::<u64>(), frozen in 0usize..12) {
        let vocab = AtomVocab::new([Element::C, Element::N, Element::O, Element::S, Element::Cl]);
        let n = g.n();
        let frozen = frozen.min(n);
        let mask = common::free_after(n, frozen);
        let schedule = NoiseSchedule::cosine(50, 0.008).unwrap();
        let kx = TransitionKernel::new(schedule.clone(), vocab.len(), PriorKind::Uniform).unwrap();
        let ke = TransitionKernel::new(schedule, 4, PriorKind::Uniform).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = forward_sample(&g, 50, &kx, &ke, &vocab, &mask, &mut rng).unwrap();
        for i in 0..frozen {
            prop_assert_eq!(noisy.atom(i), g.atom(i));
            for j in 0..frozen {
                prop_assert_eq!(noisy.bond(i, j), g.bond(i, j));
            }
        }
    }

    #[test]
    fn config_text_round_trips(
        t1 in 1usize..2000,
        t2 in 1usize..200,
        mu in 0.0f64..4.0,
        lr in 1e-6f64..1e-1,
        seed in any::<u64>(),
        ks in proptest::collection::vec(1usize..50, 1..5),
        order in 0usize..3,
    ) {
        let mut cfg = RunConfig::default();
        let ks: Vec<String> = ks.iter().map(usize::to_string).collect();
        let orders = ["GROUP_THEN_BOND", "BOND_THEN_GROUP", "JOINT"];
        cfg.apply_text(&format!(
            "t1={t1}\nt2={t2}\nmu={mu:?}\nlr={lr:?}\nseed={seed}\nks={}\nstage_order={}\n",
            ks.join(","),
            orders[order]
        ))
        .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn shipped_data_matches_the_generators() {
    use retrodiff::synth;
    for (name, text) in [
        ("toy20.rxn", synth::toy_corpus(synth::TOY_SEED)),
        ("corpus200.rxn", synth::mixed_corpus(synth::MIXED_SEED)),
        ("smiles200.txt", synth::smiles_text(synth::SMILES_SEED)),
    ] {
        let shipped = std::fs::read_to_string(common::data_path(name)).unwrap();
        assert_eq!(shipped, text, "{name} is out of date; rerun the make_corpora example");
    }
}

#[test]
fn shipped_toy_config_parses() {
    let mut cfg = RunConfig::default();
    cfg.apply_text(&std::fs::read_to_string(common::config_path("toy20.cfg")).unwrap()).unwrap();
    assert_eq!(cfg.stage1_steps + cfg.stage2_steps, 4500);
    assert_eq!((cfg.stage.t1, cfg.stage.t2), (500, 50));
}
