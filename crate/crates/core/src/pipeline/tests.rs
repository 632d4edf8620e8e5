use super::*;
use crate::molgraph::{canonical_form, Element};
use crate::reaction::{extract_supervision, ReactionRecord};

const TWO_SITES: &str = "Cl[CH2:1][CH3:3].Br[CH2:2][CH3:4]>>[CH3:3][CH2:1][CH2:2][CH3:4]";

fn record(line: &str) -> (MolGraph, SupervisionTarget) {
    let r = ReactionRecord::from_line(line).unwrap();
    let t = extract_supervision(&r).unwrap();
    (r.product, t)
}

fn vocab() -> AtomVocab {
    AtomVocab::new([Element::C, Element::O, Element::Cl, Element::Br])
}

fn tiny_arch(v: &AtomVocab) -> Arch {
    Arch { n_layer: 1, node_width: 8, edge_width: 8, global_width: 8, heads: 2, atom_classes: v.len() }
}

fn short_config(order: StageOrder) -> StageConfig {
    StageConfig { t1: 8, t2: 4, order, ..StageConfig::new(3) }
}

#[test]
fn stage_masks_cover_the_right_blocks() {
    let (n_x, n_g) = (3, 2);
    let group = stage_mask(n_x, n_g, StageKind::Group);
    let bond = stage_mask(n_x, n_g, StageKind::Bond);
    let joint = stage_mask(n_x, n_g, StageKind::Joint);
    for i in 0..5 {
        assert_eq!(group.node(i), i < n_x);
        assert!(bond.node(i));
        assert_eq!(joint.node(i), i < n_x);
        for j in 0..5 {
            if i == j {
                continue;
            }
            let cross = (i < n_x) != (j < n_x);
            let internal = i >= n_x && j >= n_x;
            assert_eq!(!group.edge(i, j), internal, "group ({i},{j})");
            assert_eq!(!bond.edge(i, j), cross, "bond ({i},{j})");
            assert_eq!(!joint.edge(i, j), cross || internal, "joint ({i},{j})");
        }
    }
    assert_eq!(group.free_edges().count(), 1);
    assert_eq!(bond.free_edges().count(), 6);
}

#[test]
fn template_pads_and_round_trips() {
    let (product, target) = record(TWO_SITES);
    let tpl = Template::from_supervision(&product, &target, 4).unwrap();
    assert_eq!((tpl.n_x(), tpl.n_g()), (4, 4));
    assert_eq!(tpl.group.atom(3), Atom::Dummy);
    assert_eq!(tpl.cross.len(), 2);
    let g = tpl.graph();
    assert_eq!(Template::from_graph(&g, 4), tpl);
    assert!(Template::from_supervision(&product, &target, 1).is_none());
}

#[test]
fn empty_group_supervises_dummies_and_no_cross_bonds() {
    let (product, target) = record("[CH3:1][OH:2]>>[CH3:1][OH:2]");
    let tpl = Template::from_supervision(&product, &target, 3).unwrap();
    let v = vocab();
    let config = short_config(StageOrder::GroupThenBond);
    let model = RetroModel::new(v.clone(), config, tiny_arch(&v), 0).unwrap();
    let kernels = model.kernels().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (_, _, t) = stage_example(&model, &kernels, &tpl, StageKind::Group, 3, &mut rng).unwrap();
    assert_eq!(t.atom_positions(), 3);
    for i in 2..5 {
        assert!(t.node_supervised[i]);
        assert_eq!(t.nodes[i], 0);
    }
    let (_, _, t) = stage_example(&model, &kernels, &tpl, StageKind::Bond, 2, &mut rng).unwrap();
    assert_eq!(t.atom_positions(), 0);
    assert_eq!(t.bond_positions(), 6);
    assert!(t.edge_pairs.iter().all(|&(i, j)| t.edges[i * t.n + j] == 0));
}

#[test]
fn one_external_bond_gives_one_cross_target() {
    let (product, target) = record("Cl[CH2:1][CH3:2]>>[CH3:1][CH3:2]");
    assert_eq!(target.external_bonds.len(), 1);
    let tpl = Template::from_supervision(&product, &target, 3).unwrap();
    let v = vocab();
    let model = RetroModel::new(v.clone(), short_config(StageOrder::GroupThenBond), tiny_arch(&v), 0).unwrap();
    let kernels = model.kernels().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (noisy, mask, t) = stage_example(&model, &kernels, &tpl, StageKind::Bond, 1, &mut rng).unwrap();
    let hits = t.edge_pairs.iter().filter(|&&(i, j)| t.edges[i * t.n + j] != 0).count();
    assert_eq!(hits, 1);
    // group and product untouched by the bond-stage noise
    let clean = tpl.graph();
    for i in 0..noisy.n() {
        assert_eq!(noisy.atom(i), clean.atom(i));
        for j in 0..noisy.n() {
            if mask.edge(i, j) {
                assert_eq!(noisy.bond(i, j), clean.bond(i, j));
            }
        }
    }
}

#[test]
fn later_stage_positions_are_prior_draws() {
    let (product, target) = record(TWO_SITES);
    let tpl = Template::from_supervision(&product, &target, 3).unwrap();
    let v = vocab();
    let config = short_config(StageOrder::BondThenGroup);
    let model = RetroModel::new(v.clone(), config, tiny_arch(&v), 0).unwrap();
    let kernels = model.kernels().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // bond stage runs first: the group is still at its absorbing prior
    let (noisy, _, _) = stage_example(&model, &kernels, &tpl, StageKind::Bond, 1, &mut rng).unwrap();
    for s in 4..7 {
        assert_eq!(noisy.atom(s), Atom::Dummy);
        for r in s + 1..7 {
            assert!(noisy.bond(s, r).is_none());
        }
    }
}

#[test]
fn prior_predictor_returns_the_product() {
    let v = vocab();
    let product = crate::molgraph::parse_molecule("CC(=O)OCCl").unwrap().graph;
    let pred = PriorPredictor { atom_classes: v.len(), prior: PriorKind::Absorbing };
    let config = StageConfig { t1: 30, t2: 10, ..StageConfig::new(4) };
    let out = sample(&pred, &v, &config, &product, 9, true).unwrap();
    assert_eq!(out.group.n(), 0);
    assert!(out.external_bonds.is_empty());
    assert_eq!(canonical_form(&out.reactants), canonical_form(&product));
    assert_eq!(out.report, AdaptReport::default());
    assert_eq!(out.steps.len(), 1 + 30 + 10);
    assert_eq!(out.stage_starts, vec![0, 30]);
}

#[test]
fn sampling_is_deterministic_and_respects_frozen_positions() {
    let v = vocab();
    let config = short_config(StageOrder::GroupThenBond);
    let model = RetroModel::new(v.clone(), config.clone(), tiny_arch(&v), 5).unwrap();
    let product = crate::molgraph::parse_molecule("CCOC").unwrap().graph;
    let a = sample(&model, &v, &config, &product, 17, true).unwrap();
    let b = sample(&model, &v, &config, &product, 17, true).unwrap();
    assert_eq!(a, b);
    let n_x = product.n();
    for w in a.steps.windows(2) {
        let (before, after) = (&w[0].graph, &w[1].graph);
        for i in 0..n_x {
            for j in 0..n_x {
                assert_eq!(before.bond(i, j), after.bond(i, j));
            }
            assert_eq!(before.atom(i), after.atom(i));
        }
        if w[1].stage == StageKind::Bond {
            for i in n_x..before.n() {
                assert_eq!(before.atom(i), after.atom(i));
                for j in n_x..before.n() {
                    assert_eq!(before.bond(i, j), after.bond(i, j));
                }
            }
        }
    }
}

#[test]
fn untrained_uniform_sampling_still_yields_consistent_output() {
    let v = vocab();
    let pred = PriorPredictor { atom_classes: v.len(), prior: PriorKind::Uniform };
    let config = StageConfig { t1: 6, t2: 3, prior: PriorKind::Uniform, ..StageConfig::new(3) };
    let product = crate::molgraph::parse_molecule("CCO").unwrap().graph;
    for seed in 0..20 {
        let out = sample(&pred, &v, &config, &product, seed, false).unwrap();
        assert!(out.steps.is_empty());
        assert!(out.reactants.n() >= product.n());
        assert_eq!(out.reactants.n(), product.n() + out.group.n());
        assert!(out.external_bonds.iter().all(|&(g, p, _)| g < out.group.n() && p < product.n()));
    }
}

#[test]
fn finish_drops_bonds_on_dummy_slots() {
    let product = crate::molgraph::parse_molecule("CC").unwrap().graph;
    let mut g = splice(&[&product, &MolGraph::from_atoms([Atom::Dummy, Atom::Real(Element::Cl)], NodeTag::Group)], &[])
        .unwrap();
    g.set_bond(2, 0, BondOrder::Single);
    g.set_bond(3, 1, BondOrder::Single);
    let out = finish(g, 2, Vec::new(), vec![0]).unwrap();
    assert_eq!(out.inconsistent_edges, 1);
    assert_eq!(out.group.n(), 1);
    assert_eq!(out.external_bonds, vec![(0, 1, BondOrder::Single)]);
    assert_eq!(out.reactants.n(), 3);
}

#[test]
fn trainer_warm_starts_the_second_stage() {
    let (product, target) = record(TWO_SITES);
    let v = vocab();
    let config = short_config(StageOrder::GroupThenBond);
    let (templates, skipped) = prepare_templates(&[&product], std::slice::from_ref(&target), 3);
    assert_eq!(skipped, 0);
    let model = RetroModel::new(v.clone(), config, tiny_arch(&v), 0).unwrap();
    let options = TrainOptions { batch_size: 2, ..TrainOptions::default() };
    let mut trainer = Trainer::new(model, &templates, options).unwrap();
    trainer.train_stage(StageKind::Group, 3).unwrap();
    let group_params = trainer.model.stage(StageKind::Group).unwrap().params.clone();
    assert_ne!(trainer.model.stage(StageKind::Bond).unwrap().params, group_params);
    trainer.train_stage(StageKind::Bond, 1).unwrap();
    let bond = &trainer.model.stage(StageKind::Bond).unwrap();
    assert_eq!(bond.adam.step, 1);
    // one step away from the group weights, not from the fresh init
    let diff: f64 = bond.params.tensors()[0]
        .data
        .iter()
        .zip(&group_params.tensors()[0].data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff <= 1.5e-3, "{diff}");
    assert_eq!(trainer.total_steps(), 4);
    assert_eq!(trainer.log.len(), 4);
    assert!(trainer.log[3].atom_ce == 0.0 && trainer.log[3].bond_ce > 0.0);
}

#[test]
fn oversized_groups_are_skipped() {
    let (product, target) = record(TWO_SITES);
    let (templates, skipped) = prepare_templates(&[&product], std::slice::from_ref(&target), 1);
    assert!(templates.is_empty());
    assert_eq!(skipped, 1);
    let v = vocab();
    let model = RetroModel::new(v.clone(), short_config(StageOrder::Joint), tiny_arch(&v), 0).unwrap();
    assert!(matches!(Trainer::new(model, &templates, TrainOptions::default()), Err(PipelineError::NoExamples)));
}

#[test]
fn joint_order_has_a_single_stage() {
    let v = vocab();
    let model = RetroModel::new(v.clone(), short_config(StageOrder::Joint), tiny_arch(&v), 0).unwrap();
    assert_eq!(model.stages.len(), 1);
    assert!(model.stage(StageKind::Group).is_err());
    let product = crate::molgraph::parse_molecule("CC").unwrap().graph;
    let out = sample(&model, &v, &model.config, &product, 1, true).unwrap();
    assert_eq!(out.steps.len(), 1 + 8);
}
