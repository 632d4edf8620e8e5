//! Compares how many training steps each stage order needs before top-1
//! accuracy on the toy corpus reaches 95%.
//!
//! ```text
//! cargo run --release --example stage_order_ablation -- data/toy20.rxn 3
//! ```
//!
//! Uses a reduced setting (T1 = 100, T2 = 20, two narrow layers, two samples
//! per case) so that several seeds finish in minutes.

use retrodiff::cli::RunConfig;
use retrodiff::evalrank::{train_until, EvalCase, EvalOptions};
use retrodiff::molgraph::MolGraph;
use retrodiff::pipeline::{prepare_templates, RetroModel, StageOrder, Trainer};
use retrodiff::reaction::{build_vocab, extract_supervision, group_budget, load_corpus};

const SETTING: &str = "t1=100\nt2=20\nn_layer=2\nnode_width=32\nedge_width=16\nglobal_width=16\nheads=4\n\
                       batch_size=8\nlr=0.0003\nsamples_per_case=2\ntimesteps=10\n";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let corpus = args.next().unwrap_or_else(|| "data/toy20.rxn".to_string());
    let seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);

    let records = load_corpus(corpus.as_ref())?;
    let targets = records.iter().map(extract_supervision).collect::<Result<Vec<_>, _>>()?;
    let n_g = group_budget(&targets)?.n_g;
    let products: Vec<&MolGraph> = records.iter().map(|r| &r.product).collect();
    let (templates, _) = prepare_templates(&products, &targets, n_g);
    let vocab = build_vocab(&records);
    let cases = records.iter().map(EvalCase::from_record).collect::<Result<Vec<_>, _>>()?;

    for order in [StageOrder::GroupThenBond, StageOrder::BondThenGroup, StageOrder::Joint] {
        let mut reached = Vec::new();
        for seed in 0..seeds {
            let mut cfg = RunConfig::default();
            cfg.apply_text(SETTING)?;
            cfg.seed = seed;
            cfg.stage.order = order;
            cfg.stage.n_g = n_g;
            let model = RetroModel::new(vocab.clone(), cfg.stage.clone(), cfg.arch(vocab.len()), seed)?;
            let mut trainer = Trainer::new(model, &templates, cfg.train_options())?;
            let options = EvalOptions { ks: vec![1], ..cfg.eval_options() };
            let run = train_until(&mut trainer, &cases, &options, 250, 6000, 0.95)?;
            let curve: Vec<String> = run.points.iter().map(|p| format!("{}:{:.2}", p.steps, p.top1)).collect();
            println!("{order} seed {seed}: {}", curve.join(" "));
            reached.push(run.converged_at);
        }
        println!("{order}: steps to 95% top-1 {reached:?}\n");
    }
    Ok(())
}
