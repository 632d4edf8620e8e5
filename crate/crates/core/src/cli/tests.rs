use super::*;

const CORPUS: &str = "\
# tiny corpus
1\tCl[CH2:1][CH3:2]>>[CH3:1][CH3:2]
1\tCl[CH2:1][OH:2]>>[CH3:1][OH:2]
2\t[CH3:1][OH:2]>>[CH3:1][OH:2]
";

fn tiny(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    let corpus = dir.join("corpus.rxn");
    fs::write(&corpus, CORPUS).unwrap();
    cfg.corpus = Some(corpus);
    cfg.out = dir.join("out");
    for kv in [
        "t1=6", "t2=3", "n_layer=1", "node_width=8", "edge_width=8", "global_width=8", "heads=2", "stage1_steps=3",
        "stage2_steps=2", "batch_size=2", "samples_per_case=2", "timesteps=2",
    ] {
        cfg.apply_override(kv).unwrap();
    }
    cfg
}

#[test]
fn missing_corpus_names_the_field() {
    let err = cmd_train(&RunConfig::default()).unwrap_err();
    assert_eq!(err.class(), "config");
    assert!(err.line().starts_with("error: config: "));
    assert!(err.line().contains("corpus"), "{}", err.line());
    let cfg = RunConfig { corpus: Some("/nonexistent/x.rxn".into()), ..RunConfig::default() };
    assert!(cmd_train(&cfg).unwrap_err().line().contains("corpus"));
}

#[test]
fn corpus_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    let bad = dir.path().join("bad.rxn");
    fs::write(&bad, "C>>C\n[CH3:1]C>>\n").unwrap();
    cfg.corpus = Some(bad);
    let err = cmd_train(&cfg).unwrap_err();
    assert_eq!(err.class(), "corpus");
    assert!(err.line().contains("line 1"), "{}", err.line());
}

#[test]
fn training_is_reproducible_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.checkpoint_every = 2;
    let summary = cmd_train(&cfg).unwrap();
    assert!(summary.contains("n_g=1\n"), "{summary}");
    assert!(summary.contains("steps=5\n"));
    let out = cfg.out.clone();
    let log = fs::read_to_string(out.join("train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 5);
    assert!(log.starts_with("stage\tstep\tatom_ce\tbond_ce\ttotal\n"));
    for name in ["checkpoint_group_000002.rdck", "checkpoint_group_000003.rdck", "checkpoint_bond_000002.rdck"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let model = fs::read(out.join("model.rdck")).unwrap();

    cfg.out = dir.path().join("again");
    cmd_train(&cfg).unwrap();
    assert_eq!(fs::read_to_string(cfg.out.join("train_log.tsv")).unwrap(), log);
    assert_eq!(fs::read(cfg.out.join("model.rdck")).unwrap(), model);
    let saved = fs::read_to_string(cfg.out.join("run_config.txt")).unwrap();
    let mut back = RunConfig::default();
    back.apply_text(&saved).unwrap();
    assert_eq!(back.stage.n_g, 1);
}

#[test]
fn untrained_sampling_returns_the_product() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { out: dir.path().join("s"), ..tiny(dir.path()) };
    let req = SampleRequest { product: "CC(=O)O".into(), num_samples: 3, trace: false, trace_every: 1 };
    let text = cmd_sample(&cfg, &req).unwrap();
    assert!(text.contains("model=prior:ABSORBING"), "{text}");
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with("1\t")).collect();
    assert_eq!(rows.len(), 1);
    let fields: Vec<&str> = rows[0].split('\t').collect();
    assert_eq!(fields[4..6], ["3", "true"]);
    let back = parse_molecule(fields[6]).unwrap().graph;
    let product = parse_molecule("CC(=O)O").unwrap().graph;
    assert_eq!(crate::molgraph::canonical_form(&back), crate::molgraph::canonical_form(&product));
    assert!(!cfg.out.exists());
    assert_eq!(cmd_sample(&cfg, &req).unwrap(), text);

    let traced = SampleRequest { trace: true, ..req };
    cmd_sample(&cfg, &traced).unwrap();
    let mgf = fs::read_to_string(cfg.out.join("trace.mgf")).unwrap();
    let steps = crate::pipeline::parse_mgf(&mgf).unwrap();
    assert_eq!(steps.len(), 1 + 6 + 3);
    let svg = fs::read_to_string(cfg.out.join("trace.svg")).unwrap();
    assert_eq!(svg.matches(" t=").count(), steps.len());

    let bad = SampleRequest { product: "C(C".into(), ..traced };
    assert_eq!(cmd_sample(&cfg, &bad).unwrap_err().class(), "product");
}

#[test]
fn eval_reports_and_rejects_empty_sets() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cmd_train(&cfg).unwrap();
    cfg.checkpoint = Some(cfg.out.join("model.rdck"));
    let report = cmd_eval(&cfg).unwrap();
    assert_eq!(report.lines().filter(|l| l.starts_with("top") && l.contains("_accuracy=")).count(), 4);
    assert_eq!(report.lines().filter(|l| l.starts_with("top") && l.contains("_validity=")).count(), 4);
    let jsonl = fs::read_to_string(cfg.out.join("eval_cases.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 3);
    assert_eq!(cmd_eval(&cfg).unwrap(), report);
    assert_eq!(fs::read_to_string(cfg.out.join("eval_cases.jsonl")).unwrap(), jsonl);

    let empty = dir.path().join("empty.rxn");
    fs::write(&empty, "# nothing\n").unwrap();
    cfg.test_corpus = Some(empty);
    let err = cmd_eval(&cfg).unwrap_err();
    assert_eq!(err.class(), "eval");
    assert!(err.line().contains("empty"));

    let foreign = dir.path().join("foreign.rxn");
    fs::write(&foreign, "Cl[CH2:1][Br:2]>>[CH3:1][Br:2]\n").unwrap();
    cfg.test_corpus = Some(foreign);
    assert_eq!(cmd_eval(&cfg).unwrap_err().class(), "checkpoint");
}

#[test]
fn inspect_checkpoints_and_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_train(&cfg).unwrap();
    let ck = cfg.out.join("model.rdck");
    let text = cmd_inspect(&ck).unwrap();
    assert!(text.contains("vocab=*,C,O,Cl\n"), "{text}");
    assert!(text.contains("t1=6\n") && text.contains("stage_order=GROUP_THEN_BOND\n"));
    assert!(text.contains("tensor group.") && text.contains("tensor bond."));

    let corpus = cmd_inspect(cfg.corpus.as_ref().unwrap()).unwrap();
    assert!(corpus.contains("records=3\n") && corpus.contains("n_g=1\n"), "{corpus}");
    assert!(corpus.contains("group_size.0=1\n") && corpus.contains("group_size.1=2\n"));

    let bytes = fs::read(&ck).unwrap();
    let cut = dir.path().join("cut.rdck");
    fs::write(&cut, &bytes[..bytes.len() - 100]).unwrap();
    let err = cmd_inspect(&cut).unwrap_err();
    assert_eq!(err.class(), "checkpoint");
    assert!(err.line().contains("checksum"), "{}", err.line());
    assert_eq!(cmd_inspect(&dir.path().join("missing")).unwrap_err().class(), "io");
}

#[test]
fn flags_override_config_files() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.cfg");
    fs::write(&file, "seed=3\njobs=2\nout=a\nmu=0.5\n").unwrap();
    let common = CommonArgs {
        config: Some(file),
        seed: Some(11),
        jobs: None,
        out: Some("b".into()),
        overrides: vec!["mu=0.25".into(), "jobs=4".into()],
    };
    let cfg = resolve_config(&common).unwrap();
    assert_eq!((cfg.seed, cfg.jobs, cfg.out.as_path(), cfg.stage.mu), (11, 4, Path::new("b"), 0.25));
}

#[test]
fn exit_status_convention() {
    assert_eq!(main_with_args(["retrodiff", "frobnicate"]), 2);
    assert_eq!(main_with_args(["retrodiff", "inspect", "/nonexistent/file"]), 1);
    assert_eq!(main_with_args(["retrodiff", "--help"]), 0);
}
