//! Flat `key=value` run configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! corpus = data/toy20.rxn
//! t1 = 500
//! ks = 1,3,5,10
//! ```
//!
//! Values are layered: built-in defaults, then the config file, then
//! `--set key=value` overrides, then dedicated flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::denoiser::Arch;
use crate::pipeline::{ConfigError, StageConfig, StageOrder, TrainOptions};
use crate::evalrank::EvalOptions;

/// Every key a config file may contain.
pub const KEYS: &[&str] = &[
    "corpus",
    "test_corpus",
    "checkpoint",
    "out",
    "t1",
    "t2",
    "mu",
    "n_g",
    "prior",
    "stage_order",
    "offset",
    "n_layer",
    "node_width",
    "edge_width",
    "global_width",
    "heads",
    "stage1_steps",
    "stage2_steps",
    "batch_size",
    "lr",
    "seed",
    "self_condition",
    "checkpoint_every",
    "ks",
    "samples_per_case",
    "timesteps",
    "score_truth",
    "jobs",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    /// Evaluation corpus; the training corpus when absent.
    pub test_corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    /// `n_g = 0` means "derive from the corpus".
    pub stage: StageConfig,
    pub n_layer: usize,
    pub node_width: usize,
    pub edge_width: usize,
    pub global_width: usize,
    pub heads: usize,
    /// Steps of the first stage (or the joint stage).
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub self_condition: bool,
    /// Write an intermediate checkpoint every this many steps of a stage (0 = never).
    pub checkpoint_every: usize,
    pub ks: Vec<usize>,
    pub samples_per_case: usize,
    pub timesteps: usize,
    pub score_truth: bool,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eval = EvalOptions::default();
        let arch = Arch::desk(0);
        RunConfig {
            corpus: None,
            test_corpus: None,
            checkpoint: None,
            out: PathBuf::from("."),
            stage: StageConfig { n_g: 0, ..StageConfig::new(1) },
            n_layer: arch.n_layer,
            node_width: arch.node_width,
            edge_width: arch.edge_width,
            global_width: arch.global_width,
            heads: arch.heads,
            stage1_steps: 2000,
            stage2_steps: 1000,
            batch_size: 8,
            lr: 3e-4,
            seed: 0,
            self_condition: false,
            checkpoint_every: 0,
            ks: eval.ks,
            samples_per_case: eval.samples_per_case,
            timesteps: eval.timesteps,
            score_truth: false,
            jobs: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::field(key, format!("cannot parse '{v}'")))
}

fn positive(key: &str, v: &str) -> Result<usize, ConfigError> {
    match parse::<usize>(key, v)? {
        0 => Err(ConfigError::field(key, "must be at least 1")),
        n => Ok(n),
    }
}

fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::field(key, format!("expected true or false, got '{v}'"))),
    }
}

/// Splits config text into pairs; the line number is reported for malformed lines.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::field(&format!("line {}", i + 1), "expected key=value"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "corpus" => self.corpus = Some(PathBuf::from(v)),
            "test_corpus" => self.test_corpus = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "t1" | "t2" | "mu" | "prior" | "stage_order" | "offset" => {
                let pairs = BTreeMap::from([(key.to_string(), v.to_string())]);
                // validation waits for `validate`, so n_g = 0 stays allowed here
                let n_g = self.stage.n_g;
                let probe = StageConfig { n_g: 1, ..self.stage.clone() };
                self.stage = StageConfig { n_g, ..StageConfig::from_pairs(&pairs, probe)? };
            }
            "n_g" => self.stage.n_g = parse(key, v)?,
            "n_layer" => self.n_layer = positive(key, v)?,
            "node_width" => self.node_width = positive(key, v)?,
            "edge_width" => self.edge_width = positive(key, v)?,
            "global_width" => self.global_width = positive(key, v)?,
            "heads" => self.heads = positive(key, v)?,
            "stage1_steps" => self.stage1_steps = parse(key, v)?,
            "stage2_steps" => self.stage2_steps = parse(key, v)?,
            "batch_size" => self.batch_size = positive(key, v)?,
            "lr" => {
                self.lr = parse(key, v)?;
                if !(self.lr > 0.0 && self.lr.is_finite()) {
                    return Err(ConfigError::field(key, "must be a positive number"));
                }
            }
            "seed" => self.seed = parse(key, v)?,
            "self_condition" => self.self_condition = boolean(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "ks" => {
                let ks = v.split(',').map(|k| positive(key, k.trim())).collect::<Result<Vec<_>, _>>()?;
                if ks.is_empty() {
                    return Err(ConfigError::field(key, "needs at least one value"));
                }
                self.ks = ks;
            }
            "samples_per_case" => self.samples_per_case = positive(key, v)?,
            "timesteps" => self.timesteps = positive(key, v)?,
            "score_truth" => self.score_truth = boolean(key, v)?,
            "jobs" => self.jobs = positive(key, v)?,
            _ => return Err(ConfigError::field(key, "unknown key")),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (k, v) in parse_pairs(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Parses a `key=value` override as given to `--set`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::field(assignment, "override must look like key=value"))?;
        self.set(k.trim(), v)
    }

    pub fn arch(&self, atom_classes: usize) -> Arch {
        Arch {
            n_layer: self.n_layer,
            node_width: self.node_width,
            edge_width: self.edge_width,
            global_width: self.global_width,
            heads: self.heads,
            atom_classes,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions { batch_size: self.batch_size, lr: self.lr, seed: self.seed, self_condition: self.self_condition }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            samples_per_case: self.samples_per_case,
            ks: self.ks.clone(),
            timesteps: self.timesteps,
            seed: self.seed,
            jobs: self.jobs,
            score_truth: self.score_truth,
        }
    }

    /// Steps for each stage of the configured order.
    pub fn stage_steps(&self) -> Vec<usize> {
        match self.stage.order {
            StageOrder::Joint => vec![self.stage1_steps],
            _ => vec![self.stage1_steps, self.stage2_steps],
        }
    }

    /// Canonical text form; parsing it back gives an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        for (k, v) in [("corpus", path(&self.corpus)), ("test_corpus", path(&self.test_corpus)), ("checkpoint", path(&self.checkpoint))] {
            if let Some(v) = v {
                let _ = writeln!(out, "{k}={v}");
            }
        }
        let _ = writeln!(out, "out={}", self.out.display());
        for (k, v) in self.stage.to_pairs() {
            let _ = writeln!(out, "{k}={v}");
        }
        let ks: Vec<String> = self.ks.iter().map(usize::to_string).collect();
        for (k, v) in [
            ("n_layer", self.n_layer.to_string()),
            ("node_width", self.node_width.to_string()),
            ("edge_width", self.edge_width.to_string()),
            ("global_width", self.global_width.to_string()),
            ("heads", self.heads.to_string()),
            ("stage1_steps", self.stage1_steps.to_string()),
            ("stage2_steps", self.stage2_steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("seed", self.seed.to_string()),
            ("self_condition", self.self_condition.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("ks", ks.join(",")),
            ("samples_per_case", self.samples_per_case.to_string()),
            ("timesteps", self.timesteps.to_string()),
            ("score_truth", self.score_truth.to_string()),
            ("jobs", self.jobs.to_string()),
        ] {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::PriorKind;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("corpus = a.rxn\n# note\n\nt1=40\nprior=UNIFORM\nks=1,5\nlr=0.0001\nn_g=3\n").unwrap();
        assert_eq!(c.stage.t1, 40);
        assert_eq!(c.stage.prior, PriorKind::Uniform);
        assert_eq!(c.ks, vec![1, 5]);
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_written_key_is_known() {
        let mut c = RunConfig::default();
        c.corpus = Some("x".into());
        c.test_corpus = Some("y".into());
        c.checkpoint = Some("z".into());
        for (k, _) in parse_pairs(&c.to_text()).unwrap() {
            assert!(KEYS.contains(&k.as_str()), "{k}");
        }
    }

    #[test]
    fn errors_name_the_field() {
        let mut c = RunConfig::default();
        let e = c.apply_text("t1=0").unwrap_err();
        assert!(e.to_string().contains("t1"), "{e}");
        assert!(c.set("batch_size", "many").unwrap_err().to_string().contains("batch_size"));
        assert!(c.set("colour", "red").unwrap_err().to_string().contains("colour"));
        assert!(c.apply_text("just words").unwrap_err().to_string().contains("line 1"));
        assert!(c.apply_override("seed").is_err());
        // the later value wins
        c.apply_override("seed=7").unwrap();
        c.apply_override("seed=9").unwrap();
        assert_eq!(c.seed, 9);
    }
}
