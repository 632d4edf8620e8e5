use std::collections::BTreeMap;
use std::fmt;

use crate::noise::{PriorKind, DEFAULT_OFFSET};

/// Which template part is generated first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StageOrder {
    #[default]
    GroupThenBond,
    BondThenGroup,
    /// Group atoms, group bonds and external bonds denoised together.
    Joint,
}

impl StageOrder {
    pub fn name(self) -> &'static str {
        match self {
            StageOrder::GroupThenBond => "GROUP_THEN_BOND",
            StageOrder::BondThenGroup => "BOND_THEN_GROUP",
            StageOrder::Joint => "JOINT",
        }
    }

    pub fn from_name(s: &str) -> Option<StageOrder> {
        match s.to_ascii_uppercase().as_str() {
            "GROUP_THEN_BOND" => Some(StageOrder::GroupThenBond),
            "BOND_THEN_GROUP" => Some(StageOrder::BondThenGroup),
            "JOINT" => Some(StageOrder::Joint),
            _ => None,
        }
    }
}

impl fmt::Display for StageOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("field {field}: {message}")]
    Field { field: String, message: String },
    #[error("missing field {0}")]
    Missing(String),
}

impl ConfigError {
    pub(crate) fn field(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Field { field: field.to_string(), message: message.into() }
    }
}

/// Horizons, loss weight, group budget and ablation switches.
#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub t1: usize,
    pub t2: usize,
    /// Atom-term weight in the group stage (the bond stage always uses 0).
    pub mu: f64,
    pub n_g: usize,
    pub prior: PriorKind,
    pub order: StageOrder,
    /// Cosine schedule offset.
    pub offset: f64,
}

impl StageConfig {
    /// `T1 = 500`, `T2 = 50`, `mu = 0.2`, absorbing prior, group first.
    pub fn new(n_g: usize) -> Self {
        StageConfig {
            t1: 500,
            t2: 50,
            mu: 0.2,
            n_g,
            prior: PriorKind::Absorbing,
            order: StageOrder::GroupThenBond,
            offset: DEFAULT_OFFSET,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.t1 == 0 {
            return Err(ConfigError::field("t1", "must be at least 1"));
        }
        if self.t2 == 0 {
            return Err(ConfigError::field("t2", "must be at least 1"));
        }
        if self.n_g == 0 {
            return Err(ConfigError::field("n_g", "must be at least 1"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(ConfigError::field("mu", "must be a finite non-negative number"));
        }
        if !(self.offset > 0.0 && self.offset.is_finite()) {
            return Err(ConfigError::field("offset", "must be positive"));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("t1".into(), self.t1.to_string()),
            ("t2".into(), self.t2.to_string()),
            ("mu".into(), format!("{:?}", self.mu)),
            ("n_g".into(), self.n_g.to_string()),
            ("prior".into(), self.prior.name().into()),
            ("stage_order".into(), self.order.name().into()),
            ("offset".into(), format!("{:?}", self.offset)),
        ]
    }

    /// Reads the keys written by [`to_pairs`](Self::to_pairs); absent keys keep defaults.
    pub fn from_pairs(pairs: &BTreeMap<String, String>, mut base: StageConfig) -> Result<Self, ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
            v.trim().parse().map_err(|_| ConfigError::field(key, format!("cannot parse '{v}'")))
        }
        for (k, v) in pairs {
            match k.as_str() {
                "t1" => base.t1 = num(k, v)?,
                "t2" => base.t2 = num(k, v)?,
                "mu" => base.mu = num(k, v)?,
                "n_g" => base.n_g = num(k, v)?,
                "offset" => base.offset = num(k, v)?,
                "prior" => {
                    base.prior = PriorKind::from_name(v).ok_or_else(|| ConfigError::field(k, format!("unknown prior '{v}'")))?
                }
                "stage_order" => {
                    base.order =
                        StageOrder::from_name(v).ok_or_else(|| ConfigError::field(k, format!("unknown stage order '{v}'")))?
                }
                _ => {}
            }
        }
        base.validate()?;
        Ok(base)
    }
}
