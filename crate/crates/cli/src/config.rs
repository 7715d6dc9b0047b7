use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use robusthedge_core::claim::{Claim, ClaimSpec};
use robusthedge_core::family::FamilySpec;
use robusthedge_core::suite::Suite;
use robusthedge_core::tree::{MarketTree, TreeSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<ClaimSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilySpec>,
    #[serde(default)]
    pub seed: u64,
    /// Random instances for `oracle`.
    #[serde(default = "default_instances")]
    pub instances: usize,
    /// Instance counts per property suite; empty means the defaults.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub suites: BTreeMap<Suite, usize>,
    /// Exact cases to rerun instead of the seeded suites.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replay: Vec<ReplayCase>,
    #[serde(default)]
    pub mutate_kernel: bool,
    #[serde(default)]
    pub counterexample: CounterexampleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_instances() -> usize {
    100
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayCase {
    pub suite: Suite,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleConfig {
    pub bands: usize,
    pub t: f64,
    /// Level `n` of the truncation sweep.
    pub phi_level: f64,
    pub phi_max_k: u32,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        CounterexampleConfig {
            bands: 20,
            t: 1.0,
            phi_level: 2.0,
            phi_max_k: 30,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            tree: None,
            claim: None,
            family: None,
            seed: 0,
            instances: default_instances(),
            suites: BTreeMap::new(),
            replay: Vec::new(),
            mutate_kernel: false,
            counterexample: CounterexampleConfig::default(),
            out: None,
        }
    }
}

/// A fully resolved single instance.
pub struct Problem {
    pub tree: MarketTree,
    pub claim: Claim,
    pub family: FamilySpec,
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            CliError::Config(format!(
                "{origin}:{}:{}: field `{path}`: {inner}",
                inner.line(),
                inner.column()
            ))
        })?;
        config.validate(origin)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn validate(&self, origin: &str) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "{origin}: field `schema_version`: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        let c = &self.counterexample;
        if c.bands == 0 || c.bands > robusthedge_core::counterexample::MAX_BANDS {
            return Err(CliError::Config(format!(
                "{origin}: field `counterexample.bands`: must be in 1..={}",
                robusthedge_core::counterexample::MAX_BANDS
            )));
        }
        if !(c.t > 0.0 && c.t.is_finite()) {
            return Err(CliError::Config(format!("{origin}: field `counterexample.t`: must be positive")));
        }
        if !(c.phi_level >= 0.0 && c.phi_level.is_finite()) {
            return Err(CliError::Config(format!(
                "{origin}: field `counterexample.phi_level`: must be nonnegative"
            )));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        let missing = |f: &str| CliError::Config(format!("field `{f}` is required by this command"));
        let spec = self.tree.as_ref().ok_or_else(|| missing("tree"))?;
        let tree = MarketTree::build(spec).map_err(|e| CliError::Config(format!("field `tree`: {e}")))?;
        let claim = self
            .claim
            .as_ref()
            .ok_or_else(|| missing("claim"))?
            .resolve(&tree)
            .map_err(|e| CliError::Config(format!("field `claim`: {e}")))?;
        let family = self.family.clone().ok_or_else(|| missing("family"))?;
        family
            .validate(tree.dim())
            .map_err(|e| CliError::Config(format!("field `family`: {e}")))?;
        Ok(Problem { tree, claim, family })
    }

    pub fn suite_counts(&self) -> Vec<(Suite, usize)> {
        if self.suites.is_empty() {
            Suite::ALL.iter().map(|s| (*s, s.default_count())).collect()
        } else {
            self.suites.iter().map(|(s, n)| (*s, *n)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let c = ExperimentConfig::parse(r#"{"schema_version": 1}"#, "t").unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn errors_name_line_and_field() {
        let text = "{\n  \"schema_version\": 1,\n  \"family\": {\"class\": \"bogus\"}\n}";
        let err = ExperimentConfig::parse(text, "cfg.json").unwrap_err().to_string();
        assert!(err.contains("cfg.json:3:"), "{err}");
        assert!(err.contains("family.class"), "{err}");
    }

    #[test]
    fn rejects_other_versions() {
        assert!(ExperimentConfig::parse(r#"{"schema_version": 2}"#, "t").is_err());
    }

    #[test]
    fn table_claims_must_cover_leaves() {
        let text = r#"{"schema_version": 1,
            "tree": {"dim": 1, "depth": 1, "generator": {"kind": "trinomial", "u": 1.0}},
            "claim": {"table": {"1": 1.0, "2": "-inf"}},
            "family": {"class": "martingale", "claim_restricted": true}}"#;
        let c = ExperimentConfig::parse(text, "t").unwrap();
        assert!(c.problem().is_err());
    }
}
