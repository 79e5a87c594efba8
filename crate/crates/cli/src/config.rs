use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gaussent::factory::{
    displaced_squeezed_thermal, random_state, simon_form, thermal, two_mode_squeezed_vacuum, ReferenceStateParams,
};
use gaussent::state::StateFile;
use gaussent::stokes::StokesConfig;
use gaussent::twocopy::TwoCopyConfig;
use gaussent::GaussianState;
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "GAUSSENT_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Scheme {
    LoccI,
    LoccIi,
    Stokes,
    TwocopyM1,
    TwocopyM2,
    TwocopyM3,
    /// Exact criterion on the true covariance.
    Analytic,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::LoccI => "locc_i",
            Scheme::LoccIi => "locc_ii",
            Scheme::Stokes => "stokes",
            Scheme::TwocopyM1 => "twocopy_m1",
            Scheme::TwocopyM2 => "twocopy_m2",
            Scheme::TwocopyM3 => "twocopy_m3",
            Scheme::Analytic => "analytic",
        }
    }
}

/// Two-mode input state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    Vacuum,
    /// Product of two thermal states.
    Thermal { n_bar_a: f64, n_bar_b: f64 },
    /// Product of two displaced squeezed thermal states.
    Dst {
        mode_a: ReferenceStateParams,
        mode_b: ReferenceStateParams,
    },
    Tmsv { r: f64 },
    /// Normal form `A = λI, B = μI, C = diag(s, t)`.
    Simon { lambda: f64, mu: f64, s: f64, t: f64 },
    Random {
        seed: u64,
        #[serde(default = "half")]
        max_squeeze: f64,
        #[serde(default = "half")]
        max_thermal: f64,
    },
    /// State file with `n_modes`, `means` and `cov`.
    File { path: PathBuf },
}

fn half() -> f64 {
    0.5
}

impl StateSpec {
    pub fn build(&self) -> anyhow::Result<GaussianState> {
        let state = match self {
            StateSpec::Vacuum => GaussianState::vacuum(2),
            StateSpec::Thermal { n_bar_a, n_bar_b } => thermal(*n_bar_a)?.tensor_product(&thermal(*n_bar_b)?),
            StateSpec::Dst { mode_a, mode_b } => {
                displaced_squeezed_thermal(mode_a)?.tensor_product(&displaced_squeezed_thermal(mode_b)?)
            }
            StateSpec::Tmsv { r } => two_mode_squeezed_vacuum(*r)?,
            StateSpec::Simon { lambda, mu, s, t } => simon_form(*lambda, *mu, *s, *t)?,
            StateSpec::Random {
                seed,
                max_squeeze,
                max_thermal,
            } => random_state(*seed, *max_squeeze, *max_thermal)?,
            StateSpec::File { path } => {
                let state = read_state_file(path)?;
                state.ensure_valid()?;
                state
            }
        };
        if state.n_modes() != 2 {
            bail!("expected a two-mode state, got {} modes", state.n_modes());
        }
        Ok(state)
    }
}

/// Parses a state file without checking physical validity.
pub fn read_state_file(path: &Path) -> anyhow::Result<GaussianState> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: StateFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(GaussianState::try_from(file)?)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    /// Overrides the environment default.
    pub dir: Option<PathBuf>,
    /// Record file stem, `<scheme>_<seed>` when absent.
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub state: StateSpec,
    pub scheme: Scheme,
    #[serde(default = "default_shots")]
    pub shots: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stokes: StokesConfig,
    #[serde(default)]
    pub twocopy: TwoCopyConfig,
    #[serde(default)]
    pub output: OutputPaths,
}

fn default_shots() -> usize {
    100_000
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.check()?;
        Ok(config)
    }

    /// Checks everything that can be checked without running the scheme.
    pub fn check(&self) -> anyhow::Result<()> {
        self.state.build().context("state")?;
        if self.scheme != Scheme::Analytic && self.shots == 0 {
            bail!("shots must be positive for {}", self.scheme.name());
        }
        self.twocopy.opa.check().context("twocopy.opa")?;
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn record_name(&self) -> String {
        self.output
            .name
            .clone()
            .unwrap_or_else(|| format!("{}_{}", self.scheme.name(), self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"state": {"kind": "tmsv", "r": 0.5}, "scheme": "locc_i"}"#).unwrap();
        assert_eq!(c.shots, 100_000);
        assert_eq!(c.state, StateSpec::Tmsv { r: 0.5 });
        c.check().unwrap();
    }

    #[test]
    fn rejects_unknown_keys() {
        let top = r#"{"state": {"kind": "vacuum"}, "scheme": "stokes", "shot": 10}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(top).is_err());
        let nested = r#"{"state": {"kind": "tmsv", "r": 0.5, "s": 1}, "scheme": "stokes"}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(nested).is_err());
        let stokes = r#"{"state": {"kind": "vacuum"}, "scheme": "stokes", "stokes": {"phi3": 0}}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(stokes).is_err());
    }

    #[test]
    fn rejects_unphysical_state() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"state": {"kind": "simon", "lambda": 0.5, "mu": 0.5, "s": 0.4, "t": 0.4}, "scheme": "analytic"}"#)
                .unwrap();
        assert!(c.check().is_err());
    }
}
