//! Experiment configuration: TOML file, CLI overrides, validation and hashing.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    GiantFraction,
    SecondComponent,
    CoreKernel,
    Diameter,
    TypicalDistance,
    LocalLimit,
    TreeEstimates,
    GreenValidation,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::GiantFraction,
        ExperimentKind::SecondComponent,
        ExperimentKind::CoreKernel,
        ExperimentKind::Diameter,
        ExperimentKind::TypicalDistance,
        ExperimentKind::LocalLimit,
        ExperimentKind::TreeEstimates,
        ExperimentKind::GreenValidation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GiantFraction => "giant_fraction",
            ExperimentKind::SecondComponent => "second_component",
            ExperimentKind::CoreKernel => "core_kernel",
            ExperimentKind::Diameter => "diameter",
            ExperimentKind::TypicalDistance => "typical_distance",
            ExperimentKind::LocalLimit => "local_limit",
            ExperimentKind::TreeEstimates => "tree_estimates",
            ExperimentKind::GreenValidation => "green_validation",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown experiment kind `{s}`")))
    }
}

/// Knobs of the individual experiment kinds. Unused fields are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Survival proxy depth for tree-side estimates.
    pub tree_generations: usize,
    /// Clusters reaching this many vertices count as surviving.
    pub tree_max_size: usize,
    pub tree_replicas: usize,
    /// Vertex pairs sampled per replica for typical distances.
    pub pairs: usize,
    /// Ball radius for the local census.
    pub ball_radius: usize,
    /// Smallest tree-like envelope radius accepted by the Green validation.
    pub min_tree_radius: usize,
    /// Conditioning checks per graph in the Green validation.
    pub pairs_per_graph: usize,
    /// Largest conditioning-set size in the Green validation.
    pub max_target_size: usize,
    /// Levels for `tree_estimates`; empty means the single level `h`.
    pub h_grid: Vec<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tree_generations: 40,
            tree_max_size: 2_000,
            tree_replicas: 20_000,
            pairs: 10_000,
            ball_radius: 2,
            min_tree_radius: 6,
            pairs_per_graph: 12,
            max_target_size: 3,
            h_grid: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub d: usize,
    pub h: f64,
    pub n_grid: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    pub thresholds: Thresholds,
    /// Output directory; not part of the experiment identity.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::GiantFraction,
            d: 3,
            h: 0.0,
            n_grid: vec![2000],
            replicas: 100,
            seed: 0,
            thresholds: Thresholds::default(),
            out: None,
            threads: None,
        }
    }
}

/// Values given on the command line; each one replaces the file value.
#[derive(Clone, Debug, Default)]
pub struct ConfigOverrides {
    pub kind: Option<ExperimentKind>,
    pub d: Option<usize>,
    pub h: Option<f64>,
    pub n_grid: Option<Vec<usize>>,
    pub replicas: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::ConfigFile {
            path: PathBuf::from("<string>"),
            message: e.to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| HarnessError::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn apply(&mut self, o: &ConfigOverrides) {
        if let Some(k) = o.kind {
            self.kind = k;
        }
        if let Some(d) = o.d {
            self.d = d;
        }
        if let Some(h) = o.h {
            self.h = h;
        }
        if let Some(g) = &o.n_grid {
            self.n_grid = g.clone();
        }
        if let Some(r) = o.replicas {
            self.replicas = r;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.d < 3 {
            return bad(format!("degree must be at least 3, got {}", self.d));
        }
        if self.replicas == 0 {
            return bad("replicas must be at least 1".into());
        }
        if !self.h.is_finite() || self.thresholds.h_grid.iter().any(|h| !h.is_finite()) {
            return bad("levels must be finite".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if self.kind == ExperimentKind::TreeEstimates {
            let t = &self.thresholds;
            if t.tree_generations == 0 || t.tree_replicas == 0 || t.tree_max_size == 0 {
                return bad("tree settings must be positive".into());
            }
            return Ok(());
        }
        if self.n_grid.is_empty() {
            return bad("n_grid is empty".into());
        }
        for &n in &self.n_grid {
            if n <= self.d {
                return bad(format!("n = {n} is too small for degree {}", self.d));
            }
            if (n * self.d) % 2 != 0 {
                return bad(format!("n * d must be even, got n = {n}, d = {}", self.d));
            }
        }
        Ok(())
    }

    /// Canonical JSON of the experiment-defining fields.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`ExperimentConfig::canonical_json`], lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
