//! Run configuration: defaults, overlaid by a JSON config file, overlaid by
//! command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use grag_core::eval::DEFAULT_K_LIST;
use grag_core::{GnnConfig, GraphBuilderConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Toy,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub index: PathBuf,
    pub gnn: GnnConfig,
    pub seed: u64,
    /// Parameter file; overrides `gnn` and `seed` when set.
    pub params: Option<PathBuf>,
    pub graph_builder: GraphBuilderConfig,
    pub generator: GeneratorKind,
    pub k: usize,
    pub k_list: Vec<usize>,
    pub out: PathBuf,
    pub max_tokens: usize,
    /// Output bias of the toy decoder's end token.
    pub end_bias: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            index: PathBuf::from("grag.idx"),
            gnn: GnnConfig::default(),
            seed: 42,
            params: None,
            graph_builder: GraphBuilderConfig::default(),
            generator: GeneratorKind::Toy,
            k: 5,
            k_list: DEFAULT_K_LIST.to_vec(),
            out: PathBuf::from("bench_out"),
            max_tokens: 16,
            end_bias: 0.0,
        }
    }
}

/// Every field optional; only what is present overrides the defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub gnn: Option<GnnConfig>,
    pub seed: Option<u64>,
    pub params: Option<PathBuf>,
    pub graph_builder: Option<GraphBuilderConfig>,
    pub generator: Option<GeneratorKind>,
    pub k: Option<usize>,
    pub k_list: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub max_tokens: Option<usize>,
    pub end_bias: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub seed: Option<u64>,
    pub params: Option<PathBuf>,
    pub generator: Option<GeneratorKind>,
    pub k: Option<usize>,
    pub k_list: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub max_tokens: Option<usize>,
}

macro_rules! overlay {
    ($cfg:ident, $src:ident, $($field:ident),+) => {
        $(if let Some(v) = $src.$field { $cfg.$field = v; })+
    };
}

impl RunConfig {
    pub fn resolve(file: Option<ConfigFile>, flags: FlagOverrides) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            overlay!(cfg, f, index, gnn, seed, graph_builder, generator, k, k_list, out, max_tokens, end_bias);
            if f.corpus.is_some() {
                cfg.corpus = f.corpus;
            }
            if f.params.is_some() {
                cfg.params = f.params;
            }
        }
        let f = flags;
        overlay!(cfg, f, index, seed, generator, k, k_list, out, max_tokens);
        if f.corpus.is_some() {
            cfg.corpus = f.corpus;
        }
        if f.params.is_some() {
            cfg.params = f.params;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.k == 0 {
            return Err(CliError::Usage("k must be >= 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(CliError::Usage("max_tokens must be >= 1".into()));
        }
        grag_core::eval::normalize_k_list(&self.k_list)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if self.params.is_none() && self.gnn.input_dim != self.graph_builder.feature_dim {
            return Err(CliError::Config(format!(
                "gnn.input_dim ({}) must equal graph_builder.feature_dim ({})",
                self.gnn.input_dim, self.graph_builder.feature_dim
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
