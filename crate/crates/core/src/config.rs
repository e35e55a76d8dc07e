//! Run configuration, read from a TOML file.
//!
//! ```toml
//! output_dir = "runs/sbm"
//!
//! [synthetic]
//! blocks = 2
//! per_block = 150
//! p_in = 0.05
//! p_out = 0.005
//! d = 16
//!
//! [injection]
//! clique_count = 2
//! clique_size = 5
//!
//! [model]
//! d_h = 32
//!
//! [train]
//! epochs = 100
//! seed = 0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{generate_sbm, inject_anomalies, load_graph, Graph, InjectionSpec, SbmSpec};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataConfig>,
    pub synthetic: Option<SbmSpec>,
    /// Applied on top of whichever graph source is used.
    pub injection: Option<InjectionSpec>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub output_dir: Option<PathBuf>,
    /// Where Laplacian eigendecompositions are cached.
    pub cache_dir: Option<PathBuf>,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.data.as_mut() {
            rebase(base, &mut d.nodes);
            rebase(base, &mut d.edges);
            if let Some(l) = d.labels.as_mut() {
                rebase(base, l);
            }
        }
        for p in [cfg.output_dir.as_mut(), cfg.cache_dir.as_mut()].into_iter().flatten() {
            rebase(base, p);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Config("give either [data] or [synthetic], not both".into())),
            (None, None) => return Err(Error::Config("no graph source: add a [data] or [synthetic] section".into())),
            _ => {}
        }
        self.model.validate()?;
        self.train.validate()
    }

    /// Loads or generates the graph, then injects anomalies if requested.
    pub fn build_graph(&self) -> Result<Graph> {
        self.validate()?;
        let g = match (&self.data, &self.synthetic) {
            (Some(d), _) => {
                let (g, stats) = load_graph(&d.nodes, &d.edges, d.labels.as_deref())?;
                if stats.self_loops_dropped > 0 {
                    log::warn!("dropped {} self-loops", stats.self_loops_dropped);
                }
                g
            }
            (_, Some(s)) => generate_sbm(s)?,
            (None, None) => unreachable!("validated above"),
        };
        match &self.injection {
            Some(spec) => inject_anomalies(&g, spec),
            None => Ok(g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
output_dir = "out"

[synthetic]
blocks = 2
per_block = 10
p_in = 0.3
p_out = 0.01
d = 4
seed = 3

[injection]
clique_count = 1
clique_size = 3

[model]
d_h = 8
heads = 2
lambda_n = 0.1
no_memory = true

[train]
epochs = 7
lr = 0.01
"#;

    #[test]
    fn parses_sections_and_keeps_defaults() {
        let cfg = RunConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.model.d_h, 8);
        assert_eq!(cfg.model.k, 2);
        assert_eq!(cfg.model.lambda_n, 0.1);
        assert_eq!(cfg.model.lambda_s, 1.0);
        assert!(cfg.model.no_memory);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.seed, 0);
        assert_eq!(cfg.injection.unwrap().attribute_candidates, 50);
        let g = cfg.build_graph().unwrap();
        assert_eq!(g.num_nodes(), 20);
        assert_eq!(g.num_anomalies(), 6);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(RunConfig::from_toml_str("[model]\nd_hidden = 3\n"), Err(Error::Config(_))));
    }

    #[test]
    fn graph_source_is_required_and_unique() {
        assert!(matches!(RunConfig::default().validate(), Err(Error::Config(_))));
        let mut cfg = RunConfig::from_toml_str(SAMPLE).unwrap();
        cfg.data = Some(DataConfig {
            nodes: "a".into(),
            edges: "b".into(),
            labels: None,
        });
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[data]\nnodes = \"x.csv\"\nedges = \"e.csv\"\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.data.unwrap().nodes, dir.path().join("x.csv"));
    }

    #[test]
    fn missing_file_is_a_config_error() {
        assert!(matches!(RunConfig::load(Path::new("/nonexistent/run.toml")), Err(Error::Config(_))));
    }
}
