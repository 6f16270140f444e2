use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbedOptions, MdsOptions};
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::kmeans::KMeansOptions;
use crate::mmc::MmcOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Euclidean,
    Mmc,
    Rfphate,
}

impl Representation {
    pub const ALL: [Representation; 3] = [Representation::Euclidean, Representation::Mmc, Representation::Rfphate];

    pub fn name(self) -> &'static str {
        match self {
            Representation::Euclidean => "euclidean",
            Representation::Mmc => "mmc",
            Representation::Rfphate => "rfphate",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Representation::ALL
            .iter()
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::UnknownRepresentation(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    /// Defaults to `<path without extension>.schema.toml`.
    #[serde(default)]
    pub schema: Option<PathBuf>,
}

impl DatasetSpec {
    pub fn schema_path(&self) -> PathBuf {
        self.schema.clone().unwrap_or_else(|| default_schema_path(&self.path))
    }
}

pub fn default_schema_path(data: &Path) -> PathBuf {
    data.with_extension("schema.toml")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum DepthToken {
    Depth(usize),
    Word(String),
}

fn default_representations() -> Vec<String> {
    Representation::ALL.iter().map(|r| r.name().to_string()).collect()
}

fn default_depths() -> Vec<DepthToken> {
    vec![DepthToken::Word("none".into()), DepthToken::Depth(5), DepthToken::Depth(10)]
}

/// Everything a run needs. Relative dataset paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    representations: Vec<String>,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub kmeans_tol: f64,
    pub kmeans_max_iter: usize,
    pub cv_folds: usize,
    pub test_fraction: f64,
    pub rf_n_estimators: Vec<usize>,
    rf_max_depth: Vec<DepthToken>,
    pub embed_dim_min: usize,
    pub embed_dim_max: usize,
    pub t_max: usize,
    pub eps: f64,
    pub mds_max_iter: usize,
    pub mds_tol: f64,
    pub subsample_cap: usize,
    pub gap_references: usize,
    pub gap_restarts: usize,
    pub mmc_max_pairs: usize,
    pub mmc_max_iter: usize,
    pub mmc_step: f64,
    pub mmc_tol: f64,
    pub export_assignments: bool,
    #[serde(rename = "dataset")]
    pub datasets: Vec<DatasetSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let km = KMeansOptions::default();
        let mmc = MmcOptions::default();
        let emb = EmbedOptions::default();
        ExperimentConfig {
            seed: 0,
            out_dir: None,
            representations: default_representations(),
            k_min: 3,
            k_max: 100,
            restarts: km.restarts,
            kmeans_tol: km.tol,
            kmeans_max_iter: km.max_iter,
            cv_folds: 5,
            test_fraction: 0.2,
            rf_n_estimators: vec![100, 200, 500],
            rf_max_depth: default_depths(),
            embed_dim_min: emb.dim_min,
            embed_dim_max: emb.dim_max,
            t_max: emb.t_max,
            eps: emb.eps,
            mds_max_iter: emb.mds.max_iter,
            mds_tol: emb.mds.tol,
            subsample_cap: 4000,
            gap_references: 10,
            gap_restarts: 1,
            mmc_max_pairs: mmc.max_pairs,
            mmc_max_iter: mmc.max_iter,
            mmc_step: mmc.step,
            mmc_tol: mmc.tol,
            export_assignments: true,
            datasets: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse and validate a config file, resolving relative paths against
    /// its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in &mut self.datasets {
            fix(&mut d.path);
            if let Some(s) = &mut d.schema {
                fix(s);
            }
        }
        if let Some(o) = &mut self.out_dir {
            fix(o);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config("at least one [[dataset]] block is required".into()));
        }
        self.validate_settings()
    }

    /// Everything `validate` checks except the dataset list, for callers
    /// that supply their own data.
    pub fn validate_settings(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("dataset names must be unique".into());
        }
        if names.iter().any(|n| n.is_empty() || n.contains(['/', '\\'])) {
            return bad("dataset names must be non-empty and contain no path separators".into());
        }
        let reps = self.representations()?;
        if reps.is_empty() {
            return bad("at least one representation is required".into());
        }
        if !(2..=100).contains(&self.k_min) || !(2..=100).contains(&self.k_max) || self.k_min > self.k_max {
            return bad(format!("K range {}..={} must lie within [2, 100]", self.k_min, self.k_max));
        }
        if self.restarts == 0 || self.kmeans_max_iter == 0 {
            return bad("restarts and kmeans_max_iter must be positive".into());
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie strictly between 0 and 1".into());
        }
        if self.rf_n_estimators.is_empty() || self.rf_n_estimators.contains(&0) {
            return bad("rf_n_estimators must be a non-empty list of positive counts".into());
        }
        self.max_depths()?;
        if self.embed_dim_min == 0 || self.embed_dim_min > self.embed_dim_max {
            return bad("embedding dimension range is empty".into());
        }
        if self.t_max == 0 || !(self.eps > 0.0) {
            return bad("t_max must be positive and eps > 0".into());
        }
        if self.subsample_cap < 10 {
            return bad("subsample_cap must be at least 10".into());
        }
        if self.gap_references == 0 || self.gap_restarts == 0 {
            return bad("gap_references and gap_restarts must be positive".into());
        }
        if self.mmc_max_pairs == 0 || !(self.mmc_step > 0.0) {
            return bad("mmc_max_pairs and mmc_step must be positive".into());
        }
        Ok(())
    }

    pub fn representations(&self) -> Result<Vec<Representation>> {
        let mut out = Vec::new();
        for r in &self.representations {
            let rep: Representation = r.parse()?;
            if !out.contains(&rep) {
                out.push(rep);
            }
        }
        Ok(out)
    }

    pub fn set_representations(&mut self, reps: &[Representation]) {
        self.representations = reps.iter().map(|r| r.name().to_string()).collect();
    }

    pub fn max_depths(&self) -> Result<Vec<Option<usize>>> {
        if self.rf_max_depth.is_empty() {
            return Err(Error::Config("rf_max_depth must be non-empty".into()));
        }
        self.rf_max_depth
            .iter()
            .map(|d| match d {
                DepthToken::Depth(0) => Err(Error::Config("max depth 0 is not allowed".into())),
                DepthToken::Depth(v) => Ok(Some(*v)),
                DepthToken::Word(w) if w == "none" => Ok(None),
                DepthToken::Word(w) => Err(Error::Config(format!("unknown max depth `{w}`"))),
            })
            .collect()
    }

    pub fn forest_grid(&self) -> Result<Vec<ForestParams>> {
        let depths = self.max_depths()?;
        let mut grid = Vec::new();
        for &n in &self.rf_n_estimators {
            for &d in &depths {
                grid.push(ForestParams::new(n, d));
            }
        }
        Ok(grid)
    }

    pub fn kmeans_options(&self) -> KMeansOptions {
        KMeansOptions {
            restarts: self.restarts,
            tol: self.kmeans_tol,
            max_iter: self.kmeans_max_iter,
        }
    }

    pub fn gap_kmeans_options(&self) -> KMeansOptions {
        KMeansOptions {
            restarts: self.gap_restarts,
            ..self.kmeans_options()
        }
    }

    pub fn embed_options(&self) -> EmbedOptions {
        EmbedOptions {
            dim_min: self.embed_dim_min,
            dim_max: self.embed_dim_max,
            t_max: self.t_max,
            eps: self.eps,
            mds: MdsOptions {
                max_iter: self.mds_max_iter,
                tol: self.mds_tol,
            },
        }
    }

    pub fn mmc_options(&self) -> MmcOptions {
        MmcOptions {
            max_pairs: self.mmc_max_pairs,
            max_iter: self.mmc_max_iter,
            step: self.mmc_step,
            tol: self.mmc_tol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[[dataset]]
name = "iris"
path = "iris.csv"
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!((cfg.k_min, cfg.k_max, cfg.restarts), (3, 100, 10));
        assert_eq!(cfg.representations().unwrap(), Representation::ALL.to_vec());
        assert_eq!(cfg.forest_grid().unwrap().len(), 9);
        assert_eq!(cfg.datasets[0].schema_path(), PathBuf::from("iris.schema.toml"));
    }

    #[test]
    fn mixed_depth_list() {
        let cfg = ExperimentConfig::from_toml_str(&format!("rf_max_depth = [\"none\", 3]\n{MINIMAL}")).unwrap();
        assert_eq!(cfg.max_depths().unwrap(), vec![None, Some(3)]);
        let err = ExperimentConfig::from_toml_str(&format!("rf_max_depth = [\"deep\"]\n{MINIMAL}")).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn unknown_representation_is_rejected() {
        let err = ExperimentConfig::from_toml_str(&format!("representations = [\"umap\"]\n{MINIMAL}")).unwrap_err();
        assert!(matches!(err, Error::UnknownRepresentation(_)));
    }

    #[test]
    fn invalid_values_are_rejected() {
        for bad in ["k_min = 1", "k_max = 101", "cv_folds = 1", "test_fraction = 1.0", "bogus_key = 3"] {
            let err = ExperimentConfig::from_toml_str(&format!("{bad}\n{MINIMAL}")).unwrap_err();
            assert!(err.is_validation(), "{bad}");
        }
        assert!(ExperimentConfig::from_toml_str("seed = 1").is_err());
    }
}
