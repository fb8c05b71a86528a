//! Experiment settings from TOML files and flags, and grid expansion.
//!
//! A config file holds flat keys (`mode`, `k1`, `k2`, ...). A grid file
//! holds the same keys plus a `[vary]` table of lists; the grid is the
//! cartesian product of those lists, in this order: mode, decompose,
//! inference, k1, k2, context_order, window, stride. The first listed
//! dimension varies slowest.

use std::path::{Path, PathBuf};

use aqrag::evalkit::ExperimentConfig;
use aqrag::pipeline::{ContextOrder, InferenceMode};
use aqrag::{ChunkingConfig, IndexMode};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub name: Option<String>,
    pub dataset: Option<PathBuf>,
    pub mode: Option<IndexMode>,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub inference: Option<InferenceMode>,
    pub decompose: Option<bool>,
    pub max_subquestions: Option<usize>,
    pub context_order: Option<ContextOrder>,
    pub window: Option<usize>,
    pub stride: Option<usize>,
    pub limit: Option<usize>,
    pub strict: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vary {
    #[serde(default)]
    pub mode: Vec<IndexMode>,
    #[serde(default)]
    pub decompose: Vec<bool>,
    #[serde(default)]
    pub inference: Vec<InferenceMode>,
    #[serde(default)]
    pub k1: Vec<usize>,
    #[serde(default)]
    pub k2: Vec<usize>,
    #[serde(default)]
    pub context_order: Vec<ContextOrder>,
    #[serde(default)]
    pub window: Vec<usize>,
    #[serde(default)]
    pub stride: Vec<usize>,
}

fn read_toml(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn from_table<T: serde::de::DeserializeOwned>(
    table: toml::Table,
    path: &Path,
) -> Result<T, CliError> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Relative dataset paths in a file resolve against the file's directory.
fn resolve(mut s: Settings, path: &Path) -> Settings {
    if let (Some(ds), Some(dir)) = (&s.dataset, path.parent()) {
        if ds.is_relative() {
            s.dataset = Some(dir.join(ds));
        }
    }
    s
}

pub fn load_settings(path: &Path) -> Result<Settings, CliError> {
    Ok(resolve(from_table(read_toml(path)?, path)?, path))
}

pub fn load_grid(path: &Path) -> Result<(Settings, Vary), CliError> {
    let mut table = read_toml(path)?;
    let vary = match table.remove("vary") {
        Some(toml::Value::Table(t)) => from_table(t, path)?,
        Some(_) => {
            return Err(CliError::Usage(format!(
                "{}: `vary` must be a table",
                path.display()
            )))
        }
        None => Vary::default(),
    };
    Ok((resolve(from_table(table, path)?, path), vary))
}

impl Settings {
    /// `self` with every field set in `over` replaced.
    pub fn overlay(&self, over: &Settings) -> Settings {
        macro_rules! pick {
            ($($f:ident),*) => { Settings { $($f: over.$f.clone().or_else(|| self.$f.clone())),* } };
        }
        pick!(
            name,
            dataset,
            mode,
            k1,
            k2,
            inference,
            decompose,
            max_subquestions,
            context_order,
            window,
            stride,
            limit,
            strict
        )
    }

    pub fn to_config(&self, parallelism: usize) -> Result<ExperimentConfig, CliError> {
        let dataset = self.dataset.clone().ok_or_else(|| {
            CliError::Usage("no dataset given (--dataset or `dataset` in the file)".into())
        })?;
        let mut cfg = ExperimentConfig::new(dataset);
        cfg.parallelism = parallelism;
        cfg.name = self.name.clone().unwrap_or_default();
        cfg.limit = self.limit;
        cfg.strict = self.strict.unwrap_or(false);
        if let Some(m) = self.mode {
            cfg.index_mode = m;
        }
        let p = &mut cfg.pipeline;
        p.k1 = self.k1.unwrap_or(p.k1);
        p.k2 = self.k2.unwrap_or(p.k2);
        p.inference = self.inference.unwrap_or(p.inference);
        p.decompose = self.decompose.unwrap_or(p.decompose);
        p.max_subquestions = self.max_subquestions.unwrap_or(p.max_subquestions);
        p.context_order = self.context_order.unwrap_or(p.context_order);
        p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.chunking = chunking(self.window, self.stride)?;
        Ok(cfg)
    }
}

pub fn chunking(window: Option<usize>, stride: Option<usize>) -> Result<ChunkingConfig, CliError> {
    let d = ChunkingConfig::default();
    ChunkingConfig::new(window.unwrap_or(d.window()), stride.unwrap_or(d.stride()))
        .map_err(|e| CliError::Usage(format!("--window/--stride: {e}")))
}

fn product<T: Clone>(
    runs: Vec<Settings>,
    values: &[T],
    set: impl Fn(&mut Settings, T),
) -> Vec<Settings> {
    if values.is_empty() {
        return runs;
    }
    let mut out = Vec::with_capacity(runs.len() * values.len());
    for run in runs {
        for v in values {
            let mut s = run.clone();
            set(&mut s, v.clone());
            out.push(s);
        }
    }
    out
}

/// One settings value per grid point, in grid order.
pub fn expand(base: &Settings, vary: &Vary) -> Vec<Settings> {
    let runs = vec![base.clone()];
    let runs = product(runs, &vary.mode, |s, v| s.mode = Some(v));
    let runs = product(runs, &vary.decompose, |s, v| s.decompose = Some(v));
    let runs = product(runs, &vary.inference, |s, v| s.inference = Some(v));
    let runs = product(runs, &vary.k1, |s, v| s.k1 = Some(v));
    let runs = product(runs, &vary.k2, |s, v| s.k2 = Some(v));
    let runs = product(runs, &vary.context_order, |s, v| s.context_order = Some(v));
    let runs = product(runs, &vary.window, |s, v| s.window = Some(v));
    product(runs, &vary.stride, |s, v| s.stride = Some(v))
}
