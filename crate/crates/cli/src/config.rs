//! Input files: TOML for panels and parameter sets, JSON for trees, models,
//! claims and strategies. Parse failures carry the file and line.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use indiff_core::binomial::{BinomialModel, BinomialModelFile};
use indiff_core::pareto::PanelConfig;
use indiff_core::tails::bns::BnsParams;
use indiff_core::tails::levy::LevyTriplet;
use indiff_core::tree::TreeFile;
use indiff_core::{MarketMakerPanel, ScenarioTree};
use serde::de::DeserializeOwned;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub struct ConfigError {
    pub file: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.file.display(), line, self.message),
            None => write!(f, "{}: {}", self.file.display(), self.message),
        }
    }
}

impl ConfigError {
    fn new(file: &Path, line: Option<usize>, message: impl Into<String>) -> Self {
        Self { file: file.to_path_buf(), line, message: message.into() }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::new(path, None, e.to_string()))
}

pub fn json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| ConfigError::new(path, Some(e.line()), e.to_string()))
}

pub fn toml<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = read(path)?;
    toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        ConfigError::new(path, line, e.message().to_string())
    })
}

fn semantic<T>(path: &Path, r: indiff_core::Result<T>) -> Result<T, ConfigError> {
    r.map_err(|e| ConfigError::new(path, None, e.to_string()))
}

pub fn tree(path: &Path) -> Result<ScenarioTree, ConfigError> {
    let file: TreeFile = json(path)?;
    semantic(path, ScenarioTree::from_file(file))
}

pub fn panel(path: &Path) -> Result<MarketMakerPanel, ConfigError> {
    let cfg: PanelConfig = toml(path)?;
    semantic(path, MarketMakerPanel::from_config(cfg))
}

pub fn model(path: &Path) -> Result<BinomialModel, ConfigError> {
    let file: BinomialModelFile = json(path)?;
    semantic(path, BinomialModel::from_file(file))
}

pub fn triplet(path: &Path) -> Result<LevyTriplet, ConfigError> {
    let t: LevyTriplet = toml(path)?;
    semantic(path, t.validate())?;
    Ok(t)
}

pub fn bns(path: &Path) -> Result<BnsParams, ConfigError> {
    let p: BnsParams = toml(path)?;
    semantic(path, p.validate())?;
    Ok(p)
}

/// A claim is either leaf-id keyed or a list in leaf order.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ClaimFile {
    ById(BTreeMap<String, f64>),
    InOrder(Vec<f64>),
}

pub fn claim(path: &Path, tree: &ScenarioTree) -> Result<Vec<f64>, ConfigError> {
    match json::<ClaimFile>(path)? {
        ClaimFile::InOrder(h) if h.len() == tree.num_leaves() => Ok(h),
        ClaimFile::InOrder(h) => Err(ConfigError::new(
            path,
            None,
            format!("claim lists {} values for {} leaves", h.len(), tree.num_leaves()),
        )),
        ClaimFile::ById(map) => {
            if let Some(id) = map.keys().find(|id| tree.lookup(id).is_none_or(|n| !tree.is_leaf(n))) {
                return Err(ConfigError::new(path, None, format!("claim names {id}, which is not a leaf")));
            }
            tree.leaves()
                .iter()
                .map(|&l| {
                    let id = tree.id(l);
                    map.get(id).copied().ok_or_else(|| ConfigError::new(path, None, format!("no claim value for leaf {id}")))
                })
                .collect()
        }
    }
}

pub fn strategy(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, ConfigError> {
    json(path)
}

/// Increment samples: one number per line, an optional header and `#`
/// comments are skipped.
pub fn samples(path: &Path) -> Result<Vec<f64>, ConfigError> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() || field.starts_with('#') {
            continue;
        }
        match field.parse::<f64>() {
            Ok(x) => out.push(x),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(ConfigError::new(path, Some(i + 1), format!("{field:?}: {e}"))),
        }
    }
    Ok(out)
}
