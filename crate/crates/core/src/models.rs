//! The model roster and the common prediction interface.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetKind, FeatureSet};
use crate::error::{Error, Result};
use crate::linear::LinearFit;
use crate::nn::{SeedEnsemble, TrainedNetwork};
use crate::tree::{RegressionTree, TreeEnsemble};

/// Anything that maps a feature row to a forecast. Implementations must be
/// safe to call from several threads at once.
pub trait Predictor: Sync {
    fn predict(&self, row: &[f64]) -> Result<f64>;
}

impl Predictor for LinearFit<f64> {
    fn predict(&self, row: &[f64]) -> Result<f64> {
        LinearFit::predict(self, row)
    }
}

impl Predictor for RegressionTree<f64> {
    fn predict(&self, row: &[f64]) -> Result<f64> {
        RegressionTree::predict(self, row)
    }
}

impl Predictor for TreeEnsemble<f64> {
    fn predict(&self, row: &[f64]) -> Result<f64> {
        TreeEnsemble::predict(self, row)
    }
}

impl Predictor for TrainedNetwork<f64> {
    fn predict(&self, row: &[f64]) -> Result<f64> {
        TrainedNetwork::predict(self, row)
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for F {
    fn predict(&self, row: &[f64]) -> Result<f64> {
        Ok(self(row))
    }
}

/// The mean forecast of the best `top` networks of a seed ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct TopNetworks {
    pub ensemble: SeedEnsemble<f64>,
    pub top: usize,
}

impl Predictor for TopNetworks {
    fn predict(&self, row: &[f64]) -> Result<f64> {
        self.ensemble.predict_top(row, self.top.min(self.ensemble.members.len()))
    }
}

/// A fitted model of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Linear(LinearFit<f64>),
    Trees(TreeEnsemble<f64>),
    Networks(TopNetworks),
}

impl Predictor for FittedModel {
    fn predict(&self, row: &[f64]) -> Result<f64> {
        match self {
            FittedModel::Linear(m) => Predictor::predict(m, row),
            FittedModel::Trees(m) => Predictor::predict(m, row),
            FittedModel::Networks(m) => m.predict(row),
        }
    }
}

/// How a model is re-estimated through the test period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowPolicy {
    /// Training and validation merged into one rolling window.
    RollingMerged,
    /// Rolling training block, hyperparameters tuned on the rolling
    /// validation block that follows it.
    RollingTuned,
    /// Estimated once before the test period.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelId {
    Har,
    HarX,
    LogHar,
    LevHar,
    Shar,
    Harq,
    Ridge,
    Lasso,
    ElasticNet,
    AdaptiveLasso,
    PostLasso,
    Bagging,
    RandomForest,
    GradientBoosting,
    /// Architecture `arch` in 1..=4 averaged over the best `top` of the seed ensemble.
    Nn { arch: u8, top: u8 },
}

impl ModelId {
    /// The 22 models, in table order.
    pub fn roster() -> Vec<ModelId> {
        let mut v = vec![
            ModelId::Har,
            ModelId::HarX,
            ModelId::LogHar,
            ModelId::LevHar,
            ModelId::Shar,
            ModelId::Harq,
            ModelId::Ridge,
            ModelId::Lasso,
            ModelId::ElasticNet,
            ModelId::AdaptiveLasso,
            ModelId::PostLasso,
            ModelId::Bagging,
            ModelId::RandomForest,
            ModelId::GradientBoosting,
        ];
        for arch in 1..=4 {
            v.push(ModelId::Nn { arch, top: 1 });
            v.push(ModelId::Nn { arch, top: 10 });
        }
        v
    }

    /// Command-line identifier, e.g. `har-x` or `nn2-10`.
    pub fn id(&self) -> String {
        match self {
            ModelId::Har => "har".into(),
            ModelId::HarX => "har-x".into(),
            ModelId::LogHar => "loghar".into(),
            ModelId::LevHar => "levhar".into(),
            ModelId::Shar => "shar".into(),
            ModelId::Harq => "harq".into(),
            ModelId::Ridge => "rr".into(),
            ModelId::Lasso => "la".into(),
            ModelId::ElasticNet => "en".into(),
            ModelId::AdaptiveLasso => "a-la".into(),
            ModelId::PostLasso => "p-la".into(),
            ModelId::Bagging => "bg".into(),
            ModelId::RandomForest => "rf".into(),
            ModelId::GradientBoosting => "gb".into(),
            ModelId::Nn { arch, top } => format!("nn{arch}-{top}"),
        }
    }

    /// Display label as used in result tables, e.g. `HAR-X` or `NN2^10`.
    pub fn label(&self) -> String {
        match self {
            ModelId::Har => "HAR".into(),
            ModelId::HarX => "HAR-X".into(),
            ModelId::LogHar => "LogHAR".into(),
            ModelId::LevHar => "LevHAR".into(),
            ModelId::Shar => "SHAR".into(),
            ModelId::Harq => "HARQ".into(),
            ModelId::Ridge => "RR".into(),
            ModelId::Lasso => "LA".into(),
            ModelId::ElasticNet => "EN".into(),
            ModelId::AdaptiveLasso => "A-LA".into(),
            ModelId::PostLasso => "P-LA".into(),
            ModelId::Bagging => "BG".into(),
            ModelId::RandomForest => "RF".into(),
            ModelId::GradientBoosting => "GB".into(),
            ModelId::Nn { arch, top } => format!("NN{arch}^{top}"),
        }
    }

    pub fn policy(&self) -> WindowPolicy {
        match self {
            ModelId::Har
            | ModelId::HarX
            | ModelId::LogHar
            | ModelId::LevHar
            | ModelId::Shar
            | ModelId::Harq
            | ModelId::Bagging
            | ModelId::RandomForest => WindowPolicy::RollingMerged,
            ModelId::Ridge
            | ModelId::Lasso
            | ModelId::ElasticNet
            | ModelId::AdaptiveLasso
            | ModelId::PostLasso
            | ModelId::GradientBoosting => WindowPolicy::RollingTuned,
            ModelId::Nn { .. } => WindowPolicy::Fixed,
        }
    }

    /// The design this model consumes when the run uses `dataset`.
    /// Plain HAR never sees the exogenous covariates; every other model
    /// does in M_ALL.
    pub fn design(&self, dataset: DatasetKind) -> (DatasetKind, FeatureSet) {
        match self {
            ModelId::Har => (DatasetKind::MHar, FeatureSet::Har),
            ModelId::LogHar => (dataset, FeatureSet::LogHar),
            ModelId::LevHar => (dataset, FeatureSet::LevHar),
            ModelId::Shar => (dataset, FeatureSet::Shar),
            ModelId::Harq => (dataset, FeatureSet::Harq),
            _ => (dataset, FeatureSet::Har),
        }
    }

    pub fn is_network(&self) -> bool {
        matches!(self, ModelId::Nn { .. })
    }

    /// All accepted identifiers, for error messages.
    pub fn roster_ids() -> Vec<String> {
        Self::roster().iter().map(ModelId::id).collect()
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    /// Accepts command-line ids and table labels, case-insensitively.
    /// A bare `nnK` means the ten-network average `nnK-10`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace('_', "-");
        if let Some(m) = Self::roster().into_iter().find(|m| m.id() == t || m.label().to_ascii_lowercase() == t) {
            return Ok(m);
        }
        let alias = match t.as_str() {
            "harx" => Some(ModelId::HarX),
            "ridge" => Some(ModelId::Ridge),
            "lasso" => Some(ModelId::Lasso),
            "ala" => Some(ModelId::AdaptiveLasso),
            "pla" => Some(ModelId::PostLasso),
            "ba" => Some(ModelId::Bagging),
            _ => None,
        };
        if let Some(m) = alias {
            return Ok(m);
        }
        if let Some(rest) = t.strip_prefix("nn") {
            let (a, top) = match rest.split_once(['-', '^']) {
                Some((a, k)) => (a, k),
                None => (rest, "10"),
            };
            if let (Ok(arch @ 1..=4), Ok(top @ (1 | 10))) = (a.parse::<u8>(), top.parse::<u8>()) {
                return Ok(ModelId::Nn { arch, top });
            }
        }
        Err(Error::InvalidInput(format!("unknown model '{s}'; expected one of {}", Self::roster_ids().join(", "))))
    }
}

/// Parses a comma-separated model list, reporting every unknown id at once.
pub fn parse_model_list(s: &str) -> std::result::Result<Vec<ModelId>, Vec<String>> {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part.eq_ignore_ascii_case("all") {
            ok.extend(ModelId::roster());
            continue;
        }
        match part.parse::<ModelId>() {
            Ok(m) => {
                if !ok.contains(&m) {
                    ok.push(m)
                }
            }
            Err(_) => bad.push(part.to_string()),
        }
    }
    if bad.is_empty() {
        Ok(ok)
    } else {
        Err(bad)
    }
}
