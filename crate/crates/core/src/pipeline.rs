//! Run configuration and the stage functions behind the command line.
//!
//! Every CSV written here starts with a `# config_hash=<hex> seed=<n>`
//! line. The hash covers the resolved configuration except where outputs
//! go, so it changes exactly when the results could.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ale::{ale_all, variable_importance, write_curves_csv, write_vi_csv, DEFAULT_BINS};
use crate::dataset::{build_features, write_design_csv, AssetData, DatasetKind, FeatureSet, Horizon, TargetSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, fitted_acf, Evaluation, McsOptions};
use crate::harness::{designs_for, fit_at, run_forecasts, ForecastTable, HarnessConfig};
use crate::models::{parse_model_list, ModelId};
use crate::realized::RealizedSeries;
use crate::risk::{var_backtest, VarReport};
use crate::rng::SeedStream;
use crate::sim::{simulate_assets, simulate_covariates, SimConfig};
use crate::timeseries::SplitScheme;

pub const SEED_ENV: &str = "VOLAFORGE_SEED";
pub const STAGES: [&str; 5] = ["features", "forecast", "evaluate", "ale", "var"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSection {
    pub assets: Vec<String>,
    #[serde(flatten)]
    pub process: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub level: f64,
    pub bootstrap_reps: usize,
    pub block_length: Option<usize>,
    /// Reference model of the decile analysis.
    pub benchmark: String,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { level: 0.90, bootstrap_reps: 5000, block_length: None, benchmark: "har".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AleSection {
    pub models: Vec<String>,
    pub bins: usize,
    pub acf_lags: usize,
}

impl Default for AleSection {
    fn default() -> Self {
        Self { models: vec!["en".into(), "rf".into()], bins: DEFAULT_BINS, acf_lags: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarSection {
    pub alpha: f64,
    /// Days of standardized residuals behind each VaR; `None` uses the
    /// training plus validation length.
    pub window: Option<usize>,
}

impl Default for VarSection {
    fn default() -> Self {
        Self { alpha: 0.05, window: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Directory with `<asset>/realized.csv` and covariate files.
    pub data_dir: Option<PathBuf>,
    /// Assets to use from `data_dir`; empty means every subdirectory.
    pub assets: Vec<String>,
    pub dataset: String,
    pub horizon: String,
    pub split: String,
    pub models: Vec<String>,
    pub stages: Vec<String>,
    pub simulate: Option<SimulateSection>,
    pub harness: HarnessConfig,
    pub evaluation: EvaluationSection,
    pub ale: AleSection,
    pub var: VarSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            data_dir: None,
            assets: Vec::new(),
            dataset: "m_har".into(),
            horizon: "day".into(),
            split: "70-10-20".into(),
            models: vec!["all".into()],
            stages: vec!["forecast".into(), "evaluate".into(), "ale".into(), "var".into()],
            simulate: None,
            harness: HarnessConfig::default(),
            evaluation: EvaluationSection::default(),
            ale: AleSection::default(),
            var: VarSection::default(),
        }
    }
}

/// A configuration with every string field parsed.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub dataset: DatasetKind,
    pub horizon: Horizon,
    pub split: SplitScheme,
    pub models: Vec<ModelId>,
    pub ale_models: Vec<ModelId>,
    pub benchmark: ModelId,
    pub hash: String,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::Parse { path: path.display().to_string(), message: e.to_string() })?;
        // Relative paths in the file are taken relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(d) = &cfg.data_dir {
            if d.is_relative() {
                cfg.data_dir = Some(base.join(d));
            }
        }
        Ok(cfg)
    }

    /// Applies `VOLAFORGE_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}='{v}' is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// Checks everything at once and reports every problem found.
    pub fn resolve(&self) -> Result<Resolved> {
        self.resolve_with(true)
    }

    /// As `resolve`, optionally skipping the data-source checks for
    /// commands that only read earlier outputs.
    pub fn resolve_with(&self, need_data: bool) -> Result<Resolved> {
        let mut problems = Vec::new();
        let mut note = |r: Result<()>| {
            match r {
                Err(Error::Config(m)) => problems.push(m),
                Err(e) => problems.push(e.to_string()),
                Ok(()) => {}
            }
        };
        let dataset = DatasetKind::parse(&self.dataset);
        let horizon = Horizon::parse(&self.horizon);
        let split = SplitScheme::parse(&self.split);
        let models = parse_model_list(&self.models.join(","));
        let ale_models = parse_model_list(&self.ale.models.join(","));
        let benchmark = self.evaluation.benchmark.parse::<ModelId>();
        let mut unknown = Vec::new();
        if let Err(bad) = &models {
            unknown.extend(bad.iter().cloned());
        }
        if let Err(bad) = &ale_models {
            unknown.extend(bad.iter().cloned());
        }
        if benchmark.is_err() {
            unknown.push(self.evaluation.benchmark.clone());
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownModels { bad: unknown, roster: ModelId::roster_ids() });
        }
        note(dataset.as_ref().map(|_| ()).map_err(clone_err));
        note(horizon.as_ref().map(|_| ()).map_err(clone_err));
        note(split.as_ref().map(|_| ()).map_err(clone_err));
        note(self.harness.validate());
        if matches!(&models, Ok(m) if m.is_empty()) {
            problems.push("no models requested".into());
        }
        for s in &self.stages {
            if !STAGES.contains(&s.as_str()) {
                problems.push(format!("unknown stage '{s}' (valid: {})", STAGES.join(", ")));
            }
        }
        if !(self.evaluation.level > 0.0 && self.evaluation.level < 1.0) {
            problems.push("evaluation.level must lie in (0, 1)".into());
        }
        if self.evaluation.bootstrap_reps == 0 {
            problems.push("evaluation.bootstrap_reps must be positive".into());
        }
        if self.ale.bins == 0 {
            problems.push("ale.bins must be positive".into());
        }
        if !(self.var.alpha > 0.0 && self.var.alpha < 1.0) {
            problems.push("var.alpha must lie in (0, 1)".into());
        }
        match (&self.simulate, &self.data_dir) {
            _ if !need_data => {}
            (None, None) => problems.push("either data_dir or a [simulate] section is required".into()),
            (Some(_), Some(_)) => problems.push("data_dir and [simulate] are mutually exclusive".into()),
            (Some(sim), None) => {
                if sim.assets.is_empty() {
                    problems.push("simulate.assets is empty".into());
                }
                match sim.process.validate() {
                    Err(Error::Config(m)) => problems.push(m),
                    Err(e) => problems.push(e.to_string()),
                    Ok(()) => {}
                }
            }
            (None, Some(dir)) => {
                if !dir.is_dir() {
                    problems.push(format!("data_dir {} does not exist", dir.display()));
                }
                for a in &self.assets {
                    let f = dir.join(a).join("realized.csv");
                    if !f.is_file() {
                        problems.push(format!("missing {}", f.display()));
                    }
                }
            }
        }
        if matches!(horizon, Ok(h) if h != Horizon::Day) && self.stages.iter().any(|s| s == "var") {
            problems.push("the var stage needs horizon = \"day\"".into());
        }
        if !problems.is_empty() {
            return Err(Error::ConfigProblems(problems));
        }
        let (Ok(dataset), Ok(horizon), Ok(split), Ok(models), Ok(ale_models), Ok(benchmark)) =
            (dataset, horizon, split, models, ale_models, benchmark)
        else {
            unreachable!("parse failures were reported above")
        };
        Ok(Resolved { config: self.clone(), dataset, horizon, split, models, ale_models, benchmark, hash: self.hash() })
    }

    /// Hash of every field that can change results.
    pub fn hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.output_dir = PathBuf::new();
        let json = serde_json::to_string(&semantic).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(m.clone()),
        other => Error::Config(other.to_string()),
    }
}

impl Resolved {
    pub fn header(&self) -> String {
        format!("config_hash={} seed={}", self.hash, self.config.seed)
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    pub fn harness(&self) -> HarnessConfig {
        HarnessConfig { seed: self.config.seed, ..self.config.harness.clone() }
    }

    pub fn target(&self) -> TargetSpec {
        TargetSpec { horizon: self.horizon }
    }
}

/// Writes `body` after a comment line holding `header`.
fn prepend_header(path: &Path, header: &str) -> Result<()> {
    let body = fs::read_to_string(path)?;
    fs::write(path, format!("# {header}\n{body}"))?;
    Ok(())
}

/// Simulates the configured assets with their covariates. The process
/// seed is derived from the run seed.
pub fn simulate_data(section: &SimulateSection, seed: u64) -> Result<Vec<AssetData>> {
    let stream = SeedStream::new(seed).child("simulate");
    let process = SimConfig { seed: stream.derive_seed(), ..section.process.clone() };
    let paths = simulate_assets(&process, &section.assets)?;
    paths
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let realized = RealizedSeries::from_panel(&p.panel)?;
            let cov_seed = stream.child("covariates").child(k).derive_seed();
            let covariates = simulate_covariates(&realized.days, &realized.dates, cov_seed)?;
            Ok(AssetData { realized, covariates })
        })
        .collect()
}

/// Writes `<dir>/<asset>/realized.csv` and one file per covariate.
pub fn write_data(assets: &[AssetData], dir: &Path, header: &str) -> Result<()> {
    for a in assets {
        let d = dir.join(a.id());
        fs::create_dir_all(&d)?;
        let f = d.join("realized.csv");
        a.realized.write_csv(&f)?;
        prepend_header(&f, header)?;
        for (name, series) in &a.covariates {
            let f = d.join(format!("{name}.csv"));
            series.write_csv(&f)?;
            prepend_header(&f, header)?;
        }
    }
    Ok(())
}

/// Reads the assets of a data directory, in name order when no list is given.
pub fn load_data(dir: &Path, assets: &[String]) -> Result<Vec<AssetData>> {
    let names: Vec<String> = if assets.is_empty() {
        let mut v: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("realized.csv").is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        v.sort();
        v
    } else {
        assets.to_vec()
    };
    if names.is_empty() {
        return Err(Error::Empty(format!("no <asset>/realized.csv under {}", dir.display())));
    }
    names
        .iter()
        .map(|n| {
            let realized = RealizedSeries::read_csv(n.clone(), dir.join(n).join("realized.csv"))?;
            AssetData::load_covariates(realized, &dir.join(n)).and_then(|mut a| {
                // Shared series may also live at the top of the data directory.
                let shared = AssetData::load_covariates(a.realized.clone(), dir)?;
                for (k, v) in shared.covariates {
                    a.covariates.entry(k).or_insert(v);
                }
                Ok(a)
            })
        })
        .collect()
}

/// Assets of a run, simulated (and written under `data/`) or loaded.
pub fn obtain_data(r: &Resolved) -> Result<Vec<AssetData>> {
    match (&r.config.simulate, &r.config.data_dir) {
        (Some(sim), _) => {
            let assets = simulate_data(sim, r.config.seed)?;
            write_data(&assets, &r.out("data"), &r.header())?;
            Ok(assets)
        }
        (None, Some(dir)) => load_data(dir, &r.config.assets),
        (None, None) => Err(Error::Config("no data source".into())),
    }
}

pub fn stage_features(r: &Resolved, assets: &[AssetData]) -> Result<Vec<PathBuf>> {
    let dir = r.out("features");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for a in assets {
        let designs = designs_for(a, &r.models, r.dataset, r.target(), r.split)?;
        for ((kind, set), d) in designs {
            let path = dir.join(format!("{}_{kind}_{}.csv", a.id(), set_name(set)));
            write_design_csv(&d, &path, Some(&r.header()))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn set_name(set: FeatureSet) -> &'static str {
    match set {
        FeatureSet::Har => "har",
        FeatureSet::LogHar => "loghar",
        FeatureSet::LevHar => "levhar",
        FeatureSet::Shar => "shar",
        FeatureSet::Harq => "harq",
    }
}

pub fn stage_forecast(r: &Resolved, assets: &[AssetData]) -> Result<ForecastTable> {
    let table = run_forecasts(assets, &r.models, r.dataset, r.target(), r.split, &r.harness())?;
    table.write_csv(r.out("forecasts.csv"), Some(&r.header()))?;
    Ok(table)
}

pub fn stage_evaluate(r: &Resolved, table: &ForecastTable) -> Result<Evaluation> {
    let e = &r.config.evaluation;
    let opts = McsOptions { level: e.level, reps: e.bootstrap_reps, block_length: e.block_length };
    let ev = evaluate(table, r.horizon.days(), opts, r.config.seed)?;
    let h = r.header();
    ev.write_relative_mse(r.out("relmse.csv"), Some(&h))?;
    ev.write_mcs(r.out("mcs.csv"), Some(&h))?;
    ev.write_asset_detail(r.out("mcs_detail.csv"), Some(&h))?;
    if ev.models.contains(&r.benchmark) {
        ev.write_deciles(r.benchmark, r.out("deciles.csv"), Some(&h))?;
    } else {
        log::info!("benchmark {} not among the forecasts; skipping deciles", r.benchmark);
    }
    Ok(ev)
}

/// ALE curves, importance and fitted-series ACF of the configured models,
/// each fitted on the window used for the first test day.
pub fn stage_ale(r: &Resolved, assets: &[AssetData]) -> Result<()> {
    let dir = r.out("ale");
    fs::create_dir_all(&dir)?;
    let h = r.header();
    let cfg = r.harness();
    let mut acf_rows: Vec<(String, ModelId, Vec<f64>, f64, bool)> = Vec::new();
    for a in assets {
        let designs = designs_for(a, &r.ale_models, r.dataset, r.target(), r.split)?;
        for &m in &r.ale_models {
            let d = &designs[&m.design(r.dataset)];
            let i = d.fm.split.test.start;
            let stream = SeedStream::new(cfg.seed).child(a.id()).child("explain").child(m.id());
            let fit = fit_at(m, d, i, &cfg, &stream)?;
            let rows: Vec<Vec<f64>> = fit.train.clone().map(|k| d.fm.row(k).to_vec()).collect();
            let curves = ale_all(&fit.model, &rows, &d.fm.column_names, r.config.ale.bins)?;
            let vi = variable_importance(&curves, &rows)?;
            let stem = format!("{}_{}", a.id(), m.id());
            write_curves_csv(&curves, dir.join(format!("{stem}_curves.csv")), Some(&h))?;
            write_vi_csv(&vi, dir.join(format!("{stem}_vi.csv")), Some(&h))?;
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let lags = r.config.ale.acf_lags.min(rows.len().saturating_sub(1));
            let acf = fitted_acf(&fit.model, &refs, lags)?;
            acf_rows.push((a.id().to_string(), m, acf.values, acf.band, acf.constant));
        }
    }
    let path = dir.join("acf.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["asset", "model", "lag", "acf", "band", "constant"])?;
    for (asset, m, values, band, constant) in &acf_rows {
        if *constant {
            w.write_record([asset.clone(), m.id(), "NA".into(), "NA".into(), band.to_string(), "true".into()])?;
        }
        for (lag, v) in values.iter().enumerate() {
            w.write_record([asset.clone(), m.id(), lag.to_string(), v.to_string(), band.to_string(), "false".into()])?;
        }
    }
    w.flush()?;
    drop(w);
    prepend_header(&path, &h)
}

pub fn stage_var(r: &Resolved, assets: &[AssetData], table: &ForecastTable) -> Result<VarReport> {
    let window = match r.config.var.window {
        Some(w) => w,
        None => {
            let a = assets.first().ok_or_else(|| Error::Empty("no assets".into()))?;
            let d = build_features(a, DatasetKind::MHar, FeatureSet::Har, r.target(), r.split)?;
            d.fm.split.train.len() + d.fm.split.validation.len()
        }
    };
    let realized: Vec<RealizedSeries> = assets.iter().map(|a| a.realized.clone()).collect();
    let report = var_backtest(table, &realized, window, r.config.var.alpha)?;
    report.write_csv(r.out("var.csv"), Some(&r.header()))?;
    Ok(report)
}

/// Summary of a pipeline run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub files: Vec<PathBuf>,
    pub missing_forecasts: usize,
}

/// Runs the configured stages in order. Later stages that need forecasts
/// use the table produced earlier in the run, or `forecasts.csv` from a
/// previous one.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let r = cfg.resolve()?;
    fs::create_dir_all(&r.config.output_dir)?;
    let assets = obtain_data(&r)?;
    let want = |s: &str| r.config.stages.iter().any(|x| x == s);
    let mut summary = RunSummary { config_hash: r.hash.clone(), seed: r.config.seed, ..Default::default() };
    if want("features") {
        summary.files.extend(stage_features(&r, &assets)?);
    }
    let mut table = None;
    if want("forecast") {
        let t = stage_forecast(&r, &assets)?;
        summary.missing_forecasts = t.missing();
        summary.files.push(r.out("forecasts.csv"));
        table = Some(t);
    }
    let need_table = want("evaluate") || want("var");
    if need_table && table.is_none() {
        table = Some(ForecastTable::read_csv(r.out("forecasts.csv"))?);
    }
    if want("evaluate") {
        stage_evaluate(&r, table.as_ref().expect("loaded"))?;
        summary.files.extend(["relmse.csv", "mcs.csv", "mcs_detail.csv"].map(|f| r.out(f)));
    }
    if want("ale") {
        stage_ale(&r, &assets)?;
        summary.files.push(r.out("ale"));
    }
    if want("var") {
        stage_var(&r, &assets, table.as_ref().expect("loaded"))?;
        summary.files.push(r.out("var.csv"));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 3
        models = ["har", "rf"]
        [simulate]
        assets = ["A"]
        days = 400
        vol_model = { kind = "constant", sigma = 0.01 }
    "#;

    #[test]
    fn parses_and_hashes() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.models, vec![ModelId::Har, ModelId::RandomForest]);
        assert_eq!(r.harness().grid.lambdas.len(), 1000);
        let mut moved = cfg.clone();
        moved.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(moved.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = 4;
        assert_ne!(other.hash(), cfg.hash());
        let mut grid = cfg.clone();
        grid.harness.forest_trees = 10;
        assert_ne!(grid.hash(), cfg.hash());
    }

    #[test]
    fn reports_all_problems() {
        let mut cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        cfg.horizon = "year".into();
        cfg.split = "50-50".into();
        cfg.stages.push("plot".into());
        let Err(Error::ConfigProblems(p)) = cfg.resolve() else { panic!() };
        assert_eq!(p.len(), 3, "{p:?}");
        cfg.models.push("xgboost".into());
        let Err(Error::UnknownModels { bad, roster }) = cfg.resolve() else { panic!() };
        assert_eq!(bad, vec!["xgboost"]);
        assert_eq!(roster.len(), 22);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::from_toml_str("sead = 3").is_err());
    }
}
