//! Experiment configuration: a TOML or JSON file, then command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stuperf::evaluate::{default_grid, Protocol};
use stuperf::explain::{ShapMethod, DEFAULT_BACKGROUND};
use stuperf::{Family, ModelParams, ProtocolName, Schema};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlanSpec {
    /// `RHO`, `CV5` or `CV10x10`.
    Named(String),
    Custom(Protocol),
}

impl PlanSpec {
    pub fn resolve(&self) -> Result<Protocol, Failure> {
        let p = match self {
            PlanSpec::Named(s) => match s.to_ascii_uppercase().as_str() {
                "RHO" => Protocol::RHO,
                "CV5" => Protocol::CV5,
                "CV10X10" => Protocol::CV10X10,
                _ => {
                    return Err(Failure::usage(format!(
                        "unknown split plan '{s}', expected RHO, CV5, CV10x10 or a {{kind = ...}} table"
                    )))
                }
            },
            PlanSpec::Custom(p) => *p,
        };
        p.validate().map_err(Failure::usage)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSource {
    /// The configuration reported as tuned for each family.
    Reference,
    /// The selection stored by `tune` in the output directory.
    Tuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub folds: usize,
    pub protocols: Vec<String>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            folds: 5,
            protocols: vec!["SF".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    /// Report stem written by `evaluate`, e.g. `MLP_SF_CV10x10`.
    pub run: String,
    pub split: usize,
    pub background: usize,
    /// Coalition budget; defaults to 2M + 2048.
    pub coalitions: Option<usize>,
    pub method: ShapMethod,
    pub top: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            run: "MLP_SF_CV10x10".into(),
            split: 0,
            background: DEFAULT_BACKGROUND,
            coalitions: None,
            method: ShapMethod::Kernel,
            top: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: PathBuf,
    /// Feature schema file; the bundled SAPData schema when absent.
    pub schema: Option<PathBuf>,
    pub protocols: Vec<String>,
    pub families: Vec<String>,
    pub plans: Vec<PlanSpec>,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub alpha: f64,
    pub params_from: ParamSource,
    /// Fixed parameters per family name, overriding `params_from`.
    pub params: BTreeMap<String, toml::Table>,
    /// Search spaces per family name, replacing the default grids.
    pub grids: BTreeMap<String, Vec<toml::Table>>,
    pub tune: TuneConfig,
    pub explain: ExplainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data: PathBuf::from("data/xAPI-Edu-Data.csv"),
            schema: None,
            protocols: vec!["SF".into(), "WBF".into(), "WOBF".into()],
            families: Family::ALL.iter().map(|f| f.to_string()).collect(),
            plans: vec![PlanSpec::Named("RHO".into()), PlanSpec::Named("CV10x10".into())],
            seed: 42,
            workers: 0,
            out: PathBuf::from("out"),
            alpha: 0.05,
            params_from: ParamSource::Reference,
            params: BTreeMap::new(),
            grids: BTreeMap::new(),
            tune: TuneConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

impl Config {
    /// Reads `path` (TOML, or JSON for a `.json` extension) and applies `over`.
    pub fn load(path: Option<&Path>, over: &Overrides) -> Result<Self, Failure> {
        let mut cfg = match path {
            None => Config::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", p.display())))?;
                let is_json = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
                if is_json {
                    serde_json::from_str(&text)
                        .map_err(|e| Failure::usage(format!("invalid JSON config {}: {e}", p.display())))?
                } else {
                    toml::from_str(&text)
                        .map_err(|e| Failure::usage(format!("invalid TOML config {}: {e}", p.display())))?
                }
            }
        };
        if let Some(s) = over.seed {
            cfg.seed = s;
        }
        if let Some(w) = over.workers {
            cfg.workers = w;
        }
        if let Some(o) = &over.out {
            cfg.out = o.clone();
        }
        if let Some(d) = &over.data {
            cfg.data = d.clone();
        }
        Ok(cfg)
    }

    pub fn families(&self) -> Result<Vec<Family>, Failure> {
        if self.families.is_empty() {
            return Err(Failure::usage("no model families configured"));
        }
        let mut out = Vec::new();
        for name in &self.families {
            let f: Family = name.parse().map_err(Failure::usage)?;
            if !out.contains(&f) {
                out.push(f);
            }
        }
        Ok(out)
    }

    fn parse_protocols(names: &[String]) -> Result<Vec<ProtocolName>, Failure> {
        if names.is_empty() {
            return Err(Failure::usage("no feature protocols configured"));
        }
        let mut out = Vec::new();
        for name in names {
            let p: ProtocolName = name.parse().map_err(Failure::usage)?;
            if !out.contains(&p) {
                out.push(p);
            }
        }
        Ok(out)
    }

    pub fn protocols(&self) -> Result<Vec<ProtocolName>, Failure> {
        Self::parse_protocols(&self.protocols)
    }

    pub fn tune_protocols(&self) -> Result<Vec<ProtocolName>, Failure> {
        Self::parse_protocols(&self.tune.protocols)
    }

    pub fn plans(&self) -> Result<Vec<Protocol>, Failure> {
        if self.plans.is_empty() {
            return Err(Failure::usage("no split plans configured"));
        }
        self.plans.iter().map(PlanSpec::resolve).collect()
    }

    pub fn schema(&self) -> Result<Schema, Failure> {
        match &self.schema {
            None => Ok(Schema::sapdata()),
            Some(p) => {
                if !p.exists() {
                    return Err(Failure::usage(format!("schema file {} does not exist", p.display())));
                }
                Schema::load(p).map_err(Failure::usage)
            }
        }
    }

    fn family_params(family: Family, table: &toml::Table) -> Result<ModelParams, Failure> {
        let doc = serde_json::json!({ "family": family.as_str(), "params": table });
        let p: ModelParams = serde_json::from_value(doc)
            .map_err(|e| Failure::usage(format!("invalid {family} parameters: {e}")))?;
        p.validate().map_err(Failure::usage)?;
        Ok(p)
    }

    fn lookup<'a, V>(map: &'a BTreeMap<String, V>, family: Family) -> Result<Option<&'a V>, Failure> {
        for (k, v) in map {
            let f: Family = k.parse().map_err(Failure::usage)?;
            if f == family {
                return Ok(Some(v));
            }
        }
        Ok(None)
    }

    /// Explicit parameters from the config file, if any.
    pub fn fixed_params(&self, family: Family) -> Result<Option<ModelParams>, Failure> {
        Self::lookup(&self.params, family)?
            .map(|t| Self::family_params(family, t))
            .transpose()
    }

    pub fn grid(&self, family: Family) -> Result<Vec<ModelParams>, Failure> {
        let Some(tables) = Self::lookup(&self.grids, family)? else {
            return Ok(default_grid(family));
        };
        if tables.is_empty() {
            return Err(Failure::usage(format!("grid for {family} is empty")));
        }
        tables.iter().map(|t| Self::family_params(family, t)).collect()
    }

    /// Checks names and numbers before any work starts.
    pub fn validate(&self) -> Result<(), Failure> {
        self.families()?;
        self.protocols()?;
        self.tune_protocols()?;
        self.plans()?;
        for k in self.params.keys().chain(self.grids.keys()) {
            k.parse::<Family>().map_err(Failure::usage)?;
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Failure::usage(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.tune.folds < 2 {
            return Err(Failure::usage("tune.folds must be at least 2"));
        }
        if self.explain.background == 0 || self.explain.top == 0 {
            return Err(Failure::usage("explain.background and explain.top must be positive"));
        }
        Ok(())
    }

    pub fn check_data(&self) -> Result<(), Failure> {
        if !self.data.is_file() {
            return Err(Failure::usage(format!("dataset file {} does not exist", self.data.display())));
        }
        Ok(())
    }
}
