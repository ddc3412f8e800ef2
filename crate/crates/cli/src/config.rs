use std::path::{Path, PathBuf};

use loadcast::grid_sim::{BusSystem, LoadProfileSpec, PvProfileSpec};
use loadcast::pipeline::PipelineConfig;
use loadcast::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a command needs, read from TOML and then patched by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// `8-bus`, `14-bus` or a path to a system TOML file.
    pub system: String,
    pub out: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    pub simulate: SimulateSection,
    pub forecast: ForecastSection,
    pub gsa: GsaSection,
    pub evaluate: EvaluateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            system: "8-bus".into(),
            out: PathBuf::from("out"),
            jobs: 0,
            simulate: SimulateSection::default(),
            forecast: ForecastSection::default(),
            gsa: GsaSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub days: usize,
    pub load: LoadProfileSpec,
    /// Net loads with rooftop PV subtracted when present.
    pub pv: Option<PvProfileSpec>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            days: 365,
            load: LoadProfileSpec::default(),
            pv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSection {
    /// Dataset CSV; when absent the dataset is simulated from `[simulate]`.
    pub dataset: Option<PathBuf>,
    pub pv_adjusted: bool,
    pub customers: Vec<usize>,
    pub days: Vec<usize>,
    pub pipeline: PipelineConfig,
}

impl Default for ForecastSection {
    fn default() -> Self {
        ForecastSection {
            dataset: None,
            pv_adjusted: false,
            customers: vec![0],
            days: (100..120).collect(),
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GsaSection {
    /// 1 for the input-forecast models, 2 for the load model.
    pub stage: u8,
    /// Component bus analysed in stage 1; defaults to the first component.
    pub component: Option<usize>,
}

impl Default for GsaSection {
    fn default() -> Self {
        GsaSection { stage: 2, component: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Forecast output directories.
    pub inputs: Vec<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn load_system(&self) -> Result<BusSystem> {
        match self.system.as_str() {
            "8-bus" => Ok(BusSystem::eight_bus()),
            "14-bus" => Ok(BusSystem::fourteen_bus()),
            path => {
                let p = Path::new(path);
                if !p.exists() {
                    return Err(Error::Config(format!("system file {path} does not exist")));
                }
                BusSystem::load(p)
            }
        }
    }

    /// Short label used in evaluation tables.
    pub fn system_label(&self) -> String {
        Path::new(&self.system)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.system.clone())
    }
}

/// Parses `3`, `1,4,7` or inclusive ranges such as `100-119`, mixed freely.
pub fn parse_index_list(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot parse index list {spec:?}"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if b < a {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_lists() {
        assert_eq!(parse_index_list("3").unwrap(), vec![3]);
        assert_eq!(parse_index_list("1, 4,6-8").unwrap(), vec![1, 4, 6, 7, 8]);
        assert!(parse_index_list("5-2").is_err());
        assert!(parse_index_list("x").is_err());
        assert!(parse_index_list("").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("seed = 1\nbogus = 2").is_err());
        assert!(toml::from_str::<RunConfig>("[forecast.pipeline.second]\nn_t3 = 1").is_err());
        let c: RunConfig = toml::from_str("seed = 7\n[forecast]\ncustomers = [1, 2]").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.forecast.customers, vec![1, 2]);
    }
}
