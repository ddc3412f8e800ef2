use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nigp::NigpFitOptions;
use crate::nngp::{NngpConfig, Nonlinearity, TableParams};

/// Deep-kernel settings shared by every first-stage component model. The
/// input dimension follows from the window layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NngpSettings {
    pub depth: usize,
    pub weight_var: f64,
    pub bias_var: f64,
    pub nonlinearity: Nonlinearity,
    /// Observation noise relative to the training output variance.
    pub obs_noise: f64,
    pub analytic_relu: bool,
    pub table: TableParams,
}

impl Default for NngpSettings {
    fn default() -> Self {
        let c = NngpConfig::new(1);
        NngpSettings {
            depth: c.depth,
            weight_var: c.weight_var,
            bias_var: c.bias_var,
            nonlinearity: c.nonlinearity,
            obs_noise: c.obs_noise,
            analytic_relu: c.analytic_relu,
            table: TableParams::default(),
        }
    }
}

impl NngpSettings {
    pub fn to_config(&self, input_dim: usize) -> NngpConfig {
        NngpConfig {
            depth: self.depth,
            weight_var: self.weight_var,
            bias_var: self.bias_var,
            nonlinearity: self.nonlinearity,
            input_dim,
            obs_noise: self.obs_noise,
            analytic_relu: self.analytic_relu,
        }
    }

    /// Whether the models need a tabulated nonlinearity integral.
    pub fn needs_table(&self) -> bool {
        !(self.analytic_relu && self.nonlinearity == Nonlinearity::Relu)
    }
}

/// Neighbor buses used as extra history blocks when forecasting the angle
/// difference to `component` (a bus index).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborSet {
    pub component: usize,
    pub neighbors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FirstStageConfig {
    /// Training days.
    pub n_t1: usize,
    /// Days of history in each input window.
    pub n_in: usize,
    /// Neighbor blocks per component model.
    pub n_j: usize,
    /// Explicit neighbors per component. Components without an entry take
    /// the `n_j` components most correlated with them over the training
    /// window.
    pub neighbor_indices: Vec<NeighborSet>,
    pub nngp: NngpSettings,
}

impl Default for FirstStageConfig {
    fn default() -> Self {
        FirstStageConfig {
            n_t1: 60,
            n_in: 3,
            n_j: 1,
            neighbor_indices: Vec::new(),
            nngp: NngpSettings::default(),
        }
    }
}

impl FirstStageConfig {
    pub fn validate(&self, n_buses: usize) -> Result<()> {
        if self.n_in == 0 {
            return Err(Error::Config("n_in must be at least 1".into()));
        }
        if self.n_t1 < self.n_in + 1 {
            return Err(Error::Config(format!(
                "n_t1 ({}) must be at least n_in + 1 ({})",
                self.n_t1,
                self.n_in + 1
            )));
        }
        if n_buses < 2 {
            return Err(Error::Config("need at least two buses".into()));
        }
        if self.n_j > n_buses - 2 {
            return Err(Error::Config(format!(
                "n_j ({}) exceeds N - 2 = {}",
                self.n_j,
                n_buses - 2
            )));
        }
        for set in &self.neighbor_indices {
            if set.component >= n_buses {
                return Err(Error::Config(format!("neighbor entry for unknown bus {}", set.component)));
            }
            if set.neighbors.len() != self.n_j {
                return Err(Error::Config(format!(
                    "component {} lists {} neighbors, n_j is {}",
                    set.component,
                    set.neighbors.len(),
                    self.n_j
                )));
            }
            for &k in &set.neighbors {
                if k >= n_buses || k == set.component {
                    return Err(Error::Config(format!(
                        "invalid neighbor {k} for component {}",
                        set.component
                    )));
                }
            }
        }
        self.nngp.to_config(1).validate()?;
        self.nngp.table.validate()
    }

    /// Input dimension of one component model.
    pub fn input_dim(&self) -> usize {
        (1 + self.n_j) * 24 * self.n_in
    }

    /// Hours of history needed before the first forecast hour.
    pub fn history_hours(&self) -> usize {
        24 * (self.n_t1 + self.n_in)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecondStageConfig {
    /// Training days.
    pub n_t2: usize,
    /// Positions in the angle-difference feature vector to keep; `None`
    /// keeps all of them.
    pub selected_features: Option<Vec<usize>>,
    /// Central probability of the prediction interval.
    pub interval_level: f64,
    pub fit: NigpFitOptions,
    /// Start each day's fit from the previous day's estimate with a single
    /// optimizer start.
    pub warm_start: bool,
}

impl Default for SecondStageConfig {
    fn default() -> Self {
        SecondStageConfig {
            n_t2: 30,
            selected_features: None,
            interval_level: 0.95,
            fit: NigpFitOptions::default(),
            warm_start: true,
        }
    }
}

impl SecondStageConfig {
    pub fn validate(&self, n_buses: usize) -> Result<()> {
        if self.n_t2 < 2 {
            return Err(Error::Config(format!("n_t2 must be at least 2, got {}", self.n_t2)));
        }
        if !(self.interval_level > 0.0 && self.interval_level < 1.0) {
            return Err(Error::Config(format!(
                "interval level must be in (0, 1), got {}",
                self.interval_level
            )));
        }
        if let Some(sel) = &self.selected_features {
            if sel.is_empty() {
                return Err(Error::Config("selected_features must not be empty".into()));
            }
            let mut seen = vec![false; n_buses.saturating_sub(1)];
            for &c in sel {
                if c + 1 >= n_buses {
                    return Err(Error::Config(format!(
                        "feature position {c} out of range for {} components",
                        n_buses - 1
                    )));
                }
                if std::mem::replace(&mut seen[c], true) {
                    return Err(Error::Config(format!("feature position {c} listed twice")));
                }
            }
        }
        if !(1..=5).contains(&self.fit.iterations) {
            return Err(Error::Config("NIGP iterations must be in [1, 5]".into()));
        }
        if self.fit.optimizer.restarts == 0 {
            return Err(Error::Config("at least one optimizer start is required".into()));
        }
        Ok(())
    }

    /// Feature positions in use for a system of `n_buses`.
    pub fn features(&self, n_buses: usize) -> Vec<usize> {
        match &self.selected_features {
            Some(s) => s.clone(),
            None => (0..n_buses - 1).collect(),
        }
    }

    pub fn history_hours(&self) -> usize {
        24 * self.n_t2
    }
}

/// Which second-stage model turns the input forecast into a load forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Noisy-input GP fed the first-stage mean and variance.
    #[default]
    NngpNigp,
    /// Standard GP fed the first-stage mean only.
    BaselineGp,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nngp-nigp" => Ok(Method::NngpNigp),
            "baseline-gp" => Ok(Method::BaselineGp),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GsaSettings {
    pub enabled: bool,
    /// Second-stage features kept after ranking by total index.
    pub top_k: usize,
    pub stage2_samples: usize,
    /// Also choose first-stage neighbors from the block importances.
    pub select_neighbors: bool,
    pub stage1_samples: usize,
    pub mixture_components: usize,
}

impl Default for GsaSettings {
    fn default() -> Self {
        GsaSettings {
            enabled: false,
            top_k: 1,
            stage2_samples: 10_000,
            select_neighbors: false,
            stage1_samples: 1_000,
            mixture_components: 2,
        }
    }
}

impl GsaSettings {
    pub fn validate(&self, n_buses: usize) -> Result<()> {
        if self.top_k == 0 || self.top_k > n_buses - 1 {
            return Err(Error::Config(format!(
                "top_k must be in [1, {}], got {}",
                n_buses - 1,
                self.top_k
            )));
        }
        if self.stage2_samples < 100 || self.stage1_samples < 100 {
            return Err(Error::Config("GSA sample sizes must be at least 100".into()));
        }
        if self.mixture_components == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        Ok(())
    }
}

/// Perturbation added to the first-stage forecast to emulate a worse input
/// model: each component mean gets Gaussian noise with standard deviation
/// `relative_std` times the component's spread over the training window, and
/// the reported variance grows by the same amount.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputNoiseInjection {
    pub relative_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub first: FirstStageConfig,
    pub second: SecondStageConfig,
    pub method: Method,
    pub gsa: GsaSettings,
    pub injection: Option<InputNoiseInjection>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            first: FirstStageConfig::default(),
            second: SecondStageConfig::default(),
            method: Method::default(),
            gsa: GsaSettings::default(),
            injection: None,
            seed: 42,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, n_buses: usize) -> Result<()> {
        self.first.validate(n_buses)?;
        self.second.validate(n_buses)?;
        self.gsa.validate(n_buses)?;
        if let Some(inj) = &self.injection {
            if !(inj.relative_std >= 0.0 && inj.relative_std.is_finite()) {
                return Err(Error::Config("injection relative_std must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    /// First hour that can be forecast.
    pub fn history_hours(&self) -> usize {
        self.first.history_hours().max(self.second.history_hours())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_window_dimension() {
        let c = FirstStageConfig::default();
        assert_eq!(c.input_dim(), 144);
        let c = FirstStageConfig { n_j: 0, ..c };
        assert_eq!(c.input_dim(), 72);
    }

    #[test]
    fn rejects_bad_configs() {
        let c = FirstStageConfig { n_t1: 3, n_in: 3, ..Default::default() };
        assert!(c.validate(8).is_err());
        let c = FirstStageConfig { n_j: 7, ..Default::default() };
        assert!(c.validate(8).is_err());
        let s = SecondStageConfig { selected_features: Some(vec![]), ..Default::default() };
        assert!(s.validate(8).is_err());
        let s = SecondStageConfig { selected_features: Some(vec![7]), ..Default::default() };
        assert!(s.validate(8).is_err());
        let s = SecondStageConfig { n_t2: 1, ..Default::default() };
        assert!(s.validate(8).is_err());
        assert!(PipelineConfig::default().validate(8).is_ok());
    }

    #[test]
    fn toml_rejects_unknown_keys() {
        assert!(toml::from_str::<PipelineConfig>("seed = 1\n[first]\nn_t1 = 10\n").is_ok());
        assert!(toml::from_str::<PipelineConfig>("sed = 1\n").is_err());
        assert!(toml::from_str::<PipelineConfig>("[second]\nn_t3 = 1\n").is_err());
    }
}
