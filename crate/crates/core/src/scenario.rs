//! Scenario files: network, run control, load grid and outputs in one TOML
//! document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{NetworkConfig, NetworkParams};
use crate::error::{Error, Result};
use crate::model::capacity;
use crate::sim::{default_noise_floor, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Log,
    Linear,
}

/// Load grid. `values` wins over the generated grid when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub min_fps: f64,
    pub max_fps: Option<f64>,
    /// Upper end as a multiple of the capacity when `max_fps` is unset.
    pub max_capacity_multiple: f64,
    pub points: usize,
    pub spacing: Spacing,
    pub values: Option<Vec<f64>>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            min_fps: 1e-3,
            max_fps: None,
            max_capacity_multiple: 2.0,
            points: 20,
            spacing: Spacing::Log,
            values: None,
        }
    }
}

impl SweepSpec {
    pub fn grid(&self, capacity_fps: f64) -> Result<Vec<f64>> {
        let grid = match &self.values {
            Some(v) => v.clone(),
            None => {
                let lo = self.min_fps;
                let hi = self
                    .max_fps
                    .unwrap_or(self.max_capacity_multiple * capacity_fps);
                if self.points == 0 {
                    return Err(Error::config("sweep.points must be at least 1"));
                }
                if self.points == 1 {
                    vec![lo]
                } else {
                    let k = (self.points - 1) as f64;
                    match self.spacing {
                        Spacing::Linear => (0..self.points)
                            .map(|j| lo + (hi - lo) * j as f64 / k)
                            .collect(),
                        Spacing::Log => {
                            if lo <= 0.0 {
                                return Err(Error::config(
                                    "sweep.min_fps must be positive for log spacing",
                                ));
                            }
                            (0..self.points)
                                .map(|j| lo * (hi / lo).powf(j as f64 / k))
                                .collect()
                        }
                    }
                }
            }
        };
        if grid.is_empty() {
            return Err(Error::config("sweep grid is empty"));
        }
        if grid.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::config("sweep loads must be finite and non-negative"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("sweep grid must be strictly increasing"));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub duration_s: f64,
    pub warmup_s: f64,
    /// Defaults to 20 dB under the weakest sensitivity.
    pub noise_floor_dbm: Option<f64>,
    pub seeds: Vec<u64>,
    pub batches: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            duration_s: 1e5,
            warmup_s: 500.0,
            noise_floor_dbm: None,
            seeds: (1..=10).collect(),
            batches: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Sweep CSV; standard output when unset.
    pub csv: Option<PathBuf>,
    /// Per-rate model breakdown CSV.
    pub rates_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub network: NetworkParams,
    pub simulation: SimulationSection,
    pub sweep: SweepSpec,
    pub output: OutputSection,
}

/// A parsed scenario with its network built and grid expanded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub network: NetworkConfig,
    pub grid: Vec<f64>,
}

impl Scenario {
    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        let network = NetworkConfig::from_params(&file.network)?;
        let grid = file.sweep.grid(capacity(&network))?;
        let s = &file.simulation;
        if s.seeds.is_empty() {
            return Err(Error::config("simulation.seeds must not be empty"));
        }
        let scenario = Scenario {
            file,
            network,
            grid,
        };
        scenario.sim_config(0.0, 0)?.validate()?;
        Ok(scenario)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn sim_config(&self, load_fps: f64, seed: u64) -> Result<SimConfig> {
        let s = &self.file.simulation;
        let network = self.network.with_load(load_fps);
        let cfg = SimConfig {
            noise_floor_dbm: s
                .noise_floor_dbm
                .unwrap_or_else(|| default_noise_floor(&network)),
            network,
            duration_s: s.duration_s,
            warmup_s: s.warmup_s,
            seed,
            batches: s.batches,
        };
        Ok(cfg)
    }
}
