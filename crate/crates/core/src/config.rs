//! Scenario files.
//!
//! ```toml
//! num_devices = 1000
//! frame_length = 100
//! update_prob = 0.001
//! battery_capacity = 2        # or "unlimited"
//! harvest_prob = 0.02
//! max_degree = 5
//! adaptive = true
//! degree_table = [1, 0, 0, 0, 0, 0,
//!                 0, 1, 0, 0, 0, 0,
//!                 0, 0, 1, 0, 0, 0]
//! ```
//!
//! Instead of `degree_table`, `degree_preset` may name a family that is
//! rebuilt for any capacity: `"full_battery"` (spend the whole initial
//! battery) or `"regular:<d>"` (always `d` replicas).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Capacity, DegreeDistribution, SystemConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum CapacityField {
    Finite(u32),
    Named(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    num_devices: u32,
    frame_length: u32,
    update_prob: f64,
    battery_capacity: CapacityField,
    harvest_prob: f64,
    max_degree: u32,
    degree_table: Option<Vec<f64>>,
    degree_preset: Option<String>,
    adaptive: Option<bool>,
}

/// How the degree distribution of a scenario is specified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegreeSpec {
    Table { values: Vec<f64>, adaptive: bool },
    FullBattery,
    Regular(u32),
}

impl DegreeSpec {
    pub fn parse_preset(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "full_battery" {
            return Ok(DegreeSpec::FullBattery);
        }
        if let Some(d) = text.strip_prefix("regular:") {
            let d = d
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad degree in preset {text:?}")))?;
            return Ok(DegreeSpec::Regular(d));
        }
        Err(Error::InvalidConfig(format!("unknown degree preset {text:?}")))
    }

    /// Builds the distribution for `config`. Nonadaptive tables adapt to any
    /// capacity; adaptive tables must match it.
    pub fn build(&self, config: &SystemConfig) -> Result<DegreeDistribution> {
        let levels = config.battery.num_levels();
        let width = config.max_degree as usize + 1;
        match self {
            DegreeSpec::FullBattery => match config.battery {
                Capacity::Finite(e) => Ok(DegreeDistribution::full_battery(e, config.max_degree)),
                Capacity::Unlimited => Ok(DegreeDistribution::regular(
                    config.max_degree.min(3),
                    config.max_degree,
                    1,
                )?),
            },
            DegreeSpec::Regular(d) => DegreeDistribution::regular(*d, config.max_degree, levels),
            DegreeSpec::Table { values, adaptive } => {
                if values.is_empty() || values.len() % width != 0 {
                    return Err(Error::InvalidDistribution(format!(
                        "degree_table has {} entries, not a multiple of max_degree + 1 = {width}",
                        values.len()
                    )));
                }
                let rows: Vec<Vec<f64>> = values.chunks(width).map(<[f64]>::to_vec).collect();
                if *adaptive {
                    let dist = DegreeDistribution::adaptive(rows)?;
                    dist.check_shape(config)?;
                    Ok(dist)
                } else {
                    let first = rows[0].clone();
                    if rows.iter().any(|r| *r != first) {
                        return Err(Error::InvalidDistribution(
                            "nonadaptive degree_table with differing rows".into(),
                        ));
                    }
                    DegreeDistribution::nonadaptive(first, levels)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: SystemConfig,
    pub degrees: DegreeSpec,
}

impl Scenario {
    pub fn distribution(&self) -> Result<DegreeDistribution> {
        self.degrees.build(&self.config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::ConfigFile { message, .. } => Error::ConfigFile {
                path: path.display().to_string(),
                message,
            },
            other => Error::ConfigFile {
                path: path.display().to_string(),
                message: other.to_string(),
            },
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::ConfigFile {
            path: String::new(),
            message: describe_toml_error(text, &e),
        })?;
        let battery = match file.battery_capacity {
            CapacityField::Finite(e) => Capacity::Finite(e),
            CapacityField::Named(s) if s.eq_ignore_ascii_case("unlimited") => Capacity::Unlimited,
            CapacityField::Named(s) => {
                return Err(Error::InvalidConfig(format!(
                    "battery_capacity must be an integer or \"unlimited\", got {s:?}"
                )))
            }
        };
        let config = SystemConfig::new(
            file.num_devices,
            file.frame_length,
            file.update_prob,
            battery,
            file.harvest_prob,
            file.max_degree,
        )?;
        let degrees = match (file.degree_table, file.degree_preset) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "give either degree_table or degree_preset, not both".into(),
                ))
            }
            (Some(values), None) => DegreeSpec::Table {
                values,
                adaptive: file.adaptive.unwrap_or(false),
            },
            (None, Some(preset)) => DegreeSpec::parse_preset(&preset)?,
            (None, None) => return Err(Error::InvalidConfig("missing degree_table (or degree_preset)".into())),
        };
        let scenario = Self { config, degrees };
        scenario.distribution()?;
        Ok(scenario)
    }
}

fn describe_toml_error(text: &str, err: &toml::de::Error) -> String {
    match err.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("line {line}, column {column}: {}", err.message())
        }
        None => err.message().to_string(),
    }
}
