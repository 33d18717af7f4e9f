//! Experiment configuration files and their expansion into a sweep grid.
//!
//! ```toml
//! [experiment]
//! profiles = ["fabric"]
//! clock = "virtual"
//! out = "results/quickstart"
//! seed = 7
//!
//! [plan]
//! families = ["key-value"]
//! clients = 4
//! rate_limiter = 50
//!
//! [sweep]
//! rate_limiter = [50, 100]
//! block_param = [10, 100]
//! latency = [false, true]
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::presets;
use crate::clock::ClockMode;
use crate::model::{
    validate_plan, BenchmarkFamily, BenchmarkPlan, Grouping, SystemProfile,
    ValidationError,
};
use crate::workload::Pacing;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub plan: PlanSection,
    #[serde(default)]
    pub sweep: SweepSection,
    /// Inline profiles, usable by name in `experiment.profiles`.
    #[serde(default, rename = "profile", skip_serializing_if = "Vec::is_empty")]
    pub inline_profiles: Vec<SystemProfile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PacingMode {
    #[default]
    Even,
    Burst,
}

impl From<PacingMode> for Pacing {
    fn from(p: PacingMode) -> Pacing {
        match p {
            PacingMode::Even => Pacing::Even,
            PacingMode::Burst => Pacing::Burst,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Preset or inline profile names; empty means every inline profile.
    #[serde(default)]
    pub profiles: Vec<String>,
    #[serde(default)]
    pub clock: ClockMode,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Count every payload of a committed envelope as received.
    #[serde(default = "default_true")]
    pub op_counting: bool,
    #[serde(default)]
    pub pacing: PacingMode,
    /// Seconds a client spends in one submit call.
    #[serde(default)]
    pub submit_cost: f64,
}

/// Plan fields left out fall back to desk scale (virtual clock) or the
/// 300/330/420 s schedule (wall clock).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub families: Vec<BenchmarkFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload_threads_per_client: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limiter: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<Grouping>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub send_duration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listen_grace: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<u32>,
}

/// Lists of values to sweep; an absent list keeps the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limiter: Option<Vec<u32>>,
    /// Block size for count-driven profiles, seconds for period-driven ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_param: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping_k: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_count: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error("no profiles selected")]
    NoProfiles,
    #[error("no benchmark families selected")]
    NoFamilies,
    #[error("sweep list `{0}` is empty")]
    EmptySweep(&'static str),
    #[error("grid point {index} ({label}): {errors}")]
    Invalid { index: usize, label: String, errors: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub rate_limiter: u32,
    pub block_param: f64,
    pub grouping_k: u32,
    pub node_count: u32,
    pub latency: bool,
}

impl GridParams {
    pub fn label(&self) -> String {
        format!(
            "rl={} block={} k={} n={} lat={}",
            self.rate_limiter,
            self.block_param,
            self.grouping_k,
            self.node_count,
            if self.latency { "on" } else { "off" }
        )
    }
}

/// One fully resolved (profile, plan) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub profile: SystemProfile,
    pub plan: BenchmarkPlan,
    pub params: GridParams,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn selected_profiles(&self) -> Result<Vec<SystemProfile>, ConfigError> {
        if self.experiment.profiles.is_empty() {
            if self.inline_profiles.is_empty() {
                return Err(ConfigError::NoProfiles);
            }
            return Ok(self.inline_profiles.clone());
        }
        self.experiment
            .profiles
            .iter()
            .map(|name| {
                self.inline_profiles
                    .iter()
                    .find(|p| &p.name == name)
                    .cloned()
                    .or_else(|| presets::get(name))
                    .ok_or_else(|| ConfigError::UnknownProfile(name.clone()))
            })
            .collect()
    }

    pub fn base_plan(&self, family: BenchmarkFamily) -> BenchmarkPlan {
        let d = match self.experiment.clock {
            ClockMode::Virtual => BenchmarkPlan::desk_scale(family),
            ClockMode::Wall => BenchmarkPlan::wall_scale(family),
        };
        let p = &self.plan;
        BenchmarkPlan {
            benchmark_family: family,
            clients: p.clients.unwrap_or(d.clients),
            workload_threads_per_client: p
                .workload_threads_per_client
                .unwrap_or(d.workload_threads_per_client),
            rate_limiter: p.rate_limiter.unwrap_or(d.rate_limiter),
            grouping: p.grouping.unwrap_or(d.grouping),
            send_duration: p.send_duration.unwrap_or(d.send_duration),
            listen_grace: p.listen_grace.unwrap_or(d.listen_grace),
            hard_stop: p.hard_stop.unwrap_or(d.hard_stop),
            repetitions: p.repetitions.unwrap_or(d.repetitions),
            seed: self.experiment.seed,
        }
    }

    pub fn repetitions(&self) -> u32 {
        self.plan.repetitions.unwrap_or(3)
    }

    /// Expands the sweep. With `full = false` only the base values are used.
    pub fn grid(&self, full: bool) -> Result<Vec<GridPoint>, ConfigError> {
        if self.plan.families.is_empty() {
            return Err(ConfigError::NoFamilies);
        }
        let profiles = self.selected_profiles()?;
        let sweep = if full { self.sweep.clone() } else { SweepSection::default() };
        for (name, empty) in [
            ("rate_limiter", sweep.rate_limiter.as_ref().is_some_and(Vec::is_empty)),
            ("block_param", sweep.block_param.as_ref().is_some_and(Vec::is_empty)),
            ("grouping_k", sweep.grouping_k.as_ref().is_some_and(Vec::is_empty)),
            ("node_count", sweep.node_count.as_ref().is_some_and(Vec::is_empty)),
            ("latency", sweep.latency.as_ref().is_some_and(Vec::is_empty)),
        ] {
            if empty {
                return Err(ConfigError::EmptySweep(name));
            }
        }

        let mut points = Vec::new();
        for profile in &profiles {
            for &family in &self.plan.families {
                let base = self.base_plan(family);
                let rls = sweep.rate_limiter.clone().unwrap_or(vec![base.rate_limiter]);
                let blocks =
                    sweep.block_param.clone().unwrap_or(vec![profile.finalization.parameter()]);
                let ks = sweep.grouping_k.clone().unwrap_or(vec![base.grouping.size()]);
                let ns = sweep.node_count.clone().unwrap_or(vec![profile.node_count]);
                let lats = sweep.latency.clone().unwrap_or(vec![profile.link_latency.is_some()]);
                for &rate_limiter in &rls {
                    for &block_param in &blocks {
                        for &grouping_k in &ks {
                            for &node_count in &ns {
                                for &latency in &lats {
                                    let params = GridParams {
                                        rate_limiter,
                                        block_param,
                                        grouping_k,
                                        node_count,
                                        latency,
                                    };
                                    points.push(resolve_point(points.len(), profile, &base, params)?);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(points)
    }
}

fn resolve_point(
    index: usize,
    profile: &SystemProfile,
    base: &BenchmarkPlan,
    params: GridParams,
) -> Result<GridPoint, ConfigError> {
    let mut profile = profile.clone();
    profile.finalization = profile.finalization.with_parameter(params.block_param);
    profile.node_count = params.node_count;
    profile.link_latency = if params.latency {
        Some(profile.link_latency.unwrap_or_default())
    } else {
        None
    };
    let mut plan = base.clone();
    plan.rate_limiter = params.rate_limiter;
    plan.grouping = plan.grouping.with_size(params.grouping_k);
    validate_plan(&plan, &profile).map_err(|errs| ConfigError::Invalid {
        index,
        label: format!("{} {}", profile.name, params.label()),
        errors: errs.iter().map(ValidationError::to_string).collect::<Vec<_>>().join("; "),
    })?;
    Ok(GridPoint { index, profile, plan, params })
}
