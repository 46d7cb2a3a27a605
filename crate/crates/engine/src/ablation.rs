// SPDX-License-Identifier: MIT OR Apache-2.0

//! Unit interventions applied during the forward pass.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{EngineError, Result};
use crate::units::{Site, UnitId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum AblationMode {
    None,
    Zero,
    /// Overwrite targets with the scalar `m`.
    Mean(f64),
}

/// Which token positions an intervention touches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Application {
    #[default]
    AllPositions,
    LastPosition,
}

impl fmt::Display for Application {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Application::AllPositions => "all-positions",
            Application::LastPosition => "last-position",
        })
    }
}

impl std::str::FromStr for Application {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all-positions" => Ok(Application::AllPositions),
            "last" | "last-position" => Ok(Application::LastPosition),
            other => Err(EngineError::Ablation(format!("unknown application `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub mode: AblationMode,
    pub targets: BTreeSet<UnitId>,
    #[serde(default)]
    pub application: Application,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl AblationSpec {
    pub fn none() -> Self {
        Self {
            mode: AblationMode::None,
            targets: BTreeSet::new(),
            application: Application::AllPositions,
        }
    }

    pub fn zero(targets: impl IntoIterator<Item = UnitId>) -> Self {
        Self {
            mode: AblationMode::Zero,
            targets: targets.into_iter().collect(),
            application: Application::AllPositions,
        }
    }

    pub fn mean(value: f64, targets: impl IntoIterator<Item = UnitId>) -> Self {
        Self {
            mode: AblationMode::Mean(value),
            targets: targets.into_iter().collect(),
            application: Application::AllPositions,
        }
    }

    pub fn at(mut self, application: Application) -> Self {
        self.application = application;
        self
    }

    /// True when applying it cannot change any activation.
    pub fn is_noop(&self) -> bool {
        matches!(self.mode, AblationMode::None) || self.targets.is_empty()
    }

    /// Replacement value, or `None` for a no-op spec.
    pub fn value(&self) -> Option<f32> {
        match self.mode {
            AblationMode::None => None,
            AblationMode::Zero => Some(0.0),
            AblationMode::Mean(m) => Some(m as f32),
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if let AblationMode::Mean(m) = self.mode {
            if !m.is_finite() {
                return Err(EngineError::Ablation(format!("mean value {m} is not finite")));
            }
        }
        for unit in &self.targets {
            if unit.layer >= config.n_layers || unit.channel >= config.hidden {
                return Err(EngineError::Ablation(format!(
                    "unit {unit} outside model with {} layers × {} channels",
                    config.n_layers, config.hidden
                )));
            }
        }
        Ok(())
    }

    /// Short human-readable description for reports.
    pub fn summary(&self) -> String {
        match self.mode {
            AblationMode::None => "none".to_string(),
            AblationMode::Zero => format!("zero({} units, {})", self.targets.len(), self.application),
            AblationMode::Mean(m) => {
                format!("mean(m={m}, {} units, {})", self.targets.len(), self.application)
            }
        }
    }
}

/// Channels to overwrite, grouped per `(site, layer)` for the forward pass.
#[derive(Debug, Clone)]
pub(crate) struct CompiledAblation {
    /// `[site_index][layer] -> channels`
    channels: [Vec<Vec<usize>>; 3],
    pub(crate) value: f32,
    pub(crate) application: Application,
}

impl CompiledAblation {
    pub(crate) fn compile(spec: &AblationSpec, config: &ModelConfig) -> Result<Option<Self>> {
        spec.validate(config)?;
        let Some(value) = spec.value() else {
            return Ok(None);
        };
        if spec.targets.is_empty() {
            return Ok(None);
        }
        let mut channels: [Vec<Vec<usize>>; 3] = Default::default();
        for per_site in channels.iter_mut() {
            *per_site = vec![Vec::new(); config.n_layers];
        }
        for unit in &spec.targets {
            channels[site_slot(unit.site)][unit.layer].push(unit.channel);
        }
        Ok(Some(Self {
            channels,
            value,
            application: spec.application,
        }))
    }

    pub(crate) fn channels(&self, site: Site, layer: usize) -> &[usize] {
        &self.channels[site_slot(site)][layer]
    }

    /// Overwrite targeted channels in a `seq × hidden` row-major buffer.
    pub(crate) fn apply(&self, site: Site, layer: usize, buf: &mut [f32], seq: usize, hidden: usize) {
        let chans = self.channels(site, layer);
        if chans.is_empty() {
            return;
        }
        let rows = match self.application {
            Application::AllPositions => 0..seq,
            Application::LastPosition => seq - 1..seq,
        };
        for t in rows {
            let row = &mut buf[t * hidden..(t + 1) * hidden];
            for &c in chans {
                row[c] = self.value;
            }
        }
    }
}

fn site_slot(site: Site) -> usize {
    match site {
        Site::Residual => 0,
        Site::AttnOut => 1,
        Site::MlpOut => 2,
    }
}
