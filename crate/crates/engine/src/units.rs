// SPDX-License-Identifier: MIT OR Apache-2.0

//! Unit addressing: a unit is one scalar channel at one layer of a capture
//! site. Units are totally ordered by `(site, layer, channel)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

/// Capture site within a transformer block.
///
/// Declaration order is the sort order used by [`UnitId`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// Residual stream after the block's second residual addition.
    Residual,
    /// Attention output after the out-projection, before the residual add.
    AttnOut,
    /// MLP output after the down-projection, before the residual add.
    MlpOut,
}

impl Site {
    pub const ALL: [Site; 3] = [Site::Residual, Site::AttnOut, Site::MlpOut];

    pub fn as_str(self) -> &'static str {
        match self {
            Site::Residual => "residual",
            Site::AttnOut => "attn_out",
            Site::MlpOut => "mlp_out",
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Site {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "residual" | "resid" => Ok(Site::Residual),
            "attn_out" | "attn" => Ok(Site::AttnOut),
            "mlp_out" | "mlp" => Ok(Site::MlpOut),
            other => Err(EngineError::Sites(format!("unknown site `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitId {
    pub site: Site,
    pub layer: usize,
    pub channel: usize,
}

impl UnitId {
    pub fn new(site: Site, layer: usize, channel: usize) -> Self {
        Self { site, layer, channel }
    }

    pub fn residual(layer: usize, channel: usize) -> Self {
        Self::new(Site::Residual, layer, channel)
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.site, self.layer, self.channel)
    }
}

/// The column layout of activation matrices for a given site set.
///
/// Columns enumerate units in [`UnitId`] order: sites (sorted), then layers,
/// then channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitSpace {
    sites: Vec<Site>,
    n_layers: usize,
    hidden: usize,
}

impl UnitSpace {
    pub fn new(sites: &[Site], n_layers: usize, hidden: usize) -> Result<Self> {
        let mut sites = sites.to_vec();
        sites.sort();
        sites.dedup();
        if sites.is_empty() {
            return Err(EngineError::Sites("site set is empty".into()));
        }
        if n_layers == 0 || hidden == 0 {
            return Err(EngineError::Sites("unit space needs n_layers, hidden ≥ 1".into()));
        }
        Ok(Self {
            sites,
            n_layers,
            hidden,
        })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn len(&self) -> usize {
        self.sites.len() * self.n_layers * self.hidden
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offset of the `(site, layer)` block, or `None` when the site is not
    /// part of this space.
    pub fn block_offset(&self, site: Site, layer: usize) -> Option<usize> {
        let s = self.sites.iter().position(|&x| x == site)?;
        (layer < self.n_layers).then(|| (s * self.n_layers + layer) * self.hidden)
    }

    pub fn index_of(&self, unit: UnitId) -> Option<usize> {
        if unit.channel >= self.hidden {
            return None;
        }
        self.block_offset(unit.site, unit.layer).map(|o| o + unit.channel)
    }

    pub fn unit_at(&self, index: usize) -> UnitId {
        assert!(index < self.len(), "unit index {index} out of range");
        let per_site = self.n_layers * self.hidden;
        let site = self.sites[index / per_site];
        let rem = index % per_site;
        UnitId::new(site, rem / self.hidden, rem % self.hidden)
    }

    pub fn contains(&self, unit: UnitId) -> bool {
        self.index_of(unit).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = UnitId> + '_ {
        (0..self.len()).map(|i| self.unit_at(i))
    }

    /// Comma-separated site list, e.g. `attn_out,mlp_out`.
    pub fn sites_label(&self) -> String {
        self.sites.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(",")
    }
}

/// Parses a comma-separated site list.
pub fn parse_sites(spec: &str) -> Result<Vec<Site>> {
    let mut sites = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Site::from_str)
        .collect::<Result<Vec<_>>>()?;
    sites.sort();
    sites.dedup();
    if sites.is_empty() {
        return Err(EngineError::Sites("site set is empty".into()));
    }
    Ok(sites)
}
