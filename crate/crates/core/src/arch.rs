//! Accelerator descriptions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KIB: u64 = 1024;

/// Energy per access, in pJ per byte (per MAC for `mac`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyTable {
    pub dram_access: f64,
    pub activation_buffer_access: f64,
    pub weight_buffer_access: f64,
    pub pe_scratchpad_access: f64,
    pub mac: f64,
}

impl Default for EnergyTable {
    fn default() -> Self {
        EnergyTable {
            dram_access: 100.0,
            activation_buffer_access: 2.0,
            weight_buffer_access: 2.0,
            pe_scratchpad_access: 0.5,
            mac: 0.2,
        }
    }
}

impl EnergyTable {
    pub fn scaled(&self, factor: f64) -> Self {
        EnergyTable {
            dram_access: self.dram_access * factor,
            activation_buffer_access: self.activation_buffer_access * factor,
            weight_buffer_access: self.weight_buffer_access * factor,
            pe_scratchpad_access: self.pe_scratchpad_access * factor,
            mac: self.mac * factor,
        }
    }
}

fn default_clock() -> u64 {
    200_000_000
}

fn default_dram_bw() -> u64 {
    128_000_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub name: String,
    pub pe_x: u64,
    pub pe_y: u64,
    pub macs_per_pe: u64,
    pub activation_buffer_bytes: u64,
    pub weight_buffer_bytes: u64,
    #[serde(default = "default_clock")]
    pub clock_hz: u64,
    #[serde(default = "default_dram_bw")]
    pub dram_bytes_per_sec: u64,
    #[serde(default)]
    pub energy: EnergyTable,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchError {
    #[error("arch field `{field}` must be positive")]
    NonPositive { field: &'static str },
    #[error("invalid arch document: {0}")]
    Parse(String),
    #[error("unknown arch preset `{0}`")]
    UnknownPreset(String),
}

impl ArchConfig {
    pub fn peak_macs_per_cycle(&self) -> u64 {
        self.pe_x * self.pe_y * self.macs_per_pe
    }

    /// DRAM bytes transferred per clock cycle.
    pub fn dram_bytes_per_cycle(&self) -> f64 {
        self.dram_bytes_per_sec as f64 / self.clock_hz as f64
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let ints = [
            ("pe_x", self.pe_x),
            ("pe_y", self.pe_y),
            ("macs_per_pe", self.macs_per_pe),
            ("activation_buffer_bytes", self.activation_buffer_bytes),
            ("weight_buffer_bytes", self.weight_buffer_bytes),
            ("clock_hz", self.clock_hz),
            ("dram_bytes_per_sec", self.dram_bytes_per_sec),
        ];
        if let Some((field, _)) = ints.iter().find(|(_, v)| *v == 0) {
            return Err(ArchError::NonPositive { field });
        }
        let e = &self.energy;
        let floats = [
            ("energy.dram_access", e.dram_access),
            ("energy.activation_buffer_access", e.activation_buffer_access),
            ("energy.weight_buffer_access", e.weight_buffer_access),
            ("energy.pe_scratchpad_access", e.pe_scratchpad_access),
            ("energy.mac", e.mac),
        ];
        if let Some((field, _)) = floats.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(ArchError::NonPositive { field });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ArchError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let arch: ArchConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." || path == "?" {
                ArchError::Parse(inner.to_string())
            } else {
                ArchError::Parse(format!("field `{path}`: {inner}"))
            }
        })?;
        arch.validate()?;
        Ok(arch)
    }

    fn preset(name: &str, pe: (u64, u64), macs: u64, act_kib: u64, weight_kib: u64) -> Self {
        ArchConfig {
            name: name.to_string(),
            pe_x: pe.0,
            pe_y: pe.1,
            macs_per_pe: macs,
            activation_buffer_bytes: act_kib * KIB,
            weight_buffer_bytes: weight_kib * KIB,
            clock_hz: default_clock(),
            dram_bytes_per_sec: default_dram_bw(),
            energy: EnergyTable::default(),
        }
    }

    /// Eyeriss-like array with the added 512 KiB weight buffer.
    pub fn eyeriss() -> Self {
        Self::preset("eyeriss", (14, 12), 1, 128, 512)
    }

    pub fn simba() -> Self {
        Self::preset("simba", (4, 4), 64, 64, 512)
    }

    /// Four SIMBA chiplets; buffer sizes are totals.
    pub fn simba2x2() -> Self {
        Self::preset("simba2x2", (8, 8), 64, 256, 2048)
    }

    pub fn presets() -> [ArchConfig; 3] {
        [Self::eyeriss(), Self::simba(), Self::simba2x2()]
    }

    pub fn by_name(name: &str) -> Result<Self, ArchError> {
        Self::presets()
            .into_iter()
            .find(|a| a.name == name)
            .ok_or_else(|| ArchError::UnknownPreset(name.to_string()))
    }
}
