//! Pipeline configuration: one JSON document with every tunable and its default.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anomaly::{AnomalySettings, DecisionParams};
use crate::background::BackgroundParams;
use crate::detector::{default_vehicle_classes, DEFAULT_TIMEOUT_S};
use crate::error::{Error, Result};
use crate::mask::MaskParams;
use crate::scoring::DEFAULT_MATCH_WINDOW;
use crate::sorter::SortParams;

pub const DEFAULT_SEED: u64 = 20_240_607;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorChoice {
    /// Reads `scene.json` next to the frames; synthetic videos only.
    Oracle,
    External,
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: DetectorChoice,
    /// Program and arguments for the external kind.
    pub command: Vec<String>,
    /// Root holding `<video_id>/<image stem>.det.jsonl` for the precomputed kind.
    pub dir: Option<PathBuf>,
    pub timeout_s: f64,
    pub classes: BTreeSet<String>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorChoice::Oracle,
            command: vec![],
            dir: None,
            timeout_s: DEFAULT_TIMEOUT_S,
            classes: default_vehicle_classes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub background_fraction: f64,
    pub sort: SortParams,
    /// Side of the square neighbourhood for local mean and deviation, odd.
    pub mask_block: u32,
    /// Share of a candidate box that must lie on road.
    pub min_overlap: f64,
    pub decision: DecisionParams,
    pub detector: DetectorConfig,
    pub match_window_s: f64,
    /// Worker threads for corpus runs; 0 picks the available parallelism.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            background_fraction: 0.10,
            sort: SortParams::default(),
            mask_block: 31,
            min_overlap: 0.2,
            decision: DecisionParams::default(),
            detector: DetectorConfig::default(),
            match_window_s: DEFAULT_MATCH_WINDOW,
            jobs: 0,
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.background_fraction > 0.0 && self.background_fraction <= 1.0) {
            return Err(bad(format!("background_fraction {} outside (0,1]", self.background_fraction)));
        }
        if self.sort.histogram_stride == 0 {
            return Err(bad("sort.histogram_stride must be >= 1"));
        }
        if let Some(w) = self.sort.background_window_override {
            if !(w > 0.0 && w.is_finite()) {
                return Err(bad(format!("background_window_override {w} must be positive")));
            }
        }
        let d = &self.sort.directions;
        if !(d.gate_frac > 0.0 && d.gate_frac <= 1.0) || !(0.0..=1.0).contains(&d.support_fraction) || d.min_move_px < 0.0 {
            return Err(bad("sort.directions out of range"));
        }
        if !(self.sort.peaks.min_prominence >= 0.0) {
            return Err(bad("sort.peaks.min_prominence must be >= 0"));
        }
        for (name, k) in [
            ("day", self.sort.k_table.day),
            ("night", self.sort.k_table.night),
            ("snow", self.sort.k_table.snow),
        ] {
            MaskParams {
                k1: k.k1,
                k2: k.k2,
                block: self.mask_block,
            }
            .validate()
            .map_err(|e| bad(format!("k_table.{name}: {e}")))?;
        }
        if !(self.min_overlap > 0.0 && self.min_overlap <= 1.0) {
            return Err(bad(format!("min_overlap {} outside (0,1]", self.min_overlap)));
        }
        self.decision.validate().map_err(|e| bad(format!("decision: {e}")))?;
        if !(self.match_window_s >= 0.0) {
            return Err(bad("match_window_s must be >= 0"));
        }
        match self.detector.kind {
            DetectorChoice::External if self.detector.command.is_empty() => {
                return Err(bad("detector.command is required for the external detector"))
            }
            _ => {}
        }
        if !(self.detector.timeout_s > 0.0 && self.detector.timeout_s.is_finite()) {
            return Err(bad("detector.timeout_s must be positive"));
        }
        Ok(())
    }

    pub fn anomaly_settings(&self) -> AnomalySettings {
        AnomalySettings {
            background: BackgroundParams {
                fraction: self.background_fraction,
                seed: self.seed,
            },
            block: self.mask_block,
            min_overlap: self.min_overlap,
            decision: self.decision.clone(),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
