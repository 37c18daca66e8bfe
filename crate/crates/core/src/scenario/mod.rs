//! Runnable experiments behind the `qkdsim` binary.
//!
//! A run takes a [`ScenarioConfig`] (JSON with top-level `system`, `channel`,
//! `scenario` and `security` blocks, every field defaulted) and produces a
//! [`Report`]: a JSON [`Summary`] plus one or more CSV tables. Reports are
//! rendered in memory and contain no wall-clock data, so a re-run with the
//! same config and seed is byte-identical.

mod long_run;
mod loss_sweep;
mod postprocess;
mod visibility;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::postproc::{finite_key, SecurityParams};
use crate::protocol::SystemParams;

pub use long_run::{run_long_run, BinRow, LongRunConfig};
pub use loss_sweep::{
    calibrated_system, run_loss_sweep, Calibration, CurveRow, LossGrid, LossSweepConfig, McRow, SweepRow,
};
pub use postprocess::{run_postprocess_demo, PostprocessDemoConfig, PostprocessRow};
pub use visibility::{run_visibility_scan, HistogramRow, RoundRow, ScanPointRow, VisibilityScanConfig};

/// File name of the JSON summary inside the output directory.
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    VisibilityScan,
    LongRun,
    LossSweep,
    PostprocessDemo,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::VisibilityScan,
        ScenarioKind::LongRun,
        ScenarioKind::LossSweep,
        ScenarioKind::PostprocessDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::VisibilityScan => "visibility-scan",
            ScenarioKind::LongRun => "long-run",
            ScenarioKind::LossSweep => "loss-sweep",
            ScenarioKind::PostprocessDemo => "postprocess-demo",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

/// Scenario-specific settings; only the block for the selected scenario is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSettings {
    /// Run seed; `--seed` overrides it.
    pub seed: u64,
    pub visibility_scan: VisibilityScanConfig,
    pub long_run: LongRunConfig,
    pub loss_sweep: LossSweepConfig,
    pub postprocess_demo: PostprocessDemoConfig,
}

impl Default for ScenarioSettings {
    fn default() -> Self {
        Self {
            seed: 1,
            visibility_scan: VisibilityScanConfig::default(),
            long_run: LongRunConfig::default(),
            loss_sweep: LossSweepConfig::default(),
            postprocess_demo: PostprocessDemoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemParams,
    pub channel: ChannelParams,
    pub scenario: ScenarioSettings,
    pub security: SecurityParams,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scenario.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.scenario.seed
    }

    /// Checks the shared blocks and the block of `kind`; every failure is
    /// reported as [`Error::Config`].
    pub fn validate(&self, kind: ScenarioKind) -> Result<()> {
        let check = || -> Result<()> {
            self.system.validate()?;
            self.channel.validate()?;
            self.security.validate()?;
            match kind {
                ScenarioKind::VisibilityScan => self.scenario.visibility_scan.validate(),
                ScenarioKind::LongRun => self.scenario.long_run.validate(),
                ScenarioKind::LossSweep => self.scenario.loss_sweep.validate(),
                ScenarioKind::PostprocessDemo => self.scenario.postprocess_demo.validate(),
            }
        };
        check().map_err(|e| match e {
            Error::Config(msg) => Error::Config(msg),
            Error::InvalidInput(msg) => Error::Config(msg),
            other => Error::Config(other.to_string()),
        })
    }
}

/// One Table-2-style result row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub loss_db: f64,
    pub sifted_bps: f64,
    pub secure_bps: f64,
    /// Signal-state QBER as a fraction.
    pub qber: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub generator: String,
    pub key_rate_method: &'static str,
    /// Fully resolved configuration, seed included.
    pub config: ScenarioConfig,
    pub rows: Vec<SummaryRow>,
    /// Scenario-specific scalar results.
    pub metrics: BTreeMap<String, f64>,
    /// CSV files written next to the summary.
    pub files: Vec<String>,
}

/// A rendered output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Summary,
    pub tables: Vec<OutputFile>,
}

impl Report {
    fn new(kind: ScenarioKind, config: &ScenarioConfig) -> Self {
        Self {
            summary: Summary {
                scenario: kind,
                seed: config.seed(),
                generator: format!("qkdsim {}", env!("CARGO_PKG_VERSION")),
                key_rate_method: finite_key::METHOD,
                config: config.clone(),
                rows: Vec::new(),
                metrics: BTreeMap::new(),
                files: Vec::new(),
            },
            tables: Vec::new(),
        }
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.summary.metrics.insert(name.to_string(), value);
    }

    fn table<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<()> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in rows {
            writer.serialize(row).map_err(|source| Error::Csv {
                path: PathBuf::from(name),
                source,
            })?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io {
            path: PathBuf::from(name),
            source: e.into_error(),
        })?;
        self.summary.files.push(name.to_string());
        self.tables.push(OutputFile {
            name: name.to_string(),
            bytes,
        });
        Ok(())
    }

    /// Pretty-printed summary JSON with a trailing newline.
    pub fn summary_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(&self.summary)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Writes the CSV tables and `summary.json` into `dir`, creating it if
    /// needed. Returns the paths written.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::with_capacity(self.tables.len() + 1);
        for file in &self.tables {
            let path = dir.join(&file.name);
            fs::write(&path, &file.bytes).map_err(io(&path))?;
            written.push(path);
        }
        let path = dir.join(SUMMARY_FILE);
        fs::write(&path, self.summary_json()?).map_err(io(&path))?;
        written.push(path);
        Ok(written)
    }
}

/// Validates `config` for `kind` and runs the scenario.
pub fn run(kind: ScenarioKind, config: &ScenarioConfig) -> Result<Report> {
    config.validate(kind)?;
    match kind {
        ScenarioKind::VisibilityScan => run_visibility_scan(config),
        ScenarioKind::LongRun => run_long_run(config),
        ScenarioKind::LossSweep => run_loss_sweep(config),
        ScenarioKind::PostprocessDemo => run_postprocess_demo(config),
    }
}

/// Independent sub-seed for stream `tag`, item `index` of a run (SplitMix64).
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Stream tags for [`derive_seed`].
pub(crate) mod stream {
    pub const CHANNEL: u64 = 1;
    pub const DETECTION: u64 = 2;
    pub const KEY: u64 = 3;
    pub const ERRORS: u64 = 4;
    pub const TOEPLITZ: u64 = 5;
    pub const CASCADE: u64 = 6;
}

/// Channel parameters with the trajectory seed mixed with the run seed.
pub(crate) fn run_channel(config: &ScenarioConfig, index: u64) -> ChannelParams {
    ChannelParams {
        seed: derive_seed(config.seed() ^ config.channel.seed, stream::CHANNEL, index),
        ..config.channel
    }
}

pub(crate) fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {x}")))
    }
}
