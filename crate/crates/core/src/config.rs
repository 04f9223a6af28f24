//! Run configuration: TOML with nested blocks and a strict schema
//! (unknown keys rejected), plus the run manifest.
//!
//! Frequencies in config files are linear frequencies in MHz (the f of
//! Ω = 2πf); the single MHz → rad/µs conversion happens here at parse time
//! and nowhere else.

use crate::analysis::{CollapseExponents, CollapseMode, FitMode};
use crate::error::{KzqError, Result};
use crate::kzm::{Backend, SweepProtocol};
use crate::model::{CCMParams, ChainModel, LatticeSpec};
use crate::schedule::RateGrid;
use crate::tensornet::dmrg::DmrgOptions;
use crate::tensornet::tebd::TebdConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::TAU;
use std::path::Path;

/// rad/µs per MHz of linear frequency.
pub const MHZ_TO_RAD_PER_US: f64 = TAU;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeBlock,
    #[serde(default)]
    pub schedule: Option<ScheduleBlock>,
    #[serde(default)]
    pub backend: BackendBlock,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub seeds: SeedsBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub phase_diagram: Option<PhaseDiagramBlock>,
    #[serde(default)]
    pub ccm: Option<CcmBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeBlock {
    pub n_sites: usize,
    pub rb_over_a: f64,
    /// Rabi frequency Ω/2π in MHz.
    #[serde(default = "default_omega_mhz")]
    pub omega_mhz: f64,
    /// Interaction-range cutoff in sites; defaults to the full chain.
    #[serde(default)]
    pub cutoff: Option<usize>,
}

fn default_omega_mhz() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    /// Initial detuning Δ0/2π, MHz.
    pub delta0_mhz: f64,
    /// Final detuning Δf/2π, MHz.
    pub delta_f_mhz: f64,
    /// Sweep rates s/2π, MHz/µs.
    pub rates_mhz_per_us: Vec<f64>,
    #[serde(default)]
    pub ramp_on_us: Option<f64>,
    #[serde(default)]
    pub ramp_off_us: Option<f64>,
    /// Detunings (MHz) at which ξ is recorded during the sweep.
    #[serde(default)]
    pub checkpoints_mhz: Vec<f64>,
    /// Shots sampled from the final state of each sweep.
    #[serde(default = "default_shots")]
    pub shots: usize,
}

fn default_shots() -> usize {
    1000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Exact,
    Mps,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendBlock {
    #[serde(default = "default_backend_kind")]
    pub kind: BackendKind,
    /// Step for the exact backend, µs.
    #[serde(default = "default_exact_dt")]
    pub exact_dt_us: f64,
    #[serde(default)]
    pub tebd: TebdBlock,
    #[serde(default)]
    pub dmrg: DmrgBlock,
}

fn default_backend_kind() -> BackendKind {
    BackendKind::Exact
}

fn default_exact_dt() -> f64 {
    crate::kzm::EXACT_DT
}

impl Default for BackendBlock {
    fn default() -> Self {
        Self {
            kind: default_backend_kind(),
            exact_dt_us: default_exact_dt(),
            tebd: TebdBlock::default(),
            dmrg: DmrgBlock::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TebdBlock {
    pub ell: usize,
    pub dt_us: f64,
    pub d_max: usize,
    pub svd_cutoff: f64,
}

impl Default for TebdBlock {
    fn default() -> Self {
        let c = TebdConfig::default();
        Self {
            ell: c.ell,
            dt_us: c.dt,
            d_max: c.d_max,
            svd_cutoff: c.svd_cutoff,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DmrgBlock {
    /// Bond-dimension ramp, pairs of (d_max, sweeps).
    pub stages: Vec<[usize; 2]>,
    pub svd_cutoff: f64,
    pub seed: u64,
}

impl Default for DmrgBlock {
    fn default() -> Self {
        let o = DmrgOptions::default();
        Self {
            stages: o.stages.iter().map(|&(d, s)| [d, s]).collect(),
            svd_cutoff: o.svd_cutoff,
            seed: o.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisBlock {
    /// Bulk trim, sites per edge.
    pub trim: usize,
    /// "modulus", "z2", "z3", or "z4".
    pub fit_mode: String,
    pub collapse: CollapseBlock,
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        Self {
            trim: 8,
            fit_mode: "z2".into(),
            collapse: CollapseBlock::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollapseBlock {
    pub mu: f64,
    pub kappa: f64,
    /// "spatial" or "finite-time".
    pub mode: String,
    /// Reference rate (rad/µs²); geometric mean of the grid when absent.
    pub s0: Option<f64>,
}

impl Default for CollapseBlock {
    fn default() -> Self {
        Self {
            mu: 0.5,
            kappa: 0.5,
            mode: "spatial".into(),
            s0: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsBlock {
    pub base: u64,
}

impl Default for SeedsBlock {
    fn default() -> Self {
        Self { base: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: String,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDiagramBlock {
    /// Scan line samples (R_B/a, Δ/Ω).
    pub line: Vec<[f64; 2]>,
    #[serde(default)]
    pub gap_grid: Vec<[f64; 2]>,
    /// Chain length for the scans; defaults to the lattice block's.
    #[serde(default)]
    pub n_sites: Option<usize>,
    /// Rabi drive as a fraction of Ω (0 for classical scans).
    #[serde(default = "default_drive_fraction")]
    pub drive_fraction: f64,
}

fn default_drive_fraction() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcmBlock {
    /// Transverse field f, rad/µs.
    pub f: f64,
    /// Bond coupling J, rad/µs.
    pub j: f64,
    pub phi: f64,
    pub theta: f64,
    pub n_sites: usize,
    /// Number of eigenvalues to report.
    pub k: usize,
}

impl Default for CcmBlock {
    fn default() -> Self {
        Self {
            f: 1.0,
            j: 1.0,
            phi: 0.0,
            theta: 0.0,
            n_sites: 6,
            k: 9,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| KzqError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lattice.n_sites < 2 {
            return Err(KzqError::Config(format!(
                "lattice.n_sites must be at least 2, got {}",
                self.lattice.n_sites
            )));
        }
        if !(self.lattice.omega_mhz > 0.0) {
            return Err(KzqError::Config(format!(
                "lattice.omega_mhz must be positive, got {}",
                self.lattice.omega_mhz
            )));
        }
        if let Some(s) = &self.schedule {
            if s.rates_mhz_per_us.is_empty() {
                return Err(KzqError::Config(
                    "schedule.rates_mhz_per_us must not be empty".into(),
                ));
            }
            if s.shots == 0 {
                return Err(KzqError::Config("schedule.shots must be positive".into()));
            }
        }
        if let Some(p) = &self.phase_diagram {
            if p.line.is_empty() && p.gap_grid.is_empty() {
                return Err(KzqError::Config(
                    "phase_diagram needs a line or a gap_grid".into(),
                ));
            }
        }
        self.fit_mode()?;
        self.collapse_mode()?;
        Ok(())
    }

    /// Ω in rad/µs.
    pub fn omega(&self) -> f64 {
        self.lattice.omega_mhz * MHZ_TO_RAD_PER_US
    }

    pub fn model(&self) -> Result<ChainModel> {
        let lattice = LatticeSpec::new(
            self.lattice.n_sites,
            self.lattice.rb_over_a,
            self.omega(),
        )?;
        let cutoff = self
            .lattice
            .cutoff
            .unwrap_or(self.lattice.n_sites - 1)
            .max(1);
        Ok(ChainModel::Rydberg { lattice, cutoff })
    }

    fn schedule_block(&self) -> Result<&ScheduleBlock> {
        self.schedule
            .as_ref()
            .ok_or_else(|| KzqError::Config("config has no [schedule] block".into()))
    }

    pub fn protocol(&self) -> Result<SweepProtocol> {
        let s = self.schedule_block()?;
        Ok(SweepProtocol {
            delta0: s.delta0_mhz * MHZ_TO_RAD_PER_US,
            delta_f: s.delta_f_mhz * MHZ_TO_RAD_PER_US,
            omega_max: self.omega(),
            ramp_on: s.ramp_on_us,
            ramp_off: s.ramp_off_us,
        })
    }

    /// Sweep rates in rad/µs².
    pub fn rates(&self) -> Result<RateGrid> {
        let s = self.schedule_block()?;
        RateGrid::new(
            s.rates_mhz_per_us
                .iter()
                .map(|&r| r * MHZ_TO_RAD_PER_US)
                .collect(),
        )
    }

    /// Checkpoint detunings in rad/µs.
    pub fn checkpoints(&self) -> Vec<f64> {
        self.schedule
            .as_ref()
            .map(|s| {
                s.checkpoints_mhz
                    .iter()
                    .map(|&d| d * MHZ_TO_RAD_PER_US)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn backend(&self) -> Backend {
        match self.backend.kind {
            BackendKind::Exact => Backend::Exact {
                dt: self.backend.exact_dt_us,
            },
            BackendKind::Mps => Backend::Mps(self.tebd_config()),
        }
    }

    pub fn tebd_config(&self) -> TebdConfig {
        let t = &self.backend.tebd;
        TebdConfig {
            ell: t.ell,
            dt: t.dt_us,
            d_max: t.d_max,
            svd_cutoff: t.svd_cutoff,
        }
    }

    pub fn dmrg_options(&self) -> DmrgOptions {
        let d = &self.backend.dmrg;
        DmrgOptions {
            stages: d.stages.iter().map(|&[dm, sw]| (dm, sw)).collect(),
            svd_cutoff: d.svd_cutoff,
            seed: d.seed,
            ..DmrgOptions::default()
        }
    }

    pub fn fit_mode(&self) -> Result<FitMode> {
        match self.analysis.fit_mode.as_str() {
            "modulus" => Ok(FitMode::Modulus),
            "z2" => Ok(FitMode::DensityWave(2)),
            "z3" => Ok(FitMode::DensityWave(3)),
            "z4" => Ok(FitMode::DensityWave(4)),
            other => Err(KzqError::Config(format!(
                "analysis.fit_mode must be one of modulus|z2|z3|z4, got {other:?}"
            ))),
        }
    }

    pub fn collapse_mode(&self) -> Result<CollapseMode> {
        match self.analysis.collapse.mode.as_str() {
            "spatial" => Ok(CollapseMode::Spatial),
            "finite-time" => Ok(CollapseMode::FiniteTime),
            other => Err(KzqError::Config(format!(
                "analysis.collapse.mode must be spatial|finite-time, got {other:?}"
            ))),
        }
    }

    pub fn collapse_exponents(&self) -> CollapseExponents {
        CollapseExponents {
            mu: self.analysis.collapse.mu,
            kappa: self.analysis.collapse.kappa,
        }
    }

    pub fn ccm_params(&self) -> CCMParams {
        let c = self.ccm.clone().unwrap_or_default();
        CCMParams {
            f: c.f,
            j: c.j,
            phi: c.phi,
            theta: c.theta,
            n_states: 3,
        }
    }
}

/// SHA-256 of the raw config text.
pub fn config_hash(raw: &str) -> String {
    let mut h = Sha256::new();
    h.update(raw.as_bytes());
    hex::encode(h.finalize())
}

/// Both representations of a frequency-like quantity, recorded in the
/// manifest so the conversion is auditable.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FreqRecord {
    pub mhz: f64,
    pub rad_per_us: f64,
}

impl FreqRecord {
    pub fn from_mhz(mhz: f64) -> Self {
        Self {
            mhz,
            rad_per_us: mhz * MHZ_TO_RAD_PER_US,
        }
    }
}

/// Emitted exactly once per run, alongside the result files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub seeds: Vec<u64>,
    pub wall_clock_s: f64,
    /// Every file the run wrote, relative to the output directory.
    pub files: Vec<String>,
    pub omega: FreqRecord,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(raw_config: &str, omega_mhz: f64) -> Self {
        Self {
            config_hash: config_hash(raw_config),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: Vec::new(),
            wall_clock_s: 0.0,
            files: Vec::new(),
            omega: FreqRecord::from_mhz(omega_mhz),
            notes: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| KzqError::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}
