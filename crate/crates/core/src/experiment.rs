//! Config-driven experiment runs and their on-disk artifacts.
//!
//! A run reads an [`ExperimentConfig`] (TOML), damps the initial state,
//! applies a sequence of optimized CMs, and writes into the output
//! directory:
//!
//! * `report.json`: the [`ExperimentReport`], including the resolved config
//! * `records.csv`: `step,distance,step_probability,sequence_probability`
//! * `qgrid_original.csv`, `qgrid_error_dissipated.csv`,
//!   `qgrid_error_recovered.csv`: Q-function grids
//!
//! Grid files are comma-separated; the first row holds the `Re(beta)` axis
//! (after an empty corner cell), the first column the `Im(beta)` axis, and
//! the body the Q values. Every file is written to a temporary name and
//! renamed into place.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dissipation::DampingSpec;
use crate::error::{Error, Result};
use crate::fock_core::{FieldKet, C64};
use crate::measurement::cm_step;
use crate::metrics::{distance, error_matrix, filtering_probability, q_function, CostSpec, QGridSpec};
use crate::recovery_optimizer::{
    engine_n_max, run_sequence_with, saturation_report, CmParams, GridCounts, OptimizerConfig,
    RecoveryRecord, SaturationSummary, SequenceOptions, StopReason, DEFAULT_SATURATION_THRESHOLD,
};

pub const ENGINE_NAME: &str = env!("CARGO_PKG_NAME");
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Initial-state amplitudes must be normalized to this tolerance.
pub const CONFIG_NORM_TOL: f64 = 1e-9;

/// Complex amplitude as `[re, im]` or `{ mag, phase_over_pi }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Amplitude {
    Cartesian([f64; 2]),
    Polar { mag: f64, phase_over_pi: f64 },
}

impl Amplitude {
    pub fn value(&self) -> C64 {
        match *self {
            Amplitude::Cartesian([re, im]) => C64::new(re, im),
            Amplitude::Polar { mag, phase_over_pi } => C64::from_polar(mag, phase_over_pi * PI),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FockAmplitude {
    pub n: usize,
    pub amp: Amplitude,
}

/// Angle in radians, or `{ over_pi = x }` for `x * pi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Angle {
    Radians(f64),
    OverPi { over_pi: f64 },
}

impl Angle {
    pub fn radians(&self) -> f64 {
        match *self {
            Angle::Radians(x) => x,
            Angle::OverPi { over_pi } => over_pi * PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsEntry {
    pub theta_i: Angle,
    pub phi_i: Angle,
    pub theta_f: Angle,
    pub phi_f: Angle,
    pub g_tau: f64,
}

impl ParamsEntry {
    pub fn params(&self) -> CmParams {
        CmParams {
            theta_i: self.theta_i.radians(),
            phi_i: self.phi_i.radians(),
            theta_f: self.theta_f.radians(),
            phi_f: self.phi_f.radians(),
            g_tau: self.g_tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub g_tau_max: f64,
    pub grid: GridCounts,
    pub refine_iters: usize,
    pub refine_starts: usize,
    pub random_restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            g_tau_max: d.g_tau_max,
            grid: d.grid,
            refine_iters: d.refine_iters,
            refine_starts: d.refine_starts,
            random_restarts: d.random_restarts,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub initial_state: Vec<FockAmplitude>,
    pub gamma_t: f64,
    #[serde(default = "default_cost_r")]
    pub cost_r: f64,
    #[serde(default)]
    pub max_cms: usize,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub q_grid: QGridSpec,
    #[serde(default)]
    pub inject_params: Vec<ParamsEntry>,
    #[serde(default = "default_saturation_threshold")]
    pub saturation_threshold: f64,
    #[serde(default)]
    pub inter_cm_gamma_t: f64,
    /// Not part of the resolved config: it does not affect results.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

fn default_cost_r() -> f64 {
    2.0
}

fn default_saturation_threshold() -> f64 {
    DEFAULT_SATURATION_THRESHOLD
}

/// Validated inputs derived from an [`ExperimentConfig`].
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub ket: FieldKet,
    pub damping: DampingSpec,
    pub optimizer: OptimizerConfig,
    pub sequence: SequenceOptions,
    pub injected: Vec<CmParams>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("<config>", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }

    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        if self.initial_state.is_empty() {
            return Err(Error::config("initial_state", "needs at least one amplitude"));
        }
        let mut seen = BTreeSet::new();
        for entry in &self.initial_state {
            if !seen.insert(entry.n) {
                return Err(Error::config(
                    "initial_state",
                    format!("Fock level {} listed twice", entry.n),
                ));
            }
            let v = entry.amp.value();
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::config("initial_state", "non-finite amplitude"));
            }
        }
        let top = *seen.last().expect("nonempty");
        let mut coeffs = vec![C64::new(0.0, 0.0); top + 1];
        for entry in &self.initial_state {
            coeffs[entry.n] = entry.amp.value();
        }
        let norm_sqr: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        if (norm_sqr - 1.0).abs() > CONFIG_NORM_TOL {
            return Err(Error::config(
                "initial_state",
                format!("amplitudes must be normalized (sum |c_n|^2 = {norm_sqr})"),
            ));
        }
        let ket = FieldKet::normalized(coeffs)?;

        let damping =
            DampingSpec::new(self.gamma_t).map_err(|e| Error::config("gamma_t", e.to_string()))?;
        let inter = DampingSpec::new(self.inter_cm_gamma_t)
            .map_err(|e| Error::config("inter_cm_gamma_t", e.to_string()))?;
        let cost = CostSpec::new(self.cost_r).map_err(|e| Error::config("cost_r", e.to_string()))?;
        if !(self.saturation_threshold.is_finite() && self.saturation_threshold >= 0.0) {
            return Err(Error::config("saturation_threshold", "must be finite and >= 0"));
        }
        self.q_grid
            .validate()
            .map_err(|e| Error::config("q_grid", e.to_string()))?;

        let injected: Vec<CmParams> = self.inject_params.iter().map(ParamsEntry::params).collect();
        let o = &self.optimizer;
        let optimizer = OptimizerConfig {
            cost,
            g_tau_max: o.g_tau_max,
            grid: o.grid,
            refine_iters: o.refine_iters,
            refine_starts: o.refine_starts,
            random_restarts: o.random_restarts,
            seed: o.seed,
            inject: injected.clone(),
        };
        optimizer
            .validate()
            .map_err(|e| Error::config("optimizer", e.to_string()))?;

        Ok(ResolvedExperiment {
            ket,
            damping,
            optimizer,
            sequence: SequenceOptions {
                max_steps: self.max_cms,
                inter_cm_damping: inter,
            },
            injected,
        })
    }

    /// SHA-256 of the resolved config as serialized in the report.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedEvaluation {
    pub params: CmParams,
    pub probability: Option<f64>,
    pub distance_after: Option<f64>,
    pub reduction_factor: Option<f64>,
    pub cost: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub engine: String,
    pub engine_version: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub n_max: usize,
    pub d0: f64,
    pub filtering_probability: f64,
    /// `d0 / final distance`; null when undefined (`d0 = 0`) or infinite.
    pub reduction_factor: Option<f64>,
    pub records: Vec<RecoveryRecord>,
    pub stop_reason: StopReason,
    pub saturation: SaturationSummary,
    /// Injected parameters applied once to the dissipated state.
    pub injected: Vec<InjectedEvaluation>,
    pub artifacts: Vec<String>,
}

pub const REPORT_FILE: &str = "report.json";
pub const RECORDS_FILE: &str = "records.csv";
pub const QGRID_ORIGINAL: &str = "original";
pub const QGRID_ERROR_DISSIPATED: &str = "error_dissipated";
pub const QGRID_ERROR_RECOVERED: &str = "error_recovered";

pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    let resolved = config.resolve()?;
    let run = run_sequence_with(
        &resolved.ket,
        resolved.damping,
        &resolved.optimizer,
        &resolved.sequence,
    )?;
    let n_max = engine_n_max(resolved.ket.max_photon_number(), resolved.sequence.max_steps);

    let d0 = run.records[0].distance_after;
    let filtering = filtering_probability(&run.target, &run.damped)?;
    let final_distance = run.records.last().expect("step 0 record").distance_after;
    let reduction_factor = ratio(d0, final_distance);
    let saturation = saturation_report(&run.records, config.saturation_threshold)?;

    let injected = resolved
        .injected
        .iter()
        .map(|p| match cm_step(&run.damped, p) {
            Ok(out) => {
                let d = distance(&out.field_state, &run.target)?;
                Ok(InjectedEvaluation {
                    params: *p,
                    probability: Some(out.probability),
                    distance_after: Some(d),
                    reduction_factor: ratio(d0, d),
                    cost: Some(crate::metrics::cost(d, out.probability, resolved.optimizer.cost)),
                    error: None,
                })
            }
            Err(e) => Ok(InjectedEvaluation {
                params: *p,
                probability: None,
                distance_after: None,
                reduction_factor: None,
                cost: None,
                error: Some(e.to_string()),
            }),
        })
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let grids = [
        (QGRID_ORIGINAL, run.target.entries().clone()),
        (QGRID_ERROR_DISSIPATED, error_matrix(&run.damped, &run.target)?),
        (QGRID_ERROR_RECOVERED, error_matrix(&run.final_state, &run.target)?),
    ];
    let grid_paths = export_qgrids(&grids, &config.q_grid, out_dir)?;

    write_atomic(&out_dir.join(RECORDS_FILE), records_csv(&run.records).as_bytes())?;

    let mut artifacts: Vec<String> = vec![REPORT_FILE.into(), RECORDS_FILE.into()];
    artifacts.extend(
        grid_paths
            .iter()
            .filter_map(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned()),
    );

    let report = ExperimentReport {
        provenance: Provenance {
            engine: ENGINE_NAME.into(),
            engine_version: ENGINE_VERSION.into(),
            config_hash: config.hash(),
        },
        config: config.clone(),
        n_max,
        d0,
        filtering_probability: filtering,
        reduction_factor,
        records: run.records,
        stop_reason: run.stop_reason,
        saturation,
        injected,
        artifacts,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Internal(format!("report serialization: {e}")))?;
    write_atomic(&out_dir.join(REPORT_FILE), json.as_bytes())?;
    Ok(report)
}

fn ratio(d0: f64, d: f64) -> Option<f64> {
    let r = d0 / d;
    (d0 > 0.0 && r.is_finite()).then_some(r)
}

/// Q-function grids only: the original state, the error after dissipation,
/// and, when the config injects parameters, the error after the first
/// injected CM.
pub fn run_qgrids(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let resolved = config.resolve()?;
    let n_max = engine_n_max(resolved.ket.max_photon_number(), resolved.sequence.max_steps.max(1));
    let target = crate::fock_core::pure_density(&resolved.ket.embed(n_max)?)?;
    let damped = crate::dissipation::apply_damping(&target, resolved.damping);
    let mut grids = vec![
        (QGRID_ORIGINAL, target.entries().clone()),
        (QGRID_ERROR_DISSIPATED, error_matrix(&damped, &target)?),
    ];
    if let Some(p) = resolved.injected.first() {
        let out = cm_step(&damped, p)?;
        grids.push((QGRID_ERROR_RECOVERED, error_matrix(&out.field_state, &target)?));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    export_qgrids(&grids, &config.q_grid, out_dir)
}

/// Writes `qgrid_<label>.csv` for every labeled matrix.
pub fn export_qgrids<S: AsRef<str>>(
    states: &[(S, DMatrix<C64>)],
    spec: &QGridSpec,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    let mut paths = Vec::with_capacity(states.len());
    for (label, matrix) in states {
        let grid = q_function(matrix, spec)?;
        let path = out_dir.join(format!("qgrid_{}.csv", label.as_ref()));
        write_atomic(&path, qgrid_csv(&grid).as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn qgrid_csv(grid: &crate::metrics::QGrid) -> String {
    let mut s = String::new();
    for re in &grid.re_axis {
        s.push(',');
        s.push_str(&fmt_f64(*re));
    }
    s.push('\n');
    for (im, row) in grid.im_axis.iter().zip(&grid.values) {
        s.push_str(&fmt_f64(*im));
        for v in row {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

pub fn records_csv(records: &[RecoveryRecord]) -> String {
    let mut s = String::from("step,distance,step_probability,sequence_probability\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.step_index,
            fmt_f64(r.distance_after),
            fmt_f64(r.step_probability),
            fmt_f64(r.sequence_probability)
        );
    }
    s
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::validation(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// The worked example's CM parameters.
pub fn reference_params() -> ParamsEntry {
    ParamsEntry {
        theta_i: Angle::OverPi { over_pi: 0.375 },
        phi_i: Angle::OverPi { over_pi: 1.25 },
        theta_f: Angle::OverPi { over_pi: 0.375 },
        phi_f: Angle::OverPi { over_pi: 0.25 },
        g_tau: 37.95,
    }
}

/// `(|0> + e^{i pi/3}|1>)/sqrt(2)` damped to `gamma t = 0.3`.
pub fn reference_config(cost_r: f64, max_cms: usize) -> ExperimentConfig {
    let half = std::f64::consts::FRAC_1_SQRT_2;
    ExperimentConfig {
        initial_state: vec![
            FockAmplitude {
                n: 0,
                amp: Amplitude::Cartesian([half, 0.0]),
            },
            FockAmplitude {
                n: 1,
                amp: Amplitude::Polar {
                    mag: half,
                    phase_over_pi: 1.0 / 3.0,
                },
            },
        ],
        gamma_t: 0.3,
        cost_r,
        max_cms,
        optimizer: OptimizerSection::default(),
        q_grid: QGridSpec::default(),
        inject_params: vec![reference_params()],
        saturation_threshold: DEFAULT_SATURATION_THRESHOLD,
        inter_cm_gamma_t: 0.0,
        output_dir: None,
    }
}

/// Built-in reproduction runs: the single CM at `r = 2` and four-CM
/// sequences at `r = 2, 1, 0`.
pub fn reference_runs() -> Vec<(&'static str, ExperimentConfig)> {
    vec![
        ("single_cm_r2", reference_config(2.0, 1)),
        ("sequence_r2", reference_config(2.0, 4)),
        ("sequence_r1", reference_config(1.0, 4)),
        ("sequence_r0", reference_config(0.0, 4)),
    ]
}
