//! Experiment configuration: TOML text, strictly typed, unknown keys rejected.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use stochom_core::convex::MonotoneLaw;
use stochom_core::linalg::DMat;
use stochom_core::mandel::{isotropic_stiffness, sym_dim};
use stochom_core::microstructure::{CoefficientSet, FieldKind, FieldSpec};
use stochom_core::rothe::{LoadProgram, RotheParams};

use crate::expr::Expr;

/// Parse or validation failure, located by line/column or by field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted key path, e.g. `field.probabilities`, when known.
    pub field: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn at(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.into()),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{field}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    MicroRun,
    HomogenizedRun,
    EtaSweep,
    CellProblem,
    AcceptanceSuite,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::MicroRun => "micro-run",
            ExperimentKind::HomogenizedRun => "homogenized-run",
            ExperimentKind::EtaSweep => "eta-sweep",
            ExperimentKind::CellProblem => "cell-problem",
            ExperimentKind::AcceptanceSuite => "acceptance-suite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKindConfig {
    Checkerboard,
    Laminate,
    Voronoi,
}

impl From<FieldKindConfig> for FieldKind {
    fn from(k: FieldKindConfig) -> Self {
        match k {
            FieldKindConfig::Checkerboard => FieldKind::CheckerboardIid,
            FieldKindConfig::Laminate => FieldKind::Laminate1d,
            FieldKindConfig::Voronoi => FieldKind::VoronoiSeeded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub kind: FieldKindConfig,
    pub dim: usize,
    #[serde(default = "one")]
    pub cell_size_length: f64,
    pub probabilities: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LawConfig {
    NortonHoff {
        yield_stress: f64,
        exponent: f64,
    },
    /// `g(Σ) = rate · Σ`.
    Linear {
        rate: f64,
    },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    /// Lamé parameters; alternatively a full Mandel `stiffness`.
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub stiffness: Option<Vec<Vec<f64>>>,
    /// Scalar hardening `L = hardening · I`.
    #[serde(default)]
    pub hardening: f64,
    pub law: LawConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Elements per axis of the macroscopic (or micro-run) box.
    pub cells_per_axis: usize,
    #[serde(default = "one")]
    pub length: f64,
    /// Elements per microstructure cell for η-dependent micro grids.
    #[serde(default = "two")]
    pub elements_per_cell: usize,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default = "one")]
    pub T_e_seconds: f64,
    /// Dyadic level `m`, `h = T_e / 2^m`.
    pub level: u32,
    /// `κ = 1/m_reg`; absent means no regularization.
    pub m_reg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    /// One expression per displacement component.
    #[serde(default)]
    pub body_force: Vec<String>,
    /// One expression per internal variable; absent means zero.
    pub initial_z: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RveConfig {
    pub cells_per_axis: usize,
    #[serde(default = "two")]
    pub elements_per_cell: usize,
    /// Realization seeds; distinct.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_energy_margin")]
    pub energy_margin: f64,
    #[serde(default = "default_weak_residual")]
    pub weak_residual: f64,
    #[serde(default = "default_symmetry")]
    pub symmetry: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            energy_margin: default_energy_margin(),
            weak_residual: default_weak_residual(),
            symmetry: default_symmetry(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_name")]
    pub name: String,
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Scales `η`, strictly decreasing; micro runs use the first.
    #[serde(default = "default_etas")]
    pub etas: Vec<f64>,
    pub field: Option<FieldConfig>,
    #[serde(default)]
    pub phases: Vec<PhaseConfig>,
    pub grid: Option<GridConfig>,
    pub time: Option<TimeConfig>,
    pub load: Option<LoadConfig>,
    pub rve: Option<RveConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Acceptance criteria to run; empty means all.
    #[serde(default)]
    pub criteria: Vec<u32>,
}

fn one() -> f64 {
    1.0
}
fn two() -> usize {
    2
}
fn default_energy_margin() -> f64 {
    1e-8
}
fn default_weak_residual() -> f64 {
    1e-5
}
fn default_symmetry() -> f64 {
    1e-10
}
fn default_name() -> String {
    "experiment".into()
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_etas() -> Vec<f64> {
    vec![0.25]
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError {
        field: None,
        message: e.to_string().trim_end().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::at(field, format!("must be positive and finite, got {v}")))
    }
}

fn require<'a, T>(v: &'a Option<T>, field: &str, kind: ExperimentKind) -> Result<&'a T, ConfigError> {
    v.as_ref()
        .ok_or_else(|| ConfigError::at(field, format!("required for kind = \"{}\"", kind.as_str())))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("tolerances.energy_margin", self.tolerances.energy_margin)?;
        positive("tolerances.weak_residual", self.tolerances.weak_residual)?;
        positive("tolerances.symmetry", self.tolerances.symmetry)?;
        if self.seeds.is_empty() {
            return Err(ConfigError::at("seeds", "at least one seed is required"));
        }
        for (i, e) in self.etas.iter().enumerate() {
            positive(&format!("etas[{i}]"), *e)?;
        }
        if let Some(i) = self.etas.windows(2).position(|w| !(w[1] < w[0])) {
            return Err(ConfigError::at(
                "etas",
                format!(
                    "must be strictly decreasing, but etas[{}] = {} follows {}",
                    i + 1,
                    self.etas[i + 1],
                    self.etas[i]
                ),
            ));
        }
        if let Some(c) = self.criteria.iter().find(|c| !(1..=13).contains(*c)) {
            return Err(ConfigError::at("criteria", format!("unknown criterion {c}; criteria are 1 to 13")));
        }
        if self.kind == ExperimentKind::AcceptanceSuite {
            return Ok(());
        }
        let field = require(&self.field, "field", self.kind)?;
        if !(1..=3).contains(&field.dim) {
            return Err(ConfigError::at("field.dim", format!("must be 1, 2 or 3, got {}", field.dim)));
        }
        positive("field.cell_size_length", field.cell_size_length)?;
        let sum: f64 = field.probabilities.iter().sum();
        if field.probabilities.iter().any(|p| !(*p >= 0.0)) {
            return Err(ConfigError::at("field.probabilities", "entries must be nonnegative"));
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::at("field.probabilities", format!("must sum to 1, sum is {sum}")));
        }
        if field.probabilities.len() != self.phases.len() {
            return Err(ConfigError::at(
                "phases",
                format!(
                    "{} phases given but field.probabilities has {} entries",
                    self.phases.len(),
                    field.probabilities.len()
                ),
            ));
        }
        for (k, p) in self.phases.iter().enumerate() {
            self.phase(k, p, field.dim)?;
        }
        if self.kind != ExperimentKind::CellProblem {
            let grid = require(&self.grid, "grid", self.kind)?;
            if grid.cells_per_axis == 0 {
                return Err(ConfigError::at("grid.cells_per_axis", "must be positive"));
            }
            if grid.elements_per_cell == 0 {
                return Err(ConfigError::at("grid.elements_per_cell", "must be positive"));
            }
            positive("grid.length", grid.length)?;
            let time = require(&self.time, "time", self.kind)?;
            positive("time.T_e_seconds", time.T_e_seconds)?;
            if time.level > 16 {
                return Err(ConfigError::at("time.level", format!("at most 16, got {}", time.level)));
            }
            if let Some(m) = time.m_reg {
                positive("time.m_reg", m)?;
            }
            if let Some(load) = &self.load {
                self.load_expressions(load, field.dim)?;
            }
        }
        if matches!(
            self.kind,
            ExperimentKind::HomogenizedRun | ExperimentKind::EtaSweep | ExperimentKind::CellProblem
        ) {
            let rve = require(&self.rve, "rve", self.kind)?;
            if rve.cells_per_axis == 0 || rve.elements_per_cell == 0 {
                return Err(ConfigError::at("rve", "cells_per_axis and elements_per_cell must be positive"));
            }
            if rve.seeds.is_empty() {
                return Err(ConfigError::at("rve.seeds", "at least one seed is required"));
            }
            let mut s = rve.seeds.clone();
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(ConfigError::at("rve.seeds", "seeds must be distinct"));
            }
        }
        Ok(())
    }

    fn phase(&self, k: usize, p: &PhaseConfig, d: usize) -> Result<CoefficientSet, ConfigError> {
        let at = |key: &str| format!("phases[{k}].{key}");
        let s = sym_dim(d);
        let stiffness = match (&p.stiffness, p.lambda, p.mu) {
            (Some(rows), None, None) => {
                if rows.len() != s || rows.iter().any(|r| r.len() != s) {
                    return Err(ConfigError::at(at("stiffness"), format!("must be {s}×{s}")));
                }
                DMat::from_fn(s, s, |i, j| rows[i][j])
            }
            (None, Some(l), Some(m)) => isotropic_stiffness(d, l, m),
            _ => {
                return Err(ConfigError::at(
                    at("stiffness"),
                    "give either lambda and mu or a stiffness matrix",
                ))
            }
        };
        if !(p.hardening >= 0.0) {
            return Err(ConfigError::at(at("hardening"), "must be nonnegative"));
        }
        let law = match p.law {
            LawConfig::NortonHoff { yield_stress, exponent } => MonotoneLaw::norton_hoff(s, yield_stress, exponent),
            LawConfig::Linear { rate } => {
                positive(&at("law.rate"), rate)?;
                MonotoneLaw::linear(DMat::scalar(s, rate))
            }
            LawConfig::Zero => Ok(MonotoneLaw::zero(s)),
        }
        .map_err(|e| ConfigError::at(at("law"), e.to_string()))?;
        CoefficientSet::new(stiffness, DMat::scalar(s, p.hardening), law).map_err(|e| ConfigError::at(format!("phases[{k}]"), e.to_string()))
    }

    fn load_expressions(&self, load: &LoadConfig, d: usize) -> Result<(Vec<Expr>, Option<Vec<Expr>>), ConfigError> {
        let parse = |key: &str, list: &[String], len: usize| -> Result<Vec<Expr>, ConfigError> {
            if list.len() != len {
                return Err(ConfigError::at(format!("load.{key}"), format!("needs {len} expressions, got {}", list.len())));
            }
            list.iter()
                .enumerate()
                .map(|(i, src)| {
                    let e = Expr::parse(src).map_err(|e| ConfigError::at(format!("load.{key}[{i}]"), e.to_string()))?;
                    if e.coordinates_used() > d {
                        return Err(ConfigError::at(
                            format!("load.{key}[{i}]"),
                            format!("uses coordinate {} in dimension {d}", e.coordinates_used()),
                        ));
                    }
                    Ok(e)
                })
                .collect()
        };
        let body = if load.body_force.is_empty() {
            Vec::new()
        } else {
            parse("body_force", &load.body_force, d)?
        };
        let z0 = match &load.initial_z {
            Some(list) => Some(parse("initial_z", list, sym_dim(d))?),
            None => None,
        };
        Ok((body, z0))
    }

    /// Field specification with the given seed.
    pub fn field_spec(&self, seed: u64) -> Result<FieldSpec, ConfigError> {
        let field = require(&self.field, "field", self.kind)?;
        let phases = self
            .phases
            .iter()
            .enumerate()
            .map(|(k, p)| self.phase(k, p, field.dim))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FieldSpec {
            kind: field.kind.into(),
            dim: field.dim,
            cell_size: field.cell_size_length,
            phases,
            probabilities: field.probabilities.clone(),
            seed,
        })
    }

    pub fn load_program(&self) -> Result<LoadProgram, ConfigError> {
        let time = require(&self.time, "time", self.kind)?;
        let d = require(&self.field, "field", self.kind)?.dim;
        let mut program = LoadProgram::new(time.T_e_seconds).map_err(|e| ConfigError::at("time.T_e_seconds", e.to_string()))?;
        if let Some(load) = &self.load {
            let (body, z0) = self.load_expressions(load, d)?;
            if !body.is_empty() {
                program = program.with_body_force(move |x: &[f64], t: f64| body.iter().map(|e| e.eval(x, t)).collect());
            }
            if let Some(z0) = z0 {
                program = program.with_initial_z(move |x: &[f64], _phase: usize| z0.iter().map(|e| e.eval(x, 0.0)).collect());
            }
        }
        Ok(program)
    }

    pub fn rothe_params(&self) -> Result<RotheParams, ConfigError> {
        let time = require(&self.time, "time", self.kind)?;
        Ok(RotheParams::new(time.level, time.m_reg))
    }

    /// Stable digest of the validated configuration.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).expect("configuration serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}
