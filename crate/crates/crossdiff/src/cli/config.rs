//! Experiment configuration: flat TOML with dotted sections, hand-editable and
//! diff-friendly. Unknown keys are rejected; a resolved config re-parses to an
//! identical value.

use crate::error::{CrossDiffError, Result};
use crate::grid::{BoundaryTag, Grid, GridField};
use crate::model::{
    make_heat, make_lotka_volterra, make_porous_media, make_skt, make_zero_map_fixture,
    DiffusionModel, ReactionModel, SktParams,
};
use crate::solver::SolverControls;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default)]
    pub verbosity: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reaction: Option<ReactionConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cascade: Option<CascadeConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monitors: Option<MonitorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_n")]
    pub nx: usize,
    #[serde(default = "default_n")]
    pub ny: usize,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_boundary")]
    pub boundary: String,
}

fn default_dim() -> usize {
    1
}
fn default_n() -> usize {
    64
}
fn default_length() -> f64 {
    1.0
}
fn default_boundary() -> String {
    "dirichlet".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a11: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a12: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a21: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a22: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionConfig {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    /// Scale of the identity linear part for the "linear" reaction.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_newton_atol")]
    pub newton_atol: f64,
    #[serde(default = "default_newton_rtol")]
    pub newton_rtol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
    #[serde(default = "default_halving")]
    pub halving_limit: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_t_final() -> f64 {
    0.1
}
fn default_newton_atol() -> f64 {
    1e-12
}
fn default_newton_rtol() -> f64 {
    1e-12
}
fn default_newton_max_iter() -> usize {
    30
}
fn default_halving() -> usize {
    8
}
fn default_stride() -> usize {
    1
}

impl SolverConfig {
    pub fn controls(&self) -> SolverControls {
        let mut c = SolverControls::new(self.dt, self.t_final);
        c.newton_atol = self.newton_atol;
        c.newton_rtol = self.newton_rtol;
        c.newton_max_iter = self.newton_max_iter;
        c.halving_limit = self.halving_limit;
        c.snapshot_stride = self.stride;
        c
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: default_dt(),
            t_final: default_t_final(),
            newton_atol: default_newton_atol(),
            newton_rtol: default_newton_rtol(),
            newton_max_iter: default_newton_max_iter(),
            halving_limit: default_halving(),
            stride: default_stride(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeConfig {
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_lambda_base")]
    pub lambda_base: f64,
    #[serde(default = "default_lambda_base_b")]
    pub lambda_base_b: f64,
    #[serde(default = "default_r0")]
    pub r0: f64,
    #[serde(default = "default_tail_factor")]
    pub tail_factor: f64,
}

fn default_levels() -> usize {
    7
}
fn default_lambda_base() -> f64 {
    2.0
}
fn default_lambda_base_b() -> f64 {
    3.0
}
fn default_r0() -> f64 {
    0.25
}
fn default_tail_factor() -> f64 {
    2.0
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            levels: default_levels(),
            lambda_base: default_lambda_base(),
            lambda_base_b: default_lambda_base_b(),
            r0: default_r0(),
            tail_factor: default_tail_factor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    #[serde(default = "default_q1")]
    pub q1: f64,
    #[serde(default = "default_ratio_factor")]
    pub ratio_factor: f64,
}

fn default_q1() -> f64 {
    1.5
}
fn default_ratio_factor() -> f64 {
    3.0
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            q1: default_q1(),
            ratio_factor: default_ratio_factor(),
        }
    }
}

/// Parses and validates the documented key-value format. TOML syntax errors
/// carry line/column positions; range violations name the offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| CrossDiffError::ParseError(e.to_string()))?;
    validate_config(&config)?;
    Ok(config)
}

/// Serializes a config back to the flat TOML format; parsing the output
/// reproduces the config exactly.
pub fn emit_config(config: &ExperimentConfig) -> String {
    toml::to_string(config).expect("config serializes")
}

fn err(field: &str, reason: &str) -> CrossDiffError {
    CrossDiffError::ValidationError {
        field: field.into(),
        reason: reason.into(),
    }
}

pub fn validate_config(config: &ExperimentConfig) -> Result<()> {
    if let Some(p) = &config.preset {
        if !crate::cli::presets::PRESET_NAMES.contains(&p.as_str()) {
            return Err(err("preset", "unknown preset name"));
        }
    }
    if let Some(g) = &config.grid {
        if g.dim != 1 && g.dim != 2 {
            return Err(err("grid.dim", "dimension must be 1 or 2"));
        }
        if g.nx < 3 || (g.dim == 2 && g.ny < 3) {
            return Err(err("grid.nx", "need at least 3 cells per axis"));
        }
        if !(g.length > 0.0) {
            return Err(err("grid.length", "must be positive"));
        }
        if g.boundary != "dirichlet" && g.boundary != "neumann" {
            return Err(err("grid.boundary", "must be dirichlet or neumann"));
        }
    }
    if let Some(m) = &config.model {
        match m.name.as_str() {
            "porous_media" => {
                if let Some(k) = m.k {
                    if !(k > 0.0) {
                        return Err(err("model.k", "porous-media exponent must be > 0"));
                    }
                }
                if let Some(mm) = m.m {
                    if mm < 1 {
                        return Err(err("model.m", "component count must be >= 1"));
                    }
                }
            }
            "skt" | "skt_compete" | "skt_coop" => {
                for (n, v) in [("a11", m.a11), ("a12", m.a12), ("a21", m.a21), ("a22", m.a22)] {
                    if let Some(v) = v {
                        if !(v > 0.0) {
                            return Err(err(&format!("model.{n}"), "must be > 0"));
                        }
                    }
                }
            }
            "heat" | "zero_map" => {}
            _ => return Err(err("model.name", "unknown model")),
        }
    }
    if let Some(r) = &config.reaction {
        match r.name.as_str() {
            "none" | "lotka_volterra" | "linear" => {}
            _ => return Err(err("reaction.name", "unknown reaction")),
        }
    }
    if let Some(s) = &config.solver {
        if !(s.dt > 0.0) {
            return Err(err("solver.dt", "must be positive"));
        }
        if !(s.t_final > 0.0) {
            return Err(err("solver.t_final", "must be positive"));
        }
        if !(s.newton_atol > 0.0) {
            return Err(err("solver.newton_atol", "must be positive"));
        }
        if s.stride == 0 {
            return Err(err("solver.stride", "must be >= 1"));
        }
    }
    if let Some(c) = &config.cascade {
        if c.levels == 0 {
            return Err(err("cascade.levels", "need at least one level"));
        }
        if !(c.lambda_base > 1.0) || !(c.lambda_base_b > 1.0) {
            return Err(err("cascade.lambda_base", "bases must exceed 1"));
        }
        if !(c.r0 > 0.0) {
            return Err(err("cascade.r0", "must be positive"));
        }
    }
    if let Some(m) = &config.monitors {
        if !(m.q1 > 1.0) {
            return Err(err("monitors.q1", "exponent must exceed 1"));
        }
        if !(m.ratio_factor > 1.0) {
            return Err(err("monitors.ratio_factor", "factor must exceed 1"));
        }
    }
    Ok(())
}

/// Builds the grid described by the config section.
pub fn build_grid(g: &GridConfig) -> Result<Grid> {
    if g.dim == 1 {
        Grid::new_1d(g.nx, g.x0, g.length)
    } else {
        Grid::new_2d(g.nx, g.ny, [g.x0, g.x0], [g.length, g.length])
    }
}

pub fn boundary_tag(g: &GridConfig) -> BoundaryTag {
    if g.boundary == "neumann" {
        BoundaryTag::NeumannZero
    } else {
        BoundaryTag::DirichletZero
    }
}

fn skt_params(m: &ModelConfig, r: Option<&ReactionConfig>) -> SktParams {
    SktParams {
        d1: m.d1.unwrap_or(0.0),
        d2: m.d2.unwrap_or(0.0),
        a11: m.a11.unwrap_or(1.0),
        a12: m.a12.unwrap_or(1.0),
        a21: m.a21.unwrap_or(1.0),
        a22: m.a22.unwrap_or(1.0),
        a: [
            r.and_then(|r| r.a1).unwrap_or(0.0),
            r.and_then(|r| r.a2).unwrap_or(0.0),
        ],
        b: [
            r.and_then(|r| r.b1).unwrap_or(0.0),
            r.and_then(|r| r.b2).unwrap_or(0.0),
        ],
        c: [
            r.and_then(|r| r.c1).unwrap_or(0.0),
            r.and_then(|r| r.c2).unwrap_or(0.0),
        ],
    }
}

/// Instantiates the model/reaction pair described by the config.
pub fn build_model(config: &ExperimentConfig) -> Result<(DiffusionModel, ReactionModel)> {
    let mc = config
        .model
        .as_ref()
        .ok_or_else(|| err("model", "a model section is required"))?;
    match mc.name.as_str() {
        "porous_media" => {
            let m = mc.m.unwrap_or(1);
            let k = mc.k.unwrap_or(1.0);
            let model = make_porous_media(m, k)
                .map_err(|_| err("model.k", "porous-media exponent must be > 0"))?;
            let reaction = build_reaction(config, m)?;
            Ok((model, reaction))
        }
        "heat" => {
            let m = mc.m.unwrap_or(1);
            Ok((make_heat(m), build_reaction(config, m)?))
        }
        "zero_map" => {
            let m = mc.m.unwrap_or(2);
            Ok((make_zero_map_fixture(m), build_reaction(config, m)?))
        }
        "skt" | "skt_compete" | "skt_coop" => {
            let params = skt_params(mc, config.reaction.as_ref());
            let (model, reaction) =
                make_skt(params).map_err(|e| CrossDiffError::ValidationError {
                    field: "model".into(),
                    reason: e.to_string(),
                })?;
            Ok((model, reaction))
        }
        _ => Err(err("model.name", "unknown model")),
    }
}

fn build_reaction(config: &ExperimentConfig, m: usize) -> Result<ReactionModel> {
    match config.reaction.as_ref() {
        None => Ok(ReactionModel::zero(m)),
        Some(rc) => match rc.name.as_str() {
            "none" => Ok(ReactionModel::zero(m)),
            "linear" => {
                let scale = rc.k_scale.unwrap_or(0.5);
                let mut k = vec![0.0; m * m];
                for i in 0..m {
                    k[i * m + i] = scale;
                }
                Ok(ReactionModel::linear(m, k))
            }
            "lotka_volterra" => {
                if m != 2 {
                    return Err(err("reaction.name", "lotka_volterra needs m = 2"));
                }
                Ok(make_lotka_volterra(
                    [rc.a1.unwrap_or(0.0), rc.a2.unwrap_or(0.0)],
                    [rc.b1.unwrap_or(0.0), rc.b2.unwrap_or(0.0)],
                    [rc.c1.unwrap_or(0.0), rc.c2.unwrap_or(0.0)],
                ))
            }
            _ => Err(err("reaction.name", "unknown reaction")),
        },
    }
}

/// Smooth nonnegative bump datum used by the 2D presets: two offset Gaussian
/// humps, one per component.
pub fn bump_datum_2d(grid: Grid, bc: BoundaryTag) -> GridField {
    GridField::from_fn(grid, 2, bc, |x, y| {
        let b1 = 1.2 * (-(((x - 0.35) / 0.18).powi(2) + ((y - 0.4) / 0.18).powi(2))).exp();
        let b2 = 1.0 * (-(((x - 0.65) / 0.22).powi(2) + ((y - 0.6) / 0.22).powi(2))).exp();
        vec![b1, b2]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_preset_config_parses_with_defaults() {
        let config = parse_config("preset = \"heat_1d\"").unwrap();
        assert_eq!(config.preset.as_deref(), Some("heat_1d"));
        assert_eq!(config.seed, 0);
        assert!(config.grid.is_none());
    }

    #[test]
    fn out_of_range_k_names_the_field() {
        let text = "preset = \"structure_check\"\n[model]\nname = \"porous_media\"\nk = -1.0\n";
        match parse_config(text) {
            Err(CrossDiffError::ValidationError { field, .. }) => {
                assert_eq!(field, "model.k");
            }
            other => panic!("expected ValidationError, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let text = "preset = \"heat_1d\"\nbogus_key = 3\n";
        match parse_config(text) {
            Err(CrossDiffError::ParseError(msg)) => {
                assert!(msg.contains("bogus_key"), "{msg}");
                assert!(msg.contains("line 2"), "{msg}");
            }
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn emit_then_parse_round_trips() {
        let text = r#"
preset = "porous_media_cascade_1d"
seed = 7

[grid]
dim = 1
nx = 96
length = 1.0
boundary = "dirichlet"

[solver]
dt = 0.0005
t_final = 0.08

[cascade]
levels = 5
"#;
        let config = parse_config(text).unwrap();
        let emitted = emit_config(&config);
        let reparsed = parse_config(&emitted).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn build_model_constructs_presets() {
        let text = "[model]\nname = \"skt\"\na11 = 1.0\na12 = 1.0\na21 = 1.0\na22 = 1.0\n[reaction]\nname = \"lotka_volterra\"\na1 = 0.5\na2 = 0.25\nb1 = -0.5\nb2 = -0.1\nc1 = -0.2\nc2 = -0.4\n";
        let config = parse_config(text).unwrap();
        let (model, reaction) = build_model(&config).unwrap();
        assert_eq!(model.m, 2);
        assert_eq!(reaction.name, "lotka_volterra");
    }

    #[test]
    fn bad_boundary_is_validation_error() {
        let text = "[grid]\nboundary = \"periodic\"\n";
        assert!(matches!(
            parse_config(text),
            Err(CrossDiffError::ValidationError { .. })
        ));
    }
}
