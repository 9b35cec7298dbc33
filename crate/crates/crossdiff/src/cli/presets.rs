//! Built-in experiment presets; each resolves to a complete config.

use crate::cli::config::{
    CascadeConfig, ExperimentConfig, GridConfig, ModelConfig, MonitorConfig, ReactionConfig,
    SolverConfig,
};
use crate::error::{CrossDiffError, Result};

pub const PRESET_NAMES: [&str; 7] = [
    "heat_1d",
    "pme_barenblatt_1d",
    "porous_media_cascade_1d",
    "skt_compete_2d",
    "skt_coop_2d",
    "cascade_uniqueness_2d",
    "structure_check",
];

fn base(preset: &str) -> ExperimentConfig {
    ExperimentConfig {
        preset: Some(preset.into()),
        seed: 0,
        out: None,
        verbosity: 0,
        grid: None,
        model: None,
        reaction: None,
        solver: None,
        cascade: None,
        monitors: Some(MonitorConfig::default()),
    }
}

/// Resolves a preset name to its full config.
pub fn preset_config(name: &str) -> Result<ExperimentConfig> {
    let mut config = base(name);
    match name {
        "heat_1d" => {
            config.grid = Some(GridConfig {
                dim: 1,
                nx: 64,
                ny: 64,
                length: 1.0,
                x0: 0.0,
                boundary: "dirichlet".into(),
            });
            config.model = Some(ModelConfig {
                name: "heat".into(),
                m: Some(1),
                k: None,
                d1: None,
                d2: None,
                a11: None,
                a12: None,
                a21: None,
                a22: None,
            });
            config.solver = Some(SolverConfig {
                dt: 1e-4,
                t_final: 0.1,
                ..SolverConfig::default()
            });
        }
        "pme_barenblatt_1d" => {
            config.grid = Some(GridConfig {
                dim: 1,
                nx: 128,
                ny: 64,
                length: 4.0,
                x0: -2.0,
                boundary: "neumann".into(),
            });
            config.model = Some(ModelConfig {
                name: "porous_media".into(),
                m: Some(1),
                k: Some(1.0),
                d1: None,
                d2: None,
                a11: None,
                a12: None,
                a21: None,
                a22: None,
            });
            config.solver = Some(SolverConfig {
                dt: 5e-4,
                t_final: 0.5,
                ..SolverConfig::default()
            });
        }
        "porous_media_cascade_1d" => {
            config.grid = Some(GridConfig {
                dim: 1,
                nx: 64,
                ny: 64,
                length: 1.0,
                x0: 0.0,
                boundary: "dirichlet".into(),
            });
            config.model = Some(ModelConfig {
                name: "porous_media".into(),
                m: Some(2),
                k: Some(1.0),
                d1: None,
                d2: None,
                a11: None,
                a12: None,
                a21: None,
                a22: None,
            });
            config.reaction = Some(ReactionConfig {
                name: "linear".into(),
                a1: None,
                a2: None,
                b1: None,
                b2: None,
                c1: None,
                c2: None,
                k_scale: Some(0.5),
            });
            config.solver = Some(SolverConfig {
                dt: 1e-3,
                t_final: 0.1,
                stride: 5,
                ..SolverConfig::default()
            });
            config.cascade = Some(CascadeConfig {
                levels: 7,
                ..CascadeConfig::default()
            });
        }
        "skt_compete_2d" => {
            config.grid = Some(grid_2d(32));
            config.model = Some(skt_model());
            config.reaction = Some(competitive_reaction());
            config.solver = Some(SolverConfig {
                dt: 2e-3,
                t_final: 0.3,
                stride: 5,
                ..SolverConfig::default()
            });
        }
        "skt_coop_2d" => {
            config.grid = Some(grid_2d(32));
            config.model = Some(skt_model());
            config.reaction = Some(ReactionConfig {
                name: "lotka_volterra".into(),
                a1: Some(0.3),
                a2: Some(0.2),
                b1: Some(-0.4),
                b2: Some(0.15),
                c1: Some(0.1),
                c2: Some(-0.5),
                k_scale: None,
            });
            config.solver = Some(SolverConfig {
                dt: 2e-3,
                t_final: 0.2,
                stride: 5,
                ..SolverConfig::default()
            });
        }
        "cascade_uniqueness_2d" => {
            config.grid = Some(grid_2d(32));
            config.model = Some(skt_model());
            config.reaction = Some(competitive_reaction());
            config.solver = Some(SolverConfig {
                dt: 1e-3,
                t_final: 0.04,
                stride: 4,
                ..SolverConfig::default()
            });
            config.cascade = Some(CascadeConfig {
                levels: 6,
                lambda_base: 2.0,
                lambda_base_b: 3.0,
                r0: 0.2,
                tail_factor: 2.0,
            });
        }
        "structure_check" => {
            // Bare suite mode: the built-in fixtures (including the negative
            // controls) are exercised; a [model] override switches to targeted
            // checks of that model alone.
        }
        _ => {
            return Err(CrossDiffError::invalid(
                "preset",
                format!("unknown preset `{name}`"),
            ))
        }
    }
    Ok(config)
}

fn grid_2d(n: usize) -> GridConfig {
    GridConfig {
        dim: 2,
        nx: n,
        ny: n,
        length: 1.0,
        x0: 0.0,
        boundary: "dirichlet".into(),
    }
}

fn skt_model() -> ModelConfig {
    ModelConfig {
        name: "skt".into(),
        m: Some(2),
        k: None,
        d1: Some(0.0),
        d2: Some(0.0),
        a11: Some(1.0),
        a12: Some(1.0),
        a21: Some(1.0),
        a22: Some(1.0),
    }
}

fn competitive_reaction() -> ReactionConfig {
    ReactionConfig {
        name: "lotka_volterra".into(),
        a1: Some(0.4),
        a2: Some(0.3),
        b1: Some(-0.5),
        b2: Some(-0.2),
        c1: Some(-0.3),
        c2: Some(-0.6),
        k_scale: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::{emit_config, parse_config};

    #[test]
    fn all_presets_resolve_and_round_trip() {
        for name in PRESET_NAMES {
            let config = preset_config(name).unwrap();
            let text = emit_config(&config);
            let reparsed = parse_config(&text).unwrap();
            assert_eq!(config, reparsed, "{name}");
        }
        assert!(preset_config("nope").is_err());
    }
}
