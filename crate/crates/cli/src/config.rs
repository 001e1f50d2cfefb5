//! Declarative experiment configuration.
//!
//! Experiments are described by a flat TOML file with optional sections;
//! unknown keys are rejected so that typos fail loudly. A `preset` key
//! fills in the model, true parameter, noise laws, box and grid of one of
//! the built-in experiment setups; explicit fields always win over the
//! preset. Seeds are mandatory: no run is ever seeded from the clock.

use pomclab_core::estimate::{FitCfg, ModelSpec, ParamPoint, ThetaBox};
use pomclab_core::hmm::{GridSpec, HmmNoise, ThetaHmm, Xi};
use pomclab_core::odm::{NbParametrization, ThetaNbin, ThetaNm};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Experiment command; must agree with the CLI subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Simulate,
    Fit,
    KlProfile,
    Consistency,
    FilterForget,
    ReturnTail,
    Moment,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Fit => "fit",
            CommandKind::KlProfile => "kl-profile",
            CommandKind::Consistency => "consistency",
            CommandKind::FilterForget => "filter-forget",
            CommandKind::ReturnTail => "return-tail",
            CommandKind::Moment => "moment",
        }
    }
}

/// Model family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelId {
    Hmm1,
    Nbin,
    Nm,
}

/// Per-family true-parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaConfig {
    Nbin { omega: f64, a: f64, b: f64, r: f64 },
    Nm { gamma: Vec<f64>, omega: Vec<f64>, a: Vec<f64>, b: Vec<f64> },
    Hmm { m: f64, a: f64 },
}

/// Per-family parameter box; every entry is `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoxConfig {
    Nbin {
        omega: (f64, f64),
        a: (f64, f64),
        b: (f64, f64),
        r: (f64, f64),
    },
    Nm {
        gamma: Vec<(f64, f64)>,
        omega: Vec<(f64, f64)>,
        a: Vec<(f64, f64)>,
        b: Vec<(f64, f64)>,
    },
    Hmm {
        m: (f64, f64),
        a: (f64, f64),
    },
}

/// One axis of a profile grid: vary the named coordinate of the flattened
/// parameter vector over `points` equispaced values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileAxis {
    pub param: String,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub axes: Vec<ProfileAxis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgetConfig {
    /// Number of observations to drive the two filters or orbits with.
    #[serde(default = "default_forget_steps")]
    pub steps: usize,
    /// Starting states for the observation-driven gap (scalar for nbin,
    /// one entry per component for nm).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x1: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x2: Option<Vec<f64>>,
    /// Initial filter laws for the HMM total-variation gap.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_a: Option<Xi>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_b: Option<Xi>,
}

fn default_forget_steps() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReturnTailConfig {
    #[serde(default = "default_excursions")]
    pub n_samples: usize,
    #[serde(default = "default_cap")]
    pub cap: u64,
}

fn default_excursions() -> usize {
    10_000
}

fn default_cap() -> u64 {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentConfig {
    pub beta: f64,
    #[serde(default = "default_moment_n")]
    pub n: usize,
    #[serde(default = "default_moment_burn")]
    pub burn: usize,
}

fn default_moment_n() -> usize {
    200_000
}

fn default_moment_burn() -> usize {
    2_000
}

/// The on-disk experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub model: ModelId,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nm_d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nb_parametrization: Option<NbParametrization>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<HmmNoise>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<ThetaConfig>,
    #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
    pub theta_box: Option<BoxConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<Xi>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitCfg>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forget: Option<ForgetConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub return_tail: Option<ReturnTailConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment: Option<MomentConfig>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("config parse error: {e}"))
    }

    pub fn to_toml(&self) -> Result<String, String> {
        toml::to_string(self).map_err(|e| format!("config serialize error: {e}"))
    }
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Applies a named preset: fills every field the user left out.
pub fn apply_preset(cfg: &mut ExperimentConfig, name: &str) -> Result<(), String> {
    let preset = match name {
        "hmm1-default" => preset_hmm1(),
        "nbin-default" => preset_nbin(),
        "nm2-default" => preset_nm2(),
        other => {
            return Err(format!(
                "unknown preset '{other}' (available: hmm1-default, nbin-default, nm2-default)"
            ))
        }
    };
    if cfg.model != preset.model {
        return Err(format!(
            "preset '{name}' targets model '{:?}', config says '{:?}'",
            preset.model, cfg.model
        ));
    }
    cfg.theta_star = cfg.theta_star.take().or(preset.theta_star);
    cfg.theta_box = cfg.theta_box.take().or(preset.theta_box);
    cfg.noise = cfg.noise.take().or(preset.noise);
    cfg.grid = cfg.grid.take().or(preset.grid);
    cfg.xi = cfg.xi.take().or(preset.xi);
    cfg.nm_d = cfg.nm_d.take().or(preset.nm_d);
    Ok(())
}

struct Preset {
    model: ModelId,
    theta_star: Option<ThetaConfig>,
    theta_box: Option<BoxConfig>,
    noise: Option<HmmNoise>,
    grid: Option<GridSpec>,
    xi: Option<Xi>,
    nm_d: Option<usize>,
}

fn preset_hmm1() -> Preset {
    Preset {
        model: ModelId::Hmm1,
        theta_star: Some(ThetaConfig::Hmm { m: 1.0, a: 0.8 }),
        theta_box: Some(BoxConfig::Hmm { m: (0.2, 1.5), a: (0.2, 1.4) }),
        noise: Some(HmmNoise::default_pareto_gauss()),
        grid: Some(GridSpec::default_for(1.5)),
        xi: Some(Xi::Dirac { x: 0.0 }),
        nm_d: None,
    }
}

fn preset_nbin() -> Preset {
    Preset {
        model: ModelId::Nbin,
        theta_star: Some(ThetaConfig::Nbin { omega: 1.0, a: 0.3, b: 0.1, r: 4.0 }),
        theta_box: Some(BoxConfig::Nbin {
            omega: (0.3, 2.5),
            a: (0.05, 0.42),
            b: (0.02, 0.125),
            r: (2.0, 4.4),
        }),
        noise: None,
        grid: None,
        xi: None,
        nm_d: None,
    }
}

fn preset_nm2() -> Preset {
    Preset {
        model: ModelId::Nm,
        theta_star: Some(ThetaConfig::Nm {
            gamma: vec![0.35, 0.65],
            omega: vec![0.3, 2.0],
            a: vec![0.0, 0.0, 0.0, 0.0],
            b: vec![0.35, 0.1],
        }),
        theta_box: Some(BoxConfig::Nm {
            gamma: vec![(0.1, 0.9)],
            omega: vec![(0.1, 3.0), (0.1, 3.0)],
            a: vec![(0.0, 0.15); 4],
            b: vec![(0.01, 0.6), (0.01, 0.6)],
        }),
        noise: None,
        grid: None,
        xi: None,
        nm_d: Some(2),
    }
}

// ---------------------------------------------------------------------------
// Resolution into engine types
// ---------------------------------------------------------------------------

/// A validated, fully resolved experiment.
#[derive(Debug)]
pub struct Resolved {
    pub command: CommandKind,
    pub model: ModelSpec,
    pub theta_star: Option<ParamPoint>,
    pub theta_box: Option<ThetaBox>,
    pub seed: u64,
    pub canonical_toml: String,
}

/// Validates the config and materializes the engine-level types.
pub fn resolve(mut cfg: ExperimentConfig) -> Result<(ExperimentConfig, Resolved), String> {
    if let Some(name) = cfg.preset.clone() {
        apply_preset(&mut cfg, &name)?;
    }

    let model = match cfg.model {
        ModelId::Hmm1 => {
            let noise = cfg.noise.unwrap_or_else(HmmNoise::default_pareto_gauss);
            noise.validate().map_err(|e| format!("noise: {e}"))?;
            let grid = cfg.grid.unwrap_or_else(|| {
                let m_upper = match (&cfg.theta_box, &cfg.theta_star) {
                    (Some(BoxConfig::Hmm { m, .. }), _) => m.1,
                    (None, Some(ThetaConfig::Hmm { m, .. })) => *m,
                    _ => 1.0,
                };
                GridSpec::default_for(m_upper)
            });
            GridSpec::new(grid.x_max, grid.n_cells, grid.spacing)
                .map_err(|e| format!("grid: {e}"))?;
            let xi = cfg.xi.unwrap_or(Xi::Dirac { x: 0.0 });
            ModelSpec::Hmm1 { noise, grid, xi }
        }
        ModelId::Nbin => ModelSpec::Nbin {
            parametrization: cfg.nb_parametrization.unwrap_or_default(),
        },
        ModelId::Nm => {
            let d = cfg.nm_d.unwrap_or(2);
            if d == 0 {
                return Err("nm_d must be positive".into());
            }
            ModelSpec::Nm { d }
        }
    };

    let theta_star = match (&cfg.theta_star, cfg.model) {
        (None, _) => None,
        (Some(ThetaConfig::Hmm { m, a }), ModelId::Hmm1) => Some(ParamPoint::Hmm(
            ThetaHmm::new(*m, *a).map_err(|e| format!("theta_star: {e}"))?,
        )),
        (Some(ThetaConfig::Nbin { omega, a, b, r }), ModelId::Nbin) => Some(ParamPoint::Nbin(
            ThetaNbin::new(*omega, *a, *b, *r).map_err(|e| format!("theta_star: {e}"))?,
        )),
        (Some(ThetaConfig::Nm { gamma, omega, a, b }), ModelId::Nm) => Some(ParamPoint::Nm(
            ThetaNm::new(gamma.clone(), omega.clone(), a.clone(), b.clone())
                .map_err(|e| format!("theta_star: {e}"))?,
        )),
        (Some(_), _) => {
            return Err("theta_star table does not match the declared model".into());
        }
    };
    if let (Some(ParamPoint::Nm(t)), ModelSpec::Nm { d }) = (&theta_star, &model) {
        if t.dim() != *d {
            return Err(format!(
                "theta_star has {} mixture components, nm_d says {d}",
                t.dim()
            ));
        }
    }

    let theta_box = match (&cfg.theta_box, cfg.model) {
        (None, _) => None,
        (Some(BoxConfig::Hmm { m, a }), ModelId::Hmm1) => {
            Some(ThetaBox::hmm(*m, *a).map_err(|e| format!("box: {e}"))?)
        }
        (Some(BoxConfig::Nbin { omega, a, b, r }), ModelId::Nbin) => {
            Some(ThetaBox::nbin(*omega, *a, *b, *r).map_err(|e| format!("box: {e}"))?)
        }
        (Some(BoxConfig::Nm { gamma, omega, a, b }), ModelId::Nm) => {
            let d = match &model {
                ModelSpec::Nm { d } => *d,
                _ => unreachable!(),
            };
            Some(
                ThetaBox::nm(d, gamma.clone(), omega.clone(), a.clone(), b.clone())
                    .map_err(|e| format!("box: {e}"))?,
            )
        }
        (Some(_), _) => return Err("box table does not match the declared model".into()),
    };

    // command-specific requirements
    let need_star = |what: &str, star: &Option<ParamPoint>| -> Result<(), String> {
        if star.is_none() {
            Err(format!("{what} requires theta_star (directly or via preset)"))
        } else {
            Ok(())
        }
    };
    match cfg.command {
        CommandKind::Simulate => {
            need_star("simulate", &theta_star)?;
            if cfg.n.is_none() {
                return Err("simulate requires n".into());
            }
        }
        CommandKind::Fit => {
            need_star("fit", &theta_star)?;
            if cfg.n.is_none() {
                return Err("fit requires n".into());
            }
            if theta_box.is_none() {
                return Err("fit requires a box".into());
            }
        }
        CommandKind::KlProfile => {
            need_star("kl-profile", &theta_star)?;
            if cfg.n.is_none() {
                return Err("kl-profile requires n".into());
            }
            let profile = cfg
                .profile
                .as_ref()
                .ok_or_else(|| "kl-profile requires a [profile] section".to_string())?;
            if profile.axes.is_empty() {
                return Err("profile needs at least one axis".into());
            }
            let names = model.param_names();
            for axis in &profile.axes {
                if !names.contains(&axis.param) {
                    return Err(format!(
                        "profile axis '{}' is not a parameter of this model (have: {})",
                        axis.param,
                        names.join(", ")
                    ));
                }
                // the negated form also rejects NaN bounds
                #[allow(clippy::neg_cmp_op_on_partial_ord)]
                if axis.points < 2 || !(axis.lo < axis.hi) {
                    return Err(format!("profile axis '{}' is degenerate", axis.param));
                }
            }
        }
        CommandKind::Consistency => {
            need_star("consistency", &theta_star)?;
            if theta_box.is_none() {
                return Err("consistency requires a box".into());
            }
            let n_list = cfg
                .n_list
                .as_ref()
                .ok_or_else(|| "consistency requires n_list".to_string())?;
            if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
                return Err("n_list must be strictly increasing".into());
            }
        }
        CommandKind::FilterForget => {
            need_star("filter-forget", &theta_star)?;
        }
        CommandKind::ReturnTail | CommandKind::Moment => {
            if cfg.model != ModelId::Hmm1 {
                return Err(format!(
                    "{} applies to the hmm1 state chain only",
                    cfg.command.name()
                ));
            }
            need_star(cfg.command.name(), &theta_star)?;
            if cfg.command == CommandKind::Moment && cfg.moment.is_none() {
                return Err("moment requires a [moment] section".into());
            }
        }
    }

    let canonical_toml = cfg.to_toml()?;
    let resolved = Resolved {
        command: cfg.command,
        model,
        theta_star,
        theta_box,
        seed: cfg.seed,
        canonical_toml,
    };
    Ok((cfg, resolved))
}
