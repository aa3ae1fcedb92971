//! Strict JSON configuration files and their resolution into library types.
//!
//! Every optional key is materialized by `resolve`, and the resolved value is
//! what gets written to the run manifest.

use std::path::Path;

use enkbf_core::enkbf::{FilterVariant, DEFAULT_PINV_TOL};
use enkbf_core::models::{
    default_alpha1, draw_cstar, InitialLaw, LinearGaussianModel, ThetaMap, DEFAULT_ALPHA2,
};
use enkbf_core::seeding::sub_seed;
use enkbf_core::spsa::SpsaSchedule;
use enkbf_core::{Family, NoiseSpec, Variant};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub fn load<C: DeserializeOwned>(path: &Path) -> CliResult<C> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanSpec {
    Scalar(f64),
    Vector(Vec<f64>),
}

/// `X_0 ~ N(mean, variance · Id)`; `variance = 0` gives a point mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub mean: MeanSpec,
    pub variance: f64,
}

impl InitialConfig {
    pub fn isotropic(mean: f64, variance: f64) -> Self {
        Self {
            mean: MeanSpec::Scalar(mean),
            variance,
        }
    }

    pub fn law(&self, r1: usize) -> CliResult<InitialLaw<f64>> {
        let mean = match &self.mean {
            MeanSpec::Scalar(v) => DVector::from_element(r1, *v),
            MeanSpec::Vector(v) if v.len() == r1 => DVector::from_column_slice(v),
            MeanSpec::Vector(v) => {
                return Err(invalid(format!("x0.mean has {} entries, r1 = {r1}", v.len())))
            }
        };
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(invalid("x0.mean must be finite"));
        }
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return Err(invalid("x0.variance must be finite and non-negative"));
        }
        if self.variance == 0.0 {
            return Ok(InitialLaw::point(mean));
        }
        Ok(InitialLaw::gaussian(mean, DMatrix::identity(r1, r1) * self.variance)?)
    }
}

/// Fixed parts of a parameter family after defaults are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSpec {
    pub family: Family,
    pub r1: usize,
    pub r2: usize,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub noise_spec: Option<NoiseSpec>,
    pub x0: InitialConfig,
    pub cstar: Option<Vec<Vec<f64>>>,
}

/// Raw family keys shared by model and SPSA configs.
pub struct MapKeys<'a> {
    pub family: Family,
    pub r1: Option<usize>,
    pub r2: Option<usize>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub noise_spec: Option<NoiseSpec>,
    pub x0: Option<&'a InitialConfig>,
    pub cstar: Option<&'a Vec<Vec<f64>>>,
    pub seed: u64,
    pub variant: Variant,
}

impl MapKeys<'_> {
    pub fn resolve(&self) -> CliResult<MapSpec> {
        let lorenz_only = |name: &str, present: bool| {
            if present {
                Err(invalid(format!("`{name}` only applies to the linear_scaled family")))
            } else {
                Ok(())
            }
        };
        match self.family {
            Family::LinearScaled => {
                let r1 = self.r1.unwrap_or(2);
                let r2 = self.r2.unwrap_or(r1);
                if r1 == 0 || r2 == 0 {
                    return Err(invalid("r1 and r2 must be positive"));
                }
                let cstar = match self.cstar {
                    Some(rows) => {
                        if rows.len() != r2 || rows.iter().any(|r| r.len() != r1) {
                            return Err(invalid(format!("cstar must be {r2} rows of {r1} entries")));
                        }
                        rows.clone()
                    }
                    None => {
                        let c = draw_cstar::<f64>(r2, r1, sub_seed(self.seed, "cstar"));
                        c.row_iter().map(|r| r.iter().copied().collect()).collect()
                    }
                };
                Ok(MapSpec {
                    family: self.family,
                    r1,
                    r2,
                    alpha1: Some(self.alpha1.unwrap_or_else(|| default_alpha1(r1))),
                    alpha2: Some(self.alpha2.unwrap_or(DEFAULT_ALPHA2)),
                    noise_spec: Some(self.noise_spec.unwrap_or_default()),
                    x0: self.x0.cloned().unwrap_or(InitialConfig::isotropic(4.0, 1.0)),
                    cstar: Some(cstar),
                })
            }
            Family::Lorenz63 | Family::Lorenz96 => {
                lorenz_only("alpha1", self.alpha1.is_some())?;
                lorenz_only("alpha2", self.alpha2.is_some())?;
                lorenz_only("noise_spec", self.noise_spec.is_some())?;
                lorenz_only("cstar", self.cstar.is_some())?;
                let (r1, x0) = if self.family == Family::Lorenz63 {
                    (self.r1.unwrap_or(3), InitialConfig::isotropic(1.0, 0.5))
                } else {
                    let r1 = self.r1.unwrap_or(40);
                    let x0 = if self.variant == Variant::F3 {
                        InitialConfig::isotropic(8.0, 0.05)
                    } else {
                        let mut mean = vec![8.0; r1];
                        if let Some(first) = mean.first_mut() {
                            *first = 8.01;
                        }
                        InitialConfig {
                            mean: MeanSpec::Vector(mean),
                            variance: 0.0,
                        }
                    };
                    (r1, x0)
                };
                if self.family == Family::Lorenz63 && r1 != 3 {
                    return Err(invalid("lorenz63 has r1 = 3"));
                }
                let r2 = self.r2.unwrap_or(r1);
                if r2 != r1 {
                    return Err(invalid("Lorenz families observe every coordinate: r2 = r1"));
                }
                Ok(MapSpec {
                    family: self.family,
                    r1,
                    r2,
                    alpha1: None,
                    alpha2: None,
                    noise_spec: None,
                    x0: self.x0.cloned().unwrap_or(x0),
                    cstar: None,
                })
            }
        }
    }
}

impl MapSpec {
    pub fn theta_map(&self) -> CliResult<ThetaMap<f64>> {
        let initial = self.x0.law(self.r1)?;
        Ok(match self.family {
            Family::LinearScaled => {
                let rows = self.cstar.as_ref().expect("resolved");
                let cstar = DMatrix::from_fn(self.r2, self.r1, |i, j| rows[i][j]);
                ThetaMap::linear_scaled(
                    cstar,
                    self.alpha1.expect("resolved"),
                    self.alpha2.expect("resolved"),
                    self.noise_spec.expect("resolved"),
                    initial,
                )?
            }
            Family::Lorenz63 => ThetaMap::lorenz63(initial)?,
            Family::Lorenz96 => ThetaMap::lorenz96(self.r1, initial)?,
        })
    }
}

fn check_theta(map: &ThetaMap<f64>, theta: &[f64], what: &str) -> CliResult<DVector<f64>> {
    if theta.len() != map.theta_dim() {
        return Err(invalid(format!(
            "{what} has {} entries, the {:?} family needs {}",
            theta.len(),
            map.family(),
            map.theta_dim()
        )));
    }
    let theta = DVector::from_column_slice(theta);
    if !map.in_domain(&theta) {
        return Err(invalid(format!("{what} = {:?} lies outside the parameter domain", theta.as_slice())));
    }
    Ok(theta)
}

fn check_pinv_tol(variant: Variant, tol: Option<f64>) -> CliResult<FilterVariant<f64>> {
    Ok(FilterVariant::new(variant, tol)?)
}

/// Model configuration for `simulate` and `filter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    pub r1: Option<usize>,
    pub r2: Option<usize>,
    pub theta: Vec<f64>,
    #[serde(rename = "L")]
    pub level: u32,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub seed: u64,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub noise_spec: Option<NoiseSpec>,
    pub x0: Option<InitialConfig>,
    pub cstar: Option<Vec<Vec<f64>>>,
}

impl ModelConfig {
    fn keys(&self, variant: Variant) -> MapKeys<'_> {
        MapKeys {
            family: self.family,
            r1: self.r1,
            r2: self.r2,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            noise_spec: self.noise_spec,
            x0: self.x0.as_ref(),
            cstar: self.cstar.as_ref(),
            seed: self.seed,
            variant,
        }
    }

    /// Fills in every default; `variant` only matters for Lorenz '96 initial laws.
    pub fn resolve(&self, variant: Variant) -> CliResult<Self> {
        let spec = self.keys(variant).resolve()?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("T must be positive"));
        }
        enkbf_core::models::grid_steps(self.horizon, self.level)?;
        let out = Self {
            r1: Some(spec.r1),
            r2: Some(spec.r2),
            alpha1: spec.alpha1,
            alpha2: spec.alpha2,
            noise_spec: spec.noise_spec,
            x0: Some(spec.x0.clone()),
            cstar: spec.cstar.clone(),
            ..self.clone()
        };
        check_theta(&spec.theta_map()?, &self.theta, "theta")?;
        Ok(out)
    }

    pub fn map_spec(&self, variant: Variant) -> CliResult<MapSpec> {
        self.keys(variant).resolve()
    }

    pub fn model(&self, variant: Variant) -> CliResult<enkbf_core::models::Model<f64>> {
        let map = self.map_spec(variant)?.theta_map()?;
        let theta = check_theta(&map, &self.theta, "theta")?;
        Ok(map.apply(&theta)?)
    }
}

/// Scalar linear-Gaussian model with explicit square roots and `X_0 ~ N(x0_mean, p0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarModelConfig {
    pub a: f64,
    pub c: Option<f64>,
    pub r1_sqrt: f64,
    pub r2_sqrt: f64,
    pub x0_mean: f64,
    pub p0: f64,
}

impl ScalarModelConfig {
    /// `A = −2`, `R1^{1/2} = 1`, `R2^{1/2} = 0.5`, `X_0 ~ N(0.5, 0.2)`, `C` left to draw.
    pub fn benchmark() -> Self {
        Self {
            a: -2.0,
            c: None,
            r1_sqrt: 1.0,
            r2_sqrt: 0.5,
            x0_mean: 0.5,
            p0: 0.2,
        }
    }

    pub fn model(&self) -> CliResult<LinearGaussianModel<f64>> {
        let c = self.c.ok_or_else(|| invalid("model.c is unresolved"))?;
        Ok(LinearGaussianModel::scalar(
            self.a,
            c,
            self.r1_sqrt,
            self.r2_sqrt,
            self.x0_mean,
            self.p0,
        )?)
    }
}

/// `mse-study` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub variant: Variant,
    pub horizons: Vec<f64>,
    #[serde(rename = "N")]
    pub particles: Vec<usize>,
    #[serde(rename = "L")]
    pub level: u32,
    #[serde(rename = "M")]
    pub repetitions: Option<usize>,
    pub seed: u64,
    pub pinv_tol: Option<f64>,
    pub model: Option<ScalarModelConfig>,
}

impl StudyConfig {
    pub fn resolve(&self) -> CliResult<Self> {
        let mut model = self.model.clone().unwrap_or_else(ScalarModelConfig::benchmark);
        if model.c.is_none() {
            let c = draw_cstar::<f64>(1, 1, sub_seed(self.seed, "cstar"))[(0, 0)];
            model.c = Some(c);
        }
        let pinv_tol = match self.variant {
            Variant::F3 => Some(self.pinv_tol.unwrap_or(DEFAULT_PINV_TOL)),
            _ if self.pinv_tol.is_some() => return Err(invalid("pinv_tol only applies to f3")),
            _ => None,
        };
        let out = Self {
            repetitions: Some(self.repetitions.unwrap_or(enkbf_core::experiments::DEFAULT_REPETITIONS)),
            pinv_tol,
            model: Some(model),
            ..self.clone()
        };
        out.study()?.validate()?;
        Ok(out)
    }

    pub fn study(&self) -> CliResult<enkbf_core::experiments::MseStudyConfig<f64>> {
        let model = self
            .model
            .clone()
            .unwrap_or_else(ScalarModelConfig::benchmark)
            .model()?;
        Ok(enkbf_core::experiments::MseStudyConfig {
            variant: check_pinv_tol(self.variant, self.pinv_tol)?,
            horizons: self.horizons.clone(),
            particles: self.particles.clone(),
            level: self.level,
            repetitions: self.repetitions.unwrap_or(enkbf_core::experiments::DEFAULT_REPETITIONS),
            seed: self.seed,
            model,
        })
    }
}

/// `spsa` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpsaFileConfig {
    pub family: Family,
    pub variant: Option<Variant>,
    pub theta0: Vec<f64>,
    pub theta_true: Option<Vec<f64>>,
    pub schedule: Option<SpsaSchedule>,
    #[serde(rename = "N")]
    pub particles: usize,
    #[serde(rename = "L")]
    pub level: u32,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seed: u64,
    pub trajectories: Option<usize>,
    pub r1: Option<usize>,
    pub r2: Option<usize>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub noise_spec: Option<NoiseSpec>,
    pub x0: Option<InitialConfig>,
    pub cstar: Option<Vec<Vec<f64>>>,
    pub pinv_tol: Option<f64>,
}

pub fn default_schedule(family: Family, variant: Variant) -> SpsaSchedule {
    match family {
        Family::LinearScaled => SpsaSchedule::linear(variant),
        Family::Lorenz63 => SpsaSchedule::lorenz63(variant),
        Family::Lorenz96 => SpsaSchedule::lorenz96(),
    }
}

impl SpsaFileConfig {
    fn variant_or_default(&self) -> Variant {
        self.variant.unwrap_or(Variant::F1)
    }

    pub fn map_spec(&self) -> CliResult<MapSpec> {
        MapKeys {
            family: self.family,
            r1: self.r1,
            r2: self.r2,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            noise_spec: self.noise_spec,
            x0: self.x0.as_ref(),
            cstar: self.cstar.as_ref(),
            seed: self.seed,
            variant: self.variant_or_default(),
        }
        .resolve()
    }

    pub fn resolve(&self) -> CliResult<Self> {
        let variant = self.variant_or_default();
        let spec = self.map_spec()?;
        let pinv_tol = match variant {
            Variant::F3 => Some(self.pinv_tol.unwrap_or(DEFAULT_PINV_TOL)),
            _ if self.pinv_tol.is_some() => return Err(invalid("pinv_tol only applies to f3")),
            _ => None,
        };
        let out = Self {
            variant: Some(variant),
            schedule: Some(self.schedule.unwrap_or_else(|| default_schedule(self.family, variant))),
            trajectories: Some(self.trajectories.unwrap_or(1)),
            r1: Some(spec.r1),
            r2: Some(spec.r2),
            alpha1: spec.alpha1,
            alpha2: spec.alpha2,
            noise_spec: spec.noise_spec,
            x0: Some(spec.x0.clone()),
            cstar: spec.cstar.clone(),
            pinv_tol,
            ..self.clone()
        };
        if out.trajectories == Some(0) {
            return Err(invalid("trajectories must be at least 1"));
        }
        out.spsa()?.validate()?;
        if let Some(t) = &self.theta_true {
            check_theta(&spec.theta_map()?, t, "theta_true")?;
        }
        Ok(out)
    }

    pub fn spsa(&self) -> CliResult<enkbf_core::spsa::SpsaConfig<f64>> {
        let variant = self.variant_or_default();
        let map = self.map_spec()?.theta_map()?;
        let theta0 = check_theta(&map, &self.theta0, "theta0")?;
        Ok(enkbf_core::spsa::SpsaConfig {
            map,
            schedule: self.schedule.unwrap_or_else(|| default_schedule(self.family, variant)),
            variant: check_pinv_tol(variant, self.pinv_tol)?,
            particles: self.particles,
            level: self.level,
            theta0,
            horizon: self.horizon,
            seed: sub_seed(self.seed, "spsa"),
        })
    }

    pub fn truth_theta(&self) -> CliResult<Option<DVector<f64>>> {
        match &self.theta_true {
            None => Ok(None),
            Some(t) => {
                let map = self.map_spec()?.theta_map()?;
                check_theta(&map, t, "theta_true").map(Some)
            }
        }
    }
}
