//! Recursive maximum likelihood with SPSA gradient estimates.
//!
//! At every unit time `t` a random ±1 direction `Δ_t` is drawn, two filter
//! branches run over `[t−1, t]` from the carried ensemble under `θ ± ν_t Δ_t`
//! with common noise, and the difference of their log-normalizing-constant
//! increments drives
//! `θ_t(k) = θ_{t−1}(k) + κ_t (u⁺ − u⁻) / (2 ν_t Δ_t(k))`.
//! The carried ensemble is then advanced over the same interval under `θ_t`
//! with its own noise.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enkbf::{Ensemble, EnsembleFilter, FilterVariant, NoiseStreams, Variant};
use crate::error::{Error, Result};
use crate::models::{grid_steps, FilterModel, Model, PathPair, ThetaMap};
use crate::num::Real;
use crate::seeding::{indexed_seed, stream, sub_seed, StreamRng};

/// `ν_t = t^{−nu_exp}`; `κ_t = kappa_const` for `t ≤ switch_t`, else `kappa_c · t^{−kappa_exp}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpsaSchedule {
    pub nu_exp: f64,
    pub kappa_const: f64,
    pub switch_t: f64,
    pub kappa_c: f64,
    pub kappa_exp: f64,
}

impl SpsaSchedule {
    pub fn kappa(&self, t: f64) -> f64 {
        if t <= self.switch_t {
            self.kappa_const
        } else {
            self.kappa_c * t.powf(-self.kappa_exp)
        }
    }

    pub fn nu(&self, t: f64) -> f64 {
        t.powf(-self.nu_exp)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.nu_exp, self.kappa_const, self.switch_t, self.kappa_c, self.kappa_exp];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("schedule parameters must be finite".into()));
        }
        if self.kappa_const < 0.0 || self.kappa_c < 0.0 {
            return Err(Error::Config("step-size constants must be non-negative".into()));
        }
        if self.nu_exp < 0.0 || self.switch_t < 0.0 {
            return Err(Error::Config("nu_exp and switch_t must be non-negative".into()));
        }
        Ok(())
    }

    /// `Σ κ_t = ∞` and `Σ κ_t²/ν_t² < ∞` for the tail `κ_c t^{−γ}`, `ν_t = t^{−δ}`:
    /// requires `0 < γ ≤ 1` and `2(γ − δ) > 1`.
    pub fn check_summability(&self) -> Result<()> {
        let (g, d) = (self.kappa_exp, self.nu_exp);
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::Parameter(format!("kappa exponent {g} makes the steps summable")));
        }
        if 2.0 * (g - d) <= 1.0 {
            return Err(Error::Parameter(format!(
                "kappa^2/nu^2 ~ t^-{} is not summable",
                2.0 * (g - d)
            )));
        }
        if self.kappa_const <= 0.0 || self.kappa_c <= 0.0 {
            return Err(Error::Parameter("kappa must be positive".into()));
        }
        Ok(())
    }

    /// Frozen schedule (`κ ≡ 0`).
    pub fn frozen() -> Self {
        Self {
            nu_exp: 0.1,
            kappa_const: 0.0,
            switch_t: f64::MAX,
            kappa_c: 0.0,
            kappa_exp: 1.0,
        }
    }

    /// Step sizes used for the two-parameter linear family with `r1 = r2 = 2`.
    pub fn linear(variant: Variant) -> Self {
        let (kappa_const, switch_t, kappa_c, kappa_exp) = match variant {
            Variant::F1 => (0.09, 400.0, 3.0, 0.601),
            Variant::F2 => (0.09, 300.0, 1.0, 0.7),
            Variant::F3 => (0.09, 100.0, 1.0, 0.8),
        };
        Self {
            nu_exp: 0.1,
            kappa_const,
            switch_t,
            kappa_c,
            kappa_exp,
        }
    }

    pub fn lorenz63(variant: Variant) -> Self {
        let (kappa_const, switch_t, kappa_exp) = match variant {
            Variant::F1 | Variant::F3 => (0.0314, 100.0, 0.71),
            Variant::F2 => (0.0139, 300.0, 0.75),
        };
        Self {
            nu_exp: 0.2,
            kappa_const,
            switch_t,
            kappa_c: 1.0,
            kappa_exp,
        }
    }

    pub fn lorenz96() -> Self {
        Self {
            nu_exp: 0.1,
            kappa_const: 0.0314,
            switch_t: 50.0,
            kappa_c: 1.0,
            kappa_exp: 0.75,
        }
    }
}

/// `(θ + νΔ, θ − νΔ)`.
pub fn perturb<T: Real>(theta: &DVector<T>, nu: T, delta: &DVector<T>) -> (DVector<T>, DVector<T>) {
    debug_assert!(delta.iter().all(|&d| d == T::one() || d == -T::one()));
    let step = delta * nu;
    (theta + &step, theta - step)
}

/// `θ'(k) = θ(k) + κ (u⁺ − u⁻) / (2 ν Δ(k))`.
pub fn spsa_update<T: Real>(
    theta: &DVector<T>,
    u_plus: T,
    u_minus: T,
    kappa: T,
    nu: T,
    delta: &DVector<T>,
    iteration: usize,
) -> Result<DVector<T>> {
    if !u_plus.is_finite() || !u_minus.is_finite() {
        return Err(Error::NonFinite {
            what: "log-normalizing-constant increment".into(),
            iteration,
        });
    }
    let diff = u_plus - u_minus;
    if diff == T::zero() {
        return Ok(theta.clone());
    }
    let two_nu = T::lit(2.0) * nu;
    let out = DVector::from_iterator(
        theta.len(),
        theta
            .iter()
            .zip(delta.iter())
            .map(|(&th, &d)| th + kappa * diff / (two_nu * d)),
    );
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "parameter update".into(),
            iteration,
        });
    }
    Ok(out)
}

/// `d` independent ±1 entries with probability ½ each.
pub fn draw_delta<T: Real, R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<T> {
    DVector::from_iterator(
        d,
        (0..d).map(|_| if rng.random::<bool>() { T::one() } else { -T::one() }),
    )
}

#[derive(Debug, Clone)]
pub struct SpsaConfig<T: Real> {
    pub map: ThetaMap<T>,
    pub schedule: SpsaSchedule,
    pub variant: FilterVariant<T>,
    pub particles: usize,
    pub level: u32,
    pub theta0: DVector<T>,
    /// Number of unit intervals.
    pub horizon: usize,
    pub seed: u64,
}

impl<T: Real> SpsaConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.particles < 2 {
            return Err(Error::Config("SPSA needs at least 2 particles".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("SPSA horizon must be at least one unit".into()));
        }
        Error::check_dim("theta0", self.map.theta_dim(), self.theta0.len())?;
        if !self.map.in_domain(&self.theta0) {
            return Err(Error::Parameter("theta0 lies outside the parameter domain".into()));
        }
        Ok(())
    }
}

/// Carried state of the recursion between unit times.
#[derive(Debug, Clone)]
pub struct SpsaState<T: Real> {
    pub t: usize,
    pub theta: DVector<T>,
    pub ensemble: Ensemble<T>,
    advance_noise: NoiseStreams,
    delta_rng: StreamRng,
}

/// `θ_t` for `t = 1..=T`, plus work counters.
#[derive(Debug, Clone, PartialEq)]
pub struct RmlTrace<T: Real> {
    pub points: Vec<(usize, DVector<T>)>,
    pub interval_runs: u64,
    pub particle_updates: u64,
    pub projections: u64,
}

/// Iterator-style RML driver over a fixed observation record.
#[derive(Debug)]
pub struct RmlEstimator<'a, T: Real> {
    cfg: &'a SpsaConfig<T>,
    obs: &'a PathPair<T>,
    state: SpsaState<T>,
    steps_per_unit: usize,
    interval_runs: u64,
    particle_updates: u64,
    projections: u64,
}

impl<'a, T: Real> RmlEstimator<'a, T> {
    pub fn new(cfg: &'a SpsaConfig<T>, obs: &'a PathPair<T>) -> Result<Self> {
        cfg.validate()?;
        if obs.level() != cfg.level {
            return Err(Error::Grid(format!(
                "observation grid is 2^-{} but level {} was requested",
                obs.level(),
                cfg.level
            )));
        }
        Error::check_dim("observation dimension", cfg.map.obs_dim(), obs.obs_dim())?;
        let steps_per_unit = grid_steps(T::one(), cfg.level)?;
        if obs.steps() < cfg.horizon * steps_per_unit {
            return Err(Error::Grid(format!(
                "observations cover {} time units, {} requested",
                obs.horizon().to_f64_lossy(),
                cfg.horizon
            )));
        }
        let mut advance_noise = NoiseStreams::new(sub_seed(cfg.seed, "advance"), cfg.particles);
        let ensemble = Ensemble::sample(cfg.map.initial_law(), &mut advance_noise)?;
        Ok(Self {
            cfg,
            obs,
            state: SpsaState {
                t: 0,
                theta: cfg.theta0.clone(),
                ensemble,
                advance_noise,
                delta_rng: stream(sub_seed(cfg.seed, "delta")),
            },
            steps_per_unit,
            interval_runs: 0,
            particle_updates: 0,
            projections: 0,
        })
    }

    pub fn state(&self) -> &SpsaState<T> {
        &self.state
    }

    fn admissible(&mut self, theta: DVector<T>, what: &str) -> DVector<T> {
        if self.cfg.map.in_domain(&theta) {
            return theta;
        }
        let projected = self.cfg.map.project(&theta);
        log::warn!(
            "{what} left the parameter domain at t = {}; projected",
            self.state.t + 1
        );
        self.projections += 1;
        projected
    }

    /// Runs the filter over unit interval `t` from `ensemble`; returns the
    /// log-increment and the final filter parts.
    fn run_interval(
        &mut self,
        model: &Model<T>,
        ensemble: Ensemble<T>,
        noise: NoiseStreams,
        t: usize,
    ) -> Result<(T, Ensemble<T>, NoiseStreams)> {
        let (u, ens, noise, updates) =
            run_unit_interval(model, self.cfg.variant, ensemble, noise, self.obs, t, self.steps_per_unit)?;
        self.interval_runs += 1;
        self.particle_updates += updates;
        Ok((u, ens, noise))
    }

    /// Performs one unit-time iteration and returns `(t, θ_t)`.
    pub fn step(&mut self) -> Result<(usize, DVector<T>)> {
        let t = self.state.t + 1;
        if t > self.cfg.horizon {
            return Err(Error::Contract("RML run already reached its horizon".into()));
        }
        let tf = t as f64;
        let nu = T::lit(self.cfg.schedule.nu(tf));
        let kappa = T::lit(self.cfg.schedule.kappa(tf));
        let delta = draw_delta::<T, _>(&mut self.state.delta_rng, self.cfg.map.theta_dim());
        let (plus, minus) = perturb(&self.state.theta, nu, &delta);
        let plus = self.admissible(plus, "theta+");
        let minus = self.admissible(minus, "theta-");
        let model_plus = self.cfg.map.apply(&plus)?;
        let model_minus = self.cfg.map.apply(&minus)?;

        let branch_noise = NoiseStreams::new(
            indexed_seed(sub_seed(self.cfg.seed, "branch"), t as u64),
            self.cfg.particles,
        );
        let start = self.state.ensemble.clone();
        let variant = self.cfg.variant;
        let (obs, spu) = (self.obs, self.steps_per_unit);
        let (rp, rm) = rayon::join(
            || run_unit_interval(&model_plus, variant, start.clone(), branch_noise.clone(), obs, t, spu),
            || run_unit_interval(&model_minus, variant, start.clone(), branch_noise.clone(), obs, t, spu),
        );
        let (u_plus, _, _, up) = rp.map_err(|e| e.context(format!("theta+ branch at t = {t}")))?;
        let (u_minus, _, _, um) = rm.map_err(|e| e.context(format!("theta- branch at t = {t}")))?;
        self.interval_runs += 2;
        self.particle_updates += up + um;

        let theta = spsa_update(&self.state.theta, u_plus, u_minus, kappa, nu, &delta, t)?;
        let theta = self.admissible(theta, "theta");
        let model = self.cfg.map.apply(&theta)?;
        let noise = std::mem::replace(&mut self.state.advance_noise, NoiseStreams::new(0, 0));
        let (_, ensemble, noise) = self
            .run_interval(&model, start, noise, t)
            .map_err(|e| e.context(format!("advance at t = {t}")))?;
        self.state.ensemble = ensemble;
        self.state.advance_noise = noise;
        self.state.theta = theta.clone();
        self.state.t = t;
        Ok((t, theta))
    }

    pub fn run(mut self) -> Result<RmlTrace<T>> {
        let mut points = Vec::with_capacity(self.cfg.horizon);
        while self.state.t < self.cfg.horizon {
            points.push(self.step()?);
        }
        Ok(RmlTrace {
            points,
            interval_runs: self.interval_runs,
            particle_updates: self.particle_updates,
            projections: self.projections,
        })
    }
}

fn run_unit_interval<T: Real, M: FilterModel<T> + ?Sized>(
    model: &M,
    variant: FilterVariant<T>,
    ensemble: Ensemble<T>,
    noise: NoiseStreams,
    obs: &PathPair<T>,
    t: usize,
    steps_per_unit: usize,
) -> Result<(T, Ensemble<T>, NoiseStreams, u64)> {
    let mut filter = EnsembleFilter::new(model, variant, ensemble, noise)?;
    let dt = obs.dt();
    let mut dy = vec![T::zero(); obs.obs_dim()];
    for k in (t - 1) * steps_per_unit..t * steps_per_unit {
        obs.increment_into(k, &mut dy);
        filter.advance(&dy, dt)?;
    }
    let u = filter.log_nc().value;
    let updates = filter.particle_updates();
    let (ens, noise, _) = filter.into_parts();
    Ok((u, ens, noise, updates))
}

/// Runs the RML recursion for `cfg.horizon` unit times on `obs`.
pub fn rml_run<T: Real>(cfg: &SpsaConfig<T>, obs: &PathPair<T>) -> Result<RmlTrace<T>> {
    RmlEstimator::new(cfg, obs)?.run()
}

/// Independent trajectories on the same observations; trajectory `j` uses seed
/// `indexed_seed(cfg.seed, j)`.
pub fn rml_trajectories<T: Real>(
    cfg: &SpsaConfig<T>,
    obs: &PathPair<T>,
    count: usize,
) -> Result<Vec<RmlTrace<T>>> {
    (0..count)
        .into_par_iter()
        .map(|j| {
            let mut c = cfg.clone();
            c.seed = indexed_seed(cfg.seed, j as u64);
            rml_run(&c, obs).map_err(|e| e.context(format!("trajectory {j}")))
        })
        .collect()
}

/// Componentwise mean of the final `θ_T` over trajectories.
pub fn average_final<T: Real>(traces: &[RmlTrace<T>]) -> Option<DVector<T>> {
    let first = traces.first()?.points.last()?.1.clone();
    let mut sum = DVector::zeros(first.len());
    for tr in traces {
        sum += &tr.points.last()?.1;
    }
    Some(sum / T::count(traces.len()))
}
