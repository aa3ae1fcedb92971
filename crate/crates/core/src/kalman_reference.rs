//! Exact Kalman–Bucy filter (explicit Euler in time), Riccati integration and the
//! reference log-normalizing constant `U_t = log Z̄_t(Y)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, frobenius};
use crate::models::{FilterModel, LinearGaussianModel, PathPair, Signal};
use crate::num::Real;

/// Clipping beyond this magnitude in the eigenvalue floor is reported.
pub const PSD_CLIP_WARN: f64 = 1e-8;

/// Conditional mean and covariance of the signal at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct KbState<T: Real> {
    pub t: T,
    pub x_hat: DVector<T>,
    pub p: DMatrix<T>,
}

impl<T: Real> KbState<T> {
    /// State at `t = 0`: `(E X_0, P_0)`.
    pub fn initial(model: &LinearGaussianModel<T>) -> Self {
        Self {
            t: T::zero(),
            x_hat: model.x0_mean().clone(),
            p: model.p0(),
        }
    }
}

/// Running value of a log-normalizing constant; starts at zero (`Z̄_0 = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNcAccumulator<T> {
    pub value: T,
    pub t: T,
}

impl<T: Real> Default for LogNcAccumulator<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> LogNcAccumulator<T> {
    pub fn new() -> Self {
        Self {
            value: T::zero(),
            t: T::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, increment: T, dt: T) {
        self.value += increment;
        self.t += dt;
    }
}

/// `Ricc(Q) = AQ + QA' − QSQ + R1`, symmetrized.
pub fn riccati_drift<T: Real>(q: &DMatrix<T>, model: &LinearGaussianModel<T>) -> Result<DMatrix<T>> {
    let r1 = model.state_dim();
    Error::check_dim("Riccati argument rows", r1, q.nrows())?;
    Error::check_dim("Riccati argument cols", r1, q.ncols())?;
    let a = model.a();
    let aq = a * q;
    let mut out = &aq + aq.transpose() - q * model.s() * q + &model.terms().r1;
    linalg::symmetrize(&mut out);
    Ok(out)
}

fn floor_psd<T: Real>(p: DMatrix<T>, t: T) -> DMatrix<T> {
    let (floored, clipped) = linalg::floor_eigenvalues(&p);
    if clipped < -T::lit(PSD_CLIP_WARN) {
        log::warn!(
            "Riccati covariance lost positivity at t = {}: eigenvalue {:e} clipped",
            t.to_f64_lossy(),
            clipped.to_f64_lossy()
        );
    }
    floored
}

/// One explicit Euler step of the Kalman–Bucy mean and Riccati equations.
///
/// The gain uses the left-endpoint covariance `P_k`.
pub fn kb_step<T: Real>(
    state: &KbState<T>,
    dy: &DVector<T>,
    dt: T,
    model: &LinearGaussianModel<T>,
) -> Result<KbState<T>> {
    Error::check_dim("observation increment", model.obs_dim(), dy.len())?;
    Error::check_dim("filter mean", model.state_dim(), state.x_hat.len())?;
    if !(dt > T::zero()) {
        return Err(Error::Contract("time step must be positive".into()));
    }
    let innovation = dy - model.c() * &state.x_hat * dt;
    let gain = &state.p * &model.terms().c_t_r2_inv;
    let x_hat = &state.x_hat + model.a() * &state.x_hat * dt + gain * innovation;
    let mut p = &state.p + riccati_drift(&state.p, model)? * dt;
    linalg::symmetrize(&mut p);
    let t = state.t + dt;
    Ok(KbState {
        t,
        x_hat,
        p: floor_psd(p, t),
    })
}

/// Summand `⟨x, C'R2^{-1} dy⟩ − ½⟨x, S x⟩ dt` of the discretized log-normalizing constant.
pub fn lognc_summand<T: Real>(
    x: &DVector<T>,
    dy: &DVector<T>,
    dt: T,
    model: &LinearGaussianModel<T>,
) -> T {
    let terms = model.terms();
    x.dot(&(&terms.c_t_r2_inv * dy)) - T::lit(0.5) * x.dot(&(&terms.s * x)) * dt
}

/// Kalman–Bucy filter that accumulates `U_t` as it consumes observation increments.
#[derive(Debug, Clone)]
pub struct KalmanBucyFilter<'a, T: Real> {
    model: &'a LinearGaussianModel<T>,
    state: KbState<T>,
    log_nc: LogNcAccumulator<T>,
}

impl<'a, T: Real> KalmanBucyFilter<'a, T> {
    pub fn new(model: &'a LinearGaussianModel<T>) -> Self {
        Self::resume(model, KbState::initial(model), LogNcAccumulator::new())
    }

    /// Continues from a saved state and accumulator.
    pub fn resume(
        model: &'a LinearGaussianModel<T>,
        state: KbState<T>,
        log_nc: LogNcAccumulator<T>,
    ) -> Self {
        Self {
            model,
            state,
            log_nc,
        }
    }

    pub fn step(&mut self, dy: &DVector<T>, dt: T) -> Result<()> {
        let increment = lognc_summand(&self.state.x_hat, dy, dt, self.model);
        self.state = kb_step(&self.state, dy, dt, self.model)?;
        self.log_nc.add(increment, dt);
        Ok(())
    }

    pub fn state(&self) -> &KbState<T> {
        &self.state
    }

    pub fn log_nc(&self) -> &LogNcAccumulator<T> {
        &self.log_nc
    }
}

/// Reference `U_t` along the whole observation path, one entry per grid time.
pub fn reference_lognc<T: Real>(
    obs: &PathPair<T>,
    model: &LinearGaussianModel<T>,
    level: u32,
) -> Result<Vec<(T, T)>> {
    if obs.level() != level {
        return Err(Error::Grid(format!(
            "observation grid is 2^-{} but level {level} was requested",
            obs.level()
        )));
    }
    Error::check_dim("observation dimension", model.obs_dim(), obs.obs_dim())?;
    let dt = obs.dt();
    let mut filter = KalmanBucyFilter::new(model);
    let mut out = Vec::with_capacity(obs.len());
    out.push((T::zero(), T::zero()));
    let mut dy = DVector::zeros(obs.obs_dim());
    for k in 0..obs.steps() {
        obs.increment_into(k, dy.as_mut_slice());
        filter.step(&dy, dt)?;
        out.push((obs.time(k + 1), filter.log_nc().value));
    }
    Ok(out)
}

/// Integrates `∂P = Ricc(P)` from `P = R1` until `‖Ricc(P)‖_F < tol`.
pub fn steady_state_riccati<T: Real>(
    model: &LinearGaussianModel<T>,
    tol: T,
    max_iter: usize,
) -> Result<DMatrix<T>> {
    let mut p = model.terms().r1.clone();
    let mut residual = T::lit(f64::INFINITY);
    for _ in 0..max_iter {
        let drift = riccati_drift(&p, model)?;
        residual = frobenius(&drift);
        if residual < tol {
            return Ok(p);
        }
        if !residual.is_finite() {
            break;
        }
        // Step bounded by the linearized decay rate 2‖A − PS‖.
        let closed_loop = model.a() - &p * model.s();
        let rate = T::lit(2.0) * frobenius(&closed_loop);
        let dt = (T::lit(0.5) / (rate + T::lit(1e-12))).min(T::one());
        p += drift * dt;
        linalg::symmetrize(&mut p);
        p = linalg::floor_eigenvalues(&p).0;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: residual.to_f64_lossy(),
    })
}
