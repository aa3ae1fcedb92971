//! Ensemble Kalman–Bucy filters (vanilla F1, deterministic F2, transport F3) in
//! Euler form, and the particle estimator of the log-normalizing constant.
//!
//! Each step reduces the incoming ensemble to its mean `m` and rescaled sample
//! covariance `p` once, then moves every particle with the shared `(m, p)`:
//!
//! * F1: `ξ' = ξ + f(ξ)Δ + R1^{1/2}ΔW + pC'R2^{-1}(ΔY − [CξΔ + R2^{1/2}ΔV])`
//! * F2: `ξ' = ξ + f(ξ)Δ + R1^{1/2}ΔW + pC'R2^{-1}(ΔY − C(ξ+m)/2 Δ)`
//! * F3: `ξ' = ξ + f(ξ)Δ + ½R1 p⁺(ξ − m)Δ + pC'R2^{-1}(ΔY − C(ξ+m)/2 Δ)`
//!
//! The ½ in the F3 transport term makes the ensemble covariance follow the
//! Riccati flow `AP + PA' + R1 − PSP`.
//!
//! with `f(ξ) = Aξ` for linear models. Particle `i` draws all of its randomness
//! (initial state, then `ΔW` and `ΔV` each step) from its own stream, and the
//! moments are reduced with exact summation, so permuting particles together
//! with their streams permutes the output and leaves `m`, `p` and `U^N` unchanged
//! bit for bit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman_reference::LogNcAccumulator;
use crate::linalg::{self, dot, gemv_acc, gemv_into};
pub use crate::linalg::pseudo_inverse;
use crate::models::{FilterModel, InitialLaw, PathPair};
use crate::num::Real;
use crate::seeding::{self, standard_normal, StreamRng};
use crate::sum::{exact_sum_slice, LongAccumulator};

pub const DEFAULT_PINV_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    F1,
    F2,
    F3,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::F1 => "f1",
            Variant::F2 => "f2",
            Variant::F3 => "f3",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(Variant::F1),
            "f2" => Ok(Variant::F2),
            "f3" => Ok(Variant::F3),
            other => Err(Error::Config(format!("unknown filter variant `{other}`"))),
        }
    }
}

/// Filter variant with its options. F3 uses the pseudo-inverse of `p` with the
/// given tolerance, or the true inverse when `pinv_tol` is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterVariant<T> {
    F1,
    F2,
    F3 { pinv_tol: Option<T> },
}

impl<T: Real> FilterVariant<T> {
    pub fn new(tag: Variant, pinv_tol: Option<T>) -> Result<Self> {
        if let Some(tol) = pinv_tol {
            if !(tol > T::zero()) {
                return Err(Error::Config("pinv_tol must be positive".into()));
            }
        }
        Ok(match tag {
            Variant::F1 => FilterVariant::F1,
            Variant::F2 => FilterVariant::F2,
            Variant::F3 => FilterVariant::F3 { pinv_tol },
        })
    }

    /// F3 with the default pseudo-inverse tolerance; F1/F2 as given.
    pub fn with_defaults(tag: Variant) -> Self {
        Self::new(tag, Some(T::lit(DEFAULT_PINV_TOL))).expect("default tolerance is positive")
    }

    pub fn tag(&self) -> Variant {
        match self {
            FilterVariant::F1 => Variant::F1,
            FilterVariant::F2 => Variant::F2,
            FilterVariant::F3 { .. } => Variant::F3,
        }
    }
}

/// `N` particles in `R^{r1}` stored column-wise, with the current time.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T: Real> {
    particles: DMatrix<T>,
    t: T,
}

impl<T: Real> Ensemble<T> {
    pub fn new(particles: DMatrix<T>, t: T) -> Result<Self> {
        if particles.ncols() < 2 {
            return Err(Error::Contract(format!(
                "an ensemble needs at least 2 particles, got {}",
                particles.ncols()
            )));
        }
        Ok(Self { particles, t })
    }

    /// Draws particle `i` from `law` using stream `i`.
    pub fn sample(law: &InitialLaw<T>, noise: &mut NoiseStreams) -> Result<Self> {
        let r1 = law.dim();
        let n = noise.len();
        let mut particles = DMatrix::zeros(r1, n);
        for (i, rng) in noise.rngs.iter_mut().enumerate() {
            let mut col = particles.column_mut(i);
            law.sample_into(rng, col.as_mut_slice());
        }
        Self::new(particles, T::zero())
    }

    pub fn size(&self) -> usize {
        self.particles.ncols()
    }
    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }
    pub fn t(&self) -> T {
        self.t
    }
    pub fn particles(&self) -> &DMatrix<T> {
        &self.particles
    }

    /// Reorders particles so that new particle `i` is old particle `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            particles: self.particles.select_columns(perm),
            t: self.t,
        }
    }
}

/// One random stream per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStreams {
    rngs: Vec<StreamRng>,
}

impl NoiseStreams {
    /// Stream `i` is seeded from `(seed, i)`.
    pub fn new(seed: u64, n: usize) -> Self {
        Self {
            rngs: (0..n).map(|i| seeding::indexed_stream(seed, i as u64)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rngs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.rngs.is_empty()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            rngs: perm.iter().map(|&i| self.rngs[i].clone()).collect(),
        }
    }
}

/// Exact-summation reduction of an ensemble into mean and rescaled covariance.
#[derive(Debug, Clone)]
struct Moments<T: Real> {
    mean: Vec<T>,
    cov: DMatrix<T>,
    dev: Vec<T>,
    acc: Vec<LongAccumulator>,
    buf: Vec<f64>,
}

impl<T: Real> Moments<T> {
    fn new(r1: usize) -> Self {
        Self {
            mean: vec![T::zero(); r1],
            cov: DMatrix::zeros(r1, r1),
            dev: vec![T::zero(); r1],
            acc: vec![LongAccumulator::new(); r1 * (r1 + 1) / 2],
            buf: Vec::new(),
        }
    }

    fn compute_mean(&mut self, particles: &DMatrix<T>) {
        let r1 = particles.nrows();
        let n = T::count(particles.ncols());
        for a in self.acc[..r1].iter_mut() {
            a.clear();
        }
        if r1 == 1 {
            self.buf.clear();
            self.buf.extend(particles.as_slice().iter().map(|x| x.to_f64_lossy()));
            self.mean[0] = T::lit(exact_sum_slice(&self.buf)) / n;
            return;
        }
        for col in particles.column_iter() {
            for (a, &x) in self.acc[..r1].iter_mut().zip(col.iter()) {
                a.add(x.to_f64_lossy());
            }
        }
        for (m, a) in self.mean.iter_mut().zip(&mut self.acc[..r1]) {
            *m = T::lit(a.value()) / n;
        }
    }

    /// Requires `compute_mean` first.
    fn compute_cov(&mut self, particles: &DMatrix<T>) {
        let r1 = particles.nrows();
        let denom = T::count(particles.ncols() - 1);
        for a in self.acc.iter_mut() {
            a.clear();
        }
        if r1 == 1 {
            let m = self.mean[0];
            self.buf.clear();
            self.buf.extend(particles.as_slice().iter().map(|&x| {
                let d = x - m;
                (d * d).to_f64_lossy()
            }));
            self.cov[(0, 0)] = T::lit(exact_sum_slice(&self.buf)) / denom;
            return;
        }
        for col in particles.column_iter() {
            for ((d, &x), &m) in self.dev.iter_mut().zip(col.iter()).zip(&self.mean) {
                *d = x - m;
            }
            let mut idx = 0;
            for j in 0..r1 {
                for k in j..r1 {
                    self.acc[idx].add((self.dev[j] * self.dev[k]).to_f64_lossy());
                    idx += 1;
                }
            }
        }
        let mut idx = 0;
        for j in 0..r1 {
            for k in j..r1 {
                let v = T::lit(self.acc[idx].value()) / denom;
                self.cov[(j, k)] = v;
                self.cov[(k, j)] = v;
                idx += 1;
            }
        }
    }
}

/// Arithmetic mean of the particles.
pub fn ensemble_mean<T: Real>(e: &Ensemble<T>) -> DVector<T> {
    let mut mom = Moments::new(e.dim());
    mom.compute_mean(&e.particles);
    DVector::from_vec(mom.mean)
}

/// `p = (N−1)^{-1} Σ (ξ^i − m)(ξ^i − m)'`.
pub fn sample_covariance<T: Real>(e: &Ensemble<T>) -> Result<DMatrix<T>> {
    if e.size() < 2 {
        return Err(Error::Contract("sample covariance needs N >= 2".into()));
    }
    let mut mom = Moments::new(e.dim());
    mom.compute_mean(&e.particles);
    mom.compute_cov(&e.particles);
    Ok(mom.cov)
}

fn lognc_increment_slices<T: Real, M: FilterModel<T> + ?Sized>(
    m: &[T],
    dy: &[T],
    dt: T,
    model: &M,
    scratch: &mut [T],
) -> T {
    let terms = model.terms();
    gemv_into(scratch, &terms.c_t_r2_inv, dy);
    let first = dot(m, scratch);
    gemv_into(scratch, &terms.s, m);
    first - T::lit(0.5) * dot(m, scratch) * dt
}

/// `⟨m, C'R2^{-1} dy⟩ − ½⟨m, S m⟩ dt`.
pub fn lognc_increment<T: Real, M: FilterModel<T> + ?Sized>(
    m: &DVector<T>,
    dy: &DVector<T>,
    dt: T,
    model: &M,
) -> Result<T> {
    Error::check_dim("ensemble mean", model.state_dim(), m.len())?;
    Error::check_dim("observation increment", model.obs_dim(), dy.len())?;
    let mut scratch = vec![T::zero(); m.len()];
    Ok(lognc_increment_slices(m.as_slice(), dy.as_slice(), dt, model, &mut scratch))
}

#[derive(Debug, Clone)]
struct Workspace<T: Real> {
    moments: Moments<T>,
    x: Vec<T>,
    drift: Vec<T>,
    dw: Vec<T>,
    dv: Vec<T>,
    innov: Vec<T>,
    obs_tmp: Vec<T>,
    dev: Vec<T>,
    scratch: Vec<T>,
}

impl<T: Real> Workspace<T> {
    fn new(r1: usize, r2: usize) -> Self {
        Self {
            moments: Moments::new(r1),
            x: vec![T::zero(); r1],
            drift: vec![T::zero(); r1],
            dw: vec![T::zero(); r1],
            dv: vec![T::zero(); r2],
            innov: vec![T::zero(); r2],
            obs_tmp: vec![T::zero(); r2],
            dev: vec![T::zero(); r1],
            scratch: vec![T::zero(); r1],
        }
    }
}

/// Moves every particle one Euler step using the moments already held in `work`.
#[allow(clippy::too_many_arguments)]
fn move_particles<T: Real, M: FilterModel<T> + ?Sized>(
    particles: &mut DMatrix<T>,
    t: T,
    variant: FilterVariant<T>,
    model: &M,
    dy: &[T],
    dt: T,
    noise: &mut NoiseStreams,
    work: &mut Workspace<T>,
) -> Result<()> {
    let terms = model.terms();
    let c = model.obs_matrix();
    let r1_sqrt = model.signal_noise_sqrt();
    let r2_sqrt = model.obs_noise_sqrt();
    let sqrt_dt = dt.sqrt();
    let half_dt = T::lit(0.5) * dt;
    let p = &work.moments.cov;
    let gain = p * &terms.c_t_r2_inv;
    let transport = match variant {
        FilterVariant::F3 { pinv_tol } => {
            let inv = match pinv_tol {
                Some(tol) => linalg::pseudo_inverse(p, tol),
                None => p.clone().try_inverse().ok_or(Error::Singular {
                    t: t.to_f64_lossy(),
                })?,
            };
            Some(&terms.r1 * inv * T::lit(0.5))
        }
        _ => None,
    };
    let mean = &work.moments.mean;

    if particles.nrows() == 1 && dy.len() == 1 {
        let coeffs = ScalarCoeffs {
            c: c[(0, 0)],
            r1_sqrt: r1_sqrt[(0, 0)],
            r2_sqrt: r2_sqrt[(0, 0)],
            gain: gain[(0, 0)],
            transport: transport.map(|tr| tr[(0, 0)]),
        };
        move_scalar(particles.as_mut_slice(), variant, model, &coeffs, mean[0], dy[0], dt, noise);
        return Ok(());
    }

    for (i, rng) in noise.rngs.iter_mut().enumerate() {
        let mut col = particles.column_mut(i);
        let xi = col.as_mut_slice();
        work.x.copy_from_slice(xi);
        model.drift_into(&work.x, &mut work.drift);
        for ((o, &x), &f) in xi.iter_mut().zip(&work.x).zip(&work.drift) {
            *o = x + f * dt;
        }
        match variant {
            FilterVariant::F1 => {
                for w in work.dw.iter_mut() {
                    *w = standard_normal::<T, _>(rng) * sqrt_dt;
                }
                for v in work.dv.iter_mut() {
                    *v = standard_normal::<T, _>(rng) * sqrt_dt;
                }
                gemv_acc(xi, r1_sqrt, &work.dw, T::one());
                gemv_into(&mut work.obs_tmp, c, &work.x);
                gemv_into(&mut work.innov, r2_sqrt, &work.dv);
                for ((e, &d), &cx) in work.innov.iter_mut().zip(dy).zip(&work.obs_tmp) {
                    *e = d - cx * dt - *e;
                }
            }
            FilterVariant::F2 | FilterVariant::F3 { .. } => {
                if let FilterVariant::F2 = variant {
                    for w in work.dw.iter_mut() {
                        *w = standard_normal::<T, _>(rng) * sqrt_dt;
                    }
                    gemv_acc(xi, r1_sqrt, &work.dw, T::one());
                }
                for ((s, &x), &m) in work.scratch.iter_mut().zip(&work.x).zip(mean) {
                    *s = x + m;
                }
                gemv_into(&mut work.obs_tmp, c, &work.scratch);
                for ((e, &d), &cx) in work.innov.iter_mut().zip(dy).zip(&work.obs_tmp) {
                    *e = d - cx * half_dt;
                }
                if let Some(tr) = &transport {
                    for ((d, &x), &m) in work.dev.iter_mut().zip(&work.x).zip(mean) {
                        *d = x - m;
                    }
                    gemv_acc(xi, tr, &work.dev, dt);
                }
            }
        }
        gemv_acc(xi, &gain, &work.innov, T::one());
    }
    Ok(())
}

struct ScalarCoeffs<T> {
    c: T,
    r1_sqrt: T,
    r2_sqrt: T,
    gain: T,
    transport: Option<T>,
}

/// `r1 = r2 = 1` specialization of [`move_particles`]; performs the same
/// floating-point operations in the same order.
#[allow(clippy::too_many_arguments)]
fn move_scalar<T: Real, M: FilterModel<T> + ?Sized>(
    particles: &mut [T],
    variant: FilterVariant<T>,
    model: &M,
    k: &ScalarCoeffs<T>,
    m: T,
    dy: T,
    dt: T,
    noise: &mut NoiseStreams,
) {
    let sqrt_dt = dt.sqrt();
    let half_dt = T::lit(0.5) * dt;
    let zero = T::zero();
    let one = T::one();
    for (xi, rng) in particles.iter_mut().zip(noise.rngs.iter_mut()) {
        let x = *xi;
        let mut out = x + model.drift_scalar(x) * dt;
        let innov = match variant {
            FilterVariant::F1 => {
                let dw = standard_normal::<T, _>(rng) * sqrt_dt;
                let dv = standard_normal::<T, _>(rng) * sqrt_dt;
                out += k.r1_sqrt * (one * dw);
                let cx = zero + k.c * x;
                let noise_obs = zero + k.r2_sqrt * dv;
                dy - cx * dt - noise_obs
            }
            FilterVariant::F2 => {
                let dw = standard_normal::<T, _>(rng) * sqrt_dt;
                out += k.r1_sqrt * (one * dw);
                dy - (zero + k.c * (x + m)) * half_dt
            }
            FilterVariant::F3 { .. } => {
                let e = dy - (zero + k.c * (x + m)) * half_dt;
                if let Some(tr) = k.transport {
                    out += tr * (dt * (x - m));
                }
                e
            }
        };
        out += k.gain * (one * innov);
        *xi = out;
    }
}

/// One Euler step of the chosen ensemble filter; returns the updated ensemble.
pub fn enkbf_step<T: Real, M: FilterModel<T> + ?Sized>(
    e: &Ensemble<T>,
    variant: FilterVariant<T>,
    model: &M,
    dy: &DVector<T>,
    dt: T,
    noise: &mut NoiseStreams,
) -> Result<Ensemble<T>> {
    Error::check_dim("ensemble dimension", model.state_dim(), e.dim())?;
    Error::check_dim("observation increment", model.obs_dim(), dy.len())?;
    Error::check_dim("noise streams", e.size(), noise.len())?;
    if !(dt > T::zero()) {
        return Err(Error::Contract("time step must be positive".into()));
    }
    let mut work = Workspace::new(e.dim(), model.obs_dim());
    work.moments.compute_mean(&e.particles);
    work.moments.compute_cov(&e.particles);
    let mut particles = e.particles.clone();
    move_particles(&mut particles, e.t, variant, model, dy.as_slice(), dt, noise, &mut work)?;
    Ok(Ensemble {
        particles,
        t: e.t + dt,
    })
}

/// Ensemble filter that accumulates `U^N_t` as it consumes observation increments.
#[derive(Debug, Clone)]
pub struct EnsembleFilter<'a, T: Real, M: FilterModel<T> + ?Sized> {
    model: &'a M,
    variant: FilterVariant<T>,
    ensemble: Ensemble<T>,
    noise: NoiseStreams,
    log_nc: LogNcAccumulator<T>,
    work: Workspace<T>,
    particle_updates: u64,
}

impl<'a, T: Real, M: FilterModel<T> + ?Sized> EnsembleFilter<'a, T, M> {
    pub fn new(
        model: &'a M,
        variant: FilterVariant<T>,
        ensemble: Ensemble<T>,
        noise: NoiseStreams,
    ) -> Result<Self> {
        Self::resume(model, variant, ensemble, noise, LogNcAccumulator::new())
    }

    /// Continues from a saved ensemble, noise state and accumulator.
    pub fn resume(
        model: &'a M,
        variant: FilterVariant<T>,
        ensemble: Ensemble<T>,
        noise: NoiseStreams,
        log_nc: LogNcAccumulator<T>,
    ) -> Result<Self> {
        Error::check_dim("ensemble dimension", model.state_dim(), ensemble.dim())?;
        Error::check_dim("noise streams", ensemble.size(), noise.len())?;
        let work = Workspace::new(model.state_dim(), model.obs_dim());
        Ok(Self {
            model,
            variant,
            ensemble,
            noise,
            log_nc,
            work,
            particle_updates: 0,
        })
    }

    /// Initial ensemble drawn i.i.d. from the model's initial law, one stream per particle.
    pub fn from_initial_law(
        model: &'a M,
        variant: FilterVariant<T>,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut noise = NoiseStreams::new(seed, n);
        let ensemble = Ensemble::sample(model.initial_law(), &mut noise)?;
        Self::new(model, variant, ensemble, noise)
    }

    /// Consumes `dy = Y_{t+Δ} − Y_t`: adds the `U^N` increment at the current mean,
    /// then moves the particles.
    pub fn advance(&mut self, dy: &[T], dt: T) -> Result<()> {
        debug_assert_eq!(dy.len(), self.model.obs_dim());
        let particles = &self.ensemble.particles;
        self.work.moments.compute_mean(particles);
        self.work.moments.compute_cov(particles);
        let increment = lognc_increment_slices(
            &self.work.moments.mean,
            dy,
            dt,
            self.model,
            &mut self.work.scratch,
        );
        move_particles(
            &mut self.ensemble.particles,
            self.ensemble.t,
            self.variant,
            self.model,
            dy,
            dt,
            &mut self.noise,
            &mut self.work,
        )?;
        self.ensemble.t += dt;
        self.log_nc.add(increment, dt);
        self.particle_updates += self.ensemble.size() as u64;
        Ok(())
    }

    /// Mean used by the most recent [`advance`](Self::advance) (the pre-update mean).
    pub fn last_mean(&self) -> &[T] {
        &self.work.moments.mean
    }

    /// Covariance used by the most recent [`advance`](Self::advance).
    pub fn last_covariance(&self) -> &DMatrix<T> {
        &self.work.moments.cov
    }

    pub fn ensemble(&self) -> &Ensemble<T> {
        &self.ensemble
    }
    pub fn noise(&self) -> &NoiseStreams {
        &self.noise
    }
    pub fn log_nc(&self) -> &LogNcAccumulator<T> {
        &self.log_nc
    }
    pub fn particle_updates(&self) -> u64 {
        self.particle_updates
    }

    pub fn into_parts(self) -> (Ensemble<T>, NoiseStreams, LogNcAccumulator<T>) {
        (self.ensemble, self.noise, self.log_nc)
    }
}

/// Mean, covariance and `U^N` paths of one filter run, all on the observation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnkbfRun<T: Real> {
    pub mean_path: Vec<DVector<T>>,
    pub cov_path: Option<Vec<DMatrix<T>>>,
    pub u_path: Vec<(T, T)>,
}

/// Runs the filter along `obs` from an ensemble drawn from the model's initial law.
#[allow(clippy::too_many_arguments)]
pub fn run_enkbf<T: Real, M: FilterModel<T> + ?Sized>(
    obs: &PathPair<T>,
    model: &M,
    variant: FilterVariant<T>,
    n: usize,
    level: u32,
    seed: u64,
    emit_cov: bool,
) -> Result<EnkbfRun<T>> {
    if obs.level() != level {
        return Err(Error::Grid(format!(
            "observation grid is 2^-{} but level {level} was requested",
            obs.level()
        )));
    }
    Error::check_dim("observation dimension", model.obs_dim(), obs.obs_dim())?;
    let dt = obs.dt();
    let mut filter = EnsembleFilter::from_initial_law(model, variant, n, seed)?;
    let mut mean_path = Vec::with_capacity(obs.len());
    let mut cov_path = emit_cov.then(|| Vec::with_capacity(obs.len()));
    let mut u_path = Vec::with_capacity(obs.len());
    u_path.push((T::zero(), T::zero()));
    let mut dy = vec![T::zero(); obs.obs_dim()];
    for k in 0..obs.steps() {
        obs.increment_into(k, &mut dy);
        filter
            .advance(&dy, dt)
            .map_err(|e| e.context(format!("filter step {k}")))?;
        mean_path.push(DVector::from_column_slice(filter.last_mean()));
        if let Some(c) = cov_path.as_mut() {
            c.push(filter.last_covariance().clone());
        }
        u_path.push((obs.time(k + 1), filter.log_nc().value));
    }
    mean_path.push(ensemble_mean(filter.ensemble()));
    if let Some(c) = cov_path.as_mut() {
        c.push(sample_covariance(filter.ensemble())?);
    }
    Ok(EnkbfRun {
        mean_path,
        cov_path,
        u_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearGaussianModel;
    use approx::assert_abs_diff_eq;

    fn ens1(xs: &[f64]) -> Ensemble<f64> {
        Ensemble::new(DMatrix::from_row_slice(1, xs.len(), xs), 0.0).unwrap()
    }

    #[test]
    fn mean_examples() {
        let e = Ensemble::new(DMatrix::from_fn(2, 4, |i, _| i as f64 + 0.25), 0.0).unwrap();
        assert_eq!(ensemble_mean(&e), DVector::from_column_slice(&[0.25, 1.25]));
        assert_eq!(ensemble_mean(&ens1(&[0.0, 1.0, 2.0]))[0], 1.0);
        assert_eq!(ensemble_mean(&ens1(&[2.0, 0.0, 1.0]))[0], 1.0);
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(sample_covariance(&ens1(&[3.0, 3.0, 3.0])).unwrap()[(0, 0)], 0.0);
        assert_eq!(sample_covariance(&ens1(&[0.0, 2.0])).unwrap()[(0, 0)], 2.0);
        assert_eq!(sample_covariance(&ens1(&[0.0, 1.0, 2.0])).unwrap()[(0, 0)], 1.0);
        assert!(Ensemble::new(DMatrix::<f64>::zeros(1, 1), 0.0).is_err());
    }

    #[test]
    fn lognc_increment_examples() {
        let model = LinearGaussianModel::scalar(-2.0, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let v = |x: f64| DVector::from_element(1, x);
        assert_eq!(lognc_increment(&v(0.0), &v(0.5), 0.1, &model).unwrap(), 0.0);
        assert_abs_diff_eq!(lognc_increment(&v(2.0), &v(0.5), 0.1, &model).unwrap(), 0.8, epsilon = 1e-15);
        let a = lognc_increment(&v(2.0), &v(0.5), 0.1, &model).unwrap();
        let b = lognc_increment(&v(2.0), &v(1.5), 0.1, &model).unwrap();
        // first term 1.0 -> 3.0, second term -0.2 unchanged
        assert_abs_diff_eq!(b - a, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn f1_zero_gain_step() {
        // Equal particles make p = 0. Tiny noise stands in for zero draws.
        let model = LinearGaussianModel::scalar(-2.0, 1.0, 1e-300, 1.0, 0.0, 1.0).unwrap();
        let e = ens1(&[1.0, 1.0, 1.0]);
        let mut noise = NoiseStreams::new(3, 3);
        let next = enkbf_step(&e, FilterVariant::F1, &model, &DVector::from_element(1, 0.4), 0.1, &mut noise)
            .unwrap();
        for &x in next.particles().iter() {
            assert_abs_diff_eq!(x, 0.8, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(next.t(), 0.1);
    }

    #[test]
    fn f3_with_degenerate_covariance() {
        let model = LinearGaussianModel::scalar(-2.0, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let e = ens1(&[1.0, 1.0]);
        let dy = DVector::from_element(1, 0.4);
        let mut noise = NoiseStreams::new(3, 2);
        let next = enkbf_step(&e, FilterVariant::with_defaults(Variant::F3), &model, &dy, 0.1, &mut noise).unwrap();
        assert_eq!(next.particles().as_slice(), &[0.8, 0.8]);
        let exact = FilterVariant::F3 { pinv_tol: None };
        assert!(matches!(
            enkbf_step(&e, exact, &model, &dy, 0.1, &mut noise),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn f2_hand_computed_step() {
        // A = 0, C = 1, R2 = 1; signal noise negligible.
        let model = LinearGaussianModel::scalar(0.0, 1.0, 1e-300, 1.0, 0.0, 1.0).unwrap();
        let e = ens1(&[0.0, 2.0]);
        let mut noise = NoiseStreams::new(9, 2);
        let next = enkbf_step(&e, FilterVariant::F2, &model, &DVector::from_element(1, 0.3), 0.1, &mut noise)
            .unwrap();
        assert_abs_diff_eq!(next.particles()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(next.particles()[(0, 1)], 2.3, epsilon = 1e-15);
    }

    #[test]
    fn f2_keeps_identical_particles_identical() {
        let model = LinearGaussianModel::scalar(-1.0, 0.5, 1e-300, 1.0, 0.0, 1.0).unwrap();
        let mut e = ens1(&[0.7; 5]);
        let mut noise = NoiseStreams::new(1, 5);
        for _ in 0..20 {
            e = enkbf_step(&e, FilterVariant::F2, &model, &DVector::from_element(1, 0.05), 0.01, &mut noise)
                .unwrap();
            let first = e.particles()[(0, 0)];
            assert!(e.particles().iter().all(|&x| x == first));
        }
    }

    #[test]
    fn enkbf_step_checks_dimensions() {
        let model = LinearGaussianModel::scalar(-1.0, 0.5, 1.0, 1.0, 0.0, 1.0).unwrap();
        let e = ens1(&[0.0, 1.0]);
        let mut noise = NoiseStreams::new(1, 2);
        assert!(enkbf_step(&e, FilterVariant::F1, &model, &DVector::zeros(2), 0.1, &mut noise).is_err());
        let mut short = NoiseStreams::new(1, 1);
        assert!(enkbf_step(&e, FilterVariant::F1, &model, &DVector::zeros(1), 0.1, &mut short).is_err());
        assert!(enkbf_step(&e, FilterVariant::F1, &model, &DVector::zeros(1), 0.0, &mut noise).is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("F3".parse::<Variant>().unwrap(), Variant::F3);
        assert!("f4".parse::<Variant>().is_err());
        assert!(FilterVariant::<f64>::new(Variant::F3, Some(0.0)).is_err());
    }
}
