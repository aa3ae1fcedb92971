//! Filtering models: linear-Gaussian and nonlinear-drift signal/observation
//! systems, parameter families `theta -> model`, and ground-truth simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, gemv_acc, gemv_into};
use crate::num::Real;
use crate::seeding::{self, standard_normal};

/// Relative tolerance for the symmetry check on noise square roots.
const SYMMETRY_TOL: f64 = 1e-10;
/// Minimum distance from the boundary of a parameter domain after projection.
pub const DOMAIN_MARGIN: f64 = 1e-6;

/// How configured noise matrices are read: as `R^{-1/2}` or as `R^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    #[default]
    InverseSqrt,
    Sqrt,
}

/// Law of the initial state `X_0`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw<T: Real> {
    Gaussian {
        mean: DVector<T>,
        covariance: DMatrix<T>,
        sqrt: DMatrix<T>,
    },
    Point(DVector<T>),
}

impl<T: Real> InitialLaw<T> {
    pub fn gaussian(mean: DVector<T>, covariance: DMatrix<T>) -> Result<Self> {
        Error::check_dim("initial covariance rows", mean.len(), covariance.nrows())?;
        Error::check_dim("initial covariance cols", mean.len(), covariance.ncols())?;
        if !linalg::is_symmetric(&covariance, T::lit(SYMMETRY_TOL)) {
            return Err(Error::Parameter("initial covariance is not symmetric".into()));
        }
        let sqrt = linalg::sqrt_psd(&covariance, "initial covariance")?;
        Ok(Self::Gaussian {
            mean,
            covariance,
            sqrt,
        })
    }

    /// `N(mean * 1, variance * Id)` in dimension `dim`.
    pub fn isotropic(dim: usize, mean: T, variance: T) -> Result<Self> {
        Self::gaussian(
            DVector::from_element(dim, mean),
            DMatrix::identity(dim, dim) * variance,
        )
    }

    pub fn point(x: DVector<T>) -> Self {
        Self::Point(x)
    }

    pub fn dim(&self) -> usize {
        self.mean().len()
    }

    pub fn mean(&self) -> &DVector<T> {
        match self {
            Self::Gaussian { mean, .. } => mean,
            Self::Point(x) => x,
        }
    }

    pub fn covariance(&self) -> DMatrix<T> {
        match self {
            Self::Gaussian { covariance, .. } => covariance.clone(),
            Self::Point(x) => DMatrix::zeros(x.len(), x.len()),
        }
    }

    /// Draws one state; a point law consumes no randomness.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [T]) {
        match self {
            Self::Gaussian { mean, sqrt, .. } => {
                let z: Vec<T> = (0..mean.len()).map(|_| standard_normal(rng)).collect();
                out.copy_from_slice(mean.as_slice());
                gemv_acc(out, sqrt, &z, T::one());
            }
            Self::Point(x) => out.copy_from_slice(x.as_slice()),
        }
    }
}

/// A signal/observation system `dX = f(X)dt + R1^{1/2}dW`, `dY = CXdt + R2^{1/2}dV`
/// that can be simulated.
pub trait Signal<T: Real>: Sync {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn drift_into(&self, x: &[T], out: &mut [T]);
    /// Drift of a one-dimensional state; must agree bit for bit with `drift_into`.
    fn drift_scalar(&self, x: T) -> T {
        let mut out = [T::zero()];
        self.drift_into(&[x], &mut out);
        out[0]
    }
    fn obs_matrix(&self) -> &DMatrix<T>;
    fn signal_noise_sqrt(&self) -> &DMatrix<T>;
    fn obs_noise_sqrt(&self) -> &DMatrix<T>;
    fn initial_law(&self) -> &InitialLaw<T>;
}

/// Matrices derived once from `(C, R1^{1/2}, R2^{1/2})` and used by every filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTerms<T: Real> {
    /// `R1 = R1^{1/2} R1^{1/2}`.
    pub r1: DMatrix<T>,
    pub r2_inv: DMatrix<T>,
    /// `S = C' R2^{-1} C`.
    pub s: DMatrix<T>,
    /// `C' R2^{-1}`.
    pub c_t_r2_inv: DMatrix<T>,
}

impl<T: Real> FilterTerms<T> {
    fn new(c: &DMatrix<T>, r1_sqrt: &DMatrix<T>, r2_sqrt: &DMatrix<T>) -> Result<Self> {
        let (r2, r1) = c.shape();
        Error::check_dim("R1^{1/2} rows", r1, r1_sqrt.nrows())?;
        Error::check_dim("R1^{1/2} cols", r1, r1_sqrt.ncols())?;
        Error::check_dim("R2^{1/2} rows", r2, r2_sqrt.nrows())?;
        Error::check_dim("R2^{1/2} cols", r2, r2_sqrt.ncols())?;
        for (m, name) in [(r1_sqrt, "R1^{1/2}"), (r2_sqrt, "R2^{1/2}")] {
            if !linalg::is_symmetric(m, T::lit(SYMMETRY_TOL)) {
                return Err(Error::Parameter(format!("{name} is not symmetric")));
            }
            if !(linalg::min_singular_value(m) > T::zero()) {
                return Err(Error::Parameter(format!("{name} is singular")));
            }
        }
        let r2_inv_sqrt = linalg::inverse(r2_sqrt, "R2^{1/2}")?;
        let whitened = &r2_inv_sqrt * c;
        let s = whitened.transpose() * &whitened;
        let mut r2_inv = r2_inv_sqrt.transpose() * &r2_inv_sqrt;
        linalg::symmetrize(&mut r2_inv);
        let c_t_r2_inv = c.transpose() * &r2_inv;
        let mut r1 = r1_sqrt * r1_sqrt.transpose();
        linalg::symmetrize(&mut r1);
        Ok(Self {
            r1,
            r2_inv,
            s,
            c_t_r2_inv,
        })
    }
}

/// A [`Signal`] with the invariants a filter needs (invertible noise square roots).
pub trait FilterModel<T: Real>: Signal<T> {
    fn terms(&self) -> &FilterTerms<T>;
}

/// Linear SDE without invertibility requirements; useful for plain simulation,
/// including noise-free limits.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSde<T: Real> {
    pub a: DMatrix<T>,
    pub c: DMatrix<T>,
    pub r1_sqrt: DMatrix<T>,
    pub r2_sqrt: DMatrix<T>,
    pub initial: InitialLaw<T>,
}

impl<T: Real> LinearSde<T> {
    pub fn new(
        a: DMatrix<T>,
        c: DMatrix<T>,
        r1_sqrt: DMatrix<T>,
        r2_sqrt: DMatrix<T>,
        initial: InitialLaw<T>,
    ) -> Result<Self> {
        let r1 = a.nrows();
        let r2 = c.nrows();
        Error::check_dim("A cols", r1, a.ncols())?;
        Error::check_dim("C cols", r1, c.ncols())?;
        Error::check_dim("R1^{1/2} rows", r1, r1_sqrt.nrows())?;
        Error::check_dim("R1^{1/2} cols", r1, r1_sqrt.ncols())?;
        Error::check_dim("R2^{1/2} rows", r2, r2_sqrt.nrows())?;
        Error::check_dim("R2^{1/2} cols", r2, r2_sqrt.ncols())?;
        Error::check_dim("initial law", r1, initial.dim())?;
        Ok(Self {
            a,
            c,
            r1_sqrt,
            r2_sqrt,
            initial,
        })
    }
}

impl<T: Real> Signal<T> for LinearSde<T> {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn obs_dim(&self) -> usize {
        self.c.nrows()
    }
    fn drift_into(&self, x: &[T], out: &mut [T]) {
        gemv_into(out, &self.a, x);
    }
    #[inline]
    fn drift_scalar(&self, x: T) -> T {
        T::zero() + self.a[(0, 0)] * x
    }
    fn obs_matrix(&self) -> &DMatrix<T> {
        &self.c
    }
    fn signal_noise_sqrt(&self) -> &DMatrix<T> {
        &self.r1_sqrt
    }
    fn obs_noise_sqrt(&self) -> &DMatrix<T> {
        &self.r2_sqrt
    }
    fn initial_law(&self) -> &InitialLaw<T> {
        &self.initial
    }
}

/// Time-homogeneous linear-Gaussian filtering model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel<T: Real> {
    sde: LinearSde<T>,
    terms: FilterTerms<T>,
}

impl<T: Real> LinearGaussianModel<T> {
    pub fn new(
        a: DMatrix<T>,
        c: DMatrix<T>,
        r1_sqrt: DMatrix<T>,
        r2_sqrt: DMatrix<T>,
        initial: InitialLaw<T>,
    ) -> Result<Self> {
        let sde = LinearSde::new(a, c, r1_sqrt, r2_sqrt, initial)?;
        let terms = FilterTerms::new(&sde.c, &sde.r1_sqrt, &sde.r2_sqrt)?;
        Ok(Self { sde, terms })
    }

    /// Scalar model from `(a, c, R1^{1/2}, R2^{1/2})` and a Gaussian initial law.
    pub fn scalar(a: T, c: T, r1_sqrt: T, r2_sqrt: T, x0_mean: T, p0: T) -> Result<Self> {
        let m = |v: T| DMatrix::from_element(1, 1, v);
        Self::new(
            m(a),
            m(c),
            m(r1_sqrt),
            m(r2_sqrt),
            InitialLaw::gaussian(DVector::from_element(1, x0_mean), m(p0))?,
        )
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.sde.a
    }
    pub fn c(&self) -> &DMatrix<T> {
        &self.sde.c
    }
    pub fn r1_sqrt(&self) -> &DMatrix<T> {
        &self.sde.r1_sqrt
    }
    pub fn r2_sqrt(&self) -> &DMatrix<T> {
        &self.sde.r2_sqrt
    }
    pub fn x0_mean(&self) -> &DVector<T> {
        self.sde.initial.mean()
    }
    pub fn p0(&self) -> DMatrix<T> {
        self.sde.initial.covariance()
    }
    pub fn s(&self) -> &DMatrix<T> {
        &self.terms.s
    }
    pub fn sde(&self) -> &LinearSde<T> {
        &self.sde
    }
}

impl<T: Real> Signal<T> for LinearGaussianModel<T> {
    fn state_dim(&self) -> usize {
        self.sde.state_dim()
    }
    fn obs_dim(&self) -> usize {
        self.sde.obs_dim()
    }
    fn drift_into(&self, x: &[T], out: &mut [T]) {
        self.sde.drift_into(x, out)
    }
    #[inline]
    fn drift_scalar(&self, x: T) -> T {
        self.sde.drift_scalar(x)
    }
    fn obs_matrix(&self) -> &DMatrix<T> {
        &self.sde.c
    }
    fn signal_noise_sqrt(&self) -> &DMatrix<T> {
        &self.sde.r1_sqrt
    }
    fn obs_noise_sqrt(&self) -> &DMatrix<T> {
        &self.sde.r2_sqrt
    }
    fn initial_law(&self) -> &InitialLaw<T> {
        &self.sde.initial
    }
}

impl<T: Real> FilterModel<T> for LinearGaussianModel<T> {
    fn terms(&self) -> &FilterTerms<T> {
        &self.terms
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftKind<T> {
    Lorenz63 { theta: [T; 3] },
    Lorenz96 { force: T },
}

/// Model with a nonlinear drift `f` in place of `A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearModel<T: Real> {
    drift: DriftKind<T>,
    c: DMatrix<T>,
    r1_sqrt: DMatrix<T>,
    r2_sqrt: DMatrix<T>,
    initial: InitialLaw<T>,
    terms: FilterTerms<T>,
}

impl<T: Real> NonlinearModel<T> {
    pub fn new(
        drift: DriftKind<T>,
        c: DMatrix<T>,
        r1_sqrt: DMatrix<T>,
        r2_sqrt: DMatrix<T>,
        initial: InitialLaw<T>,
    ) -> Result<Self> {
        let r1 = c.ncols();
        match drift {
            DriftKind::Lorenz63 { .. } if r1 != 3 => {
                return Err(Error::Config(format!("Lorenz '63 needs r1 = 3, got {r1}")))
            }
            DriftKind::Lorenz96 { .. } if r1 < 4 => {
                return Err(Error::Config(format!("Lorenz '96 needs r1 >= 4, got {r1}")))
            }
            _ => {}
        }
        Error::check_dim("initial law", r1, initial.dim())?;
        let terms = FilterTerms::new(&c, &r1_sqrt, &r2_sqrt)?;
        Ok(Self {
            drift,
            c,
            r1_sqrt,
            r2_sqrt,
            initial,
            terms,
        })
    }

    pub fn drift_kind(&self) -> &DriftKind<T> {
        &self.drift
    }
}

impl<T: Real> Signal<T> for NonlinearModel<T> {
    fn state_dim(&self) -> usize {
        self.c.ncols()
    }
    fn obs_dim(&self) -> usize {
        self.c.nrows()
    }
    fn drift_into(&self, x: &[T], out: &mut [T]) {
        match self.drift {
            DriftKind::Lorenz63 { theta } => lorenz63_into(x, &theta, out),
            DriftKind::Lorenz96 { force } => lorenz96_into(x, force, out),
        }
    }
    fn obs_matrix(&self) -> &DMatrix<T> {
        &self.c
    }
    fn signal_noise_sqrt(&self) -> &DMatrix<T> {
        &self.r1_sqrt
    }
    fn obs_noise_sqrt(&self) -> &DMatrix<T> {
        &self.r2_sqrt
    }
    fn initial_law(&self) -> &InitialLaw<T> {
        &self.initial
    }
}

impl<T: Real> FilterModel<T> for NonlinearModel<T> {
    fn terms(&self) -> &FilterTerms<T> {
        &self.terms
    }
}

/// Output of [`build_model`].
#[derive(Debug, Clone, PartialEq)]
pub enum Model<T: Real> {
    Linear(LinearGaussianModel<T>),
    Nonlinear(NonlinearModel<T>),
}

impl<T: Real> Model<T> {
    pub fn as_linear(&self) -> Option<&LinearGaussianModel<T>> {
        match self {
            Model::Linear(m) => Some(m),
            Model::Nonlinear(_) => None,
        }
    }

    fn inner(&self) -> &dyn FilterModel<T> {
        match self {
            Model::Linear(m) => m,
            Model::Nonlinear(m) => m,
        }
    }
}

impl<T: Real> Signal<T> for Model<T> {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn obs_dim(&self) -> usize {
        self.inner().obs_dim()
    }
    #[inline]
    fn drift_into(&self, x: &[T], out: &mut [T]) {
        match self {
            Model::Linear(m) => m.drift_into(x, out),
            Model::Nonlinear(m) => m.drift_into(x, out),
        }
    }
    #[inline]
    fn drift_scalar(&self, x: T) -> T {
        match self {
            Model::Linear(m) => m.drift_scalar(x),
            Model::Nonlinear(m) => m.drift_scalar(x),
        }
    }
    fn obs_matrix(&self) -> &DMatrix<T> {
        self.inner().obs_matrix()
    }
    fn signal_noise_sqrt(&self) -> &DMatrix<T> {
        self.inner().signal_noise_sqrt()
    }
    fn obs_noise_sqrt(&self) -> &DMatrix<T> {
        self.inner().obs_noise_sqrt()
    }
    fn initial_law(&self) -> &InitialLaw<T> {
        self.inner().initial_law()
    }
}

impl<T: Real> FilterModel<T> for Model<T> {
    fn terms(&self) -> &FilterTerms<T> {
        self.inner().terms()
    }
}

#[inline]
fn lorenz63_into<T: Real>(x: &[T], theta: &[T; 3], out: &mut [T]) {
    out[0] = theta[0] * (x[1] - x[0]);
    out[1] = theta[1] * x[0] - x[1] - x[0] * x[2];
    out[2] = x[0] * x[1] - theta[2] * x[2];
}

#[inline]
fn lorenz96_into<T: Real>(x: &[T], force: T, out: &mut [T]) {
    let n = x.len();
    for i in 0..n {
        let next = x[(i + 1) % n];
        let prev = x[(i + n - 1) % n];
        let prev2 = x[(i + n - 2) % n];
        out[i] = (next - prev2) * prev - x[i] + force;
    }
}

/// Lorenz '63 drift `(θ1(x2−x1), θ2x1−x2−x1x3, x1x2−θ3x3)`.
pub fn lorenz63_drift<T: Real>(x: &DVector<T>, theta: &DVector<T>) -> Result<DVector<T>> {
    Error::check_dim("Lorenz '63 state", 3, x.len())?;
    Error::check_dim("Lorenz '63 parameters", 3, theta.len())?;
    let mut out = DVector::zeros(3);
    lorenz63_into(x.as_slice(), &[theta[0], theta[1], theta[2]], out.as_mut_slice());
    Ok(out)
}

/// Lorenz '96 drift `f_i = (x_{i+1} − x_{i−2}) x_{i−1} − x_i + θ` with cyclic indices.
pub fn lorenz96_drift<T: Real>(x: &DVector<T>, force: T) -> Result<DVector<T>> {
    if x.len() < 4 {
        return Err(Error::Config(format!(
            "Lorenz '96 needs at least 4 components, got {}",
            x.len()
        )));
    }
    let mut out = DVector::zeros(x.len());
    lorenz96_into(x.as_slice(), force, out.as_mut_slice());
    Ok(out)
}

/// Parameter families `theta -> model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `A = θ1 Id`, `R1^{-1/2} = θ2 R` with `R` tridiagonal (1 on the diagonal, 0.5 beside it).
    LinearScaled,
    /// Lorenz '63 with `θ = (θ1, θ2, θ3)`.
    Lorenz63,
    /// Lorenz '96 with scalar forcing `θ`.
    Lorenz96,
}

impl Family {
    pub fn theta_dim(self) -> usize {
        match self {
            Family::LinearScaled => 2,
            Family::Lorenz63 => 3,
            Family::Lorenz96 => 1,
        }
    }
}

/// Tridiagonal matrix with 1 on the diagonal and 0.5 on the first off-diagonals.
pub fn tridiagonal_band<T: Real>(n: usize) -> DMatrix<T> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            T::one()
        } else if i.abs_diff(j) == 1 {
            T::lit(0.5)
        } else {
            T::zero()
        }
    })
}

/// Default `α1(r1, r2) = 1/√r1`.
pub fn default_alpha1<T: Real>(r1: usize) -> T {
    T::one() / T::count(r1).sqrt()
}

pub const DEFAULT_ALPHA2: f64 = 1.0;

/// Draws an `r2 × r1` matrix with i.i.d. Uniform(0, 1] entries.
pub fn draw_cstar<T: Real>(r2: usize, r1: usize, seed: u64) -> DMatrix<T> {
    let mut rng = seeding::stream(seed);
    // column-major fill order
    DMatrix::from_fn(r2, r1, |_, _| T::lit(1.0 - rng.random::<f64>()))
}

fn lorenz63_obs_matrix<T: Real>() -> DMatrix<T> {
    DMatrix::from_fn(3, 3, |i, j| {
        if i == j || i + 1 == j {
            T::lit(0.5)
        } else {
            T::zero()
        }
    })
}

fn gaspari_cohn_like<T: Real>(x: T) -> T {
    if x >= T::zero() && x <= T::one() {
        T::one() - T::lit(1.5) * x + T::lit(0.5) * x * x * x
    } else {
        T::zero()
    }
}

fn lorenz63_obs_noise_sqrt<T: Real>() -> DMatrix<T> {
    let r2 = 3usize;
    DMatrix::from_fn(r2, r2, |i, j| {
        let d = i.abs_diff(j);
        let dist = d.min(r2 - d);
        T::lit(2.0) * gaspari_cohn_like(T::lit(0.4) * T::count(dist))
    })
}

/// A parameter family together with the fixed parts of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMap<T: Real> {
    family: Family,
    c: DMatrix<T>,
    r2_sqrt: DMatrix<T>,
    noise_spec: NoiseSpec,
    initial: InitialLaw<T>,
}

impl<T: Real> ThetaMap<T> {
    /// `C = α1 C*`, `R2^{-1/2} = α2 Id` (or `R2^{1/2}` under [`NoiseSpec::Sqrt`]).
    pub fn linear_scaled(
        cstar: DMatrix<T>,
        alpha1: T,
        alpha2: T,
        noise_spec: NoiseSpec,
        initial: InitialLaw<T>,
    ) -> Result<Self> {
        let (r2, r1) = cstar.shape();
        Error::check_dim("initial law", r1, initial.dim())?;
        if !(alpha2 != T::zero() && alpha2.is_finite()) {
            return Err(Error::Parameter("alpha2 must be finite and non-zero".into()));
        }
        let scale = match noise_spec {
            NoiseSpec::InverseSqrt => alpha2.recip(),
            NoiseSpec::Sqrt => alpha2,
        };
        Ok(Self {
            family: Family::LinearScaled,
            c: cstar * alpha1,
            r2_sqrt: DMatrix::identity(r2, r2) * scale,
            noise_spec,
            initial,
        })
    }

    pub fn lorenz63(initial: InitialLaw<T>) -> Result<Self> {
        Error::check_dim("initial law", 3, initial.dim())?;
        Ok(Self {
            family: Family::Lorenz63,
            c: lorenz63_obs_matrix(),
            r2_sqrt: lorenz63_obs_noise_sqrt(),
            noise_spec: NoiseSpec::Sqrt,
            initial,
        })
    }

    pub fn lorenz96(r1: usize, initial: InitialLaw<T>) -> Result<Self> {
        if r1 < 4 {
            return Err(Error::Config(format!("Lorenz '96 needs r1 >= 4, got {r1}")));
        }
        Error::check_dim("initial law", r1, initial.dim())?;
        Ok(Self {
            family: Family::Lorenz96,
            c: DMatrix::identity(r1, r1),
            r2_sqrt: DMatrix::identity(r1, r1) * T::lit(0.5),
            noise_spec: NoiseSpec::Sqrt,
            initial,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }
    pub fn theta_dim(&self) -> usize {
        self.family.theta_dim()
    }
    pub fn state_dim(&self) -> usize {
        self.c.ncols()
    }
    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }
    pub fn obs_matrix(&self) -> &DMatrix<T> {
        &self.c
    }
    pub fn initial_law(&self) -> &InitialLaw<T> {
        &self.initial
    }

    pub fn in_domain(&self, theta: &DVector<T>) -> bool {
        theta.len() == self.theta_dim()
            && theta.iter().all(|v| v.is_finite())
            && match self.family {
                Family::LinearScaled => theta[1] != T::zero(),
                Family::Lorenz63 | Family::Lorenz96 => true,
            }
    }

    /// Nearest admissible point at distance at least [`DOMAIN_MARGIN`] from the boundary.
    pub fn project(&self, theta: &DVector<T>) -> DVector<T> {
        let mut out = theta.clone();
        if self.family == Family::LinearScaled && out.len() == 2 {
            let margin = T::lit(DOMAIN_MARGIN);
            if out[1].abs() < margin {
                out[1] = if out[1] < T::zero() { -margin } else { margin };
            }
        }
        out
    }

    pub fn apply(&self, theta: &DVector<T>) -> Result<Model<T>> {
        Error::check_dim("theta", self.theta_dim(), theta.len())?;
        if !self.in_domain(theta) {
            return Err(Error::Parameter(format!(
                "theta = {:?} is outside the {:?} domain",
                theta.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>(),
                self.family
            )));
        }
        let r1 = self.state_dim();
        match self.family {
            Family::LinearScaled => {
                let a = DMatrix::identity(r1, r1) * theta[0];
                let scaled = tridiagonal_band::<T>(r1) * theta[1];
                let r1_sqrt = match self.noise_spec {
                    NoiseSpec::InverseSqrt => linalg::inverse(&scaled, "theta2 * R")?,
                    NoiseSpec::Sqrt => scaled,
                };
                Ok(Model::Linear(LinearGaussianModel::new(
                    a,
                    self.c.clone(),
                    r1_sqrt,
                    self.r2_sqrt.clone(),
                    self.initial.clone(),
                )?))
            }
            Family::Lorenz63 => Ok(Model::Nonlinear(NonlinearModel::new(
                DriftKind::Lorenz63 {
                    theta: [theta[0], theta[1], theta[2]],
                },
                self.c.clone(),
                DMatrix::identity(3, 3),
                self.r2_sqrt.clone(),
                self.initial.clone(),
            )?)),
            Family::Lorenz96 => Ok(Model::Nonlinear(NonlinearModel::new(
                DriftKind::Lorenz96 { force: theta[0] },
                self.c.clone(),
                DMatrix::identity(r1, r1) * T::lit(2f64.sqrt()),
                self.r2_sqrt.clone(),
                self.initial.clone(),
            )?)),
        }
    }
}

pub fn build_model<T: Real>(map: &ThetaMap<T>, theta: &DVector<T>) -> Result<Model<T>> {
    map.apply(theta)
}

/// True parameter of the scalar benchmark: `A = −2`, `R1^{-1/2} = 1`.
pub const SCALAR_BENCHMARK_THETA: [f64; 2] = [-2.0, 1.0];

/// Scalar benchmark family: `r1 = r2 = 1`, `R2^{-1/2} = 2`, `C = C*` and
/// `X_0 ~ N(0.5, 0.2)`.
pub fn scalar_benchmark_map<T: Real>(cstar: T) -> Result<ThetaMap<T>> {
    ThetaMap::linear_scaled(
        DMatrix::from_element(1, 1, cstar),
        T::one(),
        T::lit(2.0),
        NoiseSpec::InverseSqrt,
        InitialLaw::isotropic(1, T::lit(0.5), T::lit(0.2))?,
    )
}

/// The scalar benchmark model at its true parameter.
pub fn scalar_benchmark<T: Real>(cstar: T) -> Result<LinearGaussianModel<T>> {
    let map = scalar_benchmark_map(cstar)?;
    let theta = DVector::from_iterator(2, SCALAR_BENCHMARK_THETA.iter().map(|&v| T::lit(v)));
    match map.apply(&theta)? {
        Model::Linear(m) => Ok(m),
        Model::Nonlinear(_) => unreachable!("linear family"),
    }
}

/// Signal and observation paths on the grid `k Δ_L`, `Δ_L = 2^{-L}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPair<T: Real> {
    level: u32,
    /// `r1 × (K+1)`, one column per grid time.
    signal: DMatrix<T>,
    /// `r2 × (K+1)`, first column exactly zero.
    observation: DMatrix<T>,
}

pub fn grid_dt<T: Real>(level: u32) -> T {
    T::lit(2f64.powi(-(level as i32)))
}

/// Number of `Δ_L` steps in `horizon`; errors unless the ratio is a positive integer.
pub fn grid_steps<T: Real>(horizon: T, level: u32) -> Result<usize> {
    let ratio = horizon.to_f64_lossy() * 2f64.powi(level as i32);
    let steps = ratio.round();
    if !(ratio > 0.0) || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Config(format!(
            "horizon {} is not a positive multiple of 2^-{level}",
            horizon.to_f64_lossy()
        )));
    }
    Ok(steps as usize)
}

impl<T: Real> PathPair<T> {
    pub fn new(level: u32, signal: DMatrix<T>, observation: DMatrix<T>) -> Result<Self> {
        Error::check_dim("path length", signal.ncols(), observation.ncols())?;
        if signal.ncols() == 0 {
            return Err(Error::Contract("empty path".into()));
        }
        if observation.column(0).iter().any(|&v| v != T::zero()) {
            return Err(Error::Contract("observation path must start at Y_0 = 0".into()));
        }
        Ok(Self {
            level,
            signal,
            observation,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }
    pub fn dt(&self) -> T {
        grid_dt(self.level)
    }
    pub fn steps(&self) -> usize {
        self.signal.ncols() - 1
    }
    pub fn len(&self) -> usize {
        self.signal.ncols()
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn state_dim(&self) -> usize {
        self.signal.nrows()
    }
    pub fn obs_dim(&self) -> usize {
        self.observation.nrows()
    }
    pub fn time(&self, k: usize) -> T {
        T::count(k) * self.dt()
    }
    pub fn horizon(&self) -> T {
        self.time(self.steps())
    }
    pub fn signal(&self) -> &DMatrix<T> {
        &self.signal
    }
    pub fn observation(&self) -> &DMatrix<T> {
        &self.observation
    }

    /// Writes `Y_{(k+1)Δ} − Y_{kΔ}` into `out`.
    #[inline]
    pub fn increment_into(&self, k: usize, out: &mut [T]) {
        let next = self.observation.column(k + 1);
        let cur = self.observation.column(k);
        for ((o, &a), &b) in out.iter_mut().zip(next.iter()).zip(cur.iter()) {
            *o = a - b;
        }
    }

    pub fn increment(&self, k: usize) -> DVector<T> {
        let mut out = DVector::zeros(self.obs_dim());
        self.increment_into(k, out.as_mut_slice());
        out
    }

    /// Prefix of the path covering the first `steps` steps.
    pub fn truncated(&self, steps: usize) -> Self {
        let n = (steps + 1).min(self.len());
        Self {
            level: self.level,
            signal: self.signal.columns(0, n).into_owned(),
            observation: self.observation.columns(0, n).into_owned(),
        }
    }
}

/// Euler–Maruyama simulation of signal and observation on the grid `Δ_L`.
///
/// Randomness is consumed in a fixed order: the initial state, then per step
/// `r1` signal-noise normals followed by `r2` observation-noise normals.
pub fn simulate_truth<T: Real, S: Signal<T> + ?Sized>(
    model: &S,
    horizon: T,
    level: u32,
    seed: u64,
) -> Result<PathPair<T>> {
    let steps = grid_steps(horizon, level)?;
    let dt = grid_dt::<T>(level);
    let sqrt_dt = dt.sqrt();
    let r1 = model.state_dim();
    let r2 = model.obs_dim();
    let mut rng = seeding::stream(seed);

    let mut signal = DMatrix::zeros(r1, steps + 1);
    let mut observation = DMatrix::zeros(r2, steps + 1);
    let mut x = vec![T::zero(); r1];
    model.initial_law().sample_into(&mut rng, &mut x);
    signal.column_mut(0).copy_from_slice(&x);

    let mut drift = vec![T::zero(); r1];
    let mut dw = vec![T::zero(); r1];
    let mut dv = vec![T::zero(); r2];
    let mut y = vec![T::zero(); r2];
    for k in 0..steps {
        for w in dw.iter_mut() {
            *w = standard_normal::<T, _>(&mut rng) * sqrt_dt;
        }
        for v in dv.iter_mut() {
            *v = standard_normal::<T, _>(&mut rng) * sqrt_dt;
        }
        gemv_acc(&mut y, model.obs_matrix(), &x, dt);
        gemv_acc(&mut y, model.obs_noise_sqrt(), &dv, T::one());
        model.drift_into(&x, &mut drift);
        for (xi, &f) in x.iter_mut().zip(&drift) {
            *xi += f * dt;
        }
        gemv_acc(&mut x, model.signal_noise_sqrt(), &dw, T::one());
        signal.column_mut(k + 1).copy_from_slice(&x);
        observation.column_mut(k + 1).copy_from_slice(&y);
    }
    PathPair::new(level, signal, observation)
}
