//! Time evolution: piecewise-constant products for pulse schedules and the
//! closed-loop feedback flow `U̇ = -i Σ_j Re Tr(U†H_jUM) H_j U` behind the
//! shooting parametrization.
//!
//! The production feedback integrator is the exponential midpoint rule: one
//! exact half-step exponential to evaluate the Hamiltonian at the midpoint,
//! then one exact full-step exponential. Every stored state is therefore
//! unitary to eigensolver accuracy regardless of the mesh. A fourth-order
//! commutator-free scheme serves as the independent validation solver.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::basis::ControlBasis;
use crate::error::{Error, Result};
use crate::linalg::{expm_herm_unchecked, CMat};

/// Sampled states and controls of one feedback trajectory on `s ∈ [0, 1]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Node times `s_0 = 0 < … < s_N = 1`.
    pub times: Vec<f64>,
    /// Propagator at each node, `states[0] = I` exactly.
    pub states: Vec<CMat>,
    /// Control vector `u(s_i) ∈ R^m` at each node.
    pub controls: Vec<Vec<f64>>,
    /// Control speed `c(s_i) = |u(s_i)|` at each node.
    pub speeds: Vec<f64>,
}

impl Trajectory {
    pub fn endpoint(&self) -> &CMat {
        self.states.last().expect("trajectory has at least one node")
    }
}

/// Integration scheme for the feedback flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackScheme {
    /// Second-order exponential midpoint rule (production integrator).
    ExpMidpoint,
    /// Fourth-order commutator-free Lie-group scheme (validation solver).
    CommutatorFree4,
}

/// Feedback dynamics for a fixed shooting matrix `M`: the instantaneous
/// control Hamiltonian is `C(U) = Σ_j Re Tr(H_j · UMU†) H_j`.
pub(crate) struct FeedbackField<'a> {
    basis: &'a ControlBasis,
    m: &'a CMat,
}

impl<'a> FeedbackField<'a> {
    pub fn new(basis: &'a ControlBasis, m: &'a CMat) -> Self {
        Self { basis, m }
    }

    /// `W = U M U†` (the lab-frame covector).
    pub fn conjugated(&self, u: &CMat) -> CMat {
        u * self.m * u.adjoint()
    }

    pub fn controls_from_w(&self, w: &CMat) -> Vec<f64> {
        self.basis.project(w)
    }

    /// Dense `C(U)` together with the control coefficients.
    pub fn hamiltonian(&self, u: &CMat) -> (CMat, Vec<f64>) {
        let w = self.conjugated(u);
        let coeffs = self.basis.project(&w);
        (self.basis.assemble(&coeffs), coeffs)
    }

    /// One exponential-midpoint step of size `h`.
    pub fn step_midpoint(&self, u: &CMat, h: f64) -> CMat {
        let (c0, _) = self.hamiltonian(u);
        let u_half = expm_herm_unchecked(&c0, 0.5 * h) * u;
        let (c_mid, _) = self.hamiltonian(&u_half);
        expm_herm_unchecked(&c_mid, h) * u
    }

    /// One step of the fourth-order commutator-free scheme
    /// (two exponentials, four Hamiltonian evaluations).
    pub fn step_cf4(&self, u: &CMat, h: f64) -> CMat {
        let (k1, _) = self.hamiltonian(u);
        let y2 = expm_herm_unchecked(&k1, 0.5 * h) * u;
        let (k2, _) = self.hamiltonian(&y2);
        let y3 = expm_herm_unchecked(&k2, 0.5 * h) * u;
        let (k3, _) = self.hamiltonian(&y3);
        let y4 = expm_herm_unchecked(&(&k3 - &k1 * Complex64::new(0.5, 0.0)), h) * y2;
        let (k4, _) = self.hamiltonian(&y4);
        // Early-weighted combination acts first (rightmost factor).
        let first = &k1 * Complex64::new(3.0 / 12.0, 0.0)
            + &k2 * Complex64::new(2.0 / 12.0, 0.0)
            + &k3 * Complex64::new(2.0 / 12.0, 0.0)
            + &k4 * Complex64::new(-1.0 / 12.0, 0.0);
        let second = &k1 * Complex64::new(-1.0 / 12.0, 0.0)
            + &k2 * Complex64::new(2.0 / 12.0, 0.0)
            + &k3 * Complex64::new(2.0 / 12.0, 0.0)
            + &k4 * Complex64::new(3.0 / 12.0, 0.0);
        expm_herm_unchecked(&second, h) * expm_herm_unchecked(&first, h) * u
    }

    pub fn step(&self, u: &CMat, h: f64, scheme: FeedbackScheme) -> CMat {
        match scheme {
            FeedbackScheme::ExpMidpoint => self.step_midpoint(u, h),
            FeedbackScheme::CommutatorFree4 => self.step_cf4(u, h),
        }
    }
}

fn check_finite(u: &CMat, context: &'static str) -> Result<()> {
    if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite(context));
    }
    Ok(())
}

/// Solve the feedback Cauchy problem on `[0, 1]`, storing all nodes.
///
/// `m` must be traceless Hermitian (callers go through
/// [`crate::magicarp::ShootingParameter`] for validated input).
pub fn propagate_feedback(m: &CMat, basis: &ControlBasis, n_steps: usize) -> Result<Trajectory> {
    if n_steps < 8 {
        return Err(Error::MeshTooCoarse(n_steps));
    }
    let d = basis.dimension();
    if m.nrows() != d {
        return Err(Error::DimensionMismatch(m.nrows(), d));
    }
    let field = FeedbackField::new(basis, m);
    let h = 1.0 / n_steps as f64;
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut controls = Vec::with_capacity(n_steps + 1);
    let mut speeds = Vec::with_capacity(n_steps + 1);
    let mut u = CMat::identity(d, d);
    for k in 0..=n_steps {
        let w = field.conjugated(&u);
        let coeffs = field.controls_from_w(&w);
        let speed = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        times.push(k as f64 * h);
        states.push(u.clone());
        controls.push(coeffs);
        speeds.push(speed);
        if k < n_steps {
            u = field.step_midpoint(&u, h);
            check_finite(&u, "feedback propagation")?;
        }
    }
    Ok(Trajectory {
        times,
        states,
        controls,
        speeds,
    })
}

/// Final propagator of the feedback flow without storing the path.
pub fn feedback_endpoint(
    m: &CMat,
    basis: &ControlBasis,
    n_steps: usize,
    scheme: FeedbackScheme,
) -> Result<CMat> {
    if n_steps < 8 {
        return Err(Error::MeshTooCoarse(n_steps));
    }
    let d = basis.dimension();
    let field = FeedbackField::new(basis, m);
    let h = 1.0 / n_steps as f64;
    let mut u = CMat::identity(d, d);
    for _ in 0..n_steps {
        u = field.step(&u, h, scheme);
        check_finite(&u, "feedback propagation")?;
    }
    Ok(u)
}

/// Streaming conservation metrics along a feedback trajectory.
#[derive(Debug, Clone, Copy)]
pub struct ConservationReport {
    /// Initial control speed `c(0) = |P(M)|`.
    pub initial_speed: f64,
    /// `max_s |c(s) - c(0)|`.
    pub max_speed_deviation: f64,
    /// Largest Frobenius norm of `U†U - I` over the stored nodes.
    pub max_unitarity_defect: f64,
    /// Pulse area `∫ c(s) ds` by the trapezoidal rule.
    pub pulse_area: f64,
    pub n_steps: usize,
}

/// Walk the trajectory without retaining states, reporting speed drift and
/// unitarity defects (the conserved quantity is `Σ_k u_k²`).
pub fn conservation_report(
    m: &CMat,
    basis: &ControlBasis,
    n_steps: usize,
) -> Result<ConservationReport> {
    if n_steps < 8 {
        return Err(Error::MeshTooCoarse(n_steps));
    }
    let d = basis.dimension();
    let field = FeedbackField::new(basis, m);
    let h = 1.0 / n_steps as f64;
    let mut u = CMat::identity(d, d);
    let mut initial_speed = 0.0;
    let mut max_dev = 0.0f64;
    let mut max_unit = 0.0f64;
    let mut area = 0.0;
    let mut prev_speed = 0.0;
    for k in 0..=n_steps {
        let w = field.conjugated(&u);
        let coeffs = field.controls_from_w(&w);
        let speed = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        if k == 0 {
            initial_speed = speed;
        } else {
            area += 0.5 * h * (speed + prev_speed);
        }
        prev_speed = speed;
        max_dev = max_dev.max((speed - initial_speed).abs());
        max_unit = max_unit.max(crate::linalg::unitarity_defect(&u));
        if k < n_steps {
            u = field.step_midpoint(&u, h);
            check_finite(&u, "feedback propagation")?;
        }
    }
    Ok(ConservationReport {
        initial_speed,
        max_speed_deviation: max_dev,
        max_unitarity_defect: max_unit,
        pulse_area: area,
        n_steps,
    })
}

/// Ordered product of per-piece exponentials, later pieces applied on the
/// left: `U = U_N ··· U_1` with `U_j = exp(-i Δt Σ_k u_{j,k} H_k)`.
pub fn propagate_piecewise(
    basis: &ControlBasis,
    amplitudes: &DMatrix<f64>,
    dt: f64,
) -> Result<CMat> {
    if amplitudes.ncols() != basis.len() {
        return Err(Error::ControlShapeMismatch {
            got: amplitudes.ncols(),
            expected: basis.len(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::NonFinite("piece duration"));
    }
    if amplitudes.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("piecewise amplitudes"));
    }
    let d = basis.dimension();
    let mut u = CMat::identity(d, d);
    let mut h = CMat::zeros(d, d);
    for j in 0..amplitudes.nrows() {
        h.fill(Complex64::ZERO);
        let row: Vec<f64> = (0..amplitudes.ncols()).map(|k| amplitudes[(j, k)]).collect();
        basis.accumulate(&row, &mut h);
        u = expm_herm_unchecked(&h, dt) * u;
    }
    Ok(u)
}

/// Same product over explicit dense Hamiltonians; lets callers exercise
/// non-orthonormal generators (e.g. the λH, t/λ rescaling identity).
pub fn propagate_piecewise_dense(hams: &[CMat], amplitudes: &DMatrix<f64>, dt: f64) -> Result<CMat> {
    if hams.is_empty() || amplitudes.ncols() != hams.len() {
        return Err(Error::ControlShapeMismatch {
            got: amplitudes.ncols(),
            expected: hams.len(),
        });
    }
    let d = hams[0].nrows();
    let mut u = CMat::identity(d, d);
    for j in 0..amplitudes.nrows() {
        let mut h = CMat::zeros(d, d);
        for (k, hk) in hams.iter().enumerate() {
            h += hk * Complex64::new(amplitudes[(j, k)], 0.0);
        }
        u = expm_herm_unchecked(&h, dt) * u;
    }
    Ok(u)
}
