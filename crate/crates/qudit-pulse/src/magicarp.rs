//! The shooting parametrization: controls `u_k(s) = Re Tr(U†H_kU M)` are
//! determined by a traceless Hermitian matrix `M` (the initial covector of
//! the time-optimal problem), and `M` is optimized by a Tikhonov-regularized
//! natural gradient descent.
//!
//! The derivative of the end-point map `E(M) = U(1)` and its adjoint are
//! integrated as augmented ODEs in the lab frame:
//!
//! * JVP: `ω = U w U†` solves `ω̇ = Σ_j c_j H_j - i[C, ω]` with
//!   `c_j = Re Tr(H_j·UδMU†) + 2 Im Tr(H_j·ωW)` and `E'(M)δM = -i ω(1) U(1)`.
//! * VJP: backward in `(ν, ζ)` with `ν̇ = -2i C_a W - i[C, ν]`,
//!   `ζ̇ = -C_a - i[C, ζ]`, `a_j = Re Tr(H_j ν)`, giving `E'(M)†S = ζ(0)`.
//!
//! Here `W = UMU†` and `C = Σ_j Re Tr(H_jW) H_j` are cached along the flow
//! once per linearization point, so every Krylov iteration costs only the
//! two linear sweeps. The normal equations `[E'†E' + αI]μ = -∇J` are solved
//! matrix-free by restarted GMRES over coordinates in an orthonormal basis
//! of `i·su(d)`, the step size by golden-section search, and accepted
//! solutions are validated on an independent fourth-order solver before
//! being reported.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use crate::basis::{su_basis, ControlBasis, ControlOp};
use crate::error::{Error, Result};
use crate::krylov::gmres;
use crate::linalg::{
    hermiticity_defect, hs_norm, infidelity, infidelity_gradient, special_unitarize,
    traceless_hermitize, CMat, I1,
};
use crate::opt::golden_section;
use crate::propagate::{
    conservation_report, feedback_endpoint, ConservationReport, FeedbackField, FeedbackScheme,
};
use crate::schedule::{Provenance, PulseSchedule, Segment};

/// Validation runs on a mesh this many times finer than the cost mesh.
const VALIDATION_FACTOR: usize = 8;

/// The traceless Hermitian matrix parametrizing the feedback controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingParameter {
    matrix: CMat,
}

impl ShootingParameter {
    pub fn new(matrix: CMat) -> Result<Self> {
        let defect = hermiticity_defect(&matrix);
        if defect > 1e-12 {
            return Err(Error::NotHermitian(defect));
        }
        let trace = matrix.trace().norm();
        if trace > 1e-12 {
            return Err(Error::NotTraceless(trace));
        }
        Ok(ShootingParameter { matrix })
    }

    /// Symmetrize and remove the trace, then wrap.
    pub fn projected(matrix: &CMat) -> Self {
        ShootingParameter {
            matrix: traceless_hermitize(matrix),
        }
    }

    pub fn zero(d: usize) -> Self {
        ShootingParameter {
            matrix: CMat::zeros(d, d),
        }
    }

    /// Random unit-norm traceless Hermitian matrix scaled by `scale`.
    pub fn random(d: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut a = CMat::zeros(d, d);
        for v in a.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v = Complex64::new(re, im);
        }
        let h = traceless_hermitize(&a);
        let n = hs_norm(&h).max(1e-300);
        ShootingParameter {
            matrix: h * Complex64::new(scale / n, 0.0),
        }
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Solver settings; defaults follow the robust choices used throughout the
/// benchmark protocols.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct MagicarpConfig {
    /// Tikhonov penalty α in the normal equations.
    pub tikhonov: f64,
    pub target_infidelity: f64,
    /// Initial mesh for the variational/adjoint integrations (cost
    /// evaluations run at twice this resolution).
    pub initial_mesh: usize,
    pub refinement_factor: usize,
    pub max_refinements: usize,
    pub max_outer_iterations: usize,
    pub krylov_tol: f64,
    pub krylov_max_iters: usize,
    /// Initial golden-section bracket; later brackets track twice the
    /// previously accepted step.
    pub line_search_bracket: f64,
    /// Relative bracket width at which the search stops.
    pub line_search_tol: f64,
    pub line_search_max_evals: usize,
    /// Initialization scale as a fraction of `|i log U_f|`.
    pub init_scale: f64,
    pub seed: u64,
    /// Fresh random restarts after the refinement budget is exhausted.
    pub max_restarts: usize,
}

impl Default for MagicarpConfig {
    fn default() -> Self {
        MagicarpConfig {
            tikhonov: 1e-3,
            target_infidelity: 1e-4,
            initial_mesh: 128,
            refinement_factor: 2,
            max_refinements: 4,
            max_outer_iterations: 400,
            krylov_tol: 1e-8,
            krylov_max_iters: 200,
            line_search_bracket: 1.0,
            line_search_tol: 0.02,
            line_search_max_evals: 40,
            init_scale: 0.3,
            seed: 0,
            max_restarts: 2,
        }
    }
}

/// Backward adjoint sweep sampled on the coarse mesh nodes.
#[derive(Debug, Clone)]
pub struct AdjointBundle {
    pub times: Vec<f64>,
    pub u: Vec<CMat>,
    pub v: Vec<CMat>,
    pub z: Vec<CMat>,
}

/// One row of the solver trace (per accepted outer iteration).
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iteration: usize,
    pub infidelity: f64,
    pub projected_norm: f64,
    pub rho: f64,
    pub krylov_iterations: usize,
    pub mesh: usize,
}

/// Write a solver trace as CSV for convergence plots.
pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = String::from("iteration,infidelity,projected_norm,rho,krylov_iterations,mesh\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration, r.infidelity, r.projected_norm, r.rho, r.krylov_iterations, r.mesh
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Validated infidelity at or below the target.
    Success,
    /// Budgets exhausted; the best validated infidelity is reported.
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct MagicarpResult {
    pub parameter: ShootingParameter,
    /// Infidelity of the independent high-order solver at fine mesh.
    pub validated_infidelity: f64,
    /// `T = |P(M)|` in Ω⁻¹ units.
    pub execution_time: f64,
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub final_mesh: usize,
    pub restarts_used: usize,
    pub trace: Vec<TraceRow>,
    pub conservation: ConservationReport,
}

// ---------------------------------------------------------------------------
// Cached flow and the linearized sweeps
// ---------------------------------------------------------------------------

struct FlowPoint {
    u: CMat,
    /// `W = U M U†`.
    w: CMat,
    /// `C = Σ_j Re Tr(H_j W) H_j`.
    c: CMat,
}

/// The feedback flow of one linearization point `M`, sampled at the `2n+1`
/// half-mesh nodes by the exponential midpoint rule.
struct FlowCache {
    n: usize,
    points: Vec<FlowPoint>,
}

impl FlowCache {
    fn build(m: &CMat, basis: &ControlBasis, n: usize) -> Result<FlowCache> {
        let d = basis.dimension();
        let field = FeedbackField::new(basis, m);
        let half = 0.5 / n as f64;
        let mut points = Vec::with_capacity(2 * n + 1);
        let mut u = CMat::identity(d, d);
        for k in 0..=2 * n {
            let w = field.conjugated(&u);
            let coeffs = basis.project(&w);
            let c = basis.assemble(&coeffs);
            points.push(FlowPoint {
                u: u.clone(),
                w,
                c,
            });
            if k < 2 * n {
                u = field.step_midpoint(&u, half);
                if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::NonFinite("feedback propagation"));
                }
            }
        }
        Ok(FlowCache { n, points })
    }

    fn end(&self) -> &CMat {
        &self.points[2 * self.n].u
    }
}

fn jvp_rhs(point: &FlowPoint, omega: &CMat, delta: &CMat, basis: &ControlBasis) -> CMat {
    let a_bar = &point.u * delta * point.u.adjoint();
    let b = omega * &point.w;
    let coeffs: Vec<f64> = basis
        .ops()
        .iter()
        .map(|op| op.overlap(&a_bar) + 2.0 * op.overlap_im(&b))
        .collect();
    let mut rhs = CMat::zeros(omega.nrows(), omega.ncols());
    basis.accumulate(&coeffs, &mut rhs);
    // ω̇ = C_w - i[C, ω]
    rhs + (omega * &point.c - &point.c * omega) * I1
}

fn jvp_with_cache(cache: &FlowCache, basis: &ControlBasis, delta: &CMat) -> CMat {
    let d = basis.dimension();
    let n = cache.n;
    let h = 1.0 / n as f64;
    let mut omega = CMat::zeros(d, d);
    for k in 0..n {
        let p0 = &cache.points[2 * k];
        let pm = &cache.points[2 * k + 1];
        let p1 = &cache.points[2 * k + 2];
        let k1 = jvp_rhs(p0, &omega, delta, basis);
        let k2 = jvp_rhs(pm, &(&omega + &k1 * Complex64::new(0.5 * h, 0.0)), delta, basis);
        let k3 = jvp_rhs(pm, &(&omega + &k2 * Complex64::new(0.5 * h, 0.0)), delta, basis);
        let k4 = jvp_rhs(p1, &(&omega + &k3 * Complex64::new(h, 0.0)), delta, basis);
        omega += (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4)
            * Complex64::new(h / 6.0, 0.0);
    }
    // E'(M)δM = -i ω(1) U(1)
    (omega * cache.end()) * (-I1)
}

fn vjp_rhs(point: &FlowPoint, nu: &CMat, zeta: &CMat, basis: &ControlBasis) -> (CMat, CMat) {
    let d = nu.nrows();
    let coeffs: Vec<f64> = basis.ops().iter().map(|op| op.overlap(nu)).collect();
    let mut c_a = CMat::zeros(d, d);
    basis.accumulate(&coeffs, &mut c_a);
    // ν̇ = -2i C_a W - i[C, ν]
    let nu_dot = (&c_a * &point.w) * (I1 * -2.0) + (nu * &point.c - &point.c * nu) * I1;
    // ζ̇ = -C_a - i[C, ζ]
    let zeta_dot = (zeta * &point.c - &point.c * zeta) * I1 - c_a;
    (nu_dot, zeta_dot)
}

fn vjp_sweep(
    cache: &FlowCache,
    basis: &ControlBasis,
    s: &CMat,
    mut record: Option<&mut AdjointBundle>,
) -> CMat {
    let n = cache.n;
    let h = 1.0 / n as f64;
    // Terminal data: ν(1) = i S U(1)†, ζ(1) = 0.
    let mut nu = (s * cache.end().adjoint()) * I1;
    let mut zeta = CMat::zeros(nu.nrows(), nu.ncols());
    if let Some(bundle) = record.as_deref_mut() {
        bundle.push_node(cache, 2 * n, &nu, &zeta);
    }
    for k in (0..n).rev() {
        let p1 = &cache.points[2 * k + 2];
        let pm = &cache.points[2 * k + 1];
        let p0 = &cache.points[2 * k];
        let step = -h;
        let (k1n, k1z) = vjp_rhs(p1, &nu, &zeta, basis);
        let (k2n, k2z) = vjp_rhs(
            pm,
            &(&nu + &k1n * Complex64::new(0.5 * step, 0.0)),
            &(&zeta + &k1z * Complex64::new(0.5 * step, 0.0)),
            basis,
        );
        let (k3n, k3z) = vjp_rhs(
            pm,
            &(&nu + &k2n * Complex64::new(0.5 * step, 0.0)),
            &(&zeta + &k2z * Complex64::new(0.5 * step, 0.0)),
            basis,
        );
        let (k4n, k4z) = vjp_rhs(
            p0,
            &(&nu + &k3n * Complex64::new(step, 0.0)),
            &(&zeta + &k3z * Complex64::new(step, 0.0)),
            basis,
        );
        nu += (k1n + k2n * Complex64::new(2.0, 0.0) + k3n * Complex64::new(2.0, 0.0) + k4n)
            * Complex64::new(step / 6.0, 0.0);
        zeta += (k1z + k2z * Complex64::new(2.0, 0.0) + k3z * Complex64::new(2.0, 0.0) + k4z)
            * Complex64::new(step / 6.0, 0.0);
        if let Some(bundle) = record.as_deref_mut() {
            bundle.push_node(cache, 2 * k, &nu, &zeta);
        }
    }
    traceless_hermitize(&zeta)
}

impl AdjointBundle {
    fn empty() -> Self {
        AdjointBundle {
            times: Vec::new(),
            u: Vec::new(),
            v: Vec::new(),
            z: Vec::new(),
        }
    }

    fn push_node(&mut self, cache: &FlowCache, idx: usize, nu: &CMat, zeta: &CMat) {
        let point = &cache.points[idx];
        let u = point.u.clone();
        // Back to the co-moving frame: v = U†νU, z = U†ζU.
        let v = u.adjoint() * nu * &u;
        let z = u.adjoint() * zeta * &u;
        self.times.push(idx as f64 / (2.0 * cache.n as f64));
        self.u.push(u);
        self.v.push(v);
        self.z.push(z);
    }

    fn finish(mut self) -> Self {
        // Stored backward; present ascending in time.
        self.times.reverse();
        self.u.reverse();
        self.v.reverse();
        self.z.reverse();
        self
    }
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// End-point map `E(M) = U(1)` on the production integrator.
pub fn endpoint(m: &ShootingParameter, basis: &ControlBasis, n_steps: usize) -> Result<CMat> {
    feedback_endpoint(m.matrix(), basis, n_steps, FeedbackScheme::ExpMidpoint)
}

fn check_direction(delta: &CMat) -> Result<()> {
    let defect = hermiticity_defect(delta);
    if defect > 1e-10 {
        return Err(Error::NotHermitian(defect));
    }
    let trace = delta.trace().norm();
    if trace > 1e-10 {
        return Err(Error::NotTraceless(trace));
    }
    Ok(())
}

/// Jacobian-vector product `E'(M)δM`.
pub fn jvp(
    m: &ShootingParameter,
    delta: &CMat,
    basis: &ControlBasis,
    n_steps: usize,
) -> Result<CMat> {
    check_direction(delta)?;
    let cache = FlowCache::build(m.matrix(), basis, n_steps)?;
    Ok(jvp_with_cache(&cache, basis, delta))
}

/// Vector-Jacobian product `R = E'(M)†S`, a traceless Hermitian matrix.
pub fn vjp(m: &ShootingParameter, s: &CMat, basis: &ControlBasis, n_steps: usize) -> Result<CMat> {
    let cache = FlowCache::build(m.matrix(), basis, n_steps)?;
    Ok(vjp_sweep(&cache, basis, s, None))
}

/// As [`vjp`], additionally returning the sampled backward triple
/// `(U, v, z)` on the mesh nodes.
pub fn vjp_bundle(
    m: &ShootingParameter,
    s: &CMat,
    basis: &ControlBasis,
    n_steps: usize,
) -> Result<(CMat, AdjointBundle)> {
    let cache = FlowCache::build(m.matrix(), basis, n_steps)?;
    let mut bundle = AdjointBundle::empty();
    let r = vjp_sweep(&cache, basis, s, Some(&mut bundle));
    Ok((r, bundle.finish()))
}

/// Regularized Gram operator `E'(M)†E'(M)δM + αδM`.
pub fn gram_apply(
    m: &ShootingParameter,
    delta: &CMat,
    alpha: f64,
    basis: &ControlBasis,
    n_steps: usize,
) -> Result<CMat> {
    check_direction(delta)?;
    let cache = FlowCache::build(m.matrix(), basis, n_steps)?;
    let s = jvp_with_cache(&cache, basis, delta);
    let r = vjp_sweep(&cache, basis, &s, None);
    Ok(r + delta * Complex64::new(alpha, 0.0))
}

/// Cost `J(M) = 1 - |Tr(U_f†E(M))|/d` and its gradient
/// `∇J(M) = E'(M)†∇ℓ(E(M))`.
pub fn gradient(
    m: &ShootingParameter,
    target: &CMat,
    basis: &ControlBasis,
    n_steps: usize,
) -> Result<(f64, CMat)> {
    let cache = FlowCache::build(m.matrix(), basis, n_steps)?;
    let j = infidelity(cache.end(), target)?;
    let s = infidelity_gradient(cache.end(), target);
    let g = vjp_sweep(&cache, basis, &s, None);
    Ok((j, g))
}

/// Execution time `T = |P(M)|` (Ω = 1): the conserved control speed and the
/// pulse area of the normalized pulse.
pub fn execution_time(m: &ShootingParameter, basis: &ControlBasis) -> f64 {
    basis.projected_norm(m.matrix())
}

/// Sample the smooth physical controls on `[0, T]` as `n_samples` segments
/// with midpoint-evaluated amplitudes; total amplitude is 1 up to integrator
/// tolerance.
pub fn extract_pulse(
    m: &ShootingParameter,
    basis: &ControlBasis,
    n_samples: usize,
) -> Result<PulseSchedule> {
    let t_total = execution_time(m, basis);
    if t_total < 1e-12 {
        return Err(Error::EmptyPulse);
    }
    if n_samples < 4 {
        return Err(Error::MeshTooCoarse(n_samples));
    }
    let traj = crate::propagate::propagate_feedback(m.matrix(), basis, 2 * n_samples)?;
    let n_edges = basis.edge_count();
    let dt = t_total / n_samples as f64;
    let mut segments = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let u_mid = &traj.controls[2 * i + 1];
        let scaled: Vec<f64> = u_mid.iter().map(|v| v / t_total).collect();
        segments.push(Segment::from_control_vector(&scaled, n_edges, dt));
    }
    Ok(PulseSchedule::new(segments, Provenance::Magicarp))
}

// ---------------------------------------------------------------------------
// Natural gradient descent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics {
    pub rho: f64,
    pub krylov_iterations: usize,
    pub krylov_converged: bool,
    pub evaluations: usize,
}

#[derive(Debug)]
pub enum StepOutcome {
    /// `∇J(M) = 0`: nothing to do (critical point, e.g. an exact solution).
    Critical { infidelity: f64 },
    /// A decrease was found.
    Accepted {
        parameter: ShootingParameter,
        infidelity: f64,
        diagnostics: StepDiagnostics,
    },
    /// No decrease over the shrinking bracket.
    Stalled { infidelity: f64 },
}

fn flatten(m: &CMat, su: &[ControlOp]) -> DVector<f64> {
    DVector::from_iterator(su.len(), su.iter().map(|op| op.overlap(m)))
}

fn unflatten(x: &DVector<f64>, su: &[ControlOp], d: usize) -> CMat {
    let mut m = CMat::zeros(d, d);
    for (op, &c) in su.iter().zip(x.iter()) {
        op.accumulate(c, &mut m);
    }
    m
}

/// Cost evaluations run at twice the variational mesh so the line search
/// sees the same discrete object the cache is built on.
fn cost_at(m: &CMat, target: &CMat, basis: &ControlBasis, mesh: usize) -> Result<f64> {
    let u = feedback_endpoint(m, basis, 2 * mesh, FeedbackScheme::ExpMidpoint)?;
    infidelity(&u, target)
}

/// One natural-gradient update: solve `[E'†E' + αI]μ = -∇J` matrix-free,
/// normalize, pick the step by golden-section search, and fall back to a
/// geometrically shrinking bracket until a decrease is found.
pub fn natural_gradient_step(
    m: &ShootingParameter,
    target: &CMat,
    basis: &ControlBasis,
    cfg: &MagicarpConfig,
    mesh: usize,
    previous_rho: f64,
) -> Result<StepOutcome> {
    let d = basis.dimension();
    let cache = FlowCache::build(m.matrix(), basis, mesh)?;
    let j0 = infidelity(cache.end(), target)?;
    let s = infidelity_gradient(cache.end(), target);
    let grad = vjp_sweep(&cache, basis, &s, None);
    let grad_norm = hs_norm(&grad);
    if grad_norm < 1e-14 {
        return Ok(StepOutcome::Critical { infidelity: j0 });
    }

    let su = su_basis(d);
    let rhs = -flatten(&grad, &su);
    let apply = |x: &DVector<f64>| {
        let delta = unflatten(x, &su, d);
        let jv = jvp_with_cache(&cache, basis, &delta);
        let r = vjp_sweep(&cache, basis, &jv, None) + &delta * Complex64::new(cfg.tikhonov, 0.0);
        flatten(&r, &su)
    };
    let solve = gmres(apply, &rhs, cfg.krylov_tol, cfg.krylov_max_iters, 50);
    let mu = unflatten(&solve.solution, &su, d);
    let mu_norm = hs_norm(&mu);
    if mu_norm < 1e-14 {
        return Ok(StepOutcome::Stalled { infidelity: j0 });
    }
    let direction = mu * Complex64::new(1.0 / mu_norm, 0.0);

    let mut bracket = if previous_rho > 0.0 {
        2.0 * previous_rho
    } else {
        cfg.line_search_bracket
    };
    let mut evals_left = cfg.line_search_max_evals as isize;
    let mut accepted: Option<(f64, f64)> = None;
    while evals_left > 1 && bracket > 1e-12 {
        let (rho, j_rho, n_evals) = golden_section(
            |r| {
                let trial = traceless_hermitize(&(m.matrix() + &direction * Complex64::new(r, 0.0)));
                cost_at(&trial, target, basis, mesh).unwrap_or(f64::INFINITY)
            },
            bracket,
            bracket * cfg.line_search_tol,
            evals_left.max(2) as usize,
        );
        evals_left -= n_evals as isize;
        if j_rho < j0 {
            accepted = Some((rho, j_rho));
            break;
        }
        bracket *= 0.25;
    }

    match accepted {
        Some((rho, j_new)) => {
            let new_m = traceless_hermitize(&(m.matrix() + &direction * Complex64::new(rho, 0.0)));
            Ok(StepOutcome::Accepted {
                parameter: ShootingParameter { matrix: new_m },
                infidelity: j_new,
                diagnostics: StepDiagnostics {
                    rho,
                    krylov_iterations: solve.iterations,
                    krylov_converged: solve.converged,
                    evaluations: (cfg.line_search_max_evals as isize - evals_left).max(0) as usize,
                },
            })
        }
        None => Ok(StepOutcome::Stalled { infidelity: j0 }),
    }
}

// ---------------------------------------------------------------------------
// The full solver
// ---------------------------------------------------------------------------

/// `|i log U_f|` from the eigenphases of the unitary, used to scale the
/// random initialization.
fn log_norm(target: &CMat) -> f64 {
    let d = target.nrows();
    let sym = (target + target.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    (0..d)
        .map(|k| eig.eigenvalues[k].clamp(-1.0, 1.0).acos().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Independent validation: the worst infidelity over the production rule and
/// the fourth-order commutator-free solver, both at `VALIDATION_FACTOR`
/// times the cost mesh.
fn validate(m: &CMat, target: &CMat, basis: &ControlBasis, mesh: usize) -> Result<f64> {
    let fine = 2 * mesh * VALIDATION_FACTOR;
    let u_mid = feedback_endpoint(m, basis, fine, FeedbackScheme::ExpMidpoint)?;
    let u_cf4 = feedback_endpoint(m, basis, fine, FeedbackScheme::CommutatorFree4)?;
    Ok(infidelity(&u_mid, target)?.max(infidelity(&u_cf4, target)?))
}

/// Conservation metrics on the accepted trajectory. The production
/// integrator's speed drift shrinks as `n⁻²`, so the mesh is doubled (from
/// at least 256 steps) until the drift sits well inside the `1e-6·(1+c₀)`
/// budget or the refinement cap is hit; the last report is returned.
fn conservation_checked(m: &CMat, basis: &ControlBasis, speed: f64) -> Result<ConservationReport> {
    let mut n = ((64.0 * (1.0 + speed)).ceil() as usize).max(256);
    let tol = 1e-6 * (1.0 + speed);
    let mut report = conservation_report(m, basis, n)?;
    for _ in 0..8 {
        if report.max_speed_deviation <= 0.3 * tol {
            break;
        }
        n *= 2;
        report = conservation_report(m, basis, n)?;
    }
    Ok(report)
}

/// Full shooting solve: natural-gradient outer loop, validation on an
/// independent solver, mesh continuation on validation failure or stall, and
/// seeded random restarts once the refinement budget is spent. Successes are
/// always validated; budget exhaustion reports the best validated value.
pub fn solve(target: &CMat, basis: &ControlBasis, cfg: &MagicarpConfig) -> Result<MagicarpResult> {
    let d = basis.dimension();
    if target.nrows() != d {
        return Err(Error::DimensionMismatch(target.nrows(), d));
    }
    let target = special_unitarize(target)?;
    let tau = cfg.target_infidelity;

    // Identity-like targets are solved by the empty pulse.
    let identity = CMat::identity(d, d);
    let j_identity = infidelity(&identity, &target)?;
    if j_identity <= tau {
        let zero = ShootingParameter::zero(d);
        let conservation = conservation_report(zero.matrix(), basis, 256)?;
        return Ok(MagicarpResult {
            parameter: zero,
            validated_infidelity: j_identity,
            execution_time: 0.0,
            status: SolveStatus::Success,
            outer_iterations: 0,
            final_mesh: cfg.initial_mesh,
            restarts_used: 0,
            trace: Vec::new(),
            conservation,
        });
    }

    let scale = (cfg.init_scale * log_norm(&target)).max(0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();
    let mut total_iterations = 0usize;
    let mut best: Option<(ShootingParameter, f64, usize)> = None; // (M, J, mesh)

    let mut restarts_used = 0usize;
    'restarts: for attempt in 0..=cfg.max_restarts {
        restarts_used = attempt;
        let mut m = ShootingParameter::random(d, scale, &mut rng);
        let mut mesh = cfg.initial_mesh.max(8);
        let mut refinements = 0usize;
        let mut prev_rho = 0.0f64;
        let mut j = cost_at(m.matrix(), &target, basis, mesh)?;

        loop {
            if best.as_ref().is_none_or(|(_, bj, _)| j < *bj) {
                best = Some((m.clone(), j, mesh));
            }
            if j <= tau {
                let j_val = validate(m.matrix(), &target, basis, mesh)?;
                if j_val <= tau {
                    let speed = execution_time(&m, basis);
                    let conservation = conservation_checked(m.matrix(), basis, speed)?;
                    return Ok(MagicarpResult {
                        parameter: m,
                        validated_infidelity: j_val,
                        execution_time: speed,
                        status: SolveStatus::Success,
                        outer_iterations: total_iterations,
                        final_mesh: mesh,
                        restarts_used,
                        trace,
                        conservation,
                    });
                }
                // Validation failed: continuation over the mesh size, warm
                // starting from the current M.
                if refinements < cfg.max_refinements {
                    mesh *= cfg.refinement_factor.max(2);
                    refinements += 1;
                    j = cost_at(m.matrix(), &target, basis, mesh)?;
                    continue;
                }
                continue 'restarts;
            }
            if total_iterations >= cfg.max_outer_iterations {
                break 'restarts;
            }
            total_iterations += 1;
            match natural_gradient_step(&m, &target, basis, cfg, mesh, prev_rho)? {
                StepOutcome::Accepted {
                    parameter,
                    infidelity,
                    diagnostics,
                } => {
                    m = parameter;
                    j = infidelity;
                    prev_rho = diagnostics.rho;
                    trace.push(TraceRow {
                        iteration: total_iterations,
                        infidelity: j,
                        projected_norm: execution_time(&m, basis),
                        rho: diagnostics.rho,
                        krylov_iterations: diagnostics.krylov_iterations,
                        mesh,
                    });
                }
                StepOutcome::Critical { .. } | StepOutcome::Stalled { .. } => {
                    // Stall: refine first (cheaper, warm started), restart
                    // only once the refinement budget is spent.
                    if refinements < cfg.max_refinements {
                        mesh *= cfg.refinement_factor.max(2);
                        refinements += 1;
                        prev_rho = 0.0;
                        j = cost_at(m.matrix(), &target, basis, mesh)?;
                    } else {
                        continue 'restarts;
                    }
                }
            }
        }
    }

    // Budget exhausted: report the best iterate with an honest validation.
    let (m, _, mesh) = best.expect("at least one iterate was evaluated");
    let j_val = validate(m.matrix(), &target, basis, mesh)?;
    let speed = execution_time(&m, basis);
    let conservation = conservation_checked(m.matrix(), basis, speed)?;
    Ok(MagicarpResult {
        parameter: m,
        validated_infidelity: j_val,
        execution_time: speed,
        status: SolveStatus::BudgetExhausted,
        outer_iterations: total_iterations,
        final_mesh: mesh,
        restarts_used,
        trace,
        conservation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_control_basis;
    use crate::graph::{build_graph, GraphKind};
    use crate::linalg::{expm_herm_unchecked, hs_dot};

    fn basis(kind: GraphKind, d: usize) -> ControlBasis {
        build_control_basis(&build_graph(kind, d, None).unwrap())
    }

    fn random_direction(d: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ShootingParameter::random(d, 1.0, &mut rng).matrix().clone()
    }

    #[test]
    fn shooting_parameter_validation() {
        let mut m = CMat::zeros(2, 2);
        m[(0, 0)] = Complex64::new(1.0, 0.0);
        assert!(matches!(
            ShootingParameter::new(m.clone()),
            Err(Error::NotTraceless(_))
        ));
        m[(1, 1)] = Complex64::new(-1.0, 0.0);
        assert!(ShootingParameter::new(m.clone()).is_ok());
        m[(0, 1)] = Complex64::new(0.0, 0.5);
        assert!(matches!(
            ShootingParameter::new(m),
            Err(Error::NotHermitian(_))
        ));
    }

    #[test]
    fn endpoint_closed_forms() {
        let b = basis(GraphKind::Linear, 2);
        // M = 0 gives the identity.
        let zero = ShootingParameter::zero(2);
        let u = endpoint(&zero, &b, 32).unwrap();
        assert!((u - CMat::identity(2, 2)).norm() < 1e-14);
        // M = βH_k gives exp(-iβH_k).
        let beta = 0.9;
        let hx = b.ops()[0].dense(2);
        let m = ShootingParameter::new(&hx * Complex64::new(beta, 0.0)).unwrap();
        let u = endpoint(&m, &b, 256).unwrap();
        assert!((u - expm_herm_unchecked(&hx, beta)).norm() < 1e-9);
        // M orthogonal to the control span leaves the state at I.
        let mut diag = CMat::zeros(2, 2);
        diag[(0, 0)] = Complex64::new(0.8, 0.0);
        diag[(1, 1)] = Complex64::new(-0.8, 0.0);
        let m = ShootingParameter::new(diag).unwrap();
        let u = endpoint(&m, &b, 64).unwrap();
        assert!((u - CMat::identity(2, 2)).norm() < 1e-13);
    }

    #[test]
    fn jvp_closed_forms() {
        let b = basis(GraphKind::Linear, 3);
        let zero = ShootingParameter::zero(3);
        // δM = 0 maps to 0.
        let out = jvp(&zero, &CMat::zeros(3, 3), &b, 16).unwrap();
        assert!(out.norm() < 1e-14);
        // At M = 0: E'(0)δM = -i P(δM).
        let delta = random_direction(3, 5);
        let out = jvp(&zero, &delta, &b, 64).unwrap();
        let expected = b.project_matrix(&delta) * (-I1);
        assert!((out - expected).norm() < 1e-10);
    }

    #[test]
    fn vjp_closed_form_at_zero() {
        let b = basis(GraphKind::Linear, 3);
        let zero = ShootingParameter::zero(3);
        assert!(vjp(&zero, &CMat::zeros(3, 3), &b, 16).unwrap().norm() < 1e-14);
        // R = Σ_j Re Tr(H_j (iS)†) H_j with v constant = iS.
        let s = {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mut m = CMat::zeros(3, 3);
            for v in m.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *v = Complex64::new(re, im);
            }
            m
        };
        let r = vjp(&zero, &s, &b, 64).unwrap();
        let is = &s * I1;
        let mut expected = CMat::zeros(3, 3);
        for op in b.ops() {
            // Re Tr(H (iS)†) = Re Tr(H · iS) for Hermitian H.
            op.accumulate(op.overlap(&is), &mut expected);
        }
        assert!((r - expected).norm() < 1e-10);
    }

    #[test]
    fn jvp_matches_finite_differences() {
        let b = basis(GraphKind::Linear, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ShootingParameter::random(2, 0.8, &mut rng);
        let delta = random_direction(2, 17);
        let n = 4096;
        let analytic = jvp(&m, &delta, &b, n).unwrap();
        let eps = 1e-5;
        let up = ShootingParameter::projected(&(m.matrix() + &delta * Complex64::new(eps, 0.0)));
        let dn = ShootingParameter::projected(&(m.matrix() - &delta * Complex64::new(eps, 0.0)));
        let fd = (endpoint(&up, &b, n).unwrap() - endpoint(&dn, &b, n).unwrap())
            / Complex64::new(2.0 * eps, 0.0);
        let rel = (&analytic - &fd).norm() / fd.norm();
        assert!(rel < 1e-6, "relative jvp error {rel:.2e}");
    }

    #[test]
    fn adjoint_duality() {
        let b = basis(GraphKind::Linear, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..5 {
            let m = ShootingParameter::random(4, 1.0, &mut rng);
            let delta = random_direction(4, 100 + trial);
            let mut s = CMat::zeros(4, 4);
            for v in s.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *v = Complex64::new(re, im);
            }
            let n = 512;
            let forward = jvp(&m, &delta, &b, n).unwrap();
            let pullback = vjp(&m, &s, &b, n).unwrap();
            let lhs = hs_dot(&s, &forward);
            let rhs = hs_dot(&pullback, &delta);
            let scale = hs_norm(&s) * hs_norm(&delta);
            assert!(
                (lhs - rhs).abs() / scale < 1e-8,
                "trial {trial}: duality gap {:.2e}",
                (lhs - rhs).abs() / scale
            );
        }
    }

    #[test]
    fn gram_apply_closed_form_and_symmetry() {
        let b = basis(GraphKind::Linear, 3);
        let zero = ShootingParameter::zero(3);
        let delta = random_direction(3, 23);
        let alpha = 1e-3;
        // At M = 0: P(δM) + αδM.
        let out = gram_apply(&zero, &delta, alpha, &b, 64).unwrap();
        let expected = b.project_matrix(&delta) + &delta * Complex64::new(alpha, 0.0);
        assert!((out - expected).norm() < 1e-9);
        // δM = 0 maps to 0.
        assert!(gram_apply(&zero, &CMat::zeros(3, 3), alpha, &b, 16)
            .unwrap()
            .norm()
            < 1e-14);
        // Operator symmetry at a generic point.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = ShootingParameter::random(3, 0.9, &mut rng);
        for trial in 0..3 {
            let a = random_direction(3, 300 + trial);
            let c = random_direction(3, 400 + trial);
            let ga = gram_apply(&m, &a, alpha, &b, 256).unwrap();
            let gc = gram_apply(&m, &c, alpha, &b, 256).unwrap();
            let lhs = hs_dot(&ga, &c);
            let rhs = hs_dot(&a, &gc);
            assert!(
                (lhs - rhs).abs() / (hs_norm(&a) * hs_norm(&c)) < 1e-8,
                "trial {trial}: asymmetry {:.2e}",
                (lhs - rhs).abs()
            );
        }
    }

    #[test]
    fn adjoint_bundle_terminal_conditions() {
        let b = basis(GraphKind::Linear, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = ShootingParameter::random(2, 0.7, &mut rng);
        let mut s = CMat::zeros(2, 2);
        for v in s.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v = Complex64::new(re, im);
        }
        let (_, bundle) = vjp_bundle(&m, &s, &b, 32).unwrap();
        let last = bundle.times.len() - 1;
        assert!((bundle.times[last] - 1.0).abs() < 1e-15);
        // z(1) = 0 and v(1) = i U(1)† S.
        assert!(bundle.z[last].norm() < 1e-12);
        let expected_v = bundle.u[last].adjoint() * &s * I1;
        assert!((&bundle.v[last] - expected_v).norm() < 1e-12);
    }

    #[test]
    fn execution_time_values() {
        let b = basis(GraphKind::Linear, 2);
        assert_eq!(execution_time(&ShootingParameter::zero(2), &b), 0.0);
        let beta = 1.7;
        let hx = b.ops()[0].dense(2);
        let m = ShootingParameter::new(&hx * Complex64::new(beta, 0.0)).unwrap();
        assert!((execution_time(&m, &b) - beta).abs() < 1e-14);
        // Components orthogonal to the span contribute nothing.
        let mut diag = CMat::zeros(2, 2);
        diag[(0, 0)] = Complex64::new(2.0, 0.0);
        diag[(1, 1)] = Complex64::new(-2.0, 0.0);
        let m = ShootingParameter::new(&hx * Complex64::new(beta, 0.0) + diag).unwrap();
        assert!((execution_time(&m, &b) - beta).abs() < 1e-14);
    }

    #[test]
    fn extract_pulse_constant_x_rotation() {
        let b = basis(GraphKind::Linear, 2);
        let beta = 0.6;
        let hx = b.ops()[0].dense(2);
        let m = ShootingParameter::new(&hx * Complex64::new(beta, 0.0)).unwrap();
        let pulse = extract_pulse(&m, &b, 64).unwrap();
        assert!((pulse.total_time - beta).abs() < 1e-12);
        for seg in &pulse.segments {
            assert!((seg.edge_amplitudes[0].0 - 1.0).abs() < 1e-9);
            assert!(seg.edge_amplitudes[0].1.abs() < 1e-9);
        }
        assert!(extract_pulse(&ShootingParameter::zero(2), &b, 64).is_err());
    }

    #[test]
    fn equilibrium_for_diagonal_targets() {
        // For a diagonal target and M orthogonal to the x/y control span,
        // the end-point stays at I and the gradient vanishes: exactly the
        // log-initialization trap the random init avoids.
        let b = basis(GraphKind::Linear, 2);
        let theta = 0.8;
        let mut target = CMat::zeros(2, 2);
        target[(0, 0)] = Complex64::from_polar(1.0, theta);
        target[(1, 1)] = Complex64::from_polar(1.0, -theta);
        let mut diag = CMat::zeros(2, 2);
        diag[(0, 0)] = Complex64::new(theta, 0.0);
        diag[(1, 1)] = Complex64::new(-theta, 0.0);
        let m = ShootingParameter::new(diag).unwrap();
        let u = endpoint(&m, &b, 64).unwrap();
        assert!((u - CMat::identity(2, 2)).norm() < 1e-12);
        let (_, g) = gradient(&m, &target, &b, 64).unwrap();
        assert!(hs_norm(&g) < 1e-12, "gradient norm {}", hs_norm(&g));
    }

    #[test]
    fn critical_point_step_is_identity() {
        // At an exact solution the gradient vanishes and the step reports a
        // critical point without moving.
        let b = basis(GraphKind::Linear, 2);
        let phi = 0.4;
        let hx = b.ops()[0].dense(2);
        let m = ShootingParameter::new(&hx * Complex64::new(phi, 0.0)).unwrap();
        let target = expm_herm_unchecked(&hx, phi);
        let cfg = MagicarpConfig::default();
        match natural_gradient_step(&m, &target, &b, &cfg, 64, 0.0).unwrap() {
            StepOutcome::Critical { infidelity } => assert!(infidelity < 1e-10),
            other => panic!("expected critical point, got {other:?}"),
        }
    }

    #[test]
    fn solve_identity_is_trivial() {
        let b = basis(GraphKind::Linear, 3);
        let cfg = MagicarpConfig::default();
        let out = solve(&CMat::identity(3, 3), &b, &cfg).unwrap();
        assert_eq!(out.status, SolveStatus::Success);
        assert_eq!(out.execution_time, 0.0);
        assert_eq!(out.outer_iterations, 0);
    }

    #[test]
    fn solve_d2_geodesic_recovers_minimal_time() {
        let b = basis(GraphKind::Linear, 2);
        let phi = 0.3;
        let hx = b.ops()[0].dense(2);
        let target = expm_herm_unchecked(&hx, phi);
        let cfg = MagicarpConfig {
            seed: 5,
            initial_mesh: 64,
            ..Default::default()
        };
        let out = solve(&target, &b, &cfg).unwrap();
        assert_eq!(out.status, SolveStatus::Success, "J = {}", out.validated_infidelity);
        assert!(out.validated_infidelity <= 1e-4);
        assert!(
            (out.execution_time - phi).abs() / phi < 0.02,
            "T = {} vs φ = {phi}",
            out.execution_time
        );
        // Monotone best-so-far across accepted steps.
        for w in out.trace.windows(2) {
            assert!(w[1].infidelity <= w[0].infidelity + 1e-12);
        }
    }
}
