//! Givens Rotation Decomposition: exact, finite-step factorization of a
//! target unitary into edge-local rotations plus terminal diagonal phases.
//!
//! Working on `A = U_f†`, rotations `GR_n ··· GR_1 A = diag(e^{-iξ_k})`
//! eliminate one column at a time using only graph edges. Levels are retired
//! in an order that keeps the remaining induced graph connected, and within a
//! column the off-diagonal mass is funnelled along a BFS tree, leaves first.
//! The factorization `U_f = diag(e^{iξ_k}) · GR_n ··· GR_1` is exact.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, SQRT_2, TAU};

use num_complex::Complex64;

use crate::basis::ControlBasis;
use crate::error::{Error, Result};
use crate::graph::CouplingGraph;
use crate::linalg::CMat;
use crate::schedule::{Provenance, PulseSchedule, Segment};

/// Entries this small are treated as already eliminated.
const ZERO_PIVOT: f64 = 1e-14;

/// One edge-local rotation `GR(φ, θ)` acting on levels `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GivensStep {
    pub i: usize,
    pub j: usize,
    /// Phase angle in `[0, 2π)`.
    pub theta: f64,
    /// Rotation angle in `[0, π]`.
    pub phi: f64,
}

/// An ordered rotation list plus terminal diagonal phases; composing
/// `diag(e^{iξ_k}) · GR_n ··· GR_1` reproduces the decomposed target.
#[derive(Debug, Clone, PartialEq)]
pub struct GivensSequence {
    pub steps: Vec<GivensStep>,
    /// Terminal phases `ξ_1..ξ_d`.
    pub phases: Vec<f64>,
    pub dimension: usize,
}

/// The rotation of the 2×2 block
/// `[[cos φ, -i e^{-iθ} sin φ], [-i e^{iθ} sin φ, cos φ]]`
/// embedded at rows/columns `(i, j)`.
pub fn givens_rotation(theta: f64, phi: f64, i: usize, j: usize, d: usize) -> Result<CMat> {
    if i >= j || j >= d {
        return Err(Error::InvalidEdge(i, j, d));
    }
    let mut m = CMat::identity(d, d);
    let c = Complex64::new(phi.cos(), 0.0);
    let s = phi.sin();
    m[(i, i)] = c;
    m[(j, j)] = c;
    m[(i, j)] = Complex64::new(0.0, -1.0) * Complex64::from_polar(s, -theta);
    m[(j, i)] = Complex64::new(0.0, -1.0) * Complex64::from_polar(s, theta);
    Ok(m)
}

/// Apply `GR(θ, φ)` on rows `(i, j)` in place (O(d) instead of a matmul).
fn apply_rotation_rows(a: &mut CMat, step: &GivensStep) {
    let c = Complex64::new(step.phi.cos(), 0.0);
    let s = step.phi.sin();
    let upper = Complex64::new(0.0, -1.0) * Complex64::from_polar(s, -step.theta);
    let lower = Complex64::new(0.0, -1.0) * Complex64::from_polar(s, step.theta);
    for col in 0..a.ncols() {
        let ri = a[(step.i, col)];
        let rj = a[(step.j, col)];
        a[(step.i, col)] = c * ri + upper * rj;
        a[(step.j, col)] = lower * ri + c * rj;
    }
}

fn wrap_theta(theta: f64) -> f64 {
    let mut t = theta % TAU;
    if t < 0.0 {
        t += TAU;
    }
    t
}

/// Angles zeroing the `target_row` entry of the working column when the
/// rotation acts on rows `(i, j)`; `a` is the entry kept, `b` is eliminated.
fn elimination_angles(a: Complex64, b: Complex64, eliminate_upper: bool) -> (f64, f64) {
    if a.norm() < 1e-300 {
        // Pure swap.
        return (0.0, FRAC_PI_2);
    }
    let beta = Complex64::new(0.0, -1.0) * (b / a);
    let r = beta.norm();
    let psi = beta.arg();
    let phi = r.atan();
    let theta = if eliminate_upper { -psi } else { psi };
    (wrap_theta(theta), phi)
}

/// Pick the retirement order: at each stage the smallest active vertex whose
/// removal keeps the remaining induced graph connected.
fn next_retirement(graph: &CouplingGraph, active: &[usize]) -> usize {
    if active.len() == 1 {
        return active[0];
    }
    for &v in active {
        let rest: Vec<usize> = active.iter().copied().filter(|&w| w != v).collect();
        if graph.is_connected_on(&rest) {
            return v;
        }
    }
    // Unreachable for connected graphs: at least two non-cut vertices exist.
    active[0]
}

/// BFS tree over `active` rooted at `root`: returns visit order and parents.
fn bfs_tree(graph: &CouplingGraph, active: &[usize], root: usize) -> (Vec<usize>, Vec<usize>) {
    let d = graph.dimension();
    let mut in_set = vec![false; d];
    for &v in active {
        in_set[v] = true;
    }
    let mut parent = vec![usize::MAX; d];
    let mut order = Vec::with_capacity(active.len());
    let mut seen = vec![false; d];
    let mut queue = std::collections::VecDeque::new();
    seen[root] = true;
    queue.push_back(root);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for w in graph.neighbours(v) {
            if in_set[w] && !seen[w] {
                seen[w] = true;
                parent[w] = v;
                queue.push_back(w);
            }
        }
    }
    (order, parent)
}

/// Decompose `u_f` into graph-edge rotations plus diagonal phases.
pub fn decompose(u_f: &CMat, graph: &CouplingGraph) -> Result<GivensSequence> {
    let d = graph.dimension();
    if u_f.nrows() != d {
        return Err(Error::DimensionMismatch(u_f.nrows(), d));
    }
    let defect = crate::linalg::unitarity_defect(u_f);
    if defect > 1e-10 {
        return Err(Error::NotUnitary(defect));
    }

    let mut a = u_f.adjoint();
    let mut steps: Vec<GivensStep> = Vec::new();
    let mut active: Vec<usize> = (0..d).collect();

    while active.len() > 1 {
        let pivot = next_retirement(graph, &active);
        let (order, parent) = bfs_tree(graph, &active, pivot);
        debug_assert_eq!(order.len(), active.len());
        // Leaves first: children are eliminated before their parents, so a
        // zeroed row is never touched again within this column.
        for &level in order.iter().rev() {
            if level == pivot {
                continue;
            }
            let p = parent[level];
            let b = a[(level, pivot)];
            if b.norm() < ZERO_PIVOT {
                continue;
            }
            let kept = a[(p, pivot)];
            let (i, j) = (level.min(p), level.max(p));
            let eliminate_upper = level == i;
            let (theta, phi) = elimination_angles(kept, b, eliminate_upper);
            let step = GivensStep { i, j, theta, phi };
            apply_rotation_rows(&mut a, &step);
            steps.push(step);
        }
        active.retain(|&v| v != pivot);
    }

    // The eliminated matrix is diagonal with unit-modulus entries.
    let mut phases = Vec::with_capacity(d);
    for k in 0..d {
        debug_assert!(
            (a[(k, k)].norm() - 1.0).abs() < 1e-9,
            "diagonal entry {k} has modulus {}",
            a[(k, k)].norm()
        );
        phases.push(-a[(k, k)].arg());
    }
    Ok(GivensSequence {
        steps,
        phases,
        dimension: d,
    })
}

impl GivensSequence {
    /// Compose `diag(e^{iξ_k}) · GR_n ··· GR_1` (the decomposed target).
    pub fn reconstruct(&self) -> CMat {
        let mut u = CMat::identity(self.dimension, self.dimension);
        for step in &self.steps {
            apply_rotation_rows(&mut u, step);
        }
        for (k, &xi) in self.phases.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, xi);
            for col in 0..self.dimension {
                u[(k, col)] *= phase;
            }
        }
        u
    }

    /// Line-oriented text form: `GR i j theta phi` per step, then
    /// `PHASE k xi` per level.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        for s in &self.steps {
            writeln!(out, "GR {} {} {:.17e} {:.17e}", s.i, s.j, s.theta, s.phi).unwrap();
        }
        for (k, xi) in self.phases.iter().enumerate() {
            writeln!(out, "PHASE {k} {xi:.17e}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str, dimension: usize) -> Result<Self> {
        let mut steps = Vec::new();
        let mut phases = vec![0.0; dimension];
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["GR", i, j, theta, phi] => steps.push(GivensStep {
                    i: i.parse().map_err(|_| bad_line(line))?,
                    j: j.parse().map_err(|_| bad_line(line))?,
                    theta: theta.parse().map_err(|_| bad_line(line))?,
                    phi: phi.parse().map_err(|_| bad_line(line))?,
                }),
                ["PHASE", k, xi] => {
                    let k: usize = k.parse().map_err(|_| bad_line(line))?;
                    if k >= dimension {
                        return Err(bad_line(line));
                    }
                    phases[k] = xi.parse().map_err(|_| bad_line(line))?;
                }
                _ => return Err(bad_line(line)),
            }
        }
        Ok(GivensSequence {
            steps,
            phases,
            dimension,
        })
    }
}

fn bad_line(line: &str) -> Error {
    Error::MatrixFormat(format!("bad sequence line: '{line}'"))
}

/// Realize the diagonal `diag(e^{-iξ_k})`, up to a global phase, as 3-step
/// Euler blocks `R_y(π/2) R_x R_y(-π/2)` on spanning-tree edges.
pub fn phases_to_rotations(xi: &[f64], graph: &CouplingGraph) -> Result<Vec<GivensStep>> {
    let d = graph.dimension();
    if xi.len() != d {
        return Err(Error::DimensionMismatch(xi.len(), d));
    }
    // Work with the phases of diag(e^{-iξ}) = diag(e^{iζ}), centred so the
    // targets sum to zero; the offset is a global phase.
    let mean: f64 = xi.iter().sum::<f64>() / d as f64;
    let mut remaining: Vec<f64> = xi.iter().map(|&x| -(x - mean)).collect();

    let all: Vec<usize> = (0..d).collect();
    let (order, parent) = bfs_tree(graph, &all, 0);
    let mut steps = Vec::new();
    for &v in order.iter().rev() {
        if v == 0 {
            continue;
        }
        let p = parent[v];
        let (i, j) = (v.min(p), v.max(p));
        // The Euler block applies phases (e^{iβ} at i, e^{-iβ} at j).
        let beta_raw = if v == i { remaining[v] } else { -remaining[v] };
        let beta = wrap_to_pi(beta_raw);
        // Bookkeeping uses the applied angle so wrap slack lands in the
        // 2π-periodic global phase.
        if v == i {
            remaining[j] += beta;
        } else {
            remaining[i] -= beta;
        }
        remaining[v] = 0.0;
        if beta.abs() < ZERO_PIVOT {
            continue;
        }
        steps.extend(euler_z_block(i, j, beta));
    }
    Ok(steps)
}

fn wrap_to_pi(angle: f64) -> f64 {
    let mut a = angle % TAU;
    if a > PI {
        a -= TAU;
    }
    if a <= -PI {
        a += TAU;
    }
    a
}

/// Three rotations whose product is `diag(e^{iβ} at i, e^{-iβ} at j)`:
/// `GR(π/4, π/2) · GR(|β|, 0 or π) · GR(π/4, 3π/2)` applied right-to-left.
fn euler_z_block(i: usize, j: usize, beta: f64) -> [GivensStep; 3] {
    let mid_theta = if beta >= 0.0 { 0.0 } else { PI };
    [
        GivensStep {
            i,
            j,
            theta: 3.0 * FRAC_PI_2,
            phi: FRAC_PI_4,
        },
        GivensStep {
            i,
            j,
            theta: mid_theta,
            phi: beta.abs(),
        },
        GivensStep {
            i,
            j,
            theta: FRAC_PI_2,
            phi: FRAC_PI_4,
        },
    ]
}

/// Convert a decomposition into sequential monochromatic unit-amplitude
/// segments: each rotation lasts `φ√2` basis units (`φ = Ωt` in bare-σ
/// units), and the terminal phases become Euler blocks at the end.
pub fn to_pulse_schedule(seq: &GivensSequence, basis: &ControlBasis) -> Result<PulseSchedule> {
    let graph = basis.graph();
    let n_edges = basis.edge_count();
    let n_z = basis.len() - 2 * n_edges;

    let mut segments = Vec::new();
    let push_step = |step: &GivensStep, segments: &mut Vec<Segment>| -> Result<()> {
        if !graph.has_edge(step.i, step.j) {
            return Err(Error::InvalidEdge(step.i, step.j, graph.dimension()));
        }
        if step.phi.abs() < ZERO_PIVOT {
            return Ok(());
        }
        let mut edge_amplitudes = vec![(0.0, 0.0); n_edges];
        let edge_idx = graph
            .edges()
            .iter()
            .position(|&e| e == (step.i, step.j))
            .expect("edge presence checked above");
        edge_amplitudes[edge_idx] = (1.0, step.theta);
        segments.push(Segment {
            duration: step.phi * SQRT_2,
            edge_amplitudes,
            z_amplitudes: vec![0.0; n_z],
        });
        Ok(())
    };

    for step in &seq.steps {
        push_step(step, &mut segments)?;
    }
    // diag(e^{iξ}) realized as rotations; phases_to_rotations produces
    // diag(e^{-i·arg}), so feed it the negated phases.
    let negated: Vec<f64> = seq.phases.iter().map(|&x| -x).collect();
    for step in phases_to_rotations(&negated, graph)? {
        push_step(&step, &mut segments)?;
    }
    Ok(PulseSchedule::new(segments, Provenance::Grd))
}
