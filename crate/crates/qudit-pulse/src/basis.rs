//! Orthonormal control-Hamiltonian bases attached to a coupling graph.
//!
//! Each edge `(i, j)` carries the pair `σx^(ij)/√2`, `σy^(ij)/√2`; with z
//! controls enabled, the `d − 1` diagonal generalized Gell-Mann matrices are
//! appended. The whole family is orthonormal for `Re Tr(H_i H_j)` and every
//! member is traceless, so the amplitude bound Ω = 1 applies to the Euclidean
//! norm of the coefficient vector.

use num_complex::Complex64;

use crate::graph::CouplingGraph;
use crate::linalg::CMat;

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One control generator in sparse form.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlOp {
    /// `(E_ij + E_ji)/√2`
    EdgeX { i: usize, j: usize },
    /// `(-i E_ij + i E_ji)/√2`
    EdgeY { i: usize, j: usize },
    /// `diag(weights)` with unit Frobenius norm and zero trace.
    Diagonal { weights: Vec<f64> },
}

impl ControlOp {
    /// `Re Tr(H · W)` using the sparsity of `H`.
    #[inline]
    pub fn overlap(&self, w: &CMat) -> f64 {
        match self {
            ControlOp::EdgeX { i, j } => (w[(*j, *i)].re + w[(*i, *j)].re) * SQRT_HALF,
            ControlOp::EdgeY { i, j } => (w[(*j, *i)].im - w[(*i, *j)].im) * SQRT_HALF,
            ControlOp::Diagonal { weights } => weights
                .iter()
                .enumerate()
                .map(|(k, &wk)| wk * w[(k, k)].re)
                .sum(),
        }
    }

    /// `Im Tr(H · W)` using the sparsity of `H`.
    #[inline]
    pub fn overlap_im(&self, w: &CMat) -> f64 {
        match self {
            ControlOp::EdgeX { i, j } => (w[(*j, *i)].im + w[(*i, *j)].im) * SQRT_HALF,
            ControlOp::EdgeY { i, j } => (w[(*i, *j)].re - w[(*j, *i)].re) * SQRT_HALF,
            ControlOp::Diagonal { weights } => weights
                .iter()
                .enumerate()
                .map(|(k, &wk)| wk * w[(k, k)].im)
                .sum(),
        }
    }

    /// `acc += c · H`.
    #[inline]
    pub fn accumulate(&self, c: f64, acc: &mut CMat) {
        match self {
            ControlOp::EdgeX { i, j } => {
                let v = Complex64::new(c * SQRT_HALF, 0.0);
                acc[(*i, *j)] += v;
                acc[(*j, *i)] += v;
            }
            ControlOp::EdgeY { i, j } => {
                let v = Complex64::new(0.0, c * SQRT_HALF);
                acc[(*i, *j)] -= v;
                acc[(*j, *i)] += v;
            }
            ControlOp::Diagonal { weights } => {
                for (k, &wk) in weights.iter().enumerate() {
                    acc[(k, k)] += Complex64::new(c * wk, 0.0);
                }
            }
        }
    }

    pub fn dense(&self, d: usize) -> CMat {
        let mut m = CMat::zeros(d, d);
        self.accumulate(1.0, &mut m);
        m
    }

    pub fn label(&self) -> String {
        match self {
            ControlOp::EdgeX { i, j } => format!("x{i}_{j}"),
            ControlOp::EdgeY { i, j } => format!("y{i}_{j}"),
            ControlOp::Diagonal { weights } => {
                let level = weights.iter().filter(|w| w.abs() > 0.0).count() - 1;
                format!("z{level}")
            }
        }
    }
}

/// The orthonormal control family of a graph, in a fixed order: for each
/// edge (sorted), its x then y generator; then the diagonal z family.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBasis {
    dimension: usize,
    ops: Vec<ControlOp>,
    graph: CouplingGraph,
}

/// Per-edge x/y controls, plus the orthonormalized traceless diagonal family
/// when the graph asks for z controls.
pub fn build_control_basis(graph: &CouplingGraph) -> ControlBasis {
    let d = graph.dimension();
    let mut ops = Vec::with_capacity(2 * graph.edges().len() + d - 1);
    for &(i, j) in graph.edges() {
        ops.push(ControlOp::EdgeX { i, j });
        ops.push(ControlOp::EdgeY { i, j });
    }
    if graph.include_sigma_z() {
        for k in 1..d {
            // diag(1, …, 1, -k, 0, …, 0)/√(k(k+1)): traceless, unit norm,
            // mutually orthogonal and orthogonal to every off-diagonal op.
            let norm = (k as f64 * (k as f64 + 1.0)).sqrt();
            let mut weights = vec![0.0; d];
            for w in weights.iter_mut().take(k) {
                *w = 1.0 / norm;
            }
            weights[k] = -(k as f64) / norm;
            ops.push(ControlOp::Diagonal { weights });
        }
    }
    ControlBasis {
        dimension: d,
        ops,
        graph: graph.clone(),
    }
}

impl ControlBasis {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of controls `m`.
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[ControlOp] {
        &self.ops
    }

    pub fn graph(&self) -> &CouplingGraph {
        &self.graph
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edges().len()
    }

    /// Index of the x (axis 0) or y (axis 1) control of a graph edge.
    pub fn edge_control_index(&self, i: usize, j: usize, axis: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.graph
            .edges()
            .iter()
            .position(|&e| e == key)
            .map(|pos| 2 * pos + axis)
    }

    /// Coefficient vector `u_k = Re Tr(H_k W)`.
    pub fn project(&self, w: &CMat) -> Vec<f64> {
        self.ops.iter().map(|op| op.overlap(w)).collect()
    }

    /// `Σ_k c_k H_k` as a dense matrix.
    pub fn assemble(&self, coeffs: &[f64]) -> CMat {
        let mut acc = CMat::zeros(self.dimension, self.dimension);
        self.accumulate(coeffs, &mut acc);
        acc
    }

    /// `acc += Σ_k c_k H_k` without reallocating.
    pub fn accumulate(&self, coeffs: &[f64], acc: &mut CMat) {
        debug_assert_eq!(coeffs.len(), self.ops.len());
        for (op, &c) in self.ops.iter().zip(coeffs) {
            op.accumulate(c, acc);
        }
    }

    /// Orthogonal projection `P(M)` onto the span of the basis.
    pub fn project_matrix(&self, m: &CMat) -> CMat {
        self.assemble(&self.project(m))
    }

    /// `|P(M)| = √(Σ_k Re Tr(H_k M)²)`.
    pub fn projected_norm(&self, m: &CMat) -> f64 {
        self.project(m).iter().map(|u| u * u).sum::<f64>().sqrt()
    }

    pub fn dense_ops(&self) -> Vec<CMat> {
        self.ops.iter().map(|op| op.dense(self.dimension)).collect()
    }
}

/// An orthonormal basis of the full traceless Hermitian space `i·su(d)`
/// (dimension `d² - 1`): every pair's x/y generators plus the diagonal
/// family. Used to flatten shooting parameters onto real coordinates.
pub fn su_basis(d: usize) -> Vec<ControlOp> {
    let mut ops = Vec::with_capacity(d * d - 1);
    for i in 0..d {
        for j in i + 1..d {
            ops.push(ControlOp::EdgeX { i, j });
            ops.push(ControlOp::EdgeY { i, j });
        }
    }
    for k in 1..d {
        let norm = (k as f64 * (k as f64 + 1.0)).sqrt();
        let mut weights = vec![0.0; d];
        for w in weights.iter_mut().take(k) {
            *w = 1.0 / norm;
        }
        weights[k] = -(k as f64) / norm;
        ops.push(ControlOp::Diagonal { weights });
    }
    ops
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, GraphKind};
    use crate::linalg::{hermiticity_defect, hs_dot};

    fn gram_defect(basis: &ControlBasis) -> f64 {
        let dense = basis.dense_ops();
        let mut worst = 0.0f64;
        for (a, ha) in dense.iter().enumerate() {
            for (b, hb) in dense.iter().enumerate() {
                // H_b Hermitian, so Re Tr(H_a H_b) = Re Tr(H_a H_b†).
                let g = hs_dot(ha, hb);
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    #[test]
    fn single_edge_basis_is_scaled_paulis() {
        let g = build_graph(GraphKind::Linear, 2, None).unwrap();
        let basis = build_control_basis(&g);
        assert_eq!(basis.len(), 2);
        let hx = basis.ops()[0].dense(2);
        let hy = basis.ops()[1].dense(2);
        assert!((hx[(0, 1)].re - SQRT_HALF).abs() < 1e-15);
        assert!((hy[(0, 1)].im + SQRT_HALF).abs() < 1e-15);
        assert!((hy[(1, 0)].im - SQRT_HALF).abs() < 1e-15);
    }

    #[test]
    fn linear_d4_has_six_controls() {
        let g = build_graph(GraphKind::Linear, 4, None).unwrap();
        assert_eq!(build_control_basis(&g).len(), 6);
    }

    #[test]
    fn gram_matrix_is_identity() {
        for (kind, d, sigma_z) in [
            (GraphKind::Linear, 5, false),
            (GraphKind::Complete, 4, true),
            (GraphKind::Grid, 9, true),
            (GraphKind::Linear, 2, true),
        ] {
            let g = build_graph(kind, d, None).unwrap().with_sigma_z(sigma_z);
            let basis = build_control_basis(&g);
            let expected = 2 * g.edges().len() + if sigma_z { d - 1 } else { 0 };
            assert_eq!(basis.len(), expected);
            assert!(
                gram_defect(&basis) < 1e-12,
                "{kind:?} d={d} gram defect {}",
                gram_defect(&basis)
            );
        }
    }

    #[test]
    fn ops_are_traceless_hermitian() {
        let g = build_graph(GraphKind::Complete, 5, None)
            .unwrap()
            .with_sigma_z(true);
        for op in build_control_basis(&g).ops() {
            let m = op.dense(5);
            assert!(hermiticity_defect(&m) < 1e-15);
            assert!(m.trace().norm() < 1e-12);
        }
    }

    #[test]
    fn sparse_overlap_matches_dense_trace() {
        let g = build_graph(GraphKind::Grid, 4, None).unwrap().with_sigma_z(true);
        let basis = build_control_basis(&g);
        let mut w = CMat::zeros(4, 4);
        let mut s = 5u64;
        for i in 0..4 {
            for j in 0..4 {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                let re = ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                let im = ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
                w[(i, j)] = Complex64::new(re, im);
            }
        }
        for op in basis.ops() {
            let dense = op.dense(4);
            let tr: Complex64 = (dense * &w).trace();
            assert!((op.overlap(&w) - tr.re).abs() < 1e-13);
            assert!((op.overlap_im(&w) - tr.im).abs() < 1e-13);
        }
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal() {
        let g = build_graph(GraphKind::Linear, 3, None).unwrap();
        let basis = build_control_basis(&g);
        // A diagonal traceless matrix is orthogonal to every x/y edge op.
        let mut m = CMat::zeros(3, 3);
        m[(0, 0)] = Complex64::new(1.0, 0.0);
        m[(2, 2)] = Complex64::new(-1.0, 0.0);
        assert!(basis.projected_norm(&m) < 1e-15);
        let p = basis.project_matrix(&m);
        assert!(p.norm() < 1e-15);
    }
}
