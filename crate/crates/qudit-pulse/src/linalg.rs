//! Dense complex linear algebra helpers shared by every solver: Hermitian
//! exponentials, unitarity checks, the global-phase-invariant infidelity,
//! and the plain-text matrix file format.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;

pub const I1: Complex64 = Complex64::new(0.0, 1.0);

/// Frobenius distance from Hermitian symmetry, `max |A - A†|`.
pub fn hermiticity_defect(a: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in i..a.ncols() {
            let diff = (a[(i, j)] - a[(j, i)].conj()).norm();
            worst = worst.max(diff);
        }
    }
    worst
}

/// Frobenius norm of `U†U - I`.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let d = u.nrows();
    let mut g = u.adjoint() * u;
    for k in 0..d {
        g[(k, k)] -= Complex64::ONE;
    }
    g.norm()
}

/// `(A + A†)/2`, squashing roundoff off Hermitian symmetry.
pub fn hermitize(a: &CMat) -> CMat {
    let ad = a.adjoint();
    (a + ad) * Complex64::new(0.5, 0.0)
}

/// Hermitian part with the trace removed.
pub fn traceless_hermitize(a: &CMat) -> CMat {
    let d = a.nrows();
    let mut h = hermitize(a);
    let shift = h.trace() / d as f64;
    for k in 0..d {
        h[(k, k)] -= shift;
    }
    h
}

/// Real Hilbert-Schmidt inner product `Re Tr(a b†)`.
pub fn hs_dot(a: &CMat, b: &CMat) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        s += x.re * y.re + x.im * y.im;
    }
    s
}

/// Frobenius norm under the real Hilbert-Schmidt inner product.
pub fn hs_norm(a: &CMat) -> f64 {
    hs_dot(a, a).sqrt()
}

/// Eigendecomposition-based `exp(-i t H)` for Hermitian `H` (unchecked).
///
/// Exactly unitary up to the accuracy of the eigensolver, which is what the
/// propagators rely on for long products.
pub fn expm_herm_unchecked(h: &CMat, t: f64) -> CMat {
    let d = h.nrows();
    let eig = h.clone().symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    // scaled = V · diag(exp(-i t λ))
    for k in 0..d {
        let phase = Complex64::from_polar(1.0, -t * eig.eigenvalues[k]);
        for r in 0..d {
            scaled[(r, k)] *= phase;
        }
    }
    scaled * eig.eigenvectors.adjoint()
}

/// `exp(-i t H)` for a Hermitian generator, rejecting non-Hermitian input.
pub fn expm_hermitian(h: &CMat, t: f64) -> Result<CMat> {
    let defect = hermiticity_defect(h);
    if defect > 1e-10 {
        return Err(Error::NotHermitian(defect));
    }
    Ok(expm_herm_unchecked(&hermitize(h), t))
}

/// Gate infidelity `1 - |Tr(U_f† U)| / d`, invariant under global phases.
pub fn infidelity(u: &CMat, target: &CMat) -> Result<f64> {
    if u.nrows() != target.nrows() {
        return Err(Error::DimensionMismatch(u.nrows(), target.nrows()));
    }
    let d = u.nrows() as f64;
    let mut tr = Complex64::ZERO;
    for i in 0..u.nrows() {
        for k in 0..u.nrows() {
            tr += target[(k, i)].conj() * u[(k, i)];
        }
    }
    // Clamp tiny negative values produced by roundoff at infidelity zero.
    Ok((1.0 - tr.norm() / d).max(0.0))
}

/// Rescale a unitary into SU(d) with the principal d-th root of its
/// determinant; the result differs from the input by a global phase only.
pub fn special_unitarize(u: &CMat) -> Result<CMat> {
    let defect = unitarity_defect(u);
    if defect > 1e-10 {
        return Err(Error::NotUnitary(defect));
    }
    let det = u.determinant();
    let d = u.nrows() as f64;
    let phase = Complex64::from_polar(1.0, -det.arg() / d);
    Ok(u * phase)
}

/// Gradient of the infidelity with respect to `U` under the real
/// Hilbert-Schmidt pairing: `∇ℓ(U) = -Tr(U_f†U)/(d·|Tr(U_f†U)|) · U_f`.
///
/// Returns zero at the (measure-zero) non-smooth point `Tr(U_f†U) = 0`.
pub fn infidelity_gradient(u: &CMat, target: &CMat) -> CMat {
    let d = u.nrows() as f64;
    let mut tr = Complex64::ZERO;
    for i in 0..u.nrows() {
        for k in 0..u.nrows() {
            tr += target[(k, i)].conj() * u[(k, i)];
        }
    }
    let modulus = tr.norm();
    if modulus < 1e-300 {
        return CMat::zeros(u.nrows(), u.ncols());
    }
    target * (-tr / (d * modulus))
}

/// Write a matrix in the shared text format: header `d <rows> <cols>`, then
/// row-major `re imag` pairs at 17 significant digits.
pub fn write_matrix(path: &Path, m: &CMat) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "d {} {}", m.nrows(), m.ncols()).unwrap();
    for r in 0..m.nrows() {
        let mut line = String::new();
        for c in 0..m.ncols() {
            if c > 0 {
                line.push(' ');
            }
            write!(line, "{:.16e} {:.16e}", m[(r, c)].re, m[(r, c)].im).unwrap();
        }
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<CMat> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix(&text)
}

pub fn parse_matrix(text: &str) -> Result<CMat> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::MatrixFormat("empty file".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("d") {
        return Err(Error::MatrixFormat("header must start with 'd'".into()));
    }
    let rows: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MatrixFormat("bad row count".into()))?;
    let cols: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MatrixFormat("bad column count".into()))?;
    let mut m = CMat::zeros(rows, cols);
    for (r, line) in lines.enumerate() {
        if r >= rows {
            return Err(Error::MatrixFormat("too many rows".into()));
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::MatrixFormat(format!("bad number '{tok}'")))
            })
            .collect::<Result<_>>()?;
        if nums.len() != 2 * cols {
            return Err(Error::MatrixFormat(format!(
                "row {r} has {} numbers, expected {}",
                nums.len(),
                2 * cols
            )));
        }
        for c in 0..cols {
            m[(r, c)] = Complex64::new(nums[2 * c], nums[2 * c + 1]);
        }
    }
    Ok(m)
}
