//! Target gate library: QFT, cyclic shift X, the diagonal T generalization,
//! SUMX on a two-qudit split, seeded Haar-random unitaries, and gates loaded
//! from matrix files.

use std::f64::consts::TAU;
use std::path::PathBuf;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{read_matrix, special_unitarize, unitarity_defect, CMat};

/// Declarative gate description, serializable inside experiment configs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GateSpec {
    Qft { d: usize },
    X { d: usize },
    T { d: usize },
    Sumx { d1: usize, d2: usize },
    Haar { d: usize, seed: u64 },
    File { path: PathBuf },
}

impl GateSpec {
    pub fn dimension(&self) -> Result<usize> {
        match self {
            GateSpec::Qft { d } | GateSpec::X { d } | GateSpec::T { d } | GateSpec::Haar { d, .. } => {
                Ok(*d)
            }
            GateSpec::Sumx { d1, d2 } => Ok(d1 * d2),
            GateSpec::File { path } => {
                let m = read_matrix(path)?;
                Ok(m.nrows())
            }
        }
    }

    /// Build the target matrix (not yet special-unitarized).
    pub fn build(&self) -> Result<CMat> {
        match self {
            GateSpec::Qft { d } => {
                if *d < 1 {
                    return Err(Error::InvalidGateSpec("qft needs d >= 1".into()));
                }
                Ok(qft(*d))
            }
            GateSpec::X { d } => {
                if *d < 2 {
                    return Err(Error::InvalidGateSpec("x needs d >= 2".into()));
                }
                Ok(shift_x(*d))
            }
            GateSpec::T { d } => {
                if *d < 2 {
                    return Err(Error::InvalidGateSpec("t needs d >= 2".into()));
                }
                Ok(t_gate(*d))
            }
            GateSpec::Sumx { d1, d2 } => {
                if *d1 < 2 || *d2 < 2 {
                    return Err(Error::InvalidGateSpec("sumx needs d1, d2 >= 2".into()));
                }
                Ok(sumx(*d1, *d2))
            }
            GateSpec::Haar { d, seed } => {
                if *d < 2 {
                    return Err(Error::InvalidGateSpec("haar needs d >= 2".into()));
                }
                Ok(haar_random(*d, *seed))
            }
            GateSpec::File { path } => {
                let m = read_matrix(path)?;
                let defect = unitarity_defect(&m);
                if defect > 1e-10 {
                    return Err(Error::NotUnitary(defect));
                }
                Ok(m)
            }
        }
    }

    /// Build and rescale into SU(d), the form the solvers consume.
    pub fn build_special(&self) -> Result<CMat> {
        special_unitarize(&self.build()?)
    }
}

/// Quantum Fourier transform: entry `(k, x) = exp(2πi·xk/d)/√d`.
pub fn qft(d: usize) -> CMat {
    let norm = 1.0 / (d as f64).sqrt();
    CMat::from_fn(d, d, |k, x| {
        Complex64::from_polar(norm, TAU * (k * x) as f64 / d as f64)
    })
}

/// Cyclic shift `|x⟩ -> |x+1 mod d⟩`.
pub fn shift_x(d: usize) -> CMat {
    CMat::from_fn(d, d, |r, c| {
        if r == (c + 1) % d {
            Complex64::ONE
        } else {
            Complex64::ZERO
        }
    })
}

/// Diagonal phase gate `diag(exp(2πi·k/(4d)))`; the qubit T gate at d = 2.
pub fn t_gate(d: usize) -> CMat {
    CMat::from_fn(d, d, |r, c| {
        if r == c {
            Complex64::from_polar(1.0, TAU * r as f64 / (4.0 * d as f64))
        } else {
            Complex64::ZERO
        }
    })
}

/// Controlled shift `|i, j⟩ -> |i, (i + j) mod d2⟩` on dimension `d1·d2`;
/// reduces to CNOT for `d1 = d2 = 2`.
pub fn sumx(d1: usize, d2: usize) -> CMat {
    let d = d1 * d2;
    let mut m = CMat::zeros(d, d);
    for i in 0..d1 {
        for j in 0..d2 {
            let col = i * d2 + j;
            let row = i * d2 + (i + j) % d2;
            m[(row, col)] = Complex64::ONE;
        }
    }
    m
}

/// Haar-distributed unitary: complex Gaussian matrix, QR orthonormalization,
/// diagonal phases of R made real positive. Deterministic in the seed.
pub fn haar_random(d: usize, seed: u64) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = CMat::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            g[(r, c)] = Complex64::new(re, im);
        }
    }
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..d {
        let rkk = r[(k, k)];
        let phase = if rkk.norm() > 0.0 {
            rkk / rkk.norm()
        } else {
            Complex64::ONE
        };
        for row in 0..d {
            q[(row, k)] *= phase;
        }
    }
    q
}
