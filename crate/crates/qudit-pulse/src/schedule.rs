//! Time-ordered control records. A schedule is a list of segments, each
//! holding a per-transition amplitude/phase pair (and bare amplitudes for the
//! optional z controls) over a duration in Ω⁻¹ units.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::ControlBasis;
use crate::error::{Error, Result};
use crate::linalg::{expm_herm_unchecked, CMat};

/// Which method produced a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Grd,
    Grape,
    Magicarp,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Grd => "grd",
            Provenance::Grape => "grape",
            Provenance::Magicarp => "magicarp",
        }
    }
}

/// One constant-control interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Duration in Ω⁻¹ units.
    pub duration: f64,
    /// `(𝔲_l, θ_l)` per graph edge, in the basis edge order.
    pub edge_amplitudes: Vec<(f64, f64)>,
    /// Amplitudes of the diagonal z controls, empty without z controls.
    pub z_amplitudes: Vec<f64>,
}

impl Segment {
    /// Split a flat control vector `u ∈ R^m` into per-edge (amp, phase)
    /// pairs plus z amplitudes.
    pub fn from_control_vector(u: &[f64], n_edges: usize, duration: f64) -> Self {
        let mut edge_amplitudes = Vec::with_capacity(n_edges);
        for l in 0..n_edges {
            let x = u[2 * l];
            let y = u[2 * l + 1];
            let amp = (x * x + y * y).sqrt();
            let phase = if amp > 0.0 { y.atan2(x) } else { 0.0 };
            edge_amplitudes.push((amp, phase));
        }
        let z_amplitudes = u[2 * n_edges..].to_vec();
        Segment {
            duration,
            edge_amplitudes,
            z_amplitudes,
        }
    }

    /// Flat control vector in the basis ordering.
    pub fn control_vector(&self) -> Vec<f64> {
        let mut u = Vec::with_capacity(2 * self.edge_amplitudes.len() + self.z_amplitudes.len());
        for &(amp, phase) in &self.edge_amplitudes {
            u.push(amp * phase.cos());
            u.push(amp * phase.sin());
        }
        u.extend_from_slice(&self.z_amplitudes);
        u
    }

    /// Euclidean norm of the full control vector.
    pub fn total_amplitude(&self) -> f64 {
        let edges: f64 = self.edge_amplitudes.iter().map(|(a, _)| a * a).sum();
        let z: f64 = self.z_amplitudes.iter().map(|a| a * a).sum();
        (edges + z).sqrt()
    }
}

/// A full pulse schedule with its execution-time accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSchedule {
    pub segments: Vec<Segment>,
    pub provenance: Provenance,
    /// Total execution time in Ω⁻¹ units; equals the sum of durations.
    pub total_time: f64,
}

impl PulseSchedule {
    pub fn new(segments: Vec<Segment>, provenance: Provenance) -> Self {
        let total_time = segments.iter().map(|s| s.duration).sum();
        PulseSchedule {
            segments,
            provenance,
            total_time,
        }
    }

    /// Ordered product of segment exponentials (later segments on the left).
    pub fn propagate(&self, basis: &ControlBasis) -> Result<CMat> {
        let d = basis.dimension();
        let n_edges = basis.edge_count();
        let mut u = CMat::identity(d, d);
        let mut h = CMat::zeros(d, d);
        for seg in &self.segments {
            if seg.edge_amplitudes.len() != n_edges
                || seg.z_amplitudes.len() != basis.len() - 2 * n_edges
            {
                return Err(Error::ControlShapeMismatch {
                    got: 2 * seg.edge_amplitudes.len() + seg.z_amplitudes.len(),
                    expected: basis.len(),
                });
            }
            if seg.duration == 0.0 {
                continue;
            }
            h.fill(Complex64::ZERO);
            basis.accumulate(&seg.control_vector(), &mut h);
            u = expm_herm_unchecked(&h, seg.duration) * u;
        }
        Ok(u)
    }

    /// Largest jump between adjacent segments across all control
    /// coordinates; the smoothness metric contrasting the methods.
    pub fn max_adjacent_jump(&self) -> f64 {
        let mut worst = 0.0f64;
        for pair in self.segments.windows(2) {
            let a = pair[0].control_vector();
            let b = pair[1].control_vector();
            for (x, y) in a.iter().zip(b.iter()) {
                worst = worst.max((x - y).abs());
            }
        }
        worst
    }

    /// Total variation of each control coordinate over the schedule.
    pub fn total_variation(&self) -> Vec<f64> {
        if self.segments.is_empty() {
            return Vec::new();
        }
        let m = self.segments[0].control_vector().len();
        let mut tv = vec![0.0; m];
        for pair in self.segments.windows(2) {
            let a = pair[0].control_vector();
            let b = pair[1].control_vector();
            for k in 0..m {
                tv[k] += (b[k] - a[k]).abs();
            }
        }
        tv
    }

    /// CSV dump: `segment_index,duration`, then amplitude/phase per edge and
    /// one column per z control.
    pub fn write_csv(&self, path: &Path, basis: &ControlBasis) -> Result<()> {
        let mut out = String::new();
        out.push_str("segment_index,duration");
        for &(i, j) in basis.graph().edges() {
            write!(out, ",amp_{i}_{j},phase_{i}_{j}").unwrap();
        }
        for k in 0..basis.len() - 2 * basis.edge_count() {
            write!(out, ",z_{}", k + 1).unwrap();
        }
        out.push('\n');
        for (idx, seg) in self.segments.iter().enumerate() {
            write!(out, "{idx},{}", seg.duration).unwrap();
            for &(amp, phase) in &seg.edge_amplitudes {
                write!(out, ",{amp},{phase}").unwrap();
            }
            for z in &seg.z_amplitudes {
                write!(out, ",{z}").unwrap();
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// JSON sidecar with provenance and accounting metadata.
    pub fn write_json_sidecar(
        &self,
        path: &Path,
        basis_description: &str,
        infidelity: f64,
    ) -> Result<()> {
        let doc = SidecarDoc {
            provenance: self.provenance,
            basis: basis_description.to_string(),
            total_time: self.total_time,
            infidelity,
            segments: self.segments.len(),
        };
        let json = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::MatrixFormat(format!("sidecar serialization: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SidecarDoc {
    provenance: Provenance,
    basis: String,
    total_time: f64,
    infidelity: f64,
    segments: usize,
}
