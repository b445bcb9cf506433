//! Pulse synthesis for qudits on configurable energy-level coupling graphs.
//!
//! Three ways to turn a target unitary into control pulses, sharing one
//! execution-time convention (durations in units of the inverse amplitude
//! bound Ω⁻¹):
//!
//! * [`grd`] — exact Givens rotation decomposition into sequential
//!   edge-local rotations plus diagonal phase cleanup.
//! * [`grape`] — piecewise-constant multichromatic pulses optimized against
//!   the gate infidelity with exact gradients, then amplitude-rescaled.
//! * [`magicarp`] — a shooting parametrization: smooth feedback controls
//!   `u_k(s) = Re Tr(U†H_kU M)` determined by a traceless Hermitian matrix
//!   `M`, optimized by a regularized natural gradient descent with
//!   matrix-free Krylov solves.
//!
//! [`graph`], [`basis`], [`propagate`], [`gates`] and [`schedule`] provide
//! the shared problem setting: coupling graphs, orthonormal control
//! Hamiltonians, propagators, target gates and pulse records.

pub mod basis;
pub mod error;
pub mod gates;
pub mod graph;
pub mod grape;
pub mod grd;
pub mod krylov;
pub mod linalg;
pub mod magicarp;
pub mod opt;
pub mod propagate;
pub mod schedule;

pub use basis::{build_control_basis, ControlBasis, ControlOp};
pub use error::{Error, Result};
pub use gates::GateSpec;
pub use grape::{grape_cost_grad, grape_optimize, rescale_execution_time, GrapeConfig};
pub use graph::{build_graph, CouplingGraph, GraphKind};
pub use linalg::{
    expm_hermitian, infidelity, special_unitarize, unitarity_defect, CMat,
};
pub use magicarp::{MagicarpConfig, MagicarpResult, ShootingParameter, SolveStatus};
pub use propagate::{
    conservation_report, feedback_endpoint, propagate_feedback, propagate_piecewise,
    FeedbackScheme, Trajectory,
};
pub use schedule::{Provenance, PulseSchedule, Segment};
