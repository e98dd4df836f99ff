//! uodkit: underwater object-detection toolkit.
//!
//! A desk-scale library pairing a deterministic underwater image enhancement
//! pipeline with the detector-side building blocks it supports: dual-pooling
//! sequential attention, a composite GIoU/focal detection loss with a
//! task-aligned assigner, detection metrics, and a small synthetic-data
//! detector used to exercise everything end to end. Every differentiable
//! operation ships an explicit backward function validated against central
//! finite differences.

pub mod dpsa;
pub mod enhance;
pub mod eval;
pub mod fgiou;
pub mod gradcheck;
pub mod tensor;
pub mod toydet;
