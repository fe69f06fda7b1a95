//! Geometry of sparse attention at desk scale: exact and entropic-regularized
//! projection onto the convex hull of a key dictionary, KKT support-gap
//! certificates, numerical verification of the face-stability bounds, and a
//! paged-KV sparse-decode simulator with IO-count accounting.

pub mod dict;
pub mod entropic;
pub mod face;
pub mod instances;
pub mod paged;
pub mod projection;
pub mod report;
pub mod rng;
pub mod verify;

pub use dict::{Dictionary, SimplexWeights};
pub use entropic::{
    solve_entropic, EntropicConfig, EntropicSolution, FwCertificate, SolverKind, StepRule,
};
pub use face::{tangent_basis, FaceGeometry};
pub use projection::{
    brute_force_projection, face_gap, project_onto_hull, support_function, FaceGap,
    ProjectionSolution,
};
