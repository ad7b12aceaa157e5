//! Inverse solvers: ridge emitter solves, alternating minimization, variable
//! projection, localization and TV emitter recovery.

mod altmin;
mod localize;
mod tikhonov;
mod tv;

pub use altmin::{
    alternating_minimize, alternating_minimize_with, effective_transport, emitter_step, gradients,
    loss_at, BackgroundMode, BackgroundShape, Gradients, Inversion, InversionState, Relaxation,
    SolverOptions, TraceRow, LAMBDA_FLOOR,
};
pub use localize::{
    candidate_lattice, localize, projector_score, union_transport, vp_objective_occupancy,
    Localization, PROJECTOR_RIDGE,
};
pub use tikhonov::{projection_matrix, tikhonov_solve, transport_gram, vp_objective, RidgeSystem};
pub use tv::{total_variation, tv_reconstruct, TvChannel, TvOptions, TV_EPSILON};
