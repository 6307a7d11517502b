//! Parameter spaces, transforms, the embedded network and the UDE
//! right-hand sides of the synthetic scenarios.

pub mod mlp;
pub mod problem;
pub mod space;
pub mod transform;

pub use mlp::{MlpSpec, NetInit};
pub use problem::{
    beta_pulse, beta_waves, compose_ude_rhs, rhs_quadratic, rhs_seir, ModelOptions, NetRole,
    ReferenceSystem, Scenario, UdeProblem, UdeRhs,
};
pub use space::{ParamSpace, Segment, SegmentRole};
pub use transform::Transform;
