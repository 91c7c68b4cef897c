//! Forces, Jacobians and the implicit-Euler time stepper.

mod bend;
mod external;
mod sim;
mod solver;
mod stretch;
mod system;

pub use bend::{bend_forces, bend_query};
pub use external::{gravity_force, handle_force, DEFAULT_HANDLE_STIFFNESS, GRAVITY};
pub use sim::{SimRun, SimState, SimTape, Simulator, StepInfo, TapeRecord};
pub use solver::{
    grad_wrt_matrix, relative_residual, solve_backward, solve_system, CscMatrix, CscPattern, SparseLu, RESIDUAL_TOL,
};
pub use stretch::{face_strain, stiffness_query, stretch_forces, StrainDescriptor};
pub use system::{
    assemble_system, bend_element, gather, internal_forces, stretch_element, AssembledSystem, BlockSlot, SimParams,
    SystemLayout,
};
