//! Relaxed second-order-cone operational planning problem.
//!
//! Duals are reported per hour: every multiplier of a period row is divided
//! by `Δt`, so the root balance duals equal the substation prices. Balance
//! duals are the marginal cost of an extra withdrawal; inequality duals are
//! nonnegative.

mod assemble;
mod backend;
mod solve;

pub use assemble::{
    assemble, HorizonEnd, LinRow, PeriodVars, ProblemInstance, RowIndex, RowKind, RowScaling,
    SocBlock, VarIndex, DEFAULT_EXTENSION,
};
pub use backend::{
    backend_by_name, ClarabelBackend, Cone, ConeProgram, ConicBackend, ConicSolution, ConicStatus,
    SolverOptions,
};
pub use solve::{
    exactness_report, solve, BindingEntry, CostBreakdown, DualSolution, ExactnessReport,
    SolveReport, SolveStatus, SolverInfo, TransformerState, BINDING_SLACK_TOL,
    DEFAULT_SOC_GAP_THRESHOLD,
};
