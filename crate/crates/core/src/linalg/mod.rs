//! Sparse storage, the iterative solver used for every time step, and a dense
//! factorization kept as a verification oracle.

mod dense;
mod iterative;
mod sparse;

pub use dense::{dense_rank, solve_dense_oracle, DENSE_LIMIT};
pub use iterative::{reverse_cuthill_mckee, solve_iterative, solve_iterative_from, solve_preconditioned, Ilu, SolveStats, SolverOptions};
pub use sparse::{dot, norm2, SparseMatrix};
