//! Error taxonomy shared by all solver stages.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failures surfaced by the numerical kernels.
///
/// Every variant carries enough context to locate the failing grid object
/// (line indices, crossing coordinates) without re-running the solver.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// Grid construction rejected the requested resolution or box extents.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// A norm was requested over an empty node set.
    #[error("error norms over an empty mask")]
    EmptyMask,

    /// Convergence order from non-positive error values is undefined.
    #[error("convergence order needs positive errors, got ({coarse:e}, {fine:e})")]
    NonPositiveError {
        /// Error on the coarse grid.
        coarse: f64,
        /// Error on the fine grid.
        fine: f64,
    },

    /// Thomas elimination hit a pivot below the breakdown threshold.
    #[error("tridiagonal breakdown at row {row}: |pivot| = {pivot:e}")]
    TridiagBreakdown {
        /// Row at which elimination stopped.
        row: usize,
        /// Magnitude of the offending pivot.
        pivot: f64,
    },

    /// A grid line crossed the zero set an odd number of times, which cannot
    /// happen for a domain strictly inside the box; the grid under-resolves
    /// the geometry.
    #[error("line {axis}({a},{b}) has {count} crossings; refine the grid")]
    GeometryResolution {
        /// Sweep axis name.
        axis: &'static str,
        /// First perpendicular index.
        a: usize,
        /// Second perpendicular index.
        b: usize,
        /// Number of crossings found.
        count: usize,
    },

    /// Not enough grid nodes around a crossing to build an interpolation or
    /// extrapolation stencil.
    #[error("insufficient stencil room near crossing at {location:e}")]
    StencilRoom {
        /// Crossing coordinate along the line.
        location: f64,
    },

    /// The boundary-integral iteration did not reach the requested residual.
    #[error("boundary-integral solve stalled: residual {residual:e} after {iters} iterations")]
    BieStalled {
        /// Relative residual at the final iterate.
        residual: f64,
        /// Iterations performed.
        iters: usize,
    },

    /// Three-level stepping was requested without a completed bootstrap step.
    #[error("three-level scheme needs a bootstrap step to populate history")]
    BootstrapRequired,

    /// Intermediate boundary corrections exist only for a fitted box.
    #[error("boundary corrections are defined on the fitted box only, not `{domain}`")]
    CorrectionUnsupported {
        /// Offending domain name.
        domain: String,
    },

    /// Per-line failures collected during a sweep.
    #[error("{count} line solves failed, first at {axis}({a},{b}): {first}")]
    SweepFailed {
        /// Number of failed lines.
        count: usize,
        /// Sweep axis name of the first failure.
        axis: &'static str,
        /// First perpendicular index of the first failure.
        a: usize,
        /// Second perpendicular index of the first failure.
        b: usize,
        /// Rendered first error.
        first: String,
    },

    /// Pointwise Newton iteration for the reaction term failed to bracket or
    /// converge to a root.
    #[error("reaction solve found no admissible root for rhs {rhs:e}")]
    ReactionRoot {
        /// Right-hand side that produced the failure.
        rhs: f64,
    },

    /// A non-finite value appeared in a solution field.
    #[error("non-finite value at node {node} (t = {time:e})")]
    NonFinite {
        /// Flat node index.
        node: usize,
        /// Simulation time at detection.
        time: f64,
    },

    /// Configuration or argument validation failed.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
