//! Initial-boundary-value solvers on irregularly shaped domains: the heat
//! equation and the Fisher reaction-diffusion equation, advanced in time by
//! the alternating-direction schemes of [`crate::adi`] with every implicit
//! one-dimensional sub-problem handled by the kernel-free boundary-integral
//! line solver of [`crate::kfbi`].
//!
//! The key structural property is that no finite-difference stencil ever
//! reads a node outside the domain: each sweep solves its cut lines through
//! the interface machinery, and the second-derivative fields the schemes
//! carry between steps are recovered algebraically from the Helmholtz
//! identity `d = kappa^2 u + rhs`, which at a solved node equals the
//! jump-corrected second difference of the line solution.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;

use crate::adi::{second_diff_field, SchemeKind};
use crate::error::{Error, Result};
use crate::geometry::{DomainIntersections, ImplicitDomain, LineIntersections};
use crate::grid::{error_norms, Axis, Grid3, GridLine, ScalarField3};
use crate::kfbi::{solve_dirichlet_line, Line1DProblem, LineFactorizations};
use crate::par::DisjointWriter;

/// Unit vector along the main diagonal, the default wavefront direction for
/// traveling-wave test problems.
pub const DIAGONAL_DIRECTION: [f64; 3] = [
    0.577_350_269_189_625_8,
    0.577_350_269_189_625_8,
    0.577_350_269_189_625_8,
];

/// Dirichlet problem for `u_t = a (u_xx + u_yy + u_zz) + f` posed on the
/// region where the implicit function is negative.
pub struct HeatProblem<'p> {
    /// Region of interest; must lie strictly inside the grid's box.
    pub domain: &'p ImplicitDomain,
    /// Diffusion coefficient `a > 0`.
    pub diffusivity: f64,
    /// Dirichlet data `g(x, t)` on the domain boundary.
    pub boundary: &'p (dyn Fn([f64; 3], f64) -> f64 + Sync),
    /// Optional explicit source `f(x, t)`.
    pub source: Option<&'p (dyn Fn([f64; 3], f64) -> f64 + Sync)>,
    /// Initial state `u(x, 0)`, evaluated on the whole box so that the
    /// scheme's startup second differences are well defined near the
    /// boundary.
    pub initial: &'p (dyn Fn([f64; 3]) -> f64 + Sync),
    /// Reference solution for final-time error norms, when known.
    pub exact: Option<&'p (dyn Fn([f64; 3], f64) -> f64 + Sync)>,
    /// End of the integration window.
    pub final_time: f64,
}

/// Dirichlet problem for the Fisher equation
/// `u_t = eps (u_xx + u_yy + u_zz) + (2/(3 eps)) u^2 (1 - u) + s` on an
/// implicit domain; `s` is an optional explicit source.
pub struct FisherProblem<'p> {
    /// Diffusion coefficient `eps > 0`.
    pub epsilon: f64,
    /// Unit wavefront direction of the associated traveling-wave solution;
    /// data closures are expected to be consistent with it.
    pub wave_direction: [f64; 3],
    /// Region of interest; must lie strictly inside the grid's box.
    pub domain: &'p ImplicitDomain,
    /// Dirichlet data `g(x, t)` on the domain boundary.
    pub boundary: &'p (dyn Fn([f64; 3], f64) -> f64 + Sync),
    /// Optional explicit source `s(x, t)` added to the reaction.
    pub source: Option<&'p (dyn Fn([f64; 3], f64) -> f64 + Sync)>,
    /// Initial state `u(x, 0)`, evaluated on the whole box.
    pub initial: &'p (dyn Fn([f64; 3]) -> f64 + Sync),
    /// Reference solution for final-time error norms, when known.
    pub exact: Option<&'p (dyn Fn([f64; 3], f64) -> f64 + Sync)>,
    /// End of the integration window.
    pub final_time: f64,
}

/// Outcome of a full time integration.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Field at the final time; inside nodes carry the solution, other nodes
    /// hold boundary-data extensions or untouched initial values.
    pub field: ScalarField3,
    /// Node mask marking the strict interior (inside on all three axis
    /// families); the set over which norms are taken.
    pub inside: Vec<bool>,
    /// Root-mean-square error over inside nodes against the reference
    /// solution, when one was provided.
    pub l2: Option<f64>,
    /// Maximum error over inside nodes against the reference solution.
    pub linf: Option<f64>,
    /// Time steps taken.
    pub steps: usize,
    /// Time reached (steps times the step size).
    pub final_time: f64,
    /// Largest boundary-integral iteration count any line solve needed.
    pub max_bie_iterations: usize,
    /// Largest mismatch between initial and boundary data at the interface
    /// at `t = 0`; large values flag an incompatible problem setup.
    pub compatibility_gap: f64,
}

/// Reaction term of the Fisher equation, `(2/(3 eps)) u^2 (1 - u)`.
#[inline]
pub fn fisher_reaction(u: f64, epsilon: f64) -> f64 {
    2.0 / (3.0 * epsilon) * u * u * (1.0 - u)
}

/// Traveling-wave profile `1 / (1 + exp((n.x - t)/(3 eps)))` moving along
/// the unit direction `n`.
pub fn fisher_wave_value(x: [f64; 3], t: f64, epsilon: f64, direction: [f64; 3]) -> f64 {
    let phase = direction[0] * x[0] + direction[1] * x[1] + direction[2] * x[2] - t;
    1.0 / (1.0 + (phase / (3.0 * epsilon)).exp())
}

/// Source that makes [`fisher_wave_value`] an exact solution of the Fisher
/// equation as written here: the wave's residual against the equation is
/// `(2/(9 eps)) u (1 - u)(1 - 2u)`, so adding exactly that as an explicit
/// source closes the balance.
pub fn fisher_wave_source(x: [f64; 3], t: f64, epsilon: f64, direction: [f64; 3]) -> f64 {
    let u = fisher_wave_value(x, t, epsilon, direction);
    2.0 / (9.0 * epsilon) * u * (1.0 - u) * (1.0 - 2.0 * u)
}

/// Solve the scalar implicit-reaction equation
/// `u - gamma (2/(3 eps)) u^2 (1 - u) = r` for one node: Newton from the
/// initial guess `r` to absolute residual `1e-12`, with a bisection fallback
/// on the bracket `[-0.5, 1.5]` when Newton wanders.
pub fn newton_pointwise_reaction(r: f64, gamma: f64, epsilon: f64) -> Result<f64> {
    const TOL: f64 = 1e-12;
    let c = 2.0 * gamma / (3.0 * epsilon);
    let g = |u: f64| u - c * u * u * (1.0 - u);
    let mut u = r;
    for _ in 0..50 {
        let res = g(u) - r;
        if res.abs() <= TOL {
            return Ok(u);
        }
        let slope = 1.0 - c * (2.0 * u - 3.0 * u * u);
        if slope.abs() < 1e-14 {
            break;
        }
        let next = u - res / slope;
        if !next.is_finite() {
            break;
        }
        u = next;
    }
    if (g(u) - r).abs() <= TOL {
        return Ok(u);
    }
    let (mut lo, mut hi) = (-0.5f64, 1.5f64);
    let (flo, fhi) = (g(lo) - r, g(hi) - r);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::ReactionRoot { rhs: r });
    }
    let mut fl = flo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = g(mid) - r;
        if fm.abs() <= TOL {
            return Ok(mid);
        }
        if fl.signum() == fm.signum() {
            lo = mid;
            fl = fm;
        } else {
            hi = mid;
        }
    }
    Err(Error::ReactionRoot { rhs: r })
}

/// Point on `line` at coordinate `t` along its axis.
fn line_point(grid: &Grid3, line: GridLine, t: f64) -> [f64; 3] {
    let (u, v) = line.axis.others();
    let mut p = [0.0; 3];
    p[line.axis.index()] = t;
    p[u.index()] = grid.coord(u, line.a);
    p[v.index()] = grid.coord(v, line.b);
    p
}

/// Nodes covered by some inside interval of the axis' line family.
fn axis_coverage(cuts: &DomainIntersections, grid: &Grid3, axis: Axis) -> Vec<bool> {
    let s = grid.nodes_per_axis();
    let mut covered = vec![false; grid.num_nodes()];
    for a in 0..s {
        for b in 0..s {
            let li = cuts.line(axis, a, b);
            if li.is_empty() {
                continue;
            }
            let (start, stride) = grid.line_start_stride(li.line);
            for iv in 0..li.inside_intervals.len() {
                if let Some((first, last)) = li.interval_nodes(grid, iv) {
                    for m in first..=last {
                        covered[start + m * stride] = true;
                    }
                }
            }
        }
    }
    covered
}

/// Strict interior mask: nodes inside on all three axis families at once, so
/// every sweep of a step solves for them.
fn strict_inside_mask(cuts: &DomainIntersections, grid: &Grid3) -> Vec<bool> {
    let mut mask = axis_coverage(cuts, grid, Axis::X);
    for axis in [Axis::Y, Axis::Z] {
        let cov = axis_coverage(cuts, grid, axis);
        for (m, c) in mask.iter_mut().zip(cov) {
            *m &= c;
        }
    }
    mask
}

/// Largest mismatch between initial and boundary data at `t = 0` over every
/// interface crossing of every line.
fn compatibility_gap(
    cuts: &DomainIntersections,
    grid: &Grid3,
    initial: &(dyn Fn([f64; 3]) -> f64 + Sync),
    boundary: &(dyn Fn([f64; 3], f64) -> f64 + Sync),
) -> f64 {
    let s = grid.nodes_per_axis();
    let mut gap = 0.0f64;
    for axis in Axis::ALL {
        for a in 0..s {
            for b in 0..s {
                let li = cuts.line(axis, a, b);
                for &c in &li.crossings {
                    let p = line_point(grid, li.line, c);
                    gap = gap.max((initial(p) - boundary(p, 0.0)).abs());
                }
            }
        }
    }
    gap
}

/// Number of equal steps covering the integration window, rejecting step
/// sizes that do not divide it.
fn step_count(final_time: f64, tau: f64) -> Result<usize> {
    if !(tau > 0.0) || !tau.is_finite() || !(final_time > 0.0) || !final_time.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need positive finite final time and step size, got T = {final_time}, tau = {tau}"
        )));
    }
    let steps = (final_time / tau).round();
    if steps < 1.0 || (steps * tau - final_time).abs() > 1e-9 * final_time.max(tau) {
        return Err(Error::InvalidArgument(format!(
            "step size {tau} does not evenly divide the final time {final_time}"
        )));
    }
    Ok(steps as usize)
}

/// Per-axis warm-start storage: the converged layer densities of the last
/// solve of every line, reused as the next step's initial iterate.
struct WarmStore {
    per_axis: [Vec<Vec<f64>>; 3],
}

impl WarmStore {
    fn new(grid: &Grid3) -> Self {
        let slots = grid.nodes_per_axis() * grid.nodes_per_axis();
        Self {
            per_axis: [vec![Vec::new(); slots], vec![Vec::new(); slots], vec![Vec::new(); slots]],
        }
    }

    fn axis_mut(&mut self, axis: Axis) -> &mut [Vec<f64>] {
        &mut self.per_axis[axis.index()]
    }
}

/// Shared read-only context of one time step's sweeps.
struct SweepContext<'c> {
    grid: &'c Grid3,
    domain: &'c ImplicitDomain,
    cuts: &'c DomainIntersections,
    kappa2: f64,
}

/// Result of one line's sub-problem.
struct LineOutcome {
    /// Values for the whole line: sub-problem solution at inside nodes,
    /// nearest-crossing boundary data extended constantly outside.
    field: Vec<f64>,
    /// Inclusive node ranges the solution covers, one per inside interval
    /// that holds at least one node.
    ranges: Vec<(usize, usize)>,
    /// Converged layer density to warm-start the next solve of this line.
    density: Option<Vec<f64>>,
    /// Boundary-integral iterations spent.
    iterations: usize,
}

/// Solve one line's Dirichlet sub-problem. Cut lines run through the
/// boundary-integral machinery with the outgoing-layer closure (their end
/// segments are always exterior); a line without crossings is degenerate
/// (domain covering the full line) and reduces to a plain tridiagonal sweep
/// with the box ends as Dirichlet points. Callers must filter out lines that
/// lie entirely outside the domain.
fn solve_line(
    grid: &Grid3,
    cuts: &LineIntersections,
    kappa2: f64,
    facts: &LineFactorizations,
    rhs_line: &[f64],
    g: impl Fn(f64) -> f64,
    warm: Option<&[f64]>,
) -> Result<LineOutcome> {
    let axis = cuts.line.axis;
    let n = grid.n();
    if cuts.crossings.is_empty() {
        let h = grid.h(axis);
        let a = 1.0 / (kappa2 * h * h);
        let g_lo = g(grid.coord(axis, 0));
        let g_hi = g(grid.coord(axis, n));
        let mut b = vec![0.0; n - 1];
        for (slot, m) in (1..n).enumerate() {
            b[slot] = -rhs_line[m] / kappa2;
        }
        b[0] += a * g_lo;
        b[n - 2] += a * g_hi;
        facts.dirichlet.solve_in_place(&mut b);
        let mut field = Vec::with_capacity(n + 1);
        field.push(g_lo);
        field.extend_from_slice(&b);
        field.push(g_hi);
        return Ok(LineOutcome {
            field,
            ranges: vec![(1, n - 1)],
            density: None,
            iterations: 0,
        });
    }

    let g_vals: Vec<f64> = cuts.crossings.iter().map(|&c| g(c)).collect();
    let problem = Line1DProblem { grid, cuts, kappa2, rhs: rhs_line, g: &g_vals };
    let sol = solve_dirichlet_line(&problem, &facts.radiating, warm)?;

    let mut ranges = Vec::with_capacity(cuts.inside_intervals.len());
    let mut inside = vec![false; n + 1];
    for iv in 0..cuts.inside_intervals.len() {
        if let Some((first, last)) = cuts.interval_nodes(grid, iv) {
            for m in first..=last {
                inside[m] = true;
            }
            ranges.push((first, last));
        }
    }

    // Outside nodes carry the nearest crossing's Dirichlet value: data on
    // the boundary's scale rather than the decaying extension potential.
    let mut field = sol.field;
    for (m, f) in field.iter_mut().enumerate() {
        if inside[m] {
            continue;
        }
        let x = grid.coord(axis, m);
        let mut best = 0usize;
        let mut dist = f64::INFINITY;
        for (c, &beta) in cuts.crossings.iter().enumerate() {
            let d = (x - beta).abs();
            if d < dist {
                dist = d;
                best = c;
            }
        }
        *f = g_vals[best];
    }

    Ok(LineOutcome {
        field,
        ranges,
        density: Some(sol.density.values),
        iterations: sol.iterations,
    })
}

/// One implicit sweep along `axis`: solve every line that meets the domain,
/// write the whole-line fields into `out`, recover the axis' second
/// derivative at the covered nodes from the Helmholtz identity
/// `d = kappa^2 u + rhs` into `d_out`, and refresh the warm-start densities.
/// Both `out` and `d_out` must arrive holding the values to keep at nodes
/// the sweep does not own. Returns the largest boundary-integral iteration
/// count spent on a line.
fn sweep_irregular(
    ctx: &SweepContext,
    axis: Axis,
    facts: &LineFactorizations,
    rhs: &(impl Fn(usize) -> f64 + Sync),
    g: &(impl Fn([f64; 3]) -> f64 + Sync),
    out: &mut ScalarField3,
    d_out: &mut ScalarField3,
    warm: &mut [Vec<f64>],
) -> Result<usize> {
    let grid = ctx.grid;
    let n = grid.n();
    let s = grid.nodes_per_axis();
    debug_assert_eq!(warm.len(), s * s);
    let writer = DisjointWriter::new(out.values_mut());
    let d_writer = DisjointWriter::new(d_out.values_mut());
    let failures: Mutex<Vec<(usize, usize, Error)>> = Mutex::new(Vec::new());
    let max_iters = AtomicUsize::new(0);

    warm.par_iter_mut().enumerate().for_each(|(slot, warm_slot)| {
        let (a, b) = (slot / s, slot % s);
        let cuts = ctx.cuts.line(axis, a, b);
        if cuts.crossings.is_empty() {
            // No crossings: fully outside (skip) or a domain covering the
            // entire line (degenerate, solved below).
            let mid = 0.5 * (grid.coord(axis, 0) + grid.coord(axis, n));
            if !ctx.domain.is_inside(line_point(grid, cuts.line, mid)) {
                return;
            }
        }
        let (start, stride) = grid.line_start_stride(cuts.line);
        let mut rhs_line = vec![0.0; n + 1];
        for (m, r) in rhs_line.iter_mut().enumerate() {
            *r = rhs(start + m * stride);
        }
        let g_line = |t: f64| g(line_point(grid, cuts.line, t));
        let warm_ref = (warm_slot.len() == cuts.crossings.len() && !warm_slot.is_empty())
            .then(|| warm_slot.as_slice());
        match solve_line(grid, cuts, ctx.kappa2, facts, &rhs_line, g_line, warm_ref) {
            Ok(outcome) => {
                max_iters.fetch_max(outcome.iterations, Ordering::Relaxed);
                // SAFETY: lines of one axis family touch disjoint node sets,
                // and this closure is the unique owner of line (a, b).
                unsafe {
                    for (m, &v) in outcome.field.iter().enumerate() {
                        writer.write(start + m * stride, v);
                    }
                    for &(first, last) in &outcome.ranges {
                        for m in first..=last {
                            let d = ctx.kappa2 * outcome.field[m] + rhs_line[m];
                            d_writer.write(start + m * stride, d);
                        }
                    }
                }
                if let Some(density) = outcome.density {
                    *warm_slot = density;
                }
            }
            Err(e) => failures.lock().unwrap().push((a, b, e)),
        }
    });

    let mut fails = failures.into_inner().unwrap();
    if !fails.is_empty() {
        fails.sort_by(|l, r| (l.0, l.1).cmp(&(r.0, r.1)));
        let count = fails.len();
        let (a, b, first) = fails.remove(0);
        return Err(Error::SweepFailed { count, axis: axis.name(), a, b, first: first.to_string() });
    }
    Ok(max_iters.into_inner())
}

/// Fields advanced by one time step: the new solution, the recovered
/// second-derivative caches, and the worst boundary-integral iteration count.
type StepOutcome = (ScalarField3, [ScalarField3; 3], usize);

/// One two-level alternating-direction step on an irregular domain. The
/// first sweep treats the x-derivative implicitly with everything else
/// explicit from the caches; the remaining sweeps exchange one explicit
/// derivative each for an implicit one. Boundary data is taken at the new
/// time level for every stage.
#[allow(clippy::too_many_arguments)]
fn dg_step_irregular(
    ctx: &SweepContext,
    diffusivity: f64,
    u: &ScalarField3,
    d_now: &[ScalarField3; 3],
    f_bar: Option<&ScalarField3>,
    g_next: &(impl Fn([f64; 3]) -> f64 + Sync),
    facts: &[LineFactorizations; 3],
    warm: &mut WarmStore,
) -> Result<StepOutcome> {
    let kappa2 = ctx.kappa2;
    let mut iters = 0usize;

    let mut ustar = u.clone();
    let mut dx_new = d_now[0].clone();
    {
        let uv = u.values();
        let (dx, dy, dz) = (d_now[0].values(), d_now[1].values(), d_now[2].values());
        let fb = f_bar.map(ScalarField3::values);
        let rhs = |flat: usize| {
            let mut v = -kappa2 * uv[flat] - dx[flat] - 2.0 * dy[flat] - 2.0 * dz[flat];
            if let Some(fb) = fb {
                v -= (2.0 / diffusivity) * fb[flat];
            }
            v
        };
        iters = iters.max(sweep_irregular(
            ctx,
            Axis::X,
            &facts[0],
            &rhs,
            g_next,
            &mut ustar,
            &mut dx_new,
            warm.axis_mut(Axis::X),
        )?);
    }

    let mut umid = ustar.clone();
    let mut dy_new = d_now[1].clone();
    {
        let us = ustar.values();
        let dy = d_now[1].values();
        let rhs = |flat: usize| -kappa2 * us[flat] + dy[flat];
        iters = iters.max(sweep_irregular(
            ctx,
            Axis::Y,
            &facts[1],
            &rhs,
            g_next,
            &mut umid,
            &mut dy_new,
            warm.axis_mut(Axis::Y),
        )?);
    }

    let mut unew = umid.clone();
    let mut dz_new = d_now[2].clone();
    {
        let um = umid.values();
        let dz = d_now[2].values();
        let rhs = |flat: usize| -kappa2 * um[flat] + dz[flat];
        iters = iters.max(sweep_irregular(
            ctx,
            Axis::Z,
            &facts[2],
            &rhs,
            g_next,
            &mut unew,
            &mut dz_new,
            warm.axis_mut(Axis::Z),
        )?);
    }

    Ok((unew, [dx_new, dy_new, dz_new], iters))
}

/// The three per-axis corrector sweeps of the three-level scheme: each one
/// exchanges the extrapolated explicit second derivative `2 d^now - d^prev`
/// for an implicit one, starting from the predictor output.
fn corrector_sweeps(
    ctx: &SweepContext,
    mut stage: ScalarField3,
    d_now: &[ScalarField3; 3],
    d_prev: &[ScalarField3; 3],
    g_next: &(impl Fn([f64; 3]) -> f64 + Sync),
    facts: &[LineFactorizations; 3],
    warm: &mut WarmStore,
) -> Result<StepOutcome> {
    let kappa2 = ctx.kappa2;
    let mut d_new = [d_now[0].clone(), d_now[1].clone(), d_now[2].clone()];
    let mut iters = 0usize;
    for axis in Axis::ALL {
        let ai = axis.index();
        let mut next = stage.clone();
        {
            let sv = stage.values();
            let dn = d_now[ai].values();
            let dp = d_prev[ai].values();
            let rhs = |flat: usize| -kappa2 * sv[flat] + 2.0 * dn[flat] - dp[flat];
            iters = iters.max(sweep_irregular(
                ctx,
                axis,
                &facts[ai],
                &rhs,
                g_next,
                &mut next,
                &mut d_new[ai],
                warm.axis_mut(axis),
            )?);
        }
        stage = next;
    }
    Ok((stage, d_new, iters))
}

/// One three-level step for the heat equation: explicit predictor with
/// extrapolated second derivatives at the strictly inside nodes, then the
/// per-axis corrector sweeps.
#[allow(clippy::too_many_arguments)]
fn mdg_step_irregular(
    ctx: &SweepContext,
    diffusivity: f64,
    tau: f64,
    u: &ScalarField3,
    d_now: &[ScalarField3; 3],
    d_prev: &[ScalarField3; 3],
    f_bar: Option<&ScalarField3>,
    g_next: &(impl Fn([f64; 3]) -> f64 + Sync),
    facts: &[LineFactorizations; 3],
    warm: &mut WarmStore,
    mask: &[bool],
) -> Result<StepOutcome> {
    let mut stage = u.clone();
    {
        let uv = u.values();
        let fb = f_bar.map(ScalarField3::values);
        let out = stage.values_mut();
        for (flat, keep) in mask.iter().enumerate() {
            if !keep {
                continue;
            }
            let sum_now: f64 = d_now.iter().map(|d| d.values()[flat]).sum();
            let sum_prev: f64 = d_prev.iter().map(|d| d.values()[flat]).sum();
            let mut v = uv[flat] + tau * diffusivity * (1.5 * sum_now - 0.5 * sum_prev);
            if let Some(fb) = fb {
                v += tau * fb[flat];
            }
            out[flat] = v;
        }
    }
    corrector_sweeps(ctx, stage, d_now, d_prev, g_next, facts, warm)
}

/// Second differences of globally sampled node data along `axis` at every
/// node of the box, switching to second-order one-sided five-point stencils
/// on the two faces normal to `axis`. The multi-level starter needs the
/// discrete Laplacian of smooth data everywhere, including the face nodes
/// that the interior-only recurrences never touch.
fn second_diff_everywhere(grid: &Grid3, u: &ScalarField3, axis: Axis) -> ScalarField3 {
    let n = grid.n();
    debug_assert!(n >= 4, "one-sided face stencils need at least five nodes");
    let inv_h2 = 1.0 / (grid.h(axis) * grid.h(axis));
    let mut d = ScalarField3::zeros(grid);
    let src = u.values();
    {
        let writer = DisjointWriter::new(d.values_mut());
        let lines: Vec<GridLine> = grid.all_lines(axis).collect();
        lines.par_iter().for_each(|line| {
            let (start, stride) = grid.line_start_stride(*line);
            let at = |m: usize| src[start + m * stride];
            let one_sided = |m0: usize, step: isize| {
                let v = |k: isize| at((m0 as isize + step * k) as usize);
                (35.0 * v(0) - 104.0 * v(1) + 114.0 * v(2) - 56.0 * v(3) + 11.0 * v(4))
                    * inv_h2
                    / 12.0
            };
            for m in 0..=n {
                let v = if m == 0 {
                    one_sided(0, 1)
                } else if m == n {
                    one_sided(n, -1)
                } else {
                    (at(m - 1) - 2.0 * at(m) + at(m + 1)) * inv_h2
                };
                // SAFETY: lines of one family partition the nodes; this
                // line owns `flat`.
                unsafe { writer.write(start + m * stride, v) };
            }
        });
    }
    d
}

/// Reconstruct the back level the three-level scheme needs at startup: a
/// backward Taylor step `u(-tau) = u0 - tau u_t(0) + O(tau^2)` with the time
/// derivative read off the equation itself (`u_t = diffusion * lap(u) +
/// extra`), then central second differences of the reconstructed field.
///
/// The reconstruction error is a smooth `O(tau^2)` field, so the history it
/// produces is as accurate as sampling the true solution at `t = -tau`; a
/// lower-order bootstrap step would instead leave an `O(tau)` imprint on the
/// extrapolation history that the scheme carries forward.
fn taylor_back_history(
    grid: &Grid3,
    u0: &ScalarField3,
    diffusion: f64,
    tau: f64,
    extra: &(impl Fn(usize, [f64; 3]) -> f64 + Sync),
) -> [ScalarField3; 3] {
    let lap = [
        second_diff_everywhere(grid, u0, Axis::X),
        second_diff_everywhere(grid, u0, Axis::Y),
        second_diff_everywhere(grid, u0, Axis::Z),
    ];
    let mut behind = u0.clone();
    {
        let (lx, ly, lz) = (lap[0].values(), lap[1].values(), lap[2].values());
        let out = behind.values_mut();
        let n = grid.n();
        let m = n + 1;
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=n {
                    let flat = (i * m + j) * m + k;
                    let x = [
                        grid.coord(Axis::X, i),
                        grid.coord(Axis::Y, j),
                        grid.coord(Axis::Z, k),
                    ];
                    let rate = diffusion * (lx[flat] + ly[flat] + lz[flat]) + extra(flat, x);
                    out[flat] -= tau * rate;
                }
            }
        }
    }
    [
        second_diff_field(grid, &behind, Axis::X),
        second_diff_field(grid, &behind, Axis::Y),
        second_diff_field(grid, &behind, Axis::Z),
    ]
}

/// Advance the heat problem from `t = 0` to its final time and report
/// final-time norms against the reference solution when one is known.
///
/// The boundary-corrected two-level scheme relies on back-traced face data
/// that only exists on a fitted box, so it is rejected here; the three-level
/// scheme reconstructs its back level at startup from the equation's own
/// time derivative at `t = 0`.
pub fn solve_heat(
    p: &HeatProblem,
    grid: &Grid3,
    scheme: SchemeKind,
    tau: f64,
) -> Result<SolveReport> {
    if !(p.diffusivity > 0.0) || !p.diffusivity.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "diffusivity must be positive and finite, got {}",
            p.diffusivity
        )));
    }
    if scheme == SchemeKind::DgCorrected {
        return Err(Error::CorrectionUnsupported { domain: p.domain.name().to_string() });
    }
    let steps = step_count(p.final_time, tau)?;

    let cuts = DomainIntersections::compute(p.domain, grid)?;
    let mask = strict_inside_mask(&cuts, grid);
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let gap = compatibility_gap(&cuts, grid, p.initial, p.boundary);

    let kappa2 = 2.0 / (p.diffusivity * tau);
    let facts = [
        LineFactorizations::new(grid.n(), grid.h(Axis::X), kappa2)?,
        LineFactorizations::new(grid.n(), grid.h(Axis::Y), kappa2)?,
        LineFactorizations::new(grid.n(), grid.h(Axis::Z), kappa2)?,
    ];
    let ctx = SweepContext { grid, domain: p.domain, cuts: &cuts, kappa2 };
    let mut warm = WarmStore::new(grid);

    let mut u = ScalarField3::from_fn(grid, |x| (p.initial)(x));
    let mut d_now = [
        second_diff_field(grid, &u, Axis::X),
        second_diff_field(grid, &u, Axis::Y),
        second_diff_field(grid, &u, Axis::Z),
    ];
    let mut d_prev: Option<[ScalarField3; 3]> = match scheme {
        SchemeKind::Mdg => {
            let extra =
                |_flat: usize, x: [f64; 3]| p.source.map_or(0.0, |f| f(x, 0.0));
            Some(taylor_back_history(grid, &u, p.diffusivity, tau, &extra))
        }
        _ => None,
    };
    let mut max_bie = 0usize;

    for step in 0..steps {
        let t = step as f64 * tau;
        let f_bar = p
            .source
            .map(|f| ScalarField3::from_fn(grid, |x| 0.5 * (f(x, t) + f(x, t + tau))));
        let g_next = |x: [f64; 3]| (p.boundary)(x, t + tau);
        let (unew, d_new, iters) = match (scheme, d_prev.as_ref()) {
            (SchemeKind::Mdg, Some(dp)) => mdg_step_irregular(
                &ctx,
                p.diffusivity,
                tau,
                &u,
                &d_now,
                dp,
                f_bar.as_ref(),
                &g_next,
                &facts,
                &mut warm,
                &mask,
            )?,
            _ => dg_step_irregular(
                &ctx,
                p.diffusivity,
                &u,
                &d_now,
                f_bar.as_ref(),
                &g_next,
                &facts,
                &mut warm,
            )?,
        };
        if let Some(node) = unew.first_non_finite() {
            return Err(Error::NonFinite { node, time: t + tau });
        }
        max_bie = max_bie.max(iters);
        d_prev = Some(std::mem::replace(&mut d_now, d_new));
        u = unew;
    }

    let reached = steps as f64 * tau;
    let (l2, linf) = match p.exact {
        Some(exact) => {
            let reference = ScalarField3::from_fn(grid, |x| exact(x, reached));
            let (rms, max) = error_norms(&u, &reference, &mask)?;
            (Some(rms), Some(max))
        }
        None => (None, None),
    };
    Ok(SolveReport {
        field: u,
        inside: mask,
        l2,
        linf,
        steps,
        final_time: reached,
        max_bie_iterations: max_bie,
        compatibility_gap: gap,
    })
}

/// Trapezoidal reaction average for the two-level scheme: predict the new
/// level pointwise with explicit diffusion and implicit reaction, then
/// average the reaction over the two levels, folding in the explicit source.
fn fisher_two_level_source(
    p: &FisherProblem,
    grid: &Grid3,
    u: &ScalarField3,
    d_now: &[ScalarField3; 3],
    s_bar: Option<&ScalarField3>,
    mask: &[bool],
    tau: f64,
) -> Result<ScalarField3> {
    let eps = p.epsilon;
    let gamma = 0.5 * tau;
    let mut f_bar = ScalarField3::zeros(grid);
    let uv = u.values();
    let (dx, dy, dz) = (d_now[0].values(), d_now[1].values(), d_now[2].values());
    let sb = s_bar.map(ScalarField3::values);
    let out = f_bar.values_mut();
    for (flat, keep) in mask.iter().enumerate() {
        if !keep {
            continue;
        }
        let reaction_now = fisher_reaction(uv[flat], eps);
        let mut r = uv[flat]
            + tau * eps * (dx[flat] + dy[flat] + dz[flat])
            + gamma * reaction_now;
        if let Some(sb) = sb {
            r += tau * sb[flat];
        }
        let predicted = newton_pointwise_reaction(r, gamma, eps)?;
        let mut v = 0.5 * (fisher_reaction(predicted, eps) + reaction_now);
        if let Some(sb) = sb {
            v += sb[flat];
        }
        out[flat] = v;
    }
    Ok(f_bar)
}

/// Advance the Fisher problem from `t = 0` to its final time. The reaction
/// is handled pointwise inside each step's predictor; the diffusion sweeps
/// are identical to the heat solver's with the diffusion `eps`.
pub fn solve_fisher(
    p: &FisherProblem,
    grid: &Grid3,
    scheme: SchemeKind,
    tau: f64,
) -> Result<SolveReport> {
    if !(p.epsilon > 0.0) || !p.epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "diffusion must be positive and finite, got {}",
            p.epsilon
        )));
    }
    let norm = p.wave_direction.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "wavefront direction must be a unit vector, |n| = {norm}"
        )));
    }
    if scheme == SchemeKind::DgCorrected {
        return Err(Error::CorrectionUnsupported { domain: p.domain.name().to_string() });
    }
    let steps = step_count(p.final_time, tau)?;
    let eps = p.epsilon;

    let cuts = DomainIntersections::compute(p.domain, grid)?;
    let mask = strict_inside_mask(&cuts, grid);
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let gap = compatibility_gap(&cuts, grid, p.initial, p.boundary);

    let kappa2 = 2.0 / (eps * tau);
    let facts = [
        LineFactorizations::new(grid.n(), grid.h(Axis::X), kappa2)?,
        LineFactorizations::new(grid.n(), grid.h(Axis::Y), kappa2)?,
        LineFactorizations::new(grid.n(), grid.h(Axis::Z), kappa2)?,
    ];
    let ctx = SweepContext { grid, domain: p.domain, cuts: &cuts, kappa2 };
    let mut warm = WarmStore::new(grid);

    let mut u = ScalarField3::from_fn(grid, |x| (p.initial)(x));
    let mut d_now = [
        second_diff_field(grid, &u, Axis::X),
        second_diff_field(grid, &u, Axis::Y),
        second_diff_field(grid, &u, Axis::Z),
    ];
    let mut d_prev: Option<[ScalarField3; 3]> = match scheme {
        SchemeKind::Mdg => {
            let uv = u.values();
            let extra = |flat: usize, x: [f64; 3]| {
                fisher_reaction(uv[flat], eps) + p.source.map_or(0.0, |s| s(x, 0.0))
            };
            Some(taylor_back_history(grid, &u, eps, tau, &extra))
        }
        _ => None,
    };
    let mut max_bie = 0usize;

    for step in 0..steps {
        let t = step as f64 * tau;
        let s_bar = p
            .source
            .map(|s| ScalarField3::from_fn(grid, |x| 0.5 * (s(x, t) + s(x, t + tau))));
        let g_next = |x: [f64; 3]| (p.boundary)(x, t + tau);
        let (unew, d_new, iters) = match (scheme, d_prev.as_ref()) {
            (SchemeKind::Mdg, Some(dp)) => {
                // Predictor: implicit-reaction update with extrapolated
                // second derivatives, solved pointwise at inside nodes.
                let gamma = 0.5 * tau;
                let mut stage = u.clone();
                {
                    let uv = u.values();
                    let sb = s_bar.as_ref().map(|f| f.values());
                    let out = stage.values_mut();
                    for (flat, keep) in mask.iter().enumerate() {
                        if !keep {
                            continue;
                        }
                        let sum_now: f64 =
                            d_now.iter().map(|d| d.values()[flat]).sum();
                        let sum_prev: f64 = dp.iter().map(|d| d.values()[flat]).sum();
                        let mut r = uv[flat]
                            + gamma * fisher_reaction(uv[flat], eps)
                            + tau * eps * (1.5 * sum_now - 0.5 * sum_prev);
                        if let Some(sb) = sb {
                            r += tau * sb[flat];
                        }
                        out[flat] = newton_pointwise_reaction(r, gamma, eps)?;
                    }
                }
                corrector_sweeps(&ctx, stage, &d_now, dp, &g_next, &facts, &mut warm)?
            }
            _ => {
                let f_bar =
                    fisher_two_level_source(p, grid, &u, &d_now, s_bar.as_ref(), &mask, tau)?;
                dg_step_irregular(
                    &ctx,
                    eps,
                    &u,
                    &d_now,
                    Some(&f_bar),
                    &g_next,
                    &facts,
                    &mut warm,
                )?
            }
        };
        if let Some(node) = unew.first_non_finite() {
            return Err(Error::NonFinite { node, time: t + tau });
        }
        max_bie = max_bie.max(iters);
        d_prev = Some(std::mem::replace(&mut d_now, d_new));
        u = unew;
    }

    let reached = steps as f64 * tau;
    let (l2, linf) = match p.exact {
        Some(exact) => {
            let reference = ScalarField3::from_fn(grid, |x| exact(x, reached));
            let (rms, max) = error_norms(&u, &reference, &mask)?;
            (Some(rms), Some(max))
        }
        None => (None, None),
    };
    Ok(SolveReport {
        field: u,
        inside: mask,
        l2,
        linf,
        steps,
        final_time: reached,
        max_bie_iterations: max_bie,
        compatibility_gap: gap,
    })
}
