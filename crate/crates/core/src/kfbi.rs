//! One-dimensional interface solves on unfitted grid lines.
//!
//! Each ADI sub-step reduces to a Helmholtz two-point problem
//! `u'' - kappa^2 u = f` per grid line. When the domain boundary cuts the
//! line, the solution is represented as a volume potential plus a
//! double-layer potential; both are evaluated *kernel-free* by solving the
//! same tridiagonal system with jump-corrected stencils, and the layer
//! density is fixed by a small boundary-integral equation solved matrix-free
//! with GMRES. The [`green`] submodule carries closed-form reference
//! solutions used by the validation suite.
//!
//! Jump orientation: all public jump values are interior-minus-exterior,
//! where interior means the `phi < 0` side. Internally they are converted to
//! left-minus-right along the line.

use crate::error::{Error, Result};
use crate::geometry::LineIntersections;
use crate::grid::Grid3;
use crate::tridiag::TridiagFactorization;

/// Relative residual at which the boundary-integral iteration stops.
pub const BIE_TOL: f64 = 1e-10;
/// Iteration cap per line solve; the integral operator is a compact
/// perturbation of identity, so hitting this means something is wrong.
pub const BIE_MAX_ITERS: usize = 50;

/// Prescribed discontinuities of a line field at one crossing, as
/// interior-minus-exterior limits of the value and its derivatives.
///
/// The third and fourth derivative jumps follow from the differentiated
/// equation, `[y^(k)] = kappa^2 [y^(k-2)] + [F^(k-2)]`; carrying them keeps
/// the corrected stencils accurate when `kappa h` is only moderately small,
/// which is exactly the regime the time-step scaling `kappa^2 ~ 1/tau`
/// produces on coarse grids.
#[derive(Debug, Clone, Copy)]
pub struct JumpSet {
    /// Crossing coordinate along the line.
    pub location: f64,
    /// `[v]`.
    pub jump0: f64,
    /// `[v']`.
    pub jump1: f64,
    /// `[v'']`.
    pub jump2: f64,
    /// `[v''']`.
    pub jump3: f64,
    /// `[v'''']`.
    pub jump4: f64,
}

impl JumpSet {
    pub fn zero(location: f64) -> Self {
        Self { location, jump0: 0.0, jump1: 0.0, jump2: 0.0, jump3: 0.0, jump4: 0.0 }
    }
}

/// A [`JumpSet`] plus the side information needed to apply it on a line.
#[derive(Debug, Clone, Copy)]
pub struct OrientedJumps {
    pub jumps: JumpSet,
    /// True when the interior (`phi < 0`) lies to the right of the crossing,
    /// i.e. the crossing is a left endpoint of an inside interval.
    pub interior_is_right: bool,
}

/// Layer density values, one per crossing of the line.
#[derive(Debug, Clone, Default)]
pub struct Density1D {
    pub values: Vec<f64>,
}

/// One Helmholtz Dirichlet sub-problem on a cut line: `u'' - kappa^2 u = f`
/// inside the intervals, `u = g` at the crossings.
pub struct Line1DProblem<'a> {
    pub grid: &'a Grid3,
    pub cuts: &'a LineIntersections,
    /// Inverse-time scale `kappa^2 = 2/(a tau) > 0`.
    pub kappa2: f64,
    /// Source samples at all line nodes (only inside nodes are used).
    pub rhs: &'a [f64],
    /// Dirichlet value at each crossing, in crossing order.
    pub g: &'a [f64],
}

/// Result of a full line solve.
#[derive(Debug, Clone)]
pub struct LineSolution {
    /// Potential field on the whole line; only inside nodes carry the
    /// sub-problem solution, outside nodes hold the extension field.
    pub field: Vec<f64>,
    /// Converged layer density (warm start for the next time step).
    pub density: Density1D,
    /// Boundary-integral iterations spent.
    pub iterations: usize,
}

#[inline]
fn node_x(lo: f64, h: f64, m: usize) -> f64 {
    lo + h * m as f64
}

/// Left-minus-right Taylor polynomial of one crossing's jumps.
#[derive(Debug, Clone, Copy)]
struct JumpPoly {
    beta: f64,
    /// Cell index `p` with `x_p <= beta < x_{p+1}`; nodes `m <= p` count as
    /// the left side (a node exactly on the crossing belongs to the left).
    cell: usize,
    j0: f64,
    j1: f64,
    j2: f64,
    j3: f64,
    j4: f64,
}

impl JumpPoly {
    /// Left-branch value minus right-branch value at displacement `d` from
    /// the crossing.
    #[inline]
    fn eval(&self, d: f64) -> f64 {
        self.j0
            + d * (self.j1
                + d * (0.5 * self.j2 + d * (self.j3 / 6.0 + d * self.j4 / 24.0)))
    }
}

fn jump_poly(oj: &OrientedJumps, lo: f64, h: f64, n: usize) -> Result<JumpPoly> {
    let beta = oj.jumps.location;
    if !beta.is_finite() || beta < lo || beta > node_x(lo, h, n) {
        return Err(Error::InvalidArgument(format!(
            "crossing {beta} outside line [{lo}, {}]",
            node_x(lo, h, n)
        )));
    }
    let mut cell = (((beta - lo) / h).floor() as i64).clamp(0, n as i64 - 1) as usize;
    while cell > 0 && node_x(lo, h, cell) > beta {
        cell -= 1;
    }
    while cell < n - 1 && node_x(lo, h, cell + 1) <= beta {
        cell += 1;
    }
    // Interior-minus-exterior converts to left-minus-right with a sign flip
    // when the interior lies to the right.
    let sigma = if oj.interior_is_right { -1.0 } else { 1.0 };
    Ok(JumpPoly {
        beta,
        cell,
        j0: sigma * oj.jumps.jump0,
        j1: sigma * oj.jumps.jump1,
        j2: sigma * oj.jumps.jump2,
        j3: sigma * oj.jumps.jump3,
        j4: sigma * oj.jumps.jump4,
    })
}

/// Right-hand-side corrections restoring second-order consistency of the
/// three-point stencil across one crossing, for the equation written as
/// `(delta^2/h^2 - kappa^2) v = f + C`. Returns the two affected rows as
/// `(node, correction)` pairs; all other rows are untouched.
pub fn correction_terms(
    oj: &OrientedJumps,
    lo: f64,
    h: f64,
    n: usize,
) -> Result<[(usize, f64); 2]> {
    let poly = jump_poly(oj, lo, h, n)?;
    let p = poly.cell;
    let h2 = h * h;
    // Left row p: its stencil value at x_{p+1} is a right-branch sample; the
    // raw operator misses the left-branch extension by J(x_{p+1} - beta).
    let left = (p, -poly.eval(node_x(lo, h, p + 1) - poly.beta) / h2);
    // Right row p+1 symmetrically, with negative displacement.
    let right = (p + 1, poly.eval(node_x(lo, h, p) - poly.beta) / h2);
    Ok([left, right])
}

/// Accumulate [`correction_terms`] of every crossing into a full-line vector.
pub fn assemble_corrections(
    ojs: &[OrientedJumps],
    lo: f64,
    h: f64,
    n: usize,
) -> Result<Vec<f64>> {
    let mut c = vec![0.0; n + 1];
    for oj in ojs {
        for (node, value) in correction_terms(oj, lo, h, n)? {
            c[node] += value;
        }
    }
    Ok(c)
}

/// Factorization of the scaled Helmholtz line matrix with zero Dirichlet
/// ends: rows `[-A, 1 + 2A, -A]`, `A = 1/(kappa^2 h^2)`, over the `n - 1`
/// interior nodes. One factorization serves every line of an axis family.
pub fn helmholtz_line_factorization(
    n: usize,
    h: f64,
    kappa2: f64,
) -> Result<TridiagFactorization> {
    if !(kappa2 > 0.0) || !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "helmholtz line needs kappa2 > 0 and h > 0, got {kappa2}, {h}"
        )));
    }
    let a = 1.0 / (kappa2 * h * h);
    let m = n - 1;
    TridiagFactorization::factorize(&vec![-a; m - 1], &vec![1.0 + 2.0 * a; m], &vec![-a; m - 1])
}

/// As [`helmholtz_line_factorization`] but with mirror (homogeneous Neumann)
/// ends: all `n + 1` nodes are unknowns and the first/last rows see their
/// ghost neighbor reflected, giving off-diagonal `-2A` there.
pub fn helmholtz_line_factorization_neumann(
    n: usize,
    h: f64,
    kappa2: f64,
) -> Result<TridiagFactorization> {
    if !(kappa2 > 0.0) || !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "helmholtz line needs kappa2 > 0 and h > 0, got {kappa2}, {h}"
        )));
    }
    let a = 1.0 / (kappa2 * h * h);
    let m = n + 1;
    let mut lower = vec![-a; m - 1];
    let mut upper = vec![-a; m - 1];
    upper[0] = -2.0 * a;
    lower[m - 2] = -2.0 * a;
    TridiagFactorization::factorize(&lower, &vec![1.0 + 2.0 * a; m], &upper)
}

/// Per-cell decay ratio of the discrete boundary layer: the root in `(0, 1)`
/// of `r^2 - (2 + kappa^2 h^2) r + 1 = 0`, so `r^m` solves the homogeneous
/// three-point Helmholtz recurrence exactly. Discrete analogue of
/// `exp(-kappa h)`; written on the stable branch to avoid cancellation.
pub fn layer_decay_root(kappa2: f64, h: f64) -> f64 {
    let s_char = 2.0 + kappa2 * h * h;
    2.0 / (s_char + (s_char * s_char - 4.0).sqrt())
}

/// As [`helmholtz_line_factorization`] but closing the line with outgoing
/// layers instead of pinned zeros: the eliminated face rows are
/// `v_0 = r v_1` and `v_n = r v_{n-1}` with `r` from [`layer_decay_root`],
/// which the outward-decaying mode satisfies exactly.
///
/// This is the right closure for zero-extended fields on cut lines, whose
/// end segments always lie outside the physical domain: there the field is a
/// pure decaying layer, and pinning it to zero at a face that sits within a
/// few layer widths of a crossing forces a spurious reflected mode of
/// relative size `r^(gap/h)` onto the nearby traces. The matrix stays
/// strictly diagonally dominant since `r < 1`.
pub fn helmholtz_line_factorization_radiating(
    n: usize,
    h: f64,
    kappa2: f64,
) -> Result<TridiagFactorization> {
    if !(kappa2 > 0.0) || !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "helmholtz line needs kappa2 > 0 and h > 0, got {kappa2}, {h}"
        )));
    }
    let a = 1.0 / (kappa2 * h * h);
    let r = layer_decay_root(kappa2, h);
    let m = n - 1;
    let mut diag = vec![1.0 + 2.0 * a; m];
    diag[0] = 1.0 + (2.0 - r) * a;
    diag[m - 1] = 1.0 + (2.0 - r) * a;
    TridiagFactorization::factorize(&vec![-a; m - 1], &diag, &vec![-a; m - 1])
}

/// The two prefactored line operators one axis family of sweeps needs:
/// `dirichlet` for lines the interface never cuts, where the physical face
/// values enter the right-hand side, and `radiating` for cut lines, whose
/// end segments lie in the zero-extension region and must let the boundary
/// layer leave the box unreflected.
#[derive(Debug)]
pub struct LineFactorizations {
    pub dirichlet: TridiagFactorization,
    pub radiating: TridiagFactorization,
}

impl LineFactorizations {
    pub fn new(n: usize, h: f64, kappa2: f64) -> Result<Self> {
        Ok(Self {
            dirichlet: helmholtz_line_factorization(n, h, kappa2)?,
            radiating: helmholtz_line_factorization_radiating(n, h, kappa2)?,
        })
    }
}

/// Solve `(delta^2/h^2 - kappa^2) v = f_tilde + C(jumps)` on the line,
/// closed at both ends by outgoing-layer rows `v_0 = r v_1` and
/// `v_n = r v_{n-1}` (bridged with the jump polynomial of any crossing in
/// the end cell, so the relation ties together same-branch values). `fact`
/// must be the matching [`helmholtz_line_factorization_radiating`].
pub fn solve_interface_problem(
    n: usize,
    lo: f64,
    h: f64,
    kappa2: f64,
    f_tilde: &[f64],
    ojs: &[OrientedJumps],
    fact: &TridiagFactorization,
) -> Result<Vec<f64>> {
    debug_assert_eq!(f_tilde.len(), n + 1);
    debug_assert_eq!(fact.size(), n - 1);
    let mut corrections = assemble_corrections(ojs, lo, h, n)?;
    let r = layer_decay_root(kappa2, h);
    // A crossing in an end cell separates the face node from its neighbor;
    // the decay relation holds along one branch, so the far-branch sample is
    // shifted by the jump polynomial before the relation is applied.
    let mut left_bridge = 0.0;
    let mut right_bridge = 0.0;
    for oj in ojs {
        let poly = jump_poly(oj, lo, h, n)?;
        if poly.cell == 0 {
            left_bridge += poly.eval(node_x(lo, h, 1) - poly.beta);
        }
        if poly.cell == n - 1 {
            right_bridge += poly.eval(node_x(lo, h, n - 1) - poly.beta);
        }
    }
    // Eliminating v_0 = r (v_1 + left_bridge) from row 1 (and mirrored at
    // row n-1) moves the bridge onto the right-hand side; the r v_1 part is
    // what the radiating factorization's modified diagonal absorbs.
    let h2 = h * h;
    corrections[1] -= r * left_bridge / h2;
    corrections[n - 1] += r * right_bridge / h2;
    // Scaled by -1/kappa^2 so the matrix is the factored [-A, 1+2A, -A].
    let inv = -1.0 / kappa2;
    let mut rhs: Vec<f64> = (1..n).map(|m| inv * (f_tilde[m] + corrections[m])).collect();
    fact.solve_in_place(&mut rhs);
    let mut v = vec![0.0; n + 1];
    v[1..n].copy_from_slice(&rhs);
    v[0] = r * (v[1] + left_bridge);
    v[n] = r * (v[n - 1] - right_bridge);
    Ok(v)
}

/// Mirror-end variant of [`solve_interface_problem`]: all `n + 1` nodes are
/// unknowns, `v' = 0` at both line ends via reflected ghosts.
pub fn solve_interface_problem_neumann(
    n: usize,
    lo: f64,
    h: f64,
    kappa2: f64,
    f_tilde: &[f64],
    ojs: &[OrientedJumps],
    fact: &TridiagFactorization,
) -> Result<Vec<f64>> {
    debug_assert_eq!(f_tilde.len(), n + 1);
    debug_assert_eq!(fact.size(), n + 1);
    let corrections = assemble_corrections(ojs, lo, h, n)?;
    let inv = -1.0 / kappa2;
    let mut rhs: Vec<f64> =
        (0..=n).map(|m| inv * (f_tilde[m] + corrections[m])).collect();
    fact.solve_in_place(&mut rhs);
    Ok(rhs)
}

/// Which one-sided limit of a potential field to take at a crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceSide {
    Interior,
    Exterior,
    Average,
}

/// One-sided (or averaged) limit at crossing `which` of a line field
/// produced by the corrected Helmholtz solves.
///
/// Away from its source such a field is smooth plus boundary layers
/// `exp(±kappa x)`; near the crossing it also carries the particular
/// response to the local source. Polynomial interpolation misreads the
/// layer modes badly once `kappa h` is only moderately small, so the trace
/// instead (1) subtracts the discretely-exact particular solution of the
/// local quadratic source model, (2) fits the two layer modes through the
/// two nearest same-side nodes, and (3) evaluates the fit at the crossing.
/// Stencil values on the far side of any crossing are first corrected with
/// that crossing's jump polynomial, so narrow intervals are legal.
///
/// `source_quad` holds the interior-side limits `(f, f', f'')` of the field
/// equation's right-hand side at this crossing; pass zeros for source-free
/// fields. The exterior side always uses the zero extension.
#[allow(clippy::too_many_arguments)]
pub fn trace_potential(
    field: &[f64],
    ojs: &[OrientedJumps],
    which: usize,
    side: TraceSide,
    lo: f64,
    h: f64,
    n: usize,
    kappa2: f64,
    source_quad: [f64; 3],
) -> Result<f64> {
    let polys: Vec<JumpPoly> =
        ojs.iter().map(|oj| jump_poly(oj, lo, h, n)).collect::<Result<_>>()?;
    trace_with_polys(
        field,
        &polys,
        which,
        side,
        ojs[which].interior_is_right,
        lo,
        h,
        n,
        kappa2,
        source_quad,
    )
}

#[allow(clippy::too_many_arguments)]
fn trace_with_polys(
    field: &[f64],
    polys: &[JumpPoly],
    which: usize,
    side: TraceSide,
    interior_is_right: bool,
    lo: f64,
    h: f64,
    n: usize,
    kappa2: f64,
    source_quad: [f64; 3],
) -> Result<f64> {
    let from_right = |right: bool| {
        // The zero extension leaves the exterior side source-free.
        let fq = if right == interior_is_right { source_quad } else { [0.0; 3] };
        one_sided_limit(field, polys, which, right, lo, h, n, kappa2, fq)
    };
    match side {
        TraceSide::Average => Ok(0.5 * (from_right(false)? + from_right(true)?)),
        TraceSide::Interior => from_right(interior_is_right),
        TraceSide::Exterior => from_right(!interior_is_right),
    }
}

#[allow(clippy::too_many_arguments)]
fn one_sided_limit(
    field: &[f64],
    polys: &[JumpPoly],
    which: usize,
    right: bool,
    lo: f64,
    h: f64,
    n: usize,
    kappa2: f64,
    fq: [f64; 3],
) -> Result<f64> {
    if n < 3 {
        return Err(Error::StencilRoom { location: polys[which].beta });
    }
    let target = &polys[which];
    let beta = target.beta;
    // Discretely exact particular solution of the quadratic source model
    // f_q(x) = f + f'(x-beta) + f''(x-beta)^2/2: the three-point second
    // difference reproduces quadratics, so p below satisfies the interior
    // rows without truncation.
    let p = |x: f64| {
        let d = x - beta;
        -(fq[0] + d * (fq[1] + 0.5 * d * fq[2]) + fq[2] / kappa2) / kappa2
    };
    // Same-side value of the represented branch at node m: far-side samples
    // are bridged across every intervening crossing's jump polynomial.
    let branch_value = |m: usize| {
        let x = node_x(lo, h, m);
        let mut v = field[m];
        for (k, q) in polys.iter().enumerate() {
            let node_right = m > q.cell;
            let target_right = if k == which {
                right
            } else if beta != q.beta {
                beta > q.beta
            } else {
                which > k
            };
            if node_right != target_right {
                let bridge = q.eval(x - q.beta);
                v += if node_right { bridge } else { -bridge };
            }
        }
        v
    };
    // Continuum decay per cell. The nodal values approximate the continuum
    // field, whose boundary layers are exp(±kappa d); fitting the discrete
    // recurrence root instead would misread those layers by a relative
    // O((kappa h)^3), an error on the scale of the boundary data rather
    // than of the density correction.
    let root = (-kappa2.sqrt() * h).exp();
    debug_assert!((0.0..1.0).contains(&root), "layer root {root} out of range");
    // Distances (in cells) of the two nearest same-side nodes.
    let m1 = if right { target.cell + 1 } else { target.cell };
    let (m1, m2) = if right { (m1, m1 + 1) } else { (m1, m1.wrapping_sub(1)) };
    let s1 = (node_x(lo, h, m1) - beta).abs() / h;
    let y1 = branch_value(m1) - p(node_x(lo, h, m1));
    let have_m2 = if right { m2 <= n } else { m2 < n };
    let y0 = if have_m2 {
        let s2 = s1 + 1.0;
        let y2 = branch_value(m2) - p(node_x(lo, h, m2));
        // Two-mode fit y(s) = c+ r^s + c- r^{-s}, evaluated at s = 0.
        let sigma = |s: f64| root.powf(-s) - root.powf(s);
        (sigma(s2) * y1 - sigma(s1) * y2) / sigma(1.0)
    } else {
        // Single node available (crossing in the outermost cell): continue
        // the branch with the mode that grows toward the crossing.
        y1 * root.powf(-s1)
    };
    Ok(y0 + p(beta))
}

/// Double-layer jumps for density `phi` at one crossing: the potential jumps
/// by `phi`, its slope is continuous, and the homogeneous equation forces
/// `[w''] = kappa^2 [w]` and `[w''''] = kappa^4 [w]` for consistency of the
/// correction stencils.
fn double_layer_jumps(location: f64, phi: f64, kappa2: f64, interior_is_right: bool) -> OrientedJumps {
    OrientedJumps {
        jumps: JumpSet {
            location,
            jump0: phi,
            jump1: 0.0,
            jump2: kappa2 * phi,
            jump3: 0.0,
            jump4: kappa2 * kappa2 * phi,
        },
        interior_is_right,
    }
}

/// Solve the boundary-integral equation `phi/2 + W[phi] = b` on one line,
/// where `W[phi]` is the averaged trace of the double-layer field, evaluated
/// matrix-free (each application costs one tridiagonal solve plus traces).
///
/// `locations` are the sorted crossings (interval endpoints in pairs), `b`
/// the assembled right-hand side `g - (volume-potential trace)`, `fact` the
/// matching [`helmholtz_line_factorization_radiating`], `warm` an optional
/// initial density (previous time step). Returns the density and the
/// iteration count.
pub fn solve_bie(
    n: usize,
    lo: f64,
    h: f64,
    kappa2: f64,
    locations: &[f64],
    b: &[f64],
    fact: &TridiagFactorization,
    warm: Option<&[f64]>,
) -> Result<(Density1D, usize)> {
    debug_assert_eq!(locations.len(), b.len());
    let k = locations.len();
    if k == 0 {
        return Ok((Density1D::default(), 0));
    }
    let zeros = vec![0.0; n + 1];
    let mut apply = |phi: &[f64]| -> Result<Vec<f64>> {
        let ojs: Vec<OrientedJumps> = locations
            .iter()
            .zip(phi)
            .enumerate()
            .map(|(c, (&x, &p))| double_layer_jumps(x, p, kappa2, c % 2 == 0))
            .collect();
        let field = solve_interface_problem(n, lo, h, kappa2, &zeros, &ojs, fact)?;
        let polys: Vec<JumpPoly> =
            ojs.iter().map(|oj| jump_poly(oj, lo, h, n)).collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(k);
        for c in 0..k {
            let avg = trace_with_polys(
                &field,
                &polys,
                c,
                TraceSide::Average,
                true,
                lo,
                h,
                n,
                kappa2,
                [0.0; 3],
            )?;
            out.push(0.5 * phi[c] + avg);
        }
        Ok(out)
    };
    let (values, iterations) = gmres(&mut apply, b, warm, BIE_TOL, BIE_MAX_ITERS)?;
    Ok((Density1D { values }, iterations))
}

/// Unrestarted GMRES for the tiny dense systems behind the line BIE; the
/// Krylov space reaches the full dimension within `k` steps, so this is
/// essentially a matrix-free direct solve with an early-out residual test.
fn gmres(
    apply: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    warm: Option<&[f64]>,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize)> {
    let k = b.len();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; k], 0));
    }

    let mut x = warm.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; k]);
    let ax = apply(&x)?;
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let rnorm = norm(&r);
    if rnorm <= tol * bnorm {
        return Ok((x, 0));
    }

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_iters + 1);
    for v in &mut r {
        *v /= rnorm;
    }
    basis.push(r);
    // Column-compressed Hessenberg after Givens rotations (upper triangular),
    // plus the rotated residual vector g.
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut cos: Vec<f64> = Vec::new();
    let mut sin: Vec<f64> = Vec::new();
    let mut g = vec![rnorm];
    let mut iters = 0;

    for j in 0..max_iters {
        iters = j + 1;
        let mut w = apply(&basis[j])?;
        let mut col = Vec::with_capacity(j + 2);
        for vi in basis.iter().take(j + 1) {
            let hij: f64 = w.iter().zip(vi).map(|(a, b)| a * b).sum();
            for (wv, bv) in w.iter_mut().zip(vi) {
                *wv -= hij * bv;
            }
            col.push(hij);
        }
        let hlast = norm(&w);
        col.push(hlast);
        // Apply accumulated rotations, then a new one to zero col[j+1].
        for i in 0..j {
            let (a, c) = (col[i], col[i + 1]);
            col[i] = cos[i] * a + sin[i] * c;
            col[i + 1] = -sin[i] * a + cos[i] * c;
        }
        let denom = (col[j] * col[j] + col[j + 1] * col[j + 1]).sqrt();
        let (cj, sj) = if denom == 0.0 { (1.0, 0.0) } else { (col[j] / denom, col[j + 1] / denom) };
        col[j] = denom;
        col[j + 1] = 0.0;
        cos.push(cj);
        sin.push(sj);
        g.push(-sj * g[j]);
        g[j] *= cj;
        r_cols.push(col);

        let happy = hlast <= f64::EPSILON * bnorm;
        if !happy {
            for wv in &mut w {
                *wv /= hlast;
            }
            basis.push(w);
        }
        if g[j + 1].abs() <= tol * bnorm || happy {
            break;
        }
    }

    // Back-substitute R y = g over the spanned dimensions.
    let dim = r_cols.len();
    let mut y = vec![0.0; dim];
    for i in (0..dim).rev() {
        let mut s = g[i];
        for (jj, yj) in y.iter().enumerate().take(dim).skip(i + 1) {
            s -= r_cols[jj][i] * yj;
        }
        y[i] = s / r_cols[i][i];
    }
    for (j, yj) in y.iter().enumerate() {
        for (xi, bv) in x.iter_mut().zip(&basis[j]) {
            *xi += yj * bv;
        }
    }

    // Trust, then verify: the residual estimate is recursive.
    let ax = apply(&x)?;
    let res = norm(&b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect::<Vec<_>>());
    if res > 10.0 * tol * bnorm {
        return Err(Error::BieStalled { residual: res / bnorm, iters });
    }
    Ok((x, iters))
}

/// Full kernel-free pipeline for one cut line: volume potential from the
/// zero-extended source, boundary-integral solve for the layer density, and
/// the combined potential field whose inside-node values solve the Dirichlet
/// sub-problem to second order. `fact` must be the line's
/// [`helmholtz_line_factorization_radiating`]: every potential here is a
/// zero-extended field whose end segments live in the exterior.
pub fn solve_dirichlet_line(
    p: &Line1DProblem,
    fact: &TridiagFactorization,
    warm: Option<&[f64]>,
) -> Result<LineSolution> {
    let axis = p.cuts.line.axis;
    let n = p.grid.n();
    let lo = p.grid.bbox().lo[axis.index()];
    let h = p.grid.h(axis);
    if !(p.kappa2 > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa2 = {} must be positive", p.kappa2)));
    }
    debug_assert_eq!(p.rhs.len(), n + 1);
    debug_assert_eq!(p.g.len(), p.cuts.crossings.len());

    if p.cuts.crossings.is_empty() {
        return Ok(LineSolution {
            field: vec![0.0; n + 1],
            density: Density1D::default(),
            iterations: 0,
        });
    }

    // Zero extension of the source outside the inside intervals.
    let mut f_tilde = vec![0.0; n + 1];
    let mut node_ranges = Vec::with_capacity(p.cuts.inside_intervals.len());
    for iv in 0..p.cuts.inside_intervals.len() {
        let range = p.cuts.interval_nodes(p.grid, iv);
        if let Some((first, last)) = range {
            for m in first..=last {
                f_tilde[m] = p.rhs[m];
            }
        }
        node_ranges.push(range);
    }

    // Volume potential: zero value/slope jumps; the second and higher jumps
    // carry the interior source limits (exterior extension is zero), with
    // [v''''] = kappa^2 [v''] + [f''] from the differentiated equation.
    let k = p.cuts.crossings.len();
    let mut f_limits = vec![[0.0; 3]; k];
    for (c, limits) in f_limits.iter_mut().enumerate() {
        let (first, last) = match node_ranges[c / 2] {
            Some(r) => r,
            None => continue, // nodeless sliver-adjacent interval: limits 0
        };
        *limits = source_limits(p.rhs, lo, h, first, last, p.cuts.crossings[c]);
    }
    let volume_ojs: Vec<OrientedJumps> = (0..k)
        .map(|c| OrientedJumps {
            jumps: JumpSet {
                location: p.cuts.crossings[c],
                jump0: 0.0,
                jump1: 0.0,
                jump2: f_limits[c][0],
                jump3: f_limits[c][1],
                jump4: p.kappa2 * f_limits[c][0] + f_limits[c][2],
            },
            interior_is_right: c % 2 == 0,
        })
        .collect();
    let v_field = solve_interface_problem(n, lo, h, p.kappa2, &f_tilde, &volume_ojs, fact)?;

    // Boundary-integral right-hand side: Dirichlet data minus the interior
    // trace of the volume potential.
    let mut b = Vec::with_capacity(k);
    for c in 0..k {
        let v_in = trace_potential(
            &v_field,
            &volume_ojs,
            c,
            TraceSide::Interior,
            lo,
            h,
            n,
            p.kappa2,
            f_limits[c],
        )?;
        b.push(p.g[c] - v_in);
    }

    let (density, iterations) =
        solve_bie(n, lo, h, p.kappa2, &p.cuts.crossings, &b, fact, warm)?;

    // Final field: one combined solve; corrections are linear in the jumps,
    // so this equals double layer plus volume potential exactly.
    let combined: Vec<OrientedJumps> = (0..k)
        .map(|c| {
            let rho = density.values[c];
            let jump2 = p.kappa2 * rho + f_limits[c][0];
            OrientedJumps {
                jumps: JumpSet {
                    location: p.cuts.crossings[c],
                    jump0: rho,
                    jump1: 0.0,
                    jump2,
                    jump3: f_limits[c][1],
                    jump4: p.kappa2 * jump2 + f_limits[c][2],
                },
                interior_is_right: c % 2 == 0,
            }
        })
        .collect();
    let field = solve_interface_problem(n, lo, h, p.kappa2, &f_tilde, &combined, fact)?;

    Ok(LineSolution { field, density, iterations })
}

/// One-sided limits `(f, f', f'')` of the source at a crossing, extrapolated
/// from up to three nearest inside nodes (quadratic fit, then linear and
/// constant fallbacks; zeros when the interval holds no node).
fn source_limits(rhs: &[f64], lo: f64, h: f64, first: usize, last: usize, beta: f64) -> [f64; 3] {
    let count = (last - first + 1).min(3);
    let from_left = beta <= node_x(lo, h, first);
    let nodes: Vec<usize> = if from_left {
        (first..first + count).collect()
    } else {
        (last + 1 - count..=last).collect()
    };
    match count {
        0 => [0.0; 3],
        1 => [rhs[nodes[0]], 0.0, 0.0],
        2 => {
            let (x0, x1) = (node_x(lo, h, nodes[0]), node_x(lo, h, nodes[1]));
            let slope = (rhs[nodes[1]] - rhs[nodes[0]]) / (x1 - x0);
            [rhs[nodes[0]] + slope * (beta - x0), slope, 0.0]
        }
        _ => {
            // Newton form through the three nodes: value and both derivatives
            // of the quadratic, evaluated at the crossing.
            let xs = [node_x(lo, h, nodes[0]), node_x(lo, h, nodes[1]), node_x(lo, h, nodes[2])];
            let d01 = (rhs[nodes[1]] - rhs[nodes[0]]) / (xs[1] - xs[0]);
            let d12 = (rhs[nodes[2]] - rhs[nodes[1]]) / (xs[2] - xs[1]);
            let d012 = (d12 - d01) / (xs[2] - xs[0]);
            let value = rhs[nodes[0]]
                + d01 * (beta - xs[0])
                + d012 * (beta - xs[0]) * (beta - xs[1]);
            let deriv = d01 + d012 * ((beta - xs[0]) + (beta - xs[1]));
            [value, deriv, 2.0 * d012]
        }
    }
}

/// Closed-form reference solutions for the Helmholtz line operator, used to
/// validate the kernel-free solver against analytic kernels. The kernels are
/// the free-space ones: the line solves close their ends with outgoing
/// layers, so their continuum limit is the whole-line problem, not a boxed
/// one with pinned endpoint values.
pub mod green {
    /// Free-space Green function of `d^2/dx^2 - kappa^2`: symmetric,
    /// negative, decaying away from the source.
    pub fn green(kappa: f64, y: f64, x: f64) -> f64 {
        -(-kappa * (x - y).abs()).exp() / (2.0 * kappa)
    }

    /// Source-point derivative `dG/dy (y, x)`: the unit double-layer field.
    /// Jumps by one (left minus right limit) across `x = y`; at `x == y` the
    /// averaged value (zero by symmetry) is returned.
    pub fn dy_green(kappa: f64, y: f64, x: f64) -> f64 {
        if x < y {
            0.5 * (-kappa * (y - x)).exp()
        } else if x > y {
            -0.5 * (-kappa * (x - y)).exp()
        } else {
            0.0
        }
    }

    /// Analytic double-layer field of densities at the given crossings
    /// (sorted endpoint pairs, interior-minus-exterior convention).
    pub fn double_layer_field(kappa: f64, crossings: &[f64], density: &[f64], x: f64) -> f64 {
        crossings
            .iter()
            .zip(density)
            .enumerate()
            .map(|(c, (&beta, &phi))| {
                let s = if c % 2 == 0 { -1.0 } else { 1.0 };
                s * phi * dy_green(kappa, beta, x)
            })
            .sum()
    }

    /// Direct dense solve of the boundary-integral equation with analytic
    /// kernels: `phi/2 + W phi = b`. The reference for the matrix-free path.
    pub fn direct_density(kappa: f64, crossings: &[f64], b: &[f64]) -> Vec<f64> {
        let k = crossings.len();
        assert_eq!(b.len(), k);
        let mut a = vec![0.0; k * k];
        for row in 0..k {
            for col in 0..k {
                let s = if col % 2 == 0 { -1.0 } else { 1.0 };
                a[row * k + col] = s * dy_green(kappa, crossings[col], crossings[row]);
                if row == col {
                    a[row * k + col] += 0.5;
                }
            }
        }
        let mut rhs = b.to_vec();
        solve_dense(&mut a, &mut rhs);
        rhs
    }

    /// In-place Gaussian elimination with partial pivoting for the small
    /// dense reference systems.
    fn solve_dense(a: &mut [f64], b: &mut [f64]) {
        let k = b.len();
        assert_eq!(a.len(), k * k);
        for col in 0..k {
            let pivot_row = (col..k)
                .max_by(|&r, &s| {
                    a[r * k + col].abs().partial_cmp(&a[s * k + col].abs()).unwrap()
                })
                .unwrap();
            if pivot_row != col {
                for j in 0..k {
                    a.swap(col * k + j, pivot_row * k + j);
                }
                b.swap(col, pivot_row);
            }
            let pivot = a[col * k + col];
            assert!(pivot.abs() > 0.0, "singular reference system");
            for row in col + 1..k {
                let f = a[row * k + col] / pivot;
                if f == 0.0 {
                    continue;
                }
                for j in col..k {
                    a[row * k + j] -= f * a[col * k + j];
                }
                b[row] -= f * b[col];
            }
        }
        for row in (0..k).rev() {
            let mut s = b[row];
            for j in row + 1..k {
                s -= a[row * k + j] * b[j];
            }
            b[row] = s / a[row * k + row];
        }
    }
}
