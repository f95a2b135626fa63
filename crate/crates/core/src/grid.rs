//! Node-centered uniform grids and the error norms used by every study.
//!
//! A grid with `n` cells per axis owns `(n+1)^3` nodes including the box
//! faces. Fields are flat `Vec<f64>` in k-fastest order: the z index varies
//! fastest, so a z-line is contiguous and x/y lines are strided. Sweeps work
//! on `(start, stride)` views; nothing is ever transposed.

use crate::error::{Error, Result};

/// Coordinate axis of a sweep or a grid line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    /// First coordinate.
    X,
    /// Second coordinate.
    Y,
    /// Third coordinate.
    Z,
}

impl Axis {
    /// All three axes in sweep order.
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    /// Axis position in `[0, 3)`.
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// Human-readable name for error reports.
    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    /// The two axes perpendicular to `self`, in lexical order.
    #[inline]
    pub fn others(self) -> (Axis, Axis) {
        match self {
            Axis::X => (Axis::Y, Axis::Z),
            Axis::Y => (Axis::X, Axis::Z),
            Axis::Z => (Axis::X, Axis::Y),
        }
    }
}

/// Axis-aligned computational box.
#[derive(Debug, Clone, Copy)]
pub struct BoundingBox {
    /// Lower corner.
    pub lo: [f64; 3],
    /// Upper corner.
    pub hi: [f64; 3],
}

impl BoundingBox {
    /// Box from corners; every extent must be positive.
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        for d in 0..3 {
            if !(hi[d] - lo[d]).is_finite() || hi[d] - lo[d] <= 0.0 {
                return Err(Error::InvalidGrid(format!(
                    "axis {d} extent [{}, {}] is not positive",
                    lo[d], hi[d]
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// Cube `[-half, half]^3`.
    pub fn centered_cube(half: f64) -> Self {
        assert!(half.is_finite() && half > 0.0, "cube half-width must be positive");
        Self { lo: [-half; 3], hi: [half; 3] }
    }

    /// Side length along one axis.
    #[inline]
    pub fn extent(&self, axis: Axis) -> f64 {
        self.hi[axis.index()] - self.lo[axis.index()]
    }
}

/// Uniform node-centered grid over a [`BoundingBox`].
#[derive(Debug, Clone, Copy)]
pub struct Grid3 {
    bbox: BoundingBox,
    n: usize,
    h: [f64; 3],
}

impl Grid3 {
    /// Grid with `n` cells (hence `n+1` nodes) per axis; `n >= 4`.
    pub fn new(bbox: BoundingBox, n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidGrid(format!("n = {n} < 4")));
        }
        let h = [
            bbox.extent(Axis::X) / n as f64,
            bbox.extent(Axis::Y) / n as f64,
            bbox.extent(Axis::Z) / n as f64,
        ];
        Ok(Self { bbox, n, h })
    }

    /// Cells per axis.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Nodes per axis (`n + 1`).
    #[inline]
    pub fn nodes_per_axis(&self) -> usize {
        self.n + 1
    }

    /// Total node count `(n+1)^3`.
    #[inline]
    pub fn num_nodes(&self) -> usize {
        let m = self.n + 1;
        m * m * m
    }

    /// Spacing along one axis.
    #[inline]
    pub fn h(&self, axis: Axis) -> f64 {
        self.h[axis.index()]
    }

    /// The computational box.
    #[inline]
    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    /// Node coordinate along `axis` at index `m`.
    #[inline]
    pub fn coord(&self, axis: Axis, m: usize) -> f64 {
        self.bbox.lo[axis.index()] + self.h[axis.index()] * m as f64
    }

    /// Flat index of node `(i, j, k)`; k varies fastest.
    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i <= self.n && j <= self.n && k <= self.n);
        (i * (self.n + 1) + j) * (self.n + 1) + k
    }

    /// Physical position of node `(i, j, k)`.
    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.coord(Axis::X, i),
            self.coord(Axis::Y, j),
            self.coord(Axis::Z, k),
        ]
    }

    /// Flat index and stride of a line: node `m` of the line lives at
    /// `start + m * stride` for `m` in `0..=n`.
    #[inline]
    pub fn line_start_stride(&self, line: GridLine) -> (usize, usize) {
        let m = self.n + 1;
        match line.axis {
            Axis::X => (line.a * m + line.b, m * m),
            Axis::Y => (line.a * m * m + line.b, m),
            Axis::Z => ((line.a * m + line.b) * m, 1),
        }
    }

    /// Lines of an axis family whose perpendicular indices are strictly
    /// interior (`1..n`); the set swept by Dirichlet problems.
    pub fn interior_lines(&self, axis: Axis) -> impl Iterator<Item = GridLine> {
        let n = self.n;
        (1..n).flat_map(move |a| (1..n).map(move |b| GridLine { axis, a, b }))
    }

    /// Every line of an axis family, shell lines included (`0..=n`); the set
    /// swept by whole-box Neumann problems.
    pub fn all_lines(&self, axis: Axis) -> impl Iterator<Item = GridLine> {
        let n = self.n;
        (0..=n).flat_map(move |a| (0..=n).map(move |b| GridLine { axis, a, b }))
    }
}

/// One axis-parallel grid line, identified by its sweep axis and the two
/// fixed perpendicular indices in lexical axis order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLine {
    /// Direction the line runs along.
    pub axis: Axis,
    /// Fixed index of the first perpendicular axis.
    pub a: usize,
    /// Fixed index of the second perpendicular axis.
    pub b: usize,
}

/// Scalar values at every grid node, k-fastest flat storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField3 {
    n: usize,
    values: Vec<f64>,
}

impl ScalarField3 {
    /// Zero field shaped like `grid`.
    pub fn zeros(grid: &Grid3) -> Self {
        Self {
            n: grid.n(),
            values: vec![0.0; grid.num_nodes()],
        }
    }

    /// Field sampled from a function of position.
    pub fn from_fn(grid: &Grid3, f: impl Fn([f64; 3]) -> f64) -> Self {
        let mut field = Self::zeros(grid);
        let m = grid.nodes_per_axis();
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    field.values[grid.idx(i, j, k)] = f(grid.position(i, j, k));
                }
            }
        }
        field
    }

    /// Cells per axis this field was shaped for.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Flat value slice.
    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable flat value slice.
    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Value at a flat index.
    #[inline]
    pub fn get(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    /// Overwrite the value at a flat index.
    #[inline]
    pub fn set(&mut self, flat: usize, v: f64) {
        self.values[flat] = v;
    }

    /// Largest absolute value, 0 for an all-zero field.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// First non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }
}

/// Centered second difference `(u[m+1] - 2 u[m] + u[m-1]) / h^2` along a
/// line, returned for interior line nodes `m = 1..n`.
pub fn central_second_diff(grid: &Grid3, field: &ScalarField3, line: GridLine) -> Vec<f64> {
    let (start, stride) = grid.line_start_stride(line);
    let inv_h2 = 1.0 / (grid.h(line.axis) * grid.h(line.axis));
    let u = field.values();
    (1..grid.n())
        .map(|m| {
            let c = start + m * stride;
            (u[c + stride] - 2.0 * u[c] + u[c - stride]) * inv_h2
        })
        .collect()
}

/// Discrete L2 and Linf error norms over the masked node set.
///
/// L2 is the root mean square over masked nodes, matching the convergence
/// tables this suite reproduces. Errs on an empty mask.
pub fn error_norms(
    numeric: &ScalarField3,
    exact: &ScalarField3,
    mask: &[bool],
) -> Result<(f64, f64)> {
    if numeric.values.len() != exact.values.len() || numeric.values.len() != mask.len() {
        return Err(Error::InvalidArgument(format!(
            "norm inputs disagree in size: {} vs {} vs {}",
            numeric.values.len(),
            exact.values.len(),
            mask.len()
        )));
    }
    let mut sum_sq = 0.0;
    let mut max_abs = 0.0f64;
    let mut count = 0usize;
    for idx in 0..mask.len() {
        if mask[idx] {
            let d = numeric.values[idx] - exact.values[idx];
            sum_sq += d * d;
            max_abs = max_abs.max(d.abs());
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(((sum_sq / count as f64).sqrt(), max_abs))
}

/// Observed convergence order `log2(err_coarse / err_fine)` for a halved
/// spacing. Errs unless both inputs are positive.
pub fn convergence_order(err_coarse: f64, err_fine: f64) -> Result<f64> {
    if !(err_coarse > 0.0) || !(err_fine > 0.0) {
        return Err(Error::NonPositiveError {
            coarse: err_coarse,
            fine: err_fine,
        });
    }
    Ok((err_coarse / err_fine).log2())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> Grid3 {
        Grid3::new(BoundingBox::new([0.0; 3], [1.0; 3]).unwrap(), n).unwrap()
    }

    #[test]
    fn rejects_degenerate_boxes_and_tiny_grids() {
        assert!(BoundingBox::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        let bbox = BoundingBox::new([0.0; 3], [1.0; 3]).unwrap();
        assert!(Grid3::new(bbox, 3).is_err());
        assert!(Grid3::new(bbox, 4).is_ok());
    }

    #[test]
    fn line_views_cover_disjoint_nodes() {
        let grid = unit_grid(4);
        for axis in Axis::ALL {
            let mut seen = vec![false; grid.num_nodes()];
            for line in grid.all_lines(axis) {
                let (start, stride) = grid.line_start_stride(line);
                for m in 0..=grid.n() {
                    let flat = start + m * stride;
                    assert!(!seen[flat], "node visited twice on axis {}", axis.name());
                    seen[flat] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn line_coordinates_match_node_positions() {
        let grid = Grid3::new(
            BoundingBox::new([-1.2, 0.0, 2.0], [1.2, 2.4, 4.4]).unwrap(),
            6,
        )
        .unwrap();
        let line = GridLine {
            axis: Axis::Y,
            a: 2,
            b: 5,
        };
        let (start, stride) = grid.line_start_stride(line);
        for m in 0..=grid.n() {
            assert_eq!(start + m * stride, grid.idx(2, m, 5));
        }
        assert_eq!(grid.coord(Axis::Y, 3), 0.0 + 3.0 * 2.4 / 6.0);
    }

    #[test]
    fn second_diff_is_exact_on_quadratics() {
        let grid = unit_grid(8);
        let field = ScalarField3::from_fn(&grid, |p| 3.0 * p[1] * p[1] - 2.0 * p[1] + 0.5);
        let line = GridLine {
            axis: Axis::Y,
            a: 4,
            b: 7,
        };
        for d2 in central_second_diff(&grid, &field, line) {
            assert!((d2 - 6.0).abs() < 1e-10, "got {d2}");
        }
    }

    #[test]
    fn norms_match_hand_computed_values() {
        let grid = unit_grid(4);
        let mut numeric = ScalarField3::zeros(&grid);
        let exact = ScalarField3::zeros(&grid);
        let mut mask = vec![false; grid.num_nodes()];
        // Two masked nodes with errors 3 and 4: l2 = sqrt(25/2), linf = 4.
        numeric.set(grid.idx(1, 1, 1), 3.0);
        numeric.set(grid.idx(2, 2, 2), 4.0);
        mask[grid.idx(1, 1, 1)] = true;
        mask[grid.idx(2, 2, 2)] = true;
        let (l2, linf) = error_norms(&numeric, &exact, &mask).unwrap();
        assert!((l2 - (12.5f64).sqrt()).abs() < 1e-14);
        assert_eq!(linf, 4.0);
        assert!(linf >= l2);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let grid = unit_grid(4);
        let f = ScalarField3::zeros(&grid);
        let mask = vec![false; grid.num_nodes()];
        assert!(matches!(error_norms(&f, &f, &mask), Err(Error::EmptyMask)));
    }

    #[test]
    fn order_halving_and_antisymmetry() {
        // Exact second-order pair: errors 4e-2 and 1e-2.
        let p = convergence_order(4e-2, 1e-2).unwrap();
        assert!((p - 2.0).abs() < 1e-12);
        let q = convergence_order(1e-2, 4e-2).unwrap();
        assert!((p + q).abs() < 1e-12);
        assert!(convergence_order(0.0, 1e-2).is_err());
        assert!(convergence_order(1e-2, -1.0).is_err());
    }
}
