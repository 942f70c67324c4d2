//! Meshes on a segment [0, d] of a ray and piecewise-linear grid functions.
//!
//! A [`RayGrid`] is a strictly increasing node set starting at 0 and ending at
//! the segment length `d`. A [`GridFunction`] stores nodal values and is read
//! everywhere else in the crate as the continuous piecewise-linear interpolant
//! through those values, extended by zero outside [0, d].

use std::sync::Arc;

use crate::error::{Error, Result};

/// Node layout for [`build_mesh`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grading {
    /// Equispaced nodes.
    Uniform,
    /// Nodes clustered near `r = d` via `x_i = d * (1 - (1 - i/N)^exponent)`.
    Graded(f64),
}

/// Mesh on [0, d]: strictly increasing nodes, first node 0, last node d.
#[derive(Debug, Clone, PartialEq)]
pub struct RayGrid {
    nodes: Vec<f64>,
}

impl RayGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Data("grid needs at least two nodes".into()));
        }
        if !nodes.iter().all(|x| x.is_finite()) {
            return Err(Error::Data("grid nodes must be finite".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::Data(format!(
                "grid must start at 0, got {}",
                nodes[0]
            )));
        }
        if !nodes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Data("grid nodes must be strictly increasing".into()));
        }
        Ok(RayGrid { nodes })
    }

    /// Segment length; equals the last node.
    pub fn d(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of cells (elements).
    pub fn cell_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn cell_width(&self, e: usize) -> f64 {
        self.nodes[e + 1] - self.nodes[e]
    }

    /// True when all cells have the same width up to relative 1e-12.
    pub fn is_uniform(&self) -> bool {
        let h = self.d() / self.cell_count() as f64;
        self.nodes
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h)
    }

    /// Uniform spacing, when the grid is uniform.
    pub fn spacing(&self) -> Option<f64> {
        if self.is_uniform() {
            Some(self.d() / self.cell_count() as f64)
        } else {
            None
        }
    }

    /// Index of the cell containing `r`; `r = d` maps to the last cell.
    /// Callers must keep `r` within [0, d].
    pub fn locate(&self, r: f64) -> usize {
        debug_assert!((0.0..=self.d()).contains(&r));
        let n = self.cell_count();
        let e = self.nodes.partition_point(|&x| x <= r);
        e.saturating_sub(1).min(n - 1)
    }
}

/// Builds a mesh with `n_cells` cells on [0, d].
pub fn build_mesh(d: f64, n_cells: usize, grading: Grading) -> Result<RayGrid> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::Domain(format!(
            "segment length d must be positive, got {d}"
        )));
    }
    if n_cells < 2 {
        return Err(Error::Domain(format!(
            "mesh needs at least 2 cells, got {n_cells}"
        )));
    }
    let n = n_cells as f64;
    let mut nodes = Vec::with_capacity(n_cells + 1);
    for i in 0..=n_cells {
        let s = i as f64 / n;
        let x = match grading {
            Grading::Uniform => d * s,
            Grading::Graded(g) => {
                if !(g.is_finite() && g > 0.0) {
                    return Err(Error::Domain(format!(
                        "grading exponent must be positive, got {g}"
                    )));
                }
                d * (1.0 - (1.0 - s).powf(g))
            }
        };
        nodes.push(x);
    }
    // Pin the endpoints exactly.
    nodes[0] = 0.0;
    nodes[n_cells] = d;
    RayGrid::new(nodes)
}

/// Nodal values on a [`RayGrid`], read as the piecewise-linear interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<RayGrid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<RayGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Data(format!(
                "value count {} does not match node count {}",
                values.len(),
                grid.node_count()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("grid function values must be finite".into()));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn zeros(grid: Arc<RayGrid>) -> Self {
        let n = grid.node_count();
        GridFunction {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &Arc<RayGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Slope of the interpolant on cell `e`.
    pub fn slope(&self, e: usize) -> f64 {
        (self.values[e + 1] - self.values[e]) / self.grid.cell_width(e)
    }

    /// Interpolant value at `r`, zero outside [0, d].
    pub fn value_at(&self, r: f64) -> f64 {
        if r < 0.0 || r > self.grid.d() {
            return 0.0;
        }
        let e = self.grid.locate(r);
        let a = self.grid.nodes()[e];
        self.values[e] + self.slope(e) * (r - a)
    }

    /// Pointwise linear combination `a*self + b*other` on a shared grid.
    pub fn lin_comb(&self, a: f64, other: &GridFunction, b: f64) -> Result<GridFunction> {
        same_grid(self, other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        GridFunction::new(self.grid.clone(), values)
    }

    /// Discrete L_p norm with composite-trapezoid node weights.
    ///
    /// With `exclude_last` the final node carries weight zero, so a value
    /// pinned there by an endpoint convention cannot influence the norm.
    pub fn lp_node_norm(&self, p: f64, exclude_last: bool) -> f64 {
        debug_assert!(p >= 1.0);
        let nodes = self.grid.nodes();
        let n = nodes.len();
        let mut acc = 0.0f64;
        for i in 0..n {
            let w = if i == 0 {
                0.5 * (nodes[1] - nodes[0])
            } else if i == n - 1 {
                if exclude_last {
                    0.0
                } else {
                    0.5 * (nodes[n - 1] - nodes[n - 2])
                }
            } else {
                0.5 * (nodes[i + 1] - nodes[i - 1])
            };
            acc += w * self.values[i].abs().powf(p);
        }
        acc.powf(1.0 / p)
    }
}

/// Errors unless both functions share one grid (by value).
pub fn same_grid(f: &GridFunction, g: &GridFunction) -> Result<()> {
    if Arc::ptr_eq(f.grid(), g.grid()) || f.grid() == g.grid() {
        Ok(())
    } else {
        Err(Error::Data("grid functions live on different grids".into()))
    }
}

/// Samples `f` at the nodes of `grid`.
pub fn interpolate<F: Fn(f64) -> f64>(f: F, grid: &Arc<RayGrid>) -> Result<GridFunction> {
    let mut values = Vec::with_capacity(grid.node_count());
    for &x in grid.nodes() {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::Data(format!(
                "sampled function is not finite at x = {x}: {v}"
            )));
        }
        values.push(v);
    }
    GridFunction::new(grid.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_mesh_matches_closed_form() {
        let g = build_mesh(1.0, 4, Grading::Uniform).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(g.is_uniform());
        assert_eq!(g.spacing(), Some(0.25));
    }

    #[test]
    fn graded_mesh_clusters_toward_d() {
        let g = build_mesh(1.0, 4, Grading::Graded(2.0)).unwrap();
        let want = [0.0, 0.4375, 0.75, 0.9375, 1.0];
        for (a, b) in g.nodes().iter().zip(want) {
            assert_relative_eq!(*a, b, max_relative = 1e-15);
        }
        assert!(!g.is_uniform());
    }

    #[test]
    fn mesh_rejects_degenerate_inputs() {
        assert!(build_mesh(1.0, 1, Grading::Uniform).is_err());
        assert!(build_mesh(0.0, 4, Grading::Uniform).is_err());
        assert!(build_mesh(1.0, 4, Grading::Graded(-1.0)).is_err());
        assert!(RayGrid::new(vec![0.1, 0.5, 1.0]).is_err());
        assert!(RayGrid::new(vec![0.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn interpolate_squares() {
        let g = Arc::new(build_mesh(1.0, 4, Grading::Uniform).unwrap());
        let f = interpolate(|x| x * x, &g).unwrap();
        assert_eq!(f.values()[1], 0.0625);
        assert_eq!(f.value_at(1.0), 1.0);
        assert_eq!(f.value_at(1.5), 0.0);
        assert_eq!(f.value_at(-0.1), 0.0);
    }

    #[test]
    fn interpolate_rejects_non_finite_samples() {
        let g = Arc::new(build_mesh(1.0, 4, Grading::Uniform).unwrap());
        assert!(interpolate(|x| 1.0 / x, &g).is_err());
    }

    #[test]
    fn locate_brackets_nodes_and_interiors() {
        let g = build_mesh(1.0, 4, Grading::Uniform).unwrap();
        assert_eq!(g.locate(0.0), 0);
        assert_eq!(g.locate(0.25), 1);
        assert_eq!(g.locate(0.3), 1);
        assert_eq!(g.locate(1.0), 3);
    }

    #[test]
    fn lp_norm_weights_are_trapezoidal() {
        let g = Arc::new(build_mesh(1.0, 4, Grading::Uniform).unwrap());
        let f = interpolate(|_| 1.0, &g).unwrap();
        assert_relative_eq!(f.lp_node_norm(1.0, false), 1.0, max_relative = 1e-15);
        assert_relative_eq!(f.lp_node_norm(1.0, true), 0.875, max_relative = 1e-15);
        assert_relative_eq!(f.lp_node_norm(2.0, false), 1.0, max_relative = 1e-15);
    }
}
