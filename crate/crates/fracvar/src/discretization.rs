//! Interval meshes, the P1 finite-element space, norms, and difference
//! quotients.
//!
//! Everything here is exact for piecewise-linear data where a closed form
//! exists (L2 and H1 seminorms); coefficient-weighted integrals use 3-point
//! Gauss quadrature per element, which is exact through degree five.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, RayGrid};

pub use crate::grid::{build_mesh, interpolate, Grading};

/// 3-point Gauss rule on the reference cell [0, 1]: (coordinate, weight).
pub(crate) const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 0.277_777_777_777_777_8),
    (0.5, 0.444_444_444_444_444_4),
    (0.887_298_334_620_741_7, 0.277_777_777_777_777_8),
];

/// Homogeneous-Dirichlet P1 space on a ray grid: hat functions at the
/// interior nodes, boundary nodes eliminated.
#[derive(Debug, Clone)]
pub struct P1Space {
    grid: Arc<RayGrid>,
}

impl P1Space {
    /// Requires at least two cells so that one interior node exists.
    pub fn new(grid: Arc<RayGrid>) -> Result<Self> {
        if grid.cell_count() < 2 {
            return Err(Error::Domain(
                "P1 space needs at least two cells (one interior node)".into(),
            ));
        }
        Ok(P1Space { grid })
    }

    pub fn grid(&self) -> &Arc<RayGrid> {
        &self.grid
    }

    /// Number of interior degrees of freedom (nodes minus the two endpoints).
    pub fn interior_dof_count(&self) -> usize {
        self.grid.node_count() - 2
    }

    /// Grid coordinates of the interior nodes, in order.
    pub fn interior_nodes(&self) -> &[f64] {
        let n = self.grid.node_count();
        &self.grid.nodes()[1..n - 1]
    }

    /// Hat function peaking at interior dof `k` (grid node `k + 1`).
    pub fn hat(&self, k: usize) -> GridFunction {
        let mut v = GridFunction::zeros(self.grid.clone());
        v.values_mut()[k + 1] = 1.0;
        v
    }

    /// Expands interior coefficients to a grid function with zero endpoints.
    pub fn from_interior(&self, coeffs: &[f64]) -> Result<GridFunction> {
        if coeffs.len() != self.interior_dof_count() {
            return Err(Error::Data(format!(
                "expected {} interior coefficients, got {}",
                self.interior_dof_count(),
                coeffs.len()
            )));
        }
        let mut v = GridFunction::zeros(self.grid.clone());
        v.values_mut()[1..self.grid.node_count() - 1].copy_from_slice(coeffs);
        Ok(v)
    }

    /// Reads off the interior nodal values of a grid function.
    pub fn restrict_interior(&self, v: &GridFunction) -> Vec<f64> {
        let n = self.grid.node_count();
        v.values()[1..n - 1].to_vec()
    }
}

/// Positive diffusion and potential fields with certified lower bounds and a
/// Hölder exponent for the potential.
#[derive(Clone)]
pub struct CoefficientField {
    a: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    p: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    a0: f64,
    p0: f64,
    lipschitz_lambda: f64,
}

impl std::fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientField")
            .field("a0", &self.a0)
            .field("p0", &self.p0)
            .field("lipschitz_lambda", &self.lipschitz_lambda)
            .finish()
    }
}

impl CoefficientField {
    /// Wraps the two fields. `a0`, `p0` are claimed lower bounds and
    /// `lipschitz_lambda` in (0, 1] is the claimed Hölder exponent of `p`;
    /// all three claims are checked against samples by [`validate_on`].
    ///
    /// [`validate_on`]: CoefficientField::validate_on
    pub fn new(
        a: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        p: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        a0: f64,
        p0: f64,
        lipschitz_lambda: f64,
    ) -> Result<Self> {
        if !a0.is_finite() || a0 <= 0.0 {
            return Err(Error::Domain(format!(
                "diffusion lower bound a0 must be positive, got {a0}"
            )));
        }
        if !p0.is_finite() || p0 < 0.0 {
            return Err(Error::Domain(format!(
                "potential lower bound p0 must be nonnegative, got {p0}"
            )));
        }
        if !lipschitz_lambda.is_finite() || lipschitz_lambda <= 0.0 || lipschitz_lambda > 1.0 {
            return Err(Error::Domain(format!(
                "Hölder exponent must lie in (0, 1], got {lipschitz_lambda}"
            )));
        }
        Ok(CoefficientField {
            a,
            p,
            a0,
            p0,
            lipschitz_lambda,
        })
    }

    /// Constant fields a ≡ a0, p ≡ p0 (Hölder exponent 1).
    pub fn constant(a0: f64, p0: f64) -> Result<Self> {
        Self::new(Arc::new(move |_| a0), Arc::new(move |_| p0), a0, p0, 1.0)
    }

    pub fn a_at(&self, x: f64) -> f64 {
        (self.a)(x)
    }

    pub fn p_at(&self, x: f64) -> f64 {
        (self.p)(x)
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn lipschitz_lambda(&self) -> f64 {
        self.lipschitz_lambda
    }

    /// Checks the claimed bounds on the grid: a ≥ a0 and p ≥ p0 at every node
    /// and element Gauss point, and the sampled Hölder quotient of p at
    /// exponent `lipschitz_lambda` must not grow under mesh halving.
    pub fn validate_on(&self, grid: &RayGrid) -> Result<()> {
        let check = |x: f64| -> Result<()> {
            let av = self.a_at(x);
            let pv = self.p_at(x);
            if !av.is_finite() || av < self.a0 {
                return Err(Error::Data(format!(
                    "diffusion field at x = {x} is {av}, below the bound a0 = {}",
                    self.a0
                )));
            }
            if !pv.is_finite() || pv < self.p0 {
                return Err(Error::Data(format!(
                    "potential field at x = {x} is {pv}, below the bound p0 = {}",
                    self.p0
                )));
            }
            Ok(())
        };
        for &x in grid.nodes() {
            check(x)?;
        }
        for e in 0..grid.cell_count() {
            let a = grid.nodes()[e];
            let h = grid.cell_width(e);
            for (q, _) in GAUSS3 {
                check(a + q * h)?;
            }
        }

        // Hölder consistency: the max quotient |p(u)-p(v)| / |u-v|^lambda over
        // adjacent sample pairs must not grow when the sampling is halved. A
        // field rougher than the claimed exponent scales it up by a factor
        // 2^(lambda - mu) > 1 per halving.
        let coarse = self.max_holder_quotient(grid, 1);
        let fine = self.max_holder_quotient(grid, 2);
        if fine > 1.1 * coarse + 1e-12 {
            return Err(Error::Data(format!(
                "potential field is rougher than Hölder exponent {}: sampled \
                 quotient grew from {coarse:.6e} to {fine:.6e} under halving",
                self.lipschitz_lambda
            )));
        }
        Ok(())
    }

    /// Largest sampled Hölder quotient of p with `refine` subsamples per cell.
    fn max_holder_quotient(&self, grid: &RayGrid, refine: usize) -> f64 {
        let mut max_q: f64 = 0.0;
        for e in 0..grid.cell_count() {
            let a = grid.nodes()[e];
            let h = grid.cell_width(e) / refine as f64;
            for s in 0..refine {
                let u = a + s as f64 * h;
                let v = u + h;
                let q = (self.p_at(u) - self.p_at(v)).abs() / h.powf(self.lipschitz_lambda);
                max_q = max_q.max(q);
            }
        }
        max_q
    }
}

/// L2, H1-seminorm, H1, and p-weighted L2 norms of a grid function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub h1_semi: f64,
    pub h1: f64,
    pub weighted_l2: Option<f64>,
}

/// Computes the norm record. L2 and the H1 seminorm are exact for the
/// piecewise-linear function; the weighted L2 norm integrates p v^2 with the
/// per-element Gauss rule.
pub fn norms(v: &GridFunction, p_field: Option<&CoefficientField>) -> Norms {
    let grid = v.grid();
    let vals = v.values();
    let mut l2_sq = 0.0;
    let mut semi_sq = 0.0;
    let mut weighted_sq = 0.0;
    for e in 0..grid.cell_count() {
        let a = grid.nodes()[e];
        let h = grid.cell_width(e);
        let (va, vb) = (vals[e], vals[e + 1]);
        l2_sq += h * (va * va + va * vb + vb * vb) / 3.0;
        let s = (vb - va) / h;
        semi_sq += h * s * s;
        if let Some(field) = p_field {
            for (q, w) in GAUSS3 {
                let x = a + q * h;
                let vx = va + (vb - va) * q;
                weighted_sq += h * w * field.p_at(x) * vx * vx;
            }
        }
    }
    Norms {
        l2: l2_sq.sqrt(),
        h1_semi: semi_sq.sqrt(),
        h1: (l2_sq + semi_sq).sqrt(),
        weighted_l2: p_field.map(|_| weighted_sq.sqrt()),
    }
}

/// How a shifted evaluation point off the node lattice is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuotientMode {
    /// Require the shift to land exactly on grid nodes.
    NodesOnly,
    /// Evaluate the shifted point through the piecewise-linear interpolant.
    Interpolate,
}

/// A forward-difference step together with the support margin it assumes.
#[derive(Debug, Clone, Copy)]
pub struct DifferenceStep {
    h: f64,
    support_margin: f64,
    mode: QuotientMode,
}

impl DifferenceStep {
    /// Node-aligned step. Requires 2|h| strictly inside the support margin.
    pub fn new(h: f64, support_margin: f64) -> Result<Self> {
        Self::build(h, support_margin, QuotientMode::NodesOnly)
    }

    /// Step evaluated through the interpolant, for shifts off the lattice.
    pub fn with_interpolation(h: f64, support_margin: f64) -> Result<Self> {
        Self::build(h, support_margin, QuotientMode::Interpolate)
    }

    fn build(h: f64, support_margin: f64, mode: QuotientMode) -> Result<Self> {
        if !h.is_finite() || h == 0.0 {
            return Err(Error::Domain(format!(
                "difference step must be finite and nonzero, got {h}"
            )));
        }
        if !support_margin.is_finite() || 2.0 * h.abs() >= support_margin {
            return Err(Error::Domain(format!(
                "difference step needs 2|h| < support margin, got h = {h}, \
                 margin = {support_margin}"
            )));
        }
        Ok(DifferenceStep {
            h,
            support_margin,
            mode,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn support_margin(&self) -> f64 {
        self.support_margin
    }

    pub fn mode(&self) -> QuotientMode {
        self.mode
    }
}

/// Distance from the support of `v` (nonzero nodal values) to the boundary
/// of [0, d]. A zero function reports the full domain length.
pub fn support_margin(v: &GridFunction) -> f64 {
    let grid = v.grid();
    let nodes = grid.nodes();
    let mut first = None;
    let mut last = None;
    for (i, &x) in v.values().iter().enumerate() {
        if x != 0.0 {
            if first.is_none() {
                first = Some(i);
            }
            last = Some(i);
        }
    }
    match (first, last) {
        (Some(i), Some(j)) => (nodes[i] - nodes[0]).min(nodes[nodes.len() - 1] - nodes[j]),
        _ => grid.d(),
    }
}

/// Forward difference quotient [v(x + h) - v(x)] / h with zero extension
/// outside [0, d], returned on the same grid.
pub fn difference_quotient(v: &GridFunction, step: &DifferenceStep) -> Result<GridFunction> {
    let grid = v.grid();
    let margin = support_margin(v);
    if margin < step.support_margin() {
        return Err(Error::Domain(format!(
            "operand support margin {margin} is smaller than the step's \
             declared margin {}",
            step.support_margin()
        )));
    }
    let n = grid.node_count();
    let h = step.h();
    let shifted: Vec<f64> = match step.mode() {
        QuotientMode::NodesOnly => {
            let spacing = grid.spacing().ok_or_else(|| {
                Error::Domain(
                    "node-aligned difference quotients need a uniform grid; \
                     request interpolation instead"
                        .into(),
                )
            })?;
            let ratio = h / spacing;
            let m = ratio.round();
            if (ratio - m).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "step {h} is not an integer multiple of the spacing {spacing}; \
                     request interpolation instead"
                )));
            }
            let m = m as i64;
            (0..n as i64)
                .map(|i| {
                    let j = i + m;
                    if (0..n as i64).contains(&j) {
                        v.values()[j as usize]
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        QuotientMode::Interpolate => grid.nodes().iter().map(|&x| v.value_at(x + h)).collect(),
    };
    let values: Vec<f64> = shifted
        .iter()
        .zip(v.values())
        .map(|(s, c)| (s - c) / h)
        .collect();
    GridFunction::new(grid.clone(), values)
}
