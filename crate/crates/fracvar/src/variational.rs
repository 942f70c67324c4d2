//! Bilinear-form assembly and solve for the elliptic problem with a
//! fractional lower-order term, plus certification of the boundedness,
//! coercivity, and accretivity constants and an interior regularity probe.
//!
//! The form is B(v, u) = ∫ a v'u' + ∫ p v Du with D the left weighted
//! difference-derivative; test functions index rows, so the linear system
//! reads B(phi_i, z) = (phi_i, f) for every interior hat phi_i.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::discretization::{CoefficientField, P1Space, GAUSS3};
use crate::error::{Error, Result};
use crate::frac_ops::{kipriyanov_row_at, FractionalOrder, KipriyanovSpec};
use crate::grid::{build_mesh, Grading, GridFunction};
use crate::par;

/// Problem data: domain length, fractional order, dimension weight,
/// coefficient fields, and the right-hand side as a callable.
#[derive(Clone)]
pub struct ProblemSpec {
    d: f64,
    alpha: FractionalOrder,
    n: u32,
    coeffs: CoefficientField,
    rhs: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    grading: Grading,
}

impl ProblemSpec {
    pub fn new(
        d: f64,
        alpha: FractionalOrder,
        n: u32,
        coeffs: CoefficientField,
        rhs: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    ) -> Result<Self> {
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::Domain(format!(
                "domain length must be positive, got {d}"
            )));
        }
        if n < 1 {
            return Err(Error::Domain(format!(
                "dimension n must be a positive integer, got {n}"
            )));
        }
        Ok(ProblemSpec {
            d,
            alpha,
            n,
            coeffs,
            rhs,
            grading: Grading::Uniform,
        })
    }

    pub fn with_grading(mut self, grading: Grading) -> Self {
        self.grading = grading;
        self
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn alpha(&self) -> FractionalOrder {
        self.alpha
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn coeffs(&self) -> &CoefficientField {
        &self.coeffs
    }

    pub fn rhs_at(&self, x: f64) -> f64 {
        (self.rhs)(x)
    }

    pub fn grading(&self) -> Grading {
        self.grading
    }
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("d", &self.d)
            .field("alpha", &self.alpha.value())
            .field("n", &self.n)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

/// The assembled matrices of the form on interior degrees of freedom.
#[derive(Debug, Clone)]
pub struct AssembledForm {
    pub diffusion: DMatrix<f64>,
    pub fractional: DMatrix<f64>,
    pub gram_l2: DMatrix<f64>,
    pub gram_h10: DMatrix<f64>,
    pub gram_weighted: DMatrix<f64>,
    a0: f64,
    p0: f64,
}

impl AssembledForm {
    pub fn dim(&self) -> usize {
        self.diffusion.nrows()
    }

    pub fn system_matrix(&self) -> DMatrix<f64> {
        &self.diffusion + &self.fractional
    }
}

/// Boundedness/coercivity constants measured on the assembled form, next to
/// the predicted coercivity constant min{a0, lambda^-2 p0}.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LaxMilgramCertificate {
    pub k1_estimate: f64,
    pub k2_estimate: f64,
    pub k2_predicted: f64,
    pub accretivity_margin: f64,
    pub lambda_used: f64,
}

/// Interior-regularity probe data: difference-quotient norms of the gradient
/// against the data norm, per step size.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub h_values: Vec<f64>,
    pub quotient_norms: Vec<f64>,
    pub bound_reference: f64,
    pub ratios: Vec<f64>,
}

/// Solution bundle from [`solve_bvp`].
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub solution: GridFunction,
    pub certificate: LaxMilgramCertificate,
    pub residual: f64,
}

/// Stiffness matrix A_ij = ∫ a phi_i' phi_j' on interior dofs, elementwise
/// Gauss quadrature on the coefficient.
pub fn assemble_diffusion(space: &P1Space, coeffs: &CoefficientField) -> Result<DMatrix<f64>> {
    let grid = space.grid();
    let nd = space.interior_dof_count();
    let mut m = DMatrix::zeros(nd, nd);
    for e in 0..grid.cell_count() {
        let a = grid.nodes()[e];
        let h = grid.cell_width(e);
        let mut abar = 0.0;
        for (q, w) in GAUSS3 {
            let av = coeffs.a_at(a + q * h);
            if !av.is_finite() || av <= 0.0 {
                return Err(Error::Ellipticity(format!(
                    "diffusion coefficient is {av} at x = {}",
                    a + q * h
                )));
            }
            abar += w * av;
        }
        let k = abar / h;
        scatter_local(&mut m, e, &[[k, -k], [-k, k]]);
    }
    Ok(m)
}

/// Fractional block F_ij = ∫ p phi_i (D phi_j) with D the left weighted
/// difference-derivative of order alpha and dimension weight n. Rows are
/// test functions and are computed independently in parallel.
pub fn assemble_fractional(
    space: &P1Space,
    coeffs: &CoefficientField,
    alpha: FractionalOrder,
    n: u32,
) -> Result<DMatrix<f64>> {
    let spec = KipriyanovSpec::new(alpha, n)?;
    let grid = space.grid().clone();
    let nd = space.interior_dof_count();
    let coeffs = coeffs.clone();
    let rows: Vec<Vec<f64>> = par::map_indexed(nd, move |i| {
        let k = i + 1;
        let mut row = vec![0.0; nd];
        for e in [k - 1, k] {
            let a = grid.nodes()[e];
            let h = grid.cell_width(e);
            for (q, w) in GAUSS3 {
                let x = a + q * h;
                let phi = if e == k - 1 { q } else { 1.0 - q };
                let wt = h * w * coeffs.p_at(x) * phi;
                if wt == 0.0 {
                    continue;
                }
                let drow = kipriyanov_row_at(&grid, &spec, x);
                for (rj, dj) in row.iter_mut().zip(&drow[1..=nd]) {
                    *rj += wt * dj;
                }
            }
        }
        row
    });
    let mut m = DMatrix::zeros(nd, nd);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// Exact P1 mass matrix on interior dofs.
pub fn assemble_mass(space: &P1Space) -> DMatrix<f64> {
    let grid = space.grid();
    let nd = space.interior_dof_count();
    let mut m = DMatrix::zeros(nd, nd);
    for e in 0..grid.cell_count() {
        let h = grid.cell_width(e);
        scatter_local(&mut m, e, &[[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]]);
    }
    m
}

/// Unit stiffness matrix (a ≡ 1) on interior dofs, exact.
pub fn assemble_unit_stiffness(space: &P1Space) -> DMatrix<f64> {
    let grid = space.grid();
    let nd = space.interior_dof_count();
    let mut m = DMatrix::zeros(nd, nd);
    for e in 0..grid.cell_count() {
        let k = 1.0 / grid.cell_width(e);
        scatter_local(&mut m, e, &[[k, -k], [-k, k]]);
    }
    m
}

/// Weighted mass matrix ∫ p phi_i phi_j by elementwise Gauss quadrature.
pub fn assemble_weighted_mass(space: &P1Space, coeffs: &CoefficientField) -> DMatrix<f64> {
    let grid = space.grid();
    let nd = space.interior_dof_count();
    let mut m = DMatrix::zeros(nd, nd);
    for e in 0..grid.cell_count() {
        let a = grid.nodes()[e];
        let h = grid.cell_width(e);
        let mut local = [[0.0; 2]; 2];
        for (q, w) in GAUSS3 {
            let wt = h * w * coeffs.p_at(a + q * h);
            let phi = [1.0 - q, q];
            for i in 0..2 {
                for j in 0..2 {
                    local[i][j] += wt * phi[i] * phi[j];
                }
            }
        }
        scatter_local(&mut m, e, &local);
    }
    m
}

/// Adds an element-local 2x2 block for cell `e` into the interior-dof matrix.
fn scatter_local(m: &mut DMatrix<f64>, e: usize, local: &[[f64; 2]; 2]) {
    let nd = m.nrows();
    let dof = |node: usize| -> Option<usize> { (1..=nd).contains(&node).then(|| node - 1) };
    for (li, node_i) in [e, e + 1].into_iter().enumerate() {
        let Some(i) = dof(node_i) else { continue };
        for (lj, node_j) in [e, e + 1].into_iter().enumerate() {
            let Some(j) = dof(node_j) else { continue };
            m[(i, j)] += local[li][lj];
        }
    }
}

/// Assembles every matrix of the form in one pass.
pub fn assemble_form(
    space: &P1Space,
    coeffs: &CoefficientField,
    alpha: FractionalOrder,
    n: u32,
) -> Result<AssembledForm> {
    let diffusion = assemble_diffusion(space, coeffs)?;
    let fractional = assemble_fractional(space, coeffs, alpha, n)?;
    let gram_l2 = assemble_mass(space);
    let gram_h10 = &gram_l2 + assemble_unit_stiffness(space);
    let gram_weighted = assemble_weighted_mass(space, coeffs);
    Ok(AssembledForm {
        diffusion,
        fractional,
        gram_l2,
        gram_h10,
        gram_weighted,
        a0: coeffs.a0(),
        p0: coeffs.p0(),
    })
}

/// Load vector b_i = ∫ f phi_i by elementwise Gauss quadrature.
pub fn assemble_load(space: &P1Space, f: &dyn Fn(f64) -> f64) -> Result<DVector<f64>> {
    let grid = space.grid();
    let nd = space.interior_dof_count();
    let mut b = DVector::zeros(nd);
    for e in 0..grid.cell_count() {
        let a = grid.nodes()[e];
        let h = grid.cell_width(e);
        for (q, w) in GAUSS3 {
            let x = a + q * h;
            let fv = f(x);
            if !fv.is_finite() {
                return Err(Error::Data(format!(
                    "right-hand side is not finite at x = {x}"
                )));
            }
            let phi = [1.0 - q, q];
            for (l, node) in [e, e + 1].into_iter().enumerate() {
                if (1..=nd).contains(&node) {
                    b[node - 1] += h * w * fv * phi[l];
                }
            }
        }
    }
    Ok(b)
}

/// Load vector from right-hand-side samples taken at the element Gauss
/// points, ordered cell-major: samples[3 e + k] = f at point k of cell e.
pub fn assemble_load_sampled(space: &P1Space, samples: &[f64]) -> Result<DVector<f64>> {
    let grid = space.grid();
    let nd = space.interior_dof_count();
    if samples.len() != 3 * grid.cell_count() {
        return Err(Error::Data(format!(
            "expected {} Gauss samples, got {}",
            3 * grid.cell_count(),
            samples.len()
        )));
    }
    let mut b = DVector::zeros(nd);
    for e in 0..grid.cell_count() {
        let h = grid.cell_width(e);
        for (k, (q, w)) in GAUSS3.into_iter().enumerate() {
            let fv = samples[3 * e + k];
            if !fv.is_finite() {
                return Err(Error::Data(format!(
                    "right-hand side sample {fv} at cell {e} is not finite"
                )));
            }
            let phi = [1.0 - q, q];
            for (l, node) in [e, e + 1].into_iter().enumerate() {
                if (1..=nd).contains(&node) {
                    b[node - 1] += h * w * fv * phi[l];
                }
            }
        }
    }
    Ok(b)
}

/// Solves the assembled system for interior coefficients, returning them
/// together with the max-norm Galerkin residual.
pub fn solve_assembled(form: &AssembledForm, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let system = form.system_matrix();
    let lu = system.clone().lu();
    let mut z = lu.solve(b).ok_or_else(|| {
        Error::Solve("system matrix is singular; coefficients may violate ellipticity".into())
    })?;
    if let Some(dz) = lu.solve(&(b - &system * &z)) {
        z += dz;
    }
    let residual = (b - &system * &z).amax();
    let scale = b
        .amax()
        .max(system.amax() * z.amax())
        .max(f64::MIN_POSITIVE);
    if residual > 1e-10 * scale {
        return Err(Error::Solve(format!(
            "Galerkin residual {residual:.3e} exceeds 1e-10 * {scale:.3e}"
        )));
    }
    Ok((z, residual))
}

/// Transforms M into L^-1 M L^-T where L is the Cholesky factor of a Gram
/// matrix, turning Gram-metric estimates into ordinary spectral ones.
fn metric_transform(m: &DMatrix<f64>, chol: &Cholesky<f64, Dyn>) -> Result<DMatrix<f64>> {
    let l = chol.l();
    let y = l
        .solve_lower_triangular(m)
        .ok_or_else(|| Error::Ellipticity("singular Gram factor".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Ellipticity("singular Gram factor".into()))?;
    Ok(c.transpose())
}

fn min_symmetric_eigenvalue(c: &DMatrix<f64>) -> f64 {
    let sym = (c + c.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v))
}

/// Smallest generalized eigenvalue of symmetric `s` against SPD `g`.
fn min_generalized_eigenvalue(s: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(g.clone())
        .ok_or_else(|| Error::Ellipticity("Gram matrix is not positive definite".into()))?;
    Ok(min_symmetric_eigenvalue(&metric_transform(s, &chol)?))
}

/// Largest ratio ||v||_L2 / |v|_H1-semi over the discrete space, computed
/// from the smallest generalized eigenvalue of stiffness against mass.
pub fn friedrichs_constant(space: &P1Space) -> Result<f64> {
    let stiffness = assemble_unit_stiffness(space);
    let mass = assemble_mass(space);
    let lam = min_generalized_eigenvalue(&stiffness, &mass)?;
    if lam <= 0.0 {
        return Err(Error::Ellipticity(format!(
            "stiffness spectrum bottom {lam} is not positive"
        )));
    }
    Ok(1.0 / lam.sqrt())
}

/// Measures the boundedness constant k1 (largest generalized singular value
/// of A + F against the H10 Gram), the coercivity constant k2 (smallest
/// eigenvalue of the symmetric part in the same metric), and the accretivity
/// margin of the fractional block against the L2 Gram. `lambda_used` defaults
/// to the Friedrichs constant of the space.
pub fn certify_lax_milgram(
    form: &AssembledForm,
    lambda_used: Option<f64>,
) -> Result<LaxMilgramCertificate> {
    if form.dim() < 2 {
        return Err(Error::Domain(
            "certification needs at least two interior dofs".into(),
        ));
    }
    let chol_h10 = Cholesky::new(form.gram_h10.clone())
        .ok_or_else(|| Error::Ellipticity("H10 Gram is not positive definite".into()))?;
    let system = form.system_matrix();
    let c = metric_transform(&system, &chol_h10)?;
    let k1 = c
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |m, &v| m.max(v));
    let k2 = min_symmetric_eigenvalue(&c);

    let chol_l2 = Cholesky::new(form.gram_l2.clone())
        .ok_or_else(|| Error::Ellipticity("L2 Gram is not positive definite".into()))?;
    let accretivity = min_symmetric_eigenvalue(&metric_transform(&form.fractional, &chol_l2)?);

    let lambda = match lambda_used {
        Some(l) => {
            if !l.is_finite() || l <= 0.0 {
                return Err(Error::Domain(format!(
                    "coercivity lambda must be positive, got {l}"
                )));
            }
            l
        }
        None => {
            let stiffness = &form.gram_h10 - &form.gram_l2;
            let lam = min_generalized_eigenvalue(&stiffness, &form.gram_l2)?;
            1.0 / lam.sqrt()
        }
    };
    Ok(LaxMilgramCertificate {
        k1_estimate: k1,
        k2_estimate: k2,
        k2_predicted: form.a0.min(form.p0 / (lambda * lambda)),
        accretivity_margin: accretivity,
        lambda_used: lambda,
    })
}

/// Assembles and solves B(phi_i, z) = (phi_i, f) on a fresh N-cell mesh,
/// certifying the form and checking the Galerkin residual.
pub fn solve_bvp(spec: &ProblemSpec, n_cells: usize) -> Result<SolveOutcome> {
    let grid = Arc::new(build_mesh(spec.d(), n_cells, spec.grading())?);
    spec.coeffs().validate_on(&grid)?;
    let space = P1Space::new(grid)?;
    let form = assemble_form(&space, spec.coeffs(), spec.alpha(), spec.n())?;
    let b = assemble_load(&space, &|x| spec.rhs_at(x))?;
    let (z, residual) = solve_assembled(&form, &b)?;
    let certificate = certify_lax_milgram(&form, None)?;
    let solution = space.from_interior(z.as_slice())?;
    Ok(SolveOutcome {
        solution,
        certificate,
        residual,
    })
}

/// Difference-quotient regularity probe on the interior subdomain
/// [0.2 d, 0.8 d]: for each step h, computes || chi Δ^h z' ||_L2 with a
/// cutoff chi that is 1 on the subdomain and 0 within 2h of the boundary,
/// and the ratio against ||z||_H1 + ||f||_L2.
pub fn h2_probe(
    z: &GridFunction,
    f: &GridFunction,
    spec: &ProblemSpec,
    h_list: &[f64],
) -> Result<RegularityReport> {
    let grid = z.grid();
    let d = grid.d();
    if (d - spec.d()).abs() > 1e-12 * spec.d() {
        return Err(Error::Domain(format!(
            "solution grid length {d} does not match the problem length {}",
            spec.d()
        )));
    }
    let spacing = grid
        .spacing()
        .ok_or_else(|| Error::Domain("regularity probe needs a uniform grid".into()))?;
    if h_list.is_empty() {
        return Err(Error::Domain("empty step list".into()));
    }
    let lo = 0.2 * d;
    let hi = 0.8 * d;

    let slopes: Vec<f64> = (0..grid.cell_count()).map(|e| z.slope(e)).collect();
    let zn = crate::discretization::norms(z, None);
    let fn_ = crate::discretization::norms(f, None);
    let bound_reference = zn.h1 + fn_.l2;

    let mut quotient_norms = Vec::with_capacity(h_list.len());
    let mut ratios = Vec::with_capacity(h_list.len());
    for &h in h_list {
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::Domain(format!("step must be positive, got {h}")));
        }
        if 2.0 * h >= lo {
            return Err(Error::Domain(format!(
                "step {h} violates the margin: need 2h < {lo} (distance from \
                 the subdomain to the boundary)"
            )));
        }
        let ratio = h / spacing;
        let m = ratio.round();
        if (ratio - m).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "step {h} is not an integer multiple of the spacing {spacing}"
            )));
        }
        let m = m as usize;

        // cutoff: 1 on [lo, hi], 0 outside [2h, d - 2h], linear in between
        let chi = |x: f64| -> f64 {
            let ramp_in = (x - 2.0 * h) / (lo - 2.0 * h);
            let ramp_out = (d - 2.0 * h - x) / (d - 2.0 * h - hi);
            ramp_in.min(ramp_out).clamp(0.0, 1.0)
        };

        let mut norm_sq = 0.0;
        for e in 0..grid.cell_count() {
            let shifted = if e + m < slopes.len() {
                slopes[e + m]
            } else {
                0.0
            };
            let q = (shifted - slopes[e]) / h;
            let mid = grid.nodes()[e] + 0.5 * grid.cell_width(e);
            let c = chi(mid);
            norm_sq += grid.cell_width(e) * (c * q) * (c * q);
        }
        let norm = norm_sq.sqrt();
        quotient_norms.push(norm);
        ratios.push(if bound_reference > 0.0 {
            norm / bound_reference
        } else {
            0.0
        });
    }
    Ok(RegularityReport {
        h_values: h_list.to_vec(),
        quotient_norms,
        bound_reference,
        ratios,
    })
}

/// Renders a dense matrix in coordinate text form, one `row col value` line
/// per entry, for external inspection.
pub fn export_coordinate(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push_str(&format!("{} {} {:.16e}\n", i, j, m[(i, j)]));
        }
    }
    out
}
