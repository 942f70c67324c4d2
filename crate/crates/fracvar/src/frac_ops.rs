//! Fractional differentiation and integration operators on [0, d].
//!
//! All operators act on piecewise-linear grid functions and are evaluated by
//! product integration: on every cell the operand is linear, so the integral
//! of (linear) x (singular kernel) has a closed form. Near the kernel
//! singularity t -> r the bracket [f(r) - f(t)] is expanded first, so the
//! difference cancels the strongest part of the kernel and the leading moment
//! is integrated exactly. Each evaluation point costs O(N); whole-grid
//! application costs O(N^2) and is parallelized over nodes.

use std::sync::Arc;

use nalgebra::DMatrix;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, RayGrid};
use crate::par::map_indexed;

/// Fractional order restricted to 0 < alpha < 1; endpoints are rejected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalOrder(f64);

impl FractionalOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && 0.0 < alpha && alpha < 1.0 {
            Ok(FractionalOrder(alpha))
        } else {
            Err(Error::Domain(format!(
                "fractional order must lie in the open interval (0,1), got {alpha}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Truncation radius for the cut-off difference operators, with the geometric
/// schedule used when driving the truncation to its limit.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationEpsilon {
    epsilon: f64,
    schedule: Vec<f64>,
}

impl TruncationEpsilon {
    /// Radius `epsilon` on a segment of length `d`, with the default schedule.
    pub fn new(epsilon: f64, d: f64) -> Result<Self> {
        if !(epsilon.is_finite() && 0.0 < epsilon && epsilon < d) {
            return Err(Error::Domain(format!(
                "truncation epsilon must satisfy 0 < epsilon < d = {d}, got {epsilon}"
            )));
        }
        Ok(TruncationEpsilon {
            epsilon,
            schedule: Self::default_schedule(d),
        })
    }

    /// Radius with an explicit decreasing schedule.
    pub fn with_schedule(epsilon: f64, d: f64, schedule: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(epsilon, d)?;
        if schedule.is_empty()
            || !schedule.iter().all(|e| e.is_finite() && *e > 0.0 && *e < d)
            || !schedule.windows(2).all(|w| w[1] < w[0])
        {
            return Err(Error::Domain(
                "epsilon schedule must be strictly decreasing and lie in (0, d)".into(),
            ));
        }
        out.schedule = schedule;
        Ok(out)
    }

    /// Geometric schedule d*2^-k for k = 3..=28.
    pub fn default_schedule(d: f64) -> Vec<f64> {
        (3..=28).map(|k| d * (0.5f64).powi(k)).collect()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn schedule(&self) -> &[f64] {
        &self.schedule
    }
}

/// Order, dimension weight and normalizing constant of the weighted
/// difference-derivative with kernel (r-t)^(-alpha-1) (t/r)^(n-1).
#[derive(Debug, Clone, PartialEq)]
pub struct KipriyanovSpec {
    alpha: FractionalOrder,
    n: u32,
    c_n_alpha: f64,
}

impl KipriyanovSpec {
    pub fn new(alpha: FractionalOrder, n: u32) -> Result<Self> {
        let c = gamma_coefficient(n, alpha)?;
        Ok(KipriyanovSpec {
            alpha,
            n,
            c_n_alpha: c,
        })
    }

    pub fn alpha(&self) -> FractionalOrder {
        self.alpha
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// (n-1)! / Gamma(n - alpha).
    pub fn c_n_alpha(&self) -> f64 {
        self.c_n_alpha
    }
}

/// Normalizing constant (n-1)!/Gamma(n-alpha) of the weighted derivative.
pub fn gamma_coefficient(n: u32, alpha: FractionalOrder) -> Result<f64> {
    if n < 1 {
        return Err(Error::Domain(format!(
            "dimension n must be a positive integer, got {n}"
        )));
    }
    let a = alpha.value();
    let c = gamma(n as f64) / gamma(n as f64 - a);
    if c.is_finite() && c > 0.0 {
        Ok(c)
    } else {
        Err(Error::Domain(format!(
            "normalizing constant is not a positive real for n = {n}, alpha = {a}"
        )))
    }
}

// ---------------------------------------------------------------------------
// Row builders. A row holds nodal weights w with Op(f)(r) = sum_k w[k] f_k
// for the piecewise-linear interpolant f. Everything downstream (whole-grid
// application, matrix assembly, bilinear-form quadrature) reuses these.
// ---------------------------------------------------------------------------

/// Snaps `r` onto a node when it sits within relative 1e-12 of one. A cell
/// split that close to the kernel singularity produces moments of size
/// sliver^(-alpha) that cancel catastrophically in the row weights; snapping
/// moves the evaluation point by a negligible O(1e-12 d) instead.
fn snap_to_node(grid: &RayGrid, r: f64) -> f64 {
    if !(0.0..=grid.d()).contains(&r) {
        return r;
    }
    let e = grid.locate(r);
    let tol = 1e-12 * grid.d();
    for &x in &grid.nodes()[e..=e + 1] {
        if (r - x).abs() <= tol {
            return x;
        }
    }
    r
}

/// Adds `c * f(r)` to the row: `r` sits in cell `e`, so f(r) splits onto the
/// two cell nodes barycentrically.
fn add_point_value(w: &mut [f64], grid: &RayGrid, r: f64, c: f64) {
    let e = grid.locate(r);
    let theta = (r - grid.nodes()[e]) / grid.cell_width(e);
    w[e] += c * (1.0 - theta);
    w[e + 1] += c * theta;
}

/// Accumulates the right-sided bracket integral
/// `int_{a0}^{d} [f(r) - f(t)] (t-r)^(-alpha-1) dt`, `r < a0 <= d`,
/// scaled by `scale`, into the row. Kernel moments against 1 and (t-a) are
/// closed forms per cell, so the piecewise-linear operand is integrated
/// exactly.
fn add_right_bracket_tail(w: &mut [f64], grid: &RayGrid, alpha: f64, r: f64, a0: f64, scale: f64) {
    let nodes = grid.nodes();
    let n_cells = grid.cell_count();
    let d = grid.d();
    if a0 >= d {
        return;
    }
    let mut fr_weight = 0.0f64; // accumulated coefficient of f(r)
    let mut e = grid.locate(a0);
    // Leading (possibly partial) cell [a0, x_{e+1}].
    {
        let a = nodes[e];
        let b = nodes[e + 1];
        let h = b - a;
        if b > a0 {
            let pa = (a0 - r).powf(-alpha);
            let pb = (b - r).powf(-alpha);
            let k0 = (pa - pb) / alpha;
            let l1 = ((b - r) * pb - (a0 - r) * pa) / (1.0 - alpha);
            let k1 = l1 - (a0 - r) * k0;
            // f on [a0, b] is linear: f(t) = f(a0) + s*(t - a0).
            let theta = (a0 - a) / h;
            fr_weight += k0;
            let c_fa0 = -scale * k0;
            w[e] += c_fa0 * (1.0 - theta);
            w[e + 1] += c_fa0 * theta;
            let c_s = -scale * k1 / h;
            w[e] -= c_s;
            w[e + 1] += c_s;
        }
        e += 1;
    }
    // Full cells.
    for j in e..n_cells {
        let a = nodes[j];
        let b = nodes[j + 1];
        let h = b - a;
        let pa = (a - r).powf(-alpha);
        let pb = (b - r).powf(-alpha);
        let k0 = (pa - pb) / alpha;
        let l1 = ((b - r) * pb - (a - r) * pa) / (1.0 - alpha);
        let k1 = l1 - (a - r) * k0;
        fr_weight += k0;
        w[j] += scale * (-k0 + k1 / h);
        w[j + 1] -= scale * k1 / h;
    }
    add_point_value(w, grid, r, scale * fr_weight);
}

/// Accumulates the singular leading piece of the right-sided bracket integral,
/// `int_r^{b1} [f(r) - f(t)] (t-r)^(-alpha-1) dt` where [r, b1] lies inside one
/// cell: there f(r) - f(t) = -s (t-r) exactly, leaving an integrable moment.
fn add_right_singular_head(w: &mut [f64], grid: &RayGrid, alpha: f64, r: f64, scale: f64) {
    let e = grid.locate(r);
    let b1 = grid.nodes()[e + 1];
    let h = grid.cell_width(e);
    if b1 <= r {
        return;
    }
    let m = (b1 - r).powf(1.0 - alpha) / (1.0 - alpha);
    // contribution: -s * m with s the cell slope
    let c = -scale * m / h;
    w[e] -= c;
    w[e + 1] += c;
}

/// Row of the untruncated right-sided difference derivative (the epsilon -> 0
/// limit) at `r < d`:
/// `(1/Gamma(1-alpha)) f(r) (d-r)^(-alpha) + (alpha/Gamma(1-alpha)) *
///  int_r^d [f(r)-f(t)] (t-r)^(-alpha-1) dt`.
fn marchaud_limit_row(grid: &RayGrid, alpha: f64, r: f64) -> Vec<f64> {
    let d = grid.d();
    let r = snap_to_node(grid, r);
    debug_assert!(r < d);
    let mut w = vec![0.0; grid.node_count()];
    let inv_g = 1.0 / gamma(1.0 - alpha);
    let beta = alpha * inv_g;
    add_point_value(&mut w, grid, r, inv_g * (d - r).powf(-alpha));
    add_right_singular_head(&mut w, grid, alpha, r, beta);
    let b1 = grid.nodes()[grid.locate(r) + 1];
    add_right_bracket_tail(&mut w, grid, alpha, r, b1, beta);
    w
}

/// Row of the truncated right-sided difference derivative at radius `eps`.
/// For r > d - eps both the boundary kernel value and the boundary branch of
/// the cut-off integral carry (d-r)^(-alpha); the two cancel algebraically and
/// the row reduces to f(r) eps^(-alpha) / Gamma(1-alpha), which is also the
/// value assigned at r = d.
fn marchaud_truncated_row(grid: &RayGrid, alpha: f64, eps: f64, r: f64) -> Vec<f64> {
    let d = grid.d();
    let mut w = vec![0.0; grid.node_count()];
    let inv_g = 1.0 / gamma(1.0 - alpha);
    if r > d - eps {
        add_point_value(&mut w, grid, r, inv_g * eps.powf(-alpha));
        return w;
    }
    let beta = alpha * inv_g;
    add_point_value(&mut w, grid, r, inv_g * (d - r).powf(-alpha));
    add_right_bracket_tail(&mut w, grid, alpha, r, r + eps, beta);
    w
}

/// Row of the cut-off bracket integral psi at `r <= d - eps`:
/// `int_{r+eps}^d [f(r) - f(t)] (t-r)^(-alpha-1) dt`.
fn psi_row(grid: &RayGrid, alpha: f64, eps: f64, r: f64) -> Vec<f64> {
    let mut w = vec![0.0; grid.node_count()];
    add_right_bracket_tail(&mut w, grid, alpha, r, r + eps, 1.0);
    w
}

/// Row of the weighted left-sided difference derivative at `r` in (0, d]:
/// `(alpha/Gamma(1-alpha)) int_0^r [f(r)-f(t)] (r-t)^(-alpha-1) (t/r)^(n-1) dt
///  + C f(r) r^(-alpha)`, C = (n-1)!/Gamma(n-alpha).
///
/// The dimension weight is expanded as t^(n-1) = sum_q binom(n-1,q) (-1)^q
/// r^(n-1-q) (r-t)^q, so every cell moment is again a closed form.
fn kipriyanov_row(grid: &RayGrid, spec: &KipriyanovSpec, r: f64) -> Vec<f64> {
    let alpha = spec.alpha().value();
    let n = spec.n();
    let r = snap_to_node(grid, r);
    let nodes = grid.nodes();
    let mut w = vec![0.0; grid.node_count()];
    debug_assert!(r > 0.0 && r <= grid.d());
    let beta = alpha / gamma(1.0 - alpha);

    // gamma_q = binom(n-1, q) (-1)^q r^(-q), collapsing (t/r)^(n-1) onto
    // powers of (r - t).
    let m = (n - 1) as usize;
    let mut gq = Vec::with_capacity(m + 1);
    let mut binom = 1.0f64;
    for q in 0..=m {
        if q > 0 {
            binom *= (m - q + 1) as f64 / q as f64;
        }
        let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
        gq.push(binom * sign * r.powi(-(q as i32)));
    }

    // Trailing singular piece [a_last, r]: bracket = s (r - t) exactly.
    let e = grid.locate(r);
    let (a_last, s_cell) = if r > nodes[e] {
        (nodes[e], e)
    } else {
        // r coincides with node e; the piece is the full cell to its left.
        (nodes[e - 1], e - 1)
    };
    {
        let width = r - a_last;
        let base = width.powf(1.0 - alpha);
        let mut wq = base; // width^(q+1-alpha)
        let mut head = 0.0f64;
        for (q, &g) in gq.iter().enumerate() {
            head += g * wq / (q as f64 + 1.0 - alpha);
            wq *= width;
        }
        let h = grid.cell_width(s_cell);
        let c = beta * head / h;
        w[s_cell] -= c;
        w[s_cell + 1] += c;
    }

    // Full cells strictly left of the singular piece.
    let mut fr_weight = 0.0f64;
    for j in 0..s_cell {
        let a = nodes[j];
        let b = nodes[j + 1];
        let h = b - a;
        let ra = r - a;
        let rb = r - b;
        let pa = ra.powf(-alpha);
        let pb = rb.powf(-alpha);
        // iq[q] = int_a^b (r-t)^(q-alpha-1) dt, q = 0..=n
        let mut w0 = 0.0f64;
        let mut w1_sub = 0.0f64;
        let mut ra_q = pa; // ra^(q-alpha) running power
        let mut rb_q = pb;
        for q in 0..=m + 1 {
            let iq = (ra_q - rb_q) / (q as f64 - alpha);
            if q <= m {
                w0 += gq[q] * iq;
            }
            if q >= 1 {
                w1_sub += gq[q - 1] * iq;
            }
            ra_q *= ra;
            rb_q *= rb;
        }
        let w1 = ra * w0 - w1_sub;
        fr_weight += w0;
        w[j] += beta * (-w0 + w1 / h);
        w[j + 1] -= beta * w1 / h;
    }
    add_point_value(&mut w, grid, r, beta * fr_weight);

    // Local boundary-weight term.
    add_point_value(&mut w, grid, r, spec.c_n_alpha() * r.powf(-alpha));
    w
}

/// Row of the right-sided fractional integral at `r <= d`:
/// `(1/Gamma(alpha)) int_r^d f(t) (t-r)^(alpha-1) dt`.
fn integral_row(grid: &RayGrid, alpha: f64, r: f64) -> Vec<f64> {
    let nodes = grid.nodes();
    let n_cells = grid.cell_count();
    let d = grid.d();
    let mut w = vec![0.0; grid.node_count()];
    if r >= d {
        return w;
    }
    let scale = 1.0 / gamma(alpha);
    // Leading (possibly partial) cell [r, x_{e+1}]: f(t) = f(r) + s (t - r).
    let mut e = grid.locate(r);
    {
        let b = nodes[e + 1];
        let h = grid.cell_width(e);
        let m0 = (b - r).powf(alpha) / alpha;
        let m1 = (b - r).powf(alpha + 1.0) / (alpha + 1.0);
        add_point_value(&mut w, grid, r, scale * m0);
        let c_s = scale * m1 / h;
        w[e] -= c_s;
        w[e + 1] += c_s;
        e += 1;
    }
    for j in e..n_cells {
        let a = nodes[j];
        let b = nodes[j + 1];
        let h = b - a;
        let pa = (a - r).powf(alpha);
        let pb = (b - r).powf(alpha);
        let m0 = (pb - pa) / alpha;
        let m1 = ((b - r) * pb - (a - r) * pa) / (alpha + 1.0) - (a - r) * m0;
        w[j] += scale * (m0 - m1 / h);
        w[j + 1] += scale * m1 / h;
    }
    w
}

fn dot(w: &[f64], f: &GridFunction) -> f64 {
    w.iter().zip(f.values()).map(|(a, b)| a * b).sum()
}

// ---------------------------------------------------------------------------
// Public operators.
// ---------------------------------------------------------------------------

/// Right-sided fractional integral of order `alpha`, evaluated at every node.
/// The value at r = d is 0 (empty integration range).
pub fn fractional_integral_right(f: &GridFunction, alpha: FractionalOrder) -> GridFunction {
    let grid = f.grid();
    let a = alpha.value();
    let values = map_indexed(grid.node_count(), |i| {
        dot(&integral_row(grid, a, grid.nodes()[i]), f)
    });
    GridFunction::new(grid.clone(), values).expect("closed-form moments stay finite")
}

/// Cut-off bracket integral of the right-sided construction, evaluated at
/// every node. For r <= d - eps this is the tail integral from r + eps to d;
/// beyond that the boundary branch `(f(r)/alpha)(eps^(-alpha) - (d-r)^(-alpha))`
/// applies. At r = d the kernel distance d - r is clamped to eps, which gives
/// 0 and matches the boundary convention of the truncated derivative.
pub fn psi_minus(
    f: &GridFunction,
    alpha: FractionalOrder,
    eps: &TruncationEpsilon,
) -> Result<GridFunction> {
    let grid = f.grid();
    let d = grid.d();
    let a = alpha.value();
    let e = eps.epsilon();
    if e >= d {
        return Err(Error::Domain(format!(
            "truncation epsilon {e} must be smaller than the segment length {d}"
        )));
    }
    let values = map_indexed(grid.node_count(), |i| {
        let r = grid.nodes()[i];
        if r <= d - e {
            dot(&psi_row(grid, a, e, r), f)
        } else if r < d {
            f.values()[i] / a * (e.powf(-a) - (d - r).powf(-a))
        } else {
            0.0
        }
    });
    GridFunction::new(grid.clone(), values)
}

/// Truncated right-sided difference derivative at radius `eps`, evaluated at
/// every node. For r > d - eps (including r = d) the boundary singularities
/// cancel algebraically and the value is f(r) eps^(-alpha) / Gamma(1-alpha).
pub fn marchaud_truncated_right(
    f: &GridFunction,
    alpha: FractionalOrder,
    eps: &TruncationEpsilon,
) -> Result<GridFunction> {
    let grid = f.grid();
    let d = grid.d();
    let a = alpha.value();
    let e = eps.epsilon();
    if e >= d {
        return Err(Error::Domain(format!(
            "truncation epsilon {e} must be smaller than the segment length {d}"
        )));
    }
    let values = map_indexed(grid.node_count(), |i| {
        dot(&marchaud_truncated_row(grid, a, e, grid.nodes()[i]), f)
    });
    GridFunction::new(grid.clone(), values)
}

/// Truncated right-sided difference derivative at an arbitrary point.
pub fn marchaud_truncated_right_at(
    f: &GridFunction,
    alpha: FractionalOrder,
    eps: &TruncationEpsilon,
    r: f64,
) -> Result<f64> {
    let grid = f.grid();
    if !(0.0..=grid.d()).contains(&r) {
        return Err(Error::Domain(format!(
            "evaluation point {r} lies outside [0, {}]",
            grid.d()
        )));
    }
    Ok(dot(
        &marchaud_truncated_row(grid, alpha.value(), eps.epsilon(), r),
        f,
    ))
}

/// Result of driving the truncated right-sided derivative to its limit.
#[derive(Debug, Clone)]
pub struct MarchaudRightLimit {
    /// The limit derivative. At r = d the limit diverges unless f vanishes
    /// there; in that case the node carries the truncated value at the
    /// achieved radius and is excluded (zero-weighted) from the limit norms.
    pub values: GridFunction,
    /// First schedule radius at which successive truncations differ by less
    /// than the tolerance.
    pub achieved_epsilon: f64,
    /// L_p distance between the last two truncation iterates.
    pub last_distance: f64,
}

/// Right-sided difference derivative as the L_p limit of its truncations.
///
/// Successive truncations over the geometric schedule are compared in the
/// L_p grid norm (final node zero-weighted) until they differ by less than
/// `tol`; failure to converge within the schedule is an error carrying the
/// last distance. The returned values are the exact schedule limit: the
/// untruncated bracket integral evaluated in closed form per cell, which the
/// iterates approach at rate eps^(1-alpha).
///
/// Unless f vanishes identically near r = d the boundary branch scales like
/// eps^(-alpha), and the truncation family is L_p-bounded only when
/// alpha * p < 1; other combinations are rejected.
pub fn marchaud_right(
    f: &GridFunction,
    alpha: FractionalOrder,
    p_exponent: f64,
    tol: f64,
) -> Result<MarchaudRightLimit> {
    if !(p_exponent.is_finite() && p_exponent >= 1.0) {
        return Err(Error::Domain(format!(
            "limit-norm exponent must be a real >= 1, got {p_exponent}"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Domain(format!(
            "limit tolerance must be positive, got {tol}"
        )));
    }
    let grid = f.grid();
    let d = grid.d();
    let a = alpha.value();
    let schedule = TruncationEpsilon::default_schedule(d);

    // Piecewise-linear operands are Lipschitz, so the boundary branch
    // f(r) eps^(-alpha) stays L_p-bounded whenever f(d) = 0; otherwise the
    // strip contributes eps^(1 - alpha p), which must vanish.
    let vanishes_at_d = *f.values().last().unwrap() == 0.0;
    if !vanishes_at_d && a * p_exponent >= 1.0 {
        return Err(Error::Domain(format!(
            "operand does not vanish near r = d, so the truncation family is \
             L_p-unbounded for alpha * p = {} >= 1",
            a * p_exponent
        )));
    }

    let truncated = |eps: f64| -> GridFunction {
        let values = map_indexed(grid.node_count(), |i| {
            dot(&marchaud_truncated_row(grid, a, eps, grid.nodes()[i]), f)
        });
        GridFunction::new(grid.clone(), values).expect("truncated rows stay finite")
    };

    let mut prev = truncated(schedule[0]);
    let mut achieved = None;
    let mut last_distance = f64::INFINITY;
    for &eps in &schedule[1..] {
        let cur = truncated(eps);
        let diff = cur.lin_comb(1.0, &prev, -1.0)?;
        last_distance = diff.lp_node_norm(p_exponent, true);
        if last_distance < tol {
            achieved = Some(eps);
            break;
        }
        prev = cur;
    }
    let achieved = achieved.ok_or(Error::Convergence {
        message: format!(
            "truncation schedule exhausted at eps = {:e} without meeting tol = {tol:e}",
            schedule[schedule.len() - 1]
        ),
        last_distance,
    })?;

    let n = grid.node_count();
    let mut values = map_indexed(n - 1, |i| {
        dot(&marchaud_limit_row(grid, a, grid.nodes()[i]), f)
    });
    let f_d = f.values()[n - 1];
    values.push(if f_d == 0.0 {
        0.0
    } else {
        f_d * achieved.powf(-a) / gamma(1.0 - a)
    });
    Ok(MarchaudRightLimit {
        values: GridFunction::new(grid.clone(), values)?,
        achieved_epsilon: achieved,
        last_distance,
    })
}

/// Weighted left-sided difference derivative evaluated at every node.
#[derive(Debug, Clone)]
pub struct KipriyanovLeft {
    /// Operator values. Node 0 stores 0; when the operand does not vanish at
    /// r = 0 the true value diverges and `endpoint_singular` records that.
    pub values: GridFunction,
    /// True when f(0) != 0, so the local term f(r) r^(-alpha) blows up at 0.
    pub endpoint_singular: bool,
}

/// Weighted left-sided difference derivative of `f`, evaluated at every node.
/// The value at r = 0 is 0 when f(0) = 0 and flagged endpoint-singular
/// otherwise.
pub fn kipriyanov_left(f: &GridFunction, spec: &KipriyanovSpec) -> Result<KipriyanovLeft> {
    let grid = f.grid();
    let values = map_indexed(grid.node_count(), |i| {
        if i == 0 {
            0.0
        } else {
            dot(&kipriyanov_row(grid, spec, grid.nodes()[i]), f)
        }
    });
    Ok(KipriyanovLeft {
        values: GridFunction::new(grid.clone(), values)?,
        endpoint_singular: f.values()[0] != 0.0,
    })
}

/// Weighted left-sided difference derivative at an arbitrary point r in (0, d].
pub fn kipriyanov_left_at(f: &GridFunction, spec: &KipriyanovSpec, r: f64) -> Result<f64> {
    let grid = f.grid();
    if !(r > 0.0 && r <= grid.d()) {
        return Err(Error::Domain(format!(
            "evaluation point {r} lies outside (0, {}]",
            grid.d()
        )));
    }
    Ok(dot(&kipriyanov_row(grid, spec, r), f))
}

// ---------------------------------------------------------------------------
// Matrix forms. Operators are linear functionals of the nodal values, so each
// evaluation row stacks into a dense matrix; application is then a matvec and
// linearity is exact by construction.
// ---------------------------------------------------------------------------

fn stack_rows(grid: &Arc<RayGrid>, row: impl Fn(usize) -> Vec<f64> + Sync + Send) -> DMatrix<f64> {
    let n = grid.node_count();
    let rows = map_indexed(n, row);
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Node-by-node matrix of the right-sided limit derivative. The row for
/// r = d is zero; see [`marchaud_right`] for the endpoint convention.
pub fn marchaud_right_matrix(grid: &Arc<RayGrid>, alpha: FractionalOrder) -> DMatrix<f64> {
    let a = alpha.value();
    let n = grid.node_count();
    stack_rows(grid, |i| {
        if i == n - 1 {
            vec![0.0; n]
        } else {
            marchaud_limit_row(grid, a, grid.nodes()[i])
        }
    })
}

/// Node-by-node matrix of the truncated right-sided derivative.
pub fn marchaud_truncated_right_matrix(
    grid: &Arc<RayGrid>,
    alpha: FractionalOrder,
    eps: &TruncationEpsilon,
) -> DMatrix<f64> {
    let a = alpha.value();
    let e = eps.epsilon();
    stack_rows(grid, |i| {
        marchaud_truncated_row(grid, a, e, grid.nodes()[i])
    })
}

/// Node-by-node matrix of the weighted left-sided derivative. The row for
/// r = 0 is zero; see [`kipriyanov_left`] for the endpoint convention.
pub fn kipriyanov_left_matrix(grid: &Arc<RayGrid>, spec: &KipriyanovSpec) -> DMatrix<f64> {
    let n = grid.node_count();
    stack_rows(grid, |i| {
        if i == 0 {
            vec![0.0; n]
        } else {
            kipriyanov_row(grid, spec, grid.nodes()[i])
        }
    })
}

/// Node-by-node matrix of the right-sided fractional integral.
pub fn fractional_integral_right_matrix(
    grid: &Arc<RayGrid>,
    alpha: FractionalOrder,
) -> DMatrix<f64> {
    let a = alpha.value();
    stack_rows(grid, |i| integral_row(grid, a, grid.nodes()[i]))
}

/// Row of the weighted left-sided derivative at an arbitrary point, exposed
/// for bilinear-form assembly.
pub(crate) fn kipriyanov_row_at(grid: &RayGrid, spec: &KipriyanovSpec, r: f64) -> Vec<f64> {
    kipriyanov_row(grid, spec, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_mesh, interpolate, Grading};
    use approx::assert_relative_eq;

    const INV_GAMMA_HALF: f64 = std::f64::consts::FRAC_2_SQRT_PI / 2.0; // 1/Gamma(1/2)
    const INV_GAMMA_3_HALVES: f64 = std::f64::consts::FRAC_2_SQRT_PI; // 1/Gamma(3/2)

    fn uniform(n: usize) -> Arc<RayGrid> {
        Arc::new(build_mesh(1.0, n, Grading::Uniform).unwrap())
    }

    #[test]
    fn order_and_epsilon_reject_bad_values() {
        assert!(FractionalOrder::new(0.0).is_err());
        assert!(FractionalOrder::new(1.0).is_err());
        assert!(FractionalOrder::new(1.5).is_err());
        assert!(FractionalOrder::new(f64::NAN).is_err());
        assert!(FractionalOrder::new(0.5).is_ok());
        assert!(TruncationEpsilon::new(0.0, 1.0).is_err());
        assert!(TruncationEpsilon::new(1.0, 1.0).is_err());
        assert!(TruncationEpsilon::with_schedule(0.1, 1.0, vec![0.2, 0.3]).is_err());
    }

    #[test]
    fn gamma_coefficient_matches_closed_forms() {
        let half = FractionalOrder::new(0.5).unwrap();
        // n = 1: 0!/Gamma(1/2) = 1/sqrt(pi)
        assert_relative_eq!(
            gamma_coefficient(1, half).unwrap(),
            INV_GAMMA_HALF,
            max_relative = 1e-14
        );
        // n = 2: 1!/Gamma(3/2) = 2/sqrt(pi)
        assert_relative_eq!(
            gamma_coefficient(2, half).unwrap(),
            INV_GAMMA_3_HALVES,
            max_relative = 1e-14
        );
        // n = 3: 2!/Gamma(5/2) = 8/(3 sqrt(pi))
        assert_relative_eq!(
            gamma_coefficient(3, half).unwrap(),
            1.5045055561273502,
            max_relative = 1e-14
        );
        assert!(gamma_coefficient(0, half).is_err());
    }

    #[test]
    fn integral_of_constant_is_power_law() {
        let grid = uniform(64);
        let alpha = FractionalOrder::new(0.5).unwrap();
        let f = interpolate(|_| 1.0, &grid).unwrap();
        let out = fractional_integral_right(&f, alpha);
        // (d-r)^alpha / Gamma(alpha+1), exact for piecewise-linear operands
        for (x, v) in grid.nodes().iter().zip(out.values()) {
            let want = (1.0 - x).sqrt() * INV_GAMMA_3_HALVES;
            assert_relative_eq!(*v, want, epsilon = 1e-13);
        }
        assert_eq!(out.values()[grid.node_count() - 1], 0.0);
    }

    #[test]
    fn integral_of_zero_is_zero() {
        let grid = uniform(16);
        let alpha = FractionalOrder::new(0.25).unwrap();
        let f = GridFunction::zeros(grid);
        let out = fractional_integral_right(&f, alpha);
        assert!(out.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn psi_of_constant_vanishes_on_integral_branch() {
        let grid = uniform(32);
        let alpha = FractionalOrder::new(0.5).unwrap();
        let eps = TruncationEpsilon::new(0.1, 1.0).unwrap();
        let f = interpolate(|_| 3.0, &grid).unwrap();
        let out = psi_minus(&f, alpha, &eps).unwrap();
        for (x, v) in grid.nodes().iter().zip(out.values()) {
            if *x <= 0.9 {
                assert!(v.abs() < 1e-12, "psi({x}) = {v}");
            } else if *x < 1.0 {
                let want = 3.0 / 0.5 * (0.1f64.powf(-0.5) - (1.0 - x).powf(-0.5));
                assert_relative_eq!(*v, want, max_relative = 1e-12);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn psi_of_identity_matches_closed_form() {
        // f(t) = t, alpha = 1/2, eps = 0.1, r = 0.5:
        // int_{0.6}^{1} (0.5 - t)(t - 0.5)^{-3/2} dt = 2(sqrt(0.1) - sqrt(0.5))
        let grid = uniform(40); // nodes align with r = 0.5 and r + eps = 0.6
        let alpha = FractionalOrder::new(0.5).unwrap();
        let eps = TruncationEpsilon::new(0.1, 1.0).unwrap();
        let f = interpolate(|t| t, &grid).unwrap();
        let out = psi_minus(&f, alpha, &eps).unwrap();
        let want = 2.0 * (0.1f64.sqrt() - 0.5f64.sqrt());
        assert_relative_eq!(out.value_at(0.5), want, max_relative = 1e-12);
    }

    #[test]
    fn truncated_derivative_of_constant_matches_both_branches() {
        let grid = uniform(32);
        let alpha = FractionalOrder::new(0.5).unwrap();
        let eps = TruncationEpsilon::new(0.125, 1.0).unwrap();
        let c = 2.0;
        let f = interpolate(|_| c, &grid).unwrap();
        let out = marchaud_truncated_right(&f, alpha, &eps).unwrap();
        for (x, v) in grid.nodes().iter().zip(out.values()) {
            let want = if *x <= 1.0 - 0.125 {
                c * (1.0 - x).powf(-0.5) * INV_GAMMA_HALF
            } else {
                c * 0.125f64.powf(-0.5) * INV_GAMMA_HALF
            };
            assert_relative_eq!(*v, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn truncated_derivative_of_zero_is_zero() {
        let grid = uniform(16);
        let alpha = FractionalOrder::new(0.75).unwrap();
        let eps = TruncationEpsilon::new(0.25, 1.0).unwrap();
        let f = GridFunction::zeros(grid);
        let out = marchaud_truncated_right(&f, alpha, &eps).unwrap();
        assert!(out.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn limit_derivative_of_power_law_is_exact() {
        // f(r) = (d - r): the interpolant is exact, so the closed-form limit
        // Gamma(2)/Gamma(2-alpha) (d-r)^(1-alpha) holds to rounding.
        let grid = uniform(128);
        for &a in &[0.25, 0.5, 0.75] {
            let alpha = FractionalOrder::new(a).unwrap();
            let f = interpolate(|t| 1.0 - t, &grid).unwrap();
            let p = (0.9 / a).min(2.0);
            let out = marchaud_right(&f, alpha, p, 5e-3).unwrap();
            for (x, v) in grid.nodes().iter().zip(out.values.values()) {
                if *x < 1.0 {
                    let want = (1.0 - x).powf(1.0 - a) / gamma(2.0 - a);
                    assert_relative_eq!(*v, want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn limit_value_matches_frozen_reference() {
        // f = 1 - r, alpha = 1/2, r = 1/2: Gamma(2)/Gamma(3/2) sqrt(1/2)
        let grid = uniform(64);
        let alpha = FractionalOrder::new(0.5).unwrap();
        let f = interpolate(|t| 1.0 - t, &grid).unwrap();
        let out = marchaud_right(&f, alpha, 1.5, 1e-3).unwrap();
        assert_relative_eq!(
            out.values.value_at(0.5),
            0.7978845608028654,
            max_relative = 1e-12
        );
    }

    #[test]
    fn limit_derivative_of_constant_matches_kernel_power() {
        let grid = uniform(256);
        let alpha = FractionalOrder::new(0.5).unwrap();
        let f = interpolate(|_| 1.0, &grid).unwrap();
        let out = marchaud_right(&f, alpha, 1.5, 1e-9).unwrap();
        for (x, v) in grid.nodes().iter().zip(out.values.values()) {
            if *x <= 0.9 {
                let want = (1.0 - x).powf(-0.5) * INV_GAMMA_HALF;
                assert_relative_eq!(*v, want, max_relative = 1e-9);
            }
        }
        assert!(out.achieved_epsilon > 0.0);
    }

    #[test]
    fn limit_rejects_unbounded_truncation_family() {
        let grid = uniform(32);
        let alpha = FractionalOrder::new(0.75).unwrap();
        let f = interpolate(|_| 1.0, &grid).unwrap();
        let err = marchaud_right(&f, alpha, 2.0, 1e-6).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn limit_allows_large_p_when_f_vanishes_near_d() {
        let grid = uniform(64);
        let alpha = FractionalOrder::new(0.75).unwrap();
        // supported on [0, 1/2]: vanishes on the widest truncation strip
        let f = interpolate(|t| if t < 0.5 { (0.5 - t) * t } else { 0.0 }, &grid).unwrap();
        // successive distances decay like eps^(1 - alpha), so the tolerance
        // has to respect the order: eps_min^0.25 is only a few 1e-3 here
        let out = marchaud_right(&f, alpha, 4.0, 1e-3);
        assert!(out.is_ok());
    }

    #[test]
    fn truncation_distances_decrease_along_schedule() {
        let grid = uniform(128);
        let alpha = FractionalOrder::new(0.5).unwrap();
        let f = interpolate(|t| t * (1.0 - t), &grid).unwrap();
        let schedule = TruncationEpsilon::default_schedule(1.0);
        let mut prev_fn = None;
        let mut dists = Vec::new();
        for &e in &schedule[..8] {
            let eps = TruncationEpsilon::new(e, 1.0).unwrap();
            let cur = marchaud_truncated_right(&f, alpha, &eps).unwrap();
            if let Some(p) = prev_fn {
                let diff = cur.lin_comb(1.0, &p, -1.0).unwrap();
                dists.push(diff.lp_node_norm(2.0, true));
            }
            prev_fn = Some(cur);
        }
        for w in dists.windows(2) {
            assert!(w[1] < w[0] * 1.05, "distances not decreasing: {dists:?}");
        }
    }

    #[test]
    fn kipriyanov_of_constant_is_local_term() {
        let grid = uniform(64);
        let alpha = FractionalOrder::new(0.5).unwrap();
        let spec = KipriyanovSpec::new(alpha, 1).unwrap();
        let f = interpolate(|_| 2.0, &grid).unwrap();
        let out = kipriyanov_left(&f, &spec).unwrap();
        assert!(out.endpoint_singular);
        for (x, v) in grid.nodes().iter().zip(out.values.values()).skip(1) {
            let want = 2.0 * x.powf(-0.5) * INV_GAMMA_HALF;
            assert_relative_eq!(*v, want, max_relative = 1e-11);
        }
    }

    #[test]
    fn kipriyanov_of_identity_matches_power_law() {
        // f(r) = r, n = 1: r^(1-alpha)/Gamma(2-alpha), exact on the interpolant
        let grid = uniform(64);
        let alpha = FractionalOrder::new(0.5).unwrap();
        let spec = KipriyanovSpec::new(alpha, 1).unwrap();
        let f = interpolate(|t| t, &grid).unwrap();
        let out = kipriyanov_left(&f, &spec).unwrap();
        assert!(!out.endpoint_singular);
        for (x, v) in grid.nodes().iter().zip(out.values.values()).skip(1) {
            let want = x.sqrt() / gamma(1.5);
            assert_relative_eq!(*v, want, max_relative = 1e-11);
        }
    }

    #[test]
    fn kipriyanov_n1_equals_reflected_right_derivative() {
        // With unit weight the left-sided construction is the mirror image of
        // the right-sided one: D_left f (r) = D_right (f o reflect) (d - r).
        let grid = uniform(100);
        let alpha = FractionalOrder::new(0.4).unwrap();
        let spec = KipriyanovSpec::new(alpha, 1).unwrap();
        let f = interpolate(|t| t * t * (1.0 - 0.5 * t), &grid).unwrap();
        let refl = interpolate(
            |t| {
                let s = 1.0 - t;
                s * s * (1.0 - 0.5 * s)
            },
            &grid,
        )
        .unwrap();
        let left = kipriyanov_left(&f, &spec).unwrap();
        for (i, &r) in grid.nodes().iter().enumerate().skip(1) {
            let mirrored = dot(&marchaud_limit_row(&grid, 0.4, 1.0 - r), &refl);
            assert_relative_eq!(
                left.values.values()[i],
                mirrored,
                max_relative = 1e-10,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn operators_are_linear() {
        let grid = uniform(48);
        let alpha = FractionalOrder::new(0.6).unwrap();
        let spec = KipriyanovSpec::new(alpha, 2).unwrap();
        let f = interpolate(|t| (3.1 * t).sin(), &grid).unwrap();
        let g = interpolate(|t| t * t, &grid).unwrap();
        let comb = f.lin_comb(2.0, &g, -3.0).unwrap();

        let k_f = kipriyanov_left(&f, &spec).unwrap().values;
        let k_g = kipriyanov_left(&g, &spec).unwrap().values;
        let k_comb = kipriyanov_left(&comb, &spec).unwrap().values;
        let want = k_f.lin_comb(2.0, &k_g, -3.0).unwrap();
        for (a, b) in k_comb.values().iter().zip(want.values()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-11, epsilon = 1e-11);
        }

        let m = fractional_integral_right_matrix(&grid, alpha);
        let fv = nalgebra::DVector::from_column_slice(f.values());
        let gv = nalgebra::DVector::from_column_slice(g.values());
        let lhs = &m * (2.0 * &fv - 3.0 * &gv);
        let rhs = 2.0 * (&m * fv) - 3.0 * (&m * gv);
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12, epsilon = 1e-13);
        }
    }

    #[test]
    fn matrix_apply_agrees_with_direct_apply() {
        let grid = uniform(32);
        let alpha = FractionalOrder::new(0.5).unwrap();
        let f = interpolate(|t| t * (1.0 - t), &grid).unwrap();
        let m = marchaud_right_matrix(&grid, alpha);
        let direct = marchaud_right(&f, alpha, 2.0, 1e-4).unwrap();
        let via_matrix = &m * nalgebra::DVector::from_column_slice(f.values());
        for i in 0..grid.node_count() - 1 {
            assert_relative_eq!(
                via_matrix[i],
                direct.values.values()[i],
                max_relative = 1e-12,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn graded_grid_evaluations_stay_finite_and_consistent() {
        let grid = Arc::new(build_mesh(1.0, 64, Grading::Graded(2.0)).unwrap());
        let alpha = FractionalOrder::new(0.5).unwrap();
        let f = interpolate(|t| 1.0 - t, &grid).unwrap();
        let out = marchaud_right(&f, alpha, 1.5, 5e-3).unwrap();
        for (x, v) in grid.nodes().iter().zip(out.values.values()) {
            if *x < 1.0 {
                let want = (1.0 - x).powf(0.5) / gamma(1.5);
                assert_relative_eq!(*v, want, epsilon = 1e-11);
            }
        }
    }
}
