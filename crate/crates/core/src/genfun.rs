//! Matrix generating function `f(M) = sum_n P_n M^n`, the extinction matrix
//! as its least fixed point, and tools for exploring iteration from other
//! starting points.

use log::debug;
use serde::Serialize;

use crate::error::{GenfunError, MatrixError};
use crate::matrix::{lu_solve, Matrix, SubstochasticMatrix};
use crate::model::BpmeModel;
use crate::scalar::Scalar;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;
/// Plain iterations allowed before switching to Newton steps. Near-critical
/// models converge sublinearly under plain iteration.
pub const NEWTON_SWITCH: usize = 10_000;
/// Newton solves a dense `|S|^2` system per step; larger models only iterate.
pub const NEWTON_MAX_STATES: usize = 24;
const NEWTON_MAX_STEPS: usize = 200;

/// Evaluates `f(M)`, accumulating `P_n M^n` with the power of `M` built on
/// the right (the coefficients do not commute with `M`, so no Horner form).
pub fn apply_f<T: Scalar>(
    model: &BpmeModel<T>,
    m: &SubstochasticMatrix<T>,
) -> Result<SubstochasticMatrix<T>, GenfunError> {
    if m.dim() != model.num_states() {
        return Err(MatrixError::DimensionMismatch { expected: model.num_states(), found: m.dim() }.into());
    }
    Ok(SubstochasticMatrix::new_unchecked(eval(model, m.matrix())))
}

fn eval<T: Scalar>(model: &BpmeModel<T>, m: &Matrix<T>) -> Matrix<T> {
    let coeffs = model.step_matrices();
    let mut acc = coeffs[0].clone();
    let mut power = m.clone();
    for (k, c) in coeffs.iter().enumerate().skip(1) {
        acc.add_product(c, &power);
        if k + 1 < coeffs.len() {
            power = power.mul(m);
        }
    }
    acc
}

/// Clamps entries into `[0, 1]`, returning the largest correction applied.
fn clamp_unit<T: Scalar>(m: &mut Matrix<T>) -> T {
    let mut worst = T::zero();
    let dim = m.dim();
    for i in 0..dim {
        for j in 0..dim {
            let x = m[(i, j)];
            let c = x.max(T::zero()).min(T::one());
            worst = worst.max((c - x).abs());
            m[(i, j)] = c;
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct ExtinctionResult<T> {
    pub matrix: SubstochasticMatrix<T>,
    pub iterations: usize,
    /// `sup |f(E) - E|` for the returned matrix.
    pub residual: T,
    pub converged: bool,
    /// Every iterate was entrywise at least the previous one.
    pub monotone: bool,
    /// Largest entry correction made by clamping to `[0, 1]`.
    pub max_clamp: T,
    /// Newton steps taken after plain iteration stalled; 0 if none.
    pub newton_steps: usize,
}

/// Least fixed point of `f` by iteration from the zero matrix.
///
/// Stops at the first iterate `M` with `sup |f(M) - M| < tol`, so the reported
/// residual is measured on the returned matrix itself. If that takes more than
/// [`NEWTON_SWITCH`] iterations, Newton steps continue from the current
/// iterate. Started below `E` with `f(M) >= M`, they increase monotonically to
/// `E`, and they stay fast at criticality where plain iteration crawls. Should
/// Newton fail, plain iteration resumes up to `max_iter`.
pub fn extinction_matrix<T: Scalar>(model: &BpmeModel<T>, tol: T, max_iter: usize) -> ExtinctionResult<T> {
    let n = model.num_states();
    let budget = if n <= NEWTON_MAX_STATES { max_iter.min(NEWTON_SWITCH) } else { max_iter };
    let plain = iterate(model, Matrix::zeros(n), tol, budget, true);
    if plain.converged || budget == max_iter {
        return finish(plain, 0);
    }
    match newton(model, plain.matrix.matrix().clone(), tol) {
        Some(done) => {
            let residual = eval(model, &done.matrix).sup_dist(&done.matrix);
            ExtinctionResult {
                matrix: SubstochasticMatrix::new_unchecked(done.matrix),
                iterations: plain.iterations,
                residual,
                converged: residual < tol,
                monotone: plain.monotone && done.monotone,
                max_clamp: plain.max_clamp.max(done.max_clamp),
                newton_steps: done.steps,
            }
        }
        None => {
            debug!("Newton refinement failed; continuing plain iteration");
            let rest = iterate(model, plain.matrix.matrix().clone(), tol, max_iter - budget, true);
            let mut out = finish(rest, 0);
            out.iterations += plain.iterations;
            out.monotone &= plain.monotone;
            out.max_clamp = out.max_clamp.max(plain.max_clamp);
            out
        }
    }
}

fn finish<T: Scalar>(o: IterationOutcome<T>, newton_steps: usize) -> ExtinctionResult<T> {
    let IterationOutcome { matrix, converged, residual, iterations, monotone, max_clamp } = o;
    ExtinctionResult { matrix, iterations, residual, converged, monotone, max_clamp, newton_steps }
}

struct NewtonOutcome<T> {
    matrix: Matrix<T>,
    steps: usize,
    monotone: bool,
    max_clamp: T,
}

/// Newton's method on `F(X) = f(X) - X`. The derivative is
/// `H -> sum_n P_n sum_{j<n} X^j H X^(n-1-j) - H`; with row-major
/// vectorization `A H B` becomes `(A kron B^T) vec(H)`.
///
/// Converged once the correction drops below `tol`, or once it stops
/// shrinking while `F` is already at rounding level: at a double root the
/// attainable accuracy is about the square root of machine epsilon and
/// further steps only chase noise.
fn newton<T: Scalar>(model: &BpmeModel<T>, start: Matrix<T>, tol: T) -> Option<NewtonOutcome<T>> {
    let d = start.dim();
    let coeffs = model.step_matrices();
    let slack = T::epsilon() * T::lit(4.0);
    let noise = T::epsilon() * T::from_count(4 * coeffs.len() * d);
    let mut x = start;
    let mut monotone = true;
    let mut max_clamp = T::zero();
    let mut last_correction = T::infinity();
    for step in 1..=NEWTON_MAX_STEPS {
        let fx = eval(model, &x);
        let rhs: Vec<T> = fx.entries().iter().zip(x.entries()).map(|(&a, &b)| b - a).collect();
        let residual = rhs.iter().fold(T::zero(), |r, &v| r.max(v.abs()));
        if residual == T::zero() {
            return Some(NewtonOutcome { matrix: x, steps: step - 1, monotone, max_clamp });
        }
        let mut powers = vec![Matrix::identity(d)];
        for _ in 2..coeffs.len() {
            let next = powers.last().expect("nonempty").mul(&x);
            powers.push(next);
        }
        let dd = d * d;
        let mut jac = Matrix::from_fn(dd, |r, c| if r == c { -T::one() } else { T::zero() });
        for (k, c) in coeffs.iter().enumerate().skip(1) {
            for j in 0..k {
                let a = c.mul(&powers[j]);
                let b = &powers[k - 1 - j];
                for i in 0..d {
                    for l in 0..d {
                        let ail = a[(i, l)];
                        if ail == T::zero() {
                            continue;
                        }
                        for kk in 0..d {
                            for m in 0..d {
                                // coefficient of H[l][m] in (A H B)[i][kk]
                                jac[(i * d + kk, l * d + m)] = jac[(i * d + kk, l * d + m)] + ail * b[(m, kk)];
                            }
                        }
                    }
                }
            }
        }
        let h = lu_solve(&jac, &rhs, T::epsilon())?;
        let mut next = Matrix::from_fn(d, |i, j| x[(i, j)] + h[i * d + j]);
        max_clamp = max_clamp.max(clamp_unit(&mut next));
        let correction = next.sup_dist(&x);
        if next.entries().iter().zip(x.entries()).any(|(&a, &b)| a + slack < b) {
            monotone = false;
        }
        let stalled = correction >= last_correction && residual <= noise;
        if stalled {
            return Some(NewtonOutcome { matrix: x, steps: step - 1, monotone, max_clamp });
        }
        x = next;
        if correction < tol {
            return Some(NewtonOutcome { matrix: x, steps: step, monotone, max_clamp });
        }
        last_correction = correction;
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct IterationOutcome<T> {
    pub matrix: SubstochasticMatrix<T>,
    pub converged: bool,
    pub residual: T,
    pub iterations: usize,
    pub monotone: bool,
    pub max_clamp: T,
}

/// Fixed-point iteration `M <- f(M)` from an arbitrary substochastic start.
/// Nothing is assumed about monotonicity; `monotone` only reports it.
pub fn iterate_from<T: Scalar>(
    model: &BpmeModel<T>,
    start: &SubstochasticMatrix<T>,
    tol: T,
    max_iter: usize,
) -> Result<IterationOutcome<T>, GenfunError> {
    if start.dim() != model.num_states() {
        return Err(MatrixError::DimensionMismatch { expected: model.num_states(), found: start.dim() }.into());
    }
    Ok(iterate(model, start.matrix().clone(), tol, max_iter, false))
}

fn iterate<T: Scalar>(model: &BpmeModel<T>, start: Matrix<T>, tol: T, max_iter: usize, expect_monotone: bool) -> IterationOutcome<T> {
    let mut cur = start;
    let mut monotone = true;
    let mut max_clamp = T::zero();
    let mut residual = T::infinity();
    let mut iterations = 0;
    let slack = T::epsilon() * T::lit(4.0);
    while iterations < max_iter {
        let mut next = eval(model, &cur);
        let clamp = clamp_unit(&mut next);
        if clamp > T::lit(1e-13) {
            debug!("clamped f-iterate {iterations} by {clamp}");
        }
        max_clamp = max_clamp.max(clamp);
        if monotone && next.entries().iter().zip(cur.entries()).any(|(&a, &b)| a + slack < b) {
            monotone = false;
            if expect_monotone {
                debug!("f-iterate {iterations} decreased an entry");
            }
        }
        residual = next.sup_dist(&cur);
        if residual < tol {
            break;
        }
        cur = next;
        iterations += 1;
    }
    IterationOutcome {
        matrix: SubstochasticMatrix::new_unchecked(cur),
        converged: residual < tol,
        residual,
        iterations,
        monotone,
        max_clamp,
    }
}

/// `E^n`; entry `(i, j)` is the probability that `n.i` halts in `0.j`.
pub fn extinction_power<T: Scalar>(result: &ExtinctionResult<T>, n: usize) -> SubstochasticMatrix<T> {
    result.matrix.pow(n)
}

/// Probability that the process started from `n.i` never dies out:
/// one minus row `i` of `E^n`.
pub fn survival_probability<T: Scalar>(result: &ExtinctionResult<T>, n: usize, i: usize) -> Result<T, GenfunError> {
    if !result.converged {
        return Err(GenfunError::NotConverged { residual: result.residual.as_f64() });
    }
    let row: T = extinction_power(result, n).matrix().row(i).iter().copied().sum();
    Ok((T::one() - row).max(T::zero()).min(T::one()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct PerronVector<T> {
    /// Left eigenvector, entries summing to one.
    pub vector: Vec<T>,
    /// Spectral radius.
    pub eigenvalue: T,
    /// `sup |v E - lambda v|`.
    pub residual: T,
}

/// Left Perron vector of an irreducible nonnegative matrix.
///
/// Power iteration runs on `E + I`, which shares eigenvectors with `E` but is
/// primitive, so periodic matrices converge too.
pub fn perron_left_vector<T: Scalar>(e: &SubstochasticMatrix<T>) -> Result<PerronVector<T>, GenfunError> {
    let m = e.matrix();
    let n = m.dim();
    if m.max_abs() == T::zero() {
        return Err(GenfunError::ZeroMatrix);
    }
    if !m.is_irreducible() {
        return Err(GenfunError::Reducible);
    }
    let shifted = m.add(&Matrix::identity(n));
    let mut v = vec![T::one() / T::from_count(n); n];
    let target = T::exact_tol();
    let mut residual = T::infinity();
    let mut lambda = T::zero();
    for _ in 0..1_000_000 {
        let ve = m.left_mul(&v);
        lambda = ve.iter().copied().sum();
        residual = ve.iter().zip(&v).fold(T::zero(), |r, (&a, &b)| r.max((a - lambda * b).abs()));
        if residual < target {
            return Ok(PerronVector { vector: v, eigenvalue: lambda, residual });
        }
        let w = shifted.left_mul(&v);
        let s: T = w.iter().copied().sum();
        v = w.into_iter().map(|x| x / s).collect();
    }
    debug!("Perron iteration stopped at residual {residual}, lambda {lambda}");
    Err(GenfunError::PerronStalled { residual: residual.as_f64() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjectureGap {
    pub n: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct ConjectureReport<T> {
    pub extinction: ExtinctionResult<T>,
    /// `None` when every row of `E` sums to one and the rank-one term vanishes.
    pub perron: Option<PerronVector<T>>,
    pub conjectured_limit: Matrix<T>,
    pub final_iterate: Matrix<T>,
    /// `sup |f^n(I) - L|` for `n = 0..=n_max`.
    pub gaps: Vec<ConjectureGap>,
}

/// Compares `f^n(I)` with `L_ij = E_ij + (1 - sum_k E_ik) v_j` where `v` is the
/// normalized left Perron vector of `E`. Reports gaps only; nothing is
/// asserted about convergence.
pub fn generation_environment_conjecture<T: Scalar>(
    model: &BpmeModel<T>,
    n_max: usize,
    tol: T,
    max_iter: usize,
) -> Result<ConjectureReport<T>, GenfunError> {
    let extinction = extinction_matrix(model, tol, max_iter);
    if !extinction.converged {
        return Err(GenfunError::NotConverged { residual: extinction.residual.as_f64() });
    }
    let e = extinction.matrix.matrix();
    let deficit: Vec<T> = e.row_sums().into_iter().map(|s| (T::one() - s).max(T::zero())).collect();
    let perron = if deficit.iter().all(|&d| d <= T::solve_tol()) {
        None
    } else {
        Some(perron_left_vector(&extinction.matrix)?)
    };
    let limit = match &perron {
        None => e.clone(),
        Some(p) => Matrix::from_fn(e.dim(), |i, j| e[(i, j)] + deficit[i] * p.vector[j]),
    };
    let mut cur = Matrix::identity(model.num_states());
    let mut gaps = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        if n > 0 {
            cur = eval(model, &cur);
            clamp_unit(&mut cur);
        }
        gaps.push(ConjectureGap { n, gap: cur.sup_dist(&limit).as_f64() });
    }
    Ok(ConjectureReport { extinction, perron, conjectured_limit: limit, final_iterate: cur, gaps })
}
