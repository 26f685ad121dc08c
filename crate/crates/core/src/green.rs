//! Green functions of the simple random walk: closed form on the d-regular
//! tree, the zero-average Green matrix of a finite multigraph, hitting-time
//! functionals and the resulting conditional Gaussian laws.
//!
//! The zero-average Green function is the pseudo-inverse of `L = I - P` on
//! mean-zero vectors, i.e. the unique symmetric `G` with `(I - P) G = I - J/n`
//! and `G 1 = 0`. For a connected graph this equals the time integral of
//! `exp(-tL) - J/n`, the continuous-time definition.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::multigraph::Multigraph;

/// Green function of the d-regular tree at graph distance `dist`:
/// `(d-1)^(1-dist) / (d-2)`.
pub fn green_tree(d: usize, dist: usize) -> f64 {
    let q = (d - 1) as f64;
    q.powi(1 - dist as i32) / (d - 2) as f64
}

/// Relative residual accepted from every linear solve.
pub const SOLVE_TOL: f64 = 1e-10;

/// Column access to a zero-average Green function.
pub trait GreenKernel {
    fn n(&self) -> usize;
    fn column(&self, y: usize) -> Result<Vec<f64>>;
}

/// Dense zero-average Green matrix.
#[derive(Clone, Debug)]
pub struct GreenMatrix {
    values: DMatrix<f64>,
}

impl GreenMatrix {
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::DimensionMismatch {
                expected: values.nrows(),
                found: values.ncols(),
            });
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[(x, y)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_slice(&self, y: usize) -> &[f64] {
        let n = self.n();
        &self.values.as_slice()[y * n..(y + 1) * n]
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.values[(i, j)] - self.values[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn max_row_sum(&self) -> f64 {
        self.values
            .row_iter()
            .map(|r| r.sum().abs())
            .fold(0.0, f64::max)
    }

    /// Row-major CSV without header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.n();
        let mut line = String::new();
        for i in 0..n {
            line.clear();
            for j in 0..n {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{:e}", self.values[(i, j)]));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    /// Row-major little-endian `f64` values, no header.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.n();
        let mut buf = Vec::with_capacity(n * 8);
        for i in 0..n {
            buf.clear();
            for j in 0..n {
                buf.extend_from_slice(&self.values[(i, j)].to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Largest `|G(x, y)|` among pairs at each graph distance.
    pub fn decay_profile(&self, g: &Multigraph) -> Vec<(usize, f64)> {
        let mut best: Vec<f64> = Vec::new();
        for x in 0..g.n() {
            let dist = g.distances_from(&[x]);
            for (y, &r) in dist.iter().enumerate() {
                if r == usize::MAX {
                    continue;
                }
                if best.len() <= r {
                    best.resize(r + 1, 0.0);
                }
                best[r] = best[r].max(self.values[(x, y)].abs());
            }
        }
        best.into_iter().enumerate().collect()
    }
}

impl GreenKernel for GreenMatrix {
    fn n(&self) -> usize {
        self.values.nrows()
    }

    fn column(&self, y: usize) -> Result<Vec<f64>> {
        Ok(self.column_slice(y).to_vec())
    }
}

/// `L = I - P` as a dense matrix, loops entering `P` with weight `2/d`.
pub fn laplacian_dense(g: &Multigraph) -> DMatrix<f64> {
    let n = g.n();
    let inv_d = 1.0 / g.d() as f64;
    let mut l = DMatrix::identity(n, n);
    for x in 0..n {
        for y in g.neighbors(x) {
            l[(x, y)] -= inv_d;
        }
    }
    l
}

/// Dense zero-average Green matrix via `G = (L + J/n)^{-1} - J/n`.
pub fn green_zero_average(g: &Multigraph) -> Result<GreenMatrix> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let n = g.n();
    let jn = 1.0 / n as f64;
    let mut m = laplacian_dense(g);
    m.add_scalar_mut(jn);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::InvalidParams("shifted Laplacian not positive definite".into()))?;
    let mut inv = chol.inverse();
    inv.add_scalar_mut(-jn);
    let sym = (&inv + inv.transpose()) * 0.5;
    Ok(GreenMatrix { values: sym })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
        }
    }
}

/// Conjugate gradients for a symmetric positive (semi)definite operator.
/// When `mean_zero` is set, iterates stay in the mean-zero subspace.
fn conjugate_gradient<F>(apply: F, b: &[f64], mean_zero: bool, opts: CgOptions) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let project = |v: &mut [f64]| {
        if mean_zero {
            let m = v.iter().sum::<f64>() / n as f64;
            v.iter_mut().for_each(|x| *x -= m);
        }
    };
    let mut r = b.to_vec();
    project(&mut r);
    let bnorm = dot(&r, &r).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let target = opts.tol * bnorm;
    let mut iterations = 0;
    while rr.sqrt() > target {
        if iterations == opts.max_iter {
            return Err(Error::NotConverged {
                what: "conjugate gradient",
                iterations,
            });
        }
        apply(&p, &mut ap);
        project(&mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        iterations += 1;
    }
    project(&mut x);
    // recompute the true residual; recurrences drift
    apply(&x, &mut ap);
    let mut res: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    project(&mut res);
    let rel = dot(&res, &res).sqrt() / bnorm;
    if rel > SOLVE_TOL {
        return Err(Error::SolverResidual {
            residual: rel,
            tolerance: SOLVE_TOL,
        });
    }
    Ok(x)
}

/// Applies `L = I - P`.
pub fn apply_laplacian(g: &Multigraph, v: &[f64], out: &mut [f64]) {
    let inv_d = 1.0 / g.d() as f64;
    for x in 0..g.n() {
        let s: f64 = g.neighbors(x).map(|y| v[y]).sum();
        out[x] = v[x] - inv_d * s;
    }
}

/// Solves `L x = b - mean(b)` for the mean-zero solution `x`.
pub fn solve_laplacian(g: &Multigraph, b: &[f64], opts: CgOptions) -> Result<Vec<f64>> {
    if b.len() != g.n() {
        return Err(Error::DimensionMismatch {
            expected: g.n(),
            found: b.len(),
        });
    }
    conjugate_gradient(|v, out| apply_laplacian(g, v, out), b, true, opts)
}

/// Solves `(I - P)_{UU} x = b` on the complement `U` of the vertices flagged
/// in `absorbing`; entries of `b` and `x` on absorbing vertices are zero.
pub fn solve_dirichlet(g: &Multigraph, absorbing: &[bool], b: &[f64], opts: CgOptions) -> Result<Vec<f64>> {
    let inv_d = 1.0 / g.d() as f64;
    let apply = |v: &[f64], out: &mut [f64]| {
        for x in 0..g.n() {
            if absorbing[x] {
                out[x] = 0.0;
                continue;
            }
            let s: f64 = g.neighbors(x).filter(|&y| !absorbing[y]).map(|y| v[y]).sum();
            out[x] = v[x] - inv_d * s;
        }
    };
    let masked: Vec<f64> = b.iter().zip(absorbing).map(|(&v, &a)| if a { 0.0 } else { v }).collect();
    conjugate_gradient(apply, &masked, false, opts)
}

/// Green columns computed on demand by a sparse Laplacian solve.
#[derive(Clone, Copy, Debug)]
pub struct GreenSolver<'a> {
    graph: &'a Multigraph,
    opts: CgOptions,
}

impl<'a> GreenSolver<'a> {
    pub fn new(graph: &'a Multigraph) -> Result<Self> {
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(Self {
            graph,
            opts: CgOptions::default(),
        })
    }
}

impl GreenKernel for GreenSolver<'_> {
    fn n(&self) -> usize {
        self.graph.n()
    }

    fn column(&self, y: usize) -> Result<Vec<f64>> {
        self.graph.check_vertex(y)?;
        let mut e = vec![0.0; self.graph.n()];
        e[y] = 1.0;
        solve_laplacian(self.graph, &e, self.opts)
    }
}

fn normalize_target(g: &Multigraph, target: &[usize]) -> Result<Vec<usize>> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    for &a in target {
        g.check_vertex(a)?;
    }
    let mut t = target.to_vec();
    t.sort_unstable();
    t.dedup();
    Ok(t)
}

/// Hitting time and hitting position of a target set `A`, for every start.
#[derive(Clone, Debug)]
pub struct HittingProfile {
    pub target: Vec<usize>,
    /// `E_x[H_A]` for every vertex `x`.
    pub hit_expectation: Vec<f64>,
    /// Row `x`, column `j`: `P_x(X_{H_A} = target[j])`.
    pub hit_distribution: DMatrix<f64>,
    /// `E_pi[H_A]` under the uniform distribution.
    pub stationary_expectation: f64,
}

/// Solves the Dirichlet problems for `A = target` with a dense Cholesky
/// factorization of `(I - P)` restricted to the complement.
pub fn hitting_profile(g: &Multigraph, target: &[usize]) -> Result<HittingProfile> {
    let target = normalize_target(g, target)?;
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let n = g.n();
    let k = target.len();
    let mut col_of = vec![usize::MAX; n];
    for (j, &a) in target.iter().enumerate() {
        col_of[a] = j;
    }
    let outside: Vec<usize> = (0..n).filter(|&x| col_of[x] == usize::MAX).collect();
    let mut row_of = vec![usize::MAX; n];
    for (i, &u) in outside.iter().enumerate() {
        row_of[u] = i;
    }
    let m = outside.len();
    let inv_d = 1.0 / g.d() as f64;

    let mut hit_expectation = vec![0.0; n];
    let mut hit_distribution = DMatrix::zeros(n, k);
    for (j, &a) in target.iter().enumerate() {
        hit_distribution[(a, j)] = 1.0;
    }
    if m > 0 {
        let mut q = DMatrix::<f64>::identity(m, m);
        // right-hand sides: one column per target vertex, then the all-ones column
        let mut rhs = DMatrix::<f64>::zeros(m, k + 1);
        for (i, &u) in outside.iter().enumerate() {
            rhs[(i, k)] = 1.0;
            for y in g.neighbors(u) {
                if row_of[y] != usize::MAX {
                    q[(i, row_of[y])] -= inv_d;
                } else {
                    rhs[(i, col_of[y])] += inv_d;
                }
            }
        }
        let q_copy = q.clone();
        let chol = q
            .cholesky()
            .ok_or_else(|| Error::InvalidParams("Dirichlet operator not positive definite".into()))?;
        let sol = chol.solve(&rhs);
        let resid = (&q_copy * &sol - &rhs).norm() / rhs.norm();
        if resid > SOLVE_TOL {
            return Err(Error::SolverResidual {
                residual: resid,
                tolerance: SOLVE_TOL,
            });
        }
        for (i, &u) in outside.iter().enumerate() {
            hit_expectation[u] = sol[(i, k)];
            for j in 0..k {
                hit_distribution[(u, j)] = sol[(i, j)];
            }
        }
    }
    let stationary_expectation = hit_expectation.iter().sum::<f64>() / n as f64;
    Ok(HittingProfile {
        target,
        hit_expectation,
        hit_distribution,
        stationary_expectation,
    })
}

impl HittingProfile {
    /// `P_pi(X_{H_A} = a)` for each target vertex.
    pub fn stationary_hit_distribution(&self) -> Vec<f64> {
        let n = self.hit_distribution.nrows() as f64;
        self.hit_distribution
            .column_iter()
            .map(|c| c.sum() / n)
            .collect()
    }

    pub fn weights_for(&self, y: usize) -> Result<ConditioningWeights> {
        if y >= self.hit_expectation.len() {
            return Err(Error::UnknownVertex {
                vertex: y,
                n: self.hit_expectation.len(),
            });
        }
        if self.target.binary_search(&y).is_ok() {
            return Err(Error::VertexInTarget { vertex: y });
        }
        Ok(ConditioningWeights {
            target: self.target.clone(),
            from_y: self.hit_distribution.row(y).iter().copied().collect(),
            from_stationary: self.stationary_hit_distribution(),
            expected_hit_y: self.hit_expectation[y],
            expected_hit_stationary: self.stationary_expectation,
        })
    }

    /// Largest violation of the mean-value property off the target, over the
    /// expectation (`m = 1 + P m`) and every hitting-probability column.
    pub fn harmonicity_residual(&self, g: &Multigraph) -> f64 {
        let inv_d = 1.0 / g.d() as f64;
        let mut worst: f64 = 0.0;
        for x in 0..g.n() {
            if self.target.binary_search(&x).is_ok() {
                continue;
            }
            let avg: f64 = g.neighbors(x).map(|y| self.hit_expectation[y]).sum::<f64>() * inv_d;
            worst = worst.max((self.hit_expectation[x] - 1.0 - avg).abs());
            for j in 0..self.target.len() {
                let avg: f64 = g.neighbors(x).map(|y| self.hit_distribution[(y, j)]).sum::<f64>() * inv_d;
                worst = worst.max((self.hit_distribution[(x, j)] - avg).abs());
            }
        }
        worst
    }
}

/// The ingredients of the conditional law of `psi(y)` given `psi` on `A`,
/// all indexed like `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningWeights {
    pub target: Vec<usize>,
    /// `P_y(X_{H_A} = a)`.
    pub from_y: Vec<f64>,
    /// `P_pi(X_{H_A} = a)`.
    pub from_stationary: Vec<f64>,
    pub expected_hit_y: f64,
    pub expected_hit_stationary: f64,
}

impl ConditioningWeights {
    /// Coefficients `c_a` with `E[psi(y) | psi_A] = sum_a c_a psi(a)`.
    pub fn coefficients(&self) -> Vec<f64> {
        let ratio = self.expected_hit_y / self.expected_hit_stationary;
        self.from_y
            .iter()
            .zip(&self.from_stationary)
            .map(|(py, pp)| py - ratio * pp)
            .collect()
    }
}

/// Computes [`ConditioningWeights`] for a single `y` with two sparse solves:
/// `w = Q^{-1} e_y` gives the hitting distribution from `y`, and
/// `m = Q^{-1} 1` gives expected hitting times and, by symmetry of `P`, the
/// hitting distribution from the uniform start.
pub fn conditioning_weights(g: &Multigraph, target: &[usize], y: usize) -> Result<ConditioningWeights> {
    let target = normalize_target(g, target)?;
    g.check_vertex(y)?;
    if target.binary_search(&y).is_ok() {
        return Err(Error::VertexInTarget { vertex: y });
    }
    let n = g.n();
    let mut absorbing = vec![false; n];
    for &a in &target {
        absorbing[a] = true;
    }
    let opts = CgOptions::default();
    let mut e = vec![0.0; n];
    e[y] = 1.0;
    let w = solve_dirichlet(g, &absorbing, &e, opts)?;
    let ones: Vec<f64> = absorbing.iter().map(|&a| if a { 0.0 } else { 1.0 }).collect();
    let m = solve_dirichlet(g, &absorbing, &ones, opts)?;

    let inv_d = 1.0 / g.d() as f64;
    let mut from_y = vec![0.0; target.len()];
    let mut inflow = vec![0.0; target.len()];
    for (j, &a) in target.iter().enumerate() {
        for u in g.neighbors(a) {
            if !absorbing[u] {
                from_y[j] += w[u] * inv_d;
                inflow[j] += m[u] * inv_d;
            }
        }
    }
    let nf = n as f64;
    let from_stationary = inflow.iter().map(|s| (1.0 + s) / nf).collect();
    Ok(ConditioningWeights {
        target,
        from_y,
        from_stationary,
        expected_hit_y: m[y],
        expected_hit_stationary: m.iter().sum::<f64>() / nf,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionalLaw {
    pub mean: f64,
    pub variance: f64,
}

/// Mean and variance of `psi(y)` given `psi = values` on the target set.
/// `green_column_y` is the column `G(., y)`.
pub fn conditional_law_from_weights(
    weights: &ConditioningWeights,
    green_column_y: &[f64],
    values: &[f64],
    y: usize,
) -> Result<ConditionalLaw> {
    if values.len() != weights.target.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.target.len(),
            found: values.len(),
        });
    }
    let coef = weights.coefficients();
    let mean = coef.iter().zip(values).map(|(c, v)| c * v).sum();
    let explained: f64 = coef
        .iter()
        .zip(&weights.target)
        .map(|(c, &a)| c * green_column_y[a])
        .sum();
    // clamp rounding noise; the exact value is nonnegative
    let variance = (green_column_y[y] - explained).max(0.0);
    Ok(ConditionalLaw { mean, variance })
}

/// Conditional law of `psi(y)` given `psi` on `profile.target`.
pub fn conditional_law<K: GreenKernel + ?Sized>(
    profile: &HittingProfile,
    green: &K,
    values: &[f64],
    y: usize,
) -> Result<ConditionalLaw> {
    let weights = profile.weights_for(y)?;
    let col = green.column(y)?;
    conditional_law_from_weights(&weights, &col, values, y)
}

/// Schur-complement conditioning of the centered Gaussian vector with
/// covariance `G`: independent of the random-walk machinery.
pub fn schur_conditional(green: &GreenMatrix, target: &[usize], values: &[f64], y: usize) -> Result<ConditionalLaw> {
    let k = target.len();
    let gaa = DMatrix::from_fn(k, k, |i, j| green.get(target[i], target[j]));
    let gay = DVector::from_fn(k, |i, _| green.get(target[i], y));
    let chol = gaa
        .cholesky()
        .ok_or_else(|| Error::InvalidParams("covariance on the target set is singular".into()))?;
    let sol = chol.solve(&gay);
    let mean = sol.iter().zip(values).map(|(s, v)| s * v).sum();
    let variance = green.get(y, y) - sol.dot(&gay);
    Ok(ConditionalLaw { mean, variance })
}
