//! Samplers for the zero-average Gaussian free field on a finite multigraph
//! and for the free field on the d-regular tree.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::green::{hitting_profile, solve_laplacian, CgOptions, GreenKernel, GreenMatrix};
use crate::multigraph::Multigraph;

/// A real value per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
    /// Free-form identifier of the underlying graph or tree fragment.
    pub graph_ref: String,
}

impl Field {
    pub fn new(values: Vec<f64>, graph_ref: impl Into<String>) -> Self {
        Self {
            values,
            graph_ref: graph_ref.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Vertices with value at least `h`, in increasing order.
    pub fn level_set(&self, h: f64) -> Vec<usize> {
        crate::levelset::level_set(&self.values, h)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// CSV with header `vertex,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "vertex,value")?;
        for (x, v) in self.values.iter().enumerate() {
            writeln!(w, "{x},{v:e}")?;
        }
        Ok(())
    }
}

pub fn field_max_abs(f: &Field) -> f64 {
    f.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// An indexed stream of i.i.d. standard normals.
///
/// Values are produced in index order from a seeded generator, so two
/// reservoirs with the same seed agree entry by entry. Each index can be
/// taken once; [`GaussianReservoir::restart`] allows a second construction
/// from the same draws.
#[derive(Clone, Debug)]
pub struct GaussianReservoir {
    seed: Option<u64>,
    rng: Option<ChaCha8Rng>,
    draws: Vec<f64>,
    taken: Vec<bool>,
}

impl GaussianReservoir {
    pub fn new(seed: u64) -> Self {
        Self {
            seed: Some(seed),
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            draws: Vec::new(),
            taken: Vec::new(),
        }
    }

    /// A finite reservoir with prescribed values; reading past the end is an error.
    pub fn from_values(values: Vec<f64>) -> Self {
        let len = values.len();
        Self {
            seed: None,
            rng: None,
            draws: values,
            taken: vec![false; len],
        }
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    fn fill_to(&mut self, index: usize) -> Result<()> {
        while self.draws.len() <= index {
            let rng = self.rng.as_mut().ok_or(Error::DimensionMismatch {
                expected: index + 1,
                found: self.draws.len(),
            })?;
            self.draws.push(rng.sample(StandardNormal));
            self.taken.push(false);
        }
        Ok(())
    }

    /// Value at `index` without marking it used.
    pub fn peek(&mut self, index: usize) -> Result<f64> {
        self.fill_to(index)?;
        Ok(self.draws[index])
    }

    pub fn take(&mut self, index: usize) -> Result<f64> {
        self.fill_to(index)?;
        if self.taken[index] {
            return Err(Error::ReservoirReuse { index });
        }
        self.taken[index] = true;
        Ok(self.draws[index])
    }

    pub fn restart(&mut self) {
        self.taken.iter_mut().for_each(|t| *t = false);
    }
}

/// `V sqrt(Lambda)` for the eigendecomposition of a Green matrix; the kernel
/// direction has eigenvalue zero and drops out.
#[derive(Clone, Debug)]
pub struct SpectralSampler {
    factor: DMatrix<f64>,
}

impl SpectralSampler {
    pub fn new(green: &GreenMatrix) -> Self {
        let eig = SymmetricEigen::new(green.matrix().clone());
        let mut factor = eig.eigenvectors;
        for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
            let s = lambda.max(0.0).sqrt();
            factor.column_mut(j).scale_mut(s);
        }
        Self { factor }
    }

    pub fn n(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.n();
        let xi = nalgebra::DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut v: Vec<f64> = (&self.factor * xi).iter().copied().collect();
        // remove the rounding-level constant component
        let m = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|x| *x -= m);
        v
    }
}

/// Exact sample with covariance `green`, via the spectral square root.
/// A disconnected graph gets the all-zero field.
pub fn sample_exact<R: Rng + ?Sized>(g: &Multigraph, green: Option<&GreenMatrix>, rng: &mut R) -> Result<Field> {
    if !g.is_connected() {
        return Ok(Field::new(vec![0.0; g.n()], "disconnected"));
    }
    let green = green.ok_or_else(|| Error::InvalidParams("connected graph needs its Green matrix".into()))?;
    if green.n() != g.n() {
        return Err(Error::DimensionMismatch {
            expected: g.n(),
            found: green.n(),
        });
    }
    Ok(Field::new(SpectralSampler::new(green).sample(rng), "exact"))
}

/// Exact sample without forming the Green matrix.
///
/// With one standard normal `xi_e` per edge (in edge order), the vector
/// `b = d^{-1/2} sum_e xi_e (1_u - 1_v)` has covariance `L = I - P`, so the
/// mean-zero solution of `L psi = b` has covariance `L^+ = G`. Loops
/// consume a draw but contribute nothing.
pub fn sample_exact_sparse<R: Rng + ?Sized>(g: &Multigraph, rng: &mut R) -> Result<Field> {
    let n = g.n();
    let mut b = vec![0.0; n];
    let scale = 1.0 / (g.d() as f64).sqrt();
    for (u, v) in g.edges() {
        let xi: f64 = rng.sample(StandardNormal);
        b[u] += scale * xi;
        b[v] -= scale * xi;
    }
    if !g.is_connected() {
        return Ok(Field::new(vec![0.0; n], "disconnected"));
    }
    let psi = solve_laplacian(g, &b, CgOptions::default())?;
    Ok(Field::new(psi, "exact-sparse"))
}

/// One step of the sequential construction: the vertex, the coefficients of
/// its conditional mean on the previously placed vertices (in placement
/// order), and its conditional standard deviation.
#[derive(Clone, Debug)]
pub struct SequentialStep {
    pub vertex: usize,
    pub coefficients: Vec<f64>,
    pub std_dev: f64,
}

/// The linear recursion that places vertices one at a time, each from its
/// conditional law given the vertices already placed.
#[derive(Clone, Debug)]
pub struct SequentialPlan {
    pub steps: Vec<SequentialStep>,
}

impl SequentialPlan {
    pub fn new(g: &Multigraph, green: &GreenMatrix, order: &[usize]) -> Result<Self> {
        let n = g.n();
        if order.len() != n || green.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: order.len().min(green.n()),
            });
        }
        let mut placed = vec![usize::MAX; n];
        for (i, &x) in order.iter().enumerate() {
            g.check_vertex(x)?;
            if placed[x] != usize::MAX {
                return Err(Error::InvalidParams(format!("vertex {x} repeated in order")));
            }
            placed[x] = i;
        }
        let mut steps = Vec::with_capacity(n);
        for (i, &y) in order.iter().enumerate() {
            if i == 0 {
                steps.push(SequentialStep {
                    vertex: y,
                    coefficients: Vec::new(),
                    std_dev: green.get(y, y).max(0.0).sqrt(),
                });
                continue;
            }
            let profile = hitting_profile(g, &order[..i])?;
            let weights = profile.weights_for(y)?;
            let coef_sorted = weights.coefficients();
            let mut coefficients = vec![0.0; i];
            let mut explained = 0.0;
            for (c, &a) in coef_sorted.iter().zip(&weights.target) {
                coefficients[placed[a]] = *c;
                explained += c * green.get(y, a);
            }
            let var = (green.get(y, y) - explained).max(0.0);
            steps.push(SequentialStep {
                vertex: y,
                coefficients,
                std_dev: var.sqrt(),
            });
        }
        Ok(Self { steps })
    }

    /// Runs the recursion, step `i` consuming reservoir index `i`.
    pub fn sample(&self, reservoir: &mut GaussianReservoir) -> Result<Field> {
        let n = self.steps.len();
        let mut by_step = Vec::with_capacity(n);
        let mut values = vec![0.0; n];
        for (i, step) in self.steps.iter().enumerate() {
            let xi = reservoir.take(i)?;
            let mean: f64 = step.coefficients.iter().zip(&by_step).map(|(c, v)| c * v).sum();
            let v = mean + step.std_dev * xi;
            by_step.push(v);
            values[step.vertex] = v;
        }
        Ok(Field::new(values, "sequential"))
    }

    /// Matrix `M` with `psi = M xi`: row = vertex, column = reservoir index.
    pub fn linear_map(&self) -> DMatrix<f64> {
        let n = self.steps.len();
        // rows in step order first
        let mut rows = DMatrix::<f64>::zeros(n, n);
        for (i, step) in self.steps.iter().enumerate() {
            for (j, &c) in step.coefficients.iter().enumerate() {
                if c != 0.0 {
                    for k in 0..=j {
                        rows[(i, k)] += c * rows[(j, k)];
                    }
                }
            }
            rows[(i, i)] += step.std_dev;
        }
        let mut out = DMatrix::zeros(n, n);
        for (i, step) in self.steps.iter().enumerate() {
            out.row_mut(step.vertex).copy_from(&rows.row(i));
        }
        out
    }
}

/// Builds the field vertex by vertex in `order`; see [`SequentialPlan`].
pub fn sample_sequential(
    g: &Multigraph,
    green: &GreenMatrix,
    order: &[usize],
    reservoir: &mut GaussianReservoir,
) -> Result<Field> {
    SequentialPlan::new(g, green, order)?.sample(reservoir)
}

/// Exact Gaussian conditioning on a growing set of vertices, by appending
/// rows to a Cholesky factor of the covariance restricted to the set.
/// Each step costs one Green column plus `O(k^2)` work.
pub struct GaussianConditioner<'a, K: GreenKernel + ?Sized> {
    green: &'a K,
    placed: Vec<usize>,
    /// Green columns of the placed vertices.
    columns: Vec<Vec<f64>>,
    /// Rows of the lower-triangular factor.
    factor: Vec<Vec<f64>>,
    /// Placed values in whitened coordinates.
    whitened: Vec<f64>,
}

impl<'a, K: GreenKernel + ?Sized> GaussianConditioner<'a, K> {
    pub fn new(green: &'a K) -> Self {
        Self {
            green,
            placed: Vec::new(),
            columns: Vec::new(),
            factor: Vec::new(),
            whitened: Vec::new(),
        }
    }

    pub fn placed(&self) -> &[usize] {
        &self.placed
    }

    fn project(&self, column_y: &[f64]) -> Vec<f64> {
        let k = self.placed.len();
        let mut u = vec![0.0; k];
        for i in 0..k {
            let row = &self.factor[i];
            let s: f64 = (0..i).map(|j| row[j] * u[j]).sum();
            u[i] = (column_y[self.placed[i]] - s) / row[i];
        }
        u
    }

    /// Conditional law of `psi(y)` given the placed values, and the Green
    /// column of `y` for reuse in [`GaussianConditioner::place`].
    pub fn law(&self, y: usize) -> Result<(crate::green::ConditionalLaw, Vec<f64>)> {
        let col = self.green.column(y)?;
        let u = self.project(&col);
        let mean = u.iter().zip(&self.whitened).map(|(a, b)| a * b).sum();
        let variance = (col[y] - u.iter().map(|a| a * a).sum::<f64>()).max(0.0);
        Ok((crate::green::ConditionalLaw { mean, variance }, col))
    }

    /// Fixes `psi(y) = value`. Fails if `y` is (numerically) determined by
    /// the placed values.
    pub fn place(&mut self, y: usize, value: f64, column_y: Vec<f64>) -> Result<()> {
        let mut u = self.project(&column_y);
        let var = column_y[y] - u.iter().map(|a| a * a).sum::<f64>();
        if var <= 1e-12 * column_y[y].abs().max(1.0) {
            return Err(Error::InvalidParams(format!("vertex {y} is determined by the placed set")));
        }
        let diag = var.sqrt();
        let mean: f64 = u.iter().zip(&self.whitened).map(|(a, b)| a * b).sum();
        self.whitened.push((value - mean) / diag);
        u.push(diag);
        self.factor.push(u);
        self.placed.push(y);
        self.columns.push(column_y);
        Ok(())
    }
}

/// Root value of the tree field from a standard normal `xi`.
pub fn tree_gff_root_from(d: usize, xi: f64) -> f64 {
    ((d - 1) as f64 / (d - 2) as f64).sqrt() * xi
}

/// Root value of the tree field; variance `(d-1)/(d-2)`.
pub fn tree_gff_root<R: Rng + ?Sized>(d: usize, rng: &mut R) -> f64 {
    tree_gff_root_from(d, rng.sample(StandardNormal))
}

/// Child value given the parent value and a fresh standard normal.
#[inline]
pub fn tree_gff_child(parent_value: f64, xi: f64, d: usize) -> f64 {
    let q = (d - 1) as f64;
    (d as f64 / q).sqrt() * xi + parent_value / q
}
