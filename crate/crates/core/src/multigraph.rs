//! d-regular multigraphs stored as a pairing of half-edges.
//!
//! Half-edge `i` belongs to vertex `i / d`. The pairing is a fixed-point-free
//! involution on `0..n*d`; loops and repeated edges are allowed.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::green::GreenMatrix;
use crate::unionfind::UnionFind;

const UNPAIRED: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Multigraph {
    n: usize,
    d: usize,
    pairing: Vec<usize>,
}

fn check_params(n: usize, d: usize) -> Result<()> {
    if d < 3 {
        return Err(Error::DegreeTooSmall { d });
    }
    if n == 0 {
        return Err(Error::InvalidParams("vertex count must be positive".into()));
    }
    if (n * d) % 2 != 0 {
        return Err(Error::OddHalfEdgeCount { n, d });
    }
    Ok(())
}

impl Multigraph {
    pub fn from_pairing(n: usize, d: usize, pairing: Vec<usize>) -> Result<Self> {
        check_params(n, d)?;
        if pairing.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                found: pairing.len(),
            });
        }
        for (i, &j) in pairing.iter().enumerate() {
            if j >= pairing.len() {
                return Err(Error::InvalidPairing(format!("half-edge {i} paired to {j}")));
            }
            if j == i {
                return Err(Error::InvalidPairing(format!("half-edge {i} is a fixed point")));
            }
            if pairing[j] != i {
                return Err(Error::InvalidPairing(format!(
                    "half-edge {i} -> {j} but {j} -> {}",
                    pairing[j]
                )));
            }
        }
        Ok(Self { n, d, pairing })
    }

    /// Builds a multigraph from an edge list, handing out each vertex's
    /// half-edges in order of appearance. A loop `(u, u)` uses two half-edges.
    pub fn from_edges(n: usize, d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        check_params(n, d)?;
        let mut next = vec![0usize; n];
        let mut pairing = vec![UNPAIRED; n * d];
        let take = |v: usize, next: &mut Vec<usize>| -> Result<usize> {
            if v >= n {
                return Err(Error::UnknownVertex { vertex: v, n });
            }
            if next[v] == d {
                return Err(Error::InvalidPairing(format!("vertex {v} has degree above {d}")));
            }
            next[v] += 1;
            Ok(v * d + next[v] - 1)
        };
        for &(u, v) in edges {
            let a = take(u, &mut next)?;
            let b = take(v, &mut next)?;
            pairing[a] = b;
            pairing[b] = a;
        }
        if let Some(v) = next.iter().position(|&k| k != d) {
            return Err(Error::InvalidPairing(format!(
                "vertex {v} has degree {}, expected {d}",
                next[v]
            )));
        }
        Ok(Self { n, d, pairing })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn pairing(&self) -> &[usize] {
        &self.pairing
    }

    #[inline]
    pub fn partner(&self, half_edge: usize) -> usize {
        self.pairing[half_edge]
    }

    #[inline]
    pub fn vertex_of(&self, half_edge: usize) -> usize {
        half_edge / self.d
    }

    /// Neighbors of `x` with multiplicity, one entry per half-edge.
    /// A loop at `x` therefore contributes `x` twice.
    #[inline]
    pub fn neighbors(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        let d = self.d;
        self.pairing[x * d..(x + 1) * d].iter().map(move |&h| h / d)
    }

    pub fn check_vertex(&self, x: usize) -> Result<()> {
        if x >= self.n {
            Err(Error::UnknownVertex { vertex: x, n: self.n })
        } else {
            Ok(())
        }
    }

    /// Edges as endpoint pairs, ordered by their smaller half-edge index.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.pairing
            .iter()
            .enumerate()
            .filter(|&(i, &j)| i < j)
            .map(|(i, &j)| (i / self.d, j / self.d))
            .collect()
    }

    pub fn is_simple(&self) -> bool {
        let mut seen = vec![usize::MAX; self.n];
        for x in 0..self.n {
            for y in self.neighbors(x) {
                if y == x || seen[y] == x {
                    return false;
                }
                seen[y] = x;
            }
        }
        true
    }

    pub fn component_labels(&self) -> (Vec<usize>, usize) {
        let mut uf = UnionFind::new(self.n);
        for (u, v) in self.edges() {
            uf.union(u, v);
        }
        let mut label = vec![usize::MAX; self.n];
        let mut count = 0;
        let mut out = vec![0; self.n];
        for x in 0..self.n {
            let r = uf.find(x);
            if label[r] == usize::MAX {
                label[r] = count;
                count += 1;
            }
            out[x] = label[r];
        }
        (out, count)
    }

    pub fn is_connected(&self) -> bool {
        self.component_labels().1 == 1
    }

    /// BFS distances from a set of sources; unreachable vertices get `usize::MAX`.
    pub fn distances_from(&self, sources: &[usize]) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s] != 0 {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(x) = queue.pop_front() {
            for y in self.neighbors(x) {
                if dist[y] == usize::MAX {
                    dist[y] = dist[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        dist
    }

    /// Adjacency matrix with multiplicities; a loop adds 2 on the diagonal.
    pub fn adjacency_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for x in 0..self.n {
            for y in self.neighbors(x) {
                a[(x, y)] += 1.0;
            }
        }
        a
    }

    /// Line-based text form: header `n d`, then one `u v` line per edge.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(16 + self.n * self.d * 4);
        let _ = writeln!(s, "{} {}", self.n, self.d);
        for (u, v) in self.edges() {
            let _ = writeln!(s, "{u} {v}");
        }
        s
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut header = None;
        let mut edges = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut parts = trimmed.split_whitespace();
            let mut field = |what: &str| -> Result<usize> {
                parts
                    .next()
                    .ok_or_else(|| Error::Parse {
                        line: idx + 1,
                        message: format!("missing {what}"),
                    })?
                    .parse()
                    .map_err(|e| Error::Parse {
                        line: idx + 1,
                        message: format!("bad {what}: {e}"),
                    })
            };
            let a = field("first field")?;
            let b = field("second field")?;
            if parts.next().is_some() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: "trailing fields".into(),
                });
            }
            if header.is_none() {
                header = Some((a, b));
            } else {
                edges.push((a, b));
            }
        }
        let (n, d) = header.ok_or(Error::Parse {
            line: 0,
            message: "missing `n d` header".into(),
        })?;
        Self::from_edges(n, d, &edges)
    }

    pub fn from_text(s: &str) -> Result<Self> {
        Self::read_text(s.as_bytes())
    }
}

/// Uniform random pairing, built by repeatedly matching the smallest
/// unpaired half-edge to a uniformly chosen other unpaired half-edge.
pub fn generate_configuration_model<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    rng: &mut R,
) -> Result<Multigraph> {
    check_params(n, d)?;
    let m = n * d;
    let mut pool: Vec<usize> = (0..m).collect();
    let mut pos: Vec<usize> = (0..m).collect();
    let mut pairing = vec![UNPAIRED; m];
    let remove = |pool: &mut Vec<usize>, pos: &mut Vec<usize>, h: usize| {
        let i = pos[h];
        let last = *pool.last().unwrap();
        pool.swap_remove(i);
        if last != h {
            pos[last] = i;
        }
    };
    for h in 0..m {
        if pairing[h] != UNPAIRED {
            continue;
        }
        remove(&mut pool, &mut pos, h);
        let other = pool[rng.random_range(0..pool.len())];
        remove(&mut pool, &mut pos, other);
        pairing[h] = other;
        pairing[other] = h;
    }
    debug_assert!(pairing.iter().enumerate().all(|(i, &j)| j != i && pairing[j] == i));
    Ok(Multigraph { n, d, pairing })
}

/// Rejection sampling: regenerate until the multigraph is simple.
pub fn generate_simple<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    max_attempts: usize,
    rng: &mut R,
) -> Result<Multigraph> {
    for _ in 0..max_attempts {
        let g = generate_configuration_model(n, d, rng)?;
        if g.is_simple() {
            return Ok(g);
        }
    }
    Err(Error::SimpleGraphNotFound { attempts: max_attempts })
}

/// A vertex set with a multiset of edges among those vertices.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Subgraph {
    vertices: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

impl Subgraph {
    pub fn new(vertices: impl IntoIterator<Item = usize>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let vertices: Vec<usize> = vertices.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        for &(u, v) in &edges {
            if vertices.binary_search(&u).is_err() || vertices.binary_search(&v).is_err() {
                return Err(Error::EdgeOutsideSubgraph { u, v });
            }
        }
        Ok(Self { vertices, edges })
    }

    /// Subgraph of `g` induced by `vertices`, keeping every edge (loops and
    /// repeats included) with both endpoints inside.
    pub fn induced(g: &Multigraph, vertices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let vertices: Vec<usize> = vertices.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut inside = vec![false; g.n()];
        for &v in &vertices {
            g.check_vertex(v)?;
            inside[v] = true;
        }
        let d = g.d();
        let mut edges = Vec::new();
        for &v in &vertices {
            for h in v * d..(v + 1) * d {
                let k = g.partner(h);
                if h < k && inside[k / d] {
                    edges.push((v, k / d));
                }
            }
        }
        Ok(Self { vertices, edges })
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn contains(&self, v: usize) -> bool {
        self.vertices.binary_search(&v).is_ok()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn index(&self, v: usize) -> usize {
        self.vertices.binary_search(&v).expect("endpoint in vertex set")
    }

    pub fn component_count(&self) -> usize {
        let mut uf = UnionFind::new(self.vertices.len());
        for &(u, v) in &self.edges {
            uf.union(self.index(u), self.index(v));
        }
        uf.set_count()
    }

    /// Edges minus vertices plus components; zero iff the subgraph is a forest.
    pub fn tree_excess(&self) -> usize {
        self.edges.len() + self.component_count() - self.vertices.len()
    }

    /// Degree of each vertex (in `vertices()` order); loops count twice.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices.len()];
        for &(u, v) in &self.edges {
            deg[self.index(u)] += 1;
            deg[self.index(v)] += 1;
        }
        deg
    }

    /// Adjacency lists indexed like `vertices()`, holding positions, with multiplicity.
    pub fn local_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for &(u, v) in &self.edges {
            let (a, b) = (self.index(u), self.index(v));
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }
}

/// Induced ball of radius `radius` around `centers`.
pub fn ball(g: &Multigraph, centers: &[usize], radius: usize) -> Result<Subgraph> {
    for &c in centers {
        g.check_vertex(c)?;
    }
    let verts = bfs_within(g, centers, radius, None);
    Subgraph::induced(g, verts)
}

/// Vertices reachable from `x` by paths of length at most `radius` that never
/// visit `avoid`, with the induced edges among them.
pub fn ball_excluding(g: &Multigraph, x: usize, avoid: usize, radius: usize) -> Result<Subgraph> {
    g.check_vertex(x)?;
    g.check_vertex(avoid)?;
    if x == avoid {
        return Err(Error::InvalidParams("ball center equals the excluded vertex".into()));
    }
    let verts = bfs_within(g, &[x], radius, Some(avoid));
    Subgraph::induced(g, verts)
}

fn bfs_within(g: &Multigraph, centers: &[usize], radius: usize, avoid: Option<usize>) -> Vec<usize> {
    let mut dist = std::collections::HashMap::new();
    let mut queue = VecDeque::new();
    for &c in centers {
        if dist.insert(c, 0usize).is_none() {
            queue.push_back(c);
        }
    }
    while let Some(v) = queue.pop_front() {
        let dv = dist[&v];
        if dv == radius {
            continue;
        }
        for w in g.neighbors(v) {
            if Some(w) == avoid || dist.contains_key(&w) {
                continue;
            }
            dist.insert(w, dv + 1);
            queue.push_back(w);
        }
    }
    dist.into_keys().collect()
}

/// Largest `r <= max_radius` such that the radius-`r` ball around `x` is a tree.
/// `None` when even the radius-0 ball (a loop at `x`) has a cycle.
pub fn tree_like_radius(g: &Multigraph, x: usize, max_radius: usize) -> Result<Option<usize>> {
    let mut best = None;
    for r in 0..=max_radius {
        if ball(g, &[x], r)?.tree_excess() == 0 {
            best = Some(r);
        } else {
            break;
        }
    }
    Ok(best)
}

/// Options for the iterative second-eigenvalue computation.
#[derive(Clone, Copy, Debug)]
pub struct SpectralOptions {
    /// Graphs with at most this many vertices use a dense eigensolver.
    pub dense_limit: usize,
    pub max_iterations: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            dense_limit: 512,
            max_iterations: 600,
        }
    }
}

/// `1 - lambda_2 / d`, with `lambda_2` the second-largest adjacency eigenvalue.
/// Disconnected graphs have gap 0.
pub fn spectral_gap(g: &Multigraph, tol: f64) -> Result<f64> {
    spectral_gap_with(g, tol, SpectralOptions::default())
}

pub fn spectral_gap_with(g: &Multigraph, tol: f64, opts: SpectralOptions) -> Result<f64> {
    if !g.is_connected() {
        return Ok(0.0);
    }
    if g.n() == 1 {
        return Ok(1.0);
    }
    let lambda2 = if g.n() <= opts.dense_limit {
        second_eigenvalue_dense(g)
    } else {
        second_eigenvalue_lanczos(g, tol, opts.max_iterations)?
    };
    Ok(1.0 - lambda2 / g.d() as f64)
}

fn second_eigenvalue_dense(g: &Multigraph) -> f64 {
    let eig = SymmetricEigen::new(g.adjacency_dense());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals[1]
}

/// Lanczos on the adjacency operator restricted to the orthogonal complement
/// of the constant vector, with full reorthogonalization.
fn second_eigenvalue_lanczos(g: &Multigraph, tol: f64, max_iter: usize) -> Result<f64> {
    let n = g.n();
    let apply = |v: &[f64], out: &mut [f64]| {
        for x in 0..n {
            out[x] = g.neighbors(x).map(|y| v[y]).sum();
        }
    };
    let project = |v: &mut [f64]| {
        let mean = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|x| *x -= mean);
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    // deterministic start vector with components on every eigenvector
    let mut q: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.754_877_666).sin() + 0.3 * ((i * i) as f64 * 0.1).cos()).collect();
    project(&mut q);
    let nq = norm(&q);
    q.iter_mut().for_each(|x| *x /= nq);

    let steps = max_iter.min(n - 1);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut w = vec![0.0; n];
    for k in 0..steps {
        apply(&q, &mut w);
        let a: f64 = w.iter().zip(&q).map(|(x, y)| x * y).sum();
        alpha.push(a);
        basis.push(q.clone());
        project(&mut w);
        for _ in 0..2 {
            for b in &basis {
                let c: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let bnext = norm(&w);
        let check = k + 1 == steps || bnext < 1e-12 || (k + 1) % 10 == 0;
        if check {
            let m = alpha.len();
            let mut t = DMatrix::zeros(m, m);
            for i in 0..m {
                t[(i, i)] = alpha[i];
                if i + 1 < m {
                    t[(i, i + 1)] = beta[i];
                    t[(i + 1, i)] = beta[i];
                }
            }
            let eig = SymmetricEigen::new(t);
            let (imax, &theta) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            let residual = (bnext * eig.eigenvectors[(m - 1, imax)]).abs();
            // invariant subspace exhausted: Ritz values are exact
            if residual <= tol || bnext < 1e-12 {
                return Ok(theta);
            }
        }
        beta.push(bnext);
        q.iter_mut().zip(&w).for_each(|(x, y)| *x = y / bnext);
    }
    Err(Error::NotConverged {
        what: "Lanczos second eigenvalue",
        iterations: steps,
    })
}

/// Radii used by [`good_graph_report`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodGraphParams {
    pub cycle_radius: usize,
    pub green_radius: usize,
    pub spectral_tol: f64,
}

impl GoodGraphParams {
    /// `floor(0.25 log_{d-1} n)` for cycle counting and
    /// `floor(2 log_{d-1} log n)` for the Green comparison.
    pub fn defaults_for(n: usize, d: usize) -> Self {
        let base = ((d - 1) as f64).ln();
        let ln_n = (n.max(3) as f64).ln();
        Self {
            cycle_radius: (0.25 * ln_n / base).floor().max(0.0) as usize,
            green_radius: (2.0 * ln_n.ln() / base).floor().max(0.0) as usize,
            spectral_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodGraphReport {
    pub spectral_gap: f64,
    /// Largest tree excess of a `cycle_radius` ball around a single vertex.
    pub max_cycles_in_log_ball: usize,
    /// `None` when no vertex has a tree-like `green_radius` ball.
    pub green_diag_error: Option<f64>,
    pub green_offdiag_error: Option<f64>,
    pub tree_like_vertices: usize,
    pub thresholds_used: GoodGraphParams,
}

/// Measures the expander, sparse-cycle and local Green-function conditions.
pub fn good_graph_report(
    g: &Multigraph,
    green: &GreenMatrix,
    params: GoodGraphParams,
) -> Result<GoodGraphReport> {
    if green.n() != g.n() {
        return Err(Error::DimensionMismatch {
            expected: g.n(),
            found: green.n(),
        });
    }
    let gap = spectral_gap(g, params.spectral_tol)?;
    let mut max_cycles = 0;
    let mut diag: Option<f64> = None;
    let mut off: Option<f64> = None;
    let mut tree_like = 0;
    let dm2 = (g.d() - 2) as f64;
    let diag_target = (g.d() - 1) as f64 / dm2;
    let off_target = 1.0 / dm2;
    for x in 0..g.n() {
        let tx = ball(g, &[x], params.cycle_radius)?.tree_excess();
        max_cycles = max_cycles.max(tx);
        if ball(g, &[x], params.green_radius)?.tree_excess() == 0 {
            tree_like += 1;
            let e = (green.get(x, x) - diag_target).abs();
            diag = Some(diag.map_or(e, |m| m.max(e)));
            for y in g.neighbors(x) {
                let e = (green.get(x, y) - off_target).abs();
                off = Some(off.map_or(e, |m| m.max(e)));
            }
        }
    }
    Ok(GoodGraphReport {
        spectral_gap: gap,
        max_cycles_in_log_ball: max_cycles,
        green_diag_error: diag,
        green_offdiag_error: off,
        tree_like_vertices: tree_like,
        thresholds_used: params,
    })
}
