//! The level-set cluster of the root for the free field on the d-regular
//! tree, grown generation by generation, and Monte Carlo estimators built on it.
//!
//! Generation `k` of the cluster holds the vertices at distance `k` from the
//! root whose whole ancestral line has field value at least `h`. In the
//! two-sided tree the root has `d` children; in the one-sided tree (and below
//! the root in both) every vertex has `d - 1`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gff::{tree_gff_child, tree_gff_root_from};
use crate::levelset::{RootedTree, TreeCode};
use crate::seed::replica_seed;
use crate::stats::{linear_fit, mean, proportion_std_error, std_error, LinearFit};

/// Source of the standard normals attached to tree vertices.
///
/// A vertex is addressed by its generation and its index among all vertices
/// of that generation in the full tree (children of the vertex at `a` in
/// generation `k >= 1` are `a * (d - 1) + j`; children of the root are `j`).
pub trait TreeNoise {
    fn draw(&mut self, generation: usize, address: u128) -> f64;
}

/// Sequential draws from an RNG; addresses are ignored.
pub struct RngNoise<'a, R: Rng + ?Sized>(pub &'a mut R);

impl<R: Rng + ?Sized> TreeNoise for RngNoise<'_, R> {
    #[inline]
    fn draw(&mut self, _generation: usize, _address: u128) -> f64 {
        self.0.sample(StandardNormal)
    }
}

/// Draws determined by `(seed, generation, address)` alone, so two clusters
/// grown with the same seed see the same normal at every tree vertex.
#[derive(Clone, Copy, Debug)]
pub struct HashedNoise {
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl TreeNoise for HashedNoise {
    fn draw(&mut self, generation: usize, address: u128) -> f64 {
        let mut k = splitmix(self.seed ^ splitmix(generation as u64));
        k = splitmix(k ^ address as u64);
        k = splitmix(k ^ (address >> 64) as u64);
        let u1 = ((k >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
        let u2 = (splitmix(k) >> 11) as f64 / (1u64 << 53) as f64;
        // Box-Muller
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RootLaw {
    /// Root value drawn from the tree field, variance `(d-1)/(d-2)`.
    Prior,
    /// Root value fixed, conditioning the field on it.
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub d: usize,
    pub h: f64,
    pub root_law: RootLaw,
    pub max_generation: usize,
    /// Growth stops once the cluster has at least this many vertices.
    pub max_size: usize,
    pub one_sided: bool,
    /// Number of generations whose vertices are kept in the sample.
    pub retain: usize,
}

impl ClusterConfig {
    pub fn new(d: usize, h: f64, max_generation: usize) -> Self {
        Self {
            d,
            h,
            root_law: RootLaw::Prior,
            max_generation,
            max_size: 1_000_000,
            one_sided: false,
            retain: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterStatus {
    /// Generation `k` is empty (and all earlier ones are not).
    Died(usize),
    TruncatedByGeneration,
    TruncatedBySize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Index of the parent in the previous retained generation.
    pub parent: usize,
    pub value: f64,
    pub address: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeSample {
    pub d: usize,
    pub h: f64,
    pub one_sided: bool,
    pub generation_sizes: Vec<usize>,
    pub status: ClusterStatus,
    /// The first `retain + 1` generations (root included), if requested.
    pub generations: Vec<Vec<TreeNode>>,
}

impl TreeSample {
    pub fn survived(&self) -> bool {
        !matches!(self.status, ClusterStatus::Died(_))
    }

    pub fn total_size(&self) -> usize {
        self.generation_sizes.iter().sum()
    }

    /// Canonical code of the cluster restricted to generations `0..=k`.
    /// Needs `k` retained generations; `None` if the root is not in the cluster.
    pub fn ball_code(&self, k: usize) -> Option<TreeCode> {
        if self.generation_sizes[0] == 0 || self.generations.is_empty() {
            return None;
        }
        let mut tree = RootedTree::single();
        let mut prev_ids = vec![0usize];
        for gen in self.generations.iter().skip(1).take(k) {
            let ids: Vec<usize> = gen.iter().map(|node| tree.push_child(prev_ids[node.parent])).collect();
            prev_ids = ids;
        }
        Some(tree.code())
    }
}

/// Grows the cluster of the root breadth-first.
pub fn simulate_cluster<N: TreeNoise + ?Sized>(cfg: &ClusterConfig, noise: &mut N) -> TreeSample {
    let d = cfg.d;
    let root = match cfg.root_law {
        RootLaw::Prior => tree_gff_root_from(d, noise.draw(0, 0)),
        RootLaw::Fixed(a) => a,
    };
    let mut sample = TreeSample {
        d,
        h: cfg.h,
        one_sided: cfg.one_sided,
        generation_sizes: vec![0],
        status: ClusterStatus::Died(0),
        generations: Vec::new(),
    };
    if !(root >= cfg.h) {
        return sample;
    }
    sample.generation_sizes[0] = 1;
    let keep = cfg.retain > 0;
    if keep {
        sample.generations.push(vec![TreeNode {
            parent: 0,
            value: root,
            address: 0,
        }]);
    }
    let mut values = vec![root];
    let mut addrs: Vec<u128> = vec![0];
    let mut total = 1usize;
    let q = (d - 1) as u128;
    for k in 1..=cfg.max_generation {
        let fanout = if k == 1 && !cfg.one_sided { d } else { d - 1 };
        let mut next_vals = Vec::with_capacity(values.len() * 2);
        let mut next_addrs = Vec::with_capacity(values.len() * 2);
        let mut nodes = Vec::new();
        let retain_this = keep && k <= cfg.retain;
        for (i, (&v, &a)) in values.iter().zip(&addrs).enumerate() {
            for j in 0..fanout {
                let addr = if k == 1 { j as u128 } else { a.wrapping_mul(q).wrapping_add(j as u128) };
                let c = tree_gff_child(v, noise.draw(k, addr), d);
                if c >= cfg.h {
                    next_vals.push(c);
                    next_addrs.push(addr);
                    if retain_this {
                        nodes.push(TreeNode {
                            parent: i,
                            value: c,
                            address: addr,
                        });
                    }
                }
            }
        }
        if retain_this {
            sample.generations.push(nodes);
        }
        sample.generation_sizes.push(next_vals.len());
        total += next_vals.len();
        if next_vals.is_empty() {
            sample.status = ClusterStatus::Died(k);
            return sample;
        }
        if k == cfg.max_generation {
            sample.status = ClusterStatus::TruncatedByGeneration;
            return sample;
        }
        if total >= cfg.max_size {
            sample.status = ClusterStatus::TruncatedBySize;
            return sample;
        }
        values = next_vals;
        addrs = next_addrs;
    }
    // max_generation == 0: only the root was examined
    sample.status = ClusterStatus::TruncatedByGeneration;
    sample
}

/// Convenience wrapper drawing the vertex normals from `rng`.
pub fn simulate_cluster_rng<R: Rng + ?Sized>(cfg: &ClusterConfig, rng: &mut R) -> TreeSample {
    simulate_cluster(cfg, &mut RngNoise(rng))
}

/// Shared settings for the replica-based estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRun {
    pub d: usize,
    pub h: f64,
    /// Survival proxy: a replica survives if generation `generations` is nonempty.
    pub generations: usize,
    pub max_size: usize,
    pub replicas: usize,
    pub seed: u64,
}

impl TreeRun {
    pub fn new(d: usize, h: f64, generations: usize, replicas: usize, seed: u64) -> Self {
        Self {
            d,
            h,
            generations,
            max_size: 1_000_000,
            replicas,
            seed,
        }
    }

    fn check(&self) -> Result<()> {
        if self.d < 3 {
            return Err(Error::DegreeTooSmall { d: self.d });
        }
        if self.generations == 0 || self.replicas == 0 || self.max_size == 0 {
            return Err(Error::InvalidParams(
                "generations, replicas and max_size must be positive".into(),
            ));
        }
        Ok(())
    }

    fn config(&self) -> ClusterConfig {
        ClusterConfig {
            max_size: self.max_size,
            ..ClusterConfig::new(self.d, self.h, self.generations)
        }
    }

    /// Runs `f` on every replica with its own derived RNG; results come back
    /// in replica order regardless of scheduling.
    fn map_replicas<T, F>(&self, stream: &str, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut ChaCha8Rng) -> T + Sync,
    {
        (0..self.replicas)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(replica_seed(self.seed, stream, i));
                f(&mut rng)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub d: usize,
    pub h: f64,
    pub proxy_generation: usize,
    pub replicas: usize,
    pub point_estimate: f64,
    pub std_error: f64,
    pub seed: u64,
}

/// Fraction of replicas whose cluster reaches generation `run.generations`
/// (or the size cap).
pub fn estimate_eta(run: &TreeRun) -> Result<EtaEstimate> {
    run.check()?;
    let cfg = run.config();
    let survived = run.map_replicas("eta", |rng| simulate_cluster_rng(&cfg, rng).survived());
    let p = survived.iter().filter(|&&s| s).count() as f64 / run.replicas as f64;
    Ok(EtaEstimate {
        d: run.d,
        h: run.h,
        proxy_generation: run.generations,
        replicas: run.replicas,
        point_estimate: p,
        std_error: proportion_std_error(p, run.replicas),
        seed: run.seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub lambda: f64,
    /// Standard error of the mean log-slope, propagated to `lambda`.
    pub std_error: f64,
    pub survivors: usize,
}

/// Growth rate of surviving clusters: each survivor contributes the
/// least-squares slope of `log |Z_k|` over `k` in `[K/2, K]` (or up to its
/// last generation if the size cap stopped it); slopes are averaged and
/// exponentiated.
pub fn estimate_lambda(run: &TreeRun) -> Result<LambdaEstimate> {
    run.check()?;
    let cfg = run.config();
    let lo = run.generations / 2;
    let slopes: Vec<Option<f64>> = run.map_replicas("lambda", |rng| {
        let s = simulate_cluster_rng(&cfg, rng);
        if !s.survived() {
            return None;
        }
        let last = s.generation_sizes.len() - 1;
        if last < lo + 2 {
            return None;
        }
        let ks: Vec<f64> = (lo..=last).map(|k| k as f64).collect();
        let ys: Vec<f64> = (lo..=last).map(|k| (s.generation_sizes[k] as f64).ln()).collect();
        linear_fit(&ks, &ys).map(|f| f.slope)
    });
    let slopes: Vec<f64> = slopes.into_iter().flatten().collect();
    if slopes.is_empty() {
        return Err(Error::NoSurvivors);
    }
    let m = mean(&slopes);
    Ok(LambdaEstimate {
        lambda: m.exp(),
        std_error: m.exp() * std_error(&slopes),
        survivors: slopes.len(),
    })
}

/// Bisection for the critical level: `h` counts as supercritical when the
/// survival estimate exceeds three standard errors. Returns a bracket of
/// width at most `tol`. The finite proxy generation biases it upward.
pub fn estimate_h_star(run: &TreeRun, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)> {
    run.check()?;
    let supercritical = |h: f64| -> Result<bool> {
        let e = estimate_eta(&TreeRun { h, ..*run })?;
        Ok(e.point_estimate > 3.0 * e.std_error)
    };
    if !supercritical(lo)? || supercritical(hi)? {
        return Err(Error::BracketNotFound { lo, hi });
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let m = 0.5 * (a + b);
        if supercritical(m)? {
            a = m;
        } else {
            b = m;
        }
    }
    Ok((a, b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub sizes: Vec<usize>,
    /// Empirical `P(k <= |C| < infinity)` for each size `k`.
    pub tail: Vec<f64>,
    pub counts: Vec<usize>,
    pub replicas: usize,
    /// Replicas that hit a cap and are treated as infinite.
    pub truncated: usize,
}

impl TailCurve {
    /// Linear fit of `log tail` against size over the sizes with positive counts.
    pub fn log_fit(&self) -> Option<LinearFit> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .sizes
            .iter()
            .zip(&self.tail)
            .filter(|(_, &t)| t > 0.0)
            .map(|(&k, &t)| (k as f64, t.ln()))
            .unzip();
        linear_fit(&xs, &ys)
    }
}

/// Tail of the size of finite clusters. Replicas stopped by either cap are
/// counted as infinite, so `run.max_size` must be well above the largest size
/// of interest.
pub fn finite_cluster_tail(run: &TreeRun, sizes: &[usize]) -> Result<TailCurve> {
    run.check()?;
    let cfg = run.config();
    let finite: Vec<Option<usize>> = run.map_replicas("tail", |rng| {
        let s = simulate_cluster_rng(&cfg, rng);
        (!s.survived()).then(|| s.total_size())
    });
    let counts: Vec<usize> = sizes
        .iter()
        .map(|&k| finite.iter().filter(|c| matches!(c, Some(sz) if *sz >= k)).count())
        .collect();
    let tail = counts.iter().map(|&c| c as f64 / run.replicas as f64).collect();
    Ok(TailCurve {
        sizes: sizes.to_vec(),
        tail,
        counts,
        replicas: run.replicas,
        truncated: finite.iter().filter(|c| c.is_none()).count(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreKernelEstimate {
    /// Root in the cluster with at least one surviving child line.
    pub eta: f64,
    /// At least two surviving child lines.
    pub k1: f64,
    /// At least three surviving child lines.
    pub k2: f64,
    pub replicas: usize,
}

impl CoreKernelEstimate {
    pub fn std_errors(&self) -> (f64, f64, f64) {
        (
            proportion_std_error(self.eta, self.replicas),
            proportion_std_error(self.k1, self.replicas),
            proportion_std_error(self.k2, self.replicas),
        )
    }
}

/// Counts root children whose own cluster in the one-sided subtree below them
/// reaches depth `run.generations - 1`. Given the root value the subtrees are
/// independent, so each is grown separately with its root value fixed.
pub fn estimate_core_kernel_probs(run: &TreeRun) -> Result<CoreKernelEstimate> {
    run.check()?;
    let d = run.d;
    let sub_cfg = |a: f64| ClusterConfig {
        root_law: RootLaw::Fixed(a),
        one_sided: true,
        max_size: run.max_size,
        ..ClusterConfig::new(d, run.h, run.generations.saturating_sub(1).max(1))
    };
    let lines: Vec<usize> = run.map_replicas("core-kernel", |rng| {
        let root = tree_gff_root_from(d, rng.sample(StandardNormal));
        if root < run.h {
            return 0;
        }
        let mut surviving = 0;
        for _ in 0..d {
            let c = tree_gff_child(root, rng.sample(StandardNormal), d);
            if c >= run.h && simulate_cluster_rng(&sub_cfg(c), rng).survived() {
                surviving += 1;
            }
        }
        surviving
    });
    let frac = |m: usize| lines.iter().filter(|&&s| s >= m).count() as f64 / run.replicas as f64;
    Ok(CoreKernelEstimate {
        eta: frac(1),
        k1: frac(2),
        k2: frac(3),
        replicas: run.replicas,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallDistribution {
    pub radius: usize,
    pub probabilities: BTreeMap<String, f64>,
    pub survivors: usize,
    pub replicas: usize,
}

/// Law of the radius-`k` ball of the root cluster, conditioned on survival to
/// generation `run.generations` (or the size cap).
pub fn conditioned_ball_distribution(run: &TreeRun, k: usize) -> Result<BallDistribution> {
    run.check()?;
    if k >= run.generations {
        return Err(Error::InvalidParams("ball radius must be below the proxy generation".into()));
    }
    let cfg = ClusterConfig {
        retain: k.max(1),
        ..run.config()
    };
    let codes: Vec<Option<TreeCode>> = run.map_replicas("ball", |rng| {
        let s = simulate_cluster_rng(&cfg, rng);
        if s.survived() {
            s.ball_code(k)
        } else {
            None
        }
    });
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for c in codes.into_iter().flatten() {
        *counts.entry(c.0).or_insert(0) += 1;
    }
    let survivors: usize = counts.values().sum();
    if survivors == 0 {
        return Err(Error::NoSurvivors);
    }
    Ok(BallDistribution {
        radius: k,
        probabilities: counts
            .into_iter()
            .map(|(code, c)| (code, c as f64 / survivors as f64))
            .collect(),
        survivors,
        replicas: run.replicas,
    })
}

/// Mean size of generation `ell` of the one-sided cluster with root value
/// fixed at `h`, with its standard error.
pub fn mean_one_sided_generation(run: &TreeRun, ell: usize) -> Result<(f64, f64)> {
    run.check()?;
    let cfg = ClusterConfig {
        root_law: RootLaw::Fixed(run.h),
        one_sided: true,
        max_size: usize::MAX,
        ..ClusterConfig::new(run.d, run.h, ell)
    };
    let sizes: Vec<f64> = run.map_replicas("one-sided", |rng| {
        let s = simulate_cluster_rng(&cfg, rng);
        s.generation_sizes.get(ell).copied().unwrap_or(0) as f64
    });
    Ok((mean(&sizes), std_error(&sizes)))
}
