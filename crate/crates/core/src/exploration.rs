//! Lazy exploration of a level-set component on a configuration-model graph.
//!
//! The graph is never built in full: half-edges are paired on demand, always
//! pairing the requested half-edge with a uniform unpaired one. This is the
//! sequential pairing process, so finishing the pairing in any order yields
//! a uniform configuration-model multigraph. Along the revealed tree the
//! field is replaced by its tree counterpart driven by the same standard
//! normals, which is the coupling that the exploration rules rely on.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gff::{tree_gff_child, tree_gff_root_from, GaussianConditioner, GaussianReservoir};
use crate::green::GreenKernel;
use crate::multigraph::{Multigraph, Subgraph};
use crate::seed::replica_seed;
use crate::unionfind::SparseUnionFind;

/// A partially revealed configuration-model pairing on `n` vertices of
/// degree `d`. Memory grows with the number of revealed pairings only.
#[derive(Clone, Debug)]
pub struct LazyGraphState {
    n: usize,
    d: usize,
    partner: HashMap<usize, usize>,
    /// Overrides of the virtual pool array, which is the identity otherwise.
    pool_at: HashMap<usize, usize>,
    /// Position of a half-edge in the pool, for those that moved.
    pool_pos: HashMap<usize, usize>,
    pool_len: usize,
    seen: HashSet<usize>,
    components: SparseUnionFind,
    revealed_pairs: usize,
}

impl LazyGraphState {
    pub fn new(n: usize, d: usize) -> Result<Self> {
        if d < 3 {
            return Err(Error::DegreeTooSmall { d });
        }
        if (n * d) % 2 != 0 {
            return Err(Error::OddHalfEdgeCount { n, d });
        }
        Ok(Self {
            n,
            d,
            partner: HashMap::new(),
            pool_at: HashMap::new(),
            pool_pos: HashMap::new(),
            pool_len: n * d,
            seen: HashSet::new(),
            components: SparseUnionFind::new(),
            revealed_pairs: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn partner(&self, half_edge: usize) -> Option<usize> {
        self.partner.get(&half_edge).copied()
    }

    /// Vertices with at least one paired half-edge.
    pub fn seen_count(&self) -> usize {
        self.seen.len()
    }

    pub fn is_seen(&self, x: usize) -> bool {
        self.seen.contains(&x)
    }

    pub fn revealed_pairs(&self) -> usize {
        self.revealed_pairs
    }

    pub fn unpaired_count(&self) -> usize {
        self.pool_len
    }

    pub fn is_complete(&self) -> bool {
        self.pool_len == 0
    }

    fn pool_get(&self, i: usize) -> usize {
        self.pool_at.get(&i).copied().unwrap_or(i)
    }

    fn pool_position(&self, h: usize) -> usize {
        self.pool_pos.get(&h).copied().unwrap_or(h)
    }

    fn pool_remove(&mut self, h: usize) {
        let i = self.pool_position(h);
        let last = self.pool_len - 1;
        let moved = self.pool_get(last);
        if i != last {
            self.pool_at.insert(i, moved);
            self.pool_pos.insert(moved, i);
        }
        self.pool_at.remove(&last);
        self.pool_pos.remove(&h);
        self.pool_len = last;
    }

    /// Pairs `half_edge` with a uniform other unpaired half-edge. Returns the
    /// partner and whether the new edge closed a cycle among revealed edges.
    pub fn pair_half_edge<R: Rng + ?Sized>(&mut self, half_edge: usize, rng: &mut R) -> Result<(usize, bool)> {
        if half_edge >= self.n * self.d {
            return Err(Error::UnknownVertex {
                vertex: half_edge / self.d,
                n: self.n,
            });
        }
        if self.partner.contains_key(&half_edge) {
            return Err(Error::InvalidPairing(format!("half-edge {half_edge} is already paired")));
        }
        if self.pool_len < 2 {
            return Err(Error::HalfEdgesExhausted);
        }
        self.pool_remove(half_edge);
        let other = self.pool_get(rng.random_range(0..self.pool_len));
        self.pool_remove(other);
        self.partner.insert(half_edge, other);
        self.partner.insert(other, half_edge);
        self.revealed_pairs += 1;
        let (u, v) = (half_edge / self.d, other / self.d);
        self.seen.insert(u);
        self.seen.insert(v);
        let merged = self.components.union(u, v);
        Ok((other, !merged))
    }

    /// Known neighbours of `x`, one entry per paired half-edge, in half-edge order.
    pub fn revealed_neighbors(&self, x: usize) -> Vec<usize> {
        (x * self.d..(x + 1) * self.d)
            .filter_map(|h| self.partner(h).map(|p| p / self.d))
            .collect()
    }

    /// Pairs every unpaired half-edge of every vertex within distance
    /// `< radius` of `frontier`, distances taken in the revealed graph as it
    /// grows. Vertices are processed breadth-first and half-edges in
    /// increasing index. Returns the newly revealed edges and whether any of
    /// them closed a cycle.
    pub fn reveal_envelope<R: Rng + ?Sized>(
        &mut self,
        frontier: &[usize],
        radius: usize,
        rng: &mut R,
    ) -> Result<(Subgraph, bool)> {
        for &x in frontier {
            if x >= self.n {
                return Err(Error::UnknownVertex { vertex: x, n: self.n });
            }
        }
        if radius > 0 && self.is_complete() {
            return Err(Error::HalfEdgesExhausted);
        }
        let mut dist: HashMap<usize, usize> = HashMap::new();
        let mut queue = VecDeque::new();
        for &x in frontier {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(x) {
                e.insert(0);
                queue.push_back(x);
            }
        }
        let mut new_edges = Vec::new();
        let mut touched = HashSet::new();
        let mut cycle = false;
        while let Some(v) = queue.pop_front() {
            let dv = dist[&v];
            if dv >= radius {
                continue;
            }
            for h in v * self.d..(v + 1) * self.d {
                let p = match self.partner(h) {
                    Some(p) => p,
                    None => {
                        let (p, closed) = self.pair_half_edge(h, rng)?;
                        cycle |= closed;
                        let w = p / self.d;
                        new_edges.push((v, w));
                        touched.insert(v);
                        touched.insert(w);
                        p
                    }
                };
                let w = p / self.d;
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(dv + 1);
                    queue.push_back(w);
                }
            }
        }
        let vertices: Vec<usize> = touched.into_iter().collect();
        Ok((Subgraph::new(vertices, new_edges)?, cycle))
    }

    /// Finishes the pairing with the same sequential rule and returns the graph.
    pub fn complete<R: Rng + ?Sized>(mut self, rng: &mut R) -> Result<Multigraph> {
        let m = self.n * self.d;
        for h in 0..m {
            if !self.partner.contains_key(&h) {
                self.pair_half_edge(h, rng)?;
            }
        }
        let pairing: Vec<usize> = (0..m).map(|h| self.partner[&h]).collect();
        Multigraph::from_pairing(self.n, self.d, pairing)
    }
}

/// Tunable part of the exploration rules. The envelope radius is
/// `floor(kappa log_{d-1} log n)`, the success target is
/// `sqrt(n) (d-1)^{-radius} (log n)^{-log_power}`, and the generation cap
/// is `log n / log lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationParams {
    pub kappa: f64,
    pub log_power: f64,
    /// Growth rate used for the generation cap; must exceed 1.
    pub lambda: f64,
}

impl ExplorationParams {
    /// The asymptotic rules. At practical sizes they give a target below one.
    pub fn asymptotic(lambda: f64) -> Self {
        Self {
            kappa: 4.0,
            log_power: 6.0,
            lambda,
        }
    }

    /// Rules scaled for graphs of `10^4` to `10^6` vertices: no envelope
    /// beyond the neighbours and a target of a few vertices per generation.
    pub fn desk(lambda: f64) -> Self {
        Self {
            kappa: 0.0,
            log_power: 1.25,
            lambda,
        }
    }

    pub fn derive(&self, n: usize, d: usize) -> Result<DerivedParams> {
        if d < 3 {
            return Err(Error::DegreeTooSmall { d });
        }
        if n < 3 {
            return Err(Error::InvalidParams(format!("exploration needs n >= 3, got {n}")));
        }
        if !(self.lambda > 1.0) {
            return Err(Error::InvalidParams(format!("growth rate must exceed 1, got {}", self.lambda)));
        }
        if !(self.kappa >= 0.0) || !self.log_power.is_finite() {
            return Err(Error::InvalidParams("kappa must be >= 0 and log_power finite".into()));
        }
        let log_n = (n as f64).ln();
        let base = ((d - 1) as f64).ln();
        let envelope_radius = (self.kappa * log_n.ln().max(0.0) / base).floor() as usize;
        let scale = ((d - 1) as f64).powi(-(envelope_radius as i32)) * log_n.powf(-self.log_power);
        let target = (n as f64).sqrt() * scale;
        if !(target >= 1.0) {
            return Err(Error::InvalidParams(format!(
                "success target {target:.3e} is below one at n = {n}; lower kappa or log_power"
            )));
        }
        Ok(DerivedParams {
            envelope_radius,
            boundary_scale: scale,
            target,
            generation_cap: log_n / self.lambda.ln(),
            shift: 1.0 / log_n,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub envelope_radius: usize,
    pub boundary_scale: f64,
    /// A generation of at least this many vertices ends the run successfully.
    pub target: f64,
    pub generation_cap: f64,
    /// Margin added to (upper) or subtracted from (lower) the level.
    pub shift: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplorationMode {
    Upper,
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Successful,
    Aborted,
    CycleStopped,
    CapStopped,
    RootRejected,
}

/// A vertex whose tree value was drawn: the root or a neighbour of an
/// admitted vertex. `reservoir_index` is the normal it consumed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub vertex: usize,
    /// Index of the parent in the candidate list; `None` for the root.
    pub parent: Option<usize>,
    pub generation: usize,
    pub tree_value: f64,
    pub admitted: bool,
    pub reservoir_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationOutcome {
    pub mode: ExplorationMode,
    pub verdict: Verdict,
    pub start: usize,
    /// Candidates in the order their normals were consumed.
    pub candidates: Vec<Candidate>,
    /// Number of completed steps.
    pub steps: usize,
    /// Size of the last generation examined by the stop rules.
    pub boundary_size: usize,
    pub seen_count: usize,
}

impl ExplorationOutcome {
    /// Admitted vertices, in candidate order.
    pub fn tree(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| c.admitted)
    }

    pub fn tree_size(&self) -> usize {
        self.tree().count()
    }
}

/// Explores the component of `x` in the level set above `h`.
///
/// Before revealing anything the root value is compared with the shifted
/// level; in upper mode a low root gives [`Verdict::RootRejected`], in lower
/// mode it counts as [`Verdict::Aborted`] since the explored set is empty.
/// Step 0 then reveals the envelope around `x`. Each later step reveals the
/// envelope of the newest generation with one extra layer and applies the
/// stop rules in order: a cycle, a generation reaching the target, an empty
/// generation, the generation cap. Otherwise each neighbour of the newest
/// generation, other than its parent, draws a tree value from the next
/// normal and is admitted when the value clears the shifted level.
pub fn explore_component<R: Rng + ?Sized>(
    state: &mut LazyGraphState,
    x: usize,
    h: f64,
    params: &ExplorationParams,
    mode: ExplorationMode,
    reservoir: &mut GaussianReservoir,
    rng: &mut R,
) -> Result<ExplorationOutcome> {
    let n = state.n();
    let d = state.d();
    if x >= n {
        return Err(Error::UnknownVertex { vertex: x, n });
    }
    let derived = params.derive(n, d)?;
    let threshold = match mode {
        ExplorationMode::Upper => h + derived.shift,
        ExplorationMode::Lower => h - derived.shift,
    };
    let root_value = tree_gff_root_from(d, reservoir.take(0)?);
    let admitted = root_value >= threshold;
    let mut candidates = vec![Candidate {
        vertex: x,
        parent: None,
        generation: 0,
        tree_value: root_value,
        admitted,
        reservoir_index: 0,
    }];
    let finish = |verdict, candidates, steps, boundary_size, state: &LazyGraphState| ExplorationOutcome {
        mode,
        verdict,
        start: x,
        candidates,
        steps,
        boundary_size,
        seen_count: state.seen_count(),
    };
    if !admitted {
        let verdict = match mode {
            ExplorationMode::Upper => Verdict::RootRejected,
            ExplorationMode::Lower => Verdict::Aborted,
        };
        return Ok(finish(verdict, candidates, 0, 0, state));
    }
    if derived.envelope_radius > 0 {
        let (_, cycle) = state.reveal_envelope(&[x], derived.envelope_radius, rng)?;
        if cycle {
            return Ok(finish(Verdict::CycleStopped, candidates, 0, 1, state));
        }
    }
    // indices into `candidates` of the newest generation
    let mut newest = vec![0usize];
    let mut k = 1usize;
    loop {
        let frontier: Vec<usize> = newest.iter().map(|&i| candidates[i].vertex).collect();
        let mut cycle = false;
        if !frontier.is_empty() {
            let (_, c) = state.reveal_envelope(&frontier, derived.envelope_radius + 1, rng)?;
            cycle = c;
        }
        let verdict = if cycle {
            Some(Verdict::CycleStopped)
        } else if newest.len() as f64 >= derived.target {
            Some(Verdict::Successful)
        } else if newest.is_empty() {
            Some(Verdict::Aborted)
        } else if k as f64 > derived.generation_cap {
            Some(Verdict::CapStopped)
        } else {
            None
        };
        if let Some(v) = verdict {
            let boundary = newest.len();
            return Ok(finish(v, candidates, k - 1, boundary, state));
        }
        let mut next = Vec::new();
        for &pi in &newest {
            let parent_vertex = candidates[pi].vertex;
            let grandparent = candidates[pi].parent.map(|g| candidates[g].vertex);
            let parent_value = candidates[pi].tree_value;
            let mut skipped_parent = false;
            for w in state.revealed_neighbors(parent_vertex) {
                // without cycles the parent appears exactly once
                if Some(w) == grandparent && !skipped_parent {
                    skipped_parent = true;
                    continue;
                }
                let index = candidates.len();
                let value = tree_gff_child(parent_value, reservoir.take(index)?, d);
                let admitted = value >= threshold;
                candidates.push(Candidate {
                    vertex: w,
                    parent: Some(pi),
                    generation: k,
                    tree_value: value,
                    admitted,
                    reservoir_index: index,
                });
                if admitted {
                    next.push(index);
                }
            }
        }
        newest = next;
        k += 1;
    }
}

/// Fractions of lazy explorations, each on a fresh graph from a uniform
/// start, ending in each verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GiantFractionEstimate {
    pub n: usize,
    pub d: usize,
    pub h: f64,
    pub params: ExplorationParams,
    pub derived: DerivedParams,
    pub replicas: usize,
    pub seed: u64,
    /// Upper-mode runs that ended successfully.
    pub upper_success: f64,
    /// Lower-mode runs that did not abort.
    pub lower_not_aborted: f64,
    /// Average of the two one-sided estimates, which cancels the first-order
    /// effect of the level shift.
    pub midpoint: f64,
    pub upper_std_error: f64,
    pub lower_std_error: f64,
    pub upper_verdicts: VerdictCounts,
    pub lower_verdicts: VerdictCounts,
    pub max_seen: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub successful: usize,
    pub aborted: usize,
    pub cycle_stopped: usize,
    pub cap_stopped: usize,
    pub root_rejected: usize,
}

impl VerdictCounts {
    pub fn add(&mut self, v: Verdict) {
        match v {
            Verdict::Successful => self.successful += 1,
            Verdict::Aborted => self.aborted += 1,
            Verdict::CycleStopped => self.cycle_stopped += 1,
            Verdict::CapStopped => self.cap_stopped += 1,
            Verdict::RootRejected => self.root_rejected += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.successful + self.aborted + self.cycle_stopped + self.cap_stopped + self.root_rejected
    }
}

/// One exploration on a fresh lazy graph, seeded from `seed`.
pub fn explore_fresh(
    n: usize,
    d: usize,
    h: f64,
    params: &ExplorationParams,
    mode: ExplorationMode,
    seed: u64,
) -> Result<ExplorationOutcome> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::seed::derive_seed(seed, &["pairing"]));
    let mut reservoir = GaussianReservoir::new(crate::seed::derive_seed(seed, &["noise"]));
    let mut state = LazyGraphState::new(n, d)?;
    let x = rng.random_range(0..n);
    explore_component(&mut state, x, h, params, mode, &mut reservoir, &mut rng)
}

pub fn estimate_giant_fraction(
    n: usize,
    d: usize,
    h: f64,
    params: &ExplorationParams,
    replicas: usize,
    seed: u64,
) -> Result<GiantFractionEstimate> {
    if replicas == 0 {
        return Err(Error::InvalidParams("replicas must be positive".into()));
    }
    let derived = params.derive(n, d)?;
    let run = |mode: ExplorationMode, stream: &str| -> Result<Vec<ExplorationOutcome>> {
        (0..replicas)
            .into_par_iter()
            .map(|i| explore_fresh(n, d, h, params, mode, replica_seed(seed, stream, i)))
            .collect()
    };
    let upper = run(ExplorationMode::Upper, "explore-upper")?;
    let lower = run(ExplorationMode::Lower, "explore-lower")?;
    let mut upper_verdicts = VerdictCounts::default();
    let mut lower_verdicts = VerdictCounts::default();
    upper.iter().for_each(|o| upper_verdicts.add(o.verdict));
    lower.iter().for_each(|o| lower_verdicts.add(o.verdict));
    let r = replicas as f64;
    let upper_success = upper_verdicts.successful as f64 / r;
    let lower_not_aborted = 1.0 - lower_verdicts.aborted as f64 / r;
    let max_seen = upper.iter().chain(&lower).map(|o| o.seen_count).max().unwrap_or(0);
    Ok(GiantFractionEstimate {
        n,
        d,
        h,
        params: *params,
        derived,
        replicas,
        seed,
        upper_success,
        lower_not_aborted,
        midpoint: 0.5 * (upper_success + lower_not_aborted),
        upper_std_error: crate::stats::proportion_std_error(upper_success, replicas),
        lower_std_error: crate::stats::proportion_std_error(lower_not_aborted, replicas),
        upper_verdicts,
        lower_verdicts,
        max_seen,
    })
}

#[derive(Serialize)]
struct OutcomeRecord<'a> {
    replica: usize,
    mode: ExplorationMode,
    verdict: Verdict,
    start: usize,
    tree_size: usize,
    candidates: usize,
    steps: usize,
    boundary_size: usize,
    seen_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    tree: Option<&'a [Candidate]>,
}

/// One JSON object per line. With `with_tree` the candidate list is included.
pub fn write_outcomes_jsonl<W: Write>(outcomes: &[ExplorationOutcome], with_tree: bool, mut w: W) -> Result<()> {
    for (replica, o) in outcomes.iter().enumerate() {
        let rec = OutcomeRecord {
            replica,
            mode: o.mode,
            verdict: o.verdict,
            start: o.start,
            tree_size: o.tree_size(),
            candidates: o.candidates.len(),
            steps: o.steps,
            boundary_size: o.boundary_size,
            seen_count: o.seen_count,
            tree: with_tree.then_some(o.candidates.as_slice()),
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::InvalidParams(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Graph field at each candidate, built by conditioning on the earlier
/// candidates in exploration order with the candidate's own normal, next to
/// its tree value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub graph_values: Vec<f64>,
    pub tree_values: Vec<f64>,
    /// Largest `|graph - tree|` over admitted candidates.
    pub max_tree_deviation: f64,
}

/// Realizes the graph field on the explored candidates of `outcome` and
/// compares it with the tree field. `green` must be the Green kernel of the
/// completed graph and `reservoir` the one used for the exploration.
pub fn coupling_report<K: GreenKernel + ?Sized>(
    outcome: &ExplorationOutcome,
    green: &K,
    reservoir: &mut GaussianReservoir,
) -> Result<CouplingReport> {
    let mut cond = GaussianConditioner::new(green);
    let mut graph_values = Vec::with_capacity(outcome.candidates.len());
    let mut placed = HashMap::new();
    for c in &outcome.candidates {
        let xi = reservoir.peek(c.reservoir_index)?;
        if let Some(&v) = placed.get(&c.vertex) {
            // a vertex reached twice keeps its first value
            graph_values.push(v);
            continue;
        }
        let (law, col) = cond.law(c.vertex)?;
        let value = law.mean + xi * law.variance.sqrt();
        cond.place(c.vertex, value, col)?;
        placed.insert(c.vertex, value);
        graph_values.push(value);
    }
    let tree_values: Vec<f64> = outcome.candidates.iter().map(|c| c.tree_value).collect();
    let max_tree_deviation = outcome
        .candidates
        .iter()
        .zip(graph_values.iter().zip(&tree_values))
        .filter(|(c, _)| c.admitted)
        .map(|(_, (a, b))| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(CouplingReport {
        graph_values,
        tree_values,
        max_tree_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::{green_zero_average, GreenSolver};
        use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn state_with(n: usize, d: usize, pairs: &[(usize, usize)]) -> LazyGraphState {
        let mut s = LazyGraphState::new(n, d).unwrap();
        for &(a, b) in pairs {
            s.pool_remove(a);
            s.pool_remove(b);
            s.partner.insert(a, b);
            s.partner.insert(b, a);
            s.revealed_pairs += 1;
            s.seen.insert(a / d);
            s.seen.insert(b / d);
            s.components.union(a / d, b / d);
        }
        s
    }

    #[test]
    fn virtual_pool_pairs_everything_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = LazyGraphState::new(50, 3).unwrap().complete(&mut rng).unwrap();
        assert_eq!(g.n(), 50);
        assert_eq!(g.edges().len(), 75);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(LazyGraphState::new(5, 3), Err(Error::OddHalfEdgeCount { .. })));
        assert!(matches!(LazyGraphState::new(6, 2), Err(Error::DegreeTooSmall { .. })));
    }

    #[test]
    fn fully_paired_state_cannot_reveal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = LazyGraphState::new(4, 3).unwrap();
        s.reveal_envelope(&[0], 5, &mut rng).unwrap();
        assert!(s.is_complete());
        assert!(matches!(s.reveal_envelope(&[0], 1, &mut rng), Err(Error::HalfEdgesExhausted)));
        assert!(s.reveal_envelope(&[0], 0, &mut rng).is_ok());
    }

    #[test]
    fn cycle_probability_with_two_frontier_half_edges() {
        // vertices 0 and 1 are joined and keep one free half-edge each;
        // vertices 2 and 3 sit in separate pieces with one free half-edge
        // each. Only the pairing of the two frontier half-edges closes a cycle.
        let pairs = [(0, 3), (1, 4), (6, 7), (9, 10)];
        let trials = 30_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cycles = 0;
        for _ in 0..trials {
            let mut s = state_with(4, 3, &pairs);
            assert_eq!(s.unpaired_count(), 4);
            let (_, cycle) = s.reveal_envelope(&[0, 1], 1, &mut rng).unwrap();
            cycles += cycle as usize;
        }
        let p = cycles as f64 / trials as f64;
        let se = (1.0 / 3.0 * 2.0 / 3.0 / trials as f64).sqrt();
        assert!((p - 1.0 / 3.0).abs() < 4.0 * se, "cycle frequency {p}");
    }

    /// Canonical form of a multigraph: sorted list of vertex pairs.
    fn shape(g: &Multigraph) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = g.edges().into_iter().map(|(u, v)| (u.min(v), u.max(v))).collect();
        e.sort();
        e
    }

    fn all_matchings(free: &mut Vec<usize>, pairing: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if free.is_empty() {
            out.push(pairing.clone());
            return;
        }
        let a = free.remove(0);
        for j in 0..free.len() {
            let b = free.remove(j);
            pairing[a] = b;
            pairing[b] = a;
            all_matchings(free, pairing, out);
            free.insert(j, b);
        }
        free.insert(0, a);
    }

    #[test]
    fn lazy_completion_has_configuration_law() {
        let (n, d) = (4, 3);
        let mut matchings = Vec::new();
        all_matchings(&mut (0..n * d).collect(), &mut vec![0; n * d], &mut matchings);
        assert_eq!(matchings.len(), 10395);
        let mut exact: BTreeMap<Vec<(usize, usize)>, f64> = BTreeMap::new();
        for m in &matchings {
            let g = Multigraph::from_pairing(n, d, m.clone()).unwrap();
            *exact.entry(shape(&g)).or_default() += 1.0 / matchings.len() as f64;
        }
        let trials = 40_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts: BTreeMap<Vec<(usize, usize)>, usize> = BTreeMap::new();
        for t in 0..trials {
            let mut s = LazyGraphState::new(n, d).unwrap();
            s.reveal_envelope(&[t % n], 1, &mut rng).unwrap();
            let g = s.complete(&mut rng).unwrap();
            *counts.entry(shape(&g)).or_default() += 1;
        }
        let mut chi2 = 0.0;
        for (k, p) in &exact {
            let e = p * trials as f64;
            let o = *counts.get(k).unwrap_or(&0) as f64;
            chi2 += (o - e).powi(2) / e;
        }
        assert!(counts.keys().all(|k| exact.contains_key(k)));
        let df = (exact.len() - 1) as f64;
        assert!(chi2 < df + 5.0 * (2.0 * df).sqrt(), "chi2 {chi2} with {df} degrees of freedom");
    }

    #[test]
    fn envelope_reveals_the_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = LazyGraphState::new(1000, 3).unwrap();
        s.reveal_envelope(&[7], 2, &mut rng).unwrap();
        // every half-edge of vertices within distance one of 7 is paired
        let mut inner = vec![7];
        inner.extend(s.revealed_neighbors(7));
        for &v in &inner {
            assert_eq!(s.revealed_neighbors(v).len(), 3);
        }
        assert!(s.seen_count() <= 1 + 3 + 6);
        let pairs = s.revealed_pairs();
        let g = s.complete(&mut rng).unwrap();
        let dist = g.distances_from(&[7]);
        let inside = g.edges().into_iter().filter(|&(u, v)| dist[u].min(dist[v]) < 2).count();
        assert_eq!(pairs, inside);
    }

    #[test]
    fn derived_parameters() {
        let lambda = 1.385;
        let asym = ExplorationParams::asymptotic(lambda);
        assert!(matches!(asym.derive(100_000, 3), Err(Error::InvalidParams(_))));
        let desk = ExplorationParams::desk(lambda).derive(100_000, 3).unwrap();
        assert_eq!(desk.envelope_radius, 0);
        let log_n = (1e5f64).ln();
        assert!((desk.target - 1e5f64.sqrt() * log_n.powf(-1.25)).abs() < 1e-9);
        assert!((desk.generation_cap - log_n / lambda.ln()).abs() < 1e-12);
        assert!((desk.shift - 1.0 / log_n).abs() < 1e-15);
        let p = ExplorationParams {
            kappa: 1.0,
            log_power: 0.0,
            lambda,
        };
        let r = p.derive(1 << 20, 3).unwrap();
        // log2(ln 2^20) = log2(13.86) = 3.79
        assert_eq!(r.envelope_radius, 3);
        assert!(ExplorationParams { lambda: 1.0, ..p }.derive(100, 3).is_err());
    }

    fn run(n: usize, h: f64, mode: ExplorationMode, seed: u64) -> ExplorationOutcome {
        explore_fresh(n, 3, h, &ExplorationParams::desk(1.385), mode, seed).unwrap()
    }

    #[test]
    fn low_level_succeeds_and_high_level_aborts() {
        let mut counts = VerdictCounts::default();
        for s in 0..200 {
            counts.add(run(10_000, -10.0, ExplorationMode::Upper, s).verdict);
        }
        assert!(counts.successful >= 190, "{counts:?}");
        let mut counts = VerdictCounts::default();
        for s in 0..200 {
            counts.add(run(10_000, 8.0, ExplorationMode::Lower, s).verdict);
        }
        assert_eq!(counts.aborted, 200);
        let mut counts = VerdictCounts::default();
        for s in 0..200 {
            counts.add(run(10_000, 8.0, ExplorationMode::Upper, s).verdict);
        }
        assert_eq!(counts.root_rejected, 200);
    }

    #[test]
    fn candidates_form_a_tree_of_the_right_shape() {
        for s in 0..50 {
            let o = run(50_000, 0.0, ExplorationMode::Lower, s);
            let c = &o.candidates;
            for (i, cand) in c.iter().enumerate() {
                assert_eq!(cand.reservoir_index, i);
                if let Some(p) = cand.parent {
                    assert!(p < i && c[p].admitted);
                    assert_eq!(cand.generation, c[p].generation + 1);
                }
            }
            if o.verdict == Verdict::CycleStopped {
                continue;
            }
            // expanded parents have d - 1 children, the root d
            let mut children = vec![0usize; c.len()];
            c.iter().filter_map(|x| x.parent).for_each(|p| children[p] += 1);
            for (i, cand) in c.iter().enumerate() {
                if cand.admitted && cand.generation < o.steps {
                    let want = if i == 0 { 3 } else { 2 };
                    assert_eq!(children[i], want);
                }
            }
            let distinct: HashSet<usize> = c.iter().map(|x| x.vertex).collect();
            assert_eq!(distinct.len(), c.len());
        }
    }

    #[test]
    fn seen_count_stays_small() {
        let n = 100_000;
        let derived = ExplorationParams::desk(1.385).derive(n, 3).unwrap();
        let mut cycles = 0;
        for s in 0..300 {
            let o = run(n, 0.0, ExplorationMode::Upper, s);
            let bound = (derived.target + 1.0) * 3.0 * (derived.generation_cap + 1.0) * 3.0;
            assert!((o.seen_count as f64) <= bound);
            cycles += (o.verdict == Verdict::CycleStopped) as usize;
        }
        assert!(cycles < 15, "{cycles} cycle stops in 300 runs");
    }

    #[test]
    fn exploration_is_deterministic() {
        let a = run(20_000, 0.0, ExplorationMode::Upper, 42);
        let b = run(20_000, 0.0, ExplorationMode::Upper, 42);
        assert_eq!(a, b);
        let mut buf = Vec::new();
        write_outcomes_jsonl(&[a], false, &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["replica"], 0);
        assert!(v.get("tree").is_none());
    }

    #[test]
    fn coupling_report_tracks_the_tree_field() {
        let n = 400;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = ExplorationParams {
            kappa: 0.0,
            log_power: 0.0,
            lambda: 1.385,
        };
        let mut checked = 0;
        for s in 0..40u64 {
            let mut state = LazyGraphState::new(n, 3).unwrap();
            let mut reservoir = GaussianReservoir::new(s);
            let o = explore_component(&mut state, 0, -1.0, &params, ExplorationMode::Upper, &mut reservoir, &mut rng)
                .unwrap();
            let g = state.complete(&mut rng).unwrap();
            if !g.is_connected() || o.candidates.len() < 4 {
                continue;
            }
            let dense = green_zero_average(&g).unwrap();
            let sparse = GreenSolver::new(&g).unwrap();
            let a = coupling_report(&o, &dense, &mut reservoir).unwrap();
            let b = coupling_report(&o, &sparse, &mut reservoir).unwrap();
            for (x, y) in a.graph_values.iter().zip(&b.graph_values) {
                assert!((x - y).abs() < 1e-6);
            }
            let root = dense.get(0, 0).sqrt() * reservoir.peek(0).unwrap();
            assert!((a.graph_values[0] - root).abs() < 1e-12);
            assert!(a.max_tree_deviation.is_finite());
            checked += 1;
        }
        assert!(checked > 20);
    }
}
