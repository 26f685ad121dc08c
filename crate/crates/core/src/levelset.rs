//! Level sets of a field and the structure of their components: sizes,
//! 2-core, kernel, diameter, typical distances and local ball types.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multigraph::{Multigraph, Subgraph};
use crate::unionfind::UnionFind;

/// Vertices with `values[x] >= h`, ties included.
pub fn level_set(values: &[f64], h: f64) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= h)
        .map(|(x, _)| x)
        .collect()
}

/// Components of an induced subgraph, largest first; equal sizes are ordered
/// by smallest vertex id. Each component lists its vertices in increasing order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentDecomposition {
    pub level: f64,
    pub components: Vec<Vec<usize>>,
}

impl ComponentDecomposition {
    pub fn sizes(&self) -> Vec<usize> {
        self.components.iter().map(Vec::len).collect()
    }

    /// Size of the `i`-th largest component (0-based), zero if absent.
    pub fn size(&self, i: usize) -> usize {
        self.components.get(i).map_or(0, Vec::len)
    }

    pub fn largest(&self) -> Option<&[usize]> {
        self.components.first().map(Vec::as_slice)
    }
}

/// Connected components of the subgraph of `g` induced by `s`.
pub fn components(g: &Multigraph, s: &[usize], level: f64) -> Result<ComponentDecomposition> {
    let n = g.n();
    let mut inside = vec![false; n];
    for &x in s {
        g.check_vertex(x)?;
        inside[x] = true;
    }
    let mut uf = UnionFind::new(n);
    for &x in s {
        for y in g.neighbors(x) {
            if inside[y] {
                uf.union(x, y);
            }
        }
    }
    let mut slot = vec![usize::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for x in 0..n {
        if !inside[x] {
            continue;
        }
        let r = uf.find(x);
        if slot[r] == usize::MAX {
            slot[r] = comps.len();
            comps.push(Vec::new());
        }
        comps[slot[r]].push(x);
    }
    // components were opened in order of their smallest vertex; a stable sort
    // by size keeps that order among ties
    comps.sort_by(|a, b| b.len().cmp(&a.len()));
    Ok(ComponentDecomposition {
        level,
        components: comps,
    })
}

/// Iteratively removes vertices of degree at most one from the subgraph
/// induced by `c`. Loops count twice toward the degree.
pub fn two_core(g: &Multigraph, c: &[usize]) -> Result<Subgraph> {
    let sub = Subgraph::induced(g, c.iter().copied())?;
    Ok(two_core_of(&sub))
}

pub fn two_core_of(sub: &Subgraph) -> Subgraph {
    let adj = sub.local_adjacency();
    let mut deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut removed = vec![false; deg.len()];
    let mut stack: Vec<usize> = (0..deg.len()).filter(|&i| deg[i] <= 1).collect();
    while let Some(i) = stack.pop() {
        if removed[i] {
            continue;
        }
        removed[i] = true;
        for &j in &adj[i] {
            if !removed[j] {
                deg[j] -= 1;
                if deg[j] <= 1 {
                    stack.push(j);
                }
            }
        }
    }
    let verts = sub.vertices();
    let keep: Vec<usize> = (0..verts.len()).filter(|&i| !removed[i]).map(|i| verts[i]).collect();
    let edges = sub
        .edges()
        .iter()
        .copied()
        .filter(|&(u, v)| {
            let iu = verts.binary_search(&u).unwrap();
            let iv = verts.binary_search(&v).unwrap();
            !removed[iu] && !removed[iv]
        })
        .collect();
    Subgraph::new(keep, edges).expect("edges stay inside the kept vertices")
}

/// A 2-core with maximal paths through degree-2 vertices contracted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Kernel {
    /// Vertices of degree at least 3 in the core.
    pub vertices: Vec<usize>,
    /// One edge per contracted path (loops and parallel edges possible).
    pub edges: Vec<(usize, usize)>,
    /// Components of the core that are plain cycles and contract to nothing.
    pub cycle_components: usize,
}

impl Kernel {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

pub fn kernel(core: &Subgraph) -> Result<Kernel> {
    let verts = core.vertices();
    let m = verts.len();
    let edges = core.edges();
    let idx = |v: usize| verts.binary_search(&v).unwrap();
    let mut inc: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
    for (e, &(u, v)) in edges.iter().enumerate() {
        let (a, b) = (idx(u), idx(v));
        inc[a].push((e, b));
        inc[b].push((e, a));
    }
    for (i, list) in inc.iter().enumerate() {
        if list.len() < 2 {
            return Err(Error::NotTwoCore {
                vertex: verts[i],
                degree: list.len(),
            });
        }
    }
    let is_branch: Vec<bool> = inc.iter().map(|l| l.len() >= 3).collect();
    let mut used = vec![false; edges.len()];
    let mut kedges = Vec::new();
    for start in 0..m {
        if !is_branch[start] {
            continue;
        }
        for &(e0, next0) in &inc[start] {
            if used[e0] {
                continue;
            }
            used[e0] = true;
            let (mut e, mut cur) = (e0, next0);
            while !is_branch[cur] {
                let &(e_next, nxt) = inc[cur]
                    .iter()
                    .find(|&&(f, _)| f != e)
                    .expect("degree-2 vertex has a second edge");
                used[e_next] = true;
                e = e_next;
                cur = nxt;
            }
            kedges.push((verts[start], verts[cur]));
        }
    }
    // whatever is left forms cycles without branch vertices
    let mut uf = UnionFind::new(m);
    let mut touched = vec![false; m];
    for (e, &(u, v)) in edges.iter().enumerate() {
        if !used[e] {
            let (a, b) = (idx(u), idx(v));
            uf.union(a, b);
            touched[a] = true;
            touched[b] = true;
        }
    }
    let mut roots: Vec<usize> = (0..m).filter(|&i| touched[i]).map(|i| uf.find(i)).collect();
    roots.sort_unstable();
    roots.dedup();
    Ok(Kernel {
        vertices: (0..m).filter(|&i| is_branch[i]).map(|i| verts[i]).collect(),
        edges: kedges,
        cycle_components: roots.len(),
    })
}

/// Component sizes above which [`diameter`] switches from all-pairs BFS to
/// the iFUB bound-refinement scheme.
pub const DIAMETER_EXACT_LIMIT: usize = 100_000;

struct InducedBfs<'a> {
    g: &'a Multigraph,
    inside: Vec<bool>,
    dist: Vec<usize>,
    touched: Vec<usize>,
    queue: VecDeque<usize>,
}

impl<'a> InducedBfs<'a> {
    fn new(g: &'a Multigraph, c: &[usize]) -> Result<Self> {
        let mut inside = vec![false; g.n()];
        for &x in c {
            g.check_vertex(x)?;
            inside[x] = true;
        }
        Ok(Self {
            g,
            inside,
            dist: vec![usize::MAX; g.n()],
            touched: Vec::new(),
            queue: VecDeque::new(),
        })
    }

    /// Runs a BFS from `s` (optionally stopping after `limit` levels) and
    /// returns the visited vertices in BFS order; distances stay in `dist`.
    fn run(&mut self, s: usize, limit: usize) -> &[usize] {
        for &v in &self.touched {
            self.dist[v] = usize::MAX;
        }
        self.touched.clear();
        self.dist[s] = 0;
        self.touched.push(s);
        self.queue.push_back(s);
        while let Some(x) = self.queue.pop_front() {
            let dx = self.dist[x];
            if dx == limit {
                continue;
            }
            for y in self.g.neighbors(x) {
                if self.inside[y] && self.dist[y] == usize::MAX {
                    self.dist[y] = dx + 1;
                    self.touched.push(y);
                    self.queue.push_back(y);
                }
            }
        }
        &self.touched
    }

    fn eccentricity(&mut self, s: usize) -> (usize, usize) {
        let order = self.run(s, usize::MAX);
        let far = *order.last().unwrap();
        (self.dist[far], far)
    }
}

/// Exact diameter of the subgraph induced by the connected vertex set `c`.
pub fn diameter(g: &Multigraph, c: &[usize]) -> Result<usize> {
    diameter_with(g, c, DIAMETER_EXACT_LIMIT)
}

pub fn diameter_with(g: &Multigraph, c: &[usize], all_pairs_limit: usize) -> Result<usize> {
    if c.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let mut bfs = InducedBfs::new(g, c)?;
    let mut members = c.to_vec();
    members.sort_unstable();
    members.dedup();
    if bfs.run(members[0], usize::MAX).len() != members.len() {
        return Err(Error::DisconnectedVertexSet);
    }
    if members.len() <= all_pairs_limit {
        return Ok(members.iter().map(|&x| bfs.eccentricity(x).0).max().unwrap());
    }
    // double sweep, then iFUB from the middle of the sweep path
    let (_, a) = bfs.eccentricity(members[0]);
    let (_, b) = bfs.eccentricity(a);
    let path_len = bfs.dist[b];
    let dist_a: Vec<(usize, usize)> = bfs.touched.iter().map(|&v| (v, bfs.dist[v])).collect();
    bfs.run(b, usize::MAX);
    let mid = dist_a
        .iter()
        .find(|&&(v, da)| da == path_len / 2 && bfs.dist[v] == path_len - path_len / 2)
        .map_or(a, |&(v, _)| v);
    ifub(&mut bfs, mid, path_len)
}

fn ifub(bfs: &mut InducedBfs<'_>, u: usize, lower: usize) -> Result<usize> {
    let order: Vec<usize> = bfs.run(u, usize::MAX).to_vec();
    let levels: Vec<usize> = order.iter().map(|&v| bfs.dist[v]).collect();
    let ecc_u = *levels.last().unwrap();
    let mut lb = lower.max(ecc_u);
    let mut i = ecc_u;
    let mut end = order.len();
    while i > 0 {
        if lb > 2 * (i - 1) {
            return Ok(lb);
        }
        let start = levels.partition_point(|&l| l < i);
        for &x in &order[start..end] {
            lb = lb.max(bfs.eccentricity(x).0);
        }
        end = start;
        i -= 1;
    }
    Ok(lb)
}

/// Graph distances (inside `c`) between `pairs` uniformly drawn ordered pairs
/// of vertices of the connected set `c`. Pairs with equal endpoints are kept.
pub fn sample_typical_distances<R: Rng + ?Sized>(
    g: &Multigraph,
    c: &[usize],
    pairs: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if c.len() < 2 {
        return Err(Error::InvalidParams("typical distances need at least two vertices".into()));
    }
    let mut bfs = InducedBfs::new(g, c)?;
    let mut draws: Vec<(usize, usize, usize)> = (0..pairs)
        .map(|i| (c[rng.random_range(0..c.len())], c[rng.random_range(0..c.len())], i))
        .collect();
    draws.sort_unstable();
    let mut out = vec![0; pairs];
    let mut current = usize::MAX;
    for &(x, y, i) in &draws {
        if x != current {
            bfs.run(x, usize::MAX);
            current = x;
        }
        if bfs.dist[y] == usize::MAX {
            return Err(Error::DisconnectedVertexSet);
        }
        out[i] = bfs.dist[y];
    }
    Ok(out)
}

/// Canonical form of a rooted tree: `"(" + sorted child codes + ")"`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TreeCode(pub String);

impl fmt::Display for TreeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Census key for balls that contain a cycle.
pub const NON_TREE_KEY: &str = "non-tree";

/// A rooted tree as parent links; node 0 is the root.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RootedTree {
    children: Vec<Vec<usize>>,
}

impl RootedTree {
    pub fn single() -> Self {
        Self {
            children: vec![Vec::new()],
        }
    }

    /// Adds a child under `parent` and returns its id.
    pub fn push_child(&mut self, parent: usize) -> usize {
        let id = self.children.len();
        self.children.push(Vec::new());
        self.children[parent].push(id);
        id
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    /// Builds a tree from an undirected edge list over nodes `0..nodes`.
    /// Fails unless the edges form a spanning tree.
    pub fn from_edges(nodes: usize, edges: &[(usize, usize)], root: usize) -> Result<Self> {
        if nodes == 0 || root >= nodes || edges.len() + 1 != nodes {
            return Err(Error::NotATree);
        }
        let mut adj = vec![Vec::new(); nodes];
        for &(u, v) in edges {
            if u >= nodes || v >= nodes || u == v {
                return Err(Error::NotATree);
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut id = vec![usize::MAX; nodes];
        let mut tree = Self::single();
        id[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if id[v] == usize::MAX {
                    id[v] = tree.push_child(id[u]);
                    queue.push_back(v);
                }
            }
        }
        if tree.len() != nodes {
            return Err(Error::NotATree);
        }
        Ok(tree)
    }

    pub fn code(&self) -> TreeCode {
        // children always have larger ids than parents, so a reverse sweep is post-order
        let mut codes: Vec<String> = vec![String::new(); self.children.len()];
        for v in (0..self.children.len()).rev() {
            let mut kids: Vec<String> = self.children[v].iter().map(|&c| std::mem::take(&mut codes[c])).collect();
            kids.sort_unstable();
            let mut s = String::with_capacity(2 + kids.iter().map(String::len).sum::<usize>());
            s.push('(');
            for k in kids {
                s.push_str(&k);
            }
            s.push(')');
            codes[v] = s;
        }
        TreeCode(std::mem::take(&mut codes[0]))
    }
}

/// Canonical code of the tree given by `edges` on `0..nodes` rooted at `root`.
pub fn canonical_tree_code(nodes: usize, edges: &[(usize, usize)], root: usize) -> Result<TreeCode> {
    Ok(RootedTree::from_edges(nodes, edges, root)?.code())
}

/// Counts the isomorphism types of radius-`k` balls around each vertex of
/// `c`, with distances measured inside `c`. Balls containing a cycle are
/// counted under [`NON_TREE_KEY`].
pub fn ball_census(g: &Multigraph, c: &[usize], k: usize) -> Result<BTreeMap<String, usize>> {
    let mut bfs = InducedBfs::new(g, c)?;
    let mut census = BTreeMap::new();
    let mut local = vec![usize::MAX; g.n()];
    for &x in c {
        let verts: Vec<usize> = bfs.run(x, k).to_vec();
        for (i, &v) in verts.iter().enumerate() {
            local[v] = i;
        }
        let mut edges = Vec::new();
        for &v in &verts {
            let d = g.d();
            for h in v * d..(v + 1) * d {
                let w = g.partner(h) / d;
                if h < g.partner(h) && local[w] != usize::MAX {
                    edges.push((local[v], local[w]));
                }
            }
        }
        let key = match canonical_tree_code(verts.len(), &edges, 0) {
            Ok(code) => code.0,
            Err(_) => NON_TREE_KEY.to_string(),
        };
        *census.entry(key).or_insert(0) += 1;
        for &v in &verts {
            local[v] = usize::MAX;
        }
    }
    Ok(census)
}

pub fn write_census_csv<W: Write>(census: &BTreeMap<String, usize>, mut w: W) -> Result<()> {
    writeln!(w, "code,count")?;
    for (code, count) in census {
        writeln!(w, "{code},{count}")?;
    }
    Ok(())
}

pub fn write_distances_csv<W: Write>(distances: &[usize], mut w: W) -> Result<()> {
    for d in distances {
        writeln!(w, "{d}")?;
    }
    Ok(())
}

/// Summary of the level-set component structure of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub level: f64,
    /// Up to ten largest component sizes.
    pub sizes: Vec<usize>,
    pub core_size: usize,
    pub kernel_size: usize,
    pub diameter: usize,
}

/// Sizes, 2-core, kernel and diameter of the largest component.
pub fn summarize(g: &Multigraph, decomposition: &ComponentDecomposition) -> Result<ComponentSummary> {
    let sizes = decomposition.sizes().into_iter().take(10).collect();
    let (core_size, kernel_size, diam) = match decomposition.largest() {
        Some(c1) => {
            let core = two_core(g, c1)?;
            let k = kernel(&core)?;
            (core.vertex_count(), k.vertices.len(), diameter(g, c1)?)
        }
        None => (0, 0, 0),
    };
    Ok(ComponentSummary {
        level: decomposition.level,
        sizes,
        core_size,
        kernel_size,
        diameter: diam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multigraph::generate_configuration_model;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 4-regular: an m-cycle with a loop at every vertex
    fn looped_cycle(m: usize) -> Multigraph {
        let mut edges: Vec<_> = (0..m).map(|i| (i, (i + 1) % m)).collect();
        edges.extend((0..m).map(|i| (i, i)));
        Multigraph::from_edges(m, 4, &edges).unwrap()
    }

    fn k4() -> Multigraph {
        Multigraph::from_edges(4, 3, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap()
    }

    #[test]
    fn level_set_examples() {
        assert_eq!(level_set(&[0.5, -0.5, 0.0], 0.0), vec![0, 2]);
        assert_eq!(level_set(&[0.5, -0.5, 0.0], -1e9), vec![0, 1, 2]);
        assert!(level_set(&[0.5, -0.5, 0.0], 1.0).is_empty());
    }

    #[test]
    fn component_examples() {
        let g = looped_cycle(6);
        let cd = components(&g, &[0, 1, 3, 4], 0.0).unwrap();
        assert_eq!(cd.components, vec![vec![0, 1], vec![3, 4]]);
        assert!(components(&g, &[], 0.0).unwrap().components.is_empty());
        let all: Vec<usize> = (0..6).collect();
        assert_eq!(components(&g, &all, 0.0).unwrap().sizes(), vec![6]);
        let cd = components(&g, &[5, 0, 3, 2], 0.0).unwrap();
        assert_eq!(cd.components, vec![vec![0, 5], vec![2, 3]]);
    }

    #[test]
    fn core_examples() {
        let path = Subgraph::new(0..4, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(two_core_of(&path).vertex_count(), 0);
        let cycle = Subgraph::new(0..5, (0..5).map(|i| (i, (i + 1) % 5)).collect()).unwrap();
        assert_eq!(two_core_of(&cycle), cycle);
        // lollipop: triangle 0-1-2 with pendant path 2-3-4
        let lolly = Subgraph::new(0..5, vec![(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)]).unwrap();
        let core = two_core_of(&lolly);
        assert_eq!(core.vertices(), &[0, 1, 2]);
        assert_eq!(core.edge_count(), 3);
    }

    #[test]
    fn kernel_examples() {
        let cycle = Subgraph::new(0..5, (0..5).map(|i| (i, (i + 1) % 5)).collect()).unwrap();
        let k = kernel(&cycle).unwrap();
        assert!(k.is_empty());
        assert_eq!(k.cycle_components, 1);

        let theta = Subgraph::new(0..5, vec![(0, 1), (0, 2), (2, 1), (0, 3), (3, 4), (4, 1)]).unwrap();
        let k = kernel(&theta).unwrap();
        assert_eq!(k.vertices, vec![0, 1]);
        assert_eq!(k.edges.len(), 3);
        assert!(k.edges.iter().all(|&(u, v)| (u, v) == (0, 1) || (u, v) == (1, 0)));

        let g = k4();
        let k = kernel(&two_core(&g, &[0, 1, 2, 3]).unwrap()).unwrap();
        assert_eq!(k.vertices, vec![0, 1, 2, 3]);
        assert_eq!(k.edges.len(), 6);

        let path = Subgraph::new(0..2, vec![(0, 1)]).unwrap();
        assert!(matches!(kernel(&path), Err(Error::NotTwoCore { .. })));
    }

    #[test]
    fn kernel_with_loop_path() {
        // vertex 0 of degree 3: edge to 1 plus a cycle 0-2-3-0
        let sub = Subgraph::new(0..4, vec![(0, 2), (2, 3), (3, 0), (0, 1), (1, 1)]).unwrap();
        let k = kernel(&two_core_of(&sub)).unwrap();
        assert_eq!(k.vertices, vec![0, 1]);
        assert_eq!(k.edges.len(), 3);
    }

    #[test]
    fn diameter_examples() {
        let g = looped_cycle(6);
        assert_eq!(diameter(&g, &[2]).unwrap(), 0);
        assert_eq!(diameter(&g, &[0, 1, 2, 3]).unwrap(), 3);
        assert_eq!(diameter(&g, &[0, 1, 2, 3, 4, 5]).unwrap(), 3);
        assert!(matches!(diameter(&g, &[0, 3]), Err(Error::DisconnectedVertexSet)));
    }

    #[test]
    fn ifub_matches_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..20 {
            let g = generate_configuration_model(300, 3, &mut rng).unwrap();
            let vals: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cd = components(&g, &level_set(&vals, -0.3 - 0.02 * trial as f64), 0.0).unwrap();
            let c1 = cd.largest().unwrap();
            assert_eq!(diameter_with(&g, c1, usize::MAX).unwrap(), diameter_with(&g, c1, 0).unwrap());
        }
    }

    #[test]
    fn typical_distances_on_cycle() {
        let g = looped_cycle(8);
        let all: Vec<usize> = (0..8).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reps = 200_000;
        let d = sample_typical_distances(&g, &all, reps, &mut rng).unwrap();
        let off: Vec<f64> = d.iter().filter(|&&x| x > 0).map(|&x| x as f64).collect();
        let mean = off.iter().sum::<f64>() / off.len() as f64;
        let var = off.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / off.len() as f64;
        assert!((mean - 16.0 / 7.0).abs() < 4.0 * (var / off.len() as f64).sqrt());
        assert!(d.iter().all(|&x| x <= diameter(&g, &all).unwrap()));
        let kd = sample_typical_distances(&k4(), &[0, 1, 2, 3], 100, &mut rng).unwrap();
        assert!(kd.iter().all(|&x| x <= 1));
    }

    #[test]
    fn tree_code_examples() {
        assert_eq!(canonical_tree_code(1, &[], 0).unwrap().0, "()");
        assert_eq!(canonical_tree_code(3, &[(0, 1), (0, 2)], 0).unwrap().0, "(()())");
        assert_eq!(canonical_tree_code(3, &[(0, 1), (1, 2)], 0).unwrap().0, "((()))");
        assert_eq!(canonical_tree_code(3, &[(0, 1), (1, 2)], 1).unwrap().0, "(()())");
        assert!(canonical_tree_code(3, &[(0, 1), (1, 2), (2, 0)], 0).is_err());
        assert!(canonical_tree_code(4, &[(0, 1), (1, 0), (2, 3)], 0).is_err());
    }

    #[test]
    fn census_examples() {
        let g = looped_cycle(6);
        let c = ball_census(&g, &[3], 1).unwrap();
        assert_eq!(c.get(NON_TREE_KEY), Some(&1), "loop makes the ball cyclic");
        let g = k4();
        let c = ball_census(&g, &[0], 1).unwrap();
        assert_eq!(c.get("()"), Some(&1));
        let c = ball_census(&g, &[0, 1, 2], 0).unwrap();
        assert_eq!(c.get("()"), Some(&3));
        let c = ball_census(&g, &[0, 1], 1).unwrap();
        assert_eq!(c.get("(())"), Some(&2));
        let c = ball_census(&g, &[0, 1, 2], 1).unwrap();
        assert_eq!(c.get(NON_TREE_KEY), Some(&3));
    }

    #[test]
    fn census_on_path_inside_component() {
        let cube = Multigraph::from_edges(
            8,
            3,
            &[(0, 1), (1, 3), (3, 2), (2, 0), (4, 5), (5, 7), (7, 6), (6, 4), (0, 4), (1, 5), (2, 6), (3, 7)],
        )
        .unwrap();
        let c = ball_census(&cube, &[0, 1, 3], 1).unwrap();
        assert_eq!(c.get("(())"), Some(&2));
        assert_eq!(c.get("(()())"), Some(&1));
    }

    fn random_tree(rng: &mut ChaCha8Rng, size: usize) -> Vec<(usize, usize)> {
        (1..size).map(|v| (rng.random_range(0..v), v)).collect()
    }

    #[test]
    fn tree_code_invariant_under_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let size = rng.random_range(1..30);
            let edges = random_tree(&mut rng, size);
            let base = canonical_tree_code(size, &edges, 0).unwrap();
            let mut perm: Vec<usize> = (0..size).collect();
            perm.shuffle(&mut rng);
            let mut relabeled: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
            relabeled.shuffle(&mut rng);
            assert_eq!(canonical_tree_code(size, &relabeled, perm[0]).unwrap(), base);
        }
    }

    fn naive_components(g: &Multigraph, s: &[usize]) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; g.n()];
        let inside: Vec<bool> = (0..g.n()).map(|x| s.contains(&x)).collect();
        let mut out = Vec::new();
        for &x in s {
            if label[x] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut comp = vec![x];
            label[x] = id;
            let mut i = 0;
            while i < comp.len() {
                let v = comp[i];
                for w in g.neighbors(v) {
                    if inside[w] && label[w] == usize::MAX {
                        label[w] = id;
                        comp.push(w);
                    }
                }
                i += 1;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        out
    }

    fn naive_core(sub: &Subgraph) -> Vec<usize> {
        let mut alive: Vec<usize> = sub.vertices().to_vec();
        loop {
            let deg = |v: usize, alive: &Vec<usize>| {
                sub.edges()
                    .iter()
                    .map(|&(a, b)| {
                        if !alive.contains(&a) || !alive.contains(&b) {
                            0
                        } else {
                            (a == v) as usize + (b == v) as usize
                        }
                    })
                    .sum::<usize>()
            };
            match alive.iter().position(|&v| deg(v, &alive) <= 1) {
                Some(i) => {
                    alive.remove(i);
                }
                None => return alive,
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn structures_match_brute_force(seed in any::<u64>(), half_n in 1usize..7, mask in any::<u16>()) {
            let n = 2 * half_n;
            let g = generate_configuration_model(n, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let s: Vec<usize> = (0..n).filter(|&x| mask >> x & 1 == 1).collect();
            let cd = components(&g, &s, 0.0).unwrap();
            prop_assert_eq!(&cd.components, &naive_components(&g, &s));
            prop_assert_eq!(cd.sizes().iter().sum::<usize>(), s.len());
            for comp in &cd.components {
                let sub = Subgraph::induced(&g, comp.iter().copied()).unwrap();
                let core = two_core_of(&sub);
                let naive = naive_core(&sub);
                prop_assert_eq!(core.vertices(), naive.as_slice());
                prop_assert!(core.degrees().iter().all(|&k| k >= 2));
                let k = kernel(&core).unwrap();
                let deg = core.degrees();
                let branch: Vec<usize> = core.vertices().iter().zip(&deg).filter(|(_, &k)| k >= 3).map(|(&v, _)| v).collect();
                prop_assert_eq!(&k.vertices, &branch);
                let branch_degree: usize = deg.iter().filter(|&&k| k >= 3).sum();
                prop_assert_eq!(2 * k.edges.len(), branch_degree);
                let diam = diameter(&g, comp).unwrap();
                if comp.len() >= 2 {
                    let ds = sample_typical_distances(&g, comp, 20, &mut ChaCha8Rng::seed_from_u64(seed ^ 1)).unwrap();
                    prop_assert!(ds.iter().all(|&x| x <= diam));
                }
            }
        }

        #[test]
        fn ball_monotone_and_growth(seed in any::<u64>(), half_n in 2usize..30, r in 0usize..4, k in 1usize..4) {
            use crate::multigraph::ball;
            let n = 2 * half_n;
            let g = generate_configuration_model(n, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let centers: Vec<usize> = (0..k.min(n)).map(|i| (i * 7 + seed as usize) % n).collect();
            let b = ball(&g, &centers, r).unwrap();
            let b1 = ball(&g, &centers, r + 1).unwrap();
            let grown = ball(&g, b.vertices(), 1).unwrap();
            prop_assert_eq!(&b1, &grown);
            prop_assert!(b1.tree_excess() >= b.tree_excess());
            let a = Subgraph::induced(&g, centers.iter().copied()).unwrap();
            prop_assert!(b.tree_excess() >= a.tree_excess());
        }
    }
}
