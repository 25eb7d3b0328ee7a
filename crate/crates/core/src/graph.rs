//! Immutable undirected graphs in compressed adjacency form, edge-list
//! ingestion, and stochastic block model generation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// Default pair budget above which shared-neighbor statistics are sampled
/// rather than enumerated.
pub const DEFAULT_PAIR_SAMPLE_SIZE: usize = 1_000_000;

/// Undirected simple graph over dense ids `0..n`.
///
/// Neighbor lists are stored back to back in `targets`; node `i` owns
/// `targets[offsets[i]..offsets[i + 1]]`, sorted ascending and free of
/// duplicates and self-loops. Every edge is stored in both directions.
#[derive(Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    m: usize,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("n", &self.n())
            .field("m", &self.m)
            .finish()
    }
}

impl Graph {
    /// Build from an arbitrary list of endpoint pairs. Duplicates (in either
    /// orientation) collapse to one edge; self-loops are dropped and counted.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<(Graph, usize)> {
        let mut self_loops = 0;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            for node in [a, b] {
                if node >= n {
                    return Err(Error::NodeOutOfRange { node, n });
                }
            }
            if a == b {
                self_loops += 1;
                continue;
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        Ok((Graph::from_adjacency(adj), self_loops))
    }

    fn from_adjacency(mut adj: Vec<Vec<usize>>) -> Graph {
        let mut offsets = Vec::with_capacity(adj.len() + 1);
        offsets.push(0);
        let mut targets = Vec::new();
        for list in adj.iter_mut() {
            list.sort_unstable();
            list.dedup();
            targets.extend_from_slice(list);
            offsets.push(targets.len());
        }
        let m = targets.len() / 2;
        Graph { offsets, targets, m }
    }

    pub fn empty(n: usize) -> Graph {
        Graph {
            offsets: vec![0; n + 1],
            targets: Vec::new(),
            m: 0,
        }
    }

    pub fn complete(n: usize) -> Graph {
        let adj = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect();
        Graph::from_adjacency(adj)
    }

    pub fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::from_edges(n, &edges).expect("path ids in range").0
    }

    pub fn cycle(n: usize) -> Graph {
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        if n > 2 {
            edges.push((n - 1, 0));
        }
        Graph::from_edges(n, &edges).expect("cycle ids in range").0
    }

    /// Star with node 0 at the center and `leaves` spokes.
    pub fn star(leaves: usize) -> Graph {
        let edges: Vec<_> = (1..=leaves).map(|i| (0, i)).collect();
        Graph::from_edges(leaves + 1, &edges).expect("star ids in range").0
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Undirected edge count.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Neighbors of `i`, sorted ascending. Panics if `i` is out of range.
    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> Result<usize> {
        if i >= self.n() {
            return Err(Error::NodeOutOfRange { node: i, n: self.n() });
        }
        Ok(self.offsets[i + 1] - self.offsets[i])
    }

    #[inline]
    pub(crate) fn degree_unchecked(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n() && j < self.n() && self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .copied()
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    pub fn non_isolated(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.degree_unchecked(i) > 0).collect()
    }

    /// Relabel nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: perm.len(),
            });
        }
        let edges: Vec<_> = self.edges().map(|(i, j)| (perm[i], perm[j])).collect();
        Ok(Graph::from_edges(self.n(), &edges)?.0)
    }

    /// Full scan of the structural invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.n();
        if self.offsets[0] != 0 || self.offsets[n] != self.targets.len() {
            return Err(Error::Config("offsets do not span targets".into()));
        }
        if self.targets.len() != 2 * self.m {
            return Err(Error::Config("offsets[n] != 2m".into()));
        }
        for i in 0..n {
            if self.offsets[i] > self.offsets[i + 1] {
                return Err(Error::Config(format!("offsets decrease at {i}")));
            }
            let list = self.neighbors(i);
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("neighbors of {i} not strictly sorted")));
            }
            for &j in list {
                if j == i {
                    return Err(Error::Config(format!("self-loop at {i}")));
                }
                if j >= n || !self.has_edge(j, i) {
                    return Err(Error::Config(format!("asymmetric edge {i}->{j}")));
                }
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> GraphSummary {
        let degrees = self.degrees();
        let n = self.n();
        GraphSummary {
            n,
            m: self.m,
            min_degree: degrees.iter().copied().min().unwrap_or(0),
            mean_degree: if n == 0 { 0.0 } else { 2.0 * self.m as f64 / n as f64 },
            max_degree: degrees.iter().copied().max().unwrap_or(0),
        }
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.m * 12);
        for (i, j) in self.edges() {
            out.push_str(&format!("{i} {j}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphSummary {
    pub n: usize,
    pub m: usize,
    pub min_degree: usize,
    pub mean_degree: f64,
    pub max_degree: usize,
}

impl fmt::Display for GraphSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} m={} min_degree={} mean_degree={:.4} max_degree={}",
            self.n, self.m, self.min_degree, self.mean_degree, self.max_degree
        )
    }
}

/// A graph read from an edge list together with the id remapping.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: Graph,
    /// `original_ids[dense]` is the id used in the file.
    pub original_ids: Vec<u64>,
    pub self_loops_dropped: usize,
}

/// Parse whitespace-separated integer pairs, one edge per line. Blank lines
/// and lines starting with `#` are skipped. Ids are remapped densely in
/// ascending order of the original id.
pub fn parse_edge_list(text: &str) -> Result<LoadedGraph> {
    let mut raw = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let mut next_id = || -> Result<u64> {
            let tok = parts.next().ok_or_else(|| Error::Parse {
                line: line_no,
                message: "expected two node ids".into(),
            })?;
            tok.parse::<u64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid node id {tok:?}"),
            })
        };
        let a = next_id()?;
        let b = next_id()?;
        if parts.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                message: "expected exactly two node ids".into(),
            });
        }
        raw.push((a, b));
    }

    let mut ids: BTreeMap<u64, usize> = BTreeMap::new();
    for &(a, b) in &raw {
        ids.insert(a, 0);
        ids.insert(b, 0);
    }
    let original_ids: Vec<u64> = ids.keys().copied().collect();
    for (dense, slot) in ids.values_mut().enumerate() {
        *slot = dense;
    }
    let edges: Vec<_> = raw.iter().map(|(a, b)| (ids[a], ids[b])).collect();
    let (graph, self_loops_dropped) = Graph::from_edges(original_ids.len(), &edges)?;
    if self_loops_dropped > 0 {
        log::warn!("dropped {self_loops_dropped} self-loop(s) from edge list");
    }
    Ok(LoadedGraph {
        graph,
        original_ids,
        self_loops_dropped,
    })
}

pub fn load_edge_list(path: &Path) -> Result<LoadedGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text)
}

/// Stochastic block model: node-to-block assignment plus a symmetric matrix
/// of edge probabilities between blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockModelSpec {
    pub block_of: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
}

impl BlockModelSpec {
    pub fn new(block_of: Vec<usize>, probs: Vec<Vec<f64>>) -> Result<Self> {
        let spec = BlockModelSpec { block_of, probs };
        spec.validate()?;
        Ok(spec)
    }

    /// `blocks` contiguous blocks of (nearly) equal size; within-block edge
    /// probability `p_in`, across-block `p_out`.
    pub fn planted(n: usize, blocks: usize, p_in: f64, p_out: f64) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::Config("block count must be positive".into()));
        }
        let block_of = (0..n).map(|i| i * blocks / n.max(1)).collect();
        Self::new(block_of, Self::two_level(blocks, p_in, p_out))
    }

    /// Same probabilities as [`BlockModelSpec::planted`], but each node's
    /// block drawn uniformly at random.
    pub fn random_assignment(
        n: usize,
        blocks: usize,
        p_in: f64,
        p_out: f64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::Config("block count must be positive".into()));
        }
        let block_of = (0..n).map(|_| rng.random_range(0..blocks)).collect();
        Self::new(block_of, Self::two_level(blocks, p_in, p_out))
    }

    fn two_level(blocks: usize, p_in: f64, p_out: f64) -> Vec<Vec<f64>> {
        (0..blocks)
            .map(|a| (0..blocks).map(|b| if a == b { p_in } else { p_out }).collect())
            .collect()
    }

    pub fn n(&self) -> usize {
        self.block_of.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.probs.len();
        if k == 0 {
            return Err(Error::Config("block model has no blocks".into()));
        }
        for (a, row) in self.probs.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Config(format!("probability row {a} has wrong length")));
            }
            for (b, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Config(format!("P[{a}][{b}] = {p} outside [0, 1]")));
                }
                if p != self.probs[b][a] {
                    return Err(Error::Config(format!("P not symmetric at ({a}, {b})")));
                }
            }
        }
        if let Some((i, &b)) = self.block_of.iter().enumerate().find(|(_, &b)| b >= k) {
            return Err(Error::Config(format!("node {i} assigned to missing block {b}")));
        }
        Ok(())
    }
}

/// Draw each unordered pair independently with its block-pair probability.
pub fn sbm_generate(spec: &BlockModelSpec, seed: u64) -> Result<Graph> {
    spec.validate()?;
    let n = spec.n();
    let mut rng = rng::from_seed(seed);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let row = &spec.probs[spec.block_of[i]];
        for j in (i + 1)..n {
            let p = row[spec.block_of[j]];
            if p > 0.0 && rng.random::<f64>() < p {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    Ok(Graph::from_adjacency(adj))
}

fn shares_neighbor(a: &[usize], b: &[usize]) -> bool {
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Probability that a uniformly random pair of distinct nodes has at least
/// one common neighbor. Exact when the number of pairs is at most
/// `pair_sample_size`, otherwise estimated from that many sampled pairs.
pub fn shared_neighbor_probability(g: &Graph, pair_sample_size: usize, seed: u64) -> Result<f64> {
    let n = g.n();
    if n < 2 {
        return Err(Error::Config(format!(
            "shared-neighbor probability needs at least 2 nodes, got {n}"
        )));
    }
    let total_pairs = n as u128 * (n as u128 - 1) / 2;
    if total_pairs <= pair_sample_size as u128 {
        // stamp[j] == i + 1 marks j as reachable in two hops from i
        let mut stamp = vec![0usize; n];
        let mut sharing: u64 = 0;
        for i in 0..n {
            for &k in g.neighbors(i) {
                for &j in g.neighbors(k) {
                    if j > i && stamp[j] != i + 1 {
                        stamp[j] = i + 1;
                        sharing += 1;
                    }
                }
            }
        }
        return Ok(sharing as f64 / total_pairs as f64);
    }

    if pair_sample_size == 0 {
        return Err(Error::Config("pair_sample_size must be positive".into()));
    }
    let mut rng = rng::stream(seed, rng::PAIRS);
    let mut hits = 0usize;
    for _ in 0..pair_sample_size {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        if shares_neighbor(g.neighbors(i), g.neighbors(j)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / pair_sample_size as f64)
}
