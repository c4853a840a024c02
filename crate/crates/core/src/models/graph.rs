use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SimRng};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::{BufRead, Write};

/// Simple undirected graph with a canonical sorted edge list and CSR
/// adjacency. Directed edge ids are CSR positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphTopology {
    n: usize,
    edges: Vec<(u32, u32)>,
    offsets: Vec<usize>,
    nbrs: Vec<u32>,
}

/// JSON sidecar written next to an edge list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphMeta {
    pub n: usize,
    pub edge_count: usize,
    pub max_degree: usize,
    pub connected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl GraphTopology {
    /// Rejects self-loops and out-of-range endpoints; duplicates and
    /// orientation are normalized away.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut list = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidParameter(format!("self-loop at node {u}")));
            }
            list.push((u.min(v) as u32, u.max(v) as u32));
        }
        list.sort_unstable();
        list.dedup();
        Ok(Self::from_canonical(n, list))
    }

    fn from_canonical(n: usize, edges: Vec<(u32, u32)>) -> Self {
        let mut deg = vec![0usize; n];
        for &(u, v) in &edges {
            deg[u as usize] += 1;
            deg[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &deg {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut nbrs = vec![0u32; offsets[n]];
        for &(u, v) in &edges {
            nbrs[fill[u as usize]] = v;
            fill[u as usize] += 1;
            nbrs[fill[v as usize]] = u;
            fill[v as usize] += 1;
        }
        for i in 0..n {
            nbrs[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        GraphTopology {
            n,
            edges,
            offsets,
            nbrs,
        }
    }

    pub fn empty(n: usize) -> Self {
        Self::from_canonical(n, Vec::new())
    }

    pub fn path(n: usize) -> Self {
        Self::from_canonical(n, (1..n).map(|i| ((i - 1) as u32, i as u32)).collect())
    }

    /// Node 0 is the center; nodes `1..=leaves` are leaves.
    pub fn star(leaves: usize) -> Self {
        Self::from_canonical(leaves + 1, (1..=leaves).map(|i| (0, i as u32)).collect())
    }

    pub fn complete(n: usize) -> Self {
        let mut e = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                e.push((u as u32, v as u32));
            }
        }
        Self::from_canonical(n, e)
    }

    /// G(n, prob) by geometric skipping over the pair index.
    pub fn erdos_renyi(n: usize, prob: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::InvalidParameter(format!(
                "edge probability {prob} not in [0, 1]"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let mut edges = Vec::new();
        let pairs = (n as u64) * (n as u64).saturating_sub(1) / 2;
        for k in skip_sample(&mut rng, pairs, prob) {
            let (u, v) = pair_from_index(k);
            edges.push((u as u32, v as u32));
        }
        edges.sort_unstable();
        Ok(Self::from_canonical(n, edges))
    }

    /// Stochastic block model with the given block sizes. Nodes are numbered
    /// block by block.
    pub fn sbm(sizes: &[usize], p_in: f64, p_ac: f64, seed: u64) -> Result<Self> {
        for (name, v) in [("p_in", p_in), ("p_ac", p_ac)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name}={v} not in [0, 1]")));
            }
        }
        let mut rng = rng_from_seed(seed);
        Ok(Self::from_canonical(
            sizes.iter().sum(),
            sbm_edges(&mut rng, sizes, p_in, p_ac),
        ))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.nbrs[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Range of directed edge ids leaving `i`.
    pub fn out_edges(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn target(&self, edge: usize) -> usize {
        self.nbrs[edge] as usize
    }

    pub fn directed_edge_count(&self) -> usize {
        self.nbrs.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&(j as u32)).is_ok()
    }

    /// Hop distances from `src`, `usize::MAX` when unreachable or beyond
    /// `max_hops`.
    pub fn distances_from(&self, src: usize, max_hops: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        let mut queue = VecDeque::new();
        dist[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            if dist[u] >= max_hops {
                continue;
            }
            for &v in self.neighbors(u) {
                let v = v as usize;
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Sorted nodes within `r` hops of `src`, including `src`.
    pub fn ball(&self, src: usize, r: usize) -> Vec<usize> {
        let mut seen = vec![src];
        let mut frontier = vec![src];
        let mut mark = std::collections::HashSet::from([src]);
        for _ in 0..r {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in self.neighbors(u) {
                    if mark.insert(v as usize) {
                        next.push(v as usize);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            seen.extend_from_slice(&next);
            frontier = next;
        }
        seen.sort_unstable();
        seen
    }

    pub fn is_connected(&self) -> bool {
        self.n == 0 || self.distances_from(0, usize::MAX).iter().all(|&d| d != usize::MAX)
    }

    /// Largest hop distance between two nodes; `None` for disconnected graphs.
    pub fn diameter(&self) -> Option<usize> {
        if !self.is_connected() {
            return None;
        }
        Some(
            (0..self.n)
                .map(|s| self.distances_from(s, usize::MAX).into_iter().max().unwrap_or(0))
                .max()
                .unwrap_or(0),
        )
    }

    pub fn meta(&self, label: Option<String>) -> GraphMeta {
        GraphMeta {
            n: self.n,
            edge_count: self.edges.len(),
            max_degree: self.max_degree(),
            connected: self.is_connected(),
            label,
        }
    }

    /// Two whitespace-separated node ids per line.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        for &(u, v) in &self.edges {
            writeln!(w, "{u} {v}")?;
        }
        Ok(())
    }

    /// Reads an edge list. Blank lines and `#` comments are skipped.
    pub fn read_edge_list<R: BufRead>(r: R, n: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |t: Option<&str>| -> Result<usize> {
                t.and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("edge list line {}: `{line}`", lineno + 1)))
            };
            let u = parse(it.next())?;
            let v = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Parse(format!(
                    "edge list line {}: expected two columns",
                    lineno + 1
                )));
            }
            edges.push((u, v));
        }
        Self::from_edges(n, edges)
    }

    pub fn write_files(&self, edge_path: &std::path::Path, label: Option<String>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_edge_list(&mut buf)?;
        std::fs::write(edge_path, buf)?;
        let meta = serde_json::to_string_pretty(&self.meta(label))?;
        std::fs::write(edge_path.with_extension("json"), meta + "\n")?;
        Ok(())
    }

    pub fn read_files(edge_path: &std::path::Path) -> Result<Self> {
        let meta: GraphMeta = serde_json::from_str(&std::fs::read_to_string(edge_path.with_extension("json"))?)?;
        let file = std::io::BufReader::new(std::fs::File::open(edge_path)?);
        let g = Self::read_edge_list(file, meta.n)?;
        if g.edge_count() != meta.edge_count {
            return Err(Error::Parse(format!(
                "sidecar declares {} edges, edge list has {}",
                meta.edge_count,
                g.edge_count()
            )));
        }
        Ok(g)
    }
}

/// Unordered pair `(u, v)`, `u < v`, at linear index `k` in the order
/// `(0,1), (0,2), (1,2), (0,3), ...`.
fn pair_from_index(k: u64) -> (u64, u64) {
    let mut v = ((((8 * k + 1) as f64).sqrt() + 1.0) / 2.0) as u64;
    while v * (v - 1) / 2 > k {
        v -= 1;
    }
    while (v + 1) * v / 2 <= k {
        v += 1;
    }
    (k - v * (v - 1) / 2, v)
}

/// Indices in `0..total` kept independently with probability `prob`.
pub(crate) fn skip_sample(rng: &mut SimRng, total: u64, prob: f64) -> Vec<u64> {
    let mut out = Vec::new();
    if prob <= 0.0 || total == 0 {
        return out;
    }
    if prob >= 1.0 {
        return (0..total).collect();
    }
    let log_q = (1.0 - prob).ln();
    let mut k: u64 = 0;
    loop {
        let u: f64 = rng.random();
        let skip = ((1.0 - u).ln() / log_q).floor();
        if !skip.is_finite() || skip >= (total - k) as f64 {
            break;
        }
        k += skip as u64;
        out.push(k);
        k += 1;
        if k >= total {
            break;
        }
    }
    out
}

/// SBM edges with independent within-block and across-block probabilities.
pub(crate) fn sbm_edges(rng: &mut SimRng, sizes: &[usize], p_in: f64, p_ac: f64) -> Vec<(u32, u32)> {
    let n: usize = sizes.iter().sum();
    let mut block = Vec::with_capacity(n);
    let mut starts = Vec::with_capacity(sizes.len());
    let mut start = 0usize;
    for (b, &s) in sizes.iter().enumerate() {
        starts.push(start);
        block.extend(std::iter::repeat_n(b as u32, s));
        start += s;
    }
    let mut edges = Vec::new();
    for (b, &s) in sizes.iter().enumerate() {
        let pairs = (s as u64) * (s as u64).saturating_sub(1) / 2;
        for k in skip_sample(rng, pairs, p_in) {
            let (u, v) = pair_from_index(k);
            edges.push(((starts[b] as u64 + u) as u32, (starts[b] as u64 + v) as u32));
        }
    }
    let all = (n as u64) * (n as u64).saturating_sub(1) / 2;
    for k in skip_sample(rng, all, p_ac) {
        let (u, v) = pair_from_index(k);
        if block[u as usize] != block[v as usize] {
            edges.push((u as u32, v as u32));
        }
    }
    edges.sort_unstable();
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_index_enumerates_all_pairs() {
        let mut k = 0;
        for v in 1..40u64 {
            for u in 0..v {
                assert_eq!(pair_from_index(k), (u, v));
                k += 1;
            }
        }
    }

    #[test]
    fn canonical_edges() {
        let g = GraphTopology::from_edges(3, [(1, 0), (0, 1), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert!(GraphTopology::from_edges(3, [(1, 1)]).is_err());
        assert!(GraphTopology::from_edges(3, [(0, 3)]).is_err());
    }

    #[test]
    fn diameters() {
        assert_eq!(GraphTopology::path(5).diameter(), Some(4));
        assert_eq!(GraphTopology::star(6).diameter(), Some(2));
        assert_eq!(GraphTopology::empty(3).diameter(), None);
    }

    #[test]
    fn balls() {
        let g = GraphTopology::path(5);
        assert_eq!(g.ball(2, 1), vec![1, 2, 3]);
        assert_eq!(g.ball(0, 3), vec![0, 1, 2, 3]);
        assert_eq!(GraphTopology::star(4).ball(0, 1), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn erdos_renyi_mean_degree() {
        let n = 2000;
        let g = GraphTopology::erdos_renyi(n, 4.0 / (n - 1) as f64, 11).unwrap();
        let mean = 2.0 * g.edge_count() as f64 / n as f64;
        assert!((mean - 4.0).abs() < 0.2, "mean degree {mean}");
        assert_eq!(g, GraphTopology::erdos_renyi(n, 4.0 / (n - 1) as f64, 11).unwrap());
    }

    #[test]
    fn sbm_blocks_without_cross_edges() {
        let g = GraphTopology::sbm(&[5, 5, 5], 1.0, 0.0, 3).unwrap();
        assert_eq!(g.edge_count(), 3 * 10);
        assert!(g.edges().iter().all(|&(u, v)| u / 5 == v / 5));
    }

    #[test]
    fn edge_list_round_trip() {
        let g = GraphTopology::erdos_renyi(30, 0.2, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.edges");
        g.write_files(&path, Some("er".into())).unwrap();
        assert_eq!(GraphTopology::read_files(&path).unwrap(), g);
    }
}
