//! Undirected 0/1 communication topologies.
//!
//! A [`Graph`] stores one adjacency bitmask per node, so node counts are
//! limited to [`MAX_NODES`]. Node ids run `0..node_count`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Largest supported platoon.
pub const MAX_NODES: usize = 64;

/// Undirected simple graph with `a_ij ∈ {0, 1}`.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Graph {
    rows: Vec<u64>,
}

impl Graph {
    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_NODES {
            return Err(Error::InvalidGraph(format!(
                "node count must be in 1..={MAX_NODES}, got {n}"
            )));
        }
        Ok(Self { rows: vec![0; n] })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n)?;
        for &(u, v) in edges {
            g.check_pair(u, v)?;
            g.add_edge(u, v);
        }
        Ok(g)
    }

    /// Builds a graph from a dense 0/1 matrix, checking symmetry and a zero diagonal.
    pub fn from_adjacency(adj: &[Vec<u8>]) -> Result<Self> {
        let n = adj.len();
        let mut g = Self::empty(n)?;
        for (i, row) in adj.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidGraph(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &a) in row.iter().enumerate() {
                if a > 1 {
                    return Err(Error::InvalidGraph(format!("a[{i}][{j}] = {a} is not 0/1")));
                }
                if a != adj[j][i] {
                    return Err(Error::InvalidGraph(format!("adjacency not symmetric at ({i}, {j})")));
                }
                if i == j && a != 0 {
                    return Err(Error::InvalidGraph(format!("self loop at node {i}")));
                }
                if a == 1 && i < j {
                    g.add_edge(i, j);
                }
            }
        }
        Ok(g)
    }

    /// Builds from per-node neighbor bitmasks. Masks must be symmetric with no self loops.
    pub fn from_masks(rows: Vec<u64>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || n > MAX_NODES {
            return Err(Error::InvalidGraph(format!("bad node count {n}")));
        }
        let limit = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        for (i, &r) in rows.iter().enumerate() {
            if r & !limit != 0 || r >> i & 1 == 1 {
                return Err(Error::InvalidGraph(format!("bad mask for node {i}")));
            }
            for j in 0..n {
                if (r >> j & 1) != (rows[j] >> i & 1) {
                    return Err(Error::InvalidGraph(format!("asymmetric masks at ({i}, {j})")));
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGraph(format!("a cycle needs at least 3 nodes, got {n}")));
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &edges)
    }

    /// Star `K_{1,leaves}` with the hub at node 0.
    pub fn star(leaves: usize) -> Result<Self> {
        let edges: Vec<_> = (1..=leaves).map(|i| (0, i)).collect();
        Self::from_edges(leaves + 1, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        Self::from_edges(n, &edges)
    }

    /// `K_{a,b}`: nodes `0..a` on one side, `a..a+b` on the other.
    pub fn complete_bipartite(a: usize, b: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..a {
            for j in a..a + b {
                edges.push((i, j));
            }
        }
        Self::from_edges(a + b, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.rows.len()
    }

    /// Neighbor bitmask of node `i`.
    pub fn mask(&self, i: usize) -> u64 {
        self.rows[i]
    }

    pub fn masks(&self) -> &[u64] {
        &self.rows
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.rows[u] >> v & 1 == 1
    }

    /// Inserts `(u, v)`. Panics on out-of-range ids or a self loop.
    pub fn add_edge(&mut self, u: usize, v: usize) {
        assert!(u != v, "self loop at node {u}");
        self.rows[u] |= 1 << v;
        self.rows[v] |= 1 << u;
    }

    pub fn remove_edge(&mut self, u: usize, v: usize) {
        self.rows[u] &= !(1 << v);
        self.rows[v] &= !(1 << u);
    }

    pub fn toggle_edge(&mut self, u: usize, v: usize) {
        assert!(u != v, "self loop at node {u}");
        self.rows[u] ^= 1 << v;
        self.rows[v] ^= 1 << u;
    }

    pub fn degree(&self, i: usize) -> usize {
        self.rows[i].count_ones() as usize
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count()).map(|i| self.degree(i)).collect()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.node_count()).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let mut m = self.rows[i];
        std::iter::from_fn(move || {
            if m == 0 {
                None
            } else {
                let j = m.trailing_zeros() as usize;
                m &= m - 1;
                Some(j)
            }
        })
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.node_count() {
            for v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.rows.iter().map(|r| r.count_ones() as usize).sum::<usize>() / 2
    }

    /// BFS hop distances from `src`; `None` for unreachable nodes.
    pub fn bfs_distances(&self, src: usize) -> Vec<Option<usize>> {
        let n = self.node_count();
        let mut dist = vec![None; n];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for v in self.neighbors(u) {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn component_count(&self) -> usize {
        let n = self.node_count();
        let mut seen = 0u64;
        let mut count = 0;
        for s in 0..n {
            if seen >> s & 1 == 1 {
                continue;
            }
            count += 1;
            let mut frontier = 1u64 << s;
            seen |= frontier;
            while frontier != 0 {
                let mut next = 0u64;
                let mut f = frontier;
                while f != 0 {
                    let u = f.trailing_zeros() as usize;
                    f &= f - 1;
                    next |= self.rows[u];
                }
                frontier = next & !seen;
                seen |= frontier;
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    /// Returns true if the graph admits a proper 2-coloring.
    pub fn is_bipartite(&self) -> bool {
        let n = self.node_count();
        let mut color: Vec<Option<bool>> = vec![None; n];
        for s in 0..n {
            if color[s].is_some() {
                continue;
            }
            color[s] = Some(false);
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                let cu = color[u].unwrap();
                for v in self.neighbors(u) {
                    match color[v] {
                        None => {
                            color[v] = Some(!cu);
                            queue.push_back(v);
                        }
                        Some(cv) if cv == cu => return false,
                        Some(_) => {}
                    }
                }
            }
        }
        true
    }

    fn check_pair(&self, u: usize, v: usize) -> Result<()> {
        let n = self.node_count();
        if u >= n || v >= n {
            return Err(Error::InvalidGraph(format!("edge ({u}, {v}) out of range for {n} nodes")));
        }
        if u == v {
            return Err(Error::InvalidGraph(format!("self loop at node {u}")));
        }
        Ok(())
    }

    /// Edge-list text: a `# nodes N` header then one `u v` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("# nodes {}\n", self.node_count());
        for (u, v) in self.edges() {
            let _ = writeln!(s, "{u} {v}");
        }
        s
    }

    /// Parses edge-list text. Blank lines and `#` comments are skipped; a
    /// `# nodes N` comment fixes the node count, otherwise it is `max id + 1`.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut declared = None;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = idx + 1;
            if let Some(comment) = line.strip_prefix('#') {
                let mut it = comment.split_whitespace();
                if it.next() == Some("nodes") {
                    let n = it
                        .next()
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or_else(|| Error::Parse { line: lineno, msg: "bad `# nodes` header".into() })?;
                    declared = Some(n);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let parts: Vec<_> = line.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(Error::Parse { line: lineno, msg: format!("expected `u v`, got `{line}`") });
            }
            let parse = |t: &str| {
                t.parse::<usize>()
                    .map_err(|_| Error::Parse { line: lineno, msg: format!("bad node id `{t}`") })
            };
            edges.push((parse(parts[0])?, parse(parts[1])?));
        }
        let inferred = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
        let n = declared.unwrap_or(inferred);
        if n < inferred {
            return Err(Error::InvalidGraph(format!("edge ids exceed declared {n} nodes")));
        }
        Self::from_edges(n, &edges)
    }

    /// Dense 0/1 adjacency as CSV, one row per node, no header.
    pub fn to_adjacency_csv(&self) -> String {
        let n = self.node_count();
        let mut s = String::new();
        for i in 0..n {
            let row: Vec<&str> = (0..n).map(|j| if self.has_edge(i, j) { "1" } else { "0" }).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn parse_adjacency_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut adj = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|t| {
                    t.parse::<u8>()
                        .map_err(|_| Error::Parse { line: i + 1, msg: format!("bad entry `{t}`") })
                })
                .collect::<Result<Vec<_>>>()?;
            adj.push(row);
        }
        Self::from_adjacency(&adj)
    }
}

/// Named topologies used by scenarios and examples.
pub mod presets {
    use super::Graph;
    use crate::error::{Error, Result};

    /// Initial 8-car platoon (0-based ids; car `k` is node `k - 1`).
    ///
    /// The triangle on nodes 0, 1, 2 gives node 1 a connected neighbor
    /// structure. `λ_max ≈ 5.8558`, so the tolerable delay is `≈ 0.2682 s`.
    pub fn fig3a_candidate() -> Graph {
        Graph::from_edges(
            8,
            &[(0, 1), (0, 2), (0, 4), (0, 7), (1, 2), (2, 3), (3, 4), (3, 7), (4, 6), (5, 6), (5, 7)],
        )
        .expect("static preset")
    }

    /// [`fig3a_candidate`] after constructing (2, 6), (1, 5) and deconstructing (0, 2).
    ///
    /// Cubic, `λ₂ = 2`, `λ_max = 4 + √2`, tolerable delay `≈ 0.2901 s`.
    pub fn fig3b_candidate() -> Graph {
        let mut g = fig3a_candidate();
        g.add_edge(2, 6);
        g.add_edge(1, 5);
        g.remove_edge(0, 2);
        g
    }

    /// Construct and deconstruct lists turning [`fig3a_candidate`] into [`fig3b_candidate`].
    pub fn fig3_plan_links() -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        (vec![(1, 5), (2, 6)], vec![(0, 2)])
    }

    /// Resolves `star8`, `ring8`, `path-N`, `fig3a-candidate`, `fig3b-candidate`.
    pub fn by_name(name: &str) -> Result<Graph> {
        match name {
            "star8" => Graph::star(7),
            "ring8" => Graph::cycle(8),
            "fig3a-candidate" => Ok(fig3a_candidate()),
            "fig3b-candidate" => Ok(fig3b_candidate()),
            _ => {
                if let Some(n) = name.strip_prefix("path-") {
                    let n: usize = n
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad path length in `{name}`")))?;
                    return Graph::path(n);
                }
                Err(Error::InvalidArgument(format!("unknown graph preset `{name}`")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_expected_shape() {
        assert_eq!(Graph::star(7).unwrap().degrees(), vec![7, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(Graph::cycle(8).unwrap().edge_count(), 8);
        assert_eq!(Graph::complete(5).unwrap().edge_count(), 10);
        assert_eq!(Graph::complete_bipartite(3, 3).unwrap().max_degree(), 3);
    }

    #[test]
    fn bipartiteness() {
        assert!(Graph::cycle(4).unwrap().is_bipartite());
        assert!(!Graph::cycle(5).unwrap().is_bipartite());
        assert!(Graph::star(3).unwrap().is_bipartite());
    }

    #[test]
    fn rejects_bad_adjacency() {
        assert!(Graph::from_adjacency(&[vec![0, 1], vec![0, 0]]).is_err());
        assert!(Graph::from_adjacency(&[vec![1, 0], vec![0, 0]]).is_err());
        assert!(Graph::from_edges(3, &[(0, 3)]).is_err());
        assert!(Graph::from_edges(3, &[(1, 1)]).is_err());
        assert!(Graph::empty(0).is_err());
    }

    #[test]
    fn connectivity() {
        let mut g = Graph::path(4).unwrap();
        assert!(g.is_connected());
        g.remove_edge(1, 2);
        assert_eq!(g.component_count(), 2);
        assert_eq!(g.bfs_distances(0), vec![Some(0), Some(1), None, None]);
    }

    #[test]
    fn edge_list_round_trip_keeps_isolated_nodes() {
        let g = Graph::from_edges(5, &[(0, 1), (1, 3)]).unwrap();
        let back = Graph::parse_edge_list(&g.to_edge_list()).unwrap();
        assert_eq!(g, back);
        assert_eq!(back.node_count(), 5);
    }

    #[test]
    fn adjacency_csv_round_trip() {
        let g = Graph::cycle(6).unwrap();
        assert_eq!(Graph::parse_adjacency_csv(&g.to_adjacency_csv()).unwrap(), g);
    }

    #[test]
    fn platoon_presets_match_reported_delays() {
        use crate::spectral::{laplacian_spectrum, tolerable_delay};
        let a = laplacian_spectrum(&presets::fig3a_candidate());
        assert!((tolerable_delay(a.lambda_max).unwrap() - 0.2682).abs() < 5e-5);
        let b = laplacian_spectrum(&presets::fig3b_candidate());
        assert!((b.lambda2 - 2.0).abs() < 1e-9);
        assert!((b.lambda_max - (4.0 + 2f64.sqrt())).abs() < 1e-9);
        assert!((tolerable_delay(b.lambda_max).unwrap() - 0.2901).abs() < 5e-5);
        assert!(presets::fig3b_candidate().degrees().iter().all(|&d| d == 3));
    }

    #[test]
    fn preset_names() {
        assert_eq!(presets::by_name("path-4").unwrap(), Graph::path(4).unwrap());
        assert_eq!(presets::by_name("star8").unwrap().node_count(), 8);
        assert!(presets::by_name("nope").is_err());
    }

    #[test]
    fn edge_list_reports_line_numbers() {
        let err = Graph::parse_edge_list("0 1\n1 x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
