//! Skeleton topology, normalized Laplacian, and the cached spectral
//! decomposition shared by all network blocks.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;

use crate::error::{Error, Result};
use crate::linalg::{sym_eigendecompose, RealMatrix};

/// Default 16-joint skeleton, shipped as an editable topology file.
pub const DEFAULT_TOPOLOGY_TEXT: &str = include_str!("../assets/h36m16.topo");

/// A connected, undirected, simple skeleton graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonTopology {
    pub joint_names: Vec<String>,
    /// Unordered joint-index pairs, stored with the smaller index first.
    pub edges: Vec<(usize, usize)>,
    pub root_index: usize,
}

impl SkeletonTopology {
    pub fn new(
        joint_names: Vec<String>,
        edges: Vec<(usize, usize)>,
        root_index: usize,
    ) -> Result<Self> {
        let n = joint_names.len();
        if n == 0 {
            return Err(Error::Topology("no joints".into()));
        }
        if root_index >= n {
            return Err(Error::Topology(format!(
                "root index {root_index} out of range (κ = {n})"
            )));
        }
        let mut normalized = Vec::with_capacity(edges.len());
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::Topology(format!("edge ({a},{b}) out of range")));
            }
            if a == b {
                return Err(Error::Topology(format!("self-loop at joint {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::Topology(format!("duplicate edge ({},{})", e.0, e.1)));
            }
            normalized.push(e);
        }
        let topo = Self {
            joint_names,
            edges: normalized,
            root_index,
        };
        if !topo.is_connected() {
            return Err(Error::Topology("graph is not connected".into()));
        }
        Ok(topo)
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    fn is_connected(&self) -> bool {
        let n = self.num_joints();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Parses the key/value + edge-list topology file format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut joint_names: Vec<String> = Vec::new();
        let mut root_name: Option<String> = None;
        let mut edge_names: Vec<(String, String, usize)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let n = lineno + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once(':').ok_or_else(|| Error::Parse {
                line: n,
                message: format!("expected 'key: value', got {line:?}"),
            })?;
            let rest = rest.trim();
            match key.trim() {
                "joints" => {
                    joint_names = rest.split_whitespace().map(String::from).collect();
                }
                "root" => root_name = Some(rest.to_string()),
                "edge" => {
                    let mut it = rest.split_whitespace();
                    match (it.next(), it.next(), it.next()) {
                        (Some(a), Some(b), None) => {
                            edge_names.push((a.to_string(), b.to_string(), n))
                        }
                        _ => {
                            return Err(Error::Parse {
                                line: n,
                                message: "edge needs exactly two joint names".into(),
                            })
                        }
                    }
                }
                other => {
                    return Err(Error::Parse {
                        line: n,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        if joint_names.is_empty() {
            return Err(Error::Topology("missing joints line".into()));
        }
        let index: HashMap<&str, usize> = joint_names
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        if index.len() != joint_names.len() {
            return Err(Error::Topology("duplicate joint name".into()));
        }
        let root_name = root_name.ok_or_else(|| Error::Topology("missing root line".into()))?;
        let root_index = *index
            .get(root_name.as_str())
            .ok_or_else(|| Error::Topology(format!("unknown root joint {root_name:?}")))?;
        let mut edges = Vec::with_capacity(edge_names.len());
        for (a, b, line) in edge_names {
            let ia = *index.get(a.as_str()).ok_or(Error::Parse {
                line,
                message: format!("unknown joint {a:?}"),
            })?;
            let ib = *index.get(b.as_str()).ok_or(Error::Parse {
                line,
                message: format!("unknown joint {b:?}"),
            })?;
            edges.push((ia, ib));
        }
        Self::new(joint_names, edges, root_index)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn default_16_joint() -> Self {
        Self::parse(DEFAULT_TOPOLOGY_TEXT).expect("built-in topology is valid")
    }

    /// Deterministic 64-bit FNV-1a hash over the canonical serialization.
    pub fn hash(&self) -> u64 {
        let mut canonical = String::new();
        canonical.push_str(&self.joint_names.join(" "));
        canonical.push('|');
        let mut edges = self.edges.clone();
        edges.sort_unstable();
        for (a, b) in edges {
            canonical.push_str(&format!("{a}-{b};"));
        }
        canonical.push_str(&format!("|{}", self.root_index));
        fnv1a(canonical.as_bytes())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Symmetric 0/1 adjacency matrix with zero diagonal.
pub fn build_adjacency(topo: &SkeletonTopology) -> RealMatrix {
    let n = topo.num_joints();
    let mut adj = RealMatrix::zeros(n, n);
    for &(a, b) in &topo.edges {
        adj.set(a, b, 1.0);
        adj.set(b, a, 1.0);
    }
    adj
}

/// L̄ = I - D^{-1/2} A D^{-1/2}.
pub fn normalized_laplacian(adj: &RealMatrix) -> Result<RealMatrix> {
    let n = adj.rows;
    if adj.cols != n {
        return Err(Error::Shape(format!("adjacency {}x{}", adj.rows, adj.cols)));
    }
    let degrees: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| adj.get(i, j)).sum())
        .collect();
    if let Some(i) = degrees.iter().position(|&d| d < 1.0) {
        return Err(Error::IsolatedVertex(i));
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut lap = RealMatrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            if adj.get(i, j) != 0.0 {
                lap.set(i, j, lap.get(i, j) - inv_sqrt[i] * inv_sqrt[j]);
            }
        }
    }
    Ok(lap)
}

/// Eigendecomposition of the normalized Laplacian, cached per topology hash.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub topology_hash: u64,
    pub laplacian: RealMatrix,
    /// Ascending eigenvalues, within [0, 2].
    pub eigenvalues: Vec<f64>,
    /// Eigenvector i in column i.
    pub eigenvectors: RealMatrix,
}

impl SpectralDecomposition {
    pub fn num_nodes(&self) -> usize {
        self.eigenvalues.len()
    }
}

static DECOMPOSITION_CACHE: Lazy<Mutex<HashMap<u64, Arc<SpectralDecomposition>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Builds (or fetches from cache) the spectral decomposition for a topology.
/// Repeated calls with the same topology return the identical decomposition.
pub fn decompose(topo: &SkeletonTopology) -> Result<Arc<SpectralDecomposition>> {
    let key = topo.hash();
    {
        let cache = DECOMPOSITION_CACHE.lock().unwrap();
        if let Some(dec) = cache.get(&key) {
            return Ok(Arc::clone(dec));
        }
    }
    let adj = build_adjacency(topo);
    let lap = normalized_laplacian(&adj)?;
    let eig = sym_eigendecompose(&lap)?;
    let dec = Arc::new(SpectralDecomposition {
        topology_hash: key,
        laplacian: lap,
        eigenvalues: eig.eigenvalues,
        eigenvectors: eig.eigenvectors,
    });
    let mut cache = DECOMPOSITION_CACHE.lock().unwrap();
    Ok(Arc::clone(cache.entry(key).or_insert(dec)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path2() -> SkeletonTopology {
        SkeletonTopology::new(vec!["a".into(), "b".into()], vec![(0, 1)], 0).unwrap()
    }

    fn triangle() -> SkeletonTopology {
        SkeletonTopology::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![(0, 1), (1, 2), (0, 2)],
            0,
        )
        .unwrap()
    }

    #[test]
    fn adjacency_two_joints() {
        let adj = build_adjacency(&path2());
        assert_eq!(adj.data, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn adjacency_triangle() {
        let adj = build_adjacency(&triangle());
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { 1.0 };
                assert_eq!(adj.get(i, j), expect);
            }
        }
    }

    #[test]
    fn default_skeleton_degrees() {
        let topo = SkeletonTopology::default_16_joint();
        assert_eq!(topo.num_joints(), 16);
        assert_eq!(topo.edges.len(), 15);
        let adj = build_adjacency(&topo);
        let degree = |i: usize| -> f64 { (0..16).map(|j| adj.get(i, j)).sum() };
        assert_eq!(degree(0), 3.0); // pelvis: RHip, LHip, Spine
        assert_eq!(degree(8), 4.0); // thorax: Spine, Head, LShoulder, RShoulder
        assert_eq!(degree(3), 1.0); // RFoot is a leaf
        // row sums count incident edges; doubled edge total equals 2|E|
        let total: f64 = (0..16).map(degree).sum();
        assert_eq!(total, 30.0);
    }

    #[test]
    fn rejects_self_loop_and_duplicate() {
        let err = SkeletonTopology::new(vec!["a".into(), "b".into()], vec![(0, 0)], 0);
        assert!(matches!(err, Err(Error::Topology(_))));
        let err =
            SkeletonTopology::new(vec!["a".into(), "b".into()], vec![(0, 1), (1, 0)], 0);
        assert!(matches!(err, Err(Error::Topology(_))));
    }

    #[test]
    fn rejects_disconnected() {
        let err = SkeletonTopology::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![(0, 1), (2, 3)],
            0,
        );
        assert!(matches!(err, Err(Error::Topology(_))));
    }

    #[test]
    fn laplacian_two_node_path() {
        let lap = normalized_laplacian(&build_adjacency(&path2())).unwrap();
        assert_eq!(lap.data, vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn laplacian_triangle() {
        let lap = normalized_laplacian(&build_adjacency(&triangle())).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { -0.5 };
                assert!((lap.get(i, j) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn laplacian_star_spectrum() {
        // star: center 0 with 3 leaves → eigenvalues [0, 1, 1, 2]
        let topo = SkeletonTopology::new(
            vec!["c".into(), "l1".into(), "l2".into(), "l3".into()],
            vec![(0, 1), (0, 2), (0, 3)],
            0,
        )
        .unwrap();
        let dec = decompose(&topo).unwrap();
        let expect = [0.0, 1.0, 1.0, 2.0];
        for (got, want) in dec.eigenvalues.iter().zip(expect) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn laplacian_rejects_isolated_vertex() {
        let mut adj = RealMatrix::zeros(3, 3);
        adj.set(0, 1, 1.0);
        adj.set(1, 0, 1.0);
        assert!(matches!(
            normalized_laplacian(&adj),
            Err(Error::IsolatedVertex(2))
        ));
    }

    #[test]
    fn decompose_two_node_path() {
        let dec = decompose(&path2()).unwrap();
        assert!(dec.eigenvalues[0].abs() < 1e-12);
        assert!((dec.eigenvalues[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn decompose_default_skeleton() {
        let topo = SkeletonTopology::default_16_joint();
        let dec = decompose(&topo).unwrap();
        assert!(dec.eigenvalues[0] < 1e-9);
        assert!(dec.eigenvalues.iter().all(|&l| (-1e-9..=2.0 + 1e-9).contains(&l)));
        // reconstruction self-check
        let n = 16;
        let mut scaled = dec.eigenvectors.clone();
        for j in 0..n {
            for i in 0..n {
                scaled.data[i * n + j] *= dec.eigenvalues[j];
            }
        }
        let recon = scaled.matmul(&dec.eigenvectors.transpose()).unwrap();
        assert!(recon.max_abs_diff(&dec.laplacian) < 1e-8);
    }

    #[test]
    fn decompose_cache_returns_identical_bits() {
        let topo = SkeletonTopology::default_16_joint();
        let d1 = decompose(&topo).unwrap();
        let d2 = decompose(&topo).unwrap();
        assert!(Arc::ptr_eq(&d1, &d2));
        assert_eq!(d1.eigenvectors.data, d2.eigenvectors.data);
    }

    #[test]
    fn parse_roundtrip_default() {
        let topo = SkeletonTopology::default_16_joint();
        assert_eq!(topo.root_index, 0);
        assert_eq!(topo.joint_names[0], "Pelvis");
        assert_eq!(topo.joint_names[15], "RWrist");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "joints: a b\nroot: a\nedge: a\n";
        match SkeletonTopology::parse(bad) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("expected parse error at line 3, got {other:?}"),
        }
    }

    #[test]
    fn permutation_maps_laplacian_exactly() {
        let topo = SkeletonTopology::default_16_joint();
        let n = topo.num_joints();
        let lap = normalized_laplacian(&build_adjacency(&topo)).unwrap();
        // relabel nodes by a fixed permutation
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let edges: Vec<(usize, usize)> =
            topo.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let mut names = vec![String::new(); n];
        for (i, name) in topo.joint_names.iter().enumerate() {
            names[perm[i]] = name.clone();
        }
        let permuted =
            SkeletonTopology::new(names, edges, perm[topo.root_index]).unwrap();
        let lap_p = normalized_laplacian(&build_adjacency(&permuted)).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(lap.get(i, j), lap_p.get(perm[i], perm[j]));
            }
        }
    }
}
