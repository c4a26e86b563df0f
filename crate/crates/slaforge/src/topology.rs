//! Service graph and the spectral machinery consumed by the graph convolution.
//!
//! The service is modeled as an undirected, unweighted graph over its
//! components. The normalized Laplacian is rescaled so its spectrum fits in
//! `[-1, 1]`, which is what the Chebyshev polynomial filter expects.

use ndarray::Array2;
use thiserror::Error;

use crate::Real;

/// Canonical component names of the default 6-node service graph.
pub const DEFAULT_NODES: [&str; 6] = ["bono", "sprout", "homestead", "homer", "ellis", "ralf"];

/// Default edge list for the 6-node graph, by canonical node name.
pub const DEFAULT_EDGES: [(&str, &str); 7] = [
    ("bono", "sprout"),
    ("sprout", "homestead"),
    ("sprout", "homer"),
    ("sprout", "ralf"),
    ("bono", "ralf"),
    ("ellis", "homestead"),
    ("ellis", "homer"),
];

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("unknown node name: {0}")]
    UnknownNode(String),
    #[error("duplicate node name: {0}")]
    DuplicateNode(String),
    #[error("self-loop on node {0}")]
    SelfLoop(String),
    #[error("graph is not connected")]
    Disconnected,
    #[error("node {0} has no incident edges")]
    IsolatedNode(String),
    #[error("power iteration did not converge")]
    NoConvergence,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("graph file line {line}: {message}")]
    BadGraphFile { line: usize, message: String },
}

/// Undirected, unweighted service topology with a 0/1 adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceGraph {
    node_names: Vec<String>,
    edges: Vec<(usize, usize)>,
    adjacency: Array2<f64>,
}

impl ServiceGraph {
    /// Builds a graph from node names and unordered index pairs.
    ///
    /// Rejects self-loops and disconnected graphs; duplicate edges collapse.
    pub fn new(node_names: Vec<String>, edges: Vec<(usize, usize)>) -> Result<Self, TopologyError> {
        let n = node_names.len();
        for (i, name) in node_names.iter().enumerate() {
            if node_names[..i].contains(name) {
                return Err(TopologyError::DuplicateNode(name.clone()));
            }
        }
        let mut adjacency = Array2::zeros((n, n));
        let mut canonical = Vec::new();
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(TopologyError::UnknownNode(format!("index {}", a.max(b))));
            }
            if a == b {
                return Err(TopologyError::SelfLoop(node_names[a].clone()));
            }
            let (lo, hi) = (a.min(b), a.max(b));
            if adjacency[[lo, hi]] == 0.0 {
                canonical.push((lo, hi));
            }
            adjacency[[lo, hi]] = 1.0;
            adjacency[[hi, lo]] = 1.0;
        }
        let graph = ServiceGraph { node_names, edges: canonical, adjacency };
        if !graph.is_connected() {
            return Err(TopologyError::Disconnected);
        }
        Ok(graph)
    }

    /// Builds a graph from name pairs against an explicit node list.
    pub fn from_named_edges(
        node_names: &[&str],
        edges: &[(&str, &str)],
    ) -> Result<Self, TopologyError> {
        let names: Vec<String> = node_names.iter().map(|s| s.to_string()).collect();
        let index = |name: &str| {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| TopologyError::UnknownNode(name.to_string()))
        };
        let mut idx_edges = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            idx_edges.push((index(a)?, index(b)?));
        }
        Self::new(names, idx_edges)
    }

    /// Parses a graph override file: one `nodeA nodeB` pair per line.
    ///
    /// Blank lines and `#` comments are skipped. Names must match the
    /// canonical node list unless a custom list is supplied.
    pub fn from_edge_list_text(
        text: &str,
        node_names: Option<&[&str]>,
    ) -> Result<Self, TopologyError> {
        let names: Vec<&str> = node_names.map(|n| n.to_vec()).unwrap_or_else(|| DEFAULT_NODES.to_vec());
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => edges.push((a, b)),
                _ => {
                    return Err(TopologyError::BadGraphFile {
                        line: lineno + 1,
                        message: format!("expected `nodeA nodeB`, got {:?}", line),
                    })
                }
            }
        }
        Self::from_named_edges(&names, &edges)
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn node_count(&self) -> usize {
        self.node_names.len()
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.node_names.iter().position(|n| n == name)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.row(node).iter().filter(|&&v| v != 0.0).count()
    }

    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&j| self.adjacency[[node, j]] != 0.0)
            .collect()
    }

    fn is_connected(&self) -> bool {
        let n = self.node_count();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for w in self.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Adjacency cast to the requested scalar type.
    pub fn adjacency_as<F: Real>(&self) -> Array2<F> {
        self.adjacency.mapv(|v| F::from_f64(v).unwrap())
    }
}

/// Builds the pinned default 6-node service graph.
pub fn build_default_graph() -> ServiceGraph {
    ServiceGraph::from_named_edges(&DEFAULT_NODES, &DEFAULT_EDGES)
        .expect("default graph is valid by construction")
}

/// Scaled Laplacian plus the filter support used for Chebyshev evaluation.
#[derive(Debug, Clone)]
pub struct SpectralBasis<F: Real> {
    scaled_laplacian: Array2<F>,
    lambda_max: F,
    k: usize,
}

impl<F: Real> SpectralBasis<F> {
    /// `(2/lambda_max) * L - I`, spectrum in `[-1, 1]`.
    pub fn scaled_laplacian(&self) -> &Array2<F> {
        &self.scaled_laplacian
    }

    pub fn lambda_max(&self) -> F {
        self.lambda_max
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn node_count(&self) -> usize {
        self.scaled_laplacian.nrows()
    }

    /// Chebyshev polynomials `T_0 .. T_{k-1}` of the scaled Laplacian,
    /// via the recurrence `T_k = 2 L~ T_{k-1} - T_{k-2}`.
    pub fn chebyshev_matrices(&self, k: usize) -> Vec<Array2<F>> {
        let n = self.node_count();
        let mut out: Vec<Array2<F>> = Vec::with_capacity(k);
        for i in 0..k {
            let t = match i {
                0 => Array2::eye(n),
                1 => self.scaled_laplacian.clone(),
                _ => {
                    let two = F::from_f64(2.0).unwrap();
                    self.scaled_laplacian.dot(&out[i - 1]).mapv(|v| v * two) - &out[i - 2]
                }
            };
            out.push(t);
        }
        out
    }
}

/// Builds the spectral basis for a graph: symmetric normalized Laplacian,
/// exact largest eigenvalue by power iteration, and the rescaled Laplacian.
pub fn scaled_laplacian<F: Real>(graph: &ServiceGraph, k: usize) -> Result<SpectralBasis<F>, TopologyError> {
    let n = graph.node_count();
    for i in 0..n {
        if graph.degree(i) == 0 {
            return Err(TopologyError::IsolatedNode(graph.node_names()[i].clone()));
        }
    }
    let adjacency: Array2<F> = graph.adjacency_as();
    let inv_sqrt_deg: Vec<F> = (0..n)
        .map(|i| F::one() / F::from_usize(graph.degree(i)).unwrap().sqrt())
        .collect();
    // L = I - D^{-1/2} A D^{-1/2}
    let mut laplacian = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let norm = adjacency[[i, j]] * inv_sqrt_deg[i] * inv_sqrt_deg[j];
            laplacian[[i, j]] = if i == j { F::one() - norm } else { -norm };
        }
    }
    // Inflate by 1e-10 relative so the scaled spectrum stays inside [-1, 1]
    // even when the iteration stops just short of the true eigenvalue.
    let lambda_max = power_iteration(&laplacian)? * F::from_f64(1.0 + 1e-10).unwrap();
    let scale = F::from_f64(2.0).unwrap() / lambda_max;
    let mut scaled = laplacian.mapv(|v| v * scale);
    for i in 0..n {
        scaled[[i, i]] -= F::one();
    }
    Ok(SpectralBasis { scaled_laplacian: scaled, lambda_max, k })
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration. The
/// Rayleigh quotient converges well past the 1e-8 contract at this size.
fn power_iteration<F: Real>(m: &Array2<F>) -> Result<F, TopologyError> {
    let n = m.nrows();
    let tol = F::from_f64(1e-13).unwrap().max(F::epsilon());
    let max_iters = 10_000;
    // Deterministic non-degenerate start vector.
    let mut v: Vec<F> = (0..n).map(|i| F::from_f64(1.0 + 0.1 * i as f64).unwrap()).collect();
    let mut lambda = F::zero();
    for _ in 0..max_iters {
        let mut w = vec![F::zero(); n];
        for i in 0..n {
            let mut acc = F::zero();
            for j in 0..n {
                acc += m[[i, j]] * v[j];
            }
            w[i] = acc;
        }
        let norm = w.iter().map(|&x| x * x).sum::<F>().sqrt();
        if norm == F::zero() {
            return Err(TopologyError::NoConvergence);
        }
        for x in w.iter_mut() {
            *x /= norm;
        }
        // Rayleigh quotient with the normalized iterate.
        let mut next = F::zero();
        for i in 0..n {
            let mut acc = F::zero();
            for j in 0..n {
                acc += m[[i, j]] * w[j];
            }
            next += w[i] * acc;
        }
        let denom = if next.abs() > F::one() { next.abs() } else { F::one() };
        if (next - lambda).abs() / denom < tol {
            return Ok(next);
        }
        lambda = next;
        v = w;
    }
    Err(TopologyError::NoConvergence)
}

/// Applies the Chebyshev filter: `sum_k T_k(L~) X W_k`.
///
/// `x` is `n x d`, each `weights[k]` is `d x h`; the result is `n x h`.
pub fn chebyshev_apply<F: Real>(
    basis: &SpectralBasis<F>,
    x: &Array2<F>,
    weights: &[Array2<F>],
) -> Result<Array2<F>, TopologyError> {
    let n = basis.node_count();
    if weights.is_empty() {
        return Err(TopologyError::ShapeMismatch("empty weight stack".into()));
    }
    if x.nrows() != n {
        return Err(TopologyError::ShapeMismatch(format!(
            "signal has {} rows, graph has {} nodes",
            x.nrows(),
            n
        )));
    }
    let d = x.ncols();
    let h = weights[0].ncols();
    for w in weights {
        if w.nrows() != d || w.ncols() != h {
            return Err(TopologyError::ShapeMismatch(format!(
                "weight is {}x{}, expected {}x{}",
                w.nrows(),
                w.ncols(),
                d,
                h
            )));
        }
    }
    let mut out = Array2::zeros((n, h));
    let mut t_prev: Option<Array2<F>> = None;
    let mut t_cur = Array2::eye(n);
    for (k, w) in weights.iter().enumerate() {
        if k == 1 {
            t_prev = Some(std::mem::replace(&mut t_cur, basis.scaled_laplacian().clone()));
        } else if k >= 2 {
            let two = F::from_f64(2.0).unwrap();
            let next = basis.scaled_laplacian().dot(&t_cur).mapv(|v| v * two)
                - t_prev.as_ref().unwrap();
            t_prev = Some(std::mem::replace(&mut t_cur, next));
        }
        out = out + t_cur.dot(x).dot(w);
    }
    Ok(out)
}
