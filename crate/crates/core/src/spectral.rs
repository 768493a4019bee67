//! Laplacian spectra and the structural quantities the topology criteria use.
//!
//! The largest Laplacian eigenvalue bounds the delay a delayed consensus can
//! tolerate, `τ_max = π / (2 λ_max)`; the algebraic connectivity `λ₂` sets the
//! delay-free convergence rate. Conductance and the degree-normalized spectrum
//! are exposed for the Cheeger sandwich `λ₂ⁿᵒʳᵐ / 2 ≤ Φ(G) ≤ sqrt(2 λ₂ⁿᵒʳᵐ)`.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::eigen;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Default node limit for exhaustive conductance.
pub const DEFAULT_BRUTE_FORCE_CAP: usize = 16;
/// Eigenvalues above this count as nonzero.
pub const ZERO_TOL: f64 = 1e-9;

/// `L = D - A`.
pub fn build_laplacian(g: &Graph) -> Array2<f64> {
    let n = g.node_count();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        l[[i, i]] = g.degree(i) as f64;
        for j in g.neighbors(i) {
            l[[i, j]] = -1.0;
        }
    }
    l
}

/// `D^{-1/2} L D^{-1/2}`; rows and columns of isolated nodes are zero.
pub fn normalized_laplacian(g: &Graph) -> Array2<f64> {
    let n = g.node_count();
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .into_iter()
        .map(|d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
        .collect();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        if g.degree(i) > 0 {
            l[[i, i]] = 1.0;
        }
        for j in g.neighbors(i) {
            l[[i, j]] = -inv_sqrt[i] * inv_sqrt[j];
        }
    }
    l
}

/// Ascending eigenvalues of a Laplacian with the two that matter pulled out.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Second-smallest eigenvalue; 0 for a single node.
    pub lambda2: f64,
    pub lambda_max: f64,
}

impl LaplacianSpectrum {
    pub fn is_connected(&self) -> bool {
        self.lambda2 > ZERO_TOL
    }
}

/// Eigenvalues of a symmetric (Laplacian) matrix, ascending.
pub fn spectrum(l: &Array2<f64>) -> Result<LaplacianSpectrum> {
    let eigenvalues = eigen::eigenvalues(l)?;
    let lambda2 = eigenvalues.get(1).copied().unwrap_or(0.0);
    let lambda_max = eigenvalues.last().copied().unwrap_or(0.0);
    Ok(LaplacianSpectrum { eigenvalues, lambda2, lambda_max })
}

pub fn laplacian_spectrum(g: &Graph) -> LaplacianSpectrum {
    spectrum(&build_laplacian(g)).expect("Laplacian is symmetric")
}

pub fn normalized_spectrum(g: &Graph) -> LaplacianSpectrum {
    spectrum(&normalized_laplacian(g)).expect("normalized Laplacian is symmetric")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeighborStructure {
    /// No edge between any two neighbors.
    Singleton,
    /// At least one edge between two neighbors.
    Connected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureReport {
    pub d_max: usize,
    pub is_bipartite: bool,
    pub has_odd_cycle: bool,
    pub neighbor_structure: Vec<NeighborStructure>,
    /// Set when the graph is connected and within the brute-force cap.
    pub conductance: Option<f64>,
}

pub fn neighbor_structure(g: &Graph, i: usize) -> NeighborStructure {
    let nbrs = g.mask(i);
    if g.neighbors(i).any(|j| g.mask(j) & nbrs != 0) {
        NeighborStructure::Connected
    } else {
        NeighborStructure::Singleton
    }
}

pub fn structure_report(g: &Graph, brute_force_cap: usize) -> StructureReport {
    let is_bipartite = g.is_bipartite();
    StructureReport {
        d_max: g.max_degree(),
        is_bipartite,
        has_odd_cycle: !is_bipartite,
        neighbor_structure: (0..g.node_count()).map(|i| neighbor_structure(g, i)).collect(),
        conductance: conductance(g, brute_force_cap).ok(),
    }
}

/// Conductance of a connected graph by enumeration of every cut.
///
/// A cut and its complement share a boundary, so only vertex sets that
/// contain node 0 are visited.
pub fn conductance(g: &Graph, brute_force_cap: usize) -> Result<f64> {
    let n = g.node_count();
    if n > brute_force_cap {
        return Err(Error::CapExceeded { nodes: n, cap: brute_force_cap });
    }
    if n < 2 {
        return Err(Error::InvalidArgument("conductance needs at least two nodes".into()));
    }
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let rows = g.masks();
    let degrees: Vec<u32> = rows.iter().map(|r| r.count_ones()).collect();
    let total: u32 = degrees.iter().sum();
    let full = (1u64 << n) - 1;
    let mut best = f64::INFINITY;
    // subsets of nodes 1..n joined with node 0, excluding the full set
    for rest in 0..(1u64 << (n - 1)) - 1 {
        let set = (rest << 1) | 1;
        let mut boundary = 0u32;
        let mut vol = 0u32;
        let mut s = set;
        while s != 0 {
            let u = s.trailing_zeros() as usize;
            s &= s - 1;
            boundary += (rows[u] & !set & full).count_ones();
            vol += degrees[u];
        }
        let ratio = boundary as f64 / vol.min(total - vol) as f64;
        if ratio < best {
            best = ratio;
        }
    }
    Ok(best)
}

/// Largest uniform delay a delayed consensus tolerates, `π / (2 λ_max)`.
pub fn tolerable_delay(lambda_max: f64) -> Result<f64> {
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::NonPositiveLambdaMax(lambda_max));
    }
    Ok(PI / (2.0 * lambda_max))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheegerBounds {
    pub lambda2_normalized: f64,
    pub lower: f64,
    pub phi: f64,
    pub upper: f64,
}

impl CheegerBounds {
    pub fn holds(&self, tol: f64) -> bool {
        self.lower <= self.phi + tol && self.phi <= self.upper + tol
    }
}

pub fn cheeger_bounds(g: &Graph, brute_force_cap: usize) -> Result<CheegerBounds> {
    let phi = conductance(g, brute_force_cap)?;
    let l2 = normalized_spectrum(g).lambda2;
    Ok(CheegerBounds { lambda2_normalized: l2, lower: l2 / 2.0, phi, upper: (2.0 * l2).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn laplacian_of_path() {
        let l = build_laplacian(&Graph::path(3).unwrap());
        assert_eq!(l, array![[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]);
    }

    #[test]
    fn laplacian_of_empty_graph_is_zero() {
        let l = build_laplacian(&Graph::empty(3).unwrap());
        assert!(l.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn laplacian_of_star() {
        let g = Graph::star(7).unwrap();
        let l = build_laplacian(&g);
        assert_eq!(l[[0, 0]], 7.0);
        for i in 1..8 {
            assert_eq!(l[[i, i]], 1.0);
            assert_eq!(l[[0, i]], -1.0);
            assert_eq!(l[[i, 0]], -1.0);
        }
        assert!(l.rows().into_iter().all(|r| r.sum() == 0.0));
    }

    #[test]
    fn path_spectrum() {
        // λ(λ² - 4λ + 3) = 0
        let s = laplacian_spectrum(&Graph::path(3).unwrap());
        for (got, want) in s.eigenvalues.iter().zip([0.0, 1.0, 3.0]) {
            assert!(close(*got, want, 1e-12));
        }
    }

    #[test]
    fn star_spectrum() {
        let s = laplacian_spectrum(&Graph::star(7).unwrap());
        assert!(close(s.lambda_max, 8.0, 1e-12));
        assert!(close(s.lambda2, 1.0, 1e-12));
    }

    #[test]
    fn ring_algebraic_connectivity() {
        let s = laplacian_spectrum(&Graph::cycle(8).unwrap());
        assert!(close(s.lambda2, 2.0 - 2.0 * (PI / 4.0).cos(), 1e-12));
        assert!(close(s.lambda2, 0.5858, 1e-4));
    }

    #[test]
    fn spectrum_rejects_asymmetric() {
        assert!(spectrum(&array![[1.0, -1.0], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn structure_examples() {
        let c4 = structure_report(&Graph::cycle(4).unwrap(), 16);
        assert!(c4.is_bipartite && c4.d_max == 2);
        let c3 = structure_report(&Graph::cycle(3).unwrap(), 16);
        assert!(c3.has_odd_cycle);
        assert!(c3.neighbor_structure.iter().all(|&s| s == NeighborStructure::Connected));
        let star = structure_report(&Graph::star(3).unwrap(), 16);
        assert!(star.neighbor_structure.iter().all(|&s| s == NeighborStructure::Singleton));
        assert_eq!(star.conductance, Some(1.0));
    }

    #[test]
    fn structure_report_leaves_conductance_unset_past_cap() {
        let r = structure_report(&Graph::cycle(20).unwrap(), 16);
        assert_eq!(r.conductance, None);
    }

    #[test]
    fn conductance_examples() {
        assert!(close(conductance(&Graph::complete(4).unwrap(), 16).unwrap(), 2.0 / 3.0, 1e-15));
        assert!(close(conductance(&Graph::cycle(8).unwrap(), 16).unwrap(), 0.25, 1e-15));
        assert!(close(conductance(&Graph::star(3).unwrap(), 16).unwrap(), 1.0, 1e-15));
    }

    #[test]
    fn conductance_errors() {
        let disconnected = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(matches!(conductance(&disconnected, 16), Err(Error::Disconnected)));
        assert!(matches!(conductance(&Graph::cycle(17).unwrap(), 16), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn tolerable_delay_examples() {
        assert!(close(tolerable_delay(8.0).unwrap(), 0.19635, 1e-5));
        assert!(close(tolerable_delay(PI / 2.0).unwrap(), 1.0, 1e-15));
        assert!(close(tolerable_delay(5.4146).unwrap(), 0.2901, 1e-4));
        assert!(tolerable_delay(0.0).is_err());
        assert!(tolerable_delay(-1.0).is_err());
    }

    #[test]
    fn single_node_has_zero_lambda_max() {
        let s = laplacian_spectrum(&Graph::empty(1).unwrap());
        assert_eq!(s.lambda_max, 0.0);
        assert!(tolerable_delay(s.lambda_max).is_err());
    }

    #[test]
    fn cheeger_examples() {
        let c8 = cheeger_bounds(&Graph::cycle(8).unwrap(), 16).unwrap();
        assert!(close(c8.lambda2_normalized, 1.0 - (PI / 4.0).cos(), 1e-12));
        assert!(close(c8.lower, 0.1464, 1e-4));
        assert!(close(c8.phi, 0.25, 1e-15));
        assert!(close(c8.upper, 0.7654, 1e-4));

        // single edge: normalized spectrum {0, 2}
        let k2 = cheeger_bounds(&Graph::complete(2).unwrap(), 16).unwrap();
        assert!(close(k2.lambda2_normalized, 2.0, 1e-12));
        assert!(close(k2.lower, 1.0, 1e-12) && k2.phi == 1.0 && close(k2.upper, 2.0, 1e-12));
        assert!(k2.holds(1e-12));

        let k4 = cheeger_bounds(&Graph::complete(4).unwrap(), 16).unwrap();
        assert!(close(k4.phi, 2.0 / 3.0, 1e-15));
        assert!(k4.holds(1e-12));
    }
}
