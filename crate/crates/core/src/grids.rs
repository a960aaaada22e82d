//! Discretization primitives: the velocity quadrature on `V = [-1/2, 1/2]`,
//! uniform spatial meshes, and the turning-kernel description.
//!
//! Every velocity profile in this crate jumps at `v = 0`, so the quadrature
//! is built independently on `[-1/2, 0]` and `[0, 1/2]` and never places a
//! node at zero. Nodes are stored in increasing order; the negative half
//! comes first, and node `j` is paired with its mirror `2 n_half - 1 - j`.
//!
//! Grids and kernels serialize to a small TOML document:
//!
//! ```text
//! [grid]
//! rule = "gauss"
//! n_half = 2
//! nodes = [-0.39433756729740643, -0.10566243270259354, ...]
//! weights = [0.25, 0.25, 0.25, 0.25]
//!
//! [kernel]
//! chi = 0.5
//! kplus = [0.5, 0.5, 1.5, 1.5]
//! ```
//!
//! Floats are written in shortest round-trip form, so a document read back
//! reproduces every node, weight and rate bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Quadrature rule applied on each half of the velocity interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Gauss,
    Midpoint,
}

impl std::str::FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss" => Ok(Rule::Gauss),
            "midpoint" => Ok(Rule::Midpoint),
            other => Err(invalid("rule", format!("unknown quadrature rule `{other}`"))),
        }
    }
}

/// Symmetric velocity quadrature on `[-1/2, 0) ∪ (0, 1/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    rule: Rule,
    n_half: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // i-th root counted from +1 downwards
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

impl VelocityGrid {
    /// Builds `2 n_half` nodes, `n_half` on each side of zero.
    pub fn new(n_half: usize, rule: Rule) -> Result<Self> {
        if n_half == 0 {
            return Err(invalid("n_half", "at least one node per half-interval is required"));
        }
        // nodes and weights on (0, 1/2], ascending
        let (pos, wpos): (Vec<f64>, Vec<f64>) = match rule {
            Rule::Gauss => {
                let (x, w) = gauss_legendre(n_half);
                (
                    x.iter().map(|t| 0.25 * (t + 1.0)).collect(),
                    w.iter().map(|t| 0.25 * t).collect(),
                )
            }
            Rule::Midpoint => {
                let h = 0.5 / n_half as f64;
                ((0..n_half).map(|k| (k as f64 + 0.5) * h).collect(), vec![h; n_half])
            }
        };
        let nodes = pos.iter().rev().map(|v| -v).chain(pos.iter().copied()).collect();
        let weights = wpos.iter().rev().chain(wpos.iter()).copied().collect();
        Ok(Self {
            rule,
            n_half,
            nodes,
            weights,
        })
    }

    /// Rebuilds a grid from explicit node and weight lists, checking every
    /// structural invariant. This is the entry point for general measures.
    pub fn from_parts(rule: Rule, nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = nodes.len();
        if n == 0 || !n.is_multiple_of(2) || weights.len() != n {
            return Err(invalid("nodes", "need an even, nonzero number of nodes with matching weights"));
        }
        let n_half = n / 2;
        for j in 0..n {
            let v = nodes[j];
            if !(v.abs() <= 0.5) || v == 0.0 {
                return Err(invalid("nodes", format!("node {j} = {v} outside [-1/2, 0) ∪ (0, 1/2]")));
            }
            if !(weights[j] > 0.0) {
                return Err(invalid("weights", format!("weight {j} = {} is not positive", weights[j])));
            }
            if (j < n_half) != (v < 0.0) {
                return Err(invalid("nodes", "negative nodes must fill the first half"));
            }
            if j > 0 && nodes[j - 1] >= v {
                return Err(invalid("nodes", "nodes must be strictly increasing"));
            }
            let m = n - 1 - j;
            if nodes[m] != -v || weights[m] != weights[j] {
                return Err(invalid("nodes", format!("node {j} has no exact mirror image")));
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-14 {
            return Err(invalid("weights", format!("weights sum to {total}, expected 1")));
        }
        Ok(Self {
            rule,
            n_half,
            nodes,
            weights,
        })
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    pub fn n_half(&self) -> usize {
        self.n_half
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the mirrored node `-v_j`.
    #[inline]
    pub fn mirror(&self, j: usize) -> usize {
        self.nodes.len() - 1 - j
    }

    /// Indices of the nodes with `v < 0`.
    pub fn negative(&self) -> std::ops::Range<usize> {
        0..self.n_half
    }

    /// Indices of the nodes with `v > 0`.
    pub fn positive(&self) -> std::ops::Range<usize> {
        self.n_half..2 * self.n_half
    }

    pub fn max_speed(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// `Σ_j w_j f(v_j)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&v, &w)| w * f(v)).sum()
    }

    /// `Σ_j w_j a_j` over nodal values.
    pub fn sum(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(a, w)| w * a).sum()
    }
}

/// Which side of the origin a cell lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshKind {
    /// `[0, L]`, used by the half-space problem.
    HalfLine,
    /// `[-L, L]`, symmetric about the origin.
    Box,
}

/// Uniform cell-centered mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMesh {
    kind: MeshKind,
    length: f64,
    dx: f64,
    centers: Vec<f64>,
}

impl SpatialMesh {
    pub fn half_line(length: f64, n_cells: usize) -> Result<Self> {
        Self::check(length, n_cells)?;
        let dx = length / n_cells as f64;
        let centers = (0..n_cells).map(|i| (i as f64 + 0.5) * dx).collect();
        Ok(Self {
            kind: MeshKind::HalfLine,
            length,
            dx,
            centers,
        })
    }

    /// Mesh of `[-length, length]` with `n_cells` cells. Centers are mirror
    /// images of each other to the last bit; an odd count puts one at 0.
    pub fn centered_box(length: f64, n_cells: usize) -> Result<Self> {
        Self::check(length, n_cells)?;
        let dx = 2.0 * length / n_cells as f64;
        let half = n_cells as f64 / 2.0;
        let centers = (0..n_cells).map(|i| (i as f64 + 0.5 - half) * dx).collect();
        Ok(Self {
            kind: MeshKind::Box,
            length,
            dx,
            centers,
        })
    }

    fn check(length: f64, n_cells: usize) -> Result<()> {
        if n_cells == 0 {
            return Err(invalid("nx", "mesh needs at least one cell"));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(invalid("L", format!("domain length must be positive, got {length}")));
        }
        Ok(())
    }

    pub fn kind(&self) -> MeshKind {
        self.kind
    }

    /// Half-line length `L`, or half-width of the box.
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Cell-edge coordinates, `len() + 1` of them.
    pub fn edges(&self) -> Vec<f64> {
        let start = match self.kind {
            MeshKind::HalfLine => 0.0,
            MeshKind::Box => -self.length,
        };
        (0..=self.len()).map(|k| start + k as f64 * self.dx).collect()
    }

    /// Index of the cell mirrored through the origin (box meshes).
    #[inline]
    pub fn mirror(&self, i: usize) -> usize {
        self.centers.len() - 1 - i
    }

    /// Side of the origin for every cell; fails if a center sits at 0,
    /// where the turning kernel is not defined.
    pub fn sides(&self) -> Result<Vec<Side>> {
        self.centers
            .iter()
            .map(|&x| {
                if x > 0.0 {
                    Ok(Side::Right)
                } else if x < 0.0 {
                    Ok(Side::Left)
                } else {
                    Err(invalid("nx", "a cell center at x = 0 leaves the turning rate undefined; use an even cell count"))
                }
            })
            .collect()
    }
}

/// Turning rates `K_+(v)` (for `x > 0`) and `K_-(v) = K_+(-v)` (for `x < 0`)
/// tabulated on a velocity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Bias parameter of the sign kernel `1 + χ sign(xv)`; absent for
    /// tabulated kernels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
    kplus: Vec<f64>,
    #[serde(skip)]
    kminus: Vec<f64>,
    #[serde(skip)]
    kmin: f64,
    #[serde(skip)]
    kmax: f64,
}

impl KernelSpec {
    /// The sign kernel `K(x, v) = 1 + χ sign(x v)`, `0 < χ < 1`.
    pub fn sign(chi: f64, grid: &VelocityGrid) -> Result<Self> {
        if !(chi > 0.0 && chi < 1.0) {
            return Err(invalid("chi", format!("bias must lie in (0, 1), got {chi}")));
        }
        let values = grid
            .nodes()
            .iter()
            .map(|&v| if v > 0.0 { 1.0 + chi } else { 1.0 - chi })
            .collect();
        let mut k = Self::from_values(grid, values)?;
        k.chi = Some(chi);
        Ok(k)
    }

    /// Tabulated `K_+` at the grid nodes. Checks positivity and confinement;
    /// the left-side rates are generated by mirror symmetry.
    pub fn from_values(grid: &VelocityGrid, kplus: Vec<f64>) -> Result<Self> {
        if kplus.len() != grid.len() {
            return Err(invalid(
                "kplus",
                format!("{} rates for a grid of {} nodes", kplus.len(), grid.len()),
            ));
        }
        if let Some((j, &k)) = kplus
            .iter()
            .enumerate()
            .find(|(_, &k)| !(k > 0.0 && k.is_finite()))
        {
            return Err(Error::Hypothesis {
                hypothesis: "bounded positive rates",
                detail: format!("K_+(v_{j}) = {k}"),
            });
        }
        let kminus = (0..grid.len()).map(|j| kplus[grid.mirror(j)]).collect();
        let kmin = kplus.iter().copied().fold(f64::INFINITY, f64::min);
        let kmax = kplus.iter().copied().fold(0.0, f64::max);
        let spec = Self {
            chi: None,
            kplus,
            kminus,
            kmin,
            kmax,
        };
        let drift = spec.confinement_integral(grid);
        // quadrature round-off must not pass for confinement
        let scale: f64 = (0..grid.len())
            .map(|j| grid.weights()[j] * grid.nodes()[j].abs() / spec.kplus[j])
            .sum();
        if !(drift < -1e-12 * scale) {
            return Err(Error::Hypothesis {
                hypothesis: "confinement",
                detail: format!("Σ w v / K_+ = {drift:e} is not negative"),
            });
        }
        Ok(spec)
    }

    /// Samples `kplus` at the nodes and additionally checks that it is
    /// continuous on each half-interval, the only jump allowed being at 0.
    pub fn from_fn(grid: &VelocityGrid, kplus: impl Fn(f64) -> f64) -> Result<Self> {
        const SAMPLES: usize = 512;
        for (a, b) in [(-0.5, 0.0), (0.0, 0.5)] {
            let h = (b - a) / SAMPLES as f64;
            let mut scale: f64 = 0.0;
            let mut worst = (0.0, a);
            for k in 0..SAMPLES {
                // open interval: stay off the endpoint at 0
                let x0 = a + h * (k as f64 + 0.01);
                let x1 = a + h * (k as f64 + 0.99);
                let (f0, f1) = (kplus(x0), kplus(x1));
                scale = scale.max(f0.abs()).max(f1.abs());
                if (f1 - f0).abs() > worst.0 {
                    worst = ((f1 - f0).abs(), x0);
                }
            }
            // a jump survives bisection, a continuous slope does not
            let (mut lo, mut hi) = (worst.1, worst.1 + 0.98 * h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if (kplus(mid) - kplus(lo)).abs() >= (kplus(hi) - kplus(mid)).abs() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let jump = (kplus(hi) - kplus(lo)).abs();
            if jump > 1e-9 * scale.max(1.0) {
                return Err(Error::Hypothesis {
                    hypothesis: "piecewise continuity",
                    detail: format!("K_+ jumps by {jump:e} near v = {lo:.6}"),
                });
            }
        }
        Self::from_values(grid, grid.nodes().iter().map(|&v| kplus(v)).collect())
    }

    pub fn kplus(&self) -> &[f64] {
        &self.kplus
    }

    pub fn kminus(&self) -> &[f64] {
        &self.kminus
    }

    /// Rates on the given side of the origin.
    #[inline]
    pub fn on(&self, side: Side) -> &[f64] {
        match side {
            Side::Right => &self.kplus,
            Side::Left => &self.kminus,
        }
    }

    pub fn kmin(&self) -> f64 {
        self.kmin
    }

    pub fn kmax(&self) -> f64 {
        self.kmax
    }

    /// `Σ_j w_j v_j / K_+(v_j)`, negative for a confining kernel.
    pub fn confinement_integral(&self, grid: &VelocityGrid) -> f64 {
        grid.nodes()
            .iter()
            .zip(grid.weights())
            .zip(&self.kplus)
            .map(|((v, w), k)| w * v / k)
            .sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SpecDocument {
    grid: VelocityGrid,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<KernelSpec>,
}

/// Writes a grid and optional kernel as a TOML document.
pub fn to_toml(grid: &VelocityGrid, kernel: Option<&KernelSpec>) -> String {
    let doc = SpecDocument {
        grid: grid.clone(),
        kernel: kernel.cloned(),
    };
    toml::to_string(&doc).expect("grid and kernel are plain data")
}

/// Reads a document written by [`to_toml`], re-validating every invariant.
pub fn from_toml(text: &str) -> Result<(VelocityGrid, Option<KernelSpec>)> {
    let doc: SpecDocument = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let grid = VelocityGrid::from_parts(doc.grid.rule, doc.grid.nodes, doc.grid.weights)?;
    let kernel = match doc.kernel {
        Some(k) => {
            let mut spec = KernelSpec::from_values(&grid, k.kplus)?;
            spec.chi = k.chi;
            Some(spec)
        }
        None => None,
    };
    Ok((grid, kernel))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_single_node_per_half() {
        let g = VelocityGrid::new(1, Rule::Midpoint).unwrap();
        assert_eq!(g.nodes(), &[-0.25, 0.25]);
        assert_eq!(g.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn rejects_empty_grid() {
        assert!(VelocityGrid::new(0, Rule::Gauss).is_err());
    }

    #[test]
    fn weights_normalized_and_symmetric() {
        for rule in [Rule::Gauss, Rule::Midpoint] {
            for n in [1, 2, 3, 7, 16, 33] {
                let g = VelocityGrid::new(n, rule).unwrap();
                assert_eq!(g.len(), 2 * n);
                let total: f64 = g.weights().iter().sum();
                assert!((total - 1.0).abs() < 1e-15, "{rule:?} {n}: {total}");
                assert!(g.integrate(|v| v).abs() < 1e-16);
                assert!(g.nodes().iter().all(|&v| v != 0.0));
                for j in 0..g.len() {
                    assert_eq!(g.nodes()[g.mirror(j)], -g.nodes()[j]);
                }
            }
        }
    }

    #[test]
    fn second_moment_is_one_twelfth() {
        let g = VelocityGrid::new(16, Rule::Gauss).unwrap();
        assert!((g.integrate(|v| v * v) - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_is_exact_per_half() {
        // degree 2n-1 on each half, including odd functions that jump at 0
        let n = 5;
        let g = VelocityGrid::new(n, Rule::Gauss).unwrap();
        for p in 0..2 * n {
            let exact_half = 0.5_f64.powi(p as i32 + 1) / (p as f64 + 1.0);
            let q = g.integrate(|v| if v > 0.0 { v.powi(p as i32) } else { 0.0 });
            assert!((q - exact_half).abs() < 1e-13, "degree {p}: {q} vs {exact_half}");
        }
    }

    #[test]
    fn sign_kernel_values() {
        let g = VelocityGrid::new(1, Rule::Midpoint).unwrap();
        let k = KernelSpec::sign(0.5, &g).unwrap();
        assert_eq!(k.kplus(), &[0.5, 1.5]);
        assert_eq!(k.kminus(), &[1.5, 0.5]);
        assert_eq!((k.kmin(), k.kmax()), (0.5, 1.5));
    }

    #[test]
    fn sign_kernel_confinement_integral() {
        let g = VelocityGrid::new(16, Rule::Gauss).unwrap();
        let k = KernelSpec::sign(0.5, &g).unwrap();
        assert!((k.confinement_integral(&g) + 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bias_outside_unit_interval() {
        let g = VelocityGrid::new(4, Rule::Gauss).unwrap();
        for chi in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(KernelSpec::sign(chi, &g).is_err(), "{chi}");
        }
    }

    #[test]
    fn constant_kernel_is_not_confining() {
        let g = VelocityGrid::new(8, Rule::Gauss).unwrap();
        let err = KernelSpec::from_values(&g, vec![2.0; g.len()]).unwrap_err();
        assert!(matches!(err, Error::Hypothesis { hypothesis, .. } if hypothesis.starts_with("confinement")));
    }

    #[test]
    fn nonpositive_rate_rejected() {
        let g = VelocityGrid::new(2, Rule::Gauss).unwrap();
        let err = KernelSpec::from_values(&g, vec![0.5, 0.0, 1.5, 1.5]).unwrap_err();
        assert!(matches!(err, Error::Hypothesis { hypothesis, .. } if hypothesis.starts_with("bounded")));
    }

    #[test]
    fn tabulated_sign_kernel_round_trips() {
        let g = VelocityGrid::new(6, Rule::Gauss).unwrap();
        let k = KernelSpec::sign(0.5, &g).unwrap();
        let t = KernelSpec::from_values(&g, k.kplus().to_vec()).unwrap();
        assert_eq!(t.kplus(), k.kplus());
        assert_eq!(t.kminus(), k.kminus());
        assert_eq!((t.kmin(), t.kmax()), (k.kmin(), k.kmax()));
    }

    #[test]
    fn smooth_biased_kernel_passes() {
        let g = VelocityGrid::new(16, Rule::Gauss).unwrap();
        let f = |v: f64| 1.0 + 0.3 * v.signum() + 0.1 * v;
        let k = KernelSpec::from_fn(&g, f).unwrap();
        // independent evaluation of the confinement integral: fine midpoint sums
        let n = 200_000;
        let h = 0.5 / n as f64;
        let fine: f64 = (0..n)
            .map(|i| {
                let v = (i as f64 + 0.5) * h;
                h * (v / f(v) - v / f(-v))
            })
            .sum();
        assert!(fine < 0.0);
        assert!((k.confinement_integral(&g) - fine).abs() < 1e-9);
        for j in 0..g.len() {
            assert_eq!(k.kplus()[j], k.kminus()[g.mirror(j)]);
        }
    }

    #[test]
    fn interior_jump_rejected() {
        let g = VelocityGrid::new(16, Rule::Gauss).unwrap();
        let f = |v: f64| 1.0 + 0.3 * v.signum() + if v > 0.2 { 0.2 } else { 0.0 };
        let err = KernelSpec::from_fn(&g, f).unwrap_err();
        assert!(matches!(err, Error::Hypothesis { hypothesis, .. } if hypothesis.starts_with("piecewise")));
    }

    #[test]
    fn refinement_is_cauchy() {
        let f = |v: f64| 1.0 + 0.3 * v.signum() + 0.1 * v;
        let drift = |n| {
            let g = VelocityGrid::new(n, Rule::Midpoint).unwrap();
            KernelSpec::from_fn(&g, f).unwrap().confinement_integral(&g)
        };
        let seq: Vec<f64> = [2, 4, 8, 16, 32].iter().map(|&n| drift(n)).collect();
        for w in seq.windows(3) {
            assert!((w[2] - w[1]).abs() < (w[1] - w[0]).abs());
        }
    }

    #[test]
    fn box_mesh_is_mirror_symmetric() {
        for n in [4, 5, 10, 11] {
            let m = SpatialMesh::centered_box(3.0, n).unwrap();
            for i in 0..n {
                assert_eq!(m.centers()[m.mirror(i)], -m.centers()[i]);
            }
            assert_eq!(m.sides().is_ok(), n % 2 == 0);
            let e = m.edges();
            assert!((e[0] + 3.0).abs() < 1e-15 && (e[n] - 3.0).abs() < 1e-14);
        }
        let h = SpatialMesh::half_line(2.0, 8).unwrap();
        assert_eq!(h.dx(), 0.25);
        assert_eq!(h.centers()[0], 0.125);
        assert!(SpatialMesh::half_line(0.0, 8).is_err());
    }

    #[test]
    fn toml_round_trip_is_exact() {
        let g = VelocityGrid::new(7, Rule::Gauss).unwrap();
        let k = KernelSpec::from_fn(&g, |v| 1.0 + 0.3 * v.signum() + 0.1 * v).unwrap();
        let text = to_toml(&g, Some(&k));
        let (g2, k2) = from_toml(&text).unwrap();
        assert_eq!(g2, g);
        assert_eq!(k2.unwrap(), k);
        let s = KernelSpec::sign(0.37, &g).unwrap();
        let (_, s2) = from_toml(&to_toml(&g, Some(&s))).unwrap();
        assert_eq!(s2.unwrap(), s);
    }

    #[test]
    fn tampered_document_rejected() {
        let g = VelocityGrid::new(2, Rule::Midpoint).unwrap();
        let text = to_toml(&g, None).replacen("0.125", "0.124", 1);
        assert!(from_toml(&text).is_err());
    }
}
