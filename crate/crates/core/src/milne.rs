//! Half-space (Milne) problem for the reduced unknown `u = g e^{αx} / G`,
//!
//! ```text
//! v ∂ₓu + (u − A)/G + εu = 0,   A(x) = Σ w K₊ G u(x, ·),   x > 0,
//! u(0, v) = φ(v) for v > 0,
//! ```
//!
//! its albedo map, the Krein-Rutman eigenproblem that closes the reflection
//! condition `g(0, v) = g(0, −v)`, and the resulting symmetric stationary
//! state on a box.
//!
//! The half-line `[0, L]` is resolved on a lattice of spacing `Δx/2` so that
//! the odd lattice points coincide with the cell centers of the box mesh of
//! width `Δx`. `A` is piecewise constant per lattice cell and every
//! characteristic is integrated exactly against it. The cell value of `A` is
//! the `e^{-αx}`-weighted average of the moment, which makes the discrete
//! flux `e^{-αx} Σ w v G u` identical at every lattice point. Beyond `L`, `A`
//! is continued by its last value.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::dispersion::DispersionResult;
use crate::error::{invalid, Error, Result};
use crate::grids::{KernelSpec, MeshKind, SpatialMesh, VelocityGrid};

/// Fixed-point solver for the moment `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilneMethod {
    /// Plain source iteration `A ← moment(sweep(A))`.
    SourceIteration,
    /// Dense LU of the affine map `A ↦ moment(sweep(A))`.
    Direct,
}

#[derive(Debug, Clone)]
pub struct MilneOptions {
    pub epsilon: f64,
    /// Sup-norm tolerance on successive moment updates.
    pub tol: f64,
    pub max_iter: usize,
    pub method: MilneMethod,
}

impl Default for MilneOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            tol: 1e-13,
            max_iter: 500_000,
            method: MilneMethod::SourceIteration,
        }
    }
}

/// Reduced unknown on the lattice `x_k = k Δx/2`, `k = 0..=2 nx`.
#[derive(Debug, Clone)]
pub struct MilneSolution {
    /// `u[k * nv + j]`.
    pub u: Vec<f64>,
    /// Incoming data on the positive nodes, in node order.
    pub inflow: Vec<f64>,
    pub epsilon: f64,
    /// Moment `A` on each lattice cell; `u` is the sweep of this `A`.
    pub a: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm difference between `A` and the moment of `u`.
    pub residual: f64,
    /// Lattice coordinates.
    pub x: Vec<f64>,
    nv: usize,
}

impl MilneSolution {
    #[inline]
    pub fn at(&self, k: usize, j: usize) -> f64 {
        self.u[k * self.nv + j]
    }

    /// Velocity row at lattice point `k`.
    pub fn row(&self, k: usize) -> &[f64] {
        &self.u[k * self.nv..(k + 1) * self.nv]
    }

    pub fn points(&self) -> usize {
        self.x.len()
    }
}

/// Result of a moment sweep.
#[derive(Debug, Clone)]
pub struct Sweep {
    /// `u[k * nv + j]` at lattice points.
    pub u: Vec<f64>,
    /// Weighted cell averages of `Σ w K₊ G u`.
    pub a: Vec<f64>,
}

/// Precomputed characteristic data for one half-line discretization.
#[derive(Debug)]
pub struct Milne {
    grid: VelocityGrid,
    kernel: KernelSpec,
    disp: DispersionResult,
    mesh: SpatialMesh,
    epsilon: f64,
    h: f64,
    cells: usize,
    /// `exp(−λ_ε h/|v|)`.
    decay: Vec<f64>,
    /// Weighted-average factor of the transient part on one cell.
    transient: Vec<f64>,
    /// `1/(G λ_ε)`.
    qfac: Vec<f64>,
    /// `w K₊ G`.
    wkg: Vec<f64>,
    lu: OnceLock<Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>>,
}

/// `(1 − e^{−r h})/r`, continuous at `r = 0`.
fn mean_factor(r: f64, h: f64) -> f64 {
    if (r * h).abs() < 1e-300 {
        h
    } else {
        -(-r * h).exp_m1() / r
    }
}

impl Milne {
    /// `mesh` is the half-line `[0, L]`; the lattice has twice its cell count.
    pub fn new(
        kernel: &KernelSpec,
        grid: &VelocityGrid,
        disp: &DispersionResult,
        mesh: &SpatialMesh,
        epsilon: f64,
    ) -> Result<Self> {
        if mesh.kind() != MeshKind::HalfLine {
            return Err(invalid("mesh", "the half-space problem needs a half-line mesh"));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(invalid("epsilon", format!("must be nonnegative, got {epsilon}")));
        }
        if disp.g.len() != grid.len() || kernel.kplus().len() != grid.len() {
            return Err(invalid("grid", "dispersion result and kernel must live on the same grid"));
        }
        let h = 0.5 * mesh.dx();
        let alpha = disp.alpha;
        let nv = grid.len();
        let mut decay = vec![0.0; nv];
        let mut transient = vec![0.0; nv];
        let mut qfac = vec![0.0; nv];
        let mut wkg = vec![0.0; nv];
        for j in 0..nv {
            let v = grid.nodes()[j];
            let g = disp.g[j];
            let lam = 1.0 / g + epsilon;
            let s = lam / v.abs();
            decay[j] = (-s * h).exp();
            transient[j] = if v > 0.0 {
                mean_factor(alpha + s, h) / mean_factor(alpha, h)
            } else {
                mean_factor(s - alpha, h) / mean_factor(-alpha, h)
            };
            qfac[j] = 1.0 / (g * lam);
            wkg[j] = grid.weights()[j] * kernel.kplus()[j] * g;
        }
        Ok(Self {
            grid: grid.clone(),
            kernel: kernel.clone(),
            disp: disp.clone(),
            mesh: mesh.clone(),
            epsilon,
            h,
            cells: 2 * mesh.len(),
            decay,
            transient,
            qfac,
            wkg,
            lu: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn dispersion(&self) -> &DispersionResult {
        &self.disp
    }

    pub fn mesh(&self) -> &SpatialMesh {
        &self.mesh
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Number of lattice cells (twice the mesh cell count).
    pub fn lattice_cells(&self) -> usize {
        self.cells
    }

    pub fn lattice(&self) -> Vec<f64> {
        (0..=self.cells).map(|k| k as f64 * self.h).collect()
    }

    fn check_inflow(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.grid.n_half() {
            return Err(invalid(
                "phi",
                format!("{} inflow values for {} incoming nodes", phi.len(), self.grid.n_half()),
            ));
        }
        if phi.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("inflow data".into()));
        }
        Ok(())
    }

    /// Integrates every characteristic against the cell moments `a` and
    /// returns `u` together with the new weighted moments.
    pub fn sweep(&self, a: &[f64], phi: &[f64]) -> Sweep {
        let nv = self.grid.len();
        let m = self.cells;
        let nh = self.grid.n_half();
        let mut u = vec![0.0; (m + 1) * nv];
        let mut a_new = vec![0.0; m];
        for j in 0..nv {
            let (e, r, qf, wkg) = (self.decay[j], self.transient[j], self.qfac[j], self.wkg[j]);
            if j >= nh {
                let mut cur = phi[j - nh];
                u[j] = cur;
                for k in 0..m {
                    let q = a[k] * qf;
                    a_new[k] += wkg * (q + (cur - q) * r);
                    cur = q + (cur - q) * e;
                    u[(k + 1) * nv + j] = cur;
                }
            } else {
                let mut cur = a[m - 1] * qf;
                u[m * nv + j] = cur;
                for k in (0..m).rev() {
                    let q = a[k] * qf;
                    a_new[k] += wkg * (q + (cur - q) * r);
                    cur = q + (cur - q) * e;
                    u[k * nv + j] = cur;
                }
            }
        }
        Sweep { u, a: a_new }
    }

    /// Pointwise moment `Σ w K₊ G u` at every lattice point.
    pub fn moment(&self, u: &[f64]) -> Vec<f64> {
        let nv = self.grid.len();
        u.chunks(nv)
            .map(|row| row.iter().zip(&self.wkg).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn initial_moment(&self, phi: &[f64]) -> f64 {
        let nh = self.grid.n_half();
        let (num, den) = (0..nh).fold((0.0, 0.0), |(n, d), i| {
            (n + self.wkg[nh + i] * phi[i], d + self.wkg[nh + i])
        });
        num / den
    }

    fn factorization(&self) -> Result<&nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
        self.lu
            .get_or_init(|| {
                let m = self.cells;
                let zero_phi = vec![0.0; self.grid.n_half()];
                let mut mat = DMatrix::<f64>::identity(m, m);
                let mut unit = vec![0.0; m];
                for k in 0..m {
                    unit[k] = 1.0;
                    let col = self.sweep(&unit, &zero_phi).a;
                    for (i, c) in col.iter().enumerate() {
                        mat[(i, k)] -= c;
                    }
                    unit[k] = 0.0;
                }
                let lu = mat.lu();
                if lu.is_invertible() {
                    Some(lu)
                } else {
                    None
                }
            })
            .as_ref()
            .ok_or(Error::Singular("half-space moment system"))
    }

    /// Solves the half-space problem with inflow `phi` (positive nodes).
    pub fn solve(&self, phi: &[f64], opts: &MilneOptions) -> Result<MilneSolution> {
        self.solve_from(phi, None, opts)
    }

    /// As [`solve`](Self::solve), warm-starting source iteration from `a0`.
    pub fn solve_from(&self, phi: &[f64], a0: Option<&[f64]>, opts: &MilneOptions) -> Result<MilneSolution> {
        self.check_inflow(phi)?;
        if opts.epsilon != self.epsilon {
            return Err(invalid("epsilon", "options disagree with the precomputed regularization"));
        }
        let m = self.cells;
        let (a, sweep, iterations, residual) = match opts.method {
            MilneMethod::SourceIteration => {
                let mut a = match a0 {
                    Some(a0) if a0.len() == m => a0.to_vec(),
                    Some(_) => return Err(invalid("a0", "warm start has the wrong length")),
                    None => vec![self.initial_moment(phi); m],
                };
                let mut it = 0;
                loop {
                    it += 1;
                    let s = self.sweep(&a, phi);
                    let res = s
                        .a
                        .iter()
                        .zip(&a)
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max);
                    if !res.is_finite() {
                        return Err(Error::NonFinite("source iteration".into()));
                    }
                    if res < opts.tol {
                        break (a, s, it, res);
                    }
                    if it >= opts.max_iter {
                        return Err(Error::NotConverged {
                            what: "half-space source iteration",
                            iterations: it,
                            residual: res,
                        });
                    }
                    a = s.a;
                }
            }
            MilneMethod::Direct => {
                let lu = self.factorization()?;
                let rhs = self.sweep(&vec![0.0; m], phi).a;
                let a = lu
                    .solve(&DVector::from_vec(rhs))
                    .ok_or(Error::Singular("half-space moment system"))?;
                let a: Vec<f64> = a.iter().copied().collect();
                let s = self.sweep(&a, phi);
                let res = s
                    .a
                    .iter()
                    .zip(&a)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                (a, s, 1, res)
            }
        };
        let sol = MilneSolution {
            u: sweep.u,
            inflow: phi.to_vec(),
            epsilon: self.epsilon,
            a,
            iterations,
            residual,
            x: self.lattice(),
            nv: self.grid.len(),
        };
        self.check_bounds(&sol)?;
        Ok(sol)
    }

    /// Maximum principle `min φ ≤ u ≤ max φ` (lower bound 0 when `ε > 0`).
    fn check_bounds(&self, sol: &MilneSolution) -> Result<()> {
        let hi = sol.inflow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = if self.epsilon > 0.0 {
            hi.min(0.0)
        } else {
            sol.inflow.iter().copied().fold(f64::INFINITY, f64::min)
        };
        let slack = 1e-10 * (hi.abs().max(lo.abs()));
        let nv = self.grid.len();
        for (idx, &u) in sol.u.iter().enumerate() {
            if !u.is_finite() {
                return Err(Error::NonFinite("half-space solution".into()));
            }
            if u < lo - slack || u > hi + slack {
                return Err(Error::Positivity {
                    cell: idx / nv,
                    velocity: idx % nv,
                    value: u,
                });
            }
        }
        Ok(())
    }

    /// Runs `levels` solves with `ε_k = 2^{-k} ε₀`, each warm-started from
    /// the previous moment, finishing with `ε = 0`. Returns the final
    /// solution and the source-iteration count of every level.
    pub fn continuation(
        kernel: &KernelSpec,
        grid: &VelocityGrid,
        disp: &DispersionResult,
        mesh: &SpatialMesh,
        phi: &[f64],
        eps0: f64,
        levels: usize,
        opts: &MilneOptions,
    ) -> Result<(MilneSolution, Vec<usize>)> {
        if !(eps0 > 0.0) {
            return Err(invalid("epsilon", "continuation needs a positive starting value"));
        }
        let mut a: Option<Vec<f64>> = None;
        let mut counts = Vec::with_capacity(levels + 1);
        let eps: Vec<f64> = (0..levels)
            .map(|k| eps0 * 0.5f64.powi(k as i32))
            .chain(std::iter::once(0.0))
            .collect();
        let mut last = None;
        for e in eps {
            let milne = Milne::new(kernel, grid, disp, mesh, e)?;
            let o = MilneOptions {
                epsilon: e,
                method: MilneMethod::SourceIteration,
                ..opts.clone()
            };
            let sol = milne.solve_from(phi, a.as_deref(), &o)?;
            counts.push(sol.iterations);
            a = Some(sol.a.clone());
            last = Some(sol);
        }
        Ok((last.expect("at least the ε = 0 level runs"), counts))
    }

    /// Outgoing trace `u(0, v)` on the negative nodes, in node order.
    pub fn albedo(&self, sol: &MilneSolution) -> Vec<f64> {
        sol.row(0)[..self.grid.n_half()].to_vec()
    }

    /// Reflected albedo `(B̃φ)(w) = G(−w)/G(w) · u(0, −w)`, `w > 0`.
    pub fn b_operator(&self, phi: &[f64], opts: &MilneOptions) -> Result<Vec<f64>> {
        let sol = self.solve(phi, opts)?;
        Ok(self.reflect(&sol))
    }

    fn reflect(&self, sol: &MilneSolution) -> Vec<f64> {
        let nh = self.grid.n_half();
        let g = &self.disp.g;
        (0..nh)
            .map(|i| {
                let j = nh + i;
                let jm = self.grid.mirror(j);
                g[jm] / g[j] * sol.at(0, jm)
            })
            .collect()
    }

    /// Dense matrix of `B̃` on the incoming nodes, built column by column
    /// from the direct solver.
    pub fn b_matrix(&self) -> Result<DMatrix<f64>> {
        let nh = self.grid.n_half();
        let opts = MilneOptions {
            epsilon: self.epsilon,
            method: MilneMethod::Direct,
            ..MilneOptions::default()
        };
        let mut b = DMatrix::zeros(nh, nh);
        let mut e = vec![0.0; nh];
        for c in 0..nh {
            e[c] = 1.0;
            let img = self.b_operator(&e, &opts)?;
            for (r, v) in img.iter().enumerate() {
                b[(r, c)] = *v;
            }
            e[c] = 0.0;
        }
        Ok(b)
    }
}

#[derive(Debug, Clone)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 10_000,
        }
    }
}

/// Dominant eigenpair of `B̃` by normalized power iteration.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda: f64,
    /// Sup-normalized positive eigenvector on the incoming nodes.
    pub phi: Vec<f64>,
    pub iterations: usize,
    /// `max_i |(B̃φ)_i/φ_i − λ|` at exit.
    pub spread: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Power iteration `φ ← B̃φ/‖B̃φ‖∞` for any positive map `apply`.
pub fn power_iteration(
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
    phi0: &[f64],
    opts: &PowerOptions,
) -> Result<EigenPair> {
    let norm = phi0.iter().copied().fold(0.0, f64::max);
    if !(norm > 0.0) || phi0.iter().any(|&p| p < 0.0) {
        return Err(invalid("phi0", "starting vector must be nonnegative and nonzero"));
    }
    let mut phi: Vec<f64> = phi0.iter().map(|p| p / norm).collect();
    let mut spread = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let img = apply(&phi)?;
        if img.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(Error::NonFinite("power iterate lost positivity".into()));
        }
        let ratios: Vec<f64> = img.iter().zip(&phi).map(|(a, b)| a / b).collect();
        let lambda = median(ratios.clone());
        spread = ratios.iter().map(|r| (r - lambda).abs()).fold(0.0, f64::max);
        let n = img.iter().copied().fold(0.0, f64::max);
        let next: Vec<f64> = img.iter().map(|x| x / n).collect();
        let step = next
            .iter()
            .zip(&phi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        phi = next;
        if spread < opts.tol && step < opts.tol {
            return Ok(EigenPair {
                lambda,
                phi,
                iterations: it,
                spread,
            });
        }
    }
    Err(Error::NotConverged {
        what: "power iteration",
        iterations: opts.max_iter,
        residual: spread,
    })
}

/// Dominant eigenpair of the reflected albedo map, starting from `φ₀ ≡ 1`.
pub fn krein_rutman(milne: &Milne, opts: &PowerOptions) -> Result<EigenPair> {
    let b = milne.b_matrix()?;
    let ones = vec![1.0; milne.grid.n_half()];
    power_iteration(|p| Ok((&b * DVector::from_column_slice(p)).iter().copied().collect()), &ones, opts)
}

/// Symmetric stationary state on the box `[−L, L]`.
#[derive(Debug, Clone)]
pub struct StationaryState {
    /// Box mesh with twice the half-line cell count.
    pub mesh: SpatialMesh,
    pub grid: VelocityGrid,
    pub kernel: KernelSpec,
    pub alpha: f64,
    pub profile: Vec<f64>,
    pub beta: f64,
    /// `g[i * nv + j]` at box cell centers.
    pub g: Vec<f64>,
    /// Trace `g(0, ·)`.
    pub g0: Vec<f64>,
    /// `Σ w v² G g(0) / Σ w v² G²`.
    pub h: f64,
    pub eigenvalue: f64,
    /// `max(g e^{αx}/G, G e^{−αx}/g)` over `x ≥ 0`.
    pub sandwich: f64,
    /// `Σ w v g(0, v)`.
    pub boundary_flux: f64,
    pub milne: MilneSolution,
}

impl StationaryState {
    pub fn nv(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.grid.len() + j]
    }

    /// `ρ_g` per box cell.
    pub fn density(&self) -> Vec<f64> {
        self.g.chunks(self.grid.len()).map(|r| self.grid.sum(r)).collect()
    }

    pub fn mass(&self) -> f64 {
        self.density().iter().sum::<f64>() * self.mesh.dx()
    }
}

/// `Σ w v² G u / Σ w v² G²` for a velocity row of `u`.
pub(crate) fn h_of_row(row: &[f64], grid: &VelocityGrid, g: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..grid.len() {
        let v = grid.nodes()[j];
        let c = grid.weights()[j] * v * v * g[j] * g[j];
        num += c * row[j];
        den += c;
    }
    num / den
}

/// Solves the half-space problem with the Krein-Rutman inflow and reflects
/// it into the box.
pub fn assemble_stationary(milne: &Milne, pair: &EigenPair) -> Result<StationaryState> {
    let opts = MilneOptions {
        epsilon: milne.epsilon,
        method: MilneMethod::Direct,
        ..MilneOptions::default()
    };
    let sol = milne.solve(&pair.phi, &opts)?;
    stationary_from_solution(milne, sol, pair.lambda)
}

/// Builds the box state from an already solved half-space problem.
pub fn stationary_from_solution(milne: &Milne, sol: MilneSolution, eigenvalue: f64) -> Result<StationaryState> {
    let grid = &milne.grid;
    let nv = grid.len();
    let nx = milne.mesh.len();
    let alpha = milne.disp.alpha;
    let gp = &milne.disp.g;
    let mesh = SpatialMesh::centered_box(milne.mesh.length(), 2 * nx)?;
    let mut g = vec![0.0; 2 * nx * nv];
    let mut sandwich: f64 = 1.0;
    for k in 0..=2 * nx {
        let x = sol.x[k];
        for j in 0..nv {
            let u = sol.at(k, j);
            if !(u > 0.0) {
                return Err(Error::Positivity {
                    cell: k,
                    velocity: j,
                    value: u,
                });
            }
            sandwich = sandwich.max(u).max(1.0 / u);
            if k % 2 == 1 {
                let i = nx + k / 2;
                let val = (-alpha * x).exp() * gp[j] * u;
                g[i * nv + j] = val;
                g[mesh.mirror(i) * nv + grid.mirror(j)] = val;
            }
        }
    }
    let g0: Vec<f64> = (0..nv).map(|j| gp[j] * sol.at(0, j)).collect();
    let h = {
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..nv {
            let v = grid.nodes()[j];
            num += grid.weights()[j] * v * v * gp[j] * g0[j];
            den += grid.weights()[j] * v * v * gp[j] * gp[j];
        }
        num / den
    };
    let boundary_flux = (0..nv).map(|j| grid.weights()[j] * grid.nodes()[j] * g0[j]).sum();
    Ok(StationaryState {
        mesh,
        grid: grid.clone(),
        kernel: milne.kernel.clone(),
        alpha,
        profile: gp.clone(),
        beta: milne.disp.beta,
        g,
        g0,
        h,
        eigenvalue,
        sandwich,
        boundary_flux,
        milne: sol,
    })
}

/// Exponential approach of `u` to its constant `H(u)`.
#[derive(Debug, Clone)]
pub struct DecayDiagnostics {
    /// Lattice coordinates.
    pub x: Vec<f64>,
    /// `E(x) = Σ w v² G² (u − H)²`.
    pub e: Vec<f64>,
    /// `J(x) = Σ w v K₊ G² (u − H)²`.
    pub jflux: Vec<f64>,
    /// `Σ w v² G² u / Σ w v² G²` at every lattice point.
    pub h_profile: Vec<f64>,
    /// The constant used in `E` and `J`: the far-field value of `h_profile`.
    pub h_of_u: f64,
    /// `max_x |H(x) − H(u)|`.
    pub h_spread: f64,
    /// Decay rate `−d ln E/dx` fitted on the asymptotic window.
    pub fitted_rate: f64,
    /// Smallest prefactor with `E ≤ C₀ e^{−rate·x}` on the window.
    pub c0: f64,
    pub r_squared: f64,
    /// Lattice index range of the fit window.
    pub window: (usize, usize),
    /// `max |ΔE/Δx − (2αE − 2J)|` over interior points, centered differences.
    pub energy_identity_residual: f64,
}

/// Least-squares line `y = a + b x`; returns `(a, b, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return Err(Error::DegenerateFit(format!("{n} points")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((my - slope * mx, slope, r2))
}

/// Computes `E`, `J` and the fitted decay of `E` for a half-space solution.
pub fn decay_diagnostics(milne: &Milne, sol: &MilneSolution) -> Result<DecayDiagnostics> {
    let grid = &milne.grid;
    let nv = grid.len();
    let gp = &milne.disp.g;
    let alpha = milne.disp.alpha;
    let points = sol.points();
    let h_profile: Vec<f64> = (0..points).map(|k| h_of_row(sol.row(k), grid, gp)).collect();
    let h_of_u = h_profile[points - 1];
    let h_spread = h_profile.iter().map(|h| (h - h_of_u).abs()).fold(0.0, f64::max);
    let mut e = vec![0.0; points];
    let mut jflux = vec![0.0; points];
    let mut s2 = 0.0;
    for j in 0..nv {
        let v = grid.nodes()[j];
        s2 += grid.weights()[j] * v * v * gp[j] * gp[j];
    }
    for k in 0..points {
        for j in 0..nv {
            let v = grid.nodes()[j];
            let w = grid.weights()[j];
            let d = sol.at(k, j) - h_of_u;
            e[k] += w * v * v * gp[j] * gp[j] * d * d;
            jflux[k] += w * v * milne.kernel.kplus()[j] * gp[j] * gp[j] * d * d;
        }
    }
    let dx = milne.h;
    let energy_identity_residual = (1..points - 1)
        .map(|k| ((e[k + 1] - e[k - 1]) / (2.0 * dx) - (2.0 * alpha * e[k] - 2.0 * jflux[k])).abs())
        .fold(0.0, f64::max);

    let emax = e.iter().copied().fold(0.0, f64::max);
    let floor = 1e-14 * emax + s2 * h_spread * h_spread + 1e-300;
    let beta = milne.disp.beta;
    let first = sol.x.iter().position(|&x| x >= 1.0 / beta).unwrap_or(points);
    let last = points.saturating_sub(2 * 2 + 1); // last two mesh cells are four lattice cells
    let mut end = first;
    while end < last && e[end] > 100.0 * floor {
        end += 1;
    }
    if emax == 0.0 || end < first + 3 {
        return Err(Error::DegenerateFit(format!(
            "E above its noise floor on {} lattice points only",
            end.saturating_sub(first)
        )));
    }
    let xs = &sol.x[first..end];
    let ys: Vec<f64> = e[first..end].iter().map(|v| v.ln()).collect();
    let (icpt, slope, r_squared) = linear_fit(xs, &ys)?;
    let excess = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - (icpt + slope * x))
        .fold(0.0, f64::max);
    Ok(DecayDiagnostics {
        x: sol.x.clone(),
        e,
        jflux,
        h_profile,
        h_of_u,
        h_spread,
        fitted_rate: -slope,
        c0: (icpt + excess).exp(),
        r_squared,
        window: (first, end),
        energy_identity_residual,
    })
}

/// Everything needed downstream: dispersion data, half-space operator,
/// eigenpair and box state. `length` defaults to `10/β` when `None`.
pub fn stationary_state(
    kernel: &KernelSpec,
    grid: &VelocityGrid,
    disp: &DispersionResult,
    length: Option<f64>,
    nx: usize,
    power: &PowerOptions,
) -> Result<(Milne, EigenPair, StationaryState)> {
    stationary_state_with(kernel, grid, disp, length, nx, 0.0, power)
}

/// As [`stationary_state`] with absorption `ε ≥ 0` in the half-space problem.
pub fn stationary_state_with(
    kernel: &KernelSpec,
    grid: &VelocityGrid,
    disp: &DispersionResult,
    length: Option<f64>,
    nx: usize,
    epsilon: f64,
    power: &PowerOptions,
) -> Result<(Milne, EigenPair, StationaryState)> {
    let l = length.unwrap_or(10.0 / disp.beta);
    let mesh = SpatialMesh::half_line(l, nx)?;
    let milne = Milne::new(kernel, grid, disp, &mesh, epsilon)?;
    let pair = krein_rutman(&milne, power)?;
    let state = assemble_stationary(&milne, &pair)?;
    Ok((milne, pair, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::solve_alpha;
    use crate::grids::Rule;

    fn setup(chi: f64, n_half: usize, nx: usize, l: f64, eps: f64) -> Milne {
        let grid = VelocityGrid::new(n_half, Rule::Gauss).unwrap();
        let kernel = KernelSpec::sign(chi, &grid).unwrap();
        let disp = solve_alpha(&kernel, &grid, 1e-12).unwrap();
        let mesh = SpatialMesh::half_line(l, nx).unwrap();
        Milne::new(&kernel, &grid, &disp, &mesh, eps).unwrap()
    }

    #[test]
    fn constants_reproduce_themselves() {
        let m = setup(0.5, 4, 20, 5.0, 0.0);
        let a = vec![0.7; m.lattice_cells()];
        let s = m.sweep(&a, &[0.7; 4]);
        assert!(s.u.iter().all(|u| (u - 0.7).abs() < 1e-14));
        assert!(s.a.iter().all(|u| (u - 0.7).abs() < 1e-14));
        let sol = m.solve(&[0.7; 4], &MilneOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn pure_attenuation() {
        let eps = 0.3;
        let m = setup(0.5, 4, 20, 5.0, eps);
        let phi = [1.0, 2.0, 0.5, 3.0];
        let s = m.sweep(&vec![0.0; m.lattice_cells()], &phi);
        let grid = m.grid().clone();
        let x = m.lattice();
        for (k, &xk) in x.iter().enumerate() {
            for j in 0..grid.len() {
                let v = grid.nodes()[j];
                let want = if v > 0.0 {
                    let lam = 1.0 / m.dispersion().g[j] + eps;
                    (-lam * xk / v).exp() * phi[j - 4]
                } else {
                    0.0
                };
                let got = s.u[k * grid.len() + j];
                assert!((got - want).abs() < 1e-13 * (1.0 + want), "{k} {j}: {got} {want}");
            }
        }
    }

    #[test]
    fn single_sweep_moment_at_origin() {
        let m = setup(0.5, 6, 20, 5.0, 0.0);
        let s = m.sweep(&vec![0.0; m.lattice_cells()], &[1.0; 6]);
        let grid = m.grid();
        let want: f64 = grid
            .positive()
            .map(|j| grid.weights()[j] * m.kernel().kplus()[j] * m.dispersion().g[j])
            .sum();
        assert!((m.moment(&s.u)[0] - want).abs() < 1e-15);
    }

    #[test]
    fn direct_matches_source_iteration() {
        let m = setup(0.5, 6, 40, 8.0, 0.0);
        let phi = [0.2, 1.0, 0.4, 0.9, 0.3, 0.6];
        let it = m.solve(&phi, &MilneOptions::default()).unwrap();
        let d = m
            .solve(&phi, &MilneOptions { method: MilneMethod::Direct, ..Default::default() })
            .unwrap();
        let diff = it.u.iter().zip(&d.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
        assert!(d.residual < 1e-13);
    }

    #[test]
    fn flux_is_exactly_conserved() {
        let m = setup(0.5, 8, 50, 10.0, 0.0);
        let phi: Vec<f64> = (0..8).map(|i| 1.0 + 0.1 * i as f64).collect();
        let sol = m
            .solve(&phi, &MilneOptions { method: MilneMethod::Direct, ..Default::default() })
            .unwrap();
        let grid = m.grid();
        let alpha = m.dispersion().alpha;
        let flux: Vec<f64> = (0..sol.points())
            .map(|k| {
                (-alpha * sol.x[k]).exp()
                    * (0..grid.len())
                        .map(|j| grid.weights()[j] * grid.nodes()[j] * m.dispersion().g[j] * sol.at(k, j))
                        .sum::<f64>()
            })
            .collect();
        let spread = flux.iter().map(|f| (f - flux[0]).abs()).fold(0.0, f64::max);
        assert!(spread < 1e-14, "{spread}");
    }

    #[test]
    fn albedo_of_constant_is_constant() {
        let m = setup(0.5, 6, 40, 8.0, 0.0);
        let sol = m.solve(&[1.0; 6], &MilneOptions::default()).unwrap();
        assert!(m.albedo(&sol).iter().all(|t| (t - 1.0).abs() < 1e-13));
    }

    #[test]
    fn b_matrix_matches_matrix_free() {
        let m = setup(0.5, 5, 40, 8.0, 0.0);
        let b = m.b_matrix().unwrap();
        let phi = [0.3, 0.8, 1.0, 0.1, 0.5];
        let direct = MilneOptions { method: MilneMethod::Direct, ..Default::default() };
        let img = m.b_operator(&phi, &direct).unwrap();
        let prod = &b * DVector::from_column_slice(&phi);
        for i in 0..5 {
            assert!((prod[i] - img[i]).abs() < 1e-13);
            assert!(img[i] > 0.0);
        }
        assert!(b.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn eigenvalue_is_one_and_state_symmetric() {
        let grid = VelocityGrid::new(8, Rule::Gauss).unwrap();
        let kernel = KernelSpec::sign(0.5, &grid).unwrap();
        let disp = solve_alpha(&kernel, &grid, 1e-12).unwrap();
        let (_, pair, st) = stationary_state(&kernel, &grid, &disp, None, 100, &PowerOptions::default()).unwrap();
        assert!((pair.lambda - 1.0).abs() < 1e-10, "{}", pair.lambda);
        assert!(pair.phi.iter().all(|&p| p > 0.0));
        assert!(st.boundary_flux.abs() < 1e-10);
        let nv = grid.len();
        for i in 0..st.mesh.len() {
            for j in 0..nv {
                assert_eq!(st.at(i, j), st.at(st.mesh.mirror(i), grid.mirror(j)));
            }
        }
        assert!(st.sandwich.is_finite() && st.sandwich >= 1.0);
    }

    #[test]
    fn continuation_matches_plain_solve() {
        let grid = VelocityGrid::new(4, Rule::Gauss).unwrap();
        let kernel = KernelSpec::sign(0.5, &grid).unwrap();
        let disp = solve_alpha(&kernel, &grid, 1e-12).unwrap();
        let mesh = SpatialMesh::half_line(6.0, 30).unwrap();
        let phi = [0.5, 1.0, 0.7, 0.2];
        let opts = MilneOptions::default();
        let (sol, counts) = Milne::continuation(&kernel, &grid, &disp, &mesh, &phi, 1.0, 6, &opts).unwrap();
        assert_eq!(counts.len(), 7);
        let plain = Milne::new(&kernel, &grid, &disp, &mesh, 0.0).unwrap().solve(&phi, &opts).unwrap();
        let diff = sol.u.iter().zip(&plain.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn fit_recovers_exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|t| 2.0 - 0.5 * t).collect();
        let (a, b, r2) = linear_fit(&x, &y).unwrap();
        assert!((a - 2.0).abs() < 1e-14 && (b + 0.5).abs() < 1e-14 && (r2 - 1.0).abs() < 1e-14);
        assert!(linear_fit(&x[..2], &y[..2]).is_err());
    }
}
