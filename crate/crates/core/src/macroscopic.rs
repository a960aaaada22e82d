//! Macroscopic limits: the drift-diffusion equation with the kinetic
//! diffusivity, the weak-bias equation, and the two-velocity model.

use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grids::{Side, SpatialMesh};
use crate::hypo::pseudo_inverse;
use crate::milne::{linear_fit, StationaryState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    ModifiedEntropy,
    WeakBias,
    Cattaneo,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modified-entropy" | "modified-entropy-limit" => Ok(Self::ModifiedEntropy),
            "weak-bias" => Ok(Self::WeakBias),
            "cattaneo" => Ok(Self::Cattaneo),
            _ => Err(invalid("variant", format!("unknown variant `{s}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ModifiedEntropy => "modified-entropy",
            Self::WeakBias => "weak-bias",
            Self::Cattaneo => "cattaneo",
        })
    }
}

/// Cellwise diffusivity of the drift-diffusion limit.
#[derive(Debug, Clone)]
pub struct DiffusivityProfile {
    pub x: Vec<f64>,
    /// Closed form.
    pub d: Vec<f64>,
    /// `2 Z Var_p(vg)` with `p = 1/(Z(Kg+λ))`.
    pub d_variance: Vec<f64>,
    /// `λ = Σ w g K`.
    pub lambda: Vec<f64>,
    /// `Z = Σ w / (Kg + λ)`.
    pub z: Vec<f64>,
}

fn cell_rates(state: &StationaryState) -> Result<Vec<f64>> {
    let sides = state.mesh.sides()?;
    Ok(sides
        .iter()
        .flat_map(|&s| state.kernel.on(s).iter().copied())
        .collect())
}

pub fn diffusivity(state: &StationaryState) -> Result<DiffusivityProfile> {
    let grid = &state.grid;
    let nv = grid.len();
    let (v, w) = (grid.nodes(), grid.weights());
    let rates = cell_rates(state)?;
    if let Some(k) = state.g.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::Positivity {
            cell: k / nv,
            velocity: k % nv,
            value: state.g[k],
        });
    }
    let nx = state.mesh.len();
    let mut out = DiffusivityProfile {
        x: state.mesh.centers().to_vec(),
        d: Vec::with_capacity(nx),
        d_variance: Vec::with_capacity(nx),
        lambda: Vec::with_capacity(nx),
        z: Vec::with_capacity(nx),
    };
    for i in 0..nx {
        let g = &state.g[i * nv..(i + 1) * nv];
        let k = &rates[i * nv..(i + 1) * nv];
        let lam: f64 = (0..nv).map(|j| w[j] * g[j] * k[j]).sum();
        let (mut z, mut s2, mut s1) = (0.0, 0.0, 0.0);
        for j in 0..nv {
            let den = k[j] * g[j] + lam;
            z += w[j] / den;
            s2 += w[j] * v[j] * v[j] * g[j] * g[j] / den;
            s1 += w[j] * v[j] * g[j] / den;
        }
        let closed = 2.0 * s2 - 2.0 * s1 * s1 / z;
        let (mut m1, mut m2) = (0.0, 0.0);
        for j in 0..nv {
            let p = 1.0 / (z * (k[j] * g[j] + lam));
            let y = v[j] * g[j];
            m1 += w[j] * p * y;
            m2 += w[j] * p * y * y;
        }
        out.d.push(closed);
        out.d_variance.push(2.0 * z * (m2 - m1 * m1));
        out.lambda.push(lam);
        out.z.push(z);
    }
    if let Some(i) = out.d.iter().position(|&d| !(d > 0.0)) {
        return Err(invalid("state", format!("diffusivity not positive in cell {i}")));
    }
    Ok(out)
}

/// `−Σ w v f` with `f = L⁻¹ (1 − Π)(v g)` per cell.
pub fn reconstructed_diffusivity(state: &StationaryState) -> Result<Vec<f64>> {
    let grid = &state.grid;
    let nv = grid.len();
    let v = grid.nodes();
    let rates = cell_rates(state)?;
    let mut h = vec![0.0; state.g.len()];
    for (i, g) in state.g.chunks(nv).enumerate() {
        let rho = grid.sum(g);
        let flux: f64 = g.iter().zip(v).zip(grid.weights()).map(|((g, v), w)| w * v * g).sum();
        for j in 0..nv {
            h[i * nv + j] = v[j] * g[j] - flux / rho * g[j];
        }
    }
    let f = pseudo_inverse(grid, &state.g, &rates, &h)?;
    Ok(f.chunks(nv)
        .map(|row| -row.iter().zip(v).zip(grid.weights()).map(|((f, v), w)| w * v * f).sum::<f64>())
        .collect())
}

/// A one-dimensional conservative drift-diffusion problem on a box.
#[derive(Debug, Clone)]
pub struct DriftDiffusionProblem {
    pub variant: Variant,
    pub mesh: SpatialMesh,
    /// Cell values of `D` (modified-entropy) or the constant `1/12` (weak-bias).
    pub diffusivity: Vec<f64>,
    /// `ρ_g` or `e^{−3|x|}`, positive and even.
    pub reference: Vec<f64>,
    pub chi: Option<f64>,
}

/// Tridiagonal generator, `(Mρ)_i = lower_i ρ_{i−1} + diag_i ρ_i + upper_i ρ_{i+1}`.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.diag.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i > 0 {
                m[(i, i - 1)] = self.lower[i];
            }
            if i + 1 < n {
                m[(i, i + 1)] = self.upper[i];
            }
        }
        m
    }

    /// One implicit Euler step in increment form, `(I − dt M) δ = dt M x`,
    /// so round-off scales with the update rather than with `x`.
    pub fn implicit_step(&self, dt: f64, x: &[f64]) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = self.apply(x).iter().map(|r| dt * r).collect();
        let delta = self.solve_implicit(dt, &rhs)?;
        Ok(x.iter().zip(delta).map(|(a, d)| a + d).collect())
    }

    /// Solves `(I − dt M) x = b` by the Thomas algorithm.
    pub fn solve_implicit(&self, dt: f64, b: &[f64]) -> Result<Vec<f64>> {
        let n = b.len();
        let a: Vec<f64> = self.lower.iter().map(|x| -dt * x).collect();
        let d: Vec<f64> = self.diag.iter().map(|x| 1.0 - dt * x).collect();
        let c: Vec<f64> = self.upper.iter().map(|x| -dt * x).collect();
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        let mut denom = d[0];
        if denom == 0.0 {
            return Err(Error::Singular("implicit drift-diffusion step"));
        }
        cp[0] = c[0] / denom;
        dp[0] = b[0] / denom;
        for i in 1..n {
            denom = d[i] - a[i] * cp[i - 1];
            if denom == 0.0 {
                return Err(Error::Singular("implicit drift-diffusion step"));
            }
            cp[i] = c[i] / denom;
            dp[i] = (b[i] - a[i] * dp[i - 1]) / denom;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = dp[i] - cp[i] * x[i + 1];
        }
        Ok(x)
    }
}

/// Density series of a drift-diffusion run.
#[derive(Debug, Clone)]
pub struct DensityTrajectory {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub rho: Vec<f64>,
    pub mass_drift: f64,
    /// `max |F|` over faces at the final time.
    pub flux_residual: f64,
    pub steps: usize,
}

impl DriftDiffusionProblem {
    /// Limit with the kinetic diffusivity and `ρ_ref = ρ_g`, on the mesh of `state`.
    pub fn modified_entropy(state: &StationaryState) -> Result<Self> {
        let prof = diffusivity(state)?;
        Ok(Self {
            variant: Variant::ModifiedEntropy,
            mesh: state.mesh.clone(),
            diffusivity: prof.d,
            reference: state.density(),
            chi: state.kernel.chi,
        })
    }

    /// Weak-bias limit in rescaled variables on `[−length, length]`.
    pub fn weak_bias(length: f64, nx: usize) -> Result<Self> {
        let mesh = SpatialMesh::centered_box(length, nx)?;
        mesh.sides()?;
        let reference = mesh.centers().iter().map(|x| (-3.0 * x.abs()).exp()).collect();
        Ok(Self {
            variant: Variant::WeakBias,
            diffusivity: vec![1.0 / 12.0; nx],
            reference,
            mesh,
            chi: None,
        })
    }

    pub fn len(&self) -> usize {
        self.mesh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mesh.len() == 0
    }

    /// Sign of `x` at interior face `i+½`, zero on the face at the origin.
    fn face_sign(&self, i: usize) -> f64 {
        let xs = self.mesh.centers();
        let s = xs[i].signum() + xs[i + 1].signum();
        0.5 * s
    }

    /// Matrix of the interior face fluxes, `F_{i+½} = a_i ρ_i + b_i ρ_{i+1}`.
    fn face_coefficients(&self) -> Vec<(f64, f64)> {
        let n = self.len();
        let dx = self.mesh.dx();
        (0..n - 1)
            .map(|i| match self.variant {
                Variant::WeakBias => {
                    let s = self.face_sign(i);
                    let diff = 1.0 / (12.0 * dx);
                    (-diff + 0.125 * s, diff + 0.125 * s)
                }
                _ => {
                    let d = 0.5 * (self.diffusivity[i] + self.diffusivity[i + 1]);
                    (-d / (dx * self.reference[i]), d / (dx * self.reference[i + 1]))
                }
            })
            .collect()
    }

    /// Fluxes at all `nx + 1` faces, walls included (zero there).
    pub fn face_flux(&self, rho: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len() + 1];
        for (i, (a, b)) in self.face_coefficients().into_iter().enumerate() {
            out[i + 1] = a * rho[i] + b * rho[i + 1];
        }
        out
    }

    /// `∂ₜρ = (F_{i+½} − F_{i−½}) / Δx` as a tridiagonal matrix.
    pub fn generator(&self) -> Tridiagonal {
        let n = self.len();
        let dx = self.mesh.dx();
        let mut t = Tridiagonal {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        };
        for (i, (a, b)) in self.face_coefficients().into_iter().enumerate() {
            // face i+½ adds to cell i, subtracts from cell i+1
            t.diag[i] += a / dx;
            t.upper[i] += b / dx;
            t.lower[i + 1] -= a / dx;
            t.diag[i + 1] -= b / dx;
        }
        t
    }

    pub fn mass(&self, rho: &[f64]) -> f64 {
        self.mesh.dx() * rho.iter().sum::<f64>()
    }

    fn check_initial(&self, rho0: &[f64]) -> Result<()> {
        if rho0.len() != self.len() {
            return Err(invalid("rho0", "length does not match the mesh"));
        }
        if rho0.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(invalid("rho0", "must be finite and nonnegative"));
        }
        if !(self.mass(rho0) > 0.0) {
            return Err(invalid("rho0", "must have positive mass"));
        }
        Ok(())
    }

    /// Implicit Euler up to `t_end` with step `dt`.
    pub fn solve(&self, rho0: &[f64], t_end: f64, dt: f64) -> Result<DensityTrajectory> {
        self.check_initial(rho0)?;
        if !(dt > 0.0 && t_end > 0.0) {
            return Err(invalid("dt", "time step and horizon must be positive"));
        }
        let gen = self.generator();
        let steps = (t_end / dt).ceil() as usize;
        let h = t_end / steps as f64;
        let m0 = self.mass(rho0);
        let mut rho = rho0.to_vec();
        let mut times = vec![0.0];
        let mut mass = vec![m0];
        for s in 1..=steps {
            rho = gen.implicit_step(h, &rho)?;
            times.push(s as f64 * h);
            mass.push(self.mass(&rho));
        }
        self.finish(rho, times, mass, steps)
    }

    /// Marches with growing implicit steps until `max |F| < tol · mass / L`.
    pub fn steady_state(&self, rho0: &[f64], tol: f64, max_steps: usize) -> Result<DensityTrajectory> {
        self.check_initial(rho0)?;
        let gen = self.generator();
        let m0 = self.mass(rho0);
        let scale = m0 / self.mesh.length();
        let dx = self.mesh.dx();
        let dmax = self.diffusivity.iter().cloned().fold(0.0, f64::max);
        let mut dt = 0.1 * dx * dx / dmax;
        // a few diffusive times; longer steps only amplify round-off in the mass
        let dt_max = self.mesh.length().powi(2) / dmax;
        let mut t = 0.0;
        let mut rho = rho0.to_vec();
        let mut times = vec![0.0];
        let mut mass = vec![m0];
        for s in 1..=max_steps {
            rho = gen.implicit_step(dt, &rho)?;
            t += dt;
            times.push(t);
            mass.push(self.mass(&rho));
            let worst = self.face_flux(&rho).iter().map(|f| f.abs()).fold(0.0, f64::max);
            if worst < tol * scale {
                return self.finish(rho, times, mass, s);
            }
            dt = (dt * 2.0).min(dt_max);
        }
        let worst = self.face_flux(&rho).iter().map(|f| f.abs()).fold(0.0, f64::max);
        Err(Error::NotConverged {
            what: "drift-diffusion steady state",
            iterations: max_steps,
            residual: worst / scale,
        })
    }

    fn finish(&self, rho: Vec<f64>, times: Vec<f64>, mass: Vec<f64>, steps: usize) -> Result<DensityTrajectory> {
        if rho.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("drift-diffusion density".into()));
        }
        let m0 = mass[0];
        let mass_drift = mass.iter().map(|m| (m - m0).abs() / m0).fold(0.0, f64::max);
        let flux_residual = self.face_flux(&rho).iter().map(|f| f.abs()).fold(0.0, f64::max);
        Ok(DensityTrajectory {
            times,
            mass,
            rho,
            mass_drift,
            flux_residual,
            steps,
        })
    }

    /// `max |ρ/m(ρ) − ρ_ref/m(ρ_ref)|` relative to the peak of the normalized reference.
    pub fn normalized_sup_error(&self, rho: &[f64]) -> f64 {
        let (m, mr) = (self.mass(rho), self.mass(&self.reference));
        let peak = self.reference.iter().cloned().fold(0.0, f64::max) / mr;
        rho.iter()
            .zip(&self.reference)
            .map(|(a, b)| (a / m - b / mr).abs())
            .fold(0.0, f64::max)
            / peak
    }
}

/// State of the two-velocity model.
#[derive(Debug, Clone)]
pub struct CattaneoState {
    pub x: Vec<f64>,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub time: f64,
    pub steps: usize,
    pub mass_drift: f64,
    /// `max |f⁺_i − f⁻_{i+1}|` over faces, relative to `mass / L`.
    pub flux_residual: f64,
}

/// Explicit upwind solver for `∂ₜf± ± ∂ₓf± = ±((1 − χs) f⁻ − (1 + χs) f⁺)`.
#[derive(Debug, Clone)]
pub struct Cattaneo {
    pub chi: f64,
    pub mesh: SpatialMesh,
    sides: Vec<Side>,
}

impl Cattaneo {
    pub fn new(chi: f64, mesh: SpatialMesh) -> Result<Self> {
        if !(chi > 0.0 && chi < 1.0) {
            return Err(invalid("chi", format!("must lie in (0, 1), got {chi}")));
        }
        let sides = mesh.sides()?;
        Ok(Self { chi, mesh, sides })
    }

    fn sign(&self, i: usize) -> f64 {
        match self.sides[i] {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }

    pub fn mass(&self, plus: &[f64], minus: &[f64]) -> f64 {
        self.mesh.dx() * (plus.iter().sum::<f64>() + minus.iter().sum::<f64>())
    }

    pub fn time_step(&self, cfl: f64) -> Result<f64> {
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(invalid("cfl", format!("must lie in (0, 1], got {cfl}")));
        }
        Ok((cfl * self.mesh.dx()).min(0.5 / (1.0 + self.chi)))
    }

    fn step(&self, p: &mut Vec<f64>, m: &mut Vec<f64>, dt: f64) {
        let n = p.len();
        let r = dt / self.mesh.dx();
        let mut np = vec![0.0; n];
        let mut nm = vec![0.0; n];
        for i in 0..n {
            // reflected inflow at the walls
            let p_in = if i == 0 { m[0] } else { p[i - 1] };
            let m_in = if i + 1 == n { p[n - 1] } else { m[i + 1] };
            let s = self.sign(i);
            let exchange = (1.0 - self.chi * s) * m[i] - (1.0 + self.chi * s) * p[i];
            np[i] = p[i] - r * (p[i] - p_in) + dt * exchange;
            nm[i] = m[i] - r * (m[i] - m_in) - dt * exchange;
        }
        *p = np;
        *m = nm;
    }

    fn face_residual(&self, p: &[f64], m: &[f64]) -> f64 {
        let n = p.len();
        let scale = self.mass(p, m) / self.mesh.length();
        (0..n - 1).map(|i| (p[i] - m[i + 1]).abs()).fold(0.0, f64::max) / scale
    }

    fn wrap(&self, p: Vec<f64>, m: Vec<f64>, time: f64, steps: usize, m0: f64) -> Result<CattaneoState> {
        if p.iter().chain(&m).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("two-velocity state".into()));
        }
        let flux_residual = self.face_residual(&p, &m);
        let mass_drift = (self.mass(&p, &m) - m0).abs() / m0;
        Ok(CattaneoState {
            x: self.mesh.centers().to_vec(),
            plus: p,
            minus: m,
            time,
            steps,
            mass_drift,
            flux_residual,
        })
    }

    fn check(&self, p: &[f64], m: &[f64]) -> Result<f64> {
        let n = self.mesh.len();
        if p.len() != n || m.len() != n {
            return Err(invalid("f0", "length does not match the mesh"));
        }
        if p.iter().chain(m).any(|&x| !(x >= 0.0)) {
            return Err(invalid("f0", "must be nonnegative"));
        }
        let m0 = self.mass(p, m);
        if !(m0 > 0.0) {
            return Err(invalid("f0", "must have positive mass"));
        }
        Ok(m0)
    }

    pub fn solve(&self, plus0: &[f64], minus0: &[f64], t_end: f64, cfl: f64) -> Result<CattaneoState> {
        let m0 = self.check(plus0, minus0)?;
        let dt = self.time_step(cfl)?;
        let steps = (t_end / dt).ceil() as usize;
        let h = t_end / steps as f64;
        let (mut p, mut m) = (plus0.to_vec(), minus0.to_vec());
        for _ in 0..steps {
            self.step(&mut p, &mut m, h);
        }
        self.wrap(p, m, t_end, steps, m0)
    }

    /// Marches from uniform data until the face flux residual drops below `tol`.
    pub fn steady_state(&self, cfl: f64, tol: f64, max_steps: usize) -> Result<CattaneoState> {
        let n = self.mesh.len();
        let c = 0.5 / self.mesh.length();
        let (mut p, mut m) = (vec![c; n], vec![c; n]);
        let m0 = self.mass(&p, &m);
        let dt = self.time_step(cfl)?;
        let mut steps = 0;
        while steps < max_steps {
            for _ in 0..100 {
                self.step(&mut p, &mut m, dt);
            }
            steps += 100;
            if self.face_residual(&p, &m) < tol {
                return self.wrap(p, m, steps as f64 * dt, steps, m0);
            }
        }
        Err(Error::NotConverged {
            what: "two-velocity steady state",
            iterations: steps,
            residual: self.face_residual(&p, &m),
        })
    }
}

/// Slope and `R²` of `ln ρ` against `x` over cells with `lo ≤ x ≤ hi`.
pub fn log_slope(x: &[f64], rho: &[f64], lo: f64, hi: f64) -> Result<(f64, f64)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(rho)
        .filter(|(x, r)| **x >= lo && **x <= hi && **r > 0.0)
        .map(|(x, r)| (*x, r.ln()))
        .unzip();
    if xs.len() < 4 {
        return Err(Error::DegenerateFit(format!("only {} cells in [{lo}, {hi}]", xs.len())));
    }
    let (_, b, r2) = linear_fit(&xs, &ys)?;
    Ok((b, r2))
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub chi: f64,
    pub alpha: f64,
    pub kinetic_slope: f64,
    pub modified_entropy_slope: f64,
    /// In rescaled variables (`−3` expected).
    pub weak_bias_slope_rescaled: f64,
    /// In original variables (`−3χ` expected).
    pub weak_bias_slope: f64,
    pub three_chi: f64,
    pub ratio: f64,
    pub window: (f64, f64),
}

/// Fits tail slopes on the outer half of `x > 0`. The weak-bias state is
/// solved on `[−weak_length, weak_length]` in rescaled variables.
pub fn tail_compare(state: &StationaryState, weak_length: f64, weak_nx: usize) -> Result<TailReport> {
    let chi = state
        .kernel
        .chi
        .ok_or_else(|| invalid("kernel", "tail comparison needs a sign kernel with known chi"))?;
    let l = state.mesh.length();
    let window = (0.5 * l, l);
    let x = state.mesh.centers();
    let rho_g = state.density();
    let (kinetic_slope, _) = log_slope(x, &rho_g, window.0, window.1)?;

    let me = DriftDiffusionProblem::modified_entropy(state)?;
    let flat = vec![1.0; me.len()];
    let steady = me.steady_state(&flat, 1e-10, 10_000)?;
    let (modified_entropy_slope, _) = log_slope(x, &steady.rho, window.0, window.1)?;

    let wb = DriftDiffusionProblem::weak_bias(weak_length, weak_nx)?;
    let steady = wb.steady_state(&vec![1.0; weak_nx], 1e-10, 10_000)?;
    let (weak_bias_slope_rescaled, _) =
        log_slope(wb.mesh.centers(), &steady.rho, 0.5 * weak_length, weak_length)?;

    Ok(TailReport {
        chi,
        alpha: state.alpha,
        kinetic_slope,
        modified_entropy_slope,
        weak_bias_slope_rescaled,
        weak_bias_slope: chi * weak_bias_slope_rescaled,
        three_chi: 3.0 * chi,
        ratio: state.alpha / (3.0 * chi),
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::solve_alpha;
    use crate::grids::{KernelSpec, Rule, VelocityGrid};
    use crate::milne::{stationary_state, PowerOptions};

    fn state(chi: f64, nx: usize) -> StationaryState {
        let grid = VelocityGrid::new(8, Rule::Gauss).unwrap();
        let kernel = KernelSpec::sign(chi, &grid).unwrap();
        let disp = solve_alpha(&kernel, &grid, 1e-12).unwrap();
        stationary_state(&kernel, &grid, &disp, None, nx, &PowerOptions::default()).unwrap().2
    }

    #[test]
    fn diffusivity_forms_agree_and_are_even() {
        let st = state(0.5, 80);
        let p = diffusivity(&st).unwrap();
        let n = p.d.len();
        for i in 0..n {
            assert!((p.d[i] - p.d_variance[i]).abs() <= 1e-12 * p.d[i]);
            assert!((p.d[i] - p.d[n - 1 - i]).abs() <= 1e-12 * p.d[i]);
        }
        let rec = reconstructed_diffusivity(&st).unwrap();
        for i in 0..n {
            assert!((rec[i] - p.d[i]).abs() <= 1e-9 * p.d[i], "{} {}", rec[i], p.d[i]);
        }
    }

    #[test]
    fn weak_bias_discrete_steady_state_is_geometric() {
        let wb = DriftDiffusionProblem::weak_bias(4.0, 80).unwrap();
        let st = wb.steady_state(&vec![1.0; 80], 1e-12, 10_000).unwrap();
        let dx = wb.mesh.dx();
        let r = (1.0 - 1.5 * dx) / (1.0 + 1.5 * dx);
        for i in 40..79 {
            assert!((st.rho[i + 1] / st.rho[i] - r).abs() < 1e-8);
        }
        assert!((st.rho[39] - st.rho[40]).abs() < 1e-12 * st.rho[40]);
        assert!(st.mass_drift < 1e-13, "{} {}", st.mass_drift, st.steps);
    }

    #[test]
    fn modified_entropy_fixes_reference() {
        let st = state(0.5, 40);
        let me = DriftDiffusionProblem::modified_entropy(&st).unwrap();
        let traj = me.solve(&me.reference, 1.0, 0.1).unwrap();
        let scale = me.mass(&me.reference) / me.mesh.length();
        assert!(traj.flux_residual < 1e-14 * scale);
    }

    #[test]
    fn cattaneo_steady_ratio_matches_closed_form() {
        let chi = 0.5;
        let c = Cattaneo::new(chi, SpatialMesh::centered_box(4.0, 200).unwrap()).unwrap();
        let st = c.steady_state(0.5, 1e-10, 2_000_000).unwrap();
        let dx = c.mesh.dx();
        let r = (1.0 + (1.0 - chi) * dx) / (1.0 + (1.0 + chi) * dx);
        for i in 100..199 {
            assert!((st.plus[i + 1] / st.plus[i] - r).abs() < 1e-7, "{i}");
        }
        assert!(st.mass_drift < 1e-12);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::ModifiedEntropy, Variant::WeakBias, Variant::Cattaneo] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("other".parse::<Variant>().is_err());
    }
}
