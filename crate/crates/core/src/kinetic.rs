//! Explicit finite-volume solver for
//!
//! ```text
//! ∂ₜf + v ∂ₓf = Σ_{v'} w' K(x, v') f(x, v') − K(x, v) f(x, v)
//! ```
//!
//! on a box `[−L, L]` with specular walls. Transport is first-order upwind;
//! at a wall the outgoing flux of `v` re-enters as `−v`, so the wall fluxes
//! cancel pairwise and mass is conserved to round-off.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::grids::{KernelSpec, MeshKind, SpatialMesh, VelocityGrid};
use crate::milne::linear_fit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Forward Euler on the full right-hand side.
    Euler,
    /// Two-stage strong-stability-preserving Runge-Kutta.
    Heun,
    /// Half transport, full turning, half transport; Euler pieces.
    Strang,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "heun" => Ok(Scheme::Heun),
            "strang" => Ok(Scheme::Strang),
            other => Err(invalid("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

/// Phase-space field `f[i * nv + j]` at time `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticField {
    pub f: Vec<f64>,
    pub time: f64,
}

/// Box discretization with precomputed turning rates.
#[derive(Debug, Clone)]
pub struct Kinetic {
    mesh: SpatialMesh,
    grid: VelocityGrid,
    kernel: KernelSpec,
    /// `K(x_i, v_j)`, row-major.
    rates: Vec<f64>,
}

impl Kinetic {
    pub fn new(mesh: &SpatialMesh, grid: &VelocityGrid, kernel: &KernelSpec) -> Result<Self> {
        if mesh.kind() != MeshKind::Box {
            return Err(invalid("mesh", "the kinetic solver runs on a box mesh"));
        }
        let sides = mesh.sides()?;
        let rates = sides.iter().flat_map(|&s| kernel.on(s).iter().copied()).collect();
        Ok(Self {
            mesh: mesh.clone(),
            grid: grid.clone(),
            kernel: kernel.clone(),
            rates,
        })
    }

    pub fn mesh(&self) -> &SpatialMesh {
        &self.mesh
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// `K(x_i, v_j)`.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// `Σ_j w_j f_ij` per cell.
    pub fn density(&self, f: &[f64]) -> Vec<f64> {
        f.chunks(self.grid.len()).map(|r| self.grid.sum(r)).collect()
    }

    /// `Σ_ij Δx w_j f_ij`.
    pub fn mass(&self, f: &[f64]) -> f64 {
        self.mesh.dx() * self.density(f).iter().sum::<f64>()
    }

    /// Jump operator `Q(f)` using the rate on the side of each cell center.
    pub fn turning_rhs(&self, f: &[f64]) -> Vec<f64> {
        let nv = self.grid.len();
        let w = self.grid.weights();
        let mut out = vec![0.0; f.len()];
        for ((row, k), o) in f.chunks(nv).zip(self.rates.chunks(nv)).zip(out.chunks_mut(nv)) {
            let gain: f64 = (0..nv).map(|j| w[j] * k[j] * row[j]).sum();
            for j in 0..nv {
                o[j] = gain - k[j] * row[j];
            }
        }
        out
    }

    /// Upwind face fluxes `v f` for every velocity, `nx + 1` faces per
    /// velocity, including the specular wall faces.
    fn face_flux(&self, f: &[f64]) -> Vec<f64> {
        let nv = self.grid.len();
        let nx = self.mesh.len();
        let v = self.grid.nodes();
        let mut flux = vec![0.0; (nx + 1) * nv];
        for j in 0..nv {
            let jm = self.grid.mirror(j);
            if v[j] > 0.0 {
                flux[j] = v[j] * f[jm];
                for i in 0..nx {
                    flux[(i + 1) * nv + j] = v[j] * f[i * nv + j];
                }
            } else {
                for i in 0..nx {
                    flux[i * nv + j] = v[j] * f[i * nv + j];
                }
                flux[nx * nv + j] = v[j] * f[(nx - 1) * nv + jm];
            }
        }
        flux
    }

    /// `−(F_{i+½} − F_{i−½})/Δx`.
    pub fn transport_rhs(&self, f: &[f64]) -> Vec<f64> {
        let nv = self.grid.len();
        let flux = self.face_flux(f);
        let inv = 1.0 / self.mesh.dx();
        (0..f.len()).map(|idx| -(flux[idx + nv] - flux[idx]) * inv).collect()
    }

    /// Full right-hand side `−v ∂ₓf + Q(f)`.
    pub fn rhs(&self, f: &[f64]) -> Vec<f64> {
        let mut r = self.transport_rhs(f);
        for (a, b) in r.iter_mut().zip(self.turning_rhs(f)) {
            *a += b;
        }
        r
    }

    /// Largest stable transport step for the given CFL number.
    pub fn transport_limit(&self, cfl: f64) -> f64 {
        cfl * self.mesh.dx() / self.grid.max_speed()
    }

    /// `dt = min(cfl Δx / v_max, 0.5 / K_max)`.
    pub fn time_step(&self, cfl: f64) -> Result<f64> {
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(invalid("cfl", format!("must lie in (0, 1], got {cfl}")));
        }
        Ok(self.transport_limit(cfl).min(0.5 / self.kernel.kmax()))
    }

    /// One forward-Euler transport step.
    pub fn transport_step(&self, f: &[f64], dt: f64) -> Result<Vec<f64>> {
        if !(dt > 0.0) || dt > self.transport_limit(1.0) * (1.0 + 1e-12) {
            return Err(invalid("dt", format!("{dt} violates the transport CFL condition")));
        }
        let r = self.transport_rhs(f);
        Ok(f.iter().zip(r).map(|(a, b)| a + dt * b).collect())
    }

    fn axpy(f: &[f64], dt: f64, r: &[f64]) -> Vec<f64> {
        f.iter().zip(r).map(|(a, b)| a + dt * b).collect()
    }

    /// Advances one step of size `dt`.
    pub fn step(&self, f: &[f64], dt: f64, scheme: Scheme) -> Vec<f64> {
        match scheme {
            Scheme::Euler => Self::axpy(f, dt, &self.rhs(f)),
            Scheme::Heun => {
                let s1 = Self::axpy(f, dt, &self.rhs(f));
                let s2 = Self::axpy(&s1, dt, &self.rhs(&s1));
                f.iter().zip(s2).map(|(a, b)| 0.5 * (a + b)).collect()
            }
            Scheme::Strang => {
                let h = 0.5 * dt;
                let a = Self::axpy(f, h, &self.transport_rhs(f));
                let b = Self::axpy(&a, dt, &self.turning_rhs(&a));
                Self::axpy(&b, h, &self.transport_rhs(&b))
            }
        }
    }

    /// `‖−v ∂ₓg + Q(g)‖ / ‖g‖` in `L¹(dx dv)`, the equilibrium defect of `g`
    /// under the upwind discretization.
    pub fn stationary_residual(&self, g: &[f64]) -> f64 {
        let nv = self.grid.len();
        let w = self.grid.weights();
        let r = self.rhs(g);
        let norm = |f: &[f64]| -> f64 {
            f.iter()
                .enumerate()
                .map(|(idx, x)| w[idx % nv] * x.abs())
                .sum::<f64>()
        };
        norm(&r) / norm(g)
    }

    /// Steady upwind response to a per-cell gain `s`: for each velocity pair
    /// the specular loop through both walls is closed exactly.
    fn steady_response(&self, s: &[f64]) -> Vec<f64> {
        let nv = self.grid.len();
        let nx = self.mesh.len();
        let inv = 1.0 / self.mesh.dx();
        let v = self.grid.nodes();
        let mut f = vec![0.0; nx * nv];
        for j in self.grid.positive() {
            let jm = self.grid.mirror(j);
            let c = v[j] * inv;
            // forward sweep for +v as affine function p b + r of inflow b
            let (mut p, mut r) = (1.0, 0.0);
            let mut fp = vec![(0.0, 0.0); nx];
            for i in 0..nx {
                let d = c + self.rates[i * nv + j];
                p = c * p / d;
                r = (c * r + s[i]) / d;
                fp[i] = (p, r);
            }
            let (mut q, mut t) = fp[nx - 1];
            let mut fm = vec![(0.0, 0.0); nx];
            for i in (0..nx).rev() {
                let d = c + self.rates[i * nv + jm];
                q = c * q / d;
                t = (c * t + s[i]) / d;
                fm[i] = (q, t);
            }
            let (q0, t0) = fm[0];
            let b = t0 / (1.0 - q0);
            for i in 0..nx {
                f[i * nv + j] = fp[i].0 * b + fp[i].1;
                f[i * nv + jm] = fm[i].0 * b + fm[i].1;
            }
        }
        f
    }

    /// Exact null vector of the upwind operator, scaled to `mass`.
    pub fn discrete_equilibrium(&self, mass: f64) -> Result<Vec<f64>> {
        let nv = self.grid.len();
        let nx = self.mesh.len();
        let w = self.grid.weights();
        let mut p = DMatrix::<f64>::identity(nx, nx);
        let mut unit = vec![0.0; nx];
        for c in 0..nx {
            unit[c] = 1.0;
            let resp = self.steady_response(&unit);
            for i in 0..nx {
                let gain: f64 = (0..nv).map(|j| w[j] * self.rates[i * nv + j] * resp[i * nv + j]).sum();
                p[(i, c)] -= gain;
            }
            unit[c] = 0.0;
        }
        let row = nx / 2;
        for c in 0..nx {
            p[(row, c)] = 1.0;
        }
        let mut rhs = DVector::zeros(nx);
        rhs[row] = 1.0;
        let s = p.lu().solve(&rhs).ok_or(Error::Singular("discrete equilibrium"))?;
        let s: Vec<f64> = s.iter().copied().collect();
        let mut f = self.steady_response(&s);
        let m = self.mass(&f);
        for x in &mut f {
            *x *= mass / m;
        }
        if let Some(idx) = f.iter().position(|&x| !(x > 0.0)) {
            return Err(Error::Positivity {
                cell: idx / nv,
                velocity: idx % nv,
                value: f[idx],
            });
        }
        Ok(f)
    }

    /// `(Σ Δx w (f − r)² / r)^{1/2}`.
    pub fn weighted_distance(&self, f: &[f64], reference: &[f64]) -> f64 {
        let nv = self.grid.len();
        let w = self.grid.weights();
        let s: f64 = f
            .iter()
            .zip(reference)
            .enumerate()
            .map(|(idx, (a, r))| w[idx % nv] * (a - r) * (a - r) / r)
            .sum();
        (self.mesh.dx() * s).sqrt()
    }

    /// Initial data of total mass 1.
    pub fn initial(&self, ic: InitialCondition, equilibrium: Option<&[f64]>) -> Result<Vec<f64>> {
        let nv = self.grid.len();
        let l = self.mesh.length();
        let x = self.mesh.centers();
        let mut f: Vec<f64> = match ic {
            InitialCondition::Uniform => vec![1.0; self.len()],
            InitialCondition::Gaussian => x
                .iter()
                .flat_map(|&xi| std::iter::repeat_n((-(4.0 * xi / l).powi(2)).exp(), nv))
                .collect(),
            InitialCondition::TwoBump => x
                .iter()
                .flat_map(|&xi| {
                    let b = |c: f64| (-(8.0 * (xi - c) / l).powi(2)).exp();
                    std::iter::repeat_n(b(-0.5 * l) + 0.5 * b(0.4 * l), nv)
                })
                .collect(),
            InitialCondition::Equilibrium => match equilibrium {
                Some(g) if g.len() == self.len() => g.to_vec(),
                Some(_) => return Err(invalid("equilibrium", "state lives on a different mesh")),
                None => self.discrete_equilibrium(1.0)?,
            },
        };
        let m = self.mass(&f);
        for v in &mut f {
            *v /= m;
        }
        Ok(f)
    }

    /// Time-marches `f0` to `t_end` and records mass and distances.
    pub fn evolve(&self, f0: &[f64], opts: &EvolveOptions) -> Result<(KineticField, RelaxationReport)> {
        if f0.len() != self.len() {
            return Err(invalid("f0", "field size does not match the mesh"));
        }
        if f0.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(invalid("f0", "initial data must be finite and nonnegative"));
        }
        if !(opts.t_end >= 0.0) {
            return Err(invalid("t_end", "must be nonnegative"));
        }
        let dt0 = self.time_step(opts.cfl)?;
        let nv = self.grid.len();
        let mass0 = self.mass(f0);
        if !(mass0 > 0.0) {
            return Err(invalid("f0", "initial data carry no mass"));
        }
        let f_disc = self.discrete_equilibrium(mass0)?;
        let f_ref: Option<Vec<f64>> = match &opts.reference {
            Some(g) => {
                if g.len() != self.len() {
                    return Err(invalid("reference", "state lives on a different mesh"));
                }
                let s = mass0 / self.mass(g);
                Some(g.iter().map(|x| x * s).collect())
            }
            None => None,
        };
        let mut report = RelaxationReport::default();
        let record = |f: &[f64], t: f64, rep: &mut RelaxationReport| {
            rep.times.push(t);
            rep.mass.push(self.mass(f));
            rep.distance_discrete.push(self.weighted_distance(f, &f_disc));
            if let Some(r) = &f_ref {
                rep.distance.push(self.weighted_distance(f, r));
            }
        };
        let mut f = f0.to_vec();
        let mut t = 0.0;
        let mut steps = 0usize;
        record(&f, t, &mut report);
        while t < opts.t_end * (1.0 - 1e-14) {
            let dt = dt0.min(opts.t_end - t);
            f = self.step(&f, dt, opts.scheme);
            t += dt;
            steps += 1;
            if let Some(idx) = f.iter().position(|&x| !x.is_finite() || x < -1e-14 * mass0) {
                return Err(Error::Positivity {
                    cell: idx / nv,
                    velocity: idx % nv,
                    value: f[idx],
                });
            }
            if steps.is_multiple_of(opts.record_every.max(1)) || t >= opts.t_end * (1.0 - 1e-14) {
                record(&f, t, &mut report);
            }
        }
        report.steps = steps;
        report.dt = dt0;
        report.mass_drift = report
            .mass
            .iter()
            .map(|m| (m - mass0).abs() / mass0)
            .fold(0.0, f64::max);
        report.fit(opts.fit_window);
        Ok((KineticField { f, time: t }, report))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialCondition {
    Uniform,
    Gaussian,
    Equilibrium,
    TwoBump,
}

impl std::str::FromStr for InitialCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "gaussian" => Ok(Self::Gaussian),
            "equilibrium" => Ok(Self::Equilibrium),
            "twobump" => Ok(Self::TwoBump),
            other => Err(invalid("ic", format!("unknown initial condition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub t_end: f64,
    pub cfl: f64,
    pub scheme: Scheme,
    /// Comparison state (e.g. the half-space construction) on the same mesh.
    pub reference: Option<Vec<f64>>,
    pub record_every: usize,
    /// Relative band `(lo, hi)` of `d/d₀` used by the decay fit.
    pub fit_window: (f64, f64),
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            cfl: 0.5,
            scheme: Scheme::Heun,
            reference: None,
            record_every: 10,
            fit_window: (1e-8, 1e-2),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RelaxationReport {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    /// Distance to the rescaled comparison state, weight `1/f∞`.
    pub distance: Vec<f64>,
    /// Distance to the scheme's own equilibrium, weight `1/f∞`.
    pub distance_discrete: Vec<f64>,
    /// Decay rate of `distance_discrete` over the fit window.
    pub lambda_fit: Option<f64>,
    pub r_squared: Option<f64>,
    /// Largest deviation of `ln d` from the fitted line.
    pub fit_residual: Option<f64>,
    pub fit_points: usize,
    pub mass_drift: f64,
    pub steps: usize,
    pub dt: f64,
}

impl RelaxationReport {
    fn fit(&mut self, (lo, hi): (f64, f64)) {
        let d0 = match self.distance_discrete.first() {
            Some(&d) if d > 0.0 => d,
            _ => return,
        };
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .times
            .iter()
            .zip(&self.distance_discrete)
            .filter(|(_, &d)| d >= lo * d0 && d <= hi * d0)
            .map(|(&t, &d)| (t, d.ln()))
            .unzip();
        self.fit_points = xs.len();
        if let Ok((a, b, r2)) = linear_fit(&xs, &ys) {
            self.lambda_fit = Some(-b);
            self.r_squared = Some(r2);
            self.fit_residual = Some(
                xs.iter()
                    .zip(&ys)
                    .map(|(x, y)| (y - a - b * x).abs())
                    .fold(0.0, f64::max),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::Rule;

    fn setup(nx: usize, n_half: usize, l: f64) -> Kinetic {
        let grid = VelocityGrid::new(n_half, Rule::Gauss).unwrap();
        let kernel = KernelSpec::sign(0.5, &grid).unwrap();
        let mesh = SpatialMesh::centered_box(l, nx).unwrap();
        Kinetic::new(&mesh, &grid, &kernel).unwrap()
    }

    #[test]
    fn odd_mesh_rejected() {
        let grid = VelocityGrid::new(2, Rule::Gauss).unwrap();
        let kernel = KernelSpec::sign(0.5, &grid).unwrap();
        let mesh = SpatialMesh::centered_box(1.0, 5).unwrap();
        assert!(Kinetic::new(&mesh, &grid, &kernel).is_err());
    }

    #[test]
    fn turning_kills_inverse_rates() {
        let k = setup(10, 4, 2.0);
        let f: Vec<f64> = k.rates().iter().enumerate().map(|(i, r)| (1.0 + (i / 8) as f64) / r).collect();
        assert!(k.turning_rhs(&f).iter().all(|q| q.abs() < 1e-14));
    }

    #[test]
    fn turning_conserves_cell_mass() {
        let k = setup(10, 4, 2.0);
        let f: Vec<f64> = (0..k.len()).map(|i| ((i * 37) % 11) as f64 + 0.5).collect();
        for row in k.turning_rhs(&f).chunks(8) {
            assert!(k.grid().sum(row).abs() < 1e-14);
        }
    }

    #[test]
    fn transport_of_constant_and_mass() {
        let k = setup(20, 4, 2.0);
        let nv = 8;
        let f: Vec<f64> = (0..k.len()).map(|i| 1.0 + (i % nv) as f64).collect();
        let dt = k.transport_limit(0.9);
        let g = k.transport_step(&f, dt).unwrap();
        for i in 1..19 {
            for j in 0..nv {
                assert_eq!(g[i * nv + j], f[i * nv + j]);
            }
        }
        let h: Vec<f64> = (0..k.len()).map(|i| ((i * 13) % 7) as f64).collect();
        let m0 = k.mass(&h);
        let m1 = k.mass(&k.transport_step(&h, dt).unwrap());
        assert!((m1 - m0).abs() < 1e-14 * m0);
        assert!(k.transport_step(&h, 2.0 * k.transport_limit(1.0)).is_err());
    }

    #[test]
    fn pulse_moves_one_cell_at_unit_cfl() {
        // midpoint nodes give a single speed per sign; pick the fastest
        let grid = VelocityGrid::new(1, Rule::Midpoint).unwrap();
        let kernel = KernelSpec::sign(0.5, &grid).unwrap();
        let mesh = SpatialMesh::centered_box(1.0, 8).unwrap();
        let k = Kinetic::new(&mesh, &grid, &kernel).unwrap();
        let mut f = vec![0.0; 16];
        f[3 * 2 + 1] = 1.0;
        let g = k.transport_step(&f, mesh.dx() / 0.25).unwrap();
        assert_eq!(g[4 * 2 + 1], 1.0);
        assert_eq!(g.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn discrete_equilibrium_is_stationary() {
        let k = setup(40, 6, 3.0);
        let f = k.discrete_equilibrium(1.0).unwrap();
        assert!((k.mass(&f) - 1.0).abs() < 1e-13);
        let r = k.rhs(&f);
        let top = f.iter().copied().fold(0.0, f64::max);
        assert!(r.iter().all(|x| x.abs() < 1e-11 * top));
        let nv = 12;
        for i in 0..40 {
            for j in 0..nv {
                let (a, b) = (f[i * nv + j], f[(39 - i) * nv + (nv - 1 - j)]);
                assert!((a - b).abs() < 1e-12 * top);
            }
        }
    }

    #[test]
    fn relaxation_conserves_mass_and_contracts() {
        let k = setup(40, 4, 2.0);
        let f0 = k.initial(InitialCondition::TwoBump, None).unwrap();
        let opts = EvolveOptions {
            t_end: 20.0,
            record_every: 1,
            ..Default::default()
        };
        let (field, rep) = k.evolve(&f0, &opts).unwrap();
        assert!(rep.mass_drift < 1e-13);
        assert!(field.f.iter().all(|&x| x >= 0.0));
        for w in rep.distance_discrete.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn strang_and_euler_conserve_mass() {
        let k = setup(20, 4, 2.0);
        let f0 = k.initial(InitialCondition::Gaussian, None).unwrap();
        for scheme in [Scheme::Euler, Scheme::Strang] {
            let opts = EvolveOptions {
                t_end: 5.0,
                scheme,
                ..Default::default()
            };
            let (field, rep) = k.evolve(&f0, &opts).unwrap();
            assert!(rep.mass_drift < 1e-13, "{scheme:?}");
            assert!(field.f.iter().all(|&x| x >= 0.0));
        }
    }
}
