//! Dense operator laboratory on a small box grid.
//!
//! With the weighted product `⟨f₁, f₂⟩ = Σ Δx w f₁ f₂ / g` the collision
//! operator splits as `Q − v∂ₓ = L − T` with `L` symmetric and `T` skew.
//! Both hold exactly when `g` is the discrete equilibrium of the upwind
//! kinetic scheme and the transport in `T` uses the reconstruction
//!
//! ```text
//! F_{i+½} = ĝ_{i+½} · ½ (f_i/g_i + f_{i+1}/g_{i+1})
//! ```
//!
//! where `ĝ` is the upwind face value of `g`. Then `F(g) = ĝ`, so `Tg = 0`,
//! and the symmetric part of `v D` is the multiplication that cancels the
//! one of `L − Q`. Specular ghosts `f_{N, v} = f_{N−1, −v}` and
//! `f_{−1, v} = f_{0, −v}` make `ĝ` mirror-symmetric on the walls, which
//! removes the boundary terms.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::grids::{SpatialMesh, VelocityGrid};
use crate::kinetic::{Kinetic, Scheme};
use crate::milne::StationaryState;

/// Dense matrices of `Q`, `L`, `T`, `Π` and the weights of the product.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub nx: usize,
    pub nv: usize,
    pub mesh: SpatialMesh,
    pub grid: VelocityGrid,
    /// Upwind discrete equilibrium, flattened `i * nv + j`.
    pub g: Vec<f64>,
    /// Upwind face values of `g`, face `k` between cells `k − 1` and `k`.
    pub ghat: Vec<f64>,
    pub rates: Vec<f64>,
    /// `W_ij = Δx w_j / g_ij`.
    pub weights: Vec<f64>,
    pub q: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub pi: DMatrix<f64>,
    pub kmin: f64,
    pub kmax: f64,
    /// Relative weighted distance between the lab state and the half-space state.
    pub milne_distance: f64,
    /// Sandwich constant of the half-space state.
    pub sandwich: f64,
}

/// One line of the identity report.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl IdentityCheck {
    fn new(name: &'static str, residual: f64, tolerance: f64) -> Self {
        Self {
            name,
            residual,
            tolerance,
            passed: residual.is_finite() && residual < tolerance,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Coercivity {
    /// `min ⟨−Lf, f⟩ / ‖(1 − Π)f‖²` over all cells.
    pub ratio: f64,
    /// Smallest eigenvalue of `−L` overall (the null modes, ideally 0).
    pub min_eigenvalue: f64,
    pub kmin: f64,
    /// `‖L‖` in the weighted norm.
    pub l_norm: f64,
    /// `2 K_max (1 + C²)` with `C` the sandwich constant.
    pub l_bound: f64,
}

/// Modified-entropy data for a fixed `ε`.
#[derive(Debug, Clone)]
pub struct EntropyProbe {
    pub epsilon: f64,
    /// `(1 + (TΠ)*TΠ)^{-1} (TΠ)*`.
    pub a: DMatrix<f64>,
    pub norm_a: f64,
    pub norm_ta: f64,
    pub norm_at_perp: f64,
    pub norm_al: f64,
    /// `max |(TΠ)* − (−ΠT)|` relative to `‖(TΠ)*‖`.
    pub adjoint_mismatch: f64,
}

impl EntropyProbe {
    /// `½⟨f, f⟩ + ε⟨Af, f⟩`.
    pub fn entropy(&self, ops: &OperatorSet, f: &[f64]) -> f64 {
        let af = &self.a * DVector::from_column_slice(f);
        0.5 * ops.inner(f, f) + self.epsilon * ops.inner(af.as_slice(), f)
    }
}

/// Lab trajectory of `∂ₜf = (L − T) f` and its entropy.
#[derive(Debug, Clone)]
pub struct EntropyTrajectory {
    pub times: Vec<f64>,
    pub entropy: Vec<f64>,
    pub norm_sq: Vec<f64>,
    /// Largest relative increase `max (H_{n+1} − H_n)/H_0`.
    pub max_increase: f64,
    /// Decay rate of `ln H` by least squares.
    pub fitted_rate: f64,
}

fn weighted_sym_eigen(m: DMatrix<f64>) -> Vec<f64> {
    let sym = 0.5 * (&m + m.transpose());
    let mut e: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    e
}

impl OperatorSet {
    /// Builds all operators from a box stationary state of the half-space
    /// construction.
    pub fn assemble(state: &StationaryState) -> Result<Self> {
        let mesh = state.mesh.clone();
        let grid = state.grid.clone();
        let nx = mesh.len();
        let nv = grid.len();
        let n = nx * nv;
        let dx = mesh.dx();
        let sides = mesh.sides()?;
        let rates: Vec<f64> = sides
            .iter()
            .flat_map(|&s| state.kernel.on(s).iter().copied())
            .collect();
        let v = grid.nodes();
        let w = grid.weights();

        let q = {
            let mut q = DMatrix::zeros(n, n);
            for i in 0..nx {
                for j in 0..nv {
                    for jp in 0..nv {
                        q[(i * nv + j, i * nv + jp)] = w[jp] * rates[i * nv + jp];
                    }
                    q[(i * nv + j, i * nv + j)] -= rates[i * nv + j];
                }
            }
            q
        };

        let neighbor = |i: isize, j: usize| ghost_index(nx, &grid, i, j);

        // upwind stationary state, normalized to the mass of the seed
        let seed = &state.g;
        if seed.len() != n {
            return Err(invalid("state", "stationary state does not match its mesh"));
        }
        let seed_mass: f64 = (0..n).map(|k| dx * w[k % nv] * seed[k]).sum();
        let g = Kinetic::new(&mesh, &grid, &state.kernel)?.discrete_equilibrium(seed_mass)?;
        if let Some(idx) = g.iter().position(|&x| !(x > 0.0)) {
            return Err(Error::Positivity {
                cell: idx / nv,
                velocity: idx % nv,
                value: g[idx],
            });
        }
        let ghat = upwind_faces(nx, &grid, &g);
        let weights: Vec<f64> = (0..n).map(|idx| dx * w[idx % nv] / g[idx]).collect();
        let milne_distance = {
            let num: f64 = (0..n).map(|k| weights[k] * (g[k] - seed[k]).powi(2)).sum();
            let den: f64 = (0..n).map(|k| weights[k] * seed[k] * seed[k]).sum();
            (num / den).sqrt()
        };

        let l = {
            let mut l = DMatrix::zeros(n, n);
            for i in 0..nx {
                for j in 0..nv {
                    let a = g[i * nv + j] * rates[i * nv + j];
                    let mut diag = 0.0;
                    for jp in 0..nv {
                        let ap = g[i * nv + jp] * rates[i * nv + jp];
                        let c = w[jp] * 0.5 * (a + ap);
                        l[(i * nv + j, i * nv + jp)] += c / g[i * nv + jp];
                        diag += c;
                    }
                    l[(i * nv + j, i * nv + j)] -= diag / g[i * nv + j];
                }
            }
            l
        };

        let mut d = DMatrix::zeros(n, n);
        for i in 0..nx {
            for j in 0..nv {
                let row = i * nv + j;
                let c = v[j] / dx;
                // F = ĝ · ½ (f_a/g_a + f_b/g_b) on both faces of the cell
                for (sign, face, a, b) in [
                    (1.0, i + 1, row, neighbor(i as isize + 1, j)),
                    (-1.0, i, neighbor(i as isize - 1, j), row),
                ] {
                    let half = 0.5 * ghat[face * nv + j];
                    d[(row, a)] += sign * c * half / g[a];
                    d[(row, b)] += sign * c * half / g[b];
                }
            }
        }
        let t = &d - &q + &l;

        let rho_g: Vec<f64> = g.chunks(nv).map(|r| grid.sum(r)).collect();
        let mut pi = DMatrix::zeros(n, n);
        for i in 0..nx {
            for j in 0..nv {
                for jp in 0..nv {
                    pi[(i * nv + j, i * nv + jp)] = w[jp] * g[i * nv + j] / rho_g[i];
                }
            }
        }

        let ops = Self {
            nx,
            nv,
            mesh,
            grid,
            g,
            ghat,
            rates,
            weights,
            q,
            l,
            t,
            pi,
            kmin: state.kernel.kmin(),
            kmax: state.kernel.kmax(),
            milne_distance,
            sandwich: state.sandwich,
        };
        for m in [&ops.q, &ops.l, &ops.t, &ops.pi] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("assembled operator".into()));
            }
        }
        Ok(ops)
    }

    pub fn dim(&self) -> usize {
        self.nx * self.nv
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| w * x * y).sum()
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    pub fn apply(&self, m: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
        (m * DVector::from_column_slice(f)).iter().copied().collect()
    }

    /// Adjoint in the weighted product, `W⁻¹ Xᵀ W`.
    pub fn adjoint(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = x.transpose();
        for r in 0..n {
            for c in 0..n {
                out[(r, c)] *= self.weights[c] / self.weights[r];
            }
        }
        out
    }

    /// `W^{1/2} X W^{-1/2}`, the matrix of `X` in a weighted-orthonormal basis.
    fn orthonormal(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let s: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        let mut out = x.clone();
        for r in 0..n {
            for c in 0..n {
                out[(r, c)] *= s[r] / s[c];
            }
        }
        out
    }

    /// Induced operator norm in the weighted product.
    pub fn op_norm(&self, x: &DMatrix<f64>) -> f64 {
        let y = self.orthonormal(x);
        let top = weighted_sym_eigen(y.transpose() * &y).last().copied().unwrap_or(0.0);
        top.max(0.0).sqrt()
    }

    /// Velocity averages per cell.
    pub fn density(&self, f: &[f64]) -> Vec<f64> {
        f.chunks(self.nv).map(|r| self.grid.sum(r)).collect()
    }

    /// `Σ_j w v F_{i+½}` at the `nx + 1` faces (walls included) for the
    /// reconstruction used by `T`.
    pub fn face_flux_moment(&self, f: &[f64]) -> Vec<f64> {
        let (nx, nv) = (self.nx, self.nv);
        let v = self.grid.nodes();
        let w = self.grid.weights();
        (0..=nx)
            .map(|face| {
                (0..nv)
                    .map(|j| {
                        let a = ghost_index(nx, &self.grid, face as isize - 1, j);
                        let b = ghost_index(nx, &self.grid, face as isize, j);
                        let h = 0.5 * (f[a] / self.g[a] + f[b] / self.g[b]);
                        w[j] * v[j] * self.ghat[face * nv + j] * h
                    })
                    .sum()
            })
            .collect()
    }

    fn random_field(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.g.iter().map(|g| g * rng.random_range(-1.0..1.0)).collect()
    }

    /// Removes the mass of `f` along `g`.
    pub fn mass_free(&self, f: &[f64]) -> Vec<f64> {
        let mass: f64 = f.iter().enumerate().map(|(k, x)| self.grid.weights()[k % self.nv] * x).sum();
        let mg: f64 = self.g.iter().enumerate().map(|(k, x)| self.grid.weights()[k % self.nv] * x).sum();
        f.iter().zip(&self.g).map(|(x, g)| x - mass / mg * g).collect()
    }

    /// Structural identities on `trials` random fields.
    pub fn identity_report(&self, seed: u64, trials: usize) -> Vec<IdentityCheck> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sym_l: f64 = 0.0;
        let mut skew_t: f64 = 0.0;
        for _ in 0..trials {
            let f1 = self.random_field(&mut rng);
            let f2 = self.random_field(&mut rng);
            let (n1, n2) = (self.norm(&f1), self.norm(&f2));
            let lf1 = self.apply(&self.l, &f1);
            let lf2 = self.apply(&self.l, &f2);
            sym_l = sym_l.max((self.inner(&lf1, &f2) - self.inner(&f1, &lf2)).abs() / (n1 * n2));
            let tf1 = self.apply(&self.t, &f1);
            skew_t = skew_t.max(self.inner(&tf1, &f1).abs() / (n1 * n1));
        }
        let gn = self.norm(&self.g);
        let lg = self.norm(&self.apply(&self.l, &self.g)) / gn;
        let tg = self.norm(&self.apply(&self.t, &self.g)) / gn;
        let pi_t_pi = &self.pi * &self.t * &self.pi;
        let ptp = self.op_norm(&pi_t_pi) / self.op_norm(&self.t);
        let pi2 = (&self.pi * &self.pi - &self.pi).amax() / self.pi.amax();
        let pi_adj = (self.adjoint(&self.pi) - &self.pi).amax() / self.pi.amax();

        let mut rho_tf: f64 = 0.0;
        for _ in 0..trials {
            let f = self.random_field(&mut rng);
            let rho = self.density(&self.apply(&self.t, &f));
            let phi = self.face_flux_moment(&f);
            let dx = self.mesh.dx();
            let top = rho.iter().map(|x| x.abs()).fold(0.0, f64::max);
            for i in 0..self.nx {
                rho_tf = rho_tf.max((rho[i] - (phi[i + 1] - phi[i]) / dx).abs() / top);
            }
        }
        let kernel_dim = {
            let e = weighted_sym_eigen(-self.orthonormal(&self.l));
            let scale = e.last().copied().unwrap_or(1.0).abs();
            e.iter().filter(|x| x.abs() < 1e-10 * scale).count()
        };
        vec![
            IdentityCheck::new("L symmetric", sym_l, 1e-12),
            IdentityCheck::new("T skew-symmetric", skew_t, 1e-10),
            IdentityCheck::new("Lg = 0", lg, 1e-10),
            IdentityCheck::new("Tg = 0", tg, 1e-10),
            IdentityCheck::new("Pi T Pi = 0", ptp, 1e-10),
            IdentityCheck::new("Pi idempotent", pi2, 1e-12),
            IdentityCheck::new("Pi self-adjoint", pi_adj, 1e-12),
            IdentityCheck::new("rho_Tf = dx(flux)", rho_tf, 1e-10),
            IdentityCheck::new("dim ker L - nx", (kernel_dim as f64 - self.nx as f64).abs(), 0.5),
        ]
    }

    /// Per-cell spectra of `−L` in the weighted product.
    pub fn microscopic_coercivity(&self) -> Result<Coercivity> {
        let nv = self.nv;
        let mut ratio = f64::INFINITY;
        let mut min_eig = f64::INFINITY;
        let mut l_norm: f64 = 0.0;
        for i in 0..self.nx {
            let r = i * nv..(i + 1) * nv;
            let mut block = DMatrix::zeros(nv, nv);
            for a in 0..nv {
                for b in 0..nv {
                    let (ia, ib) = (r.start + a, r.start + b);
                    block[(a, b)] = -self.l[(ia, ib)] * (self.weights[ia] / self.weights[ib]).sqrt();
                }
            }
            let e = weighted_sym_eigen(block);
            min_eig = min_eig.min(e[0]);
            ratio = ratio.min(e[1]);
            l_norm = l_norm.max(e.iter().map(|x| x.abs()).fold(0.0, f64::max));
        }
        let scale = l_norm.max(1.0);
        if min_eig < -1e-10 * scale {
            return Err(Error::Singular("−L is indefinite"));
        }
        Ok(Coercivity {
            ratio,
            min_eigenvalue: min_eig,
            kmin: self.kmin,
            l_norm,
            l_bound: 2.0 * self.kmax * (1.0 + self.sandwich * self.sandwich),
        })
    }

    /// `min ‖TΠf‖² / ‖Πf‖²` over `f = c g` with zero total mass.
    pub fn macroscopic_coercivity(&self) -> Result<f64> {
        let (nx, nv) = (self.nx, self.nv);
        let n = self.dim();
        let mut basis = DMatrix::zeros(n, nx);
        for i in 0..nx {
            for j in 0..nv {
                basis[(i * nv + j, i)] = self.g[i * nv + j];
            }
        }
        let b = &self.t * &basis;
        let mut m = DMatrix::zeros(nx, nx);
        for r in 0..nx {
            for c in r..nx {
                let s: f64 = (0..n).map(|k| self.weights[k] * b[(k, r)] * b[(k, c)]).sum();
                m[(r, c)] = s;
                m[(c, r)] = s;
            }
        }
        // ‖c g‖² = Σ Δx c_i² ρ_g(i); mass Σ Δx c_i ρ_g(i)
        let rho = self.density(&self.g);
        let dx = self.mesh.dx();
        let s: Vec<f64> = rho.iter().map(|r| (dx * r).sqrt()).collect();
        let mut mt = m;
        for r in 0..nx {
            for c in 0..nx {
                mt[(r, c)] /= s[r] * s[c];
            }
        }
        let qn = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        let qv = DVector::from_iterator(nx, s.iter().map(|x| x / qn));
        let p = DMatrix::identity(nx, nx) - &qv * qv.transpose();
        let reduced = &p * mt * &p;
        let eig = reduced.symmetric_eigen();
        // drop the constraint direction, keep the smallest remaining value
        let mut best = f64::INFINITY;
        for (k, &val) in eig.eigenvalues.iter().enumerate() {
            let align = eig.eigenvectors.column(k).dot(&qv).abs();
            if align < 0.5 {
                best = best.min(val);
            }
        }
        if !(best > 0.0) {
            return Err(Error::Singular("macroscopic coercivity estimate vanished"));
        }
        Ok(best)
    }

    /// Solves `L f = h` with `Σ_j w f = 0` per cell.
    pub fn pseudo_inverse(&self, h: &[f64]) -> Result<Vec<f64>> {
        pseudo_inverse(&self.grid, &self.g, &self.rates, h)
    }

    /// Builds `A` and its operator norms for the modified entropy.
    pub fn entropy_probe(&self, epsilon: f64) -> Result<EntropyProbe> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(invalid("epsilon", format!("must lie in (0, 1), got {epsilon}")));
        }
        let n = self.dim();
        let tpi = &self.t * &self.pi;
        let tpi_star = self.adjoint(&tpi);
        let alt = -(&self.pi * &self.t);
        let adjoint_mismatch = (&tpi_star - &alt).amax() / tpi_star.amax().max(f64::MIN_POSITIVE);
        let sys = DMatrix::identity(n, n) + &tpi_star * &tpi;
        let a = sys
            .lu()
            .solve(&tpi_star)
            .ok_or(Error::Singular("1 + (TΠ)*TΠ"))?;
        let perp = DMatrix::identity(n, n) - &self.pi;
        let norm_a = self.op_norm(&a);
        let norm_ta = self.op_norm(&(&self.t * &a));
        let norm_at_perp = self.op_norm(&(&a * &self.t * perp));
        let norm_al = self.op_norm(&(&a * &self.l));
        Ok(EntropyProbe {
            epsilon,
            a,
            norm_a,
            norm_ta,
            norm_at_perp,
            norm_al,
            adjoint_mismatch,
        })
    }

    /// Smallest ratio `⟨ATΠf, f⟩ / (λ_M/(1+λ_M) ‖Πf‖²)` over `trials` random
    /// mass-free fields.
    pub fn atpi_ratio(&self, probe: &EntropyProbe, lambda_m: f64, seed: u64, trials: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atpi = &probe.a * &self.t * &self.pi;
        let factor = lambda_m / (1.0 + lambda_m);
        let mut worst = f64::INFINITY;
        for _ in 0..trials {
            let f = self.mass_free(&self.random_field(&mut rng));
            let lhs = self.inner(&self.apply(&atpi, &f), &f);
            let pf = self.apply(&self.pi, &f);
            worst = worst.min(lhs / (factor * self.inner(&pf, &pf)));
        }
        worst
    }

    /// Generator `L − T = Q − v D` of the lab discretization.
    pub fn generator(&self) -> DMatrix<f64> {
        &self.l - &self.t
    }

    /// Integrates `∂ₜf = (L − T) f` from the mass-free part of `f0` with
    /// classical Runge-Kutta and records the modified entropy.
    pub fn entropy_trajectory(
        &self,
        probe: &EntropyProbe,
        f0: &[f64],
        t_end: f64,
        steps: usize,
    ) -> Result<EntropyTrajectory> {
        if steps == 0 || !(t_end > 0.0) {
            return Err(invalid("steps", "need a positive horizon and step count"));
        }
        let gen = self.generator();
        let dt = t_end / steps as f64;
        let rho = self.op_norm(&gen);
        if dt * rho > 2.5 {
            return Err(invalid("steps", format!("dt = {dt} too large for ‖L − T‖ = {rho}")));
        }
        let mut f = DVector::from_vec(self.mass_free(f0));
        let mut times = vec![0.0];
        let mut entropy = vec![probe.entropy(self, f.as_slice())];
        let mut norm_sq = vec![self.inner(f.as_slice(), f.as_slice())];
        for s in 1..=steps {
            let k1 = &gen * &f;
            let k2 = &gen * (&f + &k1 * (0.5 * dt));
            let k3 = &gen * (&f + &k2 * (0.5 * dt));
            let k4 = &gen * (&f + &k3 * dt);
            f += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            times.push(s as f64 * dt);
            entropy.push(probe.entropy(self, f.as_slice()));
            norm_sq.push(self.inner(f.as_slice(), f.as_slice()));
        }
        trajectory_summary(times, entropy, norm_sq)
    }

    /// Records the modified entropy of `f(t) − f∞` along the upwind kinetic
    /// scheme, whose equilibrium is the lab's `g`.
    pub fn kinetic_entropy_trajectory(
        &self,
        probe: &EntropyProbe,
        kinetic: &Kinetic,
        f0: &[f64],
        t_end: f64,
        cfl: f64,
        scheme: Scheme,
    ) -> Result<EntropyTrajectory> {
        if kinetic.len() != self.dim() || f0.len() != self.dim() {
            return Err(invalid("kinetic", "kinetic grid does not match the lab grid"));
        }
        if !(t_end > 0.0) {
            return Err(invalid("t_end", "must be positive"));
        }
        let dt = kinetic.time_step(cfl)?;
        let steps = (t_end / dt).ceil() as usize;
        let ratio = kinetic.mass(f0) / kinetic.mass(&self.g);
        let deviation = |f: &[f64]| -> Vec<f64> { f.iter().zip(&self.g).map(|(x, g)| x - ratio * g).collect() };
        let mut f = f0.to_vec();
        let d0 = deviation(&f);
        let mut times = vec![0.0];
        let mut entropy = vec![probe.entropy(self, &d0)];
        let mut norm_sq = vec![self.inner(&d0, &d0)];
        for s in 1..=steps {
            f = kinetic.step(&f, dt, scheme);
            let d = deviation(&f);
            times.push(s as f64 * dt);
            entropy.push(probe.entropy(self, &d));
            norm_sq.push(self.inner(&d, &d));
        }
        trajectory_summary(times, entropy, norm_sq)
    }
}

fn trajectory_summary(times: Vec<f64>, entropy: Vec<f64>, norm_sq: Vec<f64>) -> Result<EntropyTrajectory> {
    let h0 = entropy[0];
    if !(h0 > 0.0) {
        return Err(invalid("f0", "initial data coincides with equilibrium"));
    }
    let max_increase = entropy
        .windows(2)
        .map(|w| (w[1] - w[0]) / h0)
        .fold(f64::NEG_INFINITY, f64::max);
    // fit where H is still well above round-off
    let keep: Vec<usize> = (0..times.len()).filter(|&k| entropy[k] > 1e-20 * h0).collect();
    let xs: Vec<f64> = keep.iter().map(|&k| times[k]).collect();
    let ys: Vec<f64> = keep.iter().map(|&k| entropy[k].ln()).collect();
    let (_, slope, _) = crate::milne::linear_fit(&xs, &ys)?;
    Ok(EntropyTrajectory {
        times,
        entropy,
        norm_sq,
        max_increase,
        fitted_rate: -slope,
    })
}

/// Flat index of cell `i` (possibly a ghost) at velocity `j`.
fn ghost_index(nx: usize, grid: &VelocityGrid, i: isize, j: usize) -> usize {
    let nv = grid.len();
    if i < 0 {
        grid.mirror(j)
    } else if i as usize >= nx {
        (nx - 1) * nv + grid.mirror(j)
    } else {
        i as usize * nv + j
    }
}

fn upwind_faces(nx: usize, grid: &VelocityGrid, g: &[f64]) -> Vec<f64> {
    let nv = grid.len();
    let mut out = vec![0.0; (nx + 1) * nv];
    for face in 0..=nx {
        for (j, &vj) in grid.nodes().iter().enumerate() {
            let upstream = if vj > 0.0 { face as isize - 1 } else { face as isize };
            out[face * nv + j] = g[ghost_index(nx, grid, upstream, j)];
        }
    }
    out
}

/// `f = μg + 2g/(λ+gK) (⟨h/(λ+gK)⟩/⟨1/(λ+gK)⟩ − h)` per cell, with
/// `λ = Σ w g K` and `μ` such that `Σ w f = 0`. Requires `Σ_j w h = 0`.
pub fn pseudo_inverse(grid: &VelocityGrid, g: &[f64], rates: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    let nv = grid.len();
    let w = grid.weights();
    if g.len() != h.len() || rates.len() != h.len() || !h.len().is_multiple_of(nv) {
        return Err(invalid("h", "field sizes do not match"));
    }
    let mut f = vec![0.0; h.len()];
    for (c, hrow) in h.chunks(nv).enumerate() {
        let off = c * nv;
        let scale: f64 = hrow.iter().zip(w).map(|(x, w)| w * x.abs()).sum();
        let avg = grid.sum(hrow);
        if avg.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(invalid("h", format!("cell {c} has velocity average {avg:e}, not 0")));
        }
        let lam: f64 = (0..nv).map(|j| w[j] * g[off + j] * rates[off + j]).sum();
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..nv {
            let d = lam + g[off + j] * rates[off + j];
            num += w[j] * hrow[j] / d;
            den += w[j] / d;
        }
        let c_ratio = num / den;
        let mut mass = 0.0;
        let mut rho = 0.0;
        for j in 0..nv {
            let d = lam + g[off + j] * rates[off + j];
            let val = 2.0 * g[off + j] / d * (c_ratio - hrow[j]);
            f[off + j] = val;
            mass += w[j] * val;
            rho += w[j] * g[off + j];
        }
        let mu = -mass / rho;
        for j in 0..nv {
            f[off + j] += mu * g[off + j];
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::solve_alpha;
    use crate::grids::{KernelSpec, Rule};
    use crate::milne::{stationary_state, PowerOptions};

    fn lab(chi: f64, nx: usize, n_half: usize, l: f64) -> OperatorSet {
        let grid = VelocityGrid::new(n_half, Rule::Gauss).unwrap();
        let kernel = KernelSpec::sign(chi, &grid).unwrap();
        let disp = solve_alpha(&kernel, &grid, 1e-12).unwrap();
        let (_, _, st) = stationary_state(&kernel, &grid, &disp, Some(l), nx / 2, &PowerOptions::default()).unwrap();
        OperatorSet::assemble(&st).unwrap()
    }

    #[test]
    fn identities_hold_on_small_grid() {
        let ops = lab(0.5, 16, 3, 2.0);
        for c in ops.identity_report(7, 5) {
            assert!(c.passed, "{c:?}");
        }
        assert!(ops.milne_distance < 0.3, "{}", ops.milne_distance);
    }

    #[test]
    fn pseudo_inverse_inverts_l() {
        let ops = lab(0.5, 12, 3, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw = ops.random_field(&mut rng);
        let h: Vec<f64> = raw
            .iter()
            .zip(ops.apply(&ops.pi, &raw))
            .map(|(a, b)| a - b)
            .collect();
        let f = ops.pseudo_inverse(&h).unwrap();
        let lf = ops.apply(&ops.l, &f);
        let err = lf.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let hn = h.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err < 1e-12 * hn, "{err}");
        assert!(ops.density(&f).iter().all(|r| r.abs() < 1e-14));
        assert!(ops.pseudo_inverse(&vec![0.0; h.len()]).unwrap().iter().all(|&x| x == 0.0));
        assert!(ops.pseudo_inverse(&ops.g).is_err());
    }

    #[test]
    fn coercivity_and_entropy_bounds() {
        let ops = lab(0.5, 12, 3, 2.0);
        let c = ops.microscopic_coercivity().unwrap();
        assert!(c.ratio >= 0.95 * c.kmin, "{c:?}");
        assert!(c.l_norm <= c.l_bound);
        let lm = ops.macroscopic_coercivity().unwrap();
        assert!(lm > 0.0);
        let p = ops.entropy_probe(0.1).unwrap();
        assert!(p.norm_a <= 0.5 + 1e-12 && p.norm_ta <= 1.0 + 1e-12, "{} {}", p.norm_a, p.norm_ta);
        assert!(p.adjoint_mismatch < 1e-12);
        assert!(ops.atpi_ratio(&p, lm, 1, 10) >= 1.0 - 1e-10);
    }
}
