//! Dispersion relation for the spatial decay exponent of the stationary tail.
//!
//! For `x > 0` the stationary state behaves like `e^{-αx} G(v)` where `α` is
//! the unique positive root of
//!
//! ```text
//! J(α) = Σ_j w_j K₊(v_j) / (K₊(v_j) − α v_j) = 1
//! ```
//!
//! and `G ∝ 1/(K₊ − αv)` is normalized by `Σ w K₊ G = 1`.

use crate::error::{invalid, Error, Result};
use crate::grids::{KernelSpec, VelocityGrid};

/// Decay exponent, asymptotic profile and the Milne decay constants.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionResult {
    pub alpha: f64,
    /// `G(v_j)` at every node.
    pub g: Vec<f64>,
    /// `min_{v_j > 0} K₊(v_j)/v_j`, the node-set version of the admissible bound.
    pub alpha_max: f64,
    /// Node minimum of `K₊/(v²G)`, squared, times `Σ w v² G²`.
    pub kappa: f64,
    /// Positive root of `β²/2 + αβ − 2κ = 0`.
    pub beta: f64,
    /// `|J(α) − 1|` at the returned root.
    pub root_residual: f64,
    pub iterations: usize,
}

/// Upper end of the admissible range of `α` on this grid.
pub fn alpha_max(kernel: &KernelSpec, grid: &VelocityGrid) -> f64 {
    grid.positive()
        .map(|j| kernel.kplus()[j] / grid.nodes()[j])
        .fold(f64::INFINITY, f64::min)
}

fn j_unchecked(alpha: f64, kernel: &KernelSpec, grid: &VelocityGrid) -> (f64, f64) {
    let mut j = 0.0;
    let mut dj = 0.0;
    for ((&v, &w), &k) in grid.nodes().iter().zip(grid.weights()).zip(kernel.kplus()) {
        let d = k - alpha * v;
        j += w * k / d;
        dj += w * k * v / (d * d);
    }
    (j, dj)
}

/// `J(α)`; fails outside `[0, alpha_max)`.
pub fn dispersion_function(alpha: f64, kernel: &KernelSpec, grid: &VelocityGrid) -> Result<f64> {
    let amax = alpha_max(kernel, grid);
    if !(0.0..amax).contains(&alpha) {
        return Err(invalid("alpha", format!("{alpha} outside [0, {amax})")));
    }
    Ok(j_unchecked(alpha, kernel, grid).0)
}

/// `J'(α) = Σ w K₊ v / (K₊ − αv)²`.
pub fn dispersion_slope(alpha: f64, kernel: &KernelSpec, grid: &VelocityGrid) -> Result<f64> {
    dispersion_function(alpha, kernel, grid)?;
    Ok(j_unchecked(alpha, kernel, grid).1)
}

/// Normalized profile `G = c/(K₊ − αv)` with `Σ w K₊ G = 1`.
pub fn profile(alpha: f64, kernel: &KernelSpec, grid: &VelocityGrid) -> Vec<f64> {
    let raw: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(kernel.kplus())
        .map(|(v, k)| 1.0 / (k - alpha * v))
        .collect();
    let mass: f64 = raw
        .iter()
        .zip(kernel.kplus())
        .zip(grid.weights())
        .map(|((g, k), w)| w * k * g)
        .sum();
    raw.iter().map(|g| g / mass).collect()
}

/// `κ` and `β` for a given exponent and profile.
///
/// The infimum of `K₊/(v²G)` runs over the quadrature nodes. `v = 0` is never
/// a node, so the blow-up at the origin is excluded and the minimum sits at
/// the outer edge of `V`.
pub fn milne_constants(alpha: f64, g: &[f64], kernel: &KernelSpec, grid: &VelocityGrid) -> (f64, f64) {
    let v = grid.nodes();
    let inf = (0..grid.len())
        .map(|j| kernel.kplus()[j] / (v[j] * v[j] * g[j]))
        .fold(f64::INFINITY, f64::min);
    let second = grid.sum(&(0..grid.len()).map(|j| v[j] * v[j] * g[j] * g[j]).collect::<Vec<_>>());
    let kappa = inf * inf * second;
    let beta = -alpha + (alpha * alpha + 4.0 * kappa).sqrt();
    (kappa, beta)
}

/// Solves `J(α) = 1` on `(0, alpha_max)` with `|J(α) − 1| < tol`.
///
/// The root is bracketed, bisected to machine resolution and polished by one
/// Newton step. On return `J(α − 10 tol) < 1 < J(α + 10 tol)` has been checked.
pub fn solve_alpha(kernel: &KernelSpec, grid: &VelocityGrid, tol: f64) -> Result<DispersionResult> {
    if !(tol > 0.0) {
        return Err(invalid("tol", format!("tolerance must be positive, got {tol}")));
    }
    let amax = alpha_max(kernel, grid);
    let f = |a: f64| j_unchecked(a, kernel, grid).0 - 1.0;

    let mut hi = 0.5 * amax;
    let mut pushes = 0;
    while f(hi) <= 0.0 {
        hi = 0.5 * (hi + amax);
        pushes += 1;
        if pushes > 200 || hi >= amax {
            return Err(Error::NoBracket(format!(
                "J stays below 1 up to alpha_max = {amax}; confinement too weak on this grid"
            )));
        }
    }
    let mut lo = 0.5 * hi;
    let mut halvings = 0;
    while f(lo) >= 0.0 {
        lo *= 0.5;
        halvings += 1;
        if halvings > 200 {
            return Err(Error::NoBracket("J never drops below 1 near the origin".into()));
        }
    }

    let mut iterations = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let mut alpha = if f(lo).abs() <= f(hi).abs() { lo } else { hi };
    let (jv, dj) = j_unchecked(alpha, kernel, grid);
    if dj != 0.0 {
        let polished = alpha - (jv - 1.0) / dj;
        if polished > 0.0 && polished < amax && f(polished).abs() < f(alpha).abs() {
            alpha = polished;
        }
    }
    iterations += 1;

    let residual = f(alpha).abs();
    if residual >= tol {
        return Err(Error::NotConverged {
            what: "dispersion root",
            iterations,
            residual,
        });
    }
    let delta = 10.0 * tol;
    if !(f(alpha - delta) < 0.0 && (alpha + delta >= amax || f(alpha + delta) > 0.0)) {
        return Err(Error::NoBracket(format!(
            "root at {alpha} is not isolated at offset {delta:e}"
        )));
    }

    let g = profile(alpha, kernel, grid);
    let (kappa, beta) = milne_constants(alpha, &g, kernel, grid);
    Ok(DispersionResult {
        alpha,
        g,
        alpha_max: amax,
        kappa,
        beta,
        root_residual: residual,
        iterations,
    })
}

/// `max_j |(K₊ − αv_j) G_j − Σ w K₊ G|`.
pub fn profile_identity_residual(result: &DispersionResult, kernel: &KernelSpec, grid: &VelocityGrid) -> f64 {
    let mass: f64 = (0..grid.len())
        .map(|j| grid.weights()[j] * kernel.kplus()[j] * result.g[j])
        .sum();
    (0..grid.len())
        .map(|j| ((kernel.kplus()[j] - result.alpha * grid.nodes()[j]) * result.g[j] - mass).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::Rule;

    fn setup(chi: f64, n: usize) -> (KernelSpec, VelocityGrid) {
        let grid = VelocityGrid::new(n, Rule::Gauss).unwrap();
        (KernelSpec::sign(chi, &grid).unwrap(), grid)
    }

    #[test]
    fn j_at_zero_is_one() {
        for chi in [0.1, 0.5, 0.9] {
            let (k, g) = setup(chi, 8);
            assert!((dispersion_function(0.0, &k, &g).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn slope_at_zero() {
        let (k, g) = setup(0.5, 16);
        let h = 1e-7;
        let fd = (dispersion_function(h, &k, &g).unwrap() - dispersion_function(0.0, &k, &g).unwrap()) / h;
        assert!((fd + 1.0 / 6.0).abs() < 1e-7, "{fd}");
        assert!((dispersion_slope(0.0, &k, &g).unwrap() + 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn outside_range_rejected() {
        let (k, g) = setup(0.5, 8);
        assert!(dispersion_function(-0.1, &k, &g).is_err());
        assert!(dispersion_function(alpha_max(&k, &g), &k, &g).is_err());
    }

    #[test]
    fn root_in_expected_bracket() {
        let (k, g) = setup(0.5, 16);
        let r = solve_alpha(&k, &g, 1e-12).unwrap();
        assert!(r.alpha > 1.5 && r.alpha < 1.55, "{}", r.alpha);
        assert!(r.alpha < 3.0 && r.alpha < r.alpha_max);
        assert!(r.root_residual < 1e-12);
    }

    #[test]
    fn weak_bias_ratio() {
        let (k, g) = setup(0.01, 16);
        let r = solve_alpha(&k, &g, 1e-12).unwrap();
        assert!((r.alpha / 0.03 - 1.0).abs() < 0.02, "{}", r.alpha / 0.03);
    }

    #[test]
    fn normalization_and_zero_flux() {
        let (k, g) = setup(0.5, 16);
        let r = solve_alpha(&k, &g, 1e-12).unwrap();
        let m: f64 = (0..g.len()).map(|j| g.weights()[j] * k.kplus()[j] * r.g[j]).sum();
        let flux: f64 = (0..g.len()).map(|j| g.weights()[j] * g.nodes()[j] * r.g[j]).sum();
        assert!((m - 1.0).abs() < 1e-14);
        assert!(flux.abs() < 1e-12);
        assert!(r.g.iter().all(|&x| x > 0.0));
        for j in 0..g.len() {
            assert!(k.kplus()[j] - r.alpha * g.nodes()[j] > 0.0);
        }
    }

    #[test]
    fn beta_solves_quadratic() {
        for chi in [0.2, 0.5, 0.8] {
            let (k, g) = setup(chi, 16);
            let r = solve_alpha(&k, &g, 1e-12).unwrap();
            assert!(r.beta > 0.0);
            let q = 0.5 * r.beta * r.beta + r.alpha * r.beta - 2.0 * r.kappa;
            assert!(q.abs() < 1e-12, "{q}");
        }
    }

    #[test]
    fn identity_residual_small_and_linear_in_perturbation() {
        let (k, g) = setup(0.5, 16);
        let r = solve_alpha(&k, &g, 1e-12).unwrap();
        assert!(profile_identity_residual(&r, &k, &g) < 1e-12);
        let bumped = |d: f64| {
            let mut p = r.clone();
            p.alpha += d;
            profile_identity_residual(&p, &k, &g)
        };
        let (a, b) = (bumped(1e-3), bumped(2e-3));
        assert!(a > 0.0);
        assert!((b / a - 2.0).abs() < 1e-6, "{}", b / a);
    }

    #[test]
    fn unnormalized_profile_residual() {
        let (k, g) = setup(0.5, 16);
        let mut r = solve_alpha(&k, &g, 1e-12).unwrap();
        r.g = (0..g.len()).map(|j| 1.0 / (k.kplus()[j] - r.alpha * g.nodes()[j])).collect();
        let m: f64 = (0..g.len()).map(|j| g.weights()[j] * k.kplus()[j] * r.g[j]).sum();
        assert!((profile_identity_residual(&r, &k, &g) - (1.0 - m).abs()).abs() < 1e-14);
    }

    #[test]
    fn profile_jump_at_origin() {
        let chi = 0.5;
        let ratio = |n| {
            let (k, g) = setup(chi, n);
            let r = solve_alpha(&k, &g, 1e-12).unwrap();
            r.g[g.n_half()] / r.g[g.n_half() - 1]
        };
        let target = (1.0 - chi) / (1.0 + chi);
        let (a, b) = ((ratio(8) - target).abs(), (ratio(32) - target).abs());
        assert!(b < a && b < 1e-2, "{a} {b}");
    }

    #[test]
    fn zero_tolerance_rejected() {
        let (k, g) = setup(0.5, 4);
        assert!(solve_alpha(&k, &g, 0.0).is_err());
    }
}
