mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use velojump::config::RunConfig;
use velojump::dispersion::solve_alpha;
use velojump::grids::{KernelSpec, SpatialMesh, VelocityGrid};
use velojump::hypo::OperatorSet;
use velojump::kinetic::{EvolveOptions, Kinetic};
use velojump::macroscopic::{log_slope, tail_compare, Cattaneo, DriftDiffusionProblem, Variant};
use velojump::milne::{decay_diagnostics, stationary_state, stationary_state_with, PowerOptions};
use velojump::{verify, Error};

use output::{config_hash, num, Artifacts};
use svg::{log_plot, Series};

#[derive(Parser)]
#[command(name = "velojump", version, about = "Stationary states and relaxation of a biased velocity-jump model")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV, JSON and SVG artifacts.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Seed for randomized checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct Model {
    #[arg(long)]
    chi: Option<f64>,
    #[arg(long = "n-half")]
    n_half: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Root of the dispersion relation and the profile G.
    Dispersion {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        rule: Option<String>,
    },
    /// Half-space eigenproblem and the symmetric stationary state.
    Stationary {
        #[command(flatten)]
        model: Model,
        #[arg(long = "L")]
        length: Option<f64>,
        /// Half-line cells.
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Time-dependent kinetic solver on the box.
    Evolve {
        #[command(flatten)]
        model: Model,
        #[arg(long = "L")]
        length: Option<f64>,
        /// Box cells (even).
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
        #[arg(long)]
        ic: Option<String>,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        cfl: Option<f64>,
    },
    /// Dense operator identities, coercivity and modified entropy.
    Operators {
        #[arg(long)]
        chi: Option<f64>,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long = "n-half")]
        n_half: Option<usize>,
        #[arg(long = "L")]
        length: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Macroscopic limits and tail comparison.
    Macro {
        #[arg(long)]
        chi: Option<f64>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long = "L")]
        length: Option<f64>,
        /// Run every variant plus the kinetic reference.
        #[arg(long = "compare-all")]
        compare_all: bool,
    },
    /// Full acceptance suite with a pass/fail table.
    VerifyAll {
        #[arg(long)]
        chi: Option<f64>,
    },
}

enum Failure {
    Config(String),
    Numerical(String),
    Io(std::io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } | Error::Parse(_) | Error::Hypothesis { .. } => Failure::Config(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

type Outcome = std::result::Result<bool, Failure>;

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_model(cfg: &mut RunConfig, m: &Model) {
    set(&mut cfg.model.chi, m.chi);
    set(&mut cfg.model.n_half, m.n_half);
}

fn load(cli: &Cli) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    set(&mut cfg.output, cli.out.clone());
    set(&mut cfg.seed, cli.seed);
    match &cli.cmd {
        Cmd::Dispersion { model, rule } => {
            apply_model(&mut cfg, model);
            if let Some(r) = rule {
                cfg.model.rule = r.parse()?;
            }
        }
        Cmd::Stationary { model, length, nx, epsilon } => {
            apply_model(&mut cfg, model);
            if length.is_some() {
                cfg.stationary.length = *length;
            }
            set(&mut cfg.stationary.nx, *nx);
            set(&mut cfg.stationary.epsilon, *epsilon);
        }
        Cmd::Evolve { model, length, nx, t_end, ic, scheme, cfl } => {
            apply_model(&mut cfg, model);
            set(&mut cfg.evolve.length, *length);
            set(&mut cfg.evolve.nx, *nx);
            set(&mut cfg.evolve.t_end, *t_end);
            set(&mut cfg.evolve.ic, ic.clone());
            set(&mut cfg.evolve.scheme, scheme.clone());
            set(&mut cfg.evolve.cfl, *cfl);
        }
        Cmd::Operators { chi, nx, n_half, length, epsilon } => {
            set(&mut cfg.model.chi, *chi);
            set(&mut cfg.operators.nx, *nx);
            set(&mut cfg.operators.n_half, *n_half);
            set(&mut cfg.operators.length, *length);
            set(&mut cfg.operators.epsilon, *epsilon);
        }
        Cmd::Macro { chi, variant, nx, length, .. } => {
            set(&mut cfg.model.chi, *chi);
            set(&mut cfg.macroscopic.variant, variant.clone());
            set(&mut cfg.macroscopic.nx, *nx);
            if length.is_some() {
                cfg.macroscopic.length = *length;
            }
        }
        Cmd::VerifyAll { chi } => set(&mut cfg.model.chi, *chi),
    }
    cfg.validate()?;
    Ok(cfg)
}

fn setup(cfg: &RunConfig, n_half: usize) -> std::result::Result<(VelocityGrid, KernelSpec), Failure> {
    let grid = VelocityGrid::new(n_half, cfg.model.rule)?;
    let kernel = KernelSpec::sign(cfg.model.chi, &grid)?;
    Ok((grid, kernel))
}

fn power(cfg: &RunConfig) -> PowerOptions {
    PowerOptions {
        tol: cfg.tolerances.eigen,
        ..Default::default()
    }
}

fn report(art: &mut Artifacts, name: &str, value: Value) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(&value).expect("report serializes") + "\n";
    println!("{text}");
    art.text(name, &text)
}

fn dispersion(cfg: &RunConfig, art: &mut Artifacts) -> Outcome {
    let (grid, kernel) = setup(cfg, cfg.model.n_half)?;
    let d = solve_alpha(&kernel, &grid, cfg.tolerances.root)?;
    art.csv(
        "dispersion.csv",
        &["v", "weight", "kplus", "G"],
        (0..grid.len()).map(|j| [num(grid.nodes()[j]), num(grid.weights()[j]), num(kernel.kplus()[j]), num(d.g[j])]),
    )?;
    report(
        art,
        "dispersion.json",
        json!({
            "config_hash": art.hash(),
            "chi": cfg.model.chi,
            "n_half": cfg.model.n_half,
            "alpha": d.alpha,
            "alpha_max": d.alpha_max,
            "kappa": d.kappa,
            "beta": d.beta,
            "root_residual": d.root_residual,
            "iterations": d.iterations,
        }),
    )?;
    Ok(true)
}

fn stationary(cfg: &RunConfig, art: &mut Artifacts) -> Outcome {
    let (grid, kernel) = setup(cfg, cfg.model.n_half)?;
    let disp = solve_alpha(&kernel, &grid, cfg.tolerances.root)?;
    let s = &cfg.stationary;
    let (milne, pair, st) = stationary_state_with(&kernel, &grid, &disp, s.length, s.nx, s.epsilon, &power(cfg))?;
    let decay = decay_diagnostics(&milne, &st.milne)?;
    let nv = grid.len();
    let xs = st.mesh.centers();
    art.csv(
        "g.csv",
        &["x", "v", "g"],
        (0..st.g.len()).map(|k| [num(xs[k / nv]), num(grid.nodes()[k % nv]), num(st.g[k])]),
    )?;
    let rho = st.density();
    art.csv("density.csv", &["x", "rho"], xs.iter().zip(&rho).map(|(x, r)| [num(*x), num(*r)]))?;
    art.text(
        "density.svg",
        &log_plot("stationary density", "x", "rho_g", &[Series { label: "rho_g", x: xs, y: &rho }]),
    )?;
    report(
        art,
        "stationary.json",
        json!({
            "config_hash": art.hash(),
            "alpha": st.alpha,
            "lambda": pair.lambda,
            "power_iterations": pair.iterations,
            "H": st.h,
            "C": st.sandwich,
            "beta": st.beta,
            "fitted_rate": decay.fitted_rate,
            "fit_r_squared": decay.r_squared,
            "C0": decay.c0,
            "H_spread": decay.h_spread,
            "boundary_flux": st.boundary_flux,
            "length": st.mesh.length(),
            "box_cells": st.mesh.len(),
        }),
    )?;
    Ok(true)
}

fn evolve(cfg: &RunConfig, art: &mut Artifacts) -> Outcome {
    let (grid, kernel) = setup(cfg, cfg.model.n_half)?;
    let e = &cfg.evolve;
    let disp = solve_alpha(&kernel, &grid, cfg.tolerances.root)?;
    let (_, _, st) = stationary_state(&kernel, &grid, &disp, Some(e.length), e.nx / 2, &power(cfg))?;
    let mesh = SpatialMesh::centered_box(e.length, e.nx)?;
    let kin = Kinetic::new(&mesh, &grid, &kernel)?;
    // the equilibrium start is the scheme's own fixed point
    let f0 = kin.initial(cfg.initial_condition()?, None)?;
    let opts = EvolveOptions {
        t_end: e.t_end,
        cfl: e.cfl,
        scheme: cfg.scheme()?,
        reference: Some(st.g.clone()),
        record_every: e.record_every,
        ..Default::default()
    };
    let (last, rep) = kin.evolve(&f0, &opts)?;
    art.csv(
        "timeseries.csv",
        &["t", "mass", "d", "d_discrete"],
        (0..rep.times.len()).map(|k| {
            [num(rep.times[k]), num(rep.mass[k]), num(rep.distance[k]), num(rep.distance_discrete[k])]
        }),
    )?;
    let nv = grid.len();
    let xs = mesh.centers();
    for (name, f) in [("snapshot_initial.csv", &f0), ("snapshot_final.csv", &last.f)] {
        art.csv(name, &["x", "v", "f"], (0..f.len()).map(|k| [num(xs[k / nv]), num(grid.nodes()[k % nv]), num(f[k])]))?;
    }
    art.text(
        "distance.svg",
        &log_plot(
            "distance to equilibrium",
            "t",
            "d(t)",
            &[
                Series { label: "half-space state", x: &rep.times, y: &rep.distance },
                Series { label: "discrete equilibrium", x: &rep.times, y: &rep.distance_discrete },
            ],
        ),
    )?;
    report(
        art,
        "evolve.json",
        json!({
            "config_hash": art.hash(),
            "steps": rep.steps,
            "dt": rep.dt,
            "mass_drift": rep.mass_drift,
            "lambda_fit": rep.lambda_fit,
            "r_squared": rep.r_squared,
            "fit_residual": rep.fit_residual,
            "fit_points": rep.fit_points,
            "final_distance": rep.distance.last(),
            "final_distance_discrete": rep.distance_discrete.last(),
        }),
    )?;
    Ok(true)
}

fn operators(cfg: &RunConfig, art: &mut Artifacts) -> Outcome {
    let o = &cfg.operators;
    let (grid, kernel) = setup(cfg, o.n_half)?;
    let disp = solve_alpha(&kernel, &grid, cfg.tolerances.root)?;
    let (_, _, st) = stationary_state(&kernel, &grid, &disp, Some(o.length), o.nx / 2, &power(cfg))?;
    let ops = OperatorSet::assemble(&st)?;
    let checks = ops.identity_report(cfg.seed, o.trials);
    let coerc = ops.microscopic_coercivity()?;
    let lm = ops.macroscopic_coercivity()?;
    let probe = ops.entropy_probe(o.epsilon)?;
    let atpi = ops.atpi_ratio(&probe, lm, cfg.seed, o.trials);
    let kin = Kinetic::new(&ops.mesh, &ops.grid, &kernel)?;
    let f0 = kin.initial(velojump::kinetic::InitialCondition::Uniform, None)?;
    let traj = ops.kinetic_entropy_trajectory(&probe, &kin, &f0, 30.0, 0.5, velojump::kinetic::Scheme::Heun)?;

    let mut rows: Vec<(String, f64, f64, bool)> =
        checks.iter().map(|c| (c.name.to_string(), c.residual, c.tolerance, c.passed)).collect();
    rows.push(("coercivity ratio / Kmin".into(), coerc.ratio / coerc.kmin, 0.95, coerc.ratio >= 0.95 * coerc.kmin));
    rows.push(("|L| <= 2Kmax(1+C^2)".into(), coerc.l_norm, coerc.l_bound, coerc.l_norm <= coerc.l_bound));
    rows.push(("|A| <= 1/2".into(), probe.norm_a, 0.5, probe.norm_a <= 0.5 + 1e-12));
    rows.push(("|TA| <= 1".into(), probe.norm_ta, 1.0, probe.norm_ta <= 1.0 + 1e-12));
    rows.push(("(TPi)* = -Pi T".into(), probe.adjoint_mismatch, 1e-12, probe.adjoint_mismatch < 1e-12));
    rows.push(("<ATPi f,f> / bound".into(), atpi, 1.0, atpi >= 1.0 - 1e-10));
    rows.push(("max increase of H/H0".into(), traj.max_increase, 0.0, traj.max_increase <= 0.0));
    let all = rows.iter().all(|r| r.3);
    art.csv(
        "operators.csv",
        &["check", "measured", "tolerance", "passed"],
        rows.iter().map(|(n, m, t, p)| [n.clone(), num(*m), num(*t), p.to_string()]),
    )?;
    art.csv(
        "entropy.csv",
        &["t", "H", "norm_sq"],
        (0..traj.times.len()).map(|k| [num(traj.times[k]), num(traj.entropy[k]), num(traj.norm_sq[k])]),
    )?;
    art.text(
        "entropy.svg",
        &log_plot(
            "modified entropy along the kinetic scheme",
            "t",
            "H",
            &[
                Series { label: "H[f - f_inf]", x: &traj.times, y: &traj.entropy },
                Series { label: "|f - f_inf|^2", x: &traj.times, y: &traj.norm_sq },
            ],
        ),
    )?;
    report(
        art,
        "operators.json",
        json!({
            "config_hash": art.hash(),
            "cells": ops.nx,
            "velocities": ops.nv,
            "checks": rows.iter().map(|(n, m, t, p)| json!({"name": n, "measured": m, "tolerance": t, "passed": p})).collect::<Vec<_>>(),
            "kmin": coerc.kmin,
            "coercivity_ratio": coerc.ratio,
            "l_norm": coerc.l_norm,
            "lambda_m": lm,
            "epsilon": probe.epsilon,
            "norm_a": probe.norm_a,
            "norm_ta": probe.norm_ta,
            "norm_at_perp": probe.norm_at_perp,
            "norm_al": probe.norm_al,
            "entropy_rate": traj.fitted_rate,
            "distance_to_half_space_state": ops.milne_distance,
        }),
    )?;
    Ok(all)
}

fn macro_variant(cfg: &RunConfig, art: &mut Artifacts, variant: Variant, prefix: &str) -> std::result::Result<(f64, f64), Failure> {
    let chi = cfg.model.chi;
    let m = &cfg.macroscopic;
    match variant {
        Variant::WeakBias => {
            let l = m.length.unwrap_or(4.0);
            let wb = DriftDiffusionProblem::weak_bias(l, m.nx)?;
            let st = wb.steady_state(&vec![1.0; m.nx], 1e-10, 10_000)?;
            let xs = wb.mesh.centers();
            art.csv(
                &format!("{prefix}weak_bias.csv"),
                &["y", "rho", "reference"],
                (0..m.nx).map(|i| [num(xs[i]), num(st.rho[i]), num(wb.reference[i])]),
            )?;
            let (slope, _) = log_slope(xs, &st.rho, 0.5 * l, l)?;
            Ok((chi * slope, -3.0 * chi))
        }
        Variant::Cattaneo => {
            let l = m.length.unwrap_or(2.5 / chi);
            let c = Cattaneo::new(chi, SpatialMesh::centered_box(l, m.nx)?)?;
            let st = c.steady_state(m.cfl, 1e-10, 50_000_000)?;
            art.csv(
                &format!("{prefix}cattaneo.csv"),
                &["x", "f_plus", "f_minus", "reference"],
                (0..m.nx).map(|i| [num(st.x[i]), num(st.plus[i]), num(st.minus[i]), num((-2.0 * chi * st.x[i].abs()).exp())]),
            )?;
            let (slope, _) = log_slope(&st.x, &st.plus, 0.0, l)?;
            Ok((slope, -2.0 * chi))
        }
        Variant::ModifiedEntropy => {
            let (grid, kernel) = setup(cfg, cfg.model.n_half)?;
            let disp = solve_alpha(&kernel, &grid, cfg.tolerances.root)?;
            let (_, _, st) = stationary_state(&kernel, &grid, &disp, cfg.stationary.length, cfg.stationary.nx, &power(cfg))?;
            let me = DriftDiffusionProblem::modified_entropy(&st)?;
            let steady = me.steady_state(&vec![1.0; me.len()], 1e-10, 10_000)?;
            let xs = me.mesh.centers();
            art.csv(
                &format!("{prefix}modified_entropy.csv"),
                &["x", "rho", "reference", "D"],
                (0..me.len()).map(|i| [num(xs[i]), num(steady.rho[i]), num(me.reference[i]), num(me.diffusivity[i])]),
            )?;
            let l = me.mesh.length();
            let (slope, _) = log_slope(xs, &steady.rho, 0.5 * l, l)?;
            Ok((slope, -st.alpha))
        }
    }
}

fn macroscopic(cfg: &RunConfig, art: &mut Artifacts, compare_all: bool) -> Outcome {
    if !compare_all {
        let v = cfg.variant()?;
        let (slope, expected) = macro_variant(cfg, art, v, "")?;
        report(
            art,
            "macro.json",
            json!({"config_hash": art.hash(), "variant": v.to_string(), "chi": cfg.model.chi, "slope": slope, "expected": expected}),
        )?;
        return Ok(true);
    }
    let mut rows = Vec::new();
    for v in [Variant::ModifiedEntropy, Variant::WeakBias, Variant::Cattaneo] {
        let (slope, expected) = macro_variant(cfg, art, v, "compare_")?;
        rows.push((v.to_string(), slope, expected));
    }
    let (grid, kernel) = setup(cfg, cfg.model.n_half)?;
    let disp = solve_alpha(&kernel, &grid, cfg.tolerances.root)?;
    let (_, _, st) = stationary_state(&kernel, &grid, &disp, cfg.stationary.length, cfg.stationary.nx, &power(cfg))?;
    let tail = tail_compare(&st, cfg.macroscopic.length.unwrap_or(4.0), 160)?;
    rows.insert(0, ("kinetic".into(), tail.kinetic_slope, -tail.alpha));
    art.csv(
        "slopes.csv",
        &["model", "slope", "expected"],
        rows.iter().map(|(n, s, e)| [n.clone(), num(*s), num(*e)]),
    )?;
    report(art, "tail.json", json!({"config_hash": art.hash(), "tail": tail}))?;
    Ok(true)
}

fn verify_all(cfg: &RunConfig, art: &mut Artifacts) -> Outcome {
    let outcomes = verify::run_all(cfg);
    for o in &outcomes {
        println!("[{}] {:>2} {:<36} {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
        eprintln!("     criterion {} took {:.2} s", o.id, o.seconds);
    }
    art.csv(
        "verify.csv",
        &["id", "criterion", "passed", "detail"],
        outcomes.iter().map(|o| [o.id.to_string(), o.name.to_string(), o.passed.to_string(), format!("\"{}\"", o.detail.replace('"', "'"))]),
    )?;
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("{passed}/{} criteria passed", outcomes.len());
    Ok(passed == outcomes.len())
}

fn run(cli: &Cli) -> Outcome {
    let cfg = load(cli)?;
    // the output location does not change any result, so it stays out of the hash
    let mut hashed = cfg.clone();
    hashed.output.clear();
    let mut art = Artifacts::new(std::path::Path::new(&cfg.output), config_hash(&hashed.to_toml()))?;
    art.text("config.toml", &cfg.to_toml())?;
    let ok = match &cli.cmd {
        Cmd::Dispersion { .. } => dispersion(&cfg, &mut art),
        Cmd::Stationary { .. } => stationary(&cfg, &mut art),
        Cmd::Evolve { .. } => evolve(&cfg, &mut art),
        Cmd::Operators { .. } => operators(&cfg, &mut art),
        Cmd::Macro { compare_all, .. } => macroscopic(&cfg, &mut art, *compare_all),
        Cmd::VerifyAll { .. } => verify_all(&cfg, &mut art),
    }?;
    for p in art.written() {
        eprintln!("wrote {}", p.display());
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(m)) => {
            eprintln!("invalid configuration: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical abort: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Io(e)) => {
            eprintln!("i/o error: {e}");
            ExitCode::from(3)
        }
    }
}
