use velojump::dispersion::solve_alpha;
use velojump::grids::{KernelSpec, Rule, SpatialMesh, VelocityGrid};
use velojump::hypo::OperatorSet;
use velojump::kinetic::{EvolveOptions, InitialCondition, Kinetic, Scheme};
use velojump::milne::{stationary_state, PowerOptions, StationaryState};

fn state(chi: f64, n_half: usize, length: f64, half_cells: usize) -> StationaryState {
    let grid = VelocityGrid::new(n_half, Rule::Gauss).unwrap();
    let kernel = KernelSpec::sign(chi, &grid).unwrap();
    let disp = solve_alpha(&kernel, &grid, 1e-12).unwrap();
    stationary_state(&kernel, &grid, &disp, Some(length), half_cells, &PowerOptions::default())
        .unwrap()
        .2
}

fn kinetic_for(st: &StationaryState) -> Kinetic {
    Kinetic::new(&st.mesh, &st.grid, &st.kernel).unwrap()
}

#[test]
fn stationary_residual_falls_under_refinement() {
    let mut prev = f64::INFINITY;
    for n in [25, 50, 100, 200] {
        let st = state(0.5, 8, 4.0, n);
        let r = kinetic_for(&st).stationary_residual(&st.g);
        assert!(r < 0.75 * prev, "residual {r} after {prev}");
        prev = r;
    }
    assert!(prev < 0.03);
}

#[test]
fn box_velocity_profile_matches_half_space_profile() {
    for n in [50, 100, 200] {
        let st = state(0.5, 8, 4.0, n);
        let nv = st.grid.len();
        let w = st.grid.weights();
        let xs = st.mesh.centers();
        for target in [-3.5, 3.5] {
            let i = (0..xs.len())
                .min_by(|&a, &b| (xs[a] - target).abs().total_cmp(&(xs[b] - target).abs()))
                .unwrap();
            let row = &st.g[i * nv..(i + 1) * nv];
            // far field on the left is the mirror image of G
            let reference: Vec<f64> = if target > 0.0 {
                st.profile.clone()
            } else {
                (0..nv).map(|j| st.profile[st.grid.mirror(j)]).collect()
            };
            let dot = |a: &[f64], b: &[f64]| (0..nv).map(|j| w[j] * a[j] * b[j]).sum::<f64>();
            let cos = dot(row, &reference) / (dot(row, row) * dot(&reference, &reference)).sqrt();
            assert!(cos > 0.99, "cosine {cos} at x={} with {n} half cells", xs[i]);
        }
    }
}

#[test]
fn equilibrium_start_stays_put() {
    let grid = VelocityGrid::new(8, Rule::Gauss).unwrap();
    let kernel = KernelSpec::sign(0.5, &grid).unwrap();
    let mesh = SpatialMesh::centered_box(3.0, 60).unwrap();
    let kin = Kinetic::new(&mesh, &grid, &kernel).unwrap();
    let eq = kin.discrete_equilibrium(1.0).unwrap();
    let f0 = kin.initial(InitialCondition::Equilibrium, Some(&eq)).unwrap();
    let opts = EvolveOptions {
        t_end: 20.0,
        scheme: Scheme::Heun,
        reference: Some(eq.clone()),
        ..Default::default()
    };
    let (_, rep) = kin.evolve(&f0, &opts).unwrap();
    let d0 = rep.distance_discrete[0];
    assert!(rep.distance_discrete.iter().all(|d| (d - d0).abs() < 1e-10), "{:?}", rep.distance_discrete);
    assert!(d0 < 1e-10);
}

#[test]
fn different_starts_reach_the_same_state() {
    let grid = VelocityGrid::new(8, Rule::Gauss).unwrap();
    let kernel = KernelSpec::sign(0.5, &grid).unwrap();
    let mesh = SpatialMesh::centered_box(3.0, 60).unwrap();
    let kin = Kinetic::new(&mesh, &grid, &kernel).unwrap();
    let opts = EvolveOptions {
        t_end: 200.0,
        scheme: Scheme::Heun,
        ..Default::default()
    };
    let run = |ic| {
        let f0 = kin.initial(ic, None).unwrap();
        kin.evolve(&f0, &opts).unwrap().0.f
    };
    let a = run(InitialCondition::Uniform);
    let b = run(InitialCondition::TwoBump);
    let gap = kin.weighted_distance(&a, &b);
    assert!(gap < 1e-6, "gap {gap}");
}

#[test]
fn macroscopic_coercivity_is_positive_and_settles_with_box_size() {
    let lm = |chi: f64, l: f64| {
        let st = state(chi, 4, l, (l / 0.2).round() as usize);
        OperatorSet::assemble(&st).unwrap().macroscopic_coercivity().unwrap()
    };
    for chi in [0.25, 0.5, 0.75] {
        assert!(lm(chi, 3.0) > 0.0);
    }
    let seq: Vec<f64> = [3.0, 6.0, 12.0].iter().map(|&l| lm(0.5, l)).collect();
    assert!(seq.iter().all(|&x| x > 0.0), "{seq:?}");
    assert!((seq[2] - seq[1]).abs() < 0.5 * (seq[1] - seq[0]).abs(), "{seq:?}");
}
