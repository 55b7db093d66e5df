//! Sequential against data-parallel execution of the two grid-wide kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use vacuumlab::kinematics::{build_deformation_with, TensorGrid};
use vacuumlab::ode::{solve_correction, DEFAULT_ATOL, DEFAULT_RTOL};
use vacuumlab::radial::{time_derivatives, RadialDisc, RadialJets, RadialState, SeedShape};
use vacuumlab::weighted::{energy_components, truncated_index_set, AngularRule, WeightedGrid};
use vacuumlab::{derive_constants, Execution};

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn deformation(c: &mut Criterion) {
    let mut group = c.benchmark_group("deformation");
    for points in [25, 49] {
        let grid = TensorGrid::new(3, points, 1.0).unwrap();
        let omega = grid.sample_vector(|y| [0.1 * y[1].sin(), 0.1 * (y[0] * y[2]).cos(), 0.05 * y[2] * y[0]]);
        for mode in MODES {
            group.bench_with_input(BenchmarkId::new(format!("{mode:?}"), points), &omega, |b, w| {
                b.iter(|| build_deformation_with(mode, &grid, black_box(w.clone())).unwrap())
            });
        }
    }
    group.finish();
}

fn energies(c: &mut Criterion) {
    let p = derive_constants(3, 0.0, 2.0, 1.0).unwrap();
    let path = solve_correction(&p, 10.0, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
    let disc = RadialDisc::new(&p, 64).unwrap();
    let state = RadialState::from_profile(&disc, SeedShape::Bump.profile(p.r0, 1e-3));
    let (q_tt, q_ttt) = time_derivatives(&disc, &state, &path).unwrap();
    let jets = RadialJets::new(&disc, &[&state.q, &state.q_t, &q_tt, &q_ttt]);
    let indices = truncated_index_set();
    let mut group = c.benchmark_group("energies");
    for nodes in [8, 16] {
        let grid = WeightedGrid::for_energies(&p, nodes, AngularRule::Isotropic).unwrap();
        for mode in MODES {
            group.bench_with_input(BenchmarkId::new(format!("{mode:?}"), nodes), &grid, |b, g| {
                b.iter(|| energy_components(g, &jets, &p, 0.0, &indices, mode).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, deformation, energies);
criterion_main!(benches);
