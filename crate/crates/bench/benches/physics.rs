use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use fricsim::autodiff::{jvp, Dual};
use fricsim::integrators::{step, StepInput};
use fricsim::linalg::sparse_lu_solve;
use fricsim::{JacobianDetail, LinearSolverKind};
use fricsim_bench::BallFixture;

fn forces(c: &mut Criterion) {
    let fx = BallFixture::new();
    let ctx = fx.context();
    let (q, v) = (&fx.state.q, &fx.state.v);
    let dir: Vec<f64> = (0..q.len()).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect();
    let mut g = c.benchmark_group("ball");
    g.bench_function("force", |b| b.iter(|| fx.model.force(&ctx, q, v).unwrap()));
    g.bench_function("jacobian_assembly", |b| {
        b.iter(|| fx.model.force_jacobian(&ctx, q, v, JacobianDetail::Full).unwrap().dq.to_csr())
    });
    g.bench_function("dual_jvp", |b| {
        b.iter(|| {
            let vd: Vec<Dual> = v.iter().map(|&x| Dual::constant(x)).collect();
            jvp(|qd: &[Dual]| fx.model.force(&ctx, qd, &vd).unwrap(), q, &dir)
        })
    });
    let k = fx.model.force_jacobian(&ctx, q, v, JacobianDetail::Full).unwrap().dq.to_csr();
    let mass = fx.model.mass().to_vec();
    let mut t = fricsim::linalg::Triplets::new(q.len(), q.len());
    for (i, j, x) in k.triplets() {
        t.push(i, j, -fx.h * fx.h * x);
    }
    for (i, m) in mass.iter().enumerate() {
        t.push(i, i, *m);
    }
    let a = t.to_csr();
    g.bench_function("sparse_lu_solve", |b| b.iter(|| sparse_lu_solve(&a, &dir).unwrap()));
    g.finish();
}

fn steps(c: &mut Criterion) {
    let fx = BallFixture::new();
    let mut g = c.benchmark_group("backward_euler_step");
    g.sample_size(10);
    for (name, kind) in [("direct", LinearSolverKind::Direct), ("iterative", LinearSolverKind::Iterative)] {
        let cfg = fx.integrator(kind);
        g.bench_function(name, |b| {
            b.iter_batched(
                || StepInput { state: &fx.state, previous: None, h: fx.h, pairs: &fx.pairs, penalty: fx.penalty },
                |input| step(&fx.model, input, &cfg).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, forces, steps);
criterion_main!(benches);
