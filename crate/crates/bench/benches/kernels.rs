use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use ftipc_core::harness::{Mode, RunConfig, Simulation};
use ftipc_core::numerics::{psd_estimate, QrRls};
use ftipc_core::sprc::{build_lifted, update_gain, Basis};

/// Deterministic pseudo-random regressor stream.
fn regressors(dim: usize, count: usize) -> Vec<(Vec<f64>, f64)> {
    let mut s = 0x2545_f491_4f6c_dd1du64;
    let mut next = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    (0..count).map(|_| ((0..dim).map(|_| next()).collect(), next())).collect()
}

fn qr_rls(c: &mut Criterion) {
    let data = regressors(200, 64);
    let mut rls = QrRls::new(200, 0.99999).unwrap();
    let mut i = 0;
    c.bench_function("qr_rls_update_dim200", |b| {
        b.iter(|| {
            let (x, y) = &data[i % data.len()];
            rls.update(black_box(x), black_box(*y)).unwrap();
            i += 1;
        })
    });
    c.bench_function("qr_rls_estimate_dim200", |b| b.iter(|| black_box(rls.estimate())));
}

fn lifted_gain(c: &mut Criterion) {
    let past = 100;
    let basis = Basis::new(625).unwrap();
    let hu: Vec<f64> = (0..=past).map(|m| if m == 0 { 0.0 } else { -0.15 * 0.98f64.powi(m as i32 - 1) * 0.02 }).collect();
    let hy: Vec<f64> = (0..=past).map(|m| if m == 0 { 0.0 } else { 0.1 * 0.8f64.powi(m as i32) }).collect();
    c.bench_function("build_lifted_p100", |b| b.iter(|| black_box(build_lifted(&hu, &hy, &basis))));
    let sys = build_lifted(&hu, &hy, &basis);
    c.bench_function("lqr_gain_dare", |b| b.iter(|| black_box(update_gain(&sys, 1.0, 0.1).unwrap())));
}

fn spectra(c: &mut Criterion) {
    let signal: Vec<f64> = regressors(1, 20_000).into_iter().map(|(x, _)| x[0]).collect();
    c.bench_function("psd_20000_seg2500", |b| b.iter(|| black_box(psd_estimate(&signal, 100.0, 2500).unwrap())));
}

fn simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulation_one_rotor_period");
    group.sample_size(10);
    for mode in [Mode::Baseline, Mode::SprcOnly] {
        let cfg = RunConfig { mode, fault: None, ..RunConfig::default() };
        let mut warm = Simulation::new(&cfg, None, false).unwrap();
        warm.run_to(10 * 625).unwrap();
        group.bench_function(mode.to_string(), |b| {
            b.iter_batched(
                || warm.clone(),
                |mut sim| {
                    let end = sim.k() + 625;
                    sim.run_to(end).unwrap();
                    sim
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, qr_rls, lifted_gain, spectra, simulation);
criterion_main!(benches);
