//! A miniature version of the full benchmark: train two priors, then
//! sweep measurement counts under both scenarios (canonical pose and
//! unknown rotation) and print the aggregate table.

use eqcs::data::synth_oriented;
use eqcs::models::{build, train, TrainConfig, VaeSpec};
use eqcs::recovery::{benchmark, BenchmarkConfig, BenchmarkJob, RecoveryConfig, Scheme};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let data = synth_oriented(40, 16, &mut rng);
    let tc = TrainConfig { epochs: 15, batch_size: 20, seed: 3, ..Default::default() };

    let mut eq = build(&VaeSpec::eq(4, 16, 16, 3)).unwrap();
    train(&mut eq, &data, &tc).unwrap();
    let mut conv = build(&VaeSpec::conv(16, 16, 4)).unwrap();
    train(&mut conv, &data, &tc).unwrap();

    let jobs = vec![
        BenchmarkJob { name: "eq".into(), scheme: Scheme::Equivariant, model: &eq },
        BenchmarkJob { name: "conv".into(), scheme: Scheme::Coordinate, model: &conv },
    ];
    println!("scenario\tmodel\tgroup\tm\ttrials\tmean_mse\tstd_mse\tconv%\titers");
    for rotate in [false, true] {
        let cfg = BenchmarkConfig {
            m_values: vec![128, 192],
            trials: 4,
            noise_std: 0.0,
            rotate,
            quarter_only: true,
            seed: 61,
            recovery: RecoveryConfig {
                max_iters: 120,
                restarts: 2,
                angle_grid: 4,
                ..Default::default()
            },
        };
        for r in benchmark(&jobs, &data, &cfg) {
            println!(
                "{}\t{}\tC{}\t{}\t{}\t{:.3e}\t{:.3e}\t{:.0}\t{:.0}",
                r.scenario, r.model, r.group, r.m, r.trials, r.mean_mse, r.std_mse,
                r.converged_pct, r.mean_iters
            );
        }
    }
}
