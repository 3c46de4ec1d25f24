use std::time::Instant;

use polyfeat::bench::{run_baseline, run_sur, ExperimentConfig};

fn main() {
    let config = ExperimentConfig::default();
    for n_x in [10, 30, 50] {
        let seed = config.realization_seed(0, n_x);
        let t = Instant::now();
        let out = run_sur(&config, n_x, seed).unwrap();
        println!(
            "SUR n_x={n_x} J={:.3e} energy={:.3e} J_test={:.3e} e={:.3e} e_test={:.3e} eps={:?} {:?}",
            out.metrics.j_hat_train, out.report.grad_energy, out.metrics.j_test, out.metrics.e_hat_train,
            out.metrics.e_test, out.metrics.eps_m, t.elapsed()
        );
        let t = Instant::now();
        let out = run_baseline(&config, n_x, seed).unwrap();
        println!(
            "BASE n_x={n_x} J={:.3e} J_test={:.3e} e={:.3e} e_test={:.3e} iters={} {:?}",
            out.metrics.j_hat_train,
            out.metrics.j_test,
            out.metrics.e_hat_train,
            out.metrics.e_test,
            out.descent.unwrap().iterations,
            t.elapsed()
        );
    }
}
