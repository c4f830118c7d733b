//! Manual solver diagnostics; run with `cargo test --test probe -- --ignored --nocapture`.

use dcgm_core::bench::{resolve_corr_weight, CorrWeight};
use dcgm_core::g2o::auto_correlations;
use dcgm_core::graph::RobustParams;
use dcgm_core::model::DcgmProblem;
use dcgm_core::pipeline::{classify_report, dcgm_solve, round_solution};
use dcgm_core::sdp::{solve_sdp, SdpOptions};
use dcgm_core::synth::SynthConfig;

#[test]
#[ignore]
fn probe_grid_solve() {
    for ratio in [0.0, 0.3, 0.5] {
        for seed in [1u64, 2] {
            let mut cfg = SynthConfig::grid(4, 6, 0.1, 0.01, seed);
            cfg.outlier_ratio = ratio;
            cfg.group_size = 3;
            let (mut graph, truth) = dcgm_core::synth::generate_grid(&cfg).unwrap();
            let params = RobustParams::at_sigma(1.0, 0.1, 0.01).unwrap();
            let w = resolve_corr_weight(&graph, &params, CorrWeight::Auto);
            graph.correlation = auto_correlations(&graph, w);
            let problem = DcgmProblem::build(&graph, &params).unwrap();
            let t = std::time::Instant::now();
            let sol = solve_sdp(&problem, &SdpOptions::default()).unwrap();
            let dt = t.elapsed().as_secs_f64();
            let (_, thetas) = round_solution(&sol.z, &problem.layout);
            let (po, pi) = classify_report(&thetas, &truth.inlier_mask);
            println!(
                "ratio {ratio} seed {seed}: dim {} iters {} conv {} rank {} obj {:.4} feas {:.2e} [{:.2}s] out {po}% in {pi}% eig {:?}",
                problem.layout.dim(),
                sol.iterations,
                sol.converged,
                sol.numerical_rank,
                sol.objective,
                sol.affine_residual,
                dt,
                &sol.eigenvalues[..5.min(sol.eigenvalues.len())]
            );
        }
    }
}

#[test]
#[ignore]
fn probe_full_pipeline() {
    let mut cfg = SynthConfig::grid(4, 6, 0.1, 0.01, 3);
    cfg.outlier_ratio = 0.5;
    cfg.group_size = 3;
    let (mut graph, truth) = dcgm_core::synth::generate_grid(&cfg).unwrap();
    let params = RobustParams::at_sigma(1.0, 0.1, 0.01).unwrap();
    let w = resolve_corr_weight(&graph, &params, CorrWeight::Auto);
    graph.correlation = auto_correlations(&graph, w);
    let t = std::time::Instant::now();
    let result = dcgm_solve(&graph, &params, &SdpOptions::default()).unwrap();
    let (po, pi) = classify_report(&result.thetas, &truth.inlier_mask);
    println!(
        "pipeline: tight {} rank {} rejected {:?} out {po}% in {pi}% refit {:.4} [{:.2}s] timings {:?}",
        result.tight,
        result.sdp.numerical_rank,
        result.rejected_edges,
        result.refit_objective,
        t.elapsed().as_secs_f64(),
        result.timings
    );
}
