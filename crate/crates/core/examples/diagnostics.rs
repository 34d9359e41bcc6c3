//! Analytical diagnostics: performance band, KL and PAC-Bayes terms, the
//! contraction factor against a simulated quadratic, and cumulative regret.

use ckmerge::diagnostics::{
    convergence_rate, cumulative_regret, kl_divergence, pac_bayes_bound, performance_bound, simulate_merged_descent,
    BoundInputs, ConvergenceInputs, DescentConfig, MergePartner, PacBayesInputs,
};
use ckmerge::harness::SyntheticObjective;
use ckmerge::{optimize, OptConfig, SearchBounds};

fn main() -> ckmerge::Result<()> {
    for lambda in [0.5, 0.8, 1.0] {
        let (lo, hi) = performance_bound(&BoundInputs {
            f_curr: 0.92,
            f_prev: 0.90,
            lambda,
            lipschitz_grad: 1.0,
            hess_max: 2.0,
            hess_min: 0.1,
            dist_sq: 0.01,
        })?;
        let pb = PacBayesInputs { lambda, dist_sq: 0.01, sigma_sq: 0.01, n: 400, delta: 0.05, empirical_loss: 0.08 };
        println!(
            "lambda {lambda}: band [{lo:.4}, {hi:.4}], KL {:.4}, PAC-Bayes {:.4}",
            kl_divergence(&pb)?,
            pac_bayes_bound(&pb)?
        );
    }

    let rho = convergence_rate(&ConvergenceInputs { eta: 0.1, mu: 1.0, lambda: 0.9, hess_max: 1.0 })?;
    println!("\nrho(eta 0.1, mu 1, lambda 0.9, hess_max 1) = {rho:.6}");
    for partner in [MergePartner::Lookahead, MergePartner::Previous] {
        let t = simulate_merged_descent(&DescentConfig {
            dim: 8,
            eta: 0.1,
            mu: 0.5,
            hess_max: 4.0,
            lambda_schedule: vec![0.9],
            steps: 5,
            seed: 0,
            partner,
        })?;
        let ratios: Vec<String> = t.steps.iter().map(|s| format!("{:.4}", s.contraction.unwrap_or(0.0))).collect();
        println!("{partner:?} partner: loss ratios {} vs rho {:.4}", ratios.join(" "), t.steps[0].rho);
    }

    let f = SyntheticObjective::quadratic_peak(0.9)?;
    let res = optimize(|x| Ok(f.eval(x)), &SearchBounds::new(0.5)?, &OptConfig::default())?;
    let regret = cumulative_regret(&res, 0.0)?;
    println!("\ncumulative regret over {} evaluations: {:.5}", regret.len(), regret.last().unwrap());
    Ok(())
}
