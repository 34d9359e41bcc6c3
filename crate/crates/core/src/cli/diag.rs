use std::io::Write;

use super::config::RunConfig;
use super::report::RunReport;
use super::{DiagCommand, DistArgs, Failure};
use crate::checkpoint::load_checkpoint;
use crate::diagnostics::{
    convergence_rate, cumulative_regret, kl_divergence, merge_distance, pac_bayes_bound, performance_bound,
    simulate_merged_descent, BoundInputs, ConvergenceInputs, DescentConfig, PacBayesInputs,
};

fn dist_sq(d: &DistArgs) -> Result<f64, Failure> {
    match (d.dist_sq, &d.prev, &d.curr) {
        (Some(v), _, _) => Ok(v),
        (None, Some(p), Some(c)) => Ok(merge_distance(&load_checkpoint(p)?, &load_checkpoint(c)?)?),
        _ => Err(Failure::usage("give --dist-sq or both --prev and --curr")),
    }
}

pub fn run(which: DiagCommand, mut cfg: RunConfig, out: &mut dyn Write) -> Result<(), Failure> {
    match which {
        DiagCommand::Bound {
            f_curr,
            f_prev,
            lambda,
            lipschitz_grad,
            hess_max,
            hess_min,
            dist,
        } => {
            let (lo, hi) = performance_bound(&BoundInputs {
                f_curr,
                f_prev,
                lambda,
                lipschitz_grad,
                hess_max,
                hess_min,
                dist_sq: dist_sq(&dist)?,
            })?;
            writeln!(out, "lower,upper\n{lo},{hi}")?;
        }
        DiagCommand::Kl { lambda, sigma_sq, dist } => {
            let v = kl_divergence(&PacBayesInputs {
                lambda,
                dist_sq: dist_sq(&dist)?,
                sigma_sq,
                n: 1,
                delta: 0.5,
                empirical_loss: 0.0,
            })?;
            writeln!(out, "{v}")?;
        }
        DiagCommand::Pacbayes {
            lambda,
            sigma_sq,
            n,
            delta,
            empirical_loss,
            dist,
        } => {
            let v = pac_bayes_bound(&PacBayesInputs {
                lambda,
                dist_sq: dist_sq(&dist)?,
                sigma_sq,
                n,
                delta,
                empirical_loss,
            })?;
            writeln!(out, "{v}")?;
        }
        DiagCommand::Rho { eta, mu, lambda, hess_max } => {
            let v = convergence_rate(&ConvergenceInputs { eta, mu, lambda, hess_max })?;
            writeln!(out, "{v}")?;
        }
        DiagCommand::Regret { report, f_star } => {
            let r = RunReport::read(&report)?;
            let regret = cumulative_regret(&r.result(), f_star)?;
            let mut csv = String::from("eval,lambda,value,cumulative_regret\n");
            for (i, (o, g)) in r.trace.iter().zip(&regret).enumerate() {
                csv.push_str(&format!("{},{},{},{g}\n", i + 1, o.lambda, o.value));
            }
            out.write_all(csv.as_bytes())?;
        }
        DiagCommand::Descent {
            dim,
            eta,
            mu,
            hess_max,
            lambda,
            steps,
            seed,
            partner,
        } => {
            let seed = cfg.resolve_seed(seed)?;
            let t = simulate_merged_descent(&DescentConfig {
                dim,
                eta,
                mu,
                hess_max,
                lambda_schedule: lambda,
                steps,
                seed,
                partner: partner.into(),
            })?;
            let mut csv = String::from("step,lambda,gd_loss,merged_loss,contraction,rho\n");
            for s in &t.steps {
                let c = s.contraction.map(|c| c.to_string()).unwrap_or_default();
                csv.push_str(&format!("{},{},{},{},{c},{}\n", s.step, s.lambda, s.gd_loss, s.merged_loss, s.rho));
            }
            out.write_all(csv.as_bytes())?;
        }
    }
    Ok(())
}
