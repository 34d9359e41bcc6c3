use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::RunConfig;
use super::evaluator::{Evaluator, EvaluatorSpec};
use super::report::{Artifacts, RunReport, Timing};
use super::{
    CompareArgs, Failure, MergeArgs, OptimizeArgs, PortfolioArg, Strategy, SweepArgs, SweepMode, ToyArgs,
    EXIT_EVALUATOR,
};
use crate::baselines::{greedy_search, grid_search, random_search};
use crate::bayesopt::{optimize as run_bo, OptResult, Portfolio, SearchBounds, MAX_BUDGET};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::error::Error;
use crate::harness::make_toy_checkpoints;
use crate::merge::{greedy_soup, pairwise_merge};

type CmdResult = Result<(), Failure>;

fn write_output(path: Option<&Path>, text: &str, out: &mut dyn Write) -> CmdResult {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| Failure::new(super::EXIT_IO, format!("cannot write {}: {e}", p.display()))),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

fn load_pair(prev: &Option<PathBuf>, curr: &Option<PathBuf>) -> Result<Option<(Checkpoint, Checkpoint)>, Failure> {
    match (prev, curr) {
        (Some(p), Some(c)) => Ok(Some((load_checkpoint(p)?, load_checkpoint(c)?))),
        _ => Ok(None),
    }
}

fn evaluator_spec(flag: Option<String>, cfg: &mut RunConfig) -> Result<EvaluatorSpec, Failure> {
    if flag.is_some() {
        cfg.evaluator = flag;
    }
    cfg.evaluator
        .as_deref()
        .ok_or_else(|| Failure::usage("no evaluator given (--evaluator or config `evaluator`)"))?
        .parse()
}

fn bounds(alpha: f64) -> Result<SearchBounds, Failure> {
    SearchBounds::new(alpha).map_err(|e| Failure::usage(e.to_string()))
}

fn path_string(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

pub fn merge(a: MergeArgs, out: &mut dyn Write) -> CmdResult {
    if !(0.0..=1.0).contains(&a.lambda) {
        return Err(Failure::usage(format!("--lambda {} must lie in [0, 1]", a.lambda)));
    }
    let prev = load_checkpoint(&a.prev)?;
    let curr = load_checkpoint(&a.curr)?;
    let merged = pairwise_merge(&prev, &curr, a.lambda)?;
    save_checkpoint(&merged, &a.out)?;
    writeln!(out, "merged {} elements with lambda {} into {}", merged.numel(), a.lambda, a.out.display())?;
    Ok(())
}

pub fn optimize(a: OptimizeArgs, mut cfg: RunConfig, out: &mut dyn Write) -> CmdResult {
    let start = Instant::now();
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.budget {
        cfg.optimizer.budget = v;
    }
    if let Some(v) = a.grid_resolution {
        cfg.optimizer.grid_resolution = v;
    }
    if let Some(p) = a.portfolio {
        cfg.optimizer.portfolio = match p {
            PortfolioArg::Hedge => Portfolio::Hedge,
            PortfolioArg::Ei => Portfolio::Ei,
            PortfolioArg::Pi => Portfolio::Pi,
            PortfolioArg::Ucb => Portfolio::Ucb,
        };
    }
    if let Some(s) = a.task_seed {
        cfg.task.seed = s;
    }
    cfg.resolve_seed(a.seed)?;
    let spec = evaluator_spec(a.evaluator, &mut cfg)?;
    let bounds = bounds(cfg.alpha)?;
    cfg.optimizer.validate().map_err(|e| Failure::usage(e.to_string()))?;

    let pair = load_pair(&a.prev, &a.curr)?;
    let evaluator = Evaluator::build(&spec, &cfg.task, &cfg.model, None)?;
    if pair.is_none() && !evaluator.is_synthetic() && !matches!(evaluator, Evaluator::Const(_)) {
        return Err(Failure::usage("this evaluator needs --prev and --curr"));
    }
    if pair.is_none() && a.out.is_some() {
        return Err(Failure::usage("--out needs --prev and --curr"));
    }
    if let Some((p, c)) = &pair {
        crate::checkpoint::ensure_compat(p, c)?;
    }

    let artifacts = Artifacts {
        prev: path_string(&a.prev),
        curr: path_string(&a.curr),
        report: path_string(&a.report),
        checkpoint: path_string(&a.out),
    };
    let pair_ref = pair.as_ref().map(|(p, c)| (p, c));
    let outcome = run_bo(|l| evaluator.eval_lambda(pair_ref, l), &bounds, &cfg.optimizer);

    let finish = |mut report: RunReport| -> CmdResult {
        report.timing = Timing {
            total_seconds: start.elapsed().as_secs_f64(),
        };
        match &a.report {
            Some(p) => report.write(p),
            None => Ok(()),
        }
    };
    match outcome {
        Ok(res) => {
            if let (Some((p, c)), Some(path)) = (&pair, &a.out) {
                save_checkpoint(&pairwise_merge(p, c, res.best_lambda)?, path)?;
            }
            finish(RunReport::new("optimize", &cfg, &res, artifacts))?;
            writeln!(
                out,
                "best lambda {} with score {} after {} evaluations",
                res.best_lambda,
                res.best_value,
                res.trace.len()
            )?;
            Ok(())
        }
        Err(Error::Aborted { reason, partial }) => {
            let mut report = RunReport::new("optimize", &cfg, &partial, artifacts);
            report.status = "aborted".into();
            report.error = Some(reason.clone());
            finish(report)?;
            Err(Failure::new(
                EXIT_EVALUATOR,
                format!("optimization aborted after {} evaluations: {reason}", partial.trace.len()),
            ))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn sweep(a: SweepArgs, mut cfg: RunConfig, out: &mut dyn Write) -> CmdResult {
    if let Some(s) = a.task_seed {
        cfg.task.seed = s;
    }
    let spec = evaluator_spec(a.evaluator, &mut cfg)?;
    let evaluator = Evaluator::build(&spec, &cfg.task, &cfg.model, None)?;
    let eval_err = |e: Error| Failure::new(EXIT_EVALUATOR, format!("evaluator failed: {e}"));
    let mut csv = String::new();
    match a.mode {
        SweepMode::LambdaCurve => {
            if a.resolution < 2 || !(0.0..1.0).contains(&a.from) {
                return Err(Failure::usage("need --resolution >= 2 and --from in [0, 1)"));
            }
            let pair = load_pair(&a.prev, &a.curr)?;
            if let Some((p, c)) = &pair {
                crate::checkpoint::ensure_compat(p, c)?;
            }
            let pair_ref = pair.as_ref().map(|(p, c)| (p, c));
            csv.push_str("lambda,score\n");
            let last = (a.resolution - 1) as f64;
            for i in 0..a.resolution {
                let t = i as f64 / last;
                let lambda = (1.0 - t) * a.from + t;
                let score = evaluator.eval_lambda(pair_ref, lambda).map_err(eval_err)?;
                csv.push_str(&format!("{lambda},{score}\n"));
            }
        }
        SweepMode::PairwiseMatrix | SweepMode::SoupK => {
            if a.ckpts.len() < 2 {
                return Err(Failure::usage("this mode needs at least two --ckpt paths"));
            }
            if evaluator.is_synthetic() {
                return Err(Failure::usage("this mode needs a checkpoint evaluator"));
            }
            let ckpts = a.ckpts.iter().map(load_checkpoint).collect::<Result<Vec<_>, _>>()?;
            for c in &ckpts[1..] {
                crate::checkpoint::ensure_compat(&ckpts[0], c)?;
            }
            let score = |c: &Checkpoint| evaluator.eval_checkpoint(c);
            if a.mode == SweepMode::PairwiseMatrix {
                let n = ckpts.len();
                csv.push_str("index");
                for j in 0..n {
                    csv.push_str(&format!(",{j}"));
                }
                csv.push('\n');
                for i in 0..n {
                    csv.push_str(&i.to_string());
                    for j in 0..n {
                        let v = score(&pairwise_merge(&ckpts[i], &ckpts[j], 0.5)?).map_err(eval_err)?;
                        csv.push_str(&format!(",{v}"));
                    }
                    csv.push('\n');
                }
            } else {
                csv.push_str("start,k,members,score\n");
                for k in 2..=4.min(ckpts.len()) {
                    for start in 0..=ckpts.len() - k {
                        let (_, trace) = greedy_soup(&ckpts[start..start + k], score).map_err(|e| match e {
                            Error::Compat(_) => e.into(),
                            other => eval_err(other),
                        })?;
                        let members: Vec<String> =
                            trace.final_members.iter().map(|m| (start + m).to_string()).collect();
                        csv.push_str(&format!("{start},{k},{},{}\n", members.join(";"), trace.final_score));
                    }
                }
            }
        }
    }
    write_output(a.out.as_deref(), &csv, out)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::Bo => "bo",
        Strategy::Grid => "grid",
        Strategy::Random => "random",
        Strategy::Greedy => "greedy",
    }
}

pub fn compare(a: CompareArgs, mut cfg: RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(b) = a.budget {
        cfg.optimizer.budget = b;
        cfg.baseline.budget = b;
    }
    if let Some(s) = a.task_seed {
        cfg.task.seed = s;
    }
    if a.seeds == 0 {
        return Err(Failure::usage("--seeds must be >= 1"));
    }
    let base_seed = cfg.resolve_seed(a.seed)?;
    let spec = evaluator_spec(a.objective, &mut cfg)?;
    let bounds = bounds(cfg.alpha)?;
    let budget = cfg.optimizer.budget;
    if !(2..=MAX_BUDGET).contains(&budget) {
        return Err(Failure::usage(format!("--budget {budget} outside [2, {MAX_BUDGET}]")));
    }
    let pair = load_pair(&a.prev, &a.curr)?;
    if let Some((p, c)) = &pair {
        crate::checkpoint::ensure_compat(p, c)?;
    }
    let pair_ref = pair.as_ref().map(|(p, c)| (p, c));

    let seeds: Vec<u64> = (0..a.seeds).map(|i| base_seed + i).collect();
    let evaluators = seeds
        .iter()
        .map(|&s| Evaluator::build(&spec, &cfg.task, &cfg.model, Some(s)))
        .collect::<Result<Vec<_>, _>>()?;
    if pair.is_none() && !evaluators[0].is_synthetic() && !matches!(evaluators[0], Evaluator::Const(_)) {
        return Err(Failure::usage("this objective needs --prev and --curr"));
    }

    let mut csv = String::from("strategy,seed,best_lambda,best_value,evaluations\n");
    let mut summary = String::from("strategy,runs,median,q1,q3,iqr\n");
    for &strategy in &a.strategies {
        let mut bests = Vec::new();
        for (ev, &seed) in evaluators.iter().zip(&seeds) {
            let f = |l: f64| ev.eval_lambda(pair_ref, l);
            let mut opt = cfg.optimizer.clone();
            opt.seed = seed;
            let mut base = cfg.baseline.clone();
            base.seed = seed;
            let res: Result<OptResult, Error> = match strategy {
                Strategy::Bo => run_bo(f, &bounds, &opt),
                Strategy::Grid => grid_search(f, &bounds, &base),
                Strategy::Random => random_search(f, &bounds, &base),
                Strategy::Greedy => greedy_search(f, &bounds, &base),
            };
            let res = res.map_err(|e| match e {
                Error::Domain(m) => Failure::usage(m),
                other => other.into(),
            })?;
            let name = strategy_name(strategy);
            csv.push_str(&format!(
                "{name},{seed},{},{},{}\n",
                res.best_lambda,
                res.best_value,
                res.trace.len()
            ));
            bests.push(res.best_value);
        }
        bests.sort_by(|x, y| x.total_cmp(y));
        let (q1, med, q3) = (quantile(&bests, 0.25), quantile(&bests, 0.5), quantile(&bests, 0.75));
        summary.push_str(&format!(
            "{},{},{med},{q1},{q3},{}\n",
            strategy_name(strategy),
            bests.len(),
            q3 - q1
        ));
    }
    write_output(a.out.as_deref(), &csv, out)?;
    err.write_all(summary.as_bytes())?;
    if let Some(p) = &a.summary {
        write_output(Some(p), &summary, out)?;
    }
    Ok(())
}

pub fn toy(a: ToyArgs, mut cfg: RunConfig, out: &mut dyn Write) -> CmdResult {
    if let Some(s) = a.snapshots {
        cfg.training.snapshot_steps = s;
    }
    if let Some(s) = a.steps {
        cfg.training.steps = s;
    }
    if let Some(lr) = a.lr {
        cfg.training.lr = lr;
    }
    if let Some(s) = a.task_seed {
        cfg.task.seed = s;
    }
    let seed = cfg.resolve_seed(a.seed)?;
    let ckpts = make_toy_checkpoints(&cfg.task, &cfg.model, &cfg.training, seed).map_err(|e| match e {
        Error::Domain(m) => Failure::usage(m),
        other => other.into(),
    })?;
    std::fs::create_dir_all(&a.out_dir)?;
    for (mut c, step) in ckpts.into_iter().zip(&cfg.training.snapshot_steps) {
        c.set_meta("seed", seed.to_string());
        c.set_meta("task_seed", cfg.task.seed.to_string());
        let path = a.out_dir.join(format!("step_{step}.ckpt"));
        save_checkpoint(&c, &path)?;
        writeln!(out, "{}", path.display())?;
    }
    Ok(())
}
