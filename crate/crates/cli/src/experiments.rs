//! Convergence on random binary Gramians and the row-order comparison.

use std::path::Path;
use std::time::Instant;

use ecfkit::data::{read_design_csv, write_coding_csv};
use ecfkit::design::{binary_gramian, code_length, min_code_length, DesignMatrix};
use ecfkit::ecf::{factorize, make_policy, CorrectionPolicy, EcfOptions, FactorizationResult, UpdateOrder};
use ecfkit::ecoc::CodingMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::{emit_report, num, usage, write_csv, CliResult, ConvergenceArgs, OrderArgs};

/// Slack allowed when checking that a trace never goes up.
const MONOTONE_SLACK: f64 = 1e-8;

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| {
        ecfkit::Error::Io {
            path: dir.to_path_buf(),
            source,
        }
        .into()
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Column-wise mean and std of traces padded with their last value to `len`.
fn curve(traces: &[Vec<f64>], len: usize) -> (Vec<f64>, Vec<f64>) {
    (0..len)
        .map(|t| {
            let col: Vec<f64> = traces.iter().map(|tr| tr[t.min(tr.len() - 1)]).collect();
            mean_std(&col)
        })
        .unzip()
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK)
}

#[derive(Serialize)]
struct RecoveryRun {
    seed: u64,
    length: usize,
    cycles: usize,
    converged: bool,
    relaxed_objective: f64,
    discrete_objective: f64,
    recovered: bool,
    /// Objective at the start and after each completed cycle.
    objective_trace: Vec<f64>,
}

#[derive(Serialize)]
struct RecoveryGroup {
    classes: usize,
    /// Length of the generating `±1` factor.
    generator_length: usize,
    runs: Vec<RecoveryRun>,
    mean_final: f64,
    std_final: f64,
    recovered_fraction: f64,
    mean_curve: Vec<f64>,
    std_curve: Vec<f64>,
    mean_curve_non_increasing: bool,
}

#[derive(Serialize)]
struct ConvergenceBody {
    groups: Vec<RecoveryGroup>,
}

fn recovery_run(k: usize, l0: usize, seed: u64, a: &ConvergenceArgs) -> CliResult<(RecoveryRun, CodingMatrix)> {
    let (db, _) = binary_gramian(k, l0, seed)?;
    let l = code_length(&db, None)?;
    let d = if l == db.scale() { db } else { db.rescaled(l)? };
    if a.min_distance > l {
        return Err(usage(format!("--min-distance {} exceeds the code length {l}", a.min_distance)));
    }
    let p = make_policy(k, l, a.min_distance)?;
    let opts = EcfOptions {
        seed,
        max_cycles: a.cycles,
        ..EcfOptions::default()
    };
    let res = factorize(&d, &p, l, &opts)?;
    let mut trace = vec![res.initial_objective];
    trace.extend_from_slice(&res.objective_trace);
    let run = RecoveryRun {
        seed,
        length: l,
        cycles: res.cycles,
        converged: res.converged,
        relaxed_objective: res.relaxed_objective,
        discrete_objective: res.discrete_objective,
        recovered: res.relaxed_objective <= a.tol,
        objective_trace: trace,
    };
    Ok((run, res.coding))
}

/// For each class count: binary Gramians `X₀X₀ᵀ` with `X₀` of length
/// `⌈log₂ k⌉ + 1`, factorized at their numerical rank for up to `cycles`
/// cycles, one run per seed.
pub fn convergence(a: &ConvergenceArgs) -> CliResult<()> {
    let started = Instant::now();
    if a.seeds == 0 || a.cycles == 0 {
        return Err(usage("--seeds and --cycles must be at least 1"));
    }
    if a.classes.is_empty() || a.classes.iter().any(|k| *k < 2) {
        return Err(usage("--classes needs class counts of at least 2"));
    }
    let mut groups = Vec::with_capacity(a.classes.len());
    let mut codings = Vec::new();
    for &k in &a.classes {
        let l0 = min_code_length(k) + 1;
        let outcomes = (0..a.seeds)
            .into_par_iter()
            .map(|r| recovery_run(k, l0, a.seed + r as u64, a))
            .collect::<CliResult<Vec<_>>>()?;
        let (runs, xs): (Vec<RecoveryRun>, Vec<CodingMatrix>) = outcomes.into_iter().unzip();
        codings.extend(runs.iter().map(|r| (k, r.seed)).zip(xs));
        let finals: Vec<f64> = runs.iter().map(|r| r.relaxed_objective).collect();
        let (mean_final, std_final) = mean_std(&finals);
        let traces: Vec<Vec<f64>> = runs.iter().map(|r| r.objective_trace.clone()).collect();
        let (mean_curve, std_curve) = curve(&traces, a.cycles + 1);
        groups.push(RecoveryGroup {
            classes: k,
            generator_length: l0,
            recovered_fraction: runs.iter().filter(|r| r.recovered).count() as f64 / runs.len() as f64,
            mean_curve_non_increasing: non_increasing(&mean_curve),
            runs,
            mean_final,
            std_final,
            mean_curve,
            std_curve,
        });
    }

    if let Some(dir) = &a.codings {
        create_dir(dir)?;
        for ((k, seed), x) in &codings {
            write_coding_csv(&dir.join(format!("k{k}_seed{seed}.csv")), x)?;
        }
    }
    if let Some(out) = &a.out {
        let rows: Vec<Vec<String>> = groups
            .iter()
            .flat_map(|g| {
                (0..g.mean_curve.len())
                    .map(move |t| vec![g.classes.to_string(), t.to_string(), num(g.mean_curve[t]), num(g.std_curve[t])])
            })
            .collect();
        write_csv(out, &["k", "cycle", "mean", "std"], &rows)?;
    }
    emit_report(
        "experiment-convergence",
        a,
        &ConvergenceBody { groups },
        started,
        a.report.as_deref(),
    )
}

#[derive(Serialize)]
struct OrderSummary {
    order: UpdateOrder,
    /// Every trial's objective after each full pass never increases.
    non_increasing_per_pass: bool,
    /// Every trial's objective after each row update never increases.
    non_increasing_per_update: bool,
    final_mean: f64,
    final_std: f64,
    /// Mean objective at the start and after each pass.
    pass_means: Vec<f64>,
}

#[derive(Serialize)]
struct OrderBody {
    classes: usize,
    length: usize,
    cyclic: OrderSummary,
    random: OrderSummary,
}

fn order_trials(
    d: &DesignMatrix,
    p: &CorrectionPolicy,
    order: UpdateOrder,
    a: &OrderArgs,
) -> CliResult<Vec<FactorizationResult>> {
    (0..a.trials)
        .into_par_iter()
        .map(|t| {
            let opts = EcfOptions {
                seed: a.seed + t as u64,
                max_cycles: a.cycles,
                rel_tol: 0.0,
                order,
                ..EcfOptions::default()
            };
            Ok(factorize(d, p, d.scale(), &opts)?)
        })
        .collect()
}

fn summarize(order: UpdateOrder, results: &[FactorizationResult], k: usize, a: &OrderArgs) -> (OrderSummary, Vec<Vec<String>>) {
    let updates: Vec<Vec<f64>> = results.iter().map(|r| r.update_trace.clone()).collect();
    let (mean, std) = curve(&updates, k * a.cycles + 1);
    let passes: Vec<Vec<f64>> = results
        .iter()
        .map(|r| {
            let mut v = vec![r.initial_objective];
            v.extend_from_slice(&r.objective_trace);
            v
        })
        .collect();
    let (pass_means, _) = curve(&passes, a.cycles + 1);
    let finals: Vec<f64> = results.iter().map(|r| r.relaxed_objective).collect();
    let (final_mean, final_std) = mean_std(&finals);
    let rows = (0..mean.len())
        .map(|t| vec![t.to_string(), num(mean[t]), num(std[t])])
        .collect();
    let summary = OrderSummary {
        order,
        non_increasing_per_pass: passes.iter().all(|v| non_increasing(v)),
        non_increasing_per_update: updates.iter().all(|v| non_increasing(v)),
        final_mean,
        final_std,
        pass_means,
    };
    (summary, rows)
}

/// Matched-seed trials under cyclic and uniformly random row order, each run
/// for exactly `cycles` passes unless the objective stops moving.
pub fn order(a: &OrderArgs) -> CliResult<()> {
    let started = Instant::now();
    if a.trials == 0 || a.cycles == 0 {
        return Err(usage("--trials and --cycles must be at least 1"));
    }
    let d = read_design_csv(&a.design, None)?;
    let (k, l) = (d.classes(), d.scale());
    if a.min_distance == 0 || a.min_distance > l {
        return Err(usage(format!("--min-distance must lie in 1..={l}")));
    }
    let p = make_policy(k, l, a.min_distance)?;
    let cyclic = order_trials(&d, &p, UpdateOrder::Cyclic, a)?;
    let random = order_trials(&d, &p, UpdateOrder::Random, a)?;
    let (cyclic, cyclic_rows) = summarize(UpdateOrder::Cyclic, &cyclic, k, a);
    let (random, random_rows) = summarize(UpdateOrder::Random, &random, k, a);

    create_dir(&a.out)?;
    let header = ["updates", "mean", "std"];
    write_csv(&a.out.join("order_cyclic.csv"), &header, &cyclic_rows)?;
    write_csv(&a.out.join("order_random.csv"), &header, &random_rows)?;
    let body = OrderBody {
        classes: k,
        length: l,
        cyclic,
        random,
    };
    emit_report("experiment-order", a, &body, started, a.report.as_deref())
}
