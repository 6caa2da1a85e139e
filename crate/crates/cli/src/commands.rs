//! Design, factorize, analyze, evaluate, baseline and toy commands.

use std::path::Path;
use std::time::Instant;

use ecfkit::classify::{cross_validate, BinaryLearnerSpec, CodingSource, EvaluationReport};
use ecfkit::data::{
    generate_toy, load_dataset_csv, read_coding_csv, read_design_csv, write_atomic, write_coding_csv,
    write_matrix_csv, LabelColumn, LabeledDataset, MatrixRole, ToyOptions,
};
use ecfkit::design::{code_length, design_from_data, min_code_length, AllocationPolicy};
use ecfkit::ecf::{factorize as run_ecf, make_policy, EcfOptions, UpdateOrder};
use ecfkit::ecoc::{
    dense_random_coding, fixed_correction_random_coding, global_correction, hamming_profile, ova_coding,
    pair_distance_correction, pairwise_correction, validate_coding, CodingMatrix, ValidationReport,
};
use serde::Serialize;

use crate::{
    emit_report, num, usage, write_csv, AnalyzeArgs, BaselineArgs, BaselineKind, CliResult, DesignArgs, EvaluateArgs,
    FactorizeArgs, LengthArg, OrderArg, SourceArg, ToyArgs,
};

fn load(path: &Path, label_column: Option<usize>) -> CliResult<LabeledDataset> {
    let col = label_column.map_or(LabelColumn::Last, LabelColumn::Index);
    Ok(load_dataset_csv(path, col)?)
}

fn check_distance(c: usize, l: Option<usize>) -> CliResult<()> {
    if c == 0 {
        return Err(usage("--min-distance must be at least 1"));
    }
    match l {
        Some(l) if c > l => Err(usage(format!("--min-distance {c} exceeds the code length {l}"))),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct ProjectionSummary {
    iterations: usize,
    converged: bool,
    final_change: f64,
    min_eigenvalue: f64,
    repair_weight: f64,
}

#[derive(Serialize)]
struct DesignBody {
    classes: usize,
    samples: usize,
    labels: Vec<String>,
    length: usize,
    rank: usize,
    /// Smallest eigenvalue of the written design.
    min_eigenvalue: f64,
    projection: ProjectionSummary,
    distances: Vec<Vec<f64>>,
}

pub fn design(a: &DesignArgs) -> CliResult<()> {
    let started = Instant::now();
    let data = load(&a.input, a.label_column)?;
    let dd = design_from_data(&data, a.policy.into(), a.length.into())?;
    write_matrix_csv(&a.out, dd.design.values(), MatrixRole::Design)?;
    let body = DesignBody {
        classes: data.classes(),
        samples: data.len(),
        labels: data.label_names().to_vec(),
        length: dd.l,
        rank: dd.rank,
        min_eigenvalue: dd.design.min_eigenvalue(),
        projection: ProjectionSummary {
            iterations: dd.projection.iterations,
            converged: dd.projection.converged,
            final_change: dd.projection.final_change,
            min_eigenvalue: dd.projection.min_eigenvalue,
            repair_weight: dd.projection.repair_weight,
        },
        distances: dd
            .distances
            .values()
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
    };
    emit_report("design", a, &body, started, a.report.as_deref())
}

#[derive(Serialize)]
struct FactorizeBody<'a> {
    classes: usize,
    length: usize,
    design_scale: usize,
    seed: u64,
    cycles: usize,
    converged: bool,
    initial_objective: f64,
    objective_trace: &'a [f64],
    relaxed_objective: f64,
    discrete_objective: f64,
    threshold: f64,
    columns_before_dedup: usize,
    dichotomies: usize,
    validation: &'a ValidationReport,
}

pub fn factorize(a: &FactorizeArgs) -> CliResult<()> {
    let started = Instant::now();
    if let Some(LengthArg::Fixed(l)) = a.length {
        check_distance(a.min_distance, Some(l))?;
    }
    let d = read_design_csv(&a.design, None)?;
    let k = d.classes();
    let scale = d.scale();
    let l = match a.length {
        None => scale,
        Some(LengthArg::Fixed(l)) => l,
        Some(LengthArg::Auto) => code_length(&d, None)?.max(min_code_length(k)),
    };
    check_distance(a.min_distance, Some(l))?;
    let d = if l == scale { d } else { d.rescaled(l)? };
    let p = make_policy(k, l, a.min_distance)?;
    let opts = EcfOptions {
        seed: a.seed,
        max_cycles: a.max_cycles,
        order: match a.order {
            OrderArg::Cyclic => UpdateOrder::Cyclic,
            OrderArg::Random => UpdateOrder::Random,
        },
        ..EcfOptions::default()
    };
    let res = run_ecf(&d, &p, l, &opts)?;
    write_coding_csv(&a.out, &res.coding)?;
    let body = FactorizeBody {
        classes: k,
        length: l,
        design_scale: scale,
        seed: a.seed,
        cycles: res.cycles,
        converged: res.converged,
        initial_objective: res.initial_objective,
        objective_trace: &res.objective_trace,
        relaxed_objective: res.relaxed_objective,
        discrete_objective: res.discrete_objective,
        threshold: res.threshold,
        columns_before_dedup: res.columns_before_dedup,
        dichotomies: res.coding.length(),
        validation: &res.validation,
    };
    emit_report("factorize", a, &body, started, a.report.as_deref())
}

#[derive(Serialize)]
struct AnalysisBody {
    classes: usize,
    length: usize,
    min_distance: Option<usize>,
    global_correction: Option<i64>,
    /// Over the concatenated rows of `H`; `null` on the diagonal.
    pairwise_correction: Vec<Vec<Option<i64>>>,
    /// From the pair's own distance; `null` on the diagonal.
    pair_distance_correction: Vec<Vec<Option<i64>>>,
    distances: Vec<Vec<usize>>,
    validation: Option<ValidationReport>,
}

fn analysis(x: &CodingMatrix, min_distance: Option<usize>) -> CliResult<AnalysisBody> {
    let k = x.classes();
    let h = hamming_profile(x);
    let table = |f: &dyn Fn(usize, usize) -> ecfkit::Result<i64>| -> CliResult<Vec<Vec<Option<i64>>>> {
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| if i == j { Ok(None) } else { f(i, j).map(Some) })
                    .collect::<ecfkit::Result<Vec<_>>>()
            })
            .collect::<ecfkit::Result<Vec<_>>>()
            .map_err(Into::into)
    };
    let validation = match min_distance {
        Some(c) => {
            check_distance(c, Some(x.length()))?;
            Some(validate_coding(x, &make_policy(k, x.length(), c)?)?)
        }
        None => None,
    };
    Ok(AnalysisBody {
        classes: k,
        length: x.length(),
        min_distance: h.min_off_diagonal(),
        global_correction: global_correction(&h).ok(),
        pairwise_correction: table(&|i, j| pairwise_correction(&h, i, j))?,
        pair_distance_correction: table(&|i, j| pair_distance_correction(&h, i, j))?,
        distances: h.to_rows(),
        validation,
    })
}

pub fn analyze(a: &AnalyzeArgs) -> CliResult<()> {
    let started = Instant::now();
    let x = read_coding_csv(&a.coding)?;
    let body = analysis(&x, a.min_distance)?;
    if let Some(out) = &a.out {
        let mut text = String::new();
        for row in &body.distances {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        write_atomic(out, text.as_bytes())?;
    }
    emit_report("analyze", a, &body, started, a.report.as_deref())
}

#[derive(Serialize)]
struct EvalRow {
    min_distance: Option<usize>,
    #[serde(flatten)]
    report: EvaluationReport,
}

#[derive(Serialize)]
struct EvaluateBody {
    classes: usize,
    samples: usize,
    learner: BinaryLearnerSpec,
    results: Vec<EvalRow>,
}

fn source_name(s: SourceArg) -> &'static str {
    match s {
        SourceArg::File => "file",
        SourceArg::EcfH => "ecf-h",
        SourceArg::EcfE => "ecf-e",
        SourceArg::Ova => "ova",
        SourceArg::Dense => "dense",
        SourceArg::Rand => "rand",
    }
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let started = Instant::now();
    if a.folds < 2 {
        return Err(usage("--folds must be at least 2"));
    }
    let fixed_l = match a.length {
        LengthArg::Fixed(l) => Some(l),
        LengthArg::Auto => None,
    };
    let sweeps = matches!(a.source, SourceArg::EcfH | SourceArg::EcfE | SourceArg::Rand);
    let distances: Vec<Option<usize>> = if sweeps {
        if a.min_distance.is_empty() {
            return Err(usage("--min-distance needs at least one value"));
        }
        for &c in &a.min_distance {
            check_distance(c, fixed_l)?;
        }
        a.min_distance.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    if a.source == SourceArg::Rand && fixed_l.is_none() {
        return Err(usage("--source rand needs a fixed --length"));
    }
    let file_coding = match (a.source, &a.coding) {
        (SourceArg::File, Some(p)) => Some(read_coding_csv(p)?),
        (SourceArg::File, None) => return Err(usage("--source file needs --coding")),
        _ => None,
    };

    let data = load(&a.input, a.label_column)?;
    let k = data.classes();
    if let Some(x) = &file_coding {
        if x.classes() != k {
            return Err(usage(format!("coding matrix has {} rows, dataset has {k} classes", x.classes())));
        }
    }
    let spec = BinaryLearnerSpec::default();
    let mut results = Vec::with_capacity(distances.len());
    for c in distances {
        let source = match a.source {
            SourceArg::File => CodingSource::Fixed {
                coding: file_coding.clone().expect("read above"),
                name: "file".into(),
            },
            SourceArg::Ova => CodingSource::Fixed {
                coding: ova_coding(k)?,
                name: "ova".into(),
            },
            SourceArg::Dense => CodingSource::Fixed {
                coding: dense_random_coding(k, a.pool, a.seed)?,
                name: "dense".into(),
            },
            SourceArg::Rand => {
                let c = c.expect("rand sweeps distances");
                let l = fixed_l.expect("checked above");
                CodingSource::Fixed {
                    coding: fixed_correction_random_coding(k, l, c, a.seed, a.attempts)?,
                    name: format!("rand c={c}"),
                }
            }
            SourceArg::EcfH | SourceArg::EcfE => CodingSource::Ecf {
                policy: if a.source == SourceArg::EcfH {
                    AllocationPolicy::Hard
                } else {
                    AllocationPolicy::Easy
                },
                length: a.length.into(),
                min_distance: c.expect("ecf sweeps distances"),
                seed: a.seed,
            },
        };
        let report = cross_validate(&data, &source, &spec, a.decoding.into(), a.folds, a.seed)?;
        results.push(EvalRow { min_distance: c, report });
    }

    if let Some(out) = &a.out {
        let rows: Vec<Vec<String>> = results
            .iter()
            .map(|r| {
                vec![
                    source_name(a.source).to_string(),
                    r.min_distance.map_or(String::new(), |c| c.to_string()),
                    num(r.report.mean_dichotomies),
                    num(r.report.mean),
                    num(r.report.std),
                ]
            })
            .collect();
        write_csv(out, &["source", "min_distance", "dichotomies", "mean", "std"], &rows)?;
    }
    if let Some(path) = &a.predictions {
        let names = data.label_names();
        let rows: Vec<Vec<String>> = results
            .iter()
            .flat_map(|r| {
                r.report.predictions.iter().map(move |p| {
                    vec![
                        r.min_distance.map_or(String::new(), |c| c.to_string()),
                        p.sample.to_string(),
                        p.fold.to_string(),
                        names[p.truth].clone(),
                        names[p.predicted].clone(),
                    ]
                })
            })
            .collect();
        write_csv(path, &["min_distance", "sample", "fold", "truth", "predicted"], &rows)?;
    }
    let body = EvaluateBody {
        classes: k,
        samples: data.len(),
        learner: spec,
        results,
    };
    emit_report("evaluate", a, &body, started, a.report.as_deref())
}

#[derive(Serialize)]
struct BaselineBody {
    #[serde(flatten)]
    analysis: AnalysisBody,
}

pub fn baseline(a: &BaselineArgs) -> CliResult<()> {
    let started = Instant::now();
    let k = a.classes;
    let x = match a.kind {
        BaselineKind::Ova => ova_coding(k)?,
        BaselineKind::Dense => dense_random_coding(k, a.pool, a.seed)?,
        BaselineKind::Rand => {
            let l = a.length.ok_or_else(|| usage("--kind rand needs --length"))?;
            check_distance(a.min_distance, Some(l))?;
            fixed_correction_random_coding(k, l, a.min_distance, a.seed, a.attempts)?
        }
    };
    write_coding_csv(&a.out, &x)?;
    let body = BaselineBody {
        analysis: analysis(&x, None)?,
    };
    emit_report("baseline", a, &body, started, a.report.as_deref())
}

/// Features and a 1-based label, with a header line.
pub fn toy(a: &ToyArgs) -> CliResult<()> {
    let data = generate_toy(&ToyOptions {
        k: a.classes,
        per_class: a.per_class,
        spread: a.spread,
        seed: a.seed,
    })?;
    let rows: Vec<Vec<String>> = (0..data.len())
        .map(|r| {
            let f = data.features().row(r);
            vec![num(f[0]), num(f[1]), (data.labels()[r] + 1).to_string()]
        })
        .collect();
    write_csv(&a.out, &["x", "y", "label"], &rows)
}
