use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use hgnl_core::aggregator::{AggregatorConfig, AggregatorKind};
use hgnl_core::cost::{self, LabeledReport};
use hgnl_core::gradcheck::{check_aggregator, GradCheckOptions, DEFAULT_TOLERANCE};
use hgnl_core::pipeline::{self, evaluate, DatasetSpec, Model, SyntheticDataset};
use hgnl_core::Execution;

use crate::args::*;
use crate::Failure;

type Result<T> = std::result::Result<T, Failure>;

const DEFAULT_AGG: AggregatorConfig = AggregatorConfig {
    kind: AggregatorKind::Hgnl,
    m: 32,
    m1: 8,
    g1: 4,
    g2: 2,
    shared: false,
};

fn json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

fn emit<T: Serialize>(value: &T) {
    println!("{}", json_line(value));
}

struct Run {
    seed: u64,
    execution: Execution,
    format: Format,
}

fn run_settings(flags: RunArgs, file: &FileSettings) -> Result<Run> {
    let r = flags.over(file.group(RunArgs::FIELDS)?);
    Ok(Run {
        seed: r.seed.unwrap_or(0),
        execution: r.execution.map_or(Execution::default(), Into::into),
        format: r.format.unwrap_or(Format::Json),
    })
}

pub fn cost(cmd: CostCmd) -> Result<()> {
    let file = FileSettings::load(&cmd.file, &[AggArgs::FIELDS, RunArgs::FIELDS], &["n", "paper_tables"])?;
    let run = run_settings(cmd.run, &file)?;
    let n = cmd.n.or(file.scalar("n")?).unwrap_or(25);
    let paper = cmd.paper_tables || file.scalar("paper_tables")?.unwrap_or(false);

    if paper {
        let tables = cost::paper_tables(n)?;
        let configs: Vec<AggregatorConfig> = tables.parameters.iter().map(|r| r.report.config).collect();
        let comparison = cost::compare(&configs, n)?;
        let ratios: Vec<_> = (2..configs.len())
            .flat_map(|c| (0..2).map(move |b| (b, c)))
            .map(|(b, c)| {
                let row = comparison.row(b, c).expect("pair present");
                json!({
                    "baseline": tables.parameters[b].label,
                    "candidate": tables.parameters[c].label,
                    "param_ratio": row.param_ratio,
                    "madds_ratio": row.madds_ratio,
                })
            })
            .collect();
        match run.format {
            Format::Json => emit(&json!({ "tables": tables, "ratios": ratios })),
            Format::Table => {
                let mut out = String::from("Parameters\n");
                out.push_str(&cost::render_param_table(&tables.parameters));
                let _ = writeln!(out, "\nMAdds (n = {n})");
                out.push_str(&cost::render_madds_table(&tables.madds)?);
                out.push_str("\nParameter ratios\n");
                for r in &ratios {
                    let _ = writeln!(
                        out,
                        "  {} / {}: {:.2}",
                        r["baseline"].as_str().unwrap_or_default(),
                        r["candidate"].as_str().unwrap_or_default(),
                        r["param_ratio"].as_f64().unwrap_or(f64::NAN)
                    );
                }
                print!("{out}");
            }
        }
        return Ok(());
    }

    let agg = cmd.agg.over(file.group(AggArgs::FIELDS)?);
    let config = aggregator_config(&agg, AggregatorConfig { m: 1024, m1: 128, g1: 16, g2: 8, ..DEFAULT_AGG })?;
    let report = cost::madds(&config, n)?;
    match run.format {
        Format::Json => emit(&report),
        Format::Table => {
            let labeled = [LabeledReport { label: config.kind.to_string(), report }];
            print!("{}", cost::render_param_table(&labeled));
            if config.kind.has_attention() {
                println!();
                print!("{}", cost::render_madds_table(&labeled)?);
            }
        }
    }
    Ok(())
}

pub fn gradcheck(cmd: GradcheckCmd) -> Result<()> {
    let file = FileSettings::load(&cmd.file, &[AggArgs::FIELDS, RunArgs::FIELDS], &["n", "tolerance"])?;
    let run = run_settings(cmd.run, &file)?;
    let agg = cmd.agg.over(file.group(AggArgs::FIELDS)?);
    let config = aggregator_config(&agg, AggregatorConfig { m: 16, ..DEFAULT_AGG })?;
    let n = cmd.n.or(file.scalar("n")?).unwrap_or(5);
    let tolerance = cmd.tolerance.or(file.scalar("tolerance")?).unwrap_or(DEFAULT_TOLERANCE);
    if n == 0 {
        return Err(Failure::config("n must be at least 1"));
    }
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(Failure::config("tolerance must be finite and positive"));
    }
    let opts = GradCheckOptions {
        n,
        seed: run.seed,
        tolerance,
        corrupt_adjoint: cmd.corrupt_adjoint,
        ..GradCheckOptions::default()
    };
    let report = check_aggregator(&config, &opts)?;
    match run.format {
        Format::Json => emit(&report),
        Format::Table => {
            for b in &report.blocks {
                println!("{:<10} {:>6} entries  max rel err {:.3e}", b.name, b.entries, b.max_relative_error);
            }
            println!("{} (worst: {})", if report.passed { "PASS" } else { "FAIL" }, report.worst_block);
        }
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::check(format!(
            "gradient check failed: block {} has relative error {:.3e} > {:.1e}",
            report.worst_block, report.max_relative_error, tolerance
        )))
    }
}

pub fn gen_data(cmd: GenDataCmd) -> Result<()> {
    let file = FileSettings::load(&cmd.file, &[DataArgs::FIELDS, RunArgs::FIELDS], &["m"])?;
    let run = run_settings(cmd.run, &file)?;
    let data = cmd.data.over(file.group(DataArgs::FIELDS)?);
    let m = cmd.m.or(file.scalar("m")?).unwrap_or(DEFAULT_AGG.m);
    let spec = dataset_spec(&data, m, run.seed)?;
    check_writable(&cmd.out)?;
    let dataset = SyntheticDataset::generate(&spec)?;
    dataset.save(&cmd.out)?;
    emit(&json!({ "path": cmd.out, "spec": spec }));
    Ok(())
}

fn load_dataset(path: &Path) -> Result<SyntheticDataset> {
    Ok(SyntheticDataset::load(path)?)
}

fn require_match(config: &AggregatorConfig, spec: &DatasetSpec) -> Result<()> {
    if config.m != spec.m {
        return Err(Failure::config(format!(
            "aggregator m = {} but dataset features have m = {}",
            config.m, spec.m
        )));
    }
    Ok(())
}

pub fn train(cmd: TrainCmd) -> Result<()> {
    let file = FileSettings::load(
        &cmd.file,
        &[AggArgs::FIELDS, DataArgs::FIELDS, TrainArgs::FIELDS, RunArgs::FIELDS],
        &["val_samples"],
    )?;
    let run = run_settings(cmd.run, &file)?;
    let agg = cmd.agg.over(file.group(AggArgs::FIELDS)?);
    let data = cmd.data.over(file.group(DataArgs::FIELDS)?);
    let targs = cmd.train.over(file.group(TrainArgs::FIELDS)?);
    let val_samples: Option<usize> = cmd.val_samples.or(file.scalar("val_samples")?);

    // Everything is validated before any data is generated or written.
    let config = aggregator_config(&agg, DEFAULT_AGG)?;
    let tc = train_config(&targs, run.seed, run.execution)?;
    let generated = match &cmd.data_file {
        Some(_) => None,
        None => Some(dataset_spec(&data, config.m, run.seed)?),
    };
    if let Some(spec) = &generated {
        if tc.segments > spec.n_total {
            return Err(Failure::config(format!("{} segments exceed n_total = {}", tc.segments, spec.n_total)));
        }
    }
    if val_samples == Some(0) {
        return Err(Failure::config("val_samples must be positive"));
    }
    check_writable(&cmd.checkpoint)?;
    if let Some(p) = &cmd.metrics {
        check_writable(p)?;
    }

    let train_set = match (&cmd.data_file, &generated) {
        (Some(path), _) => load_dataset(path)?,
        (None, Some(spec)) => SyntheticDataset::generate(spec)?,
        (None, None) => unreachable!(),
    };
    require_match(&config, &train_set.spec)?;
    let val_set = match (&cmd.val_file, val_samples) {
        (Some(path), _) => Some(load_dataset(path)?),
        (None, Some(count)) => {
            let spec = DatasetSpec { samples: count, ..train_set.spec.with_partition(train_set.spec.partition + 1) };
            Some(SyntheticDataset::generate(&spec)?)
        }
        (None, None) => None,
    };
    if let Some(v) = &val_set {
        require_match(&config, &v.spec)?;
    }

    let outcome = pipeline::train(&train_set, &config, &tc, val_set.as_ref())?;
    let lines: Vec<String> = outcome.history.iter().map(json_line).collect();
    let meta = json!({ "train": tc, "dataset": train_set.spec });
    outcome.model.save(&cmd.checkpoint, meta)?;
    if let Some(p) = &cmd.metrics {
        let mut text = lines.join("\n");
        text.push('\n');
        std::fs::write(p, text).map_err(|e| Failure::io(p, e))?;
    }
    for l in &lines {
        println!("{l}");
    }
    Ok(())
}

fn eval_dataset(data_file: &Option<std::path::PathBuf>, data: &DataArgs, m: usize, seed: u64) -> Result<SyntheticDataset> {
    match data_file {
        Some(path) => load_dataset(path),
        None => {
            // Held-out partition unless one is given explicitly.
            let d = DataArgs { partition: data.partition.or(Some(1)), ..data.clone() };
            Ok(SyntheticDataset::generate(&dataset_spec(&d, m, seed)?)?)
        }
    }
}

pub fn eval(cmd: EvalCmd) -> Result<()> {
    let file = FileSettings::load(&cmd.file, &[AggArgs::FIELDS, DataArgs::FIELDS, RunArgs::FIELDS], &["n_eval"])?;
    let run = run_settings(cmd.run, &file)?;
    let agg = cmd.agg.over(file.group(AggArgs::FIELDS)?);
    let data = cmd.data.over(file.group(DataArgs::FIELDS)?);
    let n_eval: Option<usize> = cmd.n_eval.or(file.scalar("n_eval")?);
    if n_eval == Some(0) {
        return Err(Failure::config("n_eval must be at least 1"));
    }

    let model = match &cmd.checkpoint {
        Some(path) => Model::load(path)?,
        None => {
            let config = aggregator_config(&agg, DEFAULT_AGG)?;
            Model::init(&config, data.classes.unwrap_or(4), run.seed)?
        }
    };
    let dataset = eval_dataset(&cmd.data_file, &data, model.aggregator.config.m, run.seed)?;
    require_match(&model.aggregator.config, &dataset.spec)?;
    // Defaults to 25 frames, or every frame of shorter videos.
    let n_eval = n_eval.unwrap_or(dataset.spec.n_total.min(25));
    let report = evaluate(&model, &dataset, n_eval, run.execution)?;
    match run.format {
        Format::Json => emit(&report),
        Format::Table => println!(
            "{} samples, {} frames: top-1 {:.4}, top-{} {:.4}",
            report.samples, report.n_eval, report.top1, report.top_k, report.top5
        ),
    }
    Ok(())
}

pub fn bench(cmd: BenchCmd) -> Result<()> {
    let file = FileSettings::load(
        &cmd.file,
        &[AggArgs::FIELDS, DataArgs::FIELDS, RunArgs::FIELDS],
        &["n_eval", "repeats"],
    )?;
    let run = run_settings(cmd.run, &file)?;
    let agg = cmd.agg.over(file.group(AggArgs::FIELDS)?);
    let data = cmd.data.over(file.group(DataArgs::FIELDS)?);
    let n_eval = cmd.n_eval.or(file.scalar("n_eval")?).unwrap_or(25);
    let repeats = cmd.repeats.or(file.scalar("repeats")?).unwrap_or(3);
    if n_eval == 0 || repeats == 0 {
        return Err(Failure::config("n_eval and repeats must be positive"));
    }
    let config = aggregator_config(&agg, AggregatorConfig { m: 128, m1: 32, g1: 8, g2: 4, ..DEFAULT_AGG })?;
    let d = DataArgs { samples: data.samples.or(Some(256)), n_total: data.n_total.or(Some(32)), ..data };
    let spec = dataset_spec(&d, config.m, run.seed)?;

    let dataset = SyntheticDataset::generate(&spec)?;
    let model = Model::init(&config, spec.classes, run.seed)?;
    let timing = |execution: Execution| -> Result<(f64, pipeline::EvalReport)> {
        let mut best = f64::INFINITY;
        let mut report = None;
        for _ in 0..repeats {
            let t = Instant::now();
            let r = evaluate(&model, &dataset, n_eval, execution)?;
            best = best.min(t.elapsed().as_secs_f64() * 1e3);
            report = Some(r);
        }
        Ok((best, report.expect("repeats > 0")))
    };
    let (seq_ms, seq) = timing(Execution::Sequential)?;
    let (par_ms, par) = timing(Execution::Parallel)?;
    let record = json!({
        "config": config,
        "samples": spec.samples,
        "n_eval": n_eval,
        "repeats": repeats,
        "parallel_enabled": Execution::Parallel.is_parallel(),
        "sequential_ms": seq_ms,
        "parallel_ms": par_ms,
        "speedup": seq_ms / par_ms,
        "identical": seq == par,
    });
    match run.format {
        Format::Json => emit(&record),
        Format::Table => println!(
            "sequential {seq_ms:.2} ms, parallel {par_ms:.2} ms (x{:.2}), identical results: {}",
            seq_ms / par_ms,
            seq == par
        ),
    }
    if seq != par {
        return Err(Failure::check("sequential and parallel evaluation disagree"));
    }
    Ok(())
}
