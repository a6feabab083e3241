use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use xrfm::data::{
    build_dataset, load_csv, split_train_val_test, synth_local_features, synth_single_index, CategoricalTransform,
    ColumnKind, Dataset, Normalization, Preprocessor, SchemaHints, Table, TargetEncoder,
};
use xrfm::leaf_rfm::{LeafHyperparams, Task};
use xrfm::tree::{export_leaf_agops, xrfm_fit, Preprocessing, TreeParams, XrfmModel};
use xrfm::tuning::{draw_trials, tune_leaves, SearchSpace, TrialRecord};
use xrfm::{Result, XrfmError};

use crate::config::{read_space, resolve};
use crate::persist::{load_model, save_model};
use crate::{CliError, CliResult, Command, DataArgs, Format, Generator, TreeArgs};

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Fit {
            data,
            tree,
            config,
            hyper,
            out,
        } => {
            let cfg = resolve(config.as_deref(), &hyper)?;
            let summary = fit(&data, &tree, &cfg, &out)?;
            print!("{summary}");
        }
        Command::Predict { model, input, out } => predict(&model, &input, &out)?,
        Command::Tune {
            data,
            tree,
            space,
            trials,
            out,
            log,
        } => {
            let space = match SearchSpace::builtin(&space) {
                Some(s) => s,
                None => read_space(Path::new(&space))?,
            };
            let summary = tune(&data, &tree, &space, trials, &out, &log)?;
            print!("{summary}");
        }
        Command::Explain {
            model,
            leaf,
            top_k,
            format,
            out,
        } => {
            let model = load_model(&model)?;
            let text = explain(&model, &leaf, top_k, format)?;
            match out {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Synth {
            generator,
            n,
            d,
            seed,
            out,
        } => {
            let table = match generator {
                Generator::LocalFeatures => synth_local_features(n, seed),
                Generator::SingleIndex => synth_single_index(n, d, seed),
            };
            table.write_csv_path(&out)?;
        }
        Command::Bench {
            sizes,
            leaf_size,
            seed,
            iterations,
            out,
        } => {
            let rows = bench(&sizes, leaf_size, seed, iterations)?;
            write_text(&out, &bench_csv(&rows))?;
            print!("{}", bench_csv(&rows));
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| XrfmError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| XrfmError::Io(format!("{}: {e}", path.display())))
}

/// Encoded training and validation data with the fitted encoders.
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub preprocessing: Preprocessing,
}

fn categorical_hints(table: &Table, task: Task) -> SchemaHints {
    let mut hints = SchemaHints::for_task(task);
    for c in &table.schema {
        match c.kind {
            ColumnKind::Categorical { .. } => hints.categorical.insert(c.name.clone()),
            ColumnKind::Numeric => false,
        };
    }
    hints
}

pub fn prepare_data(
    data: &DataArgs,
    transform: CategoricalTransform,
    normalization: Normalization,
) -> Result<PreparedData> {
    let task: Task = data.task.into();
    let table = load_csv(&data.train, Some(&data.target), &SchemaHints::for_task(task))?;
    let (train_table, val_table) = match &data.val {
        Some(path) => {
            let val = load_csv(path, Some(&data.target), &categorical_hints(&table, task))?;
            (table, val)
        }
        None => {
            let f = data.val_frac;
            if !(f > 0.0 && f < 1.0) {
                return Err(XrfmError::InvalidParam {
                    field: "val_frac".into(),
                    reason: format!("{f} must lie strictly between 0 and 1"),
                });
            }
            let [train, val, _] = split_train_val_test(&table, [1.0 - f, f, 0.0], data.seed)?;
            (train, val)
        }
    };
    let features = Preprocessor::fit(&train_table, transform, normalization)?;
    let target = TargetEncoder::fit(&train_table, task)?;
    let train = build_dataset(&train_table, &features, &target)?;
    let val = build_dataset(&val_table, &features, &target)?;
    Ok(PreparedData {
        train,
        val,
        preprocessing: Preprocessing {
            features,
            target,
            target_name: Some(data.target.clone()),
        },
    })
}

fn tree_params(tree: &TreeArgs, seed: u64, refill_size: usize) -> TreeParams {
    TreeParams {
        split_samples: tree.split_samples,
        max_leaf_size: tree.leaf_size,
        split_ridge: tree.split_ridge,
        seed,
        refill_size,
    }
}

fn model_summary(model: &XrfmModel, seconds: f64) -> String {
    let mut s = format!("leaves: {}\ndepth: {}\n", model.leaves().len(), model.depth());
    for leaf in model.leaves() {
        s.push_str(&format!(
            "leaf {}: train_rows {} val_score {:.6} best_iteration {}\n",
            leaf.index,
            leaf.train_rows.len(),
            leaf.val_score,
            leaf.model.best_iteration
        ));
    }
    s.push_str(&format!("fit_seconds: {seconds:.3}\n"));
    s
}

/// Fits and saves a model; returns the printed summary.
pub fn fit(
    data: &DataArgs,
    tree: &TreeArgs,
    cfg: &xrfm::tuning::ResolvedConfig,
    out: &Path,
) -> Result<String> {
    let start = Instant::now();
    let prepared = prepare_data(data, cfg.categorical_transform, cfg.normalization)?;
    let params = tree_params(tree, data.seed, cfg.refill_size);
    let mut model = xrfm_fit(&prepared.train, &prepared.val, &params, &cfg.hyper)?;
    model.preprocessing = Some(prepared.preprocessing);
    save_model(&model, out)?;
    Ok(model_summary(&model, start.elapsed().as_secs_f64()))
}

/// Loads a prediction input, dropping the target column when present.
pub fn load_input(model: &XrfmModel, input: &Path) -> Result<Table> {
    let pre = model
        .preprocessing
        .as_ref()
        .ok_or_else(|| XrfmError::SchemaMismatch("model carries no preprocessing metadata".into()))?;
    let mut hints = SchemaHints::for_task(model.task);
    for c in &pre.features.columns {
        match c.kind {
            ColumnKind::Categorical { .. } => hints.categorical.insert(c.name.clone()),
            ColumnKind::Numeric => hints.numeric.insert(c.name.clone()),
        };
    }
    let with_target = match &pre.target_name {
        Some(t) => match load_csv(input, Some(t), &hints) {
            Err(XrfmError::MissingTarget(_)) => None,
            r => Some(r?),
        },
        None => None,
    };
    match with_target {
        Some(t) => Ok(t),
        None => load_csv(input, None, &hints),
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Prediction CSV text for a table.
pub fn predict_csv(model: &XrfmModel, table: &Table) -> Result<String> {
    let scores = model.predict_table(table)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| XrfmError::Csv(e.to_string());
    match model.task {
        Task::Regression => {
            let header: Vec<String> = if scores.cols() == 1 {
                vec!["prediction".into()]
            } else {
                (0..scores.cols()).map(|k| format!("prediction_{k}")).collect()
            };
            w.write_record(&header).map_err(io)?;
            for row in scores.row_iter() {
                w.write_record(row.iter().map(|v| fmt_f64(*v))).map_err(io)?;
            }
        }
        Task::Classification => {
            let mut header = vec!["label".to_string()];
            header.extend(model.classes.iter().map(|c| format!("score_{c}")));
            w.write_record(&header).map_err(io)?;
            let labels = xrfm::leaf_rfm::argmax_rows(&scores);
            for (row, k) in scores.row_iter().zip(labels) {
                let mut rec = vec![model.classes.get(k).cloned().unwrap_or_default()];
                rec.extend(row.iter().map(|v| fmt_f64(*v)));
                w.write_record(&rec).map_err(io)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| XrfmError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn predict(model: &Path, input: &Path, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let table = load_input(&model, input)?;
    write_text(out, &predict_csv(&model, &table)?)
}

fn write_trial_log(path: &Path, log: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let io = |e: csv::Error| XrfmError::Csv(e.to_string());
    w.write_record([
        "leaf",
        "trial",
        "score",
        "error",
        "bandwidth",
        "bandwidth_mode",
        "kernel_type",
        "exponent_p",
        "regularization",
        "diagonal",
        "iterations",
        "early_stop_multiplier",
    ])
    .map_err(io)?;
    for r in log {
        let h = &r.config;
        w.write_record([
            r.leaf.to_string(),
            r.trial.to_string(),
            fmt_f64(r.score),
            r.error.clone().unwrap_or_default(),
            fmt_f64(h.kernel.bandwidth),
            serde_json::to_value(h.kernel.bandwidth_mode)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            match h.kernel.norm {
                xrfm::kernels::NormMode::Product => "product".into(),
                xrfm::kernels::NormMode::Euclidean => "euclidean".into(),
            },
            fmt_f64(h.kernel.p),
            fmt_f64(h.ridge),
            h.diagonal.to_string(),
            h.iterations.to_string(),
            fmt_f64(h.early_stop_multiplier),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(XrfmError::from)
}

/// Tunes, saves the model and trial log; returns the printed summary.
pub fn tune(
    data: &DataArgs,
    tree: &TreeArgs,
    space: &SearchSpace,
    trials: usize,
    out: &Path,
    log: &Path,
) -> Result<String> {
    if trials == 0 {
        return Err(XrfmError::InvalidParam {
            field: "trials".into(),
            reason: "must be at least 1".into(),
        });
    }
    let start = Instant::now();
    // preprocessing and refill size come from the first draw and stay fixed
    let configs = draw_trials(space, trials, data.seed);
    let first = configs[0];
    let prepared = prepare_data(data, first.categorical_transform, first.normalization)?;
    let params = tree_params(tree, data.seed, first.refill_size);
    let hypers: Vec<LeafHyperparams> = configs.iter().map(|c| c.hyper).collect();
    let mut result = tune_leaves(&prepared.train, &prepared.val, &hypers, &params)?;
    result.model.preprocessing = Some(prepared.preprocessing);
    save_model(&result.model, out)?;
    write_trial_log(log, &result.log)?;
    let mut s = model_summary(&result.model, start.elapsed().as_secs_f64());
    for (leaf, t) in result.selected.iter().enumerate() {
        s.push_str(&format!("leaf {leaf}: selected trial {t}\n"));
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureScore {
    pub feature: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Loading {
    pub feature: String,
    pub loading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafReport {
    pub leaf: usize,
    pub top_features: Vec<FeatureScore>,
    pub eigenvalues: Vec<f64>,
    pub top_eigenvector: Vec<Loading>,
}

/// Original column of each encoded feature and the column names.
fn feature_groups(model: &XrfmModel) -> (Vec<usize>, Vec<String>) {
    match &model.preprocessing {
        Some(p) => (
            p.features.source_columns(),
            p.features.columns.iter().map(|c| c.name.clone()).collect(),
        ),
        None => ((0..model.n_features).collect(), model.feature_names.clone()),
    }
}

/// Per-leaf reports; one-hot columns are aggregated by summing their block
/// of the AGOP diagonal.
pub fn leaf_reports(model: &XrfmModel, leaf: &str, top_k: usize) -> CliResult<Vec<LeafReport>> {
    let all = export_leaf_agops(model)?;
    let selected: Vec<_> = if leaf == "all" {
        all
    } else {
        let k: usize = leaf
            .parse()
            .map_err(|_| CliError::Usage(format!("--leaf: expected an index or `all`, got `{leaf}`")))?;
        if k >= all.len() {
            return Err(CliError::Usage(format!(
                "--leaf: index {k} out of range (model has {} leaves)",
                all.len()
            )));
        }
        vec![all[k].clone()]
    };
    let (source, names) = feature_groups(model);
    let encoded_names = &model.feature_names;
    Ok(selected
        .into_iter()
        .map(|e| {
            let mut importance = vec![0.0; names.len()];
            for (j, v) in e.diagonal.iter().enumerate() {
                importance[source[j]] += v;
            }
            let mut order: Vec<usize> = (0..names.len()).collect();
            order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
            LeafReport {
                leaf: e.leaf,
                top_features: order
                    .into_iter()
                    .take(top_k)
                    .map(|g| FeatureScore {
                        feature: names[g].clone(),
                        importance: importance[g],
                    })
                    .collect(),
                eigenvalues: e.eigenvalues,
                top_eigenvector: e
                    .top_eigenvector
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| Loading {
                        feature: encoded_names.get(j).cloned().unwrap_or_else(|| format!("x{j}")),
                        loading: v,
                    })
                    .collect(),
            }
        })
        .collect())
}

pub fn explain(model: &XrfmModel, leaf: &str, top_k: usize, format: Format) -> CliResult<String> {
    let reports = leaf_reports(model, leaf, top_k)?;
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(&reports).expect("report serialization") + "\n",
        Format::Csv => {
            let mut s = String::from("leaf,rank,feature,importance\n");
            for r in &reports {
                for (rank, f) in r.top_features.iter().enumerate() {
                    let name = if f.feature.contains([',', '"', '\n']) {
                        format!("\"{}\"", f.feature.replace('"', "\"\""))
                    } else {
                        f.feature.clone()
                    };
                    s.push_str(&format!("{},{},{},{}\n", r.leaf, rank + 1, name, f.importance));
                }
            }
            s
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub leaves: usize,
    pub fit_seconds: f64,
    pub predict_seconds_per_1000: f64,
}

/// Times `xrfm_fit` on local-features data of each size. Every leaf runs
/// exactly `iterations` RFM steps so sizes do comparable work per leaf.
pub fn bench(sizes: &[usize], leaf_size: usize, seed: u64, iterations: usize) -> Result<Vec<BenchRow>> {
    let hyper = LeafHyperparams {
        iterations,
        early_stop_multiplier: f64::INFINITY,
        ..Default::default()
    };
    let params = TreeParams {
        max_leaf_size: leaf_size,
        seed,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for &n in sizes {
        let train_table = synth_local_features(n, seed);
        let val_table = synth_local_features((n / 10).max(1), seed.wrapping_add(1));
        let features = Preprocessor::fit(&train_table, CategoricalTransform::OneHot, Normalization::Standard)?;
        let target = TargetEncoder::fit(&train_table, Task::Regression)?;
        let train = build_dataset(&train_table, &features, &target)?;
        let val = build_dataset(&val_table, &features, &target)?;

        let start = Instant::now();
        let model = xrfm_fit(&train, &val, &params, &hyper)?;
        let fit_seconds = start.elapsed().as_secs_f64();

        let start = Instant::now();
        model.predict(&val.x)?;
        let predict_seconds_per_1000 = start.elapsed().as_secs_f64() / val.n_rows() as f64 * 1000.0;
        log::info!("bench n={n}: fit {fit_seconds:.2}s");
        rows.push(BenchRow {
            n,
            leaves: model.leaves().len(),
            fit_seconds,
            predict_seconds_per_1000,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("n,leaves,fit_seconds,predict_seconds_per_1000\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.n, r.leaves, r.fit_seconds, r.predict_seconds_per_1000
        ));
    }
    s
}
