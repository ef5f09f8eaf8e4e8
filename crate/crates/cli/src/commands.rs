use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use relbias::encoder::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use relbias::encoder::{
    cell_select, encode, param_count, BiasMode, EncoderConfig, Model, ModelParams, Precision, Real, TrainingExample,
};
use relbias::invariance::{check_equivariance, example_permutation, vp_metric, VpReport};
use relbias::io::{
    load_checkpoint, read_json, read_jsonl, read_pairs, read_predictions, save_checkpoint, write_json, write_jsonl,
    write_pairs, write_predictions, PairRecord, PredictionRecord, SCHEMA_VERSION,
};
use relbias::linearize::{linearize, LinearizeOptions, LinearizedSequence, PositionalScheme};
use relbias::relations::{ablate_types, bias_type_matrix, BiasTypeId};
use relbias::rng::derive_seed;
use relbias::table::{compute_ranks, permute_table, CellCoord, Table, TablePermutation, TableTextPair};
use relbias::toytask::{
    augment, compare_ablation, generate_dataset, toy_encoder_config, train, AblationReport, AugmentationPlan,
    AugmentedDataset, EpochMetrics, TaskSpec, TrainConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::args::*;
use crate::error::{AtPath, CliError, CliResult};
use crate::manifest::RunRecord;

fn read_pair(path: &Path) -> CliResult<TableTextPair> {
    let record: PairRecord = read_json(path).at(path)?;
    TableTextPair::try_from(record).at(path)
}

fn write<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_json(path, value).at(path)
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let file = fs::File::create(path).map_err(relbias::Error::from).at(path)?;
    write_jsonl(std::io::BufWriter::new(file), items).at(path)
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let file = fs::File::open(path).map_err(relbias::Error::from).at(path)?;
    read_jsonl(std::io::BufReader::new(file)).at(path)
}

fn check_version(found: u32, path: &Path) -> CliResult<()> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(CliError::File {
            path: path.to_path_buf(),
            source: relbias::Error::Format(format!("schema_version {found}, expected {SCHEMA_VERSION}")),
        })
    }
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

// ---------------------------------------------------------------- configs

/// Named starting points for model configuration files.
fn preset(name: &str) -> CliResult<EncoderConfig> {
    match name {
        "toy" => Ok(toy_encoder_config()),
        "small" => Ok(small_config()),
        other => Err(relbias::Error::InvalidConfig(format!("unknown model preset {other:?}")).into()),
    }
}

/// Two layers, two heads, width 8, large weights: cheap enough to
/// finite-difference every coordinate.
fn small_config() -> EncoderConfig {
    let mut config = EncoderConfig::new(2, 2, 8).with_vocab(64, 64);
    config.init_std = 0.5;
    config
}

/// Resolves a model section: `preset` (or `fallback`) overlaid with every
/// other key of the object.
fn resolve_model(section: &Map<String, Value>, fallback: &str) -> CliResult<EncoderConfig> {
    let name = match section.get("preset") {
        None => fallback,
        Some(Value::String(s)) => s.as_str(),
        Some(_) => return Err(relbias::Error::InvalidConfig("preset must be a string".into()).into()),
    };
    let mut merged = match serde_json::to_value(preset(name)?).map_err(relbias::Error::from)? {
        Value::Object(m) => m,
        _ => unreachable!("configs serialize to objects"),
    };
    for (k, v) in section {
        if k != "preset" && k != "schema_version" {
            merged.insert(k.clone(), v.clone());
        }
    }
    let config: EncoderConfig = serde_json::from_value(Value::Object(merged)).map_err(relbias::Error::from)?;
    config.validate()?;
    Ok(config)
}

fn read_model_config(path: &Path, fallback: &str) -> CliResult<EncoderConfig> {
    let section: Map<String, Value> = read_json(path).at(path)?;
    if let Some(v) = section.get("schema_version") {
        check_version(v.as_u64().unwrap_or(0) as u32, path)?;
    }
    resolve_model(&section, fallback).map_err(|e| match e {
        CliError::Core(source) => CliError::File {
            path: path.to_path_buf(),
            source,
        },
        e => e,
    })
}

/// Training configuration file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    #[serde(default = "schema_version")]
    schema_version: u32,
    #[serde(default)]
    model: Map<String, Value>,
    training: TrainConfig,
    init_seed: u64,
    #[serde(default)]
    augmentation: Option<AugmentationPlan>,
}

struct TrainSetup {
    config: EncoderConfig,
    training: TrainConfig,
    init_seed: u64,
    data: AugmentedDataset,
}

fn load_training(config_path: &Path, data_path: &Path, rec: &mut RunRecord) -> CliResult<TrainSetup> {
    rec.input(config_path);
    rec.input(data_path);
    let file: TrainFile = read_json(config_path).at(config_path)?;
    check_version(file.schema_version, config_path)?;
    let config = resolve_model(&file.model, "toy").map_err(|e| match e {
        CliError::Core(source) => CliError::File {
            path: config_path.to_path_buf(),
            source,
        },
        e => e,
    })?;
    file.training.validate().at(config_path)?;
    let pairs = read_pairs(data_path).at(data_path)?;
    let data = match &file.augmentation {
        Some(plan) => augment(&pairs, plan)?,
        None => AugmentedDataset::unaugmented(pairs),
    };
    rec.set("model", &config);
    rec.set("training", &file.training);
    rec.set("augmentation", &file.augmentation);
    rec.seed("init_seed", file.init_seed);
    rec.seed("order_seed", file.training.seed);
    if let Some(plan) = &file.augmentation {
        for (k, &s) in plan.seeds().iter().enumerate() {
            rec.seed(&format!("augmentation_{k}"), s);
        }
    }
    Ok(TrainSetup {
        config,
        training: file.training,
        init_seed: file.init_seed,
        data,
    })
}

// ----------------------------------------------------------------- models

enum AnyModel {
    F64(Model<f64>),
    F32(Model<f32>),
}

macro_rules! with_model {
    ($m:expr, $model:ident => $body:expr) => {
        match $m {
            AnyModel::F64($model) => $body,
            AnyModel::F32($model) => $body,
        }
    };
}

impl AnyModel {
    fn from_f64(model: Model<f64>) -> CliResult<Self> {
        Ok(match model.config.precision {
            Precision::F64 => AnyModel::F64(model),
            Precision::F32 => AnyModel::F32(Model::from_parts(model.config, model.params.cast())?),
        })
    }

    fn config(&self) -> &EncoderConfig {
        with_model!(self, m => &m.config)
    }
}

fn load_model(args: &ModelArgs, rec: &mut RunRecord) -> CliResult<AnyModel> {
    if let Some(path) = &args.model {
        rec.input(path);
        let model = load_checkpoint::<f64>(path).at(path)?;
        rec.set("model", &model.config);
        return AnyModel::from_f64(model);
    }
    let seed = args
        .init_seed
        .ok_or_else(|| CliError::Usage("either --model or --init-seed is required".into()))?;
    let mut config = match &args.model_config {
        Some(path) => {
            rec.input(path);
            read_model_config(path, "toy")?
        }
        None => toy_encoder_config(),
    };
    if let Some(s) = args.scheme {
        config.scheme = s;
    }
    if let Some(m) = args.bias_mode {
        config.bias_mode = m;
    }
    config.validate()?;
    let mut model = Model::<f64>::new(config, seed)?;
    if args.bias_scale != 0.0 {
        model
            .params
            .randomize_bias_scalars(derive_seed(seed, 1), args.bias_scale);
    }
    rec.set("model", &model.config);
    rec.set("bias_scale", args.bias_scale);
    rec.seed("init_seed", seed);
    AnyModel::from_f64(model)
}

fn linearize_for(pair: &TableTextPair, config: &EncoderConfig) -> relbias::Result<LinearizedSequence> {
    linearize(
        pair,
        &compute_ranks(pair.table()),
        config.scheme,
        &config.linearize_options(),
    )
}

// --------------------------------------------------------------- commands

#[derive(Serialize)]
struct SequenceFile<'a> {
    schema_version: u32,
    options: LinearizeOptions,
    #[serde(flatten)]
    sequence: &'a LinearizedSequence,
}

pub fn linearize_cmd(a: &LinearizeArgs, rec: &mut RunRecord) -> CliResult<()> {
    rec.input(&a.input);
    rec.output(&a.out);
    let options = LinearizeOptions {
        vocab_size: a.vocab_size,
        max_len: a.max_len,
    };
    rec.set("scheme", a.scheme);
    rec.set("options", options);
    let pair = read_pair(&a.input)?;
    let sequence = linearize(&pair, &compute_ranks(pair.table()), a.scheme, &options)?;
    write(
        &a.out,
        &SequenceFile {
            schema_version: SCHEMA_VERSION,
            options,
            sequence: &sequence,
        },
    )
}

#[derive(Serialize)]
struct BiasMapFile {
    schema_version: u32,
    tokens: Vec<String>,
    ablated: Vec<BiasTypeId>,
    /// `matrix[i][j]` is the relation code of query token i to key token j.
    matrix: Vec<Vec<u8>>,
}

pub fn biasmap_cmd(a: &BiasmapArgs, rec: &mut RunRecord) -> CliResult<()> {
    rec.input(&a.input);
    rec.output(&a.out);
    let ablated: BTreeSet<BiasTypeId> = a.ablate.iter().copied().collect();
    rec.set("ablate", &ablated);
    rec.set("max_len", a.max_len);
    let pair = read_pair(&a.input)?;
    let options = LinearizeOptions {
        max_len: a.max_len,
        ..Default::default()
    };
    let seq = linearize(&pair, &compute_ranks(pair.table()), PositionalScheme::Pcp, &options)?;
    let mut matrix = bias_type_matrix(&seq);
    if !ablated.is_empty() {
        matrix = ablate_types(&matrix, &ablated)?;
    }
    write(
        &a.out,
        &BiasMapFile {
            schema_version: SCHEMA_VERSION,
            tokens: seq.tokens.iter().map(|t| t.text.clone()).collect(),
            ablated: ablated.into_iter().collect(),
            matrix: matrix.to_grid(),
        },
    )
}

#[derive(Serialize)]
struct CellScore {
    cell: CellCoord,
    score: f64,
}

#[derive(Serialize)]
struct EncodingFile {
    schema_version: u32,
    scheme: PositionalScheme,
    bias_mode: BiasMode,
    precision: Precision,
    tokens: Vec<String>,
    /// One row of `d_model` values per token.
    hidden: Vec<Vec<f64>>,
    cell_scores: Vec<CellScore>,
    selected: Vec<CellCoord>,
    ties: Vec<Vec<CellCoord>>,
    /// `[layer][head][query][key]`, present with `--attention`.
    #[serde(skip_serializing_if = "Option::is_none")]
    attention: Option<Vec<Vec<Vec<Vec<f64>>>>>,
}

fn rows_f64<T: Real>(m: &relbias::encoder::Mat<T>) -> Vec<Vec<f64>> {
    let m = m.cast::<f64>();
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn encode_one<T: Real>(model: &Model<T>, pair: &TableTextPair, attention: bool) -> CliResult<EncodingFile> {
    let seq = linearize_for(pair, &model.config)?;
    let out = encode(&seq, &model.params, &model.config)?;
    let sel = cell_select(&out, &model.params.head, &seq)?;
    Ok(EncodingFile {
        schema_version: SCHEMA_VERSION,
        scheme: model.config.scheme,
        bias_mode: model.config.bias_mode,
        precision: model.config.precision,
        tokens: seq.tokens.iter().map(|t| t.text.clone()).collect(),
        hidden: rows_f64(&out.hidden),
        cell_scores: sel
            .scores
            .iter()
            .map(|&(cell, s)| CellScore {
                cell,
                score: s.to_f64().unwrap_or(f64::NAN),
            })
            .collect(),
        selected: sel.selected.iter().copied().collect(),
        ties: sel.ties.clone(),
        attention: attention.then(|| {
            out.attention
                .iter()
                .map(|heads| heads.iter().map(rows_f64).collect())
                .collect()
        }),
    })
}

/// One line of a permutation file.
#[derive(Debug, Serialize, Deserialize)]
struct PermutationRecord {
    #[serde(default = "schema_version")]
    schema_version: u32,
    index: usize,
    permutation: TablePermutation,
}

fn predict_all<T: Real>(model: &Model<T>, pairs: &[TableTextPair]) -> CliResult<Vec<BTreeSet<CellCoord>>> {
    pairs
        .iter()
        .map(|p| Ok(relbias::encoder::predict(model, p)?.selected))
        .collect()
}

pub fn encode_cmd(a: &EncodeArgs, rec: &mut RunRecord) -> CliResult<()> {
    if let (Some(input), Some(out)) = (&a.input, &a.out) {
        rec.input(input);
        rec.output(out);
        rec.set("attention", a.attention);
        let model = load_model(&a.model, rec)?;
        let pair = read_pair(input)?;
        let file = with_model!(&model, m => encode_one(m, &pair, a.attention))?;
        return write(out, &file);
    }
    let (Some(corpus), Some(preds)) = (&a.corpus, &a.predictions) else {
        return Err(CliError::Usage(
            "encode needs --in and --out, or --corpus and --predictions".into(),
        ));
    };
    rec.input(corpus);
    rec.output(preds);
    let model = load_model(&a.model, rec)?;
    let pairs = read_pairs(corpus).at(corpus)?;
    let perms = match &a.perms {
        Some(path) => {
            rec.input(path);
            let records: Vec<PermutationRecord> = read_lines(path)?;
            if records.len() != pairs.len() {
                return Err(CliError::File {
                    path: path.clone(),
                    source: relbias::Error::LengthMismatch(format!(
                        "{} permutations for {} pairs",
                        records.len(),
                        pairs.len()
                    )),
                });
            }
            for (i, r) in records.iter().enumerate() {
                check_version(r.schema_version, path)?;
                if r.index != i {
                    return Err(CliError::File {
                        path: path.clone(),
                        source: relbias::Error::Format(format!("line {} has index {}", i + 1, r.index)),
                    });
                }
            }
            Some(records.into_iter().map(|r| r.permutation).collect::<Vec<_>>())
        }
        None => None,
    };
    let selected = with_model!(&model, m => predict_all(m, &pairs))?;
    let records: Vec<PredictionRecord> = selected
        .into_iter()
        .enumerate()
        .map(|(i, s)| PredictionRecord {
            schema_version: SCHEMA_VERSION,
            selected: s.into_iter().collect(),
            permutation: perms.as_ref().map(|p| p[i].clone()),
        })
        .collect();
    write_predictions(preds, &records).at(preds)
}

fn builtin_gradcheck_pair() -> TableTextPair {
    let table = Table::from_strs(
        &["song title", "length"],
        &[&["screwed up", "5:02"], &["ghetto queen", "5:00"]],
    )
    .expect("static table");
    TableTextPair::new("which song is the longest?", table, [CellCoord::new(0, 1)]).expect("static pair")
}

#[derive(Serialize)]
struct GradcheckFile<'a> {
    schema_version: u32,
    check: GradCheckConfig,
    #[serde(flatten)]
    report: &'a GradCheckReport,
}

pub fn gradcheck_cmd(a: &GradcheckArgs, rec: &mut RunRecord) -> CliResult<()> {
    if let Some(r) = &a.report {
        rec.output(r);
    }
    let mut config = match &a.model_config {
        Some(path) => {
            rec.input(path);
            read_model_config(path, "small")?
        }
        None => small_config(),
    };
    if let Some(s) = a.scheme {
        config.scheme = s;
    }
    if let Some(m) = a.bias_mode {
        config.bias_mode = m;
    }
    config.validate()?;
    if config.precision != Precision::F64 {
        return Err(relbias::Error::InvalidConfig("gradient checks run in 64-bit only".into()).into());
    }
    let check = GradCheckConfig {
        epsilon: a.epsilon,
        floor: a.floor,
        tolerance: a.tol,
    };
    rec.set("model", &config);
    rec.set("check", check);
    rec.set("bias_scale", a.bias_scale);
    rec.seed("init_seed", a.init_seed);
    let pairs = match &a.data {
        Some(path) => {
            rec.input(path);
            read_pairs(path).at(path)?
        }
        None => vec![builtin_gradcheck_pair()],
    };
    let batch = pairs
        .iter()
        .map(|p| TrainingExample::prepare(p, &config))
        .collect::<relbias::Result<Vec<_>>>()?;
    let mut params = ModelParams::<f64>::init(&config, a.init_seed)?;
    if a.bias_scale != 0.0 {
        params.randomize_bias_scalars(derive_seed(a.init_seed, 1), a.bias_scale);
    }
    let report = check_gradients(&batch, &params, &config, &check)?;
    if let Some(path) = &a.report {
        write(
            path,
            &GradcheckFile {
                schema_version: SCHEMA_VERSION,
                check,
                report: &report,
            },
        )?;
    }
    let status = if report.pass { "pass" } else { "fail" };
    println!(
        "{status} max_rel_err={:e} tensors={}",
        report.max_rel_err,
        report.tensors.len()
    );
    if report.pass {
        Ok(())
    } else {
        let worst = report
            .tensors
            .iter()
            .max_by(|x, y| x.max_rel_err.total_cmp(&y.max_rel_err))
            .map(|t| t.name.clone())
            .unwrap_or_default();
        Err(CliError::CheckFailed(format!(
            "max relative error {:e} on {worst} exceeds {:e}",
            report.max_rel_err, a.tol
        )))
    }
}

pub fn paramcount_cmd(a: &ParamcountArgs, rec: &mut RunRecord) -> CliResult<()> {
    let config = EncoderConfig::new(a.layers, a.heads, a.dmodel)
        .with_vocab(a.vocab, a.positions)
        .with_scheme(a.scheme);
    config.validate()?;
    rec.set("model", &config);
    let count = param_count(&config);
    println!(
        "added={} removed={} total={}",
        count.bias_scalar_params, count.removed_rowcol_params, count.total
    );
    Ok(())
}

pub fn gen_task_cmd(a: &GenTaskArgs, rec: &mut RunRecord) -> CliResult<()> {
    rec.output(&a.out);
    let spec = TaskSpec::new(a.kind, a.seed).with_shape((a.min_rows, a.max_rows), (a.min_cols, a.max_cols));
    rec.set("task", &spec);
    rec.set("n", a.n);
    rec.seed("seed", a.seed);
    let pairs = generate_dataset(&spec, a.n)?;
    write_pairs(&a.out, &pairs).at(&a.out)
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    schema_version: u32,
    epochs: &'a [EpochMetrics],
}

pub fn train_cmd(a: &TrainArgs, rec: &mut RunRecord) -> CliResult<()> {
    rec.output(&a.out);
    if let Some(m) = &a.metrics {
        rec.output(m);
    }
    let setup = load_training(&a.config, &a.data, rec)?;
    let eval = match &a.eval {
        Some(path) => {
            rec.input(path);
            read_pairs(path).at(path)?
        }
        None => Vec::new(),
    };
    let model = Model::<f64>::new(setup.config, setup.init_seed)?;
    let trace = match AnyModel::from_f64(model)? {
        AnyModel::F64(m) => {
            let out = train(m, &setup.data, &eval, &setup.training)?;
            save_checkpoint(&a.out, &out.model).at(&a.out)?;
            out.trace
        }
        AnyModel::F32(m) => {
            let out = train(m, &setup.data, &eval, &setup.training)?;
            save_checkpoint(&a.out, &out.model).at(&a.out)?;
            out.trace
        }
    };
    if let Some(last) = trace.last() {
        let eval_acc = last.eval_accuracy.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "epochs={} train_loss={:.6} train_accuracy={:.4} eval_accuracy={eval_acc}",
            trace.len(),
            last.train_loss,
            last.train_accuracy
        );
    }
    if let Some(path) = &a.metrics {
        write(
            path,
            &MetricsFile {
                schema_version: SCHEMA_VERSION,
                epochs: &trace,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationFile<'a> {
    schema_version: u32,
    #[serde(flatten)]
    report: &'a AblationReport,
}

fn text_path(json: &Path) -> PathBuf {
    json.with_extension("txt")
}

pub fn ablate_cmd(a: &AblateArgs, rec: &mut RunRecord) -> CliResult<()> {
    let text = a.text.clone().unwrap_or_else(|| text_path(&a.out));
    rec.output(&a.out);
    rec.output(&text);
    let types: BTreeSet<BiasTypeId> = a.types.iter().copied().collect();
    rec.set("types", &types);
    let setup = load_training(&a.config, &a.data, rec)?;
    rec.input(&a.eval);
    let eval = read_pairs(&a.eval).at(&a.eval)?;
    let report = compare_ablation(
        &setup.config,
        &types,
        &setup.data,
        &eval,
        &setup.training,
        setup.init_seed,
    )?;
    write(
        &a.out,
        &AblationFile {
            schema_version: SCHEMA_VERSION,
            report: &report,
        },
    )?;
    let table = report.to_text();
    fs::write(&text, &table).map_err(relbias::Error::from).at(&text)?;
    print!("{table}");
    Ok(())
}

pub fn perturb_cmd(a: &PerturbArgs, rec: &mut RunRecord) -> CliResult<()> {
    rec.input(&a.input);
    rec.output(&a.out);
    rec.output(&a.perms);
    rec.seed("seed", a.seed);
    let pairs = read_pairs(&a.input).at(&a.input)?;
    let mut moved = Vec::with_capacity(pairs.len());
    let mut perms = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let perm = example_permutation(pair, a.seed, i);
        moved.push(permute_table(pair, &perm)?);
        perms.push(PermutationRecord {
            schema_version: SCHEMA_VERSION,
            index: i,
            permutation: perm,
        });
    }
    write_pairs(&a.out, &moved).at(&a.out)?;
    write_lines(&a.perms, &perms)
}

#[derive(Debug, Serialize)]
struct Trial {
    pair: usize,
    seed: u64,
    max_abs_diff: f64,
}

#[derive(Debug, Serialize)]
struct InvarianceFile {
    schema_version: u32,
    tolerance: f64,
    pairs: usize,
    seeds: usize,
    trials: usize,
    passed: usize,
    pass: bool,
    max_abs_diff: f64,
    worst: Option<Trial>,
    failures: Vec<Trial>,
}

fn invariance_trials<T: Real>(
    model: &Model<T>,
    pairs: &[TableTextPair],
    seeds: &[u64],
    tol: f64,
) -> CliResult<Vec<(Trial, bool)>> {
    let mut out = Vec::with_capacity(pairs.len() * seeds.len());
    for (i, pair) in pairs.iter().enumerate() {
        for &seed in seeds {
            let perm = example_permutation(pair, seed, i);
            let r = check_equivariance(model, pair, &perm, tol)?;
            out.push((
                Trial {
                    pair: i,
                    seed,
                    max_abs_diff: r.max_abs_diff,
                },
                r.pass,
            ));
        }
    }
    Ok(out)
}

pub fn invariance_cmd(a: &InvarianceArgs, rec: &mut RunRecord) -> CliResult<()> {
    if let Some(r) = &a.report {
        rec.output(r);
    }
    rec.input(&a.corpus);
    let seeds = parse_seed_list(&a.seeds).map_err(CliError::Usage)?;
    rec.set("seeds", &seeds);
    rec.set("tolerance", a.tol);
    let model = load_model(&a.model, rec)?;
    let pairs = read_pairs(&a.corpus).at(&a.corpus)?;
    let trials = with_model!(&model, m => invariance_trials(m, &pairs, &seeds, a.tol))?;
    let passed = trials.iter().filter(|(_, ok)| *ok).count();
    let max_abs_diff = trials.iter().map(|(t, _)| t.max_abs_diff).fold(0.0, f64::max);
    let worst = trials
        .iter()
        .max_by(|x, y| x.0.max_abs_diff.total_cmp(&y.0.max_abs_diff))
        .map(|(t, _)| Trial { ..*t });
    let n = trials.len();
    let report = InvarianceFile {
        schema_version: SCHEMA_VERSION,
        tolerance: a.tol,
        pairs: pairs.len(),
        seeds: seeds.len(),
        trials: n,
        passed,
        pass: passed == n,
        max_abs_diff,
        worst,
        failures: trials.into_iter().filter(|(_, ok)| !ok).map(|(t, _)| t).collect(),
    };
    if let Some(path) = &a.report {
        write(path, &report)?;
    }
    let status = if report.pass { "pass" } else { "fail" };
    println!(
        "{status} trials={n} passed={passed} max_abs_diff={max_abs_diff:e} scheme={} bias_mode={}",
        model.config().scheme,
        model.config().bias_mode
    );
    if report.pass {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "{} of {n} trials exceed tolerance {:e}",
            n - passed,
            a.tol
        )))
    }
}

#[derive(Serialize)]
struct VpFile {
    schema_version: u32,
    #[serde(flatten)]
    report: VpReport,
}

pub fn vp_cmd(a: &VpArgs, rec: &mut RunRecord) -> CliResult<()> {
    rec.input(&a.before);
    rec.input(&a.after);
    rec.input(&a.gold);
    if let Some(out) = &a.out {
        rec.output(out);
    }
    let before: Vec<_> = read_predictions(&a.before)
        .at(&a.before)?
        .iter()
        .map(PredictionRecord::original_cells)
        .collect();
    let after: Vec<_> = read_predictions(&a.after)
        .at(&a.after)?
        .iter()
        .map(PredictionRecord::original_cells)
        .collect();
    let gold: Vec<_> = read_pairs(&a.gold)
        .at(&a.gold)?
        .iter()
        .map(|p| p.gold_cells().clone())
        .collect();
    let report = vp_metric(&before, &after, &gold)?;
    if let Some(out) = &a.out {
        write(
            out,
            &VpFile {
                schema_version: SCHEMA_VERSION,
                report,
            },
        )?;
    }
    println!(
        "vp={:?} t2t={} t2f={} f2t={} f2f={}",
        report.vp, report.t2t, report.t2f, report.f2t, report.f2f
    );
    Ok(())
}
