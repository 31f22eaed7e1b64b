//! Command-line front end. Machine output goes to standard output,
//! diagnostics to standard error. Exit codes: 0 success, 1 usage error,
//! 2 data/validation error, 3 runtime error.

use crate::codec::{decode_grid, encode_grid, CodecError, DecodeOptions};
use crate::data::{
    build_vocab, gen_synthetic, read_jsonl, write_jsonl_to, DataError, SynthSpec, Vocabulary,
};
use crate::eval::{micro_prf, subset_prf, Subset};
use crate::model::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, ModelConfig, ModelError,
    Toggles,
};
use crate::train::{predict_entities, train_epochs, TrainConfig, TrainError};
use crate::types::{LabelSet, RelationGrid, Sentence};
use clap::{Parser, Subcommand};
use serde::Deserialize;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "w2grid", about = "Grid-tagging NER: encode, decode, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// JSONL corpus to grid dumps (one block per sentence).
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `auto` collects types from the corpus; otherwise a comma list.
        #[arg(long, default_value = "auto")]
        labels: String,
    },
    /// Grid dumps back to JSONL entity lists.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretty-print one sentence's relation grid.
    DumpGrid {
        #[arg(long = "in")]
        input: PathBuf,
        /// 0-based sentence index.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Generate a synthetic corpus.
    GenSynthetic {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        sentences: usize,
        #[arg(long, default_value_t = 6)]
        min_len: usize,
        #[arg(long, default_value_t = 12)]
        max_len: usize,
        /// Comma-separated entity type inventory.
        #[arg(long, default_value = "X,Y")]
        types: String,
        #[arg(long, default_value_t = 0.4)]
        flat_rate: f64,
        #[arg(long, default_value_t = 0.3)]
        nested_rate: f64,
        #[arg(long, default_value_t = 0.3)]
        discontinuous_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// JSON config file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        dropout: Option<f64>,
    },
    /// Score a checkpoint against a gold corpus.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Predict entities for a JSONL corpus (gold entities ignored).
    Predict {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Flat config-file view merging model, training, and decoding keys.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    d_word: Option<usize>,
    d_h: Option<usize>,
    #[serde(alias = "d_Ed")]
    d_ed: Option<usize>,
    #[serde(alias = "d_Et")]
    d_et: Option<usize>,
    d_c: Option<usize>,
    d_biaffine: Option<usize>,
    d_pred_hidden: Option<usize>,
    kernel_size: Option<usize>,
    dilation_rates: Option<Vec<usize>>,
    dropout: Option<f64>,
    toggles: Option<Toggles>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    epsilon: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    grad_clip_norm: Option<f64>,
    seed: Option<u64>,
    ablate_nnw: Option<bool>,
    min_freq: Option<usize>,
    max_path_count: Option<usize>,
    dedupe: Option<bool>,
}

#[derive(Debug)]
pub struct CliError {
    code: i32,
    msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }
    fn data(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }
    fn runtime(msg: impl Into<String>) -> Self {
        Self { code: 3, msg: msg.into() }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::PathExplosion { .. } => CliError::runtime(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Codec(c) => c.into(),
            TrainError::BadConfig(m) => CliError::usage(m),
            other => CliError::runtime(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

/// Entry point used by the binary and by tests.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // Help and version output are successes, not usage errors.
            let code = i32::from(e.exit_code() != 0);
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            e.code
        }
    }
}

fn out_writer(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn parse_types(spec: &str) -> Result<Vec<String>, CliError> {
    let types: Vec<String> =
        spec.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect();
    if types.is_empty() {
        return Err(CliError::usage("expected a non-empty comma-separated type list"));
    }
    Ok(types)
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Encode { input, out, labels } => {
            let (sentences, auto_labels) = read_jsonl(&input)?;
            let labels = if labels == "auto" {
                auto_labels
            } else {
                LabelSet::new(parse_types(&labels)?)
                    .map_err(|e| CliError::usage(e.to_string()))?
            };
            let mut w = out_writer(out.as_deref())?;
            for s in &sentences {
                let grid = encode_grid(s, &labels)?;
                write_grid_dump(&mut w, &grid, &labels)
                    .map_err(|e| CliError::data(e.to_string()))?;
            }
            w.flush()?;
            Ok(())
        }
        Cmd::Decode { input, out } => {
            let reader = std::io::BufReader::new(std::fs::File::open(&input)?);
            let grids = parse_grid_dumps(reader)?;
            let mut types: Vec<String> = grids
                .iter()
                .flat_map(|(_, cells)| cells.iter())
                .filter_map(|(_, _, label)| label.strip_prefix("THW-").map(String::from))
                .collect();
            types.sort();
            types.dedup();
            let labels =
                LabelSet::new(types).map_err(|e| CliError::data(e.to_string()))?;
            let opts = DecodeOptions::default();
            let mut w = out_writer(out.as_deref())?;
            for (n, cells) in grids {
                let mut grid = RelationGrid::new(n);
                for (i, j, label) in cells {
                    let rel = labels.relation_id(&label).ok_or_else(|| {
                        CliError::data(format!("unknown relation label {label:?}"))
                    })?;
                    if i >= n || j >= n {
                        return Err(CliError::data(format!(
                            "cell ({i},{j}) outside an n={n} grid"
                        )));
                    }
                    grid.set(i, j, rel);
                }
                let entities = decode_grid(&grid, &labels, &opts)?;
                let line = serde_json::json!({
                    "entities": entities
                        .iter()
                        .map(|e| serde_json::json!({"indices": e.indices, "type": e.etype}))
                        .collect::<Vec<_>>()
                });
                writeln!(w, "{line}")?;
            }
            w.flush()?;
            Ok(())
        }
        Cmd::DumpGrid { input, index } => {
            let (sentences, labels) = read_jsonl(&input)?;
            let s = sentences.get(index).ok_or_else(|| {
                CliError::usage(format!(
                    "index {index} out of range for {} sentences",
                    sentences.len()
                ))
            })?;
            let grid = encode_grid(s, &labels)?;
            let mut w = out_writer(None)?;
            render_grid(&mut w, s, &grid, &labels)?;
            w.flush()?;
            Ok(())
        }
        Cmd::GenSynthetic {
            out,
            sentences,
            min_len,
            max_len,
            types,
            flat_rate,
            nested_rate,
            discontinuous_rate,
            seed,
        } => {
            let spec = SynthSpec {
                sentences,
                min_len,
                max_len,
                entity_types: parse_types(&types)?,
                flat_rate,
                nested_rate,
                discontinuous_rate,
                seed,
            };
            spec.validate().map_err(CliError::usage)?;
            let corpus = gen_synthetic(&spec);
            let mut w = out_writer(out.as_deref())?;
            write_jsonl_to(&mut w, &corpus)?;
            Ok(())
        }
        Cmd::Train {
            data,
            dev,
            config,
            out,
            epochs,
            seed,
            batch_size,
            learning_rate,
            dropout,
        } => {
            let (mut model_cfg, mut train_cfg, _opts, min_freq) = load_config(config.as_deref())?;
            if let Some(v) = epochs {
                train_cfg.epochs = v;
            }
            if let Some(v) = seed {
                train_cfg.seed = v;
            }
            if let Some(v) = batch_size {
                train_cfg.batch_size = v;
            }
            if let Some(v) = learning_rate {
                train_cfg.learning_rate = v;
            }
            if let Some(v) = dropout {
                model_cfg.dropout = v;
            }
            let (train_set, labels) = read_jsonl(&data)?;
            let dev_set = match dev {
                Some(p) => read_jsonl(&p)?.0,
                None => Vec::new(),
            };
            let vocab = build_vocab(&train_set, min_freq);
            model_cfg.vocab_size = vocab.len();
            model_cfg.relation_count = labels.relation_count();
            model_cfg.validate().map_err(CliError::usage)?;
            let (params, logs) =
                train_epochs(&train_set, &dev_set, &labels, &vocab, &model_cfg, &train_cfg)?;
            let mut w = out_writer(None)?;
            for log in &logs {
                writeln!(w, "{}", log.line())?;
            }
            w.flush()?;
            if let Some(path) = out {
                let ckpt = Checkpoint {
                    config: model_cfg,
                    labels,
                    vocab: vocab.tokens().to_vec(),
                    params,
                };
                save_checkpoint(path, &ckpt)?;
            }
            Ok(())
        }
        Cmd::Eval { data, model } => {
            let ckpt = load_checkpoint(&model)?;
            let vocab = Vocabulary::from_tokens(ckpt.vocab.clone());
            let (sentences, _) = read_jsonl(&data)?;
            let mut pred = Vec::with_capacity(sentences.len());
            let mut gold = Vec::with_capacity(sentences.len());
            for s in &sentences {
                pred.push(predict_entities(
                    &s.tokens,
                    &ckpt.params,
                    &ckpt.config,
                    &ckpt.labels,
                    &vocab,
                )?);
                gold.push(s.entities.clone());
            }
            let mut w = out_writer(None)?;
            let micro = micro_prf(&pred, &gold).expect("aligned");
            write!(w, "{}", micro.report("micro."))?;
            for (name, subset) in
                [("overlapped.", Subset::Overlapped), ("discontinuous.", Subset::Discontinuous)]
            {
                let prf = subset_prf(&pred, &gold, subset).expect("aligned");
                write!(w, "{}", prf.report(name))?;
            }
            w.flush()?;
            Ok(())
        }
        Cmd::Predict { input, model, out } => {
            let ckpt = load_checkpoint(&model)?;
            let vocab = Vocabulary::from_tokens(ckpt.vocab.clone());
            let (sentences, _) = read_jsonl(&input)?;
            let mut predicted = Vec::with_capacity(sentences.len());
            for s in &sentences {
                let entities = predict_entities(
                    &s.tokens,
                    &ckpt.params,
                    &ckpt.config,
                    &ckpt.labels,
                    &vocab,
                )?;
                predicted.push(Sentence { tokens: s.tokens.clone(), entities });
            }
            let mut w = out_writer(out.as_deref())?;
            write_jsonl_to(&mut w, &predicted)?;
            Ok(())
        }
    }
}

fn load_config(
    path: Option<&Path>,
) -> Result<(ModelConfig, TrainConfig, DecodeOptions, usize), CliError> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    let mut opts = DecodeOptions::default();
    let mut min_freq = 1;
    if let Some(p) = path {
        let body = std::fs::read_to_string(p)?;
        let fc: FileConfig = serde_json::from_str(&body)
            .map_err(|e| CliError::usage(format!("bad config file: {e}")))?;
        macro_rules! take {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        take!(model.d_word, fc.d_word);
        take!(model.d_h, fc.d_h);
        take!(model.d_ed, fc.d_ed);
        take!(model.d_et, fc.d_et);
        take!(model.d_c, fc.d_c);
        take!(model.d_biaffine, fc.d_biaffine);
        take!(model.d_pred_hidden, fc.d_pred_hidden);
        take!(model.kernel_size, fc.kernel_size);
        take!(model.dilation_rates, fc.dilation_rates);
        take!(model.dropout, fc.dropout);
        take!(model.toggles, fc.toggles);
        take!(train.learning_rate, fc.learning_rate);
        take!(train.weight_decay, fc.weight_decay);
        take!(train.beta1, fc.beta1);
        take!(train.beta2, fc.beta2);
        take!(train.epsilon, fc.epsilon);
        take!(train.batch_size, fc.batch_size);
        take!(train.epochs, fc.epochs);
        take!(train.grad_clip_norm, fc.grad_clip_norm);
        take!(train.seed, fc.seed);
        take!(train.ablate_nnw, fc.ablate_nnw);
        take!(min_freq, fc.min_freq);
        take!(opts.max_path_count, fc.max_path_count);
        take!(opts.dedupe, fc.dedupe);
    }
    Ok((model, train, opts, min_freq))
}

/// One dump block: `n=<N>` then one `i<TAB>j<TAB>label` line per tagged
/// cell, row-major.
pub fn write_grid_dump(
    w: &mut impl Write,
    grid: &RelationGrid,
    labels: &LabelSet,
) -> Result<(), std::io::Error> {
    writeln!(w, "n={}", grid.n())?;
    for (i, j, r) in grid.tagged_cells() {
        let name = labels
            .relation_name(r)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
        writeln!(w, "{i}\t{j}\t{name}")?;
    }
    Ok(())
}

type DumpBlock = (usize, Vec<(usize, usize, String)>);

pub fn parse_grid_dumps(reader: impl BufRead) -> Result<Vec<DumpBlock>, CliError> {
    let mut blocks: Vec<DumpBlock> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(n) = line.strip_prefix("n=") {
            let n: usize = n
                .parse()
                .map_err(|_| CliError::data(format!("line {line_no}: bad grid size {n:?}")))?;
            blocks.push((n, Vec::new()));
            continue;
        }
        let block = blocks
            .last_mut()
            .ok_or_else(|| CliError::data(format!("line {line_no}: cell before any n= header")))?;
        let mut cols = line.split('\t');
        let parse_idx = |c: Option<&str>| -> Result<usize, CliError> {
            c.and_then(|v| v.parse().ok())
                .ok_or_else(|| CliError::data(format!("line {line_no}: malformed cell line")))
        };
        let i = parse_idx(cols.next())?;
        let j = parse_idx(cols.next())?;
        let label = cols
            .next()
            .ok_or_else(|| CliError::data(format!("line {line_no}: missing label")))?;
        block.1.push((i, j, label.to_string()));
    }
    Ok(blocks)
}

/// Figure-2-style rendering: tokens down the side, one labelled cell per
/// word pair.
fn render_grid(
    w: &mut impl Write,
    s: &Sentence,
    grid: &RelationGrid,
    labels: &LabelSet,
) -> Result<(), CliError> {
    let n = grid.n();
    let mut cells = vec![vec![String::from("."); n]; n];
    let mut width = 1;
    for (i, j, r) in grid.tagged_cells() {
        let name = labels.relation_name(r).map_err(|e| CliError::data(e.to_string()))?;
        width = width.max(name.len());
        cells[i][j] = name;
    }
    let tok_width = s.tokens.iter().map(String::len).max().unwrap_or(1);
    write!(w, "{:tok_width$} ", "")?;
    for j in 0..n {
        write!(w, "{j:>width$} ")?;
    }
    writeln!(w)?;
    for i in 0..n {
        write!(w, "{:tok_width$} ", s.tokens[i])?;
        for j in 0..n {
            write!(w, "{:>width$} ", cells[i][j])?;
        }
        writeln!(w, "| {}", s.tokens[i])?;
    }
    Ok(())
}
