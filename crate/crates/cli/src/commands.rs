use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use spectrack::activation_io::{load_sidecar, read_stream, stem_of};
use spectrack::config::RunConfig;
use spectrack::eval::{
    evaluate, prefix_auroc_curve, score_sequences, shapley_attribution, triplet_ablation,
    window_size_sweep, RuntimeStats,
};
use spectrack::pipeline::{
    auto_loss_mode, extract_file, featurize, fit_classifier, read_features_csv, write_features_csv,
    Corpus, CorpusEntry, LabeledSequence, ScoredStep, StreamingDetector,
};
use spectrack::recurrent::{load_model, save_model, LossMode, RecurrentModel};
use spectrack::spectral::{FEATURE_COUNT, FEATURE_NAMES};
use spectrack::synthetic::{gen_dataset, Split};

use crate::svg::{heatmap, line_chart, Series};
use crate::{CliError, Command, DATA_DIR_ENV};

const FEATURES_SUFFIX: &str = ".features.csv";

pub fn dispatch(cmd: &Command, cfg: &RunConfig) -> Result<(), CliError> {
    match cmd {
        Command::Synth { out } => synth(cfg, out.as_deref()),
        Command::Features { inputs, out } => features(cfg, inputs, out.as_deref()),
        Command::Train { data, out } => train(cfg, data.as_deref(), out.as_deref()),
        Command::Detect {
            model,
            features,
            inputs,
        } => detect(cfg, model, *features, inputs),
        Command::Eval { data, model, out } => eval(cfg, data.as_deref(), model, out.as_deref()),
        Command::Sweep {
            data,
            out,
            sizes,
            sliding,
            repeats,
        } => sweep(
            cfg,
            data.as_deref(),
            out.as_deref(),
            sizes,
            *sliding,
            *repeats,
        ),
        Command::Prefix {
            data,
            model,
            out,
            prefixes,
        } => prefix(cfg, data.as_deref(), model, out.as_deref(), prefixes),
        Command::Ablate { data, out, sample } => {
            ablate(cfg, data.as_deref(), out.as_deref(), *sample)
        }
        Command::Importance {
            data,
            model,
            out,
            permutations,
            max_sequences,
        } => importance(
            cfg,
            data.as_deref(),
            model,
            out.as_deref(),
            *permutations,
            *max_sequences,
        ),
    }
}

fn data_dir(flag: Option<&Path>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.data_dir.clone())
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            CliError::config(format!(
                "no corpus directory: pass --data, set data_dir or {DATA_DIR_ENV}"
            ))
        })
}

fn out_dir(flag: Option<&Path>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::config("no output directory: pass --out or set out_dir"))?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    Ok(s)
}

/// Collects written artifacts and emits `run_manifest.json`.
struct Artifacts {
    dir: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: PathBuf) -> Self {
        Self {
            dir,
            outputs: Vec::new(),
        }
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn record(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    fn finish(self, command: &str, cfg: &RunConfig, inputs: &[PathBuf]) -> Result<(), CliError> {
        let hashes = |paths: &[PathBuf]| -> Result<Vec<serde_json::Value>, CliError> {
            paths
                .iter()
                .map(|p| {
                    let shown = p.strip_prefix(&self.dir).unwrap_or(p);
                    Ok(json!({"path": shown.display().to_string(), "sha256": sha256_file(p)?}))
                })
                .collect()
        };
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "config": cfg.to_text(),
            "inputs": hashes(inputs)?,
            "outputs": hashes(&self.outputs)?,
        });
        fs::write(
            self.dir.join("run_manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("json") + "\n",
        )?;
        Ok(())
    }
}

/// The corpus manifest identifies the corpus when present.
fn corpus_inputs(data: &Path, model: Option<&Path>) -> Vec<PathBuf> {
    let manifest = data.join(spectrack::synthetic::MANIFEST_FILE);
    let mut v: Vec<PathBuf> = model.map(Path::to_path_buf).into_iter().collect();
    if manifest.is_file() {
        v.push(manifest);
    }
    v
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn load_corpus(dir: &Path) -> Result<Corpus, CliError> {
    let corpus = Corpus::load(dir)?;
    if corpus.entries.is_empty() {
        return Err(CliError::data(format!(
            "{}: no labelled streams",
            dir.display()
        )));
    }
    Ok(corpus)
}

fn split_features(
    corpus: &Corpus,
    split: Split,
    cfg: &RunConfig,
) -> Result<Vec<LabeledSequence>, CliError> {
    let entries: Vec<&CorpusEntry> = corpus.split(split).collect();
    if entries.is_empty() {
        return Err(CliError::data(format!(
            "corpus has no {} split",
            split.name()
        )));
    }
    Ok(featurize(&entries, &cfg.pipeline())?)
}

fn loss_for(corpus: &Corpus) -> LossMode {
    if corpus.has_onsets() {
        LossMode::PerStepMean
    } else {
        LossMode::FinalStep
    }
}

fn model_inputs(model: &Path) -> Result<RecurrentModel, CliError> {
    let m = load_model(model)?;
    if m.input_dim() != FEATURE_COUNT {
        return Err(CliError::data(format!(
            "model expects {} features, the pipeline produces {FEATURE_COUNT}",
            m.input_dim()
        )));
    }
    Ok(m)
}

fn synth(cfg: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let dir = out_dir(out, cfg)?;
    let (neg, pos) = cfg.synth_specs();
    let manifest = gen_dataset(
        cfg.synth_streams,
        &neg,
        &pos,
        cfg.split_fractions(),
        cfg.seed,
        &dir,
    )?;
    let mut art = Artifacts::new(dir.clone());
    art.record(dir.join(spectrack::synthetic::MANIFEST_FILE));
    for m in &manifest.members {
        art.record(dir.join(&m.dump));
        art.record(dir.join(&m.meta));
    }
    art.finish("synth", cfg, &[])?;
    println!(
        "{}",
        json!({"corpus": dir.display().to_string(), "streams": manifest.members.len()})
    );
    Ok(())
}

fn features(cfg: &RunConfig, inputs: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let dir = out_dir(out, cfg)?;
    let pipeline = cfg.pipeline();
    let written = inputs
        .par_iter()
        .map(|p| {
            let steps = extract_file(p, &pipeline)?;
            let stem = stem_of(p)
                .ok_or_else(|| CliError::data(format!("{}: no file stem", p.display())))?;
            let mut buf = Vec::new();
            write_features_csv(&steps, &mut buf)?;
            Ok((format!("{stem}{FEATURES_SUFFIX}"), buf))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut art = Artifacts::new(dir);
    for (name, bytes) in written {
        art.write(&name, bytes)?;
    }
    art.finish("features", cfg, inputs)
}

fn train(cfg: &RunConfig, data: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let data = data_dir(data, cfg)?;
    let dir = out_dir(out, cfg)?;
    let corpus = load_corpus(&data)?;
    let seqs = split_features(&corpus, Split::Train, cfg)?;
    let spec = cfg.classifier(auto_loss_mode(&seqs));
    let (model, log) = fit_classifier(&seqs, &spec, None)?;

    let mut art = Artifacts::new(dir.clone());
    let model_path = dir.join("model.bin");
    save_model(&model, &model_path)?;
    art.record(model_path.clone());
    let mut csv = String::from("epoch,mean_loss,grad_norm\n");
    for e in &log {
        let _ = writeln!(csv, "{},{},{}", e.epoch, e.mean_loss, e.grad_norm);
    }
    art.write("train_log.csv", csv)?;
    art.write(
        "loss.svg",
        line_chart(
            "training loss",
            "epoch",
            "mean BCE",
            &[Series {
                name: spec.cell.name(),
                points: log.iter().map(|e| (e.epoch as f64, e.mean_loss)).collect(),
            }],
        ),
    )?;
    art.finish("train", cfg, &corpus_inputs(&data, None))?;
    println!(
        "{}",
        json!({
            "model": model_path.display().to_string(),
            "cell": spec.cell.name(),
            "loss_mode": spec.train.loss_mode,
            "train_sequences": seqs.len(),
            "final_loss": log.last().map(|e| e.mean_loss),
        })
    );
    Ok(())
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    sequence_id: &'a str,
    t: u64,
    score: f64,
    warm_up: bool,
}

fn emit<W: Write>(w: &mut W, id: &str, s: &ScoredStep) -> io::Result<()> {
    let line = ScoreLine {
        sequence_id: id,
        t: s.t,
        score: s.score,
        warm_up: s.warm_up,
    };
    writeln!(w, "{}", serde_json::to_string(&line).expect("json"))
}

fn sequence_id(input: &Path) -> Result<String, CliError> {
    if input == Path::new("-") {
        return Ok("stdin".into());
    }
    if let Some(meta) = load_sidecar(input)? {
        return Ok(meta.sequence_id);
    }
    let name = input.file_name().and_then(|n| n.to_str());
    if let Some(stem) = name.and_then(|n| n.strip_suffix(FEATURES_SUFFIX)) {
        return Ok(stem.to_owned());
    }
    Ok(stem_of(input).unwrap_or_else(|| input.display().to_string()))
}

fn open_input(input: &Path) -> Result<Box<dyn Read + Send>, CliError> {
    if input == Path::new("-") {
        Ok(Box::new(io::stdin()))
    } else {
        Ok(Box::new(fs::File::open(input).map_err(|e| {
            CliError::data(format!("{}: {e}", input.display()))
        })?))
    }
}

/// Scores one input, writing a line per emitted step.
fn detect_one<W: Write>(
    model: &RecurrentModel,
    cfg: &RunConfig,
    as_features: bool,
    input: &Path,
    sink: &mut W,
) -> Result<(), CliError> {
    let id = sequence_id(input)?;
    let src = BufReader::new(open_input(input)?);
    if as_features {
        let steps = read_features_csv(src)?;
        let mut det = StreamingDetector::new(model, cfg.pipeline(), 1)?;
        for s in &steps {
            emit(sink, &id, &det.score_step(s)?)?;
        }
        return Ok(());
    }
    let reader = read_stream(src)?;
    let mut det = StreamingDetector::new(model, cfg.pipeline(), reader.header().frame_width())?;
    for frame in reader {
        if let Some(s) = det.push(&frame?)? {
            emit(sink, &id, &s)?;
        }
    }
    if let Some(s) = det.flush()? {
        emit(sink, &id, &s)?;
    }
    Ok(())
}

fn detect(
    cfg: &RunConfig,
    model: &Path,
    as_features: bool,
    inputs: &[PathBuf],
) -> Result<(), CliError> {
    let model = model_inputs(model)?;
    let stdout = io::stdout();
    if let [single] = inputs {
        let mut out = stdout.lock();
        detect_one(&model, cfg, as_features, single, &mut out)?;
        return Ok(out.flush()?);
    }
    if inputs
        .iter()
        .filter(|p| p.as_path() == Path::new("-"))
        .count()
        > 1
    {
        return Err(CliError::config("stdin can be read only once"));
    }
    // Each stream is buffered whole so lines of different streams never
    // interleave; buffers are printed in input order.
    let buffers = inputs
        .par_iter()
        .map(|p| {
            let mut buf = Vec::new();
            detect_one(&model, cfg, as_features, p, &mut buf)?;
            Ok(buf)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut out = stdout.lock();
    for b in buffers {
        out.write_all(&b)?;
    }
    Ok(out.flush()?)
}

fn eval(
    cfg: &RunConfig,
    data: Option<&Path>,
    model: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let data = data_dir(data, cfg)?;
    let dir = out_dir(out, cfg)?;
    let model_m = model_inputs(model)?;
    let corpus = load_corpus(&data)?;
    // Without a validation split the F1 threshold is chosen on test.
    let val = if corpus.split(Split::Val).next().is_some() {
        split_features(&corpus, Split::Val, cfg)?
    } else {
        Vec::new()
    };
    let start = Instant::now();
    let test = split_features(&corpus, Split::Test, cfg)?;
    let feature_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    score_sequences(&model_m, &test, cfg.pooling)?;
    let inference_seconds = start.elapsed().as_secs_f64();
    let mut report = evaluate(&model_m, &val, &test, cfg.pooling)?;
    let runtime = RuntimeStats {
        sequences: test.len(),
        feature_seconds,
        inference_seconds,
    };
    report.runtime = Some(runtime);

    let mut art = Artifacts::new(dir);
    let mut buf = Vec::new();
    report.write_scores_csv(&mut buf)?;
    art.write("scores.csv", buf)?;
    let mut buf = Vec::new();
    report.write_roc_csv(&mut buf)?;
    art.write("roc.csv", buf)?;
    art.write("report.json", to_json(&report.summary_json()))?;
    art.write("runtime.json", to_json(&runtime))?;
    art.write(
        "roc.svg",
        line_chart(
            &format!("ROC (AUROC {:.4})", report.auroc),
            "false positive rate",
            "true positive rate",
            &[Series {
                name: model_m.cell().name(),
                points: report.roc_points.iter().map(|p| (p.fpr, p.tpr)).collect(),
            }],
        ),
    )?;
    art.finish("eval", cfg, &corpus_inputs(&data, Some(model)))?;
    println!("{}", report.summary_json());
    Ok(())
}

fn sweep(
    cfg: &RunConfig,
    data: Option<&Path>,
    out: Option<&Path>,
    sizes: &[usize],
    sliding: bool,
    repeats: usize,
) -> Result<(), CliError> {
    let data = data_dir(data, cfg)?;
    let dir = out_dir(out, cfg)?;
    if sizes.contains(&0) {
        return Err(CliError::config("window sizes must be >= 1"));
    }
    let corpus = load_corpus(&data)?;
    let spec = cfg.classifier(loss_for(&corpus));
    let rows = window_size_sweep(
        &corpus,
        sizes,
        &cfg.pipeline(),
        &spec,
        cfg.pooling,
        !sliding,
        repeats,
    )?;
    let mut csv = String::from("window,stride,windows_per_sequence,auroc,seconds_per_sequence\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.window, r.stride, r.windows_per_sequence, r.auroc, r.seconds_per_sequence
        );
    }
    let mut art = Artifacts::new(dir);
    art.write("sweep.csv", csv)?;
    let stable: Vec<_> = rows
        .iter()
        .map(|r| json!({"window": r.window, "stride": r.stride, "windows_per_sequence": r.windows_per_sequence, "auroc": r.auroc}))
        .collect();
    art.write("sweep.json", to_json(&stable))?;
    art.write(
        "sweep_auroc.svg",
        line_chart(
            "AUROC by window size",
            "window N",
            "AUROC",
            &[Series {
                name: spec.cell.name(),
                points: rows.iter().map(|r| (r.window as f64, r.auroc)).collect(),
            }],
        ),
    )?;
    art.write(
        "sweep_latency.svg",
        line_chart(
            "latency by window size",
            "window N",
            "ms per sequence",
            &[Series {
                name: spec.cell.name(),
                points: rows
                    .iter()
                    .map(|r| (r.window as f64, r.seconds_per_sequence * 1e3))
                    .collect(),
            }],
        ),
    )?;
    art.finish("sweep", cfg, &corpus_inputs(&data, None))?;
    println!("{}", serde_json::Value::Array(stable));
    Ok(())
}

fn prefix(
    cfg: &RunConfig,
    data: Option<&Path>,
    model: &Path,
    out: Option<&Path>,
    prefixes: &[u64],
) -> Result<(), CliError> {
    let data = data_dir(data, cfg)?;
    let dir = out_dir(out, cfg)?;
    let m = model_inputs(model)?;
    let corpus = load_corpus(&data)?;
    let test = split_features(&corpus, Split::Test, cfg)?;
    let rows = prefix_auroc_curve(&m, &test, prefixes, cfg.pooling)?;
    let mut csv = String::from("prefix,auroc,warm_up_sequences,sequences\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.prefix, r.auroc, r.warm_up_sequences, r.sequences
        );
    }
    let mut art = Artifacts::new(dir);
    art.write("prefix.csv", csv)?;
    art.write("prefix.json", to_json(&rows))?;
    art.write(
        "prefix.svg",
        line_chart(
            "AUROC by prefix length",
            "tokens seen",
            "AUROC",
            &[Series {
                name: m.cell().name(),
                points: rows.iter().map(|r| (r.prefix as f64, r.auroc)).collect(),
            }],
        ),
    )?;
    art.finish("prefix", cfg, &corpus_inputs(&data, Some(model)))?;
    println!("{}", serde_json::to_string(&rows).expect("json"));
    Ok(())
}

fn ablate(
    cfg: &RunConfig,
    data: Option<&Path>,
    out: Option<&Path>,
    sample: Option<usize>,
) -> Result<(), CliError> {
    let data = data_dir(data, cfg)?;
    let dir = out_dir(out, cfg)?;
    let corpus = load_corpus(&data)?;
    let train = split_features(&corpus, Split::Train, cfg)?;
    let test = split_features(&corpus, Split::Test, cfg)?;
    let spec = cfg.classifier(auto_loss_mode(&train));
    let table = triplet_ablation(&train, &test, &spec, cfg.pooling, sample, cfg.seed)?;

    let mut csv = String::from("a,b,c,name_a,name_b,name_c,auroc\n");
    for r in &table.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.features[0],
            r.features[1],
            r.features[2],
            r.names[0],
            r.names[1],
            r.names[2],
            r.auroc
        );
    }
    // Best AUROC of any evaluated triplet containing both features.
    let mut pair = vec![vec![f64::NAN; FEATURE_COUNT]; FEATURE_COUNT];
    for r in &table.rows {
        for &i in &r.features {
            for &j in &r.features {
                if i != j && !(pair[i][j] >= r.auroc) {
                    pair[i][j] = r.auroc;
                }
            }
        }
    }
    let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut art = Artifacts::new(dir);
    art.write("ablation.csv", csv)?;
    let summary = json!({
        "triplets": table.rows.len(),
        "best": table.best_row(),
        "worst": table.worst_row(),
    });
    art.write("ablation.json", to_json(&summary))?;
    art.write(
        "ablation.svg",
        heatmap("best triplet AUROC per feature pair", &names, &names, &pair),
    )?;
    art.finish("ablate", cfg, &corpus_inputs(&data, None))?;
    println!("{summary}");
    Ok(())
}

fn importance(
    cfg: &RunConfig,
    data: Option<&Path>,
    model: &Path,
    out: Option<&Path>,
    permutations: usize,
    max_sequences: Option<usize>,
) -> Result<(), CliError> {
    let data = data_dir(data, cfg)?;
    let dir = out_dir(out, cfg)?;
    let m = model_inputs(model)?;
    let corpus = load_corpus(&data)?;
    let mut test = split_features(&corpus, Split::Test, cfg)?;
    if let Some(n) = max_sequences {
        test.truncate(n.max(1));
    }
    let table = shapley_attribution(&m, &test, permutations, cfg.seed, cfg.pooling)?;
    let mut csv = String::from("rank,slot,name,mean_abs,mean_abs_stderr,mean,mean_stderr,share\n");
    for (rank, &i) in table.ranking.iter().enumerate() {
        let f = &table.features[i];
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            rank + 1,
            f.slot,
            f.name,
            f.mean_abs,
            f.mean_abs_stderr,
            f.mean,
            f.mean_stderr,
            f.share
        );
    }
    let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut art = Artifacts::new(dir);
    art.write("attribution.csv", csv)?;
    art.write("attribution.json", to_json(&table))?;
    art.write(
        "attribution.svg",
        heatmap(
            "share of mean |Shapley value|",
            &[m.cell().name().to_owned()],
            &names,
            &[table.features.iter().map(|f| f.share).collect()],
        ),
    )?;
    art.finish("importance", cfg, &corpus_inputs(&data, Some(model)))?;
    let top: Vec<_> = table
        .top(5)
        .iter()
        .map(|f| json!({"name": f.name, "share": f.share}))
        .collect();
    println!(
        "{}",
        json!({"top": top, "empty_score": table.empty_score, "full_score": table.full_score})
    );
    Ok(())
}
