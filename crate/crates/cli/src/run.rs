use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use densedial::corpus::{
    build_train_set, build_vocab, load_eval, load_nonparallel, load_paired, DialogueSession, Utterance,
};
use densedial::encoder::{load_checkpoint, save_checkpoint, DualEncoder, EncoderConfig};
use densedial::eval::{bench_latency, evaluate_fullrank, evaluate_rerank, GoldQuery, MetricList};
use densedial::index::{load_index, save_index, IndexKind, IndexSpec, IvfParams, LshParams, SearchParams};
use densedial::io::write_atomic;
use densedial::par::Exec;
use densedial::retrieval::{
    build_offline_index, context_text, e2e_search, pipeline_search, store_path, Bm25Index, Bm25Params, EndToEnd,
    Pipeline, PipelineConfig, Provenance, ResponseStore, StoredResponse,
};
use densedial::training::{train_with, LossKind, TrainConfig};
use densedial::{Error, Result};
use serde::Serialize;

use crate::args::*;

/// Files a command read and wrote, for the manifest.
#[derive(Default)]
pub struct Touched {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Touched {
    fn read(&mut self, p: &Path) -> PathBuf {
        self.inputs.push(p.to_path_buf());
        p.to_path_buf()
    }

    fn wrote(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Config(format!("cannot serialize output: {e}")))
}

/// Writes a single JSON document to `out`, or to standard output.
fn emit<T: Serialize>(value: &T, out: Option<&Path>, touched: &mut Touched) -> Result<()> {
    let mut text = json(value)?;
    text.push('\n');
    match out {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            touched.wrote(p);
        }
        None => print_stdout(&text)?,
    }
    Ok(())
}

fn print_stdout(text: &str) -> Result<()> {
    let mut stdout = io::stdout().lock();
    stdout
        .write_all(text.as_bytes())
        .and_then(|_| stdout.flush())
        .map_err(|e| Error::Io { path: PathBuf::from("<stdout>"), source: e })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&json(r)?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn dispatch(command: &Command, exec: Exec, touched: &mut Touched) -> Result<()> {
    match command {
        Command::Augment(a) => augment(a, touched),
        Command::Train(a) => train(a, exec, touched),
        Command::BuildIndex(a) => build_index(a, exec, touched),
        Command::Search(a) => search(a, exec, touched),
        Command::Evaluate(a) => evaluate(a, exec, touched),
        Command::E2eEval(a) => e2e_eval(a, exec, touched),
        Command::PipelineEval(a) => pipeline_eval(a, touched),
        Command::Bench(a) => bench(a, touched),
    }
}

fn augment(a: &AugmentArgs, touched: &mut Touched) -> Result<()> {
    if a.k == 0 {
        return Err(Error::Config("--k must be >= 1".into()));
    }
    let sessions = load_paired(&touched.read(&a.input))?;
    let pairs = build_train_set(&sessions, a.k);
    write_jsonl(&a.out, &pairs)?;
    touched.wrote(&a.out);
    log::info!("{} sessions -> {} pairs", sessions.len(), pairs.len());
    Ok(())
}

fn train(a: &TrainArgs, exec: Exec, touched: &mut Touched) -> Result<()> {
    let sessions = load_paired(&touched.read(&a.train))?;
    let config = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        grad_clip_norm: a.clip,
        warmup_ratio: a.warmup,
        fine_grained_k: a.k,
        loss: match a.loss {
            LossArg::Contrastive => LossKind::Contrastive,
            LossArg::Triplet => LossKind::Triplet,
        },
        margin: a.margin,
        seed: a.seed,
        ..TrainConfig::default()
    };
    config.validate()?;
    let enc_config = EncoderConfig {
        emb_dim: a.emb_dim,
        dim: a.dim,
        max_ctx_tokens: a.max_ctx_tokens,
        max_res_tokens: a.max_res_tokens,
    };
    let pairs = config.pairs(&sessions);
    // vocabulary from what the model trains on
    let texts = pairs.iter().flat_map(|p| p.context.iter().chain([&p.response]).map(Utterance::as_str));
    let vocab = build_vocab(texts, a.vocab_size, a.min_freq)?;
    log::info!("{} pairs, vocabulary of {}", pairs.len(), vocab.len());
    let encoder = DualEncoder::init(enc_config, vocab, a.seed)?;
    let (encoder, _) = train_with(encoder, &pairs, &config, exec, |entry, _| print_stdout(&format!("{}\n", json(entry)?)))?;
    save_checkpoint(&encoder, &a.out)?;
    touched.wrote(&a.out);
    Ok(())
}

fn sentences(path: &Path, provenance: Provenance, touched: &mut Touched) -> Result<Vec<StoredResponse>> {
    Ok(load_nonparallel(&touched.read(path))?
        .into_iter()
        .map(|s| StoredResponse::new(s.id, s.text, provenance))
        .collect())
}

fn build_index(a: &BuildIndexArgs, exec: Exec, touched: &mut Touched) -> Result<()> {
    let encoder = load_checkpoint(&touched.read(&a.ckpt))?;
    let mut responses = sentences(&a.responses, Provenance::Parallel, touched)?;
    for p in &a.nonparallel_in {
        responses.extend(sentences(p, Provenance::NonparallelIn, touched)?);
    }
    for p in &a.nonparallel_out {
        responses.extend(sentences(p, Provenance::NonparallelOut, touched)?);
    }
    let spec = match a.kind {
        KindArg::Flat => IndexSpec::Flat,
        KindArg::Ivf => IndexSpec::Ivf(IvfParams {
            train_size: a.train_size,
            ..IvfParams::new(a.nlist, a.seed)
        }),
        KindArg::Lsh => IndexSpec::Lsh(LshParams { bits: a.bits, seed: a.seed }),
    };
    let (index, store) = build_offline_index(&encoder, responses, spec, exec)?;
    save_index(&index, &a.out)?;
    touched.wrote(&a.out);
    let sidecar = store_path(&a.out);
    store.save(&sidecar)?;
    touched.wrote(&sidecar);

    #[derive(Serialize)]
    struct Summary {
        kind: IndexKind,
        entries: usize,
        dim: usize,
    }
    emit(&Summary { kind: index.kind(), entries: index.len(), dim: index.dim() }, None, touched)
}

/// A query line is either a JSON array of utterances or utterances separated
/// by tabs.
pub fn parse_context(line: &str, origin: &Path, number: usize) -> Result<Vec<Utterance>> {
    let bad = |message: String| Error::Parse { path: origin.to_path_buf(), line: number, message };
    let trimmed = line.trim();
    let raw: Vec<String> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| bad(e.to_string()))?
    } else {
        trimmed.split('\t').map(str::to_string).collect()
    };
    let context: Vec<Utterance> = raw.into_iter().filter_map(Utterance::new).collect();
    if context.is_empty() {
        return Err(bad("context has no utterances".into()));
    }
    Ok(context)
}

fn read_contexts(path: Option<&Path>, touched: &mut Touched) -> Result<Vec<Vec<Utterance>>> {
    let (origin, text) = match path {
        Some(p) => {
            touched.read(p);
            let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })?;
            (p.to_path_buf(), text)
        }
        None => {
            let mut text = String::new();
            for line in io::stdin().lock().lines() {
                let line = line.map_err(|e| Error::Io { path: PathBuf::from("<stdin>"), source: e })?;
                text.push_str(&line);
                text.push('\n');
            }
            (PathBuf::from("<stdin>"), text)
        }
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_context(l, &origin, i + 1))
        .collect()
}

fn search_params(q: &QueryArgs) -> SearchParams {
    SearchParams { topk: q.topk, nprobe: q.nprobe, rescore: q.rescore.max(q.topk) }
}

fn load_store(idx: &Path, touched: &mut Touched) -> Result<ResponseStore> {
    ResponseStore::load(&touched.read(&store_path(idx)))
}

fn search(a: &SearchArgs, exec: Exec, touched: &mut Touched) -> Result<()> {
    let encoder = load_checkpoint(&touched.read(&a.ckpt))?;
    let index = load_index(&touched.read(&a.idx))?;
    let store = load_store(&a.idx, touched)?;
    let contexts = read_contexts(a.queries.as_deref(), touched)?;
    let params = search_params(&a.query);

    #[derive(Serialize)]
    struct Answer<'a> {
        query: usize,
        context: &'a [Utterance],
        hits: Vec<densedial::retrieval::Hit>,
    }
    let mut text = String::new();
    for (i, c) in contexts.iter().enumerate() {
        let hits = e2e_search(&encoder, &index, &store, c, &params, exec)?;
        text.push_str(&json(&Answer { query: i, context: c, hits })?);
        text.push('\n');
    }
    match &a.out {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            touched.wrote(p);
            Ok(())
        }
        None => print_stdout(&text),
    }
}

fn evaluate(a: &EvaluateArgs, exec: Exec, touched: &mut Touched) -> Result<()> {
    let metrics: MetricList = a.metrics.parse().map_err(Error::Config)?;
    let encoder = load_checkpoint(&touched.read(&a.ckpt))?;
    let sessions = load_eval(&touched.read(&a.test))?;
    let report = evaluate_rerank(&encoder, &sessions, &metrics.0, exec)?;
    emit(&report, a.out.as_deref(), touched)
}

/// Test sessions as gold queries against `store`, resolving each gold
/// response by exact text. Sessions whose gold is not in the store are
/// dropped and counted.
fn gold_queries(sessions: &[DialogueSession], store: &ResponseStore) -> Result<(Vec<GoldQuery>, usize)> {
    let ids = store.ids_by_text();
    let mut queries = Vec::new();
    let mut unresolved = 0;
    for s in sessions {
        let Some((gold, context)) = s.utterances.split_last() else { continue };
        if context.is_empty() {
            return Err(Error::Config(format!("test session {} needs at least two utterances", s.id)));
        }
        match ids.get(gold.as_str()) {
            Some(&id) => queries.push(GoldQuery { context: context.to_vec(), gold: id }),
            None => unresolved += 1,
        }
    }
    if unresolved > 0 {
        log::warn!("{unresolved} test sessions have a gold response outside the pool and are skipped");
    }
    if queries.is_empty() {
        return Err(Error::EmptyInput("no test session has its gold response in the pool".into()));
    }
    Ok((queries, unresolved))
}

#[derive(Serialize)]
struct FullRankOutput {
    #[serde(flatten)]
    report: densedial::eval::FullRankReport,
    unresolved: usize,
}

fn e2e_eval(a: &E2eEvalArgs, exec: Exec, touched: &mut Touched) -> Result<()> {
    let encoder = load_checkpoint(&touched.read(&a.ckpt))?;
    let index = load_index(&touched.read(&a.idx))?;
    let store = load_store(&a.idx, touched)?;
    let test = load_paired(&touched.read(&a.test))?;
    let (queries, unresolved) = gold_queries(&test, &store)?;
    let sys = EndToEnd { encoder: &encoder, index: &index, store: &store, params: search_params(&a.query), exec };
    let report = evaluate_fullrank(&sys, &queries)?;
    emit(&FullRankOutput { report, unresolved }, a.out.as_deref(), touched)
}

/// BM25 documents and the response store from indexed sessions: one store
/// entry and one document (its context) per cut pair.
fn recall_corpus(sessions: &[DialogueSession], k: usize) -> Result<(Bm25Index, ResponseStore)> {
    let pairs = build_train_set(sessions, k.max(1));
    let docs: Vec<String> = pairs.iter().map(|p| context_text(&p.context)).collect();
    let responses = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| StoredResponse::new(format!("{}#{i}", p.session), p.response.clone(), Provenance::Parallel))
        .collect();
    let store = ResponseStore::new(responses)?;
    let bm25 = Bm25Index::build(docs.iter().enumerate().map(|(i, d)| (d.as_str(), i as u64)), Bm25Params::default())?;
    Ok((bm25, store))
}

fn pipeline_eval(a: &PipelineEvalArgs, touched: &mut Touched) -> Result<()> {
    let encoder = load_checkpoint(&touched.read(&a.ckpt))?;
    let indexed = load_paired(&touched.read(&a.train))?;
    let test = load_paired(&touched.read(&a.test))?;
    let (bm25, store) = recall_corpus(&indexed, a.k)?;
    let (queries, unresolved) = gold_queries(&test, &store)?;
    let config = PipelineConfig { recall_size: a.recall_size, ..PipelineConfig::default() };
    if config.recall_size == 0 {
        return Err(Error::Config("--recall-size must be >= 1".into()));
    }
    let sys = Pipeline { encoder: &encoder, bm25: &bm25, store: &store, config };
    let report = evaluate_fullrank(&sys, &queries)?;
    emit(&FullRankOutput { report, unresolved }, a.out.as_deref(), touched)
}

fn bench(a: &BenchArgs, touched: &mut Touched) -> Result<()> {
    let encoder = load_checkpoint(&touched.read(&a.ckpt))?;
    let contexts = read_contexts(Some(&a.queries), touched)?;
    let report = match a.mode {
        BenchMode::Bm25Pipeline => {
            let train = a
                .train
                .as_deref()
                .ok_or_else(|| Error::Config("bm25-pipeline mode needs --train".into()))?;
            let (bm25, store) = recall_corpus(&load_paired(&touched.read(train))?, 1)?;
            let config = PipelineConfig { recall_size: a.recall_size, ..PipelineConfig::default() };
            bench_latency("bm25-pipeline", store.len(), &contexts, a.warmup, |c| {
                pipeline_search(&encoder, &bm25, &store, c, &config, a.query.topk)
            })?
        }
        mode => {
            let idx = a.idx.as_deref().ok_or_else(|| Error::Config(format!("{mode:?} mode needs --idx")))?;
            let index = load_index(&touched.read(idx))?;
            let store = load_store(idx, touched)?;
            let want = match mode {
                BenchMode::Flat => IndexKind::Flat,
                BenchMode::Ivf => IndexKind::Ivf,
                _ => IndexKind::Lsh,
            };
            if index.kind() != want {
                return Err(Error::Config(format!(
                    "--mode {want:?} does not match the {:?} index in {}",
                    index.kind(),
                    idx.display()
                )));
            }
            let params = search_params(&a.query);
            let name = format!("{want:?}").to_lowercase();
            bench_latency(&name, index.len(), &contexts, a.warmup, |c| {
                e2e_search(&encoder, &index, &store, c, &params, Exec::Sequential)
            })?
        }
    };
    emit(&report, None, touched)
}
