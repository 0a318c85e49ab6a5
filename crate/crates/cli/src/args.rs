use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug, Serialize)]
#[command(name = "densedial", version, about = "Dense dual-encoder response retrieval")]
pub struct Cli {
    /// Worker threads for data-parallel loops.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// Write the run manifest (flags, input digests, timing) as JSON here.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Cut sessions into fine-grained context/response pairs.
    Augment(AugmentArgs),
    /// Train a dual encoder on a paired corpus.
    Train(TrainArgs),
    /// Encode responses and build a vector index.
    BuildIndex(BuildIndexArgs),
    /// Answer contexts read one per line.
    Search(SearchArgs),
    /// Re-rank metrics on a labeled candidate file.
    Evaluate(EvaluateArgs),
    /// Full-pool gold recovery of the end-to-end searcher.
    E2eEval(E2eEvalArgs),
    /// Full-pool gold recovery of BM25 recall plus dense rerank.
    PipelineEval(PipelineEvalArgs),
    /// Single-threaded query latency.
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Augment(_) => "augment",
            Command::Train(_) => "train",
            Command::BuildIndex(_) => "build-index",
            Command::Search(_) => "search",
            Command::Evaluate(_) => "evaluate",
            Command::E2eEval(_) => "e2e-eval",
            Command::PipelineEval(_) => "pipeline-eval",
            Command::Bench(_) => "bench",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Train(a) => Some(a.seed),
            Command::BuildIndex(a) => Some(a.seed),
            _ => None,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct AugmentArgs {
    /// Sessions, paired_jsonl.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fine-grained degree: pairs cut per session.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Contrastive,
    Triplet,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Training sessions, paired_jsonl.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Contrastive)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 0.1)]
    pub margin: f64,
    #[arg(long, default_value_t = 0.0)]
    pub warmup: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30_000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    #[arg(long, default_value_t = 512)]
    pub emb_dim: usize,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 256)]
    pub max_ctx_tokens: usize,
    #[arg(long, default_value_t = 64)]
    pub max_res_tokens: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Flat,
    Ivf,
    Lsh,
}

#[derive(Args, Debug, Serialize)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Gold responses, nonparallel_jsonl.
    #[arg(long)]
    pub responses: PathBuf,
    /// Extra unpaired sentences from the training domain.
    #[arg(long)]
    pub nonparallel_in: Vec<PathBuf>,
    /// Extra unpaired sentences from outside the training domain.
    #[arg(long)]
    pub nonparallel_out: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub nlist: usize,
    /// Train the IVF quantizer on this many sampled vectors.
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub bits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize, Clone, Copy)]
pub struct QueryArgs {
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    #[arg(long, default_value_t = 8)]
    pub nprobe: usize,
    /// LSH candidates rescored exactly.
    #[arg(long, default_value_t = 1000)]
    pub rescore: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct SearchArgs {
    #[arg(long)]
    pub idx: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Contexts, one per line (JSON array of utterances or tab separated).
    /// Standard input when omitted.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub query: QueryArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// eval_jsonl sessions with labeled candidates.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "map,mrr,p1,r10@1,r10@2,r10@5,ndcg@3,ndcg@5")]
    pub metrics: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct E2eEvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub idx: PathBuf,
    /// Test sessions, paired_jsonl; the last utterance is the gold response.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub query: QueryArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct PipelineEvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Sessions whose contexts BM25 indexes, paired_jsonl.
    #[arg(long)]
    pub train: PathBuf,
    /// Test sessions, paired_jsonl; the last utterance is the gold response.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub recall_size: usize,
    /// Fine-grained degree used to cut the indexed sessions.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    Flat,
    Ivf,
    Lsh,
    Bm25Pipeline,
}

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    /// Vector index; unused in bm25-pipeline mode.
    #[arg(long, required_unless_present = "train")]
    pub idx: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_enum)]
    pub mode: BenchMode,
    /// Sessions for the BM25 recall module (bm25-pipeline mode).
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[arg(long, default_value_t = 100)]
    pub recall_size: usize,
    #[command(flatten)]
    pub query: QueryArgs,
}
