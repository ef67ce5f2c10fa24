use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

/// Knowledge-graph embeddings for entity retrieval: build graphs, train
/// embeddings, re-rank runs and evaluate them.
#[derive(Debug, Parser)]
#[command(name = "kgrerank", version, propagate_version = true)]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Worker threads for training and evaluation. Only 1 is bit-reproducible
    /// for skip-gram training.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    /// TOML file of `key = value` pairs standing in for flags. Explicit flags
    /// win. Tables named after a subcommand (`[rerank]`, `[train.sgns]`)
    /// apply only to it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load triples, resolve redirects and write a canonical graph.
    Ingest(IngestArgs),
    /// Generate random-walk sentences from a graph.
    Walks(WalksArgs),
    /// Train embeddings.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Re-rank a baseline run with embedding similarity to linked entities.
    Rerank(RerankArgs),
    /// NDCG of a run against qrels.
    Eval(EvalArgs),
    /// Paired t-tests between runs.
    Compare(CompareArgs),
    /// Coherence of the relevant entities of each query.
    Coherence(CoherenceArgs),
    /// Lean precision and recall of entity-linker annotations.
    Lean(LeanArgs),
    /// Merge annotations of several linkers into one interpretation per query.
    Union(UnionArgs),
    /// Nearest neighbours of a token by cosine similarity.
    Nearest(NearestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Tsv,
    Nt,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Triple file.
    #[arg(long)]
    pub triples: PathBuf,
    /// Triple syntax: tab-separated or N-Triples.
    #[arg(long, value_enum, default_value_t = FormatArg::Tsv)]
    pub format: FormatArg,
    /// Redirect file, `source<TAB>target` per line.
    #[arg(long)]
    pub redirects: Option<PathBuf>,
    /// Keep repeated identical triples.
    #[arg(long)]
    pub keep_duplicates: bool,
    /// Embedding file used for the missing-entity report.
    #[arg(long, requires = "assessed")]
    pub embeddings: Option<PathBuf>,
    /// Qrels whose entities are checked against the graph and embeddings.
    #[arg(long, requires = "embeddings")]
    pub assessed: Option<PathBuf>,
    /// Prefix of entity rows in the embedding file.
    #[arg(long, default_value = "")]
    pub entity_prefix: String,
    /// Output directory; receives triples.tsv, redirects.tsv and, with
    /// --embeddings, missing.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WalkOpts {
    /// Hops per walk.
    #[arg(long, default_value_t = 4)]
    pub walk_depth: usize,
    /// Walks started from every entity.
    #[arg(long, default_value_t = 100)]
    pub walks: usize,
    /// Leave relation tokens out of the sentences.
    #[arg(long)]
    pub no_relations: bool,
    /// Drop one-token sentences of entities without outgoing edges.
    #[arg(long)]
    pub no_singletons: bool,
}

#[derive(Debug, Args)]
pub struct WalksArgs {
    /// Graph in TSV triples.
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub walk: WalkOpts,
    /// Sentence file, one walk per line.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    /// Skip-gram on random walks of a graph or on a sentence file.
    Sgns(SgnsArgs),
    /// Joint word and entity embeddings from documents, links and anchors.
    Joint(JointArgs),
    /// ComplEx embeddings on graph triples.
    Complex(ComplexArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Negative,
    Softmax,
}

#[derive(Debug, Args)]
pub struct SkipGramOpts {
    /// Vector dimension.
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    /// Context words on each side.
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    /// Noise samples per pair.
    #[arg(long, default_value_t = 5)]
    pub negatives: usize,
    /// Passes over the corpus.
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    /// Initial learning rate, decayed linearly.
    #[arg(long, default_value_t = 0.025)]
    pub lr: f64,
    /// Drop tokens seen fewer times.
    #[arg(long, default_value_t = 0)]
    pub min_count: usize,
    /// Frequent-token subsampling threshold; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    pub subsample: f64,
    /// Negative sampling, or full softmax for small vocabularies.
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Negative)]
    pub objective: ObjectiveArg,
}

#[derive(Debug, Args)]
pub struct SgnsArgs {
    /// Graph to walk (TSV triples).
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Pre-generated sentences, one per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub walk: WalkOpts,
    #[command(flatten)]
    pub sg: SkipGramOpts,
    /// Embedding file (word2vec text format).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct JointArgs {
    /// Directory of .txt documents or a `doc_id<TAB>text` file.
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Link graph, `entity<TAB>linked_entity` per line.
    #[arg(long)]
    pub links: Option<PathBuf>,
    /// Anchors, `doc_id<TAB>token_offset<TAB>entity` per line.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    /// Words taken on each side of an anchor.
    #[arg(long, default_value_t = 5)]
    pub anchor_window: usize,
    /// Train without the link-graph objective.
    #[arg(long)]
    pub no_link_graph: bool,
    /// Train links only in their stated direction.
    #[arg(long)]
    pub asymmetric_links: bool,
    /// Drop links and anchors involving disambiguation pages.
    #[arg(long)]
    pub exclude_disambiguation: bool,
    #[command(flatten)]
    pub sg: SkipGramOpts,
    /// Embedding file; entity rows are prefixed `ENTITY/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adagrad,
    Sgd,
}

#[derive(Debug, Args)]
pub struct ComplexArgs {
    /// Training triples (TSV).
    #[arg(long)]
    pub graph: PathBuf,
    /// Held-out triples for a link-prediction report.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Vector dimension (complex components per vector).
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    /// Passes over the training triples.
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Corrupted triples per positive.
    #[arg(long, default_value_t = 10)]
    pub negatives: usize,
    /// Positive triples per update.
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    /// L2 weight on the rows touched by each sample.
    #[arg(long, default_value_t = 0.0)]
    pub reg: f64,
    /// Update rule.
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adagrad)]
    pub optimizer: OptimizerArg,
    /// Entity file: 2d columns per row, real parts then imaginary parts.
    #[arg(long)]
    pub out: PathBuf,
    /// Relation file; defaults to the entity file name with `.relations`
    /// before the extension.
    #[arg(long)]
    pub relations_out: Option<PathBuf>,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizationArg {
    None,
    Minmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MissingArg {
    Zero,
    Skip,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    /// Baseline run (TREC format).
    #[arg(long)]
    pub run: PathBuf,
    /// Query annotations (JSON).
    #[arg(long)]
    pub ann: PathBuf,
    /// Entity embeddings (word2vec text format).
    #[arg(long)]
    pub emb: PathBuf,
    /// Prefix of entity rows, e.g. `ENTITY/` for joint embeddings.
    #[arg(long, default_value = "")]
    pub entity_prefix: String,
    /// Weight of the embedding score.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Evaluate each of these weights instead of writing a run; needs --qrels.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub lambda_sweep: Option<Vec<f64>>,
    /// Relevance judgments for --lambda-sweep.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Scaling of baseline scores before interpolation.
    #[arg(long, value_enum, default_value_t = NormalizationArg::Minmax)]
    pub normalization: NormalizationArg,
    /// Candidates without a vector: score from the baseline only, or drop.
    #[arg(long, value_enum, default_value_t = MissingArg::Zero)]
    pub missing: MissingArg,
    /// Re-rank and keep only the top k baseline entities.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Run tag of the output; defaults to the baseline tag.
    #[arg(long)]
    pub tag: Option<String>,
    /// Output run (or sweep CSV); standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GainArg {
    Linear,
    Exponential,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run to evaluate (TREC format).
    #[arg(long)]
    pub run: PathBuf,
    /// Relevance judgments (TREC qrels).
    #[arg(long)]
    pub qrels: PathBuf,
    /// Cutoffs.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "10,100")]
    pub k: Vec<usize>,
    /// Gain of a grade g: g, or 2^g - 1.
    #[arg(long, value_enum, default_value_t = GainArg::Linear)]
    pub gain: GainArg,
    /// CSV output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Runs to compare; repeat the flag, at least two.
    #[arg(long = "run", required = true, num_args = 1)]
    pub runs: Vec<PathBuf>,
    /// Relevance judgments (TREC qrels).
    #[arg(long)]
    pub qrels: PathBuf,
    /// Cutoffs.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "10,100")]
    pub k: Vec<usize>,
    /// Gain of a grade g: g, or 2^g - 1.
    #[arg(long, value_enum, default_value_t = GainArg::Linear)]
    pub gain: GainArg,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// CSV output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoherenceArgs {
    /// Relevance judgments; entities with grade 1 or more are relevant.
    #[arg(long)]
    pub qrels: PathBuf,
    /// Entity embeddings (word2vec text format).
    #[arg(long)]
    pub emb: PathBuf,
    /// Prefix of entity rows, e.g. `ENTITY/` for joint embeddings.
    #[arg(long, default_value = "")]
    pub entity_prefix: String,
    /// Similarity threshold.
    #[arg(long, default_value_t = 0.7)]
    pub tau: f64,
    /// Queries with fewer relevant entities (with vectors) are skipped.
    #[arg(long, default_value_t = 10)]
    pub min_rel: usize,
    /// CSV output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LeanArgs {
    /// System annotations (JSON).
    #[arg(long)]
    pub system: PathBuf,
    /// Gold annotations (JSON).
    #[arg(long)]
    pub gold: PathBuf,
    /// CSV output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct UnionArgs {
    /// Annotation files; repeat the flag.
    #[arg(long = "ann", required = true, num_args = 1)]
    pub anns: Vec<PathBuf>,
    /// Merged JSON; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NearestArgs {
    /// Embeddings (word2vec text format).
    #[arg(long)]
    pub emb: PathBuf,
    /// Row to search from, with any prefix included.
    #[arg(long)]
    pub token: String,
    /// Number of neighbours.
    #[arg(long, short, default_value_t = 10)]
    pub n: usize,
}
