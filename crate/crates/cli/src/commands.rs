use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kgrerank::complex::{self, Optimizer, TrainConfig};
use kgrerank::eval::{self, Gain};
use kgrerank::joint::{self, CorpusOptions, JointConfig};
use kgrerank::kg::{self, LoadOptions, TripleFormat};
use kgrerank::linking::{self, AnnotationSet};
use kgrerank::rerank::{self, MissingPolicy, Normalization, RerankConfig};
use kgrerank::sgns::{self, Objective, SgnsConfig};
use kgrerank::trec::{Qrels, RankedRun};
use kgrerank::walks::{self, WalkConfig};
use kgrerank::{EmbeddingSpace, KnowledgeGraph, PrefixedLookup, Triple};

use crate::args::*;
use crate::Failure;

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Failure::Validation(msg.into()).into()
}

/// Opens `path` for writing, or standard output when `None`.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| kgrerank::Error::Io {
            path: p.into(),
            source: e,
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| kgrerank::Error::Io {
        path: path.into(),
        source: e,
    })?))
}

fn load_graph(path: &Path) -> Result<KnowledgeGraph> {
    let (graph, diag) = kg::load_triples(
        path,
        LoadOptions {
            format: TripleFormat::Tsv,
            dedup: true,
        },
    )?;
    if !diag.skipped.is_empty() {
        log::warn!("{}: skipped {} malformed lines", path.display(), diag.skipped.len());
    }
    Ok(graph)
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.workers == 0 {
        return Err(invalid("--workers must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global()
        .context("starting worker pool")?;
    let g = Globals {
        seed: cli.seed,
        workers: cli.workers,
    };
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Walks(a) => walks_cmd(a, &g),
        Command::Train(TrainCommand::Sgns(a)) => train_sgns(a, &g),
        Command::Train(TrainCommand::Joint(a)) => train_joint(a, &g),
        Command::Train(TrainCommand::Complex(a)) => train_complex(a, &g),
        Command::Rerank(a) => rerank_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Compare(a) => compare(a),
        Command::Coherence(a) => coherence(a),
        Command::Lean(a) => lean(a),
        Command::Union(a) => union(a),
        Command::Nearest(a) => nearest(a),
    }
}

struct Globals {
    seed: u64,
    workers: usize,
}

fn ingest(a: IngestArgs) -> Result<()> {
    let opts = LoadOptions {
        format: match a.format {
            FormatArg::Tsv => TripleFormat::Tsv,
            FormatArg::Nt => TripleFormat::NTriplesLite,
        },
        dedup: !a.keep_duplicates,
    };
    let (mut graph, diag) = kg::load_triples(&a.triples, opts)?;
    for (line, reason) in &diag.skipped {
        log::warn!("{}:{line}: {reason}", a.triples.display());
    }
    if diag.literal_tails > 0 {
        log::info!("dropped {} statements with literal objects", diag.literal_tails);
    }
    if let Some(path) = &a.redirects {
        let pairs = kg::load_redirects(path)?;
        let (resolved, rd) = kg::resolve_redirects(&graph, &pairs);
        graph = resolved;
        log::info!(
            "redirects: {} edges rewritten, {} cycles, {} self-redirects, {} dangling targets",
            rd.rewritten_edges,
            rd.cycles.len(),
            rd.self_redirects,
            rd.dangling_targets.len()
        );
    }
    fs::create_dir_all(&a.out).map_err(|e| kgrerank::Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    graph.save_tsv(&a.out.join("triples.tsv"))?;
    let mut w = create(&a.out.join("redirects.tsv"))?;
    for (from, to) in graph.redirects() {
        writeln!(w, "{from}\t{to}")?;
    }
    w.flush()?;

    let mut out = io::stdout().lock();
    writeln!(out, "entities\t{}", graph.num_entities())?;
    writeln!(out, "relations\t{}", graph.num_relations())?;
    writeln!(out, "triples\t{}", graph.edges().len())?;
    writeln!(out, "skipped_lines\t{}", diag.skipped.len())?;
    writeln!(out, "duplicates_removed\t{}", diag.duplicates_removed)?;

    if let (Some(emb), Some(assessed)) = (&a.embeddings, &a.assessed) {
        let space = EmbeddingSpace::load_word2vec(emb)?;
        let qrels = Qrels::load(assessed)?;
        let ids: Vec<String> = qrels.queries().flat_map(|(_, j)| j.keys().cloned()).collect();
        let lookup = PrefixedLookup::new(&space, a.entity_prefix.clone());
        let report = kg::missing_entities(&graph, &lookup, &ids);
        report.write_csv(create(&a.out.join("missing.csv"))?)?;
        writeln!(out, "missing_no_page\t{}", report.no_page.len())?;
        writeln!(out, "missing_no_emb\t{}", report.no_emb.len())?;
    }
    Ok(())
}

fn walk_config(w: &WalkOpts, seed: u64) -> WalkConfig {
    WalkConfig {
        depth: w.walk_depth,
        walks_per_entity: w.walks,
        seed,
        include_relations: !w.no_relations,
        emit_singletons: !w.no_singletons,
    }
}

fn walks_cmd(a: WalksArgs, g: &Globals) -> Result<()> {
    let graph = load_graph(&a.graph)?;
    let corpus = walks::generate_walks(&graph, &walk_config(&a.walk, g.seed))?;
    corpus.save(&a.out)?;
    log::info!("wrote {} walks to {}", corpus.len(), a.out.display());
    Ok(())
}

fn sgns_config(o: &SkipGramOpts, g: &Globals) -> SgnsConfig {
    SgnsConfig {
        dim: o.dim,
        window: o.window,
        negatives: o.negatives,
        epochs: o.epochs,
        learning_rate: o.lr,
        min_count: o.min_count,
        subsample: o.subsample,
        seed: g.seed,
        objective: match o.objective {
            ObjectiveArg::Negative => Objective::NegativeSampling,
            ObjectiveArg::Softmax => Objective::FullSoftmax,
        },
        workers: g.workers,
    }
}

fn train_sgns(a: SgnsArgs, g: &Globals) -> Result<()> {
    let sentences: Vec<Vec<String>> = match (&a.graph, &a.corpus) {
        (Some(_), Some(_)) => return Err(invalid("give either --graph or --corpus, not both")),
        (None, None) => return Err(invalid("train sgns needs --graph or --corpus")),
        (None, Some(path)) => walks::load_sentences(path)?,
        (Some(path), None) => {
            let graph = load_graph(path)?;
            let corpus = walks::generate_walks(&graph, &walk_config(&a.walk, g.seed))?;
            log::info!("generated {} walks", corpus.len());
            corpus
                .sentences()
                .into_iter()
                .map(|s| s.into_iter().map(str::to_owned).collect())
                .collect()
        }
    };
    let model = sgns::train_skipgram(&sentences, &sgns_config(&a.sg, g))?;
    model.space.save_word2vec(&a.out)?;
    if let Some(path) = &a.loss_log {
        let mut w = create(path)?;
        writeln!(w, "epoch,mean_loss,pairs")?;
        for l in &model.losses {
            writeln!(w, "{},{:.6},{}", l.epoch, l.mean_loss, l.pairs)?;
        }
        w.flush()?;
    }
    log::info!("wrote {} vectors to {}", model.space.len(), a.out.display());
    Ok(())
}

fn train_joint(a: JointArgs, g: &Globals) -> Result<()> {
    let Some(docs_path) = &a.docs else {
        return Err(invalid("train joint needs --docs"));
    };
    let links = match (&a.links, a.no_link_graph) {
        (Some(p), _) => joint::load_links(p)?,
        (None, true) => Vec::new(),
        (None, false) => return Err(invalid("train joint needs --links unless --no-link-graph is set")),
    };
    let docs = joint::load_documents(docs_path)?;
    let anchors = match &a.anchors {
        Some(p) => joint::load_anchors(p)?,
        None => Vec::new(),
    };
    let opts = CorpusOptions {
        anchor_window: a.anchor_window,
        min_count: a.sg.min_count,
        include_disambiguation: !a.exclude_disambiguation,
    };
    let corpus = joint::build_joint_corpus(&docs, &links, &anchors, &opts)?;
    let cfg = JointConfig {
        sgns: sgns_config(&a.sg, g),
        use_link_graph: !a.no_link_graph,
        symmetric_links: !a.asymmetric_links,
    };
    let counts = corpus.pair_counts(cfg.sgns.window, cfg.symmetric_links);
    log::info!(
        "joint corpus: {} words, {} entities; pairs per epoch: word {}, link {}, anchor {}",
        corpus.words.len(),
        corpus.entities.len(),
        counts.word,
        if cfg.use_link_graph { counts.link } else { 0 },
        counts.anchor
    );
    let model = joint::train_joint(&corpus, &cfg)?;
    model.space.save_word2vec(&a.out)?;
    if let Some(path) = &a.loss_log {
        let mut w = create(path)?;
        writeln!(w, "epoch,word,link,anchor,total,pairs")?;
        for l in &model.losses {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6},{}",
                l.epoch, l.word, l.link, l.anchor, l.total, l.pairs
            )?;
        }
        w.flush()?;
    }
    Ok(())
}

fn relations_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.relations.{}", ext.to_string_lossy()),
        None => format!("{stem}.relations"),
    };
    out.with_file_name(name)
}

fn train_complex(a: ComplexArgs, g: &Globals) -> Result<()> {
    let graph = load_graph(&a.graph)?;
    let test: Vec<Triple> = match &a.test {
        None => Vec::new(),
        Some(path) => {
            let held = load_graph(path)?;
            held.edges()
                .iter()
                .map(|t| {
                    let (h, r, tl) = held.triple_names(t);
                    match (graph.entity(h), graph.relation(r), graph.entity(tl)) {
                        (Some(head), Some(relation), Some(tail)) => Ok(Triple { head, relation, tail }),
                        _ => Err(invalid(format!(
                            "test triple ({h}, {r}, {tl}) names an id absent from the training graph"
                        ))),
                    }
                })
                .collect::<Result<_>>()?
        }
    };
    let cfg = TrainConfig {
        dim: a.dim,
        epochs: a.epochs,
        learning_rate: a.lr,
        negatives: a.negatives,
        batch_size: a.batch_size,
        seed: g.seed,
        regularization: a.reg,
        optimizer: match a.optimizer {
            OptimizerArg::Adagrad => Optimizer::Adagrad,
            OptimizerArg::Sgd => Optimizer::Sgd,
        },
        ..Default::default()
    };
    let model = complex::train_complex(&graph, &cfg)?;
    let rel_out = a.relations_out.clone().unwrap_or_else(|| relations_path(&a.out));
    model.space.save(&a.out, &rel_out)?;
    if let Some(path) = &a.loss_log {
        complex::save_losses(&model.losses, path)?;
    }
    if !test.is_empty() {
        let known = complex::known_triples(graph.edges().iter().chain(&test));
        let lp = complex::link_prediction(&model.space, &test, &known)?;
        let mut out = io::stdout().lock();
        writeln!(out, "test_triples\t{}", test.len())?;
        writeln!(out, "raw_mrr\t{:.6}", lp.raw_mrr)?;
        writeln!(out, "filtered_mrr\t{:.6}", lp.filtered_mrr)?;
        writeln!(out, "hits@1\t{:.6}", lp.hits[0])?;
        writeln!(out, "hits@3\t{:.6}", lp.hits[1])?;
        writeln!(out, "hits@10\t{:.6}", lp.hits[2])?;
        writeln!(out, "random_mrr\t{:.6}", complex::random_mrr(graph.num_entities()))?;
    }
    Ok(())
}

fn rerank_cmd(a: RerankArgs) -> Result<()> {
    let baseline = RankedRun::load(&a.run)?;
    let annotations = AnnotationSet::load(&a.ann)?;
    let space = EmbeddingSpace::load_word2vec(&a.emb)?;
    let lookup = PrefixedLookup::new(&space, a.entity_prefix.clone());
    let cfg = RerankConfig {
        lambda: a.lambda,
        normalization: match a.normalization {
            NormalizationArg::None => Normalization::None,
            NormalizationArg::Minmax => Normalization::MinMax,
        },
        missing: match a.missing {
            MissingArg::Zero => MissingPolicy::ZeroContribution,
            MissingArg::Skip => MissingPolicy::SkipEntity,
        },
        depth: a.depth,
    };
    if let Some(grid) = &a.lambda_sweep {
        let Some(qrels_path) = &a.qrels else {
            return Err(invalid("--lambda-sweep needs --qrels"));
        };
        let qrels = Qrels::load(qrels_path)?;
        let rows = rerank::sweep_lambda(&baseline, &annotations, &lookup, &qrels, grid, &cfg)?;
        rerank::write_sweep_csv(&rows, output(a.out.as_deref())?)?;
        return Ok(());
    }
    let (mut run, diag) = rerank::rerank_run(&baseline, &annotations, &lookup, &cfg)?;
    if let Some(tag) = &a.tag {
        run.tag = tag.clone();
    }
    log::info!(
        "re-ranked {} queries; {} without annotations, {} candidates and {} linked entities without vectors",
        run.num_queries(),
        diag.unannotated_queries.len(),
        diag.missing_candidates,
        diag.missing_linked
    );
    let mut out = output(a.out.as_deref())?;
    run.write(&mut out)?;
    out.flush()?;
    Ok(())
}

fn gain(g: GainArg) -> Gain {
    match g {
        GainArg::Linear => Gain::Linear,
        GainArg::Exponential => Gain::Exponential,
    }
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let run = RankedRun::load(&a.run)?;
    let qrels = Qrels::load(&a.qrels)?;
    let result = eval::evaluate(&run, &qrels, &a.k, gain(a.gain))?;
    if !result.no_relevant.is_empty() {
        log::warn!(
            "{} queries have no relevant entities and score 0",
            result.no_relevant.len()
        );
    }
    if !result.missing_from_run.is_empty() {
        log::warn!(
            "{} judged queries are absent from the run and score 0",
            result.missing_from_run.len()
        );
    }
    result.write_csv(output(a.out.as_deref())?)?;
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    if a.runs.len() < 2 {
        return Err(invalid("compare needs at least two --run files"));
    }
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(invalid("--alpha must lie in (0, 1)"));
    }
    let qrels = Qrels::load(&a.qrels)?;
    let stems: Vec<String> = a
        .runs
        .iter()
        .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let unique = stems.iter().collect::<std::collections::HashSet<_>>().len() == stems.len();
    let mut evals = Vec::with_capacity(a.runs.len());
    for (path, stem) in a.runs.iter().zip(&stems) {
        let run = RankedRun::load(path)?;
        let name = if unique {
            stem.clone()
        } else {
            path.display().to_string()
        };
        evals.push((name, eval::evaluate(&run, &qrels, &a.k, gain(a.gain))?));
    }
    let rows = eval::compare_runs(&evals)?;
    eval::write_significance_csv(&rows, a.alpha, output(a.out.as_deref())?)?;
    Ok(())
}

fn coherence(a: CoherenceArgs) -> Result<()> {
    if !(-1.0..=1.0).contains(&a.tau) {
        return Err(invalid("--tau must lie in [-1, 1]"));
    }
    let qrels = Qrels::load(&a.qrels)?;
    let space = EmbeddingSpace::load_word2vec(&a.emb)?;
    let lookup = PrefixedLookup::new(&space, a.entity_prefix.clone());
    let report = eval::coherence_report(&qrels, &lookup, a.tau, a.min_rel);
    if report.rows.is_empty() {
        log::warn!("no query has {} relevant entities with vectors", a.min_rel.max(2));
    }
    report.write_csv(output(a.out.as_deref())?)?;
    Ok(())
}

fn lean(a: LeanArgs) -> Result<()> {
    let system = AnnotationSet::load(&a.system)?;
    let gold = AnnotationSet::load(&a.gold)?;
    let report = linking::lean_eval_set(&system, &gold)?;
    if !report.unmatched_system.is_empty() {
        log::warn!(
            "{} system queries have no gold annotations",
            report.unmatched_system.len()
        );
    }
    report.write_csv(output(a.out.as_deref())?)?;
    Ok(())
}

fn union(a: UnionArgs) -> Result<()> {
    let sets = a
        .anns
        .iter()
        .map(|p| AnnotationSet::load(p))
        .collect::<kgrerank::Result<Vec<_>>>()?;
    let merged = linking::union_sets(&sets)?;
    let mut out = output(a.out.as_deref())?;
    out.write_all(merged.to_json()?.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn nearest(a: NearestArgs) -> Result<()> {
    let space = EmbeddingSpace::load_word2vec(&a.emb)?;
    let hits = space.nearest(&a.token, a.n).map_err(kgrerank::Error::from)?;
    let mut out = io::stdout().lock();
    for (token, cos) in hits {
        writeln!(out, "{token}\t{cos:.6}")?;
    }
    Ok(())
}
