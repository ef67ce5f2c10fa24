//! Joint word and entity embeddings in one vector space.
//!
//! Three streams of skip-gram pairs share a single input table (words first,
//! then entities) and a single output table:
//!
//! - word context: words predict nearby words in documents;
//! - link graph: an entity predicts the entities it links to;
//! - anchor context: an entity predicts the words around its anchors.
//!
//! The objective is the plain sum of the three negative-sampling losses.
//! Word targets draw negatives from word noise, entity targets from entity
//! noise.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::embedding::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::kg::Vocab;
use crate::math::{dot, rng_for, SharedTable};
use crate::sgns::{init_input_rows, keep_probabilities, sgd_pair, NoiseTable, Objective, SgnsConfig};

/// Row prefix that marks entities in exported files.
pub const ENTITY_PREFIX: &str = "ENTITY/";

const DISAMBIGUATION_SUFFIX: &str = "(disambiguation)";

/// Whether an entity id names a disambiguation page.
pub fn is_disambiguation(entity: &str) -> bool {
    entity.ends_with(DISAMBIGUATION_SUFFIX)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusOptions {
    /// Words taken on each side of an anchor.
    pub anchor_window: usize,
    /// Words rarer than this are dropped.
    pub min_count: usize,
    /// Keep links and anchors that involve disambiguation pages.
    pub include_disambiguation: bool,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            anchor_window: 5,
            min_count: 0,
            include_disambiguation: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusDiagnostics {
    /// Anchors that could not be placed, with the reason.
    pub skipped_anchors: Vec<String>,
    pub self_links: usize,
    pub duplicate_links: usize,
    /// Links and anchors dropped by the disambiguation filter.
    pub disambiguation_dropped: usize,
    /// Document tokens that collide with the entity prefix.
    pub reserved_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub entity: u32,
    /// Word ids of up to `c` words before and after the anchor token.
    pub context: Vec<u32>,
}

/// Training material for [`train_joint`]. Word ids index `words`, entity ids
/// index `entities`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCorpus {
    pub words: Vocab,
    pub word_counts: Vec<u64>,
    pub entities: Vocab,
    pub docs: Vec<Vec<u32>>,
    /// Directed links `(e_i, e_o)`, no self-links, no duplicates.
    pub links: Vec<(u32, u32)>,
    pub anchors: Vec<Anchor>,
    pub diagnostics: CorpusDiagnostics,
}

/// Pair totals of one corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub word: u64,
    pub link: u64,
    pub anchor: u64,
}

impl JointCorpus {
    pub fn pair_counts(&self, window: usize, symmetric_links: bool) -> PairCounts {
        let word = self
            .docs
            .iter()
            .map(|d| {
                (0..d.len())
                    .map(|p| (p.min(window) + (d.len() - 1 - p).min(window)) as u64)
                    .sum::<u64>()
            })
            .sum();
        let link = self.links.len() as u64 * if symmetric_links { 2 } else { 1 };
        let anchor = self.anchors.iter().map(|a| a.context.len() as u64).sum();
        PairCounts { word, link, anchor }
    }
}

/// Reads documents from a directory of `.txt` files (id = file stem, sorted
/// by name) or from a TSV file of `doc_id<TAB>text` lines.
pub fn load_documents(path: &Path) -> Result<Vec<(String, String)>> {
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| {
                let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                Ok((id, text))
            })
            .collect()
    } else {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let source = path.display().to_string();
        let mut docs = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, body) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&source, i + 1, "expected doc_id<TAB>text"))?;
            if !seen.insert(id.to_owned()) {
                return Err(Error::parse(&source, i + 1, format!("duplicate document id {id}")));
            }
            docs.push((id.to_owned(), body.to_owned()));
        }
        Ok(docs)
    }
}

fn tsv_rows(text: &str, source: &str, columns: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(|f| f.trim().to_owned()).collect();
        if fields.len() != columns || fields.iter().any(String::is_empty) {
            return Err(Error::parse(
                source,
                i + 1,
                format!("expected {columns} tab-separated fields"),
            ));
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

/// `entity<TAB>linked_entity` lines.
pub fn parse_links(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    Ok(tsv_rows(text, source, 2)?
        .into_iter()
        .map(|(_, mut f)| {
            let o = f.pop().unwrap_or_default();
            (f.pop().unwrap_or_default(), o)
        })
        .collect())
}

pub fn load_links(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_links(&text, &path.display().to_string())
}

/// An anchor position: the token at `offset` in document `doc` links to `entity`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorSpan {
    pub doc: String,
    pub offset: usize,
    pub entity: String,
}

/// `doc_id<TAB>token_offset<TAB>entity` lines.
pub fn parse_anchors(text: &str, source: &str) -> Result<Vec<AnchorSpan>> {
    tsv_rows(text, source, 3)?
        .into_iter()
        .map(|(line, f)| {
            let offset = f[1]
                .parse()
                .map_err(|_| Error::parse(source, line, format!("bad token offset {:?}", f[1])))?;
            Ok(AnchorSpan {
                doc: f[0].clone(),
                offset,
                entity: f[2].clone(),
            })
        })
        .collect()
}

pub fn load_anchors(path: &Path) -> Result<Vec<AnchorSpan>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_anchors(&text, &path.display().to_string())
}

/// Tokenises documents on whitespace and assembles the three pair sources.
/// Anchor offsets count whitespace tokens from zero.
pub fn build_joint_corpus(
    docs: &[(String, String)],
    links: &[(String, String)],
    anchors: &[AnchorSpan],
    opts: &CorpusOptions,
) -> Result<JointCorpus> {
    let mut diag = CorpusDiagnostics::default();
    let tokenised: Vec<Vec<&str>> = docs.iter().map(|(_, t)| t.split_whitespace().collect()).collect();
    let doc_index: HashMap<&str, usize> = docs.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect();

    let mut raw_counts: HashMap<&str, u64> = HashMap::new();
    for doc in &tokenised {
        for t in doc {
            *raw_counts.entry(t).or_default() += 1;
        }
    }
    let mut words = Vocab::new();
    let mut word_counts = Vec::new();
    for doc in &tokenised {
        for t in doc {
            if t.starts_with(ENTITY_PREFIX) {
                diag.reserved_tokens += 1;
                continue;
            }
            if raw_counts[t] as usize >= opts.min_count && !words.contains(t) {
                words.intern(t);
                word_counts.push(raw_counts[t]);
            }
        }
    }
    // Positions keep OOV tokens as `None` so anchor offsets stay valid.
    let encoded: Vec<Vec<Option<u32>>> = tokenised
        .iter()
        .map(|d| d.iter().map(|t| words.get(t)).collect())
        .collect();

    let mut entities = Vocab::new();
    let keep = |e: &str| opts.include_disambiguation || !is_disambiguation(e);
    let mut link_set = HashSet::new();
    let mut link_list = Vec::new();
    for (a, b) in links {
        if !keep(a) || !keep(b) {
            diag.disambiguation_dropped += 1;
            continue;
        }
        if a == b {
            diag.self_links += 1;
            continue;
        }
        let pair = (entities.intern(a), entities.intern(b));
        if link_set.insert(pair) {
            link_list.push(pair);
        } else {
            diag.duplicate_links += 1;
        }
    }

    let c = opts.anchor_window;
    let mut anchor_list = Vec::new();
    for a in anchors {
        if !keep(&a.entity) {
            diag.disambiguation_dropped += 1;
            continue;
        }
        let Some(&d) = doc_index.get(a.doc.as_str()) else {
            diag.skipped_anchors
                .push(format!("{}:{} unknown document", a.doc, a.offset));
            continue;
        };
        let doc = &encoded[d];
        if a.offset >= doc.len() {
            diag.skipped_anchors
                .push(format!("{}:{} offset beyond {} tokens", a.doc, a.offset, doc.len()));
            continue;
        }
        let lo = a.offset.saturating_sub(c);
        let hi = (a.offset + c + 1).min(doc.len());
        let context: Vec<u32> = (lo..hi).filter(|&p| p != a.offset).filter_map(|p| doc[p]).collect();
        anchor_list.push(Anchor {
            entity: entities.intern(&a.entity),
            context,
        });
    }
    if !diag.skipped_anchors.is_empty() {
        log::warn!("skipped {} anchors outside their documents", diag.skipped_anchors.len());
    }

    let docs: Vec<Vec<u32>> = encoded
        .into_iter()
        .map(|d| d.into_iter().flatten().collect::<Vec<_>>())
        .filter(|d| !d.is_empty())
        .collect();
    Ok(JointCorpus {
        words,
        word_counts,
        entities,
        docs,
        links: link_list,
        anchors: anchor_list,
        diagnostics: diag,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    pub sgns: SgnsConfig,
    /// Train the entity link-graph stream.
    pub use_link_graph: bool,
    /// Also train each link in the reverse direction.
    pub symmetric_links: bool,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            sgns: SgnsConfig::default(),
            use_link_graph: true,
            symmetric_links: true,
        }
    }
}

/// Summed losses of one epoch per stream.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointEpochLoss {
    pub epoch: usize,
    pub word: f64,
    pub link: f64,
    pub anchor: f64,
    /// Accumulated independently of the three parts.
    pub total: f64,
    pub pairs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    Word,
    Link,
    Anchor,
}

#[derive(Debug, Clone, Copy)]
struct Pair {
    stream: Stream,
    center: u32,
    context: u32,
}

/// Incremental trainer; [`train_joint`] runs it to completion.
pub struct JointTrainer<'c> {
    corpus: &'c JointCorpus,
    cfg: JointConfig,
    num_words: usize,
    keep: Vec<f64>,
    input: SharedTable,
    output: SharedTable,
    word_noise: NoiseTable,
    entity_noise: NoiseTable,
    epoch: usize,
    processed: AtomicU64,
    total_pairs: u64,
    losses: Vec<JointEpochLoss>,
}

impl<'c> JointTrainer<'c> {
    pub fn new(corpus: &'c JointCorpus, cfg: &JointConfig) -> Result<Self> {
        cfg.sgns.validate()?;
        if cfg.sgns.objective != Objective::NegativeSampling {
            return Err(Error::Config("joint training supports negative sampling only".into()));
        }
        let counts = corpus.pair_counts(cfg.sgns.window, cfg.symmetric_links);
        let link = if cfg.use_link_graph { counts.link } else { 0 };
        let per_epoch = counts.word + link + counts.anchor;
        if per_epoch == 0 {
            return Err(Error::EmptyCorpus("no word, link or anchor pairs to train on".into()));
        }
        let nw = corpus.words.len();
        let ne = corpus.entities.len();
        let dim = cfg.sgns.dim;
        let mut entity_counts = vec![0u64; ne];
        for &(a, b) in &corpus.links {
            entity_counts[b as usize] += 1;
            if cfg.symmetric_links {
                entity_counts[a as usize] += 1;
            }
        }
        Ok(JointTrainer {
            corpus,
            cfg: cfg.clone(),
            num_words: nw,
            keep: keep_probabilities(&corpus.word_counts, cfg.sgns.subsample),
            input: SharedTable::from_vec(dim, init_input_rows(nw + ne, dim, cfg.sgns.seed)),
            output: SharedTable::zeros(nw + ne, dim),
            word_noise: NoiseTable::new((0..nw).collect(), &corpus.word_counts),
            entity_noise: NoiseTable::new((nw..nw + ne).collect(), &entity_counts),
            epoch: 0,
            processed: AtomicU64::new(0),
            total_pairs: per_epoch * cfg.sgns.epochs as u64,
            losses: Vec::new(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn losses(&self) -> &[JointEpochLoss] {
        &self.losses
    }

    /// Current input vector of an entity.
    pub fn entity_vector(&self, entity: &str) -> Option<Vec<f64>> {
        let row = self.num_words + self.corpus.entities.get(entity)? as usize;
        let mut v = vec![0.0; self.cfg.sgns.dim];
        self.input.read_row(row, &mut v);
        Some(v)
    }

    /// Input vector of entity `a` dotted with the output vector of entity `b`.
    pub fn pair_score(&self, a: &str, b: &str) -> Option<f64> {
        let ra = self.num_words + self.corpus.entities.get(a)? as usize;
        let rb = self.num_words + self.corpus.entities.get(b)? as usize;
        let mut v = vec![0.0; self.cfg.sgns.dim];
        let mut u = vec![0.0; self.cfg.sgns.dim];
        self.input.read_row(ra, &mut v);
        self.output.read_row(rb, &mut u);
        Some(dot(&v, &u))
    }

    pub fn entity_cosine(&self, a: &str, b: &str) -> Option<f64> {
        let (x, y) = (self.entity_vector(a)?, self.entity_vector(b)?);
        let n = (dot(&x, &x) * dot(&y, &y)).sqrt();
        Some(if n == 0.0 { 0.0 } else { dot(&x, &y) / n })
    }

    fn epoch_pairs(&self, epoch: usize) -> Vec<Pair> {
        let mut rng = rng_for(self.cfg.sgns.seed, 1u64 << 48 | epoch as u64);
        let nw = self.num_words as u32;
        let window = self.cfg.sgns.window;
        let mut pairs = Vec::new();
        let mut kept = Vec::new();
        for doc in &self.corpus.docs {
            kept.clear();
            for &t in doc {
                let p = self.keep[t as usize];
                if p >= 1.0 || rng.random::<f64>() < p {
                    kept.push(t);
                }
            }
            for (pos, &center) in kept.iter().enumerate() {
                let lo = pos.saturating_sub(window);
                let hi = (pos + window + 1).min(kept.len());
                for (cpos, &context) in kept.iter().enumerate().take(hi).skip(lo) {
                    if cpos != pos {
                        pairs.push(Pair {
                            stream: Stream::Word,
                            center,
                            context,
                        });
                    }
                }
            }
        }
        if self.cfg.use_link_graph {
            for &(a, b) in &self.corpus.links {
                pairs.push(Pair {
                    stream: Stream::Link,
                    center: nw + a,
                    context: nw + b,
                });
                if self.cfg.symmetric_links {
                    pairs.push(Pair {
                        stream: Stream::Link,
                        center: nw + b,
                        context: nw + a,
                    });
                }
            }
        }
        for a in &self.corpus.anchors {
            for &w in &a.context {
                pairs.push(Pair {
                    stream: Stream::Anchor,
                    center: nw + a.entity,
                    context: w,
                });
            }
        }
        pairs.shuffle(&mut rng);
        pairs
    }

    fn learning_rate(&self) -> f64 {
        let done = self.processed.load(Ordering::Relaxed) as f64;
        self.cfg.sgns.learning_rate * (1.0 - done / self.total_pairs.max(1) as f64).max(1e-4)
    }

    fn train_pairs(&self, pairs: &[Pair], stream: u64) -> JointEpochLoss {
        let mut rng = rng_for(self.cfg.sgns.seed, stream);
        let mut out = JointEpochLoss::default();
        let mut negs = Vec::with_capacity(self.cfg.sgns.negatives);
        let mut lr = self.learning_rate();
        for (i, p) in pairs.iter().enumerate() {
            if i % 1024 == 0 && i > 0 {
                self.processed.fetch_add(1024, Ordering::Relaxed);
                lr = self.learning_rate();
            }
            let noise = match p.stream {
                Stream::Link => &self.entity_noise,
                Stream::Word | Stream::Anchor => &self.word_noise,
            };
            let context = p.context as usize;
            negs.clear();
            for _ in 0..self.cfg.sgns.negatives {
                match noise.sample(&mut rng) {
                    Some(n) if n != context => negs.push(n),
                    _ => {}
                }
            }
            let loss = sgd_pair(
                &self.input,
                &self.output,
                self.cfg.sgns.dim,
                p.center as usize,
                context,
                &negs,
                lr,
            );
            match p.stream {
                Stream::Word => out.word += loss,
                Stream::Link => out.link += loss,
                Stream::Anchor => out.anchor += loss,
            }
            out.total += loss;
            out.pairs += 1;
        }
        self.processed.fetch_add((pairs.len() % 1024) as u64, Ordering::Relaxed);
        out
    }

    pub fn run_epoch(&mut self) -> JointEpochLoss {
        let epoch = self.epoch;
        let pairs = self.epoch_pairs(epoch);
        let workers = self.cfg.sgns.workers.max(1);
        let mut report = if workers == 1 {
            self.train_pairs(&pairs, (epoch as u64) << 16)
        } else {
            let chunk = pairs.len().div_ceil(workers).max(1);
            let this = &*self;
            std::thread::scope(|scope| {
                let handles: Vec<_> = pairs
                    .chunks(chunk)
                    .enumerate()
                    .map(|(w, part)| scope.spawn(move || this.train_pairs(part, ((epoch as u64) << 16) | w as u64)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training worker panicked"))
                    .fold(JointEpochLoss::default(), |a, b| JointEpochLoss {
                        epoch: 0,
                        word: a.word + b.word,
                        link: a.link + b.link,
                        anchor: a.anchor + b.anchor,
                        total: a.total + b.total,
                        pairs: a.pairs + b.pairs,
                    })
            })
        };
        self.epoch += 1;
        report.epoch = self.epoch;
        log::info!(
            "joint epoch {}: word {:.4} link {:.4} anchor {:.4} total {:.4} over {} pairs",
            report.epoch,
            report.word,
            report.link,
            report.anchor,
            report.total,
            report.pairs
        );
        self.losses.push(report);
        report
    }

    pub fn finish(self) -> JointModel {
        let mut tokens: Vec<String> = self.corpus.words.iter().map(str::to_owned).collect();
        tokens.extend(self.corpus.entities.iter().map(|e| format!("{ENTITY_PREFIX}{e}")));
        let space = EmbeddingSpace::new(self.cfg.sgns.dim, tokens, self.input.to_vec())
            .expect("trainer keeps rows consistent with its vocabulary");
        JointModel {
            space,
            num_words: self.num_words,
            losses: self.losses,
        }
    }
}

/// Trained joint space. Rows are the words followed by the entities, the
/// latter named with [`ENTITY_PREFIX`].
#[derive(Debug, Clone)]
pub struct JointModel {
    pub space: EmbeddingSpace,
    pub num_words: usize,
    pub losses: Vec<JointEpochLoss>,
}

impl JointModel {
    pub fn is_entity_row(&self, row: usize) -> bool {
        row >= self.num_words
    }
}

pub fn train_joint(corpus: &JointCorpus, cfg: &JointConfig) -> Result<JointModel> {
    let mut trainer = JointTrainer::new(corpus, cfg)?;
    for _ in 0..cfg.sgns.epochs {
        trainer.run_epoch();
    }
    Ok(trainer.finish())
}
