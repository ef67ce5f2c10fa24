//! Random-walk sentences over a knowledge graph.
//!
//! From every entity with outgoing edges, `walks_per_entity` walks of up to
//! `depth` hops are drawn by picking an outgoing edge uniformly at random at
//! each hop. A walk that reaches an entity without outgoing edges stops
//! there. Each start entity draws from its own random stream derived from
//! `(seed, entity index)`, so the corpus does not depend on how the work is
//! split across threads.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Vocab};
use crate::math::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkConfig {
    pub depth: usize,
    pub walks_per_entity: usize,
    pub seed: u64,
    pub include_relations: bool,
    /// Emit a one-token sentence for entities without outgoing edges.
    pub emit_singletons: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            depth: 4,
            walks_per_entity: 100,
            seed: 42,
            include_relations: true,
            emit_singletons: true,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("walk depth must be at least 1".into()));
        }
        if self.walks_per_entity == 0 {
            return Err(Error::Config("walks per entity must be at least 1".into()));
        }
        Ok(())
    }
}

/// Walk sentences as interned tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WalkCorpus {
    tokens: Vocab,
    sequences: Vec<Vec<u32>>,
}

impl WalkCorpus {
    pub fn tokens(&self) -> &Vocab {
        &self.tokens
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sentences as token strings, ready for the skip-gram trainer.
    pub fn sentences(&self) -> Vec<Vec<&str>> {
        self.sequences
            .iter()
            .map(|s| s.iter().map(|&t| self.tokens.name(t)).collect())
            .collect()
    }

    /// One walk per line, tokens separated by single spaces.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for seq in &self.sequences {
            for (i, &t) in seq.iter().enumerate() {
                let name = self.tokens.name(t);
                if name.chars().any(char::is_whitespace) {
                    return Err(Error::Invalid(format!(
                        "token `{name}` contains whitespace and cannot be written to a walk file"
                    )));
                }
                if i > 0 {
                    out.write_all(b" ")?;
                }
                out.write_all(name.as_bytes())?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a whitespace-separated sentence file (walks or plain text).
pub fn load_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_owned).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect())
}

enum Step {
    Entity(EntityId),
    Relation(u32),
}

fn walks_from(kg: &KnowledgeGraph, start: EntityId, cfg: &WalkConfig) -> Vec<Vec<Step>> {
    if kg.out_edges(start).is_empty() {
        return if cfg.emit_singletons {
            vec![vec![Step::Entity(start)]]
        } else {
            Vec::new()
        };
    }
    let mut rng = rng_for(cfg.seed, start.0 as u64);
    (0..cfg.walks_per_entity)
        .map(|_| {
            let mut walk = vec![Step::Entity(start)];
            let mut cur = start;
            for _ in 0..cfg.depth {
                let out = kg.out_edges(cur);
                if out.is_empty() {
                    break;
                }
                let (rel, next) = out[rng.random_range(0..out.len())];
                if cfg.include_relations {
                    walk.push(Step::Relation(rel.0));
                }
                walk.push(Step::Entity(next));
                cur = next;
            }
            walk
        })
        .collect()
}

pub fn generate_walks(kg: &KnowledgeGraph, cfg: &WalkConfig) -> Result<WalkCorpus> {
    cfg.validate()?;
    if kg.num_entities() == 0 {
        return Err(Error::EmptyCorpus("graph has no entities".into()));
    }
    let per_entity: Vec<Vec<Vec<Step>>> = (0..kg.num_entities() as u32)
        .into_par_iter()
        .map(|e| walks_from(kg, EntityId(e), cfg))
        .collect();

    let mut tokens = Vocab::new();
    let mut sequences = Vec::new();
    for walk in per_entity.into_iter().flatten() {
        let seq = walk
            .into_iter()
            .map(|step| match step {
                Step::Entity(e) => tokens.intern(kg.entity_name(e)),
                Step::Relation(r) => tokens.intern(kg.relations().name(r)),
            })
            .collect();
        sequences.push(seq);
    }
    Ok(WalkCorpus { tokens, sequences })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{parse_triples, LoadOptions};

    fn graph(text: &str) -> KnowledgeGraph {
        parse_triples(text, LoadOptions::default(), "t").unwrap().0
    }

    #[test]
    fn chain_has_one_walk() {
        let kg = graph("a\tp\tb\nb\tp\tc\n");
        let cfg = WalkConfig {
            depth: 2,
            walks_per_entity: 1,
            ..Default::default()
        };
        let corpus = generate_walks(&kg, &cfg).unwrap();
        let s = corpus.sentences();
        assert_eq!(s[0], vec!["a", "p", "b", "p", "c"]);
        assert_eq!(s[1], vec!["b", "p", "c"]);
        assert_eq!(s[2], vec!["c"]);
    }

    #[test]
    fn isolated_entity_gives_singleton() {
        let kg = graph("a\tp\tz\n");
        let corpus = generate_walks(&kg, &WalkConfig::default()).unwrap();
        let s = corpus.sentences();
        assert_eq!(s.last().unwrap(), &vec!["z"]);
        assert_eq!(corpus.len(), 101);

        let cfg = WalkConfig {
            emit_singletons: false,
            ..Default::default()
        };
        assert_eq!(generate_walks(&kg, &cfg).unwrap().len(), 100);
    }

    #[test]
    fn without_relations_only_entities() {
        let kg = graph("a\tp\tb\nb\tq\tc\n");
        let cfg = WalkConfig {
            depth: 2,
            walks_per_entity: 1,
            include_relations: false,
            ..Default::default()
        };
        let corpus = generate_walks(&kg, &cfg).unwrap();
        assert_eq!(corpus.sentences()[0], vec!["a", "b", "c"]);
    }

    #[test]
    fn star_graph_is_roughly_uniform() {
        let kg = graph("a\tp\tb\na\tp\tc\na\tp\td\n");
        let cfg = WalkConfig {
            depth: 1,
            walks_per_entity: 300,
            ..Default::default()
        };
        let corpus = generate_walks(&kg, &cfg).unwrap();
        for target in ["b", "c", "d"] {
            let n = corpus
                .sentences()
                .iter()
                .filter(|s| s[0] == "a" && s[2] == target)
                .count();
            assert!((75..=125).contains(&n), "{target}: {n}");
        }
    }

    #[test]
    fn config_validation() {
        let kg = graph("a\tp\tb\n");
        let cfg = WalkConfig {
            depth: 0,
            ..Default::default()
        };
        assert!(matches!(generate_walks(&kg, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn corpus_file_format() {
        let kg = graph("a\tp\tb\n");
        let cfg = WalkConfig {
            depth: 1,
            walks_per_entity: 1,
            ..Default::default()
        };
        let mut buf = Vec::new();
        generate_walks(&kg, &cfg).unwrap().write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a p b\nb\n");
    }
}
