//! Knowledge graph loading, redirect resolution and missing-entity accounting.
//!
//! Triple files are UTF-8, one `head<TAB>relation<TAB>tail` record per line,
//! with `#` comment lines and blank lines ignored. A minimal N-Triples reader
//! is also provided for `<s> <p> <o> .` statements; literal objects are
//! dropped in that mode since only entity-to-entity edges feed the
//! embedding trainers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use indexmap::IndexSet;

use crate::embedding::VectorLookup;
use crate::error::{Error, Result};

/// Dense index of an entity in [`KnowledgeGraph::entities`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

/// Dense index of a relation in [`KnowledgeGraph::relations`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// String interner: a bijection between the strings it holds and `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: IndexSet<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(i) = self.names.get_index_of(name) {
            return i as u32;
        }
        let (i, _) = self.names.insert_full(name.to_owned());
        i as u32
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.names.get_index_of(name).map(|i| i as u32)
    }

    pub fn name(&self, index: u32) -> &str {
        &self.names[index as usize]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TripleFormat {
    #[default]
    Tsv,
    NTriplesLite,
}

impl std::str::FromStr for TripleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(TripleFormat::Tsv),
            "nt" | "ntriples" | "ntriples-lite" => Ok(TripleFormat::NTriplesLite),
            other => Err(Error::Config(format!("unknown triple format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub format: TripleFormat,
    /// Collapse repeated identical triples into one edge.
    pub dedup: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadDiagnostics {
    /// `(line number, reason)` for every skipped record.
    pub skipped: Vec<(usize, String)>,
    /// Statements whose object was a literal (N-Triples mode only).
    pub literal_tails: usize,
    pub duplicates_removed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RedirectDiagnostics {
    pub self_redirects: usize,
    /// Each cycle, listed from its canonical (lexicographically smallest) id.
    pub cycles: Vec<Vec<String>>,
    /// Redirect targets that are neither graph entities nor redirect sources.
    pub dangling_targets: Vec<String>,
    /// Edges with at least one endpoint rewritten.
    pub rewritten_edges: usize,
}

/// Directed labeled multigraph with interned entities and relations.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    edges: Vec<Triple>,
    out_adjacency: Vec<Vec<(RelationId, EntityId)>>,
    redirects: BTreeMap<String, String>,
}

impl KnowledgeGraph {
    /// Builds a graph from string triples; entities and relations are
    /// interned in first-appearance order.
    pub fn from_triples<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut edges = Vec::new();
        for (h, r, t) in triples {
            let head = EntityId(entities.intern(h));
            let relation = RelationId(relations.intern(r));
            let tail = EntityId(entities.intern(t));
            edges.push(Triple { head, relation, tail });
        }
        Self::assemble(entities, relations, edges, BTreeMap::new())
    }

    fn assemble(entities: Vocab, relations: Vocab, edges: Vec<Triple>, redirects: BTreeMap<String, String>) -> Self {
        let mut out_adjacency = vec![Vec::new(); entities.len()];
        for e in &edges {
            out_adjacency[e.head.index()].push((e.relation, e.tail));
        }
        KnowledgeGraph {
            entities,
            relations,
            edges,
            out_adjacency,
            redirects,
        }
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }

    pub fn out_edges(&self, entity: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_adjacency[entity.index()]
    }

    pub fn entity(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.entities.name(id.0)
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        self.relations.name(id.0)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// The compressed redirect map accumulated by [`resolve_redirects`].
    pub fn redirects(&self) -> &BTreeMap<String, String> {
        &self.redirects
    }

    /// Maps an identifier through the redirect map; identity when unmapped.
    pub fn canonical<'a>(&'a self, id: &'a str) -> &'a str {
        self.redirects.get(id).map(String::as_str).unwrap_or(id)
    }

    pub fn triple_names(&self, t: &Triple) -> (&str, &str, &str) {
        (
            self.entity_name(t.head),
            self.relation_name(t.relation),
            self.entity_name(t.tail),
        )
    }

    /// Writes the edge list as TSV.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for t in &self.edges {
            let (h, r, tl) = self.triple_names(t);
            writeln!(out, "{h}\t{r}\t{tl}")?;
        }
        Ok(())
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = io::BufWriter::new(file);
        self.write_tsv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for KnowledgeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} entities, {} relations, {} edges",
            self.num_entities(),
            self.num_relations(),
            self.edges.len()
        )
    }
}

pub fn load_triples(path: &Path, opts: LoadOptions) -> Result<(KnowledgeGraph, LoadDiagnostics)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_triples(&text, opts, &path.display().to_string())
}

/// Parses triples from in-memory text. `source` names the input in errors.
pub fn parse_triples(text: &str, opts: LoadOptions, source: &str) -> Result<(KnowledgeGraph, LoadDiagnostics)> {
    let mut diag = LoadDiagnostics::default();
    let mut records: Vec<(&str, &str, &str)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let parsed = match opts.format {
            TripleFormat::Tsv => parse_tsv_record(line),
            TripleFormat::NTriplesLite => parse_nt_record(line),
        };
        match parsed {
            Ok(Some(rec)) => records.push(rec),
            Ok(None) => diag.literal_tails += 1,
            Err(reason) => diag.skipped.push((line_no, reason)),
        }
    }
    if records.is_empty() {
        return Err(Error::NoValidTriples(source.to_owned()));
    }
    if opts.dedup {
        let before = records.len();
        let mut seen = BTreeSet::new();
        records.retain(|r| seen.insert(*r));
        diag.duplicates_removed = before - records.len();
    }
    for (line, reason) in &diag.skipped {
        log::warn!("{source}:{line}: skipped ({reason})");
    }
    Ok((KnowledgeGraph::from_triples(records), diag))
}

fn parse_tsv_record(line: &str) -> std::result::Result<Option<(&str, &str, &str)>, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    }
    if fields.iter().any(|f| f.is_empty()) {
        return Err("empty field".to_owned());
    }
    Ok(Some((fields[0], fields[1], fields[2])))
}

/// `<s> <p> <o> .` with IRIs reduced to their local name (text after the
/// last `/` or `#`). Returns `Ok(None)` for literal objects.
fn parse_nt_record(line: &str) -> std::result::Result<Option<(&str, &str, &str)>, String> {
    let body = line
        .trim()
        .strip_suffix('.')
        .ok_or_else(|| "statement does not end with `.`".to_owned())?
        .trim_end();
    let mut rest = body;
    let mut terms = Vec::with_capacity(2);
    for _ in 0..2 {
        let (iri, tail) = take_iri(rest)?;
        terms.push(iri);
        rest = tail.trim_start();
    }
    if rest.starts_with('"') {
        return Ok(None);
    }
    let (obj, tail) = take_iri(rest)?;
    if !tail.trim().is_empty() {
        return Err("trailing content after object".to_owned());
    }
    Ok(Some((terms[0], terms[1], obj)))
}

fn take_iri(s: &str) -> std::result::Result<(&str, &str), String> {
    let s = s.trim_start();
    let inner = s
        .strip_prefix('<')
        .ok_or_else(|| format!("expected IRI at `{}`", s.chars().take(20).collect::<String>()))?;
    let end = inner.find('>').ok_or_else(|| "unterminated IRI".to_owned())?;
    let iri = &inner[..end];
    let local = iri.rsplit(['/', '#']).next().unwrap_or(iri);
    if local.is_empty() {
        return Err(format!("IRI `{iri}` has an empty local name"));
    }
    Ok((local, &inner[end + 1..]))
}

/// Reads `from<TAB>to` pairs.
pub fn load_redirects(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_redirects(&text, &path.display().to_string())
}

pub fn parse_redirects(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(from), Some(to), None) if !from.is_empty() && !to.is_empty() => {
                pairs.push((from.to_owned(), to.to_owned()))
            }
            _ => {
                return Err(Error::parse(
                    source,
                    i + 1,
                    "expected `from<TAB>to` with non-empty fields",
                ))
            }
        }
    }
    Ok(pairs)
}

/// Path-compresses a redirect list. Every key of the result maps to an id
/// that is not itself a key. Cycles collapse onto their lexicographically
/// smallest member.
pub fn compress_redirects(pairs: &[(String, String)], diag: &mut RedirectDiagnostics) -> BTreeMap<String, String> {
    let mut next: BTreeMap<&str, &str> = BTreeMap::new();
    for (from, to) in pairs {
        if from == to {
            diag.self_redirects += 1;
            continue;
        }
        // Later lines win for repeated sources.
        next.insert(from.as_str(), to.as_str());
    }

    let mut resolved: HashMap<&str, &str> = HashMap::new();
    for &start in next.keys() {
        if resolved.contains_key(start) {
            continue;
        }
        let mut path: Vec<&str> = vec![start];
        let mut pos: HashMap<&str, usize> = HashMap::from([(start, 0)]);
        let mut cur = start;
        let target = loop {
            match next.get(cur) {
                None => break cur,
                Some(&nxt) => {
                    if let Some(&t) = resolved.get(nxt) {
                        break t;
                    }
                    if let Some(&at) = pos.get(nxt) {
                        let cycle = &path[at..];
                        let canon = *cycle.iter().min().expect("cycle is non-empty");
                        let mut members: Vec<String> = cycle.iter().map(|s| s.to_string()).collect();
                        let rot = members.iter().position(|m| m == canon).unwrap_or(0);
                        members.rotate_left(rot);
                        diag.cycles.push(members);
                        break canon;
                    }
                    pos.insert(nxt, path.len());
                    path.push(nxt);
                    cur = nxt;
                }
            }
        };
        for node in path {
            resolved.insert(node, target);
        }
    }

    resolved
        .into_iter()
        .filter(|(k, v)| k != v)
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect()
}

/// Rewrites every edge endpoint through the transitive redirect map and
/// re-interns the entity vocabulary. Idempotent.
pub fn resolve_redirects(kg: &KnowledgeGraph, pairs: &[(String, String)]) -> (KnowledgeGraph, RedirectDiagnostics) {
    let mut diag = RedirectDiagnostics::default();
    let mut combined: Vec<(String, String)> = kg.redirects.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    combined.extend(pairs.iter().cloned());
    let map = compress_redirects(&combined, &mut diag);

    let mut dangling: BTreeSet<&str> = BTreeSet::new();
    for target in map.values() {
        if !kg.entities.contains(target) {
            dangling.insert(target);
        }
    }
    diag.dangling_targets = dangling.into_iter().map(str::to_owned).collect();

    let remap = |name: &str| -> String { map.get(name).cloned().unwrap_or_else(|| name.to_owned()) };
    let mut entities = Vocab::new();
    let new_ids: Vec<EntityId> = kg
        .entities
        .iter()
        .map(|name| EntityId(entities.intern(&remap(name))))
        .collect();
    let mut edges = Vec::with_capacity(kg.edges.len());
    for t in &kg.edges {
        let head = new_ids[t.head.index()];
        let tail = new_ids[t.tail.index()];
        if entities.name(head.0) != kg.entity_name(t.head) || entities.name(tail.0) != kg.entity_name(t.tail) {
            diag.rewritten_edges += 1;
        }
        edges.push(Triple {
            head,
            relation: t.relation,
            tail,
        });
    }
    for cycle in &diag.cycles {
        log::warn!("redirect cycle resolved to `{}`: {}", cycle[0], cycle.join(" -> "));
    }
    (
        KnowledgeGraph::assemble(entities, kg.relations.clone(), edges, map),
        diag,
    )
}

/// Assessed entities absent from the graph (`no_page`) or present in the
/// graph but lacking a vector (`no_emb`).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MissingEntityReport {
    pub no_page: Vec<String>,
    pub no_emb: Vec<String>,
}

impl MissingEntityReport {
    pub fn total(&self) -> usize {
        self.no_page.len() + self.no_emb.len()
    }

    /// CSV with columns `bucket,entity_id`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bucket", "entity_id"])?;
        for id in &self.no_page {
            w.write_record(["no_page", id.as_str()])?;
        }
        for id in &self.no_emb {
            w.write_record(["no_emb", id.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Assessed ids are looked up after redirect canonicalization; duplicates
/// are reported once.
pub fn missing_entities<L: VectorLookup + ?Sized>(
    kg: &KnowledgeGraph,
    space: &L,
    assessed: &[String],
) -> MissingEntityReport {
    let mut report = MissingEntityReport::default();
    let mut seen = BTreeSet::new();
    for raw in assessed {
        let id = kg.canonical(raw);
        if !seen.insert(id) {
            continue;
        }
        if !kg.entities.contains(id) {
            report.no_page.push(id.to_owned());
        } else if space.vector(id).is_none() {
            report.no_emb.push(id.to_owned());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingSpace;

    fn tsv(text: &str) -> (KnowledgeGraph, LoadDiagnostics) {
        parse_triples(text, LoadOptions::default(), "test").unwrap()
    }

    fn edge_names(kg: &KnowledgeGraph) -> Vec<(String, String, String)> {
        kg.edges()
            .iter()
            .map(|t| {
                let (h, r, tl) = kg.triple_names(t);
                (h.to_owned(), r.to_owned(), tl.to_owned())
            })
            .collect()
    }

    #[test]
    fn three_line_tsv() {
        let (kg, diag) = tsv("a\tp\tb\nb\tp\tc\na\tq\tc\n");
        assert_eq!(kg.num_entities(), 3);
        assert_eq!(kg.num_relations(), 2);
        assert_eq!(kg.edges().len(), 3);
        assert!(diag.skipped.is_empty());
        let a = kg.entity("a").unwrap();
        assert_eq!(kg.out_edges(a).len(), 2);
    }

    #[test]
    fn empty_file_is_an_error() {
        let err = parse_triples("", LoadOptions::default(), "empty.tsv").unwrap_err();
        assert!(matches!(err, Error::NoValidTriples(_)));
        assert!(err.to_string().contains("no valid triples"));
        let err = parse_triples("# only a comment\n\n", LoadOptions::default(), "c").unwrap_err();
        assert!(matches!(err, Error::NoValidTriples(_)));
    }

    #[test]
    fn malformed_line_is_skipped_and_reported() {
        let (kg, diag) = tsv("a\tp\tb\nbroken\tline\nb\tp\tc\na\tq\tc\n");
        assert_eq!(kg.edges().len(), 3);
        assert_eq!(diag.skipped.len(), 1);
        assert_eq!(diag.skipped[0].0, 2);
    }

    #[test]
    fn duplicates_kept_unless_dedup() {
        let text = "a\tp\tb\na\tp\tb\n";
        let (kg, _) = tsv(text);
        assert_eq!(kg.edges().len(), 2);
        let opts = LoadOptions {
            dedup: true,
            ..Default::default()
        };
        let (kg, diag) = parse_triples(text, opts, "t").unwrap();
        assert_eq!(kg.edges().len(), 1);
        assert_eq!(diag.duplicates_removed, 1);
    }

    #[test]
    fn ntriples_lite_drops_literals() {
        let text =
            "<http://dbpedia.org/resource/A> <http://dbpedia.org/ontology/p> <http://dbpedia.org/resource/B> .\n\
                    <http://dbpedia.org/resource/A> <http://xmlns.com/foaf/0.1/name> \"A\"@en .\n\
                    <http://x.org/C> <http://x.org/o#q> <http://x.org/A> .\n";
        let opts = LoadOptions {
            format: TripleFormat::NTriplesLite,
            dedup: false,
        };
        let (kg, diag) = parse_triples(text, opts, "t").unwrap();
        assert_eq!(diag.literal_tails, 1);
        assert_eq!(
            edge_names(&kg),
            vec![
                ("A".into(), "p".into(), "B".into()),
                ("C".into(), "q".into(), "A".into())
            ]
        );
    }

    #[test]
    fn single_redirect() {
        let (kg, _) = tsv("a\tp\tb\n");
        let (kg, diag) = resolve_redirects(&kg, &[("b".into(), "c".into())]);
        assert_eq!(edge_names(&kg), vec![("a".into(), "p".into(), "c".into())]);
        assert_eq!(diag.rewritten_edges, 1);
        assert!(kg.entity("b").is_none());
    }

    #[test]
    fn redirect_chain_is_transitive() {
        let (kg, _) = tsv("a\tp\tb\n");
        let pairs = vec![("b".into(), "c".into()), ("c".into(), "d".into())];
        let (kg, _) = resolve_redirects(&kg, &pairs);
        assert_eq!(edge_names(&kg), vec![("a".into(), "p".into(), "d".into())]);
        assert_eq!(kg.canonical("b"), "d");
        assert_eq!(kg.canonical("c"), "d");
    }

    #[test]
    fn redirect_cycle_uses_smallest_id() {
        let (kg, _) = tsv("x\tp\ty\ny\tp\tz\n");
        let pairs = vec![("x".into(), "y".into()), ("y".into(), "x".into())];
        let (kg, diag) = resolve_redirects(&kg, &pairs);
        assert_eq!(kg.canonical("x"), "x");
        assert_eq!(kg.canonical("y"), "x");
        assert_eq!(diag.cycles, vec![vec!["x".to_string(), "y".to_string()]]);
        assert_eq!(
            edge_names(&kg),
            vec![
                ("x".into(), "p".into(), "x".into()),
                ("x".into(), "p".into(), "z".into())
            ]
        );
    }

    #[test]
    fn tail_into_cycle_and_self_redirects() {
        let mut diag = RedirectDiagnostics::default();
        let pairs: Vec<(String, String)> = [("w", "y"), ("y", "z"), ("z", "y"), ("q", "q")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let map = compress_redirects(&pairs, &mut diag);
        assert_eq!(diag.self_redirects, 1);
        assert_eq!(map.get("w").map(String::as_str), Some("y"));
        assert_eq!(map.get("z").map(String::as_str), Some("y"));
        assert!(!map.contains_key("y"));
        assert!(!map.contains_key("q"));
    }

    #[test]
    fn dangling_targets_reported() {
        let (kg, _) = tsv("a\tp\tb\n");
        let (_, diag) = resolve_redirects(&kg, &[("b".into(), "nowhere".into())]);
        assert_eq!(diag.dangling_targets, vec!["nowhere".to_string()]);
    }

    #[test]
    fn redirect_file_parse_errors_carry_line() {
        let err = parse_redirects("a\tb\nbad\n", "r.tsv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn missing_entity_buckets() {
        let (kg, _) = tsv("a\tp\tb\n");
        let space = EmbeddingSpace::from_rows(1, vec![("a".to_string(), vec![1.0])]).unwrap();
        let assessed: Vec<String> = ["a", "b", "z"].iter().map(|s| s.to_string()).collect();
        let report = missing_entities(&kg, &space, &assessed);
        assert_eq!(report.no_page, vec!["z".to_string()]);
        assert_eq!(report.no_emb, vec!["b".to_string()]);

        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "bucket,entity_id\nno_page,z\nno_emb,b\n"
        );

        let all = vec!["a".to_string()];
        let report = missing_entities(&kg, &space, &all);
        assert_eq!(report.total(), 0);
    }
}
