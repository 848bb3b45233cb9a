//! Text-based dataset formats and deterministic synthetic generators.
//!
//! All formats are tab- or space-separated UTF-8 so fixtures stay diffable
//! and loaders round-trip bit-exactly with their serializers.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Result, UgnError};
use crate::graph::Graph;
use crate::loss::UNKNOWN_LABEL;
use crate::mtcm::TranslationPair;
use crate::pipelines::KgTriple;
use crate::tensor::Tensor;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> UgnError {
    UgnError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Graph plus optional per-edge labels from the third column.
#[derive(Debug, Clone)]
pub struct EdgeListData {
    pub graph: Graph,
    /// Labels keyed by canonical edge; absent for unlabeled edges.
    pub edge_labels: HashMap<(usize, usize), f64>,
}

/// Parse an edge-list file: a header `n=<int> directed=<0|1>`, then one
/// `u<TAB>v[<TAB>label]` line per edge. `#` starts a comment.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<EdgeListData> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut n = None;
    let mut directed = None;
    let mut raw_edges = Vec::new();
    let mut labels = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if n.is_none() {
            for field in line.split_whitespace() {
                if let Some(v) = field.strip_prefix("n=") {
                    n = Some(v.parse::<usize>().map_err(|e| {
                        parse_err(path, lineno, format!("bad node count: {e}"))
                    })?);
                } else if let Some(v) = field.strip_prefix("directed=") {
                    directed = Some(match v {
                        "0" => false,
                        "1" => true,
                        other => {
                            return Err(parse_err(
                                path,
                                lineno,
                                format!("directed must be 0 or 1, got {other}"),
                            ))
                        }
                    });
                } else {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("unexpected header field {field}"),
                    ));
                }
            }
            if n.is_none() || directed.is_none() {
                return Err(parse_err(path, lineno, "header needs n= and directed="));
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected u<TAB>v[<TAB>label], got {} fields", fields.len()),
            ));
        }
        let u: usize = fields[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("bad node id: {e}")))?;
        let v: usize = fields[1]
            .trim()
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("bad node id: {e}")))?;
        let label = if fields.len() == 3 {
            Some(
                fields[2]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(path, lineno, format!("bad edge label: {e}")))?,
            )
        } else {
            None
        };
        raw_edges.push((u, v));
        labels.push(label);
    }
    let n = n.ok_or_else(|| parse_err(path, 1, "missing header"))?;
    let directed = directed.unwrap();
    let graph = Graph::new(n, directed, &raw_edges)?;
    let mut edge_labels = HashMap::new();
    for ((u, v), label) in raw_edges.iter().zip(&labels) {
        if let Some(l) = label {
            let key = if directed {
                (*u, *v)
            } else {
                ((*u).min(*v), (*u).max(*v))
            };
            edge_labels.insert(key, *l);
        }
    }
    Ok(EdgeListData { graph, edge_labels })
}

/// Serialize a graph (and optional edge labels) in the edge-list format.
pub fn save_edge_list(
    path: impl AsRef<Path>,
    graph: &Graph,
    edge_labels: &HashMap<(usize, usize), f64>,
) -> Result<()> {
    let mut out = format!(
        "n={} directed={}\n",
        graph.node_count(),
        if graph.directed() { 1 } else { 0 }
    );
    for &(u, v) in graph.edges() {
        match edge_labels.get(&(u, v)) {
            Some(l) => {
                let _ = writeln!(out, "{u}\t{v}\t{l}");
            }
            None => {
                let _ = writeln!(out, "{u}\t{v}");
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parse `node_id<TAB>label` lines into a length-`n` vector; nodes absent
/// from the file get the unknown sentinel.
pub fn load_labels(path: impl AsRef<Path>, n: usize) -> Result<Vec<i64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut labels = vec![UNKNOWN_LABEL; n];
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let node: usize = fields
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("bad node id: {e}")))?;
        let label: i64 = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno, "missing label column"))?
            .trim()
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("bad label: {e}")))?;
        if node >= n {
            return Err(parse_err(
                path,
                lineno,
                format!("node {node} outside 0..{n}"),
            ));
        }
        labels[node] = label;
    }
    Ok(labels)
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[i64]) -> Result<()> {
    let mut out = String::new();
    for (node, &label) in labels.iter().enumerate() {
        if label != UNKNOWN_LABEL {
            let _ = writeln!(out, "{node}\t{label}");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_matrix_rows(
    path: &Path,
    lines: &[(usize, &str)],
    start: usize,
    n: usize,
) -> Result<Tensor> {
    let mut data = Vec::with_capacity(n * n);
    for k in 0..n {
        let (lineno, line) = lines
            .get(start + k)
            .ok_or_else(|| parse_err(path, 0, "unexpected end of file inside matrix"))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| parse_err(path, *lineno, format!("bad real: {e}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(parse_err(
                path,
                *lineno,
                format!("expected {n} values, got {}", row.len()),
            ));
        }
        data.extend(row);
    }
    let t = Tensor::new(vec![n, n], data)?;
    for i in 0..n {
        for j in i + 1..n {
            if (t.get2(i, j) - t.get2(j, i)).abs() > 1e-6 {
                return Err(parse_err(
                    path,
                    lines[start].0,
                    format!("matrix asymmetric at ({i},{j})"),
                ));
            }
        }
    }
    Ok(t)
}

/// Parse matrix pairs: per sample a line `N`, then N rows of N
/// space-separated reals for the source, a blank line, and N rows for the
/// target. Samples follow one another, blank lines between them ignored.
pub fn load_matrix_pairs(path: impl AsRef<Path>) -> Result<Vec<TranslationPair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    // Keep original line numbers, drop blanks; blank lines only separate.
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let mut pairs = Vec::new();
    let mut pos = 0;
    while pos < lines.len() {
        let (lineno, header) = lines[pos];
        let n: usize = header
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("bad sample size: {e}")))?;
        if n < 2 {
            return Err(parse_err(path, lineno, "sample size must be >= 2"));
        }
        let source = parse_matrix_rows(path, &lines, pos + 1, n)?;
        let target = parse_matrix_rows(path, &lines, pos + 1 + n, n)?;
        pairs.push(TranslationPair::new(source, target)?);
        pos += 1 + 2 * n;
    }
    Ok(pairs)
}

pub fn save_matrix_pairs(path: impl AsRef<Path>, pairs: &[TranslationPair]) -> Result<()> {
    let mut out = String::new();
    for pair in pairs {
        let n = pair.n();
        let _ = writeln!(out, "{n}");
        for m in [&pair.source, &pair.target] {
            for i in 0..n {
                let row: Vec<String> = (0..n).map(|j| format!("{}", m.get2(i, j))).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// String-to-id mappings for knowledge-graph entities and relations.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_ids: HashMap<String, usize>,
    relation_ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> Option<&str> {
        self.entities.get(id).map(String::as_str)
    }

    pub fn relation_name(&self, id: usize) -> Option<&str> {
        self.relations.get(id).map(String::as_str)
    }

    fn intern_entity(&mut self, name: &str) -> usize {
        *self.entity_ids.entry(name.to_string()).or_insert_with(|| {
            self.entities.push(name.to_string());
            self.entities.len() - 1
        })
    }

    fn intern_relation(&mut self, name: &str) -> usize {
        *self.relation_ids.entry(name.to_string()).or_insert_with(|| {
            self.relations.push(name.to_string());
            self.relations.len() - 1
        })
    }

    /// Parse `entity<TAB>name<TAB>id` / `relation<TAB>name<TAB>id` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut entities: Vec<(usize, String)> = Vec::new();
        let mut relations: Vec<(usize, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err(path, lineno, "expected kind<TAB>name<TAB>id"));
            }
            let id: usize = fields[2]
                .parse()
                .map_err(|e| parse_err(path, lineno, format!("bad id: {e}")))?;
            match fields[0] {
                "entity" => entities.push((id, fields[1].to_string())),
                "relation" => relations.push((id, fields[1].to_string())),
                other => {
                    return Err(parse_err(path, lineno, format!("unknown kind {other}")))
                }
            }
        }
        entities.sort_by_key(|(id, _)| *id);
        relations.sort_by_key(|(id, _)| *id);
        let mut vocab = Vocab::new();
        for (want, (id, name)) in entities.into_iter().enumerate() {
            if id != want {
                return Err(UgnError::InvalidArgument(format!(
                    "entity ids not contiguous: expected {want}, got {id}"
                )));
            }
            vocab.intern_entity(&name);
        }
        for (want, (id, name)) in relations.into_iter().enumerate() {
            if id != want {
                return Err(UgnError::InvalidArgument(format!(
                    "relation ids not contiguous: expected {want}, got {id}"
                )));
            }
            vocab.intern_relation(&name);
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for (id, name) in self.entities.iter().enumerate() {
            let _ = writeln!(out, "entity\t{name}\t{id}");
        }
        for (id, name) in self.relations.iter().enumerate() {
            let _ = writeln!(out, "relation\t{name}\t{id}");
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Parse `head<TAB>relation<TAB>tail` lines against a vocabulary. With
/// `grow` set, unseen names are interned; otherwise they are errors.
/// Duplicate triples are retained.
pub fn load_triples(
    path: impl AsRef<Path>,
    vocab: &mut Vocab,
    grow: bool,
) -> Result<Vec<KgTriple>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut triples = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                lineno,
                "expected head<TAB>relation<TAB>tail",
            ));
        }
        let head = match (vocab.entity_id(fields[0]), grow) {
            (Some(id), _) => id,
            (None, true) => vocab.intern_entity(fields[0]),
            (None, false) => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("unknown entity {}", fields[0]),
                ))
            }
        };
        let relation = match (vocab.relation_id(fields[1]), grow) {
            (Some(id), _) => id,
            (None, true) => vocab.intern_relation(fields[1]),
            (None, false) => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("unknown relation {}", fields[1]),
                ))
            }
        };
        let tail = match (vocab.entity_id(fields[2]), grow) {
            (Some(id), _) => id,
            (None, true) => vocab.intern_entity(fields[2]),
            (None, false) => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("unknown entity {}", fields[2]),
                ))
            }
        };
        triples.push(KgTriple {
            head,
            relation,
            tail,
        });
    }
    Ok(triples)
}

pub fn save_triples(
    path: impl AsRef<Path>,
    triples: &[KgTriple],
    vocab: &Vocab,
) -> Result<()> {
    let mut out = String::new();
    for t in triples {
        let head = vocab
            .entity_name(t.head)
            .ok_or_else(|| UgnError::InvalidArgument(format!("entity {} not in vocab", t.head)))?;
        let rel = vocab.relation_name(t.relation).ok_or_else(|| {
            UgnError::InvalidArgument(format!("relation {} not in vocab", t.relation))
        })?;
        let tail = vocab
            .entity_name(t.tail)
            .ok_or_else(|| UgnError::InvalidArgument(format!("entity {} not in vocab", t.tail)))?;
        let _ = writeln!(out, "{head}\t{rel}\t{tail}");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Planted-partition graph over `communities` contiguous, near-equal node
/// blocks: within-block pairs connect with probability `p_in`,
/// cross-block pairs with `p_out`. Returns the graph and ground-truth
/// community labels.
pub fn generate_sbm(
    n: usize,
    communities: usize,
    p_in: f64,
    p_out: f64,
    rng: &mut impl Rng,
) -> Result<(Graph, Vec<i64>)> {
    if communities == 0 || communities > n {
        return Err(UgnError::InvalidArgument(format!(
            "community count {communities} outside 1..={n}"
        )));
    }
    if !(0.0..=1.0).contains(&p_in) || p_out < 0.0 || p_out >= p_in {
        return Err(UgnError::InvalidArgument(format!(
            "need 0 <= p_out < p_in <= 1, got p_in={p_in} p_out={p_out}"
        )));
    }
    let small = n / communities;
    let rem = n % communities;
    let mut labels = Vec::with_capacity(n);
    for c in 0..communities {
        let size = if c < rem { small + 1 } else { small };
        labels.extend(std::iter::repeat(c as i64).take(size));
    }
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Ok((Graph::new(n, false, &edges)?, labels))
}

/// Synthetic source/target connectivity pairs.
///
/// Sources come from low-rank symmetric factors that share a base
/// component across samples (so the sample mean carries signal, as real
/// cross-subject connectivity does); targets follow
/// `T = tanh(alpha*S + beta*S∘S + noise*E)` with symmetric perturbation
/// `E`. Most of `E` is a systematic offset drawn once per dataset, the
/// rest varies per pair; the shared part models a cross-modality bias
/// that is invisible in the sources but shows up in every target.
pub fn generate_translation_pairs(
    n: usize,
    count: usize,
    alpha: f64,
    beta: f64,
    noise: f64,
    rng: &mut impl Rng,
) -> Result<Vec<TranslationPair>> {
    if n < 2 {
        return Err(UgnError::InvalidArgument(format!(
            "connectivity size {n} must be >= 2"
        )));
    }
    let rank = 4.max(n / 8);
    let base = Tensor::rand_uniform(vec![n, rank], -1.0, 1.0, rng);
    let mut shared = Tensor::rand_uniform(vec![n, n], -1.0, 1.0, rng);
    shared = shared.add(&shared.transpose2()?)?.scale(0.5);
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let indiv = Tensor::rand_uniform(vec![n, rank], -1.0, 1.0, rng);
        let factor = base.add(&indiv.scale(0.5))?;
        let gram = factor
            .matmul(&factor.transpose2()?)?
            .scale(1.0 / rank as f64);
        let source = gram.map(f64::tanh);
        let mut e = Tensor::rand_uniform(vec![n, n], -1.0, 1.0, rng);
        e = e.add(&e.transpose2()?)?.scale(0.5);
        let mut target = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            for j in 0..n {
                let s = source.get2(i, j);
                let perturb = shared.get2(i, j) + 0.25 * e.get2(i, j);
                let v = (alpha * s + beta * s * s + noise * perturb).tanh();
                target.set2(i, j, v);
            }
        }
        pairs.push(TranslationPair::new(source, target)?);
    }
    Ok(pairs)
}
