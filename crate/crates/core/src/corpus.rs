//! Synthetic scholarly universe: clustered topic vectors, a similarity-biased
//! citation DAG, and queries whose ground truth is every paper above a
//! relevance threshold.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::textio;

/// Tolerance on the unit-norm invariant of topic vectors.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Paper {
    pub id: usize,
    pub topic: Vec<f64>,
    /// Outgoing citations, all with a lower `year_rank`.
    pub refs: Vec<usize>,
    pub year_rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: usize,
    pub topic: Vec<f64>,
    /// Ground-truth relevant paper ids, ascending.
    pub truth: BTreeSet<usize>,
}

/// Generation parameters. The first five fields are the required sizes, the
/// rest shape the topic mixture and citation locality.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_papers: usize,
    pub n_queries: usize,
    pub dim: usize,
    pub avg_refs: usize,
    /// Number of Gaussian topic clusters.
    pub n_clusters: usize,
    /// Norm of the Gaussian offset added to a cluster center for a paper.
    pub paper_spread: f64,
    /// Same as `paper_spread`, for query topics.
    pub query_spread: f64,
    /// Papers with relevance at or above this value form a query's truth set.
    pub truth_threshold: f64,
    /// Citation weight is `exp(sharpness * cosine)` among earlier papers.
    pub citation_sharpness: f64,
}

impl CorpusConfig {
    pub fn new(seed: u64, n_papers: usize, n_queries: usize, dim: usize, avg_refs: usize) -> Self {
        Self {
            seed,
            n_papers,
            n_queries,
            dim,
            avg_refs,
            n_clusters: 24,
            paper_spread: 0.7,
            query_spread: 0.3,
            truth_threshold: 0.85,
            citation_sharpness: 8.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_papers < 2 {
            return Err(Error::config(
                "n_papers",
                format!("must be >= 2, got {}", self.n_papers),
            ));
        }
        if self.dim < 2 {
            return Err(Error::config(
                "dim",
                format!("must be >= 2, got {}", self.dim),
            ));
        }
        if self.avg_refs >= self.n_papers {
            return Err(Error::config(
                "avg_refs",
                format!(
                    "must be < n_papers ({}), got {}",
                    self.n_papers, self.avg_refs
                ),
            ));
        }
        if self.n_clusters == 0 {
            return Err(Error::config("n_clusters", "must be >= 1"));
        }
        for (name, v) in [
            ("paper_spread", self.paper_spread),
            ("query_spread", self.query_spread),
            ("citation_sharpness", self.citation_sharpness),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(
                    name,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        if !(self.truth_threshold > 0.0 && self.truth_threshold <= 1.0) {
            return Err(Error::config(
                "truth_threshold",
                format!("must lie in (0, 1], got {}", self.truth_threshold),
            ));
        }
        Ok(())
    }
}

/// Immutable paper universe. Paper ids are dense `0..papers.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub papers: Vec<Paper>,
    pub queries: Vec<Query>,
    pub dim: usize,
    pub seed: u64,
}

const MAX_QUERY_ATTEMPTS: usize = 10_000;

pub fn build_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.dim;

    let centers: Vec<Vec<f64>> = (0..config.n_clusters)
        .map(|_| random_unit(&mut rng, dim))
        .collect();

    let mut papers: Vec<Paper> = Vec::with_capacity(config.n_papers);
    for id in 0..config.n_papers {
        let center = &centers[rng.random_range(0..centers.len())];
        let topic = perturb(&mut rng, center, config.paper_spread);

        let n_refs = rng.random_range(0..=2 * config.avg_refs).min(id);
        let refs = sample_citations(&mut rng, &papers, &topic, n_refs, config.citation_sharpness);
        papers.push(Paper {
            id,
            topic,
            refs,
            year_rank: id,
        });
    }

    let mut queries = Vec::with_capacity(config.n_queries);
    for id in 0..config.n_queries {
        let mut attempt = 0;
        let (topic, truth) = loop {
            if attempt == MAX_QUERY_ATTEMPTS {
                return Err(Error::config(
                    "truth_threshold",
                    format!("no query with a nonempty truth set after {MAX_QUERY_ATTEMPTS} draws"),
                ));
            }
            attempt += 1;
            let center = &centers[rng.random_range(0..centers.len())];
            let topic = perturb(&mut rng, center, config.query_spread);
            let truth: BTreeSet<usize> = papers
                .iter()
                .filter(|p| relevance_of(&p.topic, &topic) >= config.truth_threshold)
                .map(|p| p.id)
                .collect();
            if !truth.is_empty() {
                break (topic, truth);
            }
        };
        queries.push(Query { id, topic, truth });
    }

    Ok(Corpus {
        papers,
        queries,
        dim,
        seed: config.seed,
    })
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(u) = normalized(&v) {
            return u;
        }
    }
}

fn perturb(rng: &mut ChaCha8Rng, center: &[f64], spread: f64) -> Vec<f64> {
    let scale = spread / (center.len() as f64).sqrt();
    loop {
        let v: Vec<f64> = center
            .iter()
            .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if let Some(u) = normalized(&v) {
            return u;
        }
    }
}

/// Weighted sampling without replacement (exponential-key method) among all
/// earlier papers, weight `exp(sharpness * cos)`. Returned ascending.
fn sample_citations(
    rng: &mut ChaCha8Rng,
    earlier: &[Paper],
    topic: &[f64],
    n: usize,
    sharpness: f64,
) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut keyed: Vec<(f64, usize)> = earlier
        .iter()
        .map(|p| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            // ln(u) / w with w = exp(s * cos); larger is better.
            let key = u.ln() * (-sharpness * dot(&p.topic, topic)).exp();
            (key, p.id)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut refs: Vec<usize> = keyed.into_iter().take(n).map(|(_, id)| id).collect();
    refs.sort_unstable();
    refs
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n.is_finite() && n > 0.0).then(|| v.iter().map(|x| x / n).collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// `(cos + 1) / 2`, clamped to `[0, 1]`. Callers guarantee equal dimensions.
pub(crate) fn relevance_of(a: &[f64], b: &[f64]) -> f64 {
    ((cosine(a, b) + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// Relevance of a paper to a query.
pub fn relevance(paper: &Paper, query: &Query) -> Result<f64> {
    if paper.topic.len() != query.topic.len() {
        return Err(Error::Invariant(format!(
            "relevance dimension mismatch: paper {} has {}, query {} has {}",
            paper.id,
            paper.topic.len(),
            query.id,
            query.topic.len()
        )));
    }
    Ok(relevance_of(&paper.topic, &query.topic))
}

impl Corpus {
    pub fn n_papers(&self) -> usize {
        self.papers.len()
    }

    pub fn paper(&self, id: usize) -> Result<&Paper> {
        self.papers
            .get(id)
            .ok_or(Error::NotFound { what: "paper", id })
    }

    pub fn query(&self, id: usize) -> Result<&Query> {
        self.queries
            .get(id)
            .ok_or(Error::NotFound { what: "query", id })
    }

    /// Relevance of paper `paper_id` to the query with the given topic.
    pub fn score(&self, paper_id: usize, query: &Query) -> Result<f64> {
        relevance(self.paper(paper_id)?, query)
    }

    /// Exact nearest-neighbour search by cosine, ties by ascending id.
    pub fn search(&self, probe: &[f64], limit: usize) -> Result<Vec<usize>> {
        search_backend(self, probe, limit)
    }

    pub fn references(&self, paper_id: usize) -> Result<&[usize]> {
        Ok(&self.paper(paper_id)?.refs)
    }

    /// Checks every structural invariant; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Invariant(format!(
                "dim must be >= 2, got {}",
                self.dim
            )));
        }
        let n = self.papers.len();
        for (i, p) in self.papers.iter().enumerate() {
            if p.id != i {
                return Err(Error::Invariant(format!(
                    "paper at index {i} has id {}",
                    p.id
                )));
            }
            check_topic(&p.topic, self.dim, "paper", i)?;
            let mut seen = BTreeSet::new();
            for &r in &p.refs {
                if r >= n {
                    return Err(Error::Invariant(format!(
                        "paper {i} cites unknown paper {r}"
                    )));
                }
                if r == i || !seen.insert(r) {
                    return Err(Error::Invariant(format!(
                        "paper {i} has a self or duplicate ref {r}"
                    )));
                }
                if self.papers[r].year_rank >= p.year_rank {
                    return Err(Error::Invariant(format!(
                        "paper {i} cites {r}, which is not strictly older"
                    )));
                }
            }
        }
        for (i, q) in self.queries.iter().enumerate() {
            if q.id != i {
                return Err(Error::Invariant(format!(
                    "query at index {i} has id {}",
                    q.id
                )));
            }
            check_topic(&q.topic, self.dim, "query", i)?;
            if q.truth.is_empty() {
                return Err(Error::Invariant(format!(
                    "query {i} has an empty truth set"
                )));
            }
            if let Some(&bad) = q.truth.iter().find(|&&t| t >= n) {
                return Err(Error::Invariant(format!(
                    "query {i} truth names unknown paper {bad}"
                )));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read_from(path: &Path) -> Result<Corpus> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Corpus::from_text(&text)
    }

    /// Line-oriented text form:
    ///
    /// ```text
    /// scout-corpus <dim> <n_papers> <n_queries> <seed>
    /// p <id> <year_rank> <topic...> ; <refs...>
    /// q <id> <topic...> ; <truth...>
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scout-corpus {} {} {} {}",
            self.dim,
            self.papers.len(),
            self.queries.len(),
            self.seed
        );
        for p in &self.papers {
            let _ = write!(out, "p {} {}", p.id, p.year_rank);
            textio::push_floats(&mut out, &p.topic);
            out.push_str(" ;");
            for r in &p.refs {
                let _ = write!(out, " {r}");
            }
            out.push('\n');
        }
        for q in &self.queries {
            let _ = write!(out, "q {}", q.id);
            textio::push_floats(&mut out, &q.topic);
            out.push_str(" ;");
            for t in &q.truth {
                let _ = write!(out, " {t}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Corpus> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            reason: "empty corpus file".into(),
        })?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 5 || h[0] != "scout-corpus" {
            return Err(Error::Parse {
                line: 1,
                reason: "expected `scout-corpus <dim> <n_papers> <n_queries> <seed>`".into(),
            });
        }
        let dim: usize = textio::parse_field(h[1], 1)?;
        let n_papers: usize = textio::parse_field(h[2], 1)?;
        let n_queries: usize = textio::parse_field(h[3], 1)?;
        let seed: u64 = textio::parse_field(h[4], 1)?;

        let mut papers = Vec::with_capacity(n_papers);
        let mut queries = Vec::with_capacity(n_queries);
        for (line_no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (head, tail) = line.split_once(';').ok_or(Error::Parse {
                line: line_no,
                reason: "missing `;` separator".into(),
            })?;
            let fields: Vec<&str> = head.split_whitespace().collect();
            let ids = tail
                .split_whitespace()
                .map(|t| textio::parse_field::<usize>(t, line_no))
                .collect::<Result<Vec<_>>>()?;
            match fields.first().copied() {
                Some("p") if fields.len() == 3 + dim => {
                    let topic = textio::parse_floats(&fields[3..], line_no)?;
                    papers.push(Paper {
                        id: textio::parse_field(fields[1], line_no)?,
                        year_rank: textio::parse_field(fields[2], line_no)?,
                        topic,
                        refs: ids,
                    });
                }
                Some("q") if fields.len() == 2 + dim => {
                    let topic = textio::parse_floats(&fields[2..], line_no)?;
                    queries.push(Query {
                        id: textio::parse_field(fields[1], line_no)?,
                        topic,
                        truth: ids.into_iter().collect(),
                    });
                }
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        reason: format!("malformed record (expected {dim} topic values)"),
                    })
                }
            }
        }
        if papers.len() != n_papers || queries.len() != n_queries {
            return Err(Error::Parse {
                line: 1,
                reason: format!(
                    "header declares {n_papers} papers / {n_queries} queries, found {} / {}",
                    papers.len(),
                    queries.len()
                ),
            });
        }
        let corpus = Corpus {
            papers,
            queries,
            dim,
            seed,
        };
        corpus.validate()?;
        Ok(corpus)
    }
}

fn check_topic(topic: &[f64], dim: usize, what: &str, id: usize) -> Result<()> {
    if topic.len() != dim {
        return Err(Error::Invariant(format!(
            "{what} {id} topic has dimension {}, expected {dim}",
            topic.len()
        )));
    }
    let n = norm(topic);
    if !n.is_finite() || (n - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::Invariant(format!(
            "{what} {id} topic norm {n} is not 1"
        )));
    }
    Ok(())
}

/// Ids of the `limit` papers with the highest cosine to `probe`, ties broken
/// by ascending id. Brute force.
pub fn search_backend(corpus: &Corpus, probe: &[f64], limit: usize) -> Result<Vec<usize>> {
    if limit == 0 {
        return Err(Error::config("limit", "search limit must be >= 1"));
    }
    if probe.len() != corpus.dim {
        return Err(Error::InvalidProbe(format!(
            "dimension {} does not match corpus dimension {}",
            probe.len(),
            corpus.dim
        )));
    }
    let probe_norm = norm(probe);
    if !probe_norm.is_finite() || probe_norm == 0.0 {
        return Err(Error::InvalidProbe(format!("probe norm is {probe_norm}")));
    }
    let mut scored: Vec<(f64, usize)> = corpus
        .papers
        .iter()
        .map(|p| (cosine(&p.topic, probe), p.id))
        .collect();
    let by_rank = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
    };
    let limit = limit.min(scored.len());
    if limit < scored.len() {
        scored.select_nth_unstable_by(limit - 1, by_rank);
        scored.truncate(limit);
    }
    scored.sort_unstable_by(by_rank);
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

/// Outgoing references of a paper, in stored order.
pub fn references(corpus: &Corpus, paper_id: usize) -> Result<Vec<usize>> {
    corpus.references(paper_id).map(<[usize]>::to_vec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Corpus {
        build_corpus(&CorpusConfig::new(7, 100, 5, 8, 4)).unwrap()
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        normalized(v).unwrap()
    }

    #[test]
    fn builds_requested_sizes_and_valid_structure() {
        let c = small();
        assert_eq!(c.papers.len(), 100);
        assert_eq!(c.queries.len(), 5);
        c.validate().unwrap();
        for p in &c.papers {
            assert!(p.refs.iter().all(|&r| c.papers[r].year_rank < p.year_rank));
        }
    }

    #[test]
    fn build_is_deterministic() {
        assert_eq!(small(), small());
        let other = build_corpus(&CorpusConfig::new(8, 100, 5, 8, 4)).unwrap();
        assert_ne!(small(), other);
    }

    #[test]
    fn rejects_bad_sizes_by_name() {
        let err = build_corpus(&CorpusConfig::new(7, 1, 5, 8, 4)).unwrap_err();
        assert!(
            matches!(err, Error::Config { ref param, .. } if param == "n_papers"),
            "{err}"
        );
        let err = build_corpus(&CorpusConfig::new(7, 10, 5, 1, 4)).unwrap_err();
        assert!(matches!(err, Error::Config { ref param, .. } if param == "dim"));
        let err = build_corpus(&CorpusConfig::new(7, 10, 5, 8, 10)).unwrap_err();
        assert!(matches!(err, Error::Config { ref param, .. } if param == "avg_refs"));
    }

    #[test]
    fn relevance_extremes() {
        let mk_paper = |t: Vec<f64>| Paper {
            id: 0,
            topic: t,
            refs: vec![],
            year_rank: 0,
        };
        let mk_query = |t: Vec<f64>| Query {
            id: 0,
            topic: t,
            truth: BTreeSet::from([0]),
        };
        let x = unit(&[0.3, -0.4, 0.5]);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(
            relevance(&mk_paper(x.clone()), &mk_query(x.clone())).unwrap(),
            1.0
        );
        assert_eq!(
            relevance(&mk_paper(x.clone()), &mk_query(neg)).unwrap(),
            0.0
        );
        let r = relevance(
            &mk_paper(vec![1.0, 0.0, 0.0]),
            &mk_query(vec![0.0, 1.0, 0.0]),
        )
        .unwrap();
        assert_eq!(r, 0.5);
        let err = relevance(&mk_paper(vec![1.0, 0.0]), &mk_query(vec![1.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    #[test]
    fn search_finds_self_and_is_exhaustive() {
        let c = small();
        assert_eq!(c.search(&c.papers[3].topic, 1).unwrap(), vec![3]);
        let mut all = c.search(&c.queries[0].topic, c.n_papers()).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..c.n_papers()).collect::<Vec<_>>());
        assert!(matches!(
            c.search(&vec![0.0; 8], 3),
            Err(Error::InvalidProbe(_))
        ));
        assert!(c.search(&c.papers[0].topic, 0).is_err());
    }

    #[test]
    fn search_breaks_ties_by_ascending_id() {
        // Papers 4 and 9 share a topic; sort oracle is (-score, id).
        let mut c = small();
        let shared = unit(&[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]);
        c.papers[4].topic = shared.clone();
        c.papers[9].topic = shared.clone();
        let got = c.search(&shared, 2).unwrap();
        assert_eq!(got, vec![4, 9]);

        let mut oracle: Vec<(f64, usize)> = c
            .papers
            .iter()
            .map(|p| (cosine(&p.topic, &shared), p.id))
            .collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let oracle: Vec<usize> = oracle.into_iter().map(|x| x.1).collect();
        assert_eq!(c.search(&shared, c.n_papers()).unwrap(), oracle);
    }

    #[test]
    fn references_echo_and_errors() {
        let c = small();
        assert!(references(&c, 0).unwrap().is_empty());
        let mut c2 = c.clone();
        c2.papers[10].refs = vec![2, 5];
        assert_eq!(references(&c2, 10).unwrap(), vec![2, 5]);
        let err = references(&c, c.n_papers()).unwrap_err();
        assert!(matches!(err, Error::NotFound { what: "paper", .. }));
    }

    #[test]
    fn truth_sets_match_threshold() {
        let cfg = CorpusConfig::new(3, 300, 6, 8, 3);
        let c = build_corpus(&cfg).unwrap();
        for q in &c.queries {
            let expected: BTreeSet<usize> = c
                .papers
                .iter()
                .filter(|p| relevance(p, q).unwrap() >= cfg.truth_threshold)
                .map(|p| p.id)
                .collect();
            assert_eq!(q.truth, expected);
            assert!(!q.truth.is_empty());
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let c = small();
        let back = Corpus::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn malformed_text_is_rejected() {
        assert!(matches!(Corpus::from_text(""), Err(Error::Parse { .. })));
        let mut text = small().to_text();
        text.push_str("p 100 100 1.0 ;\n");
        assert!(matches!(Corpus::from_text(&text), Err(Error::Parse { .. })));
    }
}
