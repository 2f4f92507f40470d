use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::segment::segment;
use super::tokenize::tokenize;
use super::{Chunk, Document, KnowledgeError};

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    fn validate(&self) -> Result<(), KnowledgeError> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) || !(0.0..=1.0).contains(&self.b) {
            return Err(KnowledgeError::InvalidParameter(format!(
                "bm25 needs k1 >= 0 and 0 <= b <= 1, got k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub docs: usize,
    pub chunks: usize,
    pub vocab_size: usize,
    pub avg_chunk_tokens: f64,
    #[serde(default)]
    pub malformed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub chunk: Chunk,
    pub title: String,
    pub score: f64,
    /// Deliberately irrelevant addition.
    pub injected: bool,
    /// Source document forced into the set.
    pub guaranteed: bool,
}

/// Settings for retrieval while constructing training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingRetrieval {
    pub top_k: usize,
    pub threshold: f64,
    pub noise_prob: f64,
    pub guarantee_prob: f64,
}

impl Default for TrainingRetrieval {
    fn default() -> Self {
        TrainingRetrieval {
            top_k: 3,
            threshold: 0.0,
            noise_prob: 0.25,
            guarantee_prob: 1.0,
        }
    }
}

impl TrainingRetrieval {
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        for (name, p) in [("noise_prob", self.noise_prob), ("guarantee_prob", self.guarantee_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(KnowledgeError::InvalidParameter(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.threshold.is_nan() {
            return Err(KnowledgeError::InvalidParameter("threshold is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    params: Bm25Params,
    max_chunk_tokens: usize,
    stats: IndexStats,
}

/// Immutable BM25 index over document chunks.
#[derive(Debug, Clone)]
pub struct KnowledgeIndex {
    params: Bm25Params,
    max_chunk_tokens: usize,
    docs: Vec<Document>,
    doc_pos: HashMap<String, usize>,
    chunks: Vec<Chunk>,
    chunk_len: Vec<usize>,
    postings: HashMap<String, Vec<(usize, u32)>>,
    avg_len: f64,
}

impl KnowledgeIndex {
    pub fn build(docs: Vec<Document>, params: Bm25Params, max_chunk_tokens: usize) -> Result<Self, KnowledgeError> {
        if max_chunk_tokens == 0 {
            return Err(KnowledgeError::InvalidParameter("max_chunk_tokens must be at least 1".into()));
        }
        if docs.is_empty() {
            return Err(KnowledgeError::EmptyCorpus);
        }
        let chunks = docs
            .iter()
            .flat_map(|d| {
                segment(&d.body, max_chunk_tokens)
                    .into_iter()
                    .enumerate()
                    .map(|(seq, s)| Chunk {
                        doc_id: d.id.clone(),
                        seq,
                        text: s.text,
                        token_count: s.token_count,
                        oversized: s.oversized,
                    })
            })
            .collect();
        Self::from_parts(docs, chunks, params, max_chunk_tokens)
    }

    fn from_parts(
        docs: Vec<Document>,
        chunks: Vec<Chunk>,
        params: Bm25Params,
        max_chunk_tokens: usize,
    ) -> Result<Self, KnowledgeError> {
        params.validate()?;
        let doc_pos: HashMap<String, usize> = docs.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        if doc_pos.len() != docs.len() {
            return Err(KnowledgeError::InvalidParameter("document ids are not unique".into()));
        }
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut chunk_len = Vec::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            let terms = tokenize(&chunk.text);
            chunk_len.push(terms.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i, n));
            }
        }
        let total: usize = chunk_len.iter().sum();
        let avg_len = if chunks.is_empty() { 0.0 } else { total as f64 / chunks.len() as f64 };
        Ok(KnowledgeIndex {
            params,
            max_chunk_tokens,
            docs,
            doc_pos,
            chunks,
            chunk_len,
            postings,
            avg_len,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn max_chunk_tokens(&self) -> usize {
        self.max_chunk_tokens
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.doc_pos.get(id).map(|&i| &self.docs[i])
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            docs: self.docs.len(),
            chunks: self.chunks.len(),
            vocab_size: self.postings.len(),
            avg_chunk_tokens: self.avg_len,
            malformed: 0,
        }
    }

    /// Inverse document frequency over chunks.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.chunks.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of every chunk sharing at least one term with `query`.
    /// Each distinct query term counts once.
    pub fn scores(&self, query: &str) -> HashMap<usize, f64> {
        let mut terms = tokenize(query);
        let mut seen = std::collections::HashSet::new();
        terms.retain(|t| seen.insert(t.clone()));
        let Bm25Params { k1, b } = self.params;
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(term);
            for &(chunk, tf) in list {
                let tf = f64::from(tf);
                let norm = 1.0 - b + b * self.chunk_len[chunk] as f64 / self.avg_len;
                *scores.entry(chunk).or_default() += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        scores
    }

    fn result(&self, chunk: usize, score: f64) -> RetrievalResult {
        let c = &self.chunks[chunk];
        RetrievalResult {
            title: self.document(&c.doc_id).map(|d| d.title.clone()).unwrap_or_default(),
            chunk: c.clone(),
            score,
            injected: false,
            guaranteed: false,
        }
    }

    /// Up to `top_k` chunks scoring at least `threshold`, best first; ties
    /// go by document id, then chunk order. Chunks with no query term are
    /// never returned.
    pub fn retrieve(&self, query: &str, top_k: usize, threshold: f64) -> Vec<RetrievalResult> {
        let mut ranked: Vec<(usize, f64)> = self
            .scores(query)
            .into_iter()
            .filter(|&(_, s)| s >= threshold)
            .collect();
        ranked.sort_by(|a, b| {
            let (ca, cb) = (&self.chunks[a.0], &self.chunks[b.0]);
            b.1.total_cmp(&a.1)
                .then_with(|| ca.doc_id.cmp(&cb.doc_id))
                .then_with(|| ca.seq.cmp(&cb.seq))
        });
        ranked.truncate(top_k);
        ranked.into_iter().map(|(c, s)| self.result(c, s)).collect()
    }

    /// Retrieval for training-data construction: the regular results, then
    /// the source document's best chunk if it was missed (with probability
    /// `guarantee_prob`), then one chunk sharing no query term (with
    /// probability `noise_prob`).
    pub fn retrieve_for_training<R: Rng + ?Sized>(
        &self,
        query: &str,
        opts: &TrainingRetrieval,
        source_doc: Option<&str>,
        rng: &mut R,
    ) -> Result<Vec<RetrievalResult>, KnowledgeError> {
        opts.validate()?;
        let mut results = self.retrieve(query, opts.top_k, opts.threshold);
        let scores = self.scores(query);

        if let Some(src) = source_doc.filter(|s| self.doc_pos.contains_key(*s)) {
            if !results.iter().any(|r| r.chunk.doc_id == src) && rng.random_bool(opts.guarantee_prob) {
                let best = (0..self.chunks.len())
                    .filter(|&i| self.chunks[i].doc_id == src)
                    .map(|i| (i, scores.get(&i).copied().unwrap_or(0.0)))
                    .fold(None::<(usize, f64)>, |acc, (i, s)| match acc {
                        Some((_, bs)) if bs >= s => acc,
                        _ => Some((i, s)),
                    });
                if let Some((chunk, score)) = best {
                    let mut r = self.result(chunk, score);
                    r.guaranteed = true;
                    results.push(r);
                }
            }
        }

        if rng.random_bool(opts.noise_prob) {
            let pool: Vec<usize> = (0..self.chunks.len())
                .filter(|i| !scores.contains_key(i) && Some(self.chunks[*i].doc_id.as_str()) != source_doc)
                .collect();
            if !pool.is_empty() {
                let mut r = self.result(pool[rng.random_range(0..pool.len())], 0.0);
                r.injected = true;
                results.push(r);
            }
        }
        Ok(results)
    }

    pub fn save(&self, dir: &Path) -> Result<(), KnowledgeError> {
        fs::create_dir_all(dir).map_err(|e| KnowledgeError::io(dir, e))?;
        let manifest = Manifest {
            format_version: INDEX_FORMAT_VERSION,
            params: self.params,
            max_chunk_tokens: self.max_chunk_tokens,
            stats: self.stats(),
        };
        write_atomic(&dir.join("docs.jsonl"), &jsonl(&self.docs))?;
        write_atomic(&dir.join("chunks.jsonl"), &jsonl(&self.chunks))?;
        let manifest = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&dir.join("manifest.json"), manifest.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self, KnowledgeError> {
        let corrupt = |message: String| KnowledgeError::Corrupt {
            path: dir.to_path_buf(),
            message,
        };
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| KnowledgeError::io(&path, e))
        };
        let manifest: Manifest =
            serde_json::from_str(&read("manifest.json")?).map_err(|e| corrupt(format!("manifest: {e}")))?;
        if manifest.format_version != INDEX_FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {}", manifest.format_version)));
        }
        let docs: Vec<Document> = parse_jsonl(&read("docs.jsonl")?).map_err(|e| corrupt(format!("docs: {e}")))?;
        let chunks: Vec<Chunk> =
            parse_jsonl(&read("chunks.jsonl")?).map_err(|e| corrupt(format!("chunks: {e}")))?;
        let index = Self::from_parts(docs, chunks, manifest.params, manifest.max_chunk_tokens)?;
        let stats = index.stats();
        if (stats.docs, stats.chunks, stats.vocab_size) != (manifest.stats.docs, manifest.stats.chunks, manifest.stats.vocab_size) {
            return Err(corrupt("contents do not match the manifest".into()));
        }
        Ok(index)
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("record serializes");
        out.push(b'\n');
    }
    out
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), KnowledgeError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| KnowledgeError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| KnowledgeError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| KnowledgeError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::DocKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc(id: &str, body: &str) -> Document {
        Document {
            id: id.into(),
            kind: DocKind::News,
            title: format!("title {id}"),
            date: chrono::NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(),
            source: "test".into(),
            body: body.into(),
        }
    }

    fn index(docs: &[(&str, &str)]) -> KnowledgeIndex {
        let docs = docs.iter().map(|(i, b)| doc(i, b)).collect();
        KnowledgeIndex::build(docs, Bm25Params::default(), 256).unwrap()
    }

    #[test]
    fn term_present_in_one_chunk_ranks_it_first() {
        let idx = index(&[("a", "alpha beta."), ("b", "gamma delta.")]);
        let r = idx.retrieve("gamma", 3, 0.0);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].chunk.doc_id, "b");
        assert!(idx.retrieve("omega", 3, 0.0).is_empty());
    }

    #[test]
    fn duplicates_tie_and_break_by_id() {
        let idx = index(&[("z", "same text."), ("a", "same text."), ("m", "other words.")]);
        let r = idx.retrieve("same", 3, 0.0);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].score, r[1].score);
        assert_eq!((r[0].chunk.doc_id.as_str(), r[1].chunk.doc_id.as_str()), ("a", "z"));
    }

    #[test]
    fn threshold_and_top_k() {
        let idx = index(&[("a", "x y."), ("b", "x."), ("c", "x z.")]);
        assert_eq!(idx.retrieve("x", 2, 0.0).len(), 2);
        let all = idx.retrieve("x y", 3, 0.0);
        let cut = all[0].score;
        assert_eq!(idx.retrieve("x y", 3, cut).len(), 1);
    }

    #[test]
    fn training_retrieval_flags() {
        let idx = index(&[("a", "利率上调。"), ("b", "利率下调。"), ("c", "天气晴朗。"), ("d", "球赛结束。")]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let always = TrainingRetrieval { noise_prob: 1.0, ..Default::default() };
        for _ in 0..20 {
            let r = idx.retrieve_for_training("利率", &always, None, &mut rng).unwrap();
            assert_eq!(r.iter().filter(|x| x.injected).count(), 1);
            let injected = r.iter().find(|x| x.injected).unwrap();
            assert!(["c", "d"].contains(&injected.chunk.doc_id.as_str()));
        }
        let never = TrainingRetrieval { noise_prob: 0.0, ..Default::default() };
        assert_eq!(idx.retrieve_for_training("利率", &never, None, &mut rng).unwrap(), idx.retrieve("利率", 3, 0.0));
        let r = idx.retrieve_for_training("利率", &never, Some("d"), &mut rng).unwrap();
        assert!(r.iter().any(|x| x.guaranteed && x.chunk.doc_id == "d"));
        let r = idx.retrieve_for_training("利率", &never, Some("a"), &mut rng).unwrap();
        assert!(!r.iter().any(|x| x.guaranteed));
        let bad = TrainingRetrieval { noise_prob: 1.5, ..Default::default() };
        assert!(idx.retrieve_for_training("x", &bad, None, &mut rng).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let idx = index(&[("a", "营业收入增长。净利润下降。"), ("b", "Revenue rose 5%. 利润率提升。")]);
        let dir = tempfile::tempdir().unwrap();
        idx.save(dir.path()).unwrap();
        let back = KnowledgeIndex::load(dir.path()).unwrap();
        assert_eq!(back.stats(), idx.stats());
        for q in ["收入", "revenue 利润", "无关"] {
            let a = serde_json::to_string(&idx.retrieve(q, 5, 0.0)).unwrap();
            let b = serde_json::to_string(&back.retrieve(q, 5, 0.0)).unwrap();
            assert_eq!(a, b);
        }
        fs::write(dir.path().join("manifest.json"), "{}").unwrap();
        assert!(matches!(KnowledgeIndex::load(dir.path()), Err(KnowledgeError::Corrupt { .. })));
    }
}
