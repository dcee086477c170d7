use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NliDistribution, NliScorer, ScorePair};
use crate::error::{Error, Result};

pub const CACHE_VERSION: u32 = 1;

/// Content hash of `(scorer id, premise, hypothesis)`, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScoreCacheKey(String);

impl ScoreCacheKey {
    pub fn new(scorer_id: &str, premise: &str, hypothesis: &str) -> Self {
        let mut h = Sha256::new();
        for part in [scorer_id, premise, hypothesis] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        Self(hex::encode(h.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    scorer_id: String,
}

#[derive(Serialize, Deserialize)]
struct Record {
    k: String,
    e: f64,
    n: f64,
    c: f64,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    checksum: String,
    count: usize,
}

/// Scores for one scorer identity, keyed by [`ScoreCacheKey`].
///
/// On disk: a header line, one record per line in key order, and a trailer
/// line holding the SHA-256 of every preceding byte plus the record count.
/// A file without a valid trailer is rejected.
///
/// A `ScoreCache` is itself a cache-only [`NliScorer`]: lookups that miss
/// fail with a validation error.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCache {
    scorer_id: String,
    entries: BTreeMap<ScoreCacheKey, NliDistribution>,
}

impl ScoreCache {
    pub fn new(scorer_id: impl Into<String>) -> Self {
        Self {
            scorer_id: scorer_id.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn scorer_id(&self) -> &str {
        &self.scorer_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, premise: &str, hypothesis: &str) -> Option<NliDistribution> {
        self.entries
            .get(&ScoreCacheKey::new(&self.scorer_id, premise, hypothesis))
            .copied()
    }

    pub fn insert(&mut self, premise: &str, hypothesis: &str, dist: NliDistribution) {
        self.entries
            .insert(ScoreCacheKey::new(&self.scorer_id, premise, hypothesis), dist);
    }

    pub fn entries(&self) -> impl Iterator<Item = (&ScoreCacheKey, &NliDistribution)> {
        self.entries.iter()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        let header = Header {
            version: CACHE_VERSION,
            scorer_id: self.scorer_id.clone(),
        };
        writeln!(body, "{}", serde_json::to_string(&header).expect("header serialises")).unwrap();
        for (k, d) in &self.entries {
            let rec = Record {
                k: k.0.clone(),
                e: d.entailment,
                n: d.neutral,
                c: d.contradiction,
            };
            writeln!(body, "{}", serde_json::to_string(&rec).expect("record serialises")).unwrap();
        }
        let trailer = Trailer {
            checksum: hex::encode(Sha256::digest(&body)),
            count: self.entries.len(),
        };
        writeln!(body, "{}", serde_json::to_string(&trailer).expect("trailer serialises")).unwrap();
        body
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |offset: usize, message: String| Error::CacheCorrupt {
            offset: offset as u64,
            message,
        };
        let mut offset = 0usize;
        let mut lines = Vec::new();
        while offset < bytes.len() {
            let end = bytes[offset..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|p| offset + p)
                .ok_or_else(|| corrupt(offset, "unterminated final line".into()))?;
            lines.push((offset, &bytes[offset..end]));
            offset = end + 1;
        }
        let Some(&(_, header_line)) = lines.first() else {
            return Err(corrupt(0, "empty cache file".into()));
        };
        let header: serde_json::Value = serde_json::from_slice(header_line)
            .map_err(|e| corrupt(0, format!("bad header: {e}")))?;
        let version = header
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| corrupt(0, "header has no version".into()))?;
        if version != u64::from(CACHE_VERSION) {
            return Err(Error::CacheVersion {
                expected: CACHE_VERSION,
                found: version as u32,
            });
        }
        let header: Header =
            serde_json::from_value(header).map_err(|e| corrupt(0, format!("bad header: {e}")))?;

        let (trailer_offset, trailer_line) = *lines.last().expect("at least the header");
        let trailer: Trailer = match serde_json::from_slice(trailer_line) {
            Ok(t) if lines.len() >= 2 => t,
            _ => {
                return Err(corrupt(
                    trailer_offset,
                    "missing checksum trailer (file truncated?)".into(),
                ))
            }
        };
        let actual = hex::encode(Sha256::digest(&bytes[..trailer_offset]));
        if actual != trailer.checksum {
            return Err(corrupt(trailer_offset, "checksum mismatch".into()));
        }

        let mut cache = ScoreCache::new(header.scorer_id);
        for &(off, line) in &lines[1..lines.len() - 1] {
            let rec: Record =
                serde_json::from_slice(line).map_err(|e| corrupt(off, format!("bad record: {e}")))?;
            let dist = NliDistribution::new(rec.e, rec.n, rec.c)
                .map_err(|e| corrupt(off, e.to_string()))?;
            cache.entries.insert(ScoreCacheKey(rec.k), dist);
        }
        if cache.entries.len() != trailer.count {
            return Err(corrupt(
                trailer_offset,
                format!("trailer counts {} records, found {}", trailer.count, cache.entries.len()),
            ));
        }
        Ok(cache)
    }

    /// Writes the cache next to `path` and renames it into place.
    pub fn persist(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl NliScorer for ScoreCache {
    fn scorer_id(&self) -> &str {
        &self.scorer_id
    }

    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<NliDistribution>> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.get(&p.premise, &p.hypothesis).ok_or_else(|| {
                    Error::validation(format!("pair {i} is not in the {} cache", self.scorer_id))
                })
            })
            .collect()
    }
}

/// Read-through cache in front of another scorer. Misses are forwarded in a
/// single batch and stored; hits never reach the inner scorer.
pub struct CachedScorer<S> {
    inner: S,
    cache: RwLock<ScoreCache>,
}

impl<S: NliScorer> CachedScorer<S> {
    pub fn new(inner: S) -> Self {
        let cache = ScoreCache::new(inner.scorer_id());
        Self {
            inner,
            cache: RwLock::new(cache),
        }
    }

    /// Starts from an existing cache, which must belong to the same scorer.
    pub fn with_cache(inner: S, cache: ScoreCache) -> Result<Self> {
        if cache.scorer_id() != inner.scorer_id() {
            return Err(Error::validation(format!(
                "cache belongs to scorer {:?}, not {:?}",
                cache.scorer_id(),
                inner.scorer_id()
            )));
        }
        Ok(Self {
            inner,
            cache: RwLock::new(cache),
        })
    }

    pub fn snapshot(&self) -> ScoreCache {
        self.cache.read().expect("cache lock poisoned").clone()
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: NliScorer> NliScorer for CachedScorer<S> {
    fn scorer_id(&self) -> &str {
        self.inner.scorer_id()
    }

    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<NliDistribution>> {
        let mut out: Vec<Option<NliDistribution>> = {
            let cache = self.cache.read().expect("cache lock poisoned");
            pairs.iter().map(|p| cache.get(&p.premise, &p.hypothesis)).collect()
        };
        let mut misses: Vec<ScorePair> = Vec::new();
        let mut miss_slot = BTreeMap::new();
        for (i, p) in pairs.iter().enumerate() {
            if out[i].is_none() && !miss_slot.contains_key(p) {
                miss_slot.insert(p.clone(), misses.len());
                misses.push(p.clone());
            }
        }
        if !misses.is_empty() {
            let fresh = super::score_pairs_checked(&self.inner, &misses)?;
            let mut cache = self.cache.write().expect("cache lock poisoned");
            for (p, d) in misses.iter().zip(&fresh) {
                cache.insert(&p.premise, &p.hypothesis, *d);
            }
            for (i, p) in pairs.iter().enumerate() {
                if out[i].is_none() {
                    out[i] = Some(fresh[miss_slot[p]]);
                }
            }
        }
        Ok(out.into_iter().map(|d| d.expect("every slot filled")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{score_batch, CountingScorer, MockScorer, ScoreBatch};

    fn three_entries() -> ScoreCache {
        let mut c = ScoreCache::new("mock@seed=1");
        for (p, h) in [("a", "b"), ("c", "d"), ("e", "f")] {
            c.insert(p, h, super::super::mock_score(p, h, 1));
        }
        c
    }

    #[test]
    fn key_is_stable_and_scorer_specific() {
        assert_eq!(ScoreCacheKey::new("m", "p", "h"), ScoreCacheKey::new("m", "p", "h"));
        assert_ne!(ScoreCacheKey::new("m1", "p", "h"), ScoreCacheKey::new("m2", "p", "h"));
        // length prefixing keeps field boundaries
        assert_ne!(ScoreCacheKey::new("m", "ab", "c"), ScoreCacheKey::new("m", "a", "bc"));
    }

    #[test]
    fn empty_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = ScoreCache::new("x");
        c.persist(&path).unwrap();
        assert_eq!(ScoreCache::load(&path).unwrap(), c);
    }

    #[test]
    fn three_entries_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = three_entries();
        c.persist(&path).unwrap();
        let back = ScoreCache::load(&path).unwrap();
        assert_eq!(back.len(), 3);
        for ((k1, d1), (k2, d2)) in c.entries().zip(back.entries()) {
            assert_eq!(k1, k2);
            assert_eq!(d1.entailment.to_bits(), d2.entailment.to_bits());
            assert_eq!(d1.neutral.to_bits(), d2.neutral.to_bits());
            assert_eq!(d1.contradiction.to_bits(), d2.contradiction.to_bits());
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = three_entries().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() - 30, bytes.len() / 2, 5] {
            let err = ScoreCache::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::CacheCorrupt { .. }), "cut {cut}: {err:?}");
        }
        // dropping whole lines from the end keeps line framing but loses the trailer
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let short = lines[..lines.len() - 1].join("\n") + "\n";
        assert!(matches!(
            ScoreCache::from_bytes(short.as_bytes()),
            Err(Error::CacheCorrupt { .. })
        ));
    }

    #[test]
    fn flipped_byte_reports_offset() {
        let mut bytes = three_entries().to_bytes();
        let header_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        bytes[header_len + 8] ^= 0x01;
        match ScoreCache::from_bytes(&bytes) {
            Err(Error::CacheCorrupt { offset, .. }) => assert!(offset > 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let bytes = b"{\"version\":2,\"scorer_id\":\"x\"}\n";
        assert!(matches!(
            ScoreCache::from_bytes(bytes),
            Err(Error::CacheVersion { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn second_call_hits_cache() {
        let scorer = CachedScorer::new(CountingScorer::new(MockScorer::new(5)));
        let batch = ScoreBatch::new(0, vec![ScorePair::new("p q", "q"), ScorePair::new("x", "y")]);
        let first = score_batch(&scorer, &batch).unwrap();
        assert_eq!(scorer.inner().pair_count(), 2);
        let second = score_batch(&scorer, &batch).unwrap();
        assert_eq!(scorer.inner().pair_count(), 2);
        assert_eq!(first, second);
    }

    #[test]
    fn duplicate_misses_scored_once() {
        let scorer = CachedScorer::new(CountingScorer::new(MockScorer::new(5)));
        let batch = ScoreBatch::new(0, vec![ScorePair::new("p", "h"); 4]);
        score_batch(&scorer, &batch).unwrap();
        assert_eq!(scorer.inner().pair_count(), 1);
    }

    #[test]
    fn cache_only_backend() {
        let c = three_entries();
        let hit = score_batch(&c, &ScoreBatch::new(0, vec![ScorePair::new("a", "b")])).unwrap();
        assert_eq!(hit[0], super::super::mock_score("a", "b", 1));
        assert!(score_batch(&c, &ScoreBatch::new(0, vec![ScorePair::new("z", "z")])).is_err());
    }

    #[test]
    fn foreign_cache_rejected() {
        assert!(CachedScorer::with_cache(MockScorer::new(1), ScoreCache::new("other")).is_err());
        assert!(CachedScorer::with_cache(MockScorer::new(1), three_entries()).is_ok());
    }
}
