//! Exact inner-product top-N search over stored document embeddings.
//!
//! Vectors are stored in f32; scores accumulate in f64 so tie behavior is
//! deterministic across platforms. Ties break by ascending doc id. No
//! approximate structures — desk-scale corpora are scanned in full.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};

const MAGIC: &[u8; 4] = b"MULX";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    ids: Vec<String>,
    /// Row-major, ids.len() x dimension.
    vectors: Vec<f32>,
    normalized: bool,
    by_id: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// (doc_id, score) by descending score; ties by ascending doc id.
    pub hits: Vec<(String, f64)>,
}

impl EmbeddingStore {
    pub fn new(dimension: usize, normalized: bool) -> Self {
        EmbeddingStore {
            dimension,
            ids: Vec::new(),
            vectors: Vec::new(),
            normalized,
            by_id: HashMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, doc_id: &str) -> Option<&[f32]> {
        self.by_id
            .get(doc_id)
            .map(|&row| &self.vectors[row * self.dimension..(row + 1) * self.dimension])
    }

    /// Stores a vector under an unused id, L2-normalizing iff the store was
    /// created in normalized mode.
    pub fn add(&mut self, doc_id: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dimension {
            return Err(CoreError::DimensionMismatch {
                expected: self.dimension,
                got: vector.len(),
            });
        }
        if self.by_id.contains_key(doc_id) {
            return Err(CoreError::DuplicateDocId(doc_id.to_string()));
        }
        let mut row: Vec<f64> = vector.to_vec();
        if self.normalized {
            crate::model::l2_normalize(&mut row);
        }
        self.by_id.insert(doc_id.to_string(), self.ids.len());
        self.ids.push(doc_id.to_string());
        self.vectors.extend(row.iter().map(|&v| v as f32));
        Ok(())
    }

    /// Exact top-N by inner product (f64 accumulation over f32 rows).
    pub fn search(&self, query: &[f32], n: usize) -> Result<SearchResult> {
        if self.ids.is_empty() {
            return Err(CoreError::EmptyStore);
        }
        if query.len() != self.dimension {
            return Err(CoreError::DimensionMismatch {
                expected: self.dimension,
                got: query.len(),
            });
        }
        let mut scored: Vec<(usize, f64)> = (0..self.ids.len())
            .map(|row| {
                let v = &self.vectors[row * self.dimension..(row + 1) * self.dimension];
                let score: f64 =
                    v.iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum();
                (row, score)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        });
        scored.truncate(n);
        Ok(SearchResult {
            hits: scored.into_iter().map(|(row, s)| (self.ids[row].clone(), s)).collect(),
        })
    }

    /// Binary layout: magic, version, dimension, count, normalization flag,
    /// id table (u32 length + UTF-8 bytes each), packed f32 LE vectors.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        buf.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        buf.push(self.normalized as u8);
        for id in &self.ids {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        for v in &self.vectors {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        let corrupt = |reason: &str| CoreError::CorruptFile {
            kind: "index",
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(corrupt("truncated"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(CoreError::VersionMismatch {
                kind: "index",
                version,
                path: path.to_path_buf(),
            });
        }
        let dimension = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let normalized = take(&mut pos, 1)?[0] != 0;
        let mut ids = Vec::with_capacity(count);
        let mut by_id = HashMap::with_capacity(count);
        for row in 0..count {
            let len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let id = std::str::from_utf8(take(&mut pos, len)?)
                .map_err(|_| corrupt("id is not UTF-8"))?
                .to_string();
            if by_id.insert(id.clone(), row).is_some() {
                return Err(corrupt("duplicate id"));
            }
            ids.push(id);
        }
        let raw = take(&mut pos, count * dimension * 4)?;
        let vectors: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(EmbeddingStore { dimension, ids, vectors, normalized, by_id })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn added_vector_is_its_own_best_match() {
        let mut store = EmbeddingStore::new(2, false);
        store.add("d1", &[1.0, 0.0]).unwrap();
        store.add("d2", &[0.0, 1.0]).unwrap();
        let result = store.search(&[1.0, 0.0], 1).unwrap();
        assert_eq!(result.hits, vec![("d1".to_string(), 1.0)]);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let mut store = EmbeddingStore::new(2, false);
        store.add("d1", &[1.0, 0.0]).unwrap();
        assert!(matches!(
            store.add("d1", &[0.0, 1.0]),
            Err(CoreError::DuplicateDocId(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut store = EmbeddingStore::new(4, false);
        assert!(matches!(
            store.add("d1", &[1.0, 0.0, 0.0]),
            Err(CoreError::DimensionMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn equal_scores_order_by_ascending_doc_id() {
        let mut store = EmbeddingStore::new(2, false);
        store.add("d9", &[1.0, 0.0]).unwrap();
        store.add("d1", &[1.0, 0.0]).unwrap();
        store.add("d5", &[1.0, 0.0]).unwrap();
        let result = store.search(&[1.0, 0.0], 3).unwrap();
        let ids: Vec<&str> = result.hits.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["d1", "d5", "d9"]);
    }

    #[test]
    fn empty_store_search_is_an_error() {
        let store = EmbeddingStore::new(2, false);
        assert!(matches!(store.search(&[1.0, 0.0], 1), Err(CoreError::EmptyStore)));
    }

    #[test]
    fn normalized_store_unit_norms_rows() {
        let mut store = EmbeddingStore::new(2, true);
        store.add("d1", &[3.0, 4.0]).unwrap();
        let v = store.vector("d1").unwrap();
        let norm: f64 = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matches_brute_force_oracle_on_random_data() {
        // 500 random docs, 20 random queries, vs an independent full sort.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = 8;
        let mut store = EmbeddingStore::new(dim, false);
        let mut raw: Vec<(String, Vec<f64>)> = Vec::new();
        for i in 0..500 {
            let id = format!("doc{i:04}");
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            store.add(&id, &v).unwrap();
            raw.push((id, v));
        }
        for _ in 0..20 {
            let q64: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q32: Vec<f32> = q64.iter().map(|&v| v as f32).collect();
            let got = store.search(&q32, 10).unwrap();

            // Oracle: score with the same f32-storage / f64-accumulation
            // convention, then a naive stable sort.
            let mut scored: Vec<(String, f64)> = raw
                .iter()
                .map(|(id, v)| {
                    let s: f64 = v
                        .iter()
                        .zip(&q32)
                        .map(|(&a, &b)| (a as f32) as f64 * b as f64)
                        .sum();
                    (id.clone(), s)
                })
                .collect();
            scored.sort_by(|a, b| {
                b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0))
            });
            scored.truncate(10);
            assert_eq!(got.hits, scored);
        }
    }

    #[test]
    fn search_scores_equal_recomputed_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = EmbeddingStore::new(4, false);
        for i in 0..50 {
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            store.add(&format!("d{i}"), &v).unwrap();
        }
        let q: Vec<f32> = vec![0.3, -0.7, 0.1, 0.9];
        let result = store.search(&q, 50).unwrap();
        for (id, score) in &result.hits {
            let v = store.vector(id).unwrap();
            let recomputed: f64 = v.iter().zip(&q).map(|(&a, &b)| a as f64 * b as f64).sum();
            assert!((score - recomputed).abs() < 1e-6);
        }
    }

    #[test]
    fn full_size_search_is_a_total_order() {
        let mut store = EmbeddingStore::new(2, false);
        for (i, v) in [[0.2, 0.1], [0.9, -0.5], [0.3, 0.3]].iter().enumerate() {
            store.add(&format!("d{i}"), &[v[0], v[1]]).unwrap();
        }
        let all = store.search(&[0.5, 0.5], 3).unwrap();
        for w in all.hits.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
    }

    #[test]
    fn save_load_round_trip_preserves_search() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.idx");
        let mut store = EmbeddingStore::new(3, true);
        store.add("a", &[1.0, 2.0, 3.0]).unwrap();
        store.add("b", &[-1.0, 0.5, 0.0]).unwrap();
        store.save(&path).unwrap();
        let loaded = EmbeddingStore::load(&path).unwrap();
        assert_eq!(loaded, store);
        let q = [0.1f32, 0.2, 0.3];
        assert_eq!(store.search(&q, 2).unwrap(), loaded.search(&q, 2).unwrap());
    }

    #[test]
    fn large_store_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.idx");
        let p2 = dir.path().join("b.idx");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = EmbeddingStore::new(8, false);
        for i in 0..10_000 {
            let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-10.0..10.0)).collect();
            store.add(&format!("doc{i:05}"), &v).unwrap();
        }
        store.save(&p1).unwrap();
        let loaded = EmbeddingStore::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_index_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.idx");
        let mut store = EmbeddingStore::new(2, false);
        store.add("a", &[1.0, 2.0]).unwrap();
        store.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(EmbeddingStore::load(&path), Err(CoreError::CorruptFile { .. })));
    }
}
