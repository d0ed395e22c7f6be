//! Offline fused-embedding index, exact k-NN search and recall harnesses.
//!
//! The index holds one unit vector per listing, computed ahead of time from
//! all of the listing's views. Searching needs only the query embedding, so
//! the item side adds no per-query encoder work.
//!
//! File layout (`FTAI`, little-endian): magic, u32 version = 1, u32 dim,
//! u64 count, then per record a u16 id length, the UTF-8 id, and `dim` f32
//! vector components.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{Interaction, Listing};
use crate::encoder::{read_exact, Encoder, EncoderPair};
use crate::error::{Error, Result};
use crate::fusion::{design_weights, fuse, fuse_multimodal, Embedding, Modality, ViewSet, WeightScheme};

pub const INDEX_MAGIC: &[u8; 4] = b"FTAI";
pub const INDEX_VERSION: u32 = 1;
/// Allowed deviation of stored vectors from unit norm.
pub const UNIT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexModality {
    Multimodal,
    TextOnly,
    ImageOnly,
}

/// Which views of each modality go into an indexed vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexViews {
    /// All views, fused with `design_weights`.
    Multiview,
    /// Primary views only.
    Singleview,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    pub vector: Vec<f32>,
    /// Category label; not persisted in the index file.
    pub category: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    positions: HashMap<String, usize>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new(), positions: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.positions.get(id).map(|&k| &self.entries[k])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    /// Appends a vector; rejects wrong dimension, non-unit norm and duplicate ids.
    pub fn push(&mut self, id: impl Into<String>, vector: Vec<f32>, category: Option<String>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: vector.len() });
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::Format(format!("listing id of {} bytes does not fit the index format", id.len())));
        }
        let norm = vector.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::NonUnitVector { id, norm });
        }
        if self.positions.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.positions.insert(id.clone(), self.entries.len());
        self.entries.push(IndexEntry { id, vector, category });
        Ok(())
    }

    /// Sets each entry's category from the catalog listing with the same id.
    pub fn attach_categories(&mut self, catalog: &[Listing]) {
        let by_id: HashMap<&str, &str> = catalog.iter().map(|l| (l.id.as_str(), l.category.as_str())).collect();
        for e in &mut self.entries {
            e.category = by_id.get(e.id.as_str()).map(|c| c.to_string());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.entries.len() * (2 + 8 + 4 * self.dim));
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write<W: Write>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(INDEX_MAGIC)?;
        out.write_all(&INDEX_VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            out.write_all(&(e.id.len() as u16).to_le_bytes())?;
            out.write_all(e.id.as_bytes())?;
            for x in &e.vector {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let index = Self::read(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after index", cursor.len())));
        }
        Ok(index)
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(input, &mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::Format(format!("bad index magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        read_exact(input, &mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != INDEX_VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        read_exact(input, &mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        read_exact(input, &mut b8)?;
        let count = u64::from_le_bytes(b8);

        let mut index = Self::new(dim);
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            read_exact(input, &mut b2)?;
            let mut id = vec![0u8; u16::from_le_bytes(b2) as usize];
            read_exact(input, &mut id)?;
            let id = String::from_utf8(id).map_err(|e| Error::Format(format!("listing id is not UTF-8: {e}")))?;
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                read_exact(input, &mut b4)?;
                vector.push(f32::from_le_bytes(b4));
            }
            index.push(id, vector, None).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(index)
    }
}

pub fn save_index(index: &EmbeddingIndex, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, index.to_bytes())?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<EmbeddingIndex> {
    EmbeddingIndex::from_bytes(&fs::read(path)?)
}

fn encode_set(encoder: &Encoder<f64>, views: &[Vec<f64>], modality: Modality) -> Result<ViewSet<f64>> {
    ViewSet::new(views.iter().map(|v| encoder.encode(v)).collect::<Result<Vec<_>>>()?, modality)
}

/// Fused, renormalized embedding of one modality of a listing.
pub fn fused_modality(
    encoder: &Encoder<f64>,
    views: &[Vec<f64>],
    modality: Modality,
    scheme: WeightScheme<f64>,
    policy: IndexViews,
) -> Result<Embedding<f64>> {
    let used = match policy {
        IndexViews::Multiview => views,
        IndexViews::Singleview => &views[..1.min(views.len())],
    };
    let set = encode_set(encoder, used, modality)?;
    fuse(&set, &design_weights(set.len(), scheme)?, true)
}

/// Indexed vector of one listing.
pub fn listing_embedding(
    listing: &Listing,
    encoders: &EncoderPair<f64>,
    scheme: WeightScheme<f64>,
    modality: IndexModality,
    policy: IndexViews,
) -> Result<Embedding<f64>> {
    let text = || fused_modality(&encoders.text, &listing.text_views, Modality::Text, scheme, policy);
    let image = || fused_modality(&encoders.image, &listing.image_views, Modality::Image, scheme, policy);
    match modality {
        IndexModality::TextOnly => text(),
        IndexModality::ImageOnly => image(),
        IndexModality::Multimodal => fuse_multimodal(&text()?, &image()?, true),
    }
}

/// Builds one vector per listing, in catalog order.
pub fn build_index(
    catalog: &[Listing],
    encoders: &EncoderPair<f64>,
    scheme: WeightScheme<f64>,
    modality: IndexModality,
    policy: IndexViews,
) -> Result<EmbeddingIndex> {
    if catalog.is_empty() {
        return Err(Error::Empty);
    }
    let vectors = catalog
        .par_iter()
        .map(|l| listing_embedding(l, encoders, scheme, modality, policy))
        .collect::<Result<Vec<_>>>()?;
    let dim = vectors[0].dim();
    let mut index = EmbeddingIndex::new(dim);
    for (listing, v) in catalog.iter().zip(vectors) {
        let vector = v.as_slice().iter().map(|&x| x as f32).collect();
        index.push(listing.id.clone(), vector, Some(listing.category.clone()))?;
    }
    Ok(index)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Exact top-`k` by dot product, best first; ties go to the smaller id.
pub fn knn(index: &EmbeddingIndex, query: &Embedding<f64>, k: usize) -> Result<Vec<Hit>> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if query.dim() != index.dim() {
        return Err(Error::DimensionMismatch { expected: index.dim(), found: query.dim() });
    }
    if k == 0 {
        return Err(Error::ConfigInvalid("k must be at least 1".into()));
    }
    let q = query.as_slice();
    let mut scored: Vec<(f64, usize)> = index
        .entries
        .iter()
        .enumerate()
        .map(|(pos, e)| (e.vector.iter().zip(q).map(|(&v, &x)| f64::from(v) * x).sum(), pos))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        b.0.total_cmp(&a.0).then_with(|| index.entries[a.1].id.cmp(&index.entries[b.1].id))
    };
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    Ok(scored.into_iter().map(|(score, pos)| Hit { id: index.entries[pos].id.clone(), score }).collect())
}

/// Sorts `hits` best first with the same tie rule as [`knn`].
pub fn sort_hits(hits: &mut [Hit]) {
    hits.sort_by(rank_order);
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecall {
    pub queries: usize,
    pub recall: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub queries: usize,
    pub index_size: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_category: BTreeMap<String, CategoryRecall>,
}

impl EvalReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.recall[p])
    }
}

fn check_ks(ks: &[usize]) -> Result<usize> {
    if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::ConfigInvalid(format!("ks must be positive and strictly ascending, got {ks:?}")));
    }
    Ok(ks[ks.len() - 1])
}

/// 1-based rank of `target` among the top `k` results for `query`, if present.
pub fn rank_of(index: &EmbeddingIndex, query: &Embedding<f64>, target: &str, k: usize) -> Result<Option<usize>> {
    Ok(knn(index, query, k)?.iter().position(|h| h.id == target).map(|p| p + 1))
}

/// Recall at each cutoff for queries already embedded.
pub fn recall_from_embeddings(index: &EmbeddingIndex, queries: &[(Embedding<f64>, String)], ks: &[usize]) -> Result<EvalReport> {
    let max_k = check_ks(ks)?;
    for (_, id) in queries {
        if !index.contains(id) {
            return Err(Error::UnknownListing(id.clone()));
        }
    }
    let ranks = queries
        .par_iter()
        .map(|(q, id)| rank_of(index, q, id, max_k))
        .collect::<Result<Vec<_>>>()?;

    let hits_within = |rs: &[Option<usize>]| -> Vec<f64> {
        ks.iter()
            .map(|&k| {
                let n = rs.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
                if rs.is_empty() { 0.0 } else { n as f64 / rs.len() as f64 }
            })
            .collect()
    };

    let mut by_category: BTreeMap<String, Vec<Option<usize>>> = BTreeMap::new();
    for ((_, id), r) in queries.iter().zip(&ranks) {
        if let Some(cat) = index.get(id).and_then(|e| e.category.clone()) {
            by_category.entry(cat).or_default().push(*r);
        }
    }
    let per_category = by_category
        .into_iter()
        .map(|(cat, rs)| (cat, CategoryRecall { queries: rs.len(), recall: hits_within(&rs) }))
        .collect();

    Ok(EvalReport { ks: ks.to_vec(), recall: hits_within(&ranks), queries: queries.len(), index_size: index.len(), per_category })
}

/// Query-to-item recall: each query is encoded with the text encoder and
/// searched against the index.
pub fn recall_at_k(index: &EmbeddingIndex, text_encoder: &Encoder<f64>, interactions: &[Interaction], ks: &[usize]) -> Result<EvalReport> {
    check_ks(ks)?;
    if let Some(missing) = interactions.iter().find(|i| !index.contains(&i.clicked_id)) {
        return Err(Error::UnknownListing(missing.clicked_id.clone()));
    }
    let queries = interactions
        .iter()
        .map(|i| Ok((text_encoder.encode(&i.query_features)?, i.clicked_id.clone())))
        .collect::<Result<Vec<_>>>()?;
    recall_from_embeddings(index, &queries, ks)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewRole {
    Title,
    PrimaryImage,
    /// The first auxiliary image.
    NonprimaryImage,
    /// The first auxiliary text view.
    PseudoQuery,
}

impl ViewRole {
    pub fn name(self) -> &'static str {
        match self {
            ViewRole::Title => "title",
            ViewRole::PrimaryImage => "primary_image",
            ViewRole::NonprimaryImage => "nonprimary_image",
            ViewRole::PseudoQuery => "pseudo_query",
        }
    }

    pub fn embed(self, listing: &Listing, encoders: &EncoderPair<f64>) -> Result<Embedding<f64>> {
        let (encoder, views, slot) = match self {
            ViewRole::Title => (&encoders.text, &listing.text_views, 0),
            ViewRole::PseudoQuery => (&encoders.text, &listing.text_views, 1),
            ViewRole::PrimaryImage => (&encoders.image, &listing.image_views, 0),
            ViewRole::NonprimaryImage => (&encoders.image, &listing.image_views, 1),
        };
        let raw = views.get(slot).ok_or_else(|| Error::MissingView { listing: listing.id.clone(), view: self.name() })?;
        encoder.encode(raw)
    }
}

/// Recall@k of retrieving each listing's `target` view with its `source` view.
pub fn cross_view_eval(catalog: &[Listing], encoders: &EncoderPair<f64>, source: ViewRole, target: ViewRole, k: usize) -> Result<f64> {
    let first = catalog.first().ok_or(Error::Empty)?;
    let dim = target.embed(first, encoders)?.dim();
    let mut index = EmbeddingIndex::new(dim);
    let mut queries = Vec::with_capacity(catalog.len());
    for listing in catalog {
        let t = target.embed(listing, encoders)?;
        index.push(listing.id.clone(), t.as_slice().iter().map(|&x| x as f32).collect(), None)?;
        queries.push((source.embed(listing, encoders)?, listing.id.clone()));
    }
    Ok(recall_from_embeddings(&index, &queries, &[k])?.recall[0])
}
