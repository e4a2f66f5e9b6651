//! Embedding stores: validated `f32` vectors with row-aligned attribute labels.
//!
//! The store is the only boundary between external encoders and the rest of
//! the toolkit. It is immutable once built; every consumer reads it through a
//! [`StoreView`] (a row subset) or another [`VectorSource`].

pub mod femb;
mod split;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use split::{split, Split, SplitSide, SplitSpec};

pub const EMBEDDINGS_FILE: &str = "embeddings.femb";
pub const META_FILE: &str = "meta.jsonl";

/// Per-row attribute label. Stored as `{-1, +1}` so losses can consume it directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
    Unlabeled,
}

impl Label {
    pub fn from_sign(sign: i64) -> Option<Label> {
        match sign {
            1 => Some(Label::Positive),
            -1 => Some(Label::Negative),
            _ => None,
        }
    }

    /// `+1.0` / `-1.0`, or `None` when unlabeled.
    pub fn value(self) -> Option<f64> {
        match self {
            Label::Positive => Some(1.0),
            Label::Negative => Some(-1.0),
            Label::Unlabeled => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
            Label::Unlabeled => Label::Unlabeled,
        }
    }
}

/// Read-only access to a sequence of vectors with attribute labels.
///
/// Vectors are handed out in 64-bit precision regardless of storage.
pub trait VectorSource: Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn vector(&self, i: usize) -> Vec<f64>;
    /// Labels for every row of this source, in source order.
    fn labels(&self, attribute: &str) -> Result<Vec<Label>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tag recorded on similarity sets computed over this source.
    fn source_tag(&self) -> SourceTag {
        SourceTag::Vanilla
    }

    fn vectors(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.vector(i)).collect()
    }
}

/// Where a set of vectors came from: raw store, an RRM, or a baseline transform.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Vanilla,
    Rrm(String),
    Baseline(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: Vec<f32>,
    ids: Vec<String>,
    attrs: BTreeMap<String, Vec<Label>>,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    row: u64,
    id: String,
    #[serde(default)]
    attrs: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize)]
struct MetaLineOut<'a> {
    row: u64,
    id: &'a str,
    attrs: BTreeMap<&'a str, i64>,
}

impl EmbeddingStore {
    /// Builds a store, enforcing every invariant: finite nonzero rows, unique
    /// ids, label arrays of the right length.
    pub fn new(
        dim: usize,
        vectors: Vec<f32>,
        ids: Vec<String>,
        attrs: BTreeMap<String, Vec<Label>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimZero);
        }
        if !vectors.len().is_multiple_of(dim) {
            return Err(Error::RowCountMismatch {
                declared: ids.len() as u64,
                dim: dim as u32,
                body_bytes: vectors.len() * 4,
            });
        }
        let count = vectors.len() / dim;
        if ids.len() != count {
            return Err(Error::RowCountMismatch {
                declared: ids.len() as u64,
                dim: dim as u32,
                body_bytes: vectors.len() * 4,
            });
        }
        for (row, v) in vectors.chunks_exact(dim).enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteVector { row });
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::ZeroVector);
            }
        }
        let mut seen = HashSet::with_capacity(count);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for (name, labels) in &attrs {
            if labels.len() != count {
                return Err(Error::BadMetadata {
                    line: 0,
                    message: format!("attribute {name:?} has {} labels for {count} rows", labels.len()),
                });
            }
        }
        Ok(Self { dim, vectors, ids, attrs })
    }

    /// Convenience constructor from 64-bit rows (narrowed to `f32`).
    pub fn from_rows(
        rows: &[Vec<f64>],
        ids: Vec<String>,
        attrs: BTreeMap<String, Vec<Label>>,
    ) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyStore)?;
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimMismatch { expected: dim, got: r.len() });
            }
            flat.extend(r.iter().map(|&x| x as f32));
        }
        Self::new(dim, flat, ids, attrs)
    }

    /// Reads a FEMB file plus its JSONL metadata.
    pub fn ingest(embeddings: &Path, meta: &Path) -> Result<Self> {
        let bytes = fs::read(embeddings)?;
        let text = fs::read_to_string(meta)?;
        Self::from_parts(&bytes, &text)
    }

    pub fn from_parts(femb_bytes: &[u8], meta_jsonl: &str) -> Result<Self> {
        let (dim, vectors) = femb::decode_femb(femb_bytes)?;
        let dim = dim as usize;
        let count = vectors.len() / dim;
        for (row, v) in vectors.chunks_exact(dim).enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteVector { row });
            }
        }

        let mut ids: Vec<Option<String>> = vec![None; count];
        let mut attrs: BTreeMap<String, Vec<Label>> = BTreeMap::new();
        for (lineno, line) in meta_jsonl.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: MetaLine = serde_json::from_str(line)
                .map_err(|e| Error::BadMetadata { line: lineno + 1, message: e.to_string() })?;
            let row = usize::try_from(parsed.row)
                .ok()
                .filter(|&r| r < count)
                .ok_or(Error::RowOutOfRange { row: parsed.row, count })?;
            if ids[row].is_some() {
                return Err(Error::BadMetadata {
                    line: lineno + 1,
                    message: format!("row {row} described twice"),
                });
            }
            ids[row] = Some(parsed.id);
            for (name, value) in parsed.attrs {
                let label = value.as_i64().and_then(Label::from_sign).ok_or_else(|| {
                    Error::BadLabelValue { row, attribute: name.clone(), value: value.to_string() }
                })?;
                attrs.entry(name).or_insert_with(|| vec![Label::Unlabeled; count])[row] = label;
            }
        }
        let ids = ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| id.unwrap_or_else(|| i.to_string()))
            .collect();
        Self::new(dim, vectors, ids, attrs)
    }

    /// FEMB bytes and JSONL text; the exact inverse of [`EmbeddingStore::from_parts`].
    pub fn to_parts(&self) -> (Vec<u8>, String) {
        let bytes = femb::encode_femb(self.dim as u32, &self.vectors);
        let mut meta = String::new();
        for (row, id) in self.ids.iter().enumerate() {
            let attrs = self
                .attrs
                .iter()
                .filter_map(|(name, labels)| {
                    labels[row].value().map(|v| (name.as_str(), v as i64))
                })
                .collect();
            let line = MetaLineOut { row: row as u64, id, attrs };
            meta.push_str(&serde_json::to_string(&line).expect("metadata serializes"));
            meta.push('\n');
        }
        (bytes, meta)
    }

    /// Loads a store directory written by [`EmbeddingStore::to_parts`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::ingest(&dir.join(EMBEDDINGS_FILE), &dir.join(META_FILE))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| x as f64).collect()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.attrs.keys().map(String::as_str)
    }

    pub fn attribute(&self, name: &str) -> Result<&[Label]> {
        self.attrs
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// View over every row.
    pub fn view(&self) -> StoreView<'_> {
        StoreView { store: self, rows: (0..self.len()).collect::<Vec<_>>().into() }
    }
}

/// A read-only subset of a store's rows, in a fixed order.
#[derive(Clone, Debug)]
pub struct StoreView<'a> {
    store: &'a EmbeddingStore,
    rows: Arc<[usize]>,
}

impl<'a> StoreView<'a> {
    pub fn from_rows(store: &'a EmbeddingStore, rows: Vec<usize>) -> Self {
        debug_assert!(rows.iter().all(|&r| r < store.len()));
        Self { store, rows: rows.into() }
    }

    pub fn store(&self) -> &'a EmbeddingStore {
        self.store
    }

    /// Store row indices backing this view.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn id(&self, i: usize) -> &'a str {
        self.store.id(self.rows[i])
    }

    pub fn raw(&self, i: usize) -> &'a [f32] {
        self.store.row(self.rows[i])
    }

    /// Rows whose label for `attribute` is exactly `label`. Unlabeled rows never match
    /// a polar label.
    pub fn subset_by_attr(&self, attribute: &str, label: Label) -> Result<StoreView<'a>> {
        let labels = self.store.attribute(attribute)?;
        let rows: Vec<usize> = self.rows.iter().copied().filter(|&r| labels[r] == label).collect();
        Ok(StoreView { store: self.store, rows: rows.into() })
    }

    /// Rows carrying a label (either polarity) for `attribute`.
    pub fn labeled(&self, attribute: &str) -> Result<StoreView<'a>> {
        let labels = self.store.attribute(attribute)?;
        let rows: Vec<usize> =
            self.rows.iter().copied().filter(|&r| labels[r].is_labeled()).collect();
        Ok(StoreView { store: self.store, rows: rows.into() })
    }
}

impl VectorSource for StoreView<'_> {
    fn dim(&self) -> usize {
        self.store.dim
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn vector(&self, i: usize) -> Vec<f64> {
        self.store.row_f64(self.rows[i])
    }

    fn labels(&self, attribute: &str) -> Result<Vec<Label>> {
        let labels = self.store.attribute(attribute)?;
        Ok(self.rows.iter().map(|&r| labels[r]).collect())
    }
}

/// Owned 64-bit rows with labels; the materialized form of any transformed source.
#[derive(Clone, Debug, Default)]
pub struct DenseSource {
    dim: usize,
    rows: Vec<Vec<f64>>,
    attrs: BTreeMap<String, Vec<Label>>,
    tag: Option<SourceTag>,
}

impl DenseSource {
    pub fn new(rows: Vec<Vec<f64>>, attrs: BTreeMap<String, Vec<Label>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimMismatch { expected: dim, got: bad.len() });
        }
        for (name, labels) in &attrs {
            if labels.len() != rows.len() {
                return Err(Error::BadMetadata {
                    line: 0,
                    message: format!("attribute {name:?}: {} labels for {} rows", labels.len(), rows.len()),
                });
            }
        }
        Ok(Self { dim, rows, attrs, tag: None })
    }

    /// Copies any source, keeping the listed attributes.
    pub fn materialize<S: VectorSource + ?Sized>(source: &S, attributes: &[&str]) -> Result<Self> {
        let mut attrs = BTreeMap::new();
        for &a in attributes {
            attrs.insert(a.to_string(), source.labels(a)?);
        }
        let mut out = Self::new(source.vectors(), attrs)?;
        out.dim = source.dim();
        out.tag = Some(source.source_tag());
        Ok(out)
    }

    pub fn with_tag(mut self, tag: SourceTag) -> Self {
        self.tag = Some(tag);
        self
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

impl VectorSource for DenseSource {
    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn vector(&self, i: usize) -> Vec<f64> {
        self.rows[i].clone()
    }

    fn labels(&self, attribute: &str) -> Result<Vec<Label>> {
        self.attrs
            .get(attribute)
            .cloned()
            .ok_or_else(|| Error::UnknownAttribute(attribute.to_string()))
    }

    fn source_tag(&self) -> SourceTag {
        self.tag.clone().unwrap_or(SourceTag::Vanilla)
    }

    fn vectors(&self) -> Vec<Vec<f64>> {
        self.rows.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_parts() -> (Vec<u8>, String) {
        let vectors: Vec<f32> = (0..12).map(|i| 1.0 + i as f32).collect();
        let bytes = femb::encode_femb(4, &vectors);
        let meta = [
            r#"{"row":0,"id":"a","attrs":{"gender":1}}"#,
            r#"{"row":1,"id":"b","attrs":{"gender":-1,"hat":1}}"#,
            r#"{"row":2,"id":"c","attrs":{}}"#,
        ]
        .join("\n");
        (bytes, meta)
    }

    #[test]
    fn ingest_minimal() {
        let (bytes, meta) = tiny_parts();
        let store = EmbeddingStore::from_parts(&bytes, &meta).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.dim(), 4);
        assert_eq!(
            store.attribute("gender").unwrap(),
            &[Label::Positive, Label::Negative, Label::Unlabeled]
        );
        assert_eq!(store.attribute("hat").unwrap()[0], Label::Unlabeled);
    }

    #[test]
    fn unreferenced_rows_get_default_ids() {
        let (bytes, _) = tiny_parts();
        let store = EmbeddingStore::from_parts(&bytes, r#"{"row":1,"id":"x","attrs":{"g":1}}"#).unwrap();
        assert_eq!(store.ids(), &["0", "x", "2"]);
        assert_eq!(store.attribute("g").unwrap(), &[Label::Unlabeled, Label::Positive, Label::Unlabeled]);
    }

    #[test]
    fn rejects_bad_labels() {
        let (bytes, _) = tiny_parts();
        for bad in ["0", "2", "1.0", "\"1\"", "null"] {
            let meta = format!(r#"{{"row":0,"id":"a","attrs":{{"gender":{bad}}}}}"#);
            assert!(
                matches!(EmbeddingStore::from_parts(&bytes, &meta), Err(Error::BadLabelValue { .. })),
                "label {bad} accepted"
            );
        }
    }

    #[test]
    fn rejects_duplicates_and_out_of_range() {
        let (bytes, _) = tiny_parts();
        let dup = "{\"row\":0,\"id\":\"a\"}\n{\"row\":1,\"id\":\"a\"}";
        assert!(matches!(EmbeddingStore::from_parts(&bytes, dup), Err(Error::DuplicateId(_))));
        let oob = r#"{"row":3,"id":"z"}"#;
        assert!(matches!(EmbeddingStore::from_parts(&bytes, oob), Err(Error::RowOutOfRange { row: 3, .. })));
        let twice = "{\"row\":0,\"id\":\"a\"}\n{\"row\":0,\"id\":\"b\"}";
        assert!(matches!(EmbeddingStore::from_parts(&bytes, twice), Err(Error::BadMetadata { .. })));
    }

    #[test]
    fn rejects_non_finite_and_zero_rows() {
        let mut v = vec![1.0f32; 8];
        v[5] = f32::NAN;
        let bytes = femb::encode_femb(4, &v);
        assert!(matches!(EmbeddingStore::from_parts(&bytes, ""), Err(Error::NonFiniteVector { row: 1 })));
        v[5] = f32::INFINITY;
        let bytes = femb::encode_femb(4, &v);
        assert!(matches!(EmbeddingStore::from_parts(&bytes, ""), Err(Error::NonFiniteVector { row: 1 })));
        let bytes = femb::encode_femb(4, &[0.0; 4]);
        assert!(matches!(EmbeddingStore::from_parts(&bytes, ""), Err(Error::ZeroVector)));
    }

    #[test]
    fn export_is_inverse_of_ingest() {
        let (bytes, meta) = tiny_parts();
        let store = EmbeddingStore::from_parts(&bytes, &meta).unwrap();
        let (b2, m2) = store.to_parts();
        assert_eq!(b2, bytes);
        let again = EmbeddingStore::from_parts(&b2, &m2).unwrap();
        assert_eq!(again, store);
        assert_eq!(again.to_parts(), (b2, m2));
    }

    #[test]
    fn subset_views() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64]).collect();
        let ids = (0..6).map(|i| format!("r{i}")).collect();
        let mut attrs = BTreeMap::new();
        use Label::*;
        attrs.insert("gender".to_string(), vec![Positive, Negative, Positive, Unlabeled, Positive, Negative]);
        attrs.insert("none".to_string(), vec![Negative; 6]);
        let store = EmbeddingStore::from_rows(&rows, ids, attrs).unwrap();
        let all = store.view();
        let pos = all.subset_by_attr("gender", Positive).unwrap();
        assert_eq!(pos.rows(), &[0, 2, 4]);
        let neg = all.subset_by_attr("gender", Negative).unwrap();
        let unl = all.subset_by_attr("gender", Unlabeled).unwrap();
        let mut union: Vec<usize> =
            pos.rows().iter().chain(neg.rows()).chain(unl.rows()).copied().collect();
        union.sort_unstable();
        assert_eq!(union, (0..6).collect::<Vec<_>>());
        assert!(all.subset_by_attr("none", Positive).unwrap().is_empty());
        assert!(matches!(all.subset_by_attr("age", Positive), Err(Error::UnknownAttribute(_))));
        // views compose
        let pos_of_first_three = StoreView::from_rows(&store, vec![0, 1, 2]).subset_by_attr("gender", Positive).unwrap();
        assert_eq!(pos_of_first_three.rows(), &[0, 2]);
        assert_eq!(pos.vector(1), vec![1.0, 2.0]);
    }
}
