//! Tokenizer, inverted index and Okapi-ranked retrieval with hard facet
//! filtering.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::facetgen::FacetSelection;
use crate::math;

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Document ordinal; ordinals follow ascending doc-id order.
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
}

/// Text indexed for a product: title, category and every recorded value.
pub fn product_text(p: &crate::catalog::Product) -> String {
    let mut text = String::with_capacity(p.title.len() + 32);
    text.push_str(&p.title);
    text.push(' ');
    text.push_str(&p.category);
    for v in p.attrs.values() {
        text.push(' ');
        text.push_str(v);
    }
    text
}

pub fn build_index(catalog: &Catalog) -> InvertedIndex {
    InvertedIndex::from_documents(catalog.products().iter().map(|p| (p.id.clone(), product_text(p))))
}

impl InvertedIndex {
    /// Indexes `(doc_id, text)` pairs; ordinals are assigned in doc-id order.
    pub fn from_documents<I: IntoIterator<Item = (String, String)>>(docs: I) -> Self {
        let mut docs: Vec<(String, String)> = docs.into_iter().collect();
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut doc_ids = Vec::with_capacity(docs.len());
        for (ord, (id, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(&text);
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting { doc: ord as u32, tf });
            }
            doc_ids.push(id);
        }
        Self::from_parts(doc_ids, postings, doc_lengths)
    }

    /// Reassembles an index from its stored parts (used by deserializers).
    pub fn from_parts(doc_ids: Vec<String>, postings: BTreeMap<String, Vec<Posting>>, doc_lengths: Vec<u32>) -> Self {
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / doc_lengths.len() as f64
        };
        Self { doc_ids, postings, doc_lengths, avg_doc_length }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_id(&self, ordinal: u32) -> &str {
        &self.doc_ids[ordinal as usize]
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn postings(&self) -> &BTreeMap<String, Vec<Posting>> {
        &self.postings
    }

    pub fn term_postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.term_postings(term).len()
    }

    /// Okapi idf with +1 smoothing; never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        math::ln((n - df + 0.5) / (df + 0.5) + 1.0)
    }

    /// Scores every document matching at least one distinct query term and
    /// returns `(ordinal, score)` sorted by score descending then ordinal.
    pub fn score_all(&self, query: &str) -> Vec<(u32, f64)> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        if terms.is_empty() || self.doc_ids.is_empty() {
            return Vec::new();
        }
        let mut acc = vec![0.0f64; self.doc_ids.len()];
        let mut touched: Vec<u32> = Vec::new();
        for term in &terms {
            let list = self.term_postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in list {
                let tf = f64::from(p.tf);
                let len = f64::from(self.doc_lengths[p.doc as usize]);
                let norm = 1.0 - B + B * len / self.avg_doc_length;
                let slot = &mut acc[p.doc as usize];
                if *slot == 0.0 {
                    touched.push(p.doc);
                }
                *slot += idf * tf * (K1 + 1.0) / (tf + K1 * norm);
            }
        }
        let mut out: Vec<(u32, f64)> = touched.into_iter().map(|d| (d, acc[d as usize])).collect();
        out.sort_by(rank_order);
        out
    }

    /// Top-`k` documents for `query`.
    pub fn search(&self, query: &str, k: usize) -> Vec<RankedResult> {
        let mut scored = self.score_all(query);
        scored.truncate(k);
        self.to_results(&scored)
    }

    pub fn to_results(&self, scored: &[(u32, f64)]) -> Vec<RankedResult> {
        scored
            .iter()
            .map(|&(d, score)| RankedResult { doc_id: self.doc_ids[d as usize].clone(), score })
            .collect()
    }

    /// Ordinals of documents containing every distinct query term, ascending.
    pub fn match_all(&self, query: &str) -> Vec<u32> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut lists: Vec<&[Posting]> = terms.iter().map(|t| self.term_postings(t)).collect();
        if lists.is_empty() {
            return Vec::new();
        }
        lists.sort_by_key(|l| l.len());
        let mut acc: Vec<u32> = lists[0].iter().map(|p| p.doc).collect();
        for list in &lists[1..] {
            acc.retain(|d| list.binary_search_by_key(d, |p| p.doc).is_ok());
        }
        acc
    }
}

fn rank_order(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Okapi search for `query`, top `k`.
pub fn search(index: &InvertedIndex, query: &str, k: usize) -> Vec<RankedResult> {
    index.search(query, k)
}

/// `search(query)` over the whole corpus restricted to products whose recorded
/// attributes contain `selection`, top `k`.
pub fn boolean_filter(
    index: &InvertedIndex,
    catalog: &Catalog,
    query: &str,
    selection: &FacetSelection,
    k: usize,
) -> Vec<RankedResult> {
    boolean_filter_all(index, catalog, query, core::slice::from_ref(selection), k)
}

/// Conjunction of several hard filters.
pub fn boolean_filter_all(
    index: &InvertedIndex,
    catalog: &Catalog,
    query: &str,
    selections: &[FacetSelection],
    k: usize,
) -> Vec<RankedResult> {
    index.to_results(&boolean_filter_scored(index, catalog, query, selections, k))
}

/// [`boolean_filter_all`] as `(ordinal, score)` pairs.
pub fn boolean_filter_scored(
    index: &InvertedIndex,
    catalog: &Catalog,
    query: &str,
    selections: &[FacetSelection],
    k: usize,
) -> Vec<(u32, f64)> {
    index
        .score_all(query)
        .into_iter()
        .filter(|&(d, _)| {
            catalog.get(index.doc_id(d)).is_some_and(|p| {
                selections.iter().all(|s| p.attrs.get(&s.name).is_some_and(|v| *v == s.value))
            })
        })
        .take(k)
        .collect()
}
