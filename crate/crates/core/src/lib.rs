//! Core of a generative faceted-search loop.
//!
//! The crate is `no_std` + `alloc`. Everything here is a pure function of its
//! inputs and a caller-supplied seed: catalog synthesis, the inverted index and
//! Okapi ranking, context assembly, the two trainable policies (facet lists and
//! query rewrites), the reward model, the supervised and group-relative
//! training stages, the click-model user simulator and the evaluation suite.
//!
//! IO, file formats, the HTTP service and the CLI live in the `facetloop`
//! companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod catalog;
pub mod context;
pub mod error;
pub mod evalsuite;
pub mod facetgen;
pub mod lexindex;
pub mod math;
pub mod pipeline;
pub mod reward;
pub mod rewrite;
pub mod rng;
pub mod trainer;
pub mod usersim;

pub use error::{Error, Result};

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

/// Shared read-only search world: catalog, knowledge graph, the index built
/// over the catalog, and each product's full attribute assignment (recorded
/// values completed from title tokens). Index ordinals equal catalog positions.
#[derive(Debug, Clone)]
pub struct SearchEnv {
    pub catalog: catalog::Catalog,
    pub kg: catalog::KnowledgeGraph,
    pub index: lexindex::InvertedIndex,
    pub effective: Vec<BTreeMap<String, String>>,
}

impl SearchEnv {
    pub fn new(catalog: catalog::Catalog, kg: catalog::KnowledgeGraph) -> Self {
        let index = lexindex::build_index(&catalog);
        Self::with_index(catalog, kg, index)
    }

    /// Uses a prebuilt index; it must have been built from `catalog`.
    pub fn with_index(catalog: catalog::Catalog, kg: catalog::KnowledgeGraph, index: lexindex::InvertedIndex) -> Self {
        let effective = catalog.effective_attributes(&kg);
        Self { catalog, kg, index, effective }
    }

    /// Value of `attr` for the product at `ordinal`, recorded or from its title.
    pub fn value_of(&self, ordinal: u32, attr: &str) -> Option<&str> {
        self.effective.get(ordinal as usize)?.get(attr).map(String::as_str)
    }
}
