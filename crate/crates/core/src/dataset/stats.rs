use std::collections::BTreeMap;

use serde::Serialize;

use super::{AnnotatedSample, Category};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub videos: usize,
    pub queries: usize,
    pub frames: usize,
    pub mean_video_len: f64,
    pub mean_shifts_per_query: f64,
    /// Fraction of queries whose referent returns after an interruption.
    pub discontinuous_fraction: f64,
    pub queries_per_category: BTreeMap<Category, usize>,
}

pub fn corpus_stats(corpus: &[AnnotatedSample]) -> Result<CorpusStats> {
    let queries: Vec<_> = corpus.iter().flat_map(|s| &s.queries).collect();
    if corpus.is_empty() || queries.is_empty() {
        return Err(Error::invalid("statistics need at least one video with one query"));
    }
    let frames: usize = corpus.iter().map(|s| s.frames.len()).sum();
    let shifts: usize = queries.iter().map(|q| q.shifts.len()).sum();
    let disc = queries.iter().filter(|q| q.is_discontinuous()).count();
    let mut per_cat = BTreeMap::new();
    for q in &queries {
        *per_cat.entry(q.query.category).or_insert(0) += 1;
    }
    Ok(CorpusStats {
        videos: corpus.len(),
        queries: queries.len(),
        frames,
        mean_video_len: frames as f64 / corpus.len() as f64,
        mean_shifts_per_query: shifts as f64 / queries.len() as f64,
        discontinuous_fraction: disc as f64 / queries.len() as f64,
        queries_per_category: per_cat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(corpus_stats(&[]).is_err());
    }
}
