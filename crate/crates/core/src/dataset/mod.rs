//! Annotated streaming videos: frames, per-frame ground truth, shift lists,
//! the synthetic generator, corpus files and statistics.

mod generator;
mod io;
mod rle;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generator::{generate_synthetic, GeneratorConfig, QueryTemplate, Scene, SceneObject, ShapeKind, Side};
pub use io::{
    collect_predictions, load_corpus, load_predictions, parse_video, render_video, save_corpus, save_predictions,
    PredictionRecord, Predictions,
};
pub use rle::{decode_rle, encode_rle, RleMask};
pub use stats::{corpus_stats, CorpusStats};

/// Largest palette index representable in the corpus format.
pub const MAX_COLOR: u8 = 9;

/// One raw frame: a grid of color indices, `0` is background.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<u8>,
}

impl Frame {
    pub fn blank(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![0; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, color: u8) {
        self.cells[row * self.width + col] = color;
    }
}

/// H × W boolean mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![false; height * width],
        }
    }

    pub fn from_cells(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::shape(format!(
                "{} cells for a {height}x{width} mask",
                cells.len()
            )));
        }
        Ok(Self {
            height,
            width,
            cells,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.cells[row * self.width + col] = v;
    }

    pub fn area(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|c| *c)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(format!(
                "masks of {}x{} and {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Attribute,
    Spatial,
    Action,
    Interaction,
    ExternalKnowledge,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Attribute,
        Category::Spatial,
        Category::Action,
        Category::Interaction,
        Category::ExternalKnowledge,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Attribute => "attribute",
            Category::Spatial => "spatial",
            Category::Action => "action",
            Category::Interaction => "interaction",
            Category::ExternalKnowledge => "external_knowledge",
        }
    }

    /// Short column heading used in reports.
    pub fn heading(&self) -> &'static str {
        match self {
            Category::Attribute => "Attr.",
            Category::Spatial => "Spatial",
            Category::Action => "Action",
            Category::Interaction => "Interact.",
            Category::ExternalKnowledge => "Ext. Know.",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown query category {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QuerySpec {
    pub query_id: String,
    pub text: String,
    pub category: Category,
}

/// Interval (1-based, inclusive) during which `object_id` is the referent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub object_id: u32,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl ShiftRecord {
    pub fn contains(&self, frame: usize) -> bool {
        (self.start_frame..=self.end_frame).contains(&frame)
    }
}

/// Collapses per-frame referents (`None` = no target) into maximal runs.
pub fn shifts_from_referents(referents: &[Option<u32>]) -> Vec<ShiftRecord> {
    let mut out: Vec<ShiftRecord> = Vec::new();
    for (i, r) in referents.iter().enumerate() {
        let frame = i + 1;
        let Some(id) = *r else { continue };
        match out.last_mut() {
            Some(last) if last.object_id == id && last.end_frame + 1 == frame => {
                last.end_frame = frame;
            }
            _ => out.push(ShiftRecord {
                object_id: id,
                start_frame: frame,
                end_frame: frame,
            }),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryAnnotation {
    pub query: QuerySpec,
    /// One mask per frame; empty masks mark frames without a referent.
    pub masks: Vec<BinaryMask>,
    pub shifts: Vec<ShiftRecord>,
}

impl QueryAnnotation {
    /// True when some object holds the referent role in two or more
    /// separate intervals.
    pub fn is_discontinuous(&self) -> bool {
        let mut ids: Vec<u32> = self.shifts.iter().map(|s| s.object_id).collect();
        ids.sort_unstable();
        ids.windows(2).any(|w| w[0] == w[1])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedSample {
    pub video_id: String,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Frame>,
    pub queries: Vec<QueryAnnotation>,
}

impl AnnotatedSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks every structural invariant; returns one message per violation.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let t_len = self.frames.len();
        if t_len == 0 {
            v.push(format!("{}: video has no frames", self.video_id));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if (f.height, f.width) != (self.height, self.width) || f.cells.len() != self.height * self.width {
                v.push(format!("{}: frame {} has wrong geometry", self.video_id, i + 1));
            }
            if f.cells.iter().any(|c| *c > MAX_COLOR) {
                v.push(format!("{}: frame {} has an out-of-range color", self.video_id, i + 1));
            }
        }
        for q in &self.queries {
            let id = &q.query.query_id;
            if q.masks.len() != t_len {
                v.push(format!("{id}: {} masks for {t_len} frames", q.masks.len()));
                continue;
            }
            for (i, s) in q.shifts.iter().enumerate() {
                if !(1 <= s.start_frame && s.start_frame <= s.end_frame && s.end_frame <= t_len) {
                    v.push(format!("{id}: shift {i} has bad bounds {s:?}"));
                }
            }
            let mut sorted = q.shifts.clone();
            sorted.sort_by_key(|s| s.start_frame);
            if sorted.windows(2).any(|w| w[1].start_frame <= w[0].end_frame) {
                v.push(format!("{id}: overlapping shift intervals"));
            }
            for (i, m) in q.masks.iter().enumerate() {
                let frame = i + 1;
                if (m.height, m.width) != (self.height, self.width) {
                    v.push(format!("{id}: mask {frame} has wrong geometry"));
                    continue;
                }
                let inside = q.shifts.iter().any(|s| s.contains(frame));
                if inside && m.is_empty() {
                    v.push(format!("{id}: frame {frame} lies in a shift interval but its mask is empty"));
                }
                if !inside && !m.is_empty() {
                    v.push(format!("{id}: frame {frame} lies outside every shift interval but its mask is not empty"));
                }
                if let Some(f) = self.frames.get(i) {
                    let colors: Vec<u8> = m
                        .cells
                        .iter()
                        .zip(&f.cells)
                        .filter(|(on, _)| **on)
                        .map(|(_, c)| *c)
                        .collect();
                    if colors.iter().any(|c| *c == 0) {
                        v.push(format!("{id}: mask {frame} covers background cells"));
                    }
                    if colors.windows(2).any(|w| w[0] != w[1]) {
                        v.push(format!("{id}: mask {frame} spans more than one object color"));
                    }
                }
            }
        }
        v
    }
}

/// Runs the invariant checks across a corpus.
pub fn validate_corpus(corpus: &[AnnotatedSample]) -> Vec<String> {
    corpus.iter().flat_map(|s| s.violations()).collect()
}
