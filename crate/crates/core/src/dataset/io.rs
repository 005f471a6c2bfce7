//! Corpus and prediction files.
//!
//! A corpus is a directory holding one JSON document per video
//! (`<video_id>.json`). Frames are stored as rows of color digits, masks as
//! run lengths (`null` also means empty). Predictions are JSON Lines, one
//! record per (video, query, frame).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rle::{decode_rle, encode_rle, RleMask};
use super::{AnnotatedSample, BinaryMask, Category, Frame, QueryAnnotation, QuerySpec, ShiftRecord, MAX_COLOR};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoFile {
    video_id: String,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
    frames: Vec<Vec<String>>,
    queries: Vec<QueryFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryFile {
    query_id: String,
    text: String,
    category: Category,
    masks: Vec<Option<RleMask>>,
    shifts: Vec<ShiftRecord>,
}

fn parse_error(locus: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        locus: locus.into(),
        message: message.into(),
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    line_start + column.saturating_sub(1)
}

/// Parses one video document. `source` names the input in error messages.
pub fn parse_video(text: &str, source: &str) -> Result<AnnotatedSample> {
    let file: VideoFile = serde_json::from_str(text).map_err(|e| {
        parse_error(
            format!(
                "{source} at line {}, column {} (byte offset {})",
                e.line(),
                e.column(),
                byte_offset(text, e.line(), e.column())
            ),
            e.to_string(),
        )
    })?;
    let vid = file.video_id.clone();
    if file.frames.len() != file.t {
        return Err(parse_error(
            format!("{source}: video {vid}"),
            format!("T = {} but {} frames present", file.t, file.frames.len()),
        ));
    }
    let mut frames = Vec::with_capacity(file.t);
    for (i, rows) in file.frames.iter().enumerate() {
        let locus = || format!("{source}: video {vid}, frame {}", i + 1);
        if rows.len() != file.h {
            return Err(parse_error(locus(), format!("{} rows, expected {}", rows.len(), file.h)));
        }
        let mut cells = Vec::with_capacity(file.h * file.w);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != file.w {
                return Err(parse_error(
                    locus(),
                    format!("row {r} has {} cells, expected {}", row.len(), file.w),
                ));
            }
            for ch in row.bytes() {
                match ch {
                    b'0'..=b'9' if ch - b'0' <= MAX_COLOR => cells.push(ch - b'0'),
                    _ => {
                        return Err(parse_error(
                            locus(),
                            format!("row {r} contains non-digit {:?}", ch as char),
                        ))
                    }
                }
            }
        }
        frames.push(Frame {
            height: file.h,
            width: file.w,
            cells,
        });
    }
    let mut queries = Vec::with_capacity(file.queries.len());
    for q in file.queries {
        if q.masks.len() != file.t {
            return Err(parse_error(
                format!("{source}: query {}", q.query_id),
                format!("{} masks for {} frames", q.masks.len(), file.t),
            ));
        }
        let masks = q
            .masks
            .iter()
            .enumerate()
            .map(|(i, m)| match m {
                None => Ok(BinaryMask::empty(file.h, file.w)),
                Some(rle) => decode_rle(rle, file.h, file.w).map_err(|e| {
                    parse_error(format!("{source}: query {}, frame {}", q.query_id, i + 1), e.to_string())
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        queries.push(QueryAnnotation {
            query: QuerySpec {
                query_id: q.query_id,
                text: q.text,
                category: q.category,
            },
            masks,
            shifts: q.shifts,
        });
    }
    Ok(AnnotatedSample {
        video_id: file.video_id,
        height: file.h,
        width: file.w,
        frames,
        queries,
    })
}

/// Serialises one video document.
pub fn render_video(sample: &AnnotatedSample) -> Result<String> {
    let frames = sample
        .frames
        .iter()
        .map(|f| {
            (0..f.height)
                .map(|r| {
                    f.cells[r * f.width..(r + 1) * f.width]
                        .iter()
                        .map(|c| char::from(b'0' + *c))
                        .collect()
                })
                .collect()
        })
        .collect();
    let file = VideoFile {
        video_id: sample.video_id.clone(),
        t: sample.frames.len(),
        h: sample.height,
        w: sample.width,
        frames,
        queries: sample
            .queries
            .iter()
            .map(|q| QueryFile {
                query_id: q.query.query_id.clone(),
                text: q.query.text.clone(),
                category: q.query.category,
                masks: q.masks.iter().map(|m| Some(encode_rle(m))).collect(),
                shifts: q.shifts.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_corpus(corpus: &[AnnotatedSample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for sample in corpus {
        let path = dir.join(format!("{}.json", sample.video_id));
        fs::write(&path, render_video(sample)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Loads every `*.json` document in `dir`, ordered by file name.
pub fn load_corpus(dir: &Path) -> Result<Vec<AnnotatedSample>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_video(&text, &p.display().to_string())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub video_id: String,
    pub query_id: String,
    /// 1-based frame index.
    pub frame: usize,
    pub mask: Option<RleMask>,
}

/// Predicted masks keyed by `(video_id, query_id)`, indexed by frame − 1.
pub type Predictions = BTreeMap<(String, String), Vec<Option<BinaryMask>>>;

pub fn save_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a prediction file, decoding masks against the corpus geometry.
pub fn load_predictions(path: &Path, corpus: &[AnnotatedSample]) -> Result<Predictions> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line)
            .map_err(|e| parse_error(format!("{} line {}", path.display(), n + 1), e.to_string()))?;
        records.push((format!("{} line {}", path.display(), n + 1), rec));
    }
    collect(records, corpus)
}

/// Groups in-memory records by (video, query).
pub fn collect_predictions(records: &[PredictionRecord], corpus: &[AnnotatedSample]) -> Result<Predictions> {
    collect(
        records.iter().enumerate().map(|(i, r)| (format!("record {}", i + 1), r.clone())),
        corpus,
    )
}

fn collect(
    records: impl IntoIterator<Item = (String, PredictionRecord)>,
    corpus: &[AnnotatedSample],
) -> Result<Predictions> {
    let geometry: BTreeMap<&str, (usize, usize, usize)> = corpus
        .iter()
        .map(|s| (s.video_id.as_str(), (s.height, s.width, s.frames.len())))
        .collect();
    let mut out = Predictions::new();
    for (locus, rec) in records {
        let &(h, w, t) = geometry
            .get(rec.video_id.as_str())
            .ok_or_else(|| parse_error(&locus, format!("unknown video {:?}", rec.video_id)))?;
        if rec.frame == 0 || rec.frame > t {
            return Err(parse_error(&locus, format!("frame {} outside 1..={t}", rec.frame)));
        }
        let mask = match &rec.mask {
            None => BinaryMask::empty(h, w),
            Some(rle) => decode_rle(rle, h, w).map_err(|e| parse_error(&locus, e.to_string()))?,
        };
        let slot = out
            .entry((rec.video_id.clone(), rec.query_id.clone()))
            .or_insert_with(|| vec![None; t]);
        slot[rec.frame - 1] = Some(mask);
    }
    Ok(out)
}
