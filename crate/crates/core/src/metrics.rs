//! Region similarity J, boundary accuracy F and their aggregation.
//!
//! Empty masks are first-class: two empty masks agree perfectly and a mask
//! predicted where none is expected (or the reverse) scores zero, so a
//! model that waits for the referent to appear is rewarded.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::{AnnotatedSample, BinaryMask, Category, Predictions};
use crate::error::{Error, Result};

/// Intersection over union, with both-empty = 1 and one-empty = 0.
pub fn region_similarity(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.same_shape(gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.cells.iter().zip(&gt.cells) {
        inter += (*p && *g) as usize;
        union += (*p || *g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mask cells with at least one 4-neighbour outside the mask; the frame
/// border counts as outside.
pub fn boundary_cells(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height, mask.width);
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || !mask.get(r - 1, c)
                || !mask.get(r + 1, c)
                || !mask.get(r, c - 1)
                || !mask.get(r, c + 1);
            if edge {
                out.push((r, c));
            }
        }
    }
    out
}

/// Default tolerance `⌈0.008 · diagonal⌉`.
pub fn default_radius(height: usize, width: usize) -> f64 {
    (0.008 * ((height * height + width * width) as f64).sqrt()).ceil()
}

fn matched_fraction(from: &[(usize, usize)], to: &BinaryMask, radius: f64) -> f64 {
    let reach = radius.floor() as isize;
    let r2 = radius * radius;
    let (h, w) = (to.height as isize, to.width as isize);
    let hit = from
        .iter()
        .filter(|&&(r, c)| {
            (-reach..=reach).any(|dr| {
                (-reach..=reach).any(|dc| {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    ((dr * dr + dc * dc) as f64) <= r2
                        && (0..h).contains(&rr)
                        && (0..w).contains(&cc)
                        && to.get(rr as usize, cc as usize)
                })
            })
        })
        .count();
    hit as f64 / from.len() as f64
}

fn boundary_mask(mask: &BinaryMask) -> BinaryMask {
    let mut b = BinaryMask::empty(mask.height, mask.width);
    for (r, c) in boundary_cells(mask) {
        b.set(r, c, true);
    }
    b
}

/// Boundary F-measure with tolerance `radius` (Euclidean, inclusive).
pub fn boundary_f(pred: &BinaryMask, gt: &BinaryMask, radius: f64) -> Result<f64> {
    pred.same_shape(gt)?;
    if !(radius >= 0.0) {
        return Err(Error::invalid(format!("tolerance radius {radius} must be non-negative")));
    }
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let pb = boundary_cells(pred);
    let gb = boundary_cells(gt);
    let precision = matched_fraction(&pb, &boundary_mask(gt), radius);
    let recall = matched_fraction(&gb, &boundary_mask(pred), radius);
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Score {
    pub j: f64,
    pub f: f64,
}

impl Score {
    pub fn jf(&self) -> f64 {
        (self.j + self.f) / 2.0
    }

    fn mean(scores: impl IntoIterator<Item = Score>) -> Option<Score> {
        let (mut j, mut f, mut n) = (0.0, 0.0, 0usize);
        for s in scores {
            j += s.j;
            f += s.f;
            n += 1;
        }
        (n > 0).then(|| Score {
            j: j / n as f64,
            f: f / n as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryScore {
    pub video_id: String,
    pub query_id: String,
    pub category: Category,
    pub score: Score,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub queries: Vec<QueryScore>,
    /// Categories with at least one query.
    pub categories: BTreeMap<Category, Score>,
    pub overall: Score,
}

/// Per-frame scores for every query, in corpus order.
fn frame_scores<'a>(
    corpus: &'a [AnnotatedSample],
    predictions: &Predictions,
    radius: Option<f64>,
) -> Result<Vec<(&'a AnnotatedSample, usize, Vec<Score>)>> {
    let mut out = Vec::new();
    for sample in corpus {
        let r = radius.unwrap_or_else(|| default_radius(sample.height, sample.width));
        for (qi, q) in sample.queries.iter().enumerate() {
            let key = (sample.video_id.clone(), q.query.query_id.clone());
            let preds = predictions.get(&key).ok_or_else(|| {
                Error::Coverage(format!("no predictions for {}/{}", key.0, key.1))
            })?;
            if preds.len() != q.masks.len() {
                return Err(Error::Coverage(format!(
                    "{}/{}: {} predicted frames for {}",
                    key.0,
                    key.1,
                    preds.len(),
                    q.masks.len()
                )));
            }
            let scores = preds
                .iter()
                .zip(&q.masks)
                .enumerate()
                .map(|(i, (p, gt))| {
                    let p = p.as_ref().ok_or_else(|| {
                        Error::Coverage(format!("{}/{}: frame {} missing", key.0, key.1, i + 1))
                    })?;
                    Ok(Score {
                        j: region_similarity(p, gt)?,
                        f: boundary_f(p, gt, r)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            out.push((sample, qi, scores));
        }
    }
    Ok(out)
}

/// Per-query means over frames, category means over queries, overall mean
/// over all queries. `radius = None` uses [`default_radius`] per video.
pub fn score_corpus(
    corpus: &[AnnotatedSample],
    predictions: &Predictions,
    radius: Option<f64>,
) -> Result<MetricReport> {
    let per_frame = frame_scores(corpus, predictions, radius)?;
    if per_frame.is_empty() {
        return Err(Error::invalid("corpus has no queries to score"));
    }
    let queries: Vec<QueryScore> = per_frame
        .into_iter()
        .map(|(s, qi, scores)| {
            let q = &s.queries[qi];
            QueryScore {
                video_id: s.video_id.clone(),
                query_id: q.query.query_id.clone(),
                category: q.query.category,
                score: Score::mean(scores).expect("videos have at least one frame"),
            }
        })
        .collect();
    let categories = Category::ALL
        .into_iter()
        .filter_map(|c| {
            Score::mean(queries.iter().filter(|q| q.category == c).map(|q| q.score)).map(|s| (c, s))
        })
        .collect();
    let overall = Score::mean(queries.iter().map(|q| q.score)).expect("non-empty");
    Ok(MetricReport {
        queries,
        categories,
        overall,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShiftWindowReport {
    pub window: usize,
    /// Frames within `±window` of a shift interval's start or end.
    pub boundary: Option<Score>,
    pub off_boundary: Option<Score>,
}

/// Splits every query's frames into near-shift and far-from-shift sets and
/// averages each set per query, then across queries.
pub fn shift_window_report(
    corpus: &[AnnotatedSample],
    predictions: &Predictions,
    window: usize,
    radius: Option<f64>,
) -> Result<ShiftWindowReport> {
    let per_frame = frame_scores(corpus, predictions, radius)?;
    let mut near = Vec::new();
    let mut far = Vec::new();
    for (s, qi, scores) in per_frame {
        let q = &s.queries[qi];
        let is_near = |frame: usize| {
            q.shifts.iter().any(|sh| {
                [sh.start_frame, sh.end_frame]
                    .iter()
                    .any(|&b| frame.abs_diff(b) <= window)
            })
        };
        let (n, f): (Vec<_>, Vec<_>) = scores
            .into_iter()
            .enumerate()
            .partition(|(i, _)| is_near(i + 1));
        near.extend(Score::mean(n.into_iter().map(|(_, s)| s)));
        far.extend(Score::mean(f.into_iter().map(|(_, s)| s)));
    }
    Ok(ShiftWindowReport {
        window,
        boundary: Score::mean(near),
        off_boundary: Score::mean(far),
    })
}

fn csv_row(out: &mut String, scope: &str, category: &str, s: Option<Score>) {
    match s {
        Some(s) => {
            let _ = writeln!(out, "{scope},{category},{:.6},{:.6},{:.6}", s.j, s.f, s.jf());
        }
        None => {
            let _ = writeln!(out, "{scope},{category},,,");
        }
    }
}

/// CSV with columns `scope,category,J,F,JF`. With `per_category` every one
/// of the five categories gets a row, blank when it has no queries.
pub fn report_csv(report: &MetricReport, per_category: bool, shift: Option<&ShiftWindowReport>) -> String {
    let mut out = String::from("scope,category,J,F,JF\n");
    csv_row(&mut out, "overall", "all", Some(report.overall));
    if per_category {
        for c in Category::ALL {
            csv_row(&mut out, "category", c.as_str(), report.categories.get(&c).copied());
        }
    }
    if let Some(s) = shift {
        csv_row(&mut out, &format!("shift_boundary_w{}", s.window), "all", s.boundary);
        csv_row(&mut out, &format!("shift_off_boundary_w{}", s.window), "all", s.off_boundary);
    }
    out
}

/// Static bar chart of J&F per category plus overall.
pub fn report_svg(report: &MetricReport) -> String {
    let bars: Vec<(&str, f64)> = Category::ALL
        .iter()
        .map(|c| (c.heading(), report.categories.get(c).map_or(0.0, |s| s.jf())))
        .chain(std::iter::once(("Overall", report.overall.jf())))
        .collect();
    let (bw, gap, top, plot_h) = (60.0, 20.0, 20.0, 200.0);
    let width = gap + bars.len() as f64 * (bw + gap);
    let height = top + plot_h + 40.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = gap + i as f64 * (bw + gap);
        let h = v.clamp(0.0, 1.0) * plot_h;
        let y = top + plot_h - h;
        let _ = writeln!(
            s,
            "  <rect x=\"{x}\" y=\"{y:.2}\" width=\"{bw}\" height=\"{h:.2}\" fill=\"#4a7ab5\"/>"
        );
        let _ = writeln!(
            s,
            "  <text x=\"{:.1}\" y=\"{:.2}\" text-anchor=\"middle\">{:.1}</text>",
            x + bw / 2.0,
            y - 4.0,
            v * 100.0
        );
        let _ = writeln!(
            s,
            "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>",
            x + bw / 2.0,
            top + plot_h + 16.0
        );
    }
    s.push_str("</svg>\n");
    s
}
