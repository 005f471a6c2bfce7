//! Scripted gridworld videos with rule-derived, strictly causal ground truth.
//!
//! Objects are small colored shapes. At most one object moves at a time
//! (motion comes in bursts separated by idle gaps), objects never overlap,
//! and now and then an object takes an unused color or trades colors with
//! another object. Every query is a template whose referent at frame `t` is
//! a function of object state at frames `≤ t` only.
//!
//! Query selection is steered: for every query slot all applicable template
//! instantiations are scored and the one that moves the running mean of
//! shift records per query and the discontinuous-grounding fraction closest
//! to the configured targets is kept.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    shifts_from_referents, AnnotatedSample, BinaryMask, Category, Frame, QueryAnnotation,
    QuerySpec, MAX_COLOR,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Total number of queries in the corpus.
    pub queries: usize,
    pub queries_per_video: usize,
    pub height: usize,
    pub width: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Colors `1..=palette` are used for objects.
    pub palette: u8,
    pub min_burst: usize,
    pub max_burst: usize,
    pub min_idle: usize,
    pub max_idle: usize,
    /// Per-frame probability that some object changes color.
    pub recolor_prob: f64,
    /// Share of color events that swap two objects' colors.
    pub swap_prob: f64,
    /// Probability that a burst heads toward another object.
    pub seek_prob: f64,
    pub categories: Vec<Category>,
    pub target_shifts_per_query: f64,
    pub target_discontinuous_fraction: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            queries: 200,
            queries_per_video: 2,
            height: 32,
            width: 32,
            min_len: 12,
            max_len: 96,
            min_objects: 2,
            max_objects: 4,
            palette: 6,
            min_burst: 2,
            max_burst: 6,
            min_idle: 1,
            max_idle: 6,
            recolor_prob: 0.1,
            swap_prob: 0.5,
            seek_prob: 0.6,
            categories: Category::ALL.to_vec(),
            target_shifts_per_query: 3.66,
            target_discontinuous_fraction: 0.5586,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.queries == 0 || self.queries_per_video == 0 {
            return fail("query counts must be positive".into());
        }
        if self.categories.is_empty() {
            return fail("no query categories enabled".into());
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return fail(format!("bad length range {}..{}", self.min_len, self.max_len));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return fail(format!(
                "bad object range {}..{}",
                self.min_objects, self.max_objects
            ));
        }
        if self.palette == 0 || self.palette > MAX_COLOR {
            return fail(format!("palette must be within 1..={MAX_COLOR}"));
        }
        if self.max_objects >= self.palette as usize {
            return fail(format!(
                "{} objects need at least {} colors",
                self.max_objects,
                self.max_objects + 1
            ));
        }
        if self.categories.contains(&Category::Interaction) && self.min_objects < 2 {
            return fail("interaction queries need at least two objects per video".into());
        }
        if self.height < 8 || self.width < 8 {
            return fail("frames must be at least 8x8".into());
        }
        if self.min_burst == 0 || self.min_burst > self.max_burst || self.min_idle > self.max_idle {
            return fail("bad burst or idle range".into());
        }
        if !(0.0..=1.0).contains(&self.recolor_prob) || !(0.0..=1.0).contains(&self.seek_prob)
            || !(0.0..=1.0).contains(&self.swap_prob) {
            return fail("probabilities must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Square,
    Bar,
    Plus,
    Dot,
}

impl ShapeKind {
    const ALL: [ShapeKind; 4] = [ShapeKind::Square, ShapeKind::Bar, ShapeKind::Plus, ShapeKind::Dot];

    /// Cell offsets `(row, col)` from the anchor.
    pub fn offsets(&self) -> &'static [(i32, i32)] {
        match self {
            ShapeKind::Square => &[(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)],
            ShapeKind::Bar => &[(0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 1), (1, 2), (1, 3)],
            ShapeKind::Plus => &[(0, 1), (1, 0), (1, 1), (1, 2), (2, 1)],
            ShapeKind::Dot => &[(0, 0), (0, 1), (1, 0), (1, 1)],
        }
    }

    fn extent(&self) -> (i32, i32) {
        match self {
            ShapeKind::Square | ShapeKind::Plus => (3, 3),
            ShapeKind::Bar => (2, 4),
            ShapeKind::Dot => (2, 2),
        }
    }
}

/// One object's full trajectory; index `t − 1` holds frame `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub id: u32,
    pub kind: ShapeKind,
    pub positions: Vec<(i32, i32)>,
    pub colors: Vec<u8>,
}

impl SceneObject {
    pub fn cells_at(&self, t: usize) -> impl Iterator<Item = (i32, i32)> + '_ {
        let (r, c) = self.positions[t - 1];
        self.kind.offsets().iter().map(move |(dr, dc)| (r + dr, c + dc))
    }

    pub fn moving_at(&self, t: usize) -> bool {
        t > 1 && self.positions[t - 1] != self.positions[t - 2]
    }

    fn centroid2(&self, t: usize) -> (i32, i32) {
        let (h, w) = self.kind.extent();
        let (r, c) = self.positions[t - 1];
        (2 * r + h - 1, 2 * c + w - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub len: usize,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn new(height: usize, width: usize, objects: Vec<SceneObject>) -> Result<Self> {
        let len = objects.first().map(|o| o.positions.len()).unwrap_or(0);
        if len == 0 {
            return Err(Error::invalid("scene needs at least one object and one frame"));
        }
        if objects.iter().any(|o| o.positions.len() != len || o.colors.len() != len) {
            return Err(Error::shape("object trajectories differ in length"));
        }
        let scene = Self {
            height,
            width,
            len,
            objects,
        };
        for t in 1..=len {
            let mut seen = vec![false; height * width];
            for o in &scene.objects {
                for (r, c) in o.cells_at(t) {
                    if r < 0 || c < 0 || r as usize >= height || c as usize >= width {
                        return Err(Error::invalid(format!("object {} leaves the frame at t={t}", o.id)));
                    }
                    let i = r as usize * width + c as usize;
                    if seen[i] {
                        return Err(Error::invalid(format!("objects overlap at t={t}")));
                    }
                    seen[i] = true;
                }
            }
        }
        Ok(scene)
    }

    pub fn render(&self, t: usize) -> Frame {
        let mut f = Frame::blank(self.height, self.width);
        for o in &self.objects {
            let color = o.colors[t - 1];
            for (r, c) in o.cells_at(t) {
                f.set(r as usize, c as usize, color);
            }
        }
        f
    }

    fn object(&self, id: u32) -> &SceneObject {
        self.objects.iter().find(|o| o.id == id).expect("referent id belongs to the scene")
    }

    pub fn mask_of(&self, id: u32, t: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(self.height, self.width);
        for (r, c) in self.object(id).cells_at(t) {
            m.set(r as usize, c as usize, true);
        }
        m
    }

    fn touching(&self, a: &SceneObject, b: &SceneObject, t: usize) -> bool {
        let cells: Vec<(i32, i32)> = b.cells_at(t).collect();
        a.cells_at(t).any(|(r, c)| {
            cells
                .iter()
                .any(|&(br, bc)| (br - r).abs() + (bc - c).abs() == 1)
        })
    }

    fn mover_at(&self, t: usize) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.moving_at(t))
    }

    pub fn colors_used(&self) -> Vec<u8> {
        let mut c: Vec<u8> = self.objects.iter().flat_map(|o| o.colors.iter().copied()).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

const COLOR_NAMES: [&str; 9] = [
    "red", "green", "blue", "yellow", "white", "purple", "orange", "pink", "brown",
];

/// Common-knowledge color facts, indexed by palette color − 1.
const COLOR_FACTS: [&str; 9] = [
    "a fire truck",
    "fresh grass",
    "a clear sky",
    "a ripe banana",
    "fresh snow",
    "a bunch of grapes",
    "a pumpkin",
    "a flamingo",
    "milk chocolate",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryTemplate {
    /// The object currently painted `color`.
    Color(u8),
    /// As `Color`, but the color is named through a fact.
    ColorFact(u8),
    /// The object whose centre is furthest toward `side` (ties: lowest id).
    Extreme(Side),
    /// The object whose position changed since the previous frame.
    Moving,
    /// The object with the latest movement so far.
    MovedMostRecently,
    /// A resting object in 4-contact with the moving one (lowest id).
    TouchedByMover,
    /// The moving object while it is in 4-contact with another object.
    MoverInContact,
}

impl QueryTemplate {
    pub fn category(&self) -> Category {
        match self {
            QueryTemplate::Color(_) => Category::Attribute,
            QueryTemplate::ColorFact(_) => Category::ExternalKnowledge,
            QueryTemplate::Extreme(_) => Category::Spatial,
            QueryTemplate::Moving | QueryTemplate::MovedMostRecently => Category::Action,
            QueryTemplate::TouchedByMover | QueryTemplate::MoverInContact => Category::Interaction,
        }
    }

    pub fn text(&self) -> String {
        match self {
            QueryTemplate::Color(c) => format!("the {} shape", COLOR_NAMES[*c as usize - 1]),
            QueryTemplate::ColorFact(c) => {
                format!("the shape with the color of {}", COLOR_FACTS[*c as usize - 1])
            }
            QueryTemplate::Extreme(side) => match side {
                Side::Left => "the leftmost shape".into(),
                Side::Right => "the rightmost shape".into(),
                Side::Top => "the topmost shape".into(),
                Side::Bottom => "the lowest shape".into(),
            },
            QueryTemplate::Moving => "the shape that is moving".into(),
            QueryTemplate::MovedMostRecently => "the shape that moved most recently".into(),
            QueryTemplate::TouchedByMover => "the shape being touched by the moving shape".into(),
            QueryTemplate::MoverInContact => "the moving shape that is touching another shape".into(),
        }
    }

    /// Every instantiation of `category` that can apply to `scene`.
    pub fn candidates(category: Category, scene: &Scene) -> Vec<QueryTemplate> {
        match category {
            Category::Attribute => scene.colors_used().into_iter().map(QueryTemplate::Color).collect(),
            Category::ExternalKnowledge => {
                scene.colors_used().into_iter().map(QueryTemplate::ColorFact).collect()
            }
            Category::Spatial => [Side::Left, Side::Right, Side::Top, Side::Bottom]
                .into_iter()
                .map(QueryTemplate::Extreme)
                .collect(),
            Category::Action => vec![QueryTemplate::Moving, QueryTemplate::MovedMostRecently],
            Category::Interaction => vec![QueryTemplate::TouchedByMover, QueryTemplate::MoverInContact],
        }
    }

    /// Referent at frame `t` (1-based); reads object state at frames `≤ t`.
    pub fn referent(&self, scene: &Scene, t: usize) -> Option<u32> {
        match self {
            QueryTemplate::Color(c) | QueryTemplate::ColorFact(c) => scene
                .objects
                .iter()
                .find(|o| o.colors[t - 1] == *c)
                .map(|o| o.id),
            QueryTemplate::Extreme(side) => {
                let key = |o: &SceneObject| {
                    let (r, c) = o.centroid2(t);
                    match side {
                        Side::Left => c,
                        Side::Right => -c,
                        Side::Top => r,
                        Side::Bottom => -r,
                    }
                };
                scene
                    .objects
                    .iter()
                    .min_by_key(|o| (key(o), o.id))
                    .map(|o| o.id)
            }
            QueryTemplate::Moving => scene.mover_at(t).map(|o| o.id),
            QueryTemplate::MovedMostRecently => scene
                .objects
                .iter()
                .filter_map(|o| (2..=t).rev().find(|&s| o.moving_at(s)).map(|s| (s, o.id)))
                .max_by_key(|&(s, id)| (s, std::cmp::Reverse(id)))
                .map(|(_, id)| id),
            QueryTemplate::TouchedByMover => {
                let mover = scene.mover_at(t)?;
                scene
                    .objects
                    .iter()
                    .filter(|o| o.id != mover.id && scene.touching(mover, o, t))
                    .map(|o| o.id)
                    .min()
            }
            QueryTemplate::MoverInContact => {
                let mover = scene.mover_at(t)?;
                scene
                    .objects
                    .iter()
                    .any(|o| o.id != mover.id && scene.touching(mover, o, t))
                    .then_some(mover.id)
            }
        }
    }

    pub fn referents(&self, scene: &Scene) -> Vec<Option<u32>> {
        (1..=scene.len).map(|t| self.referent(scene, t)).collect()
    }

    pub fn annotate(&self, scene: &Scene, query_id: impl Into<String>) -> QueryAnnotation {
        let referents = self.referents(scene);
        let masks = referents
            .iter()
            .enumerate()
            .map(|(i, r)| match r {
                Some(id) => scene.mask_of(*id, i + 1),
                None => BinaryMask::empty(scene.height, scene.width),
            })
            .collect();
        QueryAnnotation {
            query: QuerySpec {
                query_id: query_id.into(),
                text: self.text(),
                category: self.category(),
            },
            masks,
            shifts: shifts_from_referents(&referents),
        }
    }
}

fn fits(scene_cells: &[bool], width: usize, height: usize, kind: ShapeKind, pos: (i32, i32)) -> bool {
    kind.offsets().iter().all(|(dr, dc)| {
        let (r, c) = (pos.0 + dr, pos.1 + dc);
        r >= 0
            && c >= 0
            && (r as usize) < height
            && (c as usize) < width
            && !scene_cells[r as usize * width + c as usize]
    })
}

fn occupancy(objects: &[(ShapeKind, (i32, i32))], skip: Option<usize>, height: usize, width: usize) -> Vec<bool> {
    let mut occ = vec![false; height * width];
    for (i, (kind, pos)) in objects.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        for (dr, dc) in kind.offsets() {
            let (r, c) = (pos.0 + dr, pos.1 + dc);
            occ[r as usize * width + c as usize] = true;
        }
    }
    occ
}

/// Simulates one scene.
pub fn simulate_scene(cfg: &GeneratorConfig, rng: &mut impl Rng) -> Result<Scene> {
    let (h, w) = (cfg.height, cfg.width);
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    let count = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut palette: Vec<u8> = (1..=cfg.palette).collect();

    let mut state: Vec<(ShapeKind, (i32, i32))> = Vec::with_capacity(count);
    let mut colors: Vec<u8> = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = *ShapeKind::ALL.choose(rng).expect("non-empty");
        let (eh, ew) = kind.extent();
        let occ = occupancy(&state, None, h, w);
        let mut placed = None;
        for _ in 0..200 {
            let pos = (
                rng.random_range(0..=h as i32 - eh),
                rng.random_range(0..=w as i32 - ew),
            );
            if fits(&occ, w, h, kind, pos) {
                placed = Some(pos);
                break;
            }
        }
        let pos = placed.ok_or_else(|| Error::Config("frame too small to place all objects".into()))?;
        state.push((kind, pos));
        let ci = rng.random_range(0..palette.len());
        colors.push(palette.swap_remove(ci));
    }

    let mut positions: Vec<Vec<(i32, i32)>> = state.iter().map(|(_, p)| vec![*p]).collect();
    let mut color_tracks: Vec<Vec<u8>> = colors.iter().map(|c| vec![*c]).collect();

    // (object, direction, frames left) while a burst runs; idle counter otherwise.
    let mut burst: Option<(usize, (i32, i32), usize)> = None;
    let mut idle = rng.random_range(cfg.min_idle..=cfg.max_idle);
    const DIRS: [(i32, i32); 4] = [(0, 1), (0, -1), (1, 0), (-1, 0)];
    for _t in 2..=len {
        if burst.is_none() {
            if idle > 0 {
                idle -= 1;
            } else {
                let obj = rng.random_range(0..count);
                let dir = if count > 1 && rng.random_bool(cfg.seek_prob) {
                    let mut other = rng.random_range(0..count - 1);
                    if other >= obj {
                        other += 1;
                    }
                    let (a, b) = (state[obj].1, state[other].1);
                    let (dr, dc) = (b.0 - a.0, b.1 - a.1);
                    if dr.abs() > dc.abs() {
                        (dr.signum(), 0)
                    } else {
                        (0, if dc == 0 { 1 } else { dc.signum() })
                    }
                } else {
                    *DIRS.choose(rng).expect("non-empty")
                };
                burst = Some((obj, dir, rng.random_range(cfg.min_burst..=cfg.max_burst)));
            }
        }
        if let Some((obj, dir, left)) = burst.as_mut() {
            let occ = occupancy(&state, Some(*obj), h, w);
            let (kind, pos) = state[*obj];
            let step = |d: (i32, i32)| (pos.0 + d.0, pos.1 + d.1);
            if fits(&occ, w, h, kind, step(*dir)) {
                state[*obj].1 = step(*dir);
            } else {
                *dir = (-dir.0, -dir.1);
                if fits(&occ, w, h, kind, step(*dir)) {
                    state[*obj].1 = step(*dir);
                }
            }
            *left -= 1;
            if *left == 0 {
                burst = None;
                idle = rng.random_range(cfg.min_idle..=cfg.max_idle);
            }
        }
        if rng.random_bool(cfg.recolor_prob) {
            let obj = rng.random_range(0..count);
            if count > 1 && rng.random_bool(cfg.swap_prob) {
                let mut other = rng.random_range(0..count - 1);
                if other >= obj {
                    other += 1;
                }
                colors.swap(obj, other);
            } else if !palette.is_empty() {
                let ci = rng.random_range(0..palette.len());
                std::mem::swap(&mut palette[ci], &mut colors[obj]);
            }
        }
        for i in 0..count {
            positions[i].push(state[i].1);
            color_tracks[i].push(colors[i]);
        }
    }

    let objects = state
        .iter()
        .enumerate()
        .map(|(i, (kind, _))| SceneObject {
            id: i as u32 + 1,
            kind: *kind,
            positions: std::mem::take(&mut positions[i]),
            colors: std::mem::take(&mut color_tracks[i]),
        })
        .collect();
    Scene::new(h, w, objects)
}

struct Steering {
    target_shifts: f64,
    target_disc: f64,
    total_shifts: usize,
    total_disc: usize,
    n: usize,
}

impl Steering {
    fn cost(&self, shifts: usize, disc: bool) -> f64 {
        let n = (self.n + 1) as f64;
        let mean = (self.total_shifts + shifts) as f64 / n;
        let frac = (self.total_disc + disc as usize) as f64 / n;
        (mean - self.target_shifts).abs() / self.target_shifts.max(1e-9)
            + (frac - self.target_disc).abs()
    }

    fn accept(&mut self, q: &QueryAnnotation) {
        self.n += 1;
        self.total_shifts += q.shifts.len();
        self.total_disc += q.is_discontinuous() as usize;
    }
}

/// Generates `cfg.queries` annotated queries over as many videos as needed.
pub fn generate_synthetic(cfg: &GeneratorConfig, seed: u64) -> Result<Vec<AnnotatedSample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steering = Steering {
        target_shifts: cfg.target_shifts_per_query,
        target_disc: cfg.target_discontinuous_fraction,
        total_shifts: 0,
        total_disc: 0,
        n: 0,
    };
    let mut corpus = Vec::new();
    let mut slot = 0usize;
    let mut attempts = 0usize;
    while slot < cfg.queries {
        attempts += 1;
        if attempts > cfg.queries * 50 {
            return Err(Error::Config(
                "generator could not realise the requested query categories".into(),
            ));
        }
        let scene = simulate_scene(cfg, &mut rng)?;
        let video_id = format!("v{:04}", corpus.len());
        let wanted = cfg.queries_per_video.min(cfg.queries - slot);
        let mut queries = Vec::with_capacity(wanted);
        for k in 0..wanted {
            let category = cfg.categories[(slot + k) % cfg.categories.len()];
            let query_id = format!("{video_id}_q{k}");
            let best = QueryTemplate::candidates(category, &scene)
                .into_iter()
                .map(|tpl| tpl.annotate(&scene, query_id.clone()))
                .filter(|q| !q.shifts.is_empty())
                .min_by(|a, b| {
                    let ca = steering.cost(a.shifts.len(), a.is_discontinuous());
                    let cb = steering.cost(b.shifts.len(), b.is_discontinuous());
                    ca.total_cmp(&cb)
                });
            match best {
                Some(q) => queries.push(q),
                None => break,
            }
        }
        if queries.len() < wanted {
            continue;
        }
        for q in &queries {
            steering.accept(q);
        }
        slot += queries.len();
        let frames = (1..=scene.len).map(|t| scene.render(t)).collect();
        corpus.push(AnnotatedSample {
            video_id,
            height: cfg.height,
            width: cfg.width,
            frames,
            queries,
        });
    }
    Ok(corpus)
}
