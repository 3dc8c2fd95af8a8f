//! Seeded synthetic scenes with an exact ground-truth log.
//!
//! `Traffic` scenes move palette-colored rectangles horizontally through
//! disjoint lanes, so entities never overlap and every detection is
//! recoverable. Each entity carries a 16x4 barcode of its id near its top
//! edge and a two-color appearance block that makes its histogram distinct
//! from every other entity's. With more entities than lanes, each lane hosts
//! a sequence of entities of `lifetime` frames each.
//!
//! `Photos` scenes are still images of four colored blocks, some of which
//! are near-duplicates of another frame (one 8x8 square repainted).
//!
//! Sprite layout (w x h, w >= 20, h >= 8):
//!
//! ```text
//! rows 0..8     palette color, barcode at (bx, 2)..(bx+16, 6)
//! rows 8..h-2   appearance block, columns 2..w-2, color c1 left of split, c2 right
//! rows h-2..h   palette color
//! ```

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etl::{glyph_pixel, histogram_of_bytes, PaletteEntry, DEFAULT_BINS, GLYPH_H, GLYPH_W};
use crate::metric::euclidean;
use crate::patch::{BoundingBox, Frame};

pub const MIN_ENTITY_W: u32 = GLYPH_W + 4;
pub const MIN_ENTITY_H: u32 = 8;
const BARCODE_Y: u32 = 2;
const APPEARANCE_Y: u32 = 8;
const LANE_GAP: u32 = 2;
const MAX_ATTEMPTS: usize = 2000;

/// Photos: originals are at least this far apart in histogram space,
/// duplicates at most `DUPLICATE_MAX_DIST` from their source.
pub const PHOTO_MIN_DIST: f64 = 0.3;
pub const DUPLICATE_MAX_DIST: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    #[default]
    Traffic,
    Photos,
}

pub fn default_palette() -> Vec<PaletteEntry> {
    vec![
        PaletteEntry::new([220, 40, 40], "vehicle"),
        PaletteEntry::new([40, 200, 60], "pedestrian"),
        PaletteEntry::new([60, 80, 230], "cyclist"),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub seed: u64,
    pub video_id: String,
    pub frames: u32,
    pub width: u32,
    pub height: u32,
    pub entities: u32,
    /// Explicit entity ids; random distinct ids when empty.
    pub entity_ids: Vec<u16>,
    pub palette: Vec<PaletteEntry>,
    /// Relative frequency of each palette entry; uniform when empty.
    pub label_weights: Vec<f64>,
    /// Inclusive size ranges.
    pub entity_w: [u32; 2],
    pub entity_h: [u32; 2],
    pub max_speed: u32,
    /// Frames each entity stays on screen; 0 keeps every entity for the
    /// whole video, which needs one lane per entity.
    pub lifetime: u32,
    /// Background pixels are a fixed pattern uniform in `[0, a]`.
    pub noise_amplitude: u8,
    /// Minimum histogram distance between any two entity sprites; 0 skips
    /// the check.
    pub appearance_separation: f64,
    /// Photos only: how many frames are near-duplicates of another.
    pub duplicates: u32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::Traffic,
            seed: 0,
            video_id: "scene".into(),
            frames: 100,
            width: 320,
            height: 240,
            entities: 5,
            entity_ids: Vec::new(),
            palette: default_palette(),
            label_weights: Vec::new(),
            entity_w: [24, 48],
            entity_h: [14, 20],
            max_speed: 4,
            lifetime: 0,
            noise_amplitude: 4,
            appearance_separation: 0.25,
            duplicates: 0,
        }
    }
}

impl SceneSpec {
    pub fn traffic(seed: u64, frames: u32, entities: u32) -> Self {
        Self { seed, frames, entities, ..Self::default() }
    }

    pub fn photos(seed: u64, frames: u32, duplicates: u32) -> Self {
        Self { kind: SceneKind::Photos, seed, frames, duplicates, entities: 0, ..Self::default() }
    }

    pub fn lanes(&self) -> u32 {
        self.height / (self.entity_h[1] + LANE_GAP)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.into()));
        if self.width == 0 || self.height == 0 {
            return bad("frame size must be positive");
        }
        if self.kind == SceneKind::Photos {
            if self.duplicates > self.frames / 2 {
                return bad("duplicates must not exceed half the frames");
            }
            return Ok(());
        }
        let [wl, wh] = self.entity_w;
        let [hl, hh] = self.entity_h;
        if wl > wh || hl > hh {
            return bad("entity size range is inverted");
        }
        if self.entities > 0 {
            if wl < MIN_ENTITY_W || hl < MIN_ENTITY_H {
                return bad("entities must be at least 20x8 to carry a barcode");
            }
            if wh > self.width || self.lanes() == 0 {
                return Err(Error::EntityTooLarge {
                    width: wh,
                    height: hh,
                    frame_width: self.width,
                    frame_height: self.height,
                });
            }
            if self.palette.is_empty() {
                return bad("palette is empty");
            }
        }
        if !self.label_weights.is_empty()
            && (self.label_weights.len() != self.palette.len()
                || self.label_weights.iter().any(|w| !(*w >= 0.0))
                || self.label_weights.iter().sum::<f64>() <= 0.0)
        {
            return bad("label_weights must give one non-negative weight per palette entry");
        }
        if !self.entity_ids.is_empty() {
            if self.entity_ids.len() != self.entities as usize {
                return bad("entity_ids must list one id per entity");
            }
            if self.entity_ids.iter().collect::<BTreeSet<_>>().len() != self.entity_ids.len() {
                return bad("entity ids must be unique");
            }
        }
        if self.entities > 65536 {
            return bad("at most 65536 entities fit 16-bit ids");
        }
        if self.lifetime == 0 && self.entities > self.lanes() {
            return bad("more entities than lanes; set a lifetime");
        }
        Ok(())
    }
}

/// One synthetic object and its fixed appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: u16,
    pub label: String,
    pub palette_index: usize,
    pub width: u32,
    pub height: u32,
    pub y: u32,
    pub x0: u32,
    pub vx: i32,
    pub barcode_x: u32,
    pub colors: [[u8; 3]; 2],
    /// Frames `first..end` show this entity.
    pub first: u32,
    pub end: u32,
    sprite: Vec<u8>,
}

impl Entity {
    pub fn visible_at(&self, t: u32) -> bool {
        (self.first..self.end).contains(&t)
    }

    /// Left edge at frame `t`: a triangle wave between the frame edges.
    pub fn x_at(&self, t: u32, frame_w: u32) -> u32 {
        let range = i64::from(frame_w - self.width);
        if range == 0 {
            return 0;
        }
        let period = 2 * range;
        let pos = (i64::from(self.x0) + i64::from(self.vx) * i64::from(t)).rem_euclid(period);
        (if pos <= range { pos } else { period - pos }) as u32
    }

    pub fn bbox_at(&self, t: u32, frame_w: u32) -> BoundingBox {
        let x = self.x_at(t, frame_w);
        BoundingBox { x1: x, y1: self.y, x2: x + self.width, y2: self.y + self.height }
    }

    pub fn depth(&self, frame_h: u32) -> f64 {
        1.0 - f64::from(self.y + self.height) / f64::from(frame_h)
    }

    pub fn sprite(&self) -> &[u8] {
        &self.sprite
    }
}

fn render_sprite(
    id: u16,
    rgb: [u8; 3],
    w: u32,
    h: u32,
    bx: u32,
    colors: [[u8; 3]; 2],
    split: u32,
) -> Vec<u8> {
    let mut s = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            let px = if (BARCODE_Y..BARCODE_Y + GLYPH_H).contains(&y) && (bx..bx + GLYPH_W).contains(&x) {
                glyph_pixel(id, x - bx)
            } else if y >= APPEARANCE_Y && y + 2 < h && x >= 2 && x + 2 < w {
                colors[usize::from(x >= split)]
            } else {
                rgb
            };
            s.extend_from_slice(&px);
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub entity: u16,
    pub label: String,
    pub bbox: BoundingBox,
    pub depth: f64,
}

/// The generator's exact record of what each frame shows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    /// Objects per frame, in painter's order.
    pub frames: Vec<Vec<GtObject>>,
    /// Label of every entity that appears at least once.
    pub entity_labels: BTreeMap<u16, String>,
    /// Distinct appearing entities per label.
    pub label_counts: BTreeMap<String, u64>,
    /// Near-duplicate frame pairs `(a, b)` with `a < b`, sorted.
    pub duplicate_pairs: Vec<(u64, u64)>,
}

impl GroundTruth {
    /// Frames showing at least one entity with `label`.
    pub fn frames_with_label(&self, label: &str) -> u64 {
        self.frames.iter().filter(|f| f.iter().any(|o| o.label == label)).count() as u64
    }

    /// The entity drawn exactly at `bbox` in frame `t`.
    pub fn entity_at(&self, t: u64, bbox: &BoundingBox) -> Option<&GtObject> {
        self.frames.get(t as usize)?.iter().find(|o| o.bbox == *bbox)
    }

    /// Frames in which entity `id` is visible, ascending.
    pub fn frames_of(&self, id: u16) -> Vec<u64> {
        (0..self.frames.len())
            .filter(|&t| self.frames[t].iter().any(|o| o.entity == id))
            .map(|t| t as u64)
            .collect()
    }

    pub fn distinct(&self, label: &str) -> u64 {
        self.label_counts.get(label).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
struct Photo {
    split: (u32, u32),
    colors: [[u8; 3]; 4],
    /// Repainted square of a near-duplicate: top-left and color.
    mark: Option<(u32, u32, [u8; 3])>,
}

const MARK: u32 = 8;

impl Photo {
    fn render(&self, w: u32, h: u32) -> Vec<u8> {
        let mut px = Vec::with_capacity((w * h * 3) as usize);
        for y in 0..h {
            for x in 0..w {
                let q = usize::from(x >= self.split.0) + 2 * usize::from(y >= self.split.1);
                let c = match self.mark {
                    Some((mx, my, c)) if (mx..mx + MARK).contains(&x) && (my..my + MARK).contains(&y) => c,
                    _ => self.colors[q],
                };
                px.extend_from_slice(&c);
            }
        }
        px
    }
}

#[derive(Debug, Clone)]
enum Content {
    Traffic { entities: Vec<Entity>, background: Vec<u8> },
    Photos { photos: Vec<Photo>, pairs: Vec<(u64, u64)> },
}

/// A planned scene; frames are rendered on demand.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
    content: Content,
    truth: GroundTruth,
}

impl Scene {
    pub fn plan(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let content = match spec.kind {
            SceneKind::Traffic => plan_traffic(spec, &mut rng)?,
            SceneKind::Photos => plan_photos(spec, &mut rng)?,
        };
        let mut scene = Self { spec: spec.clone(), content, truth: GroundTruth::default() };
        scene.truth = scene.build_truth();
        Ok(scene)
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn entities(&self) -> &[Entity] {
        match &self.content {
            Content::Traffic { entities, .. } => entities,
            Content::Photos { .. } => &[],
        }
    }

    pub fn len(&self) -> u32 {
        self.spec.frames
    }

    pub fn is_empty(&self) -> bool {
        self.spec.frames == 0
    }

    fn visible(&self, t: u32) -> Vec<&Entity> {
        let h = self.spec.height;
        let mut v: Vec<&Entity> = self.entities().iter().filter(|e| e.visible_at(t)).collect();
        // painter's order: far (large depth) first
        v.sort_by(|a, b| b.depth(h).total_cmp(&a.depth(h)).then(a.id.cmp(&b.id)));
        v
    }

    pub fn frame(&self, t: u32) -> Frame {
        let (w, h) = (self.spec.width, self.spec.height);
        let pixels = match &self.content {
            Content::Traffic { background, .. } => {
                let mut px = background.clone();
                let stride = (w * 3) as usize;
                for e in self.visible(t) {
                    let x = e.x_at(t, w) as usize;
                    let row = (e.width * 3) as usize;
                    for dy in 0..e.height as usize {
                        let dst = (e.y as usize + dy) * stride + x * 3;
                        px[dst..dst + row].copy_from_slice(&e.sprite[dy * row..(dy + 1) * row]);
                    }
                }
                px
            }
            Content::Photos { photos, .. } => photos[t as usize].render(w, h),
        };
        Frame::new(self.spec.video_id.clone(), u64::from(t), w, h, pixels)
            .expect("scene renders full frames")
    }

    pub fn frames(&self) -> impl Iterator<Item = Frame> + '_ {
        (0..self.spec.frames).map(|t| self.frame(t))
    }

    fn build_truth(&self) -> GroundTruth {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut truth = GroundTruth {
            video_id: self.spec.video_id.clone(),
            width: w,
            height: h,
            ..GroundTruth::default()
        };
        match &self.content {
            Content::Traffic { .. } => {
                for t in 0..self.spec.frames {
                    let objs = self
                        .visible(t)
                        .into_iter()
                        .map(|e| GtObject {
                            entity: e.id,
                            label: e.label.clone(),
                            bbox: e.bbox_at(t, w),
                            depth: e.depth(h),
                        })
                        .collect();
                    truth.frames.push(objs);
                }
                for e in self.entities().iter().filter(|e| e.first < self.spec.frames) {
                    truth.entity_labels.insert(e.id, e.label.clone());
                    *truth.label_counts.entry(e.label.clone()).or_default() += 1;
                }
            }
            Content::Photos { photos, pairs } => {
                truth.frames = vec![Vec::new(); photos.len()];
                truth.duplicate_pairs = pairs.clone();
            }
        }
        truth
    }
}

/// Owning frame stream of a scene.
#[derive(Debug, Clone)]
pub struct SceneFrames {
    scene: Scene,
    next: u32,
}

impl Iterator for SceneFrames {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        (self.next < self.scene.spec.frames).then(|| {
            self.next += 1;
            self.scene.frame(self.next - 1)
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.scene.spec.frames - self.next) as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for SceneFrames {}

pub fn gen_scene(spec: &SceneSpec) -> Result<(SceneFrames, GroundTruth)> {
    let scene = Scene::plan(spec)?;
    let truth = scene.truth.clone();
    Ok((SceneFrames { scene, next: 0 }, truth))
}

fn linf(a: [u8; 3], b: [u8; 3]) -> u8 {
    (0..3).map(|c| a[c].abs_diff(b[c])).max().unwrap_or(0)
}

fn random_rgb(rng: &mut ChaCha8Rng) -> [u8; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Appearance colors stay saturated and far from every palette color so
/// that neither the detector nor the barcode reader mistakes them, even
/// after coarse quantization.
fn appearance_color(rng: &mut ChaCha8Rng, palette: &[PaletteEntry]) -> [u8; 3] {
    loop {
        let c = random_rgb(rng);
        let spread = c.iter().max().unwrap() - c.iter().min().unwrap();
        if spread >= 128 && palette.iter().all(|p| linf(c, p.rgb) >= 64) {
            return c;
        }
    }
}

fn pick_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

fn plan_traffic(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Content> {
    let (w, h) = (spec.width, spec.height);
    let a = u16::from(spec.noise_amplitude);
    let background: Vec<u8> = (0..w * h * 3).map(|_| rng.random_range(0..=a) as u8).collect();

    let n = spec.entities as usize;
    let ids: Vec<u16> = if spec.entity_ids.is_empty() {
        let mut all: Vec<u16> = (0..=u16::MAX).collect();
        all.shuffle(rng);
        all.truncate(n);
        all
    } else {
        spec.entity_ids.clone()
    };
    let weights = if spec.label_weights.is_empty() {
        vec![1.0; spec.palette.len()]
    } else {
        spec.label_weights.clone()
    };

    let lanes = spec.lanes();
    let lane_h = spec.entity_h[1] + LANE_GAP;
    let mut entities: Vec<Entity> = Vec::with_capacity(n);
    let mut hists: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (i, &id) in ids.iter().enumerate() {
        let pi = pick_weighted(rng, &weights);
        let rgb = spec.palette[pi].rgb;
        let ew = rng.random_range(spec.entity_w[0]..=spec.entity_w[1]);
        let eh = rng.random_range(spec.entity_h[0]..=spec.entity_h[1]);
        let lane = i as u32 % lanes;
        let slot = i as u32 / lanes;
        let y = lane * lane_h + rng.random_range(0..=lane_h - 1 - eh);
        let x0 = rng.random_range(0..=w - ew);
        let s = spec.max_speed as i32;
        let vx = rng.random_range(-s..=s);
        let bx = rng.random_range(2..=ew - GLYPH_W - 2);
        let (first, end) = if spec.lifetime == 0 {
            (0, spec.frames)
        } else {
            let f = slot.saturating_mul(spec.lifetime);
            (f, f.saturating_add(spec.lifetime))
        };

        let mut attempt = 0;
        let (sprite, colors, hist) = loop {
            let colors = [appearance_color(rng, &spec.palette), appearance_color(rng, &spec.palette)];
            let split = rng.random_range(2..=ew - 2);
            let sprite = render_sprite(id, rgb, ew, eh, bx, colors, split);
            let hist = histogram_of_bytes(&sprite, DEFAULT_BINS);
            if spec.appearance_separation <= 0.0
                || hists.iter().all(|o| euclidean(o, &hist) >= spec.appearance_separation)
            {
                break (sprite, colors, hist);
            }
            attempt += 1;
            if attempt >= MAX_ATTEMPTS {
                return Err(Error::InvalidParam(
                    "cannot place entity appearances at the requested separation".into(),
                ));
            }
        };
        hists.push(hist);
        entities.push(Entity {
            id,
            label: spec.palette[pi].label.clone(),
            palette_index: pi,
            width: ew,
            height: eh,
            y,
            x0,
            vx,
            barcode_x: bx,
            colors,
            first,
            end,
            sprite,
        });
    }
    Ok(Content::Traffic { entities, background })
}

fn plan_photos(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Content> {
    let (w, h) = (spec.width, spec.height);
    if w < 2 * MARK || h < 2 * MARK {
        return Err(Error::InvalidParam("photos need frames of at least 16x16".into()));
    }
    let dups = spec.duplicates as usize;
    let originals = spec.frames as usize - dups;
    let mut photos: Vec<Photo> = Vec::with_capacity(spec.frames as usize);
    let mut hists: Vec<Vec<f64>> = Vec::new();
    for _ in 0..originals {
        let mut attempt = 0;
        loop {
            let p = Photo {
                split: (rng.random_range(w / 4..=3 * w / 4), rng.random_range(h / 4..=3 * h / 4)),
                colors: [random_rgb(rng), random_rgb(rng), random_rgb(rng), random_rgb(rng)],
                mark: None,
            };
            let hist = histogram_of_bytes(&p.render(w, h), DEFAULT_BINS);
            if hists.iter().all(|o| euclidean(o, &hist) >= PHOTO_MIN_DIST) {
                hists.push(hist);
                photos.push(p);
                break;
            }
            attempt += 1;
            if attempt >= MAX_ATTEMPTS {
                return Err(Error::InvalidParam("cannot place distinct photos".into()));
            }
        }
    }
    for src in 0..dups {
        let mut attempt = 0;
        loop {
            let mut p = photos[src].clone();
            p.mark = Some((rng.random_range(0..=w - MARK), rng.random_range(0..=h - MARK), random_rgb(rng)));
            let hist = histogram_of_bytes(&p.render(w, h), DEFAULT_BINS);
            if euclidean(&hists[src], &hist) < DUPLICATE_MAX_DIST {
                photos.push(p);
                break;
            }
            attempt += 1;
            if attempt >= MAX_ATTEMPTS {
                return Err(Error::InvalidParam("frames too small for near-duplicates".into()));
            }
        }
    }

    // frame t shows photos[order[t]]; duplicate k (index originals + k)
    // copies original k
    let mut order: Vec<usize> = (0..photos.len()).collect();
    order.shuffle(rng);
    let mut pos = vec![0u64; photos.len()];
    for (t, &i) in order.iter().enumerate() {
        pos[i] = t as u64;
    }
    let shuffled: Vec<Photo> = order.iter().map(|&i| photos[i].clone()).collect();
    let mut pairs: Vec<(u64, u64)> = (0..dups)
        .map(|k| {
            let (a, b) = (pos[k], pos[originals + k]);
            (a.min(b), a.max(b))
        })
        .collect();
    pairs.sort_unstable();
    Ok(Content::Photos { photos: shuffled, pairs })
}
