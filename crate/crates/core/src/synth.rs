//! Synthetic ground truth and controllably degraded predictions.
//!
//! Randomness comes only from ChaCha8 seeded with the scene seed. Stream 0
//! drives scene layout, stream 1 instance degradation, and stream `2 + m`
//! semantic model `m`, so every part can be regenerated independently.
//!
//! Degradation draws the same random numbers whatever the knob values are;
//! raising a rate therefore only adds drops, false positives or flips on top
//! of what a lower rate produced for the same seed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coco::{panoptic_to_semantic_gt, Category, CategorySet, PanopticImage};
use crate::ensemble::SemanticConfidenceMap;
use crate::error::{Error, Result};
use crate::expert::{Expert, ExpertRouting};
use crate::mask::{BinaryMask, LabelMap, ScoredInstance, VOID};
use crate::par;

/// Smallest share of its own blob a thing keeps visible after later blobs occlude it.
pub const MIN_VISIBLE_FRACTION: f64 = 0.6;
const PLACEMENT_ATTEMPTS: usize = 200;
/// Upper bound of the uniform noise added to every confidence before renormalizing.
const CONFIDENCE_NOISE: f32 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Degradation {
    /// Chebyshev erosion radius applied to predicted masks.
    pub boundary_erosion_px: u32,
    /// Chance, per GT instance, of an extra random false-positive blob.
    pub false_positive_rate: f64,
    /// Chance that a GT instance is missed.
    pub drop_rate: f64,
    /// Predicted scores are `1 - sigma * |z|`, clamped to `[0, 1]`.
    pub score_noise_sigma: f64,
    /// Per-pixel chance that a semantic model favours a wrong category.
    pub semantic_flip_rate: f64,
    /// Chance, per expert and per GT instance the expert does not own, of a
    /// spurious blob labelled with that instance's category.
    pub off_category_rate: f64,
}

impl Degradation {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("false_positive_rate", self.false_positive_rate),
            ("drop_rate", self.drop_rate),
            ("semantic_flip_rate", self.semantic_flip_rate),
            ("off_category_rate", self.off_category_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.score_noise_sigma >= 0.0 && self.score_noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "score_noise_sigma = {} must be finite and non-negative",
                self.score_noise_sigma
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub n_things: usize,
    pub thing_categories: Vec<u32>,
    pub stuff_categories: Vec<u32>,
    pub seed: u64,
    #[serde(default)]
    pub degradation: Degradation,
    /// Number of noisy semantic models to emit.
    #[serde(default = "default_models")]
    pub semantic_models: usize,
}

fn default_models() -> usize {
    3
}

impl SceneSpec {
    /// A scene over [`synthetic_categories`] with no degradation.
    pub fn new(width: u32, height: u32, n_things: usize, seed: u64) -> Self {
        let cats = synthetic_categories();
        Self {
            width,
            height,
            n_things,
            thing_categories: cats.thing_ids(),
            stuff_categories: cats.stuff_ids(),
            seed,
            degradation: Degradation::default(),
            semantic_models: default_models(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self, categories: &CategorySet) -> Result<()> {
        crate::mask::pixel_count(self.width, self.height)?;
        self.degradation.validate()?;
        if self.stuff_categories.is_empty() {
            return Err(Error::InvalidParameter("stuff category pool is empty".into()));
        }
        if self.n_things > 0 && self.thing_categories.is_empty() {
            return Err(Error::InvalidParameter("thing category pool is empty".into()));
        }
        if self.semantic_models == 0 {
            return Err(Error::InvalidParameter("semantic_models must be at least 1".into()));
        }
        if let Some(&c) = self.thing_categories.iter().find(|&&c| !categories.is_thing(c)) {
            return Err(Error::InvalidParameter(format!("{c} is not a thing category")));
        }
        if let Some(&c) = self.stuff_categories.iter().find(|&&c| !categories.is_stuff(c)) {
            return Err(Error::InvalidParameter(format!("{c} is not a stuff category")));
        }
        Ok(())
    }
}

/// Seed of scene `index` in a dataset with base seed `base`.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(1 << 20).wrapping_add(index as u64)
}

/// Small COCO-flavoured category set used by default for synthetic data.
pub fn synthetic_categories() -> CategorySet {
    CategorySet::new(vec![
        Category::thing(1, "person"),
        Category::thing(2, "bicycle"),
        Category::thing(3, "car"),
        Category::thing(18, "dog"),
        Category::stuff(149, "road"),
        Category::stuff(184, "tree"),
        Category::stuff(187, "sky"),
        Category::stuff(193, "grass"),
        Category::stuff(199, "building"),
    ])
    .expect("static category set is valid")
}

/// Person and car experts plus a rest expert, over [`synthetic_categories`].
pub fn synthetic_routing() -> ExpertRouting {
    ExpertRouting::new(vec![
        Expert::owning("person", [1]),
        Expert::owning("car", [3]),
        Expert::rest("rest"),
    ])
    .expect("static routing is valid")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub panoptic: PanopticImage,
    /// Converted semantic ground truth (things merged).
    pub semantic: LabelMap,
    /// Visible thing masks with score 1, in segment order.
    pub instances: Vec<ScoredInstance>,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Axis-aligned rectangle with corners rounded by a quarter of its short side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Blob {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Blob {
    fn radius(&self) -> i64 {
        (self.w.min(self.h) / 4) as i64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        if x < self.x || y < self.y || x >= self.x + self.w || y >= self.y + self.h {
            return false;
        }
        let r = self.radius();
        let (x, y) = (x as i64, y as i64);
        let (x0, x1) = (self.x as i64 + r, (self.x + self.w) as i64 - 1 - r);
        let (y0, y1) = (self.y as i64 + r, (self.y + self.h) as i64 - 1 - r);
        let dx = (x0 - x).max(x - x1).max(0);
        let dy = (y0 - y).max(y - y1).max(0);
        dx * dx + dy * dy <= r * r
    }

    /// Covered columns of each row as `(y, x_start, x_end)`, end exclusive.
    /// Every row of a rounded rectangle is a single span.
    fn spans(&self) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        let r = self.radius();
        (self.y..self.y + self.h).map(move |y| {
            let (y0, y1) = (self.y as i64 + r, (self.y + self.h) as i64 - 1 - r);
            let dy = (y0 - y as i64).max(y as i64 - y1).max(0);
            let mut reach = ((r * r - dy * dy) as f64).sqrt() as i64;
            while reach * reach > r * r - dy * dy {
                reach -= 1;
            }
            while (reach + 1) * (reach + 1) <= r * r - dy * dy {
                reach += 1;
            }
            let inset = (r - reach) as u32;
            (y, self.x + inset, self.x + self.w - inset)
        })
    }

    /// Linear indices covered inside a `width`-wide raster.
    fn pixels(&self, width: u32) -> impl Iterator<Item = usize> + '_ {
        self.spans()
            .flat_map(move |(y, a, b)| (a..b).map(move |x| (y * width + x) as usize))
    }

    fn random(rng: &mut ChaCha8Rng, width: u32, height: u32) -> Self {
        let short = width.min(height);
        let min_side = (short / 10).max(2).min(short);
        let max_side = (short / 3).max(min_side);
        let w = rng.random_range(min_side..=max_side);
        let h = rng.random_range(min_side..=max_side);
        let x = rng.random_range(0..=width - w);
        let y = rng.random_range(0..=height - h);
        Blob { x, y, w, h }
    }

    pub fn mask(&self, width: u32, height: u32) -> Result<BinaryMask> {
        let total = crate::mask::pixel_count(width, height)? as u32;
        if self.x + self.w > width || self.y + self.h > height {
            return Err(Error::InvalidParameter(format!("{self:?} exceeds {width}x{height}")));
        }
        let mut runs = Vec::with_capacity(2 * self.h as usize + 1);
        let mut pos = 0u32;
        for (y, a, b) in self.spans() {
            let start = y * width + a;
            if start == pos && runs.len() > 1 {
                *runs.last_mut().expect("nonempty") += b - a;
            } else {
                runs.push(start - pos);
                runs.push(b - a);
            }
            pos = y * width + b;
        }
        runs.push(total - pos);
        BinaryMask::from_runs(width, height, runs)
    }
}

/// Generate a ground-truth scene: horizontal stuff bands overlaid with
/// rounded thing blobs in z-order.
pub fn generate_gt(spec: &SceneSpec, categories: &CategorySet) -> Result<SyntheticScene> {
    spec.validate(categories)?;
    let (w, h) = (spec.width, spec.height);
    let n = w as usize * h as usize;
    let mut rng = rng(spec.seed, 0);

    // Stuff bands.
    let mut pool = spec.stuff_categories.clone();
    let bands = rng.random_range(1..=pool.len().min(3)).min(h as usize);
    for i in 0..bands {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut cuts: Vec<u32> = Vec::new();
    while cuts.len() + 1 < bands {
        let c = rng.random_range(1..h);
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.sort_unstable();
    cuts.push(h);

    let thing_ids = 1..=spec.n_things as u32;
    let stuff_id = |band: usize| spec.n_things as u32 + 1 + band as u32;
    let mut id_map = vec![VOID; n];
    let mut row = 0u32;
    for (band, &end) in cuts.iter().enumerate() {
        id_map[(row * w) as usize..(end * w) as usize].fill(stuff_id(band));
        row = end;
    }

    // Things, each keeping most of its blob visible.
    let mut full_area: Vec<u64> = Vec::new();
    let mut visible: Vec<u64> = Vec::new();
    let mut thing_cats = Vec::new();
    for id in thing_ids.clone() {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let blob = Blob::random(&mut rng, w, h);
            let pixels: Vec<usize> = blob.pixels(w).collect();
            let mut taken = vec![0u64; visible.len()];
            for &p in &pixels {
                let owner = id_map[p];
                if owner != VOID && owner < id {
                    taken[owner as usize - 1] += 1;
                }
            }
            let fits = (0..visible.len()).all(|i| {
                (visible[i] - taken[i]) as f64 >= MIN_VISIBLE_FRACTION * full_area[i] as f64
            });
            if !fits {
                continue;
            }
            for (i, t) in taken.iter().enumerate() {
                visible[i] -= t;
            }
            for &p in &pixels {
                id_map[p] = id;
            }
            full_area.push(pixels.len() as u64);
            visible.push(pixels.len() as u64);
            thing_cats.push(spec.thing_categories[rng.random_range(0..spec.thing_categories.len())]);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place thing {id} of {} in a {w}x{h} scene",
                spec.n_things
            )));
        }
    }

    let mut labels: Vec<(u32, u32, bool)> = thing_ids
        .clone()
        .zip(&thing_cats)
        .map(|(id, &c)| (id, c, false))
        .collect();
    labels.extend((0..bands).map(|b| (stuff_id(b), pool[b], false)));
    let panoptic = PanopticImage::from_id_map(w, h, id_map, &labels)?;
    let semantic = panoptic_to_semantic_gt(&panoptic, categories)?;
    let instances = panoptic
        .segments()
        .iter()
        .filter(|s| categories.is_thing(s.category_id))
        .map(|s| ScoredInstance::new(s.category_id, 1.0, panoptic.segment_mask(s.id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticScene {
        panoptic,
        semantic,
        instances,
    })
}

/// Chebyshev-radius erosion; pixels outside the raster count as background.
pub fn erode(mask: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let r = radius as usize;
    let dense = crate::mask::rle_decode(mask);
    // Horizontal pass: a pixel survives if the whole row window is set.
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        let row = &dense[y * w..(y + 1) * w];
        let mut run = 0usize;
        let mut run_end = vec![0usize; w];
        for x in (0..w).rev() {
            run = if row[x] { run + 1 } else { 0 };
            run_end[x] = run;
        }
        for x in r..w.saturating_sub(r) {
            horiz[y * w + x] = run_end[x - r] > 2 * r;
        }
    }
    let mut out = vec![false; w * h];
    for x in 0..w {
        let mut run = 0usize;
        let mut run_down = vec![0usize; h];
        for y in (0..h).rev() {
            run = if horiz[y * w + x] { run + 1 } else { 0 };
            run_down[y] = run;
        }
        for y in r..h.saturating_sub(r) {
            out[y * w + x] = run_down[y - r] > 2 * r;
        }
    }
    BinaryMask::from_linear_fn(mask.width(), mask.height(), |i| out[i])
        .expect("dimensions taken from a valid mask")
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradedPredictions {
    /// Raw outputs of each expert, before routing filters anything.
    pub per_expert: BTreeMap<String, Vec<ScoredInstance>>,
    /// Noisy semantic confidence maps, one per model.
    pub semantic: Vec<SemanticConfidenceMap>,
}

impl DegradedPredictions {
    /// All expert outputs concatenated in expert-name order, i.e. what a
    /// single unrouted model would have emitted.
    pub fn unrouted(&self) -> Vec<ScoredInstance> {
        self.per_expert.values().flatten().cloned().collect()
    }
}

fn noisy_score(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (1.0 - sigma * z.abs()).clamp(0.0, 1.0)
}

/// Degrade a ground-truth scene into expert instance predictions and noisy
/// semantic confidence maps.
pub fn degrade(
    scene: &SyntheticScene,
    spec: &SceneSpec,
    routing: &ExpertRouting,
    categories: &CategorySet,
) -> Result<DegradedPredictions> {
    spec.validate(categories)?;
    let d = &spec.degradation;
    let (w, h) = (spec.width, spec.height);
    let mut rng = rng(spec.seed, 1);
    let mut per_expert: BTreeMap<String, Vec<ScoredInstance>> = routing
        .experts()
        .iter()
        .map(|e| (e.name.clone(), Vec::new()))
        .collect();
    let owner_of = |c: u32| -> Result<String> {
        routing
            .owner(c)
            .map(str::to_owned)
            .ok_or_else(|| Error::InvalidRouting(format!("no expert owns category {c}")))
    };

    for gt in &scene.instances {
        let u_drop: f64 = rng.random();
        let z_score = noisy_score(&mut rng, d.score_noise_sigma);
        let u_fp: f64 = rng.random();
        let fp_blob = Blob::random(&mut rng, w, h);
        let fp_cat = spec.thing_categories[rng.random_range(0..spec.thing_categories.len())];
        let fp_score: f64 = rng.random();

        if u_drop >= d.drop_rate {
            let mask = erode(gt.mask(), d.boundary_erosion_px);
            if !mask.is_empty() {
                let inst = ScoredInstance::new(gt.category_id(), z_score, mask)?;
                per_expert
                    .get_mut(&owner_of(gt.category_id())?)
                    .expect("owner is a routing expert")
                    .push(inst);
            }
        }
        if u_fp < d.false_positive_rate {
            let inst = ScoredInstance::new(fp_cat, fp_score, fp_blob.mask(w, h)?)?;
            per_expert
                .get_mut(&owner_of(fp_cat)?)
                .expect("owner is a routing expert")
                .push(inst);
        }
    }

    for expert in routing.experts() {
        for gt in &scene.instances {
            let u: f64 = rng.random();
            let blob = Blob::random(&mut rng, w, h);
            let score: f64 = rng.random_range(0.5..=1.0);
            if routing.owns(&expert.name, gt.category_id()) || u >= d.off_category_rate {
                continue;
            }
            let inst = ScoredInstance::new(gt.category_id(), score, blob.mask(w, h)?)?;
            per_expert
                .get_mut(&expert.name)
                .expect("expert listed above")
                .push(inst);
        }
    }

    let ids = categories.semantic_ids();
    let semantic = par::map_range(spec.semantic_models, |m| {
        noisy_confidence_map(&scene.semantic, &ids, d.semantic_flip_rate, spec.seed, m)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    Ok(DegradedPredictions {
        per_expert,
        semantic,
    })
}

/// One-hot GT (uniform on VOID), a random wrong category favoured with
/// probability `flip_rate`, plus uniform noise, renormalized.
fn noisy_confidence_map(
    gt: &LabelMap,
    ids: &[u32],
    flip_rate: f64,
    seed: u64,
    model: usize,
) -> Result<SemanticConfidenceMap> {
    let mut rng = rng(seed, 2 + model as u64);
    let k = ids.len();
    let index: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut probs = Vec::with_capacity(gt.labels().len() * k);
    let mut v = vec![0f32; k];
    for &label in gt.labels() {
        let u_flip: f64 = rng.random();
        let other = rng.random_range(0..k.max(2) - 1);
        for x in v.iter_mut() {
            *x = rng.random::<f32>() * CONFIDENCE_NOISE;
        }
        match index.get(&label) {
            Some(&truth) => {
                let hot = if u_flip < flip_rate && k > 1 {
                    // Skip over the true index so every wrong category is equally likely.
                    if other >= truth {
                        other + 1
                    } else {
                        other
                    }
                } else {
                    truth
                };
                v[hot] += 1.0;
            }
            None if label == VOID => {}
            None => return Err(Error::UnknownCategory(label)),
        }
        let sum: f32 = v.iter().sum();
        probs.extend(v.iter().map(|x| x / sum));
    }
    SemanticConfidenceMap::new(gt.width(), gt.height(), ids.to_vec(), probs)
}
