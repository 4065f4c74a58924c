//! Procedural synthetic scenes: colored geometric objects on a textured
//! background, with templated questions whose answers follow from the
//! generated geometry. Each record index gets its own RNG stream, so a
//! corpus is byte-identical for a fixed (n, seed) and records can be
//! generated independently and in parallel.
//!
//! Alongside images/, masks/ and records.jsonl the generator writes
//! scenes.json, a manifest carrying the full geometry so tests can
//! re-derive every mask and every template predicate.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::codec::encode_mask_png;
use crate::data::record::{write_corpus_jsonl, Illumination, ReasoningSample, ALTITUDES_M};
use crate::error::{Error, Result};
use crate::metrics::ReasoningType;
use crate::parallel::par_map;
use crate::raster::{BinaryMask, ImageBuf};

pub const MIN_OBJECTS: usize = 3;
pub const MAX_OBJECTS: usize = 10;
pub const MIN_CANVAS: usize = 32;
/// Smallest radius whose rasterization always contains a pixel center.
const MIN_RADIUS: f32 = 1.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjColor {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
}

impl ObjColor {
    pub const ALL: [ObjColor; 6] = [
        ObjColor::Red,
        ObjColor::Green,
        ObjColor::Blue,
        ObjColor::Yellow,
        ObjColor::Purple,
        ObjColor::Orange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjColor::Red => "red",
            ObjColor::Green => "green",
            ObjColor::Blue => "blue",
            ObjColor::Yellow => "yellow",
            ObjColor::Purple => "purple",
            ObjColor::Orange => "orange",
        }
    }

    pub fn rgb(self) -> [f32; 3] {
        match self {
            ObjColor::Red => [0.85, 0.20, 0.20],
            ObjColor::Green => [0.20, 0.70, 0.25],
            ObjColor::Blue => [0.20, 0.35, 0.85],
            ObjColor::Yellow => [0.90, 0.85, 0.20],
            ObjColor::Purple => [0.60, 0.25, 0.70],
            ObjColor::Orange => [0.90, 0.55, 0.15],
        }
    }
}

impl fmt::Display for ObjColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: ObjColor,
    pub cx: f32,
    pub cy: f32,
    pub r: f32,
}

impl SceneObject {
    pub fn describe(&self) -> String {
        format!("the {} {}", self.color, self.shape)
    }
}

/// Background texture parameters, stored so rendering stays a pure
/// function of the scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub fx: f32,
    pub fy: f32,
    pub px: f32,
    pub py: f32,
    pub noise_seed: u64,
}

/// Template identifiers; tests re-derive the target from the geometry
/// using these.
pub const TEMPLATES: [&str; 9] = [
    "leftmost",
    "rightmost",
    "nearest_landmark",
    "unique_color",
    "unique_shape",
    "largest",
    "quadrant",
    "center",
    "isolated",
];

pub const QUADRANT_NAMES: [&str; 4] = ["top-left", "top-right", "bottom-left", "bottom-right"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub canvas: usize,
    pub objects: Vec<SceneObject>,
    pub target: usize,
    pub template: String,
    /// Quadrant index for the quadrant template, absent otherwise.
    pub quadrant: Option<usize>,
    pub reasoning_type: ReasoningType,
    pub altitude_m: u32,
    pub illumination: Illumination,
    pub question: String,
    pub cot: Vec<String>,
    pub answer: String,
    pub texture: TextureParams,
}

impl Scene {
    pub fn to_sample(&self) -> ReasoningSample {
        ReasoningSample {
            id: self.id.clone(),
            image_path: format!("images/{}.png", self.id),
            mask_path: format!("masks/{}.png", self.id),
            reasoning_type: self.reasoning_type,
            question: self.question.clone(),
            cot: self.cot.clone(),
            answer: self.answer.clone(),
            altitude_m: self.altitude_m,
            illumination: self.illumination,
        }
    }
}

fn point_in_object(obj: &SceneObject, x: f32, y: f32) -> bool {
    let (dx, dy, r) = (x - obj.cx, y - obj.cy, obj.r);
    match obj.shape {
        Shape::Circle => dx * dx + dy * dy <= r * r,
        Shape::Square => dx.abs() <= r && dy.abs() <= r,
        Shape::Triangle => {
            // upright isoceles: apex (cx, cy-r), base corners (cx±r, cy+r)
            let side = |ax: f32, ay: f32, bx: f32, by: f32| -> f32 {
                (bx - ax) * (y - ay) - (by - ay) * (x - ax)
            };
            let s0 = side(obj.cx, obj.cy - r, obj.cx - r, obj.cy + r);
            let s1 = side(obj.cx - r, obj.cy + r, obj.cx + r, obj.cy + r);
            let s2 = side(obj.cx + r, obj.cy + r, obj.cx, obj.cy - r);
            (s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0) || (s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0)
        }
    }
}

/// Rasterizes one object onto an otherwise empty canvas; pixel centers
/// are at (col + 0.5, row + 0.5).
pub fn rasterize_object(obj: &SceneObject, canvas: usize) -> BinaryMask {
    let mut mask = BinaryMask::zeros(canvas, canvas);
    let y0 = ((obj.cy - obj.r).floor().max(0.0)) as usize;
    let y1 = (((obj.cy + obj.r).ceil()) as usize).min(canvas.saturating_sub(1));
    let x0 = ((obj.cx - obj.r).floor().max(0.0)) as usize;
    let x1 = (((obj.cx + obj.r).ceil()) as usize).min(canvas.saturating_sub(1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            if point_in_object(obj, x as f32 + 0.5, y as f32 + 0.5) {
                mask.set(y, x, 1);
            }
        }
    }
    mask
}

pub fn target_mask(scene: &Scene) -> BinaryMask {
    rasterize_object(&scene.objects[scene.target], scene.canvas)
}

fn hash_noise(seed: u64, y: usize, x: usize) -> f32 {
    let mut h = seed
        ^ (y as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (x as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 30;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (((h >> 40) as f32) / ((1u64 << 24) as f32) - 0.5) * 0.04
}

pub fn render_scene(scene: &Scene) -> ImageBuf {
    let c = scene.canvas;
    let t = &scene.texture;
    let mut img = ImageBuf::zeros(c, c);
    let base = [0.45f32, 0.48, 0.38];
    for y in 0..c {
        for x in 0..c {
            let wave = 0.06
                * (t.fx * x as f32 + t.px).sin()
                * (t.fy * y as f32 + t.py).sin();
            let n = hash_noise(t.noise_seed, y, x);
            let px = [
                (base[0] + wave + n).clamp(0.0, 1.0),
                (base[1] + wave + n).clamp(0.0, 1.0),
                (base[2] + wave + n).clamp(0.0, 1.0),
            ];
            img.set_pixel(y, x, px);
        }
    }
    // target drawn last so it is never occluded
    let order = (0..scene.objects.len())
        .filter(|&i| i != scene.target)
        .chain(std::iter::once(scene.target));
    for i in order {
        let obj = &scene.objects[i];
        let rgb = obj.color.rgb();
        let stamp = rasterize_object(obj, c);
        for y in 0..c {
            for x in 0..c {
                if stamp.get(y, x) == 1 {
                    img.set_pixel(y, x, rgb);
                }
            }
        }
    }
    if scene.illumination == Illumination::Night {
        let tint = [0.35f32, 0.35, 0.55];
        for y in 0..c {
            for x in 0..c {
                let p = img.pixel(y, x);
                img.set_pixel(y, x, [p[0] * tint[0], p[1] * tint[1], p[2] * tint[2]]);
            }
        }
    }
    img
}

fn gen_in(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> f32 {
    if hi <= lo {
        (lo + hi) * 0.5
    } else {
        rng.gen_range(lo..hi)
    }
}

/// (x0, x1, y0, y1) half-open bounds of quadrant q; y grows downward so
/// quadrants 0/1 are the top row.
fn quadrant_bounds(q: usize, c: f32) -> (f32, f32, f32, f32) {
    let h = c * 0.5;
    match q {
        0 => (0.0, h, 0.0, h),
        1 => (h, c, 0.0, h),
        2 => (0.0, h, h, c),
        _ => (h, c, h, c),
    }
}

fn place_in(rng: &mut ChaCha8Rng, bounds: (f32, f32, f32, f32), r: f32) -> (f32, f32) {
    let (x0, x1, y0, y1) = bounds;
    let cx = gen_in(rng, x0 + r + 1.0, x1 - r - 1.0);
    let cy = gen_in(rng, y0 + r + 1.0, y1 - r - 1.0);
    (cx, cy)
}

fn place_objects(
    rng: &mut ChaCha8Rng,
    k: usize,
    c: f32,
    r_lo: f32,
    r_hi: f32,
) -> Vec<SceneObject> {
    let mut objects: Vec<SceneObject> = Vec::with_capacity(k);
    for _ in 0..k {
        let r = gen_in(rng, r_lo, r_hi);
        let shape = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
        let color = ObjColor::ALL[rng.gen_range(0..ObjColor::ALL.len())];
        let mut cx = 0.0;
        let mut cy = 0.0;
        // rejection sampling against heavy overlap, bounded attempts
        for _ in 0..20 {
            let (x, y) = place_in(rng, (0.0, c, 0.0, c), r);
            cx = x;
            cy = y;
            let clear = objects.iter().all(|o| {
                let (dx, dy) = (o.cx - x, o.cy - y);
                dx * dx + dy * dy >= (o.r + r + 1.0) * (o.r + r + 1.0)
            });
            if clear {
                break;
            }
        }
        objects.push(SceneObject {
            shape,
            color,
            cx,
            cy,
            r,
        });
    }
    objects
}

fn recolor_unique(rng: &mut ChaCha8Rng, objects: &mut [SceneObject], idx: usize) {
    let special = ObjColor::ALL[rng.gen_range(0..ObjColor::ALL.len())];
    let rest: Vec<ObjColor> = ObjColor::ALL.iter().copied().filter(|&c| c != special).collect();
    for (i, o) in objects.iter_mut().enumerate() {
        o.color = if i == idx {
            special
        } else {
            rest[rng.gen_range(0..rest.len())]
        };
    }
}

fn reshape_unique(rng: &mut ChaCha8Rng, objects: &mut [SceneObject], idx: usize) {
    let special = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
    let rest: Vec<Shape> = Shape::ALL.iter().copied().filter(|&s| s != special).collect();
    for (i, o) in objects.iter_mut().enumerate() {
        o.shape = if i == idx {
            special
        } else {
            rest[rng.gen_range(0..rest.len())]
        };
    }
}

fn dist(a: &SceneObject, b: &SceneObject) -> f32 {
    let (dx, dy) = (a.cx - b.cx, a.cy - b.cy);
    (dx * dx + dy * dy).sqrt()
}

fn argmin_by<F: Fn(usize) -> f32>(n: usize, skip: Option<usize>, f: F) -> usize {
    let mut best = usize::MAX;
    let mut best_v = f32::INFINITY;
    for i in 0..n {
        if Some(i) == skip {
            continue;
        }
        let v = f(i);
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

pub fn generate_scene(index: usize, seed: u64, canvas: usize) -> Scene {
    assert!(canvas >= MIN_CANVAS, "canvas below supported minimum");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);

    let reasoning_type = ReasoningType::ALL[index % 3];
    let variant = (index / 3) % 3;
    let altitude_m = ALTITUDES_M[rng.gen_range(0..ALTITUDES_M.len())];
    let illumination = if rng.gen_bool(0.5) {
        Illumination::Day
    } else {
        Illumination::Night
    };
    let c = canvas as f32;
    let scale = 30.0 / altitude_m as f32;
    let r_lo = (0.05 * c * scale).max(MIN_RADIUS);
    let r_hi = (0.12 * c * scale).max(r_lo + 0.5);
    let k = rng.gen_range(MIN_OBJECTS..=MAX_OBJECTS);

    let texture = TextureParams {
        fx: rng.gen_range(0.05..0.25),
        fy: rng.gen_range(0.05..0.25),
        px: rng.gen_range(0.0..std::f32::consts::TAU),
        py: rng.gen_range(0.0..std::f32::consts::TAU),
        noise_seed: rng.gen(),
    };

    let mut objects = place_objects(&mut rng, k, c, r_lo, r_hi);
    let mut quadrant = None;

    let (template, target, question, mut cot): (&str, usize, String, Vec<String>) =
        match (reasoning_type, variant) {
            (ReasoningType::Spatial, 0) => {
                let t = argmin_by(k, None, |i| objects[i].cx);
                let desc = objects[t].describe();
                (
                    "leftmost",
                    t,
                    "segment the leftmost object".into(),
                    vec![
                        format!("the scene contains {k} objects"),
                        format!("comparing horizontal positions, {desc} lies farthest to the left"),
                    ],
                )
            }
            (ReasoningType::Spatial, 1) => {
                let t = argmin_by(k, None, |i| -objects[i].cx);
                let desc = objects[t].describe();
                (
                    "rightmost",
                    t,
                    "segment the rightmost object".into(),
                    vec![
                        format!("the scene contains {k} objects"),
                        format!("comparing horizontal positions, {desc} lies farthest to the right"),
                    ],
                )
            }
            (ReasoningType::Spatial, _) => {
                recolor_unique(&mut rng, &mut objects, 0);
                let t = argmin_by(k, Some(0), |i| dist(&objects[i], &objects[0]));
                let ldesc = objects[0].describe();
                let desc = objects[t].describe();
                (
                    "nearest_landmark",
                    t,
                    format!("segment the object nearest to {ldesc}"),
                    vec![
                        format!("locate {ldesc}, the only {} object", objects[0].color),
                        "measure the distance from each other object to it".into(),
                        format!("{desc} is nearest to {ldesc}"),
                    ],
                )
            }
            (ReasoningType::Attribute, 0) => {
                let t = rng.gen_range(0..k);
                recolor_unique(&mut rng, &mut objects, t);
                let color = objects[t].color;
                let desc = objects[t].describe();
                (
                    "unique_color",
                    t,
                    format!("segment the {color} object"),
                    vec![
                        "scan the colors of all objects".into(),
                        format!("exactly one object is {color}"),
                        format!("that object is {desc}"),
                    ],
                )
            }
            (ReasoningType::Attribute, 1) => {
                let t = rng.gen_range(0..k);
                reshape_unique(&mut rng, &mut objects, t);
                let shape = objects[t].shape;
                let desc = objects[t].describe();
                (
                    "unique_shape",
                    t,
                    format!("segment the {shape}"),
                    vec![
                        "scan the shapes of all objects".into(),
                        format!("exactly one object is a {shape}"),
                        format!("that object is {desc}"),
                    ],
                )
            }
            (ReasoningType::Attribute, _) => {
                let t = rng.gen_range(0..k);
                objects[t].r = r_hi * 1.3;
                objects[t].cx = objects[t].cx.clamp(objects[t].r + 1.0, c - objects[t].r - 1.0);
                objects[t].cy = objects[t].cy.clamp(objects[t].r + 1.0, c - objects[t].r - 1.0);
                let desc = objects[t].describe();
                (
                    "largest",
                    t,
                    "segment the largest object".into(),
                    vec![
                        "compare the sizes of all objects".into(),
                        format!("{desc} has the largest extent"),
                    ],
                )
            }
            (ReasoningType::Scene, 0) => {
                let q = rng.gen_range(0..4);
                quadrant = Some(q);
                let t = rng.gen_range(0..k);
                for (i, o) in objects.iter_mut().enumerate() {
                    let bq = if i == t {
                        q
                    } else {
                        // any quadrant except the target's
                        let mut other = rng.gen_range(0..3);
                        if other >= q {
                            other += 1;
                        }
                        other
                    };
                    let (cx, cy) = place_in(&mut rng, quadrant_bounds(bq, c), o.r);
                    o.cx = cx;
                    o.cy = cy;
                }
                let name = QUADRANT_NAMES[q];
                let desc = objects[t].describe();
                (
                    "quadrant",
                    t,
                    format!("segment the object in the {name} region"),
                    vec![
                        "divide the scene into four regions".into(),
                        format!("only {desc} lies in the {name} region"),
                    ],
                )
            }
            (ReasoningType::Scene, 1) => {
                let t = argmin_by(k, None, |i| {
                    let (dx, dy) = (objects[i].cx - c * 0.5, objects[i].cy - c * 0.5);
                    dx * dx + dy * dy
                });
                let desc = objects[t].describe();
                (
                    "center",
                    t,
                    "segment the object closest to the image center".into(),
                    vec![
                        "find the center of the image".into(),
                        format!("{desc} is closest to the center"),
                    ],
                )
            }
            (ReasoningType::Scene, _) => {
                let t = argmin_by(k, None, |i| {
                    -(0..k)
                        .filter(|&j| j != i)
                        .map(|j| dist(&objects[i], &objects[j]))
                        .fold(f32::INFINITY, f32::min)
                });
                let desc = objects[t].describe();
                (
                    "isolated",
                    t,
                    "segment the most isolated object".into(),
                    vec![
                        "measure each object's distance to its nearest neighbor".into(),
                        format!("{desc} is farthest from every other object"),
                    ],
                )
            }
        };

    let answer = objects[target].describe();
    cot.push(format!("select {answer}"));

    Scene {
        id: format!("synth_{index:05}"),
        canvas,
        objects,
        target,
        template: template.to_string(),
        quadrant,
        reasoning_type,
        altitude_m,
        illumination,
        question,
        cot,
        answer,
        texture,
    }
}

pub struct SynthOutput {
    pub samples: Vec<ReasoningSample>,
    pub scenes: Vec<Scene>,
}

pub fn synthesize_dataset(root: &Path, n: usize, seed: u64, canvas: usize) -> Result<SynthOutput> {
    if n == 0 {
        return Err(Error::input("synthesis requires n >= 1"));
    }
    if canvas < MIN_CANVAS {
        return Err(Error::input(format!(
            "canvas {canvas} below supported minimum {MIN_CANVAS}"
        )));
    }
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("masks"))?;
    let indices: Vec<usize> = (0..n).collect();
    let built = par_map(&indices, |&i| {
        let scene = generate_scene(i, seed, canvas);
        let image = render_scene(&scene);
        let mask = target_mask(&scene);
        (scene, image, mask)
    });
    let mut samples = Vec::with_capacity(n);
    let mut scenes = Vec::with_capacity(n);
    for (scene, image, mask) in built {
        debug_assert!(!mask.is_empty(), "synthetic target mask must be nonempty");
        image.save_png(&root.join(format!("images/{}.png", scene.id)))?;
        encode_mask_png(&mask, &root.join(format!("masks/{}.png", scene.id)))?;
        samples.push(scene.to_sample());
        scenes.push(scene);
    }
    write_corpus_jsonl(&root.join("records.jsonl"), &samples)?;
    fs::write(
        root.join("scenes.json"),
        serde_json::to_string_pretty(&scenes)?,
    )?;
    Ok(SynthOutput { samples, scenes })
}

pub fn read_scenes(path: &Path) -> Result<Vec<Scene>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::codec::decode_mask_png;
    use crate::data::record::read_corpus_jsonl;
    use crate::metrics::iou;

    fn scene_target_by_predicate(scene: &Scene) -> usize {
        let objs = &scene.objects;
        let k = objs.len();
        let c = scene.canvas as f32;
        match scene.template.as_str() {
            "leftmost" => argmin_by(k, None, |i| objs[i].cx),
            "rightmost" => argmin_by(k, None, |i| -objs[i].cx),
            "nearest_landmark" => argmin_by(k, Some(0), |i| dist(&objs[i], &objs[0])),
            "unique_color" => {
                let t = scene.target;
                assert!(
                    objs.iter().enumerate().all(|(i, o)| (o.color == objs[t].color) == (i == t)),
                    "target color must be unique"
                );
                t
            }
            "unique_shape" => {
                let t = scene.target;
                assert!(
                    objs.iter().enumerate().all(|(i, o)| (o.shape == objs[t].shape) == (i == t)),
                    "target shape must be unique"
                );
                t
            }
            "largest" => argmin_by(k, None, |i| -objs[i].r),
            "quadrant" => {
                let q = scene.quadrant.unwrap();
                let (x0, x1, y0, y1) = quadrant_bounds(q, c);
                let inside: Vec<usize> = (0..k)
                    .filter(|&i| {
                        objs[i].cx >= x0 && objs[i].cx < x1 && objs[i].cy >= y0 && objs[i].cy < y1
                    })
                    .collect();
                assert_eq!(inside.len(), 1, "exactly one object in the named quadrant");
                inside[0]
            }
            "center" => argmin_by(k, None, |i| {
                let (dx, dy) = (objs[i].cx - c * 0.5, objs[i].cy - c * 0.5);
                dx * dx + dy * dy
            }),
            "isolated" => argmin_by(k, None, |i| {
                -(0..k)
                    .filter(|&j| j != i)
                    .map(|j| dist(&objs[i], &objs[j]))
                    .fold(f32::INFINITY, f32::min)
            }),
            other => panic!("unknown template {other}"),
        }
    }

    #[test]
    fn types_are_balanced() {
        let mut counts = [0usize; 3];
        for i in 0..6 {
            counts[generate_scene(i, 5, 64).reasoning_type.index()] += 1;
        }
        assert_eq!(counts, [2, 2, 2]);
        let mut counts7 = [0usize; 3];
        for i in 0..7 {
            counts7[generate_scene(i, 5, 64).reasoning_type.index()] += 1;
        }
        assert_eq!(counts7.iter().max(), Some(&3));
        assert_eq!(counts7.iter().sum::<usize>(), 7);
    }

    #[test]
    fn scenes_have_valid_structure() {
        for i in 0..30 {
            let s = generate_scene(i, 11, 64);
            assert!((MIN_OBJECTS..=MAX_OBJECTS).contains(&s.objects.len()));
            assert!(s.target < s.objects.len());
            assert!(!s.question.is_empty());
            assert!(!s.answer.is_empty());
            assert!(s.cot.len() >= 2);
            assert!(TEMPLATES.contains(&s.template.as_str()));
            assert!(ALTITUDES_M.contains(&s.altitude_m));
        }
    }

    #[test]
    fn template_predicate_identifies_the_stored_target() {
        for i in 0..60 {
            let s = generate_scene(i, 23, 64);
            assert_eq!(
                scene_target_by_predicate(&s),
                s.target,
                "template {} index {i}",
                s.template
            );
        }
    }

    #[test]
    fn masks_are_nonempty_and_unclipped() {
        for i in 0..30 {
            let s = generate_scene(i, 31, 64);
            let mask = target_mask(&s);
            assert!(!mask.is_empty(), "index {i}");
            for e in 0..64 {
                assert_eq!(mask.get(0, e) + mask.get(63, e), 0, "row border, index {i}");
                assert_eq!(mask.get(e, 0) + mask.get(e, 63), 0, "col border, index {i}");
            }
        }
    }

    #[test]
    fn answer_matches_target_description() {
        for i in 0..12 {
            let s = generate_scene(i, 41, 64);
            assert_eq!(s.answer, s.objects[s.target].describe());
            assert_eq!(s.cot.last().unwrap(), &format!("select {}", s.answer));
        }
    }

    #[test]
    fn written_masks_match_geometry_oracle_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let out = synthesize_dataset(dir.path(), 9, 77, 64).unwrap();
        let scenes = read_scenes(&dir.path().join("scenes.json")).unwrap();
        assert_eq!(scenes, out.scenes);
        for scene in &scenes {
            let written =
                decode_mask_png(&dir.path().join(format!("masks/{}.png", scene.id))).unwrap();
            let oracle = target_mask(scene);
            assert_eq!(written.data(), oracle.data());
            assert_eq!(iou(&written, &oracle).unwrap().iou, 1.0);
        }
    }

    #[test]
    fn corpus_files_parse_and_are_shape_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let out = synthesize_dataset(dir.path(), 6, 3, 64).unwrap();
        let records = read_corpus_jsonl(&dir.path().join("records.jsonl"), true).unwrap();
        assert_eq!(records, out.samples);
        for r in &records {
            let (image, mask) = r.load(dir.path()).unwrap();
            assert_eq!((image.height, image.width), (64, 64));
            assert!(!mask.is_empty());
        }
    }

    #[test]
    fn same_seed_is_byte_identical_different_seed_differs() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c = tempfile::tempdir().unwrap();
        synthesize_dataset(a.path(), 5, 9, 64).unwrap();
        synthesize_dataset(b.path(), 5, 9, 64).unwrap();
        synthesize_dataset(c.path(), 5, 10, 64).unwrap();
        let read = |root: &Path, rel: String| fs::read(root.join(rel)).unwrap();
        let mut any_diff = false;
        for rel in ["records.jsonl".to_string(), "scenes.json".to_string()]
            .into_iter()
            .chain((0..5).map(|i| format!("images/synth_{i:05}.png")))
            .chain((0..5).map(|i| format!("masks/synth_{i:05}.png")))
        {
            assert_eq!(
                read(a.path(), rel.clone()),
                read(b.path(), rel.clone()),
                "{rel}"
            );
            if read(a.path(), rel.clone()) != read(c.path(), rel.clone()) {
                any_diff = true;
            }
        }
        assert!(any_diff, "different seeds must change the corpus");
    }

    #[test]
    fn altitude_scales_object_sizes() {
        // radii sampled at 30 m must on average exceed those at 100 m
        let mut lo_alt = Vec::new();
        let mut hi_alt = Vec::new();
        for i in 0..200 {
            let s = generate_scene(i, 55, 64);
            let mean_r: f32 =
                s.objects.iter().map(|o| o.r).sum::<f32>() / s.objects.len() as f32;
            match s.altitude_m {
                30 => lo_alt.push(mean_r),
                100 => hi_alt.push(mean_r),
                _ => {}
            }
        }
        let avg = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
        assert!(!lo_alt.is_empty() && !hi_alt.is_empty());
        assert!(avg(&lo_alt) > 1.5 * avg(&hi_alt));
    }

    #[test]
    fn night_scenes_are_darker() {
        let mut day = None;
        let mut night = None;
        for i in 0..40 {
            let s = generate_scene(i, 67, 64);
            let img = render_scene(&s);
            let mean: f32 = img.data().iter().sum::<f32>() / img.data().len() as f32;
            match s.illumination {
                Illumination::Day if day.is_none() => day = Some(mean),
                Illumination::Night if night.is_none() => night = Some(mean),
                _ => {}
            }
            if day.is_some() && night.is_some() {
                break;
            }
        }
        assert!(night.unwrap() < day.unwrap());
    }

    #[test]
    fn zero_samples_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(synthesize_dataset(dir.path(), 0, 1, 64).is_err());
    }
}
