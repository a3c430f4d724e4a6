use ndarray::{Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::ImageSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    fn word(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }
}

const KINDS: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];
const COLORS: [(&str, [u8; 3]); 4] = [
    ("red", [220, 40, 40]),
    ("green", [40, 180, 70]),
    ("blue", [50, 80, 220]),
    ("yellow", [235, 200, 40]),
];
const BACKGROUND: [u8; 3] = [245, 245, 245];

/// Probability of choosing a relational expression when an attribute-only
/// phrasing also identifies the target uniquely.
const RELATIONAL_SHARE: f64 = 0.25;

/// Scene generator settings. Every emitted expression uniquely identifies
/// one shape in its image, so the ground-truth mask is unambiguous.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_size: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 416,
            min_shapes: 2,
            max_shapes: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.image_size % 32 != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a multiple of 32",
                self.image_size
            )));
        }
        if self.min_shapes < 2 || self.max_shapes < self.min_shapes {
            return Err(Error::Config(
                "shapes-per-image range must satisfy 2 <= min <= max".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Shape {
    pub kind: ShapeKind,
    pub color: usize,
    pub cx: f64,
    pub cy: f64,
    /// Half-extent: circle radius, square half-side, triangle scale.
    pub size: f64,
}

impl Shape {
    pub(crate) fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        match self.kind {
            ShapeKind::Circle => dx * dx + dy * dy <= self.size * self.size,
            ShapeKind::Square => dx.abs() <= self.size && dy.abs() <= self.size,
            ShapeKind::Triangle => {
                let s = self.size;
                let v = [
                    (self.cx, self.cy - s),
                    (self.cx - 0.9 * s, self.cy + 0.8 * s),
                    (self.cx + 0.9 * s, self.cy + 0.8 * s),
                ];
                let sign = |a: (f64, f64), b: (f64, f64)| {
                    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
                };
                let d0 = sign(v[0], v[1]);
                let d1 = sign(v[1], v[2]);
                let d2 = sign(v[2], v[0]);
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn analytic_area(&self) -> f64 {
        match self.kind {
            ShapeKind::Circle => std::f64::consts::PI * self.size * self.size,
            ShapeKind::Square => (2.0 * self.size) * (2.0 * self.size),
            // base 1.8 s, height 1.8 s
            ShapeKind::Triangle => 0.5 * (1.8 * self.size) * (1.8 * self.size),
        }
    }

    #[cfg(test)]
    pub(crate) fn perimeter(&self) -> f64 {
        match self.kind {
            ShapeKind::Circle => 2.0 * std::f64::consts::PI * self.size,
            ShapeKind::Square => 8.0 * self.size,
            ShapeKind::Triangle => 5.8 * self.size,
        }
    }

    fn bounding_radius(&self) -> f64 {
        match self.kind {
            ShapeKind::Circle => self.size,
            ShapeKind::Square => self.size * std::f64::consts::SQRT_2,
            ShapeKind::Triangle => self.size * 1.3,
        }
    }

    pub(crate) fn rasterize(&self, size: usize) -> Array2<u8> {
        Array2::from_shape_fn((size, size), |(y, x)| {
            u8::from(self.contains(x as f64, y as f64))
        })
    }
}

/// A candidate descriptor plus its match predicate over the scene.
struct Descriptor {
    text: String,
    matches: Vec<usize>,
    relational: bool,
}

fn descriptors(shapes: &[Shape], target: usize) -> Vec<Descriptor> {
    let t = &shapes[target];
    let color = COLORS[t.color].0;
    let kind = t.kind.word();
    let mut out = Vec::new();

    let collect = |pred: &dyn Fn(usize, &Shape) -> bool| -> Vec<usize> {
        shapes
            .iter()
            .enumerate()
            .filter(|(i, s)| pred(*i, s))
            .map(|(i, _)| i)
            .collect()
    };

    out.push(Descriptor {
        text: format!("the {color} {kind}"),
        matches: collect(&|_, s| s.color == t.color && s.kind == t.kind),
        relational: false,
    });
    out.push(Descriptor {
        text: format!("the {kind}"),
        matches: collect(&|_, s| s.kind == t.kind),
        relational: false,
    });
    out.push(Descriptor {
        text: format!("the {color} shape"),
        matches: collect(&|_, s| s.color == t.color),
        relational: false,
    });

    // Spatial relations against anchors that are themselves unique under
    // "the <color> <kind>".
    const MARGIN: f64 = 2.0;
    for (a_idx, anchor) in shapes.iter().enumerate() {
        if a_idx == target {
            continue;
        }
        let anchor_unique = shapes
            .iter()
            .filter(|s| s.color == anchor.color && s.kind == anchor.kind)
            .count()
            == 1;
        if !anchor_unique {
            continue;
        }
        let a_desc = format!("the {} {}", COLORS[anchor.color].0, anchor.kind.word());
        let rels: [(&str, Box<dyn Fn(&Shape) -> bool>); 4] = [
            ("left of", Box::new(|s: &Shape| s.cx < anchor.cx - MARGIN)),
            ("right of", Box::new(|s: &Shape| s.cx > anchor.cx + MARGIN)),
            ("above", Box::new(|s: &Shape| s.cy < anchor.cy - MARGIN)),
            ("below", Box::new(|s: &Shape| s.cy > anchor.cy + MARGIN)),
        ];
        for (rel_word, rel) in rels {
            if !rel(t) {
                continue;
            }
            out.push(Descriptor {
                text: format!("the {kind} {rel_word} {a_desc}"),
                matches: collect(&|i, s| i != a_idx && s.kind == t.kind && rel(s)),
                relational: true,
            });
        }
    }
    out
}

fn sample_scene(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Option<Vec<Shape>> {
    let n = rng.random_range(cfg.min_shapes..=cfg.max_shapes);
    let size = cfg.image_size as f64;
    let min_s = size / 10.0;
    let max_s = size / 5.0;
    let mut shapes: Vec<Shape> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..60 {
            let s = rng.random_range(min_s..max_s);
            let shape = Shape {
                kind: KINDS[rng.random_range(0..KINDS.len())],
                color: rng.random_range(0..COLORS.len()),
                cx: rng.random_range(1.5 * s..size - 1.5 * s),
                cy: rng.random_range(1.5 * s..size - 1.5 * s),
                size: s,
            };
            let clear = shapes.iter().all(|o| {
                let d = ((o.cx - shape.cx).powi(2) + (o.cy - shape.cy).powi(2)).sqrt();
                d > o.bounding_radius() + shape.bounding_radius() + 4.0
            });
            if clear {
                shapes.push(shape);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(shapes)
}

fn render(shapes: &[Shape], size: usize) -> Array3<f32> {
    let mut img = Array3::<f32>::zeros((size, size, 3));
    for y in 0..size {
        for x in 0..size {
            let mut rgb = BACKGROUND;
            for s in shapes {
                if s.contains(x as f64, y as f64) {
                    rgb = COLORS[s.color].1;
                    break;
                }
            }
            for c in 0..3 {
                img[[y, x, c]] = rgb[c] as f32 / 255.0;
            }
        }
    }
    img
}

/// Generates `n` samples. Deterministic given the config seed; scenes that
/// cannot produce a uniquely-referring expression are skipped and logged.
pub fn generate_synthetic(cfg: &SynthConfig, n: usize) -> Result<Vec<ImageSample>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let max_attempts = n * 30;
    while samples.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Runtime(format!(
                "scene generation stalled after {attempts} attempts"
            )));
        }
        let Some(shapes) = sample_scene(cfg, &mut rng) else {
            log::warn!("scene placement failed, resampling");
            continue;
        };
        let target = rng.random_range(0..shapes.len());
        let mut cands = descriptors(&shapes, target);
        cands.retain(|d| d.matches == vec![target]);
        if cands.is_empty() {
            log::warn!("no unique expression for scene, skipping");
            continue;
        }
        // Relational phrasings vastly outnumber attribute ones when several
        // anchors are unique, so a uniform pick would skew the corpus toward
        // the hardest expression type. Sample the type first instead.
        let (rel, plain): (Vec<usize>, Vec<usize>) =
            (0..cands.len()).partition(|&i| cands[i].relational);
        let pool = if plain.is_empty() || (!rel.is_empty() && rng.random_bool(RELATIONAL_SHARE)) {
            &rel
        } else {
            &plain
        };
        let pick = pool[rng.random_range(0..pool.len())];
        let expression = cands[pick].text.clone();
        let gt_mask = shapes[target].rasterize(cfg.image_size);
        let image = render(&shapes, cfg.image_size);
        samples.push(ImageSample::new(image, expression, gt_mask)?);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let cfg = SynthConfig {
            image_size: 64,
            seed: 7,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg, 2).unwrap();
        let b = generate_synthetic(&cfg, 2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.expression, y.expression);
            assert_eq!(x.gt_mask, y.gt_mask);
            assert_eq!(x.image, y.image);
        }
    }

    #[test]
    fn pixel_count_tracks_analytic_area() {
        for (kind, size) in [
            (ShapeKind::Circle, 20.0),
            (ShapeKind::Square, 18.0),
            (ShapeKind::Triangle, 22.0),
        ] {
            let shape = Shape {
                kind,
                color: 0,
                cx: 50.3,
                cy: 48.7,
                size,
            };
            let mask = shape.rasterize(100);
            let count = mask.iter().filter(|&&v| v == 1).count() as f64;
            let area = shape.analytic_area();
            let tol = 2.0 * shape.perimeter() + 8.0;
            assert!(
                (count - area).abs() <= tol,
                "{kind:?}: count {count} vs area {area} (tol {tol})"
            );
        }
    }

    #[test]
    fn unique_referent_among_same_kind() {
        // one red circle and one blue circle: "the red circle" must cover
        // exactly the red one
        let shapes = vec![
            Shape {
                kind: ShapeKind::Circle,
                color: 0,
                cx: 20.0,
                cy: 20.0,
                size: 8.0,
            },
            Shape {
                kind: ShapeKind::Circle,
                color: 2,
                cx: 44.0,
                cy: 44.0,
                size: 8.0,
            },
        ];
        let ds = descriptors(&shapes, 0);
        let d = ds.iter().find(|d| d.text == "the red circle").unwrap();
        assert_eq!(d.matches, vec![0]);
        // and the plain-kind descriptor is ambiguous
        let d = ds.iter().find(|d| d.text == "the circle").unwrap();
        assert_eq!(d.matches.len(), 2);
    }

    #[test]
    fn generated_expressions_are_unique_referents() {
        let cfg = SynthConfig {
            image_size: 96,
            seed: 3,
            ..Default::default()
        };
        let samples = generate_synthetic(&cfg, 8).unwrap();
        for s in &samples {
            assert!(s.gt_mask.iter().any(|&v| v == 1));
            assert!(!s.expression.is_empty());
        }
    }
}
