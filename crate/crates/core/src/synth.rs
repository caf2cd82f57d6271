//! Procedural walkers rendered as binary silhouettes through a pinhole camera.
//!
//! Every subject gets a [`BodyShape`] (proportions plus gait style) and every
//! walk is rendered from its own RNG stream, so any single sequence can be
//! regenerated without producing the rest of the dataset.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Covariate, DatasetIndex, Gender, RawSequence, SampleEntry, SampleKey, SubjectId, ViewAngle};
use crate::error::{GaitError, Result};
use crate::image::BinaryImage;
use crate::preprocess::{normalize_sequence, CycleConfig};
use crate::rng::{self, GaitRng};
use crate::templates::{sequence_template, TemplateKind};

/// Subject proportions in body units (leg length is roughly 0.5) and gait
/// style. Angles are radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyShape {
    pub gender: Gender,
    pub stature_m: f64,
    pub head_rx: f64,
    pub head_ry: f64,
    pub head_forward: f64,
    pub neck_len: f64,
    pub hair: f64,
    pub torso_len: f64,
    pub lean: f64,
    pub chest_depth: f64,
    pub waist_depth: f64,
    pub hip_depth: f64,
    pub thigh_len: f64,
    pub shin_len: f64,
    pub thigh_r: f64,
    pub shin_r: f64,
    pub foot_len: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub arm_r: f64,
    pub hip_swing: f64,
    pub knee_flex: f64,
    pub knee_lag: f64,
    pub arm_swing: f64,
}

fn uniform(rng: &mut GaitRng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

impl BodyShape {
    pub fn sample(gender: Gender, rng: &mut GaitRng) -> Self {
        let male = gender == Gender::Male;
        let (chest, hip) = if male {
            (uniform(rng, 0.125, 0.165), uniform(rng, 0.100, 0.130))
        } else {
            (uniform(rng, 0.105, 0.140), uniform(rng, 0.118, 0.150))
        };
        let hair = if !male && rng.random_bool(0.6) {
            uniform(rng, 0.04, 0.10)
        } else if male && rng.random_bool(0.1) {
            uniform(rng, 0.0, 0.03)
        } else {
            0.0
        };
        Self {
            gender,
            stature_m: if male { uniform(rng, 1.66, 1.88) } else { uniform(rng, 1.55, 1.74) },
            head_rx: uniform(rng, 0.050, 0.068),
            head_ry: uniform(rng, 0.058, 0.076),
            head_forward: uniform(rng, 0.0, 0.035),
            neck_len: uniform(rng, 0.018, 0.045),
            hair,
            torso_len: uniform(rng, 0.265, 0.315),
            lean: uniform(rng, 0.0, 0.09),
            chest_depth: chest,
            waist_depth: chest.min(hip) * uniform(rng, 0.82, 0.95),
            hip_depth: hip,
            thigh_len: uniform(rng, 0.225, 0.270),
            shin_len: uniform(rng, 0.215, 0.260),
            thigh_r: uniform(rng, 0.040, 0.056),
            shin_r: uniform(rng, 0.027, 0.038),
            foot_len: uniform(rng, 0.060, 0.085),
            upper_arm: uniform(rng, 0.145, 0.180),
            forearm: uniform(rng, 0.125, 0.160),
            arm_r: uniform(rng, 0.021, 0.030),
            hip_swing: uniform(rng, 0.30, 0.48),
            knee_flex: uniform(rng, 0.45, 0.90),
            knee_lag: uniform(rng, 0.1, 0.9),
            arm_swing: uniform(rng, 0.12, 0.45),
        }
    }

    /// Standing height in body units, crown to sole.
    pub fn stature_units(&self) -> f64 {
        self.torso_len * self.lean.cos() + self.neck_len + 2.0 * self.head_ry + self.thigh_len + self.shin_len + 0.8 * self.shin_r
    }

    fn jittered(&self, rng: &mut GaitRng) -> Self {
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let mut b = self.clone();
        b.hip_swing *= 1.0 + 0.03 * n.sample(rng);
        b.knee_flex *= 1.0 + 0.03 * n.sample(rng);
        b.arm_swing *= 1.0 + 0.06 * n.sample(rng);
        b.lean += 0.01 * n.sample(rng);
        b
    }
}

/// Clothing and carried-object geometry for one walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateLook {
    pub covariate: Covariate,
    pub coat_extra: f64,
    pub coat_hem: f64,
    pub bag_rx: f64,
    pub bag_ry: f64,
    pub bag_drop: f64,
}

impl CovariateLook {
    /// Mid-range geometry for `covariate`.
    pub fn plain(covariate: Covariate) -> Self {
        Self {
            covariate,
            coat_extra: 0.032,
            coat_hem: 0.16,
            bag_rx: 0.045,
            bag_ry: 0.065,
            bag_drop: 0.0,
        }
    }

    pub fn sample(covariate: Covariate, rng: &mut GaitRng) -> Self {
        Self {
            covariate,
            coat_extra: uniform(rng, 0.025, 0.042),
            coat_hem: uniform(rng, 0.10, 0.20),
            bag_rx: uniform(rng, 0.030, 0.060),
            bag_ry: uniform(rng, 0.050, 0.080),
            bag_drop: uniform(rng, -0.04, 0.05),
        }
    }
}

/// Where and how large the figure appears in the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Column of the hip joint.
    pub origin_x: f64,
    /// Row of the ground contact.
    pub ground_y: f64,
    /// Pixels per body unit.
    pub scale: f64,
    /// Foreshortening of forward offsets, |sin| of the heading.
    pub x_scale: f64,
    /// Visibility of side-to-side offsets, |cos| of the heading.
    pub breadth: f64,
    /// +1 when walking towards increasing columns.
    pub facing: f64,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { c: [f64; 2], rx: f64, ry: f64 },
    Capsule { a: [f64; 2], b: [f64; 2], r: f64 },
}

/// A shape plus its signed side-to-side offset from the body midline.
struct Part {
    shape: Shape,
    lateral: f64,
}

struct Polygon {
    pts: Vec<[f64; 2]>,
    /// Half-breadth added on both sides when seen from the front.
    half_breadth: f64,
}

struct Figure {
    parts: Vec<Part>,
    polygons: Vec<Polygon>,
}

const HIP_HALF: f64 = 0.045;
const SHOULDER_HALF: f64 = 0.11;
const TORSO_HALF: f64 = 0.07;

fn leg_points(body: &BodyShape, psi: f64) -> ([f64; 2], [f64; 2], [f64; 2], [f64; 2]) {
    let theta = body.hip_swing * psi.sin();
    let bend = 0.5 + 0.5 * (psi - body.knee_lag).cos();
    let kappa = body.knee_flex * bend * bend;
    let knee = [body.thigh_len * theta.sin(), body.thigh_len * theta.cos()];
    let shin = theta - kappa;
    let ankle = [knee[0] + body.shin_len * shin.sin(), knee[1] + body.shin_len * shin.cos()];
    let beta = -0.6 * shin;
    let toe = [ankle[0] + body.foot_len * beta.cos(), ankle[1] + body.foot_len * beta.sin()];
    (knee, ankle, toe, [ankle[0] - 0.015, ankle[1]])
}

/// Shapes in body units: hip joint at the origin, x forward, y down.
fn build_figure(body: &BodyShape, phase: f64, look: &CovariateLook) -> Figure {
    let mut parts = Vec::with_capacity(16);
    let mut push = |shape: Shape, lateral: f64| parts.push(Part { shape, lateral });
    let mut polygons = Vec::with_capacity(2);
    let coat = look.covariate == Covariate::Coat;
    let extra = if coat { look.coat_extra } else { 0.0 };

    let neck = [body.torso_len * body.lean.sin(), -body.torso_len * body.lean.cos()];
    let along = |s: f64| [neck[0] * s, neck[1] * s];
    let mut front = Vec::new();
    let mut back = Vec::new();
    for (s, depth, fwd) in [
        (-0.12, body.hip_depth * 0.9, 0.0),
        (0.0, body.hip_depth, 0.0),
        (0.35, body.waist_depth, 0.05),
        (0.75, body.chest_depth, 0.12),
        (0.93, body.chest_depth * 0.85, 0.05),
        (1.0, body.chest_depth * 0.55, 0.0),
    ] {
        let c = along(s);
        let half = depth / 2.0 + extra;
        let shift = fwd * depth;
        front.push([c[0] + half + shift, c[1]]);
        back.push([c[0] - half + shift * 0.3, c[1]]);
    }
    back.reverse();
    front.extend(back);
    polygons.push(Polygon {
        pts: front,
        half_breadth: TORSO_HALF + extra,
    });

    let head = [neck[0] + body.head_forward, neck[1] - body.neck_len - body.head_ry];
    push(
        Shape::Capsule {
            a: neck,
            b: [neck[0] + body.head_forward * 0.5, neck[1] - body.neck_len - body.head_ry * 0.5],
            r: 0.026,
        },
        0.0,
    );
    push(
        Shape::Ellipse {
            c: head,
            rx: body.head_rx,
            ry: body.head_ry,
        },
        0.0,
    );
    if body.hair > 0.0 {
        push(
            Shape::Ellipse {
                c: [head[0] - body.head_rx * 0.55, head[1] + body.hair * 0.5],
                rx: body.head_rx * 0.65,
                ry: body.head_ry * 0.55 + body.hair * 0.5,
            },
            0.0,
        );
    }

    for (psi, side) in [(phase, -1.0), (phase + PI, 1.0)] {
        let (knee, ankle, toe, heel) = leg_points(body, psi);
        let hip = side * HIP_HALF;
        push(
            Shape::Capsule {
                a: [0.0, 0.0],
                b: knee,
                r: body.thigh_r,
            },
            hip,
        );
        push(
            Shape::Capsule {
                a: knee,
                b: ankle,
                r: body.shin_r,
            },
            hip,
        );
        push(
            Shape::Capsule {
                a: heel,
                b: toe,
                r: body.shin_r * 0.8,
            },
            hip,
        );

        let shoulder = [neck[0], neck[1] + 0.04];
        let alpha = -body.arm_swing * psi.sin();
        let elbow = [shoulder[0] + body.upper_arm * alpha.sin(), shoulder[1] + body.upper_arm * alpha.cos()];
        let fore = alpha + 0.3;
        let wrist = [elbow[0] + body.forearm * fore.sin(), elbow[1] + body.forearm * fore.cos()];
        let r = body.arm_r + if coat { 0.012 } else { 0.0 };
        push(Shape::Capsule { a: shoulder, b: elbow, r }, side * SHOULDER_HALF);
        push(Shape::Capsule { a: elbow, b: wrist, r }, side * (SHOULDER_HALF + 0.01));
    }

    match look.covariate {
        Covariate::Normal => {}
        Covariate::Coat => {
            let half = body.hip_depth / 2.0 + extra;
            let flare = 0.03;
            polygons.push(Polygon {
                pts: vec![
                    [half, -0.02],
                    [half + flare, look.coat_hem],
                    [-half - flare, look.coat_hem],
                    [-half, -0.02],
                ],
                half_breadth: TORSO_HALF + extra + flare,
            });
        }
        Covariate::Bag => {
            let waist = along(0.2);
            push(
                Shape::Ellipse {
                    c: [waist[0] + 0.01 * phase.sin(), waist[1] + look.bag_drop],
                    rx: body.hip_depth / 2.0 + look.bag_rx,
                    ry: look.bag_ry,
                },
                TORSO_HALF,
            );
        }
    }
    Figure { parts, polygons }
}

fn lowest_point(body: &BodyShape, phase: f64) -> f64 {
    [phase, phase + PI]
        .into_iter()
        .map(|psi| {
            let (_, _, toe, heel) = leg_points(body, psi);
            toe[1].max(heel[1]) + body.shin_r * 0.8
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn fill_ellipse(img: &mut BinaryImage, c: [f64; 2], rx: f64, ry: f64) {
    if rx <= 0.0 || ry <= 0.0 {
        return;
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x0 = (c[0] - rx).floor().max(0.0) as usize;
    let x1 = (c[0] + rx).ceil().min(w) as usize;
    let y0 = (c[1] - ry).floor().max(0.0) as usize;
    let y1 = (c[1] + ry).ceil().min(h) as usize;
    for y in y0..y1 {
        let dy = (y as f64 + 0.5 - c[1]) / ry;
        for x in x0..x1 {
            let dx = (x as f64 + 0.5 - c[0]) / rx;
            if dx * dx + dy * dy <= 1.0 {
                img.set(x, y, true);
            }
        }
    }
}

fn fill_capsule(img: &mut BinaryImage, a: [f64; 2], b: [f64; 2], r: f64) {
    if r <= 0.0 {
        return;
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x0 = (a[0].min(b[0]) - r).floor().max(0.0) as usize;
    let x1 = (a[0].max(b[0]) + r).ceil().min(w) as usize;
    let y0 = (a[1].min(b[1]) - r).floor().max(0.0) as usize;
    let y1 = (a[1].max(b[1]) + r).ceil().min(h) as usize;
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    for y in y0..y1 {
        let py = y as f64 + 0.5;
        for x in x0..x1 {
            let px = x as f64 + 0.5;
            let t = if len2 > 0.0 {
                (((px - a[0]) * d[0] + (py - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (ex, ey) = (px - a[0] - t * d[0], py - a[1] - t * d[1]);
            if ex * ex + ey * ey <= r * r {
                img.set(x, y, true);
            }
        }
    }
}

/// Scanline fill; interior spans are extended by `widen` pixels each side.
fn fill_polygon(img: &mut BinaryImage, pts: &[[f64; 2]], widen: f64) {
    let (w, h) = (img.width(), img.height());
    let lo = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let y0 = lo.floor().max(0.0) as usize;
    let y1 = (hi.ceil().max(0.0) as usize).min(h);
    let mut xs = Vec::with_capacity(pts.len());
    for y in y0..y1 {
        let py = y as f64 + 0.5;
        xs.clear();
        let mut j = pts.len() - 1;
        for i in 0..pts.len() {
            let (pi, pj) = (pts[i], pts[j]);
            if (pi[1] > py) != (pj[1] > py) {
                xs.push((pj[0] - pi[0]) * (py - pi[1]) / (pj[1] - pi[1]) + pi[0]);
            }
            j = i;
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            let a = (span[0] - widen - 0.5).ceil().max(0.0) as usize;
            let b = ((span[1] + widen - 0.5).floor() + 1.0).clamp(0.0, w as f64) as usize;
            for x in a..b {
                img.set(x, y, true);
            }
        }
    }
}

/// Rasterizes one pose onto a blank `width`×`height` canvas. `noise` adds
/// per-shape Gaussian jitter (in pixels) to positions and radii.
pub fn render_pose(
    body: &BodyShape,
    phase: f64,
    look: &CovariateLook,
    place: &Placement,
    (width, height): (usize, usize),
    mut noise: Option<(&mut GaitRng, f64)>,
) -> BinaryImage {
    let fig = build_figure(body, phase, look);
    let ground = lowest_point(body, phase);
    let s = place.scale;
    let xs = place.x_scale * place.facing;
    let map = |p: [f64; 2]| [place.origin_x + xs * s * p[0], place.ground_y + s * (p[1] - ground)];
    let mut jitter = |sd_scale: f64| match noise.as_mut() {
        Some((rng, sd)) if *sd > 0.0 => {
            let z: f64 = rand_distr::StandardNormal.sample(*rng);
            z * *sd * sd_scale
        }
        _ => 0.0,
    };
    let side = s * place.breadth;
    let mut img = BinaryImage::new(width, height);
    for poly in &fig.polygons {
        let (dx, dy) = (jitter(0.5), jitter(0.5));
        let pts: Vec<[f64; 2]> = poly.pts.iter().map(|&p| map(p)).map(|p| [p[0] + dx, p[1] + dy]).collect();
        fill_polygon(&mut img, &pts, side * poly.half_breadth);
    }
    for part in &fig.parts {
        let lat = side * part.lateral;
        match part.shape {
            Shape::Ellipse { c, rx, ry } => {
                let c = map(c);
                let c = [c[0] + lat + jitter(0.5), c[1] + jitter(0.5)];
                let dr = jitter(1.0);
                fill_ellipse(&mut img, c, rx * s + dr, ry * s + dr);
            }
            Shape::Capsule { a, b, r } => {
                let (a, b) = (map(a), map(b));
                let (dx, dy) = (lat + jitter(0.5), jitter(0.5));
                let r = r * s + jitter(1.0);
                fill_capsule(&mut img, [a[0] + dx, a[1] + dy], [b[0] + dx, b[1] + dy], r);
            }
        }
    }
    img
}

/// Renders one pose onto a 240×240 canvas with the figure about 200 pixels
/// tall and no jitter; convenient for comparing covariates at a fixed pose.
pub fn render_silhouette(body: &BodyShape, phase: f64, covariate: Covariate) -> BinaryImage {
    let scale = 200.0 / body.stature_units();
    let place = Placement {
        origin_x: 120.0,
        ground_y: 220.0,
        scale,
        x_scale: 1.0,
        breadth: 0.0,
        facing: 1.0,
    };
    render_pose(body, phase, &CovariateLook::plain(covariate), &place, (240, 240), None)
}

/// Pinhole camera watching a straight walk centred `distance` metres away.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub distance: f64,
    pub height_m: f64,
    pub walk_length: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            focal: 470.0,
            distance: 8.0,
            height_m: 1.2,
            walk_length: 2.0,
        }
    }
}

impl CameraSpec {
    /// Placement of a walker `progress` ∈ [0, 1] along a path with heading
    /// `view` (90° frontoparallel, 0° straight towards the camera).
    pub fn placement(&self, body: &BodyShape, view: ViewAngle, progress: f64) -> Placement {
        let th = (view.degrees() as f64).to_radians();
        let offset = (progress - 0.5) * self.walk_length;
        let x = offset * th.sin();
        let z = self.distance - offset * th.cos();
        let f_z = self.focal / z;
        Placement {
            origin_x: self.width as f64 / 2.0 + f_z * x,
            ground_y: self.height as f64 / 2.0 + f_z * self.height_m,
            scale: f_z * body.stature_m / body.stature_units(),
            x_scale: th.sin().abs(),
            breadth: th.cos().abs(),
            facing: 1.0,
        }
    }
}

/// Everything needed to render one walk apart from the body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkParams {
    pub view: ViewAngle,
    pub look: CovariateLook,
    pub frames: usize,
    /// Frames per step; a full gait cycle is two steps.
    pub period: f64,
    pub phase0: f64,
    pub noise_px: f64,
}

pub fn render_walk(body: &BodyShape, camera: &CameraSpec, walk: &WalkParams, rng: &mut GaitRng) -> Vec<BinaryImage> {
    let n = walk.frames;
    (0..n)
        .map(|t| {
            let progress = if n > 1 { t as f64 / (n - 1) as f64 } else { 0.5 };
            let place = camera.placement(body, walk.view, progress);
            let phase = walk.phase0 + PI * t as f64 / walk.period;
            render_pose(body, phase, &walk.look, &place, (camera.width, camera.height), Some((rng, walk.noise_px)))
        })
        .collect()
}

/// Shape of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub subjects: u32,
    pub normal_runs: u8,
    pub bag_runs: u8,
    pub coat_runs: u8,
    pub views: Vec<ViewAngle>,
    pub frames: usize,
    /// Frames per step.
    pub period: f64,
    /// Half-width of the uniform per-walk period perturbation.
    pub period_jitter: f64,
    pub female_fraction: f64,
    pub noise_px: f64,
    pub camera: CameraSpec,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subjects: 10,
            normal_runs: 6,
            bag_runs: 2,
            coat_runs: 2,
            views: vec![ViewAngle::SAGITTAL],
            frames: 40,
            period: 12.0,
            period_jitter: 0.5,
            female_fraction: 0.5,
            noise_px: 0.35,
            camera: CameraSpec::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 {
            return Err(GaitError::invalid("synthetic spec needs at least one subject"));
        }
        if self.views.is_empty() || self.normal_runs as usize + self.bag_runs as usize + self.coat_runs as usize == 0 {
            return Err(GaitError::invalid("synthetic spec produces no sequences"));
        }
        if self.frames < 2 {
            return Err(GaitError::invalid("synthetic sequences need at least two frames"));
        }
        if self.period.is_nan() || self.period <= 1.0 || self.period_jitter < 0.0 || self.period_jitter >= self.period - 1.0 {
            return Err(GaitError::invalid("gait period must exceed one frame"));
        }
        if !(0.0..=1.0).contains(&self.female_fraction) || self.noise_px < 0.0 {
            return Err(GaitError::invalid("female fraction must lie in [0, 1] and noise must be non-negative"));
        }
        Ok(())
    }

    fn runs(&self, cov: Covariate) -> u8 {
        match cov {
            Covariate::Normal => self.normal_runs,
            Covariate::Bag => self.bag_runs,
            Covariate::Coat => self.coat_runs,
        }
    }

    pub fn keys(&self) -> Vec<SampleKey> {
        let mut keys = Vec::new();
        for sid in 1..=self.subjects {
            for cov in Covariate::ALL {
                for run in 1..=self.runs(cov) {
                    for &view in &self.views {
                        keys.push(SampleKey::new(sid, cov, run, view));
                    }
                }
            }
        }
        keys
    }
}

/// Subjects of a synthetic population; walks are rendered on demand.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub spec: SynthSpec,
    pub seed: u64,
    bodies: Vec<BodyShape>,
}

impl SynthWorld {
    pub fn new(spec: SynthSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let n = spec.subjects as usize;
        let females = (spec.female_fraction * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, &[3]));
        let mut genders = vec![Gender::Male; n];
        for &i in &order[..females] {
            genders[i] = Gender::Female;
        }
        let bodies = genders
            .iter()
            .enumerate()
            .map(|(i, &g)| BodyShape::sample(g, &mut rng::stream(seed, &[1, i as u64 + 1])))
            .collect();
        Ok(Self { spec, seed, bodies })
    }

    pub fn keys(&self) -> Vec<SampleKey> {
        self.spec.keys()
    }

    pub fn body(&self, subject: SubjectId) -> Option<&BodyShape> {
        self.bodies.get((subject as usize).checked_sub(1)?)
    }

    pub fn gender(&self, subject: SubjectId) -> Option<Gender> {
        self.body(subject).map(|b| b.gender)
    }

    pub fn genders(&self) -> BTreeMap<SubjectId, Gender> {
        self.bodies.iter().enumerate().map(|(i, b)| (i as SubjectId + 1, b.gender)).collect()
    }

    pub fn render(&self, key: &SampleKey) -> Result<RawSequence> {
        let body = self
            .body(key.subject)
            .ok_or_else(|| GaitError::invalid(format!("subject {} is not in the synthetic population", key.subject)))?;
        let mut rng = rng::stream(
            self.seed,
            &[2, key.subject as u64, key.covariate.index() as u64, key.run as u64, key.view.degrees() as u64],
        );
        let body = body.jittered(&mut rng);
        let j = self.spec.period_jitter;
        let walk = WalkParams {
            view: key.view,
            look: CovariateLook::sample(key.covariate, &mut rng),
            frames: self.spec.frames,
            period: self.spec.period + if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 },
            phase0: rng.random_range(0.0..TAU),
            noise_px: self.spec.noise_px,
        };
        let frames = render_walk(&body, &self.spec.camera, &walk, &mut rng);
        Ok(RawSequence { key: *key, frames })
    }

    /// Renders, normalizes and reduces every walk to a flattened template,
    /// one sequence at a time so that only the templates stay in memory.
    pub fn templates(&self, kind: TemplateKind, cfg: &CycleConfig) -> Result<BTreeMap<SampleKey, Vec<f64>>> {
        self.keys()
            .par_iter()
            .map(|k| {
                let frames = normalize_sequence(&self.render(k)?.frames)?;
                Ok((*k, sequence_template(kind, &frames, cfg)?.0.into_vec()))
            })
            .collect()
    }
}

/// A fully rendered synthetic dataset.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub index: DatasetIndex,
    pub sequences: Vec<RawSequence>,
    pub genders: BTreeMap<SubjectId, Gender>,
}

impl SyntheticDataset {
    pub fn write(&self, root: &Path) -> Result<()> {
        self.sequences.par_iter().try_for_each(|s| crate::dataset::save_sequence(root, s))?;
        self.index.save(&root.join("index.json"))?;
        let genders = serde_json::to_string_pretty(&self.genders)?;
        std::fs::write(root.join("genders.json"), genders).map_err(|e| GaitError::io(root.join("genders.json").display().to_string(), e))
    }
}

/// Renders every walk of `spec`; the same seed yields identical frames.
pub fn generate_synthetic_dataset(spec: &SynthSpec, seed: u64) -> Result<SyntheticDataset> {
    let world = SynthWorld::new(spec.clone(), seed)?;
    let keys = world.keys();
    let sequences: Vec<RawSequence> = keys.par_iter().map(|k| world.render(k)).collect::<Result<_>>()?;
    let index = DatasetIndex::from_entries(
        sequences
            .iter()
            .map(|s| SampleEntry {
                key: s.key,
                path: s.key.relative_dir(),
                frames: s.frames.len(),
            })
            .collect(),
    )?;
    Ok(SyntheticDataset {
        index,
        sequences,
        genders: world.genders(),
    })
}

/// A short walk straight towards (`approaching`) or away from the camera;
/// the subject's height changes by about 20% over the pass.
pub fn coronal_walk(body: &BodyShape, camera: &CameraSpec, approaching: bool, frames: usize, rng: &mut GaitRng) -> Vec<BinaryImage> {
    let camera = CameraSpec {
        walk_length: camera.walk_length.min(1.5),
        ..*camera
    };
    let view = if approaching { ViewAngle::new(0) } else { ViewAngle::new(180) }.expect("coronal angles are valid");
    let walk = WalkParams {
        view,
        look: CovariateLook::plain(Covariate::Normal),
        frames,
        period: 12.0,
        phase0: rng.random_range(0.0..TAU),
        noise_px: 0.3,
    };
    render_walk(body, &camera, &walk, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{lower_limb_signal, normalize_sequence};

    fn small_spec() -> SynthSpec {
        SynthSpec {
            subjects: 2,
            normal_runs: 1,
            bag_runs: 1,
            coat_runs: 0,
            frames: 12,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn same_seed_same_frames() {
        let a = generate_synthetic_dataset(&small_spec(), 5).unwrap();
        let b = generate_synthetic_dataset(&small_spec(), 5).unwrap();
        assert_eq!(a.sequences, b.sequences);
        assert_eq!(a.index, b.index);
        let c = generate_synthetic_dataset(&small_spec(), 6).unwrap();
        assert_ne!(a.sequences, c.sequences);
    }

    #[test]
    fn tree_count() {
        let spec = SynthSpec {
            subjects: 4,
            normal_runs: 2,
            bag_runs: 2,
            coat_runs: 2,
            views: vec![ViewAngle::new(72).unwrap(), ViewAngle::SAGITTAL],
            frames: 3,
            ..SynthSpec::default()
        };
        let ds = generate_synthetic_dataset(&spec, 1).unwrap();
        assert_eq!(ds.index.len(), 48);
        assert!(ds.sequences.iter().all(|s| s.frames.iter().all(|f| !f.is_empty())));
    }

    #[test]
    fn zero_subjects_rejected() {
        let spec = SynthSpec {
            subjects: 0,
            ..SynthSpec::default()
        };
        assert!(generate_synthetic_dataset(&spec, 1).is_err());
    }

    #[test]
    fn coat_adds_mid_rows_only() {
        let mut rng = rng::seeded(3);
        for _ in 0..10 {
            let body = BodyShape::sample(Gender::Male, &mut rng);
            let phase = rng.random_range(0.0..TAU);
            let plain = render_silhouette(&body, phase, Covariate::Normal);
            let coat = render_silhouette(&body, phase, Covariate::Coat);
            let bb = plain.bounding_box().unwrap();
            let h = bb.height();
            let band = |img: &BinaryImage, lo: f64, hi: f64| {
                let (y0, y1) = (bb.y0 + (lo * h as f64) as usize, bb.y0 + (hi * h as f64) as usize);
                (y0..y1).map(|y| (0..240).filter(|&x| img.get(x, y)).count()).sum::<usize>()
            };
            assert!(band(&coat, 0.25, 0.75) > band(&plain, 0.25, 0.75));
            assert_eq!(band(&coat, 0.0, 0.12), band(&plain, 0.0, 0.12));
            assert_eq!(band(&coat, 0.85, 1.0), band(&plain, 0.85, 1.0));
            assert_eq!(coat.bounding_box().unwrap().y0, bb.y0);
        }
    }

    #[test]
    fn lower_limb_period_matches() {
        let spec = SynthSpec {
            subjects: 1,
            normal_runs: 1,
            bag_runs: 0,
            coat_runs: 0,
            frames: 150,
            period: 30.0,
            period_jitter: 0.0,
            camera: CameraSpec {
                walk_length: 7.0,
                width: 640,
                ..CameraSpec::default()
            },
            ..SynthSpec::default()
        };
        let ds = generate_synthetic_dataset(&spec, 11).unwrap();
        let frames = normalize_sequence(&ds.sequences[0].frames).unwrap();
        let v = lower_limb_signal(&frames).values;
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let acf = |lag: usize| (0..v.len() - lag).map(|i| (v[i] - mean) * (v[i + lag] - mean)).sum::<f64>() / (v.len() - lag) as f64;
        let best = (15..=45).max_by(|&a, &b| acf(a).total_cmp(&acf(b))).unwrap();
        assert!((29..=31).contains(&best), "autocorrelation peak at {best}");
    }

    #[test]
    fn genders_follow_fraction() {
        let spec = SynthSpec {
            subjects: 40,
            ..SynthSpec::default()
        };
        let world = SynthWorld::new(spec, 9).unwrap();
        let females = world.genders().values().filter(|&&g| g == Gender::Female).count();
        assert_eq!(females, 20);
    }

    #[test]
    fn approaching_walker_grows() {
        let mut rng = rng::seeded(4);
        let cam = CameraSpec::default();
        for i in 0..20 {
            let body = BodyShape::sample(if i % 2 == 0 { Gender::Female } else { Gender::Male }, &mut rng);
            let frames = coronal_walk(&body, &cam, true, 20, &mut rng);
            let (b0, b1) = (frames[0].bounding_box().unwrap(), frames[19].bounding_box().unwrap());
            assert!(b1.height() as f64 > 1.15 * b0.height() as f64);
            assert!(b0.iou(&b1) >= 0.5, "iou {}", b0.iou(&b1));

            let walk = WalkParams {
                view: ViewAngle::new(18).unwrap(),
                look: CovariateLook::plain(Covariate::Normal),
                frames: 20,
                period: 12.0,
                phase0: 0.0,
                noise_px: 0.0,
            };
            let frames = render_walk(&body, &cam, &walk, &mut rng);
            let (b0, b1) = (frames[0].bounding_box().unwrap(), frames[19].bounding_box().unwrap());
            assert!(b0.iou(&b1) < 0.5, "oblique iou {}", b0.iou(&b1));
        }
    }
}
