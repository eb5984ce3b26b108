//! Synthetic ellipse fields and cohorts with known geometry and class
//! structure.
//!
//! Ellipses are rasterised at 4×4 supersampling and kept where at least
//! half the subpixels fall inside. Each nucleus gets a constant hematoxylin
//! concentration; pixel concentrations receive Gaussian noise and pass
//! through the stain forward model to RGB.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use crate::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::{CaseRecord, Cohort, CohortError, DiagnosisLabel, IhcScore};
use crate::objectfeatures::{LabelMask, ObjectKind};
use crate::preprocess::StainMatrix;
use crate::raster::{Raster, RgbImage};
use crate::rng;

/// Placement attempts per field before giving up.
pub const MAX_ATTEMPTS: usize = 10_000;
const SUPERSAMPLE: usize = 4;
/// Minimum free pixels between neighbouring ellipses.
const GAP: f64 = 2.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("placed {placed} of {requested} ellipses in {attempts} attempts")]
    Infeasible { placed: usize, requested: usize, attempts: usize },
    #[error("invalid spec: {0}")]
    InvalidSpec(&'static str),
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

/// Ellipse with semi-axes `a ≥ b` and major axis at `theta` radians from
/// the +x axis, measured in image coordinates (y down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    pub fn truth(&self, id: u32) -> EllipseTruth {
        let mut orientation = -self.theta.to_degrees();
        while orientation <= -90.0 {
            orientation += 180.0;
        }
        while orientation > 90.0 {
            orientation -= 180.0;
        }
        EllipseTruth {
            id,
            cx: self.cx,
            cy: self.cy,
            area: PI * self.a * self.b,
            major_axis: 2.0 * self.a,
            minor_axis: 2.0 * self.b,
            eccentricity: (1.0 - (self.b / self.a).powi(2)).max(0.0).sqrt(),
            orientation,
        }
    }
}

/// Analytic values for one rasterised ellipse. Orientation is in degrees,
/// counter-clockwise with y pointing up, in (−90, 90].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseTruth {
    pub id: u32,
    pub cx: f64,
    pub cy: f64,
    pub area: f64,
    pub major_axis: f64,
    pub minor_axis: f64,
    pub eccentricity: f64,
    pub orientation: f64,
}

/// Labels `ellipses[i]` as `i + 1`; later ellipses win on overlap.
pub fn rasterize_ellipses(width: usize, height: usize, ellipses: &[Ellipse]) -> Raster<u32> {
    let mut labels = Raster::filled(width, height, 0u32);
    let step = 1.0 / SUPERSAMPLE as f64;
    let threshold = SUPERSAMPLE * SUPERSAMPLE / 2;
    for (i, e) in ellipses.iter().enumerate() {
        let r = e.a.max(e.b) + 1.0;
        let x0 = (e.cx - r).floor().max(0.0) as usize;
        let y0 = (e.cy - r).floor().max(0.0) as usize;
        let x1 = ((e.cx + r).ceil() as usize).min(width.saturating_sub(1));
        let y1 = ((e.cy + r).ceil() as usize).min(height.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let mut inside = 0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 - 0.5 + (sx as f64 + 0.5) * step;
                        let py = y as f64 - 0.5 + (sy as f64 + 0.5) * step;
                        inside += usize::from(e.contains(px, py));
                    }
                }
                if inside >= threshold {
                    labels.set(x, y, i as u32 + 1);
                }
            }
        }
    }
    labels
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.sd == 0.0 {
            return self.mean;
        }
        Normal::new(self.mean, self.sd).map_or(self.mean, |d| d.sample(rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PointProcess {
    Uniform,
    /// Centres scattered around `clusters` uniform seeds with Gaussian
    /// spread `sd` px.
    Clustered { clusters: usize, sd: f64 },
}

/// Distribution of nuclei in one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of nuclei per field.
    pub count: (usize, usize),
    /// Semi-minor axis in px; draws are clamped to at least 2.
    pub semi_minor: Gaussian,
    /// Uniform range of `a / b`.
    pub aspect: (f64, f64),
    pub point_process: PointProcess,
    /// Per-nucleus hematoxylin concentration.
    pub hematoxylin: Gaussian,
    /// Eosin concentration outside nuclei.
    pub eosin: f64,
    /// Pixel noise sd on every concentration.
    pub noise_sd: f64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self {
            width: 160,
            height: 160,
            count: (8, 12),
            semi_minor: Gaussian { mean: 8.0, sd: 1.0 },
            aspect: (1.0, 1.6),
            point_process: PointProcess::Uniform,
            hematoxylin: Gaussian { mean: 0.8, sd: 0.05 },
            eosin: 0.35,
            noise_sd: 0.02,
        }
    }
}

impl FieldSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if self.width == 0 || self.height == 0 {
            return Err(SynthError::InvalidSpec("field must be non-empty"));
        }
        if self.count.0 > self.count.1 {
            return Err(SynthError::InvalidSpec("count range is reversed"));
        }
        if !(self.aspect.0 >= 1.0 && self.aspect.1 >= self.aspect.0) {
            return Err(SynthError::InvalidSpec("aspect range must satisfy 1 ≤ lo ≤ hi"));
        }
        let finite = [self.semi_minor.mean, self.semi_minor.sd, self.hematoxylin.mean, self.hematoxylin.sd, self.eosin, self.noise_sd];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SynthError::InvalidSpec("distribution parameters must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipseField {
    pub image: RgbImage,
    pub mask: LabelMask,
    pub ellipses: Vec<Ellipse>,
    pub truth: Vec<EllipseTruth>,
    pub hematoxylin_levels: Vec<f64>,
}

fn place_ellipses(spec: &FieldSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Ellipse>, SynthError> {
    let requested = rng.random_range(spec.count.0..=spec.count.1);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let centres: Vec<(f64, f64)> = match spec.point_process {
        PointProcess::Uniform => Vec::new(),
        PointProcess::Clustered { clusters, .. } => {
            (0..clusters.max(1)).map(|_| (rng.random_range(0.0..w), rng.random_range(0.0..h))).collect()
        }
    };
    let mut placed: Vec<Ellipse> = Vec::with_capacity(requested);
    let mut attempts = 0;
    while placed.len() < requested {
        if attempts == MAX_ATTEMPTS {
            return Err(SynthError::Infeasible { placed: placed.len(), requested, attempts });
        }
        attempts += 1;
        let b = spec.semi_minor.sample(rng).max(2.0);
        let a = b * rng.random_range(spec.aspect.0..=spec.aspect.1);
        let theta = rng.random_range(0.0..PI);
        let (cx, cy) = match spec.point_process {
            PointProcess::Uniform => (rng.random_range(0.0..w), rng.random_range(0.0..h)),
            PointProcess::Clustered { sd, .. } => {
                let (px, py) = centres[rng.random_range(0..centres.len())];
                let jitter = Gaussian { mean: 0.0, sd };
                (px + jitter.sample(rng), py + jitter.sample(rng))
            }
        };
        let margin = a + 1.0;
        if cx < margin || cy < margin || cx > w - 1.0 - margin || cy > h - 1.0 - margin {
            continue;
        }
        let clear = placed.iter().all(|o| {
            let d2 = (o.cx - cx).powi(2) + (o.cy - cy).powi(2);
            let min = o.a + a + GAP;
            d2 >= min * min
        });
        if clear {
            placed.push(Ellipse { cx, cy, a, b, theta });
        }
    }
    Ok(placed)
}

/// Renders H&E pixels for a nucleus mask with per-object hematoxylin levels
/// (indexed by `id − 1`).
pub fn render_he(labels: &Raster<u32>, levels: &[f64], spec: &FieldSpec, rng: &mut ChaCha8Rng) -> RgbImage {
    let stains = StainMatrix::default();
    let noise = Gaussian { mean: 0.0, sd: spec.noise_sd };
    let (w, h) = labels.dims();
    let mut image = Raster::filled(w, h, [0u8; 3]);
    for y in 0..h {
        for x in 0..w {
            let id = labels.get(x, y);
            let (hc, ec) = if id == 0 { (0.05, spec.eosin) } else { (levels[id as usize - 1], 0.3 * spec.eosin) };
            let c = [(hc + noise.sample(rng)).max(0.0), (ec + noise.sample(rng)).max(0.0), 0.0];
            let rgb = stains.synthesize(c);
            image.set(x, y, rgb.map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    image
}

/// One field of non-overlapping ellipses with its analytic table.
pub fn generate_ellipse_field(spec: &FieldSpec, seed: u64) -> Result<EllipseField, SynthError> {
    spec.validate()?;
    let mut rng = rng::labeled_stream(seed, "field", 0);
    let ellipses = place_ellipses(spec, &mut rng)?;
    let labels = rasterize_ellipses(spec.width, spec.height, &ellipses);
    let levels: Vec<f64> = ellipses.iter().map(|_| spec.hematoxylin.sample(&mut rng).max(0.05)).collect();
    let image = render_he(&labels, &levels, spec, &mut rng);
    let truth = ellipses.iter().enumerate().map(|(i, e)| e.truth(i as u32 + 1)).collect();
    Ok(EllipseField {
        image,
        mask: LabelMask::new(labels, ObjectKind::Nucleus),
        ellipses,
        truth,
        hematoxylin_levels: levels,
    })
}

/// Categorical IHC distribution: probabilities of negative, positive,
/// cannot-interpret and missing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IhcDistribution(pub [f64; 4]);

impl IhcDistribution {
    fn sample(&self, rng: &mut ChaCha8Rng) -> IhcScore {
        let total: f64 = self.0.iter().sum();
        let mut u = rng.random_range(0.0..1.0) * total;
        let scores = [IhcScore::Negative, IhcScore::Positive, IhcScore::CannotInterpret, IhcScore::Missing];
        for (p, s) in self.0.iter().zip(scores) {
            if u < *p {
                return s;
            }
            u -= p;
        }
        IhcScore::Missing
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub label: DiagnosisLabel,
    pub field: FieldSpec,
    #[serde(default)]
    pub ihc: BTreeMap<String, IhcDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: Vec<SynthClass>,
    pub cores_per_class: usize,
    /// Must be a perfect square; fields are tiled into a square core.
    pub patches_per_core: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Two classes that differ only in nuclear size: minor axis 12 px
    /// against 24 px, sd 2 px.
    pub fn size_separated(cores_per_class: usize, patches_per_core: usize, seed: u64) -> Self {
        let field = |b: f64| FieldSpec { semi_minor: Gaussian { mean: b, sd: 1.0 }, ..FieldSpec::default() };
        Self {
            classes: alloc::vec![
                SynthClass { label: DiagnosisLabel::Fl, field: field(6.0), ihc: BTreeMap::new() },
                SynthClass { label: DiagnosisLabel::Dlbcl, field: field(12.0), ihc: BTreeMap::new() },
            ],
            cores_per_class,
            patches_per_core,
            seed,
        }
    }

    /// Two morphologically identical classes separated by one stain that
    /// is positive in 95% of the first class and negative in 95% of the
    /// second.
    pub fn stain_determined(stain: &str, cores_per_class: usize, patches_per_core: usize, seed: u64) -> Self {
        let field = FieldSpec { semi_minor: Gaussian { mean: 8.0, sd: 1.5 }, ..FieldSpec::default() };
        let ihc = |p: [f64; 4]| BTreeMap::from([(String::from(stain), IhcDistribution(p))]);
        Self {
            classes: alloc::vec![
                SynthClass { label: DiagnosisLabel::Dlbcl, field: field.clone(), ihc: ihc([0.05, 0.95, 0.0, 0.0]) },
                SynthClass { label: DiagnosisLabel::Tcl, field, ihc: ihc([0.95, 0.05, 0.0, 0.0]) },
            ],
            cores_per_class,
            patches_per_core,
            seed,
        }
    }

    pub fn grid_n(&self) -> Option<usize> {
        let n = (self.patches_per_core as f64).sqrt().round() as usize;
        (n * n == self.patches_per_core && n > 0).then_some(n)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.classes.len() < 2 {
            return Err(SynthError::InvalidSpec("a cohort needs at least two classes"));
        }
        if self.cores_per_class == 0 {
            return Err(SynthError::InvalidSpec("cores_per_class must be positive"));
        }
        if self.grid_n().is_none() {
            return Err(SynthError::InvalidSpec("patches_per_core must be a positive perfect square"));
        }
        let first = &self.classes[0].field;
        if self.classes.iter().any(|c| c.field.width != first.width || c.field.height != first.height) {
            return Err(SynthError::InvalidSpec("all classes must share the field size"));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].iter().any(|o| o.label == c.label) {
                return Err(SynthError::InvalidSpec("class labels must be distinct"));
            }
            c.field.validate()?;
        }
        Ok(())
    }
}

/// One synthetic case with a single tiled core.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCore {
    pub record: CaseRecord,
    pub image: RgbImage,
    /// Nucleus labels over the whole core, unique across its fields.
    pub mask: Raster<u32>,
    pub truth: Vec<EllipseTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub cohort: Cohort,
    pub cores: Vec<SynthCore>,
}

/// Case and core ids of the `index`-th generated core.
pub fn synth_ids(index: usize) -> (String, String) {
    let case = format!("S{:04}", index + 1);
    let core = format!("{case}_A");
    (case, core)
}

/// Generates `index`-th core; cores are independent given the spec seed.
pub fn generate_core(spec: &SynthSpec, index: usize) -> Result<SynthCore, SynthError> {
    spec.validate()?;
    let class = &spec.classes[index / spec.cores_per_class];
    let grid = spec.grid_n().expect("validated");
    let (fw, fh) = (class.field.width, class.field.height);
    let mut image = Raster::filled(fw * grid, fh * grid, [0u8; 3]);
    let mut mask = Raster::filled(fw * grid, fh * grid, 0u32);
    let mut truth = Vec::new();
    let mut next_id = 0u32;
    for p in 0..spec.patches_per_core {
        let field_seed = rng::derive_seed(spec.seed, &format!("core{index}/field{p}"));
        let field = generate_ellipse_field(&class.field, field_seed)?;
        let (ox, oy) = ((p % grid) * fw, (p / grid) * fh);
        for y in 0..fh {
            for x in 0..fw {
                image.set(ox + x, oy + y, field.image.get(x, y));
                let id = field.mask.labels.get(x, y);
                if id > 0 {
                    mask.set(ox + x, oy + y, id + next_id);
                }
            }
        }
        truth.extend(field.truth.iter().map(|t| EllipseTruth {
            id: t.id + next_id,
            cx: t.cx + ox as f64,
            cy: t.cy + oy as f64,
            ..*t
        }));
        next_id += field.truth.len() as u32;
    }
    let (case_id, core_id) = synth_ids(index);
    let mut record = CaseRecord::new(case_id, class.label, alloc::vec![core_id])?;
    let mut rng = rng::labeled_stream(spec.seed, "ihc", index as u64);
    for (stain, dist) in &class.ihc {
        record.ihc_scores.insert(stain.clone(), dist.sample(&mut rng));
    }
    Ok(SynthCore { record, image, mask, truth })
}

/// All cores, class by class, `cores_per_class` each.
pub fn generate_cohort(spec: &SynthSpec) -> Result<SynthCohort, SynthError> {
    spec.validate()?;
    let n = spec.classes.len() * spec.cores_per_class;
    let cores = (0..n).map(|i| generate_core(spec, i)).collect::<Result<Vec<_>, _>>()?;
    let cohort = Cohort::from_records(cores.iter().map(|c| c.record.clone()))?;
    Ok(SynthCohort { cohort, cores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectfeatures::shape_features_of;

    #[test]
    fn circle_truth() {
        let t = Ellipse { cx: 30.0, cy: 30.0, a: 20.0, b: 20.0, theta: 0.3 }.truth(1);
        assert_eq!(t.eccentricity, 0.0);
        assert!((t.area - PI * 400.0).abs() < 1e-9);
    }

    #[test]
    fn rasterised_circle_area() {
        let e = Ellipse { cx: 40.0, cy: 40.0, a: 20.0, b: 20.0, theta: 0.0 };
        let mask = LabelMask::new(rasterize_ellipses(80, 80, &[e]), ObjectKind::Nucleus);
        let obj = mask.object(1).unwrap();
        assert!((obj.area() as f64 / (PI * 400.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn orientation_convention_matches_measurement() {
        for theta in [0.2, 0.9, 2.0, 2.8] {
            let e = Ellipse { cx: 50.0, cy: 50.0, a: 25.0, b: 10.0, theta };
            let mask = LabelMask::new(rasterize_ellipses(100, 100, &[e]), ObjectKind::Nucleus);
            let f = shape_features_of(&mask.object(1).unwrap());
            let diff = (f.orientation - e.truth(1).orientation).rem_euclid(180.0);
            assert!(diff.min(180.0 - diff) < 1.5, "theta {theta}: {} vs {}", f.orientation, e.truth(1).orientation);
        }
    }

    #[test]
    fn field_is_deterministic_and_separated() {
        let spec = FieldSpec::default();
        let a = generate_ellipse_field(&spec, 17).unwrap();
        let b = generate_ellipse_field(&spec, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mask.object_ids().len(), a.truth.len());
        let mut repaired = a.mask.clone();
        repaired.repair_connectivity();
        assert_eq!(repaired, a.mask);
        assert!(!crate::preprocess::is_background(&a.image));
    }

    #[test]
    fn infeasible_field() {
        let spec = FieldSpec { width: 40, height: 40, count: (30, 30), ..FieldSpec::default() };
        assert!(matches!(generate_ellipse_field(&spec, 1), Err(SynthError::Infeasible { .. })));
    }

    #[test]
    fn cohort_balance() {
        let spec = SynthSpec::stain_determined("CD20", 3, 4, 5);
        let c = generate_cohort(&spec).unwrap();
        assert_eq!(c.cohort.len(), 6);
        let counts = c.cohort.class_counts();
        assert_eq!(counts[DiagnosisLabel::Dlbcl.code()], 3);
        assert_eq!(counts[DiagnosisLabel::Tcl.code()], 3);
        assert_eq!(c.cores[0].image.dims(), (320, 320));
        assert!(c.cores.iter().all(|k| k.record.ihc("CD20") != IhcScore::Missing));
        let ids = crate::objectfeatures::LabelMask::new(c.cores[0].mask.clone(), ObjectKind::Nucleus).object_ids();
        assert_eq!(ids.len(), c.cores[0].truth.len());
    }
}
