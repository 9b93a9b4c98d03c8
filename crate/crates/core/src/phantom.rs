//! Synthetic dual-energy chest slices.
//!
//! Each slice is a torso ellipse of soft tissue holding two lung ellipses,
//! a handful of contrast-filled vessels inside the lungs and, with
//! probability `lesion_prob`, one embolism-like filling defect inside a
//! vessel. The same geometry is rendered twice, once with polyenergetic
//! class means and once with 40 keV monoenergetic ones, each with its own
//! Gaussian noise. All HU numbers here are synthetic design values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HU_MIN: f64 = -1000.0;
pub const HU_MAX: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TissueClass {
    pub name: &'static str,
    pub hu_poly: f64,
    pub hu_mono40: f64,
    pub noise_poly: f64,
    pub noise_mono: f64,
}

impl TissueClass {
    pub const fn new(name: &'static str, hu_poly: f64, hu_mono40: f64, noise_poly: f64, noise_mono: f64) -> Self {
        TissueClass { name, hu_poly, hu_mono40, noise_poly, noise_mono }
    }

    pub fn mean(&self, domain: Domain) -> f64 {
        match domain {
            Domain::Poly => self.hu_poly,
            Domain::Mono40 => self.hu_mono40,
        }
    }

    pub fn noise(&self, domain: Domain) -> f64 {
        match domain {
            Domain::Poly => self.noise_poly,
            Domain::Mono40 => self.noise_mono,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Poly,
    Mono40,
}

/// Pixel label after rasterization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tissue {
    Air,
    Lung,
    SoftTissue,
    Vessel,
    Embolism,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassTable {
    pub air: TissueClass,
    pub lung: TissueClass,
    pub soft_tissue: TissueClass,
    pub vessel: TissueClass,
    pub embolism: TissueClass,
}

impl Default for ClassTable {
    fn default() -> Self {
        ClassTable {
            air: TissueClass::new("air", -1000.0, -1000.0, 20.0, 12.0),
            lung: TissueClass::new("lung", -800.0, -780.0, 40.0, 24.0),
            soft_tissue: TissueClass::new("soft tissue", 40.0, 55.0, 50.0, 30.0),
            vessel: TissueClass::new("contrast vessel", 350.0, 900.0, 60.0, 35.0),
            embolism: TissueClass::new("embolism defect", 60.0, 80.0, 50.0, 30.0),
        }
    }
}

impl ClassTable {
    pub fn get(&self, t: Tissue) -> &TissueClass {
        match t {
            Tissue::Air => &self.air,
            Tissue::Lung => &self.lung,
            Tissue::SoftTissue => &self.soft_tissue,
            Tissue::Vessel => &self.vessel,
            Tissue::Embolism => &self.embolism,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &TissueClass> {
        [&self.air, &self.lung, &self.soft_tissue, &self.vessel, &self.embolism].into_iter()
    }

    /// |mean difference| / sqrt(sum of variances) between vessel and defect.
    pub fn lesion_cnr(&self, domain: Domain) -> f64 {
        let (v, e) = (&self.vessel, &self.embolism);
        (v.mean(domain) - e.mean(domain)).abs() / (v.noise(domain).powi(2) + e.noise(domain).powi(2)).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub classes: ClassTable,
    pub lesion_prob: f64,
    /// Inclusive range of vessels per slice.
    pub vessel_count: (usize, usize),
    /// Vessel radius range as a fraction of the image width.
    pub vessel_radius: (f64, f64),
    /// Defect radius range as a fraction of its vessel's radius.
    pub defect_fraction: (f64, f64),
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            height: 64,
            width: 64,
            classes: ClassTable::default(),
            lesion_prob: 0.5,
            vessel_count: (2, 5),
            vessel_radius: (0.09, 0.13),
            defect_fraction: (0.3, 0.7),
        }
    }
}

impl PhantomSpec {
    pub fn with_size(size: usize) -> Self {
        PhantomSpec { height: size, width: size, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.lesion_prob) {
            return bad(format!("lesion_prob {} outside [0, 1]", self.lesion_prob));
        }
        if self.height < 8 || self.width < 8 {
            return bad(format!("image {}x{} too small", self.height, self.width));
        }
        let (lo, hi) = self.vessel_radius;
        if !(lo > 0.0 && lo <= hi && hi < 0.25) {
            return bad(format!("vessel radius range {:?} must be positive and well inside the image", self.vessel_radius));
        }
        let (flo, fhi) = self.defect_fraction;
        if !(flo > 0.0 && flo <= fhi && fhi < 1.0) {
            return bad(format!("defect fraction {:?} must lie in (0, 1)", self.defect_fraction));
        }
        let (clo, chi) = self.vessel_count;
        if clo == 0 || clo > chi {
            return bad(format!("vessel count range {:?}", self.vessel_count));
        }
        for c in self.classes.iter() {
            if c.noise_poly < 0.0 || c.noise_mono < 0.0 {
                return bad(format!("negative noise for {}", c.name));
            }
        }
        Ok(())
    }
}

/// One slice. Training records carry exactly one of `mono` / `label`;
/// evaluation records may carry both.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub patient_id: u32,
    pub poly: Tensor<f32>,
    pub mono: Option<Tensor<f32>>,
    pub label: Option<u8>,
}

impl SampleRecord {
    pub fn height(&self) -> usize {
        self.poly.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.poly.shape()[2]
    }
}

pub fn hu_to_normalized(hu: f64) -> f64 {
    hu.clamp(HU_MIN, HU_MAX) / HU_MAX
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Paired,
    Labeled,
    Eval,
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired" => Ok(Role::Paired),
            "labeled" => Ok(Role::Labeled),
            "eval" => Ok(Role::Eval),
            other => Err(Error::Config(format!("unknown role {other:?}"))),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator keyed by patient (stream) and purpose (seed), so two patients
/// never draw from the same stream.
fn rng_for(patient_id: u32, seed: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ salt.rotate_left(32)));
    rng.set_stream(u64::from(patient_id));
    rng
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        dx * dx + dy * dy <= 1.0
    }
}

#[derive(Clone, Copy, Debug)]
struct Circle {
    cx: f64,
    cy: f64,
    r: f64,
}

impl Circle {
    fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).powi(2) + (y - self.cy).powi(2) <= self.r * self.r
    }

    fn owns_pixel_center(&self, px: usize, py: usize) -> bool {
        self.cx.floor() as usize == px && self.cy.floor() as usize == py
    }
}

/// Anatomy of one slice, before any intensities are assigned.
#[derive(Clone, Debug)]
pub struct SliceGeometry {
    pub tissue: Vec<Tissue>,
    pub has_defect: bool,
}

pub fn slice_geometry(spec: &PhantomSpec, patient_id: u32, slice_seed: u64) -> SliceGeometry {
    let (h, w) = (spec.height as f64, spec.width as f64);
    // patient-level anatomy: torso and lungs
    let mut prng = rng_for(patient_id, 0, 1);
    let torso = Ellipse {
        cx: w / 2.0,
        cy: h / 2.0,
        rx: w * prng.random_range(0.40..0.46),
        ry: h * prng.random_range(0.32..0.38),
    };
    let lung_rx = torso.rx * prng.random_range(0.40..0.46);
    let lung_ry = torso.ry * prng.random_range(0.72..0.80);
    let offset = torso.rx * prng.random_range(0.48..0.52);
    let lungs = [
        Ellipse { cx: torso.cx - offset, cy: torso.cy, rx: lung_rx, ry: lung_ry },
        Ellipse { cx: torso.cx + offset, cy: torso.cy, rx: lung_rx, ry: lung_ry },
    ];

    // slice-level content: vessels and the optional defect
    let mut rng = rng_for(patient_id, slice_seed, 2);
    let n_vessels = rng.random_range(spec.vessel_count.0..=spec.vessel_count.1);
    let mut vessels = Vec::with_capacity(n_vessels);
    for _ in 0..n_vessels {
        let r = w * rng.random_range(spec.vessel_radius.0..=spec.vessel_radius.1);
        let lung = lungs[rng.random_range(0..2)];
        // rejection-sample a centre whose disc stays inside the lung
        let inner = Ellipse { rx: (lung.rx - r).max(0.5), ry: (lung.ry - r).max(0.5), ..lung };
        let (cx, cy) = loop {
            let x = rng.random_range(inner.cx - inner.rx..=inner.cx + inner.rx);
            let y = rng.random_range(inner.cy - inner.ry..=inner.cy + inner.ry);
            if inner.contains(x, y) {
                break (x, y);
            }
        };
        vessels.push(Circle { cx, cy, r });
    }
    let defect = (rng.random::<f64>() < spec.lesion_prob).then(|| {
        let host = vessels[rng.random_range(0..vessels.len())];
        let r = host.r * rng.random_range(spec.defect_fraction.0..=spec.defect_fraction.1);
        let dist = (host.r - r) * rng.random::<f64>();
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        Circle { cx: host.cx + dist * angle.cos(), cy: host.cy + dist * angle.sin(), r }
    });

    let mut tissue = Vec::with_capacity(spec.height * spec.width);
    for py in 0..spec.height {
        for px in 0..spec.width {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let t = if defect.is_some_and(|d| d.contains(x, y) || d.owns_pixel_center(px, py)) {
                Tissue::Embolism
            } else if vessels.iter().any(|v| v.contains(x, y)) {
                Tissue::Vessel
            } else if lungs.iter().any(|l| l.contains(x, y)) {
                Tissue::Lung
            } else if torso.contains(x, y) {
                Tissue::SoftTissue
            } else {
                Tissue::Air
            };
            tissue.push(t);
        }
    }
    SliceGeometry { tissue, has_defect: defect.is_some() }
}

fn render_domain(spec: &PhantomSpec, geom: &SliceGeometry, domain: Domain, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let data = geom
        .tissue
        .iter()
        .map(|&t| {
            let class = spec.classes.get(t);
            let hu = class.mean(domain) + class.noise(domain) * std_normal.sample(rng);
            hu_to_normalized(hu) as f32
        })
        .collect();
    Tensor::new(vec![1, spec.height, spec.width], data).expect("geometry covers the image")
}

/// Renders one slice in both domains; deterministic in `(patient_id, slice_seed)`.
pub fn render_phantom(spec: &PhantomSpec, patient_id: u32, slice_seed: u64) -> SampleRecord {
    let geom = slice_geometry(spec, patient_id, slice_seed);
    let mut noise = rng_for(patient_id, slice_seed, 3);
    let poly = render_domain(spec, &geom, Domain::Poly, &mut noise);
    let mono = render_domain(spec, &geom, Domain::Mono40, &mut noise);
    SampleRecord {
        patient_id,
        poly,
        mono: Some(mono),
        label: Some(u8::from(geom.has_defect)),
    }
}

/// Patient ids are namespaced by the dataset seed: `(seed mod 4096) << 20 | index`.
pub fn patient_id(seed: u64, index: usize) -> u32 {
    (((seed % 4096) as u32) << 20) | (index as u32 & 0xF_FFFF)
}

pub fn make_dataset(
    spec: &PhantomSpec,
    n_patients: usize,
    slices_per_patient: usize,
    role: Role,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    spec.validate()?;
    if n_patients == 0 || slices_per_patient == 0 {
        return Err(Error::Config("patient and slice counts must be >= 1".into()));
    }
    if n_patients > 1 << 20 {
        return Err(Error::Config(format!("at most {} patients per dataset", 1 << 20)));
    }
    let mut out = Vec::with_capacity(n_patients * slices_per_patient);
    for p in 0..n_patients {
        let pid = patient_id(seed, p);
        for s in 0..slices_per_patient {
            let slice_seed = splitmix(seed).wrapping_add(s as u64);
            let mut rec = render_phantom(spec, pid, slice_seed);
            match role {
                Role::Paired => rec.label = None,
                Role::Labeled => rec.mono = None,
                Role::Eval => {}
            }
            out.push(rec);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(hu_to_normalized(0.0), 0.0);
        assert_eq!(hu_to_normalized(2500.0), 1.0);
        assert_eq!(hu_to_normalized(-1000.0), -1.0);
    }

    #[test]
    fn render_is_deterministic() {
        let spec = PhantomSpec::default();
        assert_eq!(render_phantom(&spec, 3, 11), render_phantom(&spec, 3, 11));
        assert_ne!(render_phantom(&spec, 3, 11), render_phantom(&spec, 4, 11));
    }

    #[test]
    fn zero_lesion_prob_never_labels() {
        let spec = PhantomSpec { lesion_prob: 0.0, ..PhantomSpec::default() };
        for s in 0..50 {
            assert_eq!(render_phantom(&spec, 9, s).label, Some(0));
        }
    }

    #[test]
    fn noise_free_contrast_is_larger_in_mono() {
        let mut spec = PhantomSpec { lesion_prob: 1.0, ..PhantomSpec::default() };
        for c in [
            &mut spec.classes.air,
            &mut spec.classes.lung,
            &mut spec.classes.soft_tissue,
            &mut spec.classes.vessel,
            &mut spec.classes.embolism,
        ] {
            c.noise_poly = 0.0;
            c.noise_mono = 0.0;
        }
        let rec = render_phantom(&spec, 1, 2);
        let geom = slice_geometry(&spec, 1, 2);
        let pick = |img: &Tensor<f32>, t: Tissue| {
            let i = geom.tissue.iter().position(|&x| x == t).expect("tissue present");
            img.data()[i] as f64
        };
        let mono = rec.mono.as_ref().unwrap();
        let dm = (pick(mono, Tissue::Vessel) - pick(mono, Tissue::Embolism)).abs();
        let dp = (pick(&rec.poly, Tissue::Vessel) - pick(&rec.poly, Tissue::Embolism)).abs();
        assert!((dm - 0.82).abs() < 1e-6 && (dp - 0.29).abs() < 1e-6);
        assert!(dm > dp);
    }

    #[test]
    fn roles_strip_annotations() {
        let spec = PhantomSpec::with_size(16);
        let paired = make_dataset(&spec, 2, 3, Role::Paired, 1).unwrap();
        assert!(paired.iter().all(|r| r.mono.is_some() && r.label.is_none()));
        let labeled = make_dataset(&spec, 2, 3, Role::Labeled, 1).unwrap();
        assert!(labeled.iter().all(|r| r.mono.is_none() && r.label.is_some()));
        let eval = make_dataset(&spec, 2, 3, Role::Eval, 1).unwrap();
        assert!(eval.iter().all(|r| r.mono.is_some() && r.label.is_some()));
    }

    #[test]
    fn counts_and_patient_ids() {
        let spec = PhantomSpec::with_size(16);
        let recs = make_dataset(&spec, 5, 10, Role::Eval, 42).unwrap();
        assert_eq!(recs.len(), 50);
        let mut ids: Vec<u32> = recs.iter().map(|r| r.patient_id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 5);
        let other = make_dataset(&spec, 5, 1, Role::Eval, 43).unwrap();
        assert!(other.iter().all(|r| !ids.contains(&r.patient_id)));
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = PhantomSpec { lesion_prob: 1.5, ..PhantomSpec::default() };
        assert!(spec.validate().is_err());
    }
}
