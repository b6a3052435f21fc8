//! Deterministic data generators: cantilever beams with three cross-section
//! families, and synthetic two-source families with a known affine link.
//!
//! Beam responses are Euler-Bernoulli tip deflections under an end load,
//! `d = P L^3 / (3 E I)`, with no observation noise.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::SourceDataset;
use crate::error::{Error, Result};
use crate::optim::{latin_hypercube, Bounds};

/// Load case shared by every beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamPhysics {
    /// End load P in newtons.
    pub load: f64,
    /// Length L in meters.
    pub length: f64,
    /// Young's modulus E in pascals.
    pub modulus: f64,
}

impl Default for BeamPhysics {
    fn default() -> Self {
        BeamPhysics {
            load: 1e4,
            length: 1.0,
            modulus: 2e11,
        }
    }
}

impl BeamPhysics {
    pub fn tip_deflection(&self, section: &CrossSection) -> f64 {
        self.load * self.length.powi(3) / (3.0 * self.modulus * section.second_moment())
    }
}

/// Cross-section geometry in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CrossSection {
    Rectangular { width: f64, height: f64 },
    HollowRect {
        width: f64,
        height: f64,
        inner_width: f64,
        inner_height: f64,
    },
    HollowCirc { outer_radius: f64, inner_radius: f64 },
}

impl CrossSection {
    pub fn second_moment(&self) -> f64 {
        match *self {
            CrossSection::Rectangular { width, height } => width * height.powi(3) / 12.0,
            CrossSection::HollowRect {
                width,
                height,
                inner_width,
                inner_height,
            } => (width * height.powi(3) - inner_width * inner_height.powi(3)) / 12.0,
            CrossSection::HollowCirc {
                outer_radius,
                inner_radius,
            } => std::f64::consts::PI * (outer_radius.powi(4) - inner_radius.powi(4)) / 4.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        let pos = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        match *self {
            CrossSection::Rectangular { width, height } => pos(&[width, height]),
            CrossSection::HollowRect {
                width,
                height,
                inner_width,
                inner_height,
            } => {
                pos(&[width, height, inner_width, inner_height])
                    && inner_width < width
                    && inner_height < height
            }
            CrossSection::HollowCirc {
                outer_radius,
                inner_radius,
            } => pos(&[outer_radius, inner_radius]) && inner_radius < outer_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SectionKind {
    Rectangular,
    HollowRect,
    HollowCirc,
}

impl SectionKind {
    pub fn input_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            SectionKind::Rectangular => &["B", "H"],
            SectionKind::HollowRect => &["B", "H", "b", "h"],
            SectionKind::HollowCirc => &["R", "r"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn section(&self, v: &[f64]) -> CrossSection {
        match self {
            SectionKind::Rectangular => CrossSection::Rectangular {
                width: v[0],
                height: v[1],
            },
            SectionKind::HollowRect => CrossSection::HollowRect {
                width: v[0],
                height: v[1],
                inner_width: v[2],
                inner_height: v[3],
            },
            SectionKind::HollowCirc => CrossSection::HollowCirc {
                outer_radius: v[0],
                inner_radius: v[1],
            },
        }
    }
}

/// Sampling range of one design variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VarRange {
    Absolute { lo: f64, hi: f64 },
    /// `[lo, hi]` times the value of an earlier variable.
    FractionOf { parent: usize, lo: f64, hi: f64 },
}

impl VarRange {
    fn value(&self, u: f64, earlier: &[f64]) -> f64 {
        match *self {
            VarRange::Absolute { lo, hi } => lo + u * (hi - lo),
            VarRange::FractionOf { parent, lo, hi } => earlier[parent] * (lo + u * (hi - lo)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamSpec {
    pub source_id: String,
    pub kind: SectionKind,
    pub physics: BeamPhysics,
    pub ranges: Vec<VarRange>,
    pub seed: u64,
}

impl BeamSpec {
    /// Default ranges: B, H in [0.05, 0.3]; b, h in [0.2, 0.8] of B, H;
    /// R in [0.05, 0.2]; r in [0.2, 0.8] of R.
    pub fn standard(source_id: &str, kind: SectionKind, seed: u64) -> Self {
        let abs = |lo, hi| VarRange::Absolute { lo, hi };
        let frac = |parent| VarRange::FractionOf {
            parent,
            lo: 0.2,
            hi: 0.8,
        };
        let ranges = match kind {
            SectionKind::Rectangular => vec![abs(0.05, 0.3), abs(0.05, 0.3)],
            SectionKind::HollowRect => vec![abs(0.05, 0.3), abs(0.05, 0.3), frac(0), frac(1)],
            SectionKind::HollowCirc => vec![abs(0.05, 0.2), frac(0)],
        };
        BeamSpec {
            source_id: source_id.to_string(),
            kind,
            physics: BeamPhysics::default(),
            ranges,
            seed,
        }
    }
}

const MAX_REJECTIONS: usize = 1000;

/// `n` Latin-hypercube designs over the spec's ranges with their tip
/// deflections. Rows violating the geometry are redrawn uniformly.
pub fn gen_beam(spec: &BeamSpec, n: usize) -> Result<SourceDataset> {
    let d = spec.kind.input_names().len();
    if spec.ranges.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: spec.ranges.len(),
        });
    }
    for (i, r) in spec.ranges.iter().enumerate() {
        if let VarRange::FractionOf { parent, .. } = r {
            if *parent >= i {
                return Err(Error::Config(format!(
                    "range {i} refers to variable {parent}, which is not earlier"
                )));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = latin_hypercube(n, &Bounds::uniform(d, 0.0, 1.0), &mut rng);
    let realize = |u: &[f64]| {
        let mut v = Vec::with_capacity(d);
        for (j, r) in spec.ranges.iter().enumerate() {
            let val = r.value(u[j], &v);
            v.push(val);
        }
        v
    };
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    for (i, u) in unit.iter().enumerate() {
        let mut v = realize(u);
        let mut tries = 0;
        while !spec.kind.section(&v).is_valid() {
            tries += 1;
            if tries > MAX_REJECTIONS {
                return Err(Error::Infeasible(format!(
                    "{}: no valid {:?} section after {MAX_REJECTIONS} draws",
                    spec.source_id, spec.kind
                )));
            }
            let redraw: Vec<f64> = (0..d).map(|_| rng.random()).collect();
            v = realize(&redraw);
        }
        for j in 0..d {
            x[(i, j)] = v[j];
        }
        y[i] = spec.physics.tip_deflection(&spec.kind.section(&v));
    }
    SourceDataset::new(
        spec.source_id.clone(),
        spec.kind.input_names(),
        x,
        y,
        "deflection",
    )
}

/// Training and test data for one beam source.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSource {
    pub train: SourceDataset,
    pub test: SourceDataset,
}

pub const PAPER_SUITE_SIZES: [(&str, SectionKind, usize, usize); 3] = [
    ("RB", SectionKind::Rectangular, 30, 1000),
    ("HRB", SectionKind::HollowRect, 25, 1000),
    ("HCB", SectionKind::HollowCirc, 8, 1000),
];

/// The three-source beam study: RB (30 train), HRB (25), HCB (8), each with
/// 1000 test rows, under the default load case and ranges.
pub fn gen_paper_suite(seed: u64) -> Result<Vec<SuiteSource>> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    PAPER_SUITE_SIZES
        .iter()
        .map(|&(id, kind, n_train, n_test)| {
            let train_seed: u64 = master.random();
            let test_seed: u64 = master.random();
            Ok(SuiteSource {
                train: gen_beam(&BeamSpec::standard(id, kind, train_seed), n_train)?,
                test: gen_beam(&BeamSpec::standard(id, kind, test_seed), n_test)?,
            })
        })
        .collect()
}

/// Metadata describing the beam suite's invented constants.
pub fn paper_suite_metadata(seed: u64) -> serde_json::Value {
    let specs: Vec<BeamSpec> = PAPER_SUITE_SIZES
        .iter()
        .map(|&(id, kind, _, _)| BeamSpec::standard(id, kind, 0))
        .collect();
    serde_json::json!({
        "suite": "beam-paper",
        "seed": seed,
        "load_case": "cantilever, end load, Euler-Bernoulli tip deflection P L^3 / (3 E I)",
        "physics": BeamPhysics::default(),
        "ranges": specs.iter().map(|s| serde_json::json!({
            "source_id": s.source_id,
            "inputs": s.kind.input_names(),
            "ranges": s.ranges,
        })).collect::<Vec<_>>(),
        "sizes": PAPER_SUITE_SIZES.iter().map(|(id, _, tr, te)| serde_json::json!({
            "source_id": id, "train": tr, "test": te
        })).collect::<Vec<_>>(),
    })
}

/// Smooth test functions on `[0, 1]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseFunction {
    /// `sum_i sin(pi (1 + i/2) x_i) + x_0 x_{d-1}`
    Waves,
    /// `sum_i (x_i - 0.3)^2 (1 + i) + x_0`
    Bowl,
}

impl BaseFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            BaseFunction::Waves => {
                let s: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (std::f64::consts::PI * (1.0 + 0.5 * i as f64) * v).sin())
                    .sum();
                s + x[0] * x[x.len() - 1]
            }
            BaseFunction::Bowl => {
                x.iter()
                    .enumerate()
                    .map(|(i, v)| (v - 0.3).powi(2) * (1.0 + i as f64))
                    .sum::<f64>()
                    + x[0]
            }
        }
    }
}

/// Ground-truth affine link `x_ref = A x_s + b` in raw input units.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenMap {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl HiddenMap {
    pub fn apply(&self, xs: &[f64]) -> Vec<f64> {
        let v = &self.a * DVector::from_column_slice(xs) + &self.b;
        v.iter().copied().collect()
    }

    /// A map sending `[0,1]^d_s` into `[0.15, 0.85]^d_ref`.
    pub fn random<R: Rng>(d_ref: usize, d_s: usize, rng: &mut R) -> Self {
        let mut a = DMatrix::zeros(d_ref, d_s);
        let mut b = DVector::zeros(d_ref);
        for i in 0..d_ref {
            let row: Vec<f64> = (0..d_s).map(|_| rng.random_range(-1.0..1.0)).collect();
            let l1: f64 = row.iter().map(|v| v.abs()).sum::<f64>().max(1e-9);
            let mut low = 0.0;
            for (j, v) in row.iter().enumerate() {
                a[(i, j)] = 0.7 * v / l1;
                low += a[(i, j)].min(0.0);
            }
            b[i] = 0.15 - low;
        }
        HiddenMap { a, b }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFamilySpec {
    pub d_ref: usize,
    pub d_s: usize,
    /// `None` draws a random in-range map from the seed.
    pub hidden: Option<HiddenMap>,
    pub base: BaseFunction,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticFamilySpec {
    pub fn new(d_ref: usize, d_s: usize, seed: u64) -> Self {
        SyntheticFamilySpec {
            d_ref,
            d_s,
            hidden: None,
            base: BaseFunction::Waves,
            noise_sigma: 0.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFamily {
    pub reference: SourceDataset,
    pub source: SourceDataset,
    pub hidden: HiddenMap,
}

fn names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

/// Reference `y1(x) = f(x) + e` on `[0,1]^d_ref` and second source
/// `y2(x2) = f(A x2 + b) + e` on `[0,1]^d_s`. The hidden map is returned for
/// oracle checks only.
pub fn gen_synthetic_family(spec: &SyntheticFamilySpec, n_ref: usize, n_s: usize) -> Result<SyntheticFamily> {
    if spec.d_ref == 0 || spec.d_s == 0 {
        return Err(Error::Config("dimensions must be positive".into()));
    }
    if !(spec.noise_sigma >= 0.0) {
        return Err(Error::Config("noise_sigma must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hidden = match &spec.hidden {
        Some(h) => {
            if h.a.shape() != (spec.d_ref, spec.d_s) || h.b.len() != spec.d_ref {
                return Err(Error::DimensionMismatch {
                    expected: spec.d_ref * spec.d_s,
                    found: h.a.len(),
                });
            }
            h.clone()
        }
        None => HiddenMap::random(spec.d_ref, spec.d_s, &mut rng),
    };
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let sample = |n: usize, d: usize, link: &dyn Fn(&[f64]) -> Vec<f64>, rng: &mut ChaCha8Rng| {
        let pts = latin_hypercube(n, &Bounds::uniform(d, 0.0, 1.0), rng);
        let x = DMatrix::from_fn(n, d, |i, j| pts[i][j]);
        let y = DVector::from_fn(n, |i, _| {
            let e = if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            spec.base.eval(&link(&pts[i])) + e
        });
        (x, y)
    };
    let (xr, yr) = sample(n_ref, spec.d_ref, &|p| p.to_vec(), &mut rng);
    let h = hidden.clone();
    let (xs, ys) = sample(n_s, spec.d_s, &move |p| h.apply(p), &mut rng);
    Ok(SyntheticFamily {
        reference: SourceDataset::new("REF", names("x", spec.d_ref), xr, yr, "y")?,
        source: SourceDataset::new("SRC", names("u", spec.d_s), xs, ys, "y")?,
        hidden,
    })
}
