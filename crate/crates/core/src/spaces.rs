//! Function-backed marked metric spaces and their seeded tuple samplers.
//!
//! Euclidean and snowflake carriers store coordinates relative to the marked
//! point `p`, so distances between points very close to `p` keep their
//! relative precision. Ultrametric carriers are leaf addresses of a rooted
//! tree.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{validate_metric, FiniteMetricSpace, MetricError, DEFAULT_METRIC_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpaceError {
    #[error("marked point lies outside the region: {0}")]
    MarkedPointOutsideRegion(String),
    #[error("snowflake exponent must lie in (0, 1), got {0}")]
    AlphaOutOfRange(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sampler could not produce a tuple at scale {0}")]
    SamplerExhausted(f64),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// A point of a marked space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Point {
    /// Coordinates relative to the marked point.
    Coords(Vec<f64>),
    /// Leaf address in a rooted tree.
    Address(Vec<u32>),
}

/// A metric space with a distinguished point.
pub trait MarkedMetric {
    type Point: Clone + PartialEq;

    fn distance(&self, a: &Self::Point, b: &Self::Point) -> f64;

    fn marked_point(&self) -> Self::Point;

    fn distance_to_marked(&self, a: &Self::Point) -> f64 {
        self.distance(a, &self.marked_point())
    }
}

/// Draws tuples near the marked point.
///
/// Contract: for a space with points in the annulus `[scale/2, scale]` around
/// `p`, every returned tuple has its largest distance to `p` in that range.
/// When the space has no such points (an isolated marked point) the tuple is
/// `(p, ..., p)`. Output depends only on `(scale, len, seed)`.
pub trait TupleSampler: MarkedMetric {
    fn sample_tuple(&self, scale: f64, len: usize, seed: u64) -> Result<Vec<Self::Point>, SpaceError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum CurveSpec {
    /// `t -> (t, a t²)` in the plane.
    Parabola { a: f64 },
    /// `t -> (r cos t, r sin t, c t)` in space.
    Helix { radius: f64, pitch: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    /// The cube `[lo, hi]^dim`.
    Cube { lo: f64, hi: f64 },
    /// The cube `[lo, hi]^dim`, sampled on a lattice of `resolution` steps per scale.
    Grid { lo: f64, hi: f64, resolution: u32 },
    /// The unit sphere centred at the origin.
    SphereSurface,
    Curve(CurveSpec),
    /// The one-point space `{p}`.
    Point,
}

/// Serializable description of a marked space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SpaceConfig {
    Euclidean { dim: usize, region: Region, p: Vec<f64> },
    Snowflake { alpha: f64, dim: usize, p: Vec<f64> },
    Ultrametric { depth: usize, arity: u32, #[serde(default)] p: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Euclidean { dim: usize, region: Region, p: Vec<f64>, t0: f64 },
    Snowflake { alpha: f64, dim: usize },
    Ultrametric { depth: usize, arity: u32, p: Vec<u32> },
}

/// A marked metric space backed by a distance function.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedSpace {
    config: SpaceConfig,
    kind: Kind,
}

const REGION_TOL: f64 = 1e-9;
const MAX_TRIES: usize = 10_000;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Radii in `[0, scale]` with one, chosen at random, in `[scale/2, scale]`.
fn radii(rng: &mut ChaCha8Rng, scale: f64, len: usize) -> Vec<f64> {
    let forced = rng.random_range(0..len);
    (0..len)
        .map(|i| if i == forced { scale * rng.random_range(0.5..=1.0) } else { scale * rng.random::<f64>() })
        .collect()
}

impl CurveSpec {
    /// Offset `gamma(t0 + h) - gamma(t0)`, computed without cancellation.
    fn offset(&self, t0: f64, h: f64) -> Vec<f64> {
        match *self {
            CurveSpec::Parabola { a } => vec![h, a * h * (2.0 * t0 + h)],
            CurveSpec::Helix { radius, pitch } => {
                let s = (0.5 * h).sin();
                let mid = t0 + 0.5 * h;
                vec![-2.0 * radius * mid.sin() * s, 2.0 * radius * mid.cos() * s, pitch * h]
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            CurveSpec::Parabola { .. } => 2,
            CurveSpec::Helix { .. } => 3,
        }
    }

    fn at(&self, t: f64) -> Vec<f64> {
        match *self {
            CurveSpec::Parabola { a } => vec![t, a * t * t],
            CurveSpec::Helix { radius, pitch } => vec![radius * t.cos(), radius * t.sin(), pitch * t],
        }
    }

    fn parameter_of(&self, p: &[f64]) -> Option<f64> {
        let t0 = match *self {
            CurveSpec::Parabola { .. } => p[0],
            CurveSpec::Helix { pitch, .. } if pitch != 0.0 => p[2] / pitch,
            CurveSpec::Helix { radius, .. } => p[1].atan2(p[0]) * radius.signum(),
        };
        let scale = norm(p).max(1.0);
        (diff_norm(&self.at(t0), p) <= REGION_TOL * scale).then_some(t0)
    }

    /// Parameter step `h` with sign `sign` whose chord to `gamma(t0)` has length `chord`.
    fn step_for_chord(&self, t0: f64, chord: f64, sign: f64) -> f64 {
        if chord == 0.0 {
            return 0.0;
        }
        let len = |h: f64| norm(&self.offset(t0, sign * h));
        let mut hi = chord;
        while len(hi) < chord {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if len(mid) < chord {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        sign * hi
    }
}

/// Builds a Euclidean subset of `R^dim` marked at `p`.
pub fn make_euclidean_subset(dim: usize, region: Region, p: Vec<f64>) -> Result<MarkedSpace, SpaceError> {
    MarkedSpace::from_config(SpaceConfig::Euclidean { dim, region, p })
}

/// The snowflake `|x - y|^alpha` of `R^dim`, marked at `p`.
pub fn make_snowflake(alpha: f64, dim: usize, p: Vec<f64>) -> Result<MarkedSpace, SpaceError> {
    MarkedSpace::from_config(SpaceConfig::Snowflake { alpha, dim, p })
}

/// Leaves of the complete `arity`-ary tree of the given depth, with
/// `d(x, y) = 2^-(length of the common address prefix)`, marked at `p`
/// (the all-zero leaf when `p` is empty).
pub fn make_ultrametric(depth: usize, arity: u32, p: Vec<u32>) -> Result<MarkedSpace, SpaceError> {
    MarkedSpace::from_config(SpaceConfig::Ultrametric { depth, arity, p })
}

impl MarkedSpace {
    pub fn from_config(config: SpaceConfig) -> Result<Self, SpaceError> {
        let kind = match &config {
            SpaceConfig::Euclidean { dim, region, p } => {
                let dim = *dim;
                if dim < 1 {
                    return Err(SpaceError::InvalidConfig("dim must be at least 1".into()));
                }
                if p.len() != dim {
                    return Err(SpaceError::InvalidConfig(format!("p has {} coordinates, dim is {dim}", p.len())));
                }
                let outside = |why: &str| SpaceError::MarkedPointOutsideRegion(why.to_string());
                let mut t0 = 0.0;
                match region {
                    Region::Cube { lo, hi } | Region::Grid { lo, hi, .. } => {
                        if !(lo < hi) {
                            return Err(SpaceError::InvalidConfig("cube needs lo < hi".into()));
                        }
                        if p.iter().any(|x| x < lo || x > hi) {
                            return Err(outside("p is not in the cube"));
                        }
                        if let Region::Grid { resolution: 0, .. } = region {
                            return Err(SpaceError::InvalidConfig("grid resolution must be positive".into()));
                        }
                    }
                    Region::SphereSurface => {
                        if dim < 2 {
                            return Err(SpaceError::InvalidConfig("sphere needs dim >= 2".into()));
                        }
                        if (norm(p) - 1.0).abs() > REGION_TOL {
                            return Err(outside("p is not on the unit sphere"));
                        }
                    }
                    Region::Curve(curve) => {
                        if curve.dim() != dim {
                            return Err(SpaceError::InvalidConfig(format!("curve lives in R^{}", curve.dim())));
                        }
                        t0 = curve.parameter_of(p).ok_or_else(|| outside("p is not on the curve"))?;
                    }
                    Region::Point => {}
                }
                Kind::Euclidean { dim, region: *region, p: p.clone(), t0 }
            }
            SpaceConfig::Snowflake { alpha, dim, p } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(SpaceError::AlphaOutOfRange(*alpha));
                }
                if *dim < 1 || p.len() != *dim {
                    return Err(SpaceError::InvalidConfig("p must have dim >= 1 coordinates".into()));
                }
                Kind::Snowflake { alpha: *alpha, dim: *dim }
            }
            SpaceConfig::Ultrametric { depth, arity, p } => {
                if *depth < 2 || *arity < 2 {
                    return Err(SpaceError::InvalidConfig("depth and arity must be at least 2".into()));
                }
                let p = if p.is_empty() { vec![0; *depth] } else { p.clone() };
                if p.len() != *depth || p.iter().any(|&c| c >= *arity) {
                    return Err(SpaceError::MarkedPointOutsideRegion("p is not a leaf address".into()));
                }
                Kind::Ultrametric { depth: *depth, arity: *arity, p }
            }
        };
        Ok(Self { config, kind })
    }

    pub fn config(&self) -> &SpaceConfig {
        &self.config
    }

    /// Carrier point for absolute coordinates (Euclidean and snowflake spaces).
    pub fn locate(&self, coords: &[f64]) -> Point {
        let p = match &self.config {
            SpaceConfig::Euclidean { p, .. } | SpaceConfig::Snowflake { p, .. } => p.as_slice(),
            SpaceConfig::Ultrametric { .. } => return Point::Address(Vec::new()),
        };
        Point::Coords(coords.iter().zip(p).map(|(x, c)| x - c).collect())
    }

    /// Absolute coordinates of a carrier point, when it has any.
    pub fn coordinates(&self, point: &Point) -> Option<Vec<f64>> {
        match (&self.config, point) {
            (SpaceConfig::Euclidean { p, .. } | SpaceConfig::Snowflake { p, .. }, Point::Coords(v)) => {
                Some(v.iter().zip(p).map(|(x, c)| x + c).collect())
            }
            _ => None,
        }
    }

    fn origin_offset(&self) -> Point {
        match &self.kind {
            Kind::Euclidean { dim, .. } | Kind::Snowflake { dim, .. } => Point::Coords(vec![0.0; *dim]),
            Kind::Ultrametric { p, .. } => Point::Address(p.clone()),
        }
    }

    fn in_cube(&self, offset: &[f64]) -> bool {
        match &self.kind {
            Kind::Euclidean { region: Region::Cube { lo, hi } | Region::Grid { lo, hi, .. }, p, .. } => {
                offset.iter().zip(p).all(|(o, c)| o + c >= *lo && o + c <= *hi)
            }
            _ => true,
        }
    }

    /// Flips offset components that leave the cube; `None` if still outside.
    fn fold_into_cube(&self, mut offset: Vec<f64>) -> Option<Vec<f64>> {
        if let Kind::Euclidean { region: Region::Cube { lo, hi } | Region::Grid { lo, hi, .. }, p, .. } = &self.kind {
            for (o, c) in offset.iter_mut().zip(p) {
                if *o + c < *lo || *o + c > *hi {
                    *o = -*o;
                }
            }
        }
        self.in_cube(&offset).then_some(offset)
    }

    /// Number of canonical directions available to [`MarkedSpace::ray_point`].
    pub fn num_directions(&self) -> usize {
        match &self.kind {
            Kind::Euclidean { region: Region::Point, .. } => 1,
            Kind::Euclidean { region: Region::Curve(_), .. } => 2,
            Kind::Euclidean { dim, region: Region::SphereSurface, .. } => 2 * (dim - 1),
            Kind::Euclidean { dim, .. } | Kind::Snowflake { dim, .. } => 2 * dim + 1,
            Kind::Ultrametric { arity, .. } => (*arity - 1) as usize,
        }
    }

    /// How many of the leading ray directions are mutually independent:
    /// the positive axes of flat spaces, tangent directions of spheres, one
    /// sense of a curve, sibling branches of a tree.
    pub fn independent_directions(&self) -> usize {
        match &self.kind {
            Kind::Euclidean { region: Region::Point, .. } => 0,
            Kind::Euclidean { region: Region::Curve(_), .. } => 1,
            Kind::Euclidean { dim, region: Region::SphereSurface, .. } => dim - 1,
            Kind::Euclidean { dim, .. } | Kind::Snowflake { dim, .. } => *dim,
            Kind::Ultrametric { arity, .. } => (*arity - 1) as usize,
        }
    }

    /// A point at distance about `radius` from `p` in the `dir`-th canonical
    /// direction: positive axes, negative axes, then the main diagonal for
    /// flat spaces; tangent directions for spheres; both senses along curves;
    /// sibling branches for trees.
    pub fn ray_point(&self, dir: usize, radius: f64) -> Option<Point> {
        if dir >= self.num_directions() {
            return None;
        }
        let axis_vector = |dim: usize, r: f64| -> Vec<f64> {
            let mut v = vec![0.0; dim];
            if dir < dim {
                v[dir] = r;
            } else if dir < 2 * dim {
                v[dir - dim] = -r;
            } else {
                v.iter_mut().for_each(|x| *x = r / (dim as f64).sqrt());
            }
            v
        };
        match &self.kind {
            Kind::Euclidean { region: Region::Point, dim, .. } => Some(Point::Coords(vec![0.0; *dim])),
            Kind::Euclidean { region: Region::Curve(curve), t0, .. } => {
                let sign = if dir == 0 { 1.0 } else { -1.0 };
                Some(Point::Coords(curve.offset(*t0, curve.step_for_chord(*t0, radius, sign))))
            }
            Kind::Euclidean { region: Region::SphereSurface, dim, p, .. } => {
                let basis = tangent_basis(p);
                let w = &basis[dir % (dim - 1)];
                let sign = if dir < dim - 1 { 1.0 } else { -1.0 };
                let w: Vec<f64> = w.iter().map(|x| sign * x).collect();
                Some(Point::Coords(sphere_offset(p, &w, radius.min(2.0))))
            }
            Kind::Euclidean { dim, .. } => self.fold_into_cube(axis_vector(*dim, radius)).map(Point::Coords),
            Kind::Snowflake { alpha, dim } => Some(Point::Coords(axis_vector(*dim, radius.powf(1.0 / alpha)))),
            Kind::Ultrametric { depth, arity, p } => {
                let level = level_for(radius);
                let mut q = p.clone();
                if level < *depth {
                    q[level] = (p[level] + 1 + dir as u32) % arity;
                }
                Some(Point::Address(q))
            }
        }
    }
}

/// Smallest `j` with `2^-j <= radius`, so that `2^-j` lies in `(radius/2, radius]`.
fn level_for(radius: f64) -> usize {
    if radius >= 1.0 {
        return 0;
    }
    let mut j = 0usize;
    let mut d = 1.0;
    while d > radius && j < 2000 {
        d *= 0.5;
        j += 1;
    }
    j
}

/// Orthonormal basis of the tangent space at a unit vector `p`.
fn tangent_basis(p: &[f64]) -> Vec<Vec<f64>> {
    let dim = p.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for axis in 0..dim {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        for b in std::iter::once(p).chain(basis.iter().map(Vec::as_slice)) {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = norm(&v);
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
        if basis.len() == dim - 1 {
            break;
        }
    }
    basis
}

/// Offset from `p` of the sphere point at chord length `chord` along tangent `w`.
fn sphere_offset(p: &[f64], w: &[f64], chord: f64) -> Vec<f64> {
    let theta = 2.0 * (0.5 * chord).asin();
    let half = (0.5 * theta).sin();
    p.iter().zip(w).map(|(pc, wc)| -2.0 * half * half * pc + theta.sin() * wc).collect()
}

impl MarkedMetric for MarkedSpace {
    type Point = Point;

    fn distance(&self, a: &Point, b: &Point) -> f64 {
        match (&self.kind, a, b) {
            (Kind::Euclidean { .. }, Point::Coords(x), Point::Coords(y)) => diff_norm(x, y),
            (Kind::Snowflake { alpha, .. }, Point::Coords(x), Point::Coords(y)) => diff_norm(x, y).powf(*alpha),
            (Kind::Ultrametric { .. }, Point::Address(x), Point::Address(y)) => {
                if x == y {
                    0.0
                } else {
                    let common = x.iter().zip(y).take_while(|(u, v)| u == v).count();
                    0.5f64.powi(common as i32)
                }
            }
            _ => f64::NAN,
        }
    }

    fn marked_point(&self) -> Point {
        self.origin_offset()
    }
}

impl TupleSampler for MarkedSpace {
    fn sample_tuple(&self, scale: f64, len: usize, seed: u64) -> Result<Vec<Point>, SpaceError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if len == 0 {
            return Ok(Vec::new());
        }
        match &self.kind {
            Kind::Euclidean { region: Region::Point, .. } => Ok(vec![self.marked_point(); len]),
            Kind::Euclidean { dim, region: Region::Cube { .. }, .. } => {
                for _ in 0..MAX_TRIES {
                    let pts: Option<Vec<Point>> = radii(&mut rng, scale, len)
                        .into_iter()
                        .map(|r| {
                            let dir = gaussian_unit(&mut rng, *dim);
                            self.fold_into_cube(dir.into_iter().map(|x| r * x).collect()).map(Point::Coords)
                        })
                        .collect();
                    if let Some(pts) = pts {
                        return Ok(pts);
                    }
                }
                Err(SpaceError::SamplerExhausted(scale))
            }
            Kind::Euclidean { dim, region: Region::Grid { resolution, .. }, .. } => {
                let res = i64::from(*resolution);
                let step = scale / (*resolution as f64 * (*dim as f64).sqrt());
                for _ in 0..MAX_TRIES {
                    let pts: Option<Vec<Vec<f64>>> = (0..len)
                        .map(|_| {
                            let v = (0..*dim).map(|_| step * rng.random_range(-res..=res) as f64).collect();
                            self.fold_into_cube(v)
                        })
                        .collect();
                    if let Some(pts) = pts {
                        let delta = pts.iter().map(|v| norm(v)).fold(0.0, f64::max);
                        if delta >= 0.5 * scale && delta <= scale {
                            return Ok(pts.into_iter().map(Point::Coords).collect());
                        }
                    }
                }
                Err(SpaceError::SamplerExhausted(scale))
            }
            Kind::Euclidean { dim, region: Region::SphereSurface, p, .. } => {
                let chord_scale = scale.min(2.0);
                let basis = tangent_basis(p);
                Ok(radii(&mut rng, chord_scale, len)
                    .into_iter()
                    .map(|c| {
                        let coeffs = gaussian_unit(&mut rng, dim - 1);
                        let w: Vec<f64> = (0..*dim)
                            .map(|i| basis.iter().zip(&coeffs).map(|(b, a)| a * b[i]).sum())
                            .collect();
                        Point::Coords(sphere_offset(p, &w, c))
                    })
                    .collect())
            }
            Kind::Euclidean { region: Region::Curve(curve), t0, .. } => Ok(radii(&mut rng, scale, len)
                .into_iter()
                .map(|c| {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    Point::Coords(curve.offset(*t0, curve.step_for_chord(*t0, c, sign)))
                })
                .collect()),
            Kind::Snowflake { alpha, dim } => Ok(radii(&mut rng, scale, len)
                .into_iter()
                .map(|c| {
                    let r = c.powf(1.0 / alpha);
                    Point::Coords(gaussian_unit(&mut rng, *dim).into_iter().map(|x| r * x).collect())
                })
                .collect()),
            Kind::Ultrametric { depth, arity, p } => {
                let level = level_for(scale);
                if level >= *depth || 0.5f64.powi(level as i32) < 0.5 * scale {
                    return Ok(vec![self.marked_point(); len]);
                }
                let forced = rng.random_range(0..len);
                Ok((0..len)
                    .map(|i| {
                        let mut q = p.clone();
                        for (pos, c) in q.iter_mut().enumerate().skip(level) {
                            *c = rng.random_range(0..*arity);
                            if i == forced && pos == level && *c == p[level] {
                                *c = (p[level] + rng.random_range(1..*arity)) % arity;
                            }
                        }
                        Point::Address(q)
                    })
                    .collect())
            }
        }
    }
}

/// A finite metric space with a marked point index.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedFinite {
    pub space: FiniteMetricSpace,
    pub marked: usize,
}

impl MarkedFinite {
    pub fn new(space: FiniteMetricSpace, marked: usize) -> Result<Self, MetricError> {
        if marked >= space.len() {
            return Err(MetricError::IndexOutOfRange { index: marked, len: space.len() });
        }
        Ok(Self { space, marked })
    }
}

impl MarkedMetric for MarkedFinite {
    type Point = usize;

    fn distance(&self, a: &usize, b: &usize) -> f64 {
        self.space.d(*a, *b)
    }

    fn marked_point(&self) -> usize {
        self.marked
    }
}

impl TupleSampler for MarkedFinite {
    fn sample_tuple(&self, scale: f64, len: usize, seed: u64) -> Result<Vec<usize>, SpaceError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let to_p = |i: usize| self.space.d(i, self.marked);
        let ring: Vec<usize> =
            (0..self.space.len()).filter(|&i| to_p(i) >= 0.5 * scale && to_p(i) <= scale).collect();
        if ring.is_empty() || len == 0 {
            return Ok(vec![self.marked; len]);
        }
        let ball: Vec<usize> = (0..self.space.len()).filter(|&i| to_p(i) <= scale).collect();
        let forced = rng.random_range(0..len);
        Ok((0..len)
            .map(|i| {
                if i == forced {
                    ring[rng.random_range(0..ring.len())]
                } else {
                    ball[rng.random_range(0..ball.len())]
                }
            })
            .collect())
    }
}

/// A materialized sample of a marked space.
#[derive(Debug, Clone, PartialEq)]
pub struct Frozen {
    pub space: FiniteMetricSpace,
    /// Index of the marked point (always 0).
    pub marked: usize,
    pub points: Vec<Point>,
}

impl Frozen {
    pub fn marked(&self) -> MarkedFinite {
        MarkedFinite { space: self.space.clone(), marked: self.marked }
    }
}

/// Samples `count` points at the given scale, prepends `p`, drops repeats
/// and validates the resulting distance matrix.
pub fn freeze(space: &MarkedSpace, scale: f64, count: usize, seed: u64) -> Result<Frozen, SpaceError> {
    if count < 1 {
        return Err(SpaceError::InvalidConfig("count must be at least 1".into()));
    }
    let mut points = vec![space.marked_point()];
    for q in space.sample_tuple(scale, count, seed)? {
        if !points.contains(&q) {
            points.push(q);
        }
    }
    let rows: Vec<Vec<f64>> =
        points.iter().map(|a| points.iter().map(|b| space.distance(a, b)).collect()).collect();
    let finite = validate_metric(&rows, DEFAULT_METRIC_TOL)?;
    Ok(Frozen { space: finite, marked: 0, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta<S: MarkedMetric>(s: &S, pts: &[S::Point]) -> f64 {
        pts.iter().map(|x| s.distance_to_marked(x)).fold(0.0, f64::max)
    }

    fn segment() -> MarkedSpace {
        make_euclidean_subset(1, Region::Cube { lo: 0.0, hi: 1.0 }, vec![0.0]).unwrap()
    }

    fn circle() -> MarkedSpace {
        make_euclidean_subset(2, Region::SphereSurface, vec![1.0, 0.0]).unwrap()
    }

    fn plane() -> MarkedSpace {
        make_euclidean_subset(2, Region::Cube { lo: 0.0, hi: 1.0 }, vec![0.0, 0.0]).unwrap()
    }

    fn all_spaces() -> Vec<MarkedSpace> {
        vec![
            segment(),
            circle(),
            plane(),
            make_euclidean_subset(2, Region::Grid { lo: 0.0, hi: 1.0, resolution: 4 }, vec![0.0, 0.0]).unwrap(),
            make_euclidean_subset(3, Region::SphereSurface, vec![0.0, 0.6, 0.8]).unwrap(),
            make_euclidean_subset(2, Region::Curve(CurveSpec::Parabola { a: 1.0 }), vec![0.5, 0.25]).unwrap(),
            make_euclidean_subset(3, Region::Curve(CurveSpec::Helix { radius: 1.0, pitch: 0.5 }), vec![1.0, 0.0, 0.0])
                .unwrap(),
            make_snowflake(0.5, 1, vec![0.0]).unwrap(),
            make_snowflake(0.3, 2, vec![1.0, -1.0]).unwrap(),
            make_ultrametric(12, 2, vec![]).unwrap(),
        ]
    }

    #[test]
    fn construction_examples_and_errors() {
        assert_eq!(segment().marked_point(), Point::Coords(vec![0.0]));
        assert_eq!(circle().distance(&circle().marked_point(), &circle().marked_point()), 0.0);
        assert!(matches!(
            make_euclidean_subset(1, Region::Cube { lo: 0.0, hi: 1.0 }, vec![2.0]),
            Err(SpaceError::MarkedPointOutsideRegion(_))
        ));
        assert!(matches!(
            make_euclidean_subset(2, Region::SphereSurface, vec![0.5, 0.0]),
            Err(SpaceError::MarkedPointOutsideRegion(_))
        ));
        assert!(matches!(
            make_euclidean_subset(2, Region::Curve(CurveSpec::Parabola { a: 1.0 }), vec![1.0, 0.0]),
            Err(SpaceError::MarkedPointOutsideRegion(_))
        ));
        assert_eq!(make_snowflake(1.0, 1, vec![0.0]), Err(SpaceError::AlphaOutOfRange(1.0)));
        assert_eq!(make_snowflake(0.0, 1, vec![0.0]), Err(SpaceError::AlphaOutOfRange(0.0)));
        assert!(make_ultrametric(3, 2, vec![0, 1, 2]).is_err());
    }

    #[test]
    fn sampler_contract_holds_for_every_space() {
        for space in all_spaces() {
            for (j, scale) in [0.5, 0.1, 0.013, 1e-4].into_iter().enumerate() {
                for seed in 0..40 {
                    let t = space.sample_tuple(scale, 4, seed + 100 * j as u64).unwrap();
                    assert_eq!(t.len(), 4);
                    let d = delta(&space, &t);
                    if d == 0.0 && matches!(space.config(), SpaceConfig::Ultrametric { .. }) {
                        continue;
                    }
                    assert!(d >= 0.5 * scale * (1.0 - 1e-12) && d <= scale * (1.0 + 1e-12), "{:?} scale={scale} d={d}", space.config());
                    assert_eq!(t, space.sample_tuple(scale, 4, seed + 100 * j as u64).unwrap());
                }
            }
        }
    }

    #[test]
    fn ultrametric_below_resolution_returns_marked_point() {
        let u = make_ultrametric(3, 2, vec![]).unwrap();
        let t = u.sample_tuple(0.01, 3, 1).unwrap();
        assert!(t.iter().all(|x| *x == u.marked_point()));
        // Eight leaves for depth 3, arity 2.
        let leaves: std::collections::BTreeSet<Vec<u32>> = (0..400)
            .flat_map(|s| u.sample_tuple(1.0, 3, s).unwrap())
            .map(|p| match p {
                Point::Address(a) => a,
                Point::Coords(_) => unreachable!(),
            })
            .collect();
        assert_eq!(leaves.len(), 8);
    }

    #[test]
    fn ultra_triangle_holds_exactly() {
        let u = make_ultrametric(6, 3, vec![]).unwrap();
        for seed in 0..300 {
            let t = u.sample_tuple(1.0, 3, seed).unwrap();
            let d = |a: usize, b: usize| u.distance(&t[a], &t[b]);
            assert!(d(0, 2) <= d(0, 1).max(d(1, 2)));
            assert!(d(0, 1) <= d(0, 2).max(d(2, 1)));
            assert!((d(0, 2).max(d(2, 1))) - d(0, 1) >= 0.0);
        }
    }

    #[test]
    fn snowflake_frozen_subsets_are_metric() {
        let s = make_snowflake(0.5, 1, vec![0.0]).unwrap();
        let d = s.distance(&s.locate(&[0.0]), &s.locate(&[4.0]));
        assert!((d - 2.0).abs() < 1e-15);
        for seed in 0..100 {
            let f = freeze(&s, 0.7, 4, seed).unwrap();
            assert_eq!(f.space.len(), 5);
        }
    }

    #[test]
    fn freeze_examples() {
        let f = freeze(&segment(), 0.1, 4, 9).unwrap();
        assert_eq!(f.space.len(), 5);
        assert_eq!(f.marked, 0);
        assert_eq!(f.points[0], Point::Coords(vec![0.0]));
        assert_eq!(segment().coordinates(&f.points[0]), Some(vec![0.0]));
        let a = freeze(&circle(), 0.2, 6, 42).unwrap();
        let b = freeze(&circle(), 0.2, 6, 42).unwrap();
        assert_eq!(a, b);
        assert!(freeze(&segment(), 0.1, 0, 0).is_err());
    }

    #[test]
    fn circle_offsets_are_accurate_near_p() {
        let c = circle();
        let t = c.sample_tuple(1e-6, 2, 5).unwrap();
        let abs: Vec<Vec<f64>> = t.iter().map(|x| c.coordinates(x).unwrap()).collect();
        for v in &abs {
            assert!((norm(v) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ray_points_lie_at_requested_distance() {
        for space in all_spaces() {
            for dir in 0..space.num_directions() {
                let r = 0.01;
                let q = space.ray_point(dir, r).unwrap();
                let d = space.distance_to_marked(&q);
                match space.config() {
                    SpaceConfig::Ultrametric { .. } => assert!(d <= r && d > 0.5 * r),
                    _ => assert!((d - r).abs() <= 1e-9, "{:?} dir {dir}: {d}", space.config()),
                }
            }
            assert!(space.ray_point(space.num_directions(), 0.1).is_none());
        }
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{"type":"euclidean","dim":2,"region":{"kind":"curve","shape":"parabola","a":2.0},"p":[0.0,0.0]}"#;
        let cfg: SpaceConfig = serde_json::from_str(text).unwrap();
        assert_eq!(
            cfg,
            SpaceConfig::Euclidean { dim: 2, region: Region::Curve(CurveSpec::Parabola { a: 2.0 }), p: vec![0.0, 0.0] }
        );
        let back: SpaceConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let u: SpaceConfig = serde_json::from_str(r#"{"type":"ultrametric","depth":3,"arity":2}"#).unwrap();
        assert!(MarkedSpace::from_config(u).is_ok());
    }
}
