//! Domains, box regions, smooth coefficient fields, and the geometric
//! hypothesis checks: coefficient activity and nesting, the geometric control
//! condition by billiard ray sampling, and the piecewise multiplier condition.
//!
//! Regions are unions of open axis-aligned boxes: membership tests stay exact
//! and the sampled GCC/PMGC sets are unambiguous. The GCC checker quantifies
//! over a finite ray sample, so a `true` verdict is evidence, not a proof; a
//! `false` verdict comes with a concrete offending ray.

use crate::discretization::{Field, Grid};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("transition width {transition} is narrower than two grid spacings ({min})")]
    TransitionTooNarrow { transition: f64, min: f64 },
    #[error("region erosion by {transition} is empty: no plateau core")]
    EmptyCore { transition: f64 },
    #[error("fields are sampled on different grids")]
    GridMismatch,
}

/// The spatial domain: an open interval or an axis-aligned rectangle with its
/// lower-left corner at the origin.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Interval { length: f64 },
    Rectangle { lengths: [f64; 2] },
}

impl Domain {
    pub fn interval(length: f64) -> Self {
        assert!(length > 0.0, "extent must be strictly positive");
        Domain::Interval { length }
    }

    pub fn rectangle(lx: f64, ly: f64) -> Self {
        assert!(lx > 0.0 && ly > 0.0, "extents must be strictly positive");
        Domain::Rectangle { lengths: [lx, ly] }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rectangle { .. } => 2,
        }
    }

    pub fn extents(&self) -> Vec<f64> {
        match self {
            Domain::Interval { length } => vec![*length],
            Domain::Rectangle { lengths } => lengths.to_vec(),
        }
    }

    /// Longest diagonal, used by the observability-time heuristic.
    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Interval { length } => *length,
            Domain::Rectangle { lengths } => (lengths[0].powi(2) + lengths[1].powi(2)).sqrt(),
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Domain::Interval { length } => p[0] > 0.0 && p[0] < *length,
            Domain::Rectangle { lengths } => {
                p[0] > 0.0 && p[0] < lengths[0] && p[1] > 0.0 && p[1] < lengths[1]
            }
        }
    }
}

/// Open axis-aligned box, stored normalized (lo ≤ hi componentwise).
/// In 1D the second axis is the degenerate pair (0, 0) and is ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2 {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Box2 {
    pub fn interval(lo: f64, hi: f64) -> Self {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        Box2 {
            lo: [lo, 0.0],
            hi: [hi, 0.0],
        }
    }

    pub fn rect(lo: [f64; 2], hi: [f64; 2]) -> Self {
        let mut b = Box2 { lo, hi };
        for k in 0..2 {
            if b.lo[k] > b.hi[k] {
                std::mem::swap(&mut b.lo[k], &mut b.hi[k]);
            }
        }
        b
    }

    fn contains(&self, p: [f64; 2], dim: usize) -> bool {
        (0..dim).all(|k| p[k] > self.lo[k] && p[k] < self.hi[k])
    }

    /// Signed distance: negative inside, positive outside (exact for boxes).
    fn signed_distance(&self, p: [f64; 2], dim: usize) -> f64 {
        let mut outside2 = 0.0;
        let mut inside = f64::NEG_INFINITY;
        for k in 0..dim {
            let d_lo = self.lo[k] - p[k];
            let d_hi = p[k] - self.hi[k];
            let d = d_lo.max(d_hi); // negative inside the slab
            if d > 0.0 {
                outside2 += d * d;
            }
            inside = inside.max(d);
        }
        if outside2 > 0.0 {
            outside2.sqrt()
        } else {
            inside
        }
    }
}

/// A finite union of open boxes inside the domain closure; empty means the
/// trivial "no region" case.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Region {
    pub boxes: Vec<Box2>,
}

impl Region {
    pub fn empty() -> Self {
        Region { boxes: Vec::new() }
    }

    pub fn from_boxes(boxes: Vec<Box2>) -> Self {
        Region { boxes }
    }

    pub fn whole(domain: &Domain) -> Self {
        let e = domain.extents();
        let b = match domain.dim() {
            1 => Box2::interval(0.0, e[0]),
            _ => Box2::rect([0.0, 0.0], [e[0], e[1]]),
        };
        Region { boxes: vec![b] }
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn contains(&self, p: [f64; 2], dim: usize) -> bool {
        self.boxes.iter().any(|b| b.contains(p, dim))
    }

    /// Signed distance to the union: min over member boxes. Exact for
    /// disjoint boxes; a conservative underestimate inside overlaps.
    pub fn signed_distance(&self, p: [f64; 2], dim: usize) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.signed_distance(p, dim))
            .fold(f64::INFINITY, f64::min)
    }

    /// True if some box survives erosion by `margin` on every axis.
    fn has_core(&self, margin: f64, dim: usize) -> bool {
        self.boxes
            .iter()
            .any(|b| (0..dim).all(|k| b.hi[k] - b.lo[k] > 2.0 * margin))
    }
}

/// Grid-sampled coefficient realizing b(x) or c(x): zero outside its region,
/// `plateau` on the δ-erosion, quintic ramp in between. The ramp bounds the
/// discrete Lipschitz constant by 15/(8δ)·|plateau|.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub region: Region,
    pub plateau: f64,
    pub transition: f64,
    pub samples: Field,
    grid_shape: Vec<usize>,
}

impl CoefficientField {
    pub fn zero(grid: &Grid) -> Self {
        CoefficientField {
            region: Region::empty(),
            plateau: 0.0,
            transition: f64::INFINITY,
            samples: grid.zeros(),
            grid_shape: grid.n.clone(),
        }
    }

    /// Constant value at every interior node (no boundary ramp); used for
    /// spatially uniform damping or coupling.
    pub fn constant(grid: &Grid, value: f64) -> Self {
        CoefficientField {
            region: Region::whole(&grid.domain),
            plateau: value,
            transition: f64::INFINITY,
            samples: vec![value; grid.len()],
            grid_shape: grid.n.clone(),
        }
    }

    pub fn same_grid(&self, other: &CoefficientField) -> bool {
        self.grid_shape == other.grid_shape
    }

    /// Nodes where the sample is nonzero.
    pub fn support(&self) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Quintic smoothstep: C² ramp with s(0) = 0, s(1) = 1.
fn smoothstep5(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// Builds a W^{1,∞}-style cutoff on the grid: zero outside `region`, equal to
/// `plateau` at depth ≥ `transition` inside it, quintic in the band.
pub fn build_cutoff(
    region: &Region,
    plateau: f64,
    transition: f64,
    grid: &Grid,
) -> Result<CoefficientField, GeometryError> {
    if region.is_empty() {
        return Ok(CoefficientField {
            region: region.clone(),
            plateau,
            transition,
            samples: grid.zeros(),
            grid_shape: grid.n.clone(),
        });
    }
    let hmax = grid.h.iter().cloned().fold(0.0, f64::max);
    if transition < 2.0 * hmax {
        return Err(GeometryError::TransitionTooNarrow {
            transition,
            min: 2.0 * hmax,
        });
    }
    if !region.has_core(transition, grid.dim()) {
        return Err(GeometryError::EmptyCore { transition });
    }
    let dim = grid.dim();
    let samples = grid.sample(|p| {
        let sd = region.signed_distance(p, dim);
        if sd >= 0.0 {
            0.0
        } else {
            plateau * smoothstep5(-sd / transition)
        }
    });
    Ok(CoefficientField {
        region: region.clone(),
        plateau,
        transition,
        samples,
        grid_shape: grid.n.clone(),
    })
}

/// Verdicts for the standing hypotheses on the damping and coupling fields.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    /// Nonempty positivity set of the damping coefficient c.
    pub damping_active: bool,
    /// Nonempty non-vanishing set of the coupling coefficient b.
    pub coupling_active: bool,
    /// supp(b) ⊆ {c > 0} nodewise.
    pub inclusion: bool,
    /// supp(b) avoids every partition subdomain (present when a partition is given).
    pub partition_clearance: Option<bool>,
}

impl HypothesisReport {
    pub fn holds(&self) -> bool {
        self.damping_active
            && self.coupling_active
            && self.inclusion
            && self.partition_clearance.unwrap_or(true)
    }
}

/// Nodewise check of coefficient activity, the support nesting
/// supp(b) ⊆ {c > 0}, and optionally the partition clearance.
pub fn check_hypotheses(
    b: &CoefficientField,
    c: &CoefficientField,
    pmgc: Option<&PmgcPartition>,
    grid: &Grid,
) -> Result<HypothesisReport, GeometryError> {
    if !b.same_grid(c) || b.samples.len() != grid.len() {
        return Err(GeometryError::GridMismatch);
    }
    let damping_active = c.samples.iter().any(|&v| v > 0.0);
    let coupling_active = b.samples.iter().any(|&v| v != 0.0);
    let mut inclusion = coupling_active;
    for (i, &bv) in b.samples.iter().enumerate() {
        if bv != 0.0 && c.samples[i] <= 0.0 {
            inclusion = false;
            break;
        }
    }
    let partition_clearance = pmgc.map(|part| {
        let dim = grid.dim();
        b.samples.iter().enumerate().all(|(i, &bv)| {
            bv == 0.0
                || !part
                    .subdomains
                    .iter()
                    .any(|s| s.contains(grid.coords(i), dim))
        })
    });
    Ok(HypothesisReport {
        damping_active,
        coupling_active,
        inclusion,
        partition_clearance,
    })
}

/// A geometric-optics ray: start position and unit direction (scaled by the
/// wave speed when traced).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 2],
    pub direction: [f64; 2],
}

/// Outcome of the sampled geometric control condition check.
#[derive(Debug, Clone)]
pub struct GccReport {
    pub holds: bool,
    /// Largest first-entry time among rays that reached the region; this is
    /// the empirical control time of the sample.
    pub max_entry_time: f64,
    /// A ray that never entered (when `holds` is false), otherwise the ray
    /// achieving `max_entry_time`.
    pub worst_ray: Ray,
    pub rays_traced: usize,
    pub rays_missed: usize,
}

pub const DEFAULT_RAYS_1D: usize = 10_000;
pub const DEFAULT_RAYS_2D: usize = 131_072;

/// Traces billiard rays at speed √a for duration `horizon` and reports whether
/// every sampled ray meets `region`. Corner hits reverse both components.
pub fn gcc_check(
    region: &Region,
    domain: &Domain,
    speed_sq: f64,
    horizon: f64,
    n_rays: usize,
) -> GccReport {
    assert!(n_rays >= 1, "need at least one ray");
    assert!(horizon > 0.0, "horizon must be positive");
    assert!(speed_sq > 0.0, "wave speed must be positive");
    let speed = speed_sq.sqrt();
    let rays = sample_rays(domain, n_rays);
    let mut holds = true;
    let mut max_entry = 0.0_f64;
    let mut worst = rays[0];
    let mut missed = 0usize;
    let traced = rays.len();
    for ray in rays {
        match first_entry_time(&ray, region, domain, speed, horizon) {
            Some(t) => {
                if t > max_entry {
                    max_entry = t;
                    if holds {
                        worst = ray;
                    }
                }
            }
            None => {
                if holds {
                    worst = ray;
                    holds = false;
                }
                missed += 1;
            }
        }
    }
    GccReport {
        holds,
        max_entry_time: max_entry,
        worst_ray: worst,
        rays_traced: traced,
        rays_missed: missed,
    }
}

/// Deterministic ray sample: uniform starting positions × directions.
/// 1D: n/2 positions × {−1, +1}. 2D: p×p positions × 32 angles with
/// p = ⌈√(n/32)⌉, so the default 131072 is the 64×64×32 grid.
pub fn sample_rays(domain: &Domain, n_rays: usize) -> Vec<Ray> {
    let e = domain.extents();
    match domain.dim() {
        1 => {
            let n_pos = (n_rays / 2).max(1);
            let mut rays = Vec::with_capacity(n_pos * 2);
            for i in 0..n_pos {
                let x = e[0] * (i as f64 + 0.5) / n_pos as f64;
                rays.push(Ray {
                    origin: [x, 0.0],
                    direction: [1.0, 0.0],
                });
                rays.push(Ray {
                    origin: [x, 0.0],
                    direction: [-1.0, 0.0],
                });
            }
            rays
        }
        _ => {
            let n_angles = 32usize;
            let per_axis = ((n_rays as f64 / n_angles as f64).sqrt().ceil() as usize).max(1);
            let mut rays = Vec::with_capacity(per_axis * per_axis * n_angles);
            for iy in 0..per_axis {
                for ix in 0..per_axis {
                    let p = [
                        e[0] * (ix as f64 + 0.5) / per_axis as f64,
                        e[1] * (iy as f64 + 0.5) / per_axis as f64,
                    ];
                    for k in 0..n_angles {
                        let th = 2.0 * std::f64::consts::PI * k as f64 / n_angles as f64;
                        rays.push(Ray {
                            origin: p,
                            direction: [th.cos(), th.sin()],
                        });
                    }
                }
            }
            rays
        }
    }
}

/// Analytic first-entry time of a billiard ray into the region, or None if it
/// stays outside for the whole horizon. Segments are advanced wall to wall, so
/// no time discretization error enters.
pub fn first_entry_time(
    ray: &Ray,
    region: &Region,
    domain: &Domain,
    speed: f64,
    horizon: f64,
) -> Option<f64> {
    if region.is_empty() {
        return None;
    }
    let dim = domain.dim();
    let e = domain.extents();
    let mut p = ray.origin;
    let mut w = [ray.direction[0] * speed, ray.direction[1] * speed];
    let mut elapsed = 0.0;
    // Bound the number of reflections; generous for any sane horizon.
    let max_segments = 16 + (horizon * speed / e.iter().cloned().fold(f64::INFINITY, f64::min)
        * 4.0) as usize;
    for _ in 0..max_segments {
        // time to the next wall along each axis
        let mut t_wall = f64::INFINITY;
        for k in 0..dim {
            if w[k] > 0.0 {
                t_wall = t_wall.min((e[k] - p[k]) / w[k]);
            } else if w[k] < 0.0 {
                t_wall = t_wall.min(-p[k] / w[k]);
            }
        }
        let t_seg = t_wall.min(horizon - elapsed);
        if t_seg < 0.0 {
            return None;
        }
        if let Some(t) = segment_entry(p, w, t_seg, region, dim) {
            return Some(elapsed + t);
        }
        if elapsed + t_seg >= horizon {
            return None;
        }
        // advance to the wall and reflect every arriving component
        for k in 0..dim {
            p[k] += w[k] * t_wall;
        }
        for k in 0..dim {
            if p[k] <= 0.0 {
                p[k] = 0.0;
                w[k] = w[k].abs();
            } else if p[k] >= e[k] {
                p[k] = e[k];
                w[k] = -w[k].abs();
            }
        }
        elapsed += t_wall;
    }
    None
}

/// Earliest time in [0, t_max] at which the straight segment p + t·w meets an
/// open box of the region (slab intersection, exact).
fn segment_entry(p: [f64; 2], w: [f64; 2], t_max: f64, region: &Region, dim: usize) -> Option<f64> {
    let mut best: Option<f64> = None;
    for b in &region.boxes {
        let mut t_in = 0.0_f64;
        let mut t_out = t_max;
        let mut feasible = true;
        for k in 0..dim {
            if w[k] == 0.0 {
                if p[k] <= b.lo[k] || p[k] >= b.hi[k] {
                    feasible = false;
                    break;
                }
            } else {
                let (mut a, mut c) = ((b.lo[k] - p[k]) / w[k], (b.hi[k] - p[k]) / w[k]);
                if a > c {
                    std::mem::swap(&mut a, &mut c);
                }
                t_in = t_in.max(a);
                t_out = t_out.min(c);
            }
        }
        if feasible && t_in < t_out {
            let t = t_in.max(0.0);
            if best.is_none_or(|cur| t < cur) {
                best = Some(t);
            }
        }
    }
    best
}

/// Disjoint subdomains Ω_j with observation points x_j and neighborhood
/// radius ε for the piecewise multipliers condition.
#[derive(Debug, Clone, PartialEq)]
pub struct PmgcPartition {
    pub subdomains: Vec<Box2>,
    pub points: Vec<[f64; 2]>,
    pub epsilon: f64,
}

impl PmgcPartition {
    pub fn new(subdomains: Vec<Box2>, points: Vec<[f64; 2]>, epsilon: f64) -> Self {
        assert_eq!(
            subdomains.len(),
            points.len(),
            "one observation point per subdomain"
        );
        assert!(epsilon > 0.0, "neighborhood radius must be positive");
        assert!(
            points.iter().all(|p| p.iter().all(|v| v.is_finite())),
            "observation points must be finite"
        );
        for (i, a) in subdomains.iter().enumerate() {
            for b in subdomains.iter().skip(i + 1) {
                // degenerate axes (1D boxes carry a collapsed second axis) don't separate
                let overlap = (0..2).all(|k| {
                    let degenerate = a.lo[k] == a.hi[k] && b.lo[k] == b.hi[k];
                    degenerate || (a.lo[k] < b.hi[k] && b.lo[k] < a.hi[k])
                });
                assert!(!overlap, "subdomains must be pairwise disjoint");
            }
        }
        PmgcPartition {
            subdomains,
            points,
            epsilon,
        }
    }

    /// Outward-facing boundary faces γ_j(x_j) of subdomain `j` as
    /// (axis, coordinate, span) triples. Exact on boxes: a face is in γ_j iff
    /// the face-normal coordinate test (x − x_j)·ν > 0 holds, which is
    /// constant over the face.
    fn outward_faces(&self, j: usize, dim: usize) -> Vec<Face> {
        let b = &self.subdomains[j];
        let x = &self.points[j];
        let mut faces = Vec::new();
        for k in 0..dim {
            // min face, outward normal −e_k: (x − x_j)·ν = x_j[k] − lo_k > 0
            if x[k] > b.lo[k] {
                faces.push(Face {
                    axis: k,
                    coord: b.lo[k],
                    lo: b.lo[1 - k],
                    hi: b.hi[1 - k],
                });
            }
            // max face, outward normal +e_k: (x − x_j)·ν = hi_k − x_j[k] > 0
            if x[k] < b.hi[k] {
                faces.push(Face {
                    axis: k,
                    coord: b.hi[k],
                    lo: b.lo[1 - k],
                    hi: b.hi[1 - k],
                });
            }
        }
        faces
    }
}

/// One axis-aligned boundary face: {x_axis = coord} × [lo, hi] on the other axis.
struct Face {
    axis: usize,
    coord: f64,
    lo: f64,
    hi: f64,
}

impl Face {
    fn distance(&self, p: [f64; 2], dim: usize) -> f64 {
        let dn = (p[self.axis] - self.coord).abs();
        if dim == 1 {
            return dn;
        }
        let other = p[1 - self.axis];
        let dt = if other < self.lo {
            self.lo - other
        } else if other > self.hi {
            other - self.hi
        } else {
            0.0
        };
        (dn * dn + dt * dt).sqrt()
    }
}

/// Nodewise PMGC test: every grid node within ε of the required set
/// ∪_j γ_j(x_j) ∪ (Ω ∖ ∪_j Ω_j) must lie in `region`.
pub fn pmgc_check(
    region: &Region,
    domain: &Domain,
    pmgc: &PmgcPartition,
    grid: &Grid,
) -> Result<bool, GeometryError> {
    if grid.domain != *domain {
        return Err(GeometryError::GridMismatch);
    }
    let dim = domain.dim();
    let eps = pmgc.epsilon;
    let faces: Vec<Face> = (0..pmgc.subdomains.len())
        .flat_map(|j| pmgc.outward_faces(j, dim))
        .collect();
    // nodes of the partition complement Ω ∖ ∪Ω_j
    let complement: Vec<[f64; 2]> = (0..grid.len())
        .map(|i| grid.coords(i))
        .filter(|&p| !pmgc.subdomains.iter().any(|s| s.contains(p, dim)))
        .collect();

    for i in 0..grid.len() {
        let p = grid.coords(i);
        let near_face = faces.iter().any(|f| f.distance(p, dim) < eps);
        let near_complement = near_face
            || complement.iter().any(|q| {
                let mut d2 = 0.0;
                for k in 0..dim {
                    d2 += (p[k] - q[k]) * (p[k] - q[k]);
                }
                d2 < eps * eps
            });
        if near_complement && !region.contains(p, dim) {
            return Ok(false);
        }
    }
    Ok(true)
}
