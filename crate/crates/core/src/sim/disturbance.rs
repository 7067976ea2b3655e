//! True disturbance models used to drive simulations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::polytope::{HPolytope, PolytopeError, TOL_SET};

use super::SimError;

const MAX_REJECTIONS: usize = 100_000;

/// Sampling law over a polytope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    /// Uniform, by rejection from the bounding box.
    Uniform,
    /// Mixture of uniform laws over sub-polytopes of the support.
    Patches { patches: Vec<HPolytope>, weights: Vec<f64> },
    /// With probability `boundary_prob` a point on the boundary, otherwise uniform.
    BoundaryBiased { boundary_prob: f64 },
}

/// One independent source, `w_part = map · ξ` with `ξ` drawn from `distribution`
/// over `support`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub support: HPolytope,
    #[serde(with = "crate::linalg::serde_matrix")]
    pub map: DMatrix<f64>,
    pub distribution: Distribution,
}

/// i.i.d. disturbance law: a sum of independent components, plus optional
/// extreme atoms.
///
/// With probability `extreme_prob` a draw is the maximiser of a direction
/// picked uniformly from the template rows (the same direction for every
/// component, so the sum is the maximiser of the composed set). This keeps
/// every template-extreme point of the support reachable with positive
/// probability.
#[derive(Clone, Debug)]
pub struct TrueDisturbanceModel {
    support: HPolytope,
    components: Vec<Component>,
    extreme_prob: f64,
    extremes: Vec<DVector<f64>>,
    boxes: Vec<(DVector<f64>, DVector<f64>)>,
    boundaries: Vec<Option<Vec<[f64; 2]>>>,
}

impl TrueDisturbanceModel {
    /// Single component sampled directly in disturbance space.
    pub fn direct(support: HPolytope, distribution: Distribution, template: &DMatrix<f64>, extreme_prob: f64) -> Result<Self, SimError> {
        let n = support.dim();
        Self::composed(vec![Component { support, map: DMatrix::identity(n, n), distribution }], template, extreme_prob)
    }

    /// Sum of independent components. The support is kept in H-representation
    /// over `template`, with offsets the sum of the component support values.
    pub fn composed(components: Vec<Component>, template: &DMatrix<f64>, extreme_prob: f64) -> Result<Self, SimError> {
        if components.is_empty() {
            return Err(SimError::Config("disturbance model needs at least one component".into()));
        }
        if !(0.0..=1.0).contains(&extreme_prob) {
            return Err(SimError::Config(format!("extreme_prob = {extreme_prob} outside [0, 1]")));
        }
        let n = template.ncols();
        let mut offsets = DVector::zeros(template.nrows());
        let mut extremes = vec![DVector::zeros(n); template.nrows()];
        let mut boxes = Vec::new();
        let mut boundaries = Vec::new();
        for (ci, c) in components.iter().enumerate() {
            if c.map.nrows() != n || c.map.ncols() != c.support.dim() {
                return Err(SimError::Config(format!(
                    "component {ci}: map is {}x{}, expected {n}x{}",
                    c.map.nrows(),
                    c.map.ncols(),
                    c.support.dim()
                )));
            }
            check_distribution(ci, c)?;
            let dirs = template * &c.map;
            for j in 0..template.nrows() {
                let (val, arg) = c.support.argmax(&dirs.row(j).transpose())?;
                offsets[j] += val;
                extremes[j] += &c.map * arg;
            }
            boxes.push(c.support.bounding_box()?);
            boundaries.push(if c.support.dim() == 2 { Some(c.support.vertices_2d()?) } else { None });
        }
        let support = HPolytope::new(template.clone(), offsets)?;
        Ok(Self { support, components, extreme_prob, extremes, boxes, boundaries })
    }

    pub fn support(&self) -> &HPolytope {
        &self.support
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn extreme_prob(&self) -> f64 {
        self.extreme_prob
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    /// `support ⊆ w`.
    pub fn is_inside(&self, w: &HPolytope) -> Result<bool, PolytopeError> {
        w.contains(&self.support)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>, SimError> {
        if self.extreme_prob > 0.0 && rng.random::<f64>() < self.extreme_prob {
            let j = rng.random_range(0..self.extremes.len());
            return Ok(self.extremes[j].clone());
        }
        let mut w = DVector::zeros(self.dim());
        for (ci, c) in self.components.iter().enumerate() {
            let xi = match &c.distribution {
                Distribution::Uniform => uniform(&c.support, &self.boxes[ci], rng)?,
                Distribution::Patches { patches, weights } => {
                    let total: f64 = weights.iter().sum();
                    let mut t = rng.random::<f64>() * total;
                    let mut pick = patches.len() - 1;
                    for (i, wt) in weights.iter().enumerate() {
                        if t < *wt {
                            pick = i;
                            break;
                        }
                        t -= wt;
                    }
                    let bb = patches[pick].bounding_box()?;
                    uniform(&patches[pick], &bb, rng)?
                }
                Distribution::BoundaryBiased { boundary_prob } => {
                    if rng.random::<f64>() < *boundary_prob {
                        boundary_point(&c.support, &self.boxes[ci], self.boundaries[ci].as_deref(), rng)?
                    } else {
                        uniform(&c.support, &self.boxes[ci], rng)?
                    }
                }
            };
            w += &c.map * xi;
        }
        Ok(w)
    }

    pub fn sample_many<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<DVector<f64>>, SimError> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

fn check_distribution(ci: usize, c: &Component) -> Result<(), SimError> {
    match &c.distribution {
        Distribution::Uniform => Ok(()),
        Distribution::Patches { patches, weights } => {
            if patches.is_empty() || patches.len() != weights.len() {
                return Err(SimError::Config(format!("component {ci}: patches and weights must be nonempty and of equal length")));
            }
            if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
                return Err(SimError::Config(format!("component {ci}: patch weights must be nonnegative with positive sum")));
            }
            for (i, p) in patches.iter().enumerate() {
                if p.dim() != c.support.dim() || !c.support.contains(p)? {
                    return Err(SimError::Config(format!("component {ci}: patch {i} is not inside the component support")));
                }
            }
            Ok(())
        }
        Distribution::BoundaryBiased { boundary_prob } => {
            if !(0.0..=1.0).contains(boundary_prob) {
                return Err(SimError::Config(format!("component {ci}: boundary_prob outside [0, 1]")));
            }
            Ok(())
        }
    }
}

/// Uniform over `p` by rejection from its bounding box; coordinates with zero
/// width are fixed.
fn uniform<R: Rng + ?Sized>(p: &HPolytope, bb: &(DVector<f64>, DVector<f64>), rng: &mut R) -> Result<DVector<f64>, SimError> {
    let (lo, hi) = bb;
    let n = lo.len();
    for _ in 0..MAX_REJECTIONS {
        let x = DVector::from_fn(n, |i, _| if hi[i] > lo[i] { rng.random_range(lo[i]..hi[i]) } else { lo[i] });
        if p.contains_point(&x, TOL_SET) {
            return Ok(x);
        }
    }
    Err(SimError::Sampling("rejection sampling failed; the support is probably lower-dimensional and not axis-aligned".into()))
}

/// A boundary point: an endpoint in 1-D, a point on an edge chosen with
/// probability proportional to length in 2-D, and the exit point of a random
/// ray from a uniform interior point otherwise.
fn boundary_point<R: Rng + ?Sized>(
    p: &HPolytope,
    bb: &(DVector<f64>, DVector<f64>),
    verts: Option<&[[f64; 2]]>,
    rng: &mut R,
) -> Result<DVector<f64>, SimError> {
    let n = p.dim();
    if n == 1 {
        let (lo, hi) = bb;
        return Ok(if rng.random::<bool>() { lo.clone() } else { hi.clone() });
    }
    if let Some(v) = verts {
        if v.len() >= 2 {
            let m = v.len();
            let lens: Vec<f64> = (0..m).map(|i| (v[(i + 1) % m][0] - v[i][0]).hypot(v[(i + 1) % m][1] - v[i][1])).collect();
            let total: f64 = lens.iter().sum();
            if total > 0.0 {
                let mut t = rng.random::<f64>() * total;
                for i in 0..m {
                    if t <= lens[i] || i == m - 1 {
                        let s = (t / lens[i]).clamp(0.0, 1.0);
                        let a = v[i];
                        let b = v[(i + 1) % m];
                        return Ok(DVector::from_vec(vec![a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]));
                    }
                    t -= lens[i];
                }
            }
        }
        return uniform(p, bb, rng);
    }
    let x = uniform(p, bb, rng)?;
    let d = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    let vd = p.normals() * &d;
    let slack = p.offsets() - p.normals() * &x;
    let mut t = f64::INFINITY;
    for i in 0..vd.len() {
        if vd[i] > 1e-15 {
            t = t.min(slack[i] / vd[i]);
        }
    }
    Ok(if t.is_finite() { x + d * t } else { x })
}
