//! Hierarchical beamforming codebook.
//!
//! Level `h` holds `2^h` beams; beam `(h, i)` covers the angular region
//! `P_{h,i}` and its children `(h+1, 2i-1)`, `(h+1, 2i)` bisect that region.
//! Vertices are 1-based on both coordinates.

use std::io::Write;

use crate::array::{inner, steering_vector_into, AngleInterval, ArrayConfig, PathSet, C64};
use crate::csvfmt::sig9;
use crate::{Error, Result};

/// Default midpoint-rule resolution for region averages.
pub const DEFAULT_QUADRATURE_POINTS: usize = 1024;

/// Relative tolerance under which two rewards count as tied.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vertex {
    pub level: u32,
    pub index: u32,
}

impl Vertex {
    pub const fn new(level: u32, index: u32) -> Self {
        Vertex { level, index }
    }

    pub fn children(self) -> [Vertex; 2] {
        [
            Vertex::new(self.level + 1, 2 * self.index - 1),
            Vertex::new(self.level + 1, 2 * self.index),
        ]
    }

    pub fn parent(self) -> Option<Vertex> {
        (self.level > 1).then(|| Vertex::new(self.level - 1, self.index.div_ceil(2)))
    }

    pub fn is_child_of(self, other: Vertex) -> bool {
        self.parent() == Some(other)
    }

    /// Inclusive range of leaf indices below this vertex in an `h_levels` tree.
    pub fn leaf_span(self, h_levels: u32) -> (u32, u32) {
        let width = 1u32 << (h_levels - self.level);
        ((self.index - 1) * width + 1, self.index * width)
    }

    /// Leaf directly left of this vertex's pointing angle (the vertex itself at level H).
    pub fn representative_leaf(self, h_levels: u32) -> u32 {
        let (lo, hi) = self.leaf_span(h_levels);
        if lo == hi {
            lo
        } else {
            lo + (hi - lo) / 2
        }
    }

    fn flat(self) -> usize {
        (1usize << self.level) - 2 + (self.index as usize - 1)
    }
}

/// Steered direction of `(h, i)`: midpoint of its region.
pub fn pointing_angle(h: u32, i: u32, theta_range: AngleInterval) -> Result<f64> {
    if h == 0 || h > 30 || i == 0 || i > (1u32 << h) {
        return Err(Error::invalid(format!("vertex ({h}, {i}) out of range")));
    }
    let w = theta_range.width();
    Ok(theta_range.lo + w * (2 * i - 1) as f64 / (1u64 << (h + 1)) as f64)
}

#[derive(Clone, Debug)]
pub struct HierarchicalCodebook {
    h_levels: u32,
    theta_range: AngleInterval,
    array_cfg: ArrayConfig,
    gain: f64,
    vectors: Vec<Vec<C64>>,
    regions: Vec<AngleInterval>,
}

impl HierarchicalCodebook {
    /// Averaged-steering design: each beam is the normalised sum of the
    /// array responses at the design-grid angles inside its region.
    ///
    /// `design_grid_points` midpoint nodes cover the whole of `theta_range`;
    /// every leaf must receive at least one node.
    pub fn build(
        h_levels: u32,
        theta_range: AngleInterval,
        array_cfg: ArrayConfig,
        design_grid_points: usize,
        gain: f64,
    ) -> Result<Self> {
        if h_levels == 0 || h_levels > 20 {
            return Err(Error::invalid("codebook depth must be in 1..=20"));
        }
        array_cfg.validate()?;
        let n_leaves = 1usize << h_levels;
        if design_grid_points < 4 * n_leaves {
            return Err(Error::invalid(format!(
                "design grid needs at least {} points for H = {h_levels}",
                4 * n_leaves
            )));
        }
        if theta_range.width() <= 0.0 {
            return Err(Error::invalid("codebook needs a nondegenerate angle range"));
        }

        let total = 2 * n_leaves - 2;
        let mut regions = vec![theta_range; total];
        for h in 1..=h_levels {
            for i in 1..=(1u32 << h) {
                let v = Vertex::new(h, i);
                let parent = v.parent().map_or(theta_range, |p| regions[p.flat()]);
                let mid = parent.midpoint();
                regions[v.flat()] = if i % 2 == 1 {
                    AngleInterval { lo: parent.lo, hi: mid }
                } else {
                    AngleInterval { lo: mid, hi: parent.hi }
                };
            }
        }

        let m = array_cfg.m_antennas;
        let mut sums = vec![vec![C64::new(0.0, 0.0); m]; total];
        let mut counts = vec![0usize; total];
        let mut a = vec![C64::new(0.0, 0.0); m];
        let leaf_base = Vertex::new(h_levels, 1).flat();
        let mut leaf = 0usize;
        for phi in theta_range.midpoint_grid(design_grid_points) {
            while leaf + 1 < n_leaves && phi >= regions[leaf_base + leaf].hi {
                leaf += 1;
            }
            steering_vector_into(phi, &array_cfg, &mut a);
            for (s, z) in sums[leaf_base + leaf].iter_mut().zip(&a) {
                *s += z;
            }
            counts[leaf_base + leaf] += 1;
        }
        if let Some(empty) = counts[leaf_base..].iter().position(|&c| c == 0) {
            return Err(Error::Internal(format!(
                "design grid too coarse: leaf {} has no nodes",
                empty + 1
            )));
        }
        // Parents aggregate the grids of their children exactly.
        for h in (1..h_levels).rev() {
            for i in 1..=(1u32 << h) {
                let v = Vertex::new(h, i);
                let [c1, c2] = v.children();
                let merged: Vec<C64> = sums[c1.flat()].iter().zip(&sums[c2.flat()]).map(|(x, y)| x + y).collect();
                sums[v.flat()] = merged;
            }
        }
        let vectors = sums
            .into_iter()
            .map(|mut s| {
                let n = crate::array::norm_sqr(&s).sqrt();
                if n == 0.0 {
                    return Err(Error::Internal("zero design vector".into()));
                }
                s.iter_mut().for_each(|z| *z /= n);
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(HierarchicalCodebook {
            h_levels,
            theta_range,
            array_cfg,
            gain,
            vectors,
            regions,
        })
    }

    pub fn h_levels(&self) -> u32 {
        self.h_levels
    }

    pub fn theta_range(&self) -> AngleInterval {
        self.theta_range
    }

    pub fn array_cfg(&self) -> &ArrayConfig {
        &self.array_cfg
    }

    /// Configured per-level gain `g`.
    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn num_vectors(&self) -> usize {
        self.vectors.len()
    }

    pub fn num_leaves(&self) -> u32 {
        1 << self.h_levels
    }

    pub fn contains(&self, v: Vertex) -> bool {
        v.level >= 1 && v.level <= self.h_levels && v.index >= 1 && v.index <= (1 << v.level)
    }

    pub fn vector(&self, v: Vertex) -> &[C64] {
        debug_assert!(self.contains(v));
        &self.vectors[v.flat()]
    }

    pub fn region(&self, v: Vertex) -> AngleInterval {
        self.regions[v.flat()]
    }

    pub fn pointing_angle(&self, v: Vertex) -> f64 {
        self.region(v).midpoint()
    }

    pub fn vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        (1..=self.h_levels).flat_map(|h| (1..=(1u32 << h)).map(move |i| Vertex::new(h, i)))
    }

    /// `w_v^H h` for every vertex, in [`Self::vertices`] order.
    pub fn projections(&self, h: &[C64]) -> Vec<C64> {
        self.vectors.iter().map(|w| inner(w, h)).collect()
    }

    /// Index of `v` in [`Self::vertices`] / [`Self::projections`] order.
    pub fn position(&self, v: Vertex) -> usize {
        v.flat()
    }
}

/// Noiseless means `f(P_{h,i}) = |w_{h,i}^H h|^2 + sigma^2` with per-level
/// maxima and gaps.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardProfile {
    h_levels: u32,
    sigma2: f64,
    values: Vec<f64>,
    best: Vec<u32>,
    gaps: Vec<f64>,
}

impl RewardProfile {
    /// `values` in [`HierarchicalCodebook::vertices`] order.
    pub fn from_values(h_levels: u32, values: Vec<f64>, sigma2: f64) -> Result<Self> {
        let expected = (1usize << (h_levels + 1)) - 2;
        if values.len() != expected {
            return Err(Error::invalid(format!(
                "profile for H = {h_levels} needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| !(v >= sigma2)) {
            return Err(Error::invalid(format!("mean reward {v} below the noise floor {sigma2}")));
        }
        let mut best = Vec::with_capacity(h_levels as usize);
        let mut gaps = vec![0.0; expected];
        for h in 1..=h_levels {
            let base = Vertex::new(h, 1).flat();
            let level = &values[base..base + (1 << h)];
            let (star, f_star) = argmax_lowest(level);
            let runner_up = level
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != star)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            for (k, &v) in level.iter().enumerate() {
                gaps[base + k] = if k == star { f_star - runner_up } else { f_star - v };
            }
            best.push(star as u32 + 1);
        }
        Ok(RewardProfile {
            h_levels,
            sigma2,
            values,
            best,
            gaps,
        })
    }

    pub fn h_levels(&self) -> u32 {
        self.h_levels
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn value(&self, v: Vertex) -> f64 {
        self.values[v.flat()]
    }

    /// Signal part `zeta = f - sigma^2`.
    pub fn zeta(&self, v: Vertex) -> f64 {
        self.value(v) - self.sigma2
    }

    pub fn gap(&self, v: Vertex) -> f64 {
        self.gaps[v.flat()]
    }

    pub fn best_at(&self, h: u32) -> u32 {
        self.best[h as usize - 1]
    }

    pub fn f_star(&self, h: u32) -> f64 {
        self.value(Vertex::new(h, self.best_at(h)))
    }

    pub fn level_values(&self, h: u32) -> &[f64] {
        let base = Vertex::new(h, 1).flat();
        &self.values[base..base + (1 << h)]
    }
}

/// Lowest-index argmax.
pub(crate) fn argmax_lowest(xs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = k;
        }
    }
    (best, xs[best])
}

pub fn profile_from_channel(cb: &HierarchicalCodebook, h: &[C64], sigma2: f64) -> RewardProfile {
    let values = cb.projections(h).into_iter().map(|p| p.norm_sqr() + sigma2).collect();
    RewardProfile::from_values(cb.h_levels, values, sigma2).expect("codebook-sized profile")
}

pub fn noiseless_profile(cb: &HierarchicalCodebook, paths: &PathSet, sigma2: f64) -> RewardProfile {
    let h = crate::array::channel_vector(paths, cb.array_cfg());
    profile_from_channel(cb, &h, sigma2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub unique_maxima: bool,
    /// `f*_{h+1} / f*_h` for `h = 1..H-1`.
    pub gain_ratios: Vec<f64>,
    pub max_gain_deviation: f64,
    /// Every `i*_{h+1}` is a child of `i*_h`.
    pub unimodal: bool,
    pub strictly_increasing: bool,
}

pub fn check_assumptions(profile: &RewardProfile, g_configured: f64) -> AssumptionReport {
    let h_levels = profile.h_levels();
    let unique_maxima = (1..=h_levels).all(|h| {
        let star = profile.best_at(h) as usize - 1;
        let values = profile.level_values(h);
        let f_star = values[star];
        let tol = TIE_TOL * f_star.abs().max(1.0);
        values
            .iter()
            .enumerate()
            .all(|(k, &v)| k == star || f_star - v > tol)
    });
    let gain_ratios: Vec<f64> = (1..h_levels)
        .map(|h| profile.f_star(h + 1) / profile.f_star(h))
        .collect();
    let max_gain_deviation = gain_ratios
        .iter()
        .map(|r| (r - g_configured).abs())
        .fold(0.0, f64::max);
    let unimodal = (1..h_levels).all(|h| {
        Vertex::new(h + 1, profile.best_at(h + 1)).is_child_of(Vertex::new(h, profile.best_at(h)))
    });
    let strictly_increasing = (1..h_levels).all(|h| profile.f_star(h + 1) > profile.f_star(h));
    AssumptionReport {
        unique_maxima,
        gain_ratios,
        max_gain_deviation,
        unimodal,
        strictly_increasing,
    }
}

/// Leaf indices whose mean is within `epsilon` of the best leaf.
pub fn epsilon_optimal_set(profile: &RewardProfile, epsilon: f64) -> Vec<u32> {
    let h = profile.h_levels();
    let f_star = profile.f_star(h);
    profile
        .level_values(h)
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v >= f_star - epsilon)
        .map(|(k, _)| k as u32 + 1)
        .collect()
}

/// Mean of `|w_v^H a(theta)|^2` over `region` by the midpoint rule.
pub fn average_rss_over(
    cb: &HierarchicalCodebook,
    v: Vertex,
    region: AngleInterval,
    grid_points: usize,
) -> Result<f64> {
    if grid_points < 16 {
        return Err(Error::invalid("average RSS needs at least 16 grid points"));
    }
    let w = cb.vector(v);
    let mut a = vec![C64::new(0.0, 0.0); w.len()];
    let mut acc = 0.0;
    for theta in region.midpoint_grid(grid_points) {
        steering_vector_into(theta, cb.array_cfg(), &mut a);
        acc += inner(w, &a).norm_sqr();
    }
    Ok(acc / grid_points as f64)
}

/// Average RSS of beam `v` over its own region.
pub fn average_rss(cb: &HierarchicalCodebook, v: Vertex, grid_points: usize) -> Result<f64> {
    average_rss_over(cb, v, cb.region(v), grid_points)
}

/// Relative spectral efficiency of accepting an `epsilon` loss on beam
/// `(level, index)` measured against `(level, reference)`.
pub fn spectral_efficiency_against(
    cb: &HierarchicalCodebook,
    level: u32,
    index: u32,
    reference: u32,
    epsilons: &[f64],
    sigma2: f64,
) -> Result<Vec<f64>> {
    let v = Vertex::new(level, index);
    let r = Vertex::new(level, reference);
    if !cb.contains(v) || !cb.contains(r) {
        return Err(Error::invalid("vertex outside codebook"));
    }
    if epsilons.iter().any(|&e| e < 0.0) {
        return Err(Error::invalid("epsilon must be >= 0"));
    }
    let f = average_rss(cb, v, DEFAULT_QUADRATURE_POINTS)?;
    let f_ref = average_rss(cb, r, DEFAULT_QUADRATURE_POINTS)?;
    let denom = (1.0 + f_ref / sigma2).log2();
    Ok(epsilons
        .iter()
        .map(|&e| (1.0 + (f - e).max(0.0) / sigma2).log2() / denom)
        .collect())
}

/// [`spectral_efficiency_against`] with the beam as its own reference.
pub fn spectral_efficiency_curve(
    cb: &HierarchicalCodebook,
    level: u32,
    index: u32,
    epsilons: &[f64],
    sigma2: f64,
) -> Result<Vec<f64>> {
    spectral_efficiency_against(cb, level, index, index, epsilons, sigma2)
}

/// Largest `epsilon` keeping relative spectral efficiency at `target` (bisection).
pub fn epsilon_for_efficiency(
    cb: &HierarchicalCodebook,
    level: u32,
    index: u32,
    sigma2: f64,
    target: f64,
) -> Result<f64> {
    let v = Vertex::new(level, index);
    let f = average_rss(cb, v, DEFAULT_QUADRATURE_POINTS)?;
    let denom = (1.0 + f / sigma2).log2();
    let xi = |e: f64| (1.0 + (f - e).max(0.0) / sigma2).log2() / denom;
    let (mut lo, mut hi) = (0.0, f);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if xi(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `level,index,theta_point,region_lo,region_hi,f_value,delta` (angles in radians).
pub fn write_profile_csv<W: Write>(
    cb: &HierarchicalCodebook,
    profile: &RewardProfile,
    mut out: W,
) -> Result<()> {
    writeln!(out, "level,index,theta_point,region_lo,region_hi,f_value,delta")?;
    for v in cb.vertices() {
        let r = cb.region(v);
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            v.level,
            v.index,
            sig9(cb.pointing_angle(v)),
            sig9(r.lo),
            sig9(r.hi),
            sig9(profile.value(v)),
            sig9(profile.gap(v))
        )?;
    }
    Ok(())
}
