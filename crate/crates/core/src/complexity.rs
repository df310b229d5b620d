//! Sample-complexity predictions.
//!
//! Per-arm hardness terms, the per-arm sample bound, the total bound with
//! constant 30, and the closed-form per-level sample count obtained from the
//! Lambert-W function. The pruning optimizer sweeps every pruning vector and
//! averages the predicted total over uniformly drawn dominant-path AoAs.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::array::PathSet;
use crate::codebook::{argmax_lowest, noiseless_profile, HierarchicalCodebook, RewardProfile, Vertex};
use crate::csvfmt::sig9;
use crate::sse::{epsilon_at_level, expand_contenders, exploration_rate, PruningVector, SseConfig, ROOT};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DeltaEpsMode {
    /// `max{(gap + eps_h)/4, eps_h/2}`.
    #[default]
    Standard,
    /// `max{gap, eps_h/2}`.
    Legacy,
}

pub fn delta_eps(gap: f64, eps_h: f64) -> f64 {
    delta_eps_with(gap, eps_h, DeltaEpsMode::Standard)
}

pub fn delta_eps_with(gap: f64, eps_h: f64, mode: DeltaEpsMode) -> f64 {
    match mode {
        DeltaEpsMode::Standard => ((gap + eps_h) / 4.0).max(eps_h / 2.0),
        DeltaEpsMode::Legacy => gap.max(eps_h / 2.0),
    }
}

/// `(2B nu2 + 2 sqrt(2BC) d + sqrt(4 B^2 nu2^2 + 2 sqrt(2C) B^1.5 nu2 d)) / d^2`.
pub fn hardness_term(nu2: f64, d: f64, b: f64, c: f64) -> f64 {
    let lin = 2.0 * b * nu2 + 2.0 * (2.0 * b * c).sqrt() * d;
    let root = (4.0 * b * b * nu2 * nu2 + 2.0 * (2.0 * c).sqrt() * b.powf(1.5) * nu2 * d).sqrt();
    (lin + root) / (d * d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmHardness {
    pub vertex: Vertex,
    /// Gap to the best (or runner-up) contender.
    pub gap: f64,
    pub delta_eps: f64,
    /// `nu^2 = sigma^4 + 2 sigma^2 zeta`.
    pub variance: f64,
    pub term: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelHardness {
    pub level: u32,
    pub eps_h: f64,
    pub arms: Vec<ArmHardness>,
    /// Sum of the per-arm terms.
    pub h_eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HardnessTerms {
    pub levels: Vec<LevelHardness>,
}

impl HardnessTerms {
    pub fn level(&self, h: u32) -> Option<&LevelHardness> {
        self.levels.iter().find(|l| l.level == h)
    }
}

/// Hardness of one level game over `contenders`. Gaps are measured within
/// the contender set.
pub fn level_hardness(
    profile: &RewardProfile,
    h: u32,
    contenders: &[Vertex],
    cfg: &SseConfig,
    mode: DeltaEpsMode,
) -> Result<LevelHardness> {
    if contenders.len() < 2 {
        return Err(Error::invalid("a level needs at least two contenders"));
    }
    let eps_h = epsilon_at_level(cfg.epsilon, cfg.gain, cfg.h_levels, h);
    let values: Vec<f64> = contenders.iter().map(|&v| profile.value(v)).collect();
    let (star, f_star) = argmax_lowest(&values);
    let runner_up = values
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != star)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let s2 = profile.sigma2();
    let mut arms = Vec::with_capacity(contenders.len());
    for (k, &v) in contenders.iter().enumerate() {
        let gap = if k == star { f_star - runner_up } else { f_star - values[k] };
        let d = delta_eps_with(gap, eps_h, mode);
        if !(d > 0.0) {
            return Err(Error::InfiniteHardness {
                level: v.level,
                index: v.index,
            });
        }
        let variance = s2 * s2 + 2.0 * s2 * profile.zeta(v);
        arms.push(ArmHardness {
            vertex: v,
            gap,
            delta_eps: d,
            variance,
            term: hardness_term(variance, d, cfg.b_param, cfg.c_param),
        });
    }
    let h_eps = arms.iter().map(|a| a.term).sum();
    Ok(LevelHardness { level: h, eps_h, arms, h_eps })
}

/// Hardness over explicit `(h, S_h)` pairs.
pub fn hardness(profile: &RewardProfile, contenders: &[(u32, Vec<Vertex>)], cfg: &SseConfig) -> Result<HardnessTerms> {
    let levels = contenders
        .iter()
        .map(|(h, s)| level_hardness(profile, *h, s, cfg, DeltaEpsMode::Standard))
        .collect::<Result<Vec<_>>>()?;
    Ok(HardnessTerms { levels })
}

/// Contender sets met when every played level returns its true best.
pub fn ideal_contenders(profile: &RewardProfile, pruning: &PruningVector) -> Vec<(u32, Vec<Vertex>)> {
    let mut survivors = vec![ROOT];
    let mut out = Vec::new();
    for h in 1..=pruning.h_levels() {
        let s = expand_contenders(&survivors);
        if pruning.plays(h) {
            let values: Vec<f64> = s.iter().map(|&v| profile.value(v)).collect();
            let (k, _) = argmax_lowest(&values);
            survivors = vec![s[k]];
            out.push((h, s));
        } else {
            survivors = s;
        }
    }
    out
}

/// `term * beta(T_h - 1) + 2`.
pub fn per_arm_bound(term: f64, t_h: u64, delta: f64, n_total: usize) -> f64 {
    term * exploration_rate(t_h.saturating_sub(1) as f64, delta, n_total) + 2.0
}

const NEG_INV_E: f64 = -0.36787944117144233;

/// Series around the branch point in `p = sqrt(2(e x + 1))`; `sign` picks the branch.
fn branch_point_guess(x: f64, sign: f64) -> f64 {
    let p = sign * (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
    -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
}

fn halley(x: f64, mut w: f64) -> f64 {
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

/// Principal branch `W_0`.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() || x < NEG_INV_E {
        return Err(Error::Domain(format!("W_0 undefined at {x}")));
    }
    if x == NEG_INV_E {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let guess = if x < -0.3 {
        branch_point_guess(x, 1.0)
    } else if x < 3.0 {
        let l = x.ln_1p();
        l * (1.0 - l.ln_1p() / (2.0 + l))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    Ok(halley(x, guess))
}

/// Lower branch `W_{-1}` on `[-1/e, 0)`.
pub fn lambert_wm1(x: f64) -> Result<f64> {
    if !(NEG_INV_E..0.0).contains(&x) {
        return Err(Error::Domain(format!("W_-1 undefined at {x}")));
    }
    wm1_from_log((-x).ln())
}

/// Solve `w + ln(-w) = l` for `w <= -1`, which is `W_{-1}(-e^l)`. Working
/// from `l` keeps tiny arguments representable.
pub fn wm1_from_log(l: f64) -> Result<f64> {
    if l.is_nan() || l > -1.0 {
        return Err(Error::Domain(format!("W_-1 undefined at -exp({l})")));
    }
    if l > -1.0 - 1e-12 {
        return Ok(-1.0);
    }
    if l > -1.5 {
        let x = -l.exp();
        return Ok(halley(x, branch_point_guess(x, -1.0)));
    }
    let mut w = l - (-l).ln();
    for _ in 0..64 {
        // Newton on g(w) = w + ln(-w) - l, g' = 1 + 1/w.
        let g = w + (-w).ln() - l;
        let step = g / (1.0 + 1.0 / w);
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w.abs() {
            break;
        }
    }
    Ok(w)
}

/// Per-level sample count: the least `T` with `T >= H_eps beta(T-1) + 2|S|`,
/// up to rounding, via the lower Lambert branch.
pub fn predicted_level_samples(h_eps: f64, s_size: usize, delta: f64, n_total: usize) -> Result<u64> {
    if !(h_eps >= 0.0) || !h_eps.is_finite() {
        return Err(Error::UnboundedPrediction(format!("hardness {h_eps}")));
    }
    let floor = 2.0 * s_size as f64;
    if h_eps == 0.0 {
        return Ok(floor as u64 + 1);
    }
    let k = 15.0 * n_total as f64 / (4.0 * delta);
    let four_h = 4.0 * h_eps;
    // ln(-x) with x = -exp(-(2|S|-1)/(4H)) / (4H K^{1/4}).
    let l = -(floor - 1.0) / four_h - four_h.ln() - 0.25 * k.ln();
    let w = wm1_from_log(l).map_err(|_| {
        Error::UnboundedPrediction(format!("Lambert argument below -1/e (H_eps = {h_eps}, |S| = {s_size})"))
    })?;
    let tau = -four_h * w;
    if !tau.is_finite() || tau > 9.0e15 {
        return Err(Error::UnboundedPrediction(format!("T = {tau}")));
    }
    Ok(tau.ceil() as u64 + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelPrediction {
    pub level: u32,
    pub s_size: usize,
    pub h_eps: f64,
    pub t_bar: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityPrediction {
    pub p_dec: u64,
    pub per_level: Vec<LevelPrediction>,
    pub total: u64,
    /// `30 sum H ln(H/delta) + 2 N_H`.
    pub coarse_total: f64,
    pub hardness: HardnessTerms,
}

pub fn coarse_total(terms: &HardnessTerms, delta: f64, n_total: usize) -> f64 {
    30.0 * terms.levels.iter().map(|l| l.h_eps * (l.h_eps / delta).ln()).sum::<f64>() + 2.0 * n_total as f64
}

/// Prediction for the pruning vector in `cfg`, assuming each level picks its
/// true best.
pub fn predict_for_profile(profile: &RewardProfile, cfg: &SseConfig) -> Result<ComplexityPrediction> {
    let n_total = cfg.pruning.total_arms();
    let terms = hardness(profile, &ideal_contenders(profile, &cfg.pruning), cfg)?;
    let per_level = terms
        .levels
        .iter()
        .map(|l| {
            Ok(LevelPrediction {
                level: l.level,
                s_size: l.arms.len(),
                h_eps: l.h_eps,
                t_bar: predicted_level_samples(l.h_eps, l.arms.len(), cfg.delta, n_total)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComplexityPrediction {
        p_dec: cfg.pruning.to_dec(),
        total: per_level.iter().map(|l| l.t_bar).sum(),
        coarse_total: coarse_total(&terms, cfg.delta, n_total),
        per_level,
        hardness: terms,
    })
}

pub fn write_prediction_csv<W: Write>(preds: &[ComplexityPrediction], mut out: W) -> Result<()> {
    writeln!(out, "p_dec,level,S_size,H_eps,T_bar,total,coarse_total")?;
    for p in preds {
        for l in &p.per_level {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.p_dec,
                l.level,
                l.s_size,
                sig9(l.h_eps),
                l.t_bar,
                p.total,
                sig9(p.coarse_total)
            )?;
        }
    }
    Ok(())
}

/// Noiseless profiles for dominant-path AoAs drawn uniformly over the
/// codebook range, shared across candidates.
pub fn sample_profiles<R: Rng + ?Sized>(
    cb: &HierarchicalCodebook,
    sigma2: f64,
    theta_samples: usize,
    rng: &mut R,
) -> Vec<RewardProfile> {
    let range = cb.theta_range();
    (0..theta_samples)
        .map(|_| rng.random_range(range.lo..range.hi))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|theta| noiseless_profile(cb, &PathSet::single(theta), sigma2))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectedComplexity {
    pub p_dec: u64,
    pub n_total: usize,
    pub mean: f64,
    pub std_err: f64,
    pub used: usize,
    pub excluded: usize,
    /// More than 10% of draws gave unbounded predictions.
    pub warning: bool,
}

/// Mean predicted total over `profiles` for pruning vector `pruning`.
pub fn expected_total_over(profiles: &[RewardProfile], pruning: &PruningVector, cfg: &SseConfig) -> ExpectedComplexity {
    let cfg = SseConfig {
        pruning: pruning.clone(),
        h_levels: pruning.h_levels(),
        ..cfg.clone()
    };
    let totals: Vec<f64> = profiles
        .iter()
        .filter_map(|p| predict_for_profile(p, &cfg).ok().map(|c| c.total as f64))
        .collect();
    let used = totals.len();
    let excluded = profiles.len() - used;
    let mean = if used > 0 { totals.iter().sum::<f64>() / used as f64 } else { f64::INFINITY };
    let std_err = if used > 1 {
        let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (used - 1) as f64;
        (var / used as f64).sqrt()
    } else {
        f64::NAN
    };
    ExpectedComplexity {
        p_dec: pruning.to_dec(),
        n_total: pruning.total_arms(),
        mean,
        std_err,
        used,
        excluded,
        warning: excluded * 10 > profiles.len(),
    }
}

/// Monte Carlo estimate of the expected predicted total over `theta_samples`
/// uniform dominant-path AoAs.
pub fn expected_total_complexity<R: Rng + ?Sized>(
    pruning: &PruningVector,
    cb: &HierarchicalCodebook,
    cfg: &SseConfig,
    sigma2: f64,
    theta_samples: usize,
    rng: &mut R,
) -> Result<ExpectedComplexity> {
    if theta_samples < 100 {
        return Err(Error::invalid("theta_samples must be at least 100"));
    }
    let profiles = sample_profiles(cb, sigma2, theta_samples, rng);
    Ok(expected_total_over(&profiles, pruning, cfg))
}

/// Every candidate ranked by expected total; ties broken by `N_H`, then `p_dec`.
pub fn rank_pruning_vectors(profiles: &[RewardProfile], cfg: &SseConfig) -> Vec<ExpectedComplexity> {
    let candidates: Vec<PruningVector> = PruningVector::all(cfg.h_levels).collect();
    let mut ranked: Vec<ExpectedComplexity> = candidates
        .par_iter()
        .map(|p| expected_total_over(profiles, p, cfg))
        .collect();
    ranked.sort_by(|a, b| {
        a.mean
            .total_cmp(&b.mean)
            .then(a.n_total.cmp(&b.n_total))
            .then(a.p_dec.cmp(&b.p_dec))
    });
    ranked
}

/// Exhaustive search for the pruning vector with the least expected total.
pub fn optimize_pruning<R: Rng + ?Sized>(
    cb: &HierarchicalCodebook,
    cfg: &SseConfig,
    sigma2: f64,
    theta_samples: usize,
    rng: &mut R,
) -> Result<(PruningVector, Vec<ExpectedComplexity>)> {
    if cfg.h_levels > 12 {
        return Err(Error::invalid("exhaustive pruning search supports H <= 12"));
    }
    if theta_samples == 0 {
        return Err(Error::invalid("theta_samples must be positive"));
    }
    let profiles = sample_profiles(cb, sigma2, theta_samples, rng);
    let ranked = rank_pruning_vectors(&profiles, cfg);
    let best = PruningVector::from_dec(ranked[0].p_dec, cfg.h_levels)?;
    Ok((best, ranked))
}

/// Leaves eliminated per sample at level `h`.
pub fn efficiency(h: u32, h_levels: u32, t_bar: f64) -> f64 {
    (1u64 << (h_levels - h)) as f64 / t_bar
}
