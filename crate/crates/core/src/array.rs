//! Uniform linear array channel model.
//!
//! A beacon reaches the base station over `K` propagation paths. Path `k`
//! contributes `alpha_k * sqrt(P_k) * a(theta_k)` to the noiseless channel
//! `h`, where `a` is the array response. A beamformer `w` then observes the
//! scalar `w^H h + n` and the bandit reward is its squared magnitude, a scaled
//! non-central chi-squared variable with two degrees of freedom.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub type C64 = Complex64;

/// Tolerance on `||w|| = 1` accepted by [`observe_reward`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArrayConfig {
    pub m_antennas: usize,
    /// Element spacing over carrier wavelength, `d / lambda`.
    pub spacing_ratio: f64,
    /// Divide steering vectors by `sqrt(M)`.
    pub normalize_steering: bool,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            m_antennas: 128,
            spacing_ratio: 0.5,
            normalize_steering: false,
        }
    }
}

impl ArrayConfig {
    pub fn new(m_antennas: usize, spacing_ratio: f64, normalize_steering: bool) -> Result<Self> {
        let cfg = ArrayConfig {
            m_antennas,
            spacing_ratio,
            normalize_steering,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_antennas < 2 {
            return Err(Error::invalid("array needs at least 2 antennas"));
        }
        if !(self.spacing_ratio > 0.0 && self.spacing_ratio.is_finite()) {
            return Err(Error::invalid("spacing ratio must be positive"));
        }
        Ok(())
    }
}

/// Closed angular interval `[lo, hi]` in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngleInterval {
    pub lo: f64,
    pub hi: f64,
}

impl AngleInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::invalid(format!("bad angle interval [{lo}, {hi}]")));
        }
        if lo < 0.0 || hi > 2.0 * std::f64::consts::PI {
            return Err(Error::invalid("angle interval must lie within [0, 2pi)"));
        }
        Ok(AngleInterval { lo, hi })
    }

    pub fn from_degrees(lo: f64, hi: f64) -> Result<Self> {
        Self::new(lo.to_radians(), hi.to_radians())
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Half-open membership `[lo, hi)`.
    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.lo && theta < self.hi
    }

    /// Midpoint-rule nodes: `n` equally spaced cell centres.
    pub fn midpoint_grid(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        let step = self.width() / n as f64;
        (0..n).map(move |k| self.lo + (k as f64 + 0.5) * step)
    }
}

/// `a(theta)_m = exp(j 2 pi (d/lambda) m cos(theta))`, optionally scaled by `1/sqrt(M)`.
pub fn steering_vector(theta: f64, cfg: &ArrayConfig) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); cfg.m_antennas];
    steering_vector_into(theta, cfg, &mut out);
    out
}

pub fn steering_vector_into(theta: f64, cfg: &ArrayConfig, out: &mut [C64]) {
    let phase = 2.0 * std::f64::consts::PI * cfg.spacing_ratio * theta.cos();
    let scale = if cfg.normalize_steering {
        1.0 / (cfg.m_antennas as f64).sqrt()
    } else {
        1.0
    };
    for (m, slot) in out.iter_mut().enumerate() {
        *slot = C64::from_polar(scale, phase * m as f64);
    }
}

/// `w^H h`.
pub fn inner(w: &[C64], h: &[C64]) -> C64 {
    w.iter().zip(h).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Path {
    pub aoa: f64,
    /// Linear received power `P_k`.
    pub power: f64,
    pub fading: C64,
}

/// The propagation paths of one scenario. Index 0 is the dominant path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::invalid("path set must be nonempty"));
        }
        Ok(PathSet { paths })
    }

    /// Single unit-power path with unit fading.
    pub fn single(aoa: f64) -> Self {
        PathSet {
            paths: vec![Path {
                aoa,
                power: 1.0,
                fading: C64::new(1.0, 0.0),
            }],
        }
    }

    pub fn dominant(&self) -> &Path {
        &self.paths[0]
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, model: &FadingModel, rng: &mut R) {
        for p in &mut self.paths {
            p.fading = model.step(p.fading, rng);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingMode {
    Static,
    RicianAr1,
}

/// First-order autoregressive Rician fading.
///
/// The recursion is `alpha <- rho * alpha + sqrt(1 - rho^2) * (mu + e)` with
/// `e ~ CN(0, s2)`. Its stationary law is complex Gaussian with mean
/// `mu * sqrt((1 + rho) / (1 - rho))` and variance `s2`, so `mu` and `s2`
/// are chosen to give K-factor `K` and unit mean power.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FadingModel {
    pub mode: FadingMode,
    pub ar_coefficient: f64,
    pub rician_k_factor: f64,
}

impl Default for FadingModel {
    fn default() -> Self {
        FadingModel {
            mode: FadingMode::Static,
            ar_coefficient: 0.995,
            rician_k_factor: 10.0,
        }
    }
}

impl FadingModel {
    pub fn rician(rho: f64, k_factor: f64) -> Result<Self> {
        let m = FadingModel {
            mode: FadingMode::RicianAr1,
            ar_coefficient: rho,
            rician_k_factor: k_factor,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ar_coefficient) {
            return Err(Error::invalid("AR coefficient must lie in [0, 1]"));
        }
        if !(self.rician_k_factor >= 0.0 && self.rician_k_factor.is_finite()) {
            return Err(Error::invalid("Rician K-factor must be >= 0"));
        }
        Ok(())
    }

    /// Stationary line-of-sight amplitude, `sqrt(K / (K + 1))`.
    pub fn los_amplitude(&self) -> f64 {
        (self.rician_k_factor / (self.rician_k_factor + 1.0)).sqrt()
    }

    pub fn diffuse_variance(&self) -> f64 {
        1.0 / (self.rician_k_factor + 1.0)
    }

    /// Draw from the stationary distribution (or 1 for static fading).
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> C64 {
        match self.mode {
            FadingMode::Static => C64::new(1.0, 0.0),
            FadingMode::RicianAr1 => {
                C64::new(self.los_amplitude(), 0.0) + complex_gaussian(rng, self.diffuse_variance())
            }
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, alpha: C64, rng: &mut R) -> C64 {
        match self.mode {
            FadingMode::Static => alpha,
            FadingMode::RicianAr1 => {
                let rho = self.ar_coefficient;
                if rho >= 1.0 {
                    return alpha;
                }
                let mu = self.los_amplitude() * ((1.0 - rho) / (1.0 + rho)).sqrt();
                let innov = C64::new(mu, 0.0) + complex_gaussian(rng, self.diffuse_variance());
                alpha * rho + innov * (1.0 - rho * rho).sqrt()
            }
        }
    }
}

/// Noise variance for a given raw SNR of the unit-power dominant path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub sigma2: f64,
}

impl NoiseModel {
    pub fn from_snr_db(snr_db: f64) -> Self {
        NoiseModel {
            sigma2: 10f64.powf(-snr_db / 10.0),
        }
    }
}

/// Circularly-symmetric complex Gaussian with total variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Draw `k_paths` AoAs uniformly in `range`; path 0 has unit power, the rest
/// are `attenuation_db` down.
pub fn sample_paths<R: Rng + ?Sized>(
    rng: &mut R,
    k_paths: usize,
    range: AngleInterval,
    attenuation_db: f64,
    fading: &FadingModel,
) -> Result<PathSet> {
    if k_paths == 0 {
        return Err(Error::invalid("k_paths must be >= 1"));
    }
    let side_power = 10f64.powf(-attenuation_db / 10.0);
    let mut paths = Vec::with_capacity(k_paths);
    for k in 0..k_paths {
        let aoa = if range.width() > 0.0 {
            rng.random_range(range.lo..=range.hi)
        } else {
            range.lo
        };
        paths.push(Path {
            aoa,
            power: if k == 0 { 1.0 } else { side_power },
            fading: fading.initial_state(rng),
        });
    }
    Ok(PathSet { paths })
}

pub fn advance_fading<R: Rng + ?Sized>(state: &PathSet, model: &FadingModel, rng: &mut R) -> PathSet {
    let mut next = state.clone();
    next.advance(model, rng);
    next
}

/// Noiseless channel `h = sum_k alpha_k sqrt(P_k) a(theta_k)`.
pub fn channel_vector(paths: &PathSet, cfg: &ArrayConfig) -> Vec<C64> {
    let mut h = vec![C64::new(0.0, 0.0); cfg.m_antennas];
    let mut a = vec![C64::new(0.0, 0.0); cfg.m_antennas];
    for p in &paths.paths {
        steering_vector_into(p.aoa, cfg, &mut a);
        let coeff = p.fading * p.power.sqrt();
        for (hm, am) in h.iter_mut().zip(&a) {
            *hm += coeff * am;
        }
    }
    h
}

/// `y = |w^H h + n|^2` with `n ~ CN(0, sigma2)`.
pub fn observe_reward<R: Rng + ?Sized>(w: &[C64], h: &[C64], sigma2: f64, rng: &mut R) -> Result<f64> {
    if w.len() != h.len() {
        return Err(Error::invalid(format!(
            "beamformer has {} entries, channel has {}",
            w.len(),
            h.len()
        )));
    }
    let nrm = norm_sqr(w).sqrt();
    if (nrm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::invalid(format!("beamformer norm {nrm} is not 1")));
    }
    Ok(reward_from_projection(inner(w, h), sigma2, rng))
}

/// Reward for a precomputed noiseless projection `w^H h`.
#[inline]
pub fn reward_from_projection<R: Rng + ?Sized>(proj: C64, sigma2: f64, rng: &mut R) -> f64 {
    if sigma2 == 0.0 {
        return proj.norm_sqr();
    }
    (proj + complex_gaussian(rng, sigma2)).norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cfg(m: usize) -> ArrayConfig {
        ArrayConfig::new(m, 0.5, false).unwrap()
    }

    #[test]
    fn broadside_steering_is_all_ones() {
        let a = steering_vector(PI / 2.0, &cfg(4));
        for z in a {
            assert_abs_diff_eq!(z.re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn endfire_two_element_alternates() {
        let a = steering_vector(0.0, &cfg(2));
        assert_abs_diff_eq!(a[0].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[1].re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[1].im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn steering_norm_is_m() {
        let a = steering_vector(PI / 3.0, &cfg(128));
        assert_abs_diff_eq!(norm_sqr(&a), 128.0, epsilon = 1e-9);
        let n = ArrayConfig::new(128, 0.5, true).unwrap();
        assert_abs_diff_eq!(norm_sqr(&steering_vector(PI / 3.0, &n)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bad_array_configs_rejected() {
        assert!(ArrayConfig::new(1, 0.5, false).is_err());
        assert!(ArrayConfig::new(8, 0.0, false).is_err());
    }

    #[test]
    fn sample_paths_powers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let range = AngleInterval::new(PI / 6.0, 5.0 * PI / 6.0).unwrap();
        let one = sample_paths(&mut rng, 1, range, 10.0, &FadingModel::default()).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.dominant().power, 1.0);
        let five = sample_paths(&mut rng, 5, range, 10.0, &FadingModel::default()).unwrap();
        assert_eq!(five.len(), 5);
        for p in &five.paths[1..] {
            assert_abs_diff_eq!(p.power, 0.1, epsilon = 1e-15);
        }
        for p in &five.paths {
            assert!(p.aoa >= range.lo && p.aoa <= range.hi);
        }
        assert!(matches!(
            sample_paths(&mut rng, 0, range, 10.0, &FadingModel::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sample_paths_deterministic() {
        let range = AngleInterval::new(PI / 6.0, 5.0 * PI / 6.0).unwrap();
        let fading = FadingModel::rician(0.99, 10.0).unwrap();
        let a = sample_paths(&mut ChaCha8Rng::seed_from_u64(42), 5, range, 10.0, &fading).unwrap();
        let b = sample_paths(&mut ChaCha8Rng::seed_from_u64(42), 5, range, 10.0, &fading).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn static_and_unit_rho_fading_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let alpha = C64::new(0.3, -0.7);
        assert_eq!(FadingModel::default().step(alpha, &mut rng), alpha);
        let frozen = FadingModel::rician(1.0, 10.0).unwrap();
        assert_eq!(frozen.step(alpha, &mut rng), alpha);
    }

    #[test]
    fn rician_ar1_unit_mean_power() {
        let model = FadingModel::rician(0.99, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut alpha = model.initial_state(&mut rng);
        let steps = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..steps {
            alpha = model.step(alpha, &mut rng);
            acc += alpha.norm_sqr();
        }
        let mean = acc / steps as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean power {mean}");
    }

    #[test]
    fn channel_vector_linearity() {
        let c = cfg(16);
        let theta = 1.1;
        let h1 = channel_vector(&PathSet::single(theta), &c);
        let a = steering_vector(theta, &c);
        for (x, y) in h1.iter().zip(&a) {
            assert_abs_diff_eq!((x - y).norm(), 0.0, epsilon = 1e-12);
        }
        let two = PathSet::new(vec![PathSet::single(theta).paths[0]; 2]).unwrap();
        let h2 = channel_vector(&two, &c);
        for (x, y) in h2.iter().zip(&a) {
            assert_abs_diff_eq!((x - y * 2.0).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn multipath_norm_within_triangle_bounds() {
        let c = cfg(128);
        let range = AngleInterval::new(PI / 6.0, 5.0 * PI / 6.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 128.0_f64;
        let lo = m * (1.0 - 4.0 * 0.1f64.sqrt()).powi(2);
        let hi = m * (1.0 + 4.0 * 0.1f64.sqrt()).powi(2);
        for _ in 0..200 {
            let paths = sample_paths(&mut rng, 5, range, 10.0, &FadingModel::default()).unwrap();
            let n = norm_sqr(&channel_vector(&paths, &c));
            // Lower bound is (1 - 4 sqrt(0.1))^2 M, which is positive, so the bound is two-sided.
            assert!(n >= lo - 1e-9 && n <= hi + 1e-9, "norm {n} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn matched_filter_noiseless() {
        let c = cfg(128);
        let theta = 1.3;
        let h = steering_vector(theta, &c);
        let w: Vec<C64> = h.iter().map(|z| z / 128f64.sqrt()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = observe_reward(&w, &h, 0.0, &mut rng).unwrap();
        assert_abs_diff_eq!(y, 128.0, epsilon = 1e-9);
    }

    #[test]
    fn observe_reward_rejects_mismatch_and_bad_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = vec![C64::new(1.0, 0.0); 2];
        let h = vec![C64::new(1.0, 0.0); 3];
        assert!(observe_reward(&w, &h, 1.0, &mut rng).is_err());
        assert!(observe_reward(&w, &h[..2], 1.0, &mut rng).is_err());
    }

    #[test]
    fn fixed_seed_streams_identical() {
        let proj = C64::new(3.0, 4.0);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = reward_from_projection(proj, 1.0, &mut a);
            let y = reward_from_projection(proj, 1.0, &mut b);
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
