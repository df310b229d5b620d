//! Successive subtree elimination.
//!
//! The policy walks the codebook from the widest beams down. Each level
//! selected by the pruning vector hosts an independent fixed-confidence
//! best-arm game in the style of UGapE: every contender is sampled twice,
//! then at each step the arm `gamma` with the smallest gap index and the
//! strongest rival `u` are compared and the less certain of the two is
//! sampled. The level ends once the gap of `gamma` drops below the level
//! tolerance `eps_h`; only the children of the winner survive.
//!
//! A second confidence mode reproduces the fixed-variance (Hoeffding style)
//! variant, which samples the empirical best and its challenger each round
//! and stops on `U_u - L_best < eps_h`.

use std::fmt;
use std::io::Write;

use rand::Rng;

use crate::array::{channel_vector, inner, reward_from_projection, FadingMode, FadingModel, PathSet, C64};
use crate::codebook::{HierarchicalCodebook, Vertex};
use crate::csvfmt::sig9;
use crate::{Error, Result};

/// Parent of the level-1 beams.
pub const ROOT: Vertex = Vertex::new(0, 1);

pub const DEFAULT_MAX_SAMPLES_PER_LEVEL: u64 = 1_000_000;

/// Per-level play flags `p_1..p_H`; `p_H` is always set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PruningVector {
    bits: Vec<bool>,
}

impl PruningVector {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        match bits.last() {
            None => Err(Error::invalid("pruning vector must be nonempty")),
            Some(false) => Err(Error::invalid("last pruning entry must be 1")),
            Some(true) => Ok(PruningVector { bits }),
        }
    }

    /// `p_1..p_{H-1}` are the binary digits of `p_dec`, most significant first.
    pub fn from_dec(p_dec: u64, h_levels: u32) -> Result<Self> {
        if h_levels == 0 || h_levels > 63 {
            return Err(Error::invalid("codebook depth must be in 1..=63"));
        }
        let free = h_levels - 1;
        if p_dec >= 1u64 << free {
            return Err(Error::invalid(format!(
                "p_dec = {p_dec} exceeds the {free}-bit range for H = {h_levels} (max {})",
                (1u64 << free) - 1
            )));
        }
        let mut bits: Vec<bool> = (0..free).rev().map(|k| (p_dec >> k) & 1 == 1).collect();
        bits.push(true);
        Ok(PruningVector { bits })
    }

    /// Parses a `0`/`1` string such as `"0001111"`.
    pub fn parse_bits(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::invalid(format!("bad pruning bit {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(bits)
    }

    /// Every strategy for a depth-`h_levels` codebook, in `p_dec` order.
    pub fn all(h_levels: u32) -> impl Iterator<Item = PruningVector> {
        (0..(1u64 << (h_levels - 1))).map(move |d| Self::from_dec(d, h_levels).expect("in range"))
    }

    pub fn to_dec(&self) -> u64 {
        self.bits[..self.bits.len() - 1]
            .iter()
            .fold(0, |acc, &b| (acc << 1) | b as u64)
    }

    pub fn h_levels(&self) -> u32 {
        self.bits.len() as u32
    }

    pub fn plays(&self, h: u32) -> bool {
        self.bits[h as usize - 1]
    }

    pub fn played_levels(&self) -> Vec<u32> {
        (1..=self.h_levels()).filter(|&h| self.plays(h)).collect()
    }

    /// `(h, |S_h|)` for each played level.
    pub fn contender_sizes(&self) -> Vec<(u32, usize)> {
        let mut prev = 0;
        self.played_levels()
            .into_iter()
            .map(|h| {
                let size = 1usize << (h - prev);
                prev = h;
                (h, size)
            })
            .collect()
    }

    /// `N_H`, the number of arms placed in contention over all played levels.
    pub fn total_arms(&self) -> usize {
        self.contender_sizes().iter().map(|&(_, s)| s).sum()
    }
}

impl fmt::Display for PruningVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    EmpiricalVariance,
    FixedVariance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SseConfig {
    pub pruning: PruningVector,
    pub b_param: f64,
    pub c_param: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub gain: f64,
    pub h_levels: u32,
    pub confidence_mode: ConfidenceMode,
    pub fv_alpha: f64,
    pub fv_alpha1: f64,
    pub max_samples_per_level: Option<u64>,
    /// Count per-step sampling-rule invariant violations.
    pub check_invariants: bool,
}

impl SseConfig {
    /// Operating point used throughout: `eps = 7`, `B = C = 0.1`, 2 dB per level.
    pub fn new(pruning: PruningVector) -> Self {
        let h_levels = pruning.h_levels();
        SseConfig {
            pruning,
            b_param: 0.1,
            c_param: 0.1,
            epsilon: 7.0,
            delta: 0.05,
            gain: 10f64.powf(0.2),
            h_levels,
            confidence_mode: ConfidenceMode::EmpiricalVariance,
            fv_alpha: 4.0,
            fv_alpha1: 1.25,
            max_samples_per_level: Some(DEFAULT_MAX_SAMPLES_PER_LEVEL),
            check_invariants: cfg!(debug_assertions),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pruning.h_levels() != self.h_levels {
            return Err(Error::invalid("pruning vector length must equal H"));
        }
        if !(self.b_param > 0.0 && self.c_param > 0.0) {
            return Err(Error::invalid("B and C must be positive"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon must be >= 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        if !(self.gain > 1.0) {
            return Err(Error::invalid("gain must exceed 1"));
        }
        if !(self.fv_alpha > 0.0 && self.fv_alpha1 > 0.0) {
            return Err(Error::invalid("fixed-variance alpha parameters must be positive"));
        }
        Ok(())
    }

    fn radius_params(&self) -> RadiusParams {
        RadiusParams {
            mode: self.confidence_mode,
            b: self.b_param,
            c: self.c_param,
            delta: self.delta,
            n_total: self.pruning.total_arms(),
            alpha: self.fv_alpha,
            alpha1: self.fv_alpha1,
        }
    }
}

/// `eps_h = g^{-(H-h)} eps`.
pub fn epsilon_at_level(epsilon: f64, g: f64, h_levels: u32, h: u32) -> f64 {
    epsilon * g.powi(-((h_levels - h) as i32))
}

/// Union of the children of `prev`, ordered by index.
pub fn expand_contenders(prev: &[Vertex]) -> Vec<Vertex> {
    let mut out: Vec<Vertex> = prev.iter().flat_map(|v| v.children()).collect();
    out.sort();
    out.dedup();
    out
}

/// `beta(t, delta) = ln(15 N_H t^4 / (4 delta))`.
pub fn exploration_rate(t: f64, delta: f64, n_total: usize) -> f64 {
    (15.0 * n_total as f64 / (4.0 * delta)).ln() + 4.0 * t.ln()
}

/// `ln(N_H alpha1 t^alpha / delta)`.
pub fn fixed_variance_rate(t: f64, delta: f64, n_total: usize, alpha: f64, alpha1: f64) -> f64 {
    (n_total as f64 * alpha1 / delta).ln() + alpha * t.ln()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusParams {
    pub mode: ConfidenceMode,
    pub b: f64,
    pub c: f64,
    pub delta: f64,
    pub n_total: usize,
    pub alpha: f64,
    pub alpha1: f64,
}

impl RadiusParams {
    pub fn rate(&self, t: f64) -> f64 {
        match self.mode {
            ConfidenceMode::EmpiricalVariance => exploration_rate(t, self.delta, self.n_total),
            ConfidenceMode::FixedVariance => {
                fixed_variance_rate(t, self.delta, self.n_total, self.alpha, self.alpha1)
            }
        }
    }

    fn rate_ops(&self) -> u64 {
        match self.mode {
            ConfidenceMode::EmpiricalVariance => ops::BETA,
            ConfidenceMode::FixedVariance => ops::FV_BETA,
        }
    }

    fn radius_ops(&self) -> u64 {
        match self.mode {
            ConfidenceMode::EmpiricalVariance => ops::RADIUS,
            ConfidenceMode::FixedVariance => ops::FV_RADIUS,
        }
    }
}

/// Hand-tallied scalar operation counts for the policy arithmetic.
///
/// `log`/`exp`/`sqrt`/`pow` count as one operation each.
pub mod ops {
    /// 15*N, t*t*t*t (3), product, 4*delta, division, ln.
    pub const BETA: u64 = 8;
    /// N*alpha1, t^alpha, product, /delta, ln.
    pub const FV_BETA: u64 = 5;
    /// sqrt(4*B*nu2*beta/N): 4 mul/div + sqrt; 2*sqrt(2*B*C)*beta/(N-1): 2 mul, sqrt,
    /// 2 mul, subtraction, division; one final addition.
    pub const RADIUS: u64 = 13;
    /// B*beta, 2*N, division, sqrt.
    pub const FV_RADIUS: u64 = 4;
    /// U = mean + D, L = mean - D.
    pub const BOUNDS: u64 = 2;
    /// Welford: n+1, y-mean, /n, +=, y-mean', product, +=, m2/n.
    pub const UPDATE: u64 = 8;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmStats {
    pub n: u64,
    pub mean: f64,
    /// Biased (divide-by-N) empirical variance.
    pub var: f64,
    m2: f64,
    pub ucb: f64,
    pub lcb: f64,
    pub radius: f64,
    pub gap: f64,
}

impl Default for ArmStats {
    fn default() -> Self {
        ArmStats {
            n: 0,
            mean: 0.0,
            var: 0.0,
            m2: 0.0,
            ucb: f64::INFINITY,
            lcb: f64::NEG_INFINITY,
            radius: f64::INFINITY,
            gap: f64::INFINITY,
        }
    }
}

impl ArmStats {
    /// Streaming mean/variance update.
    pub fn observe(&mut self, y: f64) {
        self.n += 1;
        let d = y - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (y - self.mean);
        self.var = (self.m2 / self.n as f64).max(0.0);
    }

    fn set_bounds(&mut self, radius: f64) {
        self.radius = radius;
        self.ucb = self.mean + radius;
        self.lcb = self.mean - radius;
    }
}

/// Radius for a given exploration rate `beta`.
pub fn radius_with_rate(stats: &ArmStats, beta: f64, params: &RadiusParams) -> f64 {
    let n = stats.n as f64;
    match params.mode {
        ConfidenceMode::EmpiricalVariance => {
            if stats.n < 2 {
                return f64::INFINITY;
            }
            (4.0 * params.b * stats.var * beta / n).sqrt()
                + 2.0 * (2.0 * params.b * params.c).sqrt() * beta / (n - 1.0)
        }
        ConfidenceMode::FixedVariance => {
            if stats.n == 0 {
                return f64::INFINITY;
            }
            (params.b * beta / (2.0 * n)).sqrt()
        }
    }
}

/// Confidence radius `D` of an arm at per-level step `t`.
pub fn confidence_radius(stats: &ArmStats, t: u64, params: &RadiusParams) -> f64 {
    radius_with_rate(stats, params.rate(t as f64), params)
}

/// Ingest `y` and recompute `D`, `U`, `L` at step `t`.
pub fn update_arm(stats: &ArmStats, y: f64, t: u64, params: &RadiusParams) -> ArmStats {
    let mut next = *stats;
    next.observe(y);
    next.set_bounds(confidence_radius(&next, t, params));
    next
}

/// Anything that returns a stochastic reward for a beam.
pub trait RewardSource {
    fn sample(&mut self, v: Vertex) -> f64;
}

impl<F: FnMut(Vertex) -> f64> RewardSource for F {
    fn sample(&mut self, v: Vertex) -> f64 {
        self(v)
    }
}

/// Rewards `|w^H h(t) + n|^2` from a channel scenario. Static fading reuses
/// cached projections; Rician fading advances every path once per sample.
pub struct ChannelSource<'a, R: Rng> {
    cb: &'a HierarchicalCodebook,
    paths: PathSet,
    fading: FadingModel,
    sigma2: f64,
    rng: R,
    cached: Option<Vec<C64>>,
    samples: u64,
}

impl<'a, R: Rng> ChannelSource<'a, R> {
    pub fn new(cb: &'a HierarchicalCodebook, paths: PathSet, fading: FadingModel, sigma2: f64, rng: R) -> Self {
        let cached = (fading.mode == FadingMode::Static)
            .then(|| cb.projections(&channel_vector(&paths, cb.array_cfg())));
        ChannelSource {
            cb,
            paths,
            fading,
            sigma2,
            rng,
            cached,
            samples: 0,
        }
    }

    pub fn paths(&self) -> &PathSet {
        &self.paths
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }
}

impl<R: Rng> RewardSource for ChannelSource<'_, R> {
    fn sample(&mut self, v: Vertex) -> f64 {
        self.samples += 1;
        let proj = match &self.cached {
            Some(p) => p[self.cb.position(v)],
            None => {
                self.paths.advance(&self.fading, &mut self.rng);
                let h = channel_vector(&self.paths, self.cb.array_cfg());
                inner(self.cb.vector(v), &h)
            }
        };
        reward_from_projection(proj, self.sigma2, &mut self.rng)
    }
}

/// One row of the optional per-step debug trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub h: u32,
    pub arm: u32,
    pub y: f64,
    pub mean: f64,
    pub var: f64,
    pub radius: f64,
    pub ucb: f64,
    pub lcb: f64,
    pub gap: f64,
    /// 0 before the first selection.
    pub gamma: u32,
    pub u: u32,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "t,h,arm,y,mean,var,D,U,L,G,gamma,u")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.h,
            r.arm,
            sig9(r.y),
            sig9(r.mean),
            sig9(r.var),
            sig9(r.radius),
            sig9(r.ucb),
            sig9(r.lcb),
            sig9(r.gap),
            r.gamma,
            r.u
        )?;
    }
    Ok(())
}

/// Bandit state for one codebook level.
#[derive(Clone, Debug)]
pub struct LevelGame {
    pub level: u32,
    pub contenders: Vec<Vertex>,
    pub stats: Vec<ArmStats>,
    /// Per-level step counter `t_h`.
    pub t: u64,
    pub eps_level: f64,
    params: RadiusParams,
    gamma: Option<usize>,
    u: Option<usize>,
    pub ops: u64,
    pub invariant_checks: u64,
    pub invariant_violations: u64,
    check_invariants: bool,
}

impl LevelGame {
    pub fn new(level: u32, contenders: Vec<Vertex>, eps_level: f64, params: RadiusParams) -> Result<Self> {
        if contenders.len() < 2 {
            return Err(Error::InvalidState("a level game needs at least two arms".into()));
        }
        let n = contenders.len();
        Ok(LevelGame {
            level,
            contenders,
            stats: vec![ArmStats::default(); n],
            t: 0,
            eps_level,
            params,
            gamma: None,
            u: None,
            ops: 0,
            invariant_checks: 0,
            invariant_violations: 0,
            check_invariants: cfg!(debug_assertions),
        })
    }

    pub fn with_invariant_checks(mut self, on: bool) -> Self {
        self.check_invariants = on;
        self
    }

    pub fn params(&self) -> &RadiusParams {
        &self.params
    }

    /// Position of `gamma(t)` in `contenders`.
    pub fn gamma(&self) -> Option<usize> {
        self.gamma
    }

    pub fn u(&self) -> Option<usize> {
        self.u
    }

    /// Recompute `D`, `U`, `L` of every contender at the current `t`.
    pub fn refresh_bounds(&mut self) {
        let beta = self.params.rate(self.t as f64);
        self.ops += self.params.rate_ops();
        for s in &mut self.stats {
            let r = radius_with_rate(s, beta, &self.params);
            s.set_bounds(r);
        }
        self.ops += self.stats.len() as u64 * (self.params.radius_ops() + ops::BOUNDS);
    }

    /// Sample `arm` once, update its statistics and advance `t`.
    fn pull<S: RewardSource + ?Sized>(&mut self, arm: usize, source: &mut S) -> f64 {
        let y = source.sample(self.contenders[arm]);
        self.stats[arm].observe(y);
        self.ops += ops::UPDATE;
        self.t += 1;
        y
    }
}

/// Compute every gap `G_i = max_{j != i} U_j - L_i`, then
/// `gamma = argmin G` and `u = argmax_{i != gamma} U` (lowest index on ties).
/// Returns positions into `game.contenders`.
pub fn select_indices(game: &mut LevelGame) -> Result<(usize, usize)> {
    let k = game.stats.len();
    if k < 2 {
        return Err(Error::InvalidState("need at least two contenders".into()));
    }
    if game.params.mode == ConfidenceMode::EmpiricalVariance && game.stats.iter().any(|s| s.n < 2) {
        return Err(Error::InvalidState("every contender needs two samples first".into()));
    }
    // Top two upper bounds in one scan.
    let (mut first, mut second) = (0usize, usize::MAX);
    for i in 1..k {
        let ui = game.stats[i].ucb;
        if ui > game.stats[first].ucb {
            second = first;
            first = i;
        } else if second == usize::MAX || ui > game.stats[second].ucb {
            second = i;
        }
    }
    let (u_first, u_second) = (game.stats[first].ucb, game.stats[second].ucb);
    for (i, s) in game.stats.iter_mut().enumerate() {
        let rival = if i == first { u_second } else { u_first };
        s.gap = rival - s.lcb;
    }
    game.ops += 4 * k as u64;

    let mut gamma = 0;
    for i in 1..k {
        if game.stats[i].gap < game.stats[gamma].gap {
            gamma = i;
        }
    }
    let mut u = usize::MAX;
    for i in 0..k {
        if i != gamma && (u == usize::MAX || game.stats[i].ucb > game.stats[u].ucb) {
            u = i;
        }
    }
    game.ops += 2 * (k as u64 - 1);
    game.gamma = Some(gamma);
    game.u = Some(u);
    Ok((gamma, u))
}

/// The one of `{gamma, u}` with the larger radius; ties go to `gamma`.
pub fn choose_arm(game: &mut LevelGame) -> Result<usize> {
    let (g, u) = match (game.gamma, game.u) {
        (Some(g), Some(u)) => (g, u),
        _ => return Err(Error::InvalidState("indices not selected yet".into())),
    };
    game.ops += 1;
    Ok(if game.stats[g].radius >= game.stats[u].radius { g } else { u })
}

/// Check the three sampling-rule implications on the decision snapshot.
fn check_sampling_rule(game: &mut LevelGame, x: usize) {
    let (g, u) = (game.gamma.unwrap(), game.u.unwrap());
    let (sg, su, sx) = (&game.stats[g], &game.stats[u], &game.stats[x]);
    let scale = 1.0 + sg.ucb.abs().max(su.ucb.abs()).max(sg.lcb.abs()).max(su.lcb.abs());
    let tol = 1e-9 * scale;
    let mut ok = sg.gap <= 2.0 * sx.radius + tol;
    if x == u {
        ok &= su.lcb <= sg.lcb + tol;
    }
    if x == g {
        ok &= su.ucb <= sg.ucb + tol;
    }
    game.invariant_checks += 1;
    if !ok {
        game.invariant_violations += 1;
    }
    debug_assert!(ok, "sampling rule violated at level {} step {}", game.level, game.t);
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelOutcome {
    pub level: u32,
    pub winner: Vertex,
    /// `T_h`, samples spent at this level.
    pub samples: u64,
    pub budget_exhausted: bool,
    /// Final `N_{h,i}` per contender.
    pub arm_counts: Vec<(Vertex, u64)>,
    /// `(t_h, gamma)` each time the running `gamma` changes.
    pub gamma_path: Vec<(u64, Vertex)>,
    pub final_gap: f64,
    pub ops: u64,
    pub invariant_checks: u64,
    pub invariant_violations: u64,
}

fn trace_row(game: &LevelGame, arm: usize, y: f64) -> TraceRow {
    let s = &game.stats[arm];
    TraceRow {
        t: game.t,
        h: game.level,
        arm: game.contenders[arm].index,
        y,
        mean: s.mean,
        var: s.var,
        radius: s.radius,
        ucb: s.ucb,
        lcb: s.lcb,
        gap: s.gap,
        gamma: game.gamma.map_or(0, |g| game.contenders[g].index),
        u: game.u.map_or(0, |u| game.contenders[u].index),
    }
}

/// Play one level until its stopping rule fires or the budget runs out.
pub fn run_level<S: RewardSource + ?Sized>(
    game: &mut LevelGame,
    source: &mut S,
    max_samples: Option<u64>,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<LevelOutcome> {
    let k = game.contenders.len();
    for _ in 0..2 {
        for arm in 0..k {
            let y = game.pull(arm, source);
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(trace_row(game, arm, y));
            }
        }
    }
    debug_assert_eq!(game.t, 2 * k as u64);

    let mut gamma_path: Vec<(u64, Vertex)> = Vec::new();
    let mut note_gamma = |t: u64, v: Vertex| {
        if gamma_path.last().map(|&(_, g)| g) != Some(v) {
            gamma_path.push((t, v));
        }
    };
    let mut budget_exhausted = false;
    let (winner, final_gap) = match game.params.mode {
        ConfidenceMode::EmpiricalVariance => loop {
            game.refresh_bounds();
            let (g, _) = select_indices(game)?;
            note_gamma(game.t, game.contenders[g]);
            let gap = game.stats[g].gap;
            game.ops += 1;
            if gap < game.eps_level {
                break (g, gap);
            }
            if max_samples.is_some_and(|m| game.t >= m) {
                budget_exhausted = true;
                break (g, gap);
            }
            let x = choose_arm(game)?;
            if game.check_invariants {
                check_sampling_rule(game, x);
            }
            let y = game.pull(x, source);
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(trace_row(game, x, y));
            }
        },
        ConfidenceMode::FixedVariance => loop {
            game.refresh_bounds();
            let mut best = 0;
            for i in 1..k {
                if game.stats[i].mean > game.stats[best].mean {
                    best = i;
                }
            }
            let mut u = usize::MAX;
            for i in 0..k {
                if i != best && (u == usize::MAX || game.stats[i].ucb > game.stats[u].ucb) {
                    u = i;
                }
            }
            game.ops += 2 * (k as u64 - 1) + 2;
            let gap = game.stats[u].ucb - game.stats[best].lcb;
            game.stats[best].gap = gap;
            game.gamma = Some(best);
            game.u = Some(u);
            note_gamma(game.t, game.contenders[best]);
            if gap < game.eps_level {
                break (best, gap);
            }
            if max_samples.is_some_and(|m| game.t >= m) {
                budget_exhausted = true;
                break (best, gap);
            }
            for arm in [best, u] {
                let y = game.pull(arm, source);
                if let Some(tr) = trace.as_deref_mut() {
                    tr.push(trace_row(game, arm, y));
                }
            }
        },
    };

    Ok(LevelOutcome {
        level: game.level,
        winner: game.contenders[winner],
        samples: game.t,
        budget_exhausted,
        arm_counts: game.contenders.iter().zip(&game.stats).map(|(&v, s)| (v, s.n)).collect(),
        gamma_path,
        final_gap,
        ops: game.ops,
        invariant_checks: game.invariant_checks,
        invariant_violations: game.invariant_violations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SseOutcome {
    /// Returned leaf index `I` in `1..=2^H`.
    pub chosen_leaf: u32,
    pub per_level: Vec<LevelOutcome>,
    pub total_samples: u64,
    pub budget_exhausted: bool,
    pub ops: u64,
    pub invariant_checks: u64,
    pub invariant_violations: u64,
}

/// Run the full policy against `source`.
pub fn run_sse<S: RewardSource + ?Sized>(
    cfg: &SseConfig,
    cb: &HierarchicalCodebook,
    source: &mut S,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<SseOutcome> {
    cfg.validate()?;
    if cb.h_levels() != cfg.h_levels {
        return Err(Error::invalid(format!(
            "codebook has {} levels, config expects {}",
            cb.h_levels(),
            cfg.h_levels
        )));
    }
    let params = cfg.radius_params();
    let mut survivors = vec![ROOT];
    let mut per_level = Vec::new();
    for h in 1..=cfg.h_levels {
        let contenders = expand_contenders(&survivors);
        if !cfg.pruning.plays(h) {
            survivors = contenders;
            continue;
        }
        let eps_h = epsilon_at_level(cfg.epsilon, cfg.gain, cfg.h_levels, h);
        let mut game = LevelGame::new(h, contenders, eps_h, params)?.with_invariant_checks(cfg.check_invariants);
        let outcome = run_level(&mut game, source, cfg.max_samples_per_level, trace.as_deref_mut())?;
        survivors = vec![outcome.winner];
        per_level.push(outcome);
    }
    let chosen_leaf = survivors[0].index;
    Ok(SseOutcome {
        chosen_leaf,
        total_samples: per_level.iter().map(|l| l.samples).sum(),
        budget_exhausted: per_level.iter().any(|l| l.budget_exhausted),
        ops: per_level.iter().map(|l| l.ops).sum(),
        invariant_checks: per_level.iter().map(|l| l.invariant_checks).sum(),
        invariant_violations: per_level.iter().map(|l| l.invariant_violations).sum(),
        per_level,
    })
}
