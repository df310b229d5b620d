//! Monte Carlo campaigns.
//!
//! Simulation `l` uses seed `base_seed + l`: it draws the AoAs, runs the
//! policy against the simulated channel and records whether the returned
//! leaf is epsilon-optimal and a neighbour of the matched leaf. Simulations
//! run in batches; after each batch the Wilson interval of the success rate
//! decides whether to stop.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::array::{channel_vector, inner, sample_paths, steering_vector, FadingModel, NoiseModel, PathSet, C64};
use crate::codebook::{argmax_lowest, epsilon_optimal_set, profile_from_channel, HierarchicalCodebook, Vertex};
use crate::csvfmt::sig9;
use crate::sse::{run_sse, ChannelSource, SseConfig, SseOutcome};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IStarMode {
    /// Leaf best matched to the dominant path's steering vector.
    #[default]
    Dominant,
    /// Leaf with the largest noiseless multipath RSS.
    Multipath,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub snr_db: f64,
    pub k_paths: usize,
    pub attenuation_db: f64,
    pub fading: FadingModel,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            snr_db: 0.0,
            k_paths: 1,
            attenuation_db: 10.0,
            fading: FadingModel::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignConfig {
    pub base_seed: u64,
    pub scenario: Scenario,
    pub sse: SseConfig,
    pub wilson_width: f64,
    pub wilson_conf: f64,
    pub min_sims: usize,
    pub max_sims: usize,
    pub batch_size: usize,
    /// Time steps tracked in the series; 0 tracks up to the longest run.
    pub metric_horizon: usize,
    pub istar_mode: IStarMode,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl CampaignConfig {
    pub fn new(sse: SseConfig) -> Self {
        CampaignConfig {
            base_seed: 0,
            scenario: Scenario::default(),
            sse,
            wilson_width: 0.02,
            wilson_conf: 0.95,
            min_sims: 100,
            max_sims: 20_000,
            batch_size: 50,
            metric_horizon: 0,
            istar_mode: IStarMode::Dominant,
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sse.validate()?;
        self.scenario.fading.validate()?;
        if !(self.wilson_width > 0.0 && self.wilson_width < 1.0) {
            return Err(Error::invalid("wilson_width must lie in (0, 1)"));
        }
        if !(self.wilson_conf > 0.0 && self.wilson_conf < 1.0) {
            return Err(Error::invalid("wilson_conf must lie in (0, 1)"));
        }
        if self.min_sims < 30 {
            return Err(Error::invalid("min_sims must be at least 30"));
        }
        if self.max_sims == 0 || self.batch_size == 0 {
            return Err(Error::invalid("max_sims and batch_size must be positive"));
        }
        if self.scenario.k_paths == 0 {
            return Err(Error::invalid("k_paths must be at least 1"));
        }
        Ok(())
    }
}

/// Two-sided standard normal quantile for confidence `b`.
pub fn z_for_confidence(b: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - (1.0 - b) / 2.0)
}

/// Wilson score interval for `p_hat` over `l` trials at confidence `b`.
pub fn wilson_interval(p_hat: f64, l: usize, b: f64) -> Result<(f64, f64)> {
    if l == 0 {
        return Err(Error::invalid("Wilson interval needs L >= 1"));
    }
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::invalid("p_hat must lie in [0, 1]"));
    }
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::invalid("confidence must lie in (0, 1)"));
    }
    Ok(wilson_with_z(p_hat, l as f64, z_for_confidence(b)))
}

fn wilson_with_z(p: f64, l: f64, z: f64) -> (f64, f64) {
    let z2 = z * z;
    let scale = 1.0 + z2 / l;
    let centre = (p + z2 / (2.0 * l)) / scale;
    let half = z * (p * (1.0 - p) / l + z2 / (4.0 * l * l)).sqrt() / scale;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Matched leaf `i*` for a channel. Ties go to the lowest index.
pub fn oracle_best_leaf(cb: &HierarchicalCodebook, paths: &PathSet, mode: IStarMode) -> u32 {
    let h = cb.h_levels();
    let target = match mode {
        IStarMode::Dominant => steering_vector(paths.dominant().aoa, cb.array_cfg()),
        IStarMode::Multipath => channel_vector(paths, cb.array_cfg()),
    };
    let gains: Vec<f64> = (1..=cb.num_leaves())
        .map(|i| inner(cb.vector(Vertex::new(h, i)), &target).norm_sqr())
        .collect();
    argmax_lowest(&gains).0 as u32 + 1
}

/// Ancestor at level `h` of leaf `leaf`.
fn ancestor(leaf: u32, h_levels: u32, h: u32) -> Vertex {
    Vertex::new(h, ((leaf - 1) >> (h_levels - h)) + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimRecord {
    pub seed: u64,
    pub i_star: u32,
    pub chosen: u32,
    pub correct: bool,
    pub samples_total: u64,
    /// `T_h` for each played level, in level order.
    pub samples_per_level: Vec<u64>,
    pub op_count: u64,
    pub xi_final: f64,
    pub budget_exhausted: bool,
    pub invariant_violations: u64,
    /// `(t, correct, xi)` from time `t` onwards until the next entry.
    timeline: Vec<(u64, bool, f64)>,
}

struct SimContext<'a> {
    cb: &'a HierarchicalCodebook,
    cfg: &'a CampaignConfig,
    sigma2: f64,
    played: Vec<u32>,
}

impl SimContext<'_> {
    fn run(&self, seed: u64) -> Result<SimRecord> {
        let (cb, cfg) = (self.cb, self.cfg);
        let sc = &cfg.scenario;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let paths = sample_paths(&mut rng, sc.k_paths, cb.theta_range(), sc.attenuation_db, &sc.fading)?;
        let i_star = oracle_best_leaf(cb, &paths, cfg.istar_mode);
        let initial = profile_from_channel(cb, &channel_vector(&paths, cb.array_cfg()), self.sigma2);
        let eps_set = epsilon_optimal_set(&initial, cfg.sse.epsilon);

        let mut src = ChannelSource::new(cb, paths, sc.fading.clone(), self.sigma2, rng);
        let out = run_sse(&cfg.sse, cb, &mut src, None)?;
        let h_final = channel_vector(src.paths(), cb.array_cfg());

        let h_levels = cb.h_levels();
        let leaf_ok = |leaf: u32| eps_set.binary_search(&leaf).is_ok() && leaf.abs_diff(i_star) <= 1;
        let xi = |v: Vertex| {
            let rate = |w: &[C64]| (1.0 + inner(w, &h_final).norm_sqr() / self.sigma2).log2();
            rate(cb.vector(v)) / rate(cb.vector(ancestor(i_star, h_levels, v.level)))
        };
        let timeline = beam_timeline(&out)
            .into_iter()
            .map(|(t, v)| match v {
                Some(v) => (t, leaf_ok(v.representative_leaf(h_levels)), xi(v)),
                None => (t, false, 0.0),
            })
            .collect();

        let chosen = out.chosen_leaf;
        let samples_per_level = self
            .played
            .iter()
            .map(|&h| out.per_level.iter().find(|l| l.level == h).map_or(0, |l| l.samples))
            .collect();
        Ok(SimRecord {
            seed,
            i_star,
            chosen,
            correct: !out.budget_exhausted && leaf_ok(chosen),
            samples_total: out.total_samples,
            samples_per_level,
            op_count: out.ops,
            xi_final: xi(Vertex::new(h_levels, chosen)),
            budget_exhausted: out.budget_exhausted,
            invariant_violations: out.invariant_violations,
            timeline,
        })
    }
}

/// Beam in use after each sample: the running `gamma` during a level game,
/// the previous winner before the first selection of a level.
fn beam_timeline(out: &SseOutcome) -> Vec<(u64, Option<Vertex>)> {
    let mut events = vec![(0u64, None)];
    let mut offset = 0u64;
    for lvl in &out.per_level {
        for &(t, g) in &lvl.gamma_path {
            events.push((offset + t, Some(g)));
        }
        offset += lvl.samples;
        events.push((offset, Some(lvl.winner)));
    }
    // Later events at the same time win.
    let mut merged: Vec<(u64, Option<Vertex>)> = Vec::with_capacity(events.len());
    for e in events {
        match merged.last_mut() {
            Some(m) if m.0 == e.0 => *m = e,
            Some(m) if m.1 == e.1 => {}
            _ => merged.push(e),
        }
    }
    merged
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpStats {
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimePoint {
    pub t: u64,
    pub p_hat: f64,
    pub w_minus: f64,
    pub w_plus: f64,
    pub xi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignReport {
    pub l_sims: usize,
    /// Interval narrower than the target at stop; false when `max_sims` ended the run.
    pub converged: bool,
    pub p_hat: f64,
    pub wilson: (f64, f64),
    /// Mean total samples per simulation.
    pub t_hat: f64,
    pub op_stats: OpStats,
    pub series: Vec<TimePoint>,
    pub played_levels: Vec<u32>,
    pub budget_exhausted: usize,
    pub invariant_violations: u64,
    pub records: Vec<SimRecord>,
}

impl CampaignReport {
    pub fn wilson_width(&self) -> f64 {
        self.wilson.1 - self.wilson.0
    }

    pub fn write_records_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "seed,i_star,chosen,correct,samples_total,ops,xi_final")?;
        for h in &self.played_levels {
            write!(out, ",samples_h{h}")?;
        }
        writeln!(out)?;
        for r in &self.records {
            write!(
                out,
                "{},{},{},{},{},{},{}",
                r.seed,
                r.i_star,
                r.chosen,
                r.correct as u8,
                r.samples_total,
                r.op_count,
                sig9(r.xi_final)
            )?;
            for n in &r.samples_per_level {
                write!(out, ",{n}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn write_timeseries_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,p_hat,w_minus,w_plus,xi")?;
        for p in &self.series {
            writeln!(
                out,
                "{},{},{},{},{}",
                p.t,
                sig9(p.p_hat),
                sig9(p.w_minus),
                sig9(p.w_plus),
                sig9(p.xi)
            )?;
        }
        Ok(())
    }
}

fn percentile(sorted: &[u64], q: f64) -> u64 {
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

fn aggregate_series(records: &[SimRecord], horizon: u64, z: f64) -> Vec<TimePoint> {
    let n = horizon as usize + 1;
    let mut d_ok = vec![0.0f64; n + 1];
    let mut d_xi = vec![0.0f64; n + 1];
    for r in records {
        for (k, &(start, ok, xi)) in r.timeline.iter().enumerate() {
            let start = (start as usize).min(n);
            let end = r.timeline.get(k + 1).map_or(n, |e| (e.0 as usize).min(n));
            if start >= end {
                continue;
            }
            if ok {
                d_ok[start] += 1.0;
                d_ok[end] -= 1.0;
            }
            d_xi[start] += xi;
            d_xi[end] -= xi;
        }
    }
    let l = records.len() as f64;
    let (mut ok, mut xi) = (0.0, 0.0);
    let mut series = Vec::with_capacity(n);
    for t in 0..n {
        ok += d_ok[t];
        xi += d_xi[t];
        if t == 0 {
            continue;
        }
        let p = (ok / l).clamp(0.0, 1.0);
        let (w_minus, w_plus) = wilson_with_z(p, l, z);
        series.push(TimePoint {
            t: t as u64,
            p_hat: p,
            w_minus,
            w_plus,
            xi: xi / l,
        });
    }
    series
}

/// Run simulations until the Wilson interval of the success rate is narrow
/// enough, or `max_sims` is reached.
pub fn run_campaign(cfg: &CampaignConfig, cb: &HierarchicalCodebook) -> Result<CampaignReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let ctx = SimContext {
        cb,
        cfg,
        sigma2: NoiseModel::from_snr_db(cfg.scenario.snr_db).sigma2,
        played: cfg.sse.pruning.played_levels(),
    };
    let z = z_for_confidence(cfg.wilson_conf);
    let mut records: Vec<SimRecord> = Vec::new();
    let mut converged = false;
    while records.len() < cfg.max_sims {
        let start = records.len() as u64 + 1;
        let count = cfg.batch_size.min(cfg.max_sims - records.len()) as u64;
        let batch = pool.install(|| {
            (start..start + count)
                .into_par_iter()
                .map(|l| ctx.run(cfg.base_seed.wrapping_add(l)))
                .collect::<Result<Vec<_>>>()
        })?;
        records.extend(batch);
        let l = records.len();
        let p = records.iter().filter(|r| r.correct).count() as f64 / l as f64;
        let (lo, hi) = wilson_with_z(p, l as f64, z);
        if l >= cfg.min_sims && hi - lo < cfg.wilson_width {
            converged = true;
            break;
        }
    }

    let l = records.len();
    let p_hat = records.iter().filter(|r| r.correct).count() as f64 / l as f64;
    let wilson = wilson_with_z(p_hat, l as f64, z);
    let t_hat = records.iter().map(|r| r.samples_total as f64).sum::<f64>() / l as f64;
    let mut ops: Vec<u64> = records.iter().map(|r| r.op_count).collect();
    ops.sort_unstable();
    let op_stats = OpStats {
        mean: ops.iter().map(|&o| o as f64).sum::<f64>() / l as f64,
        p50: percentile(&ops, 0.5),
        p90: percentile(&ops, 0.9),
        p99: percentile(&ops, 0.99),
        max: *ops.last().unwrap(),
    };
    let horizon = if cfg.metric_horizon > 0 {
        cfg.metric_horizon as u64
    } else {
        records.iter().map(|r| r.samples_total).max().unwrap_or(0)
    };
    Ok(CampaignReport {
        l_sims: l,
        converged,
        p_hat,
        wilson,
        t_hat,
        op_stats,
        series: aggregate_series(&records, horizon, z),
        played_levels: ctx.played.clone(),
        budget_exhausted: records.iter().filter(|r| r.budget_exhausted).count(),
        invariant_violations: records.iter().map(|r| r.invariant_violations).sum(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{AngleInterval, ArrayConfig};
    use crate::sse::PruningVector;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn z_value() {
        assert_abs_diff_eq!(z_for_confidence(0.95), 1.959963984540054, epsilon = 1e-9);
    }

    #[test]
    fn wilson_values() {
        // Direct evaluation with z = 1.959963984540054 at 30 digits.
        let (lo, hi) = wilson_interval(1.0, 10, 0.95).unwrap();
        assert_abs_diff_eq!(lo, 0.722467200, epsilon = 1e-8);
        assert_eq!(hi, 1.0);
        let (lo, hi) = wilson_interval(0.95, 1000, 0.95).unwrap();
        assert_abs_diff_eq!(lo, 0.934686180, epsilon = 1e-8);
        assert_abs_diff_eq!(hi, 0.961869738, epsilon = 1e-8);
        assert_abs_diff_eq!(hi - lo, 0.027183558, epsilon = 1e-8);
        let (lo, hi) = wilson_interval(0.5, 100_000_000, 0.95).unwrap();
        assert!(hi - lo < 1e-3 && lo < 0.5 && hi > 0.5);
        assert!(wilson_interval(0.5, 0, 0.95).is_err());
    }

    fn small_cb() -> HierarchicalCodebook {
        let range = AngleInterval::new(PI / 6.0, 5.0 * PI / 6.0).unwrap();
        HierarchicalCodebook::build(4, range, ArrayConfig::new(32, 0.5, false).unwrap(), 16 * 16, 10f64.powf(0.2)).unwrap()
    }

    #[test]
    fn matched_leaf_oracle() {
        let cb = small_cb();
        for i in 1..=16 {
            let theta = cb.pointing_angle(Vertex::new(4, i));
            assert_eq!(oracle_best_leaf(&cb, &PathSet::single(theta), IStarMode::Dominant), i);
        }
    }

    #[test]
    fn ancestors() {
        assert_eq!(ancestor(1, 7, 1), Vertex::new(1, 1));
        assert_eq!(ancestor(128, 7, 1), Vertex::new(1, 2));
        assert_eq!(ancestor(45, 7, 7), Vertex::new(7, 45));
        assert_eq!(ancestor(45, 7, 4), Vertex::new(4, 6));
    }

    fn campaign(seed: u64, threads: usize) -> CampaignConfig {
        let mut sse = SseConfig::new(PruningVector::from_dec(3, 4).unwrap());
        sse.epsilon = 2.0;
        let mut cfg = CampaignConfig::new(sse);
        cfg.base_seed = seed;
        cfg.scenario.snr_db = 60.0;
        cfg.min_sims = 30;
        cfg.max_sims = 60;
        cfg.batch_size = 30;
        cfg.threads = threads;
        cfg
    }

    #[test]
    fn noiseless_campaign_is_always_right() {
        let cb = small_cb();
        let mut cfg = campaign(5, 2);
        cfg.max_sims = 400;
        cfg.batch_size = 50;
        let rep = run_campaign(&cfg, &cb).unwrap();
        assert_eq!(rep.p_hat, 1.0);
        assert!(rep.converged);
        // With every run correct the width z^2 / (L + z^2) first drops below 0.02 at L = 189.
        assert_eq!(rep.l_sims, 200);
        let t_hat = rep.records.iter().map(|r| r.samples_total as f64).sum::<f64>() / 200.0;
        assert_eq!(rep.t_hat, t_hat);
        assert_eq!(rep.series.last().unwrap().p_hat, 1.0);
        assert_eq!(rep.invariant_violations, 0);
    }

    #[test]
    fn campaigns_repeat_across_thread_counts() {
        let cb = small_cb();
        let mut a = campaign(9, 1);
        a.scenario.snr_db = 0.0;
        let mut b = a.clone();
        b.threads = 4;
        let (ra, rb) = (run_campaign(&a, &cb).unwrap(), run_campaign(&b, &cb).unwrap());
        assert_eq!(ra, rb);
        let (mut ca, mut cb_) = (Vec::new(), Vec::new());
        ra.write_records_csv(&mut ca).unwrap();
        rb.write_records_csv(&mut cb_).unwrap();
        assert_eq!(ca, cb_);
        assert!(String::from_utf8(ca).unwrap().starts_with("seed,i_star,chosen,correct,samples_total,ops,xi_final,samples_h2,samples_h3,samples_h4\n"));
    }

    #[test]
    fn single_sim_is_flagged() {
        let cb = small_cb();
        let mut cfg = campaign(1, 1);
        cfg.max_sims = 1;
        let rep = run_campaign(&cfg, &cb).unwrap();
        assert_eq!(rep.l_sims, 1);
        assert!(!rep.converged);
    }

    #[test]
    fn invalid_campaigns_rejected() {
        let cb = small_cb();
        let mut cfg = campaign(1, 1);
        cfg.min_sims = 10;
        assert!(run_campaign(&cfg, &cb).is_err());
        let mut cfg = campaign(1, 1);
        cfg.wilson_width = 1.5;
        assert!(run_campaign(&cfg, &cb).is_err());
    }

    #[test]
    fn series_is_monotone_after_all_terminated() {
        let cb = small_cb();
        let mut cfg = campaign(3, 0);
        cfg.scenario.snr_db = 10.0;
        let rep = run_campaign(&cfg, &cb).unwrap();
        let last_end = rep.records.iter().map(|r| r.samples_total).max().unwrap();
        let tail: Vec<f64> = rep.series.iter().filter(|p| p.t >= last_end).map(|p| p.p_hat).collect();
        assert!(tail.windows(2).all(|w| w[1] >= w[0]));
        let correct = rep.records.iter().filter(|r| r.correct).count() as f64 / rep.l_sims as f64;
        assert_abs_diff_eq!(*tail.last().unwrap(), correct, epsilon = 1e-12);
    }
}
