use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use beamsweep::array::{NoiseModel, PathSet};
use beamsweep::codebook::{check_assumptions, noiseless_profile, write_profile_csv, HierarchicalCodebook};
use beamsweep::complexity::{lambert_w0, predict_for_profile, rank_pruning_vectors, sample_profiles, ComplexityPrediction};
use beamsweep::config::{manifest_toml, Settings};
use beamsweep::csvfmt::sig9;
use beamsweep::harness::run_campaign;
use beamsweep::sse::{PruningVector, SseConfig};
use beamsweep::Error;

#[derive(Parser, Debug)]
#[command(name = "beamsweep", version, about = "Hierarchical beam alignment with successive subtree elimination")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the codebook and dump the reward profile for one AoA.
    Codebook {
        /// Dominant-path AoA in degrees; defaults to the range midpoint.
        #[arg(long)]
        aoa_deg: Option<f64>,
    },
    /// Run a Monte Carlo campaign.
    Simulate,
    /// Predicted per-level sample counts.
    Predict {
        /// Predict at one AoA instead of averaging over uniform draws.
        #[arg(long)]
        aoa_deg: Option<f64>,
    },
    /// Rank every pruning vector by predicted expected complexity.
    OptimizeP,
    /// Check codebook assumptions over an AoA sweep and run self-tests.
    Validate {
        #[arg(long, default_value_t = 1000)]
        aoas: usize,
    },
}

enum Failure {
    Config(String),
    Validation(String),
    Budget(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) => Failure::Config(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

/// Pulls `--section.key=value` and `--section.key value` out of argv.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), Failure> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| Failure::Config(format!("--{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_manifest(dir: &Path, settings: &Settings, command: &str, outputs: &[&str]) -> Result<(), Failure> {
    let outputs: Vec<String> = outputs.iter().map(|s| s.to_string()).collect();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.toml"), manifest_toml(settings, command, &outputs))?;
    Ok(())
}

fn aoa_radians(settings: &Settings, aoa_deg: Option<f64>) -> Result<f64, Failure> {
    let range = settings.theta_range()?;
    let theta = aoa_deg.map_or(range.midpoint(), f64::to_radians);
    if !(range.lo..=range.hi).contains(&theta) {
        return Err(Failure::Config("--aoa-deg lies outside the codebook range".into()));
    }
    Ok(theta)
}

fn cmd_codebook(settings: &Settings, out: &Path, aoa_deg: Option<f64>) -> Result<(), Failure> {
    let cb = settings.build_codebook()?;
    let theta = aoa_radians(settings, aoa_deg)?;
    let sigma2 = NoiseModel::from_snr_db(settings.channel.snr_db).sigma2;
    let profile = noiseless_profile(&cb, &PathSet::single(theta), sigma2);
    write_profile_csv(&cb, &profile, create(out, "profile.csv")?)?;
    write_manifest(out, settings, "codebook", &["profile.csv"])?;
    let rep = check_assumptions(&profile, settings.gain());
    println!(
        "codebook: {} vectors, {} leaves; aoa {:.4} deg best leaf {}; unimodal {}",
        cb.num_vectors(),
        cb.num_leaves(),
        theta.to_degrees(),
        profile.best_at(cb.h_levels()),
        rep.unimodal
    );
    let ratios: Vec<String> = rep.gain_ratios.iter().map(|r| format!("{:.3}", r)).collect();
    println!("gain ratios: {}", ratios.join(" "));
    Ok(())
}

fn cmd_simulate(settings: &Settings, out: &Path, threads: usize) -> Result<(), Failure> {
    let cb = settings.build_codebook()?;
    let cfg = settings.campaign_config(threads)?;
    let rep = run_campaign(&cfg, &cb)?;
    rep.write_records_csv(create(out, "records.csv")?)?;
    rep.write_timeseries_csv(create(out, "timeseries.csv")?)?;
    write_manifest(out, settings, "simulate", &["records.csv", "timeseries.csv"])?;
    println!(
        "L = {}  P_c = {:.4}  Wilson = ({:.4}, {:.4}) width {:.4}{}",
        rep.l_sims,
        rep.p_hat,
        rep.wilson.0,
        rep.wilson.1,
        rep.wilson_width(),
        if rep.converged { "" } else { "  [not converged]" }
    );
    println!("T_hat = {:.2}  ops mean {:.0} p50 {} p99 {}", rep.t_hat, rep.op_stats.mean, rep.op_stats.p50, rep.op_stats.p99);
    if rep.budget_exhausted > 0 {
        return Err(Failure::Budget(format!("{} runs hit the per-level sample budget", rep.budget_exhausted)));
    }
    Ok(())
}

fn write_mean_prediction(preds: &[ComplexityPrediction], out: &mut impl std::io::Write) -> std::io::Result<f64> {
    let n = preds.len() as f64;
    let first = &preds[0];
    let total = preds.iter().map(|p| p.total as f64).sum::<f64>() / n;
    let t2 = preds.iter().map(|p| p.coarse_total).sum::<f64>() / n;
    writeln!(out, "p_dec,level,S_size,H_eps,T_bar,total,coarse_total")?;
    for (k, l) in first.per_level.iter().enumerate() {
        let h_eps = preds.iter().map(|p| p.per_level[k].h_eps).sum::<f64>() / n;
        let t_bar = preds.iter().map(|p| p.per_level[k].t_bar as f64).sum::<f64>() / n;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            first.p_dec,
            l.level,
            l.s_size,
            sig9(h_eps),
            sig9(t_bar),
            sig9(total),
            sig9(t2)
        )?;
    }
    Ok(total)
}

fn cmd_predict(settings: &Settings, out: &Path, threads: usize, aoa_deg: Option<f64>) -> Result<(), Failure> {
    let cb = settings.build_codebook()?;
    let cfg = settings.sse_config()?;
    let sigma2 = NoiseModel::from_snr_db(settings.channel.snr_db).sigma2;
    let profiles = match aoa_deg {
        Some(_) => vec![noiseless_profile(&cb, &PathSet::single(aoa_radians(settings, aoa_deg)?), sigma2)],
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.predict.seed);
            in_pool(threads, || sample_profiles(&cb, sigma2, settings.predict.theta_samples, &mut rng))?
        }
    };
    let preds: Vec<ComplexityPrediction> = profiles.iter().filter_map(|p| predict_for_profile(p, &cfg).ok()).collect();
    let excluded = profiles.len() - preds.len();
    if preds.is_empty() {
        return Err(Failure::Other("every prediction was unbounded".into()));
    }
    let mut f = create(out, "predict.csv")?;
    let total = write_mean_prediction(&preds, &mut f)?;
    drop(f);
    write_manifest(out, settings, "predict", &["predict.csv"])?;
    println!(
        "p_dec {} (N_H = {}): predicted total {:.2} over {} AoA(s), {} excluded",
        cfg.pruning.to_dec(),
        cfg.pruning.total_arms(),
        total,
        preds.len(),
        excluded
    );
    Ok(())
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Other(e.to_string()))?;
    Ok(pool.install(f))
}

fn cmd_optimize(settings: &Settings, out: &Path, threads: usize) -> Result<(), Failure> {
    let cb = settings.build_codebook()?;
    let cfg = settings.sse_config()?;
    let sigma2 = NoiseModel::from_snr_db(settings.channel.snr_db).sigma2;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.predict.seed);
    let ranked = in_pool(threads, || {
        let profiles = sample_profiles(&cb, sigma2, settings.predict.theta_samples, &mut rng);
        rank_pruning_vectors(&profiles, &cfg)
    })?;
    let mut f = create(out, "optimize.csv")?;
    use std::io::Write;
    writeln!(f, "rank,p_dec,bits,N_H,expected_total,std_err,excluded")?;
    for (k, r) in ranked.iter().enumerate() {
        let bits = PruningVector::from_dec(r.p_dec, cfg.h_levels)?;
        writeln!(f, "{},{},{},{},{},{},{}", k + 1, r.p_dec, bits, r.n_total, sig9(r.mean), sig9(r.std_err), r.excluded)?;
    }
    drop(f);
    write_manifest(out, settings, "optimize-p", &["optimize.csv"])?;
    for r in ranked.iter().take(5) {
        println!("p_dec {:>3}  N_H {:>3}  expected total {:.2}", r.p_dec, r.n_total, r.mean);
    }
    Ok(())
}

fn self_tests(cb: &HierarchicalCodebook, cfg: &SseConfig, sigma2: f64) -> Result<Vec<String>, Failure> {
    use beamsweep::sse::{run_sse, ChannelSource};
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 0..=2000 {
        let x = -0.36787944117144233 + 1e-9 + k as f64 * 5.0;
        let w = lambert_w0(x)?;
        worst = worst.max((w * w.exp() - x).abs() / x.abs().max(1.0));
    }
    if worst > 1e-12 {
        failures.push(format!("Lambert-W relative residual {worst:e}"));
    }
    let mut cfg = cfg.clone();
    cfg.check_invariants = true;
    let mut violations = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for s in 0..20u64 {
        let range = cb.theta_range();
        let theta = rng.random_range(range.lo..range.hi);
        let src_rng = ChaCha8Rng::seed_from_u64(1000 + s);
        let mut src = ChannelSource::new(cb, PathSet::single(theta), Default::default(), sigma2, src_rng);
        violations += run_sse(&cfg, cb, &mut src, None)?.invariant_violations;
    }
    if violations > 0 {
        failures.push(format!("{violations} sampling-rule violations"));
    }
    Ok(failures)
}

fn cmd_validate(settings: &Settings, out: &Path, aoas: usize) -> Result<(), Failure> {
    let cb = settings.build_codebook()?;
    let sigma2 = NoiseModel::from_snr_db(settings.channel.snr_db).sigma2;
    let range = cb.theta_range();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.predict.seed);
    let h = cb.h_levels() as usize;
    let (mut unimodal, mut unique) = (0usize, 0usize);
    let mut ratio_sums = vec![0.0; h.saturating_sub(1)];
    let mut min_ratio = f64::INFINITY;
    for _ in 0..aoas {
        let theta = rng.random_range(range.lo..range.hi);
        let rep = check_assumptions(&noiseless_profile(&cb, &PathSet::single(theta), sigma2), settings.gain());
        unimodal += rep.unimodal as usize;
        unique += rep.unique_maxima as usize;
        for (s, r) in ratio_sums.iter_mut().zip(&rep.gain_ratios) {
            *s += r;
            min_ratio = min_ratio.min(*r);
        }
    }
    let rate = unimodal as f64 / aoas.max(1) as f64;
    println!("unimodality rate {:.2}% over {aoas} AoAs (unique maxima {:.2}%)", 100.0 * rate, 100.0 * unique as f64 / aoas.max(1) as f64);
    let ratios: Vec<String> = ratio_sums.iter().map(|s| format!("{:.3}", s / aoas.max(1) as f64)).collect();
    println!("mean gain ratio per level: {} (configured {:.3})", ratios.join(" "), settings.gain());
    let mut failures = self_tests(&cb, &settings.sse_config()?, sigma2)?;
    if rate < 0.95 {
        failures.push(format!("unimodality rate {:.2}% below 95%", 100.0 * rate));
    }
    if h > 1 && !(min_ratio > 0.0) {
        failures.push("non-positive gain ratio".into());
    }
    write_manifest(out, settings, "validate", &[])?;
    if failures.is_empty() {
        println!("validate: ok");
        Ok(())
    } else {
        Err(Failure::Validation(failures.join("; ")))
    }
}

fn run() -> Result<(), Failure> {
    let (args, overrides) = split_overrides(std::env::args().collect())?;
    let cli = Cli::try_parse_from(args).map_err(|e| {
        let _ = e.print();
        if e.use_stderr() {
            Failure::Config(String::new())
        } else {
            std::process::exit(0)
        }
    })?;
    let settings = Settings::load(cli.config.as_deref(), &overrides)?;
    match cli.cmd {
        Command::Codebook { aoa_deg } => cmd_codebook(&settings, &cli.out, aoa_deg),
        Command::Simulate => cmd_simulate(&settings, &cli.out, cli.threads),
        Command::Predict { aoa_deg } => cmd_predict(&settings, &cli.out, cli.threads, aoa_deg),
        Command::OptimizeP => cmd_optimize(&settings, &cli.out, cli.threads),
        Command::Validate { aoas } => cmd_validate(&settings, &cli.out, aoas),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Config(m) => (2, m),
                Failure::Validation(m) => (3, m),
                Failure::Budget(m) => (4, m),
                Failure::Other(m) => (1, m),
            };
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(code)
        }
    }
}
