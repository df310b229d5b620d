//! Run configuration.
//!
//! A TOML file with sections `array`, `codebook`, `channel` (and
//! `channel.fading`), `sse`, `campaign` and `predict`. Any key can be
//! overridden with a dotted `section.key=value` pair. Angles are given in
//! degrees and converted to radians when the codebook is built.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::array::{AngleInterval, ArrayConfig, FadingMode, FadingModel};
use crate::codebook::HierarchicalCodebook;
use crate::harness::{CampaignConfig, IStarMode, Scenario};
use crate::sse::{ConfidenceMode, PruningVector, SseConfig};
use crate::{Error, Result};

pub const SEED_ENV: &str = "BEAMSWEEP_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub m: usize,
    pub spacing_ratio: f64,
    pub normalize: bool,
}

impl Default for ArraySection {
    fn default() -> Self {
        ArraySection {
            m: 128,
            spacing_ratio: 0.5,
            normalize: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookSection {
    pub h: u32,
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub gain_db: f64,
    /// Design grid points; 0 picks `32 * 2^h`.
    pub design_grid: usize,
}

impl Default for CodebookSection {
    fn default() -> Self {
        CodebookSection {
            h: 7,
            theta_min_deg: 30.0,
            theta_max_deg: 150.0,
            gain_db: 2.0,
            design_grid: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FadingSection {
    pub mode: FadingMode,
    pub rho: f64,
    pub k_factor: f64,
}

impl Default for FadingSection {
    fn default() -> Self {
        FadingSection {
            mode: FadingMode::Static,
            rho: 0.995,
            k_factor: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub snr_db: f64,
    pub k_paths: usize,
    pub attenuation_db: f64,
    pub fading: FadingSection,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            snr_db: 0.0,
            k_paths: 1,
            attenuation_db: 10.0,
            fading: FadingSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SseSection {
    pub p_dec: u64,
    /// Explicit `p_1..p_H` string; takes precedence over `p_dec`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_bits: Option<String>,
    pub epsilon: f64,
    pub delta: f64,
    pub b: f64,
    pub c: f64,
    pub confidence_mode: ConfidenceMode,
    /// 0 disables the per-level budget.
    pub max_samples_per_level: u64,
}

impl Default for SseSection {
    fn default() -> Self {
        SseSection {
            p_dec: 7,
            p_bits: None,
            epsilon: 7.0,
            delta: 0.05,
            b: 0.1,
            c: 0.1,
            confidence_mode: ConfidenceMode::EmpiricalVariance,
            max_samples_per_level: crate::sse::DEFAULT_MAX_SAMPLES_PER_LEVEL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub base_seed: u64,
    pub wilson_width: f64,
    pub wilson_conf: f64,
    pub min_sims: usize,
    pub max_sims: usize,
    pub batch_size: usize,
    pub metric_horizon: usize,
    pub istar_mode: IStarMode,
}

impl Default for CampaignSection {
    fn default() -> Self {
        CampaignSection {
            base_seed: 0,
            wilson_width: 0.02,
            wilson_conf: 0.95,
            min_sims: 100,
            max_sims: 20_000,
            batch_size: 50,
            metric_horizon: 0,
            istar_mode: IStarMode::Dominant,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub theta_samples: usize,
    pub seed: u64,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection {
            theta_samples: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub array: ArraySection,
    pub codebook: CodebookSection,
    pub channel: ChannelSection,
    pub sse: SseSection,
    pub campaign: CampaignSection,
    pub predict: PredictSection,
}

fn flatten_into(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten_into(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn flatten(table: &Table) -> Vec<(String, Value)> {
    let mut out = Vec::new();
    flatten_into("", table, &mut out);
    out
}

fn insert_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap();
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {p} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl Settings {
    /// Every accepted dotted key.
    pub fn valid_keys() -> Vec<String> {
        let table = Table::try_from(Settings::default()).expect("defaults serialize");
        let mut keys: Vec<String> = flatten(&table).into_iter().map(|(k, _)| k).collect();
        keys.push("sse.p_bits".into());
        keys.sort();
        keys
    }

    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Settings> {
        let mut table: Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        // Manifests carry their own bookkeeping section.
        table.remove("manifest");
        for (k, v) in overrides {
            insert_dotted(&mut table, k, parse_value(v))?;
        }
        let valid = Self::valid_keys();
        for (k, _) in flatten(&table) {
            if !valid.contains(&k) {
                return Err(Error::Config(format!("unknown key `{k}`; valid keys: {}", valid.join(", "))));
            }
        }
        let settings: Settings = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        settings.validate()?;
        Ok(settings)
    }

    /// Reads `path` (or starts from defaults), then applies `overrides` and the
    /// seed environment variable.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Settings> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut all = overrides.to_vec();
        if let Ok(seed) = std::env::var(SEED_ENV) {
            all.push(("campaign.base_seed".into(), seed));
        }
        Self::from_toml_str(&text, &all)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let a = &self.array;
        if a.m == 0 {
            return fail("array.m must be at least 1".into());
        }
        if !(a.spacing_ratio > 0.0) {
            return fail("array.spacing_ratio must be positive".into());
        }
        let cb = &self.codebook;
        if !(1..=12).contains(&cb.h) {
            return fail("codebook.h must be in 1..=12".into());
        }
        if !(0.0 <= cb.theta_min_deg && cb.theta_min_deg < cb.theta_max_deg && cb.theta_max_deg <= 360.0) {
            return fail("codebook angles need 0 <= theta_min_deg < theta_max_deg <= 360".into());
        }
        if !(cb.gain_db > 0.0) {
            return fail("codebook.gain_db must be positive".into());
        }
        if cb.design_grid != 0 && cb.design_grid < 4 << cb.h {
            return fail(format!("codebook.design_grid must be 0 or at least {}", 4 << cb.h));
        }
        let ch = &self.channel;
        if !ch.snr_db.is_finite() {
            return fail("channel.snr_db must be finite".into());
        }
        if ch.k_paths == 0 {
            return fail("channel.k_paths must be at least 1".into());
        }
        if !(0.0..1.0).contains(&ch.fading.rho) {
            return fail("channel.fading.rho must lie in [0, 1)".into());
        }
        if !(ch.fading.k_factor >= 0.0) {
            return fail("channel.fading.k_factor must be >= 0".into());
        }
        self.pruning()?;
        let s = &self.sse;
        if !(s.epsilon >= 0.0) {
            return fail("sse.epsilon must be >= 0".into());
        }
        if !(s.delta > 0.0 && s.delta < 1.0) {
            return fail("sse.delta must lie in (0, 1)".into());
        }
        if !(s.b > 0.0 && s.c > 0.0) {
            return fail("sse.b and sse.c must be positive".into());
        }
        let c = &self.campaign;
        if !(c.wilson_width > 0.0 && c.wilson_width < 1.0) {
            return fail("campaign.wilson_width must lie in (0, 1)".into());
        }
        if !(c.wilson_conf > 0.0 && c.wilson_conf < 1.0) {
            return fail("campaign.wilson_conf must lie in (0, 1)".into());
        }
        if c.min_sims < 30 {
            return fail("campaign.min_sims must be at least 30".into());
        }
        if c.max_sims == 0 || c.batch_size == 0 {
            return fail("campaign.max_sims and campaign.batch_size must be at least 1".into());
        }
        if self.predict.theta_samples == 0 {
            return fail("predict.theta_samples must be at least 1".into());
        }
        Ok(())
    }

    pub fn pruning(&self) -> Result<PruningVector> {
        let h = self.codebook.h;
        match &self.sse.p_bits {
            Some(bits) => {
                let p = PruningVector::parse_bits(bits).map_err(|e| Error::Config(format!("sse.p_bits: {e}")))?;
                if p.h_levels() != h {
                    return Err(Error::Config(format!("sse.p_bits needs {h} entries")));
                }
                Ok(p)
            }
            None => PruningVector::from_dec(self.sse.p_dec, h).map_err(|e| Error::Config(format!("sse.p_dec: {e}"))),
        }
    }

    pub fn gain(&self) -> f64 {
        10f64.powf(self.codebook.gain_db / 10.0)
    }

    pub fn theta_range(&self) -> Result<AngleInterval> {
        AngleInterval::from_degrees(self.codebook.theta_min_deg, self.codebook.theta_max_deg)
    }

    pub fn array_config(&self) -> Result<ArrayConfig> {
        ArrayConfig::new(self.array.m, self.array.spacing_ratio, self.array.normalize)
    }

    pub fn design_grid(&self) -> usize {
        match self.codebook.design_grid {
            0 => 32 << self.codebook.h,
            n => n,
        }
    }

    pub fn build_codebook(&self) -> Result<HierarchicalCodebook> {
        HierarchicalCodebook::build(
            self.codebook.h,
            self.theta_range()?,
            self.array_config()?,
            self.design_grid(),
            self.gain(),
        )
    }

    pub fn fading_model(&self) -> FadingModel {
        FadingModel {
            mode: self.channel.fading.mode,
            ar_coefficient: self.channel.fading.rho,
            rician_k_factor: self.channel.fading.k_factor,
        }
    }

    pub fn sse_config(&self) -> Result<SseConfig> {
        let mut cfg = SseConfig::new(self.pruning()?);
        cfg.b_param = self.sse.b;
        cfg.c_param = self.sse.c;
        cfg.epsilon = self.sse.epsilon;
        cfg.delta = self.sse.delta;
        cfg.gain = self.gain();
        cfg.confidence_mode = self.sse.confidence_mode;
        cfg.max_samples_per_level = (self.sse.max_samples_per_level > 0).then_some(self.sse.max_samples_per_level);
        Ok(cfg)
    }

    pub fn campaign_config(&self, threads: usize) -> Result<CampaignConfig> {
        let c = &self.campaign;
        let mut cfg = CampaignConfig::new(self.sse_config()?);
        cfg.base_seed = c.base_seed;
        cfg.scenario = Scenario {
            snr_db: self.channel.snr_db,
            k_paths: self.channel.k_paths,
            attenuation_db: self.channel.attenuation_db,
            fading: self.fading_model(),
        };
        cfg.wilson_width = c.wilson_width;
        cfg.wilson_conf = c.wilson_conf;
        cfg.min_sims = c.min_sims;
        cfg.max_sims = c.max_sims;
        cfg.batch_size = c.batch_size;
        cfg.metric_horizon = c.metric_horizon;
        cfg.istar_mode = c.istar_mode;
        cfg.threads = threads;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestInfo {
    pub version: String,
    pub command: String,
    pub base_seed: u64,
    pub outputs: Vec<String>,
}

/// Resolved settings plus bookkeeping. The file loads back as a config.
pub fn manifest_toml(settings: &Settings, command: &str, outputs: &[String]) -> String {
    #[derive(Serialize)]
    struct Manifest<'a> {
        manifest: ManifestInfo,
        #[serde(flatten)]
        settings: &'a Settings,
    }
    let m = Manifest {
        manifest: ManifestInfo {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            base_seed: settings.campaign.base_seed,
            outputs: outputs.to_vec(),
        },
        settings,
    };
    toml::to_string(&m).expect("manifest serializes")
}
