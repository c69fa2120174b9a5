//! Run configuration: flat `section.key = value` lines, `#` comments.
//!
//! ```text
//! code.family = ldpc
//! decoder.iters = 5
//! search.approach = 1
//! search.ebn0_db = auto
//! eval.grid = 1:1:5
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::attack::{
    AttackError, ClusterMethod, Linkage, Scheduler, SearchConfig, Selection,
};
use crate::bp::{BpConfig, LossMode};
use crate::codes::{self, CodeError, CodeSpec};
use crate::eval::{ChannelModel, EvalError, Link, MessageSource, PointSpec};
use crate::modem::Scheme;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: invalid value `{value}`{}", hint.as_deref().map(|h| format!(" ({h})")).unwrap_or_default())]
    Value {
        key: String,
        value: String,
        hint: Option<String>,
    },
    #[error("{0}")]
    Inconsistent(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Search(#[from] AttackError),
    #[error(transparent)]
    Link(#[from] EvalError),
}

const KEYS: &[&str] = &[
    "seed",
    "code.family",
    "code.n",
    "code.k",
    "code.alist",
    "code.design_ebn0_db",
    "decoder.iters",
    "decoder.clamp",
    "decoder.loss",
    "decoder.early_stop",
    "modem.scheme",
    "channel.kind",
    "channel.si",
    "channel.sigma_b_ratio",
    "channel.rho",
    "search.approach",
    "search.batch_size",
    "search.iterations",
    "search.max_trials",
    "search.ebn0_db",
    "search.target_bler",
    "search.calibration_frames",
    "search.scheduler",
    "search.eps0",
    "search.decay",
    "search.step_len",
    "search.accept",
    "search.runs",
    "search.cluster",
    "search.clusters",
    "search.require_nonzero",
    "search.validation_ebn0_db",
    "search.validation_frames",
    "eval.frames",
    "eval.ebn0_db",
    "eval.grid",
    "eval.message",
    "eval.min_block_errors",
    "output.attack",
    "output.csv",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Ldpc,
    Polar,
    Repetition,
    Hamming,
    Uncoded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeConfig {
    pub family: Family,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub alist: Option<PathBuf>,
    pub design_ebn0_db: f64,
}

impl CodeConfig {
    pub fn build(&self) -> Result<CodeSpec, ConfigError> {
        let code = match self.family {
            Family::Ldpc => match &self.alist {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    let h = codes::load_alist(&text)?;
                    let stem = path.file_stem().map_or("ldpc".into(), |s| s.to_string_lossy());
                    CodeSpec::from_parity(stem, codes::CodeFamily::Ldpc, &h)?
                }
                None => CodeSpec::default_ldpc(),
            },
            Family::Polar => codes::polar_construct(
                self.n.unwrap_or(64),
                self.k.unwrap_or(32),
                self.design_ebn0_db,
            )?,
            Family::Repetition => CodeSpec::repetition(self.n.unwrap_or(3))?,
            Family::Hamming => CodeSpec::hamming74(),
            Family::Uncoded => CodeSpec::uncoded(self.n.unwrap_or(64))?,
        };
        for (what, want, got) in [("n", self.n, code.n), ("k", self.k, code.k)] {
            if want.is_some_and(|w| w != got) {
                return Err(ConfigError::Inconsistent(format!(
                    "code.{what} = {} but the {} code has {what} = {got}",
                    want.unwrap(),
                    code.name
                )));
            }
        }
        Ok(code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SearchSnr {
    /// Bisect for the Eb/N0 where baseline BLER hits `target_bler`.
    Auto,
    Db(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSettings {
    pub approach: u8,
    /// Search parameters; `sigma` is filled in once the SNR is resolved.
    pub cfg: SearchConfig,
    pub ebn0: SearchSnr,
    pub target_bler: f64,
    pub calibration_frames: u64,
    pub require_nonzero: bool,
    /// Defaults to the search Eb/N0.
    pub validation_ebn0_db: Option<f64>,
    pub validation_frames: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub frames: u64,
    pub ebn0_db: f64,
    pub grid: Vec<f64>,
    pub message: MessageSource,
    pub min_block_errors: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub code: CodeConfig,
    pub decoder: BpConfig,
    pub scheme: Scheme,
    pub channel: ChannelModel,
    pub search: SearchSettings,
    pub eval: EvalSettings,
    pub output_attack: Option<PathBuf>,
    pub output_csv: Option<PathBuf>,
}

struct Entries {
    map: BTreeMap<String, String>,
}

impl Entries {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.map
            .get(key)
            .map(|v| {
                v.parse().map_err(|_| ConfigError::Value {
                    key: key.into(),
                    value: v.clone(),
                    hint: None,
                })
            })
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn bad(&self, key: &str, hint: &str) -> ConfigError {
        ConfigError::Value {
            key: key.into(),
            value: self.map.get(key).cloned().unwrap_or_default(),
            hint: Some(hint.into()),
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

/// Parses `a,b,c` or `start:step:stop` (inclusive).
pub fn parse_grid(s: &str) -> Option<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.parse().ok()).collect::<Option<_>>()?;
        let (start, step, stop) = (v[0], v[1], v[2]);
        if !(step > 0.0) || stop < start {
            return None;
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        return Some((0..count).map(|i| start + i as f64 * step).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse().ok().filter(|v: &f64| v.is_finite()))
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        Self::parse(&text, path.parent())
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.into(),
                });
            }
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.into(),
                });
            }
        }
        let e = Entries { map };
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };

        let family = match e.str("code.family").unwrap_or("ldpc") {
            "ldpc" => Family::Ldpc,
            "polar" => Family::Polar,
            "repetition" => Family::Repetition,
            "hamming" => Family::Hamming,
            "uncoded" => Family::Uncoded,
            _ => return Err(e.bad("code.family", "ldpc, polar, repetition, hamming or uncoded")),
        };
        let code = CodeConfig {
            family,
            n: e.get("code.n")?,
            k: e.get("code.k")?,
            alist: e.str("code.alist").map(resolve),
            design_ebn0_db: e.or("code.design_ebn0_db", 2.0)?,
        };

        let mut decoder = BpConfig::new(e.or("decoder.iters", 5)?);
        decoder.clamp = e.or("decoder.clamp", decoder.clamp)?;
        if !(decoder.clamp > 0.0 && decoder.clamp.is_finite()) {
            return Err(e.bad("decoder.clamp", "must be positive"));
        }
        if let Some(v) = e.str("decoder.early_stop") {
            decoder.early_stop = parse_bool(v).ok_or_else(|| e.bad("decoder.early_stop", "true or false"))?;
        }
        let loss: LossMode = e.or("decoder.loss", LossMode::Final)?;

        let scheme: Scheme = e.or("modem.scheme", Scheme::Bpsk)?;
        let si = match e.str("channel.si") {
            Some(v) => parse_bool(v).ok_or_else(|| e.bad("channel.si", "true or false"))?,
            None => true,
        };
        let channel = match e.str("channel.kind").unwrap_or("awgn") {
            "awgn" => ChannelModel::Awgn,
            "rayleigh" => ChannelModel::Rayleigh { si },
            "bursty" => ChannelModel::Bursty {
                sigma_b_ratio: e.or("channel.sigma_b_ratio", 2.0)?,
                rho: e.or("channel.rho", 0.1)?,
            },
            _ => return Err(e.bad("channel.kind", "awgn, rayleigh or bursty")),
        };
        if let ChannelModel::Bursty { sigma_b_ratio, rho } = channel {
            if !(sigma_b_ratio >= 0.0 && sigma_b_ratio.is_finite()) {
                return Err(e.bad("channel.sigma_b_ratio", "must be non-negative"));
            }
            if !(0.0..=1.0).contains(&rho) {
                return Err(e.bad("channel.rho", "must lie in [0, 1]"));
            }
        }

        let approach: u8 = e.or("search.approach", 1)?;
        let mut cfg = SearchConfig::approach(approach, 1.0)
            .map_err(|_| e.bad("search.approach", "1, 2, 3 or 4"))?;
        cfg.loss = loss;
        cfg.batch_size = e.or("search.batch_size", cfg.batch_size)?;
        if let Some(i) = e.get("search.iterations")? {
            cfg.iterations = i;
            cfg.max_trials = 20 * i;
        }
        cfg.max_trials = e.or("search.max_trials", cfg.max_trials)?;
        cfg.runs = e.or("search.runs", cfg.runs)?;
        cfg.accept = match e.str("search.accept") {
            Some(v) => v.parse().map_err(|_| e.bad("search.accept", "ber, bler or both"))?,
            None => cfg.accept,
        };
        let eps0 = e.or("search.eps0", cfg.scheduler.eps0())?;
        let default_decay = match cfg.scheduler {
            Scheduler::ExpDecay { decay, .. } => decay,
            _ => 0.99,
        };
        cfg.scheduler = match e.str("search.scheduler") {
            None => match cfg.scheduler {
                Scheduler::ExpDecay { .. } => Scheduler::ExpDecay {
                    eps0,
                    decay: e.or("search.decay", default_decay)?,
                },
                _ => Scheduler::Constant { eps0 },
            },
            Some("constant") => Scheduler::Constant { eps0 },
            Some("exp_decay") => Scheduler::ExpDecay {
                eps0,
                decay: e.or("search.decay", default_decay)?,
            },
            Some("step") => Scheduler::Step {
                eps0,
                step_len: e.or("search.step_len", 10)?,
            },
            Some(_) => return Err(e.bad("search.scheduler", "constant, exp_decay or step")),
        };
        let current_k = match cfg.cluster {
            ClusterMethod::KMeans { k } | ClusterMethod::Agglomerative { k, .. } => k,
            ClusterMethod::None => 3,
        };
        let k = e.or("search.clusters", current_k)?;
        cfg.cluster = match e.str("search.cluster") {
            None => match cfg.cluster {
                ClusterMethod::KMeans { .. } => ClusterMethod::KMeans { k },
                ClusterMethod::Agglomerative { linkage, .. } => ClusterMethod::Agglomerative { linkage, k },
                ClusterMethod::None => ClusterMethod::None,
            },
            Some("none") => ClusterMethod::None,
            Some("kmeans") => ClusterMethod::KMeans { k },
            Some(l) => ClusterMethod::Agglomerative {
                linkage: Linkage::from_str(l)
                    .map_err(|_| e.bad("search.cluster", "none, kmeans, ward or complete"))?,
                k,
            },
        };
        cfg.validate().map_err(|err| ConfigError::Inconsistent(format!("search: {err}")))?;
        let ebn0 = match e.str("search.ebn0_db") {
            None | Some("auto") => SearchSnr::Auto,
            Some(v) => SearchSnr::Db(v.parse().map_err(|_| e.bad("search.ebn0_db", "a number or `auto`"))?),
        };
        let require_nonzero = match e.str("search.require_nonzero") {
            Some(v) => parse_bool(v).ok_or_else(|| e.bad("search.require_nonzero", "true or false"))?,
            None => false,
        };
        let target_bler: f64 = e.or("search.target_bler", 0.3)?;
        if !(target_bler > 0.0 && target_bler < 1.0) {
            return Err(e.bad("search.target_bler", "must lie in (0, 1)"));
        }
        let search = SearchSettings {
            approach,
            cfg,
            ebn0,
            target_bler,
            calibration_frames: e.or("search.calibration_frames", 4000)?,
            require_nonzero,
            validation_ebn0_db: e.get("search.validation_ebn0_db")?,
            validation_frames: e.or("search.validation_frames", 20_000)?,
        };

        let grid = match e.str("eval.grid") {
            Some(v) => parse_grid(v).ok_or_else(|| e.bad("eval.grid", "`a,b,c` or `start:step:stop`"))?,
            None => vec![1.0, 2.0, 3.0, 4.0, 5.0],
        };
        let message = match e.str("eval.message").unwrap_or("random") {
            "random" => MessageSource::Random,
            "all_zero" => MessageSource::AllZero,
            _ => return Err(e.bad("eval.message", "random or all_zero")),
        };
        let eval = EvalSettings {
            frames: e.or("eval.frames", 10_000)?,
            ebn0_db: e.or("eval.ebn0_db", 3.0)?,
            grid,
            message,
            min_block_errors: e.get("eval.min_block_errors")?,
        };
        if eval.frames == 0 {
            return Err(e.bad("eval.frames", "must be at least 1"));
        }

        let out = RunConfig {
            seed: e.or("seed", 1)?,
            code,
            decoder,
            scheme,
            channel,
            search,
            eval,
            output_attack: e.str("output.attack").map(resolve),
            output_csv: e.str("output.csv").map(resolve),
        };
        if matches!(out.channel, ChannelModel::Rayleigh { si: false }) {
            return Err(ConfigError::Inconsistent(
                "channel.si = false: the receiver needs the fading gains to form LLRs".into(),
            ));
        }
        Ok(out)
    }

    /// Builds the code and the full link, re-checking cross-field rules.
    pub fn link(&self) -> Result<Link, ConfigError> {
        Ok(Link::new(self.code.build()?, self.decoder, self.scheme, self.channel)?)
    }

    /// Settings of an eval point at `ebn0_db`.
    pub fn point(&self, ebn0_db: f64, workers: usize) -> PointSpec {
        PointSpec {
            ebn0_db,
            frames: self.eval.frames,
            seed: self.seed,
            source: self.eval.message,
            min_block_errors: self.eval.min_block_errors,
            workers,
        }
    }

    /// Validation settings for multi-run selection at the resolved search
    /// Eb/N0. Uses a seed distinct from evaluation.
    pub fn selection(&self, search_ebn0_db: f64, workers: usize) -> Selection {
        Selection {
            ebn0_db: self.search.validation_ebn0_db.unwrap_or(search_ebn0_db),
            frames: self.search.validation_frames,
            seed: crate::channel::derive_seed(self.seed, 0x5e1ec7),
            workers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::parse("", None).unwrap();
        assert_eq!(c.code.family, Family::Ldpc);
        assert_eq!(c.decoder.iters, 5);
        assert_eq!(c.search.ebn0, SearchSnr::Auto);
        assert_eq!(c.search.cfg.batch_size, 2000);
        let link = c.link().unwrap();
        assert_eq!((link.code.n, link.code.k), (64, 32));
    }

    #[test]
    fn misspelled_key_is_named() {
        let err = RunConfig::parse("search.bacth_size = 10\n", None).unwrap_err();
        assert!(err.to_string().contains("search.bacth_size"), "{err}");
        assert!(matches!(err, ConfigError::UnknownKey { line: 1, .. }));
    }

    #[test]
    fn full_config() {
        let text = "\
# comment
seed = 42
code.family = polar   # trailing comment
code.n = 16
code.k = 8
code.design_ebn0_db = 1.5
decoder.iters = 3
decoder.loss = multiloss
modem.scheme = qam4
channel.kind = bursty
channel.rho = 0.2
search.approach = 3
search.runs = 5
search.cluster = complete
search.clusters = 2
search.scheduler = step
search.step_len = 4
search.eps0 = 0.3
search.ebn0_db = 2.5
eval.grid = 0:0.5:2
eval.message = all_zero
";
        let c = RunConfig::parse(text, None).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.scheme, Scheme::Qam4);
        assert_eq!(c.search.cfg.loss, LossMode::Multiloss);
        assert_eq!(c.search.cfg.runs, 5);
        assert_eq!(c.search.cfg.batch_size, 20);
        assert_eq!(
            c.search.cfg.cluster,
            ClusterMethod::Agglomerative { linkage: Linkage::Complete, k: 2 }
        );
        assert_eq!(c.search.cfg.scheduler, Scheduler::Step { eps0: 0.3, step_len: 4 });
        assert_eq!(c.search.ebn0, SearchSnr::Db(2.5));
        assert_eq!(c.eval.grid, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(c.channel, ChannelModel::Bursty { sigma_b_ratio: 2.0, rho: 0.2 });
        let link = c.link().unwrap();
        assert_eq!(link.code.name, "polar-16-8");
    }

    #[test]
    fn invalid_values_and_consistency() {
        for bad in [
            "decoder.iters = many",
            "modem.scheme = 16qam",
            "search.batch_size = 0",
            "search.iterations = 10\nsearch.max_trials = 5",
            "search.eps0 = -1",
            "channel.kind = rayleigh\nchannel.si = false",
            "eval.grid = 3:1:1",
            "code.family = ldpc\ncode.n = 128",
            "seed = 1\nseed = 2",
            "just words",
        ] {
            let r = RunConfig::parse(bad, None).and_then(|c| c.link().map(|_| c));
            assert!(r.is_err(), "{bad}");
        }
        let c = RunConfig::parse("code.family = hamming\nmodem.scheme = qam4", None).unwrap();
        assert!(c.link().is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("1,2.5, 4"), Some(vec![1.0, 2.5, 4.0]));
        assert_eq!(parse_grid("1:1:5").unwrap().len(), 5);
        assert_eq!(parse_grid("x"), None);
    }
}
