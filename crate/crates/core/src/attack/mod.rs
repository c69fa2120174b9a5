//! Friendly-attack vectors: search, clustering, selection, application and
//! persistence.

mod cluster;
mod search;

use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};
use std::{fmt, fs, io, path::Path};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bp::{BpError, LossMode};
use crate::channel::ChannelError;
use crate::eval::EvalError;
use crate::modem::{Constellation, ModemError, Scheme};

pub use cluster::{cluster_attacks, kmeans, agglomerative, Linkage};
pub use search::{
    calibrate_ebn0, run_approach, run_regime, search_attack, select_best, ApproachOutcome,
    SearchOutcome, Selection, TrialRecord,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("attack has {attack} coordinates, word has {word}")]
    LengthMismatch { attack: usize, word: usize },
    #[error("attack is for {attack}, constellation is {word}")]
    SchemeMismatch { attack: Scheme, word: Scheme },
    #[error("attack coordinate {index} is not finite")]
    NonFiniteAttack { index: usize },
    #[error("non-finite gradient at trial {trial}, lane {lane}, coordinate {coord}")]
    NonFiniteGradient { trial: usize, lane: usize, coord: usize },
    #[error("invalid search setting: {0}")]
    Config(String),
    #[error("need at least {k} vectors to form {k} clusters, got {got}")]
    TooFewVectors { k: usize, got: usize },
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("unknown {what} `{value}`")]
    Unknown { what: &'static str, value: String },
    #[error(transparent)]
    Modem(#[from] ModemError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Decoder(#[from] BpError),
    #[error(transparent)]
    Eval(#[from] Box<EvalError>),
    #[error("attack file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<EvalError> for AttackError {
    fn from(e: EvalError) -> Self {
        AttackError::Eval(Box::new(e))
    }
}

/// Step-size schedule over accepted iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheduler {
    Constant { eps0: f64 },
    ExpDecay { eps0: f64, decay: f64 },
    /// Halve every `step_len` accepted iterations.
    Step { eps0: f64, step_len: usize },
}

impl Scheduler {
    pub fn eps0(&self) -> f64 {
        match *self {
            Scheduler::Constant { eps0 }
            | Scheduler::ExpDecay { eps0, .. }
            | Scheduler::Step { eps0, .. } => eps0,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let ok = match *self {
            Scheduler::Constant { eps0 } => eps0 > 0.0 && eps0.is_finite(),
            Scheduler::ExpDecay { eps0, decay } => {
                eps0 > 0.0 && eps0.is_finite() && decay > 0.0 && decay <= 1.0
            }
            Scheduler::Step { eps0, step_len } => eps0 > 0.0 && eps0.is_finite() && step_len > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(AttackError::Config(format!("bad scheduler {self:?}")))
        }
    }
}

/// Step size for accepted-iteration index `i`.
pub fn gradient_scheduler(i: usize, s: &Scheduler) -> f64 {
    match *s {
        Scheduler::Constant { eps0 } => eps0,
        Scheduler::ExpDecay { eps0, decay } => eps0 * decay.powi(i as i32),
        Scheduler::Step { eps0, step_len } => eps0 * 0.5f64.powi((i / step_len) as i32),
    }
}

/// Which batch statistic must strictly improve for an update to be kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AcceptRule {
    #[default]
    Ber,
    Bler,
    Both,
}

impl AcceptRule {
    /// `before`/`after` are `(bit_errors, block_errors)` on the same batch.
    pub fn improved(&self, before: (u64, u64), after: (u64, u64)) -> bool {
        match self {
            AcceptRule::Ber => after.0 < before.0,
            AcceptRule::Bler => after.1 < before.1,
            AcceptRule::Both => after.0 < before.0 && after.1 < before.1,
        }
    }
}

impl FromStr for AcceptRule {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ber" => Ok(AcceptRule::Ber),
            "bler" => Ok(AcceptRule::Bler),
            "both" => Ok(AcceptRule::Both),
            _ => Err(AttackError::Unknown {
                what: "accept rule",
                value: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterMethod {
    #[default]
    None,
    KMeans { k: usize },
    Agglomerative { linkage: Linkage, k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub batch_size: usize,
    /// Accepted-iteration budget.
    pub iterations: usize,
    pub max_trials: usize,
    /// Search-noise std.
    pub sigma: f64,
    pub scheduler: Scheduler,
    pub accept: AcceptRule,
    pub loss: LossMode,
    pub runs: usize,
    pub cluster: ClusterMethod,
}

pub const DEFAULT_EPS0: f64 = 0.02;

impl SearchConfig {
    /// Defaults of search approaches 1–4.
    pub fn approach(n: u8, sigma: f64) -> Result<Self, AttackError> {
        let constant = Scheduler::Constant { eps0: DEFAULT_EPS0 };
        let (b, i, runs, scheduler, cluster) = match n {
            1 => (2000, 50, 1, constant, ClusterMethod::None),
            2 => (
                200,
                2000,
                1,
                Scheduler::ExpDecay {
                    eps0: DEFAULT_EPS0,
                    decay: 0.999,
                },
                ClusterMethod::None,
            ),
            3 => (20, 30, 2000, constant, ClusterMethod::KMeans { k: 3 }),
            4 => (
                2000,
                3,
                200,
                constant,
                ClusterMethod::Agglomerative {
                    linkage: Linkage::Ward,
                    k: 4,
                },
            ),
            _ => {
                return Err(AttackError::Unknown {
                    what: "approach",
                    value: n.to_string(),
                })
            }
        };
        Ok(Self {
            batch_size: b,
            iterations: i,
            max_trials: 20 * i,
            sigma,
            scheduler,
            accept: AcceptRule::Ber,
            loss: LossMode::Final,
            runs,
            cluster,
        })
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: &str| Err(AttackError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.max_trials < self.iterations {
            return bad("max_trials must be at least the iteration budget");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("search sigma must be positive and finite");
        }
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        match self.cluster {
            ClusterMethod::KMeans { k } | ClusterMethod::Agglomerative { k, .. } if k == 0 => {
                return bad("cluster count must be at least 1")
            }
            _ => {}
        }
        self.scheduler.validate()
    }
}

/// A perturbation of the modulated all-zero codeword, with the metadata
/// needed to reproduce its search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackVector {
    pub version: u32,
    pub code_id: String,
    pub scheme: Scheme,
    /// Real coordinates (code length).
    pub n: usize,
    /// Channel symbols.
    #[serde(rename = "N")]
    pub symbols: usize,
    /// Real coordinates; interleaved re/im for 4-QAM.
    pub a: Vec<f64>,
    pub search_sigma: f64,
    pub seed: u64,
    pub approach: String,
    pub accepted_iters: usize,
    /// Unix seconds.
    pub created: u64,
}

impl AttackVector {
    pub fn zero(code_id: &str, scheme: Scheme, n: usize) -> Self {
        let bps = Constellation::new(scheme).bits_per_symbol();
        Self {
            version: FORMAT_VERSION,
            code_id: code_id.into(),
            scheme,
            n,
            symbols: n / bps,
            a: vec![0.0; n],
            search_sigma: 0.0,
            seed: 0,
            approach: String::new(),
            accepted_iters: 0,
            created: now(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.a.len() != self.n {
            return Err(AttackError::LengthMismatch {
                attack: self.a.len(),
                word: self.n,
            });
        }
        let bps = Constellation::new(self.scheme).bits_per_symbol();
        if self.n % bps != 0 || self.symbols * bps != self.n {
            return Err(AttackError::Config(format!(
                "N = {} does not match n = {} for {}",
                self.symbols, self.n, self.scheme
            )));
        }
        if let Some(index) = self.a.iter().position(|v| !v.is_finite()) {
            return Err(AttackError::NonFiniteAttack { index });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, AttackError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, AttackError> {
        let v: AttackVector = serde_json::from_str(text)?;
        v.validate()?;
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), AttackError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AttackError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

impl fmt::Display for AttackVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} approach {} ‖a‖={:.4} after {} accepted iterations",
            self.code_id,
            self.scheme,
            self.approach,
            self.norm(),
            self.accepted_iters
        )
    }
}

pub(crate) fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Scales `s` to total power `symbols·power`. Returns the scaled vector and
/// `C = √(N·P)/‖s‖`.
pub fn normalize_power(s: &[f64], symbols: usize, power: f64) -> Result<(Vec<f64>, f64), AttackError> {
    let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(AttackError::ZeroVector);
    }
    let c = (symbols as f64 * power).sqrt() / norm;
    if c == 1.0 {
        return Ok((s.to_vec(), c));
    }
    Ok((s.iter().map(|v| c * v).collect(), c))
}

/// Adapts an all-zero-codeword attack to the word `s`:
/// `out_i = s_i + s_i·a_i/s0` per (complex) symbol, then normalized to unit
/// power per symbol. A zero attack returns `s` unchanged.
pub fn apply_attack(s: &[f64], a: &[f64], c: &Constellation) -> Result<Vec<f64>, AttackError> {
    if a.len() != s.len() {
        return Err(AttackError::LengthMismatch {
            attack: a.len(),
            word: s.len(),
        });
    }
    let symbols = c.symbols_for(s.len())?;
    if a.iter().all(|&v| v == 0.0) {
        return Ok(s.to_vec());
    }
    let out: Vec<f64> = match c.scheme {
        Scheme::Bpsk => s.iter().zip(a).map(|(&si, &ai)| si + si * ai / c.s0.0).collect(),
        Scheme::Qam4 => {
            let (pr, pi) = c.s0;
            let d = pr * pr + pi * pi;
            let mut out = Vec::with_capacity(s.len());
            for (sv, av) in s.chunks_exact(2).zip(a.chunks_exact(2)) {
                // s·a / s0 = s·a·conj(s0) / |s0|².
                let (ar, ai) = (av[0] * pr + av[1] * pi, av[1] * pr - av[0] * pi);
                out.push(sv[0] + (sv[0] * ar - sv[1] * ai) / d);
                out.push(sv[1] + (sv[0] * ai + sv[1] * ar) / d);
            }
            out
        }
    };
    Ok(normalize_power(&out, symbols, 1.0)?.0)
}

/// Like [`apply_attack`] but checks that the vector was built for `c`.
pub fn apply_attack_vector(
    s: &[f64],
    a: &AttackVector,
    c: &Constellation,
) -> Result<Vec<f64>, AttackError> {
    if a.scheme != c.scheme {
        return Err(AttackError::SchemeMismatch {
            attack: a.scheme,
            word: c.scheme,
        });
    }
    apply_attack(s, &a.a, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scheduler_examples() {
        let c = Scheduler::Constant { eps0: 0.1 };
        assert_eq!(gradient_scheduler(0, &c), 0.1);
        assert_eq!(gradient_scheduler(1000, &c), 0.1);
        let e = Scheduler::ExpDecay { eps0: 0.1, decay: 0.9 };
        assert!((gradient_scheduler(2, &e) - 0.081).abs() < 1e-15);
        let s = Scheduler::Step { eps0: 0.4, step_len: 10 };
        assert_eq!(gradient_scheduler(25, &s), 0.1);
        assert_eq!(gradient_scheduler(9, &s), 0.4);
        assert!(gradient_scheduler(5000, &e) > 0.0);
    }

    #[test]
    fn normalize_examples() {
        let (v, c) = normalize_power(&[2.0, 0.0], 2, 1.0).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((v[0] - std::f64::consts::SQRT_2).abs() < 1e-15 && v[1] == 0.0);
        let s = [1.0, -1.0, 1.0];
        assert_eq!(normalize_power(&s, 3, 1.0).unwrap(), (s.to_vec(), 1.0));
        assert!(matches!(normalize_power(&[0.0; 4], 4, 1.0), Err(AttackError::ZeroVector)));
    }

    proptest! {
        #[test]
        fn normalized_power_is_exact(s in prop::collection::vec(-5.0f64..5.0, 1..40), p in 0.1f64..4.0) {
            prop_assume!(s.iter().any(|v| v.abs() > 1e-3));
            let (v, _) = normalize_power(&s, s.len(), p).unwrap();
            let e: f64 = v.iter().map(|x| x * x).sum();
            prop_assert!((e / (s.len() as f64 * p) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn attacked_word_keeps_power(bits in prop::collection::vec(0u8..2, 2..20usize).prop_filter("even", |b| b.len() % 2 == 0),
                                     a in prop::collection::vec(-0.5f64..0.5, 20), qam in any::<bool>()) {
            let c = Constellation::new(if qam { Scheme::Qam4 } else { Scheme::Bpsk });
            let s = c.modulate(&bits).unwrap();
            let out = apply_attack(&s, &a[..s.len()], &c).unwrap();
            let e: f64 = out.iter().map(|x| x * x).sum();
            let n_sym = c.symbols_for(bits.len()).unwrap() as f64;
            prop_assert!((e / n_sym - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_attack_is_noop() {
        for scheme in [Scheme::Bpsk, Scheme::Qam4] {
            let c = Constellation::new(scheme);
            let s = c.modulate(&[0, 1, 1, 0, 1, 1]).unwrap();
            assert_eq!(apply_attack(&s, &[0.0; 6], &c).unwrap(), s);
        }
    }

    #[test]
    fn bpsk_attack_enters_with_codeword_sign() {
        let c = Constellation::new(Scheme::Bpsk);
        let a = [0.2, -0.1, 0.05, 0.0];
        // All-zero word: out = s + a before normalization.
        let zero = apply_attack(&[1.0; 4], &a, &c).unwrap();
        let raw: Vec<f64> = a.iter().map(|v| 1.0 + v).collect();
        assert_eq!(zero, normalize_power(&raw, 4, 1.0).unwrap().0);
        let s = [-1.0, 1.0, -1.0, 1.0];
        let out = apply_attack(&s, &a, &c).unwrap();
        let raw = [-1.0 - 0.2, 1.0 - 0.1, -1.0 - 0.05, 1.0];
        assert_eq!(out, normalize_power(&raw, 4, 1.0).unwrap().0);
    }

    #[test]
    fn qam_attack_rotates_with_symbol() {
        // For s = s0 the adaptation is plain addition.
        let c = Constellation::new(Scheme::Qam4);
        let s0 = c.modulate(&[0, 0]).unwrap();
        let a = [0.1, -0.05];
        let out = apply_attack(&s0, &a, &c).unwrap();
        let want = normalize_power(&[s0[0] + a[0], s0[1] + a[1]], 1, 1.0).unwrap().0;
        assert!(out.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-15));
        // For s = −s0 (bits 11) the perturbation is negated.
        let s = c.modulate(&[1, 1]).unwrap();
        let out = apply_attack(&s, &a, &c).unwrap();
        let want = normalize_power(&[s[0] - a[0], s[1] - a[1]], 1, 1.0).unwrap().0;
        assert!(out.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-15));
    }

    #[test]
    fn mismatches_are_errors() {
        let c = Constellation::new(Scheme::Bpsk);
        assert!(matches!(apply_attack(&[1.0; 4], &[0.1; 3], &c), Err(AttackError::LengthMismatch { .. })));
        let v = AttackVector::zero("x", Scheme::Qam4, 4);
        assert!(matches!(
            apply_attack_vector(&[1.0; 4], &v, &c),
            Err(AttackError::SchemeMismatch { .. })
        ));
    }

    #[test]
    fn json_roundtrip_and_unknown_fields() {
        let mut v = AttackVector::zero("ldpc-64-32", Scheme::Qam4, 4);
        v.a = vec![0.1, -1.0 / 3.0, 1e-300, 2.5];
        v.approach = "1".into();
        let text = v.to_json().unwrap();
        assert!(text.contains("\"N\": 2"));
        assert_eq!(AttackVector::from_json(&text).unwrap(), v);
        let extra = text.replacen('{', "{\n  \"note\": \"hello\",", 1);
        assert_eq!(AttackVector::from_json(&extra).unwrap(), v);
        let bad = text.replace("\"n\": 4", "\"n\": 6");
        assert!(AttackVector::from_json(&bad).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SearchConfig::approach(1, 0.8).unwrap();
        assert_eq!((cfg.batch_size, cfg.iterations, cfg.max_trials), (2000, 50, 1000));
        cfg.validate().unwrap();
        cfg.max_trials = 10;
        assert!(cfg.validate().is_err());
        assert!(SearchConfig::approach(5, 0.8).is_err());
        for n in 1..=4 {
            SearchConfig::approach(n, 0.8).unwrap().validate().unwrap();
        }
        assert!(AcceptRule::Both.improved((5, 3), (4, 2)));
        assert!(!AcceptRule::Both.improved((5, 3), (4, 3)));
        assert!(!AcceptRule::Ber.improved((5, 3), (5, 0)));
        assert!(AcceptRule::Bler.improved((5, 3), (9, 2)));
    }
}
