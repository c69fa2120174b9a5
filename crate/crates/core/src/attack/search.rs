//! Gradient search for friendly attacks and the multi-run regimes.

use rayon::prelude::*;

use super::{
    cluster_attacks, gradient_scheduler, normalize_power, now, AttackError, AttackVector,
    ClusterMethod, SearchConfig, FORMAT_VERSION,
};
use crate::bp::{self, BpConfig};
use crate::channel::{self, derive_seed, ChannelParams, FrameRng, Realization};
use crate::eval::{self, FrameOutcome, Link, MessageSource, MonteCarloResult, PointSpec};

/// One trial of the search loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    /// Accepted updates before this trial.
    pub iteration: usize,
    pub eps: f64,
    /// Batch `(bit_errors, block_errors)` before and after the update.
    pub before: (u64, u64),
    pub after: (u64, u64),
    pub batch_bits: u64,
    pub accepted: bool,
}

impl TrialRecord {
    pub fn ber_before(&self) -> f64 {
        self.before.0 as f64 / self.batch_bits as f64
    }

    pub fn ber_after(&self) -> f64 {
        self.after.0 as f64 / self.batch_bits as f64
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub vector: AttackVector,
    pub trace: Vec<TrialRecord>,
}

struct Lane {
    realization: Realization,
    errors: (u64, u64),
    grad: Vec<f64>,
}

fn count(link: &Link, hard: &[u8]) -> (u64, u64) {
    let m = link.code.extract_message(hard);
    let o = FrameOutcome::compare(&vec![0; link.code.k], &m);
    (o.bit_errors, o.block_error as u64)
}

fn lane_gradient(
    link: &Link,
    cfg: &SearchConfig,
    params: &ChannelParams,
    s: &[f64],
    target: &[u8],
    rng: &FrameRng,
    trial: usize,
    lane: usize,
) -> Result<Lane, AttackError> {
    let realization = channel::sample(s.len(), &link.constellation, params, rng);
    let y = realization.apply(s);
    let side = params.receiver_side(&realization)?;
    let llr = link.constellation.demodulate_llr(&y, &side)?;
    let out = bp::bp_forward(&llr, &link.graph, link.decoder.iters.max(1), link.decoder.clamp)?;
    let errors = count(link, &out.hard);
    let (_, dl) = bp::bp_backward(&out, &link.graph, target, cfg.loss)?;
    let dy = link.constellation.demodulate_adjoint(&dl, &side)?;
    let grad: Vec<f64> = dy
        .iter()
        .enumerate()
        .map(|(i, g)| g * realization.input_gain(i))
        .collect();
    if let Some(coord) = grad.iter().position(|g| !g.is_finite()) {
        return Err(AttackError::NonFiniteGradient { trial, lane, coord });
    }
    Ok(Lane {
        realization,
        errors,
        grad,
    })
}

fn redecode(
    link: &Link,
    params: &ChannelParams,
    decoder: &BpConfig,
    s: &[f64],
    realization: &Realization,
) -> Result<(u64, u64), AttackError> {
    let y = realization.apply(s);
    let side = params.receiver_side(realization)?;
    let llr = link.constellation.demodulate_llr(&y, &side)?;
    Ok(count(link, &bp::decode(&llr, &link.graph, decoder)?.hard))
}

/// Searches a friendly attack on the modulated all-zero codeword.
///
/// Each trial draws `B` noise realizations, averages the per-sample
/// gradients of the decoder loss with respect to the transmitted word, and
/// keeps the step `−ε·mean` only if it strictly improves the configured
/// batch error count on the same realizations. Accepted words are
/// renormalized to unit power per symbol.
pub fn search_attack(
    link: &Link,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<SearchOutcome, AttackError> {
    cfg.validate()?;
    let n = link.code.n;
    let symbols = link.symbols();
    let params = link.channel.at_sigma(cfg.sigma)?;
    let target = vec![0u8; n];
    let s_orig = link.constellation.modulate(&target)?;
    let mut s = s_orig.clone();
    let decoder = BpConfig {
        early_stop: false,
        ..link.decoder
    };
    let batch = cfg.batch_size;
    let batch_bits = (batch * link.code.k) as u64;
    let mut accepted = 0;
    let mut trace = Vec::new();

    for trial in 0..cfg.max_trials {
        if accepted == cfg.iterations {
            break;
        }
        let eps = gradient_scheduler(accepted, &cfg.scheduler);
        let base = (trial * batch) as u64;
        let lanes = (0..batch)
            .into_par_iter()
            .map(|j| {
                let rng = FrameRng::new(seed, base + j as u64);
                lane_gradient(link, cfg, &params, &s, &target, &rng, trial, j)
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut mean = vec![0.0; n];
        let mut before = (0, 0);
        for lane in &lanes {
            for (m, g) in mean.iter_mut().zip(&lane.grad) {
                *m += g;
            }
            before.0 += lane.errors.0;
            before.1 += lane.errors.1;
        }
        let candidate: Vec<f64> = s
            .iter()
            .zip(&mean)
            .map(|(si, g)| si - eps * g / batch as f64)
            .collect();

        let after = lanes
            .par_iter()
            .map(|lane| redecode(link, &params, &decoder, &candidate, &lane.realization))
            .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;

        let ok = cfg.accept.improved(before, after);
        let record = TrialRecord {
            trial,
            iteration: accepted,
            eps,
            before,
            after,
            batch_bits,
            accepted: ok,
        };
        log::debug!(
            "trial {trial} eps {eps:.4e} ber {:.5e} -> {:.5e} {}",
            record.ber_before(),
            record.ber_after(),
            if ok { "accept" } else { "reject" }
        );
        trace.push(record);
        if ok {
            s = normalize_power(&candidate, symbols, 1.0)?.0;
            accepted += 1;
        }
    }

    let a: Vec<f64> = if accepted == 0 {
        vec![0.0; n]
    } else {
        s.iter().zip(&s_orig).map(|(x, y)| x - y).collect()
    };
    Ok(SearchOutcome {
        vector: AttackVector {
            version: FORMAT_VERSION,
            code_id: link.code.name.clone(),
            scheme: link.scheme(),
            n,
            symbols,
            a,
            search_sigma: cfg.sigma,
            seed,
            approach: String::new(),
            accepted_iters: accepted,
            created: now(),
        },
        trace,
    })
}

/// Eb/N0 at which the baseline BLER is about `target`, by bisection over a
/// coarse Monte Carlo with common random numbers across probes.
pub fn calibrate_ebn0(
    link: &Link,
    target: f64,
    frames: u64,
    seed: u64,
) -> Result<f64, AttackError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(AttackError::Config(format!("target BLER {target} not in (0, 1)")));
    }
    let (mut lo, mut hi) = (-20.0f64, 20.0f64);
    let mut spec = PointSpec::new(0.0, frames, seed);
    spec.source = MessageSource::AllZero;
    let mut best = (f64::INFINITY, 0.5 * (lo + hi));
    for _ in 0..16 {
        let mid = 0.5 * (lo + hi);
        spec.ebn0_db = mid;
        let r = eval::run_point(link, &spec, None)?;
        log::debug!("calibration: {mid:.3} dB -> BLER {:.4}", r.bler);
        if (r.bler - target).abs() < best.0 {
            best = ((r.bler - target).abs(), mid);
        }
        if r.bler > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best.1)
}

/// Repeats the search `cfg.runs` times with derived seeds. Zero results are
/// kept and tagged.
pub fn run_regime(
    link: &Link,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<Vec<AttackVector>, AttackError> {
    if cfg.runs < 2 {
        return Err(AttackError::Config("a regime needs at least two runs".into()));
    }
    (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            let mut v = search_attack(link, cfg, derive_seed(seed, r as u64))?.vector;
            v.approach = format!("run-{r}{}", if v.is_zero() { "-zero" } else { "" });
            Ok(v)
        })
        .collect()
}

/// Validation settings for choosing among candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub ebn0_db: f64,
    pub frames: u64,
    pub seed: u64,
    pub workers: usize,
}

/// Evaluates every candidate on the same random codewords and noise; returns
/// the index with the lowest BER (then BLER, then index) and all results.
pub fn select_best(
    link: &Link,
    candidates: &[AttackVector],
    sel: &Selection,
) -> Result<(usize, Vec<MonteCarloResult>), AttackError> {
    if candidates.is_empty() {
        return Err(AttackError::NoCandidates);
    }
    let mut spec = PointSpec::new(sel.ebn0_db, sel.frames, sel.seed);
    spec.workers = sel.workers;
    let results = candidates
        .iter()
        .map(|c| eval::run_point(link, &spec, Some(c)))
        .collect::<Result<Vec<_>, _>>()?;
    let best = (0..results.len())
        .min_by(|&i, &j| {
            let (a, b) = (&results[i], &results[j]);
            a.bit_errors
                .cmp(&b.bit_errors)
                .then(a.block_errors.cmp(&b.block_errors))
                .then(i.cmp(&j))
        })
        .unwrap();
    Ok((best, results))
}

#[derive(Debug, Clone)]
pub struct ApproachOutcome {
    pub chosen: AttackVector,
    /// Single-run trace; empty for multi-run regimes.
    pub trace: Vec<TrialRecord>,
    pub candidates: Vec<AttackVector>,
    pub validation: Vec<MonteCarloResult>,
}

/// Runs a configured approach end to end: a single search, or several runs
/// followed by clustering of the nonzero results and validation.
pub fn run_approach(
    link: &Link,
    cfg: &SearchConfig,
    seed: u64,
    tag: &str,
    sel: &Selection,
) -> Result<ApproachOutcome, AttackError> {
    if cfg.runs == 1 {
        let mut out = search_attack(link, cfg, seed)?;
        out.vector.approach = tag.into();
        return Ok(ApproachOutcome {
            chosen: out.vector,
            trace: out.trace,
            candidates: Vec::new(),
            validation: Vec::new(),
        });
    }
    let runs = run_regime(link, cfg, seed)?;
    let nonzero: Vec<&AttackVector> = runs.iter().filter(|v| !v.is_zero()).collect();
    log::info!("{} of {} runs produced a nonzero attack", nonzero.len(), runs.len());
    let mut zero = AttackVector::zero(&link.code.name, link.scheme(), link.code.n);
    zero.search_sigma = cfg.sigma;
    zero.seed = seed;
    zero.approach = tag.into();
    if nonzero.is_empty() {
        return Ok(ApproachOutcome {
            chosen: zero,
            trace: Vec::new(),
            candidates: runs,
            validation: Vec::new(),
        });
    }
    let method = match cfg.cluster {
        ClusterMethod::KMeans { k } if k > nonzero.len() => {
            log::warn!("only {} nonzero runs; using k = {}", nonzero.len(), nonzero.len());
            ClusterMethod::KMeans { k: nonzero.len() }
        }
        ClusterMethod::Agglomerative { linkage, k } if k > nonzero.len() => {
            log::warn!("only {} nonzero runs; using k = {}", nonzero.len(), nonzero.len());
            ClusterMethod::Agglomerative {
                linkage,
                k: nonzero.len(),
            }
        }
        m => m,
    };
    let vectors: Vec<Vec<f64>> = nonzero.iter().map(|v| v.a.clone()).collect();
    let accepted: usize = nonzero.iter().map(|v| v.accepted_iters).sum();
    let candidates: Vec<AttackVector> = cluster_attacks(&vectors, method, seed)?
        .into_iter()
        .enumerate()
        .map(|(i, a)| AttackVector {
            a,
            approach: format!("{tag}/candidate-{i}"),
            accepted_iters: accepted,
            ..zero.clone()
        })
        .collect();
    let (best, validation) = select_best(link, &candidates, sel)?;
    for (i, r) in validation.iter().enumerate() {
        log::info!("candidate {i}: BER {:.5e} BLER {:.5e}", r.ber, r.bler);
    }
    Ok(ApproachOutcome {
        chosen: candidates[best].clone(),
        trace: Vec::new(),
        candidates,
        validation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{Scheduler, AcceptRule};
    use crate::bp::LossMode;
    use crate::codes::CodeSpec;
    use crate::eval::ChannelModel;
    use crate::modem::Scheme;

    fn rep_link() -> Link {
        Link::new(
            CodeSpec::repetition(3).unwrap(),
            BpConfig::new(2),
            Scheme::Bpsk,
            ChannelModel::Awgn,
        )
        .unwrap()
    }

    fn small_cfg(sigma: f64) -> SearchConfig {
        SearchConfig {
            batch_size: 64,
            iterations: 5,
            max_trials: 40,
            sigma,
            scheduler: Scheduler::Constant { eps0: 0.5 },
            accept: AcceptRule::Ber,
            loss: LossMode::Final,
            runs: 1,
            cluster: ClusterMethod::None,
        }
    }

    #[test]
    fn tiny_noise_gives_zero_attack() {
        let link = rep_link();
        let out = search_attack(&link, &small_cfg(1e-6), 1).unwrap();
        assert!(out.vector.is_zero());
        assert_eq!(out.vector.accepted_iters, 0);
        assert_eq!(out.trace.len(), 40);
        assert!(out.trace.iter().all(|t| t.before == (0, 0) && !t.accepted));
    }

    #[test]
    fn search_is_deterministic_and_accepts_only_improvements() {
        let link = rep_link();
        let cfg = small_cfg(1.0);
        let a = search_attack(&link, &cfg, 11).unwrap();
        let b = search_attack(&link, &cfg, 11).unwrap();
        assert_eq!(a.vector.a, b.vector.a);
        assert_eq!(a.trace, b.trace);
        for t in &a.trace {
            assert_eq!(t.accepted, t.after.0 < t.before.0);
        }
        let s: Vec<f64> = a.vector.a.iter().map(|v| 1.0 + v).collect();
        let e: f64 = s.iter().map(|v| v * v).sum();
        assert!((e / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regime_is_reproducible() {
        let link = rep_link();
        let mut cfg = small_cfg(1.0);
        cfg.runs = 3;
        let a = run_regime(&link, &cfg, 5).unwrap();
        assert_eq!(a.len(), 3);
        let b = run_regime(&link, &cfg, 5).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.a == y.a && x.approach == y.approach));
        cfg.runs = 1;
        assert!(run_regime(&link, &cfg, 5).is_err());
    }

    #[test]
    fn select_best_prefers_the_better_candidate() {
        let link = rep_link();
        let zero = AttackVector::zero(&link.code.name, Scheme::Bpsk, 3);
        // Starving one coordinate of power is strictly harmful.
        let mut bad = zero.clone();
        bad.a = vec![-0.9, 0.3, 0.3];
        let sel = Selection {
            ebn0_db: 2.0,
            frames: 20_000,
            seed: 3,
            workers: 0,
        };
        let (i, r) = select_best(&link, &[bad.clone(), zero.clone()], &sel).unwrap();
        assert_eq!(i, 1);
        assert!(r[0].ber > r[1].ber);
        let (i, _) = select_best(&link, &[zero.clone(), bad], &sel).unwrap();
        assert_eq!(i, 0);
        let (i, _) = select_best(&link, &[zero], &sel).unwrap();
        assert_eq!(i, 0);
        assert!(matches!(select_best(&link, &[], &sel), Err(AttackError::NoCandidates)));
    }

    #[test]
    fn calibration_lands_near_target() {
        let link = rep_link();
        let ebn0 = calibrate_ebn0(&link, 0.3, 4000, 2).unwrap();
        let r = eval::run_point(&link, &PointSpec::new(ebn0, 20_000, 99), None).unwrap();
        assert!((r.bler - 0.3).abs() < 0.03, "{} at {ebn0}", r.bler);
    }

    #[test]
    fn multi_run_approach_returns_a_candidate() {
        let link = rep_link();
        let mut cfg = small_cfg(1.0);
        cfg.runs = 6;
        cfg.cluster = ClusterMethod::KMeans { k: 2 };
        let sel = Selection {
            ebn0_db: link.ebn0_at(1.0),
            frames: 2000,
            seed: 8,
            workers: 0,
        };
        let out = run_approach(&link, &cfg, 4, "3", &sel).unwrap();
        assert!(!out.candidates.is_empty());
        assert_eq!(out.validation.len(), out.candidates.len());
        assert!(out.chosen.approach.starts_with("3/candidate-"));
    }
}
