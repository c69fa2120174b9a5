//! Seeded Monte Carlo measurement of BER/BLER.
//!
//! Every frame draws its message and channel from [`FrameRng`]`(seed, i)`,
//! so counts are bit-identical for any worker count, and a baseline and an
//! attacked run with the same seed see the same messages and noise.

use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{self, AttackError, AttackVector};
use crate::bp::{self, BpConfig, BpError, TannerGraph};
use crate::channel::{self, ChannelError, ChannelKind, ChannelParams, FrameRng, Lane};
use crate::codes::CodeSpec;
use crate::modem::{Constellation, ModemError, Scheme};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("attack was searched for {attack} but the link is {link}")]
    AttackMismatch { attack: String, link: String },
    #[error("frame count must be at least 1")]
    NoFrames,
    #[error("empty Eb/N0 grid")]
    EmptyGrid,
    #[error("could not build a worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Modem(#[from] ModemError),
    #[error(transparent)]
    Decoder(#[from] BpError),
    #[error(transparent)]
    Attack(#[from] Box<AttackError>),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<AttackError> for EvalError {
    fn from(e: AttackError) -> Self {
        EvalError::Attack(Box::new(e))
    }
}

/// Channel family with noise-relative parameters, instantiated per σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelModel {
    Awgn,
    Rayleigh { si: bool },
    /// Burst std given as a multiple of the Gaussian σ.
    Bursty { sigma_b_ratio: f64, rho: f64 },
}

impl ChannelModel {
    pub fn at_sigma(&self, sigma: f64) -> Result<ChannelParams, ChannelError> {
        let kind = match *self {
            ChannelModel::Awgn => ChannelKind::Awgn,
            ChannelModel::Rayleigh { si } => ChannelKind::Rayleigh { si },
            ChannelModel::Bursty { sigma_b_ratio, rho } => ChannelKind::Bursty {
                sigma_b: sigma_b_ratio * sigma,
                rho,
            },
        };
        ChannelParams::new(kind, sigma)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ChannelModel::Awgn => "awgn",
            ChannelModel::Rayleigh { si: true } => "rayleigh-si",
            ChannelModel::Rayleigh { si: false } => "rayleigh",
            ChannelModel::Bursty { .. } => "bursty",
        }
    }
}

/// The simulated chain: encoder, modulator, channel, demapper, BP decoder.
#[derive(Debug, Clone)]
pub struct Link {
    pub code: CodeSpec,
    pub graph: TannerGraph,
    pub decoder: BpConfig,
    pub constellation: Constellation,
    pub channel: ChannelModel,
}

impl Link {
    pub fn new(
        code: CodeSpec,
        decoder: BpConfig,
        scheme: Scheme,
        channel: ChannelModel,
    ) -> Result<Self, EvalError> {
        let constellation = Constellation::new(scheme);
        constellation.symbols_for(code.n)?;
        if channel == (ChannelModel::Rayleigh { si: false }) {
            return Err(ChannelError::NoSideInformation.into());
        }
        let graph = TannerGraph::from_parity(&code.h);
        Ok(Self {
            code,
            graph,
            decoder,
            constellation,
            channel,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.constellation.scheme
    }

    /// Number of (complex) channel symbols per codeword.
    pub fn symbols(&self) -> usize {
        self.code.n / self.constellation.bits_per_symbol()
    }

    pub fn sigma_at(&self, ebn0_db: f64) -> Result<f64, ChannelError> {
        channel::ebn0_to_sigma(
            ebn0_db,
            self.code.rate(),
            self.constellation.bits_per_symbol(),
        )
    }

    pub fn ebn0_at(&self, sigma: f64) -> f64 {
        channel::sigma_to_ebn0(sigma, self.code.rate(), self.constellation.bits_per_symbol())
    }

    pub fn params_at(&self, ebn0_db: f64) -> Result<ChannelParams, ChannelError> {
        self.channel.at_sigma(self.sigma_at(ebn0_db)?)
    }

    fn check_attack(&self, a: &AttackVector) -> Result<(), EvalError> {
        if a.scheme != self.scheme() || a.n != self.code.n || a.a.len() != self.code.n {
            return Err(EvalError::AttackMismatch {
                attack: format!("{} {} n={}", a.code_id, a.scheme, a.n),
                link: format!("{} {} n={}", self.code.name, self.scheme(), self.code.n),
            });
        }
        Ok(())
    }

    pub fn message(&self, source: MessageSource, rng: &FrameRng) -> Vec<u8> {
        match source {
            MessageSource::AllZero => vec![0; self.code.k],
            MessageSource::Random => {
                use rand::Rng;
                let mut r = rng.lane(Lane::Message);
                (0..self.code.k).map(|_| r.random::<bool>() as u8).collect()
            }
        }
    }

    /// The transmitted (attacked and power-normalized) word for `message`.
    pub fn transmit_word(
        &self,
        message: &[u8],
        attack: Option<&[f64]>,
    ) -> Result<(Vec<u8>, Vec<f64>), EvalError> {
        let x = self.code.encode(message).expect("message has length k");
        let s = self.constellation.modulate(&x)?;
        let s = match attack {
            Some(a) => attack::apply_attack(&s, a, &self.constellation)?,
            None => s,
        };
        Ok((x, s))
    }

    /// Receives `s` through `realization` and decodes to a codeword estimate.
    pub fn receive(
        &self,
        s: &[f64],
        params: &ChannelParams,
        realization: &channel::Realization,
    ) -> Result<Vec<u8>, EvalError> {
        let y = realization.apply(s);
        let side = params.receiver_side(realization)?;
        let llr = self.constellation.demodulate_llr(&y, &side)?;
        Ok(bp::decode(&llr, &self.graph, &self.decoder)?.hard)
    }

    /// One Monte Carlo frame.
    pub fn frame(
        &self,
        params: &ChannelParams,
        attack: Option<&[f64]>,
        source: MessageSource,
        rng: &FrameRng,
    ) -> Result<FrameOutcome, EvalError> {
        let m = self.message(source, rng);
        let (_, s) = self.transmit_word(&m, attack)?;
        let realization = channel::sample(s.len(), &self.constellation, params, rng);
        let hard = self.receive(&s, params, &realization)?;
        Ok(FrameOutcome::compare(&m, &self.code.extract_message(&hard)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MessageSource {
    AllZero,
    #[default]
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameOutcome {
    pub bit_errors: u64,
    pub block_error: bool,
}

impl FrameOutcome {
    pub fn compare(sent: &[u8], decoded: &[u8]) -> Self {
        let bit_errors = sent.iter().zip(decoded).filter(|(a, b)| a != b).count() as u64;
        Self {
            bit_errors,
            block_error: bit_errors > 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Counts {
    frames: u64,
    bit_errors: u64,
    block_errors: u64,
}

impl Counts {
    fn add(self, o: Counts) -> Counts {
        Counts {
            frames: self.frames + o.frames,
            bit_errors: self.bit_errors + o.bit_errors,
            block_errors: self.block_errors + o.block_errors,
        }
    }
}

/// Aggregated result of one operating point; also one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub ebn0_db: f64,
    pub frames: u64,
    pub bit_errors: u64,
    pub block_errors: u64,
    pub ber: f64,
    pub bler: f64,
    pub ci95_ber: f64,
    pub ci95_bler: f64,
    /// 1 when an attack was applied.
    pub attacked: u8,
    pub code_id: String,
    pub decoder: String,
    pub iters: usize,
    pub scheme: String,
    pub channel: String,
    pub seed: u64,
}

/// Normal-approximation 95% half-width for a proportion over `trials`.
pub fn ci95(p: f64, trials: f64) -> f64 {
    1.96 * (p * (1.0 - p) / trials).sqrt()
}

impl MonteCarloResult {
    fn from_counts(link: &Link, ebn0_db: f64, c: Counts, attacked: bool, seed: u64) -> Self {
        let bits = (c.frames * link.code.k as u64) as f64;
        let ber = c.bit_errors as f64 / bits;
        let bler = c.block_errors as f64 / c.frames as f64;
        Self {
            ebn0_db,
            frames: c.frames,
            bit_errors: c.bit_errors,
            block_errors: c.block_errors,
            ber,
            bler,
            ci95_ber: ci95(ber, bits),
            ci95_bler: ci95(bler, c.frames as f64),
            attacked: attacked as u8,
            code_id: link.code.name.clone(),
            decoder: "bp".into(),
            iters: link.decoder.iters,
            scheme: link.scheme().to_string(),
            channel: link.channel.name().into(),
            seed,
        }
    }

    /// True when the two 95% intervals on BER do not overlap.
    pub fn ber_separated_from(&self, other: &MonteCarloResult) -> bool {
        (self.ber - other.ber).abs() > self.ci95_ber + other.ci95_ber
    }
}

/// Settings of one Monte Carlo point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSpec {
    pub ebn0_db: f64,
    /// Frame cap.
    pub frames: u64,
    pub seed: u64,
    pub source: MessageSource,
    /// Stop at the first batch boundary with at least this many block
    /// errors. Batches have a fixed size, so the result is still
    /// independent of the worker count.
    pub min_block_errors: Option<u64>,
    pub workers: usize,
}

impl PointSpec {
    pub fn new(ebn0_db: f64, frames: u64, seed: u64) -> Self {
        Self {
            ebn0_db,
            frames,
            seed,
            source: MessageSource::Random,
            min_block_errors: None,
            workers: 0,
        }
    }
}

const BATCH: u64 = 8192;

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, EvalError> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs one operating point (early-stopping decoder, exact integer counts).
pub fn run_point(
    link: &Link,
    spec: &PointSpec,
    attack: Option<&AttackVector>,
) -> Result<MonteCarloResult, EvalError> {
    if spec.frames == 0 {
        return Err(EvalError::NoFrames);
    }
    if let Some(a) = attack {
        link.check_attack(a)?;
    }
    let params = link.params_at(spec.ebn0_db)?;
    let a = attack.map(|a| a.a.as_slice());
    let counts = with_workers(spec.workers, || -> Result<Counts, EvalError> {
        let mut total = Counts::default();
        let mut start = 0;
        while start < spec.frames {
            let end = (start + BATCH).min(spec.frames);
            let batch = (start..end)
                .into_par_iter()
                .map(|i| {
                    let o = link.frame(&params, a, spec.source, &FrameRng::new(spec.seed, i))?;
                    Ok::<_, EvalError>(Counts {
                        frames: 1,
                        bit_errors: o.bit_errors,
                        block_errors: o.block_error as u64,
                    })
                })
                .try_reduce(Counts::default, |x, y| Ok(x.add(y)))?;
            total = total.add(batch);
            start = end;
            if spec.min_block_errors.is_some_and(|m| total.block_errors >= m) {
                break;
            }
        }
        Ok(total)
    })??;
    Ok(MonteCarloResult::from_counts(
        link,
        spec.ebn0_db,
        counts,
        attack.is_some(),
        spec.seed,
    ))
}

/// Seed of grid point `index`; point 0 uses the base seed.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs `run_point` over an Eb/N0 grid (sorted ascending). Attacked and
/// baseline sweeps with the same seed share messages and noise per point.
pub fn sweep(
    link: &Link,
    grid: &[f64],
    shared: &PointSpec,
    attack: Option<&AttackVector>,
) -> Result<Vec<MonteCarloResult>, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.iter()
        .enumerate()
        .map(|(i, &ebn0_db)| {
            let spec = PointSpec {
                ebn0_db,
                seed: point_seed(shared.seed, i),
                ..*shared
            };
            run_point(link, &spec, attack)
        })
        .collect()
}

/// Outcome of checking that an all-zero-codeword attack transfers to random
/// codewords.
#[derive(Debug, Clone, PartialEq)]
pub enum TransferReport {
    /// BPSK on AWGN: error counts compared frame by frame under sign-coupled
    /// noise.
    Exact {
        frames: u64,
        all_zero: (u64, u64),
        random: (u64, u64),
        mismatched_frames: u64,
    },
    /// Other links: BER of both legs with 95% intervals.
    Statistical {
        all_zero: MonteCarloResult,
        random: MonteCarloResult,
    },
}

impl TransferReport {
    pub fn passed(&self) -> bool {
        match self {
            TransferReport::Exact {
                all_zero,
                random,
                mismatched_frames,
                ..
            } => *mismatched_frames == 0 && all_zero == random,
            TransferReport::Statistical { all_zero, random } => {
                (all_zero.ber - random.ber).abs() < all_zero.ci95_ber + random.ci95_ber
            }
        }
    }
}

/// Compares the attack on the all-zero word against its sign-adapted
/// version on random codewords.
pub fn transfer_check(
    link: &Link,
    attack: &AttackVector,
    ebn0_db: f64,
    frames: u64,
    seed: u64,
) -> Result<TransferReport, EvalError> {
    link.check_attack(attack)?;
    if frames == 0 {
        return Err(EvalError::NoFrames);
    }
    let params = link.params_at(ebn0_db)?;
    if link.scheme() == Scheme::Bpsk && link.channel == ChannelModel::Awgn {
        let zero_msg = vec![0u8; link.code.k];
        let (_, s_zero) = link.transmit_word(&zero_msg, Some(&attack.a))?;
        let per_frame = (0..frames)
            .into_par_iter()
            .map(|i| -> Result<(FrameOutcome, FrameOutcome), EvalError> {
                let rng = FrameRng::new(seed, i);
                let base = channel::sample(s_zero.len(), &link.constellation, &params, &rng);
                let hard = link.receive(&s_zero, &params, &base)?;
                let zero = FrameOutcome::compare(&zero_msg, &link.code.extract_message(&hard));

                let m = link.message(MessageSource::Random, &rng);
                let (x, s) = link.transmit_word(&m, Some(&attack.a))?;
                let signs: Vec<f64> = x.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect();
                let coupled = base.sign_coupled(&signs);
                let hard = link.receive(&s, &params, &coupled)?;
                let random = FrameOutcome::compare(&m, &link.code.extract_message(&hard));
                Ok((zero, random))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let sum = |pick: fn(&(FrameOutcome, FrameOutcome)) -> FrameOutcome| {
            per_frame.iter().map(pick).fold((0, 0), |(b, k), o| {
                (b + o.bit_errors, k + o.block_error as u64)
            })
        };
        Ok(TransferReport::Exact {
            frames,
            all_zero: sum(|p| p.0),
            random: sum(|p| p.1),
            mismatched_frames: per_frame.iter().filter(|(a, b)| a != b).count() as u64,
        })
    } else {
        let mut spec = PointSpec::new(ebn0_db, frames, seed);
        spec.source = MessageSource::AllZero;
        let all_zero = run_point(link, &spec, Some(attack))?;
        spec.source = MessageSource::Random;
        let random = run_point(link, &spec, Some(attack))?;
        Ok(TransferReport::Statistical { all_zero, random })
    }
}

/// Writes results as CSV with a header row.
pub fn write_csv<W: io::Write>(w: W, rows: &[MonteCarloResult]) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(r: R) -> Result<Vec<MonteCarloResult>, EvalError> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<Result<Vec<_>, _>>()?)
}
