//! Channel simulation (AWGN, Rayleigh fading, bursty AWGN) and the
//! per-frame random streams that keep Monte Carlo runs reproducible under
//! any degree of parallelism.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::modem::{ChannelSide, Constellation};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("noise std must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("bursty noise needs sigma_b > 0 and rho in [0, 1] (got sigma_b = {sigma_b}, rho = {rho})")]
    BadBurst { sigma_b: f64, rho: f64 },
    #[error("code rate must be in (0, 1], got {0}")]
    BadRate(f64),
    #[error("bits per symbol must be 1 or 2, got {0}")]
    BadBitsPerSymbol(usize),
    #[error("unknown channel kind {0:?}")]
    UnknownKind(String),
    #[error("the Rayleigh receiver without side information has no defined demapper")]
    NoSideInformation,
}

/// Independent random sub-streams of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Lane {
    Message = 1,
    Noise = 2,
    Fading = 3,
    Burst = 4,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a child index into a seed; used for per-run and per-point seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix(seed ^ splitmix(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Counter-based stream selector: the randomness of frame `i` depends only
/// on `(seed, i, lane)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRng {
    pub seed: u64,
    pub frame: u64,
}

impl FrameRng {
    pub fn new(seed: u64, frame: u64) -> Self {
        Self { seed, frame }
    }

    pub fn lane(&self, lane: Lane) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.seed ^ (lane as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
        for chunk in key.chunks_mut(8) {
            state = splitmix(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.frame);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelKind {
    Awgn,
    Rayleigh { si: bool },
    Bursty { sigma_b: f64, rho: f64 },
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelKind::Awgn => f.write_str("awgn"),
            ChannelKind::Rayleigh { si: true } => f.write_str("rayleigh-si"),
            ChannelKind::Rayleigh { si: false } => f.write_str("rayleigh"),
            ChannelKind::Bursty { .. } => f.write_str("bursty"),
        }
    }
}

/// Kind names accepted in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKindName {
    Awgn,
    Rayleigh,
    Bursty,
}

impl FromStr for ChannelKindName {
    type Err = ChannelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "awgn" => Ok(Self::Awgn),
            "rayleigh" => Ok(Self::Rayleigh),
            "bursty" => Ok(Self::Bursty),
            other => Err(ChannelError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub kind: ChannelKind,
    /// Noise std per real dimension.
    pub sigma: f64,
}

impl ChannelParams {
    pub fn awgn(sigma: f64) -> Result<Self, ChannelError> {
        Self::new(ChannelKind::Awgn, sigma)
    }

    pub fn new(kind: ChannelKind, sigma: f64) -> Result<Self, ChannelError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(ChannelError::BadSigma(sigma));
        }
        if let ChannelKind::Bursty { sigma_b, rho } = kind {
            if !(sigma_b > 0.0 && sigma_b.is_finite() && (0.0..=1.0).contains(&rho)) {
                return Err(ChannelError::BadBurst { sigma_b, rho });
            }
        }
        Ok(Self { kind, sigma })
    }

    /// Bursty channel with the default burst parameters `σ_b = 2σ`, `ρ = 0.1`.
    pub fn bursty_default(sigma: f64) -> Result<Self, ChannelError> {
        Self::new(
            ChannelKind::Bursty {
                sigma_b: 2.0 * sigma,
                rho: 0.1,
            },
            sigma,
        )
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self, ChannelError> {
        let kind = match self.kind {
            // Keep the burst-to-noise ratio when the operating point moves.
            ChannelKind::Bursty { sigma_b, rho } => ChannelKind::Bursty {
                sigma_b: sigma_b * sigma / self.sigma,
                rho,
            },
            k => k,
        };
        Self::new(kind, sigma)
    }

    /// The receiver's view of a realization, or an error when no demapper
    /// is defined for this channel.
    pub fn receiver_side(&self, realization: &Realization) -> Result<ChannelSide, ChannelError> {
        match self.kind {
            ChannelKind::Rayleigh { si: false } => Err(ChannelError::NoSideInformation),
            ChannelKind::Rayleigh { si: true } => Ok(ChannelSide {
                sigma: self.sigma,
                gains: realization.gains.clone(),
            }),
            _ => Ok(ChannelSide::awgn(self.sigma)),
        }
    }
}

/// `σ` per real dimension for unit symbol energy:
/// `σ = sqrt(1 / (2·R·b·10^(Eb/N0 / 10)))`.
pub fn ebn0_to_sigma(ebn0_db: f64, rate: f64, bits_per_symbol: usize) -> Result<f64, ChannelError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(ChannelError::BadRate(rate));
    }
    if !(1..=2).contains(&bits_per_symbol) {
        return Err(ChannelError::BadBitsPerSymbol(bits_per_symbol));
    }
    let ebn0 = 10f64.powf(ebn0_db / 10.0);
    Ok((1.0 / (2.0 * rate * bits_per_symbol as f64 * ebn0)).sqrt())
}

/// Inverse of [`ebn0_to_sigma`].
pub fn sigma_to_ebn0(sigma: f64, rate: f64, bits_per_symbol: usize) -> f64 {
    10.0 * (1.0 / (2.0 * rate * bits_per_symbol as f64 * sigma * sigma)).log10()
}

/// One draw of the channel's randomness, reusable against several inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    /// Additive noise per real coordinate (Gaussian plus burst component).
    pub noise: Vec<f64>,
    /// Per-symbol fading gains (Rayleigh only).
    pub gains: Option<Vec<f64>>,
    bits_per_symbol: usize,
}

impl Realization {
    /// Channel output `y = g·s + z (+ w)`.
    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        debug_assert_eq!(s.len(), self.noise.len());
        match &self.gains {
            None => s.iter().zip(&self.noise).map(|(a, z)| a + z).collect(),
            Some(g) => s
                .iter()
                .zip(&self.noise)
                .enumerate()
                .map(|(i, (a, z))| g[i / self.bits_per_symbol] * a + z)
                .collect(),
        }
    }

    /// `dy/ds` per real coordinate.
    pub fn input_gain(&self, coord: usize) -> f64 {
        self.gains
            .as_ref()
            .map_or(1.0, |g| g[coord / self.bits_per_symbol])
    }

    /// Maps `s ↦ t⊙s` for a sign pattern `t`, as needed to couple the noise
    /// of a codeword with that of the all-zero word.
    pub fn sign_coupled(&self, signs: &[f64]) -> Realization {
        Realization {
            noise: self.noise.iter().zip(signs).map(|(z, t)| z * t).collect(),
            gains: self.gains.clone(),
            bits_per_symbol: self.bits_per_symbol,
        }
    }
}

/// Draws the randomness for a word of `coords` real coordinates.
pub fn sample(
    coords: usize,
    constellation: &Constellation,
    params: &ChannelParams,
    rng: &FrameRng,
) -> Realization {
    let bps = constellation.bits_per_symbol();
    let mut noise_rng = rng.lane(Lane::Noise);
    let mut noise: Vec<f64> = (0..coords)
        .map(|_| params.sigma * noise_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut gains = None;
    match params.kind {
        ChannelKind::Awgn => {}
        ChannelKind::Rayleigh { .. } => {
            let mut r = rng.lane(Lane::Fading);
            let symbols = coords.div_ceil(bps);
            gains = Some(
                (0..symbols)
                    .map(|_| {
                        let a: f64 = r.sample(StandardNormal);
                        let b: f64 = r.sample(StandardNormal);
                        std::f64::consts::FRAC_1_SQRT_2 * a.hypot(b)
                    })
                    .collect(),
            );
        }
        ChannelKind::Bursty { sigma_b, rho } => {
            let mut r = rng.lane(Lane::Burst);
            for z in noise.iter_mut() {
                let hit = r.random::<f64>() < rho;
                let w: f64 = r.sample(StandardNormal);
                if hit {
                    *z += sigma_b * w;
                }
            }
        }
    }
    Realization {
        noise,
        gains,
        bits_per_symbol: bps,
    }
}

/// Sends `s` through the channel; returns the output and the realization
/// (whose `gains` are what a side-informed receiver sees).
pub fn transmit(
    s: &[f64],
    constellation: &Constellation,
    params: &ChannelParams,
    rng: &FrameRng,
) -> (Vec<f64>, Realization) {
    let r = sample(s.len(), constellation, params, rng);
    (r.apply(s), r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::Scheme;

    fn bpsk() -> Constellation {
        Constellation::new(Scheme::Bpsk)
    }

    fn many_frames(params: &ChannelParams, frames: u64, len: usize) -> Vec<Realization> {
        (0..frames)
            .map(|i| sample(len, &bpsk(), params, &FrameRng::new(11, i)))
            .collect()
    }

    #[test]
    fn ebn0_examples() {
        assert!((ebn0_to_sigma(0.0, 0.5, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!((ebn0_to_sigma(0.0, 1.0, 1).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for db in 0..60 {
            let s = ebn0_to_sigma(db as f64, 0.5, 2).unwrap();
            assert!(s < prev);
            prev = s;
        }
        assert!(prev < 1e-2);
        assert_eq!(ebn0_to_sigma(1.0, 0.0, 1), Err(ChannelError::BadRate(0.0)));
        let s = ebn0_to_sigma(3.3, 0.5, 2).unwrap();
        assert!((sigma_to_ebn0(s, 0.5, 2) - 3.3).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(ChannelParams::awgn(0.0).is_err());
        assert!(ChannelParams::new(ChannelKind::Bursty { sigma_b: 1.0, rho: 1.5 }, 1.0).is_err());
        let b = ChannelParams::bursty_default(0.5).unwrap();
        assert_eq!(b.kind, ChannelKind::Bursty { sigma_b: 1.0, rho: 0.1 });
    }

    #[test]
    fn vanishing_noise_is_identity() {
        let p = ChannelParams::awgn(1e-12).unwrap();
        let s = vec![1.0, -1.0, 1.0, 1.0];
        let (y, _) = transmit(&s, &bpsk(), &p, &FrameRng::new(1, 0));
        assert!(y.iter().zip(&s).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn awgn_variance() {
        let p = ChannelParams::awgn(1.0).unwrap();
        let z: Vec<f64> = many_frames(&p, 1000, 1000).into_iter().flat_map(|r| r.noise).collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!((0.99..=1.01).contains(&var), "{var}");
    }

    #[test]
    fn bursty_statistics() {
        let sigma = 1e-9;
        let p = ChannelParams::new(ChannelKind::Bursty { sigma_b: 2.0, rho: 0.3 }, sigma).unwrap();
        let w: Vec<f64> = many_frames(&p, 1000, 1000).into_iter().flat_map(|r| r.noise).collect();
        let hits: Vec<f64> = w.iter().copied().filter(|v| v.abs() > 1e-6).collect();
        let frac = hits.len() as f64 / w.len() as f64;
        assert!((0.297..=0.303).contains(&frac), "{frac}");
        let var = hits.iter().map(|v| v * v).sum::<f64>() / hits.len() as f64;
        assert!((var / 4.0 - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn rayleigh_unit_mean_square() {
        let p = ChannelParams::new(ChannelKind::Rayleigh { si: true }, 1.0).unwrap();
        let g: Vec<f64> = many_frames(&p, 1000, 1000)
            .into_iter()
            .flat_map(|r| r.gains.unwrap())
            .collect();
        let ms = g.iter().map(|v| v * v).sum::<f64>() / g.len() as f64;
        assert!((ms - 1.0).abs() < 0.01, "{ms}");
        assert!(g.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn noise_is_independent_of_input() {
        let p = ChannelParams::awgn(0.8).unwrap();
        let len = 64;
        let frames = 4000u64;
        let mut xs = Vec::new();
        let mut zs = Vec::new();
        for i in 0..frames {
            let rng = FrameRng::new(5, i);
            let mut bits = rng.lane(Lane::Message);
            let s: Vec<f64> = (0..len).map(|_| if bits.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let (y, _) = transmit(&s, &bpsk(), &p, &rng);
            for (a, b) in s.iter().zip(&y) {
                xs.push(*a);
                zs.push(b - a);
            }
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let mz = zs.iter().sum::<f64>() / n;
        let cov = xs.iter().zip(&zs).map(|(a, b)| (a - mx) * (b - mz)).sum::<f64>() / n;
        let sx = (xs.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
        let sz = (zs.iter().map(|b| (b - mz).powi(2)).sum::<f64>() / n).sqrt();
        let corr = cov / (sx * sz);
        assert!(corr.abs() < 3.0 / n.sqrt(), "{corr}");
    }

    #[test]
    fn streams_depend_only_on_seed_and_frame() {
        let p = ChannelParams::new(ChannelKind::Rayleigh { si: true }, 0.5).unwrap();
        let a = sample(32, &bpsk(), &p, &FrameRng::new(3, 17));
        // Interleave unrelated draws.
        let _ = sample(32, &bpsk(), &p, &FrameRng::new(3, 16));
        let b = std::thread::spawn(move || {
            sample(32, &Constellation::new(Scheme::Bpsk), &p, &FrameRng::new(3, 17))
        })
        .join()
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample(32, &bpsk(), &p, &FrameRng::new(3, 18)));
        assert_ne!(a, sample(32, &bpsk(), &p, &FrameRng::new(4, 17)));
    }

    #[test]
    fn missing_side_information_is_a_config_error() {
        let p = ChannelParams::new(ChannelKind::Rayleigh { si: false }, 0.5).unwrap();
        let r = sample(4, &bpsk(), &p, &FrameRng::new(0, 0));
        assert_eq!(p.receiver_side(&r), Err(ChannelError::NoSideInformation));
    }
}
