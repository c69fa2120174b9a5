//! Bit-to-symbol mapping and exact LLR demapping, plus the demapper adjoint.
//!
//! Complex symbols are stored as interleaved `(re, im)` pairs, so a 4-QAM
//! word of `N` symbols is a real vector of length `2N`. For both schemes the
//! real vector has one coordinate per code bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModemError {
    #[error("{bits} bits do not fill whole {scheme} symbols")]
    IncompleteSymbol { bits: usize, scheme: Scheme },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fading gains are required for the side-information demapper")]
    MissingGains,
    #[error("noise std must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("unknown modulation scheme {0:?}")]
    UnknownScheme(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Bpsk,
    Qam4,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Bpsk => "bpsk",
            Scheme::Qam4 => "qam4",
        })
    }
}

impl FromStr for Scheme {
    type Err = ModemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bpsk" => Ok(Scheme::Bpsk),
            "qam4" | "4qam" | "qpsk" => Ok(Scheme::Qam4),
            other => Err(ModemError::UnknownScheme(other.to_string())),
        }
    }
}

/// A unit-energy constellation with its Gray labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub scheme: Scheme,
    /// Points as `(re, im)`; BPSK points have `im = 0`.
    pub points: Vec<(f64, f64)>,
    /// `bit_labels[p]` is the bit pattern of `points[p]`, first bit first.
    pub bit_labels: Vec<Vec<u8>>,
    /// The point labelled by all-zero bits.
    pub s0: (f64, f64),
}

impl Constellation {
    pub fn new(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Bpsk => Self {
                scheme,
                points: vec![(1.0, 0.0), (-1.0, 0.0)],
                bit_labels: vec![vec![0], vec![1]],
                s0: (1.0, 0.0),
            },
            Scheme::Qam4 => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                let labels = vec![vec![0, 0], vec![1, 0], vec![1, 1], vec![0, 1]];
                let points = labels
                    .iter()
                    .map(|b| (a * sign(b[0]), a * sign(b[1])))
                    .collect();
                Self {
                    scheme,
                    points,
                    bit_labels: labels,
                    s0: (a, a),
                }
            }
        }
    }

    pub fn bits_per_symbol(&self) -> usize {
        match self.scheme {
            Scheme::Bpsk => 1,
            Scheme::Qam4 => 2,
        }
    }

    /// Per-coordinate amplitude of the real sub-channel.
    pub fn amplitude(&self) -> f64 {
        match self.scheme {
            Scheme::Bpsk => 1.0,
            Scheme::Qam4 => std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    /// Number of complex (or real, for BPSK) symbols carrying `n` bits.
    pub fn symbols_for(&self, n: usize) -> Result<usize, ModemError> {
        let b = self.bits_per_symbol();
        if n % b != 0 {
            return Err(ModemError::IncompleteSymbol {
                bits: n,
                scheme: self.scheme,
            });
        }
        Ok(n / b)
    }

    /// Maps code bits to the real coordinate vector (one coordinate per bit).
    ///
    /// BPSK: `s = 1 − 2x`. 4-QAM: bit pairs map to `(±1 ± j)/√2`, the first
    /// bit selecting the real sign and the second the imaginary sign.
    pub fn modulate(&self, bits: &[u8]) -> Result<Vec<f64>, ModemError> {
        self.symbols_for(bits.len())?;
        let a = self.amplitude();
        Ok(bits.iter().map(|&b| a * sign(b)).collect())
    }

    /// Exact per-bit LLRs, `L > 0` favouring bit 0.
    pub fn demodulate_llr(&self, y: &[f64], side: &ChannelSide) -> Result<Vec<f64>, ModemError> {
        let scale = self.llr_scales(y.len(), side)?;
        Ok(y.iter().zip(scale).map(|(v, c)| c * v).collect())
    }

    /// Jacobian-transpose product of the demapper: `dJ/dy` from `dJ/dL`.
    pub fn demodulate_adjoint(
        &self,
        dj_dllr: &[f64],
        side: &ChannelSide,
    ) -> Result<Vec<f64>, ModemError> {
        let scale = self.llr_scales(dj_dllr.len(), side)?;
        Ok(dj_dllr.iter().zip(scale).map(|(g, c)| c * g).collect())
    }

    /// On a Gray-labelled square constellation each coordinate is a BPSK
    /// sub-channel of amplitude `A`, so `L = 2·A·g·y/σ²` is exact and linear.
    fn llr_scales(
        &self,
        len: usize,
        side: &ChannelSide,
    ) -> Result<impl Iterator<Item = f64> + '_, ModemError> {
        let symbols = self.symbols_for(len)?;
        if !(side.sigma > 0.0 && side.sigma.is_finite()) {
            return Err(ModemError::BadSigma(side.sigma));
        }
        if let Some(g) = &side.gains {
            if g.len() != symbols {
                return Err(ModemError::LengthMismatch {
                    expected: symbols,
                    got: g.len(),
                });
            }
        }
        let base = 2.0 * self.amplitude() / (side.sigma * side.sigma);
        let bps = self.bits_per_symbol();
        let gains = side.gains.clone();
        Ok((0..len).map(move |i| match &gains {
            Some(g) => base * g[i / bps],
            None => base,
        }))
    }
}

fn sign(bit: u8) -> f64 {
    if bit == 0 {
        1.0
    } else {
        -1.0
    }
}

/// What the receiver knows about the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSide {
    /// Noise std per real dimension.
    pub sigma: f64,
    /// Per-symbol fading gains (ideal side information).
    pub gains: Option<Vec<f64>>,
}

impl ChannelSide {
    pub fn awgn(sigma: f64) -> Self {
        Self { sigma, gains: None }
    }
}

/// Hard decision under the `L > 0 ⇒ 0` convention.
pub fn hard_decision(llr: &[f64]) -> Vec<u8> {
    llr.iter().map(|&l| (l < 0.0) as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log_gauss(y: f64, mean: f64, sigma: f64) -> f64 {
        -(y - mean).powi(2) / (2.0 * sigma * sigma)
    }

    /// Exact LLR by log-sum-exp over the constellation points, per bit.
    fn brute_llr(c: &Constellation, y: &[f64], sigma: f64) -> Vec<f64> {
        let bps = c.bits_per_symbol();
        let mut out = Vec::new();
        for sym in y.chunks(bps) {
            let (yr, yi) = (sym[0], if bps == 2 { sym[1] } else { 0.0 });
            for bit in 0..bps {
                let mut num = f64::NEG_INFINITY;
                let mut den = f64::NEG_INFINITY;
                for (p, label) in c.points.iter().zip(&c.bit_labels) {
                    let ll = log_gauss(yr, p.0, sigma)
                        + if bps == 2 { log_gauss(yi, p.1, sigma) } else { 0.0 };
                    let acc = if label[bit] == 0 { &mut num } else { &mut den };
                    *acc = if acc.is_infinite() {
                        ll
                    } else {
                        acc.max(ll) + (-(acc.max(ll) - acc.min(ll))).exp().ln_1p()
                    };
                }
                out.push(num - den);
            }
        }
        out
    }

    #[test]
    fn modulate_examples() {
        let bpsk = Constellation::new(Scheme::Bpsk);
        assert_eq!(bpsk.modulate(&[0, 1]).unwrap(), vec![1.0, -1.0]);
        let qam = Constellation::new(Scheme::Qam4);
        let a = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(qam.modulate(&[0, 0]).unwrap(), vec![a, a]);
        assert_eq!(qam.modulate(&[1, 0, 0, 1]).unwrap(), vec![-a, a, a, -a]);
        assert!(matches!(
            qam.modulate(&[0, 0, 1]),
            Err(ModemError::IncompleteSymbol { bits: 3, .. })
        ));
        for c in [bpsk, qam] {
            let s = c.modulate(&[0; 8]).unwrap();
            for sym in s.chunks(c.bits_per_symbol()) {
                assert_eq!(sym[0], c.s0.0);
                if sym.len() == 2 {
                    assert_eq!(sym[1], c.s0.1);
                }
            }
        }
    }

    #[test]
    fn constellation_properties() {
        for scheme in [Scheme::Bpsk, Scheme::Qam4] {
            let c = Constellation::new(scheme);
            let energy: f64 =
                c.points.iter().map(|p| p.0 * p.0 + p.1 * p.1).sum::<f64>() / c.points.len() as f64;
            assert!((energy - 1.0).abs() < 1e-15);
            assert!(c.points.contains(&c.s0));
        }
        // Gray: neighbours on the square differ in one bit.
        let c = Constellation::new(Scheme::Qam4);
        for i in 0..4 {
            for j in 0..4 {
                let (p, q) = (c.points[i], c.points[j]);
                let dist2 = (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
                let adjacent = (dist2 - 2.0).abs() < 1e-12;
                let hamming: usize = c.bit_labels[i]
                    .iter()
                    .zip(&c.bit_labels[j])
                    .filter(|(a, b)| a != b)
                    .count();
                if adjacent {
                    assert_eq!(hamming, 1);
                }
            }
        }
    }

    #[test]
    fn llr_examples() {
        let c = Constellation::new(Scheme::Bpsk);
        assert_eq!(c.demodulate_llr(&[0.0], &ChannelSide::awgn(1.0)).unwrap(), vec![0.0]);
        let oracle = log_gauss(1.0, 1.0, 1.0) - log_gauss(1.0, -1.0, 1.0);
        let l = c.demodulate_llr(&[1.0], &ChannelSide::awgn(1.0)).unwrap()[0];
        assert!((l - oracle).abs() < 1e-12 && (l - 2.0).abs() < 1e-12);
        let oracle = log_gauss(-0.5, 1.0, 0.5) - log_gauss(-0.5, -1.0, 0.5);
        let l = c.demodulate_llr(&[-0.5], &ChannelSide::awgn(0.5)).unwrap()[0];
        assert!((l - oracle).abs() < 1e-12 && (l + 4.0).abs() < 1e-12);
    }

    #[test]
    fn fading_llr_needs_gains_of_right_length() {
        let c = Constellation::new(Scheme::Bpsk);
        let side = ChannelSide {
            sigma: 1.0,
            gains: Some(vec![0.5, 2.0]),
        };
        assert_eq!(c.demodulate_llr(&[1.0, 1.0], &side).unwrap(), vec![1.0, 4.0]);
        assert!(matches!(
            c.demodulate_llr(&[1.0], &side),
            Err(ModemError::LengthMismatch { .. })
        ));
        assert!(matches!(
            c.demodulate_llr(&[1.0], &ChannelSide::awgn(0.0)),
            Err(ModemError::BadSigma(_))
        ));
    }

    #[test]
    fn adjoint_examples() {
        let c = Constellation::new(Scheme::Bpsk);
        let side = ChannelSide::awgn(1.0);
        assert_eq!(c.demodulate_adjoint(&[0.0; 3], &side).unwrap(), vec![0.0; 3]);
        assert_eq!(
            c.demodulate_adjoint(&[1.0, 0.0], &side).unwrap(),
            vec![2.0, 0.0]
        );
    }

    proptest! {
        #[test]
        fn qam4_llr_matches_log_sum_exp(
            y in proptest::collection::vec(-3.0f64..3.0, 8),
            sigma in 0.3f64..2.0,
        ) {
            let c = Constellation::new(Scheme::Qam4);
            let fast = c.demodulate_llr(&y, &ChannelSide::awgn(sigma)).unwrap();
            let slow = brute_llr(&c, &y, sigma);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn bpsk_sign_equivariance(y in proptest::collection::vec(-5.0f64..5.0, 1..20)) {
            let c = Constellation::new(Scheme::Bpsk);
            let side = ChannelSide::awgn(0.7);
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            let a = c.demodulate_llr(&y, &side).unwrap();
            let b = c.demodulate_llr(&neg, &side).unwrap();
            for (x, z) in a.iter().zip(&b) {
                prop_assert_eq!(*x, -*z);
            }
        }

        #[test]
        fn adjoint_matches_finite_differences(
            scheme in prop_oneof![Just(Scheme::Bpsk), Just(Scheme::Qam4)],
            y in proptest::collection::vec(-2.0f64..2.0, 6),
            w in proptest::collection::vec(-1.0f64..1.0, 6),
            sigma in 0.4f64..1.5,
        ) {
            // J(y) = Σ w_i·L_i(y)
            let c = Constellation::new(scheme);
            let side = ChannelSide::awgn(sigma);
            let adj = c.demodulate_adjoint(&w, &side).unwrap();
            let h = 1e-5;
            for i in 0..y.len() {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[i] += h;
                ym[i] -= h;
                let jp: f64 = c.demodulate_llr(&yp, &side).unwrap().iter().zip(&w).map(|(l, w)| l * w).sum();
                let jm: f64 = c.demodulate_llr(&ym, &side).unwrap().iter().zip(&w).map(|(l, w)| l * w).sum();
                let fd = (jp - jm) / (2.0 * h);
                prop_assert!((fd - adj[i]).abs() <= 1e-6 * fd.abs().max(adj[i].abs()).max(1e-3));
            }
        }
    }
}
