//! Central finite-difference checks of the demapper adjoint and the BP
//! reverse pass.

use rand::Rng;

use crate::bp::{self, LossMode};
use crate::channel::{self, FrameRng, Lane};
use crate::eval::{EvalError, Link};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Worst {
    pub stage: &'static str,
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub demod_max_rel: f64,
    pub bp_max_rel: f64,
    pub worst: Worst,
}

impl GradcheckReport {
    pub fn max_rel(&self) -> f64 {
        self.demod_max_rel.max(self.bp_max_rel)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel() < tol
    }
}

/// Relative error per coordinate, with a floor scaled to the largest
/// numeric component so that near-zero entries do not dominate.
pub fn relative_errors(analytic: &[f64], numeric: &[f64]) -> Vec<f64> {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale + 1e-12;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| {
            if !(a.is_finite() && b.is_finite()) {
                return f64::INFINITY;
            }
            (a - b).abs() / a.abs().max(b.abs()).max(floor)
        })
        .collect()
}

fn central<F: FnMut(&[f64]) -> Result<f64, EvalError>>(
    x: &[f64],
    h: f64,
    mut f: F,
) -> Result<Vec<f64>, EvalError> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp)?;
            xp[i] = x[i] - h;
            let fm = f(&xp)?;
            xp[i] = x[i];
            Ok((fp - fm) / (2.0 * h))
        })
        .collect()
}

/// Checks both stages at `inputs` noisy all-zero words at noise `sigma`.
pub fn gradcheck(
    link: &Link,
    loss: LossMode,
    sigma: f64,
    inputs: usize,
    seed: u64,
) -> Result<GradcheckReport, EvalError> {
    let params = link.channel.at_sigma(sigma)?;
    let target = vec![0u8; link.code.n];
    let s = link.constellation.modulate(&target)?;
    let iters = link.decoder.iters.max(1);
    let clamp = link.decoder.clamp;
    let mut report = GradcheckReport {
        demod_max_rel: 0.0,
        bp_max_rel: 0.0,
        worst: Worst {
            stage: "none",
            input: 0,
            coord: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_err: 0.0,
        },
    };
    let mut note = |stage: &'static str, input: usize, a: &[f64], b: &[f64]| -> f64 {
        let errs = relative_errors(a, b);
        let (coord, &e) = errs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .unwrap_or((0, &0.0));
        if e > report.worst.rel_err || report.worst.stage == "none" {
            report.worst = Worst {
                stage,
                input,
                coord,
                analytic: a[coord],
                numeric: b[coord],
                rel_err: e,
            };
        }
        e
    };
    let mut demod_max = 0.0f64;
    let mut bp_max = 0.0f64;
    for input in 0..inputs {
        let rng = FrameRng::new(seed, input as u64);
        let realization = channel::sample(s.len(), &link.constellation, &params, &rng);
        let side = params.receiver_side(&realization)?;
        let y = realization.apply(&s);

        // Demapper: J(y) = w·L(y) for a random upstream gradient w.
        let mut wr = rng.lane(Lane::Message);
        let w: Vec<f64> = (0..y.len()).map(|_| wr.random::<f64>() - 0.5).collect();
        let analytic = link.constellation.demodulate_adjoint(&w, &side)?;
        let numeric = central(&y, 1e-5, |v| {
            let l = link.constellation.demodulate_llr(v, &side)?;
            Ok(l.iter().zip(&w).map(|(a, b)| a * b).sum())
        })?;
        demod_max = demod_max.max(note("demodulate_adjoint", input, &analytic, &numeric));

        let llr = link.constellation.demodulate_llr(&y, &side)?;
        let out = bp::bp_forward(&llr, &link.graph, iters, clamp)?;
        let (_, analytic) = bp::bp_backward(&out, &link.graph, &target, loss)?;
        let numeric = central(&llr, 1e-5, |l| {
            let out = bp::bp_forward(l, &link.graph, iters, clamp)?;
            Ok(bp::bp_loss(&out, &target, loss)?)
        })?;
        bp_max = bp_max.max(note("bp_backward", input, &analytic, &numeric));
    }
    report.demod_max_rel = demod_max;
    report.bp_max_rel = bp_max;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bp::BpConfig;
    use crate::codes::CodeSpec;
    use crate::eval::ChannelModel;
    use crate::modem::Scheme;

    #[test]
    fn default_links_pass() {
        for (code, scheme) in [
            (CodeSpec::default_ldpc(), Scheme::Bpsk),
            (CodeSpec::default_ldpc(), Scheme::Qam4),
            (CodeSpec::repetition(3).unwrap(), Scheme::Bpsk),
        ] {
            let link = Link::new(code, BpConfig::new(5), scheme, ChannelModel::Awgn).unwrap();
            let r = gradcheck(&link, LossMode::Final, 0.8, 3, 1).unwrap();
            assert!(r.passed(1e-3), "{r:?}");
        }
    }

    #[test]
    fn fading_link_passes() {
        let link = Link::new(
            CodeSpec::default_ldpc(),
            BpConfig::new(3),
            Scheme::Bpsk,
            ChannelModel::Rayleigh { si: true },
        )
        .unwrap();
        let r = gradcheck(&link, LossMode::Multiloss, 0.7, 3, 2).unwrap();
        assert!(r.passed(1e-3), "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        let e = relative_errors(&[1.0, 0.0, 1e-20], &[1.0 + 1e-6, 1e-20, 0.0]);
        assert!(e[0] < 1.1e-6 && e[1] < 1e-10 && e[2] < 1e-10);
        assert_eq!(relative_errors(&[f64::NAN], &[0.0])[0], f64::INFINITY);
    }
}
