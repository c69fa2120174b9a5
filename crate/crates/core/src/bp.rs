//! Differentiable sum-product belief propagation on a Tanner graph.
//!
//! Flooding schedule, tanh-rule check update, messages clamped to
//! `[-clamp, clamp]`. [`bp_forward`] records every pre-clamp message on a
//! [`BpTape`]; [`bp_backward`] replays the tape in reverse to get the exact
//! gradient of the BCE loss with respect to the input LLRs. [`decode`] is
//! the tape-free path used for evaluation, with optional early stopping.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::gf2::BitMatrix;

/// Floor applied to probabilities before taking logs in the loss.
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_CLAMP: f64 = 20.0;

#[derive(Debug, Error, PartialEq)]
pub enum BpError {
    #[error("expected {expected} LLRs, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("input LLR {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("at least one iteration is required for a differentiable decode")]
    NoIterations,
    #[error("clamp must be positive, got {0}")]
    BadClamp(f64),
    #[error("tape/target mismatch: tape has {tape} variables, target has {target}")]
    TargetMismatch { tape: usize, target: usize },
    #[error("unknown loss mode {0:?}")]
    UnknownLoss(String),
}

/// Bipartite message topology of a parity-check matrix.
///
/// Edges are ordered by check, then by variable.
#[derive(Debug, Clone)]
pub struct TannerGraph {
    n_var: usize,
    n_check: usize,
    edge_var: Vec<usize>,
    edge_check: Vec<usize>,
    check_ptr: Vec<usize>,
    var_ptr: Vec<usize>,
    var_edges: Vec<usize>,
    /// Per-edge multipliers on check-to-variable messages. Always 1 here;
    /// kept so weighted (neural) variants fit the same layout.
    weights: Vec<f64>,
}

impl TannerGraph {
    pub fn from_parity(h: &BitMatrix) -> Self {
        let (n_check, n_var) = (h.rows(), h.cols());
        let mut edge_var = Vec::new();
        let mut edge_check = Vec::new();
        let mut check_ptr = vec![0];
        for c in 0..n_check {
            for v in h.row_support(c) {
                edge_var.push(v);
                edge_check.push(c);
            }
            check_ptr.push(edge_var.len());
        }
        let mut per_var = vec![Vec::new(); n_var];
        for (e, &v) in edge_var.iter().enumerate() {
            per_var[v].push(e);
        }
        let mut var_ptr = vec![0];
        let mut var_edges = Vec::with_capacity(edge_var.len());
        for list in per_var {
            var_edges.extend(list);
            var_ptr.push(var_edges.len());
        }
        let weights = vec![1.0; edge_var.len()];
        Self {
            n_var,
            n_check,
            edge_var,
            edge_check,
            check_ptr,
            var_ptr,
            var_edges,
            weights,
        }
    }

    pub fn n_var(&self) -> usize {
        self.n_var
    }

    pub fn n_check(&self) -> usize {
        self.n_check
    }

    pub fn n_edges(&self) -> usize {
        self.edge_var.len()
    }

    /// `(check, var)` for every edge.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edge_check.iter().copied().zip(self.edge_var.iter().copied())
    }

    fn var_edge_list(&self, v: usize) -> &[usize] {
        &self.var_edges[self.var_ptr[v]..self.var_ptr[v + 1]]
    }

    /// True iff every check is satisfied by `hard`.
    pub fn syndrome_ok(&self, hard: &[u8]) -> bool {
        (0..self.n_check).all(|c| {
            self.edge_var[self.check_ptr[c]..self.check_ptr[c + 1]]
                .iter()
                .fold(0u8, |acc, &v| acc ^ hard[v])
                == 0
        })
    }

    fn check_input(&self, llr: &[f64]) -> Result<(), BpError> {
        if llr.len() != self.n_var {
            return Err(BpError::LengthMismatch {
                expected: self.n_var,
                got: llr.len(),
            });
        }
        if let Some((index, &value)) = llr.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(BpError::NonFinite { index, value });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    #[default]
    Final,
    /// BCE averaged over every iteration's output.
    Multiloss,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Final => "final",
            LossMode::Multiloss => "multiloss",
        })
    }
}

impl FromStr for LossMode {
    type Err = BpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "final" => Ok(LossMode::Final),
            "multiloss" => Ok(LossMode::Multiloss),
            other => Err(BpError::UnknownLoss(other.to_string())),
        }
    }
}

/// Decoder settings shared by search and evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpConfig {
    pub iters: usize,
    pub clamp: f64,
    /// Stop once the syndrome is satisfied. Only honoured by [`decode`].
    pub early_stop: bool,
}

impl BpConfig {
    pub fn new(iters: usize) -> Self {
        Self {
            iters,
            clamp: DEFAULT_CLAMP,
            early_stop: true,
        }
    }
}

/// Everything the reverse pass needs; flattened `iteration × edge` arrays.
#[derive(Debug, Clone)]
pub struct BpTape {
    pub iterations: usize,
    pub clamp: f64,
    pub input: Vec<f64>,
    /// Variable-to-check messages before clamping.
    pub v2c_pre: Vec<f64>,
    /// `tanh(clamped v2c / 2)`.
    pub v2c_tanh: Vec<f64>,
    /// Check-to-variable messages before clamping (`2·atanh(∏ tanh)`).
    pub c2v_pre: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BpOutput {
    /// Output LLRs after each iteration.
    pub soft: Vec<Vec<f64>>,
    pub hard: Vec<u8>,
    pub syndrome_ok: bool,
    pub tape: BpTape,
}

impl BpOutput {
    pub fn final_soft(&self) -> &[f64] {
        self.soft.last().expect("at least one iteration")
    }
}

#[inline]
fn clamp(x: f64, c: f64) -> f64 {
    x.clamp(-c, c)
}

#[inline]
fn inside(x: f64, c: f64) -> f64 {
    if x.abs() <= c {
        1.0
    } else {
        0.0
    }
}

/// `atanh` evaluated on `|p|` with the sign restored, so that negating
/// every input negates every message bit-exactly.
#[inline]
fn odd_atanh(p: f64) -> f64 {
    p.abs().atanh().copysign(p)
}

/// Scratch buffers for one decode, indexed by edge.
struct Workspace {
    v2c_pre: Vec<f64>,
    v2c_tanh: Vec<f64>,
    c2v: Vec<f64>,
}

impl Workspace {
    fn new(edges: usize) -> Self {
        Self {
            v2c_pre: vec![0.0; edges],
            v2c_tanh: vec![0.0; edges],
            c2v: vec![0.0; edges],
        }
    }
}

/// One flooding iteration. Reads `ws.c2v` from the previous iteration
/// (zeros at start) and leaves the new pre-clamp check messages there for
/// [`finish_iteration`].
fn iterate(g: &TannerGraph, llr: &[f64], clamp_at: f64, ws: &mut Workspace) {
    // Variable update: q_e = L_v + Σ_{e'∈v} r_e' − r_e.
    for v in 0..g.n_var {
        let edges = g.var_edge_list(v);
        let total: f64 = edges.iter().map(|&e| ws.c2v[e]).sum();
        for &e in edges {
            let q_pre = llr[v] + (total - ws.c2v[e]);
            ws.v2c_pre[e] = q_pre;
            ws.v2c_tanh[e] = (0.5 * clamp(q_pre, clamp_at)).tanh();
        }
    }
    // Check update with prefix/suffix products (no division by tanh).
    for c in 0..g.n_check {
        let (lo, hi) = (g.check_ptr[c], g.check_ptr[c + 1]);
        let mut prefix = 1.0;
        for e in lo..hi {
            ws.c2v[e] = prefix;
            prefix *= ws.v2c_tanh[e];
        }
        let mut suffix = 1.0;
        for e in (lo..hi).rev() {
            let p = ws.c2v[e] * suffix;
            suffix *= ws.v2c_tanh[e];
            ws.c2v[e] = 2.0 * odd_atanh(p);
        }
    }
}

/// Clamps and weights the check messages, then forms the output LLRs.
fn finish_iteration(g: &TannerGraph, llr: &[f64], clamp_at: f64, ws: &mut Workspace, soft: &mut [f64]) {
    for (m, w) in ws.c2v.iter_mut().zip(&g.weights) {
        *m = w * clamp(*m, clamp_at);
    }
    soft.copy_from_slice(llr);
    for (&v, &m) in g.edge_var.iter().zip(&ws.c2v) {
        soft[v] += m;
    }
}

/// Forward pass recording the tape. Never stops early.
pub fn bp_forward(
    llr: &[f64],
    g: &TannerGraph,
    iters: usize,
    clamp_at: f64,
) -> Result<BpOutput, BpError> {
    g.check_input(llr)?;
    if iters == 0 {
        return Err(BpError::NoIterations);
    }
    if !(clamp_at > 0.0) {
        return Err(BpError::BadClamp(clamp_at));
    }
    let e = g.n_edges();
    let mut v2c_pre = Vec::with_capacity(iters * e);
    let mut v2c_tanh_all = Vec::with_capacity(iters * e);
    let mut c2v_pre = Vec::with_capacity(iters * e);
    let mut ws = Workspace::new(e);
    let mut soft = Vec::with_capacity(iters);
    for _ in 0..iters {
        iterate(g, llr, clamp_at, &mut ws);
        v2c_pre.extend_from_slice(&ws.v2c_pre);
        v2c_tanh_all.extend_from_slice(&ws.v2c_tanh);
        c2v_pre.extend_from_slice(&ws.c2v);
        let mut out = vec![0.0; g.n_var];
        finish_iteration(g, llr, clamp_at, &mut ws, &mut out);
        soft.push(out);
    }
    let hard = crate::modem::hard_decision(soft.last().expect("iters >= 1"));
    let syndrome_ok = g.syndrome_ok(&hard);
    Ok(BpOutput {
        soft,
        hard,
        syndrome_ok,
        tape: BpTape {
            iterations: iters,
            clamp: clamp_at,
            input: llr.to_vec(),
            v2c_pre,
            v2c_tanh: v2c_tanh_all,
            c2v_pre,
        },
    })
}

/// Result of a tape-free decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub soft: Vec<f64>,
    pub hard: Vec<u8>,
    pub iterations: usize,
    pub syndrome_ok: bool,
}

/// Evaluation decode. With `iters = 0` this is a hard decision on the input.
pub fn decode(llr: &[f64], g: &TannerGraph, cfg: &BpConfig) -> Result<Decoded, BpError> {
    g.check_input(llr)?;
    if !(cfg.clamp > 0.0) {
        return Err(BpError::BadClamp(cfg.clamp));
    }
    let mut ws = Workspace::new(g.n_edges());
    let mut soft = llr.to_vec();
    let mut hard = crate::modem::hard_decision(&soft);
    let mut done = 0;
    for it in 1..=cfg.iters {
        iterate(g, llr, cfg.clamp, &mut ws);
        finish_iteration(g, llr, cfg.clamp, &mut ws, &mut soft);
        done = it;
        for (h, &s) in hard.iter_mut().zip(&soft) {
            *h = (s < 0.0) as u8;
        }
        if cfg.early_stop && g.syndrome_ok(&hard) {
            return Ok(Decoded {
                soft,
                hard,
                iterations: it,
                syndrome_ok: true,
            });
        }
    }
    let syndrome_ok = g.syndrome_ok(&hard);
    Ok(Decoded {
        soft,
        hard,
        iterations: done,
        syndrome_ok,
    })
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// BCE of one output vector against `target` and its gradient `dJ/dsoft`.
///
/// With `L > 0 ⇒ 0`, the probability of the target bit is
/// `logistic(L)` for a 0 and `logistic(−L)` for a 1.
fn bce(soft: &[f64], target: &[u8], grad: Option<&mut [f64]>, scale: f64) -> f64 {
    let mut total = 0.0;
    let mut grad = grad;
    for (i, (&s, &x)) in soft.iter().zip(target).enumerate() {
        let z = if x == 0 { s } else { -s };
        let p = logistic(z);
        let (j, dj_dz) = if p > PROB_FLOOR {
            // −ln logistic(z) = ln(1 + e^{−z}), computed stably.
            let nll = if z > 0.0 {
                (-z).exp().ln_1p()
            } else {
                -z + z.exp().ln_1p()
            };
            (nll, -logistic(-z))
        } else {
            (-PROB_FLOOR.ln(), 0.0)
        };
        total += j;
        if let Some(g) = grad.as_deref_mut() {
            g[i] += scale * if x == 0 { dj_dz } else { -dj_dz };
        }
    }
    total
}

/// BCE loss of a decode against `target` (final iteration or averaged over
/// all iterations).
pub fn bp_loss(out: &BpOutput, target: &[u8], mode: LossMode) -> Result<f64, BpError> {
    soft_loss(&out.soft, target, mode)
}

/// [`bp_loss`] on raw per-iteration outputs.
pub fn soft_loss(soft: &[Vec<f64>], target: &[u8], mode: LossMode) -> Result<f64, BpError> {
    let last = soft.last().ok_or(BpError::NoIterations)?;
    if last.len() != target.len() {
        return Err(BpError::TargetMismatch {
            tape: last.len(),
            target: target.len(),
        });
    }
    Ok(match mode {
        LossMode::Final => bce(last, target, None, 1.0),
        LossMode::Multiloss => {
            soft.iter().map(|s| bce(s, target, None, 1.0)).sum::<f64>() / soft.len() as f64
        }
    })
}

/// Reverse-mode gradient of `bp_loss(bp_forward(L), target, mode)` with
/// respect to `L`. Returns `(J, dJ/dL)`.
pub fn bp_backward(
    out: &BpOutput,
    g: &TannerGraph,
    target: &[u8],
    mode: LossMode,
) -> Result<(f64, Vec<f64>), BpError> {
    let tape = &out.tape;
    let n = g.n_var;
    let ne = g.n_edges();
    if target.len() != n || tape.input.len() != n {
        return Err(BpError::TargetMismatch {
            tape: tape.input.len(),
            target: target.len(),
        });
    }
    let iters = tape.iterations;
    let c = tape.clamp;

    // dJ/dsoft per iteration, and the loss itself.
    let mut d_soft = vec![vec![0.0; n]; iters];
    let loss = match mode {
        LossMode::Final => bce(&out.soft[iters - 1], target, Some(&mut d_soft[iters - 1]), 1.0),
        LossMode::Multiloss => {
            let scale = 1.0 / iters as f64;
            let mut total = 0.0;
            for (t, s) in out.soft.iter().enumerate() {
                total += bce(s, target, Some(&mut d_soft[t]), scale);
            }
            total * scale
        }
    };

    let mut d_llr = vec![0.0; n];
    // Adjoints of the next iteration's pre-clamp v2c messages, and their
    // per-variable sums.
    let mut d_q_next = vec![0.0; ne];
    let mut d_q_sum_next = vec![0.0; n];
    let mut d_c2v = vec![0.0; ne];
    let mut d_p = vec![0.0; ne];
    let mut d_tau = vec![0.0; ne];
    let mut prefix_a = vec![0.0; ne];
    let mut prefix_b = vec![0.0; ne];

    for t in (0..iters).rev() {
        let base = t * ne;
        let ds = &d_soft[t];
        for (v, &dv) in ds.iter().enumerate() {
            d_llr[v] += dv;
        }
        // soft_v = L_v + Σ r_e ; q^{t+1}_e' = L_v + Σ_{e≠e'} r_e.
        for e in 0..ne {
            let v = g.edge_var[e];
            let mut d = ds[v];
            if t + 1 < iters {
                d += d_q_sum_next[v] - d_q_next[e];
            }
            d_c2v[e] = d;
        }
        // r_e = w_e·clamp(2·atanh(P_e)); d(2 atanh P)/dP = 2·cosh²(r_pre/2).
        for e in 0..ne {
            let r_pre = tape.c2v_pre[base + e];
            let dr = d_c2v[e] * g.weights[e] * inside(r_pre, c);
            d_p[e] = if dr == 0.0 {
                0.0
            } else {
                dr * (1.0 + r_pre.cosh())
            };
        }
        // P_e = ∏_{e'≠e} τ_e' within each check. For the adjoint of τ use
        // prefix/suffix sums of "products with one factor removed".
        let tau = &tape.v2c_tanh[base..base + ne];
        for ch in 0..g.n_check {
            let (lo, hi) = (g.check_ptr[ch], g.check_ptr[ch + 1]);
            // Forward: a_i = ∏_{j<i} τ_j, b_i = Σ_{j<i} dP_j ∏_{l<i,l≠j} τ_l.
            let (mut a, mut b) = (1.0, 0.0);
            for e in lo..hi {
                prefix_a[e] = a;
                prefix_b[e] = b;
                b = b * tau[e] + d_p[e] * a;
                a *= tau[e];
            }
            // Backward with the suffix analogues; dτ_i = b_i·a'_i + a_i·b'_i.
            let (mut a, mut b) = (1.0, 0.0);
            for e in (lo..hi).rev() {
                d_tau[e] = prefix_b[e] * a + prefix_a[e] * b;
                b = b * tau[e] + d_p[e] * a;
                a *= tau[e];
            }
        }
        // τ = tanh(clamp(q_pre)/2).
        d_q_sum_next.iter_mut().for_each(|x| *x = 0.0);
        for e in 0..ne {
            let q_pre = tape.v2c_pre[base + e];
            let tau_e = tau[e];
            let d = d_tau[e] * 0.5 * (1.0 - tau_e * tau_e) * inside(q_pre, c);
            d_q_next[e] = d;
            let v = g.edge_var[e];
            d_q_sum_next[v] += d;
            d_llr[v] += d;
        }
    }
    Ok((loss, d_llr))
}
