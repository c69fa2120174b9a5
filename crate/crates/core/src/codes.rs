//! Code constructions: LDPC from alist files, polar codes with a
//! Bhattacharyya-ranked frozen set, and a few small textbook codes used in
//! tests and as sanity baselines.

use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

use crate::gf2::{self, BitMatrix, Gf2Error};

/// The (64,32) regular LDPC code shipped with the crate (column weight 3,
/// row weight 6, girth ≥ 6, full rank).
pub const DEFAULT_LDPC_ALIST: &str = include_str!("../data/ldpc_64_32.alist");

#[derive(Debug, Error, PartialEq)]
pub enum CodeError {
    #[error("alist line {line}: stream ended early ({what})")]
    Truncated { line: usize, what: &'static str },
    #[error("alist line {line}: invalid token {token:?}")]
    InvalidToken { line: usize, token: String },
    #[error("alist line {line}: index {index} outside 1..={max}")]
    IndexOutOfRange { line: usize, index: usize, max: usize },
    #[error("alist line {line}: expected {expected} entries, found {found}")]
    DegreeMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("alist line {line}: entry {index} listed twice")]
    DuplicateIndex { line: usize, index: usize },
    #[error("alist line {line}: nonzero entry after zero padding")]
    BadPadding { line: usize },
    #[error("alist line {line}: row lists disagree with column lists ({detail})")]
    Inconsistent { line: usize, detail: String },
    #[error("block length {0} is not a power of two >= 2")]
    NotPowerOfTwo(usize),
    #[error("invalid dimension k = {k} for n = {n}")]
    InvalidDimension { n: usize, k: usize },
    #[error("constructed code violates G·Hᵀ = 0")]
    NotOrthogonal,
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeFamily {
    Ldpc,
    Polar,
    /// Small hand-specified linear codes (repetition, Hamming, uncoded).
    Linear,
}

impl fmt::Display for CodeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodeFamily::Ldpc => "ldpc",
            CodeFamily::Polar => "polar",
            CodeFamily::Linear => "linear",
        })
    }
}

/// Recovers the message from a codeword: `m = x_I · (G_I)⁻¹` where `I` is a
/// set of `k` information positions on which `G` is invertible.
#[derive(Debug, Clone)]
pub struct MessageExtractor {
    positions: Vec<usize>,
    inverse: BitMatrix,
    identity: bool,
}

impl MessageExtractor {
    fn new(g: &BitMatrix) -> Result<Self, CodeError> {
        let positions = systematic_positions(g).unwrap_or_else(|| gf2::rref(g).1);
        if positions.len() != g.rows() {
            return Err(CodeError::InvalidDimension {
                n: g.cols(),
                k: g.rows(),
            });
        }
        let sub = g.select_cols(&positions)?;
        let inverse = gf2::inverse(&sub).ok_or(CodeError::NotOrthogonal)?;
        let identity = inverse == BitMatrix::identity(positions.len())?;
        Ok(Self {
            positions,
            inverse,
            identity,
        })
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn extract(&self, codeword: &[u8]) -> Vec<u8> {
        let info: Vec<u8> = self.positions.iter().map(|&p| codeword[p]).collect();
        if self.identity {
            info
        } else {
            self.inverse.vec_mul(&info).expect("k-length info vector")
        }
    }
}

/// Unit columns of `G`, one per row, if `G` contains an identity.
fn systematic_positions(g: &BitMatrix) -> Option<Vec<usize>> {
    let gt = g.transpose();
    let mut positions = vec![None; g.rows()];
    for c in 0..g.cols() {
        let support = gt.row_support(c);
        if let [r] = support[..] {
            positions[r].get_or_insert(c);
        }
    }
    positions.into_iter().collect()
}

/// A binary linear code with both matrices and construction metadata.
#[derive(Debug, Clone)]
pub struct CodeSpec {
    pub name: String,
    pub family: CodeFamily,
    pub n: usize,
    pub k: usize,
    /// Full-row-rank parity-check matrix. For `k = n` this is a single zero
    /// row, which yields an edgeless Tanner graph.
    pub h: BitMatrix,
    pub g: BitMatrix,
    /// Frozen indices (polar only), ascending.
    pub frozen: Vec<usize>,
    extractor: MessageExtractor,
}

impl CodeSpec {
    /// Builds a code from a parity-check matrix, dropping dependent rows.
    pub fn from_parity(
        name: impl Into<String>,
        family: CodeFamily,
        h: &BitMatrix,
    ) -> Result<Self, CodeError> {
        let n = h.cols();
        let h = gf2::independent_rows(h).unwrap_or(BitMatrix::zeros(1, n)?);
        let g = gf2::generator_from_parity(&h)?;
        Self::assemble(name.into(), family, h, g, Vec::new())
    }

    fn assemble(
        name: String,
        family: CodeFamily,
        h: BitMatrix,
        g: BitMatrix,
        frozen: Vec<usize>,
    ) -> Result<Self, CodeError> {
        if !g.mul(&h.transpose())?.is_zero() {
            return Err(CodeError::NotOrthogonal);
        }
        let extractor = MessageExtractor::new(&g)?;
        Ok(Self {
            name,
            family,
            n: g.cols(),
            k: g.rows(),
            h,
            g,
            frozen,
            extractor,
        })
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>, Gf2Error> {
        gf2::encode(message, &self.g)
    }

    pub fn extract_message(&self, codeword: &[u8]) -> Vec<u8> {
        self.extractor.extract(codeword)
    }

    pub fn is_codeword(&self, x: &[u8]) -> bool {
        self.h
            .mul_vec(x)
            .map(|s| s.iter().all(|&b| b == 0))
            .unwrap_or(false)
    }

    /// The shipped (64,32) LDPC code.
    pub fn default_ldpc() -> Self {
        let h = load_alist(DEFAULT_LDPC_ALIST).expect("shipped alist parses");
        Self::from_parity("ldpc-64-32", CodeFamily::Ldpc, &h).expect("shipped alist is valid")
    }

    pub fn repetition(n: usize) -> Result<Self, CodeError> {
        if n < 2 {
            return Err(CodeError::InvalidDimension { n, k: 1 });
        }
        let rows: Vec<Vec<u8>> = (0..n - 1)
            .map(|i| (0..n).map(|j| (j == i || j == i + 1) as u8).collect())
            .collect();
        let h = BitMatrix::from_rows(&rows)?;
        Self::from_parity(format!("rep-{n}-1"), CodeFamily::Linear, &h)
    }

    pub fn hamming74() -> Self {
        let h = BitMatrix::from_rows(&[
            [1u8, 0, 1, 0, 1, 0, 1],
            [0, 1, 1, 0, 0, 1, 1],
            [0, 0, 0, 1, 1, 1, 1],
        ])
        .expect("static matrix");
        Self::from_parity("hamming-7-4", CodeFamily::Linear, &h).expect("static code")
    }

    /// The trivial `k = n` code; with BP this is a hard-decision detector.
    pub fn uncoded(n: usize) -> Result<Self, CodeError> {
        Self::from_parity(format!("uncoded-{n}"), CodeFamily::Linear, &BitMatrix::zeros(1, n)?)
    }
}

// ---------------------------------------------------------------------------
// alist
// ---------------------------------------------------------------------------

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    /// Next non-blank line as (1-based line number, parsed integers).
    fn next_numbers(&mut self, what: &'static str) -> Result<(usize, Vec<usize>), CodeError> {
        for (i, raw) in self.inner.by_ref() {
            self.last = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let nums = raw
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>().map_err(|_| CodeError::InvalidToken {
                        line: i + 1,
                        token: t.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            return Ok((i + 1, nums));
        }
        Err(CodeError::Truncated {
            line: self.last + 1,
            what,
        })
    }
}

fn exact<const N: usize>(line: usize, nums: &[usize]) -> Result<[usize; N], CodeError> {
    nums.try_into().map_err(|_| CodeError::DegreeMismatch {
        line,
        expected: N,
        found: nums.len(),
    })
}

/// Reads one index list: `degree` 1-based indices, then optional zero padding.
fn index_list(
    line: usize,
    nums: &[usize],
    degree: usize,
    max_degree: usize,
    max_index: usize,
) -> Result<Vec<usize>, CodeError> {
    if nums.len() < degree || nums.len() > max_degree.max(degree) {
        return Err(CodeError::DegreeMismatch {
            line,
            expected: degree,
            found: nums.len(),
        });
    }
    let (body, pad) = nums.split_at(degree);
    if pad.iter().any(|&v| v != 0) {
        return Err(CodeError::BadPadding { line });
    }
    let mut out = Vec::with_capacity(degree);
    for &v in body {
        if v == 0 || v > max_index {
            return Err(CodeError::IndexOutOfRange {
                line,
                index: v,
                max: max_index,
            });
        }
        if out.contains(&(v - 1)) {
            return Err(CodeError::DuplicateIndex { line, index: v });
        }
        out.push(v - 1);
    }
    Ok(out)
}

/// Parses a MacKay alist file into an `m × n` parity-check matrix.
pub fn load_alist(text: &str) -> Result<BitMatrix, CodeError> {
    let mut lines = Lines::new(text);
    let (l, nums) = lines.next_numbers("header")?;
    let [n, m] = exact::<2>(l, &nums)?;
    let (l, nums) = lines.next_numbers("max degrees")?;
    let [max_col, max_row] = exact::<2>(l, &nums)?;

    let (l, col_deg) = lines.next_numbers("column degrees")?;
    if col_deg.len() != n {
        return Err(CodeError::DegreeMismatch {
            line: l,
            expected: n,
            found: col_deg.len(),
        });
    }
    if let Some(&d) = col_deg.iter().find(|&&d| d > max_col) {
        return Err(CodeError::Inconsistent {
            line: l,
            detail: format!("column degree {d} exceeds max {max_col}"),
        });
    }
    let (l, row_deg) = lines.next_numbers("row degrees")?;
    if row_deg.len() != m {
        return Err(CodeError::DegreeMismatch {
            line: l,
            expected: m,
            found: row_deg.len(),
        });
    }
    if let Some(&d) = row_deg.iter().find(|&&d| d > max_row) {
        return Err(CodeError::Inconsistent {
            line: l,
            detail: format!("row degree {d} exceeds max {max_row}"),
        });
    }
    if col_deg.iter().sum::<usize>() != row_deg.iter().sum::<usize>() {
        return Err(CodeError::Inconsistent {
            line: l,
            detail: "column and row degree totals differ".into(),
        });
    }

    let mut h = BitMatrix::zeros(m, n)?;
    // An all-zero matrix has blank index lines, which the reader skips.
    if max_col == 0 && max_row == 0 {
        return Ok(h);
    }
    for (col, &deg) in col_deg.iter().enumerate() {
        let (l, nums) = lines.next_numbers("column index lists")?;
        for row in index_list(l, &nums, deg, max_col, m)? {
            h.set(row, col, true);
        }
    }
    for (row, &deg) in row_deg.iter().enumerate() {
        let (l, nums) = lines.next_numbers("row index lists")?;
        let cols = index_list(l, &nums, deg, max_row, n)?;
        let listed = h.row_support(row);
        let mut sorted = cols.clone();
        sorted.sort_unstable();
        if sorted != listed {
            return Err(CodeError::Inconsistent {
                line: l,
                detail: format!("row {} lists {:?}, columns imply {:?}", row + 1, sorted, listed),
            });
        }
    }
    Ok(h)
}

/// Writes `h` in alist format with zero padding to the maximum degrees.
pub fn write_alist(h: &BitMatrix) -> String {
    let (m, n) = (h.rows(), h.cols());
    let cols: Vec<Vec<usize>> = (0..n)
        .map(|j| (0..m).filter(|&i| h.get(i, j)).collect())
        .collect();
    let rows: Vec<Vec<usize>> = (0..m).map(|i| h.row_support(i)).collect();
    let max_col = cols.iter().map(Vec::len).max().unwrap_or(0);
    let max_row = rows.iter().map(Vec::len).max().unwrap_or(0);

    let join = |v: &mut dyn Iterator<Item = usize>| {
        v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
    };
    let mut out = String::new();
    let _ = writeln!(out, "{n} {m}");
    let _ = writeln!(out, "{max_col} {max_row}");
    let _ = writeln!(out, "{}", join(&mut cols.iter().map(Vec::len)));
    let _ = writeln!(out, "{}", join(&mut rows.iter().map(Vec::len)));
    for (lists, width) in [(&cols, max_col), (&rows, max_row)] {
        for list in lists {
            let mut it = list
                .iter()
                .map(|&x| x + 1)
                .chain(std::iter::repeat(0).take(width - list.len()));
            let _ = writeln!(out, "{}", join(&mut it));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// polar
// ---------------------------------------------------------------------------

fn log2_exact(n: usize) -> Result<u32, CodeError> {
    if n < 2 || !n.is_power_of_two() {
        return Err(CodeError::NotPowerOfTwo(n));
    }
    Ok(n.trailing_zeros())
}

/// Initial Bhattacharyya parameter of a BPSK/AWGN channel at the given
/// design Eb/N0 and rate: `exp(−R·Eb/N0)`.
pub fn design_bhattacharyya(design_ebn0_db: f64, rate: f64) -> f64 {
    (-rate * 10f64.powf(design_ebn0_db / 10.0)).exp()
}

/// Bhattacharyya parameters of the `n` synthesized channels, starting from
/// `z0`. Each level expands `z` into `(2z − z², z²)` in place, so index
/// `i`'s most significant bit is the first split.
pub fn polar_bhattacharyya(n: usize, z0: f64) -> Result<Vec<f64>, CodeError> {
    let m = log2_exact(n)?;
    let mut z = vec![z0.clamp(0.0, 1.0)];
    for _ in 0..m {
        z = z
            .iter()
            .flat_map(|&v| [2.0 * v - v * v, v * v])
            .collect();
    }
    Ok(z)
}

/// Indices of the `count` largest values; ties freeze the lower index first.
pub fn worst_indices(z: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    let mut out = idx[..count].to_vec();
    out.sort_unstable();
    out
}

/// `F^{⊗m}` with `F = [[1,0],[1,1]]`.
pub fn kernel_power(n: usize) -> Result<BitMatrix, CodeError> {
    log2_exact(n)?;
    let mut f = BitMatrix::zeros(n, n)?;
    for i in 0..n {
        for j in 0..n {
            // Entry (i, j) is 1 iff j's bits are a subset of i's bits.
            if i & j == j {
                f.set(i, j, true);
            }
        }
    }
    Ok(f)
}

/// Polar code with the `n − k` least reliable channels frozen.
///
/// `G` holds the unfrozen rows of `F^{⊗m}`. Since `F^{⊗m}` is its own
/// inverse, `u = x·F^{⊗m}`, so the parity checks `u_f = 0` are the frozen
/// *columns* of `F^{⊗m}`.
pub fn polar_construct(n: usize, k: usize, design_ebn0_db: f64) -> Result<CodeSpec, CodeError> {
    log2_exact(n)?;
    if k == 0 || k > n {
        return Err(CodeError::InvalidDimension { n, k });
    }
    let rate = k as f64 / n as f64;
    let z = polar_bhattacharyya(n, design_bhattacharyya(design_ebn0_db, rate))?;
    let frozen = worst_indices(&z, n - k);
    let info: Vec<usize> = (0..n).filter(|i| frozen.binary_search(i).is_err()).collect();
    let f = kernel_power(n)?;
    let g = f.select_rows(&info)?;
    let h = if frozen.is_empty() {
        BitMatrix::zeros(1, n)?
    } else {
        f.select_cols(&frozen)?.transpose()
    };
    CodeSpec::assemble(format!("polar-{n}-{k}"), CodeFamily::Polar, h, g, frozen)
}
