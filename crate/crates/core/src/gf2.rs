//! Dense linear algebra over GF(2).
//!
//! Rows are bit-packed into `u64` words. Bit vectors elsewhere in the crate
//! are plain `&[u8]` slices holding 0/1 values.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Gf2Error {
    #[error("matrix must have at least one row and one column (got {rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("row {row} has length {got}, expected {expected}")]
    RaggedRows { row: usize, got: usize, expected: usize },
    #[error("entry at ({row}, {col}) is {value}, expected 0 or 1")]
    NotABit { row: usize, col: usize, value: u8 },
    #[error("length mismatch: got {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("parity-check matrix has full column rank {rank}; the code is {{0}}")]
    DegenerateCode { rank: usize },
}

const WORD: usize = 64;

fn words_for(cols: usize) -> usize {
    cols.div_ceil(WORD)
}

/// A dense matrix over GF(2).
#[derive(Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Result<Self, Gf2Error> {
        if rows == 0 || cols == 0 {
            return Err(Gf2Error::EmptyMatrix { rows, cols });
        }
        let stride = words_for(cols);
        Ok(Self {
            rows,
            cols,
            stride,
            data: vec![0; rows * stride],
        })
    }

    pub fn identity(n: usize) -> Result<Self, Gf2Error> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.set(i, i, true);
        }
        Ok(m)
    }

    /// Builds a matrix from rows of 0/1 values.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self, Gf2Error> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut m = Self::zeros(rows.len(), cols)?;
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Gf2Error::RaggedRows {
                    row: i,
                    got: row.len(),
                    expected: cols,
                });
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => m.set(i, j, true),
                    value => return Err(Gf2Error::NotABit { row: i, col: j, value }),
                }
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.rows && col < self.cols);
        (self.data[row * self.stride + col / WORD] >> (col % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        debug_assert!(row < self.rows && col < self.cols);
        let w = &mut self.data[row * self.stride + col / WORD];
        let mask = 1u64 << (col % WORD);
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    fn row_words(&self, row: usize) -> &[u64] {
        &self.data[row * self.stride..(row + 1) * self.stride]
    }

    /// Row `row` as a 0/1 vector.
    pub fn row(&self, row: usize) -> Vec<u8> {
        (0..self.cols).map(|j| self.get(row, j) as u8).collect()
    }

    /// Column indices of the nonzeros in `row`, ascending.
    pub fn row_support(&self, row: usize) -> Vec<usize> {
        (0..self.cols).filter(|&j| self.get(row, j)).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&w| w == 0)
    }

    fn xor_row_into(&mut self, src: usize, dst: usize) {
        let (s, d) = (src * self.stride, dst * self.stride);
        for w in 0..self.stride {
            let v = self.data[s + w];
            self.data[d + w] ^= v;
        }
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for w in 0..self.stride {
            self.data.swap(a * self.stride + w, b * self.stride + w);
        }
    }

    pub fn transpose(&self) -> BitMatrix {
        let mut t = BitMatrix::zeros(self.cols, self.rows).expect("nonempty");
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.get(i, j) {
                    t.set(j, i, true);
                }
            }
        }
        t
    }

    /// Matrix product over GF(2).
    pub fn mul(&self, rhs: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
        if self.cols != rhs.rows {
            return Err(Gf2Error::LengthMismatch {
                got: rhs.rows,
                expected: self.cols,
            });
        }
        let mut out = BitMatrix::zeros(self.rows, rhs.cols)?;
        for i in 0..self.rows {
            for k in 0..self.cols {
                if self.get(i, k) {
                    let (o, r) = (i * out.stride, k * rhs.stride);
                    for w in 0..out.stride {
                        out.data[o + w] ^= rhs.data[r + w];
                    }
                }
            }
        }
        Ok(out)
    }

    /// `M·x` for a column vector `x` (e.g. a syndrome `H·x`).
    pub fn mul_vec(&self, x: &[u8]) -> Result<Vec<u8>, Gf2Error> {
        if x.len() != self.cols {
            return Err(Gf2Error::LengthMismatch {
                got: x.len(),
                expected: self.cols,
            });
        }
        let packed = pack(x);
        Ok((0..self.rows)
            .map(|i| {
                let ones: u32 = self
                    .row_words(i)
                    .iter()
                    .zip(&packed)
                    .map(|(a, b)| (a & b).count_ones())
                    .sum();
                (ones & 1) as u8
            })
            .collect())
    }

    /// `x·M` for a row vector `x` (encoding `m·G`).
    pub fn vec_mul(&self, x: &[u8]) -> Result<Vec<u8>, Gf2Error> {
        if x.len() != self.rows {
            return Err(Gf2Error::LengthMismatch {
                got: x.len(),
                expected: self.rows,
            });
        }
        let mut acc = vec![0u64; self.stride];
        for (i, &b) in x.iter().enumerate() {
            if b & 1 == 1 {
                for (a, r) in acc.iter_mut().zip(self.row_words(i)) {
                    *a ^= r;
                }
            }
        }
        Ok(unpack(&acc, self.cols))
    }

    /// Keeps the rows listed in `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<BitMatrix, Gf2Error> {
        let mut out = BitMatrix::zeros(idx.len(), self.cols)?;
        for (dst, &src) in idx.iter().enumerate() {
            out.data[dst * self.stride..(dst + 1) * self.stride]
                .copy_from_slice(self.row_words(src));
        }
        Ok(out)
    }

    /// Keeps the columns listed in `idx`, in that order.
    pub fn select_cols(&self, idx: &[usize]) -> Result<BitMatrix, Gf2Error> {
        let mut out = BitMatrix::zeros(self.rows, idx.len())?;
        for i in 0..self.rows {
            for (dst, &src) in idx.iter().enumerate() {
                if self.get(i, src) {
                    out.set(i, dst, true);
                }
            }
        }
        Ok(out)
    }

    pub fn rank(&self) -> usize {
        rref(self).1.len()
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let s: String = (0..self.cols)
                .map(|j| if self.get(i, j) { '1' } else { '0' })
                .collect();
            writeln!(f, "  {s}")?;
        }
        write!(f, "]")
    }
}

fn pack(x: &[u8]) -> Vec<u64> {
    let mut out = vec![0u64; words_for(x.len())];
    for (j, &b) in x.iter().enumerate() {
        if b & 1 == 1 {
            out[j / WORD] |= 1 << (j % WORD);
        }
    }
    out
}

fn unpack(words: &[u64], len: usize) -> Vec<u8> {
    (0..len)
        .map(|j| ((words[j / WORD] >> (j % WORD)) & 1) as u8)
        .collect()
}

/// Reduced row-echelon form over GF(2) with its strictly increasing pivot
/// columns. Zero rows end up at the bottom.
pub fn rref(m: &BitMatrix) -> (BitMatrix, Vec<usize>) {
    let mut r = m.clone();
    let mut pivots = Vec::new();
    let mut lead = 0;
    for col in 0..r.cols {
        if lead == r.rows {
            break;
        }
        let Some(p) = (lead..r.rows).find(|&i| r.get(i, col)) else {
            continue;
        };
        r.swap_rows(p, lead);
        for i in 0..r.rows {
            if i != lead && r.get(i, col) {
                r.xor_row_into(lead, i);
            }
        }
        pivots.push(col);
        lead += 1;
    }
    (r, pivots)
}

/// Drops linearly dependent rows, returning a full-row-rank matrix spanning
/// the same row space, or `None` when the row space is `{0}`.
pub fn independent_rows(m: &BitMatrix) -> Option<BitMatrix> {
    let (r, pivots) = rref(m);
    if pivots.is_empty() {
        return None;
    }
    if pivots.len() < m.rows() {
        log::warn!(
            "dropping {} linearly dependent row(s) of a {}x{} matrix",
            m.rows() - pivots.len(),
            m.rows(),
            m.cols()
        );
    }
    let keep: Vec<usize> = (0..pivots.len()).collect();
    Some(r.select_rows(&keep).expect("nonempty"))
}

/// A basis of the null space of `h` (all `x` with `h·x = 0`), as the rows of
/// a `k × n` generator matrix with `k = n − rank(h)`.
pub fn generator_from_parity(h: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
    let n = h.cols();
    let (r, pivots) = rref(h);
    let rank = pivots.len();
    if rank == n {
        return Err(Gf2Error::DegenerateCode { rank });
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    let mut g = BitMatrix::zeros(free.len(), n)?;
    // Each free column f gives x_f = 1 and x_p = R[row(p), f] on pivots.
    for (row, &f) in free.iter().enumerate() {
        g.set(row, f, true);
        for (prow, &p) in pivots.iter().enumerate() {
            if r.get(prow, f) {
                g.set(row, p, true);
            }
        }
    }
    Ok(g)
}

/// Inverse of a square matrix, if it exists.
pub fn inverse(m: &BitMatrix) -> Option<BitMatrix> {
    let n = m.rows();
    if m.cols() != n {
        return None;
    }
    let mut aug = BitMatrix::zeros(n, 2 * n).ok()?;
    for i in 0..n {
        for j in 0..n {
            if m.get(i, j) {
                aug.set(i, j, true);
            }
        }
        aug.set(i, n + i, true);
    }
    let (r, pivots) = rref(&aug);
    if pivots.len() < n || pivots[n - 1] != n - 1 {
        return None;
    }
    let right: Vec<usize> = (n..2 * n).collect();
    r.select_cols(&right).ok()
}

/// Codeword `m·G`.
pub fn encode(message: &[u8], g: &BitMatrix) -> Result<Vec<u8>, Gf2Error> {
    g.vec_mul(message)
}
