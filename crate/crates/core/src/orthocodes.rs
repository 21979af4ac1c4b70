//! Real-valued multi-level orthogonal spreading codes.
//!
//! A [`CodeMatrix`] is a square integer matrix with nonzero entries whose rows
//! are pairwise orthogonal. Walsh matrices cover the powers of two; any other
//! order is built by block composition of prime-order bases: if `A` is an
//! order-`r` code and `B` an order-`k` code, the matrix whose `(i, j)` block is
//! `A[i][j] * B` is an order-`r*k` code, and its Gram matrix is the Kronecker
//! product of the two input Gram matrices.
//!
//! All arithmetic is exact `i64` with overflow reported as an error.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use thiserror::Error;

/// Largest Walsh exponent accepted by [`walsh`].
pub const MAX_WALSH_EXPONENT: u32 = 12;

/// Largest matrix order any constructor will produce.
pub const MAX_ORDER: usize = 1 << MAX_WALSH_EXPONENT;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeError {
    #[error("order {order} exceeds the limit of {limit}")]
    Size { order: usize, limit: usize },
    #[error("unsupported order {order}: no base matrix for prime factor {prime}")]
    UnsupportedOrder { order: usize, prime: u64 },
    #[error("integer overflow composing order-{outer} with order-{inner}")]
    Overflow { outer: usize, inner: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid code matrix: {0}")]
    Invalid(String),
    #[error("{users} users requested but only {rows} orthogonal rows are available")]
    Capacity { users: usize, rows: usize },
}

/// Square integer matrix with nonzero entries and mutually orthogonal rows.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodeMatrix {
    order: usize,
    entries: Vec<i64>,
    gram_diag: Vec<i64>,
}

impl CodeMatrix {
    /// Validates `rows` and builds a code matrix from them.
    pub fn from_rows<R: AsRef<[i64]>>(rows: &[R]) -> Result<Self, CodeError> {
        let report = verify(rows);
        if !report.is_square {
            return Err(CodeError::Invalid("matrix is not square".into()));
        }
        if report.order == 0 {
            return Err(CodeError::Invalid("empty matrix".into()));
        }
        if !report.all_nonzero {
            return Err(CodeError::Invalid("zero entry present".into()));
        }
        if !report.is_orthogonal {
            return Err(CodeError::Invalid("rows are not orthogonal".into()));
        }
        let gram_diag = report
            .diagonal()
            .map(|d| i64::try_from(d).map_err(|_| CodeError::Invalid("row norm overflows i64".into())))
            .collect::<Result<Vec<_>, _>>()?;
        let entries = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Ok(Self {
            order: report.order,
            entries,
            gram_diag,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.entries[i * self.order..(i + 1) * self.order]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i64]> + '_ {
        self.entries.chunks_exact(self.order)
    }

    pub fn entry(&self, i: usize, j: usize) -> i64 {
        self.entries[i * self.order + j]
    }

    /// Squared norm of every row.
    pub fn gram_diag(&self) -> &[i64] {
        &self.gram_diag
    }

    pub fn to_rows(&self) -> Vec<Vec<i64>> {
        self.rows().map(<[i64]>::to_vec).collect()
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> i64 {
        self.entries.iter().map(|e| e.abs()).max().unwrap_or(0)
    }

    /// Writes the plain-text export: `n=<order>` then one space-separated row per line.
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "{self}")
    }
}

impl fmt::Display for CodeMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n={}", self.order)?;
        for row in self.rows() {
            let mut first = true;
            for e in row {
                if !first {
                    f.write_str(" ")?;
                }
                write!(f, "{e}")?;
                first = false;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Parses the plain-text export produced by [`CodeMatrix::write_text`].
pub fn parse_text(text: &str) -> Result<CodeMatrix, CodeError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CodeError::Invalid("missing header".into()))?;
    let order: usize = header
        .trim()
        .strip_prefix("n=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CodeError::Invalid(format!("bad header line {header:?}")))?;
    let rows = lines
        .map(|l| {
            l.split_whitespace()
                .map(|t| t.parse::<i64>().map_err(|e| CodeError::Invalid(format!("{t:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    if rows.len() != order {
        return Err(CodeError::Dimension {
            expected: order,
            got: rows.len(),
        });
    }
    CodeMatrix::from_rows(&rows)
}

/// Exact Gram matrix of a candidate code plus the two code-validity flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GramReport {
    pub order: usize,
    /// Row-major `order x order` Gram matrix `C * C^T`.
    pub gram: Vec<i128>,
    pub is_square: bool,
    /// All off-diagonal Gram entries are zero and every diagonal entry is positive.
    pub is_orthogonal: bool,
    pub all_nonzero: bool,
}

impl GramReport {
    pub fn at(&self, i: usize, j: usize) -> i128 {
        self.gram[i * self.order + j]
    }

    pub fn diagonal(&self) -> impl Iterator<Item = i128> + '_ {
        (0..self.order).map(move |i| self.at(i, i))
    }
}

/// Computes `C * C^T` in `i128` and reports orthogonality and zero entries.
pub fn verify<R: AsRef<[i64]>>(rows: &[R]) -> GramReport {
    let order = rows.len();
    let is_square = rows.iter().all(|r| r.as_ref().len() == order);
    let all_nonzero = rows.iter().all(|r| r.as_ref().iter().all(|&e| e != 0));
    let mut gram = vec![0i128; order * order];
    for i in 0..order {
        for j in i..order {
            let dot: i128 = rows[i]
                .as_ref()
                .iter()
                .zip(rows[j].as_ref())
                .map(|(&a, &b)| a as i128 * b as i128)
                .sum();
            gram[i * order + j] = dot;
            gram[j * order + i] = dot;
        }
    }
    let is_orthogonal = is_square
        && (0..order).all(|i| {
            (0..order).all(|j| {
                let g = gram[i * order + j];
                if i == j {
                    g > 0
                } else {
                    g == 0
                }
            })
        });
    GramReport {
        order,
        gram,
        is_square,
        is_orthogonal,
        all_nonzero,
    }
}

/// Sylvester-Hadamard matrix of order `2^k`.
pub fn walsh(k: u32) -> Result<CodeMatrix, CodeError> {
    if k > MAX_WALSH_EXPONENT {
        return Err(CodeError::Size {
            order: 1usize.checked_shl(k).unwrap_or(usize::MAX),
            limit: MAX_ORDER,
        });
    }
    let order = 1usize << k;
    let entries = (0..order * order)
        .map(|idx| {
            let (i, j) = (idx / order, idx % order);
            if (i & j).count_ones() % 2 == 0 {
                1
            } else {
                -1
            }
        })
        .collect();
    Ok(CodeMatrix {
        order,
        entries,
        gram_diag: vec![order as i64; order],
    })
}

/// Block composition: the `(i, j)` block of the result is `outer[i][j] * inner`.
pub fn compose(outer: &CodeMatrix, inner: &CodeMatrix) -> Result<CodeMatrix, CodeError> {
    let (r, k) = (outer.order, inner.order);
    let overflow = || CodeError::Overflow { outer: r, inner: k };
    let order = r.checked_mul(k).ok_or_else(overflow)?;
    if order > MAX_ORDER {
        return Err(CodeError::Size {
            order,
            limit: MAX_ORDER,
        });
    }
    let mut entries = Vec::with_capacity(order * order);
    for i in 0..r {
        for a in 0..k {
            for j in 0..r {
                let scale = outer.entry(i, j);
                for b in 0..k {
                    entries.push(scale.checked_mul(inner.entry(a, b)).ok_or_else(overflow)?);
                }
            }
        }
    }
    // Gram of the composition is kron(outer_gram, inner_gram); both are diagonal.
    let mut gram_diag = Vec::with_capacity(order);
    for &go in &outer.gram_diag {
        for &gi in &inner.gram_diag {
            gram_diag.push(go.checked_mul(gi).ok_or_else(overflow)?);
        }
    }
    Ok(CodeMatrix {
        order,
        entries,
        gram_diag,
    })
}

const BASE_2: [[i64; 2]; 2] = [[1, 1], [1, -1]];
const BASE_3: [[i64; 3]; 3] = [[1, 2, 2], [2, 1, -2], [2, -2, 1]];
const BASE_5: [[i64; 5]; 5] = [
    [-3, 2, 2, 2, 2],
    [2, -3, 2, 2, 2],
    [2, 2, -3, 2, 2],
    [2, 2, 2, -3, 2],
    [2, 2, 2, 2, -3],
];
const BASE_7: [[i64; 7]; 7] = [
    [-5, 2, 2, 2, 2, 2, 2],
    [2, -5, 2, 2, 2, 2, 2],
    [2, 2, -5, 2, 2, 2, 2],
    [2, 2, 2, -5, 2, 2, 2],
    [2, 2, 2, 2, -5, 2, 2],
    [2, 2, 2, 2, 2, -5, 2],
    [2, 2, 2, 2, 2, 2, -5],
];

/// Prime-order base matrices used by [`PrimeTable::build`].
///
/// Bases are stored as raw rows and validated every time they are used, so a
/// table carrying a broken base surfaces as a [`CodeError::Invalid`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimeTable {
    bases: Vec<(u64, Vec<Vec<i64>>)>,
}

impl Default for PrimeTable {
    fn default() -> Self {
        Self::standard()
    }
}

impl PrimeTable {
    /// Bases for the primes 2, 3, 5 and 7.
    pub fn standard() -> Self {
        fn rows<const P: usize>(m: &[[i64; P]; P]) -> Vec<Vec<i64>> {
            m.iter().map(|r| r.to_vec()).collect()
        }
        Self {
            bases: vec![
                (2, rows(&BASE_2)),
                (3, rows(&BASE_3)),
                (5, rows(&BASE_5)),
                (7, rows(&BASE_7)),
            ],
        }
    }

    /// Replaces (or adds) the base for `prime` without validating it.
    pub fn with_base(mut self, prime: u64, rows: Vec<Vec<i64>>) -> Self {
        match self.bases.iter_mut().find(|(p, _)| *p == prime) {
            Some(slot) => slot.1 = rows,
            None => {
                self.bases.push((prime, rows));
                self.bases.sort_by_key(|(p, _)| *p);
            }
        }
        self
    }

    pub fn primes(&self) -> impl Iterator<Item = u64> + '_ {
        self.bases.iter().map(|(p, _)| *p)
    }

    pub fn supports(&self, prime: u64) -> bool {
        self.bases.iter().any(|(p, _)| *p == prime)
    }

    /// Validated base matrix for `prime`.
    pub fn base(&self, prime: u64) -> Result<CodeMatrix, CodeError> {
        let (_, rows) = self
            .bases
            .iter()
            .find(|(p, _)| *p == prime)
            .ok_or(CodeError::UnsupportedOrder {
                order: prime as usize,
                prime,
            })?;
        let m = CodeMatrix::from_rows(rows)?;
        if m.order() as u64 != prime {
            return Err(CodeError::Invalid(format!(
                "base for prime {prime} has order {}",
                m.order()
            )));
        }
        Ok(m)
    }

    /// First prime factor of `n` that has no base, if any.
    pub fn unsupported_factor(&self, n: usize) -> Option<u64> {
        prime_factors(n as u64).into_iter().find(|&p| !self.supports(p))
    }

    pub fn is_supported_order(&self, n: usize) -> bool {
        (1..=MAX_ORDER).contains(&n) && self.unsupported_factor(n).is_none()
    }

    /// Largest supported order `<= n`; zero when `n == 0`.
    pub fn largest_supported_order(&self, n: usize) -> usize {
        (1..=n.min(MAX_ORDER))
            .rev()
            .find(|&m| self.is_supported_order(m))
            .unwrap_or(0)
    }

    /// Order-`n` code from the ascending prime factorization of `n`, composing
    /// left to right with the running product as the inner matrix.
    pub fn build(&self, n: usize) -> Result<CodeMatrix, CodeError> {
        if n == 0 {
            return Err(CodeError::Invalid("order must be positive".into()));
        }
        if n > MAX_ORDER {
            return Err(CodeError::Size {
                order: n,
                limit: MAX_ORDER,
            });
        }
        if let Some(prime) = self.unsupported_factor(n) {
            return Err(CodeError::UnsupportedOrder { order: n, prime });
        }
        let mut acc = CodeMatrix {
            order: 1,
            entries: vec![1],
            gram_diag: vec![1],
        };
        for p in prime_factors(n as u64) {
            acc = compose(&self.base(p)?, &acc)?;
        }
        Ok(acc)
    }
}

/// Base matrix of prime order `p` from the standard table.
pub fn prime_base(p: u64) -> Result<CodeMatrix, CodeError> {
    PrimeTable::standard().base(p)
}

/// Order-`n` code using the standard prime table.
pub fn build(n: usize) -> Result<CodeMatrix, CodeError> {
    PrimeTable::standard().build(n)
}

/// Prime factors of `n` in ascending order, with multiplicity.
pub fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut factors = Vec::new();
    let mut d = 2;
    while d * d <= n {
        while n.is_multiple_of(d) {
            factors.push(d);
            n /= d;
        }
        d += 1;
    }
    if n > 1 {
        factors.push(n);
    }
    factors
}

/// A spreading code laid onto the full subcarrier grid, zero on deactivated subcarriers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModifiedSignature {
    chips: Vec<i64>,
    free_mask: Vec<bool>,
    energy: i64,
}

impl ModifiedSignature {
    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }

    pub fn chips(&self) -> &[i64] {
        &self.chips
    }

    pub fn free_mask(&self) -> &[bool] {
        &self.free_mask
    }

    /// Sum of squared chips.
    pub fn energy(&self) -> i64 {
        self.energy
    }

    pub fn nonzero_count(&self) -> usize {
        self.chips.iter().filter(|&&c| c != 0).count()
    }

    pub fn dot(&self, other: &ModifiedSignature) -> i64 {
        self.chips.iter().zip(&other.chips).map(|(a, b)| a * b).sum()
    }
}

/// Places `code_row` in order onto the free (`false`) positions of `busy_mask`.
pub fn embed(code_row: &[i64], busy_mask: &[bool]) -> Result<ModifiedSignature, CodeError> {
    let n_free = busy_mask.iter().filter(|&&b| !b).count();
    if n_free != code_row.len() {
        return Err(CodeError::Dimension {
            expected: n_free,
            got: code_row.len(),
        });
    }
    if code_row.contains(&0) {
        return Err(CodeError::Invalid("code row has a zero chip".into()));
    }
    let mut row = code_row.iter();
    let chips: Vec<i64> = busy_mask
        .iter()
        .map(|&busy| if busy { 0 } else { *row.next().unwrap() })
        .collect();
    let energy = code_row
        .iter()
        .try_fold(0i64, |acc, &c| acc.checked_add(c.checked_mul(c)?))
        .ok_or(CodeError::Overflow {
            outer: code_row.len(),
            inner: 1,
        })?;
    Ok(ModifiedSignature {
        chips,
        free_mask: busy_mask.iter().map(|b| !b).collect(),
        energy,
    })
}

/// How the coordinator turns a busy estimate into signatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CodePolicy {
    /// Re-choose an orthogonal family whose order equals the number of free
    /// subcarriers (reduced to the largest supported order), then embed it.
    #[default]
    MultiLevel,
    /// Keep a fixed `+-1` Walsh family spanning all subcarriers and zero the
    /// busy chips. Rows lose orthogonality but every chip has unit magnitude.
    Binary,
}

impl CodePolicy {
    pub fn name(self) -> &'static str {
        match self {
            CodePolicy::MultiLevel => "multilevel",
            CodePolicy::Binary => "binary",
        }
    }
}

impl fmt::Display for CodePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CodePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "multilevel" | "multi-level" | "multi_level" => Ok(CodePolicy::MultiLevel),
            "binary" | "walsh" => Ok(CodePolicy::Binary),
            other => Err(format!("unknown code policy {other:?} (expected multilevel or binary)")),
        }
    }
}

/// The K signatures broadcast for one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureSet {
    pub signatures: Vec<ModifiedSignature>,
    /// Subcarriers that carry nonzero chips.
    pub active: Vec<bool>,
    /// Free subcarriers left unused because their count had no supported order.
    pub deactivated: usize,
}

impl SignatureSet {
    /// Per-subcarrier power for `user`: `energy_per_bit / energy` on active
    /// subcarriers and zero elsewhere.
    pub fn power(&self, user: usize, energy_per_bit: f64) -> Vec<f64> {
        let sig = &self.signatures[user];
        let p = energy_per_bit / sig.energy() as f64;
        self.active.iter().map(|&a| if a { p } else { 0.0 }).collect()
    }
}

/// Caches the code matrices needed to assign signatures on an `n`-subcarrier grid.
#[derive(Debug, Clone)]
pub struct CodeBook {
    subcarriers: usize,
    table: PrimeTable,
    by_order: Vec<Option<CodeMatrix>>,
    walsh: CodeMatrix,
}

impl CodeBook {
    pub fn new(subcarriers: usize) -> Result<Self, CodeError> {
        Self::with_table(subcarriers, PrimeTable::standard())
    }

    pub fn with_table(subcarriers: usize, table: PrimeTable) -> Result<Self, CodeError> {
        if subcarriers == 0 || subcarriers > MAX_ORDER {
            return Err(CodeError::Size {
                order: subcarriers,
                limit: MAX_ORDER,
            });
        }
        let by_order = (0..=subcarriers)
            .map(|n| {
                if table.is_supported_order(n) {
                    table.build(n).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let walsh = walsh(subcarriers.next_power_of_two().trailing_zeros())?;
        Ok(Self {
            subcarriers,
            table,
            by_order,
            walsh,
        })
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn table(&self) -> &PrimeTable {
        &self.table
    }

    /// Cached code of order `n`, if `n` is supported.
    pub fn code(&self, n: usize) -> Option<&CodeMatrix> {
        self.by_order.get(n).and_then(Option::as_ref)
    }

    /// Order of the family the multi-level policy uses for `n_free` free subcarriers.
    pub fn usable_order(&self, n_free: usize) -> usize {
        (1..=n_free.min(self.subcarriers))
            .rev()
            .find(|&m| self.by_order[m].is_some())
            .unwrap_or(0)
    }

    /// Number of orthogonal rows the policy offers for `n_free` free subcarriers.
    pub fn rows_available(&self, policy: CodePolicy, n_free: usize) -> usize {
        match policy {
            CodePolicy::MultiLevel => self.usable_order(n_free),
            CodePolicy::Binary if n_free == 0 => 0,
            CodePolicy::Binary => self.walsh.order(),
        }
    }

    /// Builds signatures for `users` users given the coordinator's busy estimate.
    pub fn assign(&self, policy: CodePolicy, est_busy: &[bool], users: usize) -> Result<SignatureSet, CodeError> {
        if est_busy.len() != self.subcarriers {
            return Err(CodeError::Dimension {
                expected: self.subcarriers,
                got: est_busy.len(),
            });
        }
        let n_free = est_busy.iter().filter(|&&b| !b).count();
        let rows = self.rows_available(policy, n_free);
        if users == 0 || users > rows {
            return Err(CodeError::Capacity { users, rows });
        }
        match policy {
            CodePolicy::MultiLevel => {
                let code = self.code(rows).expect("usable order is cached");
                // Keep the first `rows` free subcarriers; deactivate the rest.
                let mut kept = 0;
                let active: Vec<bool> = est_busy
                    .iter()
                    .map(|&busy| {
                        let take = !busy && kept < rows;
                        kept += take as usize;
                        take
                    })
                    .collect();
                let mask: Vec<bool> = active.iter().map(|a| !a).collect();
                let signatures = (0..users)
                    .map(|k| embed(code.row(k), &mask))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(SignatureSet {
                    signatures,
                    active,
                    deactivated: n_free - rows,
                })
            }
            CodePolicy::Binary => {
                let signatures = (0..users)
                    .map(|k| {
                        let row: Vec<i64> = self.walsh.row(k)[..self.subcarriers]
                            .iter()
                            .zip(est_busy)
                            .filter(|(_, &busy)| !busy)
                            .map(|(&c, _)| c)
                            .collect();
                        embed(&row, est_busy)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(SignatureSet {
                    signatures,
                    active: est_busy.iter().map(|b| !b).collect(),
                    deactivated: 0,
                })
            }
        }
    }
}
