//! Exact rational linear algebra: labeled matrices, minors, ranks, and
//! projective vectors.
//!
//! Everything downstream of this module is a sign test or an equality of
//! polynomials in rational inputs, so all arithmetic is exact over ℚ with
//! arbitrary-precision integers. Determinants run fraction-free (Bareiss)
//! over big integers after clearing denominators; enumerating all maximal
//! minors shares work through a memoized Laplace expansion. No floating
//! point exists anywhere in the crate.

use std::collections::BTreeMap;
use std::fmt;

use num::bigint::BigInt;
use num::rational::Ratio;
use num::traits::{One, Signed, Zero};
use num::Integer;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Exact rational number: arbitrary-precision numerator and positive
/// denominator, always in lowest terms (maintained by the representation).
pub type Rat = Ratio<BigInt>;

/// Errors from the exact-arithmetic layer.
#[derive(Debug, thiserror::Error)]
pub enum ExactError {
    #[error("unknown label {0}")]
    UnknownLabel(String),
    #[error("duplicate label {0}")]
    DuplicateLabel(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("matrix is not rectangular")]
    NotRectangular,
    #[error("more rows than columns")]
    TooManyRows,
    #[error("projective vectors have different key sets")]
    KeyMismatch,
    #[error("cannot parse rational from {0:?}")]
    BadRational(String),
    #[error("cannot parse marker from {0:?}")]
    BadMarker(String),
}

/// Shorthand for building a rational from an integer pair.
pub fn rat(num: i64, den: i64) -> Rat {
    Ratio::new(BigInt::from(num), BigInt::from(den))
}

/// Shorthand for an integer rational.
pub fn rat_int(n: i64) -> Rat {
    Ratio::from_integer(BigInt::from(n))
}

/// Renders a rational as `p/q` (`q` omitted when 1).
pub fn rat_to_string(r: &Rat) -> String {
    r.to_string()
}

/// Parses `p/q` or `p` into a rational.
pub fn rat_from_str(s: &str) -> Result<Rat, ExactError> {
    s.trim()
        .parse::<Rat>()
        .map_err(|_| ExactError::BadRational(s.to_string()))
}

pub(crate) fn serialize_rat<S: Serializer>(r: &Rat, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&rat_to_string(r))
}

pub(crate) fn deserialize_rat<'de, D: Deserializer<'de>>(d: D) -> Result<Rat, D::Error> {
    let s = String::deserialize(d)?;
    rat_from_str(&s).map_err(D::Error::custom)
}

/// A column/marker label: an integer, or one of the distinguished symbolic
/// markers `A`, `B`, `l` used by the hiding-particle and forward-limit
/// constructions.
///
/// The derived `Ord` is the *canonical* order used to normalize twistor
/// brackets (integers ascending, then `A`, then `B`, then `l`). The
/// *positional* order of markers inside a matrix is carried by [`IndexSet`]
/// and is independent of this (for instance the forward limit works on the
/// positional order 1 < … < n−1 < A < B < n).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Marker {
    Int(i64),
    A,
    B,
    L,
}

impl Marker {
    /// The integer value, if this is an integer marker.
    pub fn as_int(self) -> Option<i64> {
        match self {
            Marker::Int(i) => Some(i),
            _ => None,
        }
    }
}

impl From<i64> for Marker {
    fn from(i: i64) -> Self {
        Marker::Int(i)
    }
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Marker::Int(i) => write!(f, "{i}"),
            Marker::A => write!(f, "A"),
            Marker::B => write!(f, "B"),
            Marker::L => write!(f, "l"),
        }
    }
}

impl Serialize for Marker {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Marker::Int(i) => s.serialize_i64(*i),
            Marker::A => s.serialize_str("A"),
            Marker::B => s.serialize_str("B"),
            Marker::L => s.serialize_str("l"),
        }
    }
}

impl<'de> Deserialize<'de> for Marker {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(i) => Ok(Marker::Int(i)),
            Raw::Str(s) => match s.as_str() {
                "A" => Ok(Marker::A),
                "B" => Ok(Marker::B),
                "l" | "L" => Ok(Marker::L),
                other => other
                    .parse::<i64>()
                    .map(Marker::Int)
                    .map_err(|_| D::Error::custom(format!("bad marker {other:?}"))),
            },
        }
    }
}

/// A finite linearly ordered set of markers.
///
/// The order is positional: a marker's place in the sequence is its rank,
/// regardless of any numeric value. Insertion and removal preserve the
/// relative order of the survivors, and min/max/predecessor/successor are
/// answered against the positional order.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize)]
#[serde(transparent)]
pub struct IndexSet {
    labels: Vec<Marker>,
}

impl IndexSet {
    /// Builds an index set from distinct labels in the given order.
    pub fn new(labels: Vec<Marker>) -> Result<Self, ExactError> {
        for (i, m) in labels.iter().enumerate() {
            if labels[..i].contains(m) {
                return Err(ExactError::DuplicateLabel(m.to_string()));
            }
        }
        Ok(IndexSet { labels })
    }

    /// The index set {1, 2, …, n}.
    pub fn ints(n: i64) -> Self {
        IndexSet {
            labels: (1..=n).map(Marker::Int).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Marker> + '_ {
        self.labels.iter().copied()
    }

    pub fn labels(&self) -> &[Marker] {
        &self.labels
    }

    pub fn contains(&self, m: Marker) -> bool {
        self.labels.contains(&m)
    }

    /// Position of a marker in the order (0-based).
    pub fn position(&self, m: Marker) -> Result<usize, ExactError> {
        self.labels
            .iter()
            .position(|&x| x == m)
            .ok_or_else(|| ExactError::UnknownLabel(m.to_string()))
    }

    pub fn at(&self, pos: usize) -> Marker {
        self.labels[pos]
    }

    pub fn min(&self) -> Option<Marker> {
        self.labels.first().copied()
    }

    pub fn max(&self) -> Option<Marker> {
        self.labels.last().copied()
    }

    /// The marker immediately after `m`, if any.
    pub fn successor(&self, m: Marker) -> Result<Option<Marker>, ExactError> {
        let p = self.position(m)?;
        Ok(self.labels.get(p + 1).copied())
    }

    /// The marker immediately before `m`, if any.
    pub fn predecessor(&self, m: Marker) -> Result<Option<Marker>, ExactError> {
        let p = self.position(m)?;
        Ok(if p == 0 { None } else { Some(self.labels[p - 1]) })
    }

    /// Successor in the cyclic order (the maximum wraps to the minimum).
    pub fn successor_cyclic(&self, m: Marker) -> Result<Marker, ExactError> {
        let p = self.position(m)?;
        Ok(self.labels[(p + 1) % self.labels.len()])
    }

    /// Inserts `new` at position `pos`, shifting later markers right.
    pub fn insert_at(&self, pos: usize, new: Marker) -> Result<Self, ExactError> {
        if self.contains(new) {
            return Err(ExactError::DuplicateLabel(new.to_string()));
        }
        let mut labels = self.labels.clone();
        labels.insert(pos, new);
        Ok(IndexSet { labels })
    }

    /// Inserts `new` immediately before the existing marker `before`.
    pub fn insert_before(&self, before: Marker, new: Marker) -> Result<Self, ExactError> {
        let p = self.position(before)?;
        self.insert_at(p, new)
    }

    /// Inserts `new` immediately after the existing marker `after`.
    pub fn insert_after(&self, after: Marker, new: Marker) -> Result<Self, ExactError> {
        let p = self.position(after)?;
        self.insert_at(p + 1, new)
    }

    /// Removes a marker, preserving the order of the survivors.
    pub fn remove(&self, m: Marker) -> Result<Self, ExactError> {
        let p = self.position(m)?;
        let mut labels = self.labels.clone();
        labels.remove(p);
        Ok(IndexSet { labels })
    }

    /// Removes several markers at once.
    pub fn without(&self, ms: &[Marker]) -> Result<Self, ExactError> {
        let mut out = self.clone();
        for &m in ms {
            out = out.remove(m)?;
        }
        Ok(out)
    }
}

impl<'de> Deserialize<'de> for IndexSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let labels = Vec::<Marker>::deserialize(d)?;
        IndexSet::new(labels).map_err(D::Error::custom)
    }
}

/// A dense matrix over ℚ with positionally ordered column labels.
///
/// Rows are anonymous (identified by index); columns are identified by
/// [`Marker`] labels through an [`IndexSet`]. All minors are computed
/// exactly.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ExactMatrix {
    cols: IndexSet,
    rows: Vec<Vec<Rat>>,
}

impl ExactMatrix {
    /// Builds a matrix from rows; every row must match the column count.
    pub fn new(cols: IndexSet, rows: Vec<Vec<Rat>>) -> Result<Self, ExactError> {
        if rows.iter().any(|r| r.len() != cols.len()) {
            return Err(ExactError::NotRectangular);
        }
        Ok(ExactMatrix { cols, rows })
    }

    /// The all-zero matrix with the given shape.
    pub fn zero(cols: IndexSet, nrows: usize) -> Self {
        let row = vec![Rat::zero(); cols.len()];
        ExactMatrix {
            cols,
            rows: vec![row; nrows],
        }
    }

    pub fn cols(&self) -> &IndexSet {
        &self.cols
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, r: usize) -> &[Rat] {
        &self.rows[r]
    }

    pub fn rows(&self) -> &[Vec<Rat>] {
        &self.rows
    }

    /// Entry by row index and column label.
    pub fn entry(&self, r: usize, col: Marker) -> Result<&Rat, ExactError> {
        Ok(&self.rows[r][self.cols.position(col)?])
    }

    pub fn set_entry(&mut self, r: usize, col: Marker, v: Rat) -> Result<(), ExactError> {
        let p = self.cols.position(col)?;
        self.rows[r][p] = v;
        Ok(())
    }

    /// Entry by row and column position.
    pub fn at(&self, r: usize, c: usize) -> &Rat {
        &self.rows[r][c]
    }

    pub fn set_at(&mut self, r: usize, c: usize, v: Rat) {
        self.rows[r][c] = v;
    }

    /// Inserts a new labeled column at `pos` with the given entries.
    pub fn insert_col(
        &self,
        pos: usize,
        label: Marker,
        values: Vec<Rat>,
    ) -> Result<Self, ExactError> {
        if values.len() != self.nrows() {
            return Err(ExactError::SizeMismatch(format!(
                "column of length {} into matrix with {} rows",
                values.len(),
                self.nrows()
            )));
        }
        let cols = self.cols.insert_at(pos, label)?;
        let rows = self
            .rows
            .iter()
            .zip(values)
            .map(|(r, v)| {
                let mut r = r.clone();
                r.insert(pos, v);
                r
            })
            .collect();
        Ok(ExactMatrix { cols, rows })
    }

    /// Removes the column labeled `m`.
    pub fn remove_col(&self, m: Marker) -> Result<Self, ExactError> {
        let p = self.cols.position(m)?;
        let cols = self.cols.remove(m)?;
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.remove(p);
                r
            })
            .collect();
        Ok(ExactMatrix { cols, rows })
    }

    /// Appends a row.
    pub fn push_row(&mut self, row: Vec<Rat>) -> Result<(), ExactError> {
        if row.len() != self.ncols() {
            return Err(ExactError::NotRectangular);
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn remove_row(&mut self, r: usize) -> Vec<Rat> {
        self.rows.remove(r)
    }

    /// column[dst] += t · column[src]
    pub fn add_col_multiple(&mut self, src: Marker, dst: Marker, t: &Rat) -> Result<(), ExactError> {
        let s = self.cols.position(src)?;
        let d = self.cols.position(dst)?;
        for row in &mut self.rows {
            let add = &row[s] * t;
            row[d] += add;
        }
        Ok(())
    }

    /// column[m] *= t
    pub fn scale_col(&mut self, m: Marker, t: &Rat) -> Result<(), ExactError> {
        let p = self.cols.position(m)?;
        for row in &mut self.rows {
            row[p] *= t;
        }
        Ok(())
    }

    /// row[dst] += t · row[src]
    pub fn add_row_multiple(&mut self, src: usize, dst: usize, t: &Rat) {
        let add: Vec<Rat> = self.rows[src].iter().map(|v| v * t).collect();
        for (d, a) in self.rows[dst].iter_mut().zip(add) {
            *d += a;
        }
    }

    /// row[r] *= t
    pub fn scale_row(&mut self, r: usize, t: &Rat) {
        for v in &mut self.rows[r] {
            *v *= t;
        }
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        self.rows.swap(a, b);
    }

    /// Vertical concatenation; both matrices must share the column labels.
    pub fn stack(top: &ExactMatrix, bottom: &ExactMatrix) -> Result<ExactMatrix, ExactError> {
        if top.cols != bottom.cols {
            return Err(ExactError::SizeMismatch(
                "stacked matrices must share columns".into(),
            ));
        }
        let mut rows = top.rows.clone();
        rows.extend(bottom.rows.iter().cloned());
        Ok(ExactMatrix {
            cols: top.cols.clone(),
            rows,
        })
    }

    /// The submatrix on `rows` × `cols`, both taken in request order.
    pub fn submatrix(&self, rows: &[usize], cols: &[Marker]) -> Result<ExactMatrix, ExactError> {
        let positions: Vec<usize> = cols
            .iter()
            .map(|&m| self.cols.position(m))
            .collect::<Result<_, _>>()?;
        let sub_cols = IndexSet::new(cols.to_vec())?;
        let sub_rows = rows
            .iter()
            .map(|&r| {
                if r >= self.nrows() {
                    return Err(ExactError::SizeMismatch(format!("row {r} out of range")));
                }
                Ok(positions.iter().map(|&p| self.rows[r][p].clone()).collect())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExactMatrix {
            cols: sub_cols,
            rows: sub_rows,
        })
    }

    /// Exact determinant of a square matrix (fraction-free Bareiss after
    /// clearing denominators row by row).
    pub fn det(&self) -> Result<Rat, ExactError> {
        if self.nrows() != self.ncols() {
            return Err(ExactError::SizeMismatch(format!(
                "determinant of a {}×{} matrix",
                self.nrows(),
                self.ncols()
            )));
        }
        let n = self.nrows();
        if n == 0 {
            return Ok(Rat::one());
        }
        let mut scale = BigInt::one();
        let mut int_rows: Vec<Vec<BigInt>> = Vec::with_capacity(n);
        for row in &self.rows {
            let mut lcm = BigInt::one();
            for v in row {
                lcm = lcm.lcm(v.denom());
            }
            int_rows.push(
                row.iter()
                    .map(|v| v.numer() * (&lcm / v.denom()))
                    .collect(),
            );
            scale *= lcm;
        }
        Ok(Rat::new(bareiss_det(int_rows), scale))
    }

    /// Minor on the requested rows and column labels, in request order, so
    /// the value is alternating under swaps within the request. A repeated
    /// label in the request yields 0, as for any determinant.
    pub fn minor(&self, rows: &[usize], cols: &[Marker]) -> Result<Rat, ExactError> {
        if rows.len() != cols.len() {
            return Err(ExactError::SizeMismatch(format!(
                "minor on {} rows and {} columns",
                rows.len(),
                cols.len()
            )));
        }
        let positions: Vec<usize> = cols
            .iter()
            .map(|&m| self.cols.position(m))
            .collect::<Result<_, _>>()?;
        let sub_rows: Vec<Vec<Rat>> = rows
            .iter()
            .map(|&r| {
                if r >= self.nrows() {
                    return Err(ExactError::SizeMismatch(format!("row {r} out of range")));
                }
                Ok(positions.iter().map(|&p| self.rows[r][p].clone()).collect())
            })
            .collect::<Result<_, _>>()?;
        ExactMatrix {
            cols: IndexSet {
                labels: (1..=cols.len() as i64).map(Marker::Int).collect(),
            },
            rows: sub_rows,
        }
        .det()
    }

    /// Exact rank via fraction-free elimination.
    pub fn rank(&self) -> usize {
        let mut m: Vec<Vec<BigInt>> = self
            .rows
            .iter()
            .map(|row| {
                let mut lcm = BigInt::one();
                for v in row {
                    lcm = lcm.lcm(v.denom());
                }
                row.iter().map(|v| v.numer() * (&lcm / v.denom())).collect()
            })
            .collect();
        let nr = m.len();
        let nc = self.ncols();
        let mut rank = 0usize;
        let mut prev = BigInt::one();
        for col in 0..nc {
            let Some(pivot) = (rank..nr).find(|&r| !m[r][col].is_zero()) else {
                continue;
            };
            m.swap(rank, pivot);
            for r in rank + 1..nr {
                for c in col + 1..nc {
                    let t = &m[r][c] * &m[rank][col] - &m[r][col] * &m[rank][c];
                    m[r][c] = &t / &prev;
                }
                m[r][col] = BigInt::zero();
            }
            prev = m[rank][col].clone();
            rank += 1;
            if rank == nr {
                break;
            }
        }
        rank
    }

    /// All maximal minors, keyed by the column subset (in stored column
    /// order), as a projective vector. Work is shared across subsets by a
    /// level-by-level Laplace expansion.
    pub fn maximal_minors(&self) -> Result<ProjVec, ExactError> {
        let k = self.nrows();
        let m = self.ncols();
        if k > m {
            return Err(ExactError::TooManyRows);
        }
        // level[r] maps each r-subset (bitmask over column positions) to the
        // minor of the first r rows on that subset.
        let mut level: BTreeMap<u64, Rat> = BTreeMap::new();
        level.insert(0u64, Rat::one());
        for r in 0..k {
            let mut next: BTreeMap<u64, Rat> = BTreeMap::new();
            for (&mask, _) in &level {
                let mut free = Vec::new();
                for c in 0..m {
                    if mask & (1 << c) == 0 {
                        free.push(c);
                    }
                }
                for &c in &free {
                    let new_mask = mask | (1 << c);
                    if next.contains_key(&new_mask) {
                        continue;
                    }
                    // Expand along row r (the last row of the submatrix).
                    let mut total = Rat::zero();
                    let mut pos = 0usize;
                    for cc in 0..m {
                        if new_mask & (1 << cc) == 0 {
                            continue;
                        }
                        let e = &self.rows[r][cc];
                        if !e.is_zero() {
                            let sub = level
                                .get(&(new_mask & !(1 << cc)))
                                .expect("minor table must contain all sub-subsets");
                            let term = e * sub;
                            if (r + pos) % 2 == 0 {
                                total += term;
                            } else {
                                total -= term;
                            }
                        }
                        pos += 1;
                    }
                    next.insert(new_mask, total);
                }
            }
            level = next;
        }
        let mut entries = BTreeMap::new();
        for (mask, val) in level {
            let key: Vec<Marker> = (0..m)
                .filter(|c| mask & (1 << c) != 0)
                .map(|c| self.cols.at(c))
                .collect();
            entries.insert(key, val);
        }
        Ok(ProjVec { entries })
    }

    /// Reduced row echelon form, returning the reduced matrix and the pivot
    /// column positions. Deterministic (first nonzero pivot).
    pub fn rref(&self) -> (ExactMatrix, Vec<usize>) {
        let mut m = self.clone();
        let nr = m.nrows();
        let nc = m.ncols();
        let mut pivots = Vec::new();
        let mut row = 0usize;
        for col in 0..nc {
            if row == nr {
                break;
            }
            let Some(p) = (row..nr).find(|&r| !m.rows[r][col].is_zero()) else {
                continue;
            };
            m.swap_rows(row, p);
            let inv = m.rows[row][col].recip();
            m.scale_row(row, &inv);
            for r in 0..nr {
                if r != row && !m.rows[r][col].is_zero() {
                    let t = -m.rows[r][col].clone();
                    m.add_row_multiple(row, r, &t);
                }
            }
            pivots.push(col);
            row += 1;
        }
        (m, pivots)
    }

    /// A basis of the right kernel {u : M·u = 0}, as rows over the same
    /// column labels. Deterministic.
    pub fn kernel(&self) -> Vec<Vec<Rat>> {
        let (r, pivots) = self.rref();
        let nc = self.ncols();
        let free: Vec<usize> = (0..nc).filter(|c| !pivots.contains(c)).collect();
        let mut basis = Vec::with_capacity(free.len());
        for &f in &free {
            let mut v = vec![Rat::zero(); nc];
            v[f] = Rat::one();
            for (prow, &pcol) in pivots.iter().enumerate() {
                v[pcol] = -r.rows[prow][f].clone();
            }
            basis.push(v);
        }
        basis
    }

    /// True when `v` lies in the row span.
    pub fn row_span_contains(&self, v: &[Rat]) -> bool {
        let mut ext = self.clone();
        if ext.push_row(v.to_vec()).is_err() {
            return false;
        }
        ext.rank() == self.rank()
    }
}

impl Serialize for ExactMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("ExactMatrix", 2)?;
        st.serialize_field("cols", &self.cols)?;
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(rat_to_string).collect())
            .collect();
        st.serialize_field("rows", &rows)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for ExactMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            cols: IndexSet,
            rows: Vec<Vec<String>>,
        }
        let raw = Raw::deserialize(d)?;
        let rows = raw
            .rows
            .iter()
            .map(|r| r.iter().map(|s| rat_from_str(s)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(D::Error::custom)?;
        ExactMatrix::new(raw.cols, rows).map_err(D::Error::custom)
    }
}

impl fmt::Display for ExactMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header: Vec<String> = self.cols.iter().map(|m| m.to_string()).collect();
        writeln!(f, "[{}]", header.join(" "))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(rat_to_string).collect();
            writeln!(f, "[{}]", cells.join(" "))?;
        }
        Ok(())
    }
}

/// Fraction-free Bareiss determinant of an integer matrix.
fn bareiss_det(mut m: Vec<Vec<BigInt>>) -> BigInt {
    let n = m.len();
    if n == 0 {
        return BigInt::one();
    }
    let mut sign = false;
    let mut prev = BigInt::one();
    for p in 0..n - 1 {
        if m[p][p].is_zero() {
            let Some(r) = (p + 1..n).find(|&r| !m[r][p].is_zero()) else {
                return BigInt::zero();
            };
            m.swap(p, r);
            sign = !sign;
        }
        for i in p + 1..n {
            for j in p + 1..n {
                let t = &m[i][j] * &m[p][p] - &m[i][p] * &m[p][j];
                m[i][j] = &t / &prev; // exact by the Bareiss identity
            }
            m[i][p] = BigInt::zero();
        }
        prev = m[p][p].clone();
    }
    let d = m[n - 1][n - 1].clone();
    if sign {
        -d
    } else {
        d
    }
}

/// A vector of rationals keyed by index subsets, compared projectively:
/// two vectors are equal when one is a nonzero rational multiple of the
/// other.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ProjVec {
    entries: BTreeMap<Vec<Marker>, Rat>,
}

impl ProjVec {
    pub fn new(entries: BTreeMap<Vec<Marker>, Rat>) -> Self {
        ProjVec { entries }
    }

    pub fn from_pairs(pairs: Vec<(Vec<Marker>, Rat)>) -> Result<Self, ExactError> {
        let mut entries = BTreeMap::new();
        for (k, v) in pairs {
            if entries.insert(k.clone(), v).is_some() {
                return Err(ExactError::DuplicateLabel(format!("{k:?}")));
            }
        }
        Ok(ProjVec { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &[Marker]) -> Option<&Rat> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<Marker>, &Rat)> {
        self.entries.iter()
    }

    /// True when every value is zero.
    pub fn is_zero(&self) -> bool {
        self.entries.values().all(|v| v.is_zero())
    }

    /// True when every value is ≥ 0 or every value is ≤ 0 (projective
    /// nonnegativity), with at least one nonzero.
    pub fn is_sign_definite_nonneg(&self) -> bool {
        let any_pos = self.entries.values().any(|v| v.is_positive());
        let any_neg = self.entries.values().any(|v| v.is_negative());
        !(any_pos && any_neg) && (any_pos || any_neg)
    }

    /// Scales every entry (nonzero λ), staying in the same projective class.
    pub fn scaled(&self, lambda: &Rat) -> ProjVec {
        ProjVec {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v * lambda))
                .collect(),
        }
    }
}

/// Projective equality: true iff there is a single nonzero λ with
/// `v = λ·w`, tested by cross-multiplication (no division). The two key
/// sets must agree exactly.
pub fn proj_eq(v: &ProjVec, w: &ProjVec) -> Result<bool, ExactError> {
    if v.entries.len() != w.entries.len()
        || !v.entries.keys().eq(w.entries.keys())
    {
        return Err(ExactError::KeyMismatch);
    }
    // Find a reference key where either side is nonzero.
    let Some((key, _)) = v
        .entries
        .iter()
        .find(|(k, val)| !val.is_zero() || !w.entries[*k].is_zero())
    else {
        return Ok(true); // both identically zero
    };
    let (vr, wr) = (&v.entries[key], &w.entries[key]);
    if vr.is_zero() || wr.is_zero() {
        return Ok(false); // one vanishes at the reference, the other does not
    }
    for (k, vv) in &v.entries {
        let ww = &w.entries[k];
        if vv * wr != ww * vr {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(cols: i64, rows: Vec<Vec<i64>>) -> ExactMatrix {
        ExactMatrix::new(
            IndexSet::ints(cols),
            rows.into_iter()
                .map(|r| r.into_iter().map(rat_int).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_minor_is_one() {
        let id = m(2, vec![vec![1, 0], vec![0, 1]]);
        let v = id
            .minor(&[0, 1], &[Marker::Int(1), Marker::Int(2)])
            .unwrap();
        assert_eq!(v, rat_int(1));
    }

    #[test]
    fn vandermonde_3x3_minor() {
        // Rows (1, x, x²) evaluated at x ∈ {1, 2, 3}, full minor = 2.
        let v = m(3, vec![vec![1, 1, 1], vec![1, 2, 3], vec![1, 4, 9]]);
        let full = v
            .minor(&[0, 1, 2], &[Marker::Int(1), Marker::Int(2), Marker::Int(3)])
            .unwrap();
        assert_eq!(full, rat_int(2));
    }

    #[test]
    fn repeated_column_minor_is_zero() {
        let a = m(3, vec![vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 10]]);
        let v = a
            .minor(&[0, 1, 2], &[Marker::Int(1), Marker::Int(1), Marker::Int(2)])
            .unwrap();
        assert_eq!(v, rat_int(0));
    }

    #[test]
    fn minor_is_alternating_in_request_order() {
        let a = m(3, vec![vec![1, 2, 3], vec![4, 5, 7]]);
        let ab = a.minor(&[0, 1], &[Marker::Int(1), Marker::Int(2)]).unwrap();
        let ba = a.minor(&[0, 1], &[Marker::Int(2), Marker::Int(1)]).unwrap();
        assert_eq!(ab, -ba);
    }

    #[test]
    fn maximal_minors_of_row_vector() {
        let a = m(3, vec![vec![2, 0, 5]]);
        let mm = a.maximal_minors().unwrap();
        assert_eq!(mm.get(&[Marker::Int(1)]), Some(&rat_int(2)));
        assert_eq!(mm.get(&[Marker::Int(2)]), Some(&rat_int(0)));
        assert_eq!(mm.get(&[Marker::Int(3)]), Some(&rat_int(5)));
    }

    #[test]
    fn maximal_minors_square_equals_det() {
        let a = m(2, vec![vec![1, 2], vec![3, 4]]);
        let mm = a.maximal_minors().unwrap();
        assert_eq!(mm.len(), 1);
        assert_eq!(mm.get(&[Marker::Int(1), Marker::Int(2)]), Some(&rat_int(-2)));
    }

    #[test]
    fn vandermonde_2x4_all_minors_positive() {
        let a = m(4, vec![vec![1, 1, 1, 1], vec![1, 2, 3, 4]]);
        let mm = a.maximal_minors().unwrap();
        assert_eq!(mm.len(), 6);
        assert!(mm.iter().all(|(_, v)| v.is_positive()));
    }

    #[test]
    fn rank_zero_matrix() {
        assert_eq!(ExactMatrix::zero(IndexSet::ints(4), 3).rank(), 0);
    }

    #[test]
    fn rank_with_equal_rows() {
        let a = m(5, vec![vec![1, 2, 3, 4, 5], vec![1, 2, 3, 4, 5], vec![0, 1, 0, 1, 0]]);
        assert!(a.rank() <= 2);
        assert_eq!(a.rank(), 2);
    }

    #[test]
    fn proj_eq_scaling_and_negation() {
        let a = m(4, vec![vec![1, 1, 1, 1], vec![1, 2, 3, 4]]);
        let v = a.maximal_minors().unwrap();
        let w = v.scaled(&rat_int(7));
        let neg = v.scaled(&rat_int(-1));
        assert!(proj_eq(&v, &w).unwrap());
        assert!(proj_eq(&v, &neg).unwrap());
    }

    #[test]
    fn proj_eq_detects_difference() {
        let v = ProjVec::from_pairs(vec![
            (vec![Marker::Int(1), Marker::Int(2)], rat_int(1)),
            (vec![Marker::Int(1), Marker::Int(3)], rat_int(2)),
        ])
        .unwrap();
        let w = ProjVec::from_pairs(vec![
            (vec![Marker::Int(1), Marker::Int(2)], rat_int(1)),
            (vec![Marker::Int(1), Marker::Int(3)], rat_int(3)),
        ])
        .unwrap();
        assert!(!proj_eq(&v, &w).unwrap());
    }

    #[test]
    fn index_set_positional_order_with_symbols() {
        // 1 < … < 4 < A < B < 5 positionally, regardless of canonical order.
        let s = IndexSet::new(vec![
            Marker::Int(1),
            Marker::Int(2),
            Marker::Int(3),
            Marker::Int(4),
            Marker::A,
            Marker::B,
            Marker::Int(5),
        ])
        .unwrap();
        assert_eq!(s.successor(Marker::Int(4)).unwrap(), Some(Marker::A));
        assert_eq!(s.successor(Marker::B).unwrap(), Some(Marker::Int(5)));
        assert_eq!(s.max(), Some(Marker::Int(5)));
        assert_eq!(s.successor_cyclic(Marker::Int(5)).unwrap(), Marker::Int(1));
    }

    #[test]
    fn kernel_is_exact() {
        let a = m(4, vec![vec![1, 2, 3, 4], vec![0, 1, 1, 1]]);
        let ker = a.kernel();
        assert_eq!(ker.len(), 2);
        for v in &ker {
            for r in 0..a.nrows() {
                let dot: Rat = (0..4).map(|c| a.at(r, c) * &v[c]).sum();
                assert!(dot.is_zero());
            }
        }
    }

    #[test]
    fn rational_round_trip() {
        let r = rat(-6, 4);
        assert_eq!(rat_to_string(&r), "-3/2");
        assert_eq!(rat_from_str("-3/2").unwrap(), r);
        assert_eq!(rat_from_str("5").unwrap(), rat_int(5));
    }
}
