//! Marked chord diagrams and their boundary combinatorics.
//!
//! A chord diagram on markers `1..n` is a collection of `k + ell` chords
//! `(a, a+1, c, c+1)` drawn between consecutive-marker "dominoes", subject to
//! non-crossing and decoration rules. For `ell = 0` all chords are black; for
//! `ell = 1` a colored cluster (red / blue / purple, plus a virtual yellow
//! end) records how the single loop interacts with the tree structure. Each
//! diagram indexes one cell of the recursive decomposition implemented in the
//! rest of this crate, and the combinatorics here drive everything that the
//! geometry needs:
//!
//! * [`ChordDiagram::validate`] — the decoration rules, as a violation list;
//! * [`enumerate`] — all diagrams for given `(n, k, ell)`, built by the same
//!   three-way recursion (marker insertion / split / loop closure) that
//!   produces the cells themselves;
//! * [`ChordDiagram::stats`] — the counting statistics (`below`, `after`,
//!   `between`, `ahead`, `outside`) used by sign rules;
//! * [`ChordDiagram::subdiagram`] — the left / right / pre / loop-core
//!   subdiagrams of the recursion, on honest marker subsets;
//! * [`ChordDiagram::generation_sequence`] — the recipe that rebuilds a
//!   diagram from scratch, with [`diagram_of_steps`] as the replay;
//! * [`ChordDiagram::shift`] / [`ChordDiagram::match_shift`] — the boundary
//!   shifts and the involution pairing a shift of one diagram with the unique
//!   shift of its neighbor that undoes it.

use std::collections::HashMap;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::exact_core::{IndexSet, Marker};

/// Chord decoration. Black is the undecorated (tree) color; red, blue and
/// purple only occur in one-loop diagrams, where they all share the yellow
/// end `(c*, d*)` of the top red chord.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub enum Color {
    Black,
    Red,
    Blue,
    Purple,
}

impl Color {
    pub fn name(self) -> &'static str {
        match self {
            Color::Black => "black",
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Purple => "purple",
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Color {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Color {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        match raw.as_str() {
            "black" => Ok(Color::Black),
            "red" => Ok(Color::Red),
            "blue" => Ok(Color::Blue),
            "purple" => Ok(Color::Purple),
            other => Err(D::Error::custom(format!("unknown chord color {other:?}"))),
        }
    }
}

/// One chord `(a, b, c, d)` with `b = a + 1`, `d = c + 1`, `b <= c`, written
/// in positions `1..=n-1` of the diagram's marker order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Chord {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub d: usize,
    pub color: Color,
}

impl Chord {
    pub fn new(a: usize, c: usize, color: Color) -> Self {
        Chord {
            a,
            b: a + 1,
            c,
            d: c + 1,
            color,
        }
    }

    pub fn start(&self) -> (usize, usize) {
        (self.a, self.b)
    }

    pub fn end(&self) -> (usize, usize) {
        (self.c, self.d)
    }

    /// Short: the start and end dominoes overlap in one segment (`c = b + 1`).
    pub fn is_short(&self) -> bool {
        self.c == self.b + 1
    }

    /// Very short: the start and end dominoes coincide up to one marker
    /// (`c = b`), so the chord occupies three consecutive markers.
    pub fn is_very_short(&self) -> bool {
        self.c == self.b
    }
}

impl fmt::Display for Chord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({},{},{},{})",
            self.color, self.a, self.b, self.c, self.d
        )
    }
}

/// Selects either a real chord (by 1-based label in storage order) or the
/// virtual yellow chord `(c*, d*)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum ChordRef {
    Label(usize),
    Star,
}

impl fmt::Display for ChordRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChordRef::Label(l) => write!(f, "{l}"),
            ChordRef::Star => write!(f, "star"),
        }
    }
}

/// A boundary shift of a chord diagram. Labels refer to chords of the
/// diagram being shifted, in storage order (1-based). `DeltaZero` is the red
/// shift (demote the top red chord); `Epsilon` must name the lowest blue
/// chord.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum ShiftName {
    Alpha(usize),
    Beta(usize),
    Gamma(ChordRef),
    Delta(ChordRef),
    Epsilon(usize),
    DeltaZero,
}

impl fmt::Display for ShiftName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShiftName::Alpha(i) => write!(f, "alpha_{i}"),
            ShiftName::Beta(i) => write!(f, "beta_{i}"),
            ShiftName::Gamma(r) => write!(f, "gamma_{r}"),
            ShiftName::Delta(r) => write!(f, "delta_{r}"),
            ShiftName::Epsilon(i) => write!(f, "epsilon_{i}"),
            ShiftName::DeltaZero => write!(f, "delta_0"),
        }
    }
}

impl std::str::FromStr for ShiftName {
    type Err = ChordError;

    fn from_str(s: &str) -> Result<Self, ChordError> {
        let (kind, arg) = s
            .rsplit_once('_')
            .ok_or_else(|| ChordError::BadShiftName(s.to_string()))?;
        let chord_ref = |arg: &str| -> Result<ChordRef, ChordError> {
            if arg == "star" {
                Ok(ChordRef::Star)
            } else {
                arg.parse::<usize>()
                    .map(ChordRef::Label)
                    .map_err(|_| ChordError::BadShiftName(s.to_string()))
            }
        };
        let label = |arg: &str| -> Result<usize, ChordError> {
            arg.parse::<usize>()
                .map_err(|_| ChordError::BadShiftName(s.to_string()))
        };
        match kind {
            "alpha" => Ok(ShiftName::Alpha(label(arg)?)),
            "beta" => Ok(ShiftName::Beta(label(arg)?)),
            "gamma" => Ok(ShiftName::Gamma(chord_ref(arg)?)),
            "delta" if arg == "0" => Ok(ShiftName::DeltaZero),
            "delta" => Ok(ShiftName::Delta(chord_ref(arg)?)),
            "epsilon" => Ok(ShiftName::Epsilon(label(arg)?)),
            _ => Err(ChordError::BadShiftName(s.to_string())),
        }
    }
}

/// A single broken rule, referring to chords by 1-based storage label.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum RuleViolation {
    /// `b != a+1`, `d != c+1` or `c < b`.
    MalformedChord { label: usize },
    /// A chord position lies outside `1..=n-1`.
    PositionOutOfRange { label: usize },
    /// Two chords start in the same domino.
    DuplicateStart { first: usize, second: usize },
    /// Interleaved chords `a_i < a_j < c_i < c_j`.
    Crossing { outer: usize, inner: usize },
    /// Loop order other than 0 or 1.
    UnsupportedLoopOrder { ell: usize },
    /// Fewer chords than the loop order requires.
    TooFewChords { chords: usize, ell: usize },
    /// A colored chord in a tree diagram.
    ColoredChordInTree { label: usize },
    /// A one-loop diagram with no red chord.
    NoRedChord,
    /// A colored chord that does not end at the yellow end `(c*, d*)`.
    ColoredChordBadEnd { label: usize },
    /// Red, blue and purple starts out of order.
    ColorOrder { earlier: usize, later: usize },
    /// A black chord ending at `(c*, d*)` but starting after the top red.
    BlackEndsAtStarLate { label: usize },
    /// More than one very short chord.
    ExtraVeryShort { first: usize, second: usize },
    /// A very short chord that is neither red nor blue.
    VeryShortBadColor { label: usize },
}

impl fmt::Display for RuleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleViolation::MalformedChord { label } => {
                write!(f, "chord {label} is not of the form (a,a+1,c,c+1) with b<=c")
            }
            RuleViolation::PositionOutOfRange { label } => {
                write!(f, "chord {label} uses a position outside 1..=n-1")
            }
            RuleViolation::DuplicateStart { first, second } => {
                write!(f, "chords {first} and {second} start in the same domino")
            }
            RuleViolation::Crossing { outer, inner } => {
                write!(f, "chords {outer} and {inner} cross")
            }
            RuleViolation::UnsupportedLoopOrder { ell } => {
                write!(f, "loop order {ell} is not supported (only 0 and 1)")
            }
            RuleViolation::TooFewChords { chords, ell } => {
                write!(f, "{chords} chords cannot realize loop order {ell}")
            }
            RuleViolation::ColoredChordInTree { label } => {
                write!(f, "chord {label} is colored in a tree diagram")
            }
            RuleViolation::NoRedChord => write!(f, "one-loop diagram has no red chord"),
            RuleViolation::ColoredChordBadEnd { label } => {
                write!(f, "colored chord {label} does not end at (c*,d*)")
            }
            RuleViolation::ColorOrder { earlier, later } => {
                write!(
                    f,
                    "chords {earlier} and {later} break the red<blue<purple start order"
                )
            }
            RuleViolation::BlackEndsAtStarLate { label } => {
                write!(
                    f,
                    "black chord {label} ends at (c*,d*) but starts after the top red"
                )
            }
            RuleViolation::ExtraVeryShort { first, second } => {
                write!(f, "chords {first} and {second} are both very short")
            }
            RuleViolation::VeryShortBadColor { label } => {
                write!(f, "very short chord {label} is neither red nor blue")
            }
        }
    }
}

/// Errors from diagram construction, substructure and shift operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChordError {
    #[error("invalid chord diagram: {}", format_violations(.0))]
    Invalid(Vec<RuleViolation>),
    #[error("no chord with label {0}")]
    UnknownChord(usize),
    #[error("shift {name} is not defined here: {reason}")]
    UndefinedShift { name: String, reason: String },
    #[error("shift {name} produced an invalid diagram: {}", format_violations(.violations))]
    ShiftProducedInvalid {
        name: String,
        violations: Vec<RuleViolation>,
    },
    #[error("subdiagram {kind} does not apply: {reason}")]
    SubdiagramNotApplicable { kind: String, reason: String },
    #[error("cannot replay generation step: {0}")]
    BadStep(String),
    #[error("loop order {0} is not supported (only 0 and 1)")]
    UnsupportedLoopOrder(usize),
    #[error("cannot parse shift name {0:?}")]
    BadShiftName(String),
    #[error("diagram serialization is inconsistent: {0}")]
    BadSerialization(String),
}

fn format_violations(violations: &[RuleViolation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// A chord diagram over an ordered marker set.
///
/// Chords are stored sorted by end position (ascending `c`, ties by
/// descending `b`), which is the canonical labeling: `D_1` is the first
/// stored chord. Positions inside chords are 1-based ranks in `markers`;
/// for the common case `markers = {1..n}` ranks and marker names agree.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ChordDiagram {
    markers: IndexSet,
    ell: usize,
    chords: Vec<Chord>,
}

impl ChordDiagram {
    /// Builds and validates a diagram; chords may be given in any order.
    pub fn new(markers: IndexSet, ell: usize, mut chords: Vec<Chord>) -> Result<Self, ChordError> {
        sort_chords(&mut chords);
        let d = ChordDiagram {
            markers,
            ell,
            chords,
        };
        let violations = d.validate();
        if violations.is_empty() {
            Ok(d)
        } else {
            Err(ChordError::Invalid(violations))
        }
    }

    /// Builds a diagram on the integer markers `{1..n}`.
    pub fn on_integers(n: usize, ell: usize, chords: Vec<Chord>) -> Result<Self, ChordError> {
        Self::new(IndexSet::ints(n as i64), ell, chords)
    }

    /// The empty diagram on `{1..n}`.
    pub fn empty(n: usize, ell: usize) -> Result<Self, ChordError> {
        Self::on_integers(n, ell, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.markers.len()
    }

    pub fn k(&self) -> usize {
        self.chords.len() - self.ell
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn markers(&self) -> &IndexSet {
        &self.markers
    }

    pub fn chords(&self) -> &[Chord] {
        &self.chords
    }

    /// The chord with the given 1-based label.
    pub fn chord(&self, label: usize) -> Result<&Chord, ChordError> {
        if label >= 1 && label <= self.chords.len() {
            Ok(&self.chords[label - 1])
        } else {
            Err(ChordError::UnknownChord(label))
        }
    }

    /// A copy of this diagram with the same chords on integer markers
    /// `{1..n}` (positions are already ranks, so nothing else changes).
    pub fn rank_normalized(&self) -> ChordDiagram {
        ChordDiagram {
            markers: IndexSet::ints(self.n() as i64),
            ell: self.ell,
            chords: self.chords.clone(),
        }
    }

    // ----- basic structure ---------------------------------------------

    /// Index (0-based) of the top red chord, if any.
    fn top_red_idx(&self) -> Option<usize> {
        self.chords
            .iter()
            .enumerate()
            .filter(|(_, ch)| ch.color == Color::Red)
            .min_by_key(|(_, ch)| ch.a)
            .map(|(i, _)| i)
    }

    /// Label (1-based) of the top red chord, if any.
    pub fn top_red_label(&self) -> Option<usize> {
        self.top_red_idx().map(|i| i + 1)
    }

    /// The yellow end `(c*, d*)`, if the diagram is one-loop.
    pub fn star_end(&self) -> Option<(usize, usize)> {
        self.top_red_idx().map(|i| self.chords[i].end())
    }

    /// True if `j` is a (proper) descendant of `i`: the span of `j` nests
    /// strictly inside the span of `i`.
    fn is_descendant(&self, j: usize, i: usize) -> bool {
        let (ci, cj) = (&self.chords[i], &self.chords[j]);
        ci.a < cj.a && cj.a < ci.c
    }

    /// 0-based index of the innermost ancestor of chord `i`, if any.
    fn parent_idx(&self, i: usize) -> Option<usize> {
        (0..self.chords.len())
            .filter(|&j| j != i && self.is_descendant(i, j))
            .max_by_key(|&j| self.chords[j].a)
    }

    /// Label of the innermost ancestor of the chord with the given label.
    pub fn parent(&self, label: usize) -> Result<Option<usize>, ChordError> {
        self.chord(label)?;
        Ok(self.parent_idx(label - 1).map(|i| i + 1))
    }

    /// Labels of the proper descendants of the chord with the given label.
    pub fn descendants(&self, label: usize) -> Result<Vec<usize>, ChordError> {
        self.chord(label)?;
        Ok((0..self.chords.len())
            .filter(|&j| self.is_descendant(j, label - 1))
            .map(|j| j + 1)
            .collect())
    }

    fn siblings_idx(&self, i: usize, j: usize) -> bool {
        i != j && self.parent_idx(i) == self.parent_idx(j)
    }

    /// A sticky child starts in the domino right after its parent's start.
    fn is_sticky_child_idx(&self, i: usize) -> bool {
        match self.parent_idx(i) {
            Some(p) => self.chords[i].a == self.chords[p].a + 1,
            None => false,
        }
    }

    /// True if the chord with this label is a sticky child of its parent.
    pub fn is_sticky_child(&self, label: usize) -> Result<bool, ChordError> {
        self.chord(label)?;
        Ok(self.is_sticky_child_idx(label - 1))
    }

    fn has_sticky_child_idx(&self, i: usize) -> bool {
        let ch = &self.chords[i];
        !ch.is_very_short()
            && self
                .chords
                .iter()
                .any(|other| other.a == ch.b && other.a < ch.c)
    }

    /// Index of the unique chord starting in the domino `(pos, pos+1)`.
    fn starter_at(&self, pos: usize) -> Option<usize> {
        self.chords.iter().position(|ch| ch.a == pos)
    }

    /// Indices of chords ending in the domino `(pos, pos+1)`.
    fn enders_at(&self, pos: usize) -> Vec<usize> {
        (0..self.chords.len())
            .filter(|&j| self.chords[j].c == pos)
            .collect()
    }

    fn indices_of_color(&self, color: Color) -> Vec<usize> {
        (0..self.chords.len())
            .filter(|&j| self.chords[j].color == color)
            .collect()
    }

    /// Index of the lowest (innermost, max-start) blue chord, if any.
    fn lowest_blue_idx(&self) -> Option<usize> {
        self.indices_of_color(Color::Blue)
            .into_iter()
            .max_by_key(|&j| self.chords[j].a)
    }

    /// Label of the lowest blue chord, if any.
    pub fn lowest_blue_label(&self) -> Option<usize> {
        self.lowest_blue_idx().map(|i| i + 1)
    }

    fn is_top_purple_idx(&self, i: usize) -> bool {
        self.chords[i].color == Color::Purple
            && self
                .indices_of_color(Color::Purple)
                .into_iter()
                .min_by_key(|&j| self.chords[j].a)
                == Some(i)
    }

    /// The same-end parent of chord `i`: its innermost ancestor when that
    /// ancestor shares the end `(c, d)`.
    fn same_end_parent_idx(&self, i: usize) -> Option<usize> {
        self.parent_idx(i)
            .filter(|&p| self.chords[p].end() == self.chords[i].end())
    }

    /// Strictness of a same-end parent/child pair: same color, or a black
    /// parent.
    fn strict_pair(&self, parent: usize, child: usize) -> bool {
        self.chords[parent].color == self.chords[child].color
            || self.chords[parent].color == Color::Black
    }

    /// True if chord `i` has a strict same-end child.
    fn has_strict_same_end_child(&self, i: usize) -> bool {
        (0..self.chords.len()).any(|j| {
            self.same_end_parent_idx(j) == Some(i)
                && self.chords[j].end() == self.chords[i].end()
                && self.strict_pair(i, j)
        })
    }

    // ----- validation ---------------------------------------------------

    /// Checks every rule and returns all violations (empty when valid).
    pub fn validate(&self) -> Vec<RuleViolation> {
        let mut out = Vec::new();
        let m = self.n();
        if self.ell > 1 {
            out.push(RuleViolation::UnsupportedLoopOrder { ell: self.ell });
            return out;
        }
        if self.chords.len() < self.ell {
            out.push(RuleViolation::TooFewChords {
                chords: self.chords.len(),
                ell: self.ell,
            });
            return out;
        }
        let mut shape_ok = true;
        for (idx, ch) in self.chords.iter().enumerate() {
            let label = idx + 1;
            if ch.b != ch.a + 1 || ch.d != ch.c + 1 || ch.c < ch.b {
                out.push(RuleViolation::MalformedChord { label });
                shape_ok = false;
            }
            if ch.a < 1 || ch.d > m.saturating_sub(1) {
                out.push(RuleViolation::PositionOutOfRange { label });
                shape_ok = false;
            }
        }
        if !shape_ok {
            return out;
        }
        for i in 0..self.chords.len() {
            for j in (i + 1)..self.chords.len() {
                let (x, y) = (&self.chords[i], &self.chords[j]);
                if x.a == y.a {
                    out.push(RuleViolation::DuplicateStart {
                        first: i + 1,
                        second: j + 1,
                    });
                }
                let crossing = |p: &Chord, q: &Chord| p.a < q.a && q.a < p.c && p.c < q.c;
                if crossing(x, y) {
                    out.push(RuleViolation::Crossing {
                        outer: i + 1,
                        inner: j + 1,
                    });
                } else if crossing(y, x) {
                    out.push(RuleViolation::Crossing {
                        outer: j + 1,
                        inner: i + 1,
                    });
                }
            }
        }
        // Very short chords: at most one, and only red or blue.
        let very_short: Vec<usize> = (0..self.chords.len())
            .filter(|&i| self.chords[i].is_very_short())
            .collect();
        if very_short.len() > 1 {
            out.push(RuleViolation::ExtraVeryShort {
                first: very_short[0] + 1,
                second: very_short[1] + 1,
            });
        }
        for &i in &very_short {
            let color = self.chords[i].color;
            if color != Color::Red && color != Color::Blue {
                out.push(RuleViolation::VeryShortBadColor { label: i + 1 });
            }
        }
        if self.ell == 0 {
            for (idx, ch) in self.chords.iter().enumerate() {
                if ch.color != Color::Black {
                    out.push(RuleViolation::ColoredChordInTree { label: idx + 1 });
                }
            }
            return out;
        }
        // One-loop color rules.
        let Some(tr) = self.top_red_idx() else {
            out.push(RuleViolation::NoRedChord);
            return out;
        };
        let star = self.chords[tr].end();
        let a0 = self.chords[tr].a;
        for (idx, ch) in self.chords.iter().enumerate() {
            if ch.color != Color::Black && ch.end() != star {
                out.push(RuleViolation::ColoredChordBadEnd { label: idx + 1 });
            }
            if ch.color == Color::Black && ch.end() == star && ch.a > a0 {
                out.push(RuleViolation::BlackEndsAtStarLate { label: idx + 1 });
            }
        }
        let rank = |c: Color| match c {
            Color::Red => Some(0),
            Color::Blue => Some(1),
            Color::Purple => Some(2),
            Color::Black => None,
        };
        for i in 0..self.chords.len() {
            for j in 0..self.chords.len() {
                if let (Some(ri), Some(rj)) = (rank(self.chords[i].color), rank(self.chords[j].color))
                {
                    if ri < rj && self.chords[i].a > self.chords[j].a {
                        out.push(RuleViolation::ColorOrder {
                            earlier: i + 1,
                            later: j + 1,
                        });
                    }
                }
            }
        }
        out
    }
}

fn sort_chords(chords: &mut [Chord]) {
    chords.sort_by(|x, y| x.c.cmp(&y.c).then(y.b.cmp(&x.b)));
}

impl fmt::Display for ChordDiagram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} k={} ell={}:", self.n(), self.k(), self.ell)?;
        if self.chords.is_empty() {
            write!(f, " (no chords)")?;
        }
        for (idx, ch) in self.chords.iter().enumerate() {
            write!(f, " D{}={}", idx + 1, ch)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Counting statistics of one chord (or of the yellow chord), used by the
/// sign rules of the cell parametrization.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ChordStats {
    /// Number of proper descendants.
    pub below: usize,
    /// Number of chords starting after this one (top red excluded); for the
    /// top red or yellow chord, the number of chords starting at or after
    /// `c*`.
    pub after: usize,
    /// Number of earlier-starting chords among the siblings' pool (see the
    /// sign rules); 1-based offset variant for the top red / yellow chord.
    pub between: usize,
    /// Labels of chords whose end lies strictly beyond this chord's end.
    pub ahead: Vec<usize>,
    /// Labels of chords that are neither this chord nor its descendants.
    pub outside: Vec<usize>,
}

impl ChordDiagram {
    /// Statistics for a chord or for the yellow chord (`ChordRef::Star`).
    /// Selecting the top red chord's label and selecting `Star` agree except
    /// in `outside`, where the yellow chord counts every real chord.
    pub fn stats(&self, sel: ChordRef) -> Result<ChordStats, ChordError> {
        let n_ch = self.chords.len();
        let tr = self.top_red_idx();
        let end_of = |j: usize| self.chords[j].end();
        match sel {
            ChordRef::Star => {
                let tr = tr.ok_or_else(|| ChordError::UndefinedShift {
                    name: "stats_star".into(),
                    reason: "tree diagrams have no yellow chord".into(),
                })?;
                let mut s = self.stats_top_red(tr);
                // The yellow chord is not an ancestor of anything, so every
                // real chord is outside it.
                s.outside = (1..=n_ch).collect();
                Ok(s)
            }
            ChordRef::Label(label) => {
                let i = label - 1;
                self.chord(label)?;
                if Some(i) == tr {
                    return Ok(self.stats_top_red(i));
                }
                let below = (0..n_ch).filter(|&j| self.is_descendant(j, i)).count();
                let after = (0..n_ch)
                    .filter(|&j| Some(j) != tr && self.chords[j].a > self.chords[i].a)
                    .count();
                let pool: Vec<usize> = match self.parent_idx(i) {
                    Some(p) => (0..n_ch).filter(|&j| self.is_descendant(j, p)).collect(),
                    None => (0..n_ch).collect(),
                };
                let between = pool
                    .iter()
                    .filter(|&&j| j != i && Some(j) != tr && self.chords[j].a < self.chords[i].a)
                    .count();
                let ahead = (0..n_ch)
                    .filter(|&j| j != i && end_of(j) > end_of(i))
                    .map(|j| j + 1)
                    .collect();
                let outside = (0..n_ch)
                    .filter(|&j| j != i && !self.is_descendant(j, i))
                    .map(|j| j + 1)
                    .collect();
                Ok(ChordStats {
                    below,
                    after,
                    between,
                    ahead,
                    outside,
                })
            }
        }
    }

    fn stats_top_red(&self, tr: usize) -> ChordStats {
        let n_ch = self.chords.len();
        let (cs, _) = self.chords[tr].end();
        let a0 = self.chords[tr].a;
        let below = (0..n_ch).filter(|&j| self.is_descendant(j, tr)).count();
        let after = (0..n_ch).filter(|&j| self.chords[j].a >= cs).count();
        let pool: Vec<usize> = match self.parent_idx(tr) {
            Some(p) => (0..n_ch).filter(|&j| self.is_descendant(j, p)).collect(),
            None => (0..n_ch).collect(),
        };
        let between = 1 + pool
            .iter()
            .filter(|&&j| j != tr && (self.chords[j].a < a0 || self.is_descendant(j, tr)))
            .count();
        let ahead = (0..n_ch)
            .filter(|&j| j != tr && self.chords[j].end() > self.chords[tr].end())
            .map(|j| j + 1)
            .collect();
        let outside = (0..n_ch)
            .filter(|&j| j != tr && !self.is_descendant(j, tr))
            .map(|j| j + 1)
            .collect();
        ChordStats {
            below,
            after,
            between,
            ahead,
            outside,
        }
    }
}

// ---------------------------------------------------------------------------
// Subdiagrams
// ---------------------------------------------------------------------------

/// The substructures used by the recursive construction.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SubdiagramKind {
    /// Chords ending at or before the rightmost top chord's start, on the
    /// markers up to that start plus the last marker.
    Left,
    /// Descendants of the rightmost top chord, on its span plus the last
    /// marker.
    Right,
    /// The diagram with an unused penultimate marker erased.
    Pre,
    /// The sub-diagram seen by the loop closure: everything before the
    /// yellow end, restricted to the top red chord's family.
    Fl,
    /// The tree diagram the loop closure is applied to: two fresh markers
    /// `A, B` before the last marker, red ends moved to `(A, B)`, blue ends
    /// to the domino just before, colors forgotten.
    PreFl,
}

impl fmt::Display for SubdiagramKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SubdiagramKind::Left => "left",
            SubdiagramKind::Right => "right",
            SubdiagramKind::Pre => "pre",
            SubdiagramKind::Fl => "fl",
            SubdiagramKind::PreFl => "pre_fl",
        };
        f.write_str(s)
    }
}

impl ChordDiagram {
    /// Index of the rightmost top chord (no ancestors, largest end).
    fn rightmost_top_idx(&self) -> Option<usize> {
        (0..self.chords.len())
            .filter(|&i| self.parent_idx(i).is_none())
            .max_by_key(|&i| self.chords[i].end())
    }

    /// Label of the rightmost top chord, if any.
    pub fn rightmost_top_label(&self) -> Option<usize> {
        self.rightmost_top_idx().map(|i| i + 1)
    }

    /// True if some chord ends in the penultimate domino `(n-2, n-1)`.
    pub fn has_penultimate_ender(&self) -> bool {
        let m = self.n();
        m >= 3 && self.chords.iter().any(|ch| ch.d == m - 1)
    }

    fn not_applicable(kind: SubdiagramKind, reason: &str) -> ChordError {
        ChordError::SubdiagramNotApplicable {
            kind: kind.to_string(),
            reason: reason.to_string(),
        }
    }

    /// Extracts a subdiagram. Marker identities are preserved: the result's
    /// marker set is the corresponding subset (plus fresh `A`, `B` markers
    /// for [`SubdiagramKind::PreFl`]).
    pub fn subdiagram(&self, kind: SubdiagramKind) -> Result<ChordDiagram, ChordError> {
        match kind {
            SubdiagramKind::Pre => self.sub_pre(),
            SubdiagramKind::Left => self.sub_left_right(kind),
            SubdiagramKind::Right => self.sub_left_right(kind),
            SubdiagramKind::Fl => self.sub_fl(),
            SubdiagramKind::PreFl => self.sub_pre_fl(),
        }
    }

    fn sub_pre(&self) -> Result<ChordDiagram, ChordError> {
        let m = self.n();
        if self.has_penultimate_ender() {
            return Err(Self::not_applicable(
                SubdiagramKind::Pre,
                "a chord ends in the penultimate domino",
            ));
        }
        if m < 2 {
            return Err(Self::not_applicable(SubdiagramKind::Pre, "too few markers"));
        }
        let markers = self
            .markers
            .remove(self.markers.at(m - 2))
            .map_err(|e| ChordError::BadSerialization(e.to_string()))?;
        ChordDiagram::new(markers, self.ell, self.chords.clone())
    }

    fn sub_left_right(&self, kind: SubdiagramKind) -> Result<ChordDiagram, ChordError> {
        let m = self.n();
        if !self.has_penultimate_ender() {
            return Err(Self::not_applicable(
                kind,
                "no chord ends in the penultimate domino",
            ));
        }
        let rt = self
            .rightmost_top_idx()
            .ok_or_else(|| Self::not_applicable(kind, "no chords"))?;
        if self.chords[rt].color == Color::Red {
            return Err(Self::not_applicable(
                kind,
                "the rightmost top chord is red (loop closure case)",
            ));
        }
        let bridge = self.chords[rt];
        debug_assert_eq!(bridge.end(), (m - 2, m - 1));
        match kind {
            SubdiagramKind::Left => {
                let labels: Vec<Marker> = (0..=bridge.a)
                    .map(|p| self.markers.at(p))
                    .chain(std::iter::once(self.markers.at(m - 1)))
                    .collect();
                let markers = IndexSet::new(labels)
                    .map_err(|e| ChordError::BadSerialization(e.to_string()))?;
                let chords: Vec<Chord> = self
                    .chords
                    .iter()
                    .filter(|ch| ch.c <= bridge.a)
                    .copied()
                    .collect();
                let ell = self.sub_ell(&chords);
                ChordDiagram::new(markers, ell, chords)
            }
            SubdiagramKind::Right => {
                let labels: Vec<Marker> = (bridge.b - 1..=m - 2)
                    .map(|p| self.markers.at(p))
                    .chain(std::iter::once(self.markers.at(m - 1)))
                    .collect();
                let markers = IndexSet::new(labels)
                    .map_err(|e| ChordError::BadSerialization(e.to_string()))?;
                let shift = bridge.a;
                let chords: Vec<Chord> = (0..self.chords.len())
                    .filter(|&j| self.is_descendant(j, rt))
                    .map(|j| {
                        let ch = self.chords[j];
                        Chord {
                            a: ch.a - shift,
                            b: ch.b - shift,
                            c: ch.c - shift,
                            d: ch.d - shift,
                            color: ch.color,
                        }
                    })
                    .collect();
                let ell = self.sub_ell(&chords);
                ChordDiagram::new(markers, ell, chords)
            }
            _ => unreachable!(),
        }
    }

    fn sub_ell(&self, chords: &[Chord]) -> usize {
        if self.ell == 1 && chords.iter().any(|ch| ch.color == Color::Red) {
            1
        } else {
            0
        }
    }

    fn sub_fl(&self) -> Result<ChordDiagram, ChordError> {
        let kind = SubdiagramKind::Fl;
        if self.ell != 1 {
            return Err(Self::not_applicable(kind, "tree diagrams have no loop"));
        }
        let tr = self
            .top_red_idx()
            .ok_or_else(|| Self::not_applicable(kind, "no red chord"))?;
        let (cs, ds) = self.chords[tr].end();
        match self.parent_idx(tr) {
            None => Ok(self.clone()),
            Some(p) => {
                let lo = self.chords[p].b; // first kept position
                let hi = ds; // last kept position before the final marker
                let keep: Vec<usize> = (0..self.chords.len())
                    .filter(|&j| {
                        self.is_descendant(j, p) && (self.chords[j].a, self.chords[j].b) < (cs, ds)
                    })
                    .collect();
                let labels: Vec<Marker> = (lo - 1..=hi - 1)
                    .map(|pz| self.markers.at(pz))
                    .chain(std::iter::once(self.markers.at(self.n() - 1)))
                    .collect();
                let markers = IndexSet::new(labels)
                    .map_err(|e| ChordError::BadSerialization(e.to_string()))?;
                let shift = lo - 1;
                let chords: Vec<Chord> = keep
                    .into_iter()
                    .map(|j| {
                        let ch = self.chords[j];
                        Chord {
                            a: ch.a - shift,
                            b: ch.b - shift,
                            c: ch.c - shift,
                            d: ch.d - shift,
                            color: ch.color,
                        }
                    })
                    .collect();
                ChordDiagram::new(markers, 1, chords)
            }
        }
    }

    fn sub_pre_fl(&self) -> Result<ChordDiagram, ChordError> {
        let kind = SubdiagramKind::PreFl;
        if self.ell != 1 {
            return Err(Self::not_applicable(kind, "tree diagrams have no loop"));
        }
        let rt = self
            .rightmost_top_idx()
            .ok_or_else(|| Self::not_applicable(kind, "no chords"))?;
        if self.chords[rt].color != Color::Red {
            return Err(Self::not_applicable(
                kind,
                "the rightmost top chord is not red",
            ));
        }
        let m = self.n();
        if self.chords[rt].end() != (m - 2, m - 1) {
            return Err(Self::not_applicable(
                kind,
                "the yellow end is not in the penultimate domino",
            ));
        }
        let last = self.markers.at(m - 1);
        let markers = self
            .markers
            .insert_before(last, Marker::A)
            .and_then(|ms| ms.insert_before(last, Marker::B))
            .map_err(|e| ChordError::BadSerialization(e.to_string()))?;
        let chords: Vec<Chord> = self
            .chords
            .iter()
            .map(|ch| {
                let (c, d) = match ch.color {
                    Color::Red => (m, m + 1),
                    Color::Blue => (m - 1, m),
                    _ => ch.end(),
                };
                Chord {
                    a: ch.a,
                    b: ch.b,
                    c,
                    d,
                    color: Color::Black,
                }
            })
            .collect();
        ChordDiagram::new(markers, 0, chords)
    }
}

// ---------------------------------------------------------------------------
// Enumeration
// ---------------------------------------------------------------------------

/// All chord diagrams on `{1..n}` with `k` black degrees of freedom and
/// loop order `ell`, in a deterministic order.
pub fn enumerate(n: usize, k: usize, ell: usize) -> Result<Vec<ChordDiagram>, ChordError> {
    if ell > 1 {
        return Err(ChordError::UnsupportedLoopOrder(ell));
    }
    let mut memo: HashMap<(usize, usize, usize), Vec<Vec<Chord>>> = HashMap::new();
    let raw = enum_rec(n, k, ell, &mut memo);
    let mut out = Vec::with_capacity(raw.len());
    for chords in raw {
        out.push(ChordDiagram::on_integers(n, ell, chords)?);
    }
    Ok(out)
}

fn enum_rec(
    m: usize,
    k: usize,
    ell: usize,
    memo: &mut HashMap<(usize, usize, usize), Vec<Vec<Chord>>>,
) -> Vec<Vec<Chord>> {
    if k == 0 && ell == 0 {
        return vec![Vec::new()];
    }
    if m < 4 {
        return Vec::new();
    }
    if let Some(hit) = memo.get(&(m, k, ell)) {
        return hit.clone();
    }
    let mut out: Vec<Vec<Chord>> = Vec::new();

    // No chord ends in the penultimate domino: that marker is decorative.
    for inner in enum_rec(m - 1, k, ell, memo) {
        debug_assert!(inner.iter().all(|ch| ch.d <= m - 2));
        out.push(inner);
    }

    // A black rightmost top chord (a, a+1, m-2, m-1) splits the diagram.
    if k >= 1 {
        for a in 1..=m.saturating_sub(4) {
            for k_left in 0..=(k - 1) {
                let k_right = k - 1 - k_left;
                for ell_left in 0..=ell {
                    let ell_right = ell - ell_left;
                    let lefts = enum_rec(a + 2, k_left, ell_left, memo);
                    if lefts.is_empty() {
                        continue;
                    }
                    let rights = enum_rec(m - a, k_right, ell_right, memo);
                    for left in &lefts {
                        for right in &rights {
                            let mut chords = left.clone();
                            chords.push(Chord::new(a, m - 2, Color::Black));
                            chords.extend(right.iter().map(|ch| Chord {
                                a: ch.a + a,
                                b: ch.b + a,
                                c: ch.c + a,
                                d: ch.d + a,
                                color: ch.color,
                            }));
                            out.push(chords);
                        }
                    }
                }
            }
        }
    }

    // A red rightmost top chord arises by closing the loop of a tree diagram
    // on two extra markers.
    if ell == 1 {
        for tree in enum_rec(m + 2, k + 1, 0, memo) {
            if let Some(colored) = close_loop(&tree, m) {
                out.push(colored);
            }
        }
    }

    memo.insert((m, k, ell), out.clone());
    out
}

/// Inverse of the `PreFl` subdiagram: recolor a tree on `m + 2` markers
/// whose extra markers sit in positions `m, m+1`, then delete them. Returns
/// `None` when the tree has no chord ending at the extra markers or the
/// recoloring degenerates.
fn close_loop(tree: &[Chord], m: usize) -> Option<Vec<Chord>> {
    let a0 = tree
        .iter()
        .filter(|ch| ch.end() == (m, m + 1))
        .map(|ch| ch.a)
        .min()?;
    let mut chords = Vec::with_capacity(tree.len());
    for ch in tree {
        let (c, d, color) = match ch.end() {
            (c, _) if c == m => (m - 2, m - 1, Color::Red),
            (c, _) if c == m - 1 => (m - 2, m - 1, Color::Blue),
            (c, _) if c == m - 2 && ch.a > a0 => (m - 2, m - 1, Color::Purple),
            (c, d) => (c, d, Color::Black),
        };
        if c < ch.b {
            // The would-be top red chord collapses; reject this tree.
            return None;
        }
        chords.push(Chord {
            a: ch.a,
            b: ch.b,
            c,
            d,
            color,
        });
    }
    sort_chords(&mut chords);
    // The closure never needs filtering beyond the collapse above, but be
    // defensive: a final validity check keeps enumeration honest.
    let candidate = ChordDiagram {
        markers: IndexSet::ints(m as i64),
        ell: 1,
        chords,
    };
    if candidate.validate().is_empty() {
        Some(candidate.chords)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Generation sequences
// ---------------------------------------------------------------------------

/// One step of a generation sequence. Replay works on a stack of diagrams:
/// `Trivial` pushes an empty diagram, `Pre` inserts an unused penultimate
/// marker into the top diagram, `Product` combines the two topmost diagrams
/// with a black bridge chord, and `ForwardLimit` closes the loop of the top
/// (tree) diagram.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    Trivial { markers: usize },
    Pre { penultimate: usize },
    Product { a: usize, b: usize, c: usize, d: usize },
    ForwardLimit,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Trivial { markers } => write!(f, "trivial({markers})"),
            Step::Pre { penultimate } => write!(f, "pre({penultimate})"),
            Step::Product { a, b, c, d } => write!(f, "product({a},{b},{c},{d})"),
            Step::ForwardLimit => write!(f, "forward_limit"),
        }
    }
}

impl ChordDiagram {
    /// The post-order list of construction steps that rebuilds this diagram
    /// (up to marker names) via [`diagram_of_steps`].
    pub fn generation_sequence(&self) -> Result<Vec<Step>, ChordError> {
        let mut out = Vec::new();
        self.rank_normalized().generation_rec(&mut out)?;
        Ok(out)
    }

    fn generation_rec(&self, out: &mut Vec<Step>) -> Result<(), ChordError> {
        if self.chords.is_empty() {
            out.push(Step::Trivial { markers: self.n() });
            return Ok(());
        }
        if !self.has_penultimate_ender() {
            self.subdiagram(SubdiagramKind::Pre)?
                .rank_normalized()
                .generation_rec(out)?;
            out.push(Step::Pre {
                penultimate: self.n() - 1,
            });
            return Ok(());
        }
        let rt = self.rightmost_top_idx().expect("nonempty diagram");
        if self.chords[rt].color != Color::Red {
            let bridge = self.chords[rt];
            self.subdiagram(SubdiagramKind::Left)?
                .rank_normalized()
                .generation_rec(out)?;
            self.subdiagram(SubdiagramKind::Right)?
                .rank_normalized()
                .generation_rec(out)?;
            out.push(Step::Product {
                a: bridge.a,
                b: bridge.b,
                c: bridge.c,
                d: bridge.d,
            });
        } else {
            self.subdiagram(SubdiagramKind::PreFl)?
                .rank_normalized()
                .generation_rec(out)?;
            out.push(Step::ForwardLimit);
        }
        Ok(())
    }
}

/// Replays a generation sequence into a diagram on integer markers.
pub fn diagram_of_steps(steps: &[Step]) -> Result<ChordDiagram, ChordError> {
    let mut stack: Vec<ChordDiagram> = Vec::new();
    for step in steps {
        match *step {
            Step::Trivial { markers } => {
                stack.push(ChordDiagram::empty(markers, 0)?);
            }
            Step::Pre { penultimate } => {
                let top = stack
                    .pop()
                    .ok_or_else(|| ChordError::BadStep("pre on empty stack".into()))?;
                if top.n() != penultimate {
                    return Err(ChordError::BadStep(format!(
                        "pre({penultimate}) applied to a diagram with {} markers",
                        top.n()
                    )));
                }
                stack.push(ChordDiagram::on_integers(
                    top.n() + 1,
                    top.ell,
                    top.chords,
                )?);
            }
            Step::Product { a, b, c, d } => {
                let right = stack
                    .pop()
                    .ok_or_else(|| ChordError::BadStep("product on empty stack".into()))?;
                let left = stack
                    .pop()
                    .ok_or_else(|| ChordError::BadStep("product needs two diagrams".into()))?;
                let m = d + 1;
                if b != a + 1 || d != c + 1 || c != m - 2 {
                    return Err(ChordError::BadStep(format!(
                        "product bridge ({a},{b},{c},{d}) is not of the form (a,a+1,m-2,m-1)"
                    )));
                }
                if left.n() != a + 2 || right.n() != m - a {
                    return Err(ChordError::BadStep(format!(
                        "product bridge ({a},{b},{c},{d}) does not fit factors with {} and {} markers",
                        left.n(),
                        right.n()
                    )));
                }
                let mut chords = left.chords;
                chords.push(Chord::new(a, c, Color::Black));
                chords.extend(right.chords.into_iter().map(|ch| Chord {
                    a: ch.a + a,
                    b: ch.b + a,
                    c: ch.c + a,
                    d: ch.d + a,
                    color: ch.color,
                }));
                stack.push(ChordDiagram::on_integers(
                    m,
                    left.ell + right.ell,
                    chords,
                )?);
            }
            Step::ForwardLimit => {
                let tree = stack
                    .pop()
                    .ok_or_else(|| ChordError::BadStep("forward_limit on empty stack".into()))?;
                if tree.ell != 0 {
                    return Err(ChordError::BadStep(
                        "forward_limit applies to a tree diagram".into(),
                    ));
                }
                let m = tree
                    .n()
                    .checked_sub(2)
                    .ok_or_else(|| ChordError::BadStep("forward_limit needs >= 2 markers".into()))?;
                let chords = close_loop(&tree.chords, m).ok_or_else(|| {
                    ChordError::BadStep(
                        "forward_limit needs a chord ending at the two extra markers".into(),
                    )
                })?;
                stack.push(ChordDiagram::on_integers(m, 1, chords)?);
            }
        }
    }
    match (stack.pop(), stack.is_empty()) {
        (Some(d), true) => Ok(d),
        _ => Err(ChordError::BadStep(
            "replay did not reduce to a single diagram".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Shifts and the boundary match
// ---------------------------------------------------------------------------

/// How to name the returning shift inside the shifted diagram: chords are
/// identified by their start position (starts are unique), star/red shifts
/// by themselves.
#[derive(Clone, Copy, Debug)]
enum SigmaSpec {
    AlphaAt(usize),
    BetaAt(usize),
    GammaAt(usize),
    DeltaAt(usize),
    EpsilonAt(usize),
    GammaStar,
    DeltaStar,
    DeltaZero,
}

impl ChordDiagram {
    fn undefined(name: ShiftName, reason: impl Into<String>) -> ChordError {
        ChordError::UndefinedShift {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// Applies a boundary shift, producing the neighboring diagram.
    pub fn shift(&self, name: ShiftName) -> Result<ChordDiagram, ChordError> {
        self.shift_impl(name).map(|(d, _)| d)
    }

    /// Applies a boundary shift and also names the unique shift of the
    /// result that undoes it (the boundary match).
    pub fn match_shift(&self, name: ShiftName) -> Result<(ChordDiagram, ShiftName), ChordError> {
        let (shifted, spec) = self.shift_impl(name)?;
        let sigma = shifted.resolve_sigma(spec).ok_or_else(|| {
            ChordError::UndefinedShift {
                name: name.to_string(),
                reason: "internal: matched shift not found in the shifted diagram".into(),
            }
        })?;
        Ok((shifted, sigma))
    }

    /// All shifts that are defined on this diagram (produce a valid
    /// neighbor).
    pub fn defined_shifts(&self) -> Vec<ShiftName> {
        let mut names = Vec::new();
        for label in 1..=self.chords.len() {
            names.push(ShiftName::Alpha(label));
            names.push(ShiftName::Beta(label));
            names.push(ShiftName::Gamma(ChordRef::Label(label)));
            names.push(ShiftName::Delta(ChordRef::Label(label)));
            names.push(ShiftName::Epsilon(label));
        }
        if self.ell == 1 {
            names.push(ShiftName::Gamma(ChordRef::Star));
            names.push(ShiftName::Delta(ChordRef::Star));
            names.push(ShiftName::DeltaZero);
        }
        names
            .into_iter()
            .filter(|&name| self.shift(name).is_ok())
            .collect()
    }

    fn resolve_sigma(&self, spec: SigmaSpec) -> Option<ShiftName> {
        let by_start = |pos: usize| self.starter_at(pos).map(|i| i + 1);
        Some(match spec {
            SigmaSpec::AlphaAt(p) => ShiftName::Alpha(by_start(p)?),
            SigmaSpec::BetaAt(p) => ShiftName::Beta(by_start(p)?),
            SigmaSpec::GammaAt(p) => ShiftName::Gamma(ChordRef::Label(by_start(p)?)),
            SigmaSpec::DeltaAt(p) => ShiftName::Delta(ChordRef::Label(by_start(p)?)),
            SigmaSpec::EpsilonAt(p) => {
                let label = by_start(p)?;
                debug_assert_eq!(self.lowest_blue_label(), Some(label));
                ShiftName::Epsilon(label)
            }
            SigmaSpec::GammaStar => ShiftName::Gamma(ChordRef::Star),
            SigmaSpec::DeltaStar => ShiftName::Delta(ChordRef::Star),
            SigmaSpec::DeltaZero => ShiftName::DeltaZero,
        })
    }

    fn finish_shift(
        &self,
        name: ShiftName,
        ell: usize,
        mut chords: Vec<Chord>,
        spec: SigmaSpec,
    ) -> Result<(ChordDiagram, SigmaSpec), ChordError> {
        sort_chords(&mut chords);
        let shifted = ChordDiagram {
            markers: self.markers.clone(),
            ell,
            chords,
        };
        let violations = shifted.validate();
        if violations.is_empty() {
            Ok((shifted, spec))
        } else {
            Err(ChordError::ShiftProducedInvalid {
                name: name.to_string(),
                violations,
            })
        }
    }

    fn shift_impl(&self, name: ShiftName) -> Result<(ChordDiagram, SigmaSpec), ChordError> {
        match name {
            ShiftName::Alpha(label) => self.shift_alpha(label),
            ShiftName::Beta(label) => self.shift_beta(label),
            ShiftName::Gamma(ChordRef::Star) => self.shift_gamma_star(),
            ShiftName::Gamma(ChordRef::Label(label)) => self.shift_gamma(label),
            ShiftName::Delta(ChordRef::Star) => self.shift_delta_star(),
            ShiftName::Delta(ChordRef::Label(label)) => self.shift_delta(label),
            ShiftName::Epsilon(label) => self.shift_epsilon(label),
            ShiftName::DeltaZero => self.shift_delta_zero(),
        }
    }

    // ----- start shifts --------------------------------------------------

    fn shift_alpha(&self, label: usize) -> Result<(ChordDiagram, SigmaSpec), ChordError> {
        let name = ShiftName::Alpha(label);
        let i = label - 1;
        let chord = *self.chord(label)?;
        if chord.is_very_short() {
            return Err(Self::undefined(name, "the chord is very short"));
        }
        if self.has_sticky_child_idx(i) {
            return Err(Self::undefined(name, "the chord has a sticky child"));
        }
        let m = self.n();
        let mut chords = self.chords.clone();
        if chord.c > chord.b + 1 {
            chords[i].a = chord.b;
            chords[i].b = chord.b + 1;
            return self.finish_shift(name, self.ell, chords, SigmaSpec::BetaAt(chord.b));
        }
        // Short chord.
        match chord.color {
            Color::Red => {
                chords[i].a = chord.b;
                chords[i].b = chord.b + 1;
                self.finish_shift(name, self.ell, chords, SigmaSpec::BetaAt(chord.b))
            }
            Color::Blue => {
                // The other blue chords were dragged onto the yellow end by
                // the inverse shift; push them back onto the vacated domino.
                for j in 0..chords.len() {
                    if j != i && self.chords[j].color == Color::Blue {
                        chords[j].c = chord.b;
                        chords[j].d = chord.c;
                        chords[j].color = Color::Black;
                    }
                }
                chords[i].a = chord.b;
                chords[i].b = chord.b + 1;
                chords[i].color = Color::Red;
                self.finish_shift(name, self.ell, chords, SigmaSpec::DeltaAt(chord.b))
            }
            Color::Purple => {
                for j in 0..chords.len() {
                    if j != i && self.chords[j].color == Color::Purple {
                        chords[j].c = chord.b;
                        chords[j].d = chord.c;
                        chords[j].color = Color::Black;
                    }
                }
                chords[i].a = chord.b;
                chords[i].b = chord.b + 1;
                chords[i].color = Color::Blue;
                self.finish_shift(name, self.ell, chords, SigmaSpec::DeltaAt(chord.b))
            }
            Color::Black => {
                if chord.d == m - 1 {
                    return Err(Self::undefined(
                        name,
                        "a short black chord ending in the penultimate domino cannot slide",
                    ));
                }
                // Ancestors sharing the end slide their ends back onto the
                // vacated middle domino.
                for j in 0..chords.len() {
                    if j != i
                        && self.chords[j].end() == chord.end()
                        && self.is_descendant(i, j)
                    {
                        chords[j].c = chord.b;
                        chords[j].d = chord.c;
                    }
                }
                if let Some(x) = self.starter_at(chord.c) {
                    // Absorb the chord starting at our end, taking its color.
                    let other = self.chords[x];
                    chords[i] = Chord {
                        a: chord.b,
                        b: chord.c,
                        c: other.c,
                        d: other.d,
                        color: other.color,
                    };
                    self.finish_shift(name, self.ell, chords, SigmaSpec::GammaAt(other.a))
                } else {
                    // Sliding onto the yellow end joins the purple family.
                    let color = if self.star_end() == Some((chord.d, chord.d + 1)) {
                        Color::Purple
                    } else {
                        Color::Black
                    };
                    chords[i] = Chord {
                        a: chord.b,
                        b: chord.c,
                        c: chord.d,
                        d: chord.d + 1,
                        color,
                    };
                    self.finish_shift(name, self.ell, chords, SigmaSpec::DeltaAt(chord.b))
                }
            }
        }
    }

    fn shift_beta(&self, label: usize) -> Result<(ChordDiagram, SigmaSpec), ChordError> {
        let name = ShiftName::Beta(label);
        let i = label - 1;
        let chord = *self.chord(label)?;
        if chord.a <= 1 {
            return Err(Self::undefined(name, "the chord starts at (1,2)"));
        }
        if self
            .parent_idx(i)
            .is_some_and(|p| self.chords[p].a == chord.a - 1)
        {
            return Err(Self::undefined(name, "the chord has a sticky parent"));
        }
        if self.chords.iter().any(|ch| ch.end() == chord.start()) {
            return Err(Self::undefined(
                name,
                "the chord starts at another chord's ending domino",
            ));
        }
        if chord.is_very_short() && chord.color != Color::Red {
            return Err(Self::undefined(
                name,
                "only a very short red chord can extend its start",
            ));
        }
        let mut chords = self.chords.clone();
        chords[i].a = chord.a - 1;
        chords[i].b = chord.a;
        self.finish_shift(name, self.ell, chords, SigmaSpec::AlphaAt(chord.a - 1))
    }

    // ----- end shifts: gamma ---------------------------------------------

    fn shift_gamma_star(&self) -> Result<(ChordDiagram, SigmaSpec), ChordError> {
        let name = ShiftName::Gamma(ChordRef::Star);
        let tr = self
            .top_red_idx()
            .ok_or_else(|| Self::undefined(name, "no yellow chord in a tree diagram"))?;
        let (cs, ds) = self.chords[tr].end();
        let m = self.n();
        let mut chords = self.chords.clone();

        // Same-end parent of the top red: promote it to red.
        if let Some(p0) = self.parent_idx(tr) {
            if self.chords[p0].end() == (cs, ds) {
                debug_assert_eq!(self.chords[p0].color, Color::Black);
                chords[p0].color = Color::Red;
                return self.finish_shift(name, self.ell, chords, SigmaSpec::DeltaZero);
            }
        }
        // A sibling starting at the yellow end: absorb it into the cluster.
        if let Some(h) = self.starter_at(cs) {
            debug_assert!(self.siblings_idx(h, tr));
            let (ch2, dh2) = self.chords[h].end();
            for j in 0..chords.len() {
                match self.chords[j].color {
                    Color::Purple => chords[j].color = Color::Black,
                    Color::Red | Color::Blue => {
                        chords[j].c = ch2;
                        chords[j].d = dh2;
                    }
                    Color::Black => {
                        if self.chords[j].end() == (ch2, dh2) && self.chords[j].a > cs {
                            chords[j].color = Color::Purple;
                        }
                    }
                }
            }
            chords[h].color = Color::Blue;
            return self.finish_shift(name, self.ell, chords, SigmaSpec::EpsilonAt(cs));
        }
        // Free yellow end: the whole cluster slides right.
        if ds == m - 1 {
            return Err(Self::undefined(
                name,
                "the yellow end is already in the penultimate domino",
            ));
        }
        for j in 0..chords.len() {
            match self.chords[j].color {
                Color::Red | Color::Blue => {
                    chords[j].c = ds;
                    chords[j].d = ds + 1;
                }
                Color::Purple => chords[j].color = Color::Black,
                Color::Black => {}
            }
        }
        self.finish_shift(name, self.ell, chords, SigmaSpec::DeltaStar)
    }

    fn shift_gamma(&self, label: usize) -> Result<(ChordDiagram, SigmaSpec), ChordError> {
        let name = ShiftName::Gamma(ChordRef::Label(label));
        let i = label - 1;
        let chord = *self.chord(label)?;
        if Some(i) == self.top_red_idx() {
            return Err(Self::undefined(
                name,
                "the top red chord has no end shift of its own",
            ));
        }
        // Non-top red chords always shrink onto their same-end parent.
        if chord.color == Color::Red {
            let h = self
                .parent_idx(i)
                .expect("a non-top red chord nests inside the red chain");
            return self.gamma_case4(name, i, h);
        }
        // Absorb a sibling starting at this chord's end.
        if chord.color == Color::Black {
            if let Some(x) = self.starter_at(chord.c) {
                if self.siblings_idx(x, i) {
                    let other = self.chords[x];
                    let mut chords = self.chords.clone();
                    chords[i].c = other.c;
                    chords[i].d = other.d;
                    chords[i].color = other.color;
                    return self.finish_shift(name, self.ell, chords, SigmaSpec::GammaAt(other.a));
                }
            }
        }
        // The top purple chord detaches from the yellow end by one color.
        if self.is_top_purple_idx(i) {
            let mut chords = self.chords.clone();
            chords[i].color = Color::Blue;
            return self.finish_shift(name, self.ell, chords, SigmaSpec::DeltaAt(chord.a));
        }
        // A strict same-end parent absorbs the shrinking chord.
        if let Some(h) = self.same_end_parent_idx(i) {
            if self.strict_pair(h, i) {
                return self.gamma_case4(name, i, h);
            }
        }
        // Free end: slide right (black), or leave the blue family (top blue).
        match chord.color {
            Color::Black => {
                let m = self.n();
                if chord.d == m - 1 {
                    return Err(Self::undefined(
                        name,
                        "the end is already in the penultimate domino",
                    ));
                }
                let mut chords = self.chords.clone();
                chords[i].c = chord.d;
                chords[i].d = chord.d + 1;
                if self.star_end() == Some((chord.d, chord.d + 1)) {
                    // The end lands on the yellow end; the chord joins the
                    // cluster as the deepest purple.
                    chords[i].color = Color::Purple;
                }
                self.finish_shift(name, self.ell, chords, SigmaSpec::DeltaAt(chord.a))
            }
            Color::Blue => {
                if chord.is_very_short() {
                    // The recolored chord would be a very short red, whose
                    // end shift cannot recolor it back.
                    return Err(Self::undefined(
                        name,
                        "a very short top blue chord cannot leave the blue family",
                    ));
                }
                let mut chords = self.chords.clone();
                chords[i].color = Color::Red;
                self.finish_shift(name, self.ell, chords, SigmaSpec::DeltaAt(chord.a))
            }
            _ => Err(Self::undefined(
                name,
                "no end variable is free on this chord",
            )),
        }
    }

    /// Shrinks the same-end parent `h` of chord `i` down to `i`'s start.
    fn gamma_case4(
        &self,
        name: ShiftName,
        i: usize,
        h: usize,
    ) -> Result<(ChordDiagram, SigmaSpec), ChordError> {
        let chord = self.chords[i];
        let parent = self.chords[h];
        let sticky = parent.b == chord.a;
        let mut chords = self.chords.clone();
        if !sticky {
            chords[h] = Chord {
                a: parent.a,
                b: parent.b,
                c: chord.a,
                d: chord.b,
                color: Color::Black,
            };
            return self.finish_shift(name, self.ell, chords, SigmaSpec::GammaAt(parent.a));
        }
        if self.is_sticky_child_idx(h) {
            return Err(Self::undefined(
                name,
                "the same-end parent is itself a sticky child",
            ));
        }
        if parent.a == 1 {
            return Err(Self::undefined(name, "the same-end parent starts at (1,2)"));
        }
        let star = self.star_end();
        if star == Some(parent.start()) {
            // The parent starts at the yellow end: the whole cluster slides
            // onto the vacated domino and the parent becomes a very short
            // blue chord.
            for j in 0..chords.len() {
                if j == h {
                    continue;
                }
                match self.chords[j].color {
                    Color::Purple => chords[j].color = Color::Black,
                    _ => {
                        if self.chords[j].end() == parent.start() {
                            chords[j].c = parent.b;
                            chords[j].d = parent.b + 1;
                        }
                    }
                }
            }
            chords[h] = Chord {
                a: parent.a,
                b: parent.b,
                c: parent.b,
                d: parent.b + 1,
                color: Color::Blue,
            };
            self.finish_shift(name, self.ell, chords, SigmaSpec::EpsilonAt(parent.a))
        } else {
            // Chords ending at the parent's start follow it onto the
            // vacated domino.
            for j in 0..chords.len() {
                if self.chords[j].end() == parent.start() {
                    debug_assert_ne!(self.chords[j].color, Color::Purple);
                    chords[j].c = parent.b;
                    chords[j].d = parent.b + 1;
                }
            }
            chords[h] = Chord {
                a: parent.a - 1,
                b: parent.a,
                c: chord.a,
                d: chord.b,
                color: Color::Black,
            };
            self.finish_shift(name, self.ell, chords, SigmaSpec::AlphaAt(parent.a - 1))
        }
    }

    // ----- end shifts: delta ---------------------------------------------

    fn shift_delta_star(&self) -> Result<(ChordDiagram, SigmaSpec), ChordError> {
        let name = ShiftName::Delta(ChordRef::Star);
        let tr = self
            .top_red_idx()
            .ok_or_else(|| Self::undefined(name, "no yellow chord in a tree diagram"))?;
        let (cs, _) = self.chords[tr].end();
        if self.chords.iter().any(|ch| ch.color == Color::Purple) {
            return Err(Self::undefined(
                name,
                "the yellow chord has a strict same-end child (a purple chord)",
            ));
        }
        if self.chords.iter().any(|ch| ch.is_very_short()) {
            return Err(Self::undefined(
                name,
                "a very short chord blocks the cluster from sliding left",
            ));
        }
        let mut chords = self.chords.clone();
        for j in 0..chords.len() {
            match self.chords[j].color {
                Color::Red | Color::Blue => {
                    chords[j].c = cs - 1;
                    chords[j].d = cs;
                }
                Color::Black => {
                    if self.chords[j].end() == (cs - 1, cs) {
                        chords[j].color = Color::Purple;
                    }
                }
                Color::Purple => unreachable!(),
            }
        }
        self.finish_shift(name, self.ell, chords, SigmaSpec::GammaStar)
    }

    fn shift_delta(&self, label: usize) -> Result<(ChordDiagram, SigmaSpec), ChordError> {
        let name = ShiftName::Delta(ChordRef::Label(label));
        let i = label - 1;
        let chord = *self.chord(label)?;
        if Some(i) == self.top_red_idx() {
            return Err(Self::undefined(
                name,
                "the top red chord is shifted by the red shift instead",
            ));
        }
        if self.has_strict_same_end_child(i) {
            return Err(Self::undefined(name, "a strict same-end child holds the end"));
        }
        let needs_slide_preconditions = chord.is_very_short()
            || (chord.is_short() && matches!(chord.color, Color::Black | Color::Purple));
        if needs_slide_preconditions {
            if self.is_sticky_child_idx(i) {
                return Err(Self::undefined(name, "the chord is a sticky child"));
            }
            if chord.a == 1 {
                return Err(Self::undefined(name, "the chord starts at (1,2)"));
            }
        }
        let star = self.star_end();
        let mut chords = self.chords.clone();
        match chord.color {
            Color::Red if !chord.is_very_short() => {
                chords[i].color = Color::Blue;
                self.finish_shift(name, self.ell, chords, SigmaSpec::GammaAt(chord.a))
            }
            Color::Blue if !chord.is_very_short() => {
                chords[i].color = Color::Purple;
                self.finish_shift(name, self.ell, chords, SigmaSpec::GammaAt(chord.a))
            }
            Color::Red | Color::Blue => {
                // Very short chord: re-grow to its left, pulling the chords
                // that ended at its start onto the yellow end.
                let (cs, ds) = star.expect("colored chords only occur at loop order one");
                debug_assert_eq!(chord.start(), (cs - 1, cs));
                let new_color = match chord.color {
                    Color::Red => Color::Blue,
                    _ => Color::Purple,
                };
                for j in 0..chords.len() {
                    if self.chords[j].end() == (cs - 1, cs) {
                        chords[j].c = cs;
                        chords[j].d = ds;
                        chords[j].color = new_color;
                    }
                }
                chords[i] = Chord {
                    a: cs - 2,
                    b: cs - 1,
                    c: cs,
                    d: ds,
                    color: new_color,
                };
                self.finish_shift(name, self.ell, chords, SigmaSpec::AlphaAt(cs - 2))
            }
            Color::Black | Color::Purple => {
                if !chord.is_short() {
                    chords[i] = Chord {
                        a: chord.a,
                        b: chord.b,
                        c: chord.c - 1,
                        d: chord.c,
                        color: Color::Black,
                    };
                    return self.finish_shift(name, self.ell, chords, SigmaSpec::GammaAt(chord.a));
                }
                if star == Some(chord.start()) {
                    // Short black chord starting at the yellow end: it turns
                    // into a very short blue chord and the cluster slides
                    // onto its middle domino.
                    for j in 0..chords.len() {
                        match self.chords[j].color {
                            Color::Red | Color::Blue => {
                                chords[j].c = chord.b;
                                chords[j].d = chord.b + 1;
                            }
                            Color::Purple => chords[j].color = Color::Black,
                            Color::Black => {
                                if self.chords[j].end() == chord.start() {
                                    chords[j].c = chord.b;
                                    chords[j].d = chord.b + 1;
                                }
                            }
                        }
                    }
                    chords[i] = Chord {
                        a: chord.a,
                        b: chord.b,
                        c: chord.b,
                        d: chord.b + 1,
                        color: Color::Blue,
                    };
                    self.finish_shift(name, self.ell, chords, SigmaSpec::EpsilonAt(chord.a))
                } else {
                    // Short chord slides left; chords ending at its start
                    // slide onto its new end.
                    for j in 0..chords.len() {
                        if self.chords[j].end() == chord.start() {
                            chords[j].c = chord.b;
                            chords[j].d = chord.c;
                        }
                    }
                    chords[i] = Chord {
                        a: chord.a - 1,
                        b: chord.a,
                        c: chord.b,
                        d: chord.c,
                        color: Color::Black,
                    };
                    self.finish_shift(name, self.ell, chords, SigmaSpec::AlphaAt(chord.a - 1))
                }
            }
        }
    }

    fn shift_epsilon(&self, label: usize) -> Result<(ChordDiagram, SigmaSpec), ChordError> {
        let name = ShiftName::Epsilon(label);
        let h = label - 1;
        self.chord(label)?;
        if self.lowest_blue_idx() != Some(h) {
            return Err(Self::undefined(
                name,
                "the blue shift acts on the lowest blue chord",
            ));
        }
        let blue = self.chords[h];
        let (cs, ds) = self.star_end().expect("blue chords imply a yellow chord");
        let very_short = blue.is_very_short();
        let m = self.n();
        // Chords whose ends move back onto the blue chord's start.
        let re_set: Vec<usize> = (0..self.chords.len())
            .filter(|&j| {
                j != h
                    && (matches!(self.chords[j].color, Color::Red | Color::Blue)
                        || (very_short
                            && self.chords[j].color == Color::Black
                            && self.chords[j].end() == (cs, ds)))
            })
            .collect();
        // Chords already ending at the blue start, nested inside a moved
        // chord: they become the new purple cluster.
        let new_purple: Vec<usize> = (0..self.chords.len())
            .filter(|&j| {
                self.chords[j].end() == blue.start()
                    && re_set.iter().any(|&r| self.chords[r].a < self.chords[j].a)
            })
            .collect();
        let mut chords = self.chords.clone();
        for j in 0..chords.len() {
            if chords[j].color == Color::Purple {
                chords[j].color = Color::Black;
            }
        }
        chords[h].color = Color::Black;
        for &r in &re_set {
            chords[r].c = blue.a;
            chords[r].d = blue.b;
        }
        for &z in &new_purple {
            chords[z].color = Color::Purple;
        }
        let spec = if very_short {
            if let Some(l) = self.starter_at(cs) {
                let target = self.chords[l];
                chords[h] = Chord {
                    a: blue.a,
                    b: blue.b,
                    c: target.c,
                    d: target.d,
                    color: Color::Black,
                };
                SigmaSpec::GammaAt(target.a)
            } else {
                if blue.b + 2 > m - 1 {
                    return Err(Self::undefined(
                        name,
                        "no room to re-grow the very short blue chord",
                    ));
                }
                chords[h] = Chord {
                    a: blue.a,
                    b: blue.b,
                    c: blue.b + 1,
                    d: blue.b + 2,
                    color: Color::Black,
                };
                SigmaSpec::DeltaAt(blue.a)
            }
        } else {
            SigmaSpec::GammaStar
        };
        self.finish_shift(name, self.ell, chords, spec)
    }

    fn shift_delta_zero(&self) -> Result<(ChordDiagram, SigmaSpec), ChordError> {
        let name = ShiftName::DeltaZero;
        let reds = self.indices_of_color(Color::Red);
        if reds.len() < 2 {
            return Err(Self::undefined(
                name,
                "the red shift needs at least two red chords",
            ));
        }
        let tr = self.top_red_idx().expect("red chords exist");
        let mut chords = self.chords.clone();
        chords[tr].color = Color::Black;
        self.finish_shift(name, self.ell, chords, SigmaSpec::GammaStar)
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DiagramWire {
    n: usize,
    k: usize,
    ell: usize,
    chords: Vec<Chord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    markers: Option<Vec<Marker>>,
}

impl Serialize for ChordDiagram {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let plain = self.markers == IndexSet::ints(self.n() as i64);
        DiagramWire {
            n: self.n(),
            k: self.k(),
            ell: self.ell,
            chords: self.chords.clone(),
            markers: if plain {
                None
            } else {
                Some(self.markers.labels().to_vec())
            },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ChordDiagram {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = DiagramWire::deserialize(d)?;
        let markers = match wire.markers {
            Some(labels) => IndexSet::new(labels).map_err(D::Error::custom)?,
            None => IndexSet::ints(wire.n as i64),
        };
        if markers.len() != wire.n {
            return Err(D::Error::custom(format!(
                "marker count {} does not match n = {}",
                markers.len(),
                wire.n
            )));
        }
        let diagram =
            ChordDiagram::new(markers, wire.ell, wire.chords).map_err(D::Error::custom)?;
        if diagram.k() != wire.k {
            return Err(D::Error::custom(format!(
                "chord count implies k = {}, but k = {} was declared",
                diagram.k(),
                wire.k
            )));
        }
        Ok(diagram)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(a: usize, c: usize, color: Color) -> Chord {
        Chord::new(a, c, color)
    }

    /// The running example: n = 19, k = 7, one loop, eight chords.
    fn big_example() -> ChordDiagram {
        ChordDiagram::on_integers(
            19,
            1,
            vec![
                ch(2, 4, Color::Black),
                ch(4, 6, Color::Black),
                ch(1, 6, Color::Black),
                ch(8, 10, Color::Black),
                ch(6, 11, Color::Black),
                ch(14, 17, Color::Purple),
                ch(13, 17, Color::Blue),
                ch(12, 17, Color::Red),
            ],
        )
        .unwrap()
    }

    #[test]
    fn storage_order_is_canonical() {
        let d = big_example();
        let starts: Vec<usize> = d.chords().iter().map(|c| c.a).collect();
        assert_eq!(starts, vec![2, 4, 1, 8, 6, 14, 13, 12]);
        assert_eq!(d.top_red_label(), Some(8));
        assert_eq!(d.star_end(), Some((17, 18)));
        assert_eq!(d.k(), 7);
    }

    #[test]
    fn relations_on_big_example() {
        let d = big_example();
        assert_eq!(d.parent(1).unwrap(), Some(3));
        assert_eq!(d.parent(4).unwrap(), Some(5));
        assert_eq!(d.parent(6).unwrap(), Some(7));
        assert_eq!(d.parent(7).unwrap(), Some(8));
        assert_eq!(d.parent(8).unwrap(), None);
        assert_eq!(d.descendants(8).unwrap(), vec![6, 7]);
        assert!(d.is_sticky_child(6).unwrap());
        assert!(d.is_sticky_child(7).unwrap());
        assert!(d.is_sticky_child(1).unwrap());
        assert!(!d.is_sticky_child(2).unwrap());
    }

    #[test]
    fn stats_on_big_example() {
        let d = big_example();
        let s4 = d.stats(ChordRef::Label(4)).unwrap();
        assert_eq!(s4.below, 0);
        assert_eq!(s4.after, 2);
        assert_eq!(s4.between, 0);
        let s5 = d.stats(ChordRef::Label(5)).unwrap();
        assert_eq!(s5.below, 1);
        let s_top = d.stats(ChordRef::Label(8)).unwrap();
        assert_eq!(s_top.below, 2);
        assert_eq!(s_top.after, 0);
        assert_eq!(s_top.between, 8);
        let s_star = d.stats(ChordRef::Star).unwrap();
        assert_eq!(s_star.below, 2);
        assert_eq!(s_star.between, 8);
        assert_eq!(s_star.outside, (1..=8).collect::<Vec<_>>());
        assert_eq!(s_top.outside, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn pre_fl_moves_colored_ends_onto_fresh_markers() {
        let d = big_example();
        let pre_fl = d.subdiagram(SubdiagramKind::PreFl).unwrap();
        assert_eq!(pre_fl.n(), 21);
        assert_eq!(pre_fl.ell(), 0);
        assert_eq!(pre_fl.markers().at(18), Marker::A);
        assert_eq!(pre_fl.markers().at(19), Marker::B);
        assert_eq!(pre_fl.markers().at(20), Marker::Int(19));
        let red = pre_fl.chords().iter().find(|c| c.a == 12).unwrap();
        assert_eq!(red.end(), (19, 20)); // markers (A, B)
        let blue = pre_fl.chords().iter().find(|c| c.a == 13).unwrap();
        assert_eq!(blue.end(), (18, 19)); // markers (18, A)
        let purple = pre_fl.chords().iter().find(|c| c.a == 14).unwrap();
        assert_eq!(purple.end(), (17, 18)); // markers (17, 18)
        assert!(pre_fl.chords().iter().all(|c| c.color == Color::Black));
    }

    #[test]
    fn product_split_of_pre_fl_matches_expected_marker_sets() {
        let d = big_example();
        let pre_fl = d.subdiagram(SubdiagramKind::PreFl).unwrap();
        assert_eq!(pre_fl.rightmost_top_label(), Some(8));
        let left = pre_fl.subdiagram(SubdiagramKind::Left).unwrap();
        let expected: Vec<Marker> = (1..=13)
            .map(Marker::Int)
            .chain(std::iter::once(Marker::Int(19)))
            .collect();
        assert_eq!(left.markers().labels(), expected.as_slice());
        assert_eq!(left.chords().len(), 5);
        let right = pre_fl.subdiagram(SubdiagramKind::Right).unwrap();
        assert_eq!(right.n(), 9);
        let spans: Vec<(usize, usize)> = right.chords().iter().map(|c| (c.a, c.c)).collect();
        assert_eq!(spans, vec![(2, 5), (1, 6)]);
        assert_eq!(right.markers().at(6), Marker::A);
        assert_eq!(right.markers().at(7), Marker::B);
        assert_eq!(right.markers().at(8), Marker::Int(19));
    }

    #[test]
    fn fl_subdiagram_is_whole_diagram_for_top_level_red() {
        let d = big_example();
        assert_eq!(d.subdiagram(SubdiagramKind::Fl).unwrap(), d);
    }

    #[test]
    fn validation_catches_broken_rules() {
        let crossing = ChordDiagram::on_integers(
            8,
            0,
            vec![ch(1, 4, Color::Black), ch(2, 6, Color::Black)],
        );
        assert!(matches!(crossing, Err(ChordError::Invalid(v))
            if v.iter().any(|x| matches!(x, RuleViolation::Crossing { .. }))));

        let no_red = ChordDiagram::on_integers(6, 1, vec![ch(1, 3, Color::Black)]);
        assert!(matches!(no_red, Err(ChordError::Invalid(v))
            if v.contains(&RuleViolation::NoRedChord)));

        let vs_black = ChordDiagram::on_integers(
            7,
            1,
            vec![ch(1, 4, Color::Red), ch(2, 3, Color::Black)],
        );
        assert!(matches!(vs_black, Err(ChordError::Invalid(v))
            if v.iter().any(|x| matches!(x, RuleViolation::VeryShortBadColor { .. }))));

        let late_black = ChordDiagram::on_integers(
            8,
            1,
            vec![ch(1, 5, Color::Red), ch(2, 5, Color::Black)],
        );
        assert!(matches!(late_black, Err(ChordError::Invalid(v))
            if v.iter().any(|x| matches!(x, RuleViolation::BlackEndsAtStarLate { .. }))));

        let color_order = ChordDiagram::on_integers(
            8,
            1,
            vec![ch(2, 5, Color::Red), ch(1, 5, Color::Blue)],
        );
        assert!(matches!(color_order, Err(ChordError::Invalid(v))
            if v.iter().any(|x| matches!(x, RuleViolation::ColorOrder { .. }))));

        let off_star = ChordDiagram::on_integers(
            9,
            1,
            vec![ch(1, 5, Color::Red), ch(2, 4, Color::Blue)],
        );
        assert!(matches!(off_star, Err(ChordError::Invalid(v))
            if v.iter().any(|x| matches!(x, RuleViolation::ColoredChordBadEnd { .. }))));
    }

    #[test]
    fn enumeration_matches_closed_counts() {
        for n in 4..=9 {
            assert_eq!(enumerate(n, 0, 0).unwrap().len(), 1, "n={n}");
        }
        assert_eq!(enumerate(7, 2, 0).unwrap().len(), 6);
        assert_eq!(enumerate(5, 1, 1).unwrap().len(), 3);
        assert_eq!(enumerate(6, 1, 1).unwrap().len(), 16);
        assert_eq!(enumerate(4, 0, 1).unwrap().len(), 1);
        let lone = enumerate(4, 0, 1).unwrap();
        assert_eq!(lone[0].chords(), &[ch(1, 2, Color::Red)]);
    }

    #[test]
    fn generation_round_trip_on_big_example() {
        let d = big_example();
        let steps = d.generation_sequence().unwrap();
        assert_eq!(diagram_of_steps(&steps).unwrap(), d);
        assert!(steps.contains(&Step::ForwardLimit));
    }

    #[test]
    fn sticky_red_chain_shift_and_return() {
        // Two nested red chords; the inner one is a sticky same-end child.
        let d = ChordDiagram::on_integers(
            7,
            1,
            vec![ch(2, 5, Color::Red), ch(3, 5, Color::Red)],
        )
        .unwrap();
        assert_eq!(d.top_red_label(), Some(2));
        let (shifted, sigma) = d.match_shift(ShiftName::Gamma(ChordRef::Label(1))).unwrap();
        let expected = ChordDiagram::on_integers(
            7,
            1,
            vec![ch(1, 3, Color::Black), ch(3, 5, Color::Red)],
        )
        .unwrap();
        assert_eq!(shifted, expected);
        assert_eq!(sigma, ShiftName::Alpha(1));
        let (back, sigma_back) = shifted.match_shift(sigma).unwrap();
        assert_eq!(back, d);
        assert_eq!(sigma_back, ShiftName::Gamma(ChordRef::Label(1)));
    }

    #[test]
    fn loose_red_chain_shift_and_return() {
        let d = ChordDiagram::on_integers(
            8,
            1,
            vec![ch(2, 6, Color::Red), ch(4, 6, Color::Red)],
        )
        .unwrap();
        let (shifted, sigma) = d.match_shift(ShiftName::Gamma(ChordRef::Label(1))).unwrap();
        let expected = ChordDiagram::on_integers(
            8,
            1,
            vec![ch(2, 4, Color::Black), ch(4, 6, Color::Red)],
        )
        .unwrap();
        assert_eq!(shifted, expected);
        assert_eq!(sigma, ShiftName::Gamma(ChordRef::Label(1)));
        let (back, _) = shifted.match_shift(sigma).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn red_shift_pairs_with_yellow_end_shift() {
        let d = ChordDiagram::on_integers(
            8,
            1,
            vec![ch(1, 6, Color::Red), ch(3, 6, Color::Red)],
        )
        .unwrap();
        let (shifted, sigma) = d.match_shift(ShiftName::DeltaZero).unwrap();
        assert_eq!(sigma, ShiftName::Gamma(ChordRef::Star));
        let expected = ChordDiagram::on_integers(
            8,
            1,
            vec![ch(1, 6, Color::Black), ch(3, 6, Color::Red)],
        )
        .unwrap();
        assert_eq!(shifted, expected);
        let (back, sigma_back) = shifted.match_shift(sigma).unwrap();
        assert_eq!(back, d);
        assert_eq!(sigma_back, ShiftName::DeltaZero);
    }

    #[test]
    fn blue_shift_pairs_with_yellow_end_shift() {
        // Top-level red with a blue child: the blue shift rebuilds the
        // yellow end at the blue start.
        let d = ChordDiagram::on_integers(
            9,
            1,
            vec![ch(1, 6, Color::Red), ch(3, 6, Color::Blue)],
        )
        .unwrap();
        let lowest = d.lowest_blue_label().unwrap();
        let (shifted, sigma) = d.match_shift(ShiftName::Epsilon(lowest)).unwrap();
        assert_eq!(sigma, ShiftName::Gamma(ChordRef::Star));
        let expected = ChordDiagram::on_integers(
            9,
            1,
            vec![ch(1, 3, Color::Red), ch(3, 6, Color::Black)],
        )
        .unwrap();
        assert_eq!(shifted, expected);
        let (back, sigma_back) = shifted.match_shift(sigma).unwrap();
        assert_eq!(back, d);
        assert_eq!(sigma_back, ShiftName::Epsilon(1));
    }

    #[test]
    fn short_red_start_shift_pairs_with_beta() {
        let d = ChordDiagram::on_integers(7, 1, vec![ch(2, 4, Color::Red)]).unwrap();
        let (shifted, sigma) = d.match_shift(ShiftName::Alpha(1)).unwrap();
        let expected = ChordDiagram::on_integers(7, 1, vec![ch(3, 4, Color::Red)]).unwrap();
        assert_eq!(shifted, expected);
        assert_eq!(sigma, ShiftName::Beta(1));
        let (back, _) = shifted.match_shift(sigma).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn color_ladder_between_short_and_very_short() {
        // Short blue over a red chain: very short red below.
        let d = ChordDiagram::on_integers(
            8,
            1,
            vec![ch(1, 5, Color::Red), ch(3, 5, Color::Blue)],
        )
        .unwrap();
        let (shifted, sigma) = d.match_shift(ShiftName::Alpha(1)).unwrap();
        let expected = ChordDiagram::on_integers(
            8,
            1,
            vec![ch(1, 5, Color::Red), ch(4, 5, Color::Red)],
        )
        .unwrap();
        assert_eq!(shifted, expected);
        let vs_label = shifted
            .chords()
            .iter()
            .position(|c| c.is_very_short())
            .unwrap()
            + 1;
        assert_eq!(sigma, ShiftName::Delta(ChordRef::Label(vs_label)));
        let (back, _) = shifted.match_shift(sigma).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn serde_round_trip() {
        let d = big_example();
        let json = serde_json::to_string(&d).unwrap();
        let back: ChordDiagram = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        assert!(!json.contains("markers"));
        let pre_fl = d.subdiagram(SubdiagramKind::PreFl).unwrap();
        let json2 = serde_json::to_string(&pre_fl).unwrap();
        assert!(json2.contains("markers"));
        let back2: ChordDiagram = serde_json::from_str(&json2).unwrap();
        assert_eq!(back2, pre_fl);
    }

    #[test]
    fn shift_names_parse_and_print() {
        for name in [
            ShiftName::Alpha(3),
            ShiftName::Beta(1),
            ShiftName::Gamma(ChordRef::Star),
            ShiftName::Gamma(ChordRef::Label(2)),
            ShiftName::Delta(ChordRef::Star),
            ShiftName::Delta(ChordRef::Label(7)),
            ShiftName::Epsilon(4),
            ShiftName::DeltaZero,
        ] {
            let s = name.to_string();
            assert_eq!(s.parse::<ShiftName>().unwrap(), name, "{s}");
        }
    }
}
