//! Property tests for the exact-arithmetic layer.
//!
//! Laws covered:
//! - minors are alternating: swapping two columns of the request flips sign;
//! - rank equals the size of the largest nonzero minor (matrices up to 5×8);
//! - Laplace expansion along the first row agrees with direct computation.

use amplituhedron::exact_core::{rat_int, ExactMatrix, IndexSet, Marker, Rat};
use itertools::Itertools;
use proptest::prelude::*;

fn small_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = ExactMatrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        proptest::collection::vec(proptest::collection::vec(-9i64..=9, c), r).prop_map(
            move |rows| {
                ExactMatrix::new(
                    IndexSet::ints(c as i64),
                    rows.into_iter()
                        .map(|row| row.into_iter().map(rat_int).collect())
                        .collect(),
                )
                .unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn minor_alternating_under_column_swap(m in small_matrix(4, 6)) {
        let k = m.nrows().min(m.ncols());
        if k < 2 { return Ok(()); }
        let rows: Vec<usize> = (0..k).collect();
        let cols: Vec<Marker> = (1..=k as i64).map(Marker::Int).collect();
        let direct = m.minor(&rows, &cols).unwrap();
        let mut swapped = cols.clone();
        swapped.swap(0, 1);
        let flipped = m.minor(&rows, &swapped).unwrap();
        prop_assert_eq!(direct, -flipped);
    }

    #[test]
    fn rank_is_largest_nonzero_minor(m in small_matrix(5, 8)) {
        let rank = m.rank();
        let mut largest = 0usize;
        let nr = m.nrows();
        let nc = m.ncols();
        for size in 1..=nr.min(nc) {
            let mut found = false;
            for rows in (0..nr).combinations(size) {
                for cols in (0..nc).combinations(size) {
                    let labels: Vec<Marker> =
                        cols.iter().map(|&c| m.cols().at(c)).collect();
                    if m.minor(&rows, &labels).unwrap() != rat_int(0) {
                        found = true;
                        break;
                    }
                }
                if found { break; }
            }
            if found { largest = size; }
        }
        prop_assert_eq!(rank, largest);
    }

    #[test]
    fn laplace_expansion_along_first_row(m in small_matrix(4, 4)) {
        let k = m.nrows().min(m.ncols());
        let rows: Vec<usize> = (0..k).collect();
        let cols: Vec<Marker> = (1..=k as i64).map(Marker::Int).collect();
        let direct = m.minor(&rows, &cols).unwrap();
        let mut expanded: Rat = rat_int(0);
        for (j, &col) in cols.iter().enumerate() {
            let entry = m.entry(0, col).unwrap().clone();
            if k == 1 {
                expanded += entry;
                continue;
            }
            let sub_rows: Vec<usize> = rows[1..].to_vec();
            let sub_cols: Vec<Marker> = cols
                .iter()
                .enumerate()
                .filter(|&(jj, _)| jj != j)
                .map(|(_, &c)| c)
                .collect();
            let cof = m.minor(&sub_rows, &sub_cols).unwrap();
            let term = entry * cof;
            if j % 2 == 0 { expanded += term; } else { expanded -= term; }
        }
        prop_assert_eq!(direct, expanded);
    }

    #[test]
    fn maximal_minors_match_individual_minors(m in small_matrix(3, 6)) {
        if m.nrows() > m.ncols() { return Ok(()); }
        let mm = m.maximal_minors().unwrap();
        let rows: Vec<usize> = (0..m.nrows()).collect();
        for cols in (0..m.ncols()).combinations(m.nrows()) {
            let labels: Vec<Marker> = cols.iter().map(|&c| m.cols().at(c)).collect();
            let direct = m.minor(&rows, &labels).unwrap();
            prop_assert_eq!(mm.get(&labels).unwrap(), &direct);
        }
    }
}
