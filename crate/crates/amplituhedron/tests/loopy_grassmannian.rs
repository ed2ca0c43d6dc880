//! Property tests for loopy-matrix moves: each move's exact effect on the
//! maximal-minor vectors, preservation of nonnegativity, and the quadratic
//! exchange relations between the two minor levels.

use amplituhedron::exact_core::{proj_eq, rat, rat_int, IndexSet, Marker, ProjVec, Rat};
use amplituhedron::loopy_grassmannian::{
    loopy_eq, op_addL, op_inc, op_pre, op_rem, op_scale, op_x, op_y, sample_positive_point,
    LoopyMatrix,
};
use num::traits::Zero;
use proptest::prelude::*;

/// Positions (into `cols`) of a minor key.
fn key_positions(cols: &IndexSet, key: &[Marker]) -> Vec<usize> {
    let mut ps: Vec<usize> = key.iter().map(|&m| cols.position(m).unwrap()).collect();
    ps.sort_unstable();
    ps
}

/// The stored-order key for a sorted list of column positions.
fn key_of_positions(cols: &IndexSet, positions: &[usize]) -> Vec<Marker> {
    positions.iter().map(|&p| cols.at(p)).collect()
}

/// Checks the shear effect: minors with exactly the destination column in
/// `{src, dst}` gain `t` times the minor with `dst` swapped for `src`; all
/// others are unchanged.  `src`/`dst` are column positions of `m.cols()`.
fn check_shear_effect(
    before: &ProjVec,
    after: &ProjVec,
    cols: &IndexSet,
    src: usize,
    dst: usize,
    t: &Rat,
) {
    for (key, value) in after.iter() {
        let ps = key_positions(cols, key);
        let has_src = ps.contains(&src);
        let has_dst = ps.contains(&dst);
        let expected = if has_dst && !has_src {
            let swapped: Vec<usize> = {
                let mut v: Vec<usize> = ps.iter().copied().filter(|&p| p != dst).collect();
                v.push(src);
                v.sort_unstable();
                v
            };
            // Swapping one column keeps the row set; the minor with src in
            // dst's slot equals the sorted minor up to the permutation sign
            // moving src past the columns between src and dst.
            let between = ps
                .iter()
                .filter(|&&p| (src.min(dst) < p) && (p < src.max(dst)))
                .count();
            let sign = if between % 2 == 0 {
                rat_int(1)
            } else {
                rat_int(-1)
            };
            let base = before.get(key).unwrap().clone();
            let other = before
                .get(&key_of_positions(cols, &swapped))
                .unwrap()
                .clone();
            base + t * sign * other
        } else {
            before.get(key).unwrap().clone()
        };
        assert_eq!(value, &expected, "key {key:?}");
    }
}

fn shape_strategy() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (0usize..=2, 0usize..=2, 0usize..=1, any::<u64>())
        .prop_map(|(k, extra, ell, seed)| (k, k + 2 + extra, ell, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampling_is_positive_and_deterministic((k, n, ell, seed) in shape_strategy()) {
        let m = sample_positive_point(k, n, ell, seed).unwrap();
        prop_assert!(m.is_positive());
        prop_assert!(m.is_full_rank());
        let again = sample_positive_point(k, n, ell, seed).unwrap();
        prop_assert!(loopy_eq(&m, &again).unwrap());
    }

    #[test]
    fn shears_and_scales_preserve_nonnegativity(
        (k, n, ell, seed) in shape_strategy(),
        moves in prop::collection::vec((0usize..3, 0usize..8, 1i64..=9, 1i64..=9), 1..5),
    ) {
        let mut m = sample_positive_point(k, n, ell, seed).unwrap();
        for (which, pos, num, den) in moves {
            let h = m.cols().at(pos % m.cols().len());
            let t = rat(num, den);
            m = match which {
                0 => op_x(&m, h, &t).unwrap(),
                1 => op_y(&m, h, &t).unwrap(),
                _ => op_scale(&m, h, &t).unwrap(),
            };
            prop_assert!(m.is_nonnegative());
        }
    }

    #[test]
    fn x_effect_on_minors((k, n, ell, seed) in shape_strategy(), pos in 0usize..8, num in -9i64..=9, den in 1i64..=9) {
        let m = sample_positive_point(k, n, ell, seed).unwrap();
        let p = pos % n;
        let h = m.cols().at(p);
        let t = rat(num, den);
        let out = op_x(&m, h, &t).unwrap();
        let (src, dst) = if p + 1 < n { (p, p + 1) } else { (p, 0) };
        let t_eff = if p + 1 < n {
            t
        } else if k % 2 == 1 {
            t
        } else {
            -t
        };
        check_shear_effect(
            &m.tree_pluckers().unwrap(),
            &out.tree_pluckers().unwrap(),
            m.cols(),
            src,
            dst,
            &t_eff,
        );
        if ell == 1 {
            // The loop level sees the same column move; the wrap sign works
            // out identically because k and k+2 share parity.
            check_shear_effect(
                &m.stacked_pluckers().unwrap(),
                &out.stacked_pluckers().unwrap(),
                m.cols(),
                src,
                dst,
                &t_eff,
            );
        }
    }

    #[test]
    fn y_effect_on_minors((k, n, ell, seed) in shape_strategy(), pos in 0usize..8, num in -9i64..=9, den in 1i64..=9) {
        let m = sample_positive_point(k, n, ell, seed).unwrap();
        let p = pos % n;
        let h = m.cols().at(p);
        let t = rat(num, den);
        let out = op_y(&m, h, &t).unwrap();
        // y adds the successor column into column h: src = successor, dst = h.
        let (src, dst) = if p + 1 < n { (p + 1, p) } else { (0, p) };
        let t_eff = if p + 1 < n || k % 2 == 1 { t } else { -t };
        check_shear_effect(
            &m.tree_pluckers().unwrap(),
            &out.tree_pluckers().unwrap(),
            m.cols(),
            src,
            dst,
            &t_eff,
        );
        if ell == 1 {
            check_shear_effect(
                &m.stacked_pluckers().unwrap(),
                &out.stacked_pluckers().unwrap(),
                m.cols(),
                src,
                dst,
                &t_eff,
            );
        }
    }

    #[test]
    fn scale_effect_on_minors((k, n, ell, seed) in shape_strategy(), pos in 0usize..8, num in 1i64..=9, den in 1i64..=9) {
        let m = sample_positive_point(k, n, ell, seed).unwrap();
        let h = m.cols().at(pos % n);
        let t = rat(num, den);
        let out = op_scale(&m, h, &t).unwrap();
        for (before, after) in [
            (m.tree_pluckers().unwrap(), out.tree_pluckers().unwrap()),
            (m.stacked_pluckers().unwrap(), out.stacked_pluckers().unwrap()),
        ] {
            for (key, value) in after.iter() {
                let expected = if key.contains(&h) {
                    &t * before.get(key).unwrap()
                } else {
                    before.get(key).unwrap().clone()
                };
                prop_assert_eq!(value, &expected);
            }
        }
    }

    #[test]
    fn inc_effect_on_minors((k, n, ell, seed) in shape_strategy(), cpos in 0usize..8, rpos in 0usize..8) {
        let m = sample_positive_point(k, n, ell, seed).unwrap();
        let h = Marker::Int(1000);
        let col_pos = cpos % (n + 1);
        let row_pos = rpos % (k + 1);
        let out = op_inc(&m, h, col_pos, row_pos).unwrap();
        let before = m.tree_pluckers().unwrap();
        for (key, value) in out.tree_pluckers().unwrap().iter() {
            if key.contains(&h) {
                let rest: Vec<Marker> = key.iter().copied().filter(|&c| c != h).collect();
                prop_assert_eq!(value, before.get(&rest).unwrap());
            } else {
                prop_assert!(value.is_zero());
            }
        }
    }

    #[test]
    fn rem_keeps_remaining_minors((k, n, ell, seed) in shape_strategy(), pos in 0usize..8) {
        let m = sample_positive_point(k, n + 1, ell, seed).unwrap();
        let h = m.cols().at(pos % (n + 1));
        let out = op_rem(&m, h).unwrap();
        let before = m.tree_pluckers().unwrap();
        for (key, value) in out.tree_pluckers().unwrap().iter() {
            prop_assert_eq!(value, before.get(key).unwrap());
        }
    }

    #[test]
    fn addl_effect_on_minors(k2 in 0usize..=2, extra in 0usize..=1, seed in any::<u64>(), pos in 0usize..8) {
        // Need a loop-free input with at least two tree rows.
        let k = k2 + 2;
        let n = k + 2 + extra;
        let m = sample_positive_point(k, n, 0, seed).unwrap();
        let pa = pos % n;
        let a = m.cols().at(pa);
        let b = m.cols().successor_cyclic(a).unwrap();
        let out = op_addL(&m, a, b).unwrap();

        // Loop level: the stacked span is the input's row span.
        prop_assert!(proj_eq(&out.stacked_pluckers().unwrap(), &m.tree_pluckers().unwrap()).unwrap());

        // Tree level: minors through a or b vanish; the rest agree
        // projectively with input minors widened by {a, b}.
        let tree_before = m.tree_pluckers().unwrap();
        let tree_after = out.tree_pluckers().unwrap();
        let mut lhs = Vec::new();
        let mut rhs = Vec::new();
        for (key, value) in tree_after.iter() {
            if key.contains(&a) || key.contains(&b) {
                prop_assert!(value.is_zero());
            } else {
                let mut widened = key_positions(m.cols(), key);
                widened.push(m.cols().position(a).unwrap());
                widened.push(m.cols().position(b).unwrap());
                widened.sort_unstable();
                lhs.push((key.clone(), value.clone()));
                rhs.push((
                    key.clone(),
                    tree_before
                        .get(&key_of_positions(m.cols(), &widened))
                        .unwrap()
                        .clone(),
                ));
            }
        }
        let lhs = ProjVec::from_pairs(lhs).unwrap();
        let rhs = ProjVec::from_pairs(rhs).unwrap();
        prop_assert!(proj_eq(&lhs, &rhs).unwrap());
    }
}

/// The reorder sign moving `j` into sorted position within `I`.
fn append_sign(i_set: &[usize], j: usize) -> i64 {
    let above = i_set.iter().filter(|&&p| p > j).count();
    if above % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Exhaustively checks the exchange relation between minor levels of sizes
/// `r` and `s`: for every `I` of size `r−1` and `J` of size `s+1`,
/// `Σ_h ± P_{I∪{j_h}} · P_{J∖{j_h}} = 0`, with the antisymmetric-symbol sign
/// `(−1)^h · sign(sorting j_h into I)` and vanishing terms skipped.
fn check_exchange_relations(p_r: &ProjVec, p_s: &ProjVec, cols: &IndexSet, r: usize, s: usize) {
    use itertools::Itertools;
    let n = cols.len();
    if r == 0 {
        return;
    }
    for i_set in (0..n).combinations(r - 1) {
        for j_set in (0..n).combinations(s + 1) {
            let mut acc = Rat::zero();
            for (h, &j) in j_set.iter().enumerate() {
                if i_set.contains(&j) {
                    continue;
                }
                let mut i_with: Vec<usize> = i_set.clone();
                i_with.push(j);
                i_with.sort_unstable();
                let j_without: Vec<usize> =
                    j_set.iter().copied().filter(|&x| x != j).collect();
                let first = p_r.get(&key_of_positions(cols, &i_with)).unwrap();
                let second = p_s.get(&key_of_positions(cols, &j_without)).unwrap();
                let sign = rat_int(if h % 2 == 0 { 1 } else { -1 } * append_sign(&i_set, j));
                acc += sign * first * second;
            }
            assert!(
                acc.is_zero(),
                "exchange relation fails for r={r}, s={s}, I={i_set:?}, J={j_set:?}"
            );
        }
    }
}

#[test]
fn exchange_relations_hold_on_sampled_points() {
    for (k, n, ell, seed) in [(1, 5, 1, 42), (2, 6, 1, 7), (2, 5, 0, 9), (0, 4, 1, 3)] {
        let m = sample_positive_point(k, n, ell, seed).unwrap();
        let tree = m.tree_pluckers().unwrap();
        check_exchange_relations(&tree, &tree, m.cols(), k, k);
        if ell == 1 {
            // The insertion index always joins the smaller level's symbol:
            // with sizes (r, s) = (k+2, k) the sum can be a single generically
            // nonzero term, so only r ≤ s pairs are relations.
            let stacked = m.stacked_pluckers().unwrap();
            check_exchange_relations(&stacked, &stacked, m.cols(), k + 2, k + 2);
            check_exchange_relations(&tree, &stacked, m.cols(), k, k + 2);
        }
    }
}

#[test]
fn wrap_shear_matches_cyclic_effect() {
    // Exercise the wrap case deliberately for both parities of k.
    for (k, n, ell, seed) in [(1, 5, 1, 1), (2, 6, 1, 2), (2, 5, 0, 3), (3, 6, 0, 4)] {
        let m = sample_positive_point(k, n, ell, seed).unwrap();
        let last = m.cols().at(n - 1);
        let t = rat(3, 2);
        let out = op_x(&m, last, &t).unwrap();
        let t_eff = if k % 2 == 1 { t.clone() } else { -t.clone() };
        check_shear_effect(
            &m.tree_pluckers().unwrap(),
            &out.tree_pluckers().unwrap(),
            m.cols(),
            n - 1,
            0,
            &t_eff,
        );
        let out_y = op_y(&m, last, &t).unwrap();
        check_shear_effect(
            &m.tree_pluckers().unwrap(),
            &out_y.tree_pluckers().unwrap(),
            m.cols(),
            0,
            n - 1,
            &t_eff,
        );
    }
}

#[test]
fn rem_rejects_rank_dropping_removal() {
    // A row supported on one column loses all rank when that column goes.
    let tree = amplituhedron::exact_core::ExactMatrix::new(
        IndexSet::ints(3),
        vec![vec![rat_int(1), rat_int(0), rat_int(0)]],
    )
    .unwrap();
    let m = LoopyMatrix::tree_only(tree);
    assert!(m.is_full_rank());
    assert!(op_rem(&m, Marker::Int(1)).is_err());
    assert!(op_rem(&m, Marker::Int(2)).is_ok());
}

#[test]
fn pre_then_rem_round_trips() {
    let m = sample_positive_point(2, 6, 1, 17).unwrap();
    let h = Marker::Int(50);
    let out = op_pre(&m, h, 3).unwrap();
    let back = op_rem(&out, h).unwrap();
    assert!(loopy_eq(&m, &back).unwrap());
    assert_eq!(back.tree().rows(), m.tree().rows());
}
