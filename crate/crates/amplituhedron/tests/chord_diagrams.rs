//! Integration tests for chord diagrams: closed-form counts, the boundary
//! shift involution, substructure validity, and generation replay.

use amplituhedron::chord_diagrams::{
    diagram_of_steps, enumerate, ChordDiagram, ChordRef, ShiftName, SubdiagramKind,
};

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut out: usize = 1;
    for i in 0..k.min(n - k) {
        out = out * (n - i) / (i + 1);
    }
    out
}

/// Trees are counted by the Narayana numbers.
#[test]
fn tree_counts_are_narayana() {
    for n in 4..=12 {
        for k in 0..=4 {
            let expected = binomial(n - 4, k) * binomial(n - 3, k) / (k + 1);
            let got = enumerate(n, k, 0).unwrap().len();
            assert_eq!(got, expected, "tree count mismatch at n={n} k={k}");
        }
    }
}

/// One-loop diagrams are counted by a product of two binomials.
#[test]
fn one_loop_counts_match_product_formula() {
    for n in 4..=10 {
        for k in 0..=3 {
            let expected = binomial(n - 2, k) * binomial(n - 2, k + 2);
            let got = enumerate(n, k, 1).unwrap().len();
            assert_eq!(got, expected, "one-loop count mismatch at n={n} k={k}");
        }
    }
}

fn all_diagrams(max_n: usize, max_k: usize, max_ell: usize) -> Vec<ChordDiagram> {
    let mut out = Vec::new();
    for n in 4..=max_n {
        for k in 0..=max_k {
            for ell in 0..=max_ell {
                out.extend(enumerate(n, k, ell).unwrap());
            }
        }
    }
    out
}

/// Every defined shift names a unique inverse shift on its image, and the
/// inverse's inverse is the original shift. Distinct shifts of one diagram
/// land on distinct diagrams.
#[test]
fn boundary_shifts_are_an_involution() {
    let mut checked = 0usize;
    for d in all_diagrams(8, 3, 1) {
        let defined = d.defined_shifts();
        let mut images: Vec<ChordDiagram> = Vec::new();
        for &name in &defined {
            let (shifted, sigma) = d
                .match_shift(name)
                .unwrap_or_else(|e| panic!("shift {name} broke on {d}: {e}"));
            assert!(
                shifted.validate().is_empty(),
                "shift {name} of {d} produced an invalid diagram {shifted}"
            );
            let (back, sigma_back) = shifted.match_shift(sigma).unwrap_or_else(|e| {
                panic!("inverse {sigma} of shift {name} broke on {shifted} (from {d}): {e}")
            });
            assert_eq!(
                back, d,
                "shift {name} then {sigma} did not return to {d} (went to {back})"
            );
            assert_eq!(
                sigma_back, name,
                "inverse of inverse of {name} on {d} is {sigma_back}"
            );
            assert!(
                !images.contains(&shifted),
                "two shifts of {d} gave the same image {shifted}"
            );
            images.push(shifted);
            checked += 1;
        }
    }
    assert!(checked > 500, "only {checked} shift instances were checked");
}

/// Every applicable subdiagram of every small diagram is itself valid, and
/// the product split is consistent with the bridge chord.
#[test]
fn subdiagrams_are_valid() {
    for d in all_diagrams(8, 3, 1) {
        for kind in [
            SubdiagramKind::Left,
            SubdiagramKind::Right,
            SubdiagramKind::Pre,
            SubdiagramKind::Fl,
            SubdiagramKind::PreFl,
        ] {
            match d.subdiagram(kind) {
                Ok(sub) => {
                    assert!(
                        sub.validate().is_empty(),
                        "{kind:?} subdiagram of {d} is invalid: {sub}"
                    );
                    if matches!(kind, SubdiagramKind::Left | SubdiagramKind::Right) {
                        let rt = d.rightmost_top_label().unwrap();
                        let bridge = d.chord(rt).unwrap();
                        let expected_n = match kind {
                            SubdiagramKind::Left => bridge.a + 2,
                            _ => d.n() - bridge.a,
                        };
                        assert_eq!(sub.n(), expected_n);
                    }
                }
                Err(_) => {}
            }
        }
        // Left/right apply exactly when the rightmost top chord is a black
        // bridge; pre applies exactly when the penultimate domino is free.
        let has_bridge = d.has_penultimate_ender()
            && d.rightmost_top_label()
                .map(|l| {
                    d.chord(l).unwrap().color != amplituhedron::chord_diagrams::Color::Red
                })
                .unwrap_or(false);
        assert_eq!(d.subdiagram(SubdiagramKind::Left).is_ok(), has_bridge);
        assert_eq!(d.subdiagram(SubdiagramKind::Right).is_ok(), has_bridge);
        assert_eq!(
            d.subdiagram(SubdiagramKind::Pre).is_ok(),
            !d.has_penultimate_ender()
        );
    }
}

/// Generation sequences replay to the diagram they came from.
#[test]
fn generation_sequences_replay() {
    for d in all_diagrams(8, 3, 1) {
        let steps = d
            .generation_sequence()
            .unwrap_or_else(|e| panic!("no generation sequence for {d}: {e}"));
        let rebuilt = diagram_of_steps(&steps)
            .unwrap_or_else(|e| panic!("replay broke for {d} ({steps:?}): {e}"));
        assert_eq!(rebuilt, d.rank_normalized(), "replay mismatch for {d}");
    }
}

/// Diagrams survive a JSON round trip.
#[test]
fn serde_round_trip_over_enumeration() {
    for d in all_diagrams(7, 2, 1) {
        let json = serde_json::to_string(&d).unwrap();
        let back: ChordDiagram = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }
}

/// The shift involution covers the star shifts as soon as they are defined.
#[test]
fn star_shifts_appear_for_one_loop_diagrams() {
    let diagrams = enumerate(7, 1, 1).unwrap();
    let mut gamma_star_seen = 0usize;
    let mut delta_star_seen = 0usize;
    for d in &diagrams {
        for name in d.defined_shifts() {
            match name {
                ShiftName::Gamma(ChordRef::Star) => gamma_star_seen += 1,
                ShiftName::Delta(ChordRef::Star) => delta_star_seen += 1,
                _ => {}
            }
        }
    }
    assert!(gamma_star_seen > 0, "gamma_star never defined");
    assert!(delta_star_seen > 0, "delta_star never defined");
}
