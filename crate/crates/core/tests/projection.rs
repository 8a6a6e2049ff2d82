use nas_core::discretize::{
    distance_to_s, enumerate_s, project_to_s, project_values, squared_distance, validate_in_s, DiscreteArchitecture,
};
use nas_core::genotype::export_genotype;
use nas_core::space::{ActivatedAlpha, CellLayout, OpKind};
use proptest::prelude::*;

/// Layouts with 2-3 inputs, 1-2 states and 1-4 operators (optionally with `none`).
fn small_layout() -> impl Strategy<Value = CellLayout> {
    (2usize..=3, 1usize..=2, 1usize..=3, any::<bool>()).prop_map(|(inputs, states, nops, with_none)| {
        let pool = [OpKind::Skip, OpKind::AffineRelu, OpKind::AvgProj];
        let mut ops: Vec<OpKind> = pool[..nops].to_vec();
        if with_none {
            ops.insert(0, OpKind::None);
        }
        CellLayout::new(inputs, states, ops)
    })
}

fn with_values(cell_types: usize) -> impl Strategy<Value = (CellLayout, Vec<Vec<f64>>)> {
    small_layout().prop_flat_map(move |l| {
        let n = l.len();
        (Just(l), prop::collection::vec(prop::collection::vec(-3.0f64..3.0, n), cell_types))
    })
}

fn nearest(members: &[DiscreteArchitecture], cells: &[Vec<f64>]) -> DiscreteArchitecture {
    members
        .iter()
        .min_by(|a, b| squared_distance(cells, &a.cells).total_cmp(&squared_distance(cells, &b.cells)))
        .expect("non-empty")
        .clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_is_a_member((l, cells) in with_values(2)) {
        let p = project_values(&l, &cells).unwrap();
        prop_assert!(validate_in_s(&p).is_empty());
        prop_assert_eq!(p.selections().iter().map(Vec::len).sum::<usize>(), 2 * 2 * l.num_states);
    }

    #[test]
    fn projection_is_idempotent((l, cells) in with_values(2)) {
        let p = project_values(&l, &cells).unwrap();
        prop_assert_eq!(project_values(&l, &p.cells).unwrap(), p);
    }

    #[test]
    fn projection_is_the_nearest_member((l, cells) in with_values(1)) {
        let members = enumerate_s(&l, 1).unwrap();
        let p = project_values(&l, &cells).unwrap();
        let best = nearest(&members, &cells);
        prop_assert!(squared_distance(&cells, &p.cells) <= squared_distance(&cells, &best.cells) + 1e-12);
        prop_assert_eq!(p, best);
    }

    #[test]
    fn distance_is_zero_only_on_members((l, cells) in with_values(1)) {
        let a = ActivatedAlpha::new(l.clone(), cells.clone()).unwrap();
        let d = distance_to_s(&a).unwrap();
        prop_assert!(d > 0.0);
        let member = project_to_s(&a).unwrap();
        let on = ActivatedAlpha::new(l, member.cells.clone()).unwrap();
        prop_assert_eq!(distance_to_s(&on).unwrap(), 0.0);
    }

    #[test]
    fn flipping_any_entry_breaks_membership((l, cells) in with_values(1), pick in any::<prop::sample::Index>()) {
        let mut m = project_values(&l, &cells).unwrap();
        let k = pick.index(l.len());
        m.cells[0][k] = 1.0 - m.cells[0][k];
        prop_assert!(!validate_in_s(&m).is_empty());
    }

    #[test]
    fn genotype_round_trips((l, cells) in with_values(2)) {
        let p = project_values(&l, &cells).unwrap();
        let g = export_genotype(&p).unwrap();
        let back = nas_core::Genotype::from_json(&g.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.to_architecture().unwrap(), p);
    }
}

#[test]
fn member_count_matches_enumeration() {
    let l = CellLayout::new(2, 2, vec![OpKind::None, OpKind::Skip, OpKind::AffineRelu]);
    // State 0: 1 source pair x 2 x 2 ops; state 1: 3 pairs x 4.
    assert_eq!(enumerate_s(&l, 1).unwrap().len(), 4 * 12);
    assert_eq!(enumerate_s(&l, 2).unwrap().len(), 48 * 48);
    let big = CellLayout::new(3, 4, OpKind::ALL.to_vec());
    assert!(enumerate_s(&big, 2).is_err());
}
