mod common;

use std::io::Cursor;

use common::*;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use structsparse::harness::formats::{
    load_dictionary, load_model, load_structure, parse_structure, read_matrix, read_matrix_csv, read_model,
    save_dictionary, save_model, save_structure, structure_to_string, write_matrix, write_matrix_csv,
    write_model,
};
use structsparse::{EncoderParams, GroupStructure, Tying};

fn any_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(f64::MAX),
        (-1e3..1e3f64),
    ]
}

fn matrix() -> impl Strategy<Value = Array2<f64>> {
    (0usize..6, 0usize..6).prop_flat_map(|(r, c)| {
        proptest::collection::vec(any_f64(), r * c)
            .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

fn bits(a: &Array2<f64>) -> Vec<u64> {
    a.iter().map(|v| v.to_bits()).collect()
}

fn structure() -> impl Strategy<Value = GroupStructure> {
    (2usize..12, any::<u64>()).prop_flat_map(|(p, seed)| {
        (1..=p).prop_flat_map(move |k| {
            (
                proptest::collection::vec(0.0..10.0f64, p),
                proptest::collection::vec(0.0..10.0f64, k),
            )
                .prop_map(move |(lambda, mu)| {
                    let mut r = rng(seed);
                    GroupStructure::new(
                        random_partition(p, k, &mut r),
                        Array1::from(lambda),
                        Array1::from(mu),
                    )
                    .unwrap()
                })
        })
    })
}

fn encoder() -> impl Strategy<Value = EncoderParams> {
    (structure(), 1usize..6, 1usize..4, any::<bool>(), any::<u64>()).prop_map(
        |(gs, m, depth, untied, seed)| {
            let mut r = rng(seed);
            let d = random_dictionary(m, gs.p(), &mut r);
            let tying = if untied { Tying::Untied } else { Tying::Tied };
            perturbed_params(&d, &gs, None, depth, tying, 0.3, &mut r)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matrix_round_trip_is_bit_exact(a in matrix()) {
        let mut buf = Vec::new();
        write_matrix(&mut buf, &a).unwrap();
        prop_assert_eq!(buf.len(), 4 + 16 + 8 * a.len());
        let b = read_matrix(&mut Cursor::new(&buf)).unwrap();
        prop_assert_eq!(a.dim(), b.dim());
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn csv_round_trip_is_bit_exact(a in matrix().prop_filter("nonempty", |a| a.nrows() > 0 && a.ncols() > 0)) {
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &a).unwrap();
        let b = read_matrix_csv(Cursor::new(&buf)).unwrap();
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn structure_round_trip_is_bit_exact(gs in structure()) {
        let back = parse_structure(&structure_to_string(&gs)).unwrap();
        prop_assert_eq!(back.groups(), gs.groups());
        prop_assert_eq!(bits(&back.lambda().clone().insert_axis(ndarray::Axis(0))), bits(&gs.lambda().clone().insert_axis(ndarray::Axis(0))));
        prop_assert_eq!(bits(&back.mu().clone().insert_axis(ndarray::Axis(0))), bits(&gs.mu().clone().insert_axis(ndarray::Axis(0))));
    }

    #[test]
    fn model_round_trip_is_bit_exact(params in encoder()) {
        let mut buf = Vec::new();
        write_model(&mut buf, &params).unwrap();
        let back = read_model(&mut Cursor::new(&buf)).unwrap();
        prop_assert_eq!(back.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        params.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.alpha_init.to_bits(), params.alpha_init.to_bits());
        prop_assert_eq!(back.depth, params.depth);
        prop_assert_eq!(back.tying, params.tying);
        prop_assert_eq!(back.structure.groups(), params.structure.groups());
        let mut again = Vec::new();
        write_model(&mut again, &back).unwrap();
        prop_assert_eq!(buf, again);
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(7);
    let d = random_dictionary(5, 6, &mut r);
    let gs = random_structure(6, 3, 0.25, 0.125, &mut r);
    let params = perturbed_params(&d, &gs, None, 3, Tying::Untied, 0.1, &mut r);
    save_dictionary(&dir.path().join("d.ssm"), &d).unwrap();
    save_structure(&dir.path().join("g.txt"), &gs).unwrap();
    save_model(&dir.path().join("m.sse"), &params).unwrap();
    assert_eq!(load_dictionary(&dir.path().join("d.ssm")).unwrap(), d);
    assert_eq!(load_structure(&dir.path().join("g.txt")).unwrap(), gs);
    assert_eq!(load_model(&dir.path().join("m.sse")).unwrap(), params);
}

#[test]
fn corrupted_magic_is_rejected() {
    let mut buf = Vec::new();
    write_matrix(&mut buf, &Array2::eye(2)).unwrap();
    buf[0] = b'X';
    let err = read_matrix(&mut Cursor::new(&buf)).unwrap_err();
    assert_eq!(err.kind(), "format");
    assert!(err.to_string().contains("magic"), "{err}");

    let mut r = rng(8);
    let d = random_dictionary(3, 4, &mut r);
    let gs = GroupStructure::singletons(4, 0.1).unwrap();
    let params = EncoderParams::init_from_dictionary(&d, &gs, 2, Tying::Tied).unwrap();
    let mut buf = Vec::new();
    write_model(&mut buf, &params).unwrap();
    buf[3] = b'0';
    let err = read_model(&mut Cursor::new(&buf)).unwrap_err();
    assert!(err.to_string().contains("magic"), "{err}");
}
