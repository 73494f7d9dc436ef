use proptest::prelude::*;
use punet::{Error, Tape64, Tensor64};

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor64> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-5.0f64..5.0, n).prop_map(move |d| Tensor64::new(&shape, d).unwrap())
}

fn pair_rows() -> impl Strategy<Value = (Tensor64, Tensor64)> {
    (0usize..5, 0usize..5, 1usize..4, 1usize..4).prop_flat_map(|(a, b, c, d)| (tensor(vec![a, c, d]), tensor(vec![b, c, d])))
}

fn pair_last() -> impl Strategy<Value = (Tensor64, Tensor64)> {
    (1usize..4, 1usize..4, 0usize..5, 0usize..5).prop_flat_map(|(h, w, a, b)| (tensor(vec![h, w, a]), tensor(vec![h, w, b])))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn split_inverts_concat((a, b) in pair_rows()) {
        let c = a.concat_rows(&b).unwrap();
        prop_assert_eq!(c.rows(), a.rows() + b.rows());
        let (x, y) = c.split_rows(a.rows()).unwrap();
        prop_assert_eq!(&x, &a);
        prop_assert_eq!(&y, &b);
    }

    #[test]
    fn tape_split_inverts_tape_concat((a, b) in pair_rows()) {
        let mut tape = Tape64::new();
        let (va, vb) = (tape.input(a.clone()), tape.input(b.clone()));
        let c = tape.concat(va, vb).unwrap();
        let (x, y) = tape.split(c, a.rows()).unwrap();
        prop_assert_eq!(tape.value(x), &a);
        prop_assert_eq!(tape.value(y), &b);
    }

    #[test]
    fn channel_slices_invert_channel_concat((a, b) in pair_last()) {
        let mut tape = Tape64::new();
        let (va, vb) = (tape.input(a.clone()), tape.input(b.clone()));
        let c = tape.concat_last(va, vb).unwrap();
        let ca = a.last_dim();
        let x = tape.slice_last(c, 0, ca).unwrap();
        let y = tape.slice_last(c, ca, b.last_dim()).unwrap();
        prop_assert_eq!(tape.value(x), &a);
        prop_assert_eq!(tape.value(y), &b);
    }

    #[test]
    fn softmax_rows_are_distributions(t in (1usize..6, 1usize..8).prop_flat_map(|(r, c)| tensor(vec![r, c]))) {
        let s = t.softmax();
        for row in s.data().chunks(t.last_dim()) {
            prop_assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ignores_a_row_offset(t in (1usize..6, 1usize..8).prop_flat_map(|(r, c)| tensor(vec![r, c])), k in -50.0f64..50.0) {
        let a = t.softmax();
        let b = t.map(|v| v + k).softmax();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_huge_logits(t in (1usize..4, 1usize..6).prop_flat_map(|(r, c)| tensor(vec![r, c]))) {
        let s = t.map(|v| v * 1e3).softmax();
        prop_assert!(s.all_finite());
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims(m in 1usize..5, k in 1usize..5, k2 in 1usize..5, n in 1usize..5) {
        prop_assume!(k != k2);
        let mut tape = Tape64::new();
        let a = tape.input(Tensor64::zeros(&[m, k]));
        let b = tape.input(Tensor64::zeros(&[k2, n]));
        let shape_err = matches!(tape.matmul(a, b), Err(Error::Shape { .. }));
        prop_assert!(shape_err);
        prop_assert!(tape.matmul(a, a).is_err() || m == k);
    }

    #[test]
    fn elementwise_ops_reject_different_shapes(a in prop::collection::vec(1usize..4, 1..4), b in prop::collection::vec(1usize..4, 1..4)) {
        prop_assume!(a != b);
        let mut tape = Tape64::new();
        let x = tape.input(Tensor64::zeros(&a));
        let y = tape.input(Tensor64::zeros(&b));
        prop_assert!(tape.add(x, y).is_err());
        prop_assert!(tape.sub(x, y).is_err());
        prop_assert!(tape.mul(x, y).is_err());
        prop_assert!(tape.div(x, y).is_err());
    }

    #[test]
    fn concat_rejects_mismatched_trailing_shapes(r in 1usize..4, c in 1usize..4, d in 1usize..4) {
        let mut tape = Tape64::new();
        let x = tape.input(Tensor64::zeros(&[r, c]));
        let y = tape.input(Tensor64::zeros(&[r, c + d]));
        prop_assert!(tape.concat(x, y).is_err());
        let z = tape.input(Tensor64::zeros(&[r + d, c]));
        prop_assert!(tape.concat_last(x, z).is_err());
    }

    #[test]
    fn split_points_past_the_end_are_rejected(r in 0usize..5, extra in 1usize..4) {
        let mut tape = Tape64::new();
        let x = tape.input(Tensor64::zeros(&[r, 2]));
        prop_assert!(tape.split(x, r + extra).is_err());
        prop_assert!(tape.split(x, r).is_ok());
    }

    #[test]
    fn reshape_requires_the_same_element_count(a in prop::collection::vec(1usize..5, 1..4), b in prop::collection::vec(1usize..5, 1..4)) {
        let n: usize = a.iter().product();
        let m: usize = b.iter().product();
        let t = Tensor64::zeros(&a);
        prop_assert_eq!(t.reshape(&b).is_ok(), n == m);
    }
}

#[test]
fn tensor_new_rejects_wrong_data_length() {
    assert!(Tensor64::new(&[2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor64::new(&[2, 3], vec![0.0; 6]).is_ok());
}
