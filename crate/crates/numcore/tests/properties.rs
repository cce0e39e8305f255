use numcore::ops::{conv3d, conv3d_direct, conv_out_len, softmax, Conv3dSpec};
use numcore::Tensor;
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(row in proptest::collection::vec(-1e4f32..1e4, 1..12)) {
        let n = row.len();
        let y = softmax(&Tensor::new(&[1, n], row).unwrap()).unwrap();
        let total: f64 = y.data().iter().map(|&v| v as f64).sum();
        prop_assert!(y.data().iter().all(|&v| v >= 0.0));
        prop_assert!((total - 1.0).abs() < 1e-6, "sum {}", total);
    }

    #[test]
    fn conv_shape_obeys_floor_formula(
        t in 1usize..7, h in 1usize..9, w in 1usize..9,
        k in prop::array::uniform3(1usize..4),
        stride in prop::array::uniform3(1usize..3),
        pad in prop::array::uniform3(0usize..2),
    ) {
        let x = Tensor::<f32>::full(&[1, 2, t, h, w], 0.5);
        let kern = Tensor::<f32>::full(&[3, 2, k[0], k[1], k[2]], 0.25);
        let spec = Conv3dSpec::new(stride, pad);
        let dims = [t, h, w];
        let expect: Option<Vec<usize>> = (0..3)
            .map(|a| conv_out_len(dims[a], k[a], stride[a], pad[a]))
            .collect();
        match (conv3d(&x, &kern, spec), expect) {
            (Ok(y), Some(e)) => {
                for a in 0..3 {
                    prop_assert_eq!(y.shape()[2 + a], (dims[a] + 2 * pad[a] - k[a]) / stride[a] + 1);
                    prop_assert_eq!(y.shape()[2 + a], e[a]);
                }
                let reference = conv3d_direct(&x, &kern, spec).unwrap();
                prop_assert!(y.max_abs_diff(&reference).unwrap() < 1e-5);
            }
            (Err(_), None) => {}
            (got, want) => prop_assert!(false, "mismatch: {:?} vs {:?}", got.map(|y| y.shape().to_vec()), want),
        }
    }
}

#[test]
fn table_one_stage_transitions() {
    // stem (16,112,112) -> (8,56,56), then three stride-2 3x3x3 stages.
    let stem = [(16, 3, 2, 1), (112, 7, 2, 3), (112, 7, 2, 3)];
    let after_stem: Vec<usize> =
        stem.iter().map(|&(l, k, s, p)| conv_out_len(l, k, s, p).unwrap()).collect();
    assert_eq!(after_stem, [8, 56, 56]);
    let mut dims = after_stem;
    let mut seen = Vec::new();
    for _ in 0..3 {
        dims = dims.iter().map(|&l| conv_out_len(l, 3, 2, 1).unwrap()).collect();
        seen.push(dims.clone());
    }
    assert_eq!(seen, vec![vec![4, 28, 28], vec![2, 14, 14], vec![1, 7, 7]]);
}
