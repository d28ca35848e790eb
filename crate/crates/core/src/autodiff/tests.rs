use super::*;
use crate::error::TensorError;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn add_hand_example_and_identities() {
    let mut g = Graph::<f64>::inference();
    let a = g.constant(t(&[2], &[1.0, 2.0]));
    let b = g.constant(t(&[2], &[3.0, 4.0]));
    let c = g.add(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[4.0, 6.0]);

    let x = g.constant(t(&[3], &[0.1, -7.25, 1e-30]));
    let one = g.constant(Tensor::scalar(1.0));
    let zero = g.constant(Tensor::scalar(0.0));
    let m = g.mul(x, one).unwrap();
    let s = g.add(x, zero).unwrap();
    assert_eq!(g.value(m), g.value(x));
    assert_eq!(g.value(s), g.value(x));
}

#[test]
fn elementwise_shape_mismatch_names_both_shapes() {
    let mut g = Graph::<f32>::inference();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2]));
    match g.add(a, b) {
        Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn trailing_broadcast_adds_row_bias() {
    let mut g = Graph::<f64>::inference();
    let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(t(&[2], &[10.0, 20.0]));
    let c = g.add(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[11.0, 22.0, 13.0, 24.0]);
}

#[test]
fn matmul_examples() {
    let mut g = Graph::<f64>::inference();
    let i2 = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

    let row = g.constant(t(&[1, 2], &[1.0, 2.0]));
    let col = g.constant(t(&[2, 1], &[3.0, 4.0]));
    let q = g.matmul(row, col).unwrap();
    assert_eq!(g.value(q).shape(), &[1, 1]);
    assert_eq!(g.value(q).data(), &[11.0]);

    assert!(g.matmul(row, row).is_err());
}

#[test]
fn conv2d_identity_and_ones_kernel() {
    let mut g = Graph::<f64>::inference();
    let x = g.constant(Tensor::from_fn(vec![1, 1, 3, 3], |i| i as f64 - 4.0));
    let w = g.constant(t(&[1, 1, 1, 1], &[1.0]));
    let b = g.constant(t(&[1], &[0.0]));
    let y = g.conv2d(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let c = 1.5;
    let x = g.constant(Tensor::full(vec![1, 1, 4, 4], c));
    let w = g.constant(Tensor::ones(vec![1, 1, 3, 3]));
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), &[1, 1, 4, 4]);
    let d = out.data();
    assert_eq!(d[5], 9.0 * c);
    assert_eq!(d[0], 4.0 * c);
    assert_eq!(d[15], 4.0 * c);
    assert_eq!(d[1], 6.0 * c);
}

#[test]
fn conv2d_channel_mismatch() {
    let mut g = Graph::<f32>::inference();
    let x = g.constant(Tensor::zeros(vec![1, 2, 4, 4]));
    let w = g.constant(Tensor::zeros(vec![3, 1, 3, 3]));
    assert!(matches!(g.conv2d(x, w, None, 1, 1), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn leaky_relu_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[3], &[2.0, -2.0, 0.0]));
    let y = g.leaky_relu(x, 0.2);
    assert_eq!(g.value(y).data(), &[2.0, -0.4, 0.0]);

    let x = g.param(t(&[1], &[-1.0]));
    let y = g.leaky_relu(x, 0.2);
    let l = g.sum_all(y);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.2]);
}

#[test]
fn upsample_examples() {
    let mut g = Graph::<f64>::inference();
    let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = g.upsample(x, 2, UpsampleMode::Nearest).unwrap();
    assert_eq!(
        g.value(y).data(),
        &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
    );

    for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
        let c = g.constant(Tensor::full(vec![2, 3, 3, 5], 0.7));
        let u = g.upsample(c, 2, mode).unwrap();
        assert!(g.value(u).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    assert!(matches!(
        g.upsample(x, 3, UpsampleMode::Nearest),
        Err(TensorError::Unsupported { .. })
    ));
}

#[test]
fn bilinear_preserves_mean_by_direct_summation() {
    let mut g = Graph::<f64>::inference();
    let x = g.constant(Tensor::from_fn(vec![2, 3, 5, 7], |i| ((i * 37) % 101) as f64 / 13.0 - 3.0));
    let y = g.upsample(x, 2, UpsampleMode::Bilinear).unwrap();
    let mut s_in = 0.0;
    for v in g.value(x).data() {
        s_in += v;
    }
    let mut s_out = 0.0;
    for v in g.value(y).data() {
        s_out += v;
    }
    let (m_in, m_out) = (s_in / g.value(x).len() as f64, s_out / g.value(y).len() as f64);
    assert!((m_in - m_out).abs() <= 1e-6, "{m_in} vs {m_out}");
}

#[test]
fn reduce_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
    let m = g.reduce(ReduceKind::Mean, x, &[0]).unwrap();
    assert_eq!(g.value(m).item(), 2.5);

    let c = g.constant(Tensor::full(vec![3, 4], 1.25));
    let s = g.reduce(ReduceKind::Std, c, &[0, 1]).unwrap();
    assert_eq!(g.value(s).item(), 0.0);

    let y = g.param(Tensor::from_fn(vec![2, 3], |i| i as f64));
    let s = g.reduce(ReduceKind::Sum, y, &[0, 1]).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(y).unwrap(), &Tensor::ones(vec![2, 3]));

    assert!(matches!(g.reduce(ReduceKind::Sum, y, &[]), Err(TensorError::EmptyInput(_))));
    assert!(matches!(g.reduce(ReduceKind::Sum, y, &[2]), Err(TensorError::InvalidAxis { .. })));
}

#[test]
fn reduce_keeps_unreduced_axes() {
    let mut g = Graph::<f64>::inference();
    let x = g.constant(Tensor::from_fn(vec![2, 3], |i| i as f64));
    let s = g.reduce(ReduceKind::Sum, x, &[1]).unwrap();
    assert_eq!(g.value(s).shape(), &[2]);
    assert_eq!(g.value(s).data(), &[3.0, 12.0]);
}

#[test]
fn backward_of_sum_of_squares_is_two_x() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
    let sq = g.mul(x, x).unwrap();
    let l = g.sum_all(sq);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
}

#[test]
fn backward_accumulates_until_zero_grad() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2], &[1.0, 3.0]));
    let l = g.sum_all(x);
    g.backward(l).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn backward_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2], &[1.0, 3.0]));
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));

    let mut g = Graph::<f64>::inference();
    let x = g.param(t(&[1], &[1.0]));
    assert!(matches!(g.backward(x), Err(TensorError::NotTracing)));
}

#[test]
fn unreachable_leaves_get_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let w = g.param(Tensor::zeros(vec![2, 2]));
    let x = g.param(t(&[1, 2], &[1.0, -1.0]));
    let unused = g.param(t(&[3], &[1.0, 2.0, 3.0]));
    let h = g.matmul(x, w).unwrap();
    let a = g.leaky_relu(h, 0.2);
    let l = g.sum_all(a);
    g.backward(l).unwrap();
    assert!(g.grad(unused).is_none());
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn constants_do_not_collect_gradients() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(t(&[2], &[1.0, 2.0]));
    let x = g.param(t(&[2], &[3.0, 4.0]));
    let p = g.mul(c, x).unwrap();
    let l = g.sum_all(p);
    g.backward(l).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn ops_are_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::inference();
        let x = g.constant(Tensor::from_fn(vec![2, 3, 6, 6], |i| ((i * 31) % 17) as f32 * 0.1 - 0.8));
        let w = g.constant(Tensor::from_fn(vec![4, 3, 3, 3], |i| ((i * 7) % 5) as f32 * 0.2 - 0.4));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let y = g.instance_norm(y).unwrap();
        let y = g.upsample(y, 2, UpsampleMode::Bilinear).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn minibatch_stddev_examples() {
    let mut g = Graph::<f64>::inference();
    let same = g.constant(Tensor::full(vec![4, 2, 3, 3], 0.3));
    let y = g.minibatch_stddev(same, 4).unwrap();
    let yv = g.value(y);
    assert_eq!(yv.shape(), &[4, 3, 3, 3]);
    for n in 0..4 {
        for k in 0..9 {
            assert_eq!(yv.data()[n * 27 + 18 + k], 0.0);
        }
    }

    let mut data = vec![0.0; 8];
    data.extend(vec![2.0; 8]);
    let pair = g.constant(t(&[2, 2, 2, 2], &data));
    let y = g.minibatch_stddev(pair, 2).unwrap();
    let yv = g.value(y);
    assert_eq!(yv.shape(), &[2, 3, 2, 2]);
    for n in 0..2 {
        for k in 0..4 {
            assert_eq!(yv.data()[n * 12 + 8 + k], 1.0);
        }
    }
}

#[test]
fn crop_and_pad_are_inverse_on_content() {
    let mut g = Graph::<f64>::inference();
    let x = g.constant(Tensor::from_fn(vec![1, 2, 3, 3], |i| i as f64));
    let p = g.pad_center(x, 6, 5).unwrap();
    let c = g.crop_center(p, 3, 3).unwrap();
    assert_eq!(g.value(c), g.value(x));
    assert_eq!(g.value(p).sum(), g.value(x).sum());
}
