mod common;

use common::{naive_conv, naive_gdn, naive_tconv, rng, uniform};
use ltc::graph::Graph;
use ltc::kernels;
use ltc::{Error, Tensor};
use rand::Rng;

fn t4(shape: [usize; 4], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_worked_example() {
    let x = t4([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let w = t4([1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let y = kernels::conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.data(), &[5.0]);
}

#[test]
fn tconv_worked_example() {
    let x = t4([1, 1, 1, 1], &[1.0]);
    let w = t4([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let y = kernels::tconv2d(&x, &w, &Tensor::zeros(&[1]), 2, 0, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn kernels_agree_with_nested_loops() {
    let mut r = rng(7);
    for (k, s, p) in [(9, 4, 4), (5, 2, 2), (3, 1, 1), (2, 2, 0)] {
        let x = uniform(&[2, 3, 13, 11], -2.0, 2.0, &mut r);
        let w = uniform(&[4, 3, k, k], -2.0, 2.0, &mut r);
        let b = uniform(&[4], -2.0, 2.0, &mut r);
        let got = kernels::conv2d(&x, &w, &b, s, p).unwrap();
        assert!(max_abs_diff(&got, &naive_conv(&x, &w, &b, s, p)) < 1e-10, "conv k{k} s{s}");

        let out_pad = s + 2 * p - k;
        let x = uniform(&[2, 3, 4, 5], -2.0, 2.0, &mut r);
        let w = uniform(&[3, 2, k, k], -2.0, 2.0, &mut r);
        let b = uniform(&[2], -2.0, 2.0, &mut r);
        let got = kernels::tconv2d(&x, &w, &b, s, p, out_pad).unwrap();
        assert_eq!(got.shape(), &[2, 2, 4 * s, 5 * s]);
        assert!(max_abs_diff(&got, &naive_tconv(&x, &w, &b, s, p, out_pad)) < 1e-10, "tconv k{k} s{s}");
    }
}

#[test]
fn kernels_are_linear_and_adjoint() {
    let mut r = rng(11);
    let zero = Tensor::zeros(&[1]);
    for (k, s, p) in [(3, 1, 1), (5, 2, 2), (2, 2, 0)] {
        let w = uniform(&[1, 1, k, k], -2.0, 2.0, &mut r);
        let a = uniform(&[1, 1, 5, 5], -2.0, 2.0, &mut r);
        let b = uniform(&[1, 1, 5, 5], -2.0, 2.0, &mut r);
        let (alpha, beta) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let mut comb = a.map(|v| alpha * v);
        comb.add_assign(&b.map(|v| beta * v));
        let lhs = kernels::conv2d(&comb, &w, &zero, s, p).unwrap();
        let mut rhs = kernels::conv2d(&a, &w, &zero, s, p).unwrap().map(|v| alpha * v);
        rhs.add_assign(&kernels::conv2d(&b, &w, &zero, s, p).unwrap().map(|v| beta * v));
        assert!(max_abs_diff(&lhs, &rhs) < 1e-10);

        // <conv(x), y> = <x, conv*(y)> where the adjoint is the input gradient.
        let y = uniform(lhs.shape(), -2.0, 2.0, &mut r);
        let cx = kernels::conv2d(&a, &w, &zero, s, p).unwrap();
        let (adj, _, _) = kernels::conv2d_backward(&a, &w, &y, s, p, [true, false, false]).unwrap();
        assert!((cx.dot(&y) - a.dot(&adj.unwrap())).abs() < 1e-10);

        // Transpose conv is the adjoint of conv with the same geometry.
        let out_pad = (5 + 2 * p - k) % s;
        let ty = kernels::tconv2d(&y, &w, &zero, s, p, out_pad).unwrap();
        assert_eq!(ty.shape(), a.shape());
        assert!((cx.dot(&y) - a.dot(&ty)).abs() < 1e-10);
    }
}

#[test]
fn gdn_worked_example() {
    let y = t4([1, 2, 1, 1], &[3.0, 4.0]);
    let beta = Tensor::full(&[2], 1.0);
    let gamma = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let z = kernels::gdn(&y, &beta, &gamma, false).unwrap();
    assert!((z.data()[0] - 3.0 / 10f64.sqrt()).abs() < 1e-12);
    assert!((z.data()[1] - 4.0 / 17f64.sqrt()).abs() < 1e-12);
    assert!((z.data()[0] - 0.94868).abs() < 1e-5 && (z.data()[1] - 0.97014).abs() < 1e-5);
    let u = kernels::gdn(&y, &beta, &gamma, true).unwrap();
    assert!((u.data()[0] - 9.4868).abs() < 1e-4 && (u.data()[1] - 16.4924).abs() < 1e-4);
}

#[test]
fn gdn_agrees_with_per_pixel_formula() {
    let mut r = rng(3);
    let x = uniform(&[2, 4, 3, 3], -2.0, 2.0, &mut r);
    let beta = uniform(&[4], 0.1, 2.0, &mut r);
    let gamma = uniform(&[4, 4], 0.0, 1.0, &mut r);
    for inverse in [false, true] {
        let got = kernels::gdn(&x, &beta, &gamma, inverse).unwrap();
        assert!(max_abs_diff(&got, &naive_gdn(&x, &beta, &gamma, inverse)) < 1e-12);
    }
}

#[test]
fn backward_basics() {
    let mut g = Graph::new();
    let x = g.param(uniform(&[2, 3], -2.0, 2.0, &mut rng(1)));
    let s = g.sum(x).unwrap();
    assert!(g.backward(s).unwrap().get(x).data().iter().all(|&v| v == 1.0));

    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let l = g.squared_error(x, Tensor::scalar(0.0)).unwrap();
    assert_eq!(g.backward(l).unwrap().get(x).data(), &[6.0]);

    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let y = g.scale(x, 2.0).unwrap();
    assert!(matches!(g.backward(y), Err(Error::Usage(_))));
}

#[test]
fn constants_get_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::from_vec(vec![1.0, 2.0]));
    let x = g.param(Tensor::from_vec(vec![0.5, -0.5]));
    let y = g.add(c, x).unwrap();
    let l = g.sum(y).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(c).data(), &[0.0, 0.0]);
    assert_eq!(grads.get(x).data(), &[1.0, 1.0]);
}

#[test]
fn shape_mismatches_are_reported() {
    let x = Tensor::zeros(&[1, 2, 4, 4]);
    let w = Tensor::zeros(&[1, 3, 3, 3]);
    assert!(matches!(kernels::conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 1), Err(Error::Shape(_))));
    let mut g = Graph::new();
    let a = g.param(Tensor::zeros(&[2]));
    let b = g.param(Tensor::zeros(&[3]));
    assert!(matches!(g.add(a, b), Err(Error::Shape(_))));
}
