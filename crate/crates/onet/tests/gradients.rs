use ndarray::Array2;
use rand::Rng;
use subdiff::randfield::seeded_rng;
use subdiff_onet::{Activation, OperatorNet};

struct Case {
    net: OperatorNet,
    inputs: Vec<Array2<f64>>,
    coords: Array2<f64>,
    targets: Array2<f64>,
}

fn random_case(seed: u64, branch_in: &[usize], trunk_in: usize, activation: Activation) -> Case {
    let mut rng = seeded_rng(seed, 0);
    let p = 6;
    let branches: Vec<Vec<usize>> = branch_in.iter().map(|&d| vec![d, 16, 9, p]).collect();
    let mut net =
        OperatorNet::new(&branches, &[trunk_in, 12, 16, p], activation, &mut rng).unwrap();
    net.b0 = 0.3;
    // nonzero biases so their gradients are exercised too
    let mut flat = net.to_flat();
    for v in flat.iter_mut() {
        *v += 0.05 * rng.random_range(-1.0..1.0);
    }
    net.set_flat(&flat).unwrap();
    let batch = 5;
    let points = 7;
    let inputs = branch_in
        .iter()
        .map(|&d| Array2::from_shape_simple_fn((batch, d), || rng.random_range(-1.0..1.0)))
        .collect();
    let coords = Array2::from_shape_simple_fn((points, trunk_in), || rng.random_range(0.0..1.0));
    let targets = Array2::from_shape_simple_fn((batch, points), || rng.random_range(-1.0..1.0));
    Case {
        net,
        inputs,
        coords,
        targets,
    }
}

fn loss_at(case: &Case, params: &[f64]) -> f64 {
    let mut net = case.net.clone();
    net.set_flat(params).unwrap();
    let views: Vec<_> = case.inputs.iter().map(|m| m.view()).collect();
    net.loss(&views, case.coords.view(), case.targets.view())
        .unwrap()
}

/// Largest `|backprop − fd| / max(|backprop|, |fd|, floor)` over all
/// parameters, central differences with step 1e-5.
fn max_relative_deviation(case: &Case, floor: f64) -> f64 {
    let views: Vec<_> = case.inputs.iter().map(|m| m.view()).collect();
    let (_, grad) = case
        .net
        .loss_and_grad(&views, case.coords.view(), case.targets.view())
        .unwrap();
    let g = grad.to_flat();
    let p0 = case.net.to_flat();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..p0.len() {
        let mut plus = p0.clone();
        plus[k] += h;
        let mut minus = p0.clone();
        minus[k] -= h;
        let fd = (loss_at(case, &plus) - loss_at(case, &minus)) / (2.0 * h);
        let scale = g[k].abs().max(fd.abs());
        if scale > 0.0 {
            worst = worst.max((g[k] - fd).abs() / scale.max(floor));
        }
    }
    worst
}

#[test]
fn deeponet_gradient_matches_finite_differences() {
    let case = random_case(1, &[4], 2, Activation::Tanh);
    let dev = max_relative_deviation(&case, 0.0);
    assert!(dev <= 1e-5, "max relative deviation {dev:e}");
}

#[test]
fn mionet_gradient_matches_finite_differences() {
    let case = random_case(2, &[1, 5], 3, Activation::Tanh);
    let dev = max_relative_deviation(&case, 0.0);
    assert!(dev <= 1e-5, "max relative deviation {dev:e}");
}

#[test]
fn relu_gradient_matches_finite_differences() {
    let case = random_case(3, &[3, 3], 3, Activation::Relu);
    // a few relu gradients sit near 1e-8, where the difference quotient is
    // limited by round-off (~1e-11 / h); measure those against 1e-6
    let dev = max_relative_deviation(&case, 1e-6);
    assert!(dev <= 1e-5, "max relative deviation {dev:e}");
}

#[test]
fn bias_gradient_closed_form() {
    let case = random_case(4, &[2, 3], 3, Activation::Tanh);
    let views: Vec<_> = case.inputs.iter().map(|m| m.view()).collect();
    let pred = case.net.forward(&views, case.coords.view()).unwrap();
    let (_, grad) = case
        .net
        .loss_and_grad(&views, case.coords.view(), case.targets.view())
        .unwrap();
    let n = case.targets.len() as f64;
    let expect = 2.0 / n * (&pred - &case.targets).sum();
    assert!((grad.b0 - expect).abs() < 1e-14);
}

#[test]
fn zero_residual_gives_zero_gradient() {
    let case = random_case(5, &[2, 3], 3, Activation::Tanh);
    let views: Vec<_> = case.inputs.iter().map(|m| m.view()).collect();
    let exact = case.net.forward(&views, case.coords.view()).unwrap();
    let (loss, grad) = case
        .net
        .loss_and_grad(&views, case.coords.view(), exact.view())
        .unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.to_flat().iter().all(|&g| g == 0.0));
}
