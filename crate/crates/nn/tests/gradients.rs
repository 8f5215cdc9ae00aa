use renet_nn::gradcheck::grad_check;
use renet_nn::layers::Linear;
use renet_nn::opsuite::operator_cases;
use renet_nn::{Mode, ParamStore, Tensor};
use rand::SeedableRng;

#[test]
fn every_operator_passes_finite_differences_over_20_seeds() {
    for case in operator_cases() {
        for seed in 0..20 {
            let report = (case.run)(seed, 1e-4).unwrap();
            assert!(
                report.pass,
                "{} seed {seed}: worst {:?}",
                case.name,
                report.worst()
            );
            assert!(report.checked() > 0, "{}: nothing checked", case.name);
        }
    }
}

#[test]
fn linear_with_quadratic_loss_passes_at_1e6() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let fc = Linear::new(&mut store, "fc", 5, 3, true, &mut rng);
    let x = Tensor::from_fn(&[4, 5], |i| (i as f64 * 0.37).sin());
    let report = grad_check(&mut store, &[x], Mode::Train, 1e-6, |g, xs| {
        let y = fc.forward(g, xs[0])?;
        let sq = g.mul(y, y)?;
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(report.pass, "{:?}", report.worst());
}

#[test]
fn relu_exact_zero_is_excluded() {
    let mut store = ParamStore::<f64>::new();
    let x = Tensor::new(&[3], vec![0.0, 0.5, -0.5]).unwrap();
    let report = grad_check(&mut store, &[x], Mode::Train, 1e-6, |g, xs| {
        let y = g.relu(xs[0]);
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(report.pass);
    assert_eq!(report.excluded(), 1);
    assert_eq!(report.checked(), 2);
}

#[test]
fn a_detached_path_is_caught() {
    // The second operand is rebuilt from the input on every pass but enters the graph as a
    // constant, so the analytic gradient misses half of d/dx (2x)^2.
    let mut store = ParamStore::<f64>::new();
    let x = Tensor::new(&[2], vec![0.3, 0.6]).unwrap();
    let report = grad_check(&mut store, &[x], Mode::Train, 1e-4, |g, xs| {
        let detached = g.input(g.value(xs[0]).clone());
        let y = g.add(xs[0], detached)?;
        let y = g.mul(y, y)?;
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(!report.pass);
    assert!((report.max_rel_error() - 0.5).abs() < 1e-6);
}

#[test]
fn a_small_but_missing_gradient_is_still_caught() {
    // d/dx of 1e-3 x^2 at x = 0.5 is 1e-3, far above the difference resolution; the detached
    // copy hides half of it.
    let mut store = ParamStore::<f64>::new();
    let x = Tensor::new(&[1], vec![0.5]).unwrap();
    let report = grad_check(&mut store, &[x], Mode::Train, 1e-4, |g, xs| {
        let detached = g.input(g.value(xs[0]).clone());
        let y = g.mul(xs[0], detached)?;
        let y = g.scale(y, 1e-3);
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(!report.pass);
    assert_eq!(report.below_resolution(), 0);
}
