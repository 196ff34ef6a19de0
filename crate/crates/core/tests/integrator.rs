mod common;

use common::flow::{exact, final_error, input};
use quadform::model::{QuadParams, StateSpaceModel, StateVector};

#[test]
fn closed_form_solves_the_model() {
    let model = StateSpaceModel::new(QuadParams::crazyflie()).unwrap();
    let amp = model.params.default_u2_bound();
    let x0 = StateVector::from_column_slice(&[0.1, -0.2, 1.0, 0.3, 0.02, -0.1]);
    let h = 1e-4;
    for t in [0.3, 1.1, 1.9] {
        let d = (exact(&model.params, amp, &x0, t + h) - exact(&model.params, amp, &x0, t - h)) / (2.0 * h);
        let f = model.derivative(
            &exact(&model.params, amp, &x0, t),
            &input(&model.params, amp, t),
            &StateVector::zeros(),
        );
        assert!((d - f).amax() < 1e-6, "{}", (d - f).amax());
    }
}

#[test]
fn rk4_error_shrinks_with_fourth_order() {
    let model = StateSpaceModel::new(QuadParams::crazyflie()).unwrap();
    let amp = model.params.default_u2_bound();
    let x0 = StateVector::from_column_slice(&[0.1, -0.2, 1.0, 0.3, 0.02, -0.1]);
    let errors: Vec<f64> = [10, 20, 40, 80]
        .iter()
        .map(|&n| final_error(&model, amp, &x0, n))
        .collect();
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((13.0..19.0).contains(&ratio), "{errors:?}");
    }
}
