use tssd::nn::kernels::{self, ConvDims};
use tssd::verify::{check_conv_backward, run_gradient_suite, GRADIENT_TOLERANCE};

#[test]
fn every_operation_matches_finite_differences() {
    let reports = run_gradient_suite(2024).unwrap();
    for r in &reports {
        println!("{r}");
    }
    assert!(reports.len() >= 20);
    for r in &reports {
        assert!(r.passed(), "{r}");
        assert_eq!(r.tolerance, GRADIENT_TOLERANCE);
    }
}

#[test]
fn suite_passes_for_other_seeds() {
    for seed in [1, 7] {
        for r in run_gradient_suite(seed).unwrap() {
            assert!(r.passed(), "seed {seed}: {r}");
        }
    }
}

type Backward = (Option<Vec<f64>>, Vec<f64>, Vec<f64>);

fn shifted_input_gradient(x: &[f64], w: &[f64], dy: &[f64], d: &ConvDims, i: bool) -> Backward {
    let (dx, dw, db) = kernels::conv1d_backward(x, w, dy, d, i);
    let dx = dx.map(|mut g| {
        g.rotate_right(1);
        g
    });
    (dx, dw, db)
}

fn missing_bias_gradient(x: &[f64], w: &[f64], dy: &[f64], d: &ConvDims, i: bool) -> Backward {
    let (dx, dw, db) = kernels::conv1d_backward(x, w, dy, d, i);
    (dx, dw, vec![0.0; db.len()])
}

#[test]
fn injected_conv_backward_faults_are_caught() {
    assert!(check_conv_backward(3, kernels::conv1d_backward::<f64>).unwrap().passed());
    assert!(!check_conv_backward(3, shifted_input_gradient).unwrap().passed());
    assert!(!check_conv_backward(3, missing_bias_gradient).unwrap().passed());
}
