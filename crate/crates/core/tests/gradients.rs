//! Analytic loss gradients against central finite differences in f64.

mod common;

use common::{grad_case, gradient_errors};

const TOLERANCE: f64 = 1e-3;

#[test]
fn segmented_losses_match_finite_differences() {
    let mut c = grad_case([3, 3], [2, 2]);
    assert_eq!(c.layout.n(), 4);
    let (d, g, n) = gradient_errors(&mut c);
    assert!(n > 50, "{n}");
    assert!(d <= TOLERANCE && g <= TOLERANCE, "max relative errors: D {d:e}, G {g:e}");
}

#[test]
fn whole_image_losses_match_finite_differences() {
    let mut c = grad_case([4, 4], [0, 0]);
    let (d, g, _) = gradient_errors(&mut c);
    assert!(d <= TOLERANCE && g <= TOLERANCE, "max relative errors: D {d:e}, G {g:e}");
}
