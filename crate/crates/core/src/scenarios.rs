//! Named construction requests shared by the demo command and the test suites.

use std::sync::Arc;

use crate::constructor::{Centering, ConstructionRequest, FrozenFirstLayer, Pipeline, ScaleSchedule, Target};
use crate::minimax::ActivationSpec;
use crate::monomials::{enumerate_basis, MultiPoly};
use crate::verify::BoxDomain;

/// x₁² − x₁x₂ + 2x₂ in the degree-2 basis about the origin.
pub fn quadratic_target() -> MultiPoly {
    let basis = Arc::new(enumerate_basis(2, 2).expect("n, d > 0"));
    MultiPoly::from_terms(basis, vec![0.0, 0.0], &[(1.0, vec![2, 0]), (-1.0, vec![1, 1]), (2.0, vec![0, 1])])
        .expect("terms fit the basis")
}

fn square() -> BoxDomain {
    BoxDomain::cube(2, -1.0, 1.0).expect("valid box")
}

pub fn quadratic_request(sigma: ActivationSpec, eps: f64) -> ConstructionRequest {
    ConstructionRequest::new(Target::Polynomial(vec![quadratic_target()]), square(), sigma, eps)
}

/// The quadratic target stacked m times.
pub fn stacked_request(m: usize, sigma: ActivationSpec, eps: f64) -> ConstructionRequest {
    ConstructionRequest::new(Target::Polynomial(vec![quadratic_target(); m]), square(), sigma, eps)
}

/// exp activation on halving intervals around 30, with |W2| < 1e−3.
pub fn small_weights_request() -> ConstructionRequest {
    let mut req = quadratic_request(ActivationSpec::Exp, 1e-2);
    req.options.schedule = Some(ScaleSchedule { lambda0: 1.0, growth: 0.5, centering: Centering::Fixed { center: 30.0 } });
    req.constraints.small_output_weights = Some(1e-3);
    req
}

/// relu² on doubling intervals around 100, with ‖ŵⱼ‖ > 10.
pub fn large_norms_request() -> ConstructionRequest {
    let mut req = quadratic_request(ActivationSpec::ReluSquared, 1e-2);
    req.options.schedule = Some(ScaleSchedule { lambda0: 1.0, growth: 2.0, centering: Centering::Fixed { center: 100.0 } });
    req.constraints.large_input_norms = Some(10.0);
    req
}

/// sin(πx) on [−1, 1] with tanh, certified on at least 10⁴ points.
pub fn sine_request() -> ConstructionRequest {
    let target = Target::function(1, |x: &[f64]| vec![(std::f64::consts::PI * x[0]).sin()]);
    let mut req = ConstructionRequest::new(target, BoxDomain::cube(1, -1.0, 1.0).expect("valid box"), ActivationSpec::Tanh, 0.05);
    req.options.certify.min_resolution = 10_000;
    req
}

/// |x − 1/2| on [0, 1] with ε = 0.5.
pub fn lipschitz_request() -> ConstructionRequest {
    let target = Target::function(1, |x: &[f64]| vec![(x[0] - 0.5).abs()]);
    ConstructionRequest::new(target, BoxDomain::cube(1, 0.0, 1.0).expect("valid box"), ActivationSpec::Tanh, 0.5)
}

/// x² on [−1, 1] with tanh and a frozen first layer of norm in (1, 2].
pub fn random_feature_request(seed: u64) -> ConstructionRequest {
    let basis = Arc::new(enumerate_basis(1, 2).expect("n, d > 0"));
    let p = MultiPoly::from_terms(basis, vec![0.0], &[(1.0, vec![2])]).expect("terms fit the basis");
    let mut req = ConstructionRequest::new(
        Target::Polynomial(vec![p]),
        BoxDomain::cube(1, -1.0, 1.0).expect("valid box"),
        ActivationSpec::Tanh,
        0.05,
    );
    req.frozen = Some(FrozenFirstLayer { lambda: 1.0, seed, directions: None });
    req
}

pub struct Scenario {
    pub name: &'static str,
    pub description: &'static str,
    pub pipeline: Pipeline,
    pub request: ConstructionRequest,
}

/// The demo set, in a fixed order.
pub fn all() -> Vec<Scenario> {
    let mut out = Vec::new();
    for (name, sigma) in [("quadratic-logistic", ActivationSpec::Logistic), ("quadratic-tanh", ActivationSpec::Tanh)] {
        out.push(Scenario {
            name,
            description: "x1^2 - x1*x2 + 2*x2 on [-1,1]^2, eps = 1e-2",
            pipeline: Pipeline::Polynomial,
            request: quadratic_request(sigma, 1e-2),
        });
    }
    out.push(Scenario {
        name: "small-output-weights",
        description: "quadratic with exp activation, |W2| < 1e-3, eps = 1e-2",
        pipeline: Pipeline::Polynomial,
        request: small_weights_request(),
    });
    out.push(Scenario {
        name: "large-input-norms",
        description: "quadratic with relu^2 activation, ||w|| > 10, eps = 1e-2",
        pipeline: Pipeline::Polynomial,
        request: large_norms_request(),
    });
    out.push(Scenario {
        name: "sine-continuous",
        description: "sin(pi x) on [-1,1] with tanh, eps = 0.05",
        pipeline: Pipeline::Continuous,
        request: sine_request(),
    });
    out.push(Scenario {
        name: "random-features",
        description: "x^2 on [-1,1] with tanh and a frozen first layer (lambda = 1, seed 0), eps = 0.05",
        pipeline: Pipeline::RandomFeatures,
        request: random_feature_request(0),
    });
    out
}
