#![allow(dead_code)]

use std::f64::consts::PI;

use geoldp::geometry::{Manifold, Point};
use geoldp::switching::{DriftFamily, Model, RateFamily};
use proptest::prelude::*;

pub const MANIFOLDS: [Manifold; 5] = [
    Manifold::Euclidean(1),
    Manifold::Euclidean(2),
    Manifold::Euclidean(3),
    Manifold::Sphere2,
    Manifold::Torus2,
];

/// Maps a point of `[-1, 1]^3` onto `m`.
pub fn point_from(m: Manifold, u: [f64; 3]) -> Point {
    match m {
        Manifold::Euclidean(d) => m.point(&u[..d].iter().map(|c| 3.0 * c).collect::<Vec<_>>()),
        Manifold::Sphere2 => {
            let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            if n < 1e-3 {
                m.point(&[0.0, 0.0, 1.0])
            } else {
                m.point(&[u[0] / n, u[1] / n, u[2] / n])
            }
        }
        Manifold::Torus2 => m.point(&[PI * (u[0] + 1.0), PI * (u[1] + 1.0)]),
    }
    .unwrap()
}

pub fn arb_manifold() -> impl Strategy<Value = Manifold> {
    (0..MANIFOLDS.len()).prop_map(|i| MANIFOLDS[i])
}

pub fn arb_unit3() -> impl Strategy<Value = [f64; 3]> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
}

pub fn arb_point() -> impl Strategy<Value = Point> {
    (arb_manifold(), arb_unit3()).prop_map(|(m, u)| point_from(m, u))
}

pub fn arb_point_on(m: Manifold) -> impl Strategy<Value = Point> {
    arb_unit3().prop_map(move |u| point_from(m, u))
}

/// Models with one, two and three states on `m`, covering constant,
/// relaxing and position-dependent ingredients.
pub fn models_on(m: Manifold) -> Vec<Model> {
    let d = m.dim();
    let e1 = |s: f64| {
        let mut v = vec![0.0; m.coord_dim()];
        v[0] = s;
        v
    };
    vec![
        Model::from_families(m, DriftFamily::Zero, RateFamily::Single).unwrap(),
        Model::from_families(
            m,
            DriftFamily::Relax {
                k: 0.7,
                offsets: vec![e1(0.3)],
            },
            RateFamily::Single,
        )
        .unwrap(),
        Model::from_families(
            m,
            DriftFamily::States(vec![e1(1.0), e1(-0.5)]),
            RateFamily::TwoState { a: 1.0, b: 2.0 },
        )
        .unwrap(),
        Model::from_families(
            m,
            DriftFamily::Relax {
                k: 0.5,
                offsets: vec![e1(0.8), e1(-0.8)],
            },
            RateFamily::TwoStateSpatial { a0: 1.5, a1: 0.5 },
        )
        .unwrap(),
        Model::from_families(
            m,
            DriftFamily::States(vec![e1(1.0), e1(0.0), e1(-1.0)]),
            RateFamily::Cycle3 { rate: 2.0 },
        )
        .unwrap(),
    ]
    .into_iter()
    .filter(|model| model.manifold.dim() == d)
    .collect()
}

pub fn all_models() -> Vec<Model> {
    MANIFOLDS.iter().flat_map(|m| models_on(*m)).collect()
}

pub fn symmetric_two_state(a: f64, beta: f64) -> Model {
    Model::from_families(
        Manifold::Euclidean(1),
        DriftFamily::TwoState { beta },
        RateFamily::TwoState { a, b: a },
    )
    .unwrap()
}

pub fn brownian(m: Manifold) -> Model {
    Model::from_families(m, DriftFamily::Zero, RateFamily::Single).unwrap()
}

/// `H(p) = p^2/2 - a + sqrt(a^2 + beta^2 p^2)`, the larger root of the
/// characteristic polynomial of the symmetric two-state tilted generator.
pub fn two_state_closed_form(a: f64, beta: f64, p: f64) -> f64 {
    0.5 * p * p - a + (a * a + beta * beta * p * p).sqrt()
}
