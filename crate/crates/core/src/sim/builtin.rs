//! Parameter sets and scenarios compiled into the library.

use crate::manifold::{Mat3, Vec3};
use crate::model::{Link, Payload, Quadrotor, SystemParams, STANDARD_GRAVITY};

/// Inertia of a solid box with edge lengths `a` (b1), `b` (b2), `c` (b3).
pub fn box_inertia(mass: f64, a: f64, b: f64, c: f64) -> Mat3 {
    Mat3::from_diagonal(&Vec3::new(
        mass * (b * b + c * c) / 12.0,
        mass * (a * a + c * c) / 12.0,
        mass * (a * a + b * b) / 12.0,
    ))
}

pub const QUAD_MASS: f64 = 0.755;

pub fn quad_inertia() -> Mat3 {
    Mat3::from_diagonal(&Vec3::new(0.557e-2, 0.557e-2, 1.05e-2))
}

/// Four quadrotors on five-link cables attached to the top corners of a box.
pub fn box_params(payload_mass: f64, size: [f64; 3]) -> SystemParams {
    let (hx, hy, hz) = (size[0] / 2.0, size[1] / 2.0, size[2] / 2.0);
    let corners = [
        Vec3::new(hx, -hy, -hz),
        Vec3::new(hx, hy, -hz),
        Vec3::new(-hx, -hy, -hz),
        Vec3::new(-hx, hy, -hz),
    ];
    SystemParams {
        payload: Payload {
            mass: payload_mass,
            inertia: box_inertia(payload_mass, size[0], size[1], size[2]),
        },
        quadrotors: corners
            .iter()
            .map(|&rho| Quadrotor {
                mass: QUAD_MASS,
                inertia: quad_inertia(),
                attachment: rho,
                links: vec![
                    Link {
                        mass: 0.01,
                        length: 0.15
                    };
                    5
                ],
            })
            .collect(),
        gravity: STANDARD_GRAVITY,
    }
}

/// The 0.5 kg, 0.6 x 0.8 x 0.2 m box configuration.
pub fn paper_params() -> SystemParams {
    box_params(0.5, [0.6, 0.8, 0.2])
}
