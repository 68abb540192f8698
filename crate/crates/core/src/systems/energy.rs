//! Total mechanical energy, potential measured from the pivot height.
//!
//! * circular motion: `E = ½ m₁ L₁² ω²`
//! * single pendulum: `E = ½ m₁ L₁² θ̇² − m₁ g L₁ cos θ`
//! * rigid double pendulum:
//!   `T = ½ (m₁+m₂) L₁² θ̇₁² + ½ m₂ L₂² θ̇₂² + m₂ L₁ L₂ θ̇₁ θ̇₂ cos(θ₁−θ₂)`,
//!   `V = −(m₁+m₂) g L₁ cos θ₁ − m₂ g L₂ cos θ₂`
//! * elastic double pendulum, with `r = L₂ + z`:
//!   `T = ½ (m₁+m₂) L₁² θ̇₁² + ½ m₂ (ż² + r² θ̇₂² + 2 L₁ ż θ̇₁ sin(θ₂−θ₁) + 2 L₁ r θ̇₁ θ̇₂ cos(θ₁−θ₂))`,
//!   `V = −(m₁+m₂) g L₁ cos θ₁ − m₂ g r cos θ₂ + ½ k z²`

use super::{PhysicalVariables, Result, StateVector, SystemError, SystemKind, SystemSpec};

fn energy(spec: &SystemSpec, q: &[f64]) -> f64 {
    let g = spec.gravity;
    let (m1, l1) = (spec.mass1, spec.length1);
    match spec.system {
        SystemKind::CircularMotion => 0.5 * m1 * l1 * l1 * q[1] * q[1],
        SystemKind::SinglePendulum => 0.5 * m1 * l1 * l1 * q[1] * q[1] - m1 * g * l1 * q[0].cos(),
        SystemKind::RigidDoublePendulum => {
            let (m2, l2) = (spec.m2(), spec.l2());
            let (t1, t2, w1, w2) = (q[0], q[1], q[2], q[3]);
            let t = 0.5 * (m1 + m2) * l1 * l1 * w1 * w1
                + 0.5 * m2 * l2 * l2 * w2 * w2
                + m2 * l1 * l2 * w1 * w2 * (t1 - t2).cos();
            let v = -(m1 + m2) * g * l1 * t1.cos() - m2 * g * l2 * t2.cos();
            t + v
        }
        SystemKind::ElasticDoublePendulum => {
            let (m2, l2, k) = (spec.m2(), spec.l2(), spec.k());
            let (t1, t2, z, w1, w2, zd) = (q[0], q[1], q[2], q[3], q[4], q[5]);
            let r = l2 + z;
            let t = 0.5 * (m1 + m2) * l1 * l1 * w1 * w1
                + 0.5
                    * m2
                    * (zd * zd
                        + r * r * w2 * w2
                        + 2.0 * l1 * zd * w1 * (t2 - t1).sin()
                        + 2.0 * l1 * r * w1 * w2 * (t1 - t2).cos());
            let v = -(m1 + m2) * g * l1 * t1.cos() - m2 * g * r * t2.cos() + 0.5 * k * z * z;
            t + v
        }
    }
}

/// Energy of a simulator state (SI units).
pub fn state_energy(spec: &SystemSpec, s: &StateVector) -> Result<f64> {
    spec.check_state(s)?;
    Ok(energy(spec, &s.0))
}

/// Energy computed from reporting-unit variables (degrees, deg/s, m, m/s).
pub fn total_energy(spec: &SystemSpec, v: &PhysicalVariables) -> Result<f64> {
    let need = |x: Option<f64>, name: &'static str| x.ok_or(SystemError::MissingField(name));
    let rad = f64::to_radians;
    let q = match spec.system {
        SystemKind::CircularMotion | SystemKind::SinglePendulum => vec![
            rad(need(v.theta1, "theta1")?),
            rad(need(v.theta1_dot, "theta1_dot")?),
        ],
        SystemKind::RigidDoublePendulum => vec![
            rad(need(v.theta1, "theta1")?),
            rad(need(v.theta2, "theta2")?),
            rad(need(v.theta1_dot, "theta1_dot")?),
            rad(need(v.theta2_dot, "theta2_dot")?),
        ],
        SystemKind::ElasticDoublePendulum => vec![
            rad(need(v.theta1, "theta1")?),
            rad(need(v.theta2, "theta2")?),
            need(v.z, "z")?,
            rad(need(v.theta1_dot, "theta1_dot")?),
            rad(need(v.theta2_dot, "theta2_dot")?),
            need(v.z_dot, "z_dot")?,
        ],
    };
    Ok(energy(spec, &q))
}
