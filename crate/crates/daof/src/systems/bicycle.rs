//! Single-track (bicycle) lateral dynamics with magic-formula tires.
//!
//! State is (sideslip angle delta [rad], yaw rate omega [rad/s]) at constant
//! longitudinal speed. Steering follows a sinusoidal schedule. Discretized
//! with explicit Euler so the one-step transition stays cheap and exactly
//! known to model-based filters.
//!
//! Slip angles:   alpha_f = u - delta - lf*omega/vx
//!                alpha_r =   - delta + lr*omega/vx
//! Axle force:    Fy = D * sin(C * atan(B * alpha))
//! Dynamics:      d(delta)/dt = (Fyf + Fyr)/(m*vx) - omega
//!                d(omega)/dt = (lf*Fyf - lr*Fyr)/Iz
//! Measurement:   y = [a_y, omega],  a_y = (Fyf + Fyr)/m



#[derive(Clone, Debug)]
pub struct Bicycle2Dof {
    /// Vehicle mass [kg].
    pub mass: f64,
    /// Yaw inertia [kg m^2].
    pub yaw_inertia: f64,
    /// Distance front axle to center of gravity [m].
    pub lf: f64,
    /// Distance rear axle to center of gravity [m].
    pub lr: f64,
    /// Magic-formula stiffness factor.
    pub tire_b: f64,
    /// Magic-formula shape factor.
    pub tire_c: f64,
    /// Magic-formula peak lateral force per axle [N].
    pub tire_d: f64,
    /// Constant longitudinal speed [m/s].
    pub speed: f64,
    /// Steering amplitude [rad]; schedule is `amp * sin(omega * t * dt)`.
    pub steer_amp: f64,
    /// Steering angular frequency [rad/s].
    pub steer_omega: f64,
}

impl Default for Bicycle2Dof {
    fn default() -> Self {
        let mass = 1412.0;
        Self {
            mass,
            yaw_inertia: 1536.7,
            lf: 1.06,
            lr: 1.85,
            tire_b: 10.0,
            tire_c: 1.5,
            // 75% of static axle load as peak force, split evenly
            tire_d: 0.75 * mass * 9.81 / 2.0,
            speed: 15.0,
            steer_amp: 0.1,
            // half a steering period over a 10 s (500 x 0.02 s) episode
            steer_omega: 0.5 * 2.0 * std::f64::consts::PI / (500.0 * 0.02),
        }
    }
}

impl Bicycle2Dof {
    pub fn steering(&self, t: usize, dt: f64) -> f64 {
        self.steer_amp * (self.steer_omega * t as f64 * dt).sin()
    }

    fn axle_forces(&self, delta: f64, omega: f64, steer: f64) -> (f64, f64) {
        let alpha_f = steer - delta - self.lf * omega / self.speed;
        let alpha_r = -delta + self.lr * omega / self.speed;
        let fy = |alpha: f64| self.tire_d * (self.tire_c * (self.tire_b * alpha).atan()).sin();
        (fy(alpha_f), fy(alpha_r))
    }

    /// Lateral acceleration `(Fyf + Fyr) / m` at the given state and steer.
    pub fn lateral_accel(&self, delta: f64, omega: f64, steer: f64) -> f64 {
        let (fyf, fyr) = self.axle_forces(delta, omega, steer);
        (fyf + fyr) / self.mass
    }

    pub(crate) fn euler_step_into(&self, x: &[f64], t: usize, dt: f64, out: &mut [f64]) {
        let u = self.steering(t, dt);
        let (dd, dw) = bicycle_derivatives(x[0], x[1], u, self);
        out[0] = x[0] + dd * dt;
        out[1] = x[1] + dw * dt;
    }

    pub(crate) fn measure_into(&self, x: &[f64], t: usize, dt: f64, out: &mut [f64]) {
        let u = self.steering(t, dt);
        out[0] = self.lateral_accel(x[0], x[1], u);
        out[1] = x[1];
    }
}

/// Continuous-time derivatives `(d delta/dt, d omega/dt)` of the single-track
/// model. Pure function of the state, the steering input, and the parameters.
pub fn bicycle_derivatives(delta: f64, omega: f64, steer: f64, p: &Bicycle2Dof) -> (f64, f64) {
    let (fyf, fyr) = p.axle_forces(delta, omega, steer);
    let d_delta = (fyf + fyr) / (p.mass * p.speed) - omega;
    let d_omega = (p.lf * fyf - p.lr * fyr) / p.yaw_inertia;
    (d_delta, d_omega)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_with_zero_steer_is_equilibrium() {
        let p = Bicycle2Dof::default();
        let (dd, dw) = bicycle_derivatives(0.0, 0.0, 0.0, &p);
        assert_eq!(dd, 0.0);
        assert_eq!(dw, 0.0);
    }

    #[test]
    fn positive_steer_at_origin_yields_positive_yaw_accel() {
        // At the origin only the front axle sees slip, so the yaw moment is
        // lf * Fyf > 0. Checked against the force formula evaluated directly.
        let p = Bicycle2Dof::default();
        let u = 0.02;
        let (_, dw) = bicycle_derivatives(0.0, 0.0, u, &p);
        let fyf = p.tire_d * (p.tire_c * (p.tire_b * u).atan()).sin();
        let expect = p.lf * fyf / p.yaw_inertia;
        assert!(dw > 0.0);
        assert!((dw - expect).abs() < 1e-12 * expect.abs());
    }

    #[test]
    fn small_angle_regime_matches_linear_single_track() {
        // Linearized magic formula has cornering stiffness B*C*D per axle.
        let p = Bicycle2Dof::default();
        let stiffness = p.tire_b * p.tire_c * p.tire_d;
        // Pick states keeping both slip angles below 0.01 rad.
        let cases = [
            (0.002, 0.01, 0.005),
            (-0.003, -0.02, 0.0),
            (0.004, 0.0, -0.004),
        ];
        for (delta, omega, u) in cases {
            let alpha_f = u - delta - p.lf * omega / p.speed;
            let alpha_r = -delta + p.lr * omega / p.speed;
            assert!(alpha_f.abs() < 0.01 && alpha_r.abs() < 0.01, "case out of regime");
            let (fyf, fyr) = p.axle_forces(delta, omega, u);
            let fyf_lin = stiffness * alpha_f;
            let fyr_lin = stiffness * alpha_r;
            // Per-axle force within 1% of the linear slope.
            assert!(
                (fyf - fyf_lin).abs() <= 0.01 * fyf_lin.abs().max(1e-9),
                "front force: {fyf} vs {fyf_lin}"
            );
            assert!(
                (fyr - fyr_lin).abs() <= 0.01 * fyr_lin.abs().max(1e-9),
                "rear force: {fyr} vs {fyr_lin}"
            );
            // Model-level derivatives within 1% of the dominant force term
            // (the yaw moment is a difference and may nearly cancel).
            let dd_lin = (fyf_lin + fyr_lin) / (p.mass * p.speed) - omega;
            let dw_lin = (p.lf * fyf_lin - p.lr * fyr_lin) / p.yaw_inertia;
            let (dd, dw) = bicycle_derivatives(delta, omega, u, &p);
            let dd_scale = (fyf_lin.abs() + fyr_lin.abs()) / (p.mass * p.speed);
            let dw_scale = (p.lf * fyf_lin.abs() + p.lr * fyr_lin.abs()) / p.yaw_inertia;
            assert!((dd - dd_lin).abs() <= 0.01 * dd_scale.max(1e-9));
            assert!((dw - dw_lin).abs() <= 0.01 * dw_scale.max(1e-9));
        }
    }

    #[test]
    fn unforced_dynamics_decay_to_rest() {
        let p = Bicycle2Dof {
            steer_amp: 0.0,
            ..Bicycle2Dof::default()
        };
        let dt = 0.02;
        let mut x = [0.1, 0.1];
        let mut next = [0.0, 0.0];
        for t in 0..2000 {
            p.euler_step_into(&x, t, dt, &mut next);
            x = next;
        }
        let mag = (x[0] * x[0] + x[1] * x[1]).sqrt();
        assert!(mag < 1e-6, "state magnitude after 2000 steps: {mag}");
    }

    #[test]
    fn measurement_is_lateral_accel_and_yaw_rate() {
        let p = Bicycle2Dof::default();
        let mut y = [0.0, 0.0];
        p.measure_into(&[0.01, -0.05], 3, 0.02, &mut y);
        let u = p.steering(3, 0.02);
        assert_eq!(y[0], p.lateral_accel(0.01, -0.05, u));
        assert_eq!(y[1], -0.05);
    }
}
