//! Opaque vehicle surrogate: a five-state nonlinear model with coupled
//! roll-lateral dynamics, integrated by fourth-order Runge-Kutta and exposed
//! only through the [`OpaqueSource`](super::OpaqueSource) data interface. No
//! closed-form one-step transition or measurement map is available to
//! consumers, which is the point: filters against this system must be
//! model-free.
//!
//! State: `[vx (m/s), beta (rad), omega (rad/s), phi roll (rad), p roll rate (rad/s)]`.
//! Observations (9): four wheel-speed proxies, longitudinal and lateral
//! accelerations, yaw rate, and a GNSS-like body-frame velocity pair.

use crate::core::{MeasVec, Rng, StateVec};
use crate::noise::{GaussianMixture, MeasurementNoise};

use super::{OpaqueSource, SystemsError};

/// One classical fourth-order Runge-Kutta step of size `h`.
pub fn rk4_step<F>(deriv: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let k1 = deriv(x);
    let mut tmp = vec![0.0; n];
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    let k2 = deriv(&tmp);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    let k3 = deriv(&tmp);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    let k4 = deriv(&tmp);
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

#[derive(Clone, Debug)]
pub struct VehicleSurrogateParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub roll_inertia: f64,
    pub lf: f64,
    pub lr: f64,
    pub track_width: f64,
    pub wheel_radius: f64,
    pub tire_b: f64,
    pub tire_c: f64,
    pub tire_d: f64,
    /// Roll stiffness [N m / rad].
    pub roll_stiffness: f64,
    /// Roll damping [N m s / rad].
    pub roll_damping: f64,
    /// Height of the roll couple arm [m].
    pub roll_arm: f64,
    /// Roll-steer coefficients front/rear [rad slip per rad roll].
    pub roll_steer_f: f64,
    pub roll_steer_r: f64,
    /// Constant drive force [N] and quadratic drag coefficient.
    pub drive_force: f64,
    pub drag_coeff: f64,
    /// Steering schedule: ramp to `steer_max` over `steer_ramp_s` seconds,
    /// then hold with a slow sinusoidal dither.
    pub steer_max: f64,
    pub steer_ramp_s: f64,
    pub steer_dither: f64,
    pub steer_dither_hz: f64,
    /// Control period [s]; each period is integrated with 4 RK4 substeps.
    pub dt: f64,
}

impl Default for VehicleSurrogateParams {
    fn default() -> Self {
        let mass = 1500.0;
        Self {
            mass,
            yaw_inertia: 2500.0,
            roll_inertia: 600.0,
            lf: 1.2,
            lr: 1.6,
            track_width: 1.6,
            wheel_radius: 0.32,
            tire_b: 9.0,
            tire_c: 1.4,
            tire_d: 0.8 * mass * 9.81 / 2.0,
            roll_stiffness: 80_000.0,
            roll_damping: 6_000.0,
            roll_arm: 0.55,
            roll_steer_f: 0.06,
            roll_steer_r: -0.04,
            drive_force: 300.0,
            drag_coeff: 0.45,
            steer_max: 0.035,
            steer_ramp_s: 2.0,
            steer_dither: 0.006,
            steer_dither_hz: 0.2,
            dt: 0.02,
        }
    }
}

impl VehicleSurrogateParams {
    pub fn steering(&self, time_s: f64) -> f64 {
        let ramp = (time_s / self.steer_ramp_s).min(1.0);
        let dither = self.steer_dither
            * (2.0 * std::f64::consts::PI * self.steer_dither_hz * time_s).sin();
        self.steer_max * ramp + dither
    }

    fn axle_forces(&self, state: &[f64], steer: f64) -> (f64, f64) {
        let (vx, beta, omega, phi, _) = unpack(state);
        let vy = vx * beta.tan();
        let alpha_f = steer + self.roll_steer_f * phi - ((vy + self.lf * omega) / vx).atan();
        let alpha_r = self.roll_steer_r * phi - ((vy - self.lr * omega) / vx).atan();
        let fy = |alpha: f64| self.tire_d * (self.tire_c * (self.tire_b * alpha).atan()).sin();
        (fy(alpha_f), fy(alpha_r))
    }

    /// Body-frame specific forces as an IMU would sense them.
    fn accelerations(&self, state: &[f64], steer: f64) -> (f64, f64) {
        let (vx, _, _, _, _) = unpack(state);
        let (fyf, fyr) = self.axle_forces(state, steer);
        let ax = (self.drive_force - self.drag_coeff * vx * vx - fyf * steer.sin()) / self.mass;
        let ay = (fyf * steer.cos() + fyr) / self.mass;
        (ax, ay)
    }

    fn derivatives(&self, state: &[f64], steer: f64) -> Vec<f64> {
        let (vx, beta, omega, phi, p) = unpack(state);
        let vy = vx * beta.tan();
        let (fyf, fyr) = self.axle_forces(state, steer);
        let (ax, ay) = self.accelerations(state, steer);
        let d_vx = ax + omega * vy;
        let d_beta = ay / vx - omega;
        let d_omega = (self.lf * fyf * steer.cos() - self.lr * fyr) / self.yaw_inertia;
        let d_phi = p;
        let d_p = (self.mass * self.roll_arm * ay
            - self.roll_stiffness * phi
            - self.roll_damping * p)
            / self.roll_inertia;
        vec![d_vx, d_beta, d_omega, d_phi, d_p]
    }

    fn measure(&self, state: &[f64], steer: f64) -> Vec<f64> {
        let (vx, beta, omega, _, _) = unpack(state);
        let vy = vx * beta.tan();
        let half_track = 0.5 * self.track_width;
        let wheel = |lat_offset: f64, long_arm: f64| {
            let vx_w = vx + lat_offset * omega;
            let vy_w = vy + long_arm * omega;
            (vx_w * vx_w + vy_w * vy_w).sqrt() / self.wheel_radius
        };
        let (ax, ay) = self.accelerations(state, steer);
        vec![
            wheel(-half_track, self.lf),
            wheel(half_track, self.lf),
            wheel(-half_track, -self.lr),
            wheel(half_track, -self.lr),
            ax,
            ay,
            omega,
            vx,
            vy,
        ]
    }
}

fn unpack(state: &[f64]) -> (f64, f64, f64, f64, f64) {
    (state[0], state[1], state[2], state[3], state[4])
}

/// Buildable description of an opaque vehicle source.
#[derive(Clone)]
pub struct OpaqueVehicleSpec {
    pub params: VehicleSurrogateParams,
    pub process_noise: Option<GaussianMixture>,
    pub measurement_noise: Option<MeasurementNoise>,
    pub init_mean: Vec<f64>,
    pub init_std: Vec<f64>,
    /// Mixed into every reset seed so experiment seeds vary the data.
    pub seed_offset: u64,
}

impl OpaqueVehicleSpec {
    pub fn build(&self) -> OpaqueVehicleSource {
        let mut source = OpaqueVehicleSource::new(
            self.params.clone(),
            self.process_noise.clone(),
            self.measurement_noise.clone(),
            self.init_mean.clone(),
            self.init_std.clone(),
        );
        source.seed_offset = self.seed_offset;
        source
    }

    /// Default noisy configuration: bimodal process disturbance and
    /// heavy-tailed observation noise on every channel.
    pub fn default_noisy() -> Self {
        let process = GaussianMixture::new(
            vec![0.85, 0.15],
            vec![vec![0.0; 5], vec![0.02, 0.0008, 0.002, 0.0004, 0.004]],
            vec![
                diag5(&[1e-4, 1e-6, 1e-6, 1e-7, 1e-5]),
                diag5(&[4e-4, 4e-6, 4e-6, 4e-7, 4e-5]),
            ],
        )
        .expect("valid default mixture");
        let meas = MeasurementNoise::Laplace(
            crate::noise::LaplaceNoise::new(
                vec![0.0; 9],
                vec![0.3, 0.3, 0.3, 0.3, 0.15, 0.25, 0.01, 0.2, 0.2],
            )
            .expect("valid default Laplace scales"),
        );
        Self {
            params: VehicleSurrogateParams::default(),
            process_noise: Some(process),
            measurement_noise: Some(meas),
            init_mean: vec![20.0, 0.0, 0.0, 0.0, 0.0],
            init_std: vec![0.5, 0.01, 0.02, 0.005, 0.01],
            seed_offset: 0,
        }
    }
}

/// The surrogate wrapped as an opaque data source. The hidden state advances
/// by one control period per step (four RK4 substeps), process noise is
/// injected at the control rate, and measurements carry the configured
/// observation noise.
pub struct OpaqueVehicleSource {
    params: VehicleSurrogateParams,
    process_noise: Option<GaussianMixture>,
    measurement_noise: Option<MeasurementNoise>,
    init_mean: Vec<f64>,
    init_std: Vec<f64>,
    state: Option<Vec<f64>>,
    t: usize,
    rng: Option<Rng>,
    pub seed_offset: u64,
}

impl OpaqueVehicleSource {
    pub fn new(
        params: VehicleSurrogateParams,
        process_noise: Option<GaussianMixture>,
        measurement_noise: Option<MeasurementNoise>,
        init_mean: Vec<f64>,
        init_std: Vec<f64>,
    ) -> Self {
        assert_eq!(init_mean.len(), 5);
        assert_eq!(init_std.len(), 5);
        Self {
            params,
            process_noise,
            measurement_noise,
            init_mean,
            init_std,
            state: None,
            t: 0,
            rng: None,
            seed_offset: 0,
        }
    }

    /// Default noisy configuration, see [`OpaqueVehicleSpec::default_noisy`].
    pub fn default_noisy() -> Self {
        OpaqueVehicleSpec::default_noisy().build()
    }

    pub fn params(&self) -> &VehicleSurrogateParams {
        &self.params
    }

    fn emit(&mut self) -> (StateVec, MeasVec) {
        let steer = self.params.steering(self.t as f64 * self.params.dt);
        let state = self.state.as_ref().expect("state initialized").clone();
        let mut y = self.params.measure(&state, steer);
        if let Some(noise) = &self.measurement_noise {
            let rng = self.rng.as_mut().expect("rng initialized");
            for (yi, z) in y.iter_mut().zip(noise.sample(rng)) {
                *yi += z;
            }
        }
        (
            StateVec::new(state).expect("finite surrogate state"),
            MeasVec::new(y).expect("finite surrogate measurement"),
        )
    }
}

impl OpaqueSource for OpaqueVehicleSource {
    fn state_dim(&self) -> usize {
        5
    }

    fn meas_dim(&self) -> usize {
        9
    }

    fn reset(&mut self, seed: u64) -> (StateVec, MeasVec) {
        let mut rng = Rng::new(self.seed_offset.wrapping_add(seed));
        let state: Vec<f64> = self
            .init_mean
            .iter()
            .zip(&self.init_std)
            .map(|(m, s)| m + s * rng.normal())
            .collect();
        self.state = Some(state);
        self.t = 0;
        self.rng = Some(rng);
        self.emit()
    }

    fn step(&mut self) -> Result<(StateVec, MeasVec), SystemsError> {
        let state = self.state.clone().ok_or(SystemsError::SteppedBeforeReset)?;
        let steer = self.params.steering(self.t as f64 * self.params.dt);
        let h = self.params.dt / 4.0;
        let mut x = state;
        for _ in 0..4 {
            x = rk4_step(|s| self.params.derivatives(s, steer), &x, h);
        }
        if let Some(noise) = &self.process_noise {
            let rng = self.rng.as_mut().expect("rng initialized");
            for (xi, z) in x.iter_mut().zip(noise.sample(rng)) {
                *xi += z;
            }
        }
        // Keep the hidden state physical.
        x[0] = x[0].clamp(1.0, 80.0);
        x[1] = x[1].clamp(-0.5, 0.5);
        self.state = Some(x);
        self.t += 1;
        Ok(self.emit())
    }

    fn initial_estimate(&self) -> StateVec {
        StateVec::new(self.init_mean.clone()).expect("finite initial mean")
    }
}

fn diag5(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 25];
    for i in 0..5 {
        out[i * 5 + i] = v[i];
    }
    out
}
