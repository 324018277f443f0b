//! Pitch actuators and the pitch-actuator-stuck fault.
//!
//! A stuck fault is additive at the actuator output: the physical angle is
//! `ũ = u + step(k − k₀)·(ϑ − u_f)·e_f`, so the faulty blade reads `ϑ`
//! exactly while its internal second-order dynamics keep tracking the
//! command.

use serde::{Deserialize, Serialize};

use crate::numerics::{discretize_second_order, StateSpaceModel};
use crate::{Error, NUM_BLADES};

/// Stuck fault on one blade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultDescriptor {
    /// Faulty blade, 1-based.
    pub blade: usize,
    /// Angle the blade freezes at, degrees.
    pub stuck_angle: f64,
    /// First sample at which the fault is active.
    pub onset: u64,
}

impl FaultDescriptor {
    pub fn new(blade: usize, stuck_angle: f64, onset: u64) -> Result<Self, Error> {
        let f = FaultDescriptor { blade, stuck_angle, onset };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(1..=NUM_BLADES).contains(&self.blade) {
            return Err(Error::Config(format!("fault blade must be in 1..={NUM_BLADES}, got {}", self.blade)));
        }
        if !self.stuck_angle.is_finite() {
            return Err(Error::Config("stuck angle must be finite".into()));
        }
        Ok(())
    }

    pub fn is_active(&self, k: u64) -> bool {
        k >= self.onset
    }
}

/// `u + step(k − k₀)·(ϑ − u_f)·e_f`.
pub fn apply_pas_fault(u: [f64; NUM_BLADES], fault: &FaultDescriptor, k: u64) -> [f64; NUM_BLADES] {
    let mut out = u;
    if fault.is_active(k) {
        let f = fault.blade - 1;
        out[f] = fault.stuck_angle;
    }
    out
}

/// Three identical discrete actuators plus an optional fault.
#[derive(Debug, Clone)]
pub struct ActuatorBank {
    a: [[f64; 2]; 2],
    b: [f64; 2],
    states: [[f64; 2]; NUM_BLADES],
    fault: Option<FaultDescriptor>,
}

impl ActuatorBank {
    /// Actuators built from a 2-state SISO model with `C = [1 0]`, `D = 0`,
    /// each resting at `initial` degrees.
    pub fn new(model: &StateSpaceModel, initial: [f64; NUM_BLADES], fault: Option<FaultDescriptor>) -> Result<Self, Error> {
        if model.states() != 2 || model.B.ncols() != 1 || model.C.nrows() != 1 {
            return Err(Error::Config("actuator model must be 2-state SISO".into()));
        }
        if model.C[(0, 0)] != 1.0 || model.C[(0, 1)] != 0.0 || model.D[(0, 0)] != 0.0 {
            return Err(Error::Config("actuator model must read its first state".into()));
        }
        if let Some(f) = &fault {
            f.validate()?;
        }
        let a = [[model.A[(0, 0)], model.A[(0, 1)]], [model.A[(1, 0)], model.A[(1, 1)]]];
        let b = [model.B[(0, 0)], model.B[(1, 0)]];
        let mut bank = ActuatorBank { a, b, states: [[0.0; 2]; NUM_BLADES], fault };
        for (l, &u) in initial.iter().enumerate() {
            bank.states[l] = bank.rest_state(u);
        }
        Ok(bank)
    }

    /// Default actuator (ω = 6.28 rad/s, β = 0.7) sampled at `ts`.
    pub fn standard(ts: f64, initial: [f64; NUM_BLADES], fault: Option<FaultDescriptor>) -> Result<Self, Error> {
        let model = discretize_second_order(6.28, 0.7, ts)?;
        Self::new(&model, initial, fault)
    }

    /// Equilibrium state for a constant command `u`.
    fn rest_state(&self, u: f64) -> [f64; 2] {
        // x = (I − A)⁻¹ B u
        let m = [[1.0 - self.a[0][0], -self.a[0][1]], [-self.a[1][0], 1.0 - self.a[1][1]]];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let x0 = (m[1][1] * self.b[0] - m[0][1] * self.b[1]) / det;
        let x1 = (-m[1][0] * self.b[0] + m[0][0] * self.b[1]) / det;
        [x0 * u, x1 * u]
    }

    pub fn fault(&self) -> Option<&FaultDescriptor> {
        self.fault.as_ref()
    }

    /// Healthy outputs `u` before fault injection.
    pub fn healthy_output(&self) -> [f64; NUM_BLADES] {
        let mut u = [0.0; NUM_BLADES];
        for (o, x) in u.iter_mut().zip(&self.states) {
            *o = x[0];
        }
        u
    }

    /// Physical pitch `ũ` at sample `k`, then advance with command `u_ref`.
    pub fn step(&mut self, u_ref: [f64; NUM_BLADES], k: u64) -> [f64; NUM_BLADES] {
        let u = self.healthy_output();
        for (x, &r) in self.states.iter_mut().zip(&u_ref) {
            let x0 = self.a[0][0] * x[0] + self.a[0][1] * x[1] + self.b[0] * r;
            let x1 = self.a[1][0] * x[0] + self.a[1][1] * x[1] + self.b[1] * r;
            *x = [x0, x1];
        }
        match &self.fault {
            Some(f) => apply_pas_fault(u, f, k),
            None => u,
        }
    }
}
