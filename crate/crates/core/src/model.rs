//! Physical scenario, diffusion channel impulse response and per-link gains.
//!
//! Indices are zero-based throughout the library: transmitter `j`, receiver
//! `i` and molecule type `l` all run over `0..3` / `0..2`. File formats and
//! the CLI use the one-based names (`tx1`, `rel2_1`, ...).

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Number of transmitter/receiver pairs in the time-alignment scheme.
pub const USERS: usize = 3;
/// Number of molecule types in the time-alignment scheme.
pub const TYPES: usize = 2;

pub type Vec3 = [f64; 3];

/// Micrometres to metres.
pub const UM: f64 = 1e-6;

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Immutable physical description of a 3-user molecular interference channel.
/// All quantities are SI.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub tx_positions: [Vec3; USERS],
    pub rx_positions: [Vec3; USERS],
    /// Diffusion coefficients of molecule types 1 and 2 (m²/s).
    pub diffusion: [f64; TYPES],
    /// Medium flow velocity (m/s).
    pub flow: Vec3,
    /// Radius of the transparent spherical receivers (m).
    pub rx_radius: f64,
    /// CSK molecule counts for bit 0 and bit 1.
    pub amplitudes: [f64; 2],
    /// Reaction stoichiometry `c_i` at each receiver.
    pub reaction_coeffs: [f64; USERS],
    /// Slot duration (s).
    pub slot_duration: f64,
    /// Mean environment-noise counts per molecule type.
    pub env_noise: [f64; TYPES],
}

impl Default for Scenario {
    fn default() -> Self {
        Self::reference()
    }
}

impl Scenario {
    /// The reference geometry and parameters used for all reproduced results.
    pub fn reference() -> Self {
        let um = |v: [f64; 3]| [v[0] * UM, v[1] * UM, v[2] * UM];
        Scenario {
            tx_positions: [
                um([0.0, 0.0, 0.0]),
                um([0.0, 20.0, 10.0]),
                um([0.0, 0.0, 30.0]),
            ],
            rx_positions: [
                um([0.0, 150.0, 0.0]),
                um([0.0, 200.0, 10.0]),
                um([0.0, 300.0, 20.0]),
            ],
            diffusion: [1e-8, 5e-8],
            flow: [0.0; 3],
            rx_radius: 15.0 * UM,
            amplitudes: [2e6, 4e6],
            reaction_coeffs: [2.0; USERS],
            slot_duration: 10.0,
            env_noise: [0.0; TYPES],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        let finite3 = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if !self
            .tx_positions
            .iter()
            .chain(&self.rx_positions)
            .all(finite3)
            || !finite3(&self.flow)
        {
            return bad("non-finite position or flow".into());
        }
        if !(self.rx_radius > 0.0 && self.rx_radius.is_finite()) {
            return bad(format!(
                "receiver radius must be positive, got {}",
                self.rx_radius
            ));
        }
        for i in 0..USERS {
            for j in 0..USERS {
                let r = self.distance(i, j);
                if r <= self.rx_radius {
                    return bad(format!(
                        "Tx{}-Rx{} distance {r:e} m does not exceed the receiver radius",
                        j + 1,
                        i + 1
                    ));
                }
            }
        }
        let [d1, d2] = self.diffusion;
        if !(d1 > 0.0 && d2 > 0.0 && d1.is_finite() && d2.is_finite()) {
            return bad("diffusion coefficients must be positive".into());
        }
        if d1 == d2 {
            return bad("the two molecule types need distinct diffusion coefficients".into());
        }
        let [z0, z1] = self.amplitudes;
        // zeta0 == zeta1 is admitted: it is the indistinguishable-hypotheses limit.
        if !(z0 > 0.0 && z1 >= z0 && z1.is_finite()) {
            return bad(format!(
                "amplitudes must satisfy 0 < zeta0 <= zeta1, got ({z0}, {z1})"
            ));
        }
        if !self
            .reaction_coeffs
            .iter()
            .all(|c| *c > 0.0 && c.is_finite())
        {
            return bad("reaction coefficients must be positive".into());
        }
        if !(self.slot_duration > 0.0 && self.slot_duration.is_finite()) {
            return bad("slot duration must be positive".into());
        }
        if !self.env_noise.iter().all(|n| *n >= 0.0 && n.is_finite()) {
            return bad("environment noise means must be non-negative".into());
        }
        Ok(())
    }

    /// Receiver volume `4/3 π r_R³`.
    pub fn rx_volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.rx_radius.powi(3)
    }

    /// Squared distance between Rx `i` and Tx `j`.
    pub fn dist_sq(&self, i: usize, j: usize) -> f64 {
        let d = sub(self.rx_positions[i], self.tx_positions[j]);
        dot(d, d)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.dist_sq(i, j).sqrt()
    }

    /// All nine squared Tx-Rx distances, `[rx][tx]`.
    pub fn dist_sq_matrix(&self) -> [[f64; USERS]; USERS] {
        let mut m = [[0.0; USERS]; USERS];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.dist_sq(i, j);
            }
        }
        m
    }

    /// Same scenario with every node moved by `offset`.
    pub fn translated(&self, offset: Vec3) -> Self {
        let mv = |p: Vec3| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]];
        let mut s = self.clone();
        s.tx_positions = self.tx_positions.map(mv);
        s.rx_positions = self.rx_positions.map(mv);
        s
    }

    pub fn diffusion_contrast(&self, dt1: f64, dt2: f64) -> Result<f64> {
        diffusion_contrast(self.diffusion, dt1, dt2)
    }
}

/// `1/(D_1 Δt_1) − 1/(D_2 Δt_2)`, the per-link term that the alignment and
/// reaction conditions are built from.
pub fn diffusion_contrast(diffusion: [f64; TYPES], dt1: f64, dt2: f64) -> Result<f64> {
    if !(dt1 > 0.0 && dt2 > 0.0) {
        return Err(Error::Domain(format!(
            "propagation delays must be positive, got ({dt1}, {dt2})"
        )));
    }
    Ok(1.0 / (diffusion[0] * dt1) - 1.0 / (diffusion[1] * dt2))
}

/// Concentration (1/m³) of type `ty` at Rx `rx` and time `t` caused by one
/// molecule released by Tx `tx` at `t_release`, from the advection-diffusion
/// Green's function. Zero for `t <= t_release`.
pub fn impulse_response(
    scn: &Scenario,
    tx: usize,
    rx: usize,
    ty: usize,
    t: f64,
    t_release: f64,
) -> f64 {
    green(scn, tx, rx, ty, t - t_release)
}

fn green(scn: &Scenario, tx: usize, rx: usize, ty: usize, dt: f64) -> f64 {
    if dt <= 0.0 {
        return 0.0;
    }
    let d = scn.diffusion[ty];
    let base = sub(scn.rx_positions[rx], scn.tx_positions[tx]);
    let disp = [
        base[0] - scn.flow[0] * dt,
        base[1] - scn.flow[1] * dt,
        base[2] - scn.flow[2] * dt,
    ];
    let spread = 4.0 * d * dt;
    (PI * spread).powf(-1.5) * (-dot(disp, disp) / spread).exp()
}

/// Releasing times `release[j][l]` and sampling times `sample[i][l]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSchedule {
    pub release: [[f64; TYPES]; USERS],
    pub sample: [[f64; TYPES]; USERS],
}

/// Key order of the flat 12-vector: `rel1_1, rel1_2, rel2_1, ..., smp3_2`.
pub const TIME_KEYS: [&str; 12] = [
    "rel1_1", "rel1_2", "rel2_1", "rel2_2", "rel3_1", "rel3_2", "smp1_1", "smp1_2", "smp2_1",
    "smp2_2", "smp3_1", "smp3_2",
];

impl TimingSchedule {
    pub fn new(release: [[f64; TYPES]; USERS], sample: [[f64; TYPES]; USERS]) -> Self {
        TimingSchedule { release, sample }
    }

    /// Schedule in which both molecule types share each node's time.
    pub fn special(release: [f64; USERS], sample: [f64; USERS]) -> Self {
        TimingSchedule {
            release: release.map(|t| [t, t]),
            sample: sample.map(|t| [t, t]),
        }
    }

    pub fn is_special(&self) -> bool {
        self.release
            .iter()
            .chain(&self.sample)
            .all(|p| p[0] == p[1])
    }

    /// True when each receiver samples both types at the same instant, which
    /// the reaction scheme requires.
    pub fn common_sampling(&self) -> bool {
        self.sample.iter().all(|p| p[0] == p[1])
    }

    /// `t_i^[l] − t̃_j^[l]`.
    pub fn delta(&self, i: usize, j: usize, l: usize) -> f64 {
        self.sample[i][l] - self.release[j][l]
    }

    /// All propagation delays, `[rx][tx][type]`.
    pub fn deltas(&self) -> [[[f64; TYPES]; USERS]; USERS] {
        let mut d = [[[0.0; TYPES]; USERS]; USERS];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, link) in row.iter_mut().enumerate() {
                for (l, v) in link.iter_mut().enumerate() {
                    *v = self.delta(i, j, l);
                }
            }
        }
        d
    }

    /// Errors unless every sampling time is strictly after every release
    /// time of the same molecule type.
    pub fn check_order(&self) -> Result<()> {
        for i in 0..USERS {
            for j in 0..USERS {
                for l in 0..TYPES {
                    let d = self.delta(i, j, l);
                    if !(d > 0.0) {
                        return Err(Error::InfeasibleSchedule(format!(
                            "smp{}_{} - rel{}_{} = {d} is not positive",
                            i + 1,
                            l + 1,
                            j + 1,
                            l + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Ordering plus `0 <= t̃` and `t < T_s`.
    pub fn check_slot(&self, slot_duration: f64) -> Result<()> {
        self.check_order()?;
        if let Some(t) = self.release.iter().flatten().find(|t| !(**t >= 0.0)) {
            return Err(Error::InfeasibleSchedule(format!(
                "negative release time {t}"
            )));
        }
        if let Some(t) = self
            .sample
            .iter()
            .flatten()
            .find(|t| !(**t < slot_duration))
        {
            return Err(Error::InfeasibleSchedule(format!(
                "sampling time {t} is not inside the slot of {slot_duration} s"
            )));
        }
        Ok(())
    }

    pub fn shifted(&self, delta: f64) -> Self {
        let sh = |p: [f64; TYPES]| p.map(|t| t + delta);
        TimingSchedule {
            release: self.release.map(sh),
            sample: self.sample.map(sh),
        }
    }

    /// Representative with the smallest of the twelve times at zero.
    pub fn normalized(&self) -> Self {
        let min = self.to_array().into_iter().fold(f64::INFINITY, f64::min);
        self.shifted(-min)
    }

    pub fn to_array(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for j in 0..USERS {
            for l in 0..TYPES {
                out[2 * j + l] = self.release[j][l];
                out[6 + 2 * j + l] = self.sample[j][l];
            }
        }
        out
    }

    pub fn from_array(a: [f64; 12]) -> Self {
        let mut ts = TimingSchedule {
            release: [[0.0; TYPES]; USERS],
            sample: [[0.0; TYPES]; USERS],
        };
        for j in 0..USERS {
            for l in 0..TYPES {
                ts.release[j][l] = a[2 * j + l];
                ts.sample[j][l] = a[6 + 2 * j + l];
            }
        }
        ts
    }
}

/// Link gains `H_ij^[l]`: expected molecule count at Rx `i` per molecule of
/// type `l` released by Tx `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSet {
    pub gains: [[[f64; TYPES]; USERS]; USERS],
}

impl ChannelSet {
    pub fn from_gains(gains: [[[f64; TYPES]; USERS]; USERS]) -> Self {
        ChannelSet { gains }
    }

    pub fn gain(&self, i: usize, j: usize, l: usize) -> f64 {
        self.gains[i][j][l]
    }

    /// Diagonal of `H_ij`.
    pub fn link(&self, i: usize, j: usize) -> [f64; TYPES] {
        self.gains[i][j]
    }
}

/// Evaluates all 18 link gains for a schedule.
pub fn channel_set(scn: &Scenario, ts: &TimingSchedule) -> Result<ChannelSet> {
    ts.check_order()?;
    Ok(channel_set_with_offset(scn, ts, 0.0))
}

/// Gains with every propagation delay lengthened by `offset`. With
/// `offset = T_s` these are the one-slot-memory (ISI) gains of molecules
/// released in the previous slot.
pub fn channel_set_with_offset(scn: &Scenario, ts: &TimingSchedule, offset: f64) -> ChannelSet {
    let vr = scn.rx_volume();
    let mut gains = [[[0.0; TYPES]; USERS]; USERS];
    for (i, row) in gains.iter_mut().enumerate() {
        for (j, link) in row.iter_mut().enumerate() {
            for (l, g) in link.iter_mut().enumerate() {
                *g = green(scn, j, i, l, ts.delta(i, j, l) + offset) * vr;
            }
        }
    }
    ChannelSet { gains }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_at_release_instant() {
        let scn = Scenario::reference();
        assert_eq!(impulse_response(&scn, 0, 1, 0, 0.3, 0.3), 0.0);
        assert_eq!(impulse_response(&scn, 0, 1, 0, 0.2, 0.3), 0.0);
    }

    #[test]
    fn depends_on_delay_only() {
        let scn = Scenario::reference();
        // dyadic times keep the shifted differences exact
        let a = impulse_response(&scn, 0, 1, 0, 0.5, 0.03125);
        let b = impulse_response(&scn, 0, 1, 0, 0.5 + 0.25, 0.03125 + 0.25);
        assert_eq!(a, b);
    }

    #[test]
    fn pinned_green_function_value() {
        // Tx1 -> Rx2, type 1, delay 0.466 s; 50-digit mpmath evaluation.
        let scn = Scenario::reference();
        let v = impulse_response(&scn, 0, 1, 0, 0.466, 0.0);
        assert_relative_eq!(v, 8.209_449_116_814_064e9, max_relative = 1e-13);
    }

    #[test]
    fn contrast_examples() {
        assert_eq!(diffusion_contrast([2e-8, 2e-8], 0.7, 0.7).unwrap(), 0.0);
        let v = diffusion_contrast([1e-8, 5e-8], 1.0, 1.0).unwrap();
        assert_relative_eq!(v, 8e7, max_relative = 1e-14);
        assert!(diffusion_contrast([1e-8, 5e-8], 0.0, 1.0).is_err());
        assert!(diffusion_contrast([1e-8, 5e-8], 1.0, -1.0).is_err());
        assert!(diffusion_contrast([1e-8, 5e-8], 1e-300, 1.0)
            .unwrap()
            .is_finite());
    }

    #[test]
    fn channel_set_rejects_unordered_schedule() {
        let scn = Scenario::reference();
        let ts = TimingSchedule::special([0.0, 0.5, 0.0], [0.4, 0.6, 0.7]);
        assert!(matches!(
            channel_set(&scn, &ts),
            Err(Error::InfeasibleSchedule(_))
        ));
    }

    #[test]
    fn scenario_validation() {
        assert!(Scenario::reference().validate().is_ok());
        let mut s = Scenario::reference();
        s.diffusion = [1e-8, 1e-8];
        assert!(s.validate().is_err());
        let mut s = Scenario::reference();
        s.rx_radius = 200.0 * UM;
        assert!(s.validate().is_err());
        let mut s = Scenario::reference();
        s.amplitudes = [3.0, 2.0];
        assert!(s.validate().is_err());
        let mut s = Scenario::reference();
        s.env_noise = [-1.0, 0.0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn array_round_trip_and_normalize() {
        let ts = TimingSchedule::new(
            [[0.3, 0.2], [0.4, 0.5], [0.25, 0.6]],
            [[1.0, 1.1], [1.2, 1.3], [1.4, 1.5]],
        );
        assert_eq!(TimingSchedule::from_array(ts.to_array()), ts);
        let n = ts.normalized();
        assert_eq!(n.release[0][1], 0.0);
        assert!(n.to_array().iter().all(|t| *t >= 0.0));
    }
}
