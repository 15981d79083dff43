//! Reaction-based cancellation of the aligned interference.
//!
//! The reaction `c_i M1 + M2 -> products` removes the interference at Rx_i
//! when the type-1 to type-2 interference ratio there equals `c_i`. For
//! shared per-type times, no flow and a common coefficient `c`, alignment
//! and reaction together leave a one-dimensional feasible set in the
//! release-time differences `(Δt̃12, Δt̃13)`, which [`Lemma2Region`] holds.

use crate::error::{Error, Result};
use crate::model::{dot, sub, Scenario, TimingSchedule, USERS};

/// Half-width (s) in Δt̃12 of the neighbourhood rejected around each
/// forbidden point where an independency condition fails.
pub const EXCLUSION_RADIUS: f64 = 1e-3;

/// Left-minus-right residuals of the three reaction conditions, in log
/// units. Zero at Rx_i iff the interference ratio there equals `c_i`; the
/// residual equals `−4 ln(ratio_i / c_i)`.
pub fn reaction_residuals(scn: &Scenario, ts: &TimingSchedule) -> Result<[f64; USERS]> {
    if !ts.common_sampling() {
        return Err(Error::Precondition(
            "reaction needs both types sampled at the same instant at every receiver".into(),
        ));
    }
    ts.check_order()?;
    let [d1, d2] = scn.diffusion;
    let r2 = scn.dist_sq_matrix();
    let nu = scn.flow;
    let nu2 = dot(nu, nu);
    let inv_gap = 1.0 / d1 - 1.0 / d2;
    let dt = ts.deltas();
    // per-link pieces shared by all three equations
    let link = |i: usize, j: usize| -> Result<(f64, f64, f64)> {
        let (a, b) = (dt[i][j][0], dt[i][j][1]);
        Ok((
            r2[i][j] * scn.diffusion_contrast(a, b)?,
            (a / b).ln(),
            nu2 * (a / d1 - b / d2),
        ))
    };
    let drift = |i: usize| 2.0 * dot(sub(scn.rx_positions[i], scn.tx_positions[0]), nu) * inv_gap;
    let d_ratio = 6.0 * (d1 / d2).ln();
    let c = scn.reaction_coeffs;

    let (f12, l12, v12) = link(0, 1)?;
    let (f31, l31, v31) = link(2, 0)?;
    let (f32, l32, v32) = link(2, 1)?;
    let (f21, l21, v21) = link(1, 0)?;

    let rx1 = f12 + f31 - f32 + d_ratio + 6.0 * (l12 + l31 - l32) + (v12 + v31 - v32) - drift(0)
        + 4.0 * c[0].ln();
    let rx2 = f21 + d_ratio + 6.0 * l21 + v21 - drift(1) + 4.0 * c[1].ln();
    let rx3 = f31 + d_ratio + 6.0 * l31 + v31 - drift(2) + 4.0 * c[2].ln();
    Ok([rx1, rx2, rx3])
}

/// `s = −(1/D1 − 1/D2) / (4 ln c − 6 ln(D2/D1))` in s/m².
pub fn delay_per_area(diffusion: [f64; 2], c: f64) -> f64 {
    let [d1, d2] = diffusion;
    -(1.0 / d1 - 1.0 / d2) / (4.0 * c.ln() - 6.0 * (d2 / d1).ln())
}

/// A Δt̃12 value (with its Δt̃13 partner on the line) at which one of the
/// independency conditions fails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcludedPoint {
    pub dt12: f64,
    pub dt13: f64,
    /// Zero-based receiver whose independency condition fails there.
    pub rx: usize,
}

/// Feasible release-time differences for the special timing with reaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma2Region {
    pub c: f64,
    pub s: f64,
    /// Line `alpha·Δt̃12 − beta·Δt̃13 = gamma`.
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Bounds on Δt̃13 in the closed form (upper is +inf when r13 > r23).
    pub dt13_bounds: (f64, f64),
    /// Closed-form lower bound on Δt̃12.
    pub dt12_lower: f64,
    /// Open Δt̃12 interval on the line where all nine delays are positive.
    pub dt12_interval: (f64, f64),
    pub excluded: Vec<ExcludedPoint>,
    /// Degeneracies met while building the region (dropped exclusions, ties).
    pub notes: Vec<String>,
    r2: [[f64; USERS]; USERS],
}

pub fn lemma2_region(scn: &Scenario, c: f64) -> Result<Lemma2Region> {
    if scn.flow.iter().any(|v| *v != 0.0) {
        return Err(Error::Precondition(
            "closed-form region needs zero flow".into(),
        ));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidReactionCoefficient(format!("c = {c}")));
    }
    let s = delay_per_area(scn.diffusion, c);
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidReactionCoefficient(format!(
            "c = {c} gives s = {s:e}; the reaction delays need s > 0"
        )));
    }
    let r2 = scn.dist_sq_matrix();
    let alpha = 1.0 - r2[0][1] / r2[2][1];
    let beta = 1.0 - r2[0][2] / r2[1][2];
    let gamma = s * (r2[0][1] / r2[2][1] * r2[2][0] - r2[0][2] / r2[1][2] * r2[1][0]);
    if beta == 0.0 {
        return Err(Error::DegenerateChannel(
            "r13 = r23 fixes Δt̃12 alone; the line cannot be parameterised by Δt̃12".into(),
        ));
    }
    let mut notes = Vec::new();

    let floor = -s * r2[1][0].min(r2[2][0]);
    let upper13 = if r2[0][2] < r2[1][2] {
        -s * r2[1][0] / (1.0 - r2[1][2] / r2[0][2])
    } else {
        if r2[0][2] == r2[1][2] {
            notes.push("r13 = r23: upper Δt̃13 bound treated as absent".into());
        }
        f64::INFINITY
    };

    let mut region = Lemma2Region {
        c,
        s,
        alpha,
        beta,
        gamma,
        dt13_bounds: (floor, upper13),
        dt12_lower: floor,
        dt12_interval: (f64::NEG_INFINITY, f64::INFINITY),
        excluded: Vec::new(),
        notes,
        r2,
    };
    region.dt12_interval = region.positivity_interval()?;

    let push13 = |region: &mut Lemma2Region, num: f64, den: f64, rx: usize| {
        if den == 0.0 {
            region
                .notes
                .push(format!("Rx{} independency: no forbidden point", rx + 1));
            return;
        }
        let dt13 = s * num / den;
        if alpha == 0.0 {
            region.notes.push(format!(
                "Rx{} independency: line is vertical in Δt̃13, dropped",
                rx + 1
            ));
            return;
        }
        let dt12 = (beta * dt13 + gamma) / alpha;
        region.excluded.push(ExcludedPoint { dt12, dt13, rx });
    };

    let den = r2[2][1] - r2[1][1];
    if den == 0.0 {
        region
            .notes
            .push("Rx2 independency: no forbidden point".into());
    } else {
        let dt12 = s * (r2[1][1] * r2[2][0] - r2[1][0] * r2[2][1]) / den;
        let dt13 = region.dt13_on_line(dt12);
        region.excluded.push(ExcludedPoint { dt12, dt13, rx: 1 });
    }
    push13(
        &mut region,
        r2[0][2] * r2[1][0] - r2[0][0] * r2[1][2],
        r2[1][2] - r2[0][2],
        0,
    );
    push13(
        &mut region,
        r2[2][2] * r2[1][0] - r2[2][0] * r2[1][2],
        r2[1][2] - r2[2][2],
        2,
    );
    region.excluded.sort_by(|a, b| a.dt12.total_cmp(&b.dt12));
    Ok(region)
}

impl Lemma2Region {
    pub fn dt13_on_line(&self, dt12: f64) -> f64 {
        (self.alpha * dt12 - self.gamma) / self.beta
    }

    /// Open interval of Δt̃12 where every delay is positive, from the fact
    /// that each delay is affine in Δt̃12 along the line.
    fn positivity_interval(&self) -> Result<(f64, f64)> {
        let at = |x: f64| self.appendix_deltas(x, self.dt13_on_line(x));
        let (d0, d1) = (at(0.0), at(1.0));
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..USERS {
            for j in 0..USERS {
                let b = d0[i][j];
                let a = d1[i][j] - b;
                if a > 0.0 {
                    lo = lo.max(-b / a);
                } else if a < 0.0 {
                    hi = hi.min(-b / a);
                } else if b <= 0.0 {
                    return Err(Error::EmptyRegion(format!(
                        "Δt{}{} is never positive on the line",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        if !(lo < hi) {
            return Err(Error::EmptyRegion(format!(
                "interval ({lo}, {hi}) is empty"
            )));
        }
        Ok((lo, hi))
    }

    /// The nine delays `t_i − t̃_j` `[rx][tx]` implied by a release-difference
    /// pair through the reaction-fixed sampling times.
    pub fn appendix_deltas(&self, dt12: f64, dt13: f64) -> [[f64; USERS]; USERS] {
        let r2 = &self.r2;
        let s = self.s;
        let k = r2[0][2] / r2[1][2];
        let base1 = s * k * r2[1][0];
        let d21 = s * r2[1][0];
        let d31 = s * r2[2][0];
        [
            [
                (k - 1.0) * dt13 + base1,
                dt12 + (k - 1.0) * dt13 + base1,
                k * dt13 + base1,
            ],
            [d21, dt12 + d21, dt13 + d21],
            [d31, dt12 + d31, dt13 + d31],
        ]
    }

    /// Smallest of the nine delays at a point of the line.
    pub fn min_delta(&self, dt12: f64) -> f64 {
        self.appendix_deltas(dt12, self.dt13_on_line(dt12))
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(*v))
    }

    pub fn nearest_exclusion(&self, dt12: f64) -> Option<&ExcludedPoint> {
        self.excluded
            .iter()
            .find(|e| (e.dt12 - dt12).abs() < EXCLUSION_RADIUS)
    }

    /// Ok when `dt12` lies inside the open interval and away from the
    /// forbidden points.
    pub fn admit(&self, dt12: f64) -> Result<()> {
        let (lo, hi) = self.dt12_interval;
        if !(dt12 > lo && dt12 < hi) {
            return Err(Error::InfeasiblePoint(format!(
                "Δt̃12 = {dt12} outside ({lo}, {hi}) where all delays are positive"
            )));
        }
        if let Some(e) = self.nearest_exclusion(dt12) {
            return Err(Error::InfeasiblePoint(format!(
                "Δt̃12 = {dt12} within {EXCLUSION_RADIUS} s of {} (Rx{} independency fails)",
                e.dt12,
                e.rx + 1
            )));
        }
        Ok(())
    }

    /// `n` uniform points spanning the closed interval, endpoints included.
    pub fn sample(&self, n: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = self.dt12_interval;
        let n = n.max(2);
        (0..n)
            .map(|k| {
                let x = lo + (hi - lo) * k as f64 / (n - 1) as f64;
                (x, self.dt13_on_line(x))
            })
            .collect()
    }

    /// Special-case schedule for a point of the line. Without `t1_release`
    /// the result is shifted so that its earliest time is zero.
    pub fn times(&self, dt12: f64, t1_release: Option<f64>) -> Result<TimingSchedule> {
        self.admit(dt12)?;
        Ok(self.times_unchecked(dt12, t1_release))
    }

    pub(crate) fn times_unchecked(&self, dt12: f64, t1_release: Option<f64>) -> TimingSchedule {
        let r2 = &self.r2;
        let s = self.s;
        let dt13 = self.dt13_on_line(dt12);
        let rel1 = t1_release.unwrap_or(0.0);
        let rel2 = rel1 - dt12;
        let rel3 = rel1 - dt13;
        let k = r2[0][2] / r2[1][2];
        let smp1 = k * rel1 + (1.0 - k) * rel3 + s * k * r2[1][0];
        let smp2 = rel1 + s * r2[1][0];
        let smp3 = rel1 + s * r2[2][0];
        let ts = TimingSchedule::special([rel1, rel2, rel3], [smp1, smp2, smp3]);
        if t1_release.is_some() {
            ts
        } else {
            ts.normalized()
        }
    }
}

/// Free-function form of [`Lemma2Region::times`].
pub fn lemma2_times(
    region: &Lemma2Region,
    dt12: f64,
    t1_release: Option<f64>,
) -> Result<TimingSchedule> {
    region.times(dt12, t1_release)
}

/// Free-function form of [`Lemma2Region::appendix_deltas`].
pub fn appendix_deltas(region: &Lemma2Region, dt12: f64, dt13: f64) -> [[f64; USERS]; USERS] {
    region.appendix_deltas(dt12, dt13)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UM;

    #[test]
    fn s_forms_agree() {
        for &(d1, d2, c) in &[(1e-8, 5e-8, 2.0), (3e-9, 1e-9, 0.7), (2e-10, 7e-10, 5.0)] {
            let a = delay_per_area([d1, d2], c);
            let b = -(1.0 / d1 - 1.0 / d2) / (4.0 * f64::ln(c) + 6.0 * (d1 / d2).ln());
            assert!((a - b).abs() <= 1e-14 * a.abs());
        }
    }

    #[test]
    fn non_positive_s_is_rejected() {
        let scn = Scenario::reference();
        // with D1 < D2 the delays are positive only for c < (D2/D1)^1.5 ~ 11.18
        assert!(lemma2_region(&scn, 11.0).is_ok());
        assert!(matches!(
            lemma2_region(&scn, 12.0),
            Err(Error::InvalidReactionCoefficient(_))
        ));
    }

    #[test]
    fn flow_is_rejected() {
        let mut scn = Scenario::reference();
        scn.flow = [1e-6, 0.0, 0.0];
        assert!(matches!(
            lemma2_region(&scn, 2.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn fixed_delays_do_not_move() {
        let region = lemma2_region(&Scenario::reference(), 2.0).unwrap();
        let a = region.appendix_deltas(-0.2, region.dt13_on_line(-0.2));
        let b = region.appendix_deltas(0.1, region.dt13_on_line(0.1));
        assert_eq!(a[1][0], b[1][0]);
        assert_eq!(a[2][0], b[2][0]);
    }

    #[test]
    fn min_delta_vanishes_at_interval_ends() {
        let region = lemma2_region(&Scenario::reference(), 2.0).unwrap();
        let (lo, hi) = region.dt12_interval;
        assert!(region.min_delta(lo).abs() < 1e-12);
        assert!(region.min_delta(hi).abs() < 1e-12);
        assert!(region.min_delta(lo + 1e-6) > 0.0);
        assert!(region.min_delta(0.5 * (lo + hi)) > 0.0);
    }

    #[test]
    fn off_region_points_are_named() {
        let region = lemma2_region(&Scenario::reference(), 2.0).unwrap();
        let e = region.times(0.9, Some(0.0)).unwrap_err();
        assert!(matches!(e, Error::InfeasiblePoint(ref m) if m.contains("outside")));
        let x = region.excluded[0].dt12 + 0.5 * EXCLUSION_RADIUS;
        let e = region.times(x, Some(0.0)).unwrap_err();
        assert!(matches!(e, Error::InfeasiblePoint(ref m) if m.contains("independency")));
    }

    #[test]
    fn unequal_sampling_is_a_precondition_error() {
        let scn = Scenario::reference();
        let ts = TimingSchedule::new([[0.0; 2]; 3], [[0.5, 0.6], [0.5, 0.5], [1.0, 1.0]]);
        assert!(matches!(
            reaction_residuals(&scn, &ts),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn flow_terms_enter_rx1() {
        let mut scn = Scenario::reference();
        let ts = TimingSchedule::special([0.0, 0.23, 0.33], [0.41, 0.466, 1.05]);
        scn.flow = [0.0, 20.0 * UM, 0.0];
        let a = reaction_residuals(&scn, &ts).unwrap();
        scn.flow = [0.0, 40.0 * UM, 0.0];
        let b = reaction_residuals(&scn, &ts).unwrap();
        assert!((a[0] - b[0]).abs() > 1e-3);
    }

    #[test]
    fn reference_region() {
        let region = lemma2_region(&Scenario::reference(), 2.0).unwrap();
        let r2 = Scenario::reference().dist_sq_matrix();
        assert!((region.s * r2[1][0] - 0.466).abs() < 1e-3);
        assert!((region.s * r2[2][0] - 1.051).abs() < 1e-3);
        let (lo, hi) = region.dt12_interval;
        assert!((lo + 0.3044).abs() < 1e-3, "{lo}");
        assert!((hi - 0.2904).abs() < 1e-3, "{hi}");
        let xs: Vec<f64> = region.excluded.iter().map(|e| e.dt12).collect();
        for (x, want) in xs.iter().zip([-0.0552, -0.0492, -0.0434]) {
            assert!((x - want).abs() < 1e-3, "{xs:?}");
        }
        assert!((region.dt13_on_line(-0.2323) + 0.3317).abs() < 1e-3);
    }

    #[test]
    fn reference_times() {
        let region = lemma2_region(&Scenario::reference(), 2.0).unwrap();
        let ts = region.times(-0.2323, Some(0.0)).unwrap();
        let got = [
            ts.release[0][0],
            ts.release[1][0],
            ts.release[2][0],
            ts.sample[0][0],
            ts.sample[1][0],
            ts.sample[2][0],
        ];
        for (g, w) in got.iter().zip([0.0, 0.232, 0.332, 0.410, 0.466, 1.051]) {
            assert!((g - w).abs() < 1e-2, "{got:?}");
        }
    }

    #[test]
    fn deltas_match_schedule() {
        let region = lemma2_region(&Scenario::reference(), 2.0).unwrap();
        for x in [-0.25, -0.1, 0.0, 0.2] {
            let ts = region.times(x, Some(0.3)).unwrap();
            let d = region.appendix_deltas(x, region.dt13_on_line(x));
            for i in 0..USERS {
                for j in 0..USERS {
                    assert!((d[i][j] - ts.delta(i, j, 0)).abs() < 1e-12);
                }
            }
        }
    }
}
