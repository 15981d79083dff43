//! Receivers: zero-forcing with a Gaussian-mixture MAP rule when there is no
//! reaction, and a Poisson threshold rule on the surviving molecule type
//! after reaction. Also the decision rules used under one slot of ISI.

use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::alignment::{decompose, mean_signals, parallel_residual, BeamformingSet};
use crate::error::{Error, Result};
use crate::model::{ChannelSet, Scenario, TYPES, USERS};

/// Relative determinant below which the desired and interference
/// directions count as parallel.
pub const ZF_DEGENERACY_TOL: f64 = 1e-9;

/// All eight message triples, bit `j` of the index is `M_{j+1}`.
pub fn message_triples() -> [[u8; USERS]; 8] {
    std::array::from_fn(|k| [(k & 1) as u8, ((k >> 1) & 1) as u8, ((k >> 2) & 1) as u8])
}

fn triple_index(m: [u8; USERS]) -> usize {
    m[0] as usize | (m[1] as usize) << 1 | (m[2] as usize) << 2
}

fn amounts(amplitudes: [f64; 2], m: [u8; USERS]) -> [f64; USERS] {
    m.map(|b| amplitudes[b as usize])
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Zero-forcing combiner and Gaussian mixture components at one receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZfReceiver {
    pub a: f64,
    pub b: f64,
    pub den: f64,
    /// Per-type mean counts for every message triple, including noise.
    pub means: [[f64; TYPES]; 8],
}

impl ZfReceiver {
    /// `ñ = a·y¹ + b·y²`.
    pub fn statistic(&self, y: [f64; TYPES]) -> f64 {
        self.a * y[0] + self.b * y[1]
    }

    /// Mean and variance of `ñ` given the messages.
    pub fn component(&self, m: [u8; USERS]) -> (f64, f64) {
        let mu = self.means[triple_index(m)];
        (
            self.a * mu[0] + self.b * mu[1],
            self.a * self.a * mu[0] + self.b * self.b * mu[1],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZfDetector {
    pub rx: [ZfReceiver; USERS],
}

impl ZfDetector {
    /// Builds the combiners from the desired and interference directions of
    /// the signal decomposition and stores the exact per-triple means.
    pub fn build(ch: &ChannelSet, bf: &BeamformingSet, scn: &Scenario) -> Result<Self> {
        let dec = decompose(ch, bf);
        let mut means = [[[0.0; TYPES]; 8]; USERS];
        for m in message_triples() {
            let mu = mean_signals(ch, bf, amounts(scn.amplitudes, m));
            for i in 0..USERS {
                for l in 0..TYPES {
                    means[i][triple_index(m)][l] = mu[i][l] + scn.env_noise[l];
                }
            }
        }
        let mut rx = [ZfReceiver {
            a: 0.0,
            b: 0.0,
            den: 0.0,
            means: [[0.0; TYPES]; 8],
        }; USERS];
        for i in 0..USERS {
            let h = dec.desired[i];
            let hi = dec.interference[i];
            let den = h[0] * hi[1] - h[1] * hi[0];
            let sine = parallel_residual(h, hi);
            if !(sine > ZF_DEGENERACY_TOL) || den == 0.0 {
                return Err(Error::AlignmentDegenerate {
                    rx: i + 1,
                    detail: format!("desired and interference directions parallel (sine {sine:e})"),
                });
            }
            rx[i] = ZfReceiver {
                a: hi[1] / den,
                b: -hi[0] / den,
                den,
                means: means[i],
            };
        }
        Ok(ZfDetector { rx })
    }

    /// Log mixture likelihood of `ñ` under `M_i = bit`, the other two
    /// messages uniform.
    pub fn log_likelihood(&self, i: usize, n: f64, bit: u8) -> f64 {
        let terms: Vec<f64> = message_triples()
            .into_iter()
            .filter(|m| m[i] == bit)
            .map(|m| {
                let (mu, var) = self.rx[i].component(m);
                let d = n - mu;
                -0.5 * (d * d / var + var.ln())
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// MAP decision on the combined statistic; ties decide 0.
    pub fn map_decide(&self, i: usize, n: f64) -> u8 {
        u8::from(self.log_likelihood(i, n, 1) > self.log_likelihood(i, n, 0))
    }

    pub fn decide(&self, i: usize, y: [f64; TYPES]) -> u8 {
        self.map_decide(i, self.rx[i].statistic(y))
    }
}

impl ZfDetector {
    /// Points where the MAP decision on `ñ` changes, ascending. Found by a
    /// sign scan of the log-likelihood ratio refined by bisection.
    pub fn decision_boundaries(&self, i: usize) -> Vec<f64> {
        let comps = message_triples().map(|m| self.rx[i].component(m));
        let lo = comps
            .iter()
            .map(|(m, v)| m - 12.0 * v.sqrt())
            .fold(f64::INFINITY, f64::min);
        let hi = comps
            .iter()
            .map(|(m, v)| m + 12.0 * v.sqrt())
            .fold(f64::NEG_INFINITY, f64::max);
        let n = 4000;
        let mut out = Vec::new();
        let mut prev_x = lo;
        let mut prev = self.map_decide(i, lo);
        for k in 1..=n {
            let x = lo + (hi - lo) * k as f64 / n as f64;
            let d = self.map_decide(i, x);
            if d != prev {
                let (mut a, mut b) = (prev_x, x);
                for _ in 0..80 {
                    let mid = 0.5 * (a + b);
                    if self.map_decide(i, mid) == prev {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                out.push(0.5 * (a + b));
                prev = d;
            }
            prev_x = x;
        }
        out
    }

    /// Error probability of the MAP rule when `ñ` is exactly the Gaussian
    /// mixture it assumes.
    pub fn gaussian_pe(&self) -> [f64; USERS] {
        std::array::from_fn(|i| {
            let cuts = self.decision_boundaries(i);
            let mut edges = vec![f64::NEG_INFINITY];
            edges.extend(cuts.iter().copied());
            edges.push(f64::INFINITY);
            let mut pe = 0.0;
            for w in edges.windows(2) {
                let probe = match (w[0].is_finite(), w[1].is_finite()) {
                    (true, true) => 0.5 * (w[0] + w[1]),
                    (false, true) => w[1] - 1.0,
                    (true, false) => w[0] + 1.0,
                    (false, false) => 0.0,
                };
                let d = self.map_decide(i, probe);
                for m in message_triples().into_iter().filter(|m| m[i] != d) {
                    let (mu, var) = self.rx[i].component(m);
                    let sd = var.sqrt();
                    let cdf = |x: f64| 0.5 * erfc(-(x - mu) / (sd * std::f64::consts::SQRT_2));
                    pe += (cdf(w[1]) - cdf(w[0])) / 8.0;
                }
            }
            pe
        })
    }
}

/// Free-function form of [`ZfDetector::build`].
pub fn build_zf(ch: &ChannelSet, bf: &BeamformingSet, scn: &Scenario) -> Result<ZfDetector> {
    ZfDetector::build(ch, bf, scn)
}

/// Which molecule type survives the reaction at a receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `H̃¹/H̃² > c`: type 1 survives with gain `H̃¹ − c·H̃²`.
    Type1,
    /// `H̃¹/H̃² < c`: type 2 survives with gain `H̃² − H̃¹/c`.
    Type2,
}

impl Branch {
    /// Surviving per-molecule amount of a `(type1, type2)` pair.
    pub fn residual(self, c: f64, v: [f64; TYPES]) -> f64 {
        match self {
            Branch::Type1 => v[0] - c * v[1],
            Branch::Type2 => v[1] - v[0] / c,
        }
    }

    /// Active type, zero-based.
    pub fn active(self) -> usize {
        match self {
            Branch::Type1 => 0,
            Branch::Type2 => 1,
        }
    }
}

/// Threshold between two Poisson means at their likelihood crossing.
pub fn crossing_threshold(lam0: f64, lam1: f64) -> f64 {
    if lam1 == lam0 {
        return f64::INFINITY;
    }
    if lam0 == 0.0 {
        return 0.0;
    }
    (lam1 - lam0) / (lam1 / lam0).ln()
}

fn poisson_cdf(k: f64, lam: f64) -> f64 {
    if k < 0.0 {
        return 0.0;
    }
    if lam == 0.0 {
        return 1.0;
    }
    gamma_ur(k + 1.0, lam)
}

fn poisson_sf(k: f64, lam: f64) -> f64 {
    if k < 0.0 {
        return 1.0;
    }
    if lam == 0.0 {
        return 0.0;
    }
    gamma_lr(k + 1.0, lam)
}

/// Error probability of deciding 1 iff `y > gamma`, equiprobable bits.
pub fn threshold_pe(lam0: f64, lam1: f64, gamma: f64) -> f64 {
    if lam0 == lam1 || gamma.is_infinite() {
        return 0.5;
    }
    let k = gamma.floor();
    0.5 * (poisson_sf(k, lam0) + poisson_cdf(k, lam1))
}

/// `ln Pois(y; λ)`.
pub fn poisson_log_pmf(y: u64, lam: f64) -> f64 {
    if lam == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let y = y as f64;
    y * lam.ln() - lam - ln_gamma(y + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactionReceiver {
    pub branch: Branch,
    pub c: f64,
    /// Effective gain `G` of the surviving type per released molecule.
    pub gain: f64,
    /// Surviving environment-noise mean.
    pub noise: f64,
    /// Post-reaction means for bit 0 and bit 1.
    pub lambda: [f64; 2],
    pub threshold: f64,
}

impl ReactionReceiver {
    pub fn decide(&self, y: u64) -> u8 {
        u8::from(y as f64 > self.threshold)
    }

    pub fn pe(&self) -> f64 {
        threshold_pe(self.lambda[0], self.lambda[1], self.threshold)
    }
}

/// Surviving noise mean on a branch.
pub fn noise_after_reaction(branch: Branch, c: f64, noise: [f64; TYPES]) -> f64 {
    branch.residual(c, noise).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactionDetector {
    pub rx: [ReactionReceiver; USERS],
}

impl ReactionDetector {
    pub fn build(ch: &ChannelSet, bf: &BeamformingSet, scn: &Scenario) -> Result<Self> {
        let dec = decompose(ch, bf);
        let mut out = [ReactionReceiver {
            branch: Branch::Type1,
            c: 0.0,
            gain: 0.0,
            noise: 0.0,
            lambda: [0.0; 2],
            threshold: 0.0,
        }; USERS];
        for i in 0..USERS {
            let h = dec.desired[i];
            let c = scn.reaction_coeffs[i];
            let branch = if h[0] > c * h[1] {
                Branch::Type1
            } else if h[0] < c * h[1] {
                Branch::Type2
            } else {
                return Err(Error::DegenerateChannel(format!(
                    "Rx{}: desired ratio equals c = {c}; the reaction removes the signal",
                    i + 1
                )));
            };
            let gain = branch.residual(c, h);
            let noise = noise_after_reaction(branch, c, scn.env_noise);
            let lambda = scn.amplitudes.map(|z| gain * z + noise);
            out[i] = ReactionReceiver {
                branch,
                c,
                gain,
                noise,
                lambda,
                threshold: crossing_threshold(lambda[0], lambda[1]),
            };
        }
        Ok(ReactionDetector { rx: out })
    }
}

/// Free-function form of [`ReactionDetector::build`].
pub fn build_reaction(
    ch: &ChannelSet,
    bf: &BeamformingSet,
    scn: &Scenario,
) -> Result<ReactionDetector> {
    ReactionDetector::build(ch, bf, scn)
}

/// Analytic error probabilities of the reaction receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticPe {
    pub per_rx: [f64; USERS],
    pub total: f64,
}

pub fn analytic_pe_reaction(det: &ReactionDetector) -> AnalyticPe {
    let per_rx = det.rx.map(|r| r.pe());
    AnalyticPe {
        per_rx,
        total: per_rx.iter().sum::<f64>() / USERS as f64,
    }
}

/// Decision rules for a reaction receiver facing one slot of ISI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsiRule {
    /// Ignores ISI and uses the ISI-free threshold.
    Memoryless,
    /// Adds the average previous-slot mean to both hypotheses.
    IsiAsNoise,
    /// Uses the receiver's own previously decided bit for its ISI term.
    Adaptive,
    /// Causal MAP: the own previous bit is weighted by its filtered
    /// posterior, the other users' previous bits are uniform.
    Optimum,
}

impl std::str::FromStr for IsiRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memoryless" => Ok(IsiRule::Memoryless),
            "isi-as-noise" => Ok(IsiRule::IsiAsNoise),
            "adaptive" => Ok(IsiRule::Adaptive),
            "optimum" => Ok(IsiRule::Optimum),
            _ => Err(Error::Domain(format!("unknown ISI rule '{s}'"))),
        }
    }
}

/// Previous-slot surviving amount per released molecule, `[rx][tx]`, on
/// each receiver's active branch.
pub fn isi_residuals(
    isi: &ChannelSet,
    bf: &BeamformingSet,
    det: &ReactionDetector,
) -> [[f64; USERS]; USERS] {
    std::array::from_fn(|i| {
        let r = det.rx[i];
        std::array::from_fn(|j| {
            let v = bf.vectors[j];
            r.branch
                .residual(r.c, [isi.gain(i, j, 0) * v[0], isi.gain(i, j, 1) * v[1]])
        })
    })
}

/// One receiver's ISI-aware detector; holds the state carried between slots.
#[derive(Debug, Clone, PartialEq)]
pub struct IsiDetector {
    rule: IsiRule,
    rx: ReactionReceiver,
    own: usize,
    amplitudes: [f64; 2],
    residual: [f64; USERS],
    /// Thresholds for the threshold-type rules, indexed by the previous
    /// own decision where it matters.
    thresholds: [f64; 2],
    prev_decision: u8,
    /// Filtered probability that the previous own bit was 1.
    prev_posterior: f64,
}

impl IsiDetector {
    pub fn new(
        rule: IsiRule,
        det: &ReactionDetector,
        residuals: &[[f64; USERS]; USERS],
        own: usize,
        amplitudes: [f64; 2],
    ) -> Self {
        let rx = det.rx[own];
        let residual = residuals[own];
        let avg = 0.5 * (amplitudes[0] + amplitudes[1]);
        let others: f64 = (0..USERS)
            .filter(|j| *j != own)
            .map(|j| residual[j] * avg)
            .sum();
        let pair = |isi: f64| {
            let lam = amplitudes.map(|z| (rx.gain * z + isi).max(0.0) + rx.noise);
            crossing_threshold(lam[0], lam[1])
        };
        let thresholds = match rule {
            IsiRule::Memoryless | IsiRule::Optimum => [rx.threshold; 2],
            IsiRule::IsiAsNoise => [pair(others + residual[own] * avg); 2],
            IsiRule::Adaptive => [
                pair(others + residual[own] * amplitudes[0]),
                pair(others + residual[own] * amplitudes[1]),
            ],
        };
        IsiDetector {
            rule,
            rx,
            own,
            amplitudes,
            residual,
            thresholds,
            prev_decision: 0,
            prev_posterior: 0.5,
        }
    }

    /// Post-reaction mean for the current bit and a previous-slot triple.
    pub fn mean(&self, bit: u8, prev: [u8; USERS]) -> f64 {
        let isi: f64 = (0..USERS)
            .map(|j| self.residual[j] * self.amplitudes[prev[j] as usize])
            .sum();
        (self.rx.gain * self.amplitudes[bit as usize] + isi).max(0.0) + self.rx.noise
    }

    pub fn threshold(&self) -> f64 {
        self.thresholds[self.prev_decision as usize]
    }

    /// `ln p(y | M = bit, own previous = prev)`, other previous bits uniform.
    fn log_lik(&self, y: u64, bit: u8, prev: u8) -> f64 {
        let terms: Vec<f64> = message_triples()
            .into_iter()
            .filter(|m| m[self.own] == prev)
            .map(|m| poisson_log_pmf(y, self.mean(bit, m)))
            .collect();
        log_sum_exp(&terms)
    }

    /// Decides the current bit and updates the carried state.
    pub fn decide(&mut self, y: u64) -> u8 {
        let d = match self.rule {
            IsiRule::Optimum => {
                let lp = [(1.0 - self.prev_posterior).ln(), self.prev_posterior.ln()];
                let post = [0u8, 1].map(|bit| {
                    log_sum_exp(&[
                        lp[0] + self.log_lik(y, bit, 0),
                        lp[1] + self.log_lik(y, bit, 1),
                    ])
                });
                let d = u8::from(post[1] > post[0]);
                let z = log_sum_exp(&post);
                self.prev_posterior = if z.is_finite() {
                    (post[1] - z).exp()
                } else {
                    0.5
                };
                d
            }
            _ => u8::from(y as f64 > self.threshold()),
        };
        self.prev_decision = d;
        d
    }

    pub fn reset(&mut self) {
        self.prev_decision = 0;
        self.prev_posterior = 0.5;
    }
}
