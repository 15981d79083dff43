//! Seeded Monte-Carlo simulation of the full chain.
//!
//! Trials are split into fixed-size blocks. Block `b` draws from a ChaCha8
//! generator seeded with the master seed and set to stream `b`, so results
//! do not depend on the number of worker threads. With ISI memory each
//! block is an independent run of consecutive slots whose first slot sees
//! uniformly drawn previous bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::alignment::{mean_signals, BeamformingSet};
use crate::detection::{
    isi_residuals, message_triples, poisson_log_pmf, Branch, IsiDetector, IsiRule,
    ReactionDetector, ZfDetector,
};
use crate::error::{Error, Result};
use crate::model::{
    channel_set, channel_set_with_offset, ChannelSet, Scenario, TimingSchedule, TYPES, USERS,
};

/// Trials per independent random stream.
pub const BLOCK: u64 = 8192;

/// Means at or above this use the normal approximation.
pub const POISSON_NORMAL_SWITCH: f64 = 1e4;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Poisson draw: exact below [`POISSON_NORMAL_SWITCH`], otherwise
/// `round(λ + √λ·Z)` clamped at zero.
pub fn poisson_sample<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> Result<u64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("Poisson mean {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    if lambda < POISSON_NORMAL_SWITCH {
        let d = Poisson::new(lambda).map_err(|e| Error::Domain(e.to_string()))?;
        return Ok(d.sample(rng) as u64);
    }
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    Ok((lambda + lambda.sqrt() * z + 0.5).floor().max(0.0) as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    /// Zero-forcing plus Gaussian-mixture MAP (no reaction).
    ZfMap,
    /// Reaction followed by the Poisson threshold rule.
    Reaction,
    /// No alignment: every user sends type 1 only and each receiver applies
    /// the Poisson-mixture MAP rule to its type-1 count.
    SharedType,
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zf-map" => Ok(DetectorKind::ZfMap),
            "reaction" => Ok(DetectorKind::Reaction),
            "shared-type" => Ok(DetectorKind::SharedType),
            _ => Err(Error::Domain(format!("unknown detector '{s}'"))),
        }
    }
}

/// How the reaction acts on random counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReactionModel {
    /// The surviving count is Poisson with the post-reaction mean.
    MeanLevel,
    /// Both types are sampled and `⌊c·y⌋` molecules of one type annihilate
    /// the other.
    CountLevel,
}

impl std::str::FromStr for ReactionModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ReactionModel::MeanLevel),
            "count" => Ok(ReactionModel::CountLevel),
            _ => Err(Error::Domain(format!("unknown reaction model '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub trials: u64,
    pub seed: u64,
    /// Previous slots that leak into the current one, 0 or 1.
    pub isi_memory: u8,
    pub noise_on: bool,
    pub detector: DetectorKind,
    pub isi_rule: IsiRule,
    pub reaction_model: ReactionModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            trials: 100_000,
            seed: 1,
            isi_memory: 0,
            noise_on: false,
            detector: DetectorKind::Reaction,
            isi_rule: IsiRule::Adaptive,
            reaction_model: ReactionModel::MeanLevel,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Domain("trials must be at least 1".into()));
        }
        if self.isi_memory > 1 {
            return Err(Error::Domain(format!(
                "ISI memory {} (only 0 or 1)",
                self.isi_memory
            )));
        }
        Ok(())
    }
}

/// Wilson score interval for `errors` out of `n`.
pub fn wilson(errors: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub errors: u64,
    pub trials: u64,
    pub rate: f64,
    /// Wilson 95% interval.
    pub lo: f64,
    pub hi: f64,
}

impl RateEstimate {
    pub fn new(errors: u64, trials: u64) -> Self {
        let (lo, hi) = wilson(errors, trials, Z95);
        RateEstimate {
            errors,
            trials,
            rate: errors as f64 / trials.max(1) as f64,
            lo,
            hi,
        }
    }

    /// Wilson interval at an arbitrary normal quantile.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        wilson(self.errors, self.trials, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub per_rx: [RateEstimate; USERS],
    /// Pooled over the three receivers; its rate is the mean of theirs.
    pub total: RateEstimate,
    pub trials: u64,
    pub seed: u64,
}

impl ErrorReport {
    fn from_counts(errors: [u64; USERS], trials: u64, seed: u64) -> Self {
        ErrorReport {
            per_rx: errors.map(|e| RateEstimate::new(e, trials)),
            total: RateEstimate::new(errors.iter().sum(), USERS as u64 * trials),
            trials,
            seed,
        }
    }
}

/// Several ISI rules run on the same draws.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleComparison {
    pub rules: Vec<IsiRule>,
    pub reports: Vec<ErrorReport>,
    /// `discordant[a][b]`: decisions where rule `a` erred and rule `b` did
    /// not, summed over receivers.
    pub discordant: Vec<Vec<u64>>,
}

impl RuleComparison {
    /// Paired z statistic for "rule a errs more than rule b".
    pub fn paired_z(&self, a: usize, b: usize) -> f64 {
        let (x, y) = (self.discordant[a][b] as f64, self.discordant[b][a] as f64);
        if x + y == 0.0 {
            0.0
        } else {
            (x - y) / (x + y).sqrt()
        }
    }
}

/// Per-type means `[triple][rx][type]` for all message triples.
fn mean_table(
    ch: &ChannelSet,
    bf: &BeamformingSet,
    amplitudes: [f64; 2],
) -> [[[f64; TYPES]; USERS]; 8] {
    message_triples().map(|m| mean_signals(ch, bf, m.map(|b| amplitudes[b as usize])))
}

fn index(m: [u8; USERS]) -> usize {
    m[0] as usize | (m[1] as usize) << 1 | (m[2] as usize) << 2
}

/// Poisson-mixture MAP on one type with the other users uniform.
struct SharedTypeDetector {
    means: [[f64; USERS]; 8],
}

impl SharedTypeDetector {
    fn decide(&self, i: usize, y: u64) -> u8 {
        let ll = |bit: u8| {
            let terms: Vec<f64> = message_triples()
                .into_iter()
                .filter(|m| m[i] == bit)
                .map(|m| poisson_log_pmf(y, self.means[index(m)][i]))
                .collect();
            let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                mx
            } else {
                mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
            }
        };
        u8::from(ll(1) > ll(0))
    }
}

enum Chain {
    Zf(Box<ZfDetector>),
    Shared(SharedTypeDetector),
    Reaction {
        det: ReactionDetector,
        residuals: [[f64; USERS]; USERS],
    },
}

struct Setup {
    chain: Chain,
    amplitudes: [f64; 2],
    noise: [f64; TYPES],
    cur: [[[f64; TYPES]; USERS]; 8],
    isi: [[[f64; TYPES]; USERS]; 8],
    coeffs: [f64; USERS],
}

fn setup(
    scn: &Scenario,
    ts: &TimingSchedule,
    bf: &BeamformingSet,
    cfg: &SimConfig,
) -> Result<Setup> {
    cfg.validate()?;
    let mut scn = scn.clone();
    if !cfg.noise_on {
        scn.env_noise = [0.0; TYPES];
    }
    let ch = channel_set(&scn, ts)?;
    let isi_ch =
        (cfg.isi_memory == 1).then(|| channel_set_with_offset(&scn, ts, scn.slot_duration));
    let shared = BeamformingSet::from_vectors([[1.0, 0.0]; USERS])?;
    let bf_used = if cfg.detector == DetectorKind::SharedType {
        &shared
    } else {
        bf
    };
    let cur = mean_table(&ch, bf_used, scn.amplitudes);
    let isi = match &isi_ch {
        Some(c) => mean_table(c, bf_used, scn.amplitudes),
        None => [[[0.0; TYPES]; USERS]; 8],
    };
    let chain = match cfg.detector {
        DetectorKind::ZfMap => Chain::Zf(Box::new(ZfDetector::build(&ch, bf, &scn)?)),
        DetectorKind::SharedType => {
            let mut means = [[0.0; USERS]; 8];
            for (k, m) in means.iter_mut().enumerate() {
                for i in 0..USERS {
                    m[i] = cur[k][i][0] + scn.env_noise[0];
                }
            }
            Chain::Shared(SharedTypeDetector { means })
        }
        DetectorKind::Reaction => {
            let det = ReactionDetector::build(&ch, bf, &scn)?;
            let residuals = match &isi_ch {
                Some(c) => isi_residuals(c, bf, &det),
                None => [[0.0; USERS]; USERS],
            };
            Chain::Reaction { det, residuals }
        }
    };
    Ok(Setup {
        chain,
        amplitudes: scn.amplitudes,
        noise: scn.env_noise,
        cur,
        isi,
        coeffs: scn.reaction_coeffs,
    })
}

fn draw_bits<R: Rng>(rng: &mut R) -> [u8; USERS] {
    let k: u8 = rng.random_range(0..8);
    [k & 1, (k >> 1) & 1, (k >> 2) & 1]
}

/// Errors per rule per receiver, and discordant counts, for one block.
type BlockTally = (Vec<[u64; USERS]>, Vec<Vec<u64>>);

fn run_block(
    s: &Setup,
    rules: &[IsiRule],
    cfg: &SimConfig,
    block: u64,
    len: u64,
) -> Result<BlockTally> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(block);
    let nr = rules.len();
    let mut errors = vec![[0u64; USERS]; nr];
    let mut disc = vec![vec![0u64; nr]; nr];
    let mut dets: Vec<[IsiDetector; USERS]> = match &s.chain {
        Chain::Reaction { det, residuals } => rules
            .iter()
            .map(|r| std::array::from_fn(|i| IsiDetector::new(*r, det, residuals, i, s.amplitudes)))
            .collect(),
        _ => Vec::new(),
    };
    let mut prev = draw_bits(&mut rng);
    let mut wrong = vec![false; nr];
    for _ in 0..len {
        let m = draw_bits(&mut rng);
        let (ci, pi) = (index(m), index(prev));
        for i in 0..USERS {
            let full = |l: usize| s.cur[ci][i][l] + s.isi[pi][i][l] + s.noise[l];
            match &s.chain {
                Chain::Zf(z) => {
                    let y = [
                        poisson_sample(&mut rng, full(0))?,
                        poisson_sample(&mut rng, full(1))?,
                    ];
                    wrong[0] = z.decide(i, [y[0] as f64, y[1] as f64]) != m[i];
                }
                Chain::Shared(d) => {
                    let y = poisson_sample(&mut rng, full(0))?;
                    wrong[0] = d.decide(i, y) != m[i];
                }
                Chain::Reaction { det, .. } => {
                    let y = match cfg.reaction_model {
                        ReactionModel::MeanLevel => {
                            poisson_sample(&mut rng, dets[0][i].mean(m[i], prev))?
                        }
                        ReactionModel::CountLevel => {
                            let y1 = poisson_sample(&mut rng, full(0))?;
                            let y2 = poisson_sample(&mut rng, full(1))?;
                            count_level(det.rx[i].branch, s.coeffs[i], y1, y2)
                        }
                    };
                    for (k, d) in dets.iter_mut().enumerate() {
                        wrong[k] = d[i].decide(y) != m[i];
                    }
                }
            }
            for a in 0..nr {
                errors[a][i] += wrong[a] as u64;
                for b in 0..nr {
                    disc[a][b] += (wrong[a] && !wrong[b]) as u64;
                }
            }
        }
        prev = m;
    }
    Ok((errors, disc))
}

/// Surviving count after `⌊c·y⌋`-style annihilation on a branch.
pub fn count_level(branch: Branch, c: f64, y1: u64, y2: u64) -> u64 {
    match branch {
        Branch::Type1 => y1.saturating_sub((c * y2 as f64).trunc() as u64),
        Branch::Type2 => y2.saturating_sub((y1 as f64 / c).trunc() as u64),
    }
}

fn run(
    scn: &Scenario,
    ts: &TimingSchedule,
    bf: &BeamformingSet,
    cfg: &SimConfig,
    rules: &[IsiRule],
) -> Result<RuleComparison> {
    let s = setup(scn, ts, bf, cfg)?;
    let rules: Vec<IsiRule> = match s.chain {
        Chain::Reaction { .. } => rules.to_vec(),
        _ => vec![IsiRule::Memoryless],
    };
    let blocks = cfg.trials.div_ceil(BLOCK);
    let tallies = (0..blocks)
        .into_par_iter()
        .map(|b| run_block(&s, &rules, cfg, b, BLOCK.min(cfg.trials - b * BLOCK)))
        .collect::<Result<Vec<_>>>()?;
    let nr = rules.len();
    let mut errors = vec![[0u64; USERS]; nr];
    let mut discordant = vec![vec![0u64; nr]; nr];
    for (e, d) in tallies {
        for a in 0..nr {
            for i in 0..USERS {
                errors[a][i] += e[a][i];
            }
            for b in 0..nr {
                discordant[a][b] += d[a][b];
            }
        }
    }
    let reports = errors
        .into_iter()
        .map(|e| ErrorReport::from_counts(e, cfg.trials, cfg.seed))
        .collect();
    Ok(RuleComparison {
        rules,
        reports,
        discordant,
    })
}

/// Simulates `cfg.trials` slots. The reaction detector uses `cfg.isi_rule`
/// when ISI memory is on and the ISI-free threshold otherwise.
pub fn simulate(
    scn: &Scenario,
    ts: &TimingSchedule,
    bf: &BeamformingSet,
    cfg: &SimConfig,
) -> Result<ErrorReport> {
    let rule = if cfg.isi_memory == 1 {
        cfg.isi_rule
    } else {
        IsiRule::Memoryless
    };
    Ok(run(scn, ts, bf, cfg, &[rule])?.reports[0])
}

/// Runs several ISI rules of the reaction receiver on common draws.
pub fn compare_rules(
    scn: &Scenario,
    ts: &TimingSchedule,
    bf: &BeamformingSet,
    cfg: &SimConfig,
    rules: &[IsiRule],
) -> Result<RuleComparison> {
    if cfg.detector != DetectorKind::Reaction {
        return Err(Error::Precondition(
            "rule comparison needs the reaction detector".into(),
        ));
    }
    run(scn, ts, bf, cfg, rules)
}
