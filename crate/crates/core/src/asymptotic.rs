//! K-user asymptotic alignment over diagonal per-type channels.
//!
//! Molecule types play the role of channel extensions: each link is a
//! positive diagonal `H_ij` of length `L`, and the transmit column sets are
//! products of powers of the `T_gq` diagonals applied to a base vector.

use nalgebra::DMatrix;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-9;

pub const DEFAULT_MAX_ORDER: u32 = 6;

/// Largest type count the column construction will build.
pub const MAX_TYPES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AsymptoticConfig {
    pub k: usize,
    pub n: u32,
    pub max_order: u32,
}

impl AsymptoticConfig {
    pub fn new(k: usize, n: u32) -> Result<Self> {
        Self::with_max_order(k, n, DEFAULT_MAX_ORDER)
    }

    pub fn with_max_order(k: usize, n: u32, max_order: u32) -> Result<Self> {
        if k < 3 {
            return Err(Error::Domain(format!("K = {k}; need at least 3 users")));
        }
        if n < 1 || n > max_order {
            return Err(Error::Domain(format!("n = {n} outside 1..={max_order}")));
        }
        let cfg = AsymptoticConfig { k, n, max_order };
        let big = (n as u128 + 1).checked_pow(cfg.exponent() as u32);
        if big.and_then(|b| b.checked_mul(k as u128)).is_none() {
            return Err(Error::Domain(format!(
                "(n+1)^N overflows for K = {k}, n = {n}"
            )));
        }
        Ok(cfg)
    }

    /// `N = (K−1)(K−2) − 1`, the number of `T_gq` factors.
    pub fn exponent(&self) -> usize {
        (self.k - 1) * (self.k - 2) - 1
    }

    fn pow(base: u32, e: usize) -> u128 {
        (base as u128).pow(e as u32)
    }

    /// Streams for user 1, `(n+1)^N`.
    pub fn streams_first(&self) -> u128 {
        Self::pow(self.n + 1, self.exponent())
    }

    /// Streams for users 2..K, `n^N`.
    pub fn streams_other(&self) -> u128 {
        Self::pow(self.n, self.exponent())
    }

    pub fn streams(&self, user: usize) -> u128 {
        if user == 0 {
            self.streams_first()
        } else {
            self.streams_other()
        }
    }

    /// Molecule types, `L = (n+1)^N + n^N`.
    pub fn types(&self) -> u128 {
        self.streams_first() + self.streams_other()
    }

    /// Ordered `(g, q)` pairs, zero-based, over users 2..K with `g ≠ q`,
    /// skipping `(2, 3)` whose `T` is the identity.
    pub fn index_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.exponent());
        for g in 1..self.k {
            for q in 1..self.k {
                if g != q && (g, q) != (1, 2) {
                    out.push((g, q));
                }
            }
        }
        out
    }

    fn types_usize(&self) -> Result<usize> {
        let l = self.types();
        if l > MAX_TYPES as u128 {
            return Err(Error::Domain(format!(
                "L = {l} molecule types exceeds the build limit {MAX_TYPES}"
            )));
        }
        Ok(l as usize)
    }
}

/// `((n+1)^N + (K−1)n^N) / ((n+1)^N + n^N)`.
pub fn dof(cfg: &AsymptoticConfig) -> Ratio<u128> {
    let a = cfg.streams_first();
    let b = cfg.streams_other();
    Ratio::new(a + (cfg.k as u128 - 1) * b, a + b)
}

/// `H[i][j]` is the length-`L` diagonal from Tx_j to Rx_i.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalChannelStack {
    pub h: Vec<Vec<Vec<f64>>>,
}

impl DiagonalChannelStack {
    pub fn new(h: Vec<Vec<Vec<f64>>>) -> Self {
        DiagonalChannelStack { h }
    }

    /// Independent uniform entries in `[0.5, 2)`.
    pub fn random(k: usize, l: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = (0..k)
            .map(|_| {
                (0..k)
                    .map(|_| (0..l).map(|_| rng.random_range(0.5..2.0)).collect())
                    .collect()
            })
            .collect();
        DiagonalChannelStack { h }
    }

    pub fn identity(k: usize, l: usize) -> Self {
        DiagonalChannelStack {
            h: vec![vec![vec![1.0; l]; k]; k],
        }
    }

    pub fn users(&self) -> usize {
        self.h.len()
    }

    pub fn types(&self) -> usize {
        self.h.first().and_then(|r| r.first()).map_or(0, Vec::len)
    }

    fn check(&self, cfg: &AsymptoticConfig) -> Result<usize> {
        let l = cfg.types_usize()?;
        if self.users() != cfg.k
            || self
                .h
                .iter()
                .any(|row| row.len() != cfg.k || row.iter().any(|d| d.len() != l))
        {
            return Err(Error::Domain(format!(
                "channel stack shape does not match K = {}, L = {l}",
                cfg.k
            )));
        }
        for (i, row) in self.h.iter().enumerate() {
            for (j, d) in row.iter().enumerate() {
                if let Some(p) = d.iter().position(|v| *v == 0.0) {
                    return Err(Error::SingularChannel(format!(
                        "H{}{} has a zero at type {}",
                        i + 1,
                        j + 1,
                        p + 1
                    )));
                }
            }
        }
        Ok(l)
    }

    /// `S_j = H_1j⁻¹ H_13 H_23⁻¹ H_21`.
    pub fn s(&self, j: usize) -> Vec<f64> {
        let h = &self.h;
        (0..self.types())
            .map(|t| h[0][2][t] * h[1][0][t] / (h[0][j][t] * h[1][2][t]))
            .collect()
    }

    /// `T_ij = H_i1⁻¹ H_ij S_j`.
    pub fn t(&self, i: usize, j: usize) -> Vec<f64> {
        let s = self.s(j);
        (0..self.types())
            .map(|t| self.h[i][j][t] * s[t] / self.h[i][0][t])
            .collect()
    }
}

/// Column sets `V_j`, each column of length `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticBeamforming {
    pub columns: Vec<Vec<Vec<f64>>>,
}

/// All products `Π T_gq^α_gq ⊙ w` with every exponent in `0..=max_exp`.
fn product_set(ts: &[Vec<f64>], w: &[f64], max_exp: u32) -> Vec<Vec<f64>> {
    let mut cols = vec![w.to_vec()];
    for t in ts {
        let mut next = Vec::with_capacity(cols.len() * (max_exp as usize + 1));
        for c in &cols {
            let mut cur = c.clone();
            next.push(cur.clone());
            for _ in 0..max_exp {
                cur.iter_mut().zip(t).for_each(|(x, y)| *x *= y);
                next.push(cur.clone());
            }
        }
        cols = next;
    }
    cols
}

/// Builds the transmit column sets with base vector `w = 1`.
pub fn build_beamforming(
    cfg: &AsymptoticConfig,
    h: &DiagonalChannelStack,
) -> Result<AsymptoticBeamforming> {
    let l = h.check(cfg)?;
    let ts: Vec<Vec<f64>> = cfg
        .index_pairs()
        .into_iter()
        .map(|(g, q)| h.t(g, q))
        .collect();
    let w = vec![1.0; l];
    let v1 = product_set(&ts, &w, cfg.n);
    let b = product_set(&ts, &w, cfg.n - 1);
    let mut columns = vec![v1];
    for j in 1..cfg.k {
        let s = h.s(j);
        columns.push(
            b.iter()
                .map(|c| c.iter().zip(&s).map(|(x, y)| x * y).collect())
                .collect(),
        );
    }
    Ok(AsymptoticBeamforming { columns })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverAlignment {
    pub interference_rank: usize,
    /// Room left for the desired streams, `L − n_s,i`.
    pub interference_budget: usize,
    pub desired_streams: usize,
    /// Desired columns are independent of each other and of the
    /// interference span.
    pub desired_independent: bool,
}

impl ReceiverAlignment {
    pub fn aligned(&self) -> bool {
        self.interference_rank <= self.interference_budget
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub types: usize,
    pub receivers: Vec<ReceiverAlignment>,
}

impl AlignmentReport {
    pub fn aligned(&self) -> bool {
        self.receivers.iter().all(ReceiverAlignment::aligned)
    }

    pub fn resolvable(&self) -> bool {
        self.aligned() && self.receivers.iter().all(|r| r.desired_independent)
    }
}

fn scaled_columns<'a>(h: &'a [f64], cols: &'a [Vec<f64>]) -> impl Iterator<Item = Vec<f64>> + 'a {
    cols.iter()
        .map(move |c| c.iter().zip(h).map(|(x, y)| x * y).collect())
}

/// Numerical rank after normalizing every column to unit length.
pub fn numerical_rank(l: usize, cols: &[Vec<f64>]) -> usize {
    let cols: Vec<&Vec<f64>> = cols
        .iter()
        .filter(|c| c.iter().any(|v| *v != 0.0))
        .collect();
    if cols.is_empty() {
        return 0;
    }
    let m = DMatrix::from_fn(l, cols.len(), |r, c| {
        let norm = cols[c].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols[c][r] / norm
    });
    let sv = m.singular_values();
    let top = sv.max();
    sv.iter().filter(|v| **v > RANK_TOL * top).count()
}

pub fn verify_alignment(
    cfg: &AsymptoticConfig,
    h: &DiagonalChannelStack,
    v: &AsymptoticBeamforming,
) -> AlignmentReport {
    let l = h.types();
    let receivers = (0..cfg.k)
        .map(|i| {
            let interference: Vec<Vec<f64>> = (0..cfg.k)
                .filter(|j| *j != i)
                .flat_map(|j| scaled_columns(&h.h[i][j], &v.columns[j]).collect::<Vec<_>>())
                .collect();
            let desired: Vec<Vec<f64>> = scaled_columns(&h.h[i][i], &v.columns[i]).collect();
            let ri = numerical_rank(l, &interference);
            let mut all = interference;
            all.extend(desired.iter().cloned());
            let ns = desired.len();
            let independent =
                numerical_rank(l, &desired) == ns && numerical_rank(l, &all) == ri + ns;
            ReceiverAlignment {
                interference_rank: ri,
                interference_budget: l.saturating_sub(ns),
                desired_streams: ns,
                desired_independent: independent,
            }
        })
        .collect();
    AlignmentReport {
        types: l,
        receivers,
    }
}
