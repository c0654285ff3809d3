//! Row-stochastic matrices, reset distributions and the structured
//! deterioration families used by the machine-maintenance experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums and pmf totals must match 1 to this accuracy.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Square row-stochastic matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct StochasticMatrix {
    size: usize,
    entries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl TryFrom<RawMatrix> for StochasticMatrix {
    type Error = Error;
    fn try_from(raw: RawMatrix) -> Result<Self> {
        StochasticMatrix::from_row_major(raw.size, raw.entries)
    }
}

impl From<StochasticMatrix> for RawMatrix {
    fn from(m: StochasticMatrix) -> Self {
        RawMatrix { size: m.size, entries: m.entries }
    }
}

impl StochasticMatrix {
    pub fn from_row_major(size: usize, entries: Vec<f64>) -> Result<Self> {
        if size == 0 || entries.len() != size * size {
            return Err(Error::Dimension(format!(
                "expected {size}x{size} entries, got {}",
                entries.len()
            )));
        }
        for row in 0..size {
            let r = &entries[row * size..(row + 1) * size];
            if let Some(v) = r.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidRow {
                    row,
                    reason: format!("entry {v} outside [0, 1]"),
                });
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidRow {
                    row,
                    reason: format!("sums to {sum}"),
                });
            }
        }
        Ok(StochasticMatrix { size, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::Dimension("matrix rows must all have length |X|".into()));
        }
        Self::from_row_major(size, rows.concat())
    }

    pub fn identity(size: usize) -> Self {
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            entries[i * size + i] = 1.0;
        }
        StochasticMatrix { size, entries }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.size)
    }

    /// `self * other`, with rows renormalised when round-off drift exceeds
    /// [`STOCHASTIC_TOL`].
    pub fn mul(&self, other: &StochasticMatrix) -> StochasticMatrix {
        let n = self.size;
        assert_eq!(n, other.size, "matrix sizes differ");
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        renormalize_rows(n, &mut out);
        StochasticMatrix { size: n, entries: out }
    }

    /// Row vector times matrix: `v P`.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        let n = self.size;
        let mut out = vec![0.0; n];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(self.row(i)) {
                *o += vi * p;
            }
        }
        out
    }

    /// Matrix times column vector: `P f`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().zip(f).map(|(p, x)| p * x).sum())
            .collect()
    }

    /// Row `j` stochastically dominates row `i` for every `i < j`.
    pub fn is_stochastically_monotone(&self) -> bool {
        let tails: Vec<Vec<f64>> = self.rows().map(tail_sums).collect();
        tails.windows(2).all(|w| dominates(&w[1], &w[0]))
    }

    /// Each row `i` puts all of its mass on states `>= i`, i.e. `P` dominates
    /// the identity.
    pub fn dominates_identity(&self) -> bool {
        self.rows().enumerate().all(|(i, r)| {
            let tail: f64 = r[i..].iter().sum();
            tail >= 1.0 - STOCHASTIC_TOL
        })
    }
}

fn renormalize_rows(n: usize, entries: &mut [f64]) {
    for row in entries.chunks_mut(n) {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL && s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
}

/// `tail[z] = sum_{y >= z} p[y]`.
pub fn tail_sums(p: &[f64]) -> Vec<f64> {
    let mut tail = vec![0.0; p.len()];
    let mut acc = 0.0;
    for z in (0..p.len()).rev() {
        acc += p[z];
        tail[z] = acc;
    }
    tail
}

fn dominates(upper: &[f64], lower: &[f64]) -> bool {
    upper
        .iter()
        .zip(lower)
        .all(|(u, l)| *u >= *l - STOCHASTIC_TOL)
}

/// `p` stochastically dominates `q` (first order, states ordered by index).
pub fn stochastically_dominates(p: &[f64], q: &[f64]) -> bool {
    dominates(&tail_sums(p), &tail_sums(q))
}

/// Probability mass function of the post-activation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ResetPmf(Vec<f64>);

impl TryFrom<Vec<f64>> for ResetPmf {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ResetPmf::new(v)
    }
}

impl From<ResetPmf> for Vec<f64> {
    fn from(q: ResetPmf) -> Self {
        q.0
    }
}

impl ResetPmf {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidPmf("empty".into()));
        }
        if let Some(v) = probabilities.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidPmf(format!("negative entry {v}")));
        }
        let s: f64 = probabilities.iter().sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidPmf(format!("sums to {s}")));
        }
        Ok(ResetPmf(probabilities))
    }

    /// Unit mass on state index `state` (0-based).
    pub fn point_mass(size: usize, state: usize) -> Self {
        let mut v = vec![0.0; size];
        v[state] = 1.0;
        ResetPmf(v)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Draws each entry from Exp(1) and normalises. Deterministic in `seed`.
pub fn sample_reset_pmf(size: usize, seed: u64) -> Result<ResetPmf> {
    if size < 2 {
        return Err(Error::SizeTooSmall(size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<f64> = (0..size)
        .map(|_| loop {
            let x: f64 = Exp1.sample(&mut rng);
            if x > 0.0 {
                break x;
            }
        })
        .collect();
    let total: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|x| *x /= total);
    ResetPmf::new(draws)
}

/// Structured deterioration matrix `P_family(p)` on `size` states.
///
/// Families 1-3 are banded: state `i` stays with probability `p` and moves
/// one or two steps up with `q1`, `q2`; the second-to-last row folds `q1 + q2`
/// into the final column. Family 4 spreads `1 - p` uniformly over all worse
/// states. The last state is absorbing in every family.
pub fn make_structured_matrix(family: u8, p: f64, size: usize) -> Result<StochasticMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    if size < 2 {
        return Err(Error::SizeTooSmall(size));
    }
    let (q1, q2) = match family {
        1 => (1.0 - p, 0.0),
        2 => ((1.0 - p) / 2.0, (1.0 - p) / 2.0),
        3 => (2.0 * (1.0 - p) / 3.0, (1.0 - p) / 3.0),
        4 => (0.0, 0.0),
        other => return Err(Error::InvalidFamily(other)),
    };
    let n = size;
    let mut e = vec![0.0; n * n];
    for i in 0..n - 1 {
        e[i * n + i] = p;
        if family == 4 {
            let q = (1.0 - p) / (n - 1 - i) as f64;
            for j in i + 1..n {
                e[i * n + j] = q;
            }
        } else if i + 2 < n {
            e[i * n + i + 1] = q1;
            e[i * n + i + 2] = q2;
        } else {
            e[i * n + i + 1] = q1 + q2;
        }
    }
    e[n * n - 1] = 1.0;
    StochasticMatrix::from_row_major(n, e)
}

/// `n` equispaced points in `[lo, hi]` (a single point sits at `lo`).
pub fn equispaced(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| ((n - 1 - i) as f64 * lo + i as f64 * hi) / (n - 1) as f64)
            .collect(),
    }
}
