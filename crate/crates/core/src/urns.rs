//! Samplers: stick-breaking Poisson-Dirichlet frequencies, the generalized
//! white-ball Pólya urn started from a configuration, the explicit posterior
//! frequency sampler given an observed configuration, Radon-Nikodym
//! reweighting against the stationary law, and the split-urn coupling.
//!
//! All randomness flows through explicit generators passed by the caller;
//! Beta draws use the two-Gamma construction and Dirichlet vectors the
//! Gamma-ratio construction, so one seeded stream drives everything.

use crate::dual_process::DeathProbTable;
use crate::error::{Error, Result};
use crate::partitions::{hypergeom, Partition};
use crate::sampling::{ewens_pitman, eval_sampling_prob, Frequencies, Params};
use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0)
        .expect("positive shape")
        .sample(rng)
}

/// Beta(a, b) via two Gamma draws.
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    loop {
        let x = sample_gamma(a, rng);
        let y = sample_gamma(b, rng);
        if x + y > 0.0 {
            return x / (x + y);
        }
    }
}

/// Dirichlet(shapes) via normalized Gamma draws.
pub fn sample_dirichlet<R: Rng + ?Sized>(shapes: &[f64], rng: &mut R) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = shapes.iter().map(|&a| sample_gamma(a, rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

/// Remaining stick-breaking state: given `k` realized sticks, the tail of
/// the sequence is the unbroken mass times a fresh `PD(alpha, theta + kα)`.
#[derive(Clone, Debug)]
struct StickTail {
    alpha: f64,
    theta: f64,
    next_index: usize,
}

/// Frequencies realized on demand: atoms in size-biased (realization) order
/// plus the unbroken tail mass. Extending never changes realized atoms.
///
/// Every unrealized atom is bounded by the residual, so `to_frequencies`
/// reports the realized atoms descending plus the residual as dust.
#[derive(Clone, Debug)]
pub struct LazyFrequencies {
    atoms: Vec<f64>,
    tail_mass: f64,
    tail: Option<StickTail>,
}

/// Default bound on the expected unrealized contribution to `Σ x_i²`.
pub const DEFAULT_P2_BIAS_TOL: f64 = 1e-6;

impl LazyFrequencies {
    /// A fresh stick-breaking `PD(α,θ)` sequence; nothing realized yet.
    pub fn stick_breaking(p: &Params<f64>) -> Self {
        LazyFrequencies {
            atoms: Vec::new(),
            tail_mass: 1.0,
            tail: Some(StickTail {
                alpha: *p.alpha(),
                theta: *p.theta(),
                next_index: 1,
            }),
        }
    }

    /// Fixed atoms plus a scaled stick-breaking tail (used by the posterior
    /// sampler). `tail_mass` is the mass of the unrealized tail.
    fn with_prefix(atoms: Vec<f64>, tail_mass: f64, alpha: f64, theta_tail: f64) -> Self {
        LazyFrequencies {
            atoms,
            tail_mass,
            tail: Some(StickTail {
                alpha,
                theta: theta_tail,
                next_index: 1,
            }),
        }
    }

    /// Atoms realized so far, in realization order.
    pub fn realized_atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn residual(&self) -> f64 {
        self.tail_mass
    }

    /// Breaks one more stick. Returns the new atom, or `None` when the
    /// sequence is exhausted (no tail).
    pub fn realize_next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<f64> {
        let tail = self.tail.as_mut()?;
        let v = sample_beta(
            1.0 - tail.alpha,
            tail.theta + tail.next_index as f64 * tail.alpha,
            rng,
        );
        tail.next_index += 1;
        let atom = self.tail_mass * v;
        self.tail_mass -= atom;
        self.atoms.push(atom);
        Some(atom)
    }

    /// Realizes sticks until the expected unrealized contribution to the
    /// second power sum, `residual² (1−α)/(1+θ+kα)`, drops below `tol`.
    /// Monomials with exponents ≥ 2 evaluated on the realized atoms are then
    /// biased by at most O(tol).
    pub fn resolve_power_sums<R: Rng + ?Sized>(&mut self, tol: f64, rng: &mut R) {
        loop {
            let Some(tail) = self.tail.as_ref() else { return };
            let theta_eff = tail.theta + (tail.next_index - 1) as f64 * tail.alpha;
            let expected_p2 = self.tail_mass * self.tail_mass * (1.0 - tail.alpha)
                / (1.0 + theta_eff + tail.alpha);
            if expected_p2 <= tol {
                return;
            }
            if self.realize_next(rng).is_none() {
                return;
            }
        }
    }

    /// Realizes sticks until the residual itself is below `target` (or the
    /// stick budget is spent), then the caller can snapshot.
    pub fn resolve_residual<R: Rng + ?Sized>(
        &mut self,
        target: f64,
        max_sticks: usize,
        rng: &mut R,
    ) {
        let mut spent = 0;
        while self.tail_mass > target && spent < max_sticks {
            if self.realize_next(rng).is_none() {
                return;
            }
            spent += 1;
        }
    }

    /// Index of the atom a uniform draw lands in, realizing sticks on demand
    /// when the draw falls in the unbroken tail. Exact: no dust
    /// approximation is involved.
    pub fn sample_index<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let mut u = rng.random::<f64>();
        for (i, &a) in self.atoms.iter().enumerate() {
            if u < a {
                return i;
            }
            u -= a;
        }
        loop {
            let before = self.atoms.len();
            match self.realize_next(rng) {
                Some(atom) => {
                    if u < atom {
                        return before;
                    }
                    u -= atom;
                }
                // No tail left: numerical leftovers land on the last atom.
                None => return self.atoms.len().saturating_sub(1),
            }
        }
    }

    /// Snapshot as plain `Frequencies`: realized atoms descending, unbroken
    /// mass as residual.
    pub fn to_frequencies(&self) -> Frequencies {
        let mut atoms = self.atoms.clone();
        atoms.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        // Guard against accumulated roundoff pushing the sum past 1.
        Frequencies::new(atoms).unwrap_or_else(|_| {
            let total: f64 = self.atoms.iter().sum();
            let mut scaled: Vec<f64> = self.atoms.iter().map(|a| a / total).collect();
            scaled.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
            Frequencies::new(scaled).expect("normalized atoms")
        })
    }

    /// Largest `k` realized atoms, descending, with the residual recomputed
    /// so the reported masses stay consistent.
    pub fn top_atoms(&self, k: usize) -> (Vec<f64>, f64) {
        let mut atoms = self.atoms.clone();
        atoms.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        atoms.truncate(k);
        let residual = (1.0 - atoms.iter().sum::<f64>()).max(0.0);
        (atoms, residual)
    }
}

/// Stick-breaking sampler for the stationary law `PD(α,θ)`: sticks
/// `V_k ~ Beta(1−α, θ+kα)`, atom `k` of size `V_k ∏_{j<k} (1−V_j)`, reported
/// in size-biased order.
pub fn stick_breaking_sampler(p: &Params<f64>) -> LazyFrequencies {
    LazyFrequencies::stick_breaking(p)
}

/// Mutable colour-count state of the generalized Pólya urn. Colour identity
/// is tracked by index during a run and projected to a `Partition` at the
/// boundary.
#[derive(Clone, Debug)]
pub struct UrnState {
    counts: Vec<usize>,
    total: usize,
}

impl UrnState {
    pub fn empty() -> Self {
        UrnState {
            counts: Vec::new(),
            total: 0,
        }
    }

    pub fn from_configuration(omega: &Partition) -> Self {
        UrnState {
            counts: omega.parts().to_vec(),
            total: omega.size(),
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn colour_count(&self) -> usize {
        self.counts.len()
    }

    /// Mass of the white ball: `θ + rα`.
    pub fn white_mass(&self, p: &Params<f64>) -> f64 {
        p.theta() + self.counts.len() as f64 * p.alpha()
    }

    /// One draw: existing colour `j` with probability `(ω_j − α)/(θ+w)`,
    /// a new colour with probability `(θ + rα)/(θ+w)`.
    pub fn step<R: Rng + ?Sized>(&mut self, p: &Params<f64>, rng: &mut R) {
        if self.total == 0 {
            self.counts.push(1);
            self.total = 1;
            return;
        }
        let alpha = *p.alpha();
        let total_mass = p.theta() + self.total as f64;
        let mut u = rng.random::<f64>() * total_mass;
        for c in self.counts.iter_mut() {
            let w = *c as f64 - alpha;
            if u < w {
                *c += 1;
                self.total += 1;
                return;
            }
            u -= w;
        }
        self.counts.push(1);
        self.total += 1;
    }

    pub fn to_partition(&self) -> Partition {
        Partition::from_unsorted(self.counts.iter().copied())
    }
}

/// Runs the urn from configuration `ω` for `m` draws and returns the
/// combined configuration.
pub fn polya_urn_extend<R: Rng + ?Sized>(
    omega: &Partition,
    m: usize,
    p: &Params<f64>,
    rng: &mut R,
) -> Partition {
    let mut urn = UrnState::from_configuration(omega);
    for _ in 0..m {
        urn.step(p, rng);
    }
    urn.to_partition()
}

/// Probability that the urn started from `ω` reaches `η` after `|η|−|ω|`
/// draws: `H(ω|η) · E[P⃗_η] / E[P⃗_ω]`. Zero when `ω ⊄ η` (including
/// `|ω| > |η|` by the stated convention).
pub fn conditional_partition_prob<T: Scalar>(
    eta: &Partition,
    omega: &Partition,
    p: &Params<T>,
) -> Result<T> {
    if omega.is_empty() {
        return Err(Error::EmptyPartition);
    }
    if omega.size() > eta.size() || !eta.contains(omega) {
        return Ok(T::zero());
    }
    let h = T::from_big_rational(&hypergeom(omega, eta)?);
    Ok(h * ewens_pitman(eta, p)? / ewens_pitman(omega, p)?)
}

/// Samples the posterior frequency law given configuration `ω`
/// (`PD(α,θ;ω)`): `Z ~ Beta(w−rα, θ+rα)` splits the mass between a
/// Dirichlet(ω_1−α, …, ω_r−α) block and an independent `PD(α, θ+rα)` tail;
/// the atom sets accumulate.
pub fn sample_pd_conditional<R: Rng + ?Sized>(
    omega: &Partition,
    p: &Params<f64>,
    rng: &mut R,
) -> Result<LazyFrequencies> {
    if omega.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let w = omega.size() as f64;
    let r = omega.len() as f64;
    let alpha = *p.alpha();
    let theta = *p.theta();
    let z = sample_beta(w - r * alpha, theta + r * alpha, rng);
    let shapes: Vec<f64> = omega.parts().iter().map(|&c| c as f64 - alpha).collect();
    let block: Vec<f64> = sample_dirichlet(&shapes, rng)
        .into_iter()
        .map(|d| z * d)
        .collect();
    Ok(LazyFrequencies::with_prefix(
        block,
        1.0 - z,
        alpha,
        theta + r * alpha,
    ))
}

/// Radon-Nikodym weight of `PD(α,θ;ω)` against `PD(α,θ)` at `y`:
/// `P⃗_ω(y) / E[P⃗_ω]`.
pub fn rn_weight(omega: &Partition, y: &Frequencies, p: &Params<f64>) -> Result<f64> {
    if omega.is_empty() {
        return Err(Error::EmptyPartition);
    }
    Ok(eval_sampling_prob(omega, y) / ewens_pitman(omega, p)?)
}

/// One draw of the split-urn coupling.
#[derive(Clone, Debug)]
pub struct SplitUrnDraw {
    /// The random number of ancestor draws `D_t`.
    pub block_count: usize,
    /// Shared ancestor configuration `U_{D_t}`.
    pub ancestor: Partition,
    /// The two independent continuations to size `n`; `None` when
    /// `D_t > n`, where the joint law puts no mass by convention.
    pub pair: Option<(Partition, Partition)>,
}

/// Split-urn sampler at a fixed time `t`: draws `D_t` from the
/// entrance-from-infinity block-count law, runs one urn from empty for
/// `D_t` draws, then two independent continuations to size `n`.
pub struct SplitUrnSampler {
    n: usize,
    params: Params<f64>,
    table: DeathProbTable,
}

impl SplitUrnSampler {
    pub fn new(n: usize, t: f64, p: &Params<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("n must be at least 1".into()));
        }
        let table = DeathProbTable::from_infinity(*p.theta(), t)?;
        Ok(SplitUrnSampler {
            n,
            params: p.clone(),
            table,
        })
    }

    pub fn table(&self) -> &DeathProbTable {
        &self.table
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SplitUrnDraw {
        let d = self.table.sample_block_count(rng);
        let mut shared = UrnState::empty();
        for _ in 0..d {
            shared.step(&self.params, rng);
        }
        let ancestor = shared.to_partition();
        if d > self.n {
            return SplitUrnDraw {
                block_count: d,
                ancestor,
                pair: None,
            };
        }
        let mut left = shared.clone();
        let mut right = shared;
        for _ in 0..(self.n - d) {
            left.step(&self.params, rng);
        }
        for _ in 0..(self.n - d) {
            right.step(&self.params, rng);
        }
        SplitUrnDraw {
            block_count: d,
            ancestor,
            pair: Some((left.to_partition(), right.to_partition())),
        }
    }
}

/// One-shot split-urn draw; builds the block-count table every call, so
/// repeated sampling should go through [`SplitUrnSampler`].
pub fn split_urn<R: Rng + ?Sized>(
    n: usize,
    t: f64,
    p: &Params<f64>,
    rng: &mut R,
) -> Result<SplitUrnDraw> {
    Ok(SplitUrnSampler::new(n, t, p)?.sample(rng))
}
