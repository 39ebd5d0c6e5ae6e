//! The diffusion's fixed-time transition law: reproducing kernels `p_n` and
//! `q_m`, truncated density evaluation in spectral and mixture forms, the
//! exact mixture sampler of the transition distribution, and the
//! Monte-Carlo-vs-exact verification harness.

use crate::dual_process::{death_prob_finite, death_rate, finite_absorb_prob, DeathProbTable};
use crate::error::{Error, Result};
use crate::partitions::{enumerate_partitions, hypergeom, Partition};
use crate::sampling::{
    ewens_pitman, mean_augmented_monomial, sampling_prefactor, AugmentedMonomialEvaluator,
    Frequencies, Params, PowerSumTable,
};
use crate::scalar::{rising, Scalar};
use crate::urns::{
    polya_urn_extend, sample_pd_conditional, stick_breaking_sampler, LazyFrequencies,
    SplitUrnSampler, UrnState, DEFAULT_P2_BIAS_TOL,
};
use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::BTreeMap;

/// Default |z| threshold for Monte-Carlo-vs-exact comparisons.
pub const DEFAULT_Z_THRESHOLD: f64 = 3.0;
/// Default p-value floor for goodness-of-fit comparisons.
pub const DEFAULT_P_FLOOR: f64 = 1e-3;
/// Largest kernel truncation order the density evaluators accept.
pub const MAX_KERNEL_ORDER: usize = 30;

/// Monte-Carlo-vs-exact comparison report.
#[derive(Clone, Debug, Serialize)]
pub struct MCReport {
    pub exact_value: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub trials: usize,
    pub z_score: f64,
    pub pass: bool,
}

impl MCReport {
    pub fn from_sums(exact: f64, sum: f64, sum_sq: f64, trials: usize, z_max: f64) -> Self {
        let n = trials as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        let se = (var / n).sqrt();
        let z = if se > 0.0 {
            (mean - exact) / se
        } else if mean == exact {
            0.0
        } else {
            f64::INFINITY
        };
        MCReport {
            exact_value: exact,
            estimate: mean,
            std_error: se,
            trials,
            z_score: z,
            pass: z.abs() <= z_max,
        }
    }
}

/// Two-sampler moment comparison (no closed-form side).
#[derive(Clone, Debug, Serialize)]
pub struct TwoSampleReport {
    pub lhs_mean: f64,
    pub lhs_std_error: f64,
    pub rhs_mean: f64,
    pub rhs_std_error: f64,
    pub trials: usize,
    pub z_score: f64,
    pub pass: bool,
}

/// χ² goodness-of-fit report.
#[derive(Clone, Debug, Serialize)]
pub struct GofReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub trials: usize,
    pub pass: bool,
}

pub fn chi2_p_value(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    1.0 - dist.cdf(statistic)
}

/// χ² against given cell probabilities, pooling cells whose expected count
/// falls below `min_expected` into one bucket.
fn chi_square_from_counts(
    observed: &[u64],
    probs: &[f64],
    trials: usize,
    min_expected: f64,
    p_floor: f64,
) -> GofReport {
    let n = trials as f64;
    let mut stat = 0.0;
    let mut pooled_obs = 0.0;
    let mut pooled_exp = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in observed.iter().zip(probs) {
        let e = n * p;
        if e < min_expected {
            pooled_obs += o as f64;
            pooled_exp += e;
        } else {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        cells += 1;
    }
    let dof = cells.saturating_sub(1);
    let p_value = chi2_p_value(stat, dof);
    GofReport {
        statistic: stat,
        dof,
        p_value,
        trials,
        pass: p_value > p_floor,
    }
}

/// Precomputed evaluation data for one level `Γ_n`.
struct PartitionLevel {
    evaluators: Vec<AugmentedMonomialEvaluator>,
    /// `binom(n;η)/∏ a_k!` per partition.
    prefactors: Vec<f64>,
    /// `M_n(η)` per partition.
    means: Vec<f64>,
    max_power: usize,
}

impl PartitionLevel {
    fn new(n: usize, p: &Params<f64>) -> Result<Self> {
        let etas = enumerate_partitions(n)?;
        let mut evaluators = Vec::with_capacity(etas.len());
        let mut prefactors = Vec::with_capacity(etas.len());
        let mut means = Vec::with_capacity(etas.len());
        let mut max_power = 1;
        for eta in &etas {
            let ev = AugmentedMonomialEvaluator::new(eta);
            max_power = max_power.max(ev.max_power());
            prefactors.push(sampling_prefactor(eta).to_f64_lossy());
            means.push(ewens_pitman(eta, p)?);
            evaluators.push(ev);
        }
        Ok(PartitionLevel {
            evaluators,
            prefactors,
            means,
            max_power,
        })
    }

    fn kernel(&self, px: &PowerSumTable, py: &PowerSumTable) -> f64 {
        let mut acc = 0.0;
        for ((ev, pref), m) in self
            .evaluators
            .iter()
            .zip(&self.prefactors)
            .zip(&self.means)
        {
            let vx = pref * ev.eval_with(px);
            let vy = pref * ev.eval_with(py);
            acc += vx * vy / m;
        }
        acc
    }

    fn min_mean(&self) -> f64 {
        self.means.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Kernel evaluation context: levels `Γ_2 … Γ_n` precomputed once per
/// parameter pair.
pub struct KernelContext {
    params: Params<f64>,
    levels: Vec<PartitionLevel>, // index 0 ↔ level 2
    max_power: usize,
}

impl KernelContext {
    pub fn new(params: &Params<f64>, max_order: usize) -> Result<Self> {
        if max_order > MAX_KERNEL_ORDER {
            return Err(Error::Domain(format!(
                "kernel order {max_order} exceeds the cap {MAX_KERNEL_ORDER}"
            )));
        }
        let mut levels = Vec::new();
        let mut max_power = 1;
        for n in 2..=max_order {
            let level = PartitionLevel::new(n, params)?;
            max_power = max_power.max(level.max_power);
            levels.push(level);
        }
        Ok(KernelContext {
            params: params.clone(),
            levels,
            max_power,
        })
    }

    pub fn max_order(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn power_sums(&self, x: &Frequencies) -> PowerSumTable {
        PowerSumTable::new(x, self.max_power)
    }

    /// `p_n(x,y) = Σ_{|η|=n} P⃗_η(x) P⃗_η(y) / E[P⃗_η]`, with `p_0 = p_1 = 1`.
    pub fn p_kernel(&self, n: usize, px: &PowerSumTable, py: &PowerSumTable) -> Result<f64> {
        match n {
            0 | 1 => Ok(1.0),
            _ => {
                let level = self.levels.get(n - 2).ok_or_else(|| {
                    Error::Domain(format!("kernel order {n} beyond context ({})", self.max_order()))
                })?;
                Ok(level.kernel(px, py))
            }
        }
    }

    /// `q_m(x,y) = (2m−1+θ)/m! Σ_{j=0}^m (−1)^{m−j} binom(m,j) (j+θ)_(m−1) p_j(x,y)`.
    pub fn q_kernel(&self, m: usize, px: &PowerSumTable, py: &PowerSumTable) -> Result<f64> {
        if m < 2 {
            return Err(Error::Domain("q_m is defined for m ≥ 2".into()));
        }
        let theta = *self.params.theta();
        let mut factorial = 1.0;
        for j in 2..=m {
            factorial *= j as f64;
        }
        let mut binom = 1.0; // binom(m, 0)
        let mut acc = 0.0;
        for j in 0..=m {
            if j > 0 {
                binom *= (m - j + 1) as f64 / j as f64;
            }
            let sign = if (m - j) % 2 == 0 { 1.0 } else { -1.0 };
            let poch = rising(&(j as f64 + theta), m - 1);
            acc += sign * binom * poch * self.p_kernel(j, px, py)?;
        }
        Ok((2.0 * m as f64 - 1.0 + theta) / factorial * acc)
    }

    fn min_mean_at(&self, n: usize) -> f64 {
        match n {
            0 | 1 => 1.0,
            _ => self.levels[n - 2].min_mean(),
        }
    }
}

/// One-shot kernel conveniences (the context amortizes enumeration when many
/// evaluations share parameters).
pub fn kernel_p_n(x: &Frequencies, y: &Frequencies, n: usize, p: &Params<f64>) -> Result<f64> {
    let ctx = KernelContext::new(p, n.max(1))?;
    Ok(ctx.p_kernel(n, &ctx.power_sums(x), &ctx.power_sums(y))?)
}

pub fn kernel_q_m(x: &Frequencies, y: &Frequencies, m: usize, p: &Params<f64>) -> Result<f64> {
    let ctx = KernelContext::new(p, m)?;
    Ok(ctx.q_kernel(m, &ctx.power_sums(x), &ctx.power_sums(y))?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityForm {
    Spectral,
    Mixture,
}

/// A truncated transition-density evaluation.
#[derive(Clone, Debug, Serialize)]
pub struct DensityEval {
    pub value: f64,
    pub truncation_order: usize,
    /// Crude engineering bound on the dropped tail: remaining block-count
    /// mass times `sup_{|η|=N+1} 1/E[P⃗_η]` (mixture) or `ρ_{M+1} |q_{M+1}|`
    /// (spectral). Loose; reported for diagnostics only.
    pub tail_estimate: f64,
    pub form: DensityForm,
}

/// Mixture form: `d̃₁(t) + Σ_{n=2}^{N} d_n(t) p_n(x,y)`.
pub fn density_mixture(
    x: &Frequencies,
    y: &Frequencies,
    t: f64,
    p: &Params<f64>,
    n_max: usize,
) -> Result<DensityEval> {
    if n_max < 2 {
        return Err(Error::Domain("n_max must be at least 2".into()));
    }
    let ctx = KernelContext::new(p, n_max + 1)?;
    let px = ctx.power_sums(x);
    let py = ctx.power_sums(y);
    let table = DeathProbTable::from_infinity(*p.theta(), t)?;
    let mut value = table.prob(1);
    let mut mass = table.prob(1);
    for n in 2..=n_max {
        let d = table.prob(n);
        mass += d;
        value += d * ctx.p_kernel(n, &px, &py)?;
    }
    let tail_mass = (1.0 - mass).max(0.0);
    let tail_estimate = tail_mass / ctx.min_mean_at(n_max + 1);
    Ok(DensityEval {
        value,
        truncation_order: n_max,
        tail_estimate,
        form: DensityForm::Mixture,
    })
}

/// Spectral form: `1 + Σ_{m=2}^{M} ρ_m(t) q_m(x,y)` with
/// `ρ_m(t) = exp(−m(m+θ−1)t/2)`.
pub fn density_spectral(
    x: &Frequencies,
    y: &Frequencies,
    t: f64,
    p: &Params<f64>,
    m_max: usize,
) -> Result<DensityEval> {
    if m_max < 2 {
        return Err(Error::Domain("m_max must be at least 2".into()));
    }
    if !(t > 0.0) {
        return Err(Error::Domain("t must be positive".into()));
    }
    let theta = *p.theta();
    let ctx = KernelContext::new(p, m_max + 1)?;
    let px = ctx.power_sums(x);
    let py = ctx.power_sums(y);
    let mut value = 1.0;
    for m in 2..=m_max {
        value += (-death_rate(m, theta) * t).exp() * ctx.q_kernel(m, &px, &py)?;
    }
    let tail_estimate =
        (-death_rate(m_max + 1, theta) * t).exp() * ctx.q_kernel(m_max + 1, &px, &py)?.abs();
    Ok(DensityEval {
        value,
        truncation_order: m_max,
        tail_estimate,
        form: DensityForm::Spectral,
    })
}

/// Sampler of the fixed-`t` transition law (the mixture construction):
/// draw the block count `w` from the entrance-from-infinity law; on `w = 1`
/// return a fresh stationary sample, otherwise sample `w` individuals from
/// `x`, project to a configuration `ω`, and sample the posterior frequency
/// law given `ω`. Draws landing in the dust of `x` each found a distinct
/// new colour.
pub struct TransitionSampler {
    params: Params<f64>,
    table: DeathProbTable,
    p2_bias_tol: f64,
}

impl TransitionSampler {
    pub fn new(p: &Params<f64>, t: f64) -> Result<Self> {
        let table = DeathProbTable::from_infinity(*p.theta(), t)?;
        Ok(TransitionSampler {
            params: p.clone(),
            table,
            p2_bias_tol: DEFAULT_P2_BIAS_TOL,
        })
    }

    /// Tolerance controlling how far the stick tail of each sample is
    /// realized (bound on the expected unrealized `Σ x²` contribution).
    pub fn with_bias_tol(mut self, tol: f64) -> Self {
        self.p2_bias_tol = tol;
        self
    }

    pub fn table(&self) -> &DeathProbTable {
        &self.table
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &Frequencies, rng: &mut R) -> Result<LazyFrequencies> {
        let w = self.table.sample_block_count(rng);
        let mut out = if w == 1 {
            stick_breaking_sampler(&self.params)
        } else {
            let atoms = x.atoms();
            let mut atom_counts = vec![0usize; atoms.len()];
            let mut dust_draws = 0usize;
            for _ in 0..w {
                let mut u = rng.random::<f64>();
                let mut hit = None;
                for (i, &a) in atoms.iter().enumerate() {
                    if u < a {
                        hit = Some(i);
                        break;
                    }
                    u -= a;
                }
                match hit {
                    Some(i) => atom_counts[i] += 1,
                    None => dust_draws += 1,
                }
            }
            let omega = Partition::from_unsorted(
                atom_counts
                    .into_iter()
                    .filter(|&c| c > 0)
                    .chain(std::iter::repeat(1).take(dust_draws)),
            );
            sample_pd_conditional(&omega, &self.params, rng)?
        };
        out.resolve_power_sums(self.p2_bias_tol, rng);
        Ok(out)
    }
}

/// One-shot transition draw; builds the block-count table every call.
pub fn sample_transition<R: Rng + ?Sized>(
    x: &Frequencies,
    t: f64,
    p: &Params<f64>,
    rng: &mut R,
) -> Result<Frequencies> {
    Ok(TransitionSampler::new(p, t)?.sample(x, rng)?.to_frequencies())
}

/// Exact right-hand side of the moment duality at time `t`:
/// `E[P̃_η] ( d̃_{n1}(t) + Σ_{w=2}^n d_{nw}(t) Σ_{|ω|=w, ω⊂η} H(ω|η) P̃_ω(x)/E[P̃_ω] )`.
pub fn duality_exact_rhs(
    eta: &Partition,
    x: &Frequencies,
    t: f64,
    p: &Params<f64>,
) -> Result<f64> {
    if eta.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let n = eta.size();
    let mut inner = finite_absorb_prob(n, *p.theta(), t)?;
    for w in 2..=n {
        let d = death_prob_finite(n, w, *p.theta(), t)?;
        let mut slice = 0.0;
        for omega in enumerate_partitions(w)? {
            if !eta.contains(&omega) {
                continue;
            }
            let h = hypergeom(&omega, eta)?.to_f64_lossy();
            if h == 0.0 {
                continue;
            }
            let val = AugmentedMonomialEvaluator::new(&omega).eval(x);
            slice += h * val / mean_augmented_monomial(&omega, p);
        }
        inner += d * slice;
    }
    Ok(mean_augmented_monomial(eta, p) * inner)
}

/// Monte Carlo check of the duality identity for a single `η`.
pub fn verify_duality<R: Rng + ?Sized>(
    eta: &Partition,
    x: &Frequencies,
    t: f64,
    p: &Params<f64>,
    trials: usize,
    rng: &mut R,
) -> Result<MCReport> {
    Ok(verify_duality_grid(std::slice::from_ref(eta), x, t, p, trials, rng)?.remove(0))
}

/// Duality check for several `η` sharing one set of transition draws. Each
/// report is a `trials`-sample z-test; the tests are correlated across `η`.
pub fn verify_duality_grid<R: Rng + ?Sized>(
    etas: &[Partition],
    x: &Frequencies,
    t: f64,
    p: &Params<f64>,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<MCReport>> {
    let sampler = TransitionSampler::new(p, t)?;
    let evaluators: Vec<AugmentedMonomialEvaluator> =
        etas.iter().map(AugmentedMonomialEvaluator::new).collect();
    let max_power = evaluators.iter().map(|e| e.max_power()).max().unwrap_or(1);
    let exact: Vec<f64> = etas
        .iter()
        .map(|eta| duality_exact_rhs(eta, x, t, p))
        .collect::<Result<_>>()?;
    let mut sums = vec![0.0f64; etas.len()];
    let mut sum_sqs = vec![0.0f64; etas.len()];
    for _ in 0..trials {
        let draw = sampler.sample(x, rng)?;
        let table = PowerSumTable::from_atoms(draw.realized_atoms(), max_power);
        for (i, ev) in evaluators.iter().enumerate() {
            let v = ev.eval_with(&table);
            sums[i] += v;
            sum_sqs[i] += v * v;
        }
    }
    Ok((0..etas.len())
        .map(|i| MCReport::from_sums(exact[i], sums[i], sum_sqs[i], trials, DEFAULT_Z_THRESHOLD))
        .collect())
}

/// Outcome of the empirical partition-measure check.
#[derive(Clone, Debug, Serialize)]
pub struct RepresentationReport {
    /// z-test of the mean of `φ₂ = Σ (η_i/n)²` against its exact finite-n
    /// mean `E∞ + (1−E∞)/n`.
    pub mc: MCReport,
    pub limit_mean: f64,
    pub finite_n_mean: f64,
    /// Signed gap between the empirical mean of φ₂ and the n→∞ limit.
    pub limit_gap: f64,
    pub mean_largest_part: f64,
}

/// Runs the urn from empty to size `n_max`, `reps` times, and compares the
/// mean of `φ₂` on the normalized configuration against the exact finite-n
/// value (a pair of distinct individuals falls in one class with probability
/// `(1−α)/(1+θ)`, so `E[φ₂] = E∞ + (1−E∞)/n`).
pub fn empirical_representation_check<R: Rng + ?Sized>(
    n_max: usize,
    p: &Params<f64>,
    reps: usize,
    rng: &mut R,
) -> Result<RepresentationReport> {
    if n_max == 0 || reps == 0 {
        return Err(Error::Domain("n_max and reps must be positive".into()));
    }
    let limit = (1.0 - p.alpha()) / (1.0 + p.theta());
    let finite_n = limit + (1.0 - limit) / n_max as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut largest_acc = 0.0;
    for _ in 0..reps {
        let mut urn = UrnState::empty();
        for _ in 0..n_max {
            urn.step(p, rng);
        }
        let eta = urn.to_partition();
        let n = n_max as f64;
        let phi2: f64 = eta
            .parts()
            .iter()
            .map(|&c| (c as f64 / n) * (c as f64 / n))
            .sum();
        sum += phi2;
        sum_sq += phi2 * phi2;
        largest_acc += eta.part(0) as f64 / n;
    }
    let mc = MCReport::from_sums(finite_n, sum, sum_sq, reps, DEFAULT_Z_THRESHOLD);
    Ok(RepresentationReport {
        limit_gap: mc.estimate - limit,
        mc,
        limit_mean: limit,
        finite_n_mean: finite_n,
        mean_largest_part: largest_acc / reps as f64,
    })
}

/// Per-cell statistic of a goodness-of-fit comparison.
#[derive(Clone, Debug, Serialize)]
pub struct CellStat {
    pub label: String,
    pub expected_probability: f64,
    pub observed: u64,
}

/// Result of the conditional-urn-law check.
#[derive(Clone, Debug, Serialize)]
pub struct UrnConditionalCheck {
    pub gof: GofReport,
    pub cells: Vec<CellStat>,
}

/// χ² of the empirical law of `polya_urn_extend(ω, m)` against the exact
/// conditional partition probabilities.
pub fn verify_urn_conditional<R: Rng + ?Sized>(
    omega: &Partition,
    m: usize,
    p: &Params<f64>,
    trials: usize,
    rng: &mut R,
) -> Result<UrnConditionalCheck> {
    use crate::urns::conditional_partition_prob;
    let n = omega.size() + m;
    let etas = enumerate_partitions(n)?;
    let probs: Vec<f64> = etas
        .iter()
        .map(|eta| conditional_partition_prob(eta, omega, p))
        .collect::<Result<_>>()?;
    let index: BTreeMap<Partition, usize> = etas
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, e)| (e, i))
        .collect();
    let mut observed = vec![0u64; etas.len()];
    for _ in 0..trials {
        let eta = polya_urn_extend(omega, m, p, rng);
        observed[index[&eta]] += 1;
    }
    let gof = chi_square_from_counts(&observed, &probs, trials, 10.0, DEFAULT_P_FLOOR);
    let cells = etas
        .iter()
        .zip(&probs)
        .zip(&observed)
        .map(|((eta, &p), &o)| CellStat {
            label: eta.to_string(),
            expected_probability: p,
            observed: o,
        })
        .collect();
    Ok(UrnConditionalCheck { gof, cells })
}

/// Result of the split-urn joint-law check.
#[derive(Clone, Debug, Serialize)]
pub struct SplitUrnCheck {
    pub gof: GofReport,
    /// Draws kept after conditioning on `D_t ≤ n`.
    pub conditioned_trials: usize,
    pub cells: Vec<CellStat>,
}

/// Compares the empirical joint law of the split urn, conditioned on
/// `D_t ≤ n`, against the exact mixture
/// `Σ_w d_w Σ_{|ω|=w} M_w(ω) P(η|ω) P(η′|ω)` via χ².
pub fn verify_split_urn<R: Rng + ?Sized>(
    n: usize,
    t: f64,
    p: &Params<f64>,
    trials: usize,
    rng: &mut R,
) -> Result<SplitUrnCheck> {
    use crate::urns::conditional_partition_prob;
    if n > 6 {
        return Err(Error::Domain(
            "the exact oracle enumerates Γ_n × Γ_n; n ≤ 6 required".into(),
        ));
    }
    let sampler = SplitUrnSampler::new(n, t, p)?;
    let etas = enumerate_partitions(n)?;
    let index: BTreeMap<Partition, usize> = etas
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, e)| (e, i))
        .collect();

    // Exact conditioned joint law.
    let mut joint = vec![vec![0.0f64; etas.len()]; etas.len()];
    let mut kept_mass = 0.0;
    for w in 1..=n {
        let dw = sampler.table().prob(w);
        if dw == 0.0 {
            continue;
        }
        kept_mass += dw;
        for omega in enumerate_partitions(w)? {
            let m_w = ewens_pitman(&omega, p)?;
            let conds: Vec<f64> = etas
                .iter()
                .map(|eta| conditional_partition_prob(eta, &omega, p))
                .collect::<Result<_>>()?;
            for (i, ci) in conds.iter().enumerate() {
                for (j, cj) in conds.iter().enumerate() {
                    joint[i][j] += dw * m_w * ci * cj;
                }
            }
        }
    }
    let mut probs = Vec::with_capacity(etas.len() * etas.len());
    for row in &joint {
        for &v in row {
            probs.push(v / kept_mass);
        }
    }

    let mut observed = vec![0u64; etas.len() * etas.len()];
    let mut kept = 0usize;
    for _ in 0..trials {
        let draw = sampler.sample(rng);
        if let Some((a, b)) = draw.pair {
            observed[index[&a] * etas.len() + index[&b]] += 1;
            kept += 1;
        }
    }
    let gof = chi_square_from_counts(&observed, &probs, kept, 10.0, DEFAULT_P_FLOOR);
    let mut cells = Vec::with_capacity(observed.len());
    for (i, ei) in etas.iter().enumerate() {
        for (j, ej) in etas.iter().enumerate() {
            cells.push(CellStat {
                label: format!("{ei}|{ej}"),
                expected_probability: probs[i * etas.len() + j],
                observed: observed[i * etas.len() + j],
            });
        }
    }
    Ok(SplitUrnCheck {
        gof,
        conditioned_trials: kept,
        cells,
    })
}

/// Compares `E_PD[rn_weight(ω,·) P̃_stat(·)]` against the direct posterior
/// moment `E_{PD(α,θ;ω)}[P̃_stat]`, each from `trials` Monte Carlo samples.
pub fn verify_rn_reweighting<R: Rng + ?Sized>(
    omega: &Partition,
    stat: &Partition,
    p: &Params<f64>,
    trials: usize,
    rng: &mut R,
) -> Result<TwoSampleReport> {
    use crate::urns::rn_weight;
    let ev_stat = AugmentedMonomialEvaluator::new(stat);
    let ev_omega = AugmentedMonomialEvaluator::new(omega);
    let max_power = ev_stat.max_power().max(ev_omega.max_power());
    let m_omega = ewens_pitman::<f64>(omega, p)?;
    let pref_omega = sampling_prefactor(omega).to_f64_lossy();
    let _ = rn_weight; // the closed form below is rn_weight inlined on power sums

    let (mut lhs_sum, mut lhs_sq) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let mut y = stick_breaking_sampler(p);
        y.resolve_power_sums(DEFAULT_P2_BIAS_TOL, rng);
        let table = PowerSumTable::from_atoms(y.realized_atoms(), max_power);
        let weight = pref_omega * ev_omega.eval_with(&table) / m_omega;
        let v = weight * ev_stat.eval_with(&table);
        lhs_sum += v;
        lhs_sq += v * v;
    }
    let (mut rhs_sum, mut rhs_sq) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let mut y = sample_pd_conditional(omega, p, rng)?;
        y.resolve_power_sums(DEFAULT_P2_BIAS_TOL, rng);
        let table = PowerSumTable::from_atoms(y.realized_atoms(), ev_stat.max_power());
        let v = ev_stat.eval_with(&table);
        rhs_sum += v;
        rhs_sq += v * v;
    }

    let nf = trials as f64;
    let lhs_mean = lhs_sum / nf;
    let rhs_mean = rhs_sum / nf;
    let lhs_se = (((lhs_sq / nf) - lhs_mean * lhs_mean).max(0.0) / nf).sqrt();
    let rhs_se = (((rhs_sq / nf) - rhs_mean * rhs_mean).max(0.0) / nf).sqrt();
    let denom = (lhs_se * lhs_se + rhs_se * rhs_se).sqrt();
    let z = if denom > 0.0 {
        (lhs_mean - rhs_mean) / denom
    } else {
        0.0
    };
    Ok(TwoSampleReport {
        lhs_mean,
        lhs_std_error: lhs_se,
        rhs_mean,
        rhs_std_error: rhs_se,
        trials,
        z_score: z,
        pass: z.abs() <= DEFAULT_Z_THRESHOLD,
    })
}
