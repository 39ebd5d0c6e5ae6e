//! The Ewens-Pitman partition structure and the symmetric functions it
//! integrates: `M_n(η)`, `E[P̃_η]`, pointwise evaluation of the augmented
//! monomials `P̃_η` and sampling probabilities `P⃗_η` on the closed simplex,
//! the consistency condition, and the up / up-down kernels.

use crate::error::{Error, Result};
use crate::partitions::{
    down_step_distribution, enumerate_partitions, factorial, multinomial, Partition,
};
use crate::scalar::{rising, Scalar};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

/// The pair (α, θ) with α ∈ [0,1) and θ > −α.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T: Scalar> {
    alpha: T,
    theta: T,
}

impl<T: Scalar> Params<T> {
    pub fn new(alpha: T, theta: T) -> Result<Self> {
        if !(alpha >= T::zero()) || !(alpha < T::one()) {
            return Err(Error::InvalidParams(format!(
                "alpha must lie in [0,1), got {alpha:?}"
            )));
        }
        if !(theta.clone() + alpha.clone() > T::zero()) {
            return Err(Error::InvalidParams(format!(
                "theta must exceed -alpha, got theta {theta:?}, alpha {alpha:?}"
            )));
        }
        Ok(Params { alpha, theta })
    }

    pub fn alpha(&self) -> &T {
        &self.alpha
    }

    pub fn theta(&self) -> &T {
        &self.theta
    }
}

impl Params<f64> {
    /// Validates finiteness on top of the range checks.
    pub fn new_f64(alpha: f64, theta: f64) -> Result<Self> {
        if !alpha.is_finite() || !theta.is_finite() {
            return Err(Error::InvalidParams("parameters must be finite".into()));
        }
        Params::new(alpha, theta)
    }
}

impl Params<BigRational> {
    pub fn to_f64(&self) -> Params<f64> {
        Params {
            alpha: self.alpha.to_f64_lossy(),
            theta: self.theta.to_f64_lossy(),
        }
    }
}

/// A point of the closed infinite ordered simplex: a finite descending list
/// of atoms plus the residual (dust) mass `1 − Σ atoms`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Frequencies {
    atoms: Vec<f64>,
    residual: f64,
}

const RESIDUAL_TOL: f64 = 1e-12;

impl Frequencies {
    /// Builds from atoms already sorted in non-increasing order.
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidFrequencies(
                "atoms must be finite and non-negative".into(),
            ));
        }
        if atoms.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidFrequencies(
                "atoms must be non-increasing".into(),
            ));
        }
        let sum: f64 = atoms.iter().sum();
        if sum > 1.0 + RESIDUAL_TOL {
            return Err(Error::InvalidFrequencies(format!(
                "atom mass {sum} exceeds 1"
            )));
        }
        let atoms: Vec<f64> = atoms.into_iter().filter(|&a| a > 0.0).collect();
        Ok(Frequencies {
            atoms,
            residual: (1.0 - sum).clamp(0.0, 1.0),
        })
    }

    /// Builds from atoms in any order.
    pub fn from_unsorted(mut atoms: Vec<f64>) -> Result<Self> {
        atoms.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        Frequencies::new(atoms)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn is_full_mass(&self) -> bool {
        self.residual <= RESIDUAL_TOL
    }
}

impl<'de> Deserialize<'de> for Frequencies {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            atoms: Vec<f64>,
            #[allow(dead_code)]
            #[serde(default)]
            residual: f64,
        }
        let raw = Raw::deserialize(d)?;
        Frequencies::new(raw.atoms).map_err(serde::de::Error::custom)
    }
}

/// Expands `P̃_η` over the singleton-free basis by eliminating all parts
/// equal to 1 with `P̃_η = P̃_{η−e_i} − Σ_{j≠i} P̃_{η−e_i+e_j}`. Coefficients
/// are exact integers; the empty partition stands for the constant 1.
///
/// Results are memoized process-wide behind a mutex (the expansion of a
/// partition is a pure function of the partition).
pub fn singleton_free_expansion(eta: &Partition) -> Arc<BTreeMap<Partition, BigInt>> {
    static CACHE: OnceLock<Mutex<HashMap<Partition, Arc<BTreeMap<Partition, BigInt>>>>> =
        OnceLock::new();
    const CACHE_BOUND: usize = 1 << 16;

    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(eta) {
        return hit.clone();
    }

    let result: BTreeMap<Partition, BigInt> = if eta.multiplicity(1) == 0 {
        BTreeMap::from([(eta.clone(), BigInt::one())])
    } else {
        // Remove one singleton; the remaining indices are exactly μ's parts.
        let mu = eta.remove_ball(1).expect("has a singleton");
        let mut acc: BTreeMap<Partition, BigInt> = BTreeMap::new();
        let mut add = |map: &Arc<BTreeMap<Partition, BigInt>>, weight: BigInt| {
            for (key, coeff) in map.iter() {
                let entry = acc.entry(key.clone()).or_insert_with(BigInt::zero);
                *entry += coeff * &weight;
            }
        };
        add(&singleton_free_expansion(&mu), BigInt::one());
        for (v, mult) in mu.distinct_parts() {
            let bumped = mu.add_ball(v).expect("part exists");
            add(&singleton_free_expansion(&bumped), -BigInt::from(mult));
        }
        acc.retain(|_, c| !c.is_zero());
        acc
    };

    let arc = Arc::new(result);
    let mut guard = cache.lock().unwrap();
    if guard.len() >= CACHE_BOUND {
        guard.clear();
    }
    guard.insert(eta.clone(), arc.clone());
    arc
}

/// Power sums `Σ_i x_i^k` of a fixed atom list, with a memo for augmented
/// monomial values derived from them. One table per evaluation point.
pub struct PowerSumTable {
    ps: Vec<f64>,
    memo: RefCell<HashMap<Partition, f64>>,
}

impl PowerSumTable {
    pub fn new(x: &Frequencies, max_power: usize) -> Self {
        Self::from_atoms(x.atoms(), max_power)
    }

    pub fn from_atoms(atoms: &[f64], max_power: usize) -> Self {
        let mut ps = vec![0.0; max_power + 1];
        ps[0] = atoms.len() as f64;
        for &a in atoms {
            let mut acc = a;
            for slot in ps.iter_mut().skip(1) {
                *slot += acc;
                acc *= a;
            }
        }
        PowerSumTable {
            ps,
            memo: RefCell::new(HashMap::new()),
        }
    }

    pub fn power_sum(&self, k: usize) -> f64 {
        self.ps[k]
    }

    /// Augmented monomial `Σ_{i_1 ≠ … ≠ i_d} ∏ x_{i_j}^{λ_j}` over the atoms,
    /// by the collision recursion
    /// `P̃_{λ ∪ {v}} = P̃_λ p_v − Σ_j P̃_{λ with λ_j → λ_j+v}`.
    ///
    /// For `λ` with all parts ≥ 2 this is the continuous extension of `P̃_λ`
    /// at the point the table was built from (dust contributes nothing to
    /// exponents ≥ 2); with parts equal to 1 it is the literal atom sum.
    pub fn augmented_monomial(&self, lambda: &Partition) -> f64 {
        if lambda.is_empty() {
            return 1.0;
        }
        if let Some(&v) = self.memo.borrow().get(lambda) {
            return v;
        }
        let parts = lambda.parts();
        let last = parts[parts.len() - 1];
        let rest = Partition::new(parts[..parts.len() - 1].to_vec()).expect("descending prefix");
        let mut value = self.augmented_monomial(&rest) * self.ps[last];
        for (v, mult) in rest.distinct_parts() {
            // Collision with an index of value v: the whole part merges to v+last.
            let mut merged_parts: Vec<usize> = Vec::with_capacity(rest.len());
            let mut removed = false;
            for &q in rest.parts() {
                if !removed && q == v {
                    removed = true;
                    continue;
                }
                merged_parts.push(q);
            }
            merged_parts.push(v + last);
            let merged = Partition::from_unsorted(merged_parts);
            value -= mult as f64 * self.augmented_monomial(&merged);
        }
        self.memo.borrow_mut().insert(lambda.clone(), value);
        value
    }
}

/// Reusable evaluator of the continuous extension of `P̃_η`: the singleton
/// elimination is performed once, evaluation is a dot product against
/// singleton-free augmented monomials.
pub struct AugmentedMonomialEvaluator {
    eta: Partition,
    terms: Vec<(Partition, f64)>,
    expansion: Arc<BTreeMap<Partition, BigInt>>,
    max_power: usize,
}

impl AugmentedMonomialEvaluator {
    pub fn new(eta: &Partition) -> Self {
        let expansion = singleton_free_expansion(eta);
        let terms: Vec<(Partition, f64)> = expansion
            .iter()
            .map(|(l, c)| (l.clone(), c.to_f64_lossy_int()))
            .collect();
        // The collision recursion can merge every part of a term into one
        // exponent, so power sums must extend to the full term size.
        let max_power = terms.iter().map(|(l, _)| l.size()).max().unwrap_or(1).max(1);
        AugmentedMonomialEvaluator {
            eta: eta.clone(),
            terms,
            expansion,
            max_power,
        }
    }

    pub fn eta(&self) -> &Partition {
        &self.eta
    }

    /// The exact integer expansion over the singleton-free basis.
    pub fn expansion(&self) -> &BTreeMap<Partition, BigInt> {
        &self.expansion
    }

    /// Largest exponent appearing after elimination.
    pub fn max_power(&self) -> usize {
        self.max_power
    }

    pub fn eval(&self, x: &Frequencies) -> f64 {
        self.eval_with(&PowerSumTable::new(x, self.max_power))
    }

    pub fn eval_with(&self, table: &PowerSumTable) -> f64 {
        self.terms
            .iter()
            .map(|(l, c)| c * table.augmented_monomial(l))
            .sum()
    }
}

trait BigIntToF64 {
    fn to_f64_lossy_int(&self) -> f64;
}

impl BigIntToF64 for BigInt {
    fn to_f64_lossy_int(&self) -> f64 {
        use num_traits::ToPrimitive;
        self.to_f64().unwrap_or(f64::NAN)
    }
}

/// Continuous extension of the augmented monomial `P̃_η` at `x`.
pub fn eval_augmented_monomial(eta: &Partition, x: &Frequencies) -> f64 {
    AugmentedMonomialEvaluator::new(eta).eval(x)
}

/// Combinatorial prefactor `binom(n;η) / ∏_k a_k(η)!` relating `P̃_η` to the
/// sampling probability `P⃗_η`.
pub fn sampling_prefactor(eta: &Partition) -> BigRational {
    let mut denom = BigInt::one();
    for (_, a) in eta.distinct_parts() {
        denom *= BigInt::from(factorial(a));
    }
    BigRational::new(BigInt::from(multinomial(eta)), denom)
}

/// Sampling probability `P⃗_η(x) = binom(n;η)/∏a_k! · P̃_η(x)`.
pub fn eval_sampling_prob(eta: &Partition, x: &Frequencies) -> f64 {
    sampling_prefactor(eta).to_f64_lossy() * eval_augmented_monomial(eta, x)
}

/// Mean of the augmented monomial under the stationary law:
/// `E[P̃_η] = ∏_{l=0}^{d−1}(θ+lα) ∏_i (1−α)_(η_i−1) / (θ)_(n)`.
///
/// The leading `θ` of both products is cancelled before evaluation so that
/// θ = 0 (legal when α > 0) and θ ∈ (−α, 0) evaluate cleanly; the result is
/// strictly positive for every valid parameter pair. `E[P̃_∅] = 1`.
pub fn mean_augmented_monomial<T: Scalar>(eta: &Partition, p: &Params<T>) -> T {
    if eta.is_empty() {
        return T::one();
    }
    let mut num = T::one();
    for l in 1..eta.len() {
        num = num * (p.theta.clone() + T::from_integer(l as i64) * p.alpha.clone());
    }
    for &part in eta.parts() {
        num = num * rising(&(T::one() - p.alpha.clone()), part - 1);
    }
    let den = rising(&(p.theta.clone() + T::one()), eta.size() - 1);
    num / den
}

/// The Ewens-Pitman sampling formula `M_n(η)`, exact when `T` is rational.
pub fn ewens_pitman<T: Scalar>(eta: &Partition, p: &Params<T>) -> Result<T> {
    if eta.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let prefactor = T::from_big_rational(&sampling_prefactor(eta));
    Ok(prefactor * mean_augmented_monomial(eta, p))
}

/// Outcome of the exact consistency check of the partition structure.
#[derive(Clone, Debug)]
pub struct ConsistencyReport {
    pub n: usize,
    pub relations: usize,
    pub max_abs_discrepancy: BigRational,
}

impl ConsistencyReport {
    pub fn is_exact(&self) -> bool {
        self.max_abs_discrepancy.is_zero()
    }
}

/// Verifies `M_{n−1}(ω) = Σ_{η ⊃ ω} p↓(η,ω) M_n(η)` for every `ω ∈ Γ_{n−1}`,
/// in exact rational arithmetic.
pub fn check_consistency(n: usize, p: &Params<BigRational>) -> Result<ConsistencyReport> {
    if n < 2 {
        return Err(Error::Domain("consistency check needs n ≥ 2".into()));
    }
    let mut max_abs = BigRational::zero();
    let mut relations = 0;
    for omega in enumerate_partitions(n - 1)? {
        let mut rhs = BigRational::zero();
        for eta in omega.up_neighbors() {
            let down = down_step_distribution(&eta)?;
            let p_down = down.get(&omega).cloned().unwrap_or_else(BigRational::zero);
            rhs += p_down * ewens_pitman(&eta, p)?;
        }
        let lhs = ewens_pitman(&omega, p)?;
        let disc = (lhs - rhs).abs();
        if disc > max_abs {
            max_abs = disc;
        }
        relations += 1;
    }
    Ok(ConsistencyReport {
        n,
        relations,
        max_abs_discrepancy: max_abs,
    })
}

/// One-step up-chain kernel `p↑(η,λ) = M_{n+1}(λ)/M_n(η) · p↓(λ,η)` over the
/// covers `λ ⊃ η`.
pub fn up_step_distribution<T: Scalar>(
    eta: &Partition,
    p: &Params<T>,
) -> Result<BTreeMap<Partition, T>> {
    if eta.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let m_eta = ewens_pitman(eta, p)?;
    if m_eta == T::zero() {
        return Err(Error::Domain(format!("M_n({eta}) vanished")));
    }
    let mut out = BTreeMap::new();
    for lambda in eta.up_neighbors() {
        let down = down_step_distribution(&lambda)?;
        let p_down = down.get(eta).cloned().unwrap_or_else(BigRational::zero);
        let mass =
            ewens_pitman(&lambda, p)? * T::from_big_rational(&p_down) / m_eta.clone();
        out.insert(lambda, mass);
    }
    Ok(out)
}

/// Up-down kernel `T(η,η̃) = Σ_{λ ⊃ η, λ ⊃ η̃} p↑(η,λ) p↓(λ,η̃)`.
pub fn updown_kernel<T: Scalar>(eta: &Partition, eta2: &Partition, p: &Params<T>) -> Result<T> {
    if eta.size() != eta2.size() {
        return Err(Error::SizeMismatch(eta.size(), eta2.size()));
    }
    let up = up_step_distribution(eta, p)?;
    let mut acc = T::zero();
    for (lambda, p_up) in up {
        let down = down_step_distribution(&lambda)?;
        if let Some(p_down) = down.get(eta2) {
            acc = acc + p_up * T::from_big_rational(p_down);
        }
    }
    Ok(acc)
}
