//! Exact integer-partition combinatorics on the Kingman branching diagram:
//! enumeration of `Γ_n`, multiplicities, branching weights `χ`, path counts
//! `dim(ω,η)`, the down-chain kernel, and hypergeometric subsampling
//! probabilities. Everything here is big-integer / big-rational arithmetic;
//! no floating point.

use crate::error::{Error, Result};
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

/// Default refusal threshold for `Γ_n` enumeration (p(80) ≈ 1.6e7).
pub const DEFAULT_ENUMERATION_CAP: usize = 80;

/// An integer partition: parts in non-increasing order, each ≥ 1.
///
/// The empty partition (n = 0) is legal and unique. The total size is cached
/// so `size()` is O(1) on the hot paths.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<usize>", try_from = "Vec<usize>")]
pub struct Partition {
    parts: Vec<usize>,
    n: usize,
}

impl Partition {
    /// Builds a partition from parts already in non-increasing order.
    pub fn new(parts: Vec<usize>) -> Result<Self> {
        if parts.iter().any(|&p| p == 0) {
            return Err(Error::InvalidPartition("zero part".into()));
        }
        if parts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidPartition(format!(
                "parts not non-increasing: {parts:?}"
            )));
        }
        let n = parts.iter().sum();
        Ok(Partition { parts, n })
    }

    /// Builds a partition from parts in any order; zeros are dropped.
    pub fn from_unsorted<I: IntoIterator<Item = usize>>(parts: I) -> Self {
        let mut parts: Vec<usize> = parts.into_iter().filter(|&p| p > 0).collect();
        parts.sort_unstable_by(|a, b| b.cmp(a));
        let n = parts.iter().sum();
        Partition { parts, n }
    }

    pub fn empty() -> Self {
        Partition {
            parts: Vec::new(),
            n: 0,
        }
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    /// Total size `|η|`.
    pub fn size(&self) -> usize {
        self.n
    }

    /// Number of parts `l(η)`.
    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// `η_i`, with parts beyond the length reading as 0.
    pub fn part(&self, i: usize) -> usize {
        self.parts.get(i).copied().unwrap_or(0)
    }

    /// Map part-size `k` to its count `a_k(η)`.
    pub fn multiplicities(&self) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for &p in &self.parts {
            *m.entry(p).or_insert(0) += 1;
        }
        m
    }

    /// `a_k(η)`: how many parts equal `k`.
    pub fn multiplicity(&self, k: usize) -> usize {
        self.parts.iter().filter(|&&p| p == k).count()
    }

    /// Componentwise containment `other ⊂ self` (missing parts read as 0).
    pub fn contains(&self, other: &Partition) -> bool {
        other
            .parts
            .iter()
            .enumerate()
            .all(|(i, &p)| p <= self.part(i))
    }

    /// Distinct part values, descending, with their multiplicities.
    pub fn distinct_parts(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for &p in &self.parts {
            match out.last_mut() {
                Some((v, c)) if *v == p => *c += 1,
                _ => out.push((p, 1)),
            }
        }
        out
    }

    /// The descending rearrangement of `η − e_i` where `η_i = v`.
    /// Removes one part of value `v` and re-inserts `v − 1` (dropped if 0).
    pub fn remove_ball(&self, v: usize) -> Result<Partition> {
        let pos = self
            .parts
            .iter()
            .position(|&p| p == v)
            .ok_or_else(|| Error::InvalidPartition(format!("no part of size {v} in {self}")))?;
        let mut parts = self.parts.clone();
        parts.remove(pos);
        if v > 1 {
            let at = parts.partition_point(|&p| p >= v - 1);
            parts.insert(at, v - 1);
        }
        let n = self.n - 1;
        Ok(Partition { parts, n })
    }

    /// The descending rearrangement of `η + e_i` where `η_i = v`,
    /// or an appended new part when `v = 0`.
    pub fn add_ball(&self, v: usize) -> Result<Partition> {
        let mut parts = self.parts.clone();
        if v > 0 {
            let pos = self
                .parts
                .iter()
                .position(|&p| p == v)
                .ok_or_else(|| Error::InvalidPartition(format!("no part of size {v} in {self}")))?;
            parts.remove(pos);
            let at = parts.partition_point(|&p| p >= v + 1);
            parts.insert(at, v + 1);
        } else {
            parts.push(1);
        }
        let n = self.n + 1;
        Ok(Partition { parts, n })
    }

    /// Partitions covered by `η`: all descending rearrangements of `η − e_i`,
    /// one per distinct part value, with that value and its multiplicity.
    pub fn down_neighbors(&self) -> Vec<(Partition, usize, usize)> {
        self.distinct_parts()
            .into_iter()
            .map(|(v, mult)| (self.remove_ball(v).expect("part exists"), v, mult))
            .collect()
    }

    /// Partitions covering `η`: one per distinct part value, plus a new
    /// singleton.
    pub fn up_neighbors(&self) -> Vec<Partition> {
        let mut out: Vec<Partition> = self
            .distinct_parts()
            .into_iter()
            .map(|(v, _)| self.add_ball(v).expect("part exists"))
            .collect();
        out.push(self.add_ball(0).expect("append"));
        out
    }
}

impl From<Partition> for Vec<usize> {
    fn from(p: Partition) -> Self {
        p.parts
    }
}

impl TryFrom<Vec<usize>> for Partition {
    type Error = Error;
    fn try_from(parts: Vec<usize>) -> Result<Self> {
        Partition::new(parts)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, p) in self.parts.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Debug for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Canonical order: by size first, then reverse-lexicographic within a size,
/// so that ascending iteration over `Γ_n` yields `(n), (n−1,1), …, (1,…,1)`.
impl Ord for Partition {
    fn cmp(&self, other: &Self) -> Ordering {
        self.n
            .cmp(&other.n)
            .then_with(|| other.parts.cmp(&self.parts))
    }
}

impl PartialOrd for Partition {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Enumerates `Γ_n` in canonical (reverse-lexicographic) order.
pub fn enumerate_partitions(n: usize) -> Result<Vec<Partition>> {
    enumerate_partitions_capped(n, DEFAULT_ENUMERATION_CAP)
}

/// Enumerates `Γ_n` with an explicit resource cap.
pub fn enumerate_partitions_capped(n: usize, cap: usize) -> Result<Vec<Partition>> {
    if n > cap {
        return Err(Error::EnumerationCap { n, cap });
    }
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    fn rec(remaining: usize, max_part: usize, prefix: &mut Vec<usize>, out: &mut Vec<Partition>) {
        if remaining == 0 {
            out.push(Partition {
                parts: prefix.clone(),
                n: prefix.iter().sum(),
            });
            return;
        }
        let hi = remaining.min(max_part);
        for k in (1..=hi).rev() {
            prefix.push(k);
            rec(remaining - k, k, prefix, out);
            prefix.pop();
        }
    }
    rec(n, n, &mut prefix, &mut out);
    Ok(out)
}

/// `is_subpartition(ω, η)`: true iff `ω_i ≤ η_i` componentwise.
pub fn is_subpartition(omega: &Partition, eta: &Partition) -> bool {
    eta.contains(omega)
}

pub fn factorial(n: usize) -> BigUint {
    let mut acc = BigUint::one();
    for k in 2..=n {
        acc *= BigUint::from(k);
    }
    acc
}

pub fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let mut acc = BigUint::one();
    for i in 0..k.min(n - k) {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// The multinomial coefficient `binom(n; η) = n! / (η_1! … η_d!)`.
pub fn multinomial(eta: &Partition) -> BigUint {
    let mut acc = factorial(eta.size());
    for &p in eta.parts() {
        acc /= factorial(p);
    }
    acc
}

/// `dim(η) = binom(n; η)`, the number of weighted paths from ∅ to `η`.
pub fn dim_partition(eta: &Partition) -> BigUint {
    multinomial(eta)
}

/// Branching-diagram edge weight: `χ(ω,η) = a_{η_i}(η)` when `η` is the
/// descending rearrangement of `ω + e_i`, and 0 when `(ω,η)` is not a
/// covering pair. Comparison is on multisets, so inputs need no alignment.
pub fn chi(omega: &Partition, eta: &Partition) -> usize {
    if omega.size() + 1 != eta.size() {
        return 0;
    }
    // Multiset difference η − ω must be {v: +1} with {v−1: −1} when v ≥ 2.
    let mut diff: BTreeMap<usize, i64> = BTreeMap::new();
    for &p in eta.parts() {
        *diff.entry(p).or_insert(0) += 1;
    }
    for &p in omega.parts() {
        *diff.entry(p).or_insert(0) -= 1;
    }
    diff.retain(|_, c| *c != 0);
    let added: Vec<(usize, i64)> = diff.into_iter().collect();
    match added.as_slice() {
        [(1, 1)] => eta.multiplicity(1),
        [(lo, -1), (hi, 1)] if *hi == lo + 1 => eta.multiplicity(*hi),
        _ => 0,
    }
}

/// Total path weight `dim(ω,η)`: sum over increasing paths `ω ⊂ … ⊂ η` of the
/// product of edge weights. Memoized recursion over the covers of `η`;
/// `dim(ω,ω) = 1`, `dim(∅,η) = dim(η)`, and 0 when `ω ⊄ η`.
pub fn dim_between(omega: &Partition, eta: &Partition) -> BigUint {
    // The memo is per invocation, keyed by the upper partition only (ω is
    // fixed for the whole recursion), which keeps the function trivially
    // thread-safe.
    fn rec(omega: &Partition, eta: &Partition, memo: &mut HashMap<Partition, BigUint>) -> BigUint {
        if !eta.contains(omega) {
            return BigUint::zero();
        }
        if eta.size() == omega.size() {
            return BigUint::one();
        }
        if let Some(v) = memo.get(eta) {
            return v.clone();
        }
        let mut acc = BigUint::zero();
        for (lambda, v, mult) in eta.down_neighbors() {
            // χ(λ,η) = a_v(η), the multiplicity of the incremented part in η.
            let _ = v;
            acc += rec(omega, &lambda, memo) * BigUint::from(mult);
        }
        memo.insert(eta.clone(), acc.clone());
        acc
    }
    let mut memo = HashMap::new();
    rec(omega, eta, &mut memo)
}

/// Hypergeometric subsampling probability
/// `H(ω|η) = binom(|ω|;ω) · dim(ω,η) / binom(|η|;η)`:
/// the chance that a uniform without-replacement sample of `|ω|` balls from a
/// colour configuration `η` has configuration `ω`.
pub fn hypergeom(omega: &Partition, eta: &Partition) -> Result<BigRational> {
    if omega.size() > eta.size() {
        return Err(Error::SizeMismatch(omega.size(), eta.size()));
    }
    if !eta.contains(omega) {
        return Ok(BigRational::zero());
    }
    let num = BigInt::from(multinomial(omega) * dim_between(omega, eta));
    let den = BigInt::from(multinomial(eta));
    Ok(BigRational::new(num, den))
}

/// `H(ω|η)` by the direct falling-factorial sum: over index subsets
/// `i_1 < … < i_k` of `η`'s parts and distinct arrangements `v` of `ω`'s
/// parts, `binom(m;ω)/|η|_[m] · Σ ∏ (η_{i_j})_[v_j]`. Must agree exactly with
/// [`hypergeom`].
pub fn hypergeom_falling_factorial(omega: &Partition, eta: &Partition) -> Result<BigRational> {
    if omega.size() > eta.size() {
        return Err(Error::SizeMismatch(omega.size(), eta.size()));
    }
    let m = omega.size();
    if m == 0 {
        return Ok(BigRational::one());
    }
    let k = omega.len();
    let d = eta.len();
    if k > d {
        return Ok(BigRational::zero());
    }

    fn falling_int(a: usize, k: usize) -> BigUint {
        if k > a {
            return BigUint::zero();
        }
        let mut acc = BigUint::one();
        for i in 0..k {
            acc *= BigUint::from(a - i);
        }
        acc
    }

    // Distinct arrangements of ω's parts over k chosen slots.
    fn arrangements(parts: &[usize]) -> Vec<Vec<usize>> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &p in parts {
            *counts.entry(p).or_insert(0) += 1;
        }
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(parts.len());
        fn rec(
            left: usize,
            counts: &mut BTreeMap<usize, usize>,
            cur: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if left == 0 {
                out.push(cur.clone());
                return;
            }
            let keys: Vec<usize> = counts
                .iter()
                .filter(|(_, &c)| c > 0)
                .map(|(&v, _)| v)
                .collect();
            for v in keys {
                *counts.get_mut(&v).unwrap() -= 1;
                cur.push(v);
                rec(left - 1, counts, cur, out);
                cur.pop();
                *counts.get_mut(&v).unwrap() += 1;
            }
        }
        rec(parts.len(), &mut counts, &mut cur, &mut out);
        out
    }

    let arrs = arrangements(omega.parts());
    let mut total = BigUint::zero();
    let mut subset = vec![0usize; k];
    fn subsets(
        start: usize,
        depth: usize,
        k: usize,
        d: usize,
        subset: &mut Vec<usize>,
        eta: &Partition,
        arrs: &[Vec<usize>],
        total: &mut BigUint,
        falling_int: &dyn Fn(usize, usize) -> BigUint,
    ) {
        if depth == k {
            for arr in arrs {
                let mut prod = BigUint::one();
                for (j, &idx) in subset.iter().enumerate() {
                    prod *= falling_int(eta.part(idx), arr[j]);
                    if prod.is_zero() {
                        break;
                    }
                }
                *total += prod;
            }
            return;
        }
        for i in start..=(d - (k - depth)) {
            subset[depth] = i;
            subsets(i + 1, depth + 1, k, d, subset, eta, arrs, total, falling_int);
        }
    }
    subsets(
        0,
        0,
        k,
        d,
        &mut subset,
        eta,
        &arrs,
        &mut total,
        &|a, k| falling_int(a, k),
    );

    let prefactor = BigRational::new(
        BigInt::from(multinomial(omega)),
        BigInt::from(falling_int(eta.size(), m)),
    );
    Ok(prefactor * BigRational::from_integer(BigInt::from(total)))
}

/// One-step down-chain kernel: mass `a_{η_i}(η) · η_i / |η|` on each
/// descending rearrangement of `η − e_i`.
pub fn down_step_distribution(eta: &Partition) -> Result<BTreeMap<Partition, BigRational>> {
    if eta.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let n = BigInt::from(eta.size());
    let mut out = BTreeMap::new();
    for (target, v, mult) in eta.down_neighbors() {
        let mass = BigRational::new(BigInt::from(mult * v), n.clone());
        out.insert(target, mass);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;

    fn pt(parts: &[usize]) -> Partition {
        Partition::new(parts.to_vec()).unwrap()
    }

    /// Independent oracle: p(n) by the classic two-variable recurrence
    /// p(n, k) = partitions of n with parts ≤ k.
    fn partition_count_oracle(n: usize) -> u64 {
        let mut table = vec![vec![0u64; n + 1]; n + 1];
        for k in 0..=n {
            table[0][k] = 1;
        }
        for m in 1..=n {
            for k in 1..=n {
                table[m][k] = table[m][k - 1] + if m >= k { table[m - k][k] } else { 0 };
            }
        }
        table[n][n]
    }

    #[test]
    fn enumeration_matches_spec_examples() {
        let g0 = enumerate_partitions(0).unwrap();
        assert_eq!(g0, vec![Partition::empty()]);

        let g4 = enumerate_partitions(4).unwrap();
        let expected: Vec<Partition> = vec![
            pt(&[4]),
            pt(&[3, 1]),
            pt(&[2, 2]),
            pt(&[2, 1, 1]),
            pt(&[1, 1, 1, 1]),
        ];
        assert_eq!(g4, expected);

        assert_eq!(enumerate_partitions(10).unwrap().len(), 42);
    }

    #[test]
    fn enumeration_counts_match_recurrence() {
        for n in 0..=25 {
            let got = enumerate_partitions(n).unwrap().len() as u64;
            assert_eq!(got, partition_count_oracle(n), "p({n})");
        }
    }

    #[test]
    fn enumeration_order_is_canonical_and_capped() {
        let g6 = enumerate_partitions(6).unwrap();
        let mut sorted = g6.clone();
        sorted.sort();
        assert_eq!(g6, sorted);
        assert!(matches!(
            enumerate_partitions_capped(10, 5),
            Err(Error::EnumerationCap { n: 10, cap: 5 })
        ));
    }

    #[test]
    fn brute_force_enumeration_of_compositions_agrees() {
        // Dedup of all compositions of 4 — the stated oracle for the n = 4 case.
        let mut seen = std::collections::BTreeSet::new();
        for mask in 0u32..(1 << 3) {
            let mut comp = Vec::new();
            let mut run = 1;
            for bit in 0..3 {
                if mask & (1 << bit) != 0 {
                    comp.push(run);
                    run = 1;
                } else {
                    run += 1;
                }
            }
            comp.push(run);
            seen.insert(Partition::from_unsorted(comp));
        }
        let enumerated: std::collections::BTreeSet<Partition> =
            enumerate_partitions(4).unwrap().into_iter().collect();
        assert_eq!(seen, enumerated);
    }

    #[test]
    fn multiplicities_examples() {
        let m = pt(&[4, 2, 1]).multiplicities();
        assert_eq!(m, BTreeMap::from([(4, 1), (2, 1), (1, 1)]));
        assert_eq!(pt(&[1, 1, 1]).multiplicities(), BTreeMap::from([(1, 3)]));
        assert_eq!(pt(&[2, 2]).multiplicities(), BTreeMap::from([(2, 2)]));
        let eta = pt(&[4, 2, 1]);
        assert_eq!(eta.multiplicities().values().sum::<usize>(), eta.len());
        assert_eq!(
            eta.multiplicities()
                .iter()
                .map(|(k, a)| k * a)
                .sum::<usize>(),
            eta.size()
        );
    }

    #[test]
    fn subpartition_examples() {
        assert!(is_subpartition(&pt(&[2]), &pt(&[2, 1])));
        assert!(!is_subpartition(&pt(&[3]), &pt(&[2, 1])));
        assert!(is_subpartition(&pt(&[2, 1]), &pt(&[2, 1])));
        assert!(is_subpartition(&Partition::empty(), &pt(&[2, 1])));
    }

    #[test]
    fn dim_examples() {
        assert_eq!(dim_partition(&pt(&[2, 1])), BigUint::from(3u32));
        assert_eq!(dim_partition(&pt(&[7])), BigUint::from(1u32));
        assert_eq!(dim_partition(&pt(&[1, 1, 1, 1])), BigUint::from(24u32));
    }

    #[test]
    fn chi_examples() {
        assert_eq!(chi(&pt(&[2]), &pt(&[2, 1])), 1);
        assert_eq!(chi(&pt(&[1]), &pt(&[1, 1])), 2);
        assert_eq!(chi(&pt(&[2]), &pt(&[4])), 0);
        assert_eq!(chi(&pt(&[2]), &pt(&[3])), 1);
        assert_eq!(chi(&pt(&[2, 1]), &pt(&[2, 2])), 2);
    }

    #[test]
    fn dim_branching_recursion_holds() {
        for n in 1..=12 {
            for eta in enumerate_partitions(n).unwrap() {
                let mut acc = BigUint::zero();
                for (omega, _, mult) in eta.down_neighbors() {
                    assert_eq!(chi(&omega, &eta), mult);
                    acc += dim_partition(&omega) * BigUint::from(mult);
                }
                assert_eq!(acc, dim_partition(&eta), "η = {eta}");
            }
        }
    }

    /// Exhaustive path enumeration, exponential; test oracle only.
    fn dim_between_by_paths(omega: &Partition, eta: &Partition) -> BigUint {
        if !eta.contains(omega) {
            return BigUint::zero();
        }
        if eta.size() == omega.size() {
            return BigUint::one();
        }
        let mut acc = BigUint::zero();
        for (lambda, _, mult) in eta.down_neighbors() {
            acc += dim_between_by_paths(omega, &lambda) * BigUint::from(mult);
        }
        acc
    }

    #[test]
    fn dim_between_examples_and_oracle() {
        assert_eq!(dim_between(&pt(&[1]), &pt(&[2, 1])), BigUint::from(3u32));
        assert_eq!(dim_between(&pt(&[2, 1]), &pt(&[2, 1])), BigUint::one());
        assert_eq!(dim_between(&pt(&[2]), &pt(&[2, 1])), BigUint::one());
        assert_eq!(
            dim_between(&Partition::empty(), &pt(&[3, 2])),
            dim_partition(&pt(&[3, 2]))
        );
        for n in 1..=8 {
            for eta in enumerate_partitions(n).unwrap() {
                for w in 0..n {
                    for omega in enumerate_partitions(w).unwrap() {
                        assert_eq!(
                            dim_between(&omega, &eta),
                            dim_between_by_paths(&omega, &eta),
                            "ω = {omega}, η = {eta}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hypergeom_examples() {
        let h = hypergeom(&pt(&[2]), &pt(&[2, 1])).unwrap();
        assert_eq!(h, BigRational::new(BigInt::from(1), BigInt::from(3)));
        assert_eq!(
            hypergeom(&pt(&[1]), &pt(&[2, 1])).unwrap(),
            BigRational::one()
        );
        // Total probability over the m = 2 slice of (2,1).
        let total = hypergeom(&pt(&[2]), &pt(&[2, 1])).unwrap()
            + hypergeom(&pt(&[1, 1]), &pt(&[2, 1])).unwrap();
        assert_eq!(total, BigRational::one());
        assert!(hypergeom(&pt(&[3]), &pt(&[2])).is_err());
        assert_eq!(
            hypergeom(&pt(&[3]), &pt(&[2, 1])).unwrap(),
            BigRational::zero()
        );
    }

    #[test]
    fn hypergeom_two_routes_agree_and_sum_to_one() {
        for n in 1..=8 {
            for eta in enumerate_partitions(n).unwrap() {
                for m in 0..=n {
                    let mut total = BigRational::zero();
                    for omega in enumerate_partitions(m).unwrap() {
                        let a = hypergeom(&omega, &eta).unwrap();
                        let b = hypergeom_falling_factorial(&omega, &eta).unwrap();
                        assert_eq!(a, b, "ω = {omega}, η = {eta}");
                        total += a;
                    }
                    assert_eq!(total, BigRational::one(), "η = {eta}, m = {m}");
                }
            }
        }
    }

    /// Exhaustive without-replacement sampling over labelled balls.
    fn hypergeom_by_ball_enumeration(omega: &Partition, eta: &Partition) -> BigRational {
        let n = eta.size();
        let m = omega.size();
        let mut colours = Vec::new();
        for (i, &p) in eta.parts().iter().enumerate() {
            for _ in 0..p {
                colours.push(i);
            }
        }
        let mut hits = 0u64;
        let mut total = 0u64;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != m {
                continue;
            }
            total += 1;
            let mut counts = vec![0usize; eta.len()];
            for (b, &c) in colours.iter().enumerate() {
                if mask & (1 << b) != 0 {
                    counts[c] += 1;
                }
            }
            if &Partition::from_unsorted(counts) == omega {
                hits += 1;
            }
        }
        BigRational::new(BigInt::from(hits), BigInt::from(total))
    }

    #[test]
    fn hypergeom_matches_ball_enumeration() {
        for n in 1..=7 {
            for eta in enumerate_partitions(n).unwrap() {
                for m in 1..=n {
                    for omega in enumerate_partitions(m).unwrap() {
                        assert_eq!(
                            hypergeom(&omega, &eta).unwrap(),
                            hypergeom_by_ball_enumeration(&omega, &eta),
                            "ω = {omega}, η = {eta}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn down_step_examples() {
        let d = down_step_distribution(&pt(&[2, 1])).unwrap();
        assert_eq!(
            d.get(&pt(&[1, 1])).unwrap(),
            &BigRational::new(BigInt::from(2), BigInt::from(3))
        );
        assert_eq!(
            d.get(&pt(&[2])).unwrap(),
            &BigRational::new(BigInt::from(1), BigInt::from(3))
        );

        let d = down_step_distribution(&pt(&[5])).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.get(&pt(&[4])).unwrap(), &BigRational::one());

        let d = down_step_distribution(&pt(&[1, 1])).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.get(&pt(&[1])).unwrap(), &BigRational::one());

        assert!(down_step_distribution(&Partition::empty()).is_err());
    }

    #[test]
    fn down_chain_composition_reproduces_hypergeom() {
        for n in 1..=10 {
            for eta in enumerate_partitions(n).unwrap() {
                // Compose the one-step kernel n−m times and compare with H.
                let mut current: BTreeMap<Partition, BigRational> =
                    BTreeMap::from([(eta.clone(), BigRational::one())]);
                for m in (0..n).rev() {
                    let mut next: BTreeMap<Partition, BigRational> = BTreeMap::new();
                    for (state, mass) in &current {
                        for (target, step) in down_step_distribution(state).unwrap() {
                            *next.entry(target).or_insert_with(BigRational::zero) +=
                                mass.clone() * step;
                        }
                    }
                    current = next;
                    if n - m <= 3 || m == 0 || m == n / 2 {
                        for omega in enumerate_partitions(m).unwrap() {
                            let expect = hypergeom(&omega, &eta).unwrap();
                            let got = current.get(&omega).cloned().unwrap_or_else(BigRational::zero);
                            assert_eq!(got, expect, "ω = {omega}, η = {eta}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn serde_partition_round_trip() {
        let eta = pt(&[4, 2, 1]);
        let json = serde_json::to_string(&eta).unwrap();
        assert_eq!(json, "[4,2,1]");
        let back: Partition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, eta);
        assert!(serde_json::from_str::<Partition>("[1,2]").is_err());
        assert!(serde_json::from_str::<Partition>("[2,0]").is_err());
    }

    #[test]
    fn big_dims_stay_exact() {
        // dim((1^25)) = 25!, past u64.
        let eta = pt(&[1; 25]);
        let expect = factorial(25);
        assert_eq!(dim_partition(&eta), expect);
        assert!(expect.to_u64().is_none());
    }
}
