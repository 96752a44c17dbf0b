//! Finite signed measures on group elements: convolution, norms, moments,
//! entropy, linear perturbation families, and a non-elementarity check for
//! probability measures.

use crate::error::{Error, Result};
use crate::geometry;
use crate::group::{GroupModel, Word};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

pub const MASS_TOL: f64 = 1e-9;
pub const DEFAULT_SUPPORT_CAP: usize = 5_000_000;

/// A finitely supported signed measure. Weights are kept in a BTreeMap so
/// every iteration (convolution, sampling, serialization) is deterministic.
#[derive(Debug, Clone)]
pub struct SignedMeasure {
    model: Arc<GroupModel>,
    weights: BTreeMap<Word, f64>,
}

impl PartialEq for SignedMeasure {
    fn eq(&self, other: &Self) -> bool {
        self.model.id() == other.model.id() && self.weights == other.weights
    }
}

impl SignedMeasure {
    pub fn zero(model: Arc<GroupModel>) -> SignedMeasure {
        SignedMeasure { model, weights: BTreeMap::new() }
    }

    pub fn from_entries(
        model: Arc<GroupModel>,
        entries: impl IntoIterator<Item = (Word, f64)>,
    ) -> Result<SignedMeasure> {
        let mut weights: BTreeMap<Word, f64> = BTreeMap::new();
        for (w, x) in entries {
            model.check_owned(&w)?;
            *weights.entry(w).or_insert(0.0) += x;
        }
        weights.retain(|_, x| *x != 0.0);
        Ok(SignedMeasure { model, weights })
    }

    pub fn delta(model: Arc<GroupModel>, w: Word) -> Result<SignedMeasure> {
        Self::from_entries(model, [(w, 1.0)])
    }

    pub fn model(&self) -> &Arc<GroupModel> {
        &self.model
    }

    pub fn weights(&self) -> &BTreeMap<Word, f64> {
        &self.weights
    }

    pub fn weight(&self, w: &Word) -> f64 {
        self.weights.get(w).copied().unwrap_or(0.0)
    }

    pub fn support_size(&self) -> usize {
        self.weights.len()
    }

    pub fn support(&self) -> impl Iterator<Item = &Word> {
        self.weights.keys()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn is_balanced(&self) -> bool {
        self.total_mass().abs() <= MASS_TOL
    }

    /// ‖·‖₀ = Σ|η(g)|.
    pub fn norm_zero(&self) -> f64 {
        self.weights.values().map(|x| x.abs()).sum()
    }

    /// ‖·‖₁ = Σ d(o, go)|η(g)|.
    pub fn norm_one(&self) -> f64 {
        self.weights
            .iter()
            .map(|(w, x)| self.model.norm(w).unwrap() as f64 * x.abs())
            .sum()
    }

    /// ‖·‖₀,₁ = ‖·‖₀ + ‖·‖₁.
    pub fn norm_zero_one(&self) -> f64 {
        self.norm_zero() + self.norm_one()
    }

    /// Σ η(g) d(o, go); for probability measures this is the first moment L.
    pub fn first_moment(&self) -> f64 {
        self.weights
            .iter()
            .map(|(w, x)| self.model.norm(w).unwrap() as f64 * x)
            .sum()
    }

    /// Σ η(g) f(g) for an arbitrary integrand.
    pub fn integrate(&self, mut f: impl FnMut(&Word) -> f64) -> f64 {
        self.weights.iter().map(|(w, x)| x * f(w)).sum()
    }

    pub fn scaled(&self, c: f64) -> SignedMeasure {
        let mut out = self.clone();
        out.weights.retain(|_, x| {
            *x *= c;
            *x != 0.0
        });
        out
    }

    pub fn add(&self, other: &SignedMeasure) -> Result<SignedMeasure> {
        if self.model.id() != other.model.id() {
            return Err(Error::ModelMismatch);
        }
        SignedMeasure::from_entries(
            self.model.clone(),
            self.weights
                .iter()
                .chain(other.weights.iter())
                .map(|(w, x)| (w.clone(), *x)),
        )
    }

    /// Convolution (m1∗m2)(g) = Σ_{h1 h2 = g} m1(h1) m2(h2).
    pub fn convolve_capped(&self, other: &SignedMeasure, cap: usize) -> Result<SignedMeasure> {
        if self.model.id() != other.model.id() {
            return Err(Error::ModelMismatch);
        }
        let mut weights: BTreeMap<Word, f64> = BTreeMap::new();
        for (u, x) in &self.weights {
            for (v, y) in &other.weights {
                let w = self.model.multiply(u, v)?;
                *weights.entry(w).or_insert(0.0) += x * y;
                if weights.len() > cap {
                    return Err(Error::ResourceLimit(format!(
                        "convolution support exceeds cap {cap}"
                    )));
                }
            }
        }
        weights.retain(|_, x| *x != 0.0);
        Ok(SignedMeasure { model: self.model.clone(), weights })
    }

    pub fn convolve(&self, other: &SignedMeasure) -> Result<SignedMeasure> {
        self.convolve_capped(other, DEFAULT_SUPPORT_CAP)
    }
}

/// A probability measure: nonnegative weights of total mass 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMeasure {
    inner: SignedMeasure,
    /// cumulative weights aligned with the BTreeMap iteration order
    cumulative: Vec<f64>,
}

impl ProbabilityMeasure {
    pub fn new(m: SignedMeasure) -> Result<ProbabilityMeasure> {
        for (w, x) in &m.weights {
            if *x < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "negative weight {} at {}",
                    x,
                    m.model.format(w)
                )));
            }
        }
        let mass = m.total_mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidInput(format!(
                "total mass {mass} differs from 1 beyond tolerance"
            )));
        }
        let mut cumulative = Vec::with_capacity(m.weights.len());
        let mut acc = 0.0;
        for x in m.weights.values() {
            acc += x;
            cumulative.push(acc);
        }
        Ok(ProbabilityMeasure { inner: m, cumulative })
    }

    pub fn from_entries(
        model: Arc<GroupModel>,
        entries: impl IntoIterator<Item = (Word, f64)>,
    ) -> Result<ProbabilityMeasure> {
        Self::new(SignedMeasure::from_entries(model, entries)?)
    }

    /// Uniform measure on a list of (distinct after normalization) words.
    pub fn uniform(model: Arc<GroupModel>, words: Vec<Word>) -> Result<ProbabilityMeasure> {
        let n = words.len();
        if n == 0 {
            return Err(Error::InvalidInput("uniform measure on empty set".into()));
        }
        Self::from_entries(model, words.into_iter().map(|w| (w, 1.0 / n as f64)))
    }

    /// Simple random walk measure: uniform on the generator set.
    pub fn srw(model: Arc<GroupModel>) -> Result<ProbabilityMeasure> {
        let gens = model.generators();
        Self::uniform(model, gens)
    }

    pub fn as_signed(&self) -> &SignedMeasure {
        &self.inner
    }

    pub fn model(&self) -> &Arc<GroupModel> {
        self.inner.model()
    }

    pub fn weights(&self) -> &BTreeMap<Word, f64> {
        self.inner.weights()
    }

    pub fn first_moment(&self) -> f64 {
        self.inner.first_moment()
    }

    /// Shannon entropy H(μ) = −Σ μ(g) log μ(g) in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .inner
            .weights
            .values()
            .filter(|x| **x > 0.0)
            .map(|x| x * x.ln())
            .sum::<f64>()
    }

    pub fn convolve(&self, other: &ProbabilityMeasure) -> Result<ProbabilityMeasure> {
        self.convolve_capped(other, DEFAULT_SUPPORT_CAP)
    }

    pub fn convolve_capped(
        &self,
        other: &ProbabilityMeasure,
        cap: usize,
    ) -> Result<ProbabilityMeasure> {
        let mut conv = self.inner.convolve_capped(&other.inner, cap)?;
        // large convolutions accumulate rounding in the total mass;
        // renormalize rather than reject
        let mass = conv.total_mass();
        if (mass - 1.0).abs() <= 1e-6 && mass != 1.0 {
            conv = conv.scaled(1.0 / mass);
        }
        ProbabilityMeasure::new(conv)
    }

    /// μ^{∗n}; n = 0 gives δ_e.
    pub fn convolve_power(&self, n: usize, cap: usize) -> Result<ProbabilityMeasure> {
        let mut acc =
            ProbabilityMeasure::new(SignedMeasure::delta(self.model().clone(), self.model().identity())?)?;
        for _ in 0..n {
            acc = acc.convolve_capped(self, cap)?;
        }
        Ok(acc)
    }

    /// Draw one atom from a uniform variate; inverse CDF over the fixed
    /// BTreeMap order, so sampling is deterministic given the variate.
    pub fn sample_with(&self, u: f64) -> &Word {
        let pos = self.cumulative.partition_point(|&c| c < u);
        let idx = pos.min(self.cumulative.len().saturating_sub(1));
        self.inner.weights.keys().nth(idx).unwrap()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> &Word {
        self.sample_with(rng.gen::<f64>())
    }
}

/// The exact linear family μ_t = base + t·direction.
#[derive(Debug, Clone)]
pub struct PerturbationFamily {
    pub base: ProbabilityMeasure,
    pub direction: SignedMeasure,
    pub t_max: f64,
}

impl PerturbationFamily {
    pub fn new(
        base: ProbabilityMeasure,
        direction: SignedMeasure,
        t_max: f64,
    ) -> Result<PerturbationFamily> {
        if base.model().id() != direction.model().id() {
            return Err(Error::ModelMismatch);
        }
        if t_max <= 0.0 {
            return Err(Error::InvalidInput("t_max must be positive".into()));
        }
        if !direction.is_balanced() {
            return Err(Error::InvalidInput(format!(
                "direction is not balanced: total mass {}",
                direction.total_mass()
            )));
        }
        let fam = PerturbationFamily { base, direction, t_max };
        fam.perturb(t_max)?;
        fam.perturb(-t_max)?;
        Ok(fam)
    }

    /// μ + tη as a validated probability measure.
    pub fn perturb(&self, t: f64) -> Result<ProbabilityMeasure> {
        if t.abs() > self.t_max + MASS_TOL {
            return Err(Error::Range(format!("|t| = {} exceeds t_max = {}", t.abs(), self.t_max)));
        }
        let raw = self.base.as_signed().add(&self.direction.scaled(t))?;
        let mut entries = Vec::new();
        for (w, x) in raw.weights() {
            if *x < -MASS_TOL {
                return Err(Error::Range(format!(
                    "perturbation at t = {t} gives negative weight {x}"
                )));
            }
            if *x > MASS_TOL {
                entries.push((w.clone(), *x));
            }
        }
        // renormalize away the O(1e-16) float residue; mass is already 1
        // up to tolerance because the direction is balanced
        let mass: f64 = entries.iter().map(|(_, x)| x).sum();
        ProbabilityMeasure::from_entries(
            self.base.model().clone(),
            entries.into_iter().map(|(w, x)| (w, x / mass)),
        )
    }

    /// Is the Theorem-style absolute-continuity hypothesis satisfied?
    pub fn direction_supported_in_base(&self) -> bool {
        self.direction
            .support()
            .all(|w| self.base.weights().contains_key(w))
    }
}

/// Witness for non-elementarity: two independent contracting elements of
/// the support semigroup plus the projection diameters that certify
/// independence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonElementaryWitness {
    pub g: String,
    pub h: String,
    pub proj_diam_g: u64,
    pub proj_diam_h: u64,
}

/// Search the semigroup generated by the support (products of at most
/// `search_depth` atoms) for two independent contracting elements.
///
/// Candidates must be stable under powers (‖g³‖ = 3‖g‖, i.e. the orbit
/// {gⁱo} is a geodesic through o) and the two orbits must have mutual
/// projections of stable, bounded diameter. Returns None when inconclusive.
pub fn check_nonelementary(
    m: &ProbabilityMeasure,
    search_depth: usize,
) -> Result<Option<(Word, Word, NonElementaryWitness)>> {
    let model = m.model().clone();
    let mut elements: Vec<Word> = m.weights().keys().cloned().collect();
    let mut frontier = elements.clone();
    const CAND_CAP: usize = 400;
    for _ in 1..search_depth {
        let mut next = Vec::new();
        for u in &frontier {
            for v in m.weights().keys() {
                let w = model.multiply(u, v)?;
                if !w.is_identity() && !elements.contains(&w) && !next.contains(&w) {
                    next.push(w);
                }
            }
        }
        elements.extend(next.iter().cloned());
        if elements.len() > CAND_CAP {
            elements.truncate(CAND_CAP);
            break;
        }
        frontier = next;
    }
    // keep axis candidates: nontrivial, geodesic orbit through o
    let mut axes: Vec<Word> = Vec::new();
    for w in &elements {
        let n1 = model.norm(w)?;
        if n1 == 0 {
            continue;
        }
        let w3 = model.multiply(&model.multiply(w, w)?, w)?;
        if model.norm(&w3)? == 3 * n1 {
            axes.push(w.clone());
        }
    }
    axes.sort_by_key(|w| (model.norm(w).unwrap(), w.clone()));
    for i in 0..axes.len() {
        for j in (i + 1)..axes.len() {
            let g = &axes[i];
            let h = &axes[j];
            if let Some(wit) = independent_pair(&model, g, h)? {
                return Ok(Some((g.clone(), h.clone(), wit)));
            }
        }
    }
    Ok(None)
}

/// Bounded mutual projections of the two orbit axes, tested at two ranges
/// to rule out diameters that grow with the range.
fn independent_pair(
    model: &Arc<GroupModel>,
    g: &Word,
    h: &Word,
) -> Result<Option<NonElementaryWitness>> {
    let bound = model.norm(g)? + model.norm(h)?;
    let mut diams = [0u64; 4];
    for (slot, (base, probe, range)) in
        [(g, h, 2i64), (g, h, 4), (h, g, 2), (h, g, 4)].iter().enumerate()
    {
        let axis = geometry::axis_of(model, base, -range, *range)?;
        let probe_axis = geometry::axis_of(model, probe, -range, *range)?;
        let mut proj_points = Vec::new();
        for p in &probe_axis.points {
            proj_points.extend(geometry::project(model, &axis, p)?);
        }
        diams[slot] = geometry::diameter(model, &proj_points)?;
    }
    let stable = diams[0] == diams[1] && diams[2] == diams[3];
    if stable && diams[1] <= bound && diams[3] <= bound {
        Ok(Some(NonElementaryWitness {
            g: model.format(g),
            h: model.format(h),
            proj_diam_g: diams[3],
            proj_diam_h: diams[1],
        }))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f2() -> Arc<GroupModel> {
        GroupModel::free(2).unwrap()
    }

    fn f2_srw() -> ProbabilityMeasure {
        ProbabilityMeasure::srw(f2()).unwrap()
    }

    #[test]
    fn srw_square_has_known_shape() {
        let mu = f2_srw();
        let mu2 = mu.convolve(&mu).unwrap();
        assert_eq!(mu2.weights().len(), 13);
        let e = f2().identity();
        assert!((mu2.weights()[&e] - 0.25).abs() < 1e-15);
        assert!((mu2.first_moment() - 1.5).abs() < 1e-15);
        assert!((mu2.entropy() - 3.5 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn delta_convolution_and_binomial() {
        let m = f2();
        let a = SignedMeasure::delta(m.clone(), m.parse("a").unwrap()).unwrap();
        let b = SignedMeasure::delta(m.clone(), m.parse("b").unwrap()).unwrap();
        let ab = a.convolve(&b).unwrap();
        assert_eq!(ab.weights().len(), 1);
        assert!(ab.weights().contains_key(&m.parse("ab").unwrap()));

        let half = ProbabilityMeasure::from_entries(
            m.clone(),
            [(m.identity(), 0.5), (m.parse("a").unwrap(), 0.5)],
        )
        .unwrap();
        let sq = half.convolve(&half).unwrap();
        assert!((sq.weights()[&m.identity()] - 0.25).abs() < 1e-15);
        assert!((sq.weights()[&m.parse("a").unwrap()] - 0.5).abs() < 1e-15);
        assert!((sq.weights()[&m.parse("aa").unwrap()] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn norms() {
        let m = f2();
        let eta = SignedMeasure::from_entries(
            m.clone(),
            [(m.parse("a").unwrap(), 1.0), (m.parse("b").unwrap(), -1.0)],
        )
        .unwrap();
        assert_eq!(eta.norm_zero(), 2.0);
        assert_eq!(eta.norm_one(), 2.0);
        assert_eq!(eta.norm_zero_one(), 4.0);
        assert!(eta.is_balanced());
    }

    #[test]
    fn perturbation_family() {
        let m = f2();
        let mu = f2_srw();
        let eta = SignedMeasure::from_entries(
            m.clone(),
            [(m.parse("a").unwrap(), 1.0), (m.parse("b").unwrap(), -1.0)],
        )
        .unwrap()
        .scaled(0.1);
        let fam = PerturbationFamily::new(mu.clone(), eta, 1.0).unwrap();
        let t1 = fam.perturb(1.0).unwrap();
        let w = |s: &str| m.parse(s).unwrap();
        assert!((t1.weights()[&w("a")] - 0.35).abs() < 1e-12);
        assert!((t1.weights()[&w("A")] - 0.25).abs() < 1e-12);
        assert!((t1.weights()[&w("b")] - 0.15).abs() < 1e-12);
        assert!((t1.weights()[&w("B")] - 0.25).abs() < 1e-12);
        assert_eq!(fam.perturb(0.0).unwrap().weights(), mu.weights());
        assert!(fam.perturb(1.5).is_err());
    }

    #[test]
    fn boundary_perturbation_removes_atom() {
        let m = f2();
        let mu = f2_srw();
        // direction that empties the b-atom at t = 1
        let eta = SignedMeasure::from_entries(
            m.clone(),
            [(m.parse("b").unwrap(), -0.25), (m.parse("a").unwrap(), 0.25)],
        )
        .unwrap();
        let fam = PerturbationFamily::new(mu, eta, 1.0).unwrap();
        let edge = fam.perturb(1.0).unwrap();
        assert!(!edge.weights().contains_key(&m.parse("b").unwrap()));
        assert!((edge.as_signed().total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn convolution_is_associative() {
        let m = f2();
        let w = |s: &str| m.parse(s).unwrap();
        let m1 = SignedMeasure::from_entries(m.clone(), [(w("a"), 0.5), (w("bA"), -0.25)]).unwrap();
        let m2 = SignedMeasure::from_entries(m.clone(), [(w("B"), 1.5), (w("ab"), 0.5)]).unwrap();
        let m3 = SignedMeasure::from_entries(m.clone(), [(w("A"), 2.0), (w("e"), -1.0)]).unwrap();
        let left = m1.convolve(&m2).unwrap().convolve(&m3).unwrap();
        let right = m1.convolve(&m2.convolve(&m3).unwrap()).unwrap();
        for (wd, x) in left.weights() {
            assert!((x - right.weight(wd)).abs() < 1e-12);
        }
        assert_eq!(left.support_size(), right.support_size());
    }

    #[test]
    fn entropy_of_uniform_four() {
        let mu = f2_srw();
        assert!((mu.entropy() - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn nonelementary_witness_on_f2() {
        let mu = f2_srw();
        let (g, h, wit) = check_nonelementary(&mu, 1).unwrap().unwrap();
        let m = f2();
        assert_eq!(m.format(&g), "A");
        assert_eq!(m.format(&h), "B");
        assert_eq!(wit.proj_diam_g, 0);
        assert_eq!(wit.proj_diam_h, 0);
    }

    #[test]
    fn elementary_measure_is_inconclusive() {
        let m = f2();
        let mu = ProbabilityMeasure::from_entries(m.clone(), [(m.parse("a").unwrap(), 1.0)]).unwrap();
        assert!(check_nonelementary(&mu, 3).unwrap().is_none());
    }

    #[test]
    fn three_involutions_witness() {
        let m = GroupModel::free_product(vec![Some(2), Some(2), Some(2)]).unwrap();
        let mu = ProbabilityMeasure::srw(m.clone()).unwrap();
        let (g, h, _) = check_nonelementary(&mu, 2).unwrap().unwrap();
        assert_eq!(m.norm(&g).unwrap(), 2);
        assert_eq!(m.norm(&h).unwrap(), 2);
        assert_ne!(g, h);
    }

    #[test]
    fn sampling_respects_weights() {
        let mu = f2_srw();
        // quartile boundaries map to the four atoms in BTreeMap order
        let atoms: Vec<&Word> = mu.weights().keys().collect();
        assert_eq!(mu.sample_with(0.1), atoms[0]);
        assert_eq!(mu.sample_with(0.3), atoms[1]);
        assert_eq!(mu.sample_with(0.6), atoms[2]);
        assert_eq!(mu.sample_with(0.9), atoms[3]);
    }
}
