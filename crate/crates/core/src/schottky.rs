//! Schottky sets: finite families of generator sequences whose prefix
//! axes are uniformly contracting, pairwise aligned, and aligned with all
//! but at most one sequence from any external point. Built by interleaving
//! powers of two independent contracting elements, then verified against
//! the definition on probe points.

use crate::error::{Error, Result};
use crate::geometry::{self, AxisPath, Verdict};
use crate::group::{GroupModel, Word};
use serde::Serialize;
use std::sync::Arc;

/// Default alignment constants for tree models. These are empirical,
/// config-exposed choices validated by `verify_schottky` and the
/// semi-alignment containment audit before any experiment uses them.
pub const DEFAULT_K0: f64 = 2.0;
pub const DEFAULT_D0: f64 = 6.0;
pub const DEFAULT_E0: f64 = 2.0;
pub const DEFAULT_L0: f64 = 2.0;

#[derive(Debug, Clone, Serialize)]
pub struct SchottkyConstants {
    pub k0: f64,
    pub d0: f64,
    pub e0: f64,
    pub l0: f64,
}

impl Default for SchottkyConstants {
    fn default() -> Self {
        SchottkyConstants { k0: DEFAULT_K0, d0: DEFAULT_D0, e0: DEFAULT_E0, l0: DEFAULT_L0 }
    }
}

/// Construction provenance of a Schottky set.
#[derive(Debug, Clone, Serialize)]
pub struct SchottkySource {
    pub alpha: Vec<String>,
    pub beta: Vec<String>,
    pub m: usize,
    pub k: usize,
    pub n_central: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SchottkySet {
    /// equal-length tuples of single steps
    pub sequences: Vec<Vec<Word>>,
    pub block_len: usize,
    pub constants: SchottkyConstants,
    pub source: Option<SchottkySource>,
}

impl SchottkySet {
    pub fn cardinality(&self) -> usize {
        self.sequences.len()
    }

    /// Total product Π(s) of a sequence.
    pub fn pi(&self, model: &GroupModel, idx: usize) -> Result<Word> {
        let mut p = model.identity();
        for s in &self.sequences[idx] {
            p = model.multiply(&p, s)?;
        }
        Ok(p)
    }

    /// Prefix axis Γ(s) = (o, s₁o, s₁s₂o, …, Π(s)o).
    pub fn gamma(&self, model: &GroupModel, idx: usize) -> Result<AxisPath> {
        geometry::prefix_path(model, &self.sequences[idx])
    }
}

/// M-fold repetition of a tuple.
fn repeat_tuple(t: &[Word], m: usize) -> Vec<Word> {
    let mut out = Vec::with_capacity(t.len() * m);
    for _ in 0..m {
        out.extend_from_slice(t);
    }
    out
}

/// Build the standard Schottky set from two independent contracting tuples:
/// all 2^{2k} interleavings (s₁,…,s_k, central, s_{k+1},…,s_{2k}) with
/// s_i ∈ {α^{(M)}, β^{(M)}} around N central copies of α^{(M)}. Every
/// sequence has block length M·|α|·(2k+N).
pub fn build_schottky(
    model: &Arc<GroupModel>,
    alpha: &[Word],
    beta: &[Word],
    m: usize,
    k: usize,
    n_central: usize,
) -> Result<SchottkySet> {
    if m < 1 || k < 1 || n_central < 1 {
        return Err(Error::InvalidInput("need M, k, N >= 1".into()));
    }
    if alpha.is_empty() || beta.is_empty() || alpha.len() != beta.len() {
        return Err(Error::InvalidInput("alpha and beta must be nonempty tuples of equal length".into()));
    }
    let pi = |t: &[Word]| -> Result<Word> {
        let mut p = model.identity();
        for s in t {
            p = model.multiply(&p, s)?;
        }
        Ok(p)
    };
    let pa = pi(alpha)?;
    let pb = pi(beta)?;
    // independence screen: both products must have geodesic power orbits
    // with mutually bounded projections
    for (name, g) in [("alpha", &pa), ("beta", &pb)] {
        let n1 = model.norm(g)?;
        let g3 = model.multiply(&model.multiply(g, g)?, g)?;
        if n1 == 0 || model.norm(&g3)? != 3 * n1 {
            return Err(Error::InvalidInput(format!(
                "{name} product {} is not a stable contracting element",
                model.format(g)
            )));
        }
    }
    for range in [2i64, 4] {
        let axis_a = geometry::axis_of(model, &pa, -range, range)?;
        let axis_b = geometry::axis_of(model, &pb, -range, range)?;
        let mut proj = Vec::new();
        for p in &axis_b.points {
            proj.extend(geometry::project(model, &axis_a, p)?);
        }
        let d = geometry::diameter(model, &proj)?;
        if d > model.norm(&pa)? + model.norm(&pb)? {
            return Err(Error::InvalidInput(format!(
                "alpha and beta are not independent: projection diameter {d} at range {range}"
            )));
        }
    }
    let am = repeat_tuple(alpha, m);
    let bm = repeat_tuple(beta, m);
    let central = repeat_tuple(&am, n_central);
    let mut sequences = Vec::with_capacity(1 << (2 * k));
    for bits in 0..(1u32 << (2 * k)) {
        let mut seq: Vec<Word> = Vec::new();
        for i in 0..k {
            let t = if bits >> i & 1 == 0 { &am } else { &bm };
            seq.extend_from_slice(t);
        }
        seq.extend_from_slice(&central);
        for i in k..2 * k {
            let t = if bits >> i & 1 == 0 { &am } else { &bm };
            seq.extend_from_slice(t);
        }
        sequences.push(seq);
    }
    let block_len = m * alpha.len() * (2 * k + n_central);
    debug_assert!(sequences.iter().all(|s| s.len() == block_len));
    // The quality constant scales with the construction: two distinct
    // interleavings can agree on all but one slot, so points can track a
    // pair of axes for up to block_len - M*|alpha| steps. K0 must exceed
    // that shared depth for the at-most-one-failure condition to hold.
    let k0 = (block_len - m * alpha.len()) as f64 + 1.0;
    // In trees the axes are geodesics and projections of avoiding geodesics
    // are single points, so two-sided point alignment at C propagates to
    // pair alignment at the same constant: D0 = K0. Alignment at D0
    // tolerates up to D0 - 1 letters of junction cancellation, so loci can
    // sit that far off the final geodesic (E0 = D0), and blocks must be
    // longer than that slack to make misalignment visible (L0 = D0).
    let d0 = k0;
    let constants = SchottkyConstants { k0, d0, e0: d0, l0: d0 };
    Ok(SchottkySet {
        sequences,
        block_len,
        constants,
        source: Some(SchottkySource {
            alpha: alpha.iter().map(|w| model.format(w)).collect(),
            beta: beta.iter().map(|w| model.format(w)).collect(),
            m,
            k,
            n_central,
        }),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SchottkyReport {
    pub passed: bool,
    pub block_length_ok: bool,
    pub contracting_ok: bool,
    pub probe_condition_ok: bool,
    pub pairwise_ok: bool,
    pub n_probes: usize,
    pub violations: Vec<String>,
    /// whether the probe condition was checked exhaustively or on samples
    pub probes_exhaustive: bool,
}

/// Verify the four defining conditions on probe points:
/// (1) block length exceeds L₀; (2) every prefix axis Γ(s) is a
/// K₀-contracting axis; (3) from each probe x, at most one s fails the two
/// K₀-alignment conditions (x, Γ(s)) and (Γ(s), Π(s)x); (4) every ordered
/// pair (Γ(s), Π(s)Γ(s′)) is K₀-aligned.
pub fn verify_schottky(
    model: &Arc<GroupModel>,
    set: &SchottkySet,
    probe_points: &[Word],
    probes_exhaustive: bool,
) -> Result<SchottkyReport> {
    if probe_points.is_empty() {
        return Err(Error::InvalidInput("need at least one probe point".into()));
    }
    let k0 = set.constants.k0;
    let mut violations = Vec::new();

    let block_length_ok = set.block_len as f64 > set.constants.l0;
    if !block_length_ok {
        violations.push(format!(
            "block length {} does not exceed L0 = {}",
            set.block_len, set.constants.l0
        ));
    }

    let mut contracting_ok = true;
    let mut gammas = Vec::with_capacity(set.cardinality());
    let mut pis = Vec::with_capacity(set.cardinality());
    for i in 0..set.cardinality() {
        let gamma = set.gamma(model, i)?;
        let rep = geometry::is_contracting_axis(model, &gamma, k0, 200)?;
        if rep.verdict != Verdict::Certified {
            contracting_ok = false;
            violations.push(format!("sequence {i}: axis not certified ({})", rep.detail));
        }
        pis.push(set.pi(model, i)?);
        gammas.push(gamma);
    }

    // probes plus the adversarial points Π(s)o and axis midpoints
    let mut probes: Vec<Word> = probe_points.to_vec();
    for (i, pi) in pis.iter().enumerate() {
        if !probes.contains(pi) {
            probes.push(pi.clone());
        }
        let mid = &gammas[i].points[gammas[i].points.len() / 2];
        if !probes.contains(mid) {
            probes.push(mid.clone());
        }
    }

    let mut probe_condition_ok = true;
    for x in &probes {
        let mut failures = 0usize;
        let mut failed_at = Vec::new();
        for (i, gamma) in gammas.iter().enumerate() {
            let head = geometry::is_aligned(
                model,
                &[AxisPath::single(x.clone()), gamma.clone()],
                k0,
            )?;
            let translated = gamma.translated(model, &pis[i])?;
            // (Γ(s), Π(s)x): the point-anchored tail of the chain
            let tail = geometry::is_aligned(
                model,
                &[gamma.clone(), AxisPath::single(model.multiply(&pis[i], x)?)],
                k0,
            )?;
            let _ = translated;
            if !(head.aligned && tail.aligned) {
                failures += 1;
                failed_at.push(i);
            }
        }
        if failures > 1 {
            probe_condition_ok = false;
            violations.push(format!(
                "probe {} fails alignment for {failures} sequences {failed_at:?}",
                model.format(x)
            ));
        }
    }

    let mut pairwise_ok = true;
    for i in 0..set.cardinality() {
        for j in 0..set.cardinality() {
            let second = gammas[j].translated(model, &pis[i])?;
            let rep = geometry::is_aligned(model, &[gammas[i].clone(), second], k0)?;
            if !rep.aligned {
                pairwise_ok = false;
                violations.push(format!(
                    "pair ({i}, {j}): diameters {:?} not below K0 = {k0}",
                    rep.pair_diameters
                ));
            }
        }
    }

    Ok(SchottkyReport {
        passed: block_length_ok && contracting_ok && probe_condition_ok && pairwise_ok,
        block_length_ok,
        contracting_ok,
        probe_condition_ok,
        pairwise_ok,
        n_probes: probes.len(),
        violations,
        probes_exhaustive,
    })
}

/// Build a verified Schottky set of at least the requested cardinality for
/// a non-elementary measure: take the two shortest independent support
/// elements and interleave with k = ceil(log2(cardinality)/2).
pub fn schottky_for_measure(
    mu: &crate::measure::ProbabilityMeasure,
    min_cardinality: usize,
) -> Result<SchottkySet> {
    if min_cardinality < 1 || min_cardinality > 1 << 10 {
        return Err(Error::InvalidInput("cardinality must be in 1..=1024".into()));
    }
    let Some((g, h, _)) = crate::measure::check_nonelementary(mu, 2)? else {
        return Err(Error::HypothesisRejected(
            "no independence witness found in the support semigroup".into(),
        ));
    };
    let mut k = 1usize;
    while 1 << (2 * k) < min_cardinality {
        k += 1;
    }
    build_schottky(mu.model(), &[g], &[h], 2, k, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::ProbabilityMeasure;

    fn f2() -> Arc<GroupModel> {
        GroupModel::free(2).unwrap()
    }

    #[test]
    fn standard_construction_shape() {
        let m = f2();
        let a = m.parse("a").unwrap();
        let b = m.parse("b").unwrap();
        let set = build_schottky(&m, &[a.clone()], &[b], 2, 1, 1).unwrap();
        assert_eq!(set.cardinality(), 4);
        assert_eq!(set.block_len, 6);
        for s in &set.sequences {
            assert_eq!(s.len(), 6);
        }
        // the all-alpha element is a power of a
        let all_alpha = set
            .sequences
            .iter()
            .position(|s| s.iter().all(|w| *w == a))
            .unwrap();
        assert_eq!(m.format(&set.pi(&m, all_alpha).unwrap()), "aaaaaa");
    }

    #[test]
    fn verification_passes_on_f2() {
        let m = f2();
        let a = m.parse("a").unwrap();
        let b = m.parse("b").unwrap();
        let set = build_schottky(&m, &[a], &[b], 2, 1, 1).unwrap();
        let ball = m.ball(3, 10_000).unwrap();
        let probes: Vec<Word> = ball.iter_with_distance().map(|(w, _)| w.clone()).collect();
        let rep = verify_schottky(&m, &set, &probes, false).unwrap();
        assert!(rep.passed, "violations: {:?}", rep.violations);
    }

    #[test]
    fn verification_passes_on_f2_cardinality_16() {
        let m = f2();
        let a = m.parse("a").unwrap();
        let b = m.parse("b").unwrap();
        let set = build_schottky(&m, &[a], &[b], 4, 2, 2).unwrap();
        assert_eq!(set.cardinality(), 16);
        assert_eq!(set.block_len, 24);
        let ball = m.ball(6, 100_000).unwrap();
        let probes: Vec<Word> = ball.iter_with_distance().map(|(w, _)| w.clone()).collect();
        let rep = verify_schottky(&m, &set, &probes, false).unwrap();
        assert!(rep.passed, "violations: {:?}", rep.violations);
    }

    #[test]
    fn dependent_generators_are_rejected() {
        let m = f2();
        let a = m.parse("a").unwrap();
        let a2 = m.parse("aa").unwrap();
        assert!(matches!(
            build_schottky(&m, &[a], &[a2], 2, 1, 1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn backtracking_candidate_fails_contraction() {
        let m = f2();
        let a = m.parse("a").unwrap();
        let ainv = m.parse("A").unwrap();
        let set = SchottkySet {
            sequences: vec![vec![a.clone(), a.clone()], vec![a, ainv]],
            block_len: 2,
            constants: SchottkyConstants { l0: 1.0, ..Default::default() },
            source: None,
        };
        let rep = verify_schottky(&m, &set, &[m.identity()], false).unwrap();
        assert!(!rep.contracting_ok);
        assert!(!rep.passed);
    }

    #[test]
    fn measure_construction_reaches_cardinality() {
        let mu = ProbabilityMeasure::srw(f2()).unwrap();
        let set = schottky_for_measure(&mu, 16).unwrap();
        assert_eq!(set.cardinality(), 16);
        assert!(set.block_len as f64 > set.constants.l0);
    }
}
