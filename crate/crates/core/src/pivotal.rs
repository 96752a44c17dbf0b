//! Pivotal times of block-decomposed words: an inductively maintained set
//! of block indices whose axes line up along the running product. The
//! local rule keeps a stack whose invariant is that the chain
//! (o, a-axis, b-axis, ..., a-axis, b-axis, endpoint) of the surviving
//! blocks is D₀-aligned; each step either appends the new block index or
//! truncates the stack to an initial section.

use crate::error::{Error, Result};
use crate::geometry::{self, AxisPath};
use crate::group::{GroupModel, Syllable, Word};
use crate::measure::ProbabilityMeasure;
use crate::schottky::SchottkySet;
use crate::stats;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// A word W_n = w₀ Π(a₁)Π(b₁)Π(c₁)Π(d₁) w₁ ⋯ Π(aₙ)Π(bₙ)Π(cₙ)Π(dₙ) wₙ
/// whose quadruple blocks are drawn from a Schottky set.
#[derive(Debug, Clone)]
pub struct BlockSequence {
    model: Arc<GroupModel>,
    pub schottky: SchottkySet,
    /// indices into schottky.sequences, one quadruple per block
    pub blocks: Vec<[usize; 4]>,
    /// w₀, …, wₙ (one more than blocks)
    pub w: Vec<Word>,
}

impl BlockSequence {
    pub fn new(
        model: Arc<GroupModel>,
        schottky: SchottkySet,
        blocks: Vec<[usize; 4]>,
        w: Vec<Word>,
    ) -> Result<BlockSequence> {
        if w.len() != blocks.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "need {} interstitial words for {} blocks",
                blocks.len() + 1,
                blocks.len()
            )));
        }
        let card = schottky.cardinality();
        if blocks.iter().flatten().any(|&i| i >= card) {
            return Err(Error::InvalidInput("block index outside the Schottky set".into()));
        }
        for word in &w {
            model.check_owned(word)?;
        }
        Ok(BlockSequence { model, schottky, blocks, w })
    }

    pub fn model(&self) -> &Arc<GroupModel> {
        &self.model
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    /// Π of the Schottky sequence at the given set index.
    fn pi(&self, seq_idx: usize) -> Result<Word> {
        self.schottky.pi(&self.model, seq_idx)
    }

    /// The full product W_n.
    pub fn full_word(&self) -> Result<Word> {
        let mut acc = self.w[0].clone();
        for (k, quad) in self.blocks.iter().enumerate() {
            for &idx in quad {
                acc = self.model.multiply(&acc, &self.pi(idx)?)?;
            }
            acc = self.model.multiply(&acc, &self.w[k + 1])?;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepAudit {
    pub step: usize,
    pub accepted: bool,
    /// number of pivotal times discarded at this step
    pub popped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PivotRecord {
    /// surviving pivotal block indices, increasing
    pub pivots: Vec<usize>,
    /// #P_k after each step k = 1..n
    pub sizes: Vec<usize>,
    pub audit: Vec<StepAudit>,
}

struct StackEntry {
    index: usize,
    /// Γ(b) in the frame based at this block's starting point shifted by
    /// Π(a): the b-axis relative to its own start
    b_axis: AxisPath,
    /// Π(b)
    b_word: Word,
    /// Π(a)Π(b), used when merging a popped entry into its parent
    ab_word: Word,
    /// reduced word from the end of the b-axis to the current endpoint
    v: Word,
}

/// Extract pivotal times. Pure function of the sequence: at step k the
/// chain invariant is re-established either by accepting k (both new
/// alignment pairs hold) or by discarding a terminal segment of the
/// current pivot list.
pub fn extract_pivots(seq: &BlockSequence) -> Result<PivotRecord> {
    let model = seq.model().clone();
    let d0 = seq.schottky.constants.d0;
    let mut stack: Vec<StackEntry> = Vec::new();
    let mut sizes = Vec::with_capacity(seq.n());
    let mut audit = Vec::with_capacity(seq.n());
    // running reduced product W_k, needed when the stack is empty
    let mut full: Word = seq.w[0].clone();
    let is_surface = model.is_surface();
    let mut buf: Vec<Syllable> = if is_surface {
        Vec::new()
    } else {
        seq.w[0].syllables().to_vec()
    };

    for k in 1..=seq.n() {
        let [ia, ib, ic, id] = seq.blocks[k - 1];
        let pa = seq.pi(ia)?;
        let pb = seq.pi(ib)?;
        let pcdw = {
            let mut t = seq.pi(ic)?;
            t = model.multiply(&t, &seq.pi(id)?)?;
            model.multiply(&t, &seq.w[k])?
        };
        let a_axis = seq.schottky.gamma(&model, ia)?;
        let b_axis = seq.schottky.gamma(&model, ib)?;
        let ab_word = model.multiply(&pa, &pb)?;
        let step_word = model.multiply(&ab_word, &pcdw)?;

        // left pair: previous b-axis (or the origin) against the new a-axis
        let left_ok = if let Some(top) = stack.last() {
            // in the frame of the top entry's b-axis start: candidate base
            // is Π(b_top)·v_top
            let shift = model.multiply(&top.b_word, &top.v)?;
            let cand = a_axis.translated(&model, &shift)?;
            geometry::is_aligned(&model, &[top.b_axis.clone(), cand], d0)?.aligned
        } else {
            // chain starts at the origin: in the candidate's frame the
            // origin sits at the inverse of the running product
            let origin = if is_surface {
                model.inverse(&full)?
            } else {
                model.inverse(&model.normalize(buf.clone())?)?
            };
            geometry::is_aligned(&model, &[AxisPath::single(origin), a_axis.clone()], d0)?.aligned
        };
        // middle pair: a-axis against b-axis of the same block
        let mid_ok = left_ok && {
            let shifted_b = b_axis.translated(&model, &pa)?;
            geometry::is_aligned(&model, &[a_axis.clone(), shifted_b], d0)?.aligned
        };
        // right pair: b-axis against the endpoint after the whole step
        let accept = mid_ok && {
            let endpoint = model.multiply(&pb, &pcdw)?;
            geometry::is_aligned(&model, &[b_axis.clone(), AxisPath::single(endpoint)], d0)?
                .aligned
        };

        let mut popped = 0usize;
        if accept {
            stack.push(StackEntry { index: k, b_axis, b_word: pb, ab_word, v: pcdw });
        } else {
            // fold this step's material into the top entry, then discard
            // pivots until the (b-axis, endpoint) pair realigns
            if let Some(top) = stack.last_mut() {
                top.v = model.multiply(&top.v, &step_word)?;
            }
            while let Some(top) = stack.last() {
                let endpoint = model.multiply(&top.b_word, &top.v)?;
                let ok = geometry::is_aligned(
                    &model,
                    &[top.b_axis.clone(), AxisPath::single(endpoint)],
                    d0,
                )?
                .aligned;
                if ok {
                    break;
                }
                let dead = stack.pop().unwrap();
                popped += 1;
                if let Some(parent) = stack.last_mut() {
                    let tail = model.multiply(&dead.ab_word, &dead.v)?;
                    parent.v = model.multiply(&parent.v, &tail)?;
                }
            }
        }
        if is_surface {
            full = model.multiply(&full, &step_word)?;
        } else {
            model.append_reduced(&mut buf, &step_word);
        }
        sizes.push(stack.len());
        audit.push(StepAudit { step: k, accepted: accept, popped });
    }
    Ok(PivotRecord {
        pivots: stack.iter().map(|e| e.index).collect(),
        sizes,
        audit,
    })
}

/// Letter-length tree buffer that reports how deep each append erodes.
struct TreeBuffer {
    syls: Vec<Syllable>,
    depth: i64,
}

impl TreeBuffer {
    fn new() -> TreeBuffer {
        TreeBuffer { syls: Vec::new(), depth: 0 }
    }

    /// Append a reduced word; returns the depth floor reached while the
    /// junction cancels (erosion happens before any regrowth because both
    /// sides are reduced).
    fn append(&mut self, model: &GroupModel, w: &Word) -> i64 {
        let mut floor = self.depth;
        for syl in w.syllables() {
            let s = *syl;
            match self.syls.last_mut() {
                Some(last) if last.gen == s.gen => {
                    if model.gen_order(s.gen) == Some(2) {
                        // involution: equal adjacent letters cancel
                        self.syls.pop();
                        self.depth -= 1;
                        floor = floor.min(self.depth);
                        continue;
                    }
                    let combined = last.exp + s.exp;
                    let cancel = (last.exp.abs() + s.exp.abs() - combined.abs()) / 2;
                    // the merge erodes `cancel` letters before any regrowth
                    floor = floor.min(self.depth - cancel);
                    self.depth += s.exp.abs() - 2 * cancel;
                    if combined == 0 {
                        // full annihilation; the next incoming syllable may
                        // cancel the newly exposed tail
                        self.syls.pop();
                    } else {
                        last.exp = combined;
                    }
                }
                _ => {
                    self.syls.push(s);
                    self.depth += s.exp.abs();
                }
            }
        }
        floor
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub pass: bool,
    pub n_loci: usize,
    pub violations: Vec<String>,
}

/// Verify a pivot record: the record must replay deterministically from
/// the sequence, and every pivotal locus W_{j-1}·o must lie within E₀ of
/// the geodesic [o, W_n·o] (exact vertex containment in tree models).
pub fn pivot_alignment_audit(seq: &BlockSequence, rec: &PivotRecord) -> Result<AuditReport> {
    let model = seq.model().clone();
    let mut violations = Vec::new();
    let replay = extract_pivots(seq)?;
    if replay.pivots != rec.pivots {
        for idx in &rec.pivots {
            if !replay.pivots.contains(idx) {
                violations.push(format!("index {idx} is not pivotal on replay"));
            }
        }
        for idx in &replay.pivots {
            if !rec.pivots.contains(idx) {
                violations.push(format!("pivotal index {idx} missing from the record"));
            }
        }
        return Ok(AuditReport { pass: false, n_loci: rec.pivots.len(), violations });
    }

    if model.is_tree() {
        // locus depths and post-locus erosion floors from a single replay;
        // a locus may sit up to E0 off the final geodesic
        let e0 = seq.schottky.constants.e0;
        let mut buf = TreeBuffer::new();
        buf.append(&model, &seq.w[0]);
        let mut loci: Vec<(usize, i64)> = Vec::new(); // (index, depth), intact so far
        let mut pivot_iter = rec.pivots.iter().peekable();
        for k in 1..=seq.n() {
            if pivot_iter.peek() == Some(&&k) {
                pivot_iter.next();
                loci.push((k, buf.depth));
            }
            let [ia, ib, ic, id] = seq.blocks[k - 1];
            let mut floor = buf.depth;
            for &idx in &[ia, ib, ic, id] {
                for letter in &seq.schottky.sequences[idx] {
                    floor = floor.min(buf.append(&model, letter));
                }
            }
            floor = floor.min(buf.append(&model, &seq.w[k]));
            loci.retain(|&(j, q)| {
                if (q - floor) as f64 > e0 {
                    violations.push(format!(
                        "locus of pivot {j} at depth {q} eroded to {floor} during step {k} (E0 = {e0})"
                    ));
                    false
                } else {
                    true
                }
            });
        }
    } else {
        let e0 = seq.schottky.constants.e0;
        let full = seq.full_word()?;
        let geo = geometry::geodesic_points(&model, &model.identity(), &full)?;
        let mut prefix = seq.w[0].clone();
        let mut pivot_iter = rec.pivots.iter().peekable();
        for k in 1..=seq.n() {
            if pivot_iter.peek() == Some(&&k) {
                pivot_iter.next();
                let mut best = u64::MAX;
                for p in &geo.points {
                    best = best.min(model.distance(p, &prefix)?);
                }
                if best as f64 > e0 {
                    violations.push(format!(
                        "locus of pivot {k} is {best} away from the geodesic (E0 = {e0})"
                    ));
                }
            }
            let [ia, ib, ic, id] = seq.blocks[k - 1];
            for &idx in &[ia, ib, ic, id] {
                prefix = model.multiply(&prefix, &seq.pi(idx)?)?;
            }
            prefix = model.multiply(&prefix, &seq.w[k])?;
        }
    }
    Ok(AuditReport { pass: violations.is_empty(), n_loci: rec.pivots.len(), violations })
}

/// Exact decomposition of the 4-block step distribution: the product of
/// 4·blocklen independent μ-letters equals β·(uniform on S)⁴ + (1−β)·ν.
/// β is the largest coefficient keeping ν nonnegative.
#[derive(Debug, Clone)]
pub struct MeasureDecomposition {
    pub beta: f64,
    mu: ProbabilityMeasure,
    set_letter_prob: Vec<f64>,
    block_letters: usize,
}

impl MeasureDecomposition {
    pub fn new(mu: &ProbabilityMeasure, set: &SchottkySet) -> Result<MeasureDecomposition> {
        if set.cardinality() == 0 {
            return Err(Error::InvalidInput("empty Schottky set".into()));
        }
        let mut probs = Vec::with_capacity(set.cardinality());
        for s in &set.sequences {
            let mut p = 1.0;
            for letter in s {
                let w = mu.weights().get(letter).copied().unwrap_or(0.0);
                if w <= 0.0 {
                    return Err(Error::HypothesisRejected(
                        "a Schottky letter carries no mass under the base measure".into(),
                    ));
                }
                p *= w;
            }
            probs.push(p);
        }
        let min_p = probs.iter().cloned().fold(f64::INFINITY, f64::min);
        let beta = ((set.cardinality() as f64) * min_p).powi(4).min(1.0);
        Ok(MeasureDecomposition {
            beta,
            mu: mu.clone(),
            set_letter_prob: probs,
            block_letters: set.block_len,
        })
    }

    /// Probability that a specific 4-tuple of set sequences is produced by
    /// independent μ-letters.
    fn tuple_prob(&self, quad: [usize; 4]) -> f64 {
        quad.iter().map(|&i| self.set_letter_prob[i]).product()
    }

    /// Draw one w ~ ν by rejection: sample 4·blocklen μ-letters; if they
    /// spell a tuple of four set sequences, re-draw with the probability
    /// mass assigned to the Schottky part.
    pub fn sample_nu<R: Rng>(&self, set: &SchottkySet, rng: &mut R) -> Result<Word> {
        let model = self.mu.model();
        let card = set.cardinality();
        loop {
            let letters: Vec<Word> = (0..4 * self.block_letters)
                .map(|_| self.mu.sample(rng).clone())
                .collect();
            // match each consecutive block of letters against the set
            let mut quad = [usize::MAX; 4];
            for b in 0..4 {
                let window = &letters[b * self.block_letters..(b + 1) * self.block_letters];
                if let Some(i) = set.sequences.iter().position(|s| s.as_slice() == window) {
                    quad[b] = i;
                } else {
                    break;
                }
            }
            if quad.iter().all(|&i| i != usize::MAX) {
                let p = self.tuple_prob(quad);
                let schottky_mass = self.beta / (card as f64).powi(4);
                if rng.gen::<f64>() < schottky_mass / p {
                    continue; // this draw belongs to the Schottky part
                }
            }
            let mut buf: Vec<Syllable> = Vec::new();
            if model.is_surface() {
                let mut acc = model.identity();
                for l in &letters {
                    acc = model.multiply(&acc, l)?;
                }
                return Ok(acc);
            }
            for l in &letters {
                model.append_reduced(&mut buf, l);
            }
            return model.normalize(buf);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PivotStats {
    pub n: usize,
    pub trials: u64,
    pub beta: f64,
    /// fraction of steps with ΔP = +1
    pub increment_frequency: f64,
    pub increment_se: f64,
    /// (j, observed frequency of ΔP < −j, standard error) for j = 0..=3
    pub decrease_tail: Vec<(usize, f64, f64)>,
    /// mean of #P_n / n
    pub mean_final_ratio: f64,
    /// mean #P_k at a few checkpoints, for linear-growth inspection
    pub growth_checkpoints: Vec<(usize, f64)>,
}

/// Sample block sequences (blocks uniform on S, interstitial words from
/// the ν-part of the measure decomposition) and collect pivot statistics.
pub fn pivot_stats(
    mu: &ProbabilityMeasure,
    set: &SchottkySet,
    n: usize,
    trials: u64,
    seed: u64,
) -> Result<PivotStats> {
    if n < 1 || trials < 1 {
        return Err(Error::InvalidInput("need n >= 1 and trials >= 1".into()));
    }
    let model = mu.model().clone();
    let decomp = MeasureDecomposition::new(mu, set)?;
    let card = set.cardinality();
    let per_trial: Vec<Result<Vec<usize>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stats::rng_for(seed, t, 0);
            let blocks: Vec<[usize; 4]> = (0..n)
                .map(|_| {
                    [
                        rng.gen_range(0..card),
                        rng.gen_range(0..card),
                        rng.gen_range(0..card),
                        rng.gen_range(0..card),
                    ]
                })
                .collect();
            let mut w = Vec::with_capacity(n + 1);
            for _ in 0..=n {
                w.push(decomp.sample_nu(set, &mut rng)?);
            }
            let seq = BlockSequence::new(model.clone(), set.clone(), blocks, w)?;
            Ok(extract_pivots(&seq)?.sizes)
        })
        .collect();
    let mut increments = 0u64;
    let mut steps_total = 0u64;
    let mut tail_counts = [0u64; 4];
    let mut final_ratio_sum = 0.0;
    let checkpoints: Vec<usize> = [n / 4, n / 2, 3 * n / 4, n]
        .iter()
        .cloned()
        .filter(|&c| c >= 1)
        .collect();
    let mut checkpoint_sums = vec![0.0; checkpoints.len()];
    for sizes in per_trial {
        let sizes = sizes?;
        let mut prev = 0i64;
        for &s in &sizes {
            let delta = s as i64 - prev;
            prev = s as i64;
            steps_total += 1;
            if delta == 1 {
                increments += 1;
            }
            for (j, c) in tail_counts.iter_mut().enumerate() {
                if delta < -(j as i64) {
                    *c += 1;
                }
            }
        }
        final_ratio_sum += sizes[n - 1] as f64 / n as f64;
        for (ci, &c) in checkpoints.iter().enumerate() {
            checkpoint_sums[ci] += sizes[c - 1] as f64;
        }
    }
    let steps = steps_total as f64;
    let inc_freq = increments as f64 / steps;
    let binom_se = |p: f64| (p * (1.0 - p) / steps).sqrt();
    Ok(PivotStats {
        n,
        trials,
        beta: decomp.beta,
        increment_frequency: inc_freq,
        increment_se: binom_se(inc_freq),
        decrease_tail: tail_counts
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let p = c as f64 / steps;
                (j, p, binom_se(p.max(1.0 / steps)))
            })
            .collect(),
        mean_final_ratio: final_ratio_sum / trials as f64,
        growth_checkpoints: checkpoints
            .iter()
            .zip(checkpoint_sums)
            .map(|(&c, s)| (c, s / trials as f64))
            .collect(),
    })
}

/// Resample the b-entry of each pivotal block over the whole set and
/// measure how often the pivot survives; the set's defining property
/// makes at least #S − 1 of the #S choices keep it pivotal.
pub fn pivot_resampling_check(seq: &BlockSequence, rec: &PivotRecord) -> Result<(u64, u64)> {
    let card = seq.schottky.cardinality();
    let mut kept = 0u64;
    let mut total = 0u64;
    for &j in &rec.pivots {
        for s in 0..card {
            let mut alt = seq.clone();
            alt.blocks[j - 1][1] = s;
            let alt_rec = extract_pivots(&alt)?;
            total += 1;
            if alt_rec.pivots.contains(&j) {
                kept += 1;
            }
        }
    }
    Ok((kept, total))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionedDistanceStats {
    /// (walk length k, frequency of a near-geodesic intermediate point)
    pub rows: Vec<(i64, f64)>,
    /// slope of log(1 − frequency) against k, when resolvable
    pub gap_slope: Option<f64>,
}

/// Conditioned closeness: with the steps at `fixed` positions pinned,
/// estimate the frequency of walks of length k having some intermediate
/// Z_l·o within `radius` of the geodesic [o, Z_k·o].
pub fn conditioned_distance_stats(
    mu: &ProbabilityMeasure,
    fixed: &[(i64, Word)],
    k_list: &[i64],
    radius: u64,
    trials: u64,
    seed: u64,
) -> Result<ConditionedDistanceStats> {
    let model = mu.model().clone();
    for (_, w) in fixed {
        model.check_owned(w)?;
    }
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        if k < 2 || fixed.iter().any(|&(i, _)| i < 1 || i > k) {
            return Err(Error::InvalidInput("fixed indices must lie in 1..=k, k >= 2".into()));
        }
        let hits: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = stats::rng_for(seed, t, k as u64);
                let mut zs = Vec::with_capacity(k as usize);
                let mut acc = model.identity();
                for i in 1..=k {
                    let step = fixed
                        .iter()
                        .find(|&&(j, _)| j == i)
                        .map(|(_, w)| w.clone())
                        .unwrap_or_else(|| mu.sample(&mut rng).clone());
                    acc = model.multiply(&acc, &step).unwrap();
                    zs.push(acc.clone());
                }
                let geo = geometry::geodesic_points(&model, &model.identity(), zs.last().unwrap())
                    .unwrap();
                let near = zs[..zs.len() - 1].iter().any(|z| {
                    geo.points
                        .iter()
                        .any(|p| model.distance(p, z).unwrap() <= radius)
                });
                if near {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let freq = hits.iter().sum::<f64>() / trials as f64;
        rows.push((k, freq));
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|&&(_, f)| f < 1.0)
        .map(|&(k, f)| (k as f64, (1.0 - f).ln()))
        .collect();
    let gap_slope = if pts.len() >= 2 {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        Some(stats::linear_fit(&xs, &ys).0)
    } else {
        None
    };
    Ok(ConditionedDistanceStats { rows, gap_slope })
}
