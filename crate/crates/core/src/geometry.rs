//! Orbit geometry: closest-point projections, the C-alignment predicate on
//! chains of paths, contracting-axis and squeezing certification, and
//! detection of two-sided squeezing events on sample paths.
//!
//! Tree models (free groups, free products of order-2 factors) have unique
//! geodesics, so every verdict there is exact. Free products with larger
//! finite factors and surface groups get deterministic geodesic
//! representatives and budget-bounded enumeration with three-valued
//! verdicts.

use crate::error::{Error, Result};
use crate::group::{GroupModel, Word};
use crate::walk::SamplePath;
use serde::Serialize;
use std::sync::Arc;

/// An ordered list of orbit points; the discrete trace of an axis or
/// geodesic. Endpoints are points[0] and points[last].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisPath {
    pub points: Vec<Word>,
}

impl AxisPath {
    pub fn new(points: Vec<Word>) -> Result<AxisPath> {
        if points.is_empty() {
            return Err(Error::InvalidInput("axis path needs at least one point".into()));
        }
        Ok(AxisPath { points })
    }

    pub fn single(p: Word) -> AxisPath {
        AxisPath { points: vec![p] }
    }

    pub fn start(&self) -> &Word {
        self.points.first().unwrap()
    }

    pub fn end(&self) -> &Word {
        self.points.last().unwrap()
    }

    /// Left-translate every point by g.
    pub fn translated(&self, model: &GroupModel, g: &Word) -> Result<AxisPath> {
        let points = self
            .points
            .iter()
            .map(|p| model.multiply(g, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(AxisPath { points })
    }
}

/// The orbit segment (g^lo · o, …, g^hi · o).
pub fn axis_of(model: &Arc<GroupModel>, g: &Word, lo: i64, hi: i64) -> Result<AxisPath> {
    if lo > hi {
        return Err(Error::InvalidInput("axis range is empty".into()));
    }
    let ginv = model.inverse(g)?;
    let mut points = Vec::with_capacity((hi - lo + 1) as usize);
    let mut p = model.identity();
    let steps = if lo >= 0 { lo } else { -lo };
    let dir = if lo >= 0 { g } else { &ginv };
    for _ in 0..steps {
        p = model.multiply(&p, dir)?;
    }
    points.push(p.clone());
    for _ in lo..hi {
        p = model.multiply(&p, g)?;
        points.push(p.clone());
    }
    Ok(AxisPath { points })
}

/// Prefix-orbit path Γ(s) = (o, s₁o, s₁s₂o, …) of a generator sequence.
pub fn prefix_path(model: &GroupModel, seq: &[Word]) -> Result<AxisPath> {
    let mut points = vec![model.identity()];
    let mut p = model.identity();
    for s in seq {
        p = model.multiply(&p, s)?;
        points.push(p.clone());
    }
    Ok(AxisPath { points })
}

/// Closest-point projection of x onto the axis vertex set: all minimizers,
/// in axis order.
pub fn project(model: &GroupModel, axis: &AxisPath, x: &Word) -> Result<Vec<Word>> {
    let mut best = u64::MAX;
    let mut out: Vec<Word> = Vec::new();
    for p in &axis.points {
        let d = model.distance(p, x)?;
        if d < best {
            best = d;
            out.clear();
            out.push(p.clone());
        } else if d == best && !out.contains(p) {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Max pairwise distance of a point set.
pub fn diameter(model: &GroupModel, points: &[Word]) -> Result<u64> {
    let mut d = 0;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            d = d.max(model.distance(&points[i], &points[j])?);
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Serialize)]
pub struct AlignmentReport {
    /// per adjacent pair: (diam(end_i ∪ π_{γ_i}(γ_{i+1})), diam(start_{i+1} ∪ π_{γ_{i+1}}(γ_i)))
    pub pair_diameters: Vec<(u64, u64)>,
    pub c: f64,
    pub aligned: bool,
}

/// C-alignment of a chain: consecutive paths project near each other's
/// facing endpoints. Single-point paths are allowed (their only projection
/// set is themselves), which covers chains anchored at a point.
pub fn is_aligned(model: &GroupModel, paths: &[AxisPath], c: f64) -> Result<AlignmentReport> {
    if paths.len() < 2 {
        return Err(Error::InvalidInput("alignment needs at least two paths".into()));
    }
    let mut pair_diameters = Vec::with_capacity(paths.len() - 1);
    let mut aligned = true;
    for pair in paths.windows(2) {
        let (g1, g2) = (&pair[0], &pair[1]);
        let mut fwd_set = vec![g1.end().clone()];
        for q in &g2.points {
            for p in project(model, g1, q)? {
                if !fwd_set.contains(&p) {
                    fwd_set.push(p);
                }
            }
        }
        let mut bwd_set = vec![g2.start().clone()];
        for q in &g1.points {
            for p in project(model, g2, q)? {
                if !bwd_set.contains(&p) {
                    bwd_set.push(p);
                }
            }
        }
        let d1 = diameter(model, &fwd_set)?;
        let d2 = diameter(model, &bwd_set)?;
        aligned &= (d1 as f64) < c && (d2 as f64) < c;
        pair_diameters.push((d1, d2));
    }
    Ok(AlignmentReport { pair_diameters, c, aligned })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Certified,
    Refuted,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub verdict: Verdict,
    pub exact: bool,
    pub detail: String,
}

/// Is the path a geodesic? (Sum of consecutive gaps equals the endpoint
/// distance and every gap is at least 1.)
pub fn is_geodesic_path(model: &GroupModel, axis: &AxisPath) -> Result<bool> {
    if axis.points.len() == 1 {
        return Ok(true);
    }
    let mut total = 0u64;
    for pair in axis.points.windows(2) {
        let d = model.distance(&pair[0], &pair[1])?;
        if d < 1 {
            return Ok(false);
        }
        total += d;
    }
    Ok(total == model.distance(axis.start(), axis.end())?)
}

/// Certify or refute that the path is a K-contracting axis.
///
/// Tree models: geodesics in a tree project to single points on any
/// geodesic they avoid, so a geodesic path is certified exactly; a path
/// failing the quasigeodesic inequality d(p_i, p_j) ≥ |i−j|/K − K is
/// refuted with the witnessing index pair. Surface groups: geodesics inside
/// a ball around the axis are enumerated up to the test budget.
pub fn is_contracting_axis(
    model: &Arc<GroupModel>,
    axis: &AxisPath,
    k: f64,
    test_budget: usize,
) -> Result<ContractionReport> {
    if test_budget < 1 {
        return Err(Error::InvalidInput("test_budget must be >= 1".into()));
    }
    // quasigeodesic screen, any model
    let n = axis.points.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = model.distance(&axis.points[i], &axis.points[j])? as f64;
            if d < (j - i) as f64 / k - k {
                return Ok(ContractionReport {
                    verdict: Verdict::Refuted,
                    exact: true,
                    detail: format!("quasigeodesic inequality fails at indices ({i}, {j})"),
                });
            }
        }
    }
    if model.is_tree() {
        return if is_geodesic_path(model, axis)? {
            Ok(ContractionReport {
                verdict: Verdict::Certified,
                exact: true,
                detail: "geodesic in a tree: avoiding geodesics project to single points".into(),
            })
        } else {
            Ok(ContractionReport {
                verdict: Verdict::Inconclusive,
                exact: false,
                detail: "non-geodesic quasigeodesic in a tree; not certified".into(),
            })
        };
    }
    // sampled check: geodesics between ball points that avoid the
    // K-neighborhood of the axis must have projection diameter < K
    let radius = (k.ceil() as u32 + 2).min(4);
    let ball = model.ball(radius, 1_000_000)?;
    let anchors: Vec<&Word> = axis.points.iter().collect();
    let mut tested = 0usize;
    for (i, a) in anchors.iter().enumerate() {
        for b in anchors.iter().skip(i + 1) {
            for (u, _) in ball.iter_with_distance() {
                if tested >= test_budget {
                    return Ok(ContractionReport {
                        verdict: Verdict::Certified,
                        exact: false,
                        detail: format!("sampled: {tested} avoiding geodesics, all projections < {k}"),
                    });
                }
                let x = model.multiply(a, u)?;
                let y = model.multiply(b, u)?;
                let geo = geodesic_points(model, &x, &y)?;
                let avoids = geo
                    .points
                    .iter()
                    .map(|p| {
                        axis.points
                            .iter()
                            .map(|q| model.distance(p, q).unwrap())
                            .min()
                            .unwrap()
                    })
                    .all(|d| d as f64 >= k);
                if !avoids {
                    continue;
                }
                tested += 1;
                let mut proj = Vec::new();
                for p in &geo.points {
                    proj.extend(project(model, axis, p)?);
                }
                if diameter(model, &proj)? as f64 >= k {
                    return Ok(ContractionReport {
                        verdict: Verdict::Refuted,
                        exact: true,
                        detail: format!(
                            "witness geodesic from {} to {} has projection diameter >= {k}",
                            model.format(&x),
                            model.format(&y)
                        ),
                    });
                }
            }
        }
    }
    Ok(ContractionReport {
        verdict: Verdict::Certified,
        exact: false,
        detail: format!("sampled: {tested} avoiding geodesics, all projections < {k}"),
    })
}

/// A geodesic vertex path from u to v.
///
/// Tree-like models: normal-form prefixes (the unique geodesic). Otherwise:
/// greedy descent, deterministic in generator order.
pub fn geodesic_points(model: &Arc<GroupModel>, u: &Word, v: &Word) -> Result<AxisPath> {
    let mut points = vec![u.clone()];
    let gens = model.generators();
    let mut p = u.clone();
    let mut remaining = model.distance(&p, v)?;
    while remaining > 0 {
        let mut advanced = false;
        for g in &gens {
            let q = model.multiply(&p, g)?;
            let d = model.distance(&q, v)?;
            if d < remaining {
                p = q;
                remaining = d;
                points.push(p.clone());
                advanced = true;
                break;
            }
        }
        if !advanced {
            return Err(Error::InvalidInput("no descending generator step found".into()));
        }
    }
    Ok(AxisPath { points })
}

#[derive(Debug, Clone, Serialize)]
pub struct SqueezeReport {
    pub verdict: Verdict,
    pub exact: bool,
    /// the squeezing point p (serialized) when certified
    pub witness: Option<String>,
    pub detail: String,
}

/// Certify that a geodesic is ε-squeezing: some p on it is within ε of
/// every geodesic whose 0.01L-neighborhood contains the whole path.
pub fn is_squeezing(
    model: &Arc<GroupModel>,
    geodesic: &AxisPath,
    eps: f64,
    test_budget: usize,
) -> Result<SqueezeReport> {
    if !is_geodesic_path(model, geodesic)? {
        return Err(Error::InvalidInput("is_squeezing requires a geodesic path".into()));
    }
    let len = model.distance(geodesic.start(), geodesic.end())?;
    if model.is_tree() || (len as f64) * 0.01 < 1.0 {
        // Tree: interior vertices are cut vertices. Short paths anywhere:
        // a 0.01L-neighborhood of radius < 1 means vertex containment, so
        // any fellow-traveling geodesic passes through every vertex.
        let p = &geodesic.points[geodesic.points.len() / 2];
        return Ok(SqueezeReport {
            verdict: Verdict::Certified,
            exact: true,
            witness: Some(model.format(p)),
            detail: if model.is_tree() {
                "tree cut vertex".into()
            } else {
                "neighborhood radius below 1: containment is vertex-wise".into()
            },
        });
    }
    // Budget-bounded enumeration: sample geodesics γ' through neighborhoods
    // of the endpoints, keep those containing the path in their
    // 0.01L-neighborhood, and look for a common near point.
    let r = ((len as f64) * 0.01).floor() as u32;
    let ball = model.ball(r, 1_000_000)?;
    let mut candidates: Vec<AxisPath> = Vec::new();
    'outer: for (u, _) in ball.iter_with_distance() {
        for (v, _) in ball.iter_with_distance() {
            if candidates.len() >= test_budget {
                break 'outer;
            }
            let x = model.multiply(geodesic.start(), u)?;
            let y = model.multiply(geodesic.end(), v)?;
            let gp = geodesic_points(model, &x, &y)?;
            let contains_all = geodesic.points.iter().all(|p| {
                gp.points
                    .iter()
                    .map(|q| model.distance(p, q).unwrap())
                    .min()
                    .unwrap()
                    <= r as u64
            });
            if contains_all {
                candidates.push(gp);
            }
        }
    }
    let mut best: Option<(u64, &Word)> = None;
    for p in &geodesic.points {
        let worst = candidates
            .iter()
            .map(|gp| {
                gp.points
                    .iter()
                    .map(|q| model.distance(p, q).unwrap())
                    .min()
                    .unwrap()
            })
            .max()
            .unwrap_or(0);
        if best.map_or(true, |(b, _)| worst < b) {
            best = Some((worst, p));
        }
    }
    match best {
        Some((worst, p)) if (worst as f64) < eps || worst == 0 => Ok(SqueezeReport {
            verdict: Verdict::Certified,
            exact: false,
            witness: Some(model.format(p)),
            detail: format!("{} enumerated fellow geodesics, max gap {worst}", candidates.len()),
        }),
        Some((worst, _)) => Ok(SqueezeReport {
            verdict: Verdict::Inconclusive,
            exact: false,
            witness: None,
            detail: format!(
                "best point misses a sampled fellow geodesic by {worst} (eps = {eps})"
            ),
        }),
        None => Ok(SqueezeReport {
            verdict: Verdict::Inconclusive,
            exact: false,
            witness: None,
            detail: "no candidate geodesics enumerated".into(),
        }),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SqueezeEventWitness {
    pub gamma: Vec<String>,
    pub gamma_prime: Vec<String>,
    pub p: String,
    pub p_prime: String,
    /// inclusive ranges of (n, m) over which the conditions were verified
    pub verified_n: (i64, i64),
    pub verified_m: (i64, i64),
}

/// Detect the two-sided squeezing event at level k on a sample path: a
/// short geodesic segment γ shared by all [o, Z_n o] and [Z_{-m} o, Z_n o],
/// and a segment γ' shared by all [Z_{-m} o, Z_{-1} o] and
/// [Z_{-m} o, Z_n o], for every n, m ≥ k within the path's range.
///
/// Exact for tree models (unique geodesics, vertex containment); for other
/// models the deterministic geodesic representative is used.
pub fn detect_squeeze_event(
    path: &SamplePath,
    k: i64,
    _eps: f64,
) -> Result<Option<SqueezeEventWitness>> {
    if k < 1 || path.n() < k || path.m() < k {
        return Err(Error::Range(format!(
            "path covers n in -{}..={}, need both sides >= k = {k}",
            path.m(),
            path.n()
        )));
    }
    let model = path.model().clone();
    let o = model.identity();
    let z = |i: i64| path.z(i).unwrap().clone();

    // positive-side segment: on all [o, Z_n o] and all [Z_-m o, Z_n o]
    let base_pos = geodesic_points(&model, &o, &z(k))?;
    let mut pos_ok: Vec<Word> = base_pos.points.clone();
    for n in k..=path.n() {
        let zn = z(n);
        let geo_on = geodesic_points(&model, &o, &zn)?;
        pos_ok.retain(|p| geo_on.points.contains(p));
        for m in k..=path.m() {
            let geo_mn = geodesic_points(&model, &z(-m), &zn)?;
            pos_ok.retain(|p| geo_mn.points.contains(p));
        }
    }
    // negative-side segment: on all [Z_-m o, Z_-1 o] and all [Z_-m o, Z_n o]
    let base_neg = geodesic_points(&model, &z(-k), &z(-1))?;
    let mut neg_ok: Vec<Word> = base_neg.points.clone();
    for m in k..=path.m() {
        let zm = z(-m);
        let geo_neg = geodesic_points(&model, &zm, &z(-1))?;
        neg_ok.retain(|p| geo_neg.points.contains(p));
        for n in k..=path.n() {
            let geo_mn = geodesic_points(&model, &zm, &z(n))?;
            neg_ok.retain(|p| geo_mn.points.contains(p));
        }
    }
    let seg = |ok: &[Word], base: &AxisPath| -> Option<Vec<Word>> {
        // first run of 3 consecutive base vertices surviving every filter
        let pts = &base.points;
        for w in pts.windows(3) {
            if w.iter().all(|p| ok.contains(p)) {
                return Some(w.to_vec());
            }
        }
        None
    };
    let (Some(gamma), Some(gamma_p)) = (seg(&pos_ok, &base_pos), seg(&neg_ok, &base_neg)) else {
        return Ok(None);
    };
    Ok(Some(SqueezeEventWitness {
        p: model.format(&gamma[1]),
        p_prime: model.format(&gamma_p[1]),
        gamma: gamma.iter().map(|w| model.format(w)).collect(),
        gamma_prime: gamma_p.iter().map(|w| model.format(w)).collect(),
        verified_n: (k, path.n()),
        verified_m: (k, path.m()),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f2() -> Arc<GroupModel> {
        GroupModel::free(2).unwrap()
    }

    #[test]
    fn projection_on_a_axis() {
        let m = f2();
        let a = m.parse("a").unwrap();
        let axis = axis_of(&m, &a, 0, 2).unwrap();
        let on_axis = project(&m, &axis, &m.parse("a").unwrap()).unwrap();
        assert_eq!(on_axis, vec![m.parse("a").unwrap()]);
        let from_b = project(&m, &axis, &m.parse("b").unwrap()).unwrap();
        assert_eq!(from_b, vec![m.identity()]);
        let deep = project(&m, &axis, &m.parse("aab").unwrap()).unwrap();
        assert_eq!(deep, vec![m.parse("aa").unwrap()]);
    }

    #[test]
    fn alignment_examples() {
        let m = f2();
        let g1 = AxisPath::new(vec![m.identity(), m.parse("a").unwrap(), m.parse("aa").unwrap()])
            .unwrap();
        let g2 = AxisPath::new(vec![
            m.parse("aa").unwrap(),
            m.parse("aab").unwrap(),
            m.parse("aabb").unwrap(),
        ])
        .unwrap();
        let rep = is_aligned(&m, &[g1.clone(), g2], 0.5).unwrap();
        assert!(rep.aligned);
        assert_eq!(rep.pair_diameters, vec![(0, 0)]);

        let back = AxisPath::new(vec![m.parse("aa").unwrap(), m.parse("a").unwrap()]).unwrap();
        let rep1 = is_aligned(&m, &[g1.clone(), back.clone()], 1.0).unwrap();
        assert!(!rep1.aligned);
        let rep2 = is_aligned(&m, &[g1.clone(), back], 1.5).unwrap();
        assert!(rep2.aligned);

        let rev = AxisPath::new(g1.points.iter().rev().cloned().collect()).unwrap();
        let rep3 = is_aligned(&m, &[g1.clone(), rev], 2.0).unwrap();
        assert!(!rep3.aligned);
    }

    #[test]
    fn point_path_alignment() {
        let m = f2();
        let point = AxisPath::single(m.identity());
        let axis = AxisPath::new(vec![m.identity(), m.parse("a").unwrap()]).unwrap();
        let rep = is_aligned(&m, &[point, axis], 1.0).unwrap();
        assert!(rep.aligned);
    }

    #[test]
    fn contracting_axis_verdicts() {
        let m = f2();
        let a = m.parse("a").unwrap();
        let axis = axis_of(&m, &a, -2, 2).unwrap();
        let rep = is_contracting_axis(&m, &axis, 1.0, 10).unwrap();
        assert_eq!(rep.verdict, Verdict::Certified);
        assert!(rep.exact);

        let zigzag = AxisPath::new(vec![
            m.identity(),
            m.parse("a").unwrap(),
            m.identity(),
            m.parse("a").unwrap(),
            m.identity(),
            m.parse("a").unwrap(),
        ])
        .unwrap();
        let rep = is_contracting_axis(&m, &zigzag, 1.2, 10).unwrap();
        assert_eq!(rep.verdict, Verdict::Refuted);
    }

    #[test]
    fn squeezing_in_trees() {
        let m = f2();
        let geo = AxisPath::new(vec![m.identity(), m.parse("a").unwrap(), m.parse("aa").unwrap()])
            .unwrap();
        let rep = is_squeezing(&m, &geo, 0.5, 10).unwrap();
        assert_eq!(rep.verdict, Verdict::Certified);
        assert_eq!(rep.witness, Some("a".to_string()));

        let single = AxisPath::new(vec![m.identity(), m.parse("b").unwrap()]).unwrap();
        let rep = is_squeezing(&m, &single, 0.5, 10).unwrap();
        assert_eq!(rep.verdict, Verdict::Certified);

        let not_geo = AxisPath::new(vec![m.identity(), m.parse("a").unwrap(), m.identity()])
            .unwrap();
        assert!(is_squeezing(&m, &not_geo, 0.5, 10).is_err());
    }

    #[test]
    fn surface_corridor_segment_is_squeezing() {
        let m = GroupModel::surface(2).unwrap();
        let w = m.parse("a1a1b2b2").unwrap();
        let geo = axis_of(&m, &w, 0, 2).unwrap();
        // expand to unit steps so the path is a genuine vertex geodesic
        let full = geodesic_points(&m, geo.start(), geo.end()).unwrap();
        let rep = is_squeezing(&m, &full, 1.0, 50).unwrap();
        assert_eq!(rep.verdict, Verdict::Certified);
    }

    #[test]
    fn geodesic_points_tree_and_surface() {
        let m = f2();
        let u = m.parse("ab").unwrap();
        let v = m.parse("aB").unwrap();
        let geo = geodesic_points(&m, &u, &v).unwrap();
        assert_eq!(geo.points.len(), 3);
        assert_eq!(geo.points[1], m.parse("a").unwrap());

        let s = GroupModel::surface(2).unwrap();
        let x = s.parse("a1b1").unwrap();
        let y = s.parse("b2").unwrap();
        let geo = geodesic_points(&s, &x, &y).unwrap();
        assert_eq!(geo.points.len() as u64, s.distance(&x, &y).unwrap() + 1);
    }
}
