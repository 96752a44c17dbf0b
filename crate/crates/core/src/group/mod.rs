//! Exact word arithmetic and geodesic distance for three model families:
//! free groups F_k, free products of cyclic groups, and genus-g surface
//! groups with the standard one-relator presentation.
//!
//! Elements are kept in a canonical normal form so that `Word` equality is
//! group-element equality:
//! * free group: freely reduced syllables;
//! * free product: alternating-factor form, exponents reduced mod the factor
//!   order into 1..order-1;
//! * surface group: shortest representative, minimal in letter order among
//!   the geodesic representatives reachable by half-relator exchanges.

pub mod surface;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

pub type GenId = u16;

/// A maximal run of one generator: `gen^exp` with `exp != 0`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Syllable {
    pub gen: GenId,
    pub exp: i64,
}

/// A group element in the owning model's normal form.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Word {
    model_id: u64,
    syls: Vec<Syllable>,
}

impl Word {
    pub fn model_id(&self) -> u64 {
        self.model_id
    }

    pub fn syllables(&self) -> &[Syllable] {
        &self.syls
    }

    pub fn is_identity(&self) -> bool {
        self.syls.is_empty()
    }

    /// Number of letters (sum of |exp|); equals the geodesic length for
    /// free groups and surface groups but not for finite cyclic factors.
    pub fn letter_len(&self) -> u64 {
        self.syls.iter().map(|s| s.exp.unsigned_abs()).sum()
    }
}

/// Model descriptor. Factor order `None` means an infinite cyclic factor.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Free { rank: u16 },
    FreeProduct { orders: Vec<Option<u32>> },
    Surface { genus: u16 },
}

/// A group model: descriptor plus precomputed rewriting tables.
#[derive(Debug)]
pub struct GroupModel {
    spec: ModelSpec,
    id: u64,
    surface: Option<surface::SurfaceTables>,
}

const FREE_PRODUCT_LETTERS: &[u8] = b"xyzwuvpqrst";

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl GroupModel {
    pub fn new(spec: ModelSpec) -> Result<Arc<GroupModel>> {
        match &spec {
            ModelSpec::Free { rank } => {
                if *rank < 1 || *rank > 26 {
                    return Err(Error::InvalidInput(format!(
                        "free group rank must be in 1..=26, got {rank}"
                    )));
                }
            }
            ModelSpec::FreeProduct { orders } => {
                if orders.len() < 2 || orders.len() > FREE_PRODUCT_LETTERS.len() {
                    return Err(Error::InvalidInput(format!(
                        "free product needs 2..={} factors, got {}",
                        FREE_PRODUCT_LETTERS.len(),
                        orders.len()
                    )));
                }
                for o in orders {
                    if let Some(q) = o {
                        if *q < 2 {
                            return Err(Error::InvalidInput(format!(
                                "cyclic factor order must be >= 2, got {q}"
                            )));
                        }
                    }
                }
            }
            ModelSpec::Surface { genus } => {
                if *genus < 2 || *genus > 16 {
                    return Err(Error::InvalidInput(format!(
                        "surface genus must be in 2..=16, got {genus}"
                    )));
                }
            }
        }
        let id = fnv64(serde_json::to_string(&spec).unwrap().as_bytes());
        let surface = match &spec {
            ModelSpec::Surface { genus } => Some(surface::SurfaceTables::new(*genus)),
            _ => None,
        };
        Ok(Arc::new(GroupModel { spec, id, surface }))
    }

    pub fn free(rank: u16) -> Result<Arc<GroupModel>> {
        Self::new(ModelSpec::Free { rank })
    }

    pub fn free_product(orders: Vec<Option<u32>>) -> Result<Arc<GroupModel>> {
        Self::new(ModelSpec::FreeProduct { orders })
    }

    pub fn surface(genus: u16) -> Result<Arc<GroupModel>> {
        Self::new(ModelSpec::Surface { genus })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn is_tree(&self) -> bool {
        // Unique geodesics between vertices: free groups always, free
        // products only when every finite factor has order 2 (larger finite
        // cyclic factors put cycles in the Cayley graph).
        match &self.spec {
            ModelSpec::Free { .. } => true,
            ModelSpec::FreeProduct { orders } => {
                orders.iter().all(|o| o.map_or(true, |q| q == 2))
            }
            ModelSpec::Surface { .. } => false,
        }
    }

    pub fn is_surface(&self) -> bool {
        matches!(self.spec, ModelSpec::Surface { .. })
    }

    pub fn num_gens(&self) -> u16 {
        match &self.spec {
            ModelSpec::Free { rank } => *rank,
            ModelSpec::FreeProduct { orders } => orders.len() as u16,
            ModelSpec::Surface { genus } => 2 * genus,
        }
    }

    /// Order of the cyclic subgroup generated by a single generator
    /// (None = infinite).
    pub fn gen_order(&self, gen: GenId) -> Option<u32> {
        match &self.spec {
            ModelSpec::FreeProduct { orders } => orders[gen as usize],
            _ => None,
        }
    }

    pub fn identity(&self) -> Word {
        Word { model_id: self.id, syls: Vec::new() }
    }

    /// The word `gen^exp` in normal form.
    pub fn gen_pow(&self, gen: GenId, exp: i64) -> Result<Word> {
        if gen >= self.num_gens() {
            return Err(Error::InvalidInput(format!("generator {gen} out of range")));
        }
        self.normalize(vec![Syllable { gen, exp }])
    }

    /// All distinct nontrivial generator words g^{±1} in a fixed order
    /// (order-2 factors contribute a single element).
    pub fn generators(&self) -> Vec<Word> {
        let mut out = Vec::new();
        for g in 0..self.num_gens() {
            out.push(self.gen_pow(g, 1).unwrap());
            if self.gen_order(g) != Some(2) {
                out.push(self.gen_pow(g, -1).unwrap());
            }
        }
        out
    }

    pub fn check_owned(&self, w: &Word) -> Result<()> {
        if w.model_id == self.id {
            Ok(())
        } else {
            Err(Error::ModelMismatch)
        }
    }

    /// Reduce exponent for one generator; 0 means the syllable vanishes.
    fn reduce_exp(&self, gen: GenId, exp: i64) -> i64 {
        match self.gen_order(gen) {
            None => exp,
            Some(q) => exp.rem_euclid(q as i64),
        }
    }

    /// Append one syllable to a reduced stack, keeping it reduced.
    fn push_syllable(&self, out: &mut Vec<Syllable>, mut s: Syllable) {
        loop {
            s.exp = self.reduce_exp(s.gen, s.exp);
            if s.exp == 0 {
                return;
            }
            match out.last() {
                Some(top) if top.gen == s.gen => {
                    let merged = top.exp + s.exp;
                    out.pop();
                    s = Syllable { gen: s.gen, exp: merged };
                }
                _ => {
                    out.push(s);
                    return;
                }
            }
        }
    }

    fn reduce_syllables(&self, input: impl IntoIterator<Item = Syllable>) -> Vec<Syllable> {
        let mut out = Vec::new();
        for s in input {
            self.push_syllable(&mut out, s);
        }
        out
    }

    /// Normal form of an arbitrary syllable sequence.
    pub fn normalize(&self, syls: Vec<Syllable>) -> Result<Word> {
        let reduced = self.reduce_syllables(syls);
        let syls = match &self.surface {
            Some(tables) => {
                let letters = surface::syllables_to_letters(&reduced);
                let canon = tables.canonical(&letters)?;
                surface::letters_to_syllables(&canon)
            }
            None => reduced,
        };
        Ok(Word { model_id: self.id, syls })
    }

    pub fn multiply(&self, u: &Word, v: &Word) -> Result<Word> {
        self.check_owned(u)?;
        self.check_owned(v)?;
        self.normalize(u.syls.iter().chain(v.syls.iter()).copied().collect())
    }

    pub fn inverse(&self, w: &Word) -> Result<Word> {
        self.check_owned(w)?;
        self.normalize(
            w.syls
                .iter()
                .rev()
                .map(|s| Syllable { gen: s.gen, exp: -s.exp })
                .collect(),
        )
    }

    /// Append v to a running (already reduced) syllable buffer in place.
    /// Equivalent to multiply but without copying the left factor; used by
    /// the walk engine for long products. Not valid for surface groups.
    pub fn append_reduced(&self, buf: &mut Vec<Syllable>, v: &Word) {
        debug_assert!(self.surface.is_none());
        for &s in &v.syls {
            self.push_syllable(buf, s);
        }
    }

    /// Geodesic word length ‖w‖ = d(o, wo) in the standard Cayley graph.
    pub fn norm(&self, w: &Word) -> Result<u64> {
        self.check_owned(w)?;
        let mut total = 0u64;
        for s in &w.syls {
            total += match self.gen_order(s.gen) {
                None => s.exp.unsigned_abs(),
                Some(q) => {
                    // distance on the q-cycle; normal form has exp in 1..q
                    let e = s.exp.rem_euclid(q as i64) as u64;
                    e.min(q as u64 - e)
                }
            };
        }
        Ok(total)
    }

    /// Symmetrized norm ‖w‖ + ‖w⁻¹‖; equals 2‖w‖ for these models.
    pub fn norm_sym(&self, w: &Word) -> Result<u64> {
        Ok(self.norm(w)? + self.norm(&self.inverse(w)?)?)
    }

    /// d(uo, vo) = ‖u⁻¹v‖, with a common-prefix fast path on free groups.
    pub fn distance(&self, u: &Word, v: &Word) -> Result<u64> {
        self.check_owned(u)?;
        self.check_owned(v)?;
        if matches!(self.spec, ModelSpec::Free { .. }) {
            return Ok(free_distance(&u.syls, &v.syls));
        }
        let w = self.multiply(&self.inverse(u)?, v)?;
        self.norm(&w)
    }

    /// Serialize to the letter alphabet (capital = inverse), `e` = identity.
    pub fn format(&self, w: &Word) -> String {
        if w.is_identity() {
            return "e".to_string();
        }
        let mut out = String::new();
        for s in &w.syls {
            let (name, reps, upper) = match &self.spec {
                ModelSpec::Surface { .. } => {
                    let (letter, idx) = surface::gen_name(s.gen);
                    (format!("{letter}{idx}"), s.exp.unsigned_abs(), s.exp < 0)
                }
                ModelSpec::Free { .. } => {
                    let c = (b'a' + s.gen as u8) as char;
                    (c.to_string(), s.exp.unsigned_abs(), s.exp < 0)
                }
                ModelSpec::FreeProduct { .. } => {
                    let c = FREE_PRODUCT_LETTERS[s.gen as usize] as char;
                    (c.to_string(), s.exp.unsigned_abs(), s.exp < 0)
                }
            };
            let name = if upper { name.to_uppercase() } else { name };
            for _ in 0..reps {
                out.push_str(&name);
            }
        }
        out
    }

    /// Parse the serialization produced by `format`; also accepts an
    /// explicit index suffix (e.g. `a1` for `a`) and the empty string.
    pub fn parse(&self, s: &str) -> Result<Word> {
        let s = s.trim();
        if s.is_empty() || s == "e" {
            return Ok(self.identity());
        }
        let mut syls = Vec::new();
        let chars: Vec<char> = s.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if !c.is_ascii_alphabetic() {
                return Err(Error::InvalidInput(format!("bad character {c:?} in word {s:?}")));
            }
            i += 1;
            let mut idx: Option<u32> = None;
            while i < chars.len() && chars[i].is_ascii_digit() {
                idx = Some(idx.unwrap_or(0) * 10 + chars[i].to_digit(10).unwrap());
                i += 1;
            }
            let sign: i64 = if c.is_ascii_uppercase() { -1 } else { 1 };
            let lower = c.to_ascii_lowercase();
            let gen = self.lookup_gen(lower, idx, s)?;
            syls.push(Syllable { gen, exp: sign });
        }
        self.normalize(syls)
    }

    fn lookup_gen(&self, letter: char, idx: Option<u32>, ctx: &str) -> Result<GenId> {
        let bad = || Error::InvalidInput(format!("unknown generator {letter}{idx:?} in {ctx:?}"));
        match &self.spec {
            ModelSpec::Free { rank } => {
                if idx.is_some() && idx != Some(1) {
                    return Err(bad());
                }
                let g = (letter as u8).wrapping_sub(b'a') as u16;
                if g < *rank {
                    Ok(g)
                } else {
                    Err(bad())
                }
            }
            ModelSpec::FreeProduct { orders } => {
                if idx.is_some() && idx != Some(1) {
                    return Err(bad());
                }
                FREE_PRODUCT_LETTERS[..orders.len()]
                    .iter()
                    .position(|&b| b as char == letter)
                    .map(|p| p as u16)
                    .ok_or_else(bad)
            }
            ModelSpec::Surface { genus } => {
                let idx = idx.ok_or_else(bad)?;
                if idx < 1 || idx > *genus as u32 {
                    return Err(bad());
                }
                let pair = (idx - 1) as u16;
                match letter {
                    'a' => Ok(2 * pair),
                    'b' => Ok(2 * pair + 1),
                    _ => Err(bad()),
                }
            }
        }
    }

    /// The surface relator as a Word (identity element; exposed for tests).
    pub fn relator_letter_length(&self) -> Option<usize> {
        self.surface.as_ref().map(|t| t.relator_len())
    }

    /// Exhaustive ball of radius r around the identity, grouped by distance.
    pub fn ball(&self, radius: u32, cap: usize) -> Result<Ball> {
        let gens = self.generators();
        let mut seen: HashSet<Word> = HashSet::new();
        let mut layers: Vec<Vec<Word>> = Vec::new();
        let mut frontier = vec![self.identity()];
        seen.insert(self.identity());
        layers.push(frontier.clone());
        let mut total = 1usize;
        for _ in 1..=radius {
            let mut next = BTreeSet::new();
            for w in &frontier {
                for g in &gens {
                    let u = self.multiply(w, g)?;
                    if !seen.contains(&u) {
                        next.insert(u);
                    }
                }
            }
            total += next.len();
            if total > cap {
                return Err(Error::ResourceLimit(format!(
                    "ball of radius {radius} exceeds cap {cap} elements"
                )));
            }
            frontier = next.into_iter().collect();
            for w in &frontier {
                seen.insert(w.clone());
            }
            layers.push(frontier.clone());
            if frontier.is_empty() {
                break;
            }
        }
        Ok(Ball { layers })
    }
}

/// Tree distance between freely reduced words of a free group:
/// |u| + |v| - 2 * (longest common prefix in letters).
fn free_distance(u: &[Syllable], v: &[Syllable]) -> u64 {
    let lu: u64 = u.iter().map(|s| s.exp.unsigned_abs()).sum();
    let lv: u64 = v.iter().map(|s| s.exp.unsigned_abs()).sum();
    let mut common = 0u64;
    for (a, b) in u.iter().zip(v.iter()) {
        if a.gen == b.gen && a.exp.signum() == b.exp.signum() {
            let shared = a.exp.unsigned_abs().min(b.exp.unsigned_abs());
            common += shared;
            if a.exp != b.exp {
                break;
            }
        } else {
            break;
        }
    }
    lu + lv - 2 * common
}

/// BFS ball: `layers[r]` holds the sphere of radius r, sorted.
#[derive(Debug, Clone)]
pub struct Ball {
    layers: Vec<Vec<Word>>,
}

impl Ball {
    pub fn sphere(&self, r: usize) -> &[Word] {
        self.layers.get(r).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn sphere_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.len()).collect()
    }

    pub fn radius(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    pub fn iter_with_distance(&self) -> impl Iterator<Item = (&Word, u32)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(r, l)| l.iter().map(move |w| (w, r as u32)))
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Outcome of a corridor test on a surface group axis w = a1^k b2^k: when
/// the projections of x, y onto the cyclic axis {w^i} are separated enough,
/// distance differences across the corridor are rigid.
#[derive(Debug, Clone, Serialize)]
pub struct CorridorReport {
    pub applicable: bool,
    pub reason: String,
    pub proj_x: Option<i64>,
    pub proj_y: Option<i64>,
    pub proj_xp: Option<i64>,
    pub proj_yp: Option<i64>,
    pub holds: Option<bool>,
    pub diff_xy: Option<i64>,
    pub diff_axis: Option<i64>,
    pub diff_xyp: Option<i64>,
}

/// Index of the closest axis point w^i (|i| <= range) if it is unique.
fn axis_projection_index(
    model: &GroupModel,
    w: &Word,
    x: &Word,
    range: i64,
) -> Result<Option<i64>> {
    let mut best: Option<(u64, i64)> = None;
    let mut unique = true;
    let mut point = model.identity();
    let mut dists = HashMap::new();
    for i in 0..=range {
        dists.insert(i, model.distance(&point, x)?);
        point = model.multiply(&point, w)?;
    }
    let winv = model.inverse(w)?;
    point = model.identity();
    for i in 1..=range {
        point = model.multiply(&point, &winv)?;
        dists.insert(-i, model.distance(&point, x)?);
    }
    for i in -range..=range {
        let d = dists[&i];
        match best {
            None => best = Some((d, i)),
            Some((bd, _)) if d < bd => {
                best = Some((d, i));
                unique = true;
            }
            Some((bd, _)) if d == bd => unique = false,
            _ => {}
        }
    }
    Ok(best.filter(|_| unique).map(|(_, i)| i))
}

/// Checks the corridor distance equalities for w = a1^k b2^k on a surface
/// group: with projection indices n = proj(x), m = proj(y), n' = proj(x'),
/// m' = proj(y') satisfying n < m - 5, n' <= n, m' >= n + 4, verify
/// d(x,y) - d(x',y) = d(x,w^{n+2}) - d(x',w^{n+2}) = d(x,y') - d(x',y').
pub fn corridor_check(
    model: &GroupModel,
    k: u32,
    range: i64,
    x: &Word,
    xp: &Word,
    y: &Word,
    yp: &Word,
) -> Result<CorridorReport> {
    if !model.is_surface() {
        return Err(Error::InvalidInput("corridor_check requires a surface group".into()));
    }
    if k < 1 {
        return Err(Error::InvalidInput("corridor exponent k must be >= 1".into()));
    }
    // a1 = generator 0, b2 = generator 3 (needs genus >= 2, guaranteed).
    let a = model.gen_pow(0, k as i64)?;
    let b = model.gen_pow(3, k as i64)?;
    let w = model.multiply(&a, &b)?;
    let pn = axis_projection_index(model, &w, x, range)?;
    let pm = axis_projection_index(model, &w, y, range)?;
    let pnp = axis_projection_index(model, &w, xp, range)?;
    let pmp = axis_projection_index(model, &w, yp, range)?;
    let mut report = CorridorReport {
        applicable: false,
        reason: String::new(),
        proj_x: pn,
        proj_y: pm,
        proj_xp: pnp,
        proj_yp: pmp,
        holds: None,
        diff_xy: None,
        diff_axis: None,
        diff_xyp: None,
    };
    let (n, m, np, mp) = match (pn, pm, pnp, pmp) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => {
            report.reason = "projection onto the axis is not a unique point".into();
            return Ok(report);
        }
    };
    if !(n < m - 5 && np <= n && mp >= n + 4) {
        report.reason = format!(
            "projection indices (n={n}, m={m}, n'={np}, m'={mp}) outside the corridor regime"
        );
        return Ok(report);
    }
    report.applicable = true;
    let mut gate = model.identity();
    let step = if n + 2 >= 0 { w.clone() } else { model.inverse(&w)? };
    for _ in 0..(n + 2).abs() {
        gate = model.multiply(&gate, &step)?;
    }
    let dxy = model.distance(x, y)? as i64 - model.distance(xp, y)? as i64;
    let daxis = model.distance(x, &gate)? as i64 - model.distance(xp, &gate)? as i64;
    let dxyp = model.distance(x, yp)? as i64 - model.distance(xp, yp)? as i64;
    report.diff_xy = Some(dxy);
    report.diff_axis = Some(daxis);
    report.diff_xyp = Some(dxyp);
    report.holds = Some(dxy == daxis && daxis == dxyp);
    Ok(report)
}
