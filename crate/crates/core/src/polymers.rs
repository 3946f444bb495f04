//! Block-torus combinatorics: polymers, small sets, L-closure, set
//! regulators, and exact circle-product / reblocking identities by
//! enumeration on tiny volumes.
//!
//! Connectivity is closed-block intersection, so blocks meeting at a
//! corner count as adjacent and a polymer is small when it is connected
//! with at most 2^d = 4 blocks.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};

/// Torus of unit blocks (rectangular at desk scale; square in the RG runs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockTorus {
    pub nx: usize,
    pub ny: usize,
}

impl BlockTorus {
    pub fn new(blocks_per_side: usize) -> Result<Self> {
        Self::new_rect(blocks_per_side, blocks_per_side)
    }

    pub fn new_rect(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Config(format!(
                "block torus needs >= 2 blocks per axis, got {nx}x{ny}"
            )));
        }
        Ok(Self { nx, ny })
    }

    /// Side length of a square torus (panics on rectangular ones).
    pub fn blocks_per_side(&self) -> usize {
        assert_eq!(self.nx, self.ny, "square torus expected");
        self.nx
    }

    #[inline]
    pub fn wrap(&self, c: (i32, i32)) -> (i32, i32) {
        (
            c.0.rem_euclid(self.nx as i32),
            c.1.rem_euclid(self.ny as i32),
        )
    }

    pub fn n_blocks(&self) -> usize {
        self.nx * self.ny
    }

    pub fn all_blocks(&self) -> Vec<(i32, i32)> {
        (0..self.ny as i32)
            .flat_map(|y| (0..self.nx as i32).map(move |x| (x, y)))
            .collect()
    }

    /// King-move neighbors (corner adjacency counts).
    pub fn neighbors(&self, c: (i32, i32)) -> [(i32, i32); 8] {
        let mut out = [(0, 0); 8];
        let mut k = 0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                out[k] = self.wrap((c.0 + dx, c.1 + dy));
                k += 1;
            }
        }
        out
    }

    /// Torus-wrapped king adjacency of two blocks.
    pub fn adjacent(&self, a: (i32, i32), b: (i32, i32)) -> bool {
        let d = |p: i32, q: i32, n: i32| {
            let mut d = (p - q).rem_euclid(n);
            if d > n / 2 {
                d -= n;
            }
            d.abs()
        };
        let (dx, dy) = (
            d(a.0, b.0, self.nx as i32),
            d(a.1, b.1, self.ny as i32),
        );
        dx.max(dy) == 1 || (dx.max(dy) == 0 && a != b)
    }
}

/// A set of unit blocks on a block torus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Polymer {
    /// Sorted, wrapped block coordinates.
    pub blocks: Vec<(i32, i32)>,
    pub connected: bool,
    pub small: bool,
    /// Set when the polymer self-overlaps through the torus wrap.
    pub wraps: bool,
}

impl Polymer {
    pub fn from_blocks(torus: &BlockTorus, blocks: impl IntoIterator<Item = (i32, i32)>) -> Self {
        let raw: Vec<(i32, i32)> = blocks.into_iter().collect();
        let set: BTreeSet<(i32, i32)> = raw.iter().map(|&c| torus.wrap(c)).collect();
        let wraps = set.len() != raw.len();
        let blocks: Vec<(i32, i32)> = set.into_iter().collect();
        let connected = is_connected(torus, &blocks);
        let small = connected && blocks.len() <= 4;
        Self {
            blocks,
            connected,
            small,
            wraps,
        }
    }

    pub fn size(&self) -> usize {
        self.blocks.len()
    }

    pub fn contains(&self, b: (i32, i32)) -> bool {
        self.blocks.binary_search(&b).is_ok()
    }

    pub fn disjoint(&self, other: &Polymer) -> bool {
        self.blocks.iter().all(|b| !other.contains(*b))
    }

    /// Lexicographically smallest translate, for canonical serialization.
    pub fn canonical_form(&self, torus: &BlockTorus) -> Vec<(i32, i32)> {
        let mut best: Option<Vec<(i32, i32)>> = None;
        for &(ax, ay) in &self.blocks {
            let mut translated: Vec<(i32, i32)> = self
                .blocks
                .iter()
                .map(|&(x, y)| torus.wrap((x - ax, y - ay)))
                .collect();
            translated.sort_unstable();
            if best.as_ref().map_or(true, |b| translated < *b) {
                best = Some(translated);
            }
        }
        best.unwrap_or_default()
    }
}

pub fn is_connected(torus: &BlockTorus, blocks: &[(i32, i32)]) -> bool {
    if blocks.is_empty() {
        return false;
    }
    let set: HashSet<(i32, i32)> = blocks.iter().copied().collect();
    let mut seen = HashSet::with_capacity(set.len());
    let mut stack = vec![blocks[0]];
    seen.insert(blocks[0]);
    while let Some(c) = stack.pop() {
        for nb in torus.neighbors(c) {
            if set.contains(&nb) && seen.insert(nb) {
                stack.push(nb);
            }
        }
    }
    seen.len() == set.len()
}

/// Exhaustive, duplicate-free list of connected polymers containing `pinned`
/// with at most `max_size` blocks. Polymers whose lift self-overlaps through
/// the wrap carry the `wraps` flag.
pub fn enumerate_connected(
    torus: &BlockTorus,
    pinned: (i32, i32),
    max_size: usize,
) -> Vec<Polymer> {
    assert!(max_size <= 8, "enumeration is desk scale (max_size <= 8)");
    let pinned = torus.wrap(pinned);
    // grow in the universal cover so wrap detection is exact
    let mut seen: HashSet<Vec<(i32, i32)>> = HashSet::new();
    let mut out_sets: HashSet<Vec<(i32, i32)>> = HashSet::new();
    let mut frontier: Vec<BTreeSet<(i32, i32)>> = vec![BTreeSet::from([(0, 0)])];
    let mut results: Vec<Polymer> = Vec::new();
    seen.insert(vec![(0, 0)]);
    while let Some(set) = frontier.pop() {
        let key: Vec<(i32, i32)> = set.iter().copied().collect();
        // map the cover set onto the torus, translated to the pin
        let mapped: BTreeSet<(i32, i32)> =
            set.iter().map(|&(x, y)| torus.wrap((pinned.0 + x, pinned.1 + y))).collect();
        let mapped_key: Vec<(i32, i32)> = mapped.iter().copied().collect();
        if !out_sets.contains(&mapped_key) {
            out_sets.insert(mapped_key.clone());
            let wraps = mapped.len() != set.len();
            let blocks: Vec<(i32, i32)> = mapped_key;
            let connected = true; // connected in the cover implies connected on the torus
            results.push(Polymer {
                small: connected && blocks.len() <= 4 && !wraps,
                blocks,
                connected,
                wraps,
            });
        }
        if set.len() < max_size {
            for &(x, y) in &key {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let cand = (x + dx, y + dy);
                        if set.contains(&cand) {
                            continue;
                        }
                        let mut next = set.clone();
                        next.insert(cand);
                        let next_key: Vec<(i32, i32)> = next.iter().copied().collect();
                        if seen.insert(next_key) {
                            frontier.push(next);
                        }
                    }
                }
            }
        }
    }
    results.sort_by(|a, b| (a.size(), &a.blocks).cmp(&(b.size(), &b.blocks)));
    results
}

/// Distinct small-set shapes (canonical translates) up to `max_size` blocks.
pub fn small_set_shapes(max_size: usize) -> Vec<Vec<(i32, i32)>> {
    let torus = BlockTorus::new(32).unwrap();
    let mut shapes: BTreeSet<Vec<(i32, i32)>> = BTreeSet::new();
    for p in enumerate_connected(&torus, (16, 16), max_size) {
        shapes.insert(p.canonical_form(&torus));
    }
    shapes.into_iter().collect()
}

/// Smallest union of L-blocks containing X, in rescaled unit coordinates.
pub fn l_closure(torus: &BlockTorus, x: &Polymer, l_scale: usize) -> Result<Polymer> {
    if torus.nx % l_scale != 0 || torus.ny % l_scale != 0 {
        return Err(Error::Config(format!(
            "torus {}x{} not divisible by L = {l_scale}",
            torus.nx, torus.ny
        )));
    }
    let coarse = BlockTorus::new_rect((torus.nx / l_scale).max(2), (torus.ny / l_scale).max(2))?;
    let l = l_scale as i32;
    let blocks: BTreeSet<(i32, i32)> = x
        .blocks
        .iter()
        .map(|&(bx, by)| (bx.div_euclid(l), by.div_euclid(l)))
        .collect();
    Ok(Polymer::from_blocks(&coarse, blocks))
}

/// Large set regulator Gamma_p(X) = 2^{p|X|} A^{|X|}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetRegulator {
    pub a: f64,
    pub p: i32,
}

impl SetRegulator {
    pub fn new(a: f64, p: i32) -> Result<Self> {
        if a < 1.0 {
            return Err(Error::Config(format!("regulator base A must be >= 1, got {a}")));
        }
        Ok(Self { a, p })
    }

    pub fn gamma(&self, size: usize) -> f64 {
        (2f64.powi(self.p) * self.a).powi(size as i32)
    }

    pub fn with_p(&self, p: i32) -> Self {
        Self { a: self.a, p }
    }
}

/// Report of the reblocking bounds on the set regulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegulatorReblockReport {
    /// max over samples of Gamma_p(closure) / Gamma_{p-q}(X)
    pub c_star: f64,
    /// max over large sets of Gamma_p(closure) / (L^-4 Gamma_p(X))
    pub large_set_ratio: f64,
    pub accepted: bool,
    pub witness: Option<Polymer>,
}

/// Evaluate Gamma_p(L^{-1} closure(X)) / Gamma_{p-q}(X) over sample polymers,
/// and the large-set bound Gamma_p(closure) <= L^-4 Gamma_p(X).
pub fn regulator_reblock_check(
    reg: &SetRegulator,
    torus: &BlockTorus,
    l_scale: usize,
    q: i32,
    samples: &[Polymer],
) -> Result<RegulatorReblockReport> {
    let mut c_star = 0f64;
    let mut large_ratio = 0f64;
    let mut witness = None;
    let l4 = (l_scale as f64).powi(-4);
    for x in samples {
        let closure = l_closure(torus, x, l_scale)?;
        let ratio = reg.gamma(closure.size()) / reg.with_p(reg.p - q).gamma(x.size());
        c_star = c_star.max(ratio);
        if x.size() > 4 {
            let lr = reg.gamma(closure.size()) / (l4 * reg.gamma(x.size()));
            if lr > large_ratio {
                large_ratio = lr;
                if lr > 1.0 {
                    witness = Some(x.clone());
                }
            }
        }
    }
    Ok(RegulatorReblockReport {
        c_star,
        large_set_ratio: large_ratio,
        accepted: large_ratio <= 1.0,
        witness,
    })
}

/// Smallest A >= 1 in `candidates` whose large-set reblocking bound holds
/// for every sample; errors with the witness polymer when none does.
pub fn search_regulator_base(
    torus: &BlockTorus,
    l_scale: usize,
    p: i32,
    q: i32,
    candidates: &[f64],
    samples: &[Polymer],
) -> Result<f64> {
    let mut witness_size = 0;
    for &a in candidates {
        let reg = SetRegulator::new(a, p)?;
        let report = regulator_reblock_check(&reg, torus, l_scale, q, samples)?;
        if report.accepted {
            return Ok(a);
        }
        if let Some(w) = report.witness {
            witness_size = w.size();
        }
    }
    Err(Error::RegulatorSearch { witness_size })
}

/// Pinned sum Sigma_{X ∋ Delta, |X| <= max_size} Gamma_p(X) theta^{|X|},
/// returned together with the per-size shells.
pub fn pin_sum(
    reg: &SetRegulator,
    torus: &BlockTorus,
    pinned: (i32, i32),
    theta: f64,
    max_size: usize,
) -> (f64, Vec<f64>) {
    let polymers = enumerate_connected(torus, pinned, max_size);
    let mut shells = vec![0.0; max_size + 1];
    for p in &polymers {
        shells[p.size()] += reg.gamma(p.size()) * theta.powi(p.size() as i32);
    }
    (shells.iter().sum(), shells)
}

/// Counts of connected polymers containing a pinned block, by size.
pub fn enumeration_counts(torus: &BlockTorus, pinned: (i32, i32), max_size: usize) -> Vec<usize> {
    let mut counts = vec![0usize; max_size + 1];
    for p in enumerate_connected(torus, pinned, max_size) {
        counts[p.size()] += 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// Circle product and reblocking by exact enumeration
// ---------------------------------------------------------------------------

/// Connected subsets of the torus as bitmasks over `blocks`, indexed by their
/// lowest set bit, for the memoized circle-product recursion.
struct ConnectedIndex {
    blocks: Vec<(i32, i32)>,
    /// per lowest-bit block: all connected masks whose minimum bit is that block
    by_min_bit: Vec<Vec<u32>>,
    /// block index -> the block plus its king neighbors, as a mask
    halo: Vec<u32>,
}

impl ConnectedIndex {
    fn build(torus: &BlockTorus) -> Self {
        let blocks = torus.all_blocks();
        let n = blocks.len();
        assert!(n <= 20, "enumeration volume too large ({n} blocks)");
        let mut adj = vec![0u32; n];
        for i in 0..n {
            for j in 0..n {
                if i != j && torus.adjacent(blocks[i], blocks[j]) {
                    adj[i] |= 1 << j;
                }
            }
        }
        // grow connected masks: breadth-first over (mask, reachable frontier)
        let mut connected: HashSet<u32> = HashSet::new();
        for i in 0..n {
            let mut frontier = vec![1u32 << i];
            connected.insert(1 << i);
            while let Some(mask) = frontier.pop() {
                let mut reach = 0u32;
                let mut m = mask;
                while m != 0 {
                    let b = m.trailing_zeros() as usize;
                    m &= m - 1;
                    reach |= adj[b];
                }
                reach &= !mask;
                let mut r = reach;
                while r != 0 {
                    let b = r.trailing_zeros() as usize;
                    r &= r - 1;
                    let next = mask | (1 << b);
                    if connected.insert(next) {
                        frontier.push(next);
                    }
                }
            }
        }
        let mut by_min_bit = vec![Vec::new(); n];
        for &mask in &connected {
            by_min_bit[mask.trailing_zeros() as usize].push(mask);
        }
        for v in &mut by_min_bit {
            v.sort_unstable();
        }
        let mut halo = vec![0u32; n];
        for (i, h) in halo.iter_mut().enumerate() {
            *h = (1 << i) | adj[i];
        }
        Self {
            blocks,
            by_min_bit,
            halo,
        }
    }

    fn halo_of(&self, mask: u32) -> u32 {
        let mut h = 0u32;
        let mut m = mask;
        while m != 0 {
            let i = m.trailing_zeros() as usize;
            m &= m - 1;
            h |= self.halo[i];
        }
        h
    }

    fn mask_to_polymer(&self, torus: &BlockTorus, mask: u32) -> Polymer {
        let blocks = (0..self.blocks.len())
            .filter(|&i| mask & (1 << i) != 0)
            .map(|i| self.blocks[i]);
        Polymer::from_blocks(torus, blocks)
    }
}

/// Circle product Exp(box e^-V + K)(Lambda, phi) for a fixed field: the
/// exact sum over collections of pairwise disjoint CLOSED connected polymers
/// of e^{-V(complement)} prod_i K(X_i). Closed blocks meeting at a corner
/// intersect, so the collections are pairwise non-adjacent; that convention
/// is what makes the Mayer regrouping of subsets into connected components
/// a bijection.
///
/// `v_block` is Delta -> V(Delta, phi); `k_eval` is X -> K(X, phi).
pub fn circle_product(
    torus: &BlockTorus,
    v_block: &dyn Fn((i32, i32)) -> f64,
    k_eval: &dyn Fn(&Polymer) -> f64,
) -> f64 {
    let index = ConnectedIndex::build(torus);
    let n = index.blocks.len();
    let bg: Vec<f64> = index.blocks.iter().map(|&b| (-v_block(b)).exp()).collect();
    let full: u32 = if n == 32 { u32::MAX } else { (1 << n) - 1 };
    let mut k_cache = HashMap::new();
    collections_sum(&index, torus, &bg, k_eval, full, &mut k_cache)
}

/// Shared enumeration engine: collections of pairwise non-adjacent connected
/// polymers inside `allowed`, with per-block background weights on the
/// uncovered allowed blocks.
fn collections_sum(
    index: &ConnectedIndex,
    torus: &BlockTorus,
    bg: &[f64],
    k_eval: &dyn Fn(&Polymer) -> f64,
    allowed: u32,
    k_cache: &mut HashMap<u32, f64>,
) -> f64 {
    fn rec(
        index: &ConnectedIndex,
        torus: &BlockTorus,
        bg: &[f64],
        k_eval: &dyn Fn(&Polymer) -> f64,
        free: u32,
        blocked: u32,
        k_cache: &mut HashMap<u32, f64>,
    ) -> f64 {
        if free == 0 {
            return 1.0;
        }
        let b = free.trailing_zeros() as usize;
        // lowest free block is background, or the minimum of a new polymer
        let mut total =
            bg[b] * rec(index, torus, bg, k_eval, free & !(1 << b), blocked, k_cache);
        for &mask in &index.by_min_bit[b] {
            if mask & !free != 0 || mask & blocked != 0 {
                continue;
            }
            let k_val = *k_cache
                .entry(mask)
                .or_insert_with(|| k_eval(&index.mask_to_polymer(torus, mask)));
            if k_val != 0.0 {
                total += k_val
                    * rec(
                        index,
                        torus,
                        bg,
                        k_eval,
                        free & !mask,
                        blocked | index.halo_of(mask),
                        k_cache,
                    );
            }
        }
        total
    }
    rec(index, torus, bg, k_eval, allowed, !allowed, k_cache)
}

/// The reblocked activity BK on the coarse torus: for each coarse polymer Y,
/// the exact sum over collections of disjoint connected fine polymers {X_i}
/// and perturbation blocks {Delta_j} whose L-closure is exactly Y, of
/// e^{-V(LY minus contents, phi)} prod K(X_i) prod P(Delta_j).
pub struct ReblockedActivity {
    pub coarse: BlockTorus,
    /// value per coarse subset, keyed by sorted block list
    pub values: HashMap<Vec<(i32, i32)>, f64>,
}

impl ReblockedActivity {
    pub fn at(&self, y: &Polymer) -> f64 {
        *self.values.get(&y.blocks).unwrap_or(&0.0)
    }
}

/// Evaluate BK for every coarse subset by direct closure-exact enumeration:
/// for a fixed collection of fine polymers {X_i}, the perturbation-block sum
/// factorizes per coarse block, with an at-least-one-Delta factor on coarse
/// blocks the closure must reach beyond the polymers.
pub fn reblock_map(
    torus: &BlockTorus,
    l_scale: usize,
    v_block_phi: &dyn Fn((i32, i32)) -> f64,
    k_eval: &dyn Fn(&Polymer) -> f64,
    p_block: &dyn Fn((i32, i32)) -> f64,
) -> Result<ReblockedActivity> {
    if torus.nx % l_scale != 0 || torus.ny % l_scale != 0 {
        return Err(Error::Config("torus sides must be divisible by L".into()));
    }
    let coarse = BlockTorus::new_rect(torus.nx / l_scale, torus.ny / l_scale)?;
    let fine_blocks = torus.all_blocks();
    let n = fine_blocks.len();
    assert!(n <= 20, "reblocking volume too large");
    let coarse_of = |b: (i32, i32)| {
        (
            b.0.div_euclid(l_scale as i32),
            b.1.div_euclid(l_scale as i32),
        )
    };

    let index = ConnectedIndex::build(torus);
    let weights: Vec<f64> = fine_blocks.iter().map(|&b| (-v_block_phi(b)).exp()).collect();
    let p_vals: Vec<f64> = fine_blocks.iter().map(|&b| p_block(b)).collect();

    let coarse_blocks_all = coarse.all_blocks();
    let nc = coarse_blocks_all.len();
    // fine mask and background products per coarse block
    let mut lc_mask = vec![0u32; nc];
    for (ci, &c) in coarse_blocks_all.iter().enumerate() {
        for (i, &fb) in fine_blocks.iter().enumerate() {
            if coarse_of(fb) == c {
                lc_mask[ci] |= 1 << i;
            }
        }
    }
    let prod_over = |mask: u32, vals: &dyn Fn(usize) -> f64| -> f64 {
        let mut m = mask;
        let mut p = 1.0;
        while m != 0 {
            let i = m.trailing_zeros() as usize;
            m &= m - 1;
            p *= vals(i);
        }
        p
    };

    let mut bk: HashMap<Vec<(i32, i32)>, f64> = HashMap::new();
    let mut k_cache: HashMap<u32, f64> = HashMap::new();
    for t_mask in 1u32..(1 << nc) {
        let fine_allowed: u32 = (0..nc)
            .filter(|&ci| t_mask & (1 << ci) != 0)
            .fold(0u32, |acc, ci| acc | lc_mask[ci]);

        // accumulate over polymer collections with covered fine mask tracked
        let mut total = 0.0;
        enumerate_x_collections(
            &index,
            torus,
            k_eval,
            fine_allowed,
            !fine_allowed,
            0,
            1.0,
            &mut k_cache,
            &mut |covered: u32, k_prod: f64| {
                let mut factor = 1.0;
                for ci in 0..nc {
                    if t_mask & (1 << ci) == 0 {
                        continue;
                    }
                    let free_in_c = lc_mask[ci] & !covered;
                    let with_p = prod_over(free_in_c, &|i| weights[i] + p_vals[i]);
                    if lc_mask[ci] & covered != 0 {
                        // the closure already reaches this coarse block
                        factor *= with_p;
                    } else {
                        // at least one perturbation block must land here
                        let without_p = prod_over(free_in_c, &|i| weights[i]);
                        factor *= with_p - without_p;
                    }
                    if factor == 0.0 {
                        break;
                    }
                }
                total += k_prod * factor;
            },
        );
        let mut t_vec: Vec<(i32, i32)> = (0..nc)
            .filter(|&ci| t_mask & (1 << ci) != 0)
            .map(|ci| coarse_blocks_all[ci])
            .collect();
        t_vec.sort_unstable();
        bk.insert(t_vec, total);
    }

    Ok(ReblockedActivity { coarse, values: bk })
}

/// Recursively enumerate collections of pairwise non-adjacent connected
/// polymers inside `free`, invoking the handler with (covered mask, product
/// of K values) at every complete collection (including the empty one).
#[allow(clippy::too_many_arguments)]
fn enumerate_x_collections(
    index: &ConnectedIndex,
    torus: &BlockTorus,
    k_eval: &dyn Fn(&Polymer) -> f64,
    free: u32,
    blocked: u32,
    covered: u32,
    k_prod: f64,
    k_cache: &mut HashMap<u32, f64>,
    handler: &mut dyn FnMut(u32, f64),
) {
    if free == 0 {
        handler(covered, k_prod);
        return;
    }
    let b = free.trailing_zeros() as usize;
    // block b belongs to no polymer
    enumerate_x_collections(
        index,
        torus,
        k_eval,
        free & !(1 << b),
        blocked,
        covered,
        k_prod,
        k_cache,
        handler,
    );
    for &mask in &index.by_min_bit[b] {
        if mask & !free != 0 || mask & blocked != 0 {
            continue;
        }
        let k_val = *k_cache
            .entry(mask)
            .or_insert_with(|| k_eval(&index.mask_to_polymer(torus, mask)));
        if k_val != 0.0 {
            enumerate_x_collections(
                index,
                torus,
                k_eval,
                free & !mask,
                blocked | index.halo_of(mask),
                covered | mask,
                k_prod * k_val,
                k_cache,
                handler,
            );
        }
    }
}

/// Sum over collections of pairwise non-adjacent connected polymers {X_i}
/// (weighted by K) and distinct extra blocks {Delta_j} (weighted by P), all
/// inside `allowed`. The Delta blocks carry no adjacency constraint, so they
/// fold into the per-block background weight w + P.
fn sum_collections(
    index: &ConnectedIndex,
    torus: &BlockTorus,
    weights: &[f64],
    p_vals: &[f64],
    k_eval: &dyn Fn(&Polymer) -> f64,
    allowed: u32,
    k_cache: &mut HashMap<u32, f64>,
) -> f64 {
    let bg: Vec<f64> = weights
        .iter()
        .zip(p_vals)
        .map(|(&w, &p)| w + p)
        .collect();
    collections_sum(index, torus, &bg, k_eval, allowed, k_cache)
}
