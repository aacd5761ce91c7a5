//! Simulation of the walk and skipped-site statistics.
//!
//! A walk is run until it first lands above a stopping level. With
//! [`Resolution::Exact`] the rest of the trajectory is resolved in law: from
//! the landing point `y` the walk reaches site `s` again with probability
//! `prod_{i=s}^{y-1} (1 - 1/D(i))`, and these events are nested in `s`, so a
//! single uniform decides which not-yet-visited sites are ever visited.

mod kernel;
pub mod rng;

use std::collections::BTreeSet;

use rand_core::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dseries::{DStatus, DTable, Neumaier};
use crate::error::{Error, Result};
use crate::perturbation::{ChainParams, PerturbationSpec};
use kernel::{run_micro, run_mixed, thresholds, BlockTables, Exit, FreeBlocks};
use rng::{open_unit, replica_rng, WalkRng};

pub const DEFAULT_MAX_STEPS: u64 = 1_000_000_000;
/// Return-probability bound targeted by [`certified_margin`].
pub const RETURN_TARGET: f64 = 1e-6;
const CHUNK: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    /// Resolve the future after stopping from exact return probabilities.
    #[default]
    Exact,
    /// Declare unvisited sites skipped once the walk passes `target + margin`.
    Truncate,
}

/// `ln` of return probabilities, from `D(1..)`.
#[derive(Debug, Clone)]
pub struct ReturnProfile {
    /// `prefix[i] = sum_{m=1}^{i} ln(1 - 1/D(m))`.
    prefix: Vec<f64>,
}

impl ReturnProfile {
    /// Needs `D(m)` for `m` in `1..=hi`; a divergent `D` counts as certain return.
    pub fn new(dtab: &DTable, hi: u64) -> Result<Self> {
        let mut prefix = Vec::with_capacity(hi as usize + 1);
        prefix.push(0.0);
        let mut acc = Neumaier::default();
        for m in 1..=hi {
            let term = match dtab.status(m)? {
                DStatus::DivergentSuspected => 0.0,
                _ => (-1.0 / dtab.d(m)?).ln_1p(),
            };
            acc.add(term);
            prefix.push(acc.value());
        }
        Ok(Self { prefix })
    }

    pub fn max_landing(&self) -> u64 {
        self.prefix.len() as u64
    }

    /// `ln P(walk from y ever visits s)` for `1 <= s <= y`.
    pub fn ln_return(&self, y: u64, s: u64) -> f64 {
        self.prefix[(y - 1) as usize] - self.prefix[(s - 1) as usize]
    }

    /// Lowest site visited after landing at `y`, given `ln u` of a uniform.
    pub fn future_min(&self, y: u64, ln_u: f64) -> u64 {
        let (mut lo, mut hi) = (1u64, y);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.ln_return(y, mid) > ln_u {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }
}

/// Smallest margin whose worst-case return probability to `target` is below
/// `RETURN_TARGET`, searched up to the profile's range; returns the margin
/// and the achieved bound.
pub fn certified_margin(profile: &ReturnProfile, target: u64) -> (u64, f64) {
    let max_y = profile.max_landing();
    let mut margin = 0;
    loop {
        let y = target + margin + 1;
        let bound = if y < max_y { profile.ln_return(y, target).exp() } else { 1.0 };
        if bound < RETURN_TARGET || y + 1 >= max_y {
            return (margin, bound);
        }
        margin += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipExperiment {
    pub spec: PerturbationSpec,
    /// Sites up to this level are examined.
    pub target_level: u64,
    /// Extra distance past the target before the walk is stopped.
    pub margin: u64,
    pub replicas: u64,
    pub seed: u64,
    pub max_steps: u64,
    pub resolution: Resolution,
    /// Worst-case probability that a stopped walk returns to the target level,
    /// if the future were ignored; 0 under exact resolution.
    pub return_bound: f64,
}

impl SkipExperiment {
    pub fn new(spec: PerturbationSpec, target_level: u64, replicas: u64, seed: u64) -> Result<Self> {
        let e = Self {
            spec,
            target_level,
            margin: 0,
            replicas,
            seed,
            max_steps: DEFAULT_MAX_STEPS,
            resolution: Resolution::Exact,
            return_bound: 0.0,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 || self.max_steps == 0 {
            return Err(Error::Argument("replicas and max_steps must be at least 1".into()));
        }
        if self.target_level < 2 {
            return Err(Error::Argument(format!("target level must be at least 2, got {}", self.target_level)));
        }
        Ok(())
    }

    /// Switches to truncation with the given margin and records its return bound.
    pub fn truncated(mut self, dtab: &DTable, margin: u64) -> Result<Self> {
        let stop = self.stop_level();
        let profile = ReturnProfile::new(dtab, stop + margin + 2)?;
        self.margin = margin;
        self.resolution = Resolution::Truncate;
        let y = stop + margin + 1;
        self.return_bound = profile.ln_return(y, self.target_level).exp();
        Ok(self)
    }

    pub fn stop_level(&self) -> u64 {
        self.target_level + self.margin
    }

    fn chain(&self) -> ChainParams {
        ChainParams::new(self.spec.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frequency {
    pub count: u64,
    pub freq: f64,
    /// Binomial standard error `sqrt(f (1 - f) / n)`.
    pub se: f64,
}

impl Frequency {
    fn new(count: u64, n: u64) -> Self {
        let freq = if n == 0 { 0.0 } else { count as f64 / n as f64 };
        let se = if n == 0 { 0.0 } else { (freq * (1.0 - freq) / n as f64).sqrt() };
        Self { count, freq, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerFrequency {
    pub k: u64,
    #[serde(flatten)]
    pub freq: Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairFrequency {
    pub j: u64,
    pub k: u64,
    #[serde(flatten)]
    pub freq: Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkipStats {
    pub replicas: u64,
    pub completed: u64,
    pub truncated_replicas: u64,
    pub layers: Vec<LayerFrequency>,
    pub pairs: Vec<PairFrequency>,
    /// Skipped sites among the tracked layers, per replica (kept for small runs).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_replica: Option<Vec<Vec<u64>>>,
}

/// Replica count up to which per-replica site lists are kept.
pub const PER_REPLICA_LIMIT: u64 = 10_000;

/// Raw record of one walk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WalkSummary {
    pub truncated: bool,
    pub landing: Option<u64>,
    pub steps: u64,
    /// Sites in `1..=stop_level - margin` not visited before stopping.
    pub unvisited: Vec<u64>,
}

/// Runs one walk from 0 until it exceeds `stop_level`.
pub fn simulate_walk(chain: &ChainParams, stop_level: u64, margin: u64, rng: &mut WalkRng, max_steps: u64) -> Result<WalkSummary> {
    if stop_level < 2 || margin > stop_level {
        return Err(Error::Argument(format!("invalid stop level {stop_level} / margin {margin}")));
    }
    let thr = thresholds(chain, stop_level)?;
    let mut visited = vec![0u8; stop_level as usize + 3];
    let res = run_micro(&thr, &mut visited, rng, max_steps);
    let unvisited = (1..=stop_level - margin).filter(|&s| visited[s as usize] == 0).collect();
    let (truncated, landing) = match res.exit {
        Exit::Landed(y) => (false, Some(y)),
        Exit::Truncated => (true, None),
    };
    Ok(WalkSummary { truncated, landing, steps: res.steps, unvisited })
}

/// Ever-unvisited sites among the candidates, resolving the future when requested.
fn resolve(candidates: impl Iterator<Item = u64>, landing: u64, profile: Option<&ReturnProfile>, rng: &mut WalkRng) -> impl Iterator<Item = u64> {
    let floor = match profile {
        Some(p) => p.future_min(landing, open_unit(rng.next_u64()).ln()),
        None => landing + 1,
    };
    candidates.filter(move |&s| s < floor)
}

#[derive(Default)]
struct Tally {
    completed: u64,
    truncated: u64,
    layers: Vec<u64>,
    pairs: Vec<u64>,
    per_replica: Vec<Vec<u64>>,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        self.completed += other.completed;
        self.truncated += other.truncated;
        for (a, b) in self.layers.iter_mut().zip(other.layers) {
            *a += b;
        }
        for (a, b) in self.pairs.iter_mut().zip(other.pairs) {
            *a += b;
        }
        self.per_replica.extend(other.per_replica);
        self
    }
}

/// Empirical single-layer and pair skip frequencies.
pub fn estimate_skip(exp: &SkipExperiment, dtab: &DTable, ks: &[u64], pairs: &[(u64, u64)]) -> Result<SkipStats> {
    exp.validate()?;
    let layers: BTreeSet<u64> = ks.iter().copied().chain(pairs.iter().flat_map(|&(j, k)| [j, k])).collect();
    if layers.is_empty() {
        return Ok(SkipStats { replicas: 0, completed: 0, truncated_replicas: 0, layers: vec![], pairs: vec![], per_replica: None });
    }
    for &(j, k) in pairs {
        if j >= k {
            return Err(Error::Argument(format!("pair ({j}, {k}) needs j < k")));
        }
    }
    let max_layer = *layers.iter().next_back().unwrap();
    if layers.contains(&0) || 2 * max_layer + 1 > exp.target_level {
        return Err(Error::Argument(format!(
            "layers must satisfy 1 <= k and 2k + 1 <= target level {}",
            exp.target_level
        )));
    }
    let layer_list: Vec<u64> = layers.into_iter().collect();
    let sites: Vec<u64> = layer_list.iter().flat_map(|&k| [2 * k, 2 * k + 1]).collect();
    let chain = exp.chain();
    let stop = exp.stop_level();
    let profile = match exp.resolution {
        Resolution::Exact => Some(ReturnProfile::new(dtab, stop + 2)?),
        Resolution::Truncate => None,
    };
    let blocks = if sites.len() <= 32 { Some(BlockTables::build(&chain, stop, &sites)?) } else { None };
    let thr = thresholds(&chain, stop)?;
    let keep = exp.replicas <= PER_REPLICA_LIMIT;
    let layer_pos = |k: u64| layer_list.binary_search(&k).unwrap();
    let single_idx: Vec<usize> = ks.iter().map(|&k| layer_pos(k)).collect();
    let pair_idx: Vec<(usize, usize)> = pairs.iter().map(|&(j, k)| (layer_pos(j), layer_pos(k))).collect();

    let n_chunks = exp.replicas.div_ceil(CHUNK);
    let tally = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut t = Tally { layers: vec![0; ks.len()], pairs: vec![0; pairs.len()], ..Default::default() };
            let mut visited = vec![0u8; if blocks.is_some() { 0 } else { stop as usize + 3 }];
            let mut skipped_layer = vec![false; layer_list.len()];
            for replica in c * CHUNK..((c + 1) * CHUNK).min(exp.replicas) {
                let mut rng = replica_rng(exp.seed, replica);
                let (exit, unvisited_mask) = match &blocks {
                    Some(b) => {
                        let (res, mask) = b.run(&mut rng, exp.max_steps);
                        (res.exit, !mask as u64 & ((1u64 << sites.len()) - 1))
                    }
                    None => {
                        visited.iter_mut().for_each(|v| *v = 0);
                        let res = run_micro(&thr, &mut visited, &mut rng, exp.max_steps);
                        let mask = sites.iter().enumerate().filter(|(_, &s)| visited[s as usize] == 0).fold(0u64, |m, (i, _)| m | 1 << i);
                        (res.exit, mask)
                    }
                };
                let y = match exit {
                    Exit::Landed(y) => y,
                    Exit::Truncated => {
                        t.truncated += 1;
                        continue;
                    }
                };
                t.completed += 1;
                let candidates = (0..sites.len()).filter(|i| unvisited_mask >> i & 1 == 1).map(|i| sites[i]);
                skipped_layer.iter_mut().for_each(|v| *v = false);
                let mut list = Vec::new();
                for s in resolve(candidates, y, profile.as_ref(), &mut rng) {
                    let idx = layer_pos(s / 2);
                    debug_assert!(!skipped_layer[idx], "two skipped sites in layer {}", s / 2);
                    skipped_layer[idx] = true;
                    if keep {
                        list.push(s);
                    }
                }
                for (slot, &i) in single_idx.iter().enumerate() {
                    t.layers[slot] += skipped_layer[i] as u64;
                }
                for (slot, &(i, j)) in pair_idx.iter().enumerate() {
                    t.pairs[slot] += (skipped_layer[i] && skipped_layer[j]) as u64;
                }
                if keep {
                    t.per_replica.push(list);
                }
            }
            t
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Tally { layers: vec![0; ks.len()], pairs: vec![0; pairs.len()], ..Default::default() }, Tally::merge);

    Ok(SkipStats {
        replicas: exp.replicas,
        completed: tally.completed,
        truncated_replicas: tally.truncated,
        layers: ks.iter().zip(&tally.layers).map(|(&k, &c)| LayerFrequency { k, freq: Frequency::new(c, tally.completed) }).collect(),
        pairs: pairs.iter().zip(&tally.pairs).map(|(&(j, k), &c)| PairFrequency { j, k, freq: Frequency::new(c, tally.completed) }).collect(),
        per_replica: keep.then_some(tally.per_replica),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthTable {
    pub levels: Vec<u64>,
    pub seed: u64,
    pub max_steps: u64,
    pub resolution: Resolution,
    /// Per replica, the count of skipped sites up to each level; `None` when truncated.
    pub counts: Vec<Option<Vec<u64>>>,
    pub truncated_replicas: u64,
    /// Median over completed replicas, per level.
    pub medians: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthRow {
    pub replica: u64,
    pub level: u64,
    pub skip_count: u64,
}

impl GrowthTable {
    pub fn rows(&self) -> Vec<GrowthRow> {
        let mut rows = Vec::new();
        for (replica, c) in self.counts.iter().enumerate() {
            if let Some(c) = c {
                for (&level, &skip_count) in self.levels.iter().zip(c) {
                    rows.push(GrowthRow { replica: replica as u64, level, skip_count });
                }
            }
        }
        rows
    }
}

fn median(values: &mut [u64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2]) as f64
    }
}

/// Skipped-site counts up to each level, one walk per replica run past the top level.
pub fn count_growth(
    chain: &ChainParams,
    dtab: &DTable,
    levels: &[u64],
    replicas: u64,
    seed: u64,
    max_steps: u64,
    resolution: Resolution,
) -> Result<GrowthTable> {
    if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) || levels[0] < 2 {
        return Err(Error::Argument("levels must be increasing and at least 2".into()));
    }
    if replicas == 0 || max_steps == 0 {
        return Err(Error::Argument("replicas and max_steps must be at least 1".into()));
    }
    let top = *levels.last().unwrap();
    let profile = match resolution {
        Resolution::Exact => Some(ReturnProfile::new(dtab, top + 2)?),
        Resolution::Truncate => None,
    };
    let thr = thresholds(chain, top)?;
    let free = FreeBlocks::build(chain, top)?;
    let counts: Vec<Option<Vec<u64>>> = (0..replicas)
        .into_par_iter()
        .map_init(
            || vec![0u8; top as usize + 3],
            |visited, replica| {
                visited.iter_mut().for_each(|v| *v = 0);
                let mut rng = replica_rng(seed, replica);
                match run_mixed(&thr, &free, visited, &mut rng, max_steps).exit {
                    Exit::Landed(y) => {
                        let candidates = (1..=top).filter(|&s| visited[s as usize] == 0);
                        let skipped: Vec<u64> = resolve(candidates, y, profile.as_ref(), &mut rng).collect();
                        Some(levels.iter().map(|&n| skipped.partition_point(|&s| s <= n) as u64).collect())
                    }
                    Exit::Truncated => None,
                }
            },
        )
        .collect();
    let truncated = counts.iter().filter(|c| c.is_none()).count() as u64;
    let medians = (0..levels.len())
        .map(|i| {
            let mut col: Vec<u64> = counts.iter().flatten().map(|c| c[i]).collect();
            median(&mut col)
        })
        .collect();
    Ok(GrowthTable { levels: levels.to_vec(), seed, max_steps, resolution, counts, truncated_replicas: truncated, medians })
}
