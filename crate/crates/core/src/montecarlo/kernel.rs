//! Walk kernels: single steps, and precomputed multi-step transitions for
//! runs that only need the visit status of a few tracked sites.

use rand_core::RngCore;
use rayon::prelude::*;

use super::rng::WalkRng;
use crate::error::Result;
use crate::perturbation::ChainParams;

const ONE: u64 = 1 << 32;

/// Up-step thresholds: the walk at `n` steps up iff a uniform `u32` is at most `thr[n]`.
pub(crate) fn thresholds(chain: &ChainParams, top: u64) -> Result<Vec<u32>> {
    (0..=top)
        .map(|n| Ok((((chain.p(n)? * ONE as f64).round() as u64).clamp(1, ONE) - 1) as u32))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Exit {
    /// First position above `top`.
    Landed(u64),
    Truncated,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct RunResult {
    pub exit: Exit,
    pub steps: u64,
}

/// Runs from 0 until the position exceeds `top`, marking `visited[n] = 1`
/// for every position reached. `visited` must hold `top + 3` entries.
pub(crate) fn run_micro(thr: &[u32], visited: &mut [u8], rng: &mut WalkRng, max_steps: u64) -> RunResult {
    let top = thr.len() - 1;
    debug_assert!(visited.len() >= top + 3);
    let mut pos = 0usize;
    visited[0] = 1;
    let mut steps = 0u64;
    loop {
        let r = rng.next_u64();
        for half in [r as u32, (r >> 32) as u32] {
            let up = (half <= thr[pos]) as usize;
            pos = pos + 3 * up - 1;
            visited[pos] = 1;
            steps += 1;
            if pos > top {
                return RunResult { exit: Exit::Landed(pos as u64), steps };
            }
        }
        if steps >= max_steps {
            return RunResult { exit: Exit::Truncated, steps };
        }
    }
}

/// Position-only `s`-step laws, used while the walk moves through a stretch
/// of sites that are all visited already.
pub(crate) struct FreeBlocks {
    s: usize,
    offsets: Vec<u32>,
    entries: Vec<FreeEntry>,
}

#[derive(Debug, Clone, Copy)]
struct FreeEntry {
    thr: u32,
    primary: i16,
    alias: i16,
}

const FREE_STEPS: usize = 64;
const MICRO_PAIRS: usize = 16;
/// How far a free stretch is scanned beyond the current block window.
const FREE_SCAN: usize = 4096;

impl FreeBlocks {
    /// Tables for start positions `x` with `x + 2s <= top`.
    pub(crate) fn build(chain: &ChainParams, top: u64) -> Result<Self> {
        let s = FREE_STEPS;
        let p: Vec<f64> = (0..=top).map(|n| chain.p(n)).collect::<Result<_>>()?;
        let last = (top as usize).saturating_sub(2 * s);
        let tables: Vec<Vec<FreeEntry>> = (0..=last)
            .into_par_iter()
            .map(|x| {
                let law = block_law(&p, top, x as u64, s as u64, &[]);
                alias_table(&law)
                    .into_iter()
                    .map(|e| FreeEntry {
                        thr: e.thr.min(ONE - 1) as u32,
                        primary: (e.primary as i64 - x as i64) as i16,
                        alias: (e.alias as i64 - x as i64) as i16,
                    })
                    .collect()
            })
            .collect();
        let mut offsets = Vec::with_capacity(tables.len() + 1);
        let mut entries = Vec::new();
        for t in tables {
            offsets.push(entries.len() as u32);
            entries.extend(t);
        }
        offsets.push(entries.len() as u32);
        Ok(Self { s, offsets, entries })
    }

    fn last(&self) -> usize {
        self.offsets.len() - 2
    }
}

/// Same law as [`run_micro`], but `s`-step blocks replace single steps
/// whenever every site the block could reach is visited already; the
/// visited set and the landing point keep their exact joint law.
pub(crate) fn run_mixed(thr: &[u32], free: &FreeBlocks, visited: &mut [u8], rng: &mut WalkRng, max_steps: u64) -> RunResult {
    let top = thr.len() - 1;
    let s = free.s;
    debug_assert!(visited.len() >= top + 3);
    let mut pos = 0usize;
    visited[0] = 1;
    let mut steps = 0u64;
    loop {
        for _ in 0..MICRO_PAIRS {
            let r = rng.next_u64();
            for half in [r as u32, (r >> 32) as u32] {
                let up = (half <= thr[pos]) as usize;
                pos = pos + 3 * up - 1;
                visited[pos] = 1;
                steps += 1;
                if pos > top {
                    return RunResult { exit: Exit::Landed(pos as u64), steps };
                }
            }
        }
        if steps >= max_steps {
            return RunResult { exit: Exit::Truncated, steps };
        }
        let (lo, hi) = (pos.saturating_sub(s), pos + 2 * s);
        if pos > free.last() || visited[lo..=hi].iter().rev().any(|&v| v == 0) {
            continue;
        }
        let mut a = lo;
        while a > 0 && a + FREE_SCAN > lo && visited[a - 1] != 0 {
            a -= 1;
        }
        let mut b = hi;
        while b < hi + FREE_SCAN && visited[b + 1] != 0 {
            b += 1;
        }
        let (a, b) = (a, b.min(free.last() + 2 * s));
        while pos.saturating_sub(s) >= a && pos + 2 * s <= b {
            let start = free.offsets[pos] as usize;
            let n = free.offsets[pos + 1] as u64 - start as u64;
            let r = rng.next_u64();
            let e = free.entries[start + (((r >> 32) * n) >> 32) as usize];
            let d = if (r as u32) < e.thr { e.primary } else { e.alias };
            pos = (pos as isize + d as isize) as usize;
            steps += s as u64;
            if steps >= max_steps {
                return RunResult { exit: Exit::Truncated, steps };
            }
        }
    }
}

const ABSORBED: u64 = 1 << 31;
const MAX_STEPS_PER_BLOCK: u64 = 64;
const MAX_LOCAL_SITES: usize = 6;

#[derive(Debug, Clone, Copy)]
struct Entry {
    thr: u64,
    primary: u64,
    alias: u64,
}

/// Exact `s`-step transition laws from each start position, over
/// (end position or landing above `top`, tracked sites visited).
pub(crate) struct BlockTables {
    offsets: Vec<usize>,
    block_len: Vec<u64>,
    entries: Vec<Entry>,
}

impl BlockTables {
    /// `tracked[i]` is reported as bit `i` of the visit mask (at most 32 sites).
    pub(crate) fn build(chain: &ChainParams, top: u64, tracked: &[u64]) -> Result<Self> {
        assert!(tracked.len() <= 32);
        let p: Vec<f64> = (0..=top).map(|n| chain.p(n)).collect::<Result<_>>()?;
        let mut offsets = Vec::with_capacity(top as usize + 2);
        let mut block_len = Vec::with_capacity(top as usize + 1);
        let mut entries = Vec::new();
        for x in 0..=top {
            let mut s = MAX_STEPS_PER_BLOCK;
            let local = loop {
                let lo = x.saturating_sub(s);
                let hi = (x + 2 * s).min(top);
                let local: Vec<(u64, usize)> = tracked
                    .iter()
                    .enumerate()
                    .filter(|(_, &t)| t >= lo && t <= hi)
                    .map(|(i, &t)| (t, i))
                    .collect();
                if local.len() <= MAX_LOCAL_SITES || s == 1 {
                    break local;
                }
                s /= 2;
            };
            let outcomes = block_law(&p, top, x, s, &local);
            offsets.push(entries.len());
            block_len.push(s);
            entries.extend(alias_table(&outcomes));
        }
        offsets.push(entries.len());
        Ok(Self { offsets, block_len, entries })
    }

    /// Runs from 0 until above `top`; returns the exit and the mask of tracked sites visited.
    pub(crate) fn run(&self, rng: &mut WalkRng, max_steps: u64) -> (RunResult, u32) {
        let mut pos = 0usize;
        let mut mask = 0u64;
        let mut steps = 0u64;
        loop {
            let start = self.offsets[pos];
            let n = (self.offsets[pos + 1] - start) as u64;
            let r = rng.next_u64();
            let e = &self.entries[start + (((r >> 32) * n) >> 32) as usize];
            let o = if (r & 0xffff_ffff) < e.thr { e.primary } else { e.alias };
            mask |= o >> 32;
            let low = o & 0xffff_ffff;
            steps += self.block_len[pos];
            if low & ABSORBED != 0 {
                let res = RunResult { exit: Exit::Landed(low & !ABSORBED), steps };
                return (res, mask as u32);
            }
            pos = low as usize;
            if steps >= max_steps {
                return (RunResult { exit: Exit::Truncated, steps }, mask as u32);
            }
        }
    }
}

/// Law of the `s`-step block from `x` as `(probability, packed outcome)`.
fn block_law(p: &[f64], top: u64, x: u64, s: u64, local: &[(u64, usize)]) -> Vec<(f64, u64)> {
    let lo = x.saturating_sub(s);
    let hi = (x + 2 * s).min(top);
    let width = (hi - lo + 1) as usize;
    let masks = 1usize << local.len();
    let bit = |n: u64| -> usize {
        local.iter().position(|&(t, _)| t == n).map_or(0, |j| 1 << j)
    };
    let bits: Vec<usize> = (lo..=hi).map(bit).collect();
    let mut cur = vec![0.0f64; width * masks];
    let mut next = vec![0.0f64; width * masks];
    let mut absorbed = vec![0.0f64; 2 * masks];
    cur[(x - lo) as usize * masks + bits[(x - lo) as usize]] = 1.0;
    for _ in 0..s {
        next.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..width {
            let n = lo + i as u64;
            let pn = p[n as usize];
            for m in 0..masks {
                let w = cur[i * masks + m];
                if w == 0.0 {
                    continue;
                }
                let up = n + 2;
                if up > top {
                    absorbed[(up - top - 1) as usize * masks + m] += w * pn;
                } else {
                    let j = i + 2;
                    next[j * masks + (m | bits[j])] += w * pn;
                }
                if n > 0 && pn < 1.0 {
                    let j = i - 1;
                    next[j * masks + (m | bits[j])] += w * (1.0 - pn);
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let global = |m: usize| -> u64 {
        local.iter().enumerate().filter(|(j, _)| m >> j & 1 == 1).fold(0u64, |acc, (_, &(_, g))| acc | 1 << g)
    };
    let mut out = Vec::new();
    for i in 0..width {
        for m in 0..masks {
            let w = cur[i * masks + m];
            if w > 0.0 {
                out.push((w, global(m) << 32 | (lo + i as u64)));
            }
        }
    }
    for a in 0..2 {
        for m in 0..masks {
            let w = absorbed[a * masks + m];
            if w > 0.0 {
                out.push((w, global(m) << 32 | ABSORBED | (top + 1 + a as u64)));
            }
        }
    }
    out
}

/// Vose alias table with 32-bit acceptance thresholds.
fn alias_table(outcomes: &[(f64, u64)]) -> Vec<Entry> {
    let n = outcomes.len();
    let total: f64 = outcomes.iter().map(|o| o.0).sum();
    let mut scaled: Vec<f64> = outcomes.iter().map(|o| o.0 / total * n as f64).collect();
    let mut entries: Vec<Entry> = outcomes.iter().map(|o| Entry { thr: ONE, primary: o.1, alias: o.1 }).collect();
    let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| scaled[i] < 1.0);
    while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
        small.pop();
        entries[s].thr = ((scaled[s] * ONE as f64).round() as u64).min(ONE);
        entries[s].alias = outcomes[l].1;
        scaled[l] -= 1.0 - scaled[s];
        if scaled[l] < 1.0 {
            large.pop();
            small.push(l);
        }
    }
    // Leftovers are 1 up to rounding.
    for i in small.into_iter().chain(large) {
        entries[i].thr = ONE;
    }
    entries
}
