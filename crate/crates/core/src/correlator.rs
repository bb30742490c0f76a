//! Coincidence histograms C(τ) between two sorted timestamp sequences and
//! a coarse-to-fine search for the correlation peak.
//!
//! `counts[k]` is the number of pairs (i, j) with `a[i] − b[j]` in
//! `[tau_start + k·w, tau_start + (k+1)·w)`. The bin width doubles as the
//! width of the rectangular coincidence window. Two exact sweeps are
//! available: enumerating every pair in range (cheap for narrow windows),
//! or keeping one pointer into `b` per bin edge (cheap when a window holds
//! many pairs per tag). [`Strategy::Auto`] picks the cheaper one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tags of `a` handled per parallel work item.
const CHUNK: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub tau_start_ps: i64,
    pub bin_width_ps: u64,
    pub counts: Vec<u64>,
    pub n_a: u64,
    pub n_b: u64,
    /// Width of the rectangular coincidence window; equal to the bin width.
    pub window_delta_ps: u64,
}

impl CorrelationHistogram {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn tau_end_ps(&self) -> i64 {
        self.tau_start_ps + (self.counts.len() as u64 * self.bin_width_ps) as i64
    }

    /// Left edge of bin `k`.
    pub fn bin_start(&self, k: usize) -> i64 {
        self.tau_start_ps + (k as u64 * self.bin_width_ps) as i64
    }

    /// Center of bin `k` relative to `tau_start_ps`.
    pub fn bin_center_rel(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.bin_width_ps as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = k;
            }
        }
        best
    }

    /// Histogram of `b − a`: the same pairs with the τ axis mirrored.
    pub fn reflected(&self) -> CorrelationHistogram {
        let mut counts = self.counts.clone();
        counts.reverse();
        CorrelationHistogram {
            tau_start_ps: -self.tau_end_ps() + 1,
            bin_width_ps: self.bin_width_ps,
            counts,
            n_a: self.n_b,
            n_b: self.n_a,
            window_delta_ps: self.window_delta_ps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    #[default]
    Auto,
    /// Visit every pair inside the τ range.
    PairSweep,
    /// One monotone pointer per bin edge.
    EdgeSweep,
}

fn bin_count(tau_start: i64, tau_end: i64, bin_width: u64) -> Result<usize> {
    if bin_width == 0 {
        return Err(Error::Argument("bin width must be ≥ 1 ps".into()));
    }
    if tau_end <= tau_start {
        return Err(Error::Argument(format!(
            "empty τ range [{tau_start}, {tau_end})"
        )));
    }
    let span = (tau_end as i128 - tau_start as i128) as u128;
    let n = span.div_ceil(bin_width as u128);
    usize::try_from(n)
        .ok()
        .filter(|&n| n <= 1 << 28)
        .ok_or_else(|| Error::Argument(format!("too many bins ({n})")))
}

/// C(τ) over `[tau_start, tau_end)` with bins of `bin_width`. The last bin
/// is extended to a whole width if the range is not a multiple of it.
pub fn correlate(a: &[u64], b: &[u64], tau_start: i64, tau_end: i64, bin_width: u64) -> Result<CorrelationHistogram> {
    correlate_with(a, b, tau_start, tau_end, bin_width, Strategy::Auto)
}

pub fn correlate_with(
    a: &[u64],
    b: &[u64],
    tau_start: i64,
    tau_end: i64,
    bin_width: u64,
    strategy: Strategy,
) -> Result<CorrelationHistogram> {
    let nbins = bin_count(tau_start, tau_end, bin_width)?;
    debug_assert!(a.windows(2).all(|w| w[0] <= w[1]), "a must be sorted");
    debug_assert!(b.windows(2).all(|w| w[0] <= w[1]), "b must be sorted");
    let mut hist = CorrelationHistogram {
        tau_start_ps: tau_start,
        bin_width_ps: bin_width,
        counts: vec![0; nbins],
        n_a: a.len() as u64,
        n_b: b.len() as u64,
        window_delta_ps: bin_width,
    };
    if a.is_empty() || b.is_empty() {
        return Ok(hist);
    }
    let strategy = match strategy {
        Strategy::Auto => choose_strategy(a, b, nbins, bin_width),
        s => s,
    };
    let sweep = |chunk: &[u64]| match strategy {
        Strategy::EdgeSweep => edge_sweep(chunk, b, tau_start, bin_width, nbins),
        _ => pair_sweep(chunk, b, tau_start, bin_width, nbins, None),
    };
    let partials: Vec<Vec<u64>> = a.par_chunks(CHUNK).map(sweep).collect();
    for p in partials {
        for (h, c) in hist.counts.iter_mut().zip(p) {
            *h += c;
        }
    }
    Ok(hist)
}

/// Autocorrelation of one channel with itself; each tag's pairing with
/// itself is excluded.
pub fn autocorrelate(a: &[u64], tau_start: i64, tau_end: i64, bin_width: u64) -> Result<CorrelationHistogram> {
    let nbins = bin_count(tau_start, tau_end, bin_width)?;
    let mut hist = CorrelationHistogram {
        tau_start_ps: tau_start,
        bin_width_ps: bin_width,
        counts: vec![0; nbins],
        n_a: a.len() as u64,
        n_b: a.len() as u64,
        window_delta_ps: bin_width,
    };
    if a.is_empty() {
        return Ok(hist);
    }
    let partials: Vec<Vec<u64>> = a
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| pair_sweep(chunk, a, tau_start, bin_width, nbins, Some(ci * CHUNK)))
        .collect();
    for p in partials {
        for (h, c) in hist.counts.iter_mut().zip(p) {
            *h += c;
        }
    }
    Ok(hist)
}

fn choose_strategy(a: &[u64], b: &[u64], nbins: usize, bin_width: u64) -> Strategy {
    let span = (b[b.len() - 1] - b[0]).max(1) as f64;
    let range = nbins as f64 * bin_width as f64;
    let density = (b.len() as f64 / span).min(b.len() as f64);
    let pairs = a.len() as f64 * (density * range).min(b.len() as f64);
    let edge_cost = (a.len() + b.len()) as f64 * (nbins + 1) as f64;
    if pairs <= edge_cost {
        Strategy::PairSweep
    } else {
        Strategy::EdgeSweep
    }
}

/// Number of `b` entries ≤ x.
fn count_le(b: &[u64], x: i128) -> usize {
    if x < 0 {
        return 0;
    }
    b.partition_point(|&t| (t as i128) <= x)
}

/// For each a: b in (a − end, a − start]. `self_offset` is the index of
/// `chunk[0]` inside `b` when a and b are the same sequence.
fn pair_sweep(chunk: &[u64], b: &[u64], tau_start: i64, w: u64, nbins: usize, self_offset: Option<usize>) -> Vec<u64> {
    let mut counts = vec![0u64; nbins];
    let start = tau_start as i128;
    let end = start + nbins as i128 * w as i128;
    let w = w as i128;
    let first = chunk[0] as i128;
    let mut lo = count_le(b, first - end);
    let mut hi = count_le(b, first - start);
    for (i, &ta) in chunk.iter().enumerate() {
        let ta = ta as i128;
        while lo < b.len() && (b[lo] as i128) <= ta - end {
            lo += 1;
        }
        while hi < b.len() && (b[hi] as i128) <= ta - start {
            hi += 1;
        }
        let me = self_offset.map(|o| o + i);
        for (j, &tb) in b[lo..hi].iter().enumerate() {
            if me == Some(lo + j) {
                continue;
            }
            let k = ((ta - tb as i128 - start) / w) as usize;
            counts[k] += 1;
        }
    }
    counts
}

/// Pointer `p[e]` = #{b ≤ a − (start + e·w)}; bin k receives p[k] − p[k+1].
fn edge_sweep(chunk: &[u64], b: &[u64], tau_start: i64, w: u64, nbins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; nbins];
    let start = tau_start as i128;
    let w = w as i128;
    let first = chunk[0] as i128;
    let mut ptr: Vec<usize> = (0..=nbins)
        .map(|e| count_le(b, first - (start + e as i128 * w)))
        .collect();
    for &ta in chunk {
        let ta = ta as i128;
        for (e, p) in ptr.iter_mut().enumerate() {
            let thr = ta - (start + e as i128 * w);
            while *p < b.len() && (b[*p] as i128) <= thr {
                *p += 1;
            }
        }
        for k in 0..nbins {
            counts[k] += (ptr[k] - ptr[k + 1]) as u64;
        }
    }
    counts
}

/// G²(τ) = C(τ)/√(N_A·N_B).
pub fn g2_normalize(h: &CorrelationHistogram) -> Result<Vec<f64>> {
    if h.n_a == 0 || h.n_b == 0 {
        return Err(Error::Argument(format!(
            "cannot normalize: tag counts n_a={}, n_b={}",
            h.n_a, h.n_b
        )));
    }
    let norm = (h.n_a as f64 * h.n_b as f64).sqrt();
    Ok(h.counts.iter().map(|&c| c as f64 / norm).collect())
}

impl CorrelationHistogram {
    /// `tau_ps,counts,g2` lines, τ being each bin's left edge. The g2 column
    /// is left empty when the tag counts are unknown.
    pub fn to_csv(&self) -> String {
        let g2 = g2_normalize(self).ok();
        let mut s = String::with_capacity(self.len() * 32 + 20);
        s.push_str("tau_ps,counts,g2\n");
        for (k, c) in self.counts.iter().enumerate() {
            match &g2 {
                Some(g) => s.push_str(&format!("{},{},{:.9e}\n", self.bin_start(k), c, g[k])),
                None => s.push_str(&format!("{},{},\n", self.bin_start(k), c)),
            }
        }
        s
    }

    /// Parses [`to_csv`](Self::to_csv) output; a third column is ignored.
    /// Bins must be evenly spaced.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut taus = Vec::new();
        let mut counts = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("tau")) {
                continue;
            }
            let mut parts = line.split(',');
            let (Some(t), Some(c), _, None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Format(format!("line {}: expected two or three columns", n + 1)));
            };
            let t: i64 = t.trim().parse().map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
            let c: u64 = c.trim().parse().map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
            taus.push(t);
            counts.push(c);
        }
        if taus.len() < 2 {
            return Err(Error::Format("histogram needs at least two bins".into()));
        }
        let w = taus[1] - taus[0];
        if w <= 0 || taus.windows(2).any(|p| p[1] - p[0] != w) {
            return Err(Error::Format("histogram bins are not evenly spaced".into()));
        }
        Ok(Self {
            tau_start_ps: taus[0],
            bin_width_ps: w as u64,
            counts,
            n_a: 0,
            n_b: 0,
            window_delta_ps: w as u64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeakSearchConfig {
    /// Bin width of the first stage. `None` picks ~256 bins over the window.
    pub initial_bin_ps: Option<u64>,
    /// Bin-width reduction per stage.
    pub refine_factor: u64,
    /// Half-width of each refined window, in bins of that stage.
    pub half_window_bins: u64,
    pub min_significance: f64,
    /// Bins on each side of the maximum left out of the background estimate.
    pub exclusion_bins: usize,
}

impl Default for PeakSearchConfig {
    fn default() -> Self {
        Self {
            initial_bin_ps: None,
            refine_factor: 100,
            half_window_bins: 50,
            min_significance: 5.0,
            exclusion_bins: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageInfo {
    pub bin_width_ps: u64,
    pub window_start_ps: i64,
    pub window_end_ps: i64,
    /// Center of the maximum bin.
    pub tau_ps: i64,
    pub peak_counts: u64,
    pub background_per_bin: f64,
    pub background_sigma: f64,
    pub significance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSearchResult {
    pub tau_peak_ps: i64,
    pub significance: f64,
    /// (bin width, τ) from coarse to fine.
    pub refined_stages: Vec<(u64, i64)>,
    pub stages: Vec<StageInfo>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|x, y| x.total_cmp(y));
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Background level at `peak` and its spread, from the bins outside
/// ±`excl` of it. `shape` is the expected relative accidental level per bin
/// (see [`accidental_shape`]); the level is a robust multiple of it and the
/// spread is 1.4826·MAD of the residuals.
pub fn robust_background(counts: &[u64], shape: &[f64], peak: usize, excl: usize) -> (f64, f64) {
    assert_eq!(counts.len(), shape.len());
    let off: Vec<usize> = (0..counts.len())
        .filter(|&k| k.abs_diff(peak) > excl && shape[k] > 0.0)
        .collect();
    if off.is_empty() {
        return (0.0, 0.0);
    }
    let mut ratio: Vec<f64> = off.iter().map(|&k| counts[k] as f64 / shape[k]).collect();
    let scale = median(&mut ratio);
    let mut dev: Vec<f64> = off
        .iter()
        .map(|&k| (counts[k] as f64 - scale * shape[k]).abs())
        .collect();
    let mad = median(&mut dev);
    (scale * shape[peak], 1.4826 * mad)
}

/// Relative number of accidental pairs per bin for two streams with
/// uniform rates: the mean overlap, over each bin, of the span of `a`
/// shifted by −τ with the span of `b`. Normalized to a maximum of 1; all
/// ones if either stream is empty.
pub fn accidental_shape(a: &[u64], b: &[u64], h: &CorrelationHistogram) -> Vec<f64> {
    let n = h.len();
    let (Some(&a0), Some(&a1), Some(&b0), Some(&b1)) = (a.first(), a.last(), b.first(), b.last()) else {
        return vec![1.0; n];
    };
    let overlap = |tau: f64| {
        let lo = (a0 as f64 - tau).max(b0 as f64);
        let hi = (a1 as f64 - tau).min(b1 as f64);
        (hi - lo).max(0.0)
    };
    const SAMPLES: usize = 8;
    let mut v: Vec<f64> = (0..n)
        .map(|k| {
            let start = h.bin_start(k) as f64;
            let end = if k + 1 < n { h.bin_start(k + 1) } else { h.tau_end_ps() } as f64;
            (0..SAMPLES)
                .map(|j| overlap(start + (j as f64 + 0.5) / SAMPLES as f64 * (end - start)))
                .sum::<f64>()
                / SAMPLES as f64
        })
        .collect();
    let max = v.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        v.iter_mut().for_each(|x| *x /= max);
    } else {
        v.iter_mut().for_each(|x| *x = 1.0);
    }
    v
}

/// Locates the correlation peak of `a − b` inside `coarse_window`, refining
/// the bin width stage by stage down to `target_bin_ps`.
pub fn find_peak(
    a: &[u64],
    b: &[u64],
    coarse_window: (i64, i64),
    target_bin_ps: u64,
    cfg: &PeakSearchConfig,
) -> Result<PeakSearchResult> {
    let (w0, w1) = coarse_window;
    if w1 <= w0 {
        return Err(Error::Argument(format!("empty coarse window [{w0}, {w1})")));
    }
    if target_bin_ps == 0 {
        return Err(Error::Argument("target bin must be ≥ 1 ps".into()));
    }
    if cfg.refine_factor < 2 {
        return Err(Error::Argument("refine factor must be ≥ 2".into()));
    }
    let span = (w1 as i128 - w0 as i128) as u128;
    let mut width = cfg
        .initial_bin_ps
        .unwrap_or_else(|| span.div_ceil(256).min(u64::MAX as u128) as u64)
        .max(target_bin_ps);
    let mut window = (w0, w1);
    let mut stages: Vec<StageInfo> = Vec::new();
    // lowest background density (counts per ps) seen so far
    let mut density: Option<f64> = None;

    loop {
        let h = correlate(a, b, window.0, window.1, width)?;
        let k = h.argmax();
        let peak = h.counts[k];
        let shape = accidental_shape(a, b, &h);
        let (level, spread) = robust_background(&h.counts, &shape, k, cfg.exclusion_bins);
        let level = level.max(0.0);
        let local_density = level / width as f64;
        // Narrow windows can lie entirely inside the peak, so their floor
        // overestimates the background; fall back to the sparsest density
        // measured at a coarser stage and Poisson spread.
        let (bg, sigma) = match density {
            Some(d) if d < local_density => {
                let bg = d * width as f64;
                (bg, bg.max(1.0).sqrt())
            }
            _ => (level, spread.max(level.max(1.0).sqrt())),
        };
        density = Some(density.map_or(local_density, |d| d.min(local_density)));
        let significance = ((peak as f64 - bg) / sigma).max(0.0);
        let tau = h.bin_start(k) + (width / 2) as i64;
        let info = StageInfo {
            bin_width_ps: width,
            window_start_ps: window.0,
            window_end_ps: h.tau_end_ps(),
            tau_ps: tau,
            peak_counts: peak,
            background_per_bin: bg,
            background_sigma: sigma,
            significance,
        };
        stages.push(info);
        if significance < cfg.min_significance {
            return Err(Error::NoPeak {
                stage: stages.len() - 1,
                significance,
                threshold: cfg.min_significance,
                stages,
            });
        }
        if width == target_bin_ps {
            return Ok(PeakSearchResult {
                tau_peak_ps: tau,
                significance,
                refined_stages: stages.iter().map(|s| (s.bin_width_ps, s.tau_ps)).collect(),
                stages,
            });
        }
        // Re-center on the background-subtracted centroid of the maximum and
        // its neighbours, so a peak split across two bins stays inside.
        let center = centroid(&h, k, bg);
        let next = (width / cfg.refine_factor).max(target_bin_ps);
        let half = (cfg.half_window_bins * next) as i64;
        let half = half.max((width / 2 + next) as i64);
        // always keep the whole maximum bin in view
        let lo = (center.round() as i64 - half).min(h.bin_start(k) - next as i64);
        let hi = (center.round() as i64 + half).max(h.bin_start(k) + width as i64 + next as i64);
        let start = lo.div_euclid(next as i64) * next as i64;
        window = (start, hi.max(start + next as i64));
        width = next;
    }
}

fn centroid(h: &CorrelationHistogram, k: usize, bg: f64) -> f64 {
    let lo = k.saturating_sub(1);
    let hi = (k + 1).min(h.len() - 1);
    let mut wsum = 0.0;
    let mut xsum = 0.0;
    for j in lo..=hi {
        let wgt = (h.counts[j] as f64 - bg).max(0.0);
        wsum += wgt;
        xsum += wgt * (h.bin_start(j) as f64 + h.bin_width_ps as f64 / 2.0);
    }
    if wsum > 0.0 {
        xsum / wsum
    } else {
        h.bin_start(k) as f64 + h.bin_width_ps as f64 / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert_eq, proptest};
    use proptest::strategy::Strategy as Gen;
    use rand::{Rng, SeedableRng};

    /// Direct double loop over all pairs.
    fn brute(a: &[u64], b: &[u64], start: i64, end: i64, w: u64) -> Vec<u64> {
        let n = bin_count(start, end, w).unwrap();
        let hi = start as i128 + n as i128 * w as i128;
        let mut c = vec![0; n];
        for &x in a {
            for &y in b {
                let d = x as i128 - y as i128;
                if d >= start as i128 && d < hi {
                    c[((d - start as i128) / w as i128) as usize] += 1;
                }
            }
        }
        c
    }

    fn brute_self(a: &[u64], start: i64, end: i64, w: u64) -> Vec<u64> {
        let n = bin_count(start, end, w).unwrap();
        let hi = start as i128 + n as i128 * w as i128;
        let mut c = vec![0; n];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in a.iter().enumerate() {
                let d = x as i128 - y as i128;
                if i != j && d >= start as i128 && d < hi {
                    c[((d - start as i128) / w as i128) as usize] += 1;
                }
            }
        }
        c
    }

    fn sorted(mut v: Vec<u64>) -> Vec<u64> {
        v.sort_unstable();
        v
    }

    #[test]
    fn single_pair_at_zero() {
        let h = correlate(&[0], &[0], -5, 5, 1).unwrap();
        assert_eq!(h.counts.len(), 10);
        assert_eq!(h.counts[5], 1);
        assert_eq!(h.total(), 1);
    }

    #[test]
    fn difference_is_a_minus_b() {
        let h = correlate(&[100, 200], &[0], 0, 300, 10).unwrap();
        assert_eq!(h.counts[10], 1);
        assert_eq!(h.counts[20], 1);
        assert_eq!(h.total(), 2);
    }

    #[test]
    fn empty_channel_gives_zero_histogram() {
        let h = correlate(&[], &[1, 2, 3], 0, 100, 10).unwrap();
        assert_eq!(h.counts, vec![0; 10]);
        assert_eq!(h.n_a, 0);
    }

    #[test]
    fn inverted_range_is_an_error() {
        assert!(matches!(correlate(&[1], &[1], 10, 0, 1), Err(Error::Argument(_))));
        assert!(matches!(correlate(&[1], &[1], 0, 10, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn both_sweeps_match_brute_force_on_dense_streams() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = sorted((0..3000).map(|_| rng.random_range(0..2_000_000)).collect());
        let b = sorted((0..3000).map(|_| rng.random_range(0..2_000_000)).collect());
        let expected = brute(&a, &b, -500_000, 700_001, 997);
        for s in [Strategy::PairSweep, Strategy::EdgeSweep, Strategy::Auto] {
            let h = correlate_with(&a, &b, -500_000, 700_001, 997, s).unwrap();
            assert_eq!(h.counts, expected, "{s:?}");
        }
    }

    #[test]
    fn chunk_boundaries_do_not_matter() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let a = sorted((0..(CHUNK * 2 + 17)).map(|_| rng.random_range(0..10_000_000)).collect());
        let b = sorted((0..500).map(|_| rng.random_range(0..10_000_000)).collect());
        let h1 = correlate_with(&a, &b, -20_000, 20_000, 100, Strategy::PairSweep).unwrap();
        let h2 = correlate_with(&a, &b, -20_000, 20_000, 100, Strategy::EdgeSweep).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.counts, brute(&a, &b, -20_000, 20_000, 100));
    }

    #[test]
    fn autocorrelation_excludes_self_pairs() {
        let h = autocorrelate(&[1234], -100, 100, 1).unwrap();
        assert_eq!(h.total(), 0);
        // duplicate timestamps still pair with each other
        let h = autocorrelate(&[5, 5], -1, 2, 1).unwrap();
        assert_eq!(h.counts, vec![0, 2, 0]);
    }

    #[test]
    fn autocorrelation_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = sorted((0..CHUNK + 300).map(|_| rng.random_range(0..50_000_000)).collect());
        let h = autocorrelate(&a, -3000, 3000, 7).unwrap();
        assert_eq!(h.counts, brute_self(&a, -3000, 3000, 7));
    }

    #[test]
    fn poisson_autocorrelation_is_flat() {
        // rate r over T: expected per bin ≈ N²·Δ/T
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let t_total = 1_000_000_000u64;
        let n = 20_000;
        let a = sorted((0..n).map(|_| rng.random_range(0..t_total)).collect());
        let h = autocorrelate(&a, -1_000_000, 1_000_000, 10_000).unwrap();
        let expected = (n * n) as f64 * 10_000.0 / t_total as f64;
        let mean = h.total() as f64 / h.len() as f64;
        // bins are correlated only through edge effects (range ≪ T)
        let sigma = (expected / h.len() as f64).sqrt();
        assert!((mean - expected).abs() < 5.0 * sigma + 0.01 * expected, "{mean} vs {expected}");
        for &c in &h.counts {
            assert!((c as f64 - expected).abs() < 6.0 * expected.sqrt());
        }
    }

    #[test]
    fn g2_normalization() {
        let h = CorrelationHistogram {
            tau_start_ps: 0,
            bin_width_ps: 1,
            counts: vec![4],
            n_a: 4,
            n_b: 4,
            window_delta_ps: 1,
        };
        assert_eq!(g2_normalize(&h).unwrap(), vec![1.0]);
        let h2 = CorrelationHistogram { counts: vec![0, 2], n_a: 1, n_b: 4, ..h.clone() };
        assert_eq!(g2_normalize(&h2).unwrap(), vec![0.0, 1.0]);
        let h3 = CorrelationHistogram { n_a: 0, ..h };
        assert!(matches!(g2_normalize(&h3), Err(Error::Argument(_))));
    }

    #[test]
    fn reflection_matches_swapped_arguments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = sorted((0..400).map(|_| rng.random_range(0..100_000)).collect());
        let b = sorted((0..400).map(|_| rng.random_range(0..100_000)).collect());
        // symmetric integer grid so bin edges reflect onto bin edges:
        // a−b ∈ [s, s+w) ⇔ b−a ∈ (−s−w, −s] = [−s−w+1, −s+1)
        let ab = correlate(&a, &b, -5000, 5000, 50).unwrap();
        let ba = correlate(&b, &a, -4999, 5001, 50).unwrap();
        assert_eq!(ab.reflected(), ba);
    }

    fn synthetic_pairs(n: usize, offset: i64, seed: u64, span: u64) -> (Vec<u64>, Vec<u64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..n {
            let t = rng.random_range(0..span);
            let d = rng.random_range(0..300);
            b.push(t);
            a.push((t as i64 + offset + d) as u64);
        }
        // uncorrelated background
        for _ in 0..n {
            a.push(rng.random_range(0..span) + offset as u64);
            b.push(rng.random_range(0..span));
        }
        (sorted(a), sorted(b))
    }

    #[test]
    fn find_peak_recovers_offset() {
        let offset = 123_456_789_000i64;
        let (a, b) = synthetic_pairs(20_000, offset, 6, 2_000_000_000_000);
        let r = find_peak(&a, &b, (0, 250_000_000_000), 16, &PeakSearchConfig::default()).unwrap();
        assert!((r.tau_peak_ps - offset).abs() <= 320, "{} vs {offset}", r.tau_peak_ps);
        assert!(r.significance >= 5.0);
        assert!(r.refined_stages.windows(2).all(|w| w[0].0 > w[1].0));
        for s in &r.stages {
            assert!(s.window_start_ps <= r.tau_peak_ps && r.tau_peak_ps < s.window_end_ps);
        }
    }

    #[test]
    fn find_peak_at_window_edge() {
        let offset = 99_990_000_000i64;
        let (a, b) = synthetic_pairs(20_000, offset, 7, 2_000_000_000_000);
        let r = find_peak(&a, &b, (0, 100_000_000_000), 16, &PeakSearchConfig::default()).unwrap();
        assert!((r.tau_peak_ps - offset).abs() <= 320);
    }

    #[test]
    fn pure_background_has_no_peak() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let span = 1_000_000_000_000u64;
        let a = sorted((0..20_000).map(|_| rng.random_range(0..span)).collect());
        let b = sorted((0..20_000).map(|_| rng.random_range(0..span)).collect());
        let err = find_peak(&a, &b, (0, 100_000_000_000), 16, &PeakSearchConfig::default()).unwrap_err();
        match err {
            Error::NoPeak { stage, stages, .. } => {
                assert_eq!(stage, 0);
                assert_eq!(stages.len(), 1);
            }
            other => panic!("expected NoPeak, got {other:?}"),
        }
    }

    fn arb_pair() -> impl Gen<Value = (Vec<u64>, Vec<u64>, i64, i64, u64)> {
        (
            prop::collection::vec(0u64..5_000, 0..200),
            prop::collection::vec(0u64..5_000, 0..200),
            -3000i64..3000,
            1i64..4000,
            1u64..300,
        )
            .prop_map(|(a, b, s, len, w)| (sorted(a), sorted(b), s, s + len, w))
    }

    proptest! {
        #[test]
        fn matches_brute_force((a, b, s, e, w) in arb_pair()) {
            let expected = brute(&a, &b, s, e, w);
            for strat in [Strategy::PairSweep, Strategy::EdgeSweep] {
                let h = correlate_with(&a, &b, s, e, w, strat).unwrap();
                prop_assert_eq!(&h.counts, &expected);
            }
        }

        #[test]
        fn shift_equivariance((a, b, s, e, w) in arb_pair(), shift in 0u64..10_000) {
            let shifted: Vec<u64> = a.iter().map(|t| t + shift).collect();
            let h = correlate(&a, &b, s, e, w).unwrap();
            let hs = correlate(&shifted, &b, s + shift as i64, e + shift as i64, w).unwrap();
            prop_assert_eq!(h.counts, hs.counts);
        }

        #[test]
        fn swap_symmetry((a, b, s, _e, w) in arb_pair(), n in 1usize..40) {
            let e = s + (n as u64 * w) as i64;
            let ab = correlate(&a, &b, s, e, w).unwrap();
            let ba = correlate(&b, &a, -e + 1, -s + 1, w).unwrap();
            prop_assert_eq!(ab.reflected(), ba);
        }
    }

    #[test]
    fn csv_round_trip() {
        let h = correlate(&[100, 250, 900], &[0, 40], -200, 1000, 50).unwrap();
        let back = CorrelationHistogram::from_csv(&h.to_csv()).unwrap();
        assert_eq!(back.counts, h.counts);
        assert_eq!(back.tau_start_ps, h.tau_start_ps);
        assert_eq!(back.bin_width_ps, 50);
        assert!(CorrelationHistogram::from_csv("tau_ps,counts\n0,1\n5,2\n7,1\n").is_err());
    }
}
