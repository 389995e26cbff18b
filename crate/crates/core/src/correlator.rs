//! Single-pass coincidence correlation of time-tag streams.
//!
//! Every pair of events whose separation is within the window is counted
//! (no first-match rule). A pair is booked when its later event arrives, so
//! the working set is only the events of the trailing window.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::timetag::{TimeTagRecord, UNSET_LABEL};

pub const DEFAULT_BIN_PS: u64 = 8;
pub const DEFAULT_WINDOW_PS: u64 = 25_000;
pub const DEFAULT_BUFFER_CAP: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorrelationParams {
    pub bin_width_ps: u64,
    pub window_ps: u64,
    /// Maximum events held per channel inside the window.
    pub buffer_cap: usize,
}

impl Default for CorrelationParams {
    fn default() -> Self {
        CorrelationParams {
            bin_width_ps: DEFAULT_BIN_PS,
            window_ps: DEFAULT_WINDOW_PS,
            buffer_cap: DEFAULT_BUFFER_CAP,
        }
    }
}

impl CorrelationParams {
    pub fn new(bin_width_ps: u64, window_ps: u64) -> Self {
        CorrelationParams {
            bin_width_ps,
            window_ps,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.bin_width_ps == 0 {
            return Err(Error::invalid("bin width must be at least 1 ps"));
        }
        if self.window_ps == 0 {
            return Err(Error::invalid("correlation window must be positive"));
        }
        if self.window_ps > i64::MAX as u64 / 4 {
            return Err(Error::invalid("correlation window too large"));
        }
        Ok(())
    }
}

/// Binned delays `δτ = t_a − t_b`. Bin `b` covers
/// `[tau_min + b·w, tau_min + (b+1)·w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: u64,
    pub tau_min_ps: i64,
    pub tau_max_ps: i64,
    pub counts: Vec<u64>,
    pub singles_a: u64,
    pub singles_b: u64,
    pub duration_s: f64,
    pub basis_label: [u8; 2],
}

impl CoincidenceHistogram {
    /// Empty histogram whose range `[−n·w, n·w)` holds every `|δτ| ≤ window`.
    pub fn for_window(bin_width_ps: u64, window_ps: u64) -> Self {
        let w = bin_width_ps as i64;
        let n = window_ps as i64 / w + 1;
        Self::with_range(bin_width_ps, -n * w, n * w)
    }

    pub fn with_range(bin_width_ps: u64, tau_min_ps: i64, tau_max_ps: i64) -> Self {
        let bins = ((tau_max_ps - tau_min_ps) / bin_width_ps as i64) as usize;
        CoincidenceHistogram {
            bin_width_ps,
            tau_min_ps,
            tau_max_ps,
            counts: vec![0; bins],
            singles_a: 0,
            singles_b: 0,
            duration_s: 0.0,
            basis_label: UNSET_LABEL,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn bin_of(&self, delta_ps: i64) -> Option<usize> {
        if delta_ps < self.tau_min_ps || delta_ps >= self.tau_max_ps {
            return None;
        }
        Some(((delta_ps - self.tau_min_ps) as u64 / self.bin_width_ps) as usize)
    }

    pub fn bin_start(&self, bin: usize) -> i64 {
        self.tau_min_ps + bin as i64 * self.bin_width_ps as i64
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        self.bin_start(bin) as f64 + 0.5 * self.bin_width_ps as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sum of the bins lying entirely inside `[lo, hi)`.
    pub fn counts_in(&self, lo: i64, hi: i64) -> u64 {
        (0..self.num_bins())
            .filter(|&b| self.bin_start(b) >= lo && self.bin_start(b) + self.bin_width_ps as i64 <= hi)
            .map(|b| self.counts[b])
            .sum()
    }

    pub fn label_str(&self) -> String {
        String::from_utf8_lossy(&self.basis_label).into_owned()
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.bin_width_ps == other.bin_width_ps
            && self.tau_min_ps == other.tau_min_ps
            && self.tau_max_ps == other.tau_max_ps
    }

    /// Bin-wise sum of counts, singles and durations.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if !self.same_grid(other) {
            return Err(Error::invalid("histograms have different bin grids"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.singles_a += other.singles_a;
        self.singles_b += other.singles_b;
        self.duration_s += other.duration_s;
        Ok(())
    }

    /// Reflection `δτ → −δτ` with the roles of `a` and `b` swapped. Exact for
    /// integer delays when the bin width is 1 ps.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        out.tau_min_ps = -self.tau_max_ps;
        out.tau_max_ps = -self.tau_min_ps;
        out.counts.reverse();
        std::mem::swap(&mut out.singles_a, &mut out.singles_b);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# qdpair coincidence histogram v1").unwrap();
        writeln!(s, "# bin_width_ps={}", self.bin_width_ps).unwrap();
        writeln!(s, "# tau_min_ps={}", self.tau_min_ps).unwrap();
        writeln!(s, "# tau_max_ps={}", self.tau_max_ps).unwrap();
        writeln!(s, "# singles_a={}", self.singles_a).unwrap();
        writeln!(s, "# singles_b={}", self.singles_b).unwrap();
        writeln!(s, "# duration_s={}", self.duration_s).unwrap();
        writeln!(s, "# basis_label={}", self.label_str()).unwrap();
        writeln!(s, "bin_center_ps,count").unwrap();
        for (b, c) in self.counts.iter().enumerate() {
            writeln!(s, "{},{}", self.bin_center(b), c).unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("histogram CSV: {m}"));
        let mut meta = std::collections::HashMap::new();
        let mut counts = Vec::new();
        let mut saw_columns = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if !saw_columns {
                if line != "bin_center_ps,count" {
                    return Err(bad(format!("line {}: expected column header", lineno + 1)));
                }
                saw_columns = true;
                continue;
            }
            let (_, c) = line
                .split_once(',')
                .ok_or_else(|| bad(format!("line {}: missing comma", lineno + 1)))?;
            counts.push(
                c.trim()
                    .parse::<u64>()
                    .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?,
            );
        }
        fn field<T: std::str::FromStr>(
            meta: &std::collections::HashMap<String, String>,
            key: &str,
        ) -> Result<T> {
            meta.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("histogram CSV: missing or bad `{key}`")))
        }
        let label: String = field(&meta, "basis_label")?;
        let lb = label.as_bytes();
        if lb.len() != 2 {
            return Err(bad(format!("basis label `{label}` is not 2 characters")));
        }
        let mut h = CoincidenceHistogram::with_range(
            field(&meta, "bin_width_ps")?,
            field(&meta, "tau_min_ps")?,
            field(&meta, "tau_max_ps")?,
        );
        if h.bin_width_ps == 0 || h.counts.len() != counts.len() {
            return Err(bad(format!(
                "{} count rows for a {}-bin range",
                counts.len(),
                h.counts.len()
            )));
        }
        h.counts = counts;
        h.singles_a = field(&meta, "singles_a")?;
        h.singles_b = field(&meta, "singles_b")?;
        h.duration_s = field(&meta, "duration_s")?;
        h.basis_label = [lb[0], lb[1]];
        Ok(h)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io_util::write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Streaming cross-correlator for one channel pair.
pub struct Correlator {
    ch_a: u16,
    ch_b: u16,
    window: i64,
    cap: usize,
    buf_a: VecDeque<i64>,
    buf_b: VecDeque<i64>,
    hist: CoincidenceHistogram,
    last: Option<u64>,
    first: Option<u64>,
    position: u64,
}

impl Correlator {
    /// `ch_a == ch_b` selects auto-correlation.
    pub fn new(ch_a: u16, ch_b: u16, params: CorrelationParams) -> Result<Self> {
        params.validate()?;
        Ok(Correlator {
            ch_a,
            ch_b,
            window: params.window_ps as i64,
            cap: params.buffer_cap,
            buf_a: VecDeque::new(),
            buf_b: VecDeque::new(),
            hist: CoincidenceHistogram::for_window(params.bin_width_ps, params.window_ps),
            last: None,
            first: None,
            position: 0,
        })
    }

    fn check_order(&mut self, rec: &TimeTagRecord) -> Result<()> {
        if let Some(prev) = self.last {
            if rec.timestamp < prev {
                return Err(Error::Unsorted {
                    position: self.position,
                    previous: prev,
                    current: rec.timestamp,
                });
            }
        }
        self.last = Some(rec.timestamp);
        self.position += 1;
        Ok(())
    }

    #[inline]
    fn evict(buf: &mut VecDeque<i64>, horizon: i64) {
        while buf.front().is_some_and(|&t| t < horizon) {
            buf.pop_front();
        }
    }

    fn insert(&mut self, own_a: bool, t: i64) -> Result<()> {
        let buf = if own_a { &mut self.buf_a } else { &mut self.buf_b };
        buf.push_back(t);
        if buf.len() > self.cap {
            return Err(Error::BufferCap {
                needed: buf.len(),
                cap: self.cap,
            });
        }
        Ok(())
    }

    /// Adds `rec` to the window without booking pairs (chunk look-back).
    pub fn prime(&mut self, rec: &TimeTagRecord) -> Result<()> {
        self.check_order(rec)?;
        let t = rec.timestamp as i64;
        let horizon = t - self.window;
        Self::evict(&mut self.buf_a, horizon);
        Self::evict(&mut self.buf_b, horizon);
        if rec.channel == self.ch_a {
            self.insert(true, t)?;
        } else if rec.channel == self.ch_b {
            self.insert(false, t)?;
        }
        Ok(())
    }

    pub fn push(&mut self, rec: &TimeTagRecord) -> Result<()> {
        self.check_order(rec)?;
        self.first.get_or_insert(rec.timestamp);
        let t = rec.timestamp as i64;
        let horizon = t - self.window;
        if self.ch_a == self.ch_b {
            if rec.channel != self.ch_a {
                return Ok(());
            }
            Self::evict(&mut self.buf_a, horizon);
            for &prev in &self.buf_a {
                let d = t - prev;
                if let Some(b) = self.hist.bin_of(d) {
                    self.hist.counts[b] += 1;
                }
                if let Some(b) = self.hist.bin_of(-d) {
                    self.hist.counts[b] += 1;
                }
            }
            self.hist.singles_a += 1;
            self.hist.singles_b += 1;
            return self.insert(true, t);
        }
        if rec.channel == self.ch_a {
            Self::evict(&mut self.buf_b, horizon);
            for &tb in &self.buf_b {
                if let Some(b) = self.hist.bin_of(t - tb) {
                    self.hist.counts[b] += 1;
                }
            }
            self.hist.singles_a += 1;
            Self::evict(&mut self.buf_a, horizon);
            self.insert(true, t)
        } else if rec.channel == self.ch_b {
            Self::evict(&mut self.buf_a, horizon);
            for &ta in &self.buf_a {
                if let Some(b) = self.hist.bin_of(ta - t) {
                    self.hist.counts[b] += 1;
                }
            }
            self.hist.singles_b += 1;
            Self::evict(&mut self.buf_b, horizon);
            self.insert(false, t)
        } else {
            Ok(())
        }
    }

    /// Duration defaults to the span between the first and last pushed event.
    pub fn finish(mut self) -> CoincidenceHistogram {
        if let (Some(f), Some(l)) = (self.first, self.last) {
            self.hist.duration_s = (l - f) as f64 * 1e-12;
        }
        self.hist
    }
}

/// `δτ = t_a − t_b` histogram of an in-memory stream.
pub fn cross_correlate(
    records: &[TimeTagRecord],
    ch_a: u16,
    ch_b: u16,
    params: CorrelationParams,
) -> Result<CoincidenceHistogram> {
    correlate_iter(records.iter().map(|r| Ok(*r)), ch_a, ch_b, params)
}

/// Same as [`cross_correlate`] over a fallible record stream (e.g. a reader).
pub fn correlate_iter(
    records: impl IntoIterator<Item = Result<TimeTagRecord>>,
    ch_a: u16,
    ch_b: u16,
    params: CorrelationParams,
) -> Result<CoincidenceHistogram> {
    let mut c = Correlator::new(ch_a, ch_b, params)?;
    for r in records {
        c.push(&r?)?;
    }
    Ok(c.finish())
}

/// Ordered-pair delay histogram within one channel, self-pairs excluded;
/// symmetric about zero.
pub fn auto_correlate(
    records: &[TimeTagRecord],
    ch: u16,
    params: CorrelationParams,
) -> Result<CoincidenceHistogram> {
    cross_correlate(records, ch, ch, params)
}

/// Splits the stream into `chunks` time-ordered pieces, correlates them in
/// parallel and sums the partial histograms. Each chunk is primed with the
/// events of the preceding window so seam pairs are booked exactly once.
pub fn correlate_chunked(
    records: &[TimeTagRecord],
    ch_a: u16,
    ch_b: u16,
    params: CorrelationParams,
    chunks: usize,
) -> Result<CoincidenceHistogram> {
    params.validate()?;
    let chunks = chunks.max(1);
    let n = records.len();
    let bounds: Vec<(usize, usize)> = (0..chunks)
        .map(|i| (i * n / chunks, (i + 1) * n / chunks))
        .filter(|(s, e)| e > s)
        .collect();
    let parts = bounds
        .par_iter()
        .map(|&(s, e)| {
            let mut c = Correlator::new(ch_a, ch_b, params)?;
            let horizon = records[s].timestamp.saturating_sub(params.window_ps);
            let from = records[..s].partition_point(|r| r.timestamp < horizon);
            for r in &records[from..s] {
                c.prime(r)?;
            }
            for r in &records[s..e] {
                c.push(r)?;
            }
            Ok(c.finish())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = CoincidenceHistogram::for_window(params.bin_width_ps, params.window_ps);
    for p in &parts {
        total.accumulate(p)?;
    }
    total.duration_s = match (records.first(), records.last()) {
        (Some(f), Some(l)) => (l.timestamp - f.timestamp) as f64 * 1e-12,
        _ => 0.0,
    };
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct G2Estimate {
    pub g2_zero: f64,
    pub sigma: f64,
    pub center_counts: u64,
    pub mean_side_counts: f64,
}

impl G2Estimate {
    /// Single-photon purity `1 − g²(0)`.
    pub fn purity(&self) -> f64 {
        1.0 - self.g2_zero
    }
}

/// Center-peak area over the mean of `2·n_side_peaks` side-peak areas, each
/// integrated over bins whose centers lie within `±peak_halfwidth` of
/// `k·rep_period`. Poisson errors are propagated.
pub fn g2_from_histogram(
    hist: &CoincidenceHistogram,
    rep_period_ps: f64,
    peak_halfwidth_ps: f64,
    n_side_peaks: usize,
) -> Result<G2Estimate> {
    if n_side_peaks == 0 || rep_period_ps <= 0.0 || peak_halfwidth_ps <= 0.0 {
        return Err(Error::invalid("g2 needs positive period, half-width and side peaks"));
    }
    let reach = n_side_peaks as f64 * rep_period_ps + peak_halfwidth_ps;
    if reach > hist.tau_max_ps as f64 + 1e-9 || -reach < hist.tau_min_ps as f64 - 1e-9 {
        return Err(Error::invalid(format!(
            "histogram range [{}, {}) ps does not span {} side peaks",
            hist.tau_min_ps, hist.tau_max_ps, n_side_peaks
        )));
    }
    let area = |center: f64| -> u64 {
        (0..hist.num_bins())
            .filter(|&b| {
                let c = hist.bin_center(b);
                c >= center - peak_halfwidth_ps && c < center + peak_halfwidth_ps
            })
            .map(|b| hist.counts[b])
            .sum()
    };
    let center = area(0.0);
    let mut side_total = 0u64;
    for k in 1..=n_side_peaks {
        let t = k as f64 * rep_period_ps;
        side_total += area(t) + area(-t);
    }
    if side_total == 0 {
        return Err(Error::invalid("side peaks are empty"));
    }
    let mean_side = side_total as f64 / (2 * n_side_peaks) as f64;
    let g2 = center as f64 / mean_side;
    let sigma = if center > 0 {
        g2 * (1.0 / center as f64 + 1.0 / side_total as f64).sqrt()
    } else {
        1.0 / mean_side
    };
    Ok(G2Estimate {
        g2_zero: g2,
        sigma,
        center_counts: center,
        mean_side_counts: mean_side,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelSelect {
    One(u16),
    All,
}

impl ChannelSelect {
    fn matches(self, ch: u16) -> bool {
        match self {
            ChannelSelect::One(c) => c == ch,
            ChannelSelect::All => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct RatePoint {
    /// Window center, seconds since the stream epoch.
    pub t_center_s: f64,
    pub rate_hz: f64,
}

/// Count rates in consecutive non-overlapping windows of `window_s` that lie
/// entirely within `[start_ps, end_ps)`.
pub fn rate_series(
    records: impl IntoIterator<Item = TimeTagRecord>,
    select: ChannelSelect,
    window_s: f64,
    start_ps: u64,
    end_ps: u64,
) -> Result<Vec<RatePoint>> {
    if !(window_s > 0.0) {
        return Err(Error::invalid("rate window must be positive"));
    }
    let w_ps = window_s * 1e12;
    let n = ((end_ps.saturating_sub(start_ps)) as f64 / w_ps + 1e-9).floor() as usize;
    let mut counts = vec![0u64; n];
    for r in records {
        if r.timestamp < start_ps || !select.matches(r.channel) {
            continue;
        }
        let k = ((r.timestamp - start_ps) as f64 / w_ps) as usize;
        if k < n {
            counts[k] += 1;
        }
    }
    Ok(counts
        .iter()
        .enumerate()
        .map(|(k, &c)| RatePoint {
            t_center_s: start_ps as f64 * 1e-12 + (k as f64 + 0.5) * window_s,
            rate_hz: c as f64 / window_s,
        })
        .collect())
}
