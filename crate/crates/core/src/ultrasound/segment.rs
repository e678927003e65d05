//! Threshold, morphological opening and closing, and connected components
//! on a packed bit mask.

use serde::Deserialize;

use super::{eccentricity, UltrasoundFrame, VesselMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentParams {
    pub threshold: u8,
    pub open_radius: usize,
    pub close_radius: usize,
    pub min_area: usize,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            threshold: 60,
            open_radius: 2,
            close_radius: 2,
            min_area: 50,
        }
    }
}

/// Binary image, one bit per pixel, rows padded to whole words. Padding
/// bits are always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    words: usize,
    bits: Vec<u64>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        let words = width.div_ceil(64);
        Self {
            width,
            height,
            words,
            bits: vec![0; words * height],
        }
    }

    pub fn threshold(frame: &UltrasoundFrame, below: u8) -> Self {
        // moves byte i's low bit to bit 56 + i
        const GATHER: u64 = 0x0102_0408_1020_4080;
        let mut m = Self::new(frame.width, frame.height);
        let mut flags = [0u8; 64];
        for (r, row) in frame.intensities.chunks_exact(frame.width).enumerate() {
            let dst = &mut m.bits[r * m.words..(r + 1) * m.words];
            for (word, px) in dst.iter_mut().zip(row.chunks(64)) {
                flags.fill(0);
                for (f, &v) in flags.iter_mut().zip(px) {
                    *f = (v < below) as u8;
                }
                let mut w = 0u64;
                for (j, bytes) in flags.chunks_exact(8).enumerate() {
                    let x = u64::from_le_bytes(bytes.try_into().expect("eight bytes"));
                    w |= (x.wrapping_mul(GATHER) >> 56) << (8 * j);
                }
                *word = w;
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.words + c / 64] >> (c % 64) & 1 == 1
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        let w = &mut self.bits[r * self.words + c / 64];
        if v {
            *w |= 1 << (c % 64);
        } else {
            *w &= !(1 << (c % 64));
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn row(&self, r: usize) -> &[u64] {
        &self.bits[r * self.words..(r + 1) * self.words]
    }

    fn tail_mask(&self) -> u64 {
        match self.width % 64 {
            0 => u64::MAX,
            k => (1u64 << k) - 1,
        }
    }

    /// Horizontal run of length `2k + 1` combined with AND (erode) or OR.
    fn horizontal<const ERODE: bool>(&self, k: usize) -> Vec<u64> {
        debug_assert!(k < 64);
        let n = self.words;
        let fill = if ERODE { u64::MAX } else { 0 };
        let tail = self.tail_mask();
        let mut out = self.bits.clone();
        // one fill word on each side; padding bits read as `fill`
        let mut padded = vec![fill; n + 2];
        for r in 0..self.height {
            padded[1..=n].copy_from_slice(self.row(r));
            padded[n] = (padded[n] & tail) | (fill & !tail);
            let dst = &mut out[r * n..(r + 1) * n];
            for (o, win) in dst.iter_mut().zip(padded.windows(3)) {
                let (lo, mid, hi) = (win[0], win[1], win[2]);
                let mut acc = mid;
                for d in 1..=k as u32 {
                    // bit c of `right` is pixel c + d, of `left` pixel c - d
                    let right = (mid >> d) | (hi << (64 - d));
                    let left = (mid << d) | (lo >> (64 - d));
                    acc = if ERODE { acc & right & left } else { acc | right | left };
                }
                *o = acc;
            }
            dst[n - 1] &= tail;
        }
        out
    }

    /// Erosion pads with ones, dilation with zeros.
    fn morph<const ERODE: bool>(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let n = self.words;
        let rr = (radius * radius) as isize;
        let spans: Vec<usize> = (0..=radius)
            .map(|dy| {
                let dy = dy as isize;
                (0..=radius as isize).take_while(|dx| dx * dx + dy * dy <= rr).count() - 1
            })
            .collect();
        let mut runs: Vec<Option<Vec<u64>>> = vec![None; radius + 1];
        for &k in &spans {
            if runs[k].is_none() {
                runs[k] = Some(self.horizontal::<ERODE>(k));
            }
        }
        let runs: Vec<&[u64]> = spans.iter().map(|&k| runs[k].as_deref().unwrap()).collect();
        let mut out = Mask::new(self.width, self.height);
        let tail = self.tail_mask();
        for r in 0..self.height {
            let dst = &mut out.bits[r * n..(r + 1) * n];
            dst.fill(if ERODE { u64::MAX } else { 0 });
            // out-of-image rows are neutral under either padding
            let lo = r.saturating_sub(radius);
            let hi = (r + radius).min(self.height - 1);
            for src_r in lo..=hi {
                let src = &runs[src_r.abs_diff(r)][src_r * n..(src_r + 1) * n];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o = if ERODE { *o & s } else { *o | s };
                }
            }
            dst[n - 1] &= tail;
        }
        out
    }

    pub fn erode(&self, radius: usize) -> Mask {
        self.morph::<true>(radius)
    }

    pub fn dilate(&self, radius: usize) -> Mask {
        self.morph::<false>(radius)
    }

    pub fn open(&self, radius: usize) -> Mask {
        self.erode(radius).dilate(radius)
    }

    pub fn close(&self, radius: usize) -> Mask {
        self.dilate(radius).erode(radius)
    }

    /// Maximal horizontal runs of set bits as `(row, first, last + 1)`,
    /// in scan order.
    fn runs(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.height {
            let row = self.row(r);
            let mut open: Option<usize> = None;
            for (wi, &word) in row.iter().enumerate() {
                let base = wi * 64;
                let mut w = word;
                let mut pos = 0u32;
                while pos < 64 {
                    match open {
                        None => {
                            if w == 0 {
                                break;
                            }
                            let z = w.trailing_zeros();
                            pos += z;
                            w >>= z;
                            open = Some(base + pos as usize);
                        }
                        Some(s) => {
                            let o = w.trailing_ones();
                            pos += o;
                            if pos >= 64 {
                                break;
                            }
                            w >>= o;
                            out.push((r, s, base + pos as usize));
                            open = None;
                        }
                    }
                }
            }
            if let Some(s) = open {
                out.push((r, s, self.width));
            }
        }
        out
    }

    /// 8-connected components, in scan order of their first pixel.
    pub fn components(&self) -> Vec<Component> {
        let runs = self.runs();
        let mut parent: Vec<usize> = (0..runs.len()).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        // runs of the previous row, as a window into `runs`
        let (mut prev_lo, mut prev_hi) = (0, 0);
        let mut i = 0;
        while i < runs.len() {
            let r = runs[i].0;
            let row_lo = i;
            while i < runs.len() && runs[i].0 == r {
                i += 1;
            }
            if prev_hi > prev_lo && runs[prev_lo].0 + 1 == r {
                let mut j = prev_lo;
                for k in row_lo..i {
                    let (_, s, e) = runs[k];
                    // diagonal contact: half-open ends may touch
                    while j < prev_hi && runs[j].2 < s {
                        j += 1;
                    }
                    let mut m = j;
                    while m < prev_hi && runs[m].1 <= e {
                        let (a, b) = (find(&mut parent, k), find(&mut parent, m));
                        if a != b {
                            // the smaller index is the earlier run in scan order
                            parent[a.max(b)] = a.min(b);
                        }
                        m += 1;
                    }
                }
            }
            (prev_lo, prev_hi) = (row_lo, i);
        }
        let mut slot = vec![usize::MAX; runs.len()];
        let mut out: Vec<Component> = Vec::new();
        for (k, &(r, s, e)) in runs.iter().enumerate() {
            let root = find(&mut parent, k);
            if slot[root] == usize::MAX {
                slot[root] = out.len();
                out.push(Component::new(r, s));
            }
            out[slot[root]].add_run(r, s, e);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub area: usize,
    pub sum_row: f64,
    pub sum_col: f64,
    pub min_row: usize,
    pub max_row: usize,
    pub min_col: usize,
    pub max_col: usize,
}

impl Component {
    fn new(r: usize, c: usize) -> Self {
        Self {
            area: 0,
            sum_row: 0.0,
            sum_col: 0.0,
            min_row: r,
            max_row: r,
            min_col: c,
            max_col: c,
        }
    }

    /// Adds pixels `first..end` of row `r`. Sums stay integer-valued, so
    /// the order of addition does not change them.
    fn add_run(&mut self, r: usize, first: usize, end: usize) {
        let n = end - first;
        self.area += n;
        self.sum_row += (r * n) as f64;
        self.sum_col += (n * (first + end - 1)) as f64 / 2.0;
        self.min_row = self.min_row.min(r);
        self.max_row = self.max_row.max(r);
        self.min_col = self.min_col.min(first);
        self.max_col = self.max_col.max(end - 1);
    }

    /// (column, row)
    pub fn centroid(&self) -> (f64, f64) {
        (self.sum_col / self.area as f64, self.sum_row / self.area as f64)
    }

    pub fn measure(&self) -> VesselMeasure {
        let w = (self.max_col - self.min_col + 1) as f64;
        let h = (self.max_row - self.min_row + 1) as f64;
        VesselMeasure {
            centroid: self.centroid(),
            w,
            h,
            e: eccentricity(w, h).expect("extents are at least one pixel"),
            found: true,
        }
    }
}

fn candidates(frame: &UltrasoundFrame, p: &SegmentParams) -> Vec<Component> {
    let mask = Mask::threshold(frame, p.threshold).open(p.open_radius).close(p.close_radius);
    mask.components().into_iter().filter(|c| c.area >= p.min_area).collect()
}

/// Largest qualifying dark component.
pub fn segment_vessel(frame: &UltrasoundFrame, p: &SegmentParams) -> VesselMeasure {
    candidates(frame, p)
        .iter()
        .max_by_key(|c| c.area)
        .map(Component::measure)
        .unwrap_or_else(VesselMeasure::not_found)
}

/// Qualifying component whose centroid is nearest `hint` (column, row);
/// used to keep tracking one vessel when another enters the frame.
pub fn segment_vessel_near(frame: &UltrasoundFrame, p: &SegmentParams, hint: (f64, f64)) -> VesselMeasure {
    candidates(frame, p)
        .iter()
        .min_by(|a, b| {
            let d = |c: &Component| {
                let (x, y) = c.centroid();
                (x - hint.0).powi(2) + (y - hint.1).powi(2)
            };
            d(a).total_cmp(&d(b))
        })
        .map(Component::measure)
        .unwrap_or_else(VesselMeasure::not_found)
}
