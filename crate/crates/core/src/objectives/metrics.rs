use std::fmt::Write as _;

use super::LabelMask;
use crate::error::{Error, Result};

fn check_same(pred: &LabelMask, target: &LabelMask) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Numerics(gctx_numerics::Error::Dimension {
            op: "metric",
            msg: format!("prediction {:?} and target {:?} differ in shape", pred.shape(), target.shape()),
        }));
    }
    Ok(())
}

/// Dice similarity of class `k`: 1 when both sets are empty, 0 when exactly one is.
pub fn dsc(pred: &LabelMask, target: &LabelMask, k: u8) -> Result<f64> {
    check_same(pred, target)?;
    let (mut p, mut t, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(target.data()) {
        let (ia, ib) = (a == k, b == k);
        p += ia as usize;
        t += ib as usize;
        both += (ia && ib) as usize;
    }
    Ok(match (p, t) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => 2.0 * both as f64 / (p + t) as f64,
    })
}

/// Pixels of class `k` with at least one 4-neighbour outside the class
/// (the image border counts as outside), in raster order.
pub fn surface(mask: &LabelMask, k: u8) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height(), mask.width());
    let inside = |y: isize, x: isize| {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask.get(y as usize, x as usize) == k
    };
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) != k {
                continue;
            }
            let (yi, xi) = (y as isize, x as isize);
            if !(inside(yi - 1, xi) && inside(yi + 1, xi) && inside(yi, xi - 1) && inside(yi, xi + 1)) {
                out.push((y, x));
            }
        }
    }
    out
}

/// Distance between two pixel positions with per-axis spacing `[row, col]`.
#[inline]
pub fn pixel_distance(a: (usize, usize), b: (usize, usize), spacing: [f64; 2]) -> f64 {
    let dy = (a.0 as f64 - b.0 as f64) * spacing[0];
    let dx = (a.1 as f64 - b.1 as f64) * spacing[1];
    (dy * dy + dx * dx).sqrt()
}

/// Surface points bucketed by column with rows ascending.
struct ColumnIndex {
    cols: Vec<Vec<usize>>,
}

impl ColumnIndex {
    fn new(points: &[(usize, usize)], width: usize) -> Self {
        let mut cols = vec![Vec::new(); width];
        for &(y, x) in points {
            cols[x].push(y);
        }
        Self { cols }
    }

    /// Nearest indexed point to `p`. Columns are scanned outward from `p`'s
    /// column and the scan stops once the column offset alone exceeds the best
    /// distance found, so the result equals the exhaustive minimum.
    fn nearest(&self, p: (usize, usize), spacing: [f64; 2]) -> f64 {
        let width = self.cols.len();
        let mut best = f64::INFINITY;
        for off in 0..width {
            let bound = pixel_distance((0, 0), (0, off), spacing);
            if bound > best {
                break;
            }
            let left = p.1.checked_sub(off);
            let right = if off > 0 { Some(p.1 + off).filter(|&c| c < width) } else { None };
            if left.is_none() && right.is_none() {
                break;
            }
            for c in [left, right].into_iter().flatten() {
                let rows = &self.cols[c];
                let i = rows.partition_point(|&r| r < p.0);
                for j in [i.checked_sub(1), Some(i)].into_iter().flatten() {
                    if let Some(&r) = rows.get(j) {
                        best = best.min(pixel_distance(p, (r, c), spacing));
                    }
                }
            }
        }
        best
    }
}

/// 95th percentile by linear interpolation at position `q·(n−1)` of the sorted list.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Pooled bidirectional surface distances of class `k`, unsorted;
/// `None` when either side has no pixel of the class.
pub fn surface_distances(pred: &LabelMask, target: &LabelMask, k: u8, spacing: [f64; 2]) -> Result<Option<Vec<f64>>> {
    check_same(pred, target)?;
    if pred.planes() != 1 {
        return Err(Error::Data(format!("hd95 expects a single [H,W] plane, got {:?}", pred.shape())));
    }
    if !spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::config(format!("spacing must be positive and finite, got {spacing:?}")));
    }
    let (sa, sb) = (surface(pred, k), surface(target, k));
    if sa.is_empty() || sb.is_empty() {
        return Ok(None);
    }
    let w = pred.width();
    let (ia, ib) = (ColumnIndex::new(&sa, w), ColumnIndex::new(&sb, w));
    let mut d = Vec::with_capacity(sa.len() + sb.len());
    d.extend(sa.iter().map(|&p| ib.nearest(p, spacing)));
    d.extend(sb.iter().map(|&p| ia.nearest(p, spacing)));
    Ok(Some(d))
}

/// 95th-percentile symmetric Hausdorff distance of class `k`.
/// `None` is the undefined result for an empty class on either side.
pub fn hd95(pred: &LabelMask, target: &LabelMask, k: u8, spacing: [f64; 2]) -> Result<Option<f64>> {
    Ok(surface_distances(pred, target, k, spacing)?.map(|mut d| {
        d.sort_by(f64::total_cmp);
        percentile(&d, 0.95)
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: u8,
    pub dsc: f64,
    pub hd95: Option<f64>,
}

/// Metrics of one case over its foreground classes.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub classes: Vec<ClassMetrics>,
    pub mean_dsc: f64,
    /// Mean over classes with a defined HD95.
    pub mean_hd95: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Per-class DSC (and HD95 when `spacing` is given) for classes `1..num_classes`.
pub fn evaluate_case(
    pred: &LabelMask,
    target: &LabelMask,
    num_classes: usize,
    spacing: Option<[f64; 2]>,
) -> Result<CaseReport> {
    check_same(pred, target)?;
    pred.validate(num_classes)?;
    target.validate(num_classes)?;
    let mut classes = Vec::with_capacity(num_classes.saturating_sub(1));
    for k in 1..num_classes {
        let k = k as u8;
        let hd = match spacing {
            Some(sp) => hd95(pred, target, k, sp)?,
            None => None,
        };
        classes.push(ClassMetrics { class: k, dsc: dsc(pred, target, k)?, hd95: hd });
    }
    let mean_dsc = mean(classes.iter().map(|c| c.dsc)).unwrap_or(1.0);
    let mean_hd95 = mean(classes.iter().filter_map(|c| c.hd95));
    Ok(CaseReport { classes, mean_dsc, mean_hd95 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSummary {
    pub class: u8,
    pub dsc: f64,
    pub hd95: Option<f64>,
    /// Cases where HD95 was undefined for this class.
    pub hd95_undefined: usize,
}

/// Dataset-level aggregation of case reports.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub cases: usize,
    pub classes: Vec<ClassSummary>,
    pub mean_dsc: f64,
    pub mean_hd95: Option<f64>,
    pub with_hd95: bool,
}

impl MetricReport {
    pub fn aggregate(cases: &[CaseReport], with_hd95: bool) -> Result<Self> {
        let first = cases.first().ok_or_else(|| Error::Usage("no cases to aggregate".into()))?;
        let mut classes = Vec::new();
        for (ci, c) in first.classes.iter().enumerate() {
            let dsc = mean(cases.iter().map(|r| r.classes[ci].dsc)).unwrap_or(0.0);
            let hd95 = mean(cases.iter().filter_map(|r| r.classes[ci].hd95));
            let undefined = if with_hd95 { cases.iter().filter(|r| r.classes[ci].hd95.is_none()).count() } else { 0 };
            classes.push(ClassSummary { class: c.class, dsc, hd95, hd95_undefined: undefined });
        }
        let mean_dsc = mean(classes.iter().map(|c| c.dsc)).unwrap_or(1.0);
        let mean_hd95 = mean(classes.iter().filter_map(|c| c.hd95));
        Ok(Self { cases: cases.len(), classes, mean_dsc, mean_hd95, with_hd95 })
    }

    /// Fixed-column table: DSC in percent, HD95 in spacing units, `-` for undefined.
    pub fn to_table(&self) -> String {
        let hd = |v: Option<f64>| v.map_or_else(|| format!("{:>10}", "-"), |x| format!("{x:>10.4}"));
        let mut s = String::new();
        let _ = writeln!(s, "{:<8}{:>10}{:>10}{:>12}", "class", "dsc_%", "hd95", "hd95_undef");
        for c in &self.classes {
            let _ = writeln!(s, "{:<8}{:>10.4}{}{:>12}", c.class, 100.0 * c.dsc, hd(c.hd95), c.hd95_undefined);
        }
        let _ = writeln!(s, "{:<8}{:>10.4}{}{:>12}", "mean", 100.0 * self.mean_dsc, hd(self.mean_hd95), "");
        let _ = writeln!(s, "cases={}", self.cases);
        s
    }
}
