//! Max pooling of segment features over proposal intervals.
//!
//! Segment `i` of a video with `n` segments covers `[i·L, (i+1)·L)`,
//! `L = duration / n`.

use ndarray::{s, Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::par;

/// Elementwise max over segments meeting `[a, b)`, or `None` when no segment does.
fn pool_span(segments: ArrayView2<'_, f32>, duration: f64, a: f64, b: f64) -> Option<Array1<f64>> {
    let n = segments.nrows();
    let seg = duration / n as f64;
    let (a, b) = (a.max(0.0), b.min(duration));
    if b <= a {
        return None;
    }
    let lo = ((a / seg).floor() as usize).saturating_sub(1);
    let hi = (((b / seg).ceil() as usize) + 1).min(n);
    let mut out: Option<Array1<f64>> = None;
    for i in lo..hi {
        if (i as f64) * seg < b && ((i + 1) as f64) * seg > a {
            let row = segments.row(i).mapv(f64::from);
            match &mut out {
                Some(acc) => acc.zip_mut_with(&row, |x, &y| *x = x.max(y)),
                None => out = Some(row),
            }
        }
    }
    out
}

fn check_inside(duration: f64, interval: &Interval) -> Result<()> {
    if duration.is_nan() || duration <= 0.0 || interval.start() >= duration {
        return Err(Error::InvalidInterval {
            start: interval.start(),
            end: interval.end(),
            reason: "interval lies outside the video",
        });
    }
    Ok(())
}

/// Elementwise max over every segment whose span intersects `interval`.
pub fn pool_proposal_feature(segments: ArrayView2<'_, f32>, duration: f64, interval: &Interval) -> Result<Array1<f64>> {
    check_inside(duration, interval)?;
    pool_span(segments, duration, interval.start(), interval.end()).ok_or(Error::InvalidInterval {
        start: interval.start(),
        end: interval.end(),
        reason: "interval covers no segment",
    })
}

/// `left ‖ center ‖ right`, where the flanks extend the interval by half its
/// length on either side. Flanks are clipped to the video; a flank clipped
/// away entirely pools to zeros.
pub fn pool_extended_feature(segments: ArrayView2<'_, f32>, duration: f64, interval: &Interval) -> Result<Array1<f64>> {
    let d = segments.ncols();
    let center = pool_proposal_feature(segments, duration, interval)?;
    let half = 0.5 * interval.length();
    let left = pool_span(segments, duration, interval.start() - half, interval.start());
    let right = pool_span(segments, duration, interval.end(), interval.end() + half);
    let mut out = Array1::zeros(3 * d);
    if let Some(l) = left {
        out.slice_mut(s![..d]).assign(&l);
    }
    out.slice_mut(s![d..2 * d]).assign(&center);
    if let Some(r) = right {
        out.slice_mut(s![2 * d..]).assign(&r);
    }
    Ok(out)
}

/// Pooled `(features, extended)` matrices, one row per interval.
pub fn pool_all(segments: ArrayView2<'_, f32>, duration: f64, intervals: &[Interval]) -> Result<(Array2<f64>, Array2<f64>)> {
    let d = segments.ncols();
    let rows = par::map_slice(intervals, |iv| pool_extended_feature(segments, duration, iv));
    let mut feats = Array2::zeros((intervals.len(), d));
    let mut ext = Array2::zeros((intervals.len(), 3 * d));
    for (i, r) in rows.into_iter().enumerate() {
        let r = r?;
        feats.row_mut(i).assign(&r.slice(s![d..2 * d]));
        ext.row_mut(i).assign(&r);
    }
    Ok((feats, ext))
}
