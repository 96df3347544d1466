//! Interval algebra on the video time axis.
//!
//! Times are unitless non-negative reals; the file formats treat them as
//! seconds.

use std::fmt;

use crate::error::{Error, Result};

/// A half-open temporal span `[start, end)` with strictly positive length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    start: f64,
    end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::InvalidInterval {
                start,
                end,
                reason: "bounds must be finite",
            });
        }
        if start < 0.0 {
            return Err(Error::InvalidInterval {
                start,
                end,
                reason: "start must be non-negative",
            });
        }
        if end <= start {
            return Err(Error::InvalidInterval {
                start,
                end,
                reason: "end must be greater than start",
            });
        }
        Ok(Self { start, end })
    }

    /// Builds an interval from its center and length.
    pub fn from_center_length(center: f64, length: f64) -> Result<Self> {
        Self::new(center - 0.5 * length, center + 0.5 * length)
    }

    #[inline]
    pub fn start(&self) -> f64 {
        self.start
    }

    #[inline]
    pub fn end(&self) -> f64 {
        self.end
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    #[inline]
    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    /// Length of the overlap with `other`, zero when disjoint.
    #[inline]
    pub fn intersection(&self, other: &Interval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    /// Union measure `len(a) + len(b) - I(a, b)`. For disjoint intervals this is
    /// the sum of lengths, not the spanning hull.
    #[inline]
    pub fn union(&self, other: &Interval) -> f64 {
        self.length() + other.length() - self.intersection(other)
    }

    /// Clips to `[lo, hi]`, returning `None` if nothing of positive length remains.
    pub fn clip(&self, lo: f64, hi: f64) -> Option<Interval> {
        let s = self.start.max(lo);
        let e = self.end.min(hi);
        if e > s {
            Some(Interval { start: s, end: e })
        } else {
            None
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

/// An annotated action instance. Label 0 is reserved for background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthInstance {
    pub interval: Interval,
    pub label: usize,
}

impl GroundTruthInstance {
    pub fn new(interval: Interval, label: usize) -> Result<Self> {
        if label == 0 {
            return Err(Error::Config(
                "ground-truth label 0 is reserved for background".into(),
            ));
        }
        Ok(Self { interval, label })
    }
}

/// Boundary offset of a ground truth relative to a proposal:
/// normalized center shift and log length ratio.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Offset {
    pub center: f64,
    pub length: f64,
}

impl Offset {
    pub const ZERO: Offset = Offset {
        center: 0.0,
        length: 0.0,
    };

    pub fn new(center: f64, length: f64) -> Result<Self> {
        if !center.is_finite() || !length.is_finite() {
            return Err(Error::NonFinite(format!("offset ({center}, {length})")));
        }
        Ok(Self { center, length })
    }
}

/// Temporal intersection over union.
pub fn tiou(a: &Interval, b: &Interval) -> f64 {
    let inter = a.intersection(b);
    inter / (a.length() + b.length() - inter)
}

/// Fraction of `proposal` covered by `reference`.
pub fn coverage(proposal: &Interval, reference: &Interval) -> f64 {
    proposal.intersection(reference) / proposal.length()
}

/// Center distance normalized by the union measure.
pub fn surround_distance(a: &Interval, b: &Interval) -> f64 {
    (a.center() - b.center()).abs() / a.union(b)
}

pub fn encode_offset(proposal: &Interval, gt: &Interval) -> Offset {
    Offset {
        center: (proposal.center() - gt.center()) / proposal.length(),
        length: (proposal.length() / gt.length()).ln(),
    }
}

/// Inverse of [`encode_offset`]. A decoded start below zero is clamped to the
/// origin of the time axis.
pub fn decode_offset(proposal: &Interval, offset: &Offset) -> Result<Interval> {
    if !offset.center.is_finite() || !offset.length.is_finite() {
        return Err(Error::NonFinite(format!(
            "offset ({}, {})",
            offset.center, offset.length
        )));
    }
    let length = proposal.length() * (-offset.length).exp();
    let center = proposal.center() - offset.center * proposal.length();
    if !(length.is_finite() && length > 0.0 && center.is_finite()) {
        return Err(Error::InvalidInterval {
            start: center - 0.5 * length,
            end: center + 0.5 * length,
            reason: "decoded length is not a positive finite number",
        });
    }
    let start = (center - 0.5 * length).max(0.0);
    Interval::new(start, center + 0.5 * length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn iv(s: f64, e: f64) -> Interval {
        Interval::new(s, e).unwrap()
    }

    #[test]
    fn rejects_degenerate_intervals() {
        assert!(Interval::new(3.0, 3.0).is_err());
        assert!(Interval::new(4.0, 3.0).is_err());
        assert!(Interval::new(-1.0, 3.0).is_err());
        assert!(Interval::new(0.0, f64::NAN).is_err());
    }

    #[test]
    fn tiou_examples() {
        assert_eq!(tiou(&iv(0.0, 10.0), &iv(0.0, 10.0)), 1.0);
        assert_eq!(tiou(&iv(0.0, 5.0), &iv(10.0, 20.0)), 0.0);
        assert_abs_diff_eq!(tiou(&iv(0.0, 10.0), &iv(5.0, 15.0)), 1.0 / 3.0, epsilon = 1e-12);
        // touching endpoints share no measure
        assert_eq!(tiou(&iv(0.0, 5.0), &iv(5.0, 7.0)), 0.0);
    }

    #[test]
    fn surround_distance_examples() {
        let p = iv(3.0, 9.0);
        assert_eq!(surround_distance(&p, &p), 0.0);
        assert_abs_diff_eq!(surround_distance(&iv(0.0, 10.0), &iv(12.0, 22.0)), 0.6, epsilon = 1e-12);
        assert_eq!(surround_distance(&iv(0.0, 10.0), &iv(20.0, 30.0)), 1.0);
    }

    #[test]
    fn offset_examples() {
        let p = iv(8.0, 12.0); // center 10, length 4
        let g = iv(7.0, 15.0); // center 11, length 8
        let o = encode_offset(&p, &g);
        assert_abs_diff_eq!(o.center, -0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(o.length, -std::f64::consts::LN_2, epsilon = 1e-12);
        let o2 = encode_offset(&g, &p);
        assert_abs_diff_eq!(o2.center, 0.125, epsilon = 1e-12);
        assert_abs_diff_eq!(o2.length, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_eq!(encode_offset(&p, &p), Offset::ZERO);

        assert_eq!(decode_offset(&p, &Offset::ZERO).unwrap(), p);
        let d = decode_offset(&p, &Offset { center: -0.25, length: -std::f64::consts::LN_2 }).unwrap();
        assert_abs_diff_eq!(d.center(), 11.0, epsilon = 1e-4);
        assert_abs_diff_eq!(d.length(), 8.0, epsilon = 1e-3);
    }

    #[test]
    fn decode_rejects_overflow() {
        let p = iv(8.0, 12.0);
        assert!(decode_offset(&p, &Offset { center: 0.0, length: -1e6 }).is_err());
        assert!(decode_offset(&p, &Offset { center: f64::NAN, length: 0.0 }).is_err());
    }

    fn arb_interval() -> impl Strategy<Value = Interval> {
        (0.0f64..100.0, 0.01f64..50.0).prop_map(|(s, l)| Interval::new(s, s + l).unwrap())
    }

    proptest! {
        #[test]
        fn tiou_symmetric_and_bounded(a in arb_interval(), b in arb_interval()) {
            let ab = tiou(&a, &b);
            prop_assert_eq!(ab, tiou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(tiou(&a, &a), 1.0);
        }

        #[test]
        fn surround_distance_symmetric(a in arb_interval(), b in arb_interval()) {
            let d = surround_distance(&a, &b);
            prop_assert_eq!(d, surround_distance(&b, &a));
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d == 0.0, a.center() == b.center());
        }

        #[test]
        fn offset_round_trip(p in arb_interval(), g in arb_interval()) {
            let back = decode_offset(&p, &encode_offset(&p, &g)).unwrap();
            prop_assert!((back.start() - g.start()).abs() < 1e-9);
            prop_assert!((back.end() - g.end()).abs() < 1e-9);
        }
    }
}
