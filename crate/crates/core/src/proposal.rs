use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::interval::Interval;

/// A candidate action interval. `confidence` is the score attached by the
/// upstream proposal generator, when one was supplied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub id: usize,
    pub interval: Interval,
    pub confidence: Option<f64>,
}

/// The proposals of one video together with their original (`d`-wide) and
/// extended (`3d`-wide) feature rows. Row `i` belongs to proposal id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    proposals: Vec<Proposal>,
    features: Array2<f64>,
    extended: Array2<f64>,
}

impl ProposalSet {
    pub fn new(
        intervals: Vec<(Interval, Option<f64>)>,
        features: Array2<f64>,
        extended: Array2<f64>,
    ) -> Result<Self> {
        let n = intervals.len();
        if features.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "proposal feature rows",
                expected: n,
                actual: features.nrows(),
            });
        }
        if extended.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "extended feature rows",
                expected: n,
                actual: extended.nrows(),
            });
        }
        if extended.ncols() != 3 * features.ncols() {
            return Err(Error::DimensionMismatch {
                context: "extended feature width",
                expected: 3 * features.ncols(),
                actual: extended.ncols(),
            });
        }
        let proposals = intervals
            .into_iter()
            .enumerate()
            .map(|(id, (interval, confidence))| Proposal {
                id,
                interval,
                confidence,
            })
            .collect();
        Ok(Self {
            proposals,
            features,
            extended,
        })
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn proposals(&self) -> &[Proposal] {
        &self.proposals
    }

    pub fn intervals(&self) -> Vec<Interval> {
        self.proposals.iter().map(|p| p.interval).collect()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn extended_features(&self) -> &Array2<f64> {
        &self.extended
    }

    pub fn feature(&self, id: usize) -> ArrayView1<'_, f64> {
        self.features.row(id)
    }
}
