use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of severity grades. Fixed for every dataset this crate reads.
pub const NUM_GRADES: usize = 5;

/// A severity grade in `0..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct GradeId(u8);

impl GradeId {
    pub fn new(value: i64) -> Result<Self> {
        if (0..NUM_GRADES as i64).contains(&value) {
            Ok(GradeId(value as u8))
        } else {
            Err(Error::InvalidGrade(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = GradeId> {
        (0..NUM_GRADES as u8).map(GradeId)
    }
}

impl TryFrom<i64> for GradeId {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        GradeId::new(value)
    }
}

impl From<GradeId> for u8 {
    fn from(g: GradeId) -> u8 {
        g.0
    }
}

impl fmt::Display for GradeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
