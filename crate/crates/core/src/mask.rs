//! Permit/forbid matrices consumed by masked attention.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskCell {
    Permit,
    Forbid,
}

/// Dense `rows x cols` permit/forbid matrix, row-major.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    permit: Vec<bool>,
}

impl MaskMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> MaskCell) -> Self {
        let mut permit = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                permit.push(f(i, j) == MaskCell::Permit);
            }
        }
        Self { rows, cols, permit }
    }

    pub fn all_permit(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            permit: vec![true; rows * cols],
        }
    }

    /// Lower-triangular permit pattern, diagonal included.
    pub fn causal(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("temporal mask needs n >= 1"));
        }
        Ok(Self::from_fn(n, n, |i, j| {
            if j <= i {
                MaskCell::Permit
            } else {
                MaskCell::Forbid
            }
        }))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn permits(&self, i: usize, j: usize) -> bool {
        self.permit[i * self.cols + j]
    }

    pub fn cell(&self, i: usize, j: usize) -> MaskCell {
        if self.permits(i, j) {
            MaskCell::Permit
        } else {
            MaskCell::Forbid
        }
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.permit[i * self.cols..(i + 1) * self.cols]
    }

    pub fn permit_count(&self) -> usize {
        self.permit.iter().filter(|&&p| p).count()
    }

    pub fn is_all_permit(&self) -> bool {
        self.permit.iter().all(|&p| p)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.cell(j, i))
    }
}

impl fmt::Debug for MaskMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MaskMatrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let line: String = self
                .row(i)
                .iter()
                .map(|&p| if p { '1' } else { '.' })
                .collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}
