//! Flat row-major particle storage.

/// `n x d` particle matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub d: usize,
    pub data: Vec<f64>,
}

impl Ensemble {
    pub fn zeros(n: usize, d: usize) -> Self {
        Ensemble {
            d,
            data: vec![0.0; n * d],
        }
    }

    pub fn n(&self) -> usize {
        self.data.len().checked_div(self.d).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    /// Per-coordinate sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.n();
        let mut m = vec![0.0; self.d];
        for row in self.rows() {
            for (mi, &x) in m.iter_mut().zip(row) {
                *mi += x;
            }
        }
        for mi in &mut m {
            *mi /= n as f64;
        }
        m
    }

    /// Per-coordinate unbiased sample variance.
    pub fn variance(&self) -> Vec<f64> {
        let n = self.n();
        let m = self.mean();
        let mut v = vec![0.0; self.d];
        for row in self.rows() {
            for ((vi, &mi), &x) in v.iter_mut().zip(&m).zip(row) {
                let dx = x - mi;
                *vi += dx * dx;
            }
        }
        for vi in &mut v {
            *vi /= (n - 1) as f64;
        }
        v
    }
}
