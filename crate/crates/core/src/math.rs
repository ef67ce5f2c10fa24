use std::sync::atomic::{AtomicU32, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Independent random stream for `(seed, stream)`; used to make sharded work
/// reproducible regardless of scheduling.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Row-major `f32` parameter table that several workers may update without
/// locking. Individual components are read and written atomically with
/// relaxed ordering; concurrent read-modify-write of the same component may
/// lose an update, which asynchronous SGD tolerates.
pub(crate) struct SharedTable {
    dim: usize,
    data: Vec<AtomicU32>,
}

impl SharedTable {
    pub(crate) fn from_vec(dim: usize, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len() % dim.max(1), 0);
        SharedTable {
            dim,
            data: values.into_iter().map(|v| AtomicU32::new(v.to_bits())).collect(),
        }
    }

    pub(crate) fn zeros(rows: usize, dim: usize) -> Self {
        Self::from_vec(dim, vec![0.0; rows * dim])
    }

    pub(crate) fn read_row(&self, row: usize, out: &mut [f64]) {
        let start = row * self.dim;
        for (o, cell) in out.iter_mut().zip(&self.data[start..start + self.dim]) {
            *o = f32::from_bits(cell.load(Ordering::Relaxed)) as f64;
        }
    }

    /// `row += scale * delta`
    pub(crate) fn add_row(&self, row: usize, delta: &[f64], scale: f64) {
        let start = row * self.dim;
        for (d, cell) in delta.iter().zip(&self.data[start..start + self.dim]) {
            let old = f32::from_bits(cell.load(Ordering::Relaxed));
            let new = (old as f64 + scale * d) as f32;
            cell.store(new.to_bits(), Ordering::Relaxed);
        }
    }

    pub(crate) fn to_vec(&self) -> Vec<f32> {
        self.data
            .iter()
            .map(|c| f32::from_bits(c.load(Ordering::Relaxed)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(-800.0) >= 0.0);
        assert!(softplus(800.0).is_finite());
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        // softplus(-x) = -ln sigmoid(x)
        for x in [-5.0, -0.3, 0.0, 2.0, 9.0] {
            assert!((softplus(-x) + sigmoid(x).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_table_updates() {
        let t = SharedTable::zeros(2, 3);
        t.add_row(1, &[1.0, 2.0, 3.0], 0.5);
        let mut row = [0.0; 3];
        t.read_row(1, &mut row);
        assert_eq!(row, [0.5, 1.0, 1.5]);
        t.read_row(0, &mut row);
        assert_eq!(row, [0.0; 3]);
    }
}
