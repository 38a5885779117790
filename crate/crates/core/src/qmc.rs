//! Halton low-discrepancy sequences with an optional Cranley–Patterson shift.

const PRIMES: [u64; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut acc = 0.0;
    while index > 0 {
        acc += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    acc
}

#[derive(Debug, Clone)]
pub struct Halton {
    dim: usize,
    shift: Vec<f64>,
}

impl Halton {
    pub fn new(dim: usize) -> Self {
        assert!(dim <= PRIMES.len(), "Halton sequence supports up to {} dimensions", PRIMES.len());
        Self { dim, shift: vec![0.0; dim] }
    }

    /// Random shift modulo 1 applied to every coordinate.
    pub fn with_shift(dim: usize, shift: Vec<f64>) -> Self {
        assert_eq!(shift.len(), dim);
        assert!(dim <= PRIMES.len());
        Self { dim, shift }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Point `index` (starting at 1 to skip the origin) written into `out`.
    pub fn point_into(&self, index: u64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(self.dim) {
            let v = radical_inverse(index, PRIMES[k]) + self.shift[k];
            *o = v - v.floor();
        }
    }

    pub fn point(&self, index: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.point_into(index, &mut out);
        out
    }
}
