//! Unscrambled Sobol sequence with Joe-Kuo direction numbers.
//!
//! Points are produced in Gray-code order, the same ordering as the usual
//! incremental generator, so point `i` is the XOR of the direction numbers
//! selected by the set bits of `i ^ (i >> 1)`. Point 0 is the origin.

use crate::error::{Error, Result};

const BITS: usize = 32;

/// (degree, polynomial coefficients a, initial direction numbers m) for
/// dimensions 2.. of the new-joe-kuo-6.21201 table. Dimension 1 is the
/// van der Corput sequence.
const JOE_KUO: &[(u32, u32, &[u32])] = &[
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

/// Highest supported dimension.
pub const MAX_DIMENSION: usize = JOE_KUO.len() + 1;

/// Direction numbers for one dimension, scaled to 32-bit integers.
fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim - 1];
    let s = s as usize;
    for k in 0..s.min(BITS) {
        v[k] = m[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

/// Deterministic Sobol generator over `dimension` coordinates.
#[derive(Clone, Debug)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
}

impl Sobol {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Domain("Sobol dimension must be >= 1".into()));
        }
        if dimension > MAX_DIMENSION {
            return Err(Error::Capability(format!(
                "Sobol dimension {dimension} exceeds the {MAX_DIMENSION} supported"
            )));
        }
        Ok(Self {
            directions: (0..dimension).map(direction_numbers).collect(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.directions.len()
    }

    /// Raw 32-bit integer coordinates of point `index`.
    pub fn point_bits(&self, index: u64) -> Vec<u32> {
        assert!(index < (1u64 << BITS), "Sobol index beyond 2^32");
        let gray = index ^ (index >> 1);
        self.directions
            .iter()
            .map(|v| {
                let mut x = 0u32;
                let mut g = gray;
                let mut k = 0;
                while g != 0 {
                    if g & 1 == 1 {
                        x ^= v[k];
                    }
                    g >>= 1;
                    k += 1;
                }
                x
            })
            .collect()
    }

    /// Point `index` in `[0,1)^dimension`.
    pub fn point(&self, index: u64) -> Vec<f64> {
        self.point_bits(index)
            .into_iter()
            .map(|x| x as f64 / (1u64 << BITS) as f64)
            .collect()
    }
}

/// Point `index + skip` of the `dimension`-dimensional sequence.
pub fn sobol_sample(dimension: usize, index: u64, skip: u64) -> Result<Vec<f64>> {
    Ok(Sobol::new(dimension)?.point(index + skip))
}
