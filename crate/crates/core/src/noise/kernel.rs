use crate::error::{Error, Result};

/// Truncated 2D Gaussian kernel on `[-r, r]^2`, normalized to unit sum.
///
/// The square support makes it exactly separable: `k(i, j) = g(i) g(j)` with
/// `g` the unit-sum 1D profile.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    radius: usize,
    profile: Vec<f64>,
}

pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<Kernel> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "kernel bandwidth must be positive, got {sigma}"
        )));
    }
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(Kernel {
        radius,
        profile: raw.into_iter().map(|v| v / total).collect(),
    })
}

impl Kernel {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn size(&self) -> usize {
        2 * self.radius + 1
    }

    /// Weight at offset `(i, j)`, `|i|, |j| <= radius`; zero outside the support.
    pub fn get(&self, i: isize, j: isize) -> f64 {
        let r = self.radius as isize;
        if i.abs() > r || j.abs() > r {
            return 0.0;
        }
        self.profile[(i + r) as usize] * self.profile[(j + r) as usize]
    }

    /// Dense `(2r+1) x (2r+1)` matrix, row-major.
    pub fn to_matrix(&self) -> Vec<f64> {
        let r = self.radius as isize;
        (-r..=r)
            .flat_map(|i| (-r..=r).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect()
    }

    pub fn sum_sq(&self) -> f64 {
        let s: f64 = self.profile.iter().map(|v| v * v).sum();
        s * s
    }

    /// `(k * k)(di, dj) = sum k(i, j) k(i + di, j + dj)`.
    pub fn autocorrelation(&self, di: isize, dj: isize) -> f64 {
        let r = self.radius as isize;
        let mut acc = 0.0;
        for i in -r..=r {
            for j in -r..=r {
                acc += self.get(i, j) * self.get(i + di, j + dj);
            }
        }
        acc
    }

    /// Same-size convolution of a `rows x cols` field with zero padding.
    pub fn convolve_zero_padded(&self, field: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        debug_assert_eq!(field.len(), rows * cols);
        let r = self.radius as isize;
        let mut tmp = vec![0.0; rows * cols];
        for a in 0..rows {
            let src = &field[a * cols..(a + 1) * cols];
            for d in 0..cols {
                let mut acc = 0.0;
                for (k, &w) in self.profile.iter().enumerate() {
                    let j = d as isize - (k as isize - r);
                    if j >= 0 && (j as usize) < cols {
                        acc += w * src[j as usize];
                    }
                }
                tmp[a * cols + d] = acc;
            }
        }
        let mut out = vec![0.0; rows * cols];
        for a in 0..rows {
            for (k, &w) in self.profile.iter().enumerate() {
                let i = a as isize - (k as isize - r);
                if i < 0 || i as usize >= rows {
                    continue;
                }
                let src = &tmp[i as usize * cols..(i as usize + 1) * cols];
                for (o, s) in out[a * cols..(a + 1) * cols].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn narrow_kernel_is_an_impulse() {
        let k = gaussian_kernel(0.1, 1).unwrap();
        assert!((k.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_sum_and_peak_at_center() {
        let k = gaussian_kernel(2.0, 6).unwrap();
        let m = k.to_matrix();
        let sum: f64 = m.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let max = m.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(k.get(0, 0), max);
        // closed form, evaluated directly
        let norm: f64 = (-6..=6)
            .flat_map(|i| (-6..=6).map(move |j| (i, j)))
            .map(|(i, j): (i32, i32)| (-((i * i + j * j) as f64) / 8.0).exp())
            .sum();
        assert!((k.get(2, -3) - (-(4.0 + 9.0) / 8.0f64).exp() / norm).abs() < 1e-15);
    }

    #[test]
    fn symmetric() {
        let k = gaussian_kernel(1.7, 5).unwrap();
        for i in -5..=5 {
            for j in -5..=5 {
                assert_eq!(k.get(i, j), k.get(j, i));
                assert_eq!(k.get(i, j), k.get(-i, j));
                assert_eq!(k.get(i, j), k.get(i, -j));
            }
        }
    }

    #[test]
    fn rejects_non_positive_sigma() {
        assert!(gaussian_kernel(0.0, 3).is_err());
        assert!(gaussian_kernel(-1.0, 3).is_err());
    }

    #[test]
    fn separable_convolution_matches_direct_2d() {
        let k = gaussian_kernel(1.3, 3).unwrap();
        let (rows, cols) = (7, 9);
        let field: Vec<f64> = (0..rows * cols)
            .map(|v| ((v * 7919) % 13) as f64 - 6.0)
            .collect();
        let fast = k.convolve_zero_padded(&field, rows, cols);
        for a in 0..rows as isize {
            for d in 0..cols as isize {
                let mut acc = 0.0;
                for i in -3..=3isize {
                    for j in -3..=3isize {
                        let (sa, sd) = (a - i, d - j);
                        if sa >= 0 && sd >= 0 && sa < rows as isize && sd < cols as isize {
                            acc += k.get(i, j) * field[(sa * cols as isize + sd) as usize];
                        }
                    }
                }
                assert!((acc - fast[(a * cols as isize + d) as usize]).abs() < 1e-12);
            }
        }
    }
}
