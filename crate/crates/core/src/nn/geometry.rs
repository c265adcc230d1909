//! Strided 'same'-padded convolution geometry and the im2col/col2im pair.
//!
//! A forward convolution maps a `big` grid onto `small = ceil(big / stride)`
//! cells. The transposed convolution is its exact adjoint with
//! `big = small · stride`, so both layers share this geometry.

/// Geometry along all three spatial axes (2D grids use depth 1, kernel 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub big: [usize; 3],
    pub small: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeometry {
    /// Geometry of a forward convolution reading `big` cells.
    pub fn downsample(big: [usize; 3], kernel: [usize; 3], stride: [usize; 3]) -> Self {
        let mut small = [0; 3];
        let mut pad = [0; 3];
        for a in 0..3 {
            small[a] = big[a].div_ceil(stride[a]);
            let total = ((small[a] - 1) * stride[a] + kernel[a]).saturating_sub(big[a]);
            pad[a] = total / 2;
        }
        ConvGeometry {
            big,
            small,
            kernel,
            stride,
            pad,
        }
    }

    /// Geometry of a transposed convolution producing `small · stride` cells.
    pub fn upsample(small: [usize; 3], kernel: [usize; 3], stride: [usize; 3]) -> Self {
        let big = [
            small[0] * stride[0],
            small[1] * stride[1],
            small[2] * stride[2],
        ];
        Self::downsample(big, kernel, stride)
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn big_len(&self) -> usize {
        self.big.iter().product()
    }

    pub fn small_len(&self) -> usize {
        self.small.iter().product()
    }

    /// Range of small indices `o` with `o·s + k − pad` inside `0..big` on `axis`.
    #[inline]
    fn valid(&self, axis: usize, k: usize) -> (usize, usize) {
        let (s, p, big, small) = (self.stride[axis], self.pad[axis], self.big[axis], self.small[axis]);
        // o*s + k >= p  and  o*s + k - p < big
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if big + p > k { (big + p - k).div_ceil(s).min(small) } else { 0 };
        (lo, hi.max(lo))
    }

    /// Gathers `channels × big` into a `(channels·K) × small` matrix.
    pub fn im2col<T: Copy + Default>(&self, x: &[T], channels: usize, cols: &mut [T]) {
        let p_len = self.small_len();
        let big_len = self.big_len();
        debug_assert_eq!(x.len(), channels * big_len);
        debug_assert_eq!(cols.len(), channels * self.kernel_len() * p_len);
        let [kd, kh, kw] = self.kernel;
        let [_, sh, sw] = self.small;
        let [_, bh, bw] = self.big;
        let mut row = 0;
        for c in 0..channels {
            let xc = &x[c * big_len..(c + 1) * big_len];
            for kz in 0..kd {
                let (z0, z1) = self.valid(0, kz);
                for ky in 0..kh {
                    let (y0, y1) = self.valid(1, ky);
                    for kx in 0..kw {
                        let (x0, x1) = self.valid(2, kx);
                        let dst = &mut cols[row * p_len..(row + 1) * p_len];
                        dst.fill(T::default());
                        for oz in z0..z1 {
                            let iz = oz * self.stride[0] + kz - self.pad[0];
                            for oy in y0..y1 {
                                let iy = oy * self.stride[1] + ky - self.pad[1];
                                let src_row = &xc[(iz * bh + iy) * bw..(iz * bh + iy + 1) * bw];
                                let drow = &mut dst[(oz * sh + oy) * sw..(oz * sh + oy + 1) * sw];
                                let s = self.stride[2];
                                let base = kx as isize - self.pad[2] as isize;
                                for ox in x0..x1 {
                                    drow[ox] = src_row[(ox as isize * s as isize + base) as usize];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters-adds columns back onto `x`.
    pub fn col2im<T: Copy + std::ops::AddAssign>(&self, cols: &[T], channels: usize, x: &mut [T]) {
        let p_len = self.small_len();
        let big_len = self.big_len();
        debug_assert_eq!(x.len(), channels * big_len);
        debug_assert_eq!(cols.len(), channels * self.kernel_len() * p_len);
        let [kd, kh, kw] = self.kernel;
        let [_, sh, sw] = self.small;
        let [_, bh, bw] = self.big;
        let mut row = 0;
        for c in 0..channels {
            let xc = &mut x[c * big_len..(c + 1) * big_len];
            for kz in 0..kd {
                let (z0, z1) = self.valid(0, kz);
                for ky in 0..kh {
                    let (y0, y1) = self.valid(1, ky);
                    for kx in 0..kw {
                        let (x0, x1) = self.valid(2, kx);
                        let src = &cols[row * p_len..(row + 1) * p_len];
                        for oz in z0..z1 {
                            let iz = oz * self.stride[0] + kz - self.pad[0];
                            for oy in y0..y1 {
                                let iy = oy * self.stride[1] + ky - self.pad[1];
                                let dst_row = &mut xc[(iz * bh + iy) * bw..(iz * bh + iy + 1) * bw];
                                let srow = &src[(oz * sh + oy) * sw..(oz * sh + oy + 1) * sw];
                                let s = self.stride[2];
                                let base = kx as isize - self.pad[2] as isize;
                                for ox in x0..x1 {
                                    dst_row[(ox as isize * s as isize + base) as usize] += srow[ox];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}
