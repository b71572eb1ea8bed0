//! 2D convolution primitives: im2col/col2im plus the three linear maps
//! (forward, input-gradient, weight-gradient) that both the convolution and
//! transposed-convolution layers are built from.
//!
//! Shapes follow the `[batch, channel, height, width]` convention. A
//! convolution with weight `[co, ci, k, k]`, stride `s`, padding `p` maps
//! `[n, ci, h, w]` to `[n, co, ho, wo]` with `ho = (h + 2p - k)/s + 1`.
//! The transposed convolution is exactly the input-gradient map of that
//! convolution, so its forward/backward passes reuse these primitives with
//! the roles of input and output swapped.

use ndarray::{Array2, Array4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Input size of the convolution whose output size is `output`, i.e. the
    /// output size of the matching transposed convolution with the given
    /// output padding.
    pub fn transposed_out_size(&self, input: usize, output_padding: usize) -> usize {
        (input - 1) * self.stride + self.kernel + output_padding - 2 * self.padding
    }
}

/// Unfold image patches into a `[ci*k*k, n*ho*wo]` matrix.
pub fn im2col(x: &Array4<f64>, geom: ConvGeometry) -> Array2<f64> {
    let (n, ci, h, w) = x.dim();
    let (k, s, p) = (geom.kernel, geom.stride, geom.padding);
    let ho = geom.out_size(h);
    let wo = geom.out_size(w);
    let mut cols = Array2::<f64>::zeros((ci * k * k, n * ho * wo));
    let x_slice = x.as_slice().expect("standard layout");
    let cols_slice = cols.as_slice_mut().unwrap();
    let row_len = n * ho * wo;
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let out_row = &mut cols_slice[row * row_len..(row + 1) * row_len];
                for b in 0..n {
                    let x_base = (b * ci + c) * h * w;
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_row = x_base + iy as usize * w;
                        let o_base = (b * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            out_row[o_base + ox] = x_slice[x_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch columns back into image shape.
pub fn col2im(
    cols: &Array2<f64>,
    geom: ConvGeometry,
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
) -> Array4<f64> {
    let (k, s, p) = (geom.kernel, geom.stride, geom.padding);
    let ho = geom.out_size(h);
    let wo = geom.out_size(w);
    let mut x = Array4::<f64>::zeros((n, ci, h, w));
    let x_slice = x.as_slice_mut().unwrap();
    let cols_slice = cols.as_slice().expect("standard layout");
    let row_len = n * ho * wo;
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let in_row = &cols_slice[row * row_len..(row + 1) * row_len];
                for b in 0..n {
                    let x_base = (b * ci + c) * h * w;
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_row = x_base + iy as usize * w;
                        let o_base = (b * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            x_slice[x_row + ix as usize] += in_row[o_base + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Reshape `[n, co, ho, wo]` into the gemm layout `[co, n*ho*wo]`.
fn to_mat(y: &Array4<f64>) -> Array2<f64> {
    let (n, co, ho, wo) = y.dim();
    let mut mat = Array2::<f64>::zeros((co, n * ho * wo));
    let y_slice = y.as_slice().expect("standard layout");
    let mat_slice = mat.as_slice_mut().unwrap();
    let how = ho * wo;
    for b in 0..n {
        for c in 0..co {
            let src = &y_slice[(b * co + c) * how..(b * co + c + 1) * how];
            let dst = &mut mat_slice[c * n * how + b * how..c * n * how + (b + 1) * how];
            dst.copy_from_slice(src);
        }
    }
    mat
}

/// Inverse of [`to_mat`].
fn from_mat(mat: &Array2<f64>, n: usize, ho: usize, wo: usize) -> Array4<f64> {
    let co = mat.dim().0;
    let mut y = Array4::<f64>::zeros((n, co, ho, wo));
    let mat_slice = mat.as_slice().expect("standard layout");
    let y_slice = y.as_slice_mut().unwrap();
    let how = ho * wo;
    for b in 0..n {
        for c in 0..co {
            let src = &mat_slice[c * n * how + b * how..c * n * how + (b + 1) * how];
            let dst = &mut y_slice[(b * co + c) * how..(b * co + c + 1) * how];
            dst.copy_from_slice(src);
        }
    }
    y
}

/// `y = conv(x, w) + bias`, returning the unfolded columns for reuse in the
/// weight-gradient pass.
pub fn conv_forward(
    x: &Array4<f64>,
    weight: &Array4<f64>,
    bias: Option<&[f64]>,
    geom: ConvGeometry,
) -> (Array4<f64>, Array2<f64>) {
    let (n, _, h, w) = x.dim();
    let (co, ci, k, _) = weight.dim();
    debug_assert_eq!(ci, x.dim().1);
    debug_assert_eq!(k, geom.kernel);
    let ho = geom.out_size(h);
    let wo = geom.out_size(w);
    let cols = im2col(x, geom);
    let w_mat = weight
        .view()
        .into_shape_with_order((co, ci * k * k))
        .unwrap()
        .to_owned();
    let mut out_mat = w_mat.dot(&cols);
    if let Some(b) = bias {
        for (c, mut row) in out_mat.rows_mut().into_iter().enumerate() {
            row += b[c];
        }
    }
    (from_mat(&out_mat, n, ho, wo), cols)
}

/// Gradient of the convolution output with respect to its input.
pub fn conv_backward_input(
    gy: &Array4<f64>,
    weight: &Array4<f64>,
    geom: ConvGeometry,
    in_hw: (usize, usize),
) -> Array4<f64> {
    let (n, _, _, _) = gy.dim();
    let (co, ci, k, _) = weight.dim();
    let gy_mat = to_mat(gy);
    let w_mat = weight
        .view()
        .into_shape_with_order((co, ci * k * k))
        .unwrap()
        .to_owned();
    let g_cols = w_mat.t().dot(&gy_mat);
    col2im(&g_cols, geom, n, ci, in_hw.0, in_hw.1)
}

/// Gradient with respect to the weight, given the cached input columns.
pub fn conv_backward_weight(
    gy: &Array4<f64>,
    cols: &Array2<f64>,
    co: usize,
    ci: usize,
    k: usize,
) -> Array4<f64> {
    let gy_mat = to_mat(gy);
    let gw_mat = gy_mat.dot(&cols.t());
    gw_mat.into_shape_with_order((co, ci, k, k)).unwrap()
}

/// Per-output-channel sum of the output gradient (the bias gradient).
pub fn conv_backward_bias(gy: &Array4<f64>) -> Vec<f64> {
    let (n, co, ho, wo) = gy.dim();
    let mut gb = vec![0.0; co];
    let gy_slice = gy.as_slice().expect("standard layout");
    let how = ho * wo;
    for b in 0..n {
        for (c, g) in gb.iter_mut().enumerate() {
            *g += gy_slice[(b * co + c) * how..(b * co + c + 1) * how]
                .iter()
                .sum::<f64>();
        }
    }
    gb
}
