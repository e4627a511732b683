//! Raw compute kernels on flat `f64` slices.
//!
//! Every kernel reports its elementary-operation count (multiply-accumulates
//! for convolutions and matrix products, one op per element for pointwise
//! work) into a thread-local counter so the attention complexity model can be
//! checked against actually executed work.

use std::cell::Cell;

thread_local! {
    static OP_COUNT: Cell<u64> = const { Cell::new(0) };
}

/// Reset the thread-local elementary-op counter to zero.
pub fn reset_op_count() {
    OP_COUNT.with(|c| c.set(0));
}

/// Elementary ops executed on this thread since the last reset.
pub fn op_count() -> u64 {
    OP_COUNT.with(|c| c.get())
}

pub(crate) fn record_ops(n: u64) {
    OP_COUNT.with(|c| c.set(c.get() + n));
}

/// Output spatial extent of a convolution: floor((n + 2p - k)/s) + 1.
pub fn conv_out_extent(n: usize, k: usize, stride: usize, padding: usize) -> usize {
    (n + 2 * padding - k) / stride + 1
}

pub struct ConvShape {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub h_out: usize,
    pub w_out: usize,
}

/// Direct 2-D convolution. `out` must be zero-initialized with
/// `batch * cout * h_out * w_out` elements.
pub fn conv2d_forward(
    input: &[f64],
    kernel: &[f64],
    bias: Option<&[f64]>,
    s: &ConvShape,
    out: &mut [f64],
) {
    let cig = s.cin / s.groups; // input channels per group
    let cog = s.cout / s.groups;
    let in_plane = s.h * s.w;
    let out_plane = s.h_out * s.w_out;

    if let Some(b) = bias {
        for bi in 0..s.batch {
            for co in 0..s.cout {
                let base = (bi * s.cout + co) * out_plane;
                out[base..base + out_plane].fill(b[co]);
            }
        }
    }

    for bi in 0..s.batch {
        for co in 0..s.cout {
            let g = co / cog;
            for cig_i in 0..cig {
                let ci = g * cig + cig_i;
                let in_base = (bi * s.cin + ci) * in_plane;
                let k_base = (co * cig + cig_i) * s.kh * s.kw;
                let out_base = (bi * s.cout + co) * out_plane;
                for kh in 0..s.kh {
                    for kw in 0..s.kw {
                        let kval = kernel[k_base + kh * s.kw + kw];
                        if kval == 0.0 {
                            continue;
                        }
                        for ho in 0..s.h_out {
                            let ih = (ho * s.stride + kh) as isize - s.padding as isize;
                            if ih < 0 || ih >= s.h as isize {
                                continue;
                            }
                            let in_row = in_base + ih as usize * s.w;
                            let out_row = out_base + ho * s.w_out;
                            for wo in 0..s.w_out {
                                let iw = (wo * s.stride + kw) as isize - s.padding as isize;
                                if iw < 0 || iw >= s.w as isize {
                                    continue;
                                }
                                out[out_row + wo] += kval * input[in_row + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    let macs = (s.batch * s.cout * out_plane) as u64
        * (cig * s.kh * s.kw + usize::from(bias.is_some())) as u64;
    record_ops(macs);
}

/// Gradients of conv2d w.r.t. input, kernel, and bias.
pub fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    d_out: &[f64],
    s: &ConvShape,
    d_input: Option<&mut [f64]>,
    d_kernel: Option<&mut [f64]>,
    d_bias: Option<&mut [f64]>,
) {
    let cig = s.cin / s.groups;
    let cog = s.cout / s.groups;
    let in_plane = s.h * s.w;
    let out_plane = s.h_out * s.w_out;

    if let Some(db) = d_bias {
        for bi in 0..s.batch {
            for co in 0..s.cout {
                let base = (bi * s.cout + co) * out_plane;
                db[co] += d_out[base..base + out_plane].iter().sum::<f64>();
            }
        }
    }

    let mut d_input = d_input;
    let mut d_kernel = d_kernel;
    for bi in 0..s.batch {
        for co in 0..s.cout {
            let g = co / cog;
            let out_base = (bi * s.cout + co) * out_plane;
            for cig_i in 0..cig {
                let ci = g * cig + cig_i;
                let in_base = (bi * s.cin + ci) * in_plane;
                let k_base = (co * cig + cig_i) * s.kh * s.kw;
                for kh in 0..s.kh {
                    for kw in 0..s.kw {
                        let kval = kernel[k_base + kh * s.kw + kw];
                        let mut k_acc = 0.0;
                        for ho in 0..s.h_out {
                            let ih = (ho * s.stride + kh) as isize - s.padding as isize;
                            if ih < 0 || ih >= s.h as isize {
                                continue;
                            }
                            let in_row = in_base + ih as usize * s.w;
                            let out_row = out_base + ho * s.w_out;
                            for wo in 0..s.w_out {
                                let iw = (wo * s.stride + kw) as isize - s.padding as isize;
                                if iw < 0 || iw >= s.w as isize {
                                    continue;
                                }
                                let go = d_out[out_row + wo];
                                k_acc += go * input[in_row + iw as usize];
                                if let Some(di) = d_input.as_deref_mut() {
                                    di[in_row + iw as usize] += go * kval;
                                }
                            }
                        }
                        if let Some(dk) = d_kernel.as_deref_mut() {
                            dk[k_base + kh * s.kw + kw] += k_acc;
                        }
                    }
                }
            }
        }
    }
}

/// out[b,o] = sum_i input[b,i] * weight[o,i] + bias[o]
pub fn linear_forward(
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    batch: usize,
    din: usize,
    dout: usize,
    out: &mut [f64],
) {
    for b in 0..batch {
        let x = &input[b * din..(b + 1) * din];
        for o in 0..dout {
            let w = &weight[o * din..(o + 1) * din];
            let mut acc = bias.map_or(0.0, |bv| bv[o]);
            for i in 0..din {
                acc += x[i] * w[i];
            }
            out[b * dout + o] = acc;
        }
    }
    record_ops((batch * dout) as u64 * (din + usize::from(bias.is_some())) as u64);
}

pub fn linear_backward(
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    batch: usize,
    din: usize,
    dout: usize,
    d_input: Option<&mut [f64]>,
    d_weight: Option<&mut [f64]>,
    d_bias: Option<&mut [f64]>,
) {
    if let Some(di) = d_input {
        for b in 0..batch {
            for o in 0..dout {
                let go = d_out[b * dout + o];
                if go == 0.0 {
                    continue;
                }
                let w = &weight[o * din..(o + 1) * din];
                let row = &mut di[b * din..(b + 1) * din];
                for i in 0..din {
                    row[i] += go * w[i];
                }
            }
        }
    }
    if let Some(dw) = d_weight {
        for b in 0..batch {
            let x = &input[b * din..(b + 1) * din];
            for o in 0..dout {
                let go = d_out[b * dout + o];
                if go == 0.0 {
                    continue;
                }
                let row = &mut dw[o * din..(o + 1) * din];
                for i in 0..din {
                    row[i] += go * x[i];
                }
            }
        }
    }
    if let Some(db) = d_bias {
        for b in 0..batch {
            for o in 0..dout {
                db[o] += d_out[b * dout + o];
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
