//! 2-D cross-correlation kernels (stride 1) via im2col + GEMM.

use serde::{Deserialize, Serialize};

use super::{gemm, gemm_nt, gemm_tn};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero-fill of `(k - 1) / 2` on each side; output keeps the input size.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

#[derive(Clone, Copy, Debug)]
pub(super) struct Geometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Geometry {
    pub fn new(input: &[usize], weight: &[usize], padding: Padding) -> Result<Self> {
        let [n, cin, h, w] = *input else {
            return Err(Error::shape("conv2d", format!("input must be [N,C,H,W], got {input:?}")));
        };
        let [cout, wcin, kh, kw] = *weight else {
            return Err(Error::shape("conv2d", format!("weight must be [Cout,Cin,kh,kw], got {weight:?}")));
        };
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv2d kernel must be odd, got {kh}x{kw}"
            )));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => (0, 0),
        };
        if h + 2 * pad_h < kh || w + 2 * pad_w < kw {
            return Err(Error::shape(
                "conv2d",
                format!("{kh}x{kw} kernel larger than {h}x{w} input with {padding:?} padding"),
            ));
        }
        Ok(Geometry {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            pad_h,
            pad_w,
            ho: h + 2 * pad_h - kh + 1,
            wo: w + 2 * pad_w - kw + 1,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.ho, self.wo]
    }
}

fn im2col(x: &[f64], g: &Geometry, col: &mut [f64]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = &mut col[((c * g.kh + u) * g.kw + v) * plane..][..plane];
                for i in 0..g.ho {
                    let r = (i + u) as isize - g.pad_h as isize;
                    let dst = &mut row[i * g.wo..(i + 1) * g.wo];
                    if r < 0 || r >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &xc[r as usize * g.w..(r as usize + 1) * g.w];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let s = (j + v) as isize - g.pad_w as isize;
                        *d = if s < 0 || s >= g.w as isize { 0.0 } else { src[s as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &Geometry, dx: &mut [f64]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = &col[((c * g.kh + u) * g.kw + v) * plane..][..plane];
                for i in 0..g.ho {
                    let r = (i + u) as isize - g.pad_h as isize;
                    if r < 0 || r >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dxc[r as usize * g.w..(r as usize + 1) * g.w];
                    for j in 0..g.wo {
                        let s = (j + v) as isize - g.pad_w as isize;
                        if s >= 0 && s < g.w as isize {
                            dst[s as usize] += row[i * g.wo + j];
                        }
                    }
                }
            }
        }
    }
}

pub(super) fn forward(x: &[f64], weight: &[f64], bias: Option<&[f64]>, g: &Geometry) -> Vec<f64> {
    let plane = g.out_plane();
    let in_size = g.cin * g.h * g.w;
    let out_size = g.cout * plane;
    let mut out = vec![0.0; g.n * out_size];
    let mut col = vec![0.0; g.k() * plane];
    for b in 0..g.n {
        im2col(&x[b * in_size..(b + 1) * in_size], g, &mut col);
        let y = &mut out[b * out_size..(b + 1) * out_size];
        gemm(g.cout, g.k(), plane, weight, &col, y, false);
        if let Some(bias) = bias {
            for (co, chunk) in y.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v += bias[co]);
            }
        }
    }
    out
}

pub(super) struct ConvGrads {
    pub input: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(super) fn backward(x: &[f64], weight: &[f64], dy: &[f64], g: &Geometry, need_input: bool) -> ConvGrads {
    let plane = g.out_plane();
    let in_size = g.cin * g.h * g.w;
    let out_size = g.cout * plane;
    let mut dx = if need_input { vec![0.0; g.n * in_size] } else { Vec::new() };
    let mut dw = vec![0.0; g.cout * g.k()];
    let mut db = vec![0.0; g.cout];
    let mut col = vec![0.0; g.k() * plane];
    let mut dcol = vec![0.0; g.k() * plane];
    for b in 0..g.n {
        let dyb = &dy[b * out_size..(b + 1) * out_size];
        for (co, chunk) in dyb.chunks(plane).enumerate() {
            db[co] += chunk.iter().sum::<f64>();
        }
        im2col(&x[b * in_size..(b + 1) * in_size], g, &mut col);
        // dW += dY · colᵀ
        gemm_nt(g.cout, plane, g.k(), dyb, &col, &mut dw, true);
        if need_input {
            // dcol = Wᵀ · dY
            gemm_tn(g.k(), g.cout, plane, weight, dyb, &mut dcol, false);
            col2im(&dcol, g, &mut dx[b * in_size..(b + 1) * in_size]);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}
