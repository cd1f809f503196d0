//! Convolution lowering. One geometry description serves three bilinear maps:
//!
//! * `conv_apply`        y = C(x, w)            (cross-correlation, no flip)
//! * `adjoint_input`     x' = C_x^T(gy, w)      (transposed conv / deconv)
//! * `kernel_grad`       w' = C_w^T(x, gy)
//!
//! The three are mutual adjoints, which is exactly what reverse-mode needs:
//! each one's derivatives are again members of the set, so gradient nodes stay
//! inside the op vocabulary and can themselves be differentiated.

use crate::error::TensorError;
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by k-1 at stride 1.
    Valid,
    /// Zero padding with ceil-division output sizes: out = ceil(in / stride).
    /// At stride 1 and odd k this is the usual symmetric (k-1)/2 per side; at
    /// stride 2 the extra zero (if any) goes on the high side.
    Zero,
}

/// User-facing conv/deconv configuration. Spatial rank is taken from the
/// operand ranks (4 => 2D, 5 => 3D).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn unit(padding: Padding) -> Self {
        ConvSpec { stride: 1, padding }
    }
}

/// Fully resolved geometry of one convolution. `spatial_in` is always the
/// conv-side input (the large side); deconv runs the same geometry backwards.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: Padding,
    pub spatial_in: Vec<usize>,
    pub spatial_out: Vec<usize>,
    pub pad_lo: Vec<usize>,
}

impl ConvGeom {
    pub fn for_conv(
        spatial_in: &[usize],
        in_ch: usize,
        out_ch: usize,
        k: usize,
        spec: ConvSpec,
    ) -> Result<Self, TensorError> {
        if spec.stride == 0 {
            return Err(TensorError::BadOperand { op: "conv", detail: "stride must be positive".into() });
        }
        if k == 0 {
            return Err(TensorError::BadOperand { op: "conv", detail: "kernel size must be positive".into() });
        }
        let mut spatial_out = Vec::with_capacity(spatial_in.len());
        let mut pad_lo = Vec::with_capacity(spatial_in.len());
        for &n in spatial_in {
            match spec.padding {
                Padding::Valid => {
                    if n < k {
                        return Err(TensorError::BadOperand {
                            op: "conv",
                            detail: format!("spatial extent {n} smaller than kernel {k} with no padding"),
                        });
                    }
                    spatial_out.push((n - k) / spec.stride + 1);
                    pad_lo.push(0);
                }
                Padding::Zero => {
                    let out = n.div_ceil(spec.stride);
                    let span = (out - 1) * spec.stride + k;
                    let total = span.saturating_sub(n);
                    spatial_out.push(out);
                    pad_lo.push(total / 2);
                }
            }
        }
        Ok(ConvGeom {
            in_ch,
            out_ch,
            k,
            stride: spec.stride,
            padding: spec.padding,
            spatial_in: spatial_in.to_vec(),
            spatial_out,
            pad_lo,
        })
    }

    /// Geometry for a deconv layer whose *input* has the conv-output extents.
    /// Valid padding grows each extent to (n-1)*stride + k; zero padding grows
    /// to n*stride (the unique ceil-division preimage used throughout).
    pub fn for_deconv(
        small: &[usize],
        in_ch: usize,
        out_ch: usize,
        k: usize,
        spec: ConvSpec,
    ) -> Result<Self, TensorError> {
        if spec.stride == 0 {
            return Err(TensorError::BadOperand { op: "deconv", detail: "stride must be positive".into() });
        }
        let big: Vec<usize> = small
            .iter()
            .map(|&n| match spec.padding {
                Padding::Valid => (n - 1) * spec.stride + k,
                Padding::Zero => n * spec.stride,
            })
            .collect();
        let geom = ConvGeom::for_conv(&big, in_ch, out_ch, k, spec)?;
        debug_assert_eq!(geom.spatial_out, small);
        Ok(geom)
    }

    pub fn dims(&self) -> usize {
        self.spatial_in.len()
    }

    pub fn kernel_numel(&self) -> usize {
        self.out_ch * self.in_ch * self.k.pow(self.dims() as u32)
    }

    pub fn in_numel_per_sample(&self) -> usize {
        self.in_ch * self.spatial_in.iter().product::<usize>()
    }

    pub fn out_numel_per_sample(&self) -> usize {
        self.out_ch * self.spatial_out.iter().product::<usize>()
    }

    /// (depth, height, width) with depth 1 for 2D.
    fn d3(v: &[usize]) -> (usize, usize, usize) {
        match v.len() {
            2 => (1, v[0], v[1]),
            3 => (v[0], v[1], v[2]),
            _ => unreachable!("conv geometry is 2D or 3D"),
        }
    }
}

struct Layout {
    din: usize,
    hin: usize,
    win: usize,
    dout: usize,
    hout: usize,
    wout: usize,
    kd: usize,
    pad_d: usize,
    pad_h: usize,
    pad_w: usize,
    /// im2col rows: in_ch * kd * k * k
    rows: usize,
    /// im2col cols: hout * wout (one output z-plane at a time)
    cols: usize,
}

fn layout(geom: &ConvGeom) -> Layout {
    let (din, hin, win) = ConvGeom::d3(&geom.spatial_in);
    let (dout, hout, wout) = ConvGeom::d3(&geom.spatial_out);
    let kd = if geom.dims() == 3 { geom.k } else { 1 };
    let (pad_d, pad_h, pad_w) = match geom.dims() {
        2 => (0, geom.pad_lo[0], geom.pad_lo[1]),
        _ => (geom.pad_lo[0], geom.pad_lo[1], geom.pad_lo[2]),
    };
    Layout {
        din,
        hin,
        win,
        dout,
        hout,
        wout,
        kd,
        pad_d,
        pad_h,
        pad_w,
        rows: geom.in_ch * kd * geom.k * geom.k,
        cols: hout * wout,
    }
}

/// Gather one output z-plane of the input into `col[rows][cols]`.
fn fill_col<E: Element>(x_b: &[E], geom: &ConvGeom, l: &Layout, zo: usize, col: &mut [E]) {
    let s = geom.stride;
    let k = geom.k;
    col.fill(E::zero());
    for ic in 0..geom.in_ch {
        for dz in 0..l.kd {
            let z = (zo * s + dz) as isize - l.pad_d as isize;
            if z < 0 || z >= l.din as isize {
                continue;
            }
            let plane = (ic * l.din + z as usize) * l.hin * l.win;
            for dy in 0..k {
                for dx in 0..k {
                    let row = ((ic * l.kd + dz) * k + dy) * k + dx;
                    let out_row = &mut col[row * l.cols..(row + 1) * l.cols];
                    for yo in 0..l.hout {
                        let y = (yo * s + dy) as isize - l.pad_h as isize;
                        if y < 0 || y >= l.hin as isize {
                            continue;
                        }
                        let src_base = plane + y as usize * l.win;
                        if s == 1 {
                            // Contiguous span of valid x positions.
                            let lo = l.pad_w.saturating_sub(dx);
                            let hi = (l.win + l.pad_w).saturating_sub(dx).min(l.wout);
                            if lo < hi {
                                let src = &x_b[src_base + lo + dx - l.pad_w..src_base + hi + dx - l.pad_w];
                                out_row[yo * l.wout + lo..yo * l.wout + hi].copy_from_slice(src);
                            }
                        } else {
                            for xo in 0..l.wout {
                                let x = (xo * s + dx) as isize - l.pad_w as isize;
                                if x >= 0 && x < l.win as isize {
                                    out_row[yo * l.wout + xo] = x_b[src_base + x as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add `col` back into the input layout: the exact adjoint of
/// `fill_col` with the same geometry.
fn scatter_col<E: Element>(col: &[E], geom: &ConvGeom, l: &Layout, zo: usize, gx_b: &mut [E]) {
    let s = geom.stride;
    let k = geom.k;
    for ic in 0..geom.in_ch {
        for dz in 0..l.kd {
            let z = (zo * s + dz) as isize - l.pad_d as isize;
            if z < 0 || z >= l.din as isize {
                continue;
            }
            let plane = (ic * l.din + z as usize) * l.hin * l.win;
            for dy in 0..k {
                for dx in 0..k {
                    let row = ((ic * l.kd + dz) * k + dy) * k + dx;
                    let in_row = &col[row * l.cols..(row + 1) * l.cols];
                    for yo in 0..l.hout {
                        let y = (yo * s + dy) as isize - l.pad_h as isize;
                        if y < 0 || y >= l.hin as isize {
                            continue;
                        }
                        let dst_base = plane + y as usize * l.win;
                        for xo in 0..l.wout {
                            let x = (xo * s + dx) as isize - l.pad_w as isize;
                            if x >= 0 && x < l.win as isize {
                                let dst = dst_base + x as usize;
                                gx_b[dst] = gx_b[dst] + in_row[yo * l.wout + xo];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// y[b, oc, zo, yo, xo] = sum over (ic, taps) of w * x. No bias.
pub fn conv_apply<E: Element>(x: &[E], batch: usize, w: &[E], geom: &ConvGeom) -> Vec<E> {
    let l = layout(geom);
    let per_in = geom.in_numel_per_sample();
    let per_out = geom.out_numel_per_sample();
    let mut out = vec![E::zero(); batch * per_out];
    let mut col = vec![E::zero(); l.rows * l.cols];
    for b in 0..batch {
        let x_b = &x[b * per_in..(b + 1) * per_in];
        for zo in 0..l.dout {
            fill_col(x_b, geom, &l, zo, &mut col);
            // out block rows are channels: stride between them skips dout planes.
            let start = (b * geom.out_ch * l.dout + zo) * l.cols;
            let c = &mut out[start..];
            E::gemm(
                geom.out_ch,
                l.rows,
                l.cols,
                E::one(),
                w,
                l.rows as isize,
                1,
                &col,
                l.cols as isize,
                1,
                E::zero(),
                c,
                (l.dout * l.cols) as isize,
                1,
            );
        }
    }
    out
}

/// Adjoint with respect to the input: maps an output-shaped `gy` back to an
/// input-shaped buffer using the same kernel. <conv(x), gy> == <x, adjoint(gy)>.
pub fn adjoint_input<E: Element>(gy: &[E], batch: usize, w: &[E], geom: &ConvGeom) -> Vec<E> {
    let l = layout(geom);
    let per_in = geom.in_numel_per_sample();
    let mut gx = vec![E::zero(); batch * per_in];
    let mut col = vec![E::zero(); l.rows * l.cols];
    for b in 0..batch {
        for zo in 0..l.dout {
            let start = (b * geom.out_ch * l.dout + zo) * l.cols;
            let g = &gy[start..];
            // col = W^T (rows x oc) * gy_block (oc x cols)
            E::gemm(
                l.rows,
                geom.out_ch,
                l.cols,
                E::one(),
                w,
                1,
                l.rows as isize,
                g,
                (l.dout * l.cols) as isize,
                1,
                E::zero(),
                &mut col,
                l.cols as isize,
                1,
            );
            scatter_col(&col, geom, &l, zo, &mut gx[b * per_in..(b + 1) * per_in]);
        }
    }
    gx
}

/// Adjoint with respect to the kernel: correlates input and output-shaped
/// buffers into a kernel-shaped one. <conv(x), gy> == <w, kernel_grad(x, gy)>.
pub fn kernel_grad<E: Element>(x: &[E], gy: &[E], batch: usize, geom: &ConvGeom) -> Vec<E> {
    let l = layout(geom);
    let per_in = geom.in_numel_per_sample();
    let mut gw = vec![E::zero(); geom.kernel_numel()];
    let mut col = vec![E::zero(); l.rows * l.cols];
    for b in 0..batch {
        let x_b = &x[b * per_in..(b + 1) * per_in];
        for zo in 0..l.dout {
            fill_col(x_b, geom, &l, zo, &mut col);
            let start = (b * geom.out_ch * l.dout + zo) * l.cols;
            let g = &gy[start..];
            // gw (oc x rows) += gy_block (oc x cols) * col^T (cols x rows)
            E::gemm(
                geom.out_ch,
                l.cols,
                l.rows,
                E::one(),
                g,
                (l.dout * l.cols) as isize,
                1,
                &col,
                1,
                l.cols as isize,
                E::one(),
                &mut gw,
                l.rows as isize,
                1,
            );
        }
    }
    gw
}

/// Row-major matmul with transpose flags; returns (data, rows, cols).
pub fn matmul<E: Element>(
    a: &[E],
    (ar, ac): (usize, usize),
    ta: bool,
    b: &[E],
    (br, bc): (usize, usize),
    tb: bool,
) -> Result<(Vec<E>, usize, usize), TensorError> {
    let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    if ka != kb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: vec![ar, ac],
            right: vec![br, bc],
        });
    }
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    let mut c = vec![E::zero(); m * n];
    E::gemm(m, ka, n, E::one(), a, rsa, csa, b, rsb, csb, E::zero(), &mut c, n as isize, 1);
    Ok((c, m, n))
}
