//! Dilated, optionally strided 2-D convolution over `[h, w, c]` tensors.
//!
//! The input is padded first (edge-inclusive reflection or zeros), then a
//! "valid" correlation is taken over the padded buffer. Every output value is
//! accumulated in a fixed order (kernel row, kernel column, input channel), so
//! results are bit-reproducible. The inner loops work on blocks of eight
//! output channels so they vectorize.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LANES: usize = 8;
const PIXEL_BLOCK: usize = 6;
const CHANNEL_BLOCK: usize = 8;
const INPUT_PIXEL_BLOCK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PaddingMode {
    /// Edge-inclusive mirror reflection: `[1, 2, 3]` with margin 1 becomes
    /// `[1, 1, 2, 3, 3]`.
    Symmetric,
    Zero,
}

impl std::str::FromStr for PaddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(PaddingMode::Symmetric),
            "zero" => Ok(PaddingMode::Zero),
            other => Err(Error::InvalidConfig(format!("unknown padding mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for PaddingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PaddingMode::Symmetric => "symmetric",
            PaddingMode::Zero => "zero",
        })
    }
}

/// Hyper-parameters of a convolution that are not learned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub dilation: usize,
    pub stride: usize,
    pub padding: PaddingMode,
}

impl ConvSpec {
    pub fn new(dilation: usize, stride: usize, padding: PaddingMode) -> Self {
        ConvSpec { dilation, stride, padding }
    }
}

/// A convolution layer: weights `[kh, kw, in, out]`, bias `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub spec: ConvSpec,
}

impl ConvLayer {
    pub fn new(weights: Tensor, bias: Tensor, spec: ConvSpec) -> Result<Self> {
        let ws = weights.shape();
        if ws.len() != 4 {
            return Err(Error::shape("conv layer", format!("weights must be rank 4, got {ws:?}")));
        }
        if ws[0] % 2 == 0 || ws[1] % 2 == 0 {
            return Err(Error::shape("conv layer", format!("kernel {}x{} must be odd", ws[0], ws[1])));
        }
        if bias.shape() != [ws[3]] {
            return Err(Error::shape(
                "conv layer",
                format!("bias {:?} does not match {} output channels", bias.shape(), ws[3]),
            ));
        }
        if spec.dilation == 0 || spec.stride == 0 {
            return Err(Error::InvalidParameter("dilation and stride must be positive".into()));
        }
        Ok(ConvLayer { weights, bias, spec })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[3]
    }
}

/// Shapes and offsets of one convolution application.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub dilation: usize,
    pub stride: usize,
    pub margin_h: usize,
    pub margin_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weights: &[usize], spec: ConvSpec) -> Result<Self> {
        if input.len() != 3 {
            return Err(Error::shape("conv2d", format!("input must be [h, w, c], got {input:?}")));
        }
        if weights.len() != 4 {
            return Err(Error::shape("conv2d", format!("weights must be rank 4, got {weights:?}")));
        }
        let (height, width, in_channels) = (input[0], input[1], input[2]);
        let (kernel_h, kernel_w) = (weights[0], weights[1]);
        if weights[2] != in_channels {
            return Err(Error::ChannelMismatch { expected: weights[2], got: in_channels });
        }
        if kernel_h % 2 == 0 || kernel_w % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel {kernel_h}x{kernel_w} must be odd")));
        }
        if spec.dilation == 0 || spec.stride == 0 {
            return Err(Error::InvalidParameter("dilation and stride must be positive".into()));
        }
        let margin_h = spec.dilation * (kernel_h - 1) / 2;
        let margin_w = spec.dilation * (kernel_w - 1) / 2;
        if spec.padding == PaddingMode::Symmetric {
            check_margin(margin_h, height)?;
            check_margin(margin_w, width)?;
        }
        Ok(ConvGeometry {
            height,
            width,
            in_channels,
            out_channels: weights[3],
            kernel_h,
            kernel_w,
            dilation: spec.dilation,
            stride: spec.stride,
            margin_h,
            margin_w,
            out_h: (height - 1) / spec.stride + 1,
            out_w: (width - 1) / spec.stride + 1,
        })
    }

    pub fn padded_h(&self) -> usize {
        self.height + 2 * self.margin_h
    }

    pub fn padded_w(&self) -> usize {
        self.width + 2 * self.margin_w
    }

    fn taps(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    /// Offset (in pixels) into the padded buffer of output pixel `(i, j)`
    /// under tap `(ky, kx)`.
    #[inline]
    fn padded_pixel(&self, i: usize, j: usize, ky: usize, kx: usize) -> usize {
        (i * self.stride + ky * self.dilation) * self.padded_w() + j * self.stride + kx * self.dilation
    }
}

fn check_margin(margin: usize, extent: usize) -> Result<()> {
    if margin > extent {
        Err(Error::MarginTooLarge { margin, extent })
    } else {
        Ok(())
    }
}

/// Source index of padded coordinate `p` (offset by `margin`) under
/// edge-inclusive reflection. Requires `margin <= extent`.
#[inline]
fn reflect(p: usize, margin: usize, extent: usize) -> usize {
    if p < margin {
        margin - 1 - p
    } else if p >= margin + extent {
        2 * extent + margin - 1 - p
    } else {
        p - margin
    }
}

/// Mirror-pads the two spatial axes of an `[h, w, c]` tensor.
pub fn symmetric_pad(x: &Tensor, margin_h: usize, margin_w: usize) -> Result<Tensor> {
    pad(x, margin_h, margin_w, PaddingMode::Symmetric)
}

pub fn pad(x: &Tensor, margin_h: usize, margin_w: usize, mode: PaddingMode) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::shape("pad", format!("expected [h, w, c], got {s:?}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    if mode == PaddingMode::Symmetric {
        check_margin(margin_h, h)?;
        check_margin(margin_w, w)?;
    }
    let (hp, wp) = (h + 2 * margin_h, w + 2 * margin_w);
    let src = x.data();
    let mut out = vec![0.0; hp * wp * c];
    for py in 0..hp {
        let sy = match mode {
            PaddingMode::Symmetric => reflect(py, margin_h, h),
            PaddingMode::Zero if py < margin_h || py >= margin_h + h => continue,
            PaddingMode::Zero => py - margin_h,
        };
        for px in 0..wp {
            let sx = match mode {
                PaddingMode::Symmetric => reflect(px, margin_w, w),
                PaddingMode::Zero if px < margin_w || px >= margin_w + w => continue,
                PaddingMode::Zero => px - margin_w,
            };
            let dst = (py * wp + px) * c;
            let from = (sy * w + sx) * c;
            out[dst..dst + c].copy_from_slice(&src[from..from + c]);
        }
    }
    Ok(Tensor::from_parts(vec![hp, wp, c], out))
}

/// Adjoint of [`pad`]: folds a gradient over the padded buffer back onto
/// the unpadded `[h, w, c]` input.
pub fn pad_adjoint(
    grad: &Tensor,
    height: usize,
    width: usize,
    margin_h: usize,
    margin_w: usize,
    mode: PaddingMode,
) -> Tensor {
    let c = grad.shape()[2];
    let wp = width + 2 * margin_w;
    let g = grad.data();
    let mut out = vec![0.0; height * width * c];
    for py in 0..height + 2 * margin_h {
        let sy = match mode {
            PaddingMode::Symmetric => reflect(py, margin_h, height),
            PaddingMode::Zero if py < margin_h || py >= margin_h + height => continue,
            PaddingMode::Zero => py - margin_h,
        };
        for px in 0..wp {
            let sx = match mode {
                PaddingMode::Symmetric => reflect(px, margin_w, width),
                PaddingMode::Zero if px < margin_w || px >= margin_w + width => continue,
                PaddingMode::Zero => px - margin_w,
            };
            let from = (py * wp + px) * c;
            let dst = (sy * width + sx) * c;
            for (o, v) in out[dst..dst + c].iter_mut().zip(&g[from..from + c]) {
                *o += v;
            }
        }
    }
    Tensor::from_parts(vec![height, width, c], out)
}

/// Applies a convolution layer; the output has the input's spatial size
/// (divided by the stride, rounded up).
pub fn conv2d(x: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let geom = ConvGeometry::new(x.shape(), layer.weights.shape(), layer.spec)?;
    let padded = pad(x, geom.margin_h, geom.margin_w, layer.spec.padding)?;
    Ok(forward(&geom, &padded, &layer.weights, &layer.bias))
}

#[inline]
fn lanes(s: &[f64]) -> &[f64; LANES] {
    s[..LANES].try_into().unwrap()
}

/// Weights `[kh, kw, cin, cout]` repacked as `[cout / 8][tap][cin][8]`,
/// zero-filled past `cout`.
fn pack_out_blocks(geom: &ConvGeometry, weights: &[f64]) -> Vec<f64> {
    let (cin, cout, taps) = (geom.in_channels, geom.out_channels, geom.taps());
    let blocks = cout.div_ceil(LANES);
    let mut packed = vec![0.0; blocks * taps * cin * LANES];
    for t in 0..taps {
        for c in 0..cin {
            for o in 0..cout {
                let (b, l) = (o / LANES, o % LANES);
                packed[((b * taps + t) * cin + c) * LANES + l] = weights[(t * cin + c) * cout + o];
            }
        }
    }
    packed
}

pub(crate) fn forward(geom: &ConvGeometry, padded: &Tensor, weights: &Tensor, bias: &Tensor) -> Tensor {
    let cout = geom.out_channels;
    let blocks = cout.div_ceil(LANES);
    let cout_padded = blocks * LANES;
    let packed = pack_out_blocks(geom, weights.data());
    let npix = geom.out_h * geom.out_w;

    let mut init = vec![0.0; cout_padded];
    init[..cout].copy_from_slice(bias.data());
    let mut out = Vec::with_capacity(npix * cout_padded);
    for _ in 0..npix {
        out.extend_from_slice(&init);
    }
    for i in 0..geom.out_h {
        let mut j = 0;
        while j + PIXEL_BLOCK <= geom.out_w {
            forward_block::<PIXEL_BLOCK>(geom, padded.data(), &packed, i, j, cout_padded, &mut out);
            j += PIXEL_BLOCK;
        }
        while j < geom.out_w {
            forward_block::<1>(geom, padded.data(), &packed, i, j, cout_padded, &mut out);
            j += 1;
        }
    }
    if cout_padded != cout {
        out = out.chunks_exact(cout_padded).flat_map(|px| px[..cout].iter().copied()).collect();
    }
    Tensor::from_parts(vec![geom.out_h, geom.out_w, cout], out)
}

/// Accumulates all taps of output pixels `(i, j..j + PX)` into `out`, which
/// is laid out `[pixel][cout_padded]` and starts at the bias.
#[inline(always)]
fn forward_block<const PX: usize>(
    geom: &ConvGeometry,
    padded: &[f64],
    packed: &[f64],
    i: usize,
    j: usize,
    cout_padded: usize,
    out: &mut [f64],
) {
    let (cin, taps) = (geom.in_channels, geom.taps());
    let step = geom.stride * cin;
    let first = (i * geom.out_w + j) * cout_padded;
    for block in 0..cout_padded / LANES {
        for ky in 0..geom.kernel_h {
            for kx in 0..geom.kernel_w {
                let t = ky * geom.kernel_w + kx;
                let base = geom.padded_pixel(i, j, ky, kx) * cin;
                let xs = &padded[base..base + (PX - 1) * step + cin];
                let ws = &packed[(block * taps + t) * cin * LANES..][..cin * LANES];
                let mut acc = [[0.0f64; LANES]; PX];
                for (p, a) in acc.iter_mut().enumerate() {
                    a.copy_from_slice(lanes(&out[first + p * cout_padded + block * LANES..]));
                }
                for c in 0..cin {
                    let w = lanes(&ws[c * LANES..]);
                    for (p, a) in acc.iter_mut().enumerate() {
                        let x = xs[p * step + c];
                        for l in 0..LANES {
                            a[l] = x.mul_add(w[l], a[l]);
                        }
                    }
                }
                for (p, a) in acc.iter().enumerate() {
                    let dst = first + p * cout_padded + block * LANES;
                    out[dst..dst + LANES].copy_from_slice(a);
                }
            }
        }
    }
}

/// Gradients of the weights `[kh, kw, cin, cout]` and bias `[cout]` given
/// the padded input and the gradient of the output.
pub(crate) fn backward_params(geom: &ConvGeometry, padded: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor) {
    let (cin, cout, taps) = (geom.in_channels, geom.out_channels, geom.taps());
    let npix = geom.out_h * geom.out_w;
    let g = grad_out.data();
    let blocks = cout.div_ceil(LANES);

    // [block][pixel][8]
    let mut gpacked = vec![0.0; blocks * npix * LANES];
    for p in 0..npix {
        for o in 0..cout {
            gpacked[((o / LANES) * npix + p) * LANES + o % LANES] = g[p * cout + o];
        }
    }

    let mut gw = vec![0.0; taps * cin * cout];
    for block in 0..blocks {
        let o0 = block * LANES;
        let valid = LANES.min(cout - o0);
        let gb = &gpacked[block * npix * LANES..][..npix * LANES];
        for ky in 0..geom.kernel_h {
            for kx in 0..geom.kernel_w {
                let t = ky * geom.kernel_w + kx;
                let mut c = 0;
                while c + CHANNEL_BLOCK <= cin {
                    let acc = weight_block::<CHANNEL_BLOCK>(geom, padded.data(), gb, ky, kx, c);
                    store_weight_block(&mut gw, &acc, t, c, cin, cout, o0, valid);
                    c += CHANNEL_BLOCK;
                }
                while c < cin {
                    let acc = weight_block::<1>(geom, padded.data(), gb, ky, kx, c);
                    store_weight_block(&mut gw, &acc, t, c, cin, cout, o0, valid);
                    c += 1;
                }
            }
        }
    }

    let mut gbias = vec![0.0; cout];
    for p in 0..npix {
        for (b, v) in gbias.iter_mut().zip(&g[p * cout..(p + 1) * cout]) {
            *b += v;
        }
    }
    (
        Tensor::from_parts(vec![geom.kernel_h, geom.kernel_w, cin, cout], gw),
        Tensor::from_parts(vec![cout], gbias),
    )
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn store_weight_block<const CB: usize>(
    gw: &mut [f64],
    acc: &[[f64; LANES]; CB],
    t: usize,
    c: usize,
    cin: usize,
    cout: usize,
    o0: usize,
    valid: usize,
) {
    for (cc, a) in acc.iter().enumerate() {
        let dst = (t * cin + c + cc) * cout + o0;
        gw[dst..dst + valid].copy_from_slice(&a[..valid]);
    }
}

#[inline(always)]
fn weight_block<const CB: usize>(
    geom: &ConvGeometry,
    padded: &[f64],
    gblock: &[f64],
    ky: usize,
    kx: usize,
    c: usize,
) -> [[f64; LANES]; CB] {
    let cin = geom.in_channels;
    let mut acc = [[0.0f64; LANES]; CB];
    for i in 0..geom.out_h {
        for j in 0..geom.out_w {
            let g = lanes(&gblock[(i * geom.out_w + j) * LANES..]);
            let base = geom.padded_pixel(i, j, ky, kx) * cin + c;
            let xs = &padded[base..base + CB];
            for (a, &x) in acc.iter_mut().zip(xs) {
                for l in 0..LANES {
                    a[l] = x.mul_add(g[l], a[l]);
                }
            }
        }
    }
    acc
}

/// Gradient with respect to the padded input `[hp, wp, cin]`.
pub(crate) fn backward_input(geom: &ConvGeometry, weights: &Tensor, grad_out: &Tensor) -> Tensor {
    let (cin, cout, taps) = (geom.in_channels, geom.out_channels, geom.taps());
    let blocks = cin.div_ceil(LANES);
    let cin_padded = blocks * LANES;
    let w = weights.data();

    // [block][tap][cout][8] over input channels
    let mut packed = vec![0.0; blocks * taps * cout * LANES];
    for t in 0..taps {
        for c in 0..cin {
            for o in 0..cout {
                packed[(((c / LANES) * taps + t) * cout + o) * LANES + c % LANES] = w[(t * cin + c) * cout + o];
            }
        }
    }

    let (hp, wp) = (geom.padded_h(), geom.padded_w());
    let mut gp = vec![0.0; hp * wp * cin_padded];
    let g = grad_out.data();
    for i in 0..geom.out_h {
        let mut j = 0;
        while j + INPUT_PIXEL_BLOCK <= geom.out_w {
            input_block::<INPUT_PIXEL_BLOCK>(geom, &packed, g, i, j, cin_padded, &mut gp);
            j += INPUT_PIXEL_BLOCK;
        }
        while j < geom.out_w {
            input_block::<1>(geom, &packed, g, i, j, cin_padded, &mut gp);
            j += 1;
        }
    }

    if cin_padded == cin {
        return Tensor::from_parts(vec![hp, wp, cin], gp);
    }
    let mut out = Vec::with_capacity(hp * wp * cin);
    for px in gp.chunks_exact(cin_padded) {
        out.extend_from_slice(&px[..cin]);
    }
    Tensor::from_parts(vec![hp, wp, cin], out)
}

#[inline(always)]
fn input_block<const PX: usize>(
    geom: &ConvGeometry,
    packed: &[f64],
    grad_out: &[f64],
    i: usize,
    j: usize,
    cin_padded: usize,
    gp: &mut [f64],
) {
    let (cout, taps) = (geom.out_channels, geom.taps());
    let gs = &grad_out[(i * geom.out_w + j) * cout..][..PX * cout];
    for ky in 0..geom.kernel_h {
        for kx in 0..geom.kernel_w {
            let t = ky * geom.kernel_w + kx;
            let base = geom.padded_pixel(i, j, ky, kx) * cin_padded;
            let step = geom.stride * cin_padded;
            for block in 0..cin_padded / LANES {
                let ws = &packed[(block * taps + t) * cout * LANES..][..cout * LANES];
                let mut acc = [[0.0f64; LANES]; PX];
                for (p, a) in acc.iter_mut().enumerate() {
                    a.copy_from_slice(lanes(&gp[base + p * step + block * LANES..]));
                }
                for o in 0..cout {
                    let w = lanes(&ws[o * LANES..]);
                    for (p, a) in acc.iter_mut().enumerate() {
                        let gv = gs[p * cout + o];
                        for l in 0..LANES {
                            a[l] = gv.mul_add(w[l], a[l]);
                        }
                    }
                }
                for (p, a) in acc.iter().enumerate() {
                    let dst = base + p * step + block * LANES;
                    gp[dst..dst + LANES].copy_from_slice(a);
                }
            }
        }
    }
}
