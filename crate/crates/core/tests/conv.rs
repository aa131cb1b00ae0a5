use penh::autodiff::{grad_check, Bindings, Expr};
use penh::nn::{conv2d, pad, ConvLayer, ConvSpec, PaddingMode};
use penh::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    (if i < 0 { -i - 1 } else if i >= n { 2 * n - i - 1 } else { i }) as usize
}

fn oracle(x: &Tensor, w: &Tensor, b: &Tensor, spec: ConvSpec) -> Tensor {
    let [h, wd, cin] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let [kh, kw, _, cout] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let mh = (spec.dilation * (kh - 1) / 2) as isize;
    let mw = (spec.dilation * (kw - 1) / 2) as isize;
    let (oh, ow) = (h.div_ceil(spec.stride), wd.div_ceil(spec.stride));
    let mut out = Vec::with_capacity(oh * ow * cout);
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut acc = b.data()[co];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * spec.stride + ky * spec.dilation) as isize - mh;
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - mw;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd;
                        for ci in 0..cin {
                            let v = match spec.padding {
                                PaddingMode::Symmetric => x.at3(mirror(iy, h), mirror(ix, wd), ci),
                                PaddingMode::Zero if inside => x.at3(iy as usize, ix as usize, ci),
                                PaddingMode::Zero => 0.0,
                            };
                            acc += v * w.data()[((ky * kw + kx) * cin + ci) * cout + co];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(&[oh, ow, cout], out).unwrap()
}

#[derive(Debug, Clone)]
struct Case {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    spec: ConvSpec,
    seed: u64,
}

fn cases() -> impl Strategy<Value = Case> {
    (1..14usize, 1..14usize, 1..6usize, 1..12usize, 0..3usize, 0..3usize, 1..5usize, 1..3usize, any::<bool>(), any::<u64>())
        .prop_filter_map("margin exceeds extent", |(h, w, cin, cout, kh, kw, dilation, stride, zero, seed)| {
            let (kh, kw) = (2 * kh + 1, 2 * kw + 1);
            let padding = if zero { PaddingMode::Zero } else { PaddingMode::Symmetric };
            let ok = padding == PaddingMode::Zero || (dilation * (kh - 1) / 2 <= h && dilation * (kw - 1) / 2 <= w);
            ok.then_some(Case { h, w, cin, cout, kh, kw, spec: ConvSpec::new(dilation, stride, padding), seed })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_naive_oracle(c in cases()) {
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let x = random(&[c.h, c.w, c.cin], &mut rng);
        let w = random(&[c.kh, c.kw, c.cin, c.cout], &mut rng);
        let b = random(&[c.cout], &mut rng);
        let expected = oracle(&x, &w, &b, c.spec);
        let got = conv2d(&x, &ConvLayer::new(w, b, c.spec).unwrap()).unwrap();
        prop_assert_eq!(got.shape(), expected.shape());
        prop_assert!(got.max_abs_diff(&expected) <= 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences(c in cases()) {
        prop_assume!(c.h * c.w * c.cin * c.cout <= 400);
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let out = [c.h.div_ceil(c.spec.stride), c.w.div_ceil(c.spec.stride), c.cout];
        let (x, w, b) = (Expr::parameter("x"), Expr::parameter("w"), Expr::parameter("b"));
        let root = x.conv2d(&w, &b, c.spec).mul(&Expr::input("r")).sum();
        let bind = Bindings::new()
            .with("x", random(&[c.h, c.w, c.cin], &mut rng))
            .with("w", random(&[c.kh, c.kw, c.cin, c.cout], &mut rng))
            .with("b", random(&[c.cout], &mut rng))
            .with("r", random(&out, &mut rng));
        prop_assert!(grad_check(&root, &bind, 1e-4).unwrap() < 1e-6);
    }

    #[test]
    fn padding_embeds_input_and_backpropagates(h in 1..8usize, w in 1..8usize, mh in 0..4usize, mw in 0..4usize, zero in any::<bool>(), seed in any::<u64>()) {
        let mode = if zero { PaddingMode::Zero } else { PaddingMode::Symmetric };
        prop_assume!(zero || (mh <= h && mw <= w));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[h, w, 2], &mut rng);
        let p = pad(&x, mh, mw, mode).unwrap();
        prop_assert_eq!(p.shape(), &[h + 2 * mh, w + 2 * mw, 2]);
        for y in 0..h {
            for xx in 0..w {
                prop_assert_eq!(p.at3(y + mh, xx + mw, 1), x.at3(y, xx, 1));
            }
        }
        let e = Expr::parameter("x");
        let root = e.pad(mh, mw, mode).mul(&Expr::input("r")).sum();
        let bind = Bindings::new().with("x", x).with("r", random(p.shape(), &mut rng));
        prop_assert!(grad_check(&root, &bind, 0.5).unwrap() < 1e-8);
    }
}

#[test]
fn over_a_hundred_dilated_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut done = 0;
    while done < 120 {
        let dilation = rng.random_range(2..=5);
        let (h, w) = (rng.random_range(4..=12), rng.random_range(4..=12));
        let spec = ConvSpec::new(dilation, rng.random_range(1..=2), PaddingMode::Symmetric);
        if dilation > h.min(w) {
            continue;
        }
        let x = random(&[h, w, 3], &mut rng);
        let k = random(&[3, 3, 3, 5], &mut rng);
        let b = random(&[5], &mut rng);
        let expected = oracle(&x, &k, &b, spec);
        let got = conv2d(&x, &ConvLayer::new(k, b, spec).unwrap()).unwrap();
        assert!(got.max_abs_diff(&expected) <= 1e-12);
        done += 1;
    }
}

#[test]
fn symmetric_margin_larger_than_image_is_an_error() {
    let x = Tensor::zeros(&[3, 8, 1]);
    let layer = ConvLayer::new(Tensor::zeros(&[3, 3, 1, 1]), Tensor::zeros(&[1]), ConvSpec::new(4, 1, PaddingMode::Symmetric)).unwrap();
    assert!(matches!(conv2d(&x, &layer), Err(Error::MarginTooLarge { margin: 4, extent: 3 })));
    let zero = ConvLayer { spec: ConvSpec::new(4, 1, PaddingMode::Zero), ..layer };
    assert_eq!(conv2d(&x, &zero).unwrap().shape(), &[3, 8, 1]);
}
