use rand::Rng;

use super::{LayerSpec, Shape3};

/// Per-layer state recorded in train mode.
#[derive(Debug, Clone)]
pub(super) enum Aux {
    None,
    Relu(Vec<bool>),
    Pool(Vec<usize>),
    Dropout(Vec<f64>),
}

#[allow(clippy::too_many_arguments)]
pub(super) fn forward(
    layer: &LayerSpec,
    x: &[f64],
    (ci, h, w): Shape3,
    (co, oh, ow): Shape3,
    weights: &[f64],
    bias: &[f64],
    train: bool,
    rng: &mut impl Rng,
) -> (Vec<f64>, Aux) {
    match *layer {
        LayerSpec::Conv {
            kernel: (kh, kw),
            stride,
            ..
        } => {
            let mut y = vec![0.0; co * oh * ow];
            for o in 0..co {
                let out = &mut y[o * oh * ow..(o + 1) * oh * ow];
                out.fill(bias[o]);
                for i in 0..ci {
                    let plane = &x[i * h * w..(i + 1) * h * w];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = weights[((o * ci + i) * kh + ky) * kw + kx];
                            for yy in 0..oh {
                                let row = &plane[(yy * stride + ky) * w..];
                                let dst = &mut out[yy * ow..(yy + 1) * ow];
                                if stride == 1 {
                                    for (d, s) in dst.iter_mut().zip(&row[kx..kx + ow]) {
                                        *d += wv * s;
                                    }
                                } else {
                                    for (xx, d) in dst.iter_mut().enumerate() {
                                        *d += wv * row[xx * stride + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (y, Aux::None)
        }
        LayerSpec::MaxPool { window: (ph, pw) } => {
            let mut y = vec![0.0; co * oh * ow];
            let mut idx = vec![0usize; co * oh * ow];
            for c in 0..co {
                for yy in 0..oh {
                    for xx in 0..ow {
                        let mut best = usize::MAX;
                        let mut best_v = f64::NEG_INFINITY;
                        for dy in 0..ph {
                            for dx in 0..pw {
                                let k = (c * h + yy * ph + dy) * w + xx * pw + dx;
                                if best == usize::MAX || x[k] > best_v {
                                    best = k;
                                    best_v = x[k];
                                }
                            }
                        }
                        let o = (c * oh + yy) * ow + xx;
                        y[o] = best_v;
                        idx[o] = best;
                    }
                }
            }
            (y, if train { Aux::Pool(idx) } else { Aux::None })
        }
        LayerSpec::Relu => {
            let y: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
            let aux = if train {
                Aux::Relu(x.iter().map(|v| *v > 0.0).collect())
            } else {
                Aux::None
            };
            (y, aux)
        }
        LayerSpec::Dropout { rate } => {
            let keep = 1.0 - rate;
            if !train {
                return (x.iter().map(|v| v * keep).collect(), Aux::None);
            }
            let mask: Vec<f64> = if rate == 0.0 {
                vec![1.0; x.len()]
            } else {
                (0..x.len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 } else { 0.0 })
                    .collect()
            };
            (x.iter().zip(&mask).map(|(v, m)| v * m).collect(), Aux::Dropout(mask))
        }
        LayerSpec::Dense { units } => {
            let n_in = x.len();
            let y = (0..units)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    bias[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            (y, Aux::None)
        }
    }
}

/// Backward through a parameterized layer; accumulates into `gw`/`gb` and
/// returns the input gradient (empty when not needed).
#[allow(clippy::too_many_arguments)]
pub(super) fn backward_param(
    layer: &LayerSpec,
    x: &[f64],
    g: &[f64],
    (ci, h, w): Shape3,
    (co, oh, ow): Shape3,
    weights: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    match *layer {
        LayerSpec::Conv {
            kernel: (kh, kw),
            stride,
            ..
        } => {
            let mut gx = if need_input_grad { vec![0.0; ci * h * w] } else { Vec::new() };
            for o in 0..co {
                let go = &g[o * oh * ow..(o + 1) * oh * ow];
                gb[o] += go.iter().sum::<f64>();
                for i in 0..ci {
                    let plane = &x[i * h * w..(i + 1) * h * w];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wi = ((o * ci + i) * kh + ky) * kw + kx;
                            let wv = weights[wi];
                            let mut acc = 0.0;
                            for yy in 0..oh {
                                let base = (yy * stride + ky) * w;
                                let grow = &go[yy * ow..(yy + 1) * ow];
                                if stride == 1 {
                                    let row = &plane[base + kx..base + kx + ow];
                                    acc += grow.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                                    if need_input_grad {
                                        let dst = &mut gx[i * h * w + base + kx..i * h * w + base + kx + ow];
                                        for (d, gv) in dst.iter_mut().zip(grow) {
                                            *d += wv * gv;
                                        }
                                    }
                                } else {
                                    for (xx, gv) in grow.iter().enumerate() {
                                        let k = base + xx * stride + kx;
                                        acc += gv * plane[k];
                                        if need_input_grad {
                                            gx[i * h * w + k] += wv * gv;
                                        }
                                    }
                                }
                            }
                            gw[wi] += acc;
                        }
                    }
                }
            }
            gx
        }
        LayerSpec::Dense { units } => {
            let n_in = x.len();
            let mut gx = if need_input_grad { vec![0.0; n_in] } else { Vec::new() };
            for o in 0..units {
                let go = g[o];
                gb[o] += go;
                if go == 0.0 {
                    continue;
                }
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for (d, xv) in grow.iter_mut().zip(x) {
                    *d += go * xv;
                }
                if need_input_grad {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    for (d, wv) in gx.iter_mut().zip(row) {
                        *d += go * wv;
                    }
                }
            }
            gx
        }
        _ => unreachable!("layer has no parameters"),
    }
}

pub(super) fn backward_plain(layer: &LayerSpec, g: &[f64], (c, h, w): Shape3, aux: &Aux) -> Vec<f64> {
    match (layer, aux) {
        (LayerSpec::Relu, Aux::Relu(mask)) => g.iter().zip(mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect(),
        (LayerSpec::Dropout { .. }, Aux::Dropout(mask)) => g.iter().zip(mask).map(|(v, m)| v * m).collect(),
        (LayerSpec::MaxPool { .. }, Aux::Pool(idx)) => {
            let mut gx = vec![0.0; c * h * w];
            for (gv, &k) in g.iter().zip(idx) {
                gx[k] += gv;
            }
            gx
        }
        _ => unreachable!("cache does not match layer"),
    }
}
