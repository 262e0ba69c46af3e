//! Straight-loop reference implementations, written independently of the
//! library kernels.

/// Zero-padded cross-correlation. `x` is `[h, w, cin]`, `k` is
/// `[ks, ks, cin, cout]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    k: &[f64],
    ks: usize,
    cout: usize,
    bias: Option<&[f64]>,
    pad: usize,
) -> (usize, usize, Vec<f64>) {
    let oh = h + 2 * pad + 1 - ks;
    let ow = w + 2 * pad + 1 - ks;
    let mut out = vec![0.0; oh * ow * cout];
    for i in 0..oh {
        for j in 0..ow {
            for o in 0..cout {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for di in 0..ks {
                    for dj in 0..ks {
                        let r = i as isize + di as isize - pad as isize;
                        let c = j as isize + dj as isize - pad as isize;
                        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                            continue;
                        }
                        let (r, c) = (r as usize, c as usize);
                        for ci in 0..cin {
                            acc += x[(r * w + c) * cin + ci]
                                * k[((di * ks + dj) * cin + ci) * cout + o];
                        }
                    }
                }
                out[(i * ow + j) * cout + o] = acc;
            }
        }
    }
    (oh, ow, out)
}

fn bin(i: usize, n: usize, m: usize) -> (usize, usize) {
    let lo = (i * n) / m;
    let hi = ((i + 1) * n).div_ceil(m);
    (lo, hi)
}

pub fn adaptive_max_pool(x: &[f64], h: usize, w: usize, c: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    for i in 0..oh {
        let (r0, r1) = bin(i, h, oh);
        for j in 0..ow {
            let (c0, c1) = bin(j, w, ow);
            for ch in 0..c {
                let slot = &mut out[(i * ow + j) * c + ch];
                for r in r0..r1 {
                    for col in c0..c1 {
                        *slot = slot.max(x[(r * w + col) * c + ch]);
                    }
                }
            }
        }
    }
    out
}

pub fn global_avg_pool(x: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    (0..c)
        .map(|ch| {
            let mut s = 0.0;
            for cell in 0..h * w {
                s += x[cell * c + ch];
            }
            s / (h * w) as f64
        })
        .collect()
}

/// `rows x din` times `din x dout`, plus bias.
pub fn linear(x: &[f64], rows: usize, din: usize, wt: &[f64], dout: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let mut out = vec![0.0; rows * dout];
    for r in 0..rows {
        for o in 0..dout {
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for i in 0..din {
                acc += x[r * din + i] * wt[i * dout + o];
            }
            out[r * dout + o] = acc;
        }
    }
    out
}

/// One window assembled element by element from an `[n, h, w, 2]` series.
#[derive(Debug, PartialEq)]
pub struct NaiveWindow {
    pub anchor: usize,
    pub closeness: Vec<f64>,
    pub periodic_closeness: Vec<f64>,
    pub periodic_prediction: Vec<f64>,
    pub target: Vec<f64>,
}

fn gather(series: &[f64], h: usize, w: usize, start: usize, len: usize, out: &mut Vec<f64>) {
    for r in 0..h {
        for c in 0..w {
            for f in 0..2 {
                for t in 0..len {
                    out.push(series[(((start + t) * h + r) * w + c) * 2 + f]);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn windows(
    series: &[f64],
    n: usize,
    h: usize,
    w: usize,
    t_obs: usize,
    t_pred: usize,
    interval: usize,
    periods: usize,
    stride: usize,
) -> Vec<NaiveWindow> {
    let mut out = Vec::new();
    let mut t = periods * interval + t_obs;
    while t + t_pred <= n {
        let mut win = NaiveWindow {
            anchor: t,
            closeness: Vec::new(),
            periodic_closeness: Vec::new(),
            periodic_prediction: Vec::new(),
            target: Vec::new(),
        };
        gather(series, h, w, t - t_obs, t_obs, &mut win.closeness);
        for p in 1..=periods {
            gather(series, h, w, t - p * interval - t_obs, t_obs, &mut win.periodic_closeness);
        }
        for p in 1..=periods {
            gather(series, h, w, t - p * interval, t_pred, &mut win.periodic_prediction);
        }
        gather(series, h, w, t, t_pred, &mut win.target);
        out.push(win);
        t += stride;
    }
    out
}

/// `(mae, rmse, smape)`
pub fn metrics(pred: &[f64], truth: &[f64]) -> (f64, f64, f64) {
    let n = pred.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut sm = 0.0;
    for i in 0..pred.len() {
        let e = pred[i] - truth[i];
        abs += e.abs();
        sq += e * e;
        let d = pred[i].abs() + truth[i].abs();
        if d > 0.0 {
            sm += 2.0 * e.abs() / d;
        }
    }
    (abs / n, (sq / n).sqrt(), sm / n)
}
