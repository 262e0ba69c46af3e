#![allow(dead_code)]

pub mod oracles;

use prnet_core::data::{make_windows, window_at, FlowSeries, SeriesMeta, SynthSpec, WindowSpec};
use prnet_core::eval::{ha_baseline, mae, rmse, smape, MetricAccumulator};
use prnet_core::gradcheck::grad_check_many;
use prnet_core::model::{
    cem, decode, diff, embed_segment, encode, fuse, reconstruct, sce_block, sce_cnn, sem,
    BlockParams, EmbedParams,
};
use prnet_core::{ForecastInputs, Graph, ModelConfig, Prnet, Reduction, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_EPS: f64 = 1e-6;
pub const ORACLE_TOL: f64 = 1e-12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
}

/// Entries in `±[0.2, 1)`, clear of the kinks at zero.
pub fn rand_nonzero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn rand_positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape.to_vec(), 0.0, 2.0, rng)
}

/// `sum(out * w)` with fixed, position-dependent weights.
pub fn weighted_sum(g: &mut Graph, out: Var) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let w = Tensor::from_fn(shape, |i| (i as f64 * 0.731 + 0.2).sin() + 0.1);
    let w = g.input(w);
    let m = g.mul(out, w)?;
    g.sum(m)
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        height: 8,
        width: 8,
        t_obs: 3,
        t_pred: 3,
        channels: 8,
        blocks: 2,
        periods: 2,
        interval: 7,
        pooled_h: 4,
        pooled_w: 4,
        reduction_spatial: 8,
        reduction_channel: 4,
        kernel: 3,
    }
}

/// Model with every buffer, biases included, perturbed away from init.
pub fn perturbed_model(config: ModelConfig, seed: u64) -> Prnet {
    let mut model = Prnet::new(config, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for buf in model.params_mut().buffers_mut() {
        for v in buf.data_mut() {
            *v += r.random_range(-0.2..0.2);
        }
    }
    model
}

pub fn random_inputs(config: &ModelConfig, rng: &mut ChaCha8Rng) -> ForecastInputs {
    let (h, w, p) = (config.height, config.width, config.periods);
    ForecastInputs {
        closeness: rand_positive(&[h, w, 2, config.t_obs], rng),
        periodic_closeness: rand_positive(&[p, h, w, 2, config.t_obs], rng),
        periodic_prediction: rand_positive(&[p, h, w, 2, config.t_pred], rng),
        anchor: 0,
    }
}

#[derive(Debug)]
pub struct Check {
    pub name: &'static str,
    pub error: f64,
    pub cases: usize,
}

impl Check {
    pub fn passes(&self, tol: f64) -> bool {
        self.error <= tol
    }
}

fn grad(name: &'static str, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>, inputs: &[Tensor]) -> Check {
    let report = grad_check_many(f, inputs, GRAD_EPS).unwrap_or_else(|e| panic!("{name}: {e}"));
    Check {
        name,
        error: report.max_rel_error,
        cases: report.entries_checked,
    }
}

fn block_vars(v: &[Var]) -> BlockParams<Var> {
    BlockParams {
        conv1_weight: v[0],
        conv1_bias: v[1],
        conv2_weight: v[2],
        conv2_bias: v[3],
        spatial_w1: v[4],
        spatial_w2: v[5],
        channel_w1: v[6],
        channel_w2: v[7],
    }
}

fn block_tensors(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let c = config.channels;
    let k = config.kernel;
    let s = config.pooled_cells();
    vec![
        rand_t(&[k, k, c, c], rng).map(|v| v * 0.3),
        rand_t(&[c], rng),
        rand_t(&[k, k, c, c], rng).map(|v| v * 0.3),
        rand_t(&[c], rng),
        rand_t(&[s, config.spatial_hidden()], rng),
        rand_t(&[config.spatial_hidden(), s], rng),
        rand_t(&[c, config.channel_hidden()], rng),
        rand_t(&[config.channel_hidden(), c], rng),
    ]
}

/// Central-difference checks of every differentiable op.
pub fn op_gradient_checks() -> Vec<Check> {
    let mut r = rng(11);
    let mut out = Vec::new();
    out.push(grad(
        "conv2d (padded, bias)",
        |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1)?;
            weighted_sum(g, y)
        },
        &[rand_t(&[5, 4, 3], &mut r), rand_t(&[3, 3, 3, 2], &mut r), rand_t(&[2], &mut r)],
    ));
    out.push(grad(
        "conv2d (valid)",
        |g, v| {
            let y = g.conv2d(v[0], v[1], None, 0)?;
            weighted_sum(g, y)
        },
        &[rand_t(&[5, 6, 2], &mut r), rand_t(&[3, 3, 2, 3], &mut r)],
    ));
    out.push(grad(
        "linear",
        |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            weighted_sum(g, y)
        },
        &[rand_t(&[3, 2, 5], &mut r), rand_t(&[5, 3], &mut r), rand_t(&[3], &mut r)],
    ));
    out.push(grad(
        "relu",
        |g, v| {
            let y = g.relu(v[0])?;
            weighted_sum(g, y)
        },
        &[rand_nonzero(&[4, 5], &mut r)],
    ));
    out.push(grad(
        "sigmoid",
        |g, v| {
            let y = g.sigmoid(v[0])?;
            weighted_sum(g, y)
        },
        &[rand_t(&[4, 5], &mut r).map(|x| 3.0 * x)],
    ));
    out.push(grad(
        "adaptive_max_pool2d",
        |g, v| {
            let y = g.adaptive_max_pool2d(v[0], 3, 2)?;
            weighted_sum(g, y)
        },
        &[rand_t(&[7, 5, 3], &mut r)],
    ));
    out.push(grad(
        "global_avg_pool",
        |g, v| {
            let y = g.global_avg_pool(v[0])?;
            weighted_sum(g, y)
        },
        &[rand_t(&[4, 3, 5], &mut r)],
    ));
    out.push(grad(
        "add (broadcast)",
        |g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y)
        },
        &[rand_t(&[2, 3, 4], &mut r), rand_t(&[3, 4], &mut r)],
    ));
    out.push(grad(
        "sub (broadcast)",
        |g, v| {
            let y = g.sub(v[0], v[1])?;
            weighted_sum(g, y)
        },
        &[rand_t(&[3, 4], &mut r), rand_t(&[2, 3, 4], &mut r)],
    ));
    out.push(grad(
        "mul (broadcast)",
        |g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y)
        },
        &[rand_t(&[2, 3, 4], &mut r), rand_t(&[4], &mut r)],
    ));
    out.push(grad(
        "concat",
        |g, v| {
            let y = g.concat(v[0], v[1], 1)?;
            weighted_sum(g, y)
        },
        &[rand_t(&[2, 3], &mut r), rand_t(&[2, 5], &mut r)],
    ));
    out.push(grad(
        "narrow",
        |g, v| {
            let y = g.narrow(v[0], 1, 1, 3)?;
            weighted_sum(g, y)
        },
        &[rand_t(&[4, 5], &mut r)],
    ));
    out.push(grad(
        "reshape",
        |g, v| {
            let y = g.reshape(v[0], &[2, 6])?;
            weighted_sum(g, y)
        },
        &[rand_t(&[3, 4], &mut r)],
    ));
    out.push(grad(
        "transpose",
        |g, v| {
            let y = g.transpose(v[0])?;
            weighted_sum(g, y)
        },
        &[rand_t(&[3, 5], &mut r)],
    ));
    out.push(grad("sum", |g, v| g.sum(v[0]), &[rand_t(&[3, 5], &mut r)]));
    let pred = rand_t(&[3, 4], &mut r);
    let target = pred.zip_map(&rand_nonzero(&[3, 4], &mut r), |a, b| a + b).unwrap();
    for (name, red) in [("l1_loss (sum)", Reduction::Sum), ("l1_loss (mean)", Reduction::Mean)] {
        out.push(grad(name, move |g, v| g.l1_loss(v[0], v[1], red), &[pred.clone(), target.clone()]));
    }
    out
}

/// Central-difference checks of every network stage at the tiny config.
pub fn module_gradient_checks() -> Vec<Check> {
    let cfg = tiny_config();
    let (h, w, c, p, t) = (cfg.height, cfg.width, cfg.channels, cfg.periods, cfg.t_obs);
    let mut r = rng(23);
    let mut out = Vec::new();

    out.push(grad(
        "embed",
        |g, v| {
            let e = EmbedParams { weight: v[1], bias: v[2] };
            let y = embed_segment(g, v[0], &e)?;
            weighted_sum(g, y)
        },
        &[
            rand_positive(&[h, w, 2, t], &mut r),
            rand_t(&[1, 1, 2 * t, c], &mut r),
            rand_t(&[c], &mut r),
        ],
    ));

    let block = block_tensors(&cfg, &mut r);
    let padding = cfg.padding();
    let mut inputs = vec![rand_t(&[h, w, c], &mut r)];
    inputs.extend(block[..4].iter().cloned());
    out.push(grad(
        "sce cnn",
        move |g, v| {
            let mut all = v[1..].to_vec();
            let dummy = g.input(Tensor::zeros([1]));
            all.extend([dummy; 4]);
            let y = sce_cnn(g, v[0], &block_vars(&all), padding)?;
            weighted_sum(g, y)
        },
        &inputs,
    ));

    let (ph, pw) = (cfg.pooled_h, cfg.pooled_w);
    out.push(grad(
        "spatial excitation",
        move |g, v| {
            let dummy = g.input(Tensor::zeros([1]));
            let mut all = vec![dummy; 4];
            all.extend([v[1], v[2], dummy, dummy]);
            let y = sem(g, v[0], &block_vars(&all), ph, pw)?;
            weighted_sum(g, y)
        },
        &[rand_t(&[h, w, c], &mut r), block[4].clone(), block[5].clone()],
    ));

    out.push(grad(
        "channel excitation",
        |g, v| {
            let dummy = g.input(Tensor::zeros([1]));
            let mut all = vec![dummy; 6];
            all.extend([v[2], v[3]]);
            let y = cem(g, v[0], v[1], &block_vars(&all))?;
            weighted_sum(g, y)
        },
        &[
            Tensor::uniform([ph, pw, c], 0.0, 1.0, &mut r),
            rand_t(&[h, w, c], &mut r),
            block[6].clone(),
            block[7].clone(),
        ],
    ));

    let mut inputs = vec![rand_t(&[h, w, c], &mut r)];
    inputs.extend(block.iter().cloned());
    let block_cfg = cfg.clone();
    out.push(grad(
        "sce block",
        move |g, v| {
            let y = sce_block(g, v[0], &block_vars(&v[1..]), &block_cfg)?;
            weighted_sum(g, y)
        },
        &inputs,
    ));

    out.push(grad(
        "diff",
        |g, v| {
            let y = diff(g, v[0], v[1])?;
            weighted_sum(g, y)
        },
        &[rand_t(&[h, w, c], &mut r), rand_t(&[p, h, w, c], &mut r)],
    ));

    out.push(grad(
        "fuse",
        |g, v| {
            let y = fuse(g, v[0], v[1], v[2])?;
            weighted_sum(g, y)
        },
        &[
            rand_t(&[p, h, w, c], &mut r),
            rand_t(&[p, h, w, c], &mut r),
            rand_t(&[2 * c, c], &mut r),
        ],
    ));

    let t_pred = cfg.t_pred;
    out.push(grad(
        "decoder",
        move |g, v| {
            let y = decode(g, v[0], v[1], v[2], t_pred)?;
            weighted_sum(g, y)
        },
        &[
            rand_t(&[p, h, w, c], &mut r),
            rand_t(&[c, 2 * t_pred], &mut r),
            rand_t(&[2 * t_pred], &mut r),
        ],
    ));

    let model = perturbed_model(cfg.clone(), 5);
    let sample = random_inputs(&cfg, &mut r);
    let residual = rand_t(&[p, h, w, 2, t_pred], &mut r);
    let params: Vec<Tensor> = model.params().entries().into_iter().map(|(_, t)| t.clone()).collect();
    let mut inputs = params;
    inputs.push(residual);
    let n_params = inputs.len() - 1;
    out.push(grad(
        "residual loss through the full network",
        move |g, v| {
            let mut i = 0;
            let vars = model.params().map(|_| {
                i += 1;
                v[i - 1]
            });
            let pred = model.forward(g, &vars, &sample)?;
            g.l1_loss(pred, v[n_params], Reduction::Mean)
        },
        &inputs,
    ));
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub const ORACLE_CASES: usize = 60;

pub fn conv2d_oracle(cases: usize) -> Check {
    let mut r = rng(101);
    let mut err = 0.0f64;
    for _ in 0..cases {
        let ks = [1, 3, 5][r.random_range(0..3)];
        let pad = r.random_range(0..=ks / 2);
        let h = r.random_range((ks - 2 * pad).max(1)..8);
        let w = r.random_range((ks - 2 * pad).max(1)..8);
        let (cin, cout) = (r.random_range(1..4), r.random_range(1..4));
        let x = rand_t(&[h, w, cin], &mut r);
        let k = rand_t(&[ks, ks, cin, cout], &mut r);
        let b = r.random_bool(0.5).then(|| rand_t(&[cout], &mut r));
        let mut g = Graph::new();
        let (xv, kv) = (g.input(x.clone()), g.input(k.clone()));
        let bv = b.clone().map(|b| g.input(b));
        let y = g.conv2d(xv, kv, bv, pad).unwrap();
        let (oh, ow, want) = oracles::conv2d(
            x.data(),
            h,
            w,
            cin,
            k.data(),
            ks,
            cout,
            b.as_ref().map(Tensor::data),
            pad,
        );
        assert_eq!(g.shape(y), [oh, ow, cout]);
        err = err.max(max_diff(g.value(y).data(), &want));
    }
    Check { name: "conv2d", error: err, cases }
}

pub fn amp_oracle(cases: usize) -> Check {
    let mut r = rng(102);
    let mut err = 0.0f64;
    for _ in 0..cases {
        let (h, w, c) = (r.random_range(1..10), r.random_range(1..10), r.random_range(1..4));
        let (oh, ow) = (r.random_range(1..=h), r.random_range(1..=w));
        let x = rand_t(&[h, w, c], &mut r);
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = g.adaptive_max_pool2d(xv, oh, ow).unwrap();
        assert_eq!(g.shape(y), [oh, ow, c]);
        err = err.max(max_diff(g.value(y).data(), &oracles::adaptive_max_pool(x.data(), h, w, c, oh, ow)));
    }
    Check { name: "adaptive_max_pool2d", error: err, cases }
}

pub fn gap_oracle(cases: usize) -> Check {
    let mut r = rng(103);
    let mut err = 0.0f64;
    for _ in 0..cases {
        let (h, w, c) = (r.random_range(1..10), r.random_range(1..10), r.random_range(1..6));
        let x = rand_t(&[h, w, c], &mut r);
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = g.global_avg_pool(xv).unwrap();
        assert_eq!(g.shape(y), [c]);
        err = err.max(max_diff(g.value(y).data(), &oracles::global_avg_pool(x.data(), h, w, c)));
    }
    Check { name: "global_avg_pool", error: err, cases }
}

pub fn linear_oracle(cases: usize) -> Check {
    let mut r = rng(104);
    let mut err = 0.0f64;
    for _ in 0..cases {
        let lead: Vec<usize> = (0..r.random_range(0..3)).map(|_| r.random_range(1..4)).collect();
        let (din, dout) = (r.random_range(1..7), r.random_range(1..7));
        let mut shape = lead.clone();
        shape.push(din);
        let x = rand_t(&shape, &mut r);
        let wt = rand_t(&[din, dout], &mut r);
        let b = r.random_bool(0.5).then(|| rand_t(&[dout], &mut r));
        let mut g = Graph::new();
        let (xv, wv) = (g.input(x.clone()), g.input(wt.clone()));
        let bv = b.clone().map(|b| g.input(b));
        let y = g.linear(xv, wv, bv).unwrap();
        let rows: usize = lead.iter().product();
        let want = oracles::linear(x.data(), rows, din, wt.data(), dout, b.as_ref().map(Tensor::data));
        let mut want_shape = lead;
        want_shape.push(dout);
        assert_eq!(g.shape(y), want_shape.as_slice());
        err = err.max(max_diff(g.value(y).data(), &want));
    }
    Check { name: "linear", error: err, cases }
}

pub fn random_series(n: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> FlowSeries {
    let values = (0..n * h * w * 2).map(|_| r.random_range(0.0..50.0)).collect();
    FlowSeries::new(h, w, SeriesMeta::default(), values).unwrap()
}

pub fn random_spec(r: &mut ChaCha8Rng) -> WindowSpec {
    let t_obs = r.random_range(1..4);
    let t_pred = r.random_range(1..4);
    WindowSpec {
        t_obs,
        t_pred,
        interval: t_obs + t_pred + r.random_range(0..4),
        periods: r.random_range(1..4),
        stride: r.random_range(1..4),
    }
}

pub fn windowing_oracle(cases: usize) -> Check {
    let mut r = rng(105);
    let mut mismatches = 0usize;
    for _ in 0..cases {
        let spec = random_spec(&mut r);
        let (h, w) = (r.random_range(1..4), r.random_range(1..4));
        let n = spec.first_anchor() + r.random_range(0..15);
        let series = random_series(n, h, w, &mut r);
        let got = make_windows(&series, &spec).unwrap();
        let want = oracles::windows(
            series.values(),
            n,
            h,
            w,
            spec.t_obs,
            spec.t_pred,
            spec.interval,
            spec.periods,
            spec.stride,
        );
        assert_eq!(got.too_short, want.is_empty());
        if got.windows.len() != want.len() {
            mismatches += 1;
            continue;
        }
        for (g, o) in got.windows.iter().zip(&want) {
            let mut residual = Vec::new();
            for p in 0..spec.periods {
                let base = p * o.target.len();
                for i in 0..o.target.len() {
                    residual.push(o.target[i] - o.periodic_prediction[base + i]);
                }
            }
            let same = g.anchor() == o.anchor
                && g.inputs.closeness.data() == o.closeness.as_slice()
                && g.inputs.periodic_closeness.data() == o.periodic_closeness.as_slice()
                && g.inputs.periodic_prediction.data() == o.periodic_prediction.as_slice()
                && g.target.data() == o.target.as_slice()
                && g.residual.data() == residual.as_slice()
                && g.target.shape() == [h, w, 2, spec.t_pred]
                && g.inputs.periodic_closeness.shape() == [spec.periods, h, w, 2, spec.t_obs];
            if !same {
                mismatches += 1;
            }
        }
    }
    Check {
        name: "windowing",
        error: mismatches as f64,
        cases,
    }
}

pub fn metrics_oracle(cases: usize) -> Check {
    let mut r = rng(106);
    let mut err = 0.0f64;
    for _ in 0..cases {
        let n = r.random_range(1..200);
        let draw = |r: &mut ChaCha8Rng| {
            if r.random_bool(0.2) {
                0.0
            } else {
                r.random_range(0.0..30.0)
            }
        };
        let truth: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let pred: Vec<f64> = truth
            .iter()
            .map(|&t| if r.random_bool(0.2) { t } else { draw(&mut r) })
            .collect();
        let (m, rm, s) = oracles::metrics(&pred, &truth);
        let pt = Tensor::new([n], pred.clone()).unwrap();
        let tt = Tensor::new([n], truth.clone()).unwrap();
        err = err
            .max((mae(&pt, &tt).unwrap() - m).abs())
            .max((rmse(&pt, &tt).unwrap() - rm).abs())
            .max((smape(&pt, &tt).unwrap() - s).abs());

        let cut = r.random_range(0..=n);
        let mut a = MetricAccumulator::default();
        let mut b = MetricAccumulator::default();
        a.push_slices(&pred[..cut], &truth[..cut]);
        b.push_slices(&pred[cut..], &truth[cut..]);
        let merged = MetricAccumulator::pairwise_merge(&[a, b]).finish();
        err = err
            .max((merged.mae - m).abs())
            .max((merged.rmse - rm).abs())
            .max((merged.smape - s).abs());
    }
    Check { name: "metrics", error: err, cases }
}

pub fn oracle_checks(cases: usize) -> Vec<Check> {
    vec![
        conv2d_oracle(cases),
        amp_oracle(cases),
        gap_oracle(cases),
        linear_oracle(cases),
        windowing_oracle(cases),
        metrics_oracle(cases),
    ]
}

/// `(max |reconstruct(Y - Y_p, Y_p) - Y|, HA bit-identical to zero residual)`
/// over random windows.
pub fn reconstruction_check(windows: usize) -> (f64, bool) {
    let mut r = rng(107);
    let mut err = 0.0f64;
    let mut ha_exact = true;
    for _ in 0..windows {
        let spec = random_spec(&mut r);
        let n = spec.first_anchor() + spec.t_pred + r.random_range(0..10);
        let series = random_series(n, r.random_range(1..4), r.random_range(1..4), &mut r);
        let anchor = r.random_range(spec.first_anchor()..=n - spec.t_pred);
        let win = window_at(&series, &spec, anchor).unwrap();
        let y = &win.target;
        let yp = &win.inputs.periodic_prediction;
        let inner = y.numel();
        let delta = Tensor::from_fn(yp.shape().to_vec(), |i| y.data()[i % inner] - yp.data()[i]);
        let rebuilt = reconstruct(&delta, yp).unwrap();
        assert_eq!(rebuilt.shape(), y.shape());
        err = err.max(max_diff(rebuilt.data(), y.data()));

        let zero = reconstruct(&Tensor::zeros(yp.shape().to_vec()), yp).unwrap();
        let ha = ha_baseline(&win.inputs).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ha_exact &= zero.shape() == ha.shape() && bits(&zero) == bits(&ha);
    }
    (err, ha_exact)
}

pub struct Periodicity {
    pub windows: usize,
    pub max_abs_residual: f64,
    pub ha_mae: f64,
    pub ha_rmse: f64,
    pub max_abs_diff_state: f64,
}

/// Noise-free weekly data: residuals, HA error and DIFF states.
pub fn periodicity_check() -> Periodicity {
    let synth = SynthSpec {
        height: 4,
        width: 4,
        weeks: 4,
        steps_per_day: 6,
        noise_sd: 0.0,
        trend_slope: 0.0,
        seed: 3,
    };
    let series = prnet_core::data::synth_generate(&synth).unwrap();
    let spec = WindowSpec {
        t_obs: 3,
        t_pred: 3,
        interval: 7 * synth.steps_per_day,
        periods: 3,
        stride: 1,
    };
    let set = make_windows(&series, &spec).unwrap();
    let mut max_res = 0.0f64;
    let mut acc = MetricAccumulator::default();
    for w in &set.windows {
        max_res = w.residual.data().iter().fold(max_res, |m, v| m.max(v.abs()));
        let ha = ha_baseline(&w.inputs).unwrap();
        acc.push_slices(ha.data(), w.target.data());
    }
    let metrics = acc.finish();

    let cfg = ModelConfig {
        height: 4,
        width: 4,
        pooled_h: 2,
        pooled_w: 2,
        reduction_spatial: 2,
        ..tiny_config()
    };
    let model = perturbed_model(cfg.clone(), 9);
    let mut r = rng(108);
    let x = rand_positive(&[4, 4, 2, cfg.t_obs], &mut r);
    let mut g = Graph::new();
    let vars = model.register(&mut g, false);
    let state = |g: &mut Graph| -> Var {
        let seg = g.input(x.clone());
        let z = embed_segment(g, seg, &vars.embed).unwrap();
        encode(g, z, &vars.blocks, &cfg).unwrap()
    };
    let h_x = state(&mut g);
    let mut stacked: Option<Var> = None;
    for _ in 0..cfg.periods {
        let s = state(&mut g);
        let s = g.reshape(s, &[1, 4, 4, cfg.channels]).unwrap();
        stacked = Some(match stacked {
            None => s,
            Some(acc) => g.concat(acc, s, 0).unwrap(),
        });
    }
    let d = diff(&mut g, h_x, stacked.unwrap()).unwrap();
    let max_diff_state = g.value(d).data().iter().fold(0.0f64, |m, v| m.max(v.abs()));

    Periodicity {
        windows: set.windows.len(),
        max_abs_residual: max_res,
        ha_mae: metrics.mae,
        ha_rmse: metrics.rmse,
        max_abs_diff_state: max_diff_state,
    }
}

pub fn full_config(periods: usize) -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 16,
        periods,
        ..ModelConfig::default()
    }
}
