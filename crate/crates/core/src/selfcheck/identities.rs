//! Operator oracles and exact identities of the model, supervision, optimizer, and metrics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{oracle, CheckResult};
use crate::config::RunConfig;
use crate::error::Result;
use crate::kernels::conv::{conv2d, ConvSpec};
use crate::kernels::pool::{pool2d, PoolKind, PoolSpec};
use crate::kernels::resize::resize_bilinear;
use crate::kernels::Padding;
use crate::metrics::{f_measure, max_f, mae, pr_curve, threshold, Averaging, EvalRecord, DEFAULT_BETA_SQ, THRESHOLDS};
use crate::model::specialization::{laplacian_with_kernel, AnisotropicContext};
use crate::model::{DssNet, Features, ModelConfig};
use crate::nn::{ParamStore, Session};
use crate::optim::{adamw_step, clip_global_norm, cosine_lr, global_norm, AdamState, AdamWConfig};
use crate::supervision::{
    boundary_from_mask, boundary_loss, coordination_target, scm_loss, structure_loss, structure_weight, total_loss,
    LossWeights, SupervisionConfig, SupervisionTargets,
};
use crate::tensor::{bce_logit, Tensor};
use crate::Graph;

pub const ORACLE_CASES: usize = 60;
pub const ORACLE_TOLERANCE: f64 = 1e-6;

fn normal(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

/// Largest absolute difference, or infinity on a shape mismatch.
pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs `cases` random comparisons, keeping the worst error and its case description.
fn oracle_family(
    name: &str,
    cases: usize,
    rng: &mut ChaCha8Rng,
    mut case: impl FnMut(&mut ChaCha8Rng) -> Result<(f64, String)>,
) -> CheckResult {
    let mut worst = 0.0f64;
    let mut at = String::new();
    for _ in 0..cases {
        match case(rng) {
            Ok((err, desc)) => {
                if err >= worst {
                    worst = err;
                    at = desc;
                }
            }
            Err(e) => return CheckResult::new("oracle", name, false, 0, f64::NAN, e.to_string()),
        }
    }
    CheckResult::new("oracle", name, worst <= ORACLE_TOLERANCE, cases, worst, format!("worst: {at}"))
}

const PADDINGS: [Padding; 3] = [Padding::Zero, Padding::Reflect, Padding::Replicate];

/// Kernels, groupings, paddings, and strides against direct loops.
pub fn operator_oracles(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let kernels = [(1, 1), (3, 3), (5, 5), (7, 7), (1, 7), (7, 1), (1, 15), (15, 1), (1, 3), (3, 1)];
    let mut out = vec![oracle_family("conv2d", ORACLE_CASES, rng, |rng| {
        let (kh, kw) = kernels[rng.random_range(0..kernels.len())];
        let padding = PADDINGS[rng.random_range(0..3)];
        let stride = rng.random_range(1..=2);
        let (groups, cin, cout) = match rng.random_range(0..3) {
            0 => (1, rng.random_range(1..=4), rng.random_range(1..=4)),
            1 => (2, 2 * rng.random_range(1..=2), 2 * rng.random_range(1..=2)),
            _ => {
                let c = rng.random_range(1..=4);
                (c, c, c)
            }
        };
        let (b, h, w) = (rng.random_range(1..=2), rng.random_range(2..=9), rng.random_range(2..=9));
        let x = normal(rng, vec![b, cin, h, w]);
        let wt = normal(rng, vec![cout, cin / groups, kh, kw]);
        let bias = rng.random_bool(0.5).then(|| normal(rng, vec![cout]));
        let spec = ConvSpec {
            stride,
            padding,
            groups,
        };
        let got = conv2d(&x, &wt, bias.as_ref(), &spec)?;
        let want = oracle::conv2d(&x, &wt, bias.as_ref(), stride, padding, groups);
        Ok((
            max_abs_diff(&got, &want),
            format!("x {:?} w {:?} stride {stride} {padding:?} groups {groups}", x.shape(), wt.shape()),
        ))
    })];

    out.push(oracle_family("anisotropic separable", ORACLE_CASES, rng, |rng| {
        let k = [3, 5, 7, 9, 15][rng.random_range(0..5)];
        let (b, c, h, w) = (
            rng.random_range(1..=2),
            rng.random_range(1..=4),
            rng.random_range(2..=10),
            rng.random_range(2..=10),
        );
        let mut store = ParamStore::new();
        let ctx = AnisotropicContext::new(&mut store, rng.random(), "ctx", c, k)?;
        let x = normal(rng, vec![b, c, h, w]);
        let mut s = Session::new(&store, true);
        let xv = s.input(x.clone());
        let y = ctx.separable(&mut s, xv)?;
        let got = s.graph.value(y).clone();
        let wh = store.get("ctx.h.weight")?.data().to_vec();
        let wv = store.get("ctx.v.weight")?.data().to_vec();
        let want = oracle::separable(&x, &wh, &wv, k);
        Ok((max_abs_diff(&got, &want), format!("x {:?} k {k}", x.shape())))
    }));

    for (name, kind) in [("max pool", PoolKind::Max), ("avg pool", PoolKind::Avg)] {
        out.push(oracle_family(name, ORACLE_CASES, rng, |rng| {
            let kernel = [1, 3, 5, 7][rng.random_range(0..4)];
            let stride = rng.random_range(1..=2);
            let padding = PADDINGS[rng.random_range(0..3)];
            let shape = vec![rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=9), rng.random_range(1..=9)];
            let x = normal(rng, shape);
            let spec = PoolSpec {
                kind,
                kernel,
                stride,
                padding,
            };
            let (got, _) = pool2d(&x, &spec)?;
            let want = oracle::pool(&x, kind == PoolKind::Max, kernel, stride, padding);
            Ok((
                max_abs_diff(&got, &want),
                format!("x {:?} k {kernel} stride {stride} {padding:?}", x.shape()),
            ))
        }));
    }

    out.push(oracle_family("resize bilinear", ORACLE_CASES, rng, |rng| {
        let shape = vec![rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=8), rng.random_range(1..=8)];
        let x = normal(rng, shape);
        let (oh, ow) = (rng.random_range(1..=13), rng.random_range(1..=13));
        let got = resize_bilinear(&x, oh, ow)?;
        let want = oracle::resize(&x, oh, ow);
        Ok((max_abs_diff(&got, &want), format!("x {:?} -> {oh}x{ow}", x.shape())))
    }));
    out
}

fn exact(group: &'static str, name: &str, err: f64, detail: impl Into<String>) -> CheckResult {
    CheckResult::new(group, name, err == 0.0, 1, err, detail.into())
}

fn within(group: &'static str, name: &str, err: f64, tol: f64, detail: impl Into<String>) -> CheckResult {
    CheckResult::new(group, name, err <= tol, 1, err, detail.into())
}

fn failed(group: &'static str, name: &str, e: crate::Error) -> CheckResult {
    CheckResult::new(group, name, false, 0, f64::NAN, e.to_string())
}

/// Tiny-model forward in 64-bit with non-zero heads, returning the features and the graph.
fn tiny_forward(
    store: &ParamStore<f64>,
    net: &DssNet,
    image: &Tensor<f64>,
    f: impl FnOnce(&Session<f64>, &Features) -> Result<CheckResult>,
) -> Result<CheckResult> {
    let mut s = Session::new(store, true);
    let x = s.input(image.clone());
    let feats = net.forward(&mut s, x)?;
    f(&s, &feats)
}

fn randomized_tiny(seed: u64) -> Result<(DssNet, ParamStore<f64>, Tensor<f64>)> {
    let (net, mut store) = DssNet::new(ModelConfig::tiny(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in store.params_mut() {
        if t.data().iter().all(|&v| v == 0.0) {
            t.data_mut().iter_mut().for_each(|v| *v = rng.sample::<f64, _>(StandardNormal) * 0.2);
        }
    }
    let (image, _) = super::gradcheck::tiny_batch(seed)?;
    Ok((net, store, image))
}

fn zero_param(store: &mut ParamStore<f64>, name: &str) -> Result<()> {
    store.get_mut(name)?.data_mut().iter_mut().for_each(|v| *v = 0.0);
    Ok(())
}

/// Exact and recomputed identities of the network. `kernel` is the Laplacian stencil under
/// test, so a corrupted stencil can be shown to fail.
pub fn structural_identities(seed: u64, kernel: &[f64; 9]) -> Vec<CheckResult> {
    const G: &str = "structure";
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for (shape, c) in [(vec![1, 1, 5, 5], 1.0), (vec![2, 3, 4, 7], -2.5), (vec![1, 4, 1, 6], 1e3), (vec![1, 2, 9, 3], 0.37)] {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(shape, c));
        match laplacian_with_kernel(&mut g, x, kernel) {
            Ok(y) => worst = worst.max(g.value(y).data().iter().fold(0.0f64, |m, v| m.max(v.abs()))),
            Err(e) => {
                worst = f64::INFINITY;
                out.push(failed(G, "laplacian stencil", e));
            }
        }
        let mut g32 = Graph::<f32>::new();
        let x = g32.constant(Tensor::full(vec![1, 2, 5, 6], c as f32));
        if let Ok(y) = laplacian_with_kernel(&mut g32, x, kernel) {
            worst = worst.max(g32.value(y).data().iter().fold(0.0f64, |m, v| m.max(v.abs() as f64)));
        }
    }
    out.push(exact(G, "laplacian of constant fields is zero", worst, "max |L(c)| over 8 fields"));

    let mut g = Graph::<f64>::new();
    let mut impulse = Tensor::zeros(vec![1, 1, 5, 5]);
    impulse.set4(0, 0, 2, 2, 1.0);
    let x = g.constant(impulse);
    let stamp = laplacian_with_kernel(&mut g, x, kernel).map(|y| {
        let y = g.value(y);
        let mut err = 0.0f64;
        for r in 0..5usize {
            for c in 0..5usize {
                let want = match (r.abs_diff(2), c.abs_diff(2)) {
                    (0, 0) => -4.0,
                    (1, 0) | (0, 1) => 1.0,
                    _ => 0.0,
                };
                err = err.max((y.at4(0, 0, r, c) - want).abs());
            }
        }
        err
    });
    out.push(match stamp {
        Ok(err) => exact(G, "laplacian impulse response", err, "stencil stamp at the centre of a 5x5 field"),
        Err(e) => failed(G, "laplacian impulse response", e),
    });

    let built = randomized_tiny(seed);
    let (net, store, image) = match built {
        Ok(b) => b,
        Err(e) => {
            out.push(failed(G, "tiny model", e));
            return out;
        }
    };

    let mut zeroed = store.clone();
    let run = zero_param(&mut zeroed, "rc.project.weight")
        .and_then(|_| zero_param(&mut zeroed, "rc.project.bias"))
        .and_then(|_| {
            tiny_forward(&zeroed, &net, &image, |s, f| {
                let rc = f.region.expect("full model has a region branch");
                let err = max_abs_diff(s.graph.value(rc.output), s.graph.value(f.base));
                Ok(exact(G, "zeroed region projection returns the base", err, "bit-exact"))
            })
        });
    out.push(run.unwrap_or_else(|e| failed(G, "zeroed region projection returns the base", e)));

    let mut zeroed = store.clone();
    let run = zero_param(&mut zeroed, "dec.refine.residual.weight")
        .and_then(|_| zero_param(&mut zeroed, "dec.refine.residual.bias"))
        .and_then(|_| {
            tiny_forward(&zeroed, &net, &image, |s, f| {
                let sf = f.refined_logits.expect("full decoder refines");
                let sc = f.coarse_logits.expect("full decoder has a coarse head");
                let err = max_abs_diff(s.graph.value(sf), s.graph.value(sc));
                Ok(exact(G, "zeroed residual head returns the coarse logits", err, "bit-exact"))
            })
        });
    out.push(run.unwrap_or_else(|e| failed(G, "zeroed residual head returns the coarse logits", e)));

    let run = tiny_forward(&store, &net, &image, |s, f| {
        let co = f.coordination.expect("full model coordinates");
        let w = s.graph.value(co.weight.expect("spatial coordination has a weight"));
        let bs = s.graph.value(f.boundary.expect("boundary branch").features);
        let rc = s.graph.value(f.region.expect("region branch").output);
        let fd = s.graph.value(co.blended);
        let (b, c, h, wd) = fd.dims4()?;
        let (mut err, mut hull, mut spread) = (0.0f64, 0.0f64, 0.0f64);
        for n in 0..b {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..wd {
                        let wv = w.at4(n, 0, y, x);
                        let (a, r) = (bs.at4(n, ch, y, x), rc.at4(n, ch, y, x));
                        err = err.max((wv * a + (1.0 - wv) * r - fd.at4(n, ch, y, x)).abs());
                        hull = hull.max((fd.at4(n, ch, y, x) - a).abs());
                        spread = spread.max((a - r).abs());
                    }
                }
            }
        }
        Ok(if hull > spread + 1e-12 {
            CheckResult::new(G, "blend recomputation", false, 1, err, format!("convexity bound violated: {hull} > {spread}"))
        } else {
            within(G, "blend recomputation", err, ORACLE_TOLERANCE, format!("max |F_d - F_bs| {hull:.3e} <= {spread:.3e}"))
        })
    });
    out.push(run.unwrap_or_else(|e| failed(G, "blend recomputation", e)));

    for (bias, toward) in [(20.0, "boundary"), (-20.0, "region")] {
        let name = format!("saturated coordination selects the {toward} branch");
        let mut sat = store.clone();
        let run = zero_param(&mut sat, "scm.predict.weight")
            .and_then(|_| {
                sat.get_mut("scm.predict.bias")?.data_mut()[0] = bias;
                Ok(())
            })
            .and_then(|_| {
                tiny_forward(&sat, &net, &image, |s, f| {
                    let fd = s.graph.value(f.coordination.expect("coordination").blended);
                    let target = if bias > 0.0 {
                        s.graph.value(f.boundary.expect("boundary").features)
                    } else {
                        s.graph.value(f.region.expect("region").output)
                    };
                    Ok(within(G, &name, max_abs_diff(fd, target), ORACLE_TOLERANCE, format!("A_sc = {bias}")))
                })
            });
        out.push(run.unwrap_or_else(|e| failed(G, &name, e)));
    }

    let run = tiny_forward(&store, &net, &image, |s, f| {
        let rc = f.region.expect("region");
        let base = s.graph.value(f.base);
        let diff = Tensor::from_vec(
            base.shape().to_vec(),
            s.graph.value(rc.output).data().iter().zip(base.data()).map(|(a, b)| a - b).collect(),
        )?;
        let err = max_abs_diff(&diff, s.graph.value(rc.context));
        Ok(within(G, "region residual recomputation", err, ORACLE_TOLERANCE, "F_rc - F_b against the context term"))
    });
    out.push(run.unwrap_or_else(|e| failed(G, "region residual recomputation", e)));

    let run = tiny_forward(&store, &net, &image, |s, f| {
        let (_, _, h, w) = s.graph.value(f.projected[2]).dims4()?;
        let up = oracle::resize(s.graph.value(f.pyramid[3]), h, w);
        let want = Tensor::from_vec(
            up.shape().to_vec(),
            up.data().iter().zip(s.graph.value(f.projected[2]).data()).map(|(a, b)| a + b).collect(),
        )?;
        let err = max_abs_diff(&want, s.graph.value(f.pyramid[2]));
        Ok(within(G, "pyramid top-down recomputation", err, ORACLE_TOLERANCE, "P3 = C3' + U(P4)"))
    });
    out.push(run.unwrap_or_else(|e| failed(G, "pyramid top-down recomputation", e)));

    let run = (|| -> Result<CheckResult> {
        let mut s = Session::new(&store, true);
        let x = s.input(image.clone());
        let f = net.forward(&mut s, x)?;
        let refiner = net.refiner().expect("full decoder");
        let sc = f.coarse_logits.expect("coarse");
        let residual = refiner.residual(&mut s, x, sc, f.pyramid[0])?;
        let sf = s.graph.value(f.refined_logits.expect("refined"));
        let diff = Tensor::from_vec(
            sf.shape().to_vec(),
            sf.data().iter().zip(s.graph.value(sc).data()).map(|(a, b)| a - b).collect(),
        )?;
        let err = max_abs_diff(&diff, s.graph.value(residual));
        Ok(within(G, "refinement residual recomputation", err, ORACLE_TOLERANCE, "S_f - S_c"))
    })();
    out.push(run.unwrap_or_else(|e| failed(G, "refinement residual recomputation", e)));

    let run = tiny_forward(&store, &net, &image, |s, f| {
        let p = s.graph.value(f.boundary.expect("boundary").prob);
        let inside = p.data().iter().all(|v| (0.0..=1.0).contains(v));
        Ok(CheckResult::new(G, "boundary probabilities in [0, 1]", inside, 1, 0.0, String::new()))
    });
    out.push(run.unwrap_or_else(|e| failed(G, "boundary probabilities in [0, 1]", e)));
    out
}

fn scalar_graph_value(f: impl FnOnce(&mut Graph<f64>) -> Result<crate::Var>) -> Result<f64> {
    let mut g = Graph::new();
    let v = f(&mut g)?;
    Ok(g.value(v).item())
}

/// Per-item mean of `w * bce / sum w` plus `1 - sum(w p t) / sum(w (p + t - p t))`, by loops.
fn structure_loss_oracle(x: &Tensor<f64>, t: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    let items = x.shape()[0];
    let n = x.len() / items;
    let mut total = 0.0;
    for b in 0..items {
        let (mut num, mut den, mut inter, mut union) = (0.0, 0.0, 0.0, 0.0);
        for i in b * n..(b + 1) * n {
            let (xi, ti, wi) = (x.data()[i], t.data()[i], w.data()[i]);
            let p = 1.0 / (1.0 + (-xi).exp());
            let bce = -(ti * p.ln() + (1.0 - ti) * (1.0 - p).ln());
            num += wi * bce;
            den += wi;
            inter += wi * p * ti;
            union += wi * (p + ti - p * ti);
        }
        total += num / den + 1.0 - inter / union;
    }
    total / items as f64
}

/// Losses, targets, and weights of the supervision module.
pub fn supervision_identities(seed: u64) -> Vec<CheckResult> {
    const G: &str = "supervision";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SupervisionConfig::default();
    let mut out = Vec::new();

    let closed = std::f64::consts::LN_2 + 0.5;
    let got = scalar_graph_value(|g| {
        let x = g.leaf(Tensor::zeros(vec![2, 1, 8, 8]), true);
        structure_loss(g, x, &Tensor::ones(vec![2, 1, 8, 8]), &cfg)
    });
    let ones = Tensor::ones(vec![2, 1, 8, 8]);
    let oracle_value = structure_loss_oracle(&Tensor::zeros(vec![2, 1, 8, 8]), &ones, &ones);
    out.push(match got {
        Ok(v) => {
            let err = (v - closed).abs().max((oracle_value - closed).abs());
            within(G, "structure loss at zero logits on a full target", err, 1e-6, format!("{v:.12} vs ln 2 + 1/2 = {closed:.12}"))
        }
        Err(e) => failed(G, "structure loss at zero logits on a full target", e),
    });

    let x = normal(&mut rng, vec![2, 1, 12, 12]).map(|v| 2.0 * v);
    let mask = Tensor::from_fn(vec![2, 1, 12, 12], |i| if (i % 12) > 4 && (i / 12) % 12 > 3 { 1.0 } else { 0.0 });
    let run = structure_weight(&mask, cfg.weight_amplitude, cfg.weight_kernel).and_then(|w| {
        let got = scalar_graph_value(|g| {
            let xv = g.leaf(x.clone(), true);
            structure_loss(g, xv, &mask, &cfg)
        })?;
        Ok((got - structure_loss_oracle(&x, &mask, &w)).abs())
    });
    out.push(match run {
        Ok(err) => within(G, "structure loss against a loop oracle", err, 1e-9, "random logits, rectangle mask"),
        Err(e) => failed(G, "structure loss against a loop oracle", e),
    });

    let e_s = Tensor::from_fn(vec![2, 1, 9, 9], |_| rng.random_range(0.0..1.0));
    let run = scalar_graph_value(|g| {
        let xv = g.leaf(normal(&mut ChaCha8Rng::seed_from_u64(seed + 1), vec![2, 1, 9, 9]), true);
        boundary_loss(g, xv, &e_s, &cfg)
    })
    .map(|got| {
        let x = normal(&mut ChaCha8Rng::seed_from_u64(seed + 1), vec![2, 1, 9, 9]);
        let n = 81;
        let mut want = 0.0;
        let mut bce_sum = 0.0;
        for b in 0..2 {
            let (mut pt, mut ps, mut ts) = (0.0, 0.0, 0.0);
            for i in b * n..(b + 1) * n {
                let (xi, ti) = (x.data()[i], e_s.data()[i]);
                let p = 1.0 / (1.0 + (-xi).exp());
                bce_sum += -(ti * p.ln() + (1.0 - ti) * (1.0 - p).ln());
                pt += p * ti;
                ps += p;
                ts += ti;
            }
            want += 1.0 - (2.0 * pt + cfg.dice_eps) / (ps + ts + cfg.dice_eps);
        }
        want = bce_sum / (2 * n) as f64 + want / 2.0;
        (got - want).abs()
    });
    out.push(match run {
        Ok(err) => within(G, "boundary loss against a loop oracle", err, 1e-6, "BCE + Dice"),
        Err(e) => failed(G, "boundary loss against a loop oracle", e),
    });

    let mut worst = 0.0f64;
    let mut fields = vec![Tensor::zeros(vec![1, 1, 13, 13]), Tensor::zeros(vec![1, 1, 9, 11])];
    fields[0].set4(0, 0, 6, 6, 1.0);
    for c in 0..11 {
        fields[1].set4(0, 0, 4, c, 1.0);
    }
    fields.push(Tensor::from_fn(vec![2, 1, 10, 7], |_| rng.random_range(0.0..1.0)));
    for e in &fields {
        match coordination_target(e, &cfg) {
            Ok(r) => {
                let dilated = oracle::pool(e, true, cfg.dilation_kernel, 1, Padding::Replicate);
                let want = oracle::pool(&dilated, false, cfg.smoothing_kernel, 1, Padding::Replicate);
                worst = worst.max(max_abs_diff(&r, &want));
            }
            Err(e) => {
                out.push(failed(G, "coordination target", e));
                worst = f64::INFINITY;
            }
        }
    }
    let pyramid = coordination_target(&fields[0], &cfg).map(|r| {
        // Separable: rows of the dilated 5x5 square inside each 5-row window, times columns.
        let mut err = 0.0f64;
        for y in 0..13usize {
            for x in 0..13usize {
                let f = |d: usize| (5.0 - d as f64).max(0.0);
                let want = f(y.abs_diff(6)) * f(x.abs_diff(6)) / 25.0;
                err = err.max((r.at4(0, 0, y, x) - want).abs());
            }
        }
        err
    });
    out.push(exact(G, "coordination target matches two-stage pooling", worst, "max then average, replicate borders"));
    out.push(match pyramid {
        Ok(err) => within(G, "coordination target of a single pixel", err, 1e-15, "9x9 pyramid"),
        Err(e) => failed(G, "coordination target of a single pixel", e),
    });

    let mut single = Tensor::<f64>::zeros(vec![1, 1, 7, 8]);
    single.set4(0, 0, 3, 5, 1.0);
    out.push(match boundary_from_mask(&single) {
        Ok(e) => {
            let mut err = 0.0f64;
            for y in 0..7usize {
                for x in 0..8usize {
                    let mut any_fg = false;
                    let mut any_bg = false;
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let sy = oracle::pad_index(y as isize + dy, 7, Padding::Replicate).unwrap();
                            let sx = oracle::pad_index(x as isize + dx, 8, Padding::Replicate).unwrap();
                            if single.at4(0, 0, sy, sx) > 0.5 {
                                any_fg = true;
                            } else {
                                any_bg = true;
                            }
                        }
                    }
                    let want = if any_fg && any_bg { 1.0 } else { 0.0 };
                    err = err.max((e.at4(0, 0, y, x) - want).abs());
                }
            }
            exact(G, "boundary of a single pixel", err, "neighbourhood scan")
        }
        Err(e) => failed(G, "boundary of a single pixel", e),
    });

    let r_star = Tensor::<f64>::from_fn(vec![1, 1, 6, 6], |i| [0.0, 1.0, 0.3, 0.75, 0.5, 0.1][i % 6]);
    let logits = r_star.map(|r| (r.ln() - (1.0 - r).ln()).clamp(-20.0, 20.0));
    let entropy: f64 = r_star
        .data()
        .iter()
        .zip(logits.data())
        .map(|(&r, &a)| bce_logit(a, r))
        .sum::<f64>()
        / 36.0;
    let soft_floor: f64 = r_star
        .data()
        .iter()
        .map(|&r| {
            let h = |v: f64| if v > 0.0 { -v * v.ln() } else { 0.0 };
            h(r) + h(1.0 - r)
        })
        .sum::<f64>()
        / 36.0;
    let got = scalar_graph_value(|g| {
        let a = g.leaf(logits.clone(), true);
        scm_loss(g, a, &r_star)
    });
    out.push(match got {
        Ok(v) => within(
            G,
            "coordination loss at logit(R*) is the entropy floor",
            (v - entropy).abs().max((v - soft_floor).abs()),
            1e-6,
            format!("{v:.9} vs {soft_floor:.9}"),
        ),
        Err(e) => failed(G, "coordination loss at logit(R*) is the entropy floor", e),
    });

    out.push(total_loss_linearity(seed).unwrap_or_else(|e| failed(G, "total loss linearity", e)));

    let defaults = RunConfig::from_toml(&RunConfig::default().to_toml().unwrap_or_default())
        .map(|c| c.loss_weights());
    out.push(match defaults {
        Ok(w) => {
            let ok = (w.final_w, w.coarse, w.low, w.boundary, w.coordination) == (4.0, 0.25, 0.25, 1.0, 1.0);
            CheckResult::new(G, "loss weight defaults survive a config round trip", ok, 1, 0.0, format!("{w:?}"))
        }
        Err(e) => failed(G, "loss weight defaults survive a config round trip", e),
    });
    out
}

/// With unit weights the total equals the sum of independently computed terms, and scaling
/// every weight scales the total.
fn total_loss_linearity(seed: u64) -> Result<CheckResult> {
    let (net, store, image) = randomized_tiny(seed)?;
    let (_, mask) = super::gradcheck::tiny_batch(seed)?;
    let sup = SupervisionConfig::default();
    let ones = LossWeights {
        final_w: 1.0,
        coarse: 1.0,
        low: 1.0,
        boundary: 1.0,
        coordination: 1.0,
    };
    let mut s = Session::new(&store, true);
    let x = s.input(image);
    let f = net.forward(&mut s, x)?;
    let (_, _, h, w) = s.graph.value(f.base).dims4()?;
    let t = SupervisionTargets::new(mask, h, w, &sup)?;
    let total = total_loss(&mut s.graph, &f, &t, &ones, &sup)?.values(&s.graph).total;
    let g = &mut s.graph;
    let parts = [
        structure_loss(g, f.final_logits, &t.mask, &sup)?,
        structure_loss(g, f.coarse_logits.expect("coarse"), &t.mask, &sup)?,
        structure_loss(g, f.low_logits, &t.mask_s, &sup)?,
        boundary_loss(g, f.boundary_logits().expect("boundary"), &t.boundary_s, &sup)?,
        scm_loss(g, f.coordination_logits().expect("coordination"), &t.r_star)?,
    ];
    let sum: f64 = parts.iter().map(|&v| g.value(v).item()).sum();
    let doubled = LossWeights {
        final_w: 8.0,
        coarse: 0.5,
        low: 0.5,
        boundary: 2.0,
        coordination: 2.0,
    };
    let base = total_loss(g, &f, &t, &LossWeights::default(), &sup)?.values(g).total;
    let twice = total_loss(g, &f, &t, &doubled, &sup)?.values(g).total;
    let err = (total - sum).abs().max((twice - 2.0 * base).abs());
    Ok(within("supervision", "total loss linearity", err, 1e-12, format!("sum of terms {sum:.9}")))
}

/// Schedule, AdamW, clipping, and EMA arithmetic.
pub fn optimizer_arithmetic() -> Vec<CheckResult> {
    const G: &str = "optimizer";
    let mut out = Vec::new();
    let ends = (cosine_lr(0, 200, 1e-4, 1e-6), cosine_lr(200, 200, 1e-4, 1e-6));
    out.push(match ends {
        (Ok(a), Ok(b)) => {
            let ok = a == 1e-4 && b == 1e-6;
            CheckResult::new(G, "cosine schedule endpoints", ok, 2, (a - 1e-4).abs().max((b - 1e-6).abs()), format!("{a:e} -> {b:e}"))
        }
        (Err(e), _) | (_, Err(e)) => failed(G, "cosine schedule endpoints", e),
    });

    let cfg = AdamWConfig::default();
    let grads = [0.3, -1.2, 0.05, 2.0, -0.7, 0.0, 1e-3, -4.0, 0.9, 0.1];
    let lrs: Vec<f64> = (0..10).map(|t| cosine_lr(t, 10, 1e-2, 1e-4).unwrap_or(f64::NAN)).collect();
    let run = (|| -> Result<f64> {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::from_vec(vec![1], vec![0.8])?);
        let mut state = AdamState::new();
        for (&g, &lr) in grads.iter().zip(&lrs) {
            let mut gm = BTreeMap::new();
            gm.insert("p".to_string(), Tensor::from_vec(vec![1], vec![g])?);
            adamw_step(&mut store, &gm, &mut state, lr, &cfg)?;
        }
        let want = oracle::adamw_scalar(0.8, &grads, &lrs, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
        Ok((store.get("p")?.data()[0] - want).abs())
    })();
    out.push(match run {
        Ok(err) => within(G, "scalar AdamW against a hand oracle over 10 steps", err, 1e-12, ""),
        Err(e) => failed(G, "scalar AdamW against a hand oracle over 10 steps", e),
    });

    let run = (|| -> Result<(f64, f64)> {
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), Tensor::<f64>::from_vec(vec![1], vec![3.0])?);
        grads.insert("b".to_string(), Tensor::from_vec(vec![1], vec![4.0])?);
        let before = clip_global_norm(&mut grads, 1.0);
        let scale = grads["a"].data()[0] / 3.0;
        Ok((global_norm(&grads), (before - 5.0).abs().max((scale - 0.2).abs())))
    })();
    out.push(match run {
        Ok((post, err)) => CheckResult::new(
            G,
            "global norm clipping",
            post <= 1.0 + 1e-6 && err < 1e-12,
            1,
            err,
            format!("post-clip norm {post}"),
        ),
        Err(e) => failed(G, "global norm clipping", e),
    });

    let run = (|| -> Result<f64> {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::from_vec(vec![1], vec![1.0])?);
        let mut shadow = BTreeMap::new();
        shadow.insert("p".to_string(), Tensor::from_vec(vec![1], vec![0.0])?);
        for _ in 0..3 {
            crate::optim::ema_update(&mut shadow, &store, 0.999)?;
        }
        Ok((shadow["p"].data()[0] - (1.0 - 0.999f64.powi(3))).abs())
    })();
    out.push(match run {
        Ok(err) => within(G, "EMA three-step value", err, 1e-12, "1 - 0.999^3"),
        Err(e) => failed(G, "EMA three-step value", e),
    });
    out
}

fn t4(data: &[f32]) -> Tensor<f32> {
    Tensor::from_vec(vec![1, 1, 4, 4], data.to_vec()).expect("16 values")
}

/// Precision and recall at every threshold by enumerating pixels of every image.
fn enumerated_curve(images: &[(Tensor<f32>, Tensor<f32>)]) -> Vec<(f64, f64)> {
    (0..THRESHOLDS)
        .map(|k| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (p, m) in images {
                let (a, b, c) = oracle::confusion(p.data(), m.data(), threshold(k));
                tp += a;
                fp += b;
                fn_ += c;
            }
            let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
            (precision, recall)
        })
        .collect()
}

/// MAE, PR curve, and maxF against direct counting.
pub fn metric_oracles(seed: u64) -> Vec<CheckResult> {
    const G: &str = "metrics";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mask = t4(&[0., 0., 1., 1., 0., 1., 1., 1., 0., 0., 1., 0., 0., 0., 0., 0.]);
    let zero = t4(&[0.0; 16]);
    out.push(match mae(&zero, &mask) {
        Ok(v) => within(G, "MAE of an all-zero prediction is the foreground fraction", (v - 6.0 / 16.0).abs(), 1e-15, ""),
        Err(e) => failed(G, "MAE of an all-zero prediction is the foreground fraction", e),
    });

    let pred: Tensor<f32> = Tensor::from_fn(vec![1, 1, 9, 7], |_| rng.random_range(0.0..1.0));
    let m: Tensor<f32> = Tensor::from_fn(vec![1, 1, 9, 7], |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
    let direct: f64 = pred.data().iter().zip(m.data()).map(|(&p, &q)| (p as f64 - q as f64).abs()).sum::<f64>() / 63.0;
    out.push(match mae(&pred, &m) {
        Ok(v) => within(G, "MAE against a loop oracle", (v - direct).abs(), 1e-9, ""),
        Err(e) => failed(G, "MAE against a loop oracle", e),
    });

    let images = [
        (
            t4(&[0.1, 0.9, 0.8, 0.7, 0.2, 0.6, 1.0, 0.95, 0.0, 0.3, 0.5, 0.45, 0.05, 0.2, 0.15, 0.7]),
            mask.clone(),
        ),
        (
            t4(&[1.0, 0.0, 0.5, 0.25, 0.75, 0.5, 0.0, 1.0, 0.2, 0.8, 0.4, 0.6, 0.33, 0.66, 0.99, 0.01]),
            t4(&[1., 0., 1., 0., 1., 1., 0., 1., 0., 1., 0., 1., 0., 1., 1., 0.]),
        ),
    ];
    let run = (|| -> Result<(f64, bool, f64)> {
        let records: Vec<EvalRecord> = images.iter().map(|(p, m)| EvalRecord::new(p, m)).collect::<Result<_>>()?;
        let curve = pr_curve(&records, Averaging::Micro)?;
        let want = enumerated_curve(&images);
        let err = curve
            .iter()
            .zip(&want)
            .map(|(c, &(p, r))| (c.precision - p).abs().max((c.recall - r).abs()))
            .fold(0.0, f64::max);
        let reversed: Vec<EvalRecord> = records.iter().rev().cloned().collect();
        let order_free = pr_curve(&reversed, Averaging::Micro)? == curve;
        let best = want.iter().map(|&(p, r)| f_measure(p, r, DEFAULT_BETA_SQ)).fold(0.0, f64::max);
        let err_f = (max_f(&records, DEFAULT_BETA_SQ, Averaging::Micro)? - best).abs();
        Ok((err, order_free, err_f))
    })();
    match run {
        Ok((err, order_free, err_f)) => {
            out.push(exact(G, "PR curve against exhaustive enumeration", err, "two hand-built 4x4 images"));
            out.push(CheckResult::new(G, "PR curve is invariant to record order", order_free, 1, 0.0, String::new()));
            out.push(exact(G, "maxF against enumerated curve", err_f, ""));
        }
        Err(e) => out.push(failed(G, "PR curve against exhaustive enumeration", e)),
    }

    let run = (|| -> Result<(f64, f64)> {
        let rec = EvalRecord::new(&images[0].0, &images[0].1)?;
        let curve = pr_curve(std::slice::from_ref(&rec), Averaging::Micro)?;
        let perfect = EvalRecord::new(&mask, &mask)?;
        Ok((curve[0].recall, max_f(&[perfect], DEFAULT_BETA_SQ, Averaging::Micro)?))
    })();
    match run {
        Ok((recall0, f_perfect)) => {
            out.push(exact(G, "recall is 1 at threshold 0", (recall0 - 1.0).abs(), ""));
            out.push(exact(G, "maxF is 1 on a perfect prediction", (f_perfect - 1.0).abs(), ""));
        }
        Err(e) => out.push(failed(G, "recall is 1 at threshold 0", e)),
    }
    out.push(within(
        G,
        "F-measure hand value",
        (f_measure(0.8, 0.5, 0.3) - 1.3 * 0.4 / 0.74).abs(),
        1e-15,
        format!("{:.4}", f_measure(0.8, 0.5, 0.3)),
    ));
    out
}
