//! Central finite differences against the tape's analytic gradients, in 64-bit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::CheckResult;
use crate::autodiff::Var;
use crate::data::{generate_scene, Difficulty, SynthConfig};
use crate::error::Result;
use crate::kernels::conv::ConvSpec;
use crate::kernels::norm::NormKind;
use crate::kernels::pool::{PoolKind, PoolSpec};
use crate::kernels::Padding;
use crate::model::decoder::{CoarseHead, LowHead, Refiner};
use crate::model::specialization::{laplacian, BoundaryBranch, Coordinator, RegionBranch};
use crate::model::{BranchMode, CoordinationMode, DecoderMode, DssNet, ModelConfig};
use crate::nn::{ParamStore, Session};
use crate::supervision::{total_loss, LossWeights, SupervisionConfig, SupervisionTargets};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
const FLOOR: f64 = 1e-8;
pub const PROBES_PER_FAMILY: usize = 20;
/// Steps tried in order until the stencil stays clear of every ReLU, abs, and max-pool switch.
const STEPS: [f64; 4] = [STEP, 1e-5, 1e-6, 1e-7];

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn normal(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal) * std)
}

/// Values bounded away from zero, so kinks at 0 stay out of reach of the probe step.
fn off_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values at least 0.01 apart, so a max never changes hands under the probe step.
fn distinct(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    Tensor::from_vec(shape, ranks.into_iter().map(|r| r as f64 * 0.01 - 0.5).collect()).expect("length matches")
}

fn unit(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

fn binary(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
}

/// Builds the checked computation from differentiable input leaves.
type Build<'a> = dyn Fn(&mut Session<f64>, &[Var]) -> Result<Var> + 'a;

#[derive(Clone, Debug)]
enum Site {
    Param(String),
    Input(usize),
}

/// Projected scalar output and the activation signature of the tape that produced it.
fn forward(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    train: bool,
    build: &Build,
    proj: &Tensor<f64>,
) -> Result<(f64, u64)> {
    let mut s = Session::new(store, train);
    let vars: Vec<Var> = inputs.iter().map(|t| s.graph.leaf(t.clone(), true)).collect();
    let out = build(&mut s, &vars)?;
    let value = s.graph.value(out).data().iter().zip(proj.data()).map(|(a, b)| a * b).sum();
    Ok((value, s.graph.activation_signature()))
}

/// One site per group first, then the rest uniformly over all elements.
fn pick_sites(rng: &mut ChaCha8Rng, groups: &[(Site, usize)], n: usize) -> Vec<(Site, usize)> {
    let mut sites = Vec::with_capacity(n.max(groups.len()));
    if n >= groups.len() {
        for (site, len) in groups {
            sites.push((site.clone(), rng.random_range(0..*len)));
        }
    }
    let total: usize = groups.iter().map(|g| g.1).sum();
    while sites.len() < n {
        let mut k = rng.random_range(0..total);
        for (site, len) in groups {
            if k < *len {
                sites.push((site.clone(), k));
                break;
            }
            k -= len;
        }
    }
    sites
}

/// Compares analytic and numeric derivatives of a random projection of `build`'s output at
/// `probes` sites spread over every parameter of `store` and every input.
fn check(
    name: &str,
    rng: &mut ChaCha8Rng,
    store: &ParamStore<f64>,
    inputs: Vec<Tensor<f64>>,
    train: bool,
    probes: usize,
    build: &Build,
) -> CheckResult {
    match run(rng, store, inputs, train, probes, build) {
        Ok((count, worst, at)) => CheckResult::new(
            "gradient",
            name,
            worst < TOLERANCE,
            count,
            worst,
            format!("worst at {at}"),
        ),
        Err(e) => CheckResult::new("gradient", name, false, 0, f64::NAN, e.to_string()),
    }
}

fn run(
    rng: &mut ChaCha8Rng,
    store: &ParamStore<f64>,
    inputs: Vec<Tensor<f64>>,
    train: bool,
    probes: usize,
    build: &Build,
) -> Result<(usize, f64, String)> {
    let mut s = Session::new(store, train);
    let vars: Vec<Var> = inputs.iter().map(|t| s.graph.leaf(t.clone(), true)).collect();
    let out = build(&mut s, &vars)?;
    let shape = s.graph.shape(out).to_vec();
    let proj = if shape.iter().product::<usize>() == 1 {
        Tensor::ones(shape)
    } else {
        normal(rng, shape, 1.0)
    };
    let r = s.graph.constant(proj.clone());
    let prod = s.graph.mul(out, r)?;
    let loss = s.graph.sum(prod)?;
    s.graph.backward(loss)?;
    let param_grads = s.param_grads();
    let input_grads: Vec<Option<Tensor<f64>>> = vars.iter().map(|&v| s.graph.grad(v).cloned()).collect();
    let signature = s.graph.activation_signature();
    drop(s);

    let mut groups: Vec<(Site, usize)> = store.params().map(|(n, t)| (Site::Param(n.clone()), t.len())).collect();
    groups.extend(inputs.iter().enumerate().map(|(i, t)| (Site::Input(i), t.len())));
    let sites = pick_sites(rng, &groups, probes);

    let (mut worst, mut worst_at, mut shrunk, mut smallest) = (0.0f64, String::new(), 0usize, STEP);
    for (site, first) in &sites {
        let eval = |k: usize, delta: f64| -> Result<(f64, u64)> {
            match site {
                Site::Param(n) => {
                    let mut st = store.clone();
                    st.get_mut(n)?.data_mut()[k] += delta;
                    forward(&st, &inputs, train, build, &proj)
                }
                Site::Input(i) => {
                    let mut xs = inputs.clone();
                    xs[*i].data_mut()[k] += delta;
                    forward(store, &xs, train, build, &proj)
                }
            }
        };
        // A stencil whose ends fall on different smooth pieces measures no derivative, so the
        // step shrinks until both ends share the activation pattern of the unperturbed tape.
        let k = *first;
        let mut chosen = None;
        for &h in &STEPS {
            let (plus, sp) = eval(k, h)?;
            let (minus, sm) = eval(k, -h)?;
            if sp == signature && sm == signature {
                chosen = Some((plus, minus, h));
                break;
            }
        }
        let (plus, minus, h) = match chosen {
            Some(c) => c,
            None => (eval(k, STEP)?.0, eval(k, -STEP)?.0, STEP),
        };
        if h < STEP {
            shrunk += 1;
            smallest = smallest.min(h);
        }
        let analytic = match site {
            Site::Param(n) => param_grads.get(n).map_or(0.0, |g| g.data()[k]),
            Site::Input(i) => input_grads[*i].as_ref().map_or(0.0, |g| g.data()[k]),
        };
        let numeric = (plus - minus) / (2.0 * h);
        let err = rel_error(analytic, numeric);
        if err > worst || worst_at.is_empty() {
            worst = worst.max(err);
            let label = match site {
                Site::Param(n) => n.clone(),
                Site::Input(i) => format!("input {i}"),
            };
            worst_at = format!("{label}[{k}] analytic {analytic:.6e} numeric {numeric:.6e}");
        }
    }
    if shrunk > 0 {
        worst_at.push_str(&format!("; {shrunk} probes straddled an activation switch, smallest step {smallest:e}"));
    }
    Ok((sites.len(), worst, worst_at))
}

fn conv_store(rng: &mut ChaCha8Rng, w: Vec<usize>, bias: bool) -> ParamStore<f64> {
    let mut st = ParamStore::new();
    let cout = w[0];
    st.insert("w", normal(rng, w, 0.5));
    if bias {
        st.insert("b", normal(rng, vec![cout], 0.5));
    }
    st
}

fn conv_family(
    name: &str,
    rng: &mut ChaCha8Rng,
    x: Vec<usize>,
    w: Vec<usize>,
    bias: bool,
    spec: ConvSpec,
) -> CheckResult {
    let store = conv_store(rng, w, bias);
    let x = normal(rng, x, 1.0);
    check(name, rng, &store, vec![x], false, PROBES_PER_FAMILY, &move |s, v| {
        let w = s.param("w")?;
        let b = if bias { Some(s.param("b")?) } else { None };
        s.graph.conv2d(v[0], w, b, spec)
    })
}

fn unary_family(name: &str, rng: &mut ChaCha8Rng, x: Tensor<f64>, f: &Build) -> CheckResult {
    check(name, rng, &ParamStore::new(), vec![x], false, PROBES_PER_FAMILY, f)
}

/// Every primitive differentiable operation.
pub fn operation_checks(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let none = ParamStore::<f64>::new();
    let p = PROBES_PER_FAMILY;
    let mut out = vec![
        conv_family("conv2d 3x3 reflect", rng, vec![2, 3, 5, 5], vec![4, 3, 3, 3], true, ConvSpec::same(Padding::Reflect)),
        conv_family("conv2d 3x3 zero stride 2", rng, vec![2, 3, 6, 7], vec![4, 3, 3, 3], true, ConvSpec::same(Padding::Zero).with_stride(2)),
        conv_family("conv2d 3x3 replicate groups 2", rng, vec![1, 4, 5, 5], vec![6, 2, 3, 3], true, ConvSpec::same(Padding::Replicate).with_groups(2)),
        conv_family("conv2d 1x1 pointwise", rng, vec![2, 5, 4, 4], vec![3, 5, 1, 1], true, ConvSpec::default()),
        conv_family("conv2d 7x7 zero", rng, vec![1, 2, 8, 8], vec![2, 2, 7, 7], false, ConvSpec::same(Padding::Zero)),
        conv_family("conv2d depthwise 1x5 replicate", rng, vec![2, 3, 6, 7], vec![3, 1, 1, 5], false, ConvSpec::same(Padding::Replicate).with_groups(3)),
        conv_family("conv2d depthwise 5x1 replicate", rng, vec![2, 3, 7, 6], vec![3, 1, 5, 1], false, ConvSpec::same(Padding::Replicate).with_groups(3)),
        conv_family("conv2d depthwise 3x3 reflect", rng, vec![1, 4, 5, 6], vec![4, 1, 3, 3], false, ConvSpec::same(Padding::Reflect).with_groups(4)),
    ];
    let x = normal(rng, vec![2, 3, 5, 5], 1.0);
    out.push(unary_family("laplacian", rng, x, &|s, v| laplacian(&mut s.graph, v[0])));

    let x = normal(rng, vec![2, 2, 3, 4], 1.0);
    out.push(unary_family("resize bilinear up", rng, x, &|s, v| s.graph.resize_bilinear(v[0], 7, 9)));
    let x = normal(rng, vec![1, 2, 9, 8], 1.0);
    out.push(unary_family("resize bilinear down", rng, x, &|s, v| s.graph.resize_bilinear(v[0], 4, 3)));

    for (kind, k, stride, pad) in [
        (PoolKind::Max, 3, 1, Padding::Zero),
        (PoolKind::Max, 5, 2, Padding::Replicate),
        (PoolKind::Avg, 3, 2, Padding::Zero),
        (PoolKind::Avg, 5, 1, Padding::Replicate),
    ] {
        let x = distinct(rng, vec![2, 2, 6, 7]);
        let spec = PoolSpec {
            kind,
            kernel: k,
            stride,
            padding: pad,
        };
        let name = format!("pool {kind:?} {k}x{k} stride {stride} {pad:?}").to_lowercase();
        out.push(unary_family(&name, rng, x, &move |s, v| s.graph.pool2d(v[0], spec)));
    }

    for (name, kind, c, running) in [
        ("batch norm batch statistics", NormKind::Batch, 4, false),
        ("batch norm running statistics", NormKind::Batch, 4, true),
        ("group norm 4 groups", NormKind::Group(4), 8, false),
    ] {
        let mut store = ParamStore::new();
        store.insert("scale", normal(rng, vec![c], 0.5).map(|v| v + 1.0));
        store.insert("shift", normal(rng, vec![c], 0.5));
        let mean: Vec<f64> = normal(rng, vec![c], 0.3).into_data();
        let var: Vec<f64> = unit(rng, vec![c]).map(|v| v + 0.5).into_data();
        let x = normal(rng, vec![3, c, 3, 3], 1.0);
        out.push(check(name, rng, &store, vec![x], false, p, &move |s, v| {
            let scale = s.param("scale")?;
            let shift = s.param("shift")?;
            let stats = running.then_some((mean.as_slice(), var.as_slice()));
            Ok(s.graph.normalize(v[0], scale, shift, kind, 1e-5, stats)?.0)
        }));
    }

    let pair = |rng: &mut ChaCha8Rng| vec![normal(rng, vec![2, 3, 4, 4], 1.0), normal(rng, vec![2, 1, 4, 4], 1.0)];
    let ins = pair(rng);
    out.push(check("add channel broadcast", rng, &none, ins, false, p, &|s, v| s.graph.add(v[0], v[1])));
    let ins = pair(rng);
    out.push(check("sub channel broadcast", rng, &none, ins, false, p, &|s, v| s.graph.sub(v[0], v[1])));
    let ins = pair(rng);
    out.push(check("mul channel broadcast", rng, &none, ins, false, p, &|s, v| s.graph.mul(v[1], v[0])));
    let ins = vec![normal(rng, vec![1, 3, 4, 4], 1.0), normal(rng, vec![1, 1, 1, 1], 1.0)];
    out.push(check("add scalar broadcast", rng, &none, ins, false, p, &|s, v| s.graph.add(v[0], v[1])));

    let x = off_zero(rng, vec![2, 3, 4, 4]);
    out.push(unary_family("abs", rng, x, &|s, v| s.graph.abs(v[0])));
    let x = off_zero(rng, vec![2, 3, 4, 4]);
    out.push(unary_family("relu", rng, x, &|s, v| s.graph.relu(v[0])));
    let x = normal(rng, vec![2, 3, 4, 4], 2.0);
    out.push(unary_family("sigmoid", rng, x, &|s, v| s.graph.sigmoid(v[0])));
    let x = normal(rng, vec![2, 3, 4, 4], 1.0);
    out.push(unary_family("affine", rng, x, &|s, v| s.graph.affine(v[0], -1.7, 0.3)));
    let x = normal(rng, vec![2, 3, 4, 4], 1.0);
    out.push(unary_family("scale", rng, x, &|s, v| s.graph.scale(v[0], 2.5)));
    let x = normal(rng, vec![2, 3, 4, 4], 1.0);
    out.push(unary_family("one minus", rng, x, &|s, v| s.graph.one_minus(v[0])));
    let x = normal(rng, vec![2, 5, 3, 4], 1.0);
    out.push(unary_family("channel mean", rng, x, &|s, v| s.graph.channel_mean(v[0])));
    let x = normal(rng, vec![2, 3, 4, 4], 1.0);
    out.push(unary_family("sum", rng, x, &|s, v| s.graph.sum(v[0])));
    let x = normal(rng, vec![2, 3, 4, 4], 1.0);
    out.push(unary_family("mean", rng, x, &|s, v| s.graph.mean(v[0])));

    let ins = vec![
        normal(rng, vec![2, 2, 3, 3], 1.0),
        normal(rng, vec![2, 1, 3, 3], 1.0),
        normal(rng, vec![2, 3, 3, 3], 1.0),
    ];
    out.push(check("concat", rng, &none, ins, false, p, &|s, v| s.graph.concat(&[v[0], v[1], v[2]])));
    let ins = vec![normal(rng, vec![1], 1.0), normal(rng, vec![1], 1.0), normal(rng, vec![1], 1.0)];
    out.push(check("combine", rng, &none, ins, false, p, &|s, v| {
        s.graph.combine(&[(v[0], 4.0), (v[1], 0.25), (v[2], -1.5)])
    }));

    let target = binary(rng, vec![2, 1, 5, 5]);
    let weight = unit(rng, vec![2, 1, 5, 5]).map(|v| 1.0 + 5.0 * v);
    let x = normal(rng, vec![2, 1, 5, 5], 2.0);
    let (t, w) = (target.clone(), weight.clone());
    out.push(unary_family("bce with logits weighted", rng, x, &move |s, v| {
        s.graph.bce_with_logits(v[0], &t, Some(&w))
    }));
    let x = normal(rng, vec![2, 1, 5, 5], 2.0);
    let (t, w) = (target.clone(), weight.clone());
    out.push(unary_family("weighted iou", rng, x, &move |s, v| s.graph.weighted_iou(v[0], &t, Some(&w))));
    let x = normal(rng, vec![2, 1, 5, 5], 2.0);
    let t = unit(rng, vec![2, 1, 5, 5]);
    out.push(unary_family("dice", rng, x, &move |s, v| s.graph.dice(v[0], &t, 1.0)));
    out
}

/// Branches, coordination strategies, and decoder heads with random weights.
pub fn module_checks(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let c = 4;
    let p = 2 * PROBES_PER_FAMILY;
    let base_shape = vec![2, c, 6, 6];
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let bs = BoundaryBranch::new(&mut store, seed, c, true);
    let x = normal(rng, base_shape.clone(), 1.0);
    out.push(check("boundary branch features", rng, &store, vec![x.clone()], true, p, &|s, v| {
        Ok(bs.forward(s, v[0])?.features)
    }));
    out.push(check("boundary branch probability", rng, &store, vec![x], true, p, &|s, v| {
        Ok(bs.forward(s, v[0])?.prob)
    }));

    let mut store = ParamStore::new();
    let rc = RegionBranch::new(&mut store, seed, c, [3, 5]);
    let x = normal(rng, base_shape.clone(), 1.0);
    out.push(check("region branch", rng, &store, vec![x], true, p, &|s, v| Ok(rc.forward(s, v[0])?.output)));

    for mode in [
        CoordinationMode::Spatial,
        CoordinationMode::GlobalScalar,
        CoordinationMode::ConcatConv,
        CoordinationMode::FixedAverage,
    ] {
        let mut store = ParamStore::new();
        let bs = BoundaryBranch::new(&mut store, seed, c, true);
        let coord = Coordinator::new(&mut store, seed, mode, c, 3);
        if mode == CoordinationMode::GlobalScalar {
            *store.get_mut("scm.global_logit").expect("registered") = normal(rng, vec![1, 1, 1, 1], 1.0);
        }
        let ins = vec![normal(rng, base_shape.clone(), 1.0), normal(rng, base_shape.clone(), 1.0)];
        let name = format!("coordination {mode:?}").to_lowercase();
        out.push(check(&name, rng, &store, ins, true, p, &|s, v| {
            let b = bs.forward(s, v[0])?;
            Ok(coord.forward(s, v[0], &b, v[1])?.blended)
        }));
    }

    let mut store = ParamStore::new();
    let low = LowHead::new(&mut store, seed, c);
    let coarse = CoarseHead::new(&mut store, seed, c);
    let refiner = Refiner::new(&mut store, seed, c, 3, 4);
    perturb_zero_params(&mut store, rng);
    let fd = normal(rng, vec![2, c, 4, 4], 1.0);
    out.push(check("low head", rng, &store, vec![fd.clone()], true, p, &|s, v| low.forward(s, v[0])));
    out.push(check("coarse head", rng, &store, vec![fd.clone()], true, p, &|s, v| {
        let l = low.forward(s, v[0])?;
        coarse.forward(s, v[0], l, (16, 16))
    }));
    let ins = vec![fd, unit(rng, vec![2, 3, 16, 16]), normal(rng, vec![2, c, 8, 8], 1.0)];
    out.push(check("refiner", rng, &store, ins, true, p, &|s, v| {
        let l = low.forward(s, v[0])?;
        let sc = coarse.forward(s, v[0], l, (16, 16))?;
        refiner.forward(s, v[1], sc, v[2])
    }));
    out
}

/// Two tiny synthetic scenes at 32x32 with their masks, in 64-bit.
pub fn tiny_batch(seed: u64) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let scenes = (0..2)
        .map(|i| generate_scene(seed + i, 32, 32, Difficulty::Easy, &SynthConfig::default()))
        .collect::<Result<Vec<_>>>()?;
    let images: Vec<Tensor<f64>> = scenes.iter().map(|s| s.sample.image.cast()).collect();
    let masks: Vec<Tensor<f64>> = scenes.iter().map(|s| s.sample.mask.cast()).collect();
    let cat = |ts: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        let (_, c, h, w) = ts[0].dims4()?;
        let data = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
        Tensor::from_vec(vec![ts.len(), c, h, w], data)
    };
    Ok((cat(&images)?, cat(&masks)?))
}

/// Replaces all-zero tensors (biases, zero-initialized heads) with small random values, so every
/// parameter carries signal.
fn perturb_zero_params(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for (_, t) in store.params_mut() {
        if t.data().iter().all(|&v| v == 0.0) {
            for v in t.data_mut() {
                *v = rng.sample::<f64, _>(StandardNormal) * 0.1;
            }
        }
    }
}

/// Total loss of the tiny network on a 32x32 batch, probing every parameter tensor.
pub fn model_checks(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let (image, mask) = match tiny_batch(seed) {
        Ok(b) => b,
        Err(e) => return vec![CheckResult::new("gradient", "tiny model", false, 0, f64::NAN, e.to_string())],
    };
    let sup = SupervisionConfig::default();
    let weights = LossWeights::default();
    let variants: Vec<(&str, ModelConfig, usize)> = {
        let full = ModelConfig::tiny();
        let with = |f: &dyn Fn(&mut ModelConfig)| {
            let mut c = full.clone();
            f(&mut c);
            c
        };
        vec![
            ("tiny model full", full.clone(), 0),
            ("tiny model global scalar", with(&|c| c.coordination = CoordinationMode::GlobalScalar), PROBES_PER_FAMILY),
            ("tiny model concat conv", with(&|c| c.coordination = CoordinationMode::ConcatConv), PROBES_PER_FAMILY),
            ("tiny model boundary only low-res", with(&|c| {
                c.branches = BranchMode::Boundary;
                c.decoder = DecoderMode::LowRes;
            }), PROBES_PER_FAMILY),
            ("tiny model region only coarse", with(&|c| {
                c.branches = BranchMode::Region;
                c.decoder = DecoderMode::Coarse;
            }), PROBES_PER_FAMILY),
        ]
    };
    variants
        .into_iter()
        .map(|(name, cfg, probes)| {
            let (net, mut store) = match DssNet::new(cfg, seed) {
                Ok(built) => built,
                Err(e) => return CheckResult::new("gradient", name, false, 0, f64::NAN, e.to_string()),
            };
            perturb_zero_params(&mut store, rng);
            // Probe count 0 means one site per parameter tensor plus the family minimum.
            let probes = if probes == 0 {
                store.params().count() + PROBES_PER_FAMILY
            } else {
                probes
            };
            let mask = mask.clone();
            check(name, rng, &store, vec![image.clone()], true, probes, &move |s, v| {
                let f = net.forward(s, v[0])?;
                let (_, _, h, w) = s.graph.value(f.base).dims4()?;
                let targets = SupervisionTargets::new(mask.clone(), h, w, &sup)?;
                Ok(total_loss(&mut s.graph, &f, &targets, &weights, &sup)?.total)
            })
        })
        .collect()
}
