//! The finite-difference gradient suite: every tape operator, every
//! search-space operator, every loss, SSIM and the relaxed network.

use std::rc::Rc;

use manas::gradcheck::{central_differences, check, relative_error};
use manas::losses::{self, ArchTerms};
use manas::metrics::{gaussian_window, ssim_var};
use manas::search_space::{AttentionModule, AttentionOp, AttentionOpKind, Fusion, ParamBuilder, Parallel, SiteWeights, Transition};
use manas::{ArchParams, DerainNetwork, Graph, Mode, NetworkConfig, ParamStore, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-6;

pub fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(dims, |_| rng.random_range(lo..hi))
}

/// Entries bounded away from zero, for kinked operators.
fn off_zero(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    Tensor::from_fn(dims, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `Σ x ⊙ r` for a fixed random `r`: a scalar whose gradient is `r`.
fn probe(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = uniform(&mut rng, tape.dims(x), -1.0, 1.0);
    let r = tape.constant(r);
    let p = tape.mul(x, r);
    tape.sum(p)
}

fn probe_all(tape: &mut Tape, xs: &[Var]) -> Var {
    let parts: Vec<Var> = xs.iter().enumerate().map(|(i, &x)| probe(tape, x, 1000 + i as u64)).collect();
    tape.add_all(&parts)
}

pub struct Case {
    pub name: String,
    pub error: f64,
}

fn worst(name: &str, errors: Vec<f64>) -> Case {
    Case { name: name.to_owned(), error: errors.into_iter().fold(0.0, f64::max) }
}

fn op_cases(rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    type F = fn(&mut Tape, &[Var]) -> Result<Var>;
    let x = |rng: &mut ChaCha8Rng| uniform(rng, &[2, 5, 6], -1.0, 1.0);
    let mut cases = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor>, f: F| -> Result<()> {
        cases.push(worst(name, check(&inputs, STEP, f)?));
        Ok(())
    };
    let w33 = uniform(rng, &[3, 2, 3, 3], -0.5, 0.5);
    let bias = uniform(rng, &[3], -0.5, 0.5);
    run("conv2d 3x3", vec![x(rng), w33.clone(), bias.clone()], |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1, 1);
        Ok(probe(t, y, 1))
    })?;
    run("conv2d stride 2", vec![x(rng), w33, bias], |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1, 1);
        Ok(probe(t, y, 2))
    })?;
    run("conv2d depthwise", vec![x(rng), uniform(rng, &[2, 1, 3, 3], -0.5, 0.5)], |t, v| {
        let y = t.conv2d(v[0], v[1], None, 1, 1, 2);
        Ok(probe(t, y, 3))
    })?;
    run("conv2d 1x1", vec![x(rng), uniform(rng, &[4, 2, 1, 1], -0.5, 0.5)], |t, v| {
        let y = t.conv2d(v[0], v[1], None, 1, 0, 1);
        Ok(probe(t, y, 4))
    })?;
    run("add", vec![x(rng), x(rng)], |t, v| {
        let y = t.add(v[0], v[1]);
        Ok(probe(t, y, 5))
    })?;
    run("sub", vec![x(rng), x(rng)], |t, v| {
        let y = t.sub(v[0], v[1]);
        Ok(probe(t, y, 6))
    })?;
    run("mul", vec![x(rng), x(rng)], |t, v| {
        let y = t.mul(v[0], v[1]);
        Ok(probe(t, y, 7))
    })?;
    run("div", vec![x(rng), uniform(rng, &[2, 5, 6], 0.5, 1.5)], |t, v| {
        let y = t.div(v[0], v[1]);
        Ok(probe(t, y, 8))
    })?;
    run("add_all", vec![x(rng), x(rng), x(rng)], |t, v| {
        let y = t.add_all(v);
        Ok(probe(t, y, 9))
    })?;
    run("scale", vec![x(rng), uniform(rng, &[1], -1.0, 1.0)], |t, v| {
        let y = t.scale(v[0], v[1]);
        Ok(probe(t, y, 10))
    })?;
    run("mul_const and add_const", vec![x(rng)], |t, v| {
        let y = t.mul_const(v[0], -1.7);
        let y = t.add_const(y, 0.3);
        let y = t.mul(y, y);
        Ok(probe(t, y, 11))
    })?;
    run("channel_gate", vec![x(rng), uniform(rng, &[2, 1, 1], -1.0, 1.0)], |t, v| {
        let y = t.channel_gate(v[0], v[1]);
        Ok(probe(t, y, 12))
    })?;
    run("spatial_gate", vec![x(rng), uniform(rng, &[1, 5, 6], -1.0, 1.0)], |t, v| {
        let y = t.spatial_gate(v[0], v[1]);
        Ok(probe(t, y, 13))
    })?;
    run("relu", vec![off_zero(rng, &[2, 5, 6])], |t, v| {
        let y = t.relu(v[0]);
        Ok(probe(t, y, 14))
    })?;
    run("sigmoid", vec![uniform(rng, &[2, 5, 6], -3.0, 3.0)], |t, v| {
        let y = t.sigmoid(v[0]);
        Ok(probe(t, y, 15))
    })?;
    run("ln", vec![uniform(rng, &[2, 5, 6], 0.2, 2.0)], |t, v| {
        let y = t.ln(v[0]);
        Ok(probe(t, y, 16))
    })?;
    run("clamp", vec![off_zero(rng, &[2, 5, 6]).map(|v| v * 0.8 + 0.1)], |t, v| {
        let y = t.clamp(v[0], 0.0, 0.5);
        Ok(probe(t, y, 17))
    })?;
    run("global_avg_pool", vec![x(rng)], |t, v| {
        let y = t.global_avg_pool(v[0]);
        Ok(probe(t, y, 18))
    })?;
    run("global_max_pool", vec![x(rng)], |t, v| {
        let y = t.global_max_pool(v[0]);
        Ok(probe(t, y, 19))
    })?;
    run("channel_mean_pool", vec![x(rng)], |t, v| {
        let y = t.channel_mean_pool(v[0]);
        Ok(probe(t, y, 20))
    })?;
    run("channel_max_pool", vec![x(rng)], |t, v| {
        let y = t.channel_max_pool(v[0]);
        Ok(probe(t, y, 21))
    })?;
    run("concat and slice_channels", vec![x(rng), uniform(rng, &[3, 5, 6], -1.0, 1.0)], |t, v| {
        let c = t.concat(&[v[0], v[1]]);
        let s = t.slice_channels(c, 1, 3);
        Ok(probe(t, s, 22))
    })?;
    run("resize up", vec![uniform(rng, &[2, 4, 3], -1.0, 1.0)], |t, v| {
        let y = t.resize(v[0], 8, 6);
        Ok(probe(t, y, 23))
    })?;
    run("resize down", vec![uniform(rng, &[2, 8, 6], -1.0, 1.0)], |t, v| {
        let y = t.resize(v[0], 4, 3);
        Ok(probe(t, y, 24))
    })?;
    run("softmax and index", vec![uniform(rng, &[7], -2.0, 2.0)], |t, v| {
        let p = t.softmax(v[0]);
        let a = t.index(p, 2);
        let b = t.index(p, 5);
        let ab = t.mul(a, b);
        let q = probe(t, p, 25);
        Ok(t.add(ab, q))
    })?;
    run("sum and mean", vec![x(rng)], |t, v| {
        let s = t.sum(v[0]);
        let m = t.mean(v[0]);
        let m = t.mul(m, m);
        Ok(t.add(s, m))
    })?;
    run("mse", vec![x(rng), x(rng)], |t, v| Ok(t.mse(v[0], v[1])))?;
    run("filter1d", vec![uniform(rng, &[2, 7, 8], -1.0, 1.0)], |t, v| {
        let k = Rc::new(gaussian_window(5, 1.5));
        let h = t.filter1d(v[0], k.clone(), false);
        let y = t.filter1d(h, k, true);
        Ok(probe(t, y, 26))
    })?;
    Ok(cases)
}

/// Gradient of a graph function with respect to its inputs and to (a sample
/// of) the parameters in `store`.
fn check_graph<F>(name: &str, store: &ParamStore, inputs: &[Tensor], max_params: usize, f: F) -> Result<Case>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |s: &ParamStore, xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(s, false);
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.value(root).item())
    };
    let mut g = Graph::new(store, true);
    let vars: Vec<Var> = inputs.iter().map(|x| g.tape.var(x.clone())).collect();
    let root = f(&mut g, &vars)?;
    let grads = g.tape.backward(root);
    let param_grads = g.param_grads(&grads);
    let mut errors = Vec::new();
    for (k, (x, v)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = grads.get_or_zeros(*v, x).into_data();
        let coords: Vec<usize> = (0..x.numel()).collect();
        let numeric = central_differences(|xs| eval(store, xs), inputs, k, &coords, STEP)?;
        errors.push(relative_error(&analytic, &numeric));
    }

    // Flat parameter coordinates, strided down to at most `max_params`.
    let flat: Vec<(usize, usize)> =
        store.values().iter().enumerate().flat_map(|(p, t)| (0..t.numel()).map(move |i| (p, i))).collect();
    let stride = flat.len().div_ceil(max_params.max(1)).max(1);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut s = store.clone();
    for &(p, i) in flat.iter().step_by(stride) {
        analytic.push(param_grads[p].data()[i]);
        let x0 = s.values()[p].data()[i];
        s.values_mut()[p].data_mut()[i] = x0 + STEP;
        let plus = eval(&s, inputs)?;
        s.values_mut()[p].data_mut()[i] = x0 - STEP;
        let minus = eval(&s, inputs)?;
        s.values_mut()[p].data_mut()[i] = x0;
        numeric.push((plus - minus) / (2.0 * STEP));
    }
    errors.push(relative_error(&analytic, &numeric));
    Ok(worst(name, errors))
}

/// Replace every parameter by random values so no branch starts at zero.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in store.values_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

const C: usize = 4;

fn pyramid(rng: &mut ChaCha8Rng, scales: usize) -> Vec<Tensor> {
    (0..scales).map(|d| uniform(rng, &[C, 8 >> d, 8 >> d], 0.0, 1.0)).collect()
}

fn module_cases(rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let mut cases = Vec::new();

    let mut store = ParamStore::new();
    let tr = Transition::new(&mut ParamBuilder::new(&mut store, 1), C, 1);
    randomize(&mut store, 11, 0.4);
    cases.push(check_graph("transition", &store, &pyramid(rng, 1), 400, |g, v| {
        let out = tr.forward(g, v)?;
        Ok(probe_all(&mut g.tape, &out))
    })?);

    for scales in [1, 2] {
        let mut store = ParamStore::new();
        let par = Parallel::new(&mut ParamBuilder::new(&mut store, 2), C, scales);
        randomize(&mut store, 12, 0.4);
        cases.push(check_graph(&format!("parallel ({scales} scales)"), &store, &pyramid(rng, scales), 400, |g, v| {
            let out = par.forward(g, v)?;
            Ok(probe_all(&mut g.tape, &out))
        })?);

        let mut store = ParamStore::new();
        let fus = Fusion::new(&mut ParamBuilder::new(&mut store, 3), C, scales);
        randomize(&mut store, 13, 0.4);
        cases.push(check_graph(&format!("fusion ({scales} scales)"), &store, &pyramid(rng, scales), 400, |g, v| {
            let out = fus.forward(g, v)?;
            Ok(probe_all(&mut g.tape, &out))
        })?);
    }

    for kind in AttentionOpKind::ALL {
        let mut store = ParamStore::new();
        let op = AttentionOp::new(&mut ParamBuilder::new(&mut store, 4), kind, C / 2);
        randomize(&mut store, 14, 0.6);
        let z = uniform(rng, &[C / 2, 8, 8], -1.0, 1.0);
        cases.push(check_graph(&format!("attention op {}", kind.name()), &store, &[z], 400, |g, v| {
            let y = op.forward(g, v[0])?;
            Ok(probe(&mut g.tape, y, 30))
        })?);
    }

    // Mixed attention with random site weights, gradients also flowing into
    // the weights themselves.
    let mut store = ParamStore::new();
    let att = AttentionModule::full(&mut ParamBuilder::new(&mut store, 5), C, 2);
    randomize(&mut store, 15, 0.4);
    let mut inputs = pyramid(rng, 2);
    for _ in 0..3 {
        inputs.push(uniform(rng, &[7], -1.0, 1.0));
    }
    cases.push(check_graph("attention module (mixed)", &store, &inputs, 400, |g, v| {
        let sites: [SiteWeights; 3] = std::array::from_fn(|s| {
            let p = g.tape.softmax(v[2 + s]);
            SiteWeights::Mixed(std::array::from_fn(|k| g.tape.index(p, k)))
        });
        let out = att.forward(g, &v[..2], &sites)?;
        Ok(probe_all(&mut g.tape, &out))
    })?);
    Ok(cases)
}

fn image(rng: &mut ChaCha8Rng, side: usize) -> Tensor {
    uniform(rng, &[3, side, side], 0.0, 1.0)
}

/// Gradient with respect to architecture logits of a function of the bound
/// architecture, checked against re-binding perturbed logits.
fn check_logits<F>(name: &str, arch: &ArchParams, cfg: &NetworkConfig, f: F) -> Result<Case>
where
    F: Fn(&mut Tape, &manas::ArchVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let av = arch.bind(&mut tape, true);
    let root = f(&mut tape, &av)?;
    let grads = tape.backward(root);
    let analytic = av.logit_grads(&tape, &grads);
    let shared = arch.shared_attention_choice();
    let logits = Tensor::from_vec(&[arch.logits().len()], arch.logits().to_vec());
    let coords: Vec<usize> = (0..logits.numel()).collect();
    let numeric = central_differences(
        |xs| {
            let a = ArchParams::from_logits(cfg, shared, xs[0].data().to_vec())?;
            let mut t = Tape::new();
            let av = a.bind(&mut t, false);
            let r = f(&mut t, &av)?;
            Ok(t.value(r).item())
        },
        &[logits],
        0,
        &coords,
        STEP,
    )?;
    Ok(worst(name, vec![relative_error(&analytic, &numeric)]))
}

pub fn random_arch(rng: &mut ChaCha8Rng, cfg: &NetworkConfig, shared: bool) -> ArchParams {
    let n = ArchParams::new(cfg, shared).logits().len();
    ArchParams::from_logits(cfg, shared, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("finite logits")
}

fn loss_cases(rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let mut cases = Vec::new();
    let outs: Vec<Tensor> = (0..3).map(|_| image(rng, 16)).collect();
    let gt = image(rng, 16);

    let mut inputs = outs.clone();
    inputs.push(gt.clone());
    cases.push(worst(
        "ssim",
        check(&[outs[0].clone(), gt.clone()], STEP, |t, v| {
            let s = ssim_var(t, v[0], v[1])?;
            let one = t.constant(Tensor::scalar(1.0));
            Ok(t.sub(one, s))
        })?,
    ));
    cases.push(worst(
        "external loss",
        check(&inputs, STEP, |t, v| losses::external_loss_var(t, &v[..3], v[3]))?,
    ));
    cases.push(worst("internal loss", check(&outs, STEP, |t, v| losses::internal_loss_var(t, v))?));
    cases.push(worst(
        "trainA",
        check(&inputs, STEP, |t, v| Ok(losses::objective(t, &v[..3], v[3], true, None)?.train_a))?,
    ));

    let cfg = NetworkConfig::new(1, C, 8, 8);
    let net = DerainNetwork::instantiate(cfg, Mode::Relaxed, None, 3)?;
    for shared in [false, true] {
        let table = net.complexity_table(shared)?;
        let arch = random_arch(rng, &cfg, shared);
        let tag = if shared { " (shared attention choice)" } else { "" };
        cases.push(check_logits(&format!("arch regulariser{tag}"), &arch, &cfg, |t, av| Ok(losses::arch_reg_var(t, av)))?);
        cases.push(check_logits(&format!("complexity loss{tag}"), &arch, &cfg, |t, av| {
            losses::complexity_var(t, av, &table)
        })?);
        let (o, g) = (outs.clone(), gt.clone());
        cases.push(check_logits(&format!("trainB{tag}"), &arch, &cfg, |t, av| {
            let ov: Vec<Var> = o.iter().map(|x| t.constant(x.clone())).collect();
            let gv = t.constant(g.clone());
            let terms = ArchTerms { arch: av, table: &table, lambda_arch: 0.7, lambda_comp: 3.0 };
            Ok(losses::objective(t, &ov, gv, true, Some(terms))?.train_b)
        })?);
    }
    let arch = random_arch(rng, &cfg, false);
    let table = net.complexity_table(false)?;
    cases.push(worst(
        "trainB w.r.t. outputs",
        check(&inputs, STEP, |t, v| {
            let av = arch.bind(t, false);
            let terms = ArchTerms { arch: &av, table: &table, lambda_arch: 0.7, lambda_comp: 3.0 };
            Ok(losses::objective(t, &v[..3], v[3], true, Some(terms))?.train_b)
        })?,
    ));
    Ok(cases)
}

/// Relaxed forward of a random T=1, C=4 supernet: `Σ output` with respect to
/// ω (sampled), μ and ν, and `trainB` of three forwards with respect to ω.
fn network_cases(rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let mut cases = Vec::new();
    let cfg = NetworkConfig::new(1, C, 8, 8);
    let mut net = DerainNetwork::instantiate(cfg, Mode::Relaxed, None, 5)?;
    randomize(&mut net.params, 21, 0.3);
    let arch = random_arch(rng, &cfg, false);
    let x = image(rng, 8);

    let forward_sum = |g: &mut Graph, x: Var, av: &manas::ArchVars| -> Result<Var> {
        let y = net.relaxed_graph(g, x, av)?;
        Ok(g.tape.sum(y))
    };
    cases.push(check_graph("relaxed forward w.r.t. input and ω", &net.params, std::slice::from_ref(&x), 300, |g, v| {
        let av = arch.bind(&mut g.tape, false);
        forward_sum(g, v[0], &av)
    })?);

    // μ and ν: bind the logits on the graph's own tape.
    let mut g = Graph::new(&net.params, false);
    let av = arch.bind(&mut g.tape, true);
    let xv = g.constant(x.clone());
    let root = forward_sum(&mut g, xv, &av)?;
    let grads = g.tape.backward(root);
    let analytic = av.logit_grads(&g.tape, &grads);
    let logits = Tensor::from_vec(&[arch.logits().len()], arch.logits().to_vec());
    let coords: Vec<usize> = (0..logits.numel()).collect();
    let numeric = central_differences(
        |xs| {
            let a = ArchParams::from_logits(&cfg, false, xs[0].data().to_vec())?;
            Ok(net.forward_relaxed(&x, &a)?.sum())
        },
        &[logits],
        0,
        &coords,
        STEP,
    )?;
    cases.push(worst("relaxed forward w.r.t. μ and ν", vec![relative_error(&analytic, &numeric)]));

    let rainy: Vec<Tensor> = (0..3).map(|_| image(rng, 16)).collect();
    let gt = image(rng, 16);
    let cfg16 = NetworkConfig::new(1, C, 16, 16);
    let mut net16 = DerainNetwork::instantiate(cfg16, Mode::Relaxed, None, 6)?;
    randomize(&mut net16.params, 22, 0.3);
    let table = net16.complexity_table(false)?;
    let arch16 = random_arch(rng, &cfg16, false);
    cases.push(check_graph("trainB through the network w.r.t. ω", &net16.params, &[], 200, |g, _| {
        let av = arch16.bind(&mut g.tape, false);
        let outs = rainy
            .iter()
            .map(|r| {
                let x = g.constant(r.clone());
                net16.relaxed_graph(g, x, &av)
            })
            .collect::<Result<Vec<_>>>()?;
        let gv = g.constant(gt.clone());
        let terms = ArchTerms { arch: &av, table: &table, lambda_arch: 0.01, lambda_comp: 1.0 };
        Ok(losses::objective(&mut g.tape, &outs, gv, true, Some(terms))?.train_b)
    })?);
    Ok(cases)
}

/// Every case of the suite with its relative error.
pub fn suite(seed: u64) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = op_cases(&mut rng)?;
    cases.extend(module_cases(&mut rng)?);
    cases.extend(loss_cases(&mut rng)?);
    cases.extend(network_cases(&mut rng)?);
    Ok(cases)
}
