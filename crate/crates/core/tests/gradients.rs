//! Finite-difference checks of every differentiable primitive and of the
//! joint loss with respect to model parameters.

use mtad_gat::network::{forward_batch, joint_loss, ModelConfig, ModelParams, PARAM_NAMES};
use mtad_gat::tensor::{grad_check, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn check<F>(name: &str, f: F, x: &Tensor)
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let err = grad_check(f, x, H).unwrap();
    assert!(err < TOL, "{name}: relative error {err:e}");
}

#[test]
fn elementwise_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[3, 4], &mut rng, -2.0, 2.0);
    let other = random(&[3, 4], &mut rng, -2.0, 2.0);
    let positive = random(&[3, 4], &mut rng, 0.2, 2.0);

    let o = other.clone();
    check("add", move |t, v| {
        let c = t.constant(o.clone());
        t.add(v, c)
    }, &x);
    let o = other.clone();
    check("sub", move |t, v| {
        let c = t.constant(o.clone());
        t.sub(c, v)
    }, &x);
    let o = other.clone();
    check("mul", move |t, v| {
        let c = t.constant(o.clone());
        t.mul(v, c)
    }, &x);
    let p = positive.clone();
    check("div numerator", move |t, v| {
        let c = t.constant(p.clone());
        t.div(v, c)
    }, &x);
    let o = other.clone();
    check("div denominator", move |t, v| {
        let c = t.constant(o.clone());
        t.div(c, v)
    }, &positive);
    check("mul shared operand", |t, v| t.mul(v, v), &x);
    check("scalar broadcast", |t, v| {
        let s = t.constant(Tensor::scalar(1.7));
        t.mul(v, s)
    }, &x);
    check("sigmoid", |t, v| t.sigmoid(v), &x);
    check("tanh", |t, v| t.tanh(v), &x);
    check("exp", |t, v| t.exp(v), &x);
    check("log", |t, v| t.log(v), &positive);
    check("sqrt", |t, v| t.sqrt(v), &positive);
    check("square", |t, v| t.square(v), &x);
    check("leaky_relu", |t, v| t.leaky_relu(v, 0.2), &x);
    check("clamp_min", |t, v| t.clamp_min(v, 0.3), &x);
    check("scale", |t, v| t.scale(v, -0.7), &x);
    check("add_scalar", |t, v| t.add_scalar(v, 0.4), &x);
}

#[test]
fn sigmoid_at_zero_is_tight() {
    let err = grad_check(|t, v| t.sigmoid(v), &Tensor::scalar(0.0), 1e-5).unwrap();
    assert!(err < 1e-8, "{err:e}");
}

#[test]
fn constant_function_has_zero_error() {
    let err = grad_check(|t, _| Ok(t.constant(Tensor::scalar(3.0))), &Tensor::from_vec(vec![1.0, 2.0]), H).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn linear_algebra_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&[3, 4], &mut rng, -2.0, 2.0);
    let b = random(&[4, 5], &mut rng, -2.0, 2.0);
    let bias = random(&[5], &mut rng, -2.0, 2.0);
    let bc = b.clone();
    check("matmul left", move |t, v| {
        let c = t.constant(bc.clone());
        t.matmul(v, c)
    }, &a);
    let ac = a.clone();
    check("matmul right", move |t, v| {
        let c = t.constant(ac.clone());
        t.matmul(c, v)
    }, &b);
    let ac = a.clone();
    check("add_bias", move |t, v| {
        let x = t.constant(ac.clone());
        let w = t.constant(b.clone());
        let y = t.matmul(x, w)?;
        t.add_bias(y, v)
    }, &bias);

    let ba = random(&[2, 3, 4], &mut rng, -2.0, 2.0);
    let bb = random(&[2, 4, 3], &mut rng, -2.0, 2.0);
    let bbc = bb.clone();
    check("bmm left", move |t, v| {
        let c = t.constant(bbc.clone());
        t.bmm(v, c)
    }, &ba);
    check("bmm right", move |t, v| {
        let c = t.constant(ba.clone());
        t.bmm(c, v)
    }, &bb);
    check("softmax", |t, v| t.softmax(v), &random(&[3, 7], &mut rng, -2.0, 2.0));
}

#[test]
fn softmax_of_linear_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random(&[4, 6], &mut rng, -1.0, 1.0);
    let x = random(&[2, 4], &mut rng, -2.0, 2.0);
    check("softmax(linear)", move |t, v| {
        let c = t.constant(w.clone());
        let y = t.matmul(v, c)?;
        t.softmax(y)
    }, &x);
}

#[test]
fn convolution_and_shape_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[2, 10, 3], &mut rng, -2.0, 2.0);
    let kernel = random(&[7, 3, 2], &mut rng, -1.0, 1.0);
    let bias = random(&[2], &mut rng, -1.0, 1.0);
    let (k1, b1) = (kernel.clone(), bias.clone());
    check("conv1d input", move |t, v| {
        let k = t.constant(k1.clone());
        let b = t.constant(b1.clone());
        t.conv1d(v, k, b)
    }, &x);
    let (x1, b1) = (x.clone(), bias.clone());
    check("conv1d kernel", move |t, v| {
        let xi = t.constant(x1.clone());
        let b = t.constant(b1.clone());
        t.conv1d(xi, v, b)
    }, &kernel);
    let x1 = x.clone();
    check("conv1d bias", move |t, v| {
        let xi = t.constant(x1.clone());
        let k = t.constant(kernel.clone());
        t.conv1d(xi, k, v)
    }, &bias);

    check("transpose", |t, v| {
        let y = t.transpose(v)?;
        t.sigmoid(y)
    }, &x);
    check("reshape", |t, v| {
        let y = t.reshape(v, &[6, 10])?;
        t.tanh(y)
    }, &x);
    check("concat", |t, v| {
        let s = t.sigmoid(v)?;
        t.concat(&[v, s, v])
    }, &x);
    check("narrow", |t, v| t.narrow(v, 1, 2), &x);
    check("select_step", |t, v| t.select_step(v, 4), &x);
    let pa = random(&[2, 5], &mut rng, -2.0, 2.0);
    check("pairwise_add", |t, v| {
        let s = t.square(v)?;
        t.pairwise_add(v, s)
    }, &pa);
    check("sum", |t, v| t.sum(v), &x);
    check("mean", |t, v| t.mean(v), &x);
    check("sum_per_batch", |t, v| t.sum_per_batch(v), &x);
}

#[test]
fn fused_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b, n, d) = (2, 5, 3);
    let proj: Vec<Tensor> = (0..3).map(|_| random(&[b, n, d], &mut rng, -1.5, 1.5)).collect();
    let rec: Vec<Tensor> = (0..3).map(|_| random(&[d, d], &mut rng, -1.0, 1.0)).collect();
    for slot in 0..6 {
        let (p, r) = (proj.clone(), rec.clone());
        let f = move |t: &mut Tape, v: Var| {
            let mut vars: Vec<Var> = p.iter().chain(&r).map(|x| t.constant(x.clone())).collect();
            vars[slot] = v;
            t.gru_scan([vars[0], vars[1], vars[2]], [vars[3], vars[4], vars[5]])
        };
        let x = if slot < 3 { &proj[slot] } else { &rec[slot - 3] };
        check(&format!("gru_scan operand {slot}"), f, x);
    }
}

#[test]
fn joint_loss_wrt_twenty_parameters() {
    let cfg = ModelConfig {
        window: 10,
        features: 3,
        gru_hidden: 8,
        forecast_hidden: 6,
        latent: 4,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = ModelParams::init(&cfg, &mut rng);
    let x = random(&[2, 10, 3], &mut rng, 0.0, 1.0);
    let y = random(&[2, 3], &mut rng, 0.0, 1.0);
    let eps = random(&[2, 4], &mut rng, -1.0, 1.0);

    let loss_of = |p: &ModelParams, grad: bool| {
        let mut tape = Tape::new();
        let vars = p.register(&mut tape, grad);
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let out = forward_batch(&mut tape, &vars, xv, &cfg, &eps).unwrap();
        let per = joint_loss(&mut tape, &out, xv, yv).unwrap();
        let loss = tape.mean(per).unwrap();
        (tape, vars, loss)
    };

    let (mut tape, vars, loss) = loss_of(&params, true);
    tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let ti = rng.random_range(0..PARAM_NAMES.len());
        let len = params.tensors()[ti].len();
        let j = rng.random_range(0..len);
        let analytic = tape.grad(vars.all[ti]).unwrap().data()[j];
        let eval = |delta: f64| {
            let mut p = params.clone();
            p.tensors_mut()[ti].data_mut()[j] += delta;
            let (t, _, l) = loss_of(&p, false);
            t.value(l).item()
        };
        let numeric = (eval(H) - eval(-H)) / (2.0 * H);
        let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
        assert!(err < 1e-3, "{}[{j}]: analytic {analytic}, numeric {numeric}", PARAM_NAMES[ti]);
        worst = worst.max(err);
    }
    assert!(worst < 1e-3);
}
