use advasr_tensor::gradcheck::{check_op, check_store};
use advasr_tensor::{Conv2dSpec, Graph, ParamStore, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 10;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so kinked ops are probed off their kinks.
fn rand_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn check_all_seeds(
    name: &str,
    inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> advasr_tensor::Result<Var> + Copy,
) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = inputs(&mut rng);
        let err = check_op(build, &xs, H, seed).unwrap();
        assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn elementwise_binary_ops_with_broadcasting() {
    let shapes = |r: &mut ChaCha8Rng| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[4])];
    check_all_seeds("add", shapes, |g, v| g.add(v[0], v[1]));
    check_all_seeds("sub", shapes, |g, v| g.sub(v[0], v[1]));
    check_all_seeds("mul", shapes, |g, v| g.mul(v[0], v[1]));
    check_all_seeds(
        "mul-middle-broadcast",
        |r| vec![rand_tensor(r, &[2, 3, 4]), rand_tensor(r, &[2, 1, 4])],
        |g, v| g.mul(v[0], v[1]),
    );
    check_all_seeds(
        "div",
        |r| vec![rand_tensor(r, &[3, 4]), rand_off_zero(r, &[3, 1])],
        |g, v| g.div(v[0], v[1]),
    );
    check_all_seeds(
        "maximum",
        |r| vec![rand_tensor(r, &[5]), rand_tensor(r, &[5])],
        |g, v| g.maximum(v[0], v[1]),
    );
}

#[test]
fn elementwise_unary_ops() {
    let x = |r: &mut ChaCha8Rng| vec![rand_tensor(r, &[2, 5])];
    check_all_seeds("sigmoid", x, |g, v| g.sigmoid(v[0]));
    check_all_seeds("tanh", x, |g, v| g.tanh(v[0]));
    check_all_seeds("exp", x, |g, v| g.exp(v[0]));
    check_all_seeds("square", x, |g, v| g.square(v[0]));
    check_all_seeds("scale", x, |g, v| g.scale(v[0], -2.5));
    check_all_seeds("add_scalar", x, |g, v| g.add_scalar(v[0], 0.3));
    let off = |r: &mut ChaCha8Rng| vec![rand_off_zero(r, &[2, 5])];
    check_all_seeds("abs", off, |g, v| g.abs(v[0]));
    check_all_seeds("leaky_relu", off, |g, v| g.leaky_relu(v[0], 0.2));
    check_all_seeds(
        "log",
        |r| {
            let t = rand_tensor(r, &[2, 5]);
            vec![t.map(|v| v.abs() + 0.5)]
        },
        |g, v| g.log(v[0]),
    );
}

#[test]
fn normalizations_and_reductions() {
    let x = |r: &mut ChaCha8Rng| vec![rand_tensor(r, &[3, 6])];
    check_all_seeds("softmax", x, |g, v| g.softmax(v[0]));
    check_all_seeds("log_softmax", x, |g, v| g.log_softmax(v[0]));
    check_all_seeds("sum", x, |g, v| g.sum(v[0]));
    check_all_seeds(
        "sum_axis",
        |r| vec![rand_tensor(r, &[2, 3, 4])],
        |g, v| g.sum_axis(v[0], 1),
    );
    check_all_seeds(
        "mean_axis",
        |r| vec![rand_tensor(r, &[2, 3, 4])],
        |g, v| g.mean_axis(v[0], 2),
    );
}

#[test]
fn linear_algebra_ops() {
    check_all_seeds(
        "matmul",
        |r| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[4, 2])],
        |g, v| g.matmul(v[0], v[1]),
    );
    check_all_seeds(
        "bmm",
        |r| vec![rand_tensor(r, &[2, 3, 4]), rand_tensor(r, &[2, 4, 5])],
        |g, v| g.bmm(v[0], v[1]),
    );
}

#[test]
fn shape_ops() {
    let x = |r: &mut ChaCha8Rng| vec![rand_tensor(r, &[2, 3, 4])];
    check_all_seeds("reshape", x, |g, v| g.reshape(v[0], &[6, 4]));
    check_all_seeds("permute", x, |g, v| g.permute(v[0], &[2, 0, 1]));
    check_all_seeds("transpose", x, |g, v| g.transpose(v[0]));
    check_all_seeds("slice", x, |g, v| g.slice(v[0], 2, 1, 3));
    check_all_seeds("slice_step", x, |g, v| g.slice_step(v[0], 2, 0, 4, 2));
    check_all_seeds("select", x, |g, v| g.select(v[0], 1, 2));
    check_all_seeds(
        "concat",
        |r| vec![rand_tensor(r, &[2, 3, 4]), rand_tensor(r, &[2, 1, 4])],
        |g, v| g.concat(&[v[0], v[1]], 1),
    );
    check_all_seeds(
        "stack",
        |r| vec![rand_tensor(r, &[3, 2]), rand_tensor(r, &[3, 2])],
        |g, v| g.stack(&[v[0], v[1]]),
    );
}

#[test]
fn conv2d_gradients() {
    check_all_seeds(
        "conv2d-strided",
        |r| vec![rand_tensor(r, &[2, 2, 9, 5]), rand_tensor(r, &[3, 2, 3, 2])],
        |g, v| g.conv2d(v[0], v[1], Conv2dSpec::valid((2, 1))),
    );
    check_all_seeds(
        "conv2d-padded",
        |r| vec![rand_tensor(r, &[1, 2, 6, 4]), rand_tensor(r, &[2, 2, 3, 3])],
        |g, v| {
            g.conv2d(
                v[0],
                v[1],
                Conv2dSpec {
                    stride: (1, 1),
                    pad_h: (0, 0),
                    pad_w: (1, 1),
                },
            )
        },
    );
}

#[test]
fn batch_norm_gradients() {
    let inputs = |r: &mut ChaCha8Rng| {
        vec![
            rand_tensor(r, &[4, 3, 2]),
            rand_tensor(r, &[3]).map(|v| v + 1.5),
            rand_tensor(r, &[3]),
        ]
    };
    check_all_seeds("batch_norm_train", inputs, |g, v| {
        g.batch_norm_train(v[0], v[1], v[2], 1, 1e-5).map(|(y, _)| y)
    });
    check_all_seeds("batch_norm_eval", inputs, |g, v| {
        g.batch_norm_eval(v[0], v[1], v[2], 1, &[0.1, -0.2, 0.3], &[1.0, 0.5, 2.0], 1e-5)
    });
}

#[test]
fn lookup_gradients() {
    check_all_seeds(
        "embedding",
        |r| vec![rand_tensor(r, &[5, 3])],
        |g, v| g.embedding(v[0], &[4, 0, 4, 2]),
    );
    check_all_seeds(
        "pick",
        |r| vec![rand_tensor(r, &[3, 4])],
        |g, v| g.pick(v[0], &[3, 0, 1]),
    );
}

#[test]
fn quadratic_loss_gradient() {
    let mut store = ParamStore::<f64>::new();
    let p = store.add("p", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
    let mut g = Graph::new();
    let pv = g.param(&store, p);
    let sq = g.square(pv).unwrap();
    let loss = g.sum(sq).unwrap();
    let grads = g.backward(loss).unwrap();
    store.accumulate(&grads).unwrap();
    assert_eq!(store.get(p).grad.as_ref().unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn constant_loss_gives_zero_grads() {
    let mut store = ParamStore::<f32>::new();
    let p = store.add("p", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
    let mut g = Graph::new();
    let c = g.constant(Tensor::scalar(3.0));
    let grads = g.backward(c).unwrap();
    store.accumulate(&grads).unwrap();
    assert_eq!(store.get(p).grad.as_ref().unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn backward_errors() {
    let mut g = Graph::<f32>::new();
    let x = g.variable(Tensor::from_vec(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
    let mut g = Graph::<f32>::new();
    let x = g.variable(Tensor::from_vec(vec![1.0, 2.0]));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(TensorError::BackwardTwice)));
}

#[test]
fn shared_parameter_accumulates_every_use() {
    // loss = sum_k (w * x_k) for k uses: d/dw = sum_k x_k
    for k in 1..=5 {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::scalar(0.7)).unwrap();
        let mut g = Graph::new();
        let mut terms = Vec::new();
        for i in 0..k {
            let wv = g.param(&store, w);
            let x = g.constant(Tensor::scalar(i as f64 + 1.0));
            terms.push(g.mul(wv, x).unwrap());
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = g.add(acc, t).unwrap();
        }
        let grads = g.backward(acc).unwrap();
        store.accumulate(&grads).unwrap();
        let expected: f64 = (1..=k).map(|i| i as f64).sum();
        assert_eq!(store.get(w).grad.as_ref().unwrap().data(), &[expected]);
    }
}

#[test]
fn non_finite_outputs_are_flagged() {
    let mut g = Graph::<f32>::new();
    g.set_check_finite(true);
    let x = g.constant(Tensor::from_vec(vec![0.0]));
    assert!(matches!(g.log(x), Err(TensorError::NonFinite { op: "log" })));
}

/// Minimal GRU built from graph primitives: 2 stacked layers.
struct ToyGru {
    layers: Vec<[advasr_tensor::ParamId; 3]>,
    hidden: usize,
}

impl ToyGru {
    fn new(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        let mut layers = Vec::new();
        let mut d = input;
        for l in 0..2 {
            let wx = store.add(format!("l{l}.wx"), rand_tensor(rng, &[d, 3 * hidden])).unwrap();
            let wh = store.add(format!("l{l}.wh"), rand_tensor(rng, &[hidden, 3 * hidden])).unwrap();
            let b = store.add(format!("l{l}.b"), rand_tensor(rng, &[3 * hidden])).unwrap();
            layers.push([wx, wh, b]);
            d = hidden;
        }
        Self { layers, hidden }
    }

    fn loss(&self, g: &mut Graph<f64>, store: &ParamStore<f64>, xs: &[Tensor<f64>]) -> advasr_tensor::Result<Var> {
        let hd = self.hidden;
        let mut seq: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        for [wx, wh, b] in &self.layers {
            let (wx, wh, b) = (g.param(store, *wx), g.param(store, *wh), g.param(store, *b));
            let batch = g.shape(seq[0])[0];
            let mut h = g.constant(Tensor::zeros(&[batch, hd]));
            let mut out = Vec::new();
            for &x in &seq {
                let gx = g.matmul(x, wx)?;
                let gx = g.add(gx, b)?;
                let gh = g.matmul(h, wh)?;
                let rz_x = g.slice(gx, 1, 0, 2 * hd)?;
                let rz_h = g.slice(gh, 1, 0, 2 * hd)?;
                let rz = g.add(rz_x, rz_h)?;
                let rz = g.sigmoid(rz)?;
                let r = g.slice(rz, 1, 0, hd)?;
                let z = g.slice(rz, 1, hd, 2 * hd)?;
                let n_x = g.slice(gx, 1, 2 * hd, 3 * hd)?;
                let n_h = g.slice(gh, 1, 2 * hd, 3 * hd)?;
                let rn = g.mul(r, n_h)?;
                let n = g.add(n_x, rn)?;
                let n = g.tanh(n)?;
                let diff = g.sub(h, n)?;
                let zd = g.mul(z, diff)?;
                h = g.add(n, zd)?;
                out.push(h);
            }
            seq = out;
        }
        let last = *seq.last().unwrap();
        let sq = g.square(last)?;
        g.sum(sq)
    }
}

#[test]
fn two_layer_gru_matches_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut store = ParamStore::new();
        let gru = ToyGru::new(&mut store, &mut rng, 3, 4);
        let xs: Vec<_> = (0..5).map(|_| rand_tensor(&mut rng, &[2, 3])).collect();
        let report = check_store(&store, |g, s| gru.loss(g, s, &xs), H, usize::MAX).unwrap();
        for (name, err) in report {
            assert!(err < TOL, "seed {seed} {name}: {err:e}");
        }
    }
}
