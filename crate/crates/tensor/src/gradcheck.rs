//! Central finite-difference checks for 64-bit graphs.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::ParamStore;
use crate::tensor::Tensor;

/// Norms below this are treated as zero when forming relative errors.
pub const NORM_FLOOR: f64 = 1e-6;

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, NORM_FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nn).max(NORM_FLOOR)
}

/// Central difference `(f(x+h) − f(x−h)) / 2h` for each listed coordinate.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64, coords: &[usize]) -> Vec<f64> {
    let mut x = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Fixed pseudo-random weights in [-1, 1) (splitmix64), used to reduce a
/// tensor output to a scalar without symmetric cancellation.
pub fn projection(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

fn project_to_scalar(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let r = Tensor::new(shape, projection(g.value(out).numel(), seed))?;
    let r = g.constant(r);
    let p = g.mul(out, r)?;
    g.sum(p)
}

/// Compare analytic and numeric gradients of `sum(R ⊙ build(inputs))` with
/// respect to every input. Returns the worst relative error.
pub fn check_op(
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<f64>],
    h: f64,
    seed: u64,
) -> Result<f64> {
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let l = project_to_scalar(&mut g, out, seed)?;
        g.value(l).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let l = project_to_scalar(&mut g, out, seed)?;
    let grads = g.backward(l)?;

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[k])
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let coords: Vec<usize> = (0..input.numel()).collect();
        let numeric = numeric_gradient(
            |x| {
                let mut vals = inputs.to_vec();
                vals[k] = Tensor::new(input.shape().to_vec(), x.to_vec()).expect("same shape");
                eval(&vals).expect("forward succeeded once already")
            },
            input.data(),
            h,
            &coords,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Per-parameter relative error between backprop gradients and central
/// differences for a loss built from `store`.
///
/// At most `max_coords` coordinates per parameter are probed (evenly
/// spread); pass `usize::MAX` to probe all of them.
pub fn check_store(
    store: &ParamStore<f64>,
    loss: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
    h: f64,
    max_coords: usize,
) -> Result<Vec<(String, f64)>> {
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    let grads = g.backward(l)?;
    let mut work = store.clone();
    work.zero_grad();
    work.accumulate(&grads)?;

    let mut report = Vec::new();
    let ids: Vec<_> = store.trainable().map(|(id, _)| id).collect();
    for id in ids {
        let p = store.get(id);
        let n = p.value.numel();
        let step = (n / max_coords.max(1)).max(1);
        let coords: Vec<usize> = (0..n).step_by(step).take(max_coords).collect();
        let g_full = work.get(id).grad.as_ref().expect("accumulated").data();
        let analytic: Vec<f64> = coords.iter().map(|&i| g_full[i]).collect();
        let mut probe = store.clone();
        let shape = p.value.shape().to_vec();
        let numeric = numeric_gradient(
            |x| {
                probe
                    .set_value(id, Tensor::new(shape.clone(), x.to_vec()).expect("same shape"))
                    .expect("same shape");
                let mut g = Graph::new();
                let l = loss(&mut g, &probe).expect("forward succeeded once already");
                g.value(l).item().expect("scalar loss")
            },
            p.value.data(),
            h,
            &coords,
        );
        report.push((p.name.clone(), relative_error(&analytic, &numeric)));
    }
    Ok(report)
}
