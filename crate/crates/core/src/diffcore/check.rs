use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// Largest `|analytic - numeric|` over checked entries of an input,
    /// divided by the largest gradient magnitude of that input (clamped
    /// below at 1e-8); maximized over inputs.
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub checked: usize,
}

/// Checks gradients of the scalar built by `f` with respect to every input.
///
/// `per_input` limits how many entries of each input are perturbed (chosen
/// with a seeded sampler); `None` checks every entry.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    step: f64,
    per_input: Option<usize>,
    seed: u64,
    f: F,
) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get(v)).collect();

    let eval = |pert: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = pert.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst_input: 0,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let picks: Vec<usize> = match per_input {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut max_abs = 0.0f64;
        let mut scale = analytic[i].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for &j in &picks {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            scale = scale.max(numeric.abs());
            max_abs = max_abs.max((numeric - analytic[i][j]).abs());
            report.checked += 1;
        }
        let rel = max_abs / scale.max(1e-8);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_input = i;
        }
    }
    Ok(report)
}
