//! Analytic gradients against central differences, in double precision.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqa_core::backbone::{window_attention, AttnParams, Bindings, PositionBiasKind, WindowPlan};
use vqa_core::diffcore::{check_gradients, Graph, Tensor, Var};
use vqa_core::fusion::FusionMode;
use vqa_core::harness::clip_pair;
use vqa_core::losses::combined_loss_node;
use vqa_core::model::{ClipPair, Inference, Model, ModelKind, ModelSpec};
use vqa_core::synthdata::{generate_corpus, CorpusSpec, Split};
use vqa_core::{Result, SamplerConfig};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Reduces any node to a scalar through a fixed random weighting, so no
/// output element's gradient is trivially uniform.
fn project(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = g.constant(rand_tensor(&mut rng, &shape, 1.0));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Named worst-case relative errors.
pub type Report = Vec<(String, f64)>;

fn check(out: &mut Report, name: &str, inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) {
    let r = check_gradients(inputs, STEP, None, 1, |g, v| {
        let y = f(g, v)?;
        project(g, y)
    })
    .unwrap();
    out.push((format!("{name} (input {})", r.worst_input), r.max_rel_error));
}

fn shapes(rng: &mut ChaCha8Rng, s: &[&[usize]]) -> Vec<Tensor<f64>> {
    s.iter().map(|sh| rand_tensor(rng, sh, 1.0)).collect()
}

pub fn elementwise_and_linear_ops(out: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ab = shapes(&mut rng, &[&[3, 4], &[3, 4]]);
    check(out, "add", &ab, |g, v| g.add(v[0], v[1]));
    check(out, "sub", &ab, |g, v| g.sub(v[0], v[1]));
    check(out, "mul", &ab, |g, v| g.mul(v[0], v[1]));
    check(out, "scale", &ab[..1], |g, v| Ok(g.scale(v[0], -1.7)));
    check(out, "add_scalar", &ab[..1], |g, v| Ok(g.add_scalar(v[0], 0.3)));
    check(out, "matmul", &shapes(&mut rng, &[&[3, 5], &[5, 2]]), |g, v| g.matmul(v[0], v[1]));
    check(out, "add_row_bias", &shapes(&mut rng, &[&[4, 3], &[3]]), |g, v| g.add_row_bias(v[0], v[1]));
    check(out, "linear", &shapes(&mut rng, &[&[4, 3], &[3, 2], &[2]]), |g, v| g.linear(v[0], v[1], Some(v[2])));
    let mut wide = shapes(&mut rng, &[&[2, 7]]);
    wide[0] = rand_tensor(&mut rng, &[2, 7], 3.0);
    check(out, "gelu", &wide, |g, v| Ok(g.gelu(v[0])));
}

pub fn batched_products(out: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check(out, "bmm", &shapes(&mut rng, &[&[3, 2, 4], &[3, 4, 5]]), |g, v| g.bmm(v[0], v[1], false));
    check(out, "bmm_t", &shapes(&mut rng, &[&[3, 2, 4], &[3, 5, 4]]), |g, v| g.bmm(v[0], v[1], true));
}

pub fn normalizations_and_reductions(out: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = shapes(&mut rng, &[&[2, 3, 4]]);
    for axis in 0..3 {
        check(out, "softmax", &x, move |g, v| g.softmax(v[0], axis));
        check(out, "mean_axis", &x, move |g, v| g.mean_axis(v[0], axis));
    }
    check(out, "layer_norm", &shapes(&mut rng, &[&[5, 6], &[6], &[6]]), |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
    check(out, "sum", &x, |g, v| Ok(g.sum(v[0])));
    check(out, "mean", &x, |g, v| Ok(g.mean(v[0])));
    check(out, "reshape", &x, |g, v| g.reshape(v[0], &[6, 4]));
}

pub fn structural_ops(out: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pair = shapes(&mut rng, &[&[2, 3], &[2, 5]]);
    check(out, "concat_axis1", &pair, |g, v| g.concat(&[v[0], v[1]], 1));
    let rows = shapes(&mut rng, &[&[2, 3], &[4, 3]]);
    check(out, "concat_axis0", &rows, |g, v| g.concat(&[v[0], v[1]], 0));
    let idx: Arc<[u32]> = vec![5, 0, 0, 3, 2, 5, 1, 4].into();
    check(out, "gather_repeats", &shapes(&mut rng, &[&[2, 3]]), move |g, v| g.gather(v[0], idx.clone(), &[2, 4]));
    let rows_idx: Arc<[u32]> = vec![2, 0, 2, 1].into();
    check(out, "embedding", &shapes(&mut rng, &[&[3, 4]]), move |g, v| g.embedding(v[0], rows_idx.clone()));
}

pub fn loss_node(out: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = shapes(&mut rng, &[&[6]]);
    let gt = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6];
    let r = check_gradients(&x, STEP, None, 1, |g, v| Ok(combined_loss_node(g, v[0], &gt, 0.3)?.0)).unwrap();
    out.push(("combined_loss".into(), r.max_rel_error));
}

pub fn attention_case(out: &mut Report, kind: PositionBiasKind) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (grid, window, c, heads) = ([2, 4, 4], [2, 2, 2], 8, 2);
    let ids: Vec<u32> = (0..32).map(|i| ((i / 16) * 4 + ((i % 16) / 8) * 2 + (i % 4) / 2) as u32).collect();
    let plan = WindowPlan::new(grid, window, c, heads, Some(&ids)).unwrap();
    let rows = kind.table_rows(plan.num_rel);
    let inputs = vec![
        rand_tensor(&mut rng, &[32, c], 1.0),
        rand_tensor(&mut rng, &[c, 3 * c], 0.5),
        rand_tensor(&mut rng, &[3 * c], 0.5),
        rand_tensor(&mut rng, &[c, c], 0.5),
        rand_tensor(&mut rng, &[c], 0.5),
        rand_tensor(&mut rng, &[rows, heads], 1.0),
    ];
    check(out, &format!("window_attention {kind:?}"), &inputs, |g, v| {
        let p = AttnParams {
            qkv_weight: v[1],
            qkv_bias: v[2],
            proj_weight: v[3],
            proj_bias: v[4],
            table: v[5],
        };
        window_attention(g, v[0], &p, &plan, kind)
    });
}

/// End-to-end check of a whole model: the combined loss (plus a small
/// linear term) over a batch of three videos against every parameter tensor (a seeded subset of entries
/// per tensor). Parameters are jittered away from their initialization so
/// zero-initialized tables and biases are exercised too.
fn model_case(out: &mut Report, spec: &ModelSpec, inference: Inference, per_tensor: usize, skip_repeats: bool) {
    let model = Model::new(spec).unwrap();
    let mut store = model.init_params::<f64>(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let corpus = generate_corpus(&CorpusSpec::toy(3, Split::Train, 2)).unwrap();
    let sampler = SamplerConfig::toy();
    let clips: Vec<ClipPair<f64>> = corpus.iter().map(|v| clip_pair(&v.video, &sampler).unwrap().cast()).collect();
    let gt: Vec<f64> = corpus.iter().map(|v| v.label).collect();

    let loss = |store: &vqa_core::ParamStore<f64>, bind: &mut Bindings, g: &mut Graph<f64>| -> Var {
        let scores: Vec<Var> = clips.iter().map(|c| model.forward(g, store, bind, c, inference).unwrap().score).collect();
        let s = g.concat(&scores, 0).unwrap();
        // the rank and correlation terms are shift-invariant; the linear
        // term gives the output bias a nonzero gradient to check
        let rank = combined_loss_node(g, s, &gt, 0.3).unwrap().0;
        let lin = project(g, s).unwrap();
        let lin = g.scale(lin, 0.1);
        g.add(rank, lin).unwrap()
    };
    let mut g = Graph::new();
    let mut bind = Bindings::new();
    let l = loss(&store, &mut bind, &mut g);
    let grads = g.backward(l).unwrap();
    bind.accumulate(&grads, &mut store);

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let (mut worst, mut worst_name) = (0.0f64, String::new());
    for id in ids {
        if skip_repeats && store.get(id).name.contains(".block1.") {
            continue;
        }
        let Some(analytic) = store.get(id).tensor.grad.clone() else { continue };
        let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let n = analytic.len();
        let picks = rand::seq::index::sample(&mut rng, n, per_tensor.min(n)).into_vec();
        let mut max_abs = 0.0f64;
        let mut scale = scale;
        for j in picks {
            let orig = store.get(id).tensor.data()[j];
            let eval = |x: f64, store: &mut vqa_core::ParamStore<f64>| {
                store.get_mut(id).tensor.data_mut()[j] = x;
                let mut g = Graph::new();
                let l = loss(store, &mut Bindings::frozen(), &mut g);
                g.scalar(l)
            };
            let plus = eval(orig + STEP, &mut store);
            let minus = eval(orig - STEP, &mut store);
            store.get_mut(id).tensor.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            scale = scale.max(numeric.abs());
            max_abs = max_abs.max((numeric - analytic[j]).abs());
        }
        let rel = max_abs / scale.max(1e-8);
        if rel > worst {
            worst = rel;
            worst_name = store.get(id).name.clone();
        }
    }
    let layout = if spec.shared { "shared" } else { "unshared" };
    out.push((format!("{:?}/{layout}/{}/{:?}: {worst_name}", spec.kind, spec.fusion.as_str(), inference), worst));
}

/// Every differentiable model variant: the toy shared cross-attention
/// model on one entry of every tensor, then the other fusion modes, the
/// unshared layout, branch-only inference and a single-branch model with
/// the repeated second blocks skipped.
pub fn model_checks(out: &mut Report) {
    let mut spec = ModelSpec::toy();
    model_case(out, &spec, Inference::Full, 1, false);
    for fusion in [FusionMode::Score, FusionMode::Concat, FusionMode::SelfAttention] {
        spec.fusion = fusion;
        model_case(out, &spec, Inference::Full, 1, true);
    }
    spec.fusion = FusionMode::CrossAttention;
    spec.shared = false;
    model_case(out, &spec, Inference::Full, 1, true);
    spec.shared = true;
    model_case(out, &spec, Inference::TechnicalOnly, 1, true);
    spec.kind = ModelKind::SingleAesthetic;
    model_case(out, &spec, Inference::Full, 1, true);
}

pub fn op_checks(out: &mut Report) {
    elementwise_and_linear_ops(out);
    batched_products(out);
    normalizations_and_reductions(out);
    structural_ops(out);
    loss_node(out);
    attention_case(out, PositionBiasKind::Rpb);
    attention_case(out, PositionBiasKind::Grpb);
}
