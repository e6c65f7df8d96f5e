mod common;

use bsa_distill::nnet::{
    loss_and_gradients, Denoiser, DenoiserModel, Graph, ModelConfig, Parameterization, Tensor,
};
use common::{close, finite_difference, random_matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        latent_dim: 2,
        num_classes: 3,
        embed_dim: 2,
        num_frequencies: 1,
        hidden: vec![5, 5],
        parameterization: Parameterization::X,
    }
}

fn loss_value(model: &DenoiserModel, z: &Tensor, y: &Tensor, ts: &[f64], conds: &[usize], w: &[f64]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<_> = model.params().iter().map(|p| g.leaf(p.clone())).collect();
    let zv = g.leaf(z.clone());
    let yv = g.leaf(y.clone());
    let out = model.forward_graph(&mut g, &vars, zv, ts, conds).unwrap();
    let l = g.weighted_sq_err(out, yv, w).unwrap();
    g.value(l).data()[0]
}

#[test]
fn mlp_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..5 {
        let model = DenoiserModel::new(small_config(), &mut rng).unwrap();
        assert!(model.num_params() <= 200, "{}", model.num_params());
        let rows = 6;
        let z = random_matrix(rows, 2, 1.0, &mut rng);
        let y = random_matrix(rows, 2, 1.0, &mut rng);
        let ts: Vec<f64> = (0..rows).map(|_| rng.random::<f64>()).collect();
        let conds: Vec<usize> = (0..rows).map(|r| (r + trial) % 3).collect();
        let w: Vec<f64> = (0..rows).map(|_| 0.5 + rng.random::<f64>()).collect();

        let (_, grads) = loss_and_gradients(&model, |g, params| {
            let zv = g.leaf(z.clone());
            let yv = g.leaf(y.clone());
            let out = model.forward_graph(g, params, zv, &ts, &conds)?;
            g.weighted_sq_err(out, yv, &w)
        })
        .unwrap();
        let fd = finite_difference(&model, 1e-5, |m| loss_value(m, &z, &y, &ts, &conds, &w));
        for (p, (analytic, numeric)) in grads.iter().zip(&fd).enumerate() {
            for (i, (a, n)) in analytic.data().iter().zip(numeric).enumerate() {
                assert!(
                    close(*a, *n, 1e-4, 1e-7),
                    "trial {trial} param {p}[{i}]: analytic {a}, numeric {n}"
                );
            }
        }
    }
}

#[test]
fn constant_loss_has_zero_gradients() {
    let model = DenoiserModel::new(small_config(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (loss, grads) = loss_and_gradients(&model, |g, _| {
        let c = g.leaf(Tensor::scalar(3.5));
        Ok(c)
    })
    .unwrap();
    assert_eq!(loss, 3.5);
    assert!(grads.iter().all(|g| g.data().iter().all(|v| *v == 0.0)));
}

#[test]
fn exact_prediction_has_zero_loss_and_gradient() {
    let model = DenoiserModel::new(small_config(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let z = random_matrix(4, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
    let ts = [0.1, 0.4, 0.7, 1.0];
    let conds = [0, 1, 2, 0];
    let target = model.forward_batch(&z, &ts, &conds).unwrap();
    let (loss, grads) = loss_and_gradients(&model, |g, params| {
        let zv = g.leaf(z.clone());
        let yv = g.leaf(target.clone());
        let out = model.forward_graph(g, params, zv, &ts, &conds)?;
        g.weighted_sq_err(out, yv, &[2.0; 4])
    })
    .unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.iter().all(|g| g.data().iter().all(|v| *v == 0.0)));
}

#[test]
fn large_inputs_stay_finite() {
    let model = DenoiserModel::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let z = Tensor::matrix(3, 2, vec![1e3, -1e3, 1e3, 1e3, -1e3, 0.0]).unwrap();
    let ts = [0.0, 0.5, 1.0];
    let conds = [0, 4, 7];
    let y = Tensor::matrix(3, 2, vec![-1e3; 6]).unwrap();
    let (loss, grads) = loss_and_gradients(&model, |g, params| {
        let zv = g.leaf(z.clone());
        let yv = g.leaf(y.clone());
        let out = model.forward_graph(g, params, zv, &ts, &conds)?;
        g.weighted_sq_err(out, yv, &[1.0; 3])
    })
    .unwrap();
    assert!(loss.is_finite());
    assert!(grads.iter().all(Tensor::all_finite));
}

#[test]
fn non_scalar_loss_is_rejected() {
    let model = DenoiserModel::new(small_config(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let res = loss_and_gradients(&model, |_g, params| Ok(params[0]));
    assert!(matches!(res, Err(bsa_distill::Error::NonScalarLoss(_))));
}
