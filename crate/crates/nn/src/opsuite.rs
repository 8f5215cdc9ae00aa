//! Randomised gradient-check cases, one per differentiable operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::graph::{Graph, Mode, Var};
use crate::layers::{BatchNorm2d, Conv2d, Linear};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub type CaseFn = fn(u64, f64) -> Result<GradCheckReport>;

#[derive(Clone, Copy)]
pub struct GradCase {
    pub name: &'static str,
    pub run: CaseFn,
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// `sum(y * r)` for a fixed random `r`, so every output element gets a generic upstream
/// gradient of order one.
pub fn projected_loss(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let r = random_tensor(&mut rng, g.shape(y));
    let rv = g.input(r);
    let p = g.mul(y, rv)?;
    Ok(g.sum(p))
}

fn check_unary<F>(seed: u64, tol: f64, shapes: &[&[usize]], mode: Mode, setup: impl FnOnce(&mut ParamStore<f64>, &mut ChaCha8Rng) -> F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let f = setup(&mut store, &mut rng);
    let inputs: Vec<_> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
    grad_check(&mut store, &inputs, mode, tol, |g, xs| {
        let y = f(g, xs)?;
        projected_loss(g, y, seed)
    })
}

const X: &[usize] = &[2, 3, 6, 6];

pub fn operator_cases() -> Vec<GradCase> {
    vec![
        GradCase {
            name: "conv2d_3x3_s1_p1",
            run: |seed, tol| {
                check_unary(seed, tol, &[X], Mode::Train, |s, rng| {
                    let c = Conv2d::same(s, "conv", 3, 4, 3, true, rng);
                    move |g: &mut Graph<'_, f64>, xs: &[Var]| c.forward(g, xs[0])
                })
            },
        },
        GradCase {
            name: "conv2d_3x3_s2_p1",
            run: |seed, tol| {
                check_unary(seed, tol, &[X], Mode::Train, |s, rng| {
                    let c = Conv2d::new(s, "conv", 3, 2, 3, 2, 1, true, rng);
                    move |g: &mut Graph<'_, f64>, xs: &[Var]| c.forward(g, xs[0])
                })
            },
        },
        GradCase {
            name: "conv2d_1x1",
            run: |seed, tol| {
                check_unary(seed, tol, &[X], Mode::Train, |s, rng| {
                    let c = Conv2d::new(s, "conv", 3, 5, 1, 1, 0, true, rng);
                    move |g: &mut Graph<'_, f64>, xs: &[Var]| c.forward(g, xs[0])
                })
            },
        },
        GradCase {
            name: "batchnorm2d_train",
            run: |seed, tol| {
                check_unary(seed, tol, &[X], Mode::Train, |s, rng| {
                    let bn = BatchNorm2d::new(s, "bn", 3);
                    randomise_affine(s, bn, rng);
                    move |g: &mut Graph<'_, f64>, xs: &[Var]| bn.forward(g, xs[0])
                })
            },
        },
        GradCase {
            name: "batchnorm2d_eval",
            run: |seed, tol| {
                check_unary(seed, tol, &[X], Mode::Eval, |s, rng| {
                    let bn = BatchNorm2d::new(s, "bn", 3);
                    randomise_affine(s, bn, rng);
                    s.get_mut(bn.params.running_mean).value = random_tensor(rng, &[3]);
                    s.get_mut(bn.params.running_var).value = Tensor::from_fn(&[3], |_| rng.gen_range(0.5..2.0));
                    move |g: &mut Graph<'_, f64>, xs: &[Var]| bn.forward(g, xs[0])
                })
            },
        },
        GradCase {
            name: "relu",
            run: |seed, tol| check_unary(seed, tol, &[X], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| Ok(g.relu(xs[0]))),
        },
        GradCase {
            name: "sigmoid",
            run: |seed, tol| check_unary(seed, tol, &[X], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| Ok(g.sigmoid(xs[0]))),
        },
        GradCase {
            name: "maxpool2d",
            run: |seed, tol| check_unary(seed, tol, &[X], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| g.max_pool(xs[0], 2)),
        },
        GradCase {
            name: "upsample_nearest",
            run: |seed, tol| {
                check_unary(seed, tol, &[&[2, 3, 3, 3]], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| g.upsample_nearest(xs[0], 2))
            },
        },
        GradCase {
            name: "concat",
            run: |seed, tol| {
                check_unary(seed, tol, &[X, &[2, 2, 6, 6]], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| g.concat(xs))
            },
        },
        GradCase {
            name: "eltwise_add",
            run: |seed, tol| {
                check_unary(seed, tol, &[X, X], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| g.add(xs[0], xs[1]))
            },
        },
        GradCase {
            name: "eltwise_mul",
            run: |seed, tol| {
                check_unary(seed, tol, &[X, X], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| g.mul(xs[0], xs[1]))
            },
        },
        GradCase {
            name: "broadcast_mul_channel",
            run: |seed, tol| {
                check_unary(seed, tol, &[X, &[2, 3, 1, 1]], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| g.mul(xs[0], xs[1]))
            },
        },
        GradCase {
            name: "broadcast_mul_spatial",
            run: |seed, tol| {
                check_unary(seed, tol, &[X, &[2, 1, 6, 6]], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| g.mul(xs[0], xs[1]))
            },
        },
        GradCase {
            name: "eltwise_max",
            run: |seed, tol| {
                check_unary(seed, tol, &[X, X], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| g.maximum(xs[0], xs[1]))
            },
        },
        GradCase {
            name: "global_avg_pool",
            run: |seed, tol| check_unary(seed, tol, &[X], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| g.global_avg_pool(xs[0])),
        },
        GradCase {
            name: "global_max_pool",
            run: |seed, tol| check_unary(seed, tol, &[X], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| g.global_max_pool(xs[0])),
        },
        GradCase {
            name: "channelwise_mean_map",
            run: |seed, tol| check_unary(seed, tol, &[X], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| g.channel_mean_map(xs[0])),
        },
        GradCase {
            name: "channelwise_max_map",
            run: |seed, tol| check_unary(seed, tol, &[X], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| g.channel_max_map(xs[0])),
        },
        GradCase {
            name: "linear",
            run: |seed, tol| {
                check_unary(seed, tol, &[&[3, 4, 1, 1]], Mode::Train, |s, rng| {
                    let l = Linear::new(s, "fc", 4, 3, true, rng);
                    move |g: &mut Graph<'_, f64>, xs: &[Var]| l.forward(g, xs[0])
                })
            },
        },
        GradCase {
            name: "reshape_scale",
            run: |seed, tol| {
                check_unary(seed, tol, &[X], Mode::Train, |_, _| |g: &mut Graph<'_, f64>, xs: &[Var]| {
                    let r = g.reshape(xs[0], &[2, 108])?;
                    Ok(g.scale(r, -0.7))
                })
            },
        },
        GradCase { name: "focal_loss", run: focal_case },
        GradCase { name: "masked_l1", run: masked_l1_case },
    ]
}

fn randomise_affine(s: &mut ParamStore<f64>, bn: BatchNorm2d, rng: &mut ChaCha8Rng) {
    let c = s.value(bn.params.gamma).len();
    s.get_mut(bn.params.gamma).value = Tensor::from_fn(&[c], |_| rng.gen_range(0.5..1.5));
    s.get_mut(bn.params.beta).value = random_tensor(rng, &[c]);
}

fn focal_case(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 2, 5, 5];
    // Keeps (1 - y)^4 and the sigmoid slope away from zero so no gradient element is so small
    // that finite-difference round-off dominates it.
    let target = Tensor::from_fn(&shape, |i| if i % 11 == 3 { 1.0 } else { rng.gen_range(0.0..0.8) });
    let logits = Tensor::from_fn(&shape, |_| rng.gen_range(-2.0..2.0));
    let mut store = ParamStore::new();
    grad_check(&mut store, &[logits], Mode::Train, tol, |g, xs| {
        let p = g.sigmoid(xs[0]);
        g.focal_loss(p, &target)
    })
}

fn masked_l1_case(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 2, 5, 5];
    let target = random_tensor(&mut rng, &shape);
    let mask = Tensor::from_fn(&[2, 1, 5, 5], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
    let pred = random_tensor(&mut rng, &shape);
    let mut store = ParamStore::new();
    grad_check(&mut store, &[pred], Mode::Train, tol, |g, xs| g.masked_l1(xs[0], &target, &mask, 3.0))
}
