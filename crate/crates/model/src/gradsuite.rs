//! Randomised gradient checks of the composite modules, in the same form as the operator suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use renet_events::BBox;
use renet_nn::gradcheck::{grad_check, GradCheckReport};
use renet_nn::layers::Conv2d;
use renet_nn::opsuite::{projected_loss, random_tensor, GradCase};
use renet_nn::{Graph, Mode, ParamStore, Result, Var};

use crate::bdc::{BdcStage, ConcatConvStage};
use crate::blocks::ResidualStage;
use crate::detector::{compute_loss, encode_targets, Head};
use crate::etma::{Etma, EtmaConfig};

fn check<F>(
    seed: u64,
    tol: f64,
    shapes: &[&[usize]],
    setup: impl FnOnce(&mut ParamStore<f64>, &mut ChaCha8Rng) -> Result<F>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let f = setup(&mut store, &mut rng)?;
    let inputs: Vec<_> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
    grad_check(&mut store, &inputs, Mode::Train, tol, |g, xs| {
        let y = f(g, xs)?;
        projected_loss(g, y, seed)
    })
}

const F: &[usize] = &[1, 4, 6, 6];
const PREV: &[usize] = &[1, 3, 12, 12];
const RANGE: &[usize] = &[1, 2, 16, 16];

fn bdc_case(seed: u64, tol: f64, with_prev: bool, ca: bool, sa: bool) -> Result<GradCheckReport> {
    let shapes: &[&[usize]] = if with_prev { &[F, F, PREV] } else { &[F, F] };
    check(seed, tol, shapes, |s, rng| {
        let stage = BdcStage::new(s, "bdc", 4, with_prev.then_some(3), ca, sa, rng);
        Ok(move |g: &mut Graph<'_, f64>, xs: &[Var]| stage.forward(g, xs[0], xs[1], xs.get(2).copied()))
    })
}

pub fn composite_cases() -> Vec<GradCase> {
    vec![
        GradCase {
            name: "etma",
            run: |seed, tol| {
                check(seed, tol, &[RANGE, RANGE, RANGE], |s, rng| {
                    let cfg = EtmaConfig { in_channels: 2, stem_channels: 3, kernels: [2, 4, 8] };
                    let etma = Etma::new(s, "etma", cfg, rng)?;
                    Ok(move |g: &mut Graph<'_, f64>, xs: &[Var]| etma.forward(g, [xs[0], xs[1], xs[2]]))
                })
            },
        },
        GradCase { name: "bdc_stage_first", run: |seed, tol| bdc_case(seed, tol, false, true, true) },
        GradCase { name: "bdc_stage_hierarchical", run: |seed, tol| bdc_case(seed, tol, true, true, true) },
        GradCase { name: "bdc_stage_channel_only", run: |seed, tol| bdc_case(seed, tol, true, true, false) },
        GradCase { name: "bdc_stage_spatial_only", run: |seed, tol| bdc_case(seed, tol, false, false, true) },
        GradCase { name: "bdc_stage_no_attention", run: |seed, tol| bdc_case(seed, tol, true, false, false) },
        GradCase {
            name: "concat_conv_stage",
            run: |seed, tol| {
                check(seed, tol, &[F, F, PREV], |s, rng| {
                    let stage = ConcatConvStage::new(s, "cc", 4, Some(3), rng);
                    Ok(move |g: &mut Graph<'_, f64>, xs: &[Var]| stage.forward(g, xs[0], xs[1], Some(xs[2])))
                })
            },
        },
        GradCase {
            name: "residual_stage_strided",
            run: |seed, tol| {
                check(seed, tol, &[&[2, 3, 8, 8]], |s, rng| {
                    let stage = ResidualStage::new(s, "res", 3, 4, 2, 2, rng);
                    Ok(move |g: &mut Graph<'_, f64>, xs: &[Var]| stage.forward(g, xs[0]))
                })
            },
        },
        GradCase {
            name: "event_projection",
            run: |seed, tol| {
                check(seed, tol, &[&[2, 3, 4, 4]], |s, rng| {
                    let conv = Conv2d::same(s, "proj", 3, 5, 1, true, rng);
                    Ok(move |g: &mut Graph<'_, f64>, xs: &[Var]| conv.forward(g, xs[0]))
                })
            },
        },
        GradCase {
            name: "head_and_loss",
            run: |seed, tol| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut store = ParamStore::new();
                let head = Head::new(&mut store, "head", [3, 4, 5], 4, 2, &mut rng);
                let shapes: [&[usize]; 3] = [&[1, 3, 8, 8], &[1, 4, 4, 4], &[1, 5, 2, 2]];
                let inputs: Vec<_> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
                let boxes = [(0u8, BBox::new(2.0, 3.0, 14.0, 13.0)), (1u8, BBox::new(17.0, 16.0, 29.0, 31.0))];
                let targets = encode_targets::<f64>(&boxes, 8, 8, 2);
                grad_check(&mut store, &inputs, Mode::Train, tol, |g, xs| {
                    let out = head.forward(g, xs)?;
                    Ok(compute_loss(g, &out, &targets)?.total)
                })
            },
        },
    ]
}
