#![allow(dead_code)]

pub mod map_oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use renet_nn::{ParamId, ParamStore, Real, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-1.0..1.0)))
}

pub fn set<T: Real>(store: &mut ParamStore<T>, id: ParamId, f: impl Fn(usize) -> f64) {
    for (i, v) in store.get_mut(id).value.data_mut().iter_mut().enumerate() {
        *v = T::from_f64(f(i));
    }
}

/// Fills every trainable tensor whose name starts with `prefix` with `v`.
pub fn fill_prefix<T: Real>(store: &mut ParamStore<T>, prefix: &str, v: f64) {
    for p in store.iter_mut() {
        if p.is_trainable() && p.name.starts_with(prefix) {
            p.value.data_mut().iter_mut().for_each(|x| *x = T::from_f64(v));
        }
    }
}

/// Gives every bias and batchnorm affine parameter a random value so composition checks cannot
/// pass by accident of zero initialisation.
pub fn randomize_affine<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        if p.name.ends_with(".bias") || p.name.ends_with(".beta") {
            p.value.data_mut().iter_mut().for_each(|x| *x = T::from_f64(rng.gen_range(-0.5..0.5)));
        } else if p.name.ends_with(".gamma") {
            p.value.data_mut().iter_mut().for_each(|x| *x = T::from_f64(rng.gen_range(0.5..1.5)));
        }
    }
}

/// 1x1 conv weights that copy channel `c` to channel `c`.
pub fn identity_1x1(c: usize) -> impl Fn(usize) -> f64 {
    move |i| if i / c == i % c { 1.0 } else { 0.0 }
}
