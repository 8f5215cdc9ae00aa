use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use renet_events::event_repr::{
    accumulate_mode, build_event_frame, build_multirange, polarity_counts, resize_bilinear, DEFAULT_CLIP,
};
use renet_events::scenegen::{Scene, SceneConfig};
use renet_events::{Event, EventStream, FrameRecord, Polarity};

const W: u16 = 24;
const H: u16 = 20;

fn random_stream(rng: &mut ChaCha8Rng, n: usize, horizon: u64) -> EventStream {
    let mut ts: Vec<u64> = (0..n).map(|_| rng.gen_range(0..horizon)).collect();
    ts.sort_unstable();
    let events = ts
        .into_iter()
        .map(|t| Event {
            t,
            x: rng.gen_range(0..W),
            y: rng.gen_range(0..H),
            polarity: if rng.gen_bool(0.5) { Polarity::Positive } else { Polarity::Negative },
        })
        .collect();
    EventStream::new(W, H, events).unwrap()
}

fn frame_at(end: u64, exposure: u64) -> FrameRecord {
    FrameRecord { frame_id: 1, t_exp_start: end - exposure, t_exp_end: end, image_path: String::new() }
}

#[test]
fn counts_are_conserved_and_windows_nest() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let n = rng.gen_range(0..3000);
        let stream = random_stream(&mut rng, n, 200_000);
        let exposure = rng.gen_range(1_000..20_000);
        let period = rng.gen_range(2 * exposure..60_000);
        let frame = frame_at(rng.gen_range(period..200_000), exposure);
        let stack = build_multirange(&stream, &frame, period).unwrap();
        let mut sums = [[0u64; 2]; 3];
        for (r, f) in stack.frames.iter().enumerate() {
            let (t0, t1) = f.window;
            let inside = stream.slice_window(t0, t1);
            let counts = polarity_counts(inside, H as usize, W as usize);
            for p in 0..2 {
                let want = inside.iter().filter(|e| (e.polarity == Polarity::Positive) == (p == 0)).count() as u64;
                sums[r][p] = counts[p].iter().map(|&c| c as u64).sum();
                assert_eq!(sums[r][p], want);
            }
            // the clipped frame is exactly min(count, C) / C
            for (i, &c) in counts[0].iter().chain(&counts[1]).enumerate() {
                assert_eq!(f.data.data()[i], c.min(DEFAULT_CLIP) as f32 / DEFAULT_CLIP as f32);
            }
        }
        for p in 0..2 {
            assert!(sums[0][p] <= sums[1][p] && sums[1][p] <= sums[2][p]);
        }
        assert!(stack.frames.iter().all(|f| f.data.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
}

#[test]
fn events_after_the_anchor_give_zero_frames() {
    let events = (0..50).map(|i| Event { t: 10_000 + i, x: 1, y: 1, polarity: Polarity::Positive }).collect();
    let stream = EventStream::new(W, H, events).unwrap();
    let stack = build_multirange(&stream, &frame_at(10_000, 1_000), 5_000).unwrap();
    assert!(stack.frames.iter().all(|f| f.data.count_nonzero() == 0));
    assert!(!stack.clamped);
}

#[test]
fn accumulation_is_the_channel_concat_of_the_ranges() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let stream = random_stream(&mut rng, 2000, 100_000);
    let frame = frame_at(80_000, 5_000);
    let acc = accumulate_mode(&stream, &frame, 40_000).unwrap();
    assert_eq!(acc.shape(), &[6, H as usize, W as usize]);
    let stack = build_multirange(&stream, &frame, 40_000).unwrap();
    let plane = 2 * (H as usize) * (W as usize);
    for r in 0..3 {
        assert_eq!(&acc.data()[r * plane..(r + 1) * plane], stack.frames[r].data.data());
    }
    let empty = accumulate_mode(&EventStream::empty(W, H), &frame, 40_000).unwrap();
    assert_eq!(empty.count_nonzero(), 0);
}

#[test]
fn shifting_events_shifts_the_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let stream = random_stream(&mut rng, 400, 1_000);
    let (dx, dy) = (3u16, 2u16);
    let base = build_event_frame(stream.events(), H as usize, W as usize, DEFAULT_CLIP);
    let moved: Vec<Event> = stream
        .events()
        .iter()
        .filter(|e| e.x + dx < W && e.y + dy < H)
        .map(|e| Event { x: e.x + dx, y: e.y + dy, ..*e })
        .collect();
    let shifted = build_event_frame(&moved, H as usize, W as usize, DEFAULT_CLIP);
    for c in 0..2 {
        for y in dy as usize..H as usize {
            for x in dx as usize..W as usize {
                let a = shifted.data.at4_chw(c, y, x);
                let b = base.data.at4_chw(c, y - dy as usize, x - dx as usize);
                assert_eq!(a, b);
            }
        }
    }
}

trait Chw {
    fn at4_chw(&self, c: usize, y: usize, x: usize) -> f32;
}

impl Chw for renet_nn::Tensor {
    fn at4_chw(&self, c: usize, y: usize, x: usize) -> f32 {
        let s = self.shape();
        self.data()[(c * s[1] + y) * s[2] + x]
    }
}

#[test]
fn longer_windows_see_wider_motion_support() {
    for seed in 0..3 {
        let cfg = SceneConfig { seed, n_frames: 10, n_moving: 2, n_static: 1, noise_std: 0.0, ..Default::default() };
        let stream = Scene::from_config(&cfg).unwrap().simulate_events();
        for k in 1..cfg.n_frames {
            let stack = build_multirange(&stream, &cfg.frame_record(k), cfg.frame_period_us).unwrap();
            assert!(stack.frames[2].support() >= stack.frames[0].support());
            assert!(stack.frames[1].support() >= stack.frames[0].support());
        }
    }
}

#[test]
fn bilinear_resize_preserves_linear_ramps() {
    let t = renet_nn::Tensor::from_fn(&[1, 8, 8], |i| (i % 8) as f32);
    let up = resize_bilinear(&t, 8, 16);
    // interior samples of a horizontal ramp stay on the ramp
    for x in 1..15 {
        let want = ((x as f32 + 0.5) * 0.5 - 0.5).clamp(0.0, 7.0);
        assert!((up.data()[x] - want).abs() < 1e-5);
    }
}
