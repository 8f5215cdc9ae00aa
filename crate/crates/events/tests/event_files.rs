use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use renet_events::event_io::{self, decode_events, encode_events};
use renet_events::{Event, EventStream, Polarity};

fn random_stream(seed: u64, n: usize, width: u16, height: u16) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0u64;
    let events = (0..n)
        .map(|_| {
            t += rng.gen_range(0..5);
            Event {
                t,
                x: rng.gen_range(0..width),
                y: rng.gen_range(0..height),
                polarity: if rng.gen_bool(0.5) { Polarity::Positive } else { Polarity::Negative },
            }
        })
        .collect();
    EventStream::new(width, height, events).unwrap()
}

#[test]
fn file_round_trip_of_ten_thousand_events() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.evt");
    let stream = random_stream(3, 10_000, 640, 480);
    event_io::write_events(&stream, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 16 * 10_000);
    let back = event_io::read_events(&path).unwrap();
    assert_eq!(back, stream);
    assert_eq!(encode_events(&back), std::fs::read(&path).unwrap());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = event_io::read_events(std::path::Path::new("/nonexistent/x.evt")).unwrap_err();
    assert!(matches!(err, event_io::EventIoError::Io { .. }));
}

#[test]
fn trailing_bytes_are_rejected() {
    let mut bytes = encode_events(&random_stream(1, 3, 8, 8));
    bytes.push(0);
    assert!(decode_events(&bytes).is_err());
}

#[test]
fn slicing_matches_a_linear_scan() {
    let s = random_stream(9, 500, 16, 16);
    let last = s.events().last().unwrap().t;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let a = rng.gen_range(0..=last + 2);
        let b = rng.gen_range(a..=last + 3);
        let scan: Vec<Event> = s.events().iter().copied().filter(|e| a <= e.t && e.t < b).collect();
        assert_eq!(s.slice_window(a, b), scan.as_slice());
    }
}

proptest! {
    #[test]
    fn round_trip_is_bitwise(seed in any::<u64>(), n in 0usize..300, w in 1u16..100, h in 1u16..100) {
        let s = random_stream(seed, n, w, h);
        let bytes = encode_events(&s);
        prop_assert_eq!(bytes.len(), 16 + 16 * n);
        let back = decode_events(&bytes).unwrap();
        prop_assert_eq!(encode_events(&back), bytes);
        prop_assert_eq!(back, s);
    }

    #[test]
    fn adjacent_windows_partition(seed in any::<u64>(), a in 0u64..400, d1 in 0u64..400, d2 in 0u64..400) {
        let s = random_stream(seed, 200, 8, 8);
        let (b, c) = (a + d1, a + d1 + d2);
        let mut joined = s.slice_window(a, b).to_vec();
        joined.extend_from_slice(s.slice_window(b, c));
        prop_assert_eq!(joined.as_slice(), s.slice_window(a, c));
    }

    #[test]
    fn decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..96)) {
        let _ = decode_events(&bytes);
    }

    #[test]
    fn a_timestamp_decrease_is_always_rejected(seed in any::<u64>(), n in 2usize..50) {
        let s = random_stream(seed, n, 8, 8);
        let mut bytes = encode_events(&s);
        let i = n - 1;
        let prev = s.events()[i - 1].t;
        if prev > 0 {
            let off = 16 + 16 * i;
            bytes[off..off + 8].copy_from_slice(&(prev - 1).to_le_bytes());
            prop_assert!(
                matches!(decode_events(&bytes), Err(event_io::EventIoError::NonMonotonicTimestamp(r)) if r == i as u64)
            );
        }
    }
}
