#![no_main]

use libfuzzer_sys::fuzz_target;
use renet_events::event_io::{decode_events, encode_events};

fuzz_target!(|data: &[u8]| {
    // Every accepted file has exactly one encoding.
    if let Ok(stream) = decode_events(data) {
        assert_eq!(encode_events(&stream), data);
    }
});
